//! Discrete cell fields, wall-shear fields and their volume-weighted norms.

use crate::error::{Error, Result};
use crate::mesh::{norm, StructuredMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Vector2,
}

impl FieldKind {
    pub fn components(self) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector2 => 2,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            FieldKind::Scalar => 0,
            FieldKind::Vector2 => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(FieldKind::Scalar),
            1 => Some(FieldKind::Vector2),
            _ => None,
        }
    }
}

/// Per-cell field. Vector fields are stored component-interleaved
/// (`[ux0, uy0, ux1, uy1, ...]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    kind: FieldKind,
    values: Vec<f64>,
    mesh_id: u64,
    time: f64,
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

impl Field {
    pub fn new(mesh: &StructuredMesh, kind: FieldKind, values: Vec<f64>, time: f64) -> Result<Self> {
        let expected = mesh.n_cells() * kind.components();
        Self::from_parts(kind, values, mesh.checksum(), time, expected)
    }

    pub(crate) fn from_parts(
        kind: FieldKind,
        values: Vec<f64>,
        mesh_id: u64,
        time: f64,
        expected: usize,
    ) -> Result<Self> {
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self {
            kind,
            values,
            mesh_id,
            time,
        })
    }

    pub fn scalar(mesh: &StructuredMesh, values: Vec<f64>, time: f64) -> Result<Self> {
        Self::new(mesh, FieldKind::Scalar, values, time)
    }

    pub fn vector(mesh: &StructuredMesh, values: Vec<f64>, time: f64) -> Result<Self> {
        Self::new(mesh, FieldKind::Vector2, values, time)
    }

    pub fn zeros(mesh: &StructuredMesh, kind: FieldKind, time: f64) -> Self {
        Self {
            kind,
            values: vec![0.0; mesh.n_cells() * kind.components()],
            mesh_id: mesh.checksum(),
            time,
        }
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.kind.components()
    }
}

/// Wall traction `nu (grad u + grad u^T) . n` on every wall face, in
/// kinematic units (m²/s²). Stored interleaved like vector fields.
#[derive(Debug, Clone, PartialEq)]
pub struct WssField {
    pub face_ids: Vec<usize>,
    pub values: Vec<f64>,
    pub mesh_id: u64,
    pub time: f64,
}

impl WssField {
    pub fn traction(&self, k: usize) -> [f64; 2] {
        [self.values[2 * k], self.values[2 * k + 1]]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.chunks_exact(2).map(|t| t[0].hypot(t[1])).collect()
    }

    /// Face lengths used as quadrature weights along the wall.
    pub fn face_weights(&self, mesh: &StructuredMesh) -> Vec<f64> {
        self.face_ids.iter().map(|&f| norm(mesh.face(f).area)).collect()
    }
}

/// `sqrt(sum_k w_k |a_k|^2)` where each entity has `comps` components.
pub fn weighted_l2_norm(values: &[f64], weights: &[f64], comps: usize) -> f64 {
    debug_assert_eq!(values.len(), weights.len() * comps);
    values
        .chunks_exact(comps)
        .zip(weights)
        .map(|(v, w)| w * v.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// `||a - b|| / ||b||` in the weighted discrete L² norm.
pub fn weighted_relative_error(a: &[f64], b: &[f64], weights: &[f64], comps: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: b.len(),
            found: a.len(),
        });
    }
    if b.len() != weights.len() * comps {
        return Err(Error::DimensionMismatch {
            expected: weights.len() * comps,
            found: b.len(),
        });
    }
    let reference = weighted_l2_norm(b, weights, comps);
    if reference == 0.0 || !reference.is_finite() {
        return Err(Error::DegenerateReference);
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(weighted_l2_norm(&diff, weights, comps) / reference)
}

/// Volume-weighted L² norm of a cell field.
pub fn l2_norm(mesh: &StructuredMesh, a: &Field) -> f64 {
    weighted_l2_norm(&a.values, mesh.cell_volumes(), a.kind.components())
}

/// Volume-weighted relative error `||a - b||_L2 / ||b||_L2`.
pub fn l2_relative_error(mesh: &StructuredMesh, a: &Field, b: &Field) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::MeshMismatch("fields differ in kind".into()));
    }
    if a.mesh_id != b.mesh_id || b.mesh_id != mesh.checksum() {
        return Err(Error::MeshMismatch("fields live on different meshes".into()));
    }
    weighted_relative_error(&a.values, &b.values, mesh.cell_volumes(), a.kind.components())
}

/// Face-length weighted relative error of two wall-shear fields.
pub fn wss_relative_error(mesh: &StructuredMesh, a: &WssField, b: &WssField) -> Result<f64> {
    if a.face_ids != b.face_ids {
        return Err(Error::MeshMismatch("wall-shear fields on different faces".into()));
    }
    weighted_relative_error(&a.values, &b.values, &b.face_weights(mesh), 2)
}
