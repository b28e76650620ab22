//! Structured two-dimensional finite-volume mesh.
//!
//! Cells are quadrilaterals indexed `c = j * nx + i`. Vertices are indexed
//! `v = j * (nx + 1) + i`. Depth is one metre, so cell "volumes" carry m²
//! and face "area" vectors carry m.
//!
//! Faces are stored interior-first. Boundary faces follow in patch order
//! inlet (x = x_min), outlet (x = x_max), lower wall, upper wall. Each face
//! stores its area vector pointing out of its owner cell; for boundary
//! faces that is the outward normal of the domain.

use std::ops::Range;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

#[inline]
pub(crate) fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Patch {
    Inlet,
    Outlet,
    WallLower,
    WallUpper,
}

impl Patch {
    pub const ALL: [Patch; 4] = [
        Patch::Inlet,
        Patch::Outlet,
        Patch::WallLower,
        Patch::WallUpper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Patch::Inlet => "inlet",
            Patch::Outlet => "outlet",
            Patch::WallLower => "wall_lower",
            Patch::WallUpper => "wall_upper",
        }
    }

    pub fn is_wall(self) -> bool {
        matches!(self, Patch::WallLower | Patch::WallUpper)
    }

    fn slot(self) -> usize {
        match self {
            Patch::Inlet => 0,
            Patch::Outlet => 1,
            Patch::WallLower => 2,
            Patch::WallUpper => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub owner: usize,
    pub neighbour: Option<usize>,
    pub center: Vec2,
    /// Outward (from owner) normal scaled by face length.
    pub area: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    nx: usize,
    ny: usize,
    vertices: Vec<Vec2>,
    cell_centers: Vec<Vec2>,
    cell_volumes: Vec<f64>,
    faces: Vec<Face>,
    n_interior: usize,
    patches: [Range<usize>; 4],
    /// West, east, south, north face of every cell.
    cell_faces: Vec<[usize; 4]>,
    checksum: u64,
}

/// Builds an orthogonal, uniformly spaced channel mesh on `[0, length] x [0, height]`.
pub fn build_channel_mesh(length: f64, height: f64, nx: usize, ny: usize) -> Result<StructuredMesh> {
    if !(length > 0.0 && length.is_finite()) || !(height > 0.0 && height.is_finite()) {
        return Err(Error::invalid(format!(
            "channel dimensions must be positive, got {length} x {height}"
        )));
    }
    if nx < 4 || ny < 4 {
        return Err(Error::invalid(format!(
            "need at least 4 cells per direction, got {nx} x {ny}"
        )));
    }
    let dx = length / nx as f64;
    let dy = height / ny as f64;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([i as f64 * dx, j as f64 * dy]);
        }
    }
    StructuredMesh::from_vertices(nx, ny, vertices)
}

fn polygon_area_centroid(poly: &[Vec2; 4]) -> (f64, Vec2) {
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for k in 0..4 {
        let p = poly[k];
        let q = poly[(k + 1) % 4];
        let cross = p[0] * q[1] - q[0] * p[1];
        a += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    let a = 0.5 * a;
    if a.abs() < f64::MIN_POSITIVE {
        return (a, [0.25 * poly.iter().map(|p| p[0]).sum::<f64>(), 0.25 * poly.iter().map(|p| p[1]).sum::<f64>()]);
    }
    (a, [cx / (6.0 * a), cy / (6.0 * a)])
}

impl StructuredMesh {
    /// Recomputes all geometry from a vertex array laid out `j * (nx + 1) + i`.
    ///
    /// Fails with [`Error::InvalidDeformation`] when any cell has a
    /// non-positive signed area, which is how tangled warps show up.
    pub fn from_vertices(nx: usize, ny: usize, vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() != (nx + 1) * (ny + 1) {
            return Err(Error::DimensionMismatch {
                expected: (nx + 1) * (ny + 1),
                found: vertices.len(),
            });
        }
        if let Some(k) = vertices.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::NonFinite { index: k });
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let n_cells = nx * ny;

        let mut cell_centers = Vec::with_capacity(n_cells);
        let mut cell_volumes = Vec::with_capacity(n_cells);
        for j in 0..ny {
            for i in 0..nx {
                let poly = [
                    vertices[vid(i, j)],
                    vertices[vid(i + 1, j)],
                    vertices[vid(i + 1, j + 1)],
                    vertices[vid(i, j + 1)],
                ];
                let (area, centroid) = polygon_area_centroid(&poly);
                if area <= 0.0 || !area.is_finite() {
                    return Err(Error::InvalidDeformation {
                        cell: j * nx + i,
                        volume: area,
                    });
                }
                cell_centers.push(centroid);
                cell_volumes.push(area);
            }
        }

        let cell = |i: usize, j: usize| j * nx + i;
        // Vertical face at vertex column i, row j: edge from (i, j) to (i, j + 1).
        let vertical = |i: usize, j: usize| {
            let a = vertices[vid(i, j)];
            let b = vertices[vid(i, j + 1)];
            let e = sub(b, a);
            ([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])], [e[1], -e[0]])
        };
        // Horizontal face at vertex row j, column i: edge from (i, j) to (i + 1, j).
        let horizontal = |i: usize, j: usize| {
            let a = vertices[vid(i, j)];
            let b = vertices[vid(i + 1, j)];
            let e = sub(b, a);
            ([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])], [-e[1], e[0]])
        };

        let mut faces = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
        let mut cell_faces = vec![[usize::MAX; 4]; n_cells];

        for j in 0..ny {
            for i in 1..nx {
                let (center, area) = vertical(i, j);
                let f = faces.len();
                cell_faces[cell(i - 1, j)][1] = f;
                cell_faces[cell(i, j)][0] = f;
                faces.push(Face { owner: cell(i - 1, j), neighbour: Some(cell(i, j)), center, area });
            }
        }
        for j in 1..ny {
            for i in 0..nx {
                let (center, area) = horizontal(i, j);
                let f = faces.len();
                cell_faces[cell(i, j - 1)][3] = f;
                cell_faces[cell(i, j)][2] = f;
                faces.push(Face { owner: cell(i, j - 1), neighbour: Some(cell(i, j)), center, area });
            }
        }
        let n_interior = faces.len();

        let start = faces.len();
        for j in 0..ny {
            let (center, area) = vertical(0, j);
            cell_faces[cell(0, j)][0] = faces.len();
            faces.push(Face { owner: cell(0, j), neighbour: None, center, area: [-area[0], -area[1]] });
        }
        let inlet = start..faces.len();

        let start = faces.len();
        for j in 0..ny {
            let (center, area) = vertical(nx, j);
            cell_faces[cell(nx - 1, j)][1] = faces.len();
            faces.push(Face { owner: cell(nx - 1, j), neighbour: None, center, area });
        }
        let outlet = start..faces.len();

        let start = faces.len();
        for i in 0..nx {
            let (center, area) = horizontal(i, 0);
            cell_faces[cell(i, 0)][2] = faces.len();
            faces.push(Face { owner: cell(i, 0), neighbour: None, center, area: [-area[0], -area[1]] });
        }
        let wall_lower = start..faces.len();

        let start = faces.len();
        for i in 0..nx {
            let (center, area) = horizontal(i, ny);
            cell_faces[cell(i, ny - 1)][3] = faces.len();
            faces.push(Face { owner: cell(i, ny - 1), neighbour: None, center, area });
        }
        let wall_upper = start..faces.len();

        let checksum = geometry_checksum(nx, ny, &vertices);
        Ok(Self {
            nx,
            ny,
            vertices,
            cell_centers,
            cell_volumes,
            faces,
            n_interior,
            patches: [inlet, outlet, wall_lower, wall_upper],
            cell_faces,
            checksum,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_interior_faces(&self) -> usize {
        self.n_interior
    }

    pub fn n_boundary_faces(&self) -> usize {
        self.faces.len() - self.n_interior
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn cell_centers(&self) -> &[Vec2] {
        &self.cell_centers
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.cell_volumes
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn interior_faces(&self) -> Range<usize> {
        0..self.n_interior
    }

    pub fn boundary_faces(&self) -> Range<usize> {
        self.n_interior..self.faces.len()
    }

    pub fn patch_faces(&self, patch: Patch) -> Range<usize> {
        self.patches[patch.slot()].clone()
    }

    /// Patch owning boundary face `f`, or `None` for interior faces.
    pub fn face_patch(&self, f: usize) -> Option<Patch> {
        Patch::ALL
            .into_iter()
            .find(|p| self.patches[p.slot()].contains(&f))
    }

    /// West, east, south and north faces of cell `c`.
    pub fn cell_faces(&self, c: usize) -> [usize; 4] {
        self.cell_faces[c]
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    /// Sum of outward area vectors over the faces of cell `c`.
    pub fn closure_residual(&self, c: usize) -> Vec2 {
        let mut s = [0.0; 2];
        for f in self.cell_faces[c] {
            let face = &self.faces[f];
            let sign = if face.owner == c { 1.0 } else { -1.0 };
            s[0] += sign * face.area[0];
            s[1] += sign * face.area[1];
        }
        s
    }

    /// Identifier derived from the grid topology and vertex coordinates.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volumes.iter().sum()
    }

    /// Linear interpolation weight of the owner value at face `f`.
    ///
    /// Uses normal projections so the weight stays meaningful on warped
    /// cells. Boundary faces return 1.
    pub fn owner_weight(&self, f: usize) -> f64 {
        let face = &self.faces[f];
        match face.neighbour {
            None => 1.0,
            Some(n) => {
                let xp = self.cell_centers[face.owner];
                let xn = self.cell_centers[n];
                let dn = dot(sub(xn, face.center), face.area);
                let dd = dot(sub(xn, xp), face.area);
                (dn / dd).clamp(0.0, 1.0)
            }
        }
    }

    /// Owner-to-neighbour (or owner-to-face for boundaries) centre vector.
    pub fn delta(&self, f: usize) -> Vec2 {
        let face = &self.faces[f];
        let xp = self.cell_centers[face.owner];
        match face.neighbour {
            Some(n) => sub(self.cell_centers[n], xp),
            None => sub(face.center, xp),
        }
    }

    /// Two-point diffusion coefficient `|A|^2 / (A . d)`.
    pub fn diffusion_coeff(&self, f: usize) -> f64 {
        let a = self.faces[f].area;
        dot(a, a) / dot(a, self.delta(f))
    }

    pub fn quality(&self) -> MeshQuality {
        let mut max_non_ortho: f64 = 0.0;
        let mut sum_non_ortho = 0.0;
        let mut max_skew: f64 = 0.0;
        for f in 0..self.faces.len() {
            let face = &self.faces[f];
            let d = self.delta(f);
            let cosang = (dot(d, face.area) / (norm(d) * norm(face.area))).clamp(-1.0, 1.0);
            let angle = cosang.acos().to_degrees();
            max_non_ortho = max_non_ortho.max(angle);
            if face.neighbour.is_some() {
                sum_non_ortho += angle;
                let xp = self.cell_centers[face.owner];
                let s = dot(sub(face.center, xp), face.area) / dot(d, face.area);
                let hit = [xp[0] + s * d[0], xp[1] + s * d[1]];
                max_skew = max_skew.max(norm(sub(hit, face.center)) / norm(d));
            }
        }
        let min_volume = self.cell_volumes.iter().copied().fold(f64::INFINITY, f64::min);
        let max_volume = self.cell_volumes.iter().copied().fold(0.0, f64::max);
        MeshQuality {
            n_cells: self.n_cells(),
            min_cell_volume: min_volume,
            max_cell_volume: max_volume,
            max_non_orthogonality_deg: max_non_ortho,
            mean_non_orthogonality_deg: sum_non_ortho / self.n_interior.max(1) as f64,
            max_skewness: max_skew,
        }
    }
}

fn geometry_checksum(nx: usize, ny: usize, vertices: &[Vec2]) -> u64 {
    let mut h = Sha256::new();
    h.update((nx as u64).to_le_bytes());
    h.update((ny as u64).to_le_bytes());
    for v in vertices {
        h.update(v[0].to_bits().to_le_bytes());
        h.update(v[1].to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    pub n_cells: usize,
    pub min_cell_volume: f64,
    pub max_cell_volume: f64,
    pub max_non_orthogonality_deg: f64,
    pub mean_non_orthogonality_deg: f64,
    pub max_skewness: f64,
}

impl MeshQuality {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("n_cells", self.n_cells as f64),
            ("min_cell_volume", self.min_cell_volume),
            ("max_cell_volume", self.max_cell_volume),
            ("max_non_orthogonality_deg", self.max_non_orthogonality_deg),
            ("mean_non_orthogonality_deg", self.mean_non_orthogonality_deg),
            ("max_skewness", self.max_skewness),
        ]
    }
}
