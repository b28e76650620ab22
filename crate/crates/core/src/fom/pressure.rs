use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

use super::linear::{conjugate_gradient, LduMatrix, SolveStats};

/// Pressure equation `sum_f g_f (p_P - p_N) = -sum_f phi*_f` assembled in
/// symmetric positive definite form.
///
/// `g_f` is the face conductance (interpolated `V / a_P` times the
/// two-point coefficient). Boundary faces are zero-gradient except the
/// pinned face, which is Dirichlet.
#[derive(Debug, Clone)]
pub struct PressureSystem {
    pub matrix: LduMatrix,
    conductance: Vec<f64>,
    pin: (usize, f64),
}

impl PressureSystem {
    pub fn new(mesh: &StructuredMesh, conductance: &[f64], pin: Option<(usize, f64)>) -> Result<Self> {
        let pin = pin.ok_or_else(|| {
            Error::Configuration(
                "pure-Neumann pressure problem without a reference face is singular".into(),
            )
        })?;
        if mesh.face(pin.0).neighbour.is_some() {
            return Err(Error::Configuration(format!("pressure reference face {} is not a boundary face", pin.0)));
        }
        let mut a = LduMatrix::zeros(mesh);
        for f in mesh.interior_faces() {
            let g = conductance[f];
            let face = mesh.face(f);
            a.diag[face.owner] += g;
            a.diag[face.neighbour.unwrap()] += g;
            a.upper[f] = -g;
            a.lower[f] = -g;
        }
        a.diag[mesh.face(pin.0).owner] += conductance[pin.0];
        Ok(Self { matrix: a, conductance: conductance.to_vec(), pin })
    }

    /// Right-hand side for a predicted face flux `phi*`.
    pub fn rhs(&self, mesh: &StructuredMesh, predicted: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; mesh.n_cells()];
        for (f, face) in mesh.faces().iter().enumerate() {
            b[face.owner] -= predicted[f];
            if let Some(n) = face.neighbour {
                b[n] += predicted[f];
            }
        }
        b[mesh.face(self.pin.0).owner] += self.conductance[self.pin.0] * self.pin.1;
        b
    }

    pub fn solve(&self, b: &[f64], p: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
        conjugate_gradient(&self.matrix, b, p, tol, max_iter)
    }

    /// `phi = phi* - g (p_N - p_P)`, consistent with the assembled operator.
    pub fn corrected_flux(&self, mesh: &StructuredMesh, predicted: &[f64], p: &[f64]) -> Vec<f64> {
        let mut phi = predicted.to_vec();
        for f in mesh.interior_faces() {
            let face = mesh.face(f);
            phi[f] -= self.conductance[f] * (p[face.neighbour.unwrap()] - p[face.owner]);
        }
        let (pf, value) = self.pin;
        phi[pf] -= self.conductance[pf] * (value - p[mesh.face(pf).owner]);
        phi
    }
}

/// Solves for the pressure that makes `predicted - g grad p` discretely
/// divergence-free and returns the corrected face flux. `p` carries the
/// initial guess in and the solution out.
pub fn solve_pressure_poisson(
    mesh: &StructuredMesh,
    conductance: &[f64],
    predicted: &[f64],
    pin: Option<(usize, f64)>,
    p: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let sys = PressureSystem::new(mesh, conductance, pin)?;
    let b = sys.rhs(mesh, predicted);
    sys.solve(&b, p, tol, max_iter)?;
    Ok(sys.corrected_flux(mesh, predicted, p))
}
