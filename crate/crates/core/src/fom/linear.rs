//! Face-addressed (lower/diagonal/upper) sparse matrices and Krylov solvers.
//!
//! Residuals are normalised the way finite-volume codes usually do it:
//! `sum|b - Ax| / (sum|Ax - A xbar| + sum|b - A xbar| + 1e-20)` with `xbar`
//! the mean of `x`. This stays meaningful when `b` is tiny, e.g. a pressure
//! source that is already almost divergence-free.

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

#[derive(Debug, Clone, PartialEq)]
pub struct LduMatrix {
    pub diag: Vec<f64>,
    /// Coefficient in the owner row, neighbour column of each interior face.
    pub upper: Vec<f64>,
    /// Coefficient in the neighbour row, owner column of each interior face.
    pub lower: Vec<f64>,
    owner: Vec<usize>,
    neighbour: Vec<usize>,
}

impl LduMatrix {
    pub fn zeros(mesh: &StructuredMesh) -> Self {
        let nf = mesh.n_interior_faces();
        let mut owner = Vec::with_capacity(nf);
        let mut neighbour = Vec::with_capacity(nf);
        for f in mesh.interior_faces() {
            let face = mesh.face(f);
            owner.push(face.owner);
            neighbour.push(face.neighbour.expect("interior face"));
        }
        Self {
            diag: vec![0.0; mesh.n_cells()],
            upper: vec![0.0; nf],
            lower: vec![0.0; nf],
            owner,
            neighbour,
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    pub fn neighbour(&self) -> &[usize] {
        &self.neighbour
    }

    pub fn is_symmetric(&self) -> bool {
        self.upper == self.lower
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, d), xi) in y.iter_mut().zip(&self.diag).zip(x) {
            *yi = d * xi;
        }
        for f in 0..self.upper.len() {
            let o = self.owner[f];
            let n = self.neighbour[f];
            y[o] += self.upper[f] * x[n];
            y[n] += self.lower[f] * x[o];
        }
    }

    /// `sum_j a_ij x_j` over off-diagonal entries only.
    pub fn off_diag_mul(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for f in 0..self.upper.len() {
            let o = self.owner[f];
            let n = self.neighbour[f];
            y[o] += self.upper[f] * x[n];
            y[n] += self.lower[f] * x[o];
        }
    }

    /// Row sums of the full matrix.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = self.diag.clone();
        for f in 0..self.upper.len() {
            s[self.owner[f]] += self.upper[f];
            s[self.neighbour[f]] += self.lower[f];
        }
        s
    }

    fn norm_factor(&self, x: &[f64], b: &[f64], ax: &[f64]) -> f64 {
        let n = x.len();
        let xbar = x.iter().sum::<f64>() / n as f64;
        let ones = vec![xbar; n];
        let mut axbar = vec![0.0; n];
        self.mul(&ones, &mut axbar);
        let mut s = 1e-20;
        for i in 0..n {
            s += (ax[i] - axbar[i]).abs() + (b[i] - axbar[i]).abs();
        }
        s
    }

    /// Normalised residual of `x` (see module docs).
    pub fn normalised_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.mul(x, &mut ax);
        let nf = self.norm_factor(x, b, &ax);
        ax.iter().zip(b).map(|(a, b)| (b - a).abs()).sum::<f64>() / nf
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l1(r: &[f64]) -> f64 {
    r.iter().map(|v| v.abs()).sum()
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite systems.
pub fn conjugate_gradient(a: &LduMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = a.n();
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    let norm = a.norm_factor(x, b, &r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let initial = l1(&r) / norm;
    let mut history = vec![initial];
    if initial <= tol {
        return Ok(SolveStats { iterations: 0, initial_residual: initial, final_residual: initial });
    }
    let inv_d: Vec<f64> = a.diag.iter().map(|d| 1.0 / d).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dotp(&r, &z);
    for it in 1..=max_iter {
        a.mul(&p, &mut ap);
        let pap = dotp(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverFailure { solver: "conjugate gradient", residuals: history });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = l1(&r) / norm;
        history.push(res);
        if res <= tol {
            return Ok(SolveStats { iterations: it, initial_residual: initial, final_residual: res });
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dotp(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure { solver: "conjugate gradient", residuals: history })
}

/// Jacobi-preconditioned stabilised bi-conjugate gradients.
pub fn bicgstab(a: &LduMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = a.n();
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    let norm = a.norm_factor(x, b, &r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let initial = l1(&r) / norm;
    let mut history = vec![initial];
    if initial <= tol {
        return Ok(SolveStats { iterations: 0, initial_residual: initial, final_residual: initial });
    }
    let inv_d: Vec<f64> = a.diag.iter().map(|d| 1.0 / d).collect();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dotp(&r0, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * inv_d[i];
        }
        a.mul(&y, &mut v);
        let r0v = dotp(&r0, &v);
        if r0v == 0.0 {
            break;
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if l1(&s) / norm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            let res = l1(&s) / norm;
            return Ok(SolveStats { iterations: it, initial_residual: initial, final_residual: res });
        }
        for i in 0..n {
            zz[i] = s[i] * inv_d[i];
        }
        a.mul(&zz, &mut t);
        let tt = dotp(&t, &t);
        omega = if tt > 0.0 { dotp(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        let res = l1(&r) / norm;
        history.push(res);
        if res <= tol {
            return Ok(SolveStats { iterations: it, initial_residual: initial, final_residual: res });
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::SolverFailure { solver: "BiCGStab", residuals: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_channel_mesh;

    fn laplacian(mesh: &StructuredMesh, shift: f64, skew: f64) -> LduMatrix {
        let mut a = LduMatrix::zeros(mesh);
        for f in mesh.interior_faces() {
            let g = mesh.diffusion_coeff(f);
            let face = mesh.face(f);
            a.diag[face.owner] += g;
            a.diag[face.neighbour.unwrap()] += g;
            a.upper[f] = -g + skew;
            a.lower[f] = -g - skew;
        }
        for d in &mut a.diag {
            *d += shift;
        }
        a
    }

    #[test]
    fn cg_solves_shifted_laplacian() {
        let m = build_channel_mesh(1.0, 1.0, 12, 9).unwrap();
        let a = laplacian(&m, 0.3, 0.0);
        let xe: Vec<f64> = (0..a.n()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; a.n()];
        a.mul(&xe, &mut b);
        let mut x = vec![0.0; a.n()];
        let stats = conjugate_gradient(&a, &b, &mut x, 1e-12, 1000).unwrap();
        assert!(stats.final_residual <= 1e-12);
        for (u, v) in x.iter().zip(&xe) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let m = build_channel_mesh(1.0, 1.0, 12, 9).unwrap();
        let a = laplacian(&m, 2.0, 0.4);
        assert!(!a.is_symmetric());
        let xe: Vec<f64> = (0..a.n()).map(|i| (i as f64 * 0.21).cos()).collect();
        let mut b = vec![0.0; a.n()];
        a.mul(&xe, &mut b);
        let mut x = vec![0.0; a.n()];
        bicgstab(&a, &b, &mut x, 1e-12, 1000).unwrap();
        for (u, v) in x.iter().zip(&xe) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_returns_immediately() {
        let m = build_channel_mesh(1.0, 1.0, 4, 4).unwrap();
        let a = laplacian(&m, 1.0, 0.0);
        let mut x = vec![0.0; a.n()];
        let s = bicgstab(&a, &vec![0.0; a.n()], &mut x, 1e-10, 10).unwrap();
        assert_eq!(s.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_convergence_carries_history() {
        let m = build_channel_mesh(1.0, 1.0, 16, 16).unwrap();
        let a = laplacian(&m, 1e-6, 0.0);
        let b: Vec<f64> = (0..a.n()).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let mut x = vec![0.0; a.n()];
        match conjugate_gradient(&a, &b, &mut x, 1e-14, 3) {
            Err(Error::SolverFailure { residuals, .. }) => assert_eq!(residuals.len(), 4),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
