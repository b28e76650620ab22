use crate::mesh::{StructuredMesh, Vec2};

use super::boundary::BoundaryValues;
use super::linear::LduMatrix;
use super::FlowState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeScheme {
    ImplicitEuler,
    Bdf2,
}

impl TimeScheme {
    /// `(a0, c1, c2)` with `du/dt ~ a0 u^{n+1} - c1 u^n + c2 u^{n-1}`.
    pub fn coefficients(self, dt: f64) -> (f64, f64, f64) {
        match self {
            TimeScheme::ImplicitEuler => (1.0 / dt, 1.0 / dt, 0.0),
            TimeScheme::Bdf2 => (1.5 / dt, 2.0 / dt, 0.5 / dt),
        }
    }
}

/// Linearised momentum equations; one matrix serves both components.
#[derive(Debug, Clone)]
pub struct MomentumSystem {
    pub matrix: LduMatrix,
    /// Right-hand side per component, without the pressure gradient.
    pub source: [Vec<f64>; 2],
    pub scheme: TimeScheme,
}

/// Assembles
/// `a0 V u_i + sum_f phi_f u_f - nu sum_f (grad u)_f . A_f = V (c1 u^n - c2 u^{n-1})`
/// with `phi` frozen at time level `n`, linear face interpolation and
/// two-point face gradients. Without `state_nm1` the implicit Euler
/// coefficients are used.
pub fn assemble_momentum(
    mesh: &StructuredMesh,
    bv: &BoundaryValues,
    state_n: &FlowState,
    state_nm1: Option<&FlowState>,
    nu: f64,
    dt: f64,
) -> MomentumSystem {
    let scheme = if state_nm1.is_some() { TimeScheme::Bdf2 } else { TimeScheme::ImplicitEuler };
    let (a0, c1, c2) = scheme.coefficients(dt);
    let mut a = LduMatrix::zeros(mesh);
    let vols = mesh.cell_volumes();
    let mut sx = vec![0.0; mesh.n_cells()];
    let mut sy = vec![0.0; mesh.n_cells()];
    for c in 0..mesh.n_cells() {
        a.diag[c] = a0 * vols[c];
        let (mut bx, mut by) = (c1 * state_n.u[c][0], c1 * state_n.u[c][1]);
        if let Some(old) = state_nm1 {
            bx -= c2 * old.u[c][0];
            by -= c2 * old.u[c][1];
        }
        sx[c] = vols[c] * bx;
        sy[c] = vols[c] * by;
    }
    let phi = &state_n.flux;
    for f in mesh.interior_faces() {
        let face = mesh.face(f);
        let o = face.owner;
        let n = face.neighbour.unwrap();
        let w = mesh.owner_weight(f);
        let d = nu * mesh.diffusion_coeff(f);
        a.diag[o] += phi[f] * w + d;
        a.upper[f] = phi[f] * (1.0 - w) - d;
        a.diag[n] += -phi[f] * (1.0 - w) + d;
        a.lower[f] = -phi[f] * w - d;
    }
    let n0 = mesh.n_interior_faces();
    for f in mesh.boundary_faces() {
        let o = mesh.face(f).owner;
        if bv.fixed[f - n0] {
            let ub = bv.velocity[f - n0];
            let d = nu * mesh.diffusion_coeff(f);
            // Use the prescribed flux so the convective and continuity
            // boundary fluxes agree.
            let phib = bv.fixed_flux(mesh, f);
            a.diag[o] += d;
            sx[o] += (d - phib) * ub[0];
            sy[o] += (d - phib) * ub[1];
        } else {
            a.diag[o] += phi[f];
        }
    }
    MomentumSystem { matrix: a, source: [sx, sy], scheme }
}

/// Gauss gradient of a cell pressure field, per unit volume.
///
/// Zero-gradient boundary faces take the owner value; the pinned face takes
/// the reference value.
pub fn pressure_gradient(mesh: &StructuredMesh, p: &[f64], bv: &BoundaryValues) -> Vec<Vec2> {
    let mut g = vec![[0.0; 2]; mesh.n_cells()];
    for f in mesh.interior_faces() {
        let face = mesh.face(f);
        let n = face.neighbour.unwrap();
        let w = mesh.owner_weight(f);
        let pf = w * p[face.owner] + (1.0 - w) * p[n];
        g[face.owner][0] += pf * face.area[0];
        g[face.owner][1] += pf * face.area[1];
        g[n][0] -= pf * face.area[0];
        g[n][1] -= pf * face.area[1];
    }
    for f in mesh.boundary_faces() {
        let face = mesh.face(f);
        let pf = match bv.pin {
            Some((pf, value)) if pf == f => value,
            _ => p[face.owner],
        };
        g[face.owner][0] += pf * face.area[0];
        g[face.owner][1] += pf * face.area[1];
    }
    for (gc, v) in g.iter_mut().zip(mesh.cell_volumes()) {
        gc[0] /= v;
        gc[1] /= v;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_channel_mesh, dot};

    fn open_bv(mesh: &StructuredMesh) -> BoundaryValues {
        BoundaryValues {
            velocity: vec![[0.0; 2]; mesh.n_boundary_faces()],
            fixed: vec![true; mesh.n_boundary_faces()],
            pin: None,
        }
    }

    fn interior_cells(mesh: &StructuredMesh) -> impl Iterator<Item = usize> + '_ {
        (1..mesh.ny() - 1).flat_map(move |j| (1..mesh.nx() - 1).map(move |i| mesh.cell_index(i, j)))
    }

    fn uniform_flux_state(mesh: &StructuredMesh, vel: Vec2) -> FlowState {
        let mut s = FlowState::at_rest(mesh, 0.0);
        for f in 0..mesh.n_faces() {
            s.flux[f] = dot(vel, mesh.face(f).area);
        }
        s
    }

    #[test]
    fn constant_field_is_annihilated() {
        let m = build_channel_mesh(1.0, 0.5, 8, 6).unwrap();
        let s = uniform_flux_state(&m, [0.7, -0.3]);
        let dt = 0.01;
        let sys = assemble_momentum(&m, &open_bv(&m), &s, None, 0.05, dt);
        let sums = sys.matrix.row_sums();
        for c in interior_cells(&m) {
            let transport = sums[c] - m.cell_volumes()[c] / dt;
            assert!(transport.abs() < 1e-14, "cell {c}: {transport}");
        }
    }

    #[test]
    fn linear_field_exactness() {
        // u = (2x + y, x - 3y), convected by a uniform velocity a.
        // Diffusion of a linear field vanishes; the central convective term
        // equals V (a . grad) u.
        let m = build_channel_mesh(1.0, 0.5, 8, 6).unwrap();
        let a = [0.4, 0.25];
        let s = uniform_flux_state(&m, a);
        let dt = 0.01;
        let nu = 0.3;
        let lin = |x: Vec2| [2.0 * x[0] + x[1], x[0] - 3.0 * x[1]];
        let ux: Vec<f64> = m.cell_centers().iter().map(|&x| lin(x)[0]).collect();
        let uy: Vec<f64> = m.cell_centers().iter().map(|&x| lin(x)[1]).collect();

        let conv = assemble_momentum(&m, &open_bv(&m), &s, None, 0.0, dt);
        let diff = assemble_momentum(&m, &open_bv(&m), &FlowState::at_rest(&m, 0.0), None, nu, dt);
        let mut yx = vec![0.0; m.n_cells()];
        let mut yy = vec![0.0; m.n_cells()];
        let mut dx = vec![0.0; m.n_cells()];
        conv.matrix.mul(&ux, &mut yx);
        conv.matrix.mul(&uy, &mut yy);
        diff.matrix.mul(&ux, &mut dx);
        for c in interior_cells(&m) {
            let v = m.cell_volumes()[c];
            let time = v / dt;
            let exact = [v * (2.0 * a[0] + a[1]), v * (a[0] - 3.0 * a[1])];
            assert!((yx[c] - time * ux[c] - exact[0]).abs() < 1e-12);
            assert!((yy[c] - time * uy[c] - exact[1]).abs() < 1e-12);
            assert!((dx[c] - time * ux[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_by_hand() {
        // Interior cell with no flux: diag = 3V/(2dt) + nu * sum(|A|/d).
        let m = build_channel_mesh(1.0, 0.5, 8, 5).unwrap();
        let (dx, dy) = (1.0 / 8.0, 0.5 / 5.0);
        let mut s1 = FlowState::at_rest(&m, 0.0);
        s1.u[0] = [1.0, 1.0];
        let s0 = FlowState::at_rest(&m, 0.0);
        let nu = 0.02;
        let dt = 0.005;
        let sys = assemble_momentum(&m, &open_bv(&m), &s1, Some(&s0), nu, dt);
        let c = m.cell_index(3, 2);
        let expected = 1.5 * dx * dy / dt + nu * (2.0 * dy / dx + 2.0 * dx / dy);
        assert!((sys.matrix.diag[c] - expected).abs() < 1e-12 * expected);
        // Corner cell with two Dirichlet walls at half-cell distance.
        let corner = 1.5 * dx * dy / dt + nu * (dy / dx + 2.0 * dy / dx + dx / dy + 2.0 * dx / dy);
        assert!((sys.matrix.diag[0] - corner).abs() < 1e-12 * corner);
        // BDF2 source of the corner cell: V (2/dt * 1 - 0).
        assert!((sys.source[0][0] - dx * dy * 2.0 / dt).abs() < 1e-12);
        assert_eq!(sys.scheme, TimeScheme::Bdf2);
    }

    #[test]
    fn gradient_of_linear_pressure() {
        let m = build_channel_mesh(2.0, 1.0, 10, 6).unwrap();
        let p: Vec<f64> = m.cell_centers().iter().map(|x| 3.0 * x[0] - 0.5 * x[1]).collect();
        let g = pressure_gradient(&m, &p, &open_bv(&m));
        for c in interior_cells(&m) {
            assert!((g[c][0] - 3.0).abs() < 1e-12 && (g[c][1] + 0.5).abs() < 1e-12);
        }
    }
}
