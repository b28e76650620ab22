use crate::error::{Error, Result};
use crate::mesh::{dot, StructuredMesh, Vec2};

use super::boundary::{enforce_compatibility, BoundaryValues, FlowBoundary};
use super::linear::bicgstab;
use super::momentum::{assemble_momentum, pressure_gradient, MomentumSystem, TimeScheme};
use super::pressure::PressureSystem;
use super::{flux_divergence, FlowState, SolverConfig};

/// Diagnostics of one accepted time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub scheme: TimeScheme,
    /// Largest per-cell net face flux after the last corrector.
    pub flux_divergence: f64,
    /// Per corrector: largest per-cell net flux of the freshly assembled
    /// face flux with the pressure of the previous corrector, before the
    /// pressure solve. It tends to zero as the correctors converge.
    pub corrector_residuals: Vec<f64>,
    pub momentum_iterations: usize,
    pub pressure_iterations: Vec<usize>,
}

fn interp(mesh: &StructuredMesh, f: usize, a: Vec2, b: Vec2) -> Vec2 {
    let w = mesh.owner_weight(f);
    [w * a[0] + (1.0 - w) * b[0], w * a[1] + (1.0 - w) * b[1]]
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Momentum predictor followed by `cfg.piso_correctors` pressure correctors.
///
/// Each corrector rebuilds `HbyA = (b - N u) / a_P` from the latest
/// velocity, forms face fluxes with the Rhie–Chow-type time-derivative
/// correction, solves the pressure equation and corrects flux and velocity.
pub fn piso_loop(
    mesh: &StructuredMesh,
    bv: &BoundaryValues,
    system: &MomentumSystem,
    state_n: &FlowState,
    state_nm1: Option<&FlowState>,
    cfg: &SolverConfig,
    t_np1: f64,
) -> Result<(FlowState, StepReport)> {
    if cfg.piso_correctors < 2 {
        return Err(Error::invalid(format!("at least two PISO correctors are required, got {}", cfg.piso_correctors)));
    }
    let step_err = |e: Error| match e {
        Error::SolverFailure { .. } => Error::StepFailure { time: t_np1, msg: e.to_string() },
        other => other,
    };
    let nc = mesh.n_cells();
    let n0 = mesh.n_interior_faces();
    let vols = mesh.cell_volumes();
    let a = &system.matrix;

    // Predictor with the old pressure gradient.
    let grad_p = pressure_gradient(mesh, &state_n.p, bv);
    let mut u = state_n.u.clone();
    let mut momentum_iterations = 0;
    for d in 0..2 {
        let b: Vec<f64> = (0..nc).map(|c| system.source[d][c] - vols[c] * grad_p[c][d]).collect();
        let mut x: Vec<f64> = u.iter().map(|v| v[d]).collect();
        let stats = bicgstab(a, &b, &mut x, cfg.linear_tol, cfg.max_linear_iters).map_err(step_err)?;
        momentum_iterations += stats.iterations;
        for (v, xi) in u.iter_mut().zip(x) {
            v[d] = xi;
        }
    }
    let mut state = FlowState {
        u,
        p: state_n.p.clone(),
        flux: state_n.flux.clone(),
        u_boundary: state_n.u_boundary.clone(),
        time: t_np1,
    };
    state.set_boundary_velocity(mesh, bv);

    let (_, c1, c2) = system.scheme.coefficients(cfg.dt);
    let rau: Vec<f64> = (0..nc).map(|c| vols[c] / a.diag[c]).collect();
    let rau_f: Vec<f64> = (0..mesh.n_faces())
        .map(|f| {
            let face = mesh.face(f);
            match face.neighbour {
                Some(n) => {
                    let w = mesh.owner_weight(f);
                    w * rau[face.owner] + (1.0 - w) * rau[n]
                }
                None => rau[face.owner],
            }
        })
        .collect();
    let conductance: Vec<f64> = (0..mesh.n_faces()).map(|f| rau_f[f] * mesh.diffusion_coeff(f)).collect();
    let pressure = PressureSystem::new(mesh, &conductance, bv.pin)?;

    // Time-derivative flux correction: difference between the conservative
    // flux and the interpolated velocity flux at the old levels.
    let mismatch = |s: &FlowState, f: usize| {
        let face = mesh.face(f);
        s.flux[f] - dot(interp(mesh, f, s.u[face.owner], s.u[face.neighbour.unwrap()]), face.area)
    };
    let ddt_corr: Vec<f64> = mesh
        .interior_faces()
        .map(|f| {
            let mut v = c1 * mismatch(state_n, f);
            if let Some(old) = state_nm1 {
                v -= c2 * mismatch(old, f);
            }
            rau_f[f] * v
        })
        .collect();

    let mut off = vec![0.0; nc];
    let mut hbya = vec![[0.0; 2]; nc];
    let mut pressure_iterations = Vec::with_capacity(cfg.piso_correctors);
    let mut corrector_residuals = Vec::with_capacity(cfg.piso_correctors);
    for _ in 0..cfg.piso_correctors {
        for d in 0..2 {
            let x: Vec<f64> = state.u.iter().map(|v| v[d]).collect();
            a.off_diag_mul(&x, &mut off);
            for c in 0..nc {
                hbya[c][d] = (system.source[d][c] - off[c]) / a.diag[c];
            }
        }
        let mut predicted = vec![0.0; mesh.n_faces()];
        for f in mesh.interior_faces() {
            let face = mesh.face(f);
            predicted[f] = dot(interp(mesh, f, hbya[face.owner], hbya[face.neighbour.unwrap()]), face.area) + ddt_corr[f];
        }
        for f in mesh.boundary_faces() {
            predicted[f] = if bv.fixed[f - n0] {
                bv.fixed_flux(mesh, f)
            } else {
                dot(hbya[mesh.face(f).owner], mesh.face(f).area)
            };
        }
        enforce_compatibility(mesh, bv, &mut predicted);
        let lagged = pressure.corrected_flux(mesh, &predicted, &state.p);
        corrector_residuals.push(max_abs(&flux_divergence(mesh, &lagged)));
        let rhs = pressure.rhs(mesh, &predicted);
        let stats = pressure.solve(&rhs, &mut state.p, cfg.linear_tol, cfg.max_linear_iters).map_err(step_err)?;
        pressure_iterations.push(stats.iterations);
        state.flux = pressure.corrected_flux(mesh, &predicted, &state.p);
        let grad = pressure_gradient(mesh, &state.p, bv);
        for c in 0..nc {
            state.u[c] = [hbya[c][0] - rau[c] * grad[c][0], hbya[c][1] - rau[c] * grad[c][1]];
        }
        state.set_boundary_velocity(mesh, bv);
    }

    let flux_div = max_abs(&state.divergence(mesh));
    if !flux_div.is_finite() || flux_div > cfg.div_tol {
        return Err(Error::StepFailure {
            time: t_np1,
            msg: format!("continuity residual {flux_div:.3e} exceeds {:.1e}", cfg.div_tol),
        });
    }
    if state.u.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::StepFailure { time: t_np1, msg: "non-finite velocity".into() });
    }
    let report = StepReport {
        scheme: system.scheme,
        flux_divergence: flux_div,
        corrector_residuals,
        momentum_iterations,
        pressure_iterations,
    };
    Ok((state, report))
}

/// Advances from `state_n` to `t_np1`. Uses BDF2 when the previous level
/// is given and implicit Euler otherwise (the start-up step).
pub fn bdf2_step(
    mesh: &StructuredMesh,
    bc: &dyn FlowBoundary,
    state_n: &FlowState,
    state_nm1: Option<&FlowState>,
    cfg: &SolverConfig,
    t_np1: f64,
) -> Result<(FlowState, StepReport)> {
    let bv = bc.evaluate(mesh, t_np1)?;
    let system = assemble_momentum(mesh, &bv, state_n, state_nm1, cfg.nu, cfg.dt);
    piso_loop(mesh, &bv, &system, state_n, state_nm1, cfg, t_np1)
}
