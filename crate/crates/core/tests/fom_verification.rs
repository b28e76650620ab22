use std::f64::consts::PI;

use romforge_core::fom::{
    bdf2_step, compute_wss, run_cycles, write_snapshots, BoundaryValues, ChannelBoundary, FlowBoundary, FlowSolver,
    FlowState, InletProfile, SolverConfig, WaveformBc,
};
use romforge_core::mesh::{build_channel_mesh, Patch, StructuredMesh};
use romforge_core::Result;

/// Decaying Taylor–Green vortex on the unit square with Dirichlet velocity
/// taken from the exact solution.
struct TaylorGreen {
    nu: f64,
    amp: f64,
}

impl TaylorGreen {
    fn decay(&self, t: f64) -> f64 {
        (-2.0 * self.nu * PI * PI * t).exp()
    }

    fn velocity(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let f = self.amp * self.decay(t);
        [(PI * x[0]).sin() * (PI * x[1]).cos() * f, -(PI * x[0]).cos() * (PI * x[1]).sin() * f]
    }

    fn pressure(&self, x: [f64; 2], t: f64) -> f64 {
        let f = self.amp * self.decay(t);
        0.25 * ((2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos()) * f * f
    }
}

impl FlowBoundary for TaylorGreen {
    fn evaluate(&self, mesh: &StructuredMesh, t: f64) -> Result<BoundaryValues> {
        let velocity = mesh.boundary_faces().map(|f| self.velocity(mesh.face(f).center, t)).collect();
        let pin = mesh.patch_faces(Patch::Outlet).start;
        Ok(BoundaryValues {
            velocity,
            fixed: vec![true; mesh.n_boundary_faces()],
            pin: Some((pin, self.pressure(mesh.face(pin).center, t))),
        })
    }
}

fn tg_config(nu: f64, dt: f64) -> SolverConfig {
    let mut cfg = SolverConfig::desk();
    cfg.nu = nu;
    cfg.dt = dt;
    cfg.period = 1.0;
    cfg.waveform = WaveformBc::constant(1.0, 0.0).unwrap();
    cfg.linear_tol = 1e-13;
    cfg
}

fn run_tg(mesh: &StructuredMesh, tg: &TaylorGreen, dt: f64, t_end: f64) -> Vec<[f64; 2]> {
    let cfg = tg_config(tg.nu, dt);
    let u0 = mesh.cell_centers().iter().map(|&x| tg.velocity(x, 0.0)).collect();
    let p0 = mesh.cell_centers().iter().map(|&x| tg.pressure(x, 0.0)).collect();
    let init = FlowState::initialize(mesh, tg, u0, p0, 0.0, &cfg).unwrap();
    let mut solver = FlowSolver::from_state(mesh, tg, cfg, init).unwrap();
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        solver.step().unwrap();
    }
    assert!((solver.state().time - t_end).abs() < 1e-12);
    solver.state().u.clone()
}

fn l2_diff(mesh: &StructuredMesh, a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .zip(mesh.cell_volumes())
        .map(|((a, b), v)| v * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn taylor_green_temporal_order() {
    // Coarser steps are outside the asymptotic range on this grid.
    let mesh = build_channel_mesh(1.0, 1.0, 32, 32).unwrap();
    let tg = TaylorGreen { nu: 0.05, amp: 0.5 };
    let t_end = 1.0;
    let dt = 0.05;
    let u1 = run_tg(&mesh, &tg, dt, t_end);
    let u2 = run_tg(&mesh, &tg, dt / 2.0, t_end);
    let u4 = run_tg(&mesh, &tg, dt / 4.0, t_end);
    let e12 = l2_diff(&mesh, &u1, &u2);
    let e24 = l2_diff(&mesh, &u2, &u4);
    let order = (e12 / e24).log2();
    assert!((1.8..=2.2).contains(&order), "observed order {order:.3} ({e12:.3e}, {e24:.3e})");
}

#[test]
fn taylor_green_tracks_exact_solution() {
    let mesh = build_channel_mesh(1.0, 1.0, 24, 24).unwrap();
    let tg = TaylorGreen { nu: 0.02, amp: 1.0 };
    let u = run_tg(&mesh, &tg, 0.01, 0.4);
    let exact: Vec<[f64; 2]> = mesh.cell_centers().iter().map(|&x| tg.velocity(x, 0.4)).collect();
    let zero = vec![[0.0; 2]; exact.len()];
    let rel = l2_diff(&mesh, &u, &exact) / l2_diff(&mesh, &exact, &zero);
    assert!(rel < 1e-2, "relative error {rel:.3e}");
}

fn poiseuille() -> (StructuredMesh, ChannelBoundary, SolverConfig) {
    let mesh = build_channel_mesh(4.0, 1.0, 32, 16).unwrap();
    let mut cfg = SolverConfig::desk();
    cfg.nu = 0.1;
    cfg.dt = 0.05;
    cfg.period = 1.0;
    cfg.waveform = WaveformBc::constant(1.0, 1.0).unwrap();
    let bc = ChannelBoundary::new(&mesh, cfg.waveform.clone(), InletProfile::Parabolic);
    (mesh, bc, cfg)
}

#[test]
fn poiseuille_profile_and_wall_shear() {
    let (mesh, bc, cfg) = poiseuille();
    let nu = cfg.nu;
    let mut solver = FlowSolver::new(&mesh, &bc, cfg).unwrap();
    for _ in 0..400 {
        let report = solver.step().unwrap();
        assert!(report.flux_divergence <= 1e-8);
    }
    // Mean speed 1 on height 1: u = 6 y (1 - y), centreline 1.5.
    let i = mesh.nx() / 2;
    let mut max_err: f64 = 0.0;
    for j in 0..mesh.ny() {
        let c = mesh.cell_index(i, j);
        let y = mesh.cell_centers()[c][1];
        let exact = 6.0 * y * (1.0 - y);
        max_err = max_err.max((solver.state().u[c][0] - exact).abs());
    }
    assert!(max_err / 1.5 < 0.02, "profile error {:.3}%", 100.0 * max_err / 1.5);

    let wss = compute_wss(&mesh, solver.state(), nu);
    let expected = 2.0 * nu * 1.5 / 0.5;
    for (k, &f) in wss.face_ids.iter().enumerate() {
        let x = mesh.face(f).center[0];
        if (1.0..3.0).contains(&x) {
            let m = wss.magnitudes()[k];
            assert!((m - expected).abs() / expected < 0.02, "face {f}: {m} vs {expected}");
        }
    }
}

#[test]
fn more_correctors_do_not_increase_divergence() {
    let mesh = build_channel_mesh(0.024, 0.004, 48, 16).unwrap();
    let mut cfg = SolverConfig::desk();
    cfg.n_cycles = 1;
    let bc = ChannelBoundary::new(&mesh, cfg.waveform.clone(), InletProfile::Parabolic);
    let mut solver = FlowSolver::new(&mesh, &bc, cfg.clone()).unwrap();
    for _ in 0..40 {
        solver.step().unwrap();
    }
    let base = solver.state().clone();
    let mut solver = FlowSolver::new(&mesh, &bc, cfg.clone()).unwrap();
    for _ in 0..39 {
        solver.step().unwrap();
    }
    let prev = solver.state().clone();
    let t = base.time + cfg.dt;
    let mut last = f64::INFINITY;
    for k in 2..=4 {
        cfg.piso_correctors = k;
        let (_, report) = bdf2_step(&mesh, &bc, &base, Some(&prev), &cfg, t).unwrap();
        assert!(report.flux_divergence <= 1e-8);
        let r = *report.corrector_residuals.last().unwrap();
        assert!(r <= last, "{k} correctors: {r:e} > {last:e}");
        last = r;
    }
}

#[test]
fn identical_runs_write_identical_files() {
    let mesh = build_channel_mesh(0.024, 0.004, 16, 8).unwrap();
    let mut cfg = SolverConfig::desk();
    cfg.dt = 0.01;
    cfg.n_cycles = 2;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_snapshots(a.path(), &run_cycles(&mesh, &cfg, 20).unwrap()).unwrap();
    write_snapshots(b.path(), &run_cycles(&mesh, &cfg, 20).unwrap()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 61);
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
    }
}

#[test]
fn snapshot_spacing_for_100_and_200() {
    // N = 100 over T = 0.8 s gives one sample every 0.008 s.
    let mesh = build_channel_mesh(0.024, 0.004, 8, 4).unwrap();
    let mut cfg = SolverConfig::desk();
    cfg.n_cycles = 2;
    for (n, spacing) in [(100, 0.008), (200, 0.004)] {
        let snaps = run_cycles(&mesh, &cfg, n).unwrap();
        assert_eq!(snaps.len(), n);
        for w in snaps.windows(2) {
            assert!((w[1].time - w[0].time - spacing).abs() < 1e-12);
        }
        assert!((snaps[n - 1].time - 0.8).abs() < 1e-12);
    }
}


