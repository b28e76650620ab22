//! Full-order incompressible Navier–Stokes solver.
//!
//! Second-order BDF in time (implicit Euler for the first step), central
//! finite volumes in space on the collocated structured mesh, and PISO
//! pressure–velocity coupling with momentum-interpolated face fluxes.
//! The convective flux is frozen at the previous time level, so each step
//! is linear in the new velocity.

mod boundary;
pub mod linear;
mod momentum;
mod piso;
mod pressure;
mod run;
mod waveform;
mod wss;

pub use boundary::{apply_boundary_conditions, BoundaryValues, ChannelBoundary, FlowBoundary, InletProfile};
pub use momentum::{assemble_momentum, pressure_gradient, MomentumSystem, TimeScheme};
pub use piso::{bdf2_step, piso_loop, StepReport};
pub use pressure::{solve_pressure_poisson, PressureSystem};
pub use run::{read_manifest, read_snapshots, run_cycles, run_cycles_with, write_snapshots, FlowSolver, ManifestEntry, RunStats, Snapshot};
pub use waveform::{inflow_rate, WaveformBc};
pub use wss::compute_wss;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::mesh::{dot, Patch, StructuredMesh, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Kinematic viscosity (m²/s).
    pub nu: f64,
    pub dt: f64,
    /// Cycle period `T` (s).
    pub period: f64,
    /// Total simulated cycles; all but the last are warm-up.
    pub n_cycles: usize,
    pub piso_correctors: usize,
    pub linear_tol: f64,
    pub div_tol: f64,
    pub max_linear_iters: usize,
    pub waveform: WaveformBc,
    pub inlet_profile: InletProfile,
}

impl SolverConfig {
    /// Blood-like viscosity in a 4 mm channel driven by the default pulse.
    pub fn desk() -> Self {
        let period = 0.8;
        Self {
            nu: 3.5e-6,
            dt: 2e-3,
            period,
            n_cycles: 3,
            piso_correctors: 2,
            linear_tol: 1e-10,
            div_tol: 1e-8,
            max_linear_iters: 5000,
            waveform: WaveformBc::default_pulse(period, 7.0e-5, 1.0).expect("default pulse is valid"),
            inlet_profile: InletProfile::Parabolic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::invalid(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.period > 0.0) {
            return Err(Error::invalid("cycle period must be positive"));
        }
        let steps = self.period / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::invalid(format!(
                "period {} is not an integer multiple of dt {}",
                self.period, self.dt
            )));
        }
        if self.piso_correctors < 2 {
            return Err(Error::invalid(format!(
                "at least two PISO correctors are required, got {}",
                self.piso_correctors
            )));
        }
        if !(self.linear_tol > 0.0) || !(self.div_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if (self.waveform.period() - self.period).abs() > 1e-12 * self.period {
            return Err(Error::invalid(format!(
                "waveform period {} differs from cycle period {}",
                self.waveform.period(),
                self.period
            )));
        }
        Ok(())
    }

    pub fn steps_per_cycle(&self) -> usize {
        (self.period / self.dt).round() as usize
    }
}

/// Velocity, kinematic pressure and face fluxes at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub u: Vec<Vec2>,
    pub p: Vec<f64>,
    /// Volumetric flux through every face, positive out of the owner cell.
    pub flux: Vec<f64>,
    /// Velocity on every boundary face, indexed from the first boundary face.
    pub u_boundary: Vec<Vec2>,
    pub time: f64,
}

impl FlowState {
    pub fn at_rest(mesh: &StructuredMesh, time: f64) -> Self {
        Self {
            u: vec![[0.0; 2]; mesh.n_cells()],
            p: vec![0.0; mesh.n_cells()],
            flux: vec![0.0; mesh.n_faces()],
            u_boundary: vec![[0.0; 2]; mesh.n_boundary_faces()],
            time,
        }
    }

    /// Builds a state from a cell velocity and pressure, projecting the
    /// interpolated face fluxes onto a discretely divergence-free set.
    pub fn initialize(
        mesh: &StructuredMesh,
        bc: &dyn FlowBoundary,
        u: Vec<Vec2>,
        p: Vec<f64>,
        time: f64,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        if u.len() != mesh.n_cells() || p.len() != mesh.n_cells() {
            return Err(Error::DimensionMismatch { expected: mesh.n_cells(), found: u.len().min(p.len()) });
        }
        let mut state = Self { u, p, flux: vec![0.0; mesh.n_faces()], u_boundary: vec![[0.0; 2]; mesh.n_boundary_faces()], time };
        let bv = bc.evaluate(mesh, time)?;
        state.set_boundary_velocity(mesh, &bv);
        let nb = mesh.n_interior_faces();
        let mut predicted = vec![0.0; mesh.n_faces()];
        for f in mesh.interior_faces() {
            let face = mesh.face(f);
            let w = mesh.owner_weight(f);
            let n = face.neighbour.unwrap();
            let uf = [
                w * state.u[face.owner][0] + (1.0 - w) * state.u[n][0],
                w * state.u[face.owner][1] + (1.0 - w) * state.u[n][1],
            ];
            predicted[f] = dot(uf, face.area);
        }
        for f in mesh.boundary_faces() {
            predicted[f] = dot(state.u_boundary[f - nb], mesh.face(f).area);
        }
        boundary::enforce_compatibility(mesh, &bv, &mut predicted);
        let g: Vec<f64> = (0..mesh.n_faces()).map(|f| mesh.diffusion_coeff(f)).collect();
        let mut phi = vec![0.0; mesh.n_cells()];
        let flux = solve_pressure_poisson(mesh, &g, &predicted, bv.pin.map(|(f, _)| (f, 0.0)), &mut phi, cfg.linear_tol, cfg.max_linear_iters)?;
        state.flux = flux;
        Ok(state)
    }

    pub(crate) fn set_boundary_velocity(&mut self, mesh: &StructuredMesh, bv: &BoundaryValues) {
        let nb = mesh.n_interior_faces();
        for f in mesh.boundary_faces() {
            let k = f - nb;
            self.u_boundary[k] = if bv.fixed[k] { bv.velocity[k] } else { self.u[mesh.face(f).owner] };
        }
    }

    pub fn velocity_field(&self, mesh: &StructuredMesh) -> Result<Field> {
        Field::vector(mesh, self.u.iter().flat_map(|v| [v[0], v[1]]).collect(), self.time)
    }

    pub fn pressure_field(&self, mesh: &StructuredMesh) -> Result<Field> {
        Field::scalar(mesh, self.p.clone(), self.time)
    }

    /// Net outward flux of every cell.
    pub fn divergence(&self, mesh: &StructuredMesh) -> Vec<f64> {
        flux_divergence(mesh, &self.flux)
    }

    pub fn max_divergence(&self, mesh: &StructuredMesh) -> f64 {
        self.divergence(mesh).iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// Total outward flux through one patch.
    pub fn patch_flux(&self, mesh: &StructuredMesh, patch: Patch) -> f64 {
        mesh.patch_faces(patch).map(|f| self.flux[f]).sum()
    }
}

pub(crate) fn flux_divergence(mesh: &StructuredMesh, flux: &[f64]) -> Vec<f64> {
    let mut div = vec![0.0; mesh.n_cells()];
    for (f, face) in mesh.faces().iter().enumerate() {
        div[face.owner] += flux[f];
        if let Some(n) = face.neighbour {
            div[n] -= flux[f];
        }
    }
    div
}
