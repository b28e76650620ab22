use crate::error::Result;
use crate::mesh::{dot, norm, Patch, StructuredMesh, Vec2};

use super::waveform::{inflow_rate, WaveformBc};
use super::FlowState;

/// Boundary data at one time level, indexed from the first boundary face.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryValues {
    /// Prescribed velocity (meaningful where `fixed` is set).
    pub velocity: Vec<Vec2>,
    /// `true` for Dirichlet velocity, `false` for zero-gradient.
    pub fixed: Vec<bool>,
    /// Boundary face carrying the pressure reference, and its value.
    pub pin: Option<(usize, f64)>,
}

impl BoundaryValues {
    pub fn fixed_flux(&self, mesh: &StructuredMesh, f: usize) -> f64 {
        dot(self.velocity[f - mesh.n_interior_faces()], mesh.face(f).area)
    }

    pub fn is_fixed(&self, mesh: &StructuredMesh, f: usize) -> bool {
        self.fixed[f - mesh.n_interior_faces()]
    }
}

/// Source of time-dependent boundary conditions.
pub trait FlowBoundary: Sync {
    fn evaluate(&self, mesh: &StructuredMesh, t: f64) -> Result<BoundaryValues>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InletProfile {
    /// Parabola vanishing at both walls.
    Parabolic,
    Uniform,
}

/// Channel conditions: pulsatile inflow, no-slip walls, zero-gradient
/// outflow with the kinematic pressure pinned to zero on the middle outlet face.
#[derive(Debug, Clone)]
pub struct ChannelBoundary {
    waveform: WaveformBc,
    /// Inlet velocity per unit inflow rate.
    unit_inlet: Vec<Vec2>,
    pin_face: usize,
}

impl ChannelBoundary {
    pub fn new(mesh: &StructuredMesh, waveform: WaveformBc, profile: InletProfile) -> Self {
        let inlet = mesh.patch_faces(Patch::Inlet);
        let (ymin, ymax) = inlet.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
            let c = mesh.face(f).center[1];
            let h = 0.5 * norm(mesh.face(f).area);
            (lo.min(c - h), hi.max(c + h))
        });
        let shapes: Vec<f64> = inlet
            .clone()
            .map(|f| match profile {
                InletProfile::Uniform => 1.0,
                InletProfile::Parabolic => {
                    let s = (mesh.face(f).center[1] - ymin) / (ymax - ymin);
                    s * (1.0 - s)
                }
            })
            .collect();
        let rate: f64 = inlet.clone().zip(&shapes).map(|(f, s)| s * norm(mesh.face(f).area)).sum();
        let unit_inlet = inlet
            .zip(&shapes)
            .map(|(f, s)| {
                let a = mesh.face(f).area;
                let n = norm(a);
                // Inflow points against the outward normal.
                [-a[0] / n * s / rate, -a[1] / n * s / rate]
            })
            .collect();
        let outlet = mesh.patch_faces(Patch::Outlet);
        let pin_face = outlet.start + outlet.len() / 2;
        Self { waveform, unit_inlet, pin_face }
    }

    pub fn waveform(&self) -> &WaveformBc {
        &self.waveform
    }

    pub fn pin_face(&self) -> usize {
        self.pin_face
    }
}

impl FlowBoundary for ChannelBoundary {
    fn evaluate(&self, mesh: &StructuredMesh, t: f64) -> Result<BoundaryValues> {
        let q = inflow_rate(&self.waveform, t)?;
        let nb = mesh.n_boundary_faces();
        let n0 = mesh.n_interior_faces();
        let mut velocity = vec![[0.0; 2]; nb];
        let mut fixed = vec![true; nb];
        for (k, f) in mesh.patch_faces(Patch::Inlet).enumerate() {
            let u = self.unit_inlet[k];
            velocity[f - n0] = [q * u[0], q * u[1]];
        }
        for f in mesh.patch_faces(Patch::Outlet) {
            fixed[f - n0] = false;
        }
        Ok(BoundaryValues { velocity, fixed, pin: Some((self.pin_face, 0.0)) })
    }
}

/// Imposes the boundary conditions at time `t` on `state`: Dirichlet faces
/// take their prescribed velocity and flux, zero-gradient faces copy the
/// owner-cell velocity.
pub fn apply_boundary_conditions(
    mesh: &StructuredMesh,
    bc: &dyn FlowBoundary,
    mut state: FlowState,
    t: f64,
) -> Result<FlowState> {
    let bv = bc.evaluate(mesh, t)?;
    state.set_boundary_velocity(mesh, &bv);
    for f in mesh.boundary_faces() {
        if bv.is_fixed(mesh, f) {
            state.flux[f] = bv.fixed_flux(mesh, f);
        }
    }
    Ok(state)
}

/// Rescales zero-gradient boundary fluxes so the net boundary flux vanishes.
pub(crate) fn enforce_compatibility(mesh: &StructuredMesh, bv: &BoundaryValues, flux: &mut [f64]) {
    let mut fixed_sum = 0.0;
    let mut free_sum = 0.0;
    let mut free_area = 0.0;
    for f in mesh.boundary_faces() {
        if bv.is_fixed(mesh, f) {
            fixed_sum += flux[f];
        } else {
            free_sum += flux[f];
            free_area += norm(mesh.face(f).area);
        }
    }
    if free_area == 0.0 {
        return;
    }
    let target = -fixed_sum;
    let scale_ok = free_sum.abs() > 1e-12 * target.abs().max(f64::MIN_POSITIVE) && free_sum * target > 0.0;
    for f in mesh.boundary_faces() {
        if !bv.is_fixed(mesh, f) {
            if scale_ok {
                flux[f] *= target / free_sum;
            } else {
                flux[f] += (target - free_sum) * norm(mesh.face(f).area) / free_area;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_channel_mesh;

    #[test]
    fn uniform_profile_speed() {
        let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
        let w = WaveformBc::constant(0.8, 0.3).unwrap();
        let bc = ChannelBoundary::new(&m, w, InletProfile::Uniform);
        let s = apply_boundary_conditions(&m, &bc, FlowState::at_rest(&m, 0.0), 0.1).unwrap();
        let n0 = m.n_interior_faces();
        for f in m.patch_faces(Patch::Inlet) {
            let u = s.u_boundary[f - n0];
            assert!((u[0] - 0.3 / 0.2).abs() < 1e-12);
            assert_eq!(u[1], 0.0);
        }
        assert!((s.patch_flux(&m, Patch::Inlet) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn parabolic_profile_integrates_to_rate() {
        let m = build_channel_mesh(1.0, 0.2, 10, 8).unwrap();
        let w = WaveformBc::default_pulse(0.8, 0.05, 1.0).unwrap();
        let bc = ChannelBoundary::new(&m, w.clone(), InletProfile::Parabolic);
        let s = apply_boundary_conditions(&m, &bc, FlowState::at_rest(&m, 0.0), 0.37).unwrap();
        let q = inflow_rate(&w, 0.37).unwrap();
        assert!((s.patch_flux(&m, Patch::Inlet) + q).abs() < 1e-15);
    }

    #[test]
    fn zero_inflow_and_no_slip() {
        let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
        let w = WaveformBc::constant(0.8, 0.0).unwrap();
        let bc = ChannelBoundary::new(&m, w, InletProfile::Parabolic);
        let mut s = FlowState::at_rest(&m, 0.0);
        s.u.iter_mut().for_each(|u| *u = [1.0, 2.0]);
        let s = apply_boundary_conditions(&m, &bc, s, 0.0).unwrap();
        let n0 = m.n_interior_faces();
        for p in [Patch::Inlet, Patch::WallLower, Patch::WallUpper] {
            for f in m.patch_faces(p) {
                assert_eq!(s.u_boundary[f - n0], [0.0, 0.0]);
            }
        }
        for f in m.patch_faces(Patch::Outlet) {
            assert_eq!(s.u_boundary[f - n0], [1.0, 2.0]);
        }
    }
}
