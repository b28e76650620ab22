use crate::field::WssField;
use crate::mesh::{dot, norm, sub, Patch, StructuredMesh};

use super::FlowState;

/// Wall traction `nu (grad u + grad u^T) . n` on the lower and upper walls.
///
/// The wall-normal derivative is the two-point difference between the wall
/// velocity and the adjacent cell centre, i.e. the same gradient the
/// momentum equation uses for the wall diffusive flux. Along a no-slip wall
/// the tangential derivatives vanish, so `grad u = g n^T` with `g` the
/// outward normal derivative and the traction reduces to `nu (g + n (g . n))`.
pub fn compute_wss(mesh: &StructuredMesh, state: &FlowState, nu: f64) -> WssField {
    let n0 = mesh.n_interior_faces();
    let mut face_ids = Vec::new();
    let mut values = Vec::new();
    for patch in [Patch::WallLower, Patch::WallUpper] {
        for f in mesh.patch_faces(patch) {
            let face = mesh.face(f);
            let c = face.owner;
            let a = norm(face.area);
            let n = [face.area[0] / a, face.area[1] / a];
            let uw = state.u_boundary[f - n0];
            // Inward distance of the cell centre from the face.
            let y = -dot(sub(mesh.cell_centers()[c], face.center), n);
            let g = [-(state.u[c][0] - uw[0]) / y, -(state.u[c][1] - uw[1]) / y];
            let gn = dot(g, n);
            face_ids.push(f);
            values.push(nu * (g[0] + n[0] * gn));
            values.push(nu * (g[1] + n[1] * gn));
        }
    }
    WssField { face_ids, values, mesh_id: mesh.checksum(), time: state.time }
}
