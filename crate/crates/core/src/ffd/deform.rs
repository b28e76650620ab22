use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::mesh::{MeshQuality, StructuredMesh};

use super::locate::locate_one;
use super::FfdLattice;

/// Symmetric narrowing of the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StenosisSpec {
    /// Fractional lumen reduction at the throat, in [0, 1).
    pub severity: f64,
    /// Streamwise position of the throat (m).
    pub center_x: f64,
    /// Streamwise length of the narrowing (m).
    pub extent: f64,
}

impl StenosisSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.severity) {
            return Err(Error::invalid(format!("severity must lie in [0, 1), got {}", self.severity)));
        }
        if !(self.extent > 0.0) || !self.center_x.is_finite() {
            return Err(Error::invalid("stenosis extent must be positive and its centre finite"));
        }
        Ok(())
    }
}

/// Points mapped through the displaced lattice. Points outside the box are
/// returned unchanged (bit-identical).
///
/// Inside, the image is `x + sum_i R_i(u) (P_i - P_i^ref)` with `u` located
/// on the reference lattice; this equals the displaced-lattice image of `u`
/// and is exactly `x` when nothing moved.
pub fn deform_points<const D: usize>(lattice: &FfdLattice<D>, points: &[[f64; D]]) -> Vec<[f64; D]> {
    let disp = lattice.displacements();
    points
        .par_iter()
        .map(|x| match locate_one(lattice, x) {
            None => *x,
            Some(u) => {
                let mut y = *x;
                // `locate_one` only returns points inside the parametric domain.
                for (i, r) in lattice.rational_basis(&u).expect("located point is in the domain") {
                    for d in 0..D {
                        y[d] += r * disp[i][d];
                    }
                }
                y
            }
        })
        .collect()
}

/// Lumen height `y_upper' - y_lower'` of the deformed walls at `n` stations
/// spread uniformly over the box in direction 0. Other coordinates sit at
/// the box centre.
pub fn lumen_profile<const D: usize>(lattice: &FfdLattice<D>, walls: [f64; 2], n: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = (lattice.box_min(), lattice.box_max());
    let mut pts = Vec::with_capacity(2 * n);
    for k in 0..n {
        let x = lo[0] + (hi[0] - lo[0]) * k as f64 / (n - 1).max(1) as f64;
        for &y in &walls {
            let mut p: [f64; D] = std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]));
            p[0] = x;
            p[1] = y;
            pts.push(p);
        }
    }
    let moved = deform_points(lattice, &pts);
    moved.chunks_exact(2).map(|w| (w[0][0], w[1][1] - w[0][1])).collect()
}

const LUMEN_SAMPLES: usize = 2001;

fn min_lumen<const D: usize>(lattice: &FfdLattice<D>, walls: [f64; 2]) -> f64 {
    lumen_profile(lattice, walls, LUMEN_SAMPLES).iter().map(|&(_, h)| h).fold(f64::INFINITY, f64::min)
}

/// Moves the second and second-to-last control layers in direction 1
/// towards each other with a cosine bump in direction 0, scaled so that the
/// narrowest deformed lumen between the walls `y = walls[0]` and
/// `y = walls[1]` is `(1 - severity)` times the undeformed one.
///
/// Boundary layers in every direction stay fixed. The amplitude is found by
/// bisection on the evaluated lattice.
pub fn apply_stenosis<const D: usize>(lattice: &FfdLattice<D>, spec: &StenosisSpec, walls: [f64; 2]) -> Result<FfdLattice<D>> {
    spec.validate()?;
    if D < 2 {
        return Err(Error::invalid("stenosis needs at least two directions"));
    }
    let (lo, hi) = (lattice.box_min(), lattice.box_max());
    let half = 0.5 * spec.extent;
    if !(spec.center_x - half > lo[0] && spec.center_x + half < hi[0]) {
        return Err(Error::invalid(format!(
            "stenosis support [{}, {}] is not strictly inside the lattice box [{}, {}]",
            spec.center_x - half,
            spec.center_x + half,
            lo[0],
            hi[0]
        )));
    }
    if !(lo[1] < walls[0] && walls[0] < walls[1] && walls[1] < hi[1]) {
        return Err(Error::invalid("channel walls must lie strictly inside the lattice box"));
    }
    let dims = lattice.dims();
    if dims[1] < 4 || dims[0] < 3 {
        return Err(Error::invalid("the lattice needs at least 3 x 4 control points for a stenosis"));
    }
    let (lower_row, upper_row) = (1, dims[1] - 2);
    let bump = |x: f64| {
        let s = (x - spec.center_x) / half;
        if s.abs() < 1.0 { 0.5 * (1.0 + (PI * s).cos()) } else { 0.0 }
    };
    let pattern: Vec<f64> = (0..lattice.n_control_points())
        .map(|i| {
            let m = lattice.multi_index(i);
            let interior = (0..D).filter(|&d| d != 1).all(|d| m[d] > 0 && m[d] + 1 < dims[d]);
            let b = bump(lattice.reference_points()[i][0]);
            match (interior, m[1]) {
                (true, r) if r == lower_row => b,
                (true, r) if r == upper_row => -b,
                _ => 0.0,
            }
        })
        .collect();
    if pattern.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("the stenosis support contains no interior control column"));
    }
    let displaced = |amp: f64| -> Result<FfdLattice<D>> {
        let pts = lattice
            .reference_points()
            .iter()
            .zip(&pattern)
            .map(|(p, &w)| {
                let mut q = *p;
                q[1] += amp * w;
                q
            })
            .collect();
        lattice.with_control_points(pts)
    };
    if spec.severity == 0.0 {
        return displaced(0.0);
    }
    let h0 = walls[1] - walls[0];
    let target = (1.0 - spec.severity) * h0;
    let f = |amp: f64| -> Result<f64> { Ok(min_lumen(&displaced(amp)?, walls) - target) };
    let (mut a, mut b) = (0.0, h0);
    let mut expansions = 0;
    while f(b)? > 0.0 {
        a = b;
        b *= 2.0;
        expansions += 1;
        if expansions > 30 {
            return Err(Error::Numeric("stenosis amplitude could not be bracketed".into()));
        }
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m)? > 0.0 {
            a = m;
        } else {
            b = m;
        }
        if b - a <= 1e-14 * h0 {
            break;
        }
    }
    let out = displaced(0.5 * (a + b))?;
    log::debug!(
        "stenosis {:.2}: amplitude {:.4e} m, min lumen {:.4e} m (target {:.4e})",
        spec.severity,
        0.5 * (a + b),
        min_lumen(&out, walls),
        target
    );
    Ok(out)
}

/// Warps every mesh vertex through the lattice and rebuilds the geometry.
/// A folded mesh (non-positive cell volume) is an invalid-deformation error.
pub fn deform_mesh(mesh: &StructuredMesh, lattice: &FfdLattice<2>) -> Result<(StructuredMesh, MeshQuality)> {
    let moved = deform_points(lattice, mesh.vertices());
    let out = StructuredMesh::from_vertices(mesh.nx(), mesh.ny(), moved)?;
    let q = out.quality();
    Ok((out, q))
}

/// Quality report as `metric,value` rows.
pub fn write_quality_csv(path: impl AsRef<Path>, quality: &MeshQuality) -> Result<()> {
    write_csv(path, &["metric", "value"], quality.rows().into_iter().map(|(k, v)| vec![k.to_string(), v.to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_channel_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 0.004;

    fn channel_lattice() -> FfdLattice<2> {
        FfdLattice::new([0.002, -0.5 * H], [0.014, 1.5 * H], [7, 5], [2, 2]).unwrap()
    }

    fn spec(severity: f64) -> StenosisSpec {
        StenosisSpec { severity, center_x: 0.008, extent: 0.006 }
    }

    #[test]
    fn zero_severity_is_identity() {
        let l = apply_stenosis(&channel_lattice(), &spec(0.0), [0.0, H]).unwrap();
        assert_eq!(l.max_displacement(), 0.0);
        let m = build_channel_mesh(0.024, H, 32, 8).unwrap();
        let (d, q) = deform_mesh(&m, &l).unwrap();
        assert_eq!(d.vertices(), m.vertices());
        assert_eq!(q, m.quality());
    }

    #[test]
    fn calibrated_lumen() {
        for s in [0.3, 0.5, 0.7] {
            let l = apply_stenosis(&channel_lattice(), &spec(s), [0.0, H]).unwrap();
            let h = min_lumen(&l, [0.0, H]);
            assert!((h - (1.0 - s) * H).abs() <= 0.02 * (1.0 - s) * H, "severity {s}: lumen {h}");
        }
    }

    #[test]
    fn stronger_stenosis_moves_more() {
        let a = apply_stenosis(&channel_lattice(), &spec(0.5), [0.0, H]).unwrap().displacements();
        let b = apply_stenosis(&channel_lattice(), &spec(0.7), [0.0, H]).unwrap().displacements();
        for (x, y) in a.iter().zip(&b) {
            let (nx, ny) = (x[1].abs(), y[1].abs());
            assert!(ny > nx || (nx == 0.0 && ny == 0.0));
        }
    }

    #[test]
    fn boundary_layers_fixed() {
        let l = apply_stenosis(&channel_lattice(), &spec(0.7), [0.0, H]).unwrap();
        for (i, d) in l.displacements().iter().enumerate() {
            let m = l.multi_index(i);
            if m[0] == 0 || m[0] == 6 || m[1] == 0 || m[1] == 4 {
                assert_eq!(*d, [0.0, 0.0]);
            }
        }
        // Points on the box boundary stay put.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pts = Vec::new();
        for _ in 0..200 {
            let t: f64 = rng.random();
            pts.push([0.002 + 0.012 * t, -0.5 * H]);
            pts.push([0.002 + 0.012 * t, 1.5 * H]);
            pts.push([0.002, -0.5 * H + 2.0 * H * t]);
            pts.push([0.014, -0.5 * H + 2.0 * H * t]);
        }
        for (p, q) in pts.iter().zip(deform_points(&l, &pts)) {
            assert!((p[0] - q[0]).abs() <= 1e-10 && (p[1] - q[1]).abs() <= 1e-10);
        }
    }

    #[test]
    fn exterior_points_bit_identical() {
        let l = apply_stenosis(&channel_lattice(), &spec(0.7), [0.0, H]).unwrap();
        let pts = [[0.0, 0.0], [0.0199, 0.002], [0.008, 1.5 * H + 1e-9]];
        assert_eq!(deform_points(&l, &pts), pts.to_vec());
    }

    #[test]
    fn single_control_point_displacement() {
        let l = channel_lattice();
        let k = l.index([3, 2]);
        let mut pts = l.reference_points().to_vec();
        pts[k][1] += 1e-3;
        pts[k][0] -= 2e-4;
        let moved = l.with_control_points(pts).unwrap();
        let u = [0.43, 0.58];
        let x = l.evaluate_reference(&u).unwrap();
        let y = deform_points(&moved, &[x])[0];
        // Basis product at u for control point (3, 2).
        let (sx, nx) = crate::ffd::bspline_basis(u[0], 2, l.knots(0)).unwrap();
        let (sy, ny) = crate::ffd::bspline_basis(u[1], 2, l.knots(1)).unwrap();
        let r = nx[3 + 2 - sx] * ny[2 + 2 - sy];
        assert!(r > 0.0);
        assert!((y[1] - x[1] - r * 1e-3).abs() < 1e-15);
        assert!((y[0] - x[0] + r * 2e-4).abs() < 1e-15);
    }

    #[test]
    fn deformed_mesh_valid_at_seventy_percent() {
        let m = build_channel_mesh(0.024, H, 64, 32).unwrap();
        let l = apply_stenosis(&channel_lattice(), &spec(0.7), [0.0, H]).unwrap();
        let (d, q) = deform_mesh(&m, &l).unwrap();
        assert!(q.min_cell_volume > 0.0);
        for c in 0..d.n_cells() {
            let r = d.closure_residual(c);
            assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12);
        }
        assert!(d.total_volume() < m.total_volume());
    }

    #[test]
    fn severe_stenosis_folds_coarse_mesh() {
        let m = build_channel_mesh(0.024, H, 32, 16).unwrap();
        let l = apply_stenosis(&channel_lattice(), &spec(0.95), [0.0, H]).unwrap();
        assert!(matches!(deform_mesh(&m, &l), Err(Error::InvalidDeformation { .. })));
    }

    #[test]
    fn invalid_specs() {
        let l = channel_lattice();
        assert!(apply_stenosis(&l, &spec(1.0), [0.0, H]).is_err());
        assert!(apply_stenosis(&l, &spec(-0.1), [0.0, H]).is_err());
        let wide = StenosisSpec { severity: 0.5, center_x: 0.008, extent: 0.013 };
        assert!(apply_stenosis(&l, &wide, [0.0, H]).is_err());
        assert!(apply_stenosis(&l, &spec(0.5), [-H, H]).is_err());
    }

    #[test]
    fn quality_csv() {
        let m = build_channel_mesh(0.024, H, 16, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.csv");
        write_quality_csv(&p, &m.quality()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("metric,value\n"));
        assert_eq!(text.lines().count(), 1 + m.quality().rows().len());
    }
}
