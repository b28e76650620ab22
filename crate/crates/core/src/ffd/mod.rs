//! Free-form deformation with tensor-product NURBS lattices.
//!
//! A lattice embeds an axis-aligned box. Points are located in the
//! parametric space of the undisplaced (reference) lattice and mapped
//! through the displaced one. The code is generic in the dimension `D`;
//! the channel model uses `D = 2`.

mod basis;
mod deform;
mod locate;

pub use basis::{bspline_basis, clamped_uniform_knots, find_span, greville};
pub use deform::{
    apply_stenosis, deform_mesh, deform_points, lumen_profile, write_quality_csv, StenosisSpec,
};
pub use locate::locate_parametric;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use basis::{basis_and_derivative, check_knots, find_span as span_of};

const LATTICE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FfdLattice<const D: usize> {
    dims: [usize; D],
    degrees: [usize; D],
    knots: [Vec<f64>; D],
    /// Undisplaced control points, used for point location.
    reference: Vec<[f64; D]>,
    control_points: Vec<[f64; D]>,
    weights: Vec<f64>,
    box_min: [f64; D],
    box_max: [f64; D],
    /// Unit weights and reference points at the Greville abscissae of the
    /// box: the reference map is then the affine box map.
    affine: bool,
}

/// Values and parametric derivatives of the non-zero tensor-product
/// basis functions at one parametric point.
pub(crate) struct TensorBasis<const D: usize> {
    pub(crate) indices: Vec<usize>,
    pub(crate) values: Vec<f64>,
    pub(crate) grads: Vec<[f64; D]>,
}

impl<const D: usize> FfdLattice<D> {
    /// Lattice with `dims` control points per direction at the Greville
    /// abscissae of clamped uniform knots, unit weights.
    pub fn new(box_min: [f64; D], box_max: [f64; D], dims: [usize; D], degrees: [usize; D]) -> Result<Self> {
        let mut knots: [Vec<f64>; D] = std::array::from_fn(|_| Vec::new());
        for d in 0..D {
            knots[d] = clamped_uniform_knots(dims[d], degrees[d])?;
        }
        let reference = greville_grid(&box_min, &box_max, &dims, &degrees, &knots);
        let n = reference.len();
        Self::from_parts(dims, degrees, knots, reference.clone(), reference, vec![1.0; n], box_min, box_max)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dims: [usize; D],
        degrees: [usize; D],
        knots: [Vec<f64>; D],
        reference: Vec<[f64; D]>,
        control_points: Vec<[f64; D]>,
        weights: Vec<f64>,
        box_min: [f64; D],
        box_max: [f64; D],
    ) -> Result<Self> {
        for d in 0..D {
            if dims[d] < degrees[d] + 1 {
                return Err(Error::invalid(format!(
                    "direction {d}: {} control points cannot carry degree {}",
                    dims[d], degrees[d]
                )));
            }
            check_knots(&knots[d], dims[d], degrees[d])?;
            if !(box_max[d] > box_min[d]) {
                return Err(Error::invalid(format!("direction {d}: empty embedding box")));
            }
        }
        let n: usize = dims.iter().product();
        for (what, len) in [("reference points", reference.len()), ("control points", control_points.len()), ("weights", weights.len())] {
            if len != n {
                return Err(Error::invalid(format!("{what}: expected {n}, got {len}")));
            }
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        if reference.iter().chain(&control_points).flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("control points must be finite"));
        }
        let grid = greville_grid(&box_min, &box_max, &dims, &degrees, &knots);
        let scale = (0..D).map(|d| box_max[d] - box_min[d]).fold(0.0, f64::max);
        let affine = weights.iter().all(|&w| w == 1.0)
            && reference.iter().zip(&grid).all(|(a, b)| (0..D).all(|d| (a[d] - b[d]).abs() <= 1e-13 * scale));
        Ok(Self { dims, degrees, knots, reference, control_points, weights, box_min, box_max, affine })
    }

    /// Same lattice with new weights (the reference map stops being affine
    /// unless all weights are one).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            self.dims,
            self.degrees,
            self.knots.clone(),
            self.reference.clone(),
            self.control_points.clone(),
            weights,
            self.box_min,
            self.box_max,
        )
    }

    /// Same lattice with displaced control points; the reference is kept.
    pub fn with_control_points(&self, control_points: Vec<[f64; D]>) -> Result<Self> {
        Self::from_parts(
            self.dims,
            self.degrees,
            self.knots.clone(),
            self.reference.clone(),
            control_points,
            self.weights.clone(),
            self.box_min,
            self.box_max,
        )
    }

    pub fn dims(&self) -> [usize; D] {
        self.dims
    }

    pub fn degrees(&self) -> [usize; D] {
        self.degrees
    }

    pub fn knots(&self, d: usize) -> &[f64] {
        &self.knots[d]
    }

    pub fn reference_points(&self) -> &[[f64; D]] {
        &self.reference
    }

    pub fn control_points(&self) -> &[[f64; D]] {
        &self.control_points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn box_min(&self) -> [f64; D] {
        self.box_min
    }

    pub fn box_max(&self) -> [f64; D] {
        self.box_max
    }

    pub fn is_affine(&self) -> bool {
        self.affine
    }

    pub fn n_control_points(&self) -> usize {
        self.reference.len()
    }

    /// Flat index of a control point, direction 0 varying fastest.
    pub fn index(&self, multi: [usize; D]) -> usize {
        let mut idx = 0;
        for d in (0..D).rev() {
            idx = idx * self.dims[d] + multi[d];
        }
        idx
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; D] {
        let mut m = [0; D];
        for d in 0..D {
            m[d] = flat % self.dims[d];
            flat /= self.dims[d];
        }
        m
    }

    pub fn displacements(&self) -> Vec<[f64; D]> {
        self.control_points
            .iter()
            .zip(&self.reference)
            .map(|(p, r)| std::array::from_fn(|d| p[d] - r[d]))
            .collect()
    }

    pub fn max_displacement(&self) -> f64 {
        self.displacements().iter().map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Parametric domain `[t_p, t_n]` of direction `d`.
    pub fn domain(&self, d: usize) -> (f64, f64) {
        let k = &self.knots[d];
        (k[self.degrees[d]], k[self.dims[d]])
    }

    pub fn contains(&self, x: &[f64; D]) -> bool {
        (0..D).all(|d| x[d] >= self.box_min[d] && x[d] <= self.box_max[d])
    }

    pub(crate) fn tensor_basis(&self, u: &[f64; D]) -> Result<TensorBasis<D>> {
        let mut spans = [0usize; D];
        let mut vals: [Vec<f64>; D] = std::array::from_fn(|_| Vec::new());
        let mut ders: [Vec<f64>; D] = std::array::from_fn(|_| Vec::new());
        for d in 0..D {
            let p = self.degrees[d];
            spans[d] = span_of(u[d], p, &self.knots[d])?;
            let (v, dv) = basis_and_derivative(u[d], spans[d], p, &self.knots[d]);
            vals[d] = v;
            ders[d] = dv;
        }
        let count: usize = self.degrees.iter().map(|p| p + 1).product();
        let mut out = TensorBasis { indices: Vec::with_capacity(count), values: Vec::with_capacity(count), grads: Vec::with_capacity(count) };
        let mut local = [0usize; D];
        for _ in 0..count {
            let mut multi = [0usize; D];
            let mut value = 1.0;
            let mut grad = [1.0; D];
            for d in 0..D {
                multi[d] = spans[d] + local[d] - self.degrees[d];
                value *= vals[d][local[d]];
                for (g, gd) in grad.iter_mut().enumerate() {
                    *gd *= if g == d { ders[d][local[d]] } else { vals[d][local[d]] };
                }
            }
            out.indices.push(self.index(multi));
            out.values.push(value);
            out.grads.push(grad);
            for d in 0..D {
                local[d] += 1;
                if local[d] <= self.degrees[d] {
                    break;
                }
                local[d] = 0;
            }
        }
        Ok(out)
    }

    /// Rational basis `R_i(u) = N_i(u) w_i / sum_j N_j(u) w_j` for the
    /// control points with non-zero support at `u`.
    pub fn rational_basis(&self, u: &[f64; D]) -> Result<Vec<(usize, f64)>> {
        let tb = self.tensor_basis(u)?;
        let wsum: f64 = tb.indices.iter().zip(&tb.values).map(|(&i, n)| n * self.weights[i]).sum();
        Ok(tb.indices.iter().zip(&tb.values).map(|(&i, n)| (i, n * self.weights[i] / wsum)).collect())
    }

    /// Image of `u` under the displaced lattice.
    pub fn evaluate(&self, u: &[f64; D]) -> Result<[f64; D]> {
        Ok(self.map_with(&self.control_points, u)?.0)
    }

    /// Image of `u` under the reference lattice.
    pub fn evaluate_reference(&self, u: &[f64; D]) -> Result<[f64; D]> {
        Ok(self.map_with(&self.reference, u)?.0)
    }

    /// Rational map and its Jacobian `J[i][j] = dx_i / du_j`.
    pub(crate) fn map_with(&self, points: &[[f64; D]], u: &[f64; D]) -> Result<([f64; D], [[f64; D]; D])> {
        let tb = self.tensor_basis(u)?;
        let mut w = 0.0;
        let mut dw = [0.0; D];
        let mut a = [0.0; D];
        let mut da = [[0.0; D]; D];
        for k in 0..tb.indices.len() {
            let i = tb.indices[k];
            let wi = self.weights[i];
            let nw = tb.values[k] * wi;
            w += nw;
            for j in 0..D {
                dw[j] += tb.grads[k][j] * wi;
            }
            for c in 0..D {
                a[c] += nw * points[i][c];
                for j in 0..D {
                    da[c][j] += tb.grads[k][j] * wi * points[i][c];
                }
            }
        }
        let x: [f64; D] = std::array::from_fn(|c| a[c] / w);
        let jac: [[f64; D]; D] = std::array::from_fn(|c| std::array::from_fn(|j| (da[c][j] - x[c] * dw[j]) / w));
        Ok((x, jac))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = LatticeFile {
            version: LATTICE_VERSION,
            dims: self.dims.to_vec(),
            degrees: self.degrees.to_vec(),
            knots: self.knots.to_vec(),
            box_min: self.box_min.to_vec(),
            box_max: self.box_max.to_vec(),
            reference_points: self.reference.iter().map(|p| p.to_vec()).collect(),
            control_points: self.control_points.iter().map(|p| p.to_vec()).collect(),
            weights: self.weights.clone(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::format(path, e.to_string()))?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: LatticeFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if f.version != LATTICE_VERSION {
            return Err(Error::format(path, format!("unsupported lattice version {}", f.version)));
        }
        let arr = |v: &[f64], what: &str| -> Result<[f64; D]> {
            v.try_into().map_err(|_| Error::format(path, format!("{what}: expected {D} components")))
        };
        let arr_usize = |v: &[usize], what: &str| -> Result<[usize; D]> {
            v.try_into().map_err(|_| Error::format(path, format!("{what}: expected {D} entries")))
        };
        if f.knots.len() != D {
            return Err(Error::format(path, format!("knots: expected {D} vectors")));
        }
        let knots: [Vec<f64>; D] = std::array::from_fn(|d| f.knots[d].clone());
        let reference = f.reference_points.iter().map(|p| arr(p, "reference point")).collect::<Result<Vec<_>>>()?;
        let control = f.control_points.iter().map(|p| arr(p, "control point")).collect::<Result<Vec<_>>>()?;
        Self::from_parts(
            arr_usize(&f.dims, "dims")?,
            arr_usize(&f.degrees, "degrees")?,
            knots,
            reference,
            control,
            f.weights,
            arr(&f.box_min, "box_min")?,
            arr(&f.box_max, "box_max")?,
        )
        .map_err(|e| Error::format(path, e.to_string()))
    }
}

fn greville_grid<const D: usize>(
    box_min: &[f64; D],
    box_max: &[f64; D],
    dims: &[usize; D],
    degrees: &[usize; D],
    knots: &[Vec<f64>; D],
) -> Vec<[f64; D]> {
    let g: Vec<Vec<f64>> = (0..D)
        .map(|d| {
            let k = &knots[d];
            let (a, b) = (k[degrees[d]], k[dims[d]]);
            greville(k, degrees[d])
                .into_iter()
                .map(|xi| box_min[d] + (xi - a) / (b - a) * (box_max[d] - box_min[d]))
                .collect()
        })
        .collect();
    let n: usize = dims.iter().product();
    (0..n)
        .map(|mut flat| {
            std::array::from_fn(|d| {
                let i = flat % dims[d];
                flat /= dims[d];
                g[d][i]
            })
        })
        .collect()
}

/// On-disk lattice schema (JSON).
#[derive(Debug, Serialize, Deserialize)]
struct LatticeFile {
    version: u32,
    dims: Vec<usize>,
    degrees: Vec<usize>,
    knots: Vec<Vec<f64>>,
    box_min: Vec<f64>,
    box_max: Vec<f64>,
    reference_points: Vec<Vec<f64>>,
    control_points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lattice() -> FfdLattice<2> {
        FfdLattice::new([0.0, -0.5], [2.0, 1.5], [7, 5], [2, 2]).unwrap()
    }

    #[test]
    fn identity_on_box() {
        let l = lattice();
        assert!(l.is_affine());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let u = [rng.random::<f64>(), rng.random::<f64>()];
            let x = l.evaluate(&u).unwrap();
            assert!((x[0] - 2.0 * u[0]).abs() < 1e-14);
            assert!((x[1] - (-0.5 + 2.0 * u[1])).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_construction() {
        assert!(FfdLattice::new([0.0, 0.0], [1.0, 1.0], [2, 5], [2, 2]).is_err());
        assert!(FfdLattice::new([0.0, 0.0], [0.0, 1.0], [4, 4], [2, 2]).is_err());
        let l = lattice();
        let mut w = vec![1.0; 35];
        w[3] = 0.0;
        assert!(l.with_weights(w).is_err());
    }

    #[test]
    fn rational_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..35).map(|_| rng.random_range(0.3..3.0)).collect();
        let l = lattice().with_weights(w).unwrap();
        assert!(!l.is_affine());
        for _ in 0..10_000 {
            let u = [rng.random::<f64>(), rng.random::<f64>()];
            let s: f64 = l.rational_basis(&u).unwrap().iter().map(|(_, r)| r).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trivariate_identity_and_partition() {
        let l = FfdLattice::new([0.0; 3], [1.0, 2.0, 3.0], [4, 5, 3], [2, 3, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let u = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let x = l.evaluate(&u).unwrap();
            for d in 0..3 {
                assert!((x[d] - (d + 1) as f64 * u[d]).abs() < 1e-13);
            }
            let s: f64 = l.rational_basis(&u).unwrap().iter().map(|(_, r)| r).sum();
            assert!((s - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = lattice();
        let pts: Vec<[f64; 2]> = l.reference_points().iter().map(|p| [p[0] + 0.1 * rng.random::<f64>(), p[1] - 0.1 * rng.random::<f64>()]).collect();
        let w: Vec<f64> = (0..35).map(|_| rng.random_range(0.5..2.0)).collect();
        let l = l.with_control_points(pts).unwrap().with_weights(w).unwrap();
        let u = [0.37, 0.61];
        let (_, jac) = l.map_with(l.control_points(), &u).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let xp = l.evaluate(&up).unwrap();
            let xm = l.evaluate(&um).unwrap();
            for c in 0..2 {
                let fd = (xp[c] - xm[c]) / (2.0 * h);
                assert!((jac[c][j] - fd).abs() < 1e-6, "{c},{j}: {} vs {fd}", jac[c][j]);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = lattice();
        let pts: Vec<[f64; 2]> = l.reference_points().iter().map(|p| [p[0], p[1] + 0.01 * rng.random::<f64>()]).collect();
        let l = l.with_control_points(pts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lattice.json");
        l.save(&path).unwrap();
        let back = FfdLattice::<2>::load(&path).unwrap();
        assert_eq!(back, l);
        assert!(matches!(FfdLattice::<3>::load(&path), Err(Error::Format { .. })));
    }
}
