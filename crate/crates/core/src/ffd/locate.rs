//! Inverse of the reference lattice map.
//!
//! An affine reference lattice is inverted in closed form. Otherwise the
//! search visits the knot-span cells whose control-point bounding box holds
//! the point (a NURBS patch with positive weights lies in the convex hull of
//! its control points), and runs Newton's method from the centres of a
//! recursively subdivided cell (quadtree in 2D, octree in 3D) until one
//! start converges.

use rayon::prelude::*;

use super::FfdLattice;

const MAX_DEPTH: usize = 4;
const NEWTON_ITERS: usize = 50;

/// Parametric coordinates of each point in the reference lattice, or
/// `None` for points outside the embedding box.
pub fn locate_parametric<const D: usize>(lattice: &FfdLattice<D>, points: &[[f64; D]]) -> Vec<Option<[f64; D]>> {
    points.par_iter().map(|x| locate_one(lattice, x)).collect()
}

pub(crate) fn locate_one<const D: usize>(lattice: &FfdLattice<D>, x: &[f64; D]) -> Option<[f64; D]> {
    if !lattice.contains(x) {
        return None;
    }
    if lattice.affine {
        return Some(std::array::from_fn(|d| {
            let (a, b) = lattice.domain(d);
            let s = (x[d] - lattice.box_min[d]) / (lattice.box_max[d] - lattice.box_min[d]);
            (a + s.clamp(0.0, 1.0) * (b - a)).clamp(a, b)
        }));
    }
    search(lattice, x)
}

fn search<const D: usize>(lattice: &FfdLattice<D>, x: &[f64; D]) -> Option<[f64; D]> {
    let scale = (0..D).map(|d| lattice.box_max[d] - lattice.box_min[d]).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    // Distinct knot intervals per direction.
    let spans: Vec<Vec<(usize, f64, f64)>> = (0..D)
        .map(|d| {
            let k = lattice.knots(d);
            let p = lattice.degrees[d];
            (p..lattice.dims[d]).filter(|&s| k[s + 1] > k[s]).map(|s| (s, k[s], k[s + 1])).collect()
        })
        .collect();
    let n_cells: usize = spans.iter().map(Vec::len).product();
    let mut best: Option<([f64; D], f64)> = None;
    for flat in 0..n_cells {
        let mut rem = flat;
        let mut lo = [0.0; D];
        let mut hi = [0.0; D];
        let mut span = [0usize; D];
        for d in 0..D {
            let (s, a, b) = spans[d][rem % spans[d].len()];
            rem /= spans[d].len();
            span[d] = s;
            lo[d] = a;
            hi[d] = b;
        }
        if !hull_contains(lattice, &span, x, tol) {
            continue;
        }
        if let Some((u, r)) = subdivide(lattice, x, lo, hi, 0, tol) {
            if r <= tol {
                return Some(u);
            }
            if best.is_none_or(|(_, br)| r < br) {
                best = Some((u, r));
            }
        }
    }
    best.filter(|&(_, r)| r <= 1e-10 * scale).map(|(u, _)| u)
}

fn hull_contains<const D: usize>(lattice: &FfdLattice<D>, span: &[usize; D], x: &[f64; D], tol: f64) -> bool {
    let count: usize = lattice.degrees.iter().map(|p| p + 1).product();
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for mut k in 0..count {
        let multi: [usize; D] = std::array::from_fn(|d| {
            let l = k % (lattice.degrees[d] + 1);
            k /= lattice.degrees[d] + 1;
            span[d] - lattice.degrees[d] + l
        });
        let p = lattice.reference[lattice.index(multi)];
        for d in 0..D {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (0..D).all(|d| x[d] >= lo[d] - tol && x[d] <= hi[d] + tol)
}

/// Newton from the cell centre; on failure recurse into the 2^D children.
fn subdivide<const D: usize>(
    lattice: &FfdLattice<D>,
    x: &[f64; D],
    lo: [f64; D],
    hi: [f64; D],
    depth: usize,
    tol: f64,
) -> Option<([f64; D], f64)> {
    let centre: [f64; D] = std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]));
    let attempt = newton(lattice, x, centre);
    if let Some((_, r)) = attempt {
        if r <= tol || depth == MAX_DEPTH {
            return attempt;
        }
    } else if depth == MAX_DEPTH {
        return None;
    }
    let mut best = attempt;
    for child in 0..(1usize << D) {
        let mut clo = lo;
        let mut chi = hi;
        for d in 0..D {
            if child >> d & 1 == 0 {
                chi[d] = centre[d];
            } else {
                clo[d] = centre[d];
            }
        }
        if let Some((u, r)) = subdivide(lattice, x, clo, chi, depth + 1, tol) {
            if r <= tol {
                return Some((u, r));
            }
            if best.is_none_or(|(_, br)| r < br) {
                best = Some((u, r));
            }
        }
    }
    best
}

fn newton<const D: usize>(lattice: &FfdLattice<D>, x: &[f64; D], start: [f64; D]) -> Option<([f64; D], f64)> {
    let mut u = start;
    let mut res = f64::INFINITY;
    for _ in 0..NEWTON_ITERS {
        let (y, jac) = lattice.map_with(&lattice.reference, &u).ok()?;
        let r: [f64; D] = std::array::from_fn(|d| x[d] - y[d]);
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res == 0.0 {
            break;
        }
        let step = solve_small(jac, r)?;
        let mut moved = 0.0f64;
        for d in 0..D {
            let (a, b) = lattice.domain(d);
            let next = (u[d] + step[d]).clamp(a, b);
            moved = moved.max((next - u[d]).abs());
            u[d] = next;
        }
        if moved < 1e-16 {
            let (y, _) = lattice.map_with(&lattice.reference, &u).ok()?;
            res = (0..D).map(|d| (x[d] - y[d]).powi(2)).sum::<f64>().sqrt();
            break;
        }
    }
    let (y, _) = lattice.map_with(&lattice.reference, &u).ok()?;
    res = res.min((0..D).map(|d| (x[d] - y[d]).powi(2)).sum::<f64>().sqrt());
    res.is_finite().then_some((u, res))
}

/// Gaussian elimination with partial pivoting for a small dense system.
fn solve_small<const D: usize>(mut a: [[f64; D]; D], mut b: [f64; D]) -> Option<[f64; D]> {
    for col in 0..D {
        let piv = (col..D).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..D {
            let f = a[row][col] / a[col][col];
            for k in col..D {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; D];
    for row in (0..D).rev() {
        let s: f64 = (row + 1..D).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lattice() -> FfdLattice<2> {
        FfdLattice::new([1.0, -0.5], [3.0, 1.5], [7, 5], [2, 2]).unwrap()
    }

    fn dist<const D: usize>(a: [f64; D], b: [f64; D]) -> f64 {
        (0..D).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn corner_and_centre() {
        let l = lattice();
        let u = locate_parametric(&l, &[[1.0, -0.5], [2.0, 0.5], [3.0, 1.5]]);
        assert_eq!(u[0], Some([0.0, 0.0]));
        assert_eq!(u[1], Some([0.5, 0.5]));
        assert_eq!(u[2], Some([1.0, 1.0]));
    }

    #[test]
    fn outside_is_flagged() {
        let l = lattice();
        let u = locate_parametric(&l, &[[0.99, 0.0], [2.0, 1.5 + 1e-12]]);
        assert_eq!(u, vec![None, None]);
    }

    #[test]
    fn affine_round_trip() {
        let l = lattice();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 2]> = (0..1000).map(|_| [rng.random_range(1.0..3.0), rng.random_range(-0.5..1.5)]).collect();
        for (x, u) in pts.iter().zip(locate_parametric(&l, &pts)) {
            let y = l.evaluate_reference(&u.unwrap()).unwrap();
            assert!(dist(*x, y) <= 1e-10);
        }
    }

    #[test]
    fn rational_round_trip_uses_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..35).map(|_| rng.random_range(0.5..2.0)).collect();
        let l = lattice().with_weights(w).unwrap();
        assert!(!l.is_affine());
        // Sample through the forward map so every point lies in its image.
        for _ in 0..1000 {
            let u0 = [rng.random::<f64>(), rng.random::<f64>()];
            let x = l.evaluate_reference(&u0).unwrap();
            let u = locate_one(&l, &x).expect("point inside");
            let y = l.evaluate_reference(&u).unwrap();
            assert!(dist(x, y) <= 1e-10, "{x:?} -> {y:?}");
        }
    }

    #[test]
    fn trivariate_search() {
        let base = FfdLattice::new([0.0; 3], [1.0; 3], [4, 4, 4], [2, 2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(0.7..1.5)).collect();
        let l = base.with_weights(w).unwrap();
        for _ in 0..100 {
            let u0 = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            let x = l.evaluate_reference(&u0).unwrap();
            let u = locate_one(&l, &x).unwrap();
            assert!(dist(x, l.evaluate_reference(&u).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn small_solver() {
        let x = solve_small([[0.0, 2.0], [3.0, 1.0]], [4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(solve_small([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]).is_none());
    }
}
