//! B-spline basis functions on clamped knot vectors.

use crate::error::{Error, Result};

/// Clamped uniform knot vector for `n` control points of degree `p` on [0, 1].
pub fn clamped_uniform_knots(n: usize, p: usize) -> Result<Vec<f64>> {
    if n < p + 1 {
        return Err(Error::invalid(format!("{n} control points cannot carry degree {p}")));
    }
    let inner = n - p;
    let mut k = vec![0.0; p + 1];
    for i in 1..inner {
        k.push(i as f64 / inner as f64);
    }
    k.extend(std::iter::repeat_n(1.0, p + 1));
    Ok(k)
}

/// Greville abscissae `(t_{i+1} + ... + t_{i+p}) / p`; degree 0 uses span midpoints.
pub fn greville(knots: &[f64], p: usize) -> Vec<f64> {
    let n = knots.len() - p - 1;
    (0..n)
        .map(|i| {
            if p == 0 {
                0.5 * (knots[i] + knots[i + 1])
            } else {
                knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
            }
        })
        .collect()
}

pub(crate) fn check_knots(knots: &[f64], n: usize, p: usize) -> Result<()> {
    if knots.len() != n + p + 1 {
        return Err(Error::invalid(format!("expected {} knots, got {}", n + p + 1, knots.len())));
    }
    if knots.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("knot vector must be non-decreasing"));
    }
    let (a, b) = (knots[0], knots[knots.len() - 1]);
    if knots[..=p].iter().any(|&k| k != a) || knots[knots.len() - p - 1..].iter().any(|&k| k != b) {
        return Err(Error::invalid("knot vector must be clamped (end multiplicity degree + 1)"));
    }
    if !(b > a) {
        return Err(Error::invalid("knot vector spans an empty interval"));
    }
    Ok(())
}

/// Index `s` of the knot span containing `u`, with `t_s <= u < t_{s+1}`;
/// the right end belongs to the last non-empty span.
pub fn find_span(u: f64, p: usize, knots: &[f64]) -> Result<usize> {
    let n = knots.len() - p - 1;
    let (lo, hi) = (knots[p], knots[n]);
    if !(u >= lo && u <= hi) {
        return Err(Error::OutOfDomain { value: u, lo, hi });
    }
    if u == hi {
        let mut s = n - 1;
        while knots[s] == knots[s + 1] {
            s -= 1;
        }
        return Ok(s);
    }
    // Last index with t_s <= u.
    let s = knots.partition_point(|&t| t <= u) - 1;
    Ok(s.clamp(p, n - 1))
}

/// Non-zero basis values `N_{s-p..=s, p}(u)` and the span index `s`
/// (triangular Cox–de Boor scheme).
pub fn bspline_basis(u: f64, p: usize, knots: &[f64]) -> Result<(usize, Vec<f64>)> {
    let s = find_span(u, p, knots)?;
    Ok((s, basis_at_span(u, s, p, knots)))
}

pub(crate) fn basis_at_span(u: f64, s: usize, p: usize, knots: &[f64]) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[s + 1 - j];
        right[j] = knots[s + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Basis values and first derivatives at `u` on span `s`.
pub(crate) fn basis_and_derivative(u: f64, s: usize, p: usize, knots: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let vals = basis_at_span(u, s, p, knots);
    if p == 0 {
        return (vals, vec![0.0]);
    }
    // N'_{i,p} = p (N_{i,p-1} / (t_{i+p} - t_i) - N_{i+1,p-1} / (t_{i+p+1} - t_{i+1})).
    let lower = basis_at_span(u, s, p - 1, knots);
    let mut d = vec![0.0; p + 1];
    for k in 0..=p {
        let i = s + k - p;
        let a = if k >= 1 { lower[k - 1] } else { 0.0 };
        let b = if k < p { lower[k] } else { 0.0 };
        let da = knots[i + p] - knots[i];
        let db = knots[i + p + 1] - knots[i + 1];
        let ta = if da > 0.0 { a / da } else { 0.0 };
        let tb = if db > 0.0 { b / db } else { 0.0 };
        d[k] = p as f64 * (ta - tb);
    }
    (vals, d)
}
