use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use super::{EnergyCriterion, PodBasis, SnapshotMatrix};
use crate::error::{Error, Result};

/// Route to the left singular vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvdMethod {
    /// Method of snapshots when rows >= 10 x columns, direct otherwise.
    #[default]
    Auto,
    /// Golub–Kahan bidiagonalisation of the full matrix.
    Direct,
    /// Eigenvectors of the Gram matrix `S^T S`.
    Snapshots,
}

impl SvdMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(SvdMethod::Auto),
            "direct" => Ok(SvdMethod::Direct),
            "snapshots" => Ok(SvdMethod::Snapshots),
            _ => Err(Error::invalid(format!("unknown svd method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PodOptions {
    pub method: SvdMethod,
    /// Singular values at or below `rank_eps * sigma_1` are dropped.
    pub rank_eps: f64,
    /// Subtract the snapshot mean before decomposing.
    pub center: bool,
}

impl Default for PodOptions {
    fn default() -> Self {
        Self { method: SvdMethod::Auto, rank_eps: 1e-12, center: false }
    }
}

const MAX_SWEEPS: usize = 1000;

fn stats(s: &DMatrix<f64>) -> String {
    let max = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    format!("{}x{} matrix, max |entry| {:.3e}, Frobenius norm {:.3e}", s.nrows(), s.ncols(), max, s.norm())
}

/// Untruncated POD of a snapshot matrix: every mode up to numerical rank.
pub fn compute_pod(s: &SnapshotMatrix, opts: &PodOptions) -> Result<PodBasis> {
    if !(opts.rank_eps >= 0.0) {
        return Err(Error::invalid("rank tolerance must be non-negative"));
    }
    let mut data = s.data().clone();
    let mean = if opts.center {
        let m = data.column_mean();
        for mut c in data.column_iter_mut() {
            c -= &m;
        }
        Some(m)
    } else {
        None
    };
    let method = match opts.method {
        SvdMethod::Auto if data.nrows() >= 10 * data.ncols() => SvdMethod::Snapshots,
        SvdMethod::Auto => SvdMethod::Direct,
        m => m,
    };
    let (modes, sigma) = match method {
        SvdMethod::Snapshots => method_of_snapshots(&data, opts.rank_eps)?,
        _ => direct(&data, opts.rank_eps)?,
    };
    log::debug!(
        "pod {}: {:?} on {}x{}, numerical rank {}",
        s.variable(),
        method,
        data.nrows(),
        data.ncols(),
        sigma.len()
    );
    Ok(PodBasis {
        variable: s.variable(),
        layout: s.layout().clone(),
        mesh_id: s.mesh_id(),
        modes,
        singular_values: sigma,
        energy_delta: 1.0,
        criterion: EnergyCriterion::Sigma,
        mean,
    })
}

fn numerical_rank(sigma: &[f64], eps: f64, s: &DMatrix<f64>) -> Result<usize> {
    let s1 = sigma.first().copied().unwrap_or(0.0);
    if !(s1 > 0.0) || !s1.is_finite() {
        return Err(Error::Numeric(format!("snapshot matrix has no positive singular value ({})", stats(s))));
    }
    Ok(sigma.iter().take_while(|&&v| v > eps * s1).count())
}

/// Bidiagonalisation SVD for the right vectors; the left vectors are then
/// rebuilt from them, since the directly accumulated ones lose accuracy on
/// exactly rank-deficient input.
fn direct(s: &DMatrix<f64>, eps: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let svd = SVD::try_new(s.clone(), false, true, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::Numeric(format!("SVD did not converge ({})", stats(s))))?;
    let v_t = svd.v_t.expect("right vectors requested");
    left_vectors(s, v_t.transpose(), eps)
}

/// Eigenvectors of the Gram matrix `S^T S` as right vectors.
fn method_of_snapshots(s: &DMatrix<f64>, eps: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let gram = s.tr_mul(s);
    let eig = SymmetricEigen::try_new(gram, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::Numeric(format!("Gram eigendecomposition did not converge ({})", stats(s))))?;
    left_vectors(s, eig.eigenvectors, eps)
}

/// `sigma_i = ||S v_i||` and `w_i = S v_i / sigma_i`, re-orthonormalised by
/// QR. Using the norms of `S v_i` instead of `sqrt(lambda_i)` keeps small
/// singular values accurate to round-off relative to `sigma_1`.
fn left_vectors(s: &DMatrix<f64>, v: DMatrix<f64>, eps: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let y = s * v;
    let mut pairs: Vec<(f64, DVector<f64>)> = y.column_iter().map(|c| (c.norm(), c.into_owned())).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let sigma: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let r = numerical_rank(&sigma, eps, s)?;
    let w = DMatrix::from_columns(&pairs[..r].iter().map(|(n, c)| c / *n).collect::<Vec<_>>());
    let mut q = w.clone().qr().q();
    // Keep the orientation of the unrefined vectors.
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if col.dot(&w.column(j)) < 0.0 {
            col.neg_mut();
        }
    }
    Ok((q, sigma[..r].to_vec()))
}
