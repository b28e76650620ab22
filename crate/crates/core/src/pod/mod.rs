//! Proper orthogonal decomposition of snapshot matrices: assembly, SVD,
//! energy-based truncation, projection and reconstruction.

mod file;
mod svd;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{check_finite, Field, FieldKind, WssField};
use crate::fom::Snapshot;

pub use file::{read_basis, write_basis, write_spectrum_csv};
pub use svd::{compute_pod, PodOptions, SvdMethod};

/// Physical quantity compressed by one basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    Pressure,
    Velocity,
    Wss,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::Pressure, Variable::Velocity, Variable::Wss];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Pressure => "pressure",
            Variable::Velocity => "velocity",
            Variable::Wss => "wss",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pressure" | "p" => Ok(Variable::Pressure),
            "velocity" | "u" => Ok(Variable::Velocity),
            "wss" => Ok(Variable::Wss),
            _ => Err(Error::invalid(format!("unknown variable '{s}'"))),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }

    /// Column of this variable taken from a solver snapshot.
    pub fn values(self, s: &Snapshot) -> &[f64] {
        match self {
            Variable::Pressure => s.pressure.values(),
            Variable::Velocity => s.velocity.values(),
            Variable::Wss => &s.wss.values,
        }
    }

    pub fn layout(self, s: &Snapshot) -> Layout {
        match self {
            Variable::Pressure => Layout::Cells(FieldKind::Scalar),
            Variable::Velocity => Layout::Cells(FieldKind::Vector2),
            Variable::Wss => Layout::Wall(s.wss.face_ids.clone()),
        }
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How a column maps back onto the mesh.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Per-cell values, vector kinds interleaved.
    Cells(FieldKind),
    /// Interleaved traction vectors on the listed wall faces.
    Wall(Vec<usize>),
}

/// Column-stacked snapshots of one variable on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    variable: Variable,
    layout: Layout,
    mesh_id: u64,
    data: DMatrix<f64>,
    times: Vec<f64>,
}

impl SnapshotMatrix {
    /// Checked constructor: at least two columns of equal length, strictly
    /// increasing times and finite entries.
    pub fn new(variable: Variable, layout: Layout, mesh_id: u64, columns: &[&[f64]], times: Vec<f64>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::invalid("a snapshot matrix needs at least two columns"));
        }
        if times.len() != columns.len() {
            return Err(Error::DimensionMismatch { expected: columns.len(), found: times.len() });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("snapshot times must be strictly increasing"));
        }
        let rows = columns[0].len();
        if rows == 0 {
            return Err(Error::invalid("empty snapshot column"));
        }
        let mut data = DMatrix::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::DimensionMismatch { expected: rows, found: c.len() });
            }
            check_finite(c).map_err(|_| {
                let index = c.iter().position(|v| !v.is_finite()).unwrap_or(0);
                Error::NonFinite { index: j * rows + index }
            })?;
            data.set_column(j, &DVector::from_column_slice(c));
        }
        Ok(Self { variable, layout, mesh_id, data, times })
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.data.ncols()
    }

    /// Keeps the listed columns (in the given order, which must keep time increasing).
    pub fn select(&self, columns: &[usize]) -> Result<Self> {
        let cols: Vec<&[f64]> = columns
            .iter()
            .map(|&j| {
                if j >= self.n_snapshots() {
                    return Err(Error::invalid(format!("column {j} out of range")));
                }
                Ok(&self.data.as_slice()[j * self.n_rows()..(j + 1) * self.n_rows()])
            })
            .collect::<Result<_>>()?;
        let times = columns.iter().map(|&j| self.times[j]).collect();
        Self::new(self.variable, self.layout.clone(), self.mesh_id, &cols, times)
    }
}

/// Stacks one variable of a snapshot series into a matrix.
pub fn assemble(snapshots: &[Snapshot], variable: Variable) -> Result<SnapshotMatrix> {
    let first = snapshots.first().ok_or_else(|| Error::invalid("no snapshots"))?;
    let mesh_id = first.pressure.mesh_id();
    let layout = variable.layout(first);
    for s in snapshots {
        if s.pressure.mesh_id() != mesh_id || s.velocity.mesh_id() != mesh_id || s.wss.mesh_id != mesh_id {
            return Err(Error::MeshMismatch(format!("snapshot {} lives on a different mesh", s.index)));
        }
        if variable.layout(s) != layout {
            return Err(Error::MeshMismatch(format!("snapshot {} has a different {} layout", s.index, variable)));
        }
    }
    let cols: Vec<&[f64]> = snapshots.iter().map(|s| variable.values(s)).collect();
    SnapshotMatrix::new(variable, layout, mesh_id, &cols, snapshots.iter().map(|s| s.time).collect())
}

/// Truncation criterion for the retained energy fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyCriterion {
    /// `sum_{i<=L} sigma_i / sum_i sigma_i`.
    #[default]
    Sigma,
    /// `sum_{i<=L} sigma_i^2 / sum_i sigma_i^2`.
    SigmaSquared,
}

impl EnergyCriterion {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(EnergyCriterion::Sigma),
            "sigma2" | "sigma_squared" => Ok(EnergyCriterion::SigmaSquared),
            _ => Err(Error::invalid(format!("unknown energy criterion '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnergyCriterion::Sigma => "sigma",
            EnergyCriterion::SigmaSquared => "sigma2",
        }
    }
}

/// Cumulative energy fractions `e_L`, L = 1..R.
pub fn cumulative_energy(sigma: &[f64], criterion: EnergyCriterion) -> Vec<f64> {
    let e = |s: f64| match criterion {
        EnergyCriterion::Sigma => s,
        EnergyCriterion::SigmaSquared => s * s,
    };
    let mut acc = 0.0;
    let partial: Vec<f64> = sigma
        .iter()
        .map(|&s| {
            acc += e(s);
            acc
        })
        .collect();
    // The last partial sum is the total, so the last fraction is exactly 1.
    partial.iter().map(|p| p / acc).collect()
}

/// Smallest `L` whose retained energy fraction reaches `delta`.
pub fn select_rank(sigma: &[f64], delta: f64, criterion: EnergyCriterion) -> Result<usize> {
    if sigma.is_empty() {
        return Err(Error::invalid("empty singular value spectrum"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("energy threshold must lie in (0, 1], got {delta}")));
    }
    let frac = cumulative_energy(sigma, criterion);
    Ok(frac.iter().position(|&f| f >= delta).unwrap_or(sigma.len() - 1) + 1)
}

/// Orthonormal modes of one variable with the full spectrum they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub(crate) variable: Variable,
    pub(crate) layout: Layout,
    pub(crate) mesh_id: u64,
    pub(crate) modes: DMatrix<f64>,
    pub(crate) singular_values: Vec<f64>,
    pub(crate) energy_delta: f64,
    pub(crate) criterion: EnergyCriterion,
    pub(crate) mean: Option<DVector<f64>>,
}

impl PodBasis {
    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    /// `n_rows x L` matrix of orthonormal modes.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// Full numerical-rank spectrum, independent of truncation.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.modes.nrows()
    }

    pub fn energy_delta(&self) -> f64 {
        self.energy_delta
    }

    pub fn criterion(&self) -> EnergyCriterion {
        self.criterion
    }

    /// Snapshot mean removed before projection, when centring was requested.
    pub fn mean(&self) -> Option<&DVector<f64>> {
        self.mean.as_ref()
    }

    /// First `L(delta)` modes.
    pub fn truncate(&self, delta: f64, criterion: EnergyCriterion) -> Result<PodBasis> {
        let l = select_rank(&self.singular_values, delta, criterion)?.min(self.rank());
        self.truncate_to(l).map(|mut b| {
            b.energy_delta = delta;
            b.criterion = criterion;
            b
        })
    }

    /// First `l` modes.
    pub fn truncate_to(&self, l: usize) -> Result<PodBasis> {
        if l == 0 || l > self.rank() {
            return Err(Error::invalid(format!("cannot keep {l} of {} modes", self.rank())));
        }
        Ok(PodBasis { modes: self.modes.columns(0, l).into_owned(), ..self.clone() })
    }

    fn check_rows(&self, n: usize) -> Result<()> {
        if n != self.n_rows() {
            return Err(Error::DimensionMismatch { expected: self.n_rows(), found: n });
        }
        Ok(())
    }

    /// Modal coefficients `V^T (x - mean)`.
    pub fn project(&self, snapshot: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(snapshot.len())?;
        let mut x = DVector::from_column_slice(snapshot);
        if let Some(m) = &self.mean {
            x -= m;
        }
        Ok((self.modes.tr_mul(&x)).as_slice().to_vec())
    }

    /// Coefficients of every column, `L x N`.
    pub fn project_matrix(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(s.nrows())?;
        Ok(match &self.mean {
            None => self.modes.tr_mul(s),
            Some(m) => {
                let mut c = s.clone();
                for mut col in c.column_iter_mut() {
                    col -= m;
                }
                self.modes.tr_mul(&c)
            }
        })
    }

    /// `mean + V a`.
    pub fn reconstruct(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        if coefficients.len() != self.rank() {
            return Err(Error::DimensionMismatch { expected: self.rank(), found: coefficients.len() });
        }
        let mut x = &self.modes * DVector::from_column_slice(coefficients);
        if let Some(m) = &self.mean {
            x += m;
        }
        Ok(x.as_slice().to_vec())
    }

    /// Reconstructed values wrapped as a cell field.
    pub fn to_field(&self, values: Vec<f64>, time: f64) -> Result<Field> {
        match self.layout {
            Layout::Cells(kind) => {
                let n = values.len() / kind.components();
                Field::from_parts(kind, values, self.mesh_id, time, n * kind.components())
            }
            Layout::Wall(_) => Err(Error::invalid(format!("{} basis does not hold a cell field", self.variable))),
        }
    }

    /// Reconstructed values wrapped as a wall-shear field.
    pub fn to_wss(&self, values: Vec<f64>, time: f64) -> Result<WssField> {
        match &self.layout {
            Layout::Wall(ids) => {
                if values.len() != 2 * ids.len() {
                    return Err(Error::DimensionMismatch { expected: 2 * ids.len(), found: values.len() });
                }
                check_finite(&values)?;
                Ok(WssField { face_ids: ids.clone(), values, mesh_id: self.mesh_id, time })
            }
            Layout::Cells(_) => Err(Error::invalid(format!("{} basis does not hold wall values", self.variable))),
        }
    }

    /// `||S - mean - V V^T (S - mean)||_F^2 / ||S - mean||_F^2`.
    pub fn relative_projection_error(&self, s: &DMatrix<f64>) -> Result<f64> {
        let a = self.project_matrix(s)?;
        let mut centred = s.clone();
        if let Some(m) = &self.mean {
            for mut col in centred.column_iter_mut() {
                col -= m;
            }
        }
        let r = &centred - &self.modes * a;
        let total = centred.norm_squared();
        if total == 0.0 {
            return Err(Error::DegenerateReference);
        }
        Ok(r.norm_squared() / total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{run_cycles, SolverConfig, WaveformBc};
    use crate::mesh::build_channel_mesh;

    #[test]
    fn rank_selection_examples() {
        let s = [3.0, 2.0, 1.0];
        assert_eq!(select_rank(&s, 0.8, EnergyCriterion::Sigma).unwrap(), 2);
        assert_eq!(select_rank(&s, 1.0, EnergyCriterion::Sigma).unwrap(), 3);
        assert_eq!(select_rank(&[5.0], 0.3, EnergyCriterion::Sigma).unwrap(), 1);
        assert_eq!(select_rank(&[5.0], 1.0, EnergyCriterion::SigmaSquared).unwrap(), 1);
        // sigma^2: 9/14 = 0.643, 13/14 = 0.929.
        assert_eq!(select_rank(&s, 0.8, EnergyCriterion::SigmaSquared).unwrap(), 2);
        assert_eq!(select_rank(&s, 0.6, EnergyCriterion::SigmaSquared).unwrap(), 1);
        assert_eq!(select_rank(&s, 0.6, EnergyCriterion::Sigma).unwrap(), 2);
        assert!(select_rank(&[], 0.9, EnergyCriterion::Sigma).is_err());
        assert!(select_rank(&s, 0.0, EnergyCriterion::Sigma).is_err());
        assert!(select_rank(&s, 1.1, EnergyCriterion::Sigma).is_err());
    }

    #[test]
    fn matrix_validation() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let ok = SnapshotMatrix::new(Variable::Pressure, Layout::Cells(FieldKind::Scalar), 1, &[&a, &b], vec![0.1, 0.2]).unwrap();
        assert_eq!(ok.data()[(1, 1)], 4.0);
        let one = SnapshotMatrix::new(Variable::Pressure, Layout::Cells(FieldKind::Scalar), 1, &[&a], vec![0.1]);
        assert!(one.is_err());
        let unordered = SnapshotMatrix::new(Variable::Pressure, Layout::Cells(FieldKind::Scalar), 1, &[&a, &b], vec![0.2, 0.2]);
        assert!(unordered.is_err());
        let bad = [1.0, f64::NAN];
        let nan = SnapshotMatrix::new(Variable::Pressure, Layout::Cells(FieldKind::Scalar), 1, &[&a, &bad], vec![0.1, 0.2]);
        assert!(matches!(nan, Err(Error::NonFinite { index: 3 })));
        let short = [1.0];
        assert!(SnapshotMatrix::new(Variable::Pressure, Layout::Cells(FieldKind::Scalar), 1, &[&a, &short], vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn assemble_from_solver() {
        let mesh = build_channel_mesh(0.024, 0.004, 12, 6).unwrap();
        let cfg = SolverConfig {
            period: 0.08,
            n_cycles: 2,
            waveform: WaveformBc::default_pulse(0.08, 7.0e-5, 1.0).unwrap(),
            ..SolverConfig::desk()
        };
        let snaps = run_cycles(&mesh, &cfg, 4).unwrap();
        let u = assemble(&snaps, Variable::Velocity).unwrap();
        assert_eq!(u.n_rows(), 2 * mesh.n_cells());
        assert_eq!(u.n_snapshots(), 4);
        let w = assemble(&snaps, Variable::Wss).unwrap();
        assert_eq!(w.n_rows(), 2 * 2 * mesh.nx());
        let p = assemble(&snaps, Variable::Pressure).unwrap();
        for (k, t) in p.times().iter().enumerate() {
            assert!((t - 0.02 * (k + 1) as f64).abs() < 1e-12);
        }
        let same = assemble(&[snaps[0].clone(), snaps[0].clone(), snaps[0].clone()], Variable::Pressure);
        // Equal times are rejected; equal columns on their own are fine.
        assert!(same.is_err());
        let mut other = snaps[1].clone();
        other.pressure = Field::zeros(&build_channel_mesh(0.024, 0.004, 6, 12).unwrap(), FieldKind::Scalar, other.time);
        assert!(matches!(assemble(&[snaps[0].clone(), other], Variable::Pressure), Err(Error::MeshMismatch(_))));
    }

    #[test]
    fn identical_columns() {
        let c = [1.0, -2.0, 0.5];
        let s = SnapshotMatrix::new(Variable::Pressure, Layout::Cells(FieldKind::Scalar), 0, &[&c, &c, &c], vec![1.0, 2.0, 3.0]).unwrap();
        for j in 0..3 {
            assert_eq!(s.data().column(j).as_slice(), &c);
        }
    }
}
