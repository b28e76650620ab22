use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::offline::{build_rom, full_basis, FomRun, TrainedRom};
use super::online::{online_evaluate, RomArtifacts, VariableRom};
use super::OutDir;
use crate::ann::{write_loss_csv, write_model};
use crate::error::{Error, Result};
use crate::field::weighted_relative_error;
use crate::fom::{RunStats, Snapshot};
use crate::io::write_csv;
use crate::mesh::StructuredMesh;
use crate::pod::{write_basis, Layout, PodBasis, Variable};

/// Relative L² error of a reduced model over the reference times.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub variable: Variable,
    pub rank: usize,
    pub times: Vec<f64>,
    /// `||rom(t) - fom(t)|| / ||fom(t)||`.
    pub errors: Vec<f64>,
    /// Same norm for the orthogonal projection of `fom(t)` onto the basis.
    pub projection_errors: Vec<f64>,
    /// Whether the network saw no snapshot at this time during training.
    pub held_out: Vec<bool>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl ErrorCurve {
    pub fn mean_error(&self) -> f64 {
        mean(self.errors.iter().copied())
    }

    pub fn mean_projection_error(&self) -> f64 {
        mean(self.projection_errors.iter().copied())
    }

    fn held_out_errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors.iter().zip(&self.held_out).filter(|(_, h)| **h).map(|(e, _)| *e)
    }

    pub fn held_out_mean(&self) -> f64 {
        mean(self.held_out_errors())
    }

    pub fn held_out_max(&self) -> f64 {
        self.held_out_errors().fold(f64::NAN, f64::max)
    }
}

/// Quadrature weights and component count matching a basis layout.
fn norm_weights(mesh: &StructuredMesh, layout: &Layout) -> (Vec<f64>, usize) {
    match layout {
        Layout::Cells(kind) => (mesh.cell_volumes().to_vec(), kind.components()),
        Layout::Wall(ids) => (ids.iter().map(|&f| mesh.face(f).area[0].hypot(mesh.face(f).area[1])).collect(), 2),
    }
}

/// Errors of `rom` against every reference snapshot. Times within `1e-9 T`
/// of a training time count as seen.
pub fn evaluate_errors(rom: &VariableRom, mesh: &StructuredMesh, reference: &[Snapshot], train_times: &[f64]) -> Result<ErrorCurve> {
    let v = rom.variable();
    if rom.basis.mesh_id() != mesh.checksum() {
        return Err(Error::MeshMismatch(format!("{v} basis does not belong to the evaluation mesh")));
    }
    let (w, comps) = norm_weights(mesh, rom.basis.layout());
    let times: Vec<f64> = reference.iter().map(|s| s.time).collect();
    let scale = times.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(f64::MIN_POSITIVE);
    let predicted = rom.model.predict(&times)?;
    let mut curve = ErrorCurve {
        variable: v,
        rank: rom.basis.rank(),
        times: times.clone(),
        errors: Vec::with_capacity(times.len()),
        projection_errors: Vec::with_capacity(times.len()),
        held_out: times.iter().map(|t| !train_times.iter().any(|s| (s - t).abs() <= 1e-9 * scale)).collect(),
    };
    for (k, s) in reference.iter().enumerate() {
        let truth = v.values(s);
        let approx = rom.basis.reconstruct(predicted.column(k).as_slice())?;
        let projected = rom.basis.reconstruct(&rom.basis.project(truth)?)?;
        curve.errors.push(weighted_relative_error(&approx, truth, &w, comps)?);
        curve.projection_errors.push(weighted_relative_error(&projected, truth, &w, comps)?);
    }
    Ok(curve)
}

/// Euclidean `(||x - rom||, ||x - V V^T x||) / ||x||` per snapshot. The first
/// can never fall below the second since the ROM output lies in `span(V)`.
pub fn error_decomposition(rom: &VariableRom, snapshots: &[Snapshot]) -> Result<Vec<(f64, f64)>> {
    let v = rom.variable();
    snapshots
        .iter()
        .map(|s| {
            let x = v.values(s);
            let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::DegenerateReference);
            }
            let dist = |y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm;
            let approx = rom.evaluate(s.time)?;
            let projected = rom.basis.reconstruct(&rom.basis.project(x)?)?;
            Ok((dist(&approx), dist(&projected)))
        })
        .collect()
}

/// Trained models shared between studies, keyed by snapshot count, variable
/// and rank; networks with the same data and width are trained once.
#[derive(Default)]
pub struct RomCache {
    bases: HashMap<(usize, Variable), PodBasis>,
    roms: HashMap<(usize, Variable, usize), TrainedRom>,
}

impl RomCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_trained(&self) -> usize {
        self.roms.len()
    }
}

/// One reduced model inside a study.
#[derive(Debug, Clone)]
struct Job {
    n: usize,
    delta: f64,
    variable: Variable,
    rank: usize,
}

fn prepare(cfg: &ExperimentConfig, fom: &FomRun, wanted: &[(usize, f64)], cache: &mut RomCache) -> Result<Vec<Job>> {
    let period = cfg.solver.period;
    let mut subsets: HashMap<usize, Vec<Snapshot>> = HashMap::new();
    let mut jobs = Vec::new();
    for &(n, delta) in wanted {
        if let Entry::Vacant(e) = subsets.entry(n) {
            e.insert(fom.subsample(n, period)?);
        }
        for v in Variable::ALL {
            if let Entry::Vacant(e) = cache.bases.entry((n, v)) {
                e.insert(full_basis(cfg, &subsets[&n], v)?);
            }
            let rank = cache.bases[&(n, v)].truncate(delta, cfg.pod.criterion)?.rank();
            jobs.push(Job { n, delta, variable: v, rank });
        }
    }
    let mut todo: Vec<(usize, Variable, usize)> =
        jobs.iter().map(|j| (j.n, j.variable, j.rank)).filter(|k| !cache.roms.contains_key(k)).collect();
    todo.sort_unstable();
    todo.dedup();
    log::info!("training {} networks", todo.len());
    let trained = todo
        .par_iter()
        .map(|&(n, v, l)| build_rom(cfg, &subsets[&n], cache.bases[&(n, v)].truncate_to(l)?).map(|t| ((n, v, l), t)))
        .collect::<Result<Vec<_>>>()?;
    cache.roms.extend(trained);
    Ok(jobs)
}

/// Writes one job's basis, network and loss history into its own subtree.
fn write_run(cfg: &ExperimentConfig, cache: &RomCache, job: &Job, out: &OutDir) -> Result<()> {
    out.create()?;
    let v = job.variable;
    let t = &cache.roms[&(job.n, v, job.rank)];
    write_basis(out.basis(v), &cache.bases[&(job.n, v)].truncate(job.delta, cfg.pod.criterion)?)?;
    write_model(out.model(v), &t.rom.model)?;
    write_loss_csv(out.report(&format!("{v}_loss.csv")), &t.history)
}

/// Summary of one reduced model in a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub n_snapshots: usize,
    pub delta: f64,
    pub variable: Variable,
    pub rank: usize,
    pub mean_error: f64,
    pub held_out_mean: f64,
    pub held_out_max: f64,
    pub mean_projection_error: f64,
    pub final_train_loss: f64,
}

fn run_study(
    cfg: &ExperimentConfig,
    mesh: &StructuredMesh,
    fom: &FomRun,
    wanted: &[(usize, f64)],
    cache: &mut RomCache,
) -> Result<Vec<(Job, ErrorCurve, StudyRow)>> {
    let jobs = prepare(cfg, fom, wanted, cache)?;
    jobs.into_par_iter()
        .map(|job| {
            let t = &cache.roms[&(job.n, job.variable, job.rank)];
            let curve = evaluate_errors(&t.rom, mesh, &fom.snapshots, &t.train_times)?;
            let row = StudyRow {
                n_snapshots: job.n,
                delta: job.delta,
                variable: job.variable,
                rank: job.rank,
                mean_error: curve.mean_error(),
                held_out_mean: curve.held_out_mean(),
                held_out_max: curve.held_out_max(),
                mean_projection_error: curve.mean_projection_error(),
                final_train_loss: t.history.final_train,
            };
            Ok((job, curve, row))
        })
        .collect()
}

fn write_study_reports(out: &OutDir, name: &str, results: &[(Job, ErrorCurve, StudyRow)]) -> Result<()> {
    write_csv(
        out.report(&format!("{name}.csv")),
        &[
            "n_snapshots",
            "delta",
            "variable",
            "rank",
            "mean_error",
            "held_out_mean",
            "held_out_max",
            "mean_projection_error",
            "final_train_loss",
        ],
        results.iter().map(|(_, _, r)| {
            vec![
                r.n_snapshots.to_string(),
                r.delta.to_string(),
                r.variable.to_string(),
                r.rank.to_string(),
                r.mean_error.to_string(),
                r.held_out_mean.to_string(),
                r.held_out_max.to_string(),
                r.mean_projection_error.to_string(),
                r.final_train_loss.to_string(),
            ]
        }),
    )?;
    write_csv(
        out.report(&format!("{name}_curves.csv")),
        &["n_snapshots", "delta", "variable", "time", "error", "projection_error", "held_out"],
        results.iter().flat_map(|(j, c, _)| {
            (0..c.times.len()).map(move |k| {
                vec![
                    j.n.to_string(),
                    j.delta.to_string(),
                    j.variable.to_string(),
                    c.times[k].to_string(),
                    c.errors[k].to_string(),
                    c.projection_errors[k].to_string(),
                    (c.held_out[k] as u8).to_string(),
                ]
            })
        }),
    )
}

/// Per-δ errors at `pod.n_snapshots`.
#[derive(Debug, Clone)]
pub struct ModeStudy {
    pub rows: Vec<StudyRow>,
    pub curves: Vec<ErrorCurve>,
}

impl ModeStudy {
    /// Time-averaged error of `v` in increasing δ order.
    pub fn mean_errors(&self, v: Variable) -> Vec<(f64, usize, f64)> {
        let mut xs: Vec<_> = self.rows.iter().filter(|r| r.variable == v).map(|r| (r.delta, r.rank, r.mean_error)).collect();
        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
        xs
    }

    pub fn is_monotone(&self, v: Variable) -> bool {
        self.mean_errors(v).windows(2).all(|w| w[1].2 <= w[0].2)
    }

    pub fn passed(&self) -> bool {
        Variable::ALL.iter().all(|&v| self.is_monotone(v))
    }
}

/// Trains one model per variable and δ in `study.deltas` on `pod.n_snapshots`
/// snapshots and measures it against every snapshot of `fom`.
pub fn study_mode_convergence(
    cfg: &ExperimentConfig,
    mesh: &StructuredMesh,
    fom: &FomRun,
    cache: &mut RomCache,
    out: &OutDir,
) -> Result<ModeStudy> {
    let stage = |e: Error| e.in_stage("mode study");
    let n = cfg.pod.n_snapshots;
    let wanted: Vec<(usize, f64)> = cfg.study.deltas.iter().map(|&d| (n, d)).collect();
    let results = run_study(cfg, mesh, fom, &wanted, cache).map_err(stage)?;
    for (job, _, _) in &results {
        write_run(cfg, cache, job, &out.sub(&format!("studies/modes/delta_{}", job.delta))).map_err(stage)?;
    }
    out.create().map_err(stage)?;
    write_study_reports(out, "mode_study", &results).map_err(stage)?;
    let (curves, rows) = results.into_iter().map(|(_, c, r)| (c, r)).unzip();
    Ok(ModeStudy { rows, curves })
}

/// Per-N errors at `pod.delta`.
#[derive(Debug, Clone)]
pub struct SnapshotStudy {
    pub rows: Vec<StudyRow>,
    pub curves: Vec<ErrorCurve>,
    pub band: f64,
}

impl SnapshotStudy {
    /// Largest over smallest time-averaged error of `v` across snapshot counts.
    pub fn ratio(&self, v: Variable) -> f64 {
        let e: Vec<f64> = self.rows.iter().filter(|r| r.variable == v).map(|r| r.mean_error).collect();
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = e.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn passed(&self) -> bool {
        Variable::ALL.iter().all(|&v| self.ratio(v) <= self.band)
    }
}

/// Trains one model per variable and count in `study.snapshot_counts` at
/// `pod.delta` and measures it against every snapshot of `fom`.
pub fn study_snapshot_convergence(
    cfg: &ExperimentConfig,
    mesh: &StructuredMesh,
    fom: &FomRun,
    cache: &mut RomCache,
    out: &OutDir,
) -> Result<SnapshotStudy> {
    let stage = |e: Error| e.in_stage("snapshot study");
    let wanted: Vec<(usize, f64)> = cfg.study.snapshot_counts.iter().map(|&n| (n, cfg.pod.delta)).collect();
    let results = run_study(cfg, mesh, fom, &wanted, cache).map_err(stage)?;
    for (job, _, _) in &results {
        write_run(cfg, cache, job, &out.sub(&format!("studies/snapshots/n_{}", job.n))).map_err(stage)?;
    }
    out.create().map_err(stage)?;
    write_study_reports(out, "snapshot_study", &results).map_err(stage)?;
    let (curves, rows) = results.into_iter().map(|(_, c, r)| (c, r)).unzip();
    Ok(SnapshotStudy { rows, curves, band: cfg.study.ratio_band })
}

/// Snapshot count of a FOM run that serves every study: the largest
/// requested count, which every other count must divide.
pub fn study_fom_count(cfg: &ExperimentConfig) -> Result<usize> {
    let counts: Vec<usize> = std::iter::once(cfg.pod.n_snapshots).chain(cfg.study.snapshot_counts.iter().copied()).collect();
    let max = counts.iter().copied().max().unwrap_or(cfg.pod.n_snapshots);
    if let Some(bad) = counts.iter().find(|&&n| max % n != 0) {
        return Err(Error::Configuration(format!("{bad} snapshots do not divide the finest count {max}")));
    }
    Ok(max)
}

/// FOM cycle time against online evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupReport {
    /// Wall time of the last simulated cycle.
    pub fom_cycle_seconds: f64,
    /// Wall time of the cycle before it, as a stability reference.
    pub fom_previous_cycle_seconds: f64,
    /// Per-call online wall times after one discarded warm-up call.
    pub online_seconds: Vec<f64>,
    pub min_speedup: f64,
}

impl SpeedupReport {
    pub fn online_median(&self) -> f64 {
        let mut xs = self.online_seconds.clone();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            0.5 * (xs[n / 2 - 1] + xs[n / 2])
        }
    }

    pub fn online_mean(&self) -> f64 {
        mean(self.online_seconds.iter().copied())
    }

    pub fn online_std(&self) -> f64 {
        let m = self.online_mean();
        mean(self.online_seconds.iter().map(|x| (x - m) * (x - m))).sqrt()
    }

    /// FOM cycle time over the median online time.
    pub fn ratio(&self) -> f64 {
        self.fom_cycle_seconds / self.online_median()
    }

    /// Relative difference between the last two cycle times.
    pub fn fom_variation(&self) -> f64 {
        (self.fom_cycle_seconds - self.fom_previous_cycle_seconds).abs() / self.fom_previous_cycle_seconds
    }

    pub fn passed(&self) -> bool {
        self.ratio() >= self.min_speedup
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let min = self.online_seconds.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.online_seconds.iter().copied().fold(0.0, f64::max);
        let rows = [
            ("fom_cycle_seconds", self.fom_cycle_seconds),
            ("fom_previous_cycle_seconds", self.fom_previous_cycle_seconds),
            ("fom_variation", self.fom_variation()),
            ("online_calls", self.online_seconds.len() as f64),
            ("online_median_ms", 1e3 * self.online_median()),
            ("online_mean_ms", 1e3 * self.online_mean()),
            ("online_std_ms", 1e3 * self.online_std()),
            ("online_min_ms", 1e3 * min),
            ("online_max_ms", 1e3 * max),
            ("speedup", self.ratio()),
            ("min_speedup", self.min_speedup),
        ];
        write_csv(path, &["metric", "value"], rows.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]))
    }
}

/// Times `study.speedup_calls` online evaluations spread over the cycle
/// against the last FOM cycle of `fom`.
pub fn report_speedup(artifacts: &RomArtifacts, fom: &RunStats, cfg: &ExperimentConfig) -> Result<SpeedupReport> {
    let n = fom.cycle_seconds.len();
    if n < 2 {
        return Err(Error::invalid("speedup needs the timing of a warm-up cycle and a measured cycle"));
    }
    let calls = cfg.study.speedup_calls;
    if calls == 0 {
        return Err(Error::invalid("speedup needs at least one online call"));
    }
    let period = artifacts.period;
    online_evaluate(artifacts, 0.5 * period)?;
    let mut online_seconds = Vec::with_capacity(calls);
    for k in 0..calls {
        let t = period * (k as f64 + 0.5) / calls as f64;
        let start = Instant::now();
        std::hint::black_box(online_evaluate(artifacts, t)?);
        online_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(SpeedupReport {
        fom_cycle_seconds: fom.cycle_seconds[n - 1],
        fom_previous_cycle_seconds: fom.cycle_seconds[n - 2],
        online_seconds,
        min_speedup: cfg.study.min_speedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::offline::{build_geometry, simulate};
    use std::path::Path;

    fn tiny() -> ExperimentConfig {
        let text = "\
mesh.nx = 16
mesh.ny = 8
ffd.severity = 0.3
solver.nu = 1e-5
solver.dt = 0.004
solver.period = 0.08
solver.n_cycles = 2
pod.n_snapshots = 10
pod.delta = 0.999
study.snapshot_counts = 10, 20
study.deltas = 0.9, 0.999, 1.0
study.speedup_calls = 10
ann.train_fraction = 0.8
ann.pressure.epochs = 400
ann.pressure.neurons = 8
ann.velocity.epochs = 400
ann.velocity.neurons = 8
ann.wss.epochs = 400
ann.wss.neurons = 8
";
        ExperimentConfig::parse(text, Path::new("")).unwrap()
    }

    #[test]
    fn studies_on_tiny_channel() {
        let cfg = tiny();
        let g = build_geometry(&cfg).unwrap();
        assert_eq!(study_fom_count(&cfg).unwrap(), 20);
        let fom = simulate(&cfg, &g.mesh, 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::new(dir.path());
        let mut cache = RomCache::new();
        let modes = study_mode_convergence(&cfg, &g.mesh, &fom, &mut cache, &out).unwrap();
        assert_eq!(modes.rows.len(), 9);
        for v in Variable::ALL {
            let e = modes.mean_errors(v);
            assert!(e.windows(2).all(|w| w[1].1 >= w[0].1), "{v}: ranks not monotone");
            // Equal ranks reuse one network, so the errors coincide.
            for w in e.windows(2).filter(|w| w[0].1 == w[1].1) {
                assert_eq!(w[0].2, w[1].2);
            }
        }
        // At delta = 1 nothing is truncated: the projection error vanishes on
        // the training snapshots.
        for c in modes.curves.iter().zip(&modes.rows).filter(|(_, r)| r.delta == 1.0).map(|(c, _)| c) {
            for (k, e) in c.projection_errors.iter().enumerate() {
                if !c.held_out[k] {
                    assert!(*e < 1e-9, "{}: projection error {e}", c.variable);
                }
            }
        }
        let trained = cache.n_trained();
        let snaps = study_snapshot_convergence(&cfg, &g.mesh, &fom, &mut cache, &out).unwrap();
        assert_eq!(snaps.rows.len(), 6);
        assert_eq!(cache.n_trained(), trained + 3, "the N = 10 models are reused");
        assert!(snaps.ratio(Variable::Pressure) >= 1.0);
        assert!(out.report("mode_study.csv").exists() && out.report("snapshot_study_curves.csv").exists());
        assert!(out.sub("studies/snapshots/n_20").model(Variable::Wss).exists());
    }

    #[test]
    fn held_out_times_and_decomposition() {
        let cfg = tiny();
        let g = build_geometry(&cfg).unwrap();
        let fom = simulate(&cfg, &g.mesh, 20).unwrap();
        let sub = fom.subsample(10, cfg.solver.period).unwrap();
        for v in Variable::ALL {
            let basis = full_basis(&cfg, &sub, v).unwrap().truncate(0.9, cfg.pod.criterion).unwrap();
            let t = build_rom(&cfg, &sub, basis).unwrap();
            let c = evaluate_errors(&t.rom, &g.mesh, &fom.snapshots, &t.train_times).unwrap();
            assert_eq!(c.held_out.iter().filter(|h| !**h).count(), t.split.train.len());
            assert_eq!(c.held_out.iter().filter(|h| **h).count(), 20 - t.split.train.len());
            for (total, proj) in error_decomposition(&t.rom, &fom.snapshots).unwrap() {
                assert!(total >= proj - 1e-10, "{v}: {total} < {proj}");
            }
        }
    }

    #[test]
    fn snapshot_ratio_and_monotonicity() {
        let row = |n, d, e| StudyRow {
            n_snapshots: n,
            delta: d,
            variable: Variable::Pressure,
            rank: 1,
            mean_error: e,
            held_out_mean: e,
            held_out_max: e,
            mean_projection_error: 0.0,
            final_train_loss: 0.0,
        };
        let s = SnapshotStudy { rows: vec![row(100, 0.99, 0.02), row(200, 0.99, 0.03), row(400, 0.99, 0.035)], curves: vec![], band: 2.0 };
        assert!((s.ratio(Variable::Pressure) - 1.75).abs() < 1e-12);
        let one = SnapshotStudy { rows: vec![row(100, 0.99, 0.02)], curves: vec![], band: 2.0 };
        assert_eq!(one.ratio(Variable::Pressure), 1.0);
        let m = ModeStudy { rows: vec![row(100, 0.95, 0.02), row(100, 0.9, 0.03), row(100, 0.99, 0.02)], curves: vec![] };
        assert!(m.is_monotone(Variable::Pressure));
        let m = ModeStudy { rows: vec![row(100, 0.9, 0.02), row(100, 0.95, 0.03)], curves: vec![] };
        assert!(!m.is_monotone(Variable::Pressure));
    }

    #[test]
    fn speedup_statistics() {
        let r = SpeedupReport { fom_cycle_seconds: 10.0, fom_previous_cycle_seconds: 8.0, online_seconds: vec![0.1, 0.3, 0.2, 0.4], min_speedup: 100.0 };
        assert!((r.online_median() - 0.25).abs() < 1e-15);
        assert!((r.ratio() - 40.0).abs() < 1e-12);
        assert!(!r.passed());
        assert!((r.fom_variation() - 0.25).abs() < 1e-15);
    }
}
