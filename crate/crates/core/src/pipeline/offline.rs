use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::online::{run_evaluation, Provenance, RomArtifacts, VariableRom};
use super::OutDir;
use crate::ann::{split_dataset, train, write_loss_csv, write_model, CoefficientDataset, LossHistory, Split};
use crate::error::{Error, Result};
use crate::ffd::{apply_stenosis, deform_mesh, write_quality_csv, FfdLattice};
use crate::fom::{run_cycles_with, write_snapshots, ChannelBoundary, RunStats, Snapshot};
use crate::io::{write_csv, write_vtk};
use crate::mesh::{build_channel_mesh, MeshQuality, StructuredMesh};
use crate::pod::{assemble, compute_pod, write_basis, write_spectrum_csv, PodBasis, PodOptions, Variable};

/// Stenosed channel together with the lattice that produced it.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub base: StructuredMesh,
    pub mesh: StructuredMesh,
    pub lattice: FfdLattice<2>,
    pub quality: MeshQuality,
}

pub fn build_geometry(cfg: &ExperimentConfig) -> Result<Geometry> {
    let m = &cfg.mesh;
    let f = &cfg.ffd;
    let base = build_channel_mesh(m.length, m.height, m.nx, m.ny)?;
    let margin = f.y_margin * m.height;
    let lattice = FfdLattice::new([f.x_min, -margin], [f.x_max, m.height + margin], f.control, f.degree)?;
    let lattice = apply_stenosis(&lattice, &f.stenosis, [0.0, m.height])?;
    let (mesh, quality) = deform_mesh(&base, &lattice)?;
    Ok(Geometry { base, mesh, lattice, quality })
}

/// Builds the geometry and writes its quality report, lattice and VTK grid.
pub fn run_geometry(cfg: &ExperimentConfig, out: &OutDir) -> Result<Geometry> {
    let stage = |e: Error| e.in_stage("geometry");
    out.create().map_err(stage)?;
    let g = build_geometry(cfg).map_err(stage)?;
    write_quality_csv(out.report("mesh_quality.csv"), &g.quality).map_err(stage)?;
    g.lattice.save(out.report("lattice.json")).map_err(stage)?;
    write_vtk(out.field("mesh.vtk"), &g.mesh, &[]).map_err(stage)?;
    log::info!(
        "geometry: {} cells, min volume {:.3e}, max non-orthogonality {:.1} deg",
        g.mesh.n_cells(),
        g.quality.min_cell_volume,
        g.quality.max_non_orthogonality_deg
    );
    Ok(g)
}

/// Snapshots of the final cycle and per-cycle wall times.
#[derive(Debug, Clone)]
pub struct FomRun {
    pub snapshots: Vec<Snapshot>,
    pub stats: RunStats,
}

impl FomRun {
    /// Every `(N_run / n)`-th snapshot, relabelled as a run with `n` samples.
    pub fn subsample(&self, n: usize, period: f64) -> Result<Vec<Snapshot>> {
        let total = self.snapshots.len();
        if n == 0 || !total.is_multiple_of(n) {
            return Err(Error::invalid(format!("{n} snapshots cannot be taken from a run with {total}")));
        }
        let stride = total / n;
        Ok((1..=n)
            .map(|k| {
                let mut s = self.snapshots[k * stride - 1].clone();
                s.index = k - 1;
                s.time = k as f64 * period / n as f64;
                s
            })
            .collect())
    }
}

pub fn simulate(cfg: &ExperimentConfig, mesh: &StructuredMesh, n_snapshots: usize) -> Result<FomRun> {
    let solver = cfg.solver_config()?;
    let bc = ChannelBoundary::new(mesh, solver.waveform.clone(), solver.inlet_profile);
    let mut snapshots = Vec::with_capacity(n_snapshots);
    let stats = run_cycles_with(mesh, &bc, &solver, n_snapshots, |s| {
        snapshots.push(s);
        Ok(())
    })?;
    Ok(FomRun { snapshots, stats })
}

/// Runs the FOM with `n_snapshots` samples and writes the snapshots and
/// `reports/fom_timing.csv`.
pub fn run_simulation(cfg: &ExperimentConfig, geometry: &Geometry, n_snapshots: usize, out: &OutDir) -> Result<FomRun> {
    let stage = |e: Error| e.in_stage("simulation");
    out.create().map_err(stage)?;
    let run = simulate(cfg, &geometry.mesh, n_snapshots).map_err(stage)?;
    write_snapshots(out.snapshots(), &run.snapshots).map_err(stage)?;
    write_fom_timing(out.report("fom_timing.csv"), &run.stats).map_err(stage)?;
    Ok(run)
}

pub(crate) fn write_fom_timing(path: impl AsRef<Path>, stats: &RunStats) -> Result<()> {
    write_csv(
        path,
        &["cycle", "seconds", "steps"],
        stats.cycle_seconds.iter().enumerate().map(|(k, s)| {
            vec![(k + 1).to_string(), s.to_string(), (stats.steps / stats.cycle_seconds.len()).to_string()]
        }),
    )
}

pub fn read_fom_timing(path: impl AsRef<Path>) -> Result<RunStats> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut stats = RunStats { steps: 0, cycle_seconds: Vec::new() };
    for (k, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("line {}: expected cycle,seconds,steps", k + 1));
        if cols.len() != 3 {
            return Err(bad());
        }
        stats.cycle_seconds.push(cols[1].parse().map_err(|_| bad())?);
        stats.steps += cols[2].parse::<usize>().map_err(|_| bad())?;
    }
    if stats.cycle_seconds.is_empty() {
        return Err(Error::format(path, "no timing rows"));
    }
    Ok(stats)
}

fn pod_options(cfg: &ExperimentConfig) -> PodOptions {
    PodOptions { method: cfg.pod.method, center: cfg.pod.center, ..PodOptions::default() }
}

/// Untruncated basis of one variable.
pub(crate) fn full_basis(cfg: &ExperimentConfig, snapshots: &[Snapshot], v: Variable) -> Result<PodBasis> {
    compute_pod(&assemble(snapshots, v)?, &pod_options(cfg))
}

/// Per variable: POD, truncation at `pod.delta`, basis file and spectrum CSV.
pub fn run_pod(cfg: &ExperimentConfig, snapshots: &[Snapshot], out: &OutDir) -> Result<Vec<PodBasis>> {
    let stage = |e: Error| e.in_stage("pod");
    out.create().map_err(stage)?;
    Variable::ALL
        .par_iter()
        .map(|&v| {
            let basis = full_basis(cfg, snapshots, v)?.truncate(cfg.pod.delta, cfg.pod.criterion)?;
            write_spectrum_csv(out.report(&format!("{v}_spectrum.csv")), basis.singular_values())?;
            write_basis(out.basis(v), &basis)?;
            log::info!("pod {v}: {} of {} modes at delta {}", basis.rank(), basis.singular_values().len(), cfg.pod.delta);
            Ok(basis)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(stage)
}

/// A trained network with its basis and training record.
#[derive(Debug, Clone)]
pub struct TrainedRom {
    pub rom: VariableRom,
    pub split: Split,
    pub history: LossHistory,
    /// Times of the snapshots the network was fitted to.
    pub train_times: Vec<f64>,
}

/// Fits the network of `basis.variable()` to the modal coefficients of the snapshots.
pub fn build_rom(cfg: &ExperimentConfig, snapshots: &[Snapshot], basis: PodBasis) -> Result<TrainedRom> {
    let v = basis.variable();
    let s = assemble(snapshots, v)?;
    if s.mesh_id() != basis.mesh_id() {
        return Err(Error::MeshMismatch(format!("{v} snapshots and basis come from different meshes")));
    }
    let coefficients = basis.project_matrix(s.data())?;
    let tc = cfg.train_config(v);
    let dataset = CoefficientDataset::new(s.times().to_vec(), coefficients)?;
    let split = split_dataset(&dataset, tc.train_fraction, tc.seed)?;
    let dataset = dataset.with_split(split.clone())?;
    let model = tc.build_model(basis.rank())?;
    let (model, history) = train(&model, &dataset, &tc)?;
    log::info!(
        "train {v}: L = {}, final loss {:.3e} (validation {:.3e})",
        basis.rank(),
        history.final_train,
        history.final_validation
    );
    let train_times = split.train.iter().map(|&i| dataset.inputs[i]).collect();
    Ok(TrainedRom { rom: VariableRom::new(basis, model)?, split, history, train_times })
}

/// Trains every variable and writes models, loss histories and splits.
pub fn run_training(cfg: &ExperimentConfig, snapshots: &[Snapshot], bases: Vec<PodBasis>, out: &OutDir) -> Result<Vec<TrainedRom>> {
    let stage = |e: Error| e.in_stage("training");
    out.create().map_err(stage)?;
    bases
        .into_par_iter()
        .map(|basis| {
            let v = basis.variable();
            let t = build_rom(cfg, snapshots, basis)?;
            write_model(out.model(v), &t.rom.model)?;
            write_loss_csv(out.report(&format!("{v}_loss.csv")), &t.history)?;
            write_split_csv(out.report(&format!("{v}_split.csv")), &t)?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(stage)
}

fn write_split_csv(path: impl AsRef<Path>, t: &TrainedRom) -> Result<()> {
    let mut rows: Vec<(usize, &str)> = t.split.train.iter().map(|&i| (i, "train")).collect();
    rows.extend(t.split.validation.iter().map(|&i| (i, "validation")));
    rows.sort_unstable();
    write_csv(path, &["index", "set"], rows.into_iter().map(|(i, s)| vec![i.to_string(), s.to_string()]))
}

/// Everything produced by one end-to-end offline run.
#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub geometry: Geometry,
    pub fom: FomRun,
    pub trained: Vec<TrainedRom>,
    pub artifacts: RomArtifacts,
}

/// Geometry, FOM, POD and training, followed by a ROM evaluation at
/// `study.eval_fraction` of the cycle. Writes the full output layout.
pub fn offline(cfg: &ExperimentConfig, out: &OutDir) -> Result<OfflineRun> {
    cfg.validate()?;
    out.create()?;
    let geometry = run_geometry(cfg, out)?;
    let fom = run_simulation(cfg, &geometry, cfg.pod.n_snapshots, out)?;
    let bases = run_pod(cfg, &fom.snapshots, out)?;
    let trained = run_training(cfg, &fom.snapshots, bases, out)?;
    let provenance = Provenance::new(cfg, now_unix());
    let artifacts = RomArtifacts::new(trained.iter().map(|t| t.rom.clone()).collect(), cfg.solver.period, provenance)
        .map_err(|e| e.in_stage("training"))?;
    let t_eval = cfg.study.eval_fraction * cfg.solver.period;
    run_evaluation(&artifacts, &geometry.mesh, t_eval, out)?;
    write_offline_reports(cfg, out, &trained)?;
    artifacts.provenance.write(out.root().join("provenance.txt"))?;
    write_manifest(out)?;
    Ok(OfflineRun { geometry, fom, trained, artifacts })
}

pub(crate) fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_offline_reports(cfg: &ExperimentConfig, out: &OutDir, trained: &[TrainedRom]) -> Result<()> {
    let path = out.root().join("config.txt");
    std::fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))?;
    write_csv(
        out.report("summary.csv"),
        &["variable", "rank", "n_modes", "n_snapshots", "delta", "final_train_loss", "final_validation_loss"],
        trained.iter().map(|t| {
            let b = &t.rom.basis;
            vec![
                b.variable().to_string(),
                b.rank().to_string(),
                b.singular_values().len().to_string(),
                cfg.pod.n_snapshots.to_string(),
                b.energy_delta().to_string(),
                t.history.final_train.to_string(),
                t.history.final_validation.to_string(),
            ]
        }),
    )
}

/// `manifest.csv` at the root listing every artifact file, sorted by path.
pub fn write_manifest(out: &OutDir) -> Result<()> {
    let mut rows = Vec::new();
    for dir in ["basis", "models", "reports", "fields", "snapshots"] {
        let p = out.root().join(dir);
        let Ok(entries) = std::fs::read_dir(&p) else { continue };
        let mut names: Vec<String> =
            entries.filter_map(|e| e.ok()).filter(|e| e.path().is_file()).map(|e| e.file_name().to_string_lossy().into_owned()).collect();
        names.sort();
        rows.extend(names.into_iter().map(|n| vec![dir.to_string(), format!("{dir}/{n}")]));
    }
    write_csv(out.root().join("manifest.csv"), &["role", "path"], rows)
}
