use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::field::{Field, WssField};
use crate::io::{read_field, read_wss, write_csv, write_field, write_wss};
use crate::mesh::StructuredMesh;

use super::boundary::{ChannelBoundary, FlowBoundary};
use super::piso::{bdf2_step, StepReport};
use super::wss::compute_wss;
use super::{FlowState, SolverConfig};

/// One sampled instant of the final cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    /// Time within the cycle, in `(0, T]`.
    pub time: f64,
    pub velocity: Field,
    pub pressure: Field,
    pub wss: WssField,
}

/// Time integrator owning the two most recent states.
pub struct FlowSolver<'a> {
    mesh: &'a StructuredMesh,
    bc: &'a dyn FlowBoundary,
    cfg: SolverConfig,
    prev: Option<FlowState>,
    cur: FlowState,
    t0: f64,
    steps: usize,
    last_report: Option<StepReport>,
}

impl<'a> FlowSolver<'a> {
    /// Starts from rest at `t = 0`.
    pub fn new(mesh: &'a StructuredMesh, bc: &'a dyn FlowBoundary, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { mesh, bc, cfg, prev: None, cur: FlowState::at_rest(mesh, 0.0), t0: 0.0, steps: 0, last_report: None })
    }

    /// Starts from a given state; the first step is implicit Euler.
    pub fn from_state(mesh: &'a StructuredMesh, bc: &'a dyn FlowBoundary, cfg: SolverConfig, state: FlowState) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { mesh, bc, cfg, prev: None, t0: state.time, cur: state, steps: 0, last_report: None })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn state(&self) -> &FlowState {
        &self.cur
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_report(&self) -> Option<&StepReport> {
        self.last_report.as_ref()
    }

    pub fn step(&mut self) -> Result<&StepReport> {
        // Times come from the step count so they do not drift.
        let t = self.t0 + (self.steps + 1) as f64 * self.cfg.dt;
        let (next, report) = bdf2_step(self.mesh, self.bc, &self.cur, self.prev.as_ref(), &self.cfg, t)?;
        self.prev = Some(std::mem::replace(&mut self.cur, next));
        self.steps += 1;
        log::trace!("t = {t:.6} s, continuity {:.2e}, pressure iterations {:?}", report.flux_divergence, report.pressure_iterations);
        Ok(self.last_report.insert(report))
    }

    pub fn wss(&self) -> WssField {
        compute_wss(self.mesh, &self.cur, self.cfg.nu)
    }
}

/// Runs `cfg.n_cycles` cycles from rest on the channel and returns
/// `n_snapshots` equispaced samples of the last cycle at `t_k = k T / N`,
/// `k = 1..=N`.
pub fn run_cycles(mesh: &StructuredMesh, cfg: &SolverConfig, n_snapshots: usize) -> Result<Vec<Snapshot>> {
    let bc = ChannelBoundary::new(mesh, cfg.waveform.clone(), cfg.inlet_profile);
    let mut out = Vec::with_capacity(n_snapshots);
    run_cycles_with(mesh, &bc, cfg, n_snapshots, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}

/// Streaming form of [`run_cycles`] with an arbitrary boundary.
pub fn run_cycles_with(
    mesh: &StructuredMesh,
    bc: &dyn FlowBoundary,
    cfg: &SolverConfig,
    n_snapshots: usize,
    mut sink: impl FnMut(Snapshot) -> Result<()>,
) -> Result<RunStats> {
    cfg.validate()?;
    if cfg.n_cycles < 2 {
        return Err(Error::invalid(format!(
            "at least one warm-up cycle is required, got n_cycles = {}",
            cfg.n_cycles
        )));
    }
    let per_cycle = cfg.steps_per_cycle();
    if n_snapshots == 0 || !per_cycle.is_multiple_of(n_snapshots) {
        return Err(Error::invalid(format!(
            "{n_snapshots} snapshots do not divide the {per_cycle} steps of a cycle"
        )));
    }
    let stride = per_cycle / n_snapshots;
    let total = per_cycle * cfg.n_cycles;
    let first_sampled = per_cycle * (cfg.n_cycles - 1);
    let mut solver = FlowSolver::new(mesh, bc, cfg.clone())?;
    let mut stats = RunStats { steps: total, cycle_seconds: Vec::with_capacity(cfg.n_cycles) };
    let mut clock = Instant::now();
    for n in 1..=total {
        solver.step()?;
        if n % per_cycle == 0 {
            stats.cycle_seconds.push(clock.elapsed().as_secs_f64());
            log::info!("cycle {} of {} done in {:.2} s", n / per_cycle, cfg.n_cycles, stats.cycle_seconds.last().unwrap());
            clock = Instant::now();
        }
        if n > first_sampled && (n - first_sampled).is_multiple_of(stride) {
            let k = (n - first_sampled) / stride;
            let t = k as f64 * cfg.period / n_snapshots as f64;
            let mut state = solver.cur.clone();
            state.time = t;
            let wss = compute_wss(mesh, &state, cfg.nu);
            sink(Snapshot {
                index: k - 1,
                time: t,
                velocity: state.velocity_field(mesh)?,
                pressure: state.pressure_field(mesh)?,
                wss,
            })?;
        }
    }
    Ok(stats)
}

/// Wall-clock record of a multi-cycle run. Snapshot extraction in the final
/// cycle is included in its time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub cycle_seconds: Vec<f64>,
}

/// One row of the snapshot manifest; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub time: f64,
    pub path_u: PathBuf,
    pub path_p: PathBuf,
    pub path_wss: PathBuf,
}

/// Writes one binary file per variable and snapshot into `dir` together
/// with `dir/manifest.csv`. Returns the manifest path.
pub fn write_snapshots(dir: impl AsRef<Path>, snapshots: &[Snapshot]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut rows = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        let names = [format!("u_{:04}.bin", s.index), format!("p_{:04}.bin", s.index), format!("wss_{:04}.bin", s.index)];
        write_field(dir.join(&names[0]), &s.velocity)?;
        write_field(dir.join(&names[1]), &s.pressure)?;
        write_wss(dir.join(&names[2]), &s.wss)?;
        rows.push(vec![s.index.to_string(), s.time.to_string(), names[0].clone(), names[1].clone(), names[2].clone()]);
    }
    let manifest = dir.join("manifest.csv");
    write_csv(&manifest, &["index", "time", "path_u", "path_p", "path_wss"], rows)?;
    Ok(manifest)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("index,time,path_u,path_p,path_wss") {
        return Err(Error::format(path, "missing manifest header"));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(Error::format(path, format!("line {}: expected 5 columns", k + 2)));
        }
        let bad = |what: &str| Error::format(path, format!("line {}: bad {what}", k + 2));
        out.push(ManifestEntry {
            index: cols[0].parse().map_err(|_| bad("index"))?,
            time: cols[1].parse().map_err(|_| bad("time"))?,
            path_u: base.join(cols[2]),
            path_p: base.join(cols[3]),
            path_wss: base.join(cols[4]),
        });
    }
    Ok(out)
}

/// Loads every snapshot listed in a manifest.
pub fn read_snapshots(manifest: impl AsRef<Path>) -> Result<Vec<Snapshot>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            Ok(Snapshot {
                index: e.index,
                time: e.time,
                velocity: read_field(&e.path_u)?,
                pressure: read_field(&e.path_p)?,
                wss: read_wss(&e.path_wss)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::WaveformBc;
    use crate::mesh::build_channel_mesh;

    fn small_cfg() -> SolverConfig {
        let mut cfg = SolverConfig::desk();
        cfg.nu = 0.05;
        cfg.period = 0.4;
        cfg.dt = 0.01;
        cfg.n_cycles = 2;
        cfg.waveform = WaveformBc::default_pulse(0.4, 0.05, 1.0).unwrap();
        cfg
    }

    #[test]
    fn snapshot_spacing() {
        let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
        let snaps = run_cycles(&m, &small_cfg(), 8).unwrap();
        assert_eq!(snaps.len(), 8);
        for (k, s) in snaps.iter().enumerate() {
            assert_eq!(s.index, k);
            assert!((s.time - 0.05 * (k + 1) as f64).abs() < 1e-15);
            assert_eq!(s.velocity.time(), s.time);
        }
    }

    #[test]
    fn indivisible_count_rejected() {
        let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
        assert!(matches!(run_cycles(&m, &small_cfg(), 7), Err(Error::InvalidArgument(_))));
        let mut cfg = small_cfg();
        cfg.n_cycles = 1;
        assert!(matches!(run_cycles(&m, &cfg, 8), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let m = build_channel_mesh(1.0, 0.2, 10, 4).unwrap();
        let snaps = run_cycles(&m, &small_cfg(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_snapshots(dir.path(), &snaps).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 4);
        assert_eq!(entries[2].time, snaps[2].time);
        let back = read_snapshots(&manifest).unwrap();
        assert_eq!(back, snaps);
    }
}
