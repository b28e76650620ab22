//! Experiment configuration: `section.key = value` lines with `#` comments.
//! Every key is optional and defaults to the desk-scale experiment; unknown
//! or repeated keys are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::ann::{Activation, Optimizer, TrainConfig};
use crate::error::{Error, Result};
use crate::ffd::StenosisSpec;
use crate::fom::{InletProfile, SolverConfig, WaveformBc};
use crate::pod::{EnergyCriterion, SvdMethod, Variable};

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Stenosis and the bivariate lattice that carries it.
#[derive(Debug, Clone, PartialEq)]
pub struct FfdConfig {
    pub stenosis: StenosisSpec,
    pub x_min: f64,
    pub x_max: f64,
    /// Lattice extent beyond each wall, as a fraction of the channel height.
    pub y_margin: f64,
    pub control: [usize; 2],
    pub degree: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaveformSpec {
    /// Built-in pulse scaled by `q_ref`.
    Pulse,
    /// Steady inflow `q_ref`.
    Constant,
    /// `t,q` table in m²/s per unit depth.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub nu: f64,
    pub dt: f64,
    pub period: f64,
    pub n_cycles: usize,
    pub piso_correctors: usize,
    pub linear_tol: f64,
    pub div_tol: f64,
    pub max_linear_iters: usize,
    pub q_ref: f64,
    /// Flow-split factor applied to the waveform, in [2/3, 4/3].
    pub flow_scale: f64,
    pub waveform: WaveformSpec,
    pub inlet_profile: InletProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodConfig {
    pub n_snapshots: usize,
    pub delta: f64,
    pub criterion: EnergyCriterion,
    pub method: SvdMethod,
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub snapshot_counts: Vec<usize>,
    pub deltas: Vec<f64>,
    /// Allowed max/min ratio of time-averaged errors across snapshot counts.
    pub ratio_band: f64,
    /// Evaluation instant as a fraction of the cycle.
    pub eval_fraction: f64,
    pub speedup_calls: usize,
    pub min_speedup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mesh: MeshConfig,
    pub ffd: FfdConfig,
    pub solver: SolverSection,
    pub pod: PodConfig,
    /// Per-variable training settings, indexed like [`Variable::ALL`].
    pub ann: [TrainConfig; 3],
    pub study: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Network settings at desk scale: three hidden layers as in the full-scale
/// table with a fifth of its widths and at most 20 000 epochs.
fn desk_train(variable: Variable) -> TrainConfig {
    let (neurons, activation, epochs) = match variable {
        Variable::Pressure => (100, Activation::Relu, 20_000),
        Variable::Velocity => (170, Activation::Tanh, 20_000),
        Variable::Wss => (180, Activation::Tanh, 20_000),
    };
    TrainConfig {
        epochs,
        learning_rate: 1e-3,
        neurons_per_layer: neurons,
        hidden_layers: 3,
        activation,
        train_fraction: 0.95,
        seed: 0,
        optimizer: Optimizer::adam(),
    }
}

impl ExperimentConfig {
    /// 64 x 32 channel, 4 mm high and 24 mm long, with a 70% stenosis
    /// centred at the end of the first third. Three PISO correctors: with two,
    /// the flattened throat cells carry a pressure oscillation of period 2 dt.
    pub fn desk() -> Self {
        let h = 0.004;
        let base = SolverConfig::desk();
        Self {
            seed: 0,
            mesh: MeshConfig { length: 0.024, height: h, nx: 64, ny: 32 },
            ffd: FfdConfig {
                stenosis: StenosisSpec { severity: 0.7, center_x: 0.008, extent: 0.006 },
                x_min: 0.002,
                x_max: 0.014,
                y_margin: 0.5,
                control: [7, 5],
                degree: [2, 2],
            },
            solver: SolverSection {
                nu: base.nu,
                dt: base.dt,
                period: base.period,
                n_cycles: base.n_cycles,
                piso_correctors: 3,
                linear_tol: base.linear_tol,
                div_tol: base.div_tol,
                max_linear_iters: base.max_linear_iters,
                q_ref: 7.0e-5,
                flow_scale: 1.0,
                waveform: WaveformSpec::Pulse,
                inlet_profile: base.inlet_profile,
            },
            pod: PodConfig {
                n_snapshots: 100,
                delta: 0.99,
                criterion: EnergyCriterion::Sigma,
                method: SvdMethod::Auto,
                center: false,
            },
            ann: Variable::ALL.map(desk_train),
            study: StudyConfig {
                snapshot_counts: vec![100, 200, 400],
                deltas: vec![0.90, 0.95, 0.99],
                ratio_band: 2.0,
                eval_fraction: 0.8,
                speedup_calls: 100,
                min_speedup: 100.0,
            },
        }
    }

    pub fn train_config(&self, v: Variable) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.ann[v as usize].clone() }
    }

    /// Sets the global seed used by every network.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let waveform = match &s.waveform {
            WaveformSpec::Pulse => WaveformBc::default_pulse(s.period, s.q_ref, s.flow_scale)?,
            WaveformSpec::Constant => WaveformBc::new(vec![(0.0, s.q_ref), (s.period, s.q_ref)], s.flow_scale)?,
            WaveformSpec::Csv(p) => WaveformBc::from_csv(p, s.flow_scale)?,
        };
        let cfg = SolverConfig {
            nu: s.nu,
            dt: s.dt,
            period: s.period,
            n_cycles: s.n_cycles,
            piso_correctors: s.piso_correctors,
            linear_tol: s.linear_tol,
            div_tol: s.div_tol,
            max_linear_iters: s.max_linear_iters,
            waveform,
            inlet_profile: s.inlet_profile,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks that parsing alone cannot catch.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        let m = &self.mesh;
        if !(m.length > 0.0 && m.height > 0.0) || m.nx == 0 || m.ny == 0 {
            return bad("mesh dimensions and cell counts must be positive".into());
        }
        self.ffd.stenosis.validate()?;
        let f = &self.ffd;
        if !(f.x_min < f.x_max) || !(f.y_margin > 0.0) {
            return bad("lattice box must have positive extent".into());
        }
        if f.x_min < 0.0 || f.x_max > m.length {
            return bad(format!("lattice x-range [{}, {}] leaves the channel [0, {}]", f.x_min, f.x_max, m.length));
        }
        let steps = self.solver_config()?.steps_per_cycle();
        if self.solver.n_cycles < 2 {
            return bad("at least two cycles are needed (one warm-up)".into());
        }
        let counts = std::iter::once(self.pod.n_snapshots).chain(self.study.snapshot_counts.iter().copied());
        for n in counts {
            if n < 2 || steps % n != 0 {
                return bad(format!("{n} snapshots do not divide the {steps} steps of a cycle"));
            }
        }
        for d in std::iter::once(self.pod.delta).chain(self.study.deltas.iter().copied()) {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("energy threshold {d} outside (0, 1]"));
            }
        }
        for t in &self.ann {
            t.validate()?;
        }
        if !(0.0..=1.0).contains(&self.study.eval_fraction) {
            return bad("study.eval_fraction must lie in [0, 1]".into());
        }
        if self.study.speedup_calls == 0 || !(self.study.ratio_band >= 1.0) {
            return bad("study.speedup_calls must be positive and study.ratio_band at least 1".into());
        }
        Ok(())
    }

    /// Parses a configuration file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self::desk();
        let mut seen = HashSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(a, b)| (a.trim(), b.trim()))
                .ok_or_else(|| Error::Config { line: line_no, msg: format!("expected `key = value`, got `{line}`") })?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config { line: line_no, msg: format!("duplicate key `{key}`") });
            }
            cfg.set(key, value, base_dir).map_err(|msg| Error::Config { line: line_no, msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("`{key}`: expected a boolean, got `{v}`")),
            }
        }
        fn lift<T>(key: &str, r: Result<T>) -> std::result::Result<T, String> {
            r.map_err(|err| format!("`{key}`: {err}"))
        }
        if let Some(rest) = key.strip_prefix("ann.") {
            if let Some((var, field)) = rest.split_once('.') {
                let var = lift(key, Variable::parse(var))?;
                let t = &mut self.ann[var as usize];
                return match field {
                    "epochs" => num(key, v).map(|x| t.epochs = x),
                    "learning_rate" => num(key, v).map(|x| t.learning_rate = x),
                    "neurons" => num(key, v).map(|x| t.neurons_per_layer = x),
                    "hidden_layers" => num(key, v).map(|x| t.hidden_layers = x),
                    "activation" => lift(key, Activation::parse(v)).map(|x| t.activation = x),
                    "optimizer" => lift(key, Optimizer::parse(v)).map(|x| t.optimizer = x),
                    _ => Err(format!("unknown key `{key}`")),
                };
            }
        }
        match key {
            "seed" => self.seed = num(key, v)?,
            "mesh.length" => self.mesh.length = num(key, v)?,
            "mesh.height" => self.mesh.height = num(key, v)?,
            "mesh.nx" => self.mesh.nx = num(key, v)?,
            "mesh.ny" => self.mesh.ny = num(key, v)?,
            "ffd.severity" => self.ffd.stenosis.severity = num(key, v)?,
            "ffd.center_x" => self.ffd.stenosis.center_x = num(key, v)?,
            "ffd.extent" => self.ffd.stenosis.extent = num(key, v)?,
            "ffd.x_min" => self.ffd.x_min = num(key, v)?,
            "ffd.x_max" => self.ffd.x_max = num(key, v)?,
            "ffd.y_margin" => self.ffd.y_margin = num(key, v)?,
            "ffd.control_x" => self.ffd.control[0] = num(key, v)?,
            "ffd.control_y" => self.ffd.control[1] = num(key, v)?,
            "ffd.degree_x" => self.ffd.degree[0] = num(key, v)?,
            "ffd.degree_y" => self.ffd.degree[1] = num(key, v)?,
            "solver.nu" => self.solver.nu = num(key, v)?,
            "solver.dt" => self.solver.dt = num(key, v)?,
            "solver.period" => self.solver.period = num(key, v)?,
            "solver.n_cycles" => self.solver.n_cycles = num(key, v)?,
            "solver.piso_correctors" => self.solver.piso_correctors = num(key, v)?,
            "solver.linear_tol" => self.solver.linear_tol = num(key, v)?,
            "solver.div_tol" => self.solver.div_tol = num(key, v)?,
            "solver.max_linear_iters" => self.solver.max_linear_iters = num(key, v)?,
            "solver.q_ref" => self.solver.q_ref = num(key, v)?,
            "solver.flow_scale" => self.solver.flow_scale = num(key, v)?,
            "solver.waveform" => {
                self.solver.waveform = match v {
                    "pulse" => WaveformSpec::Pulse,
                    "constant" => WaveformSpec::Constant,
                    path => WaveformSpec::Csv(base.join(path)),
                }
            }
            "solver.inlet_profile" => {
                self.solver.inlet_profile = match v {
                    "parabolic" => InletProfile::Parabolic,
                    "uniform" => InletProfile::Uniform,
                    _ => return Err(format!("`{key}`: expected parabolic or uniform, got `{v}`")),
                }
            }
            "pod.n_snapshots" => self.pod.n_snapshots = num(key, v)?,
            "pod.delta" => self.pod.delta = num(key, v)?,
            "pod.criterion" => self.pod.criterion = lift(key, EnergyCriterion::parse(v))?,
            "pod.method" => self.pod.method = lift(key, SvdMethod::parse(v))?,
            "pod.center" => self.pod.center = flag(key, v)?,
            "ann.train_fraction" => {
                let f: f64 = num(key, v)?;
                self.ann.iter_mut().for_each(|t| t.train_fraction = f);
            }
            "study.snapshot_counts" => self.study.snapshot_counts = list(key, v)?,
            "study.deltas" => self.study.deltas = list(key, v)?,
            "study.ratio_band" => self.study.ratio_band = num(key, v)?,
            "study.eval_fraction" => self.study.eval_fraction = num(key, v)?,
            "study.speedup_calls" => self.study.speedup_calls = num(key, v)?,
            "study.min_speedup" => self.study.min_speedup = num(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every setting in the input format; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let join = |xs: Vec<String>| xs.join(", ");
        kv("seed", self.seed.to_string());
        kv("mesh.length", self.mesh.length.to_string());
        kv("mesh.height", self.mesh.height.to_string());
        kv("mesh.nx", self.mesh.nx.to_string());
        kv("mesh.ny", self.mesh.ny.to_string());
        kv("ffd.severity", self.ffd.stenosis.severity.to_string());
        kv("ffd.center_x", self.ffd.stenosis.center_x.to_string());
        kv("ffd.extent", self.ffd.stenosis.extent.to_string());
        kv("ffd.x_min", self.ffd.x_min.to_string());
        kv("ffd.x_max", self.ffd.x_max.to_string());
        kv("ffd.y_margin", self.ffd.y_margin.to_string());
        kv("ffd.control_x", self.ffd.control[0].to_string());
        kv("ffd.control_y", self.ffd.control[1].to_string());
        kv("ffd.degree_x", self.ffd.degree[0].to_string());
        kv("ffd.degree_y", self.ffd.degree[1].to_string());
        let so = &self.solver;
        kv("solver.nu", so.nu.to_string());
        kv("solver.dt", so.dt.to_string());
        kv("solver.period", so.period.to_string());
        kv("solver.n_cycles", so.n_cycles.to_string());
        kv("solver.piso_correctors", so.piso_correctors.to_string());
        kv("solver.linear_tol", so.linear_tol.to_string());
        kv("solver.div_tol", so.div_tol.to_string());
        kv("solver.max_linear_iters", so.max_linear_iters.to_string());
        kv("solver.q_ref", so.q_ref.to_string());
        kv("solver.flow_scale", so.flow_scale.to_string());
        kv(
            "solver.waveform",
            match &so.waveform {
                WaveformSpec::Pulse => "pulse".into(),
                WaveformSpec::Constant => "constant".into(),
                WaveformSpec::Csv(p) => p.display().to_string(),
            },
        );
        kv(
            "solver.inlet_profile",
            match so.inlet_profile {
                InletProfile::Parabolic => "parabolic".into(),
                InletProfile::Uniform => "uniform".into(),
            },
        );
        kv("pod.n_snapshots", self.pod.n_snapshots.to_string());
        kv("pod.delta", self.pod.delta.to_string());
        kv("pod.criterion", self.pod.criterion.name().into());
        kv(
            "pod.method",
            match self.pod.method {
                SvdMethod::Auto => "auto",
                SvdMethod::Direct => "direct",
                SvdMethod::Snapshots => "snapshots",
            }
            .into(),
        );
        kv("pod.center", self.pod.center.to_string());
        kv("ann.train_fraction", self.ann[0].train_fraction.to_string());
        for v in Variable::ALL {
            let t = &self.ann[v as usize];
            kv(&format!("ann.{v}.epochs"), t.epochs.to_string());
            kv(&format!("ann.{v}.learning_rate"), t.learning_rate.to_string());
            kv(&format!("ann.{v}.neurons"), t.neurons_per_layer.to_string());
            kv(&format!("ann.{v}.hidden_layers"), t.hidden_layers.to_string());
            kv(&format!("ann.{v}.activation"), t.activation.name().into());
            kv(&format!("ann.{v}.optimizer"), t.optimizer.name().into());
        }
        kv("study.snapshot_counts", join(self.study.snapshot_counts.iter().map(|n| n.to_string()).collect()));
        kv("study.deltas", join(self.study.deltas.iter().map(|d| d.to_string()).collect()));
        kv("study.ratio_band", self.study.ratio_band.to_string());
        kv("study.eval_fraction", self.study.eval_fraction.to_string());
        kv("study.speedup_calls", self.study.speedup_calls.to_string());
        kv("study.min_speedup", self.study.min_speedup.to_string());
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
