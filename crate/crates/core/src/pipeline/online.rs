use std::path::Path;
use std::time::{Duration, Instant};

use super::config::ExperimentConfig;
use super::offline::build_geometry;
use super::OutDir;
use crate::ann::{read_model, MlpModel};
use crate::error::{Error, Result};
use crate::field::{Field, WssField};
use crate::io::{write_field, write_vtk, write_wss};
use crate::mesh::StructuredMesh;
use crate::pod::{read_basis, PodBasis, Variable};

/// Basis and coefficient network of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableRom {
    pub basis: PodBasis,
    pub model: MlpModel,
}

impl VariableRom {
    /// Checks that the network predicts one coefficient per mode.
    pub fn new(basis: PodBasis, model: MlpModel) -> Result<Self> {
        if model.n_outputs() != basis.rank() || model.n_inputs() != 1 {
            return Err(Error::invalid(format!(
                "{} network maps {} inputs to {} outputs, basis has {} modes",
                basis.variable(),
                model.n_inputs(),
                model.n_outputs(),
                basis.rank()
            )));
        }
        Ok(Self { basis, model })
    }

    pub fn variable(&self) -> Variable {
        self.basis.variable()
    }

    /// `sum_j pi_j(t) w_j` (plus the stored mean, if any).
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        self.basis.reconstruct(&self.model.forward(t)?)
    }
}

/// Where an artifact set came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub created_unix: u64,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig, created_unix: u64) -> Self {
        Self { config_hash: cfg.hash(), seed: cfg.seed, created_unix }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = format!(
            "config_hash = {}\nseed = {}\ncreated_unix = {}\nversion = {}\n",
            self.config_hash,
            self.seed,
            self.created_unix,
            env!("CARGO_PKG_VERSION")
        );
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let get = |key: &str| {
            text.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim().to_string())
                .ok_or_else(|| Error::format(path, format!("missing `{key}`")))
        };
        let num = |key: &str| get(key)?.parse().map_err(|_| Error::format(path, format!("bad `{key}`")));
        Ok(Self { config_hash: get("config_hash")?, seed: num("seed")?, created_unix: num("created_unix")? })
    }
}

/// Trained reduced model of every variable on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RomArtifacts {
    pub mesh_id: u64,
    pub period: f64,
    roms: Vec<VariableRom>,
    pub provenance: Provenance,
}

impl RomArtifacts {
    /// Expects one ROM per variable in [`Variable::ALL`] order, all on one mesh.
    pub fn new(roms: Vec<VariableRom>, period: f64, provenance: Provenance) -> Result<Self> {
        if roms.len() != Variable::ALL.len() || roms.iter().zip(Variable::ALL).any(|(r, v)| r.variable() != v) {
            return Err(Error::invalid("artifacts need pressure, velocity and wss models in that order"));
        }
        let mesh_id = roms[0].basis.mesh_id();
        if roms.iter().any(|r| r.basis.mesh_id() != mesh_id) {
            return Err(Error::MeshMismatch("bases of different variables come from different meshes".into()));
        }
        if !(period > 0.0) {
            return Err(Error::invalid("cycle period must be positive"));
        }
        Ok(Self { mesh_id, period, roms, provenance })
    }

    pub fn rom(&self, v: Variable) -> &VariableRom {
        &self.roms[v as usize]
    }

    pub fn roms(&self) -> &[VariableRom] {
        &self.roms
    }
}

/// Reads bases, models and provenance from `out`, refusing artifacts built on
/// a different mesh than the one the configuration describes.
pub fn load_artifacts(cfg: &ExperimentConfig, out: &OutDir) -> Result<RomArtifacts> {
    let expected = build_geometry(cfg)?.mesh.checksum();
    let mut roms = Vec::with_capacity(3);
    for v in Variable::ALL {
        let basis = read_basis(out.basis(v))?;
        if basis.variable() != v {
            return Err(Error::format(out.basis(v), format!("holds a {} basis", basis.variable())));
        }
        if basis.mesh_id() != expected {
            return Err(Error::MeshMismatch(format!(
                "{v} basis was built on mesh {:016x} but the configuration describes mesh {expected:016x}",
                basis.mesh_id()
            )));
        }
        roms.push(VariableRom::new(basis, read_model(out.model(v))?)?);
    }
    RomArtifacts::new(roms, cfg.solver.period, Provenance::read(out.root().join("provenance.txt"))?)
}

/// Reconstructed fields at one time.
#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub time: f64,
    pub pressure: Field,
    pub velocity: Field,
    pub wss: WssField,
    /// Set when `time` lies outside the trained cycle `[0, T]`.
    pub warning: Option<String>,
    pub elapsed: Duration,
}

pub fn online_evaluate(artifacts: &RomArtifacts, t: f64) -> Result<OnlineResult> {
    let start = Instant::now();
    if !t.is_finite() {
        return Err(Error::invalid(format!("evaluation time {t} is not finite")));
    }
    let warning = (t < 0.0 || t > artifacts.period)
        .then(|| format!("t = {t} lies outside the trained cycle [0, {}]; the result is an extrapolation", artifacts.period));
    let p = artifacts.rom(Variable::Pressure);
    let u = artifacts.rom(Variable::Velocity);
    let w = artifacts.rom(Variable::Wss);
    let pressure = p.basis.to_field(p.evaluate(t)?, t)?;
    let velocity = u.basis.to_field(u.evaluate(t)?, t)?;
    let wss = w.basis.to_wss(w.evaluate(t)?, t)?;
    Ok(OnlineResult { time: t, pressure, velocity, wss, warning, elapsed: start.elapsed() })
}

/// Evaluates the ROM at `t` and writes binary fields and a VTK file to `fields/`.
pub fn run_evaluation(artifacts: &RomArtifacts, mesh: &StructuredMesh, t: f64, out: &OutDir) -> Result<OnlineResult> {
    let stage = |e: Error| e.in_stage("evaluation");
    if mesh.checksum() != artifacts.mesh_id {
        return Err(stage(Error::MeshMismatch("evaluation mesh differs from the artifacts' mesh".into())));
    }
    out.create().map_err(stage)?;
    let r = online_evaluate(artifacts, t).map_err(stage)?;
    if let Some(w) = &r.warning {
        log::warn!("{w}");
    }
    write_field(out.field("pressure.bin"), &r.pressure).map_err(stage)?;
    write_field(out.field("velocity.bin"), &r.velocity).map_err(stage)?;
    write_wss(out.field("wss.bin"), &r.wss).map_err(stage)?;
    write_vtk(out.field("rom.vtk"), mesh, &[("p", &r.pressure), ("U", &r.velocity)]).map_err(stage)?;
    Ok(r)
}
