//! Offline/online orchestration, convergence studies and timing reports.
//!
//! Output directory layout:
//!
//! ```text
//! manifest.csv     role,variable,path of every artifact below
//! provenance.txt   config hash, seed, creation time
//! config.txt       canonical configuration
//! snapshots/       FOM snapshots and their manifest
//! basis/           truncated POD basis per variable
//! models/          trained network per variable
//! reports/         CSV reports
//! fields/          reconstructed fields and VTK output
//! ```

mod config;
mod offline;
mod online;
mod study;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, FfdConfig, MeshConfig, PodConfig, SolverSection, StudyConfig, WaveformSpec};
pub use offline::{
    build_geometry, build_rom, offline, read_fom_timing, run_geometry, run_pod, run_simulation, run_training, simulate,
    write_manifest, FomRun, Geometry, OfflineRun, TrainedRom,
};
pub use online::{load_artifacts, online_evaluate, run_evaluation, OnlineResult, Provenance, RomArtifacts, VariableRom};
pub use study::{
    error_decomposition, evaluate_errors, report_speedup, study_fom_count, study_mode_convergence,
    study_snapshot_convergence, ErrorCurve, ModeStudy, RomCache, SnapshotStudy, SpeedupReport, StudyRow,
};

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshots(&self) -> PathBuf {
        self.root.join("snapshots")
    }

    pub fn snapshot_manifest(&self) -> PathBuf {
        self.snapshots().join("manifest.csv")
    }

    pub fn basis(&self, v: crate::pod::Variable) -> PathBuf {
        self.root.join("basis").join(format!("{v}.bin"))
    }

    pub fn model(&self, v: crate::pod::Variable) -> PathBuf {
        self.root.join("models").join(format!("{v}.bin"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn field(&self, name: &str) -> PathBuf {
        self.root.join("fields").join(name)
    }

    pub fn sub(&self, name: &str) -> OutDir {
        OutDir::new(self.root.join(name))
    }

    /// Creates the directory skeleton.
    pub fn create(&self) -> crate::Result<()> {
        for d in ["snapshots", "basis", "models", "reports", "fields"] {
            let p = self.root.join(d);
            std::fs::create_dir_all(&p).map_err(|e| crate::Error::io(&p, e))?;
        }
        Ok(())
    }
}
