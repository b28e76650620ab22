use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use romforge_core::pipeline::{self, ExperimentConfig, OutDir, RomCache};
use romforge_core::pod::{read_basis, Variable};
use romforge_core::{ffd, io, mesh, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "romforge", version, about = "POD + neural-network reduced order models of pulsatile stenosed-channel flow")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "romforge-out")]
    out_dir: PathBuf,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the undeformed channel mesh and report its quality.
    Mesh,
    /// Apply the stenosis to the mesh.
    Deform,
    /// Run the full-order solver and store the snapshots.
    Simulate,
    /// Compute the POD bases from stored snapshots.
    Pod,
    /// Train the coefficient networks on stored snapshots and bases.
    Train,
    /// Reconstruct the fields at one time from trained artifacts.
    Evaluate {
        /// Evaluation time in seconds; defaults to the configured fraction of the cycle.
        #[arg(long, allow_negative_numbers = true)]
        time: Option<f64>,
    },
    /// Run the convergence studies.
    Study {
        #[arg(long, value_enum, default_value_t = StudyKind::All)]
        kind: StudyKind,
    },
    /// Measure the online speedup over the full-order solver.
    Report,
    /// Run every offline stage and evaluate once.
    Offline,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum StudyKind {
    Modes,
    Snapshots,
    All,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().expect("checked before dispatch");
    let cfg = ExperimentConfig::load(path)?;
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write_run_files(cfg: &ExperimentConfig, out: &OutDir) -> Result<()> {
    let path = out.root().join("config.txt");
    std::fs::write(&path, cfg.to_text()).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    pipeline::Provenance::new(cfg, now_unix()).write(out.root().join("provenance.txt"))?;
    pipeline::write_manifest(out)
}

fn now_unix() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = OutDir::new(&cli.out_dir);
    match &cli.command {
        Command::Mesh => {
            out.create()?;
            let m = mesh::build_channel_mesh(cfg.mesh.length, cfg.mesh.height, cfg.mesh.nx, cfg.mesh.ny)?;
            let q = m.quality();
            ffd::write_quality_csv(out.report("base_mesh_quality.csv"), &q)?;
            io::write_vtk(out.field("base_mesh.vtk"), &m, &[])?;
            println!("mesh: {} cells, checksum {:016x}", m.n_cells(), m.checksum());
        }
        Command::Deform => {
            let g = pipeline::run_geometry(&cfg, &out)?;
            println!(
                "deformed mesh: {} cells, min volume {:.3e}, max non-orthogonality {:.1} deg, checksum {:016x}",
                g.mesh.n_cells(),
                g.quality.min_cell_volume,
                g.quality.max_non_orthogonality_deg,
                g.mesh.checksum()
            );
        }
        Command::Simulate => {
            let g = pipeline::run_geometry(&cfg, &out)?;
            let run = pipeline::run_simulation(&cfg, &g, cfg.pod.n_snapshots, &out)?;
            println!("simulated {} steps, {} snapshots, cycle times {:?} s", run.stats.steps, run.snapshots.len(), run.stats.cycle_seconds);
        }
        Command::Pod => {
            let snaps = romforge_core::fom::read_snapshots(out.snapshot_manifest()).map_err(|e| e.in_stage("pod"))?;
            for b in pipeline::run_pod(&cfg, &snaps, &out)? {
                println!("{}: {} of {} modes at delta {}", b.variable(), b.rank(), b.singular_values().len(), b.energy_delta());
            }
        }
        Command::Train => {
            let snaps = romforge_core::fom::read_snapshots(out.snapshot_manifest()).map_err(|e| e.in_stage("training"))?;
            let bases = Variable::ALL.iter().map(|&v| read_basis(out.basis(v))).collect::<Result<Vec<_>>>().map_err(|e| e.in_stage("training"))?;
            for t in pipeline::run_training(&cfg, &snaps, bases, &out)? {
                println!(
                    "{}: L = {}, final loss {:.3e}, validation {:.3e}",
                    t.rom.variable(),
                    t.rom.basis.rank(),
                    t.history.final_train,
                    t.history.final_validation
                );
            }
            write_run_files(&cfg, &out)?;
        }
        Command::Evaluate { time } => {
            let artifacts = pipeline::load_artifacts(&cfg, &out).map_err(|e| e.in_stage("evaluation"))?;
            let g = pipeline::build_geometry(&cfg)?;
            let t = time.unwrap_or(cfg.study.eval_fraction * cfg.solver.period);
            let r = pipeline::run_evaluation(&artifacts, &g.mesh, t, &out)?;
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
            println!("evaluated t = {t} s in {:.3} ms; fields written to {}", 1e3 * r.elapsed.as_secs_f64(), out.root().join("fields").display());
        }
        Command::Study { kind } => {
            let g = pipeline::run_geometry(&cfg, &out)?;
            let n = pipeline::study_fom_count(&cfg)?;
            let fom = pipeline::simulate(&cfg, &g.mesh, n).map_err(|e| e.in_stage("simulation"))?;
            let mut cache = RomCache::new();
            if matches!(kind, StudyKind::Modes | StudyKind::All) {
                let s = pipeline::study_mode_convergence(&cfg, &g.mesh, &fom, &mut cache, &out)?;
                for v in Variable::ALL {
                    let e: Vec<String> = s.mean_errors(v).iter().map(|(d, l, e)| format!("delta {d}: L = {l}, {e:.4e}")).collect();
                    println!("modes {v}: {} [{}]", e.join("; "), if s.is_monotone(v) { "non-increasing" } else { "NOT monotone" });
                }
            }
            if matches!(kind, StudyKind::Snapshots | StudyKind::All) {
                let s = pipeline::study_snapshot_convergence(&cfg, &g.mesh, &fom, &mut cache, &out)?;
                for v in Variable::ALL {
                    println!("snapshots {v}: max/min mean error {:.3} (band {})", s.ratio(v), s.band);
                }
            }
        }
        Command::Report => {
            let artifacts = pipeline::load_artifacts(&cfg, &out).map_err(|e| e.in_stage("report"))?;
            let stats = pipeline::read_fom_timing(out.report("fom_timing.csv")).map_err(|e| e.in_stage("report"))?;
            let r = pipeline::report_speedup(&artifacts, &stats, &cfg)?;
            r.write_csv(out.report("speedup.csv"))?;
            println!(
                "FOM cycle {:.3} s (previous {:.3} s), online median {:.4} ms (mean {:.4} ms, std {:.4} ms), speedup {:.3e} (target {})",
                r.fom_cycle_seconds,
                r.fom_previous_cycle_seconds,
                1e3 * r.online_median(),
                1e3 * r.online_mean(),
                1e3 * r.online_std(),
                r.ratio(),
                r.min_speedup
            );
        }
        Command::Offline => {
            let run = pipeline::offline(&cfg, &out)?;
            for t in &run.trained {
                println!("{}: L = {}, final loss {:.3e}", t.rom.variable(), t.rom.basis.rank(), t.history.final_train);
            }
        }
    }
    Ok(())
}

fn init_threads() -> std::result::Result<(), String> {
    if let Ok(s) = std::env::var("ROMFORGE_THREADS") {
        let n: usize = s.parse().map_err(|_| format!("ROMFORGE_THREADS must be a positive integer, got `{s}`"))?;
        if n == 0 {
            return Err("ROMFORGE_THREADS must be a positive integer, got `0`".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if cli.config.is_none() {
        eprintln!("error: --config <path> is required\n\nFor more information, try '--help'.");
        return ExitCode::from(1);
    }
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
