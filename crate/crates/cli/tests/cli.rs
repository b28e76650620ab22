use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
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
study.deltas = 0.9, 0.999
study.speedup_calls = 10
ann.train_fraction = 0.8
ann.pressure.epochs = 200
ann.pressure.neurons = 8
ann.velocity.epochs = 200
ann.velocity.neurons = 8
ann.wss.epochs = 200
ann.wss.neurons = 8
";

fn romforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_romforge")).args(args).env("ROMFORGE_THREADS", "1").output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn no_arguments_prints_usage() {
    let o = romforge(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_succeeds() {
    let o = romforge(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["mesh", "deform", "simulate", "pod", "train", "evaluate", "study", "report"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(romforge(&["frobnicate"]).status.code(), Some(1));
    let o = romforge(&["mesh"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
    assert_eq!(romforge(&["study", "--kind", "everything", "--config", "x"]).status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_romforge")).args(["mesh", "--config", &cfg]).env("ROMFORGE_THREADS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.cfg");
    let o = romforge(&["mesh", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let bad = write_config(dir.path(), "bad.cfg", "mesh.nx = many\n");
    let o = romforge(&["mesh", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mesh.nx"));
    let out = dir.path().join("out");
    let good = write_config(dir.path(), "tiny.cfg", TINY);
    // Nothing has been simulated yet.
    let o = romforge(&["pod", "--config", &good, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pod"));
}

#[test]
fn stages_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    for stage in ["mesh", "deform", "simulate", "pod", "train"] {
        let o = romforge(&[stage, "--config", &cfg, "--out-dir", out_s, "--quiet"]);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    for f in ["snapshots/manifest.csv", "basis/pressure.bin", "models/wss.bin", "reports/fom_timing.csv", "provenance.txt", "manifest.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    let o = romforge(&["evaluate", "--time", "0.03", "--config", &cfg, "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("fields/pressure.bin").exists());
    assert!(out.join("fields/rom.vtk").exists());
    assert!(!stderr(&o).contains("outside"));

    let o = romforge(&["evaluate", "--time", "-0.01", "--config", &cfg, "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("outside"));

    let o = romforge(&["report", "--config", &cfg, "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("speedup"));
    assert!(out.join("reports/speedup.csv").exists());

    let o = romforge(&["study", "--kind", "snapshots", "--config", &cfg, "--out-dir", out_s, "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("reports/snapshot_study.csv").exists());
}

#[test]
fn artifacts_from_another_mesh_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let o = romforge(&["offline", "--config", &cfg, "--out-dir", out_s, "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("reports/summary.csv").exists());

    let other = write_config(dir.path(), "other.cfg", &TINY.replace("ffd.severity = 0.3", "ffd.severity = 0.4"));
    let o = romforge(&["evaluate", "--config", &other, "--out-dir", out_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mesh"), "{}", stderr(&o));
}

#[test]
fn seed_override_changes_models_only_through_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.cfg", TINY);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = romforge(&["offline", "--config", &cfg, "--out-dir", out.to_str().unwrap(), "--seed", seed, "--quiet"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (std::fs::read(out.join("basis/pressure.bin")).unwrap(), std::fs::read(out.join("models/pressure.bin")).unwrap())
    };
    let (ba, ma) = run("a", "1");
    let (bb, mb) = run("b", "1");
    let (bc, mc) = run("c", "2");
    assert_eq!((&ba, &ma), (&bb, &mb));
    assert_eq!(ba, bc);
    assert_ne!(ma, mc);
}
