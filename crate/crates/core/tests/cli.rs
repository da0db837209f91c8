use std::path::Path;
use std::process::Command;

use overlap_sde::harness::{Ensemble, RunConfig, Target};
use overlap_sde::models::ModelKind;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_overlap-sde"))
}

fn quick_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::default();
    cfg.grid.subgrid = 8;
    cfg.noise.modes = 8;
    cfg.spde.dt = Some(1e-3);
    cfg.spde.horizon = 0.02;
    cfg.ensemble.members = 4;
    cfg.ensemble.reference_points = Some(128);
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn simulate_writes_stats_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let out = dir.path().join("out");
    let status = cli()
        .args([
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "simulate",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for f in [
        "manifest.json",
        "stats_reference.csv",
        "stats_holistic.csv",
        "stats_conventional-fd.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
}

#[test]
fn invalid_input_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[grid]\nlength = -1.0\n").unwrap();
    let status = cli()
        .args(["--config", bad.to_str().unwrap(), "eig-sweep"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = cli().args(["--sweep", "gamma=0.5", "converge"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn ensembles_are_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&quick_config(dir.path())).unwrap();
    let targets = vec![Target::Reference, Target::Model(ModelKind::Holistic)];
    let a = Ensemble::new(cfg.clone(), targets.clone()).unwrap().run(None).unwrap();
    let b = Ensemble::new(cfg, targets).unwrap().run(None).unwrap();
    assert_eq!(a.records, b.records);
}
