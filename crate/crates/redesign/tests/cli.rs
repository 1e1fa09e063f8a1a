use std::fs;
use std::path::Path;
use std::process::Command;

use redesign::cli::{cli_main, Cli};
use redesign::metrics::{read_metrics, MetricsRow, RowKind};
use redesign::{run_redesign, RedesignConfig};

const BIN: &str = env!("CARGO_BIN_EXE_lyapunov-redesign");

const SMALL: &str = "\
n_theta = 20
n_omega = 20
pretrain_steps = 200
m_iterations = 2
sgd_steps_r = 50
sgd_steps_p = 10
phases = 1
";

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(cli_main(["lyapunov-redesign"]), 2);
    assert_eq!(cli_main(["lyapunov-redesign", "frobnicate"]), 2);
    assert_eq!(cli_main(["lyapunov-redesign", "run", "--variant", "gains"]), 2);
    assert_eq!(cli_main(["lyapunov-redesign", "run", "--seed", "minus-one"]), 2);
    assert_eq!(cli_main(["lyapunov-redesign", "--help"]), 0);
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "gamma_r = 0.5\n").unwrap();
    let cfg = bad.to_str().unwrap();
    assert_eq!(cli_main(["lyapunov-redesign", "oracle", "--config", cfg]), 1);
    let missing = dir.path().join("none.csv");
    assert_eq!(cli_main(["lyapunov-redesign", "report", missing.to_str().unwrap()]), 1);
}

#[test]
fn flags_override_the_file() {
    use clap::Parser;
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "seed = 3\n");
    let cli = Cli::try_parse_from([
        "lyapunov-redesign",
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--variant",
        "slopes",
        "--no-monot",
        "--out",
        "elsewhere",
    ])
    .unwrap();
    let resolved = cli.common.resolve().unwrap();
    assert_eq!(resolved.seed, 9);
    assert_eq!(resolved.sat.trainable, [false, false, true, true]);
    assert_eq!(resolved.roa_hyper(1).lambda_monot, 0.0);
    assert_eq!(resolved.out_dir, Path::new("elsewhere"));
    assert_eq!(resolved.grid.n_theta, 20);
}

#[test]
fn oracle_prints_the_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("oracle");
    let output = Command::new(BIN)
        .args(["oracle", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let printed: f64 = String::from_utf8(output.stdout).unwrap().trim().parse().unwrap();
    assert!(printed > 0.02 && printed < 1.0, "{printed}");
    assert!(out.join("oracle.pgm").exists());
    assert!(out.join("oracle.csv").exists());
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = Command::new(BIN)
            .args(["run", "--seed", "1", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        files.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let out = dir.path().join("a");
    let status = Command::new(BIN)
        .args(["report", out.join("metrics.csv").to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    for table in ["fractions.csv", "levels.csv", "psi.csv"] {
        assert!(out.join("figures").join(table).exists(), "{table}");
    }
    let fractions = fs::read_to_string(out.join("figures/fractions.csv")).unwrap();
    // initial estimate plus two growth iterations
    assert_eq!(fractions.lines().count(), 1 + 3);
}

#[test]
fn zero_phases_leave_only_pretraining_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RedesignConfig::parse(&format!("{SMALL}phases = 0\n").replace("phases = 1\n", "")).unwrap();
    let out = run_redesign(&cfg, dir.path()).unwrap();
    assert!(out.phases.is_empty());
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].kind, RowKind::Initial);
    let checkpoints: Vec<_> = fs::read_dir(dir.path().join("checkpoints")).unwrap().collect();
    assert_eq!(checkpoints.len(), 1);
    assert!(dir.path().join("checkpoints/v_pretrain.bin").exists());
}

#[test]
fn a_run_logs_every_growth_iteration_and_update() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RedesignConfig::parse(&format!("{SMALL}phases = 2\n").replace("phases = 1\n", "")).unwrap();
    let out = run_redesign(&cfg, dir.path()).unwrap();
    let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    let logged: Vec<_> = out.rows.iter().map(|r| MetricsRow { wall_seconds: 0.0, ..r.clone() }).collect();
    assert_eq!(rows, logged);
    let growth = rows.iter().filter(|r| r.kind == RowKind::Growth).count();
    let policy = rows.iter().filter(|r| r.kind == RowKind::Policy).count();
    assert_eq!((growth, policy), (2 * 2, 2));
    for (i, r) in rows.iter().filter(|r| r.kind == RowKind::Policy).enumerate() {
        assert_eq!(r.phase, i + 1);
        assert!(r.oracle_fraction.is_some());
    }
    // crop bound between consecutive policies
    let psis: Vec<[f64; 4]> = rows
        .iter()
        .filter(|r| matches!(r.kind, RowKind::Initial | RowKind::Policy))
        .map(|r| [r.a, r.b, r.m_a, r.m_b])
        .collect();
    for w in psis.windows(2) {
        for k in 0..4 {
            assert!((w[1][k] - w[0][k]).abs() <= cfg.crop_radius + 1e-12);
        }
    }
    for name in ["heatmaps/initial.ppm", "heatmaps/phase02.ppm", "masks/oracle_phase02.pgm", "checkpoints/v_phase02.bin", "config.cfg", "timing.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let dumped = RedesignConfig::load(&dir.path().join("config.cfg")).unwrap();
    assert_eq!(dumped, cfg);
}
