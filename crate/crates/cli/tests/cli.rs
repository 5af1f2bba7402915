use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use ecbound_cli::run::{comparable_lines, csv_body};
use ecbound_cli::{config_from_csv, echo, parse_config, run_command, Command, EnsembleConfig, RunError, RunOptions};

const THREE_GPP: &str = "ensemble = \"raptor\"
inner_rate = 0.8
outer_rate = 0.99

[degree_distribution]
1 = 0.0098
2 = 0.4590
3 = 0.2110
4 = 0.1134
10 = 0.1113
11 = 0.0799
40 = 0.0156
";

const MINIMAL: &str = "ensemble = \"random_linear\"\nrate = 0.5\nfield_order = 2\nepsilon = \"0.05:0.45:0.05\"\n";

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_ecbound"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, extra: &[&str]) -> Output {
    bin().args(args).arg("--config").arg(config).args(extra).output().unwrap()
}

#[test]
fn minimal_random_linear_config() {
    let cfg = parse_config(MINIMAL, None).unwrap();
    assert_eq!(cfg.epsilon.len(), 9);
    assert_eq!(cfg.epsilon[0], 0.05);
    assert_eq!(cfg.epsilon[8], 0.45);
    assert!(matches!(cfg.ensemble, EnsembleConfig::RandomLinear(p) if p.rate == 0.5 && p.field_order == 2));
}

#[test]
fn three_gpp_config_is_valid() {
    let cfg = parse_config(THREE_GPP, None).unwrap();
    let EnsembleConfig::Raptor(r) = &cfg.ensemble else {
        panic!("expected raptor")
    };
    let sum: f64 = r.omega.terms().iter().map(|t| t.1).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert_eq!(r.omega.terms().iter().map(|t| t.0).collect::<Vec<_>>(), [1, 2, 3, 4, 10, 11, 40]);
}

#[test]
fn constraint_errors() {
    let short = THREE_GPP.replace("40 = 0.0156", "40 = 0.0156\n5 = -0.0")
        .replace("2 = 0.4590", "2 = 0.3590");
    let e = parse_config(&short, None).unwrap_err();
    assert!(e.message.contains("sum"), "{e}");
    assert!(e.line.is_some());
    assert!(parse_config("ensemble = \"random_linear\"\n", None).is_err());
    assert!(parse_config("ensemble = \"ldpc\"\nrate = 0.5\n", None).is_err());
    assert!(parse_config("ensemble = \"random_linear\"\nrate = 0.5\ninner_rate = 0.8\n", None).is_err());
    assert!(parse_config("ensemble = \"random_linear\"\nrate = 0.5\nepsilon = [0.3, 0.2]\n", None).is_err());
    assert!(parse_config("ensemble = \"random_linear\"\nrate = 0.5\nn = 0\n", None).is_err());
    assert!(parse_config("ensemble = \"random_linear\"\nrate = 0.5\n[solver]\nfoo = 1\n", None).is_err());
    let e = parse_config("ensemble = \"random_linear\"\nrate = 0.5\nfield_order = 1\n", None).unwrap_err();
    assert_eq!(e.line, Some(3));
}

#[test]
fn echo_round_trips() {
    for text in [MINIMAL, THREE_GPP] {
        let mut cfg = parse_config(text, None).unwrap();
        cfg.n = vec![100, 200];
        cfg.seed = 42;
        cfg.solver.bisection_tol = 1e-11;
        assert_eq!(parse_config(&echo(&cfg), None).unwrap(), cfg);
    }
}

#[test]
fn csv_metadata_round_trips() {
    let mut cfg = parse_config(MINIMAL, None).unwrap();
    cfg.n = vec![32];
    let csv = run_command(Command::FiniteBound, &cfg, &RunOptions::default()).unwrap();
    assert_eq!(config_from_csv(&csv).unwrap(), cfg);
    assert!(csv.starts_with(&format!("# tool = ecbound {}\n", env!("CARGO_PKG_VERSION"))));
    let body = csv_body(&csv);
    assert_eq!(body[0], "epsilon,n,bound,log2_bound");
    assert_eq!(body.len(), 10);
}

#[test]
fn threshold_random_linear_is_one_minus_rate() {
    let cfg = parse_config(MINIMAL, None).unwrap();
    let csv = run_command(Command::Threshold, &cfg, &RunOptions::default()).unwrap();
    let body = csv_body(&csv);
    assert_eq!(body[0], "delta_star,method,lambda_hat,residual_f1,residual_f2,useful");
    assert!(body[1].starts_with("0.5,closed_form,"));
}

#[test]
fn threshold_three_gpp_row() {
    let cfg = parse_config(THREE_GPP, None).unwrap();
    let opts = RunOptions {
        cross_check: true,
        timestamp: None,
    };
    let csv = run_command(Command::Threshold, &cfg, &opts).unwrap();
    let body = csv_body(&csv);
    let row: Vec<&str> = body[1].split(',').collect();
    assert!((row[0].parse::<f64>().unwrap() - 0.090771).abs() < 1e-4);
    assert!((row[2].parse::<f64>().unwrap() - 0.009951).abs() < 1e-4);
    assert!(body[2].contains(",bisection,"));
}

#[test]
fn exponent_cross_check_column() {
    let cfg = parse_config(MINIMAL, None).unwrap();
    let opts = RunOptions {
        cross_check: true,
        timestamp: None,
    };
    let csv = run_command(Command::Exponent, &cfg, &opts).unwrap();
    let body = csv_body(&csv);
    assert_eq!(body[0], "epsilon,E_G,argmin_delta,closed_form,abs_diff");
    for line in &body[1..] {
        let d: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(d < 1e-6);
    }
    let raptor = parse_config(&format!("{THREE_GPP}"), None).unwrap();
    let err = run_command(Command::Exponent, &raptor, &opts).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn command_preconditions_map_to_config_errors() {
    let cfg = parse_config(MINIMAL, None).unwrap();
    let e = run_command(Command::Simulate, &cfg, &RunOptions::default()).unwrap_err();
    assert!(matches!(e, RunError::Config(_)));
    let raptor = parse_config(THREE_GPP, None).unwrap();
    let e = run_command(Command::FiniteBound, &raptor, &RunOptions::default()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.toml", MINIMAL);
    let out = run(&["threshold"], &good, &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.5,closed_form"));

    let bad = write(dir.path(), "bad.toml", "ensemble = \"random_linear\"\nrate = 0.5\nbogus = 3\n");
    let out = run(&["threshold"], &bad, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["threshold"], &missing, &[]).status.code(), Some(2));

    let stuck = write(
        dir.path(),
        "stuck.toml",
        &format!("{THREE_GPP}\n[solver]\nsystem_tol = 1e-30\n"),
    );
    assert_eq!(run(&["threshold"], &stuck, &[]).status.code(), Some(3));

    let out = bin()
        .args(["threshold", "--config"])
        .arg(&good)
        .env("ECBOUND_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.toml", &format!("{MINIMAL}n = 50\ntrials = 100\n"));
    let target = dir.path().join("out.csv");
    for cmd in ["exponent", "threshold", "finite-bound", "simulate"] {
        let out = run(&[cmd], &cfg, &["--dry-run", "--out", target.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        assert!(text.contains("dry run"));
        assert!(text.contains("# config: ensemble = \"random_linear\""));
        assert!(!target.exists());
    }
    let nogrid = write(dir.path(), "nogrid.toml", "ensemble = \"random_linear\"\nrate = 0.5\n");
    assert_eq!(run(&["simulate"], &nogrid, &["--dry-run"]).status.code(), Some(2));
}

#[test]
fn simulate_output_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.toml", "ensemble = \"random_linear\"\nrate = 0.5\nfield_order = 3\nepsilon = [0.0, 0.3]\nn = 24\ntrials = 2000\nseed = 3\n");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    assert!(run(&["simulate"], &cfg, &["--out", a.to_str().unwrap()]).status.success());
    assert!(run(&["simulate"], &cfg, &["--out", b.to_str().unwrap()]).status.success());
    assert!(run(&["simulate"], &cfg, &["--out", c.to_str().unwrap(), "--seed", "4"]).status.success());
    let (a, b, c) = (
        std::fs::read_to_string(a).unwrap(),
        std::fs::read_to_string(b).unwrap(),
        std::fs::read_to_string(c).unwrap(),
    );
    assert!(a.contains("# timestamp = "));
    assert_eq!(comparable_lines(&a), comparable_lines(&b));
    assert_ne!(csv_body(&a), csv_body(&c));
    let body = csv_body(&a);
    assert_eq!(body[0], "epsilon,n,trials,failures,p_hat,ci,seed");
    let first: Vec<&str> = body[1].split(',').collect();
    assert_eq!(&first[..5], ["0", "24", "2000", "0", "0"]);
    // No temporary files are left behind.
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 4);
}

#[test]
fn output_key_in_config_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fb.toml", &format!("{MINIMAL}n = 16\noutput = \"bound.csv\"\n"));
    let out = run(&["finite-bound"], &cfg, &[]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("bound.csv")).unwrap();
    assert_eq!(csv_body(&text).len(), 10);
}

#[test]
fn user_shape_file_threshold() {
    let dir = tempfile::tempdir().unwrap();
    // Tabulated binary random linear shape at rate 1/2.
    let mut table = String::from("# omega G\n");
    for i in 0..=400 {
        let w = i as f64 / 400.0;
        let hb = if w == 0.0 || w == 1.0 { 0.0 } else { -w * w.log2() - (1.0 - w) * (1.0 - w).log2() };
        table.push_str(&format!("{w} {}\n", hb - 0.5));
    }
    write(dir.path(), "shape.txt", &table);
    let cfg = write(
        dir.path(),
        "user.toml",
        "ensemble = \"user_shape_file\"\nrate = 0.5\nshape_file = \"shape.txt\"\n",
    );
    let out = run(&["threshold"], &cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let row: Vec<&str> = csv_body(&text)[1].split(',').collect();
    assert!((row[0].parse::<f64>().unwrap() - 0.5).abs() < 1e-3);
    assert_eq!(row[1], "bisection");
}
