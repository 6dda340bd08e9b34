use std::path::Path;
use std::process::{Command, Output};

use slowfast::io::{grid_paths, parse_report_rows, read_value_grid};

fn slowfast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .args(args)
        .env("SLOWFAST_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn bundled(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(row: &[(String, f64)], key: &str) -> f64 {
    row.iter().find(|(k, _)| k == key).unwrap().1
}

#[test]
fn too_few_samples_is_a_validation_error() {
    let o = slowfast(&["run", "--set", "sampling.n=1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sampling"));
}

#[test]
fn malformed_config_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    std::fs::write(&p, "[model\nbeta = 1\n").unwrap();
    let o = slowfast(&["run", "-c", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_key_is_rejected() {
    let o = slowfast(&["run", "--set", "sampling.paths=10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn both_mode_reports_plain_row_first_on_one_seed() {
    let text = stdout(&slowfast(&[
        "run",
        "-c",
        &bundled("both_beta1_eps0.1.cfg"),
        "--set",
        "sampling.n=300",
    ]));
    let rows = parse_report_rows(&text);
    assert_eq!(rows.len(), 2);
    assert_eq!(field(&rows[0], "seed"), field(&rows[1], "seed"));
    assert!(field(&rows[0], "reU") > field(&rows[1], "reU"));
}

#[test]
fn single_eps_sweep_matches_run() {
    let set = ["--set", "sampling.n=40"];
    let run = stdout(&slowfast(&["run", set[0], set[1]]));
    let sweep = stdout(&slowfast(&["sweep", set[0], set[1], "--eps", "0.1"]));
    assert_eq!(parse_report_rows(&run), parse_report_rows(&sweep));
}

#[test]
fn empty_sweep_is_a_validation_error() {
    let o = slowfast(&["sweep", "--set", "sweep.epsilons=[]"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn increasing_sweep_is_a_validation_error() {
    let o = slowfast(&["sweep", "--eps", "0.01,0.1", "--set", "sampling.n=10"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn surface_has_the_lattice_shape() {
    let text = stdout(&slowfast(&[
        "surface",
        "--set",
        "surface.n_s=3",
        "--set",
        "surface.n_x=5",
    ]));
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "s,x,u1");
    assert_eq!(body.len(), 1 + 15);
}

#[test]
fn surface_vanishes_without_cost() {
    let text = stdout(&slowfast(&[
        "surface",
        "-c",
        &bundled("martingale_h0.cfg"),
        "--set",
        "surface.n_s=4",
    ]));
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let u: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(u, 0.0, "{line}");
    }
}

#[test]
fn output_header_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    stdout(&slowfast(&[
        "run",
        "--set",
        "sampling.n=30",
        "--set",
        "sampling.seed=99",
        "-o",
        a.to_str().unwrap(),
    ]));
    stdout(&slowfast(&[
        "run",
        "-c",
        a.to_str().unwrap(),
        "-o",
        b.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn solve_writes_a_readable_grid() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("phi0");
    let listed = stdout(&slowfast(&[
        "solve",
        "--set",
        "pde.n_x=201",
        "--set",
        "pde.m=100",
        "-o",
        stem.to_str().unwrap(),
    ]));
    assert_eq!(listed.lines().count(), 4);
    for p in grid_paths(&stem) {
        assert!(p.exists(), "{}", p.display());
    }
    let g = read_value_grid(&stem).unwrap();
    let phi = g.phi_initial(-1.0);
    assert!(phi > 0.0 && phi < 1.0, "{phi}");
}

#[test]
fn version_flag_works() {
    let text = stdout(&slowfast(&["--version"]));
    assert!(text.starts_with("slowfast 0.1.0"));
}
