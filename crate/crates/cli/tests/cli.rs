use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lwspiral::{RunConfig, EXIT_CANT_CREATE, EXIT_HYPOTHESIS, EXIT_OK, EXIT_SOLVER, EXIT_THEOREM, EXIT_TOO_FEW_POINTS, EXIT_USAGE};

fn lwspiral(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lwspiral"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const GL: &str = r#"
[model]
name = "gl"
lambda_poly = [1.0, 0.0, -1.0]
omega_poly = [0.0, 0.0, -1.0]
n = 1
"#;

#[test]
fn validate_accepts_builtin_model() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lwspiral(&["validate"], dir.path())), EXIT_OK);
}

#[test]
fn validate_rejects_growing_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nname = \"bad\"\nlambda_poly = [1.0, 1.0]\nomega_poly = [0.0, 0.0, -1.0]\nn = 1\n",
    );
    assert_eq!(code(&lwspiral(&["validate", "-c", &cfg], dir.path())), EXIT_HYPOTHESIS);
}

#[test]
fn malformed_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing_n = write_config(
        dir.path(),
        "[model]\nname = \"gl\"\nlambda_poly = [1.0, 0.0, -1.0]\nomega_poly = [0.0, 0.0, -1.0]\n",
    );
    assert_eq!(code(&lwspiral(&["validate", "-c", &missing_n], dir.path())), EXIT_USAGE);
    let unknown = write_config(dir.path(), &format!("{GL}\n[grid]\nwidth = 3\n"));
    assert_eq!(code(&lwspiral(&["validate", "-c", &unknown], dir.path())), EXIT_USAGE);
    assert_eq!(code(&lwspiral(&["frobnicate"], dir.path())), EXIT_USAGE);
    assert_eq!(code(&lwspiral(&["series", "--N", "10"], dir.path())), EXIT_USAGE);
}

#[test]
fn series_writes_hashed_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = lwspiral(&["series", "--R", "500", "--N", "4500", "--K", "1"], dir.path());
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["leading_order.csv", "series_order_1.csv", "series_summary.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let mut lines = text.lines();
        let first = lines.next().unwrap();
        assert!(first.starts_with("# config_sha256=") && first.len() == "# config_sha256=".len() + 64, "{name}: {first}");
        assert!(lines.next().unwrap().contains(','), "{name} lacks a header");
    }
}

#[test]
fn small_domain_series_signals_violation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lwspiral(&["series", "--R", "10", "--N", "400"], dir.path())), EXIT_THEOREM);
}

#[test]
fn repeated_series_runs_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(code(&lwspiral(&["series", "--R", "500", "--N", "4500", "--K", "2"], d.path())), EXIT_OK);
    }
    for name in ["leading_order.csv", "series_order_1.csv", "series_order_2.csv", "series_summary.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn solve_one_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = lwspiral(&["solve-one", "--q", "0.4"], dir.path());
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let profile = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().starts_with("profile_q"))
        .expect("profile written");
    let text = fs::read_to_string(profile.path()).unwrap();
    assert_eq!(text.lines().nth(1), Some("r,f,fp,v"));
}

#[test]
fn solve_one_out_of_range_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lwspiral(&["solve-one", "--q", "0.9"], dir.path())), EXIT_USAGE);
}

#[test]
fn unusable_grid_is_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lwspiral(&["series", "--R", "4000", "--N", "300"], dir.path())), EXIT_SOLVER);
    assert!(dir.path().join("diagnostics.txt").exists());
}

#[test]
fn zeroth_order_only_writes_leading_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lwspiral(&["series", "--K", "0", "--R", "100", "--N", "4000"], dir.path())), EXIT_OK);
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["leading_order.csv", "series_summary.csv"]);
    let summary = fs::read_to_string(dir.path().join("series_summary.csv")).unwrap();
    let omega0: f64 = summary.lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(omega0, -1.0);
}

#[test]
fn sweep_with_one_point_cannot_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{GL}\n[finiteq]\nq_list = [0.5]\n"));
    assert_eq!(code(&lwspiral(&["sweep-fit", "-c", &cfg], dir.path())), EXIT_TOO_FEW_POINTS);
}

#[test]
fn sweep_fit_reports_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let out = lwspiral(&["sweep-fit"], dir.path());
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.path().join("fit_report.csv")).unwrap();
    let b: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("B,"))
        .expect("B row")
        .parse()
        .unwrap();
    assert!((1.509..=1.668).contains(&b), "{b}");
    assert!(report.lines().any(|l| l == "points,7"));
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().nth(1), Some("q,v_inf,Omega,f_inf,newton_iters,bc_res_max"));
    assert_eq!(sweep.lines().count(), 9);
    for name in ["figure1.dat", "figure1.svg"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn unwritable_output_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&lwspiral(&["series", "--R", "100", "--N", "2000", "--K", "1"], &blocker.join("sub"))), EXIT_CANT_CREATE);
}

#[test]
fn hash_ignores_output_directory() {
    let mut a = RunConfig::ginzburg_landau();
    let mut b = a.clone();
    a.output_dir = "one".into();
    b.output_dir = "two".into();
    assert_eq!(a.hash(), b.hash());
    b.series.k = 2;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig::from_toml(&format!("{GL}\n[series]\nK = 2\n")).unwrap();
    assert_eq!(cfg.series.k, 2);
    assert_eq!(cfg.grid, RunConfig::ginzburg_landau().grid);
    assert!(RunConfig::from_toml(&format!("deterministic = false\n{GL}")).is_err());
}
