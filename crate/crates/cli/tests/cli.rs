use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use koopman_hjb_cli::output::read_table;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_koopman-hjb"));
    c.env("KOOPMAN_HJB_THREADS", "1");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn solve_into(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn linear_solve_matches_riccati_quadratic() {
    let dir = TempDir::new().unwrap();
    let out = solve_into(&config("lqr_scalar.toml"), dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let grid = read_table(&dir.path().join("value_grid.csv")).unwrap();
    assert_eq!(grid.header, vec!["x1", "v", "u"]);
    let p = 2f64.sqrt() - 1.0;
    for row in &grid.rows {
        assert!((row[1] - p * row[0] * row[0]).abs() <= 1e-4 * p);
        assert!((row[2] + p * row[0]).abs() <= 1e-3 * p);
    }
    let trace = read_table(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.header, vec!["iteration", "residual", "change", "abscissa", "damping"]);
    let sv = read_table(&dir.path().join("singular_values.csv")).unwrap();
    assert_eq!(sv.header, vec!["index", "sigma"]);
}

#[test]
fn solve_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let cfg = config("double_integrator.toml");
    assert_eq!(code(&solve_into(&cfg, a.path(), &["--allow-boundary"])), 0);
    assert_eq!(code(&solve_into(&cfg, b.path(), &["--allow-boundary"])), 0);
    for f in ["singular_values.csv", "value_grid.csv", "trace.csv", "model.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn config_errors_exit_2_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    let broken = write_config(&dir, "broken.toml", "[domain]\nlower = [-1.0\n");
    let out = run(&["solve", "--config", broken.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line"), "{}", stderr(&out));

    let text = std::fs::read_to_string(config("lqr_scalar.toml")).unwrap();
    let unknown = write_config(&dir, "unknown.toml", &text.replace("degree = 3", "degree = 3\nknots = 4"));
    let out = run(&["solve", "--config", unknown.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("knots"), "{}", stderr(&out));

    let out = run(&["solve", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn boundary_violation_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = solve_into(&config("double_integrator.toml"), dir.path(), &[]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("--allow-boundary"));
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn non_convergence_exits_4_and_keeps_trace() {
    let dir = TempDir::new().unwrap();
    let text = std::fs::read_to_string(config("vanderpol_small.toml"))
        .unwrap()
        .replace("max_iter = 50", "max_iter = 2");
    let cfg = write_config(&dir, "short.toml", &text);
    let out = solve_into(&cfg, dir.path(), &[]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let trace = read_table(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.rows.len(), 2);
    assert!(!dir.path().join("model.json").exists());
}

#[test]
fn lqr_check_exit_codes() {
    let dir = TempDir::new().unwrap();
    for (cfg, expect) in [
        ("lqr_scalar.toml", 0),
        ("double_integrator.toml", 0),
        ("vanderpol_small.toml", 2),
    ] {
        let out = run(&["lqr-check", "--config", config(cfg).to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&out), expect, "{cfg}: {}", stderr(&out));
    }
    let table = read_table(&dir.path().join("lqr_check.csv")).unwrap();
    assert_eq!(table.header, vec!["x1", "x2", "v", "v_riccati", "u", "u_riccati"]);
}

#[test]
fn validate_linear_run() {
    let dir = TempDir::new().unwrap();
    let cfg = config("lqr_scalar.toml");
    assert_eq!(code(&solve_into(&cfg, dir.path(), &[])), 0);
    let model = dir.path().to_str().unwrap();
    let out = run(&["validate", "--config", cfg.to_str().unwrap(), "--model", model]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_table_text(&dir.path().join("validation.csv"));
    assert!(report.contains("cost_gap_max") && report.contains("hessian_gap"));
    assert!(dir.path().join("hjb_residuals.csv").exists());

    // No trajectories requested: the cost check is reported as absent.
    let text = std::fs::read_to_string(&cfg).unwrap().replace("n_trajectories = 5", "n_trajectories = 0");
    let other = TempDir::new().unwrap();
    let cfg0 = write_config(&other, "none.toml", &text);
    let out = run(&["validate", "--config", cfg0.to_str().unwrap(), "--model", model, "--out", other.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(read_table_text(&other.path().join("validation.csv")).contains("cost_gap_max,absent,absent,1"));
}

fn read_table_text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn validate_without_model_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "validate",
        "--config",
        config("lqr_scalar.toml").to_str().unwrap(),
        "--model",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn truncated_vanderpol_model_fails_validation() {
    let dir = TempDir::new().unwrap();
    let cfg = config("vanderpol_small.toml");
    let out = solve_into(&cfg, dir.path(), &["--svg"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("decay.svg").exists());
    let model = dir.path().to_str().unwrap();
    let full = run(&["validate", "--config", cfg.to_str().unwrap(), "--model", model]);
    assert_eq!(code(&full), 0, "{}", stderr(&full));
    let trunc = TempDir::new().unwrap();
    let out = run(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--model",
        model,
        "--modes",
        "1",
        "--out",
        trunc.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("cost_gap_max"));
}

#[test]
fn plot_outputs() {
    let dir = TempDir::new().unwrap();
    let mut sv = String::from("index,sigma\n");
    for i in 1..=60 {
        sv.push_str(&format!("{i},{:.16e}\n", (-(i as f64) / 2.0).exp()));
    }
    std::fs::write(dir.path().join("singular_values.csv"), sv).unwrap();
    let mut grid = String::from("x1,x2,v,u\n");
    for i in 0..11 {
        for j in 0..11 {
            let (x, y) = (i as f64 / 5.0 - 1.0, j as f64 / 5.0 - 1.0);
            grid.push_str(&format!("{x},{y},{},{}\n", x * x + y * y, -y));
        }
    }
    std::fs::write(dir.path().join("value_grid.csv"), grid).unwrap();

    let p = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["plot", p])), 0);
    let decay = std::fs::read_to_string(dir.path().join("decay.svg")).unwrap();
    assert_eq!(decay.matches("<circle").count(), 60);
    let value = std::fs::read(dir.path().join("value.svg")).unwrap();
    assert_eq!(code(&run(&["plot", p])), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("decay.svg")).unwrap(), decay);
    assert_eq!(std::fs::read(dir.path().join("value.svg")).unwrap(), value);

    std::fs::write(dir.path().join("singular_values.csv"), "index,sigma\n").unwrap();
    assert_eq!(code(&run(&["plot", p])), 2);
    let empty = TempDir::new().unwrap();
    assert_eq!(code(&run(&["plot", empty.path().to_str().unwrap()])), 2);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let out = bin()
        .env("KOOPMAN_HJB_THREADS", "zero")
        .args(["plot", "."])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
