//! The four subcommands. Each returns an exit code; diagnostics go to stderr
//! through `log` and a final one-line summary goes to stdout.

use std::path::{Path, PathBuf};

use koopman_hjb::pipeline::{self, discretize};
use koopman_hjb::system::check_tangent_condition;
use koopman_hjb::validate::{
    compare_costs, decay_report, hessian_check, hjb_residual, riccati_reference, sample_grid,
    select_initial_states, CostComparison, TrajectoryExit,
};
use koopman_hjb::{ControlAffineSystem, Error, SosValueModel};
use nalgebra::{DMatrix, DVector};

use crate::config::{ConfigError, RunConfig};
use crate::output::{coordinate_header, num, read_table, write_csv, ModelFile, TraceWriter};
use crate::svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TANGENT: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

/// A failed command: exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, format!("configuration error: {e}"))
    }
}

fn io(e: std::io::Error) -> Failure {
    Failure::new(EXIT_CONFIG, format!("i/o error: {e}"))
}

fn solver_failure(e: Error) -> Failure {
    let code = match e {
        Error::NonConvergence { .. }
        | Error::Unstabilizable { .. }
        | Error::SpectralOverlap { .. }
        | Error::RiccatiStagnation { .. }
        | Error::NotStabilizable(_)
        | Error::SchurFailure => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    };
    Failure::new(code, e.to_string())
}

pub type Outcome = Result<i32, Failure>;

pub struct SolveArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub allow_boundary: bool,
    pub svg: bool,
}

fn output_dir(cfg: &RunConfig, out: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    std::fs::create_dir_all(&dir).map_err(io)?;
    Ok(dir)
}

fn tangent_gate(sys: &ControlAffineSystem, allow_boundary: bool) -> Result<(), Failure> {
    let report = check_tangent_condition(sys, 64).map_err(solver_failure)?;
    if report.satisfied() {
        return Ok(());
    }
    let (point, value) = &report.violating_points[0];
    let msg = format!(
        "drift does not point into the domain at {} boundary samples (first: {point:?}, outward component {value:e})",
        report.violating_points.len()
    );
    if allow_boundary {
        log::warn!("{msg}; continuing because of --allow-boundary");
        Ok(())
    } else {
        Err(Failure::new(EXIT_TANGENT, format!("{msg}; rerun with --allow-boundary to proceed")))
    }
}

fn value_grid_rows(model: &SosValueModel, per_axis: usize) -> Result<Vec<Vec<f64>>, Failure> {
    sample_grid(model.basis().domain(), per_axis, 0.0)
        .into_iter()
        .map(|z| {
            let v = model.evaluate_value(&z).map_err(solver_failure)?;
            let u = model.evaluate_feedback(&z).map_err(solver_failure)?;
            let mut row = z;
            row.push(v);
            row.push(u);
            Ok(row)
        })
        .collect()
}

pub fn cmd_solve(args: &SolveArgs) -> Outcome {
    let cfg = RunConfig::load(&args.config)?;
    let sys = cfg.system()?;
    tangent_gate(&sys, args.allow_boundary)?;
    let dir = output_dir(&cfg, &args.out)?;

    let mut trace = TraceWriter::create(&dir.join("trace.csv")).map_err(io)?;
    let mut trace_err = None;
    let sol = pipeline::solve(&sys, &cfg.discretization(), &cfg.solver_config(), |r| {
        if let Err(e) = trace.record(r) {
            trace_err.get_or_insert(e);
        }
    })
    .map_err(solver_failure)?;
    if let Some(e) = trace_err {
        return Err(io(e));
    }

    let model = &sol.model;
    write_csv(
        &dir.join("singular_values.csv"),
        &["index".to_string(), "sigma".to_string()],
        model.sigmas.iter().enumerate().map(|(i, s)| vec![(i + 1).to_string(), num(*s)]),
    )
    .map_err(io)?;
    let rows = value_grid_rows(model, cfg.output.value_grid)?;
    write_csv(
        &dir.join("value_grid.csv"),
        &coordinate_header(sys.dim(), &["v", "u"]),
        rows.iter().map(|r| r.iter().map(|x| num(*x)).collect::<Vec<_>>()),
    )
    .map_err(io)?;
    ModelFile::from_model(model, cfg.basis.n_grid)
        .save(&dir.join("model.json"))
        .map_err(io)?;
    if args.svg || cfg.output.emit_svg {
        plot_into(&dir)?;
    }
    println!(
        "converged in {} iterations (change {:.3e}); {} modes kept of N = {}; artifacts in {}",
        sol.trace.len(),
        sol.trace.last_change(),
        model.n_modes(),
        sol.disc.ops.n(),
        dir.display()
    );
    Ok(EXIT_OK)
}

pub struct ValidateArgs {
    pub config: PathBuf,
    pub model: PathBuf,
    pub out: Option<PathBuf>,
    pub modes: Option<usize>,
}

struct Check {
    name: &'static str,
    value: Option<f64>,
    threshold: Option<f64>,
    pass: bool,
}

impl Check {
    fn upper(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value: Some(value),
            threshold: Some(threshold),
            pass: value <= threshold,
        }
    }

    fn info(name: &'static str, value: Option<f64>) -> Self {
        Self {
            name,
            value,
            threshold: None,
            pass: true,
        }
    }
}

fn load_model(cfg: &RunConfig, sys: &ControlAffineSystem, dir: &Path) -> Result<SosValueModel, Failure> {
    let file = ModelFile::load(&dir.join("model.json")).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    if file.n_grid != cfg.basis.n_grid
        || file.degree != cfg.basis.degree
        || file.lower != cfg.domain.lower
        || file.upper != cfg.domain.upper
    {
        return Err(Failure::new(EXIT_CONFIG, "stored model does not match the configured basis"));
    }
    file.into_model(sys.b()).map_err(|e| Failure::new(EXIT_CONFIG, e))
}

/// Spectral abscissa of the discrete closed loop of `model`, recovering its
/// coordinate matrix from the stored spline coefficients.
fn discrete_abscissa(cfg: &RunConfig, sys: &ControlAffineSystem, model: &SosValueModel) -> Result<f64, Failure> {
    let disc = discretize(sys, &cfg.discretization()).map_err(solver_failure)?;
    let t = disc.riesz.synthesis();
    let gram = t.tr_mul(t);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Failure::new(EXIT_SOLVER, "synthesis matrix lost rank"))?;
    let a = chol.solve(&t.tr_mul(&model.raw_coeffs));
    let sig = DMatrix::from_diagonal(&DVector::from_column_slice(&model.sigmas));
    let s = &a * sig * a.transpose();
    let (a_cl, _) = disc.ops.closed_loop(&s);
    koopman_hjb::lyap::spectral_abscissa(&a_cl).map_err(solver_failure)
}

pub fn cmd_validate(args: &ValidateArgs) -> Outcome {
    let cfg = RunConfig::load(&args.config)?;
    let sys = cfg.system()?;
    let mut model = load_model(&cfg, &sys, &args.model)?;
    if let Some(k) = args.modes {
        model = model.truncated(k);
    }
    let dir = output_dir(&cfg, &args.out.clone().or_else(|| Some(args.model.clone())))?;
    let v = &cfg.validate;
    let mut checks = Vec::new();

    let rows: Vec<CostComparison> = if v.n_trajectories == 0 {
        Vec::new()
    } else {
        let z0s = select_initial_states(&model, 21, v.value_fraction, v.n_trajectories).map_err(solver_failure)?;
        compare_costs(&sys, &model, &z0s, v.t_final, v.rtol).map_err(solver_failure)?
    };
    if rows.is_empty() {
        checks.push(Check::info("cost_gap_max", None));
    } else {
        let worst = rows.iter().map(|r| r.rel_gap).fold(0.0, f64::max);
        let mut c = Check::upper("cost_gap_max", worst, v.max_cost_gap);
        c.pass &= rows.iter().all(|r| r.simulated_cost >= 0.0 && r.exit != TrajectoryExit::LeftDomain);
        checks.push(c);
    }
    let d = sys.dim();
    write_csv(
        &dir.join("trajectories.csv"),
        &(1..=d)
            .map(|k| format!("z{k}"))
            .chain(["simulated_cost", "value", "rel_gap", "reached_origin"].map(String::from))
            .collect::<Vec<_>>(),
        rows.iter().map(|r| {
            r.z0.iter()
                .map(|x| num(*x))
                .chain([
                    num(r.simulated_cost),
                    num(r.value),
                    num(r.rel_gap),
                    u8::from(r.exit == TrajectoryExit::Origin).to_string(),
                ])
                .collect::<Vec<_>>()
        }),
    )
    .map_err(io)?;

    let points = sample_grid(&cfg.hjb_box()?, v.hjb_sample_grid, 0.0);
    let hjb = hjb_residual(&sys, &model, &points).map_err(solver_failure)?;
    write_csv(
        &dir.join("hjb_residuals.csv"),
        &coordinate_header(d, &["residual", "normalized"]),
        hjb.points.iter().zip(&hjb.residuals).zip(&hjb.normalized).map(|((p, r), n)| {
            p.iter().map(|x| num(*x)).chain([num(*r), num(*n)]).collect::<Vec<_>>()
        }),
    )
    .map_err(io)?;
    checks.push(Check::upper("hjb_median_normalized", hjb.median_normalized, v.max_hjb_median));
    checks.push(Check::info("hjb_max_normalized", Some(hjb.max_normalized)));

    let hess = hessian_check(&sys, &model).map_err(solver_failure)?;
    checks.push(Check::upper("hessian_gap", hess.rel_gap, v.max_hessian_gap));

    let abscissa = discrete_abscissa(&cfg, &sys, &model)?;
    checks.push(Check::upper("closed_loop_abscissa", abscissa, 0.0));
    if abscissa >= 0.0 {
        checks.last_mut().unwrap().pass = false;
    }

    match decay_report(&model) {
        Ok(dec) => {
            checks.push(Check::info("decay_slope", Some(dec.slope)));
            checks.push(Check::info("noise_floor_index", dec.noise_floor_index.map(|i| (i + 1) as f64)));
        }
        Err(_) => {
            checks.push(Check::info("decay_slope", None));
            checks.push(Check::info("noise_floor_index", None));
        }
    }

    let opt = |x: Option<f64>| x.map_or_else(|| "absent".to_string(), num);
    write_csv(
        &dir.join("validation.csv"),
        &["check", "value", "threshold", "pass"].map(String::from),
        checks.iter().map(|c| {
            vec![
                c.name.to_string(),
                opt(c.value),
                opt(c.threshold),
                u8::from(c.pass).to_string(),
            ]
        }),
    )
    .map_err(io)?;

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        println!("validation passed ({} checks); tables in {}", checks.len(), dir.display());
        Ok(EXIT_OK)
    } else {
        println!("validation failed: {}", failed.join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}

pub struct LqrArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn cmd_lqr_check(args: &LqrArgs) -> Outcome {
    let cfg = RunConfig::load(&args.config)?;
    let sys = cfg.system()?;
    if !sys.is_linear() {
        return Err(Failure::new(
            EXIT_CONFIG,
            "lqr-check needs a linear system (linear drift, constant input, linear observables)",
        ));
    }
    let dir = output_dir(&cfg, &args.out)?;
    let p = riccati_reference(&sys).map_err(solver_failure)?;
    let sol = pipeline::solve(&sys, &cfg.discretization(), &cfg.solver_config(), |_| {}).map_err(solver_failure)?;
    let b = DVector::from_vec(sys.b().value(&vec![0.0; sys.dim()]));

    let mut rows = Vec::new();
    let (mut ev, mut vmax, mut eu, mut umax) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for z in sample_grid(sys.domain(), cfg.output.value_grid, 0.0) {
        let zv = DVector::from_column_slice(&z);
        let v_ref = (zv.transpose() * &p * &zv)[0];
        let u_ref = -(b.transpose() * &p * &zv)[0];
        let v = sol.model.evaluate_value(&z).map_err(solver_failure)?;
        let u = sol.model.evaluate_feedback(&z).map_err(solver_failure)?;
        ev = ev.max((v - v_ref).abs());
        eu = eu.max((u - u_ref).abs());
        vmax = vmax.max(v_ref.abs());
        umax = umax.max(u_ref.abs());
        let mut row = z;
        row.extend([v, v_ref, u, u_ref]);
        rows.push(row);
    }
    write_csv(
        &dir.join("lqr_check.csv"),
        &coordinate_header(sys.dim(), &["v", "v_riccati", "u", "u_riccati"]),
        rows.iter().map(|r| r.iter().map(|x| num(*x)).collect::<Vec<_>>()),
    )
    .map_err(io)?;
    let rel_v = if vmax > 0.0 { ev / vmax } else { ev };
    let rel_u = if umax > 0.0 { eu / umax } else { eu };
    let bound = cfg.validate.lqr_tol;
    let pass = rel_v <= bound && rel_u <= bound;
    println!(
        "lqr-check {}: rel value error {rel_v:.3e}, rel feedback error {rel_u:.3e}, bound {bound:.1e}",
        if pass { "passed" } else { "failed" }
    );
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn plot_into(dir: &Path) -> Result<(), Failure> {
    let missing = |e: String| Failure::new(EXIT_CONFIG, e);
    let sv = read_table(&dir.join("singular_values.csv")).map_err(missing)?;
    let sigmas = sv
        .column("sigma")
        .ok_or_else(|| missing("singular_values.csv has no sigma column".into()))?;
    if sigmas.is_empty() {
        return Err(missing("singular_values.csv has no rows".into()));
    }
    let grid = read_table(&dir.join("value_grid.csv")).map_err(missing)?;
    let dim = grid.header.iter().filter(|h| h.starts_with('x')).count();
    if grid.rows.is_empty() || dim == 0 {
        return Err(missing("value_grid.csv has no rows".into()));
    }
    std::fs::write(dir.join("decay.svg"), svg::decay_plot(&sigmas)).map_err(io)?;
    std::fs::write(dir.join("value.svg"), svg::value_plot(dim, &grid.rows)).map_err(io)?;
    Ok(())
}

pub fn cmd_plot(run_dir: &Path) -> Outcome {
    plot_into(run_dir)?;
    println!("wrote decay.svg and value.svg to {}", run_dir.display());
    Ok(EXIT_OK)
}
