//! Run configuration: a TOML tree with every section optional except the
//! system. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use koopman_hjb::pipeline::DiscretizationConfig;
use koopman_hjb::solver::{Damping, Init, SolverConfig};
use koopman_hjb::spaces::{WeightKind, WeightSpec};
use koopman_hjb::system::{linear_preset, vanderpol_with, PolyField, Term, VanDerPolParams};
use koopman_hjb::{BoxDomain, ControlAffineSystem};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    #[serde(default)]
    pub weight: WeightConfig,
    pub basis: BasisConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    pub system: SystemConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKindConfig {
    #[default]
    InverseNorm,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default)]
    pub kind: WeightKindConfig,
    /// Lower bound on `‖x‖` inside the weight; 0 keeps it exact.
    #[serde(default)]
    pub floor: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            kind: WeightKindConfig::InverseNorm,
            floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub n_grid: usize,
    pub degree: usize,
    #[serde(default = "yes")]
    pub vanish_at_origin: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Points per cell and axis; defaults to `degree + 3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Vanderpol {
        #[serde(default = "mu")]
        mu: f64,
        #[serde(default = "eta")]
        eta: f64,
        #[serde(default = "alpha")]
        alpha: f64,
        #[serde(default = "gamma")]
        gamma: f64,
    },
    /// `f = A x`, `b` constant, `c = C x`; matrices as lists of rows.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<Vec<f64>>,
    },
    /// Polynomial fields as term lists: `f` and `b` have one list per state
    /// component, `c` one list per observable.
    Polynomial {
        f: Vec<Vec<TermConfig>>,
        b: Vec<Vec<TermConfig>>,
        c: Vec<Vec<TermConfig>>,
    },
}

fn mu() -> f64 {
    VanDerPolParams::default().mu
}
fn eta() -> f64 {
    VanDerPolParams::default().eta
}
fn alpha() -> f64 {
    VanDerPolParams::default().alpha
}
fn gamma() -> f64 {
    VanDerPolParams::default().gamma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Zero,
    #[default]
    LqrLift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingConfig {
    Off,
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitConfig,
    pub damping: DampingConfig,
    pub sigma_clip: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            init: InitConfig::LqrLift,
            damping: DampingConfig::Backtracking,
            sigma_clip: d.sigma_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub n_trajectories: usize,
    pub t_final: f64,
    pub rtol: f64,
    /// Points per axis of the HJB residual grid.
    pub hjb_sample_grid: usize,
    /// Box for the HJB residual grid; the whole domain when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hjb_box: Option<DomainConfig>,
    /// Initial states need `v(z0) ≥ value_fraction · max v`.
    pub value_fraction: f64,
    pub max_cost_gap: f64,
    pub max_hjb_median: f64,
    pub max_hessian_gap: f64,
    /// Bound on the relative errors reported by `lqr-check`.
    pub lqr_tol: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            n_trajectories: 10,
            t_final: 40.0,
            rtol: 1e-9,
            hjb_sample_grid: 40,
            hjb_box: None,
            value_fraction: 0.1,
            max_cost_gap: 0.05,
            max_hjb_median: 0.05,
            max_hessian_gap: 0.1,
            lqr_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub emit_svg: bool,
    /// Points per axis of value_grid.csv.
    pub value_grid: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            emit_svg: false,
            value_grid: 61,
        }
    }
}

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| invalid(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Everything that can be checked without building the discretization.
    pub fn check(&self) -> Result<(), ConfigError> {
        self.domain()?;
        self.system()?;
        if self.basis.n_grid < 2 {
            return Err(invalid("basis.n_grid must be at least 2"));
        }
        if self.basis.degree == 0 || self.basis.degree > 15 {
            return Err(invalid("basis.degree must be in 1..=15"));
        }
        if let Some(order) = self.quadrature.order {
            if !(1..=64).contains(&order) {
                return Err(invalid("quadrature.order must be in 1..=64"));
            }
        }
        if !(self.weight.floor >= 0.0 && self.weight.floor.is_finite()) {
            return Err(invalid("weight.floor must be finite and nonnegative"));
        }
        self.solver_config()
            .validate()
            .map_err(|e| invalid(format!("solver: {e}")))?;
        let v = &self.validate;
        if !(v.t_final > 0.0 && v.rtol > 0.0) {
            return Err(invalid("validate.t_final and validate.rtol must be positive"));
        }
        if v.hjb_sample_grid == 0 {
            return Err(invalid("validate.hjb_sample_grid must be at least 1"));
        }
        if let Some(b) = &v.hjb_box {
            let inner = to_domain(b, "validate.hjb_box")?;
            let outer = self.domain()?;
            let inside = (0..outer.dim())
                .all(|k| inner.lower()[k] >= outer.lower()[k] && inner.upper()[k] <= outer.upper()[k]);
            if inner.dim() != outer.dim() || !inside {
                return Err(invalid("validate.hjb_box must lie inside the domain"));
            }
        }
        if self.output.value_grid < 2 {
            return Err(invalid("output.value_grid must be at least 2"));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain, ConfigError> {
        to_domain(&self.domain, "domain")
    }

    pub fn weight_spec(&self) -> WeightSpec {
        WeightSpec {
            kind: match self.weight.kind {
                WeightKindConfig::InverseNorm => WeightKind::InverseNorm,
                WeightKindConfig::Constant => WeightKind::Constant,
            },
            floor: self.weight.floor,
        }
    }

    pub fn discretization(&self) -> DiscretizationConfig {
        DiscretizationConfig {
            n_grid: self.basis.n_grid,
            degree: self.basis.degree,
            quad_order: self.quadrature.order,
            weight: self.weight_spec(),
            vanish_at_origin: self.basis.vanish_at_origin,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            damping: match self.solver.damping {
                DampingConfig::Off => Damping::Off,
                DampingConfig::Backtracking => Damping::Backtracking,
            },
            sigma_clip: self.solver.sigma_clip,
            init: match self.solver.init {
                InitConfig::Zero => Init::Zero,
                InitConfig::LqrLift => Init::LqrLift,
            },
        }
    }

    pub fn system(&self) -> Result<ControlAffineSystem, ConfigError> {
        let domain = self.domain()?;
        let d = domain.dim();
        let err = |e: koopman_hjb::Error| invalid(format!("system: {e}"));
        match &self.system {
            SystemConfig::Vanderpol { mu, eta, alpha, gamma } => {
                if d != 2 {
                    return Err(invalid("the vanderpol preset needs a two-dimensional domain"));
                }
                let base = vanderpol_with(VanDerPolParams {
                    mu: *mu,
                    eta: *eta,
                    alpha: *alpha,
                    gamma: *gamma,
                    ..Default::default()
                })
                .map_err(err)?;
                ControlAffineSystem::new(base.f().clone(), base.b().clone(), base.observables().to_vec(), domain)
                    .map_err(err)
            }
            SystemConfig::Linear { a, b, c } => {
                let a = to_matrix(a, d, "system.a")?;
                if c.is_empty() {
                    return Err(invalid("system.c needs at least one row"));
                }
                let c = to_matrix(c, d, "system.c")?;
                linear_preset(&a, b, &c, domain).map_err(err)
            }
            SystemConfig::Polynomial { f, b, c } => {
                let field = |rows: &[Vec<TermConfig>]| -> Result<PolyField, ConfigError> {
                    let outputs = rows
                        .iter()
                        .map(|terms| terms.iter().map(|t| Term::new(t.exponents.clone(), t.coeff)).collect())
                        .collect();
                    PolyField::new(d, outputs).map_err(err)
                };
                let cs = c.iter().map(|row| field(std::slice::from_ref(row))).collect::<Result<Vec<_>, _>>()?;
                ControlAffineSystem::new(field(f)?, field(b)?, cs, domain).map_err(err)
            }
        }
    }

    pub fn hjb_box(&self) -> Result<BoxDomain, ConfigError> {
        match &self.validate.hjb_box {
            Some(b) => to_domain(b, "validate.hjb_box"),
            None => self.domain(),
        }
    }
}

fn to_domain(d: &DomainConfig, key: &str) -> Result<BoxDomain, ConfigError> {
    BoxDomain::new(d.lower.clone(), d.upper.clone()).map_err(|e| invalid(format!("{key}: {e}")))
}

fn to_matrix(rows: &[Vec<f64>], cols: usize, key: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(format!("{key}: every row needs {cols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
