//! One-call discretization and solve for callers that do not need the
//! intermediate pieces.

use nalgebra::DMatrix;

use crate::assembly::{assemble, AssembledOperators};
use crate::basis::{OriginHandling, QuadratureGrid, TensorSplineBasis};
use crate::error::Result;
use crate::solver::{initial_iterate, solve_value_equation_from, sos_extract, IterationRecord, SolveTrace, SolverConfig, SosValueModel};
use crate::spaces::{RieszBasis, WeightSpec};
use crate::system::ControlAffineSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationConfig {
    pub n_grid: usize,
    pub degree: usize,
    /// Gauss-Legendre points per cell and axis; `None` means `degree + 3`.
    pub quad_order: Option<usize>,
    pub weight: WeightSpec,
    /// Restrict the span to functions vanishing at the origin.
    pub vanish_at_origin: bool,
}

impl DiscretizationConfig {
    pub fn new(n_grid: usize, degree: usize) -> Self {
        Self {
            n_grid,
            degree,
            quad_order: None,
            weight: WeightSpec::inverse_norm(),
            vanish_at_origin: true,
        }
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order.unwrap_or(self.degree + 3)
    }
}

pub struct Discretization {
    pub riesz: RieszBasis,
    pub quad: QuadratureGrid,
    pub ops: AssembledOperators,
}

pub fn discretize(sys: &ControlAffineSystem, cfg: &DiscretizationConfig) -> Result<Discretization> {
    let raw = TensorSplineBasis::uniform(sys.domain().clone(), cfg.n_grid, cfg.degree)?;
    // Nodes exactly on the coordinate lines through the origin would hit the
    // singularity of the weight, so cells are split there.
    let origin = if cfg.weight.is_singular() && sys.domain().contains_origin() {
        OriginHandling::Split
    } else {
        OriginHandling::Ignore
    };
    let quad = QuadratureGrid::build(&raw, cfg.quad_order(), origin)?;
    let riesz = RieszBasis::new(raw, &quad, &cfg.weight, cfg.vanish_at_origin)?;
    let ops = assemble(&riesz, &quad, &cfg.weight, sys)?;
    Ok(Discretization { riesz, quad, ops })
}

pub struct Solution {
    pub disc: Discretization,
    pub s: DMatrix<f64>,
    pub trace: SolveTrace,
    pub model: SosValueModel,
}

pub fn solve(
    sys: &ControlAffineSystem,
    disc_cfg: &DiscretizationConfig,
    solver_cfg: &SolverConfig,
    on_iteration: impl FnMut(&IterationRecord),
) -> Result<Solution> {
    let disc = discretize(sys, disc_cfg)?;
    let s0 = initial_iterate(&disc.ops, solver_cfg.init)?;
    let (s, trace) = solve_value_equation_from(&disc.ops, solver_cfg, s0, on_iteration)?;
    let model = sos_extract(&s, solver_cfg, &disc.riesz, sys.b())?;
    Ok(Solution { disc, s, trace, model })
}
