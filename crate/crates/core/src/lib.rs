//! Sum-of-squares approximation of value functions and optimal feedback laws
//! for control-affine systems `ẋ = f(x) + b(x)u` with running cost
//! `Σ c_i(x)² + u²`.
//!
//! The value function is sought as `v(z) = Σ_ij S_ij v_i(z) v_j(z)` over a
//! family of tensor-product splines orthonormalized in a weighted Sobolev
//! inner product. `S` solves a quadratic matrix equation, handled by
//! repeated Lyapunov solves with the feedback frozen.
//!
//! ```no_run
//! use koopman_hjb::{pipeline, system, solver::SolverConfig};
//!
//! let sys = system::vanderpol_preset();
//! let cfg = pipeline::DiscretizationConfig::new(15, 3);
//! let sol = pipeline::solve(&sys, &cfg, &SolverConfig::default(), |_| {}).unwrap();
//! println!("v(1, 0) = {}", sol.model.evaluate_value(&[1.0, 0.0]).unwrap());
//! ```

pub mod assembly;
pub mod basis;
pub mod error;
pub mod lyap;
pub mod pipeline;
pub mod solver;
pub mod spaces;
pub mod system;
pub mod validate;

pub use assembly::{assemble, AssembledOperators};
pub use basis::{BoxDomain, QuadratureGrid, TensorSplineBasis};
pub use error::{Error, Result};
pub use solver::{solve_value_equation, sos_extract, SolveTrace, SolverConfig, SosValueModel};
pub use spaces::{RieszBasis, WeightSpec};
pub use system::{ControlAffineSystem, PolyField};
