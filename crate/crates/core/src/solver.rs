//! Iterative linearization of the coordinate value equation and
//! sum-of-squares extraction.
//!
//! Each step freezes the feedback generated by the current iterate, which
//! turns the quadratic equation into a Lyapunov equation for the next one.
//! On linear systems this is exactly Newton-Kleinman for the Riccati equation.

use nalgebra::{DMatrix, DVector};

use crate::assembly::AssembledOperators;
use crate::basis::TensorSplineBasis;
use crate::error::{Error, Result};
use crate::lyap::{solve_are, RealSchur, RiccatiProblem};
use crate::spaces::RieszBasis;
use crate::system::PolyField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Damping {
    Off,
    #[default]
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    Zero,
    /// Coordinates of `z ↦ zᵀP̂z`, where `P̂` solves the Riccati equation of
    /// the linearization at the origin.
    #[default]
    LqrLift,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative Frobenius change of `S` at which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    pub damping: Damping,
    /// Eigenvalues of `S` at or below this are dropped from the SOS model.
    pub sigma_clip: f64,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
            damping: Damping::Backtracking,
            sigma_clip: 1e-12,
            init: Init::LqrLift,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.sigma_clip >= 0.0 && self.sigma_clip.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_clip must be nonnegative, got {}",
                self.sigma_clip
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Frobenius norm of the equation residual at the accepted iterate.
    pub residual: f64,
    /// `‖S_new − S_old‖_F / ‖S_new‖_F`.
    pub change: f64,
    /// Spectral abscissa of the closed loop generated by the accepted iterate.
    pub abscissa: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
}

impl SolveTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_change(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.change)
    }
}

/// Relative Frobenius distance, with `0/0 = 0`.
fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let diff = (new - old).norm();
    if diff == 0.0 {
        0.0
    } else {
        diff / new.norm().max(old.norm())
    }
}

fn symmetrize(s: &mut DMatrix<f64>) {
    let n = s.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
}

fn residual_matrix(
    ops: &AssembledOperators,
    s: &DMatrix<f64>,
    a: &DMatrix<f64>,
    kappa: &DVector<f64>,
) -> DMatrix<f64> {
    a.tr_mul(s) + s * a + kappa * kappa.transpose() + &ops.observation_gram
}

/// `‖A_cl(S)ᵀS + S A_cl(S) + κ(S)κ(S)ᵀ + C̃ᵀC̃‖_F`.
pub fn equation_residual(ops: &AssembledOperators, s: &DMatrix<f64>) -> f64 {
    let (a, kappa) = ops.closed_loop(s);
    residual_matrix(ops, s, &a, &kappa).norm()
}

/// Starting iterate prescribed by `init`.
pub fn initial_iterate(ops: &AssembledOperators, init: Init) -> Result<DMatrix<f64>> {
    let n = ops.n();
    match init {
        Init::Zero => Ok(DMatrix::zeros(n, n)),
        Init::LqrLift => {
            let lin = &ops.linearization;
            let p = solve_are(
                &RiccatiProblem::new(lin.a0.clone(), lin.b0.clone(), lin.q.clone())?,
                1e-13,
                100,
            )?;
            let u = &ops.linear_coords;
            let mut s = u * p * u.transpose();
            symmetrize(&mut s);
            Ok(s)
        }
    }
}

/// Solve the coordinate value equation starting from `cfg.init`.
pub fn solve_value_equation(
    ops: &AssembledOperators,
    cfg: &SolverConfig,
) -> Result<(DMatrix<f64>, SolveTrace)> {
    let s0 = initial_iterate(ops, cfg.init)?;
    solve_value_equation_from(ops, cfg, s0, |_| {})
}

/// Same as [`solve_value_equation`] from an explicit starting iterate, calling
/// `on_iteration` after every accepted step.
pub fn solve_value_equation_from(
    ops: &AssembledOperators,
    cfg: &SolverConfig,
    s0: DMatrix<f64>,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<(DMatrix<f64>, SolveTrace)> {
    cfg.validate()?;
    let n = ops.n();
    if s0.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "initial iterate is {:?}, expected {n}x{n}",
            s0.shape()
        )));
    }
    let mut s = s0;
    symmetrize(&mut s);
    let (mut a, mut kappa) = ops.closed_loop(&s);
    let mut schur = RealSchur::new(&a)?;
    let abscissa = schur.abscissa();
    if abscissa >= 0.0 {
        return Err(Error::Unstabilizable { theta: 1.0, abscissa });
    }

    let mut trace = SolveTrace::default();
    let min_theta = 2f64.powi(-10);
    for iteration in 1..=cfg.max_iter {
        let rhs = &kappa * kappa.transpose() + &ops.observation_gram;
        let mut full = schur.solve_lyapunov(&rhs)?;
        symmetrize(&mut full);

        let mut theta = 1.0;
        let accepted = loop {
            let candidate = if theta == 1.0 { full.clone() } else { &s + (&full - &s) * theta };
            let (a_next, kappa_next) = ops.closed_loop(&candidate);
            let schur_next = RealSchur::new(&a_next)?;
            let abscissa = schur_next.abscissa();
            if abscissa < 0.0 {
                break (candidate, a_next, kappa_next, schur_next, abscissa);
            }
            if cfg.damping == Damping::Off || theta / 2.0 < min_theta {
                return Err(Error::Unstabilizable { theta, abscissa });
            }
            log::debug!("closed loop not Hurwitz at theta = {theta}, abscissa {abscissa:e}");
            theta /= 2.0;
        };
        let (s_next, a_next, kappa_next, schur_next, abscissa) = accepted;
        let change = relative_change(&s_next, &s);
        let record = IterationRecord {
            iteration,
            residual: residual_matrix(ops, &s_next, &a_next, &kappa_next).norm(),
            change,
            abscissa,
            damping: theta,
        };
        log::info!(
            "iteration {iteration}: change {change:.3e}, residual {:.3e}, abscissa {abscissa:.4}, theta {theta}",
            record.residual
        );
        on_iteration(&record);
        trace.records.push(record);
        s = s_next;
        a = a_next;
        kappa = kappa_next;
        schur = schur_next;
        if change <= cfg.tol {
            return Ok((s, trace));
        }
    }
    let _ = a;
    Err(Error::NonConvergence { trace })
}

/// Eigenpairs `(σ_i, a_i)` of a symmetric matrix, descending, with `σ_i > clip`.
#[derive(Debug, Clone, PartialEq)]
pub struct SosDecomposition {
    pub sigmas: Vec<f64>,
    /// Columns are the orthonormal eigenvectors `a_i`.
    pub coeffs: DMatrix<f64>,
    /// Smallest eigenvalue of the input, for diagnostics.
    pub min_eigenvalue: f64,
    /// Set when some eigenvalue is below `−1e-6·σ_max`.
    pub indefinite: bool,
}

pub fn sos_decompose(s: &DMatrix<f64>, cfg: &SolverConfig) -> Result<SosDecomposition> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch("S must be square".into()));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "S" });
    }
    let n = s.nrows();
    if n == 0 {
        return Ok(SosDecomposition {
            sigmas: Vec::new(),
            coeffs: DMatrix::zeros(0, 0),
            min_eigenvalue: 0.0,
            indefinite: false,
        });
    }
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sigma_max = eig.eigenvalues[order[0]].max(0.0);
    let min_eigenvalue = eig.eigenvalues[order[n - 1]];
    let indefinite = min_eigenvalue < -1e-6 * sigma_max;
    if indefinite {
        log::warn!(
            "value matrix has a negative eigenvalue {min_eigenvalue:e} (largest {sigma_max:e})"
        );
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > cfg.sigma_clip)
        .collect();
    let sigmas = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    let coeffs = DMatrix::from_fn(n, kept.len(), |r, c| eig.eigenvectors[(r, kept[c])]);
    Ok(SosDecomposition {
        sigmas,
        coeffs,
        min_eigenvalue,
        indefinite,
    })
}

/// `v(z) = Σ σ_i p_i(z)²` and `u*(z) = −½ b(z)ᵀ∇v(z)` with `p_i` the spline
/// function whose orthonormal coordinates are `a_i`.
#[derive(Debug, Clone)]
pub struct SosValueModel {
    pub sigmas: Vec<f64>,
    /// Orthonormal coordinates `a_i` as columns, when known.
    pub coeffs: Option<DMatrix<f64>>,
    /// Raw spline coefficients of `p_i` as columns.
    pub raw_coeffs: DMatrix<f64>,
    basis: TensorSplineBasis,
    bfield: PolyField,
    pub min_eigenvalue: f64,
    pub indefinite: bool,
}

pub fn sos_extract(
    s: &DMatrix<f64>,
    cfg: &SolverConfig,
    riesz: &RieszBasis,
    bfield: &PolyField,
) -> Result<SosValueModel> {
    if s.nrows() != riesz.n() {
        return Err(Error::DimensionMismatch(format!(
            "S has {} rows, basis has {} functions",
            s.nrows(),
            riesz.n()
        )));
    }
    let dec = sos_decompose(s, cfg)?;
    let raw_coeffs = riesz.synthesis() * &dec.coeffs;
    Ok(SosValueModel {
        sigmas: dec.sigmas,
        coeffs: Some(dec.coeffs),
        raw_coeffs,
        basis: riesz.raw().clone(),
        bfield: bfield.clone(),
        min_eigenvalue: dec.min_eigenvalue,
        indefinite: dec.indefinite,
    })
}

impl SosValueModel {
    /// Model from stored spline coefficients, e.g. loaded from disk.
    pub fn from_raw_parts(
        basis: TensorSplineBasis,
        bfield: PolyField,
        sigmas: Vec<f64>,
        raw_coeffs: DMatrix<f64>,
    ) -> Result<Self> {
        if raw_coeffs.nrows() != basis.n_total() || raw_coeffs.ncols() != sigmas.len() {
            return Err(Error::DimensionMismatch(format!(
                "coefficients are {:?}, expected {}x{}",
                raw_coeffs.shape(),
                basis.n_total(),
                sigmas.len()
            )));
        }
        if bfield.dim_in() != basis.dim() || bfield.dim_out() != basis.dim() {
            return Err(Error::DimensionMismatch("input field does not match the basis".into()));
        }
        Ok(Self {
            sigmas,
            coeffs: None,
            raw_coeffs,
            basis,
            bfield,
            min_eigenvalue: f64::NAN,
            indefinite: false,
        })
    }

    pub fn basis(&self) -> &TensorSplineBasis {
        &self.basis
    }

    pub fn bfield(&self) -> &PolyField {
        &self.bfield
    }

    pub fn n_modes(&self) -> usize {
        self.sigmas.len()
    }

    /// Keep only the `k` leading modes.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.n_modes());
        Self {
            sigmas: self.sigmas[..k].to_vec(),
            coeffs: self.coeffs.as_ref().map(|c| c.columns(0, k).into_owned()),
            raw_coeffs: self.raw_coeffs.columns(0, k).into_owned(),
            ..self.clone()
        }
    }

    /// The model of `factor · v`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            sigmas: self.sigmas.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }

    /// `v(z)` and `∇v(z)`.
    pub fn value_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.basis.dim();
        let local = self.basis.local_eval(z)?;
        let l = local.indices.len();
        let mut v = 0.0;
        let mut grad = vec![0.0; d];
        let mut dp = vec![0.0; d];
        for (i, sigma) in self.sigmas.iter().enumerate() {
            let col = self.raw_coeffs.column(i);
            let mut p = 0.0;
            dp.iter_mut().for_each(|x| *x = 0.0);
            for (a, &idx) in local.indices.iter().enumerate() {
                let c = col[idx];
                p += c * local.values[a];
                for (k, g) in dp.iter_mut().enumerate() {
                    *g += c * local.gradients[k * l + a];
                }
            }
            v += sigma * p * p;
            for (g, dpk) in grad.iter_mut().zip(&dp) {
                *g += 2.0 * sigma * p * dpk;
            }
        }
        Ok((v, grad))
    }

    pub fn evaluate_value(&self, z: &[f64]) -> Result<f64> {
        self.value_and_gradient(z).map(|(v, _)| v)
    }

    /// `u*(z) = −½ b(z)ᵀ∇v(z)`.
    pub fn evaluate_feedback(&self, z: &[f64]) -> Result<f64> {
        let (_, grad) = self.value_and_gradient(z)?;
        Ok(self.feedback_from_gradient(z, &grad))
    }

    pub(crate) fn feedback_from_gradient(&self, z: &[f64], grad: &[f64]) -> f64 {
        let b = self.bfield.value(z);
        -0.5 * b.iter().zip(grad).map(|(x, y)| x * y).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::basis::{BoxDomain, OriginHandling, QuadratureGrid};
    use crate::spaces::WeightSpec;
    use crate::system::{linear_preset, ControlAffineSystem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops_for(sys: &ControlAffineSystem, n_grid: usize, degree: usize) -> AssembledOperators {
        let raw = TensorSplineBasis::uniform(sys.domain().clone(), n_grid, degree).unwrap();
        let quad = QuadratureGrid::build(&raw, degree + 3, OriginHandling::Split).unwrap();
        let w = WeightSpec::inverse_norm();
        let riesz = RieszBasis::new(raw, &quad, &w, true).unwrap();
        assemble(&riesz, &quad, &w, sys).unwrap()
    }

    fn scalar(a: f64, c: f64) -> ControlAffineSystem {
        linear_preset(
            &DMatrix::from_element(1, 1, a),
            &[1.0],
            &DMatrix::from_element(1, 1, c),
            BoxDomain::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { max_iter: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn decomposition_examples() {
        let cfg = SolverConfig::default();
        let d = sos_decompose(&DMatrix::identity(2, 2), &cfg).unwrap();
        assert_eq!(d.sigmas.len(), 2);
        assert!(d.sigmas.iter().all(|s| (s - 1.0).abs() < 1e-15));
        assert!((d.coeffs.tr_mul(&d.coeffs) - DMatrix::identity(2, 2)).norm() < 1e-14);

        let d = sos_decompose(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 0.0])), &cfg)
            .unwrap();
        assert_eq!(d.sigmas, vec![3.0, 1.0]);
        assert!((d.coeffs[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((d.coeffs[(0, 1)].abs() - 1.0).abs() < 1e-15);
        assert!(!d.indefinite);

        let d = sos_decompose(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.1])), &cfg)
            .unwrap();
        assert!(d.indefinite);
        assert_eq!(d.sigmas, vec![1.0]);
    }

    #[test]
    fn decomposition_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0));
        let s = &g * g.transpose();
        let d = sos_decompose(&s, &SolverConfig { sigma_clip: 0.0, ..Default::default() }).unwrap();
        assert!(d.sigmas.windows(2).all(|w| w[0] >= w[1]));
        let mut rebuilt = DMatrix::zeros(10, 10);
        for (i, sigma) in d.sigmas.iter().enumerate() {
            let a = d.coeffs.column(i);
            rebuilt += a * a.transpose() * *sigma;
        }
        assert!((rebuilt - &s).norm() <= 1e-12 * s.norm());
    }

    #[test]
    fn scalar_lqr_collapse() {
        let sys = scalar(-1.0, 1.0);
        let ops = ops_for(&sys, 10, 3);
        let cfg = SolverConfig::default();
        for init in [Init::LqrLift, Init::Zero] {
            let (s, trace) = solve_value_equation(&ops, &SolverConfig { init, ..cfg }).unwrap();
            assert!(trace.last_change() <= cfg.tol);
            assert!(equation_residual(&ops, &s) <= 10.0 * cfg.tol * (1.0 + ops.observation_gram.norm()));
            let model = sos_extract(&s, &cfg, ops.riesz(), sys.b()).unwrap();
            let p = 2f64.sqrt() - 1.0;
            for k in 0..=40 {
                let z = -1.0 + 2.0 * k as f64 / 40.0;
                let v = model.evaluate_value(&[z]).unwrap();
                let u = model.evaluate_feedback(&[z]).unwrap();
                assert!((v - p * z * z).abs() <= 1e-8 * (1.0 + p * z * z), "v({z}) = {v}");
                assert!((u + p * z).abs() <= 1e-8, "u({z}) = {u}");
            }
        }
    }

    #[test]
    fn zero_observables_give_zero_value() {
        let sys = scalar(-1.0, 0.0);
        let ops = ops_for(&sys, 6, 3);
        let cfg = SolverConfig { init: Init::Zero, ..Default::default() };
        let (s, trace) = solve_value_equation(&ops, &cfg).unwrap();
        assert_eq!(s, DMatrix::zeros(ops.n(), ops.n()));
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn residual_examples() {
        let sys = scalar(-0.5, 1.0);
        let ops = ops_for(&sys, 6, 3);
        let n = ops.n();
        let r0 = equation_residual(&ops, &DMatrix::zeros(n, n));
        assert_eq!(r0, ops.observation_gram.norm());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
        let sym = (&g + g.transpose()) * 0.5;
        let r1 = equation_residual(&ops, &sym);
        let r2 = equation_residual(&ops, &(&sym * 1.0));
        assert_eq!(r1, r2);
    }

    #[test]
    fn fixed_point_is_stable_under_one_more_step() {
        let sys = scalar(-1.0, 1.0);
        let ops = ops_for(&sys, 8, 3);
        let cfg = SolverConfig::default();
        let (s, _) = solve_value_equation(&ops, &cfg).unwrap();
        let (s2, trace) =
            solve_value_equation_from(&ops, &SolverConfig { max_iter: 1, ..cfg }, s.clone(), |_| {})
                .unwrap();
        assert_eq!(trace.len(), 1);
        assert!((s2 - &s).norm() <= cfg.tol * s.norm());
    }

    #[test]
    fn unstable_open_loop_needs_lift() {
        // Zero init keeps the unstable open loop; the LQR lift stabilizes it.
        let sys = scalar(1.0, 1.0);
        let ops = ops_for(&sys, 8, 3);
        let err = solve_value_equation(&ops, &SolverConfig { init: Init::Zero, ..Default::default() });
        assert!(matches!(err, Err(Error::Unstabilizable { .. })));
        let (s, _) = solve_value_equation(&ops, &SolverConfig::default()).unwrap();
        let model = sos_extract(&s, &SolverConfig::default(), ops.riesz(), sys.b()).unwrap();
        let p = 1.0 + 2f64.sqrt();
        let v = model.evaluate_value(&[0.5]).unwrap();
        assert!((v - p * 0.25).abs() <= 1e-8);
    }

    #[test]
    fn iteration_limit_carries_trace() {
        let sys = scalar(-1.0, 1.0);
        let ops = ops_for(&sys, 6, 3);
        let cfg = SolverConfig { init: Init::Zero, max_iter: 1, tol: 1e-300, ..Default::default() };
        match solve_value_equation(&ops, &cfg) {
            Err(Error::NonConvergence { trace }) => assert_eq!(trace.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_model_is_zero() {
        let sys = scalar(-1.0, 1.0);
        let ops = ops_for(&sys, 6, 3);
        let model = sos_extract(
            &DMatrix::zeros(ops.n(), ops.n()),
            &SolverConfig::default(),
            ops.riesz(),
            sys.b(),
        )
        .unwrap();
        assert_eq!(model.n_modes(), 0);
        assert_eq!(model.evaluate_value(&[0.3]).unwrap(), 0.0);
        assert_eq!(model.evaluate_feedback(&[0.3]).unwrap(), 0.0);
        assert!(model.evaluate_value(&[1.5]).is_err());
    }

    #[test]
    fn feedback_sign_is_hjb_consistent() {
        // For the scalar LQR value the minus sign solves the HJB equation and
        // the plus sign leaves a residual of 4 p² z² b²/4.
        let sys = scalar(-1.0, 1.0);
        let ops = ops_for(&sys, 10, 3);
        let cfg = SolverConfig::default();
        let (s, _) = solve_value_equation(&ops, &cfg).unwrap();
        let model = sos_extract(&s, &cfg, ops.riesz(), sys.b()).unwrap();
        let z = 0.7;
        let (_, g) = model.value_and_gradient(&[z]).unwrap();
        let u = model.evaluate_feedback(&[z]).unwrap();
        let hjb = |u: f64| g[0] * (-z + u) + z * z + u * u;
        assert!(hjb(u).abs() < 1e-8);
        assert!(hjb(-u).abs() > 0.1);
    }
}
