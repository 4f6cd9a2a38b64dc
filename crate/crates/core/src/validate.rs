//! Independent checks of a solved value model. The strongest one simulates
//! the closed loop and compares the accrued cost with the predicted value.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assembly::AssembledOperators;
use crate::basis::BoxDomain;
use crate::error::{Error, Result};
use crate::lyap::{solve_are, spectral_abscissa, RealSchur, RiccatiProblem};
use crate::solver::SosValueModel;
use crate::system::{linearize, ControlAffineSystem};

/// Why a simulation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryExit {
    /// Reached `‖x‖ ≤ ORIGIN_RADIUS`.
    Origin,
    FinalTime,
    /// The state could not be advanced without leaving the domain.
    LeftDomain,
}

pub const ORIGIN_RADIUS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    /// Accumulated `∫ (Σ c_i² + u²) dt` at each recorded time.
    pub running_cost: Vec<f64>,
    pub exit: TrajectoryExit,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn accumulated_cost(&self) -> f64 {
        *self.running_cost.last().expect("trajectory has at least one state")
    }

    /// Accumulated cost plus `v(x(T))` as an estimate of the remaining tail.
    /// Domain exits get no tail.
    pub fn total_cost(&self, model: &SosValueModel) -> f64 {
        let tail = match self.exit {
            TrajectoryExit::LeftDomain => 0.0,
            _ => model.evaluate_value(self.final_state()).unwrap_or(0.0),
        };
        self.accumulated_cost() + tail
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Right-hand side of the cost-augmented closed loop; `None` outside `Ω`.
fn augmented_rhs(sys: &ControlAffineSystem, model: &SosValueModel, y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let d = sys.dim();
    let x = &y[..d];
    if !sys.domain().contains(x) {
        return None;
    }
    let u = model.evaluate_feedback(x).ok()?;
    let f = sys.f().value(x);
    let b = sys.b().value(x);
    let mut dy: Vec<f64> = f.iter().zip(&b).map(|(fi, bi)| fi + bi * u).collect();
    dy.push(sys.running_state_cost(x) + u * u);
    Some((dy, u))
}

/// Integrate `ẋ = f(x) + b(x)u*(x)` with the running cost as an extra state,
/// using adaptive Dormand-Prince steps.
pub fn simulate_closed_loop(
    sys: &ControlAffineSystem,
    model: &SosValueModel,
    z0: &[f64],
    t_final: f64,
    rtol: f64,
) -> Result<Trajectory> {
    let d = sys.dim();
    if z0.len() != d {
        return Err(Error::DimensionMismatch(format!("initial state has {} entries, expected {d}", z0.len())));
    }
    if !sys.domain().contains(z0) {
        return Err(Error::OutsideDomain { point: z0.to_vec() });
    }
    if !(rtol > 0.0 && t_final >= 0.0) {
        return Err(Error::InvalidArgument("rtol must be positive and t_final nonnegative".into()));
    }
    let atol = 1e-3 * rtol;
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut y: Vec<f64> = z0.to_vec();
    y.push(0.0);
    let (mut k1, u0) = augmented_rhs(sys, model, &y).ok_or(Error::OutsideDomain { point: z0.to_vec() })?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![z0.to_vec()],
        controls: vec![u0],
        running_cost: vec![0.0],
        exit: TrajectoryExit::FinalTime,
    };
    if norm(z0) <= ORIGIN_RADIUS {
        traj.exit = TrajectoryExit::Origin;
        return Ok(traj);
    }

    let mut t = 0.0;
    let mut h = (0.01 * t_final).clamp(1e-6, 0.1);
    let n = d + 1;
    let mut k = vec![vec![0.0; n]; 7];
    while t < t_final {
        h = h.min(t_final - t);
        if h < 1e-14 * (1.0 + t) {
            if t_final - t < 1e-12 * (1.0 + t) {
                break;
            }
            return Err(Error::StepSizeUnderflow { t });
        }
        k[0].clone_from(&k1);
        let mut ok = true;
        let mut u_end = 0.0;
        for s in 1..7 {
            let ys: Vec<f64> = (0..n)
                .map(|i| y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                .collect();
            match augmented_rhs(sys, model, &ys) {
                Some((dy, u)) => {
                    k[s] = dy;
                    u_end = u;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            if h < 1e-10 * (1.0 + t) {
                traj.exit = TrajectoryExit::LeftDomain;
                return Ok(traj);
            }
            h *= 0.25;
            continue;
        }
        let y5: Vec<f64> = (0..n).map(|i| y[i] + h * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>()).collect();
        let err = (0..n)
            .map(|i| {
                let e = h * (0..7).map(|j| (B5[j] - B4[j]) * k[j][i]).sum::<f64>();
                let sc = atol + rtol * y[i].abs().max(y5[i].abs());
                (e / sc).powi(2)
            })
            .sum::<f64>();
        let err = (err / n as f64).sqrt();
        if err <= 1.0 {
            t += h;
            y = y5;
            k1 = k[6].clone();
            traj.times.push(t);
            traj.states.push(y[..d].to_vec());
            traj.controls.push(u_end);
            traj.running_cost.push(y[d]);
            if norm(&y[..d]) <= ORIGIN_RADIUS {
                traj.exit = TrajectoryExit::Origin;
                return Ok(traj);
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    traj.exit = TrajectoryExit::FinalTime;
    Ok(traj)
}

/// Summary of pointwise HJB residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbStats {
    pub points: Vec<Vec<f64>>,
    /// `∇vᵀf + ‖c‖² − ¼(bᵀ∇v)²`.
    pub residuals: Vec<f64>,
    /// `|residual| / (‖c‖² + 1e-12)`.
    pub normalized: Vec<f64>,
    pub max_abs: f64,
    pub median_abs: f64,
    pub max_normalized: f64,
    pub median_normalized: f64,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn hjb_residual(sys: &ControlAffineSystem, model: &SosValueModel, points: &[Vec<f64>]) -> Result<HjbStats> {
    let pairs: Vec<(f64, f64)> = points
        .par_iter()
        .map(|z| {
            let (_, g) = model.value_and_gradient(z)?;
            let f = sys.f().value(z);
            let b = sys.b().value(z);
            let c2 = sys.running_state_cost(z);
            let gf: f64 = g.iter().zip(&f).map(|(a, b)| a * b).sum();
            let gb: f64 = g.iter().zip(&b).map(|(a, b)| a * b).sum();
            let r = gf + c2 - 0.25 * gb * gb;
            Ok((r, r.abs() / (c2 + 1e-12)))
        })
        .collect::<Result<_>>()?;
    let residuals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let normalized: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    Ok(HjbStats {
        points: points.to_vec(),
        max_abs: abs.iter().copied().fold(0.0, f64::max),
        median_abs: median(&abs),
        max_normalized: normalized.iter().copied().fold(0.0, f64::max),
        median_normalized: median(&normalized),
        residuals,
        normalized,
    })
}

/// Tensor grid of `per_axis` points per axis strictly inside a box, the
/// box shrunk by `margin` of its width on each side.
pub fn sample_grid(domain: &BoxDomain, per_axis: usize, margin: f64) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let axis = |k: usize| -> Vec<f64> {
        let (lo, hi) = (domain.lower()[k], domain.upper()[k]);
        let w = hi - lo;
        let (a, b) = (lo + margin * w, hi - margin * w);
        if per_axis == 1 {
            return vec![0.5 * (a + b)];
        }
        (0..per_axis).map(|i| a + (b - a) * i as f64 / (per_axis - 1) as f64).collect()
    };
    let axes: Vec<Vec<f64>> = (0..d).map(axis).collect();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut p = vec![0.0; d];
            for k in (0..d).rev() {
                p[k] = axes[k][flat % per_axis];
                flat /= per_axis;
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianCheck {
    /// Central-difference estimate of `D²v(0)`.
    pub hessian: DMatrix<f64>,
    /// `2P̂`.
    pub reference: DMatrix<f64>,
    pub rel_gap: f64,
}

/// Second differences of `v` at the origin with step `1e-3 · domain scale`.
pub fn hessian_estimate(model: &SosValueModel) -> Result<DMatrix<f64>> {
    let domain = model.basis().domain();
    let d = domain.dim();
    let h = 1e-3 * domain.scale();
    let v = |p: &[f64]| model.evaluate_value(p);
    let v0 = v(&vec![0.0; d])?;
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut p = vec![0.0; d];
        p[i] = h;
        let vp = v(&p)?;
        p[i] = -h;
        let vm = v(&p)?;
        hess[(i, i)] = (vp - 2.0 * v0 + vm) / (h * h);
        for j in 0..i {
            let mut sum = 0.0;
            for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                let mut p = vec![0.0; d];
                p[i] = si * h;
                p[j] = sj * h;
                sum += sign * v(&p)?;
            }
            hess[(i, j)] = sum / (4.0 * h * h);
            hess[(j, i)] = hess[(i, j)];
        }
    }
    Ok(hess)
}

pub fn riccati_reference(sys: &ControlAffineSystem) -> Result<DMatrix<f64>> {
    let lin = linearize(sys);
    solve_are(&RiccatiProblem::new(lin.a0, lin.b0, lin.q)?, 1e-13, 100)
}

pub fn hessian_check(sys: &ControlAffineSystem, model: &SosValueModel) -> Result<HessianCheck> {
    let reference = riccati_reference(sys)? * 2.0;
    let hessian = hessian_estimate(model)?;
    let rel_gap = (&hessian - &reference).norm() / reference.norm();
    Ok(HessianCheck {
        hessian,
        reference,
        rel_gap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub sigmas: Vec<f64>,
    /// `T(N) = Σ_{i ≥ N} σ_i` for `N = 1, 2, …`.
    pub tail_sums: Vec<f64>,
    /// Least-squares slope of `log T(N)` against `log N` before the noise floor.
    pub slope: f64,
    /// Zero-based index of the first `σ_i < 1e-12·σ_1`, if any.
    pub noise_floor_index: Option<usize>,
}

pub const NOISE_FLOOR: f64 = 1e-12;

pub fn decay_from_sigmas(sigmas: &[f64]) -> Result<DecayReport> {
    if sigmas.len() < 5 {
        return Err(Error::TooFewModes {
            needed: 5,
            have: sigmas.len(),
        });
    }
    let mut tail_sums = vec![0.0; sigmas.len()];
    let mut acc = 0.0;
    for i in (0..sigmas.len()).rev() {
        acc += sigmas[i];
        tail_sums[i] = acc;
    }
    let floor = sigmas.iter().position(|&s| s < NOISE_FLOOR * sigmas[0]);
    let end = floor.unwrap_or(sigmas.len());
    if end < 2 {
        return Err(Error::TooFewModes { needed: 2, have: end });
    }
    let xs: Vec<f64> = (1..=end).map(|n| (n as f64).ln()).collect();
    let ys: Vec<f64> = tail_sums[..end].iter().map(|t| t.ln()).collect();
    let mx = xs.iter().sum::<f64>() / end as f64;
    let my = ys.iter().sum::<f64>() / end as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(DecayReport {
        sigmas: sigmas.to_vec(),
        tail_sums,
        slope: sxy / sxx,
        noise_floor_index: floor,
    })
}

pub fn decay_report(model: &SosValueModel) -> Result<DecayReport> {
    decay_from_sigmas(&model.sigmas)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// `−½ λ_min(P̂^{-1/2} Q P̂^{-1/2})`, or 0 when it cannot be formed.
    pub omega_bound: f64,
    /// Set when the bound is degenerate (`Q = 0` or `P̂` not positive definite).
    pub bound_degenerate: bool,
    /// Spectral abscissa of the discrete closed loop `A_cl(S)`.
    pub discrete_abscissa: f64,
    /// Spectral abscissa of `A0 − b0 b0ᵀ P̂`.
    pub linear_abscissa: f64,
    pub hurwitz: bool,
}

pub fn stability_report(
    sys: &ControlAffineSystem,
    ops: &AssembledOperators,
    s: &DMatrix<f64>,
) -> Result<StabilityReport> {
    let lin = linearize(sys);
    let p = riccati_reference(sys)?;
    let (omega_bound, bound_degenerate) = omega_bound(&p, &lin.q);
    let (a_cl, _) = ops.closed_loop(s);
    let discrete_abscissa = RealSchur::new(&a_cl)?.abscissa();
    let linear_abscissa = spectral_abscissa(&(&lin.a0 - &lin.b0 * (lin.b0.transpose() * &p)))?;
    if discrete_abscissa >= 0.0 {
        log::warn!("discrete closed loop is not Hurwitz (abscissa {discrete_abscissa:e})");
    }
    Ok(StabilityReport {
        omega_bound,
        bound_degenerate,
        discrete_abscissa,
        linear_abscissa,
        hurwitz: discrete_abscissa < 0.0,
    })
}

/// `−½ λ_min(P^{-1/2} Q P^{-1/2})` and whether it is degenerate.
pub fn omega_bound(p: &DMatrix<f64>, q: &DMatrix<f64>) -> (f64, bool) {
    if q.iter().all(|x| *x == 0.0) {
        return (0.0, true);
    }
    let Some(chol) = p.clone().cholesky() else {
        return (0.0, true);
    };
    let l = chol.l();
    let Some(linv) = l.clone().try_inverse() else {
        return (0.0, true);
    };
    let m = &linv * q * linv.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    (-0.5 * sym.symmetric_eigenvalues().min(), false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostComparison {
    pub z0: Vec<f64>,
    pub simulated_cost: f64,
    pub value: f64,
    pub rel_gap: f64,
    pub exit: TrajectoryExit,
}

/// Initial states from a tensor grid with `v(z0) ≥ fraction · max v`, spread
/// evenly over the admissible candidates in grid order.
pub fn select_initial_states(
    model: &SosValueModel,
    per_axis: usize,
    fraction: f64,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let grid = sample_grid(model.basis().domain(), per_axis, 0.0);
    let values: Vec<f64> = grid.iter().map(|z| model.evaluate_value(z)).collect::<Result<_>>()?;
    let vmax = values.iter().copied().fold(0.0, f64::max);
    let candidates: Vec<&Vec<f64>> = grid
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v >= fraction * vmax && **v > 0.0)
        .map(|(z, _)| z)
        .collect();
    if candidates.is_empty() || count == 0 {
        return Ok(Vec::new());
    }
    let count = count.min(candidates.len());
    Ok((0..count)
        .map(|i| candidates[i * candidates.len() / count].clone())
        .collect())
}

pub fn compare_costs(
    sys: &ControlAffineSystem,
    model: &SosValueModel,
    initial_states: &[Vec<f64>],
    t_final: f64,
    rtol: f64,
) -> Result<Vec<CostComparison>> {
    initial_states
        .par_iter()
        .map(|z0| {
            let traj = simulate_closed_loop(sys, model, z0, t_final, rtol)?;
            let simulated_cost = traj.total_cost(model);
            let value = model.evaluate_value(z0)?;
            let rel_gap = if value > 0.0 {
                (simulated_cost - value).abs() / value
            } else {
                simulated_cost.abs()
            };
            Ok(CostComparison {
                z0: z0.clone(),
                simulated_cost,
                value,
                rel_gap,
                exit: traj.exit,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub cost_vs_value: Vec<CostComparison>,
    pub hjb_residuals: Option<HjbStats>,
    pub hessian_gap: Option<f64>,
    pub closed_loop_abscissa: f64,
    pub decay: Option<DecayReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::TensorSplineBasis;
    use crate::system::{linear_preset, PolyField};

    fn interval() -> BoxDomain {
        BoxDomain::new(vec![-1.0], vec![1.0]).unwrap()
    }

    fn empty_model(domain: BoxDomain, b: f64) -> SosValueModel {
        let basis = TensorSplineBasis::uniform(domain, 4, 2).unwrap();
        let n = basis.n_total();
        SosValueModel::from_raw_parts(
            basis,
            PolyField::constant(1, &[b]).unwrap(),
            Vec::new(),
            DMatrix::zeros(n, 0),
        )
        .unwrap()
    }

    #[test]
    fn uncontrolled_decay_cost() {
        let sys = linear_preset(
            &DMatrix::from_element(1, 1, -1.0),
            &[1.0],
            &DMatrix::from_element(1, 1, 1.0),
            interval(),
        )
        .unwrap();
        let model = empty_model(interval(), 1.0);
        let traj = simulate_closed_loop(&sys, &model, &[1.0], 40.0, 1e-10).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!((x[0] - (-t).exp()).abs() <= 1e-8);
        }
        assert!((traj.accumulated_cost() - 0.5).abs() <= 0.5e-6);
        assert!(traj.controls.iter().all(|u| *u == 0.0));
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn equilibrium_stays_put() {
        let sys = linear_preset(
            &DMatrix::from_element(1, 1, -1.0),
            &[1.0],
            &DMatrix::from_element(1, 1, 1.0),
            interval(),
        )
        .unwrap();
        let model = empty_model(interval(), 1.0);
        let traj = simulate_closed_loop(&sys, &model, &[0.0], 5.0, 1e-8).unwrap();
        assert_eq!(traj.exit, TrajectoryExit::Origin);
        assert_eq!(traj.accumulated_cost(), 0.0);
        assert!(simulate_closed_loop(&sys, &model, &[2.0], 5.0, 1e-8).is_err());
    }

    #[test]
    fn domain_exit_is_reported() {
        let sys = linear_preset(
            &DMatrix::from_element(1, 1, 1.0),
            &[1.0],
            &DMatrix::from_element(1, 1, 1.0),
            interval(),
        )
        .unwrap();
        let model = empty_model(interval(), 1.0);
        let traj = simulate_closed_loop(&sys, &model, &[0.5], 10.0, 1e-8).unwrap();
        assert_eq!(traj.exit, TrajectoryExit::LeftDomain);
        assert!(traj.final_state()[0] <= 1.0 && traj.final_state()[0] > 0.99);
    }

    #[test]
    fn hjb_of_zero_model_without_cost() {
        let sys = linear_preset(
            &DMatrix::from_element(1, 1, -1.0),
            &[1.0],
            &DMatrix::zeros(1, 1),
            interval(),
        )
        .unwrap();
        let model = empty_model(interval(), 1.0);
        let stats = hjb_residual(&sys, &model, &sample_grid(&interval(), 11, 0.05)).unwrap();
        assert_eq!(stats.max_abs, 0.0);
        assert_eq!(stats.median_normalized, 0.0);
    }

    #[test]
    fn median_and_grid() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let d = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g = sample_grid(&d, 3, 0.0);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-1.0, 0.0]);
        assert_eq!(g[1], vec![-1.0, 1.0]);
        assert_eq!(g[8], vec![1.0, 2.0]);
    }

    #[test]
    fn decay_of_power_law() {
        let sigmas: Vec<f64> = (1..=2000).map(|i| (i as f64).powi(-4)).collect();
        let r = decay_from_sigmas(&sigmas).unwrap();
        assert_eq!(r.noise_floor_index, Some(1000));
        assert!((r.slope + 3.0).abs() <= 0.1, "slope {}", r.slope);
        assert!(matches!(decay_from_sigmas(&[1.0]), Err(Error::TooFewModes { .. })));
    }

    #[test]
    fn omega_bound_examples() {
        let p = DMatrix::from_element(1, 1, 2f64.sqrt() - 1.0);
        let (w, flag) = omega_bound(&p, &DMatrix::from_element(1, 1, 1.0));
        assert!(!flag);
        assert!((w + 0.5 / (2f64.sqrt() - 1.0)).abs() < 1e-14);
        assert_eq!(omega_bound(&p, &DMatrix::zeros(1, 1)), (0.0, true));
    }
}
