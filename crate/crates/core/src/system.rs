//! Control-affine models `ẋ = f(x) + b(x) u` with polynomial fields.

use nalgebra::{DMatrix, DVector};

use crate::basis::BoxDomain;
use crate::error::{Error, Result};

/// One monomial `coeff · Π x_k^{exponents[k]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

impl Term {
    pub fn new(exponents: Vec<u32>, coeff: f64) -> Self {
        Self { exponents, coeff }
    }
}

/// Vector-valued polynomial `ℝ^dim_in → ℝ^outputs.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    dim_in: usize,
    outputs: Vec<Vec<Term>>,
}

impl PolyField {
    pub fn new(dim_in: usize, outputs: Vec<Vec<Term>>) -> Result<Self> {
        for (i, out) in outputs.iter().enumerate() {
            for t in out {
                if t.exponents.len() != dim_in {
                    return Err(Error::DimensionMismatch(format!(
                        "component {i}: exponent vector {:?} for input dimension {dim_in}",
                        t.exponents
                    )));
                }
                if !t.coeff.is_finite() {
                    return Err(Error::InvalidSystem(format!(
                        "component {i}: non-finite coefficient"
                    )));
                }
            }
        }
        Ok(Self { dim_in, outputs })
    }

    /// `x ↦ A x`.
    pub fn linear(a: &DMatrix<f64>) -> Result<Self> {
        let d = a.ncols();
        let outputs = (0..a.nrows())
            .map(|i| {
                (0..d)
                    .filter(|&j| a[(i, j)] != 0.0)
                    .map(|j| {
                        let mut e = vec![0; d];
                        e[j] = 1;
                        Term::new(e, a[(i, j)])
                    })
                    .collect()
            })
            .collect();
        Self::new(d, outputs)
    }

    /// Constant field.
    pub fn constant(dim_in: usize, value: &[f64]) -> Result<Self> {
        let outputs = value
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    vec![]
                } else {
                    vec![Term::new(vec![0; dim_in], v)]
                }
            })
            .collect();
        Self::new(dim_in, outputs)
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.outputs.len()
    }

    pub fn outputs(&self) -> &[Vec<Term>] {
        &self.outputs
    }

    /// Highest total degree over all terms (0 for the zero field).
    pub fn degree(&self) -> u32 {
        self.outputs
            .iter()
            .flatten()
            .filter(|t| t.coeff != 0.0)
            .map(|t| t.exponents.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Field value only.
    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        self.outputs
            .iter()
            .map(|out| {
                out.iter()
                    .map(|t| t.coeff * monomial(&t.exponents, x))
                    .sum()
            })
            .collect()
    }

    /// Value and Jacobian (rows: outputs, columns: inputs).
    pub fn eval(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let mut jac = DMatrix::zeros(self.dim_out(), self.dim_in);
        let mut value = vec![0.0; self.dim_out()];
        for (i, out) in self.outputs.iter().enumerate() {
            for t in out {
                value[i] += t.coeff * monomial(&t.exponents, x);
                for k in 0..self.dim_in {
                    let ek = t.exponents[k];
                    if ek == 0 {
                        continue;
                    }
                    let mut e = t.exponents.clone();
                    e[k] -= 1;
                    jac[(i, k)] += t.coeff * ek as f64 * monomial(&e, x);
                }
            }
        }
        (value, jac)
    }
}

fn monomial(exponents: &[u32], x: &[f64]) -> f64 {
    exponents
        .iter()
        .zip(x)
        .map(|(&e, &v)| v.powi(e as i32))
        .product()
}

pub fn eval_field(field: &PolyField, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    field.eval(x)
}

/// `ẋ = f(x) + b(x) u` with scalar control and observables `c_1 .. c_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAffineSystem {
    f: PolyField,
    b: PolyField,
    c: Vec<PolyField>,
    domain: BoxDomain,
}

impl ControlAffineSystem {
    /// Requires `f(0) = 0` and `c_i(0) = 0`.
    pub fn new(f: PolyField, b: PolyField, c: Vec<PolyField>, domain: BoxDomain) -> Result<Self> {
        let d = domain.dim();
        if f.dim_in() != d || f.dim_out() != d {
            return Err(Error::DimensionMismatch(format!(
                "f must map R^{d} to R^{d}, got R^{} to R^{}",
                f.dim_in(),
                f.dim_out()
            )));
        }
        if b.dim_in() != d || b.dim_out() != d {
            return Err(Error::DimensionMismatch(format!(
                "b must map R^{d} to R^{d}, got R^{} to R^{}",
                b.dim_in(),
                b.dim_out()
            )));
        }
        for (i, ci) in c.iter().enumerate() {
            if ci.dim_in() != d || ci.dim_out() != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "observable {i} must map R^{d} to R"
                )));
            }
        }
        let zero = vec![0.0; d];
        if f.value(&zero).iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidSystem("f(0) must vanish".into()));
        }
        for (i, ci) in c.iter().enumerate() {
            if ci.value(&zero)[0] != 0.0 {
                return Err(Error::InvalidSystem(format!("c_{} (0) must vanish", i + 1)));
            }
        }
        Ok(Self { f, b, c, domain })
    }

    pub fn f(&self) -> &PolyField {
        &self.f
    }

    pub fn b(&self) -> &PolyField {
        &self.b
    }

    pub fn observables(&self) -> &[PolyField] {
        &self.c
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// `f` linear, `b` constant, every `c_i` linear.
    pub fn is_linear(&self) -> bool {
        self.f.degree() <= 1 && self.b.degree() == 0 && self.c.iter().all(|c| c.degree() <= 1)
    }

    /// `(c_1(x), .., c_r(x))`.
    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        self.c.iter().map(|c| c.value(x)[0]).collect()
    }

    /// `Σ c_i(x)²`.
    pub fn running_state_cost(&self, x: &[f64]) -> f64 {
        self.observe(x).iter().map(|v| v * v).sum()
    }
}

/// Modified Van der Pol parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanDerPolParams {
    pub mu: f64,
    pub eta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub half_width: f64,
}

impl Default for VanDerPolParams {
    fn default() -> Self {
        Self {
            mu: 2.0,
            eta: 2.2,
            alpha: 0.15,
            gamma: 4.0,
            half_width: 3.0,
        }
    }
}

/// Van der Pol oscillator with friction and a cubic damping term:
/// `f(x) = (x₂ − α x₁³, −μ (x₁² − 1) x₂ − x₁ − η x₂)`, `b ≡ (0, γ)`,
/// `c(x) = (x₁, x₂)` on `[−3, 3]²`.
pub fn vanderpol_preset() -> ControlAffineSystem {
    vanderpol_with(VanDerPolParams::default()).expect("default parameters are valid")
}

pub fn vanderpol_with(p: VanDerPolParams) -> Result<ControlAffineSystem> {
    let t = |e0, e1, c| Term::new(vec![e0, e1], c);
    let f = PolyField::new(
        2,
        vec![
            vec![t(0, 1, 1.0), t(3, 0, -p.alpha)],
            vec![t(2, 1, -p.mu), t(0, 1, p.mu), t(1, 0, -1.0), t(0, 1, -p.eta)],
        ],
    )?;
    let b = PolyField::constant(2, &[0.0, p.gamma])?;
    let c = vec![
        PolyField::new(2, vec![vec![t(1, 0, 1.0)]])?,
        PolyField::new(2, vec![vec![t(0, 1, 1.0)]])?,
    ];
    let h = p.half_width;
    ControlAffineSystem::new(f, b, c, BoxDomain::new(vec![-h, -h], vec![h, h])?)
}

/// `f(x) = A x`, `b ≡ b`, `c_i(x) = C[i, :] x`.
pub fn linear_preset(
    a: &DMatrix<f64>,
    b: &[f64],
    c: &DMatrix<f64>,
    domain: BoxDomain,
) -> Result<ControlAffineSystem> {
    let d = domain.dim();
    if a.nrows() != d || a.ncols() != d || b.len() != d || c.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "A {}x{}, b {}, C {}x{} for dimension {d}",
            a.nrows(),
            a.ncols(),
            b.len(),
            c.nrows(),
            c.ncols()
        )));
    }
    let f = PolyField::linear(a)?;
    let bf = PolyField::constant(d, b)?;
    let cs = (0..c.nrows())
        .map(|i| PolyField::linear(&c.rows(i, 1).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    ControlAffineSystem::new(f, bf, cs, domain)
}

/// Sampled boundary behaviour of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentReport {
    /// Smallest `ν(x)ᵀ f(x)` over the samples.
    pub min_inner_product: f64,
    /// Largest `ν(x)ᵀ f(x)`; negative means the field points inward everywhere sampled.
    pub max_inner_product: f64,
    /// Samples with `ν(x)ᵀ f(x) ≥ 0`, as `(point, value)`.
    pub violating_points: Vec<(Vec<f64>, f64)>,
    /// `b(x) = 0` at every sample.
    pub b_vanishes_on_boundary: bool,
}

impl TangentReport {
    pub fn satisfied(&self) -> bool {
        self.violating_points.is_empty()
    }
}

/// Samples `ν(x)ᵀ f(x)` on each face of the box at `samples_per_face`
/// points per axis (cell midpoints, so corners are skipped).
pub fn check_tangent_condition(sys: &ControlAffineSystem, samples_per_face: usize) -> Result<TangentReport> {
    if samples_per_face < 2 {
        return Err(Error::InvalidArgument(format!(
            "samples_per_face = {samples_per_face} < 2"
        )));
    }
    let dom = sys.domain();
    let d = dom.dim();
    let mut report = TangentReport {
        min_inner_product: f64::INFINITY,
        max_inner_product: f64::NEG_INFINITY,
        violating_points: Vec::new(),
        b_vanishes_on_boundary: true,
    };
    let mut visit = |x: Vec<f64>, axis: usize, sign: f64| {
        let fx = sys.f().value(&x);
        let ip = sign * fx[axis];
        report.min_inner_product = report.min_inner_product.min(ip);
        report.max_inner_product = report.max_inner_product.max(ip);
        if ip >= 0.0 {
            report.violating_points.push((x.clone(), ip));
        }
        if sys.b().value(&x).iter().any(|v| *v != 0.0) {
            report.b_vanishes_on_boundary = false;
        }
    };
    for axis in 0..d {
        for (bound, sign) in [(dom.lower()[axis], -1.0), (dom.upper()[axis], 1.0)] {
            if d == 1 {
                visit(vec![bound], axis, sign);
                continue;
            }
            let other = 1 - axis;
            let (lo, hi) = (dom.lower()[other], dom.upper()[other]);
            for s in 0..samples_per_face {
                let t = lo + (s as f64 + 0.5) / samples_per_face as f64 * (hi - lo);
                let mut x = vec![0.0; 2];
                x[axis] = bound;
                x[other] = t;
                visit(x, axis, sign);
            }
        }
    }
    Ok(report)
}

/// Data of the linearization at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    /// `Df(0)`.
    pub a0: DMatrix<f64>,
    /// `b(0)`.
    pub b0: DVector<f64>,
    /// Rows `∇c_i(0)ᵀ`.
    pub c0: DMatrix<f64>,
    /// `C0ᵀ C0`.
    pub q: DMatrix<f64>,
}

pub fn linearize(sys: &ControlAffineSystem) -> Linearization {
    let d = sys.dim();
    let zero = vec![0.0; d];
    let (_, a0) = sys.f().eval(&zero);
    let b0 = DVector::from_vec(sys.b().value(&zero));
    let mut c0 = DMatrix::zeros(sys.observables().len(), d);
    for (i, c) in sys.observables().iter().enumerate() {
        let (_, j) = c.eval(&zero);
        c0.set_row(i, &j.row(0));
    }
    let q = c0.tr_mul(&c0);
    Linearization { a0, b0, c0, q }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(h: f64) -> BoxDomain {
        BoxDomain::new(vec![-h, -h], vec![h, h]).unwrap()
    }

    #[test]
    fn identity_field() {
        let f = PolyField::linear(&DMatrix::identity(2, 2)).unwrap();
        let (v, j) = eval_field(&f, &[2.0, 3.0]);
        assert_eq!(v, vec![2.0, 3.0]);
        assert_eq!(j, DMatrix::identity(2, 2));
    }

    #[test]
    fn vanderpol_values() {
        let sys = vanderpol_preset();
        let v = sys.f().value(&[1.0, 0.0]);
        assert!((v[0] + 0.15).abs() < 1e-15);
        assert!((v[1] + 1.0).abs() < 1e-15);
        assert_eq!(sys.f().value(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(sys.observe(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(sys.b().value(&[1.3, -2.0]), vec![0.0, 4.0]);
        assert_eq!(sys.domain(), &square(3.0));
        let p = VanDerPolParams::default();
        assert_eq!((p.mu, p.eta, p.alpha, p.gamma), (2.0, 2.2, 0.15, 4.0));
    }

    #[test]
    fn vanderpol_linearization() {
        let lin = linearize(&vanderpol_preset());
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 2.0 - 2.2]);
        assert!((lin.a0 - expected).norm() < 1e-15);
        assert_eq!(lin.b0.as_slice(), &[0.0, 4.0]);
        assert_eq!(lin.q, DMatrix::identity(2, 2));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let sys = vanderpol_preset();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let (_, j) = sys.f().eval(&x);
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fp = sys.f().value(&xp);
                let fm = sys.f().value(&xm);
                for i in 0..2 {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    let scale = j[(i, k)].abs().max(1.0);
                    assert!((fd - j[(i, k)]).abs() / scale < 1e-7);
                }
            }
        }
    }

    #[test]
    fn linear_presets() {
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let sys = linear_preset(
            &DMatrix::zeros(1, 1),
            &[1.0],
            &DMatrix::from_element(1, 1, 1.0),
            dom,
        )
        .unwrap();
        assert_eq!(sys.f().value(&[0.7]), vec![0.0]);
        assert_eq!(sys.b().value(&[0.7]), vec![1.0]);
        assert_eq!(sys.observe(&[0.7]), vec![0.7]);
        assert!(sys.is_linear());

        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c = DMatrix::identity(2, 2);
        let di = linear_preset(&a, &[0.0, 1.0], &c, square(1.0)).unwrap();
        let lin = linearize(&di);
        assert_eq!(lin.a0, a);
        assert_eq!(lin.b0.as_slice(), &[0.0, 1.0]);
        assert_eq!(lin.c0, c);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let ax = &a * DVector::from_column_slice(&x);
            assert_eq!(di.f().value(&x), ax.as_slice());
        }
        assert!(linear_preset(&a, &[1.0], &c, square(1.0)).is_err());
        assert!(!vanderpol_preset().is_linear());
    }

    #[test]
    fn constructor_rejects_offsets() {
        let f = PolyField::new(1, vec![vec![Term::new(vec![0], 1.0)]]).unwrap();
        let b = PolyField::constant(1, &[1.0]).unwrap();
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        assert!(ControlAffineSystem::new(f, b.clone(), vec![], dom.clone()).is_err());
        let f = PolyField::linear(&DMatrix::from_element(1, 1, -1.0)).unwrap();
        let c = PolyField::new(1, vec![vec![Term::new(vec![0], 0.5)]]).unwrap();
        assert!(ControlAffineSystem::new(f, b, vec![c], dom).is_err());
    }

    #[test]
    fn tangent_condition_reports() {
        let sys = vanderpol_preset();
        assert!((sys.f().value(&[3.0, 0.0])[0] + 4.05).abs() < 1e-12);
        let rep = check_tangent_condition(&sys, 200).unwrap();
        assert!(rep.satisfied());
        assert!(rep.max_inner_product < 0.0);
        assert!(!rep.b_vanishes_on_boundary);

        let c = DMatrix::identity(2, 2);
        let inward = linear_preset(&(-DMatrix::identity(2, 2)), &[0.0, 0.0], &c, square(2.0)).unwrap();
        let rep = check_tangent_condition(&inward, 10).unwrap();
        assert!(rep.satisfied() && rep.b_vanishes_on_boundary);
        let outward = linear_preset(&DMatrix::identity(2, 2), &[0.0, 1.0], &c, square(2.0)).unwrap();
        let rep = check_tangent_condition(&outward, 10).unwrap();
        assert_eq!(rep.violating_points.len(), 40);
        assert!(rep.max_inner_product > 0.0);
        assert!(check_tangent_condition(&sys, 1).is_err());
    }
}
