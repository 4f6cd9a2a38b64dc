//! Dense Lyapunov and algebraic Riccati solvers.
//!
//! `solve_lyapunov` reduces `A` to real Schur form and back-substitutes
//! block by block (Bartels-Stewart). `solve_are` runs Newton-Kleinman on
//! top of it.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// `Aᵀ X + X A + Q = 0`.
#[derive(Debug, Clone)]
pub struct LyapunovProblem {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl LyapunovProblem {
    /// Symmetrizes `q`.
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, Q is {}x{}",
                a.nrows(),
                a.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        let q = (&q + q.transpose()) * 0.5;
        Ok(Self { a, q })
    }
}

/// `Aᵀ P + P A − P B Bᵀ P + Q = 0` with a single input column `B`.
#[derive(Debug, Clone)]
pub struct RiccatiProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl RiccatiProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B has {} rows, Q is {}x{}",
                a.nrows(),
                a.ncols(),
                b.len(),
                q.nrows(),
                q.ncols()
            )));
        }
        let q = (&q + q.transpose()) * 0.5;
        Ok(Self { a, b, q })
    }

    pub fn residual(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let pb = p * &self.b;
        self.a.tr_mul(p) + p * &self.a - &pb * pb.transpose() + &self.q
    }
}

/// `A = U T Uᵀ` with `T` upper quasi-triangular.
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub u: DMatrix<f64>,
    pub t: DMatrix<f64>,
    /// Diagonal blocks as `(start, size)`, size 1 or 2.
    blocks: Vec<(usize, usize)>,
}

impl RealSchur {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("matrix must be square".into()));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "Schur input" });
        }
        let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 200 * n.max(10))
            .ok_or(Error::SchurFailure)?;
        let (u, t) = schur.unpack();
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < n {
            if i + 1 < n && t[(i + 1, i)] != 0.0 {
                if i + 2 < n && t[(i + 2, i + 1)] != 0.0 {
                    return Err(Error::SchurFailure);
                }
                blocks.push((i, 2));
                i += 2;
            } else {
                blocks.push((i, 1));
                i += 1;
            }
        }
        Ok(Self { u, t, blocks })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let t = &self.t;
        let mut out = Vec::with_capacity(self.dim());
        for &(s, size) in &self.blocks {
            if size == 1 {
                out.push(Complex::new(t[(s, s)], 0.0));
                continue;
            }
            let (a, b, c, d) = (t[(s, s)], t[(s, s + 1)], t[(s + 1, s)], t[(s + 1, s + 1)]);
            let half_tr = 0.5 * (a + d);
            let half_diff = 0.5 * (a - d);
            let disc = half_diff * half_diff + b * c;
            if disc >= 0.0 {
                let r = disc.sqrt();
                out.push(Complex::new(half_tr + r, 0.0));
                out.push(Complex::new(half_tr - r, 0.0));
            } else {
                let r = (-disc).sqrt();
                out.push(Complex::new(half_tr, r));
                out.push(Complex::new(half_tr, -r));
            }
        }
        out
    }

    pub fn abscissa(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `min |λ_i + λ_j|`; zero means the Lyapunov operator is singular.
    pub fn min_pair_gap(&self) -> f64 {
        let ev = self.eigenvalues();
        let mut gap = f64::INFINITY;
        for i in 0..ev.len() {
            for j in i..ev.len() {
                gap = gap.min((ev[i] + ev[j]).norm());
            }
        }
        gap
    }

    /// Solves `Aᵀ X + X A + Q = 0` using this factorization of `A`.
    pub fn solve_lyapunov(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "Q is {}x{}, A is {n}x{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        if n == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let scale = self.t.amax().max(1.0);
        let gap = self.min_pair_gap();
        if !(gap > 1e-13 * scale) {
            return Err(Error::SpectralOverlap { min_gap: gap });
        }
        let c = -(self.u.tr_mul(&(q * &self.u)));
        let y = self.solve_transformed(&c)?;
        let mut x = &self.u * y * self.u.transpose();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (x[(i, j)] + x[(j, i)]);
                x[(i, j)] = v;
                x[(j, i)] = v;
            }
        }
        Ok(x)
    }

    // Tᵀ Y + Y T = C, column block by column block, row blocks top-down.
    fn solve_transformed(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let t = &self.t;
        let mut y = DMatrix::<f64>::zeros(n, n);
        for &(c0, nl) in &self.blocks {
            let mut rhs = c.columns(c0, nl).into_owned();
            if c0 > 0 {
                rhs -= y.columns(0, c0) * t.view((0, c0), (c0, nl));
            }
            for &(r0, nk) in &self.blocks {
                let local = rhs.view((r0, 0), (nk, nl)).into_owned();
                let sol = solve_small_sylvester(t, r0, nk, c0, nl, &local)?;
                y.view_mut((r0, c0), (nk, nl)).copy_from(&sol);
                // Rows below this block pick up Tᵀ_{k,r} Y_kl.
                for r in r0 + nk..n {
                    for jj in 0..nl {
                        let mut acc = 0.0;
                        for a in 0..nk {
                            acc += t[(r0 + a, r)] * sol[(a, jj)];
                        }
                        rhs[(r, jj)] -= acc;
                    }
                }
            }
        }
        Ok(y)
    }
}

// T_kkᵀ Y + Y T_ll = rhs for blocks of size ≤ 2, via the Kronecker form.
fn solve_small_sylvester(
    t: &DMatrix<f64>,
    r0: usize,
    nk: usize,
    c0: usize,
    nl: usize,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if nk == 1 && nl == 1 {
        let den = t[(r0, r0)] + t[(c0, c0)];
        if den == 0.0 {
            return Err(Error::SpectralOverlap { min_gap: 0.0 });
        }
        return Ok(DMatrix::from_element(1, 1, rhs[(0, 0)] / den));
    }
    let m = nk * nl;
    let mut k = DMatrix::<f64>::zeros(m, m);
    // vec index: a + nk * b for Y[a, b].
    for b in 0..nl {
        for a in 0..nk {
            let row = a + nk * b;
            for a2 in 0..nk {
                k[(row, a2 + nk * b)] += t[(r0 + a2, r0 + a)];
            }
            for b2 in 0..nl {
                k[(row, a + nk * b2)] += t[(c0 + b2, c0 + b)];
            }
        }
    }
    let v = DVector::from_iterator(m, (0..nl).flat_map(|b| (0..nk).map(move |a| (a, b))).map(|(a, b)| rhs[(a, b)]));
    let sol = k
        .lu()
        .solve(&v)
        .ok_or(Error::SpectralOverlap { min_gap: 0.0 })?;
    Ok(DMatrix::from_fn(nk, nl, |a, b| sol[a + nk * b]))
}

/// Solves `Aᵀ X + X A + Q = 0`.
pub fn solve_lyapunov(p: &LyapunovProblem) -> Result<DMatrix<f64>> {
    RealSchur::new(&p.a)?.solve_lyapunov(&p.q)
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(RealSchur::new(a)?.abscissa())
}

/// Stabilizing gain `k` (feedback `u = −kᵀx`) for `(A, b)`.
///
/// Zero when `A` is already Hurwitz; otherwise the shifted-Gramian (Bass)
/// construction `k = Z⁻¹ b` with `−(A + βI) Z − Z (A + βI)ᵀ + 2 b bᵀ = 0`,
/// which moves every closed-loop eigenvalue to real part `−β`.
pub fn stabilizing_gain(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let schur = RealSchur::new(a)?;
    if schur.abscissa() < 0.0 {
        return Ok(DVector::zeros(n));
    }
    let min_re = schur
        .eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::INFINITY, f64::min);
    let beta = (-min_re).max(0.0) + 1.0;
    let shifted = -(a + DMatrix::identity(n, n) * beta);
    let z = solve_lyapunov(&LyapunovProblem::new(shifted.transpose(), b * b.transpose() * 2.0)?)?;
    let chol = z
        .cholesky()
        .ok_or_else(|| Error::NotStabilizable("shifted controllability Gramian is singular".into()))?;
    let k = chol.solve(b);
    let closed = a - b * k.transpose();
    let absc = spectral_abscissa(&closed)?;
    if absc >= 0.0 {
        return Err(Error::NotStabilizable(format!(
            "shifted gain leaves abscissa {absc:e}"
        )));
    }
    Ok(k)
}

/// Stabilizing solution of the Riccati equation together with the residual
/// norm after each Newton step.
pub fn solve_are_with_history(
    p: &RiccatiProblem,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut k = stabilizing_gain(&p.a, &p.b)?;
    let scale = 1.0 + p.q.norm();
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let closed = &p.a - &p.b * k.transpose();
        let rhs = &p.q + &k * k.transpose();
        let x = solve_lyapunov(&LyapunovProblem::new(closed, rhs)?)?;
        k = &x * &p.b;
        let res = p.residual(&x).norm();
        history.push(res);
        if res <= tol * scale {
            let closed = &p.a - &p.b * (&p.b.transpose() * &x);
            if spectral_abscissa(&closed)? >= 0.0 {
                return Err(Error::NotStabilizable(
                    "Riccati solution does not stabilize the closed loop".into(),
                ));
            }
            return Ok((x, history));
        }
    }
    Err(Error::RiccatiStagnation {
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Newton-Kleinman for `Aᵀ P + P A − P B Bᵀ P + Q = 0`; stops once the
/// residual is at most `tol · (1 + ‖Q‖_F)`.
pub fn solve_are(p: &RiccatiProblem, tol: f64, max_iter: usize) -> Result<DMatrix<f64>> {
    solve_are_with_history(p, tol, max_iter).map(|(x, _)| x)
}
