//! Coordinate images of the generator, observation and control-coupling
//! operators on an `H_Y`-orthonormal spline family.
//!
//! Everything is assembled on the raw spline table (each quadrature cell
//! touches only `(degree + 1)^dim` splines) and mapped to orthonormal
//! coordinates by congruence with the synthesis matrix. The control-coupling
//! tensor `Γ_ijk = ⟨v_i, v_k bᵀ∇v_j⟩` is never formed; it is contracted
//! against node values of the feedback in one pass instead.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::basis::{QuadratureGrid, RawTable};
use crate::error::{Error, Result};
use crate::spaces::{assemble_raw, assemble_raw_vector, node_weights_squared, RieszBasis, WeightSpec};
use crate::system::{linearize, ControlAffineSystem, Linearization};

#[derive(Debug, Clone)]
pub struct AssembledOperators {
    riesz: RieszBasis,
    table: RawTable,
    quad: QuadratureGrid,
    /// `w(x_q)² · ω_q`.
    hx_weights: Vec<f64>,
    /// Local `b(x_q)ᵀ∇φ_l(x_q)`.
    b_grad: Vec<f64>,
    /// `M[i][j] = ⟨v_i, v_j⟩_{H_X}`.
    pub m: DMatrix<f64>,
    pub m_chol: Cholesky<f64, Dyn>,
    /// `F[i][j] = ⟨v_i, fᵀ∇v_j⟩_{H_X}`.
    pub f: DMatrix<f64>,
    /// `W[l][i] = ⟨v_i, c_l⟩_{H_X}`.
    pub w: DMatrix<f64>,
    /// `C̃ᵀC̃` with `C̃ = W M⁻¹`.
    pub observation_gram: DMatrix<f64>,
    /// Column `k`: orthonormal coordinates of the `H_X` projection of `x ↦ x_k`.
    pub linear_coords: DMatrix<f64>,
    pub linearization: Linearization,
}

pub fn assemble(
    riesz: &RieszBasis,
    quad: &QuadratureGrid,
    weight: &WeightSpec,
    sys: &ControlAffineSystem,
) -> Result<AssembledOperators> {
    if riesz.raw().domain() != sys.domain() {
        return Err(Error::DimensionMismatch(
            "basis and system are defined on different domains".into(),
        ));
    }
    if quad.dim() != sys.dim() {
        return Err(Error::DimensionMismatch(
            "quadrature grid dimension differs from the system".into(),
        ));
    }
    let table = RawTable::new(riesz.raw(), quad);
    let w2 = node_weights_squared(quad, weight)?;
    let hx_weights: Vec<f64> = w2.iter().zip(quad.weights()).map(|(a, b)| a * b).collect();
    let nodes: Vec<&[f64]> = (0..quad.len()).map(|q| quad.node(q)).collect();

    let f_grad = table.directional(|q| sys.f().value(nodes[q]));
    let b_grad = table.directional(|q| sys.b().value(nodes[q]));

    let mut m = riesz.congruence(&assemble_raw(&table, &hx_weights, table.values_all(), table.values_all()));
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let f = riesz.congruence(&assemble_raw(&table, &hx_weights, table.values_all(), &f_grad));
    if m.iter().chain(f.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "assembled operators",
        });
    }
    let m_chol = m.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: "H_X mass matrix M",
        min_eigenvalue: m.clone().symmetric_eigenvalues().min(),
    })?;

    let project = |g: &dyn Fn(&[f64]) -> f64| -> DVector<f64> {
        let coeff: Vec<f64> = (0..quad.len()).map(|q| g(nodes[q]) * hx_weights[q]).collect();
        riesz.synthesis().tr_mul(&assemble_raw_vector(&table, &coeff, table.values_all()))
    };

    let r = sys.observables().len();
    let mut w = DMatrix::zeros(r, n);
    for (l, c) in sys.observables().iter().enumerate() {
        let col = project(&|x| c.value(x)[0]);
        w.set_row(l, &col.transpose());
    }
    let c_tilde = m_chol.solve(&w.transpose()).transpose();
    let observation_gram = c_tilde.tr_mul(&c_tilde);

    let d = sys.dim();
    let mut linear_coords = DMatrix::zeros(n, d);
    for k in 0..d {
        let beta = project(&|x| x[k]);
        linear_coords.set_column(k, &m_chol.solve(&beta));
    }

    Ok(AssembledOperators {
        riesz: riesz.clone(),
        table,
        quad: quad.clone(),
        hx_weights,
        b_grad,
        m,
        m_chol,
        f,
        w,
        observation_gram,
        linear_coords,
        linearization: linearize(sys),
    })
}

impl AssembledOperators {
    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn riesz(&self) -> &RieszBasis {
        &self.riesz
    }

    pub fn quadrature(&self) -> &QuadratureGrid {
        &self.quad
    }

    pub fn n_nodes(&self) -> usize {
        self.table.n_nodes()
    }

    /// `Σ_q v_i(x_q) u(x_q) (bᵀ∇v_j)(x_q) w(x_q)² ω_q`, i.e. `Σ_k κ_k Γ_{i j k}`
    /// when `u = Σ_k κ_k v_k` at the nodes.
    pub fn contract_control(&self, u_nodes: &[f64]) -> DMatrix<f64> {
        let coeff: Vec<f64> = u_nodes.iter().zip(&self.hx_weights).map(|(u, w)| u * w).collect();
        self.riesz
            .congruence(&assemble_raw(&self.table, &coeff, self.table.values_all(), &self.b_grad))
    }

    /// Pointwise `−½ bᵀ∇v_S = −Σ_{m,n} S_mn v_m bᵀ∇v_n` at every node.
    pub fn feedback_nodes(&self, s: &DMatrix<f64>) -> Vec<f64> {
        let t = self.riesz.synthesis();
        let s_raw = t * s * t.transpose();
        let l = self.table.local_size();
        let table = &self.table;
        let per_cell: Vec<Vec<f64>> = (0..table.n_cells())
            .into_par_iter()
            .map(|c| {
                let act = table.active(c);
                let mut block = vec![0.0; l * l];
                for a in 0..l {
                    for b in 0..l {
                        block[a * l + b] = s_raw[(act[a], act[b])];
                    }
                }
                table
                    .cell_nodes(c)
                    .map(|q| {
                        let vals = table.values(q);
                        let bg = &self.b_grad[q * l..(q + 1) * l];
                        let mut acc = 0.0;
                        for a in 0..l {
                            if vals[a] == 0.0 {
                                continue;
                            }
                            let row = &block[a * l..(a + 1) * l];
                            let inner: f64 = row.iter().zip(bg).map(|(x, y)| x * y).sum();
                            acc += vals[a] * inner;
                        }
                        -acc
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; table.n_nodes()];
        for (c, vals) in per_cell.into_iter().enumerate() {
            for (q, v) in table.cell_nodes(c).zip(vals) {
                out[q] = v;
            }
        }
        out
    }

    /// `κ` with `M κ = (⟨v_k, u⟩_{H_X})_k`: coordinates of the best `H_X`
    /// approximation of `u` in the span.
    pub fn project_feedback(&self, u_nodes: &[f64]) -> DVector<f64> {
        let beta = self.feedback_moments(u_nodes);
        self.m_chol.solve(&beta)
    }

    /// `(⟨v_k, u⟩_{H_X})_k`.
    pub fn feedback_moments(&self, u_nodes: &[f64]) -> DVector<f64> {
        let coeff: Vec<f64> = u_nodes.iter().zip(&self.hx_weights).map(|(u, w)| u * w).collect();
        self.riesz
            .synthesis()
            .tr_mul(&assemble_raw_vector(&self.table, &coeff, self.table.values_all()))
    }

    /// Orthonormal-coordinate functions evaluated at the nodes: `u = Σ κ_k v_k`.
    pub fn synthesize_nodes(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        let raw = self.riesz.synthesis() * coeffs;
        let l = self.table.local_size();
        (0..self.table.n_nodes())
            .map(|q| {
                let act = self.table.active(self.table.cell_of(q));
                self.table
                    .values(q)
                    .iter()
                    .zip(act)
                    .map(|(v, i)| v * raw[*i])
                    .take(l)
                    .sum()
            })
            .collect()
    }

    /// `M⁻¹ X`.
    pub fn solve_mass(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.m_chol.solve(x)
    }

    /// Closed-loop generator in coordinates for the feedback generated by `S`,
    /// `A_cl = (F + Σ_k κ_k F_k)ᵀ M⁻¹`, together with `κ(S)`.
    pub fn closed_loop(&self, s: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let u = self.feedback_nodes(s);
        let kappa = self.project_feedback(&u);
        let k = &self.f + self.contract_control(&u);
        // Rows of K are indexed by the test function, so the coordinate
        // generator is Kᵀ M⁻¹, computed as (M⁻¹ K)ᵀ since M is symmetric.
        let a = self.solve_mass(&k).transpose();
        (a, kappa)
    }

    /// Open-loop generator `Fᵀ M⁻¹`.
    pub fn open_loop(&self) -> DMatrix<f64> {
        self.solve_mass(&self.f).transpose()
    }

    /// Quadrature nodes with `w²` and integration weights, for diagnostics.
    pub fn hx_weights(&self) -> &[f64] {
        &self.hx_weights
    }
}
