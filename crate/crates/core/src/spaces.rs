//! Weighted inner products and the H_Y-orthonormal spline family built from them.
//!
//! `H_X` is the `L²` space with weight `w²`; `H_Y` adds the unweighted
//! gradient pairing. All integrals are quadrature sums over a
//! [`QuadratureGrid`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{QuadratureGrid, RawTable, TensorSplineBasis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightKind {
    #[default]
    InverseNorm,
    Constant,
}

/// `w(x) = 1 / max(‖x‖, floor)` or `w ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightSpec {
    pub kind: WeightKind,
    pub floor: f64,
}

impl WeightSpec {
    pub fn inverse_norm() -> Self {
        Self {
            kind: WeightKind::InverseNorm,
            floor: 0.0,
        }
    }

    pub fn constant() -> Self {
        Self {
            kind: WeightKind::Constant,
            floor: 0.0,
        }
    }

    /// Singular at the origin.
    pub fn is_singular(&self) -> bool {
        self.kind == WeightKind::InverseNorm && self.floor <= 0.0
    }
}

pub fn weight_eval(spec: &WeightSpec, x: &[f64]) -> Result<f64> {
    match spec.kind {
        WeightKind::Constant => Ok(1.0),
        WeightKind::InverseNorm => {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(spec.floor);
            if r > 0.0 {
                Ok(1.0 / r)
            } else {
                Err(Error::SingularWeight { point: x.to_vec() })
            }
        }
    }
}

/// `w(x_q)²` at every node.
pub fn node_weights_squared(quad: &QuadratureGrid, w: &WeightSpec) -> Result<Vec<f64>> {
    (0..quad.len())
        .map(|q| {
            let v = weight_eval(w, quad.node(q))?;
            let v2 = v * v;
            if v2.is_finite() {
                Ok(v2)
            } else {
                Err(Error::SingularWeight {
                    point: quad.node(q).to_vec(),
                })
            }
        })
        .collect()
}

/// Raw matrix `K[i][j] = Σ_q left_q[i] · coeff_q · right_q[j]` where `left`
/// and `right` are local node arrays of a [`RawTable`].
///
/// Cells are processed in parallel; their local blocks are added into the
/// global matrix in cell order, so the result does not depend on scheduling.
pub fn assemble_raw(table: &RawTable, coeff: &[f64], left: &[f64], right: &[f64]) -> DMatrix<f64> {
    let l = table.local_size();
    let locals: Vec<Vec<f64>> = (0..table.n_cells())
        .into_par_iter()
        .map(|c| {
            let mut block = vec![0.0; l * l];
            for q in table.cell_nodes(c) {
                let cq = coeff[q];
                if cq == 0.0 {
                    continue;
                }
                let lv = &left[q * l..(q + 1) * l];
                let rv = &right[q * l..(q + 1) * l];
                for a in 0..l {
                    let s = lv[a] * cq;
                    if s == 0.0 {
                        continue;
                    }
                    let row = &mut block[a * l..(a + 1) * l];
                    for (r, x) in row.iter_mut().zip(rv) {
                        *r += s * x;
                    }
                }
            }
            block
        })
        .collect();
    let n = table.n_raw();
    let mut out = DMatrix::zeros(n, n);
    for (c, block) in locals.iter().enumerate() {
        let act = table.active(c);
        for a in 0..l {
            for b in 0..l {
                out[(act[a], act[b])] += block[a * l + b];
            }
        }
    }
    out
}

/// Raw vector `v[i] = Σ_q local_q[i] · coeff_q`.
pub fn assemble_raw_vector(table: &RawTable, coeff: &[f64], local: &[f64]) -> DVector<f64> {
    let l = table.local_size();
    let mut out = DVector::zeros(table.n_raw());
    for c in 0..table.n_cells() {
        let act = table.active(c);
        for q in table.cell_nodes(c) {
            let cq = coeff[q];
            for (a, &i) in act.iter().enumerate() {
                out[i] += local[q * l + a] * cq;
            }
        }
    }
    out
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn gram_x_raw(table: &RawTable, quad: &QuadratureGrid, w: &WeightSpec) -> Result<DMatrix<f64>> {
    let w2 = node_weights_squared(quad, w)?;
    let coeff: Vec<f64> = w2.iter().zip(quad.weights()).map(|(a, b)| a * b).collect();
    let mut g = assemble_raw(table, &coeff, table.values_all(), table.values_all());
    symmetrize(&mut g);
    check_finite(&g, "H_X Gram matrix")?;
    Ok(g)
}

fn stiffness_raw(table: &RawTable, quad: &QuadratureGrid) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(table.n_raw(), table.n_raw());
    for k in 0..table.dim() {
        g += assemble_raw(table, quad.weights(), table.gradient_all(k), table.gradient_all(k));
    }
    symmetrize(&mut g);
    g
}

/// Raw `H_X` Gram matrix `∫ φ_i φ_j w²`.
pub fn gram_hx(raw: &TensorSplineBasis, quad: &QuadratureGrid, w: &WeightSpec) -> Result<DMatrix<f64>> {
    gram_x_raw(&RawTable::new(raw, quad), quad, w)
}

/// Raw `H_Y` Gram matrix `∫ φ_i φ_j w² + Σ_k ∫ ∂_k φ_i ∂_k φ_j`.
pub fn gram_hy(raw: &TensorSplineBasis, quad: &QuadratureGrid, w: &WeightSpec) -> Result<DMatrix<f64>> {
    let table = RawTable::new(raw, quad);
    Ok(gram_x_raw(&table, quad, w)? + stiffness_raw(&table, quad))
}

fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `R = L⁻ᵀ` for the Cholesky factor `G = L Lᵀ`, so that `Rᵀ G R = I`.
pub fn orthonormalize(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(Error::DimensionMismatch("Gram matrix must be square".into()));
    }
    let chol = gram.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: "H_Y Gram matrix",
        min_eigenvalue: min_sym_eigenvalue(gram),
    })?;
    let lt = chol.l().transpose();
    lt.solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::NotPositiveDefinite {
            what: "H_Y Gram matrix",
            min_eigenvalue: 0.0,
        })
}

/// Restriction of the raw spline space to functions vanishing at the origin.
///
/// With `e_j = φ_j(0)` and pivot `k = argmax |e_j|`, the constrained family
/// is `ψ_j = φ_j − (e_j / e_k) φ_k` for `j ≠ k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginConstraint {
    pub pivot: usize,
    /// `(raw index, e_j / e_k)` for every `j ≠ k` with `e_j ≠ 0`.
    pub ratios: Vec<(usize, f64)>,
}

impl OriginConstraint {
    /// `None` when no raw function is nonzero at the origin.
    pub fn for_basis(raw: &TensorSplineBasis) -> Result<Option<Self>> {
        let d = raw.dim();
        if !raw.domain().contains_origin() {
            return Ok(None);
        }
        let at0 = raw.local_eval(&vec![0.0; d])?;
        let (mut pivot, mut best) = (0, 0.0);
        for (&i, &v) in at0.indices.iter().zip(&at0.values) {
            if v.abs() > best {
                best = v.abs();
                pivot = i;
            }
        }
        if best == 0.0 {
            return Ok(None);
        }
        let ek = at0
            .indices
            .iter()
            .zip(&at0.values)
            .find(|(i, _)| **i == pivot)
            .map(|(_, v)| *v)
            .unwrap_or(best);
        let mut ratios: Vec<(usize, f64)> = at0
            .indices
            .iter()
            .zip(&at0.values)
            .filter(|(i, v)| **i != pivot && **v != 0.0)
            .map(|(i, v)| (*i, v / ek))
            .collect();
        ratios.sort_by_key(|(i, _)| *i);
        Ok(Some(Self { pivot, ratios }))
    }

    /// `n_raw × (n_raw − 1)` matrix whose columns are the constrained functions
    /// in raw coordinates.
    pub fn matrix(&self, n_raw: usize) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(n_raw, n_raw - 1);
        let col = |j: usize| if j < self.pivot { j } else { j - 1 };
        for j in (0..n_raw).filter(|j| *j != self.pivot) {
            z[(j, col(j))] = 1.0;
        }
        for &(j, r) in &self.ratios {
            z[(self.pivot, col(j))] = -r;
        }
        z
    }
}

/// `H_Y`-orthonormal family `v_i` spanned by (possibly constrained) splines.
#[derive(Debug, Clone)]
pub struct RieszBasis {
    raw: TensorSplineBasis,
    constraint: Option<OriginConstraint>,
    transform: DMatrix<f64>,
    /// Raw coordinates of each `v_i` (columns): constraint matrix times `transform`.
    synthesis: DMatrix<f64>,
}

impl RieszBasis {
    /// Orthonormalizes the raw splines, optionally after restricting to
    /// functions that vanish at the origin.
    pub fn new(
        raw: TensorSplineBasis,
        quad: &QuadratureGrid,
        w: &WeightSpec,
        vanish_at_origin: bool,
    ) -> Result<Self> {
        let table = RawTable::new(&raw, quad);
        let g_raw = gram_x_raw(&table, quad, w)? + stiffness_raw(&table, quad);
        let constraint = if vanish_at_origin {
            OriginConstraint::for_basis(&raw)?
        } else {
            None
        };
        let (g, z) = match &constraint {
            Some(c) => {
                let z = c.matrix(raw.n_total());
                (z.transpose() * &g_raw * &z, Some(z))
            }
            None => (g_raw, None),
        };
        let mut g = g;
        symmetrize(&mut g);
        let transform = orthonormalize(&g)?;
        let synthesis = match z {
            Some(z) => z * &transform,
            None => transform.clone(),
        };
        Ok(Self {
            raw,
            constraint,
            transform,
            synthesis,
        })
    }

    /// Uses `transform` directly on the unconstrained raw splines.
    pub fn from_transform(raw: TensorSplineBasis, transform: DMatrix<f64>) -> Result<Self> {
        if transform.nrows() != raw.n_total() {
            return Err(Error::DimensionMismatch(format!(
                "transform has {} rows, basis has {} functions",
                transform.nrows(),
                raw.n_total()
            )));
        }
        Ok(Self {
            raw,
            constraint: None,
            synthesis: transform.clone(),
            transform,
        })
    }

    pub fn raw(&self) -> &TensorSplineBasis {
        &self.raw
    }

    pub fn constraint(&self) -> Option<&OriginConstraint> {
        self.constraint.as_ref()
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn synthesis(&self) -> &DMatrix<f64> {
        &self.synthesis
    }

    pub fn n(&self) -> usize {
        self.synthesis.ncols()
    }

    /// `Tᵀ K T` for a raw matrix `K`.
    pub fn congruence(&self, raw_matrix: &DMatrix<f64>) -> DMatrix<f64> {
        self.synthesis.tr_mul(&(raw_matrix * &self.synthesis))
    }
}

/// Dense tabulation of the orthonormal family at the quadrature nodes.
#[derive(Debug, Clone)]
pub struct NodeTable {
    /// node × basis.
    pub values: DMatrix<f64>,
    /// One node × basis matrix per axis.
    pub gradients: Vec<DMatrix<f64>>,
    pub w2: DVector<f64>,
    pub quad_weights: DVector<f64>,
}

impl NodeTable {
    /// `Σ_q a_i(x_q) b_j(x_q) coeff_q` for node × basis tables `a`, `b`.
    pub fn weighted_product(a: &DMatrix<f64>, coeff: &DVector<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = b.clone();
        for (q, mut row) in scaled.row_iter_mut().enumerate() {
            row *= coeff[q];
        }
        a.tr_mul(&scaled)
    }

    pub fn hx_weights(&self) -> DVector<f64> {
        self.w2.component_mul(&self.quad_weights)
    }

    pub fn gram_hx(&self) -> DMatrix<f64> {
        Self::weighted_product(&self.values, &self.hx_weights(), &self.values)
    }

    pub fn gram_hy(&self) -> DMatrix<f64> {
        let mut g = self.gram_hx();
        for d in &self.gradients {
            g += Self::weighted_product(d, &self.quad_weights, d);
        }
        g
    }
}

/// Dense raw tabulation (node × raw basis) of values and gradients.
pub fn raw_dense(table: &RawTable) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = table.n_nodes();
    let l = table.local_size();
    let mut values = DMatrix::zeros(n, table.n_raw());
    let mut grads = vec![DMatrix::zeros(n, table.n_raw()); table.dim()];
    for q in 0..n {
        let act = table.active(table.cell_of(q));
        for a in 0..l {
            values[(q, act[a])] = table.values(q)[a];
            for (k, g) in grads.iter_mut().enumerate() {
                g[(q, act[a])] = table.gradient(q, k)[a];
            }
        }
    }
    (values, grads)
}

/// Values and gradients of every `v_i` at every node. Dense; meant for
/// moderate basis sizes.
pub fn tabulate(riesz: &RieszBasis, quad: &QuadratureGrid, w: &WeightSpec) -> Result<NodeTable> {
    let table = RawTable::new(riesz.raw(), quad);
    let (values, grads) = raw_dense(&table);
    let t = riesz.synthesis();
    Ok(NodeTable {
        values: values * t,
        gradients: grads.into_iter().map(|g| g * t).collect(),
        w2: DVector::from_vec(node_weights_squared(quad, w)?),
        quad_weights: DVector::from_column_slice(quad.weights()),
    })
}
