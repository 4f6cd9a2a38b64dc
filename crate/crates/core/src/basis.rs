//! Clamped B-splines and their tensor products on boxes, together with the
//! per-cell Gauss-Legendre rule used to integrate against them.

use std::ops::Range;

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]` in one or two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "lower has {} entries, upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        if !(1..=2).contains(&lower.len()) {
            return Err(Error::InvalidDomain(format!(
                "dimension {} not supported (1 or 2)",
                lower.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidDomain(format!(
                    "axis {k}: need lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Largest half-width over all axes.
    pub fn scale(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .fold(0.0, f64::max)
    }

    /// Membership in the closed box.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub fn contains_origin(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(lo, hi)| *lo <= 0.0 && *hi >= 0.0)
    }
}

/// Clamped B-spline space on one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpec1D {
    pub lower: f64,
    pub upper: f64,
    pub n_grid: usize,
    pub degree: usize,
    pub knots: Vec<f64>,
    pub n_basis: usize,
}

/// Uniform clamped knot vector with `n_grid` breakpoints on `interval`.
pub fn make_clamped_knots(interval: (f64, f64), n_grid: usize, degree: usize) -> Result<SplineSpec1D> {
    let (lower, upper) = interval;
    if !(lower.is_finite() && upper.is_finite() && lower < upper) {
        return Err(Error::InvalidSpline(format!(
            "invalid interval [{lower}, {upper}]"
        )));
    }
    if n_grid < 2 {
        return Err(Error::InvalidSpline(format!("n_grid = {n_grid} < 2")));
    }
    if degree < 1 {
        return Err(Error::InvalidSpline("degree must be at least 1".into()));
    }
    let spans = n_grid - 1;
    let width = (upper - lower) / spans as f64;
    let mut knots = Vec::with_capacity(n_grid + 2 * degree);
    knots.extend(std::iter::repeat_n(lower, degree + 1));
    knots.extend((1..spans).map(|k| lower + k as f64 * width));
    knots.extend(std::iter::repeat_n(upper, degree + 1));
    Ok(SplineSpec1D {
        lower,
        upper,
        n_grid,
        degree,
        n_basis: n_grid + degree - 1,
        knots,
    })
}

impl SplineSpec1D {
    /// Knot span index `s` with `knots[s] <= x < knots[s + 1]`; the right end
    /// of the interval belongs to the last span.
    pub fn find_span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.n_basis - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        if x <= self.knots[p] {
            return p;
        }
        // knots[p..=last+1] is nondecreasing; find the last knot <= x.
        let upto = self.knots[p..=last + 1].partition_point(|&k| k <= x);
        p + upto - 1
    }

    /// Values and first derivatives of the `degree + 1` splines that are
    /// nonzero on `span`, written to `vals` / `ders` (indices `span - degree ..= span`).
    pub fn eval_span(&self, span: usize, x: f64, vals: &mut [f64], ders: &mut [f64]) {
        let p = self.degree;
        debug_assert!(vals.len() > p && ders.len() > p);
        let mut lower = [0.0; 32];
        basis_funs(&self.knots, span, x, p - 1, &mut lower);
        basis_funs(&self.knots, span, x, p, vals);
        let pf = p as f64;
        for j in 0..=p {
            let i = span - p + j;
            let mut d = 0.0;
            if j >= 1 {
                let den = self.knots[i + p] - self.knots[i];
                if den > 0.0 {
                    d += pf * lower[j - 1] / den;
                }
            }
            if j < p {
                let den = self.knots[i + p + 1] - self.knots[i + 1];
                if den > 0.0 {
                    d -= pf * lower[j] / den;
                }
            }
            ders[j] = d;
        }
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if x.is_finite() && x >= self.lower && x <= self.upper {
            Ok(())
        } else {
            Err(Error::OutsideDomain { point: vec![x] })
        }
    }
}

// Cox-de Boor triangle for the `deg + 1` nonzero splines of degree `deg` on `span`.
fn basis_funs(knots: &[f64], span: usize, x: f64, deg: usize, out: &mut [f64]) {
    let mut left = [0.0; 32];
    let mut right = [0.0; 32];
    out[0] = 1.0;
    for j in 1..=deg {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// Value and derivative of the `index`-th B-spline at `x`.
pub fn bspline_eval(spec: &SplineSpec1D, index: usize, x: f64) -> Result<(f64, f64)> {
    spec.check_point(x)?;
    if index >= spec.n_basis {
        return Err(Error::InvalidArgument(format!(
            "spline index {index} out of range (n_basis = {})",
            spec.n_basis
        )));
    }
    let p = spec.degree;
    let span = spec.find_span(x);
    if index + p < span || index > span {
        return Ok((0.0, 0.0));
    }
    let mut vals = [0.0; 32];
    let mut ders = [0.0; 32];
    spec.eval_span(span, x, &mut vals, &mut ders);
    let j = index + p - span;
    Ok((vals[j], ders[j]))
}

/// Tensor product of clamped spline spaces over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSplineBasis {
    domain: BoxDomain,
    specs: Vec<SplineSpec1D>,
    strides: Vec<usize>,
    n_total: usize,
}

/// Nonzero raw basis functions at one point.
#[derive(Debug, Clone, Default)]
pub struct LocalEval {
    /// Flat raw indices, `(degree + 1)^dim` of them.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// `gradients[k * indices.len() + l]` is the `k`-th partial of function `l`.
    pub gradients: Vec<f64>,
}

impl TensorSplineBasis {
    /// Same grid resolution and degree on every axis.
    pub fn uniform(domain: BoxDomain, n_grid: usize, degree: usize) -> Result<Self> {
        let specs = (0..domain.dim())
            .map(|k| make_clamped_knots((domain.lower()[k], domain.upper()[k]), n_grid, degree))
            .collect::<Result<Vec<_>>>()?;
        Self::new(domain, specs)
    }

    pub fn new(domain: BoxDomain, specs: Vec<SplineSpec1D>) -> Result<Self> {
        if specs.len() != domain.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} spline specs for a {}-dimensional domain",
                specs.len(),
                domain.dim()
            )));
        }
        let degree = specs[0].degree;
        for (k, s) in specs.iter().enumerate() {
            if s.lower != domain.lower()[k] || s.upper != domain.upper()[k] {
                return Err(Error::InvalidSpline(format!(
                    "axis {k}: knot span does not match the domain"
                )));
            }
            if s.degree != degree {
                return Err(Error::InvalidSpline("mixed degrees are not supported".into()));
            }
            if degree > 30 {
                return Err(Error::InvalidSpline(format!("degree {degree} too large")));
            }
        }
        let mut strides = vec![1; specs.len()];
        for k in (0..specs.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * specs[k + 1].n_basis;
        }
        let n_total = specs.iter().map(|s| s.n_basis).product();
        Ok(Self {
            domain,
            specs,
            strides,
            n_total,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn specs(&self) -> &[SplineSpec1D] {
        &self.specs
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn degree(&self) -> usize {
        self.specs[0].degree
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Number of raw functions that can be nonzero at a point.
    pub fn local_size(&self) -> usize {
        (self.degree() + 1).pow(self.dim() as u32)
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rest = flat;
        self.strides
            .iter()
            .map(|s| {
                let i = rest / s;
                rest %= s;
                i
            })
            .collect()
    }

    /// Value and gradient of one raw basis function.
    pub fn tensor_eval(&self, flat_index: usize, point: &[f64]) -> Result<(f64, Vec<f64>)> {
        if !self.domain.contains(point) {
            return Err(Error::OutsideDomain {
                point: point.to_vec(),
            });
        }
        if flat_index >= self.n_total {
            return Err(Error::InvalidArgument(format!(
                "flat index {flat_index} out of range ({})",
                self.n_total
            )));
        }
        let multi = self.multi_index(flat_index);
        let d = self.dim();
        let mut vals = vec![0.0; d];
        let mut ders = vec![0.0; d];
        for k in 0..d {
            let (v, dv) = bspline_eval(&self.specs[k], multi[k], point[k])?;
            vals[k] = v;
            ders[k] = dv;
        }
        let value = vals.iter().product();
        let grad = (0..d)
            .map(|k| {
                (0..d)
                    .map(|j| if j == k { ders[j] } else { vals[j] })
                    .product()
            })
            .collect();
        Ok((value, grad))
    }

    /// All nonzero raw functions at `point`, assuming it lies in the closed box.
    pub fn local_eval(&self, point: &[f64]) -> Result<LocalEval> {
        if !self.domain.contains(point) {
            return Err(Error::OutsideDomain {
                point: point.to_vec(),
            });
        }
        let mut out = LocalEval::default();
        let spans: Vec<usize> = (0..self.dim()).map(|k| self.specs[k].find_span(point[k])).collect();
        self.local_eval_on(&spans, point, &mut out);
        Ok(out)
    }

    /// Like [`local_eval`](Self::local_eval) with the knot spans fixed by the caller.
    pub(crate) fn local_eval_on(&self, spans: &[usize], point: &[f64], out: &mut LocalEval) {
        let d = self.dim();
        let p = self.degree();
        let m = p + 1;
        let mut vals = [[0.0; 32]; 2];
        let mut ders = [[0.0; 32]; 2];
        for k in 0..d {
            self.specs[k].eval_span(spans[k], point[k], &mut vals[k], &mut ders[k]);
        }
        let size = self.local_size();
        out.indices.clear();
        out.values.clear();
        out.gradients.clear();
        out.gradients.resize(d * size, 0.0);
        if d == 1 {
            for a in 0..m {
                out.indices.push(spans[0] - p + a);
                out.values.push(vals[0][a]);
                out.gradients[a] = ders[0][a];
            }
        } else {
            for a in 0..m {
                for b in 0..m {
                    let l = a * m + b;
                    out.indices
                        .push((spans[0] - p + a) * self.strides[0] + (spans[1] - p + b));
                    out.values.push(vals[0][a] * vals[1][b]);
                    out.gradients[l] = ders[0][a] * vals[1][b];
                    out.gradients[size + l] = vals[0][a] * ders[1][b];
                }
            }
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre_rule(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=64).contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let pn = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * pn - p0) / (x * x - 1.0);
    (pn, dp)
}

/// One tensor cell of the quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadCell {
    /// Knot span per axis; identifies the active raw functions.
    pub spans: Vec<usize>,
    pub nodes: Range<usize>,
}

/// How cells touching the origin are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OriginHandling {
    /// Cells follow the knot spans exactly.
    #[default]
    Ignore,
    /// Cells whose interior crosses a coordinate axis through the origin are
    /// split there, so the origin only ever lies on cell boundaries.
    Split,
}

/// Per-cell tensor Gauss-Legendre rule over a spline basis.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    dim: usize,
    order: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    cells: Vec<QuadCell>,
}

pub fn build_quadrature_grid(basis: &TensorSplineBasis, order: usize) -> Result<QuadratureGrid> {
    QuadratureGrid::build(basis, order, OriginHandling::Ignore)
}

impl QuadratureGrid {
    pub fn build(basis: &TensorSplineBasis, order: usize, origin: OriginHandling) -> Result<Self> {
        let (gl_nodes, gl_weights) = gauss_legendre_rule(order)?;
        let dim = basis.dim();

        // Per axis: (a, b, span) intervals.
        let axes: Vec<Vec<(f64, f64, usize)>> = basis
            .specs()
            .iter()
            .map(|s| {
                let mut out = Vec::new();
                for span in s.degree..s.n_basis {
                    let (a, b) = (s.knots[span], s.knots[span + 1]);
                    if b <= a {
                        continue;
                    }
                    if origin == OriginHandling::Split && a < 0.0 && b > 0.0 {
                        out.push((a, 0.0, span));
                        out.push((0.0, b, span));
                    } else {
                        out.push((a, b, span));
                    }
                }
                out
            })
            .collect();

        let per_cell = order.pow(dim as u32);
        let n_cells: usize = axes.iter().map(Vec::len).product();
        let mut points = Vec::with_capacity(n_cells * per_cell * dim);
        let mut weights = Vec::with_capacity(n_cells * per_cell);
        let mut cells = Vec::with_capacity(n_cells);

        let map = |a: f64, b: f64, t: f64| 0.5 * (a + b) + 0.5 * (b - a) * t;
        match dim {
            1 => {
                for &(a, b, span) in &axes[0] {
                    let start = weights.len();
                    for (t, w) in gl_nodes.iter().zip(&gl_weights) {
                        points.push(map(a, b, *t));
                        weights.push(0.5 * (b - a) * w);
                    }
                    cells.push(QuadCell {
                        spans: vec![span],
                        nodes: start..weights.len(),
                    });
                }
            }
            _ => {
                for &(a0, b0, s0) in &axes[0] {
                    for &(a1, b1, s1) in &axes[1] {
                        let start = weights.len();
                        let jac = 0.25 * (b0 - a0) * (b1 - a1);
                        for (t0, w0) in gl_nodes.iter().zip(&gl_weights) {
                            for (t1, w1) in gl_nodes.iter().zip(&gl_weights) {
                                points.push(map(a0, b0, *t0));
                                points.push(map(a1, b1, *t1));
                                weights.push(jac * w0 * w1);
                            }
                        }
                        cells.push(QuadCell {
                            spans: vec![s0, s1],
                            nodes: start..weights.len(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            dim,
            order,
            points,
            weights,
            cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cells(&self) -> &[QuadCell] {
        &self.cells
    }

    /// Smallest Euclidean distance from any node to the origin.
    pub fn min_origin_distance(&self) -> f64 {
        (0..self.len())
            .map(|q| self.node(q).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Quadrature sum of `g` over the grid.
    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|q| self.weights[q] * g(self.node(q))).sum()
    }
}

/// Raw spline values and gradients at every quadrature node, grouped by cell.
///
/// Each cell activates the same `(degree + 1)^dim` raw functions at all of
/// its nodes, so the table stores only those local entries.
#[derive(Debug, Clone)]
pub struct RawTable {
    dim: usize,
    local: usize,
    n_raw: usize,
    /// `active[c * local + l]`: raw index of local function `l` in cell `c`.
    active: Vec<usize>,
    cell_nodes: Vec<Range<usize>>,
    /// `values[q * local + l]`.
    values: Vec<f64>,
    /// `grads[k][q * local + l]`.
    grads: Vec<Vec<f64>>,
    cell_of_node: Vec<usize>,
}

impl RawTable {
    pub fn new(basis: &TensorSplineBasis, quad: &QuadratureGrid) -> Self {
        let dim = basis.dim();
        let local = basis.local_size();
        let n = quad.len();
        let mut active = Vec::with_capacity(quad.cells().len() * local);
        let mut values = vec![0.0; n * local];
        let mut grads = vec![vec![0.0; n * local]; dim];
        let mut cell_of_node = vec![0; n];
        let mut buf = LocalEval::default();
        for (c, cell) in quad.cells().iter().enumerate() {
            for q in cell.nodes.clone() {
                basis.local_eval_on(&cell.spans, quad.node(q), &mut buf);
                values[q * local..(q + 1) * local].copy_from_slice(&buf.values);
                for (k, g) in grads.iter_mut().enumerate() {
                    g[q * local..(q + 1) * local]
                        .copy_from_slice(&buf.gradients[k * local..(k + 1) * local]);
                }
                cell_of_node[q] = c;
            }
            active.extend_from_slice(&buf.indices);
        }
        Self {
            dim,
            local,
            n_raw: basis.n_total(),
            active,
            cell_nodes: quad.cells().iter().map(|c| c.nodes.clone()).collect(),
            values,
            grads,
            cell_of_node,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn local_size(&self) -> usize {
        self.local
    }

    pub fn n_raw(&self) -> usize {
        self.n_raw
    }

    pub fn n_nodes(&self) -> usize {
        self.cell_of_node.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_nodes.len()
    }

    pub fn cell_nodes(&self, cell: usize) -> Range<usize> {
        self.cell_nodes[cell].clone()
    }

    pub fn active(&self, cell: usize) -> &[usize] {
        &self.active[cell * self.local..(cell + 1) * self.local]
    }

    /// Local values for all nodes, `[q * local + l]`.
    pub fn values_all(&self) -> &[f64] {
        &self.values
    }

    /// Local `k`-th partials for all nodes, `[q * local + l]`.
    pub fn gradient_all(&self, k: usize) -> &[f64] {
        &self.grads[k]
    }

    pub fn values(&self, q: usize) -> &[f64] {
        &self.values[q * self.local..(q + 1) * self.local]
    }

    pub fn gradient(&self, q: usize, k: usize) -> &[f64] {
        &self.grads[k][q * self.local..(q + 1) * self.local]
    }

    pub fn cell_of(&self, q: usize) -> usize {
        self.cell_of_node[q]
    }

    /// Local directional derivatives `dir(q) · ∇φ_l(x_q)` for every node.
    pub fn directional(&self, dir: impl Fn(usize) -> Vec<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes() * self.local];
        for q in 0..self.n_nodes() {
            let v = dir(q);
            let row = &mut out[q * self.local..(q + 1) * self.local];
            for (k, vk) in v.iter().enumerate().take(self.dim) {
                for (r, g) in row.iter_mut().zip(self.gradient(q, k)) {
                    *r += vk * g;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(lo: f64, hi: f64, n: usize, p: usize) -> SplineSpec1D {
        make_clamped_knots((lo, hi), n, p).unwrap()
    }

    #[test]
    fn minimal_hat_pair() {
        let s = spec(-1.0, 1.0, 2, 1);
        assert_eq!(s.knots, vec![-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(s.n_basis, 2);
    }

    #[test]
    fn reference_resolution_count() {
        assert_eq!(spec(-3.0, 3.0, 31, 5).n_basis, 35);
    }

    #[test]
    fn cubic_on_unit_spans() {
        let s = spec(0.0, 4.0, 5, 3);
        assert_eq!(s.n_basis, 7);
        assert_eq!(&s.knots[3..8], &[0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn knot_errors() {
        assert!(make_clamped_knots((1.0, 1.0), 4, 2).is_err());
        assert!(make_clamped_knots((0.0, 1.0), 1, 2).is_err());
        assert!(make_clamped_knots((0.0, 1.0), 3, 0).is_err());
    }

    #[test]
    fn hat_peak() {
        let s = spec(-1.0, 1.0, 3, 1);
        assert_eq!(s.knots, vec![-1.0, -1.0, 0.0, 1.0, 1.0]);
        let (v, _) = bspline_eval(&s, 1, 0.0).unwrap();
        assert_eq!(v, 1.0);
        let (v, d) = bspline_eval(&s, 1, 0.5).unwrap();
        assert!((v - 0.5).abs() < 1e-15 && (d + 1.0).abs() < 1e-15);
    }

    #[test]
    fn outside_interval_is_error() {
        let s = spec(-1.0, 1.0, 3, 2);
        assert!(bspline_eval(&s, 0, 1.5).is_err());
        assert!(bspline_eval(&s, 0, f64::NAN).is_err());
    }

    #[test]
    fn support_locality() {
        let s = spec(0.0, 10.0, 11, 2);
        // B_0 is supported on [0, 1].
        assert_eq!(bspline_eval(&s, 0, 5.0).unwrap(), (0.0, 0.0));
        let b = TensorSplineBasis::uniform(BoxDomain::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap(), 11, 2).unwrap();
        let (v, g) = b.tensor_eval(b.flat_index(&[0, 5]), &[7.0, 5.0]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn corner_function_is_one_at_corner() {
        let d = BoxDomain::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap();
        let b = TensorSplineBasis::uniform(d, 5, 3).unwrap();
        let (v, _) = b.tensor_eval(0, &[-2.0, -1.0]).unwrap();
        assert_eq!(v, 1.0);
        let last = b.n_total() - 1;
        let (v, _) = b.tensor_eval(last, &[2.0, 3.0]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn index_map_is_bijection() {
        let d = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = TensorSplineBasis::uniform(d, 4, 2).unwrap();
        for i in 0..b.n_total() {
            assert_eq!(b.flat_index(&b.multi_index(i)), i);
        }
        assert_eq!(b.n_total(), 25);
    }

    #[test]
    fn gauss_legendre_small_orders() {
        let (x, w) = gauss_legendre_rule(1).unwrap();
        assert_eq!((x, w), (vec![0.0], vec![2.0]));
        let (x, w) = gauss_legendre_rule(2).unwrap();
        let r = 1.0 / 3f64.sqrt();
        assert!((x[0] + r).abs() < 1e-15 && (x[1] - r).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] - 1.0).abs() < 1e-15);
        let (x, w) = gauss_legendre_rule(3).unwrap();
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((i - 0.4).abs() <= 1e-15);
        assert!(gauss_legendre_rule(0).is_err());
        assert!(gauss_legendre_rule(65).is_err());
    }

    #[test]
    fn gauss_legendre_exactness_all_orders() {
        for n in 1..=64 {
            let (x, w) = gauss_legendre_rule(n).unwrap();
            assert!(w.iter().all(|w| *w > 0.0));
            for (a, b) in x.iter().zip(x.iter().rev()) {
                assert!((a + b).abs() < 1e-14);
            }
            for deg in (0..2 * n).step_by(2) {
                let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 2.0 / (deg as f64 + 1.0);
                assert!((i - exact).abs() <= 1e-13 * exact.max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn single_cell_midpoint_grid() {
        let d = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let b = TensorSplineBasis::uniform(d, 2, 1).unwrap();
        let g = build_quadrature_grid(&b, 1).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.node(0), &[0.0]);
        assert_eq!(g.weights(), &[2.0]);
    }

    #[test]
    fn origin_split_keeps_nodes_off_origin() {
        let d = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let b = TensorSplineBasis::uniform(d, 2, 1).unwrap();
        let g = QuadratureGrid::build(&b, 1, OriginHandling::Split).unwrap();
        assert_eq!(g.cells().len(), 2);
        assert!(g.min_origin_distance() > 0.4);
        assert!((g.weights().iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_volume_and_separable_integral() {
        let d = BoxDomain::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let b = TensorSplineBasis::uniform(d, 7, 3).unwrap();
        let g = build_quadrature_grid(&b, 2).unwrap();
        let vol: f64 = g.weights().iter().sum();
        assert!((vol - 36.0).abs() <= 1e-12 * 36.0);
        let i = g.integrate(|x| x[0] * x[0] * x[1] * x[1]);
        assert!((i - 324.0).abs() <= 1e-12 * 324.0);
    }

    #[test]
    fn raw_table_matches_tensor_eval() {
        let d = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let b = TensorSplineBasis::uniform(d, 4, 2).unwrap();
        let g = QuadratureGrid::build(&b, 3, OriginHandling::Split).unwrap();
        let t = RawTable::new(&b, &g);
        for q in (0..g.len()).step_by(7) {
            let c = t.cell_of(q);
            for (l, &i) in t.active(c).iter().enumerate() {
                let (v, gr) = b.tensor_eval(i, g.node(q)).unwrap();
                assert!((v - t.values(q)[l]).abs() < 1e-14);
                assert!((gr[0] - t.gradient(q, 0)[l]).abs() < 1e-13);
                assert!((gr[1] - t.gradient(q, 1)[l]).abs() < 1e-13);
            }
        }
    }
}
