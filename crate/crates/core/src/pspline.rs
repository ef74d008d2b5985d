//! Penalized B-splines (P-splines) on tensor-product bases.
//!
//! Each margin carries an equally spaced B-spline basis whose knot sequence is
//! extended by `degree` intervals beyond both endpoints. Coefficients are fitted
//! by penalized (weighted) least squares with a sum of difference penalties, one
//! per margin, sharing a single smoothing parameter chosen by generalized
//! cross-validation over a fixed grid.
//!
//! Fitting goes through [`NormalEquations`]: observations are folded into
//! `XᵀWX`, `XᵀWy` and `yᵀWy` so that large data sets never materialise a design
//! matrix. The smoothing-parameter search diagonalizes the Gram and penalty
//! matrices simultaneously once, after which every grid value costs `O(p²)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{argument, config, Error, Result};
use crate::linalg::sorted_symmetric_eigen;

/// Highest supported spline degree.
pub const MAX_DEGREE: usize = 7;

/// One margin of a tensor-product B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub degree: usize,
    pub num_basis: usize,
    pub domain_lo: f64,
    pub domain_hi: f64,
}

/// Nonzero basis values at a point: `values[r]` belongs to basis `first + r`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalBasis {
    pub first: usize,
    pub values: [f64; MAX_DEGREE + 1],
    pub len: usize,
}

impl LocalBasis {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values[..self.len]
            .iter()
            .enumerate()
            .map(move |(r, &v)| (self.first + r, v))
    }
}

impl BasisSpec {
    pub fn new(degree: usize, num_basis: usize, domain_lo: f64, domain_hi: f64) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(config(format!(
                "spline degree {degree} exceeds {MAX_DEGREE}"
            )));
        }
        if num_basis < degree + 1 {
            return Err(config(format!(
                "num_basis {num_basis} must be at least degree + 1 = {}",
                degree + 1
            )));
        }
        if !(domain_lo.is_finite() && domain_hi.is_finite() && domain_lo < domain_hi) {
            return Err(config(format!(
                "invalid basis domain [{domain_lo}, {domain_hi}]"
            )));
        }
        Ok(Self {
            degree,
            num_basis,
            domain_lo,
            domain_hi,
        })
    }

    /// Basis over `[lo, hi]` widened by a relative slack of 1e-9 on each side.
    pub fn spanning(lo: f64, hi: f64, degree: usize, num_basis: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(config(format!("invalid observed range [{lo}, {hi}]")));
        }
        let scale = (hi - lo).abs().max(lo.abs()).max(hi.abs()).max(1.0);
        let slack = 1e-9 * scale;
        Self::new(degree, num_basis, lo - slack, hi + slack)
    }

    pub fn num_segments(&self) -> usize {
        self.num_basis - self.degree
    }

    fn spacing(&self) -> f64 {
        (self.domain_hi - self.domain_lo) / self.num_segments() as f64
    }

    /// Full knot sequence, `num_basis + degree + 1` equally spaced values.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.num_basis + self.degree + 1)
            .map(|i| self.domain_lo + (i as f64 - self.degree as f64) * h)
            .collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain_lo && x <= self.domain_hi
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                lo: self.domain_lo,
                hi: self.domain_hi,
            })
        }
    }

    /// The `degree + 1` nonzero basis values at `x` (de Boor's triangular scheme).
    pub(crate) fn local(&self, x: f64) -> Result<LocalBasis> {
        self.check(x)?;
        let p = self.degree;
        let h = self.spacing();
        let nseg = self.num_segments();
        let seg = (((x - self.domain_lo) / h).floor().max(0.0) as usize).min(nseg - 1);
        let span = seg + p;
        let knot = |i: usize| self.domain_lo + (i as f64 - p as f64) * h;

        let mut n = [0.0; MAX_DEGREE + 1];
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - knot(span + 1 - j);
            right[j] = knot(span + j) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok(LocalBasis {
            first: seg,
            values: n,
            len: p + 1,
        })
    }
}

/// Dense B-spline design matrix, one row per point.
pub fn bspline_design(spec: &BasisSpec, points: &[f64]) -> Result<DMatrix<f64>> {
    let mut design = DMatrix::zeros(points.len(), spec.num_basis);
    for (row, &x) in points.iter().enumerate() {
        for (col, v) in spec.local(x)?.iter() {
            design[(row, col)] = v;
        }
    }
    Ok(design)
}

/// `DᵀD` for the `order`-th difference operator on `num_basis` coefficients.
pub fn difference_penalty(num_basis: usize, order: usize) -> Result<DMatrix<f64>> {
    if num_basis <= order {
        return Err(config(format!(
            "difference order {order} needs more than {order} coefficients, got {num_basis}"
        )));
    }
    // Rows of D hold binomial coefficients with alternating sign.
    let mut stencil = vec![1.0f64];
    for _ in 0..order {
        let mut next = vec![0.0; stencil.len() + 1];
        for (i, c) in stencil.iter().enumerate() {
            next[i] -= c;
            next[i + 1] += c;
        }
        stencil = next;
    }
    let rows = num_basis - order;
    let mut pen = DMatrix::zeros(num_basis, num_basis);
    for r in 0..rows {
        for (a, ca) in stencil.iter().enumerate() {
            for (b, cb) in stencil.iter().enumerate() {
                pen[(r + a, r + b)] += ca * cb;
            }
        }
    }
    Ok(pen)
}

/// Sum over margins of `I ⊗ … ⊗ DᵀD ⊗ … ⊗ I` (row-major coefficient layout).
pub fn tensor_penalty(margins: &[BasisSpec], order: usize) -> Result<DMatrix<f64>> {
    let sizes: Vec<usize> = margins.iter().map(|m| m.num_basis).collect();
    let total: usize = sizes.iter().product();
    let mut pen = DMatrix::zeros(total, total);
    for (d, margin) in margins.iter().enumerate() {
        let mut term = DMatrix::from_element(1, 1, 1.0);
        for (e, &n) in sizes.iter().enumerate() {
            let factor = if e == d {
                difference_penalty(margin.num_basis, order)?
            } else {
                DMatrix::identity(n, n)
            };
            term = term.kronecker(&factor);
        }
        pen += term;
    }
    Ok(pen)
}

/// Difference order and smoothing-parameter search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub order: usize,
    pub lambda_grid: Vec<f64>,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self {
            order: 2,
            lambda_grid: log_grid(1e-4, 1e6, 20),
        }
    }
}

impl PenaltySpec {
    pub fn fixed(order: usize, lambda: f64) -> Self {
        Self {
            order,
            lambda_grid: vec![lambda],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(config("penalty order must be at least 1"));
        }
        if self.lambda_grid.is_empty() {
            return Err(config("lambda grid is empty"));
        }
        if self
            .lambda_grid
            .iter()
            .any(|l| !(*l > 0.0) || !l.is_finite())
        {
            return Err(config("lambda grid values must be positive and finite"));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config("lambda grid must be strictly ascending"));
        }
        Ok(())
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// A fitted tensor-product P-spline, evaluable anywhere inside its domain box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSurface {
    pub margins: Vec<BasisSpec>,
    /// Row-major over the margins (last margin varies fastest).
    pub coefficients: Vec<f64>,
    /// Smoothing parameter per margin (shared value by default).
    pub selected_lambda: Vec<f64>,
    pub edf: f64,
    pub gcv: f64,
}

impl SmoothSurface {
    pub fn dim(&self) -> usize {
        self.margins.len()
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.margins.len() {
            return Err(argument(format!(
                "point has {} coordinates, surface has {} margins",
                point.len(),
                self.margins.len()
            )));
        }
        match self.margins.len() {
            1 => {
                let b = self.margins[0].local(point[0])?;
                Ok(b.iter().map(|(i, v)| self.coefficients[i] * v).sum())
            }
            2 => {
                let b0 = self.margins[0].local(point[0])?;
                let b1 = self.margins[1].local(point[1])?;
                let n1 = self.margins[1].num_basis;
                let mut acc = 0.0;
                for (i, vi) in b0.iter() {
                    let row = &self.coefficients[i * n1..(i + 1) * n1];
                    let inner: f64 = b1.iter().map(|(j, vj)| row[j] * vj).sum();
                    acc += vi * inner;
                }
                Ok(acc)
            }
            _ => {
                let locals = point
                    .iter()
                    .zip(&self.margins)
                    .map(|(&x, m)| m.local(x))
                    .collect::<Result<Vec<_>>>()?;
                let sizes: Vec<usize> = self.margins.iter().map(|m| m.num_basis).collect();
                let mut acc = 0.0;
                for_each_tensor(&locals, &sizes, |idx, w| acc += self.coefficients[idx] * w);
                Ok(acc)
            }
        }
    }

    pub fn eval_many<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<Vec<f64>> {
        points.iter().map(|p| self.eval(p.as_ref())).collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.margins.len()
            && point.iter().zip(&self.margins).all(|(&x, m)| m.contains(x))
    }
}

/// Evaluate a fitted surface at each point.
pub fn eval_surface<P: AsRef<[f64]>>(surface: &SmoothSurface, points: &[P]) -> Result<Vec<f64>> {
    surface.eval_many(points)
}

/// Visit every nonzero tensor-product basis value as `(flat index, value)`.
pub(crate) fn for_each_tensor(
    locals: &[LocalBasis],
    sizes: &[usize],
    mut visit: impl FnMut(usize, f64),
) {
    fn rec(
        locals: &[LocalBasis],
        sizes: &[usize],
        depth: usize,
        index: usize,
        weight: f64,
        visit: &mut dyn FnMut(usize, f64),
    ) {
        if depth == locals.len() {
            visit(index, weight);
            return;
        }
        for (i, v) in locals[depth].iter() {
            rec(
                locals,
                sizes,
                depth + 1,
                index * sizes[depth] + i,
                weight * v,
                visit,
            );
        }
    }
    rec(locals, sizes, 0, 0, 1.0, &mut visit);
}

/// Penalized least-squares solution at one smoothing parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub lambda: f64,
    pub coefficients: Vec<f64>,
    pub edf: f64,
    /// Weighted residual sum of squares.
    pub rss: f64,
    pub gcv: f64,
    /// `βᵀSβ` for the unscaled penalty `S`.
    pub penalty_value: f64,
}

/// Accumulated normal equations `XᵀWX`, `XᵀWy`, `yᵀWy` for a tensor basis.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    margins: Vec<BasisSpec>,
    sizes: Vec<usize>,
    dim: usize,
    /// Row-major `dim × dim`; only the upper triangle is written by `add`.
    gram: Vec<f64>,
    rhs: Vec<f64>,
    yy: f64,
    n_obs: usize,
}

impl NormalEquations {
    pub fn new(margins: Vec<BasisSpec>) -> Result<Self> {
        if margins.is_empty() || margins.len() > 3 {
            return Err(config(format!(
                "surfaces have 1 to 3 margins, got {}",
                margins.len()
            )));
        }
        let sizes: Vec<usize> = margins.iter().map(|m| m.num_basis).collect();
        let dim = sizes.iter().product();
        Ok(Self {
            margins,
            sizes,
            dim,
            gram: vec![0.0; dim * dim],
            rhs: vec![0.0; dim],
            yy: 0.0,
            n_obs: 0,
        })
    }

    pub fn margins(&self) -> &[BasisSpec] {
        &self.margins
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Fold one weighted observation into the normal equations.
    pub fn add(&mut self, point: &[f64], value: f64, weight: f64) -> Result<()> {
        if point.len() != self.margins.len() {
            return Err(argument(format!(
                "point has {} coordinates, expected {}",
                point.len(),
                self.margins.len()
            )));
        }
        if !value.is_finite() {
            return Err(argument(format!("non-finite value {value}")));
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(argument(format!("invalid weight {weight}")));
        }
        let locals = point
            .iter()
            .zip(&self.margins)
            .map(|(&x, m)| m.local(x))
            .collect::<Result<Vec<_>>>()?;
        let mut idx = [0usize; (MAX_DEGREE + 1) * (MAX_DEGREE + 1) * (MAX_DEGREE + 1)];
        let mut val = [0.0f64; (MAX_DEGREE + 1) * (MAX_DEGREE + 1) * (MAX_DEGREE + 1)];
        let mut len = 0;
        for_each_tensor(&locals, &self.sizes, |i, v| {
            idx[len] = i;
            val[len] = v;
            len += 1;
        });
        self.add_sparse_row(&idx[..len], &val[..len], value, weight);
        Ok(())
    }

    /// Fold a row given by ascending indices and their values.
    pub(crate) fn add_sparse_row(&mut self, idx: &[usize], val: &[f64], value: f64, weight: f64) {
        let d = self.dim;
        for a in 0..idx.len() {
            let wa = weight * val[a];
            let row = idx[a] * d;
            for b in a..idx.len() {
                self.gram[row + idx[b]] += wa * val[b];
            }
            self.rhs[idx[a]] += wa * value;
        }
        self.yy += weight * value * value;
        self.n_obs += 1;
    }

    /// Fold a precomputed block of normal equations living on the (ascending)
    /// coefficient indices `idx`. `block` is `idx.len()²`, row-major and symmetric.
    pub(crate) fn add_block(
        &mut self,
        idx: &[usize],
        block: &[f64],
        rhs: &[f64],
        yy: f64,
        n_obs: usize,
    ) {
        let d = self.dim;
        let m = idx.len();
        for a in 0..m {
            let row = idx[a] * d;
            for b in a..m {
                self.gram[row + idx[b]] += block[a * m + b];
            }
            self.rhs[idx[a]] += rhs[a];
        }
        self.yy += yy;
        self.n_obs += n_obs;
    }

    fn gram_matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| {
            if i <= j {
                self.gram[i * d + j]
            } else {
                self.gram[j * d + i]
            }
        })
    }

    /// Solve at a single smoothing parameter with a direct Cholesky factorization.
    pub fn solve_at(&self, order: usize, lambda: f64) -> Result<PenalizedFit> {
        if !(lambda > 0.0) {
            return Err(config(format!("lambda must be positive, got {lambda}")));
        }
        self.check_nonempty()?;
        let gram = self.gram_matrix();
        let pen = tensor_penalty(&self.margins, order)?;
        let a = &gram + &pen * lambda;
        let chol = robust_cholesky(a)?;
        let rhs = DVector::from_column_slice(&self.rhs);
        let beta = chol.solve(&rhs);
        let inv = chol.inverse();
        let edf = inv.component_mul(&gram).sum();
        let rss = self.rss(&gram, &rhs, &beta);
        let penalty_value = beta.dot(&(&pen * &beta));
        Ok(PenalizedFit {
            lambda,
            coefficients: beta.as_slice().to_vec(),
            edf,
            rss,
            gcv: gcv_score(self.n_obs, rss, edf),
            penalty_value,
        })
    }

    fn rss(&self, gram: &DMatrix<f64>, rhs: &DVector<f64>, beta: &DVector<f64>) -> f64 {
        (self.yy - 2.0 * beta.dot(rhs) + beta.dot(&(gram * beta))).max(0.0)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.n_obs == 0 {
            return Err(argument("no observations to fit"));
        }
        Ok(())
    }

    /// Evaluate every grid value of the smoothing parameter.
    pub fn gcv_path(&self, penalty: &PenaltySpec) -> Result<Vec<PenalizedFit>> {
        penalty.validate()?;
        self.check_nonempty()?;
        let gram = self.gram_matrix();
        let pen = tensor_penalty(&self.margins, penalty.order)?;
        let basis = SimultaneousBasis::new(&gram, &pen)?;
        let rhs = DVector::from_column_slice(&self.rhs);
        let projected = basis.project(&rhs);
        penalty
            .lambda_grid
            .iter()
            .map(|&lambda| {
                let (beta, edf) = basis.solve(&projected, lambda);
                let rss = self.rss(&gram, &rhs, &beta);
                let penalty_value = beta.dot(&(&pen * &beta));
                Ok(PenalizedFit {
                    lambda,
                    coefficients: beta.as_slice().to_vec(),
                    edf,
                    rss,
                    gcv: gcv_score(self.n_obs, rss, edf),
                    penalty_value,
                })
            })
            .collect()
    }

    /// Select the smoothing parameter by GCV and return the fitted surface.
    pub fn fit(&self, penalty: &PenaltySpec) -> Result<SmoothSurface> {
        let path = self.gcv_path(penalty)?;
        let best = select_gcv(&path);
        let fit = &path[best];
        Ok(SmoothSurface {
            margins: self.margins.clone(),
            coefficients: fit.coefficients.clone(),
            selected_lambda: vec![fit.lambda; self.margins.len()],
            edf: fit.edf,
            gcv: fit.gcv,
        })
    }
}

/// Index of the smallest GCV value; the first wins ties. When every score is
/// infinite (fewer observations than effective parameters) the strongest
/// smoothing is used.
pub fn select_gcv(path: &[PenalizedFit]) -> usize {
    let mut best: Option<usize> = None;
    for (i, f) in path.iter().enumerate() {
        if !f.gcv.is_finite() {
            continue;
        }
        match best {
            Some(b) if path[b].gcv <= f.gcv => {}
            _ => best = Some(i),
        }
    }
    best.unwrap_or(path.len() - 1)
}

/// `n · RSS / (n − edf)²`.
pub fn gcv_score(n: usize, rss: f64, edf: f64) -> f64 {
    let n = n as f64;
    let denom = n - edf;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n * rss / (denom * denom)
    }
}

fn robust_cholesky(mut a: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let d = a.nrows();
    let scale = (a.trace() / d as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for attempt in 0..8 {
        if let Some(c) = Cholesky::new(a.clone()) {
            return Ok(c);
        }
        let next = scale * 1e-12 * 100f64.powi(attempt);
        for i in 0..d {
            a[(i, i)] += next - jitter;
        }
        jitter = next;
    }
    Err(Error::Fit(
        "penalized normal equations are not positive definite".into(),
    ))
}

/// Simultaneous diagonalization of `G` and `S`: with `G + κS = LLᵀ` and
/// `L⁻¹GL⁻ᵀ = U diag(d) Uᵀ`, `G + λS = L U diag(d + (λ/κ)(1 − d)) Uᵀ Lᵀ`.
struct SimultaneousBasis {
    /// `L⁻ᵀ U`, so that `β = T diag(1/(d + μ(1-d))) Tᵀ b`.
    transform: DMatrix<f64>,
    d: Vec<f64>,
    kappa: f64,
}

impl SimultaneousBasis {
    fn new(gram: &DMatrix<f64>, pen: &DMatrix<f64>) -> Result<Self> {
        let tr_g = gram.trace();
        let tr_s = pen.trace();
        if !(tr_g > 0.0) {
            return Err(Error::Fit("all observation weights are zero".into()));
        }
        let kappa = tr_g / tr_s;
        let chol = robust_cholesky(gram + pen * kappa)?;
        let l = chol.l();
        // L⁻¹ G L⁻ᵀ
        let linv_g = l
            .solve_lower_triangular(gram)
            .ok_or_else(|| Error::Fit("singular Cholesky factor".into()))?;
        let inner = l
            .solve_lower_triangular(&linv_g.transpose())
            .ok_or_else(|| Error::Fit("singular Cholesky factor".into()))?;
        let eig = sorted_symmetric_eigen(&inner);
        let transform = l
            .transpose()
            .solve_upper_triangular(&eig.vectors)
            .ok_or_else(|| Error::Fit("singular Cholesky factor".into()))?;
        let d = eig.values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            transform,
            d,
            kappa,
        })
    }

    fn project(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.transform.tr_mul(rhs)
    }

    fn solve(&self, projected: &DVector<f64>, lambda: f64) -> (DVector<f64>, f64) {
        let mu = lambda / self.kappa;
        let mut scaled = projected.clone();
        let mut edf = 0.0;
        for (k, &d) in self.d.iter().enumerate() {
            let denom = d + mu * (1.0 - d);
            scaled[k] /= denom;
            edf += d / denom;
        }
        (&self.transform * scaled, edf)
    }
}

/// Fit a penalized tensor-product spline to scattered data, selecting the shared
/// smoothing parameter by GCV over `penalty.lambda_grid`.
pub fn fit_surface<P: AsRef<[f64]>>(
    points: &[P],
    values: &[f64],
    weights: Option<&[f64]>,
    margins: &[BasisSpec],
    penalty: &PenaltySpec,
) -> Result<SmoothSurface> {
    if points.is_empty() {
        return Err(argument("no observations to fit"));
    }
    if points.len() != values.len() {
        return Err(argument(format!(
            "{} points but {} values",
            points.len(),
            values.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != values.len() {
            return Err(argument("weights and values differ in length"));
        }
    }
    let mut normal = NormalEquations::new(margins.to_vec())?;
    for (i, (p, &y)) in points.iter().zip(values).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        normal.add(p.as_ref(), y, w)?;
    }
    normal.fit(penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if knots[i] <= x && x < knots[i + 1] {
                1.0
            } else {
                0.0
            };
        }
        let mut out = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            out += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            out += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        out
    }

    #[test]
    fn degree_zero_is_an_indicator() {
        let spec = BasisSpec::new(0, 4, 0.0, 4.0).unwrap();
        let row = bspline_design(&spec, &[1.5]).unwrap();
        assert_eq!(
            row.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn cubic_row_matches_recursive_definition() {
        let spec = BasisSpec::new(3, 8, 0.0, 1.0).unwrap();
        let knots = spec.knots();
        let row = bspline_design(&spec, &[0.37]).unwrap();
        for j in 0..8 {
            let expected = cox_de_boor(&knots, j, 3, 0.37);
            assert!((row[(0, j)] - expected).abs() < 1e-14, "basis {j}");
        }
    }

    #[test]
    fn right_endpoint_is_inside() {
        let spec = BasisSpec::new(3, 6, -1.0, 2.0).unwrap();
        let row = bspline_design(&spec, &[2.0]).unwrap();
        assert!((row.row(0).sum() - 1.0).abs() < 1e-12);
        assert!(bspline_design(&spec, &[2.0 + 1e-6]).is_err());
        assert!(bspline_design(&spec, &[-1.5]).is_err());
    }

    #[test]
    fn basis_spec_validation() {
        assert!(matches!(
            BasisSpec::new(3, 3, 0.0, 1.0),
            Err(Error::Config(_))
        ));
        assert!(BasisSpec::new(3, 4, 0.0, 1.0).is_ok());
        assert!(BasisSpec::new(3, 8, 1.0, 1.0).is_err());
    }

    #[test]
    fn first_difference_penalty_of_three() {
        let p = difference_penalty(3, 1).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]);
        assert_eq!(p, expected);
        assert!(difference_penalty(2, 2).is_err());
    }

    #[test]
    fn second_difference_penalty_matches_explicit_operator() {
        let n = 6;
        let mut d = DMatrix::zeros(n - 2, n);
        for r in 0..n - 2 {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        assert_eq!(difference_penalty(n, 2).unwrap(), d.transpose() * d);
    }

    #[test]
    fn penalty_rank() {
        for order in 1..4 {
            let p = difference_penalty(9, order).unwrap();
            let eig = nalgebra::SymmetricEigen::new(p);
            let rank = eig.eigenvalues.iter().filter(|v| **v > 1e-9).count();
            assert_eq!(rank, 9 - order);
        }
    }

    #[test]
    fn constant_data_is_reproduced() {
        let spec = BasisSpec::new(3, 10, 0.0, 1.0).unwrap();
        let pts: Vec<[f64; 1]> = (0..50).map(|i| [i as f64 / 49.0]).collect();
        let vals = vec![5.0; 50];
        let s = fit_surface(&pts, &vals, None, &[spec], &PenaltySpec::default()).unwrap();
        for x in [0.0, 0.123, 0.5, 1.0] {
            assert!((s.eval(&[x]).unwrap() - 5.0).abs() < 1e-8);
        }
    }

    #[test]
    fn empty_and_nonfinite_inputs_are_rejected() {
        let spec = BasisSpec::new(3, 6, 0.0, 1.0).unwrap();
        let none: Vec<[f64; 1]> = vec![];
        assert!(matches!(
            fit_surface(&none, &[], None, &[spec.clone()], &PenaltySpec::default()),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            fit_surface(
                &[[0.5]],
                &[f64::NAN],
                None,
                &[spec],
                &PenaltySpec::default()
            ),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn identical_points_still_fit() {
        let spec = BasisSpec::new(3, 6, 0.0, 1.0).unwrap();
        let pts = vec![[0.5]; 4];
        let vals = [1.0, 2.0, 3.0, 4.0];
        let s = fit_surface(&pts, &vals, None, &[spec], &PenaltySpec::default()).unwrap();
        // singular normal equations go through the jittered factorization
        let v = s.eval(&[0.5]).unwrap();
        assert!((v - 2.5).abs() < 1e-3, "{v}");
    }

    #[test]
    fn direct_and_diagonalized_solves_agree() {
        let spec = BasisSpec::new(3, 12, 0.0, 1.0).unwrap();
        let mut ne = NormalEquations::new(vec![spec]).unwrap();
        for i in 0..40 {
            let x = i as f64 / 39.0;
            ne.add(
                &[x],
                (6.0 * x).sin() + 0.1 * ((i * 7919) % 13) as f64 / 13.0,
                1.0,
            )
            .unwrap();
        }
        let grid = PenaltySpec {
            order: 2,
            lambda_grid: vec![1e-3, 1.0, 1e3],
        };
        let path = ne.gcv_path(&grid).unwrap();
        for f in &path {
            let direct = ne.solve_at(2, f.lambda).unwrap();
            assert!((direct.edf - f.edf).abs() < 1e-8);
            assert!((direct.rss - f.rss).abs() < 1e-8 * (1.0 + f.rss));
            for (a, b) in direct.coefficients.iter().zip(&f.coefficients) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn three_margin_evaluation_matches_naive_loop() {
        let margins = vec![
            BasisSpec::new(3, 5, 0.0, 1.0).unwrap(),
            BasisSpec::new(2, 4, 0.0, 2.0).unwrap(),
            BasisSpec::new(3, 6, -1.0, 1.0).unwrap(),
        ];
        let coefficients: Vec<f64> = (0..5 * 4 * 6)
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let surface = SmoothSurface {
            margins: margins.clone(),
            coefficients: coefficients.clone(),
            selected_lambda: vec![1.0; 3],
            edf: 0.0,
            gcv: 0.0,
        };
        let p = [0.3, 1.7, -0.2];
        let b: Vec<DMatrix<f64>> = (0..3)
            .map(|d| bspline_design(&margins[d], &[p[d]]).unwrap())
            .collect();
        let mut naive = 0.0;
        for i in 0..5 {
            for j in 0..4 {
                for k in 0..6 {
                    naive += coefficients[(i * 4 + j) * 6 + k]
                        * b[0][(0, i)]
                        * b[1][(0, j)]
                        * b[2][(0, k)];
                }
            }
        }
        assert!((surface.eval(&p).unwrap() - naive).abs() < 1e-12);
        assert!(surface.eval(&[0.0, 0.0, -1.0]).unwrap().is_finite());
        assert!(surface.eval(&[1.0, 2.0, 1.0]).unwrap().is_finite());
    }
}
