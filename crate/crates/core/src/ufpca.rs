//! Univariate variable-domain FPCA.
//!
//! For one functional variable the mean `μ(t, T)` is smoothed over `(t, T)`, the
//! covariance `γ(t, s, T)` over `(t, s, T)` from within-subject products of
//! centred observations, and for any domain length the covariance kernel is
//! decomposed on a quadrature grid over `[0, T]`. Scores are trapezoid
//! projections of each subject's residual curve onto the eigenfunctions at its
//! own domain length.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{FunctionalDataset, Series};
use crate::error::{argument, config, Error, Result};
use crate::linalg::{
    components_for_pve, interp_linear, quadrature_eigen, trapezoid_weights, uniform_grid,
};
use crate::pspline::{BasisSpec, NormalEquations, PenaltySpec, SmoothSurface};

/// Basis sizes and penalty for the mean and covariance smooths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherConfig {
    pub degree: usize,
    /// `(t, T)` margins of the mean surface.
    pub mean_basis: [usize; 2],
    /// `(t, s, T)` margins of the covariance surface.
    pub cov_basis: [usize; 3],
    pub penalty: PenaltySpec,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            mean_basis: [10, 10],
            cov_basis: [8, 8, 8],
            penalty: PenaltySpec::default(),
        }
    }
}

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ComponentRule {
    Fixed(usize),
    /// Smallest count reaching the cumulative share `threshold`, capped at `max`.
    Pve {
        threshold: f64,
        max: usize,
    },
}

impl ComponentRule {
    pub fn select(&self, eigenvalues: &[f64]) -> usize {
        match *self {
            ComponentRule::Fixed(k) => k.min(eigenvalues.len()),
            ComponentRule::Pve { threshold, max } => {
                components_for_pve(eigenvalues, threshold, max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UfpcaConfig {
    pub smoother: SmootherConfig,
    pub grid_step: f64,
    pub pve: f64,
    pub k_max: usize,
    /// Overrides the PVE rule when set.
    pub k_fixed: Option<usize>,
    /// Keep same-time products (which carry the noise variance) in the
    /// covariance smooth.
    pub include_diagonal: bool,
}

impl Default for UfpcaConfig {
    fn default() -> Self {
        Self {
            smoother: SmootherConfig::default(),
            grid_step: 1.0,
            pve: 0.95,
            k_max: 8,
            k_fixed: None,
            include_diagonal: false,
        }
    }
}

impl UfpcaConfig {
    pub fn component_rule(&self) -> ComponentRule {
        match self.k_fixed {
            Some(k) => ComponentRule::Fixed(k),
            None => ComponentRule::Pve {
                threshold: self.pve,
                max: self.k_max,
            },
        }
    }
}

/// A smooth over time coordinates and domain length `T`. When every subject
/// shares one domain length the `T` margin is dropped and the surface only
/// answers for that length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSurface {
    pub surface: SmoothSurface,
    pub fixed_domain: Option<f64>,
}

impl ConditionalSurface {
    fn check_domain(&self, big_t: f64) -> Result<()> {
        match self.fixed_domain {
            Some(t0) => {
                let tol = 1e-9 * t0.abs().max(1.0);
                if (big_t - t0).abs() > tol {
                    return Err(Error::Domain {
                        value: big_t,
                        lo: t0,
                        hi: t0,
                    });
                }
                Ok(())
            }
            None => {
                let m = self.surface.margins.last().expect("T margin");
                if m.contains(big_t) {
                    Ok(())
                } else {
                    Err(Error::Domain {
                        value: big_t,
                        lo: m.domain_lo,
                        hi: m.domain_hi,
                    })
                }
            }
        }
    }

    /// Range of domain lengths the surface may be evaluated at.
    pub fn domain_range(&self) -> (f64, f64) {
        match self.fixed_domain {
            Some(t0) => (t0, t0),
            None => {
                let m = self.surface.margins.last().expect("T margin");
                (m.domain_lo, m.domain_hi)
            }
        }
    }

    fn eval_coords(&self, coords: &[f64], big_t: f64) -> Result<f64> {
        self.check_domain(big_t)?;
        if self.fixed_domain.is_some() {
            self.surface.eval(coords)
        } else {
            let mut p = [0.0; 4];
            p[..coords.len()].copy_from_slice(coords);
            p[coords.len()] = big_t;
            self.surface.eval(&p[..=coords.len()])
        }
    }

    fn time_margin(&self) -> &BasisSpec {
        &self.surface.margins[0]
    }
}

/// Mean surface `μ̂(t, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSurface(pub ConditionalSurface);

impl MeanSurface {
    pub fn eval(&self, t: f64, big_t: f64) -> Result<f64> {
        self.0.eval_coords(&[t], big_t)
    }

    pub fn eval_series(&self, times: &[f64], big_t: f64) -> Result<Vec<f64>> {
        times.iter().map(|&t| self.eval(t, big_t)).collect()
    }
}

/// Covariance surface `γ̂(t, s, T)`, symmetrized in `(t, s)` on evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSurface(pub ConditionalSurface);

impl CovarianceSurface {
    /// `(γ̂(t, s, T) + γ̂(s, t, T)) / 2`.
    pub fn eval(&self, t: f64, s: f64, big_t: f64) -> Result<f64> {
        let a = self.0.eval_coords(&[t, s], big_t)?;
        let b = self.0.eval_coords(&[s, t], big_t)?;
        Ok(0.5 * (a + b))
    }

    pub fn domain_range(&self) -> (f64, f64) {
        self.0.domain_range()
    }

    /// Symmetrized kernel matrix on `grid × grid` at domain length `big_t`.
    pub fn matrix_on_grid(&self, grid: &[f64], big_t: f64) -> Result<DMatrix<f64>> {
        self.0.check_domain(big_t)?;
        let surface = &self.0.surface;
        let tm = self.0.time_margin();
        let nt = tm.num_basis;
        // Contract the T margin first: C_T[a][b] = Σ_c coef[a][b][c] B_c(T).
        let slice = match self.0.fixed_domain {
            Some(_) => surface.coefficients.clone(),
            None => {
                let m_t = &surface.margins[2];
                let bt = m_t.local(big_t)?;
                let ntt = m_t.num_basis;
                let mut c = vec![0.0; nt * nt];
                for ab in 0..nt * nt {
                    c[ab] = bt
                        .iter()
                        .map(|(k, v)| surface.coefficients[ab * ntt + k] * v)
                        .sum();
                }
                c
            }
        };
        let locals = grid
            .iter()
            .map(|&t| tm.local(t))
            .collect::<Result<Vec<_>>>()?;
        let n = grid.len();
        // Bt · C_T for each grid point, then against Btᵀ.
        let mut left = vec![0.0; n * nt];
        for (i, li) in locals.iter().enumerate() {
            for (a, va) in li.iter() {
                for b in 0..nt {
                    left[i * nt + b] += va * slice[a * nt + b];
                }
            }
        }
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, lj) in locals.iter().enumerate() {
                m[(i, j)] = lj.iter().map(|(b, vb)| left[i * nt + b] * vb).sum();
            }
        }
        Ok((&m + m.transpose()) * 0.5)
    }
}

fn time_range<'a>(series: impl Iterator<Item = &'a Series>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        if let (Some(a), Some(b)) = (s.times.first(), s.times.last()) {
            lo = lo.min(*a);
            hi = hi.max(*b);
        }
    }
    (lo.min(0.0), hi)
}

fn domain_span(domains: &[f64]) -> (f64, f64) {
    let lo = domains.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = domains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn is_fixed_domain(domains: &[f64]) -> bool {
    let (lo, hi) = domain_span(domains);
    hi - lo <= 1e-12 * hi.abs().max(1.0)
}

/// Smooth `μ(t, T)` from all `(t_ij, T_i, x_ij)` triples of one variable.
pub fn estimate_mean(
    dataset: &FunctionalDataset,
    variable: usize,
    cfg: &SmootherConfig,
) -> Result<MeanSurface> {
    if variable >= dataset.n_variables() {
        return Err(argument(format!("variable index {variable} out of range")));
    }
    if dataset.n_subjects() < 2 {
        return Err(config("the mean surface needs at least 2 subjects"));
    }
    let domains = dataset.domain_lengths();
    let (t_lo, t_hi) = time_range(dataset.variable_series(variable));
    let time_margin = BasisSpec::spanning(t_lo, t_hi, cfg.degree, cfg.mean_basis[0])?;
    let fixed = is_fixed_domain(&domains);
    let mut margins = vec![time_margin];
    if !fixed {
        let (lo, hi) = domain_span(&domains);
        margins.push(BasisSpec::spanning(lo, hi, cfg.degree, cfg.mean_basis[1])?);
    }
    let mut normal = NormalEquations::new(margins)?;
    for subject in dataset.subjects() {
        let series = &subject.series[variable];
        for (&t, &x) in series.times.iter().zip(&series.values) {
            if fixed {
                normal.add(&[t], x, 1.0)?;
            } else {
                normal.add(&[t, subject.domain_length], x, 1.0)?;
            }
        }
    }
    let surface = normal.fit(&cfg.penalty)?;
    Ok(MeanSurface(ConditionalSurface {
        surface,
        fixed_domain: fixed.then(|| domains[0]),
    }))
}

/// Residuals `x_ij − μ̂(t_ij, T_i)` for every subject.
pub fn center(
    dataset: &FunctionalDataset,
    variable: usize,
    mean: &MeanSurface,
) -> Result<Vec<Series>> {
    dataset
        .subjects()
        .iter()
        .map(|s| {
            let series = &s.series[variable];
            let mu = mean.eval_series(&series.times, s.domain_length)?;
            let values = series.values.iter().zip(&mu).map(|(x, m)| x - m).collect();
            Ok(Series::new(series.times.clone(), values))
        })
        .collect()
}

/// Smooth `γ(t, s, T)` from within-subject residual products `r_ij r_ik`
/// placed at `(t_ij, t_ik, T_i)`. Same-index products are skipped unless
/// `include_diagonal` is set.
pub fn estimate_covariance(
    residuals: &[Series],
    domain_lengths: &[f64],
    cfg: &SmootherConfig,
    include_diagonal: bool,
) -> Result<CovarianceSurface> {
    if residuals.len() != domain_lengths.len() {
        return Err(argument("residuals and domain lengths differ in length"));
    }
    let usable: Vec<usize> = (0..residuals.len())
        .filter(|&i| residuals[i].len() >= 2)
        .collect();
    if usable.len() < 2 {
        return Err(Error::Fit(
            "the covariance surface needs at least 2 subjects with 2 observations".into(),
        ));
    }
    let domains: Vec<f64> = usable.iter().map(|&i| domain_lengths[i]).collect();
    let (t_lo, t_hi) = time_range(usable.iter().map(|&i| &residuals[i]));
    let time_margin = BasisSpec::spanning(t_lo, t_hi, cfg.degree, cfg.cov_basis[0])?;
    if cfg.cov_basis[1] != cfg.cov_basis[0] {
        return Err(config("covariance surface needs identical t and s margins"));
    }
    let fixed = is_fixed_domain(&domains);
    let mut margins = vec![time_margin.clone(), time_margin.clone()];
    if !fixed {
        let (lo, hi) = domain_span(&domains);
        margins.push(BasisSpec::spanning(lo, hi, cfg.degree, cfg.cov_basis[2])?);
    }
    let mut normal = NormalEquations::new(margins.clone())?;
    for &i in &usable {
        let block = PairBlock::from_series(&residuals[i], &time_margin, include_diagonal)?;
        if fixed {
            let idx: Vec<usize> = (0..block.dim).collect();
            normal.add_block(&idx, &block.gram, &block.rhs, block.yy, block.n_obs);
        } else {
            let (idx, gram, rhs) = block.with_domain(&margins[2], domain_lengths[i])?;
            normal.add_block(&idx, &gram, &rhs, block.yy, block.n_obs);
        }
    }
    if normal.n_obs() == 0 {
        return Err(Error::Fit("no residual products to smooth".into()));
    }
    let surface = normal.fit(&cfg.penalty)?;
    Ok(CovarianceSurface(ConditionalSurface {
        surface,
        fixed_domain: fixed.then(|| domains[0]),
    }))
}

/// Normal-equation contribution of all residual products of one subject on the
/// `(t, s)` tensor basis: `Q ⊗ Q − Σ_j B_jB_jᵀ ⊗ B_jB_jᵀ` with `Q = Σ_j B_jB_jᵀ`.
struct PairBlock {
    dim: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    yy: f64,
    n_obs: usize,
}

impl PairBlock {
    fn from_series(series: &Series, margin: &BasisSpec, include_diagonal: bool) -> Result<Self> {
        let nb = margin.num_basis;
        let dim = nb * nb;
        let mut q = vec![0.0; nb * nb];
        let mut u = vec![0.0; nb];
        let mut gram = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        let mut sum_sq = 0.0;
        let mut sum_quartic = 0.0;
        for (&t, &r) in series.times.iter().zip(&series.values) {
            let b = margin.local(t)?;
            for (a, va) in b.iter() {
                u[a] += r * va;
                for (c, vc) in b.iter() {
                    q[a * nb + c] += va * vc;
                }
            }
            sum_sq += r * r;
            sum_quartic += r.powi(4);
            if !include_diagonal {
                // subtract (B_j B_jᵀ) ⊗ (B_j B_jᵀ) and r_j² B_j ⊗ B_j
                for (a, va) in b.iter() {
                    for (c, vc) in b.iter() {
                        let row = a * nb + c;
                        rhs[row] -= r * r * va * vc;
                        for (a2, va2) in b.iter() {
                            for (c2, vc2) in b.iter() {
                                gram[row * dim + a2 * nb + c2] -= va * va2 * vc * vc2;
                            }
                        }
                    }
                }
            }
        }
        for a in 0..nb {
            for c in 0..nb {
                let row = a * nb + c;
                rhs[row] += u[a] * u[c];
                for a2 in 0..nb {
                    let qa = q[a * nb + a2];
                    if qa == 0.0 {
                        continue;
                    }
                    for c2 in 0..nb {
                        gram[row * dim + a2 * nb + c2] += qa * q[c * nb + c2];
                    }
                }
            }
        }
        let m = series.len();
        let (yy, n_obs) = if include_diagonal {
            (sum_sq * sum_sq, m * m)
        } else {
            (sum_sq * sum_sq - sum_quartic, m * (m - 1))
        };
        Ok(Self {
            dim,
            gram,
            rhs,
            yy,
            n_obs,
        })
    }

    /// Expand onto the `(t, s, T)` basis at domain length `big_t`.
    fn with_domain(
        &self,
        margin: &BasisSpec,
        big_t: f64,
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let bt = margin.local(big_t)?;
        let nt = margin.num_basis;
        let k = bt.len;
        let mut idx = Vec::with_capacity(self.dim * k);
        for ab in 0..self.dim {
            for (c, _) in bt.iter() {
                idx.push(ab * nt + c);
            }
        }
        let m = idx.len();
        let mut gram = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        let tv = &bt.values[..k];
        for ab in 0..self.dim {
            for (ci, vc) in tv.iter().enumerate() {
                let row = ab * k + ci;
                rhs[row] = self.rhs[ab] * vc;
                for ab2 in 0..self.dim {
                    let g = self.gram[ab * self.dim + ab2];
                    if g == 0.0 {
                        continue;
                    }
                    for (ci2, vc2) in tv.iter().enumerate() {
                        gram[row * m + ab2 * k + ci2] = g * vc * vc2;
                    }
                }
            }
        }
        Ok((idx, gram, rhs))
    }
}

/// Eigen-expansion of `γ̂(·, ·, T)` on the grid `{0, step, …, T}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenAt {
    pub domain_length: f64,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// Every eigenvalue of the discretized operator, descending, clipped at 0.
    pub all_eigenvalues: Vec<f64>,
    /// Retained eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Retained eigenfunctions on `grid`, one column each.
    pub eigenfunctions: DMatrix<f64>,
}

impl EigenAt {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn function(&self, k: usize) -> Vec<f64> {
        self.eigenfunctions.column(k).iter().copied().collect()
    }

    /// Trapezoid Gram matrix `∫ψ_k ψ_l`.
    pub fn inner_products(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |a, b| {
            (0..self.grid.len())
                .map(|i| {
                    self.weights[i] * self.eigenfunctions[(i, a)] * self.eigenfunctions[(i, b)]
                })
                .sum()
        })
    }
}

/// Quadrature-weighted eigendecomposition of the covariance surface at `big_t`.
pub fn eigendecompose_at(
    cov: &CovarianceSurface,
    big_t: f64,
    grid_step: f64,
    rule: ComponentRule,
) -> Result<EigenAt> {
    let grid = uniform_grid(big_t, grid_step)?;
    let kernel = cov.matrix_on_grid(&grid, big_t)?;
    eigen_from_kernel(&kernel, grid, big_t, rule)
}

/// Quadrature eigen-expansion of a kernel already sampled on `grid`.
pub fn eigen_from_kernel(
    kernel: &DMatrix<f64>,
    grid: Vec<f64>,
    big_t: f64,
    rule: ComponentRule,
) -> Result<EigenAt> {
    let weights = trapezoid_weights(&grid);
    let eig = quadrature_eigen(kernel, &weights)?;
    let k = rule.select(&eig.values);
    if k == 0 {
        return Err(argument("no components requested"));
    }
    let eigenfunctions = eig.functions.columns(0, k).into_owned();
    Ok(EigenAt {
        domain_length: big_t,
        grid,
        weights,
        eigenvalues: eig.values[..k].to_vec(),
        all_eigenvalues: eig.values,
        eigenfunctions,
    })
}

/// Flip eigenfunctions of `eigen` whose overlap inner product with the same
/// component of `reference` is negative. Signs then vary continuously with `T`,
/// which the elementwise smoothing of score products over `T` relies on.
pub fn align_signs(eigen: &mut EigenAt, reference: &EigenAt) {
    let overlap = eigen.domain_length.min(reference.domain_length);
    for k in 0..eigen.k().min(reference.k()) {
        let ref_k = reference.function(k);
        let dot: f64 = eigen
            .grid
            .iter()
            .enumerate()
            .filter(|(_, t)| **t <= overlap)
            .map(|(i, &t)| {
                eigen.weights[i]
                    * eigen.eigenfunctions[(i, k)]
                    * interp_linear(&reference.grid, &ref_k, t)
            })
            .sum();
        if dot < 0.0 {
            eigen.eigenfunctions.column_mut(k).neg_mut();
        }
    }
}

/// Residual curve linearly interpolated onto `grid` (constant beyond its ends).
pub fn interpolate_onto(series: &Series, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&t| interp_linear(&series.times, &series.values, t))
        .collect()
}

/// Trapezoid projection of one residual curve on the retained eigenfunctions.
pub fn project_scores(residual: &Series, eigen: &EigenAt) -> Vec<f64> {
    let r = interpolate_onto(residual, &eigen.grid);
    (0..eigen.k())
        .map(|k| {
            r.iter()
                .enumerate()
                .map(|(i, ri)| eigen.weights[i] * ri * eigen.eigenfunctions[(i, k)])
                .sum()
        })
        .collect()
}

/// Scores for every subject given the eigen-expansion at its own domain length.
pub fn compute_scores(residuals: &[Series], eigen: &[&EigenAt]) -> Result<Vec<Vec<f64>>> {
    if residuals.len() != eigen.len() {
        return Err(argument("one eigen-expansion per subject is required"));
    }
    Ok(residuals
        .iter()
        .zip(eigen)
        .map(|(r, e)| project_scores(r, e))
        .collect())
}

/// Median of a non-empty sample.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Key for caching per-domain-length results.
pub(crate) fn domain_key(t: f64) -> u64 {
    t.to_bits()
}

/// Univariate variable-domain FPCA of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateVdFpcaFit {
    pub variable: String,
    pub variable_index: usize,
    pub mean: MeanSurface,
    pub covariance: CovarianceSurface,
    pub k: usize,
    pub grid_step: f64,
    pub subject_ids: Vec<String>,
    pub domain_lengths: Vec<f64>,
    /// Eigen-expansions at each distinct subject domain length, ascending.
    pub eigen: Vec<EigenAt>,
    /// `[subject][component]`
    pub scores: Vec<Vec<f64>>,
}

impl UnivariateVdFpcaFit {
    /// Eigen-expansion at `big_t`: cached when `big_t` is a subject domain
    /// length, otherwise recomputed from the covariance surface.
    pub fn eigen_at(&self, big_t: f64) -> Result<std::borrow::Cow<'_, EigenAt>> {
        if let Some(e) = self.cached_eigen(big_t) {
            return Ok(std::borrow::Cow::Borrowed(e));
        }
        let mut e = eigendecompose_at(
            &self.covariance,
            big_t,
            self.grid_step,
            ComponentRule::Fixed(self.k),
        )?;
        if let Some(nearest) = self.nearest_cached(big_t) {
            align_signs(&mut e, nearest);
        }
        Ok(std::borrow::Cow::Owned(e))
    }

    fn nearest_cached(&self, big_t: f64) -> Option<&EigenAt> {
        self.eigen.iter().min_by(|a, b| {
            (a.domain_length - big_t)
                .abs()
                .partial_cmp(&(b.domain_length - big_t).abs())
                .unwrap()
        })
    }

    pub fn cached_eigen(&self, big_t: f64) -> Option<&EigenAt> {
        self.eigen
            .binary_search_by(|e| e.domain_length.partial_cmp(&big_t).unwrap())
            .ok()
            .map(|i| &self.eigen[i])
    }

    pub fn subject_eigen(&self, subject: usize) -> Result<&EigenAt> {
        let t = *self
            .domain_lengths
            .get(subject)
            .ok_or_else(|| Error::Lookup(format!("subject index {subject}")))?;
        self.cached_eigen(t)
            .ok_or_else(|| Error::Lookup(format!("no eigen-expansion at T = {t}")))
    }
}

/// Run the full univariate pipeline for one variable.
pub fn fit_univariate(
    dataset: &FunctionalDataset,
    variable: usize,
    cfg: &UfpcaConfig,
) -> Result<UnivariateVdFpcaFit> {
    cfg.smoother.penalty.validate()?;
    let mean = estimate_mean(dataset, variable, &cfg.smoother)?;
    let residuals = center(dataset, variable, &mean)?;
    let domains = dataset.domain_lengths();
    let covariance =
        estimate_covariance(&residuals, &domains, &cfg.smoother, cfg.include_diagonal)?;

    let shortest_grid = domains
        .iter()
        .map(|&t| uniform_grid(t, cfg.grid_step).map(|g| g.len()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min()
        .unwrap_or(0);
    let reference = eigendecompose_at(
        &covariance,
        median(&domains),
        cfg.grid_step,
        cfg.component_rule(),
    )?;
    let k = reference.k().min(shortest_grid);

    let mut cache: BTreeMap<u64, EigenAt> = BTreeMap::new();
    for &t in &domains {
        if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(domain_key(t)) {
            e.insert(eigendecompose_at(
                &covariance,
                t,
                cfg.grid_step,
                ComponentRule::Fixed(k),
            )?);
        }
    }
    let mut eigen: Vec<EigenAt> = cache.into_values().collect();
    eigen.sort_by(|a, b| a.domain_length.partial_cmp(&b.domain_length).unwrap());
    for g in 1..eigen.len() {
        let (done, rest) = eigen.split_at_mut(g);
        align_signs(&mut rest[0], &done[g - 1]);
    }

    let fit_without_scores = UnivariateVdFpcaFit {
        variable: dataset.variables()[variable].clone(),
        variable_index: variable,
        mean,
        covariance,
        k,
        grid_step: cfg.grid_step,
        subject_ids: dataset
            .subjects()
            .iter()
            .map(|s| s.subject_id.clone())
            .collect(),
        domain_lengths: domains,
        eigen,
        scores: Vec::new(),
    };
    let per_subject = (0..dataset.n_subjects())
        .map(|i| fit_without_scores.subject_eigen(i))
        .collect::<Result<Vec<_>>>()?;
    let scores = compute_scores(&residuals, &per_subject)?;
    Ok(UnivariateVdFpcaFit {
        scores,
        ..fit_without_scores
    })
}
