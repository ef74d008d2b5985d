//! Multivariate variable-domain FPCA: stacked univariate scores, a score
//! covariance matrix smoothed elementwise over domain length, and its
//! eigendecomposition at any `T`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::FunctionalDataset;
use crate::error::{argument, config, Error, Result};
use crate::linalg::{components_for_pve, psd_repair, sorted_symmetric_eigen};
use crate::pspline::{BasisSpec, NormalEquations, PenaltySpec, SmoothSurface};
use crate::ufpca::{domain_key, fit_univariate, median, EigenAt, UfpcaConfig, UnivariateVdFpcaFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfpcaConfig {
    pub univariate: UfpcaConfig,
    /// Basis size of each score-covariance element smooth over `T`.
    pub score_basis: usize,
    pub pve: f64,
    pub m_max: Option<usize>,
    /// Overrides the PVE rule when set.
    pub m_fixed: Option<usize>,
}

impl Default for MfpcaConfig {
    fn default() -> Self {
        Self {
            univariate: UfpcaConfig::default(),
            score_basis: 10,
            pve: 0.99,
            m_max: None,
            m_fixed: None,
        }
    }
}

/// Per-subject concatenation of univariate score vectors, variable by variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedScores {
    pub subject_ids: Vec<String>,
    pub domain_lengths: Vec<f64>,
    /// Number of components contributed by each variable.
    pub block_sizes: Vec<usize>,
    /// `[subject][K⁺]`
    pub scores: Vec<Vec<f64>>,
}

impl StackedScores {
    pub fn k_plus(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn n_subjects(&self) -> usize {
        self.scores.len()
    }

    /// Start offset of each variable's block.
    pub fn block_offsets(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .scan(0, |acc, &k| {
                let start = *acc;
                *acc += k;
                Some(start)
            })
            .collect()
    }

    /// Undo stacking for one subject.
    pub fn split(&self, subject: usize) -> Vec<Vec<f64>> {
        let row = &self.scores[subject];
        self.block_offsets()
            .iter()
            .zip(&self.block_sizes)
            .map(|(&o, &k)| row[o..o + k].to_vec())
            .collect()
    }
}

pub fn stack_scores(fits: &[&UnivariateVdFpcaFit]) -> Result<StackedScores> {
    let first = fits
        .first()
        .ok_or_else(|| argument("no univariate fits to stack"))?;
    for f in fits {
        if f.subject_ids != first.subject_ids || f.domain_lengths != first.domain_lengths {
            return Err(argument(format!(
                "univariate fit for {} covers different subjects",
                f.variable
            )));
        }
    }
    let scores = (0..first.subject_ids.len())
        .map(|i| {
            fits.iter()
                .flat_map(|f| f.scores[i].iter().copied())
                .collect()
        })
        .collect();
    Ok(StackedScores {
        subject_ids: first.subject_ids.clone(),
        domain_lengths: first.domain_lengths.clone(),
        block_sizes: fits.iter().map(|f| f.k).collect(),
        scores,
    })
}

/// Upper-triangle index of `(j, k)` with `j ≤ k` in row-major packing.
fn packed(j: usize, k: usize, n: usize) -> usize {
    let (j, k) = if j <= k { (j, k) } else { (k, j) };
    j * n - j * (j + 1) / 2 + k
}

/// `C(T)` modelled elementwise: one penalized spline over `T` per unique entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCovarianceModel {
    pub k_plus: usize,
    /// Upper triangle, row-major.
    pub elements: Vec<SmoothSurface>,
    pub domain_range: (f64, f64),
}

impl ScoreCovarianceModel {
    /// Smoothed matrix at `big_t` before PSD repair; symmetric by construction.
    pub fn eval_raw(&self, big_t: f64) -> Result<DMatrix<f64>> {
        let (lo, hi) = self.domain_range;
        let margin = &self.elements[0].margins[0];
        if !margin.contains(big_t) {
            return Err(Error::Domain {
                value: big_t,
                lo,
                hi,
            });
        }
        let n = self.k_plus;
        let values = self
            .elements
            .iter()
            .map(|e| e.eval(&[big_t]))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(n, n, |j, k| values[packed(j, k, n)]))
    }

    /// Smoothed matrix at `big_t` projected onto the PSD cone.
    pub fn eval(&self, big_t: f64) -> Result<DMatrix<f64>> {
        Ok(psd_repair(&self.eval_raw(big_t)?))
    }
}

/// Smooth each unique entry of `ξ_i ξ_iᵀ` against `T_i`.
pub fn fit_score_covariance(
    stacked: &StackedScores,
    degree: usize,
    num_basis: usize,
    penalty: &PenaltySpec,
) -> Result<ScoreCovarianceModel> {
    let n = stacked.n_subjects();
    if n < 10 {
        return Err(config(format!(
            "score covariance smoothing needs at least 10 subjects, got {n}"
        )));
    }
    let lo = stacked
        .domain_lengths
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = stacked
        .domain_lengths
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return Err(config(
            "constant domain length: use the fixed-domain score covariance",
        ));
    }
    let margin = BasisSpec::spanning(lo, hi, degree, num_basis)?;
    let kp = stacked.k_plus();
    let mut elements = Vec::with_capacity(kp * (kp + 1) / 2);
    for j in 0..kp {
        for k in j..kp {
            let mut normal = NormalEquations::new(vec![margin.clone()])?;
            for (row, &t) in stacked.scores.iter().zip(&stacked.domain_lengths) {
                normal.add(&[t], row[j] * row[k], 1.0)?;
            }
            elements.push(normal.fit(penalty)?);
        }
    }
    Ok(ScoreCovarianceModel {
        k_plus: kp,
        elements,
        domain_range: (lo, hi),
    })
}

/// Score covariance as used by a fit: smoothed over `T`, or the plain mean of
/// `ξ_i ξ_iᵀ` when every subject shares one domain length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScoreCovariance {
    Smooth(ScoreCovarianceModel),
    Fixed {
        domain_length: f64,
        matrix: DMatrix<f64>,
    },
}

impl ScoreCovariance {
    pub fn eval(&self, big_t: f64) -> Result<DMatrix<f64>> {
        match self {
            ScoreCovariance::Smooth(m) => m.eval(big_t),
            ScoreCovariance::Fixed {
                domain_length,
                matrix,
            } => {
                if (big_t - domain_length).abs() > 1e-9 * domain_length.max(1.0) {
                    return Err(Error::Domain {
                        value: big_t,
                        lo: *domain_length,
                        hi: *domain_length,
                    });
                }
                Ok(psd_repair(matrix))
            }
        }
    }

    pub fn k_plus(&self) -> usize {
        match self {
            ScoreCovariance::Smooth(m) => m.k_plus,
            ScoreCovariance::Fixed { matrix, .. } => matrix.nrows(),
        }
    }
}

/// Mean outer product of the stacked score vectors.
pub fn raw_score_covariance(stacked: &StackedScores) -> DMatrix<f64> {
    let kp = stacked.k_plus();
    let mut c = DMatrix::zeros(kp, kp);
    for row in &stacked.scores {
        for j in 0..kp {
            for k in 0..kp {
                c[(j, k)] += row[j] * row[k];
            }
        }
    }
    c / stacked.n_subjects() as f64
}

/// Eigendecomposition of `Ĉ(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvEigenAt {
    pub domain_length: f64,
    /// All `K⁺` eigenvalues, descending, clipped at 0.
    pub all_eigenvalues: Vec<f64>,
    /// Retained eigenvectors `c_m(T)` as columns (`K⁺ × M`).
    pub vectors: DMatrix<f64>,
}

impl MvEigenAt {
    pub fn m(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.all_eigenvalues[..self.m()]
    }

    /// `ν_m / Σ ν` for the retained components.
    pub fn shares(&self) -> Vec<f64> {
        let total: f64 = self.all_eigenvalues.iter().sum();
        self.eigenvalues()
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect()
    }
}

/// Component count rule for the multivariate stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MvComponents {
    Fixed(usize),
    Pve { threshold: f64, max: usize },
}

pub fn multivariate_eigen_at(
    cov: &ScoreCovariance,
    big_t: f64,
    rule: MvComponents,
) -> Result<MvEigenAt> {
    let c = cov.eval(big_t)?;
    let eig = sorted_symmetric_eigen(&c);
    let values: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let m = match rule {
        MvComponents::Fixed(m) => {
            if m > values.len() {
                return Err(argument(format!("M = {m} exceeds K+ = {}", values.len())));
            }
            m
        }
        MvComponents::Pve { threshold, max } => components_for_pve(&values, threshold, max),
    };
    Ok(MvEigenAt {
        domain_length: big_t,
        all_eigenvalues: values,
        vectors: eig.vectors.columns(0, m).into_owned(),
    })
}

/// Flip columns of `eigen` with a negative dot product against `reference`.
pub fn align_vectors(eigen: &mut MvEigenAt, reference: &MvEigenAt) {
    for m in 0..eigen.m().min(reference.m()) {
        if eigen.vectors.column(m).dot(&reference.vectors.column(m)) < 0.0 {
            eigen.vectors.column_mut(m).neg_mut();
        }
    }
}

/// `ρ_im = ξ_iᵀ c_m(T_i)`.
pub fn multivariate_scores(stacked: &StackedScores, eigen: &[&MvEigenAt]) -> Result<Vec<Vec<f64>>> {
    if eigen.len() != stacked.n_subjects() {
        return Err(argument("one eigen-decomposition per subject is required"));
    }
    stacked
        .scores
        .iter()
        .zip(eigen)
        .map(|(xi, e)| {
            if e.vectors.nrows() != xi.len() {
                return Err(argument(format!(
                    "score vector of length {} against eigenvectors of length {}",
                    xi.len(),
                    e.vectors.nrows()
                )));
            }
            Ok((0..e.m())
                .map(|m| {
                    xi.iter()
                        .zip(e.vectors.column(m).iter())
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect())
        })
        .collect()
}

/// `Ψ_mʲ(t, T) = Σ_l [c_m(T)]_(block j, l) ψ̂_lʲ(t, T)`, one `grid × M` matrix
/// per variable.
pub fn multivariate_eigenfunctions(
    univariate: &[&EigenAt],
    eigen: &MvEigenAt,
) -> Result<Vec<DMatrix<f64>>> {
    let mut offset = 0;
    let mut out = Vec::with_capacity(univariate.len());
    for u in univariate {
        if (u.domain_length - eigen.domain_length).abs() > 1e-9 * eigen.domain_length.max(1.0) {
            return Err(argument(format!(
                "eigenvectors at T = {} but eigenfunctions at T = {}",
                eigen.domain_length, u.domain_length
            )));
        }
        let k = u.k();
        if offset + k > eigen.vectors.nrows() {
            return Err(argument(
                "univariate components exceed the eigenvector length",
            ));
        }
        let block = eigen.vectors.rows(offset, k);
        out.push(&u.eigenfunctions * block);
        offset += k;
    }
    if offset != eigen.vectors.nrows() {
        return Err(argument(
            "univariate components do not cover the eigenvector length",
        ));
    }
    Ok(out)
}

/// Reconstructed curves of one subject on its eigen-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub grid: Vec<f64>,
    /// `[variable][grid point]`
    pub values: Vec<Vec<f64>>,
}

/// One row of the variance-explained curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceShare {
    pub domain_length: f64,
    pub component: usize,
    pub eigenvalue: f64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateVdFit {
    pub univariate: Vec<UnivariateVdFpcaFit>,
    pub stacked: StackedScores,
    pub score_covariance: ScoreCovariance,
    pub m: usize,
    /// Decompositions at each distinct subject domain length, ascending, with
    /// signs continued along `T`.
    pub eigen: Vec<MvEigenAt>,
    /// `[subject][M]`
    pub scores: Vec<Vec<f64>>,
}

impl MultivariateVdFit {
    pub fn fit(dataset: &FunctionalDataset, cfg: &MfpcaConfig) -> Result<Self> {
        let univariate = (0..dataset.n_variables())
            .map(|v| fit_univariate(dataset, v, &cfg.univariate))
            .collect::<Result<Vec<_>>>()?;
        Self::from_univariate(univariate, cfg)
    }

    pub fn from_univariate(
        univariate: Vec<UnivariateVdFpcaFit>,
        cfg: &MfpcaConfig,
    ) -> Result<Self> {
        let refs: Vec<&UnivariateVdFpcaFit> = univariate.iter().collect();
        let stacked = stack_scores(&refs)?;
        let kp = stacked.k_plus();
        let domains = &stacked.domain_lengths;
        let fixed = domains.iter().all(|t| *t == domains[0]);
        let score_covariance = if fixed {
            ScoreCovariance::Fixed {
                domain_length: domains[0],
                matrix: raw_score_covariance(&stacked),
            }
        } else {
            ScoreCovariance::Smooth(fit_score_covariance(
                &stacked,
                cfg.univariate.smoother.degree,
                cfg.score_basis,
                &cfg.univariate.smoother.penalty,
            )?)
        };
        let m = match cfg.m_fixed {
            Some(m) if m > kp => return Err(config(format!("M = {m} exceeds K+ = {kp}"))),
            Some(m) => m,
            None => {
                let max = cfg.m_max.unwrap_or(kp).min(kp);
                let rule = MvComponents::Pve {
                    threshold: cfg.pve,
                    max,
                };
                let reference_t = if fixed { domains[0] } else { median(domains) };
                multivariate_eigen_at(&score_covariance, reference_t, rule)?.m()
            }
        };

        let mut cache = BTreeMap::new();
        for &t in domains {
            if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(domain_key(t)) {
                e.insert(multivariate_eigen_at(
                    &score_covariance,
                    t,
                    MvComponents::Fixed(m),
                )?);
            }
        }
        let mut eigen: Vec<MvEigenAt> = cache.into_values().collect();
        eigen.sort_by(|a, b| a.domain_length.partial_cmp(&b.domain_length).unwrap());
        for g in 1..eigen.len() {
            let (done, rest) = eigen.split_at_mut(g);
            align_vectors(&mut rest[0], &done[g - 1]);
        }

        let mut fit = Self {
            univariate,
            stacked,
            score_covariance,
            m,
            eigen,
            scores: Vec::new(),
        };
        let per_subject = (0..fit.stacked.n_subjects())
            .map(|i| fit.subject_eigen(i))
            .collect::<Result<Vec<_>>>()?;
        let scores = multivariate_scores(&fit.stacked, &per_subject)?;
        fit.scores = scores;
        Ok(fit)
    }

    pub fn n_subjects(&self) -> usize {
        self.stacked.n_subjects()
    }

    pub fn subject_index(&self, id: &str) -> Result<usize> {
        self.stacked
            .subject_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::Lookup(format!("unknown subject {id}")))
    }

    fn cached_eigen(&self, big_t: f64) -> Option<&MvEigenAt> {
        self.eigen
            .binary_search_by(|e| e.domain_length.partial_cmp(&big_t).unwrap())
            .ok()
            .map(|i| &self.eigen[i])
    }

    fn subject_eigen(&self, subject: usize) -> Result<&MvEigenAt> {
        let t = self.stacked.domain_lengths[subject];
        self.cached_eigen(t)
            .ok_or_else(|| Error::Lookup(format!("no eigen-decomposition at T = {t}")))
    }

    /// Multivariate eigenpairs at any `T` in range, sign-aligned with the
    /// nearest subject domain length.
    pub fn eigen_at(&self, big_t: f64) -> Result<MvEigenAt> {
        if let Some(e) = self.cached_eigen(big_t) {
            return Ok(e.clone());
        }
        let mut e =
            multivariate_eigen_at(&self.score_covariance, big_t, MvComponents::Fixed(self.m))?;
        let nearest = self.eigen.iter().min_by(|a, b| {
            (a.domain_length - big_t)
                .abs()
                .partial_cmp(&(b.domain_length - big_t).abs())
                .unwrap()
        });
        if let Some(n) = nearest {
            align_vectors(&mut e, n);
        }
        Ok(e)
    }

    /// Eigen-grid and `Ψ_mʲ(·, T)` per variable.
    pub fn eigenfunctions_at(&self, big_t: f64) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
        let uni = self
            .univariate
            .iter()
            .map(|u| u.eigen_at(big_t))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&EigenAt> = uni.iter().map(|c| c.as_ref()).collect();
        let mv = self.eigen_at(big_t)?;
        let psi = multivariate_eigenfunctions(&refs, &mv)?;
        Ok((refs[0].grid.clone(), psi))
    }

    /// `μ̂ʲ(t, T_i) + Σ_{m ≤ M} ρ_im Ψ_mʲ(t, T_i)` on the subject's eigen-grid.
    pub fn reconstruct(&self, subject: usize, m: usize) -> Result<Reconstruction> {
        if subject >= self.n_subjects() {
            return Err(Error::Lookup(format!("subject index {subject}")));
        }
        if m > self.m {
            return Err(argument(format!(
                "M = {m} exceeds the {} retained components",
                self.m
            )));
        }
        let big_t = self.stacked.domain_lengths[subject];
        let (grid, psi) = self.eigenfunctions_at(big_t)?;
        let rho = &self.scores[subject];
        let values = self
            .univariate
            .iter()
            .zip(&psi)
            .map(|(u, psi_j)| {
                grid.iter()
                    .enumerate()
                    .map(|(g, &t)| {
                        let mu = u.mean.eval(t, big_t)?;
                        Ok(mu + (0..m).map(|c| rho[c] * psi_j[(g, c)]).sum::<f64>())
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Reconstruction { grid, values })
    }

    /// Shares `ν_m(T) / Σ ν(T)` for the first `m` components at each `T`.
    pub fn variance_explained_curve(&self, grid: &[f64], m: usize) -> Result<Vec<VarianceShare>> {
        variance_explained_curve(&self.score_covariance, grid, m)
    }
}

pub fn variance_explained_curve(
    cov: &ScoreCovariance,
    grid: &[f64],
    m: usize,
) -> Result<Vec<VarianceShare>> {
    let mut rows = Vec::with_capacity(grid.len() * m);
    for &t in grid {
        let e = multivariate_eigen_at(cov, t, MvComponents::Fixed(m))?;
        for (c, (v, s)) in e.eigenvalues().iter().zip(e.shares()).enumerate() {
            rows.push(VarianceShare {
                domain_length: t,
                component: c + 1,
                eigenvalue: *v,
                share: s,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation between scores and domain lengths with a
/// two-sided p-value from `t = ρ √((n−2)/(1−ρ²))` on `n − 2` degrees of freedom.
pub fn score_domain_association(scores: &[f64], domains: &[f64]) -> Result<Spearman> {
    let n = scores.len();
    if n != domains.len() {
        return Err(argument("scores and domain lengths differ in length"));
    }
    if n < 3 {
        return Err(argument("rank correlation needs at least 3 subjects"));
    }
    if scores.iter().chain(domains).any(|v| !v.is_finite()) {
        return Err(argument("non-finite input"));
    }
    let rx = average_ranks(scores);
    let ry = average_ranks(domains);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "rank correlation of a constant vector".into(),
        ));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Fit(e.to_string()))?;
        2.0 * dist.cdf(-t.abs())
    };
    Ok(Spearman { rho, p_value, n })
}
