//! Binned fixed-domain MFPCA: subjects are grouped by domain length into
//! equal-width bins, truncated to the shortest domain in their bin, and a
//! standard MFPCA is run per bin on the common grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{FunctionalDataset, Series, SubjectRecord};
use crate::error::{argument, Error, Result};
use crate::linalg::{components_for_pve, sorted_symmetric_eigen, uniform_grid};
use crate::ufpca::{eigen_from_kernel, interpolate_onto, project_scores, ComponentRule, EigenAt};

/// A group of subjects fitted together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Original equal-width bins merged into this group (0-based).
    pub source_bins: Vec<usize>,
    pub members: Vec<usize>,
    /// Minimum member domain length.
    pub truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAssignment {
    pub n_bins: usize,
    pub edges: Vec<f64>,
    /// Equal-width bin of each subject before any merging.
    pub raw_bin: Vec<usize>,
    /// Index into `bins` for each subject.
    pub subject_bin: Vec<usize>,
    pub bins: Vec<Bin>,
    pub warnings: Vec<String>,
}

impl BinAssignment {
    /// Truncation length of the group holding `subject`.
    pub fn truncation_of(&self, subject: usize) -> Result<f64> {
        let b = self
            .subject_bin
            .get(subject)
            .ok_or_else(|| Error::Lookup(format!("subject index {subject}")))?;
        Ok(self.bins[*b].truncation)
    }
}

/// Equal-width bins over `[min T, max T]`: left-closed, the last one also
/// right-closed. Groups with fewer than 2 subjects are merged into the group on
/// their left (the first group merges right).
pub fn assign_bins(domains: &[f64], n_bins: usize) -> Result<BinAssignment> {
    if n_bins < 2 {
        return Err(argument(format!(
            "at least 2 bins are required, got {n_bins}"
        )));
    }
    let mut distinct = domains.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < n_bins {
        return Err(argument(format!(
            "{} distinct domain lengths cannot fill {n_bins} bins",
            distinct.len()
        )));
    }
    let lo = distinct[0];
    let hi = *distinct.last().unwrap();
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|k| lo + k as f64 * width).collect();
    edges.push(hi);
    let raw_bin: Vec<usize> = domains
        .iter()
        .map(|&t| (0..n_bins).rev().find(|&k| t >= edges[k]).unwrap_or(0))
        .collect();

    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = (0..n_bins)
        .map(|k| {
            (
                vec![k],
                (0..domains.len()).filter(|&i| raw_bin[i] == k).collect(),
            )
        })
        .collect();
    let mut warnings = Vec::new();
    let mut g = 0;
    while g < groups.len() && groups.len() > 1 {
        if groups[g].1.len() >= 2 {
            g += 1;
            continue;
        }
        let (sources, members) = groups.remove(g);
        let target = if g == 0 { 0 } else { g - 1 };
        warnings.push(format!(
            "bin {} has {} subject(s); merged into bin {}",
            sources[0] + 1,
            members.len(),
            groups[target].0[0] + 1
        ));
        groups[target].0.extend(sources);
        groups[target].1.extend(members);
        groups[target].0.sort_unstable();
        groups[target].1.sort_unstable();
        g = g.saturating_sub(1);
    }
    let mut subject_bin = vec![0; domains.len()];
    let bins: Vec<Bin> = groups
        .into_iter()
        .enumerate()
        .map(|(b, (source_bins, members))| {
            for &i in &members {
                subject_bin[i] = b;
            }
            let truncation = members
                .iter()
                .map(|&i| domains[i])
                .fold(f64::INFINITY, f64::min);
            if members.len() < 3 {
                warnings.push(format!("bin {} has only {} subjects", b + 1, members.len()));
            }
            Bin {
                source_bins,
                members,
                truncation,
            }
        })
        .collect();
    Ok(BinAssignment {
        n_bins,
        edges,
        raw_bin,
        subject_bin,
        bins,
        warnings,
    })
}

/// Subjects of one bin with every series cut at the truncation length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinData {
    pub bin: usize,
    pub truncation: f64,
    /// Original subject index of each retained subject.
    pub subjects: Vec<usize>,
    /// Subjects left with fewer than 2 observations.
    pub excluded: Vec<usize>,
    pub dataset: Option<FunctionalDataset>,
}

pub fn truncate(dataset: &FunctionalDataset, assignment: &BinAssignment) -> Result<Vec<BinData>> {
    if assignment.subject_bin.len() != dataset.n_subjects() {
        return Err(argument("assignment does not cover the dataset"));
    }
    let tol = |l: f64| 1e-9 * l.max(1.0);
    assignment
        .bins
        .iter()
        .enumerate()
        .map(|(b, bin)| {
            let l = bin.truncation;
            let mut kept = Vec::new();
            let mut subjects = Vec::new();
            let mut excluded = Vec::new();
            for &i in &bin.members {
                let s = &dataset.subjects()[i];
                let series: Vec<Series> = s
                    .series
                    .iter()
                    .map(|x| {
                        let n = x.times.partition_point(|&t| t <= l + tol(l));
                        Series::new(x.times[..n].to_vec(), x.values[..n].to_vec())
                    })
                    .collect();
                if series.iter().any(|x| x.len() < 2) {
                    excluded.push(i);
                    continue;
                }
                subjects.push(i);
                kept.push(SubjectRecord {
                    subject_id: s.subject_id.clone(),
                    domain_length: l,
                    series,
                });
            }
            let dataset = if kept.is_empty() {
                None
            } else {
                Some(FunctionalDataset::new(dataset.variables().to_vec(), kept)?)
            };
            Ok(BinData {
                bin: b,
                truncation: l,
                subjects,
                excluded,
                dataset,
            })
        })
        .collect()
}

/// Evaluation interval `[0, L]` of a subject under the binned method.
pub fn binned_metrics_domain(assignment: &BinAssignment, subject: usize) -> Result<(f64, f64)> {
    Ok((0.0, assignment.truncation_of(subject)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardMfpcaConfig {
    pub grid_step: f64,
    pub pve_univariate: f64,
    pub k_max: usize,
    pub pve_multivariate: f64,
}

impl Default for StandardMfpcaConfig {
    fn default() -> Self {
        Self {
            grid_step: 1.0,
            pve_univariate: 0.95,
            k_max: 8,
            pve_multivariate: 0.99,
        }
    }
}

pub const LEADING_FUNCTIONS: usize = 4;

/// Fixed-domain MFPCA of one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardMfpcaFit {
    pub truncation: f64,
    pub grid: Vec<f64>,
    /// `[variable][grid point]`
    pub means: Vec<Vec<f64>>,
    pub univariate: Vec<EigenAt>,
    /// Leading eigenfunctions of each variable's decomposition regardless of
    /// how many were retained, `grid × min(LEADING_FUNCTIONS, grid)`.
    pub leading: Vec<DMatrix<f64>>,
    /// `[subject][K⁺]`
    pub stacked_scores: Vec<Vec<f64>>,
    /// Eigenvalues of the stacked-score covariance, descending, clipped at 0.
    pub mv_eigenvalues: Vec<f64>,
    /// Retained eigenvectors as columns (`K⁺ × M`).
    pub mv_vectors: DMatrix<f64>,
    /// `[subject][M]`
    pub scores: Vec<Vec<f64>>,
    /// `[variable]`, each `grid × M`.
    pub eigenfunctions: Vec<DMatrix<f64>>,
    /// `[subject][variable][grid point]`
    pub reconstructions: Vec<Vec<Vec<f64>>>,
}

fn sample_covariance(rows: &[Vec<f64>], means: &[f64]) -> DMatrix<f64> {
    let p = means.len();
    let n = rows.len();
    let mut c = DMatrix::zeros(p, p);
    for r in rows {
        for a in 0..p {
            let da = r[a] - means[a];
            for b in a..p {
                c[(a, b)] += da * (r[b] - means[b]);
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for a in 0..p {
        for b in a..p {
            let v = c[(a, b)] / denom;
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    c
}

/// Standard MFPCA on a common domain: cross-sectional means, sample covariance
/// on the grid, quadrature eigendecomposition, trapezoid scores, and a PCA of
/// the stacked scores.
pub fn standard_mfpca(
    dataset: &FunctionalDataset,
    cfg: &StandardMfpcaConfig,
) -> Result<StandardMfpcaFit> {
    let n = dataset.n_subjects();
    if n < 2 {
        return Err(Error::Fit(format!(
            "standard MFPCA needs at least 2 subjects, got {n}"
        )));
    }
    let l = dataset.subjects()[0].domain_length;
    if dataset.subjects().iter().any(|s| s.domain_length != l) {
        return Err(argument("standard MFPCA needs a common domain length"));
    }
    let grid = uniform_grid(l, cfg.grid_step)?;
    let g = grid.len();

    let mut means = Vec::new();
    let mut univariate = Vec::new();
    let mut leading = Vec::new();
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    for v in 0..dataset.n_variables() {
        let curves: Vec<Vec<f64>> = dataset
            .variable_series(v)
            .map(|s| interpolate_onto(s, &grid))
            .collect();
        let mean: Vec<f64> = (0..g)
            .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n as f64)
            .collect();
        let cov = sample_covariance(&curves, &mean);
        let full = eigen_from_kernel(&cov, grid.clone(), l, ComponentRule::Fixed(g))?;
        let k = ComponentRule::Pve {
            threshold: cfg.pve_univariate,
            max: cfg.k_max,
        }
        .select(&full.all_eigenvalues);
        leading.push(
            full.eigenfunctions
                .columns(0, LEADING_FUNCTIONS.min(g))
                .into_owned(),
        );
        let eig = EigenAt {
            eigenvalues: full.eigenvalues[..k].to_vec(),
            eigenfunctions: full.eigenfunctions.columns(0, k).into_owned(),
            ..full
        };
        let scores: Vec<Vec<f64>> = curves
            .iter()
            .map(|c| {
                let centred: Vec<f64> = c.iter().zip(&mean).map(|(x, m)| x - m).collect();
                project_scores(&Series::new(grid.clone(), centred), &eig)
            })
            .collect();
        means.push(mean);
        univariate.push(eig);
        blocks.push(scores);
    }
    let stacked_scores: Vec<Vec<f64>> = (0..n)
        .map(|i| blocks.iter().flat_map(|b| b[i].iter().copied()).collect())
        .collect();
    let kp = stacked_scores[0].len();
    let score_means: Vec<f64> = (0..kp)
        .map(|k| stacked_scores.iter().map(|s| s[k]).sum::<f64>() / n as f64)
        .collect();
    let z = sample_covariance(&stacked_scores, &score_means);
    let eig = sorted_symmetric_eigen(&z);
    let mv_eigenvalues: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let m = components_for_pve(&mv_eigenvalues, cfg.pve_multivariate, kp);
    let mv_vectors = eig.vectors.columns(0, m).into_owned();
    let scores: Vec<Vec<f64>> = stacked_scores
        .iter()
        .map(|xi| {
            (0..m)
                .map(|c| {
                    xi.iter()
                        .zip(mv_vectors.column(c).iter())
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut eigenfunctions = Vec::new();
    let mut offset = 0;
    for u in &univariate {
        eigenfunctions.push(&u.eigenfunctions * mv_vectors.rows(offset, u.k()));
        offset += u.k();
    }
    let reconstructions = scores
        .iter()
        .map(|rho| {
            means
                .iter()
                .zip(&eigenfunctions)
                .map(|(mean, psi)| {
                    (0..g)
                        .map(|i| mean[i] + (0..m).map(|c| rho[c] * psi[(i, c)]).sum::<f64>())
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(StandardMfpcaFit {
        truncation: l,
        grid,
        means,
        univariate,
        leading,
        stacked_scores,
        mv_eigenvalues,
        mv_vectors,
        scores,
        eigenfunctions,
        reconstructions,
    })
}

/// Binned MFPCA over a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedMfpcaFit {
    pub assignment: BinAssignment,
    /// One fit per entry of `assignment.bins`; `None` when the bin kept no subjects.
    pub bins: Vec<Option<StandardMfpcaFit>>,
    /// Original subject index of each fitted row, per bin.
    pub bin_subjects: Vec<Vec<usize>>,
    pub excluded: Vec<usize>,
}

impl BinnedMfpcaFit {
    pub fn fit(
        dataset: &FunctionalDataset,
        n_bins: usize,
        cfg: &StandardMfpcaConfig,
    ) -> Result<Self> {
        let assignment = assign_bins(&dataset.domain_lengths(), n_bins)?;
        let data = truncate(dataset, &assignment)?;
        let mut bins = Vec::with_capacity(data.len());
        let mut bin_subjects = Vec::with_capacity(data.len());
        let mut excluded = Vec::new();
        for d in data {
            excluded.extend(&d.excluded);
            bins.push(match &d.dataset {
                Some(ds) => Some(standard_mfpca(ds, cfg)?),
                None => None,
            });
            bin_subjects.push(d.subjects);
        }
        excluded.sort_unstable();
        Ok(Self {
            assignment,
            bins,
            bin_subjects,
            excluded,
        })
    }

    /// Bin fit and row of `subject`, if it was fitted.
    pub fn locate(&self, subject: usize) -> Option<(&StandardMfpcaFit, usize)> {
        let b = *self.assignment.subject_bin.get(subject)?;
        let row = self.bin_subjects[b].iter().position(|&i| i == subject)?;
        self.bins[b].as_ref().map(|f| (f, row))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_equal_bins() {
        let domains: Vec<f64> = (10..=100).map(|t| t as f64).collect();
        let a = assign_bins(&domains, 5).unwrap();
        assert_eq!(a.edges, vec![10.0, 28.0, 46.0, 64.0, 82.0, 100.0]);
        let i46 = domains.iter().position(|&t| t == 46.0).unwrap();
        assert_eq!(a.raw_bin[i46], 2);
        let i100 = domains.len() - 1;
        assert_eq!(a.raw_bin[i100], 4);
        assert_eq!(a.bins.len(), 5);
        assert_eq!(
            a.bins.iter().map(|b| b.members.len()).sum::<usize>(),
            domains.len()
        );
    }

    #[test]
    fn sparse_bins_merge_left() {
        let domains = vec![10.0, 11.0, 12.0, 50.0, 99.0, 100.0];
        let a = assign_bins(&domains, 5).unwrap();
        // bin 3 (50.0) holds a single subject; bins 2 and 4 are empty
        assert!(a.bins.iter().all(|b| b.members.len() >= 2));
        assert_eq!(a.bins.iter().map(|b| b.members.len()).sum::<usize>(), 6);
        assert!(!a.warnings.is_empty());
        for (i, &t) in domains.iter().enumerate() {
            assert!(a.truncation_of(i).unwrap() <= t);
        }
    }

    #[test]
    fn too_few_distinct_lengths() {
        assert!(assign_bins(&[10.0, 10.0, 20.0], 5).is_err());
        assert!(assign_bins(&[10.0, 20.0, 30.0], 1).is_err());
    }

    #[test]
    fn identical_subjects() {
        let grid: Vec<f64> = (1..=12).map(|t| t as f64).collect();
        let curve: Vec<f64> = grid.iter().map(|t| (t / 3.0).sin()).collect();
        let subjects = (0..4)
            .map(|i| SubjectRecord {
                subject_id: format!("s{i}"),
                domain_length: 12.0,
                series: vec![Series::new(grid.clone(), curve.clone())],
            })
            .collect();
        let ds = FunctionalDataset::new(vec!["x".into()], subjects).unwrap();
        let fit = standard_mfpca(&ds, &StandardMfpcaConfig::default()).unwrap();
        assert!(fit.univariate[0]
            .all_eigenvalues
            .iter()
            .all(|v| v.abs() <= 1e-10));
        for r in &fit.reconstructions {
            for (i, &t) in fit.grid.iter().enumerate().skip(1) {
                assert!((r[0][i] - (t / 3.0).sin()).abs() < 1e-10);
            }
        }
    }
}
