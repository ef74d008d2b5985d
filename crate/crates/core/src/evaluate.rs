//! Scoring fitted models against simulation ground truth.
//!
//! Curves are compared at the observation times `t = 1..T_i`. The binned
//! method is scored only at times within its bin's truncation length.
//! Eigenfunction recovery compares each variable's univariate eigenfunction
//! estimates with the generating eigenfunctions at the subject's `T_i`; the
//! k-th estimate is taken from the decomposition even when the component
//! count rule retained fewer than k components.

use std::borrow::Cow;

use crate::baseline::BinnedMfpcaFit;
use crate::error::{argument, Result};
use crate::linalg::interp_linear;
use crate::metrics::{armse_pc, armse_x, MetricReport};
use crate::mfpca::MultivariateVdFit;
use crate::simgen::SimTruth;
use crate::ufpca::{align_signs, eigendecompose_at, ComponentRule, EigenAt, UnivariateVdFpcaFit};

pub const VD_METHOD: &str = "VD-MFPCA";
pub const BIN_METHOD: &str = "BIN";

/// Evaluated truth and estimates of one variable across subjects.
#[derive(Default)]
struct Collected {
    x_truth: Vec<Vec<f64>>,
    x_est: Vec<Vec<f64>>,
    pc_truth: Vec<Vec<Vec<f64>>>,
    pc_est: Vec<Vec<Vec<f64>>>,
}

impl Collected {
    fn report(sets: Vec<Collected>, method: &str, n_pc: usize) -> Result<MetricReport> {
        let mut report = MetricReport {
            method: method.to_string(),
            armse_x: Vec::new(),
            armse_pc: Vec::new(),
            eval_points: Vec::new(),
        };
        for c in sets {
            report.armse_x.push(armse_x(&c.x_truth, &c.x_est)?);
            report.armse_pc.push(
                (0..n_pc)
                    .map(|k| armse_pc(&c.pc_truth, &c.pc_est, k))
                    .collect::<Result<_>>()?,
            );
            report
                .eval_points
                .push(c.x_truth.iter().map(Vec::len).sum());
        }
        Ok(report)
    }
}

fn sample(grid: &[f64], values: &[f64], at: &[f64]) -> Vec<f64> {
    at.iter().map(|&t| interp_linear(grid, values, t)).collect()
}

/// Eigen-expansion at subject `i`'s domain length with at least `n_pc`
/// components, whatever the retention rule kept.
fn leading_vd(fit: &UnivariateVdFpcaFit, i: usize, n_pc: usize) -> Result<Cow<'_, EigenAt>> {
    let cached = fit.subject_eigen(i)?;
    if cached.k() >= n_pc {
        return Ok(Cow::Borrowed(cached));
    }
    let mut e = eigendecompose_at(
        &fit.covariance,
        cached.domain_length,
        fit.grid_step,
        ComponentRule::Fixed(n_pc),
    )?;
    align_signs(&mut e, cached);
    Ok(Cow::Owned(e))
}

fn check_subjects(n_fit: usize, truth: &SimTruth) -> Result<()> {
    if n_fit != truth.subjects.len() {
        return Err(argument(format!(
            "fit covers {n_fit} subjects but truth has {}",
            truth.subjects.len()
        )));
    }
    Ok(())
}

/// ARMSE of reconstructions with all retained components, and of the first
/// `n_pc` univariate eigenfunctions per variable.
pub fn evaluate_vd(fit: &MultivariateVdFit, truth: &SimTruth, n_pc: usize) -> Result<MetricReport> {
    check_subjects(fit.n_subjects(), truth)?;
    let p = fit.univariate.len();
    let mut sets: Vec<Collected> = (0..p).map(|_| Collected::default()).collect();
    for (i, s) in truth.subjects.iter().enumerate() {
        let rec = fit.reconstruct(i, fit.m)?;
        for (j, set) in sets.iter_mut().enumerate() {
            set.x_truth.push(s.noiseless[j].clone());
            set.x_est.push(sample(&rec.grid, &rec.values[j], &s.grid));
            let eig = leading_vd(&fit.univariate[j], i, n_pc)?;
            set.pc_truth
                .push(s.eigenfunctions[j].iter().take(n_pc).cloned().collect());
            set.pc_est.push(
                (0..n_pc.min(eig.k()))
                    .map(|c| sample(&eig.grid, &eig.function(c), &s.grid))
                    .collect(),
            );
        }
    }
    Collected::report(sets, VD_METHOD, n_pc)
}

/// Same metrics for the binned method, restricted to each subject's `[0, L_bin]`.
/// Subjects excluded from every bin fit are skipped.
pub fn evaluate_binned(
    fit: &BinnedMfpcaFit,
    truth: &SimTruth,
    n_pc: usize,
) -> Result<MetricReport> {
    check_subjects(fit.assignment.subject_bin.len(), truth)?;
    let p = truth.subjects.first().map_or(0, |s| s.noiseless.len());
    let mut sets: Vec<Collected> = (0..p).map(|_| Collected::default()).collect();
    for (i, s) in truth.subjects.iter().enumerate() {
        let Some((bin, row)) = fit.locate(i) else {
            continue;
        };
        let l = bin.truncation;
        let n_eval = s.grid.partition_point(|&t| t <= l + 1e-9 * l.max(1.0));
        if n_eval == 0 {
            return Err(argument(format!(
                "subject {} has no points within [0, {l}]",
                s.subject_id
            )));
        }
        let at = &s.grid[..n_eval];
        for (j, set) in sets.iter_mut().enumerate() {
            set.x_truth.push(s.noiseless[j][..n_eval].to_vec());
            set.x_est
                .push(sample(&bin.grid, &bin.reconstructions[row][j], at));
            let lead = &bin.leading[j];
            set.pc_truth.push(
                s.eigenfunctions[j]
                    .iter()
                    .take(n_pc)
                    .map(|f| f[..n_eval].to_vec())
                    .collect(),
            );
            set.pc_est.push(
                (0..n_pc.min(lead.ncols()))
                    .map(|c| {
                        let f: Vec<f64> = lead.column(c).iter().copied().collect();
                        sample(&bin.grid, &f, at)
                    })
                    .collect(),
            );
        }
    }
    Collected::report(sets, BIN_METHOD, n_pc)
}
