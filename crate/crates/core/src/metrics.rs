//! Reconstruction and eigenfunction recovery errors, and replicate summaries.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};

/// Root mean squared difference of two equally long, non-empty vectors.
pub fn rmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return Err(argument("empty evaluation set"));
    }
    if truth.len() != estimate.len() {
        return Err(argument(format!(
            "truth has {} points but estimate has {}",
            truth.len(),
            estimate.len()
        )));
    }
    let ss: f64 = truth
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Mean over subjects of the per-subject RMSE. Each subject's vectors hold the
/// evaluated points only.
pub fn armse_x(truth: &[Vec<f64>], estimate: &[Vec<f64>]) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimate.len() {
        return Err(argument(
            "truth and estimate must cover the same non-empty subject set",
        ));
    }
    let total = truth
        .iter()
        .zip(estimate)
        .map(|(t, e)| rmse(t, e))
        .sum::<Result<f64>>()?;
    Ok(total / truth.len() as f64)
}

/// RMSE between `truth` and `estimate` after flipping the estimate when their
/// inner product over the evaluated points is negative.
pub fn aligned_rmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    let dot: f64 = truth.iter().zip(estimate).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        let flipped: Vec<f64> = estimate.iter().map(|v| -v).collect();
        rmse(truth, &flipped)
    } else {
        rmse(truth, estimate)
    }
}

/// Mean over subjects of the sign-aligned RMSE for component `k` (0-based).
/// Inputs are `[subject][component][point]`.
pub fn armse_pc(truth: &[Vec<Vec<f64>>], estimate: &[Vec<Vec<f64>>], k: usize) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimate.len() {
        return Err(argument(
            "truth and estimate must cover the same non-empty subject set",
        ));
    }
    let mut total = 0.0;
    for (t, e) in truth.iter().zip(estimate) {
        if k >= t.len() || k >= e.len() {
            return Err(argument(format!(
                "component {} requested but only {} true and {} estimated available",
                k + 1,
                t.len(),
                e.len()
            )));
        }
        total += aligned_rmse(&t[k], &e[k])?;
    }
    Ok(total / truth.len() as f64)
}

/// For each estimated component of one subject, the index of the true
/// component with the smallest sign-aligned RMSE. Diagnostic only.
pub fn best_match(truth: &[Vec<f64>], estimate: &[Vec<f64>]) -> Result<Vec<usize>> {
    estimate
        .iter()
        .map(|e| {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, t) in truth.iter().enumerate() {
                let r = aligned_rmse(t, e)?;
                if r < best.1 {
                    best = (i, r);
                }
            }
            Ok(best.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); `None` for one value.
    pub sd: Option<f64>,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n == 0 {
        return Err(argument("nothing to summarize"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Summary { n, mean, sd })
}

/// Metrics of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    /// `[variable]`
    pub armse_x: Vec<f64>,
    /// `[variable][component]`
    pub armse_pc: Vec<Vec<f64>>,
    /// Total number of evaluated points per variable.
    pub eval_points: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_identity() {
        let t = vec![vec![1.0, 2.0, 3.0], vec![0.0, -1.0]];
        assert_eq!(armse_x(&t, &t).unwrap(), 0.0);
        let shifted: Vec<Vec<f64>> = t
            .iter()
            .map(|s| s.iter().map(|v| v + 0.5).collect())
            .collect();
        assert!((armse_x(&t, &shifted).unwrap() - 0.5).abs() < 1e-15);
        assert!(armse_x(&[vec![]], &[vec![]]).is_err());
    }

    #[test]
    fn sign_alignment() {
        let truth = vec![vec![vec![0.2, 0.5, -0.1]]];
        let neg = vec![vec![vec![-0.2, -0.5, 0.1]]];
        assert_eq!(armse_pc(&truth, &neg, 0).unwrap(), 0.0);
        let off = vec![vec![vec![0.3, 0.6, 0.0]]];
        assert!((armse_pc(&truth, &off, 0).unwrap() - 0.1).abs() < 1e-12);
        assert!(armse_pc(&truth, &truth, 1).is_err());
    }

    #[test]
    fn summary_of_two() {
        let s = summarize(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.sd.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[4.0; 6]).unwrap().sd, Some(0.0));
        assert_eq!(summarize(&[4.0]).unwrap().sd, None);
    }

    #[test]
    fn best_match_finds_permutation() {
        let truth = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let est = vec![vec![0.0, -0.9], vec![1.1, 0.0]];
        assert_eq!(best_match(&truth, &est).unwrap(), vec![1, 0]);
    }
}
