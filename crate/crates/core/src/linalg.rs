//! Small dense linear-algebra and quadrature helpers shared by the FPCA routines.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{argument, Result};

/// Eigenpairs of a symmetric matrix in descending eigenvalue order.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order and
/// each eigenvector oriented so that its largest-magnitude entry is positive.
pub fn sorted_symmetric_eigen(matrix: &DMatrix<f64>) -> SortedEigen {
    let n = matrix.nrows();
    let sym = symmetrize(matrix);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).into_owned();
        orient(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    SortedEigen { values, vectors }
}

/// Flip `v` in place so that its largest-magnitude element is positive.
/// The first index wins ties.
pub fn orient(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    (matrix + matrix.transpose()) * 0.5
}

/// Spectral projection onto the positive semidefinite cone: negative eigenvalues
/// are set to zero. Matrices that are already PSD are returned unchanged (after
/// symmetrization).
pub fn psd_repair(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(matrix);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let repaired = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    symmetrize(&repaired)
}

/// Composite trapezoid weights for an increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let h = grid[i] - grid[i - 1];
        w[i - 1] += 0.5 * h;
        w[i] += 0.5 * h;
    }
    w
}

/// `{0, step, 2 step, ...}` up to `length`, with `length` appended when it is not
/// (numerically) a multiple of `step`.
pub fn uniform_grid(length: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(argument(format!("grid step must be positive, got {step}")));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(argument(format!(
            "grid length must be positive, got {length}"
        )));
    }
    let tol = 1e-9 * length.max(step);
    let count = ((length + tol) / step).floor() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|i| i as f64 * step).collect();
    let last = *grid.last().unwrap();
    if length - last > tol {
        grid.push(length);
    } else {
        *grid.last_mut().unwrap() = length;
    }
    if grid.len() < 3 {
        return Err(argument(format!(
            "grid over [0, {length}] with step {step} has fewer than 3 points"
        )));
    }
    Ok(grid)
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`; constant beyond the ends.
/// `xs` must be strictly increasing and non-empty.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v <= x);
    let lo = hi - 1;
    let frac = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + frac * (ys[hi] - ys[lo])
}

/// Eigen-expansion of an integral operator sampled on a quadrature grid.
#[derive(Debug, Clone)]
pub struct QuadratureEigen {
    /// All eigenvalues, descending, negatives clipped to zero.
    pub values: Vec<f64>,
    /// Eigenfunctions sampled on the grid, one column per eigenvalue.
    pub functions: DMatrix<f64>,
}

/// Eigendecomposition of the operator with kernel `kernel` (sampled on a grid
/// with quadrature weights `weights`). Decomposes `W^½ Γ W^½` and maps the
/// eigenvectors back with `W^-½`, so the returned functions are orthonormal under
/// the quadrature rule.
pub fn quadrature_eigen(kernel: &DMatrix<f64>, weights: &[f64]) -> Result<QuadratureEigen> {
    let n = weights.len();
    if kernel.nrows() != n || kernel.ncols() != n {
        return Err(argument("kernel and weight dimensions differ"));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(argument("quadrature weights must be positive"));
    }
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * kernel[(i, j)] * sqrt_w[j]);
    let eig = sorted_symmetric_eigen(&scaled);
    let mut functions = eig.vectors;
    for j in 0..n {
        let mut col = functions.column_mut(j);
        for i in 0..n {
            col[i] /= sqrt_w[i];
        }
        orient(col.as_mut_slice());
    }
    let values = eig.values.iter().map(|&v| v.max(0.0)).collect();
    Ok(QuadratureEigen { values, functions })
}

/// Smallest `k` whose cumulative share of the positive eigenvalue mass reaches
/// `pve`, capped at `k_max`. Always at least 1 when `k_max >= 1`.
pub fn components_for_pve(values: &[f64], pve: f64, k_max: usize) -> usize {
    let total: f64 = values.iter().filter(|v| **v > 0.0).sum();
    let cap = k_max.min(values.len()).max(1);
    if total <= 0.0 {
        return 1.min(cap);
    }
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v.max(0.0);
        if acc / total >= pve - 1e-12 {
            return (i + 1).min(cap);
        }
    }
    cap
}

/// `Σ w_i a_i b_i`.
pub fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_endpoint() {
        assert_eq!(
            uniform_grid(4.0, 1.0).unwrap(),
            vec![0.0, 1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(uniform_grid(2.5, 1.0).unwrap(), vec![0.0, 1.0, 2.0, 2.5]);
        assert!(uniform_grid(1.0, 1.0).is_err());
        assert!(uniform_grid(5.0, 0.0).is_err());
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let grid = vec![0.0, 0.5, 2.0, 3.0];
        let w = trapezoid_weights(&grid);
        let integral: f64 = grid.iter().zip(&w).map(|(x, w)| x * w).sum();
        assert!((integral - 4.5).abs() < 1e-14);
    }

    #[test]
    fn interpolation_is_clamped() {
        let xs = [1.0, 2.0, 4.0];
        let ys = [10.0, 20.0, 0.0];
        assert_eq!(interp_linear(&xs, &ys, 0.0), 10.0);
        assert_eq!(interp_linear(&xs, &ys, 3.0), 10.0);
        assert_eq!(interp_linear(&xs, &ys, 9.0), 0.0);
        assert_eq!(interp_linear(&xs, &ys, 2.0), 20.0);
    }

    #[test]
    fn orientation_makes_largest_entry_positive() {
        let mut v = vec![0.1, -0.9, 0.3];
        orient(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
    }

    #[test]
    fn psd_repair_clips_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = psd_repair(&m);
        let eig = SymmetricEigen::new(r.clone());
        assert!(eig.eigenvalues.min() >= -1e-12);
        // eigenvalues 3 and -1, so the projection is 1.5 * ones
        for x in r.iter() {
            assert!((x - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn pve_rule() {
        let vals = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(components_for_pve(&vals, 0.7, 8), 2);
        assert_eq!(components_for_pve(&vals, 0.71, 8), 3);
        assert_eq!(components_for_pve(&vals, 1.0, 8), 4);
        assert_eq!(components_for_pve(&vals, 1.0, 2), 2);
    }
}
