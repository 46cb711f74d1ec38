//! Dense symmetric linear algebra: eigendecomposition and PCA.
//!
//! Everything here is self-contained (no LAPACK binding). The eigensolver is
//! a cyclic Jacobi iteration, which preserves symmetry by construction and is
//! accurate enough to meet the reconstruction contract of
//! [`EigenDecomposition`] on the matrix sizes this crate works with.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of a symmetric eigendecomposition `A = Q Λ Qᵀ`.
///
/// Invariants on return from [`sym_eig`]:
/// * eigenvalues sorted descending,
/// * eigenvector columns orthonormal to 1e-10 (Frobenius),
/// * `‖QΛQᵀ − A‖_F ≤ 1e-10·‖A‖_F`,
/// * deterministic sign: the largest-magnitude component of each
///   eigenvector is positive.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Array2<f64>,
}

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input must be symmetric to 1e-12 relative; it is symmetrized exactly
/// before iterating so the result does not depend on which triangle carries
/// rounding noise.
pub fn sym_eig(a: &ArrayView2<f64>) -> Result<EigenDecomposition> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "sym_eig needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: vec![],
            eigenvectors: Array2::zeros((0, 0)),
        });
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::Dimension(format!(
                    "sym_eig input not symmetric at ({i},{j}): {} vs {}",
                    a[[i, j]],
                    a[[j, i]]
                )));
            }
        }
    }

    // Flat row-major working copies; the rotation kernel is the hot path.
    let mut m = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    let mut q = vec![0.0f64; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }

    let fro: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let stop = 1e-13 * fro.max(f64::MIN_POSITIVE);

    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    let mut b = eig.clone();
    let mut z = vec![0.0f64; n];

    let mut converged = false;
    for sweep in 0..MAX_SWEEPS {
        let mut off_sum = 0.0;
        for p in 0..n {
            for qi in (p + 1)..n {
                off_sum += m[p * n + qi].abs();
            }
        }
        if off_sum <= stop {
            converged = true;
            break;
        }
        // Threshold the first sweeps so tiny elements do not trigger
        // rotations while large ones remain (Numerical Recipes scheme).
        let tresh = if sweep < 3 {
            0.2 * off_sum / (n * n) as f64
        } else {
            0.0
        };

        for p in 0..(n - 1) {
            for qi in (p + 1)..n {
                let apq = m[p * n + qi];
                let g = 100.0 * apq.abs();
                // Off-diagonal element negligible relative to the diagonal:
                // zero it and move on.
                if sweep > 3
                    && eig[p].abs() + g == eig[p].abs()
                    && eig[qi].abs() + g == eig[qi].abs()
                {
                    m[p * n + qi] = 0.0;
                    continue;
                }
                if apq.abs() <= tresh {
                    continue;
                }

                let h = eig[qi] - eig[p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        t = -t;
                    }
                    t
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                z[p] -= h;
                z[qi] += h;
                eig[p] -= h;
                eig[qi] += h;
                m[p * n + qi] = 0.0;

                rotate_range(&mut m, n, 0, p, |j| (j * n + p, j * n + qi), s, tau);
                rotate_range(&mut m, n, p + 1, qi, |j| (p * n + j, j * n + qi), s, tau);
                rotate_range(&mut m, n, qi + 1, n, |j| (p * n + j, qi * n + j), s, tau);
                rotate_range(&mut q, n, 0, n, |j| (j * n + p, j * n + qi), s, tau);
            }
        }
        for i in 0..n {
            b[i] += z[i];
            eig[i] = b[i];
            z[i] = 0.0;
        }
    }
    if !converged {
        let mut off = 0.0f64;
        for p in 0..n {
            for qi in (p + 1)..n {
                off += m[p * n + qi].abs();
            }
        }
        return Err(Error::Numerical(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps \
             (n={n}, residual off-diagonal sum {off:.3e}, ‖A‖_F {fro:.3e})"
        )));
    }

    // Sort descending; stable so equal eigenvalues keep sweep order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());

    let mut values = Vec::with_capacity(n);
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig[src]);
        // Sign convention: largest-magnitude component positive.
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for r in 0..n {
            let v = q[r * n + src].abs();
            if v > best_abs {
                best_abs = v;
                best = r;
            }
        }
        let flip = if q[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[[r, dst]] = flip * q[r * n + src];
        }
    }

    Ok(EigenDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Apply one Jacobi rotation to index pairs produced by `idx` over `lo..hi`.
#[inline(always)]
fn rotate_range<F>(m: &mut [f64], _n: usize, lo: usize, hi: usize, idx: F, s: f64, tau: f64)
where
    F: Fn(usize) -> (usize, usize),
{
    for j in lo..hi {
        let (ia, ib) = idx(j);
        // Indices are in range by construction of the sweep loops.
        unsafe {
            let g = *m.get_unchecked(ia);
            let h = *m.get_unchecked(ib);
            *m.get_unchecked_mut(ia) = g - s * (h + g * tau);
            *m.get_unchecked_mut(ib) = h + s * (g - h * tau);
        }
    }
}

/// A fitted PCA basis: centering mean, orthonormal components, explained
/// variance per component (eigenvalues of the 1/(N−1) sample covariance).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// D×d, orthonormal columns ordered by decreasing explained variance.
    pub components: Array2<f64>,
    pub explained: Vec<f64>,
    /// Number of components with non-negligible variance. `rank < d` flags
    /// that the input had less variation than the requested dimension; the
    /// extra columns are still orthonormal directions but carry ~zero
    /// variance, so transformed coordinates there are ~0.
    pub rank: usize,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }
}

/// Fit a PCA model on the rows of `x` (N samples × D dims), keeping the top
/// `d` principal directions of the 1/(N−1) sample covariance.
pub fn pca_fit(x: &ArrayView2<f64>, d: usize) -> Result<PcaModel> {
    let (n, dim) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(Error::Dimension(format!(
            "pca_fit needs at least 2 samples, got {n}"
        )));
    }
    if d == 0 || d > n.min(dim) {
        return Err(Error::Dimension(format!(
            "pca_fit target dim {d} outside 1..=min(N={n}, D={dim})"
        )));
    }

    let mut mean = vec![0.0f64; dim];
    for row in x.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut centered = x.to_owned();
    for mut row in centered.rows_mut() {
        for (v, m) in row.iter_mut().zip(mean.iter()) {
            *v -= m;
        }
    }

    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = sym_eig(&cov.view())?;

    let lambda_max = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-12 * lambda_max.max(1e-300);
    let rank_full = eig.eigenvalues.iter().filter(|&&l| l > tol).count();

    let components = eig.eigenvectors.slice(ndarray::s![.., ..d]).to_owned();
    let explained = eig.eigenvalues[..d].to_vec();
    let rank = rank_full.min(d);
    if rank < d {
        log::warn!(
            "pca_fit: requested {d} components but input rank is {rank_full}; \
             trailing components carry no variance"
        );
    }

    Ok(PcaModel {
        mean,
        components,
        explained,
        rank,
    })
}

/// Project rows of `x` through a fitted model: `(x − mean)·components`.
pub fn pca_transform(model: &PcaModel, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let dim = model.input_dim();
    if x.ncols() != dim {
        return Err(Error::Dimension(format!(
            "pca_transform: input width {} does not match model dim {dim}",
            x.ncols()
        )));
    }
    if x.nrows() == 0 {
        return Ok(Array2::zeros((0, model.output_dim())));
    }
    let mut centered = x.to_owned();
    for mut row in centered.rows_mut() {
        for (v, m) in row.iter_mut().zip(model.mean.iter()) {
            *v -= m;
        }
    }
    Ok(centered.dot(&model.components))
}
