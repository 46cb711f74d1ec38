//! Per-frame feature representations feeding the three base kernels:
//! per-axis statistics, delay embeddings of the total-acceleration series,
//! and pairwise-distance shape histograms.

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Frame;
use crate::linalg;

/// Feature-stage parameters.
///
/// `tau` and `embed_dim` shape the time-delay embedding, `bins` the shape
/// histogram, `max_shift` the correlation search window (in samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub sampling_rate: f64,
    pub tau: usize,
    pub embed_dim: usize,
    pub bins: usize,
    pub max_shift: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            sampling_rate: 100.0,
            tau: 10,
            embed_dim: 8,
            bins: 16,
            max_shift: 50,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate <= 0.0 {
            return Err(Error::Config("sampling_rate must be positive".into()));
        }
        if self.tau == 0 || self.embed_dim == 0 {
            return Err(Error::Config("tau and embedding dimension must be positive".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("histogram bin count must be positive".into()));
        }
        Ok(())
    }
}

/// Per-axis order of the statistical features. The full vector is
/// `[block(axis 0), ..., block(axis A-1), mean total-acceleration]`,
/// dimension `7·A + 1`.
pub const STAT_NAMES: [&str; 7] = [
    "mean",
    "median",
    "std",
    "kurtosis",
    "skewness",
    "mcr",
    "domfreq",
];

/// Statistical feature vector of one frame.
#[derive(Debug, Clone)]
pub struct StatFeatures {
    pub values: Vec<f64>,
    /// Axes whose signal was constant (zero variance); their kurtosis and
    /// skewness are defined as 0 rather than an error.
    pub degenerate_axes: Vec<usize>,
}

impl StatFeatures {
    pub fn dim(axis_count: usize) -> usize {
        7 * axis_count + 1
    }
}

/// Compute the statistics features of a frame.
///
/// Per axis: mean, median, population standard deviation, excess kurtosis,
/// skewness (standardized third moment), mean-crossing rate and dominant
/// frequency (argmax of the DFT magnitude of the mean-removed signal, DC
/// excluded, ties toward the lower frequency). One trailing entry holds the
/// mean per-timestep acceleration magnitude across axes.
pub fn stat_features(frame: &Frame, sampling_rate: f64) -> Result<StatFeatures> {
    let l = frame.len();
    if l < 4 {
        return Err(Error::Dimension(format!(
            "stat_features needs frame length >= 4, got {l}"
        )));
    }
    if sampling_rate <= 0.0 {
        return Err(Error::Parameter(format!(
            "sampling_rate must be positive, got {sampling_rate}"
        )));
    }
    let a = frame.axis_count();
    let mut values = Vec::with_capacity(StatFeatures::dim(a));
    let mut degenerate = Vec::new();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(l);

    for axis in 0..a {
        let x: Vec<f64> = frame.samples.column(axis).to_vec();
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            // Constant axis: everything degenerate by definition.
            values.extend_from_slice(&[lo, lo, 0.0, 0.0, 0.0, 0.0, 0.0]);
            degenerate.push(axis);
            continue;
        }
        let n = l as f64;
        let mean = x.iter().sum::<f64>() / n;
        let mut sorted = x.clone();
        sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let median = if l % 2 == 1 {
            sorted[l / 2]
        } else {
            0.5 * (sorted[l / 2 - 1] + sorted[l / 2])
        };
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let std = m2.sqrt();
        let (kurtosis, skewness) = if m2 > 0.0 {
            (m4 / (m2 * m2) - 3.0, m3 / m2.powf(1.5))
        } else {
            degenerate.push(axis);
            (0.0, 0.0)
        };
        let crossings = x
            .windows(2)
            .filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0)
            .count();
        let mcr = crossings as f64 / (l - 1) as f64;

        let mut buf: Vec<Complex<f64>> =
            x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
        fft.process(&mut buf);
        let mut best_bin = 0usize;
        let mut best_mag = 0.0f64;
        for (k, c) in buf.iter().enumerate().take(l / 2 + 1).skip(1) {
            let mag = c.norm();
            if mag > best_mag {
                best_mag = mag;
                best_bin = k;
            }
        }
        let domfreq = if best_mag > 0.0 {
            best_bin as f64 * sampling_rate / n
        } else {
            0.0
        };

        values.extend_from_slice(&[mean, median, std, kurtosis, skewness, mcr, domfreq]);
    }

    let magnitudes = frame.magnitude_series();
    values.push(magnitudes.iter().sum::<f64>() / l as f64);

    Ok(StatFeatures {
        values,
        degenerate_axes: degenerate,
    })
}

/// Time-delay embedding of a scalar series: row `t` is
/// `[x_t, x_{t+τ}, ..., x_{t+(n−1)τ}]`.
#[derive(Debug, Clone)]
pub struct DelayEmbedding {
    /// m delay vectors × n dimensions.
    pub matrix: Array2<f64>,
    pub tau: usize,
    pub dim: usize,
}

impl DelayEmbedding {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Build the delay embedding of `x` with delay `tau` and dimension `n`.
/// Produces `m = L − (n−1)·τ` rows of exact sample copies.
pub fn delay_embed(x: &[f64], tau: usize, n: usize) -> Result<DelayEmbedding> {
    if n == 0 || tau == 0 {
        return Err(Error::Parameter(format!(
            "delay_embed needs tau >= 1 and n >= 1, got tau={tau}, n={n}"
        )));
    }
    let span = (n - 1) * tau;
    if x.len() <= span {
        return Err(Error::Dimension(format!(
            "series of length {} too short for tau={tau}, n={n} (needs > {span})",
            x.len()
        )));
    }
    let m = x.len() - span;
    let mut matrix = Array2::zeros((m, n));
    for t in 0..m {
        for k in 0..n {
            matrix[[t, k]] = x[t + k * tau];
        }
    }
    Ok(DelayEmbedding { matrix, tau, dim: n })
}

/// Project delay vectors onto their top-3 principal directions (noise
/// reduction before the shape function). Rank-deficient embeddings keep
/// orthonormal filler directions; coordinates there are ~0.
pub fn project_3d(embedding: &DelayEmbedding) -> Result<Array2<f64>> {
    let m = embedding.rows();
    if m < 3 {
        return Err(Error::Dimension(format!(
            "project_3d needs at least 3 delay vectors, got {m}"
        )));
    }
    let d = 3.min(embedding.dim);
    let pca = linalg::pca_fit(&embedding.matrix.view(), d)?;
    if pca.rank < d {
        log::warn!(
            "project_3d: embedding covariance rank {} < {d}; trailing projection \
             coordinates are ~0",
            pca.rank
        );
    }
    let mut z = linalg::pca_transform(&pca, &embedding.matrix.view())?;
    if d < 3 {
        let mut padded = Array2::zeros((m, 3));
        padded.slice_mut(ndarray::s![.., ..d]).assign(&z);
        z = padded;
    }
    Ok(z)
}

/// L1-normalized histogram of pairwise point distances.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeHistogram {
    /// B nonnegative bin masses summing to 1.
    pub h: Vec<f64>,
    /// B+1 increasing bin edges.
    pub bin_edges: Vec<f64>,
}

/// Histogram of all `m(m−1)/2` pairwise Euclidean distances of the rows of
/// `points`, binned by `edges` (shared across frames). Distances outside the
/// edge range are clamped into the first/last bin.
pub fn shape_histogram(points: &ArrayView2<f64>, edges: &[f64]) -> Result<ShapeHistogram> {
    let m = points.nrows();
    if m < 2 {
        return Err(Error::Dimension(format!(
            "shape_histogram needs at least 2 points, got {m}"
        )));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter(
            "histogram edges must be strictly increasing with at least 2 entries".into(),
        ));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    let d = points.ncols();
    for i in 0..m {
        for j in (i + 1)..m {
            let mut sq = 0.0;
            for k in 0..d {
                let diff = points[[i, k]] - points[[j, k]];
                sq += diff * diff;
            }
            counts[bin_index(sq.sqrt(), edges)] += 1;
        }
    }
    let total = (m * (m - 1) / 2) as f64;
    let h = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(ShapeHistogram {
        h,
        bin_edges: edges.to_vec(),
    })
}

fn bin_index(value: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    if value < edges[0] {
        return 0;
    }
    // partition_point finds the first edge > value; bin b covers
    // [edges[b], edges[b+1]), except the last bin which is closed above.
    let idx = edges.partition_point(|&e| e <= value);
    idx.saturating_sub(1).min(bins - 1)
}

/// Equal-width bin edges from the global minimum/maximum pairwise distance
/// observed on the training frames' projected point clouds. Frozen at
/// training time and reused for test frames.
pub fn global_bin_edges(train_clouds: &[Array2<f64>], bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::Parameter("bin count must be positive".into()));
    }
    if train_clouds.is_empty() {
        return Err(Error::Config(
            "cannot derive histogram edges from an empty training set".into(),
        ));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for cloud in train_clouds {
        let m = cloud.nrows();
        for i in 0..m {
            for j in (i + 1)..m {
                let mut sq = 0.0;
                for k in 0..cloud.ncols() {
                    let diff = cloud[[i, k]] - cloud[[j, k]];
                    sq += diff * diff;
                }
                let dist = sq.sqrt();
                lo = lo.min(dist);
                hi = hi.max(dist);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Data(
            "training clouds have no pairwise distances".into(),
        ));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok((0..=bins)
        .map(|b| lo + span * b as f64 / bins as f64)
        .collect())
}
