//! Base Gram matrices (statistics/shape/correlation), PSD correction,
//! sum-composition enumeration and the rectangular test-vs-train blocks.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Frame;
use crate::linalg;

/// Which base kernel (or combination) a Gram matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Statistics,
    Shape,
    Correlation,
    Composition,
}

impl KernelKind {
    pub fn tag(self) -> u8 {
        match self {
            KernelKind::Statistics => 0,
            KernelKind::Shape => 1,
            KernelKind::Correlation => 2,
            KernelKind::Composition => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => KernelKind::Statistics,
            1 => KernelKind::Shape,
            2 => KernelKind::Correlation,
            3 => KernelKind::Composition,
            other => return Err(Error::Schema(format!("unknown kernel kind tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Statistics => "statistics",
            KernelKind::Shape => "shape",
            KernelKind::Correlation => "correlation",
            KernelKind::Composition => "composition",
        }
    }
}

/// Symmetric N×N kernel similarity matrix.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub k: Array2<f64>,
    pub kind: KernelKind,
    /// True when the matrix is PSD by construction or has passed spectral
    /// correction.
    pub psd_checked: bool,
    /// Frame ids defining the row/column order.
    pub source_ids: Vec<u64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }
}

/// Gaussian kernel width parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub gamma: f64,
}

impl GaussianParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Parameter(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        Ok(GaussianParams { gamma })
    }
}

/// Per-dimension standardization statistics fitted on training rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit mean and population standard deviation per column. Zero-variance
    /// columns keep std 1 so they standardize to a constant 0.
    pub fn fit(x: &ArrayView2<f64>) -> Result<Self> {
        let (n, d) = (x.nrows(), x.ncols());
        if n == 0 {
            return Err(Error::Dimension("cannot standardize 0 rows".into()));
        }
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        for j in 0..d {
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            mean[j] = m;
            std[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} dims, input has {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Gaussian Gram matrix `K_ij = exp(−γ·‖x_i − x_j‖²)` on standardized
/// feature rows. The diagonal is exactly 1.
pub fn gaussian_kernel(
    x: &ArrayView2<f64>,
    params: GaussianParams,
    source_ids: &[u64],
) -> Result<GramMatrix> {
    GaussianParams::new(params.gamma)?;
    let n = x.nrows();
    check_ids(n, source_ids)?;
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let v = (-params.gamma * sq_dist(&rows[i], &rows[j])).exp();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(GramMatrix {
        k,
        kind: KernelKind::Statistics,
        psd_checked: true,
        source_ids: source_ids.to_vec(),
    })
}

/// Rectangular Gaussian block: entry `(t, i) = exp(−γ‖x_test_t − x_train_i‖²)`.
pub fn gaussian_cross(
    x_test: &ArrayView2<f64>,
    x_train: &ArrayView2<f64>,
    params: GaussianParams,
) -> Result<Array2<f64>> {
    GaussianParams::new(params.gamma)?;
    if x_test.ncols() != x_train.ncols() {
        return Err(Error::Config(format!(
            "cross kernel feature widths differ: {} vs {}",
            x_test.ncols(),
            x_train.ncols()
        )));
    }
    let mut c = Array2::zeros((x_test.nrows(), x_train.nrows()));
    for (t, xt) in x_test.rows().into_iter().enumerate() {
        for (i, xi) in x_train.rows().into_iter().enumerate() {
            c[[t, i]] = (-params.gamma
                * sq_dist(xt.as_slice().unwrap(), xi.as_slice().unwrap()))
            .exp();
        }
    }
    Ok(c)
}

/// Default cross-validation grid: the median-heuristic gamma scaled by
/// powers of two, `γ_med·2^k` for `k = −3..=3`, with
/// `γ_med = 1/(2·median(pairwise distance)²)`.
pub fn median_heuristic_grid(x: &ArrayView2<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&rows[i], &rows[j]).sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    let center = if dists.is_empty() {
        1.0
    } else {
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = dists[dists.len() / 2];
        1.0 / (2.0 * med * med)
    };
    (-3..=3).map(|k| center * 2.0f64.powi(k)).collect()
}

/// Pick the grid gamma maximizing mean k-fold validation accuracy of a
/// 1-nearest-neighbor classifier in kernel-induced distance
/// (`d² = 2 − 2k`). Folds are assigned round-robin by row index. Ties break
/// toward the smaller gamma.
pub fn select_gamma(
    x_train: &ArrayView2<f64>,
    y_train: &[usize],
    grid: &[f64],
    folds: usize,
) -> Result<GaussianParams> {
    if grid.is_empty() {
        return Err(Error::Parameter("gamma grid is empty".into()));
    }
    if folds < 2 {
        return Err(Error::Parameter(format!(
            "cross validation needs folds >= 2, got {folds}"
        )));
    }
    let n = x_train.nrows();
    if n != y_train.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            n,
            y_train.len()
        )));
    }
    if n < folds {
        return Err(Error::Parameter(format!(
            "cannot run {folds}-fold CV on {n} samples"
        )));
    }
    for &g in grid {
        GaussianParams::new(g)?;
    }

    let rows: Vec<Vec<f64>> = x_train.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut d2 = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&rows[i], &rows[j]);
            d2[[i, j]] = d;
            d2[[j, i]] = d;
        }
    }

    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best: Option<(f64, f64)> = None; // (accuracy, gamma)
    for &gamma in &sorted {
        let mut fold_acc_sum = 0.0;
        for fold in 0..folds {
            let mut correct = 0usize;
            let mut total = 0usize;
            for val in 0..n {
                if val % folds != fold {
                    continue;
                }
                let mut best_sim = f64::NEG_INFINITY;
                let mut best_j = None;
                for j in 0..n {
                    if j == val || j % folds == fold {
                        continue;
                    }
                    let sim = (-gamma * d2[[val, j]]).exp();
                    if sim > best_sim {
                        best_sim = sim;
                        best_j = Some(j);
                    }
                }
                if let Some(j) = best_j {
                    total += 1;
                    if y_train[j] == y_train[val] {
                        correct += 1;
                    }
                }
            }
            if total > 0 {
                fold_acc_sum += correct as f64 / total as f64;
            }
        }
        let acc = fold_acc_sum / folds as f64;
        let better = match best {
            None => true,
            Some((best_acc, _)) => acc > best_acc,
        };
        if better {
            best = Some((acc, gamma));
        }
    }
    GaussianParams::new(best.expect("grid nonempty").1)
}

/// Histogram-intersection Gram matrix `K_ij = Σ_b min(H_ib, H_jb)`.
pub fn intersection_kernel(h: &ArrayView2<f64>, source_ids: &[u64]) -> Result<GramMatrix> {
    let n = h.nrows();
    check_ids(n, source_ids)?;
    validate_histograms(h)?;
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v: f64 = h
                .row(i)
                .iter()
                .zip(h.row(j).iter())
                .map(|(a, b)| a.min(*b))
                .sum();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(GramMatrix {
        k,
        kind: KernelKind::Shape,
        psd_checked: true,
        source_ids: source_ids.to_vec(),
    })
}

/// Rectangular intersection block.
pub fn intersection_cross(
    h_test: &ArrayView2<f64>,
    h_train: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if h_test.ncols() != h_train.ncols() {
        return Err(Error::Config(format!(
            "cross kernel bin counts differ: {} vs {}",
            h_test.ncols(),
            h_train.ncols()
        )));
    }
    validate_histograms(h_test)?;
    validate_histograms(h_train)?;
    let mut c = Array2::zeros((h_test.nrows(), h_train.nrows()));
    for (t, ht) in h_test.rows().into_iter().enumerate() {
        for (i, hi) in h_train.rows().into_iter().enumerate() {
            c[[t, i]] = ht.iter().zip(hi.iter()).map(|(a, b)| a.min(*b)).sum();
        }
    }
    Ok(c)
}

fn validate_histograms(h: &ArrayView2<f64>) -> Result<()> {
    for (i, row) in h.rows().into_iter().enumerate() {
        if let Some(bad) = row.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(Error::Data(format!(
                "histogram row {i} has invalid bin mass {bad}"
            )));
        }
    }
    Ok(())
}

/// Per-axis prefix sums for shifted Pearson correlation.
struct AxisPrefix {
    x: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

fn axis_prefix(frame: &Frame, axis: usize) -> AxisPrefix {
    let x: Vec<f64> = frame.samples.column(axis).to_vec();
    let mut sum = vec![0.0; x.len() + 1];
    let mut sum_sq = vec![0.0; x.len() + 1];
    for (t, &v) in x.iter().enumerate() {
        sum[t + 1] = sum[t] + v;
        sum_sq[t + 1] = sum_sq[t] + v * v;
    }
    AxisPrefix { x, sum, sum_sq }
}

/// |Pearson| of `a` delayed by `shift` against `b`, i.e. over the overlap
/// pairs `(a[shift+t], b[t])`. Zero-variance overlaps contribute 0.
fn shifted_abs_pearson(a: &AxisPrefix, b: &AxisPrefix, shift: usize) -> f64 {
    let l = a.x.len();
    if shift + 2 > l {
        return 0.0;
    }
    let n = l - shift;
    let nf = n as f64;
    let sum_a = a.sum[l] - a.sum[shift];
    let ss_a = a.sum_sq[l] - a.sum_sq[shift];
    let sum_b = b.sum[n];
    let ss_b = b.sum_sq[n];
    let var_a = nf * ss_a - sum_a * sum_a;
    let var_b = nf * ss_b - sum_b * sum_b;
    if var_a <= 0.0 || var_b <= 0.0 {
        return 0.0;
    }
    let mut cross = 0.0;
    for t in 0..n {
        cross += a.x[shift + t] * b.x[t];
    }
    let r = (nf * cross - sum_a * sum_b) / (var_a * var_b).sqrt();
    r.abs().min(1.0)
}

/// Mean over axes of the maximum |Pearson| across shifts in
/// `[-max_shift, max_shift]`.
fn max_shift_correlation(a: &[AxisPrefix], b: &[AxisPrefix], max_shift: usize) -> f64 {
    let axes = a.len();
    let mut acc = 0.0;
    for ax in 0..axes {
        let mut best = shifted_abs_pearson(&a[ax], &b[ax], 0);
        for s in 1..=max_shift {
            best = best
                .max(shifted_abs_pearson(&a[ax], &b[ax], s))
                .max(shifted_abs_pearson(&b[ax], &a[ax], s));
        }
        acc += best;
    }
    acc / axes as f64
}

fn frame_prefixes(frames: &[&Frame]) -> Vec<Vec<AxisPrefix>> {
    frames
        .par_iter()
        .map(|f| (0..f.axis_count()).map(|a| axis_prefix(f, a)).collect())
        .collect()
}

/// Shift-tolerant correlation Gram matrix with spectral PSD correction.
///
/// `R_ij` is the mean over axes of the maximum |Pearson| over shifts; the
/// raw matrix (unit diagonal for non-degenerate frames) is then passed
/// through [`psd_correct`].
pub fn correlation_kernel(frames: &[&Frame], max_shift: usize) -> Result<GramMatrix> {
    let n = frames.len();
    if n == 0 {
        return Err(Error::Dimension("correlation kernel of 0 frames".into()));
    }
    let l = frames[0].len();
    if max_shift >= l {
        return Err(Error::Parameter(format!(
            "max_shift {max_shift} must be below frame length {l}"
        )));
    }
    let pre = frame_prefixes(frames);
    let mut flat = vec![0.0f64; n * n];
    flat.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for j in i..n {
            row[j] = max_shift_correlation(&pre[i], &pre[j], max_shift);
        }
    });
    let mut r = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            r[[i, j]] = flat[i * n + j];
            r[[j, i]] = flat[i * n + j];
        }
    }
    let corrected = psd_correct(&r.view())?;
    Ok(GramMatrix {
        k: corrected,
        kind: KernelKind::Correlation,
        psd_checked: true,
        source_ids: frames.iter().map(|f| f.id).collect(),
    })
}

/// Rectangular correlation block. Spectral clipping is a training-set
/// operation on the square Gram, so it is intentionally not applied here.
pub fn correlation_cross(
    test_frames: &[&Frame],
    train_frames: &[&Frame],
    max_shift: usize,
) -> Result<Array2<f64>> {
    if let (Some(t), Some(r)) = (test_frames.first(), train_frames.first()) {
        if t.axis_count() != r.axis_count() || t.len() != r.len() {
            return Err(Error::Config(
                "test and train frames have different shapes".into(),
            ));
        }
    }
    let n_train = train_frames.len();
    let pre_test = frame_prefixes(test_frames);
    let pre_train = frame_prefixes(train_frames);
    let mut flat = vec![0.0f64; test_frames.len() * n_train];
    flat.par_chunks_mut(n_train.max(1))
        .enumerate()
        .for_each(|(t, row)| {
            if t < pre_test.len() {
                for (i, cell) in row.iter_mut().enumerate() {
                    *cell = max_shift_correlation(&pre_test[t], &pre_train[i], max_shift);
                }
            }
        });
    Array2::from_shape_vec((test_frames.len(), n_train), flat)
        .map_err(|e| Error::Dimension(e.to_string()))
}

/// Nearest-PSD projection: eigendecompose, clamp negative eigenvalues to
/// zero, reconstruct and re-symmetrize exactly.
pub fn psd_correct(r: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let eig = linalg::sym_eig(r)?;
    let n = r.nrows();
    let mut lam = Array2::zeros((n, n));
    for i in 0..n {
        lam[[i, i]] = eig.eigenvalues[i].max(0.0);
    }
    let mut k = eig.eigenvectors.dot(&lam).dot(&eig.eigenvectors.t());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (k[[i, j]] + k[[j, i]]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    Ok(k)
}

/// One member of the composition kernel set: the elementwise sum of a
/// nonempty subset of base kernels.
#[derive(Debug, Clone)]
pub struct KernelMember {
    /// 0-based, sorted base indices.
    pub subset: Vec<usize>,
    /// Bitmask with bit `i` set for base `i`.
    pub mask: u32,
    pub gram: GramMatrix,
}

impl KernelMember {
    /// Human-readable subset label using 1-based base indices, e.g. "1+3".
    pub fn label(&self) -> String {
        self.subset
            .iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// The ordered composition kernel set: one member per nonempty subset of the
/// base kernels, ordered by (subset size, lexicographic subset).
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub members: Vec<KernelMember>,
    pub base_count: usize,
}

impl KernelSet {
    /// Total number of kernels, `2^M − 1`.
    pub fn total(&self) -> usize {
        self.members.len()
    }
}

/// Enumerate all nonempty subsets of the base kernels in canonical order
/// and build their sum Grams.
pub fn enumerate_compositions(bases: &[GramMatrix]) -> Result<KernelSet> {
    let m = bases.len();
    if m == 0 {
        return Err(Error::Parameter("no base kernels given".into()));
    }
    if m > 20 {
        return Err(Error::Parameter(format!(
            "refusing to enumerate 2^{m}−1 compositions"
        )));
    }
    let n = bases[0].n();
    for b in bases {
        if b.n() != n {
            return Err(Error::Dimension(format!(
                "base kernels disagree on N: {} vs {n}",
                b.n()
            )));
        }
        if b.source_ids != bases[0].source_ids {
            return Err(Error::Dimension(
                "base kernels disagree on frame order".into(),
            ));
        }
    }

    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << m))
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| (a.len(), a).cmp(&(b.len(), b)));

    let members = subsets
        .into_iter()
        .map(|subset| {
            let mask = subset.iter().fold(0u32, |acc, &i| acc | (1 << i));
            let mut k = bases[subset[0]].k.clone();
            for &i in &subset[1..] {
                k += &bases[i].k;
            }
            let kind = if subset.len() == 1 {
                bases[subset[0]].kind
            } else {
                KernelKind::Composition
            };
            let psd_checked = subset.iter().all(|&i| bases[i].psd_checked);
            KernelMember {
                subset,
                mask,
                gram: GramMatrix {
                    k,
                    kind,
                    psd_checked,
                    source_ids: bases[0].source_ids.clone(),
                },
            }
        })
        .collect();

    Ok(KernelSet {
        members,
        base_count: m,
    })
}

/// Sum the rectangular base blocks with the same subsets and order as a
/// [`KernelSet`] built from the matching base Grams.
pub fn compose_cross(base_cross: &[Array2<f64>], set: &KernelSet) -> Result<Vec<Array2<f64>>> {
    if base_cross.len() != set.base_count {
        return Err(Error::Dimension(format!(
            "{} cross blocks for {} base kernels",
            base_cross.len(),
            set.base_count
        )));
    }
    let shape = base_cross[0].raw_dim();
    for c in base_cross {
        if c.raw_dim() != shape {
            return Err(Error::Dimension("cross blocks disagree on shape".into()));
        }
    }
    Ok(set
        .members
        .iter()
        .map(|m| {
            let mut c = base_cross[m.subset[0]].clone();
            for &i in &m.subset[1..] {
                c += &base_cross[i];
            }
            c
        })
        .collect())
}

const GRAM_MAGIC: &[u8; 4] = b"KFGM";
const GRAM_VERSION: u32 = 1;

/// A Gram matrix read back from disk.
#[derive(Debug)]
pub struct GramFile {
    pub matrix: Array2<f64>,
    pub kind: KernelKind,
    pub mask: u32,
    pub psd_checked: bool,
}

/// Write a Gram matrix in the binary on-disk format: magic, version, N,
/// kind, subset mask, PSD flag, then row-major little-endian f64.
pub fn save_gram(path: &Path, gram: &GramMatrix, mask: u32) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(GRAM_MAGIC)?;
    w.write_all(&GRAM_VERSION.to_le_bytes())?;
    w.write_all(&(gram.n() as u64).to_le_bytes())?;
    w.write_all(&[gram.kind.tag()])?;
    w.write_all(&(mask).to_le_bytes())?;
    w.write_all(&[gram.psd_checked as u8])?;
    for v in gram.k.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a Gram matrix written by [`save_gram`].
pub fn load_gram(path: &Path) -> Result<GramFile> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRAM_MAGIC {
        return Err(Error::Schema(format!(
            "{}: not a Gram matrix file",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != GRAM_VERSION {
        return Err(Error::Schema(format!(
            "{}: unsupported Gram file version {version} (supported: {GRAM_VERSION})",
            path.display()
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)?;
    let kind = KernelKind::from_tag(byte[0])?;
    r.read_exact(&mut u32buf)?;
    let mask = u32::from_le_bytes(u32buf);
    r.read_exact(&mut byte)?;
    let psd_checked = byte[0] != 0;
    let mut data = vec![0.0f64; n * n];
    let mut f64buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    let matrix =
        Array2::from_shape_vec((n, n), data).map_err(|e| Error::Schema(e.to_string()))?;
    Ok(GramFile {
        matrix,
        kind,
        mask,
        psd_checked,
    })
}

/// Debug CSV export of a Gram matrix (plain numeric rows, no header).
pub fn gram_to_csv(path: &Path, k: &ArrayView2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in k.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn check_ids(n: usize, ids: &[u64]) -> Result<()> {
    if ids.len() != n {
        return Err(Error::Dimension(format!(
            "{} source ids for {n} rows",
            ids.len()
        )));
    }
    Ok(())
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_range(k: &ArrayView2<f64>) -> Result<(f64, f64)> {
    let eig = linalg::sym_eig(k)?;
    let max = *eig.eigenvalues.first().unwrap_or(&0.0);
    let min = *eig.eigenvalues.last().unwrap_or(&0.0);
    Ok((min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<u64> {
        (0..n as u64).collect()
    }

    fn sin_frame(id: u64, freq: f64, phase: f64, l: usize) -> Frame {
        let mut samples = Array2::zeros((l, 1));
        for t in 0..l {
            samples[[t, 0]] =
                (2.0 * std::f64::consts::PI * freq * t as f64 / 100.0 + phase).sin();
        }
        Frame {
            id,
            label: 0,
            samples,
        }
    }

    #[test]
    fn gaussian_diagonal_is_one() {
        let x = arr2(&[[0.0, 1.0], [2.0, -1.0], [3.5, 0.25]]);
        let g = gaussian_kernel(&x.view(), GaussianParams { gamma: 0.7 }, &ids(3)).unwrap();
        for i in 0..3 {
            assert_eq!(g.k[[i, i]], 1.0);
        }
    }

    #[test]
    fn gaussian_unit_distance_value() {
        let x = arr2(&[[0.0], [1.0]]);
        let g = gaussian_kernel(&x.view(), GaussianParams { gamma: 1.0 }, &ids(2)).unwrap();
        assert!((g.k[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_rejects_bad_gamma() {
        let x = arr2(&[[0.0], [1.0]]);
        assert!(matches!(
            gaussian_kernel(&x.view(), GaussianParams { gamma: 0.0 }, &ids(2)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn single_value_grid_is_selected() {
        let x = arr2(&[[0.0], [1.0], [0.1], [1.1]]);
        let y = vec![0, 1, 0, 1];
        let g = select_gamma(&x.view(), &y, &[0.5], 2).unwrap();
        assert_eq!(g.gamma, 0.5);
    }

    #[test]
    fn select_gamma_matches_cv_oracle() {
        // Two well-separated blobs; verify against an independent rerun of
        // the CV definition for every grid value.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 24;
        let mut x = Array2::zeros((n, 2));
        let mut y = vec![0usize; n];
        for i in 0..n {
            let c = i % 2;
            y[i] = c;
            x[[i, 0]] = c as f64 * 6.0 + rng.gen_range(-0.5..0.5);
            x[[i, 1]] = rng.gen_range(-0.5..0.5);
        }
        let grid = median_heuristic_grid(&x.view());
        let folds = 3;
        let picked = select_gamma(&x.view(), &y, &grid, folds).unwrap();

        // Oracle: brute-force CV accuracy per gamma.
        let acc_for = |gamma: f64| -> f64 {
            let mut sum = 0.0;
            for fold in 0..folds {
                let mut correct = 0;
                let mut total = 0;
                for val in 0..n {
                    if val % folds != fold {
                        continue;
                    }
                    let mut best = (f64::NEG_INFINITY, None);
                    for j in 0..n {
                        if j == val || j % folds == fold {
                            continue;
                        }
                        let d: f64 = (0..2).map(|k| (x[[val, k]] - x[[j, k]]).powi(2)).sum();
                        let s = (-gamma * d).exp();
                        if s > best.0 {
                            best = (s, Some(j));
                        }
                    }
                    total += 1;
                    if y[best.1.unwrap()] == y[val] {
                        correct += 1;
                    }
                }
                sum += correct as f64 / total as f64;
            }
            sum / folds as f64
        };
        let picked_acc = acc_for(picked.gamma);
        for &g in &grid {
            assert!(picked_acc >= acc_for(g) - 1e-12);
            if (acc_for(g) - picked_acc).abs() < 1e-12 {
                assert!(picked.gamma <= g);
            }
        }
    }

    #[test]
    fn intersection_identical_histograms() {
        let h = arr2(&[[0.25, 0.75], [0.25, 0.75]]);
        let k = intersection_kernel(&h.view(), &ids(2)).unwrap();
        assert!((k.k[[0, 1]] - 1.0).abs() < 1e-15);
        assert!((k.k[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn intersection_disjoint_and_partial() {
        let h = arr2(&[[1.0, 0.0], [0.0, 1.0], [0.25, 0.75], [0.5, 0.5]]);
        let k = intersection_kernel(&h.view(), &ids(4)).unwrap();
        assert_eq!(k.k[[0, 1]], 0.0);
        assert!((k.k[[2, 3]] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn intersection_rejects_negative_bin() {
        let h = arr2(&[[0.5, 0.5], [-0.1, 1.1]]);
        assert!(matches!(
            intersection_kernel(&h.view(), &ids(2)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn correlation_self_is_one() {
        let frames: Vec<Frame> = (0..3)
            .map(|i| sin_frame(i, 2.0 + i as f64, 0.3 * i as f64, 200))
            .collect();
        let refs: Vec<&Frame> = frames.iter().collect();
        let g = correlation_kernel(&refs, 20).unwrap();
        // After PSD correction the diagonal can move slightly; check the raw
        // self-correlation through the cross path (no correction).
        let c = correlation_cross(&refs, &refs, 20).unwrap();
        for i in 0..3 {
            assert!((c[[i, i]] - 1.0).abs() < 1e-12);
        }
        assert!(g.psd_checked);
    }

    #[test]
    fn correlation_recovers_shifted_copy() {
        let base = sin_frame(0, 3.0, 0.0, 300);
        // Frame 1 is frame 0 delayed by 15 samples (same generator, shifted phase).
        let shifted = {
            let mut samples = Array2::zeros((300, 1));
            for t in 0..300 {
                let tt = t as i64 - 15;
                samples[[t, 0]] =
                    (2.0 * std::f64::consts::PI * 3.0 * tt as f64 / 100.0).sin();
            }
            Frame {
                id: 1,
                label: 0,
                samples,
            }
        };
        let c = correlation_cross(&[&base], &[&shifted], 20).unwrap();
        assert!(c[[0, 0]] > 1.0 - 1e-9, "got {}", c[[0, 0]]);
    }

    #[test]
    fn white_noise_correlation_stays_small() {
        // Monte-Carlo oracle over 100 independent pairs.
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        let l = 500;
        let mut total = 0.0;
        for pair in 0..100 {
            let mut a = Array2::zeros((l, 1));
            let mut b = Array2::zeros((l, 1));
            for t in 0..l {
                a[[t, 0]] = rng.gen_range(-1.0..1.0);
                b[[t, 0]] = rng.gen_range(-1.0..1.0);
            }
            let fa = Frame {
                id: 2 * pair,
                label: 0,
                samples: a,
            };
            let fb = Frame {
                id: 2 * pair + 1,
                label: 0,
                samples: b,
            };
            let c = correlation_cross(&[&fa], &[&fb], 50).unwrap();
            total += c[[0, 0]];
        }
        let mean = total / 100.0;
        assert!(mean < 0.2, "mean max-shift correlation {mean}");
    }

    #[test]
    fn zero_variance_overlap_contributes_zero() {
        let flat = Frame {
            id: 0,
            label: 0,
            samples: Array2::from_elem((50, 1), 3.0),
        };
        let wavy = sin_frame(1, 5.0, 0.0, 50);
        let c = correlation_cross(&[&flat], &[&wavy], 10).unwrap();
        assert_eq!(c[[0, 0]], 0.0);
    }

    #[test]
    fn psd_correct_leaves_psd_input_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut b = Array2::zeros((12, 12));
        for v in b.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let psd = b.t().dot(&b);
        let out = psd_correct(&psd.view()).unwrap();
        let err = (&out - &psd).iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = psd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * norm);
    }

    #[test]
    fn psd_correct_clamps_negative_eigenvalue() {
        // Eigenvalues 3 and −1; clamping −1 reconstructs the rank-1 part.
        let r = arr2(&[[1.0, -2.0], [-2.0, 1.0]]);
        let out = psd_correct(&r.view()).unwrap();
        let expected = arr2(&[[1.5, -1.5], [-1.5, 1.5]]);
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_correct_zeroes_negative_definite_input() {
        let r = arr2(&[[-1.0, 0.0], [0.0, -1.0]]);
        let out = psd_correct(&r.view()).unwrap();
        for v in out.iter() {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn psd_correct_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut r = Array2::zeros((20, 20));
        for i in 0..20 {
            for j in i..20 {
                let v = rng.gen_range(-1.0..1.0);
                r[[i, j]] = v;
                r[[j, i]] = v;
            }
        }
        let once = psd_correct(&r.view()).unwrap();
        let twice = psd_correct(&once.view()).unwrap();
        let err = (&twice - &once).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err < 1e-10);
    }

    fn toy_bases(n: usize, seed: u64) -> Vec<GramMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|b| {
                let mut m = Array2::zeros((n, 4));
                for v in m.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let mut g =
                    gaussian_kernel(&m.view(), GaussianParams { gamma: 0.5 }, &ids(n)).unwrap();
                g.kind = match b {
                    0 => KernelKind::Statistics,
                    1 => KernelKind::Shape,
                    _ => KernelKind::Correlation,
                };
                g
            })
            .collect()
    }

    #[test]
    fn three_bases_make_seven_members() {
        let set = enumerate_compositions(&toy_bases(6, 1)).unwrap();
        assert_eq!(set.total(), 7);
        let labels: Vec<String> = set.members.iter().map(|m| m.label()).collect();
        assert_eq!(
            labels,
            vec!["1", "2", "3", "1+2", "1+3", "2+3", "1+2+3"]
        );
        let masks: Vec<u32> = set.members.iter().map(|m| m.mask).collect();
        assert_eq!(masks, vec![0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111]);
    }

    #[test]
    fn single_base_passes_through() {
        let bases = toy_bases(5, 2);
        let set = enumerate_compositions(&bases[..1]).unwrap();
        assert_eq!(set.total(), 1);
        assert_eq!(set.members[0].gram.k, bases[0].k);
    }

    #[test]
    fn member_equals_elementwise_sum() {
        let bases = toy_bases(5, 3);
        let set = enumerate_compositions(&bases).unwrap();
        let m13 = set
            .members
            .iter()
            .find(|m| m.subset == vec![0, 2])
            .unwrap();
        let expected = &bases[0].k + &bases[2].k;
        assert_eq!(m13.gram.k, expected);
    }

    #[test]
    fn four_bases_make_fifteen() {
        let mut bases = toy_bases(4, 4);
        bases.push(bases[0].clone());
        let set = enumerate_compositions(&bases).unwrap();
        assert_eq!(set.total(), 15);
    }

    #[test]
    fn composition_members_stay_psd() {
        let set = enumerate_compositions(&toy_bases(12, 5)).unwrap();
        for m in &set.members {
            let (min, max) = eigen_range(&m.gram.k.view()).unwrap();
            assert!(
                min >= -1e-8 * max.max(1.0),
                "member {} has min eigenvalue {min}",
                m.label()
            );
        }
    }

    #[test]
    fn gram_builders_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 8;
        let mut x = Array2::zeros((n, 3));
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let perm = [3usize, 0, 7, 1, 5, 2, 6, 4];
        let xp = x.select(ndarray::Axis(0), &perm);
        let g = gaussian_kernel(&x.view(), GaussianParams { gamma: 0.9 }, &ids(n)).unwrap();
        let gp = gaussian_kernel(&xp.view(), GaussianParams { gamma: 0.9 }, &ids(n)).unwrap();
        for a in 0..n {
            for b in 0..n {
                assert_eq!(gp.k[[a, b]], g.k[[perm[a], perm[b]]]);
            }
        }
    }

    #[test]
    fn intersection_kernel_is_empirically_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let n = 10;
            let bins = 6;
            let mut h = Array2::zeros((n, bins));
            for i in 0..n {
                let mut sum = 0.0;
                for b in 0..bins {
                    let v: f64 = rng.gen_range(0.0..1.0);
                    h[[i, b]] = v;
                    sum += v;
                }
                for b in 0..bins {
                    h[[i, b]] /= sum;
                }
            }
            let k = intersection_kernel(&h.view(), &ids(n)).unwrap();
            for v in k.k.iter() {
                assert!((0.0..=1.0 + 1e-12).contains(v));
            }
            let (min, max) = eigen_range(&k.k.view()).unwrap();
            assert!(min >= -1e-8 * max.max(1.0));
        }
    }

    #[test]
    fn cross_block_matches_gram_column() {
        let x = arr2(&[[0.5, 0.2], [1.0, -0.3], [-0.7, 0.9]]);
        let g = gaussian_kernel(&x.view(), GaussianParams { gamma: 1.3 }, &ids(3)).unwrap();
        let c = gaussian_cross(&x.slice(ndarray::s![..1, ..]), &x.view(), GaussianParams {
            gamma: 1.3,
        })
        .unwrap();
        for j in 0..3 {
            assert!((c[[0, j]] - g.k[[0, j]]).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_test_side_gives_zero_rows() {
        let train = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let empty = Array2::<f64>::zeros((0, 2));
        let c = gaussian_cross(&empty.view(), &train.view(), GaussianParams { gamma: 1.0 })
            .unwrap();
        assert_eq!(c.shape(), &[0, 2]);
        let ct = correlation_cross(&[], &[], 5).unwrap();
        assert_eq!(ct.shape(), &[0, 0]);
    }

    #[test]
    fn gram_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.gram");
        let bases = toy_bases(7, 9);
        save_gram(&path, &bases[1], 0b010).unwrap();
        let loaded = load_gram(&path).unwrap();
        assert_eq!(loaded.matrix, bases[1].k);
        assert_eq!(loaded.kind, KernelKind::Shape);
        assert_eq!(loaded.mask, 0b010);
        assert!(loaded.psd_checked);
    }

    #[test]
    fn truncated_gram_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.gram");
        std::fs::write(&path, b"KFGM\x01\x00\x00\x00").unwrap();
        assert!(load_gram(&path).is_err());
    }
}
