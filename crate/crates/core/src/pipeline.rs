//! End-to-end orchestration: features → kernels → embeddings → fusion, plus
//! the checkpoint container and the plain-text/CSV report writers.
//!
//! All stage parameters are frozen on the training split (feature
//! standardization, the Gaussian gamma, histogram bin edges, PCA bases) and
//! reused verbatim for test frames, so evaluation never leaks test
//! statistics and reproduces training-time metrics exactly.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{self, FeatureParams};
use crate::fusion::{EvalMetrics, FusionModel, TrainReport, Variant};
use crate::ingest::{Dataset, Frame, Split};
use crate::kernels::{
    self, compose_cross, enumerate_compositions, GaussianParams, KernelSet, Standardizer,
};
use crate::linalg::PcaModel;

/// Gaussian-kernel cross-validation settings. An empty grid means "use the
/// median-heuristic grid computed on the standardized training features".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma_grid: Vec<f64>,
    pub cv_folds: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            gamma_grid: vec![],
            cv_folds: 3,
        }
    }
}

/// Per-frame representations for one side of the split.
struct FrameFeatures {
    stats: Array2<f64>,
    clouds: Vec<Array2<f64>>,
}

fn frame_features(frames: &[&Frame], params: &FeatureParams) -> Result<FrameFeatures> {
    let per_frame: Vec<Result<(Vec<f64>, Array2<f64>)>> = frames
        .par_iter()
        .map(|f| {
            let stats = features::stat_features(f, params.sampling_rate)?;
            let magnitude = f.magnitude_series();
            let embedding = features::delay_embed(&magnitude, params.tau, params.embed_dim)?;
            let cloud = features::project_3d(&embedding)?;
            Ok((stats.values, cloud))
        })
        .collect();
    let mut stats_rows = Vec::with_capacity(frames.len());
    let mut clouds = Vec::with_capacity(frames.len());
    for r in per_frame {
        let (s, c) = r?;
        stats_rows.push(s);
        clouds.push(c);
    }
    let dim = stats_rows.first().map(|r| r.len()).unwrap_or(0);
    let mut stats = Array2::zeros((stats_rows.len(), dim));
    for (i, row) in stats_rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            stats[[i, j]] = v;
        }
    }
    Ok(FrameFeatures { stats, clouds })
}

fn histograms(clouds: &[Array2<f64>], edges: &[f64]) -> Result<Array2<f64>> {
    let rows: Vec<Result<Vec<f64>>> = clouds
        .par_iter()
        .map(|c| Ok(features::shape_histogram(&c.view(), edges)?.h))
        .collect();
    let bins = edges.len() - 1;
    let mut h = Array2::zeros((clouds.len(), bins));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            h[[i, j]] = v;
        }
    }
    Ok(h)
}

/// Everything a fusion run needs: the train-side kernel set, the matching
/// rectangular test blocks, labels and the frozen feature-stage parameters.
#[derive(Debug)]
pub struct PreparedKernels {
    pub kernel_set: KernelSet,
    /// Test×train block per kernel member, in member order.
    pub cross: Vec<Array2<f64>>,
    pub y_train: Vec<usize>,
    pub y_test: Vec<usize>,
    pub class_count: usize,
    pub standardizer: Standardizer,
    pub gamma: f64,
    pub hist_edges: Vec<f64>,
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
}

/// Build the three base kernels and their compositions for a split dataset.
pub fn prepare(
    ds: &Dataset,
    split: &Split,
    feat: &FeatureParams,
    kern: &KernelParams,
) -> Result<PreparedKernels> {
    let train_frames = ds.select(&split.train_indices);
    let test_frames = ds.select(&split.test_indices);
    let y_train: Vec<usize> = train_frames.iter().map(|f| f.label).collect();
    let y_test: Vec<usize> = test_frames.iter().map(|f| f.label).collect();
    let train_ids: Vec<u64> = train_frames.iter().map(|f| f.id).collect();
    let test_ids: Vec<u64> = test_frames.iter().map(|f| f.id).collect();

    let train_feat = frame_features(&train_frames, feat)?;
    let test_feat = frame_features(&test_frames, feat)?;

    // Statistics kernel.
    let standardizer = Standardizer::fit(&train_feat.stats.view())?;
    let xtr = standardizer.apply(&train_feat.stats.view())?;
    let xte = standardizer.apply(&test_feat.stats.view())?;
    let grid = if kern.gamma_grid.is_empty() {
        kernels::median_heuristic_grid(&xtr.view())
    } else {
        kern.gamma_grid.clone()
    };
    let gamma = kernels::select_gamma(&xtr.view(), &y_train, &grid, kern.cv_folds)?;
    let stats_gram = kernels::gaussian_kernel(&xtr.view(), gamma, &train_ids)?;
    let stats_cross = kernels::gaussian_cross(&xte.view(), &xtr.view(), gamma)?;

    // Shape kernel: bin edges frozen on the training clouds.
    let hist_edges = features::global_bin_edges(&train_feat.clouds, feat.bins)?;
    let h_train = histograms(&train_feat.clouds, &hist_edges)?;
    let h_test = histograms(&test_feat.clouds, &hist_edges)?;
    let shape_gram = kernels::intersection_kernel(&h_train.view(), &train_ids)?;
    let shape_cross = kernels::intersection_cross(&h_test.view(), &h_train.view())?;

    // Correlation kernel.
    let corr_gram = kernels::correlation_kernel(&train_frames, feat.max_shift)?;
    let corr_cross = kernels::correlation_cross(&test_frames, &train_frames, feat.max_shift)?;

    let kernel_set = enumerate_compositions(&[stats_gram, shape_gram, corr_gram])?;
    let cross = compose_cross(&[stats_cross, shape_cross, corr_cross], &kernel_set)?;

    Ok(PreparedKernels {
        kernel_set,
        cross,
        y_train,
        y_test,
        class_count: ds.class_count,
        standardizer,
        gamma: gamma.gamma,
        hist_edges,
        train_ids,
        test_ids,
    })
}

/// Rebuild the rectangular eval×train blocks for stored pipeline parameters
/// (used by checkpoint evaluation; train-side representations are recomputed
/// deterministically from the data file).
pub fn cross_blocks_for_eval(
    train_frames: &[&Frame],
    eval_frames: &[&Frame],
    feat: &FeatureParams,
    standardizer: &Standardizer,
    gamma: f64,
    hist_edges: &[f64],
) -> Result<Vec<Array2<f64>>> {
    let train_feat = frame_features(train_frames, feat)?;
    let eval_feat = frame_features(eval_frames, feat)?;
    let xtr = standardizer.apply(&train_feat.stats.view())?;
    let xev = standardizer.apply(&eval_feat.stats.view())?;
    let params = GaussianParams::new(gamma)?;
    let stats_cross = kernels::gaussian_cross(&xev.view(), &xtr.view(), params)?;
    let h_train = histograms(&train_feat.clouds, hist_edges)?;
    let h_eval = histograms(&eval_feat.clouds, hist_edges)?;
    let shape_cross = kernels::intersection_cross(&h_eval.view(), &h_train.view())?;
    let corr_cross = kernels::correlation_cross(eval_frames, train_frames, feat.max_shift)?;
    Ok(vec![stats_cross, shape_cross, corr_cross])
}

/// Sum base cross blocks for an explicit list of member masks (bit `i` =
/// base kernel `i`).
pub fn compose_cross_for_masks(
    base_cross: &[Array2<f64>],
    masks: &[u32],
) -> Result<Vec<Array2<f64>>> {
    masks
        .iter()
        .map(|&mask| {
            if mask == 0 {
                return Err(Error::Checkpoint("empty kernel subset mask".into()));
            }
            let mut acc: Option<Array2<f64>> = None;
            for (i, c) in base_cross.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    acc = Some(match acc {
                        None => c.clone(),
                        Some(mut a) => {
                            a += c;
                            a
                        }
                    });
                }
            }
            acc.ok_or_else(|| {
                Error::Checkpoint(format!("mask {mask:#b} references no base kernel"))
            })
        })
        .collect()
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"KFCP";
const CHECKPOINT_VERSION: u32 = 1;

/// Trained pipeline state: config snapshot, frozen feature-stage parameters,
/// per-kernel PCA models, the fusion model and the training RNG counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineModel {
    pub feature_params: FeatureParams,
    pub kernel_params: KernelParams,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub train_seed: u64,
    pub variant: Variant,
    pub embedding_dim: usize,
    pub class_count: usize,
    pub standardizer: Standardizer,
    pub gamma: f64,
    pub hist_edges: Vec<f64>,
    /// Subset mask per kernel member used by the variant, in member order.
    pub member_masks: Vec<u32>,
    /// Fitted PCA per member; empty when the variant uses raw Gram columns.
    pub pcas: Vec<PcaModel>,
    pub model: FusionModel,
    /// Position of the training RNG stream after the last update.
    pub rng_word_pos: u128,
}

/// Write a checkpoint: magic, version, payload length, JSON payload and a
/// SHA-256 digest of the payload.
pub fn save_checkpoint(path: &Path, model: &PipelineModel) -> Result<()> {
    let payload =
        serde_json::to_vec(model).map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    let digest = Sha256::digest(&payload);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&payload)?;
    w.write_all(&digest)?;
    w.flush()?;
    Ok(())
}

/// Read and verify a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<PipelineModel> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version} is not supported by this build \
             (expected {CHECKPOINT_VERSION}); re-train or upgrade the tool"
        )));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let len = u64::from_le_bytes(u64buf) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    let mut stored = [0u8; 32];
    r.read_exact(&mut stored)?;
    let digest = Sha256::digest(&payload);
    if digest.as_slice() != stored {
        return Err(Error::Checkpoint(format!(
            "{}: checksum mismatch, file is corrupted",
            path.display()
        )));
    }
    serde_json::from_slice(&payload).map_err(|e| Error::Checkpoint(format!("decode: {e}")))
}

/// Key-value metrics file: deterministic content, no timestamps.
pub fn write_metrics(
    path: &Path,
    metrics: &EvalMetrics,
    extras: &[(&str, String)],
) -> Result<()> {
    let mut out = String::new();
    for (k, v) in extras {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str(&format!("n_test = {}\n", metrics.n_test));
    out.push_str(&format!("balanced_accuracy = {}\n", metrics.balanced_accuracy));
    out.push_str(&format!("overall_accuracy = {}\n", metrics.overall_accuracy));
    for (c, r) in metrics.per_class_recall.iter().enumerate() {
        match r {
            Some(v) => out.push_str(&format!("recall_class_{c} = {v}\n")),
            None => out.push_str(&format!("recall_class_{c} = absent\n")),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-epoch loss/accuracy CSV (plot-ready convergence data).
pub fn write_loss_csv(path: &Path, report: &TrainReport) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_accuracy\n");
    for (e, (l, a)) in report
        .epoch_loss
        .iter()
        .zip(report.epoch_accuracy.iter())
        .enumerate()
    {
        out.push_str(&format!("{e},{l},{a}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Confusion matrix CSV: header `pred_0..`, one row per true class.
pub fn write_confusion_csv(path: &Path, confusion: &Array2<u64>) -> Result<()> {
    let c = confusion.ncols();
    let mut out = String::from("true_class");
    for j in 0..c {
        out.push_str(&format!(",pred_{j}"));
    }
    out.push('\n');
    for (i, row) in confusion.rows().into_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{AblationConfig, AblationInputs, MergeMode, TrainOptions};
    use crate::ingest::split_dataset;
    use crate::net::{AdamParams, TowerConfig};
    use crate::synth::{synthetic_dataset, SynthConfig};

    fn small_synth() -> Dataset {
        synthetic_dataset(&SynthConfig {
            frames_per_class: 10,
            frame_len: 120,
            sampling_rate: 100.0,
            noise: 0.3,
            seed: 5,
        })
    }

    fn small_feat() -> FeatureParams {
        FeatureParams {
            sampling_rate: 100.0,
            tau: 5,
            embed_dim: 8,
            bins: 16,
            max_shift: 20,
        }
    }

    #[test]
    fn prepare_builds_seven_aligned_kernels() {
        let ds = small_synth();
        let split = split_dataset(&ds, 0.8, 3).unwrap();
        let prep = prepare(&ds, &split, &small_feat(), &KernelParams::default()).unwrap();
        assert_eq!(prep.kernel_set.total(), 7);
        assert_eq!(prep.cross.len(), 7);
        let n_train = split.train_indices.len();
        let n_test = split.test_indices.len();
        for m in &prep.kernel_set.members {
            assert_eq!(m.gram.n(), n_train);
        }
        for c in &prep.cross {
            assert_eq!(c.shape(), &[n_test, n_train]);
        }
        assert_eq!(prep.y_train.len(), n_train);
        assert_eq!(prep.class_count, 3);
        assert_eq!(prep.hist_edges.len(), 17);
    }

    #[test]
    fn prepare_is_deterministic() {
        let ds = small_synth();
        let split = split_dataset(&ds, 0.8, 3).unwrap();
        let a = prepare(&ds, &split, &small_feat(), &KernelParams::default()).unwrap();
        let b = prepare(&ds, &split, &small_feat(), &KernelParams::default()).unwrap();
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.hist_edges, b.hist_edges);
        for (ma, mb) in a.kernel_set.members.iter().zip(b.kernel_set.members.iter()) {
            assert_eq!(ma.gram.k, mb.gram.k);
        }
        for (ca, cb) in a.cross.iter().zip(b.cross.iter()) {
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let ds = small_synth();
        let split = split_dataset(&ds, 0.8, 3).unwrap();
        let prep = prepare(&ds, &split, &small_feat(), &KernelParams::default()).unwrap();
        let inputs = AblationInputs {
            kernel_set: &prep.kernel_set,
            cross: &prep.cross,
            y_train: &prep.y_train,
            y_test: &prep.y_test,
            class_count: prep.class_count,
        };
        let cfg = AblationConfig {
            embedding_dim: 8,
            tower: TowerConfig {
                sizes: vec![6, 4],
                dropout_keep: 0.9,
            },
            kernel_keep: 0.6,
            merge: MergeMode::Concat,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
            train: TrainOptions {
                epochs: 2,
                batch_size: 8,
                seed: 7,
                adam: AdamParams::default(),
            },
        };
        let (model, pcas, report) =
            crate::fusion::run_variant(&inputs, &cfg, Variant::Proposed).unwrap();
        let pm = PipelineModel {
            feature_params: small_feat(),
            kernel_params: KernelParams::default(),
            train_fraction: 0.8,
            split_seed: 3,
            train_seed: 7,
            variant: Variant::Proposed,
            embedding_dim: 8,
            class_count: prep.class_count,
            standardizer: prep.standardizer.clone(),
            gamma: prep.gamma,
            hist_edges: prep.hist_edges.clone(),
            member_masks: prep.kernel_set.members.iter().map(|m| m.mask).collect(),
            pcas,
            model,
            rng_word_pos: report.rng_word_pos,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &pm).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.gamma, pm.gamma);
        assert_eq!(loaded.model.fusion.w, pm.model.fusion.w);
        assert_eq!(loaded.rng_word_pos, pm.rng_word_pos);

        // Flip one payload byte: checksum must fail.
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum"), "{msg}"),
            other => panic!("expected checksum error, got {other:?}"),
        }

        // Wrong version: explicit upgrade message.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[mid] ^= 0xff; // restore payload
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn metrics_files_are_deterministic() {
        let metrics = EvalMetrics {
            balanced_accuracy: 0.75,
            overall_accuracy: 0.8,
            per_class_recall: vec![Some(0.5), Some(1.0), None],
            confusion: Array2::zeros((3, 3)),
            n_test: 10,
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.txt");
        let p2 = dir.path().join("m2.txt");
        write_metrics(&p1, &metrics, &[("variant", "proposed".into())]).unwrap();
        write_metrics(&p2, &metrics, &[("variant", "proposed".into())]).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap()
        );
        let text = std::fs::read_to_string(&p1).unwrap();
        assert!(text.contains("recall_class_2 = absent"));
    }
}
