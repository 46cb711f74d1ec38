//! Subcommand implementations. Every command is deterministic given its
//! config and seed; all timing goes to the log, never into output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kfusion_core::embedding;
use kfusion_core::features::{self, FeatureParams};
use kfusion_core::fusion::{
    run_ablation, run_variant, AblationConfig, AblationInputs, TrainOptions, Variant,
};
use kfusion_core::ingest::{load_dataset, split_dataset, Dataset, Split};
use kfusion_core::kernels::save_gram;
use kfusion_core::linalg;
use kfusion_core::pipeline::{
    self, compose_cross_for_masks, cross_blocks_for_eval, load_checkpoint, prepare,
    save_checkpoint, write_confusion_csv, write_loss_csv, write_metrics, PipelineModel,
    PreparedKernels,
};
use kfusion_core::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;

fn load_and_split(cfg: &RunConfig) -> Result<(Dataset, Split)> {
    let ds = load_dataset(cfg.data_path()?)?;
    let split = split_dataset(&ds, cfg.train_fraction, cfg.seed)?;
    Ok((ds, split))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// `featurize`: write per-frame statistics features, shape histograms and
/// the frozen histogram bin edges.
pub fn cmd_featurize(cfg: &RunConfig) -> Result<()> {
    let (ds, split) = load_and_split(cfg)?;
    let params = cfg.feature_params();
    ensure_out_dir(&cfg.out_dir)?;

    let mut stats_csv = String::from("id,label");
    for a in 0..ds.axis_count {
        for name in features::STAT_NAMES {
            let _ = write!(stats_csv, ",ax{a}_{name}");
        }
    }
    stats_csv.push_str(",mag_mean\n");

    let mut clouds = Vec::with_capacity(ds.len());
    for f in &ds.frames {
        let stats = features::stat_features(f, params.sampling_rate)?;
        let _ = write!(stats_csv, "{},{}", f.id, f.label);
        for v in &stats.values {
            let _ = write!(stats_csv, ",{v}");
        }
        stats_csv.push('\n');
        let emb = features::delay_embed(&f.magnitude_series(), params.tau, params.embed_dim)?;
        clouds.push(features::project_3d(&emb)?);
    }
    std::fs::write(cfg.out_dir.join("stat_features.csv"), stats_csv)?;

    // Bin edges come from the training split only.
    let train_clouds: Vec<_> = split
        .train_indices
        .iter()
        .map(|&i| clouds[i].clone())
        .collect();
    let edges = features::global_bin_edges(&train_clouds, params.bins)?;
    let edge_line: Vec<String> = edges.iter().map(|e| e.to_string()).collect();
    std::fs::write(
        cfg.out_dir.join("histogram_edges.csv"),
        edge_line.join(",") + "\n",
    )?;

    let mut hist_csv = String::from("id,label");
    for b in 0..params.bins {
        let _ = write!(hist_csv, ",h_{b}");
    }
    hist_csv.push('\n');
    for (f, cloud) in ds.frames.iter().zip(clouds.iter()) {
        let h = features::shape_histogram(&cloud.view(), &edges)?;
        let _ = write!(hist_csv, "{},{}", f.id, f.label);
        for v in &h.h {
            let _ = write!(hist_csv, ",{v}");
        }
        hist_csv.push('\n');
    }
    std::fs::write(cfg.out_dir.join("shape_histograms.csv"), hist_csv)?;
    log::info!(
        "featurize: {} frames -> {}",
        ds.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ManifestMember {
    file: String,
    mask: u32,
    /// 1-based base indices of the subset.
    subset: Vec<usize>,
    kind: &'static str,
    psd_checked: bool,
}

#[derive(Serialize)]
struct Manifest {
    version: u32,
    n_train: usize,
    train_frame_ids: Vec<u64>,
    members: Vec<ManifestMember>,
}

/// `kernels`: write the train-side Gram files for all base and composition
/// kernels plus a manifest of subset masks.
pub fn cmd_kernels(cfg: &RunConfig, csv_debug: bool) -> Result<()> {
    let (ds, split) = load_and_split(cfg)?;
    let prep = prepare(&ds, &split, &cfg.feature_params(), &cfg.kernel_params())?;
    ensure_out_dir(&cfg.out_dir)?;

    let mut members = Vec::with_capacity(prep.kernel_set.total());
    for m in &prep.kernel_set.members {
        let file = format!("kernel_{}.gram", m.label());
        save_gram(&cfg.out_dir.join(&file), &m.gram, m.mask)?;
        if csv_debug {
            kfusion_core::kernels::gram_to_csv(
                &cfg.out_dir.join(format!("kernel_{}.csv", m.label())),
                &m.gram.k.view(),
            )?;
        }
        members.push(ManifestMember {
            file,
            mask: m.mask,
            subset: m.subset.iter().map(|i| i + 1).collect(),
            kind: m.gram.kind.name(),
            psd_checked: m.gram.psd_checked,
        });
    }
    let manifest = Manifest {
        version: 1,
        n_train: prep.train_ids.len(),
        train_frame_ids: prep.train_ids.clone(),
        members,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest: {e}")))?;
    std::fs::write(cfg.out_dir.join("kernels.json"), json + "\n")?;
    log::info!(
        "kernels: {} Gram files -> {}",
        prep.kernel_set.total(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn parse_variant(s: &str) -> Result<Option<Variant>> {
    Ok(Some(match s {
        "a" => Variant::A,
        "b" => Variant::B,
        "c" => Variant::C,
        "proposed" => Variant::Proposed,
        "all" => return Ok(None),
        "single:statistics" | "single:1" => Variant::Single(0),
        "single:shape" | "single:2" => Variant::Single(1),
        "single:correlation" | "single:3" => Variant::Single(2),
        "single:sum" => Variant::SingleSum,
        other => {
            return Err(Error::Config(format!(
                "unknown variant {other:?}; expected a|b|c|proposed|all|single:<statistics|shape|correlation|sum>"
            )))
        }
    }))
}

fn ablation_config(cfg: &RunConfig) -> AblationConfig {
    AblationConfig {
        embedding_dim: cfg.embedding.dim,
        tower: cfg.tower_config(),
        kernel_keep: cfg.kernel_keep(),
        merge: cfg.fusion.merge,
        bn_momentum: cfg.train.bn_momentum,
        bn_epsilon: cfg.train.bn_epsilon,
        train: TrainOptions {
            epochs: cfg.train.epochs,
            batch_size: cfg.train.batch_size,
            seed: cfg.seed,
            adam: cfg.adam_params(),
        },
    }
}

fn inputs<'a>(prep: &'a PreparedKernels) -> AblationInputs<'a> {
    AblationInputs {
        kernel_set: &prep.kernel_set,
        cross: &prep.cross,
        y_train: &prep.y_train,
        y_test: &prep.y_test,
        class_count: prep.class_count,
    }
}

/// `train`: run one variant (or the full ablation) and write checkpoint,
/// metrics, loss curve and confusion matrix.
pub fn cmd_train(cfg: &RunConfig, variant: Option<Variant>, dump_embeddings: bool) -> Result<()> {
    let (ds, split) = load_and_split(cfg)?;
    let prep = prepare(&ds, &split, &cfg.feature_params(), &cfg.kernel_params())?;
    ensure_out_dir(&cfg.out_dir)?;
    let acfg = ablation_config(cfg);

    let Some(variant) = variant else {
        let table = run_ablation(&inputs(&prep), &acfg)?;
        let rendered = table.to_string();
        std::fs::write(cfg.out_dir.join("ablation.txt"), &rendered)?;
        print!("{rendered}");
        return Ok(());
    };

    let (model, pcas, report) = run_variant(&inputs(&prep), &acfg, variant)?;
    log::info!(
        "trained {} in {:.1}s, balanced test accuracy {:.4}",
        variant.label(),
        report.wall_seconds,
        report.test.balanced_accuracy
    );

    let member_masks: Vec<u32> = variant
        .member_indices(&prep.kernel_set)
        .iter()
        .map(|&i| prep.kernel_set.members[i].mask)
        .collect();

    if dump_embeddings {
        for (slot, &mi) in variant.member_indices(&prep.kernel_set).iter().enumerate() {
            let member = &prep.kernel_set.members[mi];
            let emb = if variant.uses_dense_embedding() {
                embedding::EmbeddingMatrix {
                    z: linalg::pca_transform(&pcas[slot], &member.gram.k.view())?,
                    kernel_mask: member.mask,
                }
            } else {
                embedding::EmbeddingMatrix {
                    z: member.gram.k.clone(),
                    kernel_mask: member.mask,
                }
            };
            embedding::save_embedding(
                &cfg.out_dir.join(format!("embedding_{}.emb", member.label())),
                &emb,
            )?;
        }
    }

    let pm = PipelineModel {
        feature_params: cfg.feature_params(),
        kernel_params: cfg.kernel_params(),
        train_fraction: cfg.train_fraction,
        split_seed: cfg.seed,
        train_seed: cfg.seed,
        variant,
        embedding_dim: cfg.embedding.dim,
        class_count: prep.class_count,
        standardizer: prep.standardizer.clone(),
        gamma: prep.gamma,
        hist_edges: prep.hist_edges.clone(),
        member_masks,
        pcas,
        model,
        rng_word_pos: report.rng_word_pos,
    };
    save_checkpoint(&cfg.out_dir.join("checkpoint.ckpt"), &pm)?;
    write_metrics(
        &cfg.out_dir.join("metrics.txt"),
        &report.test,
        &[
            ("variant", format!("{:?}", variant)),
            ("seed", cfg.seed.to_string()),
            ("n_train", prep.y_train.len().to_string()),
            ("gamma", prep.gamma.to_string()),
            ("epochs", cfg.train.epochs.to_string()),
        ],
    )?;
    write_loss_csv(&cfg.out_dir.join("loss.csv"), &report)?;
    write_confusion_csv(&cfg.out_dir.join("confusion.csv"), &report.test.confusion)?;
    Ok(())
}

/// `eval`: inference-only evaluation of a checkpoint against a frame file.
/// By default the stored split seed selects the held-out test side; `full`
/// evaluates every frame in the file.
pub fn cmd_eval(checkpoint: &Path, data: &Path, out_dir: &PathBuf, full: bool) -> Result<()> {
    let pm = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    ensure_out_dir(out_dir)?;

    if ds.is_empty() {
        // Graceful zero-row report.
        let metrics = kfusion_core::fusion::EvalMetrics {
            balanced_accuracy: 0.0,
            overall_accuracy: 0.0,
            per_class_recall: vec![None; pm.class_count],
            confusion: ndarray::Array2::zeros((pm.class_count, pm.class_count)),
            n_test: 0,
        };
        write_metrics(
            &out_dir.join("metrics.txt"),
            &metrics,
            &[("variant", format!("{:?}", pm.variant))],
        )?;
        log::warn!("eval: dataset {} has no frames", data.display());
        return Ok(());
    }

    let split = split_dataset(&ds, pm.train_fraction, pm.split_seed)?;
    let train_frames = ds.select(&split.train_indices);
    let (eval_frames, y_eval): (Vec<_>, Vec<usize>) = if full {
        (
            ds.frames.iter().collect(),
            ds.frames.iter().map(|f| f.label).collect(),
        )
    } else {
        let frames = ds.select(&split.test_indices);
        let labels = frames.iter().map(|f| f.label).collect();
        (frames, labels)
    };

    let base_cross = cross_blocks_for_eval(
        &train_frames,
        &eval_frames,
        &pm.feature_params,
        &pm.standardizer,
        pm.gamma,
        &pm.hist_edges,
    )?;
    let composed = compose_cross_for_masks(&base_cross, &pm.member_masks)?;
    let blocks: Vec<ndarray::Array2<f64>> = if pm.variant.uses_dense_embedding() {
        composed
            .iter()
            .zip(pm.pcas.iter())
            .map(|(c, pca)| linalg::pca_transform(pca, &c.view()))
            .collect::<Result<_>>()?
    } else {
        composed
    };

    let metrics = kfusion_core::fusion::evaluate(&pm.model, &blocks, &y_eval)?;
    write_metrics(
        &out_dir.join("metrics.txt"),
        &metrics,
        &[
            ("variant", format!("{:?}", pm.variant)),
            ("seed", pm.split_seed.to_string()),
            ("n_train", split.train_indices.len().to_string()),
            ("gamma", pm.gamma.to_string()),
        ],
    )?;
    write_confusion_csv(&out_dir.join("confusion.csv"), &metrics.confusion)?;
    log::info!(
        "eval: balanced accuracy {:.4} on {} frames",
        metrics.balanced_accuracy,
        metrics.n_test
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_strings_parse() {
        assert_eq!(parse_variant("a").unwrap(), Some(Variant::A));
        assert_eq!(parse_variant("proposed").unwrap(), Some(Variant::Proposed));
        assert_eq!(parse_variant("all").unwrap(), None);
        assert_eq!(
            parse_variant("single:shape").unwrap(),
            Some(Variant::Single(1))
        );
        assert_eq!(parse_variant("single:sum").unwrap(), Some(Variant::SingleSum));
        assert!(parse_variant("bogus").is_err());
    }
}
