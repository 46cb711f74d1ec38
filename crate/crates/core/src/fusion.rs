//! Kernel-fusion classifier: one representation tower per kernel, kernel
//! dropout at the merge layer, a fused dense + softmax head, joint
//! end-to-end training and evaluation.
//!
//! Kernel dropout removes the *entire* learned representation of randomly
//! chosen kernels for one training batch: each kernel draws an independent
//! Bernoulli(keep) flag, dropped slots contribute zeros to the merge (the
//! fused width never changes) and kept slots are scaled by `1/keep` so the
//! expected pre-activation matches the no-drop forward pass. Inference never
//! drops anything.

use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::embedding;
use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::net::{
    softmax, softmax_xent, AdamParams, AdamState, DenseGrads, DenseLayer, Mode, Tower,
    TowerCache, TowerConfig, TowerGrads,
};

/// How per-kernel representations are merged before the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Concat,
    Sum,
    Average,
}

/// One batch's kernel-dropout draw: `keep[m]` is false when kernel `m`'s
/// representation is removed from the merge for this batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelDropoutMask {
    pub keep: Vec<bool>,
}

impl KernelDropoutMask {
    pub fn all_kept(count: usize) -> Self {
        KernelDropoutMask {
            keep: vec![true; count],
        }
    }
}

/// Draw one kernel-dropout mask: independent Bernoulli(keep_prob) per
/// kernel, redrawn if every kernel came out dropped (a zero merge input
/// would be degenerate).
pub fn sample_kernel_mask(
    count: usize,
    keep_prob: f64,
    rng: &mut ChaCha8Rng,
) -> KernelDropoutMask {
    if keep_prob >= 1.0 {
        return KernelDropoutMask::all_kept(count);
    }
    loop {
        let keep: Vec<bool> = (0..count).map(|_| rng.gen::<f64>() < keep_prob).collect();
        if keep.iter().any(|&k| k) {
            return KernelDropoutMask { keep };
        }
    }
}

/// The full fusion classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionModel {
    pub towers: Vec<Tower>,
    /// Output head: class_count × fused width.
    pub fusion: DenseLayer,
    /// Kernel KEEP probability `p` of the dropout mask.
    pub kernel_keep: f64,
    pub merge: MergeMode,
    pub class_count: usize,
}

#[derive(Debug)]
pub struct FusionCache {
    tower_caches: Vec<TowerCache>,
    mask: KernelDropoutMask,
    fused: Array2<f64>,
}

#[derive(Debug)]
pub struct FusionGrads {
    pub towers: Vec<TowerGrads>,
    pub fusion: DenseGrads,
}

impl FusionModel {
    /// Build towers (one per kernel input, possibly of different widths) and
    /// the fusion head.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input_dims: &[usize],
        class_count: usize,
        tower_config: &TowerConfig,
        kernel_keep: f64,
        merge: MergeMode,
        bn_momentum: f64,
        bn_epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dims.is_empty() {
            return Err(Error::Config("fusion model needs at least one kernel".into()));
        }
        if class_count < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        if !(kernel_keep > 0.0 && kernel_keep <= 1.0) {
            return Err(Error::Config(format!(
                "kernel keep probability must be in (0,1], got {kernel_keep}"
            )));
        }
        tower_config.validate()?;
        let towers: Vec<Tower> = input_dims
            .iter()
            .map(|&d| Tower::new(d, tower_config, bn_momentum, bn_epsilon, rng))
            .collect();
        let rep = tower_config.representation_dim();
        let fused_width = match merge {
            MergeMode::Concat => rep * towers.len(),
            MergeMode::Sum | MergeMode::Average => rep,
        };
        let fusion = DenseLayer::new(fused_width, class_count, rng);
        Ok(FusionModel {
            towers,
            fusion,
            kernel_keep,
            merge,
            class_count,
        })
    }

    pub fn kernel_count(&self) -> usize {
        self.towers.len()
    }

    pub fn representation_dim(&self) -> usize {
        self.towers[0].output_dim()
    }

    pub fn fused_width(&self) -> usize {
        self.fusion.input_dim()
    }

    fn check_blocks(&self, blocks: &[ArrayView2<f64>]) -> Result<usize> {
        if blocks.len() != self.kernel_count() {
            return Err(Error::Dimension(format!(
                "{} embedding blocks for {} towers",
                blocks.len(),
                self.kernel_count()
            )));
        }
        let batch = blocks.first().map(|b| b.nrows()).unwrap_or(0);
        for (m, b) in blocks.iter().enumerate() {
            if b.nrows() != batch {
                return Err(Error::Dimension(format!(
                    "kernel {m} has batch {} while kernel 0 has {batch}",
                    b.nrows()
                )));
            }
        }
        Ok(batch)
    }

    /// Merge per-kernel representations under a dropout mask. Kept slots are
    /// scaled by `1/keep` when the mask came from a Bernoulli draw
    /// (`scaled = true`); an all-ones inference merge uses scale 1.
    fn merge_representations(
        &self,
        reps: &[Array2<f64>],
        mask: &KernelDropoutMask,
        scaled: bool,
    ) -> Array2<f64> {
        let batch = reps[0].nrows();
        let rep = self.representation_dim();
        let scale = if scaled { 1.0 / self.kernel_keep } else { 1.0 };
        match self.merge {
            MergeMode::Concat => {
                let mut fused = Array2::zeros((batch, rep * reps.len()));
                for (m, r) in reps.iter().enumerate() {
                    if mask.keep[m] {
                        let mut slot = fused.slice_mut(s![.., m * rep..(m + 1) * rep]);
                        slot.assign(r);
                        if scale != 1.0 {
                            slot.mapv_inplace(|v| v * scale);
                        }
                    }
                }
                fused
            }
            MergeMode::Sum | MergeMode::Average => {
                let mut fused = Array2::zeros((batch, rep));
                for (m, r) in reps.iter().enumerate() {
                    if mask.keep[m] {
                        fused.scaled_add(scale, r);
                    }
                }
                if self.merge == MergeMode::Average {
                    fused.mapv_inplace(|v| v / reps.len() as f64);
                }
                fused
            }
        }
    }

    /// Training forward pass: runs every tower in train mode, samples a
    /// kernel-dropout mask for the batch and returns fused logits plus the
    /// cache needed by [`FusionModel::backward`].
    pub fn forward_train(
        &mut self,
        blocks: &[ArrayView2<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, FusionCache)> {
        self.check_blocks(blocks)?;
        let mut reps = Vec::with_capacity(self.towers.len());
        let mut caches = Vec::with_capacity(self.towers.len());
        for (m, tower) in self.towers.iter_mut().enumerate() {
            let (r, cache) = tower
                .forward_train(&blocks[m], rng)
                .map_err(|e| annotate_kernel(e, m))?;
            reps.push(r);
            caches.push(cache);
        }
        let mask = sample_kernel_mask(self.towers.len(), self.kernel_keep, rng);
        let fused = self.merge_representations(&reps, &mask, true);
        let logits = self.fusion.forward(&fused.view());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite fusion logits".into()));
        }
        Ok((
            logits,
            FusionCache {
                tower_caches: caches,
                mask,
                fused,
            },
        ))
    }

    /// Deterministic inference logits: running BN statistics, no dropout of
    /// either kind.
    pub fn forward_infer_logits(&self, blocks: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        self.fused_pre_activation_infer(blocks, None)
    }

    /// Inference-mode fused pre-activation with an optional explicit kernel
    /// mask (inverted-scaled like training). Used for dropout diagnostics.
    pub fn fused_pre_activation_infer(
        &self,
        blocks: &[ArrayView2<f64>],
        mask: Option<&KernelDropoutMask>,
    ) -> Result<Array2<f64>> {
        self.check_blocks(blocks)?;
        let mut reps = Vec::with_capacity(self.towers.len());
        for (m, tower) in self.towers.iter().enumerate() {
            reps.push(
                tower
                    .forward_infer(&blocks[m])
                    .map_err(|e| annotate_kernel(e, m))?,
            );
        }
        let all = KernelDropoutMask::all_kept(self.towers.len());
        let (mask, scaled) = match mask {
            Some(m) => (m, true),
            None => (&all, false),
        };
        let fused = self.merge_representations(&reps, mask, scaled);
        Ok(self.fusion.forward(&fused.view()))
    }

    /// Gradients of all towers and the fusion head for one training batch.
    pub fn backward(&self, cache: &FusionCache, dlogits: &ArrayView2<f64>) -> FusionGrads {
        let (fusion_grads, dfused) = self.fusion.backward(&cache.fused.view(), dlogits);
        let rep = self.representation_dim();
        let scale = 1.0 / self.kernel_keep;
        let mut tower_grads = Vec::with_capacity(self.towers.len());
        for (m, tower) in self.towers.iter().enumerate() {
            let dr = match self.merge {
                MergeMode::Concat => {
                    let mut dr = dfused.slice(s![.., m * rep..(m + 1) * rep]).to_owned();
                    let f = if cache.mask.keep[m] { scale } else { 0.0 };
                    dr.mapv_inplace(|v| v * f);
                    dr
                }
                MergeMode::Sum | MergeMode::Average => {
                    let mut f = if cache.mask.keep[m] { scale } else { 0.0 };
                    if self.merge == MergeMode::Average {
                        f /= self.towers.len() as f64;
                    }
                    dfused.mapv(|v| v * f)
                }
            };
            let (g, _) = tower.backward(&cache.tower_caches[m], &dr.view());
            tower_grads.push(g);
        }
        FusionGrads {
            towers: tower_grads,
            fusion: fusion_grads,
        }
    }

    /// Trainable parameter slices: towers in kernel order, then the fusion
    /// head weights and bias.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for t in &mut self.towers {
            out.extend(t.param_slices_mut());
        }
        out.push(self.fusion.w.as_slice_mut().expect("contiguous"));
        out.push(self.fusion.b.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn param_lens(&mut self) -> Vec<usize> {
        self.param_slices_mut().iter().map(|s| s.len()).collect()
    }
}

impl FusionGrads {
    pub fn grad_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for t in &self.towers {
            out.extend(t.grad_slices());
        }
        out.push(self.fusion.dw.as_slice().expect("contiguous"));
        out.push(self.fusion.db.as_slice().expect("contiguous"));
        out
    }
}

fn annotate_kernel(e: Error, kernel: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("kernel {kernel}: {msg}")),
        other => other,
    }
}

/// Spec-level forward entry point: class probabilities for a batch.
pub fn fusion_forward(
    model: &mut FusionModel,
    blocks: &[ArrayView2<f64>],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let logits = match mode {
        Mode::Train => model.forward_train(blocks, rng)?.0,
        Mode::Infer => model.forward_infer_logits(blocks)?,
    };
    Ok(softmax(&logits.view()))
}

/// Classification metrics on a labeled set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Unweighted mean of per-class recall over classes present in the set.
    pub balanced_accuracy: f64,
    pub overall_accuracy: f64,
    /// `None` for classes absent from the evaluation set.
    pub per_class_recall: Vec<Option<f64>>,
    /// Rows: true class, columns: predicted class.
    pub confusion: Array2<u64>,
    pub n_test: usize,
}

/// Training options for [`train`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamParams,
}

/// Per-run training report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean train loss per epoch (sample-weighted over batches).
    pub epoch_loss: Vec<f64>,
    /// Train accuracy per epoch, measured on the train-mode forward outputs.
    pub epoch_accuracy: Vec<f64>,
    /// Wall-clock seconds; reporting only, never written into metrics files.
    pub wall_seconds: f64,
    /// Final position of the training RNG stream (checkpointed so a resumed
    /// stream can continue where training stopped).
    pub rng_word_pos: u128,
    pub test: EvalMetrics,
}

/// Jointly train all towers and the fusion head with mini-batch Adam.
///
/// Batches are re-shuffled every epoch from the seeded RNG; kernel dropout
/// masks are redrawn per batch. The same seed reproduces the exact loss
/// curve and final parameters.
pub fn train(
    model: &mut FusionModel,
    train_blocks: &[Array2<f64>],
    y_train: &[usize],
    test_blocks: &[Array2<f64>],
    y_test: &[usize],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let started = Instant::now();
    let views: Vec<ArrayView2<f64>> = train_blocks.iter().map(|b| b.view()).collect();
    let n = model.check_blocks(&views)?;
    if n != y_train.len() {
        return Err(Error::Dimension(format!(
            "{n} training rows vs {} labels",
            y_train.len()
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lens = model.param_lens();
    let mut adam = AdamState::new(&lens);

    let mut epoch_loss = Vec::with_capacity(opts.epochs);
    let mut epoch_accuracy = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..opts.epochs {
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(opts.batch_size).enumerate() {
            let batch_blocks: Vec<Array2<f64>> = train_blocks
                .iter()
                .map(|b| b.select(Axis(0), chunk))
                .collect();
            let batch_views: Vec<ArrayView2<f64>> =
                batch_blocks.iter().map(|b| b.view()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let (logits, cache) = model.forward_train(&batch_views, &mut rng)?;
            let (loss, dlogits) = softmax_xent(&logits.view(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch} batch {batch_idx}: loss {loss}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(&logits.view(), &labels);
            let grads = model.backward(&cache, &dlogits.view());
            adam.update(model.param_slices_mut(), grads.grad_slices(), &opts.adam);
        }
        epoch_loss.push(loss_sum / n as f64);
        epoch_accuracy.push(correct as f64 / n as f64);
    }

    let test_views: Vec<ArrayView2<f64>> = test_blocks.iter().map(|b| b.view()).collect();
    let test = evaluate_views(model, &test_views, y_test)?;
    Ok(TrainReport {
        epoch_loss,
        epoch_accuracy,
        wall_seconds: started.elapsed().as_secs_f64(),
        rng_word_pos: rng.get_word_pos(),
        test,
    })
}

fn count_correct(logits: &ArrayView2<f64>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels.iter())
        .filter(|(row, &y)| argmax(row.as_slice().unwrap()) == y)
        .count()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode evaluation: per-class recall, their unweighted mean
/// (balanced accuracy), overall accuracy and the confusion matrix. Classes
/// absent from the evaluation set are excluded from the mean and flagged.
pub fn evaluate(
    model: &FusionModel,
    blocks: &[Array2<f64>],
    labels: &[usize],
) -> Result<EvalMetrics> {
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    evaluate_views(model, &views, labels)
}

fn evaluate_views(
    model: &FusionModel,
    blocks: &[ArrayView2<f64>],
    labels: &[usize],
) -> Result<EvalMetrics> {
    let c = model.class_count;
    let n = model.check_blocks(blocks)?;
    if n != labels.len() {
        return Err(Error::Dimension(format!(
            "{n} evaluation rows vs {} labels",
            labels.len()
        )));
    }
    let mut confusion = Array2::<u64>::zeros((c, c));
    if n > 0 {
        let logits = model.forward_infer_logits(blocks)?;
        for (row, &y) in logits.rows().into_iter().zip(labels.iter()) {
            if y >= c {
                return Err(Error::Data(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            confusion[[y, argmax(row.as_slice().unwrap())]] += 1;
        }
    }
    let mut per_class_recall = Vec::with_capacity(c);
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    let mut correct = 0u64;
    for class in 0..c {
        let row_total: u64 = confusion.row(class).sum();
        correct += confusion[[class, class]];
        if row_total == 0 {
            log::warn!("class {class} absent from evaluation set; excluded from balanced accuracy");
            per_class_recall.push(None);
        } else {
            let r = confusion[[class, class]] as f64 / row_total as f64;
            per_class_recall.push(Some(r));
            recall_sum += r;
            present += 1;
        }
    }
    Ok(EvalMetrics {
        balanced_accuracy: if present > 0 {
            recall_sum / present as f64
        } else {
            0.0
        },
        overall_accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        per_class_recall,
        confusion,
        n_test: n,
    })
}

/// Everything a single ablation variant needs to train and score.
#[derive(Debug, Clone)]
pub struct AblationInputs<'a> {
    /// Train-side kernel set (all `2^M − 1` members).
    pub kernel_set: &'a KernelSet,
    /// Rectangular test×train blocks, one per member, in member order.
    pub cross: &'a [Array2<f64>],
    pub y_train: &'a [usize],
    pub y_test: &'a [usize],
    pub class_count: usize,
}

/// Hyperparameters shared by every ablation variant.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub embedding_dim: usize,
    pub tower: TowerConfig,
    pub kernel_keep: f64,
    pub merge: MergeMode,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub train: TrainOptions,
}

/// One scored row of the comparison table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub metrics: EvalMetrics,
}

/// The comparison table: per-base single-kernel rows plus the four
/// architecture variants.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub singles: Vec<AblationRow>,
    pub variants: Vec<AblationRow>,
}

impl std::fmt::Display for AblationTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<42} {:>10}", "input kernel", "balanced %")?;
        for row in &self.singles {
            writeln!(
                f,
                "{:<42} {:>10.1}",
                row.name,
                100.0 * row.metrics.balanced_accuracy
            )?;
        }
        writeln!(f, "{:<42} {:>10}", "architecture", "balanced %")?;
        for row in &self.variants {
            writeln!(
                f,
                "{:<42} {:>10.1}",
                row.name,
                100.0 * row.metrics.balanced_accuracy
            )?;
        }
        Ok(())
    }
}

/// Which pipeline variant to assemble: `A` trains towers on raw Gram
/// columns of the base kernels; `B` adds the dense PCA embedding; `C` adds
/// composition kernels; `Proposed` adds kernel dropout; `Single(i)` runs
/// base kernel `i` alone (PCA embedding, no kernel dropout); `SingleSum`
/// runs the all-bases sum kernel alone (the uniform-combination stand-in).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    Proposed,
    Single(usize),
    SingleSum,
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::A => "(a) standard feature fusion".into(),
            Variant::B => "(b) (a) + dense embedding".into(),
            Variant::C => "(c) (b) + composition kernels".into(),
            Variant::Proposed => "proposed: (c) + kernel dropout".into(),
            Variant::Single(i) => format!("single kernel {}", i + 1),
            Variant::SingleSum => "single all-sum kernel (uniform stand-in)".into(),
        }
    }

    /// Member indices of the kernel set this variant consumes. Members are
    /// ordered singletons-first, so bases are `0..M`; the all-bases sum is
    /// the last member.
    pub fn member_indices(&self, set: &KernelSet) -> Vec<usize> {
        let m = set.base_count;
        match self {
            Variant::A | Variant::B => (0..m).collect(),
            Variant::C | Variant::Proposed => (0..set.total()).collect(),
            Variant::Single(i) => vec![*i],
            Variant::SingleSum => vec![set.total() - 1],
        }
    }

    pub fn uses_dense_embedding(&self) -> bool {
        !matches!(self, Variant::A)
    }

    pub fn kernel_keep(&self, configured: f64) -> f64 {
        match self {
            Variant::Proposed => configured,
            _ => 1.0,
        }
    }
}

/// Assemble, train and score one variant. Returns the trained model, the
/// fitted per-kernel PCA models (empty in raw-column mode) and the report.
pub fn run_variant(
    inputs: &AblationInputs<'_>,
    cfg: &AblationConfig,
    variant: Variant,
) -> Result<(FusionModel, Vec<crate::linalg::PcaModel>, TrainReport)> {
    let members = variant.member_indices(inputs.kernel_set);
    let mut train_blocks = Vec::with_capacity(members.len());
    let mut test_blocks = Vec::with_capacity(members.len());
    let mut pcas = Vec::new();
    for &mi in &members {
        let member = &inputs.kernel_set.members[mi];
        let cross = &inputs.cross[mi];
        if variant.uses_dense_embedding() {
            let (ztrain, pca) = embedding::embed_train(&member.gram, cfg.embedding_dim, member.mask)?;
            let ztest = embedding::embed_test(&cross.view(), &pca, member.mask)?;
            train_blocks.push(ztrain.z);
            test_blocks.push(ztest.z);
            pcas.push(pca);
        } else {
            // Raw Gram columns: the embedding of train sample j is column j,
            // width N_train; a test sample's row of similarities likewise.
            train_blocks.push(member.gram.k.clone());
            test_blocks.push(cross.clone());
        }
    }
    let input_dims: Vec<usize> = train_blocks.iter().map(|b| b.ncols()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut model = FusionModel::new(
        &input_dims,
        inputs.class_count,
        &cfg.tower,
        variant.kernel_keep(cfg.kernel_keep),
        cfg.merge,
        cfg.bn_momentum,
        cfg.bn_epsilon,
        &mut rng,
    )?;
    let report = train(
        &mut model,
        &train_blocks,
        inputs.y_train,
        &test_blocks,
        inputs.y_test,
        &cfg.train,
    )?;
    Ok((model, pcas, report))
}

/// Run the full comparison: every base kernel alone, then variants (a), (b),
/// (c) and the proposed architecture, all on the same split and seed.
pub fn run_ablation(inputs: &AblationInputs<'_>, cfg: &AblationConfig) -> Result<AblationTable> {
    let mut singles = Vec::with_capacity(inputs.kernel_set.base_count);
    for base in 0..inputs.kernel_set.base_count {
        let variant = Variant::Single(base);
        let kind = inputs.kernel_set.members[base].gram.kind;
        let (_, _, report) = run_variant(inputs, cfg, variant)?;
        singles.push(AblationRow {
            name: format!("{} (single)", kind.name()),
            metrics: report.test,
        });
    }
    let mut variants = Vec::with_capacity(4);
    for variant in [Variant::A, Variant::B, Variant::C, Variant::Proposed] {
        let (_, _, report) = run_variant(inputs, cfg, variant)?;
        variants.push(AblationRow {
            name: variant.label(),
            metrics: report.test,
        });
    }
    Ok(AblationTable { singles, variants })
}
