//! The tree-of-concepts predictor: a trainable concept extractor mapping raw
//! features to a distribution over the frozen tree's leaf concepts, a linear
//! label head on top of that distribution, the combined two-term objective,
//! and the slice-level continual training loop with replay mixing.
//!
//! The tree is held by shared reference and never refit here; leaf routing
//! supplies free concept supervision for current and replayed samples alike.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::metrics::{self, ConceptAudit, MetricTag};
use crate::nn::{self, AdamHyper, AdamState, MlpParams, Mode, NnError, Targets, TrainControl};
use crate::replay::ReplayBuffer;
use crate::seed;
use crate::tabular::Slice;
use crate::tree::FrozenTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConceptMode {
    /// Head consumes the full concept distribution (default).
    #[default]
    Soft,
    /// Head consumes the one-hot of the top predicted concept.
    Hard,
}

#[derive(Debug, Clone)]
pub struct TocModel {
    pub concept_net: MlpParams,
    pub head: MlpParams,
    pub tree: Arc<FrozenTree>,
    pub lambda: f64,
    pub concept_mode: ConceptMode,
    /// Cleared by the no-concept-loss ablation: the concept term is still
    /// measured for reporting but contributes no gradient.
    pub concept_loss_enabled: bool,
}

/// Architecture constants from the experimental setting.
pub const HIDDEN_DIMS: [usize; 2] = [128, 64];
pub const DROPOUT: f64 = 0.1;

/// Build the predictor for a frozen tree: concept net
/// `d_enc -> 128 -> 64 -> L`, linear head `L -> K`.
pub fn build_toc(tree: Arc<FrozenTree>, d_enc: usize, n_classes: usize, lambda: f64, seed_value: u64) -> Result<TocModel, NnError> {
    TocModel::with_architecture(tree, d_enc, n_classes, lambda, &HIDDEN_DIMS, DROPOUT, seed_value)
}

impl TocModel {
    pub fn with_architecture(
        tree: Arc<FrozenTree>,
        d_enc: usize,
        n_classes: usize,
        lambda: f64,
        hidden: &[usize],
        dropout: f64,
        seed_value: u64,
    ) -> Result<TocModel, NnError> {
        if d_enc == 0 || n_classes == 0 {
            return Err(NnError::InvalidDims("d_enc and n_classes must be >= 1".into()));
        }
        if lambda < 0.0 {
            return Err(NnError::InvalidDims(format!("lambda {lambda} must be nonnegative")));
        }
        let mut dims = vec![d_enc];
        dims.extend_from_slice(hidden);
        dims.push(tree.n_leaves());
        let concept_net = nn::init_mlp(&dims, dropout, seed::mix(&[seed_value, 101]))?;
        let head = nn::init_mlp(&[tree.n_leaves(), n_classes], 0.0, seed::mix(&[seed_value, 202]))?;
        Ok(TocModel {
            concept_net,
            head,
            tree,
            lambda,
            concept_mode: ConceptMode::Soft,
            concept_loss_enabled: true,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.tree.n_leaves()
    }

    pub fn n_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// Concept distribution rows (softmax over concept-net logits).
    pub fn concept_forward(&self, x: &Mat) -> Result<Mat, NnError> {
        nn::predict_proba(&self.concept_net, x)
    }

    /// Label distribution from a concept matrix. In hard mode the head sees
    /// the one-hot of the argmax concept, so the output depends on the
    /// distribution only through its argmax.
    pub fn label_forward(&self, concept_probs: &Mat) -> Result<Mat, NnError> {
        let input = match self.concept_mode {
            ConceptMode::Soft => concept_probs.clone(),
            ConceptMode::Hard => one_hot_rows(&metrics::argmax_rows(concept_probs), concept_probs.cols()),
        };
        nn::predict_proba(&self.head, &input)
    }

    /// End-to-end class probabilities.
    pub fn predict_scores(&self, x: &Mat) -> Result<Mat, NnError> {
        let c = self.concept_forward(x)?;
        self.label_forward(&c)
    }

    /// Head output when concepts are taken from the tree instead of the
    /// concept net (the reference pathway of the fidelity gap).
    pub fn predict_scores_tree_concepts(&self, x: &Mat) -> Result<Mat, NnError> {
        let z = self.tree.route_batch(x).map_err(|_| NnError::WidthMismatch {
            expected: self.tree.n_features(),
            got: x.cols(),
        })?;
        let hard = one_hot_rows(&z, self.tree.n_leaves());
        nn::predict_proba(&self.head, &hard)
    }

    /// Concept-consistency audit over a labeled pool.
    pub fn audit(&self, x: &Mat, y: &[usize], metric: MetricTag, tau: f64, step: usize) -> Result<ConceptAudit, NnError> {
        let z = self.tree.route_batch(x).map_err(|_| NnError::WidthMismatch {
            expected: self.tree.n_features(),
            got: x.cols(),
        })?;
        let c_hat = self.concept_forward(x)?;
        let z_hat = metrics::argmax_rows(&c_hat);
        let node_agreement = metrics::node_agreement(&z, &z_hat).unwrap_or(0.0);
        let soft = self.label_forward(&c_hat)?;
        let hard = nn::predict_proba(&self.head, &one_hot_rows(&z, self.tree.n_leaves()))?;
        let rule_fidelity_gap = metrics::rule_fidelity_gap(metric, y, &soft, &hard).unwrap_or(f64::NAN);
        let (contradiction, n_confident) = metrics::high_conf_contradiction(&c_hat, &z, tau);
        Ok(ConceptAudit {
            step,
            node_agreement,
            rule_fidelity_gap,
            high_conf_contradiction: contradiction,
            n_confident,
            tau,
            n_samples: y.len(),
        })
    }

    /// Concept-confusion counts: `counts[z][z_hat]` over a pool.
    pub fn concept_confusion(&self, x: &Mat) -> Result<Vec<Vec<usize>>, NnError> {
        let z = self.tree.route_batch(x).map_err(|_| NnError::WidthMismatch {
            expected: self.tree.n_features(),
            got: x.cols(),
        })?;
        let z_hat = metrics::argmax_rows(&self.concept_forward(x)?);
        let l = self.tree.n_leaves();
        let mut counts = vec![vec![0usize; l]; l];
        for (a, b) in z.iter().zip(&z_hat) {
            counts[*a][*b] += 1;
        }
        Ok(counts)
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            concept_net: self.concept_net.clone(),
            head: self.head.clone(),
            tree_fingerprint: self.tree.fingerprint().to_string(),
            lambda: self.lambda,
            config_hash: config_hash.to_string(),
        }
    }
}

fn one_hot_rows(indices: &[usize], width: usize) -> Mat {
    let mut m = Mat::zeros(indices.len(), width);
    for (i, &j) in indices.iter().enumerate() {
        m.set(i, j, 1.0);
    }
    m
}

/// Per-step checkpoint: trainable parameters plus enough provenance to
/// re-associate them with a tree and a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub concept_net: MlpParams,
    pub head: MlpParams,
    pub tree_fingerprint: String,
    pub lambda: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub concept: f64,
    pub label: f64,
    pub total: f64,
}

pub struct TocGrads {
    pub concept_net: nn::MlpGrads,
    pub head: nn::MlpGrads,
}

/// Convert a gradient with respect to softmax outputs into one with respect
/// to the logits: `du_j = c_j * (dc_j - sum_k dc_k c_k)` per row.
fn softmax_backward(probs: &Mat, grad_probs: &Mat) -> Mat {
    let mut out = Mat::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let c = probs.row(i);
        let dc = grad_probs.row(i);
        let dot: f64 = dc.iter().zip(c).map(|(a, b)| a * b).sum();
        let row = out.row_mut(i);
        for j in 0..c.len() {
            row[j] = c[j] * (dc[j] - dot);
        }
    }
    out
}

/// Two-term objective on one batch: cross-entropy of the concept net against
/// tree-routed leaf ids, plus `lambda` times cross-entropy of the label
/// pathway against class labels. Returns exact gradients for both networks.
pub fn toc_loss_and_grads(
    model: &TocModel,
    x: &Mat,
    y: &[usize],
    z: &[usize],
    mode: Mode,
) -> Result<(LossParts, TocGrads), NnError> {
    loss_and_grads_raw(
        &model.concept_net,
        &model.head,
        model.lambda,
        model.concept_mode,
        model.concept_loss_enabled,
        x,
        y,
        z,
        mode,
    )
}

#[allow(clippy::too_many_arguments)]
fn loss_and_grads_raw(
    concept_net: &MlpParams,
    head: &MlpParams,
    lambda: f64,
    concept_mode: ConceptMode,
    concept_loss_enabled: bool,
    x: &Mat,
    y: &[usize],
    z: &[usize],
    mode: Mode,
) -> Result<(LossParts, TocGrads), NnError> {
    if y.len() != x.rows() || z.len() != x.rows() {
        return Err(NnError::ShapeMismatch(format!(
            "batch of {} rows with {} labels / {} concept targets",
            x.rows(),
            y.len(),
            z.len()
        )));
    }

    let (u, cache_f) = nn::forward(concept_net, x, mode)?;
    let c_hat = nn::softmax_rows(&u);
    let (concept_loss, du_concept) = nn::softmax_xent(&u, Targets::Hard(z))?;

    let (label_loss, head_grads, mut du_total) = match concept_mode {
        ConceptMode::Soft => {
            let (v, cache_g) = nn::forward(head, &c_hat, Mode::Eval)?;
            let (label_loss, mut dv) = nn::softmax_xent(&v, Targets::Hard(y))?;
            for g in dv.data_mut() {
                *g *= lambda;
            }
            let (head_grads, d_chat) = nn::backward(head, &cache_g, &dv)?;
            let du_label = softmax_backward(&c_hat, &d_chat);
            (label_loss, head_grads, du_label)
        }
        ConceptMode::Hard => {
            // argmax blocks the gradient: only the head learns from labels.
            let hard = one_hot_rows(&metrics::argmax_rows(&c_hat), c_hat.cols());
            let (v, cache_g) = nn::forward(head, &hard, Mode::Eval)?;
            let (label_loss, mut dv) = nn::softmax_xent(&v, Targets::Hard(y))?;
            for g in dv.data_mut() {
                *g *= lambda;
            }
            let (head_grads, _) = nn::backward(head, &cache_g, &dv)?;
            (label_loss, head_grads, Mat::zeros(u.rows(), u.cols()))
        }
    };

    if concept_loss_enabled {
        for (t, c) in du_total.data_mut().iter_mut().zip(du_concept.data()) {
            *t += c;
        }
    }
    let (concept_grads, _) = nn::backward(concept_net, &cache_f, &du_total)?;

    let effective_concept = if concept_loss_enabled { concept_loss } else { 0.0 };
    let parts = LossParts {
        concept: concept_loss,
        label: label_loss,
        total: effective_concept + lambda * label_loss,
    };
    Ok((parts, TocGrads { concept_net: concept_grads, head: head_grads }))
}

/// How replay samples mix into each minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMix {
    /// Fraction of each batch drawn from the buffer (0.5 = 1:1 mixing).
    pub replay_fraction: f64,
}

impl Default for BatchMix {
    fn default() -> Self {
        BatchMix { replay_fraction: 0.5 }
    }
}

/// One assembled minibatch: current-slice rows then replayed rows.
pub struct MixedBatch {
    pub x: Mat,
    pub y: Vec<usize>,
    pub n_current: usize,
    pub n_replay: usize,
}

/// Build the epoch's minibatches: each batch takes `batch_size * (1 - f)`
/// rows from the current slice and samples `batch_size * f` from the buffer
/// (fewer when the buffer is small; zero when it is empty).
pub fn mixed_batches(
    slice: &Slice,
    buffer: &ReplayBuffer,
    batch_size: usize,
    mix: BatchMix,
    run_seed: u64,
    epoch: usize,
) -> Vec<MixedBatch> {
    let replay_target = if buffer.is_empty() {
        0
    } else {
        ((batch_size as f64) * mix.replay_fraction).round() as usize
    };
    let current_per_batch = (batch_size - replay_target).max(1);

    let chunks = nn::epoch_batches(slice.train_idx.len(), current_per_batch, run_seed, slice.slice_id, epoch);
    let mut out = Vec::with_capacity(chunks.len());
    for (bi, chunk) in chunks.into_iter().enumerate() {
        let current_rows: Vec<usize> = chunk.iter().map(|&k| slice.train_idx[k]).collect();
        let sample_ctx = seed::mix(&[run_seed, slice.slice_id as u64, epoch as u64, bi as u64]);
        let replayed = buffer.sample(replay_target, sample_ctx);

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(current_rows.len() + replayed.len());
        let mut y = Vec::with_capacity(current_rows.len() + replayed.len());
        for &r in &current_rows {
            rows.push(slice.x.row(r).to_vec());
            y.push(slice.y[r]);
        }
        for item in &replayed {
            rows.push(item.x.clone());
            y.push(item.y);
        }
        out.push(MixedBatch {
            x: Mat::from_rows(&rows),
            y,
            n_current: current_rows.len(),
            n_replay: replayed.len(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub concept_loss: f64,
    pub label_loss: f64,
    pub total_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<TrainEpoch>,
    pub stopped_epoch: usize,
    /// Informational only; excluded from serialized reports so identical
    /// configs produce identical bytes.
    #[serde(skip)]
    pub wall_clock_ms: u128,
}

/// Train on one slice with replay mixing and early stopping on the slice's
/// validation split. Concept targets are routed through the frozen tree per
/// batch. The model is left at the best-validation epoch.
pub fn train_slice(
    model: &mut TocModel,
    slice: &Slice,
    buffer: &ReplayBuffer,
    mix: BatchMix,
    control: &TrainControl,
    hyper: AdamHyper,
) -> Result<TrainLog, NnError> {
    if slice.train_idx.is_empty() {
        return Err(NnError::EmptyBatcher);
    }
    let started = std::time::Instant::now();

    let val_x = slice.features_of(&slice.val_idx);
    let val_y = slice.labels_of(&slice.val_idx);

    let mut opt_concept = AdamState::new(&model.concept_net, hyper);
    let mut opt_head = AdamState::new(&model.head, hyper);

    let tree = Arc::clone(&model.tree);
    let lambda = model.lambda;
    let concept_mode = model.concept_mode;
    let concept_loss_enabled = model.concept_loss_enabled;
    let run_seed = control.seed;
    let slice_id = slice.slice_id;

    let state = (model.concept_net.clone(), model.head.clone());
    let (best, log_rows) = nn::train_with_early_stopping(
        state,
        |params, epoch| {
            let batches = mixed_batches(slice, buffer, control.batch_size, mix, run_seed, epoch);
            let n_batches = batches.len();
            let mut sums = (0.0, 0.0);
            for (bi, batch) in batches.iter().enumerate() {
                let z = tree
                    .route_batch(&batch.x)
                    .map_err(|_| NnError::WidthMismatch { expected: tree.n_features(), got: batch.x.cols() })?;
                let dropout_seed = seed::mix(&[run_seed, slice_id as u64, epoch as u64, bi as u64, 7]);
                let (parts, grads) = loss_and_grads_raw(
                    &params.0,
                    &params.1,
                    lambda,
                    concept_mode,
                    concept_loss_enabled,
                    &batch.x,
                    &batch.y,
                    &z,
                    Mode::Train { dropout_seed },
                )?;
                opt_concept.apply(&mut params.0, &grads.concept_net)?;
                opt_head.apply(&mut params.1, &grads.head)?;
                sums.0 += parts.concept;
                sums.1 += parts.label;
            }
            let nb = n_batches.max(1) as f64;
            let concept_avg = if concept_loss_enabled { sums.0 / nb } else { 0.0 };
            let label_avg = sums.1 / nb;
            Ok(((sums.0 / nb, label_avg, concept_avg + lambda * label_avg), n_batches))
        },
        |params| {
            let probe = TocModel {
                concept_net: params.0.clone(),
                head: params.1.clone(),
                tree: Arc::clone(&tree),
                lambda,
                concept_mode,
                concept_loss_enabled,
            };
            match probe.predict_scores(&val_x) {
                Ok(scores) => control.metric.evaluate(&scores, &val_y).unwrap_or_else(|_| {
                    MetricTag::Accuracy.evaluate(&scores, &val_y).unwrap_or(0.0)
                }),
                Err(_) => f64::NEG_INFINITY,
            }
        },
        control,
    )?;

    model.concept_net = best.0;
    model.head = best.1;

    let epochs: Vec<TrainEpoch> = log_rows
        .iter()
        .map(|e| TrainEpoch {
            epoch: e.epoch,
            concept_loss: e.stats.0,
            label_loss: e.stats.1,
            total_loss: e.stats.2,
            val_metric: e.val_metric,
        })
        .collect();
    let stopped_epoch = epochs.last().map_or(0, |e| e.epoch);
    Ok(TrainLog { epochs, stopped_epoch, wall_clock_ms: started.elapsed().as_millis() })
}
