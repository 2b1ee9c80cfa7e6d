//! The common learner interface the protocol drives, plus the two baseline
//! learners: a per-slice-retrained CART and a raw-feature MLP trained with
//! the same replay machinery but only the label loss.

use std::sync::Arc;

use thiserror::Error;

use crate::mat::Mat;
use crate::metrics::{MetricError, MetricTag};
use crate::nn::{self, AdamHyper, AdamState, MlpParams, Mode, NnError, Targets, TrainControl};
use crate::replay::ReplayBuffer;
use crate::seed;
use crate::tabular::Slice;
use crate::toc::{self, BatchMix, TocModel, TrainEpoch, TrainLog};
use crate::tree::{fit_tree, FrozenTree, TreeError, TreeParams};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Per-slice training context shared by all learners.
#[derive(Debug, Clone, Copy)]
pub struct SliceCtx {
    pub control: TrainControl,
    pub mix: BatchMix,
    pub hyper: AdamHyper,
    pub tree_params: TreeParams,
    pub n_classes: usize,
    /// The refit-the-scaffold-every-slice ablation (tree-of-concepts only).
    pub refresh_tree: bool,
}

/// Immutable model usable for evaluation; cheap to clone out of a learner.
#[derive(Debug, Clone)]
pub enum LearnerSnapshot {
    Toc(TocModel),
    Tree(Arc<FrozenTree>),
    Mlp(MlpParams),
}

impl LearnerSnapshot {
    /// Per-class probability rows; rows sum to 1.
    pub fn predict_scores(&self, x: &Mat) -> Result<Mat, LearnerError> {
        match self {
            LearnerSnapshot::Toc(m) => Ok(m.predict_scores(x)?),
            LearnerSnapshot::Tree(t) => Ok(t.predict_batch(x)?),
            LearnerSnapshot::Mlp(p) => Ok(nn::predict_proba(p, x)?),
        }
    }
}

/// A continually trained learner: consume slices in order, expose immutable
/// snapshots for evaluation.
pub trait Learner {
    fn name(&self) -> &'static str;

    fn train_slice(&mut self, slice: &Slice, buffer: &ReplayBuffer, ctx: &SliceCtx) -> Result<TrainLog, LearnerError>;

    fn snapshot(&self) -> LearnerSnapshot;

    /// The tree-of-concepts view, when this learner has one (used for
    /// concept audits).
    fn toc_model(&self) -> Option<&TocModel> {
        None
    }

    /// The current concept scaffold or fitted tree, for rule dumping.
    fn tree(&self) -> Option<Arc<FrozenTree>> {
        None
    }
}

/// Interpretable baseline: a fresh CART per slice, trained on the current
/// train split plus the whole buffer (flat union; trees have no minibatches).
pub struct TreeBaseline {
    seed: u64,
    tree: Option<Arc<FrozenTree>>,
}

impl TreeBaseline {
    pub fn new(seed: u64) -> Self {
        TreeBaseline { seed, tree: None }
    }
}

impl Learner for TreeBaseline {
    fn name(&self) -> &'static str {
        "tree_baseline"
    }

    fn train_slice(&mut self, slice: &Slice, buffer: &ReplayBuffer, ctx: &SliceCtx) -> Result<TrainLog, LearnerError> {
        let started = std::time::Instant::now();
        let mut rows: Vec<Vec<f64>> = slice.train_idx.iter().map(|&r| slice.x.row(r).to_vec()).collect();
        let mut y: Vec<usize> = slice.train_idx.iter().map(|&r| slice.y[r]).collect();
        for item in buffer.items() {
            rows.push(item.x.clone());
            y.push(item.y);
        }
        let x = Mat::from_rows(&rows);
        let params = TreeParams { seed: seed::mix(&[self.seed, slice.slice_id as u64]), ..ctx.tree_params };
        let tree = fit_tree(&x, &y, params, Some(ctx.n_classes))?;
        self.tree = Some(Arc::new(tree));
        Ok(TrainLog { epochs: Vec::new(), stopped_epoch: 0, wall_clock_ms: started.elapsed().as_millis() })
    }

    fn snapshot(&self) -> LearnerSnapshot {
        LearnerSnapshot::Tree(Arc::clone(self.tree.as_ref().expect("trained at least once")))
    }

    fn tree(&self) -> Option<Arc<FrozenTree>> {
        self.tree.clone()
    }
}

/// Deep baseline: warm-started raw-feature MLP (same widths and dropout as
/// the concept extractor, output width K), mixed-batch replay, early stopping
/// on the slice's validation split, label cross-entropy only.
pub struct MlpDirect {
    seed: u64,
    d_enc: usize,
    n_classes: usize,
    params: Option<MlpParams>,
}

impl MlpDirect {
    pub fn new(seed: u64, d_enc: usize, n_classes: usize) -> Self {
        MlpDirect { seed, d_enc, n_classes, params: None }
    }
}

impl Learner for MlpDirect {
    fn name(&self) -> &'static str {
        "mlp_direct"
    }

    fn train_slice(&mut self, slice: &Slice, buffer: &ReplayBuffer, ctx: &SliceCtx) -> Result<TrainLog, LearnerError> {
        if self.params.is_none() {
            let mut dims = vec![self.d_enc];
            dims.extend_from_slice(&toc::HIDDEN_DIMS);
            dims.push(self.n_classes);
            self.params = Some(nn::init_mlp(&dims, toc::DROPOUT, seed::mix(&[self.seed, 303]))?);
        }
        let params = self.params.as_mut().expect("initialized above");
        let log = train_label_only(params, slice, buffer, ctx)?;
        Ok(log)
    }

    fn snapshot(&self) -> LearnerSnapshot {
        LearnerSnapshot::Mlp(self.params.clone().expect("trained at least once"))
    }
}

/// The replay training loop shared with the concept model, minus the concept
/// term: plain softmax cross-entropy on labels.
pub fn train_label_only(
    params: &mut MlpParams,
    slice: &Slice,
    buffer: &ReplayBuffer,
    ctx: &SliceCtx,
) -> Result<TrainLog, NnError> {
    if slice.train_idx.is_empty() {
        return Err(NnError::EmptyBatcher);
    }
    let started = std::time::Instant::now();
    let val_x = slice.features_of(&slice.val_idx);
    let val_y = slice.labels_of(&slice.val_idx);
    let control = ctx.control;
    let slice_id = slice.slice_id;

    let mut opt = AdamState::new(params, ctx.hyper);
    let (best, log_rows) = nn::train_with_early_stopping(
        params.clone(),
        |p, epoch| {
            let batches = toc::mixed_batches(slice, buffer, control.batch_size, ctx.mix, control.seed, epoch);
            let n_batches = batches.len();
            let mut loss_sum = 0.0;
            for (bi, batch) in batches.iter().enumerate() {
                let dropout_seed = seed::mix(&[control.seed, slice_id as u64, epoch as u64, bi as u64, 13]);
                let (logits, cache) = nn::forward(p, &batch.x, Mode::Train { dropout_seed })?;
                let (loss, grad_logits) = nn::softmax_xent(&logits, Targets::Hard(&batch.y))?;
                let (grads, _) = nn::backward(p, &cache, &grad_logits)?;
                opt.apply(p, &grads)?;
                loss_sum += loss;
            }
            Ok((loss_sum / n_batches.max(1) as f64, n_batches))
        },
        |p| match nn::predict_proba(p, &val_x) {
            Ok(scores) => control
                .metric
                .evaluate(&scores, &val_y)
                .unwrap_or_else(|_| MetricTag::Accuracy.evaluate(&scores, &val_y).unwrap_or(0.0)),
            Err(_) => f64::NEG_INFINITY,
        },
        &control,
    )?;
    *params = best;

    let epochs: Vec<TrainEpoch> = log_rows
        .iter()
        .map(|e| TrainEpoch {
            epoch: e.epoch,
            concept_loss: 0.0,
            label_loss: e.stats,
            total_loss: e.stats,
            val_metric: e.val_metric,
        })
        .collect();
    let stopped_epoch = epochs.last().map_or(0, |e| e.epoch);
    Ok(TrainLog { epochs, stopped_epoch, wall_clock_ms: started.elapsed().as_millis() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_slice(slice_id: usize, n: usize, seed_value: u64, shift: f64) -> Slice {
        let mut rng = crate::seed::rng(seed_value, &[slice_id as u64]);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let cls = rng.gen_range(0..2usize);
            let center = if cls == 0 { -0.8 } else { 0.8 } + shift;
            rows.push(vec![center + rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)]);
            y.push(cls);
        }
        let n_train = n * 6 / 10;
        let n_val = n * 2 / 10;
        Slice {
            slice_id,
            x: Mat::from_rows(&rows),
            y,
            train_idx: (0..n_train).collect(),
            val_idx: (n_train..n_train + n_val).collect(),
            test_idx: (n_train + n_val..n).collect(),
            provenance: "toy".into(),
        }
    }

    fn ctx(seed_value: u64) -> SliceCtx {
        SliceCtx {
            control: TrainControl {
                max_epochs: 15,
                patience: 5,
                batch_size: 32,
                seed: seed_value,
                metric: MetricTag::Accuracy,
            },
            mix: BatchMix::default(),
            hyper: AdamHyper::default(),
            tree_params: TreeParams { max_depth: 3, min_leaf: 5, seed: 0 },
            n_classes: 2,
            refresh_tree: false,
        }
    }

    fn contract_check(mut make: impl FnMut(u64) -> Box<dyn Learner>) {
        let slice = toy_slice(0, 120, 42, 0.0);
        let buffer = ReplayBuffer::new(64, true, 7);
        let c = ctx(5);

        // determinism under seed: identical snapshots two runs in a row
        let score_twice = |learner: &mut Box<dyn Learner>| {
            learner.train_slice(&slice, &buffer, &c).unwrap();
            let snap = learner.snapshot();
            let test_x = slice.features_of(&slice.test_idx);
            (snap.predict_scores(&test_x).unwrap(), snap)
        };
        let mut l1 = make(5);
        let mut l2 = make(5);
        let (s1, snap1) = score_twice(&mut l1);
        let (s2, _) = score_twice(&mut l2);
        assert_eq!(s1.data(), s2.data(), "{}: seed determinism", l1.name());

        // rows are probability vectors
        for i in 0..s1.rows() {
            let sum: f64 = s1.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "{}: row {i} sums to {sum}", l1.name());
            assert!(s1.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        // snapshot purity: predicting does not change the snapshot
        let test_x = slice.features_of(&slice.test_idx);
        let a = snap1.predict_scores(&test_x).unwrap();
        let b = snap1.predict_scores(&test_x).unwrap();
        assert_eq!(a.data(), b.data(), "{}: snapshot purity", l1.name());
    }

    #[test]
    fn all_learners_satisfy_the_contract() {
        contract_check(|s| Box::new(TreeBaseline::new(s)));
        contract_check(|s| Box::new(MlpDirect::new(s, 2, 2)));
        contract_check(|s| {
            let slice = toy_slice(0, 120, 42, 0.0);
            let x = slice.features_of(&slice.train_idx);
            let y = slice.labels_of(&slice.train_idx);
            let tree = Arc::new(
                fit_tree(&x, &y, TreeParams { max_depth: 3, min_leaf: 5, seed: 0 }, Some(2)).unwrap(),
            );
            Box::new(crate::protocol::TocLearner::new(tree, 2, 2, 1.0, s, Default::default(), false))
        });
    }

    #[test]
    fn tree_baseline_without_replay_depends_only_on_current_slice() {
        let c = ctx(1);
        let empty = ReplayBuffer::new(0, false, 0);
        let s0 = toy_slice(0, 100, 1, 0.0);
        let s1 = toy_slice(1, 100, 1, 2.0);

        let mut a = TreeBaseline::new(3);
        a.train_slice(&s0, &empty, &c).unwrap();
        a.train_slice(&s1, &empty, &c).unwrap();

        let mut b = TreeBaseline::new(3);
        b.train_slice(&s1, &empty, &c).unwrap();

        let probe = s1.features_of(&s1.test_idx);
        let pa = a.snapshot().predict_scores(&probe).unwrap();
        let pb = b.snapshot().predict_scores(&probe).unwrap();
        assert_eq!(pa.data(), pb.data());
    }

    #[test]
    fn tree_baseline_with_full_buffer_equals_pooled_fit() {
        // buffer holding every past training row makes the per-slice refit
        // identical to a fit on the explicit union
        let c = ctx(2);
        let s0 = toy_slice(0, 80, 9, 0.0);
        let s1 = toy_slice(1, 80, 9, 0.0);

        let mut buffer = ReplayBuffer::new(10_000, false, 5);
        buffer.insert_after_slice(&s0, usize::MAX);
        let mut learner = TreeBaseline::new(7);
        learner.train_slice(&s1, &buffer, &c).unwrap();

        // explicit union fit: s1 train rows then s0 train rows, matching the
        // learner's assembly order (buffer stores s0's rows in insertion
        // order after a seeded shuffle, so compare predictions not structure)
        let mut rows: Vec<Vec<f64>> = s1.train_idx.iter().map(|&r| s1.x.row(r).to_vec()).collect();
        let mut y: Vec<usize> = s1.train_idx.iter().map(|&r| s1.y[r]).collect();
        for item in buffer.items() {
            rows.push(item.x.clone());
            y.push(item.y);
        }
        let pooled = fit_tree(
            &Mat::from_rows(&rows),
            &y,
            TreeParams { seed: seed::mix(&[7, 1]), max_depth: 3, min_leaf: 5 },
            Some(2),
        )
        .unwrap();

        let probe = s1.features_of(&s1.test_idx);
        let got = learner.snapshot().predict_scores(&probe).unwrap();
        let want = pooled.predict_batch(&probe).unwrap();
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn mlp_direct_architecture_mirrors_concept_net() {
        let mut l = MlpDirect::new(1, 20, 3);
        let slice = {
            let mut s = toy_slice(0, 60, 2, 0.0);
            // widen features to 20 columns
            let rows: Vec<Vec<f64>> = (0..s.n_rows())
                .map(|i| {
                    let mut v = s.x.row(i).to_vec();
                    v.resize(20, 0.0);
                    v
                })
                .collect();
            s.x = Mat::from_rows(&rows);
            s
        };
        let mut c = ctx(4);
        c.control.max_epochs = 1;
        c.control.patience = 1;
        l.train_slice(&slice, &ReplayBuffer::new(0, false, 0), &c).unwrap();
        let p = l.params.as_ref().unwrap();
        let dims: Vec<usize> = std::iter::once(p.input_dim())
            .chain(p.layers.iter().map(|layer| layer.w.rows()))
            .collect();
        assert_eq!(dims, vec![20, 128, 64, 3]);
    }
}
