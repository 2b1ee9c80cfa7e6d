//! End-to-end continual slice protocol for any learner: sequential training,
//! lower-triangular evaluation, pooled upper bound, and ablation schedules.
//!
//! Seeds are independent jobs and run in parallel under the `parallel`
//! feature; within a seed everything is strictly sequential by slice, and the
//! merged report is identical either way.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{Learner, LearnerError, MlpDirect, SliceCtx, TreeBaseline};
use crate::mat::Mat;
use crate::metrics::{ConceptAudit, MetricError, MetricMatrix, MetricTag};
use crate::nn::{AdamHyper, NnError, TrainControl};
use crate::par;
use crate::replay::ReplayBuffer;
use crate::seed;
use crate::tabular::{PreparedDataset, Slice, SynthSpec, TabularError};
use crate::toc::{self, BatchMix, ConceptMode, TocModel, TrainLog};
use crate::tree::{self, fit_tree, FrozenTree, TreeError, TreeParams};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("at protocol step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<ProtocolError>,
    },
}

trait AtStep<T> {
    fn at_step(self, step: usize) -> Result<T, ProtocolError>;
}

impl<T, E: Into<ProtocolError>> AtStep<T> for Result<T, E> {
    fn at_step(self, step: usize) -> Result<T, ProtocolError> {
        self.map_err(|e| ProtocolError::AtStep { step, source: Box::new(e.into()) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Toc,
    TreeBaseline,
    MlpDirect,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Toc => "toc",
            LearnerKind::TreeBaseline => "tree_baseline",
            LearnerKind::MlpDirect => "mlp_direct",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoReplay,
    NoConceptLoss,
    RefreshTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub enabled: bool,
    pub capacity: usize,
    /// Fraction of each batch drawn from memory (0.5 = the 1:1 mixing).
    #[serde(default = "default_mix_fraction")]
    pub mix_fraction: f64,
    #[serde(default = "default_true")]
    pub balanced: bool,
    /// Per-slice insertion quota; defaults to capacity / n_slices.
    #[serde(default)]
    pub quota_per_slice: Option<usize>,
}

fn default_mix_fraction() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl ReplayConfig {
    pub fn standard(enabled: bool, capacity: usize) -> Self {
        ReplayConfig { enabled, capacity, mix_fraction: 0.5, balanced: true, quota_per_slice: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Number of leading slices pooled for the initial scaffold fit.
    #[serde(default = "default_pool_slices")]
    pub pool_slices: usize,
}

fn default_pool_slices() -> usize {
    1
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 4, min_leaf: 50, pool_slices: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_epochs: 80, patience: 8, batch_size: 256, learning_rate: 1e-3, weight_decay: 1e-5 }
    }
}

/// Where the run's data comes from; hashed into the config fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRef {
    /// Directory produced by dataset preparation.
    Snapshot { path: String },
    /// Generated on the fly.
    Synth(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetRef,
    pub learner: LearnerKind,
    pub replay: ReplayConfig,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub concept_mode: ConceptMode,
    #[serde(default)]
    pub tree: TreeConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    /// Confidence threshold for the contradiction audit.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_ablation() -> Ablation {
    Ablation::None
}

fn default_tau() -> f64 {
    0.8
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.seeds.is_empty() {
            return Err(ProtocolError::Config("seed list must be nonempty".into()));
        }
        if self.learner != LearnerKind::Toc
            && matches!(self.ablation, Ablation::NoConceptLoss | Ablation::RefreshTree)
        {
            return Err(ProtocolError::Config(format!(
                "ablation {:?} only applies to the toc learner",
                self.ablation
            )));
        }
        if self.lambda < 0.0 {
            return Err(ProtocolError::Config("lambda must be nonnegative".into()));
        }
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(ProtocolError::Config("tau must lie in (0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.replay.mix_fraction) {
            return Err(ProtocolError::Config("mix_fraction must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canonical.as_bytes());
        format!("{:x}", h.finalize())
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.train.learning_rate,
            weight_decay: self.train.weight_decay,
            ..AdamHyper::default()
        }
    }

    fn control(&self, seed_value: u64, metric: MetricTag) -> TrainControl {
        TrainControl {
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            batch_size: self.train.batch_size,
            seed: seed_value,
            metric,
        }
    }

    fn replay_active(&self) -> bool {
        self.replay.enabled && self.ablation != Ablation::NoReplay
    }
}

/// Mean and standard error of the mean over seeds; SE is absent for a single
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub se: Option<f64>,
    pub per_seed: Vec<f64>,
}

impl Aggregate {
    pub fn over(values: Vec<f64>) -> Option<Aggregate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            Some((var / n).sqrt())
        } else {
            None
        };
        Some(Aggregate { mean, se, per_seed: values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditAggregate {
    pub node_agreement: Aggregate,
    pub rule_fidelity_gap: Aggregate,
    pub high_conf_contradiction: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub matrix: MetricMatrix,
    /// Per-step concept audits (toc only; empty otherwise).
    pub audits: Vec<ConceptAudit>,
    /// Per-step hashes of the rendered leaf rules (tree-bearing learners).
    pub rule_hashes: Vec<String>,
    pub train_logs: Vec<TrainLog>,
    pub avg_past_task: Option<f64>,
    pub avg_current_task: f64,
    pub final_stability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub replay: bool,
    pub ablation: Ablation,
    pub dataset_name: String,
    pub dataset_fingerprint: String,
    pub config_fingerprint: String,
    pub metric: MetricTag,
    pub per_seed: Vec<SeedReport>,
    pub avg_past_task: Option<Aggregate>,
    pub avg_current_task: Aggregate,
    pub final_stability: Option<Aggregate>,
    /// Final-step concept audit over seeds (toc only).
    pub concept_audit_final: Option<AuditAggregate>,
    /// Filled by the upper-bound pass.
    pub upper_bound: Option<Aggregate>,
    /// Full resolved configuration, echoed for provenance.
    pub resolved_config: RunConfig,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// The learner that carries the frozen concept scaffold.
pub struct TocLearner {
    model: TocModel,
    seed: u64,
    d_enc: usize,
    n_classes: usize,
}

impl TocLearner {
    pub fn new(
        tree: Arc<FrozenTree>,
        d_enc: usize,
        n_classes: usize,
        lambda: f64,
        seed_value: u64,
        concept_mode: ConceptMode,
        ablate_no_concept_loss: bool,
    ) -> Self {
        let mut model = toc::build_toc(tree, d_enc, n_classes, lambda, seed_value).expect("valid dims");
        model.concept_mode = concept_mode;
        model.concept_loss_enabled = !ablate_no_concept_loss;
        TocLearner { model, seed: seed_value, d_enc, n_classes }
    }

    pub fn model(&self) -> &TocModel {
        &self.model
    }

    /// Swap in a freshly fit scaffold (the refresh ablation). Keeps warm
    /// hidden layers; the concept output layer and head are re-initialized
    /// when the leaf count changes, since their widths are tied to it.
    fn refresh_tree(&mut self, slice: &Slice, ctx: &SliceCtx) -> Result<(), LearnerError> {
        let x = slice.features_of(&slice.train_idx);
        let y = slice.labels_of(&slice.train_idx);
        let params = TreeParams { seed: seed::mix(&[self.seed, slice.slice_id as u64, 31]), ..ctx.tree_params };
        let new_tree = Arc::new(fit_tree(&x, &y, params, Some(ctx.n_classes))?);
        if new_tree.n_leaves() != self.model.tree.n_leaves() {
            let reseed = seed::mix(&[self.seed, slice.slice_id as u64, 37]);
            let hidden_out = self
                .model
                .concept_net
                .layers
                .iter()
                .rev()
                .nth(1)
                .map_or(self.d_enc, |l| l.w.rows());
            let fresh_out = crate::nn::init_mlp(&[hidden_out, new_tree.n_leaves()], 0.0, reseed)?;
            *self.model.concept_net.layers.last_mut().expect("nonempty") =
                fresh_out.layers.into_iter().next().expect("one layer");
            self.model.head = crate::nn::init_mlp(&[new_tree.n_leaves(), self.n_classes], 0.0, seed::mix(&[reseed, 1]))?;
        }
        self.model.tree = new_tree;
        Ok(())
    }
}

impl Learner for TocLearner {
    fn name(&self) -> &'static str {
        "toc"
    }

    fn train_slice(&mut self, slice: &Slice, buffer: &ReplayBuffer, ctx: &SliceCtx) -> Result<TrainLog, LearnerError> {
        if ctx.refresh_tree && slice.slice_id > 0 {
            self.refresh_tree(slice, ctx)?;
        }
        let log = toc::train_slice(
            &mut self.model,
            slice,
            buffer,
            ctx.mix,
            &ctx.control,
            ctx.hyper,
        )?;
        Ok(log)
    }

    fn snapshot(&self) -> crate::baselines::LearnerSnapshot {
        crate::baselines::LearnerSnapshot::Toc(self.model.clone())
    }

    fn toc_model(&self) -> Option<&TocModel> {
        Some(&self.model)
    }

    fn tree(&self) -> Option<Arc<FrozenTree>> {
        Some(Arc::clone(&self.model.tree))
    }
}

fn fit_scaffold(config: &RunConfig, data: &PreparedDataset, seed_value: u64) -> Result<Arc<FrozenTree>, ProtocolError> {
    let pool = config.tree.pool_slices.clamp(1, data.n_slices());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y: Vec<usize> = Vec::new();
    for slice in data.slices.iter().take(pool) {
        for &r in &slice.train_idx {
            rows.push(slice.x.row(r).to_vec());
            y.push(slice.y[r]);
        }
    }
    let params = TreeParams {
        max_depth: config.tree.max_depth,
        min_leaf: config.tree.min_leaf,
        seed: seed_value,
    };
    Ok(Arc::new(fit_tree(&Mat::from_rows(&rows), &y, params, Some(data.n_classes))?))
}

fn build_learner(
    config: &RunConfig,
    data: &PreparedDataset,
    seed_value: u64,
) -> Result<Box<dyn Learner>, ProtocolError> {
    Ok(match config.learner {
        LearnerKind::Toc => {
            let tree = fit_scaffold(config, data, seed_value)?;
            Box::new(TocLearner::new(
                tree,
                data.d_enc,
                data.n_classes,
                config.lambda,
                seed_value,
                config.concept_mode,
                config.ablation == Ablation::NoConceptLoss,
            ))
        }
        LearnerKind::TreeBaseline => Box::new(TreeBaseline::new(seed_value)),
        LearnerKind::MlpDirect => Box::new(MlpDirect::new(seed_value, data.d_enc, data.n_classes)),
    })
}

fn slice_ctx(config: &RunConfig, data: &PreparedDataset, seed_value: u64) -> SliceCtx {
    SliceCtx {
        control: config.control(seed_value, data.metric),
        mix: BatchMix { replay_fraction: config.replay.mix_fraction },
        hyper: config.hyper(),
        tree_params: TreeParams {
            max_depth: config.tree.max_depth,
            min_leaf: config.tree.min_leaf,
            seed: seed_value,
        },
        n_classes: data.n_classes,
        refresh_tree: config.ablation == Ablation::RefreshTree,
    }
}

fn rule_hash(tree: &FrozenTree, data: &PreparedDataset) -> Result<String, ProtocolError> {
    let dump = tree::rule_dump(tree, &data.preprocessor)?;
    let mut h = Sha256::new();
    h.update(dump.as_bytes());
    Ok(format!("{:x}", h.finalize()))
}

/// Union of test rows over slices `0..=t`.
fn seen_test_pool(data: &PreparedDataset, t: usize) -> (Mat, Vec<usize>) {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for slice in data.slices.iter().take(t + 1) {
        for &r in &slice.test_idx {
            rows.push(slice.x.row(r).to_vec());
            y.push(slice.y[r]);
        }
    }
    (Mat::from_rows(&rows), y)
}

fn run_single_seed(config: &RunConfig, data: &PreparedDataset, seed_value: u64) -> Result<SeedReport, ProtocolError> {
    let mut learner = build_learner(config, data, seed_value)?;
    let capacity = if config.replay_active() { config.replay.capacity } else { 0 };
    let quota = config
        .replay
        .quota_per_slice
        .unwrap_or_else(|| capacity / data.n_slices().max(1));
    let mut buffer = ReplayBuffer::new(capacity, config.replay.balanced, seed::mix(&[seed_value, 11]));

    let ctx = slice_ctx(config, data, seed_value);
    let mut matrix = MetricMatrix::new(data.metric);
    let mut audits = Vec::new();
    let mut rule_hashes = Vec::new();
    let mut train_logs = Vec::new();

    for (t, slice) in data.slices.iter().enumerate() {
        let log = learner.train_slice(slice, &buffer, &ctx).at_step(t)?;
        train_logs.push(log);

        // memory updates after training on the slice, before evaluation
        buffer.insert_after_slice(slice, quota);

        let snapshot = learner.snapshot();
        let mut row = Vec::with_capacity(t + 1);
        for slice_j in data.slices.iter().take(t + 1) {
            let x = slice_j.features_of(&slice_j.test_idx);
            let yj = slice_j.labels_of(&slice_j.test_idx);
            let scores = snapshot.predict_scores(&x).at_step(t)?;
            row.push(data.metric.evaluate(&scores, &yj).at_step(t)?);
        }
        matrix.push_row(row);

        if let Some(model) = learner.toc_model() {
            let (pool_x, pool_y) = seen_test_pool(data, t);
            let audit = model.audit(&pool_x, &pool_y, data.metric, config.tau, t).at_step(t)?;
            audits.push(audit);
        }
        if let Some(tree) = learner.tree() {
            rule_hashes.push(rule_hash(&tree, data)?);
        }
    }

    let avg_past_task = matrix.avg_past_task();
    let avg_current_task = matrix.avg_current_task();
    let final_stability = matrix.final_stability();
    Ok(SeedReport {
        seed: seed_value,
        matrix,
        audits,
        rule_hashes,
        train_logs,
        avg_past_task,
        avg_current_task,
        final_stability,
    })
}

/// Execute the continual protocol for every seed and aggregate.
pub fn run_protocol(config: &RunConfig, data: &PreparedDataset) -> Result<RunReport, ProtocolError> {
    config.validate()?;
    if data.slices.is_empty() {
        return Err(ProtocolError::Config("dataset has no slices".into()));
    }

    let results = par::map_jobs(&config.seeds, |&s| run_single_seed(config, data, s));
    let mut per_seed = Vec::with_capacity(results.len());
    for r in results {
        per_seed.push(r?);
    }

    let avg_past_task = Aggregate::over(per_seed.iter().filter_map(|s| s.avg_past_task).collect());
    let avg_current_task =
        Aggregate::over(per_seed.iter().map(|s| s.avg_current_task).collect()).expect("nonempty seeds");
    let final_stability = Aggregate::over(per_seed.iter().filter_map(|s| s.final_stability).collect());

    let concept_audit_final = if per_seed.iter().all(|s| !s.audits.is_empty()) {
        let last = |f: fn(&ConceptAudit) -> f64| -> Vec<f64> {
            per_seed.iter().map(|s| f(s.audits.last().expect("nonempty"))).collect()
        };
        Some(AuditAggregate {
            node_agreement: Aggregate::over(last(|a| a.node_agreement)).expect("seeds"),
            rule_fidelity_gap: Aggregate::over(last(|a| a.rule_fidelity_gap)).expect("seeds"),
            high_conf_contradiction: Aggregate::over(last(|a| a.high_conf_contradiction)).expect("seeds"),
        })
    } else {
        None
    };

    Ok(RunReport {
        method: config.learner.name().to_string(),
        replay: config.replay_active(),
        ablation: config.ablation,
        dataset_name: data.name.clone(),
        dataset_fingerprint: data.fingerprint.clone(),
        config_fingerprint: config.fingerprint(),
        metric: data.metric,
        per_seed,
        avg_past_task,
        avg_current_task,
        final_stability,
        concept_audit_final,
        upper_bound: None,
        resolved_config: config.clone(),
    })
}

/// One slice holding the union of all slices' rows, with split indices
/// remapped; the non-continual pooled regime.
pub fn pooled_slice(data: &PreparedDataset) -> Slice {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut offset = 0usize;
    for slice in &data.slices {
        for i in 0..slice.n_rows() {
            rows.push(slice.x.row(i).to_vec());
            y.push(slice.y[i]);
        }
        train_idx.extend(slice.train_idx.iter().map(|&i| i + offset));
        val_idx.extend(slice.val_idx.iter().map(|&i| i + offset));
        test_idx.extend(slice.test_idx.iter().map(|&i| i + offset));
        offset += slice.n_rows();
    }
    Slice {
        slice_id: 0,
        x: Mat::from_rows(&rows),
        y,
        train_idx,
        val_idx,
        test_idx,
        provenance: format!("{}:pooled", data.name),
    }
}

/// Single pooled training run per seed; the non-continual upper bound.
/// Replay is disabled (meaningless when everything is pooled).
pub fn run_upper_bound(config: &RunConfig, data: &PreparedDataset) -> Result<Aggregate, ProtocolError> {
    config.validate()?;
    let pooled = pooled_slice(data);
    let pooled_data = PreparedDataset {
        name: format!("{}-pooled", data.name),
        n_classes: data.n_classes,
        d_enc: data.d_enc,
        metric: data.metric,
        preprocessor: data.preprocessor.clone(),
        slices: vec![pooled],
        dropped_missing_slice_value: data.dropped_missing_slice_value,
        dropped_missing_label: data.dropped_missing_label,
        fingerprint: data.fingerprint.clone(),
    };
    let mut ub_config = config.clone();
    ub_config.replay = ReplayConfig::standard(false, 0);
    ub_config.ablation = match config.ablation {
        Ablation::NoConceptLoss => Ablation::NoConceptLoss,
        _ => Ablation::None,
    };

    let results = par::map_jobs(&ub_config.seeds, |&s| -> Result<f64, ProtocolError> {
        let mut learner = build_learner(&ub_config, &pooled_data, s)?;
        let ctx = slice_ctx(&ub_config, &pooled_data, s);
        let buffer = ReplayBuffer::new(0, ub_config.replay.balanced, 0);
        let slice = &pooled_data.slices[0];
        learner.train_slice(slice, &buffer, &ctx)?;
        let snapshot = learner.snapshot();
        let x = slice.features_of(&slice.test_idx);
        let y = slice.labels_of(&slice.test_idx);
        let scores = snapshot.predict_scores(&x)?;
        Ok(pooled_data.metric.evaluate(&scores, &y)?)
    });
    let mut values = Vec::with_capacity(results.len());
    for r in results {
        values.push(r?);
    }
    Ok(Aggregate::over(values).expect("nonempty seeds"))
}

/// Protocol plus upper bound in one call (the shape every CLI run uses).
pub fn run_with_upper_bound(config: &RunConfig, data: &PreparedDataset) -> Result<RunReport, ProtocolError> {
    let mut report = run_protocol(config, data)?;
    report.upper_bound = Some(run_upper_bound(config, data)?);
    Ok(report)
}

/// Baseline entry point: same engine, non-toc learners only.
pub fn run_baseline(config: &RunConfig, data: &PreparedDataset) -> Result<RunReport, ProtocolError> {
    if config.learner == LearnerKind::Toc {
        return Err(ProtocolError::Config("run_baseline expects a baseline learner".into()));
    }
    run_protocol(config, data)
}

/// The component-ablation grid on `data` plus the replay-capacity sweep on
/// the synthetic stand-in stream.
pub struct AblationSuite {
    pub variants: Vec<(String, RunReport)>,
    pub capacity_sweep: Vec<(usize, RunReport)>,
}

pub const CAPACITY_SWEEP: [usize; 4] = [0, 512, 2048, 8192];

pub fn run_ablation_suite(
    base: &RunConfig,
    data: &PreparedDataset,
    sweep_spec: &SynthSpec,
    sweep_seed: u64,
) -> Result<AblationSuite, ProtocolError> {
    if base.learner != LearnerKind::Toc {
        return Err(ProtocolError::Config("ablation suite requires the toc learner".into()));
    }
    let mut variants = Vec::new();
    for (name, ablation) in [
        ("full", Ablation::None),
        ("no_replay", Ablation::NoReplay),
        ("no_concept_loss", Ablation::NoConceptLoss),
        ("refresh_tree", Ablation::RefreshTree),
    ] {
        let mut cfg = base.clone();
        cfg.ablation = ablation;
        variants.push((name.to_string(), run_protocol(&cfg, data)?));
    }

    let sweep_data = crate::tabular::synth_shift_stream(sweep_spec, sweep_seed)?;
    let mut capacity_sweep = Vec::new();
    for capacity in CAPACITY_SWEEP {
        let mut cfg = base.clone();
        cfg.ablation = Ablation::None;
        cfg.replay = ReplayConfig { enabled: capacity > 0, capacity, ..base.replay.clone() };
        cfg.dataset = DatasetRef::Synth(sweep_spec.clone());
        capacity_sweep.push((capacity, run_protocol(&cfg, &sweep_data)?));
    }
    Ok(AblationSuite { variants, capacity_sweep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::synth_shift_stream;

    fn synth_config(seeds: Vec<u64>, learner: LearnerKind) -> RunConfig {
        RunConfig {
            dataset: DatasetRef::Synth(SynthSpec::stationary(3, 200, 4, 2)),
            learner,
            replay: ReplayConfig::standard(true, 256),
            lambda: 1.0,
            concept_mode: ConceptMode::Soft,
            tree: TreeConfig { max_depth: 3, min_leaf: 10, pool_slices: 1 },
            train: TrainConfig { max_epochs: 12, patience: 4, batch_size: 64, ..TrainConfig::default() },
            seeds,
            ablation: Ablation::None,
            tau: 0.8,
        }
    }

    fn synth_data() -> PreparedDataset {
        synth_shift_stream(&SynthSpec::stationary(3, 200, 4, 2), 77).unwrap()
    }

    #[test]
    fn lower_triangular_matrix_and_aggregates() {
        let config = synth_config(vec![0, 1], LearnerKind::Toc);
        let data = synth_data();
        let report = run_protocol(&config, &data).unwrap();
        assert_eq!(report.per_seed.len(), 2);
        for sr in &report.per_seed {
            assert_eq!(sr.matrix.n_steps(), 3);
            for t in 0..3 {
                assert_eq!(sr.matrix.row(t).len(), t + 1);
            }
            assert_eq!(sr.audits.len(), 3);
            assert_eq!(sr.rule_hashes.len(), 3);
            // frozen scaffold: identical rule hashes at every step
            assert!(sr.rule_hashes.windows(2).all(|w| w[0] == w[1]));
        }
        assert!(report.avg_past_task.is_some());
        assert!(report.concept_audit_final.is_some());
        // aggregates recompute from per-seed values
        let agg = report.avg_current_task;
        let mean = report.per_seed.iter().map(|s| s.avg_current_task).sum::<f64>() / 2.0;
        assert!((agg.mean - mean).abs() < 1e-12);
    }

    #[test]
    fn single_slice_stream_has_no_stability() {
        // a one-slice dataset: only plasticity is defined
        let mut data = synth_data();
        data.slices.truncate(1);
        data.fingerprint = data.compute_fingerprint();
        let config = synth_config(vec![0], LearnerKind::MlpDirect);
        let report = run_protocol(&config, &data).unwrap();
        assert!(report.avg_past_task.is_none());
        assert!(report.final_stability.is_none());
        assert!(report.per_seed[0].matrix.n_steps() == 1);
    }

    #[test]
    fn upper_bound_on_single_slice_equals_protocol_plasticity() {
        let mut data = synth_data();
        data.slices.truncate(1);
        data.fingerprint = data.compute_fingerprint();
        let config = synth_config(vec![3], LearnerKind::MlpDirect);
        let report = run_protocol(&config, &data).unwrap();
        let ub = run_upper_bound(&config, &data).unwrap();
        let p1 = report.per_seed[0].matrix.entry(0, 0);
        assert!((ub.mean - p1).abs() < 1e-12, "ub {} vs p1 {p1}", ub.mean);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = synth_config(vec![], LearnerKind::Toc);
        assert!(matches!(c.validate(), Err(ProtocolError::Config(_))));
        c.seeds = vec![0];
        c.learner = LearnerKind::MlpDirect;
        c.ablation = Ablation::RefreshTree;
        assert!(matches!(c.validate(), Err(ProtocolError::Config(_))));
        c.ablation = Ablation::NoReplay;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn determinism_identical_reports() {
        let config = synth_config(vec![5], LearnerKind::Toc);
        let data = synth_data();
        let a = run_with_upper_bound(&config, &data).unwrap();
        let b = run_with_upper_bound(&config, &data).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn baseline_entry_point_rejects_toc() {
        let config = synth_config(vec![0], LearnerKind::Toc);
        let data = synth_data();
        assert!(matches!(run_baseline(&config, &data), Err(ProtocolError::Config(_))));
    }
}
