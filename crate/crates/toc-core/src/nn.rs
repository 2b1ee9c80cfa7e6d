//! Minimal dense network stack: affine layers, ReLU, inverted dropout,
//! numerically stabilized softmax cross-entropy with analytic gradients,
//! Adam with decoupled weight decay, and patience-based early stopping.
//!
//! Everything is f64 and single-threaded per training run; batch-level
//! matrix kernels may fan out across rows (see [`crate::mat`]) without
//! changing any bit of the result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;
use crate::metrics::MetricTag;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid layer dims: {0}")]
    InvalidDims(String),
    #[error("input width {got} does not match layer width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("target class {class} out of range for {width} logits")]
    ClassOutOfRange { class: usize, width: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cache mismatch: {0}")]
    CacheMismatch(String),
    #[error("batch source yielded no batches")]
    EmptyBatcher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in` weight matrix.
    pub w: Mat,
    pub b: Vec<f64>,
    pub activation: Activation,
    /// Inverted-dropout rate on this layer's output; 0 disables.
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.cols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.rows())
    }

    /// Total parameter count (weights + biases).
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.rows() * l.w.cols() + l.b.len()).sum()
    }
}

/// Glorot-uniform weights, zero biases. Hidden layers get ReLU and the given
/// dropout rate; the output layer is linear with no dropout.
pub fn init_mlp(dims: &[usize], dropout: f64, seed_value: u64) -> Result<MlpParams, NnError> {
    if dims.len() < 2 {
        return Err(NnError::InvalidDims(format!("need at least 2 dims, got {}", dims.len())));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(NnError::InvalidDims("zero-width layer".into()));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(NnError::InvalidDims(format!("dropout {dropout} outside [0,1)")));
    }
    use rand::Rng;
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for i in 0..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[i], dims[i + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = seed::rng(seed_value, &[seed::tag::INIT, i as u64]);
        let mut w = Mat::zeros(fan_out, fan_in);
        for v in w.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        let last = i == dims.len() - 2;
        layers.push(Layer {
            w,
            b: vec![0.0; fan_out],
            activation: if last { Activation::Identity } else { Activation::Relu },
            dropout: if last { 0.0 } else { dropout },
        });
    }
    Ok(MlpParams { layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks are sampled deterministically from this seed.
    Train { dropout_seed: u64 },
    Eval,
}

struct LayerCache {
    input: Mat,
    pre_activation: Mat,
    /// Scaled keep mask (0 or 1/(1-p)); present only when dropout fired.
    mask: Option<Mat>,
}

/// Intermediate values forward retains for the backward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

/// Forward pass. Eval mode is a plain affine/ReLU chain: inverted dropout
/// scales at train time, so no eval-time correction exists.
pub fn forward(params: &MlpParams, batch: &Mat, mode: Mode) -> Result<(Mat, ForwardCache), NnError> {
    if batch.cols() != params.input_dim() {
        return Err(NnError::WidthMismatch { expected: params.input_dim(), got: batch.cols() });
    }
    use rand::Rng;
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut current = batch.clone();
    for (li, layer) in params.layers.iter().enumerate() {
        let pre = current.affine(&layer.w, &layer.b);
        let mut out = pre.clone();
        if layer.activation == Activation::Relu {
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        let mask = match mode {
            Mode::Train { dropout_seed } if layer.dropout > 0.0 => {
                let keep = 1.0 - layer.dropout;
                let mut rng = seed::rng(dropout_seed, &[seed::tag::DROPOUT, li as u64]);
                let mut m = Mat::zeros(out.rows(), out.cols());
                for v in m.data_mut() {
                    *v = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                for (o, k) in out.data_mut().iter_mut().zip(m.data()) {
                    *o *= k;
                }
                Some(m)
            }
            _ => None,
        };
        caches.push(LayerCache { input: current, pre_activation: pre, mask });
        current = out;
    }
    Ok((current, ForwardCache { layers: caches }))
}

/// Eval-mode class probabilities in one call.
pub fn predict_proba(params: &MlpParams, batch: &Mat) -> Result<Mat, NnError> {
    let (logits, _) = forward(params, batch, Mode::Eval)?;
    Ok(softmax_rows(&logits))
}

/// Row-wise stabilized softmax.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Hard class indices or soft target distributions.
pub enum Targets<'a> {
    Hard(&'a [usize]),
    Soft(&'a Mat),
}

/// Mean cross-entropy and its gradient with respect to the logits:
/// `(softmax - target) / batch_size`.
pub fn softmax_xent(logits: &Mat, targets: Targets) -> Result<(f64, Mat), NnError> {
    let n = logits.rows();
    let k = logits.cols();
    match &targets {
        Targets::Hard(t) => {
            if t.len() != n {
                return Err(NnError::ShapeMismatch(format!("{} targets for {n} rows", t.len())));
            }
            if let Some(&bad) = t.iter().find(|&&c| c >= k) {
                return Err(NnError::ClassOutOfRange { class: bad, width: k });
            }
        }
        Targets::Soft(t) => {
            if t.rows() != n || t.cols() != k {
                return Err(NnError::ShapeMismatch(format!(
                    "soft targets {}x{} for logits {n}x{k}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
    }

    let probs = softmax_rows(logits);
    let mut grad = probs.clone();
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        match &targets {
            Targets::Hard(t) => {
                let c = t[i];
                loss -= probs.get(i, c).max(f64::MIN_POSITIVE).ln();
                let g = grad.row_mut(i);
                g[c] -= 1.0;
            }
            Targets::Soft(t) => {
                let trow = t.row(i);
                let g = grad.row_mut(i);
                for (c, &tc) in trow.iter().enumerate() {
                    if tc != 0.0 {
                        loss -= tc * probs.get(i, c).max(f64::MIN_POSITIVE).ln();
                    }
                    g[c] -= tc;
                }
            }
        }
        for v in grad.row_mut(i) {
            *v *= inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Per-layer gradients, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Mat, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            layers: params
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.w.rows(), l.w.cols()), vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (v, o) in w.data_mut().iter_mut().zip(ow.data()) {
                *v += scale * o;
            }
            for (v, o) in b.iter_mut().zip(ob) {
                *v += scale * o;
            }
        }
    }
}

/// Exact reverse-mode gradients through the affine/ReLU/dropout chain.
///
/// Returns the parameter gradients and the gradient with respect to the
/// network input (needed when two networks compose).
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_logits: &Mat) -> Result<(MlpGrads, Mat), NnError> {
    if cache.layers.len() != params.layers.len() {
        return Err(NnError::CacheMismatch(format!(
            "cache has {} layers, params {}",
            cache.layers.len(),
            params.layers.len()
        )));
    }
    let last = cache.layers.last().expect("at least one layer");
    if grad_logits.rows() != last.pre_activation.rows() || grad_logits.cols() != last.pre_activation.cols() {
        return Err(NnError::CacheMismatch("upstream gradient shape differs from cached logits".into()));
    }

    let mut grads = Vec::with_capacity(params.layers.len());
    let mut upstream = grad_logits.clone();
    for (layer, lc) in params.layers.iter().zip(&cache.layers).rev() {
        if let Some(mask) = &lc.mask {
            for (g, m) in upstream.data_mut().iter_mut().zip(mask.data()) {
                *g *= m;
            }
        }
        if layer.activation == Activation::Relu {
            for (g, z) in upstream.data_mut().iter_mut().zip(lc.pre_activation.data()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let dw = upstream.t_mul(&lc.input);
        let db = upstream.col_sums();
        upstream = upstream.mul(&layer.w);
        grads.push((dw, db));
    }
    grads.reverse();
    Ok((MlpGrads { layers: grads }, upstream))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<(Mat, Vec<f64>)>,
    v: Vec<(Mat, Vec<f64>)>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &MlpParams, hyper: AdamHyper) -> Self {
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.w.rows(), l.w.cols()), vec![0.0; l.b.len()]))
                .collect::<Vec<_>>()
        };
        AdamState { m: zeros(), v: zeros(), step: 0, hyper }
    }

    /// One optimizer step: decoupled weight decay (`p -= lr*wd*p`) first,
    /// then the bias-corrected Adam update.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<(), NnError> {
        if grads.layers.len() != params.layers.len() {
            return Err(NnError::ShapeMismatch("gradient layer count differs".into()));
        }
        for ((layer, (gw, gb)), (mw, mb)) in params.layers.iter().zip(&grads.layers).zip(&self.m) {
            if layer.w.rows() != gw.rows() || layer.w.cols() != gw.cols() || layer.b.len() != gb.len() {
                return Err(NnError::ShapeMismatch("gradient tensor shape differs".into()));
            }
            debug_assert_eq!(mw.rows(), gw.rows());
            debug_assert_eq!(mb.len(), gb.len());
        }

        self.step += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);

        for (li, layer) in params.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[li];
            let (mw, mb) = &mut self.m[li];
            let (vw, vb) = &mut self.v[li];

            let scalar_update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *p -= h.lr * h.weight_decay * *p;
                *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
            };

            for (((p, &g), m), v) in layer
                .w
                .data_mut()
                .iter_mut()
                .zip(gw.data())
                .zip(mw.data_mut())
                .zip(vw.data_mut())
            {
                scalar_update(p, g, m, v);
            }
            for (((p, &g), m), v) in layer.b.iter_mut().zip(gb).zip(mb.iter_mut()).zip(vb.iter_mut()) {
                scalar_update(p, g, m, v);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainControl {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub metric: MetricTag,
}

impl TrainControl {
    pub fn standard(seed: u64, metric: MetricTag) -> Self {
        TrainControl { max_epochs: 80, patience: 8, batch_size: 256, seed, metric }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLogEntry<S> {
    pub epoch: usize,
    pub stats: S,
    pub val_metric: f64,
}

/// Run epochs with patience-based early stopping on a validation metric
/// (higher is better). Returns the parameters from the best epoch, never the
/// last, plus the per-epoch log.
///
/// `run_epoch` consumes all minibatches of one epoch and reports
/// `(stats, n_batches)`; zero batches is an error.
pub fn train_with_early_stopping<P, S, E, V>(
    mut params: P,
    mut run_epoch: E,
    mut validate: V,
    control: &TrainControl,
) -> Result<(P, Vec<EpochLogEntry<S>>), NnError>
where
    P: Clone,
    E: FnMut(&mut P, usize) -> Result<(S, usize), NnError>,
    V: FnMut(&P) -> f64,
{
    assert!(control.patience <= control.max_epochs, "patience must not exceed max epochs");
    assert!(control.batch_size >= 1);
    let mut best_params = params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut bad_epochs = 0usize;
    let mut log = Vec::new();

    for epoch in 0..control.max_epochs {
        let (stats, n_batches) = run_epoch(&mut params, epoch)?;
        if n_batches == 0 {
            return Err(NnError::EmptyBatcher);
        }
        let val_metric = validate(&params);
        log.push(EpochLogEntry { epoch, stats, val_metric });
        if val_metric > best_metric {
            best_metric = val_metric;
            best_params = params.clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= control.patience {
                break;
            }
        }
    }
    Ok((best_params, log))
}

/// Seeded epoch shuffling chunked into minibatches; the trailing partial
/// batch is kept.
pub fn epoch_batches(n_rows: usize, batch_size: usize, run_seed: u64, slice_id: usize, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n_rows).collect();
    let mut rng = seed::rng(run_seed, &[seed::tag::EPOCH_SHUFFLE, slice_id as u64, epoch as u64]);
    idx.shuffle(&mut rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Gradient checking against central finite differences; shared by unit and
/// acceptance tests.
pub mod gradcheck {
    use super::*;

    pub const DEFAULT_EPS: f64 = 1e-5;

    /// `|a - b| / max(1, |a|, |b|)`: absolute near zero, relative when large.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
    }

    /// Central finite-difference gradient of `loss` with respect to every
    /// parameter of `params`, compared against `analytic`. Returns the worst
    /// relative error.
    pub fn max_param_rel_err<F>(params: &MlpParams, analytic: &MlpGrads, mut loss: F, eps: f64) -> f64
    where
        F: FnMut(&MlpParams) -> f64,
    {
        let mut worst = 0.0f64;
        let mut probe = params.clone();
        for li in 0..params.layers.len() {
            for idx in 0..params.layers[li].w.data().len() {
                let orig = probe.layers[li].w.data()[idx];
                probe.layers[li].w.data_mut()[idx] = orig + eps;
                let up = loss(&probe);
                probe.layers[li].w.data_mut()[idx] = orig - eps;
                let down = loss(&probe);
                probe.layers[li].w.data_mut()[idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max(rel_err(analytic.layers[li].0.data()[idx], numeric));
            }
            for idx in 0..params.layers[li].b.len() {
                let orig = probe.layers[li].b[idx];
                probe.layers[li].b[idx] = orig + eps;
                let up = loss(&probe);
                probe.layers[li].b[idx] = orig - eps;
                let down = loss(&probe);
                probe.layers[li].b[idx] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max(rel_err(analytic.layers[li].1[idx], numeric));
            }
        }
        worst
    }
}
