//! Losses, the Adam optimizer, the training loop and checkpoints.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    encode_dataset, mean_iou, predict_dataset, predict_document, train, EncodedSample, EpochRecord, TrainConfig,
    TrainOutcome,
};

use crate::corpus::FieldSchema;
use crate::grid::{GridError, LabelMask};
use crate::metrics::MetricsError;
use crate::net::{NetError, ParamSet, ProbMap, Scalar};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Smoothing constant of the soft Jaccard ratio.
pub const JACCARD_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub ce: f64,
    pub jaccard: f64,
    pub total: f64,
}

fn check_shapes<T>(probs: &ProbMap<T>, mask: &LabelMask) -> Result<(), ObjectiveError> {
    if (probs.rows, probs.cols) != (mask.rows, mask.cols) {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "probabilities are {}x{}, mask is {}x{}",
            probs.rows, probs.cols, mask.rows, mask.cols
        )));
    }
    if let Some(&bad) = mask.data.iter().find(|&&v| v as usize >= probs.classes) {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "mask class {bad} outside {} classes",
            probs.classes
        )));
    }
    Ok(())
}

/// Mean per-cell cross-entropy and its gradient with respect to the logits.
pub fn ce_loss<T: Scalar>(probs: &ProbMap<T>, mask: &LabelMask) -> Result<(f64, Vec<T>), ObjectiveError> {
    check_shapes(probs, mask)?;
    let n = probs.cells();
    let k = probs.classes;
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); n * k];
    for (i, &t) in mask.data.iter().enumerate() {
        let cell = &probs.data[i * k..(i + 1) * k];
        loss -= cell[t as usize].as_f64().max(PROB_FLOOR).ln();
        for c in 0..k {
            let target = if c == t as usize { T::one() } else { T::zero() };
            grad[i * k + c] = (cell[c] - target) * inv_n;
        }
    }
    Ok((loss / n as f64, grad))
}

/// `1 - mean_c J_c` over foreground classes and its gradient with respect to
/// the probabilities (background entries are zero).
pub fn jaccard_loss<T: Scalar>(probs: &ProbMap<T>, mask: &LabelMask, schema: &FieldSchema) -> Result<(f64, Vec<T>), ObjectiveError> {
    check_shapes(probs, mask)?;
    let k = probs.classes;
    if k != schema.num_classes() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "{} probability classes for a schema of {} fields",
            k,
            schema.k()
        )));
    }
    let fg = schema.k();
    let eps = T::from_f64_lossy(JACCARD_EPS);
    let mut inter = vec![T::zero(); k];
    let mut union = vec![T::zero(); k];
    for (i, &t) in mask.data.iter().enumerate() {
        for c in 1..k {
            let p = probs.data[i * k + c];
            if t as usize == c {
                inter[c] = inter[c] + p;
                union[c] = union[c] + T::one();
            } else {
                union[c] = union[c] + p;
            }
        }
    }
    let mut mean_j = 0.0;
    for c in 1..k {
        mean_j += ((inter[c] + eps) / (union[c] + eps)).as_f64();
    }
    mean_j /= fg as f64;
    let scale = -T::one() / T::from_usize(fg).unwrap();
    let mut grad = vec![T::zero(); probs.data.len()];
    for (i, &t) in mask.data.iter().enumerate() {
        for c in 1..k {
            let (num, den) = (inter[c] + eps, union[c] + eps);
            // d(p t)/dp = t, d(p + t - p t)/dp = 1 - t
            let d = if t as usize == c {
                T::one() / den
            } else {
                -num / (den * den)
            };
            grad[i * k + c] = scale * d;
        }
    }
    Ok((1.0 - mean_j, grad))
}

/// Pulls a gradient with respect to probabilities back through the per-cell
/// softmax: `dz_k = p_k (g_k - sum_j p_j g_j)`.
pub fn softmax_backward<T: Scalar>(probs: &ProbMap<T>, grad_probs: &[T]) -> Vec<T> {
    let k = probs.classes;
    let mut out = vec![T::zero(); grad_probs.len()];
    for ((p, g), o) in probs
        .data
        .chunks(k)
        .zip(grad_probs.chunks(k))
        .zip(out.chunks_mut(k))
    {
        let dot = p.iter().zip(g).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        for c in 0..k {
            o[c] = p[c] * (g[c] - dot);
        }
    }
    out
}

/// Cross-entropy plus soft Jaccard, with the gradient of the sum with
/// respect to the logits.
pub fn combined_loss<T: Scalar>(probs: &ProbMap<T>, mask: &LabelMask, schema: &FieldSchema) -> Result<(LossValue, Vec<T>), ObjectiveError> {
    let (ce, mut grad) = ce_loss(probs, mask)?;
    let (jaccard, gj) = jaccard_loss(probs, mask, schema)?;
    for (g, j) in grad.iter_mut().zip(softmax_backward(probs, &gj)) {
        *g = *g + j;
    }
    Ok((
        LossValue {
            ce,
            jaccard,
            total: ce + jaccard,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamSet<f32>,
    pub v: ParamSet<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet<f32>, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if a gradient is
/// non-finite or shapes disagree.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet<f32>, grads: &ParamSet<f32>) -> Result<(), ObjectiveError> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(ObjectiveError::ShapeMismatch(
            "gradients, moments and parameters differ in shape".into(),
        ));
    }
    if let Some(t) = grads.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(ObjectiveError::NonFiniteGradient(t.name.clone()));
    }
    state.t += 1;
    let c = state.config;
    let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
    let bc1 = (1.0 - c.beta1.powi(state.t as i32)) as f32;
    let bc2 = (1.0 - c.beta2.powi(state.t as i32)) as f32;
    let (lr, eps) = (c.lr as f32, c.eps as f32);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.m.tensors)
        .zip(&mut state.v.tensors)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
