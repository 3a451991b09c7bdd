use super::{adam_step, combined_loss, AdamConfig, AdamState, Checkpoint, ObjectiveError, TrainingMeta};
use crate::corpus::{Dataset, Document, FieldSchema, LabeledDocument};
use crate::embed::Embedder;
use crate::extract::{argmax_mask, decode_fields, FieldPrediction};
use crate::grid::{encode_document, rasterize_target_mask, EncoderKind, GridSpec, LabelMask};
use crate::metrics::iou_metric;
use crate::net::{backward, forward_input, init_params, predict, ArchConfig, NetInput, ParamSet};
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without a validation mIoU improvement before stopping.
    pub patience: usize,
    pub encoder: EncoderKind,
    pub adam: AdamConfig,
    /// Worker threads for per-sample passes; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            seed: 0,
            patience: 20,
            encoder: EncoderKind::VwgPad,
            adam: AdamConfig::default(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// A document encoded for the network together with its target mask.
#[derive(Debug, Clone)]
pub struct EncodedSample {
    pub input: NetInput<f32>,
    pub target: LabelMask,
}

pub fn encode_dataset(
    docs: &[LabeledDocument],
    kind: EncoderKind,
    spec: &GridSpec,
    embedder: &Embedder,
) -> Result<Vec<EncodedSample>, ObjectiveError> {
    docs.iter()
        .map(|d| {
            let enc = encode_document(kind, &d.document, spec, embedder)?;
            Ok(EncodedSample {
                input: NetInput::from_grids(&enc.main, enc.aux.as_ref()),
                target: rasterize_target_mask(d, spec),
            })
        })
        .collect()
}

/// Mean over samples of the foreground mean IoU of the argmax prediction.
pub fn mean_iou(
    params: &ParamSet<f32>,
    arch: &ArchConfig,
    samples: &[EncodedSample],
    schema: &FieldSchema,
) -> Result<f64, ObjectiveError> {
    let ious = samples
        .par_iter()
        .map(|s| {
            let probs = predict(params, arch, &s.input)?;
            Ok(iou_metric(&argmax_mask(&probs), &s.target, schema)?)
        })
        .collect::<Result<Vec<f64>, ObjectiveError>>()?;
    if ious.is_empty() {
        return Err(ObjectiveError::EmptySplit("evaluation"));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

fn check_config(
    train_docs: &Dataset,
    val_docs: &Dataset,
    arch: &ArchConfig,
    spec: &GridSpec,
    embedder: &Embedder,
    config: &TrainConfig,
) -> Result<(), ObjectiveError> {
    let bad = |m: String| Err(ObjectiveError::InvalidConfig(m));
    if train_docs.is_empty() {
        return Err(ObjectiveError::EmptySplit("train"));
    }
    if val_docs.is_empty() {
        return Err(ObjectiveError::EmptySplit("validation"));
    }
    if config.batch_size == 0 {
        return bad("batch_size must be at least 1".into());
    }
    if config.patience == 0 {
        return bad("patience must be at least 1".into());
    }
    if config.epochs == 0 {
        return bad("epochs must be at least 1".into());
    }
    if config.threads == Some(0) {
        return bad("threads must be at least 1".into());
    }
    arch.validate()?;
    spec.validate()?;
    spec.check_depth(arch.depth)?;
    if config.encoder.is_dual() != (arch.variant == crate::net::Variant::Dual)
        || config.encoder.main_channels(spec.dim) != arch.in_channels_main
    {
        return bad(format!(
            "encoder {} does not match the architecture's inputs",
            config.encoder
        ));
    }
    if config.encoder.needs_embedder() && embedder.dim() != spec.dim {
        return bad(format!(
            "embedder dimension {} differs from grid dimension {}",
            embedder.dim(),
            spec.dim
        ));
    }
    if arch.num_classes != train_docs.schema.num_classes() || train_docs.schema != val_docs.schema {
        return bad("schema does not match the architecture's class count".into());
    }
    Ok(())
}

fn run_with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Trains from a seeded initialization and returns the parameters with the
/// best validation mIoU.
pub fn train(
    train_docs: &Dataset,
    val_docs: &Dataset,
    arch: &ArchConfig,
    spec: &GridSpec,
    embedder: &Embedder,
    config: &TrainConfig,
) -> Result<TrainOutcome, ObjectiveError> {
    check_config(train_docs, val_docs, arch, spec, embedder, config)?;
    run_with_threads(config.threads, || {
        train_inner(train_docs, val_docs, arch, spec, embedder, config)
    })
}

fn train_inner(
    train_docs: &Dataset,
    val_docs: &Dataset,
    arch: &ArchConfig,
    spec: &GridSpec,
    embedder: &Embedder,
    config: &TrainConfig,
) -> Result<TrainOutcome, ObjectiveError> {
    let schema = &train_docs.schema;
    let train_set = encode_dataset(&train_docs.docs, config.encoder, spec, embedder)?;
    let val_set = encode_dataset(&val_docs.docs, config.encoder, spec, embedder)?;

    let mut params = init_params(arch, config.seed);
    let mut adam = AdamState::new(&params, config.adam);
    let mut rng = Rng::with_stream(config.seed, 0x7EA1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let (probs, cache) = forward_input(&params, arch, &s.input)?;
                    let (loss, grad) = combined_loss(&probs, &s.target, schema)?;
                    let g = backward(&params, arch, &cache, &grad)?;
                    Ok((loss.total, g))
                })
                .collect::<Result<Vec<_>, ObjectiveError>>()?;
            let mut grads = params.zeros_like();
            for (loss, g) in &results {
                loss_sum += loss;
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut adam, &mut params, &grads)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        if !train_loss.is_finite() || !params.all_finite() {
            return Err(ObjectiveError::NonFiniteLoss(epoch));
        }
        let val_miou = mean_iou(&params, arch, &val_set, schema)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_miou,
        });
        if val_miou > best.0 {
            best = (val_miou, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (best_val_miou, best_epoch, best_params) = best;
    let checkpoint = Checkpoint {
        arch: *arch,
        schema: schema.clone(),
        grid: *spec,
        embedder: embedder.config().clone(),
        encoder: config.encoder,
        params: best_params,
        meta: TrainingMeta {
            epoch: best_epoch,
            epochs_run: history.len(),
            best_val_miou,
            seed: config.seed,
        },
    };
    Ok(TrainOutcome { checkpoint, history })
}

/// Field prediction for one document with a trained checkpoint.
pub fn predict_document(
    checkpoint: &Checkpoint,
    embedder: &Embedder,
    doc: &Document,
) -> Result<FieldPrediction, ObjectiveError> {
    let enc = encode_document(checkpoint.encoder, doc, &checkpoint.grid, embedder)?;
    let input = NetInput::from_grids(&enc.main, enc.aux.as_ref());
    let probs = predict(&checkpoint.params, &checkpoint.arch, &input)?;
    Ok(decode_fields(doc, &probs, &checkpoint.grid, &checkpoint.schema))
}

pub fn predict_dataset(
    checkpoint: &Checkpoint,
    embedder: &Embedder,
    dataset: &Dataset,
) -> Result<Vec<FieldPrediction>, ObjectiveError> {
    if dataset.schema != checkpoint.schema {
        return Err(ObjectiveError::ShapeMismatch(
            "dataset schema differs from the checkpoint's".into(),
        ));
    }
    dataset
        .docs
        .par_iter()
        .map(|d| predict_document(checkpoint, embedder, &d.document))
        .collect()
}
