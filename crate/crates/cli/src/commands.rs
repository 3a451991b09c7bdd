use crate::manifest::Run;
use crate::{EncodeArgs, EvaluateArgs, GridArgs, KfoldArgs, ModelArgs, PredictArgs, SynthArgs, TrainArgs, VariantArg};
use anyhow::{bail, Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use vwg_core::corpus::{load_dataset, split_kfold, synth_generate, write_dataset, Dataset, FieldSchema, SynthConfig, SynthVariant};
use vwg_core::embed::{Embedder, EmbedderConfig};
use vwg_core::extract::FieldPrediction;
use vwg_core::grid::{encode_document, rasterize_target_mask, write_tensor, EncoderKind, GridSpec};
use vwg_core::metrics::{evaluate_dataset, Report};
use vwg_core::net::{param_count, ArchConfig, Variant};
use vwg_core::objective::{self, load_checkpoint, predict_dataset, save_checkpoint, AdamConfig, TrainConfig};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Accepts either a dataset directory or its `manifest.json`.
fn load(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    load_dataset(&manifest).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let run = Run::start("synth", a, Some(a.seed), &[]);
    let config = SynthConfig {
        num_docs: a.num as usize,
        variant: match a.variant {
            VariantArg::Text => SynthVariant::TextKeyed,
            VariantArg::Visual => SynthVariant::VisualKeyed,
        },
        image_width: a.width,
        image_height: a.height,
        seed: a.seed,
        schema: FieldSchema::invoice_default(),
    };
    let data = synth_generate(&config)?;
    let manifest = write_dataset(&a.out, &data).with_context(|| format!("writing {}", a.out.display()))?;
    run.finish(&a.out, &[&a.out])?;
    println!("wrote {} documents; manifest {}", data.len(), manifest.display());
    Ok(())
}

fn grid_spec(g: &GridArgs) -> Result<GridSpec> {
    Ok(GridSpec::new(g.grid.0, g.grid.1, g.dim as usize)?)
}

fn embedder(g: &GridArgs) -> Result<Embedder> {
    let config = EmbedderConfig {
        dim: g.dim as usize,
        seed: g.embed_seed,
        table_path: g.embeddings.as_ref().map(|p| p.display().to_string()),
        ..Default::default()
    };
    Ok(Embedder::from_config(config)?)
}

pub fn encode(a: &EncodeArgs) -> Result<()> {
    let run = Run::start("encode", a, None, &[&a.dataset]);
    let data = load(&a.dataset)?;
    let spec = grid_spec(&a.grid)?;
    let emb = embedder(&a.grid)?;
    create_dir(&a.out)?;
    let mut failures = 0;
    for ldoc in &data.docs {
        let id = &ldoc.document.id;
        let enc = match encode_document(a.encoder, &ldoc.document, &spec, &emb) {
            Ok(enc) => enc,
            Err(e) => {
                eprintln!("{id}: {e}");
                failures += 1;
                continue;
            }
        };
        write_tensor(&a.out.join(format!("{id}.main.vwgt")), &enc.main)?;
        if let Some(aux) = &enc.aux {
            write_tensor(&a.out.join(format!("{id}.aux.vwgt")), aux)?;
        }
        let mask = rasterize_target_mask(ldoc, &spec).to_tensor();
        write_tensor(&a.out.join(format!("{id}.mask.vwgt")), &mask)?;
    }
    run.finish(&a.out, &[&a.out])?;
    if failures > 0 {
        bail!("{failures} of {} documents could not be encoded", data.len());
    }
    println!(
        "encoded {} documents with {} ({} channels)",
        data.len(),
        a.encoder,
        a.encoder.main_channels(spec.dim)
    );
    Ok(())
}

fn arch_for(kind: EncoderKind, dim: usize, num_classes: usize, m: &ModelArgs) -> ArchConfig {
    ArchConfig {
        variant: if kind.is_dual() { Variant::Dual } else { Variant::Single },
        in_channels_main: kind.main_channels(dim),
        in_channels_aux: if kind.is_dual() { 3 } else { 0 },
        base_channels: m.base_channels as usize,
        depth: m.depth as usize,
        num_classes,
    }
}

fn train_config(kind: EncoderKind, seed: u64, m: &ModelArgs) -> TrainConfig {
    TrainConfig {
        epochs: m.epochs as usize,
        batch_size: m.batch_size as usize,
        seed,
        patience: m.patience as usize,
        encoder: kind,
        adam: AdamConfig {
            lr: m.lr,
            ..Default::default()
        },
        threads: None,
    }
}

fn ids(data: &Dataset, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| data.docs[i].document.id.clone()).collect()
}

pub fn history_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".history.json");
    ckpt.with_file_name(name)
}

#[derive(Serialize)]
struct TrainSplit {
    train: Vec<String>,
    validation: Vec<String>,
    test: Vec<String>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let run = Run::start("train", a, Some(a.seed), &[&a.dataset]);
    let data = load(&a.dataset)?;
    let spec = grid_spec(&a.grid)?;
    let emb = embedder(&a.grid)?;
    let arch = arch_for(a.encoder, spec.dim, data.schema.num_classes(), &a.model);
    spec.check_depth(arch.depth)?;
    let (train_set, val_set, split) = if a.all_docs {
        let all: Vec<usize> = (0..data.len()).collect();
        (
            data.clone(),
            data.clone(),
            TrainSplit {
                train: ids(&data, &all),
                validation: ids(&data, &all),
                test: vec![],
            },
        )
    } else {
        let folds = split_kfold(data.len(), 5, a.seed)?;
        let f = &folds[0];
        (
            data.subset(&f.train),
            data.subset(&f.validation),
            TrainSplit {
                train: ids(&data, &f.train),
                validation: ids(&data, &f.validation),
                test: ids(&data, &f.test),
            },
        )
    };
    let outcome = objective::train(&train_set, &val_set, &arch, &spec, &emb, &train_config(a.encoder, a.seed, &a.model))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_checkpoint(&a.out, &outcome.checkpoint).with_context(|| format!("writing {}", a.out.display()))?;
    let history = history_path(&a.out);
    write_json(&history, &outcome.history)?;
    let split_path = a.out.with_file_name(format!(
        "{}.split.json",
        a.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    write_json(&split_path, &split)?;
    run.finish(&a.out, &[&a.out, &history, &split_path])?;
    let meta = &outcome.checkpoint.meta;
    println!(
        "trained {} epochs; best validation mIoU {:.4} at epoch {}; {} parameters",
        meta.epochs_run,
        meta.best_val_miou,
        meta.epoch,
        param_count(&arch)
    );
    Ok(())
}

fn checkpoint_embedder(config: &EmbedderConfig) -> Result<Embedder> {
    Embedder::from_config(config.clone()).context("rebuilding the checkpoint's embedder")
}

pub fn prediction_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.pred.json"))
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let run = Run::start("predict", a, None, &[&a.ckpt, &a.dataset]);
    let ckpt = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let data = load(&a.dataset)?;
    if data.schema != ckpt.schema {
        bail!(
            "dataset fields {:?} differ from the checkpoint's {:?}",
            data.schema.fields,
            ckpt.schema.fields
        );
    }
    let emb = checkpoint_embedder(&ckpt.embedder)?;
    let preds = predict_dataset(&ckpt, &emb, &data)?;
    create_dir(&a.out)?;
    for p in &preds {
        let path = prediction_path(&a.out, &p.id);
        std::fs::write(&path, p.to_json(&data.schema)).with_context(|| format!("writing {}", path.display()))?;
    }
    run.finish(&a.out, &[&a.out])?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let run = Run::start("evaluate", a, None, &[&a.pred, &a.dataset]);
    let data = load(&a.dataset)?;
    let mut preds = Vec::with_capacity(data.len());
    for ldoc in &data.docs {
        let path = prediction_path(&a.pred, &ldoc.document.id);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        let pred = FieldPrediction::from_json(&text, &data.schema).with_context(|| format!("parsing {}", path.display()))?;
        if pred.id != ldoc.document.id {
            bail!("{} holds the prediction for {:?}", path.display(), pred.id);
        }
        preds.push(pred);
    }
    let report: Report = evaluate_dataset(&data, &preds)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(&a.out, report.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    run.finish(&a.out, &[&a.out])?;
    println!(
        "{} documents: WAR {:.4}, FAR {:.4}",
        report.per_doc.len(),
        report.dataset.war,
        report.dataset.far
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct FoldRun {
    seed: u64,
    fold: usize,
    war: f64,
    far: f64,
    best_val_miou: f64,
    epochs_run: usize,
}

#[derive(Debug, Serialize)]
struct AblationRow {
    #[serde(rename = "Approach")]
    approach: String,
    #[serde(rename = "FAR")]
    far: f64,
    #[serde(rename = "WAR")]
    war: f64,
    #[serde(rename = "#Parameters")]
    parameters: usize,
    runs: Vec<FoldRun>,
}

#[derive(Debug, Serialize)]
struct AblationTable {
    columns: [&'static str; 4],
    rows: Vec<AblationRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn kfold(a: &KfoldArgs) -> Result<()> {
    let run = Run::start("kfold", a, a.seeds.first().copied(), &[&a.dataset]);
    if a.encoders.is_empty() || a.seeds.is_empty() {
        bail!("at least one encoder and one seed are required");
    }
    let data = load(&a.dataset)?;
    let spec = grid_spec(&a.grid)?;
    let emb = embedder(&a.grid)?;
    create_dir(&a.out)?;
    let k = a.k as usize;
    let folds_to_run = a.max_folds.map_or(k, |m| (m as usize).min(k));
    let mut rows = Vec::new();
    for &kind in &a.encoders {
        let arch = arch_for(kind, spec.dim, data.schema.num_classes(), &a.model);
        spec.check_depth(arch.depth)?;
        let mut runs = Vec::new();
        for &seed in &a.seeds {
            let folds = split_kfold(data.len(), k, seed)?;
            for (fi, f) in folds.iter().take(folds_to_run).enumerate() {
                let outcome = objective::train(
                    &data.subset(&f.train),
                    &data.subset(&f.validation),
                    &arch,
                    &spec,
                    &emb,
                    &train_config(kind, seed, &a.model),
                )
                .with_context(|| format!("{kind}, seed {seed}, fold {fi}"))?;
                let test = data.subset(&f.test);
                let preds = predict_dataset(&outcome.checkpoint, &emb, &test)?;
                let report = evaluate_dataset(&test, &preds)?;
                eprintln!(
                    "{kind} seed {seed} fold {fi}: WAR {:.4} FAR {:.4}",
                    report.dataset.war, report.dataset.far
                );
                runs.push(FoldRun {
                    seed,
                    fold: fi,
                    war: report.dataset.war,
                    far: report.dataset.far,
                    best_val_miou: outcome.checkpoint.meta.best_val_miou,
                    epochs_run: outcome.checkpoint.meta.epochs_run,
                });
            }
        }
        rows.push(AblationRow {
            approach: kind.name().to_string(),
            far: mean(runs.iter().map(|r| r.far)),
            war: mean(runs.iter().map(|r| r.war)),
            parameters: param_count(&arch),
            runs,
        });
    }
    let table = AblationTable {
        columns: ["Approach", "FAR", "WAR", "#Parameters"],
        rows,
    };
    let path = a.out.join("ablation.json");
    write_json(&path, &table)?;
    run.finish(&a.out, &[&path])?;
    println!("{:<10} {:>8} {:>8} {:>12}", "Approach", "FAR", "WAR", "#Parameters");
    for r in &table.rows {
        println!(
            "{:<10} {:>7.1}% {:>7.1}% {:>12}",
            r.approach,
            100.0 * r.far,
            100.0 * r.war,
            r.parameters
        );
    }
    Ok(())
}
