//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; exits non-zero if any criterion fails.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- overfit`.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use vwg_core::corpus::{split_kfold, synth_generate, Dataset, FieldSchema, SynthConfig, SynthVariant};
use vwg_core::embed::Embedder;
use vwg_core::extract::decode_mask;
use vwg_core::grid::{
    encode_document, has_class_conflict, rasterize_target_mask, rasterize_vwg_pad, rasterize_wordgrid, read_tensor,
    write_tensor, EncoderKind, GridSpec, GridTensor, LabelMask,
};
use vwg_core::metrics::{evaluate_dataset, far, token_edit_distance, war, EditCounts};
use vwg_core::net::{
    backward, forward, forward_input, init_params, param_count, ArchConfig, NetError, NetInput, ParamSet, ProbMap,
    Variant,
};
use vwg_core::objective::{
    ce_loss, combined_loss, jaccard_loss, load_checkpoint, mean_iou, predict_dataset, save_checkpoint, train,
    Checkpoint, EncodedSample, TrainConfig, TrainingMeta,
};
use vwg_core::rng::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

struct GradCase {
    arch: ArchConfig,
    main: GridTensor,
    aux: Option<GridTensor>,
    mask: LabelMask,
    schema: FieldSchema,
}

fn grad_case(variant: Variant) -> Result<GradCase, String> {
    let schema = FieldSchema::new(["supplier", "total"]).map_err(err)?;
    let data = synth_generate(&SynthConfig {
        num_docs: 1,
        variant: SynthVariant::VisualKeyed,
        seed: 17,
        schema: schema.clone(),
        ..Default::default()
    })
    .map_err(err)?;
    let doc = &data.docs[0];
    let spec = GridSpec::new(16, 16, 8).map_err(err)?;
    let embedder = Embedder::hashed(8).map_err(err)?;
    let kind = match variant {
        Variant::Single => EncoderKind::VwgPad,
        Variant::Dual => EncoderKind::Vwg2Enc,
    };
    let enc = encode_document(kind, &doc.document, &spec, &embedder).map_err(err)?;
    let arch = ArchConfig {
        variant,
        in_channels_main: kind.main_channels(8),
        in_channels_aux: if kind.is_dual() { 3 } else { 0 },
        base_channels: 4,
        depth: 2,
        num_classes: schema.num_classes(),
    };
    Ok(GradCase {
        arch,
        main: enc.main,
        aux: enc.aux,
        mask: rasterize_target_mask(doc, &spec),
        schema,
    })
}

fn loss_and_pattern(case: &GradCase, params: &ParamSet<f64>) -> (f64, Vec<u32>) {
    let (probs, cache) = forward(params, &case.arch, &case.main, case.aux.as_ref()).unwrap();
    let (lv, _) = combined_loss(&probs, &case.mask, &case.schema).unwrap();
    (lv.total, cache.activation_pattern())
}

struct GradReport {
    checked: usize,
    max_rel: f64,
    worst: String,
    f32_dev: f64,
    aux_grad_norm: f64,
}

fn check_gradients(variant: Variant) -> Result<GradReport, String> {
    let case = grad_case(variant)?;
    // Zero biases leave pre-activations exactly at the ReLU kink wherever a
    // receptive field is all zero; the check runs at a generic point instead.
    let mut p32 = init_params(&case.arch, 23);
    let mut rng = Rng::new(99);
    for t in p32.tensors.iter_mut().filter(|t| t.name.ends_with(".bias")) {
        for v in &mut t.data {
            *v = (rng.next_signed() * 0.1) as f32;
        }
    }
    let p64: ParamSet<f64> = p32.cast();

    let (probs, cache) = forward(&p64, &case.arch, &case.main, case.aux.as_ref()).map_err(err)?;
    let (_, g) = combined_loss(&probs, &case.mask, &case.schema).map_err(err)?;
    let analytic = backward(&p64, &case.arch, &cache, &g).map_err(err)?;
    let base_pattern = cache.activation_pattern();

    let (probs32, cache32) = forward(&p32, &case.arch, &case.main, case.aux.as_ref()).map_err(err)?;
    let (_, g32) = combined_loss(&probs32, &case.mask, &case.schema).map_err(err)?;
    let analytic32 = backward(&p32, &case.arch, &cache32, &g32).map_err(err)?;
    let gmax = analytic.iter().fold(0f64, |m, v| m.max(v.abs()));
    let f32_dev = analytic
        .iter()
        .zip(analytic32.iter())
        .fold(0f64, |m, (a, b)| m.max((a - *b as f64).abs()))
        / gmax;

    let mut probe = p64.clone();
    let mut max_rel = 0f64;
    let mut worst = String::new();
    for i in 0..probe.num_scalars() {
        let x = probe.get_flat(i);
        // shrink the step until both evaluations stay in the linear piece of x
        let mut h = 1e-4;
        let fd = loop {
            probe.set_flat(i, x + h);
            let (lp, pp) = loss_and_pattern(&case, &probe);
            probe.set_flat(i, x - h);
            let (lm, pm) = loss_and_pattern(&case, &probe);
            probe.set_flat(i, x);
            if (pp != base_pattern || pm != base_pattern) && h > 1e-9 {
                h /= 10.0;
                continue;
            }
            break (lp - lm) / (2.0 * h);
        };
        let a = analytic.get_flat(i);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{} analytic {a:e} numeric {fd:e}", probe.name_of_flat(i));
        }
    }
    let aux_grad_norm = analytic
        .tensors
        .iter()
        .filter(|t| t.name.starts_with("aux."))
        .flat_map(|t| t.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    Ok(GradReport {
        checked: probe.num_scalars(),
        max_rel,
        worst,
        f32_dev,
        aux_grad_norm,
    })
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for variant in [Variant::Single, Variant::Dual] {
        let r = check_gradients(variant)?;
        ensure(r.max_rel < 1e-3, || {
            format!("{variant:?}: max relative error {:.3e} at {}", r.max_rel, r.worst)
        })?;
        ensure(r.f32_dev < 1e-3, || {
            format!("{variant:?}: f32 gradients deviate by {:.3e} of the largest entry", r.f32_dev)
        })?;
        if variant == Variant::Dual {
            ensure(r.aux_grad_norm > 0.0, || "image encoder receives no gradient".into())?;
        }
        notes.push(format!(
            "{variant:?}: {} params, max rel err {:.2e}, f32 dev {:.1e}",
            r.checked, r.max_rel, r.f32_dev
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{}; {secs:.1}s", notes.join("; ")))
}

// ---------------------------------------------------------------------------
// 2. loss identities

fn one_hot(mask: &LabelMask, k: usize) -> ProbMap<f32> {
    let mut data = vec![0.0; mask.data.len() * k];
    for (i, &t) in mask.data.iter().enumerate() {
        data[i * k + t as usize] = 1.0;
    }
    ProbMap {
        rows: mask.rows,
        cols: mask.cols,
        classes: k,
        data,
    }
}

fn criterion_losses() -> Outcome {
    let schema = FieldSchema::invoice_default();
    let k = schema.num_classes();
    let data = synth_generate(&SynthConfig {
        num_docs: 1,
        seed: 5,
        ..Default::default()
    })
    .map_err(err)?;
    let spec = GridSpec::new(64, 64, 8).map_err(err)?;
    let mask = rasterize_target_mask(&data.docs[0], &spec);

    let (ce, _) = ce_loss(&one_hot(&mask, k), &mask).map_err(err)?;
    ensure(ce == 0.0, || format!("CE on one-hot = {ce}"))?;
    let uniform = ProbMap {
        rows: 64,
        cols: 64,
        classes: k,
        data: vec![1.0 / k as f32; 64 * 64 * k],
    };
    let (ce_u, _) = ce_loss(&uniform, &mask).map_err(err)?;
    let ln = (k as f64).ln();
    ensure((ce_u - ln).abs() <= 1e-6, || format!("CE on uniform = {ce_u}, ln(K+1) = {ln}"))?;

    let (j0, _) = jaccard_loss(&one_hot(&mask, k), &mask, &schema).map_err(err)?;
    ensure(j0.abs() <= 1e-5, || format!("Jaccard on perfect match = {j0}"))?;

    // every class present, prediction shifted so no class overlaps itself
    let mut gt = LabelMask::zeros(8, 8);
    let mut shifted = LabelMask::zeros(8, 8);
    for c in 1..k as u16 {
        gt.set(c as usize, 0, c);
        shifted.set(c as usize, 4, c);
    }
    let (j1, _) = jaccard_loss(&one_hot(&shifted, k), &gt, &schema).map_err(err)?;
    ensure((j1 - 1.0).abs() <= 1e-5, || format!("Jaccard on disjoint masks = {j1}"))?;

    let mut rng = Rng::new(3);
    let mut data = Vec::with_capacity(64 * 64 * k);
    for _ in 0..64 * 64 {
        let raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.01).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| (v / s) as f32));
    }
    let random = ProbMap {
        rows: 64,
        cols: 64,
        classes: k,
        data,
    };
    let (lv, _) = combined_loss(&random, &mask, &schema).map_err(err)?;
    ensure(lv.total == lv.ce + lv.jaccard, || format!("{lv:?}"))?;
    Ok(format!(
        "CE(one-hot)={ce}, CE(uniform)-ln{k}={:.1e}, J(perfect)={j0:.1e}, J(disjoint)={j1:.6}",
        ce_u - ln
    ))
}

// ---------------------------------------------------------------------------
// 3. metric oracles

/// Exhaustive recursion over every alignment, minimizing (total, ins + del).
fn oracle(gt: &[u8], pred: &[u8]) -> (usize, usize, usize) {
    fn key(c: (usize, usize, usize)) -> (usize, usize) {
        (c.0 + c.1 + c.2, c.0 + c.1)
    }
    match (gt.split_first(), pred.split_first()) {
        (None, None) => (0, 0, 0),
        (Some(_), None) => (0, gt.len(), 0),
        (None, Some(_)) => (pred.len(), 0, 0),
        (Some((g, gr)), Some((p, pr))) => {
            let (i, d, s) = oracle(gr, pr);
            let diag = (i, d, s + usize::from(g != p));
            let (i, d, s) = oracle(gr, pred);
            let del = (i, d + 1, s);
            let (i, d, s) = oracle(gt, pr);
            let ins = (i + 1, d, s);
            [diag, del, ins].into_iter().min_by_key(|&c| key(c)).unwrap()
        }
    }
}

fn all_sequences(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for sym in 0..3u8 {
                let mut t: Vec<u8> = s.clone();
                t.push(sym);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn criterion_metrics() -> Outcome {
    let seqs = all_sequences(8);
    let names = ["a", "b", "c"];
    let mut pairs = 0usize;
    for g in &seqs {
        for p in seqs.iter().filter(|p| g.len() + p.len() <= 8) {
            let gs: Vec<&str> = g.iter().map(|&x| names[x as usize]).collect();
            let ps: Vec<&str> = p.iter().map(|&x| names[x as usize]).collect();
            let got = token_edit_distance(&gs, &ps);
            let (i, d, s) = oracle(g, p);
            let want = EditCounts {
                insertions: i,
                deletions: d,
                substitutions: s,
            };
            ensure(got == want, || format!("{gs:?} vs {ps:?}: {got:?} != {want:?}"))?;
            pairs += 1;
        }
    }

    let empty: [&str; 0] = [];
    let ed = |g: &[&str], p: &[&str]| token_edit_distance(g, p);
    let ec = |i, d, s| EditCounts {
        insertions: i,
        deletions: d,
        substitutions: s,
    };
    ensure(ed(&["a"], &["a"]) == ec(0, 0, 0), || "identity".into())?;
    ensure(token_edit_distance(&empty, &["x"]) == ec(1, 0, 0), || "pure insertion".into())?;
    ensure(ed(&["total", "due", "100"], &["total", "100"]) == ec(0, 1, 0), || "deletion".into())?;

    let f = |w: &[&str]| vec![w.iter().map(|s| s.to_string()).collect::<Vec<String>>()];
    let w1 = war(&f(&["a"]), &f(&["a"])).map_err(err)?.mean;
    let w2 = war(&f(&["total", "due", "100"]), &f(&["total", "100"])).map_err(err)?.mean;
    let w3 = war(&f(&["a", "b"]), &f(&["x", "y", "z"])).map_err(err)?.mean;
    ensure(w1 == 1.0, || format!("exact WAR {w1}"))?;
    ensure(w2 == 1.0 - 1.0 / 3.0, || format!("WAR {w2}"))?;
    ensure(w3 == -0.5, || format!("negative WAR {w3}"))?;

    let fields = |v: &[&[&str]]| -> Vec<Vec<String>> {
        v.iter().map(|w| w.iter().map(|s| s.to_string()).collect()).collect()
    };
    let gt = fields(&[&["a"], &["b", "c"], &["d"], &[]]);
    let f1 = far(&gt, &fields(&[&["a"], &["b"], &["e"], &[]]));
    let f2 = far(&gt, &gt);
    let f3 = far(&fields(&[&[]]), &fields(&[&["x"]]));
    ensure(f1 == 0.5 && f2 == 1.0 && f3 == 0.0, || format!("FAR {f1} {f2} {f3}"))?;
    Ok(format!("{pairs} sequence pairs match the oracle; WAR {w1}, {w2:.4}, {w3}; FAR {f1}, {f2}, {f3}"))
}

// ---------------------------------------------------------------------------
// 4. encoding exclusivity

fn criterion_exclusivity() -> Outcome {
    let data = synth_generate(&SynthConfig {
        num_docs: 100,
        variant: SynthVariant::VisualKeyed,
        seed: 404,
        ..Default::default()
    })
    .map_err(err)?;
    let d = 32;
    let spec = GridSpec::new(64, 64, d).map_err(err)?;
    let embedder = Embedder::hashed(d).map_err(err)?;
    let (mut text_cells, mut image_cells) = (0usize, 0usize);
    for ldoc in &data.docs {
        let doc = &ldoc.document;
        let pad = rasterize_vwg_pad(doc, &spec, &embedder).map_err(err)?;
        let wg = rasterize_wordgrid(doc, &spec, &embedder).map_err(err)?;
        ensure(pad.channels == d + 3, || format!("pad has {} channels", pad.channels))?;
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let cell = pad.cell(r, c);
                let (emb, rgb) = cell.split_at(d);
                let emb_zero = emb.iter().all(|&v| v == 0.0);
                let rgb_zero = rgb.iter().all(|&v| v == 0.0);
                ensure(emb_zero || rgb_zero, || format!("{} cell ({r},{c}) mixes modalities", doc.id))?;
                let same = emb.iter().zip(wg.cell(r, c)).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure(same, || format!("{} cell ({r},{c}) differs from the word grid", doc.id))?;
                if !emb_zero {
                    text_cells += 1;
                } else if !rgb_zero {
                    image_cells += 1;
                }
            }
        }
    }
    ensure(text_cells > 0 && image_cells > 0, || "degenerate encodings".into())?;
    Ok(format!("100 docs; {text_cells} text cells, {image_cells} image cells"))
}

// ---------------------------------------------------------------------------
// 5. overfit

fn criterion_overfit() -> Outcome {
    let start = Instant::now();
    let data = synth_generate(&SynthConfig {
        num_docs: 8,
        variant: SynthVariant::VisualKeyed,
        seed: 1,
        ..Default::default()
    })
    .map_err(err)?;
    let d = 16;
    let spec = GridSpec::new(64, 64, d).map_err(err)?;
    let embedder = Embedder::hashed(d).map_err(err)?;
    let kind = EncoderKind::VwgPad;
    let arch = ArchConfig::single(kind.main_channels(d), data.schema.num_classes())
        .with_base(8)
        .with_depth(3);
    let config = TrainConfig {
        epochs: 300,
        batch_size: 8,
        seed: 1,
        patience: 300,
        encoder: kind,
        ..Default::default()
    };
    // the training set doubles as the monitored set, so the kept parameters
    // are those with the best train mIoU
    let out = train(&data, &data, &arch, &spec, &embedder, &config).map_err(err)?;
    let samples: Vec<EncodedSample> =
        vwg_core::objective::encode_dataset(&data.docs, kind, &spec, &embedder).map_err(err)?;
    let miou = mean_iou(&out.checkpoint.params, &arch, &samples, &data.schema).map_err(err)?;
    let preds = predict_dataset(&out.checkpoint, &embedder, &data).map_err(err)?;
    let report = evaluate_dataset(&data, &preds).map_err(err)?;
    let first = out
        .history
        .iter()
        .find(|h| h.val_miou >= 0.95)
        .map(|h| h.epoch);

    let replay = train(
        &data,
        &data,
        &arch,
        &spec,
        &embedder,
        &TrainConfig {
            epochs: 5,
            ..config.clone()
        },
    )
    .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(replay.history[..] == out.history[..5], || "training is not deterministic".into())?;
    ensure(miou >= 0.95, || format!("train mIoU {miou:.4} after {} epochs", out.history.len()))?;
    ensure(report.dataset.far == 1.0, || format!("train FAR {}", report.dataset.far))?;
    ensure(secs <= 900.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "train mIoU {miou:.4}, FAR {}, mIoU >= 0.95 first at epoch {}; {secs:.0}s",
        report.dataset.far,
        first.map_or("-".to_string(), |e| e.to_string())
    ))
}

// ---------------------------------------------------------------------------
// 6. modality ablation

fn ablation_war(data: &Dataset, kind: EncoderKind, seed: u64) -> Result<f64, String> {
    let d = 16;
    let spec = GridSpec::new(64, 64, d).map_err(err)?;
    let embedder = Embedder::hashed(d).map_err(err)?;
    let folds = split_kfold(data.len(), 5, seed).map_err(err)?;
    let fold = &folds[0];
    let arch = ArchConfig::single(kind.main_channels(d), data.schema.num_classes())
        .with_base(8)
        .with_depth(3);
    let config = TrainConfig {
        epochs: 20,
        seed,
        encoder: kind,
        ..Default::default()
    };
    let out = train(
        &data.subset(&fold.train),
        &data.subset(&fold.validation),
        &arch,
        &spec,
        &embedder,
        &config,
    )
    .map_err(err)?;
    let test = data.subset(&fold.test);
    let preds = predict_dataset(&out.checkpoint, &embedder, &test).map_err(err)?;
    Ok(evaluate_dataset(&test, &preds).map_err(err)?.dataset.war)
}

fn criterion_ablation() -> Outcome {
    let start = Instant::now();
    let data = synth_generate(&SynthConfig {
        num_docs: 200,
        variant: SynthVariant::VisualKeyed,
        seed: 2024,
        ..Default::default()
    })
    .map_err(err)?;
    let folds = split_kfold(200, 5, 0).map_err(err)?;
    let f = &folds[0];
    ensure(
        (f.train.len(), f.validation.len(), f.test.len()) == (160, 20, 20),
        || "unexpected split sizes".into(),
    )?;
    let mut means = Vec::new();
    for kind in [EncoderKind::Layout, EncoderKind::WordGrid, EncoderKind::VwgPad] {
        let wars = (0..3)
            .map(|seed| ablation_war(&data, kind, seed))
            .collect::<Result<Vec<_>, _>>()?;
        means.push((kind, wars.iter().sum::<f64>() / 3.0));
    }
    let summary = means
        .iter()
        .map(|(k, w)| format!("{k} {:.1}%", 100.0 * w))
        .collect::<Vec<_>>()
        .join(", ");
    let (layout, wordgrid, pad) = (means[0].1, means[1].1, means[2].1);
    let secs = start.elapsed().as_secs_f64();
    ensure(pad >= wordgrid && wordgrid >= layout, || format!("ordering violated: {summary}"))?;
    ensure(pad - layout >= 0.05, || format!("gap below 5 points: {summary}"))?;
    ensure(secs <= 7200.0, || format!("took {secs:.0}s"))?;
    Ok(format!("mean test WAR {summary}; {secs:.0}s"))
}

// ---------------------------------------------------------------------------
// 7. parameter accounting

fn symbolic_count(arch: &ArchConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
    let w = |s: usize| arch.base_channels * (1 << s);
    let encoders = if arch.variant == Variant::Dual { 2 } else { 1 };
    let mut total = 0;
    let mut inputs = vec![arch.in_channels_main];
    if encoders == 2 {
        inputs.push(arch.in_channels_aux);
    }
    for &cin in &inputs {
        let mut c = cin;
        for s in 0..arch.depth {
            total += conv(c, w(s), 3) + conv(w(s), w(s), 3);
            c = w(s);
        }
    }
    total += conv(encoders * w(arch.depth - 1), w(arch.depth), 3) + conv(w(arch.depth), w(arch.depth), 3);
    for s in 0..arch.depth {
        total += conv(w(s + 1), w(s), 3) + conv((1 + encoders) * w(s), w(s), 3) + conv(w(s), w(s), 3);
    }
    total + conv(w(0), arch.num_classes, 1)
}

fn criterion_params() -> Outcome {
    let mut lines = Vec::new();
    for (base, depth, d) in [(4, 2, 8), (8, 3, 16), (16, 3, 32), (6, 4, 5)] {
        let single = ArchConfig::single(d + 3, 5).with_base(base).with_depth(depth);
        let dual = ArchConfig::dual(d, 5).with_base(base).with_depth(depth);
        for arch in [single, dual] {
            let n = param_count(&arch);
            let want = symbolic_count(&arch);
            let enumerated = ParamSet::<f32>::zeros(&arch).num_scalars();
            ensure(n == want && n == enumerated, || {
                format!("{arch:?}: param_count {n}, symbolic {want}, tensors {enumerated}")
            })?;
        }
        let same_inputs = ArchConfig::single(d, 5).with_base(base).with_depth(depth);
        ensure(param_count(&dual) > param_count(&same_inputs), || "dual count not larger".into())?;
        ensure(param_count(&dual) > param_count(&single), || "dual count not above vwg-pad".into())?;
        lines.push(format!("base {base} depth {depth}: {} vs {}", param_count(&single), param_count(&dual)));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------
// 8. k-fold contract

fn criterion_kfold() -> Outcome {
    let folds = split_kfold(100, 5, 7).map_err(err)?;
    ensure(folds.len() == 5, || "fold count".into())?;
    let mut held_out = Vec::new();
    let mut tests: Vec<BTreeSet<usize>> = Vec::new();
    for f in &folds {
        ensure(
            (f.train.len(), f.validation.len(), f.test.len()) == (80, 10, 10),
            || format!("sizes {} {} {}", f.train.len(), f.validation.len(), f.test.len()),
        )?;
        let all: BTreeSet<usize> = f.train.iter().chain(&f.validation).chain(&f.test).copied().collect();
        ensure(all.len() == 100, || "fold does not partition the dataset".into())?;
        held_out.extend(f.validation.iter().chain(&f.test).copied());
        tests.push(f.test.iter().copied().collect());
    }
    for i in 0..tests.len() {
        for j in i + 1..tests.len() {
            ensure(tests[i].is_disjoint(&tests[j]), || format!("test folds {i} and {j} overlap"))?;
        }
    }
    held_out.sort_unstable();
    ensure(held_out == (0..100).collect::<Vec<_>>(), || "held-out folds do not tile".into())?;
    ensure(split_kfold(100, 5, 7).map_err(err)? == folds, || "not reproducible".into())?;
    ensure(split_kfold(100, 5, 8).map_err(err)? != folds, || "seed has no effect".into())?;
    Ok("5 folds of 80/10/10, disjoint tests, held-out folds tile 100 docs".into())
}

// ---------------------------------------------------------------------------
// 9. persistence

fn criterion_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let data = synth_generate(&SynthConfig {
        num_docs: 2,
        seed: 9,
        ..Default::default()
    })
    .map_err(err)?;
    let d = 8;
    let spec = GridSpec::new(32, 32, d).map_err(err)?;
    let embedder = Embedder::hashed(d).map_err(err)?;
    let mut tensors = 0;
    for kind in EncoderKind::ALL {
        let enc = encode_document(kind, &data.docs[0].document, &spec, &embedder).map_err(err)?;
        for (i, t) in std::iter::once(&enc.main).chain(enc.aux.as_ref()).enumerate() {
            let path = dir.path().join(format!("{kind}-{i}.vwgt"));
            write_tensor(&path, t).map_err(err)?;
            let back = read_tensor(&path).map_err(err)?;
            ensure(back.shape() == t.shape(), || format!("{kind} shape changed"))?;
            ensure(
                back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()),
                || format!("{kind} tensor changed"),
            )?;
            tensors += 1;
        }
    }

    let mut runs = 0;
    for kind in [EncoderKind::VwgPad, EncoderKind::Vwg2Enc] {
        let arch = ArchConfig {
            variant: if kind.is_dual() { Variant::Dual } else { Variant::Single },
            in_channels_main: kind.main_channels(d),
            in_channels_aux: if kind.is_dual() { 3 } else { 0 },
            base_channels: 4,
            depth: 2,
            num_classes: data.schema.num_classes(),
        };
        let ckpt = Checkpoint {
            arch,
            schema: data.schema.clone(),
            grid: spec,
            embedder: embedder.config().clone(),
            encoder: kind,
            params: init_params(&arch, 31),
            meta: TrainingMeta {
                epoch: 1,
                epochs_run: 1,
                best_val_miou: 0.5,
                seed: 31,
            },
        };
        let path = dir.path().join(format!("{kind}.vwgm"));
        save_checkpoint(&path, &ckpt).map_err(err)?;
        let back = load_checkpoint(&path).map_err(err)?;
        ensure(back == ckpt, || format!("{kind} checkpoint changed"))?;
        let enc = encode_document(kind, &data.docs[1].document, &spec, &embedder).map_err(err)?;
        let input = NetInput::from_grids(&enc.main, enc.aux.as_ref());
        let (a, _) = forward_input(&ckpt.params, &arch, &input).map_err(err)?;
        let (b, _) = forward_input(&back.params, &back.arch, &input).map_err(err)?;
        ensure(
            a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()),
            || format!("{kind} forward differs after reload"),
        )?;
        if kind.is_dual() {
            let single_input = NetInput::from_grids(&enc.main, None);
            ensure(
                matches!(forward_input(&back.params, &back.arch, &single_input), Err(NetError::ShapeMismatch(_))),
                || "dual checkpoint accepted single-encoder input".into(),
            )?;
        }
        runs += 1;
    }
    Ok(format!("{tensors} tensor files and {runs} checkpoints round-trip bit-exactly"))
}

// ---------------------------------------------------------------------------
// 10. decode round trip

fn criterion_decode() -> Outcome {
    let data = synth_generate(&SynthConfig {
        num_docs: 400,
        variant: SynthVariant::VisualKeyed,
        seed: 77,
        ..Default::default()
    })
    .map_err(err)?;
    let spec = GridSpec::new(64, 64, 8).map_err(err)?;
    let mut checked = 0;
    let mut skipped = 0;
    for ldoc in &data.docs {
        if checked == 100 {
            break;
        }
        if has_class_conflict(ldoc, &spec) {
            skipped += 1;
            continue;
        }
        let mask = rasterize_target_mask(ldoc, &spec);
        let pred = decode_mask(&ldoc.document, &mask, &spec, &data.schema);
        let gt_tokens = ldoc.gt_field_tokens(&data.schema);
        let gt_texts = ldoc.gt_field_texts(&data.schema);
        for f in 0..data.schema.k() {
            ensure(pred.fields[f].tokens == gt_tokens[f], || {
                format!("{} field {f}: {:?} vs {:?}", ldoc.document.id, pred.fields[f].tokens, gt_tokens[f])
            })?;
            ensure(pred.fields[f].text == gt_texts[f].join(" "), || {
                format!("{} field {f} text differs", ldoc.document.id)
            })?;
        }
        checked += 1;
    }
    ensure(checked == 100, || format!("only {checked} conflict-free documents"))?;
    Ok(format!("100 conflict-free docs reproduced exactly ({skipped} skipped for shared cells)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient check", criterion_gradients),
        ("loss identities", criterion_losses),
        ("metric oracles", criterion_metrics),
        ("encoding exclusivity", criterion_exclusivity),
        ("overfit", criterion_overfit),
        ("modality ablation", criterion_ablation),
        ("parameter accounting", criterion_params),
        ("k-fold contract", criterion_kfold),
        ("persistence", criterion_persistence),
        ("decode round trip", criterion_decode),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let line = match result {
            Ok(detail) => format!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                format!("criterion {:>2} {name}: FAIL ({why})", i + 1)
            }
        };
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
