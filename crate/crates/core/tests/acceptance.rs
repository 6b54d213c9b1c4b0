//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signlab::eval::{confusion_matrix, macro_prf, per_class, topk_accuracy};
use signlab::ingest::{frc_resample, ClipManifest, ClipTensor, FrameRate, ManifestRecord};
use signlab::models::{
    comparison_count, mae_reconstruct, random_frames, tube_mask, AttentionVariant, Family,
    GridDims, ModelConfig, Pooling, VideoModel,
};
use signlab::sampling::{
    clip_duration, duplicate_jitter, JitterSpec, SamplerConfig, TransformSpec,
};
use signlab::splits::{signer_split, stratified_kfold, verify_no_leakage};
use signlab::tensor::ops::GeluVariant;
use signlab::tensor::{
    finite_diff_grad, relative_error, AttentionBlock, AttentionPlan, HeadSegment, Tape, Tensor,
    Var,
};
use signlab::train::{
    loss_curve_csv, synth_dataset, train_loop, LabeledClip, SynthConfig, TrainConfig,
    TrainOutcome,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn clip_durations() -> Outcome {
    let models = [("ViViT", 32), ("VideoMAE", 16), ("Timesformer", 8)];
    // dataset, fps, sample rates per model, published duration, exact formula value
    let rows: [(&str, u32, [usize; 3], f64, Ratio<u64>); 4] = [
        ("BdSLW60", 30, [4, 8, 16], 4.27, Ratio::new(64, 15)),
        ("BdSLW401", 30, [5, 10, 20], 5.34, Ratio::new(16, 3)),
        ("LSA64", 60, [6, 12, 24], 3.2, Ratio::new(16, 5)),
        ("WLASL", 25, [4, 8, 16], 5.2, Ratio::new(128, 25)),
    ];
    let mut notes = Vec::new();
    for (dataset, fps, rates, published, exact) in rows {
        for ((model, frames), rate) in models.iter().zip(rates) {
            let cfg = SamplerConfig::new(*frames, rate, FrameRate::whole(fps)).map_err(|e| e.to_string())?;
            let d = clip_duration(&cfg);
            ensure(d.0 == exact, format!("{dataset}/{model}: {} != {exact}", d.0))?;
            if matches!(dataset, "BdSLW60" | "LSA64") {
                ensure(
                    (d.seconds() - published).abs() <= 0.01,
                    format!("{dataset}/{model}: {} s vs {published} s", d.seconds()),
                )?;
            }
        }
        let secs = *exact.numer() as f64 / *exact.denom() as f64;
        if format!("{secs:.2}") != format!("{published:.2}") {
            notes.push(format!("{dataset} formula {secs:.4} s vs table {published} s"));
        }
    }
    Ok(format!("12 rows; discrepancies: {}", notes.join("; ")))
}

// ---------------------------------------------------------------- 2

fn comparison_counts() -> Outcome {
    use AttentionVariant::*;
    let mut checked = 0;
    for n in [4, 16, 64, 196] {
        for f in [1, 2, 4, 8] {
            let expected = [(Spatial, n + 1), (JointSpaceTime, n * f + 1), (DividedSpaceTime, n + f + 2)];
            for (variant, want) in expected {
                let c = comparison_count(variant, n, f).map_err(|e| e.to_string())?;
                ensure(
                    c.instrumented == want && c.closed_form == Some(want),
                    format!("{} N={n} F={f}: {c:?}, expected {want}", variant.name()),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (variant, N, F) tallies equal N+1, NF+1, N+F+2"))
}

// ---------------------------------------------------------------- 3

fn tube_masks() -> Outcome {
    let dims = GridDims { t: 8, h: 14, w: 14 };
    let total = 8 * 14 * 14;
    let mut range = (f64::INFINITY, 0.0f64);
    for ratio in [0.90, 0.95] {
        for seed in 0..1000u64 {
            let plan = tube_mask(dims, ratio, seed).map_err(|e| e.to_string())?;
            let mask = plan.token_mask();
            ensure(mask.len() == total, "mask length")?;
            let first = &mask[..196];
            for t in 1..8 {
                ensure(&mask[t * 196..(t + 1) * 196] == first, format!("seed {seed}: slice {t} differs"))?;
            }
            let visible = mask.iter().filter(|&&m| !m).count();
            ensure(visible == plan.visible_indices().len(), "visible count")?;
            let frac = visible as f64 / total as f64;
            ensure((0.05..=0.103).contains(&frac), format!("ratio {ratio} seed {seed}: visible {frac}"))?;
            range = (range.0.min(frac), range.1.max(frac));
        }
    }
    Ok(format!("2000 plans temporally uniform, visible fraction in [{:.4}, {:.4}]", range.0, range.1))
}

// ---------------------------------------------------------------- 4

const GRAD_TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Checks every input gradient of `f` against central differences, using a
/// fixed random projection of the output as the scalar loss.
fn check_kernel(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let build = |tape: &mut Tape<f64>, xs: &[Tensor<f64>]| {
        let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
        let out = f(tape, &vars);
        (vars, out)
    };
    let mut probe_tape = Tape::new();
    let (_, out) = build(&mut probe_tape, &inputs);
    let w = random(probe_tape.value(out).shape(), &mut rng);
    let scalar = |tape: &mut Tape<f64>, out: Var| {
        let wv = tape.input(w.clone());
        let p = tape.mul(out, wv).unwrap();
        tape.sum(p)
    };
    let mut tape = Tape::new();
    let (vars, out) = build(&mut tape, &inputs);
    let loss = scalar(&mut tape, out);
    let grads = tape.backward(loss);
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = match grads.wrt(*v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(inputs[i].shape().to_vec()),
        };
        let numeric = finite_diff_grad(
            |x| {
                let mut xs = inputs.clone();
                xs[i] = x.clone();
                let mut tape = Tape::new();
                let (_, out) = build(&mut tape, &xs);
                let l = scalar(&mut tape, out);
                tape.value(l).data()[0]
            },
            &inputs[i],
            1e-6,
        );
        let err = relative_error(&analytic, &numeric);
        ensure(err <= GRAD_TOL, format!("{name} input {i}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn split_plan(tokens: usize, heads: usize) -> Arc<AttentionPlan> {
    let half = tokens / 2;
    Arc::new(AttentionPlan {
        tokens,
        heads,
        segments: vec![
            HeadSegment {
                heads: 0..1,
                blocks: vec![
                    AttentionBlock { queries: (0..half).collect(), keys: (0..half).collect() },
                    AttentionBlock { queries: (half..tokens).collect(), keys: (0..tokens).rev().collect() },
                ],
            },
            HeadSegment {
                heads: 1..heads,
                blocks: vec![AttentionBlock { queries: (0..tokens).collect(), keys: (0..tokens).step_by(2).collect() }],
            },
        ],
    })
}

fn model_gradient(cfg: ModelConfig, seed: u64) -> Result<f64, String> {
    let model = VideoModel::<f32>::new(cfg.clone(), seed).map_err(|e| e.to_string())?.cast::<f64>();
    let input: Tensor<f64> = random_frames(&cfg, &mut ChaCha8Rng::seed_from_u64(seed + 1));
    let loss_of = |m: &VideoModel<f64>| {
        let mut tape = Tape::new();
        let logits = m.forward(&mut tape, &input).unwrap();
        let loss = tape.cross_entropy(logits, 1).unwrap();
        (tape.value(loss).data()[0], tape, loss)
    };
    let (_, tape, loss) = loss_of(&model);
    let mut store = model.params.clone();
    store.accumulate(&tape.backward(loss), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let h = 1e-5;
    for id in model.params.ids() {
        let n = model.params.value(id).len();
        for _ in 0..n.min(4) {
            let i = rng.gen_range(0..n);
            let mut probe = model.clone();
            let orig = probe.params.value(id).data()[i];
            probe.params.get_mut(id).value.data_mut()[i] = orig + h;
            let up = loss_of(&probe).0;
            probe.params.get_mut(id).value.data_mut()[i] = orig - h;
            let down = loss_of(&probe).0;
            numeric.push((up - down) / (2.0 * h));
            analytic.push(store.get(id).grad.data()[i]);
        }
    }
    let a = Tensor::new(vec![analytic.len()], analytic).unwrap();
    let n = Tensor::new(vec![numeric.len()], numeric).unwrap();
    Ok(relative_error(&a, &n))
}

fn mae_gradient() -> Result<f64, String> {
    let cfg = ModelConfig::toy(Family::VideoMae, 4);
    let model = VideoModel::<f32>::new(cfg.clone(), 21).map_err(|e| e.to_string())?.cast::<f64>();
    let input: Tensor<f64> = random_frames(&cfg, &mut ChaCha8Rng::seed_from_u64(22));
    let mask = tube_mask(cfg.grid(), 0.75, 23).map_err(|e| e.to_string())?;
    let loss_of = |m: &VideoModel<f64>| {
        let mut tape = Tape::new();
        let out = mae_reconstruct(&mut tape, m, &input, &mask).unwrap();
        (tape.value(out.loss).data()[0], tape, out.loss)
    };
    let (_, tape, loss) = loss_of(&model);
    let mut store = model.params.clone();
    store.accumulate(&tape.backward(loss), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for id in model.params.ids() {
        let n = model.params.value(id).len();
        for _ in 0..n.min(3) {
            let i = rng.gen_range(0..n);
            let mut probe = model.clone();
            let orig = probe.params.value(id).data()[i];
            probe.params.get_mut(id).value.data_mut()[i] = orig + 1e-5;
            let up = loss_of(&probe).0;
            probe.params.get_mut(id).value.data_mut()[i] = orig - 1e-5;
            let down = loss_of(&probe).0;
            numeric.push((up - down) / 2e-5);
            analytic.push(store.get(id).grad.data()[i]);
        }
    }
    let a = Tensor::new(vec![analytic.len()], analytic).unwrap();
    let n = Tensor::new(vec![numeric.len()], numeric).unwrap();
    Ok(relative_error(&a, &n))
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut r = |shape: &[usize]| random(shape, &mut rng);
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, e: f64| worst.push((name.to_string(), e));

    record("matmul", check_kernel("matmul", vec![r(&[3, 4]), r(&[4, 5])], |t, v| t.matmul(v[0], v[1]).unwrap())?);
    record("add", check_kernel("add", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.add(v[0], v[1]).unwrap())?);
    record("mul", check_kernel("mul", vec![r(&[3, 4]), r(&[3, 4])], |t, v| t.mul(v[0], v[1]).unwrap())?);
    record("add_row", check_kernel("add_row", vec![r(&[3, 4]), r(&[4])], |t, v| t.add_row(v[0], v[1]).unwrap())?);
    record(
        "linear",
        check_kernel("linear", vec![r(&[3, 4]), r(&[4, 2]), r(&[2])], |t, v| t.linear(v[0], v[1], v[2]).unwrap())?,
    );
    record("scale", check_kernel("scale", vec![r(&[2, 3])], |t, v| t.scale(v[0], -1.7))?);
    record(
        "layer_norm",
        check_kernel("layer_norm", vec![r(&[3, 6]), r(&[6]), r(&[6])], |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-6).unwrap()
        })?,
    );
    for (name, variant) in [("gelu_exact", GeluVariant::Exact), ("gelu_fast", GeluVariant::Fast)] {
        record(name, check_kernel(name, vec![r(&[4, 5]).map(|x| 3.0 * x)], move |t, v| t.gelu(v[0], variant))?);
    }
    record("softmax", check_kernel("softmax", vec![r(&[3, 5])], |t, v| t.softmax(v[0]))?);
    record("mean_rows", check_kernel("mean_rows", vec![r(&[5, 3])], |t, v| t.mean_rows(v[0]))?);
    record("sum", check_kernel("sum", vec![r(&[2, 3])], |t, v| t.sum(v[0]))?);
    record(
        "gather_rows",
        check_kernel("gather_rows", vec![r(&[4, 3])], |t, v| t.gather_rows(v[0], vec![2, 0, 2, 3]).unwrap())?,
    );
    record(
        "concat_rows",
        check_kernel("concat_rows", vec![r(&[2, 3]), r(&[1, 3])], |t, v| t.concat_rows(&[v[0], v[1]]).unwrap())?,
    );
    record(
        "cross_entropy",
        check_kernel("cross_entropy", vec![r(&[1, 5])], |t, v| t.cross_entropy(v[0], 3).unwrap())?,
    );
    let target = r(&[4, 3]);
    record(
        "masked_mse",
        check_kernel("masked_mse", vec![r(&[4, 3])], move |t, v| {
            t.masked_mse(v[0], target.clone(), vec![true, false, true, true]).unwrap()
        })?,
    );
    for (name, plan) in [("attention_dense", Arc::new(AttentionPlan::dense(6, 2))), ("attention_blocked", split_plan(6, 3))] {
        let d = plan.heads * 2;
        record(
            name,
            check_kernel(name, vec![r(&[6, d]), r(&[6, d]), r(&[6, d])], move |t, v| {
                t.attention(v[0], v[1], v[2], plan.clone()).unwrap()
            })?,
        );
    }
    let kernels = worst.len();

    let mut models = 0;
    for family in Family::ALL {
        for &variant in family.variants() {
            let pooling = if variant.is_factorized() || family == Family::VideoMae {
                Pooling::Mean
            } else {
                Pooling::Cls
            };
            let cfg = ModelConfig { attention: variant, pooling, ..ModelConfig::toy(family, 3) };
            let e = model_gradient(cfg, 31)?;
            let name = format!("{}/{}", family.name(), variant.name());
            ensure(e <= GRAD_TOL, format!("{name}: relative error {e:e}"))?;
            worst.push((name, e));
            models += 1;
        }
    }
    let e = mae_gradient()?;
    ensure(e <= GRAD_TOL, format!("mae reconstruction: relative error {e:e}"))?;
    worst.push(("mae".into(), e));
    let (name, max) = worst
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Ok(format!("{kernels} kernels, {models} model variants and mae; worst {max:.2e} ({name})"))
}

// ---------------------------------------------------------------- 5

fn oracle_confusion(truths: &[usize], preds: &[usize], k: usize) -> Vec<Vec<u64>> {
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| truths.iter().zip(preds).filter(|(&t, &p)| t == i && p == j).count() as u64)
                .collect()
        })
        .collect()
}

fn oracle_in_topk(row: &[f64], truth: usize, k: usize) -> bool {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    order.iter().take(k).any(|&c| c == truth)
}

/// Per-class precision, recall, F1 and support from raw label lists.
fn oracle_prf(truths: &[usize], preds: &[usize], k: usize) -> (Vec<[f64; 4]>, [f64; 3]) {
    let mut rows = Vec::new();
    for c in 0..k {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (&t, &p) in truths.iter().zip(preds) {
            if t == c && p == c {
                tp += 1.0;
            } else if p == c {
                fp += 1.0;
            } else if t == c {
                fneg += 1.0;
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        rows.push([p, r, f, tp + fneg]);
    }
    let present: Vec<&[f64; 4]> = rows.iter().filter(|r| r[3] > 0.0).collect();
    let mut macro_avg = [0.0; 3];
    for r in &present {
        for i in 0..3 {
            macro_avg[i] += r[i];
        }
    }
    for m in &mut macro_avg {
        *m /= present.len() as f64;
    }
    (rows, macro_avg)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_dev = 0.0f64;
    for inst in 0..1000 {
        let k = rng.gen_range(2..=20);
        let n = rng.gen_range(1..=200);
        // coarse logits so ties are common
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
        let truths: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();

        let m = confusion_matrix(&truths, &preds, k).map_err(|e| e.to_string())?;
        ensure(m.rows() == oracle_confusion(&truths, &preds, k), format!("instance {inst}: confusion"))?;

        for cut in [1, 2, k.min(5), k] {
            let got = topk_accuracy(&rows, &truths, cut).map_err(|e| e.to_string())?;
            let hits = rows.iter().zip(&truths).filter(|(r, &t)| oracle_in_topk(r, t, cut)).count();
            let dev = (got - hits as f64 / n as f64).abs();
            ensure(dev <= 1e-12, format!("instance {inst}: top-{cut} off by {dev}"))?;
            max_dev = max_dev.max(dev);
        }

        let (rows_o, macro_o) = oracle_prf(&truths, &preds, k);
        for (c, (got, want)) in per_class(&m).iter().zip(&rows_o).enumerate() {
            ensure(got.support as f64 == want[3], format!("instance {inst}: support of {c}"))?;
            for (g, w) in [got.precision, got.recall, got.f1].iter().zip(want) {
                let dev = (g - w).abs();
                ensure(dev <= 1e-12, format!("instance {inst}: class {c} off by {dev}"))?;
                max_dev = max_dev.max(dev);
            }
        }
        let p = macro_prf(&m);
        for (g, w) in [p.precision, p.recall, p.f1].iter().zip(&macro_o) {
            let dev = (g - w).abs();
            ensure(dev <= 1e-12, format!("instance {inst}: macro off by {dev}"))?;
            max_dev = max_dev.max(dev);
        }
    }
    Ok(format!("1000 instances, counts exact, max ratio deviation {max_dev:.1e}"))
}

// ---------------------------------------------------------------- 6

fn synthetic_manifest() -> ClipManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut records = Vec::new();
    for class in 0..60 {
        let count = if class == 0 { 5 } else if class == 1 { 40 } else { rng.gen_range(5..=40) };
        for i in 0..count {
            records.push(ManifestRecord {
                clip_path: format!("clips/c{class:02}_{i:02}.sgnf"),
                gloss_label: format!("g{class:02}"),
                signer_id: format!("U{}", rng.gen_range(1..=10)),
                frame_count: rng.gen_range(9..=164),
                fps: FrameRate::whole(30),
            });
        }
    }
    ClipManifest::new(records)
}

fn split_properties() -> Outcome {
    let manifest = synthetic_manifest();
    let folds = stratified_kfold(&manifest, 10, 6).map_err(|e| e.to_string())?;
    ensure(folds.len() == 10, "fold count")?;
    let class_of: BTreeMap<&str, usize> =
        manifest.records.iter().map(|r| (r.clip_id(), manifest.class_of(r))).collect();
    let mut seen = BTreeSet::new();
    for class in 0..60 {
        let counts: Vec<usize> =
            folds.iter().map(|f| f.iter().filter(|id| class_of[id.as_str()] == class).count()).collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        ensure(hi - lo <= 1, format!("class {class}: fold counts {counts:?}"))?;
    }
    for id in folds.iter().flatten() {
        ensure(seen.insert(id.clone()), format!("{id} in two folds"))?;
    }
    ensure(seen.len() == manifest.len(), "folds do not cover the manifest")?;

    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let plan = signer_split(&manifest, &s(&["U4", "U8"]), &s(&["U5"])).map_err(|e| e.to_string())?;
    let report = verify_no_leakage(&plan, &manifest);
    ensure(report.is_clean(), format!("leakage: {report}"))?;
    Ok(format!("{} clips, 60 classes, fold counts within 1; signer holdout clean", manifest.len()))
}

// ---------------------------------------------------------------- 7

fn solid_clip(frames: usize, fps: u32, seed: u64) -> ClipTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::from_fn(vec![frames, 12, 12, 3], |_| rng.gen::<f32>());
    ClipTensor::new(t, FrameRate::whole(fps)).unwrap()
}

fn frc_properties() -> Outcome {
    let thirty = FrameRate::whole(30);
    for t in 1..=64 {
        let out = frc_resample(&solid_clip(t, 15, t as u64), thirty).map_err(|e| e.to_string())?;
        ensure(out.num_frames() == 2 * t, format!("15->30 with T={t}: {}", out.num_frames()))?;
        ensure(out.dup_flags.iter().filter(|&&d| d).count() == t, "15->30 dup count")?;
    }
    for t in (4..=64).step_by(4) {
        let out = frc_resample(&solid_clip(t, 24, t as u64), thirty).map_err(|e| e.to_string())?;
        ensure(out.num_frames() == 5 * t / 4, format!("24->30 with T={t}: {}", out.num_frames()))?;
    }
    let mut altered = 0;
    for seed in 0..20u64 {
        let src = if seed % 2 == 0 { solid_clip(16, 15, seed) } else { solid_clip(16, 24, seed) };
        let clip = frc_resample(&src, thirty).map_err(|e| e.to_string())?;
        let out = duplicate_jitter(&clip, &JitterSpec::default(), seed).map_err(|e| e.to_string())?;
        for i in 0..clip.num_frames() {
            let same = clip.frame(i).iter().zip(out.frame(i)).all(|(a, b)| a.to_bits() == b.to_bits());
            if !clip.dup_flags[i] {
                ensure(same, format!("seed {seed}: non-duplicate frame {i} changed"))?;
            } else if !same {
                altered += 1;
            }
        }
        ensure(out.dup_flags == clip.dup_flags, "flags changed")?;
    }
    ensure(altered > 0, "jitter never altered a duplicate frame")?;
    Ok(format!("15->30 doubles, 24->30 gives 5T/4, jitter altered {altered} duplicates and nothing else"))
}

// ---------------------------------------------------------------- 8 / 10

const OVERFIT_SEED: u64 = 8;

fn toy_sampler() -> SamplerConfig {
    SamplerConfig::new(4, 2, FrameRate::whole(30)).unwrap()
}

/// Crop-only transform: no flips and the short side scaled straight to the
/// crop size, so the moving blob always stays in view.
fn plain_transform() -> TransformSpec {
    TransformSpec { flip_prob: 0.0, scale_range: [32, 32], ..TransformSpec::for_side(32) }
}

fn overfit_run() -> Result<TrainOutcome, String> {
    let data = synth_dataset(&SynthConfig::default(), OVERFIT_SEED).map_err(|e| e.to_string())?;
    let (manifest, clips) = data.extract(None).map_err(|e| e.to_string())?;
    let model = VideoModel::new(ModelConfig::toy(Family::VideoMae, manifest.num_classes()), OVERFIT_SEED)
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        learning_rate: 5e-4,
        epochs: 200,
        patience: None,
        seed: OVERFIT_SEED,
        ..TrainConfig::default()
    };
    // the training clips double as the validation set so that each epoch
    // reports accuracy on the training data in eval mode
    train_loop(model, &clips, &clips, &cfg, &toy_sampler(), &plain_transform())
        .map_err(|e| e.to_string())
}

fn overfit(outcome: &TrainOutcome) -> Outcome {
    let h = &outcome.history;
    let first_hit = h.iter().find(|r| r.val_acc.unwrap_or(0.0) >= 0.95).map(|r| r.epoch);
    let (initial, last) = (h[0].train_loss, h[h.len() - 1].train_loss);
    let best = h.iter().map(|r| r.val_acc.unwrap_or(0.0)).fold(0.0, f64::max);
    ensure(h.len() <= 200, "ran past 200 epochs")?;
    ensure(first_hit.is_some(), format!("train accuracy peaked at {best:.3}"))?;
    ensure(last < 0.1 * initial, format!("final loss {last:.4} vs initial {initial:.4}"))?;
    Ok(format!(
        "train acc >= 0.95 at epoch {}, best {best:.3}; loss {initial:.4} -> {last:.4} ({:.1}%)",
        first_hit.unwrap(),
        100.0 * last / initial
    ))
}

fn determinism(first: &TrainOutcome) -> Outcome {
    let second = overfit_run()?;
    let (a, b) = (loss_curve_csv(&first.history), loss_curve_csv(&second.history));
    ensure(a == b, "loss curves differ")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bytes = |o: &TrainOutcome, name: &str| {
        let p = dir.path().join(name);
        o.best.save(&p, serde_json::json!({})).unwrap();
        std::fs::read(p).unwrap()
    };
    let (ca, cb) = (bytes(first, "a.sgnw"), bytes(&second, "b.sgnw"));
    ensure(ca == cb, "checkpoints differ")?;
    Ok(format!("{} curve bytes and {} checkpoint bytes identical", a.len(), ca.len()))
}

// ---------------------------------------------------------------- 9

fn jitter_ab() -> Outcome {
    let synth = SynthConfig { fps: FrameRate::whole(15), gloss_frames: 8, idle_frames: 2, ..SynthConfig::default() };
    let sampler = toy_sampler();
    let mut means = [0.0f64; 2];
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let data = synth_dataset(&synth, 900 + seed).map_err(|e| e.to_string())?;
        let (manifest, clips) = data.extract(Some(FrameRate::whole(30))).map_err(|e| e.to_string())?;
        let signer: BTreeMap<&str, &str> =
            manifest.records.iter().map(|r| (r.clip_id(), r.signer_id.as_str())).collect();
        let (val, train): (Vec<LabeledClip>, Vec<LabeledClip>) =
            clips.into_iter().partition(|c| signer[c.id.as_str()] == "U4");
        let mut accs = [0.0; 2];
        for (arm, enabled) in [true, false].into_iter().enumerate() {
            let transform = TransformSpec {
                jitter: if enabled { JitterSpec::default() } else { JitterSpec::disabled() },
                ..plain_transform()
            };
            let model = VideoModel::new(ModelConfig::toy(Family::VideoMae, manifest.num_classes()), seed)
                .map_err(|e| e.to_string())?;
            let cfg = TrainConfig { learning_rate: 5e-4, epochs: 25, patience: None, seed, ..TrainConfig::default() };
            let out = train_loop(model, &train, &val, &cfg, &sampler, &transform).map_err(|e| e.to_string())?;
            accs[arm] = out.history[out.best_epoch - 1].val_acc.unwrap();
        }
        means[0] += accs[0] / 5.0;
        means[1] += accs[1] / 5.0;
        detail.push(format!("{:.3}/{:.3}", accs[0], accs[1]));
    }
    ensure(
        means[0] >= means[1],
        format!("mean val acc with jitter {:.4} < without {:.4} ({})", means[0], means[1], detail.join(", ")),
    )?;
    Ok(format!("mean val acc jitter {:.4} >= no jitter {:.4} (per seed {})", means[0], means[1], detail.join(", ")))
}

// ----------------------------------------------------------------

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, msg) = match &result {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("criterion {id:>2} [{tag}] {name} ({secs:.1}s): {msg}");
    result.is_ok()
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: usize| args.is_empty() || args.iter().any(|a| a == &id.to_string());
    let mut ok = true;
    let mut step = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(id) {
            ok &= run(id, name, f);
        }
    };
    step(1, "clip duration table", &mut clip_durations);
    step(2, "comparison counts", &mut comparison_counts);
    step(3, "tube mask invariants", &mut tube_masks);
    step(4, "gradient suite", &mut gradient_suite);
    step(5, "metric oracles", &mut metric_oracles);
    step(6, "split properties", &mut split_properties);
    step(7, "frame-rate correction", &mut frc_properties);
    let mut trained: Option<TrainOutcome> = None;
    step(8, "overfit run", &mut || {
        let outcome = overfit_run()?;
        let verdict = overfit(&outcome);
        trained = Some(outcome);
        verdict
    });
    step(10, "determinism", &mut || match &trained {
        Some(first) => determinism(first),
        None => determinism(&overfit_run()?),
    });
    step(9, "duplicate jitter A/B", &mut jitter_ab);
    if !ok {
        std::process::exit(1);
    }
}
