//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Tolerances are fixed below; oracles are written from
//! the definitions, not from the library code.
//!
//! Run a subset with `cargo test -p qtn-cli --test acceptance -- overfit`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use qtn_core::kernels::{max_pool_2x2, max_unpool_2x2, Mode};
use qtn_core::loss::{compute_gammas, loss_forward, partition_sets, FrozenLoss, LabelMap, LossConfig};
use qtn_core::metrics::{dice_per_class, roc_auc, ConfusionMatrix};
use qtn_core::model::{build_model, QuickTumorNet};
use qtn_core::{ModelConfig, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-7;
const GRAD_BUDGET: Duration = Duration::from_secs(5 * 60);
const LOSS_TOL: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-6;
const METRIC_TOL: f64 = 1e-9;
const OVERFIT_DICE: f64 = 0.90;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const OVERFIT_MAX_STEPS: usize = 500;

type Check = fn() -> Result<String, String>;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 9] = [
        ("gradient check", gradient_check),
        ("loss oracle", loss_oracle),
        ("gamma bounds", gamma_bounds),
        ("architecture", architecture),
        ("pool/unpool round trip", pool_round_trip),
        ("metric oracles", metric_oracles),
        ("overfit", overfit),
        ("determinism", determinism),
        ("report schema", report_schema),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let clock = Instant::now();
        let outcome = check();
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

/// Moves every non-weight parameter off its symmetric initial value, so the
/// check runs at a generic point instead of on a ReLU kink.
fn jitter(net: &mut QuickTumorNet<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in net.params_mut().iter_mut() {
        if !name.ends_with(".weight") {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
}

fn gradient_check() -> Result<String, String> {
    let clock = Instant::now();
    let cfg = ModelConfig {
        input_size: (16, 16),
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = build_model::<f64>(cfg, 5).map_err(err)?;
    jitter(&mut net, &mut rng);
    let px = 2 * 16 * 16;
    let x: Vec<f64> = (0..px).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = Tensor::from_vec(Shape::new(2, 1, 16, 16), x).map_err(err)?;
    let labels: Vec<u8> = (0..px).map(|_| rng.random_range(0..4)).collect();
    let labels = LabelMap::new(2, 16, 16, labels, 4).map_err(err)?;

    let base = net.clone();
    let (probs, tape) = net.forward(&x, Mode::Train).map_err(err)?;
    let frozen = FrozenLoss::freeze(&probs, &labels, &LossConfig::default()).map_err(err)?;
    let grads = net.backward(tape, &frozen.gradient(&probs).map_err(err)?).map_err(err)?;

    let loss_at = |name: &str, i: usize, delta: f64| -> Result<f64, String> {
        let mut probe = base.clone();
        probe.params_mut().get_mut(name).ok_or("missing tensor")?.data_mut()[i] += delta;
        let (p, _) = probe.forward(&x, Mode::Train).map_err(err)?;
        Ok(frozen.value(&p).map_err(err)?.total)
    };

    // three random coordinates of every parameter tensor
    let names: Vec<String> = base.params().iter().map(|(n, _)| n.to_string()).collect();
    let (mut worst, mut worst_at, mut checked) = (0.0f64, String::new(), 0);
    for name in &names {
        let len = base.params().get(name).unwrap().len();
        for _ in 0..3 {
            let i = rng.random_range(0..len);
            let numeric = (loss_at(name, i, GRAD_STEP)? - loss_at(name, i, -GRAD_STEP)?) / (2.0 * GRAD_STEP);
            let analytic = grads.get(name).ok_or("missing gradient")?.data()[i];
            let rel = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            checked += 1;
            if rel > worst || rel.is_nan() {
                worst = rel;
                worst_at = format!("{name}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}");
            }
        }
    }
    let elapsed = clock.elapsed();
    ensure(worst < GRAD_TOL, || format!("max relative error {worst:.2e} >= {GRAD_TOL:e} at {worst_at}"))?;
    ensure(elapsed < GRAD_BUDGET, || format!("took {elapsed:?}, budget {GRAD_BUDGET:?}"))?;
    Ok(format!(
        "{checked} coordinates over {} tensors ({} parameters), max relative error {worst:.2e} < {GRAD_TOL:e}, step {GRAD_STEP:e}",
        names.len(),
        base.params().scalar_count()
    ))
}

// --------------------------------------------------------------------- loss

/// Random instance: `n` images of 1 x `w` pixels, probabilities (pixel-major
/// rows of 4) drawn from a mix of generic, one-hot and exactly-0.5 cases.
fn random_instance(rng: &mut ChaCha8Rng, max_pixels: usize) -> (usize, usize, Vec<[f64; 4]>, Vec<usize>) {
    let pixels = rng.random_range(1..=max_pixels);
    let n = if pixels % 2 == 0 && rng.random_bool(0.5) { 2 } else { 1 };
    let w = pixels / n;
    let mut probs = Vec::with_capacity(pixels);
    for _ in 0..pixels {
        let kind = rng.random_range(0..10);
        let row = if kind == 0 {
            let mut r = [0.0; 4];
            r[rng.random_range(0..4)] = 1.0;
            r
        } else if kind == 1 {
            let mut r = [0.125, 0.125, 0.25, 0.0];
            r[3] = 0.5;
            let k = rng.random_range(0..4);
            r.swap(3, k);
            r
        } else {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(1e-6..1.0)).collect();
            let s: f64 = u.iter().sum();
            [u[0] / s, u[1] / s, u[2] / s, u[3] / s]
        };
        probs.push(row);
    }
    let labels = (0..pixels).map(|_| rng.random_range(0..4)).collect();
    (n, w, probs, labels)
}

fn to_tensor(n: usize, w: usize, probs: &[[f64; 4]]) -> Tensor<f64> {
    let mut data = vec![0.0; n * 4 * w];
    for (j, row) in probs.iter().enumerate() {
        let (b, x) = (j / w, j % w);
        for c in 0..4 {
            data[(b * 4 + c) * w + x] = row[c];
        }
    }
    Tensor::from_vec(Shape::new(n, 4, 1, w), data).unwrap()
}

/// The weighted cross entropy transcribed term by term, one-vs-rest per
/// class and summed over classes.
fn oracle_loss(probs: &[[f64; 4]], labels: &[usize], threshold: f64, floor: f64) -> f64 {
    let nlog = |v: f64| -(v.max(floor)).ln();
    let mut total = 0.0;
    for c in 0..4 {
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (j, &y) in labels.iter().enumerate() {
            if y == c {
                plus.push(probs[j][c]);
            } else {
                minus.push(probs[j][c]);
            }
        }
        let false_plus: Vec<f64> = minus.iter().copied().filter(|&p| p > threshold).collect();
        let false_minus: Vec<f64> = plus.iter().copied().filter(|&p| p <= threshold).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let g1 = 0.5 + mean(&false_plus.iter().map(|p| ((1.0 - p) - 0.5).abs()).collect::<Vec<_>>());
        let g2 = 0.5 + mean(&false_minus.iter().map(|p| (p - 0.5).abs()).collect::<Vec<_>>());
        let np = plus.len() as f64;
        let nm = minus.len() as f64;
        if !plus.is_empty() {
            total += plus.iter().map(|&p| nlog(p)).sum::<f64>() / np;
            if !false_plus.is_empty() {
                total += g1 * false_plus.iter().map(|&p| nlog(1.0 - p)).sum::<f64>() / np;
            }
        }
        if !minus.is_empty() {
            total += minus.iter().map(|&p| nlog(1.0 - p)).sum::<f64>() / nm;
            if !false_minus.is_empty() {
                total += g2 * false_minus.iter().map(|&p| nlog(p)).sum::<f64>() / nm;
            }
        }
    }
    total
}

fn loss_oracle() -> Result<String, String> {
    let cfg = LossConfig::default();

    // the 2-pixel binary example: class-1 terms, mirrored once by class 0
    let probs = Tensor::from_vec(Shape::new(1, 2, 1, 2), vec![0.1, 0.4, 0.9, 0.6]).unwrap();
    let labels = LabelMap::new(1, 1, 2, vec![1, 0], 2).map_err(err)?;
    let terms = loss_forward(&probs, &labels, &cfg).map_err(err)?;
    let expected = -(0.9f64.ln()) - 0.4f64.ln() - 0.6 * 0.4f64.ln();
    let c1 = &terms.classes[1];
    ensure((c1.total() - expected).abs() <= LOSS_TOL, || {
        format!("worked example: class-1 loss {} != {expected}", c1.total())
    })?;
    ensure(c1.gamma1.is_some_and(|g| (g - 0.6).abs() <= LOSS_TOL), || {
        format!("worked example: gamma1 {:?} != 0.6", c1.gamma1)
    })?;
    ensure((terms.total - 2.0 * expected).abs() <= LOSS_TOL, || {
        format!("worked example: total {} != 2 x {expected}", terms.total)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let (n, w, probs, labels) = random_instance(&mut rng, 16);
        let t = to_tensor(n, w, &probs);
        let map = LabelMap::new(n, 1, w, labels.iter().map(|&l| l as u8).collect(), 4).map_err(err)?;
        let got = loss_forward(&t, &map, &cfg).map_err(err)?.total;
        let want = oracle_loss(&probs, &labels, cfg.threshold, cfg.log_floor);
        let diff = (got - want).abs() / want.abs().max(1.0);
        worst = worst.max(diff);
        ensure(diff <= LOSS_TOL, || format!("instance {k}: {got} vs oracle {want}"))?;
    }
    Ok(format!(
        "worked example L = {expected:.12} (gamma1 0.6); 1000 random instances <= 16 px, max deviation {worst:.1e} <= {LOSS_TOL:e}"
    ))
}

fn gamma_bounds() -> Result<String, String> {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let (mut defined, mut at_half) = (0usize, 0usize);
    for k in 0..10_000 {
        let (n, w, probs, labels) = random_instance(&mut rng, 32);
        let t = to_tensor(n, w, &probs);
        let map = LabelMap::new(n, 1, w, labels.iter().map(|&l| l as u8).collect(), 4).map_err(err)?;
        for part in partition_sets(&t, &map, &cfg).map_err(err)? {
            let c = part.class;
            let g = compute_gammas(&part, &t);
            let p = |j: usize| probs[j][c];
            let cases = [
                (g.gamma1, part.false_plus.iter().map(|&j| 1.0 - p(j)).collect::<Vec<_>>()),
                (g.gamma2, part.false_minus.iter().map(|&j| p(j)).collect::<Vec<_>>()),
            ];
            for (gamma, members) in cases {
                match gamma {
                    None => ensure(members.is_empty(), || format!("partition {k}: gamma undefined on a nonempty set"))?,
                    Some(g) => {
                        defined += 1;
                        ensure((0.5..=1.0).contains(&g), || format!("partition {k}: gamma {g} outside [0.5, 1]"))?;
                        let all_half = members.iter().all(|&v| v == 0.5);
                        ensure((g == 0.5) == all_half, || {
                            format!("partition {k}: gamma {g} with member probabilities {members:?}")
                        })?;
                        at_half += all_half as usize;
                    }
                }
            }
        }
    }
    ensure(at_half > 0, || "no partition exercised the gamma = 0.5 case".into())?;
    Ok(format!(
        "10000 partitions, {defined} defined gammas all in [0.5, 1]; gamma == 0.5 exactly in the {at_half} cases whose members are all 0.5"
    ))
}

// ------------------------------------------------------------- architecture

fn architecture() -> Result<String, String> {
    let cfg = ModelConfig::default();
    let mut net = build_model::<f64>(cfg, 3).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(256);
    let (h, w) = cfg.input_size;
    let x: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = Tensor::from_vec(Shape::new(2, 1, h, w), x).map_err(err)?;
    let labels: Vec<u8> = (0..2 * h * w).map(|_| rng.random_range(0..4)).collect();
    let labels = LabelMap::new(2, h, w, labels, 4).map_err(err)?;

    let (probs, tape) = net.forward(&x, Mode::Train).map_err(err)?;
    ensure(probs.shape() == Shape::new(2, 4, h, w), || format!("output shape {}", probs.shape()))?;
    let plane = h * w;
    let mut worst = 0.0f64;
    for b in 0..2 {
        let item = probs.item(b);
        for j in 0..plane {
            let s: f64 = (0..4).map(|c| item[c * plane + j]).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    ensure(worst <= SIMPLEX_TOL, || format!("per-pixel sum off by {worst:e}"))?;

    let frozen = FrozenLoss::freeze(&probs, &labels, &LossConfig::default()).map_err(err)?;
    let grads = net.backward(tape, &frozen.gradient(&probs).map_err(err)?).map_err(err)?;
    let mut zero_tensors = Vec::new();
    let mut zero_scalars = 0usize;
    for (name, p) in net.params().iter() {
        let g = grads.get(name).ok_or_else(|| format!("no gradient for {name}"))?;
        ensure(g.shape() == p.shape(), || format!("{name}: gradient shape {}", g.shape()))?;
        ensure(g.is_finite(), || format!("{name}: non-finite gradient"))?;
        let zeros = g.data().iter().filter(|&&v| v == 0.0).count();
        zero_scalars += zeros;
        if zeros == g.len() {
            zero_tensors.push(name.to_string());
        }
    }
    ensure(zero_tensors.is_empty(), || format!("all-zero gradients: {zero_tensors:?}"))?;
    ensure(zero_scalars == 0, || format!("{zero_scalars} individual parameters have an exactly zero gradient"))?;
    Ok(format!(
        "(2,1,{h},{w}) -> {}; max |sum - 1| {worst:.1e} <= {SIMPLEX_TOL:e}; all {} parameters in {} tensors have nonzero gradients",
        probs.shape(),
        net.params().scalar_count(),
        net.params().len()
    ))
}

fn pool_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let random_tensor = |rng: &mut ChaCha8Rng, signed: bool| {
        let s = Shape::new(
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            2 * rng.random_range(1..=8),
            2 * rng.random_range(1..=8),
        );
        let ties = rng.random_bool(0.5);
        let data: Vec<f64> = (0..s.len())
            .map(|_| {
                let v = if ties { rng.random_range(0..4) as f64 / 2.0 } else { rng.random_range(0.0..1.0) };
                if signed { v - 1.0 } else { v }
            })
            .collect();
        Tensor::from_vec(s, data).unwrap()
    };
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    for k in 0..1000 {
        let x = random_tensor(&mut rng, false);
        let (pooled, idx) = max_pool_2x2(&x).map_err(err)?;
        let up = max_unpool_2x2(&pooled, &idx).map_err(err)?;
        let (again, idx2) = max_pool_2x2(&up).map_err(err)?;
        ensure(bits(&again) == bits(&pooled), || format!("tensor {k} ({}): pooled values differ", x.shape()))?;
        ensure(idx2 == idx || pooled.data().contains(&0.0), || format!("tensor {k}: argmax moved"))?;
    }
    // the identity needs nonnegative window maxima: a zero filled in by
    // unpooling beats a negative maximum. Count how often that bites.
    let mut broken = 0;
    for _ in 0..1000 {
        let x = random_tensor(&mut rng, true);
        let (pooled, idx) = max_pool_2x2(&x).map_err(err)?;
        let (again, _) = max_pool_2x2(&max_unpool_2x2(&pooled, &idx).map_err(err)?).map_err(err)?;
        broken += (bits(&again) != bits(&pooled)) as usize;
    }
    Ok(format!(
        "1000/1000 random nonnegative tensors bitwise identical (with signed values, {broken}/1000 differ where a window max is negative)"
    ))
}

// ------------------------------------------------------------------ metrics

fn metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let n = rng.random_range(1..=200);
        let classes = rng.random_range(2..=4u8);
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let truth: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes)).collect();

        for c in 0..classes {
            let a: BTreeSet<usize> = (0..n).filter(|&i| pred[i] == c).collect();
            let b: BTreeSet<usize> = (0..n).filter(|&i| truth[i] == c).collect();
            let want = (!b.is_empty()).then(|| 2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64);
            let got = dice_per_class(&pred, &truth, c).map_err(err)?;
            match (got, want) {
                (Some(g), Some(w)) => {
                    worst = worst.max((g - w).abs());
                    ensure((g - w).abs() <= METRIC_TOL, || format!("case {k}: dice {g} vs {w}"))?;
                }
                (None, None) => {}
                _ => return Err(format!("case {k}: dice {got:?} vs {want:?}")),
            }
        }

        let mut cm = ConfusionMatrix::new(4);
        cm.add(&pred, &truth).map_err(err)?;
        let acc = cm.accuracy().ok_or("empty confusion matrix")?;
        let hits = (0..n).filter(|&i| pred[i] == truth[i]).count();
        ensure(cm.total() == n as u64 && cm.trace() == hits as u64, || format!("case {k}: counts"))?;
        let d = (cm.trace() as f64 - acc * cm.total() as f64).abs();
        worst = worst.max(d);
        ensure(d <= METRIC_TOL, || format!("case {k}: trace {} vs accuracy x total", cm.trace()))?;

        // scores on a coarse grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 / 11.0).collect();
        let positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let pos: Vec<f64> = (0..n).filter(|&i| positive[i]).map(|i| scores[i]).collect();
        let neg: Vec<f64> = (0..n).filter(|&i| !positive[i]).map(|i| scores[i]).collect();
        match roc_auc(&scores, &positive, 1, usize::MAX, 0) {
            Ok(curve) => {
                let mut wins = 0.0;
                for &p in &pos {
                    for &q in &neg {
                        wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
                    }
                }
                let want = wins / (pos.len() * neg.len()) as f64;
                worst = worst.max((curve.auc - want).abs());
                ensure((curve.auc - want).abs() <= METRIC_TOL, || format!("case {k}: auc {} vs {want}", curve.auc))?;
            }
            Err(_) => ensure(pos.is_empty() || neg.is_empty(), || format!("case {k}: auc refused"))?,
        }
    }
    Ok(format!(
        "1000 cases <= 200 px: Dice vs set counting, AUC vs pair counting (ties 0.5), trace vs accuracy x total; max deviation {worst:.1e} <= {METRIC_TOL:e}"
    ))
}

// ------------------------------------------------------------- end to end

fn qtn(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qtn")).args(args).output().map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "qtn {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Six training slices in batches of two: three steps per epoch.
const OVERFIT_EPOCHS: usize = OVERFIT_MAX_STEPS / 3;

fn overfit_run(dir: &Path) -> Result<(f64, Duration), String> {
    let clock = Instant::now();
    let data = dir.join("data");
    let run = dir.join("run");
    qtn(&["synth", "--out", path(&data), "--n", "8", "--seed", "42"])?;
    let epochs = OVERFIT_EPOCHS.to_string();
    qtn(&[
        "train",
        "--manifest",
        path(&data.join("manifest.csv")),
        "--out",
        path(&run),
        "--epochs",
        &epochs,
        "--lr",
        "1e-4",
        "--batch-size",
        "2",
        "--base-channels",
        "32",
        "--seed",
        "42",
    ])?;
    let elapsed = clock.elapsed();
    let eval = dir.join("eval");
    qtn(&[
        "eval",
        "--weights",
        path(&run.join("last.qtnw")),
        "--manifest",
        path(&data.join("manifest.csv")),
        "--split",
        "train",
        "--out",
        path(&eval),
        "--seed",
        "0",
    ])?;
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval.join("report.json")).map_err(err)?).map_err(err)?;
    let dice = report["dice"]["foreground_mean"].as_f64().ok_or("report has no foreground Dice")?;
    Ok((dice, elapsed))
}

fn overfit() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let (dice, elapsed) = overfit_run(dir.path())?;
    let steps = OVERFIT_EPOCHS * 3;
    ensure(dice >= OVERFIT_DICE, || format!("train foreground Dice {dice:.4} < {OVERFIT_DICE} after {steps} steps"))?;
    ensure(elapsed < OVERFIT_BUDGET, || format!("took {elapsed:?}, budget {OVERFIT_BUDGET:?}"))?;
    Ok(format!(
        "train foreground Dice {dice:.4} >= {OVERFIT_DICE} after {steps} Adam steps at lr 1e-4 (64x64, 32 base channels, batch 2), synth+train {:.0}s",
        elapsed.as_secs_f64()
    ))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let data = dir.path().join("data");
    qtn(&["synth", "--out", path(&data), "--n", "6", "--size", "32", "--seed", "9"])?;
    let train = |run: &Path| {
        qtn(&[
            "train",
            "--manifest",
            path(&data.join("manifest.csv")),
            "--out",
            path(run),
            "--epochs",
            "3",
            "--batch-size",
            "2",
            "--base-channels",
            "8",
            "--precision",
            "f64",
            "--no-timing",
            "--seed",
            "5",
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&a)?;
    train(&b)?;
    let mut bytes = 0;
    for f in ["curve.csv", "best.qtnw", "last.qtnw"] {
        let x = std::fs::read(a.join(f)).map_err(err)?;
        let y = std::fs::read(b.join(f)).map_err(err)?;
        ensure(x == y, || format!("{f} differs between runs"))?;
        bytes += x.len();
    }
    Ok(format!("two f64 runs: curve.csv, best.qtnw, last.qtnw bitwise identical ({bytes} bytes)"))
}

/// Every statistic the evaluation is expected to report must be present in
/// `report.json`. Meaningful values need real MRI data and a full training
/// run, so only the schema is checked here.
fn report_schema() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let eval = dir.path().join("eval");
    qtn(&["synth", "--out", path(&data), "--n", "20", "--size", "32", "--seed", "3"])?;
    let manifest = data.join("manifest.csv");
    qtn(&[
        "train", "--manifest", path(&manifest), "--out", path(&run), "--epochs", "1",
        "--base-channels", "4", "--seed", "1",
    ])?;
    qtn(&[
        "eval", "--weights", path(&run.join("best.qtnw")), "--manifest", path(&manifest),
        "--split", "test", "--out", path(&eval), "--seed", "1",
    ])?;
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval.join("report.json")).map_err(err)?).map_err(err)?;

    ensure(r["accuracy"].is_f64(), || "accuracy missing".into())?;
    ensure(r["ms_per_slice"].is_f64(), || "ms_per_slice missing".into())?;
    let roc = r["roc"].as_array().ok_or("roc missing")?;
    ensure(roc.len() == 4, || format!("{} ROC entries", roc.len()))?;
    for e in roc {
        ensure(e["auc"].is_f64() || e["note"].is_string(), || format!("ROC entry without auc or note: {e}"))?;
        ensure(e["points"].is_array(), || "ROC points missing".into())?;
    }
    let rows = r["confusion"]["row_percent"].as_array().ok_or("confusion missing")?;
    ensure(rows.len() == 4, || "confusion matrix is not 4x4".into())?;
    for row in rows {
        let v: Vec<f64> = row.as_array().ok_or("bad row")?.iter().filter_map(|x| x.as_f64()).collect();
        let s: f64 = v.iter().sum();
        ensure(v.len() == 4 && (s == 0.0 || (s - 100.0).abs() < 1e-9), || format!("confusion row {v:?}"))?;
    }
    let dice = r["dice"]["classes"].as_array().ok_or("dice missing")?;
    ensure(dice.len() == 4, || "dice is not per class".into())?;
    for c in dice {
        for key in ["mean", "std", "values"] {
            ensure(c.get(key).is_some(), || format!("dice entry lacks {key}"))?;
        }
    }
    for f in ["confusion.csv", "roc_normal.csv", "roc_meningioma.csv", "roc_glioma.csv", "roc_pituitary.csv"] {
        ensure(eval.join(f).exists(), || format!("{f} not written"))?;
    }
    Ok(format!(
        "report.json carries pixel accuracy, 4 per-class AUCs + ROC CSVs, 4x4 row-normalised confusion, per-class Dice mean/std, ms/slice ({:.1}); values on real MRI data are out of scope",
        r["ms_per_slice"].as_f64().unwrap_or(f64::NAN)
    ))
}
