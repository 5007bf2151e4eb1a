use std::fs;

use anyhow::anyhow;
use qtn_core::data::{load_sample, load_split, Split};
use qtn_core::loss::LossConfig;
use qtn_core::model::build_model;
use qtn_core::trainer::{fit, BEST_FILE};
use qtn_core::{ModelConfig, Precision, Scalar, TrainConfig};
use serde_json::json;

use super::load_split_manifest;
use crate::status::{classify, data, runtime, usage, CmdResult};
use crate::{resolve_seed, TrainArgs};

pub fn run(args: &TrainArgs, seed: Option<u64>, precision: Precision) -> CmdResult {
    let seed = resolve_seed(seed);
    let manifest = load_split_manifest(&args.manifest, &args.ratios, seed)?;

    let first = manifest
        .rows_in(Split::Train)
        .next()
        .ok_or_else(|| data(anyhow!("{}: no rows in the train split", args.manifest.display())))?;
    let input_size = match args.size {
        Some(s) => (s.0, s.1),
        None => {
            let dims = load_sample(&manifest, first, None).map_err(data)?.dims();
            let m = ModelConfig::default().divisor();
            if dims.0 % m != 0 || dims.1 % m != 0 {
                return Err(data(anyhow!(
                    "training slices are {}x{}, not divisible by {m}; pass --size",
                    dims.0,
                    dims.1
                )));
            }
            dims
        }
    };
    let model = ModelConfig {
        base_channels: args.base_channels,
        input_size,
        ..ModelConfig::default()
    };
    model.validate().map_err(usage)?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        max_epochs: args.epochs,
        batch_size: args.batch_size,
        shuffle_seed: seed,
        precision,
        checkpoint_dir: args.out.clone(),
        clip_grad_norm: args.clip_grad_norm,
        record_time: !args.no_timing,
        resume: args.resume,
        loss: LossConfig {
            threshold: args.threshold,
            l2_normalization: args.l2_normalization.into(),
            ..LossConfig::default()
        },
    };
    cfg.validate().map_err(usage)?;

    let train = load_split(&manifest, Split::Train, Some(input_size)).map_err(data)?;
    let val = load_split(&manifest, Split::Val, Some(input_size)).map_err(data)?;
    if val.is_empty() {
        return Err(data(anyhow!("{}: no rows in the val split", args.manifest.display())));
    }
    eprintln!(
        "training on {} slices, validating on {}, {}x{} {precision}, {} parameters",
        train.len(),
        val.len(),
        input_size.0,
        input_size.1,
        model.parameter_count()
    );

    fs::create_dir_all(&args.out).map_err(|e| runtime(anyhow!("{}: {e}", args.out.display())))?;
    let run_info = json!({ "seed": seed, "model": model, "train": cfg });
    let text = serde_json::to_vec_pretty(&run_info).map_err(runtime)?;
    qtn_core::model::checkpoint::write_atomic(&args.out.join("run.json"), &text).map_err(runtime)?;

    match precision {
        Precision::F32 => fit_with::<f32>(model, seed, &train, &val, &cfg),
        Precision::F64 => fit_with::<f64>(model, seed, &train, &val, &cfg),
    }
}

fn fit_with<T: Scalar>(
    model: ModelConfig,
    seed: u64,
    train: &[qtn_core::SliceSample],
    val: &[qtn_core::SliceSample],
    cfg: &TrainConfig,
) -> CmdResult {
    let mut net = build_model::<T>(model, seed).map_err(usage)?;
    let outcome = fit(&mut net, train, val, cfg, |r| println!("{r}")).map_err(classify)?;
    match outcome.records.iter().find(|r| r.epoch == outcome.best_epoch) {
        Some(best) => println!(
            "best epoch {} (val dice {}), weights in {}",
            best.epoch,
            best.val_dice.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into()),
            cfg.checkpoint_dir.join(BEST_FILE).display()
        ),
        None => println!("nothing to do: {} epochs already completed", cfg.max_epochs),
    }
    Ok(())
}
