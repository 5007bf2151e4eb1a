use anyhow::anyhow;
use qtn_core::data::load_split;
use qtn_core::metrics::{evaluate, EvalConfig};
use qtn_core::{EvalReport, Precision, Scalar};

use super::{load_network, load_split_manifest};
use crate::status::{classify, data, runtime, CmdResult};
use crate::{resolve_seed, EvalArgs};

pub fn run(args: &EvalArgs, seed: Option<u64>, precision: Precision) -> CmdResult {
    let seed = resolve_seed(seed);
    let report = match precision {
        Precision::F32 => eval_with::<f32>(args, seed)?,
        Precision::F64 => eval_with::<f64>(args, seed)?,
    };
    report.write_to(&args.out).map_err(runtime)?;
    print_summary(&report);
    eprintln!("report written to {}", args.out.join("report.json").display());
    Ok(())
}

fn eval_with<T: Scalar>(args: &EvalArgs, seed: u64) -> Result<EvalReport, crate::status::Failure> {
    let net = load_network::<T>(&args.weights)?;
    let manifest = load_split_manifest(&args.manifest, &Default::default(), seed)?;
    let samples = load_split(&manifest, args.split, Some(net.config().input_size)).map_err(data)?;
    if samples.is_empty() {
        return Err(data(anyhow!("{}: no rows in the {} split", args.manifest.display(), args.split)));
    }
    let cfg = EvalConfig {
        max_roc_samples: args.max_roc_samples,
        seed,
    };
    evaluate(&net, &samples, cfg).map_err(classify)
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "-".into())
}

fn print_summary(r: &EvalReport) {
    println!("slices {}  pixels {}  pixel accuracy {:.2}%", r.slices, r.pixels, 100.0 * r.accuracy);
    println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "class", "dice", "std", "auc", "recall%");
    for (i, c) in r.dice.classes.iter().enumerate() {
        println!(
            "{:<12} {:>8} {:>8} {:>8} {:>8.2}",
            c.name,
            pct(c.mean),
            pct(c.std),
            r.roc[i].auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            r.confusion.row_percent[i][i]
        );
    }
    println!("mean foreground dice {}", pct(r.dice.foreground_mean));
    println!("{:.2} ms/slice", r.ms_per_slice);
}
