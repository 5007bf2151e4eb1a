use qtn_core::data::{split_by_patient, synth_generate, SynthConfig};

use crate::status::{runtime, usage, CmdResult};
use crate::{resolve_seed, SynthArgs};

pub fn run(args: &SynthArgs, seed: Option<u64>) -> CmdResult {
    let seed = resolve_seed(seed);
    args.ratios.validate().map_err(usage)?;
    let cfg = SynthConfig {
        count: args.n as usize,
        size: args.size,
        seed,
        ..SynthConfig::default()
    };
    cfg.validate().map_err(usage)?;
    let manifest = synth_generate(&cfg, &args.out).map_err(runtime)?;
    let split = split_by_patient(&manifest, &args.ratios, seed).map_err(usage)?;
    split.write(&args.out.join("manifest.csv")).map_err(runtime)?;
    let (train, val, test, _) = split.split_counts();
    println!(
        "{} slices in {} (train {train}, val {val}, test {test})",
        split.len(),
        args.out.display()
    );
    Ok(())
}
