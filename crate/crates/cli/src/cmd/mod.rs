mod eval;
mod predict;
mod synth;
mod train;

use std::path::Path;

use qtn_core::data::{load_manifest, split_by_patient, Manifest, SplitRatios};
use qtn_core::model::{load_weights, Checkpoint};
use qtn_core::{Precision, QuickTumorNet, Scalar};

use crate::status::{data, CmdResult};
use crate::{Cli, Command};

pub fn run(cli: Cli) -> CmdResult {
    let precision = Precision::from(cli.precision);
    match cli.command {
        Command::Train(args) => train::run(&args, cli.seed, precision),
        Command::Eval(args) => eval::run(&args, cli.seed, precision),
        Command::Predict(args) => predict::run(&args, precision),
        Command::Synth(args) => synth::run(&args, cli.seed),
    }
}

/// Loads a manifest and checks that no patient straddles two splits. A
/// manifest without any split tags is split patient-wise on the fly.
fn load_split_manifest(path: &Path, ratios: &SplitRatios, seed: u64) -> CmdResult<Manifest> {
    let manifest = load_manifest(path).map_err(data)?;
    let (train, val, test, untagged) = manifest.split_counts();
    let manifest = if train + val + test == 0 && untagged > 0 {
        eprintln!("{} has no split column values; splitting patients {ratios} with seed {seed}", path.display());
        split_by_patient(&manifest, ratios, seed).map_err(data)?
    } else {
        manifest
    };
    manifest.check_leakage().map_err(data)?;
    Ok(manifest)
}

/// Reads a checkpoint into a network of precision `T`.
fn load_network<T: Scalar>(path: &Path) -> CmdResult<QuickTumorNet<T>> {
    let ckpt: Checkpoint<T> = load_weights(path).map_err(data)?;
    QuickTumorNet::from_parts(ckpt.config, ckpt.params, ckpt.seed).map_err(data)
}
