use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use qtn_core::data::{normalize_min_max, read_qtns, resize_image, resize_mask, write_qtns, SliceData, SliceFile};
use qtn_core::metrics::predict_slice;
use qtn_core::model::checkpoint::write_atomic;
use qtn_core::{Precision, QuickTumorNet, Scalar, SliceSample};

use super::load_network;
use crate::overlay;
use crate::status::{classify, data, runtime, CmdResult};
use crate::PredictArgs;

pub fn run(args: &PredictArgs, precision: Precision) -> CmdResult {
    match precision {
        Precision::F32 => predict_with(&load_network::<f32>(&args.weights)?, args),
        Precision::F64 => predict_with(&load_network::<f64>(&args.weights)?, args),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Image slices to segment. In a directory, mask files are skipped.
fn collect_inputs(input: &Path) -> CmdResult<Vec<(PathBuf, SliceFile)>> {
    if !input.is_dir() {
        let slice = read_qtns(input).map_err(data)?;
        if matches!(slice.data, SliceData::Mask(_)) {
            return Err(data(anyhow!("{} is a mask, not an image", input.display())));
        }
        return Ok(vec![(input.to_path_buf(), slice)]);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| data(anyhow!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "qtns"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let slice = read_qtns(&p).map_err(data)?;
        if !matches!(slice.data, SliceData::Mask(_)) {
            out.push((p, slice));
        }
    }
    if out.is_empty() {
        return Err(data(anyhow!("{} contains no image slices", input.display())));
    }
    Ok(out)
}

/// Ground truth stored next to an input as `<stem>_mask.qtns`, if present
/// and of matching size.
fn sibling_truth(path: &Path, h: usize, w: usize) -> Option<Vec<u8>> {
    let p = path.with_file_name(format!("{}_mask.qtns", stem(path)));
    let slice = read_qtns(&p).ok()?;
    ((slice.height, slice.width) == (h, w)).then(|| slice.mask_values().map(<[u8]>::to_vec))?
}

fn predict_with<T: Scalar>(net: &QuickTumorNet<T>, args: &PredictArgs) -> CmdResult {
    let inputs = collect_inputs(&args.input)?;
    let model = *net.config();
    // check every input before writing anything
    for (path, slice) in &inputs {
        if !args.resize && model.check_spatial(slice.height, slice.width).is_err() {
            return Err(data(anyhow!(
                "{} is {}x{}, not divisible by {}; pass --resize to resample it to {}x{}",
                path.display(),
                slice.height,
                slice.width,
                model.divisor(),
                model.input_size.0,
                model.input_size.1
            )));
        }
    }
    fs::create_dir_all(&args.out).map_err(|e| runtime(anyhow!("{}: {e}", args.out.display())))?;

    let mut total_ms = 0.0;
    for (path, slice) in &inputs {
        let (h, w) = (slice.height, slice.width);
        let mut image = slice.image_values().expect("inputs are images");
        if image.iter().any(|v| !v.is_finite()) {
            return Err(data(anyhow!("{} contains non-finite values", path.display())));
        }
        normalize_min_max(&mut image);
        let (nh, nw) = if args.resize { model.input_size } else { (h, w) };
        let net_image = resize_image(&image, h, w, nh, nw).map_err(data)?;
        let sample = SliceSample::new(net_image, vec![0; nh * nw], nh, nw, stem(path)).map_err(data)?;

        let clock = Instant::now();
        let (_, pred) = predict_slice(net, &sample).map_err(classify)?;
        let ms = clock.elapsed().as_secs_f64() * 1e3;
        total_ms += ms;

        let mask = resize_mask(&pred, nh, nw, h, w).map_err(data)?;
        let name = stem(path);
        let mask_file = SliceFile::mask(h, w, mask.clone()).map_err(runtime)?;
        write_qtns(&args.out.join(format!("{name}_pred.qtns")), &mask_file).map_err(runtime)?;
        if args.overlay {
            let truth = sibling_truth(path, h, w);
            let ppm = overlay::render(&image, h, w, &mask, truth.as_deref());
            write_atomic(&args.out.join(format!("{name}_overlay.ppm")), &ppm).map_err(runtime)?;
        }
        println!("{}\t{ms:.1} ms", path.display());
    }
    println!(
        "{} slices, mean {:.1} ms/slice, masks in {}",
        inputs.len(),
        total_ms / inputs.len() as f64,
        args.out.display()
    );
    Ok(())
}
