//! Synthetic "brain slice" generator: a noisy disc with up to a few
//! non-overlapping elliptical lesions. Each tumour class has its own
//! intensity band and texture, so the task is learnable from appearance and
//! the masks are exact by construction.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{Manifest, ManifestRow};
use crate::data::qtns::{write_qtns, SliceFile};
use crate::data::{Plane, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassTexture {
    /// Mean intensity of the lesion.
    pub base: f32,
    /// Uniform noise amplitude.
    pub noise: f32,
    /// Amplitude of a sinusoidal speckle pattern.
    pub speckle: f32,
    /// Speckle period in pixels.
    pub period: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Intensity of healthy tissue inside the disc.
    pub tissue: ClassTexture,
    /// Textures of classes 1..=3.
    pub classes: [ClassTexture; NUM_CLASSES - 1],
    /// Inclusive range of lesions per slice.
    pub lesions: (usize, usize),
    /// Ellipse semi-axis range as a fraction of the image size.
    pub axis: (f64, f64),
    /// Allowed foreground fraction of a slice with at least one lesion.
    pub area: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        let tex = |base, noise, speckle, period| ClassTexture {
            base,
            noise,
            speckle,
            period,
        };
        SynthConfig {
            count: 64,
            size: 64,
            seed: 0,
            tissue: tex(0.40, 0.05, 0.0, 1.0),
            classes: [
                tex(0.90, 0.03, 0.0, 1.0),
                tex(0.65, 0.04, 0.12, 3.0),
                tex(0.15, 0.03, 0.05, 6.0),
            ],
            lesions: (1, 2),
            axis: (0.08, 0.18),
            area: (0.01, 0.25),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.count == 0 {
            problems.push("count must be at least 1".to_string());
        }
        if self.size < 16 || self.size > super::qtns::MAX_DIM {
            problems.push(format!("size {} outside 16..={}", self.size, super::qtns::MAX_DIM));
        }
        if self.lesions.0 > self.lesions.1 || self.lesions.1 > 8 {
            problems.push(format!("lesion range {:?} invalid", self.lesions));
        }
        if !(self.axis.0 > 0.0 && self.axis.0 <= self.axis.1 && self.axis.1 < 0.3) {
            problems.push(format!("axis range {:?} must satisfy 0 < lo <= hi < 0.3", self.axis));
        }
        if !(0.0 <= self.area.0 && self.area.0 <= self.area.1 && self.area.1 <= 1.0) {
            problems.push(format!("area bounds {:?} invalid", self.area));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One lesion, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub class: u8,
    pub cy: f64,
    pub cx: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Lesion {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as f64 + 0.5 - self.cy, x as f64 + 0.5 - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlice {
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub lesions: Vec<Lesion>,
}

fn texture(t: &ClassTexture, y: usize, x: usize, rng: &mut ChaCha8Rng) -> f32 {
    let w = std::f32::consts::TAU / t.period;
    let pattern = (y as f32 * w).sin() * (x as f32 * w).cos();
    t.base + t.speckle * pattern + t.noise * rng.random_range(-1.0f32..=1.0)
}

/// Generates one slice. Lesion layouts are redrawn until the lesions fit
/// inside the disc without overlapping and the foreground fraction lies
/// within `cfg.area`.
pub fn synth_slice(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> SynthSlice {
    let n = cfg.size;
    let c = n as f64 / 2.0;
    let radius = 0.45 * n as f64;
    let in_disc = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 + 0.5 - c, x as f64 + 0.5 - c);
        dy * dy + dx * dx <= radius * radius
    };

    let count = rng.random_range(cfg.lesions.0..=cfg.lesions.1);
    let (mask, lesions) = 'layout: loop {
        let mut mask = vec![0u8; n * n];
        let mut lesions = Vec::with_capacity(count);
        'lesion: while lesions.len() < count {
            let a = rng.random_range(cfg.axis.0..=cfg.axis.1) * n as f64;
            let b = rng.random_range(cfg.axis.0..=cfg.axis.1) * n as f64;
            let reach = radius - a.max(b);
            let lesion = Lesion {
                class: rng.random_range(1..NUM_CLASSES as u8),
                cy: c + rng.random_range(-reach..=reach),
                cx: c + rng.random_range(-reach..=reach),
                a,
                b,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            };
            let mut pixels = Vec::new();
            for y in 0..n {
                for x in 0..n {
                    if lesion.contains(y, x) {
                        // keep a one-pixel gap so lesions never touch
                        if !in_disc(y, x) || touches(&mask, n, y, x) {
                            continue 'lesion;
                        }
                        pixels.push(y * n + x);
                    }
                }
            }
            if pixels.is_empty() {
                continue;
            }
            for p in pixels {
                mask[p] = lesion.class;
            }
            lesions.push(lesion);
        }
        let fg = mask.iter().filter(|&&v| v != 0).count() as f64 / (n * n) as f64;
        if count == 0 || (cfg.area.0..=cfg.area.1).contains(&fg) {
            break 'layout (mask, lesions);
        }
    };

    let mut image = vec![0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let v = match mask[i] {
                0 if in_disc(y, x) => texture(&cfg.tissue, y, x, rng),
                0 => 0.0,
                k => texture(&cfg.classes[k as usize - 1], y, x, rng),
            };
            image[i] = v.clamp(0.0, 1.0);
        }
    }
    SynthSlice { image, mask, lesions }
}

fn touches(mask: &[u8], n: usize, y: usize, x: usize) -> bool {
    let (y0, y1) = (y.saturating_sub(1), (y + 1).min(n - 1));
    let (x0, x1) = (x.saturating_sub(1), (x + 1).min(n - 1));
    (y0..=y1).any(|yy| (x0..=x1).any(|xx| mask[yy * n + xx] != 0))
}

pub fn image_name(i: usize) -> String {
    format!("slice_{i:04}.qtns")
}

pub fn mask_name(i: usize) -> String {
    format!("slice_{i:04}_mask.qtns")
}

/// Writes `cfg.count` image/mask pairs and an unsplit `manifest.csv` into
/// `out`. Each slice is its own synthetic patient.
pub fn synth_generate(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let planes = [Plane::Axial, Plane::Sagittal, Plane::Coronal];
    let mut rows = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let s = synth_slice(cfg, &mut rng);
        write_qtns(&out.join(image_name(i)), &SliceFile::image(cfg.size, cfg.size, s.image)?)?;
        let mut classes: Vec<u8> = s.lesions.iter().map(|l| l.class).collect();
        classes.sort_unstable();
        classes.dedup();
        write_qtns(&out.join(mask_name(i)), &SliceFile::mask(cfg.size, cfg.size, s.mask)?)?;
        rows.push(ManifestRow {
            image: image_name(i),
            mask: mask_name(i),
            patient_id: format!("synth-{i:04}"),
            plane: Some(planes[i % planes.len()]),
            classes,
            split: None,
        });
    }
    let manifest = Manifest::new(out, rows);
    manifest.write(&out.join("manifest.csv"))?;
    Ok(manifest)
}
