//! Slices, manifests, splitting, resizing and the synthetic generator.

pub mod manifest;
pub mod qtns;
pub mod resize;
pub mod split;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LabelMap;
use crate::tensor::{Scalar, Shape, Tensor};

pub use manifest::{load_manifest, Manifest, ManifestRow};
pub use qtns::{read_image, read_mask, read_qtns, write_qtns, SliceData, SliceFile};
pub use resize::{resize_image, resize_mask, resize_sample};
pub use split::{split_by_patient, split_counts, SplitRatios};
pub use synth::{synth_generate, SynthConfig};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ClassId {
    Normal = 0,
    Meningioma = 1,
    Glioma = 2,
    Pituitary = 3,
}

impl ClassId {
    pub const ALL: [ClassId; NUM_CLASSES] = [ClassId::Normal, ClassId::Meningioma, ClassId::Glioma, ClassId::Pituitary];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Normal => "normal",
            ClassId::Meningioma => "meningioma",
            ClassId::Glioma => "glioma",
            ClassId::Pituitary => "pituitary",
        }
    }
}

macro_rules! tag_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        concat!("unknown ", stringify!($name), " {:?} (expected one of: {})"),
                        other,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

tag_enum!(Plane { Axial => "axial", Sagittal => "sagittal", Coronal => "coronal" });
tag_enum!(Split { Train => "train", Val => "val", Test => "test" });

/// One loaded slice: normalised image plus mask, same dims.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub patient_id: String,
    pub plane: Option<Plane>,
    /// Dims as stored on disk, before any resize.
    pub source_dims: (usize, usize),
}

impl SliceSample {
    pub fn new(image: Vec<f32>, mask: Vec<u8>, height: usize, width: usize, patient_id: impl Into<String>) -> Result<Self> {
        if image.len() != height * width || mask.len() != height * width {
            return Err(Error::Shape(format!(
                "slice {height}x{width}: image has {} values, mask {}",
                image.len(),
                mask.len()
            )));
        }
        if let Some(i) = mask.iter().position(|&v| v as usize >= NUM_CLASSES) {
            return Err(Error::Shape(format!("mask value {} at pixel {i} is not a class id", mask[i])));
        }
        Ok(SliceSample {
            image,
            mask,
            height,
            width,
            patient_id: patient_id.into(),
            plane: None,
            source_dims: (height, width),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Per-slice min-max scaling to [0, 1]. A constant image becomes all zeros.
pub fn normalize_min_max(values: &mut [f32]) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { ((*v - lo) / range).clamp(0.0, 1.0) } else { 0.0 };
    }
}

/// Reads a row's image and mask, normalises the image and optionally resizes.
pub fn load_sample(manifest: &Manifest, row: &ManifestRow, size: Option<(usize, usize)>) -> Result<SliceSample> {
    let image_path = manifest.resolve(&row.image);
    let mask_path = manifest.resolve(&row.mask);
    let (h, w, mut image) = read_image(&image_path)?;
    let (mh, mw, mask) = read_mask(&mask_path)?;
    if (h, w) != (mh, mw) {
        return Err(Error::Shape(format!(
            "{} is {h}x{w} but its mask {} is {mh}x{mw}",
            image_path.display(),
            mask_path.display()
        )));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape(format!("{} contains non-finite values", image_path.display())));
    }
    normalize_min_max(&mut image);
    let mut sample = SliceSample::new(image, mask, h, w, row.patient_id.clone())?;
    sample.plane = row.plane;
    match size {
        Some((oh, ow)) if (oh, ow) != (h, w) => resize_sample(&sample, oh, ow),
        _ => Ok(sample),
    }
}

pub fn load_split(manifest: &Manifest, split: Split, size: Option<(usize, usize)>) -> Result<Vec<SliceSample>> {
    manifest.rows_in(split).map(|r| load_sample(manifest, r, size)).collect()
}

/// Stacks samples into a (n, 1, h, w) image batch and its label map.
pub fn make_batch<T: Scalar>(samples: &[&SliceSample]) -> Result<(Tensor<T>, LabelMap)> {
    let first = samples.first().ok_or_else(|| Error::Empty("batch has no samples".into()))?;
    let (h, w) = first.dims();
    let mut image = Vec::with_capacity(samples.len() * h * w);
    let mut labels = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.dims() != (h, w) {
            return Err(Error::Shape(format!(
                "batch mixes {h}x{w} and {}x{} slices",
                s.height, s.width
            )));
        }
        image.extend(s.image.iter().map(|&v| T::of(v as f64)));
        labels.extend_from_slice(&s.mask);
    }
    let n = samples.len();
    Ok((
        Tensor::from_vec(Shape::new(n, 1, h, w), image)?,
        LabelMap::new(n, h, w, labels, NUM_CLASSES)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_bounds() {
        let mut v = vec![-3.0, 5.0, 1.0];
        normalize_min_max(&mut v);
        assert_eq!(v, [0.0, 1.0, 0.5]);
        let mut c = vec![2.0; 4];
        normalize_min_max(&mut c);
        assert_eq!(c, [0.0; 4]);
    }

    #[test]
    fn tags_parse() {
        assert_eq!("Sagittal".parse::<Plane>().unwrap(), Plane::Sagittal);
        assert_eq!(Split::Val.to_string(), "val");
        assert!("oblique".parse::<Plane>().is_err());
        assert_eq!(ClassId::from_code(2), Some(ClassId::Glioma));
        assert_eq!(ClassId::from_code(4), None);
    }
}
