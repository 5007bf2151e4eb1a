use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape;

/// Encoder blocks from full resolution down.
pub const ENCODERS: [&str; 4] = ["enc1", "enc2", "enc3", "enc4"];
/// Decoder blocks in execution order (lowest resolution first).
pub const DECODERS: [&str; 4] = ["dec4", "dec3", "dec2", "dec1"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub dense_kernel: usize,
    pub input_size: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            num_classes: 4,
            base_channels: 64,
            depth: 4,
            dense_kernel: 5,
            input_size: (256, 256),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
    /// ci * k * k for convolution weights, 0 otherwise.
    pub fan_in: usize,
}

/// Channel widths of one dense block.
///
/// `x(cin) -> bn1 -> relu -> conv1 k*k (cin -> c) = a`
/// `cat1 = [x, a] (cin + c) -> bn2 -> relu -> conv2 k*k (cin + c -> c) = b`
/// `cat2 = [cat1, b] (cin + 2c) -> conv3 1*1 (cin + 2c -> c)`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl DenseBlockSpec {
    pub fn first_concat(&self) -> usize {
        self.in_channels + self.out_channels
    }

    pub fn second_concat(&self) -> usize {
        self.in_channels + 2 * self.out_channels
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.depth != 4 {
            problems.push(format!("depth must be 4, got {}", self.depth));
        }
        if self.num_classes < 2 {
            problems.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.num_classes > 256 {
            problems.push(format!("num_classes must fit in a byte, got {}", self.num_classes));
        }
        if self.in_channels == 0 {
            problems.push("in_channels must be >= 1".to_string());
        }
        if self.base_channels == 0 {
            problems.push("base_channels must be >= 1".to_string());
        }
        if self.dense_kernel % 2 == 0 {
            problems.push(format!("dense_kernel must be odd, got {}", self.dense_kernel));
        }
        let (h, w) = self.input_size;
        let m = self.divisor();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            problems.push(format!("input_size {h}x{w} must be nonzero and divisible by {m}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Spatial sizes must be multiples of this (2^depth).
    pub fn divisor(&self) -> usize {
        1 << self.depth.min(16)
    }

    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let m = self.divisor();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "input spatial size {h}x{w} is not divisible by {m}"
            )));
        }
        Ok(())
    }

    pub fn encoder_block(&self, level: usize) -> DenseBlockSpec {
        DenseBlockSpec {
            in_channels: if level == 0 { self.in_channels } else { self.base_channels },
            out_channels: self.base_channels,
            kernel: self.dense_kernel,
        }
    }

    /// Every decoder sees the unpooled features plus the skip: 2 * base.
    pub fn decoder_block(&self) -> DenseBlockSpec {
        DenseBlockSpec {
            in_channels: 2 * self.base_channels,
            out_channels: self.base_channels,
            kernel: self.dense_kernel,
        }
    }

    /// Names of all batch-norm layers, in architectural order.
    pub fn norm_layers(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, name) in ENCODERS.iter().enumerate() {
            let b = self.encoder_block(i);
            out.push((format!("{name}.bn1"), b.in_channels));
            out.push((format!("{name}.bn2"), b.first_concat()));
        }
        out.push(("bottleneck.bn".to_string(), self.base_channels));
        for name in DECODERS {
            let b = self.decoder_block();
            out.push((format!("{name}.bn1"), b.in_channels));
            out.push((format!("{name}.bn2"), b.first_concat()));
        }
        out
    }

    /// The complete, ordered set of learnable tensors.
    pub fn parameter_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for (i, name) in ENCODERS.iter().enumerate() {
            dense_specs(&mut out, name, self.encoder_block(i));
        }
        let c = self.base_channels;
        let k = self.dense_kernel;
        conv_spec(&mut out, "bottleneck.conv", c, c, k, false);
        norm_spec(&mut out, "bottleneck.bn", c);
        for name in DECODERS {
            dense_specs(&mut out, name, self.decoder_block());
        }
        conv_spec(&mut out, "classifier.conv", c, self.num_classes, 1, true);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_specs().iter().map(|s| s.shape.len()).sum()
    }
}

fn conv_spec(out: &mut Vec<ParamSpec>, layer: &str, ci: usize, co: usize, k: usize, bias: bool) {
    out.push(ParamSpec {
        name: format!("{layer}.weight"),
        shape: Shape::new(co, ci, k, k),
        kind: ParamKind::ConvWeight,
        fan_in: ci * k * k,
    });
    if bias {
        out.push(ParamSpec {
            name: format!("{layer}.bias"),
            shape: Shape::new(co, 1, 1, 1),
            kind: ParamKind::ConvBias,
            fan_in: 0,
        });
    }
}

fn norm_spec(out: &mut Vec<ParamSpec>, layer: &str, c: usize) {
    out.push(ParamSpec {
        name: format!("{layer}.gamma"),
        shape: Shape::new(c, 1, 1, 1),
        kind: ParamKind::NormScale,
        fan_in: 0,
    });
    out.push(ParamSpec {
        name: format!("{layer}.beta"),
        shape: Shape::new(c, 1, 1, 1),
        kind: ParamKind::NormShift,
        fan_in: 0,
    });
}

fn dense_specs(out: &mut Vec<ParamSpec>, block: &str, spec: DenseBlockSpec) {
    let c = spec.out_channels;
    norm_spec(out, &format!("{block}.bn1"), spec.in_channels);
    conv_spec(out, &format!("{block}.conv1"), spec.in_channels, c, spec.kernel, true);
    norm_spec(out, &format!("{block}.bn2"), spec.first_concat());
    conv_spec(out, &format!("{block}.conv2"), spec.first_concat(), c, spec.kernel, true);
    conv_spec(out, &format!("{block}.conv3"), spec.second_concat(), c, 1, true);
}
