//! Adaptive false-positive / false-negative weighted cross entropy.
//!
//! For every class `c`, one-vs-rest on the softmax output `P_c`:
//!
//! ```text
//! Y+  = { j : label_j == c }            Y-  = { j : label_j != c }
//! Yf+ = { j in Y- : P_c(j) >  t }       Yf- = { j in Y+ : P_c(j) <= t }
//!
//! L1_c = -1/|Y+| sum_{Y+} log P_c  - 1/|Y-| sum_{Y-} log(1 - P_c)
//! L2_c = -g1/|Y+| sum_{Yf+} log(1 - P_c) - g2/|Y-| sum_{Yf-} log P_c
//! g1   = 0.5 + mean_{Yf+} |(1 - P_c) - 0.5|
//! g2   = 0.5 + mean_{Yf-} |P_c - 0.5|
//! L    = sum_c (L1_c + L2_c)
//! ```
//!
//! Set membership and the gammas are computed from the current probabilities
//! and then held constant for differentiation ([`FrozenLoss`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::softmax_channels;
use crate::tensor::{Scalar, Tensor};

/// Denominator used by the L2 sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Normalization {
    /// `|Y+|` for the false-positive sum and `|Y-|` for the false-negative
    /// sum, as the loss is usually written.
    #[default]
    ClassSets,
    /// `|Yf+|` and `|Yf-|`, matching the gamma averages.
    FlaggedSets,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub threshold: f64,
    pub log_floor: f64,
    #[serde(default)]
    pub l2_normalization: L2Normalization,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            threshold: 0.5,
            log_floor: 1e-12,
            l2_normalization: L2Normalization::ClassSets,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config(format!("log_floor must be > 0, got {}", self.log_floor)));
        }
        Ok(())
    }
}

/// Per-pixel ground-truth class ids, shape (n, h, w).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>, num_classes: usize) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::Shape(format!(
                "label map {n}x{h}x{w} needs {} entries, got {}",
                n * h * w,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v as usize >= num_classes) {
            return Err(Error::Shape(format!(
                "label {} at pixel {i} exceeds {} classes",
                data[i], num_classes
            )));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Pixel sets of one class. Indices are flat over (n, h, w).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassPartition {
    pub class: usize,
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    pub false_plus: Vec<usize>,
    pub false_minus: Vec<usize>,
}

/// The two adaptive weights; `None` when their set is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gammas {
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTerms {
    pub class: usize,
    pub l1: f64,
    pub l2: f64,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub n_plus: usize,
    pub n_minus: usize,
    pub n_false_plus: usize,
    pub n_false_minus: usize,
    /// An empty `Y+` or `Y-` zeroed a normalised term.
    pub degenerate: bool,
}

impl ClassTerms {
    pub fn total(&self) -> f64 {
        self.l1 + self.l2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossTerms {
    pub classes: Vec<ClassTerms>,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub degenerate: bool,
}

/// Reads P_c at flat pixel j of a (n, C, h, w) probability tensor.
#[inline]
fn prob<T: Scalar>(probs: &Tensor<T>, c: usize, j: usize) -> f64 {
    let s = probs.shape();
    let hw = s.plane();
    let (b, pix) = (j / hw, j % hw);
    probs.data()[(b * s.c + c) * hw + pix].f64()
}

fn check_pair<T: Scalar>(probs: &Tensor<T>, labels: &LabelMap) -> Result<()> {
    let s = probs.shape();
    if (s.n, s.h, s.w) != labels.dims() {
        return Err(Error::Shape(format!(
            "probabilities {s} do not match labels {:?}",
            labels.dims()
        )));
    }
    if let Some(&v) = labels.data.iter().find(|&&v| v as usize >= s.c) {
        return Err(Error::Shape(format!("label {v} out of range for {} classes", s.c)));
    }
    Ok(())
}

pub fn partition_sets<T: Scalar>(
    probs: &Tensor<T>,
    labels: &LabelMap,
    cfg: &LossConfig,
) -> Result<Vec<ClassPartition>> {
    check_pair(probs, labels)?;
    let classes = probs.shape().c;
    let mut parts: Vec<ClassPartition> = (0..classes)
        .map(|class| ClassPartition {
            class,
            ..Default::default()
        })
        .collect();
    for (j, &label) in labels.data.iter().enumerate() {
        for (c, part) in parts.iter_mut().enumerate() {
            let p = prob(probs, c, j);
            if label as usize == c {
                part.plus.push(j);
                if p <= cfg.threshold {
                    part.false_minus.push(j);
                }
            } else {
                part.minus.push(j);
                if p > cfg.threshold {
                    part.false_plus.push(j);
                }
            }
        }
    }
    Ok(parts)
}

pub fn compute_gammas<T: Scalar>(partition: &ClassPartition, probs: &Tensor<T>) -> Gammas {
    let c = partition.class;
    let mean_dev = |set: &[usize], f: &dyn Fn(f64) -> f64| -> Option<f64> {
        if set.is_empty() {
            return None;
        }
        let sum: f64 = set.iter().map(|&j| (f(prob(probs, c, j)) - 0.5).abs()).sum();
        Some(0.5 + sum / set.len() as f64)
    };
    Gammas {
        gamma1: mean_dev(&partition.false_plus, &|p| 1.0 - p),
        gamma2: mean_dev(&partition.false_minus, &|p| p),
    }
}

/// Sets and gammas captured at one point, reused for value and gradient.
#[derive(Debug, Clone)]
pub struct FrozenLoss {
    cfg: LossConfig,
    n_pixels: usize,
    partitions: Vec<ClassPartition>,
    gammas: Vec<Gammas>,
}

struct Weights {
    plus: f64,
    minus: f64,
    false_plus: f64,
    false_minus: f64,
    degenerate: bool,
}

impl FrozenLoss {
    pub fn freeze<T: Scalar>(probs: &Tensor<T>, labels: &LabelMap, cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        let partitions = partition_sets(probs, labels, cfg)?;
        let gammas = partitions.iter().map(|p| compute_gammas(p, probs)).collect();
        Ok(FrozenLoss {
            cfg: *cfg,
            n_pixels: labels.len(),
            partitions,
            gammas,
        })
    }

    pub fn partitions(&self) -> &[ClassPartition] {
        &self.partitions
    }

    pub fn gammas(&self) -> &[Gammas] {
        &self.gammas
    }

    /// Coefficients multiplying each set's sum of -log terms.
    fn weights(&self, c: usize) -> Weights {
        let part = &self.partitions[c];
        let g = self.gammas[c];
        let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let (fp_den, fn_den) = match self.cfg.l2_normalization {
            L2Normalization::ClassSets => (part.plus.len(), part.minus.len()),
            L2Normalization::FlaggedSets => (part.false_plus.len(), part.false_minus.len()),
        };
        let degenerate = part.plus.is_empty() || part.minus.is_empty();
        Weights {
            plus: inv(part.plus.len()),
            minus: inv(part.minus.len()),
            false_plus: g.gamma1.unwrap_or(0.0) * inv(fp_den),
            false_minus: g.gamma2.unwrap_or(0.0) * inv(fn_den),
            degenerate,
        }
    }

    fn check<T: Scalar>(&self, probs: &Tensor<T>) -> Result<()> {
        let s = probs.shape();
        if s.c != self.partitions.len() || s.n * s.plane() != self.n_pixels {
            return Err(Error::Shape(format!(
                "probabilities {s} do not match the frozen partition ({} classes, {} pixels)",
                self.partitions.len(),
                self.n_pixels
            )));
        }
        Ok(())
    }

    /// Loss value at `probs` with the frozen sets and gammas.
    pub fn value<T: Scalar>(&self, probs: &Tensor<T>) -> Result<LossTerms> {
        self.check(probs)?;
        let floor = self.cfg.log_floor;
        let nlog = |x: f64| -(x.max(floor)).ln();
        let mut classes = Vec::with_capacity(self.partitions.len());
        for (c, part) in self.partitions.iter().enumerate() {
            let w = self.weights(c);
            let pos: f64 = part.plus.iter().map(|&j| nlog(prob(probs, c, j))).sum();
            let neg: f64 = part.minus.iter().map(|&j| nlog(1.0 - prob(probs, c, j))).sum();
            let fp: f64 = part.false_plus.iter().map(|&j| nlog(1.0 - prob(probs, c, j))).sum();
            let fneg: f64 = part.false_minus.iter().map(|&j| nlog(prob(probs, c, j))).sum();
            let g = self.gammas[c];
            classes.push(ClassTerms {
                class: c,
                l1: w.plus * pos + w.minus * neg,
                l2: w.false_plus * fp + w.false_minus * fneg,
                gamma1: g.gamma1,
                gamma2: g.gamma2,
                n_plus: part.plus.len(),
                n_minus: part.minus.len(),
                n_false_plus: part.false_plus.len(),
                n_false_minus: part.false_minus.len(),
                degenerate: w.degenerate,
            });
        }
        let l1: f64 = classes.iter().map(|t| t.l1).sum();
        let l2: f64 = classes.iter().map(|t| t.l2).sum();
        let degenerate = classes.iter().any(|t| t.degenerate);
        Ok(LossTerms {
            total: classes.iter().map(ClassTerms::total).sum(),
            classes,
            l1,
            l2,
            degenerate,
        })
    }

    /// d(loss)/d(probabilities) with the frozen sets and gammas.
    pub fn gradient<T: Scalar>(&self, probs: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(probs)?;
        let s = probs.shape();
        let hw = s.plane();
        let floor = self.cfg.log_floor;
        let mut grad = vec![0.0f64; s.len()];
        let at = |c: usize, j: usize| (j / hw * s.c + c) * hw + j % hw;
        // d/dp -log(max(p, floor)) = -1/p above the floor, 0 below
        let dlog = |p: f64| if p > floor { -1.0 / p } else { 0.0 };
        for (c, part) in self.partitions.iter().enumerate() {
            let w = self.weights(c);
            for &j in &part.plus {
                grad[at(c, j)] += w.plus * dlog(prob(probs, c, j));
            }
            for &j in &part.minus {
                grad[at(c, j)] -= w.minus * dlog(1.0 - prob(probs, c, j));
            }
            for &j in &part.false_plus {
                grad[at(c, j)] -= w.false_plus * dlog(1.0 - prob(probs, c, j));
            }
            for &j in &part.false_minus {
                grad[at(c, j)] += w.false_minus * dlog(prob(probs, c, j));
            }
        }
        let out = Tensor::from_f64(s, &grad)?;
        if !out.is_finite() {
            return Err(Error::NonFiniteGradient {
                layer: "loss".into(),
            });
        }
        Ok(out)
    }
}

pub fn loss_forward<T: Scalar>(probs: &Tensor<T>, labels: &LabelMap, cfg: &LossConfig) -> Result<LossTerms> {
    FrozenLoss::freeze(probs, labels, cfg)?.value(probs)
}

/// Loss terms and d(loss)/d(probabilities), sets and gammas frozen at `probs`.
pub fn loss_gradient<T: Scalar>(
    probs: &Tensor<T>,
    labels: &LabelMap,
    cfg: &LossConfig,
) -> Result<(LossTerms, Tensor<T>)> {
    let frozen = FrozenLoss::freeze(probs, labels, cfg)?;
    Ok((frozen.value(probs)?, frozen.gradient(probs)?))
}

/// Same as [`loss_gradient`] but chained through the channel softmax, giving
/// d(loss)/d(logits).
pub fn loss_gradient_logits<T: Scalar>(
    logits: &Tensor<T>,
    labels: &LabelMap,
    cfg: &LossConfig,
) -> Result<(LossTerms, Tensor<T>)> {
    let (probs, ctx) = softmax_channels(logits);
    let (terms, dprobs) = loss_gradient(&probs, labels, cfg)?;
    Ok((terms, ctx.backward(&dprobs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    /// Two-class probability map from foreground probabilities.
    fn binary(p1: &[f64]) -> Tensor<f64> {
        let n = p1.len();
        let mut data: Vec<f64> = p1.iter().map(|p| 1.0 - p).collect();
        data.extend_from_slice(p1);
        Tensor::from_vec(Shape::new(1, 2, 1, n), data).unwrap()
    }

    fn labels(l: &[u8], classes: usize) -> LabelMap {
        LabelMap::new(1, 1, l.len(), l.to_vec(), classes).unwrap()
    }

    #[test]
    fn perfect_prediction_has_no_false_sets() {
        let probs = binary(&[0.0, 1.0, 1.0, 0.0]);
        let parts = partition_sets(&probs, &labels(&[0, 1, 1, 0], 2), &LossConfig::default()).unwrap();
        for p in parts {
            assert!(p.false_plus.is_empty() && p.false_minus.is_empty());
        }
    }

    #[test]
    fn all_false_positive() {
        let probs = binary(&[0.6; 5]);
        let parts = partition_sets(&probs, &labels(&[0; 5], 2), &LossConfig::default()).unwrap();
        assert_eq!(parts[1].false_plus, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn four_pixel_enumeration() {
        let probs = binary(&[0.6, 0.2, 0.9, 0.4]);
        let parts = partition_sets(&probs, &labels(&[0, 0, 1, 1], 2), &LossConfig::default()).unwrap();
        assert_eq!(parts[1].false_plus, vec![0]);
        assert_eq!(parts[1].false_minus, vec![3]);
        assert_eq!(parts[1].plus, vec![2, 3]);
        assert_eq!(parts[1].minus, vec![0, 1]);
    }

    #[test]
    fn gamma_at_half_is_half() {
        let probs = binary(&[0.5, 0.5]);
        let part = ClassPartition {
            class: 1,
            plus: vec![],
            minus: vec![0, 1],
            false_plus: vec![0, 1],
            false_minus: vec![],
        };
        let g = compute_gammas(&part, &probs);
        assert_eq!(g.gamma1, Some(0.5));
        assert_eq!(g.gamma2, None);
    }

    #[test]
    fn gamma_from_deviations() {
        // P(y=0) in {0.1, 0.3}: deviations 0.4 and 0.2, mean 0.3
        let probs = binary(&[0.9, 0.7]);
        let parts = partition_sets(&probs, &labels(&[0, 0], 2), &LossConfig::default()).unwrap();
        let g = compute_gammas(&parts[1], &probs);
        assert!((g.gamma1.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn worked_two_pixel_example() {
        // pixel a: label 1, P1 = 0.9; pixel b: label 0, P1 = 0.6
        let probs = binary(&[0.9, 0.6]);
        let terms = loss_forward(&probs, &labels(&[1, 0], 2), &LossConfig::default()).unwrap();
        let c1 = &terms.classes[1];
        let l1 = -(0.9f64.ln()) - 0.4f64.ln();
        let l2 = -0.6 * 0.4f64.ln();
        assert!((c1.gamma1.unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(c1.gamma2, None);
        assert!((c1.l1 - l1).abs() < 1e-12);
        assert!((c1.l2 - l2).abs() < 1e-12);
        // class 0 mirrors class 1 exactly in the two-class case
        assert!((terms.total - 2.0 * (l1 + l2)).abs() < 1e-12);
    }

    #[test]
    fn clamped_perfect_prediction_is_near_zero() {
        let eps = 1e-12;
        let mut data = vec![eps / 3.0; 4 * 3];
        // pixel k has label k (k = 0..3), 3 pixels, 4 classes
        for k in 0..3 {
            data[k * 3 + k] = 1.0 - eps;
        }
        let probs = Tensor::from_vec(Shape::new(1, 4, 1, 3), data).unwrap();
        let terms = loss_forward(&probs, &labels(&[0, 1, 2], 4), &LossConfig::default()).unwrap();
        assert!(terms.total < 1e-10, "{}", terms.total);
        assert!(terms.total >= 0.0);
        assert!(terms.degenerate, "class 3 has no positives");
    }

    #[test]
    fn duplicating_pixels_keeps_loss() {
        let probs = binary(&[0.6, 0.2, 0.9, 0.4]);
        let doubled = binary(&[0.6, 0.2, 0.9, 0.4, 0.6, 0.2, 0.9, 0.4]);
        let cfg = LossConfig::default();
        let a = loss_forward(&probs, &labels(&[0, 0, 1, 1], 2), &cfg).unwrap();
        let b = loss_forward(&doubled, &labels(&[0, 0, 1, 1, 0, 0, 1, 1], 2), &cfg).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn positive_term_derivative() {
        let probs = binary(&[0.8, 0.3, 0.2]);
        let frozen = FrozenLoss::freeze(&probs, &labels(&[1, 1, 0], 2), &LossConfig::default()).unwrap();
        let g = frozen.gradient(&probs).unwrap();
        // pixel 0: class 1, in Y+ only (0.8 > 0.5): -1/(|Y+| P) = -1/(2 * 0.8)
        assert!((g.at(0, 1, 0, 0) + 1.0 / (2.0 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn zero_logit_gradient_at_perfect_prediction() {
        let mut logits = vec![-800.0; 4 * 2];
        logits[0] = 800.0; // pixel 0 -> class 0
        logits[2 * 2 + 1] = 800.0; // pixel 1 -> class 2
        let logits = Tensor::from_vec(Shape::new(1, 4, 1, 2), logits).unwrap();
        let (_, g) = loss_gradient_logits(&logits, &labels(&[0, 2], 4), &LossConfig::default()).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.0), "{:?}", g.data());
    }

    #[test]
    fn flagged_set_normalization_switch() {
        let probs = binary(&[0.9, 0.6, 0.7, 0.1]);
        let l = labels(&[1, 0, 0, 0], 2);
        let printed = loss_forward(&probs, &l, &LossConfig::default()).unwrap();
        let flagged = loss_forward(
            &probs,
            &l,
            &LossConfig {
                l2_normalization: L2Normalization::FlaggedSets,
                ..LossConfig::default()
            },
        )
        .unwrap();
        assert_eq!(printed.l1, flagged.l1);
        // class 1: Yf+ = {1, 2}, |Y+| = 1 vs |Yf+| = 2
        assert!((printed.classes[1].l2 - 2.0 * flagged.classes[1].l2).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let probs = binary(&[0.5, 0.5]);
        assert!(loss_forward(&probs, &labels(&[0, 1, 1], 2), &LossConfig::default()).is_err());
    }
}
