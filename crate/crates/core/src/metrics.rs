//! Segmentation metrics and the evaluation report.
//!
//! - Dice per class and slice, excluded when the class is absent from the
//!   ground truth; summarised as mean and population standard deviation.
//! - Pixel confusion matrix (rows = truth, cols = prediction) with a
//!   row-normalised percentage view.
//! - One-vs-rest pixel ROC on softmax scores, AUC by the trapezoid rule.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::write_atomic;
use crate::data::{make_batch, ClassId, SliceSample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::QuickTumorNet;
use crate::tensor::Scalar;

pub const DEFAULT_MAX_ROC_SAMPLES: usize = 1_000_000;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("masks have {a} and {b} pixels")));
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)` for class `class`; `None` when the truth lacks it.
pub fn dice_per_class(pred: &[u8], truth: &[u8], class: u8) -> Result<Option<f64>> {
    same_len(pred.len(), truth.len())?;
    let (mut a, mut b, mut both) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        let (ip, it) = (p == class, t == class);
        a += ip as u64;
        b += it as u64;
        both += (ip && it) as u64;
    }
    if b == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (a + b) as f64))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][pred]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        same_len(pred.len(), truth.len())?;
        let k = self.classes();
        if let Some(v) = pred.iter().chain(truth).find(|&&v| v as usize >= k) {
            return Err(Error::Shape(format!("class id {v} out of range for {k} classes")));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Each nonempty row scaled to percentages; empty rows stay zero.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if sum == 0 { 0.0 } else { 100.0 * c as f64 / sum as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let k = self.classes();
        let mut out = String::from("truth,pred,count,row_percent\n");
        let pct = self.row_percentages();
        for t in 0..k {
            for p in 0..k {
                out.push_str(&format!("{t},{p},{},{:.2}\n", self.counts[t][p], pct[t][p]));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: usize,
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// One-vs-rest ROC from per-pixel scores for `class`. Inputs longer than
/// `max_samples` are subsampled uniformly without replacement (seeded).
pub fn roc_auc(scores: &[f64], positive: &[bool], class: usize, max_samples: usize, seed: u64) -> Result<RocCurve> {
    same_len(scores.len(), positive.len())?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Shape(format!("non-finite score {s} for class {class}")));
    }
    let mut pairs: Vec<(f64, bool)> = if scores.len() > max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample_indices(&mut rng, scores.len(), max_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| (scores[i], positive[i])).collect()
    } else {
        scores.iter().copied().zip(positive.iter().copied()).collect()
    };
    let p = pairs.iter().filter(|x| x.1).count();
    let n = pairs.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::SingleClass { class });
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    // sweep thresholds from high to low, one step per distinct score; twice
    // the trapezoid area is accumulated exactly in integers
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(RocCurve {
        class,
        points,
        auc: area2 as f64 / (2 * p as u128 * n as u128) as f64,
        positives: p,
        negatives: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDice {
    pub class: usize,
    pub name: String,
    /// One value per slice whose ground truth contains the class.
    pub values: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub classes: Vec<ClassDice>,
    /// Mean of the per-class means over the tumour classes that occur.
    pub foreground_mean: Option<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl DiceReport {
    pub fn from_values(per_class: Vec<Vec<f64>>) -> Self {
        let classes: Vec<ClassDice> = per_class
            .into_iter()
            .enumerate()
            .map(|(class, values)| {
                let stats = mean_std(&values);
                ClassDice {
                    class,
                    name: ClassId::from_code(class as u8)
                        .map(|c| c.name().to_string())
                        .unwrap_or_else(|| format!("class{class}")),
                    mean: stats.map(|s| s.0),
                    std: stats.map(|s| s.1),
                    values,
                }
            })
            .collect();
        let fg: Vec<f64> = classes.iter().skip(1).filter_map(|c| c.mean).collect();
        DiceReport {
            foreground_mean: (!fg.is_empty()).then(|| fg.iter().sum::<f64>() / fg.len() as f64),
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocEntry {
    pub class: usize,
    pub name: String,
    pub auc: Option<f64>,
    pub points: Vec<(f64, f64)>,
    /// Why the curve is missing, if it is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub counts: Vec<Vec<u64>>,
    pub row_percent: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dice: DiceReport,
    pub confusion: ConfusionReport,
    pub roc: Vec<RocEntry>,
    /// Pixel accuracy, trace / total of the confusion matrix.
    pub accuracy: f64,
    pub ms_per_slice: f64,
    /// SHA-256 over the evaluated slices (ids, dims, pixels).
    pub fingerprint: String,
    pub slices: usize,
    pub pixels: u64,
}

impl EvalReport {
    pub fn confusion_matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            counts: self.confusion.counts.clone(),
        }
    }

    /// Writes `report.json`, `confusion.csv` and `roc_<class>.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(&dir.join("report.json"), &json)?;
        write_atomic(&dir.join("confusion.csv"), self.confusion_matrix().to_csv().as_bytes())?;
        for r in &self.roc {
            let mut csv = String::from("fpr,tpr\n");
            for (f, t) in &r.points {
                csv.push_str(&format!("{f},{t}\n"));
            }
            write_atomic(&dir.join(format!("roc_{}.csv", r.name)), csv.as_bytes())?;
        }
        Ok(())
    }
}

/// Fixed-size uniform sample of a stream (Algorithm R).
#[derive(Debug, Clone)]
struct Reservoir {
    cap: usize,
    seen: u64,
    items: Vec<(f64, bool)>,
}

impl Reservoir {
    fn new(cap: usize) -> Self {
        Reservoir {
            cap,
            seen: 0,
            items: Vec::new(),
        }
    }

    fn push(&mut self, item: (f64, bool), rng: &mut ChaCha8Rng) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(item);
        } else {
            let j = rng.random_range(0..self.seen);
            if (j as usize) < self.cap {
                self.items[j as usize] = item;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub max_roc_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_roc_samples: DEFAULT_MAX_ROC_SAMPLES,
            seed: 0,
        }
    }
}

/// Accumulates per-slice results into an [`EvalReport`].
pub struct ReportBuilder {
    classes: usize,
    cfg: EvalConfig,
    rng: ChaCha8Rng,
    dice: Vec<Vec<f64>>,
    confusion: ConfusionMatrix,
    reservoirs: Vec<Reservoir>,
    millis: Vec<f64>,
    hasher: Sha256,
}

impl ReportBuilder {
    pub fn new(classes: usize, cfg: EvalConfig) -> Self {
        ReportBuilder {
            classes,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            dice: vec![Vec::new(); classes],
            confusion: ConfusionMatrix::new(classes),
            reservoirs: (0..classes).map(|_| Reservoir::new(cfg.max_roc_samples)).collect(),
            millis: Vec::new(),
            hasher: Sha256::new(),
        }
    }

    /// Adds one slice. `probs` is class-major (classes x pixels).
    pub fn add(&mut self, sample: &SliceSample, pred: &[u8], probs: &[f64], millis: f64) -> Result<()> {
        let px = sample.mask.len();
        same_len(pred.len(), px)?;
        same_len(probs.len(), px * self.classes)?;
        self.confusion.add(pred, &sample.mask)?;
        for c in 0..self.classes {
            if let Some(d) = dice_per_class(pred, &sample.mask, c as u8)? {
                self.dice[c].push(d);
            }
            let scores = &probs[c * px..(c + 1) * px];
            for (&s, &t) in scores.iter().zip(&sample.mask) {
                self.reservoirs[c].push((s, t as usize == c), &mut self.rng);
            }
        }
        self.millis.push(millis);
        fingerprint_update(&mut self.hasher, sample);
        Ok(())
    }

    pub fn finish(self) -> Result<EvalReport> {
        if self.millis.is_empty() {
            return Err(Error::Empty("no slices evaluated".into()));
        }
        let dice = DiceReport::from_values(self.dice);
        let mut roc = Vec::with_capacity(self.classes);
        for (c, r) in self.reservoirs.into_iter().enumerate() {
            let name = dice.classes[c].name.clone();
            let (scores, labels): (Vec<f64>, Vec<bool>) = r.items.into_iter().unzip();
            roc.push(match roc_auc(&scores, &labels, c, self.cfg.max_roc_samples, self.cfg.seed) {
                Ok(curve) => RocEntry {
                    class: c,
                    name,
                    auc: Some(curve.auc),
                    points: curve.points,
                    note: None,
                },
                Err(e) => RocEntry {
                    class: c,
                    name,
                    auc: None,
                    points: Vec::new(),
                    note: Some(e.to_string()),
                },
            });
        }
        Ok(EvalReport {
            accuracy: self.confusion.accuracy().unwrap_or(0.0),
            pixels: self.confusion.total(),
            confusion: ConfusionReport {
                row_percent: self.confusion.row_percentages(),
                counts: self.confusion.counts,
            },
            dice,
            roc,
            ms_per_slice: self.millis.iter().sum::<f64>() / self.millis.len() as f64,
            fingerprint: hex(&self.hasher.finalize()),
            slices: self.millis.len(),
        })
    }
}

fn fingerprint_update(h: &mut Sha256, s: &SliceSample) {
    h.update((s.patient_id.len() as u64).to_le_bytes());
    h.update(s.patient_id.as_bytes());
    h.update((s.height as u64).to_le_bytes());
    h.update((s.width as u64).to_le_bytes());
    for v in &s.image {
        h.update(v.to_le_bytes());
    }
    h.update(&s.mask);
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over a set of slices, as reported in [`EvalReport::fingerprint`].
pub fn fingerprint(samples: &[SliceSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        fingerprint_update(&mut h, s);
    }
    hex(&h.finalize())
}

/// Per-pixel argmax over classes of a class-major probability plane set;
/// ties go to the lower class id.
pub fn argmax_classes(probs: &[f64], classes: usize) -> Vec<u8> {
    let px = probs.len() / classes;
    (0..px)
        .map(|j| {
            let mut best = 0;
            for c in 1..classes {
                if probs[c * px + j] > probs[best * px + j] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Segments one slice: class-major probabilities and the argmax mask.
pub fn predict_slice<T: Scalar>(net: &QuickTumorNet<T>, sample: &SliceSample) -> Result<(Vec<f64>, Vec<u8>)> {
    let (x, _) = make_batch::<T>(&[sample])?;
    let probs = net.predict(&x)?.to_f64_vec();
    let mask = argmax_classes(&probs, net.config().num_classes);
    Ok((probs, mask))
}

/// Runs infer-mode prediction slice by slice and assembles every metric.
pub fn evaluate<T: Scalar>(net: &QuickTumorNet<T>, samples: &[SliceSample], cfg: EvalConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split has no slices".into()));
    }
    let classes = net.config().num_classes;
    if classes != NUM_CLASSES {
        return Err(Error::Config(format!(
            "evaluation expects a {NUM_CLASSES}-class network, got {classes}"
        )));
    }
    let mut report = ReportBuilder::new(classes, cfg);
    for s in samples {
        let start = Instant::now();
        let (probs, pred) = predict_slice(net, s)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        report.add(s, &pred, &probs, ms)?;
    }
    report.finish()
}
