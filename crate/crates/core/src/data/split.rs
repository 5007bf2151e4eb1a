//! Patient-wise train/val/test assignment.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::Manifest;
use crate::data::Split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Config(format!("split ratios must lie in [0, 1], got {self}")));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

impl FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad ratio {p:?}")))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [train, val, test] => Ok(SplitRatios { train, val, test }),
            _ => Err(format!("expected three comma-separated ratios, got {s:?}")),
        }
    }
}

/// Patients per bucket (train, val, test).
///
/// Train and val get `floor(ratio * n)` (val at least one patient when its
/// ratio is nonzero), test gets the remainder. With a zero test ratio the
/// remainder goes to train. A bucket with a nonzero ratio that would still be
/// empty takes one patient from the largest bucket.
pub fn split_counts(patients: usize, ratios: &SplitRatios) -> Result<[usize; 3]> {
    ratios.validate()?;
    let r = [ratios.train, ratios.val, ratios.test];
    let wanted = r.iter().filter(|&&x| x > 0.0).count();
    if patients < wanted {
        return Err(Error::Config(format!(
            "{patients} patients cannot fill {wanted} nonempty splits"
        )));
    }
    let floor = |x: f64| (x * patients as f64 + 1e-9).floor() as usize;
    let at_least_one = |c: usize, ratio: f64| if ratio > 0.0 { c.max(1) } else { c };
    let val = at_least_one(floor(r[1]), r[1]);
    let train = floor(r[0]).min(patients - val);
    let mut counts = [train, val, 0];
    let rest = patients - train - val;
    if r[2] > 0.0 {
        counts[2] = rest;
    } else {
        counts[0] += rest;
    }
    for i in 0..3 {
        if r[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    Ok(counts)
}

/// Assigns split tags by shuffling distinct patient ids with `seed`. Every
/// slice of a patient lands in the same split.
pub fn split_by_patient(manifest: &Manifest, ratios: &SplitRatios, seed: u64) -> Result<Manifest> {
    let mut patients: Vec<&str> = manifest
        .rows
        .iter()
        .map(|r| r.patient_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let counts = split_counts(patients.len(), ratios)?;
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment: HashMap<&str, Split> = HashMap::new();
    let tags = [Split::Train, Split::Val, Split::Test];
    let mut it = patients.into_iter();
    for (tag, n) in tags.into_iter().zip(counts) {
        for p in it.by_ref().take(n) {
            assignment.insert(p, tag);
        }
    }
    let mut out = manifest.clone();
    for row in &mut out.rows {
        row.split = Some(assignment[row.patient_id.as_str()]);
    }
    Ok(out)
}
