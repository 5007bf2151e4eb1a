//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate (or probe) with the largest error.
    pub worst: usize,
    pub checked: usize,
}

/// |a - n| / max(1, |a|, |n|)
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic` against central differences of `f` at `point`,
/// coordinate by coordinate. `coords` restricts the check to a subset.
pub fn finite_diff_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::GradCheck(format!("step must be positive, got {step}")));
    }
    if analytic.len() != point.len() {
        return Err(Error::GradCheck(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::GradCheck(format!("analytic gradient is non-finite at {i}")));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: 0,
        checked: 0,
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if !err.is_finite() {
            return Err(Error::GradCheck(format!("non-finite numeric derivative at {i}")));
        }
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Checks the directional derivative `<analytic, d>` for each direction `d`
/// against `(f(x + h d) - f(x - h d)) / 2h`. Covers every coordinate at once,
/// which is how the full-network check reaches all parameters.
pub fn directional_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    directions: &[Vec<f64>],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::GradCheck(format!("step must be positive, got {step}")));
    }
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::GradCheck(format!("analytic gradient is non-finite at {i}")));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: 0,
        checked: 0,
    };
    for (k, d) in directions.iter().enumerate() {
        if d.len() != point.len() {
            return Err(Error::GradCheck(format!("direction {k} has wrong length")));
        }
        let plus: Vec<f64> = point.iter().zip(d).map(|(x, v)| x + step * v).collect();
        let minus: Vec<f64> = point.iter().zip(d).map(|(x, v)| x - step * v).collect();
        let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
        let exact: f64 = analytic.iter().zip(d).map(|(g, v)| g * v).sum();
        let err = relative_error(exact, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = k;
        }
        report.checked += 1;
    }
    Ok(report)
}
