use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary statistics of one loss metric over a set of resonators.
///
/// Percentiles interpolate linearly between closest ranks (inclusive
/// convention). `std_dev` uses the `n - 1` denominator and is 0 for a single
/// value. `mad` is the raw median absolute deviation and `median_se` the
/// large-sample standard error of the median, `sqrt(pi/2) std / sqrt(n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub std_dev: f64,
    pub count: usize,
    pub values: Vec<f64>,
    pub mad: f64,
    pub median_se: f64,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

pub fn aggregate(values: &[f64]) -> Result<LossStats> {
    if values.is_empty() {
        return Err(Error::validation(
            "values",
            "cannot aggregate an empty list",
        ));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation("values", format!("non-finite value {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = percentile(&sorted, 0.5);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    Ok(LossStats {
        median,
        p25: percentile(&sorted, 0.25),
        p75: percentile(&sorted, 0.75),
        std_dev,
        count: n,
        values: values.to_vec(),
        mad: percentile(&dev, 0.5),
        median_se: (std::f64::consts::FRAC_PI_2).sqrt() * std_dev / (n as f64).sqrt(),
    })
}

/// Ratios and differences of cohort `a` relative to cohort `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub median_ratio: f64,
    pub median_diff: f64,
    pub std_ratio: f64,
    pub std_diff: f64,
    pub iqr_ratio: f64,
}

pub fn compare_cohorts(a: &LossStats, b: &LossStats) -> CohortComparison {
    let ratio = |x: f64, y: f64| if x == y { 1.0 } else { x / y };
    CohortComparison {
        median_ratio: ratio(a.median, b.median),
        median_diff: a.median - b.median,
        std_ratio: ratio(a.std_dev, b.std_dev),
        std_diff: a.std_dev - b.std_dev,
        iqr_ratio: ratio(a.p75 - a.p25, b.p75 - b.p25),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_four() {
        let s = aggregate(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.median, s.p25, s.p75), (2.5, 1.75, 3.25));
        assert_eq!(s.count, 4);
        assert_eq!(s.values, vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.mad, 1.0);
    }

    #[test]
    fn single_value() {
        let s = aggregate(&[3e-6]).unwrap();
        assert_eq!((s.median, s.p25, s.p75, s.std_dev), (3e-6, 3e-6, 3e-6, 0.0));
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn identical_cohorts() {
        let s = aggregate(&[1.0, 2.0, 5.0]).unwrap();
        let c = compare_cohorts(&s, &s);
        assert_eq!((c.median_ratio, c.std_ratio, c.iqr_ratio), (1.0, 1.0, 1.0));
        let flat = aggregate(&[2.0, 2.0]).unwrap();
        assert_eq!(compare_cohorts(&flat, &flat).std_ratio, 1.0);
    }
}
