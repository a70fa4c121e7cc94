use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// How confidence and observed frequency are read from a binary prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationConvention {
    /// Confidence is the foreground probability; frequency is the fraction of positives.
    #[default]
    PositiveProb,
    /// Confidence is `max(p, 1 - p)`; frequency is the fraction classified correctly.
    MaxProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean confidence; `None` for an empty bin.
    pub mean_confidence: Option<f64>,
    /// Fraction positive (or correct, under `max_prob`); `None` for an empty bin.
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub convention: CalibrationConvention,
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

impl CalibrationTable {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Bin `m` covers `[m/M, (m+1)/M)`; the last bin is closed at 1.
pub(crate) fn bin_index(c: f64, num_bins: usize) -> usize {
    let lower = |m: usize| m as f64 / num_bins as f64;
    let mut m = ((c * num_bins as f64).floor() as usize).min(num_bins - 1);
    while m > 0 && c < lower(m) {
        m -= 1;
    }
    while m + 1 < num_bins && c >= lower(m + 1) {
        m += 1;
    }
    m
}

/// Expected calibration error over `num_bins` equal-width confidence bins.
pub fn ece<T: Real>(
    probs: &[T],
    labels: &[bool],
    num_bins: usize,
    convention: CalibrationConvention,
) -> Result<CalibrationTable> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(Error::Empty("calibration input"));
    }
    if num_bins == 0 {
        return Err(Error::OutOfRange {
            name: "num_bins",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    let mut acc = CalibrationAccumulator::new(num_bins, convention);
    for (&p, &y) in probs.iter().zip(labels) {
        acc.push(p.as_f64(), y)?;
    }
    Ok(acc.finish())
}

/// Streaming form of [`ece`], for pooling voxels across many scans.
#[derive(Debug, Clone)]
pub struct CalibrationAccumulator {
    convention: CalibrationConvention,
    counts: Vec<usize>,
    conf_sums: Vec<f64>,
    hit_sums: Vec<f64>,
}

impl CalibrationAccumulator {
    pub fn new(num_bins: usize, convention: CalibrationConvention) -> Self {
        assert!(num_bins > 0, "calibration needs at least one bin");
        Self {
            convention,
            counts: vec![0; num_bins],
            conf_sums: vec![0.0; num_bins],
            hit_sums: vec![0.0; num_bins],
        }
    }

    pub fn push(&mut self, p: f64, label: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange {
                name: "probability",
                value: p,
                range: "[0, 1]",
            });
        }
        let (conf, hit) = match self.convention {
            CalibrationConvention::PositiveProb => (p, label),
            CalibrationConvention::MaxProb => (p.max(1.0 - p), (p > 0.5) == label),
        };
        let m = bin_index(conf, self.counts.len());
        self.counts[m] += 1;
        self.conf_sums[m] += conf;
        if hit {
            self.hit_sums[m] += 1.0;
        }
        Ok(())
    }

    /// Adds the counts of `other`, which must use the same binning.
    pub fn merge(&mut self, other: &CalibrationAccumulator) {
        assert_eq!(self.convention, other.convention);
        assert_eq!(self.counts.len(), other.counts.len());
        for m in 0..self.counts.len() {
            self.counts[m] += other.counts[m];
            self.conf_sums[m] += other.conf_sums[m];
            self.hit_sums[m] += other.hit_sums[m];
        }
    }

    pub fn finish(&self) -> CalibrationTable {
        let m_bins = self.counts.len();
        let n: usize = self.counts.iter().sum();
        let mut ece = 0.0;
        let bins = (0..m_bins)
            .map(|m| {
                let count = self.counts[m];
                let (mean_confidence, observed) = if count == 0 {
                    (None, None)
                } else {
                    let c = self.conf_sums[m] / count as f64;
                    let o = self.hit_sums[m] / count as f64;
                    ece += count as f64 / n as f64 * (o - c).abs();
                    (Some(c), Some(o))
                };
                CalibrationBin {
                    lower: m as f64 / m_bins as f64,
                    upper: (m + 1) as f64 / m_bins as f64,
                    count,
                    mean_confidence,
                    observed,
                }
            })
            .collect();
        CalibrationTable {
            convention: self.convention,
            bins,
            ece,
        }
    }
}

/// One reliability-diagram point per nonempty bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPoint {
    pub confidence: f64,
    pub observed: f64,
    pub count: usize,
}

pub fn reliability_points(table: &CalibrationTable) -> Vec<ReliabilityPoint> {
    table
        .bins
        .iter()
        .filter_map(|b| {
            Some(ReliabilityPoint {
                confidence: b.mean_confidence?,
                observed: b.observed?,
                count: b.count,
            })
        })
        .collect()
}
