use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::entropy_bits;
use crate::metrics::stats::Summary;
use crate::scalar::Real;
use crate::volume::{BinaryMask, ProbMap};

/// Mean binary entropy over voxels predicted as foreground (`p > t`).
///
/// `None` when no voxel qualifies.
pub fn mean_foreground_entropy<T: Real>(y: &ProbMap<T>, t: T) -> Option<T> {
    let mut n = 0usize;
    let mut sum = T::zero();
    for &p in y.data() {
        if p > t {
            n += 1;
            sum += entropy_bits(p);
        }
    }
    (n > 0).then(|| sum / T::cast(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Tn,
    Fp,
    Fn,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Tp, Outcome::Tn, Outcome::Fp, Outcome::Fn];

    pub fn classify(predicted: bool, truth: bool) -> Self {
        match (predicted, truth) {
            (true, true) => Outcome::Tp,
            (false, false) => Outcome::Tn,
            (true, false) => Outcome::Fp,
            (false, true) => Outcome::Fn,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Tp => "TP",
            Outcome::Tn => "TN",
            Outcome::Fp => "FP",
            Outcome::Fn => "FN",
        }
    }
}

/// Voxel entropies grouped by classification outcome, indexed by [`Outcome::index`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeEntropies(pub [Vec<f64>; 4]);

impl OutcomeEntropies {
    pub fn extend(&mut self, other: &OutcomeEntropies) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.extend_from_slice(b);
        }
    }

    pub fn get(&self, o: Outcome) -> &[f64] {
        &self.0[o.index()]
    }

    pub fn breakdown(&self) -> OutcomeBreakdown {
        let stats = |o: Outcome| OutcomeStats {
            count: self.get(o).len(),
            entropy: Summary::of(self.get(o)),
        };
        OutcomeBreakdown {
            tp: stats(Outcome::Tp),
            tn: stats(Outcome::Tn),
            fp: stats(Outcome::Fp),
            fn_: stats(Outcome::Fn),
        }
    }
}

pub fn outcome_entropies<T: Real>(y: &ProbMap<T>, gt: &BinaryMask, t: T) -> Result<OutcomeEntropies> {
    y.geometry().ensure_same_dims(gt.geometry())?;
    let mut out = OutcomeEntropies::default();
    for (&p, &g) in y.data().iter().zip(gt.data()) {
        let o = Outcome::classify(p > t, g);
        out.0[o.index()].push(entropy_bits(p).as_f64());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStats {
    pub count: usize,
    /// Entropy distribution; `None` when no voxel has this outcome.
    pub entropy: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeBreakdown {
    pub tp: OutcomeStats,
    pub tn: OutcomeStats,
    pub fp: OutcomeStats,
    #[serde(rename = "fn")]
    pub fn_: OutcomeStats,
}

impl OutcomeBreakdown {
    pub fn get(&self, o: Outcome) -> &OutcomeStats {
        match o {
            Outcome::Tp => &self.tp,
            Outcome::Tn => &self.tn,
            Outcome::Fp => &self.fp,
            Outcome::Fn => &self.fn_,
        }
    }

    pub fn total(&self) -> usize {
        Outcome::ALL.iter().map(|&o| self.get(o).count).sum()
    }
}

/// TP/TN/FP/FN voxel counts with per-outcome entropy statistics.
pub fn confusion_outcomes<T: Real>(y: &ProbMap<T>, gt: &BinaryMask, t: T) -> Result<OutcomeBreakdown> {
    Ok(outcome_entropies(y, gt, t)?.breakdown())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "ID")]
    InDistribution,
    #[serde(rename = "OOD")]
    OutOfDistribution,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::InDistribution => "ID",
            Domain::OutOfDistribution => "OOD",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "ID" => Some(Domain::InDistribution),
            "OOD" => Some(Domain::OutOfDistribution),
            _ => None,
        }
    }
}

/// Per-scan evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub scan_id: String,
    pub domain: Domain,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hausdorff_mm: Option<f64>,
    /// `None` when nothing is predicted as foreground.
    pub mean_foreground_entropy: Option<f64>,
    pub total_lesion_load_ml: f64,
}

/// Scans split by total lesion load into `< lo`, `[lo, hi]` and `> hi` millilitres.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LesionStrata {
    pub small: Vec<ScanReport>,
    pub medium: Vec<ScanReport>,
    pub large: Vec<ScanReport>,
}

impl LesionStrata {
    pub fn groups(&self) -> [(&'static str, &[ScanReport]); 3] {
        [
            ("small", &self.small),
            ("medium", &self.medium),
            ("large", &self.large),
        ]
    }
}

pub const DEFAULT_LOAD_THRESHOLDS_ML: (f64, f64) = (5.0, 15.0);

pub fn stratify_by_lesion_load(reports: &[ScanReport], thresholds_ml: (f64, f64)) -> LesionStrata {
    let (lo, hi) = thresholds_ml;
    let mut s = LesionStrata::default();
    for r in reports {
        let load = r.total_lesion_load_ml;
        let group = if load < lo {
            &mut s.small
        } else if load <= hi {
            &mut s.medium
        } else {
            &mut s.large
        };
        group.push(r.clone());
    }
    s
}
