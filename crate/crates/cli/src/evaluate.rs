//! Per-scan evaluation and the aggregate report built from it.

use entseg::metrics::{
    dice, hausdorff, mann_whitney_u, mean_foreground_entropy, outcome_entropies, pearson_r,
    stats::median,
    stratify_by_lesion_load, CalibrationAccumulator, CalibrationConvention, CalibrationTable, Domain,
    MannWhitney, OutcomeBreakdown, OutcomeEntropies, ScanReport,
};
use entseg::model::{forward, ModelParams};
use entseg::volume::{threshold, ProbMap};
use entseg::Error;
use serde::{Deserialize, Serialize};

use crate::config::EvalSettings;
use crate::dataset::Scan;
use crate::error::Result;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Column order of the per-scan CSV.
pub const PER_SCAN_COLUMNS: [&str; 6] = [
    "scan_id",
    "domain",
    "dice",
    "hausdorff_mm",
    "mean_foreground_entropy",
    "total_lesion_load_ml",
];

/// Voxel-level accumulators plus per-scan rows for one group of scans.
#[derive(Debug, Clone)]
pub struct ScanSet {
    pub reports: Vec<ScanReport>,
    pub outcomes: OutcomeEntropies,
    pub calib_positive: CalibrationAccumulator,
    pub calib_max: CalibrationAccumulator,
}

impl ScanSet {
    pub fn new(bins: usize) -> Self {
        Self {
            reports: Vec::new(),
            outcomes: OutcomeEntropies::default(),
            calib_positive: CalibrationAccumulator::new(bins, CalibrationConvention::PositiveProb),
            calib_max: CalibrationAccumulator::new(bins, CalibrationConvention::MaxProb),
        }
    }

    pub fn push(&mut self, scan: &Scan, y: &ProbMap<f64>, s: &EvalSettings) -> Result<()> {
        let t = s.threshold;
        let pred = threshold(y, t)?;
        let hd = match hausdorff(&scan.mask, &pred, s.hausdorff_percentile) {
            Ok(d) => Some(d),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e.into()),
        };
        self.reports.push(ScanReport {
            scan_id: scan.id.clone(),
            domain: scan.domain,
            dice: dice(&scan.mask, &pred)?,
            hausdorff_mm: hd,
            mean_foreground_entropy: mean_foreground_entropy(y, t),
            total_lesion_load_ml: scan.mask.volume_ml(),
        });
        self.outcomes.extend(&outcome_entropies(y, &scan.mask, t)?);
        for (&p, &g) in y.data().iter().zip(scan.mask.data()) {
            self.calib_positive.push(p, g)?;
            self.calib_max.push(p, g)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ScanSet) {
        self.reports.extend(other.reports.iter().cloned());
        self.outcomes.extend(&other.outcomes);
        self.calib_positive.merge(&other.calib_positive);
        self.calib_max.merge(&other.calib_max);
    }
}

/// Runs the model on every scan; scans whose image and mask disagree in shape
/// are skipped with a warning on stderr.
pub fn evaluate_scans(params: &ModelParams<f64>, scans: &[Scan], s: &EvalSettings) -> Result<ScanSet> {
    let mut set = ScanSet::new(s.calibration_bins);
    for scan in scans {
        if scan.image.dims() != scan.mask.dims() {
            eprintln!(
                "warning: skipping {}: image {:?} and mask {:?} differ in shape",
                scan.id,
                scan.image.dims(),
                scan.mask.dims()
            );
            continue;
        }
        let y = forward(params, &scan.input()?)?;
        set.push(scan, &y, s)?;
    }
    set.reports.sort_by(|a, b| a.scan_id.cmp(&b.scan_id));
    Ok(set)
}

/// Ground truth scored against itself; every scan should give Dice 1 and distance 0.
pub fn evaluate_oracle(scans: &[Scan], s: &EvalSettings) -> Result<ScanSet> {
    let mut set = ScanSet::new(s.calibration_bins);
    for scan in scans {
        set.push(scan, &ProbMap::from_mask(&scan.mask), s)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub name: String,
    pub n_scans: usize,
    pub n_entropy: usize,
    pub median_fg_entropy: Option<f64>,
    pub mean_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub n_scans: usize,
    pub dice_mean: Option<f64>,
    pub dice_median: Option<f64>,
    /// Scans where both masks are nonempty.
    pub n_hausdorff: usize,
    pub hausdorff_mean_mm: Option<f64>,
    pub hausdorff_median_mm: Option<f64>,
    /// Scans with at least one predicted foreground voxel.
    pub n_entropy: usize,
    pub mean_fg_entropy_mean: Option<f64>,
    pub mean_fg_entropy_median: Option<f64>,
    /// Pearson r between mean foreground entropy and Dice over the `n_entropy` scans.
    pub pearson_entropy_dice: Option<f64>,
    pub ece_positive_prob: f64,
    pub ece_max_prob: f64,
    pub calibration_positive_prob: CalibrationTable,
    pub calibration_max_prob: CalibrationTable,
    pub outcomes: OutcomeBreakdown,
    pub strata: Vec<StratumSummary>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Entropy and Dice columns restricted to scans where entropy is defined.
pub fn entropy_dice_pairs(reports: &[ScanReport]) -> (Vec<f64>, Vec<f64>) {
    reports
        .iter()
        .filter_map(|r| Some((r.mean_foreground_entropy?, r.dice)))
        .unzip()
}

/// Pearson r, or `None` when fewer than two pairs or either column is constant.
pub fn pearson_or_none(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_r(x, y).ok()
}

impl DomainSummary {
    pub fn of(set: &ScanSet, s: &EvalSettings) -> Self {
        let r = &set.reports;
        let dices: Vec<f64> = r.iter().map(|r| r.dice).collect();
        let hds: Vec<f64> = r.iter().filter_map(|r| r.hausdorff_mm).collect();
        let (ents, ent_dices) = entropy_dice_pairs(r);
        let pos = set.calib_positive.finish();
        let max = set.calib_max.finish();
        let strata = stratify_by_lesion_load(r, s.load_thresholds_ml)
            .groups()
            .iter()
            .map(|(name, group)| {
                let e: Vec<f64> = group.iter().filter_map(|r| r.mean_foreground_entropy).collect();
                let d: Vec<f64> = group.iter().map(|r| r.dice).collect();
                StratumSummary {
                    name: name.to_string(),
                    n_scans: group.len(),
                    n_entropy: e.len(),
                    median_fg_entropy: median(&e),
                    mean_dice: mean(&d),
                }
            })
            .collect();
        Self {
            n_scans: r.len(),
            dice_mean: mean(&dices),
            dice_median: median(&dices),
            n_hausdorff: hds.len(),
            hausdorff_mean_mm: mean(&hds),
            hausdorff_median_mm: median(&hds),
            n_entropy: ents.len(),
            mean_fg_entropy_mean: mean(&ents),
            mean_fg_entropy_median: median(&ents),
            pearson_entropy_dice: pearson_or_none(&ents, &ent_dices),
            ece_positive_prob: pos.ece,
            ece_max_prob: max.ece,
            calibration_positive_prob: pos,
            calibration_max_prob: max,
            outcomes: set.outcomes.breakdown(),
            strata,
        }
    }
}

/// Everything written to `aggregate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub strategy: String,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: String,
    pub settings: EvalSettings,
    pub id: DomainSummary,
    /// `None` when the OOD split is empty.
    pub ood: Option<DomainSummary>,
    /// ID and OOD scans together.
    pub pooled: DomainSummary,
    /// Two-sided test of ID vs OOD mean foreground entropy; `None` when either
    /// side has no scan with defined entropy.
    pub mann_whitney_entropy_id_vs_ood: Option<MannWhitney>,
}

pub struct Evaluation {
    pub aggregate: Aggregate,
    /// ID rows then OOD rows, each sorted by scan id.
    pub reports: Vec<ScanReport>,
}

pub struct RunInfo<'a> {
    pub strategy: &'a str,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: &'a str,
}

pub fn summarize(info: &RunInfo, id: &ScanSet, ood: &ScanSet, s: &EvalSettings) -> Result<Evaluation> {
    let mut pooled = id.clone();
    pooled.merge(ood);
    let entropies = |set: &ScanSet, d: Domain| -> Vec<f64> {
        set.reports
            .iter()
            .filter(|r| r.domain == d)
            .filter_map(|r| r.mean_foreground_entropy)
            .collect()
    };
    let e_id = entropies(id, Domain::InDistribution);
    let e_ood = entropies(ood, Domain::OutOfDistribution);
    let mw = if e_id.is_empty() || e_ood.is_empty() {
        None
    } else {
        Some(mann_whitney_u(&e_id, &e_ood)?)
    };
    let aggregate = Aggregate {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy: info.strategy.to_string(),
        lambda: info.lambda,
        seed: info.seed,
        config_hash: info.config_hash.to_string(),
        settings: s.clone(),
        id: DomainSummary::of(id, s),
        ood: (!ood.reports.is_empty()).then(|| DomainSummary::of(ood, s)),
        pooled: DomainSummary::of(&pooled, s),
        mann_whitney_entropy_id_vs_ood: mw,
    };
    Ok(Evaluation {
        aggregate,
        reports: pooled.reports,
    })
}
