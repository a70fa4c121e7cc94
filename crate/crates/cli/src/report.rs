//! Report files: per-scan CSV, aggregate JSON, reliability CSV/SVG and the
//! cross-strategy comparison tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use entseg::metrics::{reliability_points, CalibrationTable, Domain, Outcome, ScanReport};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::evaluate::{Aggregate, DomainSummary, PER_SCAN_COLUMNS, REPORT_SCHEMA_VERSION};

pub const PER_SCAN_FILE: &str = "per_scan.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const RELIABILITY_CSV: &str = "reliability.csv";
pub const RELIABILITY_SVG: &str = "reliability.svg";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        create_dir(d)?;
    }
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn per_scan_csv(reports: &[ScanReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.scan_id.clone(),
                r.domain.tag().to_string(),
                r.dice.to_string(),
                fmt_opt(r.hausdorff_mm),
                fmt_opt(r.mean_foreground_entropy),
                r.total_lesion_load_ml.to_string(),
            ]
        })
        .collect();
    csv_text(&PER_SCAN_COLUMNS, &rows)
}

/// Parses a per-scan CSV written by [`per_scan_csv`].
pub fn read_per_scan_csv(path: &Path) -> Result<Vec<ScanReport>> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != PER_SCAN_COLUMNS {
        return Err(CliError::Usage(format!("{}: unexpected columns {header:?}", path.display())));
    }
    let bad = |what: &str| CliError::Usage(format!("{}: bad {what}", path.display()));
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
    let opt = |s: &str, what: &str| if s.is_empty() { Ok(None) } else { num(s, what).map(Some) };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        out.push(ScanReport {
            scan_id: rec[0].to_string(),
            domain: Domain::from_tag(&rec[1]).ok_or_else(|| bad("domain"))?,
            dice: num(&rec[2], "dice")?,
            hausdorff_mm: opt(&rec[3], "hausdorff_mm")?,
            mean_foreground_entropy: opt(&rec[4], "mean_foreground_entropy")?,
            total_lesion_load_ml: num(&rec[5], "total_lesion_load_ml")?,
        });
    }
    Ok(out)
}

pub fn reliability_csv(tables: &[(&str, &CalibrationTable)]) -> String {
    let header = [
        "domain",
        "convention",
        "bin_lower",
        "bin_upper",
        "count",
        "mean_confidence",
        "observed",
    ];
    let mut rows = Vec::new();
    for (domain, t) in tables {
        let conv = serde_json::to_value(t.convention).expect("enum serializes");
        let conv = conv.as_str().unwrap_or_default().to_string();
        for b in &t.bins {
            rows.push(vec![
                domain.to_string(),
                conv.clone(),
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                fmt_opt(b.mean_confidence),
                fmt_opt(b.observed),
            ]);
        }
    }
    csv_text(&header, &rows)
}

/// Reliability diagram: observed foreground frequency against mean predicted
/// probability per bin, one series per table.
pub fn reliability_svg(title: &str, series: &[(&str, &CalibrationTable)]) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let px = |v: f64| PAD + v * SIZE;
    let py = |v: f64| PAD + (1.0 - v) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle">{title}</text>"#, total / 2.0);
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#eee"/>"##,
            px(v),
            py(0.0),
            px(v),
            py(1.0)
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#, px(v), py(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, px(0.0) - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">mean predicted probability</text>"#,
        total / 2.0,
        total - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">observed frequency</text>"#,
        total / 2.0,
        total / 2.0
    );
    for (i, (name, table)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts = reliability_points(table);
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", px(p.confidence), py(p.observed)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for p in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                px(p.confidence),
                py(p.observed)
            );
        }
        let ly = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{name} (ECE {:.4})</text>"#,
            PAD + 8.0,
            table.ece
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the four evaluation outputs into `dir`.
pub fn write_eval_outputs(dir: &Path, agg: &Aggregate, reports: &[ScanReport]) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join(PER_SCAN_FILE), &per_scan_csv(reports))?;
    write_json(&dir.join(AGGREGATE_FILE), agg)?;
    let mut tables = vec![("ID", &agg.id.calibration_positive_prob), ("ID", &agg.id.calibration_max_prob)];
    if let Some(o) = &agg.ood {
        tables.push(("OOD", &o.calibration_positive_prob));
        tables.push(("OOD", &o.calibration_max_prob));
    }
    write_text(&dir.join(RELIABILITY_CSV), &reliability_csv(&tables))?;
    let mut series = vec![("ID", &agg.id.calibration_positive_prob)];
    if let Some(o) = &agg.ood {
        series.push(("OOD", &o.calibration_positive_prob));
    }
    let title = format!("{} (lambda {})", agg.strategy, agg.lambda);
    write_text(&dir.join(RELIABILITY_SVG), &reliability_svg(&title, &series))?;
    Ok(())
}

/// Loads `aggregate.json` from a file path or a directory containing one, and
/// checks its schema version.
pub fn load_aggregate(path: &Path) -> Result<(PathBuf, Aggregate)> {
    let file = if path.is_dir() { path.join(AGGREGATE_FILE) } else { path.to_path_buf() };
    let value: serde_json::Value = read_json(&file)?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != REPORT_SCHEMA_VERSION {
        return Err(CliError::SchemaMismatch {
            path: file,
            found,
            expected: REPORT_SCHEMA_VERSION,
        });
    }
    let agg = serde_json::from_value(value).map_err(|source| CliError::Parse {
        path: file.clone(),
        source,
    })?;
    Ok((file, agg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub lambda: f64,
    pub domain: String,
    pub n_scans: usize,
    pub dice_mean: Option<f64>,
    pub hausdorff_mean_mm: Option<f64>,
    pub ece_positive_prob: f64,
    pub ece_max_prob: f64,
    pub mean_fg_entropy_mean: Option<f64>,
    pub pearson_entropy_dice: Option<f64>,
    pub mann_whitney_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub strategy: String,
    pub domain: String,
    pub outcome: String,
    pub count: usize,
    pub entropy_q1: Option<f64>,
    pub entropy_median: Option<f64>,
    pub entropy_q3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub strategy: String,
    pub domain: String,
    pub stratum: String,
    pub n_scans: usize,
    pub median_fg_entropy: Option<f64>,
    pub mean_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub rows: Vec<ComparisonRow>,
    pub outcomes: Vec<OutcomeRow>,
    pub strata: Vec<StratumRow>,
}

fn domains(a: &Aggregate) -> Vec<(&'static str, &DomainSummary)> {
    let mut v = vec![("ID", &a.id)];
    if let Some(o) = &a.ood {
        v.push(("OOD", o));
    }
    v.push(("pooled", &a.pooled));
    v
}

/// Cross-strategy tables, one block of rows per input in input order.
pub fn compare(aggs: &[Aggregate]) -> Comparison {
    let mut c = Comparison {
        schema_version: REPORT_SCHEMA_VERSION,
        rows: Vec::new(),
        outcomes: Vec::new(),
        strata: Vec::new(),
    };
    for a in aggs {
        let p = a.mann_whitney_entropy_id_vs_ood.map(|m| m.p_two_sided);
        for (domain, d) in domains(a) {
            c.rows.push(ComparisonRow {
                strategy: a.strategy.clone(),
                lambda: a.lambda,
                domain: domain.into(),
                n_scans: d.n_scans,
                dice_mean: d.dice_mean,
                hausdorff_mean_mm: d.hausdorff_mean_mm,
                ece_positive_prob: d.ece_positive_prob,
                ece_max_prob: d.ece_max_prob,
                mean_fg_entropy_mean: d.mean_fg_entropy_mean,
                pearson_entropy_dice: d.pearson_entropy_dice,
                mann_whitney_p: p,
            });
            for o in Outcome::ALL {
                let st = d.outcomes.get(o);
                c.outcomes.push(OutcomeRow {
                    strategy: a.strategy.clone(),
                    domain: domain.into(),
                    outcome: o.name().into(),
                    count: st.count,
                    entropy_q1: st.entropy.map(|e| e.q1),
                    entropy_median: st.entropy.map(|e| e.median),
                    entropy_q3: st.entropy.map(|e| e.q3),
                });
            }
            for s in &d.strata {
                c.strata.push(StratumRow {
                    strategy: a.strategy.clone(),
                    domain: domain.into(),
                    stratum: s.name.clone(),
                    n_scans: s.n_scans,
                    median_fg_entropy: s.median_fg_entropy,
                    mean_dice: s.mean_dice,
                });
            }
        }
    }
    c
}

pub fn write_comparison(dir: &Path, c: &Comparison) -> Result<()> {
    create_dir(dir)?;
    let rows: Vec<Vec<String>> = c
        .rows
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                r.lambda.to_string(),
                r.domain.clone(),
                r.n_scans.to_string(),
                fmt_opt(r.dice_mean),
                fmt_opt(r.hausdorff_mean_mm),
                r.ece_positive_prob.to_string(),
                r.ece_max_prob.to_string(),
                fmt_opt(r.mean_fg_entropy_mean),
                fmt_opt(r.pearson_entropy_dice),
                fmt_opt(r.mann_whitney_p),
            ]
        })
        .collect();
    let header = [
        "strategy",
        "lambda",
        "domain",
        "n_scans",
        "dice_mean",
        "hausdorff_mean_mm",
        "ece_positive_prob",
        "ece_max_prob",
        "mean_fg_entropy_mean",
        "pearson_entropy_dice",
        "mann_whitney_p",
    ];
    write_text(&dir.join("comparison.csv"), &csv_text(&header, &rows))?;

    let rows: Vec<Vec<String>> = c
        .outcomes
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                r.domain.clone(),
                r.outcome.clone(),
                r.count.to_string(),
                fmt_opt(r.entropy_q1),
                fmt_opt(r.entropy_median),
                fmt_opt(r.entropy_q3),
            ]
        })
        .collect();
    let header = ["strategy", "domain", "outcome", "count", "entropy_q1", "entropy_median", "entropy_q3"];
    write_text(&dir.join("outcomes.csv"), &csv_text(&header, &rows))?;

    let rows: Vec<Vec<String>> = c
        .strata
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                r.domain.clone(),
                r.stratum.clone(),
                r.n_scans.to_string(),
                fmt_opt(r.median_fg_entropy),
                fmt_opt(r.mean_dice),
            ]
        })
        .collect();
    let header = ["strategy", "domain", "stratum", "n_scans", "median_fg_entropy", "mean_dice"];
    write_text(&dir.join("strata.csv"), &csv_text(&header, &rows))?;
    write_json(&dir.join("comparison.json"), c)
}
