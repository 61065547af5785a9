//! CSV / JSON reports.
//!
//! Numbers are rendered with two decimals (p-values with three, and
//! `<0.001` below that). Volumes are in mL.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quant::{ClinicalMetrics, IndexedMetrics, Metric};
use crate::stats::{ConcordanceRow, PairedSeries};

pub const UNITS_NOTE: &str =
    "volumes are reported in mL; tables that label them [mm] refer to the same quantity";

const CONCORDANCE_HEADER: [&str; 6] = ["Metric", "Manual", "AI", "p", "r", "Bland-Altman"];
const METRICS_HEADER: [&str; 16] = [
    "case_id",
    "ed_frame",
    "es_frame",
    "lv_edv",
    "lv_esv",
    "rv_edv",
    "rv_esv",
    "lvef",
    "rvef",
    "lv_mass",
    "bmi",
    "lv_edv_bmi",
    "lv_esv_bmi",
    "rv_edv_bmi",
    "rv_esv_bmi",
    "lv_mass_bmi",
];
const ABSENT: &str = "NA";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Picks the format from a file extension (`.json` → JSON, else CSV).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    let r = (v * k).round() / k;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn fmt2(v: f64) -> String {
    format!("{:.2}", round_to(v, 2))
}

fn fmt_mean_sd(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{} ± {}", fmt2(m), fmt2(s)),
        (Some(m), None) => fmt2(m),
        _ => ABSENT.into(),
    }
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        Some(p) if p < 0.001 => "<0.001".into(),
        Some(p) => format!("{:.3}", round_to(p, 3)),
        None => ABSENT.into(),
    }
}

/// `"-0.60 (-9.94 to 8.75)"`
pub fn format_bland_altman(bias: f64, loa_low: f64, loa_high: f64) -> String {
    format!("{} ({} to {})", fmt2(bias), fmt2(loa_low), fmt2(loa_high))
}

/// Inverse of [`format_bland_altman`]; also accepts `a` in place of `to`.
pub fn parse_bland_altman(cell: &str) -> Option<(f64, f64, f64)> {
    let (bias, rest) = cell.trim().split_once('(')?;
    let inner = rest.trim().strip_suffix(')')?;
    let (lo, hi) = inner
        .split_once(" to ")
        .or_else(|| inner.split_once(" a "))?;
    Some((
        bias.trim().parse().ok()?,
        lo.trim().parse().ok()?,
        hi.trim().parse().ok()?,
    ))
}

fn parse_mean_sd(cell: &str) -> Result<(Option<f64>, Option<f64>)> {
    let cell = cell.trim();
    if cell == ABSENT {
        return Ok((None, None));
    }
    let bad = || Error::Validation(format!("cannot parse mean ± sd cell {cell:?}"));
    match cell.split_once('±') {
        Some((m, s)) => Ok((
            Some(m.trim().parse().map_err(|_| bad())?),
            Some(s.trim().parse().map_err(|_| bad())?),
        )),
        None => Ok((Some(cell.parse().map_err(|_| bad())?), None)),
    }
}

fn parse_optional(cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || cell == ABSENT {
        return Ok(None);
    }
    if let Some(rest) = cell.strip_prefix('<') {
        // "<0.001": keep the bound, the exact value is not recoverable.
        return rest
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Validation(format!("cannot parse {cell:?}")));
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::Validation(format!("cannot parse {cell:?}")))
}

fn concordance_record(row: &ConcordanceRow) -> [String; 6] {
    let ba = match (row.bias, row.loa_low, row.loa_high) {
        (Some(b), Some(lo), Some(hi)) => format_bland_altman(b, lo, hi),
        _ => ABSENT.into(),
    };
    [
        row.metric.label().to_string(),
        fmt_mean_sd(row.manual_mean, row.manual_sd),
        fmt_mean_sd(row.auto_mean, row.auto_sd),
        fmt_p(row.p),
        row.r.map(fmt2).unwrap_or_else(|| ABSENT.into()),
        ba,
    ]
}

fn write_concordance_csv(table: &[ConcordanceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CONCORDANCE_HEADER)?;
    for row in table {
        w.write_record(concordance_record(row))?;
    }
    w.flush()?;
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt2).unwrap_or_default()
}

/// Per-study metrics, one row per case.
pub fn write_metrics_csv(metrics: &[ClinicalMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for m in metrics {
        let idx = m.indexed;
        w.write_record([
            m.case_id.clone(),
            m.ed_frame.to_string(),
            m.es_frame.to_string(),
            fmt2(m.lv_edv),
            fmt2(m.lv_esv),
            fmt2(m.rv_edv),
            fmt2(m.rv_esv),
            opt_cell(m.lvef),
            opt_cell(m.rvef),
            fmt2(m.lv_mass),
            opt_cell(m.bmi),
            opt_cell(idx.map(|i| i.lv_edv)),
            opt_cell(idx.map(|i| i.lv_esv)),
            opt_cell(idx.map(|i| i.rv_edv)),
            opt_cell(idx.map(|i| i.rv_esv)),
            opt_cell(idx.map(|i| i.lv_mass)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<ClinicalMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Validation(format!("{}: missing column {name}", path.display())))
    };
    let cols: Vec<usize> = METRICS_HEADER.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(cols[i]).unwrap_or("");
        let req = |i: usize| -> Result<f64> {
            parse_optional(get(i))?.ok_or_else(|| {
                Error::Validation(format!("{}: empty {} cell", path.display(), METRICS_HEADER[i]))
            })
        };
        let frame = |i: usize| -> Result<usize> {
            get(i).trim().parse().map_err(|_| {
                Error::Validation(format!("{}: bad frame index {:?}", path.display(), get(i)))
            })
        };
        let idx = [11, 12, 13, 14, 15]
            .iter()
            .map(|&i| parse_optional(get(i)))
            .collect::<Result<Vec<_>>>()?;
        let indexed = match idx[..] {
            [Some(a), Some(b), Some(c), Some(d), Some(e)] => Some(IndexedMetrics {
                lv_edv: a,
                lv_esv: b,
                rv_edv: c,
                rv_esv: d,
                lv_mass: e,
            }),
            _ => None,
        };
        out.push(ClinicalMetrics {
            case_id: get(0).to_string(),
            ed_frame: frame(1)?,
            es_frame: frame(2)?,
            lv_edv: req(3)?,
            lv_esv: req(4)?,
            rv_edv: req(5)?,
            rv_esv: req(6)?,
            lvef: parse_optional(get(7))?,
            rvef: parse_optional(get(8))?,
            lv_mass: req(9)?,
            bmi: parse_optional(get(10))?,
            indexed,
        });
    }
    Ok(out)
}

/// Reads a concordance table written by [`write_report`]. Values come back
/// at their rendered precision.
pub fn read_concordance_csv(path: &Path) -> Result<Vec<ConcordanceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < CONCORDANCE_HEADER.len() {
            return Err(Error::Validation(format!("{}: short row", path.display())));
        }
        let metric = Metric::parse(&rec[0])
            .ok_or_else(|| Error::Validation(format!("unknown metric {:?}", &rec[0])))?;
        let (manual_mean, manual_sd) = parse_mean_sd(&rec[1])?;
        let (auto_mean, auto_sd) = parse_mean_sd(&rec[2])?;
        let ba = parse_bland_altman(&rec[5]);
        out.push(ConcordanceRow {
            metric,
            n: 0,
            manual_mean,
            manual_sd,
            auto_mean,
            auto_sd,
            p: parse_optional(&rec[3])?,
            r: parse_optional(&rec[4])?,
            bias: ba.map(|v| v.0),
            loa_low: ba.map(|v| v.1),
            loa_high: ba.map(|v| v.2),
        });
    }
    Ok(out)
}

/// Reads `case_id, metric, manual, auto` rows into one series per metric,
/// in table order.
pub fn read_paired_series_csv(path: &Path) -> Result<Vec<PairedSeries>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut by_metric: Vec<(Metric, Vec<(f64, f64)>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Parse {
            file: path.to_path_buf(),
            line,
            content: format!("{what}: {}", rec.iter().collect::<Vec<_>>().join(",")),
        };
        if rec.len() < 4 {
            return Err(bad("expected case_id,metric,manual,auto"));
        }
        let metric = Metric::parse(&rec[1]).ok_or_else(|| bad("unknown metric"))?;
        let manual: f64 = rec[2].trim().parse().map_err(|_| bad("manual value"))?;
        let auto: f64 = rec[3].trim().parse().map_err(|_| bad("auto value"))?;
        match by_metric.iter_mut().find(|(m, _)| *m == metric) {
            Some((_, pairs)) => pairs.push((manual, auto)),
            None => by_metric.push((metric, vec![(manual, auto)])),
        }
    }
    by_metric.sort_by_key(|(m, _)| *m);
    by_metric
        .into_iter()
        .map(|(m, pairs)| PairedSeries::new(m, pairs))
        .collect()
}

#[derive(Serialize)]
struct Units {
    volume: &'static str,
    ejection_fraction: &'static str,
    mass: &'static str,
    note: &'static str,
}

#[derive(Serialize)]
struct JsonRow {
    metric: &'static str,
    n: usize,
    manual_mean: Option<f64>,
    manual_sd: Option<f64>,
    auto_mean: Option<f64>,
    auto_sd: Option<f64>,
    p: Option<f64>,
    p_display: String,
    r: Option<f64>,
    bias: Option<f64>,
    loa_low: Option<f64>,
    loa_high: Option<f64>,
    bland_altman: Option<String>,
}

#[derive(Serialize)]
struct JsonReport {
    units: Units,
    metrics: Vec<ClinicalMetrics>,
    concordance: Vec<JsonRow>,
}

fn rounded_metrics(m: &ClinicalMetrics) -> ClinicalMetrics {
    let r = |v: f64| round_to(v, 2);
    ClinicalMetrics {
        case_id: m.case_id.clone(),
        ed_frame: m.ed_frame,
        es_frame: m.es_frame,
        lv_edv: r(m.lv_edv),
        lv_esv: r(m.lv_esv),
        rv_edv: r(m.rv_edv),
        rv_esv: r(m.rv_esv),
        lvef: m.lvef.map(r),
        rvef: m.rvef.map(r),
        lv_mass: r(m.lv_mass),
        bmi: m.bmi.map(r),
        indexed: m.indexed.map(|i| IndexedMetrics {
            lv_edv: r(i.lv_edv),
            lv_esv: r(i.lv_esv),
            rv_edv: r(i.rv_edv),
            rv_esv: r(i.rv_esv),
            lv_mass: r(i.lv_mass),
        }),
    }
}

fn json_row(row: &ConcordanceRow) -> JsonRow {
    let r2 = |v: Option<f64>| v.map(|v| round_to(v, 2));
    let record = concordance_record(row);
    JsonRow {
        metric: row.metric.key(),
        n: row.n,
        manual_mean: r2(row.manual_mean),
        manual_sd: r2(row.manual_sd),
        auto_mean: r2(row.auto_mean),
        auto_sd: r2(row.auto_sd),
        p: row.p.map(|p| round_to(p, 3)),
        p_display: record[3].clone(),
        r: r2(row.r),
        bias: r2(row.bias),
        loa_low: r2(row.loa_low),
        loa_high: r2(row.loa_high),
        bland_altman: (record[5] != ABSENT).then(|| record[5].clone()),
    }
}

/// Sibling path used for per-study metrics when a CSV report also carries a
/// concordance table: `table.csv` → `table.metrics.csv`.
pub fn metrics_sidecar_path(destination: &Path) -> PathBuf {
    let stem = destination
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    destination.with_file_name(format!("{stem}.metrics.csv"))
}

/// Writes a report.
///
/// JSON holds both sections. CSV holds the concordance table when `table`
/// is non-empty (metrics, if any, go to [`metrics_sidecar_path`]); otherwise
/// it holds the per-study metrics.
pub fn write_report(
    metrics: &[ClinicalMetrics],
    table: &[ConcordanceRow],
    destination: &Path,
    format: ReportFormat,
) -> Result<()> {
    match format {
        ReportFormat::Csv if table.is_empty() => write_metrics_csv(metrics, destination),
        ReportFormat::Csv => {
            write_concordance_csv(table, destination)?;
            if !metrics.is_empty() {
                write_metrics_csv(metrics, &metrics_sidecar_path(destination))?;
            }
            Ok(())
        }
        ReportFormat::Json => {
            let report = JsonReport {
                units: Units {
                    volume: "mL",
                    ejection_fraction: "%",
                    mass: "g",
                    note: UNITS_NOTE,
                },
                metrics: metrics.iter().map(rounded_metrics).collect(),
                concordance: table.iter().map(json_row).collect(),
            };
            let mut f = File::create(destination)?;
            serde_json::to_writer_pretty(&mut f, &report)?;
            f.write_all(b"\n")?;
            Ok(())
        }
    }
}
