//! Report JSON (schema 1) and CSV plot panels.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::InterchangeError;
use crate::geometry::grassmann_max;
use crate::pipeline::{GeometryReport, Provenance, RoutingComparison, SCHEMA_VERSION};

/// The document written by `analyze`: one report per analysed layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema: u32,
    pub reports: Vec<GeometryReport>,
}

impl ReportFile {
    pub fn new(reports: Vec<GeometryReport>) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            reports,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub schema: u32,
    pub a: String,
    pub b: String,
    pub toolkit_version: String,
    /// Provenance of the first report of `a` and of `b`.
    pub provenance: Vec<Provenance>,
    pub layers: Vec<RoutingComparison>,
}

pub fn write_report(report: &GeometryReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialises")
}

pub fn read_report(text: &str) -> Result<GeometryReport, InterchangeError> {
    parse_json(text)
}

pub fn write_report_file(file: &ReportFile) -> String {
    serde_json::to_string_pretty(file).expect("report file serialises")
}

pub fn read_report_file(text: &str) -> Result<ReportFile, InterchangeError> {
    let file: ReportFile = parse_json(text)?;
    if file.schema != SCHEMA_VERSION {
        return Err(InterchangeError::Malformed(format!(
            "unsupported report schema {}",
            file.schema
        )));
    }
    Ok(file)
}

/// Deserialises JSON, converting serde's line/column into a byte offset.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, InterchangeError> {
    serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        InterchangeError::Json {
            offset,
            message: e.to_string(),
        }
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub const HISTOGRAM_BINS: usize = 20;

/// Equal-width histogram over `[lo, hi]`; values on `hi` land in the last
/// bin and values outside the range are clamped into the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k.is_nan() {
            0
        } else {
            (k.max(0.0) as usize).min(bins - 1)
        };
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), InterchangeError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn hist_rows(h: &[(f64, f64, usize)]) -> Vec<Vec<String>> {
    h.iter()
        .map(|(lo, hi, c)| vec![format!("{lo}"), format!("{hi}"), c.to_string()])
        .collect()
}

fn matrix_rows(ids: &[usize], m: &[Vec<f64>]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["expert".to_string()];
    header.extend(ids.iter().map(|e| format!("e{e}")));
    let rows = ids
        .iter()
        .zip(m)
        .map(|(e, row)| {
            let mut r = vec![e.to_string()];
            r.extend(row.iter().map(|v| format!("{v}")));
            r
        })
        .collect();
    (header, rows)
}

/// Writes the per-layer plot panels into `dir` and returns the paths written.
///
/// * `layer{L}_jacobian_matrix.csv`, `layer{L}_jacobian_hist.csv` (when Jacobians exist)
/// * `layer{L}_grassmann_matrix.csv`, `layer{L}_grassmann_hist.csv`
/// * `layer{L}_spectra.csv`: component index, dense and per-expert explained/cumulative variance
pub fn write_plot_csv(report: &GeometryReport, dir: &Path) -> Result<Vec<PathBuf>, InterchangeError> {
    std::fs::create_dir_all(dir)?;
    let l = report.layer_id;
    let mut written = Vec::new();
    let hist_header: Vec<String> = ["bin_lo", "bin_hi", "count"].iter().map(|s| s.to_string()).collect();

    if let Some(j) = &report.jacobian {
        let p = dir.join(format!("layer{l}_jacobian_matrix.csv"));
        let (h, rows) = matrix_rows(&j.expert_ids, &j.matrix);
        write_csv(&p, &h, &rows)?;
        written.push(p);
        let p = dir.join(format!("layer{l}_jacobian_hist.csv"));
        write_csv(
            &p,
            &hist_header,
            &hist_rows(&histogram(&j.upper_triangle(), -1.0, 1.0, HISTOGRAM_BINS)),
        )?;
        written.push(p);
    }

    let g = &report.grassmann;
    let p = dir.join(format!("layer{l}_grassmann_matrix.csv"));
    let (h, rows) = matrix_rows(&g.expert_ids, &g.matrix);
    write_csv(&p, &h, &rows)?;
    written.push(p);
    let p = dir.join(format!("layer{l}_grassmann_hist.csv"));
    let gmax = grassmann_max::<f64>(report.n_components);
    write_csv(
        &p,
        &hist_header,
        &hist_rows(&histogram(&g.upper_triangle(), 0.0, gmax, HISTOGRAM_BINS)),
    )?;
    written.push(p);

    let mut curves = Vec::new();
    let mut header = vec!["component".to_string()];
    if let Some(d) = &report.spectra.dense {
        header.push("dense_explained".into());
        header.push("dense_cumulative".into());
        curves.push(d);
    }
    for s in &report.spectra.experts {
        let e = s.expert_id.map_or("dense".to_string(), |e| format!("e{e}"));
        header.push(format!("{e}_explained"));
        header.push(format!("{e}_cumulative"));
        curves.push(s);
    }
    let len = curves.iter().map(|c| c.explained.len()).max().unwrap_or(0);
    let rows: Vec<Vec<String>> = (0..len)
        .map(|k| {
            let mut r = vec![(k + 1).to_string()];
            for c in &curves {
                for v in [c.explained.get(k), c.cumulative.get(k)] {
                    r.push(v.map_or(String::new(), |v| format!("{v}")));
                }
            }
            r
        })
        .collect();
    let p = dir.join(format!("layer{l}_spectra.csv"));
    write_csv(&p, &header, &rows)?;
    written.push(p);
    Ok(written)
}
