//! One-row-per-run summaries as CSV, and an SVG with metric-vs-N,
//! metric-vs-p and a generated-vs-true scatter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::logging::{load_run, REPORT_JSON};
use crate::distill::KdMethod;
use crate::ensemble::{RunReport, TrainMode};
use crate::error::{Error, Result};
use crate::eval::METRIC_HEADER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub mode: TrainMode,
    pub kd_method: KdMethod,
    pub lambda_kd: f64,
    pub n_students: usize,
    pub p: f64,
    pub self_distill: bool,
    pub seed: u64,
    pub iterations: usize,
    /// Parameters of one deployed network (a student, or the teacher).
    pub params: usize,
    /// Multiply-accumulates of one denoiser evaluation.
    pub macs: usize,
    pub mmd: f64,
    pub swd: f64,
    pub coverage: Option<usize>,
    pub quality_fraction: Option<f64>,
}

impl ReportRow {
    /// Summary of a finished run; `None` when the run was never evaluated.
    pub fn from_report(run: impl Into<String>, report: &RunReport) -> Option<Self> {
        let metrics = report.metrics.as_ref()?;
        let deployed = report.nets.last()?;
        let cfg = &report.config;
        let (method, n) = match report.mode {
            TrainMode::Teacher => (KdMethod::None, 1),
            TrainMode::O2okd => (Self::effective_method(report), 1),
            TrainMode::O2mkd => (Self::effective_method(report), cfg.n_students),
        };
        Some(Self {
            run: run.into(),
            mode: report.mode,
            kd_method: method,
            lambda_kd: cfg.lambda_kd,
            n_students: n,
            p: cfg.p,
            self_distill: cfg.self_distill,
            seed: cfg.seed,
            iterations: cfg.iterations,
            params: deployed.params,
            macs: deployed.macs,
            mmd: metrics.mmd,
            swd: metrics.swd,
            coverage: metrics.coverage,
            quality_fraction: metrics.quality_fraction,
        })
    }

    fn effective_method(report: &RunReport) -> KdMethod {
        if report.config.lambda_kd == 0.0 {
            KdMethod::None
        } else {
            report.config.kd_method
        }
    }
}

const REPORT_COLUMNS: [&str; 15] = [
    "run",
    "mode",
    "kd_method",
    "lambda_kd",
    "n_students",
    "p",
    "self_distill",
    "seed",
    "iterations",
    "params",
    "macs",
    "mmd",
    "swd",
    "coverage",
    "quality_fraction",
];

/// CSV with a leading `#` comment naming the metrics used in place of FID.
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut buf = format!("# {METRIC_HEADER}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(REPORT_COLUMNS)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Every run directory (one holding `report.json`) below `root`, sorted by path.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(REPORT_JSON).is_file() {
            found.push(dir.clone());
        }
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Report rows for every evaluated run below `root`, named by relative path.
pub fn collect_runs(root: &Path) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for dir in find_runs(root)? {
        let report = load_run(&dir)?;
        let name = dir
            .strip_prefix(root)
            .ok()
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        rows.extend(ReportRow::from_report(name, &report));
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median MMD of prediction-distilled compression runs, by group size.
/// One-to-one runs count as `N = 1`.
pub fn mmd_vs_n(rows: &[ReportRow]) -> Vec<(f64, f64)> {
    grouped_medians(rows.iter().filter(|r| {
        r.kd_method == KdMethod::Prediction && !r.self_distill && r.mode != TrainMode::Teacher
    }), |r| r.n_students as f64)
}

/// Median MMD of one-to-many prediction-distilled runs, by `p`.
pub fn mmd_vs_p(rows: &[ReportRow]) -> Vec<(f64, f64)> {
    grouped_medians(
        rows.iter()
            .filter(|r| r.kd_method == KdMethod::Prediction && r.mode == TrainMode::O2mkd && !r.self_distill),
        |r| r.p,
    )
}

fn grouped_medians<'a>(rows: impl Iterator<Item = &'a ReportRow>, key: impl Fn(&ReportRow) -> f64) -> Vec<(f64, f64)> {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let k = key(r);
        groups.entry(k.to_bits()).or_insert((k, Vec::new())).1.push(r.mmd);
    }
    let mut out: Vec<(f64, f64)> = groups
        .into_values()
        .filter_map(|(k, mut v)| median(&mut v).map(|m| (k, m)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

const PANEL: f64 = 300.0;
const MARGIN: f64 = 40.0;

struct Frame {
    x0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(index: usize, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x0: index as f64 * (PANEL + MARGIN) + MARGIN,
            xr: range(&mut xs.clone()),
            yr: range(&mut ys.clone()),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * PANEL;
        let py = MARGIN + PANEL - (y - self.yr.0) / (self.yr.1 - self.yr.0) * PANEL;
        (px, py)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str) {
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{MARGIN:.1}" width="{PANEL:.1}" height="{PANEL:.1}" fill="none" stroke="#444"/>"##,
            self.x0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{title}</text>"#,
            self.x0 + PANEL / 2.0,
            MARGIN - 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{xlabel} [{:.3}, {:.3}]</text>"#,
            self.x0 + PANEL / 2.0,
            MARGIN + PANEL + 16.0,
            self.xr.0,
            self.xr.1
        );
    }
}

fn curve(svg: &mut String, frame: &Frame, points: &[(f64, f64)], title: &str, xlabel: &str) {
    frame.axes(svg, title, xlabel);
    if points.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">no data</text>"#,
            frame.x0 + PANEL / 2.0,
            MARGIN + PANEL / 2.0
        );
        return;
    }
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            let (px, py) = frame.map(x, y);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#1f77b4"/>"##, coords.join(" "));
    for c in &coords {
        let (x, y) = c.split_once(',').expect("formatted pair");
        let _ = writeln!(svg, r##"<circle cx="{x}" cy="{y}" r="3" fill="#1f77b4"/>"##);
    }
}

/// Three-panel SVG. The scatter panel is filled when `(generated, reference)` is given.
pub fn render_svg(rows: &[ReportRow], scatter: Option<(ArrayView2<f64>, ArrayView2<f64>)>) -> String {
    let width = 3.0 * (PANEL + MARGIN) + MARGIN;
    let height = PANEL + 2.0 * MARGIN;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    svg.push('\n');
    let by_n = mmd_vs_n(rows);
    let frame = Frame::new(0, by_n.iter().map(|p| p.0), by_n.iter().map(|p| p.1));
    curve(&mut svg, &frame, &by_n, "median MMD^2 vs N", "N");
    let by_p = mmd_vs_p(rows);
    let frame = Frame::new(1, by_p.iter().map(|p| p.0), by_p.iter().map(|p| p.1));
    curve(&mut svg, &frame, &by_p, "median MMD^2 vs p", "p");

    match scatter {
        Some((generated, reference)) => {
            let xs = generated.column(0).iter().chain(reference.column(0).iter()).copied().collect::<Vec<_>>();
            let ys = generated.column(1).iter().chain(reference.column(1).iter()).copied().collect::<Vec<_>>();
            let frame = Frame::new(2, xs.iter().copied(), ys.iter().copied());
            frame.axes(&mut svg, "generated (orange) vs true (grey)", "x");
            for (cloud, colour) in [(reference, "#999999"), (generated, "#ff7f0e")] {
                for row in cloud.rows() {
                    let (px, py) = frame.map(row[0], row[1]);
                    let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.2" fill="{colour}"/>"#);
                }
            }
        }
        None => curve(&mut svg, &Frame::new(2, std::iter::empty(), std::iter::empty()), &[], "samples", "x"),
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn row(mode: TrainMode, n: usize, p: f64, seed: u64, mmd: f64) -> ReportRow {
        ReportRow {
            run: format!("r{n}_{p}_{seed}"),
            mode,
            kd_method: KdMethod::Prediction,
            lambda_kd: 1.0,
            n_students: n,
            p,
            self_distill: false,
            seed,
            iterations: 10,
            params: 100,
            macs: 90,
            mmd,
            swd: 0.1 + mmd,
            coverage: Some(8),
            quality_fraction: Some(0.123_456_789_012_345_67),
        }
    }

    #[test]
    fn empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report_csv(&path, &[]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# "));
        assert_eq!(text.lines().nth(1).unwrap(), REPORT_COLUMNS.join(","));
        assert!(read_report_csv(&path).unwrap().is_empty());
        let svg = render_svg(&[], None);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn numbers_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            row(TrainMode::O2okd, 1, 0.5, 0, 1.0 / 3.0),
            row(TrainMode::O2mkd, 4, 0.25, 1, 2.0f64.sqrt() * 1e-5),
        ];
        write_report_csv(&path, &rows).unwrap();
        assert_eq!(read_report_csv(&path).unwrap(), rows);
    }

    #[test]
    fn curves_use_medians() {
        let rows = vec![
            row(TrainMode::O2okd, 1, 0.5, 0, 3.0),
            row(TrainMode::O2okd, 1, 0.5, 1, 1.0),
            row(TrainMode::O2okd, 1, 0.5, 2, 2.0),
            row(TrainMode::O2mkd, 4, 0.5, 0, 0.5),
            row(TrainMode::O2mkd, 4, 0.0, 0, 0.9),
        ];
        assert_eq!(mmd_vs_n(&rows), vec![(1.0, 2.0), (4.0, 0.7)]);
        assert_eq!(mmd_vs_p(&rows), vec![(0.0, 0.9), (0.5, 0.5)]);
        let svg = render_svg(&rows, Some((array![[0.0, 1.0], [1.0, 0.0]].view(), array![[0.5, 0.5]].view())));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"r="1.2""#).count(), 3);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
