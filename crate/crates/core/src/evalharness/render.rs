use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::curve::SeparationCurve;
use super::metrics::EvalReport;

pub const RESULTS_FILE: &str = "results.csv";
pub const CURVE_CSV_FILE: &str = "curve.csv";
pub const CURVE_SVG_FILE: &str = "curve.svg";
pub const RUN_META_FILE: &str = "run_meta.json";

/// Provenance written next to every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl RunMeta {
    pub fn new(seed: u64, config: serde_json::Value) -> Self {
        Self {
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            seed,
            config,
        }
    }
}

fn tag<T: Serialize>(value: Option<T>) -> Result<String> {
    Ok(match value {
        Some(v) => serde_json::to_value(v)?.to_string().trim_matches('"').to_string(),
        None => "-".to_string(),
    })
}

pub fn results_csv(reports: &[EvalReport]) -> Result<String> {
    let mut out = String::from("method,posenc,mgm,accuracy,f1\n");
    for r in reports {
        let mgm = r.mgm.map(|m| if m { "on" } else { "off" });
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method,
            tag(r.posenc)?,
            tag(mgm)?,
            r.accuracy,
            r.f1
        );
    }
    Ok(out)
}

pub fn curve_csv(curve: &SeparationCurve) -> String {
    let mut out = String::from("delta,n,accuracy,low_confidence\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{},{}", p.delta, p.n_pairs, p.accuracy, p.low_confidence);
    }
    out
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Accuracy against separation as one polyline with axis ticks. Buckets
/// with few pairs get hollow markers.
pub fn curve_svg(curve: &SeparationCurve) -> String {
    let (x0, x1) = (MARGIN, WIDTH - MARGIN / 2.0);
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN / 2.0);
    let lo = curve.points.first().map_or(1, |p| p.delta) as f64;
    let hi = curve.points.last().map_or(1, |p| p.delta) as f64;
    let span = (hi - lo).max(1.0);
    let px = |d: f64| x0 + (d - lo) / span * (x1 - x0);
    let py = |a: f64| y0 - a * (y0 - y1);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} V{y0} H{x1}" fill="none" stroke="black"/>"#);
    for p in &curve.points {
        let x = px(p.delta as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            p.delta
        );
    }
    for i in 0..=4 {
        let a = i as f64 / 4.0;
        let y = py(a);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{a:.2}</text>"#,
            x0 - 7.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">clip separation</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.2}" text-anchor="middle" transform="rotate(-90 12 {:.2})">pairwise accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.delta as f64), py(p.accuracy)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    for p in &curve.points {
        let fill = if p.low_confidence { "white" } else { "steelblue" };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{fill}" stroke="steelblue"/>"#,
            px(p.delta as f64),
            py(p.accuracy)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

/// `report_<method>.json`, numbered from 1 when a method repeats.
pub fn report_file_name(reports: &[EvalReport], index: usize) -> String {
    let method = reports[index].method;
    if reports.iter().filter(|r| r.method == method).count() == 1 {
        format!("report_{method}.json")
    } else {
        let k = reports[..=index].iter().filter(|r| r.method == method).count();
        format!("report_{method}_{k}.json")
    }
}

/// Writes results.csv and one report JSON per report, the curve
/// files when a curve is given, and run_meta.json.
pub fn render_reports(
    reports: &[EvalReport],
    curve: Option<&SeparationCurve>,
    meta: &RunMeta,
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(out_dir, RESULTS_FILE, &results_csv(reports)?)?;
    for (i, r) in reports.iter().enumerate() {
        write(
            out_dir,
            &report_file_name(reports, i),
            &(serde_json::to_string_pretty(r)? + "\n"),
        )?;
    }
    if let Some(c) = curve {
        write(out_dir, CURVE_CSV_FILE, &curve_csv(c))?;
        write(out_dir, CURVE_SVG_FILE, &curve_svg(c))?;
    }
    write(out_dir, RUN_META_FILE, &(serde_json::to_string_pretty(meta)? + "\n"))
}
