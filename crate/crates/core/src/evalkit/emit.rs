use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{MetricsReport, RocPoint};
use crate::error::{Error, Result};

/// `metrics.json` body: the report plus the resolved-config digest.
#[derive(Serialize)]
struct MetricsFile<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

fn write(path: &Path, text: String) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the report as pretty JSON.
pub fn emit_report(report: &MetricsReport, config_digest: &str, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&MetricsFile { config_digest, report })?;
    text.push('\n');
    write(path.as_ref(), text)
}

/// Writes `<base>.csv` (`fpr,tpr,threshold`) and `<base>.svg`, a standalone
/// line chart with one polyline vertex per ROC point. Returns both paths.
pub fn emit_roc_plot(points: &[RocPoint], base: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let base = base.as_ref();
    let (csv_path, svg_path) = (base.with_extension("csv"), base.with_extension("svg"));
    let mut csv = String::from("fpr,tpr,threshold\n");
    for p in points {
        writeln!(csv, "{},{},{}", p.fpr, p.tpr, p.threshold).expect("string write");
    }
    write(&csv_path, csv)?;
    write(&svg_path, roc_svg(points))?;
    Ok((csv_path, svg_path))
}

fn roc_svg(points: &[RocPoint]) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let x = |fpr: f64| PAD + fpr * SIZE;
    let y = |tpr: f64| PAD + (1.0 - tpr) * SIZE;
    let full = SIZE + 2.0 * PAD;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    )
    .expect("string write");
    writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#)
        .expect("string write");
    writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    )
    .expect("string write");
    let vertices: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr)))
        .collect();
    writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{}"/>"##,
        vertices.join(" ")
    )
    .expect("string write");
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">false positive rate</text>"#,
        PAD + SIZE / 2.0,
        full - 15.0
    )
    .expect("string write");
    writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">true positive rate</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    )
    .expect("string write");
    s.push_str("</svg>\n");
    s
}

/// Reads ROC points back from a CSV written by [`emit_roc_plot`].
pub fn read_roc_csv(path: impl AsRef<Path>) -> Result<Vec<RocPoint>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::Dependency(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("{}:{}: bad number {s:?}", path.display(), n + 1)))
        };
        if fields.len() != 3 {
            return Err(Error::Format(format!("{}:{}: expected 3 fields", path.display(), n + 1)));
        }
        out.push(RocPoint {
            fpr: parse(fields[0])?,
            tpr: parse(fields[1])?,
            threshold: parse(fields[2])?,
        });
    }
    Ok(out)
}
