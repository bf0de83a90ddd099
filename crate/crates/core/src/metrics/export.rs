use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{DotError, Result};
use crate::io::{create, write_matrix_csv};
use crate::numeric::Matrix;

use super::MetricsLog;

/// Attention map or transport plan as CSV with header `j0..j{n_t-1}`.
pub fn export_heatmap_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix_csv(m, path)
}

/// Writes `metrics.csv` (long format: `epoch,metric,value`) into `dir`, and
/// for a nonempty log one SVG chart per metric under `dir/curves/` plus all
/// charts side by side in `dir/curves.svg`. Returns the files written.
pub fn export_curves(log: &MetricsLog, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let csv_path = dir.join("metrics.csv");
    let mut w = create(&csv_path)?;
    let io = |e| DotError::io(&csv_path, e);
    writeln!(w, "epoch,metric,value").map_err(io)?;
    for r in log.records() {
        for (name, v) in r.metrics() {
            writeln!(w, "{},{name},{v}", r.epoch).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    let mut written = vec![csv_path.clone()];
    if log.is_empty() {
        return Ok(written);
    }

    let names = log.metric_names();
    let curves = dir.join("curves");
    std::fs::create_dir_all(&curves).map_err(|e| DotError::io(&curves, e))?;
    let mut panels = Vec::new();
    for name in &names {
        let series = log.series(name);
        let panel = chart(name, &series);
        let path = curves.join(format!("{name}.svg"));
        write_text(&path, &svg_document(PANEL_W, PANEL_H, &panel))?;
        written.push(path);
        panels.push(panel);
    }

    let cols = 3;
    let rows = panels.len().div_ceil(cols);
    let mut body = String::new();
    for (k, p) in panels.iter().enumerate() {
        let (x, y) = ((k % cols) as f64 * PANEL_W, (k / cols) as f64 * PANEL_H);
        let _ = writeln!(body, "<g transform=\"translate({x},{y})\">\n{p}</g>");
    }
    let path = dir.join("curves.svg");
    write_text(
        &path,
        &svg_document(cols as f64 * PANEL_W, rows as f64 * PANEL_H, &body),
    )?;
    written.push(path);
    Ok(written)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| DotError::io(path, e))
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 40.0;

fn svg_document(w: f64, h: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// One line chart as SVG elements in a `PANEL_W × PANEL_H` box.
fn chart(name: &str, series: &[(usize, f64)]) -> String {
    let x0 = series.first().map_or(0.0, |p| p.0 as f64);
    let x1 = series.last().map_or(1.0, |p| p.0 as f64);
    let (mut y0, mut y1) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    if y1 - y0 < 1e-12 * (1.0 + y0.abs()) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let px = |x: f64| MARGIN_L + (x - x0) / xspan * pw;
    let py = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{name}</text>",
        PANEL_W / 2.0
    );
    let (bx, by) = (MARGIN_L, MARGIN_T + ph);
    let _ = writeln!(
        s,
        "<line x1=\"{bx}\" y1=\"{by}\" x2=\"{:.1}\" y2=\"{by}\" stroke=\"black\"/>",
        bx + pw
    );
    let _ = writeln!(
        s,
        "<line x1=\"{bx}\" y1=\"{MARGIN_T}\" x2=\"{bx}\" y2=\"{by}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{bx}\" y=\"{:.1}\" text-anchor=\"middle\">{x0}</text>",
        by + 14.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x1}</text>",
        bx + pw,
        by + 14.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">epoch</text>",
        bx + pw / 2.0,
        by + 30.0
    );
    for (v, y) in [(y1, MARGIN_T), (y0, by)] {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            bx - 4.0,
            y + 4.0,
            tick(v)
        );
    }
    let _ = writeln!(
        s,
        "<text transform=\"translate(14,{:.1}) rotate(-90)\" text-anchor=\"middle\">value</text>",
        MARGIN_T + ph / 2.0
    );
    let pts: Vec<String> = series
        .iter()
        .map(|&(e, v)| format!("{:.2},{:.2}", px(e as f64), py(v)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>",
        pts.join(" ")
    );
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
