//! Static SVG rendering: UAR-vs-round line charts from a run log and
//! spectrogram heatmaps. Output is deterministic for a given input.

use anyhow::{bail, Context, Result};
use fedser_core::metrics::RUN_LOG_HEADER;
use fedser_core::tensor::Tensor;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One chart series: (round, uar) points for a (condition, attack) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub key: String,
    pub points: Vec<(f64, f64)>,
}

/// Parse a run log CSV into per-(condition, attack) UAR series.
pub fn parse_run_log(text: &str) -> Result<Vec<Series>> {
    let mut lines = text.lines();
    let header = lines.next().context("run log is empty")?;
    if header != RUN_LOG_HEADER {
        bail!("unexpected run log header: {header}");
    }
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            bail!("run log line {}: expected 7 columns, got {}", lineno + 2, cols.len());
        }
        let round: f64 = cols[0].parse().with_context(|| format!("line {}: round", lineno + 2))?;
        let uar: f64 = cols[3].parse().with_context(|| format!("line {}: uar", lineno + 2))?;
        let accuracy: f64 =
            cols[4].parse().with_context(|| format!("line {}: accuracy", lineno + 2))?;
        if !(0.0..=1.0).contains(&uar) || !(0.0..=1.0).contains(&accuracy) {
            bail!("run log line {}: uar/accuracy outside [0, 1]", lineno + 2);
        }
        let key = if cols[2] == "none" {
            cols[1].to_string()
        } else {
            format!("{} ({})", cols[1], cols[2])
        };
        series.entry(key).or_default().push((round, uar));
    }
    if series.is_empty() {
        bail!("run log has no data rows");
    }
    Ok(series.into_iter().map(|(key, points)| Series { key, points }).collect())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

const W: f64 = 800.0;
const H: f64 = 500.0;
const ML: f64 = 60.0; // margins
const MR: f64 = 220.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;

/// Render UAR-vs-round series as an SVG line chart with axes and a legend.
pub fn line_chart(series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        bail!("no series to chart");
    }
    let xmax = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let xmin = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).fold(f64::INFINITY, f64::min);
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let px = |x: f64| ML + (x - xmin) / span * (W - ML - MR);
    let py = |y: f64| MT + (1.0 - y) * (H - MT - MB);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    // Axes.
    let _ = writeln!(
        out,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(out, "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>", H - MB);
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{ML}\" y2=\"{y:.1}\" stroke=\"black\"/>",
            ML - 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{v:.1}</text>",
            ML - 8.0,
            y + 4.0
        );
    }
    let x_label_y = H - MB + 35.0;
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{x_label_y}\" font-size=\"14\" text-anchor=\"middle\">round</text>",
        (ML + W - MR) / 2.0
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{:.1}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">UAR</text>",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    );
    for s in series {
        let rounds: Vec<f64> = s.points.iter().map(|p| p.0).collect();
        for r in rounds {
            let x = px(r);
            let _ = writeln!(
                out,
                "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>",
                H - MB,
                H - MB + 5.0
            );
            let _ = writeln!(
                out,
                "<text x=\"{x:.1}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{r}</text>",
                H - MB + 20.0
            );
        }
        break; // ticks once, from the first series
    }
    // Series.
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> =
            s.points.iter().map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y))).collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>",
            path.join(" ")
        );
        for (x, y) in &s.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{colour}\"/>",
                px(*x),
                py(*y)
            );
        }
        let ly = MT + 20.0 * i as f64 + 10.0;
        let lx = W - MR + 15.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx}\" y1=\"{ly:.1}\" x2=\"{}\" y2=\"{ly:.1}\" stroke=\"{colour}\" stroke-width=\"2\"/>",
            lx + 25.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"12\">{}</text>",
            lx + 32.0,
            ly + 4.0,
            s.key
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Greyscale heatmap of a (W, H, 1) spectrogram, frames on the x axis.
pub fn heatmap(t: &Tensor, title: &str) -> Result<String> {
    let shape = t.shape();
    if shape.len() != 3 || shape[2] != 1 {
        bail!("heatmap expects a (W, H, 1) tensor, got {shape:?}");
    }
    let (w, h) = (shape[0], shape[1]);
    let lo = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = 8.0;
    let top = 24.0;
    let width = w as f64 * cell;
    let height = h as f64 * cell + top;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(out, "<text x=\"4\" y=\"16\" font-size=\"13\">{title}</text>");
    for i in 0..w {
        for j in 0..h {
            let v = (t.data()[i * h + j] - lo) / span;
            let g = (v * 255.0).round() as u8;
            // Low mel bins at the bottom.
            let y = top + (h - 1 - j) as f64 * cell;
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({g},{g},{g})\"/>",
                i as f64 * cell
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
