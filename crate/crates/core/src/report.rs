//! Plain-text artifacts: calibration plots and histograms as standalone SVG,
//! curves and tables as CSV, run comparisons as Markdown.
//!
//! All renderers are pure functions of their inputs and produce byte-identical
//! output for identical inputs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CalibrationCurve, Histogram, MetricsReport};
use crate::recal::SweepTable;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

/// A labelled evaluation run, e.g. in-distribution, shifted or OOD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub label: String,
    pub report: MetricsReport,
}

impl RunArtifact {
    pub fn new(label: impl Into<String>, report: MetricsReport) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::InvalidConfig("run label must not be empty".into()));
        }
        Ok(RunArtifact { label, report })
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// CSV with columns `variant,class,bin,count,mean_prob,accuracy`. The
/// top-label line uses `top` as its class; empty bins leave the last two
/// fields blank.
pub fn curves_to_csv(curves: &[CalibrationCurve]) -> String {
    let mut out = String::from("variant,class,bin,count,mean_prob,accuracy\n");
    for curve in curves {
        for line in &curve.classes {
            let class = line
                .class
                .map_or_else(|| "top".to_string(), |c| c.to_string());
            for b in &line.bins {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    curve.variant.name(),
                    class,
                    b.bin_index,
                    b.count,
                    opt(b.mean_prob),
                    opt(b.accuracy)
                );
            }
        }
    }
    out
}

pub fn histogram_to_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let (l, r) = h.edges(i);
        let _ = writeln!(out, "{l},{r},{c}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub class: Option<usize>,
    pub bin: usize,
    pub mean_prob: f64,
    pub accuracy: f64,
}

/// The points a calibration plot draws: one per populated bin and line.
pub fn plot_points(curve: &CalibrationCurve) -> Vec<PlotPoint> {
    curve
        .classes
        .iter()
        .flat_map(|line| {
            line.bins
                .iter()
                .filter_map(move |b| match (b.mean_prob, b.accuracy) {
                    (Some(p), Some(a)) => Some(PlotPoint {
                        class: line.class,
                        bin: b.bin_index,
                        mean_prob: p,
                        accuracy: a,
                    }),
                    _ => None,
                })
        })
        .collect()
}

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.left + v * self.width
    }

    fn y(&self, v: f64) -> f64 {
        self.top + (1.0 - v) * self.height
    }

    fn axes(
        &self,
        out: &mut String,
        x_label: &str,
        y_label: &str,
        x_range: (f64, f64),
        y_range: (f64, f64),
    ) {
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333\"/>",
            self.left, self.top, self.width, self.height
        );
        let (xd, yd) = (tick_decimals(x_range), tick_decimals(y_range));
        for i in 0..=5 {
            let t = i as f64 / 5.0;
            let xv = x_range.0 + t * (x_range.1 - x_range.0);
            let yv = y_range.0 + t * (y_range.1 - y_range.0);
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {FONT}>{xv:.xd$}</text>",
                self.x(t),
                self.top + self.height + 14.0
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" {FONT}>{yv:.yd$}</text>",
                self.left - 4.0,
                self.y(t) + 4.0
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {FONT}>{}</text>",
            self.left + self.width / 2.0,
            self.top + self.height + 30.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 {:.2} {:.2})\" {FONT}>{}</text>",
            self.left - 50.0,
            self.top + self.height / 2.0,
            self.left - 50.0,
            self.top + self.height / 2.0,
            escape(y_label)
        );
    }
}

/// Enough decimals to tell five equal tick steps over `range` apart.
fn tick_decimals(range: (f64, f64)) -> usize {
    let step = (range.1 - range.0).abs() / 5.0;
    if step <= 0.0 || !step.is_finite() {
        return 2;
    }
    (-step.log10()).ceil().clamp(0.0, 8.0) as usize + 1
}

fn svg_open(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, width: f64) {
    if pts.len() < 2 {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>",
        coords.join(" ")
    );
}

/// Reliability diagram: accuracy against mean probability with the diagonal,
/// one line per class through populated bins (broken at empty bins), the
/// across-class quartile band for marginal curves and a count histogram below.
pub fn render_calibration_plot(curve: &CalibrationCurve) -> String {
    let plot = Frame {
        left: 60.0,
        top: 30.0,
        width: 400.0,
        height: 400.0,
    };
    let bars = Frame {
        left: 60.0,
        top: 480.0,
        width: 400.0,
        height: 70.0,
    };
    let mut out = String::new();
    svg_open(&mut out, 560.0, 600.0);
    let _ = writeln!(
        out,
        "<text x=\"260\" y=\"18\" text-anchor=\"middle\" {FONT}>{} calibration (n = {})</text>",
        curve.variant.name(),
        curve.total
    );
    plot.axes(
        &mut out,
        "mean probability",
        "accuracy",
        (0.0, 1.0),
        (0.0, 1.0),
    );
    let _ = writeln!(
        out,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>",
        plot.x(0.0),
        plot.y(0.0),
        plot.x(1.0),
        plot.y(1.0)
    );

    let m = curve.num_bins as f64;
    let center = |bin: usize| (bin as f64 + 0.5) / m;
    if let Some(band) = &curve.quartile_band {
        let mut runs: Vec<Vec<(usize, f64, f64)>> = Vec::new();
        let mut current = Vec::new();
        for (bin, q) in band.iter().enumerate() {
            match q {
                Some(q) => current.push((bin, q.q1, q.q3)),
                None if !current.is_empty() => runs.push(std::mem::take(&mut current)),
                None => {}
            }
        }
        if !current.is_empty() {
            runs.push(current);
        }
        for run in runs {
            let mut pts: Vec<String> = run
                .iter()
                .map(|&(b, _, q3)| format!("{:.2},{:.2}", plot.x(center(b)), plot.y(q3)))
                .collect();
            pts.extend(
                run.iter()
                    .rev()
                    .map(|&(b, q1, _)| format!("{:.2},{:.2}", plot.x(center(b)), plot.y(q1))),
            );
            let _ = writeln!(
                out,
                "<polygon points=\"{}\" fill=\"#888\" fill-opacity=\"0.25\" stroke=\"none\"/>",
                pts.join(" ")
            );
        }
    }

    for (i, line) in curve.classes.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut segment: Vec<(f64, f64)> = Vec::new();
        for b in &line.bins {
            match (b.mean_prob, b.accuracy) {
                (Some(p), Some(a)) => segment.push((plot.x(p), plot.y(a))),
                _ => {
                    polyline(&mut out, &segment, color, 1.5);
                    segment.clear();
                }
            }
        }
        polyline(&mut out, &segment, color, 1.5);
        for b in &line.bins {
            if let (Some(p), Some(a)) = (b.mean_prob, b.accuracy) {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>",
                    plot.x(p),
                    plot.y(a)
                );
            }
        }
        let label = line
            .class
            .map_or_else(|| "top label".to_string(), |c| format!("class {c}"));
        let _ = writeln!(
            out,
            "<text x=\"470\" y=\"{:.2}\" fill=\"{color}\" {FONT}>{}</text>",
            40.0 + 14.0 * i as f64,
            escape(&label)
        );
    }

    // counts summed over lines, per bin
    let mut counts = vec![0u64; curve.num_bins];
    for line in &curve.classes {
        for b in &line.bins {
            counts[b.bin_index] += b.count;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let _ = writeln!(
        out,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333\"/>",
        bars.left, bars.top, bars.width, bars.height
    );
    for (bin, &c) in counts.iter().enumerate() {
        let h = c as f64 / max * bars.height;
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4c72b0\"/>",
            bars.x(bin as f64 / m) + 1.0,
            bars.top + bars.height - h,
            bars.width / m - 2.0,
            h
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" {FONT}>{}</text>",
        bars.left - 4.0,
        bars.top + 10.0,
        max as u64
    );
    let _ = writeln!(
        out,
        "<text x=\"260\" y=\"{:.2}\" text-anchor=\"middle\" {FONT}>records per bin</text>",
        bars.top + bars.height + 16.0
    );
    out.push_str("</svg>\n");
    out
}

fn histogram_panel(out: &mut String, frame: &Frame, title: &str, h: Option<&Histogram>) {
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {FONT}>{}</text>",
        frame.left + frame.width / 2.0,
        frame.top - 8.0,
        escape(title)
    );
    let Some(h) = h else {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" {FONT}>no matched or missing records</text>",
            frame.left + frame.width / 2.0,
            frame.top + frame.height / 2.0
        );
        return;
    };
    let total = h.total().max(1) as f64;
    let peak = h.counts.iter().copied().max().unwrap_or(0) as f64 / total;
    let peak = if peak > 0.0 { peak } else { 1.0 };
    frame.axes(out, "log entropy", "frequency", (h.lo, h.hi), (0.0, peak));
    let n = h.num_bins() as f64;
    for (i, &c) in h.counts.iter().enumerate() {
        let frac = c as f64 / total / peak;
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4c72b0\"/>",
            frame.x(i as f64 / n),
            frame.y(frac),
            frame.width / n,
            frac * frame.height
        );
    }
}

/// Side-by-side log-entropy histograms, one panel per run.
pub fn render_entropy_panels(runs: &[RunArtifact]) -> String {
    let panel_w = 260.0;
    let mut out = String::new();
    svg_open(&mut out, 40.0 + panel_w * runs.len() as f64, 320.0);
    for (i, run) in runs.iter().enumerate() {
        let frame = Frame {
            left: 60.0 + panel_w * i as f64,
            top: 30.0,
            width: panel_w - 70.0,
            height: 230.0,
        };
        let _ = writeln!(out, "<g class=\"panel\">");
        histogram_panel(
            &mut out,
            &frame,
            &run.label,
            run.report.entropy_histogram.as_ref(),
        );
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Columns of the comparison table: name, extractor, whether larger is better.
type Column = (&'static str, fn(&MetricsReport) -> Option<f64>, bool);

const COLUMNS: [Column; 6] = [
    ("ap50", |r| r.ap50, true),
    ("nll", |r| Some(r.nll), false),
    ("brier", |r| Some(r.brier), false),
    ("tce", |r| Some(r.tce), false),
    ("mce", |r| Some(r.mce), false),
    ("dmce", |r| r.dmce, false),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub csv: String,
    pub markdown: String,
    pub entropy_csv: String,
    pub entropy_svg: String,
    /// `best[run][column]` in [`Comparison::column_names`] order.
    pub best: Vec<Vec<bool>>,
}

impl Comparison {
    pub fn column_names() -> Vec<&'static str> {
        COLUMNS.iter().map(|c| c.0).collect()
    }
}

/// Table of headline metrics per run with the best value in each column
/// flagged, plus side-by-side entropy histograms.
pub fn render_comparison(runs: &[RunArtifact]) -> Result<Comparison> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InvalidConfig("nothing to compare".into()))?;
    let k = first.report.num_classes;
    if let Some(r) = runs.iter().find(|r| r.report.num_classes != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: r.report.num_classes,
        });
    }

    let best: Vec<Vec<bool>> = {
        let winners: Vec<Option<f64>> = COLUMNS
            .iter()
            .map(|(_, get, higher)| {
                runs.iter()
                    .filter_map(|r| get(&r.report))
                    .fold(None, |acc: Option<f64>, v| match acc {
                        Some(a) if (*higher && a >= v) || (!*higher && a <= v) => Some(a),
                        _ => Some(v),
                    })
            })
            .collect();
        runs.iter()
            .map(|r| {
                COLUMNS
                    .iter()
                    .zip(&winners)
                    .map(|((_, get, _), w)| matches!((get(&r.report), w), (Some(v), Some(w)) if v == *w))
                    .collect()
            })
            .collect()
    };

    let names = Comparison::column_names();
    let mut csv = format!("label,{},best\n", names.join(","));
    let mut md = format!(
        "| run | {} |\n|---|{}\n",
        names.join(" | "),
        "---:|".repeat(names.len())
    );
    for (run, flags) in runs.iter().zip(&best) {
        let values: Vec<Option<f64>> = COLUMNS.iter().map(|(_, get, _)| get(&run.report)).collect();
        let best_names: Vec<&str> = names
            .iter()
            .zip(flags)
            .filter(|(_, f)| **f)
            .map(|(n, _)| *n)
            .collect();
        let _ = writeln!(
            csv,
            "{},{},{}",
            csv_field(&run.label),
            values.iter().map(|v| opt(*v)).collect::<Vec<_>>().join(","),
            best_names.join(";")
        );
        let cells: Vec<String> = values
            .iter()
            .zip(flags)
            .map(|(v, &f)| match v {
                None => "n/a".to_string(),
                Some(x) if f => format!("**{x:.4}**"),
                Some(x) => format!("{x:.4}"),
            })
            .collect();
        let _ = writeln!(
            md,
            "| {} | {} |",
            run.label.replace('|', "\\|"),
            cells.join(" | ")
        );
    }

    Ok(Comparison {
        csv,
        markdown: md,
        entropy_csv: entropy_columns(runs)?,
        entropy_svg: render_entropy_panels(runs),
        best,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `bin_left,bin_right,<label>...` with one count column per run; runs
/// without a histogram get an empty column.
fn entropy_columns(runs: &[RunArtifact]) -> Result<String> {
    let hists: Vec<Option<&Histogram>> = runs
        .iter()
        .map(|r| r.report.entropy_histogram.as_ref())
        .collect();
    let Some(reference) = hists.iter().flatten().next() else {
        return Ok(String::from("bin_left,bin_right\n"));
    };
    if let Some(h) = hists
        .iter()
        .flatten()
        .find(|h| h.num_bins() != reference.num_bins())
    {
        return Err(Error::DimensionMismatch {
            expected: reference.num_bins(),
            found: h.num_bins(),
        });
    }
    let labels: Vec<String> = runs.iter().map(|r| csv_field(&r.label)).collect();
    let mut out = format!("bin_left,bin_right,{}\n", labels.join(","));
    for i in 0..reference.num_bins() {
        let (l, r) = reference.edges(i);
        let cells: Vec<String> = hists
            .iter()
            .map(|h| h.map(|h| h.counts[i].to_string()).unwrap_or_default())
            .collect();
        let _ = writeln!(out, "{l},{r},{}", cells.join(","));
    }
    Ok(out)
}

pub fn sweep_to_csv(table: &SweepTable) -> String {
    let mut out = String::from("param,nll,brier,tce,mce,dmce\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.param,
            r.nll,
            r.brier,
            r.tce,
            r.mce,
            opt(r.dmce)
        );
    }
    out
}

/// One panel per metric, each plotted against the transform parameter.
pub fn render_sweep_plot(table: &SweepTable) -> String {
    let metrics = crate::recal::SWEEP_METRICS;
    let panel_w = 240.0;
    let mut out = String::new();
    svg_open(&mut out, 40.0 + panel_w * metrics.len() as f64, 300.0);
    let xs: Vec<f64> = table.rows.iter().map(|r| r.param).collect();
    let (x_lo, x_hi) = min_max(&xs);
    for (i, metric) in metrics.iter().enumerate() {
        let frame = Frame {
            left: 60.0 + panel_w * i as f64,
            top: 30.0,
            width: panel_w - 70.0,
            height: 200.0,
        };
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" {FONT}>{metric}</text>",
            frame.left + frame.width / 2.0
        );
        let column = table.column(metric);
        let ys: Vec<f64> = column.iter().flatten().copied().collect();
        let (y_lo, y_hi) = min_max(&ys);
        frame.axes(&mut out, "parameter", metric, (x_lo, x_hi), (y_lo, y_hi));
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(&column)
            .filter_map(|(x, y)| {
                y.map(|y| (frame.x(unit(*x, x_lo, x_hi)), frame.y(unit(y, y_lo, y_hi))))
            })
            .collect();
        polyline(&mut out, &pts, PALETTE[i], 1.5);
        for (x, y) in pts {
            let _ = writeln!(
                out,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{}\"/>",
                PALETTE[i]
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    (v - lo) / (hi - lo)
}
