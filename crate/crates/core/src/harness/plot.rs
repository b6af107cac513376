//! Two-panel SVG: loss (solid) and validation accuracy (dashed) against
//! epoch on the left, cumulative rejected steps against batch on the right.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::metrics::RunRecord;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 440.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 360.0;
const LEFT_PANEL: (f64, f64) = (70.0, 450.0);
const RIGHT_PANEL: (f64, f64) = (570.0, 950.0);
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

/// Fractional epoch of each record: `epoch + batch / batches_in_that_epoch`.
fn epoch_positions(records: &[RunRecord]) -> Vec<f64> {
    let mut per_epoch = std::collections::BTreeMap::new();
    for r in records {
        let e = per_epoch.entry(r.epoch).or_insert(0usize);
        *e = (*e).max(r.batch + 1);
    }
    records
        .iter()
        .map(|r| r.epoch as f64 + r.batch as f64 / per_epoch[&r.epoch] as f64)
        .collect()
}

fn polyline(out: &mut String, class: &str, method: &str, color: &str, dashed: bool, pts: &[(f64, f64)]) {
    let mut points = String::new();
    for (x, y) in pts {
        let _ = write!(points, "{x:.2},{y:.2} ");
    }
    let dash = if dashed { " stroke-dasharray=\"6,4\"" } else { "" };
    let _ = writeln!(
        out,
        "<polyline class=\"{class}\" data-method=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>",
        escape(method),
        points.trim_end()
    );
}

fn frame(out: &mut String, (x0, x1): (f64, f64), title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        "<rect x=\"{x0}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>",
        x1 - x0,
        BOTTOM - TOP
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        (x0 + x1) / 2.0,
        TOP - 12.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        (x0 + x1) / 2.0,
        BOTTOM + 32.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 {} {})\">{}</text>",
        x0 - 45.0,
        (TOP + BOTTOM) / 2.0,
        x0 - 45.0,
        (TOP + BOTTOM) / 2.0,
        escape(ylabel)
    );
}

fn tick_labels(out: &mut String, x: f64, anchor: &str, axis: &Axis) {
    for v in [axis.lo, axis.hi] {
        let _ = writeln!(
            out,
            "<text x=\"{x}\" y=\"{:.2}\" text-anchor=\"{anchor}\" font-size=\"10\">{}</text>",
            axis.map(v) + 4.0,
            format_tick(v)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders the figure for `(method tag, records)` pairs.
pub fn render_svg(runs: &[(String, Vec<RunRecord>)]) -> Result<String, PlotError> {
    if runs.is_empty() || runs.iter().all(|(_, r)| r.is_empty()) {
        return Err(PlotError::Empty);
    }
    let positions: Vec<Vec<f64>> = runs.iter().map(|(_, r)| epoch_positions(r)).collect();
    let (ep_lo, ep_hi) = finite_range(positions.iter().flatten().copied()).unwrap_or((0.0, 1.0));
    let (loss_lo, loss_hi) =
        finite_range(runs.iter().flat_map(|(_, r)| r.iter().map(|x| x.loss))).unwrap_or((0.0, 1.0));
    let max_k = runs
        .iter()
        .flat_map(|(_, r)| r.iter().map(|x| x.k))
        .max()
        .unwrap_or(0) as f64;
    let max_rej = runs
        .iter()
        .map(|(_, r)| r.iter().map(|x| x.rejections as f64).sum::<f64>())
        .fold(0.0, f64::max);

    let ex = Axis::new(ep_lo, ep_hi.max(ep_lo + 1.0), LEFT_PANEL.0, LEFT_PANEL.1);
    let ly = Axis::new(loss_lo.min(0.0), loss_hi, BOTTOM, TOP);
    let ay = Axis::new(0.0, 1.0, BOTTOM, TOP);
    let kx = Axis::new(0.0, max_k.max(1.0), RIGHT_PANEL.0, RIGHT_PANEL.1);
    let ry = Axis::new(0.0, max_rej.max(1.0), BOTTOM, TOP);

    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    let _ = writeln!(out, "<g class=\"panel\" id=\"loss-accuracy\">");
    frame(&mut out, LEFT_PANEL, "Loss (solid) / validation accuracy (dashed)", "epoch", "loss");
    tick_labels(&mut out, LEFT_PANEL.0 - 4.0, "end", &ly);
    tick_labels(&mut out, LEFT_PANEL.1 + 4.0, "start", &ay);
    for (i, ((method, records), pos)) in runs.iter().zip(&positions).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let loss: Vec<_> = records
            .iter()
            .zip(pos)
            .filter(|(r, _)| r.loss.is_finite())
            .map(|(r, p)| (ex.map(*p), ly.map(r.loss)))
            .collect();
        let acc: Vec<_> = records
            .iter()
            .zip(pos)
            .filter(|(r, _)| r.val_acc.is_finite())
            .map(|(r, p)| (ex.map(*p), ay.map(r.val_acc)))
            .collect();
        polyline(&mut out, "loss", method, color, false, &loss);
        polyline(&mut out, "accuracy", method, color, true, &acc);
    }
    let _ = writeln!(out, "</g>");

    let _ = writeln!(out, "<g class=\"panel\" id=\"rejections\">");
    frame(&mut out, RIGHT_PANEL, "Cumulative rejected steps", "batch", "rejections");
    tick_labels(&mut out, RIGHT_PANEL.0 - 4.0, "end", &ry);
    for (i, (method, records)) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut total = 0.0;
        let pts: Vec<_> = records
            .iter()
            .map(|r| {
                total += r.rejections as f64;
                (kx.map(r.k as f64), ry.map(total))
            })
            .collect();
        polyline(&mut out, "rejections", method, color, false, &pts);
    }
    let _ = writeln!(out, "</g>");

    let _ = writeln!(out, "<g class=\"legend\">");
    for (i, (method, _)) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = 70.0 + 150.0 * i as f64;
        let y = HEIGHT - 20.0;
        let _ = writeln!(
            out,
            "<g class=\"legend-entry\"><line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"3\"/><text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text></g>",
            x + 24.0,
            x + 30.0,
            y + 4.0,
            escape(method)
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

pub fn emit_plot(runs: &[(String, Vec<RunRecord>)], path: &Path) -> Result<(), PlotError> {
    let svg = render_svg(runs)?;
    std::fs::write(path, svg)?;
    Ok(())
}
