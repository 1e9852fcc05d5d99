//! Byte-stable SVG scatter plots.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CliError, CliResult, Stage};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 520.0;
const MARGIN: f64 = 50.0;
const LEGEND_WIDTH: f64 = 110.0;
const RADIUS: f64 = 3.0;

/// Tableau-style categorical palette, cycled when there are more labels.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Renders a two-column embedding as SVG, one `<circle>` per point coloured
/// by label, with axes and a legend.
pub fn scatter_svg(y: &DMatrix<f64>, labels: &[usize], title: &str) -> CliResult<String> {
    if y.ncols() != 2 {
        return Err(CliError::Config(format!(
            "scatter plots need 2 columns, got {}",
            y.ncols()
        )));
    }
    if labels.is_empty() || labels.len() != y.nrows() {
        return Err(CliError::Config(format!(
            "scatter plot needs one label per point ({} points, {} labels)",
            y.nrows(),
            labels.len()
        )));
    }
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let color = |l: usize| PALETTE[classes.binary_search(&l).unwrap() % PALETTE.len()];

    let (xmin, xmax) = range(y.column(0).iter());
    let (ymin, ymax) = range(y.column(1).iter());
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_WIDTH;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + (v - xmin) / (xmax - xmin) * plot_w;
    let sy = |v: f64| HEIGHT - MARGIN - (v - ymin) / (ymax - ymin) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN + plot_w / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{:.1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN}"/></g>"#,
        MARGIN + plot_w
    );
    let _ = writeln!(
        s,
        r#"<g font-family="sans-serif" font-size="10"><text x="{x0}" y="{:.1}">{xmin:.3}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{xmax:.3}</text><text x="{:.1}" y="{y0}" text-anchor="end">{ymin:.3}</text><text x="{:.1}" y="{:.1}" text-anchor="end">{ymax:.3}</text></g>"#,
        y0 + 14.0,
        MARGIN + plot_w,
        y0 + 14.0,
        x0 - 4.0,
        x0 - 4.0,
        MARGIN + 4.0
    );
    s.push_str("<g class=\"points\">\n");
    for (i, &l) in labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{RADIUS}" fill="{}" fill-opacity="0.8"/>"#,
            sx(y[(i, 0)]),
            sy(y[(i, 1)]),
            color(l)
        );
    }
    s.push_str("</g>\n<g class=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n");
    let lx = WIDTH - LEGEND_WIDTH - MARGIN / 2.0;
    for (k, &c) in classes.iter().enumerate() {
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{c}</text>"#,
            color(c),
            lx + 14.0,
            ly + 9.0
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

pub fn emit_scatter(y: &DMatrix<f64>, labels: &[usize], title: &str, path: &Path) -> CliResult<()> {
    let svg = scatter_svg(y, labels, title)?;
    cwmtsne::data::write_atomic(path, svg.as_bytes()).map_err(CliError::stage(Stage::Report))
}

fn range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
