//! SVG figures.
//!
//! Output is a pure function of the input: numbers are printed with fixed
//! precision and elements are emitted in a fixed order, so identical maps
//! give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::metrics::{accuracy_curve, CurvePoint};
use crate::probe::DecisionMap;

use super::runner::{RunRecord, RunStatus};

/// Class colours, in class order. Classes past the end wrap around.
pub const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

const LINE_COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

pub fn class_color(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapStyle {
    /// Side length of one grid cell in pixels.
    pub cell_px: f64,
    pub show_context: bool,
    /// Title text; the map's accuracy is appended when present.
    pub title: Option<String>,
}

impl Default for MapStyle {
    fn default() -> Self {
        MapStyle {
            cell_px: 8.0,
            show_context: true,
            title: None,
        }
    }
}

const TOP: f64 = 36.0;
const LEFT: f64 = 12.0;
const LEGEND_W: f64 = 140.0;

/// Draws the map as one `<rect class="cell">` per grid cell, row `j = 0`
/// at the bottom.
pub fn render_map_svg(map: &DecisionMap, style: &MapStyle) -> String {
    let g = map.g();
    let c = style.cell_px;
    let side = g as f64 * c;
    let width = LEFT + side + LEGEND_W;
    let height = TOP + side + 12.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    s.push_str(concat!(
        r#"<defs><pattern id="hatch" width="4" height="4" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">"#,
        r##"<rect width="4" height="4" fill="#ffffff"/><line x1="0" y1="0" x2="0" y2="4" stroke="#555555" stroke-width="1.5"/></pattern></defs>"##,
        "\n"
    ));

    let mut title = style.title.clone().unwrap_or_else(|| map.backend_name.clone());
    if let Some(acc) = map.accuracy {
        if !title.is_empty() {
            title.push_str(", ");
        }
        let _ = write!(title, "accuracy {acc:.3}");
    }
    let _ = writeln!(
        s,
        r#"<text x="{LEFT:.1}" y="22.0" font-family="sans-serif" font-size="14">{}</text>"#,
        esc(&title)
    );

    s.push_str("<g shape-rendering=\"crispEdges\">\n");
    for (idx, cell) in map.cells.iter().enumerate() {
        let (i, j) = map.grid.cell(idx);
        let x = LEFT + i as f64 * c;
        let y = TOP + (g - 1 - j) as f64 * c;
        let fill = match cell.label {
            Some(l) => class_color(l).to_string(),
            None => "url(#hatch)".to_string(),
        };
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{x:.2}" y="{y:.2}" width="{c:.2}" height="{c:.2}" fill="{fill}"/>"#
        );
    }
    s.push_str("</g>\n");

    if style.show_context && !map.context.is_empty() {
        s.push_str("<g class=\"context\">\n");
        for ex in &map.context {
            let fi = (ex.x[0] - map.grid.x_min[0]) / map.grid.dx[0];
            let fj = (ex.x[1] - map.grid.x_min[1]) / map.grid.dx[1];
            let cx = LEFT + (fi + 0.5) * c;
            let cy = TOP + (g as f64 - 0.5 - fj) * c;
            let _ = writeln!(
                s,
                r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="{}" stroke="#000000" stroke-width="1"/>"##,
                (c * 0.45).max(2.5),
                class_color(ex.y)
            );
        }
        s.push_str("</g>\n");
    }

    let lx = LEFT + side + 14.0;
    s.push_str("<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let mut row = 0;
    for k in 0..map.num_classes {
        let name = map.label_names.get(k).cloned().unwrap_or_else(|| format!("class {k}"));
        let y = TOP + row as f64 * 20.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            class_color(k),
            lx + 18.0,
            y + 10.0,
            esc(&name)
        );
        row += 1;
    }
    if map.abstain_count() > 0 {
        let y = TOP + row as f64 * 20.0;
        let _ = writeln!(
            s,
            r##"<rect x="{lx:.1}" y="{y:.1}" width="12" height="12" fill="url(#hatch)" stroke="#555555"/><text x="{:.1}" y="{:.1}">abstain ({})</text>"##,
            lx + 18.0,
            y + 10.0,
            map.abstain_count()
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// One line of an accuracy figure.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub name: String,
    pub points: Vec<CurvePoint>,
}

/// Groups usable records by backend name and averages over everything
/// else (seeds, tasks, prompt variants) at each context size.
pub fn curves_from_records(records: &[RunRecord]) -> Vec<CurveSeries> {
    let mut by_backend: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        if r.status == RunStatus::Failed {
            continue;
        }
        if let Some(acc) = r.accuracy {
            by_backend.entry(r.backend.name.clone()).or_default().push((r.n_context, acc));
        }
    }
    by_backend
        .into_iter()
        .map(|(name, obs)| CurveSeries {
            name,
            points: accuracy_curve(&obs),
        })
        .collect()
}

/// `series,n_context,mean,se,n_seeds`, empty `se` when absent.
pub fn curves_csv(series: &[CurveSeries]) -> String {
    let mut out = String::from("series,n_context,mean,se,n_seeds\n");
    for s in series {
        for p in &s.points {
            let se = p.standard_error.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", s.name, p.n_context, p.mean_accuracy, se, p.n_seeds);
        }
    }
    out
}

/// Accuracy against context size (log2 axis), one line per series with a
/// shaded ±SE band where standard errors exist.
pub fn render_curves_svg(series: &[CurveSeries], title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (l, r, t, b) = (60.0, 170.0, 40.0, 50.0);
    let pw = w - l - r;
    let ph = h - t - b;
    let ns: Vec<usize> = series.iter().flat_map(|s| s.points.iter().map(|p| p.n_context)).collect();
    let lo = ns.iter().copied().min().unwrap_or(1).max(1) as f64;
    let hi = ns.iter().copied().max().unwrap_or(2).max(1) as f64;
    let (lx0, lx1) = (lo.log2(), if hi > lo { hi.log2() } else { lo.log2() + 1.0 });
    let px = |n: usize| l + ((n.max(1) as f64).log2() - lx0) / (lx1 - lx0) * pw;
    let py = |a: f64| t + (1.0 - a.clamp(0.0, 1.0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<text x="{l:.1}" y="24.0" font-size="14">{}</text>"#, esc(title));
    let _ = writeln!(
        s,
        r##"<rect x="{l:.1}" y="{t:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#000000"/>"##
    );
    for tick in 0..=5 {
        let a = tick as f64 / 5.0;
        let y = py(a);
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{l:.1}" y2="{y:.1}" stroke="#000000"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{a:.1}</text>"##,
            l - 4.0,
            l - 6.0,
            y + 4.0
        );
    }
    let mut xticks: Vec<usize> = ns.clone();
    xticks.sort_unstable();
    xticks.dedup();
    for n in &xticks {
        let x = px(*n);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#000000"/><text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{n}</text>"##,
            t + ph,
            t + ph + 4.0,
            t + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">in-context examples</text>"#,
        l + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14.0" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14.0 {:.1})">test accuracy</text>"#,
        t + ph / 2.0,
        t + ph / 2.0
    );

    for (k, series) in series.iter().enumerate() {
        let color = LINE_COLORS[k % LINE_COLORS.len()];
        let pts = &series.points;
        if pts.iter().any(|p| p.standard_error.is_some()) {
            let upper = pts.iter().map(|p| (px(p.n_context), py(p.mean_accuracy + p.standard_error.unwrap_or(0.0))));
            let lower = pts
                .iter()
                .rev()
                .map(|p| (px(p.n_context), py(p.mean_accuracy - p.standard_error.unwrap_or(0.0))));
            let poly: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                s,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                poly.join(" ")
            );
        }
        let line: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.n_context), py(p.mean_accuracy)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="line" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for p in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(p.n_context),
                py(p.mean_accuracy)
            );
        }
        let ly = t + 10.0 + k as f64 * 20.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text></g>"#,
            w - r + 12.0,
            w - r + 36.0,
            w - r + 42.0,
            ly + 4.0,
            esc(&series.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
