//! Static SVG rendering: curve plots with envelope bands, and point maps
//! with significance coloring (green = association, red = repulsion,
//! grey = not significant).

use std::path::Path;

use crate::error::{AppError, AppResult};
use crate::output::{MapPoint, PlotCurve, PlotData};

const CURVE_WIDTH: f64 = 640.0;
const CURVE_HEIGHT: f64 = 420.0;
const MAP_SIZE: f64 = 520.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 48.0;

const COLOR_BAND: &str = "#c6dbef";
const COLOR_CURVE: &str = "#1a1a1a";
const COLOR_POSITIVE: &str = "#2ca25f";
const COLOR_NEGATIVE: &str = "#de2d26";
const COLOR_NONE: &str = "#bbbbbb";

fn fmt(v: f64) -> String {
    format!("{:.2}", v)
}

fn finite(values: &[Option<f64>]) -> impl Iterator<Item = f64> + '_ {
    values.iter().filter_map(|v| *v)
}

/// A curve plot: one envelope band polygon plus one observed polyline per
/// contiguous unmasked segment.
pub fn curve_svg(r: &[f64], curve: &PlotCurve, run_id: &str) -> String {
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for v in finite(&curve.observed)
        .chain(finite(&curve.lower))
        .chain(finite(&curve.upper))
    {
        y_min = y_min.min(v);
        y_max = y_max.max(v);
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    let x_min = r.first().copied().unwrap_or(0.0);
    let x_max = r.last().copied().unwrap_or(1.0);

    let plot_w = CURVE_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = CURVE_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CURVE_WIDTH}\" height=\"{CURVE_HEIGHT}\" \
         viewBox=\"0 0 {CURVE_WIDTH} {CURVE_HEIGHT}\">\n"
    ));
    svg.push_str(&format!("<!-- run_id: {run_id} -->\n"));
    svg.push_str(&format!(
        "<title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        xml_escape(&curve.label)
    ));

    // envelope band per contiguous segment with both bounds present
    let mut segment: Vec<usize> = Vec::new();
    let flush_band = |svg: &mut String, segment: &mut Vec<usize>| {
        if segment.len() >= 2 {
            let mut points = String::new();
            for &t in segment.iter() {
                points.push_str(&format!(
                    "{},{} ",
                    fmt(sx(r[t])),
                    fmt(sy(curve.upper[t].unwrap()))
                ));
            }
            for &t in segment.iter().rev() {
                points.push_str(&format!(
                    "{},{} ",
                    fmt(sx(r[t])),
                    fmt(sy(curve.lower[t].unwrap()))
                ));
            }
            svg.push_str(&format!(
                "<polygon class=\"band\" fill=\"{COLOR_BAND}\" stroke=\"none\" points=\"{}\"/>\n",
                points.trim_end()
            ));
        }
        segment.clear();
    };
    for t in 0..r.len() {
        if curve.lower[t].is_some() && curve.upper[t].is_some() {
            segment.push(t);
        } else {
            flush_band(&mut svg, &mut segment);
        }
    }
    flush_band(&mut svg, &mut segment);

    // observed polyline per contiguous segment
    let mut points = String::new();
    let flush_curve = |svg: &mut String, points: &mut String| {
        if points.matches(' ').count() >= 1 {
            svg.push_str(&format!(
                "<polyline class=\"curve\" fill=\"none\" stroke=\"{COLOR_CURVE}\" \
                 stroke-width=\"1.6\" points=\"{}\"/>\n",
                points.trim_end()
            ));
        }
        points.clear();
    };
    for t in 0..r.len() {
        match curve.observed[t] {
            Some(v) => points.push_str(&format!("{},{} ", fmt(sx(r[t])), fmt(sy(v)))),
            None => flush_curve(&mut svg, &mut points),
        }
    }
    flush_curve(&mut svg, &mut points);

    // axes with ticks
    svg.push_str(&format!(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(CURVE_HEIGHT - MARGIN_BOTTOM),
        fmt(CURVE_WIDTH - MARGIN_RIGHT)
    ));
    svg.push_str(&format!(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP),
        fmt(CURVE_HEIGHT - MARGIN_BOTTOM)
    ));
    for tick in 0..=4 {
        let fx = x_min + (x_max - x_min) * tick as f64 / 4.0;
        let px = sx(fx);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n\
             <text x=\"{0}\" y=\"{3}\" font-size=\"11\" text-anchor=\"middle\">{4}</text>\n",
            fmt(px),
            fmt(CURVE_HEIGHT - MARGIN_BOTTOM),
            fmt(CURVE_HEIGHT - MARGIN_BOTTOM + 5.0),
            fmt(CURVE_HEIGHT - MARGIN_BOTTOM + 18.0),
            fmt(fx)
        ));
        let fy = y_min + (y_max - y_min) * tick as f64 / 4.0;
        let py = sy(fy);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n\
             <text x=\"{3}\" y=\"{4}\" font-size=\"11\" text-anchor=\"end\">{5}</text>\n",
            fmt(MARGIN_LEFT - 5.0),
            fmt(py),
            fmt(MARGIN_LEFT),
            fmt(MARGIN_LEFT - 8.0),
            fmt(py + 4.0),
            fmt(fy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        fmt(CURVE_WIDTH / 2.0),
        fmt(MARGIN_TOP - 14.0),
        xml_escape(&curve.label)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">r</text>\n",
        fmt(CURVE_WIDTH / 2.0),
        fmt(CURVE_HEIGHT - 10.0)
    ));
    svg.push_str("</svg>\n");
    svg
}

/// A point map colored by significance class.
pub fn point_map_svg(window: [f64; 4], label: &str, points: &[MapPoint], run_id: &str) -> String {
    let [x_min, x_max, y_min, y_max] = window;
    let margin = 28.0;
    let span = (x_max - x_min).max(y_max - y_min).max(1e-12);
    let scale = (MAP_SIZE - 2.0 * margin) / span;
    let sx = |x: f64| margin + (x - x_min) * scale;
    // y grows upward in data space, downward in svg space
    let sy = |y: f64| MAP_SIZE - margin - (y - y_min) * scale;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{MAP_SIZE}\" height=\"{MAP_SIZE}\" \
         viewBox=\"0 0 {MAP_SIZE} {MAP_SIZE}\">\n"
    ));
    svg.push_str(&format!("<!-- run_id: {run_id} -->\n"));
    svg.push_str(&format!(
        "<title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        xml_escape(label)
    ));
    svg.push_str(&format!(
        "<rect x=\"{0}\" y=\"{1}\" width=\"{2}\" height=\"{3}\" fill=\"none\" stroke=\"#666\"/>\n",
        fmt(sx(x_min)),
        fmt(sy(y_max)),
        fmt((x_max - x_min) * scale),
        fmt((y_max - y_min) * scale)
    ));
    for point in points {
        let color = match point.class.as_str() {
            "positive" => COLOR_POSITIVE,
            "negative" => COLOR_NEGATIVE,
            _ => COLOR_NONE,
        };
        let title = match point.p {
            Some(p) => format!("{} (p = {p})", point.id, p = p),
            None => format!("{} (skipped)", point.id),
        };
        svg.push_str(&format!(
            "<circle class=\"pt\" cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{color}\" \
             fill-opacity=\"0.85\"><title>{}</title></circle>\n",
            fmt(sx(point.x)),
            fmt(sy(point.y)),
            xml_escape(&title)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        fmt(MAP_SIZE / 2.0),
        xml_escape(label)
    ));
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Render every series of a plot-data file into `dir`. Missing series are
/// skipped with a warning; the function never fails a run over plots.
pub fn emit_plots(data: &PlotData, dir: &Path) -> AppResult<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::Numeric(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    if data.curves.is_empty() && data.maps.is_empty() {
        eprintln!("warning: no plottable series found; nothing to do");
        return Ok(written);
    }
    for curve in &data.curves {
        if curve.observed.iter().all(|v| v.is_none()) {
            eprintln!("warning: skipping empty curve series '{}'", curve.label);
            continue;
        }
        let path = dir.join(format!("curve_{}.svg", sanitize(&curve.label)));
        std::fs::write(&path, curve_svg(&data.r, curve, &data.run_id))
            .map_err(|e| AppError::Numeric(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    for map in &data.maps {
        if map.points.is_empty() {
            eprintln!("warning: skipping empty map series '{}'", map.label);
            continue;
        }
        let path = dir.join(format!("map_{}.svg", sanitize(&map.label)));
        std::fs::write(&path, point_map_svg(data.window, &map.label, &map.points, &data.run_id))
            .map_err(|e| AppError::Numeric(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
