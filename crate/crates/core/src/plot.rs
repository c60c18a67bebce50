//! Learning-curve charts as plain SVG.

use std::fmt::Write as _;

use crate::error::{DalError, Result};
use crate::metrics::CurvePoint;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<CurvePoint>,
}

/// Data-to-pixel mapping shared by every series of one chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Axes {
    fn fit(series: &[Series]) -> Self {
        let pts = series.iter().flat_map(|s| &s.points);
        let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in pts {
            x_min = x_min.min(p.fraction);
            x_max = x_max.max(p.fraction);
            y_min = y_min.min(p.mean - p.std);
            y_max = y_max.max(p.mean + p.std);
        }
        if x_max - x_min < 1e-12 {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if y_max - y_min < 1e-12 {
            y_min -= 0.5;
            y_max += 0.5;
        }
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x_min) / (self.x_max - self.x_min) * (WIDTH - LEFT - RIGHT)
    }

    pub fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Mean curve per series with a ±1 standard deviation band and a legend.
pub fn render_svg(series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(DalError::invalid("nothing to plot"));
    }
    let ax = Axes::fit(series);
    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(
        svg,
        r#"<g class="frame" fill="none" stroke="black"><rect x="{LEFT}" y="{TOP}" width="{}" height="{}"/></g>"#,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    )
    .unwrap();
    for i in 0..=4 {
        let fx = ax.x_min + (ax.x_max - ax.x_min) * i as f64 / 4.0;
        let fy = ax.y_min + (ax.y_max - ax.y_min) * i as f64 / 4.0;
        writeln!(svg, r#"<text class="tick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{fx:.3}</text>"#, ax.x(fx), HEIGHT - BOTTOM + 14.0).unwrap();
        writeln!(svg, r#"<text class="tick" x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{fy:.3}</text>"#, LEFT - 4.0, ax.y(fy) + 3.0).unwrap();
    }
    writeln!(svg, r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, HEIGHT - 10.0, escape(x_label)).unwrap();
    writeln!(
        svg,
        r#"<text class="y-label" x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let name = escape(&s.name);
        let upper = s.points.iter().map(|p| format!("{:.4},{:.4}", ax.x(p.fraction), ax.y(p.mean + p.std)));
        let lower = s.points.iter().rev().map(|p| format!("{:.4},{:.4}", ax.x(p.fraction), ax.y(p.mean - p.std)));
        let band: Vec<String> = upper.chain(lower).collect();
        writeln!(svg, r#"<polygon class="band" data-series="{name}" fill="{color}" fill-opacity="0.15" stroke="none" points="{}"/>"#, band.join(" ")).unwrap();
        let line: Vec<String> = s.points.iter().map(|p| format!("{:.4},{:.4}", ax.x(p.fraction), ax.y(p.mean))).collect();
        writeln!(svg, r#"<polyline class="mean" data-series="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, line.join(" ")).unwrap();
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        writeln!(svg, r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="12">{name}</text></g>"#, lx + 20.0, lx + 26.0, ly + 4.0).unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads back `(series, [(x, y)])` from the mean polylines of a chart.
pub fn parse_mean_polylines(svg: &str) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let attr = |tag: &str, key: &str| -> Option<String> {
        let start = tag.find(&format!(" {key}=\""))? + key.len() + 3;
        let end = tag[start..].find('"')? + start;
        Some(tag[start..end].to_owned())
    };
    let mut out = Vec::new();
    for tag in svg.split('<').filter(|t| t.starts_with("polyline") && t.contains("class=\"mean\"")) {
        let name = attr(tag, "data-series").ok_or_else(|| DalError::invalid("polyline without a series name"))?;
        let points = attr(tag, "points").ok_or_else(|| DalError::invalid("polyline without points"))?;
        let pts = points
            .split_whitespace()
            .map(|p| {
                let (x, y) = p.split_once(',').ok_or_else(|| DalError::invalid(format!("bad point `{p}`")))?;
                let parse = |v: &str| v.parse::<f64>().map_err(|_| DalError::invalid(format!("bad coordinate `{v}`")));
                Ok((parse(x)?, parse(y)?))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((name, pts));
    }
    Ok(out)
}

/// Legend labels in order.
pub fn legend_entries(svg: &str) -> Vec<String> {
    svg.split("<g class=\"legend\">")
        .skip(1)
        .filter_map(|g| {
            let start = g.find("font-size=\"12\">")? + "font-size=\"12\">".len();
            let end = g[start..].find("</text>")? + start;
            Some(g[start..end].to_owned())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(fraction: f64, mean: f64) -> CurvePoint {
        CurvePoint { fraction, mean, std: 0.0 }
    }

    #[test]
    fn flat_series_is_horizontal() {
        let s = Series { name: "flat".into(), points: vec![pt(0.1, 0.7), pt(0.2, 0.7), pt(0.3, 0.7)] };
        let svg = render_svg(&[s], "fraction", "metric").unwrap();
        let lines = parse_mean_polylines(&svg).unwrap();
        let ys: Vec<f64> = lines[0].1.iter().map(|p| p.1).collect();
        assert!(ys.iter().all(|&y| y == ys[0]));
    }

    #[test]
    fn coordinates_are_affine_in_the_data() {
        let a = Series { name: "random".into(), points: vec![pt(0.02, 0.5), pt(0.04, 0.6), pt(0.06, 0.65)] };
        let b = Series { name: "lc".into(), points: vec![pt(0.02, 0.5), pt(0.04, 0.7), pt(0.06, 0.8)] };
        let svg = render_svg(&[a.clone(), b.clone()], "fraction", "metric").unwrap();
        assert_eq!(legend_entries(&svg), ["random", "lc"]);
        let lines = parse_mean_polylines(&svg).unwrap();
        let data: Vec<(f64, f64)> = a.points.iter().chain(&b.points).map(|p| (p.fraction, p.mean)).collect();
        let px: Vec<(f64, f64)> = lines.iter().flat_map(|l| l.1.iter().copied()).collect();
        let sx = (px[1].0 - px[0].0) / (data[1].0 - data[0].0);
        let sy = (px[1].1 - px[0].1) / (data[1].1 - data[0].1);
        for (d, p) in data.iter().zip(&px) {
            assert!((px[0].0 + sx * (d.0 - data[0].0) - p.0).abs() < 1e-3);
            assert!((px[0].1 + sy * (d.1 - data[0].1) - p.1).abs() < 1e-3);
        }
        assert!(sy < 0.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(render_svg(&[], "x", "y").is_err());
    }
}
