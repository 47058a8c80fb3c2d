//! Minimal standalone SVG charts: line/scatter plots and histograms.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: &[&str] = &["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
    /// Palette slot; series sharing a slot share a colour.
    pub color: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Vertical markers with labels.
    pub markers: Vec<(f64, String)>,
    /// Histogram bars as `(left, right, height)`.
    pub bars: Vec<(f64, f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt(x: f64) -> String {
    format!("{x:.2}")
}

fn tick_label(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e4 || x.abs() < 1e-2) {
        format!("{x:.1e}")
    } else {
        format!("{:.3}", x).trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Chart {
    fn y_value(&self, y: f64) -> Option<f64> {
        if self.log_y {
            (y > 0.0).then(|| y.log10())
        } else {
            y.is_finite().then_some(y)
        }
    }

    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if let (true, Some(y)) = (x.is_finite(), self.y_value(y)) {
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
        for &(l, r, h) in &self.bars {
            xs.extend([l, r]);
            ys.push(0.0);
            ys.extend(self.y_value(h));
        }
        for (x, _) in &self.markers {
            xs.push(*x);
        }
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if xs.is_empty() || ys.is_empty() {
            return None;
        }
        let (mut x0, mut x1, mut y0, mut y1) = (min(&xs), max(&xs), min(&ys), max(&ys));
        if x1 <= x0 {
            x1 = x0 + 1.0;
            x0 -= 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
            y0 -= 1.0;
        }
        let pad = 0.04 * (y1 - y0);
        Some((x0, x1, y0 - pad, y1 + pad))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        )
        .unwrap();
        let Some((x0, x1, y0, y1)) = self.bounds() else {
            out.push_str("</svg>\n");
            return out;
        };
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
        writeln!(out, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##)
            .unwrap();
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let ylab = if self.log_y { format!("1e{:.1}", fy) } else { tick_label(fy) };
            writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                fmt(sx(fx)),
                fmt(TOP + ph + 16.0),
                tick_label(fx)
            )
            .unwrap();
            writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                fmt(LEFT - 6.0),
                fmt(sy(fy) + 4.0),
                ylab
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();
        for &(l, r, h) in &self.bars {
            if let Some(hy) = self.y_value(h) {
                let top = sy(hy);
                let base = sy(y0.max(0.0));
                writeln!(
                    out,
                    r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#9ecae1" stroke="#6baed6"/>"##,
                    fmt(sx(l)),
                    fmt(top),
                    fmt((sx(r) - sx(l)).max(0.5)),
                    fmt((base - top).max(0.0))
                )
                .unwrap();
            }
        }
        for (x, label) in &self.markers {
            writeln!(
                out,
                r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#999" stroke-dasharray="2,3"/><text x="{0}" y="{3}" text-anchor="middle" fill="#555">{4}</text>"##,
                fmt(sx(*x)),
                fmt(TOP),
                fmt(TOP + ph),
                fmt(TOP - 4.0),
                escape(label)
            )
            .unwrap();
        }
        for s in &self.series {
            let color = PALETTE[s.color % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter_map(|&(x, y)| Some((sx(x), sy(self.y_value(y)?))))
                .filter(|(x, _)| x.is_finite())
                .collect();
            match s.style {
                Style::Points => {
                    for (x, y) in &pts {
                        writeln!(out, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, fmt(*x), fmt(*y)).unwrap();
                    }
                }
                Style::Line | Style::Dashed => {
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", fmt(*x), fmt(*y))).collect();
                    let dash = if s.style == Style::Dashed { r#" stroke-dasharray="6,4""# } else { "" };
                    writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                        path.join(" ")
                    )
                    .unwrap();
                }
            }
        }
        let mut legend_y = TOP + 14.0;
        let mut seen = Vec::new();
        for s in &self.series {
            if seen.contains(&s.name) {
                continue;
            }
            seen.push(s.name.clone());
            let color = PALETTE[s.color % PALETTE.len()];
            writeln!(
                out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                fmt(WIDTH - RIGHT - 150.0),
                fmt(legend_y - 9.0),
                fmt(WIDTH - RIGHT - 136.0),
                fmt(legend_y),
                escape(&s.name)
            )
            .unwrap();
            legend_y += 15.0;
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_bars_and_markers() {
        let chart = Chart {
            title: "a < b".into(),
            series: vec![Series {
                name: "s".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
                style: Style::Line,
                color: 0,
            }],
            bars: vec![(0.0, 0.5, 3.0)],
            markers: vec![(0.5, "τ1".into())],
            ..Chart::default()
        };
        let svg = chart.render();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline") && svg.contains("<rect x=") && svg.contains("τ1") && svg.contains("a &lt; b"));
        assert_eq!(svg, chart.render());
    }
}
