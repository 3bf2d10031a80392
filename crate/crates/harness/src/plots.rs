//! Standalone SVG charts written as plain text. Output depends only on the
//! input values, so repeated runs give byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn plot_height() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn plot_width() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn y_axis(out: &mut String, y_label: &str, y_max: f64) {
    let base = TOP + plot_height();
    let _ = writeln!(out, r##"<line x1="{LEFT:.1}" y1="{TOP:.1}" x2="{LEFT:.1}" y2="{base:.1}" stroke="#333333"/>"##);
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="#333333"/>"##,
        LEFT + plot_width()
    );
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        let y = base - plot_height() * k as f64 / 5.0;
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT:.1}" y2="{y:.1}" stroke="#333333"/><text class="ytick" x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            LEFT - 4.0,
            LEFT - 7.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + plot_height() / 2.0,
        TOP + plot_height() / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, labels: &[String]) {
    let x = LEFT + plot_width() + 16.0;
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            color(i),
            x + 18.0,
            y + 10.0,
            escape(l)
        );
    }
}

fn scale_y(v: f64, y_max: f64) -> f64 {
    let frac = if y_max > 0.0 { (v / y_max).clamp(0.0, 1.0) } else { 0.0 };
    TOP + plot_height() * (1.0 - frac)
}

/// One cluster of bars, one bar per series. `None` draws nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

pub fn grouped_bar_chart(title: &str, y_label: &str, y_max: f64, series: &[String], groups: &[BarGroup]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    y_axis(&mut out, y_label, y_max);
    let n_groups = groups.len().max(1) as f64;
    let group_w = plot_width() / n_groups;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let base = TOP + plot_height();
    for (g, group) in groups.iter().enumerate() {
        let gx = LEFT + group_w * g as f64 + group_w * 0.1;
        for (s, v) in group.values.iter().enumerate() {
            if let Some(v) = v {
                let y = scale_y(*v, y_max);
                let _ = writeln!(
                    out,
                    r#"<rect class="bar" x="{:.1}" y="{y:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"><title>{} / {}: {v:.4}</title></rect>"#,
                    gx + bar_w * s as f64,
                    base - y,
                    color(s),
                    escape(&group.label),
                    escape(series.get(s).map_or("", String::as_str))
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text class="xtick" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + group_w * (g as f64 + 0.5),
            base + 18.0,
            escape(&group.label)
        );
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// One value per x tick; `None` leaves a gap.
    pub values: Vec<Option<f64>>,
}

/// Lines over evenly spaced categorical x ticks.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, y_max: f64, x_ticks: &[f64], series: &[Series]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    y_axis(&mut out, y_label, y_max);
    let base = TOP + plot_height();
    let step = plot_width() / x_ticks.len().max(1) as f64;
    let x_at = |i: usize| LEFT + step * (i as f64 + 0.5);
    for (i, t) in x_ticks.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text class="xtick" x="{:.1}" y="{:.1}" text-anchor="middle">{t:.2}</text>"#,
            x_at(i),
            base + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_width() / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    for (s, line) in series.iter().enumerate() {
        let points: Vec<(f64, f64)> =
            line.values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (x_at(i), scale_y(v, y_max)))).collect();
        if points.len() > 1 {
            let path: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            let _ = writeln!(
                out,
                r#"<polyline class="series" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
                color(s),
                path.join(" ")
            );
        }
        for (x, y) in &points {
            let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{}"/>"#, color(s));
        }
    }
    let labels: Vec<String> = series.iter().map(|s| s.label.clone()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Diverging blue-white-red fill for values in [-1, 1]; grey when undefined.
fn heat(v: Option<f64>) -> String {
    let Some(v) = v else { return "#cccccc".to_string() };
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

pub fn heatmap(title: &str, labels: &[String], cells: &[Vec<Option<f64>>]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let n = labels.len().max(1) as f64;
    let left = 130.0;
    let top = TOP + 10.0;
    let size = ((HEIGHT - top - 90.0) / n).min((WIDTH - left - 40.0) / n);
    for (i, row) in cells.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let x = left + size * j as f64;
            let y = top + size * i as f64;
            let text = v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                out,
                r##"<rect class="cell" x="{x:.1}" y="{y:.1}" width="{size:.1}" height="{size:.1}" fill="{}" stroke="#ffffff"/><text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{text}</text>"##,
                heat(*v),
                x + size / 2.0,
                y + size / 2.0 + 4.0
            );
        }
    }
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            top + size * (i as f64 + 0.5) + 4.0,
            escape(l)
        );
        let x = left + size * (i as f64 + 0.5);
        let y = top + size * n + 10.0;
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="end" transform="rotate(-45 {x:.1} {y:.1})">{}</text>"#,
            escape(l)
        );
    }
    out.push_str("</svg>\n");
    out
}
