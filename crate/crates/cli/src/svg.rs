//! Minimal SVG charts: a reliability diagram and line plots.

use std::fmt::Write;

use caopd_core::CalibrationReport;

const W: f64 = 420.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;

fn frame(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD, PAD);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn sx(v: f64) -> f64 {
    PAD + v * (W - 2.0 * PAD)
}

fn sy(v: f64) -> f64 {
    H - PAD - v * (H - 2.0 * PAD)
}

fn ticks(s: &mut String, xlabel: &str, ylabel: &str, x_range: (f64, f64), y_range: (f64, f64)) {
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_range.0 + f * (x_range.1 - x_range.0);
        let yv = y_range.0 + f * (y_range.1 - y_range.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(f), H - PAD + 16.0, fmt_tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 6.0, sy(f) + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel));
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Accuracy per confidence bin against the ideal diagonal.
pub fn reliability(report: &CalibrationReport, title: &str) -> String {
    let mut s = frame(title);
    ticks(&mut s, "confidence", "accuracy", (0.0, 1.0), (0.0, 1.0));
    for b in &report.bins {
        if let Some(acc) = b.acc {
            let x = sx(b.lower);
            let w = sx(b.upper) - x;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"/>"#,
                x,
                sy(acc),
                w,
                sy(0.0) - sy(acc)
            );
        }
    }
    let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#, sx(0.0), sy(0.0), sx(1.0), sy(1.0));
    let _ = writeln!(s, r#"<text x="{}" y="44" text-anchor="end">ECE {:.3}  OCG {:+.3}</text>"#, W - PAD, report.ece, report.ocg);
    s.push_str("</svg>\n");
    s
}

const COLORS: [&str; 6] = ["steelblue", "darkorange", "seagreen", "crimson", "purple", "gray"];

/// Several named series sharing axes.
pub fn lines(series: &[(String, Vec<(f64, f64)>)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let pts = series.iter().flat_map(|(_, v)| v.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    if ymax <= ymin {
        ymax = ymin + 1.0;
    }
    let mut s = frame(title);
    ticks(&mut s, xlabel, ylabel, (xmin, xmax), (ymin, ymax));
    for (i, (name, v)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = v
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx((x - xmin) / (xmax - xmin)), sy((y - ymin) / (ymax - ymin))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, PAD + 8.0, PAD + 14.0 * (i as f64 + 1.0), escape(name));
    }
    s.push_str("</svg>\n");
    s
}
