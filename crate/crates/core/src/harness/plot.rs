//! A minimal SVG line chart of the median convergence curves.

use std::fmt::Write;

use super::experiment::Curve;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Median `‖θ̄_t − θ*‖` against `t`, one polyline per `(n, m)`, log-scaled y.
pub fn svg(curves: &[Curve]) -> String {
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut t_lo, mut t_hi, mut y_lo, mut y_hi) = (usize::MAX, 0, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts.clone() {
        t_lo = t_lo.min(p.0);
        t_hi = t_hi.max(p.0);
        if p.1 > 0.0 {
            y_lo = y_lo.min(p.1.log10());
            y_hi = y_hi.max(p.1.log10());
        }
    }
    if t_lo >= t_hi || !y_lo.is_finite() {
        return empty();
    }
    let (y_lo, y_hi) = (y_lo.floor(), y_hi.ceil().max(y_lo.floor() + 1.0));
    let x = |t: usize| MARGIN + (t - t_lo) as f64 / (t_hi - t_lo) as f64 * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v.max(1e-300).log10() - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, yb, yt) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0},{yt} L{x0},{yb} L{x1},{yb}" stroke="black" fill="none"/>"#);
    for k in (y_lo as i32)..=(y_hi as i32) {
        let yy = y(10f64.powi(k));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1e{k}</text>"#, x0 - 6.0, yy + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{x0}" y="{}">{t_lo}</text>"#, yb + 18.0);
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{t_hi}</text>"#, yb + 18.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, WIDTH / 2.0, HEIGHT - 20.0);
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = c.points.iter().map(|p| format!("{:.1},{:.1}", x(p.0), y(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, path.join(" "));
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">n={} m={}</text>"#,
            WIDTH - MARGIN,
            c.n,
            c.m
        );
    }
    s.push_str("</svg>\n");
    s
}

fn empty() -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}"></svg>"#) + "\n"
}
