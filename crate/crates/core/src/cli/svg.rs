//! Minimal SVG bar charts and heat maps.

use std::fmt::Write;

use nalgebra::DMatrix;

const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

pub struct BarSeries {
    pub name: String,
    pub values: Vec<f64>,
    /// Half-length of each error bar.
    pub errors: Vec<f64>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

/// Grouped bars with error bars; `chance` draws a dashed line per group.
pub fn bar_chart(title: &str, groups: &[String], series: &[BarSeries], chance: Option<&[f64]>) -> String {
    let (w, h, left, top, bottom) = (80.0 + 70.0 * groups.len() as f64, 320.0, 50.0, 30.0, 40.0);
    let plot_h = h - top - bottom;
    let mut hi = 0.0f64;
    let mut lo = 0.0f64;
    for s in series {
        for (v, e) in s.values.iter().zip(&s.errors) {
            hi = hi.max(finite_or_zero(v + e));
            lo = lo.min(finite_or_zero(v - e));
        }
    }
    for c in chance.unwrap_or(&[]) {
        hi = hi.max(finite_or_zero(*c));
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let y = |v: f64| top + plot_h * (hi - finite_or_zero(v)) / (hi - lo);
    let group_w = 70.0;
    let bar_w = (group_w - 14.0) / series.len().max(1) as f64;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<text x="{left}" y="18" font-size="13">{}</text>"#, esc(title));
    let _ = writeln!(
        out,
        r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        y(0.0),
        w - 20.0,
        y(0.0)
    );
    for (tick, label) in [(hi, hi), (lo, lo)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label:.2}</text>"#,
            left - 4.0,
            y(tick) + 4.0
        );
    }
    for (g, name) in groups.iter().enumerate() {
        let x0 = left + 7.0 + g as f64 * group_w;
        for (k, s) in series.iter().enumerate() {
            let v = finite_or_zero(s.values[g]);
            let e = finite_or_zero(s.errors[g]);
            let x = x0 + k as f64 * bar_w;
            let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                bar_w - 2.0,
                y1 - y0,
                PALETTE[k % PALETTE.len()]
            );
            let cx = x + (bar_w - 2.0) / 2.0;
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(v + e),
                y(v - e)
            );
        }
        if let Some(c) = chance.and_then(|c| c.get(g)).filter(|c| c.is_finite()) {
            let _ = writeln!(
                out,
                r#"<line x1="{x0:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4,3"/>"#,
                y(*c),
                x0 + group_w - 14.0,
                y(*c)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + (group_w - 14.0) / 2.0,
            h - bottom + 16.0,
            esc(name)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let x = left + 10.0 + k as f64 * 60.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            h - 14.0,
            PALETTE[k % PALETTE.len()],
            x + 14.0,
            h - 5.0,
            esc(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Gray-scale cells for values in `[0, 1]`, one row per feature.
pub fn heat_map(title: &str, rows: &[String], cols: &[String], m: &DMatrix<f64>) -> String {
    let (cell, left, top) = (28.0, 70.0, 40.0);
    let w = left + cell * cols.len() as f64 + 20.0;
    let h = top + cell * rows.len() as f64 + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<text x="10" y="18" font-size="13">{}</text>"#, esc(title));
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            left + cell * (j as f64 + 0.5),
            top - 6.0,
            esc(c)
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let yy = top + cell * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            yy + cell * 0.65,
            esc(r)
        );
        for j in 0..cols.len() {
            let v = finite_or_zero(m[(i, j)]).clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{yy:.2}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},{shade})"/>"#,
                left + cell * j as f64
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar_chart_draws_every_bar_and_chance_line() {
        let s = bar_chart(
            "t<1>",
            &["a".into(), "b".into()],
            &[
                BarSeries {
                    name: "A".into(),
                    values: vec![0.5, -0.1],
                    errors: vec![0.05, 0.02],
                },
                BarSeries {
                    name: "P".into(),
                    values: vec![0.3, f64::NAN],
                    errors: vec![0.01, f64::NAN],
                },
            ],
            Some(&[0.1, 0.1]),
        );
        assert!(s.starts_with("<svg"));
        assert!(s.contains("t&lt;1&gt;"));
        assert_eq!(s.matches("stroke-dasharray").count(), 2);
        assert_eq!(s.matches("<rect").count(), 4 + 2);
    }

    #[test]
    fn heat_map_shades_by_value() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let s = heat_map("w", &["f".into()], &["c1".into(), "c2".into()], &m);
        assert!(s.contains("rgb(0,0,0)"));
        assert!(s.contains("rgb(255,255,255)"));
    }
}
