use std::fmt::Write;

use rocp_core::eval::AblationRow;

#[derive(Clone, Copy)]
pub enum Metric {
    Accuracy,
    Ineff,
}

impl Metric {
    fn of(self, r: &AblationRow) -> f64 {
        match self {
            Metric::Accuracy => r.accuracy,
            Metric::Ineff => r.ineff,
        }
    }
}

const COLORS: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart: one group per model, one bar per (calib_frac, λ), each
/// bar the mean over seeds.
pub fn grouped_bars(
    rows: &[AblationRow],
    models: &[String],
    calib_fracs: &[f64],
    lambdas: &[f64],
    metric: Metric,
    title: &str,
) -> String {
    let mut series = Vec::new();
    for &lambda in lambdas {
        for &frac in calib_fracs {
            series.push((frac, lambda));
        }
    }
    let value = |model: &str, frac: f64, lambda: f64| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.model == model && r.calib_frac == frac && r.lambda == lambda)
            .map(|r| metric.of(r))
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let max = models
        .iter()
        .flat_map(|m| series.iter().map(move |&(f, l)| (m, f, l)))
        .map(|(m, f, l)| value(m, f, l))
        .fold(0.0_f64, f64::max)
        .max(1e-12);

    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let group_w = plot_w / models.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{max:.3}</text>"#,
        MARGIN - 4.0,
        MARGIN + 4.0
    );
    for (gi, model) in models.iter().enumerate() {
        let gx = MARGIN + gi as f64 * group_w + group_w * 0.1;
        let _ = writeln!(s, r#"<g id="{}">"#, escape(model));
        for (si, &(frac, lambda)) in series.iter().enumerate() {
            let v = value(model, frac, lambda);
            let h = plot_h * v / max;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>calib_frac={frac} lambda={lambda}: {v:.4}</title></rect>"#,
                gx + si as f64 * bar_w,
                base - h,
                bar_w * 0.9,
                h,
                COLORS[si % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            MARGIN + (gi as f64 + 0.5) * group_w,
            base + 18.0,
            escape(model)
        );
        let _ = writeln!(s, "</g>");
    }
    for (si, &(frac, lambda)) in series.iter().enumerate() {
        let y = MARGIN + 12.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="8" height="8" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="10">calib_frac={frac} lambda={lambda}</text>"#,
            WIDTH - MARGIN - 120.0,
            y - 8.0,
            COLORS[si % COLORS.len()],
            WIDTH - MARGIN - 108.0,
            y
        );
    }
    s.push_str("</svg>\n");
    s
}
