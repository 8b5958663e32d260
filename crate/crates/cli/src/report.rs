//! Cross-seed summaries and the static SVG chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use scpo_core::trainer::MetricsRow;

/// Headline metrics reported by `compare`.
pub const COMPARE_METRICS: [&str; 3] = ["J_r", "M_c", "rho_c"];

pub fn metric(row: &MetricsRow, name: &str) -> f64 {
    match name {
        "J_r" => row.j_r,
        "M_c" => row.m_c,
        "rho_c" => row.rho_c,
        "max_statewise_cost" => row.max_statewise_cost,
        _ => f64::NAN,
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Mean of `name` over the last `window` rows.
pub fn tail_mean(rows: &[MetricsRow], name: &str, window: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| metric(r, name)).sum::<f64>() / tail.len() as f64
}

/// Median across seeds of each algorithm's final-window averages.
pub fn median_table(runs: &BTreeMap<String, Vec<Vec<MetricsRow>>>, window: usize) -> Vec<(String, [f64; 3])> {
    runs.iter()
        .map(|(algo, seeds)| {
            let mut out = [0.0; 3];
            for (k, name) in COMPARE_METRICS.iter().enumerate() {
                let per_seed: Vec<f64> = seeds.iter().map(|rows| tail_mean(rows, name, window)).collect();
                out[k] = median(&per_seed);
            }
            (algo.clone(), out)
        })
        .collect()
}

/// Per-epoch median across seeds of one metric.
pub fn median_curve(seeds: &[Vec<MetricsRow>], name: &str) -> Vec<f64> {
    let len = seeds.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|e| {
            let vals: Vec<f64> = seeds.iter().filter_map(|r| r.get(e)).map(|r| metric(r, name)).collect();
            median(&vals)
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Three side-by-side line charts (return, episode cost, cost rate).
pub fn render_svg(runs: &BTreeMap<String, Vec<Vec<MetricsRow>>>) -> String {
    let (pw, ph, pad) = (320.0, 220.0, 40.0);
    let width = 3.0 * (pw + pad) + pad;
    let height = ph + 2.0 * pad + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (panel, name) in COMPARE_METRICS.iter().enumerate() {
        let x0 = pad + panel as f64 * (pw + pad);
        let y0 = pad;
        let curves: Vec<(&String, Vec<f64>)> = runs.iter().map(|(a, s)| (a, median_curve(s, name))).collect();
        let finite = curves.iter().flat_map(|(_, c)| c.iter().copied()).filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
        let len = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(2);
        let _ = writeln!(
            svg,
            r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#, x0 + pw / 2.0, y0 - 8.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, x0 - 4.0, y0 + 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#, x0 - 4.0, y0 + ph);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, x0 + pw / 2.0, y0 + ph + 16.0);
        for (i, (_, curve)) in curves.iter().enumerate() {
            let pts: Vec<String> = curve
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(e, v)| {
                    let x = x0 + pw * e as f64 / (len - 1) as f64;
                    let y = y0 + ph * (1.0 - (v - lo) / (hi - lo));
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                PALETTE[i % PALETTE.len()],
                pts.join(" ")
            );
        }
    }
    for (i, algo) in runs.keys().enumerate() {
        let x = pad + i as f64 * 130.0;
        let y = height - 12.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="12" height="4" fill="{color}"/>"#, y - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{y}">{algo}</text>"#, x + 16.0);
    }
    svg.push_str("</svg>\n");
    svg
}
