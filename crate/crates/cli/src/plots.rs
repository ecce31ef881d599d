//! Line-plot data (normalized FPR against R² per method) as CSV and SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sma_core::{Result, SmaError};
use sma_simbench::{FprReport, Method};

use crate::atomic_write;

/// One panel: all reports sharing design, scenario, case and tau.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub name: String,
    pub title: String,
    /// `(method, [(r_squared, mean normalized FPR)])`, R² ascending.
    pub series: Vec<(Method, Vec<(f64, f64)>)>,
}

fn r2_of(report: &FprReport) -> Option<f64> {
    match report.config.design {
        sma_core::dgp::Design::Main { r_squared, .. } => Some(r_squared),
        _ => None,
    }
}

/// Groups main-design reports into figures. Correlated-design reports carry
/// no R² axis and are skipped.
pub fn figures(reports: &[FprReport], methods: &[Method]) -> Result<Vec<Figure>> {
    if methods.is_empty() {
        return Err(SmaError::Usage("no methods to plot".into()));
    }
    let mut out: Vec<Figure> = Vec::new();
    for rep in reports {
        let Some(r2) = r2_of(rep) else { continue };
        let (_, scenario, case, _, _) = rep.config.labels();
        let name = format!("fig_scenario{scenario}_case{case}_tau{}", rep.config.tau);
        let idx = match out.iter().position(|f| f.name == name) {
            Some(i) => i,
            None => {
                out.push(Figure {
                    name: name.clone(),
                    title: format!("Normalized FPR, scenario {scenario}, case ({case}), tau = {}", rep.config.tau),
                    series: methods.iter().map(|m| (*m, Vec::new())).collect(),
                });
                out.len() - 1
            }
        };
        for (m, pts) in &mut out[idx].series {
            pts.push((r2, rep.nfpr(*m)));
        }
    }
    for f in &mut out {
        for (_, pts) in &mut f.series {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    Ok(out)
}

pub fn figure_csv(f: &Figure) -> String {
    let mut s = String::from("method,r_squared,normalized_fpr\n");
    for (m, pts) in &f.series {
        for (x, y) in pts {
            let _ = writeln!(s, "{},{x},{}", m.name(), if y.is_finite() { format!("{y:.6}") } else { String::new() });
        }
    }
    s
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#000000", "#aec7e8",
];

/// Self-contained SVG; output depends only on the figure data.
pub fn figure_svg(f: &Figure) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let pts = f.series.iter().flat_map(|(_, p)| p.iter()).filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        (x0, x1) = (x0 - 0.05, x1 + 0.05);
    }
    let pad = ((y1 - y0) * 0.08).max(0.01);
    (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, f.title);
    let _ = writeln!(
        s,
        r#"<path d="M{l:.1},{t:.1} V{b:.1} H{r:.1}" fill="none" stroke="black"/>"#,
        l = left,
        t = top,
        b = h - bottom,
        r = w - right
    );
    for k in 0..=4 {
        let yv = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, left - 6.0, py(yv) + 4.0);
    }
    let mut xs: Vec<f64> = f.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in &xs {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, px(*x), h - bottom + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">R²</text>"#, (left + w - right) / 2.0, h - 10.0);
    for (k, (m, p)) in f.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = p
            .iter()
            .filter(|q| q.1.is_finite())
            .enumerate()
            .map(|(i, q)| format!("{}{:.1},{:.1}", if i == 0 { 'M' } else { 'L' }, px(q.0), py(q.1)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        }
        for q in p.iter().filter(|q| q.1.is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(q.0), py(q.1));
        }
        let ly = top + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 36.0,
            ly + 4.0,
            m.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<name>.csv` and `<name>.svg` per figure into `dir`.
pub fn emit_plots(reports: &[FprReport], methods: &[Method], dir: &Path) -> Result<Vec<PathBuf>> {
    let figs = figures(reports, methods)?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in &figs {
        let csv = dir.join(format!("{}.csv", f.name));
        let svg = dir.join(format!("{}.svg", f.name));
        atomic_write(&csv, figure_csv(f).as_bytes())?;
        atomic_write(&svg, figure_svg(f).as_bytes())?;
        written.push(csv);
        written.push(svg);
    }
    Ok(written)
}
