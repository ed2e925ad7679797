//! CSV and SVG writers.
//!
//! Numbers are written as `{:.16e}` (round-trippable), with exact zero as
//! `0e0`. Line endings are LF.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{ContractionAudit, ViolationKind};
use crate::error::{Error, Result};
use crate::experiment::{SweepResult, TraceRow};

pub const SWEEP_HEADER: &str = "c,sigma_e,k,mean_edc,std_edc";
pub const TRACE_HEADER: &str = "k,gnorm_sq,x_err_2,edc_mean,gate_satisfied";
pub const AUDIT_HEADER: &str =
    "k,gnorm_sq,gnorm_sq_next,ratio,contraction_bound,ez_norm,x_err_next,gate_satisfied,checked,x_bound_slack,violation";

pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0e0".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Rows sorted by `(c, σ_e, k)`.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut cells: Vec<_> = sweep.cells.iter().collect();
    cells.sort_by(|a, b| a.c.total_cmp(&b.c).then(a.sigma_e.total_cmp(&b.sigma_e)));
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for cell in cells {
        let (c, s) = (fmt_num(cell.c), fmt_num(cell.sigma_e));
        for (k, (m, sd)) in cell.mean.iter().zip(&cell.std).enumerate() {
            let _ = writeln!(out, "{c},{s},{k},{},{}", fmt_num(*m), fmt_num(*sd));
        }
    }
    out
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let gate = r.gate.map(|g| if g { "1" } else { "0" }).unwrap_or("");
        let _ = writeln!(
            out,
            "{},{},{},{},{gate}",
            r.k,
            fmt_num(r.gnorm_sq),
            fmt_num(r.x_err),
            fmt_num(r.edc_mean)
        );
    }
    out
}

pub fn audit_csv(audit: &ContractionAudit) -> String {
    let mut out = String::from(AUDIT_HEADER);
    out.push('\n');
    for r in &audit.rows {
        let violation: Vec<&str> = audit
            .violations
            .iter()
            .filter(|v| v.k == r.k)
            .map(|v| match v.kind {
                ViolationKind::Contraction => "contraction",
                ViolationKind::PrimalBound => "primal_bound",
            })
            .collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.k,
            fmt_num(r.gnorm_sq),
            fmt_num(r.gnorm_sq_next),
            fmt_opt(r.ratio),
            fmt_num(audit.contraction_bound),
            fmt_num(r.ez_norm),
            fmt_num(r.x_err_next),
            u8::from(r.gate),
            u8::from(r.checked),
            fmt_opt(r.eq10_slack),
            violation.join("+"),
        );
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Values below this are clamped before taking logarithms.
pub const SVG_FLOOR: f64 = 1e-16;

/// Mean `E^{DC}` per cell on a log-y, linear-x plot.
pub fn sweep_svg(sweep: &SweepResult) -> String {
    let (w, h) = (820.0, 520.0);
    let (left, right, top, bottom) = (80.0, 220.0, 30.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let logs = |v: &f64| v.max(SVG_FLOOR).log10();
    let all = sweep.cells.iter().flat_map(|c| c.mean.iter().map(logs));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() {
        (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
    } else {
        (-16.0, 0.0)
    };
    let kmax = sweep.max_iter.max(1) as f64;
    let px = |k: f64| left + pw * k / kmax;
    let py = |l: f64| top + ph * (hi - l) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut d = lo as i32;
    while d <= hi as i32 {
        let y = py(d as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
        d += 1;
    }
    for i in 0..=5 {
        let k = kmax * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(k),
            top + ph + 18.0,
            k.round()
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration k</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {:.2}) rotate(-90)" text-anchor="middle">mean E^DC (log scale)</text>"#,
        top + ph / 2.0
    );
    for (i, cell) in sweep.cells.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = cell
            .mean
            .iter()
            .enumerate()
            .map(|(k, v)| format!("{:.2},{:.2}", px(k as f64), py(logs(v))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">c={}, σ_e={}</text>"#,
            lx + 25.0,
            lx + 32.0,
            ly + 4.0,
            cell.c,
            cell.sigma_e
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
