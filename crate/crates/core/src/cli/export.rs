//! CSV rendering of Monte-Carlo reports.

use std::fmt::Write as _;

use crate::sim::MetricsReport;

pub const SUMMARY_HEADER: &str = "scenario,filter,component,trmse,mean_iterations";
pub const STEPS_HEADER: &str = "filter,component,t,rmse";

/// Formats `x` with 6 significant digits.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding can carry into a new digit, e.g. 9.999996 -> 10.00000
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 && decimals > 0 {
            let decimals = decimals - 1;
            return format!("{x:.decimals$}");
        }
        s
    } else {
        format!("{x:.5e}")
    }
}

pub fn component_name(k: usize) -> String {
    format!("x{}", k + 1)
}

/// Summary rows `(scenario, filter, component, trmse, mean_iterations)`,
/// sorted by the first three columns.
pub fn summary_rows(reports: &[MetricsReport]) -> Vec<[String; 5]> {
    let mut rows = Vec::new();
    for rep in reports {
        for f in &rep.filters {
            for (k, trmse) in f.trmse.iter().enumerate() {
                rows.push([
                    rep.scenario.clone(),
                    f.name.clone(),
                    component_name(k),
                    fmt_sig6(*trmse),
                    fmt_sig6(f.mean_iterations),
                ]);
            }
        }
    }
    rows.sort_by(|a, b| a[..3].cmp(&b[..3]));
    rows
}

pub fn summary_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for row in summary_rows(reports) {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn steps_csv(report: &MetricsReport) -> String {
    let mut filters: Vec<_> = report.filters.iter().collect();
    filters.sort_by(|a, b| a.name.cmp(&b.name));
    let mut out = String::from(STEPS_HEADER);
    out.push('\n');
    for f in filters {
        for (k, series) in f.rmse.iter().enumerate() {
            for (t, v) in series.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", f.name, component_name(k), t + 1, fmt_sig6(*v));
            }
        }
    }
    out
}

/// Human-readable summary table.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let rows = summary_rows(reports);
    let headers = ["scenario", "filter", "component", "trmse", "mean_iterations"];
    let mut widths = headers.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(&headers, &mut out);
    for row in &rows {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}
