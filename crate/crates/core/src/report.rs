//! Deterministic text and SVG rendering: Wright maps and experiment report
//! tables.

use crate::calibrate::{ItemParams, ItemStatus};
use crate::error::{Error, Result};
use crate::evaluate::{ComparisonReport, DistStats};
use crate::fpc::AbilityEstimates;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Text,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

const BIN_WIDTH: f64 = 0.25;
const PERSON_BAR_MAX: usize = 40;

struct MapLayout {
    lo: f64,
    n_bins: usize,
    /// (bin, label, extreme) per item, ordered ascending by beta then id
    items: Vec<(usize, String, bool)>,
    /// person count per bin
    person_counts: Vec<usize>,
    n_persons: usize,
}

fn layout(params: &ItemParams, abilities: &AbilityEstimates) -> Result<MapLayout> {
    let plotted_items: Vec<(&str, f64, bool)> = params
        .items
        .iter()
        .filter(|i| i.status != ItemStatus::Excluded)
        .map(|i| (i.item_id.as_str(), i.beta, i.status != ItemStatus::Ok))
        .collect();
    if !plotted_items.iter().any(|(_, _, extreme)| !extreme) {
        return Err(Error::invalid("wright map needs at least one ok item"));
    }
    let thetas: Vec<f64> = abilities.rows.iter().map(|r| r.theta_hat).collect();
    let all_values = plotted_items
        .iter()
        .map(|(_, b, _)| *b)
        .chain(thetas.iter().copied());
    let (min, max) = all_values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let lo = min - 0.5;
    let hi = max + 0.5;
    let n_bins = ((hi - lo) / BIN_WIDTH).ceil() as usize;
    let bin_of = |v: f64| -> usize {
        let k = ((v - lo) / BIN_WIDTH).floor() as isize;
        k.clamp(0, n_bins as isize - 1) as usize
    };

    let mut items: Vec<(usize, String, bool)> = plotted_items
        .iter()
        .map(|(id, beta, extreme)| (bin_of(*beta), id.to_string(), *extreme))
        .collect();
    // ascending by bin; ties within a bin ordered by item_id
    items.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let mut person_counts = vec![0usize; n_bins];
    for theta in &thetas {
        person_counts[bin_of(*theta)] += 1;
    }
    Ok(MapLayout {
        lo,
        n_bins,
        items,
        person_counts,
        n_persons: thetas.len(),
    })
}

fn person_bar(count: usize, max_count: usize) -> String {
    if count == 0 {
        return String::new();
    }
    let len = if max_count <= PERSON_BAR_MAX {
        count
    } else {
        // scale down, but never hide a non-empty bin
        ((count * PERSON_BAR_MAX).div_ceil(max_count)).max(1)
    };
    "#".repeat(len)
}

fn render_text_map(layout: &MapLayout) -> String {
    let max_count = layout.person_counts.iter().copied().max().unwrap_or(0);
    let mut out = String::new();
    out.push_str("Wright map: items ascend by difficulty from top to bottom; ! flags extreme items\n");
    out.push_str(&format!(
        "persons: EAP ability estimates (n = {})\n",
        layout.n_persons
    ));
    out.push_str(&format!(
        "{:>8} | {:<width$} | items\n",
        "logit",
        "persons",
        width = PERSON_BAR_MAX
    ));
    for bin in 0..layout.n_bins {
        let center = layout.lo + (bin as f64 + 0.5) * BIN_WIDTH;
        let bar = person_bar(layout.person_counts[bin], max_count);
        let labels: Vec<String> = layout
            .items
            .iter()
            .filter(|(b, _, _)| *b == bin)
            .map(|(_, id, extreme)| {
                if *extreme {
                    format!("{id}!")
                } else {
                    id.clone()
                }
            })
            .collect();
        out.push_str(&format!(
            "{:>8.2} | {:<width$} | {}\n",
            center,
            bar,
            labels.join(" "),
            width = PERSON_BAR_MAX
        ));
    }
    out
}

fn render_svg_map(layout: &MapLayout) -> String {
    let row_h = 14.0;
    let top = 36.0;
    let height = top + layout.n_bins as f64 * row_h + 16.0;
    let width = 640.0;
    let bar_x = 90.0;
    let bar_w_max = 240.0;
    let item_x = 360.0;
    let max_count = layout.person_counts.iter().copied().max().unwrap_or(0).max(1);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    out.push_str("  <style>text { font-family: monospace; font-size: 11px; }</style>\n");
    out.push_str(&format!(
        "  <text x=\"8\" y=\"16\">Wright map (persons n = {}; ! = extreme item)</text>\n",
        layout.n_persons
    ));
    for bin in 0..layout.n_bins {
        let y = top + bin as f64 * row_h;
        let center = layout.lo + (bin as f64 + 0.5) * BIN_WIDTH;
        out.push_str(&format!(
            "  <text x=\"8\" y=\"{:.1}\">{:>7.2}</text>\n",
            y + 10.0,
            center
        ));
        let count = layout.person_counts[bin];
        if count > 0 {
            let w = bar_w_max * count as f64 / max_count as f64;
            out.push_str(&format!(
                "  <rect x=\"{bar_x:.1}\" y=\"{:.1}\" width=\"{w:.1}\" height=\"{:.1}\" fill=\"#4a7dba\"/>\n",
                y + 2.0,
                row_h - 4.0
            ));
        }
        let labels: Vec<String> = layout
            .items
            .iter()
            .filter(|(b, _, _)| *b == bin)
            .map(|(_, id, extreme)| {
                if *extreme {
                    format!("{id}!")
                } else {
                    id.clone()
                }
            })
            .collect();
        if !labels.is_empty() {
            out.push_str(&format!(
                "  <text x=\"{item_x:.1}\" y=\"{:.1}\">{}</text>\n",
                y + 10.0,
                labels.join(" ")
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Render the item-person map. Items are placed ascending by difficulty from
/// top to bottom in 0.25-logit bins; the shared axis spans all plotted
/// values plus a half-logit margin.
pub fn render_wright_map(
    params: &ItemParams,
    abilities: &AbilityEstimates,
    format: MapFormat,
) -> Result<String> {
    let layout = layout(params, abilities)?;
    Ok(match format {
        MapFormat::Text => render_text_map(&layout),
        MapFormat::Svg => render_svg_map(&layout),
    })
}

fn fmt_kurtosis(k: Option<f64>) -> String {
    match k {
        Some(v) => format!("{v:.2}"),
        None => "NA".to_string(),
    }
}

fn render_text_report(report: &ComparisonReport, stats: &[DistStats]) -> String {
    let mut out = String::new();
    let label_w = report
        .rows
        .iter()
        .map(|r| r.label.chars().count())
        .chain(["Generating Source".chars().count()])
        .max()
        .unwrap_or(17);
    out.push_str(&format!(
        "{:<label_w$}  {:>9}  {:>10}  {:>7}\n",
        "Generating Source", "Pearson ρ", "Spearman ρ", "RMSE"
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<label_w$}  {:>9.2}  {:>10.2}  {:>7.2}\n",
            row.label, row.pearson, row.spearman, row.rmse
        ));
    }
    if !stats.is_empty() {
        out.push('\n');
        let stat_w = stats
            .iter()
            .map(|s| s.label.chars().count())
            .chain(["Generating Model".chars().count()])
            .max()
            .unwrap_or(16);
        out.push_str(&format!(
            "{:<stat_w$}  {:>7}  {:>23}  {:>8}  {:>5}\n",
            "Generating Model", "Mean", "Standard Deviation (SD)", "Kurtosis", "N"
        ));
        for s in stats {
            out.push_str(&format!(
                "{:<stat_w$}  {:>7.2}  {:>23.2}  {:>8}  {:>5}\n",
                s.label,
                s.mean,
                s.sd,
                fmt_kurtosis(s.kurtosis),
                s.n
            ));
        }
    }
    out
}

/// Render the comparison table (benchmark schema: Generating Source /
/// Pearson ρ / Spearman ρ / RMSE) followed by the per-group distribution
/// table. Text values are rounded half-to-even to 2 decimals; JSON carries
/// full precision and round-trips through the dataio loader.
pub fn render_experiment_report(
    report: &ComparisonReport,
    stats: &[DistStats],
    format: ReportFormat,
) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::invalid("experiment report has no comparison rows"));
    }
    match format {
        ReportFormat::Text => Ok(render_text_report(report, stats)),
        ReportFormat::Json => {
            let doc = crate::dataio::ExperimentReportDoc {
                comparison: report.clone(),
                distributions: stats.to_vec(),
            };
            let value = serde_json::to_value(&doc).map_err(|e| Error::invalid(e.to_string()))?;
            let mut text = serde_json::to_string_pretty(&value)
                .map_err(|e| Error::invalid(e.to_string()))?;
            text.push('\n');
            Ok(text)
        }
    }
}
