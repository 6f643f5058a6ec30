//! Comparison metrics between calibrations, plus distribution statistics.

use serde::{Deserialize, Serialize};

use crate::calibrate::{anchor_to, ItemParams, ItemStatus};
use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "vector length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation undefined for zero-variance input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Ranks with ties receiving the average of the tied positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Root mean square error between an estimate and a reference vector.
pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::invalid(format!(
            "vector length mismatch: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::invalid("rmse needs at least one point"));
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok((sum / estimate.len() as f64).sqrt())
}

/// Mean, sample SD, raw kurtosis, and count for one labelled group.
/// Kurtosis is absent when n < 4 or the values have zero spread.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistStats {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kurtosis: Option<f64>,
    pub n: usize,
}

pub fn dist_stats(thetas: &[f64], label: &str) -> Result<DistStats> {
    let n = thetas.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "distribution stats need n >= 2, got {n} for '{label}'"
        )));
    }
    let mean = thetas.iter().sum::<f64>() / n as f64;
    let ss: f64 = thetas.iter().map(|t| (t - mean).powi(2)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    let kurtosis = if n >= 4 && sd > 0.0 {
        let m2 = ss / n as f64;
        let m4: f64 = thetas.iter().map(|t| (t - mean).powi(4)).sum::<f64>() / n as f64;
        Some(m4 / (m2 * m2))
    } else {
        None
    };
    Ok(DistStats {
        label: label.to_string(),
        mean,
        sd,
        kurtosis,
        n,
    })
}

/// One comparison against the benchmark calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub pearson: f64,
    pub spearman: f64,
    pub rmse: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

/// Compare each calibration against the benchmark over their shared ok
/// items. Correlations use unanchored betas (they are translation
/// invariant); RMSE is computed after a mean-shift anchor when `anchor`
/// is set.
pub fn compare_calibrations(
    benchmark: &ItemParams,
    others: &[(String, ItemParams)],
    anchor: bool,
) -> Result<ComparisonReport> {
    let mut rows = Vec::with_capacity(others.len());
    for (label, params) in others {
        let shared: Vec<&str> = params
            .items
            .iter()
            .filter(|i| i.status == ItemStatus::Ok)
            .filter(|i| {
                benchmark
                    .get(&i.item_id)
                    .is_some_and(|b| b.status == ItemStatus::Ok)
            })
            .map(|i| i.item_id.as_str())
            .collect();
        if shared.len() < 3 {
            return Err(Error::invalid(format!(
                "comparison '{label}' shares only {} ok items with the benchmark (need 3)",
                shared.len()
            )));
        }
        let bench_betas: Vec<f64> = shared
            .iter()
            .map(|id| benchmark.get(id).expect("shared").beta)
            .collect();
        let raw_betas: Vec<f64> = shared
            .iter()
            .map(|id| params.get(id).expect("shared").beta)
            .collect();
        let pearson_r = pearson(&raw_betas, &bench_betas)?;
        let spearman_r = spearman(&raw_betas, &bench_betas)?;
        let rmse_betas: Vec<f64> = if anchor {
            let anchored = anchor_to(params, benchmark)?;
            shared
                .iter()
                .map(|id| anchored.get(id).expect("shared").beta)
                .collect()
        } else {
            raw_betas
        };
        let rmse_v = rmse(&rmse_betas, &bench_betas)?;
        rows.push(ComparisonRow {
            label: label.clone(),
            pearson: pearson_r,
            spearman: spearman_r,
            rmse: rmse_v,
            n_items: shared.len(),
        });
    }
    Ok(ComparisonReport { rows })
}
