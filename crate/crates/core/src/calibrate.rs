//! Marginal maximum likelihood (EM) calibration of Rasch item difficulties
//! with a fixed standard-normal latent distribution.
//!
//! The E-step integrates each respondent's likelihood over a discrete
//! quadrature grid; the M-step solves each item's score equation by damped
//! Newton-Raphson. Items answered all-correct or all-incorrect are flagged
//! and clamped rather than estimated.

use serde::{Deserialize, Serialize};

use crate::dataio::ResponseMatrix;
use crate::error::{Error, Result};
use crate::rasch::{log_sigmoid, sigmoid};

/// Items beyond this magnitude are clamped and flagged.
pub const BETA_CLAMP: f64 = 6.0;

/// Fixed number of respondents per parallel work unit. Accumulation happens
/// per chunk and chunks are merged in index order, so results are
/// bit-identical for any worker count.
const CHUNK_ROWS: usize = 256;

// ---------------------------------------------------------------------------
// Quadrature grid
// ---------------------------------------------------------------------------

/// Discrete node/weight approximation of a latent density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    /// `count` equally spaced nodes on `[-span, span]` with weights
    /// proportional to the standard-normal density, normalized to sum 1.
    pub fn normal(count: usize, span: f64) -> Result<Self> {
        if count < 11 || count % 2 == 0 {
            return Err(Error::invalid(format!(
                "grid count must be odd and >= 11, got {count}"
            )));
        }
        if !(span.is_finite() && span > 0.0) {
            return Err(Error::invalid(format!("grid span must be positive, got {span}")));
        }
        let mid = (count - 1) / 2;
        let step = span / mid as f64;
        let nodes: Vec<f64> = (0..count)
            .map(|k| (k as f64 - mid as f64) * step)
            .collect();
        let raw: Vec<f64> = nodes.iter().map(|x| (-0.5 * x * x).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(QuadratureGrid { nodes, weights })
    }

    /// Same nodes with re-estimated weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.nodes.len() {
            return Err(Error::invalid("weight count does not match node count"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights sum to {sum}, expected 1")));
        }
        Ok(QuadratureGrid {
            nodes: self.nodes.clone(),
            weights,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Discrete moments of (nodes, weights): mean, SD, raw kurtosis.
    pub fn moments(&self) -> (f64, f64, f64) {
        let mean: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * x)
            .sum();
        let m2: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - mean).powi(2))
            .sum();
        let m4: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - mean).powi(4))
            .sum();
        let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { f64::NAN };
        (mean, m2.sqrt(), kurtosis)
    }
}

// ---------------------------------------------------------------------------
// Item parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Ok,
    ExtremeAllCorrect,
    ExtremeAllIncorrect,
    Excluded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemEstimate {
    pub item_id: String,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub status: ItemStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemParams {
    pub items: Vec<ItemEstimate>,
}

impl ItemParams {
    pub fn get(&self, item_id: &str) -> Option<&ItemEstimate> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Ids of items with status ok, in stored order.
    pub fn ok_item_ids(&self) -> Vec<String> {
        self.items
            .iter()
            .filter(|i| i.status == ItemStatus::Ok)
            .map(|i| i.item_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Convergence {
    pub cycles: u32,
    pub max_param_change: f64,
    pub converged: bool,
}

/// Calibration output: parameters, convergence record, and the marginal
/// log-likelihood after each E-step (ascending under a correct EM).
#[derive(Debug, Clone)]
pub struct Calibration {
    pub params: ItemParams,
    pub convergence: Convergence,
    pub loglik_history: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Shared EM plumbing (also used by fpc)
// ---------------------------------------------------------------------------

/// Response patterns in a canonical (item_id-sorted) column order, so that
/// float summation order does not depend on input column order.
pub(crate) struct CompactResponses {
    /// Per respondent: (canonical item index, correct) for observed cells.
    pub patterns: Vec<Vec<(u32, bool)>>,
    /// canonical index -> original column index
    pub canon_to_orig: Vec<usize>,
}

impl CompactResponses {
    pub fn from_matrix(matrix: &ResponseMatrix) -> Self {
        let mut canon_to_orig: Vec<usize> = (0..matrix.n_items()).collect();
        canon_to_orig.sort_by(|&a, &b| matrix.item_ids()[a].cmp(&matrix.item_ids()[b]));
        let patterns = matrix
            .rows()
            .iter()
            .map(|row| {
                canon_to_orig
                    .iter()
                    .enumerate()
                    .filter_map(|(canon, &orig)| {
                        row.cells[orig].map(|x| (canon as u32, x == 1))
                    })
                    .collect()
            })
            .collect();
        CompactResponses {
            patterns,
            canon_to_orig,
        }
    }
}

/// log P and log(1-P) for every (node, item) pair, flattened node-major.
pub(crate) fn log_prob_tables(nodes: &[f64], betas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n_items = betas.len();
    let mut logp = vec![0.0; nodes.len() * n_items];
    let mut log1mp = vec![0.0; nodes.len() * n_items];
    for (k, node) in nodes.iter().enumerate() {
        for (j, beta) in betas.iter().enumerate() {
            logp[k * n_items + j] = log_sigmoid(node - beta);
            log1mp[k * n_items + j] = log_sigmoid(beta - node);
        }
    }
    (logp, log1mp)
}

/// Log-likelihood of every respondent at every node (row-major N x K),
/// computed chunk-parallel with order-preserving merge.
pub(crate) fn loglik_matrix(
    patterns: &[Vec<(u32, bool)>],
    logp: &[f64],
    log1mp: &[f64],
    n_nodes: usize,
    n_items: usize,
) -> Vec<f64> {
    use rayon::prelude::*;
    let chunks: Vec<Vec<f64>> = patterns
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len() * n_nodes);
            for pattern in chunk {
                for k in 0..n_nodes {
                    let base = k * n_items;
                    let mut ll = 0.0;
                    for &(j, correct) in pattern {
                        ll += if correct {
                            logp[base + j as usize]
                        } else {
                            log1mp[base + j as usize]
                        };
                    }
                    out.push(ll);
                }
            }
            out
        })
        .collect();
    chunks.concat()
}

/// Normalize one respondent's posterior over nodes in place; returns the
/// marginal log-likelihood contribution.
pub(crate) fn posterior_from_logjoint(buf: &mut [f64]) -> f64 {
    let max = buf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in buf.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in buf.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

// ---------------------------------------------------------------------------
// MML-EM calibration
// ---------------------------------------------------------------------------

struct EStepOut {
    /// expected correct counts, item-major J x K (canonical item order)
    r: Vec<f64>,
    /// expected attempted counts, item-major J x K
    n: Vec<f64>,
    loglik: f64,
}

fn e_step(
    patterns: &[Vec<(u32, bool)>],
    weights: &[f64],
    logp: &[f64],
    log1mp: &[f64],
    n_items: usize,
) -> EStepOut {
    use rayon::prelude::*;
    let n_nodes = weights.len();
    let log_weights: Vec<f64> = weights.iter().map(|w| w.ln()).collect();

    let partials: Vec<EStepOut> = patterns
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| {
            let mut r = vec![0.0; n_items * n_nodes];
            let mut n = vec![0.0; n_items * n_nodes];
            let mut loglik = 0.0;
            let mut post = vec![0.0; n_nodes];
            for pattern in chunk {
                for (k, slot) in post.iter_mut().enumerate() {
                    let base = k * n_items;
                    let mut ll = log_weights[k];
                    for &(j, correct) in pattern {
                        ll += if correct {
                            logp[base + j as usize]
                        } else {
                            log1mp[base + j as usize]
                        };
                    }
                    *slot = ll;
                }
                loglik += posterior_from_logjoint(&mut post);
                for &(j, correct) in pattern {
                    let row = j as usize * n_nodes;
                    for (k, p) in post.iter().enumerate() {
                        n[row + k] += p;
                        if correct {
                            r[row + k] += p;
                        }
                    }
                }
            }
            EStepOut { r, n, loglik }
        })
        .collect();

    let mut total = EStepOut {
        r: vec![0.0; n_items * n_nodes],
        n: vec![0.0; n_items * n_nodes],
        loglik: 0.0,
    };
    for part in partials {
        for (a, b) in total.r.iter_mut().zip(&part.r) {
            *a += b;
        }
        for (a, b) in total.n.iter_mut().zip(&part.n) {
            *a += b;
        }
        total.loglik += part.loglik;
    }
    total
}

/// Solve the item score equation sum_k (r_k - n_k P(node_k, beta)) = 0 by
/// damped Newton-Raphson (max step 1 logit, betas clamped to +-6).
fn solve_item_beta(r: &[f64], n: &[f64], nodes: &[f64], start: f64) -> f64 {
    let mut beta = start;
    for _ in 0..100 {
        let mut g = 0.0;
        let mut h = 0.0;
        for (k, node) in nodes.iter().enumerate() {
            let p = sigmoid(node - beta);
            g += r[k] - n[k] * p;
            h += n[k] * p * (1.0 - p);
        }
        if h <= 0.0 {
            break;
        }
        let step = (g / h).clamp(-1.0, 1.0);
        beta = (beta + step).clamp(-BETA_CLAMP, BETA_CLAMP);
        if step.abs() < 1e-12 {
            break;
        }
    }
    beta
}

/// Estimate item difficulties by MML-EM with the latent distribution held
/// fixed at the supplied grid.
pub fn calibrate_mml(
    matrix: &ResponseMatrix,
    grid: &QuadratureGrid,
    tol: f64,
    max_cycles: u32,
) -> Result<Calibration> {
    if matrix.n_respondents() == 0 {
        return Err(Error::invalid("cannot calibrate an empty response matrix"));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid(format!("tol must be positive, got {tol}")));
    }

    let compact = CompactResponses::from_matrix(matrix);
    let n_items = matrix.n_items();
    let n_nodes = grid.len();

    // Observed/correct tallies per canonical item.
    let mut observed = vec![0usize; n_items];
    let mut correct = vec![0usize; n_items];
    for pattern in &compact.patterns {
        for &(j, x) in pattern {
            observed[j as usize] += 1;
            if x {
                correct[j as usize] += 1;
            }
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Flag {
        Active,
        AllCorrect,
        AllIncorrect,
        NoData,
    }
    let flags: Vec<Flag> = (0..n_items)
        .map(|j| {
            if observed[j] == 0 {
                Flag::NoData
            } else if correct[j] == observed[j] {
                Flag::AllCorrect
            } else if correct[j] == 0 {
                Flag::AllIncorrect
            } else {
                Flag::Active
            }
        })
        .collect();
    let active: Vec<usize> = (0..n_items)
        .filter(|&j| flags[j] == Flag::Active)
        .collect();
    if active.is_empty() {
        return Err(Error::invalid(
            "no calibratable items: every item is extreme or unobserved",
        ));
    }

    // Start values: logit of classical difficulty, clamped.
    let mut betas: Vec<f64> = (0..n_items)
        .map(|j| match flags[j] {
            Flag::Active => {
                let p = correct[j] as f64 / observed[j] as f64;
                (((1.0 - p) / p).ln()).clamp(-BETA_CLAMP, BETA_CLAMP)
            }
            Flag::AllCorrect => -BETA_CLAMP,
            Flag::AllIncorrect => BETA_CLAMP,
            Flag::NoData => 0.0,
        })
        .collect();

    // EM over active items only: extreme items keep their clamped betas and
    // still contribute their (constant) likelihood terms through the tables.
    let mut history = Vec::new();
    let mut cycles = 0u32;
    let mut converged = false;
    let mut max_change = f64::INFINITY;

    let mut tables = log_prob_tables(grid.nodes(), &betas);
    for cycle in 1..=max_cycles {
        let stats = e_step(
            &compact.patterns,
            grid.weights(),
            &tables.0,
            &tables.1,
            n_items,
        );
        history.push(stats.loglik);
        max_change = 0.0;
        for &j in &active {
            let r = &stats.r[j * n_nodes..(j + 1) * n_nodes];
            let n = &stats.n[j * n_nodes..(j + 1) * n_nodes];
            let updated = solve_item_beta(r, n, grid.nodes(), betas[j]);
            max_change = max_change.max((updated - betas[j]).abs());
            betas[j] = updated;
        }
        tables = log_prob_tables(grid.nodes(), &betas);
        cycles = cycle;
        if max_change < tol {
            converged = true;
            break;
        }
    }

    // One more E-step at the final betas: standard errors and final loglik.
    let final_stats = e_step(
        &compact.patterns,
        grid.weights(),
        &tables.0,
        &tables.1,
        n_items,
    );
    history.push(final_stats.loglik);

    let mut items: Vec<Option<ItemEstimate>> = vec![None; n_items];
    for (canon, &orig) in compact.canon_to_orig.iter().enumerate() {
        let item_id = matrix.item_ids()[orig].clone();
        let estimate = match flags[canon] {
            Flag::Active => {
                let n = &final_stats.n[canon * n_nodes..(canon + 1) * n_nodes];
                let info: f64 = grid
                    .nodes()
                    .iter()
                    .zip(n)
                    .map(|(node, nk)| {
                        let p = sigmoid(node - betas[canon]);
                        nk * p * (1.0 - p)
                    })
                    .sum();
                ItemEstimate {
                    item_id,
                    beta: betas[canon],
                    se: Some(info.powf(-0.5)),
                    status: ItemStatus::Ok,
                }
            }
            Flag::AllCorrect => ItemEstimate {
                item_id,
                beta: -BETA_CLAMP,
                se: None,
                status: ItemStatus::ExtremeAllCorrect,
            },
            Flag::AllIncorrect => ItemEstimate {
                item_id,
                beta: BETA_CLAMP,
                se: None,
                status: ItemStatus::ExtremeAllIncorrect,
            },
            Flag::NoData => ItemEstimate {
                item_id,
                beta: 0.0,
                se: None,
                status: ItemStatus::Excluded,
            },
        };
        items[orig] = Some(estimate);
    }
    let items: Vec<ItemEstimate> = items.into_iter().map(|i| i.expect("filled")).collect();

    Ok(Calibration {
        params: ItemParams { items },
        convergence: Convergence {
            cycles,
            max_param_change: max_change,
            converged,
        },
        loglik_history: history,
    })
}

/// Shift `params` onto the scale of `reference` by matching the mean beta
/// over items with status ok in both (mean-sigma with unit slope).
pub fn anchor_to(params: &ItemParams, reference: &ItemParams) -> Result<ItemParams> {
    let mut shared_params = Vec::new();
    let mut shared_ref = Vec::new();
    for item in &params.items {
        if item.status != ItemStatus::Ok {
            continue;
        }
        if let Some(r) = reference.get(&item.item_id) {
            if r.status == ItemStatus::Ok {
                shared_params.push(item.beta);
                shared_ref.push(r.beta);
            }
        }
    }
    if shared_params.len() < 2 {
        return Err(Error::invalid(format!(
            "anchoring needs at least 2 shared ok items, found {}",
            shared_params.len()
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let shift = mean(&shared_ref) - mean(&shared_params);
    let items = params
        .items
        .iter()
        .map(|i| ItemEstimate {
            item_id: i.item_id.clone(),
            beta: i.beta + shift,
            se: i.se,
            status: i.status,
        })
        .collect();
    Ok(ItemParams { items })
}
