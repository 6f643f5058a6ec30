//! Fixed-parameter calibration: with item difficulties frozen, re-estimate a
//! group's latent distribution by repeated quadrature-weight updates across
//! EM cycles, then score respondents by EAP and compute person fit.

use serde::{Deserialize, Serialize};

use crate::calibrate::{
    log_prob_tables, loglik_matrix, posterior_from_logjoint, CompactResponses, ItemParams,
    ItemStatus, QuadratureGrid,
};
use crate::dataio::ResponseMatrix;
use crate::error::{Error, Result};
use crate::rasch::sigmoid;

/// A latent proficiency distribution over fixed quadrature nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentDist {
    pub grid: QuadratureGrid,
    pub mean: f64,
    pub sd: f64,
    /// Raw kurtosis m4/m2^2 (3 for a normal distribution).
    pub kurtosis: f64,
}

impl LatentDist {
    pub fn from_grid(grid: QuadratureGrid) -> Self {
        let (mean, sd, kurtosis) = grid.moments();
        LatentDist {
            grid,
            mean,
            sd,
            kurtosis,
        }
    }
}

/// Outcome of the weight-updating EM, with enough trace to audit it:
/// the marginal log-likelihood after every weight update and the weight sums
/// after every update.
#[derive(Debug, Clone)]
pub struct MwuOutcome {
    pub latent: LatentDist,
    pub cycles: u32,
    pub converged: bool,
    pub max_weight_change: f64,
    pub loglik_history: Vec<f64>,
    pub weight_sums: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbilityRow {
    pub respondent_id: String,
    pub source: String,
    pub theta_hat: f64,
    pub se: f64,
    pub n_observed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outfit: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbilityEstimates {
    pub rows: Vec<AbilityRow>,
}

/// Frozen betas for the matrix columns, in canonical order; errors if any
/// matrix item is missing from `fixed` or not status ok.
fn frozen_betas(matrix: &ResponseMatrix, fixed: &ItemParams) -> Result<Vec<f64>> {
    matrix
        .item_ids()
        .iter()
        .map(|id| {
            let item = fixed
                .get(id)
                .ok_or_else(|| Error::invalid(format!("item '{id}' has no fixed difficulty")))?;
            if item.status != ItemStatus::Ok {
                return Err(Error::invalid(format!(
                    "item '{id}' cannot be fixed: status is not ok"
                )));
            }
            Ok(item.beta)
        })
        .collect()
}

fn check_nonempty(matrix: &ResponseMatrix) -> Result<()> {
    if matrix.n_respondents() == 0
        || matrix
            .rows()
            .iter()
            .all(|r| r.cells.iter().all(Option::is_none))
    {
        return Err(Error::invalid("empty effective matrix: no observed responses"));
    }
    Ok(())
}

/// Betas arranged in the canonical column order used by `CompactResponses`.
fn canonical_betas(matrix: &ResponseMatrix, fixed: &ItemParams) -> Result<(CompactResponses, Vec<f64>)> {
    let betas = frozen_betas(matrix, fixed)?;
    let compact = CompactResponses::from_matrix(matrix);
    let canon: Vec<f64> = compact.canon_to_orig.iter().map(|&o| betas[o]).collect();
    Ok((compact, canon))
}

/// Estimate the latent distribution with item parameters frozen: each EM
/// cycle applies `inner_updates` weight updates w_k <- mean_i post_ik,
/// recomputing posteriors between updates; convergence is max |dw| < tol
/// over a full cycle.
pub fn estimate_latent_mwu_mem(
    matrix: &ResponseMatrix,
    fixed: &ItemParams,
    grid: &QuadratureGrid,
    inner_updates: u32,
    tol: f64,
    max_cycles: u32,
) -> Result<MwuOutcome> {
    check_nonempty(matrix)?;
    if inner_updates == 0 {
        return Err(Error::invalid("inner_updates must be at least 1"));
    }
    let (compact, betas) = canonical_betas(matrix, fixed)?;
    let n_items = betas.len();
    let n_nodes = grid.len();
    let (logp, log1mp) = log_prob_tables(grid.nodes(), &betas);
    // Item parameters are frozen, so per-respondent log-likelihoods at each
    // node never change; only the prior weights do.
    let ll = loglik_matrix(&compact.patterns, &logp, &log1mp, n_nodes, n_items);
    let n_resp = compact.patterns.len();

    let mut weights: Vec<f64> = grid.weights().to_vec();
    let mut loglik_history = Vec::new();
    let mut weight_sums = Vec::new();
    let mut cycles = 0u32;
    let mut converged = false;
    let mut max_change = f64::INFINITY;

    let mut post = vec![0.0; n_nodes];
    for cycle in 1..=max_cycles {
        let mut cycle_change = 0.0f64;
        for _ in 0..inner_updates {
            let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
            let mut accum = vec![0.0; n_nodes];
            let mut marginal = 0.0;
            for i in 0..n_resp {
                for k in 0..n_nodes {
                    post[k] = log_w[k] + ll[i * n_nodes + k];
                }
                marginal += posterior_from_logjoint(&mut post);
                for (a, p) in accum.iter_mut().zip(&post) {
                    *a += p;
                }
            }
            loglik_history.push(marginal);
            let mut step_change = 0.0f64;
            for (w, a) in weights.iter_mut().zip(&accum) {
                let updated = a / n_resp as f64;
                step_change = step_change.max((updated - *w).abs());
                *w = updated;
            }
            weight_sums.push(weights.iter().sum());
            cycle_change = cycle_change.max(step_change);
        }
        cycles = cycle;
        max_change = cycle_change;
        if cycle_change < tol {
            converged = true;
            break;
        }
    }

    let latent = LatentDist::from_grid(grid.with_weights(weights)?);
    Ok(MwuOutcome {
        latent,
        cycles,
        converged,
        max_weight_change: max_change,
        loglik_history,
        weight_sums,
    })
}

/// EAP ability estimates: posterior mean and SD of theta for each
/// respondent, with the supplied latent distribution as prior.
pub fn eap_scores(
    matrix: &ResponseMatrix,
    fixed: &ItemParams,
    latent: &LatentDist,
) -> Result<AbilityEstimates> {
    check_nonempty(matrix)?;
    let (compact, betas) = canonical_betas(matrix, fixed)?;
    let n_items = betas.len();
    let nodes = latent.grid.nodes();
    let n_nodes = nodes.len();
    let (logp, log1mp) = log_prob_tables(nodes, &betas);
    let log_w: Vec<f64> = latent.grid.weights().iter().map(|w| w.ln()).collect();

    let mut rows = Vec::with_capacity(matrix.n_respondents());
    let mut post = vec![0.0; n_nodes];
    for (row, pattern) in matrix.rows().iter().zip(&compact.patterns) {
        if pattern.is_empty() {
            return Err(Error::invalid(format!(
                "respondent '{}' has zero observed items",
                row.respondent_id
            )));
        }
        for k in 0..n_nodes {
            let base = k * n_items;
            let mut ll = log_w[k];
            for &(j, correct) in pattern {
                ll += if correct {
                    logp[base + j as usize]
                } else {
                    log1mp[base + j as usize]
                };
            }
            post[k] = ll;
        }
        posterior_from_logjoint(&mut post);
        let theta_hat: f64 = nodes.iter().zip(&post).map(|(x, p)| p * x).sum();
        let var: f64 = nodes
            .iter()
            .zip(&post)
            .map(|(x, p)| p * (x - theta_hat).powi(2))
            .sum();
        let se = var.sqrt();
        if !(se > 0.0) {
            return Err(Error::invalid(format!(
                "degenerate posterior for respondent '{}'",
                row.respondent_id
            )));
        }
        rows.push(AbilityRow {
            respondent_id: row.respondent_id.clone(),
            source: row.source.clone(),
            theta_hat,
            se,
            n_observed: pattern.len(),
            infit: None,
            outfit: None,
        });
    }
    Ok(AbilityEstimates { rows })
}

/// Fill infit/outfit mean-square person-fit statistics from standardized
/// residuals at each respondent's estimated theta.
pub fn person_fit(
    matrix: &ResponseMatrix,
    fixed: &ItemParams,
    abilities: &AbilityEstimates,
) -> Result<AbilityEstimates> {
    let betas = frozen_betas(matrix, fixed)?;
    if abilities.rows.len() != matrix.n_respondents() {
        return Err(Error::invalid(
            "abilities must cover every respondent in the matrix",
        ));
    }
    let mut rows = Vec::with_capacity(abilities.rows.len());
    for (row, ability) in matrix.rows().iter().zip(&abilities.rows) {
        if row.respondent_id != ability.respondent_id {
            return Err(Error::invalid(format!(
                "ability row order mismatch at respondent '{}'",
                row.respondent_id
            )));
        }
        let mut z2_sum = 0.0;
        let mut sq_sum = 0.0;
        let mut var_sum = 0.0;
        let mut count = 0usize;
        for (cell, beta) in row.cells.iter().zip(&betas) {
            if let Some(x) = cell {
                let p = sigmoid(ability.theta_hat - beta);
                let resid = *x as f64 - p;
                let var = p * (1.0 - p);
                z2_sum += resid * resid / var;
                sq_sum += resid * resid;
                var_sum += var;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::invalid(format!(
                "respondent '{}' has zero observed items",
                row.respondent_id
            )));
        }
        let mut updated = ability.clone();
        updated.outfit = Some(z2_sum / count as f64);
        updated.infit = Some(sq_sum / var_sum);
        rows.push(updated);
    }
    Ok(AbilityEstimates { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::ItemEstimate;
    use crate::dataio::RespondentRow;

    fn fixed_params(betas: &[(&str, f64)]) -> ItemParams {
        ItemParams {
            items: betas
                .iter()
                .map(|(id, b)| ItemEstimate {
                    item_id: id.to_string(),
                    beta: *b,
                    se: None,
                    status: ItemStatus::Ok,
                })
                .collect(),
        }
    }

    fn one_row(cells: Vec<Option<u8>>, items: &[&str]) -> ResponseMatrix {
        ResponseMatrix::new(
            items.iter().map(|s| s.to_string()).collect(),
            vec![RespondentRow {
                respondent_id: "r1".into(),
                source: "human".into(),
                cells,
            }],
        )
        .unwrap()
    }

    #[test]
    fn symmetric_pattern_scores_zero() {
        // one correct at +b, one incorrect at -b, symmetric prior
        let b = 1.3;
        let matrix = one_row(vec![Some(1), Some(0)], &["hard", "easy"]);
        let fixed = fixed_params(&[("hard", b), ("easy", -b)]);
        let grid = QuadratureGrid::normal(41, 5.0).unwrap();
        let latent = LatentDist::from_grid(grid);
        let scores = eap_scores(&matrix, &fixed, &latent).unwrap();
        assert!(scores.rows[0].theta_hat.abs() < 1e-9);
        assert!(scores.rows[0].se > 0.0);
    }

    #[test]
    fn eap_matches_fine_grid_oracle() {
        let matrix = one_row(
            vec![Some(1), Some(0), Some(1), Some(1), None],
            &["q1", "q2", "q3", "q4", "q5"],
        );
        let fixed = fixed_params(&[
            ("q1", -1.0),
            ("q2", -0.2),
            ("q3", 0.4),
            ("q4", 1.1),
            ("q5", 2.0),
        ]);
        let coarse = LatentDist::from_grid(QuadratureGrid::normal(41, 5.0).unwrap());
        let fine = LatentDist::from_grid(QuadratureGrid::normal(401, 5.0).unwrap());
        let a = eap_scores(&matrix, &fixed, &coarse).unwrap().rows[0].theta_hat;
        let b = eap_scores(&matrix, &fixed, &fine).unwrap().rows[0].theta_hat;
        assert!((a - b).abs() < 0.02, "coarse {a} vs fine {b}");
    }

    #[test]
    fn eap_shrinks_single_item_toward_prior() {
        let matrix = one_row(vec![Some(1)], &["q1"]);
        let fixed = fixed_params(&[("q1", 0.0)]);
        let grid = QuadratureGrid::normal(41, 5.0).unwrap();
        let latent = LatentDist::from_grid(grid);
        let theta = eap_scores(&matrix, &fixed, &latent).unwrap().rows[0].theta_hat;
        // one correct answer pulls up from the prior mean, but not to the edge
        assert!(theta > 0.0 && theta < 5.0);
        assert!(theta < 1.0, "single item cannot dominate the prior: {theta}");
    }

    #[test]
    fn outfit_is_one_at_even_odds() {
        let matrix = one_row(vec![Some(1)], &["q1"]);
        let fixed = fixed_params(&[("q1", 0.0)]);
        let abilities = AbilityEstimates {
            rows: vec![AbilityRow {
                respondent_id: "r1".into(),
                source: "human".into(),
                theta_hat: 0.0,
                se: 1.0,
                n_observed: 1,
                infit: None,
                outfit: None,
            }],
        };
        let fit = person_fit(&matrix, &fixed, &abilities).unwrap();
        assert!((fit.rows[0].outfit.unwrap() - 1.0).abs() < 1e-12);
        assert!((fit.rows[0].infit.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outfit_for_expected_scores_on_easy_and_hard_items() {
        // P = 0.88 and P = 0.12 at theta 0; scores equal to round(P)
        let logit = (0.88f64 / 0.12).ln();
        let matrix = one_row(vec![Some(1), Some(0)], &["easy", "hard"]);
        let fixed = fixed_params(&[("easy", -logit), ("hard", logit)]);
        let abilities = AbilityEstimates {
            rows: vec![AbilityRow {
                respondent_id: "r1".into(),
                source: "human".into(),
                theta_hat: 0.0,
                se: 1.0,
                n_observed: 2,
                infit: None,
                outfit: None,
            }],
        };
        let fit = person_fit(&matrix, &fixed, &abilities).unwrap();
        let expected = 0.12 / 0.88;
        assert!((fit.rows[0].outfit.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn unknown_item_is_error() {
        let matrix = one_row(vec![Some(1)], &["mystery"]);
        let fixed = fixed_params(&[("q1", 0.0)]);
        let grid = QuadratureGrid::normal(41, 5.0).unwrap();
        assert!(estimate_latent_mwu_mem(&matrix, &fixed, &grid, 10, 1e-6, 100).is_err());
    }

    #[test]
    fn weight_updates_keep_probability_vector() {
        use crate::simulate::{sample_thetas, simulate_responses, Component, PopulationSpec};
        let spec = PopulationSpec {
            components: vec![Component {
                label: "sim".into(),
                n: 200,
                mean: 0.3,
                sd: 0.8,
            }],
            missing_rate: 0.0,
            seed: 42,
        };
        let thetas = sample_thetas(&spec);
        let items: Vec<(String, f64)> = (0..10)
            .map(|i| (format!("q{i:02}"), -1.5 + 0.3 * i as f64))
            .collect();
        let matrix = simulate_responses(&thetas, &items, 0.0, 43).unwrap();
        let fixed = ItemParams {
            items: items
                .iter()
                .map(|(id, b)| ItemEstimate {
                    item_id: id.clone(),
                    beta: *b,
                    se: None,
                    status: ItemStatus::Ok,
                })
                .collect(),
        };
        let grid = QuadratureGrid::normal(41, 5.0).unwrap();
        let out = estimate_latent_mwu_mem(&matrix, &fixed, &grid, 10, 1e-6, 100).unwrap();
        for sum in &out.weight_sums {
            assert!((sum - 1.0).abs() < 1e-12, "weight sum {sum}");
        }
        // marginal likelihood is non-decreasing across weight updates
        for pair in out.loglik_history.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "{} -> {}", pair[0], pair[1]);
        }
        assert!(out.latent.grid.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn empty_effective_matrix_is_error() {
        // construct a one-row matrix, then strip it to zero rows
        let matrix = ResponseMatrix::new(
            vec!["q1".into()],
            vec![],
        )
        .unwrap();
        let fixed = fixed_params(&[("q1", 0.0)]);
        let grid = QuadratureGrid::normal(41, 5.0).unwrap();
        let err = estimate_latent_mwu_mem(&matrix, &fixed, &grid, 10, 1e-6, 100).unwrap_err();
        assert!(err.to_string().contains("empty effective matrix"), "{err}");
    }
}
