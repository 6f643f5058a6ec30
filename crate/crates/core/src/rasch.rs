//! Rasch (1PL) model primitives: response probability, log-likelihood,
//! and item information.
//!
//! Everything here is pure and stateless. Probabilities are computed with a
//! sign-branched logistic so that `|theta - beta|` up to ~700 never overflows.

use crate::error::{Error, Result};

/// Latent proficiency in logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta(pub f64);

/// Item difficulty in logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta(pub f64);

impl Theta {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Theta(value))
        } else {
            Err(Error::invalid(format!("theta must be finite, got {value}")))
        }
    }
}

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Beta(value))
        } else {
            Err(Error::invalid(format!("beta must be finite, got {value}")))
        }
    }
}

/// Numerically stable logistic sigmoid.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without intermediate overflow or underflow to -inf
/// for moderate arguments.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability of a correct response under the Rasch model.
#[inline]
pub fn rasch_prob(theta: Theta, beta: Beta) -> f64 {
    sigmoid(theta.0 - beta.0)
}

/// Log-likelihood of a dichotomous response pattern at a given theta.
/// Missing cells (`None`) contribute zero; an all-missing pattern has
/// log-likelihood 0.
pub fn response_loglik(pattern: &[Option<u8>], theta: Theta, betas: &[Beta]) -> Result<f64> {
    if pattern.len() != betas.len() {
        return Err(Error::invalid(format!(
            "pattern length {} does not match item count {}",
            pattern.len(),
            betas.len()
        )));
    }
    let mut ll = 0.0;
    for (cell, beta) in pattern.iter().zip(betas) {
        match cell {
            Some(1) => ll += log_sigmoid(theta.0 - beta.0),
            Some(_) => ll += log_sigmoid(beta.0 - theta.0),
            None => {}
        }
    }
    Ok(ll)
}

/// Fisher information of one item at one theta: P(1-P).
#[inline]
pub fn item_information(theta: Theta, beta: Beta) -> f64 {
    let p = rasch_prob(theta, beta);
    p * (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prob_at_equal_theta_beta_is_half() {
        assert_eq!(rasch_prob(Theta(0.0), Beta(0.0)), 0.5);
        assert_eq!(rasch_prob(Theta(2.5), Beta(2.5)), 0.5);
    }

    #[test]
    fn prob_one_logit_above() {
        // exp(1)/(1+exp(1)) evaluated independently
        let p = rasch_prob(Theta(1.0), Beta(0.0));
        assert!((p - 0.731059).abs() < 5e-7, "p = {p}");
    }

    #[test]
    fn prob_against_odds_of_three() {
        // sigma(-ln 3) = 1/(1+3)
        let p = rasch_prob(Theta(0.0), Beta(3f64.ln()));
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn prob_survives_extreme_arguments() {
        assert_eq!(rasch_prob(Theta(700.0), Beta(0.0)), 1.0);
        assert_eq!(rasch_prob(Theta(-700.0), Beta(0.0)), 0.0);
        assert!(rasch_prob(Theta(350.0), Beta(-350.0)).is_finite());
    }

    #[test]
    fn loglik_single_correct_item() {
        let ll = response_loglik(&[Some(1)], Theta(0.0), &[Beta(0.0)]).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
        assert!((ll + 0.693147).abs() < 5e-7);
    }

    #[test]
    fn loglik_all_missing_is_zero() {
        let ll = response_loglik(&[None, None, None], Theta(1.3), &[Beta(0.0); 3]).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn loglik_two_items_at_half() {
        let ll = response_loglik(&[Some(1), Some(0)], Theta(0.0), &[Beta(0.0), Beta(0.0)]).unwrap();
        assert!((ll + 1.386294).abs() < 5e-7);
    }

    #[test]
    fn loglik_length_mismatch_is_error() {
        assert!(response_loglik(&[Some(1)], Theta(0.0), &[Beta(0.0), Beta(1.0)]).is_err());
    }

    #[test]
    fn information_max_at_theta_equals_beta() {
        assert_eq!(item_information(Theta(0.0), Beta(0.0)), 0.25);
    }

    #[test]
    fn information_far_from_beta() {
        let info = item_information(Theta(10.0), Beta(0.0));
        assert!((info - 4.54e-5).abs() < 1e-7, "info = {info}");
    }

    #[test]
    fn loglik_gradient_matches_finite_differences() {
        // d/dtheta loglik = sum over observed of (x - P)
        let pattern = [Some(1), Some(0), None, Some(1), Some(0)];
        let betas: Vec<Beta> = [-1.2, 0.3, 0.0, 0.9, 2.0].iter().map(|&b| Beta(b)).collect();
        for &t in &[-2.0, -0.5, 0.0, 0.7, 1.9] {
            let analytic: f64 = pattern
                .iter()
                .zip(&betas)
                .filter_map(|(c, b)| c.map(|x| x as f64 - rasch_prob(Theta(t), *b)))
                .sum();
            let h = 1e-5;
            let up = response_loglik(&pattern, Theta(t + h), &betas).unwrap();
            let dn = response_loglik(&pattern, Theta(t - h), &betas).unwrap();
            let numeric = (up - dn) / (2.0 * h);
            assert!((analytic - numeric).abs() < 1e-6, "at theta {t}");
        }
    }

    proptest! {
        #[test]
        fn complementarity(t in -50.0..50.0f64, b in -50.0..50.0f64) {
            let sum = rasch_prob(Theta(t), Beta(b)) + rasch_prob(Theta(b), Beta(t));
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn monotone_in_theta(t in -20.0..20.0f64, b in -20.0..20.0f64, d in 1e-6..5.0f64) {
            prop_assert!(rasch_prob(Theta(t + d), Beta(b)) > rasch_prob(Theta(t), Beta(b)));
            prop_assert!(rasch_prob(Theta(t), Beta(b + d)) < rasch_prob(Theta(t), Beta(b)));
        }

        #[test]
        fn translation_invariance(t in -20.0..20.0f64, b in -20.0..20.0f64, c in -20.0..20.0f64) {
            let p0 = rasch_prob(Theta(t), Beta(b));
            let p1 = rasch_prob(Theta(t + c), Beta(b + c));
            prop_assert!((p0 - p1).abs() <= 1e-9);
        }

        #[test]
        fn information_symmetric(t in -20.0..20.0f64, b in -20.0..20.0f64) {
            let a = item_information(Theta(t), Beta(b));
            let c = item_information(Theta(b), Beta(t));
            prop_assert!((a - c).abs() <= 1e-15);
        }
    }
}
