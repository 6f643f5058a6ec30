//! Generative oracle: draw respondent pools with known proficiencies and
//! simulate their dichotomous responses under the Rasch model.
//!
//! All randomness flows through a single ChaCha8 stream seeded from a
//! user-supplied 64-bit seed, so identical specs produce identical matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{ResponseMatrix, RespondentRow};
use crate::error::{Error, Result};
use crate::rasch::sigmoid;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Component {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// A mixture of normal proficiency components plus a uniform missing-cell
/// rate and the seed that drives all sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub components: Vec<Component>,
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("population spec needs at least one component"));
        }
        for c in &self.components {
            if c.n == 0 {
                return Err(Error::invalid(format!("component '{}' has n = 0", c.label)));
            }
            if !c.mean.is_finite() || !c.sd.is_finite() || c.sd < 0.0 {
                return Err(Error::invalid(format!(
                    "component '{}' has invalid mean/sd",
                    c.label
                )));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::invalid(format!(
                "missing_rate must be in [0,1), got {}",
                self.missing_rate
            )));
        }
        Ok(())
    }

    pub fn component(&self, label: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.label == label)
    }

    pub fn total_n(&self) -> usize {
        self.components.iter().map(|c| c.n).sum()
    }
}

pub fn load_population_spec(path: &std::path::Path) -> Result<PopulationSpec> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let spec: PopulationSpec = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::input(path, format!("invalid population spec: {e}")))?;
    spec.validate().map_err(|e| Error::input(path, e.to_string()))?;
    Ok(spec)
}

/// Draw labelled proficiencies: for each component in order, `n` draws from
/// N(mean, sd^2); sd = 0 yields constants.
pub fn sample_thetas(spec: &PopulationSpec) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.total_n());
    for component in &spec.components {
        if component.sd == 0.0 {
            out.extend((0..component.n).map(|_| (component.label.clone(), component.mean)));
            continue;
        }
        let normal = Normal::new(component.mean, component.sd).expect("validated sd");
        for _ in 0..component.n {
            out.push((component.label.clone(), normal.sample(&mut rng)));
        }
    }
    out
}

/// Simulate Bernoulli responses at rasch_prob(theta, beta) for every cell,
/// masking each cell missing with probability `missing_rate`. A row whose
/// mask comes out all-missing is re-masked once, then rejected as an error.
///
/// `items` are (item_id, difficulty) pairs; respondent ids embed the row
/// index and component label.
pub fn simulate_responses(
    thetas: &[(String, f64)],
    items: &[(String, f64)],
    missing_rate: f64,
    seed: u64,
) -> Result<ResponseMatrix> {
    if items.is_empty() {
        return Err(Error::invalid("cannot simulate without items"));
    }
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::invalid(format!(
            "missing_rate must be in [0,1), got {missing_rate}"
        )));
    }
    for (label, theta) in thetas {
        if !theta.is_finite() {
            return Err(Error::invalid(format!("non-finite theta for '{label}'")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(thetas.len());
    for (index, (label, theta)) in thetas.iter().enumerate() {
        let scores: Vec<u8> = items
            .iter()
            .map(|(_, beta)| {
                let p = sigmoid(theta - beta);
                u8::from(rng.random::<f64>() < p)
            })
            .collect();
        let mut cells: Vec<Option<u8>> = if missing_rate > 0.0 {
            let mask_row = |rng: &mut ChaCha8Rng| -> Vec<bool> {
                (0..items.len())
                    .map(|_| rng.random::<f64>() < missing_rate)
                    .collect()
            };
            let mut mask = mask_row(&mut rng);
            if mask.iter().all(|m| *m) {
                mask = mask_row(&mut rng);
            }
            if mask.iter().all(|m| *m) {
                return Err(Error::invalid(format!(
                    "row {index} ('{label}') masked fully missing twice; lower missing_rate"
                )));
            }
            scores
                .iter()
                .zip(&mask)
                .map(|(s, m)| if *m { None } else { Some(*s) })
                .collect()
        } else {
            scores.into_iter().map(Some).collect()
        };
        // guard against the impossible: keep at least one observed cell
        debug_assert!(cells.iter().any(Option::is_some));
        if cells.iter().all(Option::is_none) {
            cells[0] = Some(0);
        }
        rows.push(RespondentRow {
            respondent_id: format!("{label}_{index:05}"),
            source: label.clone(),
            cells,
        });
    }
    ResponseMatrix::new(items.iter().map(|(id, _)| id.clone()).collect(), rows)
}

/// The seven-component population matching the reported per-model
/// proficiency means and SDs: 100 humans plus 150 respondents per model.
/// Seed defaults to 0; override before sampling.
pub fn paper_analogue_population() -> PopulationSpec {
    let components = [
        ("cohere", 150, -0.40, 0.34),
        ("gpt3.5", 150, 0.27, 0.58),
        ("gpt4", 150, 0.00, 0.31),
        ("gemini", 150, -0.54, 0.29),
        ("llama2", 150, -1.81, 0.44),
        ("llama3", 150, 0.37, 0.51),
        ("human", 100, 0.00, 0.98),
    ];
    PopulationSpec {
        components: components
            .iter()
            .map(|&(label, n, mean, sd)| Component {
                label: label.to_string(),
                n,
                mean,
                sd,
            })
            .collect(),
        missing_rate: 0.0,
        seed: 0,
    }
}
