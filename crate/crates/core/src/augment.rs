//! Synthetic-respondent augmentation: centroid matching of humans to their
//! nearest synthetic respondents, mixing-proportion learning, proportional
//! resampling, and construction of the experiment pools.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{RespondentRow, ResponseMatrix};
use crate::error::{Error, Result};

/// One human centroid paired with its nearest synthetic respondent.
/// `distance` is the disagreement fraction over jointly observed items.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchPair {
    pub human_id: String,
    pub synthetic_id: String,
    pub distance: f64,
    pub overlap: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchPlan {
    pub pairs: Vec<MatchPair>,
}

impl MatchPlan {
    pub fn synthetic_for(&self, human_id: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.human_id == human_id)
            .map(|p| p.synthetic_id.as_str())
    }
}

/// Per-source sampling fractions, normalized to sum 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingProportions {
    pub fractions: Vec<SourceFraction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceFraction {
    pub source: String,
    pub fraction: f64,
}

impl MixingProportions {
    /// Normalize raw non-negative weights into fractions summing to 1,
    /// sorted by source label.
    pub fn from_weights(weights: &BTreeMap<String, f64>) -> Result<Self> {
        let total: f64 = weights.values().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid("mixing weights must sum to a positive value"));
        }
        if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("mixing weights must be non-negative"));
        }
        Ok(MixingProportions {
            fractions: weights
                .iter()
                .map(|(source, w)| SourceFraction {
                    source: source.clone(),
                    fraction: w / total,
                })
                .collect(),
        })
    }

    pub fn fraction_of(&self, source: &str) -> f64 {
        self.fractions
            .iter()
            .find(|f| f.source == source)
            .map_or(0.0, |f| f.fraction)
    }

    pub fn sum(&self) -> f64 {
        self.fractions.iter().map(|f| f.fraction).sum()
    }
}

/// Experiment conditions; `benchmark` is all humans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Benchmark,
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match self {
            Condition::Benchmark => "benchmark",
            Condition::Exp1 => "exp1",
            Condition::Exp2 => "exp2",
            Condition::Exp3 => "exp3",
            Condition::Exp4 => "exp4",
        }
    }

    pub fn all() -> [Condition; 5] {
        [
            Condition::Benchmark,
            Condition::Exp1,
            Condition::Exp2,
            Condition::Exp3,
            Condition::Exp4,
        ]
    }
}

/// One condition's respondent pool with its per-source composition.
#[derive(Debug, Clone)]
pub struct ExperimentPool {
    pub condition: Condition,
    pub matrix: ResponseMatrix,
    pub composition: BTreeMap<String, usize>,
    pub seed: u64,
}

/// Disagreement count and overlap over jointly observed items.
fn hamming_overlap(a: &RespondentRow, b: &RespondentRow) -> (usize, usize) {
    let mut disagree = 0;
    let mut overlap = 0;
    for (ca, cb) in a.cells.iter().zip(&b.cells) {
        if let (Some(x), Some(y)) = (ca, cb) {
            overlap += 1;
            if x != y {
                disagree += 1;
            }
        }
    }
    (disagree, overlap)
}

/// For each human, find the nearest synthetic respondent by normalized
/// Hamming distance over jointly observed items. Ties go to the
/// lexicographically smallest synthetic_id; matching is with replacement.
pub fn match_centroids(
    humans: &ResponseMatrix,
    synthetic: &ResponseMatrix,
) -> Result<MatchPlan> {
    if humans.item_ids() != synthetic.item_ids() {
        return Err(Error::invalid(
            "human and synthetic pools must share the same item columns",
        ));
    }
    if humans.n_respondents() == 0 || synthetic.n_respondents() == 0 {
        return Err(Error::invalid("matching needs non-empty pools"));
    }
    // Iterate synthetics in id order so that "first strictly closer wins"
    // doubles as the lexicographic tie rule, independent of row order.
    let mut synth_order: Vec<&RespondentRow> = synthetic.rows().iter().collect();
    synth_order.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));

    let mut pairs = Vec::with_capacity(humans.n_respondents());
    for human in humans.rows() {
        let mut best: Option<(&RespondentRow, usize, usize)> = None;
        for synth in &synth_order {
            let (disagree, overlap) = hamming_overlap(human, synth);
            if overlap == 0 {
                return Err(Error::invalid(format!(
                    "human '{}' and synthetic '{}' share no observed items",
                    human.respondent_id, synth.respondent_id
                )));
            }
            // compare disagree/overlap fractions exactly via cross products
            let closer = match &best {
                None => true,
                Some((_, bd, bo)) => (disagree * bo) < (bd * overlap),
            };
            if closer {
                best = Some((synth, disagree, overlap));
            }
        }
        let (synth, disagree, overlap) = best.expect("non-empty pool");
        pairs.push(MatchPair {
            human_id: human.respondent_id.clone(),
            synthetic_id: synth.respondent_id.clone(),
            distance: disagree as f64 / overlap as f64,
            overlap,
        });
    }
    Ok(MatchPlan { pairs })
}

/// Source fractions of the matched multiset, normalized.
pub fn learn_proportions(
    plan: &MatchPlan,
    synthetic: &ResponseMatrix,
) -> Result<MixingProportions> {
    if plan.pairs.is_empty() {
        return Err(Error::invalid("cannot learn proportions from an empty plan"));
    }
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for pair in &plan.pairs {
        let source = synthetic
            .rows()
            .iter()
            .find(|r| r.respondent_id == pair.synthetic_id)
            .map(|r| r.source.clone())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "matched synthetic '{}' is not in the pool",
                    pair.synthetic_id
                ))
            })?;
        *counts.entry(source).or_insert(0.0) += 1.0;
    }
    MixingProportions::from_weights(&counts)
}

/// Integer seat counts by largest-remainder apportionment of `n * fraction`,
/// ties on equal remainders broken toward the lexicographically smallest
/// source. Sources are keyed in sorted order.
pub fn apportion(proportions: &MixingProportions, n: usize) -> BTreeMap<String, usize> {
    let mut entries: Vec<(String, f64)> = proportions
        .fractions
        .iter()
        .map(|f| (f.source.clone(), f.fraction))
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut remainders: Vec<(String, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (source, fraction) in &entries {
        let quota = n as f64 * fraction;
        let base = quota.floor() as usize;
        counts.insert(source.clone(), base);
        remainders.push((source.clone(), quota - base as f64));
        assigned += base;
    }
    let mut leftover = n.saturating_sub(assigned);
    // stable sort by descending remainder keeps the lexicographic order
    // among equal remainders
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite remainders"));
    for (source, _) in remainders {
        if leftover == 0 {
            break;
        }
        *counts.get_mut(&source).expect("seeded above") += 1;
        leftover -= 1;
    }
    counts.retain(|_, c| *c > 0);
    counts
}

/// Draw `n` synthetic respondents with replacement, apportioned across
/// sources by the mixing proportions. Sampled rows get a `#r<k>` suffix so
/// respondent ids stay unique while preserving provenance.
pub fn resample_pool(
    synthetic: &ResponseMatrix,
    proportions: &MixingProportions,
    n: usize,
    seed: u64,
) -> Result<ResponseMatrix> {
    if n == 0 {
        return Err(Error::invalid("resample size must be positive"));
    }
    let counts = apportion(proportions, n);
    // group source rows by sorted respondent_id for row-order independence
    let mut by_source: BTreeMap<&str, Vec<&RespondentRow>> = BTreeMap::new();
    for row in synthetic.rows() {
        by_source.entry(row.source.as_str()).or_default().push(row);
    }
    for rows in by_source.values_mut() {
        rows.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));
    }
    for source in counts.keys() {
        if !by_source.contains_key(source.as_str()) {
            return Err(Error::invalid(format!(
                "source '{source}' has positive proportion but no synthetic rows"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut draw_index = 0usize;
    for (source, count) in &counts {
        let candidates = &by_source[source.as_str()];
        for _ in 0..*count {
            let pick = candidates[rng.random_range(0..candidates.len())];
            rows.push(RespondentRow {
                respondent_id: format!("{}#r{draw_index}", pick.respondent_id),
                source: pick.source.clone(),
                cells: pick.cells.clone(),
            });
            draw_index += 1;
        }
    }
    ResponseMatrix::new(synthetic.item_ids().to_vec(), rows)
}

/// The designated half-sample: first ceil(N/2) humans in respondent_id
/// order, unless an explicit id list is supplied.
pub fn half_sample(humans: &ResponseMatrix, explicit: Option<&[String]>) -> Result<ResponseMatrix> {
    let rows: Vec<RespondentRow> = match explicit {
        Some(ids) => ids
            .iter()
            .map(|id| {
                humans
                    .rows()
                    .iter()
                    .find(|r| &r.respondent_id == id)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("half-sample id '{id}' not found")))
            })
            .collect::<Result<_>>()?,
        None => {
            let sorted = humans.sorted_by_respondent_id();
            let take = humans.n_respondents().div_ceil(2);
            sorted.rows()[..take].to_vec()
        }
    };
    ResponseMatrix::new(humans.item_ids().to_vec(), rows)
}

/// Assemble one experiment condition's respondent pool.
///
/// benchmark: all humans; exp1: the half-sample; exp2: half-sample plus its
/// matched synthetic respondents; exp3: half-sample plus a proportional
/// resample of equal size; exp4: a proportional resample the size of the
/// benchmark.
pub fn build_experiment_pool(
    condition: Condition,
    humans: &ResponseMatrix,
    synthetic: &ResponseMatrix,
    plan: Option<&MatchPlan>,
    proportions: Option<&MixingProportions>,
    seed: u64,
    explicit_half: Option<&[String]>,
) -> Result<ExperimentPool> {
    if humans.item_ids() != synthetic.item_ids() {
        return Err(Error::invalid(
            "human and synthetic pools must share the same item columns",
        ));
    }
    let matrix = match condition {
        Condition::Benchmark => humans.clone(),
        Condition::Exp1 => half_sample(humans, explicit_half)?,
        Condition::Exp2 => {
            let plan = plan.ok_or_else(|| Error::invalid("exp2 requires a match plan"))?;
            let half = half_sample(humans, explicit_half)?;
            let mut rows = half.rows().to_vec();
            for (k, human) in half.rows().iter().enumerate() {
                let synth_id = plan.synthetic_for(&human.respondent_id).ok_or_else(|| {
                    Error::invalid(format!(
                        "match plan has no pair for human '{}'",
                        human.respondent_id
                    ))
                })?;
                let synth = synthetic
                    .rows()
                    .iter()
                    .find(|r| r.respondent_id == synth_id)
                    .ok_or_else(|| {
                        Error::invalid(format!("matched synthetic '{synth_id}' not in pool"))
                    })?;
                rows.push(RespondentRow {
                    respondent_id: format!("{synth_id}#m{k}"),
                    source: synth.source.clone(),
                    cells: synth.cells.clone(),
                });
            }
            ResponseMatrix::new(humans.item_ids().to_vec(), rows)?
        }
        Condition::Exp3 => {
            let proportions =
                proportions.ok_or_else(|| Error::invalid("exp3 requires mixing proportions"))?;
            let half = half_sample(humans, explicit_half)?;
            let resampled =
                resample_pool(synthetic, proportions, half.n_respondents(), seed)?;
            half.concat(&resampled)?
        }
        Condition::Exp4 => {
            let proportions =
                proportions.ok_or_else(|| Error::invalid("exp4 requires mixing proportions"))?;
            resample_pool(synthetic, proportions, humans.n_respondents(), seed)?
        }
    };
    let composition = matrix.source_counts();
    Ok(ExperimentPool {
        condition,
        matrix,
        composition,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(items: usize, rows: &[(&str, &str, &[Option<u8>])]) -> ResponseMatrix {
        ResponseMatrix::new(
            (0..items).map(|i| format!("q{i:02}")).collect(),
            rows.iter()
                .map(|(id, source, cells)| RespondentRow {
                    respondent_id: id.to_string(),
                    source: source.to_string(),
                    cells: cells.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_respondent_matches_at_zero_distance() {
        let pattern: Vec<Option<u8>> = (0..20).map(|i| Some((i % 2) as u8)).collect();
        let other: Vec<Option<u8>> = (0..20).map(|i| Some(((i + 1) % 2) as u8)).collect();
        let humans = matrix(20, &[("h1", "human", &pattern)]);
        let synthetic = matrix(
            20,
            &[("s1", "gpt4", &other), ("s3", "gpt3.5", &pattern)],
        );
        let plan = match_centroids(&humans, &synthetic).unwrap();
        assert_eq!(plan.pairs[0].synthetic_id, "s3");
        assert_eq!(plan.pairs[0].distance, 0.0);
        assert_eq!(plan.pairs[0].overlap, 20);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        // two synthetics both at distance 1/10
        let human: Vec<Option<u8>> = vec![Some(1); 10];
        let mut off_a = human.clone();
        off_a[0] = Some(0);
        let mut off_b = human.clone();
        off_b[9] = Some(0);
        let humans = matrix(10, &[("h1", "human", &human)]);
        let synthetic = matrix(10, &[("s10", "a", &off_b), ("s01", "b", &off_a)]);
        let plan = match_centroids(&humans, &synthetic).unwrap();
        assert_eq!(plan.pairs[0].synthetic_id, "s01");
        assert!((plan.pairs[0].distance - 0.1).abs() < 1e-15);
    }

    #[test]
    fn matching_is_row_order_invariant() {
        let humans = matrix(
            4,
            &[
                ("h1", "human", &[Some(1), Some(0), Some(1), None]),
                ("h2", "human", &[Some(0), Some(0), None, Some(1)]),
            ],
        );
        let a = matrix(
            4,
            &[
                ("s1", "x", &[Some(1), Some(1), Some(1), Some(0)]),
                ("s2", "y", &[Some(0), Some(0), Some(1), Some(1)]),
                ("s3", "z", &[Some(1), Some(0), Some(0), None]),
            ],
        );
        let b = matrix(
            4,
            &[
                ("s3", "z", &[Some(1), Some(0), Some(0), None]),
                ("s1", "x", &[Some(1), Some(1), Some(1), Some(0)]),
                ("s2", "y", &[Some(0), Some(0), Some(1), Some(1)]),
            ],
        );
        let plan_a = match_centroids(&humans, &a).unwrap();
        let plan_b = match_centroids(&humans, &b).unwrap();
        for (pa, pb) in plan_a.pairs.iter().zip(&plan_b.pairs) {
            assert_eq!(pa.synthetic_id, pb.synthetic_id);
            assert_eq!(pa.distance, pb.distance);
        }
    }

    #[test]
    fn brute_force_two_by_three() {
        // hand-enumerable 2 humans x 3 synthetics over 4 items
        let humans = matrix(
            4,
            &[
                ("h1", "human", &[Some(1), Some(1), Some(0), Some(0)]),
                ("h2", "human", &[Some(0), Some(1), Some(1), Some(1)]),
            ],
        );
        let synthetic = matrix(
            4,
            &[
                ("s1", "a", &[Some(1), Some(0), Some(0), Some(0)]), // d(h1)=1/4 d(h2)=3/4
                ("s2", "b", &[Some(0), Some(1), Some(1), Some(0)]), // d(h1)=2/4 d(h2)=1/4
                ("s3", "c", &[Some(1), Some(1), Some(1), Some(1)]), // d(h1)=2/4 d(h2)=1/4
            ],
        );
        let plan = match_centroids(&humans, &synthetic).unwrap();
        assert_eq!(plan.pairs[0].synthetic_id, "s1");
        // h2 ties between s2 and s3 at 1/4 -> s2 by id
        assert_eq!(plan.pairs[1].synthetic_id, "s2");
    }

    #[test]
    fn zero_joint_coverage_is_error() {
        let humans = matrix(2, &[("h1", "human", &[Some(1), None])]);
        let synthetic = matrix(2, &[("s1", "a", &[None, Some(1)])]);
        assert!(match_centroids(&humans, &synthetic).is_err());
    }

    #[test]
    fn proportions_from_matched_multisets() {
        let rows: Vec<Option<u8>> = vec![Some(1), Some(0)];
        let synthetic = matrix(
            2,
            &[
                ("sa1", "A", &rows),
                ("sa2", "A", &rows),
                ("sb1", "B", &rows),
                ("sb2", "B", &rows),
            ],
        );
        let plan = MatchPlan {
            pairs: ["sa1", "sa2", "sb1", "sb2"]
                .iter()
                .enumerate()
                .map(|(i, s)| MatchPair {
                    human_id: format!("h{i}"),
                    synthetic_id: s.to_string(),
                    distance: 0.0,
                    overlap: 2,
                })
                .collect(),
        };
        let p = learn_proportions(&plan, &synthetic).unwrap();
        assert!((p.fraction_of("A") - 0.5).abs() < 1e-12);
        assert!((p.fraction_of("B") - 0.5).abs() < 1e-12);

        let plan2 = MatchPlan {
            pairs: ["sa1", "sa2", "sa1", "sb1"]
                .iter()
                .enumerate()
                .map(|(i, s)| MatchPair {
                    human_id: format!("h{i}"),
                    synthetic_id: s.to_string(),
                    distance: 0.0,
                    overlap: 2,
                })
                .collect(),
        };
        let p2 = learn_proportions(&plan2, &synthetic).unwrap();
        assert!((p2.fraction_of("A") - 0.75).abs() < 1e-12);
        assert!((p2.fraction_of("B") - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reported_proportions_renormalize() {
        // published matched-pool shares sum to 0.73 and must be renormalized
        let mut weights = BTreeMap::new();
        weights.insert("gpt3.5".to_string(), 0.36);
        weights.insert("gemini".to_string(), 0.12);
        weights.insert("llama3".to_string(), 0.08);
        weights.insert("gpt4".to_string(), 0.08);
        weights.insert("cohere".to_string(), 0.06);
        weights.insert("llama2".to_string(), 0.03);
        let raw_sum: f64 = weights.values().sum();
        assert!((raw_sum - 0.73).abs() < 1e-12);
        let p = MixingProportions::from_weights(&weights).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-9);
        assert!((p.fraction_of("gpt3.5") - 0.36 / 0.73).abs() < 1e-12);
    }

    #[test]
    fn apportionment_exact_and_tied() {
        let p = MixingProportions {
            fractions: vec![
                SourceFraction { source: "A".into(), fraction: 0.5 },
                SourceFraction { source: "B".into(), fraction: 0.3 },
                SourceFraction { source: "C".into(), fraction: 0.2 },
            ],
        };
        let counts = apportion(&p, 10);
        assert_eq!(counts["A"], 5);
        assert_eq!(counts["B"], 3);
        assert_eq!(counts["C"], 2);

        let thirds = MixingProportions {
            fractions: ["A", "B", "C"]
                .iter()
                .map(|s| SourceFraction {
                    source: s.to_string(),
                    fraction: 1.0 / 3.0,
                })
                .collect(),
        };
        let counts = apportion(&thirds, 10);
        assert_eq!(counts["A"], 4, "extra seat goes to the smallest source");
        assert_eq!(counts["B"], 3);
        assert_eq!(counts["C"], 3);
    }

    #[test]
    fn resampling_is_deterministic_and_traceable() {
        let rows: Vec<(String, String)> = (0..12)
            .map(|i| {
                let source = if i < 8 { "A" } else { "B" };
                (format!("s{i:02}"), source.to_string())
            })
            .collect();
        let synthetic = ResponseMatrix::new(
            vec!["q0".into(), "q1".into()],
            rows.iter()
                .map(|(id, source)| RespondentRow {
                    respondent_id: id.clone(),
                    source: source.clone(),
                    cells: vec![Some(1), Some(0)],
                })
                .collect(),
        )
        .unwrap();
        let p = MixingProportions {
            fractions: vec![
                SourceFraction { source: "A".into(), fraction: 0.75 },
                SourceFraction { source: "B".into(), fraction: 0.25 },
            ],
        };
        let a = resample_pool(&synthetic, &p, 8, 17).unwrap();
        let b = resample_pool(&synthetic, &p, 8, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.source_counts()["A"], 6);
        assert_eq!(a.source_counts()["B"], 2);
        for row in a.rows() {
            let origin = row.respondent_id.split('#').next().unwrap();
            assert!(
                synthetic.rows().iter().any(|r| r.respondent_id == origin),
                "row {} must trace to a pool row",
                row.respondent_id
            );
        }
    }

    #[test]
    fn missing_source_is_error() {
        let synthetic = matrix(2, &[("s1", "A", &[Some(1), Some(0)])]);
        let p = MixingProportions {
            fractions: vec![
                SourceFraction { source: "A".into(), fraction: 0.5 },
                SourceFraction { source: "Z".into(), fraction: 0.5 },
            ],
        };
        assert!(resample_pool(&synthetic, &p, 4, 1).is_err());
        assert!(resample_pool(&synthetic, &p, 0, 1).is_err());
    }

    #[test]
    fn experiment_pool_sizes() {
        let human_rows: Vec<(String, String)> =
            (0..100).map(|i| (format!("h{i:03}"), "human".to_string())).collect();
        let humans = ResponseMatrix::new(
            vec!["q0".into(), "q1".into(), "q2".into()],
            human_rows
                .iter()
                .enumerate()
                .map(|(i, (id, source))| RespondentRow {
                    respondent_id: id.clone(),
                    source: source.clone(),
                    cells: vec![Some((i % 2) as u8), Some(((i + 1) % 2) as u8), Some(1)],
                })
                .collect(),
        )
        .unwrap();
        let synthetic = ResponseMatrix::new(
            vec!["q0".into(), "q1".into(), "q2".into()],
            (0..30)
                .map(|i| RespondentRow {
                    respondent_id: format!("s{i:03}"),
                    source: if i % 2 == 0 { "gpt3.5" } else { "gemini" }.to_string(),
                    cells: vec![Some((i % 2) as u8), Some(1), Some(0)],
                })
                .collect(),
        )
        .unwrap();
        let half = half_sample(&humans, None).unwrap();
        assert_eq!(half.n_respondents(), 50);
        let plan = match_centroids(&half, &synthetic).unwrap();
        let proportions = learn_proportions(&plan, &synthetic).unwrap();

        let sizes: Vec<(Condition, usize)> = Condition::all()
            .iter()
            .map(|&c| {
                let pool = build_experiment_pool(
                    c,
                    &humans,
                    &synthetic,
                    Some(&plan),
                    Some(&proportions),
                    99,
                    None,
                )
                .unwrap();
                let total: usize = pool.composition.values().sum();
                assert_eq!(total, pool.matrix.n_respondents());
                (c, pool.matrix.n_respondents())
            })
            .collect();
        assert_eq!(sizes[0], (Condition::Benchmark, 100));
        assert_eq!(sizes[1], (Condition::Exp1, 50));
        assert_eq!(sizes[2], (Condition::Exp2, 100));
        assert_eq!(sizes[3], (Condition::Exp3, 100));
        assert_eq!(sizes[4], (Condition::Exp4, 100));

        let exp1 = build_experiment_pool(Condition::Exp1, &humans, &synthetic, None, None, 1, None)
            .unwrap();
        assert_eq!(exp1.composition.get("human"), Some(&50));
        let exp3 = build_experiment_pool(
            Condition::Exp3,
            &humans,
            &synthetic,
            None,
            Some(&proportions),
            1,
            None,
        )
        .unwrap();
        assert_eq!(exp3.composition.get("human"), Some(&50));
        let synth_total: usize = exp3
            .composition
            .iter()
            .filter(|(k, _)| k.as_str() != "human")
            .map(|(_, v)| v)
            .sum();
        assert_eq!(synth_total, 50);
        let exp4 = build_experiment_pool(
            Condition::Exp4,
            &humans,
            &synthetic,
            None,
            Some(&proportions),
            1,
            None,
        )
        .unwrap();
        assert_eq!(exp4.composition.get("human"), None);
    }

    #[test]
    fn missing_plan_or_proportions_are_errors() {
        let humans = matrix(2, &[("h1", "human", &[Some(1), Some(0)])]);
        let synthetic = matrix(2, &[("s1", "A", &[Some(1), Some(0)])]);
        assert!(build_experiment_pool(
            Condition::Exp2, &humans, &synthetic, None, None, 1, None
        )
        .is_err());
        assert!(build_experiment_pool(
            Condition::Exp3, &humans, &synthetic, None, None, 1, None
        )
        .is_err());
        assert!(build_experiment_pool(
            Condition::Exp4, &humans, &synthetic, None, None, 1, None
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn apportion_counts_sum_to_n(
            weights in proptest::collection::btree_map("[a-f]", 0.01..10.0f64, 1..6),
            n in 1..200usize,
        ) {
            let p = MixingProportions::from_weights(&weights).unwrap();
            prop_assert!((p.sum() - 1.0).abs() <= 1e-9);
            let counts = apportion(&p, n);
            let total: usize = counts.values().sum();
            prop_assert_eq!(total, n);
        }
    }
}
