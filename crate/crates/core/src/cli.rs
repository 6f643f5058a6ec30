//! Command-line entry point: calibrate, fpc, experiment, simulate, report.
//!
//! Exit codes: 0 success, 1 input/config error, 2 completed with warnings
//! (non-convergence). Every stochastic subcommand takes an explicit seed and
//! records it in its outputs; replays are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::{
    build_experiment_pool, half_sample, learn_proportions, match_centroids, Condition,
    ExperimentPool, MatchPlan, MixingProportions,
};
use crate::calibrate::{anchor_to, calibrate_mml, Calibration, ItemParams, QuadratureGrid};
use crate::dataio::{
    self, load_item_bank, load_responses, to_canonical_json, write_bundle, LatentSummary,
    Provenance, ResponseFormat, ResponseMatrix, ResultBundle,
};
use crate::error::{Error, Result};
use crate::evaluate::{compare_calibrations, dist_stats, ComparisonReport, DistStats};
use crate::fpc::{eap_scores, estimate_latent_mwu_mem, person_fit, AbilityEstimates, MwuOutcome};
use crate::report::{render_experiment_report, render_wright_map, MapFormat, ReportFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 1;
pub const EXIT_WARNINGS: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "irtforge", version, about = "Rasch calibration and synthetic-respondent augmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Cap worker threads; results are bit-identical for any value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate item difficulties from a response matrix (MML-EM).
    Calibrate(CalibrateArgs),
    /// Fixed-parameter calibration: latent distribution and EAP scores.
    Fpc(FpcArgs),
    /// Run the benchmark plus the four augmentation experiments end to end.
    Experiment(ExperimentArgs),
    /// Simulate respondent pools from a population spec.
    Simulate(SimulateArgs),
    /// Re-render the Wright map from a stored result bundle.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Wide,
    Long,
}

impl From<FormatArg> for ResponseFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Wide => ResponseFormat::WideCsv,
            FormatArg::Long => ResponseFormat::LongJsonl,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimationOpts {
    /// Quadrature node count (odd, >= 11).
    #[arg(long, default_value_t = 41)]
    pub grid_count: usize,
    /// Quadrature half-range in logits.
    #[arg(long, default_value_t = 5.0)]
    pub grid_span: f64,
    /// Convergence tolerance on the largest parameter change.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_cycles: u32,
    /// Weight updates per EM cycle in fixed-parameter runs.
    #[arg(long, default_value_t = 10)]
    pub inner_updates: u32,
}

impl EstimationOpts {
    fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::normal(self.grid_count, self.grid_span)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    pub format: FormatArg,
    #[command(flatten)]
    pub estimation: EstimationOpts,
    /// Recorded in output provenance; calibration itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FpcArgs {
    #[arg(long)]
    pub responses: PathBuf,
    /// Item bank with fixed_difficulty on every item.
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    pub format: FormatArg,
    #[command(flatten)]
    pub estimation: EstimationOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Human respondent pool.
    #[arg(long)]
    pub humans: PathBuf,
    /// Synthetic respondent pool.
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    pub format: FormatArg,
    #[command(flatten)]
    pub estimation: EstimationOpts,
    #[arg(long)]
    pub seed: u64,
    /// Report anchored RMSE in the text table instead of raw RMSE.
    #[arg(long)]
    pub anchor: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Population spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Item bank with fixed_difficulty on every item.
    #[arg(long)]
    pub bank: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Result bundle JSON produced by calibrate/fpc/experiment.
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT_ERROR,
            };
            let _ = err.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        // ignore the error when a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let outcome = match cli.command {
        Command::Calibrate(args) => cmd_calibrate(&args),
        Command::Fpc(args) => cmd_fpc(&args),
        Command::Experiment(args) => cmd_experiment(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match outcome {
        Ok(warned) => {
            if warned {
                EXIT_WARNINGS
            } else {
                EXIT_OK
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_INPUT_ERROR
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// EAP abilities over the ok-item columns, with person fit filled in.
fn score_with(
    matrix: &ResponseMatrix,
    params: &ItemParams,
    latent: &crate::fpc::LatentDist,
) -> Result<AbilityEstimates> {
    let abilities = eap_scores(matrix, params, latent)?;
    person_fit(matrix, params, &abilities)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<bool> {
    let bank = load_item_bank(&args.bank)?;
    let matrix = load_responses(&args.responses, args.format.into(), Some(&bank))?;
    let grid = args.estimation.grid()?;
    let calibration = calibrate_mml(&matrix, &grid, args.estimation.tol, args.estimation.max_cycles)?;

    // score persons against the freshly calibrated ok items
    let ok_ids = calibration.params.ok_item_ids();
    let latent = crate::fpc::LatentDist::from_grid(grid.clone());
    let ability = if ok_ids.is_empty() {
        None
    } else {
        let scored = score_with(&matrix.restrict_columns(&ok_ids)?, &calibration.params, &latent)?;
        Some(scored)
    };

    let (mean, sd, kurtosis) = grid.moments();
    let bundle = ResultBundle {
        item_params: calibration.params.clone(),
        latent: LatentSummary { mean, sd, kurtosis },
        ability: ability.clone(),
        convergence: calibration.convergence.clone(),
        seed: args.seed,
        provenance: Provenance::new()
            .with_input(&args.responses)?
            .with_input(&args.bank)?,
    };

    ensure_out_dir(&args.out)?;
    write_bundle(&bundle, &args.out.join("bundle.json"))?;
    let empty = AbilityEstimates { rows: vec![] };
    let ability_ref = ability.as_ref().unwrap_or(&empty);
    write_text(
        &args.out.join("wright_map.txt"),
        &render_wright_map(&calibration.params, ability_ref, MapFormat::Text)?,
    )?;
    write_text(
        &args.out.join("wright_map.svg"),
        &render_wright_map(&calibration.params, ability_ref, MapFormat::Svg)?,
    )?;
    if !calibration.convergence.converged {
        log::warn!(
            "calibration did not converge after {} cycles (max change {:.3e})",
            calibration.convergence.cycles,
            calibration.convergence.max_param_change
        );
    }
    Ok(!calibration.convergence.converged)
}

/// Per-source fixed-parameter results: each source gets its own latent
/// distribution and EAP scores under it.
struct SourceRun {
    latent: MwuOutcome,
    abilities: AbilityEstimates,
    stats: DistStats,
}

fn fpc_by_source(
    matrix: &ResponseMatrix,
    params: &ItemParams,
    grid: &QuadratureGrid,
    opts: &EstimationOpts,
) -> Result<BTreeMap<String, SourceRun>> {
    let mut runs = BTreeMap::new();
    for source in matrix.source_counts().keys() {
        let rows: Vec<_> = matrix
            .rows()
            .iter()
            .filter(|r| &r.source == source)
            .cloned()
            .collect();
        let sub = ResponseMatrix::new(matrix.item_ids().to_vec(), rows)?;
        let latent = estimate_latent_mwu_mem(
            &sub,
            params,
            grid,
            opts.inner_updates,
            1e-6,
            opts.max_cycles,
        )?;
        let abilities = score_with(&sub, params, &latent.latent)?;
        let thetas: Vec<f64> = abilities.rows.iter().map(|r| r.theta_hat).collect();
        let stats = dist_stats(&thetas, source)?;
        runs.insert(source.clone(), SourceRun { latent, abilities, stats });
    }
    Ok(runs)
}

fn cmd_fpc(args: &FpcArgs) -> Result<bool> {
    let bank = load_item_bank(&args.bank)?;
    let fixed = bank.fixed_item_params()?;
    let matrix = load_responses(&args.responses, args.format.into(), Some(&bank))?;
    let grid = args.estimation.grid()?;

    let overall = estimate_latent_mwu_mem(
        &matrix,
        &fixed,
        &grid,
        args.estimation.inner_updates,
        1e-6,
        args.estimation.max_cycles,
    )?;
    let runs = fpc_by_source(&matrix, &fixed, &grid, &args.estimation)?;

    // abilities in matrix row order, each scored under its source's latent
    let mut ability_rows = Vec::with_capacity(matrix.n_respondents());
    let mut cursors: BTreeMap<&str, usize> = BTreeMap::new();
    for row in matrix.rows() {
        let run = &runs[row.source.as_str()];
        let k = cursors.entry(row.source.as_str()).or_insert(0);
        ability_rows.push(run.abilities.rows[*k].clone());
        *k += 1;
    }
    let ability = AbilityEstimates { rows: ability_rows };

    let bundle = ResultBundle {
        item_params: fixed.clone(),
        latent: LatentSummary {
            mean: overall.latent.mean,
            sd: overall.latent.sd,
            kurtosis: overall.latent.kurtosis,
        },
        ability: Some(ability),
        convergence: crate::calibrate::Convergence {
            cycles: overall.cycles,
            max_param_change: overall.max_weight_change,
            converged: overall.converged,
        },
        seed: None,
        provenance: Provenance::new()
            .with_input(&args.responses)?
            .with_input(&args.bank)?,
    };

    ensure_out_dir(&args.out)?;
    write_bundle(&bundle, &args.out.join("bundle.json"))?;

    #[derive(serde::Serialize)]
    struct LatentDoc<'a> {
        overall: &'a crate::fpc::LatentDist,
        by_source: BTreeMap<&'a str, &'a crate::fpc::LatentDist>,
    }
    let latent_doc = LatentDoc {
        overall: &overall.latent,
        by_source: runs
            .iter()
            .map(|(s, r)| (s.as_str(), &r.latent.latent))
            .collect(),
    };
    write_text(&args.out.join("latent.json"), &to_canonical_json(&latent_doc)?)?;

    let stats: Vec<DistStats> = runs.values().map(|r| r.stats.clone()).collect();
    write_text(&args.out.join("dist.json"), &to_canonical_json(&stats)?)?;
    let mut table = String::new();
    table.push_str(&format!(
        "{:<16}  {:>7}  {:>23}  {:>8}  {:>5}\n",
        "Generating Model", "Mean", "Standard Deviation (SD)", "Kurtosis", "N"
    ));
    for s in &stats {
        let kurt = match s.kurtosis {
            Some(v) => format!("{v:.2}"),
            None => "NA".into(),
        };
        table.push_str(&format!(
            "{:<16}  {:>7.2}  {:>23.2}  {:>8}  {:>5}\n",
            s.label, s.mean, s.sd, kurt, s.n
        ));
    }
    write_text(&args.out.join("dist.txt"), &table)?;

    let warned = !overall.converged || runs.values().any(|r| !r.latent.converged);
    Ok(warned)
}

/// Everything one experiment run produces, kept in memory so tests can
/// drive the pipeline without touching disk.
pub struct ExperimentRun {
    pub plan: MatchPlan,
    pub proportions: MixingProportions,
    pub pools: Vec<ExperimentPool>,
    pub calibrations: Vec<(Condition, Calibration)>,
    pub comparison: ComparisonReport,
    pub comparison_anchored: ComparisonReport,
    pub dists: Vec<DistStats>,
    pub abilities: Vec<(Condition, AbilityEstimates)>,
    pub seed: u64,
}

impl ExperimentRun {
    pub fn calibration(&self, condition: Condition) -> &Calibration {
        &self
            .calibrations
            .iter()
            .find(|(c, _)| *c == condition)
            .expect("all conditions calibrated")
            .1
    }

    pub fn any_nonconverged(&self) -> bool {
        self.calibrations
            .iter()
            .any(|(_, cal)| !cal.convergence.converged)
    }
}

/// The full experiment pipeline: half-sample, match, learn proportions,
/// build pools, calibrate each pool, compare against the benchmark, and
/// score every pool against the benchmark's items.
pub fn run_experiment(
    humans: &ResponseMatrix,
    synthetic: &ResponseMatrix,
    grid: &QuadratureGrid,
    opts: &EstimationOpts,
    seed: u64,
) -> Result<ExperimentRun> {
    let half = half_sample(humans, None)?;
    let plan = match_centroids(&half, synthetic)?;
    let proportions = learn_proportions(&plan, synthetic)?;

    let mut pools = Vec::new();
    let mut calibrations = Vec::new();
    for condition in Condition::all() {
        let pool = build_experiment_pool(
            condition,
            humans,
            synthetic,
            Some(&plan),
            Some(&proportions),
            seed,
            None,
        )?;
        let calibration = calibrate_mml(&pool.matrix, grid, opts.tol, opts.max_cycles)?;
        pools.push(pool);
        calibrations.push((condition, calibration));
    }

    let benchmark = calibrations
        .iter()
        .find(|(c, _)| *c == Condition::Benchmark)
        .expect("benchmark calibrated")
        .1
        .params
        .clone();
    let labelled: Vec<(String, ItemParams)> = calibrations
        .iter()
        .map(|(c, cal)| (c.label().to_string(), cal.params.clone()))
        .collect();
    let comparison = compare_calibrations(&benchmark, &labelled, false)?;
    let comparison_anchored = compare_calibrations(&benchmark, &labelled, true)?;

    // proficiency distributions per condition under the benchmark's items
    let ok_ids = benchmark.ok_item_ids();
    let mut dists = Vec::new();
    let mut abilities = Vec::new();
    for pool in &pools {
        let restricted = pool.matrix.restrict_columns(&ok_ids)?;
        let latent = estimate_latent_mwu_mem(
            &restricted,
            &benchmark,
            grid,
            opts.inner_updates,
            1e-6,
            opts.max_cycles,
        )?;
        let scored = score_with(&restricted, &benchmark, &latent.latent)?;
        let thetas: Vec<f64> = scored.rows.iter().map(|r| r.theta_hat).collect();
        dists.push(dist_stats(&thetas, pool.condition.label())?);
        abilities.push((pool.condition, scored));
    }

    Ok(ExperimentRun {
        plan,
        proportions,
        pools,
        calibrations,
        comparison,
        comparison_anchored,
        dists,
        abilities,
        seed,
    })
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<bool> {
    let bank = load_item_bank(&args.bank)?;
    let humans = load_responses(&args.humans, args.format.into(), Some(&bank))?;
    let synthetic = load_responses(&args.synthetic, args.format.into(), Some(&bank))?;
    let grid = args.estimation.grid()?;
    let run = run_experiment(&humans, &synthetic, &grid, &args.estimation, args.seed)?;

    ensure_out_dir(&args.out)?;
    let provenance = Provenance::new()
        .with_input(&args.humans)?
        .with_input(&args.synthetic)?
        .with_input(&args.bank)?;

    let (grid_mean, grid_sd, grid_kurt) = grid.moments();
    for (condition, calibration) in &run.calibrations {
        let ability = run
            .abilities
            .iter()
            .find(|(c, _)| c == condition)
            .map(|(_, a)| a.clone());
        let bundle = ResultBundle {
            item_params: calibration.params.clone(),
            latent: LatentSummary {
                mean: grid_mean,
                sd: grid_sd,
                kurtosis: grid_kurt,
            },
            ability: ability.clone(),
            convergence: calibration.convergence.clone(),
            seed: Some(args.seed),
            provenance: provenance.clone(),
        };
        let label = condition.label();
        write_bundle(&bundle, &args.out.join(format!("bundle_{label}.json")))?;
        let empty = AbilityEstimates { rows: vec![] };
        let ability_ref = ability.as_ref().unwrap_or(&empty);
        write_text(
            &args.out.join(format!("wright_{label}.txt")),
            &render_wright_map(&calibration.params, ability_ref, MapFormat::Text)?,
        )?;
        write_text(
            &args.out.join(format!("wright_{label}.svg")),
            &render_wright_map(&calibration.params, ability_ref, MapFormat::Svg)?,
        )?;
    }

    let table = if args.anchor {
        &run.comparison_anchored
    } else {
        &run.comparison
    };
    write_text(
        &args.out.join("report.txt"),
        &render_experiment_report(table, &run.dists, ReportFormat::Text)?,
    )?;
    write_text(
        &args.out.join("report.json"),
        &render_experiment_report(&run.comparison, &run.dists, ReportFormat::Json)?,
    )?;
    write_text(
        &args.out.join("report_anchored.json"),
        &render_experiment_report(&run.comparison_anchored, &run.dists, ReportFormat::Json)?,
    )?;
    write_text(&args.out.join("plan.json"), &to_canonical_json(&run.plan)?)?;
    write_text(
        &args.out.join("proportions.json"),
        &to_canonical_json(&run.proportions)?,
    )?;

    Ok(run.any_nonconverged())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<bool> {
    let mut spec = crate::simulate::load_population_spec(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let bank = load_item_bank(&args.bank)?;
    let fixed = bank.fixed_item_params()?;
    let items: Vec<(String, f64)> = fixed
        .items
        .iter()
        .map(|i| (i.item_id.clone(), i.beta))
        .collect();

    let thetas = crate::simulate::sample_thetas(&spec);
    // responses use a stream derived from the same seed
    let response_seed = spec.seed ^ 0x9E37_79B9_7F4A_7C15;
    let matrix = crate::simulate::simulate_responses(&thetas, &items, spec.missing_rate, response_seed)?;

    ensure_out_dir(&args.out)?;
    let note = format!(
        "irtforge simulate v{} seed={} respondents={} items={}",
        env!("CARGO_PKG_VERSION"),
        spec.seed,
        matrix.n_respondents(),
        matrix.n_items()
    );
    dataio::write_wide_csv(&matrix, &args.out.join("responses.csv"), Some(&note))?;
    dataio::write_long_jsonl(&matrix, &args.out.join("responses.jsonl"), Some(&note))?;
    log::info!("{note}");
    Ok(false)
}

fn cmd_report(args: &ReportArgs) -> Result<bool> {
    let bundle = dataio::read_bundle(&args.bundle)?;
    ensure_out_dir(&args.out)?;
    let empty = AbilityEstimates { rows: vec![] };
    let ability = bundle.ability.as_ref().unwrap_or(&empty);
    write_text(
        &args.out.join("wright_map.txt"),
        &render_wright_map(&bundle.item_params, ability, MapFormat::Text)?,
    )?;
    write_text(
        &args.out.join("wright_map.svg"),
        &render_wright_map(&bundle.item_params, ability, MapFormat::Svg)?,
    )?;
    Ok(!bundle.convergence.converged)
}

/// Anchored copies of every non-benchmark calibration, for downstream use.
pub fn anchored_params(run: &ExperimentRun) -> Result<Vec<(Condition, ItemParams)>> {
    let benchmark = &run.calibration(Condition::Benchmark).params;
    run.calibrations
        .iter()
        .map(|(c, cal)| Ok((*c, anchor_to(&cal.params, benchmark)?)))
        .collect()
}
