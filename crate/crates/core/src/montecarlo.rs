//! Monte Carlo harness: seeded replications, bias/RMSE summaries, lambda
//! sweeps and the unmatched-share scan.
//!
//! Seeding: the market seed of replication `r` is
//! `mix64(mix64(base_seed, dgp_hash), r)` where `dgp_hash` folds the case,
//! market size, true coefficients and kappa. The estimation regime (model, IR,
//! lambda) is deliberately left out, so every regime is estimated on the same
//! simulated markets. The optimizer seed is `mix64(market_seed, DE_STREAM)`.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::de::DeConfig;
use crate::equilibrium::{solve_assignment, ObservedData};
use crate::error::{Error, Result};
use crate::estimator::{estimate, Objective, ScoreValue};
use crate::format::fmt_f64;
use crate::inequalities::{build_inequalities, Model, ScoreConfig};
use crate::market::{generate_market, value_matrix, ProductionSpec, SpecKind, DEFAULT_KAPPA};

const DE_STREAM: u64 = 0x6465_5f73_7472_6561;

/// Default IR weights for a sweep.
pub const DEFAULT_LAMBDAS: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 20.0, 100.0];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit mix of two words.
pub fn mix64(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Optimizer seed paired with a market seed.
pub fn optimizer_seed(market_seed: u64) -> u64 {
    mix64(market_seed, DE_STREAM)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub case: SpecKind,
    pub n: usize,
    pub true_beta1: f64,
    pub true_beta2: f64,
    pub kappa: f64,
    pub model: Model,
    pub use_ir: bool,
    pub lambda: f64,
    pub replications: usize,
    pub base_seed: u64,
}

impl Scenario {
    /// Case 2 scenario with kappa 8 and lambda 100.
    pub fn case2(n: usize, true_beta2: f64, model: Model, use_ir: bool, replications: usize, base_seed: u64) -> Self {
        Self {
            case: SpecKind::Case2,
            n,
            true_beta1: 0.5,
            true_beta2,
            kappa: DEFAULT_KAPPA,
            model,
            use_ir,
            lambda: 100.0,
            replications,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("market size n must be positive"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if !self.true_beta1.is_finite() || !self.true_beta2.is_finite() {
            return Err(Error::invalid("true coefficients must be finite"));
        }
        self.spec()?;
        self.score_config()?;
        Ok(())
    }

    pub fn spec(&self) -> Result<ProductionSpec> {
        ProductionSpec::new(self.case, self.true_beta1, self.true_beta2, self.kappa)
    }

    pub fn score_config(&self) -> Result<ScoreConfig> {
        ScoreConfig::new(self.model, self.use_ir, self.lambda)
    }

    /// Hash of the data-generating process (everything that shapes the market).
    pub fn dgp_hash(&self) -> u64 {
        let case = match self.case {
            SpecKind::Case1 => 1,
            SpecKind::Case2 => 2,
        };
        [case, self.n as u64, self.true_beta1.to_bits(), self.true_beta2.to_bits(), self.kappa.to_bits()]
            .into_iter()
            .fold(0x6d61_7463_6873_636f, mix64)
    }

    pub fn market_seed(&self, r: usize) -> u64 {
        mix64(mix64(self.base_seed, self.dgp_hash()), r as u64)
    }

    pub fn de_seed(&self, r: usize) -> u64 {
        optimizer_seed(self.market_seed(r))
    }
}

/// Outcome of one replication. Failed replications carry `error` and no
/// estimate. Equality ignores `runtime`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub market_seed: u64,
    pub de_seed: u64,
    pub beta1_hat: Option<f64>,
    pub beta2_hat: Option<f64>,
    pub score: Option<ScoreValue>,
    pub unmatched_buyers: usize,
    pub unmatched_sellers: usize,
    pub pairwise_rows: usize,
    pub ir_rows: usize,
    pub error: Option<String>,
    /// Wall time; never serialized so artifacts stay reproducible.
    #[serde(skip)]
    pub runtime: Duration,
}

impl PartialEq for ReplicationRecord {
    fn eq(&self, other: &Self) -> bool {
        let key = |r: &Self| {
            (
                r.replication,
                r.market_seed,
                r.de_seed,
                r.beta1_hat.map(f64::to_bits),
                r.beta2_hat.map(f64::to_bits),
                r.unmatched_buyers,
                r.unmatched_sellers,
                r.pairwise_rows,
                r.ir_rows,
                r.error.clone(),
            )
        };
        key(self) == key(other) && self.score == other.score
    }
}

impl ReplicationRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Runs replication `r` of a scenario with the given optimizer settings (its
/// seed is replaced by the derived one).
pub fn run_replication(scenario: &Scenario, de: &DeConfig, r: usize) -> Result<ReplicationRecord> {
    scenario.validate()?;
    if r >= scenario.replications {
        return Err(Error::invalid(format!("replication {r} out of range (replications = {})", scenario.replications)));
    }
    let start = Instant::now();
    let market_seed = scenario.market_seed(r);
    let de_seed = scenario.de_seed(r);
    let mut record = ReplicationRecord {
        replication: r,
        market_seed,
        de_seed,
        beta1_hat: None,
        beta2_hat: None,
        score: None,
        unmatched_buyers: 0,
        unmatched_sellers: 0,
        pairwise_rows: 0,
        ir_rows: 0,
        error: None,
        runtime: Duration::ZERO,
    };
    let result = (|| -> Result<()> {
        let spec = scenario.spec()?;
        let market = generate_market(scenario.n, market_seed)?;
        let outcome = solve_assignment(&value_matrix(&spec, &market))?;
        record.unmatched_buyers = outcome.unmatched_buyers.len();
        record.unmatched_sellers = outcome.unmatched_sellers.len();
        let config = scenario.score_config()?;
        let data = ObservedData::new(&market, &outcome, config.has_unmatched, config.has_transfers);
        let set = build_inequalities(&data, &config)?;
        let objective = Objective::compile(&set, &spec, &market);
        record.pairwise_rows = objective.n_pairwise();
        record.ir_rows = objective.n_ir();
        let est = estimate(&objective, &de.clone().with_seed(de_seed))?;
        record.beta1_hat = Some(est.candidate.beta1);
        record.beta2_hat = Some(est.candidate.beta2);
        record.score = Some(est.score);
        Ok(())
    })();
    if let Err(e) = result {
        if e.is_config() {
            return Err(e);
        }
        log::warn!("replication {r} (seed {market_seed}) failed: {e}");
        record.error = Some(e.to_string());
    }
    record.runtime = start.elapsed();
    Ok(record)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
}

impl ParamSummary {
    /// Bias and RMSE of `estimates` around `truth`; NaN when empty.
    pub fn from_estimates(truth: f64, estimates: &[f64]) -> Self {
        let k = estimates.len() as f64;
        let bias = estimates.iter().map(|e| e - truth).sum::<f64>() / k;
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / k;
        Self { truth, bias, rmse: mse.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub scenario: Scenario,
    pub beta1: ParamSummary,
    pub beta2: ParamSummary,
    /// Mean number of unmatched agents per side over successful replications.
    pub mean_unmatched: f64,
    pub n_errors: usize,
    pub exclusion_rate: f64,
    pub records: Vec<ReplicationRecord>,
}

impl ExperimentSummary {
    /// Aggregates records; failed replications are excluded and counted.
    pub fn from_records(scenario: Scenario, records: Vec<ReplicationRecord>) -> Self {
        let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.is_ok()).collect();
        let b1: Vec<f64> = ok.iter().filter_map(|r| r.beta1_hat).collect();
        let b2: Vec<f64> = ok.iter().filter_map(|r| r.beta2_hat).collect();
        let mean_unmatched = ok
            .iter()
            .map(|r| (r.unmatched_buyers + r.unmatched_sellers) as f64 / 2.0)
            .sum::<f64>()
            / ok.len() as f64;
        let n_errors = records.len() - ok.len();
        Self {
            beta1: ParamSummary::from_estimates(scenario.true_beta1, &b1),
            beta2: ParamSummary::from_estimates(scenario.true_beta2, &b2),
            mean_unmatched,
            n_errors,
            exclusion_rate: n_errors as f64 / records.len() as f64,
            scenario,
            records,
        }
    }

    pub fn total_runtime(&self) -> Duration {
        self.records.iter().map(|r| r.runtime).sum()
    }
}

/// Runs every replication of a scenario in parallel.
pub fn run_experiment(scenario: &Scenario, de: &DeConfig) -> Result<ExperimentSummary> {
    scenario.validate()?;
    de.validate()?;
    let records = (0..scenario.replications)
        .into_par_iter()
        .map(|r| run_replication(scenario, de, r))
        .collect::<Result<Vec<_>>>()?;
    let summary = ExperimentSummary::from_records(scenario.clone(), records);
    log::info!(
        "{} n={} {} ir={} lambda={}: bias(beta2)={:.3} rmse(beta2)={:.3} unmatched={:.2}",
        scenario.case,
        scenario.n,
        scenario.model,
        scenario.use_ir,
        scenario.lambda,
        summary.beta2.bias,
        summary.beta2.rmse,
        summary.mean_unmatched
    );
    Ok(summary)
}

/// One experiment per IR weight, all on the same simulated markets.
pub fn lambda_sweep(scenario: &Scenario, de: &DeConfig, lambdas: &[f64]) -> Result<Vec<ExperimentSummary>> {
    if !scenario.use_ir {
        return Err(Error::invalid("a lambda sweep needs use_ir = true"));
    }
    if lambdas.is_empty() {
        return Err(Error::invalid("a lambda sweep needs at least one lambda"));
    }
    lambdas
        .iter()
        .map(|&lambda| run_experiment(&Scenario { lambda, ..scenario.clone() }, de))
        .collect()
}

/// True `beta2` values from -1.0 down to -3.0 in steps of 0.1.
pub fn threshold_grid() -> Vec<f64> {
    (0..=20).map(|k| -((10 + k) as f64) / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub beta2: f64,
    pub mean_unmatched: f64,
    /// Mean unmatched per side divided by `n`.
    pub unmatched_share: f64,
    pub bias_beta2: f64,
    pub rmse_beta2: f64,
    pub n_errors: usize,
}

/// Re-runs `base` for each true `beta2` in `grid`. `base` must be a Case 2,
/// model U scenario with IR rows.
pub fn unmatched_threshold_scan(base: &Scenario, de: &DeConfig, grid: &[f64]) -> Result<Vec<ScanRow>> {
    if base.case != SpecKind::Case2 || base.model != Model::U || !base.use_ir {
        return Err(Error::invalid("the unmatched-threshold scan needs case2, model u and use_ir = true"));
    }
    grid.iter()
        .map(|&beta2| {
            let s = run_experiment(&Scenario { true_beta2: beta2, ..base.clone() }, de)?;
            Ok(ScanRow {
                beta2,
                mean_unmatched: s.mean_unmatched,
                unmatched_share: s.mean_unmatched / base.n as f64,
                bias_beta2: s.beta2.bias,
                rmse_beta2: s.beta2.rmse,
                n_errors: s.n_errors,
            })
        })
        .collect()
}

/// Writes one row per summary and parameter.
pub fn write_summary_csv<W: Write>(summaries: &[ExperimentSummary], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["case", "n", "model", "ir", "lambda", "param", "truth", "bias", "rmse", "mean_unmatched"])?;
    for s in summaries {
        let sc = &s.scenario;
        for (name, p) in [("beta1", &s.beta1), ("beta2", &s.beta2)] {
            wtr.write_record([
                sc.case.to_string(),
                sc.n.to_string(),
                sc.model.to_string(),
                sc.use_ir.to_string(),
                fmt_f64(sc.lambda),
                name.to_string(),
                fmt_f64(p.truth),
                fmt_f64(p.bias),
                fmt_f64(p.rmse),
                fmt_f64(s.mean_unmatched),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Writes every replication record of every summary.
pub fn write_records_csv<W: Write>(summaries: &[ExperimentSummary], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "case",
        "n",
        "model",
        "ir",
        "lambda",
        "true_beta2",
        "replication",
        "market_seed",
        "de_seed",
        "beta1_hat",
        "beta2_hat",
        "score",
        "unmatched_buyers",
        "unmatched_sellers",
        "error",
    ])?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for s in summaries {
        let sc = &s.scenario;
        for r in &s.records {
            wtr.write_record([
                sc.case.to_string(),
                sc.n.to_string(),
                sc.model.to_string(),
                sc.use_ir.to_string(),
                fmt_f64(sc.lambda),
                fmt_f64(sc.true_beta2),
                r.replication.to_string(),
                r.market_seed.to_string(),
                r.de_seed.to_string(),
                opt(r.beta1_hat),
                opt(r.beta2_hat),
                opt(r.score.map(|v| v.weighted_total)),
                r.unmatched_buyers.to_string(),
                r.unmatched_sellers.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["beta2", "mean_unmatched", "unmatched_share", "bias_beta2", "rmse_beta2", "n_errors"])?;
    for r in rows {
        wtr.write_record([
            fmt_f64(r.beta2),
            fmt_f64(r.mean_unmatched),
            fmt_f64(r.unmatched_share),
            fmt_f64(r.bias_beta2),
            fmt_f64(r.rmse_beta2),
            r.n_errors.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeeds {
    pub scenario: Scenario,
    pub market_seeds: Vec<u64>,
    pub de_seeds: Vec<u64>,
}

/// Reproducibility manifest; carries no timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub rng: String,
    pub de: DeConfig,
    pub scenarios: Vec<ScenarioSeeds>,
}

impl Manifest {
    pub fn new(de: &DeConfig, scenarios: &[Scenario]) -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng: "ChaCha20 (rand_chacha) seeded via seed_from_u64; normals via ziggurat StandardNormal (rand_distr)"
                .to_string(),
            de: de.clone(),
            scenarios: scenarios
                .iter()
                .map(|s| ScenarioSeeds {
                    scenario: s.clone(),
                    market_seeds: (0..s.replications).map(|r| s.market_seed(r)).collect(),
                    de_seeds: (0..s.replications).map(|r| s.de_seed(r)).collect(),
                })
                .collect(),
        }
    }
}

/// Named run sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 20 replications, n in {10, 50}.
    Desk,
    /// 100 replications, n in {10, 20, 30, 50, 100}.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::invalid(format!("unknown profile `{other}` (expected desk or full)"))),
        }
    }
}

/// Cartesian family of scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    pub cases: Vec<SpecKind>,
    pub ns: Vec<usize>,
    pub true_beta1: f64,
    pub beta2: Vec<f64>,
    pub kappa: f64,
    pub models: Vec<Model>,
    pub ir: Vec<bool>,
    pub lambda: f64,
    pub replications: usize,
    pub base_seed: u64,
}

impl ScenarioGrid {
    pub fn profile(profile: Profile, base_seed: u64) -> Self {
        let (ns, replications) = match profile {
            Profile::Desk => (vec![10, 50], 20),
            Profile::Full => (vec![10, 20, 30, 50, 100], 100),
        };
        Self {
            cases: vec![SpecKind::Case1, SpecKind::Case2],
            ns,
            true_beta1: 0.5,
            beta2: vec![-3.0, -2.0, -1.0, 0.0, 1.0],
            kappa: DEFAULT_KAPPA,
            models: Model::ALL.to_vec(),
            ir: vec![false, true],
            lambda: 100.0,
            replications,
            base_seed,
        }
    }

    /// Scenarios in case, n, beta2, model, IR order.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &case in &self.cases {
            for &n in &self.ns {
                for &true_beta2 in &self.beta2 {
                    for &model in &self.models {
                        for &use_ir in &self.ir {
                            out.push(Scenario {
                                case,
                                n,
                                true_beta1: self.true_beta1,
                                true_beta2,
                                kappa: self.kappa,
                                model,
                                use_ir,
                                lambda: self.lambda,
                                replications: self.replications,
                                base_seed: self.base_seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}
