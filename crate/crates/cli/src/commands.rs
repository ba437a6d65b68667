use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use matchscore::equilibrium::ObservedData;
use matchscore::estimator::{objective_grid, GridAxis, Objective};
use matchscore::inequalities::{build_inequalities, InequalitySet, ScoreConfig};
use matchscore::market::DEFAULT_KAPPA;
use matchscore::montecarlo::{
    self, optimizer_seed, threshold_grid, ExperimentSummary, Manifest, Profile, Scenario, ScenarioGrid, ScanRow,
    DEFAULT_LAMBDAS,
};
use matchscore::{
    estimate as run_estimate, generate_market, solve_assignment, value_matrix, verify_stability, Market,
    MatchingOutcome, Model, ProductionSpec, ScoreValue, SpecKind,
};
use serde::Serialize;

use crate::config::{merge_de, RunConfig};
use crate::error::{CliError, Result};
use crate::{EstimateArgs, ExperimentArgs, MarketArgs};

const DEFAULT_BETA1: f64 = 0.5;
const DEFAULT_BETA2: f64 = -2.0;
const DEFAULT_LAMBDA: f64 = 100.0;
const DEFAULT_GRID_BETA1: &str = "-1:2:61";
const DEFAULT_GRID_BETA2: &str = "-10:2:121";
const SCAN_N: usize = 100;

pub struct Common {
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Experiment,
    Sweep,
    Scan,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn out_path(common: &Common, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&common.out).map_err(|source| CliError::Io { path: common.out.clone(), source })?;
    Ok(common.out.join(name))
}

fn write_json<T: Serialize>(common: &Common, name: &str, value: &T) -> Result<PathBuf> {
    let path = out_path(common, name)?;
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(matchscore::Error::from)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn write_csv<F>(common: &Common, name: &str, body: F) -> Result<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> matchscore::Result<()>,
{
    let path = out_path(common, name)?;
    let mut w = create(&path)?;
    body(&mut w)?;
    Ok(path)
}

fn spec_from(file: &RunConfig, a: &MarketArgs) -> Result<ProductionSpec> {
    let m = &file.market;
    Ok(ProductionSpec::new(
        a.case.or(m.case).unwrap_or(SpecKind::Case2),
        a.beta1.or(m.beta1).unwrap_or(DEFAULT_BETA1),
        a.beta2.or(m.beta2).unwrap_or(DEFAULT_BETA2),
        a.kappa.or(m.kappa).unwrap_or(DEFAULT_KAPPA),
    )?)
}

fn market_size(file: &RunConfig, a: &MarketArgs) -> Result<usize> {
    a.n.or(file.market.n).ok_or_else(|| CliError::missing("n", "--n"))
}

#[derive(Serialize)]
struct StabilityDoc<'a> {
    violations: usize,
    pairwise_rows: usize,
    ir_rows: usize,
    passed: bool,
    details: &'a [matchscore::equilibrium::StabilityViolation],
}

pub fn simulate(common: &Common, file: &RunConfig, a: &MarketArgs) -> Result<()> {
    let n = market_size(file, a)?;
    let spec = spec_from(file, a)?;
    let market = generate_market(n, common.seed)?;
    let values = value_matrix(&spec, &market);
    let outcome = solve_assignment(&values)?;
    let report = verify_stability(&outcome, &values);

    write_json(common, "market.json", &market)?;
    write_json(common, "outcome.json", &outcome)?;
    write_json(
        common,
        "stability.json",
        &StabilityDoc {
            violations: report.violations.len(),
            pairwise_rows: report.pairwise_rows,
            ir_rows: report.ir_rows,
            passed: report.passed,
            details: &report.violations,
        },
    )?;
    println!(
        "{} matched, {} unmatched buyers, {} unmatched sellers; stability: {} violations",
        outcome.matched_pairs.len(),
        outcome.unmatched_buyers.len(),
        outcome.unmatched_sellers.len(),
        report.violations.len()
    );
    if !report.passed {
        return Err(matchscore::Error::Numerical(format!("{} stability violations", report.violations.len())).into());
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
    serde_json::from_reader(std::io::BufReader::new(f))
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

struct Observed {
    spec: ProductionSpec,
    market: Market,
    set: InequalitySet,
    objective: Objective,
}

fn observe(common: &Common, file: &RunConfig, a: &EstimateArgs) -> Result<Observed> {
    let spec = spec_from(file, &a.market)?;
    let market_file = a.market_file.clone().or_else(|| file.market.market_file.clone());
    let outcome_file = a.outcome_file.clone().or_else(|| file.market.outcome_file.clone());
    let (market, outcome): (Market, MatchingOutcome) = match (market_file, outcome_file) {
        (Some(m), Some(o)) => {
            let market: Market = read_json(&m)?;
            let outcome: MatchingOutcome = read_json(&o)?;
            if outcome.n_buyers() != market.n_buyers() || outcome.n_sellers() != market.n_sellers() {
                return Err(CliError::config(format!(
                    "outcome covers {}x{} agents but the market has {}x{}",
                    outcome.n_buyers(),
                    outcome.n_sellers(),
                    market.n_buyers(),
                    market.n_sellers()
                )));
            }
            (market, outcome)
        }
        (None, None) => {
            let market = generate_market(market_size(file, &a.market)?, common.seed)?;
            let outcome = solve_assignment(&value_matrix(&spec, &market))?;
            (market, outcome)
        }
        _ => return Err(CliError::config("market_file and outcome_file must be given together")),
    };
    let s = &file.score;
    let mut config = ScoreConfig::new(
        a.score.model.or(s.model).unwrap_or(Model::U),
        a.score.ir.or(s.ir).unwrap_or(true),
        a.score.lambda.or(s.lambda).unwrap_or(DEFAULT_LAMBDA),
    )?;
    config.ir_ignore_transfers = a.score.ir_ignore_transfers.or(s.ir_ignore_transfers).unwrap_or(false);
    let data = ObservedData::new(&market, &outcome, config.has_unmatched, config.has_transfers);
    let set = build_inequalities(&data, &config)?;
    let objective = Objective::compile(&set, &spec, &market);
    Ok(Observed { spec, market, set, objective })
}

fn grid_axes(specs: &[String], file: &RunConfig) -> Result<(GridAxis, GridAxis)> {
    let mut b1: GridAxis = file.grid.beta1.as_deref().unwrap_or(DEFAULT_GRID_BETA1).parse()?;
    let mut b2: GridAxis = file.grid.beta2.as_deref().unwrap_or(DEFAULT_GRID_BETA2).parse()?;
    for s in specs {
        match s.split_once('=') {
            Some(("beta1", v)) => b1 = v.parse()?,
            Some(("beta2", v)) => b2 = v.parse()?,
            _ => return Err(CliError::config(format!("grid axis `{s}` must be beta1=START:END:STEPS or beta2=..."))),
        }
    }
    Ok((b1, b2))
}

fn write_grid(common: &Common, grid: &matchscore::ObjectiveGrid) -> Result<()> {
    write_csv(common, "grid.csv", |w| grid.write_csv(w))?;
    write_json(common, "grid.json", &grid.sidecar())?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateDoc {
    case: SpecKind,
    model: Model,
    ir: bool,
    lambda: f64,
    market_seed: u64,
    de_seed: u64,
    beta1: f64,
    beta2: f64,
    score: ScoreValue,
    pairwise_rows: usize,
    ir_rows: usize,
    vacuous_rows: usize,
    beta2_unidentified: bool,
    trace: Vec<f64>,
}

pub fn estimate(common: &Common, file: &RunConfig, a: &EstimateArgs) -> Result<()> {
    let obs = observe(common, file, a)?;
    let de_seed = optimizer_seed(common.seed);
    let de = merge_de(file.de.as_ref(), &a.de.flags())?.with_seed(de_seed);
    let est = run_estimate(&obs.objective, &de)?;
    let (b1, b2) = grid_axes(&a.grid, file)?;
    let grid = objective_grid(&obs.objective, b1, b2)?;
    let doc = EstimateDoc {
        case: obs.spec.kind,
        model: obs.objective.model(),
        ir: obs.objective.use_ir(),
        lambda: obs.objective.lambda(),
        market_seed: obs.market.seed(),
        de_seed,
        beta1: est.candidate.beta1,
        beta2: est.candidate.beta2,
        score: est.score,
        pairwise_rows: obs.objective.n_pairwise(),
        ir_rows: obs.objective.n_ir(),
        vacuous_rows: obs.objective.n_vacuous(),
        beta2_unidentified: grid.constant_in_beta2(),
        trace: est.trace,
    };
    write_json(common, "estimate.json", &doc)?;
    if !a.grid.is_empty() || file.grid.beta1.is_some() || file.grid.beta2.is_some() {
        write_grid(common, &grid)?;
    }
    if a.inequalities {
        write_csv(common, "inequalities.csv", |w| obs.set.write_csv(w))?;
    }
    println!(
        "beta1 = {:.4}, beta2 = {:.4}, score = {}{}",
        doc.beta1,
        doc.beta2,
        doc.score.weighted_total,
        if doc.beta2_unidentified { " (beta2 unidentified: objective constant in beta2)" } else { "" }
    );
    Ok(())
}

pub fn grid(common: &Common, file: &RunConfig, a: &EstimateArgs) -> Result<()> {
    let obs = observe(common, file, a)?;
    let (b1, b2) = grid_axes(&a.grid, file)?;
    let grid = objective_grid(&obs.objective, b1, b2)?;
    write_grid(common, &grid)?;
    if a.inequalities {
        write_csv(common, "inequalities.csv", |w| obs.set.write_csv(w))?;
    }
    let side = grid.sidecar();
    println!(
        "{}x{} grid, max score {} at {} cell(s)",
        side.beta1_steps,
        side.beta2_steps,
        side.max_score,
        side.argmax.len()
    );
    Ok(())
}

fn non_empty<T: Clone>(flag: &[T], file: &Option<Vec<T>>) -> Option<Vec<T>> {
    if flag.is_empty() {
        file.clone()
    } else {
        Some(flag.to_vec())
    }
}

fn scenario_grid(common: &Common, file: &RunConfig, a: &ExperimentArgs) -> Result<(ScenarioGrid, bool)> {
    let e = &file.experiment;
    let profile = a.profile.or(e.profile).unwrap_or(Profile::Desk);
    let mut g = ScenarioGrid::profile(profile, common.seed);
    if let Some(v) = non_empty(&a.case, &e.cases) {
        g.cases = v;
    }
    let explicit_n = non_empty(&a.n, &e.ns);
    if let Some(v) = explicit_n.clone() {
        g.ns = v;
    }
    if let Some(v) = non_empty(&a.beta2, &e.beta2) {
        g.beta2 = v;
    }
    if let Some(v) = non_empty(&a.model, &e.models) {
        g.models = v;
    }
    if let Some(v) = non_empty(&a.ir, &e.ir) {
        g.ir = v;
    }
    g.true_beta1 = a.beta1.or(e.beta1).unwrap_or(g.true_beta1);
    g.kappa = a.kappa.or(e.kappa).unwrap_or(g.kappa);
    g.lambda = a.lambda.or(e.lambda).unwrap_or(g.lambda);
    g.replications = a.replications.or(e.replications).unwrap_or(g.replications);
    for s in g.scenarios() {
        s.validate()?;
    }
    if g.scenarios().is_empty() {
        return Err(CliError::config("the scenario grid is empty"));
    }
    Ok((g, explicit_n.is_some()))
}

fn parse_sweep(flag: Option<&str>, file: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    let Some(text) = flag else {
        return Ok(file.clone().unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec()));
    };
    match text.split_once('=') {
        None if text == "lambda" => Ok(file.clone().unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec())),
        Some(("lambda", list)) => list
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::config(format!("bad lambda `{x}` in --sweep"))))
            .collect(),
        _ => Err(CliError::config(format!("--sweep expects lambda=L1,L2,..., got `{text}`"))),
    }
}

fn run_summaries(scenarios: &[Scenario], de: &matchscore::DeConfig) -> Result<Vec<ExperimentSummary>> {
    scenarios.iter().map(|s| Ok(montecarlo::run_experiment(s, de)?)).collect()
}

fn report_summaries(name: &str, summaries: &[ExperimentSummary]) {
    for s in summaries {
        let sc = &s.scenario;
        println!(
            "{name}: {} n={} beta2={} {} ir={} lambda={}: bias {:.3} rmse {:.3} unmatched {:.2}",
            sc.case, sc.n, sc.true_beta2, sc.model, sc.use_ir, sc.lambda, s.beta2.bias, s.beta2.rmse, s.mean_unmatched
        );
    }
}

pub fn experiment(common: &Common, file: &RunConfig, a: &ExperimentArgs, mode: Mode) -> Result<()> {
    let (g, explicit_n) = scenario_grid(common, file, a)?;
    let de = merge_de(file.de.as_ref(), &a.de.flags())?;
    let mut ran: Vec<Scenario> = Vec::new();

    if mode == Mode::Experiment {
        let scenarios = g.scenarios();
        let summaries = run_summaries(&scenarios, &de)?;
        write_csv(common, "summary.csv", |w| montecarlo::write_summary_csv(&summaries, w))?;
        write_csv(common, "records.csv", |w| montecarlo::write_records_csv(&summaries, w))?;
        report_summaries("experiment", &summaries);
        ran.extend(scenarios);
    }

    let want_sweep = mode == Mode::Sweep || a.sweep.is_some();
    if want_sweep {
        let lambdas = parse_sweep(a.sweep.as_deref(), &file.experiment.lambdas)?;
        let bases: Vec<Scenario> = g.scenarios().into_iter().filter(|s| s.use_ir).collect();
        if bases.is_empty() {
            return Err(CliError::config("a lambda sweep needs at least one scenario with ir = true"));
        }
        let mut summaries = Vec::new();
        for base in &bases {
            summaries.extend(montecarlo::lambda_sweep(base, &de, &lambdas)?);
        }
        write_csv(common, "sweep.csv", |w| montecarlo::write_summary_csv(&summaries, w))?;
        write_csv(common, "sweep_records.csv", |w| montecarlo::write_records_csv(&summaries, w))?;
        report_summaries("sweep", &summaries);
        ran.extend(summaries.into_iter().map(|s| s.scenario));
    }

    let want_scan = mode == Mode::Scan || a.scan.is_some();
    if want_scan {
        if let Some(kind) = a.scan.as_deref() {
            if kind != "unmatched-threshold" {
                return Err(CliError::config(format!("unknown scan `{kind}` (expected unmatched-threshold)")));
            }
        }
        let n = match (explicit_n, g.ns.as_slice()) {
            (true, [n]) => *n,
            (true, _) => return Err(CliError::config("the scan runs at a single market size; pass one --n")),
            (false, _) => SCAN_N,
        };
        let base = Scenario {
            case: SpecKind::Case2,
            n,
            true_beta1: g.true_beta1,
            true_beta2: -1.0,
            kappa: g.kappa,
            model: Model::U,
            use_ir: true,
            lambda: g.lambda,
            replications: g.replications,
            base_seed: g.base_seed,
        };
        let grid = threshold_grid();
        let rows: Vec<ScanRow> = montecarlo::unmatched_threshold_scan(&base, &de, &grid)?;
        write_csv(common, "scan.csv", |w| montecarlo::write_scan_csv(&rows, w))?;
        for r in &rows {
            println!(
                "scan: beta2={:.1} unmatched share {:.3} bias {:.3} rmse {:.3}",
                r.beta2, r.unmatched_share, r.bias_beta2, r.rmse_beta2
            );
        }
        ran.extend(grid.iter().map(|&true_beta2| Scenario { true_beta2, ..base.clone() }));
    }

    write_json(common, "manifest.json", &Manifest::new(&de, &ran))?;
    Ok(())
}
