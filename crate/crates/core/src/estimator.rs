//! Maximum-score objective over `(beta1, beta2)` and its maximization.
//!
//! Every inequality is linear in the searched coefficients, so each row is
//! compiled once into `c0 + beta1 * c1 + beta2 * c2 ≥ 0` with the observed
//! transfer folded into `c0`. A row whose production terms cancel in a
//! coefficient gets an exact zero there, which keeps invariance properties
//! exact in floating point.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::de::{self, DeConfig};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::inequalities::{Family, InequalitySet, Model, ROW_TOL};
use crate::market::{Market, ProductionSpec};

/// Searched coefficients; `beta0` stays fixed at one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub beta1: f64,
    pub beta2: f64,
}

impl Candidate {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self { beta1, beta2 }
    }
}

/// Objective value split into its two counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreValue {
    pub pairwise_satisfied: u64,
    pub ir_satisfied: u64,
    /// `pairwise_satisfied + lambda * ir_satisfied`.
    pub weighted_total: f64,
}

#[derive(Clone, Debug, Default)]
struct LinearRows {
    c0: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
}

impl LinearRows {
    fn push(&mut self, c: [f64; 3]) {
        self.c0.push(c[0]);
        self.c1.push(c[1]);
        self.c2.push(c[2]);
    }

    fn len(&self) -> usize {
        self.c0.len()
    }

    #[inline]
    fn count(&self, beta1: f64, beta2: f64) -> u64 {
        self.c0
            .iter()
            .zip(&self.c1)
            .zip(&self.c2)
            .map(|((&c0, &c1), &c2)| u64::from(c0 + beta1 * c1 + beta2 * c2 >= -ROW_TOL))
            .sum()
    }
}

/// Compiled objective for one market and regime.
#[derive(Clone, Debug)]
pub struct Objective {
    pairwise: LinearRows,
    ir: LinearRows,
    lambda: f64,
    model: Model,
    use_ir: bool,
    vacuous: usize,
}

impl Objective {
    /// Compiles the non-vacuous rows of `ineqs`. Only the functional form of
    /// `spec` (case and kappa) is used; its coefficients are ignored.
    pub fn compile(ineqs: &InequalitySet, spec: &ProductionSpec, market: &Market) -> Self {
        let mut pairwise = LinearRows::default();
        let mut ir = LinearRows::default();
        let mut vacuous = 0;
        for row in &ineqs.rows {
            if row.vacuous {
                vacuous += 1;
                continue;
            }
            let (plus, minus) = row.terms();
            let sum = |pairs: &[crate::equilibrium::MatchPair]| {
                pairs.iter().fold([0.0; 3], |acc, p| {
                    let a = market.features(spec, p.buyer, p.seller);
                    [acc[0] + a[0], acc[1] + a[1], acc[2] + a[2]]
                })
            };
            let (p, m) = (sum(&plus), sum(&minus));
            let c = [
                ProductionSpec::BETA0 * (p[0] - m[0]) - row.rhs(),
                p[1] - m[1],
                p[2] - m[2],
            ];
            match row.family {
                Family::Ir => ir.push(c),
                _ => pairwise.push(c),
            }
        }
        Self {
            pairwise,
            ir,
            lambda: ineqs.config.lambda,
            model: ineqs.config.model(),
            use_ir: ineqs.config.use_ir,
            vacuous,
        }
    }

    /// Replaces the IR weight without enforcing the `lambda ≥ 1` floor; meant
    /// for diagnostics.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn use_ir(&self) -> bool {
        self.use_ir
    }

    /// Number of scored (non-vacuous) pairwise rows.
    pub fn n_pairwise(&self) -> usize {
        self.pairwise.len()
    }

    pub fn n_ir(&self) -> usize {
        self.ir.len()
    }

    pub fn n_vacuous(&self) -> usize {
        self.vacuous
    }

    pub fn score(&self, c: Candidate) -> ScoreValue {
        let pairwise_satisfied = self.pairwise.count(c.beta1, c.beta2);
        let ir_satisfied = self.ir.count(c.beta1, c.beta2);
        ScoreValue {
            pairwise_satisfied,
            ir_satisfied,
            weighted_total: pairwise_satisfied as f64 + self.lambda * ir_satisfied as f64,
        }
    }
}

/// Scores one candidate against an inequality set.
pub fn score(candidate: Candidate, ineqs: &InequalitySet, spec: &ProductionSpec, market: &Market) -> ScoreValue {
    Objective::compile(ineqs, spec, market).score(candidate)
}

/// Best-found maximizer of an objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub candidate: Candidate,
    pub score: ScoreValue,
    /// Best weighted total after initialization and after each generation.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Maximizes the objective over the DE search box.
pub fn estimate(objective: &Objective, config: &DeConfig) -> Result<Estimate> {
    if config.domain.len() != 2 {
        return Err(Error::invalid("the search domain must have exactly two coordinates (beta1, beta2)"));
    }
    let run = de::maximize(|x| objective.score(Candidate::new(x[0], x[1])).weighted_total, config)?;
    let candidate = Candidate::new(run.best[0], run.best[1]);
    Ok(Estimate { candidate, score: objective.score(candidate), trace: run.trace, evaluations: run.evaluations })
}

/// Evenly spaced axis `start..=end` with `steps` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("a grid axis needs at least 2 steps, got {steps}")));
        }
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::invalid("grid bounds must be finite"));
        }
        Ok(Self { start, end, steps })
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|k| if k + 1 == self.steps { self.end } else { self.start + (self.end - self.start) * k as f64 / last })
            .collect()
    }
}

impl std::str::FromStr for GridAxis {
    type Err = Error;

    /// Parses `start:end:steps`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(Error::invalid(format!("grid axis `{s}` must look like start:end:steps")));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad number `{x}` in `{s}`")));
        let steps = n.trim().parse::<usize>().map_err(|_| Error::invalid(format!("bad step count in `{s}`")))?;
        GridAxis::new(num(a)?, num(b)?, steps)
    }
}

/// Objective evaluated on a `(beta1, beta2)` lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveGrid {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    /// Row-major: index `i * beta2.len() + j`.
    pub values: Vec<ScoreValue>,
    /// Every cell attaining the maximum weighted total.
    pub argmax: Vec<(usize, usize)>,
    pub lambda: f64,
    pub model: Model,
    pub use_ir: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta1: f64,
    pub beta2: f64,
}

/// JSON sidecar describing a grid CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub argmax: Vec<GridPoint>,
    pub max_score: f64,
    pub lambda: f64,
    pub regime: Model,
    pub ir: bool,
    pub beta1_steps: usize,
    pub beta2_steps: usize,
}

impl ObjectiveGrid {
    pub fn at(&self, i: usize, j: usize) -> &ScoreValue {
        &self.values[i * self.beta2.len() + j]
    }

    pub fn max_score(&self) -> f64 {
        self.values.iter().map(|v| v.weighted_total).fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when, for every `beta1`, the score does not change along `beta2`.
    pub fn constant_in_beta2(&self) -> bool {
        (0..self.beta1.len()).all(|i| {
            let first = self.at(i, 0).weighted_total;
            (1..self.beta2.len()).all(|j| self.at(i, j).weighted_total == first)
        })
    }

    pub fn sidecar(&self) -> GridSidecar {
        GridSidecar {
            argmax: self.argmax.iter().map(|&(i, j)| GridPoint { beta1: self.beta1[i], beta2: self.beta2[j] }).collect(),
            max_score: self.max_score(),
            lambda: self.lambda,
            regime: self.model,
            ir: self.use_ir,
            beta1_steps: self.beta1.len(),
            beta2_steps: self.beta2.len(),
        }
    }

    /// Writes `beta1,beta2,score`, one row per cell.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["beta1", "beta2", "score"])?;
        for (i, &b1) in self.beta1.iter().enumerate() {
            for (j, &b2) in self.beta2.iter().enumerate() {
                wtr.write_record([fmt_f64(b1), fmt_f64(b2), fmt_f64(self.at(i, j).weighted_total)])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Evaluates the objective on the Cartesian product of two axes.
pub fn objective_grid(objective: &Objective, beta1: GridAxis, beta2: GridAxis) -> Result<ObjectiveGrid> {
    let beta1 = GridAxis::new(beta1.start, beta1.end, beta1.steps)?.values();
    let beta2 = GridAxis::new(beta2.start, beta2.end, beta2.steps)?.values();
    let values: Vec<ScoreValue> = beta1
        .par_iter()
        .flat_map_iter(|&b1| beta2.iter().map(move |&b2| objective.score(Candidate::new(b1, b2))))
        .collect();
    let best = values.iter().map(|v| v.weighted_total).fold(f64::NEG_INFINITY, f64::max);
    let argmax = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.weighted_total == best)
        .map(|(k, _)| (k / beta2.len(), k % beta2.len()))
        .collect();
    Ok(ObjectiveGrid {
        beta1,
        beta2,
        values,
        argmax,
        lambda: objective.lambda(),
        model: objective.model(),
        use_ir: objective.use_ir(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_assignment, ObservedData};
    use crate::inequalities::{build_inequalities, evaluate_inequality, ScoreConfig};
    use crate::market::{generate_market, value_matrix};

    fn setup(n: usize, seed: u64, spec: ProductionSpec, model: Model, use_ir: bool) -> (Market, InequalitySet) {
        let market = generate_market(n, seed).unwrap();
        let outcome = solve_assignment(&value_matrix(&spec, &market)).unwrap();
        let data = ObservedData::new(&market, &outcome, true, true);
        let set = build_inequalities(&data, &ScoreConfig::new(model, use_ir, 100.0).unwrap()).unwrap();
        (market, set)
    }

    #[test]
    fn empty_set_scores_zero() {
        let market = generate_market(2, 1).unwrap();
        let spec = ProductionSpec::case2(0.5, -2.0, 8.0).unwrap();
        let set = InequalitySet {
            rows: vec![],
            config: ScoreConfig::new(Model::U, true, 100.0).unwrap(),
            counts: Default::default(),
        };
        assert_eq!(score(Candidate::new(0.5, -2.0), &set, &spec, &market), ScoreValue::default());
    }

    #[test]
    fn compiled_rows_agree_with_direct_evaluation() {
        let spec = ProductionSpec::case1(0.5, -1.0);
        for model in Model::ALL {
            let (market, set) = setup(12, 5, spec, model, true);
            let obj = Objective::compile(&set, &spec, &market);
            for &(b1, b2) in &[(0.5, -1.0), (-2.0, 3.0), (7.3, -9.1)] {
                let cand = spec.with_betas(b1, b2);
                let direct_pw = set.pairwise().filter(|r| !r.vacuous && evaluate_inequality(r, &cand, &market)).count();
                let direct_ir = set.ir().filter(|r| evaluate_inequality(r, &cand, &market)).count();
                let s = obj.score(Candidate::new(b1, b2));
                assert_eq!(s.pairwise_satisfied as usize, direct_pw, "{model}");
                assert_eq!(s.ir_satisfied as usize, direct_ir, "{model}");
                assert_eq!(s.weighted_total, direct_pw as f64 + 100.0 * direct_ir as f64);
            }
        }
    }

    #[test]
    fn case2_none_regime_ignores_beta2_sign() {
        let spec = ProductionSpec::case2(0.5, -2.0, 8.0).unwrap();
        let (market, set) = setup(15, 2, spec, Model::None, false);
        let obj = Objective::compile(&set, &spec, &market);
        for b1 in [-3.0, 0.5, 2.0] {
            assert_eq!(obj.score(Candidate::new(b1, -9.0)), obj.score(Candidate::new(b1, 9.0)));
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let spec = ProductionSpec::case2(0.5, -2.0, 8.0).unwrap();
        let (market, mut set) = setup(10, 4, spec, Model::U, true);
        let before = score(Candidate::new(0.4, -1.5), &set, &spec, &market);
        set.rows.reverse();
        assert_eq!(score(Candidate::new(0.4, -1.5), &set, &spec, &market), before);
    }

    #[test]
    fn grid_axis_parsing() {
        let a: GridAxis = "-1:2:61".parse().unwrap();
        assert_eq!(a.values().len(), 61);
        assert_eq!(a.values()[0], -1.0);
        assert_eq!(a.values()[60], 2.0);
        assert!("1:2".parse::<GridAxis>().is_err());
        assert!("1:2:1".parse::<GridAxis>().is_err());
    }

    #[test]
    fn constant_objective_grid() {
        let market = generate_market(2, 1).unwrap();
        let spec = ProductionSpec::case1(0.5, 0.0);
        let set = InequalitySet {
            rows: vec![],
            config: ScoreConfig::new(Model::None, false, 1.0).unwrap(),
            counts: Default::default(),
        };
        let obj = Objective::compile(&set, &spec, &market);
        let axis = GridAxis::new(-1.0, 1.0, 2).unwrap();
        let grid = objective_grid(&obj, axis, axis).unwrap();
        assert!(grid.values.iter().all(|v| *v == grid.values[0]));
        assert_eq!(grid.argmax.len(), 4);
        assert!(grid.constant_in_beta2());
    }

    #[test]
    fn grid_csv_has_one_row_per_cell() {
        let spec = ProductionSpec::case2(0.5, -2.0, 8.0).unwrap();
        let (market, set) = setup(6, 3, spec, Model::U, true);
        let obj = Objective::compile(&set, &spec, &market);
        let grid = objective_grid(&obj, GridAxis::new(-1.0, 2.0, 4).unwrap(), GridAxis::new(-10.0, 2.0, 5).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 20);
        assert_eq!(text.lines().next().unwrap(), "beta1,beta2,score");
        let side = grid.sidecar();
        assert!(!side.argmax.is_empty());
        assert_eq!(side.regime, Model::U);
    }
}
