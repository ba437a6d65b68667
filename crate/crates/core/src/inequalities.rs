//! Pairwise-stability and individual-rationality inequalities built from one
//! observed equilibrium.
//!
//! Let `M` be the matched pairs, extended with `(b̃, ∅)` and `(∅, s̃)` singletons
//! when unmatched agents are observed. With transfers every ordered pair of
//! distinct elements gives one row
//!
//! ```text
//! f(b, s) − f(b, s′) ≥ p(b, s) − p(b′, s′)
//! ```
//!
//! and without transfers every unordered pair gives
//!
//! ```text
//! f(b, s) + f(b′, s′) ≥ f(b, s′) + f(b′, s).
//! ```
//!
//! IR rows `f(b, s) − p(b, s) ≥ 0` (or `f(b, s) ≥ 0` without transfers) are added
//! once per matched pair when requested.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{MatchPair, ObservedData};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::market::{Market, ProductionSpec};

/// Slack allowed when testing an inequality, absorbing rounding on rows that hold
/// with equality (common at the truth because the dual prices are tight).
pub const ROW_TOL: f64 = 1e-9;

/// Data-availability regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    /// Unmatched agents and transfers observed.
    #[serde(rename = "ut")]
    UT,
    /// Transfers only.
    #[serde(rename = "t")]
    T,
    /// Unmatched agents only.
    #[serde(rename = "u")]
    U,
    /// Matched pairs only.
    #[serde(rename = "none")]
    None,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::UT, Model::T, Model::U, Model::None];

    pub fn has_unmatched(self) -> bool {
        matches!(self, Model::UT | Model::U)
    }

    pub fn has_transfers(self) -> bool {
        matches!(self, Model::UT | Model::T)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Model::UT => "ut",
            Model::T => "t",
            Model::U => "u",
            Model::None => "none",
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace([',', '(', ')', ' '], "").as_str() {
            "ut" => Ok(Model::UT),
            "t" => Ok(Model::T),
            "u" => Ok(Model::U),
            "none" | "non" => Ok(Model::None),
            other => Err(Error::invalid(format!("unknown model `{other}` (expected ut, t, u or none)"))),
        }
    }
}

/// Which inequalities enter the objective, and the IR weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub has_unmatched: bool,
    pub has_transfers: bool,
    pub use_ir: bool,
    /// Weight on each satisfied IR row; must be at least 1 when `use_ir`.
    pub lambda: f64,
    /// Score IR rows as `f ≥ 0` even when transfers are observed.
    #[serde(default)]
    pub ir_ignore_transfers: bool,
}

impl ScoreConfig {
    pub fn new(model: Model, use_ir: bool, lambda: f64) -> Result<Self> {
        let config = Self {
            has_unmatched: model.has_unmatched(),
            has_transfers: model.has_transfers(),
            use_ir,
            lambda,
            ir_ignore_transfers: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn model(&self) -> Model {
        match (self.has_unmatched, self.has_transfers) {
            (true, true) => Model::UT,
            (false, true) => Model::T,
            (true, false) => Model::U,
            (false, false) => Model::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite"));
        }
        if self.use_ir && self.lambda < 1.0 {
            return Err(Error::invalid(format!("lambda must be >= 1 when IR rows are used, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PairwiseWithTransfer,
    PairwiseNoTransfer,
    Ir,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::PairwiseWithTransfer => "pairwise_with_transfer",
            Family::PairwiseNoTransfer => "pairwise_no_transfer",
            Family::Ir => "ir",
        }
    }

    pub fn is_pairwise(self) -> bool {
        !matches!(self, Family::Ir)
    }
}

/// One row of the estimating inequality system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub family: Family,
    pub left: MatchPair,
    /// The comparison match; [`MatchPair::NULL`] for IR rows.
    pub right: MatchPair,
    /// `p(left) − p(right)` for rows with transfers, `p(left)` for IR rows with
    /// transfers, absent otherwise.
    pub transfer_rhs: Option<f64>,
    /// Every production term involves a null agent, so the row holds for any
    /// parameter value.
    pub vacuous: bool,
}

impl Inequality {
    /// The `(buyer, seller)` pairs whose production enters the row with sign +1
    /// and −1 respectively.
    pub fn terms(&self) -> (Vec<MatchPair>, Vec<MatchPair>) {
        let (l, r) = (self.left, self.right);
        let cross = |b: Option<usize>, s: Option<usize>| MatchPair { buyer: b, seller: s };
        match self.family {
            Family::PairwiseWithTransfer => (vec![l], vec![cross(l.buyer, r.seller)]),
            Family::PairwiseNoTransfer => {
                (vec![l, r], vec![cross(l.buyer, r.seller), cross(r.buyer, l.seller)])
            }
            Family::Ir => (vec![l], vec![]),
        }
    }

    pub fn rhs(&self) -> f64 {
        self.transfer_rhs.unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub pairwise_with_transfer: usize,
    pub pairwise_no_transfer: usize,
    pub ir: usize,
    /// Rows (of any pairwise family) flagged vacuous.
    pub vacuous: usize,
}

impl FamilyCounts {
    pub fn pairwise(&self) -> usize {
        self.pairwise_with_transfer + self.pairwise_no_transfer
    }
}

/// All inequalities built from one observed equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalitySet {
    pub rows: Vec<Inequality>,
    pub config: ScoreConfig,
    pub counts: FamilyCounts,
}

impl InequalitySet {
    pub fn pairwise(&self) -> impl Iterator<Item = &Inequality> {
        self.rows.iter().filter(|r| r.family.is_pairwise())
    }

    pub fn ir(&self) -> impl Iterator<Item = &Inequality> {
        self.rows.iter().filter(|r| r.family == Family::Ir)
    }

    /// Writes `family,left_b,left_s,right_b,right_s,transfer_rhs,vacuous`; null
    /// agents and absent right-hand sides are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["family", "left_b", "left_s", "right_b", "right_s", "transfer_rhs", "vacuous"])?;
        let idx = |x: Option<usize>| x.map(|i| i.to_string()).unwrap_or_default();
        for row in &self.rows {
            wtr.write_record([
                row.family.as_str().to_string(),
                idx(row.left.buyer),
                idx(row.left.seller),
                idx(row.right.buyer),
                idx(row.right.seller),
                row.transfer_rhs.map(fmt_f64).unwrap_or_default(),
                row.vacuous.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn involves_null(buyer: Option<usize>, seller: Option<usize>) -> bool {
    buyer.is_none() || seller.is_none()
}

/// Builds the inequality system for the regime in `config`.
pub fn build_inequalities(data: &ObservedData<'_>, config: &ScoreConfig) -> Result<InequalitySet> {
    config.validate()?;
    if config.has_unmatched && !data.include_unmatched {
        return Err(Error::invalid("unmatched agents requested but not present in the observed data"));
    }
    let transfers = data.transfers();
    if config.has_transfers && transfers.is_none() {
        return Err(Error::invalid("transfers requested but withheld from the observed data"));
    }

    let outcome = data.outcome;
    let elements = outcome.match_elements(config.has_unmatched);
    let mut rows = Vec::new();
    let mut counts = FamilyCounts::default();

    if config.has_transfers {
        for (i, &left) in elements.iter().enumerate() {
            for (j, &right) in elements.iter().enumerate() {
                if i == j {
                    continue;
                }
                let vacuous = left.buyer.is_none() || (left.seller.is_none() && right.seller.is_none());
                rows.push(Inequality {
                    family: Family::PairwiseWithTransfer,
                    left,
                    right,
                    transfer_rhs: Some(outcome.price(left) - outcome.price(right)),
                    vacuous,
                });
                counts.pairwise_with_transfer += 1;
                counts.vacuous += usize::from(vacuous);
            }
        }
    } else {
        for (i, &left) in elements.iter().enumerate() {
            for &right in &elements[i + 1..] {
                let vacuous = involves_null(left.buyer, left.seller)
                    && involves_null(right.buyer, right.seller)
                    && involves_null(left.buyer, right.seller)
                    && involves_null(right.buyer, left.seller);
                rows.push(Inequality {
                    family: Family::PairwiseNoTransfer,
                    left,
                    right,
                    transfer_rhs: None,
                    vacuous,
                });
                counts.pairwise_no_transfer += 1;
                counts.vacuous += usize::from(vacuous);
            }
        }
    }

    if config.use_ir {
        if outcome.matched_pairs.is_empty() {
            warn!("no matched pairs: IR conditions requested but none can be built");
        }
        let with_price = config.has_transfers && !config.ir_ignore_transfers;
        for &(b, s) in &outcome.matched_pairs {
            let pair = MatchPair::matched(b, s);
            rows.push(Inequality {
                family: Family::Ir,
                left: pair,
                right: MatchPair::NULL,
                transfer_rhs: with_price.then(|| outcome.price(pair)),
                vacuous: false,
            });
            counts.ir += 1;
        }
    }

    Ok(InequalitySet { rows, config: *config, counts })
}

/// Number of pairwise rows for a regime: `nP2` with transfers, `nC2` without,
/// where `n` counts matched pairs plus (with unmatched data) unmatched agents.
pub fn count_formula(m: u64, ub: u64, us: u64, has_unmatched: bool, has_transfers: bool) -> u64 {
    let n = if has_unmatched { m + ub + us } else { m };
    let permutations = n * n.saturating_sub(1);
    if has_transfers {
        permutations
    } else {
        permutations / 2
    }
}

/// Tests one row at the coefficients in `spec`, using the deterministic part of
/// production only.
pub fn evaluate_inequality(row: &Inequality, spec: &ProductionSpec, market: &Market) -> bool {
    let f = |p: &MatchPair| spec.value(&market.features(spec, p.buyer, p.seller));
    let (plus, minus) = row.terms();
    let lhs: f64 = plus.iter().map(f).sum::<f64>() - minus.iter().map(f).sum::<f64>();
    lhs - row.rhs() >= -ROW_TOL
}
