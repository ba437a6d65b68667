//! Equilibrium of the one-to-one assignment game.
//!
//! The primal is the assignment linear program over realized values `F` with
//! row and column sums at most one. It is solved exactly by running the Hungarian
//! method on `max(F, 0)`: any pair with non-positive surplus is treated as two
//! agents taking their outside option. Supporting prices come from the dual
//! `min Σu + Σv  s.t.  u_b + v_s ≥ F(b,s), u, v ≥ 0`.
//!
//! The dual is usually not unique. The solver always returns the buyer-optimal
//! point of the dual lattice: every seller dual `v_s` is as small as any optimal
//! dual allows, so `Σv` is minimal and each `u_b` maximal. Given the optimal
//! matching `μ`, it is the least solution of
//!
//! ```text
//! v_s = 0                                            for unmatched s
//! v_s ≥ max(0, F(b̃, s))                              for unmatched b̃
//! v_s ≥ F(b, s) − F(b, μ(b)) + v_μ(b)                for matched b
//! ```
//!
//! computed by longest-path relaxation. The transfer on a matched pair is the
//! seller dual.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::market::Market;

/// Absolute tolerance for feasibility and slackness checks on solver output.
pub const POST_SOLVE_TOL: f64 = 1e-7;

/// Absolute tolerance used inside the solver.
pub const INTERNAL_TOL: f64 = 1e-9;

/// A buyer-seller pair in which either member may be the null agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchPair {
    pub buyer: Option<usize>,
    pub seller: Option<usize>,
}

impl MatchPair {
    pub const NULL: MatchPair = MatchPair { buyer: None, seller: None };

    pub fn matched(buyer: usize, seller: usize) -> Self {
        Self { buyer: Some(buyer), seller: Some(seller) }
    }

    pub fn lone_buyer(buyer: usize) -> Self {
        Self { buyer: Some(buyer), seller: None }
    }

    pub fn lone_seller(seller: usize) -> Self {
        Self { buyer: None, seller: Some(seller) }
    }

    pub fn is_real(&self) -> bool {
        self.buyer.is_some() && self.seller.is_some()
    }
}

impl std::fmt::Display for MatchPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let side = |x: Option<usize>| x.map_or_else(|| "∅".to_string(), |i| i.to_string());
        write!(f, "({},{})", side(self.buyer), side(self.seller))
    }
}

/// Realized value of a pair; any pair with a null member is worth exactly zero.
#[inline]
pub fn pair_value(values: &DMatrix<f64>, buyer: Option<usize>, seller: Option<usize>) -> f64 {
    match (buyer, seller) {
        (Some(b), Some(s)) => values[(b, s)],
        _ => 0.0,
    }
}

/// Rule used to pick one point of the (generally non-unique) optimal dual set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualSelection {
    BuyerOptimal,
}

/// Equilibrium matching, prices and duals of one market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OutcomeDoc", into = "OutcomeDoc")]
pub struct MatchingOutcome {
    /// Matched pairs sorted by buyer index.
    pub matched_pairs: Vec<(usize, usize)>,
    pub unmatched_buyers: Vec<usize>,
    pub unmatched_sellers: Vec<usize>,
    /// Transfer paid on each matched pair.
    pub transfers: BTreeMap<(usize, usize), f64>,
    pub buyer_duals: Vec<f64>,
    pub seller_duals: Vec<f64>,
    pub total_value: f64,
    pub dual_selection: DualSelection,
}

impl MatchingOutcome {
    pub fn n_buyers(&self) -> usize {
        self.buyer_duals.len()
    }

    pub fn n_sellers(&self) -> usize {
        self.seller_duals.len()
    }

    /// Transfer of a pair; unmatched singletons and the null pair carry zero.
    pub fn price(&self, pair: MatchPair) -> f64 {
        match (pair.buyer, pair.seller) {
            (Some(b), Some(s)) => self.transfers.get(&(b, s)).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// The set of observed matches: matched pairs, then (optionally) every
    /// unmatched buyer as `(b̃, ∅)` and every unmatched seller as `(∅, s̃)`.
    pub fn match_elements(&self, include_unmatched: bool) -> Vec<MatchPair> {
        let mut out: Vec<MatchPair> = self.matched_pairs.iter().map(|&(b, s)| MatchPair::matched(b, s)).collect();
        if include_unmatched {
            out.extend(self.unmatched_buyers.iter().map(|&b| MatchPair::lone_buyer(b)));
            out.extend(self.unmatched_sellers.iter().map(|&s| MatchPair::lone_seller(s)));
        }
        out
    }

    /// Checks the partition, transfer-domain and dual-sign invariants.
    pub fn check_structure(&self) -> Result<()> {
        let nb = self.n_buyers();
        let ns = self.n_sellers();
        let mut seen_b = vec![false; nb];
        let mut seen_s = vec![false; ns];
        let mark = |seen: &mut [bool], i: usize, what: &str| -> Result<()> {
            match seen.get_mut(i) {
                Some(flag) if !*flag => {
                    *flag = true;
                    Ok(())
                }
                Some(_) => Err(Error::invalid(format!("{what} {i} appears twice"))),
                None => Err(Error::invalid(format!("{what} {i} out of range"))),
            }
        };
        for &(b, s) in &self.matched_pairs {
            mark(&mut seen_b, b, "buyer")?;
            mark(&mut seen_s, s, "seller")?;
        }
        for &b in &self.unmatched_buyers {
            mark(&mut seen_b, b, "buyer")?;
        }
        for &s in &self.unmatched_sellers {
            mark(&mut seen_s, s, "seller")?;
        }
        if !seen_b.iter().all(|&x| x) || !seen_s.iter().all(|&x| x) {
            return Err(Error::invalid("matched and unmatched lists do not cover every agent"));
        }
        if self.transfers.len() != self.matched_pairs.len()
            || self.matched_pairs.iter().any(|p| !self.transfers.contains_key(p))
        {
            return Err(Error::invalid("transfers must be defined exactly on the matched pairs"));
        }
        if self.transfers.values().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("transfers must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferDoc {
    buyer: usize,
    seller: usize,
    price: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DualsDoc {
    buyer: Vec<f64>,
    seller: Vec<f64>,
    selection: DualSelection,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutcomeDoc {
    matched_pairs: Vec<(usize, usize)>,
    unmatched_buyers: Vec<usize>,
    unmatched_sellers: Vec<usize>,
    transfers: Vec<TransferDoc>,
    duals: DualsDoc,
    total_value: f64,
}

impl From<MatchingOutcome> for OutcomeDoc {
    fn from(o: MatchingOutcome) -> Self {
        OutcomeDoc {
            transfers: o
                .transfers
                .iter()
                .map(|(&(buyer, seller), &price)| TransferDoc { buyer, seller, price })
                .collect(),
            matched_pairs: o.matched_pairs,
            unmatched_buyers: o.unmatched_buyers,
            unmatched_sellers: o.unmatched_sellers,
            duals: DualsDoc { buyer: o.buyer_duals, seller: o.seller_duals, selection: o.dual_selection },
            total_value: o.total_value,
        }
    }
}

impl TryFrom<OutcomeDoc> for MatchingOutcome {
    type Error = Error;

    fn try_from(doc: OutcomeDoc) -> Result<Self> {
        let outcome = MatchingOutcome {
            transfers: doc.transfers.iter().map(|t| ((t.buyer, t.seller), t.price)).collect(),
            matched_pairs: doc.matched_pairs,
            unmatched_buyers: doc.unmatched_buyers,
            unmatched_sellers: doc.unmatched_sellers,
            buyer_duals: doc.duals.buyer,
            seller_duals: doc.duals.seller,
            total_value: doc.total_value,
            dual_selection: doc.duals.selection,
        };
        outcome.check_structure()?;
        Ok(outcome)
    }
}

/// Solves the assignment LP on realized values and attaches buyer-optimal duals
/// and dual-based transfers.
pub fn solve_assignment(values: &DMatrix<f64>) -> Result<MatchingOutcome> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("value matrix contains non-finite entries"));
    }
    let nb = values.nrows();
    let ns = values.ncols();
    let k = nb.max(ns);

    // Maximize Σ max(F, 0) over perfect matchings of the zero-padded square.
    let cost = DMatrix::from_fn(k, k, |b, s| if b < nb && s < ns { -values[(b, s)].max(0.0) } else { 0.0 });
    let assignment = min_cost_assignment(&cost);

    let mut buyer_partner = vec![None; nb];
    let mut seller_partner = vec![None; ns];
    for (b, &s) in assignment.iter().enumerate().take(nb) {
        if s < ns && values[(b, s)] > 0.0 {
            buyer_partner[b] = Some(s);
            seller_partner[s] = Some(b);
        }
    }

    let matched_pairs: Vec<(usize, usize)> =
        buyer_partner.iter().enumerate().filter_map(|(b, s)| s.map(|s| (b, s))).collect();
    let unmatched_buyers = (0..nb).filter(|&b| buyer_partner[b].is_none()).collect();
    let unmatched_sellers = (0..ns).filter(|&s| seller_partner[s].is_none()).collect();
    let total_value = matched_pairs.iter().map(|&(b, s)| values[(b, s)]).sum();

    let (buyer_duals, seller_duals) = buyer_optimal_duals(values, &buyer_partner, &seller_partner);

    let mut outcome = MatchingOutcome {
        matched_pairs,
        unmatched_buyers,
        unmatched_sellers,
        transfers: BTreeMap::new(),
        buyer_duals,
        seller_duals,
        total_value,
        dual_selection: DualSelection::BuyerOptimal,
    };
    check_duals(&outcome, values, INTERNAL_TOL)?;
    outcome.transfers = extract_transfers(&outcome, values)?;
    Ok(outcome)
}

fn buyer_optimal_duals(
    values: &DMatrix<f64>,
    buyer_partner: &[Option<usize>],
    seller_partner: &[Option<usize>],
) -> (Vec<f64>, Vec<f64>) {
    let nb = values.nrows();
    let ns = values.ncols();

    let mut v = vec![0.0f64; ns];
    for s in 0..ns {
        if seller_partner[s].is_some() {
            v[s] = (0..nb)
                .filter(|&b| buyer_partner[b].is_none())
                .map(|b| values[(b, s)])
                .fold(0.0, f64::max);
        }
    }

    // Longest paths over matched sellers. Optimality of the matching rules out
    // positive cycles, so at most one pass per matched pair is needed; the cap
    // only guards against rounding.
    let matched: Vec<(usize, usize)> =
        buyer_partner.iter().enumerate().filter_map(|(b, s)| s.map(|s| (b, s))).collect();
    for _ in 0..=matched.len() {
        let mut changed = false;
        for &(b, home) in &matched {
            let base = v[home] - values[(b, home)];
            for &(_, s) in &matched {
                let cand = values[(b, s)] + base;
                if cand > v[s] {
                    v[s] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let u = (0..nb)
        .map(|b| match buyer_partner[b] {
            Some(s) => values[(b, s)] - v[s],
            None => 0.0,
        })
        .collect();
    (u, v)
}

fn check_duals(outcome: &MatchingOutcome, values: &DMatrix<f64>, tol: f64) -> Result<()> {
    let u = &outcome.buyer_duals;
    let v = &outcome.seller_duals;
    if let Some(b) = (0..u.len()).find(|&b| u[b] < -tol) {
        return Err(Error::Numerical(format!("buyer dual {b} is negative ({})", u[b])));
    }
    if let Some(s) = (0..v.len()).find(|&s| v[s] < -tol) {
        return Err(Error::Numerical(format!("seller dual {s} is negative ({})", v[s])));
    }
    for b in 0..u.len() {
        for s in 0..v.len() {
            if u[b] + v[s] < values[(b, s)] - tol {
                return Err(Error::Numerical(format!(
                    "dual infeasible at ({b},{s}): {} + {} < {}",
                    u[b], v[s], values[(b, s)]
                )));
            }
        }
    }
    for &(b, s) in &outcome.matched_pairs {
        if (u[b] + v[s] - values[(b, s)]).abs() > tol {
            return Err(Error::Numerical(format!("complementary slackness fails at ({b},{s})")));
        }
    }
    for &b in &outcome.unmatched_buyers {
        if u[b].abs() > tol {
            return Err(Error::Numerical(format!("unmatched buyer {b} has dual {}", u[b])));
        }
    }
    for &s in &outcome.unmatched_sellers {
        if v[s].abs() > tol {
            return Err(Error::Numerical(format!("unmatched seller {s} has dual {}", v[s])));
        }
    }
    Ok(())
}

/// Transfers `p_{b,s} = v_s` on matched pairs, clamped to `[0, F(b,s)]`.
///
/// Fails if complementary slackness is violated by more than [`POST_SOLVE_TOL`].
pub fn extract_transfers(outcome: &MatchingOutcome, values: &DMatrix<f64>) -> Result<BTreeMap<(usize, usize), f64>> {
    if values.nrows() != outcome.n_buyers() || values.ncols() != outcome.n_sellers() {
        return Err(Error::dim("value matrix does not match the outcome"));
    }
    let mut transfers = BTreeMap::new();
    for &(b, s) in &outcome.matched_pairs {
        let f = values[(b, s)];
        let gap = outcome.buyer_duals[b] + outcome.seller_duals[s] - f;
        if gap.abs() > POST_SOLVE_TOL {
            return Err(Error::Numerical(format!(
                "complementary slackness violated at ({b},{s}) by {gap:e}"
            )));
        }
        transfers.insert((b, s), outcome.seller_duals[s].clamp(0.0, f.max(0.0)));
    }
    Ok(transfers)
}

/// Kind of equilibrium condition checked by [`verify_stability`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Pairwise,
    Ir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityViolation {
    pub kind: ConditionKind,
    pub left: MatchPair,
    /// Absent for IR rows.
    pub right: Option<MatchPair>,
    /// `lhs − rhs`; negative beyond tolerance means violated.
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pairwise_rows: usize,
    pub ir_rows: usize,
    pub violations: Vec<StabilityViolation>,
    pub passed: bool,
}

/// Checks every pairwise-stability row `F(b,s) − F(b,s′) ≥ p_{b,s} − p_{b′,s′}`
/// over ordered pairs of distinct matches (unmatched agents included as
/// singletons) and every IR row `F(b,s) − p_{b,s} ≥ 0`, at [`POST_SOLVE_TOL`].
pub fn verify_stability(outcome: &MatchingOutcome, values: &DMatrix<f64>) -> StabilityReport {
    let elements = outcome.match_elements(true);
    let mut violations = Vec::new();
    let mut pairwise_rows = 0;

    for (i, left) in elements.iter().enumerate() {
        for (j, right) in elements.iter().enumerate() {
            if i == j {
                continue;
            }
            pairwise_rows += 1;
            let lhs = pair_value(values, left.buyer, left.seller) - pair_value(values, left.buyer, right.seller);
            let rhs = outcome.price(*left) - outcome.price(*right);
            if lhs - rhs < -POST_SOLVE_TOL {
                violations.push(StabilityViolation {
                    kind: ConditionKind::Pairwise,
                    left: *left,
                    right: Some(*right),
                    slack: lhs - rhs,
                });
            }
        }
    }

    for &(b, s) in &outcome.matched_pairs {
        let pair = MatchPair::matched(b, s);
        let slack = values[(b, s)] - outcome.price(pair);
        if slack < -POST_SOLVE_TOL {
            violations.push(StabilityViolation { kind: ConditionKind::Ir, left: pair, right: None, slack });
        }
    }

    StabilityReport {
        pairwise_rows,
        ir_rows: outcome.matched_pairs.len(),
        passed: violations.is_empty(),
        violations,
    }
}

/// What the econometrician observes from one equilibrium.
///
/// The transfer map is only reachable through [`ObservedData::transfers`], which
/// withholds it unless `include_transfers` is set.
#[derive(Clone, Copy, Debug)]
pub struct ObservedData<'a> {
    pub market: &'a Market,
    pub outcome: &'a MatchingOutcome,
    pub include_unmatched: bool,
    pub include_transfers: bool,
}

impl<'a> ObservedData<'a> {
    pub fn new(market: &'a Market, outcome: &'a MatchingOutcome, include_unmatched: bool, include_transfers: bool) -> Self {
        Self { market, outcome, include_unmatched, include_transfers }
    }

    pub fn transfers(&self) -> Option<&'a BTreeMap<(usize, usize), f64>> {
        self.include_transfers.then_some(&self.outcome.transfers)
    }
}
