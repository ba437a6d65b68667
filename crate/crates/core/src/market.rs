//! Market data, synthetic market generation and the joint production function.
//!
//! A market holds three covariates per agent on each side plus one idiosyncratic
//! match shock per real buyer-seller pair. Covariates are drawn from a trivariate
//! normal with mean 3 and unit variances, pairwise covariance 0.25.
//!
//! Every random number for a market comes from a single ChaCha20 stream seeded
//! with the market seed, in this order: buyer covariates (row by row), seller
//! covariates, then the noise matrix in row-major order. Standard normals use the
//! ziggurat sampler of `rand_distr::StandardNormal`.

use std::io::Write;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;

/// Number of covariates carried by each agent.
pub const N_COVARIATES: usize = 3;

/// Mean of every covariate component.
pub const COVARIATE_MEAN: f64 = 3.0;

/// Off-diagonal entry of the covariate covariance matrix (diagonal is 1).
pub const COVARIATE_COVARIANCE: f64 = 0.25;

/// Default level constant of the Case 2 matching cost.
pub const DEFAULT_KAPPA: f64 = 8.0;

pub type Covariates = [f64; N_COVARIATES];

/// Covariance matrix of one agent's covariate triple.
pub fn covariate_covariance() -> Matrix3<f64> {
    let c = COVARIATE_COVARIANCE;
    Matrix3::new(1.0, c, c, c, 1.0, c, c, c, 1.0)
}

/// Lower-triangular factor `L` with `L Lᵀ` equal to [`covariate_covariance`].
pub fn covariate_factor() -> Matrix3<f64> {
    covariate_covariance()
        .cholesky()
        .expect("constant covariance is positive definite")
        .l()
}

/// Parametric form of the joint production function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecKind {
    /// Three covariate interactions; the third is weighted by `beta2`.
    Case1,
    /// Two covariate interactions plus a common matching cost `beta2 * kappa`.
    Case2,
}

impl SpecKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecKind::Case1 => "case1",
            SpecKind::Case2 => "case2",
        }
    }
}

impl std::fmt::Display for SpecKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SpecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "case1" | "1" => Ok(SpecKind::Case1),
            "case2" | "2" => Ok(SpecKind::Case2),
            other => Err(Error::invalid(format!("unknown case `{other}` (expected case1 or case2)"))),
        }
    }
}

/// Joint production specification `f(b, s | X, beta)` with `beta0` fixed at one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductionSpec {
    pub kind: SpecKind,
    pub beta1: f64,
    pub beta2: f64,
    /// Level of the matching cost; only read by [`SpecKind::Case2`].
    pub kappa: f64,
}

impl ProductionSpec {
    /// Normalized coefficient on the first interaction. Never estimated.
    pub const BETA0: f64 = 1.0;

    pub fn new(kind: SpecKind, beta1: f64, beta2: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be positive and finite, got {kappa}")));
        }
        if !beta1.is_finite() || !beta2.is_finite() {
            return Err(Error::invalid("beta1 and beta2 must be finite"));
        }
        Ok(Self { kind, beta1, beta2, kappa })
    }

    pub fn case1(beta1: f64, beta2: f64) -> Self {
        Self { kind: SpecKind::Case1, beta1, beta2, kappa: DEFAULT_KAPPA }
    }

    pub fn case2(beta1: f64, beta2: f64, kappa: f64) -> Result<Self> {
        Self::new(SpecKind::Case2, beta1, beta2, kappa)
    }

    /// Same functional form evaluated at other coefficients.
    pub fn with_betas(&self, beta1: f64, beta2: f64) -> Self {
        Self { beta1, beta2, ..*self }
    }

    /// Components `(a0, a1, a2)` such that `f = a0 + beta1 * a1 + beta2 * a2`.
    ///
    /// A pair containing the null agent has all components zero, so its value is
    /// the normalized outside option 0 under both cases.
    pub fn features(&self, buyer: Option<&Covariates>, seller: Option<&Covariates>) -> Covariates {
        match (buyer, seller) {
            (Some(xb), Some(xs)) => {
                let third = match self.kind {
                    SpecKind::Case1 => xb[2] * xs[2],
                    SpecKind::Case2 => self.kappa,
                };
                [xb[0] * xs[0], xb[1] * xs[1], third]
            }
            _ => [0.0; N_COVARIATES],
        }
    }

    /// Evaluates `f` from precomputed [`features`](Self::features).
    #[inline]
    pub fn value(&self, a: &Covariates) -> f64 {
        Self::BETA0 * a[0] + self.beta1 * a[1] + self.beta2 * a[2]
    }
}

/// Which side of the market an agent belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buyer,
    Seller,
}

/// Reference to a buyer, a seller, or the null agent of either side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentRef {
    pub side: Side,
    /// `None` is the null agent.
    pub index: Option<usize>,
}

impl AgentRef {
    pub fn buyer(index: usize) -> Self {
        Self { side: Side::Buyer, index: Some(index) }
    }

    pub fn seller(index: usize) -> Self {
        Self { side: Side::Seller, index: Some(index) }
    }

    pub fn null(side: Side) -> Self {
        Self { side, index: None }
    }

    pub fn is_null(&self) -> bool {
        self.index.is_none()
    }
}

/// One simulated matching market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketDoc", into = "MarketDoc")]
pub struct Market {
    buyer_covariates: Vec<Covariates>,
    seller_covariates: Vec<Covariates>,
    noise: DMatrix<f64>,
    seed: u64,
}

impl Market {
    /// Assembles a market from explicit parts, checking dimensions.
    pub fn from_parts(
        buyer_covariates: Vec<Covariates>,
        seller_covariates: Vec<Covariates>,
        noise: DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        if buyer_covariates.is_empty() || seller_covariates.is_empty() {
            return Err(Error::invalid("a market needs at least one buyer and one seller"));
        }
        if noise.nrows() != buyer_covariates.len() || noise.ncols() != seller_covariates.len() {
            return Err(Error::dim(format!(
                "noise is {}x{} but market has {} buyers and {} sellers",
                noise.nrows(),
                noise.ncols(),
                buyer_covariates.len(),
                seller_covariates.len()
            )));
        }
        let finite = buyer_covariates.iter().chain(&seller_covariates).flatten().all(|x| x.is_finite())
            && noise.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("market data contains non-finite values"));
        }
        Ok(Self { buyer_covariates, seller_covariates, noise, seed })
    }

    pub fn n_buyers(&self) -> usize {
        self.buyer_covariates.len()
    }

    pub fn n_sellers(&self) -> usize {
        self.seller_covariates.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn buyer_covariates(&self) -> &[Covariates] {
        &self.buyer_covariates
    }

    pub fn seller_covariates(&self) -> &[Covariates] {
        &self.seller_covariates
    }

    pub fn buyer(&self, b: usize) -> &Covariates {
        &self.buyer_covariates[b]
    }

    pub fn seller(&self, s: usize) -> &Covariates {
        &self.seller_covariates[s]
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }

    /// Copy of this market with a different noise matrix.
    pub fn with_noise(&self, noise: DMatrix<f64>) -> Result<Self> {
        Self::from_parts(self.buyer_covariates.clone(), self.seller_covariates.clone(), noise, self.seed)
    }

    /// Copy of this market with every match shock set to zero.
    pub fn without_noise(&self) -> Self {
        Self {
            noise: DMatrix::zeros(self.n_buyers(), self.n_sellers()),
            ..self.clone()
        }
    }

    /// Production features of a (possibly null) pair by index.
    #[inline]
    pub fn features(&self, spec: &ProductionSpec, buyer: Option<usize>, seller: Option<usize>) -> Covariates {
        spec.features(buyer.map(|b| self.buyer(b)), seller.map(|s| self.seller(s)))
    }

    /// Writes the covariates as CSV with header `side,index,x0,x1,x2`.
    pub fn write_covariates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["side", "index", "x0", "x1", "x2"])?;
        let sides = [("buyer", &self.buyer_covariates), ("seller", &self.seller_covariates)];
        for (side, rows) in sides {
            for (i, x) in rows.iter().enumerate() {
                wtr.write_record([
                    side.to_string(),
                    i.to_string(),
                    fmt_f64(x[0]),
                    fmt_f64(x[1]),
                    fmt_f64(x[2]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// JSON layout of a market: row-major nested arrays.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketDoc {
    n: usize,
    seed: u64,
    buyer_covariates: Vec<Covariates>,
    seller_covariates: Vec<Covariates>,
    noise: Vec<Vec<f64>>,
}

impl From<Market> for MarketDoc {
    fn from(m: Market) -> Self {
        let noise = (0..m.noise.nrows())
            .map(|b| m.noise.row(b).iter().copied().collect())
            .collect();
        MarketDoc {
            n: m.n_buyers(),
            seed: m.seed,
            buyer_covariates: m.buyer_covariates,
            seller_covariates: m.seller_covariates,
            noise,
        }
    }
}

impl TryFrom<MarketDoc> for Market {
    type Error = Error;

    fn try_from(doc: MarketDoc) -> Result<Self> {
        if doc.n != doc.buyer_covariates.len() {
            return Err(Error::dim(format!(
                "n = {} but {} buyer rows supplied",
                doc.n,
                doc.buyer_covariates.len()
            )));
        }
        let rows = doc.noise.len();
        let cols = doc.seller_covariates.len();
        if doc.noise.iter().any(|r| r.len() != cols) {
            return Err(Error::dim(format!("every noise row must have {cols} entries")));
        }
        let noise = DMatrix::from_fn(rows, cols, |b, s| doc.noise[b][s]);
        Market::from_parts(doc.buyer_covariates, doc.seller_covariates, noise, doc.seed)
    }
}

/// Draws a market with `n` buyers and `n` sellers from the stream seeded by `seed`.
pub fn generate_market(n: usize, seed: u64) -> Result<Market> {
    if n == 0 {
        return Err(Error::invalid("market size n must be at least 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let factor = covariate_factor();
    let mean = Vector3::repeat(COVARIATE_MEAN);

    let draw_agents = |rng: &mut ChaCha20Rng| -> Vec<Covariates> {
        (0..n)
            .map(|_| {
                let z = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let x = mean + factor * z;
                [x[0], x[1], x[2]]
            })
            .collect()
    };
    let buyers = draw_agents(&mut rng);
    let sellers = draw_agents(&mut rng);

    let mut noise = DMatrix::zeros(n, n);
    for b in 0..n {
        for s in 0..n {
            noise[(b, s)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    Market::from_parts(buyers, sellers, noise, seed)
}

/// Deterministic part `f(b, s)` of a pair's value; null agents contribute nothing.
pub fn joint_production(spec: &ProductionSpec, b: AgentRef, s: AgentRef, market: &Market) -> Result<f64> {
    if b.side != Side::Buyer || s.side != Side::Seller {
        return Err(Error::invalid(format!(
            "joint production needs a buyer and a seller, got {:?} and {:?}",
            b.side, s.side
        )));
    }
    if let Some(i) = b.index.filter(|&i| i >= market.n_buyers()) {
        return Err(Error::invalid(format!("buyer {i} out of range ({} buyers)", market.n_buyers())));
    }
    if let Some(j) = s.index.filter(|&j| j >= market.n_sellers()) {
        return Err(Error::invalid(format!("seller {j} out of range ({} sellers)", market.n_sellers())));
    }
    Ok(spec.value(&market.features(spec, b.index, s.index)))
}

/// Realized match values `F(b, s) = f(b, s) + noise(b, s)` for every real pair.
pub fn value_matrix(spec: &ProductionSpec, market: &Market) -> DMatrix<f64> {
    DMatrix::from_fn(market.n_buyers(), market.n_sellers(), |b, s| {
        spec.value(&market.features(spec, Some(b), Some(s))) + market.noise[(b, s)]
    })
}
