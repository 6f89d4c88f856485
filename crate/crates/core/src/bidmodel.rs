//! Impression types, discrete bid distributions and slot discounts.
//!
//! Every bid distribution lives on a finite grid of bid levels. Continuous
//! benchmark families (truncated Gaussian, truncated Pareto) are discretized
//! onto equal-width bins over `[0, R]`, each bin represented by its midpoint.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Tolerance on the total probability mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Bins whose mass falls below this are dropped after discretization.
const NEGLIGIBLE_MASS: f64 = 1e-14;

/// Default number of discretization bins over `[0, R]`.
pub const DEFAULT_BINS: usize = 100;

/// Discrete distribution of one network's bid on one impression type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct BidDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawDistribution> for BidDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        BidDistribution::new(raw.values, raw.probs)
    }
}

impl From<BidDistribution> for RawDistribution {
    fn from(d: BidDistribution) -> Self {
        RawDistribution {
            values: d.values,
            probs: d.probs,
        }
    }
}

impl BidDistribution {
    /// Builds a distribution, checking that values are strictly increasing and
    /// non-negative and that the probabilities form a distribution.
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if values.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} values but {} probabilities",
                values.len(),
                probs.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(
                "bid values must be finite and non-negative".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDistribution(
                "bid values must be strictly increasing".into(),
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { values, probs })
    }

    /// Builds from `(value, probability)` pairs in any order.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut sorted = pairs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (values, probs) = sorted.into_iter().unzip();
        Self::new(values, probs)
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new(vec![value], vec![1.0])
    }

    /// The 0/1 bid used by the sales objective: bid 1 with probability `p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution(format!(
                "bernoulli parameter {p} outside [0, 1]"
            )));
        }
        Self::new(vec![0.0, 1.0], vec![1.0 - p, p])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest bid level on the grid.
    pub fn max_value(&self) -> f64 {
        *self.values.last().expect("non-empty support")
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    /// Index of the first grid level `>= v`.
    fn first_at_least(&self, v: f64) -> usize {
        self.values.partition_point(|x| *x < v)
    }

    /// Probability that the bid is at least `v`. `v` need not be a grid point.
    pub fn survival(&self, v: f64) -> f64 {
        let k = self.first_at_least(v);
        self.probs[k..].iter().sum::<f64>().min(1.0)
    }

    /// `sum_{v' >= v} v' p(v')`.
    pub fn tail_value(&self, v: f64) -> f64 {
        let k = self.first_at_least(v);
        self.values[k..].iter().zip(&self.probs[k..]).map(|(x, p)| x * p).sum()
    }

    pub fn mean(&self) -> f64 {
        self.tail_value(f64::NEG_INFINITY)
    }

    /// Inverse-CDF draw; consumes exactly one uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (v, p) in self.iter() {
            acc += p;
            if u < acc {
                return v;
            }
        }
        // rounding left `acc` just below 1; take the top level with mass
        let top = self.probs().iter().rposition(|p| *p > 0.0);
        top.map_or(self.max_value(), |k| self.values()[k])
    }

    /// Survival probability at every grid level, `out[k] = P[V >= values[k]]`.
    pub fn survival_table(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut acc = 0.0;
        for k in (0..self.len()).rev() {
            acc += self.probs[k];
            out[k] = acc.min(1.0);
        }
        out
    }

    /// Discrete hazard rate `p(v) / P[V >= v]` is non-decreasing over the support.
    pub fn is_mhr(&self) -> bool {
        let surv = self.survival_table();
        let mut prev = 0.0_f64;
        for (k, p) in self.probs.iter().enumerate() {
            if *p <= 0.0 || surv[k] <= 0.0 {
                continue;
            }
            let h = p / surv[k];
            if h < prev * (1.0 - 1e-9) - 1e-12 {
                return false;
            }
            prev = h;
        }
        true
    }

    /// Jitters every mass by an independent relative factor in `(1 - eps, 1 + eps)`
    /// and renormalizes. Zero masses stay zero, so supports and MHR shape are
    /// kept up to `eps`, and the total variation distance is at most `eps`.
    pub fn perturb_general_position<R: Rng + ?Sized>(&self, epsilon: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1e-6).contains(&epsilon) {
            return Err(crate::error::param("epsilon", "must lie in [0, 1e-6]"));
        }
        if epsilon == 0.0 {
            return Ok(self.clone());
        }
        let mut probs: Vec<f64> = self
            .probs
            .iter()
            .map(|p| p * (1.0 + rng.random_range(-epsilon..epsilon)))
            .collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(self.values.clone(), probs)
    }

    /// Total variation distance to another distribution on the same grid.
    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Non-increasing slot discounts `1 >= rho_1 >= ... >= rho_M >= 0`.
///
/// Slot indices are 1-based; slot `M + 1` is the virtual "no slot" with
/// discount 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SlotProfile {
    discounts: Vec<f64>,
}

impl TryFrom<Vec<f64>> for SlotProfile {
    type Error = Error;

    fn try_from(discounts: Vec<f64>) -> Result<Self> {
        SlotProfile::new(discounts)
    }
}

impl From<SlotProfile> for Vec<f64> {
    fn from(s: SlotProfile) -> Self {
        s.discounts
    }
}

impl SlotProfile {
    pub fn new(discounts: Vec<f64>) -> Result<Self> {
        if discounts.is_empty() {
            return Err(Error::InvalidSlots("at least one slot is required".into()));
        }
        if discounts[0] > 1.0 || discounts[0] <= 0.0 {
            return Err(Error::InvalidSlots("first discount must lie in (0, 1]".into()));
        }
        if discounts.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidSlots("discounts must be non-negative".into()));
        }
        if discounts.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidSlots("discounts must be non-increasing".into()));
        }
        Ok(Self { discounts })
    }

    /// One slot with discount 1.
    pub fn single() -> Self {
        Self { discounts: vec![1.0] }
    }

    /// Number of real slots `M`.
    pub fn len(&self) -> usize {
        self.discounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discounts.is_empty()
    }

    /// Index of the virtual slot, `M + 1`.
    pub fn virtual_slot(&self) -> usize {
        self.discounts.len() + 1
    }

    /// Discount of 1-based slot `l`; the virtual slot has discount 0.
    pub fn discount(&self, l: usize) -> f64 {
        assert!(l >= 1, "slots are 1-based");
        self.discounts.get(l - 1).copied().unwrap_or(0.0)
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }
}

/// One impression type `j` with its arrival probability and per-network bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionType {
    pub id: usize,
    pub arrival_prob: f64,
    pub vertical: usize,
    #[serde(default)]
    pub min_price: f64,
    pub bids: Vec<BidDistribution>,
}

/// Identity of an impression for dual lookup: its type plus the minimum price
/// it arrived with (the two coincide for scenarios without drawn minimum prices).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImpressionKey {
    pub type_id: usize,
    pub min_price: f64,
}

impl PartialEq for ImpressionKey {
    fn eq(&self, other: &Self) -> bool {
        self.type_id == other.type_id && self.min_price.to_bits() == other.min_price.to_bits()
    }
}

impl Eq for ImpressionKey {}

impl std::hash::Hash for ImpressionKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.type_id.hash(state);
        self.min_price.to_bits().hash(state);
    }
}

/// One arriving impression as seen by policies and mechanisms.
///
/// `bids` are the distributions the objective is defined on (0/1 bids for
/// the sales objective); `base` are the underlying bid distributions of the
/// impression's type. `survival` holds the acceptance probabilities at the
/// minimum price, which may be replaced by noisy estimates.
#[derive(Debug, Clone)]
pub struct Impression {
    pub key: ImpressionKey,
    pub vertical: usize,
    pub bids: Arc<[BidDistribution]>,
    pub base: Arc<[BidDistribution]>,
    pub survival: Arc<[f64]>,
}

impl Impression {
    pub fn new(
        key: ImpressionKey,
        vertical: usize,
        bids: Arc<[BidDistribution]>,
        base: Arc<[BidDistribution]>,
    ) -> Self {
        let survival = base.iter().map(|d| d.survival(key.min_price)).collect();
        Self {
            key,
            vertical,
            bids,
            base,
            survival,
        }
    }

    /// Impression whose objective distributions are its type's distributions.
    pub fn from_type(t: &ImpressionType) -> Self {
        let bids: Arc<[BidDistribution]> = t.bids.clone().into();
        let key = ImpressionKey {
            type_id: t.id,
            min_price: t.min_price,
        };
        Self::new(key, t.vertical, bids.clone(), bids)
    }

    /// Sales view of a type arriving with `min_price`: network `i` bids 1
    /// with probability `survival_i(min_price)` and 0 otherwise.
    pub fn sales(t: &ImpressionType, min_price: f64) -> Self {
        let base: Arc<[BidDistribution]> = t.bids.clone().into();
        let bids = base
            .iter()
            .map(|d| BidDistribution::bernoulli(d.survival(min_price)).expect("survival lies in [0, 1]"))
            .collect();
        let key = ImpressionKey {
            type_id: t.id,
            min_price,
        };
        Self::new(key, t.vertical, bids, base)
    }

    pub fn networks(&self) -> usize {
        self.bids.len()
    }

    /// Probability network `i` bids at least the minimum price.
    pub fn survival(&self, i: usize) -> f64 {
        self.survival[i]
    }
}

/// Continuous families used by the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistKind {
    Gaussian,
    Pareto,
}

impl FromStr for DistKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(DistKind::Gaussian),
            "pareto" => Ok(DistKind::Pareto),
            other => Err(crate::error::param(
                "kind",
                format!("`{other}` is not one of gaussian, pareto"),
            )),
        }
    }
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistKind::Gaussian => f.write_str("gaussian"),
            DistKind::Pareto => f.write_str("pareto"),
        }
    }
}

/// Draws a benchmark distribution: mean uniform on `[0, R/2]`, then either a
/// Gaussian with standard deviation uniform on `[0, mean/2]` or a Pareto with
/// shape uniform on `[2, 5]`, truncated to `[0, R]` and discretized.
pub fn generate_benchmark_distribution<R: Rng + ?Sized>(
    kind: DistKind,
    scale: f64,
    bins: usize,
    rng: &mut R,
) -> Result<BidDistribution> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(crate::error::param("R", "scale must be positive"));
    }
    let mean = rng.random_range(0.0..=0.5 * scale);
    match kind {
        DistKind::Gaussian => {
            let std = rng.random_range(0.0..=0.5 * mean);
            discretize_gaussian(mean, std, scale, bins)
        }
        DistKind::Pareto => {
            let shape = rng.random_range(2.0..=5.0);
            discretize_pareto(mean, shape, scale, bins)
        }
    }
}

fn bin_grid(scale: f64, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(crate::error::param("bins", "must be positive"));
    }
    let width = scale / bins as f64;
    Ok((0..bins).map(|k| (k as f64 + 0.5) * width).collect())
}

fn bin_of(x: f64, scale: f64, bins: usize) -> usize {
    ((x / scale * bins as f64).floor() as usize).min(bins - 1)
}

/// Keeps bins with non-negligible mass and renormalizes.
fn from_bin_masses(grid: Vec<f64>, masses: Vec<f64>) -> Result<BidDistribution> {
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidDistribution("truncation left no probability mass".into()));
    }
    let (values, probs): (Vec<f64>, Vec<f64>) = grid
        .into_iter()
        .zip(masses)
        .filter(|(_, m)| *m / total > NEGLIGIBLE_MASS)
        .unzip();
    let kept: f64 = probs.iter().sum();
    BidDistribution::new(values, probs.into_iter().map(|p| p / kept).collect())
}

/// `P[a <= Z <= b]` for a standard normal, computed on the side that avoids
/// cancellation.
fn std_normal_mass(a: f64, b: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    } else {
        1.0 - 0.5 * erfc(b / s) - 0.5 * erfc(-a / s)
    }
    .max(0.0)
}

/// Gaussian `N(mean, std^2)` truncated to `[0, scale]`, binned. A zero standard
/// deviation yields a point mass on the bin containing the mean.
pub fn discretize_gaussian(mean: f64, std: f64, scale: f64, bins: usize) -> Result<BidDistribution> {
    let grid = bin_grid(scale, bins)?;
    if !(0.0..=scale).contains(&mean) {
        return Err(crate::error::param("mean", "must lie in [0, R]"));
    }
    if std <= 0.0 {
        let k = bin_of(mean, scale, bins);
        return BidDistribution::point_mass(grid[k]);
    }
    let width = scale / bins as f64;
    let masses = (0..bins)
        .map(|k| {
            let lo = (k as f64 * width - mean) / std;
            let hi = ((k + 1) as f64 * width - mean) / std;
            std_normal_mass(lo, hi)
        })
        .collect();
    from_bin_masses(grid, masses)
}

/// Pareto with the given mean and shape `alpha > 1` (scale `x_m = mean (alpha - 1) / alpha`),
/// truncated to `[0, scale]`, binned.
pub fn discretize_pareto(mean: f64, shape: f64, scale: f64, bins: usize) -> Result<BidDistribution> {
    let grid = bin_grid(scale, bins)?;
    if !(shape > 1.0) {
        return Err(crate::error::param("shape", "must exceed 1"));
    }
    if !(0.0..=scale).contains(&mean) {
        return Err(crate::error::param("mean", "must lie in [0, R]"));
    }
    let x_m = mean * (shape - 1.0) / shape;
    if x_m <= 0.0 {
        return BidDistribution::point_mass(grid[0]);
    }
    let cdf = |x: f64| {
        if x <= x_m {
            0.0
        } else {
            1.0 - (x_m / x).powf(shape)
        }
    };
    let width = scale / bins as f64;
    let masses = (0..bins)
        .map(|k| (cdf((k + 1) as f64 * width) - cdf(k as f64 * width)).max(0.0))
        .collect();
    from_bin_masses(grid, masses)
}
