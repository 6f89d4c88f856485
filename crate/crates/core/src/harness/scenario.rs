//! Scenario files and their resolved, simulation-ready form.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bidmodel::{
    generate_benchmark_distribution, BidDistribution, DistKind, Impression, ImpressionKey, ImpressionType, SlotProfile,
};
use crate::constraints::{ArrivalProcess, ConstraintMode};
use crate::duals::LpMode;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidScenario {
        field: field.into(),
        reason: reason.into(),
    }
}

/// What the exchange maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Total welfare of the slot auction.
    Value,
    /// Revenue of GSP with reserve.
    Gsp,
    /// Revenue of posted prices.
    Posted,
    /// Fraction of impressions with at least one bid at the minimum price.
    Sales,
}

impl Objective {
    pub fn lp_mode(self) -> LpMode {
        match self {
            Objective::Posted => LpMode::Posted,
            _ => LpMode::Value,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Value => "value",
            Objective::Gsp => "gsp",
            Objective::Posted => "posted",
            Objective::Sales => "sales",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(Objective::Value),
            "gsp" => Ok(Objective::Gsp),
            "posted" => Ok(Objective::Posted),
            "sales" => Ok(Objective::Sales),
            other => Err(invalid("objective", format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Call-out rate per impression.
    pub rho: f64,
    /// Token bucket size.
    #[serde(default = "default_bucket")]
    pub bucket_size: f64,
}

fn default_bucket() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub mode: ConstraintMode,
    pub arrival: ArrivalProcess,
}

/// A bid distribution, either listed or generated from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSpec {
    Explicit {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
    Generated {
        kind: DistKind,
        #[serde(rename = "R")]
        scale: f64,
        bins: usize,
        seed: u64,
    },
}

impl DistSpec {
    pub fn resolve(&self) -> Result<BidDistribution> {
        match self {
            DistSpec::Explicit { values, probs } => BidDistribution::new(values.clone(), probs.clone()),
            DistSpec::Generated {
                kind,
                scale,
                bins,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                generate_benchmark_distribution(*kind, *scale, *bins, &mut rng)
            }
        }
    }
}

impl From<&BidDistribution> for DistSpec {
    fn from(d: &BidDistribution) -> Self {
        DistSpec::Explicit {
            values: d.values().to_vec(),
            probs: d.probs().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub id: usize,
    pub arrival_prob: f64,
    #[serde(default)]
    pub vertical: usize,
    #[serde(default)]
    pub min_price: f64,
    pub bids: Vec<DistSpec>,
}

/// Minimum prices drawn uniformly per arrival.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRange {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub generation: u64,
    pub perturbation: u64,
    pub run: u64,
}

/// On-disk problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub objective: Objective,
    pub slots: SlotProfile,
    pub networks: Vec<NetworkSpec>,
    pub constraint: ConstraintSpec,
    pub impression_types: Vec<TypeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_price: Option<PriceRange>,
    pub seeds: Seeds,
    /// Relative jitter applied to every probability mass at load time.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

fn default_perturbation() -> f64 {
    1e-9
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            invalid(field, e.into_inner().to_string())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let n = self.networks.len();
        if n == 0 {
            return Err(invalid("networks", "at least one network is required"));
        }
        for (i, net) in self.networks.iter().enumerate() {
            if !(0.0..=1.0).contains(&net.rho) {
                return Err(invalid(
                    format!("networks[{i}].rho"),
                    format!("{} outside [0, 1]", net.rho),
                ));
            }
            if !(net.bucket_size > 1.0) {
                return Err(invalid(format!("networks[{i}].bucket_size"), "must exceed 1"));
            }
        }
        if let ArrivalProcess::Poisson { mean_gap } = self.constraint.arrival {
            if !(mean_gap > 0.0 && mean_gap.is_finite()) {
                return Err(invalid("constraint.arrival.mean_gap", "must be positive"));
            }
        }
        if self.impression_types.is_empty() {
            return Err(invalid("impression_types", "at least one type is required"));
        }
        let mut total = 0.0;
        for (k, t) in self.impression_types.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.arrival_prob) {
                return Err(invalid(format!("impression_types[{k}].arrival_prob"), "outside [0, 1]"));
            }
            if !(t.min_price >= 0.0) {
                return Err(invalid(
                    format!("impression_types[{k}].min_price"),
                    "must be non-negative",
                ));
            }
            if t.bids.len() != n {
                return Err(invalid(
                    format!("impression_types[{k}].bids"),
                    format!("has {} distributions for {n} networks", t.bids.len()),
                ));
            }
            for (i, d) in t.bids.iter().enumerate() {
                let field = format!("impression_types[{k}].bids[{i}]");
                if let DistSpec::Generated { scale, bins, .. } = d {
                    if !(*scale > 0.0) || *bins == 0 {
                        return Err(invalid(field, "generator needs R > 0 and bins >= 1"));
                    }
                } else {
                    d.resolve().map_err(|e| invalid(field, e.to_string()))?;
                }
            }
            total += t.arrival_prob;
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(invalid(
                "impression_types",
                format!("arrival probabilities sum to {total}, not 1"),
            ));
        }
        if let Some(r) = self.min_price {
            if !(r.low >= 0.0 && r.high >= r.low && r.high.is_finite()) {
                return Err(invalid("min_price", "needs 0 <= low <= high"));
            }
        }
        if !(0.0..=1e-6).contains(&self.perturbation) {
            return Err(invalid("perturbation", "must lie in [0, 1e-6]"));
        }
        Ok(())
    }

    pub fn rho(&self) -> Vec<f64> {
        self.networks.iter().map(|n| n.rho).collect()
    }

    /// Resolves generators, applies the perturbation and precomputes the
    /// impression classes.
    pub fn resolve(&self) -> Result<Model> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seeds.perturbation);
        let mut types = Vec::with_capacity(self.impression_types.len());
        for t in &self.impression_types {
            let mut bids = Vec::with_capacity(t.bids.len());
            for d in &t.bids {
                let d = d.resolve()?;
                let d = if self.perturbation > 0.0 {
                    d.perturb_general_position(self.perturbation, &mut rng)?
                } else {
                    d
                };
                bids.push(d);
            }
            types.push(ImpressionType {
                id: t.id,
                arrival_prob: t.arrival_prob,
                vertical: t.vertical,
                min_price: t.min_price,
                bids,
            });
        }
        Model::new(self.clone(), types)
    }
}

/// Impressions of one type that share survival probabilities: every minimum
/// price in `(levels[k-1], levels[k]]` yields the same acceptance events.
#[derive(Debug, Clone)]
struct TypeClasses {
    levels: Vec<f64>,
    impressions: Vec<Impression>,
}

/// Resolved scenario.
#[derive(Debug, Clone)]
pub struct Model {
    pub scenario: Scenario,
    pub types: Vec<ImpressionType>,
    picker: WeightedIndex<f64>,
    classes: Vec<TypeClasses>,
}

/// Key used for minimum prices above every bid level.
const UNREACHABLE: f64 = f64::MAX;

impl Model {
    fn new(scenario: Scenario, types: Vec<ImpressionType>) -> Result<Self> {
        let picker = WeightedIndex::new(types.iter().map(|t| t.arrival_prob))
            .map_err(|e| invalid("impression_types", e.to_string()))?;
        let sales = scenario.objective == Objective::Sales;
        let classes = types
            .iter()
            .map(|t| {
                if sales && scenario.min_price.is_some() {
                    let mut levels: Vec<f64> = t.bids.iter().flat_map(|d| d.values().iter().copied()).collect();
                    levels.sort_by(f64::total_cmp);
                    levels.dedup();
                    levels.push(UNREACHABLE);
                    let impressions = levels.iter().map(|&mp| Impression::sales(t, mp)).collect();
                    TypeClasses { levels, impressions }
                } else if sales {
                    TypeClasses {
                        levels: vec![t.min_price],
                        impressions: vec![Impression::sales(t, t.min_price)],
                    }
                } else {
                    TypeClasses {
                        levels: vec![t.min_price],
                        impressions: vec![Impression::from_type(t)],
                    }
                }
            })
            .collect();
        Ok(Self {
            scenario,
            types,
            picker,
            classes,
        })
    }

    pub fn networks(&self) -> usize {
        self.scenario.networks.len()
    }

    pub fn slots(&self) -> &SlotProfile {
        &self.scenario.slots
    }

    pub fn objective(&self) -> Objective {
        self.scenario.objective
    }

    pub fn rho(&self) -> Vec<f64> {
        self.scenario.rho()
    }

    /// Draws one arriving impression.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Impression {
        let j = self.picker.sample(rng);
        let c = &self.classes[j];
        match self.scenario.min_price {
            Some(r) if c.levels.len() > 1 => {
                let mp = if r.high > r.low {
                    rng.random_range(r.low..=r.high)
                } else {
                    r.low
                };
                let k = c.levels.partition_point(|x| *x < mp);
                c.impressions[k.min(c.impressions.len() - 1)].clone()
            }
            _ => c.impressions[0].clone(),
        }
    }

    /// Every distinct impression with its exact arrival probability.
    pub fn exact_impressions(&self) -> Vec<(Impression, f64)> {
        let mut out = Vec::new();
        for (t, c) in self.types.iter().zip(&self.classes) {
            match self.scenario.min_price {
                Some(r) if c.levels.len() > 1 => {
                    let mut prev = f64::NEG_INFINITY;
                    for (k, &level) in c.levels.iter().enumerate() {
                        let share = if r.high > r.low {
                            let lo = prev.max(r.low);
                            let hi = level.min(r.high);
                            ((hi - lo) / (r.high - r.low)).max(0.0)
                        } else if prev < r.low && r.low <= level {
                            1.0
                        } else {
                            0.0
                        };
                        if share > 0.0 {
                            out.push((c.impressions[k].clone(), t.arrival_prob * share));
                        }
                        prev = level;
                    }
                }
                _ => out.push((c.impressions[0].clone(), t.arrival_prob)),
            }
        }
        out
    }

    /// Impressions of the exact distribution grouped by key, for LP input.
    pub fn exact_blocks(&self) -> Vec<(ImpressionKey, f64, Vec<BidDistribution>)> {
        let mut index: HashMap<ImpressionKey, usize> = HashMap::new();
        let mut out: Vec<(ImpressionKey, f64, Vec<BidDistribution>)> = Vec::new();
        for (imp, w) in self.exact_impressions() {
            match index.get(&imp.key) {
                Some(&k) => out[k].1 += w,
                None => {
                    index.insert(imp.key, out.len());
                    out.push((imp.key, w, imp.bids.to_vec()));
                }
            }
        }
        out
    }

    /// Noisy policy view: survival estimates shifted by `errors[i]` and
    /// clamped to `[0, 1]`; sales bids follow the estimates.
    pub fn with_estimates(&self, imp: &Impression, errors: &[f64]) -> Impression {
        let survival: Arc<[f64]> = imp
            .survival
            .iter()
            .zip(errors)
            .map(|(p, e)| (p + e).clamp(0.0, 1.0))
            .collect();
        let bids = if self.objective() == Objective::Sales {
            survival
                .iter()
                .map(|p| BidDistribution::bernoulli(*p).expect("clamped to [0, 1]"))
                .collect()
        } else {
            imp.bids.clone()
        };
        Impression {
            key: imp.key,
            vertical: imp.vertical,
            bids,
            base: imp.base.clone(),
            survival,
        }
    }
}

/// Knobs of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub kind: DistKind,
    pub networks: usize,
    pub verticals: usize,
    #[serde(rename = "R")]
    pub scale: f64,
    pub bins: usize,
    /// Token generation rates per unit time are uniform on this range.
    pub token_rate: (f64, f64),
    pub bucket_size: f64,
    /// Mean time between impressions.
    pub mean_gap: f64,
    /// Minimum prices as fractions of `R`.
    pub min_price: Option<(f64, f64)>,
    pub objective: Objective,
    pub slots: Vec<f64>,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            kind: DistKind::Gaussian,
            networks: 32,
            verticals: 10,
            scale: 1.0,
            bins: 100,
            token_rate: (5.0, 50.0),
            bucket_size: 5.0,
            mean_gap: 0.003,
            min_price: Some((0.2, 1.0)),
            objective: Objective::Sales,
            slots: vec![1.0],
        }
    }
}

/// Synthetic workload: per-(network, vertical) Gaussian or Pareto bids,
/// verticals equally likely, token-bucket limits under Poisson arrivals.
pub fn generate_benchmark(seed: u64, opts: &BenchmarkOptions) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let networks = (0..opts.networks)
        .map(|_| NetworkSpec {
            rho: rng.random_range(opts.token_rate.0..=opts.token_rate.1) * opts.mean_gap,
            bucket_size: opts.bucket_size,
        })
        .collect::<Vec<_>>();
    let q = 1.0 / opts.verticals as f64;
    let impression_types = (0..opts.verticals)
        .map(|j| TypeSpec {
            id: j,
            arrival_prob: q,
            vertical: j,
            min_price: 0.0,
            bids: (0..opts.networks)
                .map(|_| DistSpec::Generated {
                    kind: opts.kind,
                    scale: opts.scale,
                    bins: opts.bins,
                    seed: rng.random(),
                })
                .collect(),
        })
        .collect();
    let scenario = Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("benchmark-{}-{seed}", opts.kind),
        objective: opts.objective,
        slots: SlotProfile::new(opts.slots.clone())?,
        networks,
        constraint: ConstraintSpec {
            mode: ConstraintMode::TokenBucket,
            arrival: ArrivalProcess::Poisson {
                mean_gap: opts.mean_gap,
            },
        },
        impression_types,
        min_price: opts.min_price.map(|(lo, hi)| PriceRange {
            low: lo * opts.scale,
            high: hi * opts.scale,
        }),
        seeds: Seeds {
            generation: seed,
            perturbation: seed.wrapping_add(1),
            run: seed.wrapping_add(2),
        },
        perturbation: default_perturbation(),
    };
    scenario.validate()?;
    Ok(scenario)
}
