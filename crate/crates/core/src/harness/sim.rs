//! Two-phase simulation: exploration, dual learning, exploitation.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bidmodel::{Impression, ImpressionKey};
use crate::constraints::{
    convert_attempts, warmup_skip, ArrivalClock, ArrivalProcess, CapacityView, ConstraintMode, Limiter, TokenBucket,
    Unlimited,
};
use crate::duals::{build_exact_lp, build_sample_lp, solve_for_duals, DualSolution, LpMode, DEFAULT_SHRINK};
use crate::error::{param, Error, Result};
use crate::mechanisms::{run_gsp, run_posted, run_reserve_auction, run_value_auction, AuctionOutcome, Bid};
use crate::policies::{
    adv_cutoff_decide, baseline_decide, draw_cutoff, lp_gsp_decide, lp_post_decide, lp_val_decide, resolve_tau,
    th_lp_decide, CallOutDecision, Mechanism, PolicyKind, PolicyParams,
};

use super::scenario::{Model, Objective};

/// Independent random streams of one replication.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Explore = 0,
    Impressions = 1,
    Arrivals = 2,
    Bids = 3,
    Policy = 4,
    Noise = 5,
}

fn stream(seed: u64, replication: usize, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64 * 8 + s as u64);
    rng
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOptions {
    pub t_explore: usize,
    pub m_exploit: usize,
    pub replications: usize,
    pub shrink: f64,
    /// Standard deviation of the per-replication survival estimate error.
    pub noise_std: f64,
    /// Excludes impressions before the bucket start-up period from metrics.
    pub skip_warmup: bool,
    /// Overrides every network's bucket size.
    pub bucket_size: Option<f64>,
    pub compute_opt_ub: bool,
    /// Fixed duals used instead of learning.
    #[serde(skip)]
    pub duals: Option<DualSolution>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            t_explore: 500,
            m_exploit: 2000,
            replications: 10,
            shrink: DEFAULT_SHRINK,
            noise_std: 0.0,
            skip_warmup: false,
            bucket_size: None,
            compute_opt_ub: true,
            duals: None,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if self.m_exploit == 0 {
            return Err(param("m_exploit", "must be positive"));
        }
        if self.replications == 0 {
            return Err(param("replications", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.shrink) {
            return Err(param("shrink", "must lie in [0, 1)"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(param("noise_std", "must be non-negative"));
        }
        if let Some(s) = self.bucket_size {
            if !(s > 1.0) {
                return Err(param("bucket_size", "must exceed 1"));
            }
        }
        Ok(())
    }
}

/// One replication of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub policy: String,
    pub param: String,
    pub replication: usize,
    pub seed: u64,
    /// Objective per measured impression.
    pub value: f64,
    pub welfare: f64,
    pub revenue: f64,
    pub sales: f64,
    pub opt_ub: Option<f64>,
    /// Granted call-outs per measured impression.
    pub rates: Vec<f64>,
    pub max_psi: usize,
    pub bucket_violations: usize,
    pub measured: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    /// Half-width of the 95% normal confidence interval.
    pub half_width: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            sd,
            half_width: 1.96 * sd / n.sqrt(),
        }
    }
}

/// Aggregate over replications of one policy configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub objective: Objective,
    pub policy: String,
    pub param: String,
    pub seed: u64,
    pub replications: usize,
    pub value: Estimate,
    pub welfare: Estimate,
    pub revenue: Estimate,
    pub sales: Estimate,
    pub rates: Vec<f64>,
    pub rho: Vec<f64>,
    pub opt_ub: Option<f64>,
    pub max_psi: usize,
    pub bucket_violations: usize,
    pub rows: Vec<RepRow>,
}

/// Optimum of the LP on the exact impression distribution, per impression.
pub fn compute_opt_ub(model: &Model) -> Result<f64> {
    let lp = build_exact_lp(
        &model.exact_blocks(),
        &model.rho(),
        model.slots(),
        model.objective().lp_mode(),
    )?;
    Ok(solve_for_duals(&lp)?.objective)
}

/// Per-(type, network) survival errors of one replication.
fn draw_errors(model: &Model, std: f64, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<f64>>> {
    if std == 0.0 {
        return None;
    }
    let normal = Normal::new(0.0, std).expect("validated std");
    Some(
        model
            .types
            .iter()
            .map(|_| (0..model.networks()).map(|_| normal.sample(rng)).collect())
            .collect(),
    )
}

fn policy_view(model: &Model, imp: &Impression, errors: Option<&Vec<Vec<f64>>>) -> Impression {
    match errors {
        Some(e) => model.with_estimates(imp, &e[imp.key.type_id]),
        None => imp.clone(),
    }
}

/// Learns duals from `t` fresh exploration impressions.
pub fn learn_duals(
    model: &Model,
    mode: LpMode,
    t: usize,
    shrink: f64,
    rng: &mut impl Rng,
    errors: Option<&Vec<Vec<f64>>>,
) -> Result<DualSolution> {
    let samples: Vec<Impression> = (0..t).map(|_| policy_view(model, &model.draw(rng), errors)).collect();
    let lp = build_sample_lp(&samples, &model.rho(), model.slots(), mode, shrink)?;
    solve_for_duals(&lp)
}

/// Duals from the exploration stream of replication 0, as used by the first
/// replication of a noise-free simulation.
pub fn learn_scenario_duals(model: &Model, mode: LpMode, t: usize, shrink: f64) -> Result<DualSolution> {
    let mut rng = stream(model.scenario.seeds.run, 0, Stream::Explore);
    learn_duals(model, mode, t, shrink, &mut rng, None)
}

/// How attempted call-outs reach the networks.
#[derive(Debug, Clone)]
pub(crate) enum Gate {
    /// The policy sees the limiter's capacity.
    Limit(Limiter),
    /// No limits; attempts are counted.
    Open,
    /// The policy runs unlimited and its attempts pass through buckets.
    Convert(Vec<TokenBucket>),
}

pub(crate) struct Exploit<'a> {
    pub model: &'a Model,
    pub params: &'a PolicyParams,
    pub duals: Option<&'a DualSolution>,
    pub errors: Option<&'a Vec<Vec<f64>>>,
    pub seed: u64,
    pub replication: usize,
    pub m: usize,
    /// Impressions arriving before this time are not measured.
    pub warmup: f64,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ExploitResult {
    pub value: f64,
    pub welfare: f64,
    pub revenue: f64,
    pub sales: f64,
    pub granted: Vec<u64>,
    pub attempts: Vec<u64>,
    pub measured: usize,
    pub max_psi: usize,
    pub bucket_violations: usize,
}

fn execute(objective: Objective, mechanism: &Mechanism, bids: &[Bid], model: &Model) -> AuctionOutcome {
    let slots = model.slots();
    match mechanism {
        Mechanism::ValueAuction => match objective {
            Objective::Gsp | Objective::Posted => run_gsp(bids, slots),
            _ => run_value_auction(bids, slots),
        },
        Mechanism::GspRegular => run_gsp(bids, slots),
        Mechanism::SingleSlotReserve { reserve } => run_reserve_auction(bids, *reserve, slots),
        Mechanism::Posted { offers } => run_posted(offers, bids, slots),
    }
}

impl Exploit<'_> {
    fn decide(
        &self,
        view: &Impression,
        cap: &dyn CapacityView,
        taus: &mut HashMap<ImpressionKey, Vec<f64>>,
        cutoff: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<CallOutDecision> {
        let slots = self.model.slots();
        let kind = self.params.kind;
        let duals = || {
            self.duals
                .ok_or_else(|| param("duals", format!("policy {kind} needs learned duals")))
        };
        let tau = |taus: &mut HashMap<ImpressionKey, Vec<f64>>| -> Result<Vec<f64>> {
            if let Some(t) = taus.get(&view.key) {
                return Ok(t.clone());
            }
            let t = resolve_tau(duals()?, view, slots)?;
            taus.insert(view.key, t.clone());
            Ok(t)
        };
        match kind {
            PolicyKind::LpVal => lp_val_decide(view, duals()?, &tau(taus)?, slots, cap),
            PolicyKind::LpGsp => lp_gsp_decide(view, duals()?, &tau(taus)?, slots, cap),
            PolicyKind::LpPost => lp_post_decide(view, duals()?, &tau(taus)?, slots, cap),
            PolicyKind::ThLp => th_lp_decide(view, duals()?, slots, self.params.threshold, cap, rng),
            PolicyKind::AdvCutoff => Ok(adv_cutoff_decide(cutoff, view, cap)),
            _ => baseline_decide(self.params, view, cap, rng),
        }
    }

    pub(crate) fn run(&self, mut gate: Gate) -> Result<ExploitResult> {
        let model = self.model;
        let n = model.networks();
        let objective = model.objective();
        let mut imp_rng = stream(self.seed, self.replication, Stream::Impressions);
        let mut clock_rng = stream(self.seed, self.replication, Stream::Arrivals);
        let mut bid_rng = stream(self.seed, self.replication, Stream::Bids);
        let mut policy_rng = stream(self.seed, self.replication, Stream::Policy);
        let cutoff = if self.params.kind == PolicyKind::AdvCutoff {
            draw_cutoff(self.params.delta, &mut policy_rng)?
        } else {
            1.0
        };
        let mut clock = ArrivalClock::new(model.scenario.constraint.arrival)?;
        let mut taus = HashMap::new();
        let mut out = ExploitResult {
            granted: vec![0; n],
            attempts: vec![0; n],
            ..Default::default()
        };
        let open = Unlimited(n);
        let mut values = vec![0.0; n];
        for _ in 0..self.m {
            let imp = model.draw(&mut imp_rng);
            let now = clock.advance(&mut clock_rng);
            for (i, v) in values.iter_mut().enumerate() {
                let raw = imp.base[i].sample(&mut bid_rng);
                *v = if objective == Objective::Sales {
                    if raw >= imp.key.min_price {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    raw
                };
            }
            let view = policy_view(model, &imp, self.errors);
            let granted = match &mut gate {
                Gate::Limit(limiter) => {
                    limiter.begin_impression(now)?;
                    let d = self.decide(&view, limiter, &mut taus, cutoff, &mut policy_rng)?;
                    let mut g = Vec::with_capacity(d.callouts.len());
                    for &i in &d.callouts {
                        out.attempts[i] += 1;
                        if limiter.try_consume(i)? {
                            g.push(i);
                        }
                    }
                    if let Limiter::Buckets { buckets, .. } = limiter {
                        out.bucket_violations += buckets
                            .iter()
                            .filter(|b| b.level() < 0.0 || b.level() > b.capacity())
                            .count();
                    }
                    (d, g)
                }
                Gate::Open => {
                    let d = self.decide(&view, &open, &mut taus, cutoff, &mut policy_rng)?;
                    d.callouts.iter().for_each(|&i| out.attempts[i] += 1);
                    let g = d.callouts.clone();
                    (d, g)
                }
                Gate::Convert(buckets) => {
                    let d = self.decide(&view, &open, &mut taus, cutoff, &mut policy_rng)?;
                    d.callouts.iter().for_each(|&i| out.attempts[i] += 1);
                    let g = convert_attempts(&d.callouts, buckets, now)?;
                    out.bucket_violations += buckets
                        .iter()
                        .filter(|b| b.level() < 0.0 || b.level() > b.capacity())
                        .count();
                    (d, g)
                }
            };
            let (decision, called) = granted;
            if now < self.warmup {
                continue;
            }
            out.measured += 1;
            if let Some(p) = decision.psi {
                out.max_psi = out.max_psi.max(p);
            }
            for &i in &called {
                out.granted[i] += 1;
            }
            let Some(mechanism) = &decision.mechanism else {
                continue;
            };
            let bids: Vec<Bid> = called
                .iter()
                .map(|&i| Bid {
                    network: i,
                    value: values[i],
                })
                .collect();
            let o = execute(objective, mechanism, &bids, model);
            let sold = if o.sold { 1.0 } else { 0.0 };
            out.welfare += o.welfare;
            out.revenue += o.revenue;
            out.sales += sold;
            out.value += match objective {
                Objective::Value => o.welfare,
                Objective::Gsp | Objective::Posted => o.revenue,
                Objective::Sales => sold,
            };
        }
        Ok(out)
    }
}

fn limiter(model: &Model, bucket_size: Option<f64>) -> Result<Limiter> {
    let rho = model.rho();
    match model.scenario.constraint.mode {
        ConstraintMode::TimeAverage => Limiter::ledger(rho),
        ConstraintMode::TokenBucket => {
            let gap = model.scenario.constraint.arrival.mean_gap();
            let buckets = model
                .scenario
                .networks
                .iter()
                .map(|net| TokenBucket::new(bucket_size.unwrap_or(net.bucket_size), net.rho / gap))
                .collect::<Result<Vec<_>>>()?;
            Ok(Limiter::buckets(buckets))
        }
    }
}

fn rep_row(params: &PolicyParams, rep: usize, seed: u64, r: &ExploitResult, opt_ub: Option<f64>) -> RepRow {
    let m = r.measured.max(1) as f64;
    RepRow {
        policy: params.kind.to_string(),
        param: params.label(),
        replication: rep,
        seed,
        value: r.value / m,
        welfare: r.welfare / m,
        revenue: r.revenue / m,
        sales: r.sales / m,
        opt_ub,
        rates: r.granted.iter().map(|g| *g as f64 / m).collect(),
        max_psi: r.max_psi,
        bucket_violations: r.bucket_violations,
        measured: r.measured,
    }
}

/// Runs one replication of every configuration on common random numbers.
fn run_replication(
    model: &Model,
    configs: &[PolicyParams],
    opts: &SimOptions,
    rep: usize,
    opt_ub: Option<f64>,
) -> Result<Vec<RepRow>> {
    let seed = model.scenario.seeds.run;
    let mut noise_rng = stream(seed, rep, Stream::Noise);
    let errors = draw_errors(model, opts.noise_std, &mut noise_rng);
    let mut learned: HashMap<LpMode, DualSolution> = HashMap::new();
    let mut rows = Vec::with_capacity(configs.len());
    for params in configs {
        let duals = match params.kind.lp_mode() {
            None => None,
            Some(mode) => match &opts.duals {
                Some(d) => Some(d.clone()),
                None => {
                    if let Entry::Vacant(slot) = learned.entry(mode) {
                        let mut rng = stream(seed, rep, Stream::Explore);
                        slot.insert(learn_duals(
                            model,
                            mode,
                            opts.t_explore,
                            opts.shrink,
                            &mut rng,
                            errors.as_ref(),
                        )?);
                    }
                    learned.get(&mode).cloned()
                }
            },
        };
        let limiter = limiter(model, opts.bucket_size)?;
        let warmup = match &limiter {
            Limiter::Buckets { buckets, .. } if opts.skip_warmup => warmup_skip(buckets),
            _ => 0.0,
        };
        let exploit = Exploit {
            model,
            params,
            duals: duals.as_ref(),
            errors: errors.as_ref(),
            seed,
            replication: rep,
            m: opts.m_exploit,
            warmup,
        };
        let r = exploit.run(Gate::Limit(limiter))?;
        rows.push(rep_row(params, rep, seed, &r, opt_ub));
    }
    Ok(rows)
}

fn summarize(model: &Model, params: &PolicyParams, rows: Vec<RepRow>, opt_ub: Option<f64>) -> SimReport {
    let pick = |f: fn(&RepRow) -> f64| Estimate::of(&rows.iter().map(f).collect::<Vec<_>>());
    let n = model.networks();
    let reps = rows.len() as f64;
    let rates = (0..n)
        .map(|i| rows.iter().map(|r| r.rates[i]).sum::<f64>() / reps)
        .collect();
    SimReport {
        scenario: model.scenario.name.clone(),
        objective: model.objective(),
        policy: params.kind.to_string(),
        param: params.label(),
        seed: model.scenario.seeds.run,
        replications: rows.len(),
        value: pick(|r| r.value),
        welfare: pick(|r| r.welfare),
        revenue: pick(|r| r.revenue),
        sales: pick(|r| r.sales),
        rates,
        rho: model.rho(),
        opt_ub,
        max_psi: rows.iter().map(|r| r.max_psi).max().unwrap_or(0),
        bucket_violations: rows.iter().map(|r| r.bucket_violations).sum(),
        rows,
    }
}

/// Runs several policy configurations on the same replications; learned
/// duals are shared between configurations of one replication.
pub fn run_many(model: &Model, configs: &[PolicyParams], opts: &SimOptions) -> Result<Vec<SimReport>> {
    opts.validate()?;
    for c in configs {
        c.validate()?;
        if let (Some(d), Some(mode)) = (&opts.duals, c.kind.lp_mode()) {
            if d.mode != mode {
                return Err(Error::DualModeMismatch {
                    expected: mode.to_string(),
                    found: d.mode.to_string(),
                });
            }
            if d.lambda.len() != model.networks() || d.discounts.len() != model.slots().len() {
                return Err(param("duals", "shape does not match the scenario"));
            }
        }
    }
    let opt_ub = if opts.compute_opt_ub {
        Some(compute_opt_ub(model)?)
    } else {
        None
    };
    let per_rep: Vec<Vec<RepRow>> = (0..opts.replications)
        .into_par_iter()
        .map(|rep| run_replication(model, configs, opts, rep, opt_ub))
        .collect::<Result<_>>()?;
    Ok(configs
        .iter()
        .enumerate()
        .map(|(k, params)| {
            let rows = per_rep.iter().map(|r| r[k].clone()).collect();
            summarize(model, params, rows, opt_ub)
        })
        .collect())
}

/// Exploration, learning and exploitation for one policy.
pub fn run_two_phase(model: &Model, params: &PolicyParams, opts: &SimOptions) -> Result<SimReport> {
    Ok(run_many(model, std::slice::from_ref(params), opts)?.remove(0))
}

/// Parameter families of the benchmark comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Random, MaxRemBand, MaxProb, MaxExp over set sizes.
    Set,
    /// Th-Random, Th-MaxRemBand, Th-Prob, Th-LP over thresholds.
    Threshold,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set" => Ok(Family::Set),
            "threshold" => Ok(Family::Threshold),
            other => Err(param("family", format!("`{other}` is not one of set, threshold"))),
        }
    }
}

impl Family {
    pub fn kinds(self) -> &'static [PolicyKind] {
        match self {
            Family::Set => &[
                PolicyKind::Random,
                PolicyKind::MaxRemBand,
                PolicyKind::MaxProb,
                PolicyKind::MaxExp,
            ],
            Family::Threshold => &[
                PolicyKind::ThRandom,
                PolicyKind::ThMaxRemBand,
                PolicyKind::ThProb,
                PolicyKind::ThLp,
            ],
        }
    }

    /// Powers of two up to the network count, or 0.5 to 3.0 in steps of 0.5.
    pub fn default_grid(self, networks: usize) -> Vec<f64> {
        match self {
            Family::Set => std::iter::successors(Some(1usize), |k| Some(k * 2))
                .take_while(|k| *k <= networks.max(1))
                .map(|k| k as f64)
                .collect(),
            Family::Threshold => (1..=6).map(|k| k as f64 * 0.5).collect(),
        }
    }

    pub fn configs(self, grid: &[f64]) -> Vec<PolicyParams> {
        let mut out = Vec::new();
        for &kind in self.kinds() {
            for &g in grid {
                let p = PolicyParams::new(kind);
                out.push(match self {
                    Family::Set => p.with_k(g as usize),
                    Family::Threshold => p.with_threshold(g),
                });
            }
        }
        out
    }
}

/// Bucket sizes tried for the bucket-size sensitivity run.
pub const BUCKET_GRID: [f64; 4] = [2.0, 5.0, 15.0, 45.0];

/// One report per (policy, grid value).
pub fn sweep(model: &Model, family: Family, grid: &[f64], opts: &SimOptions) -> Result<Vec<SimReport>> {
    if grid.is_empty() {
        return Err(param("grid", "must not be empty"));
    }
    run_many(model, &family.configs(grid), opts)
}

/// Best report per policy by mean objective.
pub fn peaks(reports: &[SimReport]) -> Vec<&SimReport> {
    let mut best: Vec<&SimReport> = Vec::new();
    for r in reports {
        match best.iter_mut().find(|b| b.policy == r.policy) {
            Some(b) if r.value.mean > b.value.mean => *b = r,
            Some(_) => {}
            None => best.push(r),
        }
    }
    best
}

/// Matched-seed comparison of a policy with and without token buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub bucket_size: f64,
    /// Per-replication `V' / V` over impressions after the start-up period.
    pub ratios: Vec<f64>,
    pub ratio: Estimate,
    /// Per-network `R'_i / R_i` averaged over replications.
    pub network_ratios: Vec<f64>,
    pub bucket_violations: usize,
}

/// Runs `params` unconstrained to measure its attempt rates, then reruns it
/// on the same randomness with buckets of size `sigma` refilled at those
/// rates, dropping denied call-outs.
pub fn conversion_experiment(
    model: &Model,
    params: &PolicyParams,
    sigma: f64,
    arrival: ArrivalProcess,
    opts: &SimOptions,
) -> Result<ConversionReport> {
    opts.validate()?;
    if !(sigma > 1.0) {
        return Err(param("sigma", "must exceed 1"));
    }
    let mut model = model.clone();
    model.scenario.constraint.arrival = arrival;
    let gap = arrival.mean_gap();
    let seed = model.scenario.seeds.run;
    let results: Vec<(f64, Vec<f64>, usize)> = (0..opts.replications)
        .into_par_iter()
        .map(|rep| -> Result<(f64, Vec<f64>, usize)> {
            let duals = match (params.kind.lp_mode(), &opts.duals) {
                (None, _) => None,
                (Some(_), Some(d)) => Some(d.clone()),
                (Some(mode), None) => {
                    let mut rng = stream(seed, rep, Stream::Explore);
                    Some(learn_duals(&model, mode, opts.t_explore, opts.shrink, &mut rng, None)?)
                }
            };
            let mut run = Exploit {
                model: &model,
                params,
                duals: duals.as_ref(),
                errors: None,
                seed,
                replication: rep,
                m: opts.m_exploit,
                warmup: 0.0,
            };
            let free = run.run(Gate::Open)?;
            let buckets = free
                .attempts
                .iter()
                .map(|a| TokenBucket::new(sigma, *a as f64 / opts.m_exploit as f64 / gap))
                .collect::<Result<Vec<_>>>()?;
            run.warmup = warmup_skip(&buckets);
            let a = run.run(Gate::Open)?;
            let converted = run.run(Gate::Convert(buckets))?;
            let ratio = if a.value > 0.0 { converted.value / a.value } else { 1.0 };
            let net: Vec<f64> = (0..model.networks())
                .map(|i| {
                    if a.granted[i] > 0 {
                        converted.granted[i] as f64 / a.granted[i] as f64
                    } else {
                        1.0
                    }
                })
                .collect();
            Ok((ratio, net, converted.bucket_violations))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = results.iter().map(|r| r.0).collect();
    let n = model.networks();
    let network_ratios = (0..n)
        .map(|i| results.iter().map(|r| r.1[i]).sum::<f64>() / results.len() as f64)
        .collect();
    Ok(ConversionReport {
        bucket_size: sigma,
        ratio: Estimate::of(&ratios),
        ratios,
        network_ratios,
        bucket_violations: results.iter().map(|r| r.2).sum(),
    })
}

/// Formats `x` with nine significant digits in plain decimal notation.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x == 0.0 {
            "0".into()
        } else {
            format!("{x}")
        };
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// One line per (policy, parameter, replication).
pub fn write_rows_csv<W: Write>(reports: &[SimReport], out: &mut W) -> Result<()> {
    let n = reports.first().map_or(0, |r| r.rho.len());
    let mut header = String::from("policy,param,replication,seed,value,welfare,revenue,sales,opt_ub");
    for i in 0..n {
        header.push_str(&format!(",rate_{i}"));
    }
    writeln!(out, "{header}")?;
    for r in reports {
        for row in &r.rows {
            let mut line = format!(
                "{},{},{},{},{},{},{},{},{}",
                row.policy,
                row.param,
                row.replication,
                row.seed,
                fmt_sig(row.value),
                fmt_sig(row.welfare),
                fmt_sig(row.revenue),
                fmt_sig(row.sales),
                row.opt_ub.map(fmt_sig).unwrap_or_default()
            );
            for x in &row.rates {
                line.push(',');
                line.push_str(&fmt_sig(*x));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Means and confidence half-widths per (policy, parameter).
pub fn write_summary_csv<W: Write>(reports: &[SimReport], out: &mut W) -> Result<()> {
    writeln!(
        out,
        "policy,param,replications,value_mean,value_sd,value_ci,welfare_mean,revenue_mean,sales_mean,sales_sd,sales_ci,opt_ub,max_rate_excess,max_psi"
    )?;
    for r in reports {
        let excess = r
            .rates
            .iter()
            .zip(&r.rho)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.param,
            r.replications,
            fmt_sig(r.value.mean),
            fmt_sig(r.value.sd),
            fmt_sig(r.value.half_width),
            fmt_sig(r.welfare.mean),
            fmt_sig(r.revenue.mean),
            fmt_sig(r.sales.mean),
            fmt_sig(r.sales.sd),
            fmt_sig(r.sales.half_width),
            r.opt_ub.map(fmt_sig).unwrap_or_default(),
            fmt_sig(excess),
            r.max_psi
        )?;
    }
    Ok(())
}
