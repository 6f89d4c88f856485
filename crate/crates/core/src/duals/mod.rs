//! Sampled call-out LPs and their Lagrangian duals.
//!
//! The LP over exploration samples couples impression types only through the
//! per-network rate rows. Each `(network, type)` block is the set of
//! "acceptance policies" that map every bid level to a slot (or to no slot),
//! scaled by the call probability. The master LP is solved over these
//! policies by column generation, with the envelope rule as the pricing
//! oracle. Because pricing ranges over every policy, the final row duals
//! (`lambda` on the rate rows, `tau` on the slot rows) are optimal duals of
//! the full LP.

pub mod envelope;
pub(crate) mod simplex;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bidmodel::{BidDistribution, Impression, ImpressionKey, SlotProfile};
use crate::error::{param, Error, Result};
pub use envelope::{best_slot, envelope_gain, v1_threshold, SlotFunction};
use simplex::{Column, Simplex};

/// Default fraction by which learned rate rows are shrunk.
pub const DEFAULT_SHRINK: f64 = 0.05;

const PRICING_TOL: f64 = 1e-10;
const MAX_ROUNDS: usize = 10_000;
const MAX_PIVOTS: usize = 2_000_000;
/// Right-hand-side lift (in scaled units) on the rate and slot rows. The
/// optimal basis of the lifted LP stays optimal for the original one and
/// selects the dual with the smallest `sum lambda + sum tau`.
const RHS_LIFT: f64 = 1e-9;

/// Which LP the duals come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LpMode {
    /// Total value LP (also used for GSP-reserve and sales).
    #[serde(rename = "value-lp")]
    Value,
    /// Posted price LP.
    #[serde(rename = "posted-lp")]
    Posted,
}

impl fmt::Display for LpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpMode::Value => "value-lp",
            LpMode::Posted => "posted-lp",
        })
    }
}

impl FromStr for LpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value-lp" | "value" => Ok(LpMode::Value),
            "posted-lp" | "posted" => Ok(LpMode::Posted),
            other => Err(param("mode", format!("unknown LP mode `{other}`"))),
        }
    }
}

/// One impression type of the LP with its (empirical) arrival weight.
#[derive(Debug, Clone)]
pub struct LpBlock {
    pub key: ImpressionKey,
    pub weight: f64,
    pub bids: Vec<BidDistribution>,
}

/// Sampled LP instance, ready to solve.
#[derive(Debug, Clone)]
pub struct SampleLp {
    pub mode: LpMode,
    pub blocks: Vec<LpBlock>,
    /// Right-hand sides of the rate rows, already shrunk.
    pub rates: Vec<f64>,
    pub slots: SlotProfile,
    pub shrink: f64,
}

/// Groups samples by key into blocks with weights `count / t` and shrinks the
/// rate rows by `1 - shrink`.
pub fn build_sample_lp(
    samples: &[Impression],
    rho: &[f64],
    slots: &SlotProfile,
    mode: LpMode,
    shrink: f64,
) -> Result<SampleLp> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(r) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(param("rho", format!("rate {r} outside [0, 1]")));
    }
    if !(0.0..1.0).contains(&shrink) {
        return Err(param("shrink", "must lie in [0, 1)"));
    }
    let n = rho.len();
    let mut index: HashMap<ImpressionKey, usize> = HashMap::new();
    let mut blocks: Vec<LpBlock> = Vec::new();
    let unit = 1.0 / samples.len() as f64;
    for s in samples {
        if s.networks() != n {
            return Err(param(
                "samples",
                format!("impression has {} networks, expected {n}", s.networks()),
            ));
        }
        match index.get(&s.key) {
            Some(&b) => blocks[b].weight += unit,
            None => {
                index.insert(s.key, blocks.len());
                blocks.push(LpBlock {
                    key: s.key,
                    weight: unit,
                    bids: s.bids.to_vec(),
                });
            }
        }
    }
    Ok(SampleLp {
        mode,
        blocks,
        rates: rho.iter().map(|r| r * (1.0 - shrink)).collect(),
        slots: slots.clone(),
        shrink,
    })
}

/// Exact LP over a known type distribution (no shrinking), used for the
/// OPT-UB bound.
pub fn build_exact_lp(
    types: &[(ImpressionKey, f64, Vec<BidDistribution>)],
    rho: &[f64],
    slots: &SlotProfile,
    mode: LpMode,
) -> Result<SampleLp> {
    if types.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(SampleLp {
        mode,
        blocks: types
            .iter()
            .filter(|t| t.1 > 0.0)
            .map(|(key, w, bids)| LpBlock {
                key: *key,
                weight: *w,
                bids: bids.clone(),
            })
            .collect(),
        rates: rho.to_vec(),
        slots: slots.clone(),
        shrink: 0.0,
    })
}

/// Solver diagnostics carried with learned duals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverResiduals {
    pub iterations: usize,
    pub columns: usize,
    pub rounds: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `|primal - dual| / max(|primal|, |dual|)`.
    pub duality_gap: f64,
    pub primal_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEntry {
    pub key: ImpressionKey,
    pub tau: Vec<f64>,
}

/// Learned Lagrangians: `lambda[i]` per network, `tau[j][l]` per impression
/// type and slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "DualFile", into = "DualFile")]
pub struct DualSolution {
    pub mode: LpMode,
    pub lambda: Vec<f64>,
    pub tau: Vec<TauEntry>,
    pub discounts: Vec<f64>,
    /// Optimal value of the LP the duals came from.
    pub objective: f64,
    pub shrink: f64,
    pub residuals: SolverResiduals,
    lookup: HashMap<ImpressionKey, usize>,
}

#[derive(Serialize, Deserialize)]
struct DualFile {
    mode: LpMode,
    lambda: Vec<f64>,
    tau: Vec<TauEntry>,
    discounts: Vec<f64>,
    objective: f64,
    shrink: f64,
    residuals: SolverResiduals,
}

impl From<DualFile> for DualSolution {
    fn from(f: DualFile) -> Self {
        DualSolution::new(f.mode, f.lambda, f.tau, f.discounts, f.objective, f.shrink, f.residuals)
    }
}

impl From<DualSolution> for DualFile {
    fn from(d: DualSolution) -> Self {
        DualFile {
            mode: d.mode,
            lambda: d.lambda,
            tau: d.tau,
            discounts: d.discounts,
            objective: d.objective,
            shrink: d.shrink,
            residuals: d.residuals,
        }
    }
}

impl DualSolution {
    pub fn new(
        mode: LpMode,
        lambda: Vec<f64>,
        tau: Vec<TauEntry>,
        discounts: Vec<f64>,
        objective: f64,
        shrink: f64,
        residuals: SolverResiduals,
    ) -> Self {
        let lookup = tau.iter().enumerate().map(|(k, t)| (t.key, k)).collect();
        Self {
            mode,
            lambda,
            tau,
            discounts,
            objective,
            shrink,
            residuals,
            lookup,
        }
    }

    /// `tau` for a type seen during learning.
    pub fn tau_for(&self, key: &ImpressionKey) -> Option<&[f64]> {
        self.lookup.get(key).map(|&k| self.tau[k].tau.as_slice())
    }

    /// Slot map `l(v)` for a learned type.
    pub fn slot_function(&self, key: &ImpressionKey, slots: &SlotProfile) -> Option<SlotFunction> {
        self.tau_for(key).map(|t| SlotFunction::new(t, slots))
    }

    /// Checks non-negativity and that `tau_l / rho_l` is non-increasing over
    /// slots with positive discount, with equal discounts carrying equal `tau`.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        if let Some((i, l)) = self.lambda.iter().enumerate().find(|(_, l)| **l < -tol) {
            return Err(format!("lambda-nonnegative: lambda[{i}] = {l}"));
        }
        for entry in &self.tau {
            if entry.tau.len() != self.discounts.len() {
                return Err(format!(
                    "tau-shape: type {} has {} slots, expected {}",
                    entry.key.type_id,
                    entry.tau.len(),
                    self.discounts.len()
                ));
            }
            if let Some(t) = entry.tau.iter().find(|t| **t < -tol) {
                return Err(format!("tau-nonnegative: type {} has tau {t}", entry.key.type_id));
            }
            for l in 1..entry.tau.len() {
                let (r0, r1) = (self.discounts[l - 1], self.discounts[l]);
                if r1 <= 0.0 {
                    break;
                }
                let (t0, t1) = (entry.tau[l - 1], entry.tau[l]);
                if t0 / r0 < t1 / r1 - tol {
                    return Err(format!(
                        "tau-monotonicity: type {} slot {} has tau/rho {} < {} at slot {}",
                        entry.key.type_id,
                        l,
                        t0 / r0,
                        t1 / r1,
                        l + 1
                    ));
                }
                if r0 == r1 && (t0 - t1).abs() > tol {
                    return Err(format!(
                        "tau-equal-discounts: type {} slots {} and {} share a discount but tau differs",
                        entry.key.type_id,
                        l,
                        l + 1
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Primal side of a solved LP, reported per block and network.
#[derive(Debug, Clone)]
pub struct LpSolveReport {
    pub duals: DualSolution,
    /// `call_probability[b][i]`: total call probability of network `i` on block `b`.
    pub call_probability: Vec<Vec<f64>>,
}

/// A master LP column: network, block and acceptance policy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Policy {
    /// Slot (1-based, 0 = none) for every bid level of the block's distribution.
    Accept(Vec<u8>),
    /// Posted price at grid level `level`, intended slot `slot`.
    Price { level: usize, slot: usize },
}

/// Row indices: rate rows (when present), slot rows per block, then the
/// convexity rows of blocks that have more than one useful policy.
struct Layout {
    global_rows: usize,
    networks: usize,
    m: usize,
    blocks: usize,
    conv_row: Vec<Option<usize>>,
}

impl Layout {
    fn slot(&self, b: usize, l: usize) -> usize {
        self.global_rows + b * self.m + (l - 1)
    }

    fn conv(&self, b: usize, i: usize) -> Option<usize> {
        self.conv_row[b * self.networks + i]
    }
}

/// Reduced per-unit value of the best policy of `(i, block)` for given `tau`,
/// together with the policy.
fn price_block(mode: LpMode, dist: &BidDistribution, tau: &[f64], slots: &SlotProfile) -> Option<(f64, Policy)> {
    match mode {
        LpMode::Value => {
            let mut gain = 0.0;
            let mut choice = Vec::with_capacity(dist.len());
            for (v, p) in dist.iter() {
                let l = best_slot(v, tau, slots);
                if l <= slots.len() && p > 0.0 {
                    gain += p * (slots.discount(l) * v - tau[l - 1]);
                    choice.push(l as u8);
                } else {
                    choice.push(0);
                }
            }
            choice.iter().any(|c| *c > 0).then_some((gain, Policy::Accept(choice)))
        }
        LpMode::Posted => {
            let surv = dist.survival_table();
            let mut best: Option<(f64, Policy)> = None;
            for (k, v) in dist.values().iter().enumerate() {
                let l = best_slot(*v, tau, slots);
                if l > slots.len() || surv[k] <= 0.0 {
                    continue;
                }
                let g = surv[k] * (slots.discount(l) * v - tau[l - 1]);
                if best.as_ref().is_none_or(|(bg, _)| g > *bg) {
                    best = Some((g, Policy::Price { level: k, slot: l }));
                }
            }
            best
        }
    }
}

/// Objective value (per unit weight) and slot masses of a policy.
fn policy_profile(policy: &Policy, dist: &BidDistribution, slots: &SlotProfile) -> (f64, Vec<f64>) {
    let mut mass = vec![0.0; slots.len()];
    let mut value = 0.0;
    match policy {
        Policy::Accept(choice) => {
            for ((v, p), &l) in dist.iter().zip(choice) {
                if l > 0 {
                    let l = l as usize;
                    value += p * v * slots.discount(l);
                    mass[l - 1] += p;
                }
            }
        }
        Policy::Price { level, slot } => {
            let s = dist.survival(dist.values()[*level]);
            value = s * dist.values()[*level] * slots.discount(*slot);
            mass[slot - 1] = s;
        }
    }
    (value, mass)
}

fn needs_convexity_row(mode: LpMode, dist: &BidDistribution, slots: &SlotProfile) -> bool {
    let positive = dist.iter().filter(|(v, p)| *v > 0.0 && *p > 0.0).count();
    match mode {
        LpMode::Value => positive > 1 || (positive == 1 && slots.len() > 1),
        LpMode::Posted => positive * slots.len() > 1,
    }
}

struct Master<'a> {
    lp: &'a SampleLp,
    layout: Layout,
    scale: f64,
    /// Cost per network subtracted from every column (fixed-lambda local solves).
    lambda_cost: Option<&'a [f64]>,
    simplex: Simplex,
    columns: Vec<(usize, usize, Policy)>,
    seen: HashSet<(usize, usize, Policy)>,
}

impl<'a> Master<'a> {
    fn new(lp: &'a SampleLp, lambda_cost: Option<&'a [f64]>) -> Self {
        let n = lp.rates.len();
        let m = lp.slots.len();
        let nb = lp.blocks.len();
        let with_global = lambda_cost.is_none();
        let global_rows = if with_global { n } else { 0 };
        let max_w = lp.blocks.iter().map(|b| b.weight).fold(0.0, f64::max);
        let scale = if max_w > 0.0 { 1.0 / max_w } else { 1.0 };
        let mut rows = global_rows + nb * m;
        let mut conv_row = vec![None; nb * n];
        for (b, block) in lp.blocks.iter().enumerate() {
            for (i, dist) in block.bids.iter().enumerate() {
                if needs_convexity_row(lp.mode, dist, &lp.slots) {
                    conv_row[b * n + i] = Some(rows);
                    rows += 1;
                }
            }
        }
        let layout = Layout {
            global_rows,
            networks: n,
            m,
            blocks: nb,
            conv_row,
        };
        let mut rhs = vec![0.0; rows];
        if with_global {
            for (r, rate) in rhs.iter_mut().zip(&lp.rates) {
                *r = rate * scale + RHS_LIFT;
            }
        }
        for (b, block) in lp.blocks.iter().enumerate() {
            let w = block.weight * scale;
            for l in 1..=m {
                rhs[layout.slot(b, l)] = w + RHS_LIFT;
            }
            for i in 0..n {
                if let Some(r) = layout.conv(b, i) {
                    rhs[r] = w;
                }
            }
        }
        Self {
            lp,
            layout,
            scale,
            lambda_cost,
            simplex: Simplex::new(rhs, MAX_PIVOTS),
            columns: Vec::new(),
            seen: HashSet::new(),
        }
    }

    fn networks(&self) -> usize {
        self.lp.rates.len()
    }

    fn add(&mut self, b: usize, i: usize, policy: Policy) -> bool {
        let key = (b, i, policy);
        if self.seen.contains(&key) {
            return false;
        }
        let (b, i, policy) = key.clone();
        self.seen.insert(key);
        let block = &self.lp.blocks[b];
        let dist = &block.bids[i];
        let (value, mass) = policy_profile(&policy, dist, &self.lp.slots);
        let w = block.weight * self.scale;
        let mut entries = Vec::with_capacity(2 + mass.len());
        let mut cost = w * value;
        match self.lambda_cost {
            None => entries.push((i, w)),
            Some(lam) => cost -= w * lam[i],
        }
        for (l, ms) in mass.iter().enumerate() {
            if *ms > 0.0 {
                entries.push((self.layout.slot(b, l + 1), w * ms));
            }
        }
        if let Some(r) = self.layout.conv(b, i) {
            entries.push((r, w));
        }
        self.simplex.add_column(Column {
            entries,
            cost,
            upper: 1.0,
        });
        self.columns.push((b, i, policy));
        true
    }

    fn tau_of(&self, y: &[f64], b: usize) -> Vec<f64> {
        (1..=self.layout.m)
            .map(|l| y[self.layout.slot(b, l)].max(0.0))
            .collect()
    }

    fn lambda_of(&self, y: &[f64]) -> Vec<f64> {
        match self.lambda_cost {
            None => y[..self.networks()].iter().map(|v| v.max(0.0)).collect(),
            Some(lam) => lam.to_vec(),
        }
    }

    /// Adds every improving column; returns how many were added.
    fn price(&mut self, y: &[f64]) -> usize {
        let lambda = self.lambda_of(y);
        let mut found = Vec::new();
        for b in 0..self.layout.blocks {
            let tau = self.tau_of(y, b);
            for (i, bids) in self.lp.blocks[b].bids.iter().enumerate() {
                let Some((gain, policy)) = price_block(self.lp.mode, bids, &tau, &self.lp.slots) else {
                    continue;
                };
                let zeta = self.layout.conv(b, i).map_or(0.0, |r| y[r]);
                let reduced = gain - lambda[i] - zeta;
                if reduced > PRICING_TOL {
                    found.push((b, i, policy));
                }
            }
        }
        found
            .into_iter()
            .filter(|(b, i, p)| self.add(*b, *i, p.clone()))
            .count()
    }

    fn seed_columns(&mut self) {
        let zero = vec![0.0; self.layout.m];
        for b in 0..self.layout.blocks {
            for i in 0..self.networks() {
                if let Some((_, policy)) = price_block(self.lp.mode, &self.lp.blocks[b].bids[i], &zero, &self.lp.slots)
                {
                    self.add(b, i, policy);
                }
            }
        }
    }
}

/// Dual objective of the full LP at `(lambda, tau)`:
/// `sum_i lambda_i rho_i + sum_j q_j [sum_l tau_jl + sum_i (g_ij(tau_j) - lambda_i)^+]`.
pub fn dual_objective(lp: &SampleLp, lambda: &[f64], tau: &[Vec<f64>]) -> f64 {
    let mut total: f64 = lambda.iter().zip(&lp.rates).map(|(l, r)| l * r).sum();
    for (block, t) in lp.blocks.iter().zip(tau) {
        let mut inner: f64 = t.iter().sum();
        for (i, dist) in block.bids.iter().enumerate() {
            let gain = price_block(lp.mode, dist, t, &lp.slots).map_or(0.0, |(g, _)| g);
            inner += (gain - lambda[i]).max(0.0);
        }
        total += block.weight * inner;
    }
    total
}

/// Within groups of equal discount, replaces `tau` by the group mean. Any
/// optimal dual stays optimal, and equal discounts then carry equal `tau`.
fn equalize_ties(tau: &mut [f64], slots: &SlotProfile) {
    let d = slots.discounts();
    let mut start = 0;
    while start < d.len() {
        let mut end = start + 1;
        while end < d.len() && d[end] == d[start] {
            end += 1;
        }
        if end - start > 1 {
            let mean = tau[start..end].iter().sum::<f64>() / (end - start) as f64;
            tau[start..end].iter_mut().for_each(|t| *t = mean);
        }
        start = end;
    }
}

fn run_master(master: &mut Master<'_>) -> Result<(simplex::LpSolution, usize)> {
    master.seed_columns();
    let mut rounds = 0;
    loop {
        let sol = master.simplex.solve()?;
        rounds += 1;
        if master.price(&sol.duals) == 0 {
            log::debug!(
                "master solved: {rounds} rounds, {} columns, objective {:.9} (dual {:.9})",
                master.columns.len(),
                sol.objective,
                sol.dual_objective
            );
            return Ok((sol, rounds));
        }
        if rounds >= MAX_ROUNDS {
            return Err(Error::SolverNonConvergence {
                iterations: sol.iterations,
                primal_residual: sol.primal_residual,
                dual_residual: f64::NAN,
            });
        }
    }
}

/// Solves the LP to optimality and extracts `lambda`, `tau` and the primal
/// call probabilities.
pub fn solve_sample_lp(lp: &SampleLp) -> Result<LpSolveReport> {
    let n = lp.rates.len();
    let mut master = Master::new(lp, None);
    let (sol, rounds) = run_master(&mut master)?;
    let lambda = master.lambda_of(&sol.duals);
    let mut taus: Vec<Vec<f64>> = (0..lp.blocks.len()).map(|b| master.tau_of(&sol.duals, b)).collect();
    for t in &mut taus {
        equalize_ties(t, &lp.slots);
    }
    let lifted_rows = master.layout.global_rows + master.layout.blocks * master.layout.m;
    let lift: f64 = sol.duals[..lifted_rows].iter().sum::<f64>() * RHS_LIFT;
    let primal_objective = (sol.objective - lift) / master.scale;
    let dual = dual_objective(lp, &lambda, &taus);
    let denom = primal_objective.abs().max(dual.abs());
    let gap = if (primal_objective - dual).abs() <= 1e-12 {
        0.0
    } else {
        (primal_objective - dual).abs() / denom
    };

    let mut call_probability = vec![vec![0.0; n]; lp.blocks.len()];
    for ((b, i, _), w) in master.columns.iter().zip(&sol.primal) {
        call_probability[*b][*i] += w;
    }
    let residuals = SolverResiduals {
        iterations: sol.iterations,
        columns: master.columns.len(),
        rounds,
        primal_objective,
        dual_objective: dual,
        duality_gap: gap,
        primal_residual: sol.primal_residual,
    };
    let tau = lp
        .blocks
        .iter()
        .zip(taus)
        .map(|(b, tau)| TauEntry { key: b.key, tau })
        .collect();
    Ok(LpSolveReport {
        duals: DualSolution::new(
            lp.mode,
            lambda,
            tau,
            lp.slots.discounts().to_vec(),
            primal_objective,
            lp.shrink,
            residuals,
        ),
        call_probability,
    })
}

/// Solves the sampled LP and returns its duals.
pub fn solve_for_duals(lp: &SampleLp) -> Result<DualSolution> {
    solve_sample_lp(lp).map(|r| r.duals)
}

/// Slot duals of the single-impression LP with fixed rate prices `lambda`,
/// for impression types that were not sampled during learning.
pub fn local_tau(mode: LpMode, bids: &[BidDistribution], lambda: &[f64], slots: &SlotProfile) -> Result<Vec<f64>> {
    let lp = SampleLp {
        mode,
        blocks: vec![LpBlock {
            key: ImpressionKey {
                type_id: usize::MAX,
                min_price: 0.0,
            },
            weight: 1.0,
            bids: bids.to_vec(),
        }],
        rates: vec![0.0; bids.len()],
        slots: slots.clone(),
        shrink: 0.0,
    };
    let mut master = Master::new(&lp, Some(lambda));
    let (sol, _) = run_master(&mut master)?;
    let mut tau = master.tau_of(&sol.duals, 0);
    equalize_ties(&mut tau, slots);
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn imp(type_id: usize, bids: Vec<BidDistribution>) -> Impression {
        let bids: Arc<[BidDistribution]> = bids.into();
        let key = ImpressionKey {
            type_id,
            min_price: 0.0,
        };
        Impression::new(key, 0, bids.clone(), bids)
    }

    fn point(v: f64) -> BidDistribution {
        BidDistribution::point_mass(v).unwrap()
    }

    #[test]
    fn saturated_instance() {
        let s = vec![imp(0, vec![point(1.0)])];
        let lp = build_sample_lp(&s, &[1.0], &SlotProfile::single(), LpMode::Value, 0.0).unwrap();
        let d = solve_for_duals(&lp).unwrap();
        assert_abs_diff_eq!(d.objective, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.lambda[0], 0.0, epsilon = 1e-9);
        assert!(d.residuals.duality_gap <= 1e-6);
    }

    #[test]
    fn zero_rates_give_zero_objective_and_minimal_lambda() {
        let s = vec![imp(0, vec![point(2.0), point(1.0)])];
        let lp = build_sample_lp(&s, &[0.0, 0.0], &SlotProfile::single(), LpMode::Value, 0.0).unwrap();
        let d = solve_for_duals(&lp).unwrap();
        assert_abs_diff_eq!(d.objective, 0.0, epsilon = 1e-12);
        // lambda must price out every column; the minimal such value is the
        // reduced gain of the network at the learned tau
        let tau = d.tau_for(&s[0].key).unwrap();
        for (i, dist) in s[0].bids.iter().enumerate() {
            let gain = price_block(LpMode::Value, dist, tau, &lp.slots).map_or(0.0, |g| g.0);
            assert!(d.lambda[i] >= gain - 1e-9);
            assert_abs_diff_eq!(d.lambda[i], gain, epsilon = 1e-9);
        }
        assert!(d.residuals.duality_gap <= 1e-6);
    }

    #[test]
    fn two_network_instance() {
        let s = vec![imp(0, vec![point(2.0), point(1.0)])];
        let lp = build_sample_lp(&s, &[0.5, 1.0], &SlotProfile::single(), LpMode::Value, 0.0).unwrap();
        let r = solve_sample_lp(&lp).unwrap();
        assert_abs_diff_eq!(r.duals.objective, 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(r.duals.lambda[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.duals.lambda[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.call_probability[0][0], 0.5, epsilon = 1e-9);
        assert!(r.duals.residuals.duality_gap <= 1e-6);
    }

    #[test]
    fn shrink_scales_rates() {
        let s = vec![imp(0, vec![point(2.0), point(1.0)])];
        let lp = build_sample_lp(&s, &[0.5, 1.0], &SlotProfile::single(), LpMode::Value, 0.05).unwrap();
        assert_abs_diff_eq!(lp.rates[0], 0.475, epsilon = 1e-12);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_sample_lp(&[], &[0.5], &SlotProfile::single(), LpMode::Value, 0.0),
            Err(Error::EmptySample)
        ));
        let s = vec![imp(0, vec![point(1.0)])];
        assert!(build_sample_lp(&s, &[1.5], &SlotProfile::single(), LpMode::Value, 0.0).is_err());
        assert!(build_sample_lp(&s, &[-0.1], &SlotProfile::single(), LpMode::Value, 0.0).is_err());
    }

    #[test]
    fn repeated_samples_aggregate_into_one_block() {
        let s = vec![
            imp(0, vec![point(1.0)]),
            imp(1, vec![point(2.0)]),
            imp(0, vec![point(1.0)]),
            imp(0, vec![point(1.0)]),
        ];
        let lp = build_sample_lp(&s, &[0.5], &SlotProfile::single(), LpMode::Value, 0.0).unwrap();
        assert_eq!(lp.blocks.len(), 2);
        assert_abs_diff_eq!(lp.blocks[0].weight, 0.75, epsilon = 1e-12);
        let d = solve_for_duals(&lp).unwrap();
        // spend the half rate on type 1 (value 2, weight 0.25) then type 0
        assert_abs_diff_eq!(d.objective, 0.25 * 2.0 + 0.25 * 1.0, epsilon = 1e-9);
    }

    #[test]
    fn local_tau_matches_learned_tau_for_seen_type() {
        let bids = vec![
            BidDistribution::from_pairs(&[(0.5, 0.5), (1.0, 0.5)]).unwrap(),
            BidDistribution::from_pairs(&[(0.2, 0.3), (0.8, 0.7)]).unwrap(),
            BidDistribution::from_pairs(&[(0.4, 0.6), (0.9, 0.4)]).unwrap(),
        ];
        let slots = SlotProfile::new(vec![1.0, 0.6]).unwrap();
        let s = vec![imp(0, bids.clone())];
        let lp = build_sample_lp(&s, &[0.3, 0.6, 0.9], &slots, LpMode::Value, 0.0).unwrap();
        let d = solve_for_duals(&lp).unwrap();
        let local = local_tau(LpMode::Value, &bids, &d.lambda, &slots).unwrap();
        // both tau vectors must be optimal for the single-type LP at fixed lambda
        let single = |tau: &Vec<f64>| dual_objective(&lp, &d.lambda, std::slice::from_ref(tau));
        assert_abs_diff_eq!(single(&local), single(&d.tau[0].tau), epsilon = 1e-9);
    }

    #[test]
    fn dual_file_round_trip() {
        let s = vec![imp(0, vec![point(2.0), point(1.0)])];
        let lp = build_sample_lp(&s, &[0.5, 1.0], &SlotProfile::single(), LpMode::Value, 0.0).unwrap();
        let d = solve_for_duals(&lp).unwrap();
        let text = serde_json::to_string(&d).unwrap();
        let back: DualSolution = serde_json::from_str(&text).unwrap();
        assert_eq!(back.lambda, d.lambda);
        assert_eq!(back.tau_for(&s[0].key), d.tau_for(&s[0].key));
        assert!(text.contains("\"value-lp\""));
    }

    #[test]
    fn invariant_check_names_violation() {
        let d = DualSolution::new(
            LpMode::Value,
            vec![0.0],
            vec![TauEntry {
                key: ImpressionKey {
                    type_id: 3,
                    min_price: 0.0,
                },
                tau: vec![0.1, 0.4],
            }],
            vec![1.0, 0.5],
            0.0,
            0.0,
            SolverResiduals::default(),
        );
        let err = d.check_invariants(1e-9).unwrap_err();
        assert!(err.starts_with("tau-monotonicity"), "{err}");
    }

    fn random_instance(seed: u64, n: usize, types: usize, levels: usize) -> (Vec<Impression>, Vec<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        let mut pool = Vec::new();
        for j in 0..types {
            let bids = (0..n)
                .map(|_| {
                    let pairs: Vec<(f64, f64)> = (1..=levels)
                        .map(|k| (k as f64 / levels as f64, rng.random_range(0.01..1.0)))
                        .collect();
                    let total: f64 = pairs.iter().map(|p| p.1).sum();
                    let pairs: Vec<_> = pairs.iter().map(|(v, p)| (*v, p / total)).collect();
                    BidDistribution::from_pairs(&pairs).unwrap()
                })
                .collect();
            pool.push(imp(j, bids));
        }
        for _ in 0..(types * 3) {
            samples.push(pool[rng.random_range(0..types)].clone());
        }
        let rho = (0..n).map(|_| rng.random_range(0.0..0.6)).collect();
        (samples, rho)
    }

    #[test]
    fn random_instances_close_the_duality_gap() {
        for seed in 0..12 {
            for mode in [LpMode::Value, LpMode::Posted] {
                let (samples, rho) = random_instance(seed, 4, 5, 6);
                let slots = SlotProfile::new(vec![1.0, 0.7, 0.7, 0.3]).unwrap();
                let lp = build_sample_lp(&samples, &rho, &slots, mode, 0.05).unwrap();
                let d = solve_for_duals(&lp).unwrap();
                assert!(d.residuals.duality_gap <= 1e-6, "{seed} {mode}: {:?}", d.residuals);
                d.check_invariants(1e-7).unwrap();
            }
        }
    }
}
