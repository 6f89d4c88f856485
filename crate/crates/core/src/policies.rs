//! Per-impression call-out rules: the LP-derived policies and the set and
//! threshold baselines.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bidmodel::{BidDistribution, Impression, SlotProfile};
use crate::constraints::CapacityView;
use crate::duals::{best_slot, local_tau, v1_threshold, DualSolution, LpMode};
use crate::error::{param, Error, Result};
use crate::mechanisms::PostedOffer;

/// Relative slack when comparing against learned duals, which sit exactly
/// on the margin for networks the LP calls fractionally.
pub const DUAL_TOL: f64 = 1e-9;

fn at_least(x: f64, lambda: f64) -> bool {
    x >= lambda - DUAL_TOL * lambda.abs().max(1.0)
}

/// `7 e^2 / (7 e^2 + 1)`: mass share above which the reserve follows a
/// single network's MHR reserve.
pub fn psi_share() -> f64 {
    let k = 7.0 * std::f64::consts::E.powi(2);
    k / (k + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    LpVal,
    LpGsp,
    LpPost,
    Random,
    MaxRemBand,
    MaxProb,
    MaxExp,
    ThRandom,
    ThMaxRemBand,
    ThProb,
    ThLp,
    AdvCutoff,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 12] = [
        PolicyKind::LpVal,
        PolicyKind::LpGsp,
        PolicyKind::LpPost,
        PolicyKind::Random,
        PolicyKind::MaxRemBand,
        PolicyKind::MaxProb,
        PolicyKind::MaxExp,
        PolicyKind::ThRandom,
        PolicyKind::ThMaxRemBand,
        PolicyKind::ThProb,
        PolicyKind::ThLp,
        PolicyKind::AdvCutoff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::LpVal => "lp-val",
            PolicyKind::LpGsp => "lp-gsp",
            PolicyKind::LpPost => "lp-post",
            PolicyKind::Random => "random",
            PolicyKind::MaxRemBand => "max-rem-band",
            PolicyKind::MaxProb => "max-prob",
            PolicyKind::MaxExp => "max-exp",
            PolicyKind::ThRandom => "th-random",
            PolicyKind::ThMaxRemBand => "th-max-rem-band",
            PolicyKind::ThProb => "th-prob",
            PolicyKind::ThLp => "th-lp",
            PolicyKind::AdvCutoff => "adv-cutoff",
        }
    }

    /// LP the policy needs duals from, if any.
    pub fn lp_mode(self) -> Option<LpMode> {
        match self {
            PolicyKind::LpVal | PolicyKind::LpGsp | PolicyKind::ThLp => Some(LpMode::Value),
            PolicyKind::LpPost => Some(LpMode::Posted),
            _ => None,
        }
    }

    pub fn is_set_based(self) -> bool {
        matches!(
            self,
            PolicyKind::Random | PolicyKind::MaxRemBand | PolicyKind::MaxProb | PolicyKind::MaxExp
        )
    }

    pub fn is_threshold(self) -> bool {
        matches!(
            self,
            PolicyKind::ThRandom | PolicyKind::ThMaxRemBand | PolicyKind::ThProb | PolicyKind::ThLp
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub kind: PolicyKind,
    /// Set size of set-based policies.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Survival-mass threshold of threshold policies.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Optimum lower-bound fraction of the randomized cut-off policy.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_k() -> usize {
    4
}

fn default_threshold() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.25
}

impl PolicyParams {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            k: default_k(),
            threshold: default_threshold(),
            delta: default_delta(),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_set_based() && self.k == 0 {
            return Err(param("k", "must be at least 1"));
        }
        if self.kind.is_threshold() && !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(param("threshold", "must be positive"));
        }
        if self.kind == PolicyKind::AdvCutoff && !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(param("delta", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// The swept parameter, for reports.
    pub fn label(&self) -> String {
        if self.kind.is_set_based() {
            format!("{}", self.k)
        } else if self.kind.is_threshold() {
            format!("{}", self.threshold)
        } else if self.kind == PolicyKind::AdvCutoff {
            format!("{}", self.delta)
        } else {
            String::new()
        }
    }
}

/// How the called networks are auctioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Mechanism {
    ValueAuction,
    GspRegular,
    SingleSlotReserve { reserve: f64 },
    Posted { offers: Vec<PostedOffer> },
}

/// The pairs `(w_i(l), u_i(l))` of one slot, ordered by `w / u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPairs {
    pub slot: usize,
    pub networks: Vec<usize>,
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CallOutDecision {
    pub callouts: Vec<usize>,
    pub mechanism: Option<Mechanism>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<SlotPairs>,
    /// `|Psi(t)|` when a reserve was chosen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<usize>,
}

impl CallOutDecision {
    fn with(callouts: Vec<usize>, mechanism: Mechanism) -> Self {
        let mechanism = (!callouts.is_empty()).then_some(mechanism);
        Self {
            callouts,
            mechanism,
            ..Default::default()
        }
    }
}

/// Per-network quantities of the envelope rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeScore {
    /// `sum_v v rho_{l(v)} p_v` over levels with a slot.
    pub score: f64,
    /// `sum_v (v rho_{l(v)} - tau_{l(v)}) p_v`, the optimum of the
    /// single-network problem with call-out forced.
    pub reduced: f64,
}

/// Envelope slot of a positive level, counting slots whose margin
/// `rho_l v - tau_l` is zero up to [`DUAL_TOL`]: the LP is indifferent about
/// such levels and the rules resolve the tie toward placing the bid.
pub fn scoring_slot(v: f64, tau: &[f64], slots: &SlotProfile) -> usize {
    let l = best_slot(v, tau, slots);
    if l <= slots.len() || v <= 0.0 {
        return l;
    }
    (1..=slots.len())
        .find(|&k| slots.discount(k) * v - tau[k - 1] >= -DUAL_TOL * tau[k - 1].abs().max(1.0))
        .unwrap_or(l)
}

pub fn envelope_score(dist: &BidDistribution, tau: &[f64], slots: &SlotProfile) -> EnvelopeScore {
    let mut out = EnvelopeScore {
        score: 0.0,
        reduced: 0.0,
    };
    for (v, p) in dist.iter() {
        let l = scoring_slot(v, tau, slots);
        if l <= slots.len() {
            out.score += v * slots.discount(l) * p;
            out.reduced += (v * slots.discount(l) - tau[l - 1]) * p;
        }
    }
    out
}

/// Slot duals for an impression: learned ones when the impression was
/// sampled, otherwise those of its own per-impression problem at the
/// learned `lambda`.
pub fn resolve_tau(duals: &DualSolution, imp: &Impression, slots: &SlotProfile) -> Result<Vec<f64>> {
    match duals.tau_for(&imp.key) {
        Some(t) => Ok(t.to_vec()),
        None => local_tau(duals.mode, &imp.bids, &duals.lambda, slots),
    }
}

fn check_mode(duals: &DualSolution, expected: LpMode) -> Result<()> {
    if duals.mode != expected {
        return Err(Error::DualModeMismatch {
            expected: expected.to_string(),
            found: duals.mode.to_string(),
        });
    }
    Ok(())
}

fn slot_pairs(imp: &Impression, callouts: &[usize], tau: &[f64], slots: &SlotProfile) -> Vec<SlotPairs> {
    let m = slots.len();
    let mut per_slot = vec![Vec::new(); m];
    for &i in callouts {
        let mut w = vec![0.0; m];
        let mut u = vec![0.0; m];
        for (v, p) in imp.bids[i].iter() {
            let l = scoring_slot(v, tau, slots);
            if l <= m {
                w[l - 1] += v * p;
                u[l - 1] += p;
            }
        }
        for l in 0..m {
            if u[l] > 0.0 {
                per_slot[l].push((i, w[l], u[l]));
            }
        }
    }
    per_slot
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(l, mut v)| {
            v.sort_by(|a, b| (b.1 / b.2).total_cmp(&(a.1 / a.2)).then(a.0.cmp(&b.0)));
            SlotPairs {
                slot: l + 1,
                networks: v.iter().map(|x| x.0).collect(),
                pairs: v.iter().map(|x| (x.1, x.2)).collect(),
            }
        })
        .collect()
}

/// Calls every network with capacity whose forced-call optimum
/// `sum_v (v rho_{l(v)} - tau_{l(v)}) p_v` reaches `lambda_i`; slots go to the
/// highest bids.
pub fn lp_val_decide(
    imp: &Impression,
    duals: &DualSolution,
    tau: &[f64],
    slots: &SlotProfile,
    cap: &dyn CapacityView,
) -> Result<CallOutDecision> {
    check_mode(duals, LpMode::Value)?;
    let callouts: Vec<usize> = (0..imp.networks())
        .filter(|&i| cap.available(i))
        .filter(|&i| {
            let s = envelope_score(&imp.bids[i], tau, slots);
            s.score > 0.0 && at_least(s.reduced, duals.lambda[i])
        })
        .collect();
    let mut d = CallOutDecision::with(callouts, Mechanism::ValueAuction);
    d.diagnostics = slot_pairs(imp, &d.callouts, tau, slots);
    Ok(d)
}

/// Which auction the GSP rule runs on a call-out set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GspSplit {
    /// `sum_{i in S} sum_v v rho_{l(v)} p_v`.
    pub lp_value: f64,
    /// `sum_{i in S} sum_{v >= v1} v rho_1 p_v`.
    pub top_slot_value: f64,
}

impl GspSplit {
    pub fn regular(&self) -> bool {
        self.lp_value >= 3.0 * self.top_slot_value
    }
}

pub fn gsp_split(imp: &Impression, set: &[usize], tau: &[f64], slots: &SlotProfile) -> GspSplit {
    let v1 = v1_threshold(tau, slots);
    let r1 = slots.discount(1);
    let mut split = GspSplit {
        lp_value: 0.0,
        top_slot_value: 0.0,
    };
    for &i in set {
        split.lp_value += envelope_score(&imp.bids[i], tau, slots).score;
        split.top_slot_value += imp.bids[i]
            .iter()
            .filter(|(v, _)| *v >= v1)
            .map(|(v, p)| v * r1 * p)
            .sum::<f64>();
    }
    split
}

/// Smallest grid value `v` with `2 v P[V >= v] >= sum_{v' >= v} v' P[V = v']`.
pub fn mhr_reserve(dist: &BidDistribution) -> f64 {
    let values = dist.values();
    let probs = dist.probs();
    let mut tail: f64 = dist.iter().map(|(v, p)| v * p).sum();
    let mut surv = 1.0;
    for k in 0..values.len() {
        let v = values[k];
        if 2.0 * v * surv >= tail * (1.0 - 1e-12) {
            return v;
        }
        tail -= v * probs[k];
        surv -= probs[k];
    }
    dist.max_value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveChoice {
    pub reserve: f64,
    pub v1: f64,
    /// Networks of the set whose MHR reserve is at least `v1`.
    pub psi: Vec<usize>,
    /// Whether the reserve came from a single network's MHR reserve.
    pub from_psi: bool,
}

/// Single reserve for the one-slot auction on `set`.
pub fn choose_reserve(imp: &Impression, set: &[usize], tau: &[f64], slots: &SlotProfile) -> Result<ReserveChoice> {
    if set.is_empty() {
        return Err(param("set", "reserve needs a non-empty call-out set"));
    }
    let v1 = v1_threshold(tau, slots);
    let mass = |i: usize| -> f64 { imp.bids[i].iter().filter(|(v, _)| *v >= v1).map(|(v, p)| v * p).sum() };
    let z: f64 = set.iter().map(|&i| mass(i)).sum();
    let mut psi = Vec::new();
    let mut vstar = Vec::new();
    for &i in set {
        let r = mhr_reserve(&imp.bids[i]);
        if v1 <= r {
            psi.push(i);
            vstar.push(r);
        }
    }
    let psi_mass: f64 = psi.iter().map(|&i| mass(i)).sum();
    let best = psi
        .iter()
        .zip(&vstar)
        .map(|(&i, &r)| (mass(i), r))
        .fold(None::<(f64, f64)>, |acc, x| match acc {
            Some(a) if a.0 >= x.0 => Some(a),
            _ => Some(x),
        });
    let (reserve, from_psi) = match best {
        Some((_, r)) if psi_mass >= psi_share() * z => (r, true),
        _ => (v1, false),
    };
    Ok(ReserveChoice {
        reserve,
        v1,
        psi,
        from_psi,
    })
}

/// Same call-outs as [`lp_val_decide`]; runs GSP when lower slots carry at
/// least two thirds of the LP value, otherwise a single-slot auction with a
/// reserve.
pub fn lp_gsp_decide(
    imp: &Impression,
    duals: &DualSolution,
    tau: &[f64],
    slots: &SlotProfile,
    cap: &dyn CapacityView,
) -> Result<CallOutDecision> {
    let mut d = lp_val_decide(imp, duals, tau, slots, cap)?;
    if d.callouts.is_empty() {
        return Ok(d);
    }
    if gsp_split(imp, &d.callouts, tau, slots).regular() {
        d.mechanism = Some(Mechanism::GspRegular);
    } else {
        let choice = choose_reserve(imp, &d.callouts, tau, slots)?;
        d.psi = Some(choice.psi.len());
        d.mechanism = Some(Mechanism::SingleSlotReserve {
            reserve: choice.reserve,
        });
    }
    Ok(d)
}

/// Price `v'` maximizing `(v rho_{f(v)} - tau_{f(v)}) P[V >= v]` over the
/// grid, offered only when that is positive and reaches `lambda`. Ties go to
/// the lower price.
pub fn posted_price(dist: &BidDistribution, tau: &[f64], slots: &SlotProfile, lambda: f64) -> Option<(f64, usize)> {
    let surv = dist.survival_table();
    let mut best: Option<(f64, f64, usize)> = None;
    for (k, &v) in dist.values().iter().enumerate() {
        let l = best_slot(v, tau, slots);
        if l > slots.len() {
            continue;
        }
        let g = (v * slots.discount(l) - tau[l - 1]) * surv[k];
        if g > 0.0 && at_least(g, lambda) && best.is_none_or(|b| g > b.0) {
            best = Some((g, v, l));
        }
    }
    best.map(|b| (b.1, b.2))
}

/// Offers each network with capacity its unique price.
pub fn lp_post_decide(
    imp: &Impression,
    duals: &DualSolution,
    tau: &[f64],
    slots: &SlotProfile,
    cap: &dyn CapacityView,
) -> Result<CallOutDecision> {
    check_mode(duals, LpMode::Posted)?;
    let mut offers = Vec::new();
    for i in 0..imp.networks() {
        if !cap.available(i) {
            continue;
        }
        if let Some((price, slot)) = posted_price(&imp.bids[i], tau, slots, duals.lambda[i]) {
            offers.push(PostedOffer {
                network: i,
                price,
                slot,
            });
        }
    }
    let callouts = offers.iter().map(|o| o.network).collect();
    Ok(CallOutDecision::with(callouts, Mechanism::Posted { offers }))
}

/// Networks with capacity, ordered by `key` (descending, ties by id).
fn order_by(cap: &dyn CapacityView, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..cap.networks()).filter(|&i| cap.available(i)).collect();
    ids.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    ids
}

/// Shortest prefix whose survival sum reaches `threshold`; the last member is
/// kept with the probability that makes the expected sum exactly the
/// threshold.
pub fn threshold_prefix<R: Rng + ?Sized>(
    order: &[usize],
    survival: impl Fn(usize) -> f64,
    threshold: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::new();
    let mut sum = 0.0;
    for &i in order {
        let s = survival(i);
        if sum + s >= threshold {
            if s > 0.0 && rng.random::<f64>() < (threshold - sum) / s {
                out.push(i);
            }
            return out;
        }
        sum += s;
        out.push(i);
    }
    out
}

/// Expected bid over the full grid.
fn expected_bid(imp: &Impression, i: usize) -> f64 {
    imp.base[i].mean()
}

/// Set-based and threshold baselines.
pub fn baseline_decide<R: Rng + ?Sized>(
    params: &PolicyParams,
    imp: &Impression,
    cap: &dyn CapacityView,
    rng: &mut R,
) -> Result<CallOutDecision> {
    let order = match params.kind {
        PolicyKind::Random | PolicyKind::ThRandom => {
            let mut ids: Vec<usize> = (0..cap.networks()).filter(|&i| cap.available(i)).collect();
            ids.shuffle(rng);
            ids
        }
        PolicyKind::MaxRemBand | PolicyKind::ThMaxRemBand => order_by(cap, |i| cap.remaining(i)),
        PolicyKind::MaxProb | PolicyKind::ThProb => order_by(cap, |i| imp.survival(i)),
        PolicyKind::MaxExp => order_by(cap, |i| expected_bid(imp, i)),
        other => return Err(Error::UnknownPolicy(format!("{other} is not a baseline"))),
    };
    let callouts = if params.kind.is_set_based() {
        order.into_iter().take(params.k).collect()
    } else {
        threshold_prefix(&order, |i| imp.survival(i), params.threshold, rng)
    };
    Ok(CallOutDecision::with(callouts, Mechanism::ValueAuction))
}

/// Threshold policy over the networks whose slot-free score
/// `sum_v v rho_1 p_v` reaches `lambda_i`, ordered by `score - lambda_i`.
/// The threshold takes the place of the slot capacity.
pub fn th_lp_decide<R: Rng + ?Sized>(
    imp: &Impression,
    duals: &DualSolution,
    slots: &SlotProfile,
    threshold: f64,
    cap: &dyn CapacityView,
    rng: &mut R,
) -> Result<CallOutDecision> {
    check_mode(duals, LpMode::Value)?;
    let free = vec![0.0; slots.len()];
    let margin: Vec<f64> = (0..imp.networks())
        .map(|i| envelope_score(&imp.bids[i], &free, slots).score - duals.lambda[i])
        .collect();
    let mut order = order_by(cap, |i| margin[i]);
    order.retain(|&i| imp.survival(i) > 0.0 && at_least(margin[i] + duals.lambda[i], duals.lambda[i]));
    let callouts = threshold_prefix(&order, |i| imp.survival(i), threshold, rng);
    Ok(CallOutDecision::with(callouts, Mechanism::ValueAuction))
}

/// Cut-off set `H = {delta/2, delta, 2 delta, ..., 1}`. `delta` is rounded
/// down to a power of two.
pub fn cutoff_set(delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(param("delta", "must lie in (0, 1]"));
    }
    let e = delta.log2().floor();
    let rounded = 2f64.powf(e);
    if rounded != delta {
        log::warn!("delta {delta} rounded down to {rounded}");
    }
    let mut h = vec![rounded / 2.0];
    let mut c = rounded;
    while c <= 1.0 {
        h.push(c);
        c *= 2.0;
    }
    Ok(h)
}

/// Draws the run's cut-off uniformly from [`cutoff_set`].
pub fn draw_cutoff<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> Result<f64> {
    let h = cutoff_set(delta)?;
    Ok(h[rng.random_range(0..h.len())])
}

/// Calls up to `2 / c` networks with capacity whose survival lies in
/// `[c, 2c]`, highest survival first.
pub fn adv_cutoff_decide(cutoff: f64, imp: &Impression, cap: &dyn CapacityView) -> CallOutDecision {
    let limit = (2.0 / cutoff).floor() as usize;
    let callouts = order_by(cap, |i| imp.survival(i))
        .into_iter()
        .filter(|&i| {
            let s = imp.survival(i);
            s >= cutoff && s <= 2.0 * cutoff
        })
        .take(limit)
        .collect();
    CallOutDecision::with(callouts, Mechanism::ValueAuction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bidmodel::ImpressionKey;
    use crate::constraints::Unlimited;
    use crate::duals::{SolverResiduals, TauEntry};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn dist(pairs: &[(f64, f64)]) -> BidDistribution {
        BidDistribution::from_pairs(pairs).unwrap()
    }

    fn imp(bids: Vec<BidDistribution>) -> Impression {
        let b: Arc<[BidDistribution]> = bids.into();
        let key = ImpressionKey {
            type_id: 0,
            min_price: 0.0,
        };
        Impression::new(key, 0, b.clone(), b)
    }

    fn duals(mode: LpMode, lambda: Vec<f64>, tau: Vec<f64>, slots: &SlotProfile) -> DualSolution {
        DualSolution::new(
            mode,
            lambda,
            vec![TauEntry {
                key: ImpressionKey {
                    type_id: 0,
                    min_price: 0.0,
                },
                tau,
            }],
            slots.discounts().to_vec(),
            0.0,
            0.0,
            SolverResiduals::default(),
        )
    }

    /// Fixed survival values and no capacity limits.
    struct Survivals(Vec<f64>);

    fn with_survival(s: &[f64]) -> Impression {
        let bids: Vec<_> = s.iter().map(|p| BidDistribution::bernoulli(*p).unwrap()).collect();
        let mut i = imp(bids);
        i.survival = s.into();
        i
    }

    impl CapacityView for Survivals {
        fn networks(&self) -> usize {
            self.0.len()
        }
        fn available(&self, i: usize) -> bool {
            self.0[i] > 0.0
        }
        fn remaining(&self, i: usize) -> f64 {
            self.0[i]
        }
    }

    #[test]
    fn envelope_scores() {
        let s = SlotProfile::new(vec![1.0, 0.5]).unwrap();
        let e = envelope_score(&dist(&[(0.5, 0.5), (1.0, 0.5)]), &[0.6, 0.2], &s);
        assert_abs_diff_eq!(e.score, 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(e.reduced, 0.5 * 0.4 + 0.5 * 0.05, epsilon = 1e-12);
        let below = envelope_score(&dist(&[(0.1, 1.0)]), &[0.6, 0.2], &s);
        assert_eq!(below.score, 0.0);
    }

    #[test]
    fn lp_val_calls_on_reduced_value() {
        let s = SlotProfile::single();
        let d = duals(LpMode::Value, vec![0.0, 0.1, 0.5], vec![0.0], &s);
        let i = imp(vec![
            dist(&[(0.4, 1.0)]),
            dist(&[(0.0, 1.0)]),
            dist(&[(0.5, 0.5), (1.0, 0.5)]),
        ]);
        let dec = lp_val_decide(&i, &d, &[0.0], &s, &Unlimited(3)).unwrap();
        assert_eq!(dec.callouts, vec![0, 2]);
        assert_eq!(dec.mechanism, Some(Mechanism::ValueAuction));

        let s2 = SlotProfile::new(vec![1.0, 0.5]).unwrap();
        let d2 = duals(LpMode::Value, vec![0.3, 0.2], vec![0.6, 0.2], &s2);
        let i2 = imp(vec![dist(&[(0.5, 0.5), (1.0, 0.5)]); 2]);
        let dec = lp_val_decide(&i2, &d2, &[0.6, 0.2], &s2, &Unlimited(2)).unwrap();
        // reduced value 0.225 sits between the two multipliers
        assert_eq!(dec.callouts, vec![1]);
        let dec = lp_val_decide(&i2, &d2, &[0.6, 0.2], &s2, &Survivals(vec![1.0, 0.0])).unwrap();
        assert!(dec.callouts.is_empty());
        assert_eq!(dec.mechanism, None);
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let s = SlotProfile::single();
        let d = duals(LpMode::Posted, vec![0.0], vec![0.0], &s);
        let i = imp(vec![dist(&[(1.0, 1.0)])]);
        assert!(matches!(
            lp_val_decide(&i, &d, &[0.0], &s, &Unlimited(1)),
            Err(Error::DualModeMismatch { .. })
        ));
    }

    #[test]
    fn mhr_reserve_examples() {
        assert_eq!(mhr_reserve(&dist(&[(3.0, 1.0)])), 3.0);
        assert_eq!(mhr_reserve(&dist(&[(1.0, 0.5), (2.0, 0.5)])), 1.0);
        assert_eq!(mhr_reserve(&dist(&[(1.0, 0.5), (10.0, 0.5)])), 10.0);
    }

    #[test]
    fn single_slot_always_uses_reserve() {
        let s = SlotProfile::single();
        let d = duals(LpMode::Value, vec![0.0; 2], vec![0.2], &s);
        let i = imp(vec![dist(&[(0.5, 0.5), (1.0, 0.5)]), dist(&[(0.3, 1.0)])]);
        let dec = lp_gsp_decide(&i, &d, &[0.2], &s, &Unlimited(2)).unwrap();
        assert!(matches!(dec.mechanism, Some(Mechanism::SingleSlotReserve { .. })));
        let val = lp_val_decide(&i, &d, &[0.2], &s, &Unlimited(2)).unwrap();
        assert_eq!(dec.callouts, val.callouts);
    }

    #[test]
    fn lower_slots_heavy_instance_runs_regular_gsp() {
        // four networks bidding 1 on three equal-ish slots; slot 1 needs bids
        // above v1 = 3, which nobody reaches
        let s = SlotProfile::new(vec![1.0, 0.9, 0.8]).unwrap();
        let tau = [2.9, 0.4, 0.3];
        let i = imp(vec![dist(&[(1.0, 1.0)]); 4]);
        let split = gsp_split(&i, &[0, 1, 2, 3], &tau, &s);
        assert_eq!(split.top_slot_value, 0.0);
        assert!(split.lp_value > 0.0 && split.regular());
        let d = duals(LpMode::Value, vec![0.0; 4], tau.to_vec(), &s);
        let dec = lp_gsp_decide(&i, &d, &tau, &s, &Unlimited(4)).unwrap();
        assert_eq!(dec.mechanism, Some(Mechanism::GspRegular));
    }

    #[test]
    fn reserve_choice_examples() {
        let s = SlotProfile::single();
        let i = imp(vec![dist(&[(0.8, 1.0)])]);
        let c = choose_reserve(&i, &[0], &[0.5], &s).unwrap();
        assert_eq!(c.reserve, 0.8);
        assert_eq!(c.psi, vec![0]);

        // mass just above v1 = 0.5 plus a low atom that pulls the MHR reserve
        // below v1
        let d = dist(&[(0.3, 0.5), (0.55, 0.5)]);
        assert!(mhr_reserve(&d) < 0.5);
        let i = imp(vec![d.clone(), d]);
        let c = choose_reserve(&i, &[0, 1], &[0.5], &s).unwrap();
        assert!(c.psi.is_empty());
        assert_abs_diff_eq!(c.reserve, 0.5);
        assert!(choose_reserve(&i, &[], &[0.5], &s).is_err());
    }

    #[test]
    fn posted_price_examples() {
        let s = SlotProfile::single();
        let d = dist(&[(1.0, 0.5), (2.0, 0.5)]);
        assert_eq!(posted_price(&d, &[0.5], &s, 0.1), Some((2.0, 1)));
        assert_eq!(posted_price(&d, &[0.5], &s, 0.8), None);
        assert_eq!(posted_price(&dist(&[(0.7, 1.0)]), &[0.0], &s, 0.0), Some((0.7, 1)));
        let pd = duals(LpMode::Posted, vec![0.1, 0.8], vec![0.5], &s);
        let dec = lp_post_decide(&imp(vec![d.clone(), d]), &pd, &[0.5], &s, &Unlimited(2)).unwrap();
        assert_eq!(dec.callouts, vec![0]);
        match dec.mechanism {
            Some(Mechanism::Posted { offers }) => assert_eq!(offers.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn baselines() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let i = with_survival(&[0.9, 0.5, 0.1]);
        let cap = Unlimited(3);
        let p = PolicyParams::new(PolicyKind::MaxProb).with_k(2);
        assert_eq!(baseline_decide(&p, &i, &cap, &mut rng).unwrap().callouts, vec![0, 1]);

        let p = PolicyParams::new(PolicyKind::ThProb).with_threshold(1.0);
        let trials = 20_000;
        let mut second = 0;
        for _ in 0..trials {
            let d = baseline_decide(&p, &i, &cap, &mut rng).unwrap();
            assert_eq!(d.callouts[0], 0);
            if d.callouts.len() == 2 {
                second += 1;
            }
        }
        let frac = second as f64 / trials as f64;
        assert!((frac - 0.2).abs() < 0.015, "{frac}");

        let r = PolicyParams::new(PolicyKind::Random).with_k(3);
        let a = baseline_decide(&r, &i, &cap, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = baseline_decide(&r, &i, &cap, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        let band = Survivals(vec![0.5, 3.0, 0.0]);
        let p = PolicyParams::new(PolicyKind::MaxRemBand).with_k(3);
        assert_eq!(baseline_decide(&p, &i, &band, &mut rng).unwrap().callouts, vec![1, 0]);

        let lp = PolicyParams::new(PolicyKind::LpVal);
        assert!(baseline_decide(&lp, &i, &cap, &mut rng).is_err());
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff_set(0.25).unwrap(), vec![0.125, 0.25, 0.5, 1.0]);
        assert_eq!(cutoff_set(0.3).unwrap(), vec![0.125, 0.25, 0.5, 1.0]);
        let i = with_survival(&[0.6, 0.55, 0.3, 0.9]);
        // 0.9 lies inside [c, 2c] = [0.5, 1]
        assert_eq!(adv_cutoff_decide(0.5, &i, &Unlimited(4)).callouts, vec![3, 0, 1]);
        assert_eq!(adv_cutoff_decide(0.25, &i, &Unlimited(4)).callouts, vec![2]);
        let i = with_survival(&[1.0, 0.99, 1.0, 1.0]);
        assert_eq!(adv_cutoff_decide(1.0, &i, &Unlimited(4)).callouts, vec![0, 2]);
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("nope".parse::<PolicyKind>().is_err());
    }
}
