//! Exhaustive optimum over stationary randomized call-out policies for tiny
//! instances, with its own dense simplex so it shares no code with the
//! column-generation solver.

use crate::bidmodel::{BidDistribution, SlotProfile};
use crate::error::{Error, Result};

use super::scenario::{Model, Objective};

pub const MAX_NETWORKS: usize = 3;
pub const MAX_TYPES: usize = 3;
pub const MAX_LEVELS: usize = 4;
pub const MAX_SLOTS: usize = 2;

const EPS: f64 = 1e-12;

/// `max c.x` s.t. `A x <= b`, `x >= 0` with `b >= 0`, by the tableau method
/// with Bland's rule.
pub fn tableau_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<f64> {
    let m = a.len();
    let n = c.len();
    let width = n + m + 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    for r in 0..m {
        t[r][..n].copy_from_slice(&a[r]);
        t[r][n + r] = 1.0;
        t[r][width - 1] = b[r];
    }
    for j in 0..n {
        t[m][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    for _ in 0..100_000 {
        let Some(enter) = (0..n + m).find(|&j| t[m][j] < -EPS) else {
            return Ok(t[m][width - 1]);
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if t[r][enter] > EPS {
                let ratio = t[r][width - 1] / t[r][enter];
                let better = match leave {
                    None => true,
                    Some((l, best)) => ratio < best - EPS || (ratio <= best + EPS && basis[r] < basis[l]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::InstanceTooLarge("oracle LP is unbounded".into()));
        };
        let pivot = t[row][enter];
        t[row].iter_mut().for_each(|x| *x /= pivot);
        let pivot_row = t[row].clone();
        for (r, line) in t.iter_mut().enumerate() {
            if r != row && line[enter].abs() > 0.0 {
                let f = line[enter];
                line.iter_mut().zip(&pivot_row).for_each(|(x, p)| *x -= f * p);
            }
        }
        basis[row] = enter;
    }
    Err(Error::SolverNonConvergence {
        iterations: 100_000,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
    })
}

/// Expected objective of one call-out plan on one impression type.
type PlanValue = (Vec<usize>, f64);

/// All joint bid outcomes of `dists` with their probabilities.
fn outcomes(dists: &[&BidDistribution]) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for d in dists {
        let mut next = Vec::new();
        for (vals, p) in &out {
            for (v, q) in d.iter() {
                if q > 0.0 {
                    let mut vs = vals.clone();
                    vs.push(v);
                    next.push((vs, p * q));
                }
            }
        }
        out = next;
    }
    out
}

/// Welfare of assigning the highest bids to the best slots.
fn assignment_value(bids: &[f64], slots: &SlotProfile) -> f64 {
    let mut b: Vec<f64> = bids.iter().copied().filter(|v| *v > 0.0).collect();
    b.sort_by(|x, y| y.total_cmp(x));
    b.iter()
        .take(slots.len())
        .enumerate()
        .map(|(k, v)| slots.discount(k + 1) * v)
        .sum()
}

/// Revenue of posting `prices` (`None` = not called): acceptances take slots
/// in order of price.
fn posted_value(dists: &[BidDistribution], prices: &[Option<f64>], slots: &SlotProfile) -> f64 {
    let offered: Vec<(f64, f64)> = prices
        .iter()
        .zip(dists)
        .filter_map(|(p, d)| p.map(|p| (p, d.survival(p))))
        .collect();
    let k = offered.len();
    let mut total = 0.0;
    for mask in 0..(1usize << k) {
        let mut prob = 1.0;
        let mut accepted = Vec::new();
        for (j, (price, s)) in offered.iter().enumerate() {
            if mask >> j & 1 == 1 {
                prob *= s;
                accepted.push(*price);
            } else {
                prob *= 1.0 - s;
            }
        }
        if prob > 0.0 {
            accepted.sort_by(|x, y| y.total_cmp(x));
            let rev: f64 = accepted
                .iter()
                .take(slots.len())
                .enumerate()
                .map(|(r, p)| slots.discount(r + 1) * p)
                .sum();
            total += prob * rev;
        }
    }
    total
}

fn value_plans(dists: &[BidDistribution], slots: &SlotProfile) -> Vec<PlanValue> {
    let n = dists.len();
    (0..(1usize << n))
        .map(|mask| {
            let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let chosen: Vec<&BidDistribution> = set.iter().map(|&i| &dists[i]).collect();
            let w = outcomes(&chosen)
                .iter()
                .map(|(bids, p)| p * assignment_value(bids, slots))
                .sum();
            (set, w)
        })
        .collect()
}

fn posted_plans(dists: &[BidDistribution], slots: &SlotProfile) -> Vec<PlanValue> {
    let choices: Vec<Vec<Option<f64>>> = dists
        .iter()
        .map(|d| {
            std::iter::once(None)
                .chain(d.values().iter().map(|v| Some(*v)))
                .collect()
        })
        .collect();
    let mut profiles: Vec<Vec<Option<f64>>> = vec![Vec::new()];
    for c in &choices {
        profiles = profiles
            .into_iter()
            .flat_map(|p| {
                c.iter().map(move |x| {
                    let mut q = p.clone();
                    q.push(*x);
                    q
                })
            })
            .collect();
    }
    profiles
        .into_iter()
        .map(|prices| {
            let set = (0..prices.len()).filter(|&i| prices[i].is_some()).collect();
            (set, posted_value(dists, &prices, slots))
        })
        .collect()
}

fn check_size(model: &Model) -> Result<()> {
    let too_large = |what: String| Err(Error::InstanceTooLarge(what));
    if model.networks() > MAX_NETWORKS {
        return too_large(format!("{} networks (at most {MAX_NETWORKS})", model.networks()));
    }
    if model.types.len() > MAX_TYPES {
        return too_large(format!("{} impression types (at most {MAX_TYPES})", model.types.len()));
    }
    if model.slots().len() > MAX_SLOTS {
        return too_large(format!("{} slots (at most {MAX_SLOTS})", model.slots().len()));
    }
    if let Some(d) = model.types.iter().flat_map(|t| &t.bids).find(|d| d.len() > MAX_LEVELS) {
        return too_large(format!("{} bid levels (at most {MAX_LEVELS})", d.len()));
    }
    Ok(())
}

/// Best expected objective per impression over stationary randomized
/// policies that respect the call-out rates: every deterministic plan per
/// impression type is enumerated with its exact expected value, then the
/// optimal mixture is found by linear programming.
pub fn brute_force_policy_value(model: &Model) -> Result<f64> {
    check_size(model)?;
    let slots = model.slots();
    let n = model.networks();
    let rho = model.rho();
    let mut columns: Vec<(usize, Vec<usize>, f64)> = Vec::new();
    let exact = model.exact_impressions();
    for (k, (imp, _)) in exact.iter().enumerate() {
        let plans = match model.objective() {
            Objective::Posted => posted_plans(&imp.bids, slots),
            Objective::Value | Objective::Sales => value_plans(&imp.bids, slots),
            Objective::Gsp => {
                return Err(Error::InstanceTooLarge(
                    "no exhaustive oracle for the gsp objective".into(),
                ));
            }
        };
        columns.extend(plans.into_iter().map(|(set, w)| (k, set, w)));
    }
    let weights: Vec<f64> = exact.iter().map(|e| e.1).collect();
    let c: Vec<f64> = columns.iter().map(|(k, _, w)| weights[*k] * w).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for k in 0..exact.len() {
        a.push(
            columns
                .iter()
                .map(|(j, _, _)| if *j == k { 1.0 } else { 0.0 })
                .collect(),
        );
        b.push(1.0);
    }
    for (i, r) in rho.iter().enumerate().take(n) {
        a.push(
            columns
                .iter()
                .map(|(j, set, _)| if set.contains(&i) { weights[*j] } else { 0.0 })
                .collect(),
        );
        b.push(*r);
    }
    tableau_max(&c, &a, &b)
}
