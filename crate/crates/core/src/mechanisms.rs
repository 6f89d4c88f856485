//! Auction stage after bids realize, plus the analysis oracles used by the
//! policy checks (stop process, LPMAX, sales probability).

use serde::{Deserialize, Serialize};

use crate::bidmodel::{BidDistribution, SlotProfile};
use crate::error::{Error, Result};

/// A realized bid of one called network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub network: usize,
    pub value: f64,
}

/// A take-it-or-leave-it price offered to one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostedOffer {
    pub network: usize,
    pub price: f64,
    /// Slot the offer was priced for (1-based).
    pub slot: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    /// Realized bids, non-increasing, ties by network id.
    pub bids: Vec<Bid>,
    /// `(slot, network)` pairs, slots 1-based.
    pub allocation: Vec<(usize, usize)>,
    /// `(network, amount)` for every charged network.
    pub payments: Vec<(usize, f64)>,
    pub welfare: f64,
    pub revenue: f64,
    pub sold: bool,
}

fn sorted(bids: &[Bid]) -> Vec<Bid> {
    let mut b = bids.to_vec();
    b.sort_by(|x, y| y.value.total_cmp(&x.value).then(x.network.cmp(&y.network)));
    b
}

fn ranked(bids: &[Bid], slots: &SlotProfile) -> (Vec<Bid>, usize) {
    let b = sorted(bids);
    let filled = b.iter().take(slots.len()).take_while(|x| x.value > 0.0).count();
    (b, filled)
}

/// Top-`M` positive bids take slots `1..=M`; no payments.
pub fn run_value_auction(bids: &[Bid], slots: &SlotProfile) -> AuctionOutcome {
    let (b, filled) = ranked(bids, slots);
    let allocation: Vec<_> = (0..filled).map(|r| (r + 1, b[r].network)).collect();
    let welfare = (0..filled).map(|r| slots.discount(r + 1) * b[r].value).sum();
    AuctionOutcome {
        sold: filled > 0,
        bids: b,
        allocation,
        payments: Vec::new(),
        welfare,
        revenue: 0.0,
    }
}

/// Generalized second price: slot `r` pays `rho_r * a_{r+1}`.
pub fn run_gsp(bids: &[Bid], slots: &SlotProfile) -> AuctionOutcome {
    let mut out = run_value_auction(bids, slots);
    let next = |r: usize| out.bids.get(r + 1).map_or(0.0, |x| x.value.max(0.0));
    let payments: Vec<(usize, f64)> = out
        .allocation
        .iter()
        .enumerate()
        .map(|(r, &(slot, net))| (net, slots.discount(slot) * next(r)))
        .collect();
    out.revenue = payments.iter().map(|p| p.1).sum();
    out.payments = payments;
    out
}

/// Single slot second-price auction with a reserve. The winner pays
/// `rho_1 * max(reserve, second bid)`.
pub fn run_reserve_auction(bids: &[Bid], reserve: f64, slots: &SlotProfile) -> AuctionOutcome {
    let b = sorted(bids);
    let mut out = AuctionOutcome::default();
    if let Some(top) = b.first().filter(|t| t.value >= reserve && t.value > 0.0) {
        let second = b.get(1).map_or(0.0, |x| x.value.max(0.0));
        let pay = slots.discount(1) * reserve.max(second);
        out.allocation.push((1, top.network));
        out.payments.push((top.network, pay));
        out.welfare = slots.discount(1) * top.value;
        out.revenue = pay;
        out.sold = true;
    }
    out.bids = b;
    out
}

/// Networks accept when their bid reaches the offered price; accepted
/// offers fill slots greedily by price.
pub fn run_posted(offers: &[PostedOffer], bids: &[Bid], slots: &SlotProfile) -> AuctionOutcome {
    let bid_of = |net: usize| bids.iter().find(|b| b.network == net).map(|b| b.value);
    let mut accepted: Vec<(PostedOffer, f64)> = offers
        .iter()
        .filter_map(|o| bid_of(o.network).filter(|v| *v >= o.price).map(|v| (*o, v)))
        .collect();
    accepted.sort_by(|a, b| b.0.price.total_cmp(&a.0.price).then(a.0.network.cmp(&b.0.network)));
    let mut out = AuctionOutcome {
        bids: sorted(bids),
        ..Default::default()
    };
    for (r, (offer, value)) in accepted.iter().take(slots.len()).enumerate() {
        let rho = slots.discount(r + 1);
        out.allocation.push((r + 1, offer.network));
        out.payments.push((offer.network, rho * offer.price));
        out.welfare += rho * value;
        out.revenue += rho * offer.price;
    }
    out.sold = !out.allocation.is_empty();
    out
}

/// `E[Y] = sum_i prod_{i' < i} (1 - u_i') w_i` for a process that visits the
/// pairs in order and stops at `i` with probability `u_i`.
pub fn stop_process_expectation(pairs: &[(f64, f64)]) -> Result<f64> {
    let ratio = |(w, u): (f64, f64)| {
        if u > 0.0 {
            w / u
        } else if w > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    for k in 1..pairs.len() {
        if ratio(pairs[k]) > ratio(pairs[k - 1]) * (1.0 + 1e-12) {
            return Err(Error::OrderingViolated(k));
        }
    }
    let mut alive = 1.0;
    let mut total = 0.0;
    for &(w, u) in pairs {
        total += alive * w;
        alive *= 1.0 - u;
    }
    Ok(total)
}

/// `max sum v x_iv` s.t. `sum x_iv <= 1`, `x_iv <= p_iv`: fills unit mass from
/// the highest value down. Upper-bounds `E[max_i V_i]`.
pub fn lpmax_bound(dists: &[&BidDistribution]) -> f64 {
    let mut atoms: Vec<(f64, f64)> = dists.iter().flat_map(|d| d.iter()).collect();
    atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut left = 1.0;
    let mut total = 0.0;
    for (v, p) in atoms {
        if left <= 0.0 {
            break;
        }
        let take = p.min(left);
        total += v * take;
        left -= take;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalesProbability {
    pub exact: f64,
    /// `1 - exp(-c)` with `c = sum p_i x_i`.
    pub lower: f64,
    /// `c`.
    pub upper: f64,
}

/// Probability that at least one called network accepts.
pub fn sales_probability(p: &[f64], x: &[f64]) -> SalesProbability {
    let c: f64 = p.iter().zip(x).map(|(p, x)| p * x).sum();
    let miss: f64 = p.iter().zip(x).map(|(p, x)| 1.0 - p * x).product();
    SalesProbability {
        exact: 1.0 - miss,
        lower: 1.0 - (-c).exp(),
        upper: c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bids(values: &[f64]) -> Vec<Bid> {
        values
            .iter()
            .enumerate()
            .map(|(network, &value)| Bid { network, value })
            .collect()
    }

    fn two() -> SlotProfile {
        SlotProfile::new(vec![1.0, 0.5]).unwrap()
    }

    #[test]
    fn value_auction() {
        assert_abs_diff_eq!(run_value_auction(&bids(&[3.0, 2.0, 1.0]), &two()).welfare, 4.0);
        assert_eq!(run_value_auction(&[], &two()).welfare, 0.0);
        let out = run_value_auction(&bids(&[0.7]), &SlotProfile::single());
        assert_eq!(out.welfare, 0.7);
        assert_eq!(out.allocation, vec![(1, 0)]);
    }

    #[test]
    fn value_auction_orders_ties_by_network() {
        let out = run_value_auction(&bids(&[1.0, 2.0, 2.0]), &two());
        assert_eq!(out.allocation, vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn gsp_payments() {
        let out = run_gsp(&bids(&[3.0, 2.0, 1.0]), &two());
        assert_eq!(out.payments, vec![(0, 2.0), (1, 0.5)]);
        assert_abs_diff_eq!(out.revenue, 2.5);
        assert_eq!(run_gsp(&bids(&[3.0]), &SlotProfile::single()).revenue, 0.0);
        assert_eq!(run_gsp(&bids(&[2.0, 2.0]), &SlotProfile::single()).revenue, 2.0);
    }

    #[test]
    fn reserve_auction() {
        let s = SlotProfile::single();
        let out = run_reserve_auction(&bids(&[3.0, 1.0]), 2.0, &s);
        assert_eq!(out.payments, vec![(0, 2.0)]);
        let out = run_reserve_auction(&bids(&[1.0, 1.0]), 2.0, &s);
        assert!(!out.sold);
        assert_eq!(out.revenue, 0.0);
        assert_eq!(run_reserve_auction(&bids(&[3.0, 2.5]), 2.0, &s).revenue, 2.5);
    }

    #[test]
    fn posted() {
        let s = SlotProfile::single();
        let offer = |network, price| PostedOffer {
            network,
            price,
            slot: 1,
        };
        assert_eq!(run_posted(&[offer(0, 2.0)], &bids(&[3.0]), &s).revenue, 2.0);
        assert_eq!(run_posted(&[offer(0, 2.0)], &bids(&[1.0]), &s).revenue, 0.0);
        let out = run_posted(&[offer(0, 2.0), offer(1, 3.0)], &bids(&[5.0, 5.0]), &s);
        assert_eq!(out.revenue, 3.0);
        assert_eq!(out.allocation, vec![(1, 1)]);
    }

    #[test]
    fn stop_process() {
        assert_eq!(stop_process_expectation(&[(0.4, 0.7)]).unwrap(), 0.4);
        assert_eq!(stop_process_expectation(&[(0.5, 1.0), (0.2, 0.9)]).unwrap(), 0.5);
        let v = stop_process_expectation(&[(0.5, 0.5), (0.5, 0.5)]).unwrap();
        assert_abs_diff_eq!(v, 0.75);
        assert!(v >= (1.0 - (-1.0f64).exp()));
        assert!(matches!(
            stop_process_expectation(&[(0.1, 0.5), (0.5, 0.5)]),
            Err(Error::OrderingViolated(1))
        ));
    }

    #[test]
    fn stop_process_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut pairs: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.05..0.25)))
                .collect();
            pairs.sort_by(|a, b| (b.0 / b.1).total_cmp(&(a.0 / a.1)));
            let exact = stop_process_expectation(&pairs).unwrap();
            let trials = 100_000;
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..trials {
                let mut y = 0.0;
                for &(w, u) in &pairs {
                    y += w;
                    if rng.random::<f64>() < u {
                        break;
                    }
                }
                sum += y;
                sq += y * y;
            }
            let mean = sum / trials as f64;
            let se = ((sq / trials as f64 - mean * mean) / trials as f64).sqrt();
            assert!((mean - exact).abs() <= 3.0 * se + 1e-9, "{mean} vs {exact}");
            let total: f64 = pairs.iter().map(|p| p.0).sum();
            assert!(exact >= (1.0 - (-1.0f64).exp()) * total - 1e-12);
        }
    }

    #[test]
    fn lpmax_examples() {
        let a = BidDistribution::from_pairs(&[(0.0, 0.4), (2.0, 0.6)]).unwrap();
        let b = BidDistribution::from_pairs(&[(0.0, 0.2), (1.0, 0.8)]).unwrap();
        assert_abs_diff_eq!(lpmax_bound(&[&a, &b]), 1.6, epsilon = 1e-12);
        let p = BidDistribution::point_mass(0.7).unwrap();
        assert_abs_diff_eq!(lpmax_bound(&[&p]), 0.7);
        assert_abs_diff_eq!(lpmax_bound(&[&a]), 1.2, epsilon = 1e-12);
    }

    #[test]
    fn lpmax_dominates_expected_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dists: Vec<BidDistribution> = (0..3)
                .map(|_| {
                    let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
                    let t: f64 = w.iter().sum();
                    let pairs: Vec<_> = w.iter().enumerate().map(|(k, p)| (k as f64 * 0.5, p / t)).collect();
                    BidDistribution::from_pairs(&pairs).unwrap()
                })
                .collect();
            // exact E[max] by enumerating the 4^3 outcomes
            let mut emax = 0.0;
            for a in dists[0].iter() {
                for b in dists[1].iter() {
                    for c in dists[2].iter() {
                        emax += a.1 * b.1 * c.1 * a.0.max(b.0).max(c.0);
                    }
                }
            }
            let refs: Vec<&BidDistribution> = dists.iter().collect();
            assert!(lpmax_bound(&refs) >= emax - 1e-12);
        }
    }

    #[test]
    fn sales_examples() {
        let s = sales_probability(&[1.0], &[1.0]);
        assert_eq!(s.exact, 1.0);
        assert_abs_diff_eq!(s.lower, 0.632_120_558_8, epsilon = 1e-9);
        assert_eq!(s.upper, 1.0);
        let s = sales_probability(&[0.5, 0.5], &[1.0, 1.0]);
        assert_abs_diff_eq!(s.exact, 0.75);
        assert_eq!(sales_probability(&[0.3, 0.9], &[0.0, 0.0]).exact, 0.0);
    }

    proptest! {
        #[test]
        fn sales_exact_within_bounds(px in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..12)) {
            let (p, x): (Vec<f64>, Vec<f64>) = px.into_iter().unzip();
            let s = sales_probability(&p, &x);
            prop_assert!(s.lower <= s.exact + 1e-12);
            prop_assert!(s.exact <= s.upper + 1e-12);
        }

        #[test]
        fn gsp_revenue_below_welfare(values in prop::collection::vec(0.0f64..10.0, 0..8)) {
            let b = bids(&values);
            let s = SlotProfile::new(vec![1.0, 0.6, 0.3]).unwrap();
            let g = run_gsp(&b, &s);
            prop_assert!(g.revenue <= run_value_auction(&b, &s).welfare + 1e-12);
            for (net, pay) in &g.payments {
                let slot = g.allocation.iter().find(|a| a.1 == *net).unwrap().0;
                prop_assert!(*pay <= s.discount(slot) * values[*net] + 1e-12);
            }
        }
    }
}
