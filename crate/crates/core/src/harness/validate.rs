//! Property suites run by `callout validate`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bidmodel::{generate_benchmark_distribution, BidDistribution, DistKind, ImpressionKey, SlotProfile};
use crate::constraints::{ArrivalProcess, RateLedger, TokenBucket};
use crate::duals::{build_exact_lp, solve_sample_lp, DualSolution, LpMode};
use crate::mechanisms::{sales_probability, stop_process_expectation};
use crate::policies::{mhr_reserve, PolicyKind, PolicyParams};

use super::scenario::{generate_benchmark, BenchmarkOptions, Objective, Scenario};
use super::sim::{conversion_experiment, run_many, write_rows_csv, SimOptions};

pub const SUITES: [&str; 8] = [
    "bidmodel",
    "duals",
    "stop-process",
    "sales-bounds",
    "mhr",
    "token-bucket",
    "scenario",
    "determinism",
];

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub elapsed: Duration,
}

type Check = std::result::Result<String, String>;

fn random_dist(rng: &mut ChaCha8Rng) -> BidDistribution {
    let k = rng.random_range(1..=6);
    let mut values: Vec<f64> = (0..k).map(|i| i as f64 * 0.5 + rng.random_range(0.0..0.4)).collect();
    values.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    BidDistribution::new(values, raw.iter().map(|p| p / total).collect()).expect("valid random grid")
}

fn bidmodel() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..500 {
        let d = random_dist(&mut rng);
        let surv = d.survival_table();
        if surv.windows(2).any(|w| w[1] > w[0] + 1e-12) || (surv[0] - 1.0).abs() > 1e-9 {
            return Err(format!("survival-monotone: grid {k}"));
        }
        let p = d.perturb_general_position(1e-9, &mut rng).map_err(|e| e.to_string())?;
        if d.total_variation(&p) > 1e-9 + 1e-15 {
            return Err(format!("perturbation-distance: grid {k}"));
        }
    }
    Ok("500 grids: survival monotone, perturbation within 1e-9".into())
}

fn check_duals(d: &DualSolution, tol: f64) -> Check {
    d.check_invariants(tol)?;
    if d.residuals.duality_gap > 1e-6 {
        return Err(format!("strong-duality: relative gap {:.3e}", d.residuals.duality_gap));
    }
    Ok(String::new())
}

fn duals() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=3);
        let mut discounts: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        discounts.sort_by(|a, b| b.total_cmp(a));
        discounts[0] = 1.0;
        let slots = SlotProfile::new(discounts).map_err(|e| e.to_string())?;
        let types = rng.random_range(1..=4);
        let blocks: Vec<_> = (0..types)
            .map(|j| {
                let key = ImpressionKey {
                    type_id: j,
                    min_price: 0.0,
                };
                (key, 1.0 / types as f64, (0..n).map(|_| random_dist(&mut rng)).collect())
            })
            .collect();
        let rho: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        for mode in [LpMode::Value, LpMode::Posted] {
            let lp = build_exact_lp(&blocks, &rho, &slots, mode).map_err(|e| e.to_string())?;
            let r = solve_sample_lp(&lp).map_err(|e| format!("instance {k}: {e}"))?;
            check_duals(&r.duals, 1e-9).map_err(|e| format!("instance {k} {mode}: {e}"))?;
            worst = worst.max(r.duals.residuals.duality_gap);
        }
    }
    Ok(format!(
        "100 LPs, worst relative duality gap {worst:.2e}, tau/rho monotone"
    ))
}

fn stop_process() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let factor = 1.0 - (-1.0_f64).exp();
    for k in 0..1000 {
        let n = rng.random_range(1..=8);
        let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = u.iter().sum();
        u.iter_mut().for_each(|x| *x /= s);
        let mut pairs: Vec<(f64, f64)> = u.iter().map(|&u| (u * rng.random_range(0.1..5.0), u)).collect();
        pairs.sort_by(|a, b| (b.0 / b.1).total_cmp(&(a.0 / a.1)));
        let e = stop_process_expectation(&pairs).map_err(|e| e.to_string())?;
        let total: f64 = pairs.iter().map(|p| p.0).sum();
        if e < factor * total - 1e-12 {
            return Err(format!("stop-process-bound: list {k}"));
        }
    }
    Ok("1000 lists meet the 1 - 1/e bound".into())
}

fn sales_bounds() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..10_000 {
        let n = rng.random_range(1..=32);
        let p: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let s = sales_probability(&p, &x);
        if s.exact < s.lower - 1e-12 || s.exact > s.upper + 1e-12 {
            return Err(format!("sales-bounds: vector {k}"));
        }
    }
    Ok("10000 vectors inside [1 - e^-c, c]".into())
}

fn mhr() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let floor = (-2.0_f64).exp();
    let mut count = 0;
    let mut worst = 1.0_f64;
    for _ in 0..2000 {
        let d = generate_benchmark_distribution(DistKind::Gaussian, 1.0, 40, &mut rng).map_err(|e| e.to_string())?;
        if d.is_mhr() {
            count += 1;
            worst = worst.min(d.survival(mhr_reserve(&d)));
        }
        if count >= 100 {
            break;
        }
    }
    if count < 50 {
        return Err(format!("mhr-corpus: only {count} MHR grids"));
    }
    if worst < floor {
        return Err(format!("mhr-reserve-survival: {worst} < {floor}"));
    }
    Ok(format!("{count} MHR grids, min survival at reserve {worst:.4}"))
}

fn token_bucket() -> Check {
    let mut b = TokenBucket::new(5.0, 0.5).map_err(|e| e.to_string())?;
    let mut granted = 0;
    for t in 1..=10_000 {
        if b.try_consume(t as f64).map_err(|e| e.to_string())? {
            granted += 1;
        }
        if b.level() < 0.0 || b.level() > b.capacity() {
            return Err("bucket-level-bounds".into());
        }
    }
    let frac = granted as f64 / 10_000.0;
    if (frac - 0.5).abs() > 0.01 {
        return Err(format!("bucket-grant-rate: {frac}"));
    }
    let mut ledger = RateLedger::new(vec![0.1]).map_err(|e| e.to_string())?;
    let mut g = 0;
    for _ in 0..100 {
        ledger.begin_impression();
        if ledger.try_consume(0) {
            g += 1;
        }
    }
    if g != 10 {
        return Err(format!("ledger-count: {g} grants, expected 10"));
    }
    let s = generate_benchmark(
        6,
        &BenchmarkOptions {
            networks: 6,
            verticals: 3,
            bins: 10,
            objective: Objective::Value,
            min_price: None,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let model = s.resolve().map_err(|e| e.to_string())?;
    let opts = SimOptions {
        m_exploit: 5000,
        replications: 10,
        compute_opt_ub: false,
        ..Default::default()
    };
    let p = PolicyParams::new(PolicyKind::LpVal);
    let mut worst = f64::INFINITY;
    for arrival in [ArrivalProcess::Uniform, ArrivalProcess::Poisson { mean_gap: 1.0 }] {
        let r = conversion_experiment(&model, &p, 5.0, arrival, &opts).map_err(|e| e.to_string())?;
        if r.bucket_violations > 0 {
            return Err("bucket-level-bounds: conversion run".into());
        }
        let se = r.ratio.sd / (r.ratios.len() as f64).sqrt();
        if r.ratio.mean + 3.0 * se < 0.75 {
            return Err(format!("conversion-ratio: {:.4} < 0.75", r.ratio.mean));
        }
        worst = worst.min(r.ratio.mean);
    }
    Ok(format!(
        "grant rate {frac:.3}, ledger exact, conversion ratio >= {worst:.3}"
    ))
}

fn scenario() -> Check {
    for kind in [DistKind::Gaussian, DistKind::Pareto] {
        let opts = BenchmarkOptions {
            kind,
            ..Default::default()
        };
        let a = generate_benchmark(1, &opts)
            .and_then(|s| s.to_json())
            .map_err(|e| e.to_string())?;
        let b = generate_benchmark(1, &opts)
            .and_then(|s| s.to_json())
            .map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("generate-determinism: {kind}"));
        }
        let parsed = Scenario::from_json(&a).map_err(|e| e.to_string())?;
        if parsed.to_json().map_err(|e| e.to_string())? != a {
            return Err(format!("scenario-round-trip: {kind}"));
        }
        if let Some(r) = parsed
            .networks
            .iter()
            .map(|n| n.rho)
            .find(|r| !(0.015..=0.15).contains(r))
        {
            return Err(format!("benchmark-rate-range: {r}"));
        }
    }
    Ok("gaussian and pareto benchmarks deterministic, round-trip, rates in [0.015, 0.15]".into())
}

fn determinism() -> Check {
    let s = generate_benchmark(
        7,
        &BenchmarkOptions {
            networks: 8,
            verticals: 4,
            bins: 20,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let model = s.resolve().map_err(|e| e.to_string())?;
    let configs = [
        PolicyParams::new(PolicyKind::ThLp),
        PolicyParams::new(PolicyKind::MaxProb).with_k(2),
    ];
    let opts = SimOptions {
        m_exploit: 500,
        replications: 3,
        ..Default::default()
    };
    let run = || -> std::result::Result<Vec<u8>, String> {
        let reports = run_many(&model, &configs, &opts).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        write_rows_csv(&reports, &mut out).map_err(|e| e.to_string())?;
        Ok(out)
    };
    if run()? != run()? {
        return Err("csv-determinism".into());
    }
    Ok("matched seeds give identical CSV".into())
}

/// Checks a duals file: sign constraints, slot monotonicity and duality gap.
pub fn validate_duals(d: &DualSolution) -> SuiteResult {
    let start = Instant::now();
    let r = check_duals(d, 1e-9).map(|_| "lambda, tau and duality gap valid".to_string());
    finish("duals-file", r, start)
}

fn finish(name: &str, r: Check, start: Instant) -> SuiteResult {
    let (passed, detail) = match r {
        Ok(d) => (true, d),
        Err(e) => (false, e),
    };
    SuiteResult {
        name: name.into(),
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// Runs one suite by name; `None` for unknown names.
pub fn run_suite(name: &str) -> Option<SuiteResult> {
    let f: fn() -> Check = match name {
        "bidmodel" => bidmodel,
        "duals" => duals,
        "stop-process" => stop_process,
        "sales-bounds" => sales_bounds,
        "mhr" => mhr,
        "token-bucket" => token_bucket,
        "scenario" => scenario,
        "determinism" => determinism,
        _ => return None,
    };
    let start = Instant::now();
    Some(finish(name, f(), start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duals::{SolverResiduals, TauEntry};

    #[test]
    fn fast_suites_pass() {
        for name in ["bidmodel", "stop-process", "sales-bounds", "mhr", "scenario"] {
            let r = run_suite(name).unwrap();
            assert!(r.passed, "{name}: {}", r.detail);
        }
        assert!(run_suite("nope").is_none());
    }

    #[test]
    fn bad_tau_is_named() {
        let d = DualSolution::new(
            LpMode::Value,
            vec![0.0],
            vec![TauEntry {
                key: ImpressionKey {
                    type_id: 0,
                    min_price: 0.0,
                },
                tau: vec![0.1, 0.4],
            }],
            vec![1.0, 0.5],
            1.0,
            0.05,
            SolverResiduals::default(),
        );
        let r = validate_duals(&d);
        assert!(!r.passed);
        assert!(r.detail.starts_with("tau-monotonicity"), "{}", r.detail);
    }
}
