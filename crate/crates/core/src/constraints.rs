//! Call-out rate limits: the time-average ledger, token buckets and the
//! impression arrival clock.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Token bucket with continuous refill. Starts full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBucket {
    capacity: f64,
    rate: f64,
    level: f64,
    last_update: f64,
}

impl TokenBucket {
    /// `capacity` may be infinite (no burst limit).
    pub fn new(capacity: f64, rate: f64) -> Result<Self> {
        if !(capacity > 1.0) {
            return Err(param("sigma", format!("bucket size {capacity} must exceed 1")));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(param("rate", format!("token rate {rate} must be finite and >= 0")));
        }
        Ok(Self {
            capacity,
            rate,
            level: capacity,
            last_update: 0.0,
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Adds `rate * (now - last_update)` tokens, capped at capacity.
    pub fn refill(&mut self, now: f64) -> Result<()> {
        if now < self.last_update {
            return Err(Error::TimeRegression {
                now,
                last: self.last_update,
            });
        }
        if self.capacity.is_finite() {
            self.level = (self.level + self.rate * (now - self.last_update)).min(self.capacity);
        }
        self.last_update = now;
        Ok(())
    }

    /// Refills, then takes one token if at least one is available.
    pub fn try_consume(&mut self, now: f64) -> Result<bool> {
        self.refill(now)?;
        if self.level >= 1.0 {
            if self.capacity.is_finite() {
                self.level -= 1.0;
            }
            debug_assert!(self.level >= 0.0 && self.level <= self.capacity);
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

/// Time-average limit: network `i` may receive at most `rho_i * m` of the
/// first `m` impressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLedger {
    rho: Vec<f64>,
    attempted: Vec<u64>,
    granted: Vec<u64>,
    seen: u64,
}

impl RateLedger {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if let Some(r) = rho.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(param("rho", format!("rate {r} outside [0, 1]")));
        }
        let n = rho.len();
        Ok(Self {
            rho,
            attempted: vec![0; n],
            granted: vec![0; n],
            seen: 0,
        })
    }

    /// Counts the arriving impression.
    pub fn begin_impression(&mut self) {
        self.seen += 1;
    }

    pub fn impressions(&self) -> u64 {
        self.seen
    }

    fn allowance(&self, i: usize) -> f64 {
        let cap = self.rho[i] * self.seen as f64;
        // absorb rounding in rho * m so that e.g. 0.1 * 30 does not admit a
        // fourth grant at m = 30
        cap - 1e-9 * cap.max(1.0) - self.granted[i] as f64
    }

    pub fn available(&self, i: usize) -> bool {
        self.allowance(i) > 0.0
    }

    /// Unused allowance `rho_i m - granted_i`.
    pub fn remaining(&self, i: usize) -> f64 {
        self.rho[i] * self.seen as f64 - self.granted[i] as f64
    }

    pub fn try_consume(&mut self, i: usize) -> bool {
        self.attempted[i] += 1;
        let ok = self.available(i);
        if ok {
            self.granted[i] += 1;
        }
        ok
    }

    pub fn granted(&self) -> &[u64] {
        &self.granted
    }

    pub fn attempted(&self) -> &[u64] {
        &self.attempted
    }
}

/// Impression arrival law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArrivalProcess {
    /// One impression per time unit, at times 1, 2, 3, ...
    Uniform,
    /// Exponential inter-arrival gaps with the given mean.
    Poisson { mean_gap: f64 },
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        match self {
            ArrivalProcess::Poisson { mean_gap } if !(*mean_gap > 0.0 && mean_gap.is_finite()) => {
                Err(param("arrival.mean_gap", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn mean_gap(&self) -> f64 {
        match self {
            ArrivalProcess::Uniform => 1.0,
            ArrivalProcess::Poisson { mean_gap } => *mean_gap,
        }
    }
}

/// Running clock over an arrival process.
#[derive(Debug, Clone)]
pub struct ArrivalClock {
    process: ArrivalProcess,
    gap: Option<Exp<f64>>,
    now: f64,
}

impl ArrivalClock {
    pub fn new(process: ArrivalProcess) -> Result<Self> {
        process.validate()?;
        let gap = match process {
            ArrivalProcess::Uniform => None,
            ArrivalProcess::Poisson { mean_gap } => {
                Some(Exp::new(1.0 / mean_gap).map_err(|e| param("arrival.mean_gap", e.to_string()))?)
            }
        };
        Ok(Self { process, gap, now: 0.0 })
    }

    pub fn process(&self) -> ArrivalProcess {
        self.process
    }

    /// Time of the next arrival.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.now += match &self.gap {
            None => 1.0,
            Some(e) => e.sample(rng),
        };
        self.now
    }
}

/// Capacity as seen by a policy at decision time.
pub trait CapacityView {
    fn networks(&self) -> usize;
    /// Whether a call-out to `i` would be granted now.
    fn available(&self, i: usize) -> bool;
    /// Remaining bandwidth of `i`, for ordering.
    fn remaining(&self, i: usize) -> f64;
}

/// Every network always has capacity.
#[derive(Debug, Clone, Copy)]
pub struct Unlimited(pub usize);

impl CapacityView for Unlimited {
    fn networks(&self) -> usize {
        self.0
    }

    fn available(&self, _: usize) -> bool {
        true
    }

    fn remaining(&self, _: usize) -> f64 {
        f64::INFINITY
    }
}

/// Which limit the simulator enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    TimeAverage,
    TokenBucket,
}

/// Per-replication constraint state.
#[derive(Debug, Clone)]
pub enum Limiter {
    Ledger(RateLedger),
    Buckets { buckets: Vec<TokenBucket>, now: f64 },
}

impl Limiter {
    pub fn ledger(rho: Vec<f64>) -> Result<Self> {
        RateLedger::new(rho).map(Limiter::Ledger)
    }

    pub fn buckets(buckets: Vec<TokenBucket>) -> Self {
        Limiter::Buckets { buckets, now: 0.0 }
    }

    /// Registers an arrival at time `now`.
    pub fn begin_impression(&mut self, now: f64) -> Result<()> {
        match self {
            Limiter::Ledger(l) => {
                l.begin_impression();
                Ok(())
            }
            Limiter::Buckets { buckets, now: t } => {
                *t = now;
                buckets.iter_mut().try_for_each(|b| b.refill(now))
            }
        }
    }

    pub fn try_consume(&mut self, i: usize) -> Result<bool> {
        match self {
            Limiter::Ledger(l) => Ok(l.try_consume(i)),
            Limiter::Buckets { buckets, now } => buckets[i].try_consume(*now),
        }
    }
}

impl CapacityView for Limiter {
    fn networks(&self) -> usize {
        match self {
            Limiter::Ledger(l) => l.rho.len(),
            Limiter::Buckets { buckets, .. } => buckets.len(),
        }
    }

    fn available(&self, i: usize) -> bool {
        match self {
            Limiter::Ledger(l) => l.available(i),
            Limiter::Buckets { buckets, .. } => buckets[i].level() >= 1.0,
        }
    }

    fn remaining(&self, i: usize) -> f64 {
        match self {
            Limiter::Ledger(l) => l.remaining(i),
            Limiter::Buckets { buckets, .. } => buckets[i].level(),
        }
    }
}

/// Passes each attempted call-out through the buckets; denied attempts are
/// dropped. Returns the granted networks in attempt order.
pub fn convert_attempts(attempts: &[usize], buckets: &mut [TokenBucket], now: f64) -> Result<Vec<usize>> {
    let mut granted = Vec::with_capacity(attempts.len());
    for &i in attempts {
        if buckets[i].try_consume(now)? {
            granted.push(i);
        }
    }
    Ok(granted)
}

/// Length of the start-up period `ceil(max_i sigma_i / rho_i)` in time
/// units. Buckets with infinite size or zero rate contribute nothing.
pub fn warmup_skip(buckets: &[TokenBucket]) -> f64 {
    buckets
        .iter()
        .filter(|b| b.capacity().is_finite() && b.rate() > 0.0)
        .map(|b| (b.capacity() / b.rate()).ceil())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bucket_basics() {
        let mut b = TokenBucket::new(5.0, 0.0).unwrap();
        assert!(b.try_consume(0.0).unwrap());
        assert_eq!(b.level(), 4.0);
        let mut b = TokenBucket::new(5.0, 0.1).unwrap();
        for _ in 0..5 {
            assert!(b.try_consume(0.0).unwrap());
        }
        assert!(!b.try_consume(0.0).unwrap());
        assert!(!b.try_consume(5.0).unwrap());
        assert!((b.level() - 0.5).abs() < 1e-12);
        assert!(matches!(b.try_consume(1.0), Err(Error::TimeRegression { .. })));
        assert!(TokenBucket::new(1.0, 1.0).is_err());
    }

    #[test]
    fn bucket_grant_fraction_tracks_rate() {
        let mut b = TokenBucket::new(5.0, 0.5).unwrap();
        let steps = 10_000;
        let mut grants = 0;
        for t in 1..=steps {
            if b.try_consume(t as f64).unwrap() {
                grants += 1;
            }
            assert!(b.level() >= 0.0 && b.level() <= 5.0);
        }
        let frac = grants as f64 / steps as f64;
        assert!((frac - 0.5).abs() < 1e-3, "{frac}");
    }

    #[test]
    fn ledger_examples() {
        for (rho, expect) in [(1.0, 100), (0.0, 0), (0.1, 10), (0.3, 30)] {
            let mut l = RateLedger::new(vec![rho]).unwrap();
            let mut grants = 0;
            for _ in 0..100 {
                l.begin_impression();
                if l.try_consume(0) {
                    grants += 1;
                }
                assert!(l.granted()[0] as f64 <= rho * l.impressions() as f64 + 1.0);
            }
            assert_eq!(grants, expect, "rho {rho}");
        }
    }

    #[test]
    fn poisson_gap_mean() {
        let mut clock = ArrivalClock::new(ArrivalProcess::Poisson { mean_gap: 0.003 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut last = 0.0;
        for _ in 0..n {
            last = clock.advance(&mut rng);
        }
        let mean = last / n as f64;
        assert!((mean / 0.003 - 1.0).abs() < 0.01, "{mean}");
        let mut u = ArrivalClock::new(ArrivalProcess::Uniform).unwrap();
        assert_eq!(u.advance(&mut rng), 1.0);
        assert_eq!(u.advance(&mut rng), 2.0);
    }

    #[test]
    fn warmup() {
        let b = |s, r| TokenBucket::new(s, r).unwrap();
        assert_eq!(warmup_skip(&[b(5.0, 0.5)]), 10.0);
        assert_eq!(warmup_skip(&[b(5.0, 0.5), b(10.0, 0.1)]), 100.0);
        assert_eq!(warmup_skip(&[b(f64::INFINITY, 0.5)]), 0.0);
    }

    #[test]
    fn unlimited_bucket_never_denies() {
        let mut buckets = vec![TokenBucket::new(f64::INFINITY, 0.01).unwrap(); 2];
        for t in 1..1000 {
            let g = convert_attempts(&[0, 1], &mut buckets, t as f64).unwrap();
            assert_eq!(g, vec![0, 1]);
        }
    }
}
