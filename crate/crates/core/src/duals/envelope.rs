//! Upper envelope of the slot lines `y = rho_l * v - tau_l` and `y = 0`.
//!
//! The envelope assigns every bid level `v` the slot `l(v)` it would be
//! placed in by the per-type LP; `M + 1` means "no slot".

use serde::{Deserialize, Serialize};

use crate::bidmodel::SlotProfile;

/// Slot maximizing `rho_l v - tau_l` among slots where that is strictly
/// positive; ties go to the smaller slot index, and `M + 1` when no slot
/// qualifies.
pub fn best_slot(v: f64, tau: &[f64], slots: &SlotProfile) -> usize {
    let mut best = slots.virtual_slot();
    let mut best_val = 0.0;
    for (k, (&rho, &t)) in slots.discounts().iter().zip(tau).enumerate() {
        let val = rho * v - t;
        if val > best_val {
            best_val = val;
            best = k + 1;
        }
    }
    best
}

/// `max(0, max_l rho_l v - tau_l)`: the per-unit gain of bid level `v`.
pub fn envelope_gain(v: f64, tau: &[f64], slots: &SlotProfile) -> f64 {
    slots
        .discounts()
        .iter()
        .zip(tau)
        .map(|(rho, t)| rho * v - t)
        .fold(0.0, f64::max)
}

/// One constant piece of `l(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: f64,
    /// Whether `start` itself belongs to this piece.
    pub inclusive: bool,
    pub slot: usize,
}

/// Piecewise-constant slot map `v -> l(v)` for `v >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFunction {
    pieces: Vec<Piece>,
}

impl SlotFunction {
    /// Walks the upper envelope from `v = 0` to the right, jumping to the
    /// earliest line that overtakes the current one.
    pub fn new(tau: &[f64], slots: &SlotProfile) -> Self {
        let m = slots.len();
        assert_eq!(tau.len(), m, "one tau per slot");
        let virt = slots.virtual_slot();
        let slope = |l: usize| slots.discount(l);
        let icpt = |l: usize| if l == virt { 0.0 } else { -tau[l - 1] };

        let mut pieces = vec![Piece {
            start: 0.0,
            inclusive: true,
            slot: best_slot(0.0, tau, slots),
        }];
        let mut current = pieces[0].slot;
        let mut at = 0.0_f64;
        loop {
            let mut next: Option<(f64, usize)> = None;
            for l in 1..=m {
                if l == current || slope(l) <= slope(current) || slope(l) <= 0.0 {
                    continue;
                }
                let x = ((icpt(current) - icpt(l)) / (slope(l) - slope(current))).max(at);
                let take = match next {
                    None => true,
                    Some((bx, bl)) => {
                        x < bx || (x == bx && (slope(l) > slope(bl) || (slope(l) == slope(bl) && l < bl)))
                    }
                };
                if take {
                    next = Some((x, l));
                }
            }
            let Some((x, l)) = next else { break };
            // leaving the zero line needs a strictly positive value
            let inclusive = current != virt;
            if x == at && pieces.last().is_some_and(|p| p.start == x && p.inclusive == inclusive) {
                pieces.last_mut().expect("non-empty").slot = l;
            } else {
                pieces.push(Piece {
                    start: x,
                    inclusive,
                    slot: l,
                });
            }
            current = l;
            at = x;
        }
        Self { pieces }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn slot_at(&self, v: f64) -> usize {
        let mut slot = self.pieces[0].slot;
        for p in &self.pieces[1..] {
            if v > p.start || (p.inclusive && v == p.start) {
                slot = p.slot;
            } else {
                break;
            }
        }
        slot
    }

    /// Interior breakpoints of the envelope.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces[1..].iter().map(|p| p.start).collect()
    }
}

/// Smallest bid at which slot 1 wins the envelope:
/// `max_{l : rho_1 != rho_l} (tau_1 - tau_l) / (rho_1 - rho_l)`, where the
/// maximum includes the virtual slot with `rho = tau = 0`.
pub fn v1_threshold(tau: &[f64], slots: &SlotProfile) -> f64 {
    let r1 = slots.discount(1);
    let t1 = tau[0];
    let mut best = t1 / r1;
    for l in 2..=slots.len() {
        let rl = slots.discount(l);
        if rl != r1 {
            best = best.max((t1 - tau[l - 1]) / (r1 - rl));
        }
    }
    best
}
