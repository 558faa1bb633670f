//! Per-state power, time and bandwidth allocation and the dual multiplier search.
//!
//! For fixed multipliers `(lambda, delta, mu)` every fading state solves
//!
//! ```text
//! max (1 + delta) R1 + (1 + mu) R2 - lambda (p1 + p2)   s.t.  p >= 0,  p1 + p2 <= P_peak
//! ```
//!
//! exactly. The multipliers are then tuned so the average power and minimum
//! average rate constraints hold.

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    Noma,
    Tdma,
    Fdma,
}

impl Access {
    pub fn is_orthogonal(self) -> bool {
        !matches!(self, Access::Noma)
    }

    pub fn name(self) -> &'static str {
        match self {
            Access::Noma => "NOMA",
            Access::Tdma => "TDMA",
            Access::Fdma => "FDMA",
        }
    }
}

/// SIC decoding order. `OneTwo` decodes user 1 first, so user 1 sees
/// interference from user 2 and user 2 is interference free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecodingOrder {
    OneTwo,
    TwoOne,
}

impl DecodingOrder {
    pub const ALL: [DecodingOrder; 2] = [DecodingOrder::OneTwo, DecodingOrder::TwoOne];

    /// Index of the user decoded first.
    pub fn first(self) -> usize {
        match self {
            DecodingOrder::OneTwo => 0,
            DecodingOrder::TwoOne => 1,
        }
    }

    pub fn last(self) -> usize {
        1 - self.first()
    }

    /// Order that decodes the weaker user first; ties decode user 1 first.
    pub fn by_strength(gains: [f64; 2]) -> Self {
        if gains[0] <= gains[1] {
            DecodingOrder::OneTwo
        } else {
            DecodingOrder::TwoOne
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualMultipliers {
    pub lambda: f64,
    pub delta: f64,
    pub mu: f64,
}

impl DualMultipliers {
    pub fn new(lambda: f64, delta: f64, mu: f64) -> Self {
        Self { lambda, delta, mu }
    }

    pub fn weights(&self) -> [f64; 2] {
        [1.0 + self.delta, 1.0 + self.mu]
    }

    fn is_valid(&self) -> bool {
        self.lambda >= 0.0 && self.delta >= 0.0 && self.mu >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    /// Average power `P_avg` in watts.
    pub avg_power: f64,
    /// Peak power `P_peak` in watts.
    pub peak_power: f64,
    /// Minimum average rate per user in bit/s/Hz.
    pub min_rate: f64,
}

impl PowerBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.avg_power > 0.0 && self.avg_power <= self.peak_power) {
            return Err(CoreError::Domain(format!(
                "need 0 < average power <= peak power, got {} and {}",
                self.avg_power, self.peak_power
            )));
        }
        if !(self.min_rate >= 0.0) {
            return Err(CoreError::Domain("minimum rate must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateAllocation {
    pub p: [f64; 2],
    /// Resource fraction of user 1 under orthogonal access.
    pub alpha1: f64,
    pub order: DecodingOrder,
    /// Per-state Lagrangian value at the multipliers used.
    pub value: f64,
}

impl StateAllocation {
    pub fn zero(order: DecodingOrder) -> Self {
        Self { p: [0.0, 0.0], alpha1: 0.5, order, value: 0.0 }
    }

    pub fn total_power(&self) -> f64 {
        self.p[0] + self.p[1]
    }

    pub fn alpha(&self) -> [f64; 2] {
        [self.alpha1, 1.0 - self.alpha1]
    }
}

fn oma_rate(alpha: f64, gain: f64, p: f64) -> f64 {
    if alpha <= 0.0 || p <= 0.0 {
        0.0
    } else {
        alpha * (gain * p / alpha).ln_1p() / LN_2
    }
}

/// Instantaneous rates `(R1, R2)`.
pub fn state_rates(alloc: &StateAllocation, gains: [f64; 2], access: Access) -> [f64; 2] {
    if access.is_orthogonal() {
        let a = alloc.alpha();
        return [oma_rate(a[0], gains[0], alloc.p[0]), oma_rate(a[1], gains[1], alloc.p[1])];
    }
    let f = alloc.order.first();
    let l = alloc.order.last();
    let mut r = [0.0; 2];
    r[f] = (gains[f] * alloc.p[f] / (gains[f] * alloc.p[l] + 1.0)).ln_1p() / LN_2;
    r[l] = (gains[l] * alloc.p[l]).ln_1p() / LN_2;
    r
}

pub fn lagrangian(alloc: &StateAllocation, gains: [f64; 2], duals: &DualMultipliers, access: Access) -> f64 {
    let r = state_rates(alloc, gains, access);
    let w = duals.weights();
    w[0] * r[0] + w[1] * r[1] - duals.lambda * alloc.total_power()
}

/// `a` beats `b`: higher value, then lower total power, then lower `p1`.
fn better(a: &StateAllocation, b: &StateAllocation) -> bool {
    let tol = 1e-12 * (1.0 + a.value.abs().max(b.value.abs()));
    if a.value > b.value + tol {
        return true;
    }
    if a.value < b.value - tol {
        return false;
    }
    let (pa, pb) = (a.total_power(), b.total_power());
    let ptol = 1e-12 * (1.0 + pa.max(pb));
    if pa < pb - ptol {
        return true;
    }
    if pa > pb + ptol {
        return false;
    }
    a.p[0] < b.p[0] - ptol
}

fn pick_best(cands: impl IntoIterator<Item = StateAllocation>) -> StateAllocation {
    let mut it = cands.into_iter();
    let mut best = it.next().expect("at least one candidate");
    for c in it {
        if better(&c, &best) {
            best = c;
        }
    }
    best
}

/// Single-user water level `w / (lambda ln 2) - 1/g` clamped to `[lo, hi]`.
fn water_fill(w: f64, g: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    if g <= 0.0 {
        return lo;
    }
    if lambda <= 0.0 {
        return hi;
    }
    (w / (lambda * LN_2) - 1.0 / g).clamp(lo, hi)
}

/// Exact per-state NOMA allocation for a fixed decoding order.
///
/// Writing `P = p1 + p2` and `q` for the power of the user decoded last, the
/// value splits into a concave term in `P` and a term in `q` whose only
/// stationary point is `q* = (w_l/g_f - w_f/g_l) / (w_f - w_l)`. The optimum
/// therefore sits at `q in {0, P, q*}` with `P` at the matching water level,
/// the peak, or zero; every such pair is evaluated.
pub fn noma_state_opt(gains: [f64; 2], duals: &DualMultipliers, peak: f64, order: DecodingOrder) -> StateAllocation {
    let f = order.first();
    let l = order.last();
    let w = duals.weights();
    let (gf, gl) = (gains[f], gains[l]);
    let (wf, wl) = (w[f], w[l]);
    let lam = duals.lambda;

    let q_star = if gf > 0.0 && gl > 0.0 && (duals.delta - duals.mu).abs() >= 1e-12 {
        let q = (wl / gf - wf / gl) / (wf - wl);
        (q.is_finite() && q > 0.0 && q < peak).then_some(q)
    } else {
        None
    };

    let mut totals = vec![
        0.0,
        peak,
        water_fill(wf, gf, lam, 0.0, peak),
        water_fill(wl, gl, lam, 0.0, peak),
    ];
    if let Some(q) = q_star {
        totals.push(q);
        totals.push(water_fill(wf, gf, lam, q, peak));
    }

    let make = |total: f64, q: f64| {
        let mut p = [0.0; 2];
        p[l] = q;
        p[f] = (total - q).max(0.0);
        let mut a = StateAllocation { p, alpha1: 0.5, order, value: 0.0 };
        a.value = lagrangian(&a, gains, duals, Access::Noma);
        a
    };
    let mut cands = Vec::with_capacity(totals.len() * 3);
    for &t in &totals {
        cands.push(make(t, 0.0));
        cands.push(make(t, t));
        if let Some(q) = q_star {
            cands.push(make(t, q.min(t)));
        }
    }
    pick_best(cands)
}

/// NOMA allocation with the better of the two decoding orders.
pub fn noma_state_best(gains: [f64; 2], duals: &DualMultipliers, peak: f64) -> StateAllocation {
    let preferred = DecodingOrder::by_strength(gains);
    let a = noma_state_opt(gains, duals, peak, preferred);
    let other = match preferred {
        DecodingOrder::OneTwo => DecodingOrder::TwoOne,
        DecodingOrder::TwoOne => DecodingOrder::OneTwo,
    };
    let b = noma_state_opt(gains, duals, peak, other);
    let tol = 1e-12 * (1.0 + a.value.abs().max(b.value.abs()));
    if b.value > a.value + tol {
        b
    } else {
        a
    }
}

/// Best single-slot value `w log2(1 + g c) - lambda c` and its power `c`.
fn slot_value(w: f64, g: f64, lambda: f64) -> (f64, f64) {
    let c = water_fill(w, g, lambda, 0.0, f64::INFINITY);
    if !c.is_finite() {
        return (f64::INFINITY, c);
    }
    (w * (g * c).ln_1p() / LN_2 - lambda * c, c)
}

/// Exact per-state OMA allocation.
///
/// With `c_k = p_k / alpha_k` the problem is a perspective program, jointly
/// concave in `(p, alpha)`. Its optimum gives the whole resource to one user
/// at that user's water level (clamped to the peak), or, when the peak binds
/// with multiplier `nu > 0`, splits the resource so both users reach equal
/// slot values at price `lambda + nu` and the peak holds with equality.
pub fn oma_state_opt(gains: [f64; 2], duals: &DualMultipliers, peak: f64) -> StateAllocation {
    let w = duals.weights();
    let lam = duals.lambda;
    let order = DecodingOrder::OneTwo;
    let eval = |p: [f64; 2], alpha1: f64| {
        let mut a = StateAllocation { p, alpha1, order, value: 0.0 };
        a.value = lagrangian(&a, gains, duals, Access::Fdma);
        a
    };

    let mut cands = vec![eval([0.0, 0.0], 0.5)];
    let c1 = water_fill(w[0], gains[0], lam, 0.0, peak);
    let c2 = water_fill(w[1], gains[1], lam, 0.0, peak);
    cands.push(eval([c1, 0.0], 1.0));
    cands.push(eval([0.0, c2], 0.0));
    cands.push(eval([peak, 0.0], 1.0));
    cands.push(eval([0.0, peak], 0.0));

    // Stationary split without a binding peak: equal slot values at lambda.
    if lam > 0.0 && gains[0] > 0.0 && gains[1] > 0.0 {
        let (v1, u1) = slot_value(w[0], gains[0], lam);
        let (v2, u2) = slot_value(w[1], gains[1], lam);
        let scale = v1.abs().max(v2.abs()).max(1e-300);
        if (v1 - v2).abs() <= 1e-6 * scale && u1 > 0.0 && u2 > 0.0 {
            // alpha1 u1 + (1 - alpha1) u2 <= peak.
            let (lo, hi) = if (u1 - u2).abs() < 1e-300 {
                (0.0, 1.0)
            } else if u1 > u2 {
                (0.0, ((peak - u2) / (u1 - u2)).clamp(0.0, 1.0))
            } else {
                (((peak - u2) / (u1 - u2)).clamp(0.0, 1.0), 1.0)
            };
            if lo <= hi && (u1.min(u2) <= peak) {
                let a1 = 0.5 * (lo + hi);
                cands.push(eval([a1 * u1, (1.0 - a1) * u2], a1));
            }
        }
    }

    // Peak-binding split.
    let free1 = water_fill(w[0], gains[0], lam, 0.0, f64::INFINITY);
    let free2 = water_fill(w[1], gains[1], lam, 0.0, f64::INFINITY);
    if gains[0] > 0.0 && gains[1] > 0.0 && free1.max(free2) > peak {
        for lam_eff in peak_binding_prices(w, gains, lam, peak) {
            let (_, u1) = slot_value(w[0], gains[0], lam_eff);
            let (_, u2) = slot_value(w[1], gains[1], lam_eff);
            if (u1 - u2).abs() <= 1e-300 {
                continue;
            }
            let a1 = (peak - u2) / (u1 - u2);
            if (0.0..=1.0).contains(&a1) {
                cands.push(eval([a1 * u1, (1.0 - a1) * u2], a1));
            }
        }
    }
    pick_best(cands)
}

/// Prices `lambda' >= lambda` where both slot values coincide.
fn peak_binding_prices(w: [f64; 2], g: [f64; 2], lam: f64, peak: f64) -> Vec<f64> {
    let h = |x: f64| slot_value(w[0], g[0], x).0 - slot_value(w[1], g[1], x).0;
    // Above this price neither user transmits and both values vanish.
    let top = (w[0] * g[0]).max(w[1] * g[1]) / LN_2;
    // Below this price both water levels exceed the peak.
    let floor = (w[0] / (LN_2 * (peak + 1.0 / g[0]))).min(w[1] / (LN_2 * (peak + 1.0 / g[1])));
    let start = lam.max(floor * 1e-3).max(top * 1e-15);
    if !(start < top) {
        return Vec::new();
    }
    let n = 64;
    let ratio = (top / start).powf(1.0 / n as f64);
    let mut roots = Vec::new();
    let mut x0 = start;
    let mut h0 = h(x0);
    for _ in 0..n {
        let x1 = x0 * ratio;
        let h1 = h(x1);
        if h0 == 0.0 {
            roots.push(x0);
        } else if h0 * h1 < 0.0 {
            let (mut a, mut b, mut ha) = (x0, x1, h0);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                let hm = h(m);
                if hm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (hm < 0.0) == (ha < 0.0) {
                    a = m;
                    ha = hm;
                } else {
                    b = m;
                }
                if b - a <= 1e-15 * b {
                    break;
                }
            }
            roots.push(0.5 * (a + b));
        }
        x0 = x1;
        h0 = h1;
    }
    roots
}

/// Exhaustive grid evaluation of the per-state Lagrangian; a test oracle.
///
/// NOMA scans `(p1, p2)` on the simplex with `resolution` steps per axis.
/// OMA scans `(alpha1, p1)` and sets `p2` to its exact single-user optimum
/// given the remaining peak budget.
pub fn grid_oracle(
    gains: [f64; 2],
    duals: &DualMultipliers,
    peak: f64,
    access: Access,
    order: DecodingOrder,
    resolution: usize,
) -> StateAllocation {
    assert!(resolution >= 1);
    let step = peak / resolution as f64;
    let mut best: Option<StateAllocation> = None;
    let mut consider = |a: StateAllocation| {
        if best.as_ref().is_none_or(|b| better(&a, b)) {
            best = Some(a);
        }
    };
    if access.is_orthogonal() {
        let w = duals.weights();
        for ia in 0..=resolution {
            let a1 = ia as f64 / resolution as f64;
            for i in 0..=resolution {
                let p1 = if a1 > 0.0 { i as f64 * step } else { 0.0 };
                let room = (peak - p1).max(0.0);
                let a2 = 1.0 - a1;
                let p2 = if a2 > 0.0 { a2 * water_fill(w[1], gains[1], duals.lambda, 0.0, room / a2) } else { 0.0 };
                let mut a = StateAllocation { p: [p1, p2], alpha1: a1, order, value: 0.0 };
                a.value = lagrangian(&a, gains, duals, access);
                consider(a);
                if a1 == 0.0 {
                    break;
                }
            }
        }
    } else {
        for i in 0..=resolution {
            for j in 0..=(resolution - i) {
                let mut a = StateAllocation { p: [i as f64 * step, j as f64 * step], alpha1: 0.5, order, value: 0.0 };
                a.value = lagrangian(&a, gains, duals, access);
                consider(a);
            }
        }
    }
    best.expect("grid is nonempty")
}

/// How NOMA decoding orders are chosen per state.
#[derive(Debug, Clone, PartialEq)]
pub enum OrderPolicy {
    /// Use the order maximizing each state's Lagrangian.
    Best,
    Fixed(Vec<DecodingOrder>),
}

pub fn solve_state(
    gains: [f64; 2],
    duals: &DualMultipliers,
    peak: f64,
    access: Access,
    order: Option<DecodingOrder>,
) -> StateAllocation {
    if access.is_orthogonal() {
        oma_state_opt(gains, duals, peak)
    } else {
        match order {
            Some(o) => noma_state_opt(gains, duals, peak, o),
            None => noma_state_best(gains, duals, peak),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    pub subgradient_iters: usize,
    /// Base step `a` of the diminishing rule `a / sqrt(t)`.
    pub step_scale: f64,
    pub tol_rate: f64,
    pub max_sweeps: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            subgradient_iters: 40,
            step_scale: 0.1,
            tol_rate: 1e-4,
            max_sweeps: 40,
        }
    }
}

/// A state time-shared between several allocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mixture {
    pub state: usize,
    /// `(fraction of the state's duration, allocation)`; fractions sum to one.
    pub parts: Vec<(f64, StateAllocation)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualSolution {
    pub multipliers: DualMultipliers,
    pub allocations: Vec<StateAllocation>,
    /// States whose allocation is time-shared; all others use `allocations`.
    pub mixtures: Vec<Mixture>,
    pub avg_power: f64,
    pub avg_rates: [f64; 2],
    /// Average sum rate of the primal allocation.
    pub primal_value: f64,
    /// Dual function value at the returned multipliers.
    pub dual_value: f64,
    /// `(E[p] - P_avg) / P_avg`.
    pub power_residual: f64,
    /// `max(0, R_min - E[R_k])`.
    pub rate_residuals: [f64; 2],
    /// Products of each multiplier with its constraint slack.
    pub complementary_slackness: [f64; 3],
    pub evaluations: usize,
}

impl DualSolution {
    /// Per-state rates including time sharing.
    pub fn state_rates(&self, gains: &[[f64; 2]], access: Access) -> Vec<[f64; 2]> {
        let mut rates: Vec<[f64; 2]> = self
            .allocations
            .iter()
            .zip(gains)
            .map(|(a, g)| state_rates(a, *g, access))
            .collect();
        for m in &self.mixtures {
            let mut mixed = [0.0; 2];
            for (w, a) in &m.parts {
                let r = state_rates(a, gains[m.state], access);
                mixed[0] += w * r[0];
                mixed[1] += w * r[1];
            }
            rates[m.state] = mixed;
        }
        rates
    }
}

struct Evaluation {
    allocs: Vec<StateAllocation>,
    avg_power: f64,
    avg_rates: [f64; 2],
    avg_value: f64,
}

struct Problem<'a> {
    gains: &'a [[f64; 2]],
    budget: PowerBudget,
    access: Access,
    orders: &'a OrderPolicy,
}

impl Problem<'_> {
    fn eval(&self, duals: &DualMultipliers) -> Evaluation {
        let peak = self.budget.peak_power;
        let allocs: Vec<StateAllocation> = self
            .gains
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let order = match self.orders {
                    OrderPolicy::Best => None,
                    OrderPolicy::Fixed(o) => Some(o[i]),
                };
                solve_state(*g, duals, peak, self.access, order)
            })
            .collect();
        self.summarize(allocs)
    }

    fn summarize(&self, allocs: Vec<StateAllocation>) -> Evaluation {
        let f = allocs.len() as f64;
        let mut power = 0.0;
        let mut rates = [0.0; 2];
        let mut value = 0.0;
        for (a, g) in allocs.iter().zip(self.gains) {
            power += a.total_power();
            let r = state_rates(a, *g, self.access);
            rates[0] += r[0];
            rates[1] += r[1];
            value += a.value;
        }
        Evaluation {
            allocs,
            avg_power: power / f,
            avg_rates: [rates[0] / f, rates[1] / f],
            avg_value: value / f,
        }
    }

    fn dual_value(&self, duals: &DualMultipliers, e: &Evaluation) -> f64 {
        e.avg_value + duals.lambda * self.budget.avg_power - (duals.delta + duals.mu) * self.budget.min_rate
    }
}

/// Tracks evaluations for reporting.
struct Counter(usize);

/// Finds `lambda` so that `E[p] <= P_avg` with equality when `lambda > 0`.
/// Returns `(lambda_feasible, lambda_infeasible)`; the second is `None` when
/// `lambda = 0` already satisfies the budget.
fn solve_lambda(p: &Problem, duals: DualMultipliers, rel_tol: f64, count: &mut Counter) -> (f64, Option<f64>) {
    let target = p.budget.avg_power;
    let at = |lam: f64, count: &mut Counter| {
        count.0 += 1;
        p.eval(&DualMultipliers { lambda: lam, ..duals }).avg_power
    };
    if at(0.0, count) <= target {
        return (0.0, None);
    }
    let mut lo = 0.0;
    let mut hi = duals.lambda.max(1e-12);
    while at(hi, count) > target {
        lo = hi;
        hi *= 4.0;
        if hi > 1e30 {
            break;
        }
    }
    if lo == 0.0 {
        lo = hi;
        while lo > 1e-300 {
            lo *= 0.25;
            if at(lo, count) > target {
                break;
            }
            hi = lo;
        }
    }
    for _ in 0..200 {
        if hi - lo <= rel_tol * hi {
            break;
        }
        let mid = if lo > 0.0 && hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if at(mid, count) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi, Some(lo))
}

/// Smallest multiplier (for user `k`) with `E[R_k] >= R_min`, others fixed.
/// Returns `None` when the floor cannot be reached.
fn solve_rate_multiplier(p: &Problem, duals: DualMultipliers, k: usize, rel_tol: f64, count: &mut Counter) -> Option<f64> {
    let target = p.budget.min_rate;
    let set = |x: f64| {
        let mut d = duals;
        if k == 0 {
            d.delta = x;
        } else {
            d.mu = x;
        }
        d
    };
    let at = |x: f64, count: &mut Counter| {
        count.0 += 1;
        p.eval(&set(x)).avg_rates[k]
    };
    if target <= 0.0 || at(0.0, count) >= target {
        return Some(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0f64.max(if k == 0 { duals.delta } else { duals.mu });
    while at(hi, count) < target {
        lo = hi;
        hi *= 4.0;
        if hi > 1e9 {
            return None;
        }
    }
    for _ in 0..200 {
        if hi - lo <= rel_tol * hi.max(1e-9) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if at(mid, count) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// Largest `min(E[R1], E[R2])` attainable within the power budget.
pub fn max_min_rate(gains: &[[f64; 2]], budget: &PowerBudget, access: Access, orders: &OrderPolicy) -> f64 {
    let relaxed = PowerBudget { min_rate: 0.0, ..*budget };
    let p = Problem { gains, budget: relaxed, access, orders };
    let mut count = Counter(0);
    // Weights (1 + delta, 1 + mu) proportional to (s, 1 - s).
    let value = |s: f64, count: &mut Counter| {
        let s = s.clamp(1e-9, 1.0 - 1e-9);
        let base = DualMultipliers { lambda: 1.0 / budget.avg_power, delta: 0.0, mu: 0.0 };
        let scale = 1.0 / s.min(1.0 - s);
        let d = DualMultipliers { delta: s * scale - 1.0, mu: (1.0 - s) * scale - 1.0, ..base };
        let (lam, _) = solve_lambda(&p, d, 1e-8, count);
        let e = p.eval(&DualMultipliers { lambda: lam, ..d });
        e.avg_rates[0].min(e.avg_rates[1])
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = value(c, &mut count);
    let mut fd = value(d, &mut count);
    for _ in 0..40 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = value(c, &mut count);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = value(d, &mut count);
        }
    }
    fc.max(fd)
}

/// Solves the dual of the average-rate maximization for fixed phases.
///
/// A projected subgradient run on `(lambda, delta, mu)` provides the starting
/// point; coordinate-wise bisection then enforces complementary slackness of
/// each constraint to `opts` tolerances. When the power constraint lands
/// between two allocations of the same multiplier, the switching states are
/// time-shared so the average power meets the budget exactly.
pub fn dual_solve(
    gains: &[[f64; 2]],
    budget: &PowerBudget,
    access: Access,
    orders: &OrderPolicy,
    opts: &DualOptions,
) -> Result<DualSolution> {
    budget.validate()?;
    if gains.is_empty() {
        return Err(CoreError::NoStates);
    }
    if let OrderPolicy::Fixed(o) = orders {
        if o.len() != gains.len() {
            return Err(CoreError::Domain("one decoding order per state is required".into()));
        }
    }
    let p = Problem { gains, budget: *budget, access, orders };
    let mut count = Counter(0);

    // Projected subgradient.
    let lambda0 = 1.0 / budget.avg_power;
    let mut duals = DualMultipliers::new(lambda0, 0.1, 0.1);
    let mut best = (f64::INFINITY, duals);
    let rate_scale = budget.min_rate.max(1.0);
    for t in 1..=opts.subgradient_iters {
        let e = p.eval(&duals);
        count.0 += 1;
        let dv = p.dual_value(&duals, &e);
        if dv < best.0 {
            best = (dv, duals);
        }
        let step = opts.step_scale / (t as f64).sqrt();
        let g_lam = (budget.avg_power - e.avg_power) / budget.avg_power;
        let g_del = (e.avg_rates[0] - budget.min_rate) / rate_scale;
        let g_mu = (e.avg_rates[1] - budget.min_rate) / rate_scale;
        duals.lambda = (duals.lambda * (1.0 - step * g_lam.clamp(-1.0, 1.0) * 10.0)).max(0.0);
        duals.delta = (duals.delta - step * g_del).max(0.0);
        duals.mu = (duals.mu - step * g_mu).max(0.0);
        debug_assert!(duals.is_valid());
    }
    duals = best.1;
    if budget.min_rate <= 0.0 {
        duals.delta = 0.0;
        duals.mu = 0.0;
    }

    // Coordinate polish: rate multipliers first, then the power price, until
    // every constraint holds.
    for _ in 0..opts.max_sweeps {
        let prev = duals;
        if budget.min_rate > 0.0 {
            for k in 0..2 {
                let Some(x) = solve_rate_multiplier(&p, duals, k, 1e-10, &mut count) else {
                    return Err(CoreError::RateInfeasible {
                        required: budget.min_rate,
                        attainable: max_min_rate(gains, budget, access, orders),
                    });
                };
                if k == 0 {
                    duals.delta = x;
                } else {
                    duals.mu = x;
                }
            }
        }
        duals.lambda = solve_lambda(&p, duals, 1e-12, &mut count).0;
        if budget.min_rate <= 0.0 {
            break;
        }
        let e = p.eval(&duals);
        count.0 += 1;
        let floors_ok = e.avg_rates.iter().all(|r| *r >= budget.min_rate - opts.tol_rate);
        let change = ((duals.lambda - prev.lambda).abs() / prev.lambda.max(1e-300))
            .max((duals.delta - prev.delta).abs())
            .max((duals.mu - prev.mu).abs());
        if floors_ok && change <= 1e-6 {
            break;
        }
    }

    let base = p.eval(&duals);
    count.0 += 1;
    let dual_value = p.dual_value(&duals, &base);
    let (mixtures, avg_power, avg_rates) = recover_primal(&p, &duals, &base, &mut count);

    let primal_value = avg_rates[0] + avg_rates[1];
    Ok(DualSolution {
        multipliers: duals,
        allocations: base.allocs,
        mixtures,
        avg_power,
        avg_rates,
        primal_value,
        dual_value,
        power_residual: (avg_power - budget.avg_power) / budget.avg_power,
        rate_residuals: [
            (budget.min_rate - avg_rates[0]).max(0.0),
            (budget.min_rate - avg_rates[1]).max(0.0),
        ],
        complementary_slackness: [
            duals.lambda * (budget.avg_power - avg_power),
            duals.delta * (avg_rates[0] - budget.min_rate),
            duals.mu * (avg_rates[1] - budget.min_rate),
        ],
        evaluations: count.0,
    })
}

fn differs(a: &StateAllocation, b: &StateAllocation, peak: f64) -> bool {
    (a.p[0] - b.p[0]).abs() > 1e-9 * peak
        || (a.p[1] - b.p[1]).abs() > 1e-9 * peak
        || (a.alpha1 - b.alpha1).abs() > 1e-9
        || a.order != b.order
}

/// Recovers a primal point from near-optimal multipliers.
///
/// With finitely many states the per-state maximizers can jump at the
/// optimal multipliers, so the allocation at the multipliers alone may miss
/// the power budget or a rate floor. Policies found at small perturbations of
/// the multipliers are then time-shared; the sharing fractions come from a
/// small LP that maximizes the average sum rate subject to the budget and the
/// floors. When the LP has no solution the unperturbed policy is kept.
fn recover_primal(
    p: &Problem,
    duals: &DualMultipliers,
    base: &Evaluation,
    count: &mut Counter,
) -> (Vec<Mixture>, f64, [f64; 2]) {
    let budget = p.budget;
    let peak = budget.peak_power;
    let f = p.gains.len();
    let power_ok = |power: f64| {
        power <= budget.avg_power * (1.0 + 1e-9) && (duals.lambda <= 0.0 || power >= budget.avg_power * (1.0 - 1e-9))
    };
    let rates_ok = |rates: [f64; 2]| rates.iter().all(|r| *r >= budget.min_rate - 1e-9);
    if power_ok(base.avg_power) && rates_ok(base.avg_rates) {
        return (Vec::new(), base.avg_power, base.avg_rates);
    }

    let mut steps = vec![vec![0.0]; 3];
    for (j, active) in [duals.lambda > 0.0, duals.delta > 0.0 || budget.min_rate > 0.0, duals.mu > 0.0 || budget.min_rate > 0.0]
        .into_iter()
        .enumerate()
    {
        if active {
            for eps in [1e-8, 1e-5, 1e-3, 1e-2, 5e-2] {
                steps[j].push(-eps);
                steps[j].push(eps);
            }
        }
    }
    let mut policies = vec![(base.allocs.clone(), base.avg_power, base.avg_rates)];
    for level in 0..5 {
        for &a in &steps[0][..(steps[0].len().min(1 + 2 * (level + 1)))] {
            for &b in &steps[1][..(steps[1].len().min(1 + 2 * (level + 1)))] {
                for &c in &steps[2][..(steps[2].len().min(1 + 2 * (level + 1)))] {
                    let at_level = |x: f64, v: &Vec<f64>| v.iter().position(|y| *y == x).map_or(0, |i| (i + 1) / 2);
                    let top = at_level(a, &steps[0]).max(at_level(b, &steps[1])).max(at_level(c, &steps[2]));
                    if top != level + 1 {
                        continue;
                    }
                    let d = DualMultipliers {
                        lambda: duals.lambda * (1.0 + a),
                        delta: (duals.delta + b * (1.0 + duals.delta)).max(0.0),
                        mu: (duals.mu + c * (1.0 + duals.mu)).max(0.0),
                    };
                    let e = p.eval(&d);
                    count.0 += 1;
                    policies.push((e.allocs, e.avg_power, e.avg_rates));
                }
            }
        }
    }

    use irsma_conic::{ConicProblem, LinExpr, Relation, ScalarKind};
    let mut lp = ConicProblem::maximize();
    let mut objective = LinExpr::new();
    let mut simplex = LinExpr::new();
    let mut power_row = LinExpr::new();
    let mut rate_rows = [LinExpr::new(), LinExpr::new()];
    let mut vars = Vec::with_capacity(policies.len());
    for (_, power, rates) in &policies {
        let v = lp.add_scalar(ScalarKind::NonNegative);
        objective.add_scalar(v, rates[0] + rates[1]);
        simplex.add_scalar(v, 1.0);
        power_row.add_scalar(v, *power);
        rate_rows[0].add_scalar(v, rates[0]);
        rate_rows[1].add_scalar(v, rates[1]);
        vars.push(v);
    }
    lp.set_objective(objective);
    lp.add_constraint(simplex, Relation::Eq, 1.0);
    let relation = if duals.lambda > 0.0 { Relation::Eq } else { Relation::Le };
    lp.add_constraint(power_row, relation, budget.avg_power);
    if budget.min_rate > 0.0 {
        let [r0, r1] = rate_rows;
        lp.add_constraint(r0, Relation::Ge, budget.min_rate);
        lp.add_constraint(r1, Relation::Ge, budget.min_rate);
    }
    let sol = match irsma_conic::solve(&lp, 1e-9) {
        Ok(s) if s.is_optimal() => s,
        _ => return (Vec::new(), base.avg_power, base.avg_rates),
    };
    let raw: Vec<f64> = vars.iter().map(|v| sol.scalars[v.index()].max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let rows: Vec<[f64; 4]> = policies.iter().map(|(_, power, r)| [1.0, *power, r[0], r[1]]).collect();
    let chosen = sparsify(raw.iter().map(|w| w / total).collect(), &rows);
    let norm: f64 = chosen.iter().map(|(w, _)| w).sum();

    let mut mixtures = Vec::new();
    let mut power = 0.0;
    let mut rates = [0.0; 2];
    for i in 0..f {
        let mut parts: Vec<(f64, StateAllocation)> = Vec::new();
        for (w, j) in &chosen {
            let a = policies[*j].0[i];
            match parts.iter_mut().find(|(_, b)| !differs(b, &a, peak)) {
                Some(part) => part.0 += w / norm,
                None => parts.push((w / norm, a)),
            }
        }
        for (w, a) in &parts {
            power += w * a.total_power();
            let r = state_rates(a, p.gains[i], p.access);
            rates[0] += w * r[0];
            rates[1] += w * r[1];
        }
        if parts.len() > 1 || differs(&parts[0].1, &base.allocs[i], peak) {
            mixtures.push(Mixture { state: i, parts });
        }
    }
    let ff = f as f64;
    (mixtures, power / ff, [rates[0] / ff, rates[1] / ff])
}

/// Reduces a convex combination to at most four support points while
/// keeping every weighted row sum (and so the objective) unchanged.
fn sparsify(mut weights: Vec<f64>, rows: &[[f64; 4]]) -> Vec<(f64, usize)> {
    const M: usize = 4;
    loop {
        let support: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] > 1e-12).collect();
        if support.len() <= M {
            return support.into_iter().map(|j| (weights[j], j)).collect();
        }
        let cols = &support[..M + 1];
        let a = DMatrix::from_fn(M + 1, M + 1, |r, c| if r < M { rows[cols[c]][r] } else { 0.0 });
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let k = (0..M + 1)
            .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .expect("nonempty");
        let mut dir: Vec<f64> = v_t.row(k).iter().copied().collect();
        if dir.iter().all(|d| *d <= 0.0) {
            dir.iter_mut().for_each(|d| *d = -*d);
        }
        let step = cols
            .iter()
            .zip(&dir)
            .filter(|(_, d)| **d > 0.0)
            .map(|(j, d)| weights[*j] / d)
            .fold(f64::INFINITY, f64::min);
        let mut dropped = false;
        for (j, d) in cols.iter().zip(&dir) {
            weights[*j] -= step * d;
            if weights[*j] <= 1e-12 * (1.0 + step * d.abs()) && !dropped {
                weights[*j] = 0.0;
                dropped = true;
            }
        }
        for j in cols {
            weights[*j] = weights[*j].max(0.0);
        }
        if !dropped {
            // Numerically flat direction: drop the lightest point.
            let j = *cols.iter().min_by(|a, b| weights[**a].total_cmp(&weights[**b])).expect("nonempty");
            weights[j] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expensive_power_gives_zero_allocation() {
        let d = DualMultipliers::new(1e6, 0.3, 0.7);
        for order in DecodingOrder::ALL {
            let a = noma_state_opt([1e3, 20.0], &d, 1.0, order);
            assert_eq!(a.p, [0.0, 0.0]);
        }
        let a = oma_state_opt([1e3, 20.0], &d, 1.0);
        assert_eq!(a.p, [0.0, 0.0]);
        assert_eq!(a.alpha1, 0.5);
    }

    #[test]
    fn single_user_water_filling() {
        let d = DualMultipliers::new(1.0, 0.0, 0.0);
        let a = noma_state_opt([0.0, 10.0], &d, 5.0, DecodingOrder::OneTwo);
        assert_eq!(a.p[0], 0.0);
        assert_relative_eq!(a.p[1], 1.0 / LN_2 - 0.1, epsilon = 1e-12);
    }

    #[test]
    fn rate_examples() {
        let zero = StateAllocation::zero(DecodingOrder::OneTwo);
        assert_eq!(state_rates(&zero, [3.0, 4.0], Access::Noma), [0.0, 0.0]);
        let oma = StateAllocation { p: [1.0, 0.0], alpha1: 1.0, order: DecodingOrder::OneTwo, value: 0.0 };
        assert_relative_eq!(state_rates(&oma, [1.0, 5.0], Access::Tdma)[0], 1.0, epsilon = 1e-15);
        assert_eq!(state_rates(&oma, [1.0, 5.0], Access::Tdma)[1], 0.0);
    }

    #[test]
    fn equal_gains_telescope() {
        let g = 7.0;
        for split in [0.0, 0.3, 0.9] {
            let a = StateAllocation { p: [split, 1.0 - split], alpha1: 0.5, order: DecodingOrder::OneTwo, value: 0.0 };
            let r = state_rates(&a, [g, g], Access::Noma);
            assert_relative_eq!(r[0] + r[1], (1.0 + g).log2(), epsilon = 1e-12);
        }
    }

    #[test]
    fn order_by_strength_decodes_weak_user_first() {
        assert_eq!(DecodingOrder::by_strength([1.0, 5.0]), DecodingOrder::OneTwo);
        assert_eq!(DecodingOrder::by_strength([5.0, 1.0]), DecodingOrder::TwoOne);
        assert_eq!(DecodingOrder::by_strength([2.0, 2.0]), DecodingOrder::OneTwo);
    }

    #[test]
    fn zero_price_uses_peak() {
        let d = DualMultipliers::new(0.0, 0.0, 0.0);
        let a = noma_state_best([3.0, 8.0], &d, 2.0);
        assert_relative_eq!(a.total_power(), 2.0, epsilon = 1e-12);
        let b = oma_state_opt([3.0, 8.0], &d, 2.0);
        assert_relative_eq!(b.total_power(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_refinement_never_decreases() {
        let d = DualMultipliers::new(0.4, 0.2, 0.5);
        for access in [Access::Noma, Access::Fdma] {
            let coarse = grid_oracle([4.0, 9.0], &d, 3.0, access, DecodingOrder::OneTwo, 100);
            let fine = grid_oracle([4.0, 9.0], &d, 3.0, access, DecodingOrder::OneTwo, 400);
            assert!(fine.value >= coarse.value - 1e-12);
        }
    }

    #[test]
    fn budget_validation() {
        assert!(PowerBudget { avg_power: 2.0, peak_power: 1.0, min_rate: 0.0 }.validate().is_err());
        assert!(PowerBudget { avg_power: 1.0, peak_power: 1.0, min_rate: -1.0 }.validate().is_err());
        assert!(PowerBudget { avg_power: 1.0, peak_power: 2.0, min_rate: 0.5 }.validate().is_ok());
    }
}
