//! IRS phase optimizers: closed-form TDMA alignment, exhaustive search and
//! the SCA + sequential rank-one constraint relaxation (SROCR) procedure.
//!
//! The SROCR subproblem works in normalized units. Every effective gain is
//! divided by the noise power, and each hyperbolic slack `x t >= 1` is
//! rescaled by the value of `t` at the current linearization point so that
//! the 2x2 blocks stay well conditioned.

use std::f64::consts::{LN_2, LOG2_E};

use irsma_conic::{
    max_eigpair, rank1_extract, BlockId, ConicProblem, ConicSolution, LinExpr, Relation, ScalarId, ScalarKind,
};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::ChannelState;
use crate::error::{CoreError, Result};
use crate::irs::{build_cascade, quantize, CascadeMatrix, Codebook, PhaseConfig, Resolution};
use crate::power::{state_rates, Access, StateAllocation};

/// Largest number of configurations [`exhaustive`] will enumerate.
pub const EXHAUSTIVE_CAP: u128 = 1 << 24;

/// Phases that co-phase every reflected path of user `k` with its direct
/// link. With `h_k = 0` the common phase is zero.
pub fn align_tdma(state: &ChannelState, k: usize) -> PhaseConfig {
    assert!(k < 2, "user index must be 0 or 1");
    let h = state.h[k];
    let phi0 = if h.norm() > 0.0 { h.arg() } else { 0.0 };
    let theta = (0..state.num_elements())
        .map(|n| phi0 - state.r[k][n].conj().arg() - state.g[n].arg())
        .collect();
    PhaseConfig::continuous(theta)
}

/// Fixed per-state resources and the states a phase configuration must serve.
#[derive(Debug, Clone)]
pub struct PhaseTarget {
    pub cascades: Vec<[CascadeMatrix; 2]>,
    pub allocations: Vec<StateAllocation>,
    pub access: Access,
    pub noise_power: f64,
    pub min_rate: f64,
}

impl PhaseTarget {
    pub fn new(
        states: &[ChannelState],
        allocations: &[StateAllocation],
        access: Access,
        noise_power: f64,
        min_rate: f64,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(CoreError::NoStates);
        }
        if states.len() != allocations.len() {
            return Err(CoreError::Domain("one allocation per state is required".into()));
        }
        if !(noise_power > 0.0) {
            return Err(CoreError::Domain("noise power must be positive".into()));
        }
        let n = states[0].num_elements();
        if states.iter().any(|s| s.num_elements() != n) {
            return Err(CoreError::Domain("states disagree on the IRS size".into()));
        }
        Ok(Self {
            cascades: states.iter().map(|s| [build_cascade(s, 0), build_cascade(s, 1)]).collect(),
            allocations: allocations.to_vec(),
            access,
            noise_power,
            min_rate,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.cascades[0][0].z.len() - 1
    }

    pub fn num_states(&self) -> usize {
        self.cascades.len()
    }

    /// Normalized gains `gamma_k` of every state under `phases`.
    pub fn gains(&self, phases: &PhaseConfig) -> Vec<[f64; 2]> {
        let v = phases.lifted();
        self.cascades
            .iter()
            .map(|[a, b]| [a.gain(&v) / self.noise_power, b.gain(&v) / self.noise_power])
            .collect()
    }

    /// Average over the states of the instantaneous sum rate.
    pub fn sum_rate(&self, phases: &PhaseConfig) -> f64 {
        let total: f64 = self
            .gains(phases)
            .iter()
            .zip(&self.allocations)
            .map(|(g, a)| state_rates(a, *g, self.access).iter().sum::<f64>())
            .sum();
        total / self.num_states() as f64
    }

    pub fn per_state_rates(&self, phases: &PhaseConfig) -> Vec<[f64; 2]> {
        self.gains(phases)
            .iter()
            .zip(&self.allocations)
            .map(|(g, a)| state_rates(a, *g, self.access))
            .collect()
    }
}

/// Globally best discrete configuration. Configurations are scanned in
/// lexicographic order of their codeword indices and only a strictly better
/// value replaces the incumbent, so ties resolve to the smallest phases.
pub fn exhaustive(target: &PhaseTarget, codebook: Codebook) -> Result<(PhaseConfig, f64)> {
    let n = target.num_elements();
    let bits = codebook.bits as u128 * n as u128;
    if bits > 24 {
        let configs = if bits < 128 { 1u128 << bits } else { u128::MAX };
        return Err(CoreError::SearchTooLarge { configs, cap: EXHAUSTIVE_CAP });
    }
    let size = codebook.size();
    let mut idx = vec![0usize; n];
    let mut best = PhaseConfig::from_indices(&idx, codebook);
    let mut best_value = target.sum_rate(&best);
    loop {
        // Odometer with the last element fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok((best, best_value));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < size {
                break;
            }
            idx[pos] = 0;
        }
        let cand = PhaseConfig::from_indices(&idx, codebook);
        let value = target.sum_rate(&cand);
        if value > best_value + 1e-12 * best_value.abs().max(1.0) {
            best = cand;
            best_value = value;
        }
    }
}

/// First-order expansions of the weak-user rate `log2(1 + 1/(X11 Y12 ))`
/// and the interference-free rate `log2(1 + 1/(X22 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateCoeffs {
    pub x11: f64,
    pub y12: f64,
    pub x22: f64,
    pub noise_power: f64,
    pub r1_const: f64,
    pub r1_dx: f64,
    pub r1_dy: f64,
    pub r2_const: f64,
    pub r2_dx: f64,
}

impl SurrogateCoeffs {
    pub fn r1_low(&self, x11: f64, y12: f64) -> f64 {
        self.r1_const + self.r1_dx * (x11 - self.x11) + self.r1_dy * (y12 - self.y12)
    }

    pub fn r2_low(&self, x22: f64) -> f64 {
        self.r2_const + self.r2_dx * (x22 - self.x22)
    }
}

/// Rate terms `log2(1 + 1/(x y))`, jointly convex in `(x, y)`.
pub fn weak_rate(x: f64, y: f64) -> f64 {
    (1.0 / (x * y)).ln_1p() / LN_2
}

pub fn taylor_surrogate(x11: f64, y12: f64, x22: f64, noise_power: f64) -> Result<SurrogateCoeffs> {
    if !(x11 > 0.0 && y12 > 0.0 && x22 > 0.0 && noise_power > 0.0) {
        return Err(CoreError::Domain("surrogate expansion point must be positive".into()));
    }
    let s2 = noise_power;
    Ok(SurrogateCoeffs {
        x11,
        y12,
        x22,
        noise_power,
        r1_const: weak_rate(x11, y12),
        r1_dx: -LOG2_E / (x11 + x11 * x11 * y12),
        r1_dy: -LOG2_E / (y12 + y12 * y12 * x11),
        r2_const: weak_rate(x22, s2),
        r2_dx: -LOG2_E / (x22 + x22 * x22 * s2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrocrParams {
    /// Eigenvalue-to-trace target.
    pub eps1: f64,
    /// Relative objective change that counts as converged.
    pub eps2: f64,
    pub initial_step: f64,
    pub max_iter: usize,
    pub solver_tol: f64,
    /// Finish discrete outputs with single-element codeword sweeps.
    pub polish: bool,
}

impl Default for SrocrParams {
    fn default() -> Self {
        Self { eps1: 0.999, eps2: 1e-3, initial_step: 0.1, max_iter: 30, solver_tol: 1e-7, polish: true }
    }
}

/// One rate term of one state inside the subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermKind {
    /// `log2(1 + 1/(x y))` with `y >= gamma p_interf + 1`.
    Interfered { interference_power: f64 },
    /// `weight * log2(1 + 1/x)`.
    Clean { weight: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTerm {
    pub state: usize,
    pub user: usize,
    pub kind: TermKind,
    /// Multiplier of `Tr(U M_k) / sigma^2` in `t`.
    pub t_scale: f64,
    /// Expansion point in normalized units.
    pub x: f64,
    pub y: f64,
    /// Enforce the per-state rate floor on this term.
    pub floor: bool,
}

impl LocalTerm {
    fn weight(&self) -> f64 {
        match self.kind {
            TermKind::Interfered { .. } => 1.0,
            TermKind::Clean { weight } => weight,
        }
    }

    /// Surrogate value and slopes in the unscaled slacks.
    fn expansion(&self) -> (f64, f64, f64) {
        let (x, y) = (self.x, self.y);
        let w = self.weight();
        let c = w * weak_rate(x, y);
        let dx = -w * LOG2_E / (x + x * x * y);
        let dy = match self.kind {
            TermKind::Interfered { .. } => -LOG2_E / (y + y * y * x),
            TermKind::Clean { .. } => 0.0,
        };
        (c, dx, dy)
    }
}

/// Iterate of the SROCR procedure.
#[derive(Debug, Clone)]
pub struct SrocrState {
    pub u: DMatrix<Complex64>,
    pub kappa: f64,
    pub step: f64,
    pub local: Vec<LocalTerm>,
    pub iteration: usize,
}

impl SrocrState {
    /// Iterate whose matrix and expansion points come from `phases`.
    pub fn from_phases(target: &PhaseTarget, phases: &PhaseConfig, kappa: f64, step: f64) -> Self {
        let v = phases.lifted();
        Self { u: &v * v.adjoint(), kappa, step, local: initial_terms(target, &v), iteration: 0 }
    }
}

/// Handles into a built subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemLayout {
    pub u: BlockId,
    pub hyperbolic: Vec<BlockId>,
    pub y: Vec<Option<ScalarId>>,
    /// Objective constant not represented in the linear functional.
    pub constant: f64,
    pub has_cut: bool,
}

fn gamma_scale(target: &PhaseTarget) -> f64 {
    1.0 / target.noise_power
}

/// Rate terms of every state with their linearization at `lifted`.
fn initial_terms(target: &PhaseTarget, lifted: &nalgebra::DVector<Complex64>) -> Vec<LocalTerm> {
    let inv = gamma_scale(target);
    let mut terms = Vec::new();
    for (s, (cas, a)) in target.cascades.iter().zip(&target.allocations).enumerate() {
        let mut push = |user: usize, kind: TermKind, t_scale: f64, interf: f64| {
            let z = &cas[user];
            if t_scale <= 0.0 || z.max_gain() <= 0.0 {
                return;
            }
            let gamma = z.gain(lifted) * inv;
            let gamma_ref = (z.max_gain() * inv).max(f64::MIN_POSITIVE);
            let t = (gamma.max(1e-6 * gamma_ref)) * t_scale;
            terms.push(LocalTerm {
                state: s,
                user,
                kind,
                t_scale,
                x: 1.0 / t,
                y: gamma * interf + 1.0,
                floor: target.min_rate > 0.0,
            });
        };
        if target.access.is_orthogonal() {
            let alpha = a.alpha();
            for k in 0..2 {
                if alpha[k] > 0.0 && a.p[k] > 0.0 {
                    push(k, TermKind::Clean { weight: alpha[k] }, a.p[k] / alpha[k], 0.0);
                }
            }
        } else {
            let f = a.order.first();
            let l = a.order.last();
            if a.p[f] > 0.0 {
                push(f, TermKind::Interfered { interference_power: a.p[l] }, a.p[f], a.p[l]);
            }
            if a.p[l] > 0.0 {
                push(l, TermKind::Clean { weight: 1.0 }, a.p[l], 0.0);
            }
        }
    }
    terms
}

/// Builds the convex subproblem at the current SROCR iterate.
///
/// The objective is the state average of the linearized rates. Each term
/// `x t >= 1` is the 2x2 block `[[x s, 1], [1, t / s]] >= 0` with `s` the
/// value of `t` at the expansion point. With `kappa = 0` the eigenvector cut
/// is left out.
pub fn build_subproblem(state: &SrocrState, target: &PhaseTarget) -> (ConicProblem, SubproblemLayout) {
    let dim = target.num_elements() + 1;
    let inv = gamma_scale(target);
    let weight = 1.0 / target.num_states() as f64;
    let mut prob = ConicProblem::maximize();
    let u = prob.add_hermitian_block(dim);
    for i in 0..dim {
        prob.add_constraint(LinExpr::new().entry(u, i, i, 1.0), Relation::Eq, 1.0);
    }
    let mut objective = LinExpr::new();
    let mut constant = 0.0;
    let mut hyperbolic = Vec::with_capacity(state.local.len());
    let mut ys = Vec::with_capacity(state.local.len());
    for term in &state.local {
        let z = target.cascades[term.state][term.user].z.clone();
        let s = 1.0 / term.x;
        let (c, dx, dy) = term.expansion();
        let b = prob.add_symmetric_block(2);
        prob.add_constraint(LinExpr::new().entry(b, 0, 1, 1.0), Relation::Eq, 2.0);
        // t / s <= Tr(U M) * t_scale / (sigma^2 s)
        let mut link = LinExpr::new().entry(b, 1, 1, 1.0);
        link.add_rank_one(u, -term.t_scale * inv / s, z.clone());
        prob.add_constraint(link, Relation::Le, 0.0);

        // Rate surrogate in the scaled slacks: x = B00 / s, y = y0 * ytilde.
        let y_id = match term.kind {
            TermKind::Interfered { interference_power } => {
                let y0 = term.y;
                let yid = prob.add_scalar(ScalarKind::NonNegative);
                let mut row = LinExpr::new().scalar(yid, 1.0);
                row.add_rank_one(u, -interference_power * inv / y0, z);
                prob.add_constraint(row, Relation::Ge, 1.0 / y0);
                Some(yid)
            }
            TermKind::Clean { .. } => None,
        };
        let rate_const = c - dx * term.x - dy * term.y;
        let rate = |scale: f64| {
            let mut e = LinExpr::new().entry(b, 0, 0, scale * dx / s);
            if let Some(yid) = y_id {
                e.add_scalar(yid, scale * dy * term.y);
            }
            e
        };
        if term.floor {
            prob.add_constraint(rate(1.0), Relation::Ge, target.min_rate - rate_const);
        }
        objective.add_entry(b, 0, 0, Complex64::new(weight * dx / s, 0.0));
        if let Some(yid) = y_id {
            objective.add_scalar(yid, weight * dy * term.y);
        }
        constant += weight * rate_const;
        hyperbolic.push(b);
        ys.push(y_id);
    }
    let has_cut = state.kappa > 0.0;
    if has_cut {
        let (_, e) = max_eigpair(&state.u);
        let mut cut = LinExpr::new();
        cut.add_rank_one(u, 1.0, e);
        prob.add_constraint(cut, Relation::Ge, state.kappa * dim as f64);
    }
    prob.set_objective(objective);
    (prob, SubproblemLayout { u, hyperbolic, y: ys, constant, has_cut })
}

/// Result of one SROCR run.
#[derive(Debug, Clone)]
pub struct SrocrOutcome {
    pub phases: PhaseConfig,
    /// True average sum rate of `phases`.
    pub value: f64,
    /// True average sum rate of the incumbent passed in.
    pub initial_value: f64,
    /// `kappa` after every accepted subproblem.
    pub kappa_trace: Vec<f64>,
    /// Surrogate objective after every accepted subproblem.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// Per-state rate floors had to be dropped.
    pub floors_dropped: bool,
}

impl SrocrOutcome {
    pub fn improved(&self) -> bool {
        self.value > self.initial_value
    }
}

fn snap(phases: PhaseConfig, resolution: Resolution) -> PhaseConfig {
    match resolution {
        Resolution::Continuous => phases,
        Resolution::Discrete(c) => quantize(&phases, c),
    }
}

/// Coordinate ascent over codewords: each element in turn takes its best
/// codeword with the others fixed, until a full sweep changes nothing.
pub fn polish_discrete(target: &PhaseTarget, phases: &PhaseConfig, codebook: Codebook, max_sweeps: usize) -> (PhaseConfig, f64) {
    let mut idx: Vec<usize> = phases.theta().iter().map(|t| codebook.nearest_index(*t)).collect();
    let mut best = target.sum_rate(&PhaseConfig::from_indices(&idx, codebook));
    for _ in 0..max_sweeps {
        let mut changed = false;
        for n in 0..idx.len() {
            let keep = idx[n];
            let mut choice = keep;
            for c in 0..codebook.size() {
                if c == keep {
                    continue;
                }
                idx[n] = c;
                let v = target.sum_rate(&PhaseConfig::from_indices(&idx, codebook));
                if v > best + 1e-12 * best.abs().max(1.0) {
                    best = v;
                    choice = c;
                    changed = true;
                }
            }
            idx[n] = choice;
        }
        if !changed {
            break;
        }
    }
    (PhaseConfig::from_indices(&idx, codebook), best)
}

fn finish(target: &PhaseTarget, resolution: Resolution, params: &SrocrParams, mut out: SrocrOutcome) -> SrocrOutcome {
    if let (Resolution::Discrete(cb), true) = (resolution, params.polish) {
        let (phases, value) = polish_discrete(target, &out.phases, cb, 20);
        if value > out.value {
            out.phases = phases;
            out.value = value;
        }
    }
    out
}

/// Largest rate a term could reach with every reflected path co-phased.
fn term_rate_bound(target: &PhaseTarget, t: &LocalTerm) -> f64 {
    let gamma = target.cascades[t.state][t.user].max_gain() / target.noise_power;
    match t.kind {
        TermKind::Interfered { interference_power } => weak_rate(1.0 / (gamma * t.t_scale), gamma * interference_power + 1.0),
        TermKind::Clean { weight } => weight * weak_rate(1.0 / (gamma * t.t_scale), 1.0),
    }
}

fn solve_subproblem(state: &SrocrState, target: &PhaseTarget, tol: f64) -> Option<(ConicSolution, SubproblemLayout)> {
    let (prob, layout) = build_subproblem(state, target);
    match irsma_conic::solve(&prob, tol) {
        Ok(sol) if sol.is_optimal() => Some((sol, layout)),
        _ => None,
    }
}

/// Moves the expansion points to the solved slacks.
fn relinearize(state: &mut SrocrState, sol: &ConicSolution, layout: &SubproblemLayout) {
    state.u = sol.blocks[layout.u.index()].clone();
    for (j, term) in state.local.iter_mut().enumerate() {
        let b = &sol.blocks[layout.hyperbolic[j].index()];
        let x = b[(0, 0)].re * term.x;
        if x.is_finite() && x > 0.0 {
            term.x = x;
        }
        if let Some(yid) = layout.y[j] {
            let y = sol.scalars[yid.index()] * term.y;
            if y.is_finite() && y >= 1.0 {
                term.y = y;
            }
        }
    }
}

/// SCA with sequential rank-one constraint relaxation for any access scheme.
///
/// Starting from `incumbent`, the subproblem is solved first without the
/// eigenvector cut and then with `kappa` raised after every accepted solve.
/// A failed solve halves the step. Each accepted iterate is reduced to its
/// principal eigenvector, snapped to `resolution`, and kept only if its true
/// sum rate beats the best configuration so far. Discrete results are then
/// polished with [`polish_discrete`] when `params.polish` is set.
pub fn srocr(
    target: &PhaseTarget,
    resolution: Resolution,
    incumbent: &PhaseConfig,
    params: &SrocrParams,
) -> Result<SrocrOutcome> {
    if incumbent.len() != target.num_elements() {
        return Err(CoreError::Domain("incumbent phase count must match the IRS size".into()));
    }
    let initial_value = target.sum_rate(incumbent);
    let mut out = SrocrOutcome {
        phases: incumbent.clone(),
        value: initial_value,
        initial_value,
        kappa_trace: Vec::new(),
        objective_trace: Vec::new(),
        iterations: 0,
        floors_dropped: false,
    };
    let consider = |out: &mut SrocrOutcome, cand: PhaseConfig| {
        let cand = snap(cand, resolution);
        let value = target.sum_rate(&cand);
        if value > out.value {
            out.value = value;
            out.phases = cand;
        }
    };
    let n = target.num_elements();
    if n == 0 {
        return Ok(out);
    }
    let mut state = SrocrState::from_phases(target, incumbent, 0.0, params.initial_step);
    let local = state.local.clone();
    if local.is_empty() {
        return Ok(out);
    }
    if target.num_states() == 1 && local.len() == 1 {
        // One active rate term: co-phasing that user is optimal.
        let mut state = ChannelState {
            h: [Complex64::new(0.0, 0.0); 2],
            g: nalgebra::DVector::from_element(n, Complex64::new(1.0, 0.0)),
            r: [nalgebra::DVector::zeros(n), nalgebra::DVector::zeros(n)],
            index: 0,
        };
        let z = &target.cascades[0][local[0].user].z;
        // z = [r conj(g); conj(h)] so r = z with g = 1 and h = conj(z_N).
        let k = local[0].user;
        state.h[k] = z[n].conj();
        for i in 0..n {
            state.r[k][i] = z[i];
        }
        consider(&mut out, align_tdma(&state, k));
        return Ok(finish(target, resolution, params, out));
    }

    let dim = n + 1;
    let first = match solve_subproblem(&state, target, params.solver_tol) {
        Some(s) => Some(s),
        None if target.min_rate > 0.0 => {
            out.floors_dropped = true;
            let mut any = false;
            for s in 0..target.num_states() {
                let short = state
                    .local
                    .iter()
                    .any(|t| t.state == s && term_rate_bound(target, t) < target.min_rate);
                if short {
                    any = true;
                    state.local.iter_mut().filter(|t| t.state == s).for_each(|t| t.floor = false);
                }
            }
            let retry = if any { solve_subproblem(&state, target, params.solver_tol) } else { None };
            retry.or_else(|| {
                state.local.iter_mut().for_each(|t| t.floor = false);
                solve_subproblem(&state, target, params.solver_tol)
            })
        }
        None => None,
    };
    let Some((sol, layout)) = first else {
        return Ok(finish(target, resolution, params, out));
    };
    let mut objective = sol.objective_value + layout.constant;
    relinearize(&mut state, &sol, &layout);
    let r1 = rank1_extract(&state.u);
    consider(&mut out, PhaseConfig::from_lifted(&r1.vector));
    state.kappa = (r1.ratio + state.step).min(1.0);
    out.kappa_trace.push(0.0);
    out.objective_trace.push(objective);
    out.iterations = 1;

    for _ in 1..params.max_iter {
        state.iteration += 1;
        out.iterations += 1;
        let kappa_used = state.kappa;
        match solve_subproblem(&state, target, params.solver_tol) {
            Some((sol, layout)) => {
                let value = sol.objective_value + layout.constant;
                relinearize(&mut state, &sol, &layout);
                let r1 = rank1_extract(&state.u);
                consider(&mut out, PhaseConfig::from_lifted(&r1.vector));
                out.kappa_trace.push(kappa_used);
                out.objective_trace.push(value);
                let converged = (value - objective).abs() <= params.eps2 * value.abs().max(1e-12);
                objective = value;
                state.kappa = (r1.ratio + state.step).min(1.0);
                if kappa_used >= params.eps1 && converged {
                    break;
                }
            }
            None => {
                state.step /= 2.0;
                let (lmax, _) = max_eigpair(&state.u);
                state.kappa = (lmax / dim as f64 + state.step).min(1.0);
                if state.step < 1e-9 {
                    break;
                }
            }
        }
    }
    Ok(finish(target, resolution, params, out))
}

/// SROCR under NOMA with the decoding order stored in each allocation.
pub fn srocr_noma(
    target: &PhaseTarget,
    resolution: Resolution,
    incumbent: &PhaseConfig,
    params: &SrocrParams,
) -> Result<SrocrOutcome> {
    if target.access != Access::Noma {
        return Err(CoreError::Domain("srocr_noma needs a NOMA target".into()));
    }
    srocr(target, resolution, incumbent, params)
}

/// SROCR under TDMA or FDMA with the shares stored in each allocation.
pub fn srocr_oma(
    target: &PhaseTarget,
    resolution: Resolution,
    incumbent: &PhaseConfig,
    params: &SrocrParams,
) -> Result<SrocrOutcome> {
    if !target.access.is_orthogonal() {
        return Err(CoreError::Domain("srocr_oma needs a TDMA or FDMA target".into()));
    }
    srocr(target, resolution, incumbent, params)
}
