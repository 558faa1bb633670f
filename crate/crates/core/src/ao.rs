//! Alternating optimization of power allocation and IRS phases.
//!
//! Each round first solves the power problem for the current phases and then
//! updates the phases for the new allocation. Phase updates that would lower
//! the average sum rate are undone and end the run, so the recorded trace
//! never decreases.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{CoreError, Result};
use crate::irs::{PhaseConfig, Resolution};
use crate::phase::{srocr, PhaseTarget, SrocrParams};
use crate::power::{
    dual_solve, state_rates, Access, DecodingOrder, DualMultipliers, DualOptions, DualSolution, OrderPolicy,
    PowerBudget, StateAllocation,
};

/// Offset that keeps phase-initialization streams apart from channel streams.
const PHASE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    /// Phases follow every fading state.
    Dynamic,
    /// One configuration per block of states.
    OneTime,
}

impl Adjustment {
    pub fn name(self) -> &'static str {
        match self {
            Adjustment::Dynamic => "dynamic",
            Adjustment::OneTime => "one_time",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub access: Access,
    pub adjustment: Adjustment,
    /// States per block under one-time adjustment.
    pub block_size: usize,
    /// States of a block used to design the next block's phases.
    pub samples_per_block: usize,
    pub ao_max_rounds: usize,
    /// Relative improvement below which the AO loop stops.
    pub convergence_eps: f64,
    pub resolution: Resolution,
    pub srocr: SrocrParams,
    pub dual: DualOptions,
}

impl SchemeConfig {
    pub fn new(access: Access, adjustment: Adjustment, resolution: Resolution) -> Self {
        Self {
            access,
            adjustment,
            block_size: 100,
            samples_per_block: 8,
            ao_max_rounds: 10,
            convergence_eps: 1e-2,
            resolution,
            srocr: SrocrParams::default(),
            dual: DualOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(CoreError::Domain("block size must be at least 1".into()));
        }
        if self.samples_per_block == 0 || self.samples_per_block > self.block_size {
            return Err(CoreError::Domain("samples per block must lie in 1..=block size".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(CoreError::Domain("convergence threshold must be positive".into()));
        }
        if self.ao_max_rounds == 0 {
            return Err(CoreError::Domain("at least one AO round is required".into()));
        }
        Ok(())
    }
}

/// IRS configurations over a run.
#[derive(Debug, Clone, PartialEq)]
pub enum PhasePlan {
    /// One configuration per state.
    PerState(Vec<PhaseConfig>),
    /// One configuration per user per state, as in dynamic TDMA where each
    /// user's slot has its own configuration.
    PerUser(Vec<[PhaseConfig; 2]>),
    /// One configuration per block of `block_size` consecutive states.
    PerBlock { block_size: usize, configs: Vec<PhaseConfig> },
}

impl PhasePlan {
    /// Configuration serving user `k` in state `i`.
    pub fn config(&self, i: usize, k: usize) -> &PhaseConfig {
        match self {
            PhasePlan::PerState(c) => &c[i],
            PhasePlan::PerUser(c) => &c[i][k],
            PhasePlan::PerBlock { block_size, configs } => &configs[i / block_size],
        }
    }

    /// Normalized gains of every state.
    pub fn gains(&self, states: &[ChannelState], noise_power: f64) -> Vec<[f64; 2]> {
        states
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut g = [0.0; 2];
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk = crate::irs::effective_gain(s, self.config(i, k), k, noise_power);
                }
                g
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub access: Access,
    pub adjustment: Adjustment,
    pub num_states: usize,
    pub avg_sum_rate: f64,
    pub per_user_avg_rates: [f64; 2],
    pub avg_power_used: f64,
    /// `(E[p] - P_avg) / P_avg`.
    pub power_residual: f64,
    /// `max(0, R_min - E[R_k])` per user.
    pub rate_residuals: [f64; 2],
    /// Average sum rate after each accepted round.
    pub ao_trace: Vec<f64>,
    /// States decoded `(1, 2)` and `(2, 1)`; zero for orthogonal access.
    pub chosen_orders: [usize; 2],
    pub multipliers: DualMultipliers,
    pub duality_gap: f64,
    pub rounds: usize,
    /// The last phase update lowered the objective and was undone.
    pub reverted: bool,
    pub runtime_s: f64,
}

/// Allocation with the largest share of each state.
fn dominant_allocations(sol: &DualSolution) -> Vec<StateAllocation> {
    let mut allocs = sol.allocations.clone();
    for m in &sol.mixtures {
        if let Some((_, a)) = m.parts.iter().max_by(|a, b| a.0.total_cmp(&b.0)) {
            allocs[m.state] = *a;
        }
    }
    allocs
}

/// Per-state order maximizing the sum rate at fixed powers. Ties go to the
/// order that decodes the weaker user first.
pub fn enumerate_orders(gains: &[[f64; 2]], powers: &[[f64; 2]]) -> Vec<DecodingOrder> {
    gains
        .iter()
        .zip(powers)
        .map(|(g, p)| {
            let rate = |o: DecodingOrder| {
                let a = StateAllocation { p: *p, alpha1: 0.5, order: o, value: 0.0 };
                state_rates(&a, *g, Access::Noma).iter().sum::<f64>()
            };
            let (a, b) = (rate(DecodingOrder::OneTwo), rate(DecodingOrder::TwoOne));
            if (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300) {
                DecodingOrder::by_strength(*g)
            } else if a > b {
                DecodingOrder::OneTwo
            } else {
                DecodingOrder::TwoOne
            }
        })
        .collect()
}

/// Mean instantaneous sum rate of `allocations` under `plan`.
pub fn average_sum_rate(
    states: &[ChannelState],
    allocations: &[StateAllocation],
    plan: &PhasePlan,
    access: Access,
    noise_power: f64,
) -> Result<f64> {
    if states.is_empty() {
        return Err(CoreError::NoStates);
    }
    if states.len() != allocations.len() {
        return Err(CoreError::Domain("one allocation per state is required".into()));
    }
    let gains = plan.gains(states, noise_power);
    let total: f64 = gains
        .iter()
        .zip(allocations)
        .map(|(g, a)| state_rates(a, *g, access).iter().sum::<f64>())
        .sum();
    Ok(total / states.len() as f64)
}

fn phase_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PHASE_SEED_SALT);
    rng.set_stream(stream);
    rng
}

fn random_config(seed: u64, stream: u64, n: usize, resolution: Resolution) -> PhaseConfig {
    let mut rng = phase_rng(seed, stream);
    match resolution {
        Resolution::Discrete(cb) => PhaseConfig::random_quantized(&mut rng, n, cb),
        Resolution::Continuous => {
            PhaseConfig::continuous((0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect())
        }
    }
}

fn initial_plan(states: &[ChannelState], scheme: &SchemeConfig, seed: u64) -> PhasePlan {
    let n = states.first().map_or(0, |s| s.num_elements());
    match (scheme.adjustment, scheme.access) {
        (Adjustment::Dynamic, Access::Tdma) => PhasePlan::PerUser(
            (0..states.len() as u64)
                .map(|i| {
                    let c = random_config(seed, i, n, scheme.resolution);
                    [c.clone(), c]
                })
                .collect(),
        ),
        (Adjustment::Dynamic, _) => PhasePlan::PerState(
            (0..states.len() as u64).map(|i| random_config(seed, i, n, scheme.resolution)).collect(),
        ),
        (Adjustment::OneTime, _) => {
            let blocks = states.len().div_ceil(scheme.block_size);
            PhasePlan::PerBlock {
                block_size: scheme.block_size,
                configs: (0..blocks as u64).map(|b| random_config(seed, b, n, scheme.resolution)).collect(),
            }
        }
    }
}

/// Best configuration for user `k` alone in one state.
fn single_user_config(
    state: &ChannelState,
    k: usize,
    incumbent: &PhaseConfig,
    scheme: &SchemeConfig,
    noise_power: f64,
) -> Result<PhaseConfig> {
    let alloc = StateAllocation {
        p: if k == 0 { [1.0, 0.0] } else { [0.0, 1.0] },
        alpha1: if k == 0 { 1.0 } else { 0.0 },
        order: DecodingOrder::OneTwo,
        value: 0.0,
    };
    let target = PhaseTarget::new(std::slice::from_ref(state), &[alloc], Access::Tdma, noise_power, 0.0)?;
    Ok(srocr(&target, scheme.resolution, incumbent, &scheme.srocr)?.phases)
}

/// Phase step for the current allocation.
fn update_plan(
    plan: &PhasePlan,
    states: &[ChannelState],
    allocs: &[StateAllocation],
    budget: &PowerBudget,
    scheme: &SchemeConfig,
    noise_power: f64,
) -> Result<PhasePlan> {
    match plan {
        PhasePlan::PerUser(configs) => {
            let next: Result<Vec<[PhaseConfig; 2]>> = states
                .par_iter()
                .zip(configs.par_iter())
                .map(|(s, c)| {
                    Ok([
                        single_user_config(s, 0, &c[0], scheme, noise_power)?,
                        single_user_config(s, 1, &c[1], scheme, noise_power)?,
                    ])
                })
                .collect();
            Ok(PhasePlan::PerUser(next?))
        }
        PhasePlan::PerState(configs) => {
            let next: Result<Vec<PhaseConfig>> = states
                .par_iter()
                .zip(allocs.par_iter())
                .zip(configs.par_iter())
                .map(|((s, a), c)| {
                    let target =
                        PhaseTarget::new(std::slice::from_ref(s), &[*a], scheme.access, noise_power, budget.min_rate)?;
                    Ok(srocr(&target, scheme.resolution, c, &scheme.srocr)?.phases)
                })
                .collect();
            Ok(PhasePlan::PerState(next?))
        }
        PhasePlan::PerBlock { block_size, configs } => {
            let b = *block_size;
            let blocks = configs.len();
            let next: Result<Vec<PhaseConfig>> = (0..blocks)
                .into_par_iter()
                .map(|blk| {
                    if blk == 0 {
                        return Ok(configs[0].clone());
                    }
                    // Design from the previous block's sampled states and its
                    // average per-user resources.
                    let lo = (blk - 1) * b;
                    let hi = (lo + b).min(states.len());
                    let len = hi - lo;
                    let m = scheme.samples_per_block.min(len);
                    let picks: Vec<usize> = (0..m).map(|j| lo + j * len / m).collect();
                    let mut mean_p = [0.0; 2];
                    let mut mean_alpha = 0.0;
                    for a in &allocs[lo..hi] {
                        mean_p[0] += a.p[0] / len as f64;
                        mean_p[1] += a.p[1] / len as f64;
                        mean_alpha += a.alpha1 / len as f64;
                    }
                    let sampled: Vec<ChannelState> = picks.iter().map(|&i| states[i].clone()).collect();
                    let design_allocs: Vec<StateAllocation> = if scheme.access.is_orthogonal() {
                        vec![StateAllocation { p: mean_p, alpha1: mean_alpha, order: DecodingOrder::OneTwo, value: 0.0 }; m]
                    } else {
                        let gains: Vec<[f64; 2]> = picks
                            .iter()
                            .map(|&i| {
                                let s = &states[i];
                                let c = &configs[blk - 1];
                                [
                                    crate::irs::effective_gain(s, c, 0, noise_power),
                                    crate::irs::effective_gain(s, c, 1, noise_power),
                                ]
                            })
                            .collect();
                        enumerate_orders(&gains, &vec![mean_p; m])
                            .into_iter()
                            .map(|order| StateAllocation { p: mean_p, alpha1: 0.5, order, value: 0.0 })
                            .collect()
                    };
                    let target = PhaseTarget::new(&sampled, &design_allocs, scheme.access, noise_power, budget.min_rate)?;
                    Ok(srocr(&target, scheme.resolution, &configs[blk], &scheme.srocr)?.phases)
                })
                .collect();
            Ok(PhasePlan::PerBlock { block_size: b, configs: next? })
        }
    }
}

fn check_trace(trace: &[f64]) -> Result<()> {
    for (round, w) in trace.windows(2).enumerate() {
        if w[1] < w[0] - 1e-9 * w[0].abs().max(1.0) {
            return Err(CoreError::Monotonicity { round: round + 1, previous: w[0], current: w[1] });
        }
    }
    Ok(())
}

/// Runs the AO loop for any access scheme and returns the result together
/// with the final phases.
pub fn run_ao(
    states: &[ChannelState],
    budget: &PowerBudget,
    scheme: &SchemeConfig,
    noise_power: f64,
    seed: u64,
) -> Result<(ExperimentResult, PhasePlan)> {
    let start = Instant::now();
    if states.is_empty() {
        return Err(CoreError::NoStates);
    }
    scheme.validate()?;
    budget.validate()?;
    let mut plan = initial_plan(states, scheme, seed);
    let solve = |plan: &PhasePlan| {
        let gains = plan.gains(states, noise_power);
        dual_solve(&gains, budget, scheme.access, &OrderPolicy::Best, &scheme.dual)
    };
    let mut sol = solve(&plan)?;
    let mut trace = vec![sol.primal_value];
    let mut reverted = false;
    let mut rounds = 1;
    let has_irs = states[0].num_elements() > 0;
    while has_irs && rounds < scheme.ao_max_rounds {
        let allocs = dominant_allocations(&sol);
        let next_plan = update_plan(&plan, states, &allocs, budget, scheme, noise_power)?;
        if next_plan == plan {
            break;
        }
        let next_sol = match solve(&next_plan) {
            Ok(s) => s,
            Err(CoreError::RateInfeasible { .. }) => {
                reverted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        rounds += 1;
        let prev = *trace.last().expect("trace starts nonempty");
        if next_sol.primal_value < prev {
            reverted = true;
            break;
        }
        plan = next_plan;
        sol = next_sol;
        trace.push(sol.primal_value);
        if (sol.primal_value - prev) <= scheme.convergence_eps * prev.abs() {
            break;
        }
    }
    check_trace(&trace)?;

    let mut chosen_orders = [0usize; 2];
    if scheme.access == Access::Noma {
        for a in dominant_allocations(&sol) {
            chosen_orders[a.order.first()] += 1;
        }
    }
    let result = ExperimentResult {
        access: scheme.access,
        adjustment: scheme.adjustment,
        num_states: states.len(),
        avg_sum_rate: sol.primal_value,
        per_user_avg_rates: sol.avg_rates,
        avg_power_used: sol.avg_power,
        power_residual: sol.power_residual,
        rate_residuals: sol.rate_residuals,
        ao_trace: trace,
        chosen_orders,
        multipliers: sol.multipliers,
        duality_gap: (sol.dual_value - sol.primal_value).abs() / sol.dual_value.abs().max(1e-300),
        rounds,
        reverted,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok((result, plan))
}

/// AO for NOMA.
pub fn run_ao_noma(
    states: &[ChannelState],
    budget: &PowerBudget,
    scheme: &SchemeConfig,
    noise_power: f64,
    seed: u64,
) -> Result<ExperimentResult> {
    if scheme.access != Access::Noma {
        return Err(CoreError::Domain("run_ao_noma needs NOMA access".into()));
    }
    Ok(run_ao(states, budget, scheme, noise_power, seed)?.0)
}

/// AO for TDMA and FDMA.
pub fn run_ao_oma(
    states: &[ChannelState],
    budget: &PowerBudget,
    scheme: &SchemeConfig,
    noise_power: f64,
    seed: u64,
) -> Result<ExperimentResult> {
    if !scheme.access.is_orthogonal() {
        return Err(CoreError::Domain("run_ao_oma needs TDMA or FDMA access".into()));
    }
    Ok(run_ao(states, budget, scheme, noise_power, seed)?.0)
}
