//! Self-checks against slow independent oracles at fixed seeds.

use std::fmt;

use irsma_conic::{max_eigpair, rank1_extract, solve, ConicProblem, LinExpr, Relation, SolveStatus};
use irsma_core::channel::{
    sample_rayleigh, sample_rician, ChannelModel, ChannelState, FadingParams, ScenarioGeometry,
};
use irsma_core::irs::{Codebook, PhaseConfig, Resolution};
use irsma_core::phase::{exhaustive, srocr, PhaseTarget, SrocrParams};
use irsma_core::power::{
    grid_oracle, lagrangian, noma_state_opt, oma_state_opt, Access, DecodingOrder, DualMultipliers,
    StateAllocation,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Power,
    Phase,
    Sdp,
    Channel,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Power, Suite::Phase, Suite::Sdp, Suite::Channel];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Power => "power",
            Suite::Phase => "phase",
            Suite::Sdp => "sdp",
            Suite::Channel => "channel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    /// Worst observed deviation in the check's own units.
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn within(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self { name: name.into(), residual, tolerance, passed: residual <= tolerance }
    }

    fn at_least(name: impl Into<String>, value: f64, floor: f64) -> Self {
        Self { name: name.into(), residual: value, tolerance: floor, passed: value >= floor }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{verdict} {:<44} {:>12.4e}  (limit {:.1e})", self.name, self.residual, self.tolerance)
    }
}

pub fn run_suite(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Power => power_checks(1000, 2024),
        Suite::Phase => phase_checks(50, 2024),
        Suite::Sdp => sdp_checks(50, 2024),
        Suite::Channel => channel_checks(100_000, 2024),
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Refines a coarse NOMA grid maximizer on a local grid of half-width `step`,
/// also probing the sum-power boundary.
fn refine_noma(coarse: &StateAllocation, gains: [f64; 2], duals: &DualMultipliers, peak: f64, step: f64) -> f64 {
    let fine = 100;
    let mut best = coarse.value;
    for i in 0..=fine {
        let p1 = (coarse.p[0] - step + 2.0 * step * i as f64 / fine as f64).clamp(0.0, peak);
        for j in 0..=fine + 1 {
            let p2 = if j > fine { peak - p1 } else { (coarse.p[1] - step + 2.0 * step * j as f64 / fine as f64).clamp(0.0, peak - p1) };
            let a = StateAllocation { p: [p1, p2], ..*coarse };
            best = best.max(lagrangian(&a, gains, duals, Access::Noma));
        }
    }
    best
}

/// Golden-section maximization of a concave function on `[lo, hi]`.
fn golden_max(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..50 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    let (x, fx) = if fa > fb { (a, fa) } else { (b, fb) };
    // Endpoints cover optima on the boundary.
    [(lo, f(lo)), (hi, f(hi)), (x, fx)].into_iter().fold((x, fx), |best, c| if c.1 > best.1 { c } else { best })
}

/// OMA Lagrangian maximized by nested golden-section searches over
/// `(alpha1, p1, p2)`. The objective is jointly concave, so every partial
/// maximum is concave in the remaining variables.
fn nested_oma(gains: [f64; 2], duals: &DualMultipliers, peak: f64) -> f64 {
    let value = |a1: f64, p1: f64, p2: f64| {
        let a = StateAllocation { p: [p1, p2], alpha1: a1, order: DecodingOrder::OneTwo, value: 0.0 };
        lagrangian(&a, gains, duals, Access::Fdma)
    };
    let over_p1 = |a1: f64| golden_max(|p1| golden_max(|p2| value(a1, p1, p2), 0.0, peak - p1).1, 0.0, peak).1;
    golden_max(over_p1, 0.0, 1.0).1
}

/// Per-state solvers against search oracles over `draws` random dual points.
///
/// NOMA uses a grid refined locally; OMA uses the grid together with nested
/// golden-section search. The residual is the relative shortfall of the exact
/// solver below the oracle, which must never beat it by more than rounding.
pub fn power_checks(draws: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut noma_gap, mut oma_gap, mut beaten) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..draws {
        let peak = log_uniform(&mut rng, 0.1, 10.0);
        let gains = [log_uniform(&mut rng, 1e-2, 1e3), log_uniform(&mut rng, 1e-2, 1e3)];
        let duals = DualMultipliers::new(log_uniform(&mut rng, 1e-2, 1e2) / peak, 2.0 * rng.random::<f64>(), 2.0 * rng.random::<f64>());
        let scale = |v: f64| v.abs().max(1.0);
        for order in DecodingOrder::ALL {
            let exact = noma_state_opt(gains, &duals, peak, order);
            let grid = grid_oracle(gains, &duals, peak, Access::Noma, order, 100);
            let refined = refine_noma(&grid, gains, &duals, peak, peak / 100.0);
            beaten = beaten.max((refined - exact.value) / scale(exact.value));
            noma_gap = noma_gap.max((exact.value - refined) / scale(exact.value));
        }
        let exact = oma_state_opt(gains, &duals, peak);
        let grid = grid_oracle(gains, &duals, peak, Access::Fdma, DecodingOrder::OneTwo, 100);
        let refined = grid.value.max(nested_oma(gains, &duals, peak));
        beaten = beaten.max((refined - exact.value) / scale(exact.value));
        oma_gap = oma_gap.max((exact.value - refined) / scale(exact.value));
    }
    vec![
        Check::within(format!("NOMA per-state optimum vs refined grid ({draws} draws)"), noma_gap, 1e-3),
        Check::within(format!("OMA per-state optimum vs golden search ({draws} draws)"), oma_gap, 1e-3),
        Check::within("oracle never beats exact solver", beaten, 1e-9),
    ]
}

fn unit_state(rng: &mut ChaCha8Rng, n: usize) -> ChannelState {
    let mut c = || sample_rayleigh(rng, 1.0);
    ChannelState {
        h: [c(), c()],
        g: DVector::from_fn(n, |_, _| c()),
        r: [DVector::from_fn(n, |_, _| c()), DVector::from_fn(n, |_, _| c())],
        index: 0,
    }
}

/// Mean ratio of quantized SROCR to exhaustive search, and the largest amount
/// by which SROCR exceeds the exhaustive optimum (which must be zero).
pub fn phase_ratio(access: Access, states: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cb = Codebook::new(2);
    let (mut ratio, mut excess) = (0.0, 0.0f64);
    for _ in 0..states {
        let s = unit_state(&mut rng, 4);
        let alloc = match access {
            Access::Noma => StateAllocation {
                p: [0.7, 0.3],
                alpha1: 0.5,
                order: DecodingOrder::by_strength([s.h[0].norm_sqr(), s.h[1].norm_sqr()]),
                value: 0.0,
            },
            _ => StateAllocation { p: [0.4, 0.6], alpha1: 0.5, order: DecodingOrder::OneTwo, value: 0.0 },
        };
        let t = PhaseTarget::new(&[s], &[alloc], access, 1.0, 0.0).expect("valid target");
        let (_, best) = exhaustive(&t, cb).expect("256 configurations fit the cap");
        let init = PhaseConfig::random_quantized(&mut rng, 4, cb);
        let out = srocr(&t, Resolution::Discrete(cb), &init, &SrocrParams::default()).expect("solver runs");
        ratio += out.value / best;
        excess = excess.max(out.value - best);
    }
    (ratio / states as f64, excess)
}

pub fn phase_checks(states: usize, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    for (access, label) in [(Access::Noma, "NOMA"), (Access::Fdma, "OMA")] {
        let (ratio, excess) = phase_ratio(access, states, seed);
        out.push(Check::at_least(format!("{label} SROCR / exhaustive, N=4 L=2"), ratio, 0.95));
        out.push(Check::within(format!("{label} SROCR above exhaustive"), excess.max(0.0), 1e-12));
    }
    out
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// `max <C, X>` subject to `diag(X) = 1`, `X >= 0`.
pub fn maxcut_problem(c: &DMatrix<f64>) -> ConicProblem {
    let n = c.nrows();
    let mut p = ConicProblem::maximize();
    let x = p.add_symmetric_block(n);
    let mut obj = LinExpr::new();
    obj.add_dense_real(x, c);
    p.set_objective(obj);
    for i in 0..n {
        p.add_constraint(LinExpr::new().entry(x, i, i, 1.0), Relation::Eq, 1.0);
    }
    p
}

/// First-order oracle for [`maxcut_problem`]: projected ascent on a
/// factorization `X = V V^T`, bracketed by the dual bound
/// `sum(y) + n max(0, lambda_max(C - diag(y)))`.
pub fn maxcut_oracle(c: &DMatrix<f64>) -> (f64, f64) {
    let n = c.nrows();
    let mut v = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.1 * ((i * 7 + j * 3) % 5) as f64 });
    let normalize = |v: &mut DMatrix<f64>| {
        for mut row in v.row_iter_mut() {
            let nrm = row.norm();
            row /= nrm;
        }
    };
    normalize(&mut v);
    let step = 0.5 / (c.norm() + 1e-12);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for iter in 0..200_000 {
        v += c * &v * (2.0 * step);
        normalize(&mut v);
        if iter % 100 == 0 {
            let cx = c * (&v * v.transpose());
            let y = DVector::from_fn(n, |i, _| cx[(i, i)]);
            let shift = (c - DMatrix::from_diagonal(&y)).symmetric_eigen().eigenvalues.max().max(0.0);
            best = (best.0.max(cx.trace()), best.1.min(y.sum() + shift * n as f64));
            if best.1 - best.0 <= 1e-7 * (1.0 + best.0.abs()) {
                break;
            }
        }
    }
    best
}

fn real(m: DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn sdp_checks(random: usize, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut p = ConicProblem::maximize();
    let x = p.add_symmetric_block(2);
    p.set_objective(LinExpr::new().entry(x, 0, 0, 1.0).entry(x, 1, 1, 2.0));
    p.add_constraint(LinExpr::new().entry(x, 0, 0, 1.0).entry(x, 1, 1, 1.0), Relation::Eq, 1.0);
    let s = solve(&p, 1e-9).expect("well-formed");
    let xb = s.real_block(0);
    let err = (s.objective_value - 2.0).abs().max((xb - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).amax());
    out.push(Check::within("trace program, C = diag(1, 2)", err, 1e-6));
    let s = solve(&maxcut_problem(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])), 1e-9).expect("well-formed");
    let err = (s.objective_value - 2.0).abs().max((s.real_block(0) - DMatrix::from_element(2, 2, 1.0)).amax());
    out.push(Check::within("unit diagonal, C = [[0,1],[1,0]]", err, 1e-6));
    let mut worst = 0.0f64;
    for a in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let mut p = ConicProblem::minimize();
        let x = p.add_symmetric_block(2);
        p.set_objective(LinExpr::new().entry(x, 1, 1, 1.0));
        p.add_constraint(LinExpr::new().entry(x, 0, 0, 1.0), Relation::Eq, a);
        p.add_constraint(LinExpr::new().entry(x, 0, 1, 1.0), Relation::Eq, 2.0);
        let s = solve(&p, 1e-9).expect("well-formed");
        worst = worst.max((s.objective_value - 1.0 / a).abs() * a);
    }
    out.push(Check::within("hyperbolic block, min t s.t. x t >= 1", worst, 1e-6));
    let (l, v) = max_eigpair(&real(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 2.0]))));
    out.push(Check::within("eigenpair of diag(1, 5, 2)", (l - 5.0).abs().max((v[1].re - 1.0).abs()), 1e-12));
    let r = rank1_extract(&real(DMatrix::identity(2, 2)));
    out.push(Check::within("rank-one residual of I2", (r.residual - 0.5f64.sqrt()).abs(), 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rel, mut kkt, mut uncertified) = (0.0f64, 0.0f64, 0usize);
    for case in 0..random {
        let n = 3 + case % 10;
        let c = random_symmetric(&mut rng, n);
        let (lower, upper) = maxcut_oracle(&c);
        if upper - lower > 1e-6 * (1.0 + lower.abs()) {
            uncertified += 1;
        }
        let s = solve(&maxcut_problem(&c), 1e-9).expect("well-formed");
        if s.status != SolveStatus::Optimal {
            rel = f64::INFINITY;
            continue;
        }
        rel = rel.max((s.objective_value - lower).abs() / (1.0 + lower.abs()));
        kkt = kkt.max(s.kkt_residual);
    }
    out.push(Check::within(format!("{random} random instances vs first-order oracle"), rel, 1e-4));
    out.push(Check::within("KKT residual on random instances", kkt, 1e-6));
    out.push(Check::within("oracle brackets left open", uncertified as f64, 0.0));
    out
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical link powers and the Rician LoS fraction. Residuals are in
/// standard errors.
pub fn channel_checks(samples: usize, seed: u64) -> Vec<Check> {
    let v = 10f64.powf(0.3);
    let geom = ScenarioGeometry::standard([[90.0, 20.0, 0.0], [100.0, 35.0, 0.0]]);
    let params = FadingParams { rician_factor: v, num_elements: 1, noise_power: 1e-12, seed };
    let model = ChannelModel::new(geom, params).expect("valid scenario");
    let (bu, bi, iu) = model.link_powers();
    let states: Vec<ChannelState> = (0..samples as u64).map(|i| model.sample_state(i)).collect();
    let mut out = Vec::new();
    let mut push = |name: &str, xs: Vec<f64>, target: f64| {
        let (m, se) = mean_and_se(&xs);
        out.push(Check::within(name, (m - target).abs() / se, 3.0));
    };
    for k in 0..2 {
        push(&format!("BS-user {} power [se]", k + 1), states.iter().map(|s| s.h[k].norm_sqr()).collect(), bu[k]);
        push(&format!("IRS-user {} power [se]", k + 1), states.iter().map(|s| s.r[k][0].norm_sqr()).collect(), iu[k]);
    }
    push("BS-IRS power [se]", states.iter().map(|s| s.g[0].norm_sqr()).collect(), bi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let los = Complex64::from_polar(1.0, 0.9);
    let proj: Vec<f64> = (0..samples).map(|_| (sample_rician(&mut rng, 1.0, v, los) * los.conj()).re).collect();
    // The projection onto the LoS direction has mean sqrt(v / (1 + v)).
    push("Rician LoS amplitude at 3 dB [se]", proj, (v / (1.0 + v)).sqrt());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()), Some(s));
        }
        assert_eq!(Suite::parse("nope"), None);
    }

    #[test]
    fn small_suites_pass() {
        assert!(power_checks(20, 1).iter().all(|c| c.passed));
        assert!(sdp_checks(4, 1).iter().all(|c| c.passed));
        assert!(channel_checks(20_000, 1).iter().all(|c| c.passed));
    }
}
