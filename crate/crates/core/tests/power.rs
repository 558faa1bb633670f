use std::f64::consts::LN_2;

use approx::assert_relative_eq;
use irsma_core::power::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

struct Draw {
    gains: [f64; 2],
    duals: DualMultipliers,
    peak: f64,
}

fn draw(rng: &mut ChaCha8Rng) -> Draw {
    let peak = log_uniform(rng, 0.1, 10.0);
    Draw {
        gains: [log_uniform(rng, 1e-2, 1e3), log_uniform(rng, 1e-2, 1e3)],
        duals: DualMultipliers::new(log_uniform(rng, 1e-2, 1e2) / peak, 2.0 * rng.random::<f64>(), 2.0 * rng.random::<f64>()),
        peak,
    }
}

/// Refines a coarse grid maximizer on a finer local grid, also probing the
/// sum-power boundary.
fn refine_noma(coarse: &StateAllocation, gains: [f64; 2], duals: &DualMultipliers, peak: f64, step: f64) -> f64 {
    let fine = 200;
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

#[test]
fn noma_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..300 {
        let d = draw(&mut rng);
        for order in DecodingOrder::ALL {
            let exact = noma_state_opt(d.gains, &d.duals, d.peak, order);
            let grid = grid_oracle(d.gains, &d.duals, d.peak, Access::Noma, order, 200);
            let refined = refine_noma(&grid, d.gains, &d.duals, d.peak, d.peak / 200.0);
            assert!(exact.total_power() <= d.peak * (1.0 + 1e-12));
            assert!(refined <= exact.value + 1e-9 * (1.0 + exact.value.abs()), "{refined} > {}", exact.value);
            assert!(exact.value - refined <= 1e-4 * exact.value.abs().max(1.0), "{} vs {refined}", exact.value);
        }
    }
}

#[test]
fn oma_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..300 {
        let d = draw(&mut rng);
        let exact = oma_state_opt(d.gains, &d.duals, d.peak);
        let grid = grid_oracle(d.gains, &d.duals, d.peak, Access::Fdma, DecodingOrder::OneTwo, 200);
        assert!(exact.total_power() <= d.peak * (1.0 + 1e-9));
        assert!((0.0..=1.0).contains(&exact.alpha1));
        assert!(grid.value <= exact.value + 1e-9 * (1.0 + exact.value.abs()), "{} > {}", grid.value, exact.value);
        assert!(exact.value - grid.value <= 1e-3 * exact.value.abs().max(1.0) + 5e-3);
    }
}

#[test]
fn oma_swapping_identical_users_keeps_value() {
    let d = DualMultipliers::new(0.3, 0.4, 0.4);
    let a = oma_state_opt([5.0, 5.0], &d, 4.0);
    let b = oma_state_opt([5.0, 5.0], &DualMultipliers::new(0.3, 0.4, 0.4), 4.0);
    assert_relative_eq!(a.value, b.value, epsilon = 1e-12);
    let swapped = StateAllocation { p: [a.p[1], a.p[0]], alpha1: 1.0 - a.alpha1, ..a };
    assert_relative_eq!(lagrangian(&swapped, [5.0, 5.0], &d, Access::Tdma), a.value, epsilon = 1e-12);
}

#[test]
fn unconstrained_budget_uses_peak_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gains: Vec<[f64; 2]> = (0..50).map(|_| [log_uniform(&mut rng, 0.1, 100.0), log_uniform(&mut rng, 0.1, 100.0)]).collect();
    let budget = PowerBudget { avg_power: 2.0, peak_power: 2.0, min_rate: 0.0 };
    for access in [Access::Noma, Access::Fdma] {
        let sol = dual_solve(&gains, &budget, access, &OrderPolicy::Best, &DualOptions::default()).unwrap();
        assert!(sol.multipliers.lambda < 1e-6);
        for a in &sol.allocations {
            assert_relative_eq!(a.total_power(), 2.0, max_relative = 1e-9);
        }
    }
}

#[test]
fn single_state_spends_average_budget() {
    let budget = PowerBudget { avg_power: 0.5, peak_power: 2.0, min_rate: 0.0 };
    for access in [Access::Noma, Access::Tdma] {
        let sol = dual_solve(&[[3.0, 40.0]], &budget, access, &OrderPolicy::Best, &DualOptions::default()).unwrap();
        assert!(sol.mixtures.is_empty());
        assert_relative_eq!(sol.allocations[0].total_power(), 0.5, max_relative = 1e-8);
    }
}

fn random_gains(seed: u64, n: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: f64 = -(1.0 - rng.random::<f64>()).ln();
            let b: f64 = -(1.0 - rng.random::<f64>()).ln();
            [2.0 * a, 20.0 * b]
        })
        .collect()
}

#[test]
fn rate_floors_and_budget_hold_with_small_gap() {
    let budget = PowerBudget { avg_power: 1.0, peak_power: 2.0, min_rate: 0.5 };
    for seed in 0..4 {
        let gains = random_gains(seed, 100);
        for access in [Access::Noma, Access::Fdma] {
            let sol = dual_solve(&gains, &budget, access, &OrderPolicy::Best, &DualOptions::default()).unwrap();
            assert!(sol.power_residual.abs() <= 1e-2, "power residual {}", sol.power_residual);
            for k in 0..2 {
                assert!(sol.avg_rates[k] >= budget.min_rate - 1e-2, "rate {k}: {}", sol.avg_rates[k]);
            }
            let gap = (sol.dual_value - sol.primal_value).abs() / sol.dual_value.abs();
            assert!(gap <= 1e-2, "{access:?} gap {gap}");
            assert!(sol.dual_value >= sol.primal_value - 1e-9);
            for m in &sol.mixtures {
                let total: f64 = m.parts.iter().map(|(w, _)| w).sum();
                assert!((total - 1.0).abs() < 1e-9 && m.parts.iter().all(|(w, a)| *w > 0.0 && a.total_power() <= budget.peak_power * (1.0 + 1e-9)));
            }
        }
    }
}

#[test]
fn impossible_floor_reports_attainable_rate() {
    let budget = PowerBudget { avg_power: 1e-3, peak_power: 2e-3, min_rate: 50.0 };
    let err = dual_solve(&random_gains(1, 20), &budget, Access::Noma, &OrderPolicy::Best, &DualOptions::default()).unwrap_err();
    match err {
        irsma_core::CoreError::RateInfeasible { attainable, .. } => assert!(attainable < 50.0 && attainable >= 0.0),
        other => panic!("unexpected {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dominant_user_water_fills(g1 in 1e-3f64..1e-2, g2 in 1e3f64..1e4, lam in 0.05f64..5.0, mu in 0.0f64..1.0, peak in 0.1f64..10.0) {
        let d = DualMultipliers::new(lam, 0.0, mu);
        let a = noma_state_best([g1, g2], &d, peak);
        let expected = ((1.0 + mu) / (lam * LN_2) - 1.0 / g2).clamp(0.0, peak);
        prop_assert!((a.total_power() - expected).abs() <= 1e-9 * (1.0 + expected));
    }

    #[test]
    fn allocations_are_feasible(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = draw(&mut rng);
        for a in [noma_state_best(d.gains, &d.duals, d.peak), oma_state_opt(d.gains, &d.duals, d.peak)] {
            prop_assert!(a.p[0] >= 0.0 && a.p[1] >= 0.0);
            prop_assert!(a.total_power() <= d.peak * (1.0 + 1e-9));
            prop_assert!((0.0..=1.0).contains(&a.alpha1));
        }
    }

    #[test]
    fn best_order_dominates_both(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = draw(&mut rng);
        let best = noma_state_best(d.gains, &d.duals, d.peak);
        for o in DecodingOrder::ALL {
            prop_assert!(best.value >= noma_state_opt(d.gains, &d.duals, d.peak, o).value - 1e-12);
        }
    }
}
