use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, LOG2_E, PI, TAU};

use approx::assert_relative_eq;
use irsma_conic::BlockKind;
use irsma_core::channel::ChannelState;
use irsma_core::irs::{combined_channel, Codebook, PhaseConfig, Resolution};
use irsma_core::phase::*;
use irsma_core::power::{Access, DecodingOrder, StateAllocation};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn cn<R: Rng>(rng: &mut R, power: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (power / 2.0).sqrt()
}

/// Unit-variance reflected entries with a direct link of comparable size.
fn random_state(rng: &mut ChaCha8Rng, n: usize) -> ChannelState {
    ChannelState {
        h: [cn(rng, 1.0), cn(rng, 1.0)],
        g: DVector::from_fn(n, |_, _| cn(rng, 1.0)),
        r: [DVector::from_fn(n, |_, _| cn(rng, 1.0)), DVector::from_fn(n, |_, _| cn(rng, 1.0))],
        index: 0,
    }
}

fn noma_alloc(p: [f64; 2], order: DecodingOrder) -> StateAllocation {
    StateAllocation { p, alpha1: 0.5, order, value: 0.0 }
}

fn oma_alloc(p: [f64; 2], alpha1: f64) -> StateAllocation {
    StateAllocation { p, alpha1, order: DecodingOrder::OneTwo, value: 0.0 }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn alignment_example() {
    let s = ChannelState {
        h: [c(1.0, 0.0); 2],
        g: DVector::from_element(1, Complex64::from_polar(1.0, FRAC_PI_8)),
        r: [DVector::from_element(1, Complex64::from_polar(1.0, FRAC_PI_4)), DVector::from_element(1, Complex64::from_polar(1.0, FRAC_PI_4))],
        index: 0,
    };
    let p = align_tdma(&s, 0);
    assert_relative_eq!(p.theta()[0], FRAC_PI_8, epsilon = 1e-12);
    assert_relative_eq!(combined_channel(&s, &p, 0).norm(), 2.0, epsilon = 1e-12);
}

#[test]
fn alignment_without_reflection_keeps_direct_link() {
    let s = ChannelState {
        h: [c(0.4, -0.3), c(0.0, 0.0)],
        g: DVector::zeros(3),
        r: [DVector::from_element(3, c(1.0, 1.0)), DVector::from_element(3, c(1.0, 1.0))],
        index: 0,
    };
    for k in 0..2 {
        assert_relative_eq!(combined_channel(&s, &align_tdma(&s, k), k).norm(), s.h[k].norm(), epsilon = 1e-15);
    }
}

#[test]
fn alignment_reaches_triangle_bound_and_beats_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let s = random_state(&mut rng, 4);
        for k in 0..2 {
            let bound = s.h[k].norm() + (0..4).map(|n| s.r[k][n].norm() * s.g[n].norm()).sum::<f64>();
            let aligned = combined_channel(&s, &align_tdma(&s, k), k).norm();
            assert!((aligned - bound).abs() <= 1e-9 * bound);
            for _ in 0..1000 {
                let p = PhaseConfig::continuous((0..4).map(|_| rng.random::<f64>() * TAU).collect());
                assert!(combined_channel(&s, &p, k).norm() <= aligned + 1e-12);
            }
        }
    }
}

#[test]
fn exhaustive_single_element_one_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_state(&mut rng, 1);
    let t = PhaseTarget::new(&[s], &[noma_alloc([0.7, 0.3], DecodingOrder::OneTwo)], Access::Noma, 1.0, 0.0).unwrap();
    let cb = Codebook::new(1);
    let (best, value) = exhaustive(&t, cb).unwrap();
    let v0 = t.sum_rate(&PhaseConfig::from_indices(&[0], cb));
    let v1 = t.sum_rate(&PhaseConfig::from_indices(&[1], cb));
    assert_eq!(value, v0.max(v1));
    assert_eq!(best.theta()[0], if v1 > v0 { PI } else { 0.0 });
}

#[test]
fn exhaustive_ties_pick_smallest_phases() {
    let s = ChannelState {
        h: [c(1.0, 0.0); 2],
        g: DVector::zeros(2),
        r: [DVector::from_element(2, c(1.0, 0.0)), DVector::from_element(2, c(1.0, 0.0))],
        index: 0,
    };
    let t = PhaseTarget::new(&[s], &[noma_alloc([0.5, 0.5], DecodingOrder::OneTwo)], Access::Noma, 1.0, 0.0).unwrap();
    let (best, _) = exhaustive(&t, Codebook::new(1)).unwrap();
    assert_eq!(best.theta(), &[0.0, 0.0]);
}

#[test]
fn exhaustive_refuses_oversized_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_state(&mut rng, 13);
    let t = PhaseTarget::new(&[s], &[noma_alloc([0.7, 0.3], DecodingOrder::OneTwo)], Access::Noma, 1.0, 0.0).unwrap();
    match exhaustive(&t, Codebook::new(2)) {
        Err(irsma_core::CoreError::SearchTooLarge { configs, cap }) => {
            assert_eq!(configs, 1 << 26);
            assert_eq!(cap, 1 << 24);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn surrogate_is_tight_and_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let true_r1 = |x: f64, y: f64| (1.0 + 1.0 / (x * y)).log2();
    let true_r2 = |x: f64, s2: f64| (1.0 + 1.0 / (x * s2)).log2();
    for _ in 0..1000 {
        let (x0, y0, x2, s2) = (
            10f64.powf(rng.random_range(-3.0..3.0)),
            10f64.powf(rng.random_range(-3.0..3.0)),
            10f64.powf(rng.random_range(-3.0..3.0)),
            10f64.powf(rng.random_range(-2.0..2.0)),
        );
        let sc = taylor_surrogate(x0, y0, x2, s2).unwrap();
        assert_relative_eq!(sc.r1_low(x0, y0), true_r1(x0, y0), max_relative = 1e-12);
        assert_relative_eq!(sc.r2_low(x2), true_r2(x2, s2), max_relative = 1e-12);
        let x = x0 * 10f64.powf(rng.random_range(-2.0..2.0));
        let y = y0 * 10f64.powf(rng.random_range(-2.0..2.0));
        let xx = x2 * 10f64.powf(rng.random_range(-2.0..2.0));
        assert!(sc.r1_low(x, y) <= true_r1(x, y) + 1e-12);
        assert!(sc.r2_low(xx) <= true_r2(xx, s2) + 1e-12);
    }
}

#[test]
fn surrogate_slope_matches_partial() {
    let (x, y) = (0.3, 2.5);
    let sc = taylor_surrogate(x, y, 0.7, 1e-2).unwrap();
    assert_relative_eq!(sc.r1_low(x + 1.0, y) - sc.r1_low(x, y), -LOG2_E / (x + x * x * y), max_relative = 1e-12);
    let h: f64 = 1e-6;
    let fd = ((1.0f64 + 1.0 / ((0.7 + h) * 1e-2)).log2() - (1.0f64 + 1.0 / ((0.7 - h) * 1e-2)).log2()) / (2.0 * h);
    assert_relative_eq!(sc.r2_dx, fd, max_relative = 1e-6);
    assert!(taylor_surrogate(0.0, 1.0, 1.0, 1.0).is_err());
    assert!(taylor_surrogate(1.0, -1.0, 1.0, 1.0).is_err());
}

fn fresh_state(target: &PhaseTarget, phases: &PhaseConfig, kappa: f64) -> SrocrState {
    SrocrState::from_phases(target, phases, kappa, 0.1)
}

#[test]
fn subproblem_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_state(&mut rng, 1);
    let t = PhaseTarget::new(&[s], &[noma_alloc([0.6, 0.4], DecodingOrder::OneTwo)], Access::Noma, 1.0, 0.0).unwrap();
    let p = PhaseConfig::zeros(1);
    let (prob, layout) = build_subproblem(&fresh_state(&t, &p, 0.0), &t);
    assert_eq!(prob.blocks()[0], BlockKind::Hermitian(2));
    assert_eq!(prob.blocks()[0].real_dim(), 4);
    assert_eq!(layout.hyperbolic.len(), 2);
    assert!(layout.hyperbolic.iter().all(|b| prob.blocks()[b.index()] == BlockKind::Symmetric(2)));
    assert!(!layout.has_cut);
    let without = prob.constraints().len();
    let (prob, layout) = build_subproblem(&fresh_state(&t, &p, 0.5), &t);
    assert!(layout.has_cut);
    assert_eq!(prob.constraints().len(), without + 1);
}

#[test]
fn subproblem_solution_satisfies_lifted_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 3;
    let s = random_state(&mut rng, n);
    let alloc = noma_alloc([0.8, 0.2], DecodingOrder::TwoOne);
    let t = PhaseTarget::new(&[s], &[alloc], Access::Noma, 0.5, 0.1).unwrap();
    let st = fresh_state(&t, &PhaseConfig::zeros(n), 0.0);
    let (prob, layout) = build_subproblem(&st, &t);
    let sol = irsma_conic::solve(&prob, 1e-9).unwrap();
    assert!(sol.is_optimal());
    let u = &sol.blocks[layout.u.index()];
    for i in 0..=n {
        assert!((u[(i, i)].re - 1.0).abs() < 1e-7);
    }
    let eig = u.clone().symmetric_eigenvalues();
    assert!(eig.min() >= -1e-7 * (n + 1) as f64);
    let trace_gain = |k: usize| {
        let z = &t.cascades[0][k].z;
        (z.adjoint() * u * z)[(0, 0)].re / t.noise_power
    };
    // Weak user 1 (decoded first) and strong user 0.
    let terms = fresh_state(&t, &PhaseConfig::zeros(n), 0.0).local;
    for (j, term) in terms.iter().enumerate() {
        let b = &sol.blocks[layout.hyperbolic[j].index()];
        let x = b[(0, 0)].re * term.x;
        let k = term.user;
        let tval = trace_gain(k) * alloc.p[k];
        assert!(x * tval >= 1.0 - 1e-6, "hyperbolic {}", x * tval);
        if let Some(y) = layout.y[j] {
            let y = sol.scalars[y.index()] * term.y;
            assert!(y >= trace_gain(k) * alloc.p[1 - k] + 1.0 - 1e-6);
        }
    }
}

#[test]
fn single_element_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for bits in [1, 2, 3] {
        let cb = Codebook::new(bits);
        for _ in 0..5 {
            let s = random_state(&mut rng, 1);
            for (access, alloc) in [
                (Access::Noma, noma_alloc([0.7, 0.3], DecodingOrder::by_strength([s.h[0].norm_sqr(), s.h[1].norm_sqr()]))),
                (Access::Fdma, oma_alloc([0.5, 0.5], 0.4)),
            ] {
                let t = PhaseTarget::new(&[s.clone()], &[alloc], access, 1.0, 0.0).unwrap();
                let (_, best) = exhaustive(&t, cb).unwrap();
                let init = PhaseConfig::random_quantized(&mut rng, 1, cb);
                let out = srocr(&t, Resolution::Discrete(cb), &init, &SrocrParams::default()).unwrap();
                assert_relative_eq!(out.value, best, max_relative = 1e-12);
            }
        }
    }
}

#[test]
fn kappa_trace_is_nondecreasing_and_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cb = Codebook::new(2);
    for _ in 0..20 {
        let s = random_state(&mut rng, 4);
        let t = PhaseTarget::new(&[s], &[noma_alloc([0.7, 0.3], DecodingOrder::OneTwo)], Access::Noma, 1.0, 0.0).unwrap();
        let init = PhaseConfig::random_quantized(&mut rng, 4, cb);
        let out = srocr_noma(&t, Resolution::Discrete(cb), &init, &SrocrParams::default()).unwrap();
        assert!(out.kappa_trace.windows(2).all(|w| w[1] >= w[0]), "{:?}", out.kappa_trace);
        assert!(*out.kappa_trace.last().unwrap() >= 0.999, "{:?}", out.kappa_trace);
        assert!(out.value >= out.initial_value);
    }
}

fn average_ratio(access: Access, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cb = Codebook::new(2);
    let mut ratio = 0.0;
    for _ in 0..50 {
        let s = random_state(&mut rng, 4);
        let alloc = match access {
            Access::Noma => noma_alloc([0.7, 0.3], DecodingOrder::by_strength([s.h[0].norm_sqr(), s.h[1].norm_sqr()])),
            _ => oma_alloc([0.4, 0.6], 0.5),
        };
        let t = PhaseTarget::new(&[s], &[alloc], access, 1.0, 0.0).unwrap();
        let (_, best) = exhaustive(&t, cb).unwrap();
        let init = PhaseConfig::random_quantized(&mut rng, 4, cb);
        let out = srocr(&t, Resolution::Discrete(cb), &init, &SrocrParams::default()).unwrap();
        assert!(best >= out.value - 1e-12);
        let raw = srocr(&t, Resolution::Discrete(cb), &init, &SrocrParams { polish: false, ..SrocrParams::default() }).unwrap();
        assert!(raw.value <= out.value);
        ratio += raw.value / best;
    }
    ratio / 50.0
}

#[test]
fn noma_reaches_most_of_exhaustive() {
    let r = average_ratio(Access::Noma, 41);
    assert!(r >= 0.95, "ratio {r}");
}

#[test]
fn oma_reaches_most_of_exhaustive() {
    let r = average_ratio(Access::Fdma, 42);
    assert!(r >= 0.95, "ratio {r}");
}

#[test]
fn oma_is_symmetric_in_user_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let cb = Codebook::new(2);
    let mut s = random_state(&mut rng, 3);
    s.r[1] = s.r[0].clone();
    s.h[1] = s.h[0];
    let mut swapped = s.clone();
    swapped.r.swap(0, 1);
    swapped.h.swap(0, 1);
    let alloc = oma_alloc([0.5, 0.5], 0.5);
    let init = PhaseConfig::random_quantized(&mut rng, 3, cb);
    let a = PhaseTarget::new(&[s], &[alloc], Access::Tdma, 1.0, 0.0).unwrap();
    let b = PhaseTarget::new(&[swapped], &[alloc], Access::Tdma, 1.0, 0.0).unwrap();
    let pa = srocr_oma(&a, Resolution::Discrete(cb), &init, &SrocrParams::default()).unwrap();
    let pb = srocr_oma(&b, Resolution::Discrete(cb), &init, &SrocrParams::default()).unwrap();
    assert_relative_eq!(pa.value, pb.value, max_relative = 1e-9);
}

#[test]
fn multi_state_target_never_loses_to_incumbent() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let cb = Codebook::new(3);
    for access in [Access::Noma, Access::Fdma] {
        let states: Vec<_> = (0..4).map(|_| random_state(&mut rng, 5)).collect();
        let allocs: Vec<_> = states
            .iter()
            .map(|_| match access {
                Access::Noma => noma_alloc([0.6, 0.4], DecodingOrder::OneTwo),
                _ => oma_alloc([0.6, 0.4], 0.3),
            })
            .collect();
        let t = PhaseTarget::new(&states, &allocs, access, 1.0, 0.2).unwrap();
        let init = PhaseConfig::random_quantized(&mut rng, 5, cb);
        let out = srocr(&t, Resolution::Discrete(cb), &init, &SrocrParams::default()).unwrap();
        assert!(out.value >= out.initial_value);
        assert!(out.phases.theta().iter().all(|th| cb.contains(*th)));
    }
}
