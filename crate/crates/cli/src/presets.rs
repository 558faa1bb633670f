//! Built-in sweeps for the evaluation figures.
//!
//! All presets share the standard deployment: BS at the origin, IRS at 70 m,
//! users dropped in the quarter disc around (80, 10, 0), -30 dB at 1 m,
//! exponents 3.5 / 2.2 / 2.8, Rician factor 3 dB, noise -90 dBm, `L = 3`
//! and `F = 10^4`.

use irsma_core::ao::Adjustment;

use crate::config::{
    AccessName, BudgetSection, ExperimentConfig, FadingSection, OneOrMany, Quantization, ScenarioSection,
    SchemeSection,
};

pub const FIGURES: [&str; 7] = ["fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];

/// Average-power grid for the power sweeps, dBm.
const POWER_SWEEP: [f64; 5] = [20.0, 25.0, 30.0, 35.0, 40.0];
/// Per-user rate floor for the power and size sweeps, bits/s/Hz.
const FLOOR: f64 = 1.5;

const ALL_ACCESS: [AccessName; 3] = [AccessName::Noma, AccessName::Tdma, AccessName::Fdma];

pub fn base() -> ExperimentConfig {
    ExperimentConfig {
        seed: 1,
        states: 10_000,
        output: None,
        scenario: ScenarioSection {
            bs_position: [0.0; 3],
            irs_position: OneOrMany::One([70.0, 0.0, 0.0]),
            user_positions: None,
            user_region: None,
            reference_distance_m: 1.0,
            reference_loss_db: -30.0,
            exponent_bu: 3.5,
            exponent_bi: 2.2,
            exponent_iu: 2.8,
        },
        fading: FadingSection { rician_factor_db: 3.0, noise_power_dbm: -90.0, num_elements: OneOrMany::One(30) },
        budget: BudgetSection {
            avg_power_dbm: OneOrMany::One(30.0),
            peak_power_dbm: None,
            peak_offset_db: Some(3.0),
            min_rate: OneOrMany::One(FLOOR),
        },
        scheme: SchemeSection {
            access: OneOrMany::Many(ALL_ACCESS.to_vec()),
            adjustment: OneOrMany::One(Adjustment::Dynamic),
            quantization: OneOrMany::One(Quantization::Bits(3)),
            block_size: 100,
            samples_per_block: 8,
            ao_max_rounds: 10,
            convergence_eps: 1e-2,
        },
    }
}

pub fn figure(name: &str) -> Option<ExperimentConfig> {
    let mut c = base();
    match name {
        // AO convergence with and without quantization.
        "fig3" => {
            c.scheme.access = OneOrMany::One(AccessName::Noma);
            c.scheme.quantization = OneOrMany::Many(vec![Quantization::Bits(3), Quantization::Named("continuous".into())]);
        }
        // Dynamic against one-time adjustment over transmit power.
        "fig4" => {
            c.scheme.adjustment = OneOrMany::Many(vec![Adjustment::Dynamic, Adjustment::OneTime]);
            c.budget.avg_power_dbm = OneOrMany::Many(POWER_SWEEP.to_vec());
        }
        // Dynamic adjustment over transmit power.
        "fig5" => c.budget.avg_power_dbm = OneOrMany::Many(POWER_SWEEP.to_vec()),
        // Dynamic adjustment over the rate floor.
        "fig6" => c.budget.min_rate = OneOrMany::Many(vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5]),
        // One-time adjustment over transmit power, with and without the IRS.
        "fig7" => {
            c.scheme.adjustment = OneOrMany::One(Adjustment::OneTime);
            c.fading.num_elements = OneOrMany::Many(vec![0, 30]);
            c.budget.avg_power_dbm = OneOrMany::Many(vec![20.0, 22.5, 25.0, 27.5, 30.0, 32.5, 35.0, 37.5, 40.0]);
        }
        // One-time adjustment over the IRS size.
        "fig8" => {
            c.scheme.adjustment = OneOrMany::One(Adjustment::OneTime);
            c.fading.num_elements = OneOrMany::Many(vec![0, 10, 20, 30, 40]);
        }
        // One-time adjustment over the IRS position along the BS-user axis.
        "fig9" => {
            c.scheme.adjustment = OneOrMany::One(Adjustment::OneTime);
            c.scenario.irs_position = OneOrMany::Many((1..=11).map(|i| [10.0 * i as f64, 0.0, 0.0]).collect());
        }
        _ => return None,
    }
    Some(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_configs() {
        for name in FIGURES {
            let cfg = figure(name).unwrap();
            let text = cfg.to_toml();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg, "{name}");
            assert!(!cfg.sweep().is_empty());
        }
        assert!(figure("fig10").is_none());
    }

    #[test]
    fn power_sweep_covers_three_schemes() {
        let pts = figure("fig5").unwrap().sweep();
        assert_eq!(pts.len(), 15);
        assert!(pts.iter().all(|p| p.adjustment == Adjustment::Dynamic && p.num_elements == 30));
    }
}
