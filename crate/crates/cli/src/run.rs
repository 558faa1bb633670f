//! Sweep execution and result files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use irsma_core::ao::{run_ao, ExperimentResult, SchemeConfig};
use irsma_core::channel::{sample_users, ChannelModel, ChannelState, FadingParams, Point};
use irsma_core::power::PowerBudget;
use irsma_core::CoreError;
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepPoint};

pub const CSV_HEADER: [&str; 13] = [
    "scheme",
    "adjustment",
    "N",
    "L",
    "P̄_dBm",
    "R̄",
    "avg_sum_rate",
    "R1_avg",
    "R2_avg",
    "power_residual",
    "rate_residual",
    "seed",
    "runtime_s",
];

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Solved(Box<ExperimentResult>),
    Infeasible { message: String },
    Failed { message: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub point: SweepPoint,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub users: [Point; 2],
    pub points: Vec<PointReport>,
}

impl RunReport {
    pub fn any_infeasible(&self) -> bool {
        self.points.iter().any(|p| matches!(p.outcome, Outcome::Infeasible { .. }))
    }

    pub fn any_failed(&self) -> bool {
        self.points.iter().any(|p| matches!(p.outcome, Outcome::Failed { .. }))
    }
}

pub fn user_positions(cfg: &ExperimentConfig) -> Result<[Point; 2], CoreError> {
    match cfg.scenario.user_positions {
        Some(u) => Ok(u),
        None => {
            let irs = cfg.scenario.irs_position.values()[0];
            sample_users(cfg.seed, &cfg.region(), &cfg.scenario.bs_position, &irs)
        }
    }
}

pub fn channel_states(cfg: &ExperimentConfig, users: [Point; 2], irs: Point, n: usize) -> Result<Vec<ChannelState>, CoreError> {
    let params = FadingParams {
        rician_factor: cfg.rician_factor(),
        num_elements: n,
        noise_power: cfg.noise_power(),
        seed: cfg.seed,
    };
    Ok(ChannelModel::new(cfg.geometry(users, irs), params)?.sample_states(cfg.states))
}

pub fn scheme_for(cfg: &ExperimentConfig, point: &SweepPoint) -> SchemeConfig {
    let mut s = SchemeConfig::new(point.access, point.adjustment, point.resolution);
    s.block_size = cfg.scheme.block_size;
    s.samples_per_block = cfg.scheme.samples_per_block;
    s.ao_max_rounds = cfg.scheme.ao_max_rounds;
    s.convergence_eps = cfg.scheme.convergence_eps;
    s
}

/// Runs one sweep point on precomputed states.
pub fn run_point(cfg: &ExperimentConfig, point: &SweepPoint, states: &[ChannelState]) -> Outcome {
    let budget = PowerBudget { avg_power: point.avg_power(), peak_power: point.peak_power(), min_rate: point.min_rate };
    let started = Instant::now();
    match run_ao(states, &budget, &scheme_for(cfg, point), cfg.noise_power(), cfg.seed) {
        Ok((mut r, _)) => {
            r.runtime_s = started.elapsed().as_secs_f64();
            Outcome::Solved(Box::new(r))
        }
        Err(e @ CoreError::RateInfeasible { .. }) => Outcome::Infeasible { message: e.to_string() },
        Err(e) => Outcome::Failed { message: e.to_string() },
    }
}

/// Runs every sweep point. Points sharing `(N, IRS position)` reuse one set of
/// states, so all schemes see paired channel realizations.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(&PointReport)) -> Result<RunReport, CoreError> {
    let users = user_positions(cfg)?;
    let mut cache: Option<((usize, Point), Vec<ChannelState>)> = None;
    let mut points = Vec::new();
    for point in cfg.sweep() {
        let key = (point.num_elements, point.irs_position);
        if cache.as_ref().is_none_or(|(k, _)| *k != key) {
            cache = Some((key, channel_states(cfg, users, point.irs_position, point.num_elements)?));
        }
        let states = &cache.as_ref().expect("filled above").1;
        let report = PointReport { outcome: run_point(cfg, &point, states), point };
        progress(&report);
        points.push(report);
    }
    Ok(RunReport { config: cfg.clone(), users, points })
}

/// CSV with one row per solved point. With `timing` off the runtime column is
/// zero, which makes the file a pure function of the configuration.
pub fn write_csv<W: Write>(report: &RunReport, out: W, timing: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for p in &report.points {
        let Outcome::Solved(r) = &p.outcome else { continue };
        let pt = &p.point;
        let runtime = if timing { r.runtime_s } else { 0.0 };
        w.write_record([
            pt.access.name().to_string(),
            pt.adjustment.name().to_string(),
            pt.num_elements.to_string(),
            pt.level_label(),
            pt.avg_power_dbm.to_string(),
            pt.min_rate.to_string(),
            r.avg_sum_rate.to_string(),
            r.per_user_avg_rates[0].to_string(),
            r.per_user_avg_rates[1].to_string(),
            r.power_residual.to_string(),
            r.rate_residuals[0].max(r.rate_residuals[1]).to_string(),
            report.config.seed.to_string(),
            format!("{runtime:.3}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_outputs(report: &RunReport, csv_path: &Path, timing: bool) -> anyhow::Result<()> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(report, std::fs::File::create(csv_path)?, timing)?;
    let mut json = report.clone();
    if !timing {
        for p in &mut json.points {
            if let Outcome::Solved(r) = &mut p.outcome {
                r.runtime_s = 0.0;
            }
        }
    }
    let file = std::fs::File::create(sidecar_path(csv_path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &json)?;
    Ok(())
}
