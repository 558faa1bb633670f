//! Block-fading channel generation.
//!
//! Every state index owns an independent ChaCha stream derived from the
//! experiment seed, so states can be generated in any order or in parallel
//! and replay bit for bit.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub type Point = [f64; 3];

/// Stream reserved for scenario-level draws such as user placement.
const SCENARIO_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    pub bs_position: Point,
    pub irs_position: Point,
    pub user_positions: [Point; 2],
    /// Reference distance `d0` in meters.
    pub reference_distance: f64,
    /// Linear loss at the reference distance.
    pub reference_loss: f64,
    pub exp_bu: f64,
    pub exp_bi: f64,
    pub exp_iu: f64,
}

fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl ScenarioGeometry {
    /// Default deployment: BS at the origin, IRS at 70 m on the x axis,
    /// -30 dB at 1 m and exponents 3.5 / 2.2 / 2.8.
    pub fn standard(user_positions: [Point; 2]) -> Self {
        Self {
            bs_position: [0.0; 3],
            irs_position: [70.0, 0.0, 0.0],
            user_positions,
            reference_distance: 1.0,
            reference_loss: 1e-3,
            exp_bu: 3.5,
            exp_bi: 2.2,
            exp_iu: 2.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reference_distance > 0.0) {
            return Err(CoreError::Domain("reference distance must be positive".into()));
        }
        if !(self.reference_loss > 0.0 && self.reference_loss <= 1.0) {
            return Err(CoreError::Domain("reference loss must lie in (0, 1]".into()));
        }
        for (name, e) in [("BU", self.exp_bu), ("BI", self.exp_bi), ("IU", self.exp_iu)] {
            if !(e >= 2.0) {
                return Err(CoreError::Domain(format!("{name} path-loss exponent {e} is below 2")));
            }
        }
        let dists = [self.d_bi(), self.d_bu(0), self.d_bu(1), self.d_iu(0), self.d_iu(1)];
        if dists.iter().any(|d| !(*d > 0.0)) {
            return Err(CoreError::Domain("all node distances must be positive".into()));
        }
        Ok(())
    }

    pub fn d_bu(&self, k: usize) -> f64 {
        distance(&self.bs_position, &self.user_positions[k])
    }

    pub fn d_bi(&self) -> f64 {
        distance(&self.bs_position, &self.irs_position)
    }

    pub fn d_iu(&self, k: usize) -> f64 {
        distance(&self.irs_position, &self.user_positions[k])
    }

    pub fn with_irs_position(mut self, irs_position: Point) -> Self {
        self.irs_position = irs_position;
        self
    }
}

/// Large-scale power gain `rho0 (d / d0)^-phi`.
pub fn path_loss(d: f64, phi: f64, geom: &ScenarioGeometry) -> Result<f64> {
    if !(d > 0.0) {
        return Err(CoreError::Domain(format!("distance must be positive, got {d}")));
    }
    Ok(geom.reference_loss * (d / geom.reference_distance).powf(-phi))
}

pub fn sample_rayleigh<R: Rng + ?Sized>(rng: &mut R, mean_power: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (mean_power * 0.5).sqrt()
}

/// Rician sample with Rician factor `v` (linear; `f64::INFINITY` gives pure LoS).
pub fn sample_rician<R: Rng + ?Sized>(
    rng: &mut R,
    mean_power: f64,
    v: f64,
    los_component: Complex64,
) -> Complex64 {
    let nlos = sample_rayleigh(rng, 1.0);
    let (w_los, w_nlos) = if v.is_infinite() {
        (1.0, 0.0)
    } else {
        ((v / (1.0 + v)).sqrt(), (1.0 / (1.0 + v)).sqrt())
    };
    (los_component * w_los + nlos * w_nlos) * mean_power.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingParams {
    /// Linear Rician factor of the BS-IRS and IRS-user links.
    pub rician_factor: f64,
    pub num_elements: usize,
    /// Noise power in watts.
    pub noise_power: f64,
    pub seed: u64,
}

impl FadingParams {
    /// `num_elements = 0` is accepted and models a network without an IRS.
    pub fn validate(&self) -> Result<()> {
        if !(self.rician_factor >= 0.0) {
            return Err(CoreError::Domain("Rician factor must be nonnegative".into()));
        }
        if !(self.noise_power > 0.0) {
            return Err(CoreError::Domain("noise power must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// Direct BS-user channels.
    pub h: [Complex64; 2],
    /// BS-IRS channel.
    pub g: DVector<Complex64>,
    /// IRS-user channels.
    pub r: [DVector<Complex64>; 2],
    pub index: u64,
}

impl ChannelState {
    pub fn num_elements(&self) -> usize {
        self.g.len()
    }

    /// Copy with the reflected path removed.
    pub fn without_irs(&self) -> Self {
        Self {
            h: self.h,
            g: DVector::zeros(0),
            r: [DVector::zeros(0), DVector::zeros(0)],
            index: self.index,
        }
    }
}

/// Half-wavelength ULA steering vector for an array laid along the y axis.
fn steering(n: usize, from: &Point, to: &Point) -> DVector<Complex64> {
    let d = distance(from, to);
    let sin_psi = if d > 0.0 { (to[1] - from[1]) / d } else { 0.0 };
    DVector::from_fn(n, |i, _| Complex64::from_polar(1.0, PI * i as f64 * sin_psi))
}

/// Precomputed large-scale quantities for repeated state sampling.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub geometry: ScenarioGeometry,
    pub params: FadingParams,
    amp_bu: [f64; 2],
    amp_bi: f64,
    amp_iu: [f64; 2],
    los_bi: DVector<Complex64>,
    los_iu: [DVector<Complex64>; 2],
}

impl ChannelModel {
    pub fn new(geometry: ScenarioGeometry, params: FadingParams) -> Result<Self> {
        geometry.validate()?;
        params.validate()?;
        let n = params.num_elements;
        let g = &geometry;
        Ok(Self {
            amp_bu: [path_loss(g.d_bu(0), g.exp_bu, g)?, path_loss(g.d_bu(1), g.exp_bu, g)?],
            amp_bi: path_loss(g.d_bi(), g.exp_bi, g)?,
            amp_iu: [path_loss(g.d_iu(0), g.exp_iu, g)?, path_loss(g.d_iu(1), g.exp_iu, g)?],
            los_bi: steering(n, &g.irs_position, &g.bs_position),
            los_iu: [
                steering(n, &g.irs_position, &g.user_positions[0]),
                steering(n, &g.irs_position, &g.user_positions[1]),
            ],
            geometry,
            params,
        })
    }

    /// Mean link powers `(BU_k, BI, IU_k)`.
    pub fn link_powers(&self) -> ([f64; 2], f64, [f64; 2]) {
        (self.amp_bu, self.amp_bi, self.amp_iu)
    }

    pub fn sample_state(&self, index: u64) -> ChannelState {
        let mut rng = state_rng(self.params.seed, index);
        let v = self.params.rician_factor;
        let n = self.params.num_elements;
        let h = [
            sample_rayleigh(&mut rng, self.amp_bu[0]),
            sample_rayleigh(&mut rng, self.amp_bu[1]),
        ];
        let g = DVector::from_fn(n, |i, _| sample_rician(&mut rng, self.amp_bi, v, self.los_bi[i]));
        let r0 = DVector::from_fn(n, |i, _| sample_rician(&mut rng, self.amp_iu[0], v, self.los_iu[0][i]));
        let r1 = DVector::from_fn(n, |i, _| sample_rician(&mut rng, self.amp_iu[1], v, self.los_iu[1][i]));
        ChannelState { h, g, r: [r0, r1], index }
    }

    pub fn sample_states(&self, count: usize) -> Vec<ChannelState> {
        use rayon::prelude::*;
        (0..count as u64).into_par_iter().map(|i| self.sample_state(i)).collect()
    }
}

pub fn sample_state(geom: &ScenarioGeometry, params: &FadingParams, index: u64) -> Result<ChannelState> {
    Ok(ChannelModel::new(*geom, *params)?.sample_state(index))
}

/// Generator for state `index`: the experiment seed selects the key, the index the stream.
pub fn state_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Region the two users are dropped into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRegion {
    pub center: Point,
    pub radius: f64,
    /// Upper bound on `d_BI + d_IU`.
    pub max_path: f64,
}

impl Default for UserRegion {
    fn default() -> Self {
        Self {
            center: [80.0, 10.0, 0.0],
            radius: 40.0,
            max_path: 120.0,
        }
    }
}

/// Drops both users uniformly in the quarter disc `x >= cx, y >= cy` of `region`,
/// rejecting positions whose BS-IRS-user path exceeds `max_path`.
pub fn sample_users(seed: u64, region: &UserRegion, bs: &Point, irs: &Point) -> Result<[Point; 2]> {
    let mut rng = state_rng(seed, SCENARIO_STREAM);
    let d_bi = distance(bs, irs);
    let mut users = [[0.0; 3]; 2];
    for user in &mut users {
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > 100_000 {
                return Err(CoreError::Domain("user region does not meet the path-length bound".into()));
            }
            let rad = region.radius * rng.random::<f64>().sqrt();
            let ang = 0.5 * PI * rng.random::<f64>();
            let p = [region.center[0] + rad * ang.cos(), region.center[1] + rad * ang.sin(), region.center[2]];
            if d_bi + distance(irs, &p) <= region.max_path {
                *user = p;
                break;
            }
        }
    }
    Ok(users)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * db_to_linear(dbm)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom() -> ScenarioGeometry {
        ScenarioGeometry::standard([[90.0, 20.0, 0.0], [100.0, 15.0, 0.0]])
    }

    #[test]
    fn loss_at_reference_distance() {
        for phi in [2.0, 2.2, 3.5] {
            assert_relative_eq!(path_loss(1.0, phi, &geom()).unwrap(), 1e-3, max_relative = 1e-15);
        }
        assert_relative_eq!(path_loss(100.0, 2.0, &geom()).unwrap(), 1e-7, max_relative = 1e-14);
    }

    #[test]
    fn loss_rejects_nonpositive_distance() {
        assert!(path_loss(0.0, 2.0, &geom()).is_err());
        assert!(path_loss(-3.0, 2.0, &geom()).is_err());
    }

    #[test]
    fn zero_power_rayleigh_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_rayleigh(&mut rng, 0.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn pure_los_limit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let los = Complex64::from_polar(1.0, 0.4);
        for v in [1e12, f64::INFINITY] {
            let x = sample_rician(&mut rng, 4.0, v, los);
            assert_relative_eq!(x.re, 2.0 * los.re, epsilon = 1e-5);
            assert_relative_eq!(x.im, 2.0 * los.im, epsilon = 1e-5);
        }
    }

    #[test]
    fn zero_factor_matches_rayleigh_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let x = sample_rician(&mut a, 2.0, 0.0, Complex64::new(1.0, 0.0));
        let y = sample_rayleigh(&mut b, 2.0);
        assert_relative_eq!(x.re, y.re, epsilon = 1e-15);
        assert_relative_eq!(x.im, y.im, epsilon = 1e-15);
    }

    #[test]
    fn single_element_los_has_path_loss_amplitude() {
        let params = FadingParams { rician_factor: f64::INFINITY, num_elements: 1, noise_power: 1e-12, seed: 0 };
        let model = ChannelModel::new(geom(), params).unwrap();
        let s = model.sample_state(5);
        let expected = path_loss(70.0, 2.2, &geom()).unwrap().sqrt();
        assert_relative_eq!(s.g[0].norm(), expected, max_relative = 1e-12);
    }

    #[test]
    fn users_respect_region() {
        let region = UserRegion::default();
        for seed in 0..50 {
            let users = sample_users(seed, &region, &[0.0; 3], &[70.0, 0.0, 0.0]).unwrap();
            for u in users {
                let rad = distance(&u, &region.center);
                assert!(rad <= region.radius + 1e-9);
                assert!(u[0] >= region.center[0] && u[1] >= region.center[1]);
                assert!(70.0 + distance(&[70.0, 0.0, 0.0], &u) <= 120.0 + 1e-9);
            }
        }
    }

    #[test]
    fn unit_conversions() {
        assert_relative_eq!(dbm_to_watts(-90.0), 1e-12, max_relative = 1e-12);
        assert_relative_eq!(dbm_to_watts(30.0), 1.0, max_relative = 1e-12);
        assert_relative_eq!(watts_to_dbm(1e-12), -90.0, epsilon = 1e-9);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let mut g = geom();
        g.exp_bi = 1.5;
        assert!(g.validate().is_err());
        let mut g = geom();
        g.reference_loss = 2.0;
        assert!(g.validate().is_err());
        let p = FadingParams { rician_factor: -1.0, num_elements: 2, noise_power: 1.0, seed: 0 };
        assert!(p.validate().is_err());
    }
}
