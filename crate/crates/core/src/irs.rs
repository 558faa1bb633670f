//! Reflection phases, the cascade channel and codebook quantization.

use std::f64::consts::TAU;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;

/// Wraps an angle into `[0, 2 pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Uniform `2^L`-point phase codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub bits: u32,
}

impl Codebook {
    pub fn new(bits: u32) -> Self {
        assert!(bits >= 1 && bits <= 16, "quantization level must lie in 1..=16");
        Self { bits }
    }

    pub fn size(&self) -> usize {
        1 << self.bits
    }

    pub fn step(&self) -> f64 {
        TAU / self.size() as f64
    }

    pub fn phase(&self, index: usize) -> f64 {
        index as f64 * self.step()
    }

    /// Index of the codeword nearest to `theta` in circular distance.
    /// Exact midpoints go to the smaller phase.
    pub fn nearest_index(&self, theta: f64) -> usize {
        let size = self.size();
        let pos = wrap_phase(theta) / self.step();
        let lo = (pos.floor() as usize).min(size - 1);
        let frac = pos - lo as f64;
        if frac < 0.5 {
            lo
        } else if frac > 0.5 {
            (lo + 1) % size
        } else if lo + 1 == size {
            0
        } else {
            lo
        }
    }

    pub fn contains(&self, theta: f64) -> bool {
        let idx = self.nearest_index(theta);
        circular_distance(theta, self.phase(idx)) <= 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Continuous,
    Discrete(Codebook),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    theta: Vec<f64>,
    resolution: Resolution,
}

impl PhaseConfig {
    pub fn continuous(theta: Vec<f64>) -> Self {
        Self {
            theta: theta.into_iter().map(wrap_phase).collect(),
            resolution: Resolution::Continuous,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::continuous(vec![0.0; n])
    }

    /// Random continuous phases snapped to the codebook.
    pub fn random_quantized<R: Rng + ?Sized>(rng: &mut R, n: usize, codebook: Codebook) -> Self {
        let theta = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
        quantize(&Self::continuous(theta), codebook)
    }

    pub fn from_indices(indices: &[usize], codebook: Codebook) -> Self {
        Self {
            theta: indices.iter().map(|&i| codebook.phase(i)).collect(),
            resolution: Resolution::Discrete(codebook),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Reflection coefficients `u_n = e^{j theta_n}`.
    pub fn coefficients(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.len(), self.theta.iter().map(|t| Complex64::from_polar(1.0, *t)))
    }

    /// Lifted vector `[u; 1]`.
    pub fn lifted(&self) -> DVector<Complex64> {
        let n = self.len();
        DVector::from_fn(n + 1, |i, _| {
            if i < n {
                Complex64::from_polar(1.0, self.theta[i])
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    }

    /// Phases of a lifted vector `v`, referenced to its last entry.
    pub fn from_lifted(v: &DVector<Complex64>) -> Self {
        let n = v.len() - 1;
        let reference = v[n].arg();
        Self::continuous((0..n).map(|i| v[i].arg() - reference).collect())
    }
}

/// Snaps every phase to its nearest codeword.
pub fn quantize(phases: &PhaseConfig, codebook: Codebook) -> PhaseConfig {
    let idx: Vec<usize> = phases.theta.iter().map(|t| codebook.nearest_index(*t)).collect();
    PhaseConfig::from_indices(&idx, codebook)
}

/// Cascade vector `z_k` with `z_k^H [u; 1] = h_k + r_k^H Theta g`.
///
/// The first `N` entries are `r_{n,k} conj(g_n)` and the last is `conj(h_k)`,
/// so the gain is the quadratic form `[u; 1]^H z z^H [u; 1]` and lifts to
/// `Tr(U z z^H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeMatrix {
    pub z: DVector<Complex64>,
}

impl CascadeMatrix {
    pub fn combined(&self, lifted: &DVector<Complex64>) -> Complex64 {
        self.z.dotc(lifted)
    }

    /// `|z^H v|^2`.
    pub fn gain(&self, lifted: &DVector<Complex64>) -> f64 {
        self.combined(lifted).norm_sqr()
    }

    /// Largest attainable `|z^H v|^2` over unit-modulus `v`.
    pub fn max_gain(&self) -> f64 {
        self.z.iter().map(|c| c.norm()).sum::<f64>().powi(2)
    }
}

pub fn build_cascade(state: &ChannelState, k: usize) -> CascadeMatrix {
    assert!(k < 2, "user index must be 0 or 1");
    let n = state.num_elements();
    let r = &state.r[k];
    let z = DVector::from_fn(n + 1, |i, _| if i < n { r[i] * state.g[i].conj() } else { state.h[k].conj() });
    CascadeMatrix { z }
}

/// `h_k + r_k^H Theta g` evaluated directly.
pub fn combined_channel(state: &ChannelState, phases: &PhaseConfig, k: usize) -> Complex64 {
    let mut acc = state.h[k];
    for (n, t) in phases.theta().iter().enumerate() {
        acc += state.r[k][n].conj() * Complex64::from_polar(1.0, *t) * state.g[n];
    }
    acc
}

/// Normalized gain `|h_k + r_k^H Theta g|^2 / sigma^2`.
pub fn effective_gain(state: &ChannelState, phases: &PhaseConfig, k: usize, noise_power: f64) -> f64 {
    assert_eq!(phases.len(), state.num_elements(), "phase count must match the IRS size");
    combined_channel(state, phases, k).norm_sqr() / noise_power
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn state(h: Complex64, g: Vec<Complex64>, r: Vec<Complex64>) -> ChannelState {
        ChannelState {
            h: [h, h],
            g: DVector::from_vec(g),
            r: [DVector::from_vec(r.clone()), DVector::from_vec(r)],
            index: 0,
        }
    }

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    #[test]
    fn aligned_all_ones_gives_nine() {
        let s = state(one(), vec![one(), one()], vec![one(), one()]);
        let z = build_cascade(&s, 0);
        assert_relative_eq!(z.gain(&PhaseConfig::zeros(2).lifted()), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_reflection_path_leaves_direct_link() {
        let h = Complex64::new(0.3, -1.1);
        let s = state(h, vec![Complex64::new(0.0, 0.0)], vec![Complex64::new(0.7, 0.2)]);
        let z = build_cascade(&s, 1);
        for t in [0.0, 1.0, 4.0] {
            let p = PhaseConfig::continuous(vec![t]);
            assert_relative_eq!(z.gain(&p.lifted()), h.norm_sqr(), epsilon = 1e-14);
        }
    }

    #[test]
    fn effective_gain_normalizes_by_noise() {
        let s = state(one(), vec![Complex64::new(0.0, 0.0)], vec![one()]);
        assert_relative_eq!(effective_gain(&s, &PhaseConfig::zeros(1), 0, 1.0), 1.0);
        let zero = state(Complex64::new(0.0, 0.0), vec![Complex64::new(0.0, 0.0)], vec![one()]);
        assert_eq!(effective_gain(&zero, &PhaseConfig::zeros(1), 0, 1.0), 0.0);
    }

    #[test]
    fn quantization_examples() {
        let one_bit = Codebook::new(1);
        let three_bit = Codebook::new(3);
        let q = |t: f64, c: Codebook| quantize(&PhaseConfig::continuous(vec![t]), c).theta()[0];
        assert_relative_eq!(q(2.0, one_bit), PI);
        assert_eq!(q(0.3, three_bit), 0.0);
        assert_eq!(q(TAU - 0.01, one_bit), 0.0);
    }

    #[test]
    fn midpoints_go_to_smaller_phase() {
        let c = Codebook::new(2);
        assert_eq!(c.nearest_index(PI / 4.0), 0);
        assert_eq!(c.nearest_index(3.0 * PI / 4.0), 1);
        // Between the last codeword and 2 pi the smaller phase is zero.
        assert_eq!(c.nearest_index(7.0 * PI / 4.0), 0);
    }

    #[test]
    fn wrap_maps_into_range() {
        for t in [-7.0, -TAU, 0.0, TAU, 13.0] {
            let w = wrap_phase(t);
            assert!((0.0..TAU).contains(&w));
        }
    }

    #[test]
    fn lifted_round_trip() {
        let p = PhaseConfig::continuous(vec![0.1, 2.0, 5.5]);
        let v = p.lifted() * Complex64::from_polar(2.0, 0.7);
        let back = PhaseConfig::from_lifted(&v);
        for (a, b) in p.theta().iter().zip(back.theta()) {
            assert!(circular_distance(*a, *b) < 1e-12);
        }
    }
}
