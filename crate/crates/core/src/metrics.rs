//! SINRs, rates, beam-pattern gains and transmit power, for both beamforming
//! vectors and their lifted (Gram matrix) form.

use crate::channel::ChannelSet;
use crate::linalg::{abs2_inner, hermitian_deviation, min_eigenvalue, outer, quad_form, trace_real, CMatrix, CVector};
use crate::{Error, Result};

/// Transmit beamformers plus the dedicated sensing covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamVectors {
    pub gus: Vec<CVector>,
    pub cavs: Vec<CVector>,
    pub sensing: CMatrix,
}

/// Semidefinite-relaxation variables `W_n`, `W_j`, `R_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedBeamforming {
    pub gus: Vec<CMatrix>,
    pub cavs: Vec<CMatrix>,
    pub sensing: CMatrix,
}

/// Quadratic-form access shared by both representations.
pub trait Transmit {
    fn num_gus(&self) -> usize;
    fn num_cavs(&self) -> usize;
    /// `v^H W_n v`.
    fn gu_gain(&self, n: usize, v: &CVector) -> f64;
    /// `v^H W_j v`.
    fn cav_gain(&self, j: usize, v: &CVector) -> f64;
    /// `v^H R_0 v`.
    fn sensing_gain(&self, v: &CVector) -> f64;
    fn total_power(&self) -> f64;

    /// `v^H (sum W + R_0) v`.
    fn total_gain(&self, v: &CVector) -> f64 {
        (0..self.num_gus()).map(|n| self.gu_gain(n, v)).sum::<f64>()
            + (0..self.num_cavs()).map(|j| self.cav_gain(j, v)).sum::<f64>()
            + self.sensing_gain(v)
    }
}

impl Transmit for BeamVectors {
    fn num_gus(&self) -> usize {
        self.gus.len()
    }
    fn num_cavs(&self) -> usize {
        self.cavs.len()
    }
    fn gu_gain(&self, n: usize, v: &CVector) -> f64 {
        abs2_inner(v, &self.gus[n])
    }
    fn cav_gain(&self, j: usize, v: &CVector) -> f64 {
        abs2_inner(v, &self.cavs[j])
    }
    fn sensing_gain(&self, v: &CVector) -> f64 {
        quad_form(&self.sensing, v)
    }
    fn total_power(&self) -> f64 {
        self.gus.iter().chain(&self.cavs).map(|w| w.norm_squared()).sum::<f64>() + trace_real(&self.sensing)
    }
}

impl Transmit for LiftedBeamforming {
    fn num_gus(&self) -> usize {
        self.gus.len()
    }
    fn num_cavs(&self) -> usize {
        self.cavs.len()
    }
    fn gu_gain(&self, n: usize, v: &CVector) -> f64 {
        quad_form(&self.gus[n], v)
    }
    fn cav_gain(&self, j: usize, v: &CVector) -> f64 {
        quad_form(&self.cavs[j], v)
    }
    fn sensing_gain(&self, v: &CVector) -> f64 {
        quad_form(&self.sensing, v)
    }
    fn total_power(&self) -> f64 {
        self.blocks().map(trace_real).sum()
    }
}

impl BeamVectors {
    pub fn zeros(num_antennas: usize, num_gus: usize, num_cavs: usize) -> Self {
        Self {
            gus: vec![CVector::zeros(num_antennas); num_gus],
            cavs: vec![CVector::zeros(num_antennas); num_cavs],
            sensing: CMatrix::zeros(num_antennas, num_antennas),
        }
    }

    pub fn lift(&self) -> LiftedBeamforming {
        LiftedBeamforming {
            gus: self.gus.iter().map(outer).collect(),
            cavs: self.cavs.iter().map(outer).collect(),
            sensing: self.sensing.clone(),
        }
    }

    pub fn scaled(&self, power_factor: f64) -> Self {
        let a = power_factor.sqrt();
        Self {
            gus: self.gus.iter().map(|w| w.map(|z| z * a)).collect(),
            cavs: self.cavs.iter().map(|w| w.map(|z| z * a)).collect(),
            sensing: self.sensing.map(|z| z * power_factor),
        }
    }
}

impl LiftedBeamforming {
    pub fn zeros(num_antennas: usize, num_gus: usize, num_cavs: usize) -> Self {
        let z = CMatrix::zeros(num_antennas, num_antennas);
        Self {
            gus: vec![z.clone(); num_gus],
            cavs: vec![z.clone(); num_cavs],
            sensing: z,
        }
    }

    /// Blocks in solver order: GUs, then CAVs, then the sensing covariance.
    pub fn blocks(&self) -> impl Iterator<Item = &CMatrix> {
        self.gus.iter().chain(&self.cavs).chain(std::iter::once(&self.sensing))
    }

    pub fn from_blocks(mut blocks: Vec<CMatrix>, num_gus: usize, num_cavs: usize) -> Self {
        assert_eq!(blocks.len(), num_gus + num_cavs + 1);
        let sensing = blocks.pop().unwrap();
        let cavs = blocks.split_off(num_gus);
        Self { gus: blocks, cavs, sensing }
    }

    /// `sum W + R_0`.
    pub fn total_covariance(&self) -> CMatrix {
        let mut acc = self.sensing.clone();
        for b in self.gus.iter().chain(&self.cavs) {
            acc += b;
        }
        acc
    }

    /// Checks that every block is Hermitian and PSD within `tol` (relative to
    /// the block's scale).
    pub fn validate(&self, tol: f64) -> Result<()> {
        for b in self.blocks() {
            let scale = 1.0 + b.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let dev = hermitian_deviation(b);
            if dev > 1e-10 * scale {
                return Err(Error::NotHermitian(dev));
            }
            let min = min_eigenvalue(b);
            if min < -tol * scale {
                return Err(Error::NotPsd(min));
            }
        }
        Ok(())
    }
}

pub fn sinr_gu<T: Transmit>(n: usize, channels: &ChannelSet, x: &T, noise: f64) -> f64 {
    let h = &channels.gus[n].h;
    let signal = x.gu_gain(n, h);
    let interference = x.total_gain(h) - signal;
    signal / (interference.max(0.0) + noise)
}

pub fn sinr_cav<T: Transmit>(j: usize, channels: &ChannelSet, x: &T, noise: f64) -> f64 {
    let h = &channels.cavs[j].h;
    let signal = x.cav_gain(j, h);
    let interference = x.total_gain(h) - signal;
    signal / (interference.max(0.0) + noise)
}

pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

pub fn gu_rates<T: Transmit>(channels: &ChannelSet, x: &T, noise: f64) -> Vec<f64> {
    (0..channels.gus.len()).map(|n| rate(sinr_gu(n, channels, x, noise))).collect()
}

pub fn cav_rates<T: Transmit>(channels: &ChannelSet, x: &T, noise: f64) -> Vec<f64> {
    (0..channels.cavs.len()).map(|j| rate(sinr_cav(j, channels, x, noise))).collect()
}

/// Objective: sum rate of the ground users only.
pub fn sum_rate<T: Transmit>(channels: &ChannelSet, x: &T, noise: f64) -> f64 {
    gu_rates(channels, x, noise).iter().sum()
}

/// `a^H (sum W + R_0) a`.
pub fn beampattern_gain<T: Transmit>(steering: &CVector, x: &T) -> f64 {
    x.total_gain(steering)
}

/// Per-target `gain_k - d_k^2 Gamma`.
pub fn sensing_slacks<T: Transmit>(channels: &ChannelSet, x: &T, gamma_watts: f64) -> Vec<f64> {
    channels
        .targets
        .iter()
        .map(|t| beampattern_gain(&t.steering, x) - t.distance * t.distance * gamma_watts)
        .collect()
}

/// Sensing requirement, with a `1e-9` relative allowance.
pub fn sensing_feasible<T: Transmit>(channels: &ChannelSet, x: &T, gamma_watts: f64) -> bool {
    channels
        .targets
        .iter()
        .zip(sensing_slacks(channels, x, gamma_watts))
        .all(|(t, s)| s >= -1e-9 * t.distance * t.distance * gamma_watts)
}

pub fn total_power<T: Transmit>(x: &T) -> f64 {
    x.total_power()
}

/// GU rate in trace form, `log2(tr(W_n H_n) + E_n) - log2(E_n)`.
pub fn lifted_rate_gu(n: usize, channels: &ChannelSet, x: &LiftedBeamforming, noise: f64, psd_tol: f64) -> Result<f64> {
    x.validate(psd_tol)?;
    let h = &channels.gus[n].h;
    let signal = quad_form(&x.gus[n], h);
    let e = quad_form(&x.total_covariance(), h) - signal + noise;
    Ok((signal + e).log2() - e.log2())
}

/// CAV rate in trace form.
pub fn lifted_rate_cav(j: usize, channels: &ChannelSet, x: &LiftedBeamforming, noise: f64, psd_tol: f64) -> Result<f64> {
    x.validate(psd_tol)?;
    let h = &channels.cavs[j].h;
    let signal = quad_form(&x.cavs[j], h);
    let f = quad_form(&x.total_covariance(), h) - signal + noise;
    Ok((signal + f).log2() - f.log2())
}
