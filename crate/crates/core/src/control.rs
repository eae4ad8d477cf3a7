//! Steady-state LQG quantities behind the CAV control-rate requirement.
//!
//! Both Riccati equations are solved by plain fixed-point (value) iteration,
//! which is adequate for the handful of states a vehicle model carries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::frobenius;
use crate::{Error, Result};

type Mat = DMatrix<f64>;

/// Discrete-time LTI vehicle model with its LQR weights, noise covariances
/// and average-cost budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPlant {
    #[serde(with = "rows")]
    pub a: Mat,
    #[serde(with = "rows")]
    pub b: Mat,
    #[serde(with = "rows")]
    pub g: Mat,
    #[serde(with = "rows")]
    pub q: Mat,
    /// Terminal weight; only used by finite-horizon costs, kept for completeness.
    #[serde(with = "rows")]
    pub q1: Mat,
    #[serde(with = "rows")]
    pub r: Mat,
    #[serde(with = "rows")]
    pub sigma_v: Mat,
    #[serde(with = "rows")]
    pub sigma_w: Mat,
    pub lqr_budget: f64,
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have unequal lengths"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

impl ControlPlant {
    /// The repository's reference vehicle: a four-state planar
    /// position/velocity model with mildly unstable drift, actuated on every
    /// state and observed through noisy full-state measurements. Full
    /// actuation keeps `det(N M) > 0`; with fewer inputs than states `M` is
    /// singular and the rate threshold collapses to the entropy term. The
    /// noise scale is chosen so that the minimum achievable average cost
    /// comes out near 2.83.
    pub fn reference() -> Self {
        let dt = 0.1;
        let a = Mat::from_row_slice(
            4,
            4,
            &[
                1.02, 0.0, dt, 0.0, //
                0.0, 1.02, 0.0, dt, //
                0.0, 0.0, 1.05, 0.0, //
                0.0, 0.0, 0.0, 1.05,
            ],
        );
        let b = Mat::identity(4, 4) * dt;
        let noise = REFERENCE_NOISE_SCALE;
        Self {
            a,
            b,
            g: Mat::identity(4, 4),
            q: Mat::identity(4, 4),
            q1: Mat::identity(4, 4),
            r: Mat::identity(4, 4) * 0.1,
            sigma_v: Mat::identity(4, 4) * noise,
            sigma_w: Mat::identity(4, 4) * (0.01 * noise),
            lqr_budget: 3.0 * REFERENCE_LQR_MIN,
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n1 = self.a.nrows();
        let n2 = self.b.ncols();
        let n3 = self.g.nrows();
        let shape = |name: &str, m: &Mat, r: usize, c: usize| -> Result<()> {
            if m.shape() != (r, c) {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        if n1 == 0 {
            return Err(Error::Shape("A must be non-empty".into()));
        }
        shape("A", &self.a, n1, n1)?;
        shape("B", &self.b, n1, n2)?;
        shape("G", &self.g, n3, n1)?;
        shape("Q", &self.q, n1, n1)?;
        shape("Q1", &self.q1, n1, n1)?;
        shape("R", &self.r, n2, n2)?;
        shape("sigma_v", &self.sigma_v, n1, n1)?;
        shape("sigma_w", &self.sigma_w, n3, n3)?;
        if self.a.iter().chain(self.b.iter()).chain(self.g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Shape("plant matrices must be finite".into()));
        }
        for (name, m, strict) in [
            ("Q", &self.q, false),
            ("Q1", &self.q1, false),
            ("R", &self.r, true),
            ("sigma_v", &self.sigma_v, false),
            ("sigma_w", &self.sigma_w, true),
        ] {
            check_definite(name, m, strict)?;
        }
        if !self.lqr_budget.is_finite() {
            return Err(Error::Shape("lqr_budget must be finite".into()));
        }
        Ok(())
    }
}

const REFERENCE_NOISE_SCALE: f64 = 6.842_897_379_569_078;
pub const REFERENCE_LQR_MIN: f64 = 2.8304;

fn check_definite(name: &str, m: &Mat, strict: bool) -> Result<()> {
    let asym = (m - m.transpose()).abs().max();
    let scale = 1.0 + m.abs().max();
    if asym > 1e-10 * scale {
        return Err(Error::Shape(format!("{name} is not symmetric")));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    let ok = if strict { min_eig > 0.0 } else { min_eig >= -1e-10 * scale };
    if !ok {
        let kind = if strict { "positive definite" } else { "positive semidefinite" };
        return Err(Error::Shape(format!("{name} is not {kind} (min eigenvalue {min_eig:.3e})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iters: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrRiccati {
    pub s: Mat,
    /// `S B (R + B^T S B)^-1 B^T S`.
    pub m: Mat,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRiccati {
    /// A-priori (prediction) error covariance.
    pub p: Mat,
    pub kalman_gain: Mat,
    /// A-posteriori estimation error covariance.
    pub sigma: Mat,
    pub iterations: usize,
}

fn sym(m: Mat) -> Mat {
    (&m + m.transpose()) * 0.5
}

fn inverse(m: Mat, ctx: &'static str) -> Result<Mat> {
    m.try_inverse().ok_or(Error::Singular(ctx))
}

fn lqr_gain_term(s: &Mat, b: &Mat, r: &Mat) -> Result<Mat> {
    let sb = s * b;
    let inner = inverse(r + b.transpose() * &sb, "R + B^T S B")?;
    Ok(sym(&sb * inner * sb.transpose()))
}

/// Residual of `S = Q + A^T (S - M(S)) A`, relative to `1 + ||S||_F`.
pub fn lqr_residual(plant: &ControlPlant, s: &Mat) -> Result<f64> {
    let m = lqr_gain_term(s, &plant.b, &plant.r)?;
    let rhs = &plant.q + plant.a.transpose() * (s - m) * &plant.a;
    Ok(frobenius(&(s - rhs)) / (1.0 + frobenius(s)))
}

/// Residual of `P = A P A^T - A K (G P G^T + Sw) K^T A^T + Sv`.
pub fn filter_residual(plant: &ControlPlant, p: &Mat) -> Result<f64> {
    let (sigma, _) = posterior(plant, p)?;
    let rhs = &plant.a * sigma * plant.a.transpose() + &plant.sigma_v;
    Ok(frobenius(&(p - rhs)) / (1.0 + frobenius(p)))
}

fn posterior(plant: &ControlPlant, p: &Mat) -> Result<(Mat, Mat)> {
    let g = &plant.g;
    let innov = g * p * g.transpose() + &plant.sigma_w;
    let k = p * g.transpose() * inverse(innov.clone(), "G P G^T + Sigma_w")?;
    let sigma = sym(p - &k * innov * k.transpose());
    Ok((sigma, k))
}

/// Stabilizing solution of the control Riccati equation and the matching
/// `M` matrix.
pub fn solve_dare_lqr(plant: &ControlPlant, opts: &DareOptions) -> Result<LqrRiccati> {
    let (a, q) = (&plant.a, &plant.q);
    let at = a.transpose();
    let mut s = q.clone();
    let mut last_step = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let m = lqr_gain_term(&s, &plant.b, &plant.r)?;
        let next = sym(q + &at * (&s - m) * a);
        last_step = frobenius(&(&next - &s));
        let norm = frobenius(&next);
        s = next;
        if !norm.is_finite() || norm > 1e300 {
            break;
        }
        if last_step <= opts.tol * (1.0 + norm) {
            let m = lqr_gain_term(&s, &plant.b, &plant.r)?;
            return Ok(LqrRiccati { s, m, iterations: it });
        }
    }
    Err(Error::RiccatiDivergence {
        which: "control (not stabilizable?)",
        iters: opts.max_iters,
        residual: last_step,
    })
}

/// Steady-state Kalman filter: prediction covariance `P`, gain `K` and
/// estimation error covariance `Sigma`.
pub fn solve_dare_filter(plant: &ControlPlant, opts: &DareOptions) -> Result<FilterRiccati> {
    let a = &plant.a;
    let at = a.transpose();
    let mut p = plant.sigma_v.clone();
    let mut last_step = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let (sigma, _) = posterior(plant, &p)?;
        let next = sym(a * sigma * &at + &plant.sigma_v);
        last_step = frobenius(&(&next - &p));
        let norm = frobenius(&next);
        p = next;
        if !norm.is_finite() || norm > 1e300 {
            break;
        }
        if last_step <= opts.tol * (1.0 + norm) {
            let (sigma, kalman_gain) = posterior(plant, &p)?;
            return Ok(FilterRiccati { p, kalman_gain, sigma, iterations: it });
        }
    }
    Err(Error::RiccatiDivergence {
        which: "filter (not detectable?)",
        iters: opts.max_iters,
        residual: last_step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxMatrices {
    pub n: Mat,
    pub lqr_min: f64,
    pub eta: f64,
}

/// `N = A Sigma A^T - Sigma + Sigma_v`, the minimum achievable average LQR
/// cost `tr(Sigma_w S) + tr(Sigma S A^T M A)` and the entropy rate
/// `log2|det A|` (clamped at zero when `clamp` is set).
///
/// The cost formula pairs the measurement covariance with `S`, so it needs
/// as many measurements as states.
pub fn aux_matrices(plant: &ControlPlant, s: &Mat, m: &Mat, sigma: &Mat, clamp: bool) -> Result<AuxMatrices> {
    let a = &plant.a;
    if plant.sigma_w.nrows() != s.nrows() {
        return Err(Error::Shape(format!(
            "minimum-cost formula needs n3 == n1 (got n3 = {}, n1 = {})",
            plant.sigma_w.nrows(),
            s.nrows()
        )));
    }
    let n = sym(a * sigma * a.transpose() - sigma + &plant.sigma_v);
    let lqr_min = (&plant.sigma_w * s).trace() + (sigma * s * a.transpose() * m * a).trace();
    let mut eta = a.determinant().abs().log2();
    if clamp {
        eta = eta.max(0.0);
    }
    Ok(AuxMatrices { n, lqr_min, eta })
}

/// Minimum CAV rate (bits/s/Hz) that keeps the average LQR cost within
/// `budget`.
pub fn min_rate_threshold(n_states: usize, aux: &AuxMatrices, m: &Mat, budget: f64) -> Result<f64> {
    if !(budget > aux.lqr_min) {
        return Err(Error::InfeasibleBudget { budget, minimum: aux.lqr_min });
    }
    let n1 = n_states as f64;
    let det = (&aux.n * m).determinant().max(0.0);
    Ok(aux.eta + 0.5 * n1 * (1.0 + n1 * det.powf(1.0 / n1) / (budget - aux.lqr_min)).log2())
}

/// `R_j - R_min`; the control requirement holds when this is `>= -1e-9`.
pub fn control_qos_slack(rate: f64, r_min: f64) -> f64 {
    rate - r_min
}

pub fn control_qos_satisfied(rate: f64, r_min: f64) -> bool {
    control_qos_slack(rate, r_min) >= -1e-9
}

/// Everything the optimizer needs from one CAV's control loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDerived {
    pub s: Mat,
    pub m: Mat,
    pub p: Mat,
    pub kalman_gain: Mat,
    pub sigma: Mat,
    pub n: Mat,
    pub lqr_min: f64,
    pub eta: f64,
    pub r_min: f64,
}

impl ControlDerived {
    pub fn compute(plant: &ControlPlant, opts: &DareOptions, clamp: bool) -> Result<Self> {
        plant.validate()?;
        let lqr = solve_dare_lqr(plant, opts)?;
        let filt = solve_dare_filter(plant, opts)?;
        let aux = aux_matrices(plant, &lqr.s, &lqr.m, &filt.sigma, clamp)?;
        let r_min = min_rate_threshold(plant.n_states(), &aux, &lqr.m, plant.lqr_budget)?;
        Ok(Self {
            s: lqr.s,
            m: lqr.m,
            p: filt.p,
            kalman_gain: filt.kalman_gain,
            sigma: filt.sigma,
            n: aux.n,
            lqr_min: aux.lqr_min,
            eta: aux.eta,
            r_min,
        })
    }
}

/// Minimum achievable cost of a plant (budget-independent).
pub fn minimum_lqr_cost(plant: &ControlPlant, opts: &DareOptions) -> Result<f64> {
    let lqr = solve_dare_lqr(plant, opts)?;
    let filt = solve_dare_filter(plant, opts)?;
    Ok(aux_matrices(plant, &lqr.s, &lqr.m, &filt.sigma, true)?.lqr_min)
}
