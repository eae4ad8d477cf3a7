//! Array geometry, steering vectors and Rician channel synthesis.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{c, CVector};
use crate::scenario::{ArrayAxes, EntityPositions, PathlossConvention, ScenarioConfig};
use crate::{Error, Result};

/// Planar antenna coordinates `(x_m, y_m)` in meters inside `[0, D]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaPlacement {
    positions: Vec<[f64; 2]>,
}

impl AntennaPlacement {
    pub fn new(positions: Vec<[f64; 2]>) -> Self {
        Self { positions }
    }

    /// Builds a placement from a flat `[x1, y1, x2, y2, ...]` slice.
    pub fn from_flat(flat: &[f64]) -> Self {
        debug_assert!(flat.len() % 2 == 0);
        Self {
            positions: flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of antenna pairs closer than `d_min`. Pairs within a relative
    /// `1e-9` of `d_min` count as compliant, so grids built at exactly `d_min`
    /// pass despite round-off.
    pub fn violating_pairs(&self, d_min: f64) -> usize {
        let p = &self.positions;
        let mut count = 0;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                if dist2(p[i], p[j]).sqrt() < d_min * (1.0 - 1e-9) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Smallest pairwise distance (`+inf` for a single antenna).
    pub fn min_pairwise_distance(&self) -> f64 {
        let p = &self.positions;
        let mut best = f64::INFINITY;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                best = best.min(dist2(p[i], p[j]).sqrt());
            }
        }
        best
    }

    pub fn within_region(&self, side: f64) -> bool {
        self.positions
            .iter()
            .all(|p| (0.0..=side).contains(&p[0]) && (0.0..=side).contains(&p[1]))
    }

    /// Placement satisfies both the region and the spacing constraints.
    pub fn is_valid(&self, side: f64, d_min: f64) -> bool {
        self.within_region(side) && self.violating_pairs(d_min) == 0
    }

    pub fn translated(&self, delta: [f64; 2]) -> Self {
        Self {
            positions: self.positions.iter().map(|p| [p[0] + delta[0], p[1] + delta[1]]).collect(),
        }
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Virtual angle-of-departure vector `p = (sin(theta) cos(phi), cos(theta))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionVector {
    pub p: [f64; 2],
    pub theta: f64,
    pub phi: f64,
}

impl DirectionVector {
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        Self {
            p: [theta.sin() * phi.cos(), theta.cos()],
            theta,
            phi,
        }
    }

    pub fn from_components(p: [f64; 2]) -> Self {
        let theta = p[1].clamp(-1.0, 1.0).acos();
        let st = theta.sin();
        let phi = if st > 1e-12 { (p[0] / st).clamp(-1.0, 1.0).acos() } else { 0.0 };
        Self { p, theta, phi }
    }
}

/// Direction from the BS to `q` projected on the array axes, plus the distance.
pub fn direction_between(q_bs: [f64; 3], q: [f64; 3], axes: &ArrayAxes) -> Result<(DirectionVector, f64)> {
    let d = [q[0] - q_bs[0], q[1] - q_bs[1], q[2] - q_bs[2]];
    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(dist > 0.0) {
        return Err(Error::CoincidentPoints);
    }
    let u = [d[0] / dist, d[1] / dist, d[2] / dist];
    let dot = |v: &[f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let p = [dot(&axes.horizontal), dot(&axes.vertical)];
    Ok((DirectionVector::from_components(p), dist))
}

/// `a_m = exp(j 2 pi / lambda * p . s_m)`.
pub fn steering_vector(placement: &AntennaPlacement, dir: &DirectionVector, wavelength: f64) -> CVector {
    let k = 2.0 * PI / wavelength;
    CVector::from_iterator(
        placement.len(),
        placement.positions().iter().map(|s| {
            let (sin, cos) = (k * (dir.p[0] * s[0] + dir.p[1] * s[1])).sin_cos();
            c(cos, sin)
        }),
    )
}

/// Large-scale amplitude factor for a link of length `d`.
pub fn large_scale_amplitude(beta0: f64, alpha: f64, d: f64, convention: PathlossConvention) -> f64 {
    let g = beta0 * d.powf(-alpha);
    match convention {
        PathlossConvention::Power => g.sqrt(),
        PathlossConvention::Amplitude => g,
    }
}

/// `h = g (sqrt(K/(K+1)) a + sqrt(1/(K+1)) a_nlos)`; `K = inf` gives pure LoS.
pub fn rician_channel(steering: &CVector, nlos: &CVector, k_factor: f64, amplitude: f64) -> CVector {
    let (los_w, nlos_w) = if k_factor.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k_factor / (k_factor + 1.0)).sqrt(), (1.0 / (k_factor + 1.0)).sqrt())
    };
    steering.zip_map(nlos, |a, n| (a * los_w + n * nlos_w) * amplitude)
}

/// Draws a standard circularly-symmetric complex Gaussian vector.
pub fn draw_cn<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_iterator(
        len,
        (0..len).map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c(re * s, im * s)
        }),
    )
}

/// Frozen small-scale fading for every GU and CAV link.
#[derive(Debug, Clone, PartialEq)]
pub struct NlosDraws {
    pub gus: Vec<CVector>,
    pub cavs: Vec<CVector>,
}

impl NlosDraws {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, num_antennas: usize, num_gus: usize, num_cavs: usize) -> Self {
        let gus = (0..num_gus).map(|_| draw_cn(rng, num_antennas)).collect();
        let cavs = (0..num_cavs).map(|_| draw_cn(rng, num_antennas)).collect();
        Self { gus, cavs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub distance: f64,
    pub direction: DirectionVector,
}

/// Realized channel of one communication link.
#[derive(Debug, Clone, PartialEq)]
pub struct CommLink {
    pub distance: f64,
    pub direction: DirectionVector,
    pub nlos: CVector,
    pub steering: CVector,
    pub h: CVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetLink {
    pub distance: f64,
    pub direction: DirectionVector,
    pub steering: CVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub gus: Vec<CommLink>,
    pub cavs: Vec<CommLink>,
    pub targets: Vec<TargetLink>,
}

impl ChannelSet {
    pub fn num_antennas(&self) -> usize {
        self.gus
            .first()
            .or(self.cavs.first())
            .map(|l| l.h.len())
            .or(self.targets.first().map(|t| t.steering.len()))
            .unwrap_or(0)
    }
}

/// Placement-independent part of the channel: geometry, frozen NLoS draws
/// and propagation constants.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub gus: Vec<LinkGeometry>,
    pub cavs: Vec<LinkGeometry>,
    pub targets: Vec<LinkGeometry>,
    pub nlos: NlosDraws,
    pub wavelength: f64,
    pub k_factor: f64,
    gu_amplitude: Vec<f64>,
    cav_amplitude: Vec<f64>,
}

impl ChannelModel {
    pub fn new(config: &ScenarioConfig, positions: &EntityPositions, nlos: NlosDraws) -> Result<Self> {
        let geo = |list: &[[f64; 3]]| -> Result<Vec<LinkGeometry>> {
            list.iter()
                .map(|q| {
                    direction_between(config.bs_position, *q, &config.array_axes)
                        .map(|(direction, distance)| LinkGeometry { distance, direction })
                })
                .collect()
        };
        let gus = geo(&positions.gus)?;
        let cavs = geo(&positions.cavs)?;
        let targets = geo(&positions.targets)?;
        if nlos.gus.len() != gus.len() || nlos.cavs.len() != cavs.len() {
            return Err(Error::Shape("NLoS draws do not match the entity count".into()));
        }
        let beta0 = config.ref_gain_linear();
        let amp = |links: &[LinkGeometry]| {
            links
                .iter()
                .map(|l| large_scale_amplitude(beta0, config.pathloss_exp, l.distance, config.pathloss_convention))
                .collect()
        };
        Ok(Self {
            gu_amplitude: amp(&gus),
            cav_amplitude: amp(&cavs),
            gus,
            cavs,
            targets,
            nlos,
            wavelength: config.wavelength,
            k_factor: config.rician_k,
        })
    }

    /// Recomputes every placement-dependent quantity, reusing the frozen
    /// NLoS draws.
    pub fn build(&self, placement: &AntennaPlacement) -> ChannelSet {
        let comm = |links: &[LinkGeometry], nlos: &[CVector], amp: &[f64]| -> Vec<CommLink> {
            links
                .iter()
                .zip(nlos)
                .zip(amp)
                .map(|((l, n), &g)| {
                    let steering = steering_vector(placement, &l.direction, self.wavelength);
                    let h = rician_channel(&steering, n, self.k_factor, g);
                    CommLink {
                        distance: l.distance,
                        direction: l.direction,
                        nlos: n.clone(),
                        steering,
                        h,
                    }
                })
                .collect()
        };
        ChannelSet {
            gus: comm(&self.gus, &self.nlos.gus, &self.gu_amplitude),
            cavs: comm(&self.cavs, &self.nlos.cavs, &self.cav_amplitude),
            targets: self
                .targets
                .iter()
                .map(|l| TargetLink {
                    distance: l.distance,
                    direction: l.direction,
                    steering: steering_vector(placement, &l.direction, self.wavelength),
                })
                .collect(),
        }
    }
}

/// Free-function form of [`ChannelModel::build`].
pub fn build_channel_set(model: &ChannelModel, placement: &AntennaPlacement) -> ChannelSet {
    model.build(placement)
}
