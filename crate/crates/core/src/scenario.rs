//! Scenario configuration, unit conversion and seeded random streams.
//!
//! Everything downstream works in linear units (watts, meters). Decibel
//! quantities only appear in the configuration document and in reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControlPlant;
use crate::{Error, Result};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Independent random streams derived from one scenario seed.
///
/// Each stream is ChaCha20 keyed by the seed with the stream id as the
/// ChaCha stream selector, so consuming draws in one stream never shifts
/// another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Layout = 1,
    Nlos = 2,
    Pso = 3,
    RandomPlacement = 4,
    Randomization = 5,
    AoStart = 6,
}

pub fn stream_rng(seed: u64, stream: RngStream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PathlossConvention {
    /// `beta0 * d^-alpha` is a power gain; the channel amplitude is its square root.
    #[default]
    Power,
    /// `beta0 * d^-alpha` multiplies the channel amplitude directly.
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutDirective {
    Random,
}

/// Either explicit 3-D coordinates or `"random"` (uniform in the area).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Layout {
    Directive(LayoutDirective),
    Explicit(Vec<[f64; 3]>),
}

impl Default for Layout {
    fn default() -> Self {
        Layout::Directive(LayoutDirective::Random)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AreaBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Altitude band for randomly placed CAVs; an assumed band, nothing pins it down.
    pub cav_altitude: [f64; 2],
}

impl Default for AreaBounds {
    fn default() -> Self {
        Self {
            x: [0.0, 500.0],
            y: [0.0, 500.0],
            cav_altitude: [50.0, 150.0],
        }
    }
}

/// Orientation of the planar (vertically deployed) array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayAxes {
    pub horizontal: [f64; 3],
    pub vertical: [f64; 3],
}

impl Default for ArrayAxes {
    fn default() -> Self {
        // Broadside faces the (+x, +y) quadrant where the service area lies.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            horizontal: [h, -h, 0.0],
            vertical: [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoParams {
    pub swarm_size: usize,
    pub max_iters: usize,
    pub inertia_max: f64,
    pub inertia_min: f64,
    pub cognitive: f64,
    pub social: f64,
    pub penalty_sensing: f64,
    pub penalty_control: f64,
    pub penalty_spacing: f64,
    pub step_scale: f64,
    /// Draw the random learning factors per coordinate instead of per particle.
    pub per_coordinate_draws: bool,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            swarm_size: 200,
            max_iters: 300,
            inertia_max: 0.9,
            inertia_min: 0.4,
            cognitive: 1.5,
            social: 1.5,
            penalty_sensing: 100.0,
            penalty_control: 100.0,
            penalty_spacing: 100.0,
            step_scale: 1.0,
            per_coordinate_draws: false,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::config("pso.swarm_size must be at least 2"));
        }
        if self.max_iters < 1 {
            return Err(Error::config("pso.max_iters must be at least 1"));
        }
        if !(0.0 <= self.inertia_min && self.inertia_min <= self.inertia_max) {
            return Err(Error::config("pso: need 0 <= inertia_min <= inertia_max"));
        }
        let nonneg = [
            ("pso.cognitive", self.cognitive),
            ("pso.social", self.social),
            ("pso.penalty_sensing", self.penalty_sensing),
            ("pso.penalty_control", self.penalty_control),
            ("pso.penalty_spacing", self.penalty_spacing),
            ("pso.step_scale", self.step_scale),
        ];
        for (key, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{key} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AoParams {
    pub max_outer: usize,
    /// Outer-loop stopping threshold on the sum-rate gain (bits/s/Hz).
    pub outer_tol: f64,
    pub sca_max_iters: usize,
    pub sca_tol: f64,
    pub psd_tol: f64,
    pub dare_tol: f64,
    pub dare_max_iters: usize,
    /// Gaussian randomization samples for rank-one recovery.
    pub randomization_samples: usize,
    /// Extra random placements tried next to the two baseline placements
    /// when choosing the alternating optimization's starting point.
    pub start_candidates: usize,
}

impl Default for AoParams {
    fn default() -> Self {
        Self {
            max_outer: 30,
            outer_tol: 1e-3,
            sca_max_iters: 30,
            sca_tol: 1e-4,
            psd_tol: 1e-8,
            dare_tol: 1e-11,
            dare_max_iters: 100_000,
            randomization_samples: 200,
            start_candidates: 3,
        }
    }
}

impl AoParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 || self.sca_max_iters == 0 || self.dare_max_iters == 0 {
            return Err(Error::config("ao iteration caps must be positive"));
        }
        if !(self.outer_tol > 0.0 && self.outer_tol.is_finite()) {
            return Err(Error::config("ao.outer_tol must be positive"));
        }
        for (key, v) in [
            ("ao.sca_tol", self.sca_tol),
            ("ao.psd_tol", self.psd_tol),
            ("ao.dare_tol", self.dare_tol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("{key} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub num_antennas: usize,
    pub num_gus: usize,
    pub num_cavs: usize,
    pub num_targets: usize,
    /// Side of the square antenna movement region, in wavelengths.
    pub region_size: f64,
    /// Minimum inter-antenna spacing, in wavelengths.
    pub min_spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    pub bs_position: [f64; 3],
    pub array_axes: ArrayAxes,
    pub area: AreaBounds,
    pub gu_positions: Layout,
    pub cav_positions: Layout,
    pub target_positions: Layout,
    pub ref_gain_db: f64,
    pub pathloss_exp: f64,
    pub rician_k: f64,
    pub noise_dbm: f64,
    pub sense_thresh_dbm: f64,
    pub max_power_dbm: f64,
    pub pathloss_convention: PathlossConvention,
    /// Clamp the intrinsic entropy rate `log2|det A|` at zero.
    pub entropy_clamp: bool,
    /// One plant shared by every CAV, or one per CAV.
    pub plants: Vec<ControlPlant>,
    pub pso: PsoParams,
    pub ao: AoParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            num_antennas: 8,
            num_gus: 3,
            num_cavs: 2,
            num_targets: 3,
            region_size: 10.0,
            min_spacing: 0.5,
            wavelength: 0.1,
            bs_position: [100.0, 100.0, 10.0],
            array_axes: ArrayAxes::default(),
            area: AreaBounds::default(),
            gu_positions: Layout::default(),
            cav_positions: Layout::default(),
            target_positions: Layout::default(),
            ref_gain_db: -60.0,
            pathloss_exp: 2.0,
            rician_k: 31.3,
            noise_dbm: -100.0,
            sense_thresh_dbm: -15.0,
            max_power_dbm: 50.0,
            pathloss_convention: PathlossConvention::Power,
            entropy_clamp: true,
            plants: vec![ControlPlant::reference()],
            pso: PsoParams::default(),
            ao: AoParams::default(),
        }
    }
}

/// Resolved 3-D positions of every served entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityPositions {
    pub gus: Vec<[f64; 3]>,
    pub cavs: Vec<[f64; 3]>,
    pub targets: Vec<[f64; 3]>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn region_meters(&self) -> f64 {
        self.region_size * self.wavelength
    }

    pub fn min_spacing_meters(&self) -> f64 {
        self.min_spacing * self.wavelength
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn sense_thresh_watts(&self) -> f64 {
        dbm_to_watts(self.sense_thresh_dbm)
    }

    pub fn max_power_watts(&self) -> f64 {
        dbm_to_watts(self.max_power_dbm)
    }

    pub fn ref_gain_linear(&self) -> f64 {
        db_to_linear(self.ref_gain_db)
    }

    /// One plant per CAV (a single configured plant is shared).
    pub fn cav_plants(&self) -> Vec<ControlPlant> {
        if self.plants.len() == 1 {
            vec![self.plants[0].clone(); self.num_cavs]
        } else {
            self.plants.clone()
        }
    }

    /// Overrides the LQR budget of every plant.
    pub fn set_lqr_budget(&mut self, budget: f64) {
        for p in &mut self.plants {
            p.lqr_budget = budget;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_antennas < 1 {
            return Err(Error::config("num_antennas must be >= 1"));
        }
        if self.num_gus < 1 {
            return Err(Error::config("num_gus must be >= 1"));
        }
        if !(self.region_size.is_finite() && self.region_size > 0.0) {
            return Err(Error::config("region_size must be > 0"));
        }
        if !(self.min_spacing >= 0.0 && self.min_spacing < self.region_size) {
            return Err(Error::config("min_spacing must satisfy 0 <= min_spacing < region_size"));
        }
        if self.min_spacing > 0.0 {
            let per_side = (self.region_size / self.min_spacing).floor() + 1.0;
            if (self.num_antennas as f64) > per_side * per_side {
                return Err(Error::config(format!(
                    "region of {} wavelengths cannot host {} antennas at spacing {}",
                    self.region_size, self.num_antennas, self.min_spacing
                )));
            }
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::config("wavelength must be > 0"));
        }
        for (key, v) in [
            ("ref_gain_db", self.ref_gain_db),
            ("pathloss_exp", self.pathloss_exp),
            ("noise_dbm", self.noise_dbm),
            ("sense_thresh_dbm", self.sense_thresh_dbm),
            ("max_power_dbm", self.max_power_dbm),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{key} must be finite")));
            }
        }
        if !(self.rician_k.is_finite() && self.rician_k >= 0.0) {
            return Err(Error::config("rician_k must be finite and >= 0"));
        }
        if !(self.max_power_watts() > 0.0) {
            return Err(Error::config("max_power_dbm converts to zero watts"));
        }
        let a = &self.area;
        if !(a.x[0] < a.x[1] && a.y[0] < a.y[1] && a.cav_altitude[0] <= a.cav_altitude[1]) {
            return Err(Error::config("area bounds must be increasing"));
        }
        check_axes(&self.array_axes)?;
        for (key, layout, count) in [
            ("gu_positions", &self.gu_positions, self.num_gus),
            ("cav_positions", &self.cav_positions, self.num_cavs),
            ("target_positions", &self.target_positions, self.num_targets),
        ] {
            if let Layout::Explicit(list) = layout {
                if list.len() != count {
                    return Err(Error::config(format!(
                        "{key} lists {} positions but {count} are configured",
                        list.len()
                    )));
                }
                if list.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("{key} contains non-finite values")));
                }
            }
        }
        if self.num_cavs > 0 && !(self.plants.len() == 1 || self.plants.len() == self.num_cavs) {
            return Err(Error::config(format!(
                "plants must hold 1 or num_cavs ({}) entries, found {}",
                self.num_cavs,
                self.plants.len()
            )));
        }
        for (i, p) in self.plants.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::config(format!("plants[{i}]: {e}")))?;
        }
        self.pso.validate()?;
        self.ao.validate()?;
        Ok(())
    }

    /// Resolves the GU, CAV and target layout. Random layouts draw uniform
    /// i.i.d. positions inside the area (GUs and targets on the ground, CAVs
    /// in the altitude band); explicit layouts are returned verbatim.
    pub fn place_entities<R: Rng + ?Sized>(&self, rng: &mut R) -> EntityPositions {
        let a = &self.area;
        let mut draw = |layout: &Layout, count: usize, z: Option<[f64; 2]>| match layout {
            Layout::Explicit(list) => list.clone(),
            Layout::Directive(LayoutDirective::Random) => (0..count)
                .map(|_| {
                    let x = rng.random_range(a.x[0]..=a.x[1]);
                    let y = rng.random_range(a.y[0]..=a.y[1]);
                    let h = match z {
                        Some([lo, hi]) if hi > lo => rng.random_range(lo..=hi),
                        Some([lo, _]) => lo,
                        None => 0.0,
                    };
                    [x, y, h]
                })
                .collect(),
        };
        let gus = draw(&self.gu_positions, self.num_gus, None);
        let cavs = draw(&self.cav_positions, self.num_cavs, Some(a.cav_altitude));
        let targets = draw(&self.target_positions, self.num_targets, None);
        EntityPositions { gus, cavs, targets }
    }
}

fn check_axes(axes: &ArrayAxes) -> Result<()> {
    let norm = |v: &[f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (h, v) = (&axes.horizontal, &axes.vertical);
    let dot = h[0] * v[0] + h[1] * v[1] + h[2] * v[2];
    if (norm(h) - 1.0).abs() > 1e-6 || (norm(v) - 1.0).abs() > 1e-6 || dot.abs() > 1e-6 {
        return Err(Error::config("array_axes must be orthonormal"));
    }
    Ok(())
}
