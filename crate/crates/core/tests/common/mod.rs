#![allow(dead_code)]

use maiscc::channel::{AntennaPlacement, ChannelModel, NlosDraws};
use maiscc::control::ControlPlant;
use maiscc::linalg::{c, CVector, Complex64};
use maiscc::metrics::BeamVectors;
use maiscc::pso::FitnessContext;
use maiscc::scenario::{stream_rng, PsoParams, RngStream, ScenarioConfig};
use nalgebra::DMatrix;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random plant with `n` states and `n` inputs and measurements; random
/// dense `B` and `G` are almost surely full rank, hence stabilizable and
/// detectable.
pub fn random_plant(rng: &mut ChaCha20Rng, n: usize) -> ControlPlant {
    let mat = |rng: &mut ChaCha20Rng, r: usize, cols: usize, s: f64| DMatrix::from_fn(r, cols, |_, _| s * normal(rng));
    let spd = |rng: &mut ChaCha20Rng, k: usize| {
        let x = mat(rng, k, k, 1.0);
        &x * x.transpose() + DMatrix::identity(k, k) * 0.5
    };
    ControlPlant {
        a: mat(rng, n, n, 0.6),
        b: mat(rng, n, n, 1.0),
        g: mat(rng, n, n, 1.0),
        q: spd(rng, n),
        q1: DMatrix::identity(n, n),
        r: spd(rng, n),
        sigma_v: spd(rng, n) * 0.1,
        sigma_w: spd(rng, n) * 0.1,
        lqr_budget: 1e3,
    }
}

/// Two antennas, two GUs, no CAVs or targets, in a `side_wavelengths` square.
pub fn toy_config(seed: u64, side_wavelengths: f64, max_power_dbm: f64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        num_antennas: 2,
        num_gus: 2,
        num_cavs: 0,
        num_targets: 0,
        region_size: side_wavelengths,
        min_spacing: 0.5,
        max_power_dbm,
        plants: vec![],
        pso: PsoParams::default(),
        ..ScenarioConfig::default()
    }
}

pub struct Toy {
    pub config: ScenarioConfig,
    pub model: ChannelModel,
    pub beams: BeamVectors,
    pub ctx: FitnessContext,
}

/// Toy scenario with seeded random fixed beams at full power.
pub fn toy(seed: u64, side_wavelengths: f64, max_power_dbm: f64) -> Toy {
    let config = toy_config(seed, side_wavelengths, max_power_dbm);
    let positions = config.place_entities(&mut stream_rng(seed, RngStream::Layout));
    let nlos = NlosDraws::draw(&mut stream_rng(seed, RngStream::Nlos), 2, 2, 0);
    let model = ChannelModel::new(&config, &positions, nlos).unwrap();
    let mut rng = stream_rng(seed, RngStream::Randomization);
    let gus: Vec<CVector> = (0..2).map(|_| maiscc::channel::draw_cn(&mut rng, 2)).collect();
    let beams = BeamVectors { gus, cavs: vec![], sensing: maiscc::linalg::CMatrix::zeros(2, 2) };
    let p = config.max_power_watts();
    let beams = beams.clone().scaled(p / maiscc::metrics::total_power(&beams));
    let ctx = FitnessContext {
        noise_watts: config.noise_watts(),
        sense_thresh_watts: config.sense_thresh_watts(),
        r_min: vec![],
        min_spacing: config.min_spacing_meters(),
        penalty_sensing: 100.0,
        penalty_control: 100.0,
        penalty_spacing: 100.0,
    };
    Toy { config, model, beams, ctx }
}

/// Exhaustive search over a `points`-per-axis grid for both antennas
/// (`points^4` placements), skipping spacing violations. Returns the best
/// sum rate and its placement.
///
/// Channel entries depend only on their own antenna's position, so the
/// per-position products `conj(h_m) w_m` are tabulated once and each grid
/// placement costs a few complex additions.
pub fn grid_optimum(toy: &Toy, points: usize) -> (f64, AntennaPlacement) {
    let side = toy.config.region_meters();
    let d_min = toy.config.min_spacing_meters();
    let coords: Vec<f64> = (0..points).map(|i| side * i as f64 / (points - 1) as f64).collect();
    let cells: Vec<[f64; 2]> = coords.iter().flat_map(|&x| coords.iter().map(move |&y| [x, y])).collect();
    let noise = toy.config.noise_watts();
    // z[cell][antenna][link][beam]
    let z: Vec<[[[Complex64; 2]; 2]; 2]> = cells
        .iter()
        .map(|&p| {
            let ch = toy.model.build(&AntennaPlacement::new(vec![p, p]));
            let mut out = [[[c(0.0, 0.0); 2]; 2]; 2];
            for (m, row) in out.iter_mut().enumerate() {
                for (l, link) in row.iter_mut().enumerate() {
                    for (i, slot) in link.iter_mut().enumerate() {
                        *slot = ch.gus[l].h[m].conj() * toy.beams.gus[i][m];
                    }
                }
            }
            out
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (a, pa) in cells.iter().enumerate() {
        for (b, pb) in cells.iter().enumerate() {
            if ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt() < d_min {
                continue;
            }
            let mut rate = 0.0;
            for l in 0..2 {
                let g = |i: usize| (z[a][0][l][i] + z[b][1][l][i]).norm_sqr();
                let (s, i) = (g(l), g(1 - l));
                rate += (1.0 + s / (i + noise)).log2();
            }
            if rate > best.0 {
                best = (rate, a, b);
            }
        }
    }
    (best.0, AntennaPlacement::new(vec![cells[best.1], cells[best.2]]))
}
