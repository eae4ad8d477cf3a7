//! Alternating optimization of antenna positions and beamformers, and the
//! two fixed-placement baselines (random and uniform grid).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamforming::{self, BeamformingParams, ConstraintReport, ExtractionMethod};
use crate::channel::{AntennaPlacement, ChannelModel, ChannelSet, NlosDraws};
use crate::control::{ControlDerived, DareOptions};
use crate::metrics::{self, BeamVectors, LiftedBeamforming};
use crate::pso::{self, BeamFitness, FitnessContext};
use crate::scenario::{stream_rng, EntityPositions, RngStream, ScenarioConfig};
use crate::sdp::{BarrierSolver, ConicSolver};
use crate::{Error, Result};

/// Rejection-sampling budget for random placements.
pub const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ao,
    Rap,
    Fap,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ao, Scheme::Rap, Scheme::Fap];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ao => "ao",
            Scheme::Rap => "rap",
            Scheme::Fap => "fap",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ao" => Ok(Scheme::Ao),
            "rap" => Ok(Scheme::Rap),
            "fap" => Ok(Scheme::Fap),
            _ => Err(Error::config(format!("unknown scheme {s:?} (expected ao, rap or fap)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AoStatus {
    Converged,
    MaxIters,
    Infeasible,
}

impl AoStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AoStatus::Converged => "converged",
            AoStatus::MaxIters => "max_iters",
            AoStatus::Infeasible => "infeasible",
        }
    }
}

/// Outcome of one scheme on one scenario.
#[derive(Debug, Clone)]
pub struct AoResult {
    pub scheme: Scheme,
    pub placement: AntennaPlacement,
    pub beams: BeamVectors,
    pub lifted: LiftedBeamforming,
    pub sum_rate: f64,
    pub gu_rates: Vec<f64>,
    pub cav_rates: Vec<f64>,
    pub r_min: Vec<f64>,
    pub report: ConstraintReport,
    /// `(min pairwise distance - d_min) / d_min`; `+inf` when unconstrained.
    pub spacing_slack: f64,
    /// `(o, objective)`; `o = 0` is the starting point.
    pub outer_trace: Vec<(usize, f64)>,
    pub status: AoStatus,
    pub extraction: Option<ExtractionMethod>,
    /// Reason recorded for infeasible runs.
    pub note: String,
}

impl AoResult {
    /// Smallest relative slack over sensing, power, control and spacing.
    pub fn min_relative_slack(&self) -> f64 {
        let control = self.report.cav.iter().zip(&self.r_min).map(|(s, m)| s / (1.0 + m.abs()));
        self.report
            .sensing
            .iter()
            .copied()
            .chain(control)
            .fold(self.report.power.min(self.spacing_slack), f64::min)
    }
}

/// Everything fixed for a scenario before optimization: entity layout,
/// frozen NLoS draws, and the per-CAV minimum rates.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub positions: EntityPositions,
    pub model: ChannelModel,
    pub control: Vec<ControlDerived>,
    pub r_min: Vec<f64>,
    pub params: BeamformingParams,
}

impl Scenario {
    pub fn prepare(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let positions = config.place_entities(&mut stream_rng(config.seed, RngStream::Layout));
        let nlos = NlosDraws::draw(&mut stream_rng(config.seed, RngStream::Nlos), config.num_antennas, positions.gus.len(), positions.cavs.len());
        let model = ChannelModel::new(config, &positions, nlos)?;
        let opts = DareOptions { tol: config.ao.dare_tol, max_iters: config.ao.dare_max_iters };
        let control = config
            .cav_plants()
            .iter()
            .take(positions.cavs.len())
            .map(|p| ControlDerived::compute(p, &opts, config.entropy_clamp))
            .collect::<Result<Vec<_>>>()?;
        if control.len() != positions.cavs.len() {
            return Err(Error::config("one control plant per CAV (or a single shared plant) is required"));
        }
        let r_min = control.iter().map(|c| c.r_min).collect();
        Ok(Self { params: BeamformingParams::from_config(config), config: config.clone(), positions, model, control, r_min })
    }

    pub fn side(&self) -> f64 {
        self.config.region_meters()
    }

    pub fn channels(&self, placement: &AntennaPlacement) -> ChannelSet {
        self.model.build(placement)
    }

    fn fitness_context(&self) -> FitnessContext {
        let p = &self.config.pso;
        FitnessContext {
            noise_watts: self.params.noise_watts,
            sense_thresh_watts: self.params.sense_thresh_watts,
            r_min: self.r_min.clone(),
            min_spacing: self.config.min_spacing_meters(),
            penalty_sensing: p.penalty_sensing,
            penalty_control: p.penalty_control,
            penalty_spacing: p.penalty_spacing,
        }
    }
}

/// Uniform grid of `ceil(M/2)` columns by 2 rows (one row for `M = 1`),
/// spaced `max(lambda/2, d_min)` and centered in the region.
pub fn fap_placement(config: &ScenarioConfig) -> Result<AntennaPlacement> {
    let m = config.num_antennas;
    let cols = m.div_ceil(2);
    let rows = if m > 1 { 2 } else { 1 };
    let spacing = (0.5 * config.wavelength).max(config.min_spacing_meters());
    let side = config.region_meters();
    let (w, h) = ((cols - 1) as f64 * spacing, (rows - 1) as f64 * spacing);
    if w > side || h > side {
        return Err(Error::config(format!("a {cols}x{rows} grid at spacing {spacing} m does not fit the {side} m region")));
    }
    let (x0, y0) = ((side - w) / 2.0, (side - h) / 2.0);
    let positions = (0..m).map(|i| [x0 + (i % cols) as f64 * spacing, y0 + (i / cols) as f64 * spacing]).collect();
    Ok(AntennaPlacement::new(positions))
}

/// Uniform placement in the region with rejection of spacing violations.
pub fn random_placement<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<AntennaPlacement> {
    let side = config.region_meters();
    let d_min = config.min_spacing_meters();
    for _ in 0..PLACEMENT_ATTEMPTS {
        let p = AntennaPlacement::new((0..config.num_antennas).map(|_| [rng.random_range(0.0..=side), rng.random_range(0.0..=side)]).collect());
        if p.violating_pairs(d_min) == 0 {
            return Ok(p);
        }
    }
    Err(Error::PlacementExhausted { antennas: config.num_antennas, spacing: d_min, attempts: PLACEMENT_ATTEMPTS })
}

/// Beamforming-only solution at a fixed placement.
struct Beamformed {
    lifted: LiftedBeamforming,
    beams: BeamVectors,
    method: ExtractionMethod,
    sum_rate: f64,
}

fn beamform(scenario: &Scenario, channels: &ChannelSet, start: Option<&LiftedBeamforming>, solver: &dyn ConicSolver) -> Result<Beamformed> {
    let params = &scenario.params;
    let x0 = match start {
        Some(x) => x.clone(),
        None => beamforming::initial_feasible(channels, params, &scenario.r_min, solver)?,
    };
    let out = match beamforming::sca_solve(channels, params, &scenario.r_min, &x0, solver) {
        Ok(out) => out,
        Err(Error::Infeasible { .. }) if start.is_some() => return beamform(scenario, channels, None, solver),
        Err(e) => return Err(e),
    };
    let ext = beamforming::rank_one_extract(&out.x, channels, params, &scenario.r_min)?;
    let sum_rate = metrics::sum_rate(channels, &ext.beams, params.noise_watts);
    Ok(Beamformed { lifted: out.x, beams: ext.beams, method: ext.method, sum_rate })
}

fn finish(scenario: &Scenario, scheme: Scheme, placement: AntennaPlacement, bf: Beamformed, outer_trace: Vec<(usize, f64)>, status: AoStatus) -> AoResult {
    let channels = scenario.channels(&placement);
    let noise = scenario.params.noise_watts;
    let d_min = scenario.config.min_spacing_meters();
    let spacing_slack = if d_min > 0.0 && placement.len() > 1 {
        (placement.min_pairwise_distance() - d_min) / d_min
    } else {
        f64::INFINITY
    };
    AoResult {
        scheme,
        report: ConstraintReport::evaluate(&channels, &bf.beams, &scenario.params, &scenario.r_min),
        gu_rates: metrics::gu_rates(&channels, &bf.beams, noise),
        cav_rates: metrics::cav_rates(&channels, &bf.beams, noise),
        r_min: scenario.r_min.clone(),
        sum_rate: bf.sum_rate,
        placement,
        beams: bf.beams,
        lifted: bf.lifted,
        spacing_slack,
        outer_trace,
        status,
        extraction: Some(bf.method),
        note: String::new(),
    }
}

fn infeasible(scenario: &Scenario, scheme: Scheme, placement: AntennaPlacement, err: &Error) -> AoResult {
    let (m, n, j) = (scenario.config.num_antennas, scenario.positions.gus.len(), scenario.positions.cavs.len());
    AoResult {
        scheme,
        placement,
        beams: BeamVectors::zeros(m, n, j),
        lifted: LiftedBeamforming::zeros(m, n, j),
        sum_rate: f64::NAN,
        gu_rates: vec![f64::NAN; n],
        cav_rates: vec![f64::NAN; j],
        r_min: scenario.r_min.clone(),
        report: ConstraintReport { sensing: vec![f64::NAN; scenario.positions.targets.len()], power: f64::NAN, cav: vec![f64::NAN; j] },
        spacing_slack: f64::NAN,
        outer_trace: vec![],
        status: AoStatus::Infeasible,
        extraction: None,
        note: err.to_string(),
    }
}

fn fixed_placement(scenario: &Scenario, scheme: Scheme, placement: AntennaPlacement, solver: &dyn ConicSolver) -> Result<AoResult> {
    let channels = scenario.channels(&placement);
    match beamform(scenario, &channels, None, solver) {
        Ok(bf) => {
            let trace = vec![(0, bf.sum_rate)];
            Ok(finish(scenario, scheme, placement, bf, trace, AoStatus::Converged))
        }
        Err(e @ (Error::Infeasible { .. } | Error::Extraction { .. })) => Ok(infeasible(scenario, scheme, placement, &e)),
        Err(e) => Err(e),
    }
}

/// Grid placement, beamforming only.
pub fn fap_baseline(scenario: &Scenario, solver: &dyn ConicSolver) -> Result<AoResult> {
    fixed_placement(scenario, Scheme::Fap, fap_placement(&scenario.config)?, solver)
}

/// Random placement (seeded), beamforming only.
pub fn rap_baseline(scenario: &Scenario, solver: &dyn ConicSolver) -> Result<AoResult> {
    fixed_placement(scenario, Scheme::Rap, rap_placement(&scenario.config)?, solver)
}

/// The random placement used by the RAP baseline for `config.seed`.
pub fn rap_placement(config: &ScenarioConfig) -> Result<AntennaPlacement> {
    random_placement(config, &mut stream_rng(config.seed, RngStream::RandomPlacement))
}

/// Starting placements for the alternating optimization: the FAP grid, the
/// RAP placement, then `ao.start_candidates` further random placements
/// from their own seeded stream. Starting from both baseline placements
/// means the result never falls below either baseline.
pub fn start_candidates(config: &ScenarioConfig) -> Result<Vec<AntennaPlacement>> {
    let mut out = vec![fap_placement(config)?, rap_placement(config)?];
    let mut rng = stream_rng(config.seed, RngStream::AoStart);
    for _ in 0..config.ao.start_candidates {
        out.push(random_placement(config, &mut rng)?);
    }
    Ok(out)
}

/// Alternates swarm placement search (beams fixed) with SCA beamforming
/// (placement fixed).
///
/// Each candidate from [`start_candidates`] is beamformed once and the best
/// one seeds the loop: with the beams frozen the swarm only refines
/// placements locally, so the starting basin matters.
///
/// The swarm is seeded with the incumbent placement and the SCA with the
/// incumbent beams, so each outer objective is at least the previous one;
/// a pass that still comes out lower (numerical round-off in extraction)
/// is discarded and ends the loop.
pub fn alternating_optimize(scenario: &Scenario, solver: &dyn ConicSolver) -> Result<AoResult> {
    alternating_optimize_from(scenario, &start_candidates(&scenario.config)?, solver)
}

/// [`alternating_optimize`] over explicit starting placements (ties go to
/// the earlier candidate).
pub fn alternating_optimize_from(scenario: &Scenario, candidates: &[AntennaPlacement], solver: &dyn ConicSolver) -> Result<AoResult> {
    if candidates.is_empty() {
        return Err(Error::config("at least one starting placement is required"));
    }
    let mut start: Option<(AntennaPlacement, Beamformed)> = None;
    let mut last_err = None;
    for p in candidates {
        match beamform(scenario, &scenario.channels(p), None, solver) {
            Ok(bf) => {
                if start.as_ref().is_none_or(|(_, b)| bf.sum_rate > b.sum_rate) {
                    start = Some((p.clone(), bf));
                }
            }
            Err(e @ (Error::Infeasible { .. } | Error::Extraction { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let Some((mut placement, mut best)) = start else {
        let err = last_err.expect("candidates were tried");
        return Ok(infeasible(scenario, Scheme::Ao, candidates[0].clone(), &err));
    };
    let mut trace = vec![(0, best.sum_rate)];
    let mut rng = stream_rng(scenario.config.seed, RngStream::Pso);
    let ctx = scenario.fitness_context();
    let ao = &scenario.config.ao;
    let mut status = AoStatus::MaxIters;
    for o in 1..=ao.max_outer {
        let objective = BeamFitness { model: &scenario.model, beams: &best.beams, ctx: &ctx };
        let moved = pso::optimize_positions(&scenario.config.pso, scenario.side(), &objective, &mut rng, &placement);
        let channels = scenario.channels(&moved.placement);
        let start = best.beams.lift();
        let next = match beamform(scenario, &channels, Some(&start), solver) {
            Ok(bf) => bf,
            Err(Error::Infeasible { .. } | Error::Extraction { .. }) => {
                status = AoStatus::Converged;
                break;
            }
            Err(e) => return Err(e),
        };
        let gain = next.sum_rate - best.sum_rate;
        if gain < 0.0 {
            status = AoStatus::Converged;
            break;
        }
        placement = moved.placement;
        best = next;
        trace.push((o, best.sum_rate));
        if gain <= ao.outer_tol {
            status = AoStatus::Converged;
            break;
        }
    }
    Ok(finish(scenario, Scheme::Ao, placement, best, trace, status))
}

/// Runs one scheme with the default conic solver.
pub fn run_scheme(scenario: &Scenario, scheme: Scheme) -> Result<AoResult> {
    let solver = BarrierSolver::default();
    match scheme {
        Scheme::Ao => alternating_optimize(scenario, &solver),
        Scheme::Rap => rap_baseline(scenario, &solver),
        Scheme::Fap => fap_baseline(scenario, &solver),
    }
}
