//! Beamforming for a fixed antenna placement: successive convex
//! approximation over the lifted (semidefinite-relaxed) variables, rank-one
//! recovery, and a feasible starting point.
//!
//! Inside the conic subproblems every variable is divided by `P_max` and
//! every channel by the noise amplitude, so the power row reads
//! `sum tr(X) <= 1` and receiver noise is 1. Public inputs and outputs stay in
//! watts.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::channel::ChannelSet;
use crate::linalg::{c, hermitian_eigen, outer, quad_form, trace_real, CMatrix, CVector};
use crate::metrics::{self, BeamVectors, LiftedBeamforming, Transmit};
use crate::scenario::{stream_rng, RngStream, ScenarioConfig};
use crate::sdp::{psd_project, ConicSolver, Expression, Functional, LogTerm, Sense, SolveStatus, SubproblemSpec};
use crate::{Error, Result};

/// Relative tolerance used when checking recovered beamformers.
pub const EXTRACTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingParams {
    pub noise_watts: f64,
    pub sense_thresh_watts: f64,
    pub max_power_watts: f64,
    pub sca_tol: f64,
    pub sca_max_iters: usize,
    pub psd_tol: f64,
    pub randomization_samples: usize,
    pub seed: u64,
}

impl BeamformingParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            noise_watts: cfg.noise_watts(),
            sense_thresh_watts: cfg.sense_thresh_watts(),
            max_power_watts: cfg.max_power_watts(),
            sca_tol: cfg.ao.sca_tol,
            sca_max_iters: cfg.ao.sca_max_iters,
            psd_tol: cfg.ao.psd_tol,
            randomization_samples: cfg.ao.randomization_samples,
            seed: cfg.seed,
        }
    }
}

/// Expansion point of one SCA step.
#[derive(Debug, Clone)]
pub struct ScaIterate {
    pub x: LiftedBeamforming,
    /// Interference plus noise at each GU, watts.
    pub e: Vec<f64>,
    /// Interference plus noise at each CAV, watts.
    pub f: Vec<f64>,
    pub surrogate_value: f64,
    pub l: usize,
}

impl ScaIterate {
    pub fn new(channels: &ChannelSet, x: LiftedBeamforming, noise: f64, l: usize) -> Self {
        let (e, f) = interference_terms(channels, &x, noise);
        let surrogate_value = lifted_sum_rate(channels, &x, noise);
        Self { x, e, f, surrogate_value, l }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaTraceRow {
    pub iteration: usize,
    pub surrogate: f64,
    pub objective: f64,
    pub min_slack: f64,
}

#[derive(Debug, Clone)]
pub struct ScaOutcome {
    pub x: LiftedBeamforming,
    pub trace: Vec<ScaTraceRow>,
}

/// Per-constraint slacks of a beamforming solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// `(gain - d^2 Gamma) / (d^2 Gamma)` per target.
    pub sensing: Vec<f64>,
    /// `(P_max - power) / P_max`.
    pub power: f64,
    /// `R_j - R_min_j` per CAV, bits.
    pub cav: Vec<f64>,
}

impl ConstraintReport {
    pub fn evaluate<T: Transmit>(channels: &ChannelSet, x: &T, params: &BeamformingParams, r_min: &[f64]) -> Self {
        let sensing = channels
            .targets
            .iter()
            .map(|t| {
                let need = t.distance * t.distance * params.sense_thresh_watts;
                (metrics::beampattern_gain(&t.steering, x) - need) / need
            })
            .collect();
        let power = (params.max_power_watts - x.total_power()) / params.max_power_watts;
        let cav = metrics::cav_rates(channels, x, params.noise_watts)
            .iter()
            .zip(r_min)
            .map(|(r, m)| r - m)
            .collect();
        Self { sensing, power, cav }
    }

    pub fn min_sensing(&self) -> f64 {
        self.sensing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_slack(&self) -> f64 {
        self.sensing.iter().chain(&self.cav).copied().fold(self.power, f64::min)
    }

    /// All slacks at least `-tol`; CAV slacks are measured relative to
    /// `1 + R_min`.
    pub fn feasible(&self, tol: f64, r_min: &[f64]) -> bool {
        self.sensing.iter().all(|&s| s >= -tol)
            && self.power >= -tol
            && self.cav.iter().zip(r_min).all(|(s, m)| *s >= -tol * (1.0 + m.abs()))
    }

    pub fn all(&self) -> Vec<f64> {
        let mut v = self.sensing.clone();
        v.push(self.power);
        v.extend(&self.cav);
        v
    }
}

/// Interference-plus-noise seen by each GU (`E_n`) and each CAV (`F_j`).
pub fn interference_terms(channels: &ChannelSet, x: &LiftedBeamforming, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let total = x.total_covariance();
    let e = channels
        .gus
        .iter()
        .enumerate()
        .map(|(n, l)| (quad_form(&total, &l.h) - quad_form(&x.gus[n], &l.h)).max(0.0) + noise)
        .collect();
    let f = channels
        .cavs
        .iter()
        .enumerate()
        .map(|(j, l)| (quad_form(&total, &l.h) - quad_form(&x.cavs[j], &l.h)).max(0.0) + noise)
        .collect();
    (e, f)
}

/// `sum_n log2(1 + SINR_n)` in trace form (no PSD check).
pub fn lifted_sum_rate(channels: &ChannelSet, x: &LiftedBeamforming, noise: f64) -> f64 {
    let (e, _) = interference_terms(channels, x, noise);
    channels
        .gus
        .iter()
        .enumerate()
        .map(|(n, l)| (quad_form(&x.gus[n], &l.h) + e[n]).log2() - e[n].log2())
        .sum()
}

fn surrogate(signal_plus_e: f64, e: f64, e0: f64) -> f64 {
    signal_plus_e.log2() - e0.log2() - (e - e0) / (LN_2 * e0)
}

/// Concave minorant of the GU rate, tight at the iterate's expansion point.
pub fn surrogate_rate_gu(n: usize, channels: &ChannelSet, x: &LiftedBeamforming, iterate: &ScaIterate, noise: f64) -> f64 {
    let h = &channels.gus[n].h;
    let total = quad_form(&x.total_covariance(), h) + noise;
    let e = total - quad_form(&x.gus[n], h);
    surrogate(total, e, iterate.e[n])
}

/// Concave minorant of the CAV rate.
pub fn surrogate_rate_cav(j: usize, channels: &ChannelSet, x: &LiftedBeamforming, iterate: &ScaIterate, noise: f64) -> f64 {
    let h = &channels.cavs[j].h;
    let total = quad_form(&x.total_covariance(), h) + noise;
    let f = total - quad_form(&x.cavs[j], h);
    surrogate(total, f, iterate.f[j])
}

/// Channels and thresholds in solver units.
struct Scaled {
    m: usize,
    gus: Vec<CMatrix>,
    cavs: Vec<CMatrix>,
    targets: Vec<CMatrix>,
    tau: Vec<f64>,
    power: f64,
}

impl Scaled {
    fn new(channels: &ChannelSet, params: &BeamformingParams) -> Result<Self> {
        if !(params.noise_watts > 0.0 && params.max_power_watts > 0.0) {
            return Err(Error::config("noise and power budget must be positive"));
        }
        let m = channels.num_antennas();
        if m == 0 {
            return Err(Error::Shape("channel set has no antennas".into()));
        }
        let g = c(params.max_power_watts / params.noise_watts, 0.0);
        Ok(Self {
            m,
            gus: channels.gus.iter().map(|l| outer(&l.h) * g).collect(),
            cavs: channels.cavs.iter().map(|l| outer(&l.h) * g).collect(),
            targets: channels.targets.iter().map(|t| outer(&t.steering)).collect(),
            tau: channels
                .targets
                .iter()
                .map(|t| t.distance * t.distance * params.sense_thresh_watts / params.max_power_watts)
                .collect(),
            power: params.max_power_watts,
        })
    }

    fn num_blocks(&self) -> usize {
        self.gus.len() + self.cavs.len() + 1
    }

    fn blank_spec(&self) -> SubproblemSpec {
        let mut spec = SubproblemSpec::default();
        for n in 0..self.gus.len() {
            spec.add_block(format!("W_gu{n}"), self.m);
        }
        for j in 0..self.cavs.len() {
            spec.add_block(format!("W_cav{j}"), self.m);
        }
        spec.add_block("R0", self.m);
        spec
    }

    /// `sum_b tr(H X_b)` over all blocks except `skip`, scaled by `k`.
    fn spread(&self, h: &CMatrix, skip: Option<usize>, k: f64) -> Functional {
        let mut f = Functional::default();
        for b in 0..self.num_blocks() {
            if Some(b) != skip {
                f.blocks.push((b, h * c(k, 0.0)));
            }
        }
        f
    }

    fn add_common_rows(&self, spec: &mut SubproblemSpec) {
        for (k, (a, tau)) in self.targets.iter().zip(&self.tau).enumerate() {
            spec.add_constraint(format!("sense{k}"), Expression::linear(self.spread(a, None, 1.0)), Sense::Ge, *tau);
        }
        let id = CMatrix::identity(self.m, self.m);
        spec.add_constraint("power", Expression::linear(self.spread(&id, None, 1.0)), Sense::Le, 1.0);
    }

    /// Surrogate rate expression with expansion value `e0` (solver units).
    fn surrogate_expr(&self, h: &CMatrix, own: usize, e0: f64) -> Expression {
        let mut linear = self.spread(h, Some(own), -1.0 / (LN_2 * e0));
        linear.constant = -e0.log2() - (1.0 - e0) / (LN_2 * e0);
        Expression { linear, logs: vec![LogTerm { weight: 1.0, arg: self.spread(h, None, 1.0).with_constant(1.0) }] }
    }

    fn from_blocks(&self, blocks: &[CMatrix], psd_floor: bool) -> Result<LiftedBeamforming> {
        let k = c(self.power, 0.0);
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            let b = if psd_floor { psd_project(b, 0.0)? } else { b.clone() };
            out.push(b * k);
        }
        Ok(LiftedBeamforming::from_blocks(out, self.gus.len(), self.cavs.len()))
    }
}

/// Convex subproblem around `iterate`, in solver units: blocks are the
/// lifted variables divided by `P_max`, channels are normalized by the noise
/// power. Blocks: GU beams, CAV beams, sensing covariance. Rows: one per
/// target, one surrogate-rate row per CAV, and the power row.
pub fn build_subproblem(channels: &ChannelSet, iterate: &ScaIterate, params: &BeamformingParams, r_min: &[f64]) -> Result<SubproblemSpec> {
    let sc = Scaled::new(channels, params)?;
    if r_min.len() != channels.cavs.len() {
        return Err(Error::Shape("one minimum rate per CAV is required".into()));
    }
    let mut spec = sc.blank_spec();
    let n_gus = sc.gus.len();
    for (n, h) in sc.gus.iter().enumerate() {
        let e = sc.surrogate_expr(h, n, iterate.e[n] / params.noise_watts);
        spec.objective.linear.constant += e.linear.constant;
        spec.objective.linear.blocks.extend(e.linear.blocks);
        spec.objective.logs.extend(e.logs);
    }
    sc.add_common_rows(&mut spec);
    for (j, h) in sc.cavs.iter().enumerate() {
        let e = sc.surrogate_expr(h, n_gus + j, iterate.f[j] / params.noise_watts);
        spec.add_constraint(format!("cav{j}"), e, Sense::Ge, r_min[j]);
    }
    Ok(spec)
}

/// Successive convex approximation from a feasible lifted point.
///
/// The returned trace holds one row per accepted iterate; a subproblem
/// solution that would lower the true sum rate (possible only through
/// solver round-off) is rejected and ends the loop.
pub fn sca_solve(
    channels: &ChannelSet,
    params: &BeamformingParams,
    r_min: &[f64],
    x0: &LiftedBeamforming,
    solver: &dyn ConicSolver,
) -> Result<ScaOutcome> {
    let sc = Scaled::new(channels, params)?;
    let noise = params.noise_watts;
    let mut x = x0.clone();
    let mut objective = lifted_sum_rate(channels, &x, noise);
    let mut trace = Vec::new();
    for l in 1..=params.sca_max_iters.max(1) {
        let iterate = ScaIterate::new(channels, x.clone(), noise, l);
        let spec = build_subproblem(channels, &iterate, params, r_min)?;
        let sol = solver.solve(&spec)?;
        let usable = match sol.status {
            SolveStatus::Optimal => true,
            SolveStatus::MaxIters => sol.max_violation <= 1e-7,
            SolveStatus::Infeasible => false,
        };
        if !usable {
            if l == 1 {
                let report = ConstraintReport::evaluate(channels, x0, params, r_min);
                return Err(Error::Infeasible {
                    reason: format!("beamforming subproblem has no feasible point ({:?})", sol.status),
                    slacks: report.all(),
                });
            }
            break;
        }
        let candidate = sc.from_blocks(&sol.blocks, true)?;
        let cand_obj = lifted_sum_rate(channels, &candidate, noise);
        if cand_obj < objective {
            if l == 1 {
                trace.push(ScaTraceRow {
                    iteration: l,
                    surrogate: objective,
                    objective,
                    min_slack: ConstraintReport::evaluate(channels, &x, params, r_min).min_slack(),
                });
            }
            break;
        }
        let gain = sol.objective_value - iterate.surrogate_value;
        x = candidate;
        objective = cand_obj;
        trace.push(ScaTraceRow {
            iteration: l,
            surrogate: sol.objective_value,
            objective,
            min_slack: ConstraintReport::evaluate(channels, &x, params, r_min).min_slack(),
        });
        if gain <= params.sca_tol {
            break;
        }
    }
    Ok(ScaOutcome { x, trace })
}

/// Feasible lifted point maximizing the smallest normalized slack of the
/// CAV SINR and sensing rows under the power budget.
pub fn initial_feasible(channels: &ChannelSet, params: &BeamformingParams, r_min: &[f64], solver: &dyn ConicSolver) -> Result<LiftedBeamforming> {
    let sc = Scaled::new(channels, params)?;
    if r_min.len() != channels.cavs.len() {
        return Err(Error::Shape("one minimum rate per CAV is required".into()));
    }
    let mut spec = sc.blank_spec();
    let t = spec.add_scalar("t", -1e3, 1.0);
    spec.objective = Expression::linear(Functional::scalar(t, 1.0));
    let n_gus = sc.gus.len();
    let mut names = Vec::new();
    for (j, h) in sc.cavs.iter().enumerate() {
        // tr(H W_j) - gamma (sum_{b != j} tr(H X_b) + 1) >= t * norm
        let gamma = 2f64.powf(r_min[j]) - 1.0;
        let own = n_gus + j;
        let mut f = sc.spread(h, Some(own), -gamma);
        f.blocks.push((own, h.clone()));
        f.constant = -gamma;
        let norm = functional_norm(&f);
        let f = scale_functional(f, 1.0 / norm).with_scalar(t, -1.0);
        spec.add_constraint(format!("cav{j}"), Expression::linear(f), Sense::Ge, 0.0);
        names.push(format!("cav{j}"));
    }
    for (k, (a, tau)) in sc.targets.iter().zip(&sc.tau).enumerate() {
        let mut f = sc.spread(a, None, 1.0);
        f.constant = -tau;
        let norm = functional_norm(&f);
        let f = scale_functional(f, 1.0 / norm).with_scalar(t, -1.0);
        spec.add_constraint(format!("sense{k}"), Expression::linear(f), Sense::Ge, 0.0);
    }
    let id = CMatrix::identity(sc.m, sc.m);
    spec.add_constraint("power", Expression::linear(sc.spread(&id, None, 1.0)), Sense::Le, 1.0);

    let sol = solver.solve(&spec)?;
    let t_star = match sol.status {
        SolveStatus::Infeasible => f64::NEG_INFINITY,
        _ => sol.scalars[t],
    };
    if !(t_star >= 0.0) {
        let slacks = if sol.status == SolveStatus::Infeasible {
            vec![]
        } else {
            spec.constraints.iter().map(|c| c.expr.eval(&sol.blocks, &sol.scalars) - c.bound).collect()
        };
        return Err(Error::Infeasible { reason: format!("no beamforming meets the sensing and control rows (t* = {t_star:.3e})"), slacks });
    }
    sc.from_blocks(&sol.blocks, true)
}

fn functional_norm(f: &Functional) -> f64 {
    let n2: f64 = f.blocks.iter().map(|(_, m)| m.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>()
        + f.scalars.iter().map(|(_, s)| s * s).sum::<f64>()
        + f.constant * f.constant;
    n2.sqrt().max(f64::MIN_POSITIVE)
}

fn scale_functional(mut f: Functional, k: f64) -> Functional {
    for (_, m) in &mut f.blocks {
        *m *= c(k, 0.0);
    }
    for (_, s) in &mut f.scalars {
        *s *= k;
    }
    f.constant *= k;
    f
}

/// How the beamformers were recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractionMethod {
    Eigen,
    ChannelMatched,
    Randomization,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub beams: BeamVectors,
    /// `lambda_1 / tr` per beam block (GUs then CAVs).
    pub ratios: Vec<f64>,
    pub method: ExtractionMethod,
}

/// `lambda_1 / tr` (1 for a zero block).
pub fn rank_one_ratio(w: &CMatrix) -> f64 {
    let tr = trace_real(w);
    if tr <= 0.0 {
        return 1.0;
    }
    (hermitian_eigen(w).0[0] / tr).clamp(0.0, 1.0)
}

fn dominant(w: &CMatrix) -> CVector {
    let (vals, vecs) = hermitian_eigen(w);
    vecs.column(0) * c(vals[0].max(0.0).sqrt(), 0.0)
}

/// `W h / sqrt(h^H W h)`: keeps the intended receiver's signal power and
/// leaves a PSD remainder `W - w w^H`.
fn channel_matched(w: &CMatrix, h: &CVector) -> CVector {
    let g = quad_form(w, h);
    if g <= 0.0 {
        return dominant(w);
    }
    (w * h) * c(1.0 / g.sqrt(), 0.0)
}

/// Beam vectors from per-block vectors, with every block's remainder moved
/// into the sensing covariance so the total transmit covariance is kept.
fn fold_remainders(x: &LiftedBeamforming, gus: Vec<CVector>, cavs: Vec<CVector>) -> Result<BeamVectors> {
    let mut sensing = x.sensing.clone();
    for (w, v) in x.gus.iter().zip(&gus).chain(x.cavs.iter().zip(&cavs)) {
        sensing += w - outer(v);
    }
    let sensing = psd_project(&crate::linalg::symmetrize(&sensing), 0.0)?;
    Ok(BeamVectors { gus, cavs, sensing })
}

/// Recovers beam vectors from a lifted solution.
///
/// Two deterministic candidates are formed (dominant eigenvector, and the
/// channel-matched vector `W h / sqrt(h^H W h)`), each with the per-block
/// remainder moved into the sensing covariance; the feasible one with the
/// larger sum rate is kept. If neither is feasible, Gaussian randomization is
/// tried. Feasibility uses [`EXTRACTION_TOL`].
pub fn rank_one_extract(x: &LiftedBeamforming, channels: &ChannelSet, params: &BeamformingParams, r_min: &[f64]) -> Result<Extraction> {
    let ratios: Vec<f64> = x.gus.iter().chain(&x.cavs).map(rank_one_ratio).collect();
    let noise = params.noise_watts;
    let mut best: Option<(f64, BeamVectors, ExtractionMethod)> = None;
    let mut consider = |beams: BeamVectors, method: ExtractionMethod| {
        let report = ConstraintReport::evaluate(channels, &beams, params, r_min);
        if report.feasible(EXTRACTION_TOL, r_min) {
            let value = metrics::sum_rate(channels, &beams, noise);
            if best.as_ref().is_none_or(|(v, _, _)| value > *v) {
                best = Some((value, beams, method));
            }
        }
    };

    let eig = fold_remainders(x, x.gus.iter().map(dominant).collect(), x.cavs.iter().map(dominant).collect())?;
    consider(eig, ExtractionMethod::Eigen);
    let matched = fold_remainders(
        x,
        x.gus.iter().zip(&channels.gus).map(|(w, l)| channel_matched(w, &l.h)).collect(),
        x.cavs.iter().zip(&channels.cavs).map(|(w, l)| channel_matched(w, &l.h)).collect(),
    )?;
    consider(matched, ExtractionMethod::ChannelMatched);

    if let Some((_, beams, method)) = best {
        return Ok(Extraction { beams, ratios, method });
    }
    let mut rng = stream_rng(params.seed, RngStream::Randomization);
    match gaussian_randomization(x, channels, params, r_min, params.randomization_samples, &mut rng) {
        Some(beams) => Ok(Extraction { beams, ratios, method: ExtractionMethod::Randomization }),
        None => Err(Error::Extraction { ratios }),
    }
}

/// Gaussian randomization: draws `w_b ~ CN(0, W_b)` per block, scales the
/// draw to the power budget, and keeps the feasible sample with the best
/// sum rate. The sensing covariance is reused as is.
pub fn gaussian_randomization(
    x: &LiftedBeamforming,
    channels: &ChannelSet,
    params: &BeamformingParams,
    r_min: &[f64],
    samples: usize,
    rng: &mut ChaCha20Rng,
) -> Option<BeamVectors> {
    let roots: Vec<CMatrix> = x
        .gus
        .iter()
        .chain(&x.cavs)
        .map(|w| {
            let (vals, vecs) = hermitian_eigen(w);
            let d = CVector::from_iterator(vals.len(), vals.iter().map(|v| c(v.max(0.0).sqrt(), 0.0)));
            vecs * CMatrix::from_diagonal(&d)
        })
        .collect();
    let n = x.gus.len();
    let mut best: Option<(f64, BeamVectors)> = None;
    for _ in 0..samples {
        let draws: Vec<CVector> = roots.iter().map(|r| r * crate::channel::draw_cn(rng, r.ncols())).collect();
        let mut beams = BeamVectors { gus: draws[..n].to_vec(), cavs: draws[n..].to_vec(), sensing: x.sensing.clone() };
        let p = beams.total_power();
        if !(p > 0.0) {
            continue;
        }
        beams = beams.scaled(params.max_power_watts / p);
        let report = ConstraintReport::evaluate(channels, &beams, params, r_min);
        if !report.feasible(EXTRACTION_TOL, r_min) {
            continue;
        }
        let value = metrics::sum_rate(channels, &beams, params.noise_watts);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, beams));
        }
    }
    let _ = rng.random::<u8>();
    best.map(|(_, b)| b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_cn, CommLink, DirectionVector, TargetLink};
    use crate::sdp::BarrierSolver;

    fn link(h: CVector) -> CommLink {
        CommLink { distance: 100.0, direction: DirectionVector::from_components([0.0, 0.0]), nlos: h.clone(), steering: h.clone(), h }
    }

    fn params(p: f64) -> BeamformingParams {
        BeamformingParams {
            noise_watts: 1.0,
            sense_thresh_watts: 0.01,
            max_power_watts: p,
            sca_tol: 1e-4,
            sca_max_iters: 30,
            psd_tol: 1e-8,
            randomization_samples: 200,
            seed: 3,
        }
    }

    fn random_set(seed: u64, m: usize, n: usize, j: usize, k: usize) -> ChannelSet {
        let mut rng = stream_rng(seed, RngStream::Nlos);
        ChannelSet {
            gus: (0..n).map(|_| link(draw_cn(&mut rng, m))).collect(),
            cavs: (0..j).map(|_| link(draw_cn(&mut rng, m))).collect(),
            targets: (0..k)
                .map(|_| TargetLink {
                    distance: 3.0,
                    direction: DirectionVector::from_components([0.0, 0.0]),
                    steering: draw_cn(&mut rng, m),
                })
                .collect(),
        }
    }

    fn random_lifted(seed: u64, m: usize, n: usize, j: usize, scale: f64) -> LiftedBeamforming {
        let mut rng = stream_rng(seed, RngStream::Randomization);
        let mut block = || {
            let a = draw_cn(&mut rng, m);
            let b = draw_cn(&mut rng, m);
            (outer(&a) + outer(&b) * c(0.3, 0.0)) * c(scale, 0.0)
        };
        LiftedBeamforming { gus: (0..n).map(|_| block()).collect(), cavs: (0..j).map(|_| block()).collect(), sensing: block() }
    }

    #[test]
    fn interference_examples() {
        let ch = random_set(1, 4, 2, 1, 0);
        let x = LiftedBeamforming::zeros(4, 2, 1);
        let (e, f) = interference_terms(&ch, &x, 0.7);
        assert_eq!(e, vec![0.7, 0.7]);
        assert_eq!(f, vec![0.7]);

        let mut rng = stream_rng(2, RngStream::Randomization);
        let w = draw_cn(&mut rng, 4);
        let mut x = LiftedBeamforming::zeros(4, 2, 1);
        x.gus[1] = outer(&w);
        let (e, _) = interference_terms(&ch, &x, 0.7);
        let expect = 0.7 + ch.gus[0].h.dotc(&w).norm_sqr();
        assert!((e[0] - expect).abs() < 1e-12);
        assert_eq!(e[1], 0.7);
    }

    #[test]
    fn interference_matches_expansion() {
        let ch = random_set(3, 4, 3, 2, 0);
        let x = random_lifted(4, 4, 3, 2, 0.5);
        let (e, f) = interference_terms(&ch, &x, 0.1);
        let tr = |w: &CMatrix, h: &CVector| (w * outer(h)).trace().re;
        for n in 0..3 {
            let mut oracle = 0.1 + tr(&x.sensing, &ch.gus[n].h);
            for i in (0..3).filter(|&i| i != n) {
                oracle += tr(&x.gus[i], &ch.gus[n].h);
            }
            for w in &x.cavs {
                oracle += tr(w, &ch.gus[n].h);
            }
            assert!((e[n] - oracle).abs() < 1e-10 * oracle);
        }
        for j in 0..2 {
            let mut oracle = 0.1 + tr(&x.sensing, &ch.cavs[j].h) + tr(&x.cavs[1 - j], &ch.cavs[j].h);
            for w in &x.gus {
                oracle += tr(w, &ch.cavs[j].h);
            }
            assert!((f[j] - oracle).abs() < 1e-10 * oracle);
        }
    }

    #[test]
    fn surrogate_exact_at_expansion_and_minorant() {
        let ch = random_set(5, 4, 3, 2, 0);
        let x0 = random_lifted(6, 4, 3, 2, 0.5);
        let it = ScaIterate::new(&ch, x0.clone(), 0.1, 1);
        for n in 0..3 {
            let r = metrics::lifted_rate_gu(n, &ch, &x0, 0.1, 1e-9).unwrap();
            assert!((surrogate_rate_gu(n, &ch, &x0, &it, 0.1) - r).abs() < 1e-9);
        }
        for j in 0..2 {
            let r = metrics::lifted_rate_cav(j, &ch, &x0, 0.1, 1e-9).unwrap();
            assert!((surrogate_rate_cav(j, &ch, &x0, &it, 0.1) - r).abs() < 1e-9);
        }
        for s in 0..100 {
            let x = random_lifted(100 + s, 4, 3, 2, 0.05 + 0.02 * s as f64);
            for n in 0..3 {
                let r = metrics::lifted_rate_gu(n, &ch, &x, 0.1, 1e-9).unwrap();
                assert!(surrogate_rate_gu(n, &ch, &x, &it, 0.1) <= r + 1e-9);
            }
            for j in 0..2 {
                let r = metrics::lifted_rate_cav(j, &ch, &x, 0.1, 1e-9).unwrap();
                assert!(surrogate_rate_cav(j, &ch, &x, &it, 0.1) <= r + 1e-9);
            }
        }
    }

    #[test]
    fn surrogate_exact_without_interference() {
        let ch = random_set(7, 3, 1, 0, 0);
        let x0 = random_lifted(8, 3, 1, 0, 1.0);
        let mut x0 = x0;
        x0.sensing = CMatrix::zeros(3, 3);
        let it = ScaIterate::new(&ch, x0, 0.2, 1);
        for s in 0..10 {
            let mut x = random_lifted(20 + s, 3, 1, 0, 1.0 + s as f64);
            x.sensing = CMatrix::zeros(3, 3);
            let r = metrics::lifted_rate_gu(0, &ch, &x, 0.2, 1e-9).unwrap();
            assert!((surrogate_rate_gu(0, &ch, &x, &it, 0.2) - r).abs() < 1e-10);
        }
    }

    #[test]
    fn subproblem_structure() {
        let p = params(10.0);
        let ch = random_set(9, 4, 1, 0, 0);
        let it = ScaIterate::new(&ch, LiftedBeamforming::zeros(4, 1, 0), 1.0, 1);
        let spec = build_subproblem(&ch, &it, &p, &[]).unwrap();
        assert_eq!(spec.blocks.len(), 2);
        assert_eq!(spec.constraints.len(), 1);
        assert_eq!(spec.constraints[0].sense, Sense::Le);

        let ch = random_set(9, 4, 1, 0, 1);
        let spec = build_subproblem(&ch, &it, &p, &[]).unwrap();
        assert_eq!(spec.constraints.iter().filter(|c| c.sense == Sense::Ge).count(), 1);

        let (n, j, k) = (3, 2, 3);
        let ch = random_set(10, 8, n, j, k);
        let it = ScaIterate::new(&ch, random_lifted(11, 8, n, j, 0.1), 1.0, 1);
        let spec = build_subproblem(&ch, &it, &p, &[1.0, 2.0]).unwrap();
        assert_eq!(spec.blocks.len(), n + j + 1);
        assert_eq!(spec.constraints.len(), k + j + 1);
        assert_eq!(spec.objective.logs.len(), n);
        spec.validate().unwrap();
    }

    #[test]
    fn single_user_matches_mrt() {
        let p = params(5.0);
        let ch = random_set(12, 4, 1, 0, 0);
        let solver = BarrierSolver::default();
        let x0 = initial_feasible(&ch, &p, &[], &solver).unwrap();
        let out = sca_solve(&ch, &p, &[], &x0, &solver).unwrap();
        let expect = (1.0 + p.max_power_watts * ch.gus[0].h.norm_squared() / p.noise_watts).log2();
        let got = lifted_sum_rate(&ch, &out.x, p.noise_watts);
        assert!((got - expect).abs() < 1e-3, "{got} vs {expect}");
        let beams = rank_one_extract(&out.x, &ch, &p, &[]).unwrap();
        assert!((metrics::sum_rate(&ch, &beams.beams, 1.0) - expect).abs() < 1e-3);
    }

    #[test]
    fn fixed_point_returns_after_one_iteration() {
        let p = params(5.0);
        let ch = random_set(12, 4, 1, 0, 0);
        let solver = BarrierSolver::default();
        let h = &ch.gus[0].h;
        let w = h * c((p.max_power_watts / h.norm_squared()).sqrt(), 0.0);
        let mut x0 = LiftedBeamforming::zeros(4, 1, 0);
        x0.gus[0] = outer(&w);
        let out = sca_solve(&ch, &p, &[], &x0, &solver).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!((lifted_sum_rate(&ch, &out.x, 1.0) - lifted_sum_rate(&ch, &x0, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn constrained_sca_is_monotone_and_feasible() {
        let p = params(20.0);
        let ch = random_set(13, 6, 3, 2, 2);
        let r_min = [1.0, 1.5];
        let solver = BarrierSolver::default();
        let x0 = initial_feasible(&ch, &p, &r_min, &solver).unwrap();
        let out = sca_solve(&ch, &p, &r_min, &x0, &solver).unwrap();
        let mut prev = lifted_sum_rate(&ch, &x0, 1.0);
        for row in &out.trace {
            assert!(row.objective >= prev - 1e-6);
            assert!(row.min_slack >= -1e-6);
            prev = row.objective;
        }
        let ext = rank_one_extract(&out.x, &ch, &p, &r_min).unwrap();
        let report = ConstraintReport::evaluate(&ch, &ext.beams, &p, &r_min);
        assert!(report.feasible(1e-6, &r_min));
        let lifted = lifted_sum_rate(&ch, &out.x, 1.0);
        let vec_rate = metrics::sum_rate(&ch, &ext.beams, 1.0);
        assert!(vec_rate >= lifted * 0.99);
    }

    #[test]
    fn initial_feasible_cases() {
        let solver = BarrierSolver::default();
        let ch = random_set(14, 4, 2, 0, 0);
        let x = initial_feasible(&ch, &params(1.0), &[], &solver).unwrap();
        assert!(x.total_power() <= 1.0 + 1e-9);
        x.validate(1e-9).unwrap();

        let mut p = params(1.0);
        p.sense_thresh_watts = 1e-12;
        let ch = random_set(15, 4, 2, 2, 2);
        let x = initial_feasible(&ch, &p, &[0.0, 0.0], &solver).unwrap();
        assert!(ConstraintReport::evaluate(&ch, &x, &p, &[0.0, 0.0]).feasible(1e-9, &[0.0, 0.0]));

        let err = initial_feasible(&ch, &p, &[40.0, 40.0], &solver).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn rank_one_input_is_recovered() {
        let ch = random_set(16, 4, 2, 1, 1);
        let mut rng = stream_rng(17, RngStream::Randomization);
        let ws: Vec<CVector> = (0..3).map(|_| draw_cn(&mut rng, 4)).collect();
        let x = LiftedBeamforming { gus: vec![outer(&ws[0]), outer(&ws[1])], cavs: vec![outer(&ws[2])], sensing: CMatrix::zeros(4, 4) };
        let mut p = params(100.0);
        p.sense_thresh_watts = 1e-9;
        let ext = rank_one_extract(&x, &ch, &p, &[0.0]).unwrap();
        for (got, want) in ext.beams.gus.iter().chain(&ext.beams.cavs).zip(&ws) {
            assert!((got.dotc(want).norm() - want.norm_squared()).abs() < 1e-9 * want.norm_squared());
        }
        assert!(ext.ratios.iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn nearly_rank_one_keeps_metrics() {
        let ch = random_set(18, 4, 2, 1, 1);
        let mut rng = stream_rng(19, RngStream::Randomization);
        let mut p = params(100.0);
        p.sense_thresh_watts = 1e-9;
        let mut x = LiftedBeamforming::zeros(4, 2, 1);
        for w in x.gus.iter_mut().chain(x.cavs.iter_mut()) {
            let a = draw_cn(&mut rng, 4);
            let b = draw_cn(&mut rng, 4);
            let b = &b - &a * (a.dotc(&b) / c(a.norm_squared(), 0.0));
            let eps = 1e-12 * a.norm_squared() / b.norm_squared();
            *w = outer(&a) + outer(&b) * c(eps, 0.0);
        }
        let ext = rank_one_extract(&x, &ch, &p, &[0.0]).unwrap();
        assert!(ext.ratios.iter().all(|&r| r >= 1.0 - 1e-11));
        for n in 0..2 {
            let lifted = metrics::lifted_rate_gu(n, &ch, &x, 1.0, 1e-9).unwrap();
            assert!((metrics::rate(metrics::sinr_gu(n, &ch, &ext.beams, 1.0)) - lifted).abs() <= 1e-9);
        }
        for t in &ch.targets {
            assert!((metrics::beampattern_gain(&t.steering, &ext.beams) - metrics::beampattern_gain(&t.steering, &x)).abs() <= 1e-9 * (1.0 + metrics::beampattern_gain(&t.steering, &x)));
        }
    }

    #[test]
    fn randomization_on_rank_two_block() {
        // Single user, W spread over two eigen-directions of equal channel gain.
        let m = 4;
        let mut rng = stream_rng(20, RngStream::Randomization);
        let h = draw_cn(&mut rng, m);
        let u1 = &h / c(h.norm(), 0.0);
        let v = draw_cn(&mut rng, m);
        let v = &v - &u1 * u1.dotc(&v);
        let u2 = &v / c(v.norm(), 0.0);
        let ch = ChannelSet { gus: vec![link(h.clone())], cavs: vec![], targets: vec![] };
        let p = params(1.0);
        let x = LiftedBeamforming { gus: vec![outer(&u1) * c(0.6, 0.0) + outer(&u2) * c(0.4, 0.0)], cavs: vec![], sensing: CMatrix::zeros(m, m) };
        let lifted = lifted_sum_rate(&ch, &x, 1.0);
        let beams = gaussian_randomization(&x, &ch, &p, &[], 200, &mut rng).expect("feasible sample");
        assert!(ConstraintReport::evaluate(&ch, &beams, &p, &[]).feasible(1e-9, &[]));
        assert!(metrics::sum_rate(&ch, &beams, 1.0) >= 0.95 * lifted);
    }

    #[test]
    fn extraction_error_carries_ratios() {
        let ch = random_set(21, 3, 1, 0, 1);
        let mut p = params(1.0);
        p.sense_thresh_watts = 1e6;
        let x = random_lifted(22, 3, 1, 0, 0.1);
        match rank_one_extract(&x, &ch, &p, &[]) {
            Err(Error::Extraction { ratios }) => assert_eq!(ratios.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
