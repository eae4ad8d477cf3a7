//! Small dense conic solver for the lifted beamforming subproblems.
//!
//! Problems have a handful of `M x M` Hermitian PSD blocks, a few bounded
//! scalars, and rows that are real-linear in the variables. Concave terms of
//! the form `w * log2(affine)` are allowed in the objective and in `>=` rows,
//! and are handled exactly by the barrier.
//!
//! The solver is a log-barrier path-following method working on the complex
//! blocks directly. Every row contributes a rank-one (or rank-few) term to the
//! barrier Hessian, so Newton systems are solved with the Woodbury identity on
//! top of the block operator `V -> X V X`; no `M^2 x M^2` matrix is formed.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::linalg::{hermitian_deviation, hpd_inverse, hpd_logdet, hermitian_eigen, min_eigenvalue, symmetrize, CMatrix, Complex64};
use crate::{Error, Result};

/// A Hermitian matrix variable.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVar {
    pub name: String,
    pub dim: usize,
}

/// A real scalar variable; at least one bound must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// `sum_b Re tr(C_b X_b) + sum_i s_i y_i + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Functional {
    pub blocks: Vec<(usize, CMatrix)>,
    pub scalars: Vec<(usize, f64)>,
    pub constant: f64,
}

/// `weight * log2(arg)`, weight > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTerm {
    pub weight: f64,
    pub arg: Functional,
}

/// Linear part plus concave log terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expression {
    pub linear: Functional,
    pub logs: Vec<LogTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub expr: Expression,
    pub sense: Sense,
    pub bound: f64,
}

/// Maximize `objective` subject to `constraints`, every block PSD.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubproblemSpec {
    pub blocks: Vec<BlockVar>,
    pub scalars: Vec<ScalarVar>,
    pub objective: Expression,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub blocks: Vec<CMatrix>,
    pub scalars: Vec<f64>,
    pub objective_value: f64,
    /// Upper bound on the optimum implied by the barrier duality gap.
    pub dual_bound: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    /// Largest constraint violation, relative to `1 + |bound|`.
    pub max_violation: f64,
    /// Newton steps across both phases.
    pub iterations: usize,
    /// `(objective, dual_bound)` after each centering.
    pub trace: Vec<(f64, f64)>,
    /// Optimal phase-I slack when infeasible (positive means infeasible).
    pub infeasibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    /// Relative gap: stop when `gap <= gap_tol * (1 + |objective|)`.
    pub gap_tol: f64,
    /// Gap accepted as optimal when round-off stops progress before `gap_tol`.
    pub accept_gap_tol: f64,
    pub kkt_tol: f64,
    /// Cap on Newton steps per phase.
    pub max_iters: usize,
    /// Barrier parameter growth factor.
    pub mu: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-7, gap_tol: 1e-8, accept_gap_tol: 1e-6, kkt_tol: 1e-6, max_iters: 400, mu: 10.0 }
    }
}

/// Interface boundary for swapping in another conic backend.
pub trait ConicSolver: Send + Sync {
    fn solve(&self, spec: &SubproblemSpec) -> Result<SubproblemSolution>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BarrierSolver {
    pub options: SolverOptions,
}

impl BarrierSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }
}

impl ConicSolver for BarrierSolver {
    fn solve(&self, spec: &SubproblemSpec) -> Result<SubproblemSolution> {
        solve(spec, &self.options)
    }
}

impl Functional {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Default::default() }
    }

    pub fn block(index: usize, coeff: CMatrix) -> Self {
        Self { blocks: vec![(index, coeff)], ..Default::default() }
    }

    pub fn scalar(index: usize, coeff: f64) -> Self {
        Self { scalars: vec![(index, coeff)], ..Default::default() }
    }

    pub fn with_block(mut self, index: usize, coeff: CMatrix) -> Self {
        self.blocks.push((index, coeff));
        self
    }

    pub fn with_scalar(mut self, index: usize, coeff: f64) -> Self {
        self.scalars.push((index, coeff));
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, blocks: &[CMatrix], scalars: &[f64]) -> f64 {
        self.blocks.iter().map(|(b, c)| re_inner(c, &blocks[*b])).sum::<f64>()
            + self.scalars.iter().map(|(i, s)| s * scalars[*i]).sum::<f64>()
            + self.constant
    }
}

impl Expression {
    pub fn linear(f: Functional) -> Self {
        Self { linear: f, logs: vec![] }
    }

    pub fn eval(&self, blocks: &[CMatrix], scalars: &[f64]) -> f64 {
        self.linear.eval(blocks, scalars)
            + self.logs.iter().map(|l| l.weight * l.arg.eval(blocks, scalars).log2()).sum::<f64>()
    }
}

impl SubproblemSpec {
    pub fn add_block(&mut self, name: impl Into<String>, dim: usize) -> usize {
        self.blocks.push(BlockVar { name: name.into(), dim });
        self.blocks.len() - 1
    }

    pub fn add_scalar(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.scalars.push(ScalarVar { name: name.into(), lower, upper });
        self.scalars.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, expr: Expression, sense: Sense, bound: f64) {
        self.constraints.push(Constraint { name: name.into(), expr, sense, bound });
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() && self.scalars.is_empty() {
            return Err(Error::Shape("subproblem has no variables".into()));
        }
        for b in &self.blocks {
            if b.dim == 0 {
                return Err(Error::Shape(format!("block '{}' has dimension 0", b.name)));
            }
        }
        for s in &self.scalars {
            if !(s.lower < s.upper) || (s.lower.is_infinite() && s.upper.is_infinite()) {
                return Err(Error::Shape(format!("scalar '{}' needs lower < upper with one finite bound", s.name)));
            }
        }
        self.check_expression("objective", &self.objective, true)?;
        for c in &self.constraints {
            self.check_expression(&c.name, &c.expr, c.sense == Sense::Ge)?;
            if !c.bound.is_finite() {
                return Err(Error::Shape(format!("constraint '{}' has a non-finite bound", c.name)));
            }
        }
        Ok(())
    }

    fn check_functional(&self, what: &str, f: &Functional) -> Result<()> {
        for (b, c) in &f.blocks {
            let dim = self.blocks.get(*b).ok_or_else(|| Error::Shape(format!("{what}: block index {b} out of range")))?.dim;
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::Shape(format!("{what}: coefficient for block {b} is not {dim}x{dim}")));
            }
            let scale = 1.0 + c.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let dev = hermitian_deviation(c);
            if dev > 1e-10 * scale {
                return Err(Error::NotHermitian(dev));
            }
        }
        for (i, s) in &f.scalars {
            if *i >= self.scalars.len() {
                return Err(Error::Shape(format!("{what}: scalar index {i} out of range")));
            }
            if !s.is_finite() {
                return Err(Error::Shape(format!("{what}: non-finite scalar coefficient")));
            }
        }
        if !f.constant.is_finite() {
            return Err(Error::Shape(format!("{what}: non-finite constant")));
        }
        Ok(())
    }

    fn check_expression(&self, what: &str, e: &Expression, logs_allowed: bool) -> Result<()> {
        self.check_functional(what, &e.linear)?;
        if !e.logs.is_empty() && !logs_allowed {
            return Err(Error::Shape(format!("{what}: log terms are only allowed in the objective and in >= rows")));
        }
        for l in &e.logs {
            self.check_functional(what, &l.arg)?;
            if !(l.weight > 0.0 && l.weight.is_finite()) {
                return Err(Error::Shape(format!("{what}: log weight must be positive")));
            }
            // The argument must stay positive on the whole domain so the
            // barrier never has to leave it.
            let mut floor = l.arg.constant;
            for (i, s) in &l.arg.scalars {
                let v = &self.scalars[*i];
                floor += if *s > 0.0 { s * v.lower } else { s * v.upper };
            }
            let psd = l.arg.blocks.iter().all(|(_, c)| {
                min_eigenvalue(c) >= -1e-12 * (1.0 + c.iter().map(|z| z.norm()).fold(0.0, f64::max))
            });
            if !(floor > 0.0) || !psd {
                return Err(Error::Shape(format!("{what}: log argument is not positive over the domain")));
            }
        }
        Ok(())
    }
}

/// Eigenvalue clamp of a Hermitian matrix at `floor >= 0`.
pub fn psd_project(x: &CMatrix, floor: f64) -> Result<CMatrix> {
    if x.nrows() != x.ncols() {
        return Err(Error::Shape("psd_project needs a square matrix".into()));
    }
    if !(floor >= 0.0) {
        return Err(Error::config("psd_project floor must be non-negative"));
    }
    let scale = x.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let dev = hermitian_deviation(x);
    if dev > 1e-8 * scale {
        return Err(Error::NotHermitian(dev));
    }
    let (vals, vecs) = hermitian_eigen(x);
    if vals.iter().all(|&l| l >= floor) {
        return Ok(symmetrize(x));
    }
    let clamped = vals.map(|l| Complex64::new(l.max(floor), 0.0));
    let out = &vecs * DMatrix::from_diagonal(&clamped) * vecs.adjoint();
    Ok(symmetrize(&out))
}

/// Solves the subproblem with the log-barrier method.
pub fn solve(spec: &SubproblemSpec, opts: &SolverOptions) -> Result<SubproblemSolution> {
    spec.validate()?;
    let dims: Vec<usize> = spec.blocks.iter().map(|b| b.dim).collect();
    let ns = spec.scalars.len();
    let lo: Vec<f64> = spec.scalars.iter().map(|s| s.lower).collect();
    let hi: Vec<f64> = spec.scalars.iter().map(|s| s.upper).collect();

    let obj = Row::from_expression(&spec.objective, &dims, ns, 0.0, 1.0);
    let mut rows = Vec::new();
    let mut eqs = Vec::new();
    for c in &spec.constraints {
        let (sign, row) = match c.sense {
            Sense::Ge => (1.0, true),
            Sense::Le => (-1.0, true),
            Sense::Eq => (1.0, false),
        };
        let r = Row::from_expression(&c.expr, &dims, ns, -c.bound, sign);
        let norm = r.norm();
        if norm == 0.0 {
            let ok = if row { r.lin.c >= 0.0 } else { r.lin.c == 0.0 };
            if !ok {
                return Ok(infeasible_solution(spec, &dims, f64::INFINITY, 0));
            }
            continue;
        }
        let r = r.scaled(1.0 / norm);
        if row {
            rows.push(r);
        } else {
            eqs.push(r.lin);
        }
    }
    let prob = Problem { dims: dims.clone(), lo: lo.clone(), hi: hi.clone(), obj, rows, eqs };

    // Starting point: scaled identities inside the tightest PSD-budget row.
    let alpha = prob.initial_scale();
    let mut z = Point::zeros(&dims, ns);
    for (b, &d) in z.blocks.iter_mut().zip(&dims) {
        *b = CMatrix::identity(d, d) * Complex64::new(alpha, 0.0);
    }
    for i in 0..ns {
        z.scalars[i] = interior_start(lo[i], hi[i]);
    }

    let mut iterations = 0;
    let worst = prob.rows.iter().map(|r| r.value(&z).unwrap_or(f64::NEG_INFINITY)).fold(f64::INFINITY, f64::min);
    if !prob.rows.is_empty() && !(worst > 0.0) {
        let s0 = 1.0 + (-worst).max(0.0);
        if !s0.is_finite() {
            return Err(Error::Subproblem("log argument non-positive at the starting point".into()));
        }
        let phase1 = prob.phase_one(s0);
        let mut z1 = z.clone();
        z1.scalars.push(s0);
        let s_index = ns;
        let feas_tol = opts.feas_tol;
        let run = path_follow(&phase1, z1, 1.0, opts, |p, pt, t, centered| {
            let s = pt.scalars[s_index];
            let eq_ok = p.eq_residual(pt) <= feas_tol;
            if s < 0.0 && eq_ok {
                Some(Stop::Feasible)
            } else if centered && s - p.nu() / t > 0.0 {
                Some(Stop::Infeasible)
            } else {
                None
            }
        });
        iterations += run.iterations;
        let s = run.point.scalars[s_index];
        match run.outcome {
            Outcome::Stopped(Stop::Feasible) => {
                z = run.point;
                z.scalars.truncate(ns);
            }
            Outcome::Stopped(Stop::Infeasible) | Outcome::Converged => {
                return Ok(infeasible_solution(spec, &dims, s, iterations));
            }
            Outcome::MaxIters | Outcome::Stalled | Outcome::Failed => {
                if s < 0.0 && phase1.eq_residual(&run.point) <= feas_tol {
                    z = run.point;
                    z.scalars.truncate(ns);
                } else {
                    return Ok(infeasible_solution(spec, &dims, s.max(0.0), iterations));
                }
            }
        }
    }

    let f0 = prob.obj.value(&z).unwrap_or(0.0);
    let t0 = prob.nu() / (1.0 + f0.abs());
    let run = path_follow(&prob, z, t0, opts, |_, _, _, _| None);
    iterations += run.iterations;
    let z = run.point;
    let objective_value = prob.obj.value(&z).unwrap_or(f64::NAN);
    // Bound certified at the last centered point; the returned point may
    // lie a little past it when centering at the next barrier weight stalled.
    let dual_bound = run.trace.last().map_or(f64::INFINITY, |&(_, b)| b.max(objective_value));
    let gap = dual_bound - objective_value;
    let kkt_residual = (run.decrement.max(0.0).sqrt() / run.t_centered).max(prob.eq_residual(&z));
    let blocks = z.blocks.iter().map(symmetrize).collect::<Vec<_>>();
    let scalars = z.scalars.clone();
    let max_violation = spec_violation(spec, &blocks, &scalars);
    let status = match run.outcome {
        Outcome::Converged | Outcome::Stalled
            if gap <= opts.accept_gap_tol * (1.0 + objective_value.abs())
                && max_violation <= opts.feas_tol
                && kkt_residual <= opts.kkt_tol =>
        {
            SolveStatus::Optimal
        }
        _ => SolveStatus::MaxIters,
    };
    Ok(SubproblemSolution {
        blocks,
        scalars,
        objective_value: spec.objective.eval(&z.blocks, &z.scalars),
        dual_bound,
        status,
        kkt_residual,
        max_violation,
        iterations,
        trace: run.trace,
        infeasibility: 0.0,
    })
}

fn infeasible_solution(spec: &SubproblemSpec, dims: &[usize], s: f64, iterations: usize) -> SubproblemSolution {
    SubproblemSolution {
        blocks: dims.iter().map(|&d| CMatrix::zeros(d, d)).collect(),
        scalars: spec.scalars.iter().map(|v| interior_start(v.lower, v.upper)).collect(),
        objective_value: f64::NAN,
        dual_bound: f64::NAN,
        status: SolveStatus::Infeasible,
        kkt_residual: f64::NAN,
        max_violation: f64::NAN,
        iterations,
        trace: vec![],
        infeasibility: s,
    }
}

fn interior_start(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + lo.abs().max(1.0),
        (false, true) => hi - hi.abs().max(1.0),
        (false, false) => 0.0,
    }
}

/// Largest violation of the subproblem rows and PSD constraints, relative to `1 + |bound|`.
pub fn spec_violation(spec: &SubproblemSpec, blocks: &[CMatrix], scalars: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for c in &spec.constraints {
        let v = c.expr.eval(blocks, scalars);
        let viol = match c.sense {
            Sense::Ge => c.bound - v,
            Sense::Le => v - c.bound,
            Sense::Eq => (v - c.bound).abs(),
        };
        worst = worst.max(viol / (1.0 + c.bound.abs()));
    }
    for b in blocks {
        worst = worst.max(-min_eigenvalue(b));
    }
    for (v, s) in scalars.iter().zip(&spec.scalars) {
        worst = worst.max(s.lower - v).max(v - s.upper);
    }
    worst
}

/// Real inner product `Re tr(A B)` of Hermitian matrices.
fn re_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

#[derive(Debug, Clone)]
struct Point {
    blocks: Vec<CMatrix>,
    scalars: Vec<f64>,
}

impl Point {
    fn zeros(dims: &[usize], ns: usize) -> Self {
        Self { blocks: dims.iter().map(|&d| CMatrix::zeros(d, d)).collect(), scalars: vec![0.0; ns] }
    }

    fn dot(&self, o: &Point) -> f64 {
        self.blocks.iter().zip(&o.blocks).map(|(a, b)| re_inner(a, b)).sum::<f64>()
            + self.scalars.iter().zip(&o.scalars).map(|(a, b)| a * b).sum::<f64>()
    }

    fn axpy(&mut self, a: f64, o: &Point) {
        let ac = Complex64::new(a, 0.0);
        for (x, y) in self.blocks.iter_mut().zip(&o.blocks) {
            x.zip_apply(y, |p, q| *p += ac * q);
        }
        for (x, y) in self.scalars.iter_mut().zip(&o.scalars) {
            *x += a * y;
        }
    }

    fn scale(&mut self, a: f64) {
        let ac = Complex64::new(a, 0.0);
        for x in &mut self.blocks {
            *x *= ac;
        }
        for x in &mut self.scalars {
            *x *= a;
        }
    }

    fn from_functional(f: &Functional, dims: &[usize], ns: usize) -> (Point, f64) {
        let mut p = Point::zeros(dims, ns);
        for (b, c) in &f.blocks {
            p.blocks[*b] += symmetrize(c);
        }
        for (i, s) in &f.scalars {
            p.scalars[*i] += s;
        }
        (p, f.constant)
    }
}

#[derive(Debug, Clone)]
struct Aff {
    p: Point,
    c: f64,
}

impl Aff {
    fn eval(&self, z: &Point) -> f64 {
        self.p.dot(z) + self.c
    }
}

/// `lin(z) + sum k ln(arg(z))`; used for the objective and `>= 0` rows.
#[derive(Debug, Clone)]
struct Row {
    lin: Aff,
    logs: Vec<(f64, Aff)>,
}

impl Row {
    fn from_expression(e: &Expression, dims: &[usize], ns: usize, shift: f64, sign: f64) -> Row {
        let (mut p, c) = Point::from_functional(&e.linear, dims, ns);
        p.scale(sign);
        let logs = e
            .logs
            .iter()
            .map(|l| {
                let (ap, ac) = Point::from_functional(&l.arg, dims, ns);
                (sign * l.weight / std::f64::consts::LN_2, Aff { p: ap, c: ac })
            })
            .collect();
        Row { lin: Aff { p, c: sign * (c + shift) }, logs }
    }

    fn norm(&self) -> f64 {
        let mut n2 = self.lin.p.dot(&self.lin.p);
        for (k, a) in &self.logs {
            n2 += k * k * a.p.dot(&a.p);
        }
        n2.sqrt()
    }

    fn scaled(mut self, f: f64) -> Row {
        self.lin.p.scale(f);
        self.lin.c *= f;
        for (k, _) in &mut self.logs {
            *k *= f;
        }
        self
    }

    fn value(&self, z: &Point) -> Option<f64> {
        let mut v = self.lin.eval(z);
        for (k, a) in &self.logs {
            let x = a.eval(z);
            if !(x > 0.0) {
                return None;
            }
            v += k * x.ln();
        }
        Some(v)
    }

    /// Gradient plus the log-argument values at `z`.
    fn gradient(&self, z: &Point) -> (Point, Vec<f64>) {
        let mut g = self.lin.p.clone();
        let mut args = Vec::with_capacity(self.logs.len());
        for (k, a) in &self.logs {
            let x = a.eval(z);
            g.axpy(k / x, &a.p);
            args.push(x);
        }
        (g, args)
    }
}

struct Problem {
    dims: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    obj: Row,
    rows: Vec<Row>,
    eqs: Vec<Aff>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Converged,
    Stopped(Stop),
    MaxIters,
    /// Line search can no longer make progress at this precision.
    Stalled,
    Failed,
}

struct Run {
    point: Point,
    outcome: Outcome,
    iterations: usize,
    /// Squared Newton decrement at the last completed centering.
    decrement: f64,
    trace: Vec<(f64, f64)>,
    /// Barrier parameter of the last completed centering (0 if none).
    t_centered: f64,
}

impl Problem {
    fn nu(&self) -> f64 {
        let bounds = self.lo.iter().filter(|l| l.is_finite()).count() + self.hi.iter().filter(|h| h.is_finite()).count();
        (self.dims.iter().sum::<usize>() + bounds + self.rows.len()) as f64
    }

    fn eq_residual(&self, z: &Point) -> f64 {
        self.eqs.iter().map(|e| e.eval(z).abs()).fold(0.0, f64::max)
    }

    /// Largest `alpha` such that `alpha * I` blocks use at most half of every
    /// row that caps a PSD combination of the blocks.
    fn initial_scale(&self) -> f64 {
        let mut alpha: f64 = 1.0;
        let mut found = false;
        for r in &self.rows {
            if !r.logs.is_empty() || r.lin.p.scalars.iter().any(|&s| s != 0.0) || !(r.lin.c > 0.0) {
                continue;
            }
            let caps = r.lin.p.blocks.iter().all(|b| {
                let scale = 1.0 + b.iter().map(|z| z.norm()).fold(0.0, f64::max);
                -hermitian_eigen(b).0.max() >= -1e-12 * scale
            });
            let tr: f64 = -r.lin.p.blocks.iter().map(|b| b.trace().re).sum::<f64>();
            if caps && tr > 0.0 {
                let a = r.lin.c / (2.0 * tr);
                alpha = if found { alpha.min(a) } else { a };
                found = true;
            }
        }
        alpha
    }

    /// Rows relaxed by a shared slack `s` (appended scalar), minimizing `s`.
    fn phase_one(&self, s0: f64) -> Problem {
        let ns = self.lo.len();
        let extend = |p: &Point, v: f64| {
            let mut q = p.clone();
            q.scalars.push(v);
            q
        };
        let rows = self
            .rows
            .iter()
            .map(|r| Row {
                lin: Aff { p: extend(&r.lin.p, 1.0), c: r.lin.c },
                logs: r.logs.iter().map(|(k, a)| (*k, Aff { p: extend(&a.p, 0.0), c: a.c })).collect(),
            })
            .collect();
        let mut obj_p = Point::zeros(&self.dims, ns + 1);
        obj_p.scalars[ns] = -1.0;
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.push(-(1.0 + s0));
        hi.push(f64::INFINITY);
        Problem {
            dims: self.dims.clone(),
            lo,
            hi,
            obj: Row { lin: Aff { p: obj_p, c: 0.0 }, logs: vec![] },
            rows,
            eqs: self.eqs.iter().map(|e| Aff { p: extend(&e.p, 0.0), c: e.c }).collect(),
        }
    }

    /// `-t * obj + barrier`, or `None` outside the domain.
    fn barrier_value(&self, z: &Point, t: f64) -> Option<f64> {
        let mut v = -t * self.obj.value(z)?;
        for b in &z.blocks {
            v -= hpd_logdet(b)?;
        }
        for (i, &y) in z.scalars.iter().enumerate() {
            if self.lo[i].is_finite() {
                let d = y - self.lo[i];
                if !(d > 0.0) {
                    return None;
                }
                v -= d.ln();
            }
            if self.hi[i].is_finite() {
                let d = self.hi[i] - y;
                if !(d > 0.0) {
                    return None;
                }
                v -= d.ln();
            }
        }
        for r in &self.rows {
            let h = r.value(z)?;
            if !(h > 0.0) {
                return None;
            }
            v -= h.ln();
        }
        v.is_finite().then_some(v)
    }

    /// Newton step for `-t * obj + barrier` with the equality rows linearized.
    /// Returns the step, the squared Newton decrement `step' H step` and the
    /// equality multipliers.
    ///
    /// `shift` is a multiplier estimate (normally the previous step's). It
    /// is folded into the gradient before the curvature solve, which leaves
    /// the projected step unchanged in exact arithmetic but avoids forming
    /// and then cancelling terms of size `t` once the objective gradient is
    /// nearly a combination of the equality normals.
    fn newton_step(&self, z: &Point, t: f64, shift: &[f64]) -> Option<(Point, f64, Vec<f64>)> {
        let ns = z.scalars.len();
        // Gradient without the log-det part; that part, -X^{-1}, maps to -X
        // under the inverse block curvature and is added exactly below.
        let mut grad = Point::zeros(&self.dims, ns);
        let xs_inv = z.blocks.iter().map(hpd_inverse).collect::<Option<Vec<_>>>()?;
        let mut dcurv = vec![0.0; ns];
        for i in 0..ns {
            let y = z.scalars[i];
            if self.lo[i].is_finite() {
                let d = y - self.lo[i];
                grad.scalars[i] -= 1.0 / d;
                dcurv[i] += 1.0 / (d * d);
            }
            if self.hi[i].is_finite() {
                let d = self.hi[i] - y;
                grad.scalars[i] += 1.0 / d;
                dcurv[i] += 1.0 / (d * d);
            }
        }
        let mut us: Vec<Point> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let (og, oargs) = self.obj.gradient(z);
        grad.axpy(-t, &og);
        for ((k, a), x) in self.obj.logs.iter().zip(&oargs) {
            us.push(a.p.clone());
            cs.push(t * k / (x * x));
        }
        for r in &self.rows {
            let h = r.value(z)?;
            let (g, args) = r.gradient(z);
            grad.axpy(-1.0 / h, &g);
            for ((k, a), x) in r.logs.iter().zip(&args) {
                us.push(a.p.clone());
                cs.push(k / (h * x * x));
            }
            us.push(g);
            cs.push(1.0 / (h * h));
        }
        for (e, &nu) in self.eqs.iter().zip(shift) {
            grad.axpy(nu, &e.p);
        }

        let hess = Woodbury::new(&z.blocks, &dcurv, us, &cs)?;
        let mut neg = grad.clone();
        neg.scale(-1.0);
        let mut y = hess.dinv(&neg);
        for (yb, xb) in y.blocks.iter_mut().zip(&z.blocks) {
            *yb += xb;
        }
        let mut step = hess.correct(y);
        let mut multipliers = shift.to_vec();
        if !self.eqs.is_empty() {
            let zs: Vec<Point> = self.eqs.iter().map(|e| hess.solve(&e.p)).collect();
            let m = self.eqs.len();
            let gram = DMatrix::from_fn(m, m, |i, j| self.eqs[i].p.dot(&zs[j]));
            let rhs = DVector::from_fn(m, |i, _| self.eqs[i].p.dot(&step) + self.eqs[i].eval(z));
            let nu = gram.lu().solve(&rhs)?;
            for (e, zi) in zs.iter().enumerate() {
                step.axpy(-nu[e], zi);
                multipliers[e] += nu[e];
            }
        }
        for b in &mut step.blocks {
            *b = symmetrize(b);
        }
        // step' H step, term by term; each term is non-negative.
        let mut dec: f64 = xs_inv
            .iter()
            .zip(&step.blocks)
            .map(|(xi, d)| {
                let p = xi * d;
                re_inner(&p.adjoint(), &p)
            })
            .sum();
        dec += step.scalars.iter().zip(&dcurv).map(|(d, c)| c * d * d).sum::<f64>();
        dec += hess.us.iter().zip(&cs).map(|(u, c)| c * u.dot(&step).powi(2)).sum::<f64>();
        dec.is_finite().then_some((step, dec, multipliers))
    }
}

/// Inverse of `D + sum c_r u_r u_r^T`, `D` being the block/scalar barrier
/// curvature.
struct Woodbury<'a> {
    xs: &'a [CMatrix],
    dcurv: &'a [f64],
    ys: Vec<Point>,
    us: Vec<Point>,
    factor: Factor,
}

enum Factor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Empty,
}

impl<'a> Woodbury<'a> {
    fn new(xs: &'a [CMatrix], dcurv: &'a [f64], us: Vec<Point>, cs: &[f64]) -> Option<Self> {
        if dcurv.iter().any(|&d| !(d > 0.0)) {
            return None;
        }
        let mut w = Self { xs, dcurv, ys: vec![], us: vec![], factor: Factor::Empty };
        let ys: Vec<Point> = us.iter().map(|u| w.dinv(u)).collect();
        let r = us.len();
        if r > 0 {
            let mut s = DMatrix::from_fn(r, r, |i, j| us[i].dot(&ys[j]));
            s = (&s + s.transpose()) * 0.5;
            for i in 0..r {
                s[(i, i)] += 1.0 / cs[i];
            }
            w.factor = match Cholesky::new(s.clone()) {
                Some(c) => Factor::Chol(c),
                None => Factor::Lu(s.lu()),
            };
        }
        w.ys = ys;
        w.us = us;
        Some(w)
    }

    fn dinv(&self, v: &Point) -> Point {
        Point {
            blocks: self.xs.iter().zip(&v.blocks).map(|(x, b)| x * b * x).collect(),
            scalars: v.scalars.iter().zip(self.dcurv).map(|(a, d)| a / d).collect(),
        }
    }

    fn solve(&self, v: &Point) -> Point {
        self.correct(self.dinv(v))
    }

    /// Applies the low-rank correction to `y = D^{-1} v`.
    fn correct(&self, mut y: Point) -> Point {
        if self.us.is_empty() {
            return y;
        }
        let rhs = DVector::from_iterator(self.us.len(), self.us.iter().map(|u| u.dot(&y)));
        let w = match &self.factor {
            Factor::Chol(c) => c.solve(&rhs),
            Factor::Lu(l) => l.solve(&rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
            Factor::Empty => return y,
        };
        for (r, yr) in self.ys.iter().enumerate() {
            y.axpy(-w[r], yr);
        }
        y
    }
}

fn path_follow<F>(prob: &Problem, mut z: Point, t0: f64, opts: &SolverOptions, mut stop: F) -> Run
where
    F: FnMut(&Problem, &Point, f64, bool) -> Option<Stop>,
{
    const NEWTON_TOL: f64 = 1e-10;
    const ARMIJO: f64 = 0.01;
    const MAX_CENTERING_STEPS: usize = 60;
    let nu = prob.nu();
    let mut t = t0.max(1e-12);
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut decrement = f64::INFINITY;
    let mut t_centered = 0.0;
    let mut multipliers = vec![0.0; prob.eqs.len()];
    loop {
        // Centering.
        let mut inner = 0;
        loop {
            if inner >= MAX_CENTERING_STEPS {
                return Run { point: z, outcome: Outcome::Stalled, iterations, decrement, trace, t_centered };
            }
            inner += 1;
            if iterations >= opts.max_iters {
                return Run { point: z, outcome: Outcome::MaxIters, iterations, decrement, trace, t_centered };
            }
            let Some((step, dec, nu)) = prob.newton_step(&z, t, &multipliers) else {
                return Run { point: z, outcome: Outcome::Failed, iterations, decrement, trace, t_centered };
            };
            multipliers = nu;
            let eq_res = prob.eq_residual(&z);
            // Equality rows are normalized, so an absolute threshold is fine.
            let eq_feasible = eq_res <= 1e-10;
            if eq_feasible && dec / 2.0 <= NEWTON_TOL {
                decrement = dec;
                break;
            }
            let f0 = prob.barrier_value(&z, t).unwrap_or(f64::INFINITY);
            let mut s = 1.0;
            let mut accepted = None;
            while s > 1e-14 {
                let mut trial = z.clone();
                trial.axpy(s, &step);
                if let Some(f) = prob.barrier_value(&trial, t) {
                    let pure = dec < 0.05 || !eq_feasible;
                    if pure || f <= f0 - ARMIJO * s * dec {
                        accepted = Some(trial);
                        break;
                    }
                }
                s *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some(p) if s >= 1e-6 => z = p,
                Some(p) => {
                    z = p;
                    return Run { point: z, outcome: Outcome::Stalled, iterations, decrement, trace, t_centered };
                }
                None => return Run { point: z, outcome: Outcome::Stalled, iterations, decrement, trace, t_centered },
            }
            if let Some(k) = stop(prob, &z, t, false) {
                return Run { point: z, outcome: Outcome::Stopped(k), iterations, decrement, trace, t_centered };
            }
        }
        if let Some(k) = stop(prob, &z, t, true) {
            return Run { point: z, outcome: Outcome::Stopped(k), iterations, decrement, trace, t_centered };
        }
        t_centered = t;
        let f = prob.obj.value(&z).unwrap_or(f64::NAN);
        let gap = nu / t;
        trace.push((f, f + gap));
        if gap <= opts.gap_tol * (1.0 + f.abs()) {
            return Run { point: z, outcome: Outcome::Converged, iterations, decrement, trace, t_centered };
        }
        t *= opts.mu;
        for nu in &mut multipliers {
            *nu *= opts.mu;
        }
    }
}

/// Writes a subproblem in the line-oriented text format read by [`parse_text`].
///
/// ```text
/// maiscc-sdp 1
/// block <name> <dim>
/// scalar <name> <lower> <upper>
/// objective
///   <terms>
/// end
/// constraint <name> <ge|le|eq> <bound>
///   <terms>
/// end
/// ```
///
/// Terms are `const <v>`, `var <scalar> <coef>`, `entry <block> <i> <j> <re> <im>`
/// (upper triangle, zero-based) and `log <weight>` ... `endlog` wrapping the
/// terms of the argument. Names must not contain whitespace.
pub fn write_text(spec: &SubproblemSpec) -> String {
    let mut out = String::from("maiscc-sdp 1\n");
    for b in &spec.blocks {
        let _ = writeln!(out, "block {} {}", token(&b.name), b.dim);
    }
    for s in &spec.scalars {
        let _ = writeln!(out, "scalar {} {} {}", token(&s.name), s.lower, s.upper);
    }
    out.push_str("objective\n");
    write_expression(&mut out, &spec.objective);
    out.push_str("end\n");
    for c in &spec.constraints {
        let sense = match c.sense {
            Sense::Ge => "ge",
            Sense::Le => "le",
            Sense::Eq => "eq",
        };
        let _ = writeln!(out, "constraint {} {} {}", token(&c.name), sense, c.bound);
        write_expression(&mut out, &c.expr);
        out.push_str("end\n");
    }
    out
}

fn token(name: &str) -> String {
    if name.is_empty() {
        "_".into()
    } else {
        name.split_whitespace().collect::<Vec<_>>().join("_")
    }
}

fn write_functional(out: &mut String, f: &Functional, indent: &str) {
    if f.constant != 0.0 {
        let _ = writeln!(out, "{indent}const {}", f.constant);
    }
    for (i, s) in &f.scalars {
        let _ = writeln!(out, "{indent}var {i} {s}");
    }
    for (b, c) in &f.blocks {
        for i in 0..c.nrows() {
            for j in i..c.ncols() {
                let z = c[(i, j)];
                if z.re != 0.0 || z.im != 0.0 {
                    let _ = writeln!(out, "{indent}entry {b} {i} {j} {} {}", z.re, z.im);
                }
            }
        }
    }
}

fn write_expression(out: &mut String, e: &Expression) {
    write_functional(out, &e.linear, "  ");
    for l in &e.logs {
        let _ = writeln!(out, "  log {}", l.weight);
        write_functional(out, &l.arg, "    ");
        out.push_str("  endlog\n");
    }
}

/// Reads the format produced by [`write_text`].
pub fn parse_text(text: &str) -> Result<SubproblemSpec> {
    let err = |line: usize, msg: &str| Error::config(format!("sdp text line {}: {msg}", line + 1));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == "maiscc-sdp 1" => {}
        _ => return Err(Error::config("sdp text: missing 'maiscc-sdp 1' header")),
    }
    let mut spec = SubproblemSpec::default();
    let num = |line: usize, s: Option<&str>| -> Result<f64> {
        s.and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| err(line, "expected a number"))
    };
    let idx = |line: usize, s: Option<&str>| -> Result<usize> {
        s.and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| err(line, "expected an index"))
    };

    // Pending expression being filled: (target, inside-log flag).
    enum Target {
        Objective,
        Constraint,
    }
    let mut current: Option<Target> = None;
    let mut expr = Expression::default();
    let mut log: Option<LogTerm> = None;

    for (ln, raw) in lines {
        let mut it = raw.split_whitespace();
        let head = it.next().unwrap_or("");
        if current.is_none() {
            match head {
                "block" => {
                    let name = it.next().ok_or_else(|| err(ln, "block name"))?.to_string();
                    let dim = idx(ln, it.next())?;
                    spec.add_block(name, dim);
                }
                "scalar" => {
                    let name = it.next().ok_or_else(|| err(ln, "scalar name"))?.to_string();
                    let lo = num(ln, it.next())?;
                    let hi = num(ln, it.next())?;
                    spec.add_scalar(name, lo, hi);
                }
                "objective" => {
                    current = Some(Target::Objective);
                    expr = Expression::default();
                }
                "constraint" => {
                    let name = it.next().ok_or_else(|| err(ln, "constraint name"))?.to_string();
                    let sense = match it.next() {
                        Some("ge") => Sense::Ge,
                        Some("le") => Sense::Le,
                        Some("eq") => Sense::Eq,
                        _ => return Err(err(ln, "sense must be ge, le or eq")),
                    };
                    let bound = num(ln, it.next())?;
                    spec.constraints.push(Constraint { name, expr: Expression::default(), sense, bound });
                    current = Some(Target::Constraint);
                    expr = Expression::default();
                }
                _ => return Err(err(ln, "unexpected keyword")),
            }
            continue;
        }
        let f = match log.as_mut() {
            Some(l) => &mut l.arg,
            None => &mut expr.linear,
        };
        match head {
            "const" => f.constant += num(ln, it.next())?,
            "var" => {
                let i = idx(ln, it.next())?;
                let v = num(ln, it.next())?;
                f.scalars.push((i, v));
            }
            "entry" => {
                let b = idx(ln, it.next())?;
                let i = idx(ln, it.next())?;
                let j = idx(ln, it.next())?;
                let re = num(ln, it.next())?;
                let im = num(ln, it.next())?;
                let dim = spec.blocks.get(b).ok_or_else(|| err(ln, "block index out of range"))?.dim;
                if i > j || j >= dim {
                    return Err(err(ln, "entry must be in the upper triangle"));
                }
                let pos = match f.blocks.iter().position(|(k, _)| *k == b) {
                    Some(p) => p,
                    None => {
                        f.blocks.push((b, CMatrix::zeros(dim, dim)));
                        f.blocks.len() - 1
                    }
                };
                let m = &mut f.blocks[pos].1;
                m[(i, j)] = Complex64::new(re, im);
                m[(j, i)] = Complex64::new(re, -im);
                if i == j {
                    m[(i, i)] = Complex64::new(re, 0.0);
                }
            }
            "log" => {
                if log.is_some() {
                    return Err(err(ln, "nested log"));
                }
                log = Some(LogTerm { weight: num(ln, it.next())?, arg: Functional::default() });
            }
            "endlog" => {
                let l = log.take().ok_or_else(|| err(ln, "endlog without log"))?;
                expr.logs.push(l);
            }
            "end" => {
                if log.is_some() {
                    return Err(err(ln, "unterminated log"));
                }
                let e = std::mem::take(&mut expr);
                match current.take() {
                    Some(Target::Objective) => spec.objective = e,
                    Some(Target::Constraint) => spec.constraints.last_mut().expect("constraint pushed").expr = e,
                    None => unreachable!(),
                }
            }
            _ => return Err(err(ln, "unexpected term")),
        }
    }
    if current.is_some() {
        return Err(Error::config("sdp text: unterminated section"));
    }
    Ok(spec)
}

/// Solution dump: status line, objective, then each block's upper triangle.
pub fn solution_to_text(sol: &SubproblemSolution) -> String {
    let status = match sol.status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::MaxIters => "max_iters",
    };
    let mut out = format!(
        "status {status}\nobjective {}\ndual_bound {}\nkkt_residual {}\n",
        sol.objective_value, sol.dual_bound, sol.kkt_residual
    );
    for (i, s) in sol.scalars.iter().enumerate() {
        let _ = writeln!(out, "var {i} {s}");
    }
    for (b, m) in sol.blocks.iter().enumerate() {
        for i in 0..m.nrows() {
            for j in i..m.ncols() {
                let _ = writeln!(out, "entry {b} {i} {j} {} {}", m[(i, j)].re, m[(i, j)].im);
            }
        }
    }
    out
}
