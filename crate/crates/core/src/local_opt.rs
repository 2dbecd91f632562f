//! Local energy minimization.
//!
//! Three descent methods share one harness: steepest descent, Polak-Ribiere
//! conjugate gradient (non-negative beta, periodic restart), and L-BFGS via
//! the two-loop recursion. The harness owns the line search, the termination
//! tests, and the trace bookkeeping, so the methods differ only in how they
//! pick a direction.
//!
//! Termination, in the order checked each iteration:
//! 1. force_tol: largest per-atom force magnitude dropped below the tolerance,
//! 2. max_steps: the accepted-step budget ran out,
//! 3. line_search_failure: no acceptable point along the current direction,
//! 4. energy_tol: the last accepted step improved the energy by less than the
//!    tolerance.
//!
//! One iteration means one accepted step; line-search probes are not counted.
//! Every accepted step satisfies the Armijo sufficient-decrease test with
//! c1 = 1e-4, so traces are strictly decreasing while iterations accumulate.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::config::Configuration;
use crate::potential::{PotentialError, PotentialModel};

#[derive(Debug, Error)]
pub enum OptError {
    #[error("invalid optimizer options: {0}")]
    BadOptions(String),
    #[error("energy model failed: {0}")]
    Model(#[from] PotentialError),
    #[error("non-finite energy or gradient at the starting configuration")]
    NonFiniteStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sd,
    Cg,
    Lbfgs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sd => "sd",
            Method::Cg => "cg",
            Method::Lbfgs => "lbfgs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sd" => Ok(Method::Sd),
            "cg" => Ok(Method::Cg),
            "lbfgs" => Ok(Method::Lbfgs),
            other => Err(format!(
                "unknown method {other:?}, expected sd, cg, or lbfgs"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearch {
    /// Halve the step until the Armijo test passes.
    BacktrackingArmijo,
    /// Fit a parabola through phi(0), phi'(0), and one probe, then jump to
    /// its minimum. Exact in one probe on quadratic models; falls back to
    /// backtracking when the fit is not convex or the jump is rejected.
    ExactQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EnergyTol,
    ForceTol,
    MaxSteps,
    LineSearchFailure,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::EnergyTol => "energy_tol",
            StopReason::ForceTol => "force_tol",
            StopReason::MaxSteps => "max_steps",
            StopReason::LineSearchFailure => "line_search_failure",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Accepted-step budget, at least 1.
    pub max_steps: usize,
    /// Stop once an accepted step improves the energy by less than this.
    /// Zero disables the test.
    pub energy_tol: f64,
    /// Stop once the largest per-atom force magnitude drops below this.
    pub force_tol: f64,
    /// L-BFGS correction-pair memory; ignored by sd and cg.
    pub history: usize,
    pub line_search: LineSearch,
    /// Per-atom freeze flags; frozen atoms keep their exact coordinates and
    /// contribute nothing to directions or the force test.
    pub freeze_mask: Option<Vec<bool>>,
}

impl Default for OptimizerOptions {
    /// Refinement-protocol defaults: 3000 steps, stop when a step gains less
    /// than 0.005 energy units or every per-atom force is below 1.0.
    fn default() -> Self {
        Self {
            max_steps: 3000,
            energy_tol: 0.005,
            force_tol: 1.0,
            history: 8,
            line_search: LineSearch::BacktrackingArmijo,
            freeze_mask: None,
        }
    }
}

impl OptimizerOptions {
    /// Tolerances tight enough to resolve cluster minima to ~1e-6: the energy
    /// test is disabled and convergence is decided by forces alone.
    pub fn tight() -> Self {
        Self {
            max_steps: 10_000,
            energy_tol: 0.0,
            force_tol: 1e-8,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), OptError> {
        if self.max_steps == 0 {
            return Err(OptError::BadOptions("max_steps must be at least 1".into()));
        }
        if !self.energy_tol.is_finite() || self.energy_tol < 0.0 {
            return Err(OptError::BadOptions(format!(
                "energy_tol must be finite and non-negative, got {}",
                self.energy_tol
            )));
        }
        if !self.force_tol.is_finite() || self.force_tol < 0.0 {
            return Err(OptError::BadOptions(format!(
                "force_tol must be finite and non-negative, got {}",
                self.force_tol
            )));
        }
        if self.history == 0 {
            return Err(OptError::BadOptions("history must be at least 1".into()));
        }
        if let Some(mask) = &self.freeze_mask {
            if mask.iter().all(|&f| f) {
                return Err(OptError::BadOptions("every atom is frozen".into()));
            }
        }
        Ok(())
    }
}

/// A differentiable function of a flat coordinate vector.
///
/// The optimizers run against this rather than against `PotentialModel`
/// directly so that non-atomic objectives (test quadratics of any dimension)
/// can exercise them too. Atomic models are adapted via `minimize_model`.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64, PotentialError>;

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), PotentialError>;

    /// Scalar the force tolerance is compared against. Defaults to the
    /// largest gradient component; atomic adapters use the largest per-atom
    /// force vector norm instead.
    fn max_force(&self, g: &[f64]) -> f64 {
        g.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub energy: f64,
    /// Energy at the start plus one entry per accepted step.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub reason: StopReason,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Curvature threshold below which an L-BFGS correction pair is discarded.
const CURVATURE_MIN: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Evaluates the objective at x + alpha * d; None when the point is not
/// usable (model error or non-finite energy), which the line search treats
/// as "keep backtracking".
fn probe(obj: &dyn Objective, x: &[f64], d: &[f64], alpha: f64) -> Option<(Vec<f64>, f64)> {
    let trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
    if !trial.iter().all(|c| c.is_finite()) {
        return None;
    }
    match obj.value(&trial) {
        Ok(e) if e.is_finite() => Some((trial, e)),
        _ => None,
    }
}

struct Accepted {
    x: Vec<f64>,
    alpha: f64,
}

fn armijo_ok(e_trial: f64, e0: f64, slope: f64, alpha: f64) -> bool {
    // The strict `< e0` guard matters once alpha is so small that the Armijo
    // margin underflows against e0: without it a zero-progress step would be
    // accepted and the optimizer would spin until max_steps.
    e_trial <= e0 + ARMIJO_C1 * alpha * slope && e_trial < e0
}

fn backtrack(
    obj: &dyn Objective,
    x: &[f64],
    e0: f64,
    d: &[f64],
    slope: f64,
    alpha0: f64,
) -> Option<Accepted> {
    let mut alpha = alpha0;
    for _ in 0..MAX_BACKTRACKS {
        if let Some((trial, e)) = probe(obj, x, d, alpha) {
            if armijo_ok(e, e0, slope, alpha) {
                return Some(Accepted { x: trial, alpha });
            }
        }
        alpha *= 0.5;
    }
    None
}

fn exact_quadratic(
    obj: &dyn Objective,
    x: &[f64],
    e0: f64,
    d: &[f64],
    slope: f64,
    alpha0: f64,
) -> Option<Accepted> {
    if let Some((_, e_probe)) = probe(obj, x, d, alpha0) {
        // Parabola through (0, e0) with slope phi'(0) and the probe point:
        // phi(a) ~ e0 + slope*a + c*a^2, minimized at -slope / 2c.
        let c = (e_probe - e0 - slope * alpha0) / (alpha0 * alpha0);
        if c > f64::EPSILON {
            let alpha_star = (-slope / (2.0 * c)).min(alpha0 * 1e6);
            if alpha_star > 0.0 {
                if let Some((trial, e)) = probe(obj, x, d, alpha_star) {
                    if armijo_ok(e, e0, slope, alpha_star) {
                        return Some(Accepted {
                            x: trial,
                            alpha: alpha_star,
                        });
                    }
                }
            }
        }
    }
    backtrack(obj, x, e0, d, slope, alpha0)
}

fn line_search(
    kind: LineSearch,
    obj: &dyn Objective,
    x: &[f64],
    e0: f64,
    d: &[f64],
    slope: f64,
    alpha0: f64,
) -> Option<Accepted> {
    match kind {
        LineSearch::BacktrackingArmijo => backtrack(obj, x, e0, d, slope, alpha0),
        LineSearch::ExactQuadratic => exact_quadratic(obj, x, e0, d, slope, alpha0),
    }
}

struct CgState {
    g_prev: Vec<f64>,
    d_prev: Vec<f64>,
    since_restart: usize,
}

#[derive(Default)]
struct LbfgsState {
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
}

impl LbfgsState {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, capacity: usize) {
        let sy = dot(&s, &y);
        // Skipping low-curvature pairs keeps the implicit Hessian positive
        // definite; the step that produced them is still used, just not
        // remembered.
        if !sy.is_finite() || sy <= CURVATURE_MIN {
            return;
        }
        if self.s.len() == capacity {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.rho.push_back(1.0 / sy);
    }

    /// Two-loop recursion with the standard gamma = s.y / y.y scaling of the
    /// initial inverse Hessian.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let m = self.s.len();
        if m == 0 {
            return g.iter().map(|c| -c).collect();
        }
        let mut q = g.to_vec();
        let mut a = vec![0.0; m];
        for i in (0..m).rev() {
            a[i] = self.rho[i] * dot(&self.s[i], &q);
            for (qk, yk) in q.iter_mut().zip(&self.y[i]) {
                *qk -= a[i] * yk;
            }
        }
        let gamma = dot(&self.s[m - 1], &self.y[m - 1]) / dot(&self.y[m - 1], &self.y[m - 1]);
        for qk in q.iter_mut() {
            *qk *= gamma;
        }
        for (i, ai) in a.iter().enumerate() {
            let b = self.rho[i] * dot(&self.y[i], &q);
            for (qk, sk) in q.iter_mut().zip(&self.s[i]) {
                *qk += (ai - b) * sk;
            }
        }
        for qk in q.iter_mut() {
            *qk = -*qk;
        }
        q
    }
}

enum MethodState {
    Sd,
    Cg(Option<CgState>),
    Lbfgs(LbfgsState),
}

/// Minimizes a raw objective. The freeze mask in `opts` is ignored here; it
/// is applied by the atomic adapter in `minimize_model`.
pub fn minimize(
    obj: &dyn Objective,
    method: Method,
    x0: &[f64],
    opts: &OptimizerOptions,
) -> Result<MinimizeResult, OptError> {
    opts.validate()?;
    if x0.len() != obj.dim() {
        return Err(OptError::BadOptions(format!(
            "starting point has dimension {}, objective expects {}",
            x0.len(),
            obj.dim()
        )));
    }

    let mut x = x0.to_vec();
    let (mut e, mut g) = obj.value_grad(&x)?;
    if !e.is_finite() || !g.iter().all(|c| c.is_finite()) {
        return Err(OptError::NonFiniteStart);
    }

    let mut energies = vec![e];
    let mut iterations = 0usize;
    let mut state = match method {
        Method::Sd => MethodState::Sd,
        Method::Cg => MethodState::Cg(None),
        Method::Lbfgs => MethodState::Lbfgs(LbfgsState::default()),
    };
    // Step-length memory for sd/cg: the first trial step has unit length,
    // later trials start at twice the last accepted length.
    let mut step_len: Option<f64> = None;

    let reason = loop {
        if obj.max_force(&g) < opts.force_tol {
            break StopReason::ForceTol;
        }
        if iterations >= opts.max_steps {
            break StopReason::MaxSteps;
        }

        // Direction, with a steepest-descent fallback whenever the method
        // proposes something that is not a descent direction.
        let mut d = match &mut state {
            MethodState::Sd => g.iter().map(|c| -c).collect::<Vec<f64>>(),
            MethodState::Cg(cg) => match cg {
                None => g.iter().map(|c| -c).collect(),
                Some(s) => {
                    if s.since_restart >= obj.dim() {
                        s.since_restart = 0;
                        g.iter().map(|c| -c).collect()
                    } else {
                        let gg_prev = dot(&s.g_prev, &s.g_prev);
                        let beta = ((dot(&g, &g) - dot(&g, &s.g_prev)) / gg_prev).max(0.0);
                        g.iter()
                            .zip(&s.d_prev)
                            .map(|(gc, dc)| -gc + beta * dc)
                            .collect()
                    }
                }
            },
            MethodState::Lbfgs(h) => h.direction(&g),
        };
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|c| -c).collect();
            slope = dot(&g, &d);
            if let MethodState::Lbfgs(h) = &mut state {
                *h = LbfgsState::default();
            }
            if let MethodState::Cg(Some(s)) = &mut state {
                s.since_restart = 0;
            }
        }

        let d_norm = norm(&d);
        if d_norm == 0.0 {
            // Zero gradient that the force test did not catch (force_tol 0).
            break StopReason::ForceTol;
        }
        let quasi_newton = matches!(&state, MethodState::Lbfgs(h) if !h.s.is_empty());
        let alpha0 = if quasi_newton {
            1.0
        } else {
            step_len.map_or(1.0, |s| 2.0 * s) / d_norm
        };

        let mut accepted = line_search(opts.line_search, obj, &x, e, &d, slope, alpha0);
        if accepted.is_none() && !matches!(method, Method::Sd) {
            // Quasi-Newton or conjugate direction went nowhere; forget the
            // history and give plain steepest descent one chance before
            // declaring failure.
            match &mut state {
                MethodState::Lbfgs(h) => *h = LbfgsState::default(),
                MethodState::Cg(cg) => *cg = None,
                MethodState::Sd => {}
            }
            d = g.iter().map(|c| -c).collect();
            slope = dot(&g, &d);
            let alpha0 = step_len.map_or(1.0, |s| 2.0 * s) / norm(&d);
            accepted = line_search(opts.line_search, obj, &x, e, &d, slope, alpha0);
        }
        let Some(acc) = accepted else {
            break StopReason::LineSearchFailure;
        };

        let (e_new, g_new) = obj.value_grad(&acc.x)?;
        if !e_new.is_finite() || !g_new.iter().all(|c| c.is_finite()) {
            return Err(OptError::Model(PotentialError::NonFinite {
                context: "gradient at an accepted step",
            }));
        }
        match &mut state {
            MethodState::Sd => {}
            MethodState::Cg(cg) => {
                let since = cg.as_ref().map_or(1, |s| s.since_restart + 1);
                *cg = Some(CgState {
                    g_prev: g.clone(),
                    d_prev: d.clone(),
                    since_restart: since,
                });
            }
            MethodState::Lbfgs(h) => {
                let s: Vec<f64> = acc.x.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                h.push(s, y, opts.history);
            }
        }
        step_len = Some(acc.alpha * d_norm);
        let e_prev = e;
        x = acc.x;
        e = e_new;
        g = g_new;
        iterations += 1;
        energies.push(e);

        if opts.energy_tol > 0.0 && (e_prev - e).abs() < opts.energy_tol {
            break StopReason::EnergyTol;
        }
    };

    Ok(MinimizeResult {
        x,
        energy: e,
        energies,
        iterations,
        reason,
    })
}

/// Adapts a `PotentialModel` to the flat-vector objective, applying the
/// per-atom freeze mask by zeroing frozen gradient components. Frozen atoms
/// therefore never move (their direction components are exactly zero) and do
/// not participate in the force test.
struct ModelObjective<'a> {
    model: &'a dyn PotentialModel,
    /// Per-coordinate freeze flags, or empty when nothing is frozen.
    frozen: Vec<bool>,
}

impl ModelObjective<'_> {
    fn mask(&self, g: &mut [f64]) {
        if !self.frozen.is_empty() {
            for (c, &f) in g.iter_mut().zip(&self.frozen) {
                if f {
                    *c = 0.0;
                }
            }
        }
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        3 * self.model.n_atoms()
    }

    fn value(&self, x: &[f64]) -> Result<f64, PotentialError> {
        let config = Configuration::from_flat(x).map_err(|_| PotentialError::NonFinite {
            context: "trial configuration",
        })?;
        self.model.energy(&config)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), PotentialError> {
        let config = Configuration::from_flat(x).map_err(|_| PotentialError::NonFinite {
            context: "trial configuration",
        })?;
        let (e, mut g) = self.model.energy_and_gradient(&config)?;
        self.mask(&mut g);
        Ok((e, g))
    }

    fn max_force(&self, g: &[f64]) -> f64 {
        g.chunks_exact(3)
            .map(|f| (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// A finished single-method run over an atomic model.
#[derive(Debug, Clone)]
pub struct OptimizerTrace {
    /// Label of the algorithm that produced the trace ("sd", "cg", "lbfgs";
    /// annealing segments embedded in pipeline reports use "sa").
    pub method: String,
    /// Energy at the start plus one entry per accepted step, non-increasing.
    pub energies: Vec<f64>,
    pub final_config: Configuration,
    pub final_energy: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

fn expand_mask(
    model: &dyn PotentialModel,
    mask: &Option<Vec<bool>>,
) -> Result<Vec<bool>, OptError> {
    match mask {
        None => Ok(Vec::new()),
        Some(m) => {
            if m.len() != model.n_atoms() {
                return Err(OptError::BadOptions(format!(
                    "freeze mask covers {} atoms, model has {}",
                    m.len(),
                    model.n_atoms()
                )));
            }
            Ok(m.iter().flat_map(|&f| [f, f, f]).collect())
        }
    }
}

/// Runs one minimization method against an atomic model.
pub fn minimize_model(
    model: &dyn PotentialModel,
    start: &Configuration,
    method: Method,
    opts: &OptimizerOptions,
) -> Result<OptimizerTrace, OptError> {
    let obj = ModelObjective {
        model,
        frozen: expand_mask(model, &opts.freeze_mask)?,
    };
    let res = minimize(&obj, method, &start.to_flat(), opts)?;
    let final_config = Configuration::from_flat(&res.x).expect("optimizer iterates stay finite");
    Ok(OptimizerTrace {
        method: method.name().to_string(),
        energies: res.energies,
        final_config,
        final_energy: res.energy,
        iterations: res.iterations,
        reason: res.reason,
    })
}

pub fn steepest_descent(
    model: &dyn PotentialModel,
    start: &Configuration,
    opts: &OptimizerOptions,
) -> Result<OptimizerTrace, OptError> {
    minimize_model(model, start, Method::Sd, opts)
}

pub fn conjugate_gradient(
    model: &dyn PotentialModel,
    start: &Configuration,
    opts: &OptimizerOptions,
) -> Result<OptimizerTrace, OptError> {
    minimize_model(model, start, Method::Cg, opts)
}

pub fn lbfgs(
    model: &dyn PotentialModel,
    start: &Configuration,
    opts: &OptimizerOptions,
) -> Result<OptimizerTrace, OptError> {
    minimize_model(model, start, Method::Lbfgs, opts)
}

/// One pipeline stage: a method plus its options.
#[derive(Debug, Clone)]
pub struct Stage {
    pub method: Method,
    pub opts: OptimizerOptions,
}

impl Stage {
    pub fn new(method: Method, opts: OptimizerOptions) -> Self {
        Self { method, opts }
    }
}

#[derive(Debug, Clone)]
pub enum StageOutcome {
    Completed(OptimizerTrace),
    /// The stage could not run (model failure at its starting point); the
    /// pipeline carries the previous configuration forward.
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: String,
    pub outcome: StageOutcome,
}

impl StageReport {
    pub fn trace(&self) -> Option<&OptimizerTrace> {
        match &self.outcome {
            StageOutcome::Completed(t) => Some(t),
            StageOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub initial_energy: f64,
    pub stages: Vec<StageReport>,
    pub final_config: Configuration,
    pub final_energy: f64,
}

/// Runs stages in order, each starting from the previous stage's final
/// configuration. A failing stage is recorded and skipped over rather than
/// aborting the pipeline. Option errors still abort: they are caller bugs,
/// not model behavior.
pub fn run_pipeline(
    model: &dyn PotentialModel,
    start: &Configuration,
    stages: &[Stage],
) -> Result<PipelineReport, OptError> {
    if stages.is_empty() {
        return Err(OptError::BadOptions(
            "pipeline needs at least one stage".into(),
        ));
    }
    for stage in stages {
        stage.opts.validate()?;
        expand_mask(model, &stage.opts.freeze_mask)?;
    }
    let initial_energy = model.energy(start)?;
    if !initial_energy.is_finite() {
        return Err(OptError::NonFiniteStart);
    }

    let mut current = start.clone();
    let mut current_energy = initial_energy;
    let mut reports = Vec::with_capacity(stages.len());
    for stage in stages {
        match minimize_model(model, &current, stage.method, &stage.opts) {
            Ok(trace) => {
                current = trace.final_config.clone();
                current_energy = trace.final_energy;
                reports.push(StageReport {
                    name: stage.method.name().to_string(),
                    outcome: StageOutcome::Completed(trace),
                });
            }
            Err(err @ OptError::BadOptions(_)) => return Err(err),
            Err(err) => reports.push(StageReport {
                name: stage.method.name().to_string(),
                outcome: StageOutcome::Failed {
                    error: err.to_string(),
                },
            }),
        }
    }

    Ok(PipelineReport {
        initial_energy,
        stages: reports,
        final_config: current,
        final_energy: current_energy,
    })
}
