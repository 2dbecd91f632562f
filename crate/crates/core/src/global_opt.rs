//! Global minimization: Metropolis simulated annealing, basin-hopping, and
//! the local→anneal→local sandwich.
//!
//! Everything here is driven by an explicitly seeded ChaCha stream, so a
//! run is a pure function of (model, start, options, seed): identical inputs
//! reproduce identical traces bit for bit.
//!
//! The two samplers use different move classes on purpose. Annealing makes
//! single-atom cube moves and scores them with the model's incremental
//! `move_delta`, which keeps a sweep cheap. Basin-hopping perturbs every
//! coordinate at once and then minimizes, i.e. it samples the transformed
//! landscape in which each basin is flattened to its bottom energy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::Configuration;
use crate::local_opt::{
    minimize_model, run_pipeline, Method, OptError, OptimizerOptions, OptimizerTrace,
    PipelineReport, Stage, StageOutcome, StageReport, StopReason,
};
use crate::potential::{PotentialError, PotentialModel};

#[derive(Debug, Error)]
pub enum GlobalError {
    #[error("invalid anneal schedule: {0}")]
    BadSchedule(String),
    #[error("invalid basin-hopping options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error("energy model failed: {0}")]
    Model(#[from] PotentialError),
}

/// Geometric cooling schedule: sweep s runs at max(t_initial * decay^s,
/// t_final), with `moves_per_sweep` single-atom proposals per sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub t_initial: f64,
    pub t_final: f64,
    pub decay: f64,
    pub sweeps: usize,
    pub moves_per_sweep: usize,
    pub max_displacement: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t_initial: 1.5,
            t_final: 1e-3,
            decay: 0.95,
            sweeps: 120,
            moves_per_sweep: 50,
            max_displacement: 0.3,
        }
    }
}

impl AnnealSchedule {
    fn validate(&self) -> Result<(), GlobalError> {
        if !(self.t_final > 0.0 && self.t_initial >= self.t_final && self.t_initial.is_finite()) {
            return Err(GlobalError::BadSchedule(format!(
                "need t_initial >= t_final > 0, got {} and {}",
                self.t_initial, self.t_final
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(GlobalError::BadSchedule(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if !self.max_displacement.is_finite() || self.max_displacement < 0.0 {
            return Err(GlobalError::BadSchedule(format!(
                "max_displacement must be finite and non-negative, got {}",
                self.max_displacement
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BasinHopOptions {
    pub iterations: usize,
    /// Metropolis temperature applied to minimized-energy differences.
    pub temperature: f64,
    pub max_displacement: f64,
    pub local_method: Method,
    pub local_opts: OptimizerOptions,
    pub rng_seed: u64,
}

impl Default for BasinHopOptions {
    /// The cluster-benchmark settings: 500 hops at T = 0.8 with ±0.35
    /// coordinate kicks, minimized by L-BFGS.
    fn default() -> Self {
        Self {
            iterations: 500,
            temperature: 0.8,
            max_displacement: 0.35,
            local_method: Method::Lbfgs,
            local_opts: OptimizerOptions::tight(),
            rng_seed: 0,
        }
    }
}

impl BasinHopOptions {
    fn validate(&self) -> Result<(), GlobalError> {
        if self.iterations == 0 {
            return Err(GlobalError::BadOptions(
                "iterations must be at least 1".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GlobalError::BadOptions(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.max_displacement.is_finite() || self.max_displacement < 0.0 {
            return Err(GlobalError::BadOptions(format!(
                "max_displacement must be finite and non-negative, got {}",
                self.max_displacement
            )));
        }
        Ok(())
    }
}

/// One proposal in a global search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalStep {
    /// Energy of the proposal (minimized energy for basin-hopping, walker
    /// energy after the move for annealing); NaN when the proposal could not
    /// be evaluated and was rejected outright.
    pub proposed_energy: f64,
    pub accepted: bool,
    pub best_so_far: f64,
}

#[derive(Debug, Clone)]
pub struct GlobalTrace {
    pub best_config: Configuration,
    pub best_energy: f64,
    pub steps: Vec<GlobalStep>,
    pub rng_seed: u64,
}

impl GlobalTrace {
    /// Plain-text dump, one "iter e_proposed accepted e_best" row per step.
    pub fn summary_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("iter e_proposed accepted e_best\n");
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {:.9} {} {:.9}",
                i + 1,
                s.proposed_energy,
                u8::from(s.accepted),
                s.best_so_far
            );
        }
        out
    }
}

/// The Metropolis criterion: downhill moves always pass, uphill moves pass
/// with probability exp(-delta_e / temperature). Consumes exactly one random
/// draw for an uphill proposal and none otherwise.
pub fn metropolis_accept<R: Rng>(delta_e: f64, temperature: f64, rng: &mut R) -> bool {
    delta_e <= 0.0 || rng.random::<f64>() < (-delta_e / temperature).exp()
}

/// Metropolis annealing with single-atom uniform cube moves.
///
/// The walker energy is tracked incrementally through `move_delta` and
/// refreshed by a full evaluation at the end of every sweep so float drift
/// cannot accumulate. Proposals whose energy change is not finite are
/// rejected and counted like any other step.
pub fn simulated_annealing(
    model: &dyn PotentialModel,
    start: &Configuration,
    schedule: &AnnealSchedule,
    rng_seed: u64,
) -> Result<GlobalTrace, GlobalError> {
    schedule.validate()?;
    let e0 = model.energy(start)?;
    if !e0.is_finite() {
        return Err(GlobalError::Model(PotentialError::NonFinite {
            context: "annealing start energy",
        }));
    }
    let n = start.n_atoms();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut current = start.clone();
    let mut e_cur = e0;
    let mut best = start.clone();
    let mut e_best = e0;
    let mut steps = Vec::with_capacity(schedule.sweeps * schedule.moves_per_sweep);

    let d = schedule.max_displacement;
    for sweep in 0..schedule.sweeps {
        let t = (schedule.t_initial * schedule.decay.powi(sweep as i32)).max(schedule.t_final);
        for _ in 0..schedule.moves_per_sweep {
            let atom = rng.random_range(0..n);
            let p = current.position(atom);
            let new_pos = [
                p[0] + rng.random_range(-d..=d),
                p[1] + rng.random_range(-d..=d),
                p[2] + rng.random_range(-d..=d),
            ];
            let delta = match model.move_delta(&current, atom, new_pos) {
                Ok(v) if v.is_finite() => v,
                _ => {
                    steps.push(GlobalStep {
                        proposed_energy: f64::NAN,
                        accepted: false,
                        best_so_far: e_best,
                    });
                    continue;
                }
            };
            let accepted = metropolis_accept(delta, t, &mut rng);
            if accepted {
                current.set_position(atom, new_pos);
                e_cur += delta;
                if e_cur < e_best {
                    // Re-evaluate so the recorded best is exact, not the
                    // incrementally accumulated estimate.
                    let exact = model.energy(&current)?;
                    if exact < e_best {
                        best = current.clone();
                        e_best = exact;
                    }
                }
            }
            steps.push(GlobalStep {
                proposed_energy: e_cur + if accepted { 0.0 } else { delta },
                accepted,
                best_so_far: e_best,
            });
        }
        e_cur = model.energy(&current)?;
    }

    Ok(GlobalTrace {
        best_config: best,
        best_energy: e_best,
        steps,
        rng_seed,
    })
}

/// Wales-Doye basin-hopping: kick every free coordinate, minimize, and
/// Metropolis-accept on the minimized energies.
///
/// The seed is minimized before the first hop, so the reported best can only
/// improve on plain local minimization of the seed. Proposals whose local
/// minimization fails are treated as rejected.
pub fn basin_hopping(
    model: &dyn PotentialModel,
    seed_config: &Configuration,
    opts: &BasinHopOptions,
) -> Result<GlobalTrace, GlobalError> {
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let first = minimize_model(model, seed_config, opts.local_method, &opts.local_opts)?;
    let mut current = first.final_config;
    let mut e_cur = first.final_energy;
    let mut best = current.clone();
    let mut e_best = e_cur;
    let mut steps = Vec::with_capacity(opts.iterations);

    // Frozen atoms are pinned by the local minimizer, so kicking them would
    // displace them permanently; leave them alone instead.
    let frozen = opts.local_opts.freeze_mask.clone().unwrap_or_default();
    let d = opts.max_displacement;

    for _ in 0..opts.iterations {
        let mut proposal = current.clone();
        for atom in 0..proposal.n_atoms() {
            let kick = [
                rng.random_range(-d..=d),
                rng.random_range(-d..=d),
                rng.random_range(-d..=d),
            ];
            if frozen.get(atom).copied().unwrap_or(false) {
                continue;
            }
            let p = proposal.position(atom);
            proposal.set_position(atom, [p[0] + kick[0], p[1] + kick[1], p[2] + kick[2]]);
        }
        let minimized = match minimize_model(model, &proposal, opts.local_method, &opts.local_opts)
        {
            Ok(t) if t.final_energy.is_finite() => t,
            _ => {
                steps.push(GlobalStep {
                    proposed_energy: f64::NAN,
                    accepted: false,
                    best_so_far: e_best,
                });
                continue;
            }
        };
        let e_new = minimized.final_energy;
        let accepted = metropolis_accept(e_new - e_cur, opts.temperature, &mut rng);
        if accepted {
            current = minimized.final_config;
            e_cur = e_new;
            if e_new < e_best {
                best = current.clone();
                e_best = e_new;
            }
        }
        steps.push(GlobalStep {
            proposed_energy: e_new,
            accepted,
            best_so_far: e_best,
        });
    }

    Ok(GlobalTrace {
        best_config: best,
        best_energy: e_best,
        steps,
        rng_seed: opts.rng_seed,
    })
}

/// Local refinement, then annealing from the refined structure, then local
/// refinement of the best annealed structure. The annealing segment appears
/// in the report as a pseudo-stage named "sa" whose energy trail is the
/// best-so-far at each sweep boundary.
///
/// Either stage list may be empty (that segment is skipped); a schedule with
/// zero sweeps or zero moves per sweep skips the annealing segment, making
/// the whole thing equivalent to one plain pipeline.
pub fn hybrid_sandwich(
    model: &dyn PotentialModel,
    start: &Configuration,
    pre_stages: &[Stage],
    schedule: &AnnealSchedule,
    post_stages: &[Stage],
    rng_seed: u64,
) -> Result<PipelineReport, GlobalError> {
    schedule.validate()?;
    let initial_energy = model.energy(start)?;
    if !initial_energy.is_finite() {
        return Err(GlobalError::Model(PotentialError::NonFinite {
            context: "sandwich start energy",
        }));
    }

    let mut stages: Vec<StageReport> = Vec::new();
    let mut current = start.clone();
    let mut current_energy = initial_energy;

    if !pre_stages.is_empty() {
        let rep = run_pipeline(model, &current, pre_stages)?;
        stages.extend(rep.stages);
        current = rep.final_config;
        current_energy = rep.final_energy;
    }

    if schedule.sweeps > 0 && schedule.moves_per_sweep > 0 {
        let sa = simulated_annealing(model, &current, schedule, rng_seed)?;
        let mut energies = vec![current_energy];
        for sweep_end in sa
            .steps
            .chunks(schedule.moves_per_sweep)
            .map(|chunk| chunk[chunk.len() - 1].best_so_far)
        {
            energies.push(sweep_end);
        }
        let iterations = sa.steps.len();
        current = sa.best_config;
        current_energy = sa.best_energy;
        stages.push(StageReport {
            name: "sa".into(),
            outcome: StageOutcome::Completed(OptimizerTrace {
                method: "sa".into(),
                energies,
                final_config: current.clone(),
                final_energy: current_energy,
                iterations,
                reason: StopReason::MaxSteps,
            }),
        });
    }

    if !post_stages.is_empty() {
        let rep = run_pipeline(model, &current, post_stages)?;
        stages.extend(rep.stages);
        current = rep.final_config;
        current_energy = rep.final_energy;
    }

    Ok(PipelineReport {
        initial_energy,
        stages,
        final_config: current,
        final_energy: current_energy,
    })
}
