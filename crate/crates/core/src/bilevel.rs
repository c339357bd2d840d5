//! Alternating identification: mode assignment with the current dynamics,
//! then an ℓ1 dynamics fit with the resulting weights, until the cost stalls
//! or the assignment reaches a fixed point.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assign::{assign, tightness_ratio, Relaxation, DEFAULT_RANK_TOL};
use crate::basis::MonomialBasis;
use crate::convex::DEFAULT_TOL;
use crate::data::{Dataset, ModeAssignment};
use crate::error::{Error, Result};
use crate::evaluate::align_labels;
pub use crate::fit::LambdaMode;
use crate::fit::{fit_dynamics, fit_subset, fit_weights, weighted_cost, DynamicsFit};
use crate::model::{residual_l1, ModeDynamics, SwitchingSystemModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitStrategy {
    /// Every mode starts as `ż = z`.
    Identity,
    /// I.i.d. uniform coefficients in `[-scale, scale]`.
    Random { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelConfig {
    pub modes: usize,
    pub degree: usize,
    pub eta: f64,
    pub relaxation: Relaxation,
    pub max_iters: usize,
    pub cost_tol: f64,
    pub init: InitStrategy,
    pub lambda_mode: LambdaMode,
    pub solver_tol: f64,
    pub rank_tol: f64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            modes: 2,
            degree: 1,
            eta: 10.0,
            relaxation: Relaxation::Lp,
            max_iters: 25,
            cost_tol: 1e-6,
            init: InitStrategy::Identity,
            lambda_mode: LambdaMode::Hardened,
            solver_tol: DEFAULT_TOL,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::InvalidInput("mode count must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.cost_tol >= 0.0) {
            return Err(Error::InvalidInput("cost_tol must be non-negative".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidInput("eta must be positive".into()));
        }
        if let InitStrategy::Random { scale, .. } = self.init {
            if !(scale >= 0.0) || !scale.is_finite() {
                return Err(Error::InvalidInput("random init scale must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// One-based iteration index.
    pub iteration: usize,
    /// `F(C, λ)` after the fit step.
    pub cost: f64,
    /// Sum of the per-sample relaxed assignment optima.
    pub relaxed_objective: f64,
    /// Hardened labels that changed since the previous iteration.
    pub mismatch_prev: Option<usize>,
    /// Hardened labels disagreeing with the ground truth after alignment.
    pub mismatch_truth: Option<usize>,
    /// Share of rank-one moment blocks (SDP relaxation only).
    pub tightness_ratio: Option<f64>,
    pub assign_seconds: f64,
    pub fit_seconds: f64,
    /// Unassigned modes re-fitted on poorly explained samples after this iteration.
    pub reseeded: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Hardened assignment (and soft weights, if used) unchanged.
    FixedPoint,
    /// Cost decrease below `cost_tol`.
    CostStalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Identification {
    /// Identified dynamics; no surfaces attached yet.
    pub model: SwitchingSystemModel,
    pub history: Vec<IterationRecord>,
    /// Assignments of the last iteration (the ones the final fit used).
    pub assignments: Vec<ModeAssignment>,
    pub stop: StopReason,
}

impl Identification {
    pub fn labels(&self) -> Vec<usize> {
        self.assignments.iter().map(|a| a.hardened).collect()
    }

    pub fn final_cost(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.cost)
    }
}

pub fn init_dynamics(config: &BilevelConfig, n: usize) -> Result<Vec<ModeDynamics>> {
    config.validate()?;
    let basis = MonomialBasis::new(n, config.degree)?;
    let p = basis.len();
    match config.init {
        InitStrategy::Identity => {
            if config.degree == 0 {
                return Err(Error::InvalidInput(
                    "identity initialisation needs degree ≥ 1 (no linear monomials at degree 0)".into(),
                ));
            }
            let mut c = DMatrix::zeros(n, p);
            for k in 0..n {
                c[(k, basis.linear_index(k).expect("degree ≥ 1"))] = 1.0;
            }
            let mode = ModeDynamics::new(c)?;
            Ok(vec![mode; config.modes])
        }
        InitStrategy::Random { seed, scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..config.modes)
                .map(|_| {
                    ModeDynamics::new(DMatrix::from_fn(n, p, |_, _| {
                        if scale > 0.0 {
                            rng.gen_range(-scale..=scale)
                        } else {
                            0.0
                        }
                    }))
                })
                .collect()
        }
    }
}

fn mismatch_against_truth(labels: &[usize], truth: &[usize], m: usize) -> Option<usize> {
    let perm = align_labels(labels, truth, m).ok()?;
    Some(labels.iter().zip(truth).filter(|(p, t)| perm[**p] != **t).count())
}

/// Runs the alternation from the configured initial dynamics.
pub fn identify(dataset: &Dataset, config: &BilevelConfig) -> Result<Identification> {
    let modes = init_dynamics(config, dataset.n())?;
    identify_from(dataset, config, modes)
}

/// Runs the alternation from caller-supplied initial dynamics.
pub fn identify_from(dataset: &Dataset, config: &BilevelConfig, mut modes: Vec<ModeDynamics>) -> Result<Identification> {
    config.validate()?;
    let basis = MonomialBasis::new(dataset.n(), config.degree)?;
    if modes.len() != config.modes {
        return Err(Error::mismatch("initial modes", config.modes, modes.len()));
    }
    for mode in &modes {
        mode.check_basis(&basis)?;
    }
    let truth = dataset.true_labels();
    let m = config.modes;

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut previous: Option<Vec<ModeAssignment>> = None;
    let mut stop = StopReason::MaxIterations;

    for iteration in 1..=config.max_iters {
        let started = Instant::now();
        let assignments = assign(dataset, &modes, &basis, config.relaxation, config.solver_tol)
            .map_err(|e| e.at_iteration(iteration))?;
        let assign_seconds = started.elapsed().as_secs_f64();
        let tightness = match config.relaxation {
            Relaxation::Sdp => Some(tightness_ratio(&assignments, config.rank_tol)?),
            _ => None,
        };
        let labels: Vec<usize> = assignments.iter().map(|a| a.hardened).collect();
        let mismatch_prev = previous
            .as_ref()
            .map(|prev| prev.iter().zip(&labels).filter(|(a, l)| a.hardened != **l).count());
        let weights_unchanged = previous.as_ref().is_some_and(|prev| {
            config.lambda_mode == LambdaMode::Hardened
                || prev.iter().zip(&assignments).all(|(a, b)| {
                    a.lambda.iter().zip(&b.lambda).all(|(x, y)| (x - y).abs() <= 1e-6)
                })
        });
        let mismatch_truth = truth.as_ref().and_then(|t| mismatch_against_truth(&labels, t, m));

        let started = Instant::now();
        let fit = fit_dynamics(
            dataset,
            &assignments,
            &basis,
            m,
            config.eta,
            Some(&modes),
            config.lambda_mode,
            config.solver_tol,
        )
        .map_err(|e| e.at_iteration(iteration))?;
        let fit_seconds = started.elapsed().as_secs_f64();
        let cost = fit.objective;

        let stalled = history.last().is_some_and(|r| r.cost - cost < config.cost_tol);
        let fixed = mismatch_prev == Some(0) && weights_unchanged;
        let last = iteration == config.max_iters;

        let mut record = IterationRecord {
            iteration,
            cost,
            relaxed_objective: assignments.iter().map(|a| a.objective).sum(),
            mismatch_prev,
            mismatch_truth,
            tightness_ratio: tightness,
            assign_seconds,
            fit_seconds,
            reseeded: Vec::new(),
        };
        modes = fit.modes.clone();
        if !(fixed || stalled || last) {
            record.reseeded = reseed_unassigned(dataset, &basis, &assignments, &fit, config, &mut modes)
                .map_err(|e| e.at_iteration(iteration))?;
        }
        log::debug!(
            "iteration {iteration}: cost {cost:.6e}, changed {mismatch_prev:?}, truth mismatch {mismatch_truth:?}"
        );
        history.push(record);
        previous = Some(assignments);

        if fixed {
            stop = StopReason::FixedPoint;
            break;
        }
        if stalled {
            stop = StopReason::CostStalled;
            break;
        }
    }

    let assignments = previous.expect("at least one iteration");
    let model = SwitchingSystemModel::new(basis, modes)?;
    Ok(Identification {
        model,
        history,
        assignments,
        stop,
    })
}

/// Chooses coefficients for modes that received no weight. Any value is an
/// optimal fit for such a mode; this picks the ℓ1 fit to the samples whose
/// residual exceeds the mean, so the next assignment can split them off.
fn reseed_unassigned(
    dataset: &Dataset,
    basis: &MonomialBasis,
    assignments: &[ModeAssignment],
    fit: &DynamicsFit,
    config: &BilevelConfig,
    modes: &mut [ModeDynamics],
) -> Result<Vec<usize>> {
    let empty = fit.unassigned_modes();
    if empty.is_empty() {
        return Ok(Vec::new());
    }
    let weights = fit_weights(assignments, config.modes, config.lambda_mode);
    let residuals = dataset
        .samples()
        .iter()
        .zip(&weights)
        .map(|(s, w)| residual_l1(s, &fit.modes, basis, w).map(|(_, r)| r))
        .collect::<Result<Vec<f64>>>()?;
    let mut claimed = vec![false; residuals.len()];
    let mut reseeded = Vec::new();
    for j in empty {
        let open: Vec<usize> = (0..residuals.len()).filter(|&i| !claimed[i]).collect();
        if open.is_empty() {
            break;
        }
        let mean = open.iter().map(|&i| residuals[i]).sum::<f64>() / open.len() as f64;
        if mean <= 1e-9 {
            break;
        }
        let pool: Vec<usize> = open.into_iter().filter(|&i| residuals[i] > mean).collect();
        if pool.is_empty() {
            break;
        }
        modes[j] = fit_subset(dataset, &pool, basis, config.eta, config.solver_tol)?;
        for &i in &pool {
            claimed[i] = true;
        }
        reseeded.push(j);
    }
    Ok(reseeded)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockwiseGaps {
    /// Cost improvement from re-solving the assignment block.
    pub assign_gap: f64,
    /// Cost improvement from re-solving the dynamics block.
    pub fit_gap: f64,
}

impl BlockwiseGaps {
    pub fn certifies(&self, tol: f64) -> bool {
        self.assign_gap <= tol && self.fit_gap <= tol
    }
}

/// Re-solves each block once with the other held fixed and reports how much
/// either step would still lower the cost.
pub fn blockwise_optimality_check(
    dataset: &Dataset,
    modes: &[ModeDynamics],
    assignments: &[ModeAssignment],
    config: &BilevelConfig,
) -> Result<BlockwiseGaps> {
    let basis = MonomialBasis::new(dataset.n(), config.degree)?;
    let m = config.modes;
    let weights = fit_weights(assignments, m, config.lambda_mode);
    let current = weighted_cost(dataset, modes, &basis, &weights)?;

    let reassigned = assign(dataset, modes, &basis, config.relaxation, config.solver_tol)?;
    let after_assign = weighted_cost(dataset, modes, &basis, &fit_weights(&reassigned, m, config.lambda_mode))?;

    let refit = fit_dynamics(
        dataset,
        assignments,
        &basis,
        m,
        config.eta,
        Some(modes),
        config.lambda_mode,
        config.solver_tol,
    )?;
    Ok(BlockwiseGaps {
        assign_gap: current - after_assign,
        fit_gap: current - refit.objective,
    })
}
