//! Metrics comparing an identified model against ground truth.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::SwitchingSystemModel;
use crate::simulate::integrate;

/// Largest mode count accepted by [`align_labels`].
pub const MAX_ALIGN_MODES: usize = 8;

/// Permutation `perm` maximising `#{i : perm[pred_i] == truth_i}`. Ties go to
/// the lexicographically smallest permutation.
pub fn align_labels(pred: &[usize], truth: &[usize], m: usize) -> Result<Vec<usize>> {
    if m > MAX_ALIGN_MODES {
        return Err(Error::Capacity(format!(
            "label alignment enumerates M! permutations and supports M ≤ {MAX_ALIGN_MODES}, got {m}"
        )));
    }
    if pred.len() != truth.len() {
        return Err(Error::mismatch("label count", truth.len(), pred.len()));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&l| l >= m) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{m}")));
    }
    let mut confusion = vec![vec![0usize; m]; m];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[p][t] += 1;
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..m).collect();
    loop {
        let score: usize = (0..m).map(|p| confusion[p][perm[p]]).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm.clone()));
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or_default())
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot has a successor");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// `sqrt(Σ_i ‖ż_i − F(z_i)‖² / (N n))`, with the mode at each sample chosen by the model's surfaces.
pub fn velocity_rmse(model: &SwitchingSystemModel, dataset: &Dataset) -> Result<f64> {
    if model.n() != dataset.n() {
        return Err(Error::mismatch("state dimension", dataset.n(), model.n()));
    }
    if !model.is_simulable() {
        return Err(Error::InvalidInput(
            "velocity RMSE needs switching surfaces to pick a mode at each sample".into(),
        ));
    }
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let per_sample = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let (_, f) = model.vector_field(&s.z)?;
            Ok(f.iter().zip(&s.zdot).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = per_sample.iter().sum();
    Ok((total / (dataset.len() * dataset.n()) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMetrics {
    pub accuracy: f64,
    pub miou: f64,
    pub iou: Vec<f64>,
    /// `permutation[predicted] = truth` label map used for scoring.
    pub permutation: Vec<usize>,
}

pub fn mode_metrics(pred: &[usize], truth: &[usize], m: usize) -> Result<ModeMetrics> {
    let permutation = align_labels(pred, truth, m)?;
    let aligned: Vec<usize> = pred.iter().map(|&p| permutation[p]).collect();
    let n = truth.len();
    let hits = aligned.iter().zip(truth).filter(|(a, t)| a == t).count();
    let iou: Vec<f64> = (0..m)
        .map(|j| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&a, &t) in aligned.iter().zip(truth) {
                let (ia, it) = (a == j, t == j);
                inter += usize::from(ia && it);
                union += usize::from(ia || it);
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect();
    Ok(ModeMetrics {
        accuracy: if n == 0 { 1.0 } else { hits as f64 / n as f64 },
        miou: iou.iter().sum::<f64>() / m.max(1) as f64,
        iou,
        permutation,
    })
}

/// Paired rollout of the true and identified models from one initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrajectory {
    pub times: Vec<f64>,
    pub true_states: Vec<Vec<f64>>,
    pub identified_states: Vec<Vec<f64>>,
    /// `‖Δz‖₂` at every grid point.
    pub errors: Vec<f64>,
    pub rmse: f64,
    pub final_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RolloutOutcome {
    Completed(RolloutTrajectory),
    /// One of the two integrations blew up; `identified` says which.
    Diverged { identified: bool, last_valid_time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSummary {
    pub rmse: f64,
    pub final_error: f64,
    pub max_error: f64,
    pub completed: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub trajectories: Vec<RolloutOutcome>,
    /// Means over completed trajectories.
    pub summary: RolloutSummary,
}

pub fn rollout_metrics(
    truth: &SwitchingSystemModel,
    identified: &SwitchingSystemModel,
    initial_conditions: &[Vec<f64>],
    dt: f64,
    horizon: f64,
) -> Result<RolloutReport> {
    if truth.n() != identified.n() {
        return Err(Error::mismatch("state dimension", truth.n(), identified.n()));
    }
    let trajectories = initial_conditions
        .par_iter()
        .map(|z0| rollout_pair(truth, identified, z0, dt, horizon))
        .collect::<Result<Vec<_>>>()?;
    let done: Vec<&RolloutTrajectory> = trajectories
        .iter()
        .filter_map(|t| match t {
            RolloutOutcome::Completed(r) => Some(r),
            RolloutOutcome::Diverged { .. } => None,
        })
        .collect();
    let mean = |f: fn(&RolloutTrajectory) -> f64| {
        if done.is_empty() {
            f64::NAN
        } else {
            done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64
        }
    };
    let summary = RolloutSummary {
        rmse: mean(|r| r.rmse),
        final_error: mean(|r| r.final_error),
        max_error: mean(|r| r.max_error),
        completed: done.len(),
        diverged: trajectories.len() - done.len(),
    };
    Ok(RolloutReport { trajectories, summary })
}

fn rollout_pair(
    truth: &SwitchingSystemModel,
    identified: &SwitchingSystemModel,
    z0: &[f64],
    dt: f64,
    horizon: f64,
) -> Result<RolloutOutcome> {
    let run = |model: &SwitchingSystemModel, identified: bool| match integrate(model, z0, dt, horizon) {
        Ok(t) => Ok(Ok(t)),
        Err(Error::Divergence { last_valid_time }) => Ok(Err(RolloutOutcome::Diverged {
            identified,
            last_valid_time,
        })),
        Err(e) => Err(e),
    };
    let reference = match run(truth, false)? {
        Ok(t) => t,
        Err(d) => return Ok(d),
    };
    let estimate = match run(identified, true)? {
        Ok(t) => t,
        Err(d) => return Ok(d),
    };
    let n = z0.len() as f64;
    let errors: Vec<f64> = reference
        .states
        .iter()
        .zip(&estimate.states)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .collect();
    let rmse = (errors.iter().map(|e| e * e / n).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(RolloutOutcome::Completed(RolloutTrajectory {
        times: reference.times,
        true_states: reference.states,
        identified_states: estimate.states,
        rmse,
        final_error: *errors.last().expect("grid includes the initial time"),
        max_error: errors.iter().copied().fold(0.0, f64::max),
        errors,
    }))
}
