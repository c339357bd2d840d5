//! The four subcommands. Each returns a summary for the caller to print.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use switchid_core::assign::assign;
use switchid_core::bilevel::{identify, StopReason};
use switchid_core::evaluate::{mode_metrics, rollout_metrics, velocity_rmse, RolloutOutcome};
use switchid_core::simulate::generate_dataset;
use switchid_core::surface::recover_surfaces;
use switchid_core::{Dataset, MonomialBasis};

use crate::config::{LoadedConfig, Overrides};
use crate::error::{CliError, Result};
use crate::io::{
    read_dataset, read_json, write_dataset, write_history, write_json, write_rollout, CsvMeta, IntervalFile,
    ModelFile, SurfacesFile, MODEL_FORMAT, SURFACES_FORMAT,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub num_samples: usize,
    pub mode_balance: Vec<f64>,
    pub seed: u64,
    pub seed_defaulted: bool,
}

pub fn cmd_simulate(config: &Path, output: &Path, overrides: Overrides) -> Result<SimulateSummary> {
    let cfg = LoadedConfig::load(config, overrides)?;
    let model = cfg.true_model()?;
    let spec = cfg.sampling_spec(cfg.seed, cfg.config.sampling.num_samples)?;
    let dataset = generate_dataset(&model, &spec)?;
    let mut meta = CsvMeta::new(&cfg.sha256, cfg.seed).with("generator", &dataset.provenance.generator);
    if cfg.seed_defaulted {
        meta = meta.with("seed_source", "default (no seed in config)");
    }
    write_dataset(output, &dataset, &meta)?;
    Ok(SimulateSummary {
        num_samples: dataset.len(),
        mode_balance: dataset.mode_balance(model.num_modes()),
        seed: cfg.seed,
        seed_defaulted: cfg.seed_defaulted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifySummary {
    pub iterations: usize,
    pub final_cost: f64,
    pub stop: StopReason,
    pub final_mismatch_truth: Option<usize>,
    pub model_path: PathBuf,
    pub history_path: PathBuf,
}

fn stop_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::FixedPoint => "fixed_point",
        StopReason::CostStalled => "cost_stalled",
        StopReason::MaxIterations => "max_iterations",
    }
}

fn load_dataset_for(dataset: &Path, n: usize) -> Result<Dataset> {
    let (data, _) = read_dataset(dataset)?;
    if data.n() != n {
        return Err(CliError::Config(format!(
            "dataset {} has state dimension {} but the config describes {n}",
            dataset.display(),
            data.n()
        )));
    }
    Ok(data)
}

/// Writes `model.json` and `history.csv` into `output_dir`.
pub fn cmd_identify(dataset: &Path, config: &Path, output_dir: &Path, overrides: Overrides) -> Result<IdentifySummary> {
    let cfg = LoadedConfig::load(config, overrides)?;
    let data = load_dataset_for(dataset, cfg.n())?;
    let bilevel = cfg.bilevel()?;
    let result = identify(&data, &bilevel)?;
    let model = &result.model;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        config_sha256: cfg.sha256.clone(),
        seed: cfg.seed,
        n: model.n(),
        degree: model.basis().degree(),
        num_modes: model.num_modes(),
        modes: model.modes().iter().map(|m| m.rows()).collect(),
        relaxation: bilevel.relaxation.as_str().into(),
        stop: stop_name(result.stop).into(),
        iterations: result.history.len(),
        final_cost: result.final_cost(),
        identify: cfg.config.identify.clone(),
    };
    let model_path = output_dir.join("model.json");
    let history_path = output_dir.join("history.csv");
    write_json(&model_path, &file)?;
    write_history(
        &history_path,
        &result.history,
        &CsvMeta::new(&cfg.sha256, cfg.seed).with("relaxation", bilevel.relaxation.as_str()),
    )?;
    Ok(IdentifySummary {
        iterations: result.history.len(),
        final_cost: result.final_cost(),
        stop: result.stop,
        final_mismatch_truth: result.history.last().and_then(|r| r.mismatch_truth),
        model_path,
        history_path,
    })
}

/// Hardens assignments with the identified model, then recovers the surfaces.
pub fn cmd_fit_surface(
    dataset: &Path,
    model: &Path,
    config: &Path,
    output: &Path,
    overrides: Overrides,
) -> Result<SurfacesFile> {
    let cfg = LoadedConfig::load(config, overrides)?;
    let data = load_dataset_for(dataset, cfg.n())?;
    let identified = read_json::<ModelFile>(model)?.to_model()?;
    let m = identified.num_modes();
    if m < 2 {
        return Err(CliError::Config("surface fitting needs a model with at least two modes".into()));
    }
    let assignments = assign(
        &data,
        identified.modes(),
        identified.basis(),
        cfg.relaxation,
        cfg.bilevel()?.solver_tol,
    )?;
    let labels: Vec<usize> = assignments.iter().map(|a| a.hardened).collect();
    let points: Vec<Vec<f64>> = data.samples().iter().map(|s| s.z.clone()).collect();
    let fit_cfg = cfg.surface_fit();
    let rec = recover_surfaces(&points, &labels, m, &fit_cfg)?;
    let file = SurfacesFile {
        format: SURFACES_FORMAT.into(),
        config_sha256: cfg.sha256.clone(),
        seed: cfg.seed,
        n: cfg.n(),
        degree: fit_cfg.degree,
        modebook: rec.modebook.codes().to_vec(),
        coefficients: rec.fit.surfaces.normalized().surfaces().to_vec(),
        certificate_t: rec.certificate.t,
        certificate_per_surface: rec.certificate.per_surface.clone(),
        admissible_epsilon: rec.interval.map(|iv| IntervalFile { lo: iv.lo, hi: iv.hi }),
        epsilon: fit_cfg.epsilon,
        beta: fit_cfg.beta,
        eta: fit_cfg.eta,
        total_slack: rec.fit.total_slack,
        l1_norms: rec.fit.l1_norms.clone(),
        objective: rec.fit.objective,
    };
    write_json(output, &file)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub index: usize,
    pub initial_condition: Vec<f64>,
    /// `completed`, `diverged_true` or `diverged_identified`.
    pub status: String,
    pub rmse: Option<f64>,
    pub final_error: Option<f64>,
    pub max_error: Option<f64>,
    pub last_valid_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutAggregate {
    pub rmse: Option<f64>,
    pub final_error: Option<f64>,
    pub max_error: Option<f64>,
    pub completed: usize,
    pub diverged: usize,
    pub dt: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub config_sha256: String,
    pub seed: u64,
    pub test_seed: u64,
    pub rollout_seed: u64,
    pub test_samples: usize,
    pub velocity_rmse: Option<f64>,
    pub mode_accuracy: Option<f64>,
    pub miou: Option<f64>,
    pub iou: Option<Vec<f64>>,
    /// `label_map[identified] = true` mode, both zero-based.
    pub label_map: Option<Vec<usize>>,
    pub rollout: Option<RolloutAggregate>,
    pub trajectories: Vec<TrajectoryMetrics>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Draws `count` points uniformly from the box.
pub fn rollout_initial_conditions(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| if lo < hi { rng.gen_range(lo..hi) } else { lo })
                .collect()
        })
        .collect()
}

/// Regenerates a disjoint test set, scores the identified model against the
/// configured truth and writes `metrics.json` plus one rollout CSV per
/// initial condition into `output_dir`.
pub fn cmd_evaluate(
    config: &Path,
    model: &Path,
    surfaces: Option<&Path>,
    output_dir: &Path,
    overrides: Overrides,
) -> Result<Metrics> {
    let cfg = LoadedConfig::load(config, overrides)?;
    let truth = cfg.true_model()?;
    let mut identified = read_json::<ModelFile>(model)?.to_model()?;
    if identified.n() != truth.n() {
        return Err(CliError::Config(format!(
            "model state dimension {} differs from the config's {}",
            identified.n(),
            truth.n()
        )));
    }
    match surfaces {
        Some(path) => {
            let (set, book) = read_json::<SurfacesFile>(path)?.to_parts()?;
            identified = identified.with_surfaces(set, book)?;
        }
        None if identified.num_modes() > 1 => {
            log::warn!("no surfaces given: pointwise metrics and rollouts are skipped");
        }
        None => {}
    }
    let ev = &cfg.config.evaluate;
    let test_seed = cfg.test_seed();
    let rollout_seed = cfg.rollout_seed();
    let test = generate_dataset(&truth, &cfg.sampling_spec(test_seed, ev.test_samples)?)?;
    let meta = CsvMeta::new(&cfg.sha256, cfg.seed);

    let mut metrics = Metrics {
        config_sha256: cfg.sha256.clone(),
        seed: cfg.seed,
        test_seed,
        rollout_seed,
        test_samples: test.len(),
        velocity_rmse: None,
        mode_accuracy: None,
        miou: None,
        iou: None,
        label_map: None,
        rollout: None,
        trajectories: Vec::new(),
    };
    if !identified.is_simulable() {
        write_json(&output_dir.join("metrics.json"), &metrics)?;
        return Ok(metrics);
    }

    metrics.velocity_rmse = Some(velocity_rmse(&identified, &test)?);
    if let Some(truth_labels) = test.true_labels() {
        let pred = test
            .samples()
            .iter()
            .map(|s| identified.mode_at(&s.z))
            .collect::<switchid_core::Result<Vec<_>>>()?;
        let m = identified.num_modes().max(truth.num_modes());
        let mm = mode_metrics(&pred, &truth_labels, m)?;
        metrics.mode_accuracy = Some(mm.accuracy);
        metrics.miou = Some(mm.miou);
        metrics.iou = Some(mm.iou);
        metrics.label_map = Some(mm.permutation);
    }

    if ev.rollouts > 0 {
        let (lo, hi) = cfg.rollout_box()?;
        let ics = rollout_initial_conditions(&lo, &hi, ev.rollouts, rollout_seed);
        let report = rollout_metrics(&truth, &identified, &ics, ev.dt, ev.horizon)?;
        let width = ev.rollouts.to_string().len().max(2);
        for (k, (outcome, z0)) in report.trajectories.iter().zip(&ics).enumerate() {
            let row = match outcome {
                RolloutOutcome::Completed(t) => {
                    let path = output_dir.join(format!("rollout_{:0width$}.csv", k + 1));
                    write_rollout(&path, &t.times, &t.true_states, &t.identified_states, &t.errors, &meta)?;
                    TrajectoryMetrics {
                        index: k + 1,
                        initial_condition: z0.clone(),
                        status: "completed".into(),
                        rmse: Some(t.rmse),
                        final_error: Some(t.final_error),
                        max_error: Some(t.max_error),
                        last_valid_time: None,
                    }
                }
                RolloutOutcome::Diverged { identified, last_valid_time } => {
                    log::warn!("rollout {} diverged at t = {last_valid_time}", k + 1);
                    TrajectoryMetrics {
                        index: k + 1,
                        initial_condition: z0.clone(),
                        status: if *identified { "diverged_identified" } else { "diverged_true" }.into(),
                        rmse: None,
                        final_error: None,
                        max_error: None,
                        last_valid_time: Some(*last_valid_time),
                    }
                }
            };
            metrics.trajectories.push(row);
        }
        let s = report.summary;
        metrics.rollout = Some(RolloutAggregate {
            rmse: finite(s.rmse),
            final_error: finite(s.final_error),
            max_error: finite(s.max_error),
            completed: s.completed,
            diverged: s.diverged,
            dt: ev.dt,
            horizon: ev.horizon,
        });
    }
    write_json(&output_dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

/// Model file describing the configured ground truth dynamics, for checks
/// that feed the true model through the evaluation path.
pub fn true_model_file(cfg: &LoadedConfig) -> Result<ModelFile> {
    let truth = cfg.true_model()?;
    let basis: &MonomialBasis = truth.basis();
    Ok(ModelFile {
        format: MODEL_FORMAT.into(),
        config_sha256: cfg.sha256.clone(),
        seed: cfg.seed,
        n: truth.n(),
        degree: basis.degree(),
        num_modes: truth.num_modes(),
        modes: truth.modes().iter().map(|m| m.rows()).collect(),
        relaxation: "none".into(),
        stop: "ground_truth".into(),
        iterations: 0,
        final_cost: 0.0,
        identify: cfg.config.identify.clone(),
    })
}
