//! Ground-truth trajectories and labelled datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Provenance, Sample};
use crate::error::{Error, Result};
use crate::model::SwitchingSystemModel;

/// Mode changes on more than this share of steps are reported as chattering.
pub const CHATTER_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingScheme {
    /// States drawn i.i.d. uniformly from an axis-aligned box.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// States subsampled from trajectories integrated from each initial condition.
    Trajectory {
        initial_conditions: Vec<Vec<f64>>,
        dt: f64,
        horizon: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSpec {
    pub scheme: SamplingScheme,
    pub num_samples: usize,
    /// Standard deviation of Gaussian noise added to each derivative component.
    pub noise_std: f64,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidInput("noise std must be non-negative".into()));
        }
        match &self.scheme {
            SamplingScheme::UniformBox { lower, upper } => {
                if lower.len() != n || upper.len() != n {
                    return Err(Error::mismatch("box bounds", n, lower.len().min(upper.len())));
                }
                if let Some(k) = (0..n).find(|&k| !(lower[k] < upper[k])) {
                    return Err(Error::InvalidInput(format!(
                        "empty box along dimension {k}: [{}, {}]",
                        lower[k], upper[k]
                    )));
                }
            }
            SamplingScheme::Trajectory {
                initial_conditions,
                dt,
                horizon,
            } => {
                if initial_conditions.is_empty() {
                    return Err(Error::InvalidInput("trajectory sampling needs initial conditions".into()));
                }
                if let Some(z0) = initial_conditions.iter().find(|z| z.len() != n) {
                    return Err(Error::mismatch("initial condition", n, z0.len()));
                }
                if !(*dt > 0.0) || !(*horizon > 0.0) || dt > horizon {
                    return Err(Error::InvalidInput(format!(
                        "need 0 < dt ≤ horizon, got dt = {dt}, horizon = {horizon}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub modes: Vec<usize>,
}

impl Trajectory {
    /// Share of consecutive grid points whose active mode differs.
    pub fn switch_fraction(&self) -> f64 {
        if self.modes.len() < 2 {
            return 0.0;
        }
        let switches = self.modes.windows(2).filter(|w| w[0] != w[1]).count();
        switches as f64 / (self.modes.len() - 1) as f64
    }

    pub fn is_chattering(&self) -> bool {
        self.switch_fraction() > CHATTER_FRACTION
    }
}

fn axpy(z: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    z.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Classical fixed-step RK4. The active mode is re-resolved at every stage
/// from the stage state, so switching is pointwise in the state.
///
/// The step is `horizon / ceil(horizon / dt)`, which keeps the grid uniform
/// and ending exactly at `horizon`.
pub fn integrate(model: &SwitchingSystemModel, z0: &[f64], dt: f64, horizon: f64) -> Result<Trajectory> {
    if z0.len() != model.n() {
        return Err(Error::mismatch("initial condition", model.n(), z0.len()));
    }
    if !(dt > 0.0) || !(horizon > 0.0) || dt > horizon {
        return Err(Error::InvalidInput(format!(
            "need 0 < dt ≤ horizon, got dt = {dt}, horizon = {horizon}"
        )));
    }
    if !model.is_simulable() {
        return Err(Error::InvalidInput("model has no switching surfaces to simulate with".into()));
    }
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let field = |z: &[f64]| model.vector_field(z).map(|(_, f)| f);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut modes = Vec::with_capacity(steps + 1);
    let mut z = z0.to_vec();
    times.push(0.0);
    modes.push(model.mode_at(&z)?);
    states.push(z.clone());
    for step in 1..=steps {
        let k1 = field(&z)?;
        let k2 = field(&axpy(&z, 0.5 * h, &k1))?;
        let k3 = field(&axpy(&z, 0.5 * h, &k2))?;
        let k4 = field(&axpy(&z, h, &k3))?;
        let next: Vec<f64> = (0..z.len())
            .map(|k| z[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                last_valid_time: times[times.len() - 1],
            });
        }
        z = next;
        times.push(step as f64 * h);
        modes.push(model.mode_at(&z)?);
        states.push(z.clone());
    }
    let traj = Trajectory { times, states, modes };
    if traj.is_chattering() {
        log::warn!(
            "trajectory from {z0:?} switches mode on {:.0}% of steps",
            100.0 * traj.switch_fraction()
        );
    }
    Ok(traj)
}

/// Draws a labelled dataset. Derivatives come from the active mode's field,
/// plus optional Gaussian noise; labels come from the model's regions.
pub fn generate_dataset(model: &SwitchingSystemModel, spec: &SamplingSpec) -> Result<Dataset> {
    spec.validate(model.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let states: Vec<Vec<f64>> = match &spec.scheme {
        SamplingScheme::UniformBox { lower, upper } => (0..spec.num_samples)
            .map(|_| {
                lower
                    .iter()
                    .zip(upper)
                    .map(|(&lo, &hi)| rng.gen_range(lo..hi))
                    .collect()
            })
            .collect(),
        SamplingScheme::Trajectory {
            initial_conditions,
            dt,
            horizon,
        } => {
            let mut pool = Vec::new();
            for z0 in initial_conditions {
                pool.extend(integrate(model, z0, *dt, *horizon)?.states);
            }
            // evenly spaced picks over the pooled grid
            let total = pool.len();
            (0..spec.num_samples)
                .map(|i| pool[(i * total) / spec.num_samples].clone())
                .collect()
        }
    };
    let noise = (spec.noise_std > 0.0)
        .then(|| Normal::new(0.0, spec.noise_std).expect("finite std"));
    let mut samples = Vec::with_capacity(states.len());
    for z in states {
        let (mode, mut zdot) = model.vector_field(&z)?;
        if let Some(dist) = &noise {
            for v in zdot.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }
        samples.push(Sample::new(z, zdot, Some(mode)));
    }
    let generator = match &spec.scheme {
        SamplingScheme::UniformBox { .. } => "uniform-box",
        SamplingScheme::Trajectory { .. } => "trajectory",
    };
    Dataset::new(
        samples,
        Provenance {
            seed: Some(spec.seed),
            generator: format!("{generator}, N = {}, noise std = {}", spec.num_samples, spec.noise_std),
        },
    )
}
