//! ℓ1 dynamics estimation with box-constrained coefficients.
//!
//! With the mode weights fixed, row `k` of every `C_j` only enters the
//! `k`-th residual component, so the fit splits into `n` independent LPs,
//! each with `M·P` coefficient variables and one slack per sample.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::convex::{solve_lp, LinearProgram};
use crate::data::{Dataset, ModeAssignment};
use crate::error::{Error, Result};
use crate::model::ModeDynamics;

/// Modes whose total weight falls below this are treated as unassigned.
pub const UNASSIGNED_WEIGHT: f64 = 1e-9;

/// Which weights enter the residual of the dynamics fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LambdaMode {
    Soft,
    Hardened,
}

impl LambdaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaMode::Soft => "soft",
            LambdaMode::Hardened => "hardened",
        }
    }
}

impl std::str::FromStr for LambdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(LambdaMode::Soft),
            "hardened" => Ok(LambdaMode::Hardened),
            other => Err(Error::InvalidInput(format!("unknown lambda mode {other:?}"))),
        }
    }
}

/// Per-sample weight vectors as seen by the fit.
pub fn fit_weights(assignments: &[ModeAssignment], m: usize, mode: LambdaMode) -> Vec<Vec<f64>> {
    assignments
        .iter()
        .map(|a| match mode {
            LambdaMode::Soft => a.lambda.clone(),
            LambdaMode::Hardened => {
                let mut w = vec![0.0; m];
                w[a.hardened] = 1.0;
                w
            }
        })
        .collect()
}

/// `Σ_i ‖ż^i − Σ_j w_ij C_j φ(z^i)‖₁`.
pub fn weighted_cost(dataset: &Dataset, modes: &[ModeDynamics], basis: &MonomialBasis, weights: &[Vec<f64>]) -> Result<f64> {
    if weights.len() != dataset.len() {
        return Err(Error::mismatch("weight vectors", dataset.len(), weights.len()));
    }
    dataset
        .samples()
        .par_iter()
        .zip(weights)
        .map(|(s, w)| {
            let phi = basis.eval(&s.z)?;
            let mut r = s.zdot.clone();
            for (mode, &wj) in modes.iter().zip(w) {
                if wj != 0.0 {
                    for (rk, v) in r.iter_mut().zip(mode.apply(&phi)) {
                        *rk -= wj * v;
                    }
                }
            }
            Ok(r.iter().map(|v| v.abs()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()
        .map(|per_sample| per_sample.iter().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsFit {
    pub modes: Vec<ModeDynamics>,
    /// Fit objective evaluated at the returned coefficients.
    pub objective: f64,
    /// `Σ_i w_ij` per mode.
    pub mode_weight: Vec<f64>,
}

impl DynamicsFit {
    pub fn unassigned_modes(&self) -> Vec<usize> {
        (0..self.mode_weight.len())
            .filter(|&j| self.mode_weight[j] < UNASSIGNED_WEIGHT)
            .collect()
    }
}

/// Fits all mode coefficient matrices for fixed assignments. Modes with
/// negligible total weight keep `previous` coefficients (zero if none).
#[allow(clippy::too_many_arguments)]
pub fn fit_dynamics(
    dataset: &Dataset,
    assignments: &[ModeAssignment],
    basis: &MonomialBasis,
    m: usize,
    eta: f64,
    previous: Option<&[ModeDynamics]>,
    lambda_mode: LambdaMode,
    tol: f64,
) -> Result<DynamicsFit> {
    if m == 0 {
        return Err(Error::InvalidInput("mode count must be at least 1".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("box bound must be positive, got {eta}")));
    }
    if assignments.len() != dataset.len() {
        return Err(Error::mismatch("assignments", dataset.len(), assignments.len()));
    }
    if let Some(a) = assignments.iter().find(|a| a.lambda.len() != m || a.hardened >= m) {
        return Err(Error::mismatch("assignment modes", m, a.lambda.len()));
    }
    if let Some(prev) = previous {
        if prev.len() != m {
            return Err(Error::mismatch("previous modes", m, prev.len()));
        }
    }
    let weights = fit_weights(assignments, m, lambda_mode);
    let mode_weight: Vec<f64> = (0..m).map(|j| weights.iter().map(|w| w[j]).sum()).collect();
    let active: Vec<usize> = (0..m).filter(|&j| mode_weight[j] >= UNASSIGNED_WEIGHT).collect();

    let features = dataset
        .samples()
        .iter()
        .map(|s| basis.eval(&s.z))
        .collect::<Result<Vec<_>>>()?;
    let rows_per_k = (0..basis.n())
        .into_par_iter()
        .map(|k| {
            let targets: Vec<f64> = dataset.samples().iter().map(|s| s.zdot[k]).collect();
            fit_coordinate(&features, &weights, &targets, &active, basis.len(), eta, tol)
                .map_err(|e| annotate(e, k))
        })
        .collect::<Result<Vec<_>>>()?;

    let p = basis.len();
    let mut modes = Vec::with_capacity(m);
    for j in 0..m {
        let mode = match active.iter().position(|&a| a == j) {
            Some(slot) => {
                let coeffs = DMatrix::from_fn(basis.n(), p, |k, c| rows_per_k[k][slot][c]);
                ModeDynamics::new(coeffs)?
            }
            None => previous
                .map(|prev| prev[j].clone())
                .unwrap_or_else(|| ModeDynamics::zeros(basis.n(), p)),
        };
        modes.push(mode);
    }
    let objective = weighted_cost(dataset, &modes, basis, &weights)?;
    Ok(DynamicsFit {
        modes,
        objective,
        mode_weight,
    })
}

/// Single-mode ℓ1 fit over the samples at `indices`.
pub fn fit_subset(dataset: &Dataset, indices: &[usize], basis: &MonomialBasis, eta: f64, tol: f64) -> Result<ModeDynamics> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("cannot fit a mode to zero samples".into()));
    }
    let features = indices
        .iter()
        .map(|&i| basis.eval(&dataset.samples()[i].z))
        .collect::<Result<Vec<_>>>()?;
    let weights = vec![vec![1.0]; indices.len()];
    let rows = (0..basis.n())
        .into_par_iter()
        .map(|k| {
            let targets: Vec<f64> = indices.iter().map(|&i| dataset.samples()[i].zdot[k]).collect();
            fit_coordinate(&features, &weights, &targets, &[0], basis.len(), eta, tol)
                .map(|mut r| r.remove(0))
                .map_err(|e| annotate(e, k))
        })
        .collect::<Result<Vec<_>>>()?;
    ModeDynamics::from_rows(&rows)
}

fn annotate(e: Error, k: usize) -> Error {
    match e {
        Error::Solver { context, state } => Error::Solver {
            context: format!("{context} (output coordinate {k})"),
            state,
        },
        other => other,
    }
}

/// Row `k` of each active mode: `min Σ_i δ_i` with
/// `|y_i − Σ_j w_ij φ_iᵀ c_j| ≤ δ_i` and `|c| ≤ η`.
fn fit_coordinate(
    features: &[Vec<f64>],
    weights: &[Vec<f64>],
    targets: &[f64],
    active: &[usize],
    p: usize,
    eta: f64,
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let num_coeffs = active.len() * p;
    let n_samples = targets.len();
    let mut lp = LinearProgram::new(num_coeffs + n_samples);
    for v in 0..num_coeffs {
        lp.set_bounds(v, -eta, eta);
    }
    // δ ≥ 0 is implied by the two-sided residual bounds
    for i in 0..n_samples {
        let slack = num_coeffs + i;
        lp.objective[slack] = 1.0;
        let row = |sign: f64| -> Vec<(usize, f64)> {
            let mut r = Vec::with_capacity(num_coeffs + 1);
            for (slot, &j) in active.iter().enumerate() {
                let w = weights[i][j];
                if w != 0.0 {
                    for (c, f) in features[i].iter().enumerate() {
                        r.push((slot * p + c, sign * w * f));
                    }
                }
            }
            r.push((slack, -1.0));
            r
        };
        lp.add_le(row(1.0), targets[i]);
        lp.add_le(row(-1.0), -targets[i]);
    }
    let (x, _) = solve_lp(&lp, tol)?.into_solution(|| "dynamics LP".into())?;
    Ok((0..active.len()).map(|slot| x[slot * p..(slot + 1) * p].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::DEFAULT_TOL;
    use crate::data::{Provenance, Sample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rotation_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let z = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let zdot = vec![z[1], -z[0]];
                Sample::new(z, zdot, Some(0))
            })
            .collect();
        Dataset::new(samples, Provenance::default()).unwrap()
    }

    #[test]
    fn single_mode_recovery() {
        let d = rotation_data(50, 1);
        let basis = MonomialBasis::new(2, 1).unwrap();
        let a: Vec<_> = (0..d.len()).map(|_| ModeAssignment::one_hot(1, 0, 0.0)).collect();
        let fit = fit_dynamics(&d, &a, &basis, 1, 10.0, None, LambdaMode::Soft, DEFAULT_TOL).unwrap();
        let expect = [[0.0, 0.0, 1.0], [0.0, -1.0, 0.0]];
        for (k, row) in expect.iter().enumerate() {
            for (c, want) in row.iter().enumerate() {
                assert!((fit.modes[0].coeffs()[(k, c)] - want).abs() < 1e-6);
            }
        }
        assert!(fit.objective <= 1e-6);
    }

    #[test]
    fn unassigned_mode_keeps_previous() {
        let d = rotation_data(20, 2);
        let basis = MonomialBasis::new(2, 1).unwrap();
        let a: Vec<_> = (0..d.len()).map(|_| ModeAssignment::one_hot(2, 0, 0.0)).collect();
        let prev = vec![
            ModeDynamics::zeros(2, 3),
            ModeDynamics::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]]).unwrap(),
        ];
        let fit = fit_dynamics(&d, &a, &basis, 2, 10.0, Some(&prev), LambdaMode::Soft, DEFAULT_TOL).unwrap();
        assert_eq!(fit.modes[1], prev[1]);
        assert_eq!(fit.unassigned_modes(), vec![1]);
        let fresh = fit_dynamics(&d, &a, &basis, 2, 10.0, None, LambdaMode::Soft, DEFAULT_TOL).unwrap();
        assert_eq!(fresh.modes[1], ModeDynamics::zeros(2, 3));
    }

    #[test]
    fn box_is_respected() {
        // ż = 5 z needs coefficients beyond η = 2
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = (0..30)
            .map(|_| {
                let z = vec![rng.gen_range(-1.0..1.0)];
                Sample::new(z.clone(), vec![5.0 * z[0]], None)
            })
            .collect();
        let d = Dataset::new(samples, Provenance::default()).unwrap();
        let basis = MonomialBasis::new(1, 1).unwrap();
        let a: Vec<_> = (0..d.len()).map(|_| ModeAssignment::one_hot(1, 0, 0.0)).collect();
        let fit = fit_dynamics(&d, &a, &basis, 1, 2.0, None, LambdaMode::Soft, DEFAULT_TOL).unwrap();
        assert!(fit.modes[0].coeffs().iter().all(|c| c.abs() <= 2.0));
        assert!((fit.modes[0].coeffs()[(0, 1)] - 2.0).abs() < 1e-6);
        assert!(fit.objective > 1.0);
    }

    #[test]
    fn invalid_arguments() {
        let d = rotation_data(5, 3);
        let basis = MonomialBasis::new(2, 1).unwrap();
        let a: Vec<_> = (0..d.len()).map(|_| ModeAssignment::one_hot(1, 0, 0.0)).collect();
        assert!(fit_dynamics(&d, &a, &basis, 0, 10.0, None, LambdaMode::Soft, DEFAULT_TOL).is_err());
        assert!(fit_dynamics(&d, &a, &basis, 1, 0.0, None, LambdaMode::Soft, DEFAULT_TOL).is_err());
        assert!(fit_dynamics(&d, &a[..3], &basis, 1, 10.0, None, LambdaMode::Soft, DEFAULT_TOL).is_err());
        assert!(fit_subset(&d, &[], &basis, 10.0, DEFAULT_TOL).is_err());
    }

    #[test]
    fn hardened_weights() {
        let a = ModeAssignment {
            lambda: vec![0.3, 0.7],
            moment_block: None,
            hardened: 1,
            objective: 0.0,
        };
        assert_eq!(fit_weights(std::slice::from_ref(&a), 2, LambdaMode::Soft), vec![vec![0.3, 0.7]]);
        assert_eq!(fit_weights(&[a], 2, LambdaMode::Hardened), vec![vec![0.0, 1.0]]);
    }
}
