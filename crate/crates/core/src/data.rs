//! Measured samples, datasets and per-sample mode assignments.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{check_simplex, SIMPLEX_TOL};

/// One `(z, ż)` measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    pub zdot: Vec<f64>,
    /// Zero-based ground-truth mode, when known.
    pub true_mode: Option<usize>,
}

impl Sample {
    pub fn new(z: Vec<f64>, zdot: Vec<f64>, true_mode: Option<usize>) -> Self {
        Self { z, zdot, true_mode }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    samples: Vec<Sample>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, provenance: Provenance) -> Result<Self> {
        let n = samples
            .first()
            .map(|s| s.z.len())
            .ok_or_else(|| Error::InvalidInput("dataset must contain at least one sample".into()))?;
        if n == 0 {
            return Err(Error::InvalidInput("state dimension must be at least 1".into()));
        }
        for s in &samples {
            if s.z.len() != n {
                return Err(Error::mismatch("sample state", n, s.z.len()));
            }
            if s.zdot.len() != n {
                return Err(Error::mismatch("sample derivative", n, s.zdot.len()));
            }
            if s.z.iter().chain(&s.zdot).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("samples must be finite".into()));
            }
        }
        Ok(Self {
            n,
            samples,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Ground-truth labels, if every sample carries one.
    pub fn true_labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.true_mode).collect()
    }

    /// Share of samples per true mode (unlabelled samples are skipped).
    pub fn mode_balance(&self, m: usize) -> Vec<f64> {
        let mut counts = vec![0usize; m];
        for j in self.samples.iter().filter_map(|s| s.true_mode) {
            if j < m {
                counts[j] += 1;
            }
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.samples.len() as f64)
            .collect()
    }
}

/// Relaxed (or exact) mode indicator of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeAssignment {
    pub lambda: Vec<f64>,
    /// Second-order moments `Λ` from the Shor relaxation.
    pub moment_block: Option<DMatrix<f64>>,
    pub hardened: usize,
    /// Optimal value of the per-sample assignment problem.
    pub objective: f64,
}

impl ModeAssignment {
    pub fn one_hot(m: usize, j: usize, objective: f64) -> Self {
        let mut lambda = vec![0.0; m];
        lambda[j] = 1.0;
        Self {
            lambda,
            moment_block: None,
            hardened: j,
            objective,
        }
    }

    /// Checks the simplex and moment-consistency invariants at tolerance `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        check_simplex(&self.lambda)?;
        if let Some(block) = &self.moment_block {
            let m = self.lambda.len();
            if block.nrows() != m || block.ncols() != m {
                return Err(Error::mismatch("moment block", m, block.nrows()));
            }
            for j in 0..m {
                if (block[(j, j)] - self.lambda[j]).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "moment diagonal {} differs from λ_{j} = {}",
                        block[(j, j)],
                        self.lambda[j]
                    )));
                }
            }
            let eig = nalgebra::SymmetricEigen::new(bordered_moment_matrix(&self.lambda, block));
            let min = eig.eigenvalues.min();
            if min < -tol {
                return Err(Error::InvalidInput(format!(
                    "bordered moment matrix has eigenvalue {min}"
                )));
            }
        }
        Ok(())
    }
}

/// `[[1, λᵀ], [λ, Λ]]`.
pub fn bordered_moment_matrix(lambda: &[f64], block: &DMatrix<f64>) -> DMatrix<f64> {
    let m = lambda.len();
    DMatrix::from_fn(m + 1, m + 1, |r, c| match (r, c) {
        (0, 0) => 1.0,
        (0, c) => lambda[c - 1],
        (r, 0) => lambda[r - 1],
        (r, c) => block[(r - 1, c - 1)],
    })
}

/// Clamps tiny negative weights from an interior-point solve and renormalises.
pub(crate) fn clean_simplex(lambda: &mut [f64]) {
    for l in lambda.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let sum: f64 = lambda.iter().sum();
    if sum > 0.0 && (sum - 1.0).abs() <= 1e3 * SIMPLEX_TOL {
        for l in lambda.iter_mut() {
            *l /= sum;
        }
    }
}
