//! Per-sample mode assignment.
//!
//! With the mode coefficients fixed, the joint mixed-integer problem splits
//! into one small problem per sample. Three regimes are provided: exact
//! enumeration of the `M` one-hot candidates, the simplex LP relaxation and
//! the order-one Shor (moment) SDP relaxation. Every regime returns a soft
//! `λ` together with its hardened index.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::convex::{solve_lp, solve_shor_block, LinearProgram, ShorBlock, DEFAULT_TOL};
use crate::data::{bordered_moment_matrix, clean_simplex, Dataset, ModeAssignment, Sample};
use crate::error::{Error, Result};
use crate::model::ModeDynamics;

/// Components within this distance of the maximum count as tied when hardening.
pub const HARDEN_TIE_TOL: f64 = 1e-6;

/// Default relative eigenvalue threshold for the rank-one test.
pub const DEFAULT_RANK_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relaxation {
    /// Enumerate the one-hot candidates.
    Exact,
    /// Simplex relaxation solved as an LP.
    Lp,
    /// Order-one moment relaxation solved as an SDP.
    Sdp,
}

impl Relaxation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relaxation::Exact => "exact",
            Relaxation::Lp => "lp",
            Relaxation::Sdp => "sdp",
        }
    }
}

impl std::str::FromStr for Relaxation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "exact-oracle" => Ok(Relaxation::Exact),
            "lp" => Ok(Relaxation::Lp),
            "sdp" => Ok(Relaxation::Sdp),
            other => Err(Error::InvalidInput(format!("unknown relaxation {other:?}"))),
        }
    }
}

/// Columns `v_j = C_j φ(z)` for one sample (`n × M`).
pub fn mode_fields(sample: &Sample, modes: &[ModeDynamics], basis: &MonomialBasis) -> Result<DMatrix<f64>> {
    let phi = basis.eval(&sample.z)?;
    let mut v = DMatrix::zeros(basis.n(), modes.len());
    for (j, mode) in modes.iter().enumerate() {
        mode.check_basis(basis)?;
        for (k, val) in mode.apply(&phi).into_iter().enumerate() {
            v[(k, j)] = val;
        }
    }
    Ok(v)
}

fn l1_to_column(zdot: &[f64], fields: &DMatrix<f64>, j: usize) -> f64 {
    zdot.iter()
        .enumerate()
        .map(|(k, z)| (z - fields[(k, j)]).abs())
        .sum()
}

fn check_modes(modes: &[ModeDynamics]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::InvalidInput("at least one mode is required".into()));
    }
    Ok(())
}

fn per_sample<F>(dataset: &Dataset, f: F) -> Result<Vec<ModeAssignment>>
where
    F: Fn(&Sample) -> Result<ModeAssignment> + Sync,
{
    dataset
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            f(s).map_err(|e| match e {
                Error::Solver { context, state } => Error::Solver {
                    context: format!("{context} for sample {i}"),
                    state,
                },
                other => other,
            })
        })
        .collect()
}

/// Exact per-sample optimum: `argmin_j ‖ż − v_j‖₁`, lowest index on ties.
pub fn assign_exact(dataset: &Dataset, modes: &[ModeDynamics], basis: &MonomialBasis) -> Result<Vec<ModeAssignment>> {
    check_modes(modes)?;
    per_sample(dataset, |s| {
        let v = mode_fields(s, modes, basis)?;
        let (best, cost) = (0..modes.len())
            .map(|j| (j, l1_to_column(&s.zdot, &v, j)))
            .fold((0, f64::INFINITY), |acc, (j, c)| if c < acc.1 { (j, c) } else { acc });
        Ok(ModeAssignment::one_hot(modes.len(), best, cost))
    })
}

/// `min_{λ ∈ Δ} ‖ż − Vλ‖₁` with one slack per state coordinate.
pub fn simplex_lp(fields: &DMatrix<f64>, zdot: &[f64]) -> LinearProgram {
    let (n, m) = fields.shape();
    let mut lp = LinearProgram::new(m + n);
    for k in 0..n {
        lp.objective[m + k] = 1.0;
        let row = |sign: f64| -> Vec<(usize, f64)> {
            (0..m)
                .map(|j| (j, sign * fields[(k, j)]))
                .chain(std::iter::once((m + k, -1.0)))
                .collect()
        };
        lp.add_le(row(-1.0), -zdot[k]);
        lp.add_le(row(1.0), zdot[k]);
    }
    lp.add_eq((0..m).map(|j| (j, 1.0)).collect(), 1.0);
    for j in 0..m {
        lp.set_bounds(j, 0.0, f64::INFINITY);
    }
    lp
}

pub fn assign_lp(dataset: &Dataset, modes: &[ModeDynamics], basis: &MonomialBasis) -> Result<Vec<ModeAssignment>> {
    assign_lp_tol(dataset, modes, basis, DEFAULT_TOL)
}

pub fn assign_lp_tol(
    dataset: &Dataset,
    modes: &[ModeDynamics],
    basis: &MonomialBasis,
    tol: f64,
) -> Result<Vec<ModeAssignment>> {
    check_modes(modes)?;
    let m = modes.len();
    per_sample(dataset, |s| {
        let v = mode_fields(s, modes, basis)?;
        let (x, objective) = solve_lp(&simplex_lp(&v, &s.zdot), tol)?.into_solution(|| "simplex LP".into())?;
        let mut lambda = x[..m].to_vec();
        clean_simplex(&mut lambda);
        Ok(ModeAssignment {
            hardened: harden(&lambda),
            lambda,
            moment_block: None,
            objective,
        })
    })
}

pub fn assign_sdp(dataset: &Dataset, modes: &[ModeDynamics], basis: &MonomialBasis) -> Result<Vec<ModeAssignment>> {
    assign_sdp_tol(dataset, modes, basis, DEFAULT_TOL)
}

pub fn assign_sdp_tol(
    dataset: &Dataset,
    modes: &[ModeDynamics],
    basis: &MonomialBasis,
    tol: f64,
) -> Result<Vec<ModeAssignment>> {
    check_modes(modes)?;
    per_sample(dataset, |s| {
        let block = ShorBlock {
            fields: mode_fields(s, modes, basis)?,
            zdot: s.zdot.clone(),
        };
        let sol = solve_shor_block(&block, tol)?;
        let mut lambda = sol.lambda;
        clean_simplex(&mut lambda);
        let mut moments = sol.moments;
        for (j, &l) in lambda.iter().enumerate() {
            moments[(j, j)] = l;
        }
        Ok(ModeAssignment {
            hardened: harden(&lambda),
            lambda,
            moment_block: Some(moments),
            objective: sol.objective,
        })
    })
}

pub fn assign(
    dataset: &Dataset,
    modes: &[ModeDynamics],
    basis: &MonomialBasis,
    relaxation: Relaxation,
    tol: f64,
) -> Result<Vec<ModeAssignment>> {
    match relaxation {
        Relaxation::Exact => assign_exact(dataset, modes, basis),
        Relaxation::Lp => assign_lp_tol(dataset, modes, basis, tol),
        Relaxation::Sdp => assign_sdp_tol(dataset, modes, basis, tol),
    }
}

/// Index of the largest weight; weights within [`HARDEN_TIE_TOL`] of the
/// maximum are tied and the lowest index wins.
pub fn harden(lambda: &[f64]) -> usize {
    let max = lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lambda
        .iter()
        .position(|&l| l >= max - HARDEN_TIE_TOL)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundingBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares the loss of the hardened vertex against the soft loss plus the
/// weighted dispersion `Σ λ_j ‖v_j − v_{j*}‖₁`.
pub fn rounding_bound_check(
    sample: &Sample,
    modes: &[ModeDynamics],
    basis: &MonomialBasis,
    lambda: &[f64],
) -> Result<RoundingBound> {
    let v = mode_fields(sample, modes, basis)?;
    Ok(rounding_bound(&v, &sample.zdot, lambda))
}

pub(crate) fn rounding_bound(v: &DMatrix<f64>, zdot: &[f64], lambda: &[f64]) -> RoundingBound {
    let star = harden(lambda);
    let lhs = l1_to_column(zdot, v, star);
    let soft = nalgebra::DVector::from_column_slice(zdot) - v * nalgebra::DVector::from_column_slice(lambda);
    let dispersion: f64 = lambda
        .iter()
        .enumerate()
        .map(|(j, &l)| l * (v.column(j) - v.column(star)).abs().sum())
        .sum();
    let rhs = soft.abs().sum() + dispersion;
    RoundingBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    }
}

/// Rank-one test of the bordered moment matrix: the second-largest
/// eigenvalue is at most `rank_tol` times the largest.
pub fn is_rank_one(lambda: &[f64], block: &DMatrix<f64>, rank_tol: f64) -> bool {
    let mut eig: Vec<f64> = SymmetricEigen::new(bordered_moment_matrix(lambda, block))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.len() < 2 || eig[1] <= rank_tol * eig[0]
}

/// Fraction of assignments whose moment matrix passes the rank-one test.
pub fn tightness_ratio(assignments: &[ModeAssignment], rank_tol: f64) -> Result<f64> {
    if assignments.is_empty() {
        return Ok(1.0);
    }
    let mut tight = 0usize;
    for (i, a) in assignments.iter().enumerate() {
        let block = a.moment_block.as_ref().ok_or(Error::MissingMomentBlock(i))?;
        if is_rank_one(&a.lambda, block, rank_tol) {
            tight += 1;
        }
    }
    Ok(tight as f64 / assignments.len() as f64)
}

/// Sufficient condition for `e_{j*}` to be the unique simplex-LP optimum.
///
/// Uses the ℓ1 subgradient `w = sign(ż − v_{j*})` (zero where the residual
/// vanishes). `false` is inconclusive.
pub fn verify_one_hot_certificate(
    sample: &Sample,
    modes: &[ModeDynamics],
    basis: &MonomialBasis,
    j_star: usize,
) -> Result<bool> {
    if j_star >= modes.len() {
        return Err(Error::InvalidInput(format!(
            "mode {j_star} out of range for {} modes",
            modes.len()
        )));
    }
    let v = mode_fields(sample, modes, basis)?;
    Ok(certificate_holds(&v, &sample.zdot, j_star))
}

pub(crate) fn certificate_holds(v: &DMatrix<f64>, zdot: &[f64], j_star: usize) -> bool {
    let w: Vec<f64> = zdot
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let r = z - v[(k, j_star)];
            if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let score = |j: usize| -> f64 { w.iter().enumerate().map(|(k, wk)| wk * v[(k, j)]).sum() };
    let own = score(j_star);
    (0..v.ncols())
        .filter(|&j| j != j_star)
        .all(|j| own > score(j) + 1e-12)
}
