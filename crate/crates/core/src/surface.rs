//! Switching-surface recovery from labelled states: a soft-margin polynomial
//! classifier per surface, plus the margin certificate that brackets usable
//! margins.

use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::convex::{solve_lp, LinearProgram, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::model::{ModeBook, SurfaceSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFitConfig {
    pub degree: usize,
    /// Margin `ε > 0`.
    pub epsilon: f64,
    /// ℓ1 weight `β ≥ 0` on the surface coefficients.
    pub beta: f64,
    /// Coefficient box `|a| ≤ η`.
    pub eta: f64,
    pub solver_tol: f64,
}

impl Default for SurfaceFitConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            epsilon: 1e-2,
            beta: 1e-2,
            eta: 10.0,
            solver_tol: DEFAULT_TOL,
        }
    }
}

impl SurfaceFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("margin must be positive, got {}", self.epsilon)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidInput(format!("sparsity weight must be finite and ≥ 0, got {}", self.beta)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidInput(format!("box bound must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

pub fn make_modebook(m: usize) -> Result<ModeBook> {
    ModeBook::canonical(m)
}

/// `σ_{iℓ}`: the code of each label in `modebook`.
pub fn signs_from_labels(labels: &[usize], modebook: &ModeBook) -> Result<Vec<Vec<i8>>> {
    labels
        .iter()
        .map(|&l| {
            modebook
                .codes()
                .get(l)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("label {l} outside 0..{}", modebook.num_modes())))
        })
        .collect()
}

fn features(points: &[Vec<f64>], basis: &MonomialBasis) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Err(Error::InvalidInput("surface fitting needs at least one point".into()));
    }
    points.par_iter().map(|z| basis.eval(z)).collect()
}

fn check_signs(signs: &[Vec<i8>], n_points: usize) -> Result<usize> {
    if signs.len() != n_points {
        return Err(Error::mismatch("sign vectors", n_points, signs.len()));
    }
    let l = signs[0].len();
    if let Some(bad) = signs.iter().find(|s| s.len() != l) {
        return Err(Error::mismatch("surfaces per sign vector", l, bad.len()));
    }
    if signs.iter().flatten().any(|&s| s != 1 && s != -1) {
        return Err(Error::InvalidInput("signs must be ±1".into()));
    }
    Ok(l)
}

/// Soft-margin LP for one surface. Variables: `a` (P), `ξ` (N), `ζ` (P).
pub fn surface_lp(phi: &[Vec<f64>], sigma: &[i8], config: &SurfaceFitConfig) -> LinearProgram {
    let p = phi[0].len();
    let n = phi.len();
    let (xi, zeta) = (p, p + n);
    let mut lp = LinearProgram::new(2 * p + n);
    for m in 0..p {
        lp.set_bounds(m, -config.eta, config.eta);
        lp.set_bounds(zeta + m, 0.0, config.eta);
        lp.objective[zeta + m] = config.beta;
        lp.add_le(vec![(m, 1.0), (zeta + m, -1.0)], 0.0);
        lp.add_le(vec![(m, -1.0), (zeta + m, -1.0)], 0.0);
    }
    for (i, (f, &s)) in phi.iter().zip(sigma).enumerate() {
        lp.objective[xi + i] = 1.0;
        lp.set_bounds(xi + i, 0.0, f64::INFINITY);
        let s = f64::from(s);
        let mut row: Vec<(usize, f64)> = f
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(m, v)| (m, -s * v))
            .collect();
        row.push((xi + i, -1.0));
        lp.add_le(row, -config.epsilon);
    }
    lp
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFit {
    /// Raw optimal coefficients (not normalised).
    pub surfaces: SurfaceSet,
    /// `Σ_{iℓ} max(0, ε − σ_{iℓ} a_ℓᵀφ(z_i))` at the returned coefficients.
    pub total_slack: f64,
    pub slack_per_surface: Vec<f64>,
    /// `‖a_ℓ‖₁` per surface.
    pub l1_norms: Vec<f64>,
    /// Total slack plus `β Σ_ℓ ‖a_ℓ‖₁`.
    pub objective: f64,
}

impl SurfaceFit {
    pub fn all_nonzero(&self) -> bool {
        self.l1_norms.iter().all(|&v| v > 0.0)
    }
}

/// Solves the soft-margin program independently for every surface.
pub fn fit_surfaces(
    points: &[Vec<f64>],
    signs: &[Vec<i8>],
    basis: &MonomialBasis,
    config: &SurfaceFitConfig,
) -> Result<SurfaceFit> {
    config.validate()?;
    let phi = features(points, basis)?;
    let l = check_signs(signs, points.len())?;
    let per_surface = (0..l)
        .into_par_iter()
        .map(|ell| {
            let sigma: Vec<i8> = signs.iter().map(|s| s[ell]).collect();
            let lp = surface_lp(&phi, &sigma, config);
            let (x, _) = solve_lp(&lp, config.solver_tol)?
                .into_solution(|| format!("surface fit for surface {}", ell + 1))?;
            let a = x[..basis.len()].to_vec();
            let slack: f64 = phi
                .iter()
                .zip(&sigma)
                .map(|(f, &s)| (config.epsilon - f64::from(s) * dot(&a, f)).max(0.0))
                .sum();
            Ok((a, slack))
        })
        .collect::<Result<Vec<_>>>()?;
    let l1_norms: Vec<f64> = per_surface.iter().map(|(a, _)| a.iter().map(|v| v.abs()).sum()).collect();
    let slack_per_surface: Vec<f64> = per_surface.iter().map(|(_, s)| *s).collect();
    let total_slack = slack_per_surface.iter().sum::<f64>();
    let objective = total_slack + config.beta * l1_norms.iter().sum::<f64>();
    let surfaces = SurfaceSet::new(basis.clone(), per_surface.into_iter().map(|(a, _)| a).collect())?;
    Ok(SurfaceFit {
        surfaces,
        total_slack,
        slack_per_surface,
        l1_norms,
        objective,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginCertificate {
    /// Best achievable margin per surface.
    pub per_surface: Vec<f64>,
    /// Maximisers `â_ℓ`.
    pub coefficients: Vec<Vec<f64>>,
    /// `min_ℓ t_ℓ`; positive iff every surface's labels are strictly separable.
    pub t: f64,
}

impl MarginCertificate {
    /// `S = Σ_ℓ ‖â_ℓ‖₁`.
    pub fn l1_total(&self) -> f64 {
        self.coefficients.iter().flatten().map(|v| v.abs()).sum()
    }
}

/// `max t` subject to `σ_{iℓ} a_ℓᵀφ(z_i) ≥ t` and `|a_ℓ| ≤ η`, per surface.
pub fn margin_certificate(points: &[Vec<f64>], signs: &[Vec<i8>], basis: &MonomialBasis, eta: f64) -> Result<MarginCertificate> {
    margin_certificate_tol(points, signs, basis, eta, DEFAULT_TOL)
}

pub fn margin_certificate_tol(
    points: &[Vec<f64>],
    signs: &[Vec<i8>],
    basis: &MonomialBasis,
    eta: f64,
    tol: f64,
) -> Result<MarginCertificate> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("box bound must be positive, got {eta}")));
    }
    let phi = features(points, basis)?;
    let l = check_signs(signs, points.len())?;
    let p = basis.len();
    let solved = (0..l)
        .into_par_iter()
        .map(|ell| {
            let mut lp = LinearProgram::new(p + 1);
            lp.objective[p] = -1.0;
            for m in 0..p {
                lp.set_bounds(m, -eta, eta);
            }
            for (f, s) in phi.iter().zip(signs) {
                let s = f64::from(s[ell]);
                let mut row: Vec<(usize, f64)> = f
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(m, v)| (m, -s * v))
                    .collect();
                row.push((p, 1.0));
                lp.add_le(row, 0.0);
            }
            let (x, _) = solve_lp(&lp, tol)?.into_solution(|| format!("margin certificate for surface {}", ell + 1))?;
            let a = x[..p].to_vec();
            let t = phi
                .iter()
                .zip(signs)
                .map(|(f, s)| f64::from(s[ell]) * dot(&a, f))
                .fold(f64::INFINITY, f64::min);
            Ok((a, t))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_surface: Vec<f64> = solved.iter().map(|(_, t)| *t).collect();
    let t = per_surface.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MarginCertificate {
        per_surface,
        coefficients: solved.into_iter().map(|(a, _)| a).collect(),
        t,
    })
}

/// Half-open interval `(lo, hi]` of margins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonInterval {
    pub lo: f64,
    pub hi: f64,
}

impl EpsilonInterval {
    pub fn contains(&self, eps: f64) -> bool {
        eps > self.lo && eps <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// `(βS/(NL), t]`, or `None` when `t ≤ 0` or `βS ≥ NLt`.
pub fn admissible_epsilon(t: f64, beta: f64, s: f64, n: usize, l: usize) -> Option<EpsilonInterval> {
    let nl = (n * l) as f64;
    if !(t > 0.0) || nl == 0.0 || beta * s >= nl * t {
        return None;
    }
    Some(EpsilonInterval { lo: beta * s / nl, hi: t })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRecovery {
    pub modebook: ModeBook,
    pub certificate: MarginCertificate,
    pub interval: Option<EpsilonInterval>,
    pub fit: SurfaceFit,
}

/// Certificate, margin interval and soft-margin fit for hardened labels.
pub fn recover_surfaces(points: &[Vec<f64>], labels: &[usize], m: usize, config: &SurfaceFitConfig) -> Result<SurfaceRecovery> {
    config.validate()?;
    let modebook = make_modebook(m)?;
    let basis = MonomialBasis::new(
        points.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("no points".into()))?,
        config.degree,
    )?;
    let signs = signs_from_labels(labels, &modebook)?;
    let certificate = margin_certificate_tol(points, &signs, &basis, config.eta, config.solver_tol)?;
    let interval = admissible_epsilon(
        certificate.t,
        config.beta,
        certificate.l1_total(),
        points.len(),
        modebook.num_surfaces(),
    );
    match interval {
        None if certificate.t <= 0.0 => log::warn!(
            "labels are not strictly separable at degree {} (certificate t = {:.3e}); fitting with ε = {}",
            config.degree,
            certificate.t,
            config.epsilon
        ),
        Some(iv) if !iv.contains(config.epsilon) => log::warn!(
            "margin ε = {} lies outside the admissible interval ({:.3e}, {:.3e}]",
            config.epsilon,
            iv.lo,
            iv.hi
        ),
        _ => {}
    }
    let fit = fit_surfaces(points, &signs, &basis, config)?;
    Ok(SurfaceRecovery {
        modebook,
        certificate,
        interval,
        fit,
    })
}
