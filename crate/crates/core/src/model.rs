//! Mode dynamics, switching surfaces and the assembled switching-system model.
//!
//! Mode indices are zero-based throughout the library; file formats shift
//! them to `1..=M` at the boundary.

use nalgebra::DMatrix;

use crate::basis::MonomialBasis;
use crate::data::Sample;
use crate::error::{Error, Result};

/// Absolute slack allowed on simplex membership (`λ ≥ -tol`, `|Σλ - 1| ≤ tol`).
pub const SIMPLEX_TOL: f64 = 1e-8;

/// Vector field of one mode, `ż = C φ(z)` with `C` of shape `n × P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDynamics {
    coeffs: DMatrix<f64>,
}

impl ModeDynamics {
    pub fn new(coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("mode coefficients must be finite".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            coeffs: DMatrix::zeros(n, p),
        }
    }

    /// Builds a mode from row-major coefficient rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::mismatch("coefficient row", p, bad.len()));
        }
        Self::new(DMatrix::from_fn(n, p, |r, c| rows[r][c]))
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.coeffs
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn n(&self) -> usize {
        self.coeffs.nrows()
    }

    /// `C φ` for precomputed features.
    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        debug_assert_eq!(features.len(), self.coeffs.ncols());
        (0..self.coeffs.nrows())
            .map(|r| {
                features
                    .iter()
                    .enumerate()
                    .map(|(c, f)| self.coeffs[(r, c)] * f)
                    .sum()
            })
            .collect()
    }

    pub fn check_basis(&self, basis: &MonomialBasis) -> Result<()> {
        if self.coeffs.nrows() != basis.n() {
            return Err(Error::mismatch("mode rows", basis.n(), self.coeffs.nrows()));
        }
        if self.coeffs.ncols() != basis.len() {
            return Err(Error::mismatch("mode columns", basis.len(), self.coeffs.ncols()));
        }
        Ok(())
    }

    /// Re-expresses the mode over a larger basis in the same variables.
    pub fn embed(&self, from: &MonomialBasis, to: &MonomialBasis) -> Result<Self> {
        self.check_basis(from)?;
        let rows = self
            .rows()
            .iter()
            .map(|r| from.embed_into(r, to))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

pub fn eval_mode(mode: &ModeDynamics, basis: &MonomialBasis, z: &[f64]) -> Result<Vec<f64>> {
    mode.check_basis(basis)?;
    Ok(mode.apply(&basis.eval(z)?))
}

pub(crate) fn check_simplex(lambda: &[f64]) -> Result<()> {
    let sum: f64 = lambda.iter().sum();
    if lambda.iter().any(|&l| !(l >= -SIMPLEX_TOL)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidInput(format!(
            "weights {lambda:?} are not on the probability simplex"
        )));
    }
    Ok(())
}

/// ℓ1 mismatch of a sample against a convex combination of mode fields.
pub fn residual_l1(
    sample: &Sample,
    modes: &[ModeDynamics],
    basis: &MonomialBasis,
    lambda: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if lambda.len() != modes.len() {
        return Err(Error::mismatch("mode weights", modes.len(), lambda.len()));
    }
    check_simplex(lambda)?;
    if sample.zdot.len() != basis.n() {
        return Err(Error::mismatch("derivative vector", basis.n(), sample.zdot.len()));
    }
    let phi = basis.eval(&sample.z)?;
    let mut residual = sample.zdot.clone();
    for (mode, &w) in modes.iter().zip(lambda) {
        mode.check_basis(basis)?;
        if w == 0.0 {
            continue;
        }
        for (r, v) in residual.iter_mut().zip(mode.apply(&phi)) {
            *r -= w * v;
        }
    }
    let norm = residual.iter().map(|r| r.abs()).sum();
    Ok((residual, norm))
}

/// `L` polynomial surfaces `f_ℓ(z) = a_ℓᵀ φ(z)` over a shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    basis: MonomialBasis,
    surfaces: Vec<Vec<f64>>,
}

impl SurfaceSet {
    pub fn new(basis: MonomialBasis, surfaces: Vec<Vec<f64>>) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::InvalidInput("at least one surface is required".into()));
        }
        for a in &surfaces {
            if a.len() != basis.len() {
                return Err(Error::mismatch("surface coefficients", basis.len(), a.len()));
            }
            if a.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput("surface coefficients must be finite".into()));
            }
        }
        Ok(Self { basis, surfaces })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn surfaces(&self) -> &[Vec<f64>] {
        &self.surfaces
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn values(&self, z: &[f64]) -> Result<Vec<f64>> {
        let phi = self.basis.eval(z)?;
        Ok(self
            .surfaces
            .iter()
            .map(|a| a.iter().zip(&phi).map(|(c, p)| c * p).sum())
            .collect())
    }

    /// Sign pattern at `z`, with `sign(0) = +1`.
    pub fn signs(&self, z: &[f64]) -> Result<Vec<i8>> {
        Ok(self
            .values(z)?
            .into_iter()
            .map(|v| if v >= 0.0 { 1 } else { -1 })
            .collect())
    }

    /// Rescales every surface by a positive factor so that its largest
    /// coefficient magnitude is one. Zero level sets and signs are unchanged.
    pub fn normalized(&self) -> Self {
        let surfaces = self
            .surfaces
            .iter()
            .map(|a| {
                let scale = a.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                if scale > 0.0 {
                    a.iter().map(|c| c / scale).collect()
                } else {
                    a.clone()
                }
            })
            .collect();
        Self {
            basis: self.basis.clone(),
            surfaces,
        }
    }
}

/// Sign codes assigning each mode a region of the surface arrangement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeBook {
    codes: Vec<Vec<i8>>,
}

impl ModeBook {
    pub fn new(codes: Vec<Vec<i8>>) -> Result<Self> {
        let m = codes.len();
        if m == 0 {
            return Err(Error::InvalidInput("mode-book needs at least one code".into()));
        }
        let l = Self::surfaces_for(m);
        for code in &codes {
            if code.len() != l {
                return Err(Error::mismatch("mode-book code length", l, code.len()));
            }
            if code.iter().any(|&s| s != 1 && s != -1) {
                return Err(Error::InvalidInput("mode-book entries must be ±1".into()));
            }
        }
        for (i, a) in codes.iter().enumerate() {
            if codes[i + 1..].contains(a) {
                return Err(Error::InvalidInput(format!("duplicate mode-book code {a:?}")));
            }
        }
        Ok(Self { codes })
    }

    /// Binary expansion of the mode index, most significant bit first,
    /// with bit 0 ↦ +1 and bit 1 ↦ −1.
    pub fn canonical(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("mode count must be at least 1".into()));
        }
        let l = Self::surfaces_for(m);
        let codes = (0..m)
            .map(|j| {
                (0..l)
                    .rev()
                    .map(|bit| if (j >> bit) & 1 == 0 { 1 } else { -1 })
                    .collect()
            })
            .collect();
        Self::new(codes)
    }

    /// Smallest `L` with `max(M, 2) ≤ 2^L`.
    pub fn surfaces_for(m: usize) -> usize {
        let m = m.max(2);
        (usize::BITS - (m - 1).leading_zeros()) as usize
    }

    pub fn codes(&self) -> &[Vec<i8>] {
        &self.codes
    }

    pub fn num_modes(&self) -> usize {
        self.codes.len()
    }

    pub fn num_surfaces(&self) -> usize {
        self.codes[0].len()
    }

    /// Mode whose code matches `pattern`; otherwise the nearest code in
    /// Hamming distance, lowest index on ties.
    pub fn lookup(&self, pattern: &[i8]) -> usize {
        let mut best = (usize::MAX, 0);
        for (j, code) in self.codes.iter().enumerate() {
            let dist = code.iter().zip(pattern).filter(|(a, b)| a != b).count();
            if dist < best.0 {
                best = (dist, j);
                if dist == 0 {
                    break;
                }
            }
        }
        best.1
    }
}

pub fn region_mode(surfaces: &SurfaceSet, modebook: &ModeBook, z: &[f64]) -> Result<usize> {
    if surfaces.len() != modebook.num_surfaces() {
        return Err(Error::mismatch(
            "surface count",
            modebook.num_surfaces(),
            surfaces.len(),
        ));
    }
    Ok(modebook.lookup(&surfaces.signs(z)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSystemModel {
    basis: MonomialBasis,
    modes: Vec<ModeDynamics>,
    switching: Option<(SurfaceSet, ModeBook)>,
}

impl SwitchingSystemModel {
    pub fn new(basis: MonomialBasis, modes: Vec<ModeDynamics>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidInput("a model needs at least one mode".into()));
        }
        for m in &modes {
            m.check_basis(&basis)?;
        }
        Ok(Self {
            basis,
            modes,
            switching: None,
        })
    }

    pub fn with_surfaces(mut self, surfaces: SurfaceSet, modebook: ModeBook) -> Result<Self> {
        if surfaces.basis().n() != self.basis.n() {
            return Err(Error::mismatch("surface variables", self.basis.n(), surfaces.basis().n()));
        }
        if modebook.num_modes() != self.modes.len() {
            return Err(Error::mismatch("mode-book size", self.modes.len(), modebook.num_modes()));
        }
        if surfaces.len() != modebook.num_surfaces() {
            return Err(Error::mismatch("surface count", modebook.num_surfaces(), surfaces.len()));
        }
        self.switching = Some((surfaces, modebook));
        Ok(self)
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn modes(&self) -> &[ModeDynamics] {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn surfaces(&self) -> Option<&SurfaceSet> {
        self.switching.as_ref().map(|(s, _)| s)
    }

    pub fn modebook(&self) -> Option<&ModeBook> {
        self.switching.as_ref().map(|(_, b)| b)
    }

    /// `true` when the active mode can be resolved pointwise.
    pub fn is_simulable(&self) -> bool {
        self.switching.is_some() || self.modes.len() == 1
    }

    /// Active mode at `z`.
    pub fn mode_at(&self, z: &[f64]) -> Result<usize> {
        match &self.switching {
            Some((surfaces, book)) => region_mode(surfaces, book, z),
            None if self.modes.len() == 1 => Ok(0),
            None => Err(Error::InvalidInput(
                "model has several modes but no switching surfaces".into(),
            )),
        }
    }

    /// Vector field of the active mode at `z`, together with that mode.
    pub fn vector_field(&self, z: &[f64]) -> Result<(usize, Vec<f64>)> {
        let j = self.mode_at(z)?;
        Ok((j, self.modes[j].apply(&self.basis.eval(z)?)))
    }
}
