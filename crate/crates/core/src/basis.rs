//! Monomial feature maps.
//!
//! A [`MonomialBasis`] enumerates every monomial of total degree at most `d`
//! in `n` variables. Monomials are grouped by total degree (constant first)
//! and, within a degree, ordered by descending exponent tuple, so for two
//! variables `(x, y)` and degree two the order is `1, x, y, x², xy, y²`.

use crate::error::{Error, Result};

/// Number of monomials of total degree at most `degree` in `n` variables,
/// i.e. `binomial(n + degree, degree)`.
pub fn basis_size(n: usize, degree: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidInput("state dimension must be at least 1".into()));
    }
    // binomial(n + d, d) built incrementally; every prefix product is itself a binomial
    let mut acc: u128 = 1;
    for k in 1..=degree as u128 {
        acc = acc
            .checked_mul(n as u128 + k)
            .ok_or_else(|| overflow(n, degree))?
            / k;
    }
    usize::try_from(acc).map_err(|_| overflow(n, degree))
}

fn overflow(n: usize, degree: usize) -> Error {
    Error::Capacity(format!("basis size binomial({}, {degree}) overflows", n + degree))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialBasis {
    n: usize,
    degree: usize,
    exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    pub fn new(n: usize, degree: usize) -> Result<Self> {
        let size = basis_size(n, degree)?;
        let mut exponents = Vec::with_capacity(size);
        let mut current = vec![0u32; n];
        for total in 0..=degree as u32 {
            push_descending(&mut exponents, &mut current, 0, total);
        }
        debug_assert_eq!(exponents.len(), size);
        Ok(Self {
            n,
            degree,
            exponents,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of monomials `P`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Position of the monomial with the given exponent tuple.
    pub fn index_of(&self, exponent: &[u32]) -> Option<usize> {
        self.exponents.iter().position(|e| e.as_slice() == exponent)
    }

    /// Position of the degree-one monomial `z_k`.
    pub fn linear_index(&self, k: usize) -> Option<usize> {
        if self.degree == 0 || k >= self.n {
            return None;
        }
        // degree-one monomials follow the constant, in coordinate order
        Some(1 + k)
    }

    /// Evaluates every monomial at `z`.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n {
            return Err(Error::mismatch("state vector", self.n, z.len()));
        }
        let max_pow = self.degree;
        // powers[k][p] = z_k^p
        let powers: Vec<Vec<f64>> = z
            .iter()
            .map(|&zk| {
                let mut row = Vec::with_capacity(max_pow + 1);
                let mut acc = 1.0;
                for _ in 0..=max_pow {
                    row.push(acc);
                    acc *= zk;
                }
                row
            })
            .collect();
        Ok(self
            .exponents
            .iter()
            .map(|e| {
                e.iter()
                    .enumerate()
                    .map(|(k, &p)| powers[k][p as usize])
                    .product()
            })
            .collect())
    }

    /// Re-expresses coefficients over `self` in a basis that contains every
    /// monomial of `self` (same `n`, degree at least as large).
    pub fn embed_into(&self, coeffs: &[f64], target: &MonomialBasis) -> Result<Vec<f64>> {
        if coeffs.len() != self.len() {
            return Err(Error::mismatch("coefficient vector", self.len(), coeffs.len()));
        }
        if target.n != self.n || target.degree < self.degree {
            return Err(Error::InvalidInput(format!(
                "cannot embed degree-{} basis in {} variables into degree-{} basis in {} variables",
                self.degree, self.n, target.degree, target.n
            )));
        }
        let mut out = vec![0.0; target.len()];
        for (e, &c) in self.exponents.iter().zip(coeffs) {
            let idx = target.index_of(e).expect("monomial present in larger basis");
            out[idx] = c;
        }
        Ok(out)
    }
}

fn push_descending(out: &mut Vec<Vec<u32>>, current: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.to_vec());
        return;
    }
    for p in (0..=remaining).rev() {
        current[pos] = p;
        push_descending(out, current, pos + 1, remaining - p);
    }
    current[pos] = 0;
}
