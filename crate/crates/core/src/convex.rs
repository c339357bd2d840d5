//! Linear programs and per-sample Shor blocks, solved with an interior-point
//! conic solver (Clarabel).
//!
//! Every identification step lowers to one of two shapes:
//!
//! * [`LinearProgram`]: `min cᵀx` subject to `A_ub x ≤ b_ub`, `A_eq x = b_eq`
//!   and per-variable bounds `lo ≤ x ≤ hi` (infinite bounds allowed).
//! * [`ShorBlock`]: the order-one moment relaxation of a single sample's
//!   mode indicator, with an `(M+1) × (M+1)` positive semidefinite constraint.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{self, NonnegativeConeT, PSDTriangleConeT, ZeroConeT},
};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveState {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStatus {
    pub state: SolveState,
    pub objective: f64,
    /// Present iff `state == Optimal`.
    pub x: Option<Vec<f64>>,
    pub iterations: u32,
    pub seconds: f64,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        self.state == SolveState::Optimal
    }

    pub(crate) fn into_solution(self, context: impl FnOnce() -> String) -> Result<(Vec<f64>, f64)> {
        match self.x {
            Some(x) if self.state == SolveState::Optimal => Ok((x, self.objective)),
            _ => Err(Error::Solver {
                context: context(),
                state: self.state,
            }),
        }
    }
}

/// Row-oriented sparse matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn push(&mut self, row: Vec<(usize, f64)>) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    fn dot(row: &[(usize, f64)], x: &[f64]) -> f64 {
        row.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_ub: SparseRows,
    pub b_ub: Vec<f64>,
    pub a_eq: SparseRows,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Free variables, zero objective, no constraints.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            a_ub: SparseRows::default(),
            b_ub: Vec::new(),
            a_eq: SparseRows::default(),
            b_eq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lower[var] = lo;
        self.upper[var] = hi;
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::mismatch("bound vectors", n, self.lower.len().min(self.upper.len())));
        }
        if self.a_ub.len() != self.b_ub.len() {
            return Err(Error::mismatch("inequality right-hand side", self.a_ub.len(), self.b_ub.len()));
        }
        if self.a_eq.len() != self.b_eq.len() {
            return Err(Error::mismatch("equality right-hand side", self.a_eq.len(), self.b_eq.len()));
        }
        for row in self.a_ub.rows().iter().chain(self.a_eq.rows()) {
            if let Some(&(j, _)) = row.iter().find(|(j, _)| *j >= n) {
                return Err(Error::InvalidInput(format!("constraint references variable {j} of {n}")));
            }
        }
        if let Some(j) = (0..n).find(|&j| !(self.lower[j] <= self.upper[j])) {
            return Err(Error::InvalidInput(format!(
                "variable {j} has empty bounds [{}, {}]",
                self.lower[j], self.upper[j]
            )));
        }
        let finite = self.objective.iter().chain(&self.b_ub).chain(&self.b_eq).all(|v| v.is_finite())
            && self.a_ub.rows().iter().chain(self.a_eq.rows()).flatten().all(|(_, a)| a.is_finite());
        if !finite {
            return Err(Error::InvalidInput("linear program data must be finite".into()));
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ub = self
            .a_ub
            .rows()
            .iter()
            .zip(&self.b_ub)
            .map(|(r, b)| (SparseRows::dot(r, x) - b).max(0.0));
        let eq = self
            .a_eq
            .rows()
            .iter()
            .zip(&self.b_eq)
            .map(|(r, b)| (SparseRows::dot(r, x) - b).abs());
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0));
        ub.chain(eq).chain(bounds).fold(0.0, f64::max)
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

/// Triplet accumulator for the stacked constraint matrix `A x + s = b`.
struct ConeRows {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    rhs: Vec<f64>,
}

impl ConeRows {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            rhs: Vec::new(),
        }
    }

    fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let r = self.rhs.len();
        for (c, v) in entries {
            if v != 0.0 {
                self.rows.push(r);
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.rhs.push(rhs);
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn into_parts(self, num_vars: usize) -> (CscMatrix<f64>, Vec<f64>) {
        let m = self.rhs.len();
        (
            CscMatrix::new_from_triplets(m, num_vars, self.rows, self.cols, self.vals),
            self.rhs,
        )
    }
}

/// Solver settings variants tried in order; later ones trade speed for
/// robustness when the line search stalls on ill-conditioned cones.
#[derive(Debug, Clone, Copy)]
enum Attempt {
    Standard,
    Unequilibrated,
    ShortSteps,
}

const ATTEMPTS: [Attempt; 3] = [Attempt::Standard, Attempt::Unequilibrated, Attempt::ShortSteps];

fn settings(tol: f64, attempt: Attempt) -> DefaultSettings<f64> {
    let mut builder = DefaultSettingsBuilder::default();
    builder
        .verbose(false)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_feas(tol)
        .max_iter(200)
        .max_threads(1);
    match attempt {
        Attempt::Standard => {}
        Attempt::Unequilibrated => {
            builder.equilibrate_enable(false);
        }
        Attempt::ShortSteps => {
            builder.max_step_fraction(0.9);
        }
    }
    builder.build().expect("valid solver settings")
}

fn map_state(status: SolverStatus) -> SolveState {
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveState::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveState::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveState::Unbounded,
        _ => SolveState::IterationLimit,
    }
}

/// Runs each [`Attempt`] until one reaches full accuracy or a definite
/// verdict. An answer met only at the solver's reduced tolerances is kept
/// as a fallback while later attempts run.
fn run_conic(
    objective: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    tol: f64,
) -> SolveStatus {
    let start = Instant::now();
    let mut best: Option<SolveStatus> = None;
    for attempt in ATTEMPTS {
        let (current, exact) = run_conic_once(objective, a, b, cones, tol, attempt);
        let settled = exact || matches!(current.state, SolveState::Infeasible | SolveState::Unbounded);
        let better = match &best {
            None => true,
            Some(prev) => prev.state != SolveState::Optimal && current.state == SolveState::Optimal,
        };
        if settled || better {
            best = Some(current);
        }
        if settled {
            break;
        }
        log::debug!("conic solve inexact with {attempt:?} settings");
    }
    let mut status = best.expect("at least one attempt");
    status.seconds = start.elapsed().as_secs_f64();
    status
}

fn run_conic_once(
    objective: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    tol: f64,
    attempt: Attempt,
) -> (SolveStatus, bool) {
    let start = Instant::now();
    let n = objective.len();
    let p = CscMatrix::zeros((n, n));
    let mut solver = match DefaultSolver::new(&p, objective, a, b, cones, settings(tol, attempt)) {
        Ok(s) => s,
        Err(_) => {
            let status = SolveStatus {
                state: SolveState::IterationLimit,
                objective: f64::NAN,
                x: None,
                iterations: 0,
                seconds: start.elapsed().as_secs_f64(),
            };
            return (status, false);
        }
    };
    solver.solve();
    let sol = &solver.solution;
    let state = map_state(sol.status);
    let optimal = state == SolveState::Optimal;
    let status = SolveStatus {
        state,
        objective: if optimal { sol.obj_val } else { f64::NAN },
        x: optimal.then(|| sol.x.clone()),
        iterations: sol.iterations,
        seconds: start.elapsed().as_secs_f64(),
    };
    (status, sol.status == SolverStatus::Solved)
}

/// Solves a linear program. Infeasibility and unboundedness are reported
/// through [`SolveStatus::state`]; only malformed input is an error.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<SolveStatus> {
    lp.validate()?;
    let n = lp.num_vars();
    let mut eq = ConeRows::new();
    for (row, &b) in lp.a_eq.rows().iter().zip(&lp.b_eq) {
        eq.push(row.iter().copied(), b);
    }
    let num_eq = eq.len();
    let mut rows = eq;
    for (row, &b) in lp.a_ub.rows().iter().zip(&lp.b_ub) {
        rows.push(row.iter().copied(), b);
    }
    for j in 0..n {
        if lp.lower[j].is_finite() {
            rows.push([(j, -1.0)], -lp.lower[j]);
        }
        if lp.upper[j].is_finite() {
            rows.push([(j, 1.0)], lp.upper[j]);
        }
    }
    let num_nonneg = rows.len() - num_eq;
    let mut cones = Vec::with_capacity(2);
    if num_eq > 0 {
        cones.push(ZeroConeT(num_eq));
    }
    if num_nonneg > 0 {
        cones.push(NonnegativeConeT(num_nonneg));
    }
    let (a, b) = rows.into_parts(n);
    let mut status = run_conic(&lp.objective, &a, &b, &cones, tol);
    if let Some(x) = &mut status.x {
        // interior-point iterates can sit a hair outside finite bounds
        for (v, (lo, hi)) in x.iter_mut().zip(lp.lower.iter().zip(&lp.upper)) {
            *v = v.clamp(*lo, *hi);
        }
        status.objective = lp.objective_at(x);
    }
    Ok(status)
}

/// One sample's Shor block: mode fields `v_j` as the columns of `fields`
/// (`n × M`) and the measured derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct ShorBlock {
    pub fields: DMatrix<f64>,
    pub zdot: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShorSolution {
    pub lambda: Vec<f64>,
    /// `Λ`, symmetric `M × M` with `diag(Λ) = λ`.
    pub moments: DMatrix<f64>,
    pub objective: f64,
    pub status: SolveStatus,
}

/// Solves `min Σ δ` subject to `-δ ≤ ż - Vλ ≤ δ`, `1ᵀλ = 1`,
/// `diag(Λ) = λ` and `[[1, λᵀ], [λ, Λ]] ⪰ 0`.
///
/// Variables are `λ` (M), the strict upper triangle of `Λ` and `δ` (n); the
/// diagonal of `Λ` is identified with `λ` directly. A failed solve is
/// returned as an error carrying the solver state.
pub fn solve_shor_block(block: &ShorBlock, tol: f64) -> Result<ShorSolution> {
    let n = block.fields.nrows();
    let m = block.fields.ncols();
    if m == 0 {
        return Err(Error::InvalidInput("Shor block needs at least one mode".into()));
    }
    if block.zdot.len() != n {
        return Err(Error::mismatch("Shor block derivative", n, block.zdot.len()));
    }
    if block.fields.iter().chain(&block.zdot).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("Shor block data must be finite".into()));
    }
    let num_off = m * (m - 1) / 2;
    let off_index = |j: usize, k: usize| -> usize {
        // j < k, row-major over the strict upper triangle
        m + j * (2 * m - j - 1) / 2 + (k - j - 1)
    };
    let delta0 = m + num_off;
    let num_vars = delta0 + n;

    let mut objective = vec![0.0; num_vars];
    objective[delta0..].iter_mut().for_each(|c| *c = 1.0);

    let mut rows = ConeRows::new();
    rows.push((0..m).map(|j| (j, 1.0)), 1.0);
    // ż_k - (Vλ)_k ≤ δ_k  and  (Vλ)_k - ż_k ≤ δ_k
    for k in 0..n {
        let row = |sign: f64| {
            (0..m)
                .map(move |j| (j, sign * block.fields[(k, j)]))
                .chain(std::iter::once((delta0 + k, -1.0)))
        };
        rows.push(row(-1.0), -block.zdot[k]);
        rows.push(row(1.0), block.zdot[k]);
    }
    // svec of the bordered matrix, upper triangle column by column,
    // off-diagonal entries scaled by √2
    let sqrt2 = std::f64::consts::SQRT_2;
    let dim = m + 1;
    for col in 0..dim {
        for row in 0..=col {
            match (row, col) {
                (0, 0) => rows.push(std::iter::empty(), 1.0),
                (0, c) => rows.push([(c - 1, -sqrt2)], 0.0),
                (r, c) if r == c => rows.push([(r - 1, -1.0)], 0.0),
                (r, c) => rows.push([(off_index(r - 1, c - 1), -sqrt2)], 0.0),
            }
        }
    }
    let cones = [ZeroConeT(1), NonnegativeConeT(2 * n), PSDTriangleConeT(dim)];
    let (a, b) = rows.into_parts(num_vars);
    let status = run_conic(&objective, &a, &b, &cones, tol);
    let x = match &status.x {
        Some(x) => x.clone(),
        None => {
            return Err(Error::Solver {
                context: "Shor block".into(),
                state: status.state,
            })
        }
    };
    let lambda: Vec<f64> = x[..m].to_vec();
    let mut moments = DMatrix::zeros(m, m);
    for j in 0..m {
        moments[(j, j)] = lambda[j];
        for k in j + 1..m {
            let v = x[off_index(j, k)];
            moments[(j, k)] = v;
            moments[(k, j)] = v;
        }
    }
    let fitted = &block.fields * nalgebra::DVector::from_column_slice(&lambda);
    let objective = block
        .zdot
        .iter()
        .zip(fitted.iter())
        .map(|(z, f)| (z - f).abs())
        .sum();
    Ok(ShorSolution {
        lambda,
        moments,
        objective,
        status,
    })
}
