//! Gridless DOA solvers: alternating projections for arbitrary and uniform
//! arrays, and an ADMM solver for the trace-relaxed ULA problem.

use std::io::Write;

use crate::error::{DoaError, Result};
use crate::ivd::ivd_with;
use crate::linalg::{frobenius, CMat, C64};
use crate::projections::{
    project_block_set, project_psd, toeplitz_first_column, toeplitz_from_column, AugmentedBlock, BlockMode,
    ProjectionOptions,
};

/// Iteration cap used when none is configured.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Residual growth, relative to `‖Y‖_F`, treated as divergence.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Iteration cap for `k` sources. The cap is the same for every `k`.
pub fn default_max_iter(_k: usize) -> usize {
    DEFAULT_MAX_ITER
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApOptions {
    /// Stop once `‖L⁽ⁱ⁾ − L⁽ⁱ⁻¹⁾‖_F` falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    pub projection: ProjectionOptions,
}

impl Default for ApOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: DEFAULT_MAX_ITER, projection: ProjectionOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    /// Estimated DOAs in radians, ascending.
    pub thetas: Vec<f64>,
    /// Final structured covariance estimate.
    pub t_opt: CMat,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration step size (`‖L⁽ⁱ⁾ − L⁽ⁱ⁻¹⁾‖_F` for AP, `‖S − B‖_F` for ADMM).
    pub residual_history: Vec<f64>,
    /// AP only: distance `‖L⁽ⁱ⁾ − H⁽ⁱ⁾‖_F` between the two sets.
    pub gap_history: Vec<f64>,
    /// The final decomposition found fewer than `K` harmonics.
    pub shortfall: bool,
}

impl SolverReport {
    /// Writes `iteration,residual[,gap]` rows.
    pub fn write_residual_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let with_gap = !self.gap_history.is_empty();
        writeln!(out, "{}", if with_gap { "iteration,residual,gap" } else { "iteration,residual" })?;
        for (i, r) in self.residual_history.iter().enumerate() {
            match self.gap_history.get(i).filter(|_| with_gap) {
                Some(g) => writeln!(out, "{},{r:e},{g:e}", i + 1)?,
                None => writeln!(out, "{},{r:e}", i + 1)?,
            }
        }
        Ok(())
    }
}

/// Alternating-projection iterate pair: `H = P_psd(L)` and the structured
/// `L` it was computed from.
#[derive(Debug, Clone)]
pub struct ApState {
    pub l: AugmentedBlock,
    pub h: AugmentedBlock,
    pub iteration: usize,
    pub residual: f64,
}

fn check_problem(y: &CMat, gamma: &[f64], k: usize) -> Result<()> {
    let m = y.nrows();
    if y.ncols() == 0 {
        return Err(DoaError::invalid("measurement matrix has no snapshots"));
    }
    if gamma.len() != m {
        return Err(DoaError::invalid(format!("{} positions for {m} sensors", gamma.len())));
    }
    if k == 0 || k >= m {
        return Err(DoaError::invalid(format!("need 1 ≤ K < M, got K={k}, M={m}")));
    }
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(DoaError::invalid("measurements contain non-finite values"));
    }
    Ok(())
}

fn ap_solve(y: &CMat, gamma: &[f64], k: usize, mode: BlockMode, opts: ApOptions) -> Result<SolverReport> {
    check_problem(y, gamma, k)?;
    let y_norm = frobenius(y);
    let mut state = ApState {
        l: AugmentedBlock::initial(y),
        h: AugmentedBlock::initial(y),
        iteration: 0,
        residual: f64::INFINITY,
    };
    let mut residuals = Vec::new();
    let mut gaps = Vec::new();
    let mut converged = false;
    while state.iteration < opts.max_iter {
        state.h = AugmentedBlock::new(project_psd(state.l.matrix()), y.nrows())?;
        gaps.push(frobenius(&(state.l.matrix() - state.h.matrix())));
        let next = project_block_set(&state.h, y, gamma, k, mode, opts.projection)?;
        state.residual = frobenius(&(next.matrix() - state.l.matrix()));
        state.l = next;
        state.iteration += 1;
        residuals.push(state.residual);
        if !state.residual.is_finite() || (y_norm > 0.0 && state.residual > DIVERGENCE_FACTOR * y_norm) {
            return Err(DoaError::Divergence { iteration: state.iteration, residual: state.residual });
        }
        if state.residual <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("alternating projections hit the {} iteration cap", opts.max_iter);
    }
    let t_opt = state.l.t_block();
    let d = ivd_with(&t_opt, gamma, k, opts.projection.search)?;
    Ok(SolverReport {
        thetas: d.model.thetas(),
        t_opt,
        iterations: state.iteration,
        converged,
        residual_history: residuals,
        gap_history: gaps,
        shortfall: d.shortfall,
    })
}

/// Alternating projections between the PSD cone and the set of augmented
/// blocks whose T-block is a rank-`K` irregular Toeplitz matrix on `gamma`.
pub fn ap_gridless(y: &CMat, gamma: &[f64], k: usize, opts: ApOptions) -> Result<SolverReport> {
    ap_solve(y, gamma, k, BlockMode::Irregular, opts)
}

/// Alternating projections with a plain Toeplitz T-block, for measurements
/// from the half-wavelength ULA `[0, …, M−1]`.
pub fn ap_ula(y: &CMat, k: usize, opts: ApOptions) -> Result<SolverReport> {
    let gamma = ula_positions(y.nrows());
    ap_solve(y, &gamma, k, BlockMode::Toeplitz, opts)
}

fn ula_positions(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub tau: f64,
    pub rho: f64,
    pub max_iter: usize,
    /// Threshold on the constraint residual `‖S − B‖_F`.
    pub tol: f64,
    pub search: crate::spectrum::SearchOptions,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self { tau: 0.01, rho: 1.0, max_iter: DEFAULT_MAX_ITER, tol: 1e-6, search: Default::default() }
    }
}

/// ADMM iterate for
/// `min ½‖Ŷ − Y‖² + τ/2 (Tr Q + Tr T(u))` subject to
/// `S = [[T(u), Ŷ], [Ŷᴴ, Q]]`, `S ⪰ 0`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub q: CMat,
    pub u: Vec<C64>,
    pub y_hat: CMat,
    pub s: CMat,
    pub lambda: CMat,
    pub tau: f64,
    pub rho: f64,
}

impl AdmmState {
    /// Zero multiplier and `S⁰ = P_psd([[0, Y], [Yᴴ, I]])`.
    pub fn new(y: &CMat, tau: f64, rho: f64) -> Result<Self> {
        if !(tau > 0.0 && rho > 0.0 && tau.is_finite() && rho.is_finite()) {
            return Err(DoaError::invalid(format!("tau and rho must be positive, got {tau}, {rho}")));
        }
        let (m, l) = y.shape();
        let s = project_psd(AugmentedBlock::initial(y).matrix());
        Ok(Self {
            q: CMat::identity(l, l),
            u: vec![C64::new(0.0, 0.0); m],
            y_hat: y.clone(),
            s,
            lambda: CMat::zeros(m + l, m + l),
            tau,
            rho,
        })
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn t(&self) -> CMat {
        toeplitz_from_column(&self.u)
    }

    /// `[[T(u), Ŷ], [Ŷᴴ, Q]]`.
    pub fn block(&self) -> CMat {
        AugmentedBlock::from_blocks(&self.t(), &self.y_hat, &self.q).expect("consistent blocks").into_matrix()
    }

    pub fn objective(&self, y: &CMat) -> f64 {
        let fit = (&self.y_hat - y).norm_squared();
        let tr_t = self.u[0].re * self.m() as f64;
        let tr_q: f64 = self.q.diagonal().iter().map(|v| v.re).sum();
        0.5 * fit + 0.5 * self.tau * (tr_q + tr_t)
    }

    /// Closed-form minimisation over `(Q, u, Ŷ)` given `S` and `Λ`.
    pub fn update_primal(&mut self, y: &CMat) {
        let m = self.m();
        let l = self.q.nrows();
        let w = &self.s + self.lambda.scale(1.0 / self.rho);
        let shift = self.tau / (2.0 * self.rho);

        let w_q = w.view((m, m), (l, l)).into_owned();
        self.q = (&w_q + w_q.adjoint()).scale(0.5) - CMat::identity(l, l).scale(shift);

        let mut u = toeplitz_first_column(&w.view((0, 0), (m, m)).into_owned());
        u[0] -= C64::new(shift, 0.0);
        self.u = u;

        let w_y = w.view((0, m), (m, l)).into_owned();
        let w_yh = w.view((m, 0), (l, m)).adjoint();
        self.y_hat = (y + (w_y + w_yh).scale(self.rho)).scale(1.0 / (1.0 + 2.0 * self.rho));
    }

    /// PSD projection of `B − Λ/ρ`.
    pub fn update_s(&mut self) {
        self.s = project_psd(&(self.block() - self.lambda.scale(1.0 / self.rho)));
    }

    /// Multiplier ascent; returns the constraint residual `‖S − B‖_F`.
    pub fn update_lambda(&mut self) -> f64 {
        let r = &self.s - self.block();
        self.lambda += r.scale(self.rho);
        frobenius(&r)
    }

    /// One full sweep; returns `(primal, dual)` residuals.
    pub fn step(&mut self, y: &CMat) -> (f64, f64) {
        let before = self.block();
        self.update_primal(y);
        self.update_s();
        let primal = self.update_lambda();
        let dual = self.rho * frobenius(&(self.block() - before));
        (primal, dual)
    }
}

/// ADMM on the trace-relaxed problem for the half-wavelength ULA; DOAs come
/// from the decomposition of the final `T(u)`.
pub fn admm_gridless(y: &CMat, k: usize, opts: AdmmOptions) -> Result<SolverReport> {
    let gamma = ula_positions(y.nrows());
    check_problem(y, &gamma, k)?;
    let mut state = AdmmState::new(y, opts.tau, opts.rho)?;
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (primal, dual) = state.step(y);
        iterations += 1;
        residuals.push(primal);
        if !primal.is_finite() || !dual.is_finite() {
            return Err(DoaError::Divergence { iteration: iterations, residual: primal });
        }
        if primal <= opts.tol {
            converged = true;
            break;
        }
    }
    let t_opt = state.t();
    let d = ivd_with(&t_opt, &gamma, k, opts.search)?;
    Ok(SolverReport {
        thetas: d.model.thetas(),
        t_opt,
        iterations,
        converged,
        residual_history: residuals,
        gap_history: Vec::new(),
        shortfall: d.shortfall,
    })
}
