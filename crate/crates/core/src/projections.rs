//! Set projections used by the alternating-projection and ADMM solvers.

use crate::error::{DoaError, Result};
use crate::ivd::{ivd_with, reconstruct};
use crate::linalg::{hermitian_defect, hermitian_eigen, hermitize, weighted_outer, CMat, C64, ZERO};
use crate::spectrum::SearchOptions;
use nalgebra::{DMatrix, DVector};

/// Relative asymmetry tolerated by [`project_psd`] before it warns.
const HERMITIAN_TOL: f64 = 1e-10;

/// The `(M+L)×(M+L)` matrix `[[T, Y], [Yᴴ, Q]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBlock {
    s: CMat,
    m: usize,
}

impl AugmentedBlock {
    pub fn new(s: CMat, m: usize) -> Result<Self> {
        if s.nrows() != s.ncols() || m == 0 || m >= s.nrows() {
            return Err(DoaError::invalid(format!(
                "cannot partition a {}×{} matrix with M={m}",
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(Self { s, m })
    }

    pub fn from_blocks(t: &CMat, y: &CMat, q: &CMat) -> Result<Self> {
        let (m, l) = y.shape();
        if t.shape() != (m, m) || q.shape() != (l, l) {
            return Err(DoaError::invalid("block dimensions are inconsistent"));
        }
        let mut s = CMat::zeros(m + l, m + l);
        s.view_mut((0, 0), (m, m)).copy_from(t);
        s.view_mut((0, m), (m, l)).copy_from(y);
        s.view_mut((m, 0), (l, m)).copy_from(&y.adjoint());
        s.view_mut((m, m), (l, l)).copy_from(q);
        Ok(Self { s, m })
    }

    /// `[[0, Y], [Yᴴ, I]]`.
    pub fn initial(y: &CMat) -> Self {
        let (m, l) = y.shape();
        Self::from_blocks(&CMat::zeros(m, m), y, &CMat::identity(l, l)).expect("consistent blocks")
    }

    pub fn matrix(&self) -> &CMat {
        &self.s
    }

    pub fn into_matrix(self) -> CMat {
        self.s
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.s.nrows() - self.m
    }

    pub fn t_block(&self) -> CMat {
        self.s.view((0, 0), (self.m, self.m)).into_owned()
    }

    pub fn y_block(&self) -> CMat {
        self.s.view((0, self.m), (self.m, self.l())).into_owned()
    }

    pub fn q_block(&self) -> CMat {
        let l = self.l();
        self.s.view((self.m, self.m), (l, l)).into_owned()
    }

    pub(crate) fn set_t_block(&mut self, t: &CMat) {
        self.s.view_mut((0, 0), (self.m, self.m)).copy_from(t);
    }

    pub(crate) fn set_y_blocks(&mut self, y: &CMat) {
        let (m, l) = (self.m, self.l());
        self.s.view_mut((0, m), (m, l)).copy_from(y);
        self.s.view_mut((m, 0), (l, m)).copy_from(&y.adjoint());
    }
}

/// Hermitian Toeplitz matrix with first column `u` (`T[r, c] = u[r − c]`
/// below the diagonal, conjugated above it).
pub fn toeplitz_from_column(u: &[C64]) -> CMat {
    let m = u.len();
    CMat::from_fn(m, m, |r, c| if r >= c { u[r - c] } else { u[c - r].conj() })
}

/// First column of the nearest Hermitian Toeplitz matrix: each subdiagonal
/// `i` is replaced by the mean of its entries and of the conjugated entries
/// of superdiagonal `i`.
pub fn toeplitz_first_column(a: &CMat) -> Vec<C64> {
    let m = a.nrows();
    (0..m)
        .map(|i| {
            let mut acc = ZERO;
            for j in 0..m - i {
                acc += a[(j + i, j)] + a[(j, j + i)].conj();
            }
            acc / (2 * (m - i)) as f64
        })
        .collect()
}

/// Orthogonal projection onto the Hermitian Toeplitz matrices.
pub fn project_toeplitz(a: &CMat) -> CMat {
    toeplitz_from_column(&toeplitz_first_column(a))
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues are zeroed.
pub fn project_psd(a: &CMat) -> CMat {
    let defect = hermitian_defect(a);
    if defect > HERMITIAN_TOL * a.norm().max(f64::MIN_POSITIVE) {
        log::warn!("PSD projection input is not Hermitian (defect {defect:e}); symmetrizing");
    }
    let (values, vectors) = hermitian_eigen(a);
    let clipped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
    let n_pos = clipped.iter().take_while(|&&v| v > 0.0).count();
    if n_pos == 0 {
        return CMat::zeros(a.nrows(), a.ncols());
    }
    // only the positive part contributes
    let v = vectors.columns(0, n_pos).into_owned();
    hermitize(&weighted_outer(&v, &clipped[..n_pos]))
}

/// What to do when the irregular-Toeplitz projection finds fewer than `K`
/// harmonics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShortfallPolicy {
    /// Rebuild from the harmonics that were found (rank below `K`).
    #[default]
    Reconstruct,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionOptions {
    pub search: SearchOptions,
    pub shortfall: ShortfallPolicy,
}

/// Maps `A` into the rank-`K` irregular Toeplitz set for positions `γ` by
/// decomposing it and rebuilding from the harmonics with non-negative
/// powers. The result is a member of the set but not, in general, the
/// Frobenius-nearest one.
pub fn project_irregular_toeplitz(a: &CMat, gamma: &[f64], k: usize, opts: ProjectionOptions) -> Result<CMat> {
    let d = ivd_with(&hermitize(a), gamma, k, opts.search)?;
    if d.shortfall && opts.shortfall == ShortfallPolicy::Error {
        return Err(DoaError::Shortfall { found: d.model.k(), wanted: k });
    }
    if d.model.k() == 0 {
        return Ok(CMat::zeros(a.nrows(), a.ncols()));
    }
    let ah = hermitize(a);
    let out = reconstruct(&d.model.clamped());
    // A projection onto a cone never lengthens its input. Nearly coincident
    // harmonics can make the pseudo-inverse powers explode; refit them.
    if out.norm() <= ah.norm() * (1.0 + 1e-9) {
        return Ok(out);
    }
    let w = d.model.vandermonde();
    let powers = nonnegative_powers(&ah, &w);
    Ok(weighted_outer(&w, &powers))
}

/// Powers `c ≥ 0` minimising `‖A − W·diag(c)·Wᴴ‖_F` (Lawson–Hanson on the
/// normal equations `G c = b`, `G_ij = |w_iᴴw_j|²`, `b_i = Re w_iᴴ A w_i`).
pub fn nonnegative_powers(a: &CMat, w: &CMat) -> Vec<f64> {
    let k = w.ncols();
    let gram = w.adjoint() * w;
    let g = DMatrix::from_fn(k, k, |i, j| gram[(i, j)].norm_sqr());
    let b = DVector::from_fn(k, |i, _| (w.column(i).adjoint() * a * w.column(i))[(0, 0)].re);
    let tol = 1e-12 * g.diagonal().max().max(f64::MIN_POSITIVE) * b.amax().max(1.0);
    let mut c = DVector::<f64>::zeros(k);
    let mut active = vec![false; k];
    for _ in 0..3 * k + 1 {
        let grad = &b - &g * &c;
        let next = (0..k).filter(|&j| !active[j] && grad[j] > tol).max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = next else { break };
        active[j] = true;
        loop {
            let s = solve_active(&g, &b, &active);
            let blocking = (0..k).filter(|&i| active[i] && s[i] <= 0.0);
            let alpha = blocking.map(|i| c[i] / (c[i] - s[i])).fold(f64::INFINITY, f64::min);
            if alpha.is_infinite() {
                c = s;
                break;
            }
            c += (s - &c) * alpha;
            for i in 0..k {
                if active[i] && c[i] <= 1e-15 * c.amax() {
                    active[i] = false;
                    c[i] = 0.0;
                }
            }
            if !active.iter().any(|&x| x) {
                break;
            }
        }
    }
    c.iter().map(|x| x.max(0.0)).collect()
}

fn solve_active(g: &DMatrix<f64>, b: &DVector<f64>, active: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let n = idx.len();
    let sub = DMatrix::from_fn(n, n, |i, j| g[(idx[i], idx[j])]);
    let rhs = DVector::from_fn(n, |i, _| b[idx[i]]);
    let sol = sub
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .unwrap_or_else(|| {
            let svd = sub.svd(true, true);
            let smax = svd.singular_values.max();
            svd.solve(&rhs, 1e-12 * smax).unwrap_or_else(|_| DVector::zeros(n))
        });
    let mut out = DVector::zeros(active.len());
    for (i, &j) in idx.iter().enumerate() {
        out[j] = sol[i];
    }
    out
}

/// Structure imposed on the T-block by [`project_block_set`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    Irregular,
    Toeplitz,
}

/// Projection onto `{[[T, Y], [Yᴴ, Q]] : T structured, Q free}`: the T-block
/// is projected, the off-diagonal blocks are overwritten with `Y`, and `Q` is
/// kept as is.
pub fn project_block_set(
    block: &AugmentedBlock,
    y: &CMat,
    gamma: &[f64],
    k: usize,
    mode: BlockMode,
    opts: ProjectionOptions,
) -> Result<AugmentedBlock> {
    if y.shape() != (block.m(), block.l()) {
        return Err(DoaError::invalid("measurement shape does not match block partition"));
    }
    let t = block.t_block();
    let t_proj = match mode {
        BlockMode::Irregular => project_irregular_toeplitz(&t, gamma, k, opts)?,
        BlockMode::Toeplitz => project_toeplitz(&t),
    };
    let mut out = block.clone();
    out.set_t_block(&t_proj);
    out.set_y_blocks(y);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ivd::HarmonicModel;
    use crate::linalg::{hermitian_eigenvalues, numerical_rank};
    use crate::parallel::seeded_rng;
    use rand::Rng;

    fn random_matrix(n: usize, seed: u64) -> CMat {
        let mut rng = seeded_rng(seed);
        CMat::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn nnls_objective(a: &CMat, w: &CMat, c: &[f64]) -> f64 {
        (a - weighted_outer(w, c)).norm_squared()
    }

    #[test]
    fn nonnegative_powers_match_subset_enumeration() {
        let gamma: Vec<f64> = (0..8).map(|i| i as f64 * 1.1).collect();
        let mut rng = seeded_rng(41);
        for trial in 0..40 {
            let k = 1 + trial % 4;
            let z: Vec<C64> = (0..k).map(|_| C64::from_polar(1.0, rng.random::<f64>() * 6.0 - 3.0)).collect();
            let w = crate::ivd::irregular_vandermonde(&gamma, &z);
            let a = hermitize(&random_matrix(8, 100 + trial as u64));
            let c = nonnegative_powers(&a, &w);
            assert!(c.iter().all(|&x| x >= 0.0));
            // oracle: best unconstrained fit over every support with a feasible solution
            let mut best = nnls_objective(&a, &w, &vec![0.0; k]);
            for mask in 1..(1u32 << k) {
                let idx: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
                let ws = CMat::from_fn(8, idx.len(), |r, c| w[(r, idx[c])]);
                let g = DMatrix::from_fn(idx.len(), idx.len(), |i, j| (ws.column(i).dot(&ws.column(j))).norm_sqr());
                let b = DVector::from_fn(idx.len(), |i, _| (ws.column(i).adjoint() * &a * ws.column(i))[(0, 0)].re);
                let Some(sol) = g.lu().solve(&b) else { continue };
                if sol.iter().all(|&x| x >= 0.0) {
                    best = best.min(nnls_objective(&a, &ws, sol.as_slice()));
                }
            }
            let got = nnls_objective(&a, &w, &c);
            assert!(got <= best + 1e-9 * (1.0 + best), "trial {trial}: {got} vs {best}");
        }
    }

    #[test]
    fn irregular_projection_never_lengthens() {
        let gamma: Vec<f64> = (0..10).map(|i| i as f64).collect();
        for seed in 0..30 {
            let a = hermitize(&random_matrix(10, 500 + seed));
            let p = project_irregular_toeplitz(&a, &gamma, 3, ProjectionOptions::default()).unwrap();
            assert!(p.norm() <= a.norm() * (1.0 + 1e-6));
        }
        // two harmonics straddling the ±π seam make the pseudo-inverse powers blow up
        let z = vec![C64::from_polar(1.0, std::f64::consts::PI - 1e-5), C64::from_polar(1.0, -std::f64::consts::PI + 2e-5)];
        let base = reconstruct(&HarmonicModel::new(z, vec![1.0, 1.0], gamma.clone()).unwrap());
        let a = hermitize(&(base + random_matrix(10, 7) * C64::new(0.3, 0.0)));
        let p = project_irregular_toeplitz(&a, &gamma, 2, ProjectionOptions::default()).unwrap();
        assert!(p.norm() <= a.norm() * (1.0 + 1e-6));
    }

    #[test]
    fn toeplitz_fixed_point_and_idempotent() {
        let u = [C64::new(2.0, 0.0), C64::new(0.5, -1.0), C64::new(-0.3, 0.2)];
        let t = toeplitz_from_column(&u);
        assert!((project_toeplitz(&t) - &t).norm() < 1e-14);
        let a = random_matrix(5, 1);
        let p = project_toeplitz(&a);
        assert!((project_toeplitz(&p) - &p).norm() < 1e-14);
        assert!((&p - p.adjoint()).norm() < 1e-15);
    }

    #[test]
    fn toeplitz_hand_example() {
        let a = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(4.0, 0.0), C64::new(3.0, 0.0)]);
        let u = toeplitz_first_column(&a);
        assert!((u[0] - C64::new(2.0, 0.0)).norm() < 1e-15);
        assert!((u[1] - C64::new(3.0, 0.0)).norm() < 1e-15);
        let p = project_toeplitz(&a);
        let expect = CMat::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(3.0, 0.0), C64::new(3.0, 0.0), C64::new(2.0, 0.0)]);
        assert!((p - expect).norm() < 1e-15);
    }

    #[test]
    fn toeplitz_diagonals_are_means_of_hermitized_input() {
        let a = random_matrix(6, 2);
        let h = hermitize(&a);
        let p = project_toeplitz(&a);
        for i in 0..6usize {
            let mean = (0..6 - i).map(|j| h[(j + i, j)]).sum::<C64>() / (6 - i) as f64;
            for j in 0..6 - i {
                assert!((p[(j + i, j)] - mean).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn psd_examples() {
        assert!((project_psd(&CMat::identity(3, 3)) - CMat::identity(3, 3)).norm() < 1e-14);
        let d = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]));
        let expect = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
        assert!((project_psd(&d) - expect).norm() < 1e-14);
    }

    #[test]
    fn psd_eigenvalues_are_clipped() {
        let h = hermitize(&random_matrix(6, 3));
        let before = hermitian_eigenvalues(&h);
        let after = hermitian_eigenvalues(&project_psd(&h));
        for (a, b) in after.iter().zip(before) {
            assert!((a - b.max(0.0)).abs() < 1e-12);
        }
        let p = project_psd(&h);
        assert!((project_psd(&p) - &p).norm() < 1e-12);
    }

    #[test]
    fn irregular_projection_fixed_point_on_members() {
        let pos = vec![0.0, 0.8, 2.3, 2.7, 4.1, 5.2, 5.9];
        let m = HarmonicModel::from_thetas(&[-0.6, 0.3], vec![1.5, 4.0], pos.clone()).unwrap();
        let t = reconstruct(&m);
        let p = project_irregular_toeplitz(&t, &pos, 2, ProjectionOptions::default()).unwrap();
        assert!((&p - &t).norm() < 1e-6 * t.norm());
    }

    #[test]
    fn irregular_projection_is_rank_bounded() {
        let pos = vec![0.0, 0.8, 2.3, 2.7, 4.1, 5.2, 5.9];
        for seed in 0..10 {
            let a = random_matrix(7, seed);
            let a = &a * a.adjoint();
            for k in 1..4 {
                let p = project_irregular_toeplitz(&a, &pos, k, ProjectionOptions::default()).unwrap();
                assert!(numerical_rank(&p, 1e-8) <= k);
            }
        }
    }

    #[test]
    fn irregular_projection_on_noise_like_projector_k1() {
        let pos = vec![0.0, 1.1, 1.9, 3.2, 3.8];
        let a = random_matrix(5, 7);
        let basis = crate::spectrum::subspace_split(&(&a * a.adjoint()), 2).unwrap();
        let g = crate::spectrum::noise_projector(&basis).matrix().clone();
        let p = project_irregular_toeplitz(&g, &pos, 1, ProjectionOptions::default()).unwrap();
        assert!(numerical_rank(&p, 1e-8) <= 1);
    }

    #[test]
    fn irregular_projection_on_ula_toeplitz_is_identity() {
        let gamma: Vec<f64> = (0..8).map(f64::from).collect();
        let m = HarmonicModel::from_thetas(&[-1.0, 0.2, 0.7], vec![1.0, 2.0, 0.5], gamma.clone()).unwrap();
        let t = reconstruct(&m);
        let p = project_irregular_toeplitz(&t, &gamma, 3, ProjectionOptions::default()).unwrap();
        assert!((&p - &t).norm() < 1e-6 * t.norm());
    }

    #[test]
    fn shortfall_policy() {
        let pos = vec![0.0, 1.0, 2.0];
        let m = HarmonicModel::from_thetas(&[0.3], vec![1.0], pos.clone()).unwrap();
        let t = reconstruct(&m) + CMat::identity(3, 3).scale(1e-3);
        // a two-sensor-like spectrum with K=2 may have a single minimum
        let strict = ProjectionOptions { shortfall: ShortfallPolicy::Error, ..Default::default() };
        let lenient = project_irregular_toeplitz(&t, &pos, 2, ProjectionOptions::default()).unwrap();
        assert!(numerical_rank(&lenient, 1e-8) <= 2);
        if let Err(e) = project_irregular_toeplitz(&t, &pos, 2, strict) {
            assert!(matches!(e, DoaError::Shortfall { .. }));
        }
    }

    #[test]
    fn block_projection_overwrites_y_and_keeps_q() {
        let mut rng = seeded_rng(5);
        let (m, l) = (5, 3);
        let y = CMat::from_fn(m, l, |_, _| C64::new(rng.random(), rng.random()));
        let s = random_matrix(m + l, 8);
        let block = AugmentedBlock::new(s.clone(), m).unwrap();
        let gamma: Vec<f64> = (0..m).map(|i| i as f64).collect();
        for mode in [BlockMode::Toeplitz, BlockMode::Irregular] {
            let out = project_block_set(&block, &y, &gamma, 2, mode, ProjectionOptions::default()).unwrap();
            assert_eq!(out.y_block(), y);
            assert_eq!(out.matrix().view((m, 0), (l, m)).into_owned(), y.adjoint());
            assert_eq!(out.q_block(), block.q_block());
        }
    }

    #[test]
    fn block_projection_fixed_point() {
        let pos = vec![0.0, 0.7, 1.9, 3.3, 3.9, 5.1];
        let model = HarmonicModel::from_thetas(&[-0.4, 0.5], vec![2.0, 1.0], pos.clone()).unwrap();
        let t = reconstruct(&model);
        let w = model.vandermonde();
        let x = CMat::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.5, 0.5), C64::new(-1.0, 0.0)]);
        let y = &w * &x;
        let q = x.adjoint() * &x;
        let block = AugmentedBlock::from_blocks(&t, &y, &q).unwrap();
        let out = project_block_set(&block, &y, &pos, 2, BlockMode::Irregular, ProjectionOptions::default()).unwrap();
        assert!((out.matrix() - block.matrix()).norm() < 1e-6 * block.matrix().norm());
    }

    #[test]
    fn initial_block_layout() {
        let y = CMat::from_element(3, 2, C64::new(1.0, 2.0));
        let b = AugmentedBlock::initial(&y);
        assert_eq!(b.t_block(), CMat::zeros(3, 3));
        assert_eq!(b.q_block(), CMat::identity(2, 2));
        assert_eq!(b.y_block(), y);
        assert!(AugmentedBlock::new(CMat::zeros(4, 4), 4).is_err());
    }
}
