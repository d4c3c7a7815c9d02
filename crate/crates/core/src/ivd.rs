//! Irregular Vandermonde decomposition and the root-MUSIC family.
//!
//! A matrix `T = W(γ, z)·diag(c)·W(γ, z)ᴴ` with unit-modulus harmonics `z`
//! is decomposed by locating the unit-circle minima of the irregular null
//! spectrum of its trailing eigenvectors and then solving for the powers by
//! least squares. For `γ = [0, …, M−1]` this reduces to the classic
//! Vandermonde decomposition of a Toeplitz matrix.

use crate::array_model::{principal_arg, sample_covariance, z_to_theta};
use crate::error::{DoaError, Result};
use crate::linalg::{hermitian_eigenvalues, hermitize, weighted_outer, CMat, C64, ZERO};
use crate::spectrum::{
    noise_projector, null_spectrum_poly, poly_roots, select_music_roots, subspace_split,
    unit_circle_minima, SearchOptions,
};

/// Singular value ratio of `W` below which power estimation is refused.
const CONDITION_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicModel {
    z: Vec<C64>,
    powers: Vec<f64>,
    gamma: Vec<f64>,
}

impl HarmonicModel {
    pub fn new(z: Vec<C64>, powers: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if z.len() != powers.len() {
            return Err(DoaError::invalid(format!("{} harmonics but {} powers", z.len(), powers.len())));
        }
        if gamma.is_empty() {
            return Err(DoaError::invalid("empty position vector"));
        }
        if let Some(bad) = z.iter().find(|z| (z.norm() - 1.0).abs() >= 1e-9) {
            return Err(DoaError::invalid(format!("harmonic {bad} is not on the unit circle")));
        }
        if powers.iter().any(|c| !c.is_finite()) {
            return Err(DoaError::invalid("non-finite power"));
        }
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                if phase_gap(z[i], z[j]) <= 1e-12 {
                    return Err(DoaError::invalid("harmonics must be pairwise distinct"));
                }
            }
        }
        Ok(Self { z, powers, gamma })
    }

    /// Harmonics `exp(−jπ sin θ_k)` for the given angles.
    pub fn from_thetas(thetas: &[f64], powers: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let z = thetas.iter().map(|&t| crate::array_model::theta_to_z(t)).collect();
        Self::new(z, powers, gamma)
    }

    pub fn z(&self) -> &[C64] {
        &self.z
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.z.iter().map(|&z| z_to_theta(z)).collect()
    }

    pub fn vandermonde(&self) -> CMat {
        irregular_vandermonde(&self.gamma, &self.z)
    }

    /// Copy with negative powers set to zero.
    pub fn clamped(&self) -> Self {
        Self { powers: self.powers.iter().map(|c| c.max(0.0)).collect(), ..self.clone() }
    }

    /// `[z₁ z₂]` with powers `[λ·c₁, (1−λ)·c₂]`; reconstructs to
    /// `λ·T₁ + (1−λ)·T₂`. Harmonics shared by both models are not merged.
    pub fn convex_combination(&self, other: &Self, lambda: f64) -> Self {
        let mut z = self.z.clone();
        z.extend_from_slice(&other.z);
        let mut powers: Vec<f64> = self.powers.iter().map(|c| lambda * c).collect();
        powers.extend(other.powers.iter().map(|c| (1.0 - lambda) * c));
        Self { z, powers, gamma: self.gamma.clone() }
    }

    fn sort_by_theta(&mut self) {
        let mut idx: Vec<usize> = (0..self.z.len()).collect();
        // ascending θ is descending phase
        idx.sort_by(|&a, &b| principal_arg(self.z[b]).total_cmp(&principal_arg(self.z[a])));
        self.z = idx.iter().map(|&i| self.z[i]).collect();
        self.powers = idx.iter().map(|&i| self.powers[i]).collect();
    }
}

fn phase_gap(a: C64, b: C64) -> f64 {
    (principal_arg(a * b.conj())).abs()
}

/// `W[m, k] = z_k^(γ_m)` with principal-branch powers.
pub fn irregular_vandermonde(gamma: &[f64], z: &[C64]) -> CMat {
    let logs: Vec<C64> = z.iter().map(|z| z.ln()).collect();
    CMat::from_fn(gamma.len(), z.len(), |m, k| (logs[k] * gamma[m]).exp())
}

/// `W(γ, z)·diag(c)·W(γ, z)ᴴ`.
pub fn reconstruct(model: &HarmonicModel) -> CMat {
    weighted_outer(&model.vandermonde(), &model.powers)
}

/// `diag(W†·T·W†ᴴ)` with `W† = (WᴴW)⁻¹Wᴴ`; imaginary parts are dropped.
pub fn estimate_powers(t: &CMat, w: &CMat) -> Result<Vec<f64>> {
    let k = w.ncols();
    if t.nrows() != w.nrows() || t.ncols() != w.nrows() {
        return Err(DoaError::invalid("matrix and harmonic dimensions disagree"));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let gram = w.adjoint() * w;
    let ev = hermitian_eigenvalues(&gram);
    let ratio = (ev[k - 1].max(0.0) / ev[0]).sqrt();
    if !(ratio > CONDITION_LIMIT) {
        return Err(DoaError::IllConditioned { ratio });
    }
    let chol = hermitize(&gram)
        .cholesky()
        .ok_or(DoaError::IllConditioned { ratio })?;
    let pinv = chol.solve(&w.adjoint());
    Ok(diag_sandwich(&pinv, t))
}

/// Same estimate through an SVD pseudo-inverse that drops directions below
/// the condition limit; used when the harmonics nearly coincide.
fn estimate_powers_truncated(t: &CMat, w: &CMat) -> Vec<f64> {
    let svd = w.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    match svd.pseudo_inverse(CONDITION_LIMIT * smax) {
        Ok(pinv) => diag_sandwich(&pinv, t),
        Err(_) => vec![0.0; w.ncols()],
    }
}

/// `Re diag(X·T·Xᴴ)`.
fn diag_sandwich(x: &CMat, t: &CMat) -> Vec<f64> {
    let xt = x * t;
    (0..x.nrows())
        .map(|k| {
            xt.row(k)
                .iter()
                .zip(x.row(k).iter())
                .fold(ZERO, |acc, (a, b)| acc + a * b.conj())
                .re
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub model: HarmonicModel,
    /// Fewer than the requested harmonics were found.
    pub shortfall: bool,
    /// Powers came from the truncated pseudo-inverse.
    pub ill_conditioned: bool,
}

/// Decomposition that tolerates a shortfall of minima and near-coincident
/// harmonics, reporting both through flags.
pub fn ivd_with(t: &CMat, gamma: &[f64], k: usize, opts: SearchOptions) -> Result<Decomposition> {
    let m = t.nrows();
    if t.ncols() != m || gamma.len() != m {
        return Err(DoaError::invalid(format!(
            "matrix is {}×{} but {} positions were given",
            m,
            t.ncols(),
            gamma.len()
        )));
    }
    if k == 0 || k >= m {
        return Err(DoaError::invalid(format!("need 1 ≤ K < M, got K={k}, M={m}")));
    }
    let th = hermitize(t);
    let basis = subspace_split(&th, k)?;
    let minima = unit_circle_minima(&noise_projector(&basis), gamma, k, opts)?;
    let w = irregular_vandermonde(gamma, &minima.z);
    let (powers, ill_conditioned) = match estimate_powers(&th, &w) {
        Ok(p) => (p, false),
        Err(DoaError::IllConditioned { .. }) => (estimate_powers_truncated(&th, &w), true),
        Err(e) => return Err(e),
    };
    let mut model = HarmonicModel { z: minima.z, powers, gamma: gamma.to_vec() };
    model.sort_by_theta();
    Ok(Decomposition { model, shortfall: minima.shortfall, ill_conditioned })
}

/// Irregular Vandermonde decomposition of `T` into `k` harmonics sorted by
/// ascending angle. Powers are returned unclamped.
pub fn ivd(t: &CMat, gamma: &[f64], k: usize) -> Result<HarmonicModel> {
    let d = ivd_with(t, gamma, k, SearchOptions::default())?;
    if d.shortfall {
        return Err(DoaError::Shortfall { found: d.model.k(), wanted: k });
    }
    if d.ill_conditioned {
        let w = d.model.vandermonde();
        return Err(estimate_powers(&hermitize(t), &w).expect_err("flagged ill-conditioned"));
    }
    Ok(d.model)
}

fn check_snapshots(y: &CMat, k: usize) -> Result<()> {
    if y.ncols() < k {
        return Err(DoaError::invalid(format!(
            "{} snapshots cannot resolve {k} sources (need L ≥ K)",
            y.ncols()
        )));
    }
    Ok(())
}

/// DOAs (radians, ascending) from the IVD of the sample covariance.
pub fn irregular_root_music(y: &CMat, gamma: &[f64], k: usize) -> Result<Vec<f64>> {
    check_snapshots(y, k)?;
    Ok(ivd(&sample_covariance(y), gamma, k)?.thetas())
}

/// Polynomial root-MUSIC for the half-wavelength ULA `[0, …, M−1]`.
pub fn classic_root_music(y: &CMat, k: usize) -> Result<Vec<f64>> {
    check_snapshots(y, k)?;
    let z = music_roots(&sample_covariance(y), k)?;
    let mut thetas: Vec<f64> = z.into_iter().map(z_to_theta).collect();
    thetas.sort_by(f64::total_cmp);
    Ok(thetas)
}

fn music_roots(t: &CMat, k: usize) -> Result<Vec<C64>> {
    let basis = subspace_split(&hermitize(t), k)?;
    let poly = null_spectrum_poly(noise_projector(&basis).matrix());
    select_music_roots(&poly_roots(&poly)?.roots, k)
}

/// Classic Vandermonde decomposition of a Toeplitz matrix on `[0, …, M−1]`
/// through polynomial rooting; the selected roots are normalised onto the
/// unit circle before the powers are fitted.
pub fn root_music_decomposition(t: &CMat, k: usize) -> Result<HarmonicModel> {
    let gamma: Vec<f64> = (0..t.nrows()).map(|i| i as f64).collect();
    let z: Vec<C64> = music_roots(t, k)?.into_iter().map(|z| z / z.norm()).collect();
    let powers = estimate_powers(&hermitize(t), &irregular_vandermonde(&gamma, &z))?;
    let mut model = HarmonicModel::new(z, powers, gamma)?;
    model.sort_by_theta();
    Ok(model)
}
