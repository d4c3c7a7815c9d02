//! Array geometries, steering vectors and the snapshot measurement model.
//!
//! Positions are in half-wavelengths, so a source at angle `θ` (radians from
//! broadside) induces the phase `exp(−jπ·r·sin θ)` at a sensor located at `r`.
//! The harmonic parameter of a source is `z = exp(−jπ sin θ)`; for every
//! geometry the steering vector is `z^r` evaluated with the principal branch.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DoaError, Result};
use crate::linalg::{CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrayKind {
    /// Equally spaced sensors at `alpha·i + beta`.
    Ula { alpha: f64, beta: f64 },
    Nua,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
    kind: ArrayKind,
}

impl ArrayGeometry {
    /// Uniform linear array with positions `alpha·[0, 1, …, m−1] + beta`.
    pub fn ula(m: usize, alpha: f64, beta: f64) -> Result<Self> {
        if m < 2 {
            return Err(DoaError::invalid(format!("array needs at least 2 sensors, got {m}")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) || !beta.is_finite() {
            return Err(DoaError::invalid(format!(
                "ULA spacing must be positive and finite (alpha={alpha}, beta={beta})"
            )));
        }
        let positions = (0..m).map(|i| alpha * i as f64 + beta).collect();
        Ok(Self { positions, kind: ArrayKind::Ula { alpha, beta } })
    }

    /// Half-wavelength ULA at `[0, 1, …, m−1]`.
    pub fn standard_ula(m: usize) -> Result<Self> {
        Self::ula(m, 1.0, 0.0)
    }

    /// Integer grid `[0, …, m−1]` jittered by independent `U[−0.5, 0.5)` offsets.
    /// There is no minimum-spacing constraint between neighbouring sensors.
    pub fn perturbed_nua<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Self> {
        let offsets: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
        Self::perturbed_with_offsets(&offsets)
    }

    /// Deterministic variant of [`perturbed_nua`](Self::perturbed_nua) from a seed.
    pub fn perturbed_nua_seeded(m: usize, seed: u64) -> Result<Self> {
        Self::perturbed_nua(m, &mut crate::parallel::seeded_rng(seed))
    }

    /// Integer grid plus explicit offsets. All-zero offsets give the integer
    /// grid, which is still tagged as a NUA.
    pub fn perturbed_with_offsets(offsets: &[f64]) -> Result<Self> {
        let positions = offsets.iter().enumerate().map(|(i, u)| i as f64 + u).collect();
        Self::nua(positions)
    }

    /// Arbitrary positions, tagged as non-uniform.
    pub fn nua(positions: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(DoaError::invalid(format!(
                "array needs at least 2 sensors, got {}",
                positions.len()
            )));
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(DoaError::invalid(format!("non-finite sensor position {p}")));
        }
        Ok(Self { positions, kind: ArrayKind::Nua })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn kind(&self) -> ArrayKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_ula(&self) -> bool {
        matches!(self.kind, ArrayKind::Ula { .. })
    }

    /// True for the half-wavelength ULA `[0, 1, …, M−1]` required by the
    /// polynomial root-MUSIC and Toeplitz-based solvers.
    pub fn is_standard_ula(&self) -> bool {
        matches!(self.kind, ArrayKind::Ula { alpha, beta } if alpha == 1.0 && beta == 0.0)
    }

    pub fn steering_vector(&self, theta: f64) -> CVec {
        steering_vector(&self.positions, theta)
    }

    pub fn steering_matrix(&self, thetas: &[f64]) -> CMat {
        steering_matrix(&self.positions, thetas)
    }

    /// One position per line, decimal half-wavelengths.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.positions {
            let _ = writeln!(out, "{p}");
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output. Blank lines and `#` comments
    /// are skipped. The result is always tagged as a NUA.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut positions = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let p: f64 = line.parse().map_err(|_| {
                DoaError::invalid(format!("line {}: not a number: {line:?}", lineno + 1))
            })?;
            positions.push(p);
        }
        Self::nua(positions)
    }
}

/// `exp(−jπ·r_i·sin θ)` for every position.
pub fn steering_vector(positions: &[f64], theta: f64) -> CVec {
    let s = theta.sin();
    CVec::from_iterator(positions.len(), positions.iter().map(|&r| C64::cis(-PI * r * s)))
}

/// Column `k` is the steering vector for `thetas[k]`.
pub fn steering_matrix(positions: &[f64], thetas: &[f64]) -> CMat {
    let mut a = CMat::zeros(positions.len(), thetas.len());
    for (k, &theta) in thetas.iter().enumerate() {
        a.set_column(k, &steering_vector(positions, theta));
    }
    a
}

/// `z = exp(−jπ sin θ)`.
pub fn theta_to_z(theta: f64) -> C64 {
    C64::cis(-PI * theta.sin())
}

/// Principal phase in `(−π, π]`.
pub fn principal_arg(z: C64) -> f64 {
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// `θ = −asin(∠z / π)` with `∠z ∈ (−π, π]`; `∠z = π` maps to `−π/2`.
/// Only the phase of `z` is used.
pub fn z_to_theta(z: C64) -> f64 {
    phase_to_theta(principal_arg(z))
}

pub fn phase_to_theta(phase: f64) -> f64 {
    -(phase / PI).clamp(-1.0, 1.0).asin()
}

pub fn theta_to_phase(theta: f64) -> f64 {
    -PI * theta.sin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceScene {
    thetas: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl SourceScene {
    pub fn new(thetas: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(DoaError::invalid("scene needs at least one source"));
        }
        if thetas.len() != amplitudes.len() {
            return Err(DoaError::invalid(format!(
                "{} angles but {} amplitudes",
                thetas.len(),
                amplitudes.len()
            )));
        }
        if let Some(t) = thetas.iter().find(|t| !(t.abs() < FRAC_PI_2)) {
            return Err(DoaError::invalid(format!("angle {t} rad outside (−π/2, π/2)")));
        }
        if let Some(a) = amplitudes.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(DoaError::invalid(format!("amplitude {a} must be positive")));
        }
        Ok(Self { thetas, amplitudes })
    }

    /// Unit-amplitude sources.
    pub fn equal_power(thetas: Vec<f64>) -> Result<Self> {
        let n = thetas.len();
        Self::new(thetas, vec![1.0; n])
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn k(&self) -> usize {
        self.thetas.len()
    }
}

/// How source waveforms relate across snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalModel {
    /// Every entry of the source matrix gets an independent random phase.
    #[default]
    Incoherent,
    /// One source column is drawn and repeated, rotated by a common random
    /// phase per snapshot, so the source matrix has rank one.
    Coherent,
}

#[derive(Debug, Clone)]
pub struct MeasurementSet {
    /// Measured snapshots `Z + N`.
    pub y: CMat,
    /// Noiseless part.
    pub z: CMat,
    pub noise: CMat,
    pub snr_db: f64,
}

impl MeasurementSet {
    pub fn snapshots(&self) -> usize {
        self.y.ncols()
    }
}

/// Draws `Y = A_s·X + N` for the given scene.
///
/// Source entries have uniform phase and modulus `amplitudes[k]`. The noise is
/// circular complex Gaussian with unit variance rescaled so that
/// `10·log10(‖Z‖²/‖N‖²)` equals `snr_db` exactly; an infinite `snr_db` gives
/// noiseless data.
pub fn synthesize<R: Rng + ?Sized>(
    geom: &ArrayGeometry,
    scene: &SourceScene,
    l: usize,
    snr_db: f64,
    signal: SignalModel,
    rng: &mut R,
) -> Result<MeasurementSet> {
    if l < 1 {
        return Err(DoaError::invalid("need at least one snapshot"));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(DoaError::invalid(format!("unsupported SNR {snr_db} dB")));
    }
    let k = scene.k();
    let mut x = CMat::zeros(k, l);
    match signal {
        SignalModel::Incoherent => {
            for j in 0..l {
                for i in 0..k {
                    let phase = rng.random::<f64>() * 2.0 * PI;
                    x[(i, j)] = C64::from_polar(scene.amplitudes[i], phase);
                }
            }
        }
        SignalModel::Coherent => {
            let base: Vec<C64> = scene
                .amplitudes
                .iter()
                .map(|&a| C64::from_polar(a, rng.random::<f64>() * 2.0 * PI))
                .collect();
            for j in 0..l {
                let rot = C64::cis(rng.random::<f64>() * 2.0 * PI);
                for i in 0..k {
                    x[(i, j)] = base[i] * rot;
                }
            }
        }
    }
    let z = geom.steering_matrix(&scene.thetas) * x;
    let m = geom.len();
    let noise = if snr_db.is_infinite() {
        CMat::zeros(m, l)
    } else {
        let raw = CMat::from_fn(m, l, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        });
        let target = z.norm() / 10f64.powf(snr_db / 20.0);
        raw.scale(target / raw.norm())
    };
    Ok(MeasurementSet { y: &z + &noise, z, noise, snr_db })
}

/// `(1/L)·Y·Yᴴ`.
pub fn sample_covariance(y: &CMat) -> CMat {
    let l = y.ncols().max(1) as f64;
    (y * y.adjoint()).unscale(l)
}

/// `10·log10(‖Z‖²/‖N‖²)`; `+∞` when the noise is zero.
pub fn snr_of(z: &CMat, noise: &CMat) -> f64 {
    let n2 = noise.norm_squared();
    if n2 == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (z.norm_squared() / n2).log10()
}
