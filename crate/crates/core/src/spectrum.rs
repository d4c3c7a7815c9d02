//! Noise subspaces, null spectra and their minima.
//!
//! For a ULA the null spectrum `D(z) = v(z)ᴴ·G·v(z)` is a Laurent polynomial
//! whose coefficients are the diagonal sums of the noise projector `G`; it is
//! rooted through a companion matrix. For arbitrary positions `γ` the
//! irregular null spectrum `D̃(z) = Σ g_mn·z^(γ_n − γ_m)` is not a polynomial,
//! so its minima are located on the unit circle by a grid scan followed by
//! golden-section refinement.

use std::f64::consts::PI;

use crate::array_model::principal_arg;
use crate::error::{DoaError, Result};
use crate::linalg::{hermitian_eigen, CMat, C64, ZERO};

/// Eigenvalue gap below which the signal/noise split is flagged as degenerate.
const DEGENERATE_GAP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// Signal eigenvectors, `M × K`.
    pub signal: CMat,
    /// Noise eigenvectors, `M × (M − K)`.
    pub noise: CMat,
    /// Descending.
    pub signal_values: Vec<f64>,
    /// Descending.
    pub noise_values: Vec<f64>,
    /// Set when the K-th and (K+1)-th eigenvalues coincide.
    pub degenerate: bool,
}

/// Splits a Hermitian matrix into its top-`k` and remaining eigenvectors.
pub fn subspace_split(r: &CMat, k: usize) -> Result<SubspaceBasis> {
    let m = r.nrows();
    if r.ncols() != m {
        return Err(DoaError::invalid("covariance must be square"));
    }
    if k == 0 || k >= m {
        return Err(DoaError::invalid(format!("need 1 ≤ K < M, got K={k}, M={m}")));
    }
    let (values, vectors) = hermitian_eigen(r);
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let degenerate = (values[k - 1] - values[k]).abs() <= DEGENERATE_GAP * scale;
    if degenerate {
        log::warn!("degenerate subspace split: λ_K={} λ_K+1={}", values[k - 1], values[k]);
    }
    Ok(SubspaceBasis {
        signal: vectors.columns(0, k).into_owned(),
        noise: vectors.columns(k, m - k).into_owned(),
        signal_values: values[..k].to_vec(),
        noise_values: values[k..].to_vec(),
        degenerate,
    })
}

/// `G = F·Fᴴ`, kept together with the factor `F` so that unit-circle values
/// can be computed as `‖Fᴴ·w‖²` without cancellation.
#[derive(Debug, Clone)]
pub struct NoiseProjector {
    g: CMat,
    factor: CMat,
    /// Orthonormal `U` with `G = I − U·Uᴴ`, when known.
    complement: Option<CMat>,
}

impl NoiseProjector {
    pub fn from_basis(basis: &SubspaceBasis) -> Self {
        let mut p = Self::from_factor(basis.noise.clone());
        p.complement = Some(basis.signal.clone());
        p
    }

    pub fn from_factor(factor: CMat) -> Self {
        let g = &factor * factor.adjoint();
        Self { g, factor, complement: None }
    }

    /// Wraps an arbitrary Hermitian matrix. The factor keeps only the
    /// non-negative part of the spectrum, so unit-circle searches assume PSD.
    pub fn from_matrix(g: CMat) -> Self {
        let (values, vectors) = hermitian_eigen(&g);
        let top = values.first().copied().unwrap_or(0.0).max(0.0);
        let keep: Vec<usize> =
            (0..values.len()).filter(|&i| values[i] > 1e-13 * top.max(f64::MIN_POSITIVE)).collect();
        let mut factor = CMat::zeros(g.nrows(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            factor.set_column(c, &vectors.column(i).scale(values[i].sqrt()));
        }
        Self { g, factor, complement: None }
    }

    pub fn matrix(&self) -> &CMat {
        &self.g
    }

    pub fn factor(&self) -> &CMat {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

/// `G = U_N·U_Nᴴ`.
pub fn noise_projector(basis: &SubspaceBasis) -> NoiseProjector {
    NoiseProjector::from_basis(basis)
}

/// Laurent coefficients `d_i`, `i = −(M−1)…(M−1)`, with
/// `d_i = Σ_{m1 − m2 = i} G[m1, m2]` and `D(z) = Σ d_i·z^(−i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpectrumPoly {
    coeffs: Vec<C64>,
}

impl NullSpectrumPoly {
    /// `M − 1`.
    pub fn order(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    pub fn coeff(&self, i: isize) -> C64 {
        let idx = i + self.order() as isize;
        self.coeffs[idx as usize]
    }

    /// Coefficients ordered from `d_{−(M−1)}` to `d_{M−1}`.
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// `Σ d_i·z^(−i)`; equals `v(z)ᴴ·G·v(z)` on the unit circle.
    pub fn eval(&self, z: C64) -> C64 {
        let n = self.order() as i32;
        let poly = self.ascending().iter().rev().fold(ZERO, |acc, &c| acc * z + c);
        poly * z.powi(-n)
    }

    /// Polynomial `z^(M−1)·D(z)` as ascending coefficients `c_p` of `z^p`.
    pub fn ascending(&self) -> Vec<C64> {
        let n = self.order() as isize;
        (0..=2 * n).map(|p| self.coeff(n - p)).collect()
    }
}

pub fn null_spectrum_poly(g: &CMat) -> NullSpectrumPoly {
    let m = g.nrows();
    let mut coeffs = vec![ZERO; 2 * m - 1];
    for r in 0..m {
        for c in 0..m {
            coeffs[r + m - 1 - c] += g[(r, c)];
        }
    }
    NullSpectrumPoly { coeffs }
}

#[derive(Debug, Clone)]
pub struct PolyRoots {
    pub roots: Vec<C64>,
    /// Number of leading coefficients dropped as numerically zero.
    pub deflated: usize,
}

/// All roots of `z^(M−1)·D(z)` from the eigenvalues of its companion matrix.
pub fn poly_roots(p: &NullSpectrumPoly) -> Result<PolyRoots> {
    let mut c = p.ascending();
    let scale = c.iter().fold(0.0f64, |a, x| a.max(x.norm()));
    if scale == 0.0 {
        return Err(DoaError::invalid("null spectrum polynomial is identically zero"));
    }
    let mut deflated = 0;
    while c.len() > 1 && c.last().unwrap().norm() < 1e-14 * scale {
        c.pop();
        deflated += 1;
    }
    if deflated > 0 {
        log::warn!("null spectrum leading coefficient vanished; deflated degree by {deflated}");
    }
    Ok(PolyRoots { roots: companion_roots(&c), deflated })
}

/// Roots of `Σ c_p z^p` (ascending, non-zero leading coefficient).
pub(crate) fn companion_roots(c: &[C64]) -> Vec<C64> {
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = c[n];
    let mut comp = CMat::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -c[n - 1 - j] / lead;
    }
    for i in 1..n {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    balance(&mut comp);
    let t = comp.schur().unpack().1;
    (0..n).map(|i| t[(i, i)]).collect()
}

/// Diagonal similarity scaling by powers of two that equalises row and column
/// norms before the eigenvalue solve.
fn balance(a: &mut CMat) {
    let n = a.nrows();
    let radix = 2.0f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut col = 0.0;
            let mut row = 0.0;
            for j in 0..n {
                if j != i {
                    col += a[(j, i)].norm();
                    row += a[(i, j)].norm();
                }
            }
            if col == 0.0 || row == 0.0 {
                continue;
            }
            let s = col + row;
            let mut f = 1.0;
            let mut c = col;
            let mut r = row;
            while c < r / radix {
                c *= radix;
                r /= radix;
                f *= radix;
            }
            while c >= r * radix {
                c /= radix;
                r *= radix;
                f /= radix;
            }
            if (c + r) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Root-MUSIC selection: the `k` roots inside or on the unit circle with the
/// largest modulus (ties: smaller `|∠z|`).
///
/// Each root is first reflected to `1/z̄` when it lies outside the circle.
/// Because the root set is closed under that reflection every inside root then
/// appears twice, and the copies (matched within `1e−6`) are merged. This also
/// keeps both halves of a numerically split double root on the circle from
/// being picked as two estimates.
pub fn select_music_roots(roots: &[C64], k: usize) -> Result<Vec<C64>> {
    const MATCH_TOL: f64 = 1e-6;
    let mut reps: Vec<C64> = roots
        .iter()
        .filter(|z| z.norm() > 0.0 && z.is_finite())
        .map(|&z| if z.norm() > 1.0 { z.conj().inv() } else { z })
        .collect();
    reps.sort_by(|a, b| {
        b.norm()
            .total_cmp(&a.norm())
            .then(principal_arg(*a).abs().total_cmp(&principal_arg(*b).abs()))
    });
    let mut picked: Vec<C64> = Vec::with_capacity(k);
    let mut used = vec![false; reps.len()];
    for i in 0..reps.len() {
        if used[i] {
            continue;
        }
        // consume the mirrored copy of this root
        if let Some(j) = (i + 1..reps.len()).find(|&j| !used[j] && (reps[j] - reps[i]).norm() < MATCH_TOL) {
            used[j] = true;
        }
        used[i] = true;
        picked.push(reps[i]);
        if picked.len() == k {
            return Ok(picked);
        }
    }
    Err(DoaError::EstimationFailure { found: picked.len(), wanted: k })
}

/// `Σ_{m,n} g_mn·z^(γ_n − γ_m)` with principal-branch powers, i.e.
/// `w(γ, 1/z)ᵀ·G·w(γ, z)`. Real and non-negative on `|z| = 1` for PSD `G`.
pub fn irregular_null_spectrum(g: &CMat, gamma: &[f64], z: C64) -> Result<C64> {
    if z == ZERO || !z.is_finite() {
        return Err(DoaError::invalid("irregular null spectrum undefined at z = 0"));
    }
    let m = g.nrows();
    if gamma.len() != m {
        return Err(DoaError::invalid("position count does not match projector size"));
    }
    let log_z = z.ln();
    let pow: Vec<C64> = gamma.iter().map(|&gm| (log_z * gm).exp()).collect();
    let mut acc = ZERO;
    for r in 0..m {
        let inv = pow[r].inv();
        for c in 0..m {
            acc += g[(r, c)] * pow[c] * inv;
        }
    }
    Ok(acc)
}

/// Rows of `Aᴴ`, row-major.
fn adjoint_rows(a: &CMat) -> Vec<C64> {
    let mut rows = Vec::with_capacity(a.len());
    for n in 0..a.ncols() {
        rows.extend(a.column(n).iter().map(|v| v.conj()));
    }
    rows
}

fn sum_abs2(rows: &[C64], w: &[C64]) -> f64 {
    rows.chunks_exact(w.len())
        .map(|row| row.iter().zip(w).fold(ZERO, |acc, (a, b)| acc + a * b).norm_sqr())
        .sum()
}

/// Unit-circle evaluator `φ ↦ ‖Fᴴ·w(γ, e^{jφ})‖²`.
///
/// When the projector is `I − U·Uᴴ` with `U` narrower than `F`, a cheaper
/// form `‖w‖² − ‖Uᴴ·w‖²` is available for scanning. It loses accuracy near
/// the zeros, so refinement finishes on the factored form.
#[derive(Debug, Clone)]
pub struct CircleSpectrum {
    fh: Vec<C64>,
    uh: Option<Vec<C64>>,
    gamma: Vec<f64>,
    /// Upper bound on `‖G‖₂`.
    g_norm: f64,
}

impl CircleSpectrum {
    pub fn new(projector: &NoiseProjector, gamma: &[f64]) -> Result<Self> {
        let f = projector.factor();
        if gamma.len() != f.nrows() {
            return Err(DoaError::invalid("position count does not match projector size"));
        }
        let uh = projector.complement.as_ref().filter(|u| u.ncols() < f.ncols()).map(adjoint_rows);
        let g_norm = if projector.complement.is_some() { 1.0 } else { f.norm_squared() };
        Ok(Self { fh: adjoint_rows(f), uh, gamma: gamma.to_vec(), g_norm })
    }

    fn steering(&self, phase: f64) -> Vec<C64> {
        self.gamma.iter().map(|&g| C64::cis(phase * g)).collect()
    }

    /// `D̃(e^{jφ})`.
    pub fn eval(&self, phase: f64) -> f64 {
        sum_abs2(&self.fh, &self.steering(phase))
    }

    fn eval_fast_steering(&self, w: &[C64]) -> f64 {
        match &self.uh {
            Some(uh) => w.iter().map(|v| v.norm_sqr()).sum::<f64>() - sum_abs2(uh, w),
            None => sum_abs2(&self.fh, w),
        }
    }

    fn eval_fast(&self, phase: f64) -> f64 {
        self.eval_fast_steering(&self.steering(phase))
    }

    /// Absolute error bound of the fast form.
    fn fast_error(&self) -> f64 {
        if self.uh.is_some() {
            1e-12 * self.gamma.len() as f64
        } else {
            0.0
        }
    }

    /// Bound on `|dD̃/dφ|`: `2‖G‖₂·‖w‖·‖(γ − γ̄)∘w‖`, using that `D̃` does not
    /// change under a common shift of the positions.
    fn slope_bound(&self) -> f64 {
        let m = self.gamma.len() as f64;
        let mean = self.gamma.iter().sum::<f64>() / m;
        let spread = self.gamma.iter().map(|g| (g - mean).powi(2)).sum::<f64>().sqrt();
        2.0 * self.g_norm * m.sqrt() * spread
    }

    /// Values on `n` evenly spaced phases `−π + 2π(i+1)/n`, `i = 0…n−1`.
    pub fn grid(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let phases = grid_phases(n);
        let values = phases.iter().map(|&p| self.eval(p)).collect();
        (phases, values)
    }

    /// Fast-form grid, stepping the steering vector by a fixed rotation.
    fn grid_fast(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let phases = grid_phases(n);
        let rot = self.steering(2.0 * PI / n as f64);
        let mut w = self.steering(phases[0]);
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                w.iter_mut().zip(&rot).for_each(|(a, r)| *a *= r);
            }
            values.push(self.eval_fast_steering(&w));
        }
        (phases, values)
    }
}

fn grid_phases(n: usize) -> Vec<f64> {
    let step = 2.0 * PI / n as f64;
    (0..n).map(|i| -PI + step * (i + 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Grid points per sensor.
    pub grid_mult: usize,
    /// Golden-section bracket width at termination, radians.
    pub tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { grid_mult: 10, tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct CircleMinima {
    /// Unit-modulus arguments of the smallest local minima, by increasing value.
    pub z: Vec<C64>,
    pub phases: Vec<f64>,
    pub values: Vec<f64>,
    /// Fewer than the requested number of local minima exist.
    pub shortfall: bool,
}

/// Bracket width at which refinement switches to the accurate form.
const FAST_WIDTH: f64 = 1e-5;

/// Locates the `k` smallest local minima of `D̃` on the unit circle.
///
/// The phase interval `[−π, π]` is scanned without wrap-around since `D̃` is
/// generally discontinuous at `∠z = π`. A grid point is a minimum when it is
/// below both neighbours; runs of equal values take the leftmost index, and
/// the two ends count when they lie below their single neighbour. Each
/// bracket is refined by golden-section search.
///
/// Refinement runs in two stages. All brackets are narrowed to `1e-5` rad,
/// and only those whose value could still rank among the `k` smallest (by
/// a slope bound on `D̃`) are taken down to `tol`. The result matches
/// refining every bracket fully.
pub fn unit_circle_minima(
    projector: &NoiseProjector,
    gamma: &[f64],
    k: usize,
    opts: SearchOptions,
) -> Result<CircleMinima> {
    if k == 0 {
        return Err(DoaError::invalid("need at least one minimum"));
    }
    let spec = CircleSpectrum::new(projector, gamma)?;
    let n = (opts.grid_mult * gamma.len()).max(3);
    let (phases, values) = spec.grid_fast(n);
    let brackets = grid_brackets(&phases, &values);

    let coarse_tol = opts.tol.max(FAST_WIDTH);
    let searches: Vec<GoldenSection> = brackets
        .iter()
        .map(|&(lo, hi, _)| {
            let mut g = GoldenSection::new(|p| spec.eval_fast(p), lo, hi);
            g.run(|p| spec.eval_fast(p), coarse_tol);
            g
        })
        .collect();

    let err = spec.fast_error();
    let slope = spec.slope_bound();
    let mut current: Vec<f64> = searches.iter().map(|g| g.best().1).collect();
    current.sort_by(f64::total_cmp);
    let threshold = current.get(k - 1).map_or(f64::INFINITY, |v| v + err);
    let mut pending: Vec<bool> = searches
        .iter()
        .map(|g| g.best().1 - err - slope * g.width() <= threshold)
        .collect();

    let finish = |g: &GoldenSection, idx: usize| -> (f64, f64) {
        let mut g = g.clone();
        g.reevaluate(|p| spec.eval(p));
        g.run(|p| spec.eval(p), opts.tol);
        let (x, fx) = g.best();
        let grid_value = spec.eval(phases[idx]);
        if fx <= grid_value {
            (x, fx)
        } else {
            (phases[idx], grid_value)
        }
    };

    loop {
        let found: Vec<(f64, f64)> = searches
            .iter()
            .zip(&brackets)
            .zip(&pending)
            .filter(|(_, &p)| p)
            .map(|((g, b), _)| finish(g, b.2))
            .collect();
        let picked = pick_distinct(found, k);
        if picked.len() < k && pending.iter().any(|p| !p) {
            // a duplicate was dropped; fall back to refining everything
            pending.iter_mut().for_each(|p| *p = true);
            continue;
        }
        let shortfall = picked.len() < k;
        return Ok(CircleMinima {
            z: picked.iter().map(|&(p, _)| C64::cis(p)).collect(),
            phases: picked.iter().map(|&(p, _)| p).collect(),
            values: picked.iter().map(|&(_, v)| v).collect(),
            shortfall,
        });
    }
}

/// The `k` smallest minima, skipping points that coincide on the circle.
fn pick_distinct(mut found: Vec<(f64, f64)>, k: usize) -> Vec<(f64, f64)> {
    found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(k);
    for (p, v) in found {
        let z = C64::cis(p);
        if out.iter().any(|&(q, _)| (C64::cis(q) - z).norm() < 1e-9) {
            continue;
        }
        out.push((p, v));
        if out.len() == k {
            break;
        }
    }
    out
}

/// `(lo, hi, grid index)` for every discrete local minimum.
fn grid_brackets(phases: &[f64], values: &[f64]) -> Vec<(f64, f64, usize)> {
    let n = values.len();
    let fmax = values.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let eq = |a: f64, b: f64| (a - b).abs() <= 1e-14 * fmax;
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        // extent of the plateau starting at i
        let mut j = i;
        while j + 1 < n && eq(values[j + 1], values[i]) {
            j += 1;
        }
        let left_higher = i == 0 || values[i - 1] > values[i];
        let right_higher = j + 1 == n || values[j + 1] > values[i];
        let is_edge_only = i == 0 && j + 1 == n;
        if left_higher && right_higher && !is_edge_only {
            let lo = if i == 0 { -PI } else { phases[i - 1] };
            let hi = if j + 1 == n { PI } else { phases[j + 1] };
            out.push((lo, hi, i));
        }
        i = j + 1;
    }
    out
}

/// Resumable golden-section search state on `[a, b]` with interior probes
/// `c < d`.
#[derive(Debug, Clone)]
struct GoldenSection {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    fc: f64,
    fd: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

impl GoldenSection {
    fn new<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Self {
        let c = b - INV_PHI * (b - a);
        let d = a + INV_PHI * (b - a);
        Self { a, b, c, d, fc: f(c), fd: f(d) }
    }

    fn width(&self) -> f64 {
        (self.b - self.a).abs()
    }

    fn reevaluate<F: Fn(f64) -> f64>(&mut self, f: F) {
        self.fc = f(self.c);
        self.fd = f(self.d);
    }

    fn run<F: Fn(f64) -> f64>(&mut self, f: F, tol: f64) {
        while self.width() > tol && self.c != self.d {
            if self.fc < self.fd {
                self.b = self.d;
                self.d = self.c;
                self.fd = self.fc;
                self.c = self.b - INV_PHI * (self.b - self.a);
                self.fc = f(self.c);
            } else {
                self.a = self.c;
                self.c = self.d;
                self.fc = self.fd;
                self.d = self.a + INV_PHI * (self.b - self.a);
                self.fd = f(self.d);
            }
        }
    }

    fn best(&self) -> (f64, f64) {
        if self.fc < self.fd {
            (self.c, self.fc)
        } else {
            (self.d, self.fd)
        }
    }
}

/// Golden-section minimisation on `[a, b]` until the bracket is narrower
/// than `tol`. Returns the best point seen.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    let mut g = GoldenSection::new(&f, a, b);
    g.run(&f, tol);
    g.best()
}

/// `n` samples of `(phase, D̃)` over `(−π, π]` for plotting.
pub fn spectrum_samples(projector: &NoiseProjector, gamma: &[f64], n: usize) -> Result<Vec<(f64, f64)>> {
    let spec = CircleSpectrum::new(projector, gamma)?;
    let (p, v) = spec.grid(n);
    Ok(p.into_iter().zip(v).collect())
}
