//! Monte-Carlo experiment harness: random scenes, solver dispatch, RMSE with
//! optimal pairing and a capped per-DOA error, and CSV output.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::array_model::{sample_covariance, synthesize, ArrayGeometry, MeasurementSet, SignalModel, SourceScene};
use crate::error::{DoaError, Result};
use crate::ivd::{classic_root_music, irregular_root_music};
use crate::parallel::{derive_seed, map_indexed, seeded_rng, Execution};
use crate::solvers::{admm_gridless, ap_gridless, ap_ula, default_max_iter, AdmmOptions, ApOptions, SolverReport};
use crate::spectrum::{noise_projector, spectrum_samples, subspace_split};

/// Per-DOA squared error cap, deg².
pub const MSE_CAP_DEG2: f64 = 100.0;

/// First line of every results file.
pub const RESULTS_HEADER: &str = "# gridless-doa results v1";

/// Points in the Bartlett beamformer scan over `[−90°, 90°]`.
pub const CBF_GRID: usize = 1801;

const SCENE_ATTEMPTS: usize = 10_000;

/// An SNR or sweep value; `"inf"` in JSON means noiseless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level(pub f64);

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Level(v)),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "noiseless" => Ok(Level(f64::INFINITY)),
                other => other
                    .parse::<f64>()
                    .map(Level)
                    .map_err(|_| serde::de::Error::custom(format!("not a number: {t:?}"))),
            },
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Ula,
    Nua,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverSpec {
    ApGridless,
    ApUla,
    Admm { tau: f64, rho: f64 },
    RootMusic,
    IrregularRootMusic,
    Cbf,
}

impl SolverSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SolverSpec::ApGridless => "ap_gridless",
            SolverSpec::ApUla => "ap_ula",
            SolverSpec::Admm { .. } => "admm",
            SolverSpec::RootMusic => "root_music",
            SolverSpec::IrregularRootMusic => "irregular_root_music",
            SolverSpec::Cbf => "cbf",
        }
    }

    /// Solvers that only accept the half-wavelength ULA `[0, …, M−1]`.
    pub fn needs_standard_ula(&self) -> bool {
        matches!(self, SolverSpec::ApUla | SolverSpec::Admm { .. } | SolverSpec::RootMusic)
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "ap_gridless" => SolverSpec::ApGridless,
            "ap_ula" => SolverSpec::ApUla,
            "admm" => SolverSpec::Admm { tau: 0.01, rho: 1.0 },
            "root_music" => SolverSpec::RootMusic,
            "irregular_root_music" => SolverSpec::IrregularRootMusic,
            "cbf" => SolverSpec::Cbf,
            other => return Err(DoaError::Config(format!("unknown solver {other:?}"))),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AdmmParams {
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default = "default_rho")]
    rho: f64,
}

fn default_tau() -> f64 {
    0.01
}

fn default_rho() -> f64 {
    1.0
}

impl Serialize for SolverSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wrapped {
            admm: AdmmParams,
        }
        match *self {
            SolverSpec::Admm { tau, rho } => Wrapped { admm: AdmmParams { tau, rho } }.serialize(s),
            other => s.serialize_str(other.name()),
        }
    }
}

impl<'de> Deserialize<'de> for SolverSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Admm { admm: AdmmParams },
        }
        match Raw::deserialize(d)? {
            Raw::Name(n) => SolverSpec::from_name(&n).map_err(serde::de::Error::custom),
            Raw::Admm { admm } => Ok(SolverSpec::Admm { tau: admm.tau, rho: admm.rho }),
        }
    }
}

/// Quantity varied across the rows of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    SnrDb,
    M,
    L,
    /// Two equal sources at `±value` degrees.
    SymmetricDeg,
}

impl SweepVar {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::SnrDb => "snr_db",
            SweepVar::M => "m",
            SweepVar::L => "l",
            SweepVar::SymmetricDeg => "symmetric_deg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<Level>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SnrSetting {
    One(Level),
    Many(Vec<Level>),
}

/// Fixed source layout used instead of random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixedScene {
    /// Two equal-amplitude sources at `±symmetric_deg`.
    Symmetric { symmetric_deg: f64 },
    Explicit {
        thetas_deg: Vec<f64>,
        #[serde(default)]
        amplitudes: Option<Vec<f64>>,
    },
}

fn default_sigma_s() -> f64 {
    5.0
}

fn default_snr() -> SnrSetting {
    SnrSetting::One(Level(f64::INFINITY))
}

/// JSON experiment description; see the README for the field reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryKind,
    pub m: usize,
    pub k: usize,
    pub l: usize,
    #[serde(default = "default_snr")]
    pub snr_db: SnrSetting,
    /// Amplitudes are `sigma_s^x` with `x ~ U(0, 1)`.
    #[serde(default = "default_sigma_s")]
    pub sigma_s: f64,
    pub n_trials: usize,
    pub solvers: Vec<SolverSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Minimum source gap in normalised units (`[0, 1)` maps onto
    /// `[−90°, 90°)`); defaults to `1/M`.
    #[serde(default)]
    pub separation_min: Option<f64>,
    #[serde(default)]
    pub signal: SignalModel,
    /// Draw one NUA for the whole experiment instead of one per trial.
    #[serde(default)]
    pub freeze_geometry: bool,
    /// Sensor positions file (one value per line); implies a NUA.
    #[serde(default)]
    pub geometry_file: Option<PathBuf>,
    #[serde(default)]
    pub scene: Option<FixedScene>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

/// One row of the sweep with every setting resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub var: SweepVar,
    pub value: f64,
    pub m: usize,
    pub l: usize,
    pub snr_db: f64,
    pub symmetric_deg: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DoaError::Config(e.to_string()))
    }

    /// Reads and validates a config file. A relative `geometry_file` is
    /// resolved against the config's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DoaError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(file), Some(dir)) = (&cfg.geometry_file, path.parent()) {
            if file.is_relative() {
                cfg.geometry_file = Some(dir.join(file));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter.unwrap_or_else(|| default_max_iter(self.k))
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let fixed_symmetric = match self.scene {
            Some(FixedScene::Symmetric { symmetric_deg }) => Some(symmetric_deg),
            _ => None,
        };
        let base_snr = match &self.snr_db {
            SnrSetting::One(v) => v.0,
            SnrSetting::Many(v) => v.first().map_or(f64::INFINITY, |x| x.0),
        };
        let base = SweepPoint {
            var: SweepVar::SnrDb,
            value: base_snr,
            m: self.m,
            l: self.l,
            snr_db: base_snr,
            symmetric_deg: fixed_symmetric,
        };
        let (var, values): (SweepVar, Vec<f64>) = match (&self.sweep, &self.snr_db) {
            (Some(s), _) => (s.var, s.values.iter().map(|v| v.0).collect()),
            (None, SnrSetting::Many(v)) => (SweepVar::SnrDb, v.iter().map(|x| x.0).collect()),
            (None, SnrSetting::One(v)) => (SweepVar::SnrDb, vec![v.0]),
        };
        values
            .into_iter()
            .map(|value| {
                let mut p = SweepPoint { var, value, ..base };
                match var {
                    SweepVar::SnrDb => p.snr_db = value,
                    SweepVar::M => p.m = value as usize,
                    SweepVar::L => p.l = value as usize,
                    SweepVar::SymmetricDeg => p.symmetric_deg = Some(value),
                }
                p
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DoaError::Config(msg));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if self.solvers.is_empty() {
            return bad("no solvers selected".into());
        }
        if !(self.sigma_s > 0.0 && self.sigma_s.is_finite()) {
            return bad(format!("sigma_s must be positive, got {}", self.sigma_s));
        }
        if let SnrSetting::Many(v) = &self.snr_db {
            if v.is_empty() {
                return bad("snr_db list is empty".into());
            }
            if self.sweep.is_some() {
                return bad("give either an snr_db list or a sweep, not both".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep has no values".into());
            }
            for v in &s.values {
                let ok = match s.var {
                    SweepVar::SnrDb => !v.0.is_nan() && v.0 != f64::NEG_INFINITY,
                    SweepVar::M | SweepVar::L => v.0.is_finite() && v.0 >= 1.0 && v.0.fract() == 0.0,
                    SweepVar::SymmetricDeg => v.0.is_finite() && v.0 > 0.0 && v.0 < 90.0,
                };
                if !ok {
                    return bad(format!("invalid {} sweep value {v}", s.var.name()));
                }
            }
        }
        let uniform = self.geometry == GeometryKind::Ula && self.geometry_file.is_none();
        if let Some(s) = self.solvers.iter().find(|s| s.needs_standard_ula()) {
            if !uniform {
                return bad(format!("solver {} requires ULA geometry", s.name()));
            }
        }
        for s in &self.solvers {
            if let SolverSpec::Admm { tau, rho } = s {
                if !(*tau > 0.0 && *rho > 0.0) {
                    return bad(format!("admm needs tau, rho > 0 (got {tau}, {rho})"));
                }
            }
        }
        if self.max_iter == Some(0) {
            return bad("max_iter must be positive".into());
        }
        if let Some(sep) = self.separation_min {
            if !(sep >= 0.0 && sep.is_finite()) {
                return bad(format!("separation_min must be non-negative, got {sep}"));
            }
        }
        let geometry_m = match &self.geometry_file {
            Some(path) => Some(load_geometry(path)?.len()),
            None => None,
        };
        for p in self.points() {
            let m = geometry_m.unwrap_or(p.m);
            if geometry_m.is_some() && self.sweep.as_ref().is_some_and(|s| s.var == SweepVar::M) {
                return bad("cannot sweep M with a geometry file".into());
            }
            let k = if p.symmetric_deg.is_some() { 2 } else { self.k };
            if k == 0 || k >= m {
                return bad(format!("need 1 ≤ K < M, got K={k}, M={m}"));
            }
            if p.l == 0 {
                return bad("L must be at least 1".into());
            }
            if let Some(d) = p.symmetric_deg {
                if self.k != 2 {
                    return bad(format!("symmetric scenes have K=2, config says K={}", self.k));
                }
                if !(d > 0.0 && d < 90.0) {
                    return bad(format!("symmetric angle must be in (0, 90) degrees, got {d}"));
                }
            }
            let sep = self.separation_min.unwrap_or(1.0 / m as f64);
            if p.symmetric_deg.is_none() && self.scene.is_none() && (k - 1) as f64 * sep >= 1.0 {
                return bad(format!("{k} sources cannot be separated by {sep} in [0, 1)"));
            }
        }
        if let Some(FixedScene::Explicit { thetas_deg, amplitudes }) = &self.scene {
            if thetas_deg.len() != self.k {
                return bad(format!("scene has {} DOAs but K={}", thetas_deg.len(), self.k));
            }
            if let Some(a) = amplitudes {
                if a.len() != self.k {
                    return bad(format!("scene has {} amplitudes but K={}", a.len(), self.k));
                }
            }
            self.fixed_scene(None)?;
        }
        Ok(())
    }

    fn fixed_scene(&self, symmetric: Option<f64>) -> Result<Option<SourceScene>> {
        if let Some(d) = symmetric {
            return SourceScene::equal_power(vec![-d.to_radians(), d.to_radians()]).map(Some);
        }
        match &self.scene {
            Some(FixedScene::Explicit { thetas_deg, amplitudes }) => {
                let thetas = thetas_deg.iter().map(|d| d.to_radians()).collect();
                let amps = amplitudes.clone().unwrap_or_else(|| vec![1.0; thetas_deg.len()]);
                SourceScene::new(thetas, amps).map(Some).map_err(|e| DoaError::Config(e.to_string()))
            }
            _ => Ok(None),
        }
    }
}

fn load_geometry(path: &Path) -> Result<ArrayGeometry> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DoaError::Config(format!("cannot read geometry {}: {e}", path.display())))?;
    ArrayGeometry::from_text(&text).map_err(|e| DoaError::Config(e.to_string()))
}

/// Random DOAs: `k` values in `[0, 1)` redrawn until all pairwise gaps are at
/// least `separation`, mapped affinely onto `[−90°, 90°)`. Amplitudes are
/// `sigma_s^x` with `x ~ U(0, 1)`.
pub fn random_scene<R: Rng + ?Sized>(k: usize, sigma_s: f64, separation: f64, rng: &mut R) -> Result<SourceScene> {
    if k == 0 {
        return Err(DoaError::invalid("need at least one source"));
    }
    for _ in 0..SCENE_ATTEMPTS {
        let mut v: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        v.sort_by(f64::total_cmp);
        // θ = −90° exactly is endfire and excluded from the open interval
        if v[0] == 0.0 || v.windows(2).any(|w| w[1] - w[0] < separation) {
            continue;
        }
        let thetas: Vec<f64> = v.iter().map(|x| (x - 0.5) * std::f64::consts::PI).collect();
        let amplitudes = (0..k).map(|_| sigma_s.powf(rng.random::<f64>())).collect();
        return SourceScene::new(thetas, amplitudes);
    }
    Err(DoaError::invalid(format!(
        "could not place {k} sources {separation} apart in {SCENE_ATTEMPTS} attempts"
    )))
}

/// Minimum-cost assignment of rows to distinct columns (`rows ≤ cols`),
/// returning the column of each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    assert!(n <= m, "assignment needs at least as many columns as rows");
    if m <= 4 {
        brute_force_assignment(cost)
    } else {
        hungarian(cost)
    }
}

fn brute_force_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, acc: f64, best: &mut (f64, Vec<usize>)) {
        if row == cost.len() {
            if acc < best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                go(cost, row + 1, used, cur, acc + cost[row][j], best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let m = cost.first().map_or(0, Vec::len);
    let mut best = (f64::INFINITY, Vec::new());
    go(cost, 0, &mut vec![false; m], &mut Vec::new(), 0.0, &mut best);
    best.1
}

/// Shortest-augmenting-path Hungarian algorithm with row and column
/// potentials, `O(n²m)`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row matched to column j (1-based, 0 = free); column 0 is virtual
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Mean capped squared error (deg²) after optimal pairing. Inputs are in
/// radians. Missing estimates count as capped misses; surplus estimates are
/// left unpaired.
pub fn pair_and_mse(theta_true: &[f64], theta_hat: &[f64]) -> Result<f64> {
    if theta_true.is_empty() {
        return Err(DoaError::invalid("no true DOAs to score against"));
    }
    let k = theta_true.len();
    let cols = k.max(theta_hat.len());
    let cost: Vec<Vec<f64>> = theta_true
        .iter()
        .map(|t| {
            (0..cols)
                .map(|j| match theta_hat.get(j) {
                    Some(h) if h.is_finite() => (t - h).to_degrees().powi(2).min(MSE_CAP_DEG2),
                    _ => MSE_CAP_DEG2,
                })
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / k as f64)
}

/// Per-trial RMSE in degrees, see [`pair_and_mse`].
pub fn pair_and_rmse(theta_true: &[f64], theta_hat: &[f64]) -> Result<f64> {
    pair_and_mse(theta_true, theta_hat).map(f64::sqrt)
}

/// `(θ, P(θ))` with `P(θ) = a(θ)ᴴ·R·a(θ)/M²` on `n` points over `[−90°, 90°]`.
pub fn cbf_spectrum(y: &crate::linalg::CMat, positions: &[f64], n: usize) -> Vec<(f64, f64)> {
    let r = sample_covariance(y);
    let m = positions.len() as f64;
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let theta = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / (n - 1) as f64;
            let a = crate::array_model::steering_vector(positions, theta);
            let p = (a.adjoint() * &r * &a)[(0, 0)].re / (m * m);
            (theta, p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbfEstimate {
    /// Radians, ascending.
    pub thetas: Vec<f64>,
    pub shortfall: bool,
}

/// The `k` highest local maxima of the Bartlett spectrum.
pub fn cbf_estimate(y: &crate::linalg::CMat, positions: &[f64], k: usize) -> Result<CbfEstimate> {
    if y.ncols() == 0 || y.nrows() != positions.len() {
        return Err(DoaError::invalid("measurement shape does not match the array"));
    }
    let spec = cbf_spectrum(y, positions, CBF_GRID);
    let n = spec.len();
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && spec[j + 1].1 == spec[i].1 {
            j += 1;
        }
        let left = i == 0 || spec[i - 1].1 < spec[i].1;
        let right = j + 1 == n || spec[j + 1].1 < spec[i].1;
        if left && right && !(i == 0 && j + 1 == n) {
            peaks.push(spec[i]);
        }
        i = j + 1;
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let shortfall = peaks.len() < k;
    let mut thetas: Vec<f64> = peaks.into_iter().take(k).map(|p| p.0).collect();
    thetas.sort_by(f64::total_cmp);
    Ok(CbfEstimate { thetas, shortfall })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub point: usize,
    pub trial: usize,
    pub sweep_value: f64,
    pub solver: &'static str,
    /// Radians.
    pub theta_true: Vec<f64>,
    /// Radians; shorter than `theta_true` on shortfall or failure.
    pub theta_hat: Vec<f64>,
    /// Capped mean squared error, deg².
    pub mse_deg2: f64,
    pub runtime_s: f64,
    pub error: Option<String>,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.error.is_some() || self.theta_hat.len() < self.theta_true.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep_var: &'static str,
    pub sweep_value: f64,
    pub solver: &'static str,
    pub rmse_deg: f64,
    pub mean_runtime_s: f64,
    pub n_trials: usize,
    pub failures: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<SummaryRow>,
    pub trials: Vec<TrialResult>,
}

impl ExperimentResult {
    pub fn row(&self, solver: &str, sweep_value: f64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.solver == solver && r.sweep_value == sweep_value)
    }
}

/// Data for one trial: the array and the measurements.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub geometry: ArrayGeometry,
    pub scene: SourceScene,
    pub measurements: MeasurementSet,
}

/// Stream seed of trial `trial` at sweep point `point`.
pub fn trial_seed(master: u64, point: usize, trial: usize) -> u64 {
    derive_seed(master, &[point as u64, trial as u64])
}

fn frozen_seed(master: u64) -> u64 {
    derive_seed(master, &[u64::MAX])
}

/// Geometry, scene and noise for one trial, all drawn from its own stream.
pub fn trial_data(cfg: &ExperimentConfig, point: &SweepPoint, point_idx: usize, trial: usize) -> Result<TrialData> {
    let mut rng = seeded_rng(trial_seed(cfg.seed, point_idx, trial));
    let geometry = match (&cfg.geometry_file, cfg.geometry) {
        (Some(path), _) => load_geometry(path)?,
        (None, GeometryKind::Ula) => ArrayGeometry::standard_ula(point.m)?,
        (None, GeometryKind::Nua) if cfg.freeze_geometry => {
            ArrayGeometry::perturbed_nua(point.m, &mut seeded_rng(frozen_seed(cfg.seed)))?
        }
        (None, GeometryKind::Nua) => ArrayGeometry::perturbed_nua(point.m, &mut rng)?,
    };
    let scene = match cfg.fixed_scene(point.symmetric_deg)? {
        Some(s) => s,
        None => {
            let sep = cfg.separation_min.unwrap_or(1.0 / geometry.len() as f64);
            random_scene(cfg.k, cfg.sigma_s, sep, &mut rng)?
        }
    };
    let measurements = synthesize(&geometry, &scene, point.l, point.snr_db, cfg.signal, &mut rng)?;
    Ok(TrialData { geometry, scene, measurements })
}

/// Runs one solver; returns DOAs in radians.
pub fn run_solver(spec: SolverSpec, data: &TrialData, k: usize, max_iter: usize) -> Result<Vec<f64>> {
    let y = &data.measurements.y;
    let ap = ApOptions { max_iter, ..Default::default() };
    Ok(match spec {
        SolverSpec::ApGridless => ap_gridless(y, data.geometry.positions(), k, ap)?.thetas,
        SolverSpec::ApUla => ap_ula(y, k, ap)?.thetas,
        SolverSpec::Admm { tau, rho } => admm_gridless(y, k, AdmmOptions { tau, rho, max_iter, ..Default::default() })?.thetas,
        SolverSpec::RootMusic => classic_root_music(y, k)?,
        SolverSpec::IrregularRootMusic => irregular_root_music(y, data.geometry.positions(), k)?,
        SolverSpec::Cbf => cbf_estimate(y, data.geometry.positions(), k)?.thetas,
    })
}

/// Full solver report for the iterative solvers (`None` for the others).
pub fn solver_report(spec: SolverSpec, data: &TrialData, k: usize, max_iter: usize) -> Option<Result<SolverReport>> {
    let y = &data.measurements.y;
    let ap = ApOptions { max_iter, ..Default::default() };
    match spec {
        SolverSpec::ApGridless => Some(ap_gridless(y, data.geometry.positions(), k, ap)),
        SolverSpec::ApUla => Some(ap_ula(y, k, ap)),
        SolverSpec::Admm { tau, rho } => Some(admm_gridless(y, k, AdmmOptions { tau, rho, max_iter, ..Default::default() })),
        _ => None,
    }
}

fn run_trial(cfg: &ExperimentConfig, points: &[SweepPoint], point_idx: usize, trial: usize) -> Result<Vec<TrialResult>> {
    let point = &points[point_idx];
    let data = trial_data(cfg, point, point_idx, trial)?;
    let k = data.scene.k();
    let max_iter = cfg.max_iter();
    let mut out = Vec::with_capacity(cfg.solvers.len());
    for &spec in &cfg.solvers {
        let start = Instant::now();
        let result = run_solver(spec, &data, k, max_iter);
        let runtime_s = start.elapsed().as_secs_f64();
        let (theta_hat, error) = match result {
            Ok(t) => (t, None),
            Err(e) if e.is_numerical() || matches!(e, DoaError::InvalidArgument(_)) => {
                log::debug!("{} failed on trial {trial}: {e}", spec.name());
                (Vec::new(), Some(e.to_string()))
            }
            Err(e) => return Err(e),
        };
        let mse_deg2 = pair_and_mse(data.scene.thetas(), &theta_hat)?;
        out.push(TrialResult {
            point: point_idx,
            trial,
            sweep_value: point.value,
            solver: spec.name(),
            theta_true: data.scene.thetas().to_vec(),
            theta_hat,
            mse_deg2,
            runtime_s,
            error,
        });
    }
    Ok(out)
}

/// Runs every trial of every sweep point. Each trial draws from its own
/// seeded stream, so the results do not depend on execution order.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    cfg.validate()?;
    let points = cfg.points();
    let n = cfg.n_trials;
    let batches = map_indexed(exec, points.len() * n, |idx| run_trial(cfg, &points, idx / n, idx % n));
    let mut trials = Vec::with_capacity(batches.len() * cfg.solvers.len());
    for b in batches {
        trials.extend(b?);
    }
    let mut rows = Vec::new();
    for (pi, point) in points.iter().enumerate() {
        for spec in &cfg.solvers {
            let sel: Vec<&TrialResult> = trials.iter().filter(|t| t.point == pi && t.solver == spec.name()).collect();
            let count = sel.len() as f64;
            rows.push(SummaryRow {
                sweep_var: point.var.name(),
                sweep_value: point.value,
                solver: spec.name(),
                rmse_deg: (sel.iter().map(|t| t.mse_deg2).sum::<f64>() / count).sqrt(),
                mean_runtime_s: sel.iter().map(|t| t.runtime_s).sum::<f64>() / count,
                n_trials: sel.len(),
                failures: sel.iter().filter(|t| t.failed()).count(),
                seed: cfg.seed,
            });
        }
    }
    Ok(ExperimentResult { rows, trials })
}

fn csv_error(e: csv::Error) -> DoaError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DoaError::Io(io),
        other => DoaError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Versioned summary CSV: a comment line, then one row per sweep point and
/// solver.
pub fn write_results_csv<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    if rows.is_empty() {
        w.write_record(["sweep_var", "sweep_value", "solver", "rmse_deg", "mean_runtime_s", "n_trials", "failures", "seed"])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn join_deg(v: &[f64]) -> String {
    v.iter().map(|t| format!("{:.6}", t.to_degrees())).collect::<Vec<_>>().join(";")
}

/// One row per trial and solver with the raw DOAs in degrees (`;`-separated).
pub fn write_trials_csv<W: Write>(out: W, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "sweep_value", "trial", "solver", "theta_true_deg", "theta_hat_deg", "mse_deg2", "runtime_s", "error",
    ])
    .map_err(csv_error)?;
    for t in trials {
        w.write_record([
            t.sweep_value.to_string(),
            t.trial.to_string(),
            t.solver.to_string(),
            join_deg(&t.theta_true),
            join_deg(&t.theta_hat),
            t.mse_deg2.to_string(),
            t.runtime_s.to_string(),
            t.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Irregular null spectrum of the first trial's sample covariance, as
/// `(phase_deg, value)` on `n` points.
pub fn spectrum_dump(cfg: &ExperimentConfig, n: usize) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let points = cfg.points();
    let data = trial_data(cfg, &points[0], 0, 0)?;
    let r = sample_covariance(&data.measurements.y);
    let basis = subspace_split(&r, data.scene.k())?;
    let samples = spectrum_samples(&noise_projector(&basis), data.geometry.positions(), n)?;
    Ok(samples.into_iter().map(|(p, v)| (p.to_degrees(), v)).collect())
}

pub fn write_spectrum_csv<W: Write>(mut out: W, samples: &[(f64, f64)]) -> Result<()> {
    writeln!(out, "phase_deg,d_tilde")?;
    for (p, v) in samples {
        writeln!(out, "{p},{v:e}")?;
    }
    Ok(())
}

/// Convergence histories of the iterative solvers on the first trial.
pub fn residual_dump(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, SolverReport)>> {
    cfg.validate()?;
    let points = cfg.points();
    let data = trial_data(cfg, &points[0], 0, 0)?;
    let mut out = Vec::new();
    for &spec in &cfg.solvers {
        if let Some(rep) = solver_report(spec, &data, data.scene.k(), cfg.max_iter()) {
            out.push((spec.name(), rep?));
        }
    }
    Ok(out)
}

pub fn write_residuals_csv<W: Write>(mut out: W, reports: &[(&str, SolverReport)]) -> Result<()> {
    writeln!(out, "solver,iteration,residual,gap")?;
    for (name, rep) in reports {
        for (i, r) in rep.residual_history.iter().enumerate() {
            let gap = rep.gap_history.get(i).map(|g| format!("{g:e}")).unwrap_or_default();
            writeln!(out, "{name},{},{r:e},{gap}", i + 1)?;
        }
    }
    Ok(())
}

/// Process exit status for a failed run: 2 for configuration, usage and I/O
/// problems, 3 for numerical failures.
pub fn exit_code(e: &DoaError) -> u8 {
    match e {
        DoaError::Config(_) | DoaError::InvalidArgument(_) | DoaError::Io(_) => 2,
        DoaError::EstimationFailure { .. }
        | DoaError::IllConditioned { .. }
        | DoaError::Shortfall { .. }
        | DoaError::Divergence { .. } => 3,
    }
}

/// Renders the summary as an aligned text table.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<14} {:>12} {:<22} {:>10} {:>12} {:>8} {:>8}\n",
        "sweep_var", "value", "solver", "rmse_deg", "runtime_s", "trials", "failed"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:>12} {:<22} {:>10.4} {:>12.4} {:>8} {:>8}\n",
            r.sweep_var,
            Level(r.sweep_value).to_string(),
            r.solver,
            r.rmse_deg,
            r.mean_runtime_s,
            r.n_trials,
            r.failures
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::seeded_rng;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{"geometry": "ula", "m": 10, "k": 2, "l": 5, "snr_db": "inf", "n_trials": 3,
                "solvers": ["root_music", "cbf"], "seed": 4}"#,
        )
        .unwrap()
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&DoaError::Config("x".into())), 2);
        assert_eq!(exit_code(&DoaError::invalid("x")), 2);
        assert_eq!(exit_code(&DoaError::Divergence { iteration: 3, residual: 1e9 }), 3);
        assert_eq!(exit_code(&DoaError::Shortfall { found: 1, wanted: 2 }), 3);
    }

    #[test]
    fn scene_single_source_in_range() {
        let mut rng = seeded_rng(1);
        for _ in 0..100 {
            let s = random_scene(1, 5.0, 0.05, &mut rng).unwrap();
            let t = s.thetas()[0].to_degrees();
            assert!((-90.0..90.0).contains(&t));
            assert!((1.0..=5.0).contains(&s.amplitudes()[0]));
        }
    }

    #[test]
    fn scene_separation_holds() {
        let mut rng = seeded_rng(2);
        for _ in 0..10_000 {
            let s = random_scene(3, 5.0, 1.0 / 20.0, &mut rng).unwrap();
            let t: Vec<f64> = s.thetas().iter().map(|x| x.to_degrees()).collect();
            for w in t.windows(2) {
                assert!(w[1] - w[0] >= 9.0 - 1e-9);
            }
        }
    }

    #[test]
    fn scene_is_seed_deterministic() {
        let a = random_scene(3, 5.0, 0.05, &mut seeded_rng(9)).unwrap();
        let b = random_scene(3, 5.0, 0.05, &mut seeded_rng(9)).unwrap();
        assert_eq!(a.thetas(), b.thetas());
        assert_eq!(a.amplitudes(), b.amplitudes());
    }

    #[test]
    fn infeasible_scene_is_rejected() {
        assert!(random_scene(5, 5.0, 0.3, &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn rmse_examples() {
        let t = [0.1, 0.5];
        assert_eq!(pair_and_rmse(&t, &t).unwrap(), 0.0);
        let one = [20f64.to_radians()];
        assert!((pair_and_rmse(&one, &[40f64.to_radians()]).unwrap() - 10.0).abs() < 1e-12);
        let truth = [10f64.to_radians(), 30f64.to_radians()];
        let hat = [33f64.to_radians(), 11f64.to_radians()];
        assert!((pair_and_rmse(&truth, &hat).unwrap() - 5f64.sqrt()).abs() < 1e-9);
        assert!(pair_and_rmse(&[], &[0.0]).is_err());
        // a missing estimate is a capped miss
        let mse = pair_and_mse(&truth, &[10f64.to_radians()]).unwrap();
        assert!((mse - 50.0).abs() < 1e-9);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = seeded_rng(3);
        for n in 1..=6 {
            for extra in 0..3 {
                let cost: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..n + extra).map(|_| rng.random::<f64>() * 10.0).collect()).collect();
                let total = |a: &[usize]| a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
                let h = hungarian(&cost);
                let b = brute_force_assignment(&cost);
                assert!((total(&h) - total(&b)).abs() < 1e-9);
                let mut cols = h.clone();
                cols.sort_unstable();
                cols.dedup();
                assert_eq!(cols.len(), n);
            }
        }
    }

    #[test]
    fn cbf_single_source_peak() {
        let geom = ArrayGeometry::standard_ula(16).unwrap();
        let scene = SourceScene::equal_power(vec![23.4f64.to_radians()]).unwrap();
        let meas = synthesize(&geom, &scene, 1, f64::INFINITY, SignalModel::Incoherent, &mut seeded_rng(1)).unwrap();
        let est = cbf_estimate(&meas.y, geom.positions(), 1).unwrap();
        assert!((est.thetas[0].to_degrees() - 23.4).abs() <= 0.05 + 1e-9);
        assert!(cbf_spectrum(&meas.y, geom.positions(), 181).iter().all(|p| p.1 >= -1e-12));
    }

    #[test]
    fn cbf_merges_close_sources() {
        let geom = ArrayGeometry::standard_ula(20).unwrap();
        let scene = SourceScene::equal_power(vec![-1f64.to_radians(), 1f64.to_radians()]).unwrap();
        let meas = synthesize(&geom, &scene, 1, f64::INFINITY, SignalModel::Incoherent, &mut seeded_rng(2)).unwrap();
        let est = cbf_estimate(&meas.y, geom.positions(), 2).unwrap();
        assert!(pair_and_rmse(scene.thetas(), &est.thetas).unwrap() > 1.0);
    }

    #[test]
    fn config_parsing_and_defaults() {
        let cfg = base_config();
        assert_eq!(cfg.sigma_s, 5.0);
        assert_eq!(cfg.max_iter(), 10_000);
        assert_eq!(cfg.points().len(), 1);
        assert!(cfg.points()[0].snr_db.is_infinite());
        let cfg: ExperimentConfig = ExperimentConfig::from_json(
            r#"{"geometry": "ula", "m": 20, "k": 3, "l": 1, "snr_db": [0, 10, "inf"], "n_trials": 1,
                "solvers": [{"admm": {"tau": 0.5}}, "ap_ula"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.solvers[0], SolverSpec::Admm { tau: 0.5, rho: 1.0 });
        let pts = cfg.points();
        assert_eq!(pts.len(), 3);
        assert!(pts[2].snr_db.is_infinite());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn config_validation() {
        let mut cfg = base_config();
        cfg.geometry = GeometryKind::Nua;
        assert!(matches!(cfg.validate(), Err(DoaError::Config(_))));
        let mut cfg = base_config();
        cfg.n_trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.k = 10;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"geometry": "ula", "m": 5, "k": 1, "l": 1, "n_trials": 1, "solvers": ["music"]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"geometry": "ula", "m": 5, "k": 1, "l": 1, "n_trials": 1, "solvers": ["cbf"], "bogus": 1}"#).is_err());
        let mut cfg = base_config();
        cfg.sweep = Some(Sweep { var: SweepVar::M, values: vec![] });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn experiment_rows_and_reproducibility() {
        let cfg = base_config();
        let a = run_experiment(&cfg, Execution::Sequential).unwrap();
        let b = run_experiment(&cfg, Execution::Parallel).unwrap();
        let strip = |rows: &[SummaryRow]| -> Vec<SummaryRow> {
            rows.iter().map(|r| SummaryRow { mean_runtime_s: 0.0, ..r.clone() }).collect()
        };
        assert_eq!(strip(&a.rows), strip(&b.rows));
        assert_eq!(a.rows.len(), 2);
        let rm = a.row("root_music", f64::INFINITY).unwrap();
        assert!(rm.rmse_deg < 1e-6);
        assert!(a.rows.iter().all(|r| r.rmse_deg <= 10.0));
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &a.rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(RESULTS_HEADER));
        assert_eq!(lines.next(), Some("sweep_var,sweep_value,solver,rmse_deg,mean_runtime_s,n_trials,failures,seed"));
    }

    #[test]
    fn symmetric_sweep_points() {
        let cfg = ExperimentConfig::from_json(
            r#"{"geometry": "ula", "m": 12, "k": 2, "l": 1, "n_trials": 2, "solvers": ["cbf"],
                "sweep": {"var": "symmetric_deg", "values": [2, 10]}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let data = trial_data(&cfg, &cfg.points()[1], 1, 0).unwrap();
        let t: Vec<f64> = data.scene.thetas().iter().map(|x| x.to_degrees()).collect();
        assert!((t[0] + 10.0).abs() < 1e-12 && (t[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn spectrum_dump_has_k_deep_minima() {
        let cfg = ExperimentConfig::from_json(
            r#"{"geometry": "nua", "m": 21, "k": 3, "l": 10, "n_trials": 1, "solvers": ["irregular_root_music"],
                "scene": {"thetas_deg": [-7.24, 15.96, 42.07]}}"#,
        )
        .unwrap();
        let s = spectrum_dump(&cfg, 3600).unwrap();
        assert_eq!(s.len(), 3600);
        let max = s.iter().map(|p| p.1).fold(0.0, f64::max);
        let n = s.len();
        let deep = (0..n)
            .filter(|&i| {
                let v = s[i].1;
                v < s[(i + n - 1) % n].1 && v < s[(i + 1) % n].1 && v < 1e-2 * max
            })
            .count();
        assert_eq!(deep, 3);
    }
}
