//! Experiment runner: configuration, seeding, the worker pool and the
//! `summary.json` / CSV outputs.
//!
//! A configuration is a TOML (or `.json`) file whose keys are the fields of
//! the experiment's config struct, plus an optional top-level `seed`.
//! Trailing `key=value` arguments override file values (dotted keys reach
//! into tables); `--seed` overrides both. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::envgen::TorusGrid;
use crate::error::{Error, Result};
use crate::fock::{diffusivity_extrapolation, l2_mass, offdiag_sweep, sigma2, Model, OffdiagOptions};
use crate::kernels::{Mollifier, DEFAULT_S};
use crate::polymer::CouplingSchedule;
use crate::sltecheck::{env_limit_report, EnvLimitConfig};
use crate::spectral::{self, default_p_grid, lemma_sweep, nuisance_i, replacement_gap, weak_norm, weak_norm_gamma, LemmaId, LemmaSuiteConfig};
use crate::stats::{self, char_fn_test, isotropy_test, linear_fit, log_times, msd, nondecreasing, superdiffusivity_scan, Ensemble, EnsembleMeta, EnsembleSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// ---------------------------------------------------------------------------
// Listing

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExperimentInfo {
    pub id: &'static str,
    pub description: &'static str,
    pub anchors: &'static [&'static str],
}

const EXPERIMENTS: [ExperimentInfo; 9] = [
    ExperimentInfo {
        id: "msd",
        description: "Annealed weak-coupling ensembles: enhanced diffusivity, isotropy and Gaussian increments",
        anchors: &["E|X^ε_t|² ≈ 2ς²(α)t", "ς²(α) = √(4πα² + 1)"],
    },
    ExperimentInfo {
        id: "diffusivity-pairing",
        description: "Diffusivity pairing extrapolated in γ² against ½σ²(α)",
        anchors: &["½σ²(α) = ½(√(4πα² + 1) − 1)"],
    },
    ExperimentInfo {
        id: "replacement-gap",
        description: "Sup-gap between the diagonal kernel m^λ and its replacement g^λ, in units of γ²",
        anchors: &["sup_p |m^λ(p) − g^λ(p)| ≲ γ²"],
    },
    ExperimentInfo {
        id: "weak-norm",
        description: "Weak-coupling norm of the chaos-one kernel and its divergence at fixed γ",
        anchors: &["γ² log(1 + 1/λ) = α²", "‖S^{-1/2} γ f₁‖² = ∞"],
    },
    ExperimentInfo {
        id: "prop-off",
        description: "Off-diagonal second-chaos pairing: SRBP intercept and the DCGFF companion",
        anchors: &["⟨φ[1], φ[2]⟩ = −1/32 + O(γ²)"],
    },
    ExperimentInfo {
        id: "lemma-suite",
        description: "Randomised sweeps of four uniform integral bounds",
        anchors: &["|p| ∫ V̂(q) / (|q + r|(λ + |q|² + |p|²)) dq ≲ 1", "λ ∫ V̂(p) / ((λ + |p+q|²)(λ + |p+r|²)) dp ≲ 1"],
    },
    ExperimentInfo {
        id: "nuisance-I",
        description: "Monte Carlo of the two-momentum nuisance integral over tail momenta",
        anchors: &["sup_{p₃} I(p₃) ≲ 1"],
    },
    ExperimentInfo {
        id: "env-limit",
        description: "Rescaled environment functionals against the Brownian-transported gradient free field",
        anchors: &["η̄_t(x) = η̄₀(x + ςB̄_t)", "E[η̄[g₁]η̄[g₂]] = ∫∫ div g₁(x) div g₂(y) G(x − y)"],
    },
    ExperimentInfo {
        id: "superdiffusivity",
        description: "Strong-coupling trend of E|X_t|²/t over two decades of time",
        anchors: &["t log log t ≲ E|X_t|² ≲ t log t"],
    },
];

pub fn list_experiments() -> &'static [ExperimentInfo] {
    &EXPERIMENTS
}

/// Plain-text table printed by `srbp list`.
pub fn format_listing() -> String {
    let w = EXPERIMENTS.iter().map(|e| e.id.len()).max().unwrap_or(0);
    let mut s = String::new();
    for e in &EXPERIMENTS {
        s.push_str(&format!("{:<w$}  {}\n{:<w$}  anchors: {}\n", e.id, e.description, "", e.anchors.join("; ")));
    }
    s
}

// ---------------------------------------------------------------------------
// Summary

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ResultRow {
    pub name: String,
    pub value: f64,
    pub stderr_or_err: f64,
    /// Human-readable acceptance condition; `None` for informational rows.
    pub threshold: Option<String>,
    pub pass: Option<bool>,
}

impl ResultRow {
    fn check(name: impl Into<String>, value: f64, err: f64, threshold: impl Into<String>, pass: bool) -> Self {
        ResultRow { name: name.into(), value, stderr_or_err: err, threshold: Some(threshold.into()), pass: Some(pass) }
    }

    fn info(name: impl Into<String>, value: f64, err: f64) -> Self {
        ResultRow { name: name.into(), value, stderr_or_err: err, threshold: None, pass: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub config_echo: Value,
    pub seed: u64,
    pub results: Vec<ResultRow>,
    /// Names of failed checks.
    pub failed: Vec<String>,
    pub runtime_s: f64,
    pub version: &'static str,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Experiment configurations

fn default_s() -> f64 {
    DEFAULT_S
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

fn positive_list(v: &[f64], what: &str) -> Result<()> {
    check(!v.is_empty() && v.iter().all(|x| *x > 0.0 && x.is_finite()), &format!("{what} must be a nonempty list of positive numbers"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusivityConfig {
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub s: f64,
    pub rel_tol: f64,
}

impl Default for DiffusivityConfig {
    fn default() -> Self {
        DiffusivityConfig { alpha: 1.0, lambdas: vec![1e-4, 1e-6, 1e-8, 1e-10], s: default_s(), rel_tol: 0.03 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakNormConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub band: [f64; 2],
    pub s: f64,
    pub divergence_gamma: f64,
    pub divergence_lambdas: Vec<f64>,
    pub min_r2: f64,
}

impl Default for WeakNormConfig {
    fn default() -> Self {
        WeakNormConfig {
            alpha: 1.0,
            lambda: 1e-10,
            band: [0.95, 1.05],
            s: default_s(),
            divergence_gamma: 1.0,
            divergence_lambdas: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            min_r2: 0.99,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub p_points: usize,
    pub s: f64,
    pub max_spread: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig { alpha: 1.0, lambdas: vec![1e-2, 1e-3, 1e-4, 1e-5], p_points: 60, s: default_s(), max_spread: 2.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropOffConfig {
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub samples: usize,
    pub with_factorial: bool,
    pub s: f64,
    pub rel_tol: f64,
    pub dcgff_bound: f64,
}

impl Default for PropOffConfig {
    fn default() -> Self {
        PropOffConfig {
            alpha: 1.0,
            lambdas: vec![1e-4, 1e-6, 1e-8, 1e-10, 1e-12],
            samples: 1_000_000,
            with_factorial: false,
            s: default_s(),
            rel_tol: 0.15,
            dcgff_bound: 10.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    pub n_draws: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub lambda_range: [f64; 2],
    pub momentum_range: [f64; 2],
    pub threshold: f64,
    pub rel_tol: f64,
    pub stability: f64,
    pub max_nonconverged: f64,
    pub s: f64,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        let d = LemmaSuiteConfig::default();
        LemmaConfig {
            n_draws: 1000,
            alpha: d.alpha,
            kappa: d.kappa,
            lambda_range: d.lambda_range,
            momentum_range: d.momentum_range,
            threshold: d.threshold,
            rel_tol: d.rel_tol,
            stability: 0.2,
            max_nonconverged: 0.01,
            s: default_s(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub lambdas: Vec<f64>,
    pub n_momenta: usize,
    pub momentum_range: [f64; 2],
    pub samples: usize,
    pub bound: f64,
    pub max_rel_se: f64,
    pub stability: f64,
    pub s: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            alpha: 1.0,
            kappa: spectral::KAPPA,
            lambdas: vec![1e-3, 1e-6],
            n_momenta: 20,
            // V̂(10) ≈ 6e-13 at the default width; past that the integral is
            // below double-precision noise.
            momentum_range: [1e-3, 1e1],
            samples: 4_000_000,
            bound: 20.0,
            max_rel_se: 0.1,
            stability: 0.2,
            s: default_s(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsdConfig {
    pub alpha: f64,
    pub epsilons: Vec<f64>,
    /// Macroscopic record times; consecutive pairs feed the
    /// characteristic-function test and the last one gives `D̂`.
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub control_paths: usize,
    pub s: f64,
    pub l: f64,
    pub n: usize,
    pub dt: f64,
    pub thetas: Vec<[f64; 2]>,
    pub n_boot: usize,
    pub band_z: f64,
    pub z: f64,
}

impl Default for MsdConfig {
    fn default() -> Self {
        MsdConfig {
            alpha: 1.0,
            epsilons: vec![0.3, 0.2, 0.1],
            times: vec![0.0, 0.25, 0.5],
            n_paths: 3000,
            control_paths: 2000,
            s: default_s(),
            // h = 0.371 sits just inside the s/2 resolution limit.
            l: 190.0,
            n: 512,
            dt: 1e-3,
            thetas: vec![[2.0, 0.0], [0.0, 2.0], [1.5, 1.5], [3.0, -1.0]],
            n_boot: 200,
            band_z: 4.0,
            z: 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperConfig {
    pub gamma: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub n_times: usize,
    pub n_paths: usize,
    pub environment: bool,
    pub s: f64,
    pub l: f64,
    pub n: usize,
    pub dt: f64,
}

impl Default for SuperConfig {
    fn default() -> Self {
        SuperConfig {
            gamma: 1.5,
            t_min: 1.0,
            t_max: 100.0,
            n_times: 9,
            n_paths: 2000,
            environment: true,
            s: default_s(),
            l: 380.0,
            n: 1024,
            dt: 1e-3,
        }
    }
}

fn grid_ok(l: f64, n: usize, s: f64) -> Result<()> {
    let m = Mollifier::new(s).map_err(|e| Error::Config(e.to_string()))?;
    TorusGrid::new(l, n).and_then(|g| g.check_resolves(&m)).map_err(|e| Error::Config(e.to_string()))
}

fn alpha_ok(a: f64) -> Result<()> {
    check(a >= 0.0 && a.is_finite(), "alpha must be finite and ≥ 0")
}

fn s_ok(s: f64) -> Result<()> {
    check(s > 0.0 && s.is_finite(), "s must be positive")
}

impl DiffusivityConfig {
    fn validate(&self) -> Result<()> {
        alpha_ok(self.alpha)?;
        s_ok(self.s)?;
        positive_list(&self.lambdas, "lambdas")?;
        check(self.lambdas.len() >= 2, "lambdas needs at least two values")?;
        check(self.rel_tol > 0.0, "rel_tol must be positive")
    }
}

impl WeakNormConfig {
    fn validate(&self) -> Result<()> {
        alpha_ok(self.alpha)?;
        s_ok(self.s)?;
        check(self.lambda > 0.0, "lambda must be positive")?;
        check(self.band[0] <= self.band[1], "band must be ordered")?;
        check(self.divergence_gamma > 0.0, "divergence_gamma must be positive")?;
        positive_list(&self.divergence_lambdas, "divergence_lambdas")?;
        check(self.divergence_lambdas.len() >= 3, "divergence_lambdas needs at least three values")
    }
}

impl GapConfig {
    fn validate(&self) -> Result<()> {
        alpha_ok(self.alpha)?;
        s_ok(self.s)?;
        positive_list(&self.lambdas, "lambdas")?;
        check(self.p_points >= 40, "p_points must be at least 40")?;
        check(self.max_spread >= 1.0, "max_spread must be ≥ 1")
    }
}

impl PropOffConfig {
    fn validate(&self) -> Result<()> {
        alpha_ok(self.alpha)?;
        s_ok(self.s)?;
        positive_list(&self.lambdas, "lambdas")?;
        check(self.lambdas.len() >= 2, "lambdas needs at least two values")?;
        check(self.samples >= 2, "samples must be at least 2")?;
        check(self.rel_tol > 0.0 && self.dcgff_bound > 0.0, "rel_tol and dcgff_bound must be positive")
    }
}

impl LemmaConfig {
    fn validate(&self) -> Result<()> {
        alpha_ok(self.alpha)?;
        s_ok(self.s)?;
        check(self.n_draws >= 1000, "n_draws must be at least 1000")?;
        check(self.kappa > 0.0 && self.kappa < 1.0, "kappa must lie in (0, 1)")?;
        check(
            self.lambda_range[0] > 0.0 && self.lambda_range[1] > self.lambda_range[0],
            "lambda_range must be an increasing positive pair",
        )?;
        check(
            self.momentum_range[0] > 0.0 && self.momentum_range[1] > self.momentum_range[0],
            "momentum_range must be an increasing positive pair",
        )?;
        check(self.threshold > 0.0 && self.rel_tol > 0.0 && self.stability >= 0.0, "threshold, rel_tol and stability must be positive")
    }

    fn suite(&self) -> LemmaSuiteConfig {
        LemmaSuiteConfig {
            alpha: self.alpha,
            kappa: self.kappa,
            lambda_range: self.lambda_range,
            momentum_range: self.momentum_range,
            threshold: self.threshold,
            rel_tol: self.rel_tol,
        }
    }
}

impl NuisanceConfig {
    fn validate(&self) -> Result<()> {
        alpha_ok(self.alpha)?;
        s_ok(self.s)?;
        check(self.kappa > 0.0 && self.kappa < 1.0, "kappa must lie in (0, 1)")?;
        positive_list(&self.lambdas, "lambdas")?;
        check(self.n_momenta >= 1, "n_momenta must be at least 1")?;
        check(
            self.momentum_range[0] > 0.0 && self.momentum_range[1] >= self.momentum_range[0],
            "momentum_range must be an ordered positive pair",
        )?;
        check(self.samples >= 100_000, "samples must be at least 1e5")?;
        check(self.bound > 0.0 && self.max_rel_se > 0.0 && self.stability >= 0.0, "bound, max_rel_se and stability must be positive")
    }
}

impl MsdConfig {
    fn validate(&self) -> Result<()> {
        alpha_ok(self.alpha)?;
        check(!self.epsilons.is_empty() && self.epsilons.iter().all(|e| *e > 0.0 && *e < 1.0), "epsilons must lie in (0, 1)")?;
        check(
            self.times.len() >= 2 && self.times[0] >= 0.0 && self.times.windows(2).all(|w| w[1] > w[0]),
            "times must be increasing, nonnegative, with at least two entries",
        )?;
        check(self.n_paths >= 2 && self.control_paths >= 2, "n_paths and control_paths must be at least 2")?;
        check(self.dt > 0.0 && self.n_boot >= 2, "dt must be positive and n_boot ≥ 2")?;
        check(!self.thetas.is_empty(), "thetas must be nonempty")?;
        grid_ok(self.l, self.n, self.s)
    }
}

impl SuperConfig {
    fn validate(&self) -> Result<()> {
        check(self.gamma >= 0.0 && self.gamma.is_finite(), "gamma must be ≥ 0")?;
        check(self.t_min > 0.0 && self.t_max > self.t_min && self.n_times >= 3, "need 0 < t_min < t_max and n_times ≥ 3")?;
        check(self.n_paths >= 2 && self.dt > 0.0, "n_paths ≥ 2 and dt > 0 required")?;
        grid_ok(self.l, self.n, self.s)
    }
}

fn env_limit_ok(c: &EnvLimitConfig) -> Result<()> {
    c.validate().map_err(|e| Error::Config(e.to_string()))?;
    grid_ok(c.l, c.n, c.s)
}

// ---------------------------------------------------------------------------
// Config loading

/// Parsed, validated request ready to run.
#[derive(Clone, Debug)]
pub enum Experiment {
    Msd(MsdConfig),
    DiffusivityPairing(DiffusivityConfig),
    ReplacementGap(GapConfig),
    WeakNorm(WeakNormConfig),
    PropOff(PropOffConfig),
    LemmaSuite(LemmaConfig),
    NuisanceI(NuisanceConfig),
    EnvLimit(EnvLimitConfig),
    Superdiffusivity(SuperConfig),
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: &'static str,
    pub experiment: Experiment,
    pub seed: u64,
    pub echo: Value,
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(t) => serde_json::to_value(&t["v"]).unwrap_or(Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut Map<String, Value>, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let next = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = next.as_object_mut().ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn from_map<T: DeserializeOwned + Serialize>(map: Map<String, Value>) -> Result<(T, Value)> {
    let cfg: T = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
    let resolved = serde_json::to_value(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    Ok((cfg, resolved))
}

/// Resolve the id, read and merge the configuration, validate it. Nothing is
/// written here; every failure is a configuration error.
pub fn prepare(id: &str, config: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<Prepared> {
    let info = EXPERIMENTS
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::Config(format!("unknown experiment `{id}`; run `srbp list`")))?;
    let (text, mut map) = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let value: Value = if path.extension().is_some_and(|x| x == "json") {
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            } else {
                let t: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::to_value(t).map_err(|e| Error::Config(e.to_string()))?
            };
            let Value::Object(map) = value else {
                return Err(Error::Config("configuration must be a table".into()));
            };
            (Some(text), map)
        }
        None => (None, Map::new()),
    };
    for o in overrides {
        apply_override(&mut map, o)?;
    }
    let file_seed = match map.remove("seed") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| Error::Config("seed must be a nonnegative integer".into()))?),
    };
    let seed = seed.or(file_seed).unwrap_or(0);

    let (experiment, resolved) = match info.id {
        "msd" => {
            let (c, r) = from_map::<MsdConfig>(map)?;
            c.validate()?;
            (Experiment::Msd(c), r)
        }
        "diffusivity-pairing" => {
            let (c, r) = from_map::<DiffusivityConfig>(map)?;
            c.validate()?;
            (Experiment::DiffusivityPairing(c), r)
        }
        "replacement-gap" => {
            let (c, r) = from_map::<GapConfig>(map)?;
            c.validate()?;
            (Experiment::ReplacementGap(c), r)
        }
        "weak-norm" => {
            let (c, r) = from_map::<WeakNormConfig>(map)?;
            c.validate()?;
            (Experiment::WeakNorm(c), r)
        }
        "prop-off" => {
            let (c, r) = from_map::<PropOffConfig>(map)?;
            c.validate()?;
            (Experiment::PropOff(c), r)
        }
        "lemma-suite" => {
            let (c, r) = from_map::<LemmaConfig>(map)?;
            c.validate()?;
            (Experiment::LemmaSuite(c), r)
        }
        "nuisance-I" => {
            let (c, r) = from_map::<NuisanceConfig>(map)?;
            c.validate()?;
            (Experiment::NuisanceI(c), r)
        }
        "env-limit" => {
            let mut with_defaults = serde_json::to_value(EnvLimitConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
            let base = with_defaults.as_object_mut().expect("struct serializes to a map");
            for (k, v) in map {
                if !base.contains_key(&k) {
                    return Err(Error::Config(format!("unknown field `{k}`")));
                }
                base.insert(k, v);
            }
            let (c, r) = from_map::<EnvLimitConfig>(base.clone())?;
            env_limit_ok(&c)?;
            (Experiment::EnvLimit(c), r)
        }
        "superdiffusivity" => {
            let (c, r) = from_map::<SuperConfig>(map)?;
            c.validate()?;
            (Experiment::Superdiffusivity(c), r)
        }
        _ => unreachable!("listed ids are matched above"),
    };
    let echo = serde_json::json!({
        "file": config.map(|p| p.display().to_string()),
        "text": text,
        "overrides": overrides,
        "resolved": resolved,
    });
    Ok(Prepared { id: info.id, experiment, seed, echo })
}

// ---------------------------------------------------------------------------
// Running

fn mollifier(s: f64) -> Result<Mollifier> {
    Mollifier::new(s)
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(stats::csv_err)?;
    for r in rows {
        w.serialize(r).map_err(stats::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn run_diffusivity(c: &DiffusivityConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let fit = diffusivity_extrapolation(&m, &c.lambdas, c.alpha)?;
    let target = 0.5 * sigma2(c.alpha);
    let mut rows = vec![
        ResultRow::check(
            "intercept",
            fit.fit.intercept,
            fit.fit.intercept_se,
            format!("|intercept / {} - 1| <= {}", fmt(target), c.rel_tol),
            (fit.fit.intercept / target - 1.0).abs() <= c.rel_tol,
        ),
        ResultRow::info("half_sigma2", target, 0.0),
        ResultRow::info("slope", fit.fit.slope, fit.fit.slope_se),
    ];
    #[derive(Serialize)]
    struct Line {
        lambda: f64,
        gamma2: f64,
        pairing: f64,
        err: f64,
        weak_norm: f64,
        l2_mass: f64,
    }
    let mut lines = Vec::new();
    for (k, &lam) in c.lambdas.iter().enumerate() {
        let w = weak_norm(&m, lam, c.alpha)?;
        let l2 = l2_mass(&m, lam, c.alpha)?;
        let v = fit.pairing_values[k];
        let e = fit.errors[k];
        rows.push(ResultRow::check(
            format!("pairing[lambda={}]", fmt(lam)),
            v,
            e,
            format!("<= weak_norm / 2 = {}", fmt(0.5 * w.value)),
            v <= 0.5 * (w.value + w.error) + e,
        ));
        rows.push(ResultRow::info(format!("l2_mass[lambda={}]", fmt(lam)), l2.value, l2.error));
        lines.push(Line { lambda: lam, gamma2: fit.gamma2_values[k], pairing: v, err: e, weak_norm: w.value, l2_mass: l2.value });
    }
    write_rows(&dir.join("pairing.csv"), &lines)?;
    Ok(rows)
}

fn run_weak_norm(c: &WeakNormConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let a2 = c.alpha * c.alpha;
    let v = weak_norm(&m, c.lambda, c.alpha)?;
    let ratio = if a2 > 0.0 { v.value / a2 } else { 0.0 };
    let mut rows = vec![
        ResultRow::check(
            "weak_norm_over_alpha2",
            ratio,
            if a2 > 0.0 { v.error / a2 } else { v.error },
            format!("in [{}, {}]", c.band[0], c.band[1]),
            a2 > 0.0 && ratio >= c.band[0] && ratio <= c.band[1],
        ),
        ResultRow::info("weak_norm", v.value, v.error),
        ResultRow::info("pi_alpha2", std::f64::consts::PI * a2, 0.0),
    ];
    #[derive(Serialize)]
    struct Line {
        lambda: f64,
        gamma: f64,
        value: f64,
        err: f64,
    }
    let mut lines = Vec::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for &lam in &c.divergence_lambdas {
        let e = weak_norm_gamma(&m, lam, c.divergence_gamma)?;
        x.push((1.0 / lam).ln());
        y.push(e.value);
        lines.push(Line { lambda: lam, gamma: c.divergence_gamma, value: e.value, err: e.error });
    }
    let fit = linear_fit(&x, &y, None)?;
    rows.push(ResultRow::check("divergence_r2", fit.r2, 0.0, format!(">= {}", c.min_r2), fit.r2 >= c.min_r2));
    rows.push(ResultRow::check("divergence_slope", fit.slope, fit.slope_se, "> 0", fit.slope > 0.0));
    write_rows(&dir.join("weak_norm.csv"), &lines)?;
    Ok(rows)
}

fn run_gap(c: &GapConfig, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let grid = default_p_grid(c.p_points);
    let mut rows = Vec::new();
    #[derive(Serialize)]
    struct Line {
        lambda: f64,
        p: f64,
        m: f64,
        m_err: f64,
        g: f64,
        gap: f64,
    }
    let mut lines = Vec::new();
    let mut ratios = Vec::new();
    for &lam in &c.lambdas {
        let r = replacement_gap(&m, lam, c.alpha, &grid)?;
        let g2 = r.gamma2;
        rows.push(ResultRow::info(format!("gap_ratio[lambda={}]", fmt(lam)), r.ratio, if g2 > 0.0 { r.sup_gap_err / g2 } else { 0.0 }));
        rows.push(ResultRow::info(format!("sup_gap[lambda={}]", fmt(lam)), r.sup_gap, r.sup_gap_err));
        ratios.push(r.ratio);
        lines.extend(r.rows.iter().map(|x| Line { lambda: lam, p: x.p, m: x.m, m_err: x.m_err, g: x.g, gap: x.m - x.g }));
    }
    let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let spread = if lo > 0.0 { hi / lo } else if hi == 0.0 { 1.0 } else { f64::INFINITY };
    rows.push(ResultRow::check("ratio_spread", spread, 0.0, format!("< {}", c.max_spread), spread < c.max_spread));
    write_rows(&dir.join("gap.csv"), &lines)?;
    Ok(rows)
}

fn run_prop_off(c: &PropOffConfig, seed: u64, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let opts = OffdiagOptions { with_factorial: c.with_factorial, samples: c.samples };
    let target = if c.with_factorial { -1.0 / 16.0 } else { -1.0 / 32.0 };
    let srbp = offdiag_sweep(&m, Model::Srbp, &c.lambdas, c.alpha, &opts, crate::rng::derive(seed, 0))?;
    let dcgff = offdiag_sweep(&m, Model::Dcgff, &c.lambdas, c.alpha, &opts, crate::rng::derive(seed, 1))?;
    let mut rows = vec![
        ResultRow::check(
            "srbp_intercept",
            srbp.intercept,
            srbp.fit.intercept_se,
            format!("|intercept / {} - 1| <= {}", fmt(target), c.rel_tol),
            (srbp.intercept / target - 1.0).abs() <= c.rel_tol,
        ),
        ResultRow::info("srbp_slope", srbp.fit.slope, srbp.fit.slope_se),
        ResultRow::check("dcgff_max_ratio", dcgff.max_ratio, 0.0, format!("<= {}", c.dcgff_bound), dcgff.max_ratio <= c.dcgff_bound),
        ResultRow::info("dcgff_intercept", dcgff.intercept, dcgff.fit.intercept_se),
    ];
    #[derive(Serialize)]
    struct Line {
        model: &'static str,
        lambda: f64,
        gamma2: f64,
        value: f64,
        stderr: f64,
    }
    let mut lines = Vec::new();
    for rep in [&srbp, &dcgff] {
        for k in 0..rep.lambda_sweep.len() {
            rows.push(ResultRow::info(
                format!("{}[lambda={}]", rep.model, fmt(rep.lambda_sweep[k])),
                rep.pairing_values[k],
                rep.stderr[k],
            ));
            lines.push(Line {
                model: rep.model,
                lambda: rep.lambda_sweep[k],
                gamma2: rep.gamma2_values[k],
                value: rep.pairing_values[k],
                stderr: rep.stderr[k],
            });
        }
    }
    write_rows(&dir.join("offdiag.csv"), &lines)?;
    Ok(rows)
}

fn run_lemmas(c: &LemmaConfig, seed: u64, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let suite = c.suite();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    #[derive(Serialize)]
    struct Line {
        lemma: &'static str,
        index: usize,
        lambda: f64,
        p: f64,
        q: f64,
        r: f64,
        value: Option<f64>,
    }
    let mut lines = Vec::new();
    for id in LemmaId::ALL {
        let sweep = lemma_sweep(&m, &suite, id, 2 * c.n_draws, seed);
        let base = sweep.report(c.n_draws);
        let doubled = sweep.report(2 * c.n_draws);
        let bad = base.nonconverged as f64 / c.n_draws as f64;
        let name = id.name();
        rows.push(ResultRow::check(
            format!("max[{name}]"),
            base.max_value,
            0.0,
            format!("finite and <= {}", c.threshold),
            base.max_value.is_finite() && base.max_value <= c.threshold,
        ));
        let ratio = doubled.max_value / base.max_value;
        rows.push(ResultRow::check(
            format!("doubling_ratio[{name}]"),
            ratio,
            0.0,
            format!("within 1 ± {}", c.stability),
            (ratio - 1.0).abs() <= c.stability,
        ));
        rows.push(ResultRow::check(
            format!("nonconverged_fraction[{name}]"),
            bad,
            0.0,
            format!("<= {}", c.max_nonconverged),
            bad <= c.max_nonconverged,
        ));
        let n = |v: [f64; 2]| v[0].hypot(v[1]);
        lines.extend(sweep.draws.iter().zip(&sweep.values).enumerate().map(|(i, (d, v))| Line {
            lemma: name,
            index: i,
            lambda: d.lambda,
            p: n(d.p),
            q: n(d.q),
            r: n(d.r),
            value: *v,
        }));
        reports.push(serde_json::json!({ "base": base, "doubled": doubled }));
    }
    write_rows(&dir.join("lemma_draws.csv"), &lines)?;
    write_json(&dir.join("lemma_reports.json"), &reports)?;
    Ok(rows)
}

fn run_nuisance(c: &NuisanceConfig, seed: u64, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let mags = log_times(c.momentum_range[0], c.momentum_range[1], c.n_momenta);
    let mut rows = Vec::new();
    #[derive(Serialize)]
    struct Line {
        lambda: f64,
        p3_x: f64,
        p3_y: f64,
        value: f64,
        stderr: f64,
        abs_sum: f64,
        abs_sum_stderr: f64,
    }
    let mut lines = Vec::new();
    let (mut worst, mut worst_se, mut all_ok) = (f64::MIN, 0.0, true);
    let mut worst_at = ([0.0; 2], 0.0, 0u64);
    for (a, &lam) in c.lambdas.iter().enumerate() {
        for (k, &r) in mags.iter().enumerate() {
            // Golden-angle directions.
            let th = 2.399_963_229_728_653 * k as f64;
            let p3 = [r * th.cos(), r * th.sin()];
            let key = crate::rng::derive(crate::rng::derive(seed, a as u64), k as u64);
            let e = nuisance_i(&m, p3, lam, c.alpha, c.kappa, c.samples, key)?;
            let v = e.value;
            let ok = v.value <= c.bound && v.stderr < c.max_rel_se * v.value.abs();
            all_ok &= ok;
            if v.value > worst {
                worst = v.value;
                worst_se = v.stderr;
                worst_at = (p3, lam, key);
            }
            rows.push(ResultRow::check(
                format!("I[lambda={},|p3|={}]", fmt(lam), fmt(r)),
                v.value,
                v.stderr,
                format!("<= {} with stderr < {} x value", c.bound, c.max_rel_se),
                ok,
            ));
            lines.push(Line {
                lambda: lam,
                p3_x: p3[0],
                p3_y: p3[1],
                value: v.value,
                stderr: v.stderr,
                abs_sum: e.abs_sum.value,
                abs_sum_stderr: e.abs_sum.stderr,
            });
        }
    }
    rows.push(ResultRow::check("max_I", worst, worst_se, format!("<= {}", c.bound), all_ok && worst <= c.bound));
    let (p3, lam, key) = worst_at;
    let again = nuisance_i(&m, p3, lam, c.alpha, c.kappa, 2 * c.samples, crate::rng::derive(key, 1))?.value;
    let ratio = again.value / worst;
    rows.push(ResultRow::check(
        "max_I_doubled_ratio",
        ratio,
        ratio * (again.stderr / again.value).hypot(worst_se / worst),
        format!("within 1 ± {}", c.stability),
        (ratio - 1.0).abs() <= c.stability,
    ));
    write_rows(&dir.join("nuisance.csv"), &lines)?;
    Ok(rows)
}

fn run_msd(c: &MsdConfig, seed: u64, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let grid = TorusGrid::new(c.l, c.n)?;
    let t_end = *c.times.last().expect("validated");
    let pairs: Vec<(f64, f64)> = c.times.windows(2).map(|w| (w[0], w[1])).collect();
    let mut rows = Vec::new();
    let (mut dh, mut dse) = (Vec::new(), Vec::new());
    let mut cf_lines = Vec::new();
    for (e, &eps) in c.epsilons.iter().enumerate() {
        let schedule = CouplingSchedule::weak_epsilon(c.alpha, eps);
        let spec = EnsembleSpec { schedule, grid, mollifier: m, dt: c.dt, environment: true };
        let ens = Ensemble::simulate(&spec, &c.times, eps, c.n_paths, crate::rng::derive(seed, e as u64))?;
        let meta = EnsembleMeta {
            alpha: Some(c.alpha),
            epsilon: Some(eps),
            gamma: schedule.gamma().ok(),
            dt: Some(c.dt),
            l: Some(c.l),
            n: Some(c.n),
            seed: Some(seed),
        };
        let summary = msd(&ens, meta);
        summary.write_csv(&dir.join(format!("msd_eps{eps}.csv")))?;
        let k = summary.times.len() - 1;
        let (d, se) = (summary.dhat[k], summary.dhat_se[k]);
        dh.push(d);
        dse.push(se);
        rows.push(ResultRow::check(format!("dhat[eps={eps}]"), d, se, format!("> 1 + {} stderr", c.z), d - 1.0 > c.z * se));
        let iso = isotropy_test(&ens, t_end)?;
        rows.push(ResultRow::check(
            format!("axis_diff[eps={eps}]"),
            iso.axis_diff,
            iso.axis_diff_se,
            format!("|x| <= {} stderr", c.z),
            iso.axis_diff.abs() <= c.z * iso.axis_diff_se,
        ));
        rows.push(ResultRow::check(
            format!("cross_moment[eps={eps}]"),
            iso.cross,
            iso.cross_se,
            format!("|x| <= {} stderr", c.z),
            iso.cross.abs() <= c.z * iso.cross_se,
        ));
        let cf = char_fn_test(&ens, &c.thetas, &pairs, c.n_boot, c.band_z, crate::rng::derive(seed, 100 + e as u64))?;
        rows.push(ResultRow::check(format!("charfn_max_z[eps={eps}]"), cf.max_z, 0.0, format!("<= {}", c.band_z), cf.pass));
        rows.push(ResultRow::info(format!("factorization_p[eps={eps}]"), cf.factorization_p, 0.0));
        cf_lines.extend(cf.rows.into_iter().map(|r| (eps, r)));
    }
    rows.push(ResultRow::check(
        "dhat_nondecreasing_in_inverse_eps",
        dh.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min),
        0.0,
        format!("no drop beyond {} combined stderr", c.z),
        nondecreasing(&dh, &dse, c.z),
    ));

    // Brownian control through the same integrator.
    let spec = EnsembleSpec { schedule: CouplingSchedule::strong(0.0), grid, mollifier: m, dt: c.dt, environment: false };
    let eps = *c.epsilons.last().expect("validated");
    let ens = Ensemble::simulate(&spec, &c.times, eps, c.control_paths, crate::rng::derive(seed, 999))?;
    let (d, se) = stats::effective_diffusivity(&ens, t_end)?;
    rows.push(ResultRow::check("control_dhat", d, se, format!("|x - 1| <= {} stderr", c.z), (d - 1.0).abs() <= c.z * se));

    #[derive(Serialize)]
    struct Line {
        eps: f64,
        t0: f64,
        t1: f64,
        theta_x: f64,
        theta_y: f64,
        dhat: f64,
        re: f64,
        im: f64,
        target: f64,
        deviation: f64,
        band_se: f64,
    }
    let lines: Vec<Line> = cf_lines
        .into_iter()
        .map(|(eps, r)| Line {
            eps,
            t0: r.t0,
            t1: r.t1,
            theta_x: r.theta[0],
            theta_y: r.theta[1],
            dhat: r.dhat,
            re: r.re,
            im: r.im,
            target: r.target,
            deviation: r.deviation,
            band_se: r.band_se,
        })
        .collect();
    write_rows(&dir.join("charfn.csv"), &lines)?;
    Ok(rows)
}

fn run_super(c: &SuperConfig, seed: u64, dir: &Path) -> Result<Vec<ResultRow>> {
    let m = mollifier(c.s)?;
    let grid = TorusGrid::new(c.l, c.n)?;
    let spec = EnsembleSpec { schedule: CouplingSchedule::strong(c.gamma), grid, mollifier: m, dt: c.dt, environment: c.environment };
    let times = log_times(c.t_min, c.t_max, c.n_times);
    let ens = Ensemble::simulate(&spec, &times, 1.0, c.n_paths, seed)?;
    let summary = msd(
        &ens,
        EnsembleMeta { gamma: Some(c.gamma), dt: Some(c.dt), l: Some(c.l), n: Some(c.n), seed: Some(seed), ..Default::default() },
    );
    summary.write_csv(&dir.join("msd.csv"))?;
    let r = superdiffusivity_scan(&ens)?;
    let mut rows = Vec::new();
    for k in 0..r.times.len() {
        rows.push(ResultRow::info(format!("msd_over_t[t={}]", fmt(r.times[k])), r.msd_over_t[k], r.msd_over_t_se[k]));
    }
    rows.push(ResultRow::check("endpoint_increase", r.endpoint_diff, r.endpoint_diff_se, "z > 1.645 (one-sided 95%)", r.increasing));
    rows.push(ResultRow::info("endpoint_z", r.endpoint_z, 0.0));
    rows.push(ResultRow::info("mann_kendall_z", r.mann_kendall.z, 0.0));
    rows.push(ResultRow::info("mann_kendall_p", r.mann_kendall.p_increasing, 0.0));
    if let (Some(b), Some(ci)) = (r.beta, r.beta_ci) {
        rows.push(ResultRow::info("beta", b, 0.5 * (ci[1] - ci[0]) / 1.96));
    }
    Ok(rows)
}

fn run_env_limit(c: &EnvLimitConfig, seed: u64, dir: &Path) -> Result<Vec<ResultRow>> {
    let r = env_limit_report(c, seed)?;
    r.write_csv(&dir.join("env_cov.csv"))?;
    let mut rows = Vec::new();
    for e in &r.equal_time {
        rows.push(ResultRow::check(
            format!("variance[eps={},g={}]", e.epsilon, e.g),
            e.variance,
            e.variance_se,
            format!("|x - {}| <= 3 stderr + {} x analytic", fmt(e.analytic), c.rel_tol),
            e.pass,
        ));
        rows.push(ResultRow::info(format!("mean[eps={},g={}]", e.epsilon, e.g), e.mean, e.mean_se));
    }
    rows.push(ResultRow::check("two_time_decrease", r.decay_diff, r.decay_diff_se, "z > 1.645 (one-sided 95%)", r.decreasing));
    rows.push(ResultRow::info("decay_trend_z", r.decay_trend.z, 0.0));
    if let Some(f) = &r.decay_fit {
        rows.push(ResultRow::info("decay_varsigma2", f.varsigma2, 0.5 * (f.ci[1] - f.ci[0])));
        rows.push(ResultRow::info("varsigma2_target", f.target, 0.0));
    }
    write_json(&dir.join("env_limit.json"), &r)?;
    Ok(rows)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.into()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

fn execute(p: &Prepared, dir: &Path) -> Result<Vec<ResultRow>> {
    match &p.experiment {
        Experiment::Msd(c) => run_msd(c, p.seed, dir),
        Experiment::DiffusivityPairing(c) => run_diffusivity(c, dir),
        Experiment::ReplacementGap(c) => run_gap(c, dir),
        Experiment::WeakNorm(c) => run_weak_norm(c, dir),
        Experiment::PropOff(c) => run_prop_off(c, p.seed, dir),
        Experiment::LemmaSuite(c) => run_lemmas(c, p.seed, dir),
        Experiment::NuisanceI(c) => run_nuisance(c, p.seed, dir),
        Experiment::EnvLimit(c) => run_env_limit(c, p.seed, dir),
        Experiment::Superdiffusivity(c) => run_super(c, p.seed, dir),
    }
}

/// Run a prepared experiment on `workers` threads and write
/// `<out>/<id>/summary.json`. A runtime error is recorded as a failed row.
pub fn run(p: &Prepared, out: &Path, workers: Option<usize>) -> Result<Summary> {
    let dir = out.join(p.id);
    fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers {
        builder = builder.num_threads(k.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let results = match pool.install(|| execute(p, &dir)) {
        Ok(r) => r,
        Err(e) => vec![ResultRow { name: format!("error: {e}"), value: f64::NAN, stderr_or_err: f64::NAN, threshold: None, pass: Some(false) }],
    };
    let failed = results.iter().filter(|r| r.pass == Some(false)).map(|r| r.name.clone()).collect();
    let summary = Summary {
        experiment: p.id.to_string(),
        config_echo: p.echo.clone(),
        seed: p.seed,
        results,
        failed,
        runtime_s: start.elapsed().as_secs_f64(),
        version: VERSION,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "srbp", version, about = "Self-repelling Brownian polymer simulation and quadrature lab")]
pub struct Args {
    /// Experiment id, or `list` to print the available experiments.
    pub experiment: String,
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides any `seed` in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root; results go to `<out>/<experiment>/`.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    pub workers: Option<usize>,
    /// `key=value` overrides applied on top of the configuration file.
    pub overrides: Vec<String>,
}

/// Entry point used by the binary. Returns the process exit code:
/// 0 all checks pass, 1 a check failed, 2 configuration error.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if args.experiment == "list" {
        print!("{}", format_listing());
        return 0;
    }
    let prepared = match prepare(&args.experiment, args.config.as_deref(), args.seed, &args.overrides) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("srbp: {e}");
            return 2;
        }
    };
    match run(&prepared, &args.out, args.workers) {
        Ok(s) => {
            for r in &s.results {
                let tag = match r.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "info",
                };
                println!("{tag:4}  {:<48} {:>14.6e} ± {:.2e}", r.name, r.value, r.stderr_or_err);
            }
            println!("{} in {:.1} s -> {}", s.experiment, s.runtime_s, args.out.join(prepared.id).display());
            if s.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("srbp: {e}");
            1
        }
    }
}
