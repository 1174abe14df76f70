//! Rescaled environment functionals `η^ε_t[g]` from simulated paths against
//! the covariance of the Brownian-transported gradient free field.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::{sample_with_plan, FftPlan, GradientField, TorusGrid};
use crate::error::{invalid, Error, Result};
use crate::fock::varsigma2;
use crate::kernels::Mollifier;
use crate::polymer::{environment_seed, gamma_of, CouplingSchedule, OccupationDrift, PolymerState, RunOptions};
use crate::quad::{integrate_plane, Estimate, PolarOptions, Tolerance};
use crate::rng::derive;
use crate::stats::{csv_err, jackknife_mean, mann_kendall, MannKendall};

/// Gaussian-derivative test functions built on
/// `φ(x) = exp(-|x - c|²/(2w²)) / (2πw²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `g = a φ`.
    Bump { center: [f64; 2], width: f64, weights: [f64; 2] },
    /// `g = a ∇φ`.
    Grad { center: [f64; 2], width: f64, amplitude: f64 },
    /// `g = a ∇^⊥φ`, divergence free.
    Curl { center: [f64; 2], width: f64, amplitude: f64 },
}

impl TestFunction {
    pub fn bump(center: [f64; 2], width: f64, weights: [f64; 2]) -> Self {
        TestFunction::Bump { center, width, weights }
    }

    pub fn center(&self) -> [f64; 2] {
        match *self {
            TestFunction::Bump { center, .. } | TestFunction::Grad { center, .. } | TestFunction::Curl { center, .. } => center,
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            TestFunction::Bump { width, .. } | TestFunction::Grad { width, .. } | TestFunction::Curl { width, .. } => width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width() > 0.0
            && self.width().is_finite()
            && self.center().iter().all(|c| c.is_finite())
            && match *self {
                TestFunction::Bump { weights, .. } => weights.iter().all(|w| w.is_finite()),
                TestFunction::Grad { amplitude, .. } | TestFunction::Curl { amplitude, .. } => amplitude.is_finite(),
            };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid test function {self:?}")))
        }
    }

    /// Radius beyond which `g` is below `e^{-18}` of its scale.
    pub fn support_radius(&self) -> f64 {
        let c = self.center();
        c[0].hypot(c[1]) + 6.0 * self.width()
    }

    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            TestFunction::Bump { center, width, weights } => TestFunction::Bump { center, width, weights: [k * weights[0], k * weights[1]] },
            TestFunction::Grad { center, width, amplitude } => TestFunction::Grad { center, width, amplitude: k * amplitude },
            TestFunction::Curl { center, width, amplitude } => TestFunction::Curl { center, width, amplitude: k * amplitude },
        }
    }

    #[inline]
    fn phi(&self, x: [f64; 2]) -> ([f64; 2], f64) {
        let (c, w) = (self.center(), self.width());
        let d = [x[0] - c[0], x[1] - c[1]];
        let w2 = w * w;
        (d, (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * w2)).exp() / (TAU * w2))
    }

    #[inline]
    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        let (d, f) = self.phi(x);
        match *self {
            TestFunction::Bump { weights, .. } => [weights[0] * f, weights[1] * f],
            TestFunction::Grad { width, amplitude, .. } => {
                let k = -amplitude * f / (width * width);
                [k * d[0], k * d[1]]
            }
            TestFunction::Curl { width, amplitude, .. } => {
                let k = amplitude * f / (width * width);
                [k * d[1], -k * d[0]]
            }
        }
    }

    /// `div g` in closed form.
    pub fn div(&self, x: [f64; 2]) -> f64 {
        let (d, f) = self.phi(x);
        let w2 = self.width() * self.width();
        match *self {
            TestFunction::Bump { weights, .. } => -(weights[0] * d[0] + weights[1] * d[1]) / w2 * f,
            TestFunction::Grad { amplitude, .. } => amplitude * ((d[0] * d[0] + d[1] * d[1]) / (w2 * w2) - 2.0 / w2) * f,
            TestFunction::Curl { .. } => 0.0,
        }
    }

    /// `ĝ(p) = ∫ e^{-ip·x} g(x) dx`, both components.
    pub fn hat(&self, p: [f64; 2]) -> [Complex64; 2] {
        let (c, w) = (self.center(), self.width());
        let ph = Complex64::from_polar((-0.5 * w * w * (p[0] * p[0] + p[1] * p[1])).exp(), -(p[0] * c[0] + p[1] * c[1]));
        let i = Complex64::i();
        match *self {
            TestFunction::Bump { weights, .. } => [ph * weights[0], ph * weights[1]],
            TestFunction::Grad { amplitude, .. } => [i * ph * (amplitude * p[0]), i * ph * (amplitude * p[1])],
            TestFunction::Curl { amplitude, .. } => [i * ph * (-amplitude * p[1]), i * ph * (amplitude * p[0])],
        }
    }

    /// `p · ĝ(p)`, the transform of `-i div g`.
    #[inline]
    pub fn p_dot_hat(&self, p: [f64; 2]) -> Complex64 {
        let (c, w) = (self.center(), self.width());
        let r2 = p[0] * p[0] + p[1] * p[1];
        let ph = Complex64::from_polar((-0.5 * w * w * r2).exp(), -(p[0] * c[0] + p[1] * c[1]));
        match *self {
            TestFunction::Bump { weights, .. } => ph * (weights[0] * p[0] + weights[1] * p[1]),
            TestFunction::Grad { amplitude, .. } => Complex64::i() * ph * (amplitude * r2),
            TestFunction::Curl { .. } => Complex64::new(0.0, 0.0),
        }
    }

    /// Size of `|p·ĝ|/|p|`, used to set absolute quadrature tolerances.
    fn scale(&self) -> f64 {
        match *self {
            TestFunction::Bump { weights, .. } => weights[0].hypot(weights[1]),
            TestFunction::Grad { width, amplitude, .. } | TestFunction::Curl { width, amplitude, .. } => amplitude.abs() / width,
        }
    }
}

fn transported_cov(g1: &TestFunction, g2: &TestFunction, damp: f64) -> Result<Estimate> {
    g1.validate()?;
    g2.validate()?;
    let wmin = g1.width().min(g2.width());
    let (c1, c2) = (g1.center(), g2.center());
    let sep = (c1[0] - c2[0]).hypot(c1[1] - c2[1]);
    let opt = PolarOptions {
        r_min: 1e-8 / wmin,
        r_max: 12.0 / wmin,
        panels_per_efold: 1.0,
        angular_panels: 8 + (2.0 * sep / wmin) as usize,
        tol: Tolerance::new(1e-7, 1e-10 * g1.scale() * g2.scale(), 4_000_000),
    };
    let e = integrate_plane(
        |p| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            (g1.p_dot_hat(p) * g2.p_dot_hat(p).conj()).re / r2 * (-0.5 * damp * r2).exp()
        },
        &[[0.0, 0.0]],
        &opt,
    )?;
    Ok(e.scale(1.0 / (4.0 * PI * PI)))
}

/// `E[η̄[g₁] η̄[g₂]] = (2π)⁻² ∫ (p·ĝ₁)(p·ĝ₂)* |p|⁻² dp`, equal to
/// `∫∫ div g₁(x) div g₂(y) G(x - y) dx dy` and to the pairing against the
/// environment covariance `-∂ᵢ∂ⱼ V∗G` as `V → δ`.
pub fn gff_grad_cov(g1: &TestFunction, g2: &TestFunction) -> Result<Estimate> {
    transported_cov(g1, g2, 0.0)
}

/// `E[η̄_t[g₁] η̄₀[g₂]]` for `η̄_t(x) = η̄₀(x + ςB_t)`: the integrand of
/// [`gff_grad_cov`] damped by `exp(-ς² t |p|²/2)`.
pub fn slte_two_time_cov(g1: &TestFunction, g2: &TestFunction, t: f64, varsigma2: f64) -> Result<Estimate> {
    if !(t >= 0.0) || !(varsigma2 >= 0.0) {
        return Err(invalid(format!("two-time covariance needs t, ς² ≥ 0 (t = {t}, ς² = {varsigma2})")));
    }
    transported_cov(g1, g2, varsigma2 * t)
}

/// `η^ε_t[g] = ε Σ_y h² η_t(y)·g(εy)` for every `g`, where
/// `η_t(y) = D(y + X_t)/γ` is read off the stored drift field. With `γ = 0`
/// the field is `env` itself.
pub fn eta_functionals(
    occ: &OccupationDrift,
    x_t: [f64; 2],
    env: Option<&GradientField>,
    gs: &[TestFunction],
    eps: f64,
) -> Result<Vec<f64>> {
    let grid = occ.grid;
    if !(eps > 0.0) {
        return Err(invalid("ε must be positive"));
    }
    let radius = gs.iter().map(|g| g.support_radius()).fold(0.0, f64::max) / eps;
    if radius > grid.l / 2.0 {
        return Err(Error::TorusGuard(format!("test-function support {radius:.2} exceeds L/2 = {:.2}", grid.l / 2.0)));
    }
    let inv_gamma = if occ.gamma > 0.0 { 1.0 / occ.gamma } else { 0.0 };
    if occ.gamma == 0.0 && env.is_none() {
        return Ok(vec![0.0; gs.len()]);
    }
    let h = grid.h();
    let n = grid.n as i64;
    let x0 = [grid.wrap(x_t[0]), grid.wrap(x_t[1])];
    let span = (radius / h).ceil() as i64 + 1;
    let (ci, cj) = ((x0[0] / h).round() as i64, (x0[1] / h).round() as i64);
    let mut out = vec![0.0; gs.len()];
    for a in ci - span..=ci + span {
        let i = a.rem_euclid(n) as usize;
        let dy0 = grid.min_image(a as f64 * h - x0[0]);
        for b in cj - span..=cj + span {
            let j = b.rem_euclid(n) as usize;
            let dy1 = grid.min_image(b as f64 * h - x0[1]);
            if dy0.hypot(dy1) > radius {
                continue;
            }
            let k = grid.index(i, j);
            let eta = if occ.gamma > 0.0 {
                [occ.field[k][0] * inv_gamma, occ.field[k][1] * inv_gamma]
            } else {
                env.map(|e| e.values[k]).unwrap_or([0.0, 0.0])
            };
            let y = [eps * dy0, eps * dy1];
            for (o, g) in out.iter_mut().zip(gs) {
                let v = g.value(y);
                *o += eta[0] * v[0] + eta[1] * v[1];
            }
        }
    }
    let w = eps * h * h;
    Ok(out.into_iter().map(|v| v * w).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvLimitConfig {
    pub alpha: f64,
    pub epsilons: Vec<f64>,
    pub s: f64,
    pub l: f64,
    pub n: usize,
    pub dt: f64,
    pub n_paths: usize,
    /// Macroscopic checkpoint times; the first must be 0.
    pub times: Vec<f64>,
    pub test_functions: Vec<TestFunction>,
    /// Relative slack added to `3σ` in the equal-time comparison.
    pub rel_tol: f64,
    /// Test function (index) used for the decay check and fit.
    pub decay_function: usize,
    /// `ε` (index) at which the dynamic checks are made.
    pub dynamic_epsilon: usize,
}

impl Default for EnvLimitConfig {
    fn default() -> Self {
        EnvLimitConfig {
            alpha: 1.0,
            epsilons: vec![0.2, 0.1],
            s: crate::kernels::DEFAULT_S,
            // Support radius 8 at ε = 0.1 needs L ≥ 160; h = 0.371 ≤ s/2.
            l: 190.0,
            n: 512,
            dt: 1e-3,
            n_paths: 4000,
            times: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            test_functions: default_test_functions(),
            rel_tol: 0.05,
            decay_function: 0,
            dynamic_epsilon: 1,
        }
    }
}

pub fn default_test_functions() -> Vec<TestFunction> {
    vec![
        TestFunction::bump([0.0, 0.0], 1.0, [1.0, 0.0]),
        TestFunction::bump([0.5, 0.0], 1.25, [0.0, 1.0]),
        TestFunction::Grad { center: [0.0, 0.0], width: 1.0, amplitude: 1.0 },
        TestFunction::bump([-0.5, 0.5], 1.0, [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2]),
    ]
}

impl EnvLimitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(invalid("env-limit needs α ≥ 0 and ε ∈ (0, 1)"));
        }
        if self.times.first() != Some(&0.0) || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("checkpoint times must start at 0 and increase"));
        }
        if self.test_functions.is_empty() || self.decay_function >= self.test_functions.len() {
            return Err(invalid("decay_function must index the test-function list"));
        }
        if self.dynamic_epsilon >= self.epsilons.len() {
            return Err(invalid("dynamic_epsilon must index the ε list"));
        }
        if self.n_paths < 2 || !(self.dt > 0.0) || !(self.rel_tol >= 0.0) {
            return Err(invalid("env-limit needs n_paths ≥ 2, dt > 0 and rel_tol ≥ 0"));
        }
        self.test_functions.iter().try_for_each(|g| g.validate())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CovRow {
    pub epsilon: f64,
    pub t: f64,
    pub g1: usize,
    pub g2: usize,
    pub emp_cov: f64,
    pub emp_se: f64,
    pub analytic_cov: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EqualTimeCheck {
    pub epsilon: f64,
    pub g: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub analytic: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub varsigma2: f64,
    pub ci: [f64; 2],
    pub target: f64,
    pub chi2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvLimitReport {
    pub gamma: Vec<f64>,
    pub equal_time: Vec<EqualTimeCheck>,
    pub rows: Vec<CovRow>,
    /// Paired `E[η₀[g]²] - E[η_T[g] η₀[g]]` at the last checkpoint.
    pub decay_diff: f64,
    pub decay_diff_se: f64,
    pub decreasing: bool,
    pub decay_trend: MannKendall,
    pub decay_fit: Option<DecayFit>,
}

impl EnvLimitReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["epsilon", "t", "g1", "g2", "emp_cov", "emp_se", "analytic_cov"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                format!("{:e}", r.epsilon),
                format!("{:e}", r.t),
                r.g1.to_string(),
                r.g2.to_string(),
                format!("{:e}", r.emp_cov),
                format!("{:e}", r.emp_se),
                format!("{:e}", r.analytic_cov),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Functionals of one annealed path: `[checkpoint][test function]`.
pub fn path_functionals(cfg: &EnvLimitConfig, eps: f64, plan: &FftPlan, seed: u64) -> Result<Vec<Vec<f64>>> {
    let grid = TorusGrid::new(cfg.l, cfg.n)?;
    let m = Mollifier::new(cfg.s)?;
    let gamma = gamma_of(&CouplingSchedule::weak_epsilon(cfg.alpha, eps))?;
    let env = sample_with_plan(grid, &m, environment_seed(seed), plan);
    let occ = OccupationDrift::new(grid, m, gamma, Some(&env))?;
    let mut st = PolymerState::new(occ, seed);
    let opts = RunOptions::new(cfg.dt);
    let mut done = 0usize;
    let mut out = Vec::with_capacity(cfg.times.len());
    for &t in &cfg.times {
        let target = (t / (eps * eps) / cfg.dt).round() as usize;
        if target > opts.max_steps {
            return Err(invalid(format!("{target} steps exceed the cap of {}", opts.max_steps)));
        }
        st.advance(target - done, &opts, done, None)?;
        done = target;
        out.push(eta_functionals(&st.occ, st.x, Some(&env), &cfg.test_functions, eps)?);
    }
    Ok(out)
}

fn mean_and_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    jackknife_mean(&xs.collect::<Vec<_>>())
}

/// Run the annealed ensemble for every `ε` and compare with the transported
/// field. Path `i` at `ε` index `e` uses seed `derive(derive(seed, e), i)`.
pub fn env_limit_report(cfg: &EnvLimitConfig, seed: u64) -> Result<EnvLimitReport> {
    cfg.validate()?;
    let grid = TorusGrid::new(cfg.l, cfg.n)?;
    let m = Mollifier::new(cfg.s)?;
    grid.check_resolves(&m)?;
    let plan = FftPlan::new(cfg.n);
    let vs2 = varsigma2(cfg.alpha);
    let ng = cfg.test_functions.len();
    let gs = &cfg.test_functions;

    let mut gammas = Vec::new();
    let mut equal_time = Vec::new();
    let mut rows = Vec::new();
    let mut dynamic = None;
    for (e, &eps) in cfg.epsilons.iter().enumerate() {
        gammas.push(gamma_of(&CouplingSchedule::weak_epsilon(cfg.alpha, eps))?);
        let key = derive(seed, e as u64);
        let vals: Vec<Vec<Vec<f64>>> =
            (0..cfg.n_paths).into_par_iter().map(|i| path_functionals(cfg, eps, &plan, derive(key, i as u64))).collect::<Result<_>>()?;

        for g in 0..ng {
            let (mean, mean_se) = mean_and_se(vals.iter().map(|v| v[0][g]));
            let (var, var_se) = mean_and_se(vals.iter().map(|v| v[0][g] * v[0][g]));
            let analytic = gff_grad_cov(&gs[g], &gs[g])?.value;
            let pass = (var - analytic).abs() <= 3.0 * var_se + cfg.rel_tol * analytic.abs();
            equal_time.push(EqualTimeCheck { epsilon: eps, g, mean, mean_se, variance: var, variance_se: var_se, analytic, pass });
        }
        for (k, &t) in cfg.times.iter().enumerate() {
            for g1 in 0..ng {
                for g2 in 0..ng {
                    let (c, se) = mean_and_se(vals.iter().map(|v| v[k][g1] * v[0][g2]));
                    rows.push(CovRow {
                        epsilon: eps,
                        t,
                        g1,
                        g2,
                        emp_cov: c,
                        emp_se: se,
                        analytic_cov: slte_two_time_cov(&gs[g1], &gs[g2], t, vs2)?.value,
                    });
                }
            }
        }
        if e == cfg.dynamic_epsilon {
            dynamic = Some(vals);
        }
    }

    let vals = dynamic.expect("validated index");
    let g = cfg.decay_function;
    let last = cfg.times.len() - 1;
    let (diff, diff_se) = mean_and_se(vals.iter().map(|v| v[0][g] * v[0][g] - v[last][g] * v[0][g]));
    let curve: Vec<(f64, f64)> = (0..cfg.times.len()).map(|k| mean_and_se(vals.iter().map(|v| v[k][g] * v[0][g]))).collect();
    let decay_trend = mann_kendall(&curve.iter().map(|c| -c.0).collect::<Vec<_>>());
    let decay_fit = fit_decay(&gs[g], &cfg.times, &curve, vs2).ok();
    Ok(EnvLimitReport {
        gamma: gammas,
        equal_time,
        rows,
        decay_diff: diff,
        decay_diff_se: diff_se,
        decreasing: last > 0 && diff_se > 0.0 && diff / diff_se > 1.644_853_626_951_472_2,
        decay_trend,
        decay_fit,
    })
}

/// Fit `ς²` in `C(t) = C(0)_emp · slte(g, g, t, ς²) / gff(g, g)` by χ²
/// over the positive times; the interval is `Δχ² = 1`, widened by the
/// reduced χ² when that exceeds one.
pub fn fit_decay(g: &TestFunction, times: &[f64], curve: &[(f64, f64)], target: f64) -> Result<DecayFit> {
    let c0 = curve[0].0;
    let base = gff_grad_cov(g, g)?.value;
    let pts: Vec<usize> = (1..times.len()).filter(|&k| curve[k].1 > 0.0).collect();
    if pts.is_empty() || !(c0 > 0.0) {
        return Err(invalid("decay fit needs positive times and a positive variance"));
    }
    let chi2 = |ls: f64| -> f64 {
        let v = ls.exp();
        pts.iter()
            .map(|&k| {
                let model = c0 * slte_two_time_cov(g, g, times[k], v).map(|e| e.value).unwrap_or(f64::NAN) / base;
                ((curve[k].0 - model) / curve[k].1).powi(2)
            })
            .sum()
    };
    let (lo, hi) = (0.01f64.ln(), 1000f64.ln());
    // Golden-section search in log ς².
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (chi2(c), chi2(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = chi2(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = chi2(d);
        }
    }
    let best = 0.5 * (a + b);
    let fmin = chi2(best);
    let dof = pts.len().saturating_sub(1).max(1) as f64;
    let level = fmin + (fmin / dof).max(1.0);
    let edge = |mut inside: f64, mut outside: f64| {
        if chi2(outside) <= level {
            return outside;
        }
        for _ in 0..60 {
            let mid = 0.5 * (inside + outside);
            if chi2(mid) <= level {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    Ok(DecayFit { varsigma2: best.exp(), ci: [edge(best, lo).exp(), edge(best, hi).exp()], target, chi2: fmin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gauss_legendre;

    fn dip(c: [f64; 2]) -> TestFunction {
        TestFunction::bump(c, 1.0, [1.0, 0.0])
    }

    /// Tensor Gauss–Legendre over `[c - 8w, c + 8w]²`.
    fn box_rule(g: &TestFunction, n: usize) -> Vec<([f64; 2], f64)> {
        let (x, w) = gauss_legendre(n);
        let (c, r) = (g.center(), 8.0 * g.width());
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                out.push(([c[0] + r * x[i], c[1] + r * x[j]], r * r * w[i] * w[j]));
            }
        }
        out
    }

    #[test]
    fn closed_forms_match_numerics() {
        let gs = [
            TestFunction::bump([0.3, -0.2], 0.7, [0.4, -1.1]),
            TestFunction::Grad { center: [0.1, 0.2], width: 0.9, amplitude: 1.3 },
            TestFunction::Curl { center: [-0.4, 0.0], width: 1.1, amplitude: 0.8 },
        ];
        let h = 1e-5;
        for g in &gs {
            for x in [[0.0, 0.0], [0.5, 0.7], [-1.0, 0.3]] {
                let dx = (g.value([x[0] + h, x[1]])[0] - g.value([x[0] - h, x[1]])[0]) / (2.0 * h);
                let dy = (g.value([x[0], x[1] + h])[1] - g.value([x[0], x[1] - h])[1]) / (2.0 * h);
                assert!((dx + dy - g.div(x)).abs() < 1e-7, "{g:?}");
            }
            // Transform by quadrature at a few momenta.
            let rule = box_rule(g, 60);
            for p in [[0.0, 0.0], [0.7, -0.3], [1.5, 2.0]] {
                let mut acc = [Complex64::new(0.0, 0.0); 2];
                for (x, w) in &rule {
                    let e = Complex64::from_polar(*w, -(p[0] * x[0] + p[1] * x[1]));
                    let v = g.value(*x);
                    acc[0] += e * v[0];
                    acc[1] += e * v[1];
                }
                let want = g.hat(p);
                for k in 0..2 {
                    assert!((acc[k] - want[k]).norm() < 1e-9, "{g:?} {p:?}");
                }
            }
        }
    }

    #[test]
    fn variance_positive_and_bilinear() {
        let g = dip([0.0, 0.0]);
        let v = gff_grad_cov(&g, &g).unwrap().value;
        // Same-centre bump: |a|²/(8π w²).
        assert!((v - 1.0 / (8.0 * PI)).abs() < 1e-8, "{v}");
        let h = TestFunction::Grad { center: [0.5, 0.0], width: 1.2, amplitude: 1.0 };
        let a = gff_grad_cov(&g.scaled(2.5), &h).unwrap().value;
        let b = gff_grad_cov(&g, &h).unwrap().value;
        assert!((a - 2.5 * b).abs() < 1e-9 * b.abs().max(1e-12));
        let c = TestFunction::Curl { center: [0.0, 0.0], width: 1.0, amplitude: 1.0 };
        assert_eq!(gff_grad_cov(&c, &c).unwrap().value, 0.0);
    }

    #[test]
    fn far_bumps_match_real_space_quadrature() {
        let g1 = dip([0.0, 0.0]);
        let mut prev = None;
        for d in [8.0, 12.0, 16.0] {
            let g2 = dip([d, 0.0]);
            let f = gff_grad_cov(&g1, &g2).unwrap().value;
            let (r1, r2) = (box_rule(&g1, 40), box_rule(&g2, 40));
            let d2: Vec<(f64, f64)> = r2.iter().map(|(y, w)| (g2.div(*y) * w, 0.0)).collect();
            let mut direct = 0.0;
            for (x, wx) in &r1 {
                let a = g1.div(*x) * wx;
                for ((y, _), (b, _)) in r2.iter().zip(&d2) {
                    direct += a * b * crate::kernels::green([x[0] - y[0], x[1] - y[1]]).unwrap();
                }
            }
            assert!((f / direct - 1.0).abs() < 0.01, "d = {d}: {f} vs {direct}");
            // Dipole-dipole decay ∝ d⁻².
            if let Some((d0, f0)) = prev {
                let ratio: f64 = f / f0 * (d / d0 as f64).powi(2);
                assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
            }
            prev = Some((d, f));
        }
    }

    #[test]
    fn matches_environment_covariance_pairing() {
        // ∫∫ g₁ᵢ(x) g₂ⱼ(y) (-∂ᵢ∂ⱼG)(x - y), well-separated supports.
        let g1 = TestFunction::bump([0.0, 0.0], 0.8, [0.6, 0.8]);
        let g2 = TestFunction::bump([9.0, 4.0], 0.9, [0.3, -1.0]);
        let (r1, r2) = (box_rule(&g1, 48), box_rule(&g2, 48));
        let mut direct = 0.0;
        for (x, wx) in &r1 {
            let a = g1.value(*x);
            for (y, wy) in &r2 {
                let b = g2.value(*y);
                let z = [x[0] - y[0], x[1] - y[1]];
                let z2 = z[0] * z[0] + z[1] * z[1];
                // -∂ᵢ∂ⱼG = (δᵢⱼ|z|² - 2zᵢzⱼ)/(2π|z|⁴).
                let k = |i: usize, j: usize| ((if i == j { z2 } else { 0.0 }) - 2.0 * z[i] * z[j]) / (TAU * z2 * z2);
                let mut s = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        s += a[i] * b[j] * k(i, j);
                    }
                }
                direct += s * wx * wy;
            }
        }
        let f = gff_grad_cov(&g1, &g2).unwrap().value;
        assert!((f / direct - 1.0).abs() < 0.01, "{f} vs {direct}");
    }

    #[test]
    fn two_time_covariance_properties() {
        let g = dip([0.0, 0.0]);
        let c0 = gff_grad_cov(&g, &g).unwrap().value;
        assert!((slte_two_time_cov(&g, &g, 0.0, 3.0).unwrap().value - c0).abs() < 1e-15);
        let mut prev = c0;
        for k in 1..20 {
            let t = 0.1 * k as f64;
            let c = slte_two_time_cov(&g, &g, t, 3.683).unwrap().value;
            assert!(c < prev && c <= c0);
            // Same-centre closed form 1/(8π(w² + ς²t/2)).
            assert!((c - 1.0 / (8.0 * PI * (1.0 + 0.5 * 3.683 * t))).abs() < 1e-8);
            prev = c;
        }
        assert!(slte_two_time_cov(&g, &g, 1e6, 3.683).unwrap().value < 1e-6 * c0);
        assert!(slte_two_time_cov(&g, &g, -1.0, 1.0).is_err());
    }

    fn small_setup(gamma: f64) -> (TorusGrid, Mollifier, GradientField, OccupationDrift) {
        let grid = TorusGrid::new(64.0, 256).unwrap();
        let m = Mollifier::new(0.75).unwrap();
        let env = crate::envgen::sample_environment(grid, &m, 5).unwrap();
        let occ = OccupationDrift::new(grid, m, gamma, Some(&env)).unwrap();
        (grid, m, env, occ)
    }

    #[test]
    fn functional_is_linear_and_zero_on_zero() {
        let (_, _, env, occ) = small_setup(0.5);
        let g = TestFunction::bump([0.1, 0.0], 1.0, [1.0, 0.5]);
        let h = TestFunction::Grad { center: [0.0, 0.2], width: 0.8, amplitude: 1.0 };
        let v = eta_functionals(&occ, [1.3, -2.0], Some(&env), &[g, h, g.scaled(-2.0), g.scaled(0.0)], 0.2).unwrap();
        assert!((v[2] + 2.0 * v[0]).abs() <= 1e-13 * v[0].abs().max(1e-300));
        assert_eq!(v[3], 0.0);
        // γ = 0 falls back to the environment; the γω field divided by γ agrees.
        let (_, _, env0, occ0) = small_setup(0.0);
        let w = eta_functionals(&occ0, [1.3, -2.0], Some(&env0), &[g], 0.2).unwrap();
        assert!((w[0] - v[0]).abs() < 1e-12 * v[0].abs());
    }

    #[test]
    fn functional_torus_guard() {
        let (_, _, env, occ) = small_setup(0.5);
        let g = TestFunction::bump([0.0, 0.0], 1.0, [1.0, 0.0]);
        assert!(matches!(eta_functionals(&occ, [0.0, 0.0], Some(&env), &[g], 0.1), Err(Error::TorusGuard(_))));
    }

    #[test]
    fn frame_identity_with_narrow_bump() {
        // A narrow bump at the particle reads off D(X)/γ.
        let grid = TorusGrid::new(38.4, 1024).unwrap();
        let m = Mollifier::new(0.75).unwrap();
        let gamma = 0.7;
        let mut occ = OccupationDrift::new(grid, m, gamma, None).unwrap();
        for k in 0..20 {
            let a = 0.3 * k as f64;
            occ.deposit([0.8 * a.cos(), 0.5 * a.sin()], 0.05);
        }
        let eps = 0.1;
        let width = eps * m.s / 8.0;
        for x in [[0.3, 0.2], [-0.4, 0.9], [1.5, -0.2]] {
            let d = occ.drift_at(x);
            let gs = [TestFunction::bump([0.0, 0.0], width, [1.0, 0.0]), TestFunction::bump([0.0, 0.0], width, [0.0, 1.0])];
            let v = eta_functionals(&occ, x, None, &gs, eps).unwrap();
            let norm = d[0].hypot(d[1]) / gamma;
            for c in 0..2 {
                assert!((eps * v[c] - d[c] / gamma).abs() < 0.02 * norm, "{x:?} {c}: {} vs {}", eps * v[c], d[c] / gamma);
            }
        }
    }

    #[test]
    fn initial_functional_is_centred_gaussian_with_gff_variance() {
        let cfg = EnvLimitConfig {
            epsilons: vec![0.25],
            l: 128.0,
            n: 512,
            n_paths: 600,
            times: vec![0.0],
            test_functions: vec![TestFunction::bump([0.0, 0.0], 1.0, [1.0, 0.0])],
            dynamic_epsilon: 0,
            ..EnvLimitConfig::default()
        };
        let r = env_limit_report(&cfg, 7).unwrap();
        let e = &r.equal_time[0];
        assert!(e.mean.abs() < 3.0 * e.mean_se);
        assert!(e.pass, "{e:?}");
    }

    #[test]
    fn decay_fit_recovers_known_rate() {
        let g = dip([0.0, 0.0]);
        let times = [0.0, 0.1, 0.2, 0.3];
        let curve: Vec<(f64, f64)> = times.iter().map(|&t| (slte_two_time_cov(&g, &g, t, 2.5).unwrap().value, 1e-4)).collect();
        let f = fit_decay(&g, &times, &curve, 2.5).unwrap();
        assert!((f.varsigma2 - 2.5).abs() < 1e-3, "{f:?}");
        assert!(f.ci[0] <= 2.5 && f.ci[1] >= 2.5);
    }
}
