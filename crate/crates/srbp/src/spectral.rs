//! Momentum-space multipliers and the quadrature checks built on them.
//!
//! All λ-indexed quantities take `γ = γ(λ, α)` from the weak-coupling
//! schedule `γ² log(1 + 1/λ) = α²` unless a function says otherwise.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{LogRadial, McEstimate};
use crate::kernels::Mollifier;
use crate::polymer::{gamma_of, CouplingSchedule};
use crate::quad::{cubature, gauss_legendre, integrate_plane, integrate_radial_breaks, Estimate, PolarOptions, Rect, Tolerance};
use crate::rng::Stream;

pub const KAPPA: f64 = 1.0 / 3.0;

/// `g(y) = sqrt(4πy + 1) - 1`, evaluated without cancellation at small `y`.
#[inline]
fn g_raw(y: f64) -> f64 {
    let x = 4.0 * PI * y;
    x / ((x + 1.0).sqrt() + 1.0)
}

pub fn g_of(y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(invalid(format!("g needs y ≥ 0, got {y}")));
    }
    Ok(g_raw(y))
}

/// Right-hand side of the flow identity `g' = 2π / (1 + g)`.
pub fn g_flow(y: f64) -> f64 {
    TAU / (1.0 + g_raw(y))
}

/// Weak-coupling `γ(λ, α)`; `α = 0` gives `γ = 0`.
pub fn weak_gamma(lambda: f64, alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        if !(lambda > 0.0) {
            return Err(invalid(format!("λ must be positive, got {lambda}")));
        }
        return Ok(0.0);
    }
    gamma_of(&CouplingSchedule::weak_lambda(alpha, lambda))
}

/// `ℓ^λ(y) = γ² log(1 + 1/(λ + y))`.
#[inline]
pub fn ell_lambda(y: f64, lambda: f64, gamma: f64) -> f64 {
    gamma * gamma * (1.0 / (lambda + y)).ln_1p()
}

/// `g^λ` as a function of `|p|` with `γ` given.
#[inline]
pub fn g_lambda_abs(p: f64, lambda: f64, gamma: f64) -> f64 {
    g_raw(ell_lambda(0.5 * p * p, lambda, gamma))
}

/// `g^λ(p) = g(ℓ^λ(|p|²/2))` under the weak-coupling schedule.
pub fn g_lambda(p: [f64; 2], lambda: f64, alpha: f64) -> Result<f64> {
    let gamma = weak_gamma(lambda, alpha)?;
    Ok(g_lambda_abs(p[0].hypot(p[1]), lambda, gamma))
}

// ---------------------------------------------------------------------------
// Tabulated radial functions

/// A radial function tabulated on a log-spaced `|p|` grid, interpolated by a
/// natural cubic spline in `log |p|`. Positive tables are splined in
/// `log f`, which is close to linear in both tails. Outside the table the end
/// values are held.
#[derive(Clone, Debug, Serialize)]
pub struct RadialMultiplier {
    pub lambda: f64,
    pub alpha: f64,
    pub p_min: f64,
    pub p_max: f64,
    log_p: Vec<f64>,
    values: Vec<f64>,
    /// Spline ordinates (`log f` when `log_values`) and second derivatives.
    knots: Vec<f64>,
    curvature: Vec<f64>,
    log_values: bool,
}

impl RadialMultiplier {
    pub fn tabulate<F: Fn(f64) -> f64 + Sync>(
        lambda: f64,
        alpha: f64,
        p_min: f64,
        p_max: f64,
        per_decade: usize,
        f: F,
    ) -> Result<Self> {
        if !(p_min > 0.0 && p_max > p_min) || per_decade < 2 {
            return Err(invalid("tabulation needs 0 < p_min < p_max and ≥ 2 points per decade"));
        }
        let (a, b) = (p_min.ln(), p_max.ln());
        let n = ((b - a) / 10f64.ln() * per_decade as f64).ceil() as usize + 1;
        let log_p: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
        let values: Vec<f64> = log_p.par_iter().map(|&u| f(u.exp())).collect();
        let log_values = values.iter().all(|&v| v > 0.0);
        let knots: Vec<f64> = if log_values { values.iter().map(|v| v.ln()).collect() } else { values.clone() };
        let curvature = natural_spline(&log_p, &knots);
        Ok(RadialMultiplier { lambda, alpha, p_min, p_max, log_p, values, knots, curvature, log_values })
    }

    /// Table of `g^λ` on `[p_min, p_max]`.
    pub fn g_lambda(lambda: f64, alpha: f64, p_min: f64, p_max: f64, per_decade: usize) -> Result<Self> {
        let gamma = weak_gamma(lambda, alpha)?;
        Self::tabulate(lambda, alpha, p_min, p_max, per_decade, |p| g_lambda_abs(p, lambda, gamma))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn eval(&self, p: f64) -> f64 {
        let n = self.values.len();
        if p <= self.p_min {
            return self.values[0];
        }
        if p >= self.p_max {
            return self.values[n - 1];
        }
        let u = p.ln();
        let k = (self.log_p.partition_point(|&x| x <= u) - 1).min(n - 2);
        let h = self.log_p[k + 1] - self.log_p[k];
        let a = (self.log_p[k + 1] - u) / h;
        let b = 1.0 - a;
        let y = a * self.knots[k]
            + b * self.knots[k + 1]
            + ((a * a * a - a) * self.curvature[k] + (b * b * b - b) * self.curvature[k + 1]) * h * h / 6.0;
        if self.log_values {
            y.exp()
        } else {
            y
        }
    }

    /// Largest relative change of the interpolant at `probes` points when the
    /// table density doubles.
    pub fn refinement_change(&self, finer: &RadialMultiplier, probes: usize) -> f64 {
        let (a, b) = (self.p_min.ln(), self.p_max.ln());
        (0..probes)
            .map(|i| {
                let p = (a + (b - a) * (i as f64 + 0.5) / probes as f64).exp();
                let (x, y) = (self.eval(p), finer.eval(p));
                (x - y).abs() / y.abs().max(1e-300)
            })
            .fold(0.0, f64::max)
    }
}

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn natural_spline(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
        c[i] = h1 / diag;
        d[i] = (rhs - h0 * d[i - 1]) / diag;
    }
    for i in (1..n - 1).rev() {
        m[i] = d[i] - c[i] * m[i + 1];
    }
    m
}

// ---------------------------------------------------------------------------
// Regions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Bulk,
    Nuisance,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPredicate {
    pub kind: RegionKind,
    pub kappa: f64,
}

impl RegionPredicate {
    pub fn new(kind: RegionKind, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(invalid(format!("κ must lie in (0, 1), got {kappa}")));
        }
        Ok(RegionPredicate { kind, kappa })
    }

    pub fn bulk() -> Self {
        RegionPredicate { kind: RegionKind::Bulk, kappa: KAPPA }
    }

    #[inline]
    pub fn contains(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        match self.kind {
            RegionKind::Full => true,
            RegionKind::Bulk => is_bulk(self.kappa, p, q),
            RegionKind::Nuisance => !is_bulk(self.kappa, p, q),
        }
    }
}

/// Bulk: `|p + q| ≥ κ|q|`. Not symmetric in `(p, q)`.
#[inline]
fn is_bulk(kappa: f64, p: [f64; 2], q: [f64; 2]) -> bool {
    (p[0] + q[0]).hypot(p[1] + q[1]) >= kappa * q[0].hypot(q[1])
}

pub fn region_indicator(kind: RegionKind, kappa: f64, p: [f64; 2], q: [f64; 2]) -> Result<u8> {
    Ok(RegionPredicate::new(kind, kappa)?.contains(p, q) as u8)
}

// ---------------------------------------------------------------------------
// The diagonal multiplier m^λ

/// Tolerance used by `m_lambda` and the gap scan.
pub const M_TOL: Tolerance = Tolerance::new(1e-7, 1e-14, 4_000_000);

fn rects_from_breaks(u: &[f64], th: &[f64]) -> Vec<Rect> {
    let mut out = Vec::with_capacity(u.len() * th.len());
    for a in u.windows(2) {
        for b in th.windows(2) {
            if a[1] > a[0] && b[1] > b[0] {
                out.push(Rect {
                    domain: 0,
                    center: [0.5 * (a[0] + a[1]), 0.5 * (b[0] + b[1])],
                    half: [0.5 * (a[1] - a[0]), 0.5 * (b[1] - b[0])],
                });
            }
        }
    }
    out
}

fn sorted_breaks(lo: f64, hi: f64, per_unit: f64, extra: &[f64]) -> Vec<f64> {
    let n = ((hi - lo) * per_unit).ceil().max(1.0) as usize;
    let mut v: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    v.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `m^λ(p) = 2γ² ∫ V̂(q) R(q,p) cos²θ / (λ + ½|p+q|²(1 + g^λ(p+q))) dq`
/// with `θ` the angle between `p` and `q`, for `γ` given.
///
/// Integrated in log-polar coordinates about `q = -p`, where the region
/// boundary `|p + q| = κ|p|` is a circle; the angular grid is refined toward
/// `q ≈ 0`, where `V̂` concentrates when `|p|` is large.
pub fn m_lambda_gamma(
    m: &Mollifier,
    p_abs: f64,
    lambda: f64,
    gamma: f64,
    region: RegionPredicate,
    tol: Tolerance,
) -> Result<Estimate> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("λ must be positive, got {lambda}")));
    }
    if gamma == 0.0 {
        return Ok(Estimate::ZERO);
    }
    let rho = p_abs;
    let r_min = 1e-6 * lambda.sqrt();
    let r_max = rho + m.p_cutoff();
    let split = region.kappa * rho;
    let (r_lo, r_hi) = match region.kind {
        RegionKind::Full => (r_min, r_max),
        RegionKind::Bulk => (split.max(r_min), r_max),
        RegionKind::Nuisance => (r_min, split),
    };
    if r_hi <= r_lo {
        return Ok(Estimate::ZERO);
    }
    let inv_s = 1.0 / m.s;
    let mut ub = vec![(2.0 * lambda).sqrt().ln(), split.max(1e-300).ln()];
    if rho > 0.0 {
        for d in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            let r = rho + d * inv_s;
            if r > 0.0 {
                ub.push(r.ln());
            }
        }
    }
    let u = sorted_breaks(r_lo.ln(), r_hi.ln(), 1.0, &ub);
    let mut tb = vec![-PI, -0.5 * PI, 0.0, 0.5 * PI];
    if rho > 0.0 {
        let w = (inv_s / rho).min(0.25 * PI);
        for k in [0.25, 1.0, 4.0] {
            if k * w < PI {
                tb.push(k * w);
                tb.push(-k * w);
            }
        }
    }
    let th = sorted_breaks(-PI, PI, 0.0, &tb);
    let rects = rects_from_breaks(&u, &th);
    let g2 = gamma * gamma;
    cubature(
        |_, [u, t]| {
            let r = u.exp();
            let (sn, cs) = t.sin_cos();
            let q = [r * cs - rho, r * sn];
            let q2 = q[0] * q[0] + q[1] * q[1];
            let cos2 = if q2 > 0.0 { q[0] * q[0] / q2 } else { 0.5 };
            let den = lambda + 0.5 * r * r * (1.0 + g_lambda_abs(r, lambda, gamma));
            2.0 * g2 * m.v_hat_sq(q2) * cos2 / den * r * r
        },
        &rects,
        tol,
    )
}

/// `m^λ(p)` under the weak-coupling schedule.
pub fn m_lambda(m: &Mollifier, p: [f64; 2], lambda: f64, alpha: f64, region: RegionPredicate) -> Result<Estimate> {
    let gamma = weak_gamma(lambda, alpha)?;
    m_lambda_gamma(m, p[0].hypot(p[1]), lambda, gamma, region, M_TOL)
}

/// Default scan grid: `|p| = 0` plus `n` log-spaced points on `[1e-6, 1e3]`.
pub fn default_p_grid(n: usize) -> Vec<f64> {
    let mut v = vec![0.0];
    let (a, b) = (1e-6f64.ln(), 1e3f64.ln());
    v.extend((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()));
    v
}

#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub p: f64,
    pub m: f64,
    pub m_err: f64,
    pub g: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma2: f64,
    pub sup_gap: f64,
    /// Quadrature error bound carried by the sup.
    pub sup_gap_err: f64,
    pub ratio: f64,
    pub argmax_p: f64,
    pub rows: Vec<GapRow>,
}

/// `sup_p |m^λ(p) - g^λ(p)|` over `p_grid` (bulk region, κ = 1/3).
pub fn replacement_gap(m: &Mollifier, lambda: f64, alpha: f64, p_grid: &[f64]) -> Result<GapReport> {
    let positive = p_grid.iter().filter(|&&p| p > 0.0).count();
    if positive < 40 {
        return Err(invalid(format!("gap scan needs ≥ 40 positive grid points, got {positive}")));
    }
    let gamma = weak_gamma(lambda, alpha)?;
    let region = RegionPredicate::bulk();
    let rows: Vec<GapRow> = p_grid
        .par_iter()
        .map(|&p| {
            let e = m_lambda_gamma(m, p, lambda, gamma, region, M_TOL)?;
            Ok(GapRow { p, m: e.value, m_err: e.error, g: g_lambda_abs(p, lambda, gamma) })
        })
        .collect::<Result<_>>()?;
    let (mut sup, mut err, mut arg) = (0.0, 0.0, 0.0);
    for r in &rows {
        let d = (r.m - r.g).abs();
        if d > sup {
            sup = d;
            err = r.m_err;
            arg = r.p;
        }
    }
    let g2 = gamma * gamma;
    Ok(GapReport {
        lambda,
        alpha,
        gamma2: g2,
        sup_gap: sup,
        sup_gap_err: err,
        ratio: if g2 > 0.0 { sup / g2 } else { 0.0 },
        argmax_p: arg,
        rows,
    })
}

// ---------------------------------------------------------------------------
// Weak-coupling norm

const RADIAL_TOL: Tolerance = Tolerance::new(1e-10, 1e-300, 2_000_000);

/// `γ² ∫ V̂(p) (e₁·p)² / (|p|² (λ + ½|p|²)) dp = πγ² ∫_0^∞ r V̂(r) / (λ + r²/2) dr`
/// for a given `γ`.
pub fn weak_norm_gamma(m: &Mollifier, lambda: f64, gamma: f64) -> Result<Estimate> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("λ must be positive, got {lambda}")));
    }
    if gamma == 0.0 {
        return Ok(Estimate::ZERO);
    }
    let c = PI * gamma * gamma;
    let r0 = (2.0 * lambda).sqrt();
    let e = integrate_radial_breaks(
        |r| r * m.v_hat_sq(r * r) / (lambda + 0.5 * r * r),
        1e-8 * r0,
        m.p_cutoff(),
        &[r0],
        RADIAL_TOL,
    )?;
    Ok(e.scale(c))
}

pub fn weak_norm(m: &Mollifier, lambda: f64, alpha: f64) -> Result<Estimate> {
    weak_norm_gamma(m, lambda, weak_gamma(lambda, alpha)?)
}

// ---------------------------------------------------------------------------
// Integral-lemma suite

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    /// `|p| ∫ V̂(q) / (|q + r| (λ + |q|² + |p|²)) dq`
    Lemma4,
    /// `γ² ∫∫ V̂(p)V̂(q) N(q,p) |p+q| / ((λ+|p+q+r|²)(λ+|q|²+|r|²)^{3/2}) dp dq`
    Lemma10,
    /// `λ ∫ V̂(p) / ((λ + |p+q|²)(λ + |p+r|²)) dp`
    Lemma22,
    /// `γ² ∫ V̂(p) / (λ + ½|q+p|²) dp`
    Eq16,
}

impl LemmaId {
    pub const ALL: [LemmaId; 4] = [LemmaId::Lemma4, LemmaId::Lemma10, LemmaId::Lemma22, LemmaId::Eq16];

    pub fn name(self) -> &'static str {
        match self {
            LemmaId::Lemma4 => "lemma4",
            LemmaId::Lemma10 => "lemma10",
            LemmaId::Lemma22 => "lemma22",
            LemmaId::Eq16 => "eq16",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaDraw {
    pub lambda: f64,
    pub p: [f64; 2],
    pub q: [f64; 2],
    pub r: [f64; 2],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSuiteConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub lambda_range: [f64; 2],
    pub momentum_range: [f64; 2],
    pub threshold: f64,
    pub rel_tol: f64,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        LemmaSuiteConfig {
            alpha: 1.0,
            kappa: KAPPA,
            lambda_range: [1e-8, 1.0],
            momentum_range: [1e-4, 1e4],
            threshold: 50.0,
            rel_tol: 1e-4,
        }
    }
}

impl LemmaSuiteConfig {
    fn tol(&self) -> Tolerance {
        Tolerance::new(self.rel_tol, 1e-12, 2_000_000)
    }
}

fn log_uniform(st: &mut Stream, r: [f64; 2]) -> f64 {
    let (a, b) = (r[0].ln(), r[1].ln());
    (a + (b - a) * st.uniform()).exp()
}

fn random_vector(st: &mut Stream, r: [f64; 2]) -> [f64; 2] {
    let n = log_uniform(st, r);
    let (s, c) = (TAU * st.uniform()).sin_cos();
    [n * c, n * s]
}

/// Parameter point `index` of lemma `id`; a pure function of `(seed, id, index)`.
pub fn lemma_draw(cfg: &LemmaSuiteConfig, seed: u64, id: LemmaId, index: u64) -> LemmaDraw {
    let mut st = Stream::keyed(seed, &[0x4c45_4d4d, id as u64, index]);
    LemmaDraw {
        lambda: log_uniform(&mut st, cfg.lambda_range),
        p: random_vector(&mut st, cfg.momentum_range),
        q: random_vector(&mut st, cfg.momentum_range),
        r: random_vector(&mut st, cfg.momentum_range),
    }
}

/// `AGM(a, b)`; `2π / AGM(ρ + R, |ρ - R|) = ∫_0^{2π} dθ / |q + r|` for `|q| = ρ`, `|r| = R`.
fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-15 * a {
            break;
        }
        let m = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = m;
    }
    0.5 * (a + b)
}

/// `∫_0^{2π} dθ / (A + B cos θ) = 2π / sqrt(A² - B²)` with `A² - B²` given factored.
#[inline]
fn inv_angular(f1: f64, f2: f64) -> f64 {
    TAU / (f1 * f2).sqrt()
}

fn lemma4(m: &Mollifier, d: &LemmaDraw, tol: Tolerance) -> Result<Estimate> {
    let (pa, ra) = (d.p[0].hypot(d.p[1]), d.r[0].hypot(d.r[1]));
    let c = d.lambda + pa * pa;
    let f = |rho: f64| {
        let den = agm(rho + ra, (rho - ra).abs());
        if den == 0.0 {
            return 0.0;
        }
        rho * m.v_hat_sq(rho * rho) / (c + rho * rho) * TAU / den
    };
    let lo = 1e-10 * ra.min(c.sqrt()).min(1.0);
    let e = integrate_radial_breaks(f, lo, m.p_cutoff(), &[ra, c.sqrt()], tol)?;
    Ok(e.scale(pa))
}

fn eq16(m: &Mollifier, d: &LemmaDraw, gamma: f64, tol: Tolerance) -> Result<Estimate> {
    let qa = d.q[0].hypot(d.q[1]);
    let lam = d.lambda;
    let f = |rho: f64| {
        let a = lam + 0.5 * (rho - qa) * (rho - qa);
        let b = lam + 0.5 * (rho + qa) * (rho + qa);
        rho * m.v_hat_sq(rho * rho) * inv_angular(a, b)
    };
    let w = (2.0 * lam).sqrt();
    let lo = 1e-8 * w;
    let hi = m.p_cutoff();
    let brk = [qa, qa + w, (qa - w).max(0.0), w];
    let e = integrate_radial_breaks(f, lo, hi, &brk, tol)?;
    Ok(e.scale(gamma * gamma))
}

fn lemma22(m: &Mollifier, d: &LemmaDraw, tol: Tolerance) -> Result<Estimate> {
    let lam = d.lambda;
    let (q, r) = (d.q, d.r);
    let cut = m.p_cutoff();
    let mut centers = vec![[0.0, 0.0]];
    for c in [[-q[0], -q[1]], [-r[0], -r[1]]] {
        if c[0].hypot(c[1]) < cut {
            centers.push(c);
        }
    }
    let far = centers.iter().map(|c| c[0].hypot(c[1])).fold(0.0, f64::max);
    let opt = PolarOptions { r_min: 1e-5 * lam.sqrt(), r_max: cut + far, panels_per_efold: 0.5, angular_panels: 4, tol };
    let f = |p: [f64; 2]| {
        let a = lam + (p[0] + q[0]).powi(2) + (p[1] + q[1]).powi(2);
        let b = lam + (p[0] + r[0]).powi(2) + (p[1] + r[1]).powi(2);
        m.v_hat(p) / (a * b)
    };
    Ok(integrate_plane(f, &centers, &opt)?.scale(lam))
}

/// After `k = p + q` and rotation invariance, the 4D integral becomes
/// `γ² ∫_0^∞ k² · 2π/sqrt((λ+(k-R)²)(λ+(k+R)²)) · J(k) dk` with
/// `J(k) = ∫_{|p| > k/κ} V̂(p) V̂(k - p) / (λ + |k - p|² + R²)^{3/2} dp`
/// (the nuisance constraint `|p + q| < κ|p|` reads `|p| > |k|/κ`). The angle
/// in `J` is smooth since `|p| ≥ 3|k|`, so it uses a fixed Gauss rule.
fn lemma10(m: &Mollifier, d: &LemmaDraw, gamma: f64, kappa: f64, tol: Tolerance, gl: &(Vec<f64>, Vec<f64>)) -> Result<Estimate> {
    let lam = d.lambda;
    let ra = d.r[0].hypot(d.r[1]);
    let s2 = m.s * m.s;
    let cut = m.p_cutoff();
    let inner_tol = Tolerance::new(tol.rel * 0.1, tol.abs * 1e-3, tol.max_evals);
    // Angular nodes on [0, π] (the integrand is even in φ).
    let cosines: Vec<(f64, f64)> = gl.0.iter().zip(&gl.1).map(|(x, w)| ((0.5 * PI * (x + 1.0)).cos(), 0.5 * PI * w)).collect();
    let j_of = |k: f64| -> Result<f64> {
        let lo = k / kappa;
        if lo >= cut {
            return Ok(0.0);
        }
        let f = |rho: f64| {
            let base = 0.5 * s2 * (2.0 * rho * rho + k * k);
            let a = lam + rho * rho + k * k + ra * ra;
            let b = 2.0 * rho * k;
            let mut acc = 0.0;
            for &(c, w) in &cosines {
                let e = (-base + 0.5 * s2 * b * c).exp();
                let den = a - b * c;
                acc += w * e / (den * den.sqrt());
            }
            2.0 * rho * acc
        };
        let brk = [(lam + ra * ra).sqrt()];
        Ok(integrate_radial_breaks(f, lo.max(1e-12), cut, &brk, inner_tol)?.value)
    };
    let mut failure: Option<Error> = None;
    let outer = |k: f64| {
        if failure.is_some() {
            return 0.0;
        }
        match j_of(k) {
            Ok(j) => {
                let a = lam + (k - ra) * (k - ra);
                let b = lam + (k + ra) * (k + ra);
                k * k * inv_angular(a, b) * j
            }
            Err(e) => {
                failure = Some(e);
                0.0
            }
        }
    };
    let w = lam.sqrt();
    let brk = [ra, ra + w, (ra - w).max(0.0), w];
    let e = integrate_radial_breaks(outer, 1e-10 * w.min(ra), kappa * cut, &brk, tol);
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(e?.scale(gamma * gamma))
}

/// Evaluate one lemma integrand at one parameter point.
pub fn lemma_value(m: &Mollifier, cfg: &LemmaSuiteConfig, id: LemmaId, d: &LemmaDraw) -> Result<Estimate> {
    let tol = cfg.tol();
    match id {
        LemmaId::Lemma4 => lemma4(m, d, tol),
        LemmaId::Lemma22 => lemma22(m, d, tol),
        LemmaId::Eq16 => eq16(m, d, weak_gamma(d.lambda, cfg.alpha)?, tol),
        LemmaId::Lemma10 => {
            let gl = gauss_legendre(32);
            lemma10(m, d, weak_gamma(d.lambda, cfg.alpha)?, cfg.kappa, tol, &gl)
        }
    }
}

/// All evaluations of one lemma; `None` marks a non-converged draw.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaSweep {
    pub lemma_id: LemmaId,
    pub seed: u64,
    pub draws: Vec<LemmaDraw>,
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaReport {
    pub lemma_id: &'static str,
    pub n_draws: usize,
    pub max_value: f64,
    pub argmax_params: Option<LemmaDraw>,
    pub seed: u64,
    pub nonconverged: usize,
}

impl LemmaSweep {
    /// Report over the first `n` draws.
    pub fn report(&self, n: usize) -> LemmaReport {
        let n = n.min(self.values.len());
        let mut best: Option<(f64, usize)> = None;
        let mut bad = 0;
        for (i, v) in self.values[..n].iter().enumerate() {
            match v {
                Some(x) if best.map_or(true, |(b, _)| *x > b) => best = Some((*x, i)),
                Some(_) => {}
                None => bad += 1,
            }
        }
        LemmaReport {
            lemma_id: self.lemma_id.name(),
            n_draws: n,
            max_value: best.map_or(f64::NAN, |b| b.0),
            argmax_params: best.map(|b| self.draws[b.1]),
            seed: self.seed,
            nonconverged: bad,
        }
    }
}

/// Evaluate `id` at draws `0..n_draws`. Draws are nested across `n_draws`,
/// so a sweep of `2n` contains the sweep of `n` as a prefix.
pub fn lemma_sweep(m: &Mollifier, cfg: &LemmaSuiteConfig, id: LemmaId, n_draws: usize, seed: u64) -> LemmaSweep {
    let draws: Vec<LemmaDraw> = (0..n_draws as u64).map(|i| lemma_draw(cfg, seed, id, i)).collect();
    let gl = gauss_legendre(32);
    let tol = cfg.tol();
    let values = draws
        .par_iter()
        .map(|d| {
            let r = match id {
                LemmaId::Lemma10 => weak_gamma(d.lambda, cfg.alpha).and_then(|g| lemma10(m, d, g, cfg.kappa, tol, &gl)),
                _ => lemma_value(m, cfg, id, d),
            };
            r.ok().map(|e| e.value)
        })
        .collect();
    LemmaSweep { lemma_id: id, seed, draws, values }
}

/// The four sweeps at `n_draws ≥ 1000` each.
pub fn lemma_suite(m: &Mollifier, cfg: &LemmaSuiteConfig, n_draws: usize, seed: u64) -> Result<Vec<LemmaSweep>> {
    if n_draws < 1000 {
        return Err(invalid(format!("lemma suite needs ≥ 1000 draws, got {n_draws}")));
    }
    Ok(LemmaId::ALL.iter().map(|&id| lemma_sweep(m, cfg, id, n_draws, seed)).collect())
}

// ---------------------------------------------------------------------------
// Nuisance integrand

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NuisanceEstimate {
    pub value: McEstimate,
    /// Same sampler with `|t₁| + |t₂|` in place of `|t₁ + t₂|`.
    pub abs_sum: McEstimate,
}

const NUISANCE_BATCH: usize = 1 << 14;
const MIX: [f64; 3] = [0.2, 0.4, 0.4];

/// Log-radial law on the disk `|k| < R`, inner radius tied to `R` and `λ`.
fn disk_law(r: f64, lambda: f64) -> Option<LogRadial> {
    let lo = (1e-9 * r).min(1e-4 * lambda.sqrt());
    LogRadial::new(lo, r).ok()
}

/// The two-momentum nuisance integral with tail momentum `p3`, estimated by
/// importance sampling from a three-part mixture: independent log-radial
/// `(p₁, p₂)`, and `p₁` (or `p₂`) placed in the nuisance disk around
/// `-(p₂ + p₃)` (or `-(p₁ + p₃)`).
pub fn nuisance_i(
    m: &Mollifier,
    p3: [f64; 2],
    lambda: f64,
    alpha: f64,
    kappa: f64,
    samples: usize,
    seed: u64,
) -> Result<NuisanceEstimate> {
    let gamma = weak_gamma(lambda, alpha)?;
    if p3 == [0.0, 0.0] {
        return Err(invalid("tail momentum must be nonzero"));
    }
    if gamma == 0.0 || samples == 0 {
        let z = McEstimate { value: 0.0, stderr: 0.0, n: samples };
        return Ok(NuisanceEstimate { value: z, abs_sum: z });
    }
    let radial = LogRadial::new(1e-8, m.p_cutoff())?;
    let nb = samples.div_ceil(NUISANCE_BATCH);
    let sums: Vec<[f64; 4]> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let mut st = Stream::keyed(seed, &[0x4e55_4953, b as u64]);
            let count = NUISANCE_BATCH.min(samples - b * NUISANCE_BATCH);
            let mut acc = [0.0; 4];
            for _ in 0..count {
                let (v, a) = nuisance_sample(m, &radial, p3, lambda, gamma, kappa, &mut st);
                acc[0] += v;
                acc[1] += v * v;
                acc[2] += a;
                acc[3] += a * a;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for s in &sums {
        for k in 0..4 {
            tot[k] += s[k];
        }
    }
    Ok(NuisanceEstimate {
        value: McEstimate::from_sums(tot[0], tot[1], samples),
        abs_sum: McEstimate::from_sums(tot[2], tot[3], samples),
    })
}

#[inline]
fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn nuisance_sample(
    m: &Mollifier,
    radial: &LogRadial,
    p3: [f64; 2],
    lambda: f64,
    gamma: f64,
    kappa: f64,
    st: &mut Stream,
) -> (f64, f64) {
    let u = st.uniform();
    let (p1, p2) = if u < MIX[0] {
        (radial.sample(st), radial.sample(st))
    } else if u < MIX[0] + MIX[1] {
        let p2 = radial.sample(st);
        let s23 = add(p2, p3);
        match disk_law(kappa * norm(s23), lambda) {
            Some(d) => {
                let k = d.sample(st);
                ([k[0] - s23[0], k[1] - s23[1]], p2)
            }
            None => return (0.0, 0.0),
        }
    } else {
        let p1 = radial.sample(st);
        let s13 = add(p1, p3);
        match disk_law(kappa * norm(s13), lambda) {
            Some(d) => {
                let k = d.sample(st);
                (p1, [k[0] - s13[0], k[1] - s13[1]])
            }
            None => return (0.0, 0.0),
        }
    };
    let s23 = add(p2, p3);
    let s13 = add(p1, p3);
    let k = add(p1, s23);
    let q_mix = MIX[0] * radial.density(p1) * radial.density(p2)
        + MIX[1] * radial.density(p2) * disk_law(kappa * norm(s23), lambda).map_or(0.0, |d| d.density(k))
        + MIX[2] * radial.density(p1) * disk_law(kappa * norm(s13), lambda).map_or(0.0, |d| d.density(k));
    if q_mix == 0.0 {
        return (0.0, 0.0);
    }
    let (nk, n23, n13, n3) = (norm(k), norm(s23), norm(s13), norm(p3));
    // N(p₁, p₂+p₃) and B(p₂, p₃)
    if !(nk < kappa * n23) || !(n23 >= kappa * n3) {
        return (0.0, 0.0);
    }
    let (n1, n2) = (norm(p1), norm(p2));
    if n1 == 0.0 || n2 == 0.0 {
        return (0.0, 0.0);
    }
    let pre = gamma * gamma * m.v_hat(p1) * m.v_hat(p2) / (n1 * n2 * n3)
        / ((lambda + nk * nk) * (lambda + n2 * n2 + n3 * n3).sqrt());
    let t1 = dot(p1, s23) * dot(p2, p3) / (lambda + 0.5 * n23 * n23 * (1.0 + g_lambda_abs(n23, lambda, gamma)));
    // N(p₂, p₁+p₃) and B(p₁, p₃)
    let t2 = if nk < kappa * n13 && n13 >= kappa * n3 {
        dot(p2, s13) * dot(p1, p3) / (lambda + 0.5 * n13 * n13 * (1.0 + g_lambda_abs(n13, lambda, gamma)))
    } else {
        0.0
    };
    let w = pre / q_mix;
    (w * (t1 + t2).abs(), w * (t1.abs() + t2.abs()))
}
