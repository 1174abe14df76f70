//! Chaos-one kernels, Monte Carlo over the weighted momentum measures
//! `μ_n(dp) = n! ∏ V̂(p_i)/|p_i|² dp_i`, the diffusivity pairing and the
//! off-diagonal pairing of the second chaos.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::Mollifier;
use crate::quad::{integrate_radial_breaks, Estimate, Tolerance};
use crate::rng::Stream;
use crate::spectral::{g_lambda_abs, weak_gamma};
use crate::stats::{linear_fit, LinearFit};

/// `σ²(α) = sqrt(4πα² + 1) - 1`.
pub fn sigma2(alpha: f64) -> f64 {
    (4.0 * PI * alpha * alpha + 1.0).sqrt() - 1.0
}

/// `ς²(α) = 1 + σ²(α)`.
pub fn varsigma2(alpha: f64) -> f64 {
    1.0 + sigma2(alpha)
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        if n == 0 {
            return McEstimate { value: 0.0, stderr: 0.0, n };
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0) } else { 0.0 };
        McEstimate { value: mean, stderr: (var / nf).sqrt(), n }
    }

    pub fn scale(self, c: f64) -> Self {
        McEstimate { value: c * self.value, stderr: c.abs() * self.stderr, n: self.n }
    }
}

/// Uniform angle and `log |p|` uniform on `[r_min, r_max]`: area density
/// `1 / (2π |p|² log(r_max / r_min))` on the annulus.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LogRadial {
    pub r_min: f64,
    pub r_max: f64,
    log_ratio: f64,
}

impl LogRadial {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min && r_max.is_finite()) {
            return Err(invalid(format!("log-radial law needs 0 < r_min < r_max, got [{r_min}, {r_max}]")));
        }
        Ok(LogRadial { r_min, r_max, log_ratio: (r_max / r_min).ln() })
    }

    #[inline]
    pub fn sample(&self, st: &mut Stream) -> [f64; 2] {
        let r = self.r_min * (self.log_ratio * st.uniform()).exp();
        let (s, c) = (TAU * st.uniform()).sin_cos();
        [r * c, r * s]
    }

    #[inline]
    pub fn density(&self, p: [f64; 2]) -> f64 {
        let r2 = p[0] * p[0] + p[1] * p[1];
        if r2 < self.r_min * self.r_min || r2 > self.r_max * self.r_max {
            0.0
        } else {
            1.0 / (TAU * r2 * self.log_ratio)
        }
    }
}

/// Importance sampler for `μ_n` restricted to the annulus of `radial` in
/// every coordinate. The `n!` symmetry factor is applied in
/// [`MuSampler::integrate`], never inside the weight.
#[derive(Clone, Copy, Debug)]
pub struct MuSampler {
    pub radial: LogRadial,
    pub n: usize,
    pub mollifier: Mollifier,
}

const MC_BATCH: usize = 1 << 14;

impl MuSampler {
    pub fn new(mollifier: Mollifier, n: usize, r_min: f64, r_max: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("μ_n needs n ≥ 1"));
        }
        Ok(MuSampler { radial: LogRadial::new(r_min, r_max)?, n, mollifier })
    }

    /// One draw and its weight `∏ V̂(p_i)/|p_i|² ÷ proposal`.
    pub fn sample(&self, st: &mut Stream, out: &mut Vec<[f64; 2]>) -> f64 {
        out.clear();
        let mut w = 1.0;
        for _ in 0..self.n {
            let p = self.radial.sample(st);
            let r2 = p[0] * p[0] + p[1] * p[1];
            // V̂/|p|² over 1/(2π|p|² log) = 2π log · V̂.
            w *= TAU * self.radial.log_ratio * self.mollifier.v_hat_sq(r2);
            out.push(p);
        }
        w
    }

    fn factorial(&self) -> f64 {
        (1..=self.n).map(|k| k as f64).product()
    }

    /// `∫ f dμ_n` over the annulus, batch streams keyed by `(seed, batch)`.
    pub fn integrate<F: Fn(&[[f64; 2]]) -> f64 + Sync>(&self, f: F, samples: usize, seed: u64) -> McEstimate {
        let nb = samples.div_ceil(MC_BATCH);
        let parts: Vec<(f64, f64)> = (0..nb)
            .into_par_iter()
            .map(|b| {
                let mut st = Stream::keyed(seed, &[0x4d55, b as u64]);
                let mut buf = Vec::with_capacity(self.n);
                let (mut s, mut ss) = (0.0, 0.0);
                for _ in 0..MC_BATCH.min(samples - b * MC_BATCH) {
                    let w = self.sample(&mut st, &mut buf);
                    let v = w * f(&buf);
                    s += v;
                    ss += v * v;
                }
                (s, ss)
            })
            .collect();
        let (s, ss) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        McEstimate::from_sums(s, ss, samples).scale(self.factorial())
    }
}

/// `f₁(p) = -i (e·p)/(2π)` and `v₁ = γ f₁ / (λ + ½|p|²(1 + g^λ(p)))`.
/// Both kernels are purely imaginary; the methods return the coefficient of `-i`...
/// precisely, `f1` returns `Im f₁(p)`.
#[derive(Clone, Copy, Debug)]
pub struct ChaosOneKernel {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub axis: [f64; 2],
}

impl ChaosOneKernel {
    pub fn new(lambda: f64, alpha: f64, axis: [f64; 2]) -> Result<Self> {
        let n = axis[0].hypot(axis[1]);
        if !(n > 0.0) {
            return Err(invalid("axis must be nonzero"));
        }
        Ok(ChaosOneKernel { lambda, alpha, gamma: weak_gamma(lambda, alpha)?, axis: [axis[0] / n, axis[1] / n] })
    }

    #[inline]
    pub fn f1(&self, p: [f64; 2]) -> f64 {
        -(self.axis[0] * p[0] + self.axis[1] * p[1]) / TAU
    }

    #[inline]
    pub fn v1(&self, p: [f64; 2]) -> f64 {
        let r = p[0].hypot(p[1]);
        self.gamma * self.f1(p) / (self.lambda + 0.5 * r * r * (1.0 + g_lambda_abs(r, self.lambda, self.gamma)))
    }
}

const PAIR_TOL: Tolerance = Tolerance::new(1e-10, 1e-300, 2_000_000);

/// `γ²/2 ∫ V̂(p) / (λ + ½|p|²(1 + g^λ(p))) dp`, which tends to `½σ²(α)`.
pub fn diffusivity_pairing(m: &Mollifier, lambda: f64, alpha: f64) -> Result<Estimate> {
    let gamma = weak_gamma(lambda, alpha)?;
    if gamma == 0.0 {
        return Ok(Estimate::ZERO);
    }
    let r0 = (2.0 * lambda).sqrt();
    let e = integrate_radial_breaks(
        |r| r * m.v_hat_sq(r * r) / (lambda + 0.5 * r * r * (1.0 + g_lambda_abs(r, lambda, gamma))),
        1e-8 * r0,
        m.p_cutoff(),
        &[r0],
        PAIR_TOL,
    )?;
    Ok(e.scale(PI * gamma * gamma))
}

/// The same pairing written with the axis explicit,
/// `γ² ∫ (e·p̂)² V̂(p) / (λ + ½|p|²(1 + g^λ(p))) dp`, by plane quadrature.
pub fn diffusivity_pairing_axis(m: &Mollifier, lambda: f64, alpha: f64, axis: [f64; 2]) -> Result<Estimate> {
    let k = ChaosOneKernel::new(lambda, alpha, axis)?;
    if k.gamma == 0.0 {
        return Ok(Estimate::ZERO);
    }
    let opt = crate::quad::PolarOptions {
        r_min: 1e-8 * lambda.sqrt(),
        r_max: m.p_cutoff(),
        panels_per_efold: 1.0,
        angular_panels: 8,
        tol: Tolerance::new(1e-9, 1e-300, 4_000_000),
    };
    let e = crate::quad::integrate_plane(
        |p| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            let c = k.axis[0] * p[0] + k.axis[1] * p[1];
            let r = r2.sqrt();
            c * c / r2 * m.v_hat_sq(r2) / (lambda + 0.5 * r2 * (1.0 + g_lambda_abs(r, lambda, k.gamma)))
        },
        &[[0.0, 0.0]],
        &opt,
    )?;
    Ok(e.scale(k.gamma * k.gamma))
}

/// `λ ‖v₁‖²` under `μ₁`.
pub fn l2_mass(m: &Mollifier, lambda: f64, alpha: f64) -> Result<Estimate> {
    let gamma = weak_gamma(lambda, alpha)?;
    if gamma == 0.0 {
        return Ok(Estimate::ZERO);
    }
    let r0 = (2.0 * lambda).sqrt();
    let e = integrate_radial_breaks(
        |r| {
            let d = lambda + 0.5 * r * r * (1.0 + g_lambda_abs(r, lambda, gamma));
            r * m.v_hat_sq(r * r) / (d * d)
        },
        1e-8 * r0,
        m.p_cutoff(),
        &[r0],
        PAIR_TOL,
    )?;
    // ∫ (e·p)²/|p|² dθ = π, and |f₁|² carries 1/(4π²).
    Ok(e.scale(lambda * gamma * gamma * PI / (4.0 * PI * PI)))
}

// ---------------------------------------------------------------------------
// Off-diagonal pairing

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Srbp,
    Dcgff,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Srbp => "srbp",
            Model::Dcgff => "dcgff",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffdiagOptions {
    /// Include the `n! = 2` factor of `μ₂`. The closing computation of the
    /// pairing drops it, which is what produces `-1/32`; with it the limit is
    /// `-1/16`.
    pub with_factorial: bool,
    pub samples: usize,
}

impl Default for OffdiagOptions {
    fn default() -> Self {
        OffdiagOptions { with_factorial: false, samples: 1_000_000 }
    }
}

const OFF_MIX: [f64; 3] = [0.4, 0.3, 0.3];

/// Integrand against `∏ V̂(p_i)/|p_i|² dp_i`, rotation-averaged over the
/// `f₁` axis, without the `γ⁴/(32π²)` prefactor.
///
/// The rotation average turns `(e·p₁)(e·p₂)` into `½ p₁·p₂` for any fixed
/// axis `e`, since everything else is invariant under joint rotations.
#[inline]
pub fn offdiag_integrand(model: Model, p1: [f64; 2], p2: [f64; 2], lambda: f64) -> f64 {
    let dot = p1[0] * p2[0] + p1[1] * p2[1];
    let n1 = p1[0].hypot(p1[1]);
    let n2 = p2[0].hypot(p2[1]);
    let s = [p1[0] + p2[0], p1[1] + p2[1]];
    let d12 = lambda + 0.5 * (s[0] * s[0] + s[1] * s[1]);
    let d1 = lambda + 0.5 * n1 * n1;
    let d2 = lambda + 0.5 * n2 * n2;
    let top = match model {
        Model::Srbp => dot * dot * dot,
        Model::Dcgff => {
            let cross = p1[0] * p2[1] - p1[1] * p2[0];
            cross * cross * dot
        }
    };
    0.5 * top / (d12 * (d1 * d2).sqrt() * n1 * n2)
}

/// `⟨φ[1], φ[2]⟩` by importance sampling over `(p₁, p₂)`. The mixture
/// proposal adds to independent log-radial draws two components with
/// `p₁ + p₂` drawn log-radially, which resolve the `1/(λ + ½|p₁+p₂|²)` ridge.
pub fn offdiag_pairing(m: &Mollifier, model: Model, lambda: f64, alpha: f64, opts: &OffdiagOptions, seed: u64) -> Result<McEstimate> {
    let gamma = weak_gamma(lambda, alpha)?;
    if gamma == 0.0 {
        return Ok(McEstimate { value: 0.0, stderr: 0.0, n: opts.samples });
    }
    let sq = lambda.sqrt();
    let radial = LogRadial::new(1e-3 * sq, m.p_cutoff())?;
    let ridge = LogRadial::new(1e-4 * sq, 2.0 * m.p_cutoff())?;
    let n = opts.samples;
    let nb = n.div_ceil(MC_BATCH);
    let parts: Vec<(f64, f64)> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let mut st = Stream::keyed(seed, &[0x4f46, model as u64, b as u64]);
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..MC_BATCH.min(n - b * MC_BATCH) {
                let u = st.uniform();
                let (p1, p2) = if u < OFF_MIX[0] {
                    (radial.sample(&mut st), radial.sample(&mut st))
                } else if u < OFF_MIX[0] + OFF_MIX[1] {
                    let p1 = radial.sample(&mut st);
                    let k = ridge.sample(&mut st);
                    (p1, [k[0] - p1[0], k[1] - p1[1]])
                } else {
                    let p2 = radial.sample(&mut st);
                    let k = ridge.sample(&mut st);
                    ([k[0] - p2[0], k[1] - p2[1]], p2)
                };
                let k = [p1[0] + p2[0], p1[1] + p2[1]];
                let (q1, q2, qk) = (radial.density(p1), radial.density(p2), ridge.density(k));
                let q = OFF_MIX[0] * q1 * q2 + OFF_MIX[1] * q1 * qk + OFF_MIX[2] * q2 * qk;
                let r1 = p1[0] * p1[0] + p1[1] * p1[1];
                let r2 = p2[0] * p2[0] + p2[1] * p2[1];
                if q == 0.0 || r1 == 0.0 || r2 == 0.0 {
                    continue;
                }
                let mu = m.v_hat_sq(r1) * m.v_hat_sq(r2) / (r1 * r2);
                let v = mu * offdiag_integrand(model, p1, p2, lambda) / q;
                s += v;
                ss += v * v;
            }
            (s, ss)
        })
        .collect();
    let (s, ss) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let sym = if opts.with_factorial { 2.0 } else { 1.0 };
    let pre = sym * gamma.powi(4) / (32.0 * PI * PI);
    Ok(McEstimate::from_sums(s, ss, n).scale(pre))
}

#[derive(Clone, Debug, Serialize)]
pub struct OffdiagReport {
    pub model: &'static str,
    pub lambda_sweep: Vec<f64>,
    pub gamma2_values: Vec<f64>,
    pub pairing_values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub intercept: f64,
    /// 95% interval for the intercept.
    pub ci: [f64; 2],
    pub fit: LinearFit,
    /// `max |value| / γ²` over the sweep.
    pub max_ratio: f64,
}

/// Sweep over `lambdas` and fit `value = a + b γ²` (weighted by stderr).
/// Each point gets its own seed derived from `seed` and its index.
pub fn offdiag_sweep(
    m: &Mollifier,
    model: Model,
    lambdas: &[f64],
    alpha: f64,
    opts: &OffdiagOptions,
    seed: u64,
) -> Result<OffdiagReport> {
    if lambdas.len() < 2 {
        return Err(invalid("sweep needs at least two λ values"));
    }
    let mut g2 = Vec::new();
    let mut vals = Vec::new();
    let mut ses = Vec::new();
    for (i, &lam) in lambdas.iter().enumerate() {
        let g = weak_gamma(lam, alpha)?;
        let e = offdiag_pairing(m, model, lam, alpha, opts, crate::rng::derive(seed, i as u64))?;
        g2.push(g * g);
        vals.push(e.value);
        ses.push(e.stderr);
    }
    let weights: Vec<f64> = ses.iter().map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1.0 }).collect();
    let fit = linear_fit(&g2, &vals, Some(&weights))?;
    let max_ratio = vals.iter().zip(&g2).map(|(v, g)| if *g > 0.0 { v.abs() / g } else { 0.0 }).fold(0.0, f64::max);
    Ok(OffdiagReport {
        model: model.name(),
        lambda_sweep: lambdas.to_vec(),
        gamma2_values: g2,
        pairing_values: vals,
        stderr: ses,
        intercept: fit.intercept,
        ci: [fit.intercept - 1.96 * fit.intercept_se, fit.intercept + 1.96 * fit.intercept_se],
        fit,
        max_ratio,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffusivityFit {
    pub lambda_sweep: Vec<f64>,
    pub gamma2_values: Vec<f64>,
    pub pairing_values: Vec<f64>,
    pub errors: Vec<f64>,
    pub fit: LinearFit,
    pub target: f64,
}

/// Diffusivity pairing over `lambdas`, extrapolated linearly in `γ²`.
pub fn diffusivity_extrapolation(m: &Mollifier, lambdas: &[f64], alpha: f64) -> Result<DiffusivityFit> {
    let rows: Vec<(f64, Estimate)> = lambdas
        .par_iter()
        .map(|&lam| {
            let g = weak_gamma(lam, alpha)?;
            Ok((g * g, diffusivity_pairing(m, lam, alpha)?))
        })
        .collect::<Result<_>>()?;
    let g2: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.1.value).collect();
    let fit = linear_fit(&g2, &v, None)?;
    Ok(DiffusivityFit {
        lambda_sweep: lambdas.to_vec(),
        gamma2_values: g2,
        pairing_values: v,
        errors: rows.iter().map(|r| r.1.error).collect(),
        fit,
        target: 0.5 * sigma2(alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate_plane, PolarOptions};
    use crate::spectral::weak_norm;

    fn moll() -> Mollifier {
        Mollifier::new(0.75).unwrap()
    }

    #[test]
    fn sigma2_examples() {
        assert_eq!(sigma2(0.0), 0.0);
        assert!((sigma2(1.0) - 2.683_255_437_022_957).abs() < 1e-12);
        let mut prev = -1.0;
        for k in 0..100 {
            let s = sigma2(k as f64 * 0.05);
            assert!(s > prev);
            prev = s;
        }
        assert!((varsigma2(1.0) - (4.0 * PI + 1.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sampler_self_calibration() {
        // ∫ e^{-|p|²} |p|² dμ₁ = ∫ e^{-|p|²} V̂(p) dp = π / (1 + s²/2).
        let m = moll();
        let smp = MuSampler::new(m, 1, 1e-6, m.p_cutoff()).unwrap();
        let e = smp.integrate(|p| (-(p[0][0] * p[0][0] + p[0][1] * p[0][1])).exp() * (p[0][0] * p[0][0] + p[0][1] * p[0][1]), 400_000, 5);
        let want = PI / (1.0 + 0.5 * m.s * m.s);
        assert!((e.value - want).abs() < 3.0 * e.stderr, "{} ± {} vs {want}", e.value, e.stderr);
        // n! is applied once: μ₂ of a product is twice the square.
        let s2 = MuSampler::new(m, 2, 1e-6, m.p_cutoff()).unwrap();
        let f = |p: &[[f64; 2]]| p.iter().map(|q| (-(q[0] * q[0] + q[1] * q[1])).exp() * (q[0] * q[0] + q[1] * q[1])).product::<f64>();
        let e2 = s2.integrate(f, 400_000, 6);
        assert!((e2.value - 2.0 * want * want).abs() < 3.0 * e2.stderr);
    }

    #[test]
    fn log_radial_density_normalized() {
        let l = LogRadial::new(1e-3, 10.0).unwrap();
        let e = integrate_radial_breaks(|r| TAU * r * l.density([r, 0.0]), 1e-3, 10.0, &[], Tolerance::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-9);
        assert!(LogRadial::new(1.0, 1.0).is_err());
    }

    #[test]
    fn chaos_one_kernel_properties() {
        let k = ChaosOneKernel::new(1e-4, 1.0, [1.0, 0.0]).unwrap();
        let mut st = Stream::new(9, 9);
        for _ in 0..1000 {
            let p = LogRadial::new(1e-4, 1e2).unwrap().sample(&mut st);
            assert_eq!(k.v1([-p[0], -p[1]]), -k.v1(p));
            let r = p[0].hypot(p[1]);
            assert!(k.v1(p).abs() <= k.gamma * r / (TAU * (k.lambda + 0.5 * r * r)) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn diffusivity_pairing_domination_and_zero() {
        let m = moll();
        assert_eq!(diffusivity_pairing(&m, 1e-3, 0.0).unwrap().value, 0.0);
        for lam in [1e-2, 1e-4, 1e-8] {
            let d = diffusivity_pairing(&m, lam, 1.0).unwrap();
            let w = weak_norm(&m, lam, 1.0).unwrap();
            // Pointwise the integrand is dominated by the weak-norm one; the
            // multiplier g^λ buys the extra factor of two.
            assert!(d.value <= 0.5 * (w.value + w.error) + d.error);
            assert!(d.value > 0.0);
        }
    }

    #[test]
    fn diffusivity_pairing_is_isotropic() {
        let m = moll();
        let lam = 1e-4;
        let r = diffusivity_pairing(&m, lam, 1.0).unwrap().value;
        for axis in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.3, -0.8]] {
            let a = diffusivity_pairing_axis(&m, lam, 1.0, axis).unwrap().value;
            assert!((a / r - 1.0).abs() < 1e-6, "{axis:?}: {a} vs {r}");
        }
    }

    #[test]
    fn diffusivity_extrapolates_to_half_sigma2() {
        let m = moll();
        let f = diffusivity_extrapolation(&m, &[1e-4, 1e-6, 1e-8, 1e-10], 1.0).unwrap();
        assert!((f.fit.intercept / f.target - 1.0).abs() < 0.03, "{} vs {}", f.fit.intercept, f.target);
    }

    #[test]
    fn l2_mass_bounded_and_vanishing() {
        let m = moll();
        let mut prev = f64::INFINITY;
        for k in 2..=8 {
            let lam = 10f64.powi(-k);
            let g = weak_gamma(lam, 1.0).unwrap();
            let v = l2_mass(&m, lam, 1.0).unwrap().value;
            assert!(v / (g * g) <= 10.0);
            assert!(v < prev);
            prev = v;
        }
        assert_eq!(l2_mass(&m, 1e-3, 0.0).unwrap().value, 0.0);
    }

    #[test]
    fn offdiag_zero_coupling_and_determinism() {
        let m = moll();
        let o = OffdiagOptions { with_factorial: false, samples: 50_000 };
        assert_eq!(offdiag_pairing(&m, Model::Srbp, 1e-4, 0.0, &o, 1).unwrap().value, 0.0);
        assert_eq!(offdiag_pairing(&m, Model::Dcgff, 1e-4, 0.0, &o, 1).unwrap().value, 0.0);
        let a = offdiag_pairing(&m, Model::Srbp, 1e-4, 1.0, &o, 3).unwrap();
        let b = offdiag_pairing(&m, Model::Srbp, 1e-4, 1.0, &o, 3).unwrap();
        assert_eq!(a, b);
        let f = offdiag_pairing(&m, Model::Srbp, 1e-4, 1.0, &OffdiagOptions { with_factorial: true, ..o }, 3).unwrap();
        assert!((f.value - 2.0 * a.value).abs() < 1e-15);
    }

    #[test]
    fn offdiag_matches_deterministic_quadrature() {
        // Rotation invariance fixes p₁ = (r, 0): a radial integral of a
        // plane integral over p₂ with the ridge at p₂ = -p₁ as a centre.
        let m = moll();
        let lam = 1e-3;
        let g = weak_gamma(lam, 1.0).unwrap();
        let o = OffdiagOptions { with_factorial: false, samples: 2_000_000 };
        let mc = offdiag_pairing(&m, Model::Srbp, lam, 1.0, &o, 17).unwrap();
        let sq = lam.sqrt();
        let inner = |r: f64| {
            let p1 = [r, 0.0];
            let opt = PolarOptions {
                r_min: 1e-4 * sq,
                r_max: m.p_cutoff() + r,
                panels_per_efold: 1.0,
                angular_panels: 8,
                tol: Tolerance::new(1e-5, 1e-300, 4_000_000),
            };
            integrate_plane(
                |p2| {
                    let r2 = p2[0] * p2[0] + p2[1] * p2[1];
                    m.v_hat_sq(r2) / r2 * offdiag_integrand(Model::Srbp, p1, p2, lam)
                },
                &[[0.0, 0.0], [-r, 0.0]],
                &opt,
            )
            .unwrap()
            .value
        };
        let outer = integrate_radial_breaks(
            |r| TAU * r * m.v_hat_sq(r * r) / (r * r) * inner(r),
            1e-3 * sq,
            m.p_cutoff(),
            &[sq],
            Tolerance::new(1e-4, 1e-300, 100_000),
        )
        .unwrap()
        .value;
        let det = g.powi(4) / (32.0 * PI * PI) * outer;
        assert!(det < 0.0);
        assert!((mc.value - det).abs() < 3.0 * mc.stderr + 1e-3 * det.abs(), "{} ± {} vs {det}", mc.value, mc.stderr);
    }
}
