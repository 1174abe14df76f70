//! The mollifier, its gradient and Fourier transform, the planar Green's
//! function and the environment covariance.
//!
//! Fourier convention used everywhere in the crate:
//! `f̂(p) = ∫ e^{-ip·x} f(x) dx`, so that `V̂(0) = ∫V = 1`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate_1d, Estimate, Tolerance};

/// Default mollifier width `e^{-γ_E/2}`. At this width
/// `∫ r V̂(r)/(λ + r²/2) dr = log(1/λ) + o(1)` with no constant term, so
/// `γ² log(1 + 1/λ)`-normalised quantities approach their limits fastest.
pub const DEFAULT_S: f64 = 0.749_306_001_288_449;

/// Gaussian mollifier `V(x) = (2πs²)⁻¹ exp(-|x|²/(2s²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub s: f64,
    /// Deposits and truncated evaluations ignore `|x| > footprint_radius`.
    pub footprint_radius: f64,
}

impl Mollifier {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(format!("mollifier width must be positive, got {s}")));
        }
        Ok(Mollifier { s, footprint_radius: 6.0 * s })
    }

    #[inline]
    pub fn v(&self, x: [f64; 2]) -> f64 {
        let s2 = self.s * self.s;
        (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * s2)).exp() / (TAU * s2)
    }

    /// `V(x)` cut to zero outside the footprint (the boundary itself is outside).
    #[inline]
    pub fn v_truncated(&self, x: [f64; 2]) -> f64 {
        if x[0].hypot(x[1]) >= self.footprint_radius {
            0.0
        } else {
            self.v(x)
        }
    }

    /// `∇V(x) = -(x/s²) V(x)`.
    #[inline]
    pub fn grad_v(&self, x: [f64; 2]) -> [f64; 2] {
        let c = -self.v(x) / (self.s * self.s);
        [c * x[0], c * x[1]]
    }

    /// Largest value of `|∇V|`, attained at `|x| = s`.
    pub fn grad_v_max(&self) -> f64 {
        (-0.5f64).exp() / (TAU * self.s.powi(3))
    }

    /// `V̂(p) = exp(-s²|p|²/2)`.
    #[inline]
    pub fn v_hat(&self, p: [f64; 2]) -> f64 {
        self.v_hat_sq(p[0] * p[0] + p[1] * p[1])
    }

    /// `V̂` as a function of `|p|²`.
    #[inline]
    pub fn v_hat_sq(&self, p2: f64) -> f64 {
        (-0.5 * self.s * self.s * p2).exp()
    }

    /// Radius beyond which `V̂ < 1e-30`; a safe outer cutoff for momentum integrals.
    pub fn p_cutoff(&self) -> f64 {
        (2.0 * 30.0 * 10f64.ln()).sqrt() / self.s
    }

    /// Environment covariance `E[ω_i(x) ω_j(0)] = -∂²_ij (V∗G)(x)`, by
    /// Fourier quadrature. The angular integral is done in closed form:
    ///
    /// `(4π)⁻¹ ∫_0^∞ r V̂(r) [δ_ij J₀(r|x|) - J₂(r|x|)(2x̂_i x̂_j - δ_ij)] dr`.
    pub fn cov_omega(&self, x: [f64; 2], i: usize, j: usize) -> Result<Estimate> {
        if i > 1 || j > 1 {
            return Err(invalid(format!("axis index out of range: ({i}, {j})")));
        }
        let rho = x[0].hypot(x[1]);
        let delta = if i == j { 1.0 } else { 0.0 };
        let aniso = if rho > 0.0 { 2.0 * x[i] * x[j] / (rho * rho) - delta } else { 0.0 };
        let r_max = self.p_cutoff();
        let panels = 4 + (r_max * rho / PI).ceil() as usize;
        let est = integrate_1d(
            |r| {
                let a = r * rho;
                r * self.v_hat_sq(r * r) * (delta * libm::j0(a) - aniso * libm::jn(2, a))
            },
            0.0,
            r_max,
            panels,
            Tolerance::new(1e-10, 1e-15, 200_000),
        )?;
        Ok(est.scale(1.0 / (4.0 * PI)))
    }

    /// The 2x2 covariance matrix at displacement `x`.
    pub fn cov_omega_matrix(&self, x: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        let c11 = self.cov_omega(x, 0, 0)?.value;
        let c22 = self.cov_omega(x, 1, 1)?.value;
        let c12 = self.cov_omega(x, 0, 1)?.value;
        Ok([[c11, c12], [c12, c22]])
    }
}

/// Planar Green's function `G(x) = -(2π)⁻¹ log|x|`.
pub fn green(x: [f64; 2]) -> Result<f64> {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return Err(Error::Singular("Green's function at the origin"));
    }
    Ok(-r.ln() / TAU)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate_plane, PolarOptions};
    use proptest::prelude::*;

    /// Closed form of `-∂_ij (V∗G)` for the Gaussian: the potential of a
    /// Gaussian charge has `φ'(ρ) = -(1 - e^{-ρ²/2s²}) / (2πρ)`.
    fn cov_closed(s: f64, x: [f64; 2], i: usize, j: usize) -> f64 {
        let rho = x[0].hypot(x[1]);
        if rho < 1e-8 {
            return if i == j { 1.0 / (4.0 * PI * s * s) } else { 0.0 };
        }
        let e = (-rho * rho / (2.0 * s * s)).exp();
        let phi2 = (1.0 - e) / (TAU * rho * rho) - e / (TAU * s * s);
        let phi1_over_rho = -(1.0 - e) / (TAU * rho * rho);
        let (ui, uj) = (x[i] / rho, x[j] / rho);
        let d = if i == j { 1.0 } else { 0.0 };
        -(phi2 * ui * uj + phi1_over_rho * (d - ui * uj))
    }

    #[test]
    fn peak_value() {
        let m = Mollifier::new(0.1).unwrap();
        assert!((m.v([0.0, 0.0]) - 15.915494309189533).abs() < 1e-10);
        assert_eq!(m.v_truncated([6.0 * 0.1, 0.0]), 0.0);
        assert!(m.v_truncated([0.59, 0.0]) > 0.0);
    }

    #[test]
    fn grid_mass_is_one() {
        // Riemann sum on a 512² torus of side 1 with s = 0.1.
        let m = Mollifier::new(0.1).unwrap();
        let n = 512;
        let h = 1.0 / n as f64;
        let mut sum = 0.0;
        for a in 0..n {
            for b in 0..n {
                let wrap = |k: usize| {
                    let y = k as f64 * h;
                    if y > 0.5 { y - 1.0 } else { y }
                };
                // Periodized over the nearest images.
                for (ia, ib) in [(-1.0, -1.0), (-1.0, 0.0), (-1.0, 1.0), (0.0, -1.0), (0.0, 0.0), (0.0, 1.0), (1.0, -1.0), (1.0, 0.0), (1.0, 1.0)] {
                    sum += m.v([wrap(a) + ia, wrap(b) + ib]) * h * h;
                }
            }
        }
        assert!((sum - 1.0).abs() < 1e-6, "{sum}");
    }

    #[test]
    fn footprint_mass_loss() {
        let m = Mollifier::new(1.0).unwrap();
        let lost = (-(m.footprint_radius.powi(2)) / 2.0).exp();
        assert!(lost < 1e-7);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let m = Mollifier::new(0.7).unwrap();
        let h = 1e-5;
        for x in [[0.3, -0.2], [1.0, 0.5], [-0.9, 1.4]] {
            let g = m.grad_v(x);
            let fd0 = (m.v([x[0] + h, x[1]]) - m.v([x[0] - h, x[1]])) / (2.0 * h);
            let fd1 = (m.v([x[0], x[1] + h]) - m.v([x[0], x[1] - h])) / (2.0 * h);
            assert!((g[0] - fd0).abs() < 1e-6 * g[0].abs().max(1e-3));
            assert!((g[1] - fd1).abs() < 1e-6 * g[1].abs().max(1e-3));
        }
        assert_eq!(m.grad_v([0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn v_hat_values() {
        let m = Mollifier::new(0.4).unwrap();
        assert_eq!(m.v_hat([0.0, 0.0]), 1.0);
        let p = 2f64.sqrt() / 0.4;
        assert!((m.v_hat([p, 0.0]) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn v_hat_is_the_fourier_transform() {
        // Direct 2D quadrature of ∫ cos(p·x) V(x) dx.
        let m = Mollifier::new(0.5).unwrap();
        let opt = PolarOptions { r_max: 12.0, r_min: 1e-8, tol: Tolerance::new(1e-9, 1e-14, 4_000_000), ..Default::default() };
        for p in [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5], [4.0, -4.0]] {
            let est = integrate_plane(|x| (p[0] * x[0] + p[1] * x[1]).cos() * m.v(x), &[[0.0, 0.0]], &opt).unwrap();
            let want = m.v_hat(p);
            assert!((est.value - want).abs() < 1e-4 * want.max(1e-3), "{p:?}: {} vs {want}", est.value);
        }
    }

    #[test]
    fn v_hat_matches_fft_of_sampled_v() {
        use rustfft::{num_complex::Complex, FftPlanner};
        let m = Mollifier::new(0.5).unwrap();
        let (n, l) = (128usize, 16.0);
        let h = l / n as f64;
        let wrap = |k: usize| {
            let y = k as f64 * h;
            if y >= l / 2.0 { y - l } else { y }
        };
        let mut buf: Vec<Complex<f64>> = (0..n * n).map(|k| Complex::new(m.v([wrap(k / n), wrap(k % n)]) * h * h, 0.0)).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        for row in buf.chunks_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = buf[r * n + c];
            }
            fft.process(&mut col);
            for r in 0..n {
                buf[r * n + c] = col[r];
            }
        }
        for (a, b) in [(0usize, 0usize), (1, 0), (3, 2), (5, 7), (10, 0)] {
            let p = [TAU * a as f64 / l, TAU * b as f64 / l];
            let got = buf[a * n + b];
            assert!((got.re - m.v_hat(p)).abs() < 1e-4 && got.im.abs() < 1e-10);
        }
    }

    #[test]
    fn green_values() {
        assert_eq!(green([1.0, 0.0]).unwrap(), 0.0);
        assert!((green([std::f64::consts::E, 0.0]).unwrap() + 1.0 / TAU).abs() < 1e-15);
        assert!(green([0.0, 0.0]).is_err());
    }

    #[test]
    fn cov_omega_matches_closed_form() {
        let m = Mollifier::new(1.0).unwrap();
        for x in [[0.0, 0.0], [0.5, 0.0], [1.0, 1.0], [-2.0, 0.7], [4.0, -3.0], [10.0, 2.0]] {
            for (i, j) in [(0, 0), (1, 1), (0, 1)] {
                let q = m.cov_omega(x, i, j).unwrap().value;
                let c = cov_closed(1.0, x, i, j);
                assert!((q - c).abs() < 1e-9, "{x:?} {i}{j}: {q} vs {c}");
            }
        }
    }

    #[test]
    fn cov_omega_gram_is_psd() {
        let m = Mollifier::new(1.0).unwrap();
        let pts = [[0.0, 0.0], [0.5, 0.2], [1.5, -1.0], [3.0, 0.0], [-0.7, 2.2]];
        let n = 2 * pts.len();
        let mut gram = vec![0.0; n * n];
        for (a, pa) in pts.iter().enumerate() {
            for (b, pb) in pts.iter().enumerate() {
                let d = [pa[0] - pb[0], pa[1] - pb[1]];
                let c = m.cov_omega_matrix(d).unwrap();
                for i in 0..2 {
                    for j in 0..2 {
                        gram[(2 * a + i) * n + 2 * b + j] = c[i][j];
                    }
                }
            }
        }
        let trace: f64 = (0..n).map(|k| gram[k * n + k]).sum();
        // Cholesky with a tiny shift succeeds iff min eigenvalue > -shift.
        let shift = 1e-8 * trace;
        let mut l = gram.clone();
        for k in 0..n {
            l[k * n + k] += shift;
        }
        for k in 0..n {
            for j in 0..=k {
                let mut s = l[k * n + j];
                for t in 0..j {
                    s -= l[k * n + t] * l[j * n + t];
                }
                if j == k {
                    assert!(s > 0.0, "not PSD at pivot {k}: {s}");
                    l[k * n + k] = s.sqrt();
                } else {
                    l[k * n + j] = s / l[j * n + j];
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rotation_invariance(x in -3.0..3.0f64, y in -3.0..3.0f64, th in 0.0..TAU) {
            let m = Mollifier::new(0.8).unwrap();
            let (s, c) = th.sin_cos();
            let r = [c * x - s * y, s * x + c * y];
            prop_assert!((m.v([x, y]) - m.v(r)).abs() <= 1e-14 * m.v([x, y]).max(1e-300));
        }

        #[test]
        fn gradient_is_odd(x in -4.0..4.0f64, y in -4.0..4.0f64) {
            let m = Mollifier::new(1.3).unwrap();
            let a = m.grad_v([x, y]);
            let b = m.grad_v([-x, -y]);
            prop_assert_eq!(a[0], -b[0]);
            prop_assert_eq!(a[1], -b[1]);
        }

        #[test]
        fn v_hat_monotone(a in 0.0..20.0f64, b in 0.0..20.0f64) {
            let m = Mollifier::new(0.3).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.v_hat([lo, 0.0]) >= m.v_hat([0.0, hi]));
            prop_assert!(m.v_hat([hi, 0.0]) >= 0.0);
        }

        #[test]
        fn green_log_law(a in 0.01..100.0f64, b in 0.01..100.0f64, t in 0.0..TAU) {
            let x = [a * t.cos(), a * t.sin()];
            let y = [b, 0.0];
            let d = green(x).unwrap() - green(y).unwrap();
            prop_assert!((d + (a / b).ln() / TAU).abs() < 1e-12);
        }

        #[test]
        fn cov_symmetric(x in -5.0..5.0f64, y in -5.0..5.0f64) {
            let m = Mollifier::new(1.0).unwrap();
            let a = m.cov_omega([x, y], 0, 1).unwrap().value;
            let b = m.cov_omega([x, y], 1, 0).unwrap().value;
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cov_isotropic_at_origin() {
        let m = Mollifier::new(1.0).unwrap();
        let a = m.cov_omega([0.0, 0.0], 0, 0).unwrap().value;
        let b = m.cov_omega([0.0, 0.0], 1, 1).unwrap().value;
        assert!((a - b).abs() < 1e-15);
        assert!((a - 1.0 / (4.0 * PI)).abs() < 1e-10);
    }
}
