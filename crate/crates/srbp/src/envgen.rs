//! Spectral sampling of the gradient-GFF environment `ω = ∇(√V ∗ Φ)` on a
//! periodic grid.
//!
//! Torus normalization. With `p_k = 2πk/L`, the scalar field is
//! `ξ(x) = Σ_k c_k e^{i p_k·x}` where the `c_k` are centred complex Gaussians
//! with `E|c_k|² = S(p_k)/L²` and `S(p) = V̂(p)/|p|²` (the continuum spectral
//! density divided by the torus area, i.e. `h²/L²` per FFT cell after the
//! unnormalized inverse transform). Then `ω̂_i(k) = i p_i c_k`.
//! The zero mode is dropped, and so are the Nyquist rows and columns: there
//! the central-difference derivative is not real, and `V̂` is below `e^{-2π²}`
//! anyway because `h ≤ s/2`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::Mollifier;
use crate::rng::Stream;

/// Periodic square grid `[0, L)²` with `n` nodes per side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub l: f64,
    pub n: usize,
}

impl TorusGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(invalid(format!("grid size must be a power of two, got {n}")));
        }
        if n < 64 {
            return Err(invalid(format!("grid size must be at least 64, got {n}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(invalid(format!("torus side must be positive, got {l}")));
        }
        Ok(TorusGrid { l, n })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Check resolution against a mollifier: `h ≤ s/2` and `L ≥ 40s`.
    pub fn check_resolves(&self, m: &Mollifier) -> Result<()> {
        if self.h() > 0.5 * m.s * (1.0 + 1e-12) {
            return Err(invalid(format!("grid spacing {} exceeds s/2 = {}", self.h(), 0.5 * m.s)));
        }
        if self.l < 40.0 * m.s {
            return Err(invalid(format!("torus side {} below 40 s = {}", self.l, 40.0 * m.s)));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Signed frequency of FFT bin `k`.
    #[inline]
    pub fn freq(&self, k: usize) -> i64 {
        if k < self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    #[inline]
    pub fn momentum(&self, k0: usize, k1: usize) -> [f64; 2] {
        let c = std::f64::consts::TAU / self.l;
        [c * self.freq(k0) as f64, c * self.freq(k1) as f64]
    }

    /// Wrap a coordinate into `[0, L)`.
    #[inline]
    pub fn wrap(&self, x: f64) -> f64 {
        let y = x.rem_euclid(self.l);
        if y >= self.l {
            0.0
        } else {
            y
        }
    }

    /// Minimal-image displacement in `(-L/2, L/2]`.
    #[inline]
    pub fn min_image(&self, d: f64) -> f64 {
        d - self.l * (d / self.l).round()
    }
}

/// Seed provenance of a sampled field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
}

/// A sampled environment: `values[i * n + j] = ω(i h, j h)`.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub grid: TorusGrid,
    pub values: Vec<[f64; 2]>,
    pub provenance: Provenance,
}

impl GradientField {
    pub fn zeros(grid: TorusGrid) -> Self {
        GradientField { grid, values: vec![[0.0; 2]; grid.n * grid.n], provenance: Provenance { seed: 0 } }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        self.values[self.grid.index(i, j)]
    }

    /// RMS of `|ω|` over the grid.
    pub fn rms(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum();
        (s / self.values.len() as f64).sqrt()
    }

    /// RMS of the spectral curl `∂₁ω₂ - ∂₂ω₁`. The sampler builds `ω` with
    /// the spectral derivative, so this vanishes up to rounding. (Central
    /// differences do not commute with it in the mixed combination; see
    /// [`GradientField::central_curl_rms`].)
    pub fn curl_rms(&self) -> f64 {
        let g = self.grid;
        let (plan, w1, w2) = self.spectra();
        let mut c = vec![Complex64::new(0.0, 0.0); g.n * g.n];
        for k0 in 0..g.n {
            for k1 in 0..g.n {
                let p = g.momentum(k0, k1);
                let idx = g.index(k0, k1);
                c[idx] = Complex64::i() * (p[0] * w2[idx] - p[1] * w1[idx]);
            }
        }
        plan.inverse(&mut c);
        let scale = 1.0 / (g.n * g.n) as f64;
        (c.iter().map(|z| (z * scale).norm_sqr()).sum::<f64>() / (g.n * g.n) as f64).sqrt()
    }

    /// RMS of the central-difference curl; `O(h²)` relative to `|∇ω|`, not zero.
    pub fn central_curl_rms(&self) -> f64 {
        let n = self.grid.n;
        let h = self.grid.h();
        let mut s = 0.0;
        for i in 0..n {
            let (ip, im) = ((i + 1) % n, (i + n - 1) % n);
            for j in 0..n {
                let (jp, jm) = ((j + 1) % n, (j + n - 1) % n);
                let d1w2 = (self.at(ip, j)[1] - self.at(im, j)[1]) / (2.0 * h);
                let d2w1 = (self.at(i, jp)[0] - self.at(i, jm)[0]) / (2.0 * h);
                s += (d1w2 - d2w1).powi(2);
            }
        }
        (s / (n * n) as f64).sqrt()
    }

    /// Forward spectra of the two components (unnormalized).
    fn spectra(&self) -> (FftPlan, Vec<Complex64>, Vec<Complex64>) {
        let g = self.grid;
        let n = g.n;
        let plan = FftPlan::new(n);
        let mut z: Vec<Complex64> = self.values.iter().map(|v| Complex64::new(v[0], v[1])).collect();
        plan.forward(&mut z);
        // Split the packed transform into the two real components' spectra.
        let mut w1 = vec![Complex64::new(0.0, 0.0); n * n];
        let mut w2 = vec![Complex64::new(0.0, 0.0); n * n];
        for k0 in 0..n {
            for k1 in 0..n {
                let a = z[g.index(k0, k1)];
                let b = z[g.index((n - k0) % n, (n - k1) % n)].conj();
                w1[g.index(k0, k1)] = 0.5 * (a + b);
                w2[g.index(k0, k1)] = Complex64::new(0.0, -0.5) * (a - b);
            }
        }
        (plan, w1, w2)
    }

    /// Spatial mean of each component.
    pub fn mean(&self) -> [f64; 2] {
        let k = self.values.len() as f64;
        let s = self.values.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        [s[0] / k, s[1] / k]
    }

    /// Recover the scalar potential `ξ` with `ω = ∇ξ` by spectral integration,
    /// `ξ̂ = -i (p·ω̂)/|p|²`, and report the residual `|ω - ∇ξ|` (RMS,
    /// relative to RMS `|ω|`) where `∇` is the same spectral derivative.
    pub fn potential(&self) -> (Vec<f64>, f64) {
        let g = self.grid;
        let n = g.n;
        let (plan, w1, w2) = self.spectra();
        let mut xi = vec![Complex64::new(0.0, 0.0); n * n];
        let mut resid = vec![Complex64::new(0.0, 0.0); n * n];
        for k0 in 0..n {
            for k1 in 0..n {
                let p = g.momentum(k0, k1);
                let p2 = p[0] * p[0] + p[1] * p[1];
                let idx = g.index(k0, k1);
                if p2 == 0.0 {
                    resid[idx] = w1[idx] + Complex64::i() * w2[idx];
                    continue;
                }
                let x = Complex64::new(0.0, -1.0) * (p[0] * w1[idx] + p[1] * w2[idx]) / p2;
                xi[idx] = x;
                let g1 = Complex64::i() * p[0] * x;
                let g2 = Complex64::i() * p[1] * x;
                resid[idx] = (w1[idx] - g1) + Complex64::i() * (w2[idx] - g2);
            }
        }
        plan.inverse(&mut xi);
        plan.inverse(&mut resid);
        let scale = 1.0 / (n * n) as f64;
        let r2: f64 = resid.iter().map(|c| (c * scale).norm_sqr()).sum::<f64>() / (n * n) as f64;
        let rms = self.rms();
        let rel = if rms > 0.0 { r2.sqrt() / rms } else { r2.sqrt() };
        (xi.iter().map(|c| c.re * scale).collect(), rel)
    }

    /// The field rotated by a quarter turn: `ω'(x) = R ω(R⁻¹x)`, `R(a,b) = (-b,a)`.
    pub fn rotated_quarter(&self) -> GradientField {
        let n = self.grid.n;
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                // R⁻¹(i, j) = (j, -i)
                let v = self.at(j, (n - i) % n);
                out.values[self.grid.index(i, j)] = [-v[1], v[0]];
            }
        }
        out
    }

    /// Binary dump: 32-byte header (`SRBPFLD1`, n as u64, L as f64, seed as
    /// u64, all little-endian) followed by `n²` interleaved `(ω₁, ω₂)` f64
    /// pairs in row-major order.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"SRBPFLD1")?;
        w.write_all(&(self.grid.n as u64).to_le_bytes())?;
        w.write_all(&self.grid.l.to_le_bytes())?;
        w.write_all(&self.provenance.seed.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v[0].to_le_bytes())?;
            w.write_all(&v[1].to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row-column 2D FFT on an `n x n` row-major buffer.
pub struct FftPlan {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPlan { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.fwd)
    }

    /// Unnormalized inverse: `x_j = Σ_k X_k e^{+2πi jk/n}`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inv)
    }

    fn run(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        buf.par_chunks_mut(n).for_each(|row| fft.process(row));
        transpose(buf, n);
        buf.par_chunks_mut(n).for_each(|row| fft.process(row));
        transpose(buf, n);
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Index of the canonical member of the Hermitian pair `{k, -k}`.
#[inline]
fn canonical(n: usize, k0: usize, k1: usize) -> (usize, bool) {
    let (m0, m1) = ((n - k0) % n, (n - k1) % n);
    let a = k0 * n + k1;
    let b = m0 * n + m1;
    if a <= b {
        (a, true)
    } else {
        (b, false)
    }
}

/// Draw one environment. Mode `k`'s Gaussian pair is a pure function of
/// `(seed, canonical index of {k, -k})`, so the sample does not depend on the
/// order in which rows are processed.
pub fn sample_environment(grid: TorusGrid, m: &Mollifier, seed: u64) -> Result<GradientField> {
    TorusGrid::new(grid.l, grid.n)?;
    grid.check_resolves(m)?;
    let plan = FftPlan::new(grid.n);
    Ok(sample_with_plan(grid, m, seed, &plan))
}

/// As [`sample_environment`] with a reusable FFT plan (grid already validated).
pub fn sample_with_plan(grid: TorusGrid, m: &Mollifier, seed: u64, plan: &FftPlan) -> GradientField {
    let n = grid.n;
    let area = grid.l * grid.l;
    let half = n / 2;
    let mut z = vec![Complex64::new(0.0, 0.0); n * n];
    z.par_chunks_mut(n).enumerate().for_each(|(k0, row)| {
        if k0 == half {
            return;
        }
        for (k1, slot) in row.iter_mut().enumerate() {
            if k1 == half || (k0 == 0 && k1 == 0) {
                continue;
            }
            let p = grid.momentum(k0, k1);
            let p2 = p[0] * p[0] + p[1] * p[1];
            let amp = (m.v_hat_sq(p2) / (p2 * area) / 2.0).sqrt();
            let (key, is_canon) = canonical(n, k0, k1);
            let (a, b) = Stream::new(seed, key as u64).normal_pair();
            let c = if is_canon { Complex64::new(amp * a, amp * b) } else { Complex64::new(amp * a, -amp * b) };
            // Pack ω₁ + iω₂: ω̂₁ = i p₀ c, ω̂₂ = i p₁ c.
            *slot = Complex64::i() * p[0] * c - p[1] * c;
        }
    });
    plan.inverse(&mut z);
    GradientField { grid, values: z.iter().map(|c| [c.re, c.im]).collect(), provenance: Provenance { seed } }
}

/// Streaming estimator of `E[ω_i(x) ω_j(x + dx)]`, averaged over `x`.
///
/// Per field `f` it records `c_f = mean_x ω_i(x) ω_j(x+dx)` and keeps running
/// node sums of `ω`. The estimate is the unbiased
/// `F/(F-1) · (mean_f c_f - mean_x ω̄_i(x) ω̄_j(x+dx))`; standard errors are the
/// delete-one jackknife of the leading term (the centring term is `O(1/F)`).
#[derive(Clone, Debug)]
pub struct CovarianceAccumulator {
    grid: TorusGrid,
    dx: [i64; 2],
    per_field: Vec<[[f64; 2]; 2]>,
    node_sum: Vec<[f64; 2]>,
}

/// Covariance matrix with standard errors.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CovarianceEstimate {
    pub cov: [[f64; 2]; 2],
    pub se: [[f64; 2]; 2],
    pub n_fields: usize,
}

impl CovarianceAccumulator {
    pub fn new(grid: TorusGrid, dx: [i64; 2]) -> Self {
        CovarianceAccumulator { grid, dx, per_field: Vec::new(), node_sum: vec![[0.0; 2]; grid.n * grid.n] }
    }

    pub fn push(&mut self, f: &GradientField) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", f.grid, self.grid)));
        }
        self.per_field.push(lagged_products(f, self.dx));
        for (s, v) in self.node_sum.iter_mut().zip(&f.values) {
            s[0] += v[0];
            s[1] += v[1];
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<CovarianceEstimate> {
        let nf = self.per_field.len();
        if nf < 2 {
            return Err(invalid("empirical covariance needs at least two fields"));
        }
        let fm = nf as f64;
        let mut mean = [[0.0; 2]; 2];
        for c in &self.per_field {
            for i in 0..2 {
                for j in 0..2 {
                    mean[i][j] += c[i][j] / fm;
                }
            }
        }
        let avg: Vec<[f64; 2]> = self.node_sum.iter().map(|s| [s[0] / fm, s[1] / fm]).collect();
        let centring = lagged_products(
            &GradientField { grid: self.grid, values: avg, provenance: Provenance { seed: 0 } },
            self.dx,
        );
        let mut cov = [[0.0; 2]; 2];
        let mut se = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] = fm / (fm - 1.0) * (mean[i][j] - centring[i][j]);
                // Jackknife of a mean reduces to the sample standard error.
                let ss: f64 = self.per_field.iter().map(|c| (c[i][j] - mean[i][j]).powi(2)).sum();
                se[i][j] = (ss / (fm - 1.0) / fm).sqrt();
            }
        }
        Ok(CovarianceEstimate { cov, se, n_fields: nf })
    }
}

fn lagged_products(f: &GradientField, dx: [i64; 2]) -> [[f64; 2]; 2] {
    let n = f.grid.n;
    let sh = |a: usize, d: i64| ((a as i64 + d).rem_euclid(n as i64)) as usize;
    let mut c = [[0.0; 2]; 2];
    for a in 0..n {
        let a2 = sh(a, dx[0]);
        for b in 0..n {
            let u = f.at(a, b);
            let v = f.at(a2, sh(b, dx[1]));
            c[0][0] += u[0] * v[0];
            c[0][1] += u[0] * v[1];
            c[1][0] += u[1] * v[0];
            c[1][1] += u[1] * v[1];
        }
    }
    let k = (n * n) as f64;
    for row in &mut c {
        for x in row.iter_mut() {
            *x /= k;
        }
    }
    c
}

/// Unbiased covariance of `(ω(x), ω(x + dx))` over a set of fields.
pub fn empirical_covariance(fields: &[GradientField], dx: [i64; 2]) -> Result<CovarianceEstimate> {
    let first = fields.first().ok_or_else(|| invalid("no fields"))?;
    let mut acc = CovarianceAccumulator::new(first.grid, dx);
    for f in fields {
        acc.push(f)?;
    }
    acc.finish()
}
