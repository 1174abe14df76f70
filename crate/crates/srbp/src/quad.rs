//! Adaptive quadrature: 1D Gauss-Kronrod, 2D Genz-Malik cubature, and a
//! multi-centre log-polar integrator for kernels on the plane with isolated
//! integrable singularities or sharp peaks.
//!
//! All routines use global adaptivity (refine the region with the largest
//! error estimate first) and report a budget breach as
//! [`Error::NonConvergence`] instead of returning an unconverged number.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::TAU;

use serde::Serialize;

use crate::error::{Error, Result};

/// A quadrature result with its error estimate and cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate { value: 0.0, error: 0.0, evals: 0 };

    pub fn scale(self, c: f64) -> Estimate {
        Estimate { value: c * self.value, error: c.abs() * self.error, evals: self.evals }
    }

    pub fn add(self, o: Estimate) -> Estimate {
        Estimate { value: self.value + o.value, error: self.error + o.error, evals: self.evals + o.evals }
    }
}

/// Stopping rule: `error <= max(abs, rel * |value|)`, at most `max_evals`
/// integrand calls.
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_evals: usize,
}

impl Tolerance {
    pub const fn new(rel: f64, abs: f64, max_evals: usize) -> Self {
        Tolerance { rel, abs, max_evals }
    }

    fn met(&self, value: f64, error: f64) -> bool {
        error <= self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-4, 1e-14, 4_000_000)
    }
}

struct Cell<R> {
    err: f64,
    region: R,
}

impl<R> PartialEq for Cell<R> {
    fn eq(&self, o: &Self) -> bool {
        self.err.total_cmp(&o.err) == Ordering::Equal
    }
}
impl<R> Eq for Cell<R> {}
impl<R> PartialOrd for Cell<R> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<R> Ord for Cell<R> {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

// ---------------------------------------------------------------------------
// 1D Gauss-Kronrod 7/15

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Clone, Copy)]
struct Interval {
    a: f64,
    b: f64,
    value: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod on `[a, b]`, starting from `panels` equal pieces.
pub fn integrate_1d<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    tol: Tolerance,
) -> Result<Estimate> {
    let panels = panels.max(1);
    let w = (b - a) / panels as f64;
    let mut pts: Vec<f64> = (0..panels).map(|i| a + i as f64 * w).collect();
    pts.push(b);
    integrate_1d_points(f, &pts, tol)
}

/// Adaptive Gauss-Kronrod over consecutive panels `[pts[i], pts[i+1]]` under
/// one global error budget. `pts` must be nondecreasing; endpoints are never
/// evaluated, so integrable endpoint singularities are allowed.
pub fn integrate_1d_points<F: FnMut(f64) -> f64>(mut f: F, pts: &[f64], tol: Tolerance) -> Result<Estimate> {
    let mut heap = BinaryHeap::new();
    let (mut total, mut total_err, mut evals) = (0.0, 0.0, 0usize);
    for win in pts.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        if hi <= lo {
            continue;
        }
        let (v, e) = gk15(&mut f, lo, hi);
        evals += 15;
        total += v;
        total_err += e;
        heap.push(Cell { err: e, region: Interval { a: lo, b: hi, value: v } });
    }
    while !tol.met(total, total_err) {
        if evals >= tol.max_evals {
            return Err(Error::NonConvergence { estimate: total, error: total_err, evals });
        }
        let Some(Cell { err, region }) = heap.pop() else { break };
        let m = 0.5 * (region.a + region.b);
        let (v1, e1) = gk15(&mut f, region.a, m);
        let (v2, e2) = gk15(&mut f, m, region.b);
        evals += 30;
        total += v1 + v2 - region.value;
        total_err += e1 + e2 - err;
        heap.push(Cell { err: e1, region: Interval { a: region.a, b: m, value: v1 } });
        heap.push(Cell { err: e2, region: Interval { a: m, b: region.b, value: v2 } });
    }
    // Re-sum to shed accumulated rounding from the running updates.
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), c| (v + c.region.value, e + c.err));
    Ok(Estimate { value, error, evals })
}

// ---------------------------------------------------------------------------
// 2D Genz-Malik degree 7 rule with embedded degree 5 error estimate

const L2: f64 = 0.358_568_582_800_318_1; // sqrt(9/70)
const L3: f64 = 0.948_683_298_050_513_8; // sqrt(9/10)
const L5: f64 = 0.688_247_201_611_685_3; // sqrt(9/19)
const W1: f64 = -3816.0 / 19683.0;
const W2: f64 = 980.0 / 6561.0;
const W3: f64 = 1020.0 / 19683.0;
const W4: f64 = 200.0 / 19683.0;
const W5: f64 = 6859.0 / 19683.0 / 4.0;
const V1: f64 = -971.0 / 729.0;
const V2: f64 = 245.0 / 486.0;
const V3: f64 = 65.0 / 1458.0;
const V4: f64 = 25.0 / 729.0;

/// Axis-aligned rectangle tagged with the domain it belongs to.
#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub domain: usize,
    pub center: [f64; 2],
    pub half: [f64; 2],
}

#[derive(Clone, Copy)]
struct Scored {
    rect: Rect,
    value: f64,
    split: usize,
}

fn genz_malik<F: FnMut(usize, [f64; 2]) -> f64>(f: &mut F, r: Rect) -> (f64, f64, usize) {
    let [cx, cy] = r.center;
    let [hx, hy] = r.half;
    let d = r.domain;
    let f0 = f(d, [cx, cy]);
    let mut s2 = [0.0; 2];
    let mut s3 = [0.0; 2];
    s2[0] = f(d, [cx - L2 * hx, cy]) + f(d, [cx + L2 * hx, cy]);
    s2[1] = f(d, [cx, cy - L2 * hy]) + f(d, [cx, cy + L2 * hy]);
    s3[0] = f(d, [cx - L3 * hx, cy]) + f(d, [cx + L3 * hx, cy]);
    s3[1] = f(d, [cx, cy - L3 * hy]) + f(d, [cx, cy + L3 * hy]);
    let (ax, ay) = (L3 * hx, L3 * hy);
    let s4 = f(d, [cx - ax, cy - ay]) + f(d, [cx + ax, cy - ay]) + f(d, [cx - ax, cy + ay]) + f(d, [cx + ax, cy + ay]);
    let (bx, by) = (L5 * hx, L5 * hy);
    let s5 = f(d, [cx - bx, cy - by]) + f(d, [cx + bx, cy - by]) + f(d, [cx - bx, cy + by]) + f(d, [cx + bx, cy + by]);
    let vol = 4.0 * hx * hy;
    let sum2 = s2[0] + s2[1];
    let sum3 = s3[0] + s3[1];
    let i7 = vol * (W1 * f0 + W2 * sum2 + W3 * sum3 + W4 * s4 + W5 * s5);
    let i5 = vol * (V1 * f0 + V2 * sum2 + V3 * sum3 + V4 * s4);
    // Fourth divided differences pick the split axis.
    let ratio = (L2 / L3) * (L2 / L3);
    let dd = |k: usize| ((s2[k] - 2.0 * f0) - ratio * (s3[k] - 2.0 * f0)).abs();
    let split = if dd(1) > dd(0) { 1 } else { 0 };
    (i7, (i7 - i5).abs(), split)
}

/// Adaptive cubature over a union of rectangles with one global error budget.
/// `f(domain, point)` lets callers attach a different integrand (or weight)
/// to each rectangle family.
pub fn cubature<F: FnMut(usize, [f64; 2]) -> f64>(mut f: F, rects: &[Rect], tol: Tolerance) -> Result<Estimate> {
    let mut heap = BinaryHeap::with_capacity(4 * rects.len());
    let (mut total, mut total_err, mut evals) = (0.0, 0.0, 0usize);
    for &r in rects {
        let (v, e, split) = genz_malik(&mut f, r);
        evals += 17;
        total += v;
        total_err += e;
        heap.push(Cell { err: e, region: Scored { rect: r, value: v, split } });
    }
    while !tol.met(total, total_err) {
        if evals >= tol.max_evals {
            return Err(Error::NonConvergence { estimate: total, error: total_err, evals });
        }
        let Some(Cell { err, region }) = heap.pop() else { break };
        let Scored { rect, value, split } = region;
        let mut half = rect.half;
        half[split] *= 0.5;
        let mut c1 = rect.center;
        let mut c2 = rect.center;
        c1[split] -= half[split];
        c2[split] += half[split];
        total -= value;
        total_err -= err;
        for c in [c1, c2] {
            let r = Rect { domain: rect.domain, center: c, half };
            let (v, e, s) = genz_malik(&mut f, r);
            evals += 17;
            total += v;
            total_err += e;
            heap.push(Cell { err: e, region: Scored { rect: r, value: v, split: s } });
        }
    }
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), c| (v + c.region.value, e + c.err));
    Ok(Estimate { value, error, evals })
}

/// Tile `[lo, hi]` into an `nx` by `ny` grid of rectangles for `domain`.
pub fn tile(domain: usize, lo: [f64; 2], hi: [f64; 2], nx: usize, ny: usize) -> Vec<Rect> {
    let hx = 0.5 * (hi[0] - lo[0]) / nx as f64;
    let hy = 0.5 * (hi[1] - lo[1]) / ny as f64;
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            out.push(Rect {
                domain,
                center: [lo[0] + (2 * i + 1) as f64 * hx, lo[1] + (2 * j + 1) as f64 * hy],
                half: [hx, hy],
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Plane integrals in log-polar coordinates

/// Radial window and resolution for log-polar integration.
#[derive(Clone, Copy, Debug)]
pub struct PolarOptions {
    pub r_min: f64,
    pub r_max: f64,
    /// Initial radial panels per factor `e` in radius.
    pub panels_per_efold: f64,
    pub angular_panels: usize,
    pub tol: Tolerance,
}

impl Default for PolarOptions {
    fn default() -> Self {
        PolarOptions { r_min: 1e-10, r_max: 60.0, panels_per_efold: 0.5, angular_panels: 4, tol: Tolerance::default() }
    }
}

fn log_polar_tiles(domain: usize, r_lo: f64, r_hi: f64, opt: &PolarOptions) -> Vec<Rect> {
    let (u0, u1) = (r_lo.ln(), r_hi.ln());
    let nu = ((u1 - u0) * opt.panels_per_efold).ceil().max(1.0) as usize;
    tile(domain, [u0, 0.0], [u1, TAU], nu, opt.angular_panels.max(1))
}

#[inline]
fn polar_point(c: [f64; 2], u: f64, th: f64) -> ([f64; 2], f64) {
    let r = u.exp();
    let (s, co) = th.sin_cos();
    ([c[0] + r * co, c[1] + r * s], r * r)
}

/// ∫ f over the annulus `r_lo <= |x - c| <= r_hi`, using `u = log r`.
pub fn integrate_annulus<F: Fn([f64; 2]) -> f64>(
    f: F,
    c: [f64; 2],
    r_lo: f64,
    r_hi: f64,
    opt: &PolarOptions,
) -> Result<Estimate> {
    if r_hi <= r_lo {
        return Ok(Estimate::ZERO);
    }
    let rects = log_polar_tiles(0, r_lo, r_hi, opt);
    cubature(
        |_, [u, th]| {
            let (x, jac) = polar_point(c, u, th);
            f(x) * jac
        },
        &rects,
        opt.tol,
    )
}

/// Smooth partition-of-unity weights `w_i = d_i^{-2} / Σ_k d_k^{-2}`.
/// Each weight is 1 at its own centre and vanishes quadratically at the
/// others, so `w_i f` keeps only the singularity at centre `i`.
#[inline]
fn partition_weight(x: [f64; 2], i: usize, centers: &[[f64; 2]]) -> f64 {
    let d2 = |c: &[f64; 2]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
    let di = d2(&centers[i]);
    if di == 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for c in centers {
        let dk = d2(c);
        if dk == 0.0 {
            return 0.0;
        }
        s += di / dk;
    }
    1.0 / s
}

/// Remove centres closer than `eps` to an earlier one.
pub fn dedup_centers(centers: &[[f64; 2]], eps: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(centers.len());
    for &c in centers {
        if out.iter().all(|o| (o[0] - c[0]).hypot(o[1] - c[1]) > eps) {
            out.push(c);
        }
    }
    out
}

/// ∫_{R²} f, where `f` may be singular or sharply peaked at any of `centers`
/// and decays beyond `r_max` from every centre. The plane is split by a
/// smooth partition of unity; each piece is integrated in log-polar
/// coordinates about its own centre under one global error budget.
pub fn integrate_plane<F: Fn([f64; 2]) -> f64>(f: F, centers: &[[f64; 2]], opt: &PolarOptions) -> Result<Estimate> {
    let centers = dedup_centers(centers, opt.r_min);
    let mut rects = Vec::new();
    for i in 0..centers.len() {
        rects.extend(log_polar_tiles(i, opt.r_min, opt.r_max, opt));
    }
    cubature(
        |i, [u, th]| {
            let (x, jac) = polar_point(centers[i], u, th);
            let w = if centers.len() == 1 { 1.0 } else { partition_weight(x, i, &centers) };
            if w == 0.0 {
                0.0
            } else {
                w * f(x) * jac
            }
        },
        &rects,
        opt.tol,
    )
}

/// Like [`integrate_radial`], with extra panel boundaries at `breaks`
/// (peaks or integrable singularities of `f`). Breaks outside the window are
/// ignored.
pub fn integrate_radial_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    r_min: f64,
    r_max: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    let (u0, u1) = (r_min.ln(), r_max.ln());
    let panels = ((u1 - u0) / 2.0).ceil().max(1.0) as usize;
    let mut pts: Vec<f64> = (0..=panels).map(|i| u0 + (u1 - u0) * i as f64 / panels as f64).collect();
    pts.extend(breaks.iter().filter(|&&b| b > r_min && b < r_max).map(|b| b.ln()));
    pts.sort_by(f64::total_cmp);
    integrate_1d_points(
        |u| {
            let r = u.exp();
            f(r) * r
        },
        &pts,
        tol,
    )
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// ∫_0^∞ f(r) dr over `[r_min, r_max]` with `u = log r`.
pub fn integrate_radial<F: Fn(f64) -> f64>(f: F, r_min: f64, r_max: f64, tol: Tolerance) -> Result<Estimate> {
    let (u0, u1) = (r_min.ln(), r_max.ln());
    let panels = ((u1 - u0) / 2.0).ceil() as usize;
    integrate_1d(
        |u| {
            let r = u.exp();
            f(r) * r
        },
        u0,
        u1,
        panels,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in [1usize, 2, 5, 16, 33] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg + 1) as f64 };
                assert!((q - exact).abs() < 1e-12, "n {n} deg {deg}: {q}");
            }
        }
    }

    #[test]
    fn breakpoints_tame_log_singularity() {
        // ∫_0^2 -ln|1 - r| dr = 2, singular at the break r = 1.
        let e = integrate_radial_breaks(|r| -(1.0 - r).abs().ln(), 1e-12, 2.0, &[1.0], Tolerance::new(1e-10, 0.0, 200_000)).unwrap();
        assert!((e.value - 2.0).abs() < 1e-8, "{}", e.value);
    }

    #[test]
    fn gk_polynomials_and_smooth() {
        let e = integrate_1d(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1, Tolerance::default()).unwrap();
        assert!((e.value - (63.0 / 6.0 - 9.0)).abs() < 1e-12);
        let e = integrate_1d(|x| x.sin(), 0.0, PI, 1, Tolerance::new(1e-12, 0.0, 100_000)).unwrap();
        assert!((e.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gk_endpoint_singularity() {
        let e = integrate_1d(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1, Tolerance::new(1e-8, 0.0, 1_000_000)).unwrap();
        assert!((e.value - 2.0).abs() < 1e-7);
    }

    #[test]
    fn budget_breach_is_error() {
        let r = integrate_1d(|x| (1.0 / x).sin() / x, 1e-9, 1.0, 1, Tolerance::new(1e-12, 0.0, 300));
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn genz_malik_exact_for_degree_seven() {
        let f = |_: usize, [x, y]: [f64; 2]| x.powi(6) * y + x * x * y.powi(4) + 1.0;
        let r = Rect { domain: 0, center: [0.5, 0.5], half: [0.5, 0.5] };
        let (v, e, _) = genz_malik(&mut { f }, r);
        let exact = 1.0 / 14.0 + 1.0 / 15.0 + 1.0;
        assert!((v - exact).abs() < 1e-14, "{v} vs {exact}");
        assert!(e < 1e-2);
    }

    #[test]
    fn cubature_gaussian() {
        let rects = tile(0, [-8.0, -8.0], [8.0, 8.0], 2, 2);
        let e = cubature(|_, [x, y]| (-(x * x + y * y) / 2.0).exp(), &rects, Tolerance::new(1e-9, 0.0, 1_000_000)).unwrap();
        assert!((e.value - 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn plane_log_singularity_at_two_centres() {
        // ∫ e^{-|x|²/2} / |x - c| dx; compare one-centre and two-centre splits.
        let c = [1.3, -0.4];
        let f = |x: [f64; 2]| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp() / (x[0] - c[0]).hypot(x[1] - c[1]);
        let opt = PolarOptions { tol: Tolerance::new(1e-8, 0.0, 4_000_000), r_max: 40.0, ..Default::default() };
        let a = integrate_plane(f, &[c], &opt).unwrap();
        let b = integrate_plane(f, &[[0.0, 0.0], c], &opt).unwrap();
        assert!((a.value - b.value).abs() < 1e-6 * a.value, "{a:?} {b:?}");
    }

    #[test]
    fn plane_sharp_peak() {
        // ∫ e^{-|x|²/2}/(λ + |x - c|²) ≈ π e^{-|c|²/2} log(1/λ) + O(1); check vs radial reference at c = 0.
        let lam = 1e-8;
        let f = |x: [f64; 2]| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp() / (lam + x[0] * x[0] + x[1] * x[1]);
        let opt = PolarOptions { tol: Tolerance::new(1e-8, 0.0, 4_000_000), r_min: 1e-12, r_max: 40.0, ..Default::default() };
        let a = integrate_plane(f, &[[0.0, 0.0], [2.0, 1.0]], &opt).unwrap();
        let r = integrate_radial(|r| TAU * r * (-r * r / 2.0).exp() / (lam + r * r), 1e-12, 40.0, Tolerance::new(1e-12, 0.0, 1_000_000))
            .unwrap();
        assert!((a.value - r.value).abs() < 1e-6 * r.value, "{} {}", a.value, r.value);
    }

    #[test]
    fn partition_weights_sum_to_one() {
        let cs = [[0.0, 0.0], [1.0, 0.0], [0.3, 2.0]];
        for x in [[0.2, 0.1], [5.0, -3.0], [1.0, 1e-9]] {
            let s: f64 = (0..3).map(|i| partition_weight(x, i, &cs)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(partition_weight([1.0, 0.0], 1, &cs), 1.0);
        assert_eq!(partition_weight([1.0, 0.0], 0, &cs), 0.0);
    }
}
