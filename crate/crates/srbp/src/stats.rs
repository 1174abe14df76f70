//! Ensemble statistics: mean squared displacement with jackknife errors,
//! effective diffusivity, isotropy, characteristic-function Gaussianity and
//! the strong-coupling trend scan. Also the small regression helpers shared
//! with the quadrature experiments.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::envgen::{sample_with_plan, FftPlan, TorusGrid};
use crate::error::{invalid, Result};
use crate::kernels::Mollifier;
use crate::polymer::{environment_seed, gamma_of, CouplingSchedule, OccupationDrift, PolymerState, RunOptions, Trajectory};
use crate::rng::{derive, Stream};

// ---------------------------------------------------------------------------
// Regression

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub r2: f64,
    pub n: usize,
}

/// Least squares `y = a + b x`. With `weights` (taken as `1/σ²`) the
/// covariance is `(XᵀWX)⁻¹` inflated by the reduced χ² when that exceeds
/// one; without weights it is the usual residual-variance estimate.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(invalid("linear fit needs ≥ 2 points and matching lengths"));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let wi = w(i);
        sw += wi;
        sx += wi * x[i];
        sy += wi * y[i];
        sxx += wi * x[i] * x[i];
        sxy += wi * x[i] * y[i];
    }
    let det = sw * sxx - sx * sx;
    if !(det.abs() > 0.0) {
        return Err(invalid("degenerate abscissae in linear fit"));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    let ybar = sy / sw;
    let (mut rss, mut tss) = (0.0, 0.0);
    for i in 0..n {
        let r = y[i] - intercept - slope * x[i];
        rss += w(i) * r * r;
        tss += w(i) * (y[i] - ybar).powi(2);
    }
    let dof = n.saturating_sub(2) as f64;
    let scale = match (weights, dof > 0.0) {
        (Some(_), true) => (rss / dof).max(1.0),
        (Some(_), false) => 1.0,
        (None, true) => rss / dof,
        (None, false) => 0.0,
    };
    Ok(LinearFit {
        intercept,
        slope,
        intercept_se: (scale * sxx / det).sqrt(),
        slope_se: (scale * sw / det).sqrt(),
        r2: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        n,
    })
}

/// Mean and the jackknife standard error from leave-one-out means.
pub fn jackknife_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let sum: f64 = xs.iter().sum();
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let nf = n as f64;
    let ss: f64 = xs.iter().map(|x| ((sum - x) / (nf - 1.0) - mean).powi(2)).sum();
    (mean, ((nf - 1.0) / nf * ss).sqrt())
}

/// Standard error of the mean from `batches` contiguous batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || xs.len() < batches {
        return Err(invalid("batch means need ≥ 2 batches of ≥ 1 value"));
    }
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// Two estimates agree within `z` combined standard errors.
pub fn consistent(a: f64, sa: f64, b: f64, sb: f64, z: f64) -> bool {
    (a - b).abs() <= z * sa.hypot(sb)
}

/// No step of the sequence decreases by more than `z` combined standard errors.
pub fn nondecreasing(values: &[f64], ses: &[f64], z: f64) -> bool {
    values.windows(2).zip(ses.windows(2)).all(|(v, s)| v[1] - v[0] >= -z * s[0].hypot(s[1]))
}

fn normal_sf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).map(|n| 1.0 - n.cdf(z)).unwrap_or(f64::NAN)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MannKendall {
    pub s: i64,
    pub var_s: f64,
    pub z: f64,
    /// One-sided p-value for an increasing trend.
    pub p_increasing: f64,
}

/// Mann–Kendall trend statistic (no tie correction; ties contribute 0).
pub fn mann_kendall(xs: &[f64]) -> MannKendall {
    let n = xs.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match xs[j].partial_cmp(&xs[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let nf = n as f64;
    let var_s = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if var_s > 0.0 {
        match s.signum() {
            1 => (s as f64 - 1.0) / var_s.sqrt(),
            -1 => (s as f64 + 1.0) / var_s.sqrt(),
            _ => 0.0,
        }
    } else {
        0.0
    };
    MannKendall { s, var_s, z, p_increasing: normal_sf(z) }
}

// ---------------------------------------------------------------------------
// Ensembles

/// Positions of every path at a common set of times, `[path][time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl Ensemble {
    /// Sample trajectories at `times` by linear interpolation. Errors when a
    /// path does not reach `max(times)`.
    pub fn from_trajectories(trajs: &[Trajectory], times: &[f64]) -> Result<Self> {
        Self::rescaled(trajs, times, 1.0)
    }

    /// Macroscopic view `X^ε_t = ε X_{t/ε²}` at macroscopic `times`.
    pub fn rescaled(trajs: &[Trajectory], times: &[f64], eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(invalid("scale must be positive"));
        }
        let positions = trajs
            .iter()
            .map(|tr| {
                times
                    .iter()
                    .map(|&t| {
                        tr.position_at(t / (eps * eps)).map(|x| [eps * x[0], eps * x[1]]).ok_or_else(|| {
                            invalid(format!("trajectory ends at {} before requested time {}", tr.end_time(), t / (eps * eps)))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble { times: times.to_vec(), positions })
    }

    pub fn n_paths(&self) -> usize {
        self.positions.len()
    }

    fn column<F: Fn([f64; 2]) -> f64>(&self, k: usize, f: F) -> Vec<f64> {
        self.positions.iter().map(|p| f(p[k])).collect()
    }
}

/// Everything that fixes the law of one annealed path.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleSpec {
    pub schedule: CouplingSchedule,
    pub grid: TorusGrid,
    pub mollifier: Mollifier,
    pub dt: f64,
    /// Start from a fresh environment sample per path; otherwise `ω = 0`.
    pub environment: bool,
}

impl Ensemble {
    /// Simulate `n_paths` annealed paths and record `ε X_{t/ε²}` at each
    /// macroscopic `t` in `times` (`eps = 1` gives the raw process). Path `i`
    /// uses seed `derive(seed, i)` and its own environment.
    pub fn simulate(spec: &EnsembleSpec, times: &[f64], eps: f64, n_paths: usize, seed: u64) -> Result<Self> {
        if !(eps > 0.0) || !(spec.dt > 0.0) {
            return Err(invalid("simulation needs ε > 0 and dt > 0"));
        }
        if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("record times must be nonnegative and sorted"));
        }
        spec.grid.check_resolves(&spec.mollifier)?;
        let gamma = gamma_of(&spec.schedule)?;
        let opts = RunOptions::new(spec.dt);
        let steps: Vec<usize> = times.iter().map(|t| (t / (eps * eps) / spec.dt).round() as usize).collect();
        if steps.last().is_some_and(|&s| s > opts.max_steps) {
            return Err(invalid(format!("{} steps exceed the cap of {}", steps.last().unwrap(), opts.max_steps)));
        }
        let plan = (spec.environment && gamma > 0.0).then(|| FftPlan::new(spec.grid.n));
        let positions = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let ps = derive(seed, i as u64);
                let env = plan.as_ref().map(|p| sample_with_plan(spec.grid, &spec.mollifier, environment_seed(ps), p));
                let occ = OccupationDrift::new(spec.grid, spec.mollifier, gamma, env.as_ref())?;
                let mut st = PolymerState::new(occ, ps);
                let mut done = 0;
                let mut out = Vec::with_capacity(steps.len());
                for &k in &steps {
                    st.advance(k - done, &opts, done, None)?;
                    done = k;
                    out.push([eps * st.x[0], eps * st.x[1]]);
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble { times: times.to_vec(), positions })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EnsembleMeta {
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub dt: Option<f64>,
    pub l: Option<f64>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    pub msd_se: Vec<f64>,
    /// `(E[X₁²], E[X₂²])` per time.
    pub axis_m2: Vec<[f64; 2]>,
    pub ax_diff: Vec<f64>,
    pub ax_diff_se: Vec<f64>,
    /// `MSD/(2t)`, `NaN` at `t = 0`.
    pub dhat: Vec<f64>,
    pub dhat_se: Vec<f64>,
    pub meta: EnsembleMeta,
}

/// Ensemble mean of `|X_t|²` at every time, with jackknife errors.
pub fn msd(ens: &Ensemble, meta: EnsembleMeta) -> EnsembleSummary {
    let rows: Vec<_> = (0..ens.times.len())
        .into_par_iter()
        .map(|k| {
            let (m, se) = jackknife_mean(&ens.column(k, |x| x[0] * x[0] + x[1] * x[1]));
            let m1 = jackknife_mean(&ens.column(k, |x| x[0] * x[0])).0;
            let m2 = jackknife_mean(&ens.column(k, |x| x[1] * x[1])).0;
            let (d, dse) = jackknife_mean(&ens.column(k, |x| x[0] * x[0] - x[1] * x[1]));
            (m, se, [m1, m2], d, dse)
        })
        .collect();
    let times = ens.times.clone();
    let dhat = rows.iter().zip(&times).map(|(r, &t)| if t > 0.0 { r.0 / (2.0 * t) } else { f64::NAN }).collect();
    let dhat_se = rows.iter().zip(&times).map(|(r, &t)| if t > 0.0 { r.1 / (2.0 * t) } else { f64::NAN }).collect();
    EnsembleSummary {
        n_paths: ens.n_paths(),
        msd: rows.iter().map(|r| r.0).collect(),
        msd_se: rows.iter().map(|r| r.1).collect(),
        axis_m2: rows.iter().map(|r| r.2).collect(),
        ax_diff: rows.iter().map(|r| r.3).collect(),
        ax_diff_se: rows.iter().map(|r| r.4).collect(),
        dhat,
        dhat_se,
        times,
        meta,
    }
}

impl EnsembleSummary {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["t", "msd", "msd_se", "dhat", "dhat_se", "ax_diff", "ax_diff_se"]).map_err(csv_err)?;
        for k in 0..self.times.len() {
            w.write_record(
                [self.times[k], self.msd[k], self.msd_se[k], self.dhat[k], self.dhat_se[k], self.ax_diff[k], self.ax_diff_se[k]]
                    .map(|v| format!("{v:e}")),
            )
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => crate::Error::Io(e),
        other => crate::Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// `D̂ = MSD(t)/(2t)` with its standard error.
pub fn effective_diffusivity(ens: &Ensemble, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(invalid("effective diffusivity needs t > 0"));
    }
    let k = time_index(ens, t)?;
    let (m, se) = jackknife_mean(&ens.column(k, |x| x[0] * x[0] + x[1] * x[1]));
    Ok((m / (2.0 * t), se / (2.0 * t)))
}

fn time_index(ens: &Ensemble, t: f64) -> Result<usize> {
    ens.times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
        .ok_or_else(|| invalid(format!("time {t} is not one of the ensemble times")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IsotropyReport {
    pub t: f64,
    pub m2: [f64; 2],
    pub axis_diff: f64,
    pub axis_diff_se: f64,
    pub cross: f64,
    pub cross_se: f64,
    /// Both within 3σ of zero.
    pub pass: bool,
}

pub fn isotropy_test(ens: &Ensemble, t: f64) -> Result<IsotropyReport> {
    let k = time_index(ens, t)?;
    let (d, dse) = jackknife_mean(&ens.column(k, |x| x[0] * x[0] - x[1] * x[1]));
    let (c, cse) = jackknife_mean(&ens.column(k, |x| x[0] * x[1]));
    let m2 = [jackknife_mean(&ens.column(k, |x| x[0] * x[0])).0, jackknife_mean(&ens.column(k, |x| x[1] * x[1])).0];
    Ok(IsotropyReport { t, m2, axis_diff: d, axis_diff_se: dse, cross: c, cross_se: cse, pass: d.abs() <= 3.0 * dse && c.abs() <= 3.0 * cse })
}

// ---------------------------------------------------------------------------
// Characteristic function

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharFnRow {
    pub t0: f64,
    pub t1: f64,
    pub theta: [f64; 2],
    pub dhat: f64,
    pub re: f64,
    pub im: f64,
    pub target: f64,
    pub deviation: f64,
    pub band_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharFnReport {
    pub rows: Vec<CharFnRow>,
    /// Largest `deviation / band_se`.
    pub max_z: f64,
    pub max_deviation: f64,
    /// Bootstrap p-value of the joint-increment factorisation statistic.
    pub factorization_p: f64,
    pub factorization_stat: f64,
    pub n_boot: usize,
    pub pass: bool,
}

fn cf(incs: &[[f64; 2]], theta: [f64; 2], idx: Option<&[usize]>) -> (f64, f64) {
    let (mut c, mut s) = (0.0, 0.0);
    let mut acc = |d: [f64; 2]| {
        let (sn, cs) = (theta[0] * d[0] + theta[1] * d[1]).sin_cos();
        c += cs;
        s += sn;
    };
    let n = match idx {
        Some(ix) => {
            ix.iter().for_each(|&i| acc(incs[i]));
            ix.len()
        }
        None => {
            incs.iter().for_each(|&d| acc(d));
            incs.len()
        }
    };
    (c / n as f64, s / n as f64)
}

/// Empirical characteristic function of increments over consecutive time
/// pairs against `exp(-½ D̂ |θ|² Δt)`, where `D̂ = E|Δ|²/(2Δt)` is measured
/// on the same window, so the check isolates Gaussianity. `band_z` is the
/// allowed multiple of the bootstrap standard error.
///
/// The factorisation statistic is the largest `|φ(θ,θ) - φ(θ)φ(θ)|` over
/// consecutive increment pairs; its p-value comes from the centred bootstrap.
pub fn char_fn_test(
    ens: &Ensemble,
    thetas: &[[f64; 2]],
    time_pairs: &[(f64, f64)],
    n_boot: usize,
    band_z: f64,
    seed: u64,
) -> Result<CharFnReport> {
    if ens.n_paths() < 2 || n_boot < 2 {
        return Err(invalid("characteristic-function test needs ≥ 2 paths and ≥ 2 resamples"));
    }
    let n = ens.n_paths();
    let windows: Vec<(f64, f64, Vec<[f64; 2]>)> = time_pairs
        .iter()
        .map(|&(a, b)| {
            let (i, j) = (time_index(ens, a)?, time_index(ens, b)?);
            if !(b > a) {
                return Err(invalid("time pairs must be increasing"));
            }
            Ok((a, b, ens.positions.iter().map(|p| [p[j][0] - p[i][0], p[j][1] - p[i][1]]).collect()))
        })
        .collect::<Result<_>>()?;
    let resamples: Vec<Vec<usize>> = (0..n_boot)
        .map(|b| {
            let mut st = Stream::keyed(seed, &[0x424f, b as u64]);
            (0..n).map(|_| st.below(n)).collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (t0, t1, incs) in &windows {
        let dt = t1 - t0;
        let dhat = incs.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>() / (2.0 * dt * n as f64);
        for &theta in thetas {
            let (re, im) = cf(incs, theta, None);
            let target = (-0.5 * dhat * (theta[0] * theta[0] + theta[1] * theta[1]) * dt).exp();
            let boots: Vec<(f64, f64)> = resamples.par_iter().map(|ix| cf(incs, theta, Some(ix))).collect();
            let mr = boots.iter().map(|b| b.0).sum::<f64>() / n_boot as f64;
            let mi = boots.iter().map(|b| b.1).sum::<f64>() / n_boot as f64;
            let var = boots.iter().map(|b| (b.0 - mr).powi(2) + (b.1 - mi).powi(2)).sum::<f64>() / (n_boot - 1) as f64;
            rows.push(CharFnRow {
                t0: *t0,
                t1: *t1,
                theta,
                dhat,
                re,
                im,
                target,
                deviation: (re - target).hypot(im),
                band_se: var.sqrt(),
            });
        }
    }
    let zs = |r: &CharFnRow| if r.band_se > 0.0 { r.deviation / r.band_se } else if r.deviation == 0.0 { 0.0 } else { f64::INFINITY };
    let max_z = rows.iter().map(zs).fold(0.0, f64::max);
    let max_deviation = rows.iter().map(|r| r.deviation).fold(0.0, f64::max);

    // Factorisation across consecutive windows.
    let fact = |ix: Option<&[usize]>| -> f64 {
        let mut worst = 0.0f64;
        for w in windows.windows(2) {
            let (a, b) = (&w[0].2, &w[1].2);
            let joint: Vec<[f64; 2]> = a.iter().zip(b).map(|(x, y)| [x[0] + y[0], x[1] + y[1]]).collect();
            for &theta in thetas {
                let j = cf(&joint, theta, ix);
                let (pa, pb) = (cf(a, theta, ix), cf(b, theta, ix));
                let prod = (pa.0 * pb.0 - pa.1 * pb.1, pa.0 * pb.1 + pa.1 * pb.0);
                worst = worst.max((j.0 - prod.0).hypot(j.1 - prod.1));
            }
        }
        worst
    };
    let stat = fact(None);
    let boot_stats: Vec<f64> = resamples.par_iter().map(|ix| fact(Some(ix))).collect();
    let exceed = boot_stats.iter().filter(|&&b| (b - stat).abs() >= stat).count();
    let factorization_p = if windows.len() < 2 { 1.0 } else { (exceed as f64 + 1.0) / (n_boot as f64 + 1.0) };

    Ok(CharFnReport { pass: max_z <= band_z, rows, max_z, max_deviation, factorization_p, factorization_stat: stat, n_boot })
}

// ---------------------------------------------------------------------------
// Superdiffusivity

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuperdiffusivityReport {
    pub times: Vec<f64>,
    pub msd_over_t: Vec<f64>,
    pub msd_over_t_se: Vec<f64>,
    pub mann_kendall: MannKendall,
    /// Paired per-path difference of `|X_t|²/t` between last and first time.
    pub endpoint_diff: f64,
    pub endpoint_diff_se: f64,
    pub endpoint_z: f64,
    /// One-sided 95% decision on the paired endpoint difference.
    pub increasing: bool,
    /// Fit of `log(MSD/t) = c + β log log t` over times with `log t > 1`.
    pub beta: Option<f64>,
    pub beta_ci: Option<[f64; 2]>,
}

/// Trend of `MSD(t)/t` over the ensemble times (which should span two
/// decades). The decision uses the per-path paired difference, which
/// accounts for the correlation between times of the same path; the
/// Mann–Kendall statistic, which assumes independent points, is reported
/// alongside.
pub fn superdiffusivity_scan(ens: &Ensemble) -> Result<SuperdiffusivityReport> {
    let times = &ens.times;
    if times.len() < 3 || times[0] <= 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("scan needs ≥ 3 increasing positive times"));
    }
    let per: Vec<(f64, f64)> = (0..times.len())
        .map(|k| {
            let (m, se) = jackknife_mean(&ens.column(k, |x| x[0] * x[0] + x[1] * x[1]));
            (m / times[k], se / times[k])
        })
        .collect();
    let ratio: Vec<f64> = per.iter().map(|r| r.0).collect();
    let last = times.len() - 1;
    let diffs: Vec<f64> = ens
        .positions
        .iter()
        .map(|p| {
            let a = p[0][0] * p[0][0] + p[0][1] * p[0][1];
            let b = p[last][0] * p[last][0] + p[last][1] * p[last][1];
            b / times[last] - a / times[0]
        })
        .collect();
    let (d, dse) = jackknife_mean(&diffs);
    let z = if dse > 0.0 { d / dse } else { 0.0 };

    let fit_pts: Vec<usize> = (0..times.len()).filter(|&k| times[k].ln() > 1.0 && ratio[k] > 0.0).collect();
    let (beta, beta_ci) = if fit_pts.len() >= 2 {
        let x: Vec<f64> = fit_pts.iter().map(|&k| times[k].ln().ln()).collect();
        let y: Vec<f64> = fit_pts.iter().map(|&k| ratio[k].ln()).collect();
        let w: Vec<f64> = fit_pts.iter().map(|&k| (ratio[k] / per[k].1.max(1e-300)).powi(2)).collect();
        match linear_fit(&x, &y, Some(&w)) {
            Ok(f) => (Some(f.slope), Some([f.slope - 1.96 * f.slope_se, f.slope + 1.96 * f.slope_se])),
            Err(_) => (None, None),
        }
    } else {
        (None, None)
    };
    Ok(SuperdiffusivityReport {
        times: times.clone(),
        msd_over_t: ratio.clone(),
        msd_over_t_se: per.iter().map(|r| r.1).collect(),
        mann_kendall: mann_kendall(&ratio),
        endpoint_diff: d,
        endpoint_diff_se: dse,
        endpoint_z: z,
        increasing: z > 1.644_853_626_951_472_2,
        beta,
        beta_ci,
    })
}

/// `count` log-spaced points on `[a, b]`.
pub fn log_times(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![a];
    }
    (0..count).map(|k| a * (b / a).powf(k as f64 / (count - 1) as f64)).collect()
}
