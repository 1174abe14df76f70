//! Euler-Maruyama integration of the self-repelling polymer
//!
//! `dX = dB - γ ω(X) dt - γ² ∫_0^t ∇V(X_t - X_s) ds dt`
//!
//! with the history integral carried on a grid ([`OccupationDrift`]), so a
//! drift lookup is a bilinear interpolation and a deposit touches only the
//! mollifier footprint.

use serde::{Deserialize, Serialize};

use crate::envgen::{GradientField, TorusGrid};
use crate::error::{invalid, Error, Result};
use crate::kernels::Mollifier;
use crate::rng::{derive, Stream};

/// Stream purposes under a replicate seed.
pub const STREAM_BROWNIAN: u64 = 1;
pub const STREAM_ENVIRONMENT: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// `γ = α / sqrt(log(1 + ε⁻²))`.
    WeakEpsilon { epsilon: f64 },
    /// `γ = α / sqrt(log(1 + λ⁻¹))`.
    WeakLambda { lambda: f64 },
    /// Fixed `γ`, independent of scale.
    Strong { gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSchedule {
    pub alpha: f64,
    pub mode: CouplingMode,
}

impl CouplingSchedule {
    pub fn weak_epsilon(alpha: f64, epsilon: f64) -> Self {
        CouplingSchedule { alpha, mode: CouplingMode::WeakEpsilon { epsilon } }
    }

    pub fn weak_lambda(alpha: f64, lambda: f64) -> Self {
        CouplingSchedule { alpha, mode: CouplingMode::WeakLambda { lambda } }
    }

    pub fn strong(gamma: f64) -> Self {
        CouplingSchedule { alpha: gamma, mode: CouplingMode::Strong { gamma } }
    }

    pub fn gamma(&self) -> Result<f64> {
        gamma_of(self)
    }
}

/// Coupling constant of a schedule.
pub fn gamma_of(s: &CouplingSchedule) -> Result<f64> {
    match s.mode {
        CouplingMode::WeakEpsilon { epsilon } => {
            if !(epsilon > 0.0) || !(s.alpha > 0.0) {
                return Err(invalid(format!("weak_epsilon needs α, ε > 0 (α = {}, ε = {epsilon})", s.alpha)));
            }
            Ok(s.alpha / (1.0 / (epsilon * epsilon)).ln_1p().sqrt())
        }
        CouplingMode::WeakLambda { lambda } => {
            if !(lambda > 0.0) || !(s.alpha > 0.0) {
                return Err(invalid(format!("weak_lambda needs α, λ > 0 (α = {}, λ = {lambda})", s.alpha)));
            }
            Ok(s.alpha / (1.0 / lambda).ln_1p().sqrt())
        }
        CouplingMode::Strong { gamma } => {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(invalid(format!("strong coupling needs γ ≥ 0, got {gamma}")));
            }
            Ok(gamma)
        }
    }
}

/// Grid field `D(z) = γω(z) + γ² ∫_0^t ∇V(z - X_s) ds`.
#[derive(Clone, Debug)]
pub struct OccupationDrift {
    pub grid: TorusGrid,
    pub mollifier: Mollifier,
    pub field: Vec<[f64; 2]>,
    pub t: f64,
    pub gamma: f64,
    scratch: DepositScratch,
}

/// Reusable buffers for [`OccupationDrift::deposit`].
#[derive(Clone, Debug, Default)]
struct DepositScratch {
    ey: Vec<(f64, f64)>,
    cols: Vec<usize>,
    rows: Vec<(usize, usize, usize)>,
}

impl OccupationDrift {
    /// Start from `γω`; `env = None` means `ω = 0`.
    pub fn new(grid: TorusGrid, mollifier: Mollifier, gamma: f64, env: Option<&GradientField>) -> Result<Self> {
        let field = match env {
            Some(e) => {
                if e.grid != grid {
                    return Err(Error::GridMismatch(format!("{:?} vs {:?}", e.grid, grid)));
                }
                e.values.iter().map(|v| [gamma * v[0], gamma * v[1]]).collect()
            }
            None => vec![[0.0; 2]; grid.n * grid.n],
        };
        Ok(OccupationDrift { grid, mollifier, field, t: 0.0, gamma, scratch: DepositScratch::default() })
    }

    /// Add `γ² dt ∇V(z - x)` at every node `z` within the footprint of `x`
    /// (minimal image), then remove the discrete mean of the deposit over the
    /// touched nodes so each deposit sums to zero exactly. The correction is
    /// of the order of the truncated tail, `e^{-18}` relative.
    pub fn deposit(&mut self, x: [f64; 2], dt: f64) {
        self.t += dt;
        let g2dt = self.gamma * self.gamma * dt;
        if g2dt == 0.0 {
            return;
        }
        let h = self.grid.h();
        let n = self.grid.n as i64;
        let s2 = self.mollifier.s * self.mollifier.s;
        let r = self.mollifier.footprint_radius;
        let (x0, x1) = (self.grid.wrap(x[0]), self.grid.wrap(x[1]));
        let (i_lo, i_hi) = (((x0 - r) / h).ceil() as i64, ((x0 + r) / h).floor() as i64);
        let (j_lo, j_hi) = (((x1 - r) / h).ceil() as i64, ((x1 + r) / h).floor() as i64);
        let nu = self.grid.n;
        // Separable Gaussian factors and wrapped column indices.
        let sc = &mut self.scratch;
        sc.ey.clear();
        sc.cols.clear();
        for j in j_lo..=j_hi {
            let d = j as f64 * h - x1;
            sc.ey.push((d, (-d * d / (2.0 * s2)).exp()));
            sc.cols.push(j.rem_euclid(n) as usize);
        }
        let c = -g2dt / (std::f64::consts::TAU * s2 * s2);
        let r2 = r * r;
        let mut sum = [0.0, 0.0];
        let mut count = 0usize;
        sc.rows.clear();
        for i in i_lo..=i_hi {
            let dx = i as f64 * h - x0;
            let gx = (-dx * dx / (2.0 * s2)).exp();
            // The disk cuts each row in one contiguous run of columns.
            let inside = |b: usize| dx * dx + sc.ey[b].0 * sc.ey[b].0 < r2;
            let mut b0 = 0;
            while b0 < sc.ey.len() && !inside(b0) {
                b0 += 1;
            }
            let mut b1 = sc.ey.len();
            while b1 > b0 && !inside(b1 - 1) {
                b1 -= 1;
            }
            if b0 == b1 {
                continue;
            }
            let base = i.rem_euclid(n) as usize * nu;
            let kx = c * gx;
            for b in b0..b1 {
                let (dy, gy) = sc.ey[b];
                let k = kx * gy;
                let v = [k * dx, k * dy];
                let cell = &mut self.field[base + sc.cols[b]];
                cell[0] += v[0];
                cell[1] += v[1];
                sum[0] += v[0];
                sum[1] += v[1];
            }
            count += b1 - b0;
            sc.rows.push((base, b0, b1));
        }
        let m = count as f64;
        let corr = [sum[0] / m, sum[1] / m];
        for &(base, b0, b1) in &sc.rows {
            for &col in &sc.cols[b0..b1] {
                let cell = &mut self.field[base + col];
                cell[0] -= corr[0];
                cell[1] -= corr[1];
            }
        }
    }

    /// Bilinear interpolation of the stored field at `x` (wrapped).
    #[inline]
    pub fn drift_at(&self, x: [f64; 2]) -> [f64; 2] {
        let h = self.grid.h();
        let n = self.grid.n;
        let (u, v) = (self.grid.wrap(x[0]) / h, self.grid.wrap(x[1]) / h);
        let (i0, j0) = (u.floor(), v.floor());
        let (fx, fy) = (u - i0, v - j0);
        let i0 = (i0 as usize) % n;
        let j0 = (j0 as usize) % n;
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        let f00 = self.field[i0 * n + j0];
        let f01 = self.field[i0 * n + j1];
        let f10 = self.field[i1 * n + j0];
        let f11 = self.field[i1 * n + j1];
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w10 = fx * (1.0 - fy);
        let w11 = fx * fy;
        [
            w00 * f00[0] + w01 * f01[0] + w10 * f10[0] + w11 * f11[0],
            w00 * f00[1] + w01 * f01[1] + w10 * f10[1] + w11 * f11[1],
        ]
    }

    /// `Σ_z (D(z) - γω(z))`, the accumulated history part summed over nodes.
    pub fn history_sum(&self, env: Option<&GradientField>) -> [f64; 2] {
        let mut s = [0.0, 0.0];
        for (k, f) in self.field.iter().enumerate() {
            let w = env.map(|e| e.values[k]).unwrap_or([0.0, 0.0]);
            s[0] += f[0] - self.gamma * w[0];
            s[1] += f[1] - self.gamma * w[1];
        }
        s
    }
}

/// Recorded path. Positions are unwrapped plane coordinates.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    /// Brownian increments of every step, kept only when requested.
    pub increments: Vec<[f64; 2]>,
    pub seed: u64,
}

impl Trajectory {
    /// Linear interpolation of the recorded position at time `t`.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        let last = *self.times.last()?;
        if t > last * (1.0 + 1e-12) || t < 0.0 {
            return None;
        }
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return Some(self.positions[0]);
        }
        if k >= self.times.len() {
            return self.positions.last().copied();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        let (a, b) = (self.positions[k - 1], self.positions[k]);
        Some([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// CSV with header `t,x,y`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        w.write_record(["t", "x", "y"]).map_err(|e| Error::Io(e.into()))?;
        for (t, p) in self.times.iter().zip(&self.positions) {
            w.write_record([t.to_string(), p[0].to_string(), p[1].to_string()]).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Integration options.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RunOptions {
    pub dt: f64,
    /// Record every `record_every`-th step (the final step is always kept).
    pub record_every: usize,
    pub record_increments: bool,
    pub max_steps: usize,
}

impl RunOptions {
    pub fn new(dt: f64) -> Self {
        RunOptions { dt, record_every: 1, record_increments: false, max_steps: 50_000_000 }
    }
}

/// Default microscopic step `min(0.1 s², 1e-3)`.
pub fn default_dt(m: &Mollifier) -> f64 {
    (0.1 * m.s * m.s).min(1e-3)
}

/// A running polymer: position, drift field and Brownian stream.
#[derive(Clone, Debug)]
pub struct PolymerState {
    pub x: [f64; 2],
    pub occ: OccupationDrift,
    pub t: f64,
    noise: Stream,
}

impl PolymerState {
    pub fn new(occ: OccupationDrift, seed: u64) -> Self {
        PolymerState { x: [0.0, 0.0], occ, t: 0.0, noise: Stream::new(seed, STREAM_BROWNIAN) }
    }

    /// Drift `D(X_t) = γ η_t(0)` felt at the current position.
    #[inline]
    pub fn drift(&self) -> [f64; 2] {
        self.occ.drift_at(self.x)
    }

    /// One Euler-Maruyama step; returns the Brownian increment. The deposit
    /// at the old position happens after the move, so the step feels only
    /// history strictly before `t`.
    #[inline]
    pub fn step(&mut self, dt: f64) -> [f64; 2] {
        let (z0, z1) = self.noise.normal_pair();
        let sd = dt.sqrt();
        let db = [sd * z0, sd * z1];
        let d = self.drift();
        let old = self.x;
        self.x = [old[0] + db[0] - d[0] * dt, old[1] + db[1] - d[1] * dt];
        self.occ.deposit(old, dt);
        self.t += dt;
        db
    }

    /// Wrapped position.
    pub fn wrapped(&self) -> [f64; 2] {
        [self.occ.grid.wrap(self.x[0]), self.occ.grid.wrap(self.x[1])]
    }

    fn guard(&self) -> Result<()> {
        let r = self.x[0].hypot(self.x[1]);
        let lim = self.occ.grid.l / 4.0;
        if r > lim || !r.is_finite() {
            return Err(Error::TorusGuard(format!("displacement {r:.3} exceeds L/4 = {lim:.3} at t = {:.4}", self.t)));
        }
        Ok(())
    }

    /// Advance `steps` steps, optionally recording into `traj`.
    pub fn advance(&mut self, steps: usize, opts: &RunOptions, step0: usize, traj: Option<&mut Trajectory>) -> Result<()> {
        let mut traj = traj;
        for k in 0..steps {
            let db = self.step(opts.dt);
            self.guard()?;
            if let Some(tr) = traj.as_deref_mut() {
                if opts.record_increments {
                    tr.increments.push(db);
                }
                let idx = step0 + k + 1;
                if idx % opts.record_every.max(1) == 0 || k + 1 == steps {
                    tr.times.push(self.t);
                    tr.positions.push(self.x);
                }
            }
        }
        Ok(())
    }
}

/// Integrate one path to `t_end` with the drift field initialized to `γω`.
pub fn run_path(
    schedule: &CouplingSchedule,
    env: Option<&GradientField>,
    grid: TorusGrid,
    mollifier: Mollifier,
    t_end: f64,
    opts: &RunOptions,
    seed: u64,
) -> Result<(Trajectory, OccupationDrift)> {
    let gamma = gamma_of(schedule)?;
    if !(opts.dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let steps = (t_end / opts.dt).round() as usize;
    if steps > opts.max_steps {
        return Err(invalid(format!("{steps} steps exceed the cap of {}", opts.max_steps)));
    }
    let occ = OccupationDrift::new(grid, mollifier, gamma, env)?;
    let mut st = PolymerState::new(occ, seed);
    let mut traj = Trajectory { times: vec![0.0], positions: vec![[0.0, 0.0]], increments: Vec::new(), seed };
    st.advance(steps, opts, 0, Some(&mut traj))?;
    Ok((traj, st.occ))
}

/// Seed of the environment paired with replicate `seed` (annealed sampling).
pub fn environment_seed(seed: u64) -> u64 {
    derive(seed, STREAM_ENVIRONMENT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::sample_environment;
    use proptest::prelude::*;

    fn setup() -> (TorusGrid, Mollifier) {
        (TorusGrid::new(64.0, 256).unwrap(), Mollifier::new(1.0).unwrap())
    }

    #[test]
    fn gamma_examples() {
        let g = gamma_of(&CouplingSchedule::weak_epsilon(1.0, 1.0)).unwrap();
        assert!((g - 1.0 / 2f64.ln().sqrt()).abs() < 1e-15);
        assert!((g - 1.2011224087864498).abs() < 1e-12);
        assert_eq!(gamma_of(&CouplingSchedule::strong(0.0)).unwrap(), 0.0);
        assert!(gamma_of(&CouplingSchedule::weak_lambda(1.0, 0.0)).is_err());
        assert!(gamma_of(&CouplingSchedule::weak_epsilon(-1.0, 0.1)).is_err());
    }

    proptest! {
        #[test]
        fn weak_lambda_identity(alpha in 0.01..10.0f64, l in -12.0..0.0f64) {
            let lambda = 10f64.powf(l);
            let g = gamma_of(&CouplingSchedule::weak_lambda(alpha, lambda)).unwrap();
            let lhs = g * g * (1.0 / lambda).ln_1p();
            prop_assert!((lhs - alpha * alpha).abs() <= 4.0 * f64::EPSILON * alpha * alpha);
        }

        #[test]
        fn weak_epsilon_identity(alpha in 0.01..10.0f64, e in 0.001..2.0f64) {
            let g = gamma_of(&CouplingSchedule::weak_epsilon(alpha, e)).unwrap();
            let lhs = g * g * (1.0 / (e * e)).ln_1p();
            prop_assert!((lhs - alpha * alpha).abs() <= 4.0 * f64::EPSILON * alpha * alpha);
        }

        #[test]
        fn deposit_sums_to_zero_and_stays_local(x in 0.0..64.0f64, y in 0.0..64.0f64) {
            let (g, m) = setup();
            let mut occ = OccupationDrift::new(g, m, 1.3, None).unwrap();
            let dt = 0.01;
            occ.deposit([x, y], dt);
            let s = occ.history_sum(None);
            let bound = 1e-8 * 1.3 * 1.3 * dt * m.grad_v_max();
            prop_assert!(s[0].hypot(s[1]) < bound);
            let h = g.h();
            for i in 0..g.n {
                for j in 0..g.n {
                    let v = occ.field[g.index(i, j)];
                    if v != [0.0, 0.0] {
                        let d = g.min_image(i as f64 * h - x).hypot(g.min_image(j as f64 * h - y));
                        prop_assert!(d < m.footprint_radius + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn deposit_is_periodic() {
        let (g, m) = setup();
        let mut a = OccupationDrift::new(g, m, 1.0, None).unwrap();
        let mut b = OccupationDrift::new(g, m, 1.0, None).unwrap();
        a.deposit([3.3, 60.1], 0.01);
        b.deposit([3.3 + 64.0, 60.1], 0.01);
        let scale = 0.01 * m.grad_v_max();
        for (u, v) in a.field.iter().zip(&b.field) {
            // 3.3 + 64 wraps back with a last-bit change in the position; a
            // node on the footprint circle can flip, carrying weight ~e^{-18}.
            assert!((u[0] - v[0]).abs() < 1e-6 * scale && (u[1] - v[1]).abs() < 1e-6 * scale, "{u:?} {v:?} {scale}");
        }
    }

    #[test]
    fn single_deposit_matches_kernel() {
        // x on a node so x ± s e₁ is on a node too; the only error is the
        // mean correction, far below 2%.
        let (g, m) = setup();
        let gamma = 0.8;
        let dt = 0.05;
        let mut occ = OccupationDrift::new(g, m, gamma, None).unwrap();
        let x = [10.0, 20.0];
        occ.deposit(x, dt);
        let want = gamma * gamma * dt * m.grad_v([m.s, 0.0])[0].abs();
        let plus = occ.drift_at([x[0] + m.s, x[1]]);
        let minus = occ.drift_at([x[0] - m.s, x[1]]);
        assert!((plus[0] + want).abs() < 0.02 * want, "{plus:?} vs -{want}");
        assert!((minus[0] - want).abs() < 0.02 * want);
        assert!(plus[1].abs() < 1e-6 * want);
        // Off-node probe: bilinear error is O(h²), a few percent at h = s/4.
        let mid = occ.drift_at([x[0] + 0.9 * m.s, x[1] + 0.1]);
        let exact = m.grad_v([0.9 * m.s, 0.1]);
        let err = (mid[0] - gamma * gamma * dt * exact[0]).abs();
        assert!(err < 0.05 * want, "bilinear error {}", err / want);
    }

    #[test]
    fn drift_interpolation_basics() {
        let (g, m) = setup();
        let mut occ = OccupationDrift::new(g, m, 1.0, None).unwrap();
        assert_eq!(occ.drift_at([12.3, 45.6]), [0.0, 0.0]);
        let h = g.h();
        // Linear field in x, constant in y along a row of cells.
        for i in 0..g.n {
            for j in 0..g.n {
                occ.field[g.index(i, j)] = [2.0 * i as f64 + 3.0 * j as f64, -(j as f64)];
            }
        }
        assert_eq!(occ.drift_at([5.0 * h, 7.0 * h]), [31.0, -7.0]);
        let c = occ.drift_at([5.5 * h, 7.5 * h]);
        assert!((c[0] - 33.5).abs() < 1e-12 && (c[1] + 7.5).abs() < 1e-12);
    }

    #[test]
    fn brownian_when_uncoupled() {
        let (g, m) = setup();
        let opts = RunOptions::new(0.01);
        let n = 400;
        let t = 1.0;
        let mut sq = Vec::with_capacity(n);
        for r in 0..n {
            let (tr, occ) = run_path(&CouplingSchedule::strong(0.0), None, g, m, t, &opts, 100 + r as u64).unwrap();
            assert_eq!(occ.t, tr.end_time());
            let p = tr.positions.last().unwrap();
            sq.push(p[0] * p[0] + p[1] * p[1]);
        }
        let mean = sq.iter().sum::<f64>() / n as f64;
        let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 2.0 * t).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn empty_run_and_determinism() {
        let (g, m) = setup();
        let opts = RunOptions::new(0.01);
        let (tr, _) = run_path(&CouplingSchedule::strong(1.0), None, g, m, 0.0, &opts, 1).unwrap();
        assert_eq!(tr.times, vec![0.0]);
        assert_eq!(tr.positions, vec![[0.0, 0.0]]);
        let env = sample_environment(g, &m, 4).unwrap();
        let s = CouplingSchedule::weak_epsilon(1.0, 0.2);
        let (a, _) = run_path(&s, Some(&env), g, m, 2.0, &opts, 9).unwrap();
        let (b, _) = run_path(&s, Some(&env), g, m, 2.0, &opts, 9).unwrap();
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn degenerate_dynamics_matches_reference_stream() {
        let (g, m) = setup();
        let mut opts = RunOptions::new(0.02);
        opts.record_increments = true;
        let (tr, _) = run_path(&CouplingSchedule::strong(0.0), None, g, m, 1.0, &opts, 5).unwrap();
        let mut s = Stream::new(5, STREAM_BROWNIAN);
        let mut x = [0.0f64, 0.0];
        for (k, p) in tr.positions.iter().enumerate().skip(1) {
            let (a, b) = s.normal_pair();
            x = [x[0] + 0.02f64.sqrt() * a, x[1] + 0.02f64.sqrt() * b];
            assert_eq!(*p, x, "step {k}");
        }
    }

    #[test]
    fn winding_and_frame_identity() {
        let (g, m) = setup();
        let env = sample_environment(g, &m, 8).unwrap();
        let occ = OccupationDrift::new(g, m, 1.0, Some(&env)).unwrap();
        let mut st = PolymerState::new(occ, 3);
        for _ in 0..2000 {
            let d_before = st.drift();
            let x_before = st.x;
            let db = st.step(0.01);
            // The move used exactly the drift read through the same lookup.
            for c in 0..2 {
                assert_eq!(st.x[c], x_before[c] + db[c] - d_before[c] * 0.01);
            }
            let w = st.wrapped();
            for c in 0..2 {
                assert!((w[c] - st.x[c].rem_euclid(g.l)).abs() < 1e-12);
            }
        }
        assert!((st.occ.t - st.t).abs() < 1e-12);
    }

    #[test]
    fn torus_guard_trips() {
        let g = TorusGrid::new(16.0, 64).unwrap();
        let m = Mollifier::new(0.4).unwrap();
        let r = run_path(&CouplingSchedule::strong(0.0), None, g, m, 200.0, &RunOptions::new(0.05), 1);
        assert!(matches!(r, Err(Error::TorusGuard(_))));
    }

    #[test]
    fn step_cap_enforced() {
        let (g, m) = setup();
        let mut o = RunOptions::new(1e-3);
        o.max_steps = 10;
        assert!(run_path(&CouplingSchedule::strong(0.0), None, g, m, 1.0, &o, 1).is_err());
    }

    #[test]
    fn repulsion_does_not_contract() {
        // Same Brownian streams with and without self-repulsion (ω = 0).
        let (g, m) = setup();
        let opts = RunOptions::new(0.02);
        let n = 120;
        let t = 10.0;
        let mut diff = Vec::new();
        for r in 0..n {
            let seed = 500 + r as u64;
            let (a, _) = run_path(&CouplingSchedule::strong(2.0), None, g, m, t, &opts, seed).unwrap();
            let (b, _) = run_path(&CouplingSchedule::strong(0.0), None, g, m, t, &opts, seed).unwrap();
            let (pa, pb) = (a.positions.last().unwrap(), b.positions.last().unwrap());
            diff.push((pa[0] * pa[0] + pa[1] * pa[1]) - (pb[0] * pb[0] + pb[1] * pb[1]));
        }
        let mean = diff.iter().sum::<f64>() / n as f64;
        let var = diff.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean > -3.0 * (var / n as f64).sqrt(), "mean diff {mean}");
    }
}
