//! Fixed-step integration, limit-cycle extraction and asymptotic phase.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dynamics::{EvalError, Model};
use crate::error::{Error, Result};
use crate::interp::PeriodicSpline;
use crate::linalg::{dot, norm};

/// Reusable classical Runge-Kutta stage storage.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Rk4 {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advance `x` by one step of size `h` in place.
    #[inline]
    pub fn step(&mut self, model: &Model, x: &mut [f64], h: f64) -> std::result::Result<(), EvalError> {
        let n = x.len();
        model.drift_into(x, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        model.drift_into(&self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        model.drift_into(&self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        model.drift_into(&self.tmp, &mut self.k4)?;
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

fn step_error(e: EvalError, t: f64) -> Error {
    match e {
        EvalError::NonFinite => Error::BlowUp { last_finite_time: t },
        other => Error::from(other),
    }
}

/// States at `t_k = k h`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }
}

/// RK4 from `t = 0` to `t_end`; the final step is shortened if `t_end` is not
/// a multiple of `h`.
pub fn integrate_ode(model: &Model, x0: &[f64], t_end: f64, h: f64) -> Result<Trajectory> {
    if !(h > 0.0 && h.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidSpec("need h > 0 and a finite, non-negative t_end".into()));
    }
    check_dim(model, x0)?;
    let full = (t_end / h * (1.0 + 1e-12)).floor() as usize;
    let rest = t_end - full as f64 * h;
    let mut times = Vec::with_capacity(full + 2);
    let mut states = Vec::with_capacity((full + 2) * x0.len());
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(x0.len());
    times.push(0.0);
    states.extend_from_slice(&x);
    for k in 0..full {
        rk.step(model, &mut x, h).map_err(|e| step_error(e, k as f64 * h))?;
        times.push((k + 1) as f64 * h);
        states.extend_from_slice(&x);
    }
    if rest > 1e-12 * h {
        rk.step(model, &mut x, rest).map_err(|e| step_error(e, full as f64 * h))?;
        times.push(t_end);
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        dim: x0.len(),
        times,
        states,
    })
}

fn check_dim(model: &Model, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::InvalidSpec(format!(
            "state has {} components, model has {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// Hyperplane `{x : normal . (x - point) = 0}`, crossed upward when
/// `normal . (x - point)` changes sign from negative to non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

impl Section {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.point)
            .zip(&self.normal)
            .map(|((x, p), n)| n * (x - p))
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct CycleOptions {
    /// Transient length in estimated periods.
    pub transient_periods: f64,
    /// Step of the exploratory pass that estimates the period.
    pub coarse_h: f64,
    /// Total integration time allowed for the exploratory pass.
    pub time_budget: f64,
    /// Default: through the post-transient point, normal to the flow.
    pub section: Option<Section>,
    /// Convergence of successive return times and return points.
    pub tol: f64,
    pub grid: usize,
    /// Integration steps between stored samples.
    pub substeps: usize,
    pub max_returns: usize,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            transient_periods: 20.0,
            coarse_h: 1e-2,
            time_budget: 2000.0,
            section: None,
            tol: 1e-10,
            grid: 1024,
            substeps: 4,
            max_returns: 200,
        }
    }
}

/// Uniformly phase-sampled periodic orbit.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    period: f64,
    dim: usize,
    spline: PeriodicSpline,
    closure_error: f64,
}

impl LimitCycle {
    /// Wrap `G` samples `gamma(2 pi k / G)` (row-major) taken on an orbit of
    /// period `period`.
    pub fn from_samples(period: f64, dim: usize, states: Vec<f64>, closure_error: f64) -> Result<LimitCycle> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidSpec("period must be positive".into()));
        }
        if dim == 0 || states.len() % dim != 0 || states.len() / dim < 3 {
            return Err(Error::InvalidSpec("need at least 3 samples of the state".into()));
        }
        Ok(LimitCycle {
            period,
            dim,
            spline: PeriodicSpline::new(TAU, states, dim),
            closure_error,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn omega(&self) -> f64 {
        TAU / self.period
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid_len(&self) -> usize {
        self.spline.len()
    }

    pub fn theta(&self, k: usize) -> f64 {
        TAU * k as f64 / self.grid_len() as f64
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..self.grid_len()).map(|k| self.theta(k)).collect()
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        self.spline.sample(k % self.grid_len())
    }

    pub fn samples(&self) -> &[f64] {
        self.spline.samples()
    }

    pub fn closure_error(&self) -> f64 {
        self.closure_error
    }

    pub fn gamma(&self, theta: f64) -> Vec<f64> {
        self.spline.eval(theta)
    }

    pub fn gamma_into(&self, theta: f64, out: &mut [f64]) {
        self.spline.eval_into(theta, out)
    }

    /// `d gamma / d theta`.
    pub fn gamma_prime_into(&self, theta: f64, out: &mut [f64]) {
        self.spline.deriv_into(theta, out)
    }

    /// Coordinate-wise centre and half-range of the orbit.
    pub fn extent(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.dim;
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for k in 0..self.grid_len() {
            for (i, v) in self.sample(k).iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        let centre = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).collect();
        (centre, half)
    }

    /// Default basin box: centre plus or minus ten times the per-coordinate
    /// amplitude.
    pub fn default_box(&self) -> BoundingBox {
        let (centre, half) = self.extent();
        let amp_max = half.iter().cloned().fold(0.0, f64::max);
        let lo = centre
            .iter()
            .zip(&half)
            .map(|(c, a)| c - 10.0 * if *a > 0.0 { *a } else { amp_max })
            .collect();
        let hi = centre
            .iter()
            .zip(&half)
            .map(|(c, a)| c + 10.0 * if *a > 0.0 { *a } else { amp_max })
            .collect();
        BoundingBox { lo, hi }
    }

    /// Nearest point of the interpolated orbit to `y`, as a phase in
    /// `[0, 2 pi)`.
    pub fn nearest_phase(&self, y: &[f64]) -> f64 {
        let g = self.grid_len();
        let d2 = |x: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..g)
            .map(|k| (k, d2(self.sample(k))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        let step = TAU / g as f64;
        let mut buf = vec![0.0; self.dim];
        let mut dist = |th: f64| {
            self.gamma_into(th, &mut buf);
            d2(&buf)
        };
        // Golden-section on the bracketing cells, then secant on the
        // stationarity condition for the last digits.
        let (mut a, mut b) = (self.theta(best) - step, self.theta(best) + step);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (dist(c), dist(d));
        while b - a > 1e-7 * step {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = dist(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = dist(d);
            }
        }
        let mut th = 0.5 * (a + b);
        let mut gp = vec![0.0; self.dim];
        let mut stat = |th: f64| {
            self.gamma_into(th, &mut buf);
            self.gamma_prime_into(th, &mut gp);
            buf.iter().zip(y).zip(&gp).map(|((g, y), p)| (g - y) * p).sum::<f64>()
        };
        let mut th0 = th - 1e-4 * step;
        let mut s0 = stat(th0);
        for _ in 0..4 {
            let s1 = stat(th);
            if s1 == s0 {
                break;
            }
            let next = th - s1 * (th - th0) / (s1 - s0);
            if !next.is_finite() || (next - th).abs() > step {
                break;
            }
            th0 = th;
            s0 = s1;
            th = next;
        }
        th.rem_euclid(TAU)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// Locate the stable periodic orbit reached from `x0`.
pub fn find_limit_cycle(model: &Model, x0: &[f64], opts: &CycleOptions) -> Result<LimitCycle> {
    check_dim(model, x0)?;
    let m = model.dim();
    if m < 2 {
        return Err(Error::NotOscillatory(
            "one-dimensional autonomous flows have no periodic orbits".into(),
        ));
    }
    if opts.grid < 3 || opts.substeps == 0 {
        return Err(Error::InvalidSpec("grid must be >= 3 and substeps >= 1".into()));
    }
    let mut rk = Rk4::new(m);
    let mut x = x0.to_vec();

    let t0 = estimate_period(model, &mut x, opts, &mut rk)?;
    log::debug!("period estimate {t0}");

    let h_tr = (t0 / 1024.0).min(opts.coarse_h);
    let n_tr = (opts.transient_periods * t0 / h_tr).ceil() as usize;
    for k in 0..n_tr {
        rk.step(model, &mut x, h_tr).map_err(|e| step_error(e, k as f64 * h_tr))?;
    }

    let section = match &opts.section {
        Some(s) => {
            if s.point.len() != m || s.normal.len() != m || norm(&s.normal) == 0.0 {
                return Err(Error::InvalidSpec("section point/normal have wrong shape".into()));
            }
            s.clone()
        }
        None => Section {
            point: x.clone(),
            normal: model.drift(&x)?,
        },
    };

    // Return map on the section with bisection-refined crossing times.
    let h = t0 / 4096.0;
    let mut t_since = 0.0;
    let mut last: Option<(f64, Vec<f64>)> = None;
    let mut period = None;
    let mut prev = x.clone();
    let mut returns = 0;
    let max_steps = (opts.max_returns as f64 * 4096.0 * 2.0) as usize;
    for _ in 0..max_steps {
        prev.copy_from_slice(&x);
        let s_prev = section.value(&prev);
        rk.step(model, &mut x, h).map_err(|e| step_error(e, t_since))?;
        let s_now = section.value(&x);
        if s_prev < 0.0 && s_now >= 0.0 {
            let (tau, xc) = refine_crossing(model, &section, &prev, h, &mut rk)?;
            let t_cross = t_since + tau;
            if let Some((t_last, x_last)) = &last {
                let t_ret = t_cross - t_last;
                let dx = x_last.iter().zip(&xc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let converged = period.is_some_and(|p: f64| (p - t_ret).abs() <= opts.tol * t_ret.max(1.0))
                    && dx <= opts.tol.sqrt() * 1e-2;
                period = Some(t_ret);
                returns += 1;
                if converged {
                    last = Some((t_cross, xc));
                    break;
                }
                if returns >= opts.max_returns {
                    return Err(Error::NonConvergence(format!(
                        "return time not converged after {returns} returns (last change {:e})",
                        dx
                    )));
                }
            }
            last = Some((t_cross, xc));
        }
        t_since += h;
    }
    let period = period.ok_or_else(|| {
        Error::NotOscillatory("orbit stopped returning to the section".into())
    })?;
    let anchor = last.unwrap().1;
    resample(model, &anchor, period, opts, &mut rk)
}

fn estimate_period(model: &Model, x: &mut [f64], opts: &CycleOptions, rk: &mut Rk4) -> Result<f64> {
    let h = opts.coarse_h;
    let warm = (10.0f64).min(opts.time_budget / 10.0);
    let mut t = 0.0;
    while t < warm {
        rk.step(model, x, h).map_err(|e| step_error(e, t))?;
        t += h;
    }
    let f = model.drift(x)?;
    let scale = norm(x).max(1.0);
    if norm(&f) <= 1e-10 * scale {
        return Err(Error::NotOscillatory("trajectory settled at an equilibrium".into()));
    }
    let section = Section {
        point: x.to_vec(),
        normal: f,
    };
    let mut prev = x.to_vec();
    let mut crossings = Vec::new();
    let mut step = 0usize;
    while t < opts.time_budget {
        prev.copy_from_slice(x);
        let s0 = section.value(&prev);
        rk.step(model, x, h).map_err(|e| step_error(e, t))?;
        let s1 = section.value(x);
        step += 1;
        if s0 < 0.0 && s1 >= 0.0 {
            crossings.push(t + h * s0 / (s0 - s1));
            if crossings.len() >= 4 {
                let n = crossings.len();
                let a = crossings[n - 1] - crossings[n - 2];
                let b = crossings[n - 2] - crossings[n - 3];
                if (a - b).abs() <= 1e-2 * a {
                    return Ok(a);
                }
            }
        }
        t += h;
        if step % 1000 == 0 {
            let f = model.drift(x)?;
            if norm(&f) <= 1e-10 * norm(x).max(1.0) {
                return Err(Error::NotOscillatory("trajectory settled at an equilibrium".into()));
            }
        }
    }
    Err(Error::NotOscillatory(format!(
        "no periodic return to the section within t = {}",
        opts.time_budget
    )))
}

/// Bisection on the sub-step size that lands on the section.
fn refine_crossing(
    model: &Model,
    section: &Section,
    start: &[f64],
    h: f64,
    rk: &mut Rk4,
) -> Result<(f64, Vec<f64>)> {
    let (mut lo, mut hi) = (0.0, h);
    let mut y = start.to_vec();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        y.copy_from_slice(start);
        rk.step(model, &mut y, mid)?;
        if section.value(&y) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    y.copy_from_slice(start);
    rk.step(model, &mut y, hi)?;
    Ok((hi, y))
}

fn resample(model: &Model, anchor: &[f64], period: f64, opts: &CycleOptions, rk: &mut Rk4) -> Result<LimitCycle> {
    let m = model.dim();
    let g = opts.grid;
    let q = opts.substeps;
    let h = period / (g * q) as f64;
    let mut x = anchor.to_vec();
    let mut states = Vec::with_capacity(g * m);
    let mut f = vec![0.0; m];
    for k in 0..g {
        model.drift_into(&x, &mut f)?;
        if dot(&f, &f) == 0.0 {
            return Err(Error::NotOscillatory("equilibrium on the orbit".into()));
        }
        states.extend_from_slice(&x);
        for j in 0..q {
            rk.step(model, &mut x, h).map_err(|e| step_error(e, ((k * q + j) as f64) * h))?;
        }
    }
    let closure = x.iter().zip(anchor).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    log::debug!("cycle T = {period}, closure {closure:e}");
    LimitCycle::from_samples(period, m, states, closure)
}

#[derive(Debug, Clone)]
pub struct PhaseOptions {
    /// Whole periods to integrate before projecting on the orbit.
    pub settle_periods: usize,
    pub steps_per_period: usize,
    /// Default: [`LimitCycle::default_box`].
    pub bbox: Option<BoundingBox>,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions {
            settle_periods: 5,
            steps_per_period: 4096,
            bbox: None,
        }
    }
}

/// Asymptotic phase of a point in the basin of `cycle`.
pub fn phase_of(model: &Model, cycle: &LimitCycle, x: &[f64], opts: &PhaseOptions) -> Result<f64> {
    let default_box;
    let bbox = match &opts.bbox {
        Some(b) => b,
        None => {
            default_box = cycle.default_box();
            &default_box
        }
    };
    let mut rk = Rk4::new(model.dim());
    phase_of_with(model, cycle, x, opts, bbox, &mut rk)
}

pub(crate) fn phase_of_with(
    model: &Model,
    cycle: &LimitCycle,
    x: &[f64],
    opts: &PhaseOptions,
    bbox: &BoundingBox,
    rk: &mut Rk4,
) -> Result<f64> {
    check_dim(model, x)?;
    let n = opts.settle_periods * opts.steps_per_period;
    let h = cycle.period() / opts.steps_per_period as f64;
    let mut y = x.to_vec();
    let escape = |y: &[f64]| Error::BasinEscape {
        location: format!("{y:?}"),
    };
    if !bbox.contains(&y) {
        return Err(escape(&y));
    }
    for k in 0..n {
        rk.step(model, &mut y, h).map_err(|e| step_error(e, k as f64 * h))?;
        if !bbox.contains(&y) {
            return Err(escape(&y));
        }
    }
    // The elapsed time is a whole number of periods, so the elapsed phase is
    // an integer multiple of 2 pi.
    Ok(cycle.nearest_phase(&y))
}

/// Document written by `phasekit cycle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleFile {
    #[serde(rename = "T")]
    pub period: f64,
    pub omega: f64,
    #[serde(rename = "G")]
    pub grid: usize,
    pub theta: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub closure_error: f64,
}

impl CycleFile {
    pub fn from_cycle(c: &LimitCycle) -> CycleFile {
        CycleFile {
            period: c.period(),
            omega: c.omega(),
            grid: c.grid_len(),
            theta: c.thetas(),
            gamma: (0..c.grid_len()).map(|k| c.sample(k).to_vec()).collect(),
            closure_error: c.closure_error(),
        }
    }

    pub fn to_cycle(&self) -> Result<LimitCycle> {
        if self.gamma.len() != self.grid || self.theta.len() != self.grid {
            return Err(Error::InvalidSpec("cycle file: G disagrees with theta/gamma".into()));
        }
        let dim = self.gamma.first().map_or(0, Vec::len);
        if self.gamma.iter().any(|g| g.len() != dim) {
            return Err(Error::InvalidSpec("cycle file: ragged gamma".into()));
        }
        LimitCycle::from_samples(self.period, dim, self.gamma.concat(), self.closure_error)
    }
}
