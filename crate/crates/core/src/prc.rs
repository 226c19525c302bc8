//! First- and second-order phase response curves: backward adjoint
//! integration and the direct perturbation method.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycle::{phase_of_with, LimitCycle, PhaseOptions, Rk4};
use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrcMethod {
    Adjoint,
    Direct,
}

/// Sampled `Z(theta)` and optionally `H(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrcPair {
    pub dim: usize,
    pub theta: Vec<f64>,
    /// Row-major `len x m`.
    pub z: Vec<f64>,
    /// Row-major `len x m^2`; each row is `H(theta)` row-major.
    pub h: Option<Vec<f64>>,
    pub method: PrcMethod,
    /// Backward passes used, or 0 for the direct method.
    pub passes: usize,
    /// L-infinity change over the last pass.
    pub last_change: f64,
}

impl PrcPair {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn z_at(&self, k: usize) -> &[f64] {
        &self.z[k * self.dim..(k + 1) * self.dim]
    }

    pub fn h_at(&self, k: usize) -> Option<&[f64]> {
        let m2 = self.dim * self.dim;
        self.h.as_ref().map(|h| &h[k * m2..(k + 1) * m2])
    }

    pub fn has_h(&self) -> bool {
        self.h.is_some()
    }

    /// True if the samples sit exactly on the cycle's full grid.
    pub fn matches_grid(&self, cycle: &LimitCycle) -> bool {
        self.len() == cycle.grid_len()
            && self.dim == cycle.dim()
            && self
                .theta
                .iter()
                .enumerate()
                .all(|(k, t)| (t - cycle.theta(k)).abs() <= 1e-9)
    }

    pub fn require_grid(&self, cycle: &LimitCycle) -> Result<()> {
        if self.matches_grid(cycle) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "PRC has {} samples of dim {}, cycle grid has {} of dim {}",
                self.len(),
                self.dim,
                cycle.grid_len(),
                cycle.dim()
            )))
        }
    }

    /// Closed-form Hopf PRCs on `cycle`'s grid.
    pub fn hopf_exact(mu: f64, theta: &[f64]) -> PrcPair {
        let s = mu.sqrt();
        let mut z = Vec::with_capacity(theta.len() * 2);
        let mut h = Vec::with_capacity(theta.len() * 4);
        for &t in theta {
            z.extend_from_slice(&[-t.sin() / s, t.cos() / s]);
            let (s2, c2) = ((2.0 * t).sin() / mu, (2.0 * t).cos() / mu);
            h.extend_from_slice(&[s2, -c2, -c2, -s2]);
        }
        PrcPair {
            dim: 2,
            theta: theta.to_vec(),
            z,
            h: Some(h),
            method: PrcMethod::Adjoint,
            passes: 0,
            last_change: 0.0,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let m = self.dim;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["theta".to_string()];
        header.extend((1..=m).map(|i| format!("Z_{i}")));
        if self.h.is_some() {
            for i in 1..=m {
                for j in 1..=m {
                    header.push(if m < 10 { format!("H_{i}{j}") } else { format!("H_{i}_{j}") });
                }
            }
        }
        out.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.theta[k])];
            row.extend(self.z_at(k).iter().map(|v| fmt_f64(*v)));
            if let Some(h) = self.h_at(k) {
                row.extend(h.iter().map(|v| fmt_f64(*v)));
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("prc csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<PrcPair> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let m = header.iter().filter(|h| h.starts_with("Z_")).count();
        let n_h = header.iter().filter(|h| h.starts_with("H_")).count();
        if header.get(0) != Some("theta") || m == 0 || (n_h != 0 && n_h != m * m) || header.len() != 1 + m + n_h {
            return Err(Error::InvalidSpec(
                "PRC csv needs columns theta, Z_1..Z_m and optionally H_11..H_mm".into(),
            ));
        }
        let mut theta = Vec::new();
        let mut z = Vec::new();
        let mut h = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidSpec(format!("PRC csv: {e}")))?;
            theta.push(vals[0]);
            z.extend_from_slice(&vals[1..=m]);
            h.extend_from_slice(&vals[1 + m..]);
        }
        Ok(PrcPair {
            dim: m,
            theta,
            z,
            h: (n_h > 0).then_some(h),
            method: PrcMethod::Adjoint,
            passes: 0,
            last_change: 0.0,
        })
    }
}

/// Shortest round-trip decimal form.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone)]
pub struct AdjointOptions {
    pub max_periods: usize,
    pub tol: f64,
    /// Integration steps per grid interval; `h = T / (G * substeps)`.
    pub substeps: usize,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        AdjointOptions {
            max_periods: 50,
            tol: 1e-8,
            substeps: 4,
        }
    }
}

/// Jacobians (and Hessians) along a fine forward orbit at spacing `h/2`.
struct FineOrbit {
    m: usize,
    n: usize,
    jac: Vec<f64>,
    hess: Vec<f64>,
}

impl FineOrbit {
    fn build(model: &Model, cycle: &LimitCycle, substeps: usize, with_hess: bool) -> Result<FineOrbit> {
        let m = model.dim();
        let g = cycle.grid_len();
        let n = 2 * g * substeps;
        let hh = cycle.period() / n as f64;
        let mut x = cycle.sample(0).to_vec();
        let mut rk = Rk4::new(m);
        let mut jac = vec![0.0; n * m * m];
        let mut hess = if with_hess { vec![0.0; n * m * m * m] } else { Vec::new() };
        for i in 0..n {
            // Re-anchor on stored samples to keep the fine orbit on the cycle.
            if i % (2 * substeps) == 0 {
                x.copy_from_slice(cycle.sample(i / (2 * substeps)));
            }
            model.jacobian_into(&x, &mut jac[i * m * m..(i + 1) * m * m])?;
            if with_hess {
                model.hessians_into(&x, &mut hess[i * m * m * m..(i + 1) * m * m * m])?;
            }
            rk.step(model, &mut x, hh)?;
        }
        Ok(FineOrbit { m, n, jac, hess })
    }

    #[inline]
    fn jac(&self, i: usize) -> &[f64] {
        let mm = self.m * self.m;
        let i = i % self.n;
        &self.jac[i * mm..(i + 1) * mm]
    }

    #[inline]
    fn hess(&self, i: usize) -> &[f64] {
        let mmm = self.m * self.m * self.m;
        let i = i % self.n;
        &self.hess[i * mmm..(i + 1) * mmm]
    }
}

/// Right-hand side of the joint adjoint system at fine index `i`:
/// `dZ/dt = -DF^T Z`, `dH/dt = -sum_k Z_k Hess F_k - DF^T H - H DF`.
fn adjoint_rhs(orbit: &FineOrbit, i: usize, y: &[f64], dy: &mut [f64], with_h: bool) {
    let m = orbit.m;
    let a = orbit.jac(i);
    let (z, h) = y.split_at(m);
    for c in 0..m {
        dy[c] = -(0..m).map(|r| a[r * m + c] * z[r]).sum::<f64>();
    }
    if !with_h {
        return;
    }
    let hs = orbit.hess(i);
    let dh = &mut dy[m..];
    for p in 0..m {
        for q in 0..m {
            let mut v = 0.0;
            for k in 0..m {
                v -= z[k] * hs[(k * m + p) * m + q];
                v -= a[k * m + p] * h[k * m + q];
                v -= h[p * m + k] * a[k * m + q];
            }
            dh[p * m + q] = v;
        }
    }
}

/// One backward period from `y(T)`; returns grid samples `y(theta_k)`.
fn backward_pass(orbit: &FineOrbit, g: usize, substeps: usize, h: f64, y: &mut [f64], with_h: bool) -> Vec<f64> {
    let len = y.len();
    let m = orbit.m;
    let mut out = vec![0.0; g * len];
    let mut k1 = vec![0.0; len];
    let mut k2 = vec![0.0; len];
    let mut k3 = vec![0.0; len];
    let mut k4 = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    let total = g * substeps;
    for s in (1..=total).rev() {
        let i = 2 * s;
        adjoint_rhs(orbit, i, y, &mut k1, with_h);
        for j in 0..len {
            tmp[j] = y[j] - 0.5 * h * k1[j];
        }
        adjoint_rhs(orbit, i - 1, &tmp, &mut k2, with_h);
        for j in 0..len {
            tmp[j] = y[j] - 0.5 * h * k2[j];
        }
        adjoint_rhs(orbit, i - 1, &tmp, &mut k3, with_h);
        for j in 0..len {
            tmp[j] = y[j] - h * k3[j];
        }
        adjoint_rhs(orbit, i - 2, &tmp, &mut k4, with_h);
        for j in 0..len {
            y[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if with_h {
            let hm = &mut y[m..];
            for p in 0..m {
                for q in p + 1..m {
                    let v = 0.5 * (hm[p * m + q] + hm[q * m + p]);
                    hm[p * m + q] = v;
                    hm[q * m + p] = v;
                }
            }
        }
        if (s - 1) % substeps == 0 {
            let k = (s - 1) / substeps;
            out[k * len..(k + 1) * len].copy_from_slice(y);
        }
    }
    out
}

fn anchor_data(model: &Model, cycle: &LimitCycle) -> Result<(Vec<f64>, Vec<f64>)> {
    let x0 = cycle.sample(0);
    Ok((model.drift(x0)?, model.jacobian(x0)?))
}

/// First-order PRC by backward integration of the adjoint equation.
pub fn prc1_adjoint(model: &Model, cycle: &LimitCycle, opts: &AdjointOptions) -> Result<PrcPair> {
    check_model(model, cycle)?;
    let orbit = FineOrbit::build(model, cycle, opts.substeps, false)?;
    converge_z(model, cycle, &orbit, opts)
}

fn check_model(model: &Model, cycle: &LimitCycle) -> Result<()> {
    if model.dim() != cycle.dim() {
        return Err(Error::GridMismatch(format!(
            "model dim {} but cycle dim {}",
            model.dim(),
            cycle.dim()
        )));
    }
    Ok(())
}

fn converge_z(model: &Model, cycle: &LimitCycle, orbit: &FineOrbit, opts: &AdjointOptions) -> Result<PrcPair> {
    let m = model.dim();
    let g = cycle.grid_len();
    let omega = cycle.omega();
    let h = cycle.period() / (g * opts.substeps) as f64;
    let (f0, _) = anchor_data(model, cycle)?;
    let mut y: Vec<f64> = f0.iter().map(|f| omega * f / dot(&f0, &f0)).collect();
    let mut prev: Option<Vec<f64>> = None;
    for pass in 1..=opts.max_periods {
        let mut samples = backward_pass(orbit, g, opts.substeps, h, &mut y, false);
        let scale = omega / dot(&samples[..m], &f0);
        samples.iter_mut().for_each(|v| *v *= scale);
        y.copy_from_slice(&samples[..m]);
        if let Some(p) = &prev {
            let change = samples.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change <= opts.tol {
                log::debug!("Z converged after {pass} passes ({change:e})");
                return Ok(PrcPair {
                    dim: m,
                    theta: cycle.thetas(),
                    z: samples,
                    h: None,
                    method: PrcMethod::Adjoint,
                    passes: pass,
                    last_change: change,
                });
            }
        }
        prev = Some(samples);
    }
    Err(Error::NonConvergence(format!(
        "first-order PRC not periodic after {} backward periods",
        opts.max_periods
    )))
}

/// Second-order PRC, integrated jointly with `Z` starting from `z`'s value
/// at phase zero.
pub fn prc2_adjoint(model: &Model, cycle: &LimitCycle, z: &PrcPair, opts: &AdjointOptions) -> Result<PrcPair> {
    check_model(model, cycle)?;
    z.require_grid(cycle)?;
    let m = model.dim();
    let mm = m * m;
    let g = cycle.grid_len();
    let omega = cycle.omega();
    let h = cycle.period() / (g * opts.substeps) as f64;
    let orbit = FineOrbit::build(model, cycle, opts.substeps, true)?;
    let (f0, a0) = anchor_data(model, cycle)?;
    let ff = dot(&f0, &f0);
    let mut y = vec![0.0; m + mm];
    y[..m].copy_from_slice(z.z_at(0));
    for p in 0..m {
        for q in 0..m {
            y[m + p * m + q] = -omega / (2.0 * ff) * (a0[p * m + q] + a0[q * m + p]);
        }
    }
    let len = m + mm;
    let mut prev: Option<Vec<f64>> = None;
    for pass in 1..=opts.max_periods {
        let mut samples = backward_pass(&orbit, g, opts.substeps, h, &mut y, true);
        let scale = omega / dot(&samples[..m], &f0);
        for k in 0..g {
            samples[k * len..k * len + m].iter_mut().for_each(|v| *v *= scale);
        }
        // Z Z^T solves the homogeneous equation; use it to satisfy the
        // anchor constraint F^T H F = -F^T DF^T Z exactly.
        let z0 = &samples[..m];
        let h0 = &samples[m..len];
        let fhf = crate::linalg::quad_form(&f0, h0, &f0);
        let mut dfz = vec![0.0; m];
        crate::linalg::mat_t_vec(&a0, z0, &mut dfz);
        let resid = fhf + dot(&f0, &dfz);
        let c = -resid / (omega * omega);
        for k in 0..g {
            let row = &mut samples[k * len..(k + 1) * len];
            let (zk, hk) = row.split_at_mut(m);
            for p in 0..m {
                for q in 0..m {
                    hk[p * m + q] += c * zk[p] * zk[q];
                }
            }
        }
        y.copy_from_slice(&samples[..len]);
        if let Some(p) = &prev {
            let change = samples.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change <= opts.tol {
                log::debug!("H converged after {pass} passes ({change:e})");
                let mut zs = Vec::with_capacity(g * m);
                let mut hs = Vec::with_capacity(g * mm);
                for k in 0..g {
                    zs.extend_from_slice(&samples[k * len..k * len + m]);
                    hs.extend_from_slice(&samples[k * len + m..(k + 1) * len]);
                }
                return Ok(PrcPair {
                    dim: m,
                    theta: cycle.thetas(),
                    z: zs,
                    h: Some(hs),
                    method: PrcMethod::Adjoint,
                    passes: pass,
                    last_change: change,
                });
            }
        }
        prev = Some(samples);
    }
    Err(Error::NonConvergence(format!(
        "second-order PRC not periodic after {} backward periods",
        opts.max_periods
    )))
}

/// Both orders by the adjoint method.
pub fn prc_adjoint(model: &Model, cycle: &LimitCycle, order: u8, opts: &AdjointOptions) -> Result<PrcPair> {
    let z = prc1_adjoint(model, cycle, opts)?;
    match order {
        1 => Ok(z),
        2 => prc2_adjoint(model, cycle, &z, opts),
        _ => Err(Error::InvalidSpec("PRC order must be 1 or 2".into())),
    }
}

#[derive(Debug, Clone)]
pub struct DirectOptions {
    pub r: f64,
    /// Use every `stride`-th grid phase.
    pub stride: usize,
    pub phase: PhaseOptions,
    /// Mixed differences for the off-diagonal entries of `H`.
    pub off_diagonal: bool,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions {
            r: 1e-3,
            stride: 1,
            phase: PhaseOptions::default(),
            off_diagonal: true,
        }
    }
}

fn wrap(d: f64) -> f64 {
    (d + PI).rem_euclid(TAU) - PI
}

fn direct(model: &Model, cycle: &LimitCycle, order: u8, opts: &DirectOptions) -> Result<PrcPair> {
    check_model(model, cycle)?;
    if !(opts.r > 0.0) || opts.stride == 0 {
        return Err(Error::InvalidSpec("need r > 0 and stride >= 1".into()));
    }
    let m = model.dim();
    let r = opts.r;
    let bbox = opts.phase.bbox.clone().unwrap_or_else(|| cycle.default_box());
    let ks: Vec<usize> = (0..cycle.grid_len()).step_by(opts.stride).collect();
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = ks
        .par_iter()
        .map(|&k| {
            let mut rk = Rk4::new(m);
            let base = cycle.sample(k).to_vec();
            let mut phase = |dx: &[(usize, f64)]| -> Result<f64> {
                let mut x = base.clone();
                for &(i, d) in dx {
                    x[i] += d;
                }
                phase_of_with(model, cycle, &x, &opts.phase, &bbox, &mut rk).map_err(|e| match e {
                    Error::BasinEscape { location } => Error::BasinEscape {
                        location: format!("theta = {:.6}, perturbation {dx:?}: {location}", cycle.theta(k)),
                    },
                    other => other,
                })
            };
            let p0 = if order == 2 { phase(&[])? } else { 0.0 };
            let mut z = vec![0.0; m];
            let mut h = vec![0.0; if order == 2 { m * m } else { 0 }];
            for i in 0..m {
                let pp = phase(&[(i, r)])?;
                let pm = phase(&[(i, -r)])?;
                z[i] = wrap(pp - pm) / (2.0 * r);
                if order == 2 {
                    h[i * m + i] = (wrap(pp - p0) + wrap(pm - p0)) / (r * r);
                }
            }
            if order == 2 && opts.off_diagonal {
                for i in 0..m {
                    for j in i + 1..m {
                        let a = wrap(phase(&[(i, r), (j, r)])? - p0);
                        let b = wrap(phase(&[(i, r), (j, -r)])? - p0);
                        let c = wrap(phase(&[(i, -r), (j, r)])? - p0);
                        let d = wrap(phase(&[(i, -r), (j, -r)])? - p0);
                        let v = (a - b - c + d) / (4.0 * r * r);
                        h[i * m + j] = v;
                        h[j * m + i] = v;
                    }
                }
            } else if order == 2 {
                for i in 0..m {
                    for j in 0..m {
                        if i != j {
                            h[i * m + j] = f64::NAN;
                        }
                    }
                }
            }
            Ok((z, h))
        })
        .collect();
    let mut z = Vec::with_capacity(ks.len() * m);
    let mut h = Vec::new();
    for row in rows {
        let (zr, hr) = row?;
        z.extend(zr);
        h.extend(hr);
    }
    if order == 2 && r * r < 1e3 * opts.phase.steps_per_period as f64 * f64::EPSILON {
        log::warn!("r^2 = {:e} is close to the phase accuracy; second differences will be noisy", r * r);
    }
    Ok(PrcPair {
        dim: m,
        theta: ks.iter().map(|&k| cycle.theta(k)).collect(),
        z,
        h: (order == 2).then_some(h),
        method: PrcMethod::Direct,
        passes: 0,
        last_change: 0.0,
    })
}

/// `Z_i(theta) = (Phi(x + r e_i) - Phi(x - r e_i)) / 2r`.
pub fn prc1_direct(model: &Model, cycle: &LimitCycle, opts: &DirectOptions) -> Result<PrcPair> {
    direct(model, cycle, 1, opts)
}

/// Adds `H_ii = (Phi(x + r e_i) - 2 Phi(x) + Phi(x - r e_i)) / r^2` and,
/// optionally, mixed differences off the diagonal.
pub fn prc2_direct(model: &Model, cycle: &LimitCycle, opts: &DirectOptions) -> Result<PrcPair> {
    direct(model, cycle, 2, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `max |Z . F - omega|`.
    pub normalization: f64,
    /// `normalization / omega`.
    pub normalization_rel: f64,
    /// `max |F^T H F + F^T DF^T Z|`, if `H` is present.
    pub second_order: Option<f64>,
    /// Relative to the largest natural size of either term,
    /// `|F|^2 max|H| + |F| max|DF| |Z|`, over the grid.
    pub second_order_rel: Option<f64>,
    pub max_asymmetry: Option<f64>,
    pub passes: bool,
}

pub fn check_constraints(model: &Model, cycle: &LimitCycle, prc: &PrcPair) -> Result<ConstraintReport> {
    let m = model.dim();
    let omega = cycle.omega();
    let mut norm_res: f64 = 0.0;
    let mut second: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut asym: f64 = 0.0;
    let mut x = vec![0.0; m];
    let mut dfz = vec![0.0; m];
    for k in 0..prc.len() {
        cycle.gamma_into(prc.theta[k], &mut x);
        let f = model.drift(&x)?;
        let z = prc.z_at(k);
        norm_res = norm_res.max((dot(z, &f) - omega).abs());
        if let Some(h) = prc.h_at(k) {
            let a = model.jacobian(&x)?;
            crate::linalg::mat_t_vec(&a, z, &mut dfz);
            let rhs = dot(&f, &dfz);
            let fhf = crate::linalg::quad_form(&f, h, &f);
            second = second.max((fhf + rhs).abs());
            let ff = dot(&f, &f);
            scale = scale.max(ff * max_abs(h) + ff.sqrt() * max_abs(&a) * crate::linalg::norm(z));
            for p in 0..m {
                for q in p + 1..m {
                    asym = asym.max((h[p * m + q] - h[q * m + p]).abs());
                }
            }
        }
    }
    let has_h = prc.has_h();
    let second_rel = has_h.then(|| second / if scale > 0.0 { scale } else { 1.0 });
    let passes = norm_res <= 1e-6 * omega && second_rel.is_none_or(|s| s <= 1e-4) && asym <= 1e-8;
    Ok(ConstraintReport {
        normalization: norm_res,
        normalization_rel: norm_res / omega,
        second_order: has_h.then_some(second),
        second_order_rel: second_rel,
        max_asymmetry: has_h.then_some(asym),
        passes,
    })
}

/// L-infinity distance between two PRCs sampled at the same phases.
pub fn z_distance(a: &PrcPair, b: &PrcPair) -> f64 {
    let mut d: f64 = 0.0;
    for (k, t) in b.theta.iter().enumerate() {
        let ka = a
            .theta
            .iter()
            .position(|s| (s - t).abs() < 1e-9)
            .expect("phases of b must appear in a");
        let diff: Vec<f64> = a.z_at(ka).iter().zip(b.z_at(k)).map(|(x, y)| x - y).collect();
        d = d.max(max_abs(&diff));
    }
    d
}
