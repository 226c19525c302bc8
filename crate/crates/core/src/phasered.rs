//! Reduced phase models: the Itô phase SDE of one oscillator, the coupled
//! phase SDE of a network, and the cycle-averaged coupling coefficients.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::cycle::LimitCycle;
use crate::dynamics::{Model, Network};
use crate::error::{Error, Result};
use crate::interp::PeriodicSpline;
use crate::linalg::{dot, trace_btab};
use crate::phasefn::{PhaseFn, PhaseFnFile};
use crate::prc::PrcPair;
use crate::sdesim::PhaseNetwork;

/// Tolerance below which a negative averaged square is treated as rounding.
pub const NEG_SQUARE_TOL: f64 = 1e-12;

/// `dtheta = (omega + d(theta)) dt + sigma Z^T K dW`, tabulated on the cycle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    pub omega: f64,
    pub sigma: f64,
    pub dim: usize,
    pub theta: Vec<f64>,
    /// `sigma^2/2 tr[K^T H K]`.
    pub drift_correction: Vec<f64>,
    /// `sigma Z^T K`, row-major `G x m`.
    pub diffusion_row: Vec<f64>,
    /// `Z^T K K^T Z`, the square of the scalar common-noise coefficient `ino`.
    pub ino_squared: Vec<f64>,
}

impl PhaseModel {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn drift(&self) -> Vec<f64> {
        self.drift_correction.iter().map(|d| self.omega + d).collect()
    }

    pub fn ino(&self) -> Vec<f64> {
        self.ino_squared.iter().map(|q| q.max(0.0).sqrt()).collect()
    }

    /// The coefficient of the scalar `dW`: `sigma ino`.
    pub fn noise_amplitude(&self) -> Vec<f64> {
        self.ino().iter().map(|v| self.sigma * v).collect()
    }

    pub fn diffusion_row_at(&self, k: usize) -> &[f64] {
        &self.diffusion_row[k * self.dim..(k + 1) * self.dim]
    }

    pub fn drift_fn(&self) -> PhaseFn {
        PhaseFn::table(self.drift())
    }

    pub fn ino_fn(&self) -> PhaseFn {
        PhaseFn::sqrt_table(self.ino_squared.clone())
    }
}

fn check_inputs(model: &Model, cycle: &LimitCycle, prc: &PrcPair, need_h: bool) -> Result<()> {
    prc.require_grid(cycle)?;
    if model.dim() != cycle.dim() {
        return Err(Error::GridMismatch(format!(
            "model has dimension {}, cycle {}",
            model.dim(),
            cycle.dim()
        )));
    }
    if need_h && !prc.has_h() {
        return Err(Error::InvalidSpec(
            "a second-order PRC is required (compute it with order 2)".into(),
        ));
    }
    Ok(())
}

pub fn reduce_single(model: &Model, cycle: &LimitCycle, prc: &PrcPair) -> Result<PhaseModel> {
    let sigma = model.sigma();
    check_inputs(model, cycle, prc, sigma != 0.0)?;
    if model.diffusion_uses_t() && sigma != 0.0 {
        return Err(Error::InvalidSpec(
            "time-dependent diffusion cannot be tabulated over the phase".into(),
        ));
    }
    let m = model.dim();
    let g = cycle.grid_len();
    let mut drift_correction = vec![0.0; g];
    let mut diffusion_row = vec![0.0; g * m];
    let mut ino_squared = vec![0.0; g];
    let mut k_mat = vec![0.0; m * m];
    let mut zk = vec![0.0; m];
    for i in 0..g {
        model.diffusion_into(cycle.sample(i), 0.0, &mut k_mat)?;
        let z = prc.z_at(i);
        crate::linalg::mat_t_vec(&k_mat, z, &mut zk);
        ino_squared[i] = dot(&zk, &zk);
        for (o, v) in diffusion_row[i * m..(i + 1) * m].iter_mut().zip(&zk) {
            *o = sigma * v;
        }
        if sigma != 0.0 {
            let h = prc.h_at(i).expect("checked");
            drift_correction[i] = 0.5 * sigma * sigma * trace_btab(h, &k_mat, m);
        }
    }
    Ok(PhaseModel {
        omega: cycle.omega(),
        sigma,
        dim: m,
        theta: cycle.thetas(),
        drift_correction,
        diffusion_row,
        ino_squared,
    })
}

/// Per-pair terms of the coupled phase SDE as functions of `(theta_j, theta_i)`.
pub struct CoupledPhaseModel<'a> {
    pub single: PhaseModel,
    net: &'a Network,
    cycle: &'a LimitCycle,
    z: PeriodicSpline,
    h: Option<PeriodicSpline>,
}

impl<'a> CoupledPhaseModel<'a> {
    pub fn n(&self) -> usize {
        self.net.n
    }

    fn pair_states(&self, tj: f64, ti: f64) -> (Vec<f64>, Vec<f64>) {
        (self.cycle.gamma(tj), self.cycle.gamma(ti))
    }

    /// `Z(theta_i)^T H(gamma(theta_j), gamma(theta_i))`.
    pub fn coupling_drift(&self, tj: f64, ti: f64) -> Result<f64> {
        let m = self.net.dim();
        let (xj, xi) = self.pair_states(tj, ti);
        let mut hv = vec![0.0; m];
        self.net.coupling_drift_into(&xj, &xi, &mut hv)?;
        Ok(dot(&self.z.eval(ti), &hv))
    }

    /// `1/2 tr[C^T H(theta_i) C]` with `C = C(gamma(theta_j), gamma(theta_i))`.
    pub fn noise_drift(&self, tj: f64, ti: f64) -> Result<f64> {
        let Some(h) = &self.h else { return Ok(0.0) };
        let m = self.net.dim();
        let (xj, xi) = self.pair_states(tj, ti);
        let mut c = vec![0.0; m * m];
        self.net.coupling_diffusion_into(&xj, &xi, &mut c)?;
        Ok(0.5 * trace_btab(&h.eval(ti), &c, m))
    }

    /// `Z(theta_i)^T C(gamma(theta_j), gamma(theta_i))`.
    pub fn coupling_row(&self, tj: f64, ti: f64) -> Result<Vec<f64>> {
        let m = self.net.dim();
        let (xj, xi) = self.pair_states(tj, ti);
        let mut c = vec![0.0; m * m];
        self.net.coupling_diffusion_into(&xj, &xi, &mut c)?;
        let mut out = vec![0.0; m];
        crate::linalg::mat_t_vec(&c, &self.z.eval(ti), &mut out);
        Ok(out)
    }

    /// Full drift of node `i`: `omega + sigma^2/2 tr[K^T H K] + eps sum c_ij Z^T H
    /// + delta^2/2 sum c_ij^2 tr[C^T H C]`.
    pub fn node_drift(&self, theta: &[f64], i: usize) -> Result<f64> {
        let net = self.net;
        let own = PhaseFn::table(self.single.drift()).eval(theta[i], 0.0)?;
        let mut v = own;
        for j in 0..net.n {
            let c = net.weight(i, j);
            if c == 0.0 {
                continue;
            }
            if net.epsilon != 0.0 {
                v += net.epsilon * c * self.coupling_drift(theta[j], theta[i])?;
            }
            if net.delta != 0.0 {
                v += net.delta * net.delta * c * c * self.noise_drift(theta[j], theta[i])?;
            }
        }
        Ok(v)
    }

    /// Coupling-noise rows `delta c_ij Z^T C` of node `i`, one per neighbor.
    pub fn node_noise_rows(&self, theta: &[f64], i: usize) -> Result<Vec<(usize, Vec<f64>)>> {
        let net = self.net;
        let mut out = vec![];
        for j in 0..net.n {
            let c = net.weight(i, j);
            if c == 0.0 || net.delta == 0.0 {
                continue;
            }
            let row = self.coupling_row(theta[j], theta[i])?;
            out.push((j, row.iter().map(|r| net.delta * c * r).collect()));
        }
        Ok(out)
    }
}

pub fn reduce_coupled<'a>(
    net: &'a Network,
    cycle: &'a LimitCycle,
    prc: &PrcPair,
) -> Result<CoupledPhaseModel<'a>> {
    let needs_h = net.delta != 0.0 && !net.coupling_diffusion_is_zero();
    check_inputs(&net.model, cycle, prc, needs_h)?;
    let single = reduce_single(&net.model, cycle, prc)?;
    let z = PeriodicSpline::new(TAU, prc.z.clone(), prc.dim);
    let h = prc
        .h
        .as_ref()
        .map(|h| PeriodicSpline::new(TAU, h.clone(), prc.dim * prc.dim));
    Ok(CoupledPhaseModel {
        single,
        net,
        cycle,
        z,
        h,
    })
}

/// Averaged coupling coefficients on the phase-difference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCoupling {
    pub phi: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub k_squared: Vec<f64>,
}

impl AveragedCoupling {
    pub fn k(&self) -> Vec<f64> {
        self.k_squared.iter().map(|q| q.sqrt()).collect()
    }

    /// `max_phi |f(phi) + f(-phi)|` of a grid table.
    pub fn oddness_defect(table: &[f64]) -> f64 {
        let g = table.len();
        (0..g).map(|k| (table[k] + table[(g - k) % g]).abs()).fold(0.0, f64::max)
    }

    pub fn evenness_defect(table: &[f64]) -> f64 {
        let g = table.len();
        (0..g).map(|k| (table[k] - table[(g - k) % g]).abs()).fold(0.0, f64::max)
    }
}

fn grid_average(g: usize, mut f: impl FnMut(usize, usize) -> Result<f64>) -> Result<Vec<f64>> {
    (0..g)
        .map(|l| {
            let mut s = 0.0;
            for k in 0..g {
                s += f(l, k)?;
            }
            Ok(s / g as f64)
        })
        .collect()
}

/// `H1(phi) = 1/2pi int Z(xi)^T H(gamma(xi+phi), gamma(xi)) dxi`.
pub fn average_h1(net: &Network, cycle: &LimitCycle, prc: &PrcPair) -> Result<Vec<f64>> {
    prc.require_grid(cycle)?;
    let g = cycle.grid_len();
    let m = net.dim();
    if net.coupling_drift_is_zero() {
        return Ok(vec![0.0; g]);
    }
    let mut hv = vec![0.0; m];
    grid_average(g, |l, k| {
        net.coupling_drift_into(cycle.sample((k + l) % g), cycle.sample(k), &mut hv)?;
        Ok(dot(prc.z_at(k), &hv))
    })
}

/// `H2(phi) = 1/4pi int tr[C^T H(xi) C] dxi`, `C = C(gamma(xi+phi), gamma(xi))`.
pub fn average_h2(net: &Network, cycle: &LimitCycle, prc: &PrcPair) -> Result<Vec<f64>> {
    prc.require_grid(cycle)?;
    let g = cycle.grid_len();
    let m = net.dim();
    if net.coupling_diffusion_is_zero() {
        return Ok(vec![0.0; g]);
    }
    if !prc.has_h() {
        return Err(Error::InvalidSpec(
            "averaging the coupling noise drift needs the second-order PRC".into(),
        ));
    }
    let mut c = vec![0.0; m * m];
    grid_average(g, |l, k| {
        net.coupling_diffusion_into(cycle.sample((k + l) % g), cycle.sample(k), &mut c)?;
        Ok(0.5 * trace_btab(prc.h_at(k).expect("checked"), &c, m))
    })
}

/// `K^2(phi) = 1/2pi int Z^T (C C^T)(gamma(xi+phi), gamma(xi)) Z dxi`.
pub fn average_k_squared(net: &Network, cycle: &LimitCycle, prc: &PrcPair) -> Result<Vec<f64>> {
    prc.require_grid(cycle)?;
    let g = cycle.grid_len();
    let m = net.dim();
    if net.coupling_diffusion_is_zero() {
        return Ok(vec![0.0; g]);
    }
    let mut c = vec![0.0; m * m];
    let mut zc = vec![0.0; m];
    let raw = grid_average(g, |l, k| {
        net.coupling_diffusion_into(cycle.sample((k + l) % g), cycle.sample(k), &mut c)?;
        crate::linalg::mat_t_vec(&c, prc.z_at(k), &mut zc);
        Ok(dot(&zc, &zc))
    })?;
    clamp_squares(raw)
}

pub fn clamp_squares(raw: Vec<f64>) -> Result<Vec<f64>> {
    raw.into_iter()
        .enumerate()
        .map(|(k, q)| {
            if q < -NEG_SQUARE_TOL {
                Err(Error::Internal(format!("averaged square is negative ({q}) at grid index {k}")))
            } else {
                Ok(q.max(0.0))
            }
        })
        .collect()
}

pub fn average_k(net: &Network, cycle: &LimitCycle, prc: &PrcPair) -> Result<Vec<f64>> {
    Ok(average_k_squared(net, cycle, prc)?.iter().map(|q| q.sqrt()).collect())
}

pub fn average_coupling(net: &Network, cycle: &LimitCycle, prc: &PrcPair) -> Result<AveragedCoupling> {
    Ok(AveragedCoupling {
        phi: cycle.thetas(),
        h1: average_h1(net, cycle, prc)?,
        h2: average_h2(net, cycle, prc)?,
        k_squared: average_k_squared(net, cycle, prc)?,
    })
}

/// Reduced single-oscillator model plus averaged coupling, ready to simulate
/// or certify.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPhaseModel {
    pub n: usize,
    pub weights: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub single: PhaseModel,
    pub coupling: AveragedCoupling,
}

/// Warn when the intensities are far from `sigma ~ delta ~ sqrt(eps)` small.
pub fn scaling_warnings(epsilon: f64, delta: f64, sigma: f64) -> Vec<String> {
    let mut w = vec![];
    if epsilon > 0.1 {
        w.push(format!("coupling strength epsilon = {epsilon} is not small; averaging may be inaccurate"));
    }
    for (name, v) in [("sigma", sigma), ("delta", delta)] {
        if v != 0.0 && epsilon != 0.0 {
            let r = v * v / epsilon;
            if !(0.01..=100.0).contains(&r) {
                w.push(format!("{name}^2/epsilon = {r:.3e}: outside the sigma ~ delta ~ sqrt(epsilon) regime"));
            }
        } else if v > 0.3 {
            w.push(format!("{name} = {v} is not small"));
        }
    }
    w
}

pub fn averaged_phase_model(
    net: &Network,
    cycle: &LimitCycle,
    prc: &PrcPair,
) -> Result<AveragedPhaseModel> {
    for msg in scaling_warnings(net.epsilon, net.delta, net.model.sigma()) {
        log::warn!("{msg}");
    }
    let single = reduce_single(&net.model, cycle, prc)?;
    let coupling = if net.delta == 0.0 {
        AveragedCoupling {
            phi: cycle.thetas(),
            h1: average_h1(net, cycle, prc)?,
            h2: vec![0.0; cycle.grid_len()],
            k_squared: vec![0.0; cycle.grid_len()],
        }
    } else {
        average_coupling(net, cycle, prc)?
    };
    Ok(AveragedPhaseModel {
        n: net.n,
        weights: net.weights.clone(),
        epsilon: net.epsilon,
        delta: net.delta,
        single,
        coupling,
    })
}

impl AveragedPhaseModel {
    pub fn to_phase_network(&self) -> PhaseNetwork {
        PhaseNetwork {
            n: self.n,
            weights: self.weights.clone(),
            drift: self.single.drift_fn(),
            common: self.single.ino_fn(),
            coupling: PhaseFn::table(self.coupling.h1.clone()),
            coupling_second: Some(PhaseFn::table(self.coupling.h2.clone())),
            coupling_noise: PhaseFn::sqrt_table(self.coupling.k_squared.clone()),
            sigma: self.single.sigma,
            epsilon: self.epsilon,
            delta: self.delta,
            shared_edge_noise: false,
        }
    }

    pub fn to_file(&self, fingerprint: Option<String>) -> PhaseModelFile {
        let n = self.n;
        PhaseModelFile {
            n,
            weights: (0..n).map(|i| self.weights[i * n..(i + 1) * n].to_vec()).collect(),
            sigma: self.single.sigma,
            epsilon: self.epsilon,
            delta: self.delta,
            omega: Some(self.single.omega),
            fingerprint,
            drift: PhaseFnFile::Table(self.single.drift()),
            common: PhaseFnFile::SqrtTable(self.single.ino_squared.clone()),
            coupling: PhaseFnFile::Table(self.coupling.h1.clone()),
            coupling_second: Some(PhaseFnFile::Table(self.coupling.h2.clone())),
            coupling_noise: PhaseFnFile::SqrtTable(self.coupling.k_squared.clone()),
            tables: Some(ReductionTables {
                theta: self.single.theta.clone(),
                drift_correction: self.single.drift_correction.clone(),
                diffusion_row: self
                    .single
                    .diffusion_row
                    .chunks(self.single.dim)
                    .map(<[f64]>::to_vec)
                    .collect(),
                ino: self.single.ino(),
                h1: self.coupling.h1.clone(),
                h2: self.coupling.h2.clone(),
                k: self.coupling.k(),
            }),
        }
    }
}

/// Plot-ready copies of the reduction tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionTables {
    pub theta: Vec<f64>,
    pub drift_correction: Vec<f64>,
    pub diffusion_row: Vec<Vec<f64>>,
    pub ino: Vec<f64>,
    #[serde(rename = "H1")]
    pub h1: Vec<f64>,
    #[serde(rename = "H2")]
    pub h2: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
}

/// `phase_model.json`: a scalar phase network. Coefficient functions are
/// tables on `[0, 2pi)`, constants, or expressions in `phi` (and `t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseModelFile {
    #[serde(rename = "N")]
    pub n: usize,
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub drift: PhaseFnFile,
    #[serde(default = "zero_fn")]
    pub common: PhaseFnFile,
    #[serde(default = "zero_fn")]
    pub coupling: PhaseFnFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_second: Option<PhaseFnFile>,
    #[serde(default = "zero_fn")]
    pub coupling_noise: PhaseFnFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<ReductionTables>,
}

fn zero_fn() -> PhaseFnFile {
    PhaseFnFile::Const(0.0)
}

impl PhaseModelFile {
    pub fn to_network(&self) -> Result<PhaseNetwork> {
        let n = self.n;
        if self.weights.len() != n || self.weights.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidSpec(format!("weights: expected a {n}x{n} matrix")));
        }
        let net = PhaseNetwork {
            n,
            weights: self.weights.concat(),
            drift: PhaseFn::from_file(&self.drift)?,
            common: PhaseFn::from_file(&self.common)?,
            coupling: PhaseFn::from_file(&self.coupling)?,
            coupling_second: self.coupling_second.as_ref().map(PhaseFn::from_file).transpose()?,
            coupling_noise: PhaseFn::from_file(&self.coupling_noise)?,
            sigma: self.sigma,
            epsilon: self.epsilon,
            delta: self.delta,
            shared_edge_noise: false,
        };
        net.validate()?;
        Ok(net)
    }

    /// Frequency used to sweep `t` over one period in the bounds; tables
    /// reduced from a cycle carry it, hand-written models may omit it.
    pub fn omega(&self) -> Option<f64> {
        self.omega
    }
}

/// One row of the drift-correction comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItoStratRow {
    pub theta: f64,
    #[serde(rename = "ZtZprime")]
    pub ztz_prime: f64,
    #[serde(rename = "trH")]
    pub tr_h: f64,
    pub diff: f64,
}

/// `Z^T Z'` (periodic central differences) against `tr H` on the PRC grid.
pub fn ito_strat_compare(prc: &PrcPair) -> Result<Vec<ItoStratRow>> {
    let g = prc.len();
    if g < 3 {
        return Err(Error::InvalidSpec("PRC grid too coarse to differentiate".into()));
    }
    let h = prc.h.as_ref().ok_or_else(|| {
        Error::InvalidSpec("the comparison needs the second-order PRC".into())
    })?;
    let m = prc.dim;
    let dth = TAU / g as f64;
    let mut rows = Vec::with_capacity(g);
    for k in 0..g {
        let zp = prc.z_at((k + 1) % g);
        let zm = prc.z_at((k + g - 1) % g);
        let z = prc.z_at(k);
        let ztz: f64 = (0..m).map(|a| z[a] * (zp[a] - zm[a]) / (2.0 * dth)).sum();
        let hk = &h[k * m * m..(k + 1) * m * m];
        let tr: f64 = (0..m).map(|a| hk[a * m + a]).sum();
        rows.push(ItoStratRow {
            theta: prc.theta[k],
            ztz_prime: ztz,
            tr_h: tr,
            diff: ztz - tr,
        });
    }
    Ok(rows)
}

pub fn write_compare_csv<W: std::io::Write>(rows: &[ItoStratRow], w: W) -> Result<()> {
    use crate::prc::fmt_f64;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["theta", "ZtZprime", "trH", "diff"])?;
    for r in rows {
        out.write_record([fmt_f64(r.theta), fmt_f64(r.ztz_prime), fmt_f64(r.tr_h), fmt_f64(r.diff)])?;
    }
    out.flush().map_err(|e| Error::io("compare csv", e))?;
    Ok(())
}

/// Wrap to `(-pi, pi]`.
pub fn wrap_phase(d: f64) -> f64 {
    let r = (d + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}
