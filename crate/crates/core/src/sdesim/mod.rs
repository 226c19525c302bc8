//! Euler-Maruyama integration of Itô SDEs: single systems, full-state
//! coupled networks, phase-level networks, and seeded ensembles.

mod ensemble;
mod rng;

pub use ensemble::{
    quantile, run_ensemble, Ensemble, FunctionalContext, FunctionalStats, Functional,
    InitialCondition, QUANTILES,
};
pub use rng::{stream_rng, WienerSource, INIT_STREAM};

use std::io::Write;

use crate::dynamics::{EvalError, Network};
use crate::error::{Error, Result};
use crate::phasefn::PhaseFn;

pub const SCHEME: &str = "euler-maruyama";

/// Stream id of the common noise `W`.
pub const COMMON_STREAM: u64 = 0;

pub fn node_stream(i: usize) -> u64 {
    1 + i as u64
}

pub fn edge_stream(n: usize, i: usize, j: usize) -> u64 {
    1 + n as u64 + (i * n + j) as u64
}

/// `dx = f(t, x) dt + g(t, x) dW`, with the Wiener increments drawn from the
/// listed streams, `noise_width()` components each.
pub trait SdeSystem: Sync {
    fn dim(&self) -> usize;

    fn noise_streams(&self) -> Vec<u64>;

    fn noise_width(&self) -> usize {
        1
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> std::result::Result<(), EvalError>;

    /// Add `g(t, x) dw` to `out`.
    fn diffuse(
        &self,
        t: f64,
        x: &[f64],
        dw: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError>;
}

/// A sampled path: `states[k*dim..]` is the state at `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    pub dim: usize,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub seed: u64,
    pub trial: u64,
    pub scheme: &'static str,
}

impl SdePath {
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

    /// Columns `t, x1, x2, ...` (or `t, x{i}_{k}` for vector nodes).
    pub fn write_csv<W: Write>(&self, out: W, node_dim: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        let n = self.dim / node_dim;
        for i in 1..=n {
            for k in 1..=node_dim {
                header.push(if node_dim == 1 {
                    format!("x{i}")
                } else {
                    format!("x{i}_{k}")
                });
            }
        }
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![crate::prc::fmt_f64(*t)];
            row.extend(self.state(k).iter().map(|v| crate::prc::fmt_f64(*v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

pub fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidSpec(format!("step h must be positive, got {h}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidSpec(format!("t_end must be non-negative, got {t_end}")));
    }
    Ok((t_end / h).round() as usize)
}

/// `out = x + f(t, x) h + g(t, x) dw`.
#[inline]
pub fn em_step<S: SdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    x: &[f64],
    h: f64,
    dw: &[f64],
    out: &mut [f64],
) -> std::result::Result<(), EvalError> {
    sys.drift(t, x, out)?;
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi + *o * h;
    }
    if !dw.is_empty() {
        sys.diffuse(t, x, dw, out)?;
    }
    Ok(())
}

/// One trial of Euler-Maruyama; keeps every `record_every`-th state (and
/// always the first and last).
pub fn simulate<S: SdeSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    t_end: f64,
    h: f64,
    seed: u64,
    trial: u64,
    record_every: usize,
) -> Result<SdePath> {
    let dim = sys.dim();
    if x0.len() != dim {
        return Err(Error::InvalidSpec(format!(
            "initial state has {} components, system has {dim}",
            x0.len()
        )));
    }
    let steps = step_count(t_end, h)?;
    let every = record_every.max(1);
    let mut noise = WienerSource::new(seed, trial, &sys.noise_streams(), sys.noise_width());
    let mut dw = vec![0.0; noise.len()];
    let mut x = x0.to_vec();
    let mut f = vec![0.0; dim];
    let mut times = vec![0.0];
    let mut states = x.clone();
    for k in 0..steps {
        let t = k as f64 * h;
        if !noise.is_empty() {
            noise.fill(h, &mut dw);
        }
        em_step(sys, t, &x, h, &dw, &mut f)?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { last_finite_time: t });
        }
        std::mem::swap(&mut x, &mut f);
        if (k + 1) % every == 0 || k + 1 == steps {
            times.push((k + 1) as f64 * h);
            states.extend_from_slice(&x);
        }
    }
    Ok(SdePath {
        dim,
        h,
        times,
        states,
        seed,
        trial,
        scheme: SCHEME,
    })
}

type DriftFn<'a> = dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a;

/// Closure-defined SDE with `g` given as a `dim x noise_dim` row-major matrix.
pub struct FnSde<'a> {
    pub dim: usize,
    pub noise_dim: usize,
    pub drift: Box<DriftFn<'a>>,
    pub diffusion: Box<DriftFn<'a>>,
}

impl SdeSystem for FnSde<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_streams(&self) -> Vec<u64> {
        if self.noise_dim == 0 {
            vec![]
        } else {
            vec![COMMON_STREAM]
        }
    }

    fn noise_width(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> std::result::Result<(), EvalError> {
        (self.drift)(t, x, out);
        Ok(())
    }

    fn diffuse(
        &self,
        t: f64,
        x: &[f64],
        dw: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        let mut g = vec![0.0; self.dim * self.noise_dim];
        (self.diffusion)(t, x, &mut g);
        for (i, o) in out.iter_mut().enumerate() {
            *o += crate::linalg::dot(&g[i * self.noise_dim..(i + 1) * self.noise_dim], dw);
        }
        Ok(())
    }
}

pub fn simulate_sde<'a>(
    drift: impl Fn(f64, &[f64], &mut [f64]) + Sync + 'a,
    diffusion: impl Fn(f64, &[f64], &mut [f64]) + Sync + 'a,
    noise_dim: usize,
    x0: &[f64],
    t_end: f64,
    h: f64,
    seed: u64,
) -> Result<SdePath> {
    let sys = FnSde {
        dim: x0.len(),
        noise_dim,
        drift: Box::new(drift),
        diffusion: Box::new(diffusion),
    };
    simulate(&sys, x0, t_end, h, seed, 0, 1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NoiseOptions {
    /// One shared `W` for every node instead of independent `W_i`.
    pub common_noise: bool,
    /// `W_ij = W_ji`.
    pub shared_edge_noise: bool,
}

/// The full `N*m` state network
/// `dx_i = F(x_i)dt + sigma K(x_i)dW_i + sum_j c_ij (eps H(x_j,x_i)dt + delta C(x_j,x_i)dW_ij)`.
pub struct FullNetworkSim<'a> {
    net: &'a Network,
    opts: NoiseOptions,
    node_noise: bool,
    /// `(i, j, block)` for every edge carrying noise.
    edges: Vec<(usize, usize, usize)>,
    streams: Vec<u64>,
}

impl<'a> FullNetworkSim<'a> {
    pub fn new(net: &'a Network, opts: NoiseOptions) -> FullNetworkSim<'a> {
        let n = net.n;
        let node_noise = net.model.sigma() != 0.0;
        let mut streams = vec![];
        if node_noise {
            if opts.common_noise {
                streams.push(COMMON_STREAM);
            } else {
                streams.extend((0..n).map(node_stream));
            }
        }
        let mut edges = vec![];
        if net.delta != 0.0 && !net.coupling_diffusion_is_zero() {
            let mut block_of = std::collections::BTreeMap::new();
            for i in 0..n {
                for j in 0..n {
                    if net.weight(i, j) == 0.0 {
                        continue;
                    }
                    let key = if opts.shared_edge_noise { (i.min(j), i.max(j)) } else { (i, j) };
                    let block = *block_of.entry(key).or_insert_with(|| {
                        streams.push(edge_stream(n, key.0, key.1));
                        streams.len() - 1
                    });
                    edges.push((i, j, block));
                }
            }
        }
        FullNetworkSim {
            net,
            opts,
            node_noise,
            edges,
            streams,
        }
    }

    pub fn options(&self) -> NoiseOptions {
        self.opts
    }
}

impl SdeSystem for FullNetworkSim<'_> {
    fn dim(&self) -> usize {
        self.net.n * self.net.dim()
    }

    fn noise_streams(&self) -> Vec<u64> {
        self.streams.clone()
    }

    fn noise_width(&self) -> usize {
        self.net.dim()
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) -> std::result::Result<(), EvalError> {
        let net = self.net;
        let m = net.dim();
        let mut hv = vec![0.0; m];
        for i in 0..net.n {
            let xi = &x[i * m..(i + 1) * m];
            let oi = &mut out[i * m..(i + 1) * m];
            net.model.drift_into(xi, oi)?;
            if net.epsilon == 0.0 || net.coupling_drift_is_zero() {
                continue;
            }
            for j in 0..net.n {
                let c = net.weight(i, j);
                if c == 0.0 {
                    continue;
                }
                net.coupling_drift_into(&x[j * m..(j + 1) * m], xi, &mut hv)?;
                for (o, v) in oi.iter_mut().zip(&hv) {
                    *o += net.epsilon * c * v;
                }
            }
        }
        Ok(())
    }

    fn diffuse(
        &self,
        t: f64,
        x: &[f64],
        dw: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        let net = self.net;
        let m = net.dim();
        let mut g = vec![0.0; m * m];
        let add = |out: &mut [f64], g: &[f64], w: &[f64], s: f64| {
            for (a, o) in out.iter_mut().enumerate() {
                *o += s * crate::linalg::dot(&g[a * m..(a + 1) * m], w);
            }
        };
        if self.node_noise {
            let sigma = net.model.sigma();
            for i in 0..net.n {
                let xi = &x[i * m..(i + 1) * m];
                let block = if self.opts.common_noise { 0 } else { i };
                net.model.diffusion_into(xi, t, &mut g)?;
                add(&mut out[i * m..(i + 1) * m], &g, &dw[block * m..(block + 1) * m], sigma);
            }
        }
        for &(i, j, block) in &self.edges {
            let xi = &x[i * m..(i + 1) * m];
            net.coupling_diffusion_into(&x[j * m..(j + 1) * m], xi, &mut g)?;
            let s = net.delta * net.weight(i, j);
            add(&mut out[i * m..(i + 1) * m], &g, &dw[block * m..(block + 1) * m], s);
        }
        Ok(())
    }
}

pub fn simulate_network_full(
    net: &Network,
    opts: NoiseOptions,
    x0: &[f64],
    t_end: f64,
    h: f64,
    seed: u64,
    record_every: usize,
) -> Result<SdePath> {
    simulate(&FullNetworkSim::new(net, opts), x0, t_end, h, seed, 0, record_every)
}

/// Scalar phase network
/// `dphi_i = (f(phi_i,t) + delta^2 sum_j c_ij^2 H2(phi_j-phi_i) + eps sum_j c_ij H1(phi_j-phi_i)) dt
///   + sigma ino(phi_i,t) dW + delta sum_j c_ij K(phi_j-phi_i) dW_ij`.
#[derive(Debug, Clone)]
pub struct PhaseNetwork {
    pub n: usize,
    pub weights: Vec<f64>,
    pub drift: PhaseFn,
    pub common: PhaseFn,
    pub coupling: PhaseFn,
    pub coupling_second: Option<PhaseFn>,
    pub coupling_noise: PhaseFn,
    pub sigma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub shared_edge_noise: bool,
}

impl PhaseNetwork {
    /// Uncoupled, noiseless network with constant drift `omega`.
    pub fn free(n: usize, omega: f64) -> PhaseNetwork {
        PhaseNetwork {
            n,
            weights: vec![0.0; n * n],
            drift: PhaseFn::Const(omega),
            common: PhaseFn::Const(0.0),
            coupling: PhaseFn::Const(0.0),
            coupling_second: None,
            coupling_noise: PhaseFn::Const(0.0),
            sigma: 0.0,
            epsilon: 0.0,
            delta: 0.0,
            shared_edge_noise: false,
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.weights.len() != self.n * self.n {
            return Err(Error::InvalidSpec(format!(
                "weights must be {0}x{0}",
                self.n
            )));
        }
        for (k, w) in self.weights.iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidSpec(format!("weight ({}, {}) = {w}", k / self.n, k % self.n)));
            }
        }
        for (name, v) in [("sigma", self.sigma), ("epsilon", self.epsilon), ("delta", self.delta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    fn has_edge_noise(&self) -> bool {
        self.delta != 0.0 && !self.coupling_noise.is_zero()
    }

    fn edge_blocks(&self) -> Vec<(usize, usize, usize)> {
        let mut out = vec![];
        let mut block_of = std::collections::BTreeMap::new();
        let first = usize::from(self.sigma != 0.0 && !self.common.is_zero());
        for i in 0..self.n {
            for j in 0..self.n {
                if self.weight(i, j) == 0.0 {
                    continue;
                }
                let key = if self.shared_edge_noise { (i.min(j), i.max(j)) } else { (i, j) };
                let next = first + block_of.len();
                let b = *block_of.entry(key).or_insert(next);
                out.push((i, j, b));
            }
        }
        out
    }
}

impl SdeSystem for PhaseNetwork {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_streams(&self) -> Vec<u64> {
        let mut s = vec![];
        if self.sigma != 0.0 && !self.common.is_zero() {
            s.push(COMMON_STREAM);
        }
        if self.has_edge_noise() {
            let mut seen = std::collections::BTreeSet::new();
            for (i, j, _) in self.edge_blocks() {
                let key = if self.shared_edge_noise { (i.min(j), i.max(j)) } else { (i, j) };
                if seen.insert(key) {
                    s.push(edge_stream(self.n, key.0, key.1));
                }
            }
        }
        s
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> std::result::Result<(), EvalError> {
        let coupled = self.epsilon != 0.0 && !self.coupling.is_zero();
        let second = self.coupling_second.as_ref().filter(|h2| self.delta != 0.0 && !h2.is_zero());
        for i in 0..self.n {
            let mut v = self.drift.eval(x[i], t)?;
            if coupled || second.is_some() {
                for j in 0..self.n {
                    let c = self.weight(i, j);
                    if c == 0.0 {
                        continue;
                    }
                    let d = x[j] - x[i];
                    if coupled {
                        v += self.epsilon * c * self.coupling.eval(d, t)?;
                    }
                    if let Some(h2) = second {
                        v += self.delta * self.delta * c * c * h2.eval(d, t)?;
                    }
                }
            }
            out[i] = v;
        }
        Ok(())
    }

    fn diffuse(
        &self,
        t: f64,
        x: &[f64],
        dw: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        if self.sigma != 0.0 && !self.common.is_zero() {
            for i in 0..self.n {
                out[i] += self.sigma * self.common.eval(x[i], t)? * dw[0];
            }
        }
        if self.has_edge_noise() {
            for (i, j, b) in self.edge_blocks() {
                let k = self.coupling_noise.eval(x[j] - x[i], t)?;
                out[i] += self.delta * self.weight(i, j) * k * dw[b];
            }
        }
        Ok(())
    }
}

pub fn simulate_phase_network(
    net: &PhaseNetwork,
    phi0: &[f64],
    t_end: f64,
    h: f64,
    seed: u64,
    record_every: usize,
) -> Result<SdePath> {
    net.validate()?;
    simulate(net, phi0, t_end, h, seed, 0, record_every)
}
