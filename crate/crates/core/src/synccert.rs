//! Synchronization certificates for scalar phase networks: bound constants
//! by grid optimization, Laplacian spectra, moment and almost-sure rates.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::phasefn::PhaseFn;
use crate::sdesim::PhaseNetwork;

/// Phase interval on which the bounds hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Omega1 {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Omega1 {
    fn default() -> Self {
        Omega1 {
            lo: -FRAC_PI_2,
            hi: FRAC_PI_2,
        }
    }
}

impl Omega1 {
    pub fn new(lo: f64, hi: f64) -> Result<Omega1> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidSpec(format!("omega1: need lo < hi, got ({lo}, {hi})")));
        }
        Ok(Omega1 { lo, hi })
    }

    /// Parse `"lo,hi"`.
    pub fn parse(s: &str) -> Result<Omega1> {
        let bad = || Error::InvalidSpec(format!("omega1: expected \"lo,hi\", got `{s}`"));
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        let lo = a.trim().parse().map_err(|_| bad())?;
        let hi = b.trim().parse().map_err(|_| bad())?;
        Omega1::new(lo, hi)
    }
}

pub fn check_symmetric(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n * n {
        return Err(Error::InvalidSpec(format!("weights must be {n}x{n}")));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (weights[i * n + j], weights[j * n + i]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::AsymmetricWeights(i, j));
            }
        }
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidSpec("weights must be non-negative".into()));
    }
    Ok(())
}

/// `L = D - A`, row-major.
pub fn laplacian(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    check_symmetric(weights, n)?;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                l[i * n + j] = -weights[i * n + j];
                l[i * n + i] += weights[i * n + j];
            }
        }
    }
    Ok(l)
}

/// Laplacian of the squared weights.
pub fn laplacian_squared(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    check_symmetric(weights, n)?;
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    laplacian(&sq, n)
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Ascending eigenvalues; the smallest is snapped to exactly zero when it
/// is within `1e-10 |L|`.
pub fn spectral(l: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut v = sym_eigen(l, n)?.values;
    let scale = frobenius(l);
    if let Some(first) = v.first_mut() {
        if first.abs() <= 1e-10 * scale {
            *first = 0.0;
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectra {
    pub eigenvalues: Vec<f64>,
    pub eigenvalues_sq: Vec<f64>,
    pub lambda2: f64,
    #[serde(rename = "lambdaN")]
    pub lambda_n: f64,
    #[serde(rename = "lambdaN_sq")]
    pub lambda_n_sq: f64,
    pub connected: bool,
}

pub fn spectra(weights: &[f64], n: usize) -> Result<Spectra> {
    if n < 2 {
        return Err(Error::InvalidSpec("certificates need at least two nodes".into()));
    }
    let l = laplacian(weights, n)?;
    let ev = spectral(&l, n)?;
    let ev2 = spectral(&laplacian_squared(weights, n)?, n)?;
    let tol = 1e-10 * frobenius(&l).max(f64::MIN_POSITIVE);
    let mut lambda2 = ev[1];
    let connected = lambda2 > tol;
    if !connected {
        lambda2 = 0.0;
    }
    Ok(Spectra {
        lambda2,
        lambda_n: ev[n - 1],
        lambda_n_sq: ev2[n - 1],
        eigenvalues: ev,
        eigenvalues_sq: ev2,
        connected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Initial number of scan points over the interval.
    pub grid: usize,
    /// Scan points over one period in `t` for time-dependent coefficients.
    pub t_grid: usize,
    /// Stop doubling once the bound changes by at most this (relative).
    pub rel_tol: f64,
    pub max_doublings: usize,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions {
            grid: 4096,
            t_grid: 64,
            rel_tol: 1e-6,
            max_doublings: 3,
        }
    }
}

/// How tabulated drift-like coefficients depend on time: `f(phi, t) =
/// table(omega t + phi)` when `omega` is known.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub value: f64,
    pub at: f64,
    pub grid: usize,
}

type Sampler<'a> = dyn Fn(f64) -> Result<f64> + 'a;

/// Extremum of `f` on `[lo, hi]` by a uniform scan of `n + 1` points and a
/// finer scan around the best one.
fn scan(f: &Sampler, lo: f64, hi: f64, n: usize, maximize: bool) -> Result<(f64, f64)> {
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    let step = (hi - lo) / n as f64;
    let mut best = (if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, lo);
    for k in 0..=n {
        let x = if k == n { hi } else { lo + k as f64 * step };
        let v = f(x)?;
        if !v.is_finite() {
            return Err(Error::NonCertifiable(format!("non-finite sample {v} at phi = {x}")));
        }
        if better(v, best.0) {
            best = (v, x);
        }
    }
    let (a, b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let m = 64;
    for k in 0..=m {
        let x = a + (b - a) * k as f64 / m as f64;
        let v = f(x)?;
        if v.is_finite() && better(v, best.0) {
            best = (v, x);
        }
    }
    Ok(best)
}

/// Scan with grid doubling until the value settles.
fn settled(f: &Sampler, lo: f64, hi: f64, maximize: bool, opts: &BoundOptions) -> Result<Extremum> {
    let mut n = opts.grid.max(16);
    let (mut v, mut at) = scan(f, lo, hi, n, maximize)?;
    for _ in 0..opts.max_doublings {
        let (v2, at2) = scan(f, lo, hi, 2 * n, maximize)?;
        n *= 2;
        let change = (v2 - v).abs();
        v = v2;
        at = at2;
        if change <= opts.rel_tol * v.abs().max(1e-300) || change == 0.0 {
            break;
        }
    }
    Ok(Extremum { value: v, at, grid: n })
}

fn time_samples(f: &PhaseFn, frame: Frame, opts: &BoundOptions) -> Result<Vec<f64>> {
    if !f.depends_on_time() {
        return Ok(vec![0.0]);
    }
    let omega = frame.omega.filter(|w| *w > 0.0).ok_or_else(|| {
        Error::NonCertifiable("time-dependent coefficient needs the oscillator frequency".into())
    })?;
    let period = TAU / omega;
    Ok((0..opts.t_grid).map(|k| period * k as f64 / opts.t_grid as f64).collect())
}

/// Sup or inf of `d f/d phi` over `Omega1 x [0, T)`.
fn derivative_extremum(
    f: &PhaseFn,
    omega1: Omega1,
    frame: Frame,
    maximize: bool,
    opts: &BoundOptions,
) -> Result<Extremum> {
    if let PhaseFn::Const(_) = f {
        return Ok(Extremum { value: 0.0, at: 0.0, grid: 0 });
    }
    let tabulated = matches!(f, PhaseFn::Table(_) | PhaseFn::SqrtTable(_));
    if tabulated && frame.omega.is_some() {
        // omega t + phi sweeps the whole circle as t covers one period.
        let g = |x: f64| f.deriv(x, 0.0).map_err(Error::from);
        return settled(&g, 0.0, TAU, maximize, opts);
    }
    let mut best: Option<Extremum> = None;
    for t in time_samples(f, frame, opts)? {
        let g = |x: f64| f.deriv(x, t).map_err(Error::from);
        let e = settled(&g, omega1.lo, omega1.hi, maximize, opts)?;
        let take = match &best {
            None => true,
            Some(b) => (maximize && e.value > b.value) || (!maximize && e.value < b.value),
        };
        if take {
            best = Some(e);
        }
    }
    Ok(best.expect("at least one time sample"))
}

/// One-sided Lipschitz constant of the drift: `sup d F/d phi`.
pub fn bound_drift(f: &PhaseFn, omega1: Omega1, frame: Frame, opts: &BoundOptions) -> Result<Extremum> {
    derivative_extremum(f, omega1, frame, true, opts)
}

/// `(sup, inf)` of `d ino/d phi`.
pub fn bound_common_noise(
    ino: &PhaseFn,
    omega1: Omega1,
    frame: Frame,
    opts: &BoundOptions,
) -> Result<(Extremum, Extremum)> {
    Ok((
        derivative_extremum(ino, omega1, frame, true, opts)?,
        derivative_extremum(ino, omega1, frame, false, opts)?,
    ))
}

fn table_scale(f: &PhaseFn, n: usize) -> Result<f64> {
    Ok(f.sample(n)?.iter().fold(0.0, |a: f64, v| a.max(v.abs())))
}

/// `max |f(phi) + f(-phi)|` over a uniform grid, and `max |f|`.
pub fn oddness(f: &PhaseFn, n: usize) -> Result<(f64, f64)> {
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let x = TAU * k as f64 / n as f64;
        worst = worst.max((f.eval(x, 0.0)? + f.eval(-x, 0.0)?).abs());
    }
    Ok((worst, table_scale(f, n)?))
}

pub fn evenness(f: &PhaseFn, n: usize) -> Result<(f64, f64)> {
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let x = TAU * k as f64 / n as f64;
        worst = worst.max((f.eval(x, 0.0)? - f.eval(-x, 0.0)?).abs());
    }
    Ok((worst, table_scale(f, n)?))
}

pub fn is_odd(f: &PhaseFn) -> Result<bool> {
    let (d, s) = oddness(f, 1024)?;
    Ok(d <= 1e-8 * s + 1e-12)
}

pub fn is_even(f: &PhaseFn) -> Result<bool> {
    let (d, s) = evenness(f, 1024)?;
    Ok(d <= 1e-8 * s + 1e-12)
}

/// Ratio `g(phi)/phi` with the removable singularity filled by `limit`.
fn ratio<'a>(
    g: impl Fn(f64) -> Result<f64> + 'a,
    limit: f64,
    cutoff: f64,
) -> impl Fn(f64) -> Result<f64> + 'a {
    move |x: f64| {
        if x.abs() < cutoff {
            Ok(limit)
        } else {
            Ok(g(x)? / x)
        }
    }
}

/// `inf_{phi != 0} H1(phi)/phi`; requires `H1` odd.
pub fn bound_coupling(h1: &PhaseFn, omega1: Omega1, opts: &BoundOptions) -> Result<Extremum> {
    if h1.is_zero() {
        return Ok(Extremum { value: 0.0, at: 0.0, grid: 0 });
    }
    let (d, s) = oddness(h1, 1024)?;
    if d > 1e-8 * s + 1e-12 {
        return Err(Error::NonCertifiable(format!(
            "coupling is not odd: max |H(phi) + H(-phi)| = {d:.3e} (max |H| = {s:.3e})"
        )));
    }
    let limit = h1.deriv(0.0, 0.0)?;
    let cutoff = (omega1.hi - omega1.lo) / opts.grid as f64;
    let f = ratio(|x| h1.eval(x, 0.0).map_err(Error::from), limit, cutoff);
    let mut e = settled(&f, omega1.lo, omega1.hi, false, opts)?;
    if omega1.lo < 0.0 && omega1.hi > 0.0 && limit < e.value {
        e.value = limit;
        e.at = 0.0;
    }
    Ok(e)
}

/// `(sup, inf)` of `|K(phi)|/|phi|`; requires `K(0) = 0`.
pub fn bound_coupling_noise(
    k: &PhaseFn,
    omega1: Omega1,
    opts: &BoundOptions,
) -> Result<(Extremum, Extremum)> {
    if k.is_zero() {
        let z = Extremum { value: 0.0, at: 0.0, grid: 0 };
        return Ok((z, z));
    }
    let k0 = k.eval(0.0, 0.0)?.abs();
    let s = table_scale(k, 1024)?;
    if k0 > 1e-8 * s + 1e-12 {
        return Err(Error::NonCertifiable(format!(
            "coupling noise K(0) = {k0:.3e} is not zero, so no linear bound |K(phi)| <= c|phi| exists"
        )));
    }
    let limit = k.abs_slope_at_zero()?;
    let cutoff = (omega1.hi - omega1.lo) / opts.grid as f64;
    let f = ratio(|x| Ok(k.eval(x, 0.0)?.abs()), limit, cutoff);
    let f = |x: f64| f(x).map(f64::abs);
    let mut sup = settled(&f, omega1.lo, omega1.hi, true, opts)?;
    let mut inf = settled(&f, omega1.lo, omega1.hi, false, opts)?;
    if omega1.lo < 0.0 && omega1.hi > 0.0 {
        if limit > sup.value {
            sup.value = limit;
            sup.at = 0.0;
        }
        if limit < inf.value {
            inf.value = limit;
            inf.at = 0.0;
        }
    }
    Ok((sup, inf))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bounds {
    pub c_f: f64,
    pub c_h: f64,
    pub c_c_upper: f64,
    pub c_c_lower: f64,
    pub c_k_upper: f64,
    pub c_k_lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub c: f64,
    pub lambda: f64,
    /// `"lambda2"` when `c_h > 0`, else `"lambdaN"`.
    pub lambda_selector: String,
    pub synchronizes: bool,
}

/// `c = -2 c_F + 2 eps c_H lambda - delta^2 c_C^2 (1 - 1/N) lambdaN[c^2] - sigma^2 c_K^2`.
pub fn rate_theorem22(b: &Bounds, s: &Spectra, p: &Intensities) -> Rate {
    let (lambda, sel) = if b.c_h > 0.0 {
        (s.lambda2, "lambda2")
    } else {
        (s.lambda_n, "lambdaN")
    };
    let n = p.n as f64;
    let c = -2.0 * b.c_f + 2.0 * p.epsilon * b.c_h * lambda
        - p.delta * p.delta * b.c_c_upper * b.c_c_upper * (1.0 - 1.0 / n) * s.lambda_n_sq
        - p.sigma * p.sigma * b.c_k_upper * b.c_k_upper;
    Rate {
        c,
        lambda,
        lambda_selector: sel.to_string(),
        synchronizes: c > 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentStatus {
    Certified,
    /// `alpha1 < 0`: the mean-square theorem already applies.
    MeanSquareApplies,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem23 {
    pub alpha1: f64,
    pub alpha2_sq_statement: f64,
    pub alpha2_sq_proof: f64,
    /// The smaller of the two variants.
    pub alpha2_sq: f64,
    pub p_max: Option<f64>,
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub status: MomentStatus,
}

pub fn alpha2_variants(b: &Bounds, s: &Spectra, p: &Intensities) -> (f64, f64) {
    let base = (p.sigma * b.c_k_lower).powi(2);
    let edge = p.delta * p.delta * b.c_c_lower * b.c_c_lower * s.lambda2 * s.lambda2;
    (base + edge / 12.0, base + edge / (4.0 * p.n as f64))
}

/// `alpha1 = -c/2`; p-th moment rate `alpha = -p[(p/2 - 1) alpha2^2 - alpha1]`
/// for `0 < p < p_max = 2(1 - alpha1/alpha2^2)`.
pub fn theorem23_from(alpha1: f64, a_stmt: f64, a_proof: f64, p: Option<f64>) -> Theorem23 {
    let a2 = a_stmt.min(a_proof);
    let mut out = Theorem23 {
        alpha1,
        alpha2_sq_statement: a_stmt,
        alpha2_sq_proof: a_proof,
        alpha2_sq: a2,
        p_max: None,
        p: None,
        alpha: None,
        status: MomentStatus::NotCertified,
    };
    if a2 > 0.0 {
        let p_max = 2.0 * (1.0 - alpha1 / a2);
        out.p_max = Some(p_max);
        if p_max > 0.0 {
            let p = p.unwrap_or(0.5 * p_max);
            out.p = Some(p);
            out.alpha = Some(-p * ((0.5 * p - 1.0) * a2 - alpha1));
        }
    }
    out.status = if alpha1 < 0.0 {
        MomentStatus::MeanSquareApplies
    } else if alpha1 < a2 {
        MomentStatus::Certified
    } else {
        MomentStatus::NotCertified
    };
    out
}

pub fn theorem23(b: &Bounds, s: &Spectra, p: &Intensities, rate: &Rate, moment: Option<f64>) -> Theorem23 {
    let (a, b2) = alpha2_variants(b, s, p);
    theorem23_from(-0.5 * rate.c, a, b2, moment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem24 {
    pub exponent: f64,
    pub certified: bool,
    /// `c_K_upper^2 < 2 c_K_lower^2`.
    pub noise_benefit: bool,
}

pub fn theorem24_from(alpha1: f64, alpha2_sq: f64, b: &Bounds) -> Theorem24 {
    let exponent = alpha1 - alpha2_sq;
    Theorem24 {
        exponent,
        certified: exponent < 0.0,
        noise_benefit: b.c_k_upper * b.c_k_upper < 2.0 * b.c_k_lower * b.c_k_lower,
    }
}

pub fn theorem24(t23: &Theorem23, b: &Bounds) -> Theorem24 {
    theorem24_from(t23.alpha1, t23.alpha2_sq, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropCase {
    NoCoupling,
    Deterministic,
    Stochastic,
}

impl PropCase {
    pub fn infer(p: &Intensities, coupled: bool) -> PropCase {
        if p.epsilon == 0.0 || !coupled {
            PropCase::NoCoupling
        } else if p.delta == 0.0 {
            PropCase::Deterministic
        } else {
            PropCase::Stochastic
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropVerdict {
    pub proposition: String,
    pub applicable: bool,
    /// Structural assumptions that fail, if any.
    pub notes: Vec<String>,
    /// `(name, value, holds)` per tested inequality.
    pub conditions: Vec<(String, f64, bool)>,
    pub certified: bool,
}

/// Structural facts about the network the propositions assume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub coupling_odd: bool,
    pub unit_weights: bool,
    pub noise_odd_or_even: bool,
}

pub fn check_props_6(
    case: PropCase,
    b: &Bounds,
    s: &Spectra,
    p: &Intensities,
    rate: &Rate,
    st: &Structure,
) -> PropVerdict {
    let sig2 = p.sigma * p.sigma;
    match case {
        PropCase::NoCoupling => {
            let mut notes = vec![];
            if p.epsilon != 0.0 || p.delta != 0.0 {
                notes.push("network has edge coupling".into());
            }
            if p.sigma == 0.0 {
                notes.push("no common noise (sigma = 0)".into());
            }
            let applicable = notes.is_empty();
            let value = if p.sigma > 0.0 {
                2.0 * b.c_k_lower.powi(2) - b.c_k_upper.powi(2) - 2.0 * b.c_f / sig2
            } else {
                f64::NEG_INFINITY
            };
            let holds = value > 0.0;
            PropVerdict {
                proposition: "common noise only".into(),
                applicable,
                notes,
                conditions: vec![("2 c_K_lower^2 - c_K_upper^2 - 2 c_F / sigma^2".into(), value, holds)],
                certified: applicable && holds,
            }
        }
        PropCase::Deterministic => {
            let mut notes = vec![];
            if !st.coupling_odd {
                notes.push("coupling is not odd".into());
            }
            if p.delta != 0.0 {
                notes.push("coupling noise present (delta != 0)".into());
            }
            let applicable = notes.is_empty();
            let v1 = rate.c;
            let v2 = rate.c + 2.0 * sig2 * b.c_k_lower.powi(2);
            let conditions = vec![
                ("c".into(), v1, v1 > 0.0),
                ("c + 2 sigma^2 c_K_lower^2".into(), v2, v2 > 0.0),
            ];
            let certified = applicable && conditions.iter().any(|c| c.2);
            PropVerdict {
                proposition: "deterministic coupling".into(),
                applicable,
                notes,
                conditions,
                certified,
            }
        }
        PropCase::Stochastic => {
            let mut notes = vec![];
            if !st.coupling_odd {
                notes.push("effective coupling is not odd".into());
            }
            if !st.unit_weights {
                notes.push("weights are not all 0 or 1".into());
            }
            if !st.noise_odd_or_even {
                notes.push("coupling noise is neither odd nor even".into());
            }
            let applicable = notes.is_empty();
            let v1 = rate.c;
            let v2 = rate.c + 2.0 * sig2 * b.c_k_lower.powi(2);
            let v3 = v2 + p.delta * p.delta * b.c_c_lower.powi(2) * s.lambda2 * s.lambda2 / 6.0;
            let conditions = vec![
                ("c".into(), v1, v1 > 0.0),
                ("c + 2 sigma^2 c_K_lower^2".into(), v2, v2 > 0.0),
                ("c + 2 sigma^2 c_K_lower^2 + delta^2 c_C_lower^2 lambda2^2 / 6".into(), v3, v3 > 0.0),
            ];
            let certified = applicable && conditions.iter().any(|c| c.2);
            PropVerdict {
                proposition: "stochastic coupling".into(),
                applicable,
                notes,
                conditions,
                certified,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundGrids {
    pub phi_points: usize,
    pub t_points: usize,
    pub drift: Extremum,
    pub coupling: Extremum,
    pub coupling_noise: (Extremum, Extremum),
    pub common_noise: (Extremum, Extremum),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub fingerprint: Option<String>,
    pub omega1: Omega1,
    pub intensities: Intensities,
    pub frame_omega: Option<f64>,
    pub bounds: Bounds,
    pub spectra: Spectra,
    pub rate: Rate,
    pub theorem23: Theorem23,
    pub theorem24: Theorem24,
    pub structure: Structure,
    pub proposition: PropVerdict,
    pub grids: BoundGrids,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CertifyOptions {
    pub omega1: Omega1,
    pub bounds: BoundOptions,
    pub frame: Frame,
    pub moment: Option<f64>,
    pub fingerprint: Option<String>,
}

fn unit_weights(w: &[f64]) -> bool {
    w.iter().all(|v| *v == 0.0 || *v == 1.0)
}

/// Effective coupling `H1 + (delta^2/eps) H2`, valid when `c_ij^2 = c_ij`.
fn effective_coupling(net: &PhaseNetwork) -> Result<PhaseFn> {
    let Some(h2) = net.coupling_second.as_ref().filter(|h| net.delta != 0.0 && !h.is_zero()) else {
        return Ok(net.coupling.clone());
    };
    if net.epsilon == 0.0 || !unit_weights(&net.weights) {
        return Err(Error::NonCertifiable(
            "the second-order coupling drift can only be folded into the coupling for 0/1 weights with epsilon > 0".into(),
        ));
    }
    let g = 4096;
    let r = net.delta * net.delta / net.epsilon;
    let a = net.coupling.sample(g)?;
    let b = h2.sample(g)?;
    Ok(PhaseFn::table(a.iter().zip(&b).map(|(x, y)| x + r * y).collect()))
}

pub fn certify(net: &PhaseNetwork, opts: &CertifyOptions) -> Result<Certificate> {
    net.validate()?;
    let n = net.n;
    let spectra = spectra(&net.weights, n)?;
    let o1 = opts.omega1;
    let bo = &opts.bounds;
    let intens = Intensities {
        epsilon: net.epsilon,
        delta: net.delta,
        sigma: net.sigma,
        n,
    };
    let has_edges = net.weights.iter().any(|w| *w != 0.0);
    let coupling = effective_coupling(net)?;
    let drift = bound_drift(&net.drift, o1, opts.frame, bo)?;
    let zero = Extremum { value: 0.0, at: 0.0, grid: 0 };
    let coupled = net.epsilon != 0.0 && has_edges;
    let c_h = if coupled { bound_coupling(&coupling, o1, bo)? } else { zero };
    let noisy_edges = net.delta != 0.0 && has_edges;
    let cc = if noisy_edges {
        bound_coupling_noise(&net.coupling_noise, o1, bo)?
    } else {
        (zero, zero)
    };
    let ck = if net.sigma != 0.0 {
        bound_common_noise(&net.common, o1, opts.frame, bo)?
    } else {
        (zero, zero)
    };
    let bounds = Bounds {
        c_f: drift.value,
        c_h: c_h.value,
        c_c_upper: cc.0.value,
        c_c_lower: cc.1.value,
        c_k_upper: ck.0.value,
        c_k_lower: ck.1.value,
    };
    let rate = rate_theorem22(&bounds, &spectra, &intens);
    let t23 = theorem23(&bounds, &spectra, &intens, &rate, opts.moment);
    let t24 = theorem24(&t23, &bounds);
    let structure = Structure {
        coupling_odd: is_odd(&coupling)?,
        unit_weights: unit_weights(&net.weights),
        noise_odd_or_even: is_odd(&net.coupling_noise)? || is_even(&net.coupling_noise)?,
    };
    let case = PropCase::infer(&intens, has_edges && !coupling.is_zero());
    let proposition = check_props_6(case, &bounds, &spectra, &intens, &rate, &structure);
    let verdict = if case == PropCase::NoCoupling && !has_edges {
        if proposition.certified {
            "synchronizes by common noise".to_string()
        } else {
            "not certified".to_string()
        }
    } else if !spectra.connected {
        "λ₂ = 0: not certifiable".to_string()
    } else if rate.synchronizes {
        format!("synchronizes in mean square at rate c = {:.6}", rate.c)
    } else if t23.status == MomentStatus::Certified {
        format!(
            "p-th moment synchronization for p < {:.6}",
            t23.p_max.unwrap_or(f64::NAN)
        )
    } else if t24.certified {
        format!("almost sure synchronization with exponent {:.6}", t24.exponent)
    } else {
        "not certified".to_string()
    };
    Ok(Certificate {
        fingerprint: opts.fingerprint.clone(),
        omega1: o1,
        intensities: intens,
        frame_omega: opts.frame.omega,
        bounds,
        spectra,
        rate,
        theorem23: t23,
        theorem24: t24,
        structure,
        proposition,
        grids: BoundGrids {
            phi_points: bo.grid,
            t_points: bo.t_grid,
            drift,
            coupling: c_h,
            coupling_noise: cc,
            common_noise: ck,
        },
        verdict,
    })
}
