//! Post-processing of simulated paths and ensembles: disagreement, decay-rate
//! fits, coherence, and checks of certified rates against simulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdesim::{Ensemble, Functional, SdePath};
use crate::synccert::Certificate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisagreementMode {
    /// `e_i = x_i - mean_j x_j`.
    #[default]
    MeanSubtracted,
    /// `e = L x`.
    Laplacian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disagreement {
    pub n: usize,
    pub node_dim: usize,
    pub times: Vec<f64>,
    /// Per time, `n * node_dim` entries.
    pub e: Vec<f64>,
    pub norm: Vec<f64>,
}

impl Disagreement {
    pub fn at(&self, k: usize) -> &[f64] {
        let w = self.n * self.node_dim;
        &self.e[k * w..(k + 1) * w]
    }
}

/// Disagreement of one state vector into `out`.
pub fn disagreement_of(
    x: &[f64],
    n: usize,
    m: usize,
    mode: DisagreementMode,
    weights: Option<&[f64]>,
    out: &mut [f64],
) -> Result<()> {
    match mode {
        DisagreementMode::MeanSubtracted => {
            for a in 0..m {
                let x0 = x[a];
                let mean = x0 + (0..n).map(|i| x[i * m + a] - x0).sum::<f64>() / n as f64;
                for i in 0..n {
                    out[i * m + a] = x[i * m + a] - mean;
                }
            }
        }
        DisagreementMode::Laplacian => {
            let w = weights.ok_or_else(|| {
                Error::InvalidSpec("Laplacian disagreement needs the network weights".into())
            })?;
            for a in 0..m {
                for i in 0..n {
                    out[i * m + a] = (0..n).map(|j| w[i * n + j] * (x[i * m + a] - x[j * m + a])).sum();
                }
            }
        }
    }
    Ok(())
}

pub fn disagreement(
    path: &SdePath,
    node_dim: usize,
    mode: DisagreementMode,
    weights: Option<&[f64]>,
) -> Result<Disagreement> {
    if node_dim == 0 || path.dim % node_dim != 0 {
        return Err(Error::InvalidSpec(format!(
            "path dimension {} is not a multiple of node dimension {node_dim}",
            path.dim
        )));
    }
    let n = path.dim / node_dim;
    if n < 2 {
        return Err(Error::InvalidSpec("disagreement needs at least two nodes".into()));
    }
    if let Some(w) = weights {
        if w.len() != n * n {
            return Err(Error::InvalidSpec(format!("weights must be {n}x{n}")));
        }
    }
    let mut e = vec![0.0; path.states.len()];
    let mut norm = Vec::with_capacity(path.len());
    for k in 0..path.len() {
        let out = &mut e[k * path.dim..(k + 1) * path.dim];
        disagreement_of(path.state(k), n, node_dim, mode, weights, out)?;
        norm.push(crate::linalg::norm(out));
    }
    Ok(Disagreement {
        n,
        node_dim,
        times: path.times.clone(),
        e,
        norm,
    })
}

/// `|1/N sum_j exp(i phi_j)|`.
pub fn order_parameter(phases: &[f64]) -> f64 {
    if phases.is_empty() {
        return 0.0;
    }
    let (s, c) = phases.iter().fold((0.0, 0.0), |(s, c), p| (s + p.sin(), c + p.cos()));
    (s.hypot(c) / phases.len() as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Negated slope of `log y` against `t`.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Least-squares line through `(t, log y)` on `window` (inclusive).
pub fn fit_decay_rate(times: &[f64], curve: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != curve.len() {
        return Err(Error::InvalidSpec("time and curve lengths differ".into()));
    }
    let mut pts = vec![];
    for (t, y) in times.iter().zip(curve) {
        if *t < window.0 || *t > window.1 {
            continue;
        }
        if !(*y > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "curve must be positive on the fit window; got {y} at t = {t}"
            )));
        }
        pts.push((*t, y.ln()));
    }
    if pts.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "fit window [{}, {}] holds {} samples; need at least 2",
            window.0,
            window.1,
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    let slope = sty / stt;
    let r_squared = if syy == 0.0 { 1.0 } else { (sty * sty / (stt * syy)).clamp(0.0, 1.0) };
    Ok(DecayFit {
        rate: -slope,
        intercept: ym - slope * tm,
        r_squared,
        window,
        points: pts.len(),
    })
}

pub fn default_window(times: &[f64]) -> (f64, f64) {
    let t_end = times.last().copied().unwrap_or(0.0);
    (0.5 * t_end, t_end)
}

/// Percentile bootstrap interval of the fitted rate, resampling trials.
pub fn bootstrap_rate(
    times: &[f64],
    per_trial: &[Vec<f64>],
    window: (f64, f64),
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::Rng;
    let n = per_trial.len();
    if n < 2 {
        return Err(Error::InvalidSpec("bootstrap needs at least two trials".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates = Vec::with_capacity(resamples);
    let mut curve = vec![0.0; times.len()];
    for _ in 0..resamples {
        curve.iter_mut().for_each(|c| *c = 0.0);
        for _ in 0..n {
            let v = &per_trial[rng.random_range(0..n)];
            for (c, x) in curve.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        if let Ok(f) = fit_decay_rate(times, &curve, window) {
            rates.push(f.rate);
        }
    }
    interval(rates, level)
}

/// Bootstrap from summary statistics only: each resample perturbs the mean
/// curve by independent log-normal errors matching the per-time standard error.
pub fn parametric_bootstrap_rate(
    times: &[f64],
    mean: &[f64],
    variance: &[f64],
    n_trials: usize,
    window: (f64, f64),
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates = Vec::with_capacity(resamples);
    let se: Vec<f64> = variance.iter().map(|v| (v.max(0.0) / n_trials as f64).sqrt()).collect();
    let mut curve = vec![0.0; times.len()];
    for _ in 0..resamples {
        for ((c, m), s) in curve.iter_mut().zip(mean).zip(&se) {
            // Log-normal with the same mean and standard error keeps the curve positive.
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = (1.0 + (s / m).powi(2)).ln();
            *c = if *m > 0.0 { m * (v.sqrt() * z - 0.5 * v).exp() } else { *m };
        }
        if let Ok(f) = fit_decay_rate(times, &curve, window) {
            rates.push(f.rate);
        }
    }
    interval(rates, level)
}

fn interval(mut rates: Vec<f64>, level: f64) -> Result<(f64, f64)> {
    if rates.is_empty() {
        return Err(Error::NonConvergence("every bootstrap resample failed to fit".into()));
    }
    rates.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    Ok((
        crate::sdesim::quantile(&rates, a),
        crate::sdesim::quantile(&rates, 1.0 - a),
    ))
}

/// Mean-square disagreement statistics, from an ensemble or its CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MseCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub n_trials: usize,
    pub fingerprint: Option<String>,
    pub per_trial: Option<Vec<Vec<f64>>>,
}

impl MseCurve {
    pub fn from_ensemble(ens: &Ensemble, fingerprint: Option<String>) -> Result<MseCurve> {
        let s = ens.stats_of(Functional::Disagreement2).ok_or_else(|| {
            Error::InvalidSpec("ensemble lacks the disagreement2 functional".into())
        })?;
        Ok(MseCurve {
            times: ens.times.clone(),
            mean: s.mean.clone(),
            variance: s.variance.clone(),
            n_trials: s.values.len(),
            fingerprint,
            per_trial: Some(s.values.clone()),
        })
    }

    /// Read the `disagreement2_mean` / `_var` columns and `# key=value`
    /// comments of an ensemble CSV.
    pub fn read_csv(text: &str) -> Result<MseCurve> {
        let mut fingerprint = None;
        let mut n_trials = None;
        let mut body = String::new();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.trim().split_once('=') {
                    match k.trim() {
                        "fingerprint" => fingerprint = Some(v.trim().to_string()),
                        "completed" => n_trials = v.trim().parse().ok(),
                        _ => {}
                    }
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::InvalidSpec(format!("ensemble csv has no `{name}` column"))
            })
        };
        let (ct, cm, cv) = (col("t")?, col("disagreement2_mean")?, col("disagreement2_var")?);
        let mut times = vec![];
        let mut mean = vec![];
        let mut variance = vec![];
        for rec in r.records() {
            let rec = rec?;
            let get = |c: usize| -> Result<f64> {
                rec[c]
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("bad number `{}` in ensemble csv", &rec[c])))
            };
            times.push(get(ct)?);
            mean.push(get(cm)?);
            variance.push(get(cv)?);
        }
        Ok(MseCurve {
            times,
            mean,
            variance,
            n_trials: n_trials
                .ok_or_else(|| Error::InvalidSpec("ensemble csv lacks `# completed=`".into()))?,
            fingerprint,
            per_trial: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub window: Option<(f64, f64)>,
    /// Pass requires `c_hat >= safety * c`.
    pub safety: f64,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            window: None,
            safety: 0.8,
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub trials: usize,
    pub times: Vec<f64>,
    pub mse: Vec<f64>,
    pub mse_stderr: Vec<f64>,
    /// `mse(t0) exp(-c (t - t0))` for the certified `c`, anchored at the
    /// window start.
    pub envelope: Option<Vec<f64>>,
    pub fit: DecayFit,
    pub rate_ci: (f64, f64),
    pub certified_rate: f64,
    pub certified: bool,
    pub safety: f64,
    /// Whether the envelope lies above the curve across the window.
    pub envelope_holds: Option<bool>,
    pub passes: Option<bool>,
    pub verdict: String,
}

pub fn verify_certificate(
    mse: &MseCurve,
    cert: &Certificate,
    opts: &VerifyOptions,
) -> Result<SyncReport> {
    if let (Some(a), Some(b)) = (&mse.fingerprint, &cert.fingerprint) {
        if a != b {
            return Err(Error::InvalidSpec(format!(
                "ensemble was simulated from network {a} but the certificate is for {b}"
            )));
        }
    }
    let window = opts.window.unwrap_or_else(|| default_window(&mse.times));
    let fit = fit_decay_rate(&mse.times, &mse.mean, window)?;
    let rate_ci = match &mse.per_trial {
        Some(v) => bootstrap_rate(&mse.times, v, window, opts.resamples, opts.level, opts.seed)?,
        None => parametric_bootstrap_rate(
            &mse.times,
            &mse.mean,
            &mse.variance,
            mse.n_trials,
            window,
            opts.resamples,
            opts.level,
            opts.seed,
        )?,
    };
    let stderr = mse
        .variance
        .iter()
        .map(|v| (v.max(0.0) / mse.n_trials as f64).sqrt())
        .collect();
    let c = cert.rate.c;
    let certified = c > 0.0;
    let (envelope, envelope_holds, passes, verdict) = if certified {
        let k0 = mse.times.iter().position(|t| *t >= window.0).unwrap_or(0);
        let (t0, y0) = (mse.times[k0], mse.mean[k0]);
        let env: Vec<f64> = mse.times.iter().map(|t| y0 * (-c * (t - t0)).exp()).collect();
        let holds = mse
            .times
            .iter()
            .zip(&mse.mean)
            .zip(&env)
            .filter(|((t, _), _)| **t >= window.0 && **t <= window.1)
            .all(|((_, y), e)| *y <= *e * (1.0 + 1e-9));
        let pass = fit.rate >= opts.safety * c;
        let verdict = if pass {
            format!(
                "pass: fitted rate {:.6} >= {} x certified rate {:.6}",
                fit.rate, opts.safety, c
            )
        } else {
            format!(
                "fail: fitted rate {:.6} < {} x certified rate {:.6}",
                fit.rate, opts.safety, c
            )
        };
        (Some(env), Some(holds), Some(pass), verdict)
    } else {
        (
            None,
            None,
            None,
            "not certified; empirical behavior informational only".to_string(),
        )
    };
    Ok(SyncReport {
        trials: mse.n_trials,
        times: mse.times.clone(),
        mse: mse.mean.clone(),
        mse_stderr: stderr,
        envelope,
        fit,
        rate_ci,
        certified_rate: c,
        certified,
        safety: opts.safety,
        envelope_holds,
        passes,
        verdict,
    })
}
