//! Monte-Carlo ensembles over counter-derived seeds.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use super::rng::{stream_rng, INIT_STREAM};
use super::{simulate, SdeSystem};
use crate::error::{Error, Result};
use crate::prc::fmt_f64;

pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Scalar summaries of a network state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    Constant,
    SquaredNorm,
    /// `sum_i |x_i - psi|^2` with `psi` the node mean.
    Disagreement2,
    DisagreementNorm,
    /// `|L x|`.
    LaplacianNorm,
    /// Kuramoto coherence of scalar phases.
    OrderParameter,
    Component(usize),
}

impl Functional {
    pub fn name(&self) -> String {
        match self {
            Functional::Constant => "one".into(),
            Functional::SquaredNorm => "norm2".into(),
            Functional::Disagreement2 => "disagreement2".into(),
            Functional::DisagreementNorm => "disagreement".into(),
            Functional::LaplacianNorm => "laplacian_disagreement".into(),
            Functional::OrderParameter => "order".into(),
            Functional::Component(i) => format!("x{}", i + 1),
        }
    }

    pub fn from_name(s: &str) -> Option<Functional> {
        Some(match s {
            "one" | "constant" => Functional::Constant,
            "norm2" => Functional::SquaredNorm,
            "disagreement2" => Functional::Disagreement2,
            "disagreement" => Functional::DisagreementNorm,
            "laplacian_disagreement" => Functional::LaplacianNorm,
            "order" => Functional::OrderParameter,
            _ => {
                let i: usize = s.strip_prefix('x')?.parse().ok()?;
                Functional::Component(i.checked_sub(1)?)
            }
        })
    }

    pub fn eval(&self, x: &[f64], ctx: &FunctionalContext) -> f64 {
        let (n, m) = (ctx.n, ctx.node_dim);
        let sq_dis = || {
            let mut s = 0.0;
            for a in 0..m {
                let mean = (0..n).map(|i| x[i * m + a]).sum::<f64>() / n as f64;
                s += (0..n).map(|i| (x[i * m + a] - mean).powi(2)).sum::<f64>();
            }
            s
        };
        match self {
            Functional::Constant => 1.0,
            Functional::SquaredNorm => x.iter().map(|v| v * v).sum(),
            Functional::Disagreement2 => sq_dis(),
            Functional::DisagreementNorm => sq_dis().sqrt(),
            Functional::LaplacianNorm => {
                let w = &ctx.weights;
                let mut s = 0.0;
                for a in 0..m {
                    for i in 0..n {
                        let mut li = 0.0;
                        for j in 0..n {
                            li += w[i * n + j] * (x[i * m + a] - x[j * m + a]);
                        }
                        s += li * li;
                    }
                }
                s.sqrt()
            }
            Functional::OrderParameter => crate::analysis::order_parameter(&x[..n]),
            Functional::Component(i) => x[*i],
        }
    }
}

/// What a functional needs to know about the state layout.
#[derive(Debug, Clone)]
pub struct FunctionalContext {
    pub n: usize,
    pub node_dim: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Fixed(Vec<f64>),
    /// Independent uniform draws per coordinate from the trial's reserved stream.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl InitialCondition {
    pub fn draw(&self, master: u64, trial: u64) -> Vec<f64> {
        match self {
            InitialCondition::Fixed(x) => x.clone(),
            InitialCondition::Uniform { lo, hi } => {
                let mut r = stream_rng(master, trial, INIT_STREAM);
                lo.iter()
                    .zip(hi)
                    .map(|(a, b)| a + (b - a) * r.random::<f64>())
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// One series per entry of `QUANTILES`.
    pub quantiles: Vec<Vec<f64>>,
    /// `values[trial][k]` for the successful trials, in trial order.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub master_seed: u64,
    pub n_trials: usize,
    pub h: f64,
    pub times: Vec<f64>,
    pub functionals: Vec<Functional>,
    pub stats: Vec<FunctionalStats>,
    /// Trial ids that completed.
    pub completed: Vec<u64>,
    pub failures: Vec<(u64, String)>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[allow(clippy::too_many_arguments)]
pub fn run_ensemble<S: SdeSystem + ?Sized>(
    sys: &S,
    init: &InitialCondition,
    t_end: f64,
    h: f64,
    record_every: usize,
    n_trials: usize,
    master_seed: u64,
    functionals: &[Functional],
    ctx: &FunctionalContext,
) -> Result<Ensemble> {
    if n_trials < 2 {
        return Err(Error::InvalidSpec(format!("an ensemble needs at least 2 trials, got {n_trials}")));
    }
    if functionals.is_empty() {
        return Err(Error::InvalidSpec("no functionals requested".into()));
    }
    for f in functionals {
        if let Functional::Component(i) = f {
            if *i >= sys.dim() {
                return Err(Error::InvalidSpec(format!("component x{} out of range", i + 1)));
            }
        }
    }
    let runs: Vec<(u64, Result<(Vec<f64>, Vec<Vec<f64>>)>)> = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let x0 = init.draw(master_seed, trial);
            let r = simulate(sys, &x0, t_end, h, master_seed, trial, record_every).map(|p| {
                let vals = functionals
                    .iter()
                    .map(|f| (0..p.len()).map(|k| f.eval(p.state(k), ctx)).collect())
                    .collect();
                (p.times, vals)
            });
            (trial, r)
        })
        .collect();

    let mut times = None;
    let mut completed = vec![];
    let mut failures = vec![];
    let mut per_fn: Vec<Vec<Vec<f64>>> = vec![vec![]; functionals.len()];
    for (trial, r) in runs {
        match r {
            Ok((t, vals)) => {
                times.get_or_insert(t);
                completed.push(trial);
                for (acc, v) in per_fn.iter_mut().zip(vals) {
                    acc.push(v);
                }
            }
            Err(e) => {
                log::warn!("trial {trial} failed: {e}");
                failures.push((trial, e.to_string()));
            }
        }
    }
    let times = times.ok_or_else(|| {
        Error::Internal(format!(
            "all {n_trials} trials failed; first: {}",
            failures.first().map(|f| f.1.as_str()).unwrap_or("")
        ))
    })?;
    let stats = per_fn.into_iter().map(|v| summarize(v, times.len())).collect();
    Ok(Ensemble {
        master_seed,
        n_trials,
        h,
        times,
        functionals: functionals.to_vec(),
        stats,
        completed,
        failures,
    })
}

fn summarize(values: Vec<Vec<f64>>, len: usize) -> FunctionalStats {
    let n = values.len();
    let mut mean = vec![0.0; len];
    let mut variance = vec![0.0; len];
    let mut quantiles = vec![vec![0.0; len]; QUANTILES.len()];
    let mut col = vec![0.0; n];
    for k in 0..len {
        for (c, v) in col.iter_mut().zip(&values) {
            *c = v[k];
        }
        let m = col.iter().sum::<f64>() / n as f64;
        mean[k] = m;
        variance[k] = if n > 1 {
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        col.sort_by(f64::total_cmp);
        for (q, out) in QUANTILES.iter().zip(quantiles.iter_mut()) {
            out[k] = quantile(&col, *q);
        }
    }
    FunctionalStats {
        mean,
        variance,
        quantiles,
        values,
    }
}

impl Ensemble {
    pub fn stats_of(&self, f: Functional) -> Option<&FunctionalStats> {
        self.functionals.iter().position(|g| *g == f).map(|i| &self.stats[i])
    }

    /// Comment lines (`# key=value`), then `t` and per functional
    /// `_mean, _var, _q05, _q25, _q50, _q75, _q95`.
    pub fn write_csv<W: Write>(&self, mut out: W, fingerprint: Option<&str>) -> Result<()> {
        let io = |e| Error::io("ensemble csv", e);
        if let Some(fp) = fingerprint {
            writeln!(out, "# fingerprint={fp}").map_err(io)?;
        }
        writeln!(out, "# master_seed={}", self.master_seed).map_err(io)?;
        writeln!(out, "# trials={}", self.n_trials).map_err(io)?;
        writeln!(out, "# completed={}", self.completed.len()).map_err(io)?;
        writeln!(out, "# failures={}", self.failures.len()).map_err(io)?;
        writeln!(out, "# h={}", fmt_f64(self.h)).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for f in &self.functionals {
            let name = f.name();
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_var"));
            for q in QUANTILES {
                header.push(format!("{name}_q{:02}", (q * 100.0).round() as u32));
            }
        }
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            for s in &self.stats {
                row.push(fmt_f64(s.mean[k]));
                row.push(fmt_f64(s.variance[k]));
                for q in &s.quantiles {
                    row.push(fmt_f64(q[k]));
                }
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}
