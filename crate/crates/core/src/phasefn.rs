//! Scalar 2 pi-periodic functions of a phase (and optionally time): tables
//! from the reduction, or closed-form expressions.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dynamics::{parse_expr, EvalError, Program, Symbols};
use crate::error::{Error, Result};
use crate::interp::PeriodicSpline;

/// Regularization floor under a square root, so `sqrt(q)` stays
/// differentiable where the quadratic form vanishes.
pub const SQRT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone)]
pub enum PhaseFn {
    Const(f64),
    /// Periodic cubic interpolant of samples on `[0, 2 pi)`.
    Table(PeriodicSpline),
    /// `sqrt(q)` of a tabulated non-negative `q`.
    SqrtTable(PeriodicSpline),
    /// Expression in `phi` and `t`.
    Expr {
        text: String,
        f: Program,
        df: Program,
        uses_t: bool,
    },
}

pub fn phase_symbols() -> Symbols {
    Symbols::with_vars(["phi", "t"])
}

impl PhaseFn {
    pub fn table(values: Vec<f64>) -> PhaseFn {
        PhaseFn::Table(PeriodicSpline::scalar(TAU, values))
    }

    pub fn sqrt_table(squares: Vec<f64>) -> PhaseFn {
        PhaseFn::SqrtTable(PeriodicSpline::scalar(TAU, squares))
    }

    pub fn expr(text: &str) -> Result<PhaseFn> {
        let s = phase_symbols();
        let e = parse_expr(text, &s)?;
        Ok(PhaseFn::Expr {
            text: text.to_string(),
            f: Program::compile(&e)?,
            df: Program::compile(&e.diff(0))?,
            uses_t: e.uses_var(1),
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PhaseFn::Const(v) => *v == 0.0,
            PhaseFn::Table(s) | PhaseFn::SqrtTable(s) => s.samples().iter().all(|v| *v == 0.0),
            PhaseFn::Expr { f, .. } => f.is_zero(),
        }
    }

    pub fn depends_on_time(&self) -> bool {
        matches!(self, PhaseFn::Expr { uses_t: true, .. })
    }

    #[inline]
    pub fn eval(&self, phi: f64, t: f64) -> std::result::Result<f64, EvalError> {
        Ok(match self {
            PhaseFn::Const(v) => *v,
            PhaseFn::Table(s) => s.value(phi),
            PhaseFn::SqrtTable(s) => s.value(phi).max(0.0).sqrt(),
            PhaseFn::Expr { f, .. } => f.eval(&[phi, t])?,
        })
    }

    /// `d/dphi`.
    pub fn deriv(&self, phi: f64, t: f64) -> std::result::Result<f64, EvalError> {
        Ok(match self {
            PhaseFn::Const(_) => 0.0,
            PhaseFn::Table(s) => s.deriv(phi),
            PhaseFn::SqrtTable(s) => {
                let q = s.value(phi).max(0.0);
                let q = if q < SQRT_FLOOR { q + SQRT_FLOOR } else { q };
                s.deriv(phi) / (2.0 * q.sqrt())
            }
            PhaseFn::Expr { df, .. } => df.eval(&[phi, t])?,
        })
    }

    /// `lim_{phi -> 0} |f(phi)| / |phi|` assuming `f(0) = 0`.
    pub fn abs_slope_at_zero(&self) -> std::result::Result<f64, EvalError> {
        Ok(match self {
            PhaseFn::SqrtTable(s) => (s.deriv2(0.0).max(0.0) / 2.0).sqrt(),
            // One-sided slopes, so kinks such as `abs(sin(phi))` are handled.
            PhaseFn::Expr { df, .. } => {
                let h = 1e-9;
                0.5 * (df.eval(&[h, 0.0])?.abs() + df.eval(&[-h, 0.0])?.abs())
            }
            other => other.deriv(0.0, 0.0)?.abs(),
        })
    }

    /// Samples on a uniform grid of `n` phases at `t = 0`.
    pub fn sample(&self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|k| self.eval(TAU * k as f64 / n as f64, 0.0).map_err(Error::from))
            .collect()
    }

    pub fn to_file(&self) -> PhaseFnFile {
        match self {
            PhaseFn::Const(v) => PhaseFnFile::Const(*v),
            PhaseFn::Table(s) => PhaseFnFile::Table(s.samples().to_vec()),
            PhaseFn::SqrtTable(s) => PhaseFnFile::SqrtTable(s.samples().to_vec()),
            PhaseFn::Expr { text, .. } => PhaseFnFile::Expr(text.clone()),
        }
    }

    pub fn from_file(f: &PhaseFnFile) -> Result<PhaseFn> {
        let table_ok = |v: &Vec<f64>| {
            if v.len() < 3 {
                Err(Error::InvalidSpec("phase tables need at least 3 samples".into()))
            } else {
                Ok(())
            }
        };
        Ok(match f {
            PhaseFnFile::Const(v) => PhaseFn::Const(*v),
            PhaseFnFile::Table(v) => {
                table_ok(v)?;
                PhaseFn::table(v.clone())
            }
            PhaseFnFile::SqrtTable(v) => {
                table_ok(v)?;
                PhaseFn::sqrt_table(v.clone())
            }
            PhaseFnFile::Expr(text) => PhaseFn::expr(text)?,
        })
    }
}

/// Serialized form: `{"const": c}`, `{"table": [...]}`, `{"sqrt_table": [...]}`
/// or `{"expr": "..."}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseFnFile {
    Const(f64),
    Table(Vec<f64>),
    SqrtTable(Vec<f64>),
    Expr(String),
}

impl Serialize for PhaseFn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PhaseFn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = PhaseFnFile::deserialize(d)?;
        PhaseFn::from_file(&f).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_and_expr_agree() {
        let n = 512;
        let t = PhaseFn::table((0..n).map(|k| (TAU * k as f64 / n as f64).sin()).collect());
        let e = PhaseFn::expr("sin(phi)").unwrap();
        for &x in &[0.0, 0.4, -1.2, 3.0] {
            assert!((t.eval(x, 0.0).unwrap() - e.eval(x, 0.0).unwrap()).abs() < 1e-9);
            assert!((t.deriv(x, 0.0).unwrap() - e.deriv(x, 0.0).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn sqrt_slope_limit() {
        // q = sin^2 -> sqrt(q) = |sin|, slope 1 at 0
        let n = 1024;
        let q = PhaseFn::sqrt_table((0..n).map(|k| (TAU * k as f64 / n as f64).sin().powi(2)).collect());
        assert!((q.abs_slope_at_zero().unwrap() - 1.0).abs() < 1e-5);
        assert!(q.deriv(0.0, 0.0).unwrap().is_finite());
    }

    #[test]
    fn serde_forms() {
        let f: PhaseFn = serde_json::from_str(r#"{"expr": "2*sin(phi)"}"#).unwrap();
        assert_eq!(f.eval(std::f64::consts::FRAC_PI_2, 0.0).unwrap(), 2.0);
        let g: PhaseFn = serde_json::from_str(r#"{"const": 1.5}"#).unwrap();
        assert_eq!(serde_json::to_string(&g).unwrap(), r#"{"const":1.5}"#);
        assert!(serde_json::from_str::<PhaseFn>(r#"{"tabel": [1,2,3]}"#).is_err());
    }
}
