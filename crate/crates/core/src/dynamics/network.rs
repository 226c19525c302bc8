use smallvec::SmallVec;

use super::expr::{EvalError, Expr};
use super::model::{compile_all, coupling_symbols, Model, ModelSpec};
use super::parse::parse_expr;
use super::program::Program;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Graph {
    Line,
    Ring,
    Complete,
    /// Row-major N x N weights.
    Custom(Vec<f64>),
}

impl Graph {
    pub fn from_name(name: &str) -> Option<Graph> {
        Some(match name {
            "line" | "path" => Graph::Line,
            "ring" | "cycle" => Graph::Ring,
            "complete" => Graph::Complete,
            _ => return None,
        })
    }

    pub fn weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![0.0; n * n];
        let mut link = |i: usize, j: usize| {
            if i != j {
                w[i * n + j] = 1.0;
                w[j * n + i] = 1.0;
            }
        };
        match self {
            Graph::Line => (1..n).for_each(|i| link(i - 1, i)),
            Graph::Ring => {
                (1..n).for_each(|i| link(i - 1, i));
                if n > 2 {
                    link(n - 1, 0);
                }
            }
            Graph::Complete => {
                for i in 0..n {
                    for j in i + 1..n {
                        link(i, j);
                    }
                }
            }
            Graph::Custom(c) => return c.clone(),
        }
        w
    }
}

/// Identical oscillators coupled through `H(x_j, x_i)` and `C(x_j, x_i)`.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub n: usize,
    /// Row-major `c_ij`.
    pub weights: Vec<f64>,
    pub model: ModelSpec,
    pub coupling_drift: Vec<Expr>,
    pub coupling_diffusion: Vec<Vec<Expr>>,
    pub epsilon: f64,
    pub delta: f64,
    pub x0: Option<Vec<Vec<f64>>>,
}

impl NetworkSpec {
    /// Parse coupling fields; `coupling_diffusion = None` means `C = 0`.
    pub fn parse(
        model: ModelSpec,
        weights: Vec<f64>,
        coupling_drift: &[impl AsRef<str>],
        coupling_diffusion: Option<&[Vec<String>]>,
        epsilon: f64,
        delta: f64,
    ) -> Result<NetworkSpec> {
        let m = model.dim;
        let n = (weights.len() as f64).sqrt().round() as usize;
        let syms = coupling_symbols(m, model.params.keys());
        if coupling_drift.len() != m {
            return Err(Error::InvalidSpec(format!(
                "coupling_drift has {} entries, expected {m}",
                coupling_drift.len()
            )));
        }
        let h = coupling_drift
            .iter()
            .map(|t| parse_expr(t.as_ref(), &syms))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let c = match coupling_diffusion {
            None => vec![vec![Expr::zero(); m]; m],
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::InvalidSpec(format!(
                        "coupling_diffusion must be {m}x{m}"
                    )));
                }
                rows.iter()
                    .map(|r| r.iter().map(|t| parse_expr(t, &syms)).collect())
                    .collect::<std::result::Result<Vec<Vec<_>>, _>>()?
            }
        };
        let spec = NetworkSpec {
            n,
            weights,
            model,
            coupling_drift: h,
            coupling_diffusion: c,
            epsilon,
            delta,
            x0: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 || self.weights.len() != n * n {
            return Err(Error::InvalidSpec("weights must be an N x N matrix".into()));
        }
        for i in 0..n {
            if self.weights[i * n + i] != 0.0 {
                return Err(Error::InvalidSpec(format!("weights[{i}][{i}] must be 0")));
            }
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidSpec("weights must be finite and non-negative".into()));
        }
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be finite and >= 0")));
            }
        }
        let h_zero = self.coupling_drift.iter().all(|e| {
            e.bind(&self.model.params)
                .map(|b| b.is_zero())
                .unwrap_or(false)
        });
        if (self.epsilon == 0.0 || h_zero) && self.delta != 0.0 {
            return Err(Error::InvalidSpec(
                "delta must be 0 when epsilon = 0 or the coupling drift vanishes".into(),
            ));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n || x0.iter().any(|x| x.len() != self.model.dim) {
                return Err(Error::InvalidSpec(format!(
                    "x0 must have N = {n} rows of dim {}",
                    self.model.dim
                )));
            }
        }
        self.model.validate()
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry().is_none()
    }

    /// First `(i, j)` with `c_ij != c_ji`.
    pub fn asymmetry(&self) -> Option<(usize, usize)> {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                if self.weights[i * n + j] != self.weights[j * n + i] {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn coupling_drift_text(&self) -> Vec<String> {
        let s = coupling_symbols(self.model.dim, self.model.params.keys());
        self.coupling_drift
            .iter()
            .map(|e| e.display(&s).to_string())
            .collect()
    }

    pub fn coupling_diffusion_text(&self) -> Vec<Vec<String>> {
        let s = coupling_symbols(self.model.dim, self.model.params.keys());
        self.coupling_diffusion
            .iter()
            .map(|r| r.iter().map(|e| e.display(&s).to_string()).collect())
            .collect()
    }

    pub fn compile(&self) -> Result<Network> {
        self.validate()?;
        let p = &self.model.params;
        let h: Vec<Expr> = self
            .coupling_drift
            .iter()
            .map(|e| e.bind(p))
            .collect::<std::result::Result<_, _>>()?;
        let c: Vec<Expr> = self
            .coupling_diffusion
            .iter()
            .flatten()
            .map(|e| e.bind(p))
            .collect::<std::result::Result<_, _>>()?;
        let h = compile_all(&h)?;
        let c = compile_all(&c)?;
        Ok(Network {
            n: self.n,
            weights: self.weights.clone(),
            model: self.model.compile()?,
            h_zero: h.iter().all(Program::is_zero),
            c_zero: c.iter().all(Program::is_zero),
            h,
            c,
            epsilon: self.epsilon,
            delta: self.delta,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub n: usize,
    pub weights: Vec<f64>,
    pub model: Model,
    h: Vec<Program>,
    c: Vec<Program>,
    h_zero: bool,
    c_zero: bool,
    pub epsilon: f64,
    pub delta: f64,
}

impl Network {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn coupling_drift_is_zero(&self) -> bool {
        self.h_zero
    }

    pub fn coupling_diffusion_is_zero(&self) -> bool {
        self.c_zero
    }

    fn pair(xj: &[f64], xi: &[f64]) -> SmallVec<[f64; 8]> {
        let mut v: SmallVec<[f64; 8]> = SmallVec::from_slice(xj);
        v.extend_from_slice(xi);
        v
    }

    /// `H(x_j, x_i)`.
    pub fn coupling_drift_into(
        &self,
        xj: &[f64],
        xi: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        let v = Self::pair(xj, xi);
        for (o, p) in out.iter_mut().zip(&self.h) {
            *o = p.eval(&v)?;
        }
        Ok(())
    }

    /// `C(x_j, x_i)`, row-major.
    pub fn coupling_diffusion_into(
        &self,
        xj: &[f64],
        xi: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        let v = Self::pair(xj, xi);
        for (o, p) in out.iter_mut().zip(&self.c) {
            *o = p.eval(&v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn scalar_model() -> ModelSpec {
        ModelSpec::parse(1, &["1"], None, BTreeMap::new(), 0.0).unwrap()
    }

    #[test]
    fn graphs() {
        assert_eq!(
            Graph::Line.weights(3),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(
            Graph::Complete.weights(3),
            vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]
        );
        let r = Graph::Ring.weights(4);
        assert_eq!(r[3], 1.0);
        assert_eq!(r[12], 1.0);
    }

    #[test]
    fn delta_requires_coupling() {
        let w = Graph::Line.weights(2);
        let r = NetworkSpec::parse(scalar_model(), w.clone(), &["0"], None, 1.0, 0.1);
        assert!(matches!(r, Err(Error::InvalidSpec(_))));
        let r = NetworkSpec::parse(scalar_model(), w.clone(), &["sin(phij - phii)"], None, 0.0, 0.1);
        assert!(matches!(r, Err(Error::InvalidSpec(_))));
        assert!(NetworkSpec::parse(scalar_model(), w, &["sin(phij - phii)"], None, 1.0, 0.1).is_ok());
    }

    #[test]
    fn directed_weights_flagged() {
        let w = vec![0.0, 1.0, 0.0, 0.0];
        let net = NetworkSpec::parse(scalar_model(), w, &["phij - phii"], None, 1.0, 0.0).unwrap();
        assert_eq!(net.asymmetry(), Some((0, 1)));
    }

    #[test]
    fn rejects_bad_weights() {
        let w = vec![1.0, 1.0, 1.0, 0.0];
        assert!(NetworkSpec::parse(scalar_model(), w, &["0"], None, 0.0, 0.0).is_err());
        let w = vec![0.0, -1.0, -1.0, 0.0];
        assert!(NetworkSpec::parse(scalar_model(), w, &["0"], None, 0.0, 0.0).is_err());
    }

    #[test]
    fn coupling_slots() {
        let net = NetworkSpec::parse(
            scalar_model(),
            Graph::Line.weights(2),
            &["phij - 2*phii"],
            None,
            1.0,
            0.0,
        )
        .unwrap()
        .compile()
        .unwrap();
        let mut out = [0.0];
        net.coupling_drift_into(&[3.0], &[1.0], &mut out).unwrap();
        assert_eq!(out[0], 1.0);
    }
}
