use std::collections::BTreeMap;

use smallvec::SmallVec;

use super::expr::{EvalError, Expr, Symbols};
use super::parse::parse_expr;
use super::program::Program;
use crate::error::{Error, Result};

/// Symbol table for intrinsic fields: `x1..xm`, then `t`; `phi` aliases `x1`
/// when `m = 1`.
pub fn model_symbols<'a>(dim: usize, params: impl IntoIterator<Item = &'a String>) -> Symbols {
    let mut s = Symbols::with_vars((1..=dim).map(|k| format!("x{k}"))).var("t");
    if dim == 1 {
        s = s.alias("phi", 0);
    }
    s.params(params.into_iter().cloned())
}

/// Symbol table for coupling fields `H(x_j, x_i)`, `C(x_j, x_i)`: sender
/// `xj1..xjm` in slots `0..m`, receiver `xi1..xim` in `m..2m`.
pub fn coupling_symbols<'a>(dim: usize, params: impl IntoIterator<Item = &'a String>) -> Symbols {
    let mut s = Symbols::with_vars(
        (1..=dim)
            .map(|k| format!("xj{k}"))
            .chain((1..=dim).map(|k| format!("xi{k}"))),
    );
    if dim == 1 {
        s = s.alias("phij", 0).alias("phii", 1);
    }
    s.params(params.into_iter().cloned())
}

/// Intrinsic oscillator `dx = F(x) dt + sigma K(x, t) dW`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub drift: Vec<Expr>,
    pub diffusion: Vec<Vec<Expr>>,
    pub params: BTreeMap<String, f64>,
    pub sigma: f64,
}

impl ModelSpec {
    /// Parse textual fields. `diffusion = None` means the identity.
    pub fn parse(
        dim: usize,
        drift: &[impl AsRef<str>],
        diffusion: Option<&[Vec<String>]>,
        params: BTreeMap<String, f64>,
        sigma: f64,
    ) -> Result<ModelSpec> {
        if dim == 0 {
            return Err(Error::InvalidSpec("dim must be positive".into()));
        }
        let syms = model_symbols(dim, params.keys());
        if drift.len() != dim {
            return Err(Error::InvalidSpec(format!(
                "drift has {} entries, expected dim = {dim}",
                drift.len()
            )));
        }
        let drift = drift
            .iter()
            .map(|t| parse_expr(t.as_ref(), &syms))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let diffusion = match diffusion {
            None => identity(dim),
            Some(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidSpec(format!("diffusion must be {dim}x{dim}")));
                }
                rows.iter()
                    .map(|r| r.iter().map(|t| parse_expr(t, &syms)).collect())
                    .collect::<std::result::Result<Vec<Vec<_>>, _>>()?
            }
        };
        let spec = ModelSpec {
            dim,
            drift,
            diffusion,
            params,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn symbols(&self) -> Symbols {
        model_symbols(self.dim, self.params.keys())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim;
        if self.drift.len() != m {
            return Err(Error::InvalidSpec("drift length differs from dim".into()));
        }
        if self.diffusion.len() != m || self.diffusion.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidSpec(format!("diffusion must be {m}x{m}")));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidSpec("sigma must be finite and >= 0".into()));
        }
        if self.drift.iter().any(|e| e.uses_var(m)) {
            return Err(Error::InvalidSpec(
                "drift may not depend on t (autonomous oscillators only)".into(),
            ));
        }
        for e in self.drift.iter().chain(self.diffusion.iter().flatten()) {
            if e.max_slot().is_some_and(|s| s > m) {
                return Err(Error::InvalidSpec("expression refers to an undeclared slot".into()));
            }
        }
        Ok(())
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Result<ModelSpec> {
        match self.params.get_mut(name) {
            Some(v) => *v = value,
            None if name == "sigma" => self.sigma = value,
            None => return Err(Error::InvalidSpec(format!("model has no parameter `{name}`"))),
        }
        Ok(self)
    }

    pub fn drift_text(&self) -> Vec<String> {
        let s = self.symbols();
        self.drift.iter().map(|e| e.display(&s).to_string()).collect()
    }

    pub fn diffusion_text(&self) -> Vec<Vec<String>> {
        let s = self.symbols();
        self.diffusion
            .iter()
            .map(|r| r.iter().map(|e| e.display(&s).to_string()).collect())
            .collect()
    }

    /// Bind parameters, differentiate once and twice, and flatten everything
    /// to programs.
    pub fn compile(&self) -> Result<Model> {
        self.validate()?;
        let m = self.dim;
        let drift: Vec<Expr> = self
            .drift
            .iter()
            .map(|e| e.bind(&self.params))
            .collect::<std::result::Result<_, _>>()?;
        let mut jac_e = Vec::with_capacity(m * m);
        for f in &drift {
            for j in 0..m {
                jac_e.push(f.diff(j));
            }
        }
        let mut hess = Vec::with_capacity(m * m * m);
        for k in 0..m {
            for a in 0..m {
                for b in 0..m {
                    // d2F_k / dx_a dx_b; reuse the symmetric partner.
                    let e = if b < a {
                        None
                    } else {
                        Some(jac_e[k * m + a].diff(b))
                    };
                    hess.push(e);
                }
            }
        }
        let mut hess_p = Vec::with_capacity(m * m * m);
        for k in 0..m {
            for a in 0..m {
                for b in 0..m {
                    let idx = if b < a { (k * m + b) * m + a } else { (k * m + a) * m + b };
                    hess_p.push(Program::compile(hess[idx].as_ref().unwrap())?);
                }
            }
        }
        let diffusion: Vec<Expr> = self
            .diffusion
            .iter()
            .flatten()
            .map(|e| e.bind(&self.params))
            .collect::<std::result::Result<_, _>>()?;
        let diffusion_uses_t = diffusion.iter().any(|e| e.uses_var(m));
        let diffusion_identity = diffusion.iter().enumerate().all(|(k, e)| {
            let want = if k / m == k % m { 1.0 } else { 0.0 };
            matches!(e, Expr::Num(v) if *v == want)
        });
        Ok(Model {
            dim: m,
            drift: compile_all(&drift)?,
            jac: compile_all(&jac_e)?,
            hess: hess_p,
            diffusion: compile_all(&diffusion)?,
            sigma: self.sigma,
            diffusion_uses_t,
            diffusion_identity,
        })
    }
}

pub(crate) fn identity(m: usize) -> Vec<Vec<Expr>> {
    (0..m)
        .map(|i| (0..m).map(|j| Expr::Num(if i == j { 1.0 } else { 0.0 })).collect())
        .collect()
}

pub(crate) fn compile_all(es: &[Expr]) -> Result<Vec<Program>> {
    es.iter().map(|e| Program::compile(e).map_err(Error::from)).collect()
}

/// Compiled intrinsic model. All matrices are flat row-major.
#[derive(Debug, Clone)]
pub struct Model {
    dim: usize,
    drift: Vec<Program>,
    jac: Vec<Program>,
    hess: Vec<Program>,
    diffusion: Vec<Program>,
    sigma: f64,
    diffusion_uses_t: bool,
    diffusion_identity: bool,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn diffusion_is_identity(&self) -> bool {
        self.diffusion_identity
    }

    pub fn diffusion_uses_t(&self) -> bool {
        self.diffusion_uses_t
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> std::result::Result<(), EvalError> {
        for (o, p) in out.iter_mut().zip(&self.drift) {
            *o = p.eval(x)?;
        }
        Ok(())
    }

    pub fn drift(&self, x: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out)?;
        Ok(out)
    }

    /// `out[i*m + j] = dF_i/dx_j`.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) -> std::result::Result<(), EvalError> {
        for (o, p) in out.iter_mut().zip(&self.jac) {
            *o = p.eval(x)?;
        }
        Ok(())
    }

    pub fn jacobian(&self, x: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut out)?;
        Ok(out)
    }

    /// Second partials stacked per component: `out[(k*m + a)*m + b] =
    /// d2F_k/dx_a dx_b`.
    pub fn hessians_into(&self, x: &[f64], out: &mut [f64]) -> std::result::Result<(), EvalError> {
        for (o, p) in out.iter_mut().zip(&self.hess) {
            *o = p.eval(x)?;
        }
        Ok(())
    }

    /// The m x m^2 block matrix `[Hess F_1 | ... | Hess F_m]`, row-major.
    pub fn hessian_field(&self, x: &[f64]) -> std::result::Result<Vec<f64>, EvalError> {
        let m = self.dim;
        let mut blocks = vec![0.0; m * m * m];
        self.hessians_into(x, &mut blocks)?;
        let mut out = vec![0.0; m * m * m];
        for k in 0..m {
            for a in 0..m {
                for b in 0..m {
                    out[a * m * m + k * m + b] = blocks[(k * m + a) * m + b];
                }
            }
        }
        Ok(out)
    }

    /// `K(x, t)` row-major.
    pub fn diffusion_into(
        &self,
        x: &[f64],
        t: f64,
        out: &mut [f64],
    ) -> std::result::Result<(), EvalError> {
        let mut vars: SmallVec<[f64; 8]> = SmallVec::from_slice(x);
        vars.push(t);
        for (o, p) in out.iter_mut().zip(&self.diffusion) {
            *o = p.eval(&vars)?;
        }
        Ok(())
    }

    pub fn diffusion(&self, x: &[f64], t: f64) -> std::result::Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.diffusion_into(x, t, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vdp() -> Model {
        ModelSpec::parse(2, &["x1 - x1^3/3 - x2", "x1"], None, BTreeMap::new(), 0.0)
            .unwrap()
            .compile()
            .unwrap()
    }

    #[test]
    fn jacobian_at_origin() {
        assert_eq!(vdp().jacobian(&[0.0, 0.0]).unwrap(), vec![1.0, -1.0, 1.0, 0.0]);
    }

    #[test]
    fn drift_rejects_time() {
        let r = ModelSpec::parse(1, &["t*x1"], None, BTreeMap::new(), 0.0);
        assert!(matches!(r, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn diffusion_may_use_time() {
        let d = vec![vec!["sin(t)".to_string()]];
        let m = ModelSpec::parse(1, &["-x1"], Some(&d), BTreeMap::new(), 1.0)
            .unwrap()
            .compile()
            .unwrap();
        assert!(m.diffusion_uses_t());
        assert!((m.diffusion(&[0.3], 0.5).unwrap()[0] - 0.5f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        assert!(ModelSpec::parse(2, &["x1"], None, BTreeMap::new(), 0.0).is_err());
        let d = vec![vec!["1".to_string()]];
        assert!(ModelSpec::parse(2, &["x1", "x2"], Some(&d), BTreeMap::new(), 0.0).is_err());
        assert!(ModelSpec::parse(1, &["x1"], None, BTreeMap::new(), -1.0).is_err());
    }

    #[test]
    fn hessian_layout() {
        let mut p = BTreeMap::new();
        p.insert("mu".to_string(), 1.0);
        p.insert("omega".to_string(), 1.0);
        let m = ModelSpec::parse(
            2,
            &["mu*x1 - omega*x2 - (x1^2+x2^2)*x1", "omega*x1 + mu*x2 - (x1^2+x2^2)*x2"],
            None,
            p,
            0.0,
        )
        .unwrap()
        .compile()
        .unwrap();
        let h = m.hessian_field(&[1.0, 0.0]).unwrap();
        // rows a, columns k*m + b
        assert_eq!([h[0], h[1], h[4], h[5]], [-6.0, 0.0, 0.0, -2.0]);
    }
}
