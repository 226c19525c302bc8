//! Expression trees for drift, diffusion and coupling fields.
//!
//! Variables are resolved to slots at parse time; parameters stay symbolic
//! until [`Expr::bind`] so one parsed model can be re-bound for sweeps.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown symbol `{name}` at byte {offset}")]
    UnknownSymbol { name: String, offset: usize },

    #[error("unbound parameter `{0}`")]
    UnboundParameter(String),

    #[error("expression refers to `{0}`, which is not allowed here")]
    ForbiddenSymbol(String),

    #[error("evaluation error: {0}")]
    Eval(EvalError),
}

impl ExprError {
    pub fn is_eval(&self) -> bool {
        matches!(self, ExprError::Eval(_))
    }
}

impl From<EvalError> for ExprError {
    fn from(e: EvalError) -> Self {
        ExprError::Eval(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of a non-positive number")]
    LogDomain,
    #[error("square root of a negative number")]
    SqrtDomain,
    #[error("non-finite result")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Atan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Atan => "atan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "atan" | "arctan" => Func::Atan,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    pub fn apply(self, x: f64) -> Result<f64, EvalError> {
        let y = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Atan => x.atan(),
            Func::Exp => x.exp(),
            Func::Ln => {
                if x <= 0.0 {
                    return Err(EvalError::LogDomain);
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(EvalError::SqrtDomain);
                }
                x.sqrt()
            }
            Func::Abs => x.abs(),
            Func::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        if y.is_finite() {
            Ok(y)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

/// Declared names an expression may refer to.
///
/// Variables map to evaluation slots; aliases are extra spellings of a slot
/// (`phi` for `x1` in scalar models).
#[derive(Debug, Clone, Default)]
pub struct Symbols {
    vars: Vec<String>,
    aliases: Vec<(String, usize)>,
    params: Vec<String>,
}

impl Symbols {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vars<I, S>(vars: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Symbols {
            vars: vars.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn var(mut self, name: impl Into<String>) -> Self {
        self.vars.push(name.into());
        self
    }

    pub fn alias(mut self, name: impl Into<String>, slot: usize) -> Self {
        self.aliases.push((name.into(), slot));
        self
    }

    pub fn params<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.params.extend(names.into_iter().map(Into::into));
        self
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn var_name(&self, slot: usize) -> &str {
        &self.vars[slot]
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.vars
            .iter()
            .position(|v| v == name)
            .or_else(|| self.aliases.iter().find(|(a, _)| a == name).map(|(_, s)| *s))
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.iter().any(|p| p == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 1.0)
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
            (a, b) if a.is_zero() => b,
            (a, b) if b.is_zero() => a,
            (a, Expr::Neg(b)) => Expr::Sub(Box::new(a), b),
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => Expr::neg(b),
            (a, Expr::Neg(b)) => Expr::Add(Box::new(a), b),
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
            (a, b) if a.is_zero() || b.is_zero() => Expr::zero(),
            (a, b) if a.is_one() => b,
            (a, b) if b.is_one() => a,
            (Expr::Num(v), b) if v == -1.0 => Expr::neg(b),
            (a, Expr::Num(v)) if v == -1.0 => Expr::neg(a),
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Num(x), Expr::Num(y)) if y != 0.0 && (x / y).is_finite() => Expr::Num(x / y),
            (a, b) if a.is_zero() && !b.is_zero() => Expr::zero(),
            (a, b) if b.is_one() => a,
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        match (a, n) {
            (_, 0) => Expr::Num(1.0),
            (a, 1) => a,
            (Expr::Num(x), n) if x.powi(n).is_finite() && (x != 0.0 || n > 0) => Expr::Num(x.powi(n)),
            (a, n) => Expr::Pow(Box::new(a), n),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Expr::Num(x) = a {
            if let Ok(y) = f.apply(x) {
                return Expr::Num(y);
            }
        }
        Expr::Call(f, Box::new(a))
    }

    /// Exact partial derivative with respect to variable `slot`.
    pub fn diff(&self, slot: usize) -> Expr {
        match self {
            Expr::Num(_) | Expr::Param(_) => Expr::zero(),
            Expr::Var(s) => Expr::Num(if *s == slot { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.diff(slot)),
            Expr::Add(a, b) => Expr::add(a.diff(slot), b.diff(slot)),
            Expr::Sub(a, b) => Expr::sub(a.diff(slot), b.diff(slot)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(slot), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(slot)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(slot);
                let db = b.diff(slot);
                let first = Expr::div(da, (**b).clone());
                if db.is_zero() {
                    first
                } else {
                    Expr::sub(
                        first,
                        Expr::div(Expr::mul((**a).clone(), db), Expr::pow((**b).clone(), 2)),
                    )
                }
            }
            Expr::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::Num(*n as f64), Expr::pow((**a).clone(), n - 1)),
                a.diff(slot),
            ),
            Expr::Call(f, a) => {
                let da = a.diff(slot);
                if da.is_zero() {
                    return Expr::zero();
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, inner),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, inner)),
                    Func::Atan => Expr::div(
                        Expr::Num(1.0),
                        Expr::add(Expr::Num(1.0), Expr::pow(inner, 2)),
                    ),
                    Func::Exp => Expr::call(Func::Exp, inner),
                    Func::Ln => Expr::div(Expr::Num(1.0), inner),
                    Func::Sqrt => Expr::div(
                        Expr::Num(1.0),
                        Expr::mul(Expr::Num(2.0), Expr::call(Func::Sqrt, inner)),
                    ),
                    Func::Abs => Expr::call(Func::Sign, inner),
                    Func::Sign => return Expr::zero(),
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Replace parameters by their values and fold constants.
    pub fn bind(&self, params: &BTreeMap<String, f64>) -> Result<Expr, ExprError> {
        Ok(match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(s) => Expr::Var(*s),
            Expr::Param(p) => match params.get(p) {
                Some(v) => Expr::Num(*v),
                None => return Err(ExprError::UnboundParameter(p.clone())),
            },
            Expr::Neg(a) => Expr::neg(a.bind(params)?),
            Expr::Add(a, b) => Expr::add(a.bind(params)?, b.bind(params)?),
            Expr::Sub(a, b) => Expr::sub(a.bind(params)?, b.bind(params)?),
            Expr::Mul(a, b) => Expr::mul(a.bind(params)?, b.bind(params)?),
            Expr::Div(a, b) => Expr::div(a.bind(params)?, b.bind(params)?),
            Expr::Pow(a, n) => Expr::pow(a.bind(params)?, *n),
            Expr::Call(f, a) => Expr::call(*f, a.bind(params)?),
        })
    }

    /// Tree-walking evaluation. Hot loops use [`crate::dynamics::Program`].
    pub fn eval(&self, vars: &[f64], params: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(s) => vars[*s],
            Expr::Param(p) => *params
                .get(p)
                .ok_or_else(|| ExprError::UnboundParameter(p.clone()))?,
            Expr::Neg(a) => -a.eval(vars, params)?,
            Expr::Add(a, b) => a.eval(vars, params)? + b.eval(vars, params)?,
            Expr::Sub(a, b) => a.eval(vars, params)? - b.eval(vars, params)?,
            Expr::Mul(a, b) => a.eval(vars, params)? * b.eval(vars, params)?,
            Expr::Div(a, b) => {
                let d = b.eval(vars, params)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero.into());
                }
                a.eval(vars, params)? / d
            }
            Expr::Pow(a, n) => {
                let base = a.eval(vars, params)?;
                if base == 0.0 && *n < 0 {
                    return Err(EvalError::DivisionByZero.into());
                }
                base.powi(*n)
            }
            Expr::Call(f, a) => f.apply(a.eval(vars, params)?)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite.into())
        }
    }

    pub fn uses_var(&self, slot: usize) -> bool {
        match self {
            Expr::Num(_) | Expr::Param(_) => false,
            Expr::Var(s) => *s == slot,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.uses_var(slot),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.uses_var(slot) || b.uses_var(slot)
            }
        }
    }

    pub fn max_slot(&self) -> Option<usize> {
        match self {
            Expr::Num(_) | Expr::Param(_) => None,
            Expr::Var(s) => Some(*s),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_slot(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_slot().max(b.max_slot())
            }
        }
    }

    pub fn display<'a>(&'a self, symbols: &'a Symbols) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, symbols }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    symbols: &'a Symbols,
}

impl ExprDisplay<'_> {
    fn write(&self, e: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = e.precedence();
        let paren = prec < min_prec;
        if paren {
            f.write_str("(")?;
        }
        match e {
            Expr::Num(v) => write!(f, "{v}")?,
            Expr::Var(s) => f.write_str(self.symbols.var_name(*s))?,
            Expr::Param(p) => f.write_str(p)?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                self.write(a, 4, f)?;
            }
            Expr::Add(a, b) => {
                self.write(a, 1, f)?;
                f.write_str(" + ")?;
                self.write(b, 2, f)?;
            }
            Expr::Sub(a, b) => {
                self.write(a, 1, f)?;
                f.write_str(" - ")?;
                self.write(b, 2, f)?;
            }
            Expr::Mul(a, b) => {
                self.write(a, 2, f)?;
                f.write_str("*")?;
                self.write(b, 3, f)?;
            }
            Expr::Div(a, b) => {
                self.write(a, 2, f)?;
                f.write_str("/")?;
                self.write(b, 4, f)?;
            }
            Expr::Pow(a, n) => {
                self.write(a, 5, f)?;
                write!(f, "^{n}")?;
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, 0, f)?;
                f.write_str(")")?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, 0, f)
    }
}
