use smallvec::SmallVec;

use super::expr::{EvalError, Expr, ExprError, Func};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(u32),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Powi(i32),
    Call(Func),
}

/// A parameter-free expression flattened to postfix form for fast repeated
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    constant: Option<f64>,
}

impl Program {
    /// Compile a bound expression. Fails if a parameter is still symbolic.
    pub fn compile(e: &Expr) -> Result<Program, ExprError> {
        let mut ops = Vec::new();
        emit(e, &mut ops)?;
        let constant = match ops.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        };
        Ok(Program { ops, constant })
    }

    pub fn constant(&self) -> Option<f64> {
        self.constant
    }

    pub fn is_zero(&self) -> bool {
        self.constant == Some(0.0)
    }

    #[inline]
    pub fn eval(&self, vars: &[f64]) -> Result<f64, EvalError> {
        if let Some(v) = self.constant {
            return Ok(v);
        }
        let mut st: SmallVec<[f64; 16]> = SmallVec::new();
        for op in &self.ops {
            match *op {
                Op::Const(v) => st.push(v),
                Op::Var(s) => st.push(vars[s as usize]),
                Op::Neg => {
                    let a = st.last_mut().unwrap();
                    *a = -*a;
                }
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    let b = st.pop().unwrap();
                    let a = st.last_mut().unwrap();
                    *a = match *op {
                        Op::Add => *a + b,
                        Op::Sub => *a - b,
                        Op::Mul => *a * b,
                        _ => {
                            if b == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            *a / b
                        }
                    };
                }
                Op::Powi(n) => {
                    let a = st.last_mut().unwrap();
                    if *a == 0.0 && n < 0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    *a = a.powi(n);
                }
                Op::Call(f) => {
                    let a = st.last_mut().unwrap();
                    *a = f.apply(*a)?;
                }
            }
        }
        let v = st[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) -> Result<(), ExprError> {
    match e {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Var(s) => ops.push(Op::Var(*s as u32)),
        Expr::Param(p) => return Err(ExprError::UnboundParameter(p.clone())),
        Expr::Neg(a) => {
            emit(a, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            emit(a, ops)?;
            emit(b, ops)?;
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
        }
        Expr::Pow(a, n) => {
            emit(a, ops)?;
            ops.push(Op::Powi(*n));
        }
        Expr::Call(f, a) => {
            emit(a, ops)?;
            ops.push(Op::Call(*f));
        }
    }
    Ok(())
}
