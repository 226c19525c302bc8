use super::expr::{Expr, ExprError, Func, Symbols};

/// Parse `text` against the declared `symbols`.
///
/// Grammar (usual precedence, `^` binds tighter than unary minus):
///
/// ```text
/// expr    := term (("+" | "-") term)*
/// term    := unary (("*" | "/") unary)*
/// unary   := "-" unary | "+" unary | power
/// power   := primary ("^" ["-" | "+"] integer)?
/// primary := number | name | name "(" expr ")" | "(" expr ")"
/// ```
pub fn parse_expr(text: &str, symbols: &Symbols) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        symbols,
    };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(p.error("empty expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error(format!("unexpected `{}`", p.src[p.pos] as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    symbols: &'a Symbols,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(match self.unary()? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let mut sign = 1i64;
        if self.eat(b'-') {
            sign = -1;
        } else {
            self.eat(b'+');
        }
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("exponent must be an integer literal"));
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'.' | b'e' | b'E') {
            return Err(self.error("exponent must be an integer literal"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let n: i64 = digits
            .parse()
            .map_err(|_| self.error("exponent out of range"))?;
        let n = i32::try_from(sign * n).map_err(|_| self.error("exponent out of range"))?;
        Ok(Expr::Pow(Box::new(base), n))
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.name(),
            Some(c) => Err(self.error(format!("unexpected `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && matches!(s[self.pos], b'e' | b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && matches!(s[p], b'+' | b'-') {
                p += 1;
            }
            if p < s.len() && s[p].is_ascii_digit() {
                digits(&mut p);
                self.pos = p;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).unwrap();
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Expr::Num)
            .ok_or(ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })
    }

    fn name(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if self.peek() == Some(b'(') {
            let Some(f) = Func::from_name(name).filter(|f| *f != Func::Sign) else {
                return Err(ExprError::UnknownSymbol {
                    name: name.to_string(),
                    offset: start,
                });
            };
            self.pos += 1;
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Expr::Call(f, Box::new(arg)));
        }
        if let Some(slot) = self.symbols.slot_of(name) {
            return Ok(Expr::Var(slot));
        }
        if self.symbols.has_param(name) {
            return Ok(Expr::Param(name.to_string()));
        }
        if name == "pi" {
            return Ok(Expr::Num(std::f64::consts::PI));
        }
        Err(ExprError::UnknownSymbol {
            name: name.to_string(),
            offset: start,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn syms() -> Symbols {
        Symbols::with_vars(["x1", "x2"]).params(["mu", "omega"])
    }

    fn ev(text: &str, x: &[f64], params: &[(&str, f64)]) -> f64 {
        let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        parse_expr(text, &syms()).unwrap().eval(x, &p).unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2*3", &[0.0, 0.0], &[]), 7.0);
        assert_eq!(ev("-x1^2", &[3.0, 0.0], &[]), -9.0);
        assert_eq!(ev("2^-1", &[0.0, 0.0], &[]), 0.5);
        assert_eq!(ev("8/2/2", &[0.0, 0.0], &[]), 2.0);
        assert_eq!(ev("8-2-2", &[0.0, 0.0], &[]), 4.0);
        assert!((ev("x1 - x1^3/3 - x2", &[1.0, 0.0], &[]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            ev("mu*x1 - omega*x2 - (x1^2+x2^2)*x1", &[1.0, 0.0], &[("mu", 1.0), ("omega", 1.0)]),
            0.0
        );
    }

    #[test]
    fn errors_carry_location() {
        match parse_expr("x1 + * 2", &syms()) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match parse_expr("x1 + y7", &syms()) {
            Err(ExprError::UnknownSymbol { name, offset }) => {
                assert_eq!(name, "y7");
                assert_eq!(offset, 5);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_expr("x1^1.5", &syms()), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("", &syms()), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("(x1", &syms()), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expr("foo(x1)", &syms()), Err(ExprError::UnknownSymbol { .. })));
    }

    #[test]
    fn phi_alias() {
        let s = Symbols::with_vars(["x1", "t"]).alias("phi", 0);
        let e = parse_expr("sin(phi)", &s).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0], &BTreeMap::new()).unwrap(), 0.0);
    }

    #[test]
    fn print_round_trip() {
        let s = syms();
        for text in [
            "x1 - (x2 - 3)",
            "x1/(x2*mu)",
            "-(x1 + x2)^2",
            "(-2)^3*x1",
            "x1*-x2",
            "exp(-x1^2)/sqrt(1 + x2^2)",
            "atan(x2/x1) - ln(abs(x1) + 1)",
            "x1^-2 + -3",
        ] {
            let e = parse_expr(text, &s).unwrap();
            let printed = e.display(&s).to_string();
            let back = parse_expr(&printed, &s).unwrap();
            assert_eq!(e, back, "{text} -> {printed}");
        }
    }
}
