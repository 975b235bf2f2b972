//! A small arithmetic expression language for metric coefficients.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Variables are `q1`, `q2` (aliases `u`, `v`); constants `pi` and `e`;
//! functions `sin cos tan exp ln sqrt sinh cosh tanh`.

use crate::dual::{Dual2, Scalar};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    /// Byte offset into the source string.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.message, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed scalar field on the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Expr {
            source: src.to_string(),
            root,
        })
    }

    pub fn constant(c: f64) -> Expr {
        Expr {
            source: format!("{c:?}"),
            root: Node::Num(c),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when the expression does not mention any chart variable.
    pub fn is_constant(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(_) => false,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a) && walk(b)
                }
            }
        }
        walk(&self.root)
    }

    /// Whether the expression mentions chart coordinate `axis`.
    pub fn depends_on(&self, axis: usize) -> bool {
        fn walk(n: &Node, axis: usize) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(i) => *i == axis,
                Node::Neg(a) | Node::Call(_, a) => walk(a, axis),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a, axis) || walk(b, axis)
                }
            }
        }
        walk(&self.root, axis)
    }

    pub fn eval<S: Scalar>(&self, q: [S; 2]) -> S {
        eval_node(&self.root, &q)
    }

    pub fn value(&self, q: [f64; 2]) -> f64 {
        self.eval(q)
    }

    /// Value and chart gradient.
    pub fn jet(&self, q: [f64; 2]) -> Dual2 {
        self.eval(Dual2::point(q))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn has_var(n: &Node) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var(_) => true,
        Node::Neg(a) | Node::Call(_, a) => has_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => has_var(a) || has_var(b),
    }
}

fn eval_node<S: Scalar>(n: &Node, q: &[S; 2]) -> S {
    match n {
        Node::Num(c) => S::cst(*c),
        Node::Var(i) => q[*i],
        Node::Neg(a) => -eval_node(a, q),
        Node::Add(a, b) => eval_node(a, q) + eval_node(b, q),
        Node::Sub(a, b) => eval_node(a, q) - eval_node(b, q),
        Node::Mul(a, b) => eval_node(a, q) * eval_node(b, q),
        Node::Div(a, b) => eval_node(a, q) / eval_node(b, q),
        Node::Pow(a, b) => {
            let base = eval_node(a, q);
            match **b {
                Node::Num(c) if c.fract() == 0.0 && c.abs() < 64.0 => base.powi(c as i32),
                Node::Num(c) => base.powf(c),
                _ => (eval_node(b, q) * base.ln()).exp(),
            }
        }
        Node::Call(f, a) => {
            let x = eval_node(a, q);
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Ln => x.ln(),
                Func::Sqrt => x.sqrt(),
                Func::Sinh => x.sinh(),
                Func::Cosh => x.cosh(),
                Func::Tanh => x.tanh(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError {
            offset: self.pos,
            message: msg.to_string(),
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

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == b'+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == b'*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.peek() == Some(b'+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            if !has_var(&exp) {
                let c = eval_node::<f64>(&exp, &[0.0; 2]);
                return Ok(Node::Pow(Box::new(base), Box::new(Node::Num(c))));
            }
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.err("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.name(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Node::Num).map_err(|_| ExprError {
            offset: start,
            message: format!("malformed number '{text}'"),
        })
    }

    fn name(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tan" => Some(Func::Tan),
            "exp" => Some(Func::Exp),
            "ln" | "log" => Some(Func::Ln),
            "sqrt" => Some(Func::Sqrt),
            "sinh" => Some(Func::Sinh),
            "cosh" => Some(Func::Cosh),
            "tanh" => Some(Func::Tanh),
            _ => None,
        };
        if let Some(f) = func {
            if self.peek() != Some(b'(') {
                return Err(self.err(&format!("expected '(' after {name}")));
            }
            self.pos += 1;
            let arg = self.expr()?;
            if self.peek() != Some(b')') {
                return Err(self.err("expected ')'"));
            }
            self.pos += 1;
            return Ok(Node::Call(f, Box::new(arg)));
        }
        match name {
            "q1" | "u" => Ok(Node::Var(0)),
            "q2" | "v" => Ok(Node::Var(1)),
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "e" => Ok(Node::Num(std::f64::consts::E)),
            _ => Err(ExprError {
                offset: start,
                message: format!("unknown name '{name}'"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_power() {
        let e = Expr::parse("1 + 2*3^2 - -4/2").unwrap();
        assert_eq!(e.value([0.0, 0.0]), 1.0 + 18.0 + 2.0);
        let e = Expr::parse("2^3^2").unwrap();
        assert_eq!(e.value([0.0, 0.0]), 512.0);
    }

    #[test]
    fn variables_and_functions() {
        let e = Expr::parse("0.1*cos(2*pi*q1) + sin(v)^2").unwrap();
        let q = [0.2, 0.9];
        let want = 0.1 * (2.0 * std::f64::consts::PI * 0.2).cos() + 0.9f64.sin().powi(2);
        assert!((e.value(q) - want).abs() < 1e-15);
        assert!(!e.is_constant());
        assert!(Expr::parse("exp(1.5e-1)*pi").unwrap().is_constant());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = Expr::parse("cosh(u)^2 * (1 + 0.3*sin(q2))").unwrap();
        let q = [0.4, -1.1];
        let j = e.jet(q);
        let h = 1e-6;
        for i in 0..2 {
            let mut a = q;
            let mut b = q;
            a[i] += h;
            b[i] -= h;
            let fd = (e.value(a) - e.value(b)) / (2.0 * h);
            assert!((j.d[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn error_offsets() {
        let err = Expr::parse("1 + foo(2)").unwrap_err();
        assert_eq!(err.offset, 4);
        let err = Expr::parse("(1 + 2").unwrap_err();
        assert_eq!(err.offset, 6);
        let err = Expr::parse("1 2").unwrap_err();
        assert_eq!(err.offset, 2);
    }
}
