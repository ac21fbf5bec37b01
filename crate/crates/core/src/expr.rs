//! Closed-form scalar expressions such as `1 + x^2` or `-sin(pi*x)`.
//!
//! Used for source terms, boundary and initial targets, equation-parameter
//! fields and analytic reference solutions. Expressions evaluate at any
//! differentiation level, so they can sit inside a differential operator.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ad::TensorOps;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Abs,
    Sign,
    Floor,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "sigmoid" => Func::Sigmoid,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            "floor" => Func::Floor,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Sigmoid => "sigmoid",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Floor => "floor",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Ln => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Tanh => v.tanh(),
            Func::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Func::Abs => v.abs(),
            Func::Sign => {
                if v == 0.0 {
                    0.0
                } else {
                    v.signum()
                }
            }
            Func::Floor => v.floor(),
        }
    }

    /// Non-smooth functions may only be applied to constants.
    fn smooth(self) -> bool {
        !matches!(self, Func::Abs | Func::Sign | Func::Floor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Var(String),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// Parsed expression; keeps its source text for display and serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected `{}` in `{src}`",
                p.tokens[p.pos]
            )));
        }
        Ok(Expr {
            source: src.trim().to_string(),
            root,
        })
    }

    pub fn constant(v: f64) -> Expr {
        Expr {
            source: format!("{v:?}"),
            root: Node::Num(v),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Free variable names (excluding the constants `pi` and `e`).
    pub fn variables(&self) -> BTreeSet<String> {
        fn walk(n: &Node, out: &mut BTreeSet<String>) {
            match n {
                Node::Num(_) => {}
                Node::Var(v) => {
                    out.insert(v.clone());
                }
                Node::Neg(a) | Node::Call(_, a) => walk(a, out),
                Node::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    /// Evaluates at a point. `vars` resolves variable names.
    pub fn eval_f64(&self, vars: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        fn go(n: &Node, vars: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
            Ok(match n {
                Node::Num(v) => *v,
                Node::Var(name) => vars(name).ok_or_else(|| Error::MissingCoordinate(name.clone()))?,
                Node::Neg(a) => -go(a, vars)?,
                Node::Bin(op, a, b) => {
                    let (a, b) = (go(a, vars)?, go(b, vars)?);
                    match op {
                        BinOp::Add => a + b,
                        BinOp::Sub => a - b,
                        BinOp::Mul => a * b,
                        BinOp::Div => a / b,
                        BinOp::Pow => a.powf(b),
                    }
                }
                Node::Call(f, a) => f.apply(go(a, vars)?),
            })
        }
        go(&self.root, vars)
    }

    /// Evaluates at any differentiation level. Pure constants come back with
    /// rank 0 and broadcast against the batch.
    pub fn eval<T: TensorOps>(&self, vars: &dyn Fn(&str) -> Option<T>) -> Result<T> {
        fn go<T: TensorOps>(n: &Node, vars: &dyn Fn(&str) -> Option<T>) -> Result<T> {
            Ok(match n {
                Node::Num(v) => T::constant(Tensor::scalar(*v)),
                Node::Var(name) => vars(name).ok_or_else(|| Error::MissingCoordinate(name.clone()))?,
                Node::Neg(a) => go(a, vars)?.neg(),
                Node::Bin(BinOp::Pow, a, b) => {
                    let base = go(a, vars)?;
                    match const_value(b) {
                        Some(p) => base.powf(p),
                        None => go(b, vars)?.mul(&base.ln()).exp(),
                    }
                }
                Node::Bin(op, a, b) => {
                    let (a, b) = (go(a, vars)?, go(b, vars)?);
                    match op {
                        BinOp::Add => a.add(&b),
                        BinOp::Sub => a.sub(&b),
                        BinOp::Mul => a.mul(&b),
                        BinOp::Div => a.div(&b),
                        BinOp::Pow => unreachable!(),
                    }
                }
                Node::Call(f, a) => {
                    let a = go(a, vars)?;
                    match f {
                        Func::Sin => a.sin(),
                        Func::Cos => a.cos(),
                        Func::Exp => a.exp(),
                        Func::Ln => a.ln(),
                        Func::Sqrt => a.sqrt(),
                        Func::Tanh => a.tanh(),
                        Func::Sigmoid => a.sigmoid(),
                        f if !f.smooth() => {
                            if !a.is_constant() {
                                return Err(Error::NotDifferentiable(format!("{}()", f.name())));
                            }
                            T::constant(a.value().map(|v| f.apply(v)))
                        }
                        _ => unreachable!(),
                    }
                }
            })
        }
        go(&self.root, vars)
    }
}

fn const_value(n: &Node) -> Option<f64> {
    match n {
        Node::Num(v) => Some(*v),
        Node::Neg(a) => const_value(a).map(|v| -v),
        Node::Bin(op, a, b) => {
            let (a, b) = (const_value(a)?, const_value(b)?);
            Some(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            })
        }
        Node::Call(f, a) => const_value(a).map(|v| f.apply(v)),
        Node::Var(_) => None,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Expr> {
        Expr::parse(s)
    }
}

impl TryFrom<String> for Expr {
    type Error = Error;
    fn try_from(s: String) -> Result<Expr> {
        Expr::parse(&s)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.source
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Sym(char),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => f.write_str(s),
            Token::Sym(c) => write!(f, "{c}"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse()
                .map_err(|_| Error::Expr(format!("bad number `{text}`")))?;
            out.push(Token::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Sym(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}` in `{src}`")));
        }
    }
    if out.is_empty() {
        return Err(Error::Expr("empty expression".into()));
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Token::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Bin(BinOp::Add, Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Bin(BinOp::Sub, Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Bin(BinOp::Div, Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| Error::Expr(format!("unknown function `{name}`")))?;
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return Err(Error::Expr(format!("missing `)` after {name}(")));
                    }
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                Ok(match name.as_str() {
                    "pi" => Node::Num(std::f64::consts::PI),
                    "e" => Node::Num(std::f64::consts::E),
                    _ => Node::Var(name),
                })
            }
            Some(Token::Sym('(')) => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(Error::Expr("missing `)`".into()));
                }
                Ok(inner)
            }
            Some(t) => Err(Error::Expr(format!("unexpected `{t}`"))),
            None => Err(Error::Expr("unexpected end of expression".into())),
        }
    }
}
