//! Small arithmetic expression language used by config files.
//!
//! Grammar (usual precedence, `^` right associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers: `x` (alias of `x1`), `x1`..`xd`, `y` (the solution value in
//! a nonlinearity) and the constant `pi`. Functions: `sin cos tan exp log
//! sqrt abs min max`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Coord(usize),
    Value,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 2,
            _ => n == 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
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
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Expr(format!("bad number literal {s:?}")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character {c:?} in {src:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(Error::Expr("missing ')'".into()));
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat_op('(') {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| Error::Expr(format!("unknown function {name:?}")))?;
                    let mut args = vec![self.expr()?];
                    while self.eat_op(',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat_op(')') {
                        return Err(Error::Expr(format!("missing ')' after {name} arguments")));
                    }
                    if !func.arity_ok(args.len()) {
                        return Err(Error::Expr(format!(
                            "{name} does not take {} arguments",
                            args.len()
                        )));
                    }
                    return Ok(Expr::Call(func, args));
                }
                ident(&name)
            }
            Some(t) => Err(Error::Expr(format!("unexpected token {t:?}"))),
            None => Err(Error::Expr("unexpected end of expression".into())),
        }
    }
}

fn ident(name: &str) -> Result<Expr> {
    match name {
        "x" => Ok(Expr::Coord(0)),
        "y" => Ok(Expr::Value),
        "pi" => Ok(Expr::Num(std::f64::consts::PI)),
        _ => {
            if let Some(k) = name.strip_prefix('x') {
                if let Ok(k) = k.parse::<usize>() {
                    if k >= 1 {
                        return Ok(Expr::Coord(k - 1));
                    }
                }
            }
            Err(Error::Expr(format!("unknown identifier {name:?}")))
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let toks = tokenize(src)?;
        if toks.is_empty() {
            return Err(Error::Expr("empty expression".into()));
        }
        let mut p = Parser { toks, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expr(format!(
                "trailing input after position {} in {src:?}",
                p.pos
            )));
        }
        Ok(e.fold())
    }

    pub fn eval(&self, x: &[f64], y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Coord(k) => x.get(*k).copied().unwrap_or(f64::NAN),
            Expr::Value => y,
            Expr::Neg(e) => -e.eval(x, y),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y), b.eval(x, y));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Expr::Call(f, args) => {
                let a0 = args[0].eval(x, y);
                match f {
                    Func::Sin => a0.sin(),
                    Func::Cos => a0.cos(),
                    Func::Tan => a0.tan(),
                    Func::Exp => a0.exp(),
                    Func::Log => a0.ln(),
                    Func::Sqrt => a0.sqrt(),
                    Func::Abs => a0.abs(),
                    Func::Min => args[1..].iter().fold(a0, |m, e| m.min(e.eval(x, y))),
                    Func::Max => args[1..].iter().fold(a0, |m, e| m.max(e.eval(x, y))),
                }
            }
        }
    }

    /// Highest coordinate index referenced plus one (0 if none).
    pub fn coord_arity(&self) -> usize {
        match self {
            Expr::Coord(k) => k + 1,
            Expr::Num(_) | Expr::Value => 0,
            Expr::Neg(e) => e.coord_arity(),
            Expr::Bin(_, a, b) => a.coord_arity().max(b.coord_arity()),
            Expr::Call(_, args) => args.iter().map(Expr::coord_arity).max().unwrap_or(0),
        }
    }

    pub fn uses_value(&self) -> bool {
        match self {
            Expr::Value => true,
            Expr::Num(_) | Expr::Coord(_) => false,
            Expr::Neg(e) => e.uses_value(),
            Expr::Bin(_, a, b) => a.uses_value() || b.uses_value(),
            Expr::Call(_, args) => args.iter().any(Expr::uses_value),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    fn fold(self) -> Expr {
        let folded = match self {
            Expr::Neg(e) => Expr::Neg(Box::new(e.fold())),
            Expr::Bin(op, a, b) => Expr::Bin(op, Box::new(a.fold()), Box::new(b.fold())),
            Expr::Call(f, args) => Expr::Call(f, args.into_iter().map(Expr::fold).collect()),
            e => e,
        };
        if folded.coord_arity() == 0 && !folded.uses_value() {
            if let Expr::Num(_) = folded {
                return folded;
            }
            return Expr::Num(folded.eval(&[], 0.0));
        }
        folded
    }
}

// Integer exponents go through powi so that negative bases work.
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() < 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}
