//! Small expression language shared by pattern files and DGP files.
//!
//! ```text
//! expr    := or
//! or      := and ("or" and)*
//! and     := not ("and" not)*
//! not     := "not" not | cmp
//! cmp     := sum (("==" | "!=" | "<" | "<=" | ">" | ">=") sum)?
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | atom
//! atom    := number | "true" | "false" | "t" | "T" | "L"
//!          | "z" "[" expr "]" | "x" "[" expr "]" ("[" expr "]")?
//!          | func "(" expr ")" | "(" expr ")"
//! func    := "logistic" | "exp" | "log" | "abs"
//! ```
//!
//! Values are reals; comparisons and logical operators yield 1 or 0 and treat
//! any nonzero operand as true. `x[s]` is shorthand for `x[s][1]`. Indices
//! below 1 read as 0 (the empty-range convention), so `z[t-1]` at `t = 1` is 0.
//! `L` (a latent binary confounder) is only available in DGP files.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Logistic,
    Exp,
    Log,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    Horizon,
    Latent,
    Z(Box<Expr>),
    X(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Values an expression can see. `z[s]` for `s ≤ z.len()` and `x[s]` for
/// `s ≤ x.len()` are in scope; `None` marks a position that is in scope but
/// unknown (collapsed away), which is an error to read.
#[derive(Debug, Clone, Default)]
pub struct Env<'a> {
    pub t: usize,
    pub horizon: usize,
    pub z: &'a [Option<u32>],
    pub x: &'a [Option<&'a [u32]>],
    pub latent: Option<f64>,
}

fn truth(v: f64) -> f64 {
    if v != 0.0 {
        1.0
    } else {
        0.0
    }
}

fn index(v: f64) -> Result<i64, String> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(format!("index {v} is not an integer"));
    }
    Ok(v as i64)
}

impl Expr {
    pub fn eval(&self, env: &Env<'_>) -> Result<f64, String> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Time => env.t as f64,
            Expr::Horizon => env.horizon as f64,
            Expr::Latent => env
                .latent
                .ok_or_else(|| "L is not available here".to_string())?,
            Expr::Z(s) => {
                let s = index(s.eval(env)?)?;
                if s < 1 {
                    return Ok(0.0);
                }
                match env.z.get(s as usize - 1) {
                    Some(Some(v)) => *v as f64,
                    Some(None) => return Err(format!("z[{s}] is not available in this stratum")),
                    None => return Err(format!("z[{s}] refers to the future")),
                }
            }
            Expr::X(s, i) => {
                let s = index(s.eval(env)?)?;
                let i = index(i.eval(env)?)?;
                if s < 1 {
                    return Ok(0.0);
                }
                let v = match env.x.get(s as usize - 1) {
                    Some(Some(v)) => *v,
                    Some(None) => return Err(format!("x[{s}] is not available in this stratum")),
                    None => return Err(format!("x[{s}] refers to the future")),
                };
                if i < 1 || i as usize > v.len() {
                    return Err(format!("covariate component {i} out of range 1..={}", v.len()));
                }
                v[i as usize - 1] as f64
            }
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Not(e) => 1.0 - truth(e.eval(env)?),
            Expr::Bin(op, a, b) => {
                let a = a.eval(env)?;
                // short-circuit so guarded lookups like `t > 1 and z[t-1] == 1` are safe
                match op {
                    BinOp::And if a == 0.0 => return Ok(0.0),
                    BinOp::Or if a != 0.0 => return Ok(1.0),
                    _ => {}
                }
                let b = b.eval(env)?;
                let c = |x: bool| if x { 1.0 } else { 0.0 };
                match op {
                    BinOp::Or | BinOp::And => truth(b),
                    BinOp::Eq => c(a == b),
                    BinOp::Ne => c(a != b),
                    BinOp::Lt => c(a < b),
                    BinOp::Le => c(a <= b),
                    BinOp::Gt => c(a > b),
                    BinOp::Ge => c(a >= b),
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(env)?;
                match f {
                    Func::Logistic => 1.0 / (1.0 + (-v).exp()),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Abs => v.abs(),
                }
            }
        })
    }

    pub fn uses_latent(&self) -> bool {
        match self {
            Expr::Latent => true,
            Expr::Num(_) | Expr::Time | Expr::Horizon => false,
            Expr::Z(e) | Expr::Neg(e) | Expr::Not(e) | Expr::Call(_, e) => e.uses_latent(),
            Expr::X(a, b) | Expr::Bin(_, a, b) => a.uses_latent() || b.uses_latent(),
        }
    }
}

/// Binding strength, loosest first; atoms bind tightest.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Or, ..) => 1,
        Expr::Bin(BinOp::And, ..) => 2,
        Expr::Not(_) => 3,
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 5,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 6,
        Expr::Bin(..) => 4,
        Expr::Neg(_) => 7,
        Expr::Num(v) if *v < 0.0 => 7,
        _ => 8,
    }
}

impl Expr {
    /// Writes `self`, parenthesized when it binds looser than `min`.
    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = precedence(self);
        if p < min {
            f.write_str("(")?;
            self.write_at(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Time => f.write_str("t"),
            Expr::Horizon => f.write_str("T"),
            Expr::Latent => f.write_str("L"),
            Expr::Z(s) => write!(f, "z[{s}]"),
            Expr::X(s, i) => write!(f, "x[{s}][{i}]"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.write_at(f, 7)
            }
            Expr::Not(e) => {
                f.write_str("not ")?;
                e.write_at(f, 3)
            }
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Or => "or",
                    BinOp::And => "and",
                    BinOp::Eq => "==",
                    BinOp::Ne => "!=",
                    BinOp::Lt => "<",
                    BinOp::Le => "<=",
                    BinOp::Gt => ">",
                    BinOp::Ge => ">=",
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                // left-associative; comparisons do not chain
                let left = if p == 4 { p + 1 } else { p };
                a.write_at(f, left)?;
                write!(f, " {s} ")?;
                b.write_at(f, p + 1)
            }
            Expr::Call(func, e) => {
                let name = match func {
                    Func::Logistic => "logistic",
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Abs => "abs",
                };
                write!(f, "{name}({e})")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
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
            out.push(Tok::Num(s.parse().map_err(|_| format!("bad number `{s}`"))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = match two.as_str() {
                "==" => Some("=="),
                "!=" => Some("!="),
                "<=" => Some("<="),
                ">=" => Some(">="),
                "&&" => Some("and"),
                "||" => Some("or"),
                _ => None,
            };
            if let Some(s) = sym {
                out.push(Tok::Sym(s));
                i += 2;
                continue;
            }
            let s = match c {
                '+' => "+",
                '-' => "-",
                '*' => "*",
                '/' => "/",
                '<' => "<",
                '>' => ">",
                '(' => "(",
                ')' => ")",
                '[' => "[",
                ']' => "]",
                '!' => "not",
                '=' => "==",
                _ => return Err(format!("unexpected character `{c}`")),
            };
            out.push(Tok::Sym(s));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    allow_latent: bool,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        let hit = match self.peek() {
            Some(Tok::Sym(t)) => *t == s,
            Some(Tok::Ident(w)) => (s == "and" || s == "or" || s == "not") && w == s,
            _ => false,
        };
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn expect(&mut self, s: &str) -> Result<(), String> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(format!("expected `{s}`{}", self.found()))
        }
    }

    fn found(&self) -> String {
        match self.peek() {
            None => " at end of expression".into(),
            Some(Tok::Num(v)) => format!(", found `{v}`"),
            Some(Tok::Ident(s)) => format!(", found `{s}`"),
            Some(Tok::Sym(s)) => format!(", found `{s}`"),
        }
    }

    fn or(&mut self) -> Result<Expr, String> {
        let mut e = self.and()?;
        while self.eat_sym("or") {
            e = Expr::Bin(BinOp::Or, Box::new(e), Box::new(self.and()?));
        }
        Ok(e)
    }

    fn and(&mut self) -> Result<Expr, String> {
        let mut e = self.not()?;
        while self.eat_sym("and") {
            e = Expr::Bin(BinOp::And, Box::new(e), Box::new(self.not()?));
        }
        Ok(e)
    }

    fn not(&mut self) -> Result<Expr, String> {
        if self.eat_sym("not") {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, String> {
        let a = self.sum()?;
        for (s, op) in [
            ("==", BinOp::Eq),
            ("!=", BinOp::Ne),
            ("<=", BinOp::Le),
            (">=", BinOp::Ge),
            ("<", BinOp::Lt),
            (">", BinOp::Gt),
        ] {
            if self.eat_sym(s) {
                return Ok(Expr::Bin(op, Box::new(a), Box::new(self.sum()?)));
            }
        }
        Ok(a)
    }

    fn sum(&mut self) -> Result<Expr, String> {
        let mut e = self.product()?;
        loop {
            if self.eat_sym("+") {
                e = Expr::Bin(BinOp::Add, Box::new(e), Box::new(self.product()?));
            } else if self.eat_sym("-") {
                e = Expr::Bin(BinOp::Sub, Box::new(e), Box::new(self.product()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn product(&mut self) -> Result<Expr, String> {
        let mut e = self.unary()?;
        loop {
            if self.eat_sym("*") {
                e = Expr::Bin(BinOp::Mul, Box::new(e), Box::new(self.unary()?));
            } else if self.eat_sym("/") {
                e = Expr::Bin(BinOp::Div, Box::new(e), Box::new(self.unary()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.eat_sym("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn bracket(&mut self) -> Result<Expr, String> {
        self.expect("[")?;
        let e = self.or()?;
        self.expect("]")?;
        Ok(e)
    }

    fn atom(&mut self) -> Result<Expr, String> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| "unexpected end of expression".to_string())?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Sym("(") => {
                let e = self.or()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Sym(s) => Err(format!("unexpected `{s}`")),
            Tok::Ident(id) => match id.as_str() {
                "t" => Ok(Expr::Time),
                "T" => Ok(Expr::Horizon),
                "true" => Ok(Expr::Num(1.0)),
                "false" => Ok(Expr::Num(0.0)),
                "L" if self.allow_latent => Ok(Expr::Latent),
                "z" => Ok(Expr::Z(Box::new(self.bracket()?))),
                "x" => {
                    let s = self.bracket()?;
                    let i = if matches!(self.peek(), Some(Tok::Sym("["))) {
                        self.bracket()?
                    } else {
                        Expr::Num(1.0)
                    };
                    Ok(Expr::X(Box::new(s), Box::new(i)))
                }
                "logistic" | "exp" | "log" | "abs" => {
                    let f = match id.as_str() {
                        "logistic" => Func::Logistic,
                        "exp" => Func::Exp,
                        "log" => Func::Log,
                        _ => Func::Abs,
                    };
                    self.expect("(")?;
                    let e = self.or()?;
                    self.expect(")")?;
                    Ok(Expr::Call(f, Box::new(e)))
                }
                other => Err(format!("unknown identifier `{other}`")),
            },
        }
    }
}

/// Parses an expression; `L` is accepted only when `allow_latent` is set.
pub fn parse_expr(src: &str, allow_latent: bool) -> Result<Expr, String> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        allow_latent,
    };
    if p.toks.is_empty() {
        return Err("empty expression".into());
    }
    let e = p.or()?;
    if p.pos != p.toks.len() {
        return Err(format!("trailing input{}", p.found()));
    }
    Ok(e)
}
