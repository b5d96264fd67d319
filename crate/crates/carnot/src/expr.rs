//! Infix expression parser for boundary data and test fields.
//!
//! Grammar, loosest to tightest binding: `+ -`, then `* /`, then unary
//! minus, then `^` (right-associative), so `x^2^3 = x^(2^3)` and
//! `-x^2 = -(x^2)`. Coordinates are `x1..xn` with `x, y, t` as aliases for
//! the first three; functions: `sin cos exp log abs sqrt min max pow`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown symbol `{name}` at byte {offset}")]
    UnknownSymbol { offset: usize, name: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive value {arg}")]
    LogNonPositive { arg: f64 },
    #[error("square root of negative value {arg}")]
    SqrtNegative { arg: f64 },
    #[error("power {base}^{exponent} outside real domain")]
    PowDomain { base: f64, exponent: f64 },
    #[error("evaluation produced a non-finite value")]
    NonFinite,
    #[error("expression uses coordinate x{} but only {dim} are available", index + 1)]
    VarOutOfRange { index: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Abs,
    Sqrt,
    Min,
    Max,
    Pow,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

pub fn parse(text: &str) -> Result<Expression, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, end: text.len() };
    let root = p.expr()?;
    if p.pos < p.tokens.len() {
        return Err(ParseError::Syntax {
            offset: p.tokens[p.pos].offset,
            message: format!("unexpected `{}`", p.tokens[p.pos].kind.describe()),
        });
    }
    Ok(Expression { root })
}

impl Expression {
    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Largest coordinate index used, if any coordinate appears.
    pub fn max_var_index(&self) -> Option<usize> {
        fn walk(n: &Node, best: &mut Option<usize>) {
            match n {
                Node::Var(i) => *best = Some(best.map_or(*i, |b: usize| b.max(*i))),
                Node::Neg(a) => walk(a, best),
                Node::Bin(_, a, b) => {
                    walk(a, best);
                    walk(b, best);
                }
                Node::Call(_, args) => args.iter().for_each(|a| walk(a, best)),
                Node::Num(_) => {}
            }
        }
        let mut best = None;
        walk(&self.root, &mut best);
        best
    }

    /// Errors unless every coordinate index fits in `dim` slots.
    pub fn check_arity(&self, dim: usize) -> Result<(), EvalError> {
        match self.max_var_index() {
            Some(i) if i >= dim => Err(EvalError::VarOutOfRange { index: i, dim }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = eval_node(&self.root, x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

fn eval_node(node: &Node, x: &[f64]) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Num(v) => *v,
        Node::Var(i) => {
            if *i >= x.len() {
                return Err(EvalError::VarOutOfRange { index: *i, dim: x.len() });
            }
            x[*i]
        }
        Node::Neg(a) => -eval_node(a, x)?,
        Node::Bin(op, a, b) => {
            let a = eval_node(a, x)?;
            let b = eval_node(b, x)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
                BinOp::Pow => real_pow(a, b)?,
            }
        }
        Node::Call(f, args) => {
            let a = eval_node(&args[0], x)?;
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Abs => a.abs(),
                Func::Log => {
                    if a <= 0.0 {
                        return Err(EvalError::LogNonPositive { arg: a });
                    }
                    a.ln()
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(EvalError::SqrtNegative { arg: a });
                    }
                    a.sqrt()
                }
                Func::Min => a.min(eval_node(&args[1], x)?),
                Func::Max => a.max(eval_node(&args[1], x)?),
                Func::Pow => real_pow(a, eval_node(&args[1], x)?)?,
            }
        }
    })
}

fn real_pow(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(EvalError::PowDomain { base, exponent });
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(EvalError::PowDomain { base, exponent });
    }
    Ok(base.powf(exponent))
}

// ---------------------------------------------------------------- printing

fn prec(node: &Node) -> u8 {
    match node {
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Node::Neg(_) => 3,
        Node::Bin(BinOp::Pow, ..) => 4,
        Node::Num(_) | Node::Var(_) | Node::Call(..) => 5,
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node, min: u8) -> fmt::Result {
    let p = prec(node);
    if p < min {
        write!(f, "(")?;
        write_node(f, node, 0)?;
        return write!(f, ")");
    }
    match node {
        Node::Num(v) => write!(f, "{v}"),
        Node::Var(i) => write!(f, "x{}", i + 1),
        Node::Neg(a) => {
            write!(f, "-")?;
            write_node(f, a, 3)
        }
        Node::Bin(op, a, b) => {
            let (sym, lp, rp) = match op {
                BinOp::Add => (" + ", 1, 2),
                BinOp::Sub => (" - ", 1, 2),
                BinOp::Mul => ("*", 2, 3),
                BinOp::Div => ("/", 2, 3),
                BinOp::Pow => ("^", 5, 4),
            };
            write_node(f, a, lp)?;
            write!(f, "{sym}")?;
            write_node(f, b, rp)
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write_node(f, a, 0)?;
            }
            write!(f, ")")
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, 0)
    }
}

// --------------------------------------------------------------- tokenizer

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("{v}"),
            TokenKind::Ident(s) => s.clone(),
            TokenKind::Plus => "+".into(),
            TokenKind::Minus => "-".into(),
            TokenKind::Star => "*".into(),
            TokenKind::Slash => "/".into(),
            TokenKind::Caret => "^".into(),
            TokenKind::LParen => "(".into(),
            TokenKind::RParen => ")".into(),
            TokenKind::Comma => ",".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let kind = match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    if i >= bytes.len() || !bytes[i].is_ascii_digit() {
                        return Err(ParseError::Syntax {
                            offset: i.min(bytes.len()),
                            message: "expected digits after decimal point".into(),
                        });
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut k = i + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        i = k;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("bad number literal `{lit}`"),
                })?;
                // f64 parsing maps overflowing literals to infinity; reject
                // them so every accepted literal prints back as itself.
                if !v.is_finite() {
                    return Err(ParseError::Syntax {
                        offset: start,
                        message: format!("number literal `{lit}` overflows f64"),
                    });
                }
                out.push(Token { kind: TokenKind::Num(v), offset: start });
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            other => {
                return Err(ParseError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        out.push(Token { kind, offset: i });
        i += 1;
    }
    Ok(out)
}

// ------------------------------------------------------------------ parser

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn bump(&mut self) -> Option<TokenKind> {
        let t = self.tokens.get(self.pos).map(|t| t.kind.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: TokenKind, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: self.offset(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut node = self.term()?;
        loop {
            match self.peek() {
                Some(TokenKind::Plus) => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Add, Box::new(node), Box::new(self.term()?));
                }
                Some(TokenKind::Minus) => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Sub, Box::new(node), Box::new(self.term()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut node = self.unary()?;
        loop {
            match self.peek() {
                Some(TokenKind::Star) => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Mul, Box::new(node), Box::new(self.unary()?));
                }
                Some(TokenKind::Slash) => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Div, Box::new(node), Box::new(self.unary()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(&TokenKind::Minus) {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&TokenKind::Caret) {
            self.pos += 1;
            // Right-associative; the exponent may start with a unary minus.
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let offset = self.offset();
        match self.bump() {
            Some(TokenKind::Num(v)) => Ok(Node::Num(v)),
            Some(TokenKind::LParen) => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(inner)
            }
            Some(TokenKind::Ident(name)) => {
                if self.peek() == Some(&TokenKind::LParen) {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownSymbol { offset, name: name.clone() })?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&TokenKind::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(TokenKind::RParen, "`)`")?;
                    if args.len() != func.arity() {
                        return Err(ParseError::Syntax {
                            offset,
                            message: format!(
                                "{} takes {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                        });
                    }
                    Ok(Node::Call(func, args))
                } else {
                    resolve_var(&name)
                        .map(Node::Var)
                        .ok_or(ParseError::UnknownSymbol { offset, name })
                }
            }
            Some(other) => Err(ParseError::Syntax {
                offset,
                message: format!("unexpected `{}`", other.describe()),
            }),
            None => Err(ParseError::Syntax {
                offset: self.end,
                message: "unexpected end of input".into(),
            }),
        }
    }
}

/// `x1..xn` plus the aliases `x, y, t` for the first three coordinates.
fn resolve_var(name: &str) -> Option<usize> {
    match name {
        "x" => return Some(0),
        "y" => return Some(1),
        "t" => return Some(2),
        _ => {}
    }
    let rest = name.strip_prefix('x')?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let k: usize = rest.parse().ok()?;
    if k == 0 || rest.starts_with('0') {
        return None;
    }
    Some(k - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(text: &str, x: &[f64]) -> f64 {
        parse(text).unwrap().eval(x).unwrap()
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("2 + 3*4", &[]), 14.0);
        assert_eq!(ev("2*3 + 4", &[]), 10.0);
        assert_eq!(ev("(2 + 3)*4", &[]), 20.0);
        assert_eq!(ev("7 - 4 - 2", &[]), 1.0);
        assert_eq!(ev("12/3/2", &[]), 2.0);
        assert_eq!(ev("2^3^2", &[]), 512.0);
        assert_eq!(ev("-2^2", &[]), -4.0);
        assert_eq!(ev("(-2)^2", &[]), 4.0);
        assert_eq!(ev("2*-3", &[]), -6.0);
        assert_eq!(ev("1.5e2 + 2.5", &[]), 152.5);
    }

    #[test]
    fn coordinates_and_aliases() {
        assert_eq!(ev("x + 2*y", &[1.0, 2.0]), 5.0);
        assert_eq!(ev("x1 + 2*x2 - t", &[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(parse("x*y + t").unwrap(), parse("x1*x2 + x3").unwrap());
        assert_eq!(ev("x12", &[7.0; 12]), 7.0);
    }

    #[test]
    fn var_indices_and_arity() {
        let e = parse("x4 + 1").unwrap();
        assert_eq!(e.max_var_index(), Some(3));
        assert!(e.check_arity(4).is_ok());
        assert_eq!(e.check_arity(3), Err(EvalError::VarOutOfRange { index: 3, dim: 3 }));
        assert_eq!(parse("1 + 2").unwrap().max_var_index(), None);
        assert_eq!(
            e.eval(&[0.0, 0.0, 0.0]),
            Err(EvalError::VarOutOfRange { index: 3, dim: 3 })
        );
    }

    #[test]
    fn function_calls() {
        assert!(ev("sin(0)", &[]).abs() < 1e-15);
        assert!((ev("cos(0)", &[]) - 1.0).abs() < 1e-15);
        assert!((ev("exp(1)", &[]) - std::f64::consts::E).abs() < 1e-15);
        assert!((ev("log(exp(2))", &[]) - 2.0).abs() < 1e-12);
        assert_eq!(ev("abs(-3)", &[]), 3.0);
        assert_eq!(ev("sqrt(16)", &[]), 4.0);
        assert_eq!(ev("min(2, -1)", &[]), -1.0);
        assert_eq!(ev("max(2, -1)", &[]), 2.0);
        assert_eq!(ev("pow(2, 10)", &[]), 1024.0);
    }

    #[test]
    fn eval_domain_errors() {
        let run = |t: &str| parse(t).unwrap().eval(&[]);
        assert_eq!(run("1/0"), Err(EvalError::DivisionByZero));
        assert_eq!(run("log(0)"), Err(EvalError::LogNonPositive { arg: 0.0 }));
        assert_eq!(run("sqrt(-1)"), Err(EvalError::SqrtNegative { arg: -1.0 }));
        assert_eq!(
            run("pow(-2, 0.5)"),
            Err(EvalError::PowDomain { base: -2.0, exponent: 0.5 })
        );
        assert_eq!(
            run("0^(0 - 1)"),
            Err(EvalError::PowDomain { base: 0.0, exponent: -1.0 })
        );
        assert_eq!(run("(0 - 2)^3"), Ok(-8.0));
        assert_eq!(run("exp(1000)"), Err(EvalError::NonFinite));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse("2 +"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("(1 + 2"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("1 2"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("min(1)"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("sin(1, 2)"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("2."), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("a # b"), Err(ParseError::Syntax { .. })));
        match parse("foo(1)") {
            Err(ParseError::UnknownSymbol { name, .. }) => assert_eq!(name, "foo"),
            other => panic!("expected unknown symbol, got {other:?}"),
        }
        assert!(matches!(parse("x0"), Err(ParseError::UnknownSymbol { .. })));
        assert!(matches!(parse("x01"), Err(ParseError::UnknownSymbol { .. })));
        assert!(matches!(parse("z"), Err(ParseError::UnknownSymbol { .. })));
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "x1 + x2*x3",
            "-(x1 + 1)^2",
            "min(x1, max(x2, 0.5))",
            "(x1 + x2)/(x1 - x2)",
            "2^x1^2",
            "sqrt(abs(x1)) - exp(-x2)",
            "x - y*t",
        ] {
            let e = parse(text).unwrap();
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            assert_eq!(back, e, "round trip failed for `{text}` -> `{printed}`");
            assert_eq!(back.to_string(), printed);
        }
        assert_eq!(parse("x").unwrap().to_string(), "x1");
    }
}
