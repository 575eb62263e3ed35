//! Closed-form models from a formula string.
//!
//! Grammar: `+ - * / ^`, parentheses, numbers, parameter names, `x` (or
//! `x1`, `x2`, … for vector x), `pi`, and the functions `exp`, `ln`, `log`,
//! `sqrt` and `pow(base, exponent)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{Model, ParamDomain};
use crate::diff::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Param(usize),
    X(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
}

const NON_SMOOTH: [&str; 9] = ["abs", "max", "min", "sign", "floor", "ceil", "round", "step", "heaviside"];

impl Expr {
    /// Parses `src` with the given parameter names.
    pub fn parse(src: &str, params: &[String]) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, params };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse(format!("unexpected '{}'", p.tokens[p.pos])));
        }
        Ok(e)
    }

    fn depends_on_params(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::X(_) => false,
            Expr::Param(_) => true,
            Expr::Neg(a) | Expr::Exp(a) | Expr::Ln(a) | Expr::Sqrt(a) => a.depends_on_params(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.depends_on_params() || b.depends_on_params()
            }
        }
    }

    /// Highest x component referenced, plus one.
    fn x_dim(&self) -> usize {
        match self {
            Expr::X(k) => k + 1,
            Expr::Const(_) | Expr::Param(_) => 0,
            Expr::Neg(a) | Expr::Exp(a) | Expr::Ln(a) | Expr::Sqrt(a) => a.x_dim(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.x_dim().max(b.x_dim())
            }
        }
    }

    pub fn eval<S: Scalar>(&self, theta: &[S], x: &[f64]) -> S {
        match self {
            Expr::Const(c) => S::from_f64(*c),
            Expr::Param(i) => theta[*i],
            Expr::X(k) => S::from_f64(x[*k]),
            Expr::Neg(a) => -a.eval(theta, x),
            Expr::Add(a, b) => a.eval(theta, x) + b.eval(theta, x),
            Expr::Sub(a, b) => a.eval(theta, x) - b.eval(theta, x),
            Expr::Mul(a, b) => a.eval(theta, x) * b.eval(theta, x),
            Expr::Div(a, b) => a.eval(theta, x) / b.eval(theta, x),
            Expr::Pow(a, b) => {
                let base = a.eval(theta, x);
                if b.depends_on_params() {
                    base.pow(b.eval(theta, x))
                } else {
                    let e = b.eval::<f64>(&[], x);
                    if e.fract() == 0.0 && e.abs() < 1024.0 {
                        base.powi(e as i32)
                    } else {
                        base.powf(e)
                    }
                }
            }
            Expr::Exp(a) => a.eval(theta, x).exp(),
            Expr::Ln(a) => a.eval(theta, x).ln(),
            Expr::Sqrt(a) => a.eval(theta, x).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Ident(s) => f.write_str(s),
            Tok::Op(c) => write!(f, "{c}"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<Tok>> {
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
            let s: String = chars[start..i].iter().collect();
            let v = s.parse().map_err(|_| Error::Parse(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c == '×' || c == '·' {
            out.push(Tok::Op('*'));
            i += 1;
        } else if c == '÷' {
            out.push(Tok::Op('/'));
            i += 1;
        } else if c == '−' {
            out.push(Tok::Op('-'));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    params: &'a [String],
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_op() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Parse(format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Parse("unexpected end of formula".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Op(c) => Err(Error::Parse(format!("unexpected '{c}'"))),
            Tok::Ident(name) => {
                if self.peek_op() == Some('(') {
                    self.pos += 1;
                    return self.call(&name);
                }
                if let Some(i) = self.params.iter().position(|p| *p == name) {
                    return Ok(Expr::Param(i));
                }
                if name == "x" {
                    return Ok(Expr::X(0));
                }
                if let Some(k) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if k >= 1 {
                        return Ok(Expr::X(k - 1));
                    }
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                Err(Error::Parse(format!("unknown identifier '{name}'")))
            }
        }
    }

    fn call(&mut self, name: &str) -> Result<Expr> {
        let lname = name.to_ascii_lowercase();
        if NON_SMOOTH.contains(&lname.as_str()) {
            return Err(Error::Parse(format!(
                "'{name}' is not smooth; models must be twice differentiable in their parameters"
            )));
        }
        let mut args = vec![self.expr()?];
        while self.peek_op() == Some(',') {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(')')?;
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("{name} takes {n} argument(s), got {}", args.len())))
            }
        };
        match lname.as_str() {
            "exp" => {
                arity(1)?;
                Ok(Expr::Exp(Box::new(args.remove(0))))
            }
            "ln" | "log" => {
                arity(1)?;
                Ok(Expr::Ln(Box::new(args.remove(0))))
            }
            "sqrt" => {
                arity(1)?;
                Ok(Expr::Sqrt(Box::new(args.remove(0))))
            }
            "pow" => {
                arity(2)?;
                let b = args.remove(0);
                let e = args.remove(0);
                Ok(Expr::Pow(Box::new(b), Box::new(e)))
            }
            _ => Err(Error::Parse(format!("unknown function '{name}'"))),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExprFile {
    name: Option<String>,
    params: Vec<String>,
    formula: String,
    #[serde(default)]
    injective: bool,
    guess: Option<Vec<f64>>,
    #[serde(default)]
    bounds: BTreeMap<String, [f64; 2]>,
}

/// A model `y = formula(x; θ)` defined by an expression.
#[derive(Clone, Debug)]
pub struct ExprModel {
    pub name: String,
    pub params: Vec<String>,
    pub formula: String,
    pub expr: Expr,
    pub domain: ParamDomain,
    pub injective: bool,
    pub guess: Vec<f64>,
}

impl ExprModel {
    pub fn new(name: &str, params: &[&str], formula: &str) -> Result<Self> {
        let params: Vec<String> = params.iter().map(|s| s.to_string()).collect();
        let expr = Expr::parse(formula, &params)?;
        Ok(ExprModel {
            name: name.to_string(),
            domain: ParamDomain::unbounded(params.len()),
            guess: vec![1.0; params.len()],
            params,
            formula: formula.to_string(),
            expr,
            injective: false,
        })
    }

    pub fn with_domain(mut self, domain: ParamDomain) -> Result<Self> {
        if domain.dim() != self.params.len() {
            return Err(Error::Shape("domain dimension differs from parameter count".into()));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn with_injective(mut self, flag: bool) -> Self {
        self.injective = flag;
        self
    }

    /// Parses the TOML model description:
    ///
    /// ```toml
    /// name = "saturation"
    /// params = ["a", "k"]
    /// formula = "a * x / (k + x)"
    /// injective = true
    /// guess = [1.0, 1.0]
    /// [bounds]
    /// k = [0.0, inf]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: ExprFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if f.params.is_empty() {
            return Err(Error::Input("a model needs at least one parameter".into()));
        }
        let names: Vec<&str> = f.params.iter().map(String::as_str).collect();
        let mut m = ExprModel::new(f.name.as_deref().unwrap_or("custom"), &names, &f.formula)?;
        m.injective = f.injective;
        let mut lower = vec![f64::NEG_INFINITY; f.params.len()];
        let mut upper = vec![f64::INFINITY; f.params.len()];
        for (k, [lo, hi]) in &f.bounds {
            let i = f
                .params
                .iter()
                .position(|p| p == k)
                .ok_or_else(|| Error::Input(format!("bound for unknown parameter '{k}'")))?;
            lower[i] = *lo;
            upper[i] = *hi;
        }
        m.domain = ParamDomain::new(lower, upper)?;
        if let Some(g) = f.guess {
            if g.len() != f.params.len() {
                return Err(Error::Shape("guess length differs from parameter count".into()));
            }
            m.guess = g;
        }
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        ExprModel::from_toml(&text)
    }
}

impl Model for ExprModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn param_dim(&self) -> usize {
        self.params.len()
    }
    fn param_names(&self) -> Vec<String> {
        self.params.clone()
    }
    fn domain(&self) -> ParamDomain {
        self.domain.clone()
    }
    fn injective(&self) -> bool {
        self.injective
    }
    fn initial_guess(&self) -> Vec<f64> {
        self.guess.clone()
    }
    fn predict_batch<S: Scalar>(&self, xs: &[Vec<f64>], theta: &[S]) -> Result<Vec<S>> {
        let need = self.expr.x_dim();
        if let Some(x) = xs.iter().find(|x| x.len() < need) {
            return Err(Error::Shape(format!("formula uses {need} x components, row has {}", x.len())));
        }
        Ok(xs.iter().map(|x| self.expr.eval(theta, x)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn ev(src: &str, theta: &[f64], x: f64) -> f64 {
        let names: Vec<String> = (0..theta.len()).map(|i| ["a", "b", "c"][i].to_string()).collect();
        Expr::parse(src, &names).unwrap().eval(theta, &[x])
    }

    #[test]
    fn precedence_and_associativity() {
        assert_abs_diff_eq!(ev("1 + 2 * 3", &[], 0.0), 7.0);
        assert_abs_diff_eq!(ev("2 ^ 3 ^ 2", &[], 0.0), 512.0);
        assert_abs_diff_eq!(ev("-2 ^ 2", &[], 0.0), -4.0);
        assert_abs_diff_eq!(ev("8 / 4 / 2", &[], 0.0), 1.0);
        assert_abs_diff_eq!(ev("1 - 2 - 3", &[], 0.0), -4.0);
        assert_abs_diff_eq!(ev("2e-1 * 10", &[], 0.0), 2.0);
    }

    #[test]
    fn functions_and_variables() {
        assert_abs_diff_eq!(ev("(a+b)*x + exp(a-b)", &[1.0, 0.5], 2.0), 3.0 + 0.5f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(ev("pow(a, b)", &[2.0, 3.0], 0.0), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev("sqrt(x) + ln(a)", &[1.0], 4.0), 2.0);
        assert_abs_diff_eq!(ev("x^0.5", &[], 9.0), 3.0);
        assert_abs_diff_eq!(ev("2 × a ÷ 4 − 1", &[2.0], 0.0), 0.0);
    }

    #[test]
    fn rejects_non_smooth_and_unknown() {
        let names = p(&["a"]);
        for src in ["abs(a)", "max(a, 1)", "min(a,x)", "foo(a)", "q + 1", "a +", "(a", "a $ 2", "exp(a, a)"] {
            assert!(Expr::parse(src, &names).is_err(), "{src}");
        }
    }

    #[test]
    fn toml_model() {
        let m = ExprModel::from_toml(
            r#"
name = "sat"
params = ["a", "k"]
formula = "a * x / (k + x)"
injective = true
guess = [2.0, 0.5]
[bounds]
k = [0.0, inf]
"#,
        )
        .unwrap();
        assert_eq!(m.name(), "sat");
        assert!(m.injective());
        assert!(!m.domain().contains(&[1.0, -1.0]));
        let y = m.predict(&[1.0], &[2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(y[0], 1.0);
        assert!(ExprModel::from_toml("params = [\"a\"]\nformula = \"abs(a)\"").is_err());
        assert!(ExprModel::from_toml("params = [\"a\"]\nformula = \"a\"\n[bounds]\nz = [0.0, 1.0]").is_err());
    }

    #[test]
    fn vector_x() {
        let m = ExprModel::new("plane", &["a", "b"], "a*x1 + b*x2").unwrap();
        let y = m.predict_batch(&[vec![1.0, 2.0]], &[3.0, 4.0]).unwrap();
        assert_eq!(y, vec![11.0]);
        assert!(m.predict_batch(&[vec![1.0]], &[3.0, 4.0]).is_err());
    }
}
