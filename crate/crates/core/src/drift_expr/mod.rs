//! Drift functions written as text, with exact symbolic partial derivatives
//! in the state `x` and in every parameter component.

mod compile;
mod diff;
mod expr;
mod parser;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use compile::Tape;
pub use diff::{derivative, Var};
pub use expr::{Expr, Func, Node};

/// Highest derivative order in `x` kept in the cache.
pub const MAX_X_ORDER: u8 = 3;
/// Highest total derivative order over parameter components kept in the cache.
pub const MAX_THETA_ORDER: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function `{name}` takes {expected} argument(s), got {got} (position {pos})")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        pos: usize,
    },
    #[error("invalid parameter name `{0}`")]
    InvalidParamName(String),
    #[error("expected {expected} parameter value(s), got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("derivative order out of range: {0}")]
    OrderOutOfRange(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Multi-index of a mixed partial derivative: `x` order plus a sorted
/// multiset of parameter indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Partial {
    x: u8,
    params: Vec<usize>,
}

impl Partial {
    pub fn new(x: u8, params: &[usize]) -> Partial {
        let mut params = params.to_vec();
        params.sort_unstable();
        Partial { x, params }
    }

    pub fn value() -> Partial {
        Partial::new(0, &[])
    }

    pub fn dx(order: u8) -> Partial {
        Partial::new(order, &[])
    }

    pub fn x_order(&self) -> u8 {
        self.x
    }

    pub fn params(&self) -> &[usize] {
        &self.params
    }
}

impl fmt::Display for Partial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d^{}/dx^{}", self.x as usize + self.params.len(), self.x)?;
        for p in &self.params {
            write!(f, " dtheta{p}")?;
        }
        Ok(())
    }
}

/// Parsed drift `A_θ(x)` with its derivative cache filled at construction.
#[derive(Clone, Debug)]
pub struct DriftModel {
    source: String,
    params: Vec<String>,
    expr: Expr,
    derivs: BTreeMap<Partial, Expr>,
}

fn multisets(d: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for m in &frontier {
            let start = m.last().copied().unwrap_or(0);
            for j in start..d {
                let mut m2: Vec<usize> = m.clone();
                m2.push(j);
                next.push(m2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn valid_param_name(name: &str) -> bool {
    let mut chars = name.chars();
    let head_ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name != "x"
        && Func::from_name(name).is_none()
}

impl DriftModel {
    /// Parse `source` over the state `x` and the named parameters.
    pub fn parse<S: AsRef<str>>(source: &str, params: &[S]) -> Result<DriftModel, ExprError> {
        let params: Vec<String> = params.iter().map(|p| p.as_ref().to_string()).collect();
        for (i, p) in params.iter().enumerate() {
            if !valid_param_name(p) || params[..i].contains(p) {
                return Err(ExprError::InvalidParamName(p.clone()));
            }
        }
        let expr = parser::Parser::parse(source, &params)?;
        Ok(DriftModel::from_expr(source.to_string(), params, expr))
    }

    pub fn from_expr(source: String, params: Vec<String>, expr: Expr) -> DriftModel {
        let d = params.len();
        let mut derivs = BTreeMap::new();
        for ps in multisets(d, MAX_THETA_ORDER) {
            let base = match ps.split_last() {
                None => expr.clone(),
                Some((&last, rest)) => {
                    let parent = &derivs[&Partial::new(0, rest)];
                    derivative(parent, Var::Param(last))
                }
            };
            let mut cur = base;
            derivs.insert(Partial::new(0, &ps), cur.clone());
            for i in 1..=MAX_X_ORDER {
                cur = derivative(&cur, Var::X);
                derivs.insert(Partial::new(i, &ps), cur.clone());
            }
        }
        DriftModel {
            source,
            params,
            expr,
            derivs,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Reparseable rendering of the parsed tree.
    pub fn pretty(&self) -> String {
        self.expr.display(&self.params).to_string()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<(), ExprError> {
        if theta.len() != self.dim() {
            return Err(ExprError::ParamCount {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: f64, theta: &[f64]) -> Result<f64, ExprError> {
        self.check_theta(theta)?;
        self.expr.eval(x, theta)
    }

    /// Cached symbolic derivative for the multi-index.
    pub fn differentiate(&self, wrt: &Partial) -> Result<&Expr, ExprError> {
        if wrt.params.iter().any(|&j| j >= self.dim()) {
            return Err(ExprError::OrderOutOfRange(format!(
                "{wrt}: parameter index beyond dimension {}",
                self.dim()
            )));
        }
        self.derivs
            .get(wrt)
            .ok_or_else(|| ExprError::OrderOutOfRange(wrt.to_string()))
    }

    pub fn eval_partial(&self, wrt: &Partial, x: f64, theta: &[f64]) -> Result<f64, ExprError> {
        self.check_theta(theta)?;
        self.differentiate(wrt)?.eval(x, theta)
    }

    /// Compile the listed partials into one tape.
    pub fn compile(&self, partials: &[Partial]) -> Result<Tape, ExprError> {
        let exprs = partials
            .iter()
            .map(|p| self.differentiate(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Tape::new(&exprs))
    }

    /// True when the drift is affine in the parameter vector, i.e. every
    /// second parameter derivative vanishes identically. Such drifts admit
    /// a linear normal system for least squares.
    pub fn is_polynomial_in_theta(&self) -> bool {
        let d = self.dim();
        (0..d).all(|j| (j..d).all(|k| self.derivs[&Partial::new(0, &[j, k])].is_zero()))
    }
}
