use std::fmt;
use std::sync::Arc;

use super::ExprError;

/// Elementary functions accepted by the grammar. `Sign` only appears as the
/// derivative of `abs` and has no surface syntax.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Atan,
    Log,
    Exp,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "atan" => Func::Atan,
            "log" => Func::Log,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Atan => "atan",
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    pub(crate) fn apply(self, v: f64) -> Result<f64, ExprError> {
        let out = match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Atan => v.atan(),
            Func::Log => {
                if v <= 0.0 {
                    return Err(ExprError::Domain(format!("log of non-positive value {v}")));
                }
                v.ln()
            }
            Func::Exp => v.exp(),
            Func::Sqrt => {
                if v < 0.0 {
                    return Err(ExprError::Domain(format!("sqrt of negative value {v}")));
                }
                v.sqrt()
            }
            Func::Abs => v.abs(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        finite(out, self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    X,
    Param(usize),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    /// Power with a constant exponent.
    Pow(Expr, f64),
    Call(Func, Expr),
}

/// Immutable, cheaply clonable expression tree over the state `x` and
/// parameter slots `θ_0 … θ_{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr(Arc<Node>);

pub(crate) fn finite(v: f64, what: &str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain(format!("non-finite result in {what}")))
    }
}

pub(crate) fn checked_div(a: f64, b: f64) -> Result<f64, ExprError> {
    if b == 0.0 {
        return Err(ExprError::Domain("division by zero".into()));
    }
    finite(a / b, "division")
}

pub(crate) fn checked_pow(b: f64, e: f64) -> Result<f64, ExprError> {
    let integral = e.fract() == 0.0 && e.abs() < i32::MAX as f64;
    if b < 0.0 && !integral {
        return Err(ExprError::Domain(format!(
            "negative base {b} with non-integer exponent {e}"
        )));
    }
    if b == 0.0 && e < 0.0 {
        return Err(ExprError::Domain("zero raised to a negative power".into()));
    }
    let v = if integral { b.powi(e as i32) } else { b.powf(e) };
    finite(v, "power")
}

impl Expr {
    fn new(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Expr {
        Expr::new(Node::Const(c))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn x() -> Expr {
        Expr::new(Node::X)
    }

    pub fn param(index: usize) -> Expr {
        Expr::new(Node::Param(index))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn neg(a: Expr) -> Expr {
        match a.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::new(Node::Neg(a)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x + y);
        }
        if let Node::Neg(inner) = b.node() {
            return Expr::sub(a, inner.clone());
        }
        Expr::new(Node::Add(a, b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if b.is_zero() {
            return a;
        }
        if a.is_zero() {
            return Expr::neg(b);
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x - y);
        }
        Expr::new(Node::Sub(a, b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        if a.is_zero() || b.is_zero() {
            return Expr::zero();
        }
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(c), None) if c == -1.0 => Expr::neg(b),
            (None, Some(c)) if c == -1.0 => Expr::neg(a),
            // keep constants on the left so folding can see them
            (None, Some(_)) => Expr::new(Node::Mul(b, a)),
            _ => Expr::new(Node::Mul(a, b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if b.is_one() {
            return a;
        }
        if a.is_zero() && b.as_const() != Some(0.0) {
            return Expr::zero();
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if y != 0.0 && (x / y).is_finite() {
                return Expr::constant(x / y);
            }
        }
        Expr::new(Node::Div(a, b))
    }

    pub fn pow(base: Expr, exponent: f64) -> Expr {
        if exponent == 0.0 {
            return Expr::one();
        }
        if exponent == 1.0 {
            return base;
        }
        if let Some(c) = base.as_const() {
            if let Ok(v) = checked_pow(c, exponent) {
                return Expr::constant(v);
            }
        }
        Expr::new(Node::Pow(base, exponent))
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        if let Some(c) = arg.as_const() {
            if let Ok(v) = f.apply(c) {
                return Expr::constant(v);
            }
        }
        Expr::new(Node::Call(f, arg))
    }

    /// Largest parameter index referenced, plus one.
    pub fn param_arity(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::X => 0,
            Node::Param(i) => i + 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.param_arity(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.param_arity().max(b.param_arity())
            }
        }
    }

    /// Tree-walking evaluation with domain checks.
    pub fn eval(&self, x: f64, theta: &[f64]) -> Result<f64, ExprError> {
        match self.node() {
            Node::Const(c) => Ok(*c),
            Node::X => Ok(x),
            Node::Param(i) => theta.get(*i).copied().ok_or(ExprError::ParamCount {
                expected: i + 1,
                got: theta.len(),
            }),
            Node::Neg(a) => Ok(-a.eval(x, theta)?),
            Node::Add(a, b) => finite(a.eval(x, theta)? + b.eval(x, theta)?, "addition"),
            Node::Sub(a, b) => finite(a.eval(x, theta)? - b.eval(x, theta)?, "subtraction"),
            Node::Mul(a, b) => finite(a.eval(x, theta)? * b.eval(x, theta)?, "product"),
            Node::Div(a, b) => checked_div(a.eval(x, theta)?, b.eval(x, theta)?),
            Node::Pow(a, e) => checked_pow(a.eval(x, theta)?, *e),
            Node::Call(f, a) => f.apply(a.eval(x, theta)?),
        }
    }

    /// Number of nodes in the tree (shared subtrees counted each time).
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::X | Node::Param(_) => 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => 1 + a.size(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                1 + a.size() + b.size()
            }
        }
    }

    /// Printable form using the given parameter names. The output reparses
    /// to a tree with the same values.
    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl ExprDisplay<'_> {
    fn child(&self, f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
        let inner = ExprDisplay {
            expr: e,
            names: self.names,
        };
        if e.precedence() < min_prec {
            write!(f, "({inner})")
        } else {
            write!(f, "{inner}")
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr.node() {
            Node::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Node::X => write!(f, "x"),
            Node::Param(i) => match self.names.get(*i) {
                Some(name) => write!(f, "{name}"),
                None => write!(f, "theta{i}"),
            },
            Node::Neg(a) => {
                write!(f, "-")?;
                self.child(f, a, 4)
            }
            Node::Add(a, b) => {
                self.child(f, a, 1)?;
                write!(f, " + ")?;
                self.child(f, b, 2)
            }
            Node::Sub(a, b) => {
                self.child(f, a, 1)?;
                write!(f, " - ")?;
                self.child(f, b, 2)
            }
            Node::Mul(a, b) => {
                self.child(f, a, 2)?;
                write!(f, "*")?;
                self.child(f, b, 3)
            }
            Node::Div(a, b) => {
                self.child(f, a, 2)?;
                write!(f, "/")?;
                self.child(f, b, 4)
            }
            Node::Pow(a, e) => {
                self.child(f, a, 5)?;
                if e.is_sign_negative() {
                    write!(f, "^(-{})", -e)
                } else {
                    write!(f, "^{e}")
                }
            }
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.child(f, a, 0)?;
                write!(f, ")")
            }
        }
    }
}
