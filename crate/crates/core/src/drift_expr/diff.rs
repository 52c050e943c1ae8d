use super::expr::{Expr, Func, Node};

/// Differentiation variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    Param(usize),
}

/// Exact symbolic derivative of `e` with respect to `v`.
pub fn derivative(e: &Expr, v: Var) -> Expr {
    match e.node() {
        Node::Const(_) => Expr::zero(),
        Node::X => {
            if v == Var::X {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Param(i) => {
            if v == Var::Param(*i) {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Neg(a) => Expr::neg(derivative(a, v)),
        Node::Add(a, b) => Expr::add(derivative(a, v), derivative(b, v)),
        Node::Sub(a, b) => Expr::sub(derivative(a, v), derivative(b, v)),
        Node::Mul(a, b) => Expr::add(
            Expr::mul(derivative(a, v), b.clone()),
            Expr::mul(a.clone(), derivative(b, v)),
        ),
        Node::Div(a, b) => {
            let da = derivative(a, v);
            let db = derivative(b, v);
            if db.is_zero() {
                return Expr::div(da, b.clone());
            }
            // (a/b)' = a'/b - a b'/b^2
            Expr::sub(
                Expr::div(da, b.clone()),
                Expr::div(Expr::mul(a.clone(), db), Expr::pow(b.clone(), 2.0)),
            )
        }
        Node::Pow(a, n) => {
            let da = derivative(a, v);
            if da.is_zero() {
                return Expr::zero();
            }
            Expr::mul(
                Expr::mul(Expr::constant(*n), Expr::pow(a.clone(), n - 1.0)),
                da,
            )
        }
        Node::Call(f, a) => {
            let da = derivative(a, v);
            if da.is_zero() {
                return Expr::zero();
            }
            let outer = match f {
                Func::Sin => Expr::call(Func::Cos, a.clone()),
                Func::Cos => Expr::neg(Expr::call(Func::Sin, a.clone())),
                Func::Atan => Expr::div(
                    Expr::one(),
                    Expr::add(Expr::one(), Expr::pow(a.clone(), 2.0)),
                ),
                Func::Log => return Expr::div(da, a.clone()),
                Func::Exp => e.clone(),
                Func::Sqrt => {
                    return Expr::div(da, Expr::mul(Expr::constant(2.0), e.clone()));
                }
                Func::Abs => Expr::call(Func::Sign, a.clone()),
                Func::Sign => return Expr::zero(),
            };
            Expr::mul(outer, da)
        }
    }
}
