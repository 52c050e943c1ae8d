//! Flattening of a set of expressions into one instruction tape with shared
//! subexpressions, for repeated evaluation on simulation hot paths.

use std::collections::HashMap;

use super::expr::{checked_div, checked_pow, finite, Expr, Func, Node};
use super::ExprError;

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    X,
    Param(usize),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, f64),
    Call(Func, u32),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Const(u64),
    X,
    Param(usize),
    Neg(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, u64),
    Call(Func, u32),
}

/// A compiled bundle of expressions evaluated together.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
    arity: usize,
}

struct Builder {
    ops: Vec<Op>,
    seen: HashMap<Key, u32>,
}

impl Builder {
    fn intern(&mut self, key: Key, op: Op) -> u32 {
        if let Some(&slot) = self.seen.get(&key) {
            return slot;
        }
        let slot = self.ops.len() as u32;
        self.ops.push(op);
        self.seen.insert(key, slot);
        slot
    }

    fn emit(&mut self, e: &Expr) -> u32 {
        match e.node() {
            Node::Const(c) => self.intern(Key::Const(c.to_bits()), Op::Const(*c)),
            Node::X => self.intern(Key::X, Op::X),
            Node::Param(i) => self.intern(Key::Param(*i), Op::Param(*i)),
            Node::Neg(a) => {
                let a = self.emit(a);
                self.intern(Key::Neg(a), Op::Neg(a))
            }
            Node::Add(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                let (lo, hi) = (a.min(b), a.max(b));
                self.intern(Key::Add(lo, hi), Op::Add(a, b))
            }
            Node::Sub(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                self.intern(Key::Sub(a, b), Op::Sub(a, b))
            }
            Node::Mul(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                let (lo, hi) = (a.min(b), a.max(b));
                self.intern(Key::Mul(lo, hi), Op::Mul(a, b))
            }
            Node::Div(a, b) => {
                let (a, b) = (self.emit(a), self.emit(b));
                self.intern(Key::Div(a, b), Op::Div(a, b))
            }
            Node::Pow(a, n) => {
                let a = self.emit(a);
                self.intern(Key::Pow(a, n.to_bits()), Op::Pow(a, *n))
            }
            Node::Call(f, a) => {
                let a = self.emit(a);
                self.intern(Key::Call(*f, a), Op::Call(*f, a))
            }
        }
    }
}

impl Tape {
    pub fn new(exprs: &[&Expr]) -> Tape {
        let mut b = Builder {
            ops: Vec::new(),
            seen: HashMap::new(),
        };
        let outputs = exprs.iter().map(|e| b.emit(e)).collect();
        let arity = exprs.iter().map(|e| e.param_arity()).max().unwrap_or(0);
        Tape {
            ops: b.ops,
            outputs,
            arity,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluate every instruction into `scratch` and copy the requested
    /// outputs into `out`.
    pub fn eval_into(
        &self,
        x: f64,
        theta: &[f64],
        scratch: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<(), ExprError> {
        if theta.len() < self.arity {
            return Err(ExprError::ParamCount {
                expected: self.arity,
                got: theta.len(),
            });
        }
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let s = |i: u32| scratch[i as usize];
            let v = match *op {
                Op::Const(c) => c,
                Op::X => x,
                Op::Param(i) => theta[i],
                Op::Neg(a) => -s(a),
                Op::Add(a, b) => finite(s(a) + s(b), "addition")?,
                Op::Sub(a, b) => finite(s(a) - s(b), "subtraction")?,
                Op::Mul(a, b) => finite(s(a) * s(b), "product")?,
                Op::Div(a, b) => checked_div(s(a), s(b))?,
                Op::Pow(a, n) => checked_pow(s(a), n)?,
                Op::Call(f, a) => f.apply(s(a))?,
            };
            scratch.push(v);
        }
        for (o, &slot) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[slot as usize];
        }
        Ok(())
    }
}
