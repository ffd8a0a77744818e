//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends a node recording its
//! operands. [`Tape::gradient`] sweeps the nodes in reverse index order, which
//! is a reverse topological order because operands always precede results.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Input,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    AddConst(u32, f64),
    MulConst(u32, f64),
    Tanh(u32),
    Sin(u32),
    Exp(u32),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    value: f64,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value)
    }
}

/// Adjoint buffer produced by one reverse sweep.
#[derive(Clone, Debug)]
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        self.0[v.idx as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn eval(op: Op, vals: &[f64]) -> f64 {
    let v = |i: u32| vals[i as usize];
    match op {
        Op::Input | Op::Const => unreachable!("leaf nodes carry their own value"),
        Op::Add(a, b) => v(a) + v(b),
        Op::Sub(a, b) => v(a) - v(b),
        Op::Mul(a, b) => v(a) * v(b),
        Op::Div(a, b) => v(a) / v(b),
        Op::Neg(a) => -v(a),
        Op::AddConst(a, c) => v(a) + c,
        Op::MulConst(a, c) => v(a) * c,
        Op::Tanh(a) => v(a).tanh(),
        Op::Sin(a) => v(a).sin(),
        Op::Exp(a) => v(a).exp(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    /// Drops all recorded nodes, keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { op, value });
        Var {
            tape: self,
            idx,
            value,
        }
    }

    pub fn input(&self, value: f64) -> Var<'_> {
        self.push(Op::Input, value)
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value)
    }

    pub fn ops(&self) -> Vec<Op> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.nodes.borrow().iter().map(|n| n.value).collect()
    }

    /// Re-evaluates the recorded operations with new input values (in the
    /// order the inputs were created). Constants keep their recorded values.
    pub fn replay(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let nodes = self.nodes.borrow();
        let mut vals = Vec::with_capacity(nodes.len());
        let mut next_input = inputs.iter();
        for node in nodes.iter() {
            let v = match node.op {
                Op::Input => *next_input
                    .next()
                    .ok_or_else(|| Error::config("replay: too few inputs"))?,
                Op::Const => node.value,
                op => eval(op, &vals),
            };
            vals.push(v);
        }
        if next_input.next().is_some() {
            return Err(Error::config("replay: too many inputs"));
        }
        Ok(vals)
    }

    /// Reverse sweep seeded with d(output)/d(output) = 1.
    ///
    /// Fails if any forward value recorded up to `output` is non-finite,
    /// naming the first offending node.
    pub fn gradient(&self, output: Var<'_>) -> Result<Adjoints> {
        let nodes = self.nodes.borrow();
        let end = output.idx as usize + 1;
        if let Some((i, n)) = nodes[..end]
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
        {
            return Err(Error::NonFinite {
                location: format!("tape node {i} ({:?})", n.op),
                value: n.value,
            });
        }
        let mut adj = vec![0.0; nodes.len()];
        adj[output.idx as usize] = 1.0;
        for i in (0..end).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let val = |k: u32| nodes[k as usize].value;
            match nodes[i].op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += g * val(b);
                    adj[b as usize] += g * val(a);
                }
                Op::Div(a, b) => {
                    let vb = val(b);
                    adj[a as usize] += g / vb;
                    adj[b as usize] -= g * nodes[i].value / vb;
                }
                Op::Neg(a) => adj[a as usize] -= g,
                Op::AddConst(a, _) => adj[a as usize] += g,
                Op::MulConst(a, c) => adj[a as usize] += g * c,
                Op::Tanh(a) => {
                    let s = nodes[i].value;
                    adj[a as usize] += g * (1.0 - s * s);
                }
                Op::Sin(a) => adj[a as usize] += g * val(a).cos(),
                Op::Exp(a) => adj[a as usize] += g * nodes[i].value,
            }
        }
        Ok(Adjoints(adj))
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx as usize
    }

    fn unary(self, op: Op, value: f64) -> Self {
        self.tape.push(op, value)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:ident, $sym:tt) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                debug_assert!(std::ptr::eq(self.tape, rhs.tape), "mixing tapes");
                self.tape.push(Op::$op(self.idx, rhs.idx), self.value $sym rhs.value)
            }
        }
    };
}

binop!(Add, add, Add, +);
binop!(Sub, sub, Sub, -);
binop!(Mul, mul, Mul, *);
binop!(Div, div, Div, /);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.idx), -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.idx, c), self.value + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(Op::AddConst(self.idx, -c), self.value - c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(Op::MulConst(self.idx, c), self.value * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.unary(Op::MulConst(self.idx, 1.0 / c), self.value * (1.0 / c))
    }
}

impl Real for Var<'_> {
    fn value(&self) -> f64 {
        self.value
    }
    fn lift(&self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.idx), self.value.tanh())
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin(self.idx), self.value.sin())
    }
    fn exp(self) -> Self {
        self.unary(Op::Exp(self.idx), self.value.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.input(3.0);
        let y = tape.input(-2.0);
        let z = x * y + x * x;
        let g = tape.gradient(z).unwrap();
        assert_eq!(z.value(), 3.0);
        assert_eq!(g.wrt(&x), -2.0 + 6.0);
        assert_eq!(g.wrt(&y), 3.0);
    }

    #[test]
    fn replay_is_bit_identical() {
        let tape = Tape::new();
        let x = tape.input(0.37);
        let y = tape.input(1.9);
        let z = ((x * y).tanh() / (y + 0.5) - x.exp()) * 3.0;
        let _ = z.sin();
        let recorded = tape.values();
        let replayed = tape.replay(&[0.37, 1.9]).unwrap();
        assert_eq!(
            recorded.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            replayed.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let tape = Tape::new();
        let x = tape.input(1.0);
        let zero = tape.input(0.0);
        let bad = x / zero;
        let out = bad * 2.0;
        match tape.gradient(out) {
            Err(Error::NonFinite { location, .. }) => assert!(location.contains("node 2")),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = |a: f64, b: f64| {
            let tape = Tape::new();
            let x = tape.input(a);
            let y = tape.input(b);
            let z = (x * y).sin() * (x - y).exp() / (y * y + 1.0) + (x * 0.5).tanh();
            let g = tape.gradient(z).unwrap();
            (z.value(), g.wrt(&x), g.wrt(&y))
        };
        let (a, b, h) = (0.3, -0.8, 1e-5);
        let (_, gx, gy) = f(a, b);
        let fx = (f(a + h, b).0 - f(a - h, b).0) / (2.0 * h);
        let fy = (f(a, b + h).0 - f(a, b - h).0) / (2.0 * h);
        assert!((gx - fx).abs() < 1e-8);
        assert!((gy - fy).abs() < 1e-8);
    }
}
