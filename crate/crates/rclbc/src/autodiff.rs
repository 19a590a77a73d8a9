//! Scalar reverse-mode automatic differentiation on a flat tape.
//!
//! The same numeric code drives both inference and training: [`Real`] is
//! implemented by plain `f64` (no recording) and by [`Var`] (records every
//! operation). Because both paths execute identical expression sequences,
//! taped forward values match the plain forward pass bit for bit.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

/// Scalar abstraction shared by the inference and training paths.
pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn value(self) -> f64;
    /// A constant carried on the same tape as `self` (plain value for `f64`).
    fn constant_like(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn atanh(self) -> Self;
    fn ln(self) -> Self;
    fn sigmoid(self) -> Self;
    fn scale(self, c: f64) -> Self;
    fn add_const(self, c: f64) -> Self;
    /// Clamp to `[-bound, bound]`; gradient is zero outside the open interval.
    fn clamp_sym(self, bound: f64) -> Self;
    /// Clamp to `[eps, 1 - eps]`; gradient is zero outside the open interval.
    fn clamp_prob(self, eps: f64) -> Self;
}

#[inline]
fn sigmoid_f64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn constant_like(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn atanh(self) -> Self {
        f64::atanh(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
    #[inline]
    fn add_const(self, c: f64) -> Self {
        self + c
    }
    #[inline]
    fn clamp_sym(self, bound: f64) -> Self {
        self.clamp(-bound, bound)
    }
    #[inline]
    fn clamp_prob(self, eps: f64) -> Self {
        self.clamp(eps, 1.0 - eps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Neg,
    Tanh,
    Atanh,
    Ln,
    Sigmoid,
    /// Multiply by the constant in `aux`.
    Scale,
    /// Add the constant in `aux`.
    AddConst,
    /// Clamp to `[-aux, aux]`.
    ClampSym,
    /// Clamp to `[aux, 1 - aux]`.
    ClampProb,
    /// Hard step forward (w >= 0 maps to 1), sigmoid-derivative backward.
    Dsf,
}

#[derive(Clone, Copy)]
struct Node {
    op: Op,
    a: u32,
    b: u32,
    val: f64,
    aux: f64,
}

/// Records one forward pass; freed or reused per batch.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Tape { nodes: RefCell::new(Vec::with_capacity(cap)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(node);
        idx
    }

    /// A differentiable input.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node { op: Op::Leaf, a: 0, b: 0, val: value, aux: 0.0 });
        Var { tape: self, idx }
    }

    /// A recorded value that never receives gradient.
    pub fn constant(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node { op: Op::Const, a: 0, b: 0, val: value, aux: 0.0 });
        Var { tape: self, idx }
    }

    /// Reverse sweep from `output`; returns the adjoint of every node.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads = vec![0.0f64; nodes.len()];
        grads[output.idx as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let go = grads[i];
            if go == 0.0 {
                continue;
            }
            let n = nodes[i];
            let (a, b) = (n.a as usize, n.b as usize);
            match n.op {
                Op::Leaf | Op::Const => {}
                Op::Add => {
                    grads[a] += go;
                    grads[b] += go;
                }
                Op::Sub => {
                    grads[a] += go;
                    grads[b] -= go;
                }
                Op::Mul => {
                    grads[a] += go * nodes[b].val;
                    grads[b] += go * nodes[a].val;
                }
                Op::Neg => grads[a] -= go,
                Op::Tanh => grads[a] += go * (1.0 - n.val * n.val),
                Op::Atanh => {
                    let x = nodes[a].val;
                    grads[a] += go / (1.0 - x * x);
                }
                Op::Ln => grads[a] += go / nodes[a].val,
                Op::Sigmoid => grads[a] += go * n.val * (1.0 - n.val),
                Op::Scale => grads[a] += go * n.aux,
                Op::AddConst => grads[a] += go,
                Op::ClampSym => {
                    let x = nodes[a].val;
                    if x > -n.aux && x < n.aux {
                        grads[a] += go;
                    }
                }
                Op::ClampProb => {
                    let x = nodes[a].val;
                    if x > n.aux && x < 1.0 - n.aux {
                        grads[a] += go;
                    }
                }
                Op::Dsf => {
                    let s = sigmoid_f64(nodes[a].val);
                    grads[a] += go * s * (1.0 - s);
                }
            }
        }
        Gradients { grads }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.grads[var.idx as usize]
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl<'t> Var<'t> {
    fn unary(self, op: Op, val: f64, aux: f64) -> Var<'t> {
        let idx = self.tape.push(Node { op, a: self.idx, b: 0, val, aux });
        Var { tape: self.tape, idx }
    }

    fn binary(self, rhs: Var<'t>, op: Op, val: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars must share a tape");
        let idx = self.tape.push(Node { op, a: self.idx, b: rhs.idx, val, aux: 0.0 });
        Var { tape: self.tape, idx }
    }

    /// Hard threshold forward (w >= 0 maps to 1.0), surrogate backward.
    pub fn dsf(self) -> Var<'t> {
        let v = if self.value() >= 0.0 { 1.0 } else { 0.0 };
        self.unary(Op::Dsf, v, 0.0)
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.binary(rhs, Op::Add, v)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.binary(rhs, Op::Sub, v)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let v = self.value() * rhs.value();
        self.binary(rhs, Op::Mul, v)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        let v = -self.value();
        self.unary(Op::Neg, v, 0.0)
    }
}

impl Real for Var<'_> {
    fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.idx as usize].val
    }
    fn constant_like(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn tanh(self) -> Self {
        let v = f64::tanh(self.value());
        self.unary(Op::Tanh, v, 0.0)
    }
    fn atanh(self) -> Self {
        let v = f64::atanh(self.value());
        self.unary(Op::Atanh, v, 0.0)
    }
    fn ln(self) -> Self {
        let v = f64::ln(self.value());
        self.unary(Op::Ln, v, 0.0)
    }
    fn sigmoid(self) -> Self {
        let v = sigmoid_f64(self.value());
        self.unary(Op::Sigmoid, v, 0.0)
    }
    fn scale(self, c: f64) -> Self {
        let v = self.value() * c;
        self.unary(Op::Scale, v, c)
    }
    fn add_const(self, c: f64) -> Self {
        let v = self.value() + c;
        self.unary(Op::AddConst, v, c)
    }
    fn clamp_sym(self, bound: f64) -> Self {
        let v = self.value().clamp(-bound, bound);
        self.unary(Op::ClampSym, v, bound)
    }
    fn clamp_prob(self, eps: f64) -> Self {
        let v = self.value().clamp(eps, 1.0 - eps);
        self.unary(Op::ClampProb, v, eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn product_and_fanout() {
        let tape = Tape::new();
        let x = tape.leaf(3.0);
        let y = x * x + x; // x^2 + x
        assert_eq!(y.value(), 12.0);
        let g = tape.backward(y);
        assert_eq!(g.wrt(x), 7.0); // 2x + 1
    }

    #[test]
    fn transcendental_chain_matches_finite_differences() {
        let f = |x: f64| (2.0 * x).tanh().atanh().sigmoid().ln();
        let points = [0.3, -0.7, 1.1];
        for &p in &points {
            let tape = Tape::new();
            let x = tape.leaf(p);
            let y = x.scale(2.0).tanh().atanh().sigmoid().ln();
            assert!((y.value() - f(p)).abs() < 1e-12);
            let g = tape.backward(y);
            let numeric = fd(f, p, 1e-6);
            assert!(
                (g.wrt(x) - numeric).abs() < 1e-5,
                "adjoint {} vs fd {} at {p}",
                g.wrt(x),
                numeric
            );
        }
    }

    #[test]
    fn mixed_expression_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(0.5);
        let b = tape.leaf(-1.5);
        // f = a*b + sigmoid(a) - ln(-b)
        let y = a * b + a.sigmoid() - (-b).ln();
        let g = tape.backward(y);
        let fa = |a: f64| a * -1.5 + sigmoid_f64(a) - (1.5f64).ln();
        let fb = |b: f64| 0.5 * b + sigmoid_f64(0.5) - (-b).ln();
        assert!((g.wrt(a) - fd(fa, 0.5, 1e-6)).abs() < 1e-6);
        assert!((g.wrt(b) - fd(fb, -1.5, 1e-6)).abs() < 1e-6);
    }

    #[test]
    fn clamp_gradients_are_zero_outside() {
        let tape = Tape::new();
        let inside = tape.leaf(0.5);
        let outside = tape.leaf(2.0);
        let y = inside.clamp_sym(1.0) + outside.clamp_sym(1.0);
        let g = tape.backward(y);
        assert_eq!(g.wrt(inside), 1.0);
        assert_eq!(g.wrt(outside), 0.0);
        assert_eq!(y.value(), 1.5);
    }

    #[test]
    fn clamp_prob_bounds() {
        let tape = Tape::new();
        let hi = tape.leaf(0.999_999_999);
        let clamped = hi.clamp_prob(1e-7);
        assert_eq!(clamped.value(), 1.0 - 1e-7);
        let g = tape.backward(clamped);
        assert_eq!(g.wrt(hi), 0.0);
    }

    #[test]
    fn dsf_forward_and_backward() {
        let tape = Tape::new();
        let neg = tape.leaf(-0.005);
        let pos = tape.leaf(0.003);
        let zero = tape.leaf(0.0);
        assert_eq!(neg.dsf().value(), 0.0);
        assert_eq!(pos.dsf().value(), 1.0);
        assert_eq!(zero.dsf().value(), 1.0); // boundary maps to 1
        let y = zero.dsf();
        let g = tape.backward(y);
        assert_eq!(g.wrt(zero), 0.25); // sigma(0) * (1 - sigma(0))
    }

    #[test]
    fn fanned_out_paths_accumulate_through_constants() {
        let tape = Tape::new();
        let x = tape.leaf(2.0);
        let c = tape.constant(3.0);
        let y = x * c + x + x;
        assert_eq!(y.value(), 10.0);
        let g = tape.backward(y);
        assert_eq!(g.wrt(x), 5.0);
    }

    #[test]
    fn f64_and_var_paths_are_bit_identical() {
        // One expression, two Real implementations.
        fn expr<T: Real>(x: T, y: T) -> T {
            let t = (x * y).scale(0.5).tanh();
            let u = t.clamp_sym(1.0 - 1e-7).atanh().scale(2.0);
            (u + x.add_const(1.0)).sigmoid().clamp_prob(1e-7).ln()
        }
        for (xv, yv) in [(0.7, -0.3), (12.0, 3.0), (-40.0, 2.0)] {
            let plain = expr(xv, yv);
            let tape = Tape::new();
            let taped = expr(tape.leaf(xv), tape.leaf(yv)).value();
            assert_eq!(plain.to_bits(), taped.to_bits());
        }
    }
}
