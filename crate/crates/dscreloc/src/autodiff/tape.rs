//! Wengert-list tape with precomputed local partials.
//!
//! Each recorded node stores its forward value, an operation tag for
//! diagnostics, and the (parent, ∂node/∂parent) edges. Local partials are
//! computed at record time, so the backward sweep is a single reverse loop
//! accumulating adjoints in deterministic order.

use std::cell::RefCell;

use crate::scalar::Real;

use super::AdError;

/// Operation tags, kept per node so non-finite values can be attributed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Abs,
    Atan2,
    Sigmoid,
    MulAddC,
    Sum,
    DotConst,
    Dot,
}

#[derive(Default)]
struct TapeInner {
    vals: Vec<f64>,
    ops: Vec<Op>,
    spans: Vec<(u32, u32)>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    first_non_finite: Option<(usize, Op)>,
}

impl TapeInner {
    fn push(&mut self, op: Op, val: f64, edges: &[(u32, f64)]) -> u32 {
        let start = self.parents.len() as u32;
        for &(p, d) in edges {
            self.parents.push(p);
            self.partials.push(d);
        }
        let idx = self.vals.len();
        self.vals.push(val);
        self.ops.push(op);
        self.spans.push((start, self.parents.len() as u32));
        if !val.is_finite() && self.first_non_finite.is_none() {
            self.first_non_finite = Some((idx, op));
        }
        idx as u32
    }
}

/// Recording tape for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clear all recorded nodes, keeping allocations for reuse.
    pub fn reset(&mut self) {
        let inner = self.inner.get_mut();
        inner.vals.clear();
        inner.ops.clear();
        inner.spans.clear();
        inner.parents.clear();
        inner.partials.clear();
        inner.first_non_finite = None;
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register one input leaf.
    pub fn input(&self, val: f64) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(Op::Input, val, &[]);
        Var {
            tape: Some(self),
            idx,
            val,
        }
    }

    /// Register a slice of input leaves; they occupy node indices `0..vals.len()`
    /// when called on a fresh tape, which is what [`Tape::gradient`] assumes.
    pub fn inputs(&self, vals: &[f64]) -> Vec<Var<'_>> {
        vals.iter().map(|&v| self.input(v)).collect()
    }

    /// Error if any recorded value is non-finite, naming the first offender.
    pub fn check_finite(&self) -> Result<(), AdError> {
        match self.inner.borrow().first_non_finite {
            Some((index, op)) => Err(AdError::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from `output`; returns ∂output/∂input for the first
    /// `n_inputs` nodes. `adjoints` is scratch storage reused across calls.
    pub fn gradient(&self, output: Var<'_>, n_inputs: usize, adjoints: &mut Vec<f64>) -> Vec<f64> {
        let inner = self.inner.borrow();
        let n = inner.vals.len();
        adjoints.clear();
        adjoints.resize(n, 0.0);
        match output.idx() {
            Some(root) => adjoints[root as usize] = 1.0,
            // Constant output: gradient is identically zero.
            None => return vec![0.0; n_inputs],
        }
        for i in (0..n).rev() {
            let g = adjoints[i];
            if g != 0.0 {
                let (s, e) = inner.spans[i];
                for k in s as usize..e as usize {
                    adjoints[inner.parents[k] as usize] += g * inner.partials[k];
                }
            }
        }
        adjoints[..n_inputs].to_vec()
    }

    fn push(&self, op: Op, val: f64, edges: &[(u32, f64)]) -> u32 {
        self.inner.borrow_mut().push(op, val, edges)
    }
}

const CONST_IDX: u32 = u32::MAX;

/// Scalar handle bound to a [`Tape`]; plain constants carry no tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_const() {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    /// A constant not attached to any tape.
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: CONST_IDX,
            val,
        }
    }

    pub fn is_const(&self) -> bool {
        self.idx == CONST_IDX
    }

    fn idx(&self) -> Option<u32> {
        (self.idx != CONST_IDX).then_some(self.idx)
    }

    fn tape_of(a: Var<'t>, b: Var<'t>) -> Option<&'t Tape> {
        a.tape.or(b.tape)
    }

    fn unary(self, op: Op, val: f64, partial: f64) -> Var<'t> {
        match (self.tape, self.idx()) {
            (Some(tape), Some(idx)) => {
                let new = tape.push(op, val, &[(idx, partial)]);
                Var {
                    tape: Some(tape),
                    idx: new,
                    val,
                }
            }
            _ => Var::constant(val),
        }
    }

    fn binary(a: Var<'t>, b: Var<'t>, op: Op, val: f64, da: f64, db: f64) -> Var<'t> {
        let tape = match Self::tape_of(a, b) {
            Some(t) => t,
            None => return Var::constant(val),
        };
        let mut edges = [(0u32, 0.0f64); 2];
        let mut n = 0;
        if let Some(ia) = a.idx() {
            edges[n] = (ia, da);
            n += 1;
        }
        if let Some(ib) = b.idx() {
            edges[n] = (ib, db);
            n += 1;
        }
        let new = tape.push(op, val, &edges[..n]);
        Var {
            tape: Some(tape),
            idx: new,
            val,
        }
    }
}

impl PartialEq for Var<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::binary(self, rhs, Op::Add, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::binary(self, rhs, Op::Sub, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::binary(self, rhs, Op::Mul, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        let inv = 1.0 / rhs.val;
        Var::binary(
            self,
            rhs,
            Op::Div,
            self.val * inv,
            inv,
            -self.val * inv * inv,
        )
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        self.unary(Op::Neg, -self.val, -1.0)
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn c(v: f64) -> Self {
        Var::constant(v)
    }

    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        self.unary(Op::Sqrt, r, 0.5 / r)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(Op::Exp, e, e)
    }

    fn ln(self) -> Self {
        self.unary(Op::Ln, self.val.ln(), 1.0 / self.val)
    }

    fn sin(self) -> Self {
        self.unary(Op::Sin, self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(Op::Cos, self.val.cos(), -self.val.sin())
    }

    fn abs(self) -> Self {
        // Right-derivative at the kink: sign(0) taken as +1.
        let d = if self.val >= 0.0 { 1.0 } else { -1.0 };
        self.unary(Op::Abs, self.val.abs(), d)
    }

    fn atan2(self, x: Self) -> Self {
        let y = self;
        let denom = y.val * y.val + x.val * x.val;
        Var::binary(
            y,
            x,
            Op::Atan2,
            y.val.atan2(x.val),
            x.val / denom,
            -y.val / denom,
        )
    }

    fn sigmoid(self) -> Self {
        let s = 1.0 / (1.0 + (-self.val).exp());
        self.unary(Op::Sigmoid, s, s * (1.0 - s))
    }

    fn mul_add_c(self, a: f64, b: f64) -> Self {
        self.unary(Op::MulAddC, a * self.val + b, a)
    }

    fn sum_slice(xs: &[Self]) -> Self {
        let mut tape = None;
        let mut acc = 0.0;
        let mut edges: Vec<(u32, f64)> = Vec::with_capacity(xs.len());
        for x in xs {
            acc += x.val;
            if let Some(i) = x.idx() {
                tape = tape.or(x.tape);
                edges.push((i, 1.0));
            }
        }
        match tape {
            Some(t) => {
                let idx = t.push(Op::Sum, acc, &edges);
                Var {
                    tape: Some(t),
                    idx,
                    val: acc,
                }
            }
            None => Var::constant(acc),
        }
    }

    fn dot_const(xs: &[Self], ws: &[f64]) -> Self {
        debug_assert_eq!(xs.len(), ws.len());
        let mut tape = None;
        let mut acc = 0.0;
        let mut edges: Vec<(u32, f64)> = Vec::with_capacity(xs.len());
        for (x, &w) in xs.iter().zip(ws) {
            acc += x.val * w;
            if let Some(i) = x.idx() {
                tape = tape.or(x.tape);
                edges.push((i, w));
            }
        }
        match tape {
            Some(t) => {
                let idx = t.push(Op::DotConst, acc, &edges);
                Var {
                    tape: Some(t),
                    idx,
                    val: acc,
                }
            }
            None => Var::constant(acc),
        }
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut tape = None;
        let mut acc = 0.0;
        let mut edges: Vec<(u32, f64)> = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            acc += x.val * y.val;
            if let Some(i) = x.idx() {
                tape = tape.or(x.tape);
                edges.push((i, y.val));
            }
            if let Some(j) = y.idx() {
                tape = tape.or(y.tape);
                edges.push((j, x.val));
            }
        }
        match tape {
            Some(t) => {
                let idx = t.push(Op::Dot, acc, &edges);
                Var {
                    tape: Some(t),
                    idx,
                    val: acc,
                }
            }
            None => Var::constant(acc),
        }
    }
}
