//! Tape-based reverse-mode differentiation.
//!
//! Every elementary operation on a [`Var`] appends one node to its [`Tape`],
//! together with the local partial derivatives with respect to its parents.
//! [`Tape::backward`] then walks the nodes once in reverse creation order and
//! accumulates adjoints, which yields the gradient of a scalar output with
//! respect to every leaf in a single sweep.
//!
//! Numerical code in this crate is written against the [`Real`] trait so the
//! same rollout and cost functions run on plain `f64` (fast evaluation) and on
//! `Var` (gradient recording).
//!
//! Constants never touch the tape: a `Var` created with [`Tape::constant`] (or
//! produced by an operation whose operands are all constants) carries only a
//! value, and edges towards it are dropped when a node is recorded.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

const CONST_ID: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    first_edge: u32,
    num_edges: u32,
}

#[derive(Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    leaves: Vec<u32>,
}

/// Append-only record of elementary operations.
///
/// Nodes are topologically ordered by construction: a node can only reference
/// parents that already exist. A tape is meant to be used from one thread.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(2 * nodes),
                leaves: Vec::new(),
            }),
        }
    }

    /// Creates a differentiable leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len() as u32;
        let first_edge = inner.edges.len() as u32;
        inner.nodes.push(Node {
            first_edge,
            num_edges: 0,
        });
        inner.leaves.push(idx);
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// A value with no derivative; it occupies no tape storage.
    pub fn constant(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            idx: CONST_ID,
            val: value,
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_leaves(&self) -> usize {
        self.inner.borrow().leaves.len()
    }

    fn record<'t>(&'t self, value: f64, parents: &[(u32, f64)]) -> Var<'t> {
        let mut inner = self.inner.borrow_mut();
        let first_edge = inner.edges.len() as u32;
        for &(parent, partial) in parents {
            if parent != CONST_ID {
                inner.edges.push(Edge { parent, partial });
            }
        }
        let num_edges = inner.edges.len() as u32 - first_edge;
        if num_edges == 0 {
            return Var {
                tape: self,
                idx: CONST_ID,
                val: value,
            };
        }
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            first_edge,
            num_edges,
        });
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    /// `acc + Σ a_i b_i` as one node.
    fn record_dot<'t>(&'t self, acc: Var<'t>, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        let mut inner = self.inner.borrow_mut();
        let first_edge = inner.edges.len() as u32;
        let mut value = acc.val;
        if acc.idx != CONST_ID {
            inner.edges.push(Edge {
                parent: acc.idx,
                partial: 1.0,
            });
        }
        for (x, y) in a.iter().zip(b) {
            value += x.val * y.val;
            if x.idx != CONST_ID {
                inner.edges.push(Edge {
                    parent: x.idx,
                    partial: y.val,
                });
            }
            if y.idx != CONST_ID {
                inner.edges.push(Edge {
                    parent: y.idx,
                    partial: x.val,
                });
            }
        }
        self.finish(inner, first_edge, value)
    }

    /// `acc + Σ a_i c_i` with constant weights, as one node.
    fn record_dot_const<'t>(&'t self, acc: Var<'t>, a: &[Var<'t>], c: &[f64]) -> Var<'t> {
        let mut inner = self.inner.borrow_mut();
        let first_edge = inner.edges.len() as u32;
        let mut value = acc.val;
        if acc.idx != CONST_ID {
            inner.edges.push(Edge {
                parent: acc.idx,
                partial: 1.0,
            });
        }
        for (x, &w) in a.iter().zip(c) {
            value += x.val * w;
            if x.idx != CONST_ID && w != 0.0 {
                inner.edges.push(Edge {
                    parent: x.idx,
                    partial: w,
                });
            }
        }
        self.finish(inner, first_edge, value)
    }

    fn finish<'t>(
        &'t self,
        mut inner: std::cell::RefMut<'_, Inner>,
        first_edge: u32,
        value: f64,
    ) -> Var<'t> {
        let num_edges = inner.edges.len() as u32 - first_edge;
        if num_edges == 0 {
            return Var {
                tape: self,
                idx: CONST_ID,
                val: value,
            };
        }
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            first_edge,
            num_edges,
        });
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    /// Reverse sweep from `output`; O(tape length).
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(output.tape, self) {
            return Err(Error::NotOnTape);
        }
        let inner = self.inner.borrow();
        let mut adjoints = vec![0.0; inner.nodes.len()];
        if output.idx != CONST_ID {
            adjoints[output.idx as usize] = 1.0;
            for i in (0..=output.idx as usize).rev() {
                let adj = adjoints[i];
                if adj == 0.0 {
                    continue;
                }
                let node = inner.nodes[i];
                let start = node.first_edge as usize;
                for edge in &inner.edges[start..start + node.num_edges as usize] {
                    adjoints[edge.parent as usize] += adj * edge.partial;
                }
            }
        }
        Ok(Gradients {
            adjoints,
            leaves: inner.leaves.clone(),
        })
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    adjoints: Vec<f64>,
    leaves: Vec<u32>,
}

impl Gradients {
    /// Derivative with respect to `v`; zero for constants.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.idx == CONST_ID {
            0.0
        } else {
            self.adjoints[v.idx as usize]
        }
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }

    /// Derivatives for every leaf, in creation order.
    pub fn leaves(&self) -> Vec<f64> {
        self.leaves
            .iter()
            .map(|&i| self.adjoints[i as usize])
            .collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.idx == CONST_ID {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    pub fn is_constant(self) -> bool {
        self.idx == CONST_ID
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    #[inline]
    fn unary(self, value: f64, partial: f64) -> Var<'t> {
        if self.idx == CONST_ID {
            return Var {
                tape: self.tape,
                idx: CONST_ID,
                val: value,
            };
        }
        self.tape.record(value, &[(self.idx, partial)])
    }

    #[inline]
    fn binary(self, other: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "operands on different tapes");
        if self.idx == CONST_ID && other.idx == CONST_ID {
            return Var {
                tape: self.tape,
                idx: CONST_ID,
                val: value,
            };
        }
        self.tape.record(value, &[(self.idx, da), (other.idx, db)])
    }

    pub fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }

    pub fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }

    /// Natural log; follows IEEE semantics for non-positive input.
    pub fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    pub fn checked_ln(self) -> Result<Self> {
        if self.val <= 0.0 {
            return Err(Error::NonPositiveOperand {
                op: "log",
                value: self.val,
            });
        }
        Ok(self.ln())
    }

    pub fn checked_div(self, rhs: Self) -> Result<Self> {
        if rhs.val == 0.0 {
            return Err(Error::NonPositiveOperand {
                op: "division",
                value: rhs.val,
            });
        }
        Ok(self / rhs)
    }

    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(s, d)
    }

    pub fn square(self) -> Self {
        self.unary(self.val * self.val, 2.0 * self.val)
    }

    pub fn powi(self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.val.powi(n - 1)
        };
        self.unary(self.val.powi(n), d)
    }

    /// |x| with subgradient 0 at the kink.
    pub fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.val.abs(), d)
    }

    /// sqrt(x² + eps²): a differentiable surrogate of |x|.
    pub fn abs_smooth(self, eps: f64) -> Self {
        let s = (self.val * self.val + eps * eps).sqrt();
        self.unary(s, self.val / s)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.val;
        self.unary(r, -r * r)
    }

    /// `self + Σ a_i b_i`.
    pub fn add_dot(self, a: &[Var<'t>], b: &[Var<'t>]) -> Self {
        self.tape.record_dot(self, a, b)
    }

    /// `self + Σ a_i c_i`.
    pub fn add_dot_const(self, a: &[Var<'t>], c: &[f64]) -> Self {
        self.tape.record_dot_const(self, a, c)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self - rhs.val, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let q = self / rhs.val;
        rhs.unary(q, -q / rhs.val)
    }
}

/// Scalar arithmetic shared by `f64` and [`Var`].
pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn square(self) -> Self;
    fn abs(self) -> Self;
    fn recip(self) -> Self;
    /// `self + Σ a_i b_i`.
    fn add_dot(self, a: &[Self], b: &[Self]) -> Self;
    /// `self + Σ a_i c_i`.
    fn add_dot_const(self, a: &[Self], c: &[f64]) -> Self;
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn square(self) -> Self {
        self * self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn recip(self) -> Self {
        f64::recip(self)
    }
    #[inline]
    fn add_dot(self, a: &[Self], b: &[Self]) -> Self {
        a.iter().zip(b).fold(self, |acc, (x, y)| acc + x * y)
    }
    #[inline]
    fn add_dot_const(self, a: &[Self], c: &[f64]) -> Self {
        self.add_dot(a, c)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn square(self) -> Self {
        Var::square(self)
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn recip(self) -> Self {
        Var::recip(self)
    }
    fn add_dot(self, a: &[Self], b: &[Self]) -> Self {
        Var::add_dot(self, a, b)
    }
    fn add_dot_const(self, a: &[Self], c: &[f64]) -> Self {
        Var::add_dot_const(self, a, c)
    }
}

/// A scalar function that can be evaluated on any [`Real`].
pub trait Differentiable {
    fn eval<T: Real>(&self, x: &[T]) -> Result<T>;
}

/// Value and gradient of `f` at `x` via one forward recording and one reverse sweep.
pub fn value_and_grad<F: Differentiable + ?Sized>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars = tape.vars(x);
    let out = f.eval(&vars)?;
    let grads = tape.backward(out)?;
    Ok((out.value(), grads.wrt_all(&vars)))
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub passed: bool,
}

/// Compares the reverse-mode gradient with central differences
/// `(f(x + h e_i) − f(x − h e_i)) / 2h`.
///
/// The relative error of coordinate `i` is `|a − n| / max(|a|, |n|, floor)`
/// where `floor = 1e-6 · max(1, ‖a‖∞)`, so coordinates whose derivative is
/// negligible next to the largest one are compared in absolute terms.
/// Kinks at `x` make the two disagree; that is reported, not hidden.
pub fn grad_check<F: Differentiable + ?Sized>(
    f: &F,
    x: &[f64],
    h: f64,
    tol: f64,
) -> Result<GradCheck> {
    let (_, analytic) = value_and_grad(f, x)?;
    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f.eval(&probe)?;
        probe[i] = x[i] - h;
        let down = f.eval(&probe)?;
        probe[i] = x[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let scale = analytic.iter().fold(1.0_f64, |m, g| m.max(g.abs()));
    let floor = 1e-6 * scale;
    let mut max_rel_error = 0.0;
    let mut worst_coord = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > max_rel_error {
            max_rel_error = err;
            worst_coord = i;
        }
    }
    Ok(GradCheck {
        passed: max_rel_error < tol,
        analytic,
        numeric,
        max_rel_error,
        worst_coord,
    })
}
