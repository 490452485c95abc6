//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only arena of scalar nodes. Values are computed
//! eagerly as nodes are created (define-by-run), so a graph is rebuilt for
//! every loss evaluation. Operands always precede their users, which makes the
//! node index a valid topological order for both sweeps.
//!
//! Derivatives with respect to an input variable are produced symbolically by
//! [`Graph::input_derivative`]: the result is a new expression in the same
//! graph, so it can itself be differentiated with respect to the parameters.

use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Expr(u32);

impl Expr {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Var,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Tanh(u32),
    Exp(u32),
    Sin(u32),
    Cos(u32),
    PowI(u32, i32),
    Neg(u32),
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Const => "constant",
            Op::Var => "variable",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::PowI(..) => "powi",
            Op::Neg(_) => "neg",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
}

/// Gradient of a scalar with respect to a list of variables, in the order requested.
pub type GradientVector = Vec<f64>;

const NO_TANGENT: u32 = u32::MAX;

/// Expression arena.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    zero: Expr,
    one: Expr,
    // Memoized tangents with respect to `tangent_var`, tagged with an epoch so
    // switching variables does not require clearing the table.
    tangent_var: Option<Expr>,
    epoch: u32,
    tangents: Vec<(u32, u32)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_capacity(16)
    }

    pub fn with_capacity(cap: usize) -> Self {
        let mut g = Graph {
            nodes: Vec::with_capacity(cap),
            zero: Expr(0),
            one: Expr(1),
            tangent_var: None,
            epoch: 0,
            tangents: Vec::new(),
        };
        g.zero = g.push(Op::Const, 0.0);
        g.one = g.push(Op::Const, 1.0);
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: f64) -> Expr {
        let id = self.nodes.len();
        assert!(id < NO_TANGENT as usize, "expression graph too large");
        self.nodes.push(Node { op, value });
        Expr(id as u32)
    }

    #[inline]
    fn val(&self, i: u32) -> f64 {
        self.nodes[i as usize].value
    }

    /// Current cached value of a node.
    #[inline]
    pub fn value(&self, e: Expr) -> f64 {
        self.val(e.0)
    }

    fn const_value(&self, e: Expr) -> Option<f64> {
        match self.nodes[e.index()].op {
            Op::Const => Some(self.nodes[e.index()].value),
            _ => None,
        }
    }

    fn is_zero(&self, e: Expr) -> bool {
        self.const_value(e) == Some(0.0)
    }

    fn is_one(&self, e: Expr) -> bool {
        self.const_value(e) == Some(1.0)
    }

    pub fn zero(&self) -> Expr {
        self.zero
    }

    pub fn one(&self) -> Expr {
        self.one
    }

    pub fn constant(&mut self, value: f64) -> Expr {
        if value == 0.0 {
            self.zero
        } else if value == 1.0 {
            self.one
        } else {
            self.push(Op::Const, value)
        }
    }

    /// Create an input variable holding `value`.
    pub fn variable(&mut self, value: f64) -> Expr {
        self.push(Op::Var, value)
    }

    pub fn is_variable(&self, e: Expr) -> bool {
        matches!(self.nodes.get(e.index()).map(|n| n.op), Some(Op::Var))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        if self.is_zero(a) {
            return b;
        }
        if self.is_zero(b) {
            return a;
        }
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        if self.is_zero(b) {
            return a;
        }
        if self.is_zero(a) {
            return self.neg(b);
        }
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        if self.is_zero(a) || self.is_zero(b) {
            return self.zero;
        }
        if self.is_one(a) {
            return b;
        }
        if self.is_one(b) {
            return a;
        }
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Expr, b: Expr) -> Expr {
        if self.is_zero(a) {
            return self.zero;
        }
        if self.is_one(b) {
            return a;
        }
        let v = self.value(a) / self.value(b);
        self.push(Op::Div(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        if self.is_zero(a) {
            return self.zero;
        }
        let v = -self.value(a);
        self.push(Op::Neg(a.0), v)
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        let v = self.value(a).tanh();
        self.push(Op::Tanh(a.0), v)
    }

    pub fn exp(&mut self, a: Expr) -> Expr {
        let v = self.value(a).exp();
        self.push(Op::Exp(a.0), v)
    }

    pub fn sin(&mut self, a: Expr) -> Expr {
        let v = self.value(a).sin();
        self.push(Op::Sin(a.0), v)
    }

    pub fn cos(&mut self, a: Expr) -> Expr {
        let v = self.value(a).cos();
        self.push(Op::Cos(a.0), v)
    }

    pub fn powi(&mut self, a: Expr, n: i32) -> Expr {
        match n {
            0 => self.one,
            1 => a,
            _ => {
                let v = self.value(a).powi(n);
                self.push(Op::PowI(a.0, n), v)
            }
        }
    }

    /// `c * a` for a plain number `c`.
    pub fn scale(&mut self, c: f64, a: Expr) -> Expr {
        let c = self.constant(c);
        self.mul(c, a)
    }

    pub fn sum(&mut self, terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms.into_iter().fold(self.zero, |acc, t| self.add(acc, t))
    }

    fn forward_value(&self, op: Op, old: f64) -> f64 {
        match op {
            Op::Const | Op::Var => old,
            Op::Add(a, b) => self.val(a) + self.val(b),
            Op::Sub(a, b) => self.val(a) - self.val(b),
            Op::Mul(a, b) => self.val(a) * self.val(b),
            Op::Div(a, b) => self.val(a) / self.val(b),
            Op::Tanh(a) => self.val(a).tanh(),
            Op::Exp(a) => self.val(a).exp(),
            Op::Sin(a) => self.val(a).sin(),
            Op::Cos(a) => self.val(a).cos(),
            Op::PowI(a, n) => self.val(a).powi(n),
            Op::Neg(a) => -self.val(a),
        }
    }

    /// Rebind variables, recompute every node up to `root`, and return its value.
    ///
    /// Fails with [`Error::NonFinite`] naming the first node whose value is not
    /// finite (division by zero, `exp` overflow, ...).
    pub fn evaluate(&mut self, root: Expr, bindings: &[(Expr, f64)]) -> Result<f64> {
        for &(var, value) in bindings {
            if !self.is_variable(var) {
                return Err(Error::invalid(format!("node {} is not a variable", var.0)));
            }
            self.nodes[var.index()].value = value;
        }
        for i in 0..=root.index() {
            let node = self.nodes[i];
            let v = self.forward_value(node.op, node.value);
            self.nodes[i].value = v;
        }
        self.check_finite(root)?;
        Ok(self.value(root))
    }

    /// Report the first non-finite node among `0..=root`.
    pub fn check_finite(&self, root: Expr) -> Result<()> {
        match self.nodes[..=root.index()]
            .iter()
            .position(|n| !n.value.is_finite())
        {
            Some(i) => Err(Error::NonFinite {
                node: i,
                kind: self.nodes[i].op.name(),
            }),
            None => Ok(()),
        }
    }

    /// Reverse sweep from the scalar `loss`. Variables that `loss` does not
    /// depend on receive a zero entry.
    pub fn gradient(&self, loss: Expr, wrt: &[Expr]) -> GradientVector {
        let adj = self.adjoints(loss);
        wrt.iter()
            .map(|v| adj.get(v.index()).copied().unwrap_or(0.0))
            .collect()
    }

    /// Adjoint of every node `0..=loss`.
    pub fn adjoints(&self, loss: Expr) -> Vec<f64> {
        let mut adj = vec![0.0; loss.index() + 1];
        adj[loss.index()] = 1.0;
        for i in (0..=loss.index()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let y = self.nodes[i].value;
            match self.nodes[i].op {
                Op::Const | Op::Var => {}
                Op::Add(l, r) => {
                    adj[l as usize] += a;
                    adj[r as usize] += a;
                }
                Op::Sub(l, r) => {
                    adj[l as usize] += a;
                    adj[r as usize] -= a;
                }
                Op::Mul(l, r) => {
                    adj[l as usize] += a * self.val(r);
                    adj[r as usize] += a * self.val(l);
                }
                Op::Div(l, r) => {
                    let d = self.val(r);
                    adj[l as usize] += a / d;
                    adj[r as usize] -= a * y / d;
                }
                Op::Tanh(x) => adj[x as usize] += a * (1.0 - y * y),
                Op::Exp(x) => adj[x as usize] += a * y,
                Op::Sin(x) => adj[x as usize] += a * self.val(x).cos(),
                Op::Cos(x) => adj[x as usize] -= a * self.val(x).sin(),
                Op::PowI(x, n) => adj[x as usize] += a * n as f64 * self.val(x).powi(n - 1),
                Op::Neg(x) => adj[x as usize] -= a,
            }
        }
        adj
    }

    /// Symbolic derivative of `output` with respect to the input variable `var`.
    ///
    /// The returned expression lives in this graph and is differentiable with
    /// respect to every other variable. Only orders 1 and 2 are supported.
    pub fn input_derivative(&mut self, output: Expr, var: Expr, order: u32) -> Result<Expr> {
        if !(1..=2).contains(&order) {
            return Err(Error::invalid(format!(
                "derivative order must be 1 or 2, got {order}"
            )));
        }
        if !self.is_variable(var) {
            return Err(Error::invalid("can only differentiate with respect to a variable"));
        }
        let mut e = output;
        for _ in 0..order {
            e = self.tangent(e, var);
        }
        Ok(e)
    }

    fn memo(&self, i: u32) -> Option<u32> {
        match self.tangents.get(i as usize) {
            Some(&(epoch, t)) if epoch == self.epoch && t != NO_TANGENT => Some(t),
            _ => None,
        }
    }

    fn tangent(&mut self, output: Expr, var: Expr) -> Expr {
        if self.tangent_var != Some(var) {
            self.tangent_var = Some(var);
            self.epoch = self.epoch.wrapping_add(1);
            if self.epoch == 0 {
                self.tangents.clear();
                self.epoch = 1;
            }
        }
        if output.0 < var.0 {
            return self.zero;
        }

        // Nodes reachable from `output` that may depend on `var` and have no tangent yet.
        let mut pending = Vec::new();
        let mut stack = vec![output.0];
        let mut seen = std::collections::HashSet::new();
        while let Some(i) = stack.pop() {
            if i < var.0 || self.memo(i).is_some() || !seen.insert(i) {
                continue;
            }
            pending.push(i);
            match self.nodes[i as usize].op {
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Op::Tanh(a)
                | Op::Exp(a)
                | Op::Sin(a)
                | Op::Cos(a)
                | Op::PowI(a, _)
                | Op::Neg(a) => stack.push(a),
                Op::Const | Op::Var => {}
            }
        }
        pending.sort_unstable();

        for i in pending {
            let t = self.tangent_rule(i, var);
            if self.tangents.len() < self.nodes.len() {
                self.tangents.resize(self.nodes.len(), (0, NO_TANGENT));
            }
            self.tangents[i as usize] = (self.epoch, t.0);
        }
        Expr(self.memo(output.0).expect("tangent computed"))
    }

    fn d(&self, i: u32, var: Expr) -> Expr {
        if i < var.0 {
            return self.zero;
        }
        Expr(self.memo(i).expect("operand tangent precedes user"))
    }

    fn tangent_rule(&mut self, i: u32, var: Expr) -> Expr {
        let node = Expr(i);
        match self.nodes[i as usize].op {
            Op::Const => self.zero,
            Op::Var => {
                if node == var {
                    self.one
                } else {
                    self.zero
                }
            }
            Op::Add(a, b) => {
                let (da, db) = (self.d(a, var), self.d(b, var));
                self.add(da, db)
            }
            Op::Sub(a, b) => {
                let (da, db) = (self.d(a, var), self.d(b, var));
                self.sub(da, db)
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.d(a, var), self.d(b, var));
                let l = self.mul(da, Expr(b));
                let r = self.mul(Expr(a), db);
                self.add(l, r)
            }
            Op::Div(a, b) => {
                // (da - y db) / b
                let (da, db) = (self.d(a, var), self.d(b, var));
                let ydb = self.mul(node, db);
                let num = self.sub(da, ydb);
                self.div(num, Expr(b))
            }
            Op::Tanh(a) => {
                let da = self.d(a, var);
                if self.is_zero(da) {
                    return self.zero;
                }
                let y2 = self.powi(node, 2);
                let one = self.one;
                let s = self.sub(one, y2);
                self.mul(s, da)
            }
            Op::Exp(a) => {
                let da = self.d(a, var);
                self.mul(node, da)
            }
            Op::Sin(a) => {
                let da = self.d(a, var);
                if self.is_zero(da) {
                    return self.zero;
                }
                let c = self.cos(Expr(a));
                self.mul(c, da)
            }
            Op::Cos(a) => {
                let da = self.d(a, var);
                if self.is_zero(da) {
                    return self.zero;
                }
                let s = self.sin(Expr(a));
                let ns = self.neg(s);
                self.mul(ns, da)
            }
            Op::PowI(a, n) => {
                let da = self.d(a, var);
                if self.is_zero(da) {
                    return self.zero;
                }
                let p = self.powi(Expr(a), n - 1);
                let c = self.scale(n as f64, p);
                self.mul(c, da)
            }
            Op::Neg(a) => {
                let da = self.d(a, var);
                self.neg(da)
            }
        }
    }
}
