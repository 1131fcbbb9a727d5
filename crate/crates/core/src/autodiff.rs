//! Tape-based reverse-mode differentiation with differentiable backward passes.
//!
//! Every primitive is evaluated eagerly when it is appended to the [`Tape`].
//! [`Tape::grad`] walks the tape backwards and expresses each adjoint as new
//! primitives on the same tape, so a returned gradient is an ordinary node
//! that can be differentiated again. With `create_graph` unset the adjoint
//! nodes are discarded afterwards and the gradients come back as constants.
//!
//! Elementwise binary primitives accept equal shapes or one single-element
//! operand. Row-wise norms are smoothed: `sqrt(sum x^2 + 1e-12)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Smoothing added under the square root of [`Op::L2NormRows`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node; a dense index into its tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op<T> {
    /// Differentiable leaf.
    Input,
    /// Leaf treated as a constant by higher-order passes (masks, literals).
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(T),
    MatMul,
    Transpose,
    Relu,
    Tanh,
    Square,
    Sqrt,
    /// `max(x, c)` elementwise; the subgradient at `x == c` is 0.
    MaxScalar(T),
    /// Sum of all entries, shape `[]`.
    Sum,
    /// Mean of all entries, shape `[]`.
    Mean,
    /// Repeat size-1 axes (or a single element) up to the given shape.
    Broadcast(Vec<usize>),
    /// Adjoint of `Broadcast`: sum down to the given shape.
    SumTo(Vec<usize>),
    Reshape(Vec<usize>),
    SliceRows { start: usize, end: usize },
    PadRows { before: usize, after: usize },
    /// `[n, d] -> [n, 1]` Euclidean norm of every row.
    L2NormRows,
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::MaxScalar(_) => "max_with_scalar",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Broadcast(_) => "broadcast",
            Op::SumTo(_) => "sum_to",
            Op::Reshape(_) => "reshape",
            Op::SliceRows { .. } => "slice",
            Op::PadRows { .. } => "pad_rows",
            Op::L2NormRows => "l2norm_rows",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Input | Op::Constant => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub parents: Vec<Var>,
}

/// Append-only record of evaluated primitives.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err<T: Scalar>(op: &Op<T>, operands: &[&Tensor<T>]) -> Error {
    Error::Shape { op: op.name(), shapes: operands.iter().map(|t| t.shape().to_vec()).collect() }
}

fn eval<T: Scalar>(op: &Op<T>, args: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let bad = || shape_err(op, args);
    let out = match op {
        Op::Input | Op::Constant => unreachable!("leaves are not evaluated"),
        Op::Add => tensor::zip_with(args[0], args[1], |a, b| a + b).ok_or_else(bad)?,
        Op::Sub => tensor::zip_with(args[0], args[1], |a, b| a - b).ok_or_else(bad)?,
        Op::Mul => tensor::zip_with(args[0], args[1], |a, b| a * b).ok_or_else(bad)?,
        Op::Div => tensor::zip_with(args[0], args[1], |a, b| a / b).ok_or_else(bad)?,
        Op::Neg => args[0].map(|x| -x),
        Op::Scale(c) => args[0].map(|x| x * *c),
        Op::MatMul => args[0].matmul(args[1]).ok_or_else(bad)?,
        Op::Transpose => args[0].transpose().ok_or_else(bad)?,
        Op::Relu => args[0].map(|x| if x > T::zero() { x } else { T::zero() }),
        Op::Tanh => args[0].map(T::tanh),
        Op::Square => args[0].map(|x| x * x),
        Op::Sqrt => args[0].map(T::sqrt),
        Op::MaxScalar(c) => args[0].map(|x| if x > *c { x } else { *c }),
        Op::Sum => Tensor::scalar(args[0].sum()),
        Op::Mean => {
            let n = args[0].numel();
            if n == 0 {
                return Err(bad());
            }
            Tensor::scalar(args[0].sum() / T::lit(n as f64))
        }
        Op::Broadcast(shape) => {
            if !tensor::broadcastable(args[0].shape(), shape) {
                return Err(bad());
            }
            tensor::broadcast_to(args[0], shape)
        }
        Op::SumTo(shape) => {
            if !tensor::broadcastable(shape, args[0].shape()) {
                return Err(bad());
            }
            tensor::sum_to(args[0], shape)
        }
        Op::Reshape(shape) => args[0].reshape(shape).map_err(|_| bad())?,
        Op::SliceRows { start, end } => args[0].slice_rows(*start, *end).ok_or_else(bad)?,
        Op::PadRows { before, after } => args[0].pad_rows(*before, *after).ok_or_else(bad)?,
        Op::L2NormRows => {
            let (n, d) = args[0].dims2().ok_or_else(bad)?;
            let eps = T::lit(NORM_EPS);
            let data = (0..n)
                .map(|i| {
                    let row = &args[0].data()[i * d..(i + 1) * d];
                    (row.iter().map(|&x| x * x).sum::<T>() + eps).sqrt()
                })
                .collect();
            Tensor::new(vec![n, 1], data)?
        }
    };
    Ok(out)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<Var>) -> Var {
        self.nodes.push(Node { value, op, parents });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("input of shape {:?}", value.shape())));
        }
        Ok(self.push(value, Op::Input, Vec::new()))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("constant of shape {:?}", value.shape())));
        }
        Ok(self.push(value, Op::Constant, Vec::new()))
    }

    pub fn scalar_constant(&mut self, value: T) -> Result<Var> {
        self.constant(Tensor::scalar(value))
    }

    /// Evaluates `op` over `operands` and appends the result.
    pub fn apply(&mut self, op: Op<T>, operands: &[Var]) -> Result<Var> {
        if matches!(op, Op::Input | Op::Constant) || operands.len() != op.arity() {
            return Err(Error::invalid(format!(
                "{} takes {} operands, got {}",
                op.name(),
                op.arity(),
                operands.len()
            )));
        }
        if let Some(v) = operands.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::invalid(format!("node {} is not on this tape", v.0)));
        }
        let args: Vec<&Tensor<T>> = operands.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = eval(&op, &args)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {} {:?}", op.name(), value.shape())));
        }
        Ok(self.push(value, op, operands.to_vec()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Div, &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Neg, &[a])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Square, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sqrt, &[a])
    }

    pub fn max_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.apply(Op::MaxScalar(c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Mean, &[a])
    }

    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Op::Broadcast(shape.to_vec()), &[a])
    }

    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Op::SumTo(shape.to_vec()), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.apply(Op::SliceRows { start, end }, &[a])
    }

    pub fn l2norm_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::L2NormRows, &[a])
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the gradients are differentiable nodes built from
    /// tape primitives. Nodes that do not influence `output` get zeros.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let n = self.nodes.len();
        if output.0 >= n {
            return Err(Error::invalid(format!("node {} is not on this tape", output.0)));
        }
        if let Some(v) = wrt.iter().find(|v| v.0 >= n) {
            return Err(Error::invalid(format!("node {} is not on this tape", v.0)));
        }
        let out_shape = self.shape(output).to_vec();
        if out_shape.len() > 1 || self.value(output).numel() != 1 {
            return Err(Error::Shape { op: "grad", shapes: vec![out_shape] });
        }

        // Only nodes on some path wrt -> output carry adjoints.
        let end = output.0 + 1;
        let mut from_wrt = vec![false; end];
        for w in wrt.iter().filter(|w| w.0 < end) {
            from_wrt[w.0] = true;
        }
        for i in 0..end {
            if !from_wrt[i] && self.nodes[i].parents.iter().any(|p| from_wrt[p.0]) {
                from_wrt[i] = true;
            }
        }
        let mut needed = vec![false; end];
        needed[output.0] = from_wrt[output.0];
        for i in (0..end).rev() {
            if needed[i] {
                for p in &self.nodes[i].parents {
                    if from_wrt[p.0] {
                        needed[p.0] = true;
                    }
                }
            }
        }

        let mark = self.nodes.len();
        let mut adjoint: Vec<Option<Var>> = vec![None; end];
        if needed[output.0] {
            adjoint[output.0] = Some(self.constant(Tensor::ones(&out_shape))?);
        }
        for i in (0..end).rev() {
            let Some(up) = adjoint[i] else { continue };
            if !needed[i] || self.nodes[i].parents.is_empty() {
                continue;
            }
            for (parent, g) in self.backward(Var(i), up, &needed)? {
                adjoint[parent.0] = Some(match adjoint[parent.0] {
                    None => g,
                    Some(prev) => self.add(prev, g)?,
                });
            }
        }

        let grads: Vec<Option<Var>> = wrt.iter().map(|w| adjoint.get(w.0).copied().flatten()).collect();
        if create_graph {
            return grads
                .into_iter()
                .zip(wrt)
                .map(|(g, w)| match g {
                    Some(g) => Ok(g),
                    None => self.constant(Tensor::zeros(self.shape(*w))),
                })
                .collect();
        }
        let values: Vec<Tensor<T>> = grads
            .iter()
            .zip(wrt)
            .map(|(g, w)| match g {
                Some(g) => self.value(*g).clone(),
                None => Tensor::zeros(self.shape(*w)),
            })
            .collect();
        self.nodes.truncate(mark);
        values.into_iter().map(|v| self.constant(v)).collect()
    }

    /// Adjoint contributions of node `v` to each of its needed parents.
    fn backward(&mut self, v: Var, up: Var, needed: &[bool]) -> Result<Vec<(Var, Var)>> {
        let node = &self.nodes[v.0];
        let op = node.op.clone();
        let parents = node.parents.clone();
        let need = |i: usize| needed[parents[i].0];
        let mut out = Vec::with_capacity(2);

        match op {
            Op::Input | Op::Constant => {}
            Op::Add | Op::Sub => {
                if need(0) {
                    let g = self.unbroadcast(up, parents[0])?;
                    out.push((parents[0], g));
                }
                if need(1) {
                    let g = if op == Op::Sub { self.neg(up)? } else { up };
                    let g = self.unbroadcast(g, parents[1])?;
                    out.push((parents[1], g));
                }
            }
            Op::Mul => {
                if need(0) {
                    let g = self.mul(up, parents[1])?;
                    out.push((parents[0], self.unbroadcast(g, parents[0])?));
                }
                if need(1) {
                    let g = self.mul(up, parents[0])?;
                    out.push((parents[1], self.unbroadcast(g, parents[1])?));
                }
            }
            Op::Div => {
                if need(0) {
                    let g = self.div(up, parents[1])?;
                    out.push((parents[0], self.unbroadcast(g, parents[0])?));
                }
                if need(1) {
                    // d(a/b)/db = -(a/b)/b
                    let q = self.div(v, parents[1])?;
                    let g = self.mul(up, q)?;
                    let g = self.neg(g)?;
                    out.push((parents[1], self.unbroadcast(g, parents[1])?));
                }
            }
            Op::Neg => out.push((parents[0], self.neg(up)?)),
            Op::Scale(c) => out.push((parents[0], self.scale(up, c)?)),
            Op::MatMul => {
                if need(0) {
                    let bt = self.transpose(parents[1])?;
                    out.push((parents[0], self.matmul(up, bt)?));
                }
                if need(1) {
                    let at = self.transpose(parents[0])?;
                    out.push((parents[1], self.matmul(at, up)?));
                }
            }
            Op::Transpose => out.push((parents[0], self.transpose(up)?)),
            Op::Relu | Op::MaxScalar(_) => {
                let threshold = match op {
                    Op::MaxScalar(c) => c,
                    _ => T::zero(),
                };
                let mask = self
                    .value(parents[0])
                    .map(|x| if x > threshold { T::one() } else { T::zero() });
                let mask = self.constant(mask)?;
                out.push((parents[0], self.mul(up, mask)?));
            }
            Op::Tanh => {
                let y2 = self.square(v)?;
                let one = self.scalar_constant(T::one())?;
                let d = self.sub(one, y2)?;
                out.push((parents[0], self.mul(up, d)?));
            }
            Op::Square => {
                let d = self.scale(parents[0], T::lit(2.0))?;
                out.push((parents[0], self.mul(up, d)?));
            }
            Op::Sqrt => {
                let half = self.scale(up, T::lit(0.5))?;
                out.push((parents[0], self.div(half, v)?));
            }
            Op::Sum => {
                let shape = self.shape(parents[0]).to_vec();
                out.push((parents[0], self.broadcast(up, &shape)?));
            }
            Op::Mean => {
                let shape = self.shape(parents[0]).to_vec();
                let n = self.value(parents[0]).numel();
                let g = self.scale(up, T::one() / T::lit(n as f64))?;
                out.push((parents[0], self.broadcast(g, &shape)?));
            }
            Op::Broadcast(_) => {
                let g = self.unbroadcast(up, parents[0])?;
                out.push((parents[0], g));
            }
            Op::SumTo(_) => {
                let shape = self.shape(parents[0]).to_vec();
                out.push((parents[0], self.broadcast(up, &shape)?));
            }
            Op::Reshape(_) => {
                let shape = self.shape(parents[0]).to_vec();
                out.push((parents[0], self.reshape(up, &shape)?));
            }
            Op::SliceRows { start, end } => {
                let rows = self.shape(parents[0])[0];
                let g = self.apply(Op::PadRows { before: start, after: rows - end }, &[up])?;
                out.push((parents[0], g));
            }
            Op::PadRows { before, .. } => {
                let rows = self.shape(parents[0])[0];
                out.push((parents[0], self.slice_rows(up, before, before + rows)?));
            }
            Op::L2NormRows => {
                // d||x_i|| / dx_i = x_i / ||x_i||
                let shape = self.shape(parents[0]).to_vec();
                let s = self.div(up, v)?;
                let s = self.broadcast(s, &shape)?;
                out.push((parents[0], self.mul(parents[0], s)?));
            }
        }
        Ok(out)
    }

    /// Sums `g` down to the shape of `target` when `target` was broadcast.
    fn unbroadcast(&mut self, g: Var, target: Var) -> Result<Var> {
        let shape = self.shape(target).to_vec();
        if self.shape(g) == shape.as_slice() {
            Ok(g)
        } else {
            self.sum_to(g, &shape)
        }
    }
}

/// Maximum componentwise relative error between the reverse-mode gradient of
/// `f` at `x` and central finite differences with step `h`.
///
/// The relative error of a component is `|a - n| / max(|a|, |n|, 1e-8)`.
/// Any failure to evaluate `f` (including non-finite values) yields infinity.
pub fn check_gradient<T, F>(f: F, x: &Tensor<T>, h: T) -> T
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let mut run = || -> Result<Tensor<T>> {
            let xv = tape.input(x.clone())?;
            let y = f(&mut tape, xv)?;
            let g = tape.grad(y, &[xv], false)?;
            Ok(tape.value(g[0]).clone())
        };
        match run() {
            Ok(g) => g,
            Err(_) => return T::infinity(),
        }
    };
    let eval_at = |point: Tensor<T>| -> Option<T> {
        let mut tape = Tape::new();
        let xv = tape.input(point).ok()?;
        let y = f(&mut tape, xv).ok()?;
        tape.value(y).item().filter(|v| v.is_finite())
    };
    let floor = T::lit(1e-8);
    let two = T::lit(2.0);
    let mut worst = T::zero();
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let (Some(fp), Some(fm)) = (eval_at(plus), eval_at(minus)) else {
            return T::infinity();
        };
        let numeric = (fp - fm) / (two * h);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
