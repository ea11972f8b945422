//! Recorded computation graph and the reverse sweep over it.

use crate::error::{dim_err, Result, TensorError};
use crate::ops::{conv, norm};
use crate::scalar::{matmul, Scalar};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this crate.
///
/// Returns one optional gradient per input, in input order.
pub trait CustomBackward<T>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        grad_out: &Tensor<T>,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

pub(crate) enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: conv::Geometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: conv::Geometry,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: norm::Saved<T>,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Log {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulBroadcast {
        x: Var,
        w: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar {
        x: Var,
    },
    MulConst {
        x: Var,
        c: Tensor<T>,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    PoolGlobalSum {
        x: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward<T>>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Dense { .. } => "dense",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Softmax { .. } => "softmax",
            Op::Log { .. } => "log",
            Op::Exp { .. } => "exp",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::MulBroadcast { .. } => "mul_broadcast",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::MulConst { .. } => "mul_const",
            Op::Clamp { .. } => "clamp",
            Op::SumAll { .. } => "sum",
            Op::MeanAll { .. } => "mean",
            Op::PoolGlobalSum { .. } => "pool_global_sum",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::IndexSelect { .. } => "index_select",
            Op::Reshape { .. } => "reshape",
            Op::Custom { .. } => "custom",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so the node list is already a
/// topological order and the reverse sweep is a single backwards pass.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one root with respect to every node that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Handle of the `i`-th recorded node.
    pub fn var_at(&self, i: usize) -> Var {
        assert!(i < self.nodes.len(), "node {i} not on tape");
        Var(i)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Op-kind tags in recording order.
    pub fn op_kinds(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, op_name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = match &op {
            Op::Leaf { .. } => false,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf input. Gradients are recorded for it when `requires_grad`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        let v = self.push(value, Op::Leaf { param: None }, "input")?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.input(value, false)
    }

    /// Places every parameter of `store` on the tape as a leaf.
    pub fn bind(&mut self, store: &ParamStore<T>) -> Result<Bound> {
        let mut vars = Vec::with_capacity(store.len());
        for (id, p) in store.iter() {
            let v = self.push(p.value.clone(), Op::Leaf { param: Some(id) }, "param")?;
            self.nodes[v.0].requires_grad = p.requires_grad;
            vars.push(v);
        }
        Ok(Bound { vars })
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf { .. } => vec![],
            Op::Conv2d { x, w, b, .. }
            | Op::ConvTranspose2d { x, w, b, .. }
            | Op::Dense { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::MulBroadcast { x, w } => vec![*x, *w],
            Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Softmax { x, .. }
            | Op::Log { x }
            | Op::Exp { x }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::MulConst { x, .. }
            | Op::Clamp { x, .. }
            | Op::SumAll { x }
            | Op::MeanAll { x }
            | Op::PoolGlobalSum { x }
            | Op::Narrow { x, .. }
            | Op::IndexSelect { x, .. }
            | Op::Reshape { x } => vec![*x],
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
        }
    }

    /// Reverse sweep from a one-element root.
    ///
    /// Every node reachable from `root` that requires gradients receives
    /// d(root)/d(node); contributions from multiple uses are summed.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_val = &self.nodes[root.0].value;
        if root_val.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::full(root_val.shape(), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backward_node(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of every parameter leaf into the store accumulators.
    pub fn accumulate(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads.grads[i] {
                    if store.get(id).requires_grad {
                        store.get_mut(id).accumulate_grad(g)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let out = &node.value;
        let mut acc = |v: Var, t: Tensor<T>| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    geom,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        acc(*b, db);
                    }
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    geom,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        acc(*b, db);
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n_out, n_in) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.numel() / n_in;
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); xv.numel()];
                    matmul(rows, n_out, n_in, g.data(), false, wv.data(), false, &mut dx, false);
                    acc(*x, Tensor::from_vec(xv.shape(), dx)?);
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); wv.numel()];
                    matmul(n_out, rows, n_in, g.data(), true, xv.data(), false, &mut dw, false);
                    acc(*w, Tensor::from_vec(wv.shape(), dw)?);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![T::zero(); n_out];
                        for r in 0..rows {
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += g.data()[r * n_out + o];
                            }
                        }
                        acc(*b, Tensor::from_vec(&[n_out], db)?);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dgamma, dbeta) =
                    norm::backward(self.value(*x).shape(), self.value(*gamma), g, saved);
                if self.needs(*x) {
                    acc(*x, dx);
                }
                if self.needs(*gamma) {
                    acc(*gamma, dgamma);
                }
                if self.needs(*beta) {
                    acc(*beta, dbeta);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let d = zip_map(xv, g, |xi, gi| if xi > T::zero() { gi } else { gi * *slope });
                acc(*x, d);
            }
            Op::Sigmoid { x } => {
                acc(*x, zip_map(out, g, |y, gi| gi * y * (T::one() - y)));
            }
            Op::Tanh { x } => {
                acc(*x, zip_map(out, g, |y, gi| gi * (T::one() - y * y)));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let mut d = vec![T::zero(); out.numel()];
                let (y, gd) = (out.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| y[idx(k)] * gd[idx(k)]).sum();
                        for k in 0..len {
                            d[idx(k)] = y[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::from_vec(out.shape(), d)?);
            }
            Op::Log { x } => {
                acc(*x, zip_map(self.value(*x), g, |xi, gi| gi / xi));
            }
            Op::Exp { x } => {
                acc(*x, zip_map(out, g, |y, gi| gi * y));
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    acc(*a, g.clone());
                }
                if self.needs(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    acc(*a, zip_map(self.value(*b), g, |bi, gi| bi * gi));
                }
                if self.needs(*b) {
                    acc(*b, zip_map(self.value(*a), g, |ai, gi| ai * gi));
                }
            }
            Op::MulBroadcast { x, w } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let inner = wv.numel();
                if self.needs(*x) {
                    let d: Vec<T> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * wv.data()[i % inner])
                        .collect();
                    acc(*x, Tensor::from_vec(xv.shape(), d)?);
                }
                if self.needs(*w) {
                    let mut d = vec![T::zero(); inner];
                    for (i, (&gi, &xi)) in g.data().iter().zip(xv.data()).enumerate() {
                        d[i % inner] += gi * xi;
                    }
                    acc(*w, Tensor::from_vec(wv.shape(), d)?);
                }
            }
            Op::Scale { x, c } => acc(*x, g.map(|v| v * *c)),
            Op::AddScalar { x } => acc(*x, g.clone()),
            Op::MulConst { x, c } => acc(*x, zip_map(c, g, |ci, gi| ci * gi)),
            Op::Clamp { x, lo, hi } => {
                let d = zip_map(self.value(*x), g, |xi, gi| {
                    if xi < *lo || xi > *hi {
                        T::zero()
                    } else {
                        gi
                    }
                });
                acc(*x, d);
            }
            Op::SumAll { x } => {
                acc(*x, Tensor::full(self.value(*x).shape(), g.item()));
            }
            Op::MeanAll { x } => {
                let xv = self.value(*x);
                let n = T::from_usize(xv.numel()).unwrap();
                acc(*x, Tensor::full(xv.shape(), g.item() / n));
            }
            Op::PoolGlobalSum { x } => {
                let xv = self.value(*x);
                let hw = xv.shape()[2] * xv.shape()[3];
                let d: Vec<T> = (0..xv.numel()).map(|i| g.data()[i / hw]).collect();
                acc(*x, Tensor::from_vec(xv.shape(), d)?);
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let total = out.shape()[*axis];
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(*v).shape()[*axis];
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        acc(*v, Tensor::from_vec(self.value(*v).shape(), d)?);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xv = self.value(*x);
                let (outer, total, inner) = split_axis(xv.shape(), *axis);
                let len = out.shape()[*axis];
                let mut d = vec![T::zero(); xv.numel()];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(*x, Tensor::from_vec(xv.shape(), d)?);
            }
            Op::IndexSelect { x, indices } => {
                let xv = self.value(*x);
                let row = xv.numel() / xv.shape()[0];
                let mut d = vec![T::zero(); xv.numel()];
                for (k, &src) in indices.iter().enumerate() {
                    for j in 0..row {
                        d[src * row + j] += g.data()[k * row + j];
                    }
                }
                acc(*x, Tensor::from_vec(xv.shape(), d)?);
            }
            Op::Reshape { x } => {
                acc(*x, g.clone().reshaped(self.value(*x).shape())?);
            }
            Op::Custom { inputs, rule } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let ds = rule.backward(g, &vals, out)?;
                if ds.len() != inputs.len() {
                    return Err(dim_err(rule.name(), "backward returned wrong arity"));
                }
                for (v, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        if d.shape() != self.value(*v).shape() {
                            return Err(dim_err(rule.name(), "gradient shape mismatch"));
                        }
                        if self.needs(*v) {
                            acc(*v, d);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("zip_map on equal shapes")
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
