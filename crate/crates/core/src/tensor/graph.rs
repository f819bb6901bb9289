//! Reverse-mode autodiff graph.
//!
//! A [`Graph`] is an append-only tape of executed ops. Backward passes are
//! themselves recorded as ordinary ops on the same tape, so gradients are
//! [`Var`]s that can be differentiated again (needed by the gradient
//! penalty). Every op's vector-Jacobian product is written in terms of other
//! graph ops; the op set is closed under this rule except for [`Var::floor`].

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use thiserror::Error;

use super::kernels;
use super::{shape_err, Element, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("backward requires a scalar output, got dims {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("node {0} does not require gradients")]
    DetachedLeaf(usize),
    #[error("op `{0}` has no differentiable adjoint")]
    NoAdjoint(&'static str),
    #[error("non-finite value produced by op `{op}` (node {node})")]
    NonFinite { node: usize, op: &'static str },
    #[error("variable belongs to a different graph")]
    ForeignVar,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    AddScalar(usize, T),
    MulConst(usize, Rc<Tensor<T>>),
    Sum(usize),
    ExpandScalar(usize, Vec<usize>),
    SumToAxis(usize, usize),
    ExpandAxis(usize, usize, Vec<usize>),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize, Vec<usize>),
    Conv2d {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        y: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvWeightGrad {
        x: usize,
        gy: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    },
    LeakyRelu(usize, T),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    LogSoftmax(usize),
    Concat(Vec<usize>, usize),
    Slice {
        x: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    Pad {
        x: usize,
        axis: usize,
        start: usize,
        total: usize,
    },
    Upsample2(usize),
    SumPool2(usize),
    Blur(usize, f64),
    BlurAdjoint(usize, f64),
    Floor(usize),
}

impl<T: Element> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::Sum(..) => "sum",
            Op::ExpandScalar(..) => "expand_scalar",
            Op::SumToAxis(..) => "sum_to_axis",
            Op::ExpandAxis(..) => "expand_axis",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::ConvWeightGrad { .. } => "conv2d_weight_grad",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Upsample2(..) => "upsample2",
            Op::SumPool2(..) => "sumpool2",
            Op::Blur(..) => "blur",
            Op::BlurAdjoint(..) => "blur_adjoint",
            Op::Floor(..) => "floor",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::ConvTranspose2d { y, w, .. } => vec![*y, *w],
            Op::ConvWeightGrad { x, gy, .. } => vec![*x, *gy],
            Op::Concat(parts, _) => parts.clone(),
            Op::Neg(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x, _)
            | Op::MulConst(x, _)
            | Op::Sum(x)
            | Op::ExpandScalar(x, _)
            | Op::SumToAxis(x, _)
            | Op::ExpandAxis(x, _, _)
            | Op::Transpose(x)
            | Op::Reshape(x, _)
            | Op::LeakyRelu(x, _)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Sqrt(x)
            | Op::LogSoftmax(x)
            | Op::Slice { x, .. }
            | Op::Pad { x, .. }
            | Op::Upsample2(x)
            | Op::SumPool2(x)
            | Op::Blur(x, _)
            | Op::BlurAdjoint(x, _)
            | Op::Floor(x) => vec![*x],
        }
    }

    /// Forward evaluation given the values of the op's inputs.
    fn eval(&self, v: &dyn Fn(usize) -> Rc<Tensor<T>>) -> Result<Tensor<T>, TensorError> {
        let softplus = |x: T| {
            // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
            x.max(T::zero()) + (-x.abs()).exp().ln_1p()
        };
        let sigmoid = |x: T| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        };
        Ok(match self {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::Add(a, b) => v(*a).zip_map(&v(*b), |p, q| p + q)?,
            Op::Sub(a, b) => v(*a).zip_map(&v(*b), |p, q| p - q)?,
            Op::Mul(a, b) => v(*a).zip_map(&v(*b), |p, q| p * q)?,
            Op::Div(a, b) => v(*a).zip_map(&v(*b), |p, q| p / q)?,
            Op::Neg(x) => v(*x).map(|p| -p),
            Op::Scale(x, c) => v(*x).map(|p| p * *c),
            Op::AddScalar(x, c) => v(*x).map(|p| p + *c),
            Op::MulConst(x, c) => v(*x).zip_map(c, |p, q| p * q)?,
            Op::Sum(x) => Tensor::scalar(v(*x).sum()),
            Op::ExpandScalar(x, dims) => {
                let s = v(*x);
                if !s.is_scalar() {
                    return shape_err("expand_scalar of non-scalar");
                }
                Tensor::full(dims, s.item())
            }
            Op::SumToAxis(x, axis) => kernels::sum_to_axis(&v(*x), *axis)?,
            Op::ExpandAxis(x, axis, dims) => kernels::expand_axis(&v(*x), *axis, dims)?,
            Op::MatMul(a, b) => kernels::matmul(&v(*a), &v(*b))?,
            Op::Transpose(x) => kernels::transpose(&v(*x))?,
            Op::Reshape(x, dims) => v(*x).reshape(dims)?,
            Op::Conv2d { x, w, stride, pad } => kernels::conv2d(&v(*x), &v(*w), *stride, *pad)?,
            Op::ConvTranspose2d { y, w, stride, pad } => {
                kernels::conv2d_transpose(&v(*y), &v(*w), *stride, *pad)?
            }
            Op::ConvWeightGrad {
                x,
                gy,
                kh,
                kw,
                stride,
                pad,
            } => kernels::conv2d_weight_grad(&v(*x), &v(*gy), *kh, *kw, *stride, *pad)?,
            Op::LeakyRelu(x, s) => v(*x).map(|p| if p > T::zero() { p } else { p * *s }),
            Op::Tanh(x) => v(*x).map(|p| p.tanh()),
            Op::Sigmoid(x) => v(*x).map(sigmoid),
            Op::Softplus(x) => v(*x).map(softplus),
            Op::Exp(x) => v(*x).map(|p| p.exp()),
            Op::Log(x) => v(*x).map(|p| p.ln()),
            Op::Sqrt(x) => v(*x).map(|p| p.sqrt()),
            Op::LogSoftmax(x) => kernels::log_softmax_rows(&v(*x))?,
            Op::Concat(parts, axis) => {
                let vals: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| v(p)).collect();
                let refs: Vec<&Tensor<T>> = vals.iter().map(|t| t.as_ref()).collect();
                kernels::concat(&refs, *axis)?
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => kernels::slice_axis(&v(*x), *axis, *start, *len)?,
            Op::Pad {
                x,
                axis,
                start,
                total,
            } => kernels::pad_axis(&v(*x), *axis, *start, *total)?,
            Op::Upsample2(x) => kernels::upsample2(&v(*x))?,
            Op::SumPool2(x) => kernels::sumpool2(&v(*x))?,
            Op::Blur(x, s) => kernels::gaussian_blur(&v(*x), *s)?,
            Op::BlurAdjoint(x, s) => kernels::gaussian_blur_adjoint(&v(*x), *s)?,
            Op::Floor(x) => v(*x).map(|p| p.floor()),
        })
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only tape of differentiable ops.
pub struct Graph<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    non_finite: Cell<Option<usize>>,
    last_visit: RefCell<Vec<usize>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Element = f32> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.dims())
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            non_finite: Cell::new(None),
            last_visit: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if !value.is_finite() && self.non_finite.get().is_none() {
            self.non_finite.set(Some(id));
        }
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var { graph: self, id }
    }

    /// Learnable leaf: gradients can be requested for it.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    fn push(&self, op: Op<T>) -> Result<Var<'_, T>, TensorError> {
        let value = {
            let nodes = self.nodes.borrow();
            op.eval(&|i| Rc::clone(&nodes[i].value))?
        };
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        let id = nodes.len();
        if !value.is_finite() && self.non_finite.get().is_none() {
            self.non_finite.set(Some(id));
        }
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var { graph: self, id })
    }

    fn push_ok(&self, op: Op<T>) -> Var<'_, T> {
        self.push(op).expect("shape-preserving op cannot fail")
    }

    fn check_var(&self, v: &Var<'_, T>) -> Result<(), GradError> {
        if std::ptr::eq(v.graph, self) {
            Ok(())
        } else {
            Err(GradError::ForeignVar)
        }
    }

    /// First node that produced a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<(), GradError> {
        match self.non_finite.get() {
            None => Ok(()),
            Some(node) => Err(GradError::NonFinite {
                node,
                op: self.nodes.borrow()[node].op.name(),
            }),
        }
    }

    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>, TensorError> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.push(Op::Concat(parts.iter().map(|p| p.id).collect(), axis))
    }

    /// Gradients of a scalar `output` with respect to `wrt`, recorded as
    /// graph nodes so they can be differentiated again.
    ///
    /// Leaves that `output` does not depend on receive zero gradients.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g, T>,
        wrt: &[Var<'g, T>],
    ) -> Result<Vec<Var<'g, T>>, GradError> {
        self.check_var(&output)?;
        for w in wrt {
            self.check_var(w)?;
        }
        self.check_finite()?;
        let out_dims = output.dims();
        if output.value().numel() != 1 {
            return Err(GradError::NonScalarOutput(out_dims));
        }
        let (on_path, requires): (Vec<bool>, Vec<bool>) = {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if !nodes[w.id].requires_grad {
                    return Err(GradError::DetachedLeaf(w.id));
                }
            }
            let mut on_path = vec![false; output.id + 1];
            on_path[output.id] = true;
            for id in (0..=output.id).rev() {
                if on_path[id] {
                    for i in nodes[id].op.inputs() {
                        on_path[i] = true;
                    }
                }
            }
            let requires = nodes[..=output.id]
                .iter()
                .map(|n| n.requires_grad)
                .collect();
            (on_path, requires)
        };

        let mut grads: Vec<Option<Var<'g, T>>> = vec![None; output.id + 1];
        grads[output.id] = Some(self.constant(Tensor::ones(&out_dims)));
        let mut visit = Vec::new();
        for id in (0..=output.id).rev() {
            if !on_path[id] || !requires[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            visit.push(id);
            let node = Var { graph: self, id };
            for (input, contrib) in self.vjp(node, &op, g, &requires)? {
                grads[input] = Some(match grads[input] {
                    Some(prev) => prev.add(contrib)?,
                    None => contrib,
                });
            }
        }
        *self.last_visit.borrow_mut() = visit;

        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(&w.dims()))),
            })
            .collect()
    }

    /// Convenience wrapper returning gradient values.
    pub fn gradients<'g>(
        &'g self,
        output: Var<'g, T>,
        wrt: &[Var<'g, T>],
    ) -> Result<Vec<Tensor<T>>, GradError> {
        Ok(self
            .grad(output, wrt)?
            .into_iter()
            .map(|g| g.value().as_ref().clone())
            .collect())
    }

    /// Node ids whose adjoints were evaluated by the last backward pass, in
    /// visit order.
    pub fn last_backward_order(&self) -> Vec<usize> {
        self.last_visit.borrow().clone()
    }

    /// Re-executes the tape from its leaves. `overrides` replaces selected
    /// leaf values; all other leaves keep their recorded values.
    pub fn replay(
        &self,
        overrides: &[(Var<'_, T>, Tensor<T>)],
    ) -> Result<Vec<Rc<Tensor<T>>>, GradError> {
        let nodes = self.nodes.borrow();
        for (var, _) in overrides {
            self.check_var(var)?;
            if !matches!(nodes[var.id].op, Op::Leaf) {
                return Err(GradError::Tensor(TensorError::Invalid(
                    "only leaves can be overridden during replay".into(),
                )));
            }
        }
        let mut values: Vec<Rc<Tensor<T>>> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            let v = match &node.op {
                Op::Leaf => overrides
                    .iter()
                    .find(|(var, _)| var.id == id)
                    .map(|(_, t)| Rc::new(t.clone()))
                    .unwrap_or_else(|| Rc::clone(&node.value)),
                op => Rc::new(op.eval(&|i| Rc::clone(&values[i]))?),
            };
            values.push(v);
        }
        Ok(values)
    }

    fn vjp<'g>(
        &'g self,
        y: Var<'g, T>,
        op: &Op<T>,
        g: Var<'g, T>,
        requires: &[bool],
    ) -> Result<Vec<(usize, Var<'g, T>)>, GradError> {
        let var = |id: usize| Var { graph: self, id };
        let need = |id: usize| requires[id];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need(*a) {
                    out.push((*a, g));
                }
                if need(*b) {
                    out.push((*b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(*a) {
                    out.push((*a, g));
                }
                if need(*b) {
                    out.push((*b, g.neg()));
                }
            }
            Op::Mul(a, b) => {
                if need(*a) {
                    out.push((*a, g.mul(var(*b))?));
                }
                if need(*b) {
                    out.push((*b, g.mul(var(*a))?));
                }
            }
            Op::Div(a, b) => {
                if need(*a) {
                    out.push((*a, g.div(var(*b))?));
                }
                if need(*b) {
                    out.push((*b, g.mul(y)?.div(var(*b))?.neg()));
                }
            }
            Op::Neg(x) => out.push((*x, g.neg())),
            Op::Scale(x, c) => out.push((*x, g.scale(*c))),
            Op::AddScalar(x, _) => out.push((*x, g)),
            Op::MulConst(x, c) => out.push((*x, self.push(Op::MulConst(g.id, Rc::clone(c)))?)),
            Op::Sum(x) => out.push((*x, self.push(Op::ExpandScalar(g.id, var(*x).dims()))?)),
            Op::ExpandScalar(x, _) => out.push((*x, g.sum())),
            Op::SumToAxis(x, axis) => out.push((*x, g.expand_axis(*axis, &var(*x).dims())?)),
            Op::ExpandAxis(x, axis, _) => out.push((*x, g.sum_to_axis(*axis)?)),
            Op::MatMul(a, b) => {
                if need(*a) {
                    out.push((*a, g.matmul(var(*b).t()?)?));
                }
                if need(*b) {
                    out.push((*b, var(*a).t()?.matmul(g)?));
                }
            }
            Op::Transpose(x) => out.push((*x, g.t()?)),
            Op::Reshape(x, _) => out.push((*x, g.reshape(&var(*x).dims())?)),
            Op::Conv2d { x, w, stride, pad } => {
                if need(*x) {
                    out.push((*x, g.conv2d_transpose(var(*w), *stride, *pad)?));
                }
                if need(*w) {
                    let wd = var(*w).dims();
                    out.push((
                        *w,
                        var(*x).conv2d_weight_grad(g, wd[2], wd[3], *stride, *pad)?,
                    ));
                }
            }
            Op::ConvTranspose2d { y: inp, w, stride, pad } => {
                if need(*inp) {
                    out.push((*inp, g.conv2d(var(*w), *stride, *pad)?));
                }
                if need(*w) {
                    let wd = var(*w).dims();
                    out.push((
                        *w,
                        g.conv2d_weight_grad(var(*inp), wd[2], wd[3], *stride, *pad)?,
                    ));
                }
            }
            Op::ConvWeightGrad {
                x,
                gy,
                stride,
                pad,
                ..
            } => {
                // <wgrad(x, gy), g> = <conv(x, g), gy> = <x, convT(gy, g)>
                if need(*x) {
                    out.push((*x, var(*gy).conv2d_transpose(g, *stride, *pad)?));
                }
                if need(*gy) {
                    out.push((*gy, var(*x).conv2d(g, *stride, *pad)?));
                }
            }
            Op::LeakyRelu(x, s) => {
                let mask = var(*x)
                    .value()
                    .map(|p| if p > T::zero() { T::one() } else { *s });
                out.push((*x, self.push(Op::MulConst(g.id, Rc::new(mask)))?));
            }
            Op::Tanh(x) => out.push((*x, g.mul(y.mul(y)?.neg().add_scalar(T::one()))?)),
            Op::Sigmoid(x) => out.push((*x, g.mul(y.mul(y.neg().add_scalar(T::one()))?)?)),
            Op::Softplus(x) => out.push((*x, g.mul(var(*x).sigmoid())?)),
            Op::Exp(x) => out.push((*x, g.mul(y)?)),
            Op::Log(x) => out.push((*x, g.div(var(*x))?)),
            Op::Sqrt(x) => out.push((*x, g.div(y)?.scale(T::from_f64(0.5)))),
            Op::LogSoftmax(x) => {
                let dims = var(*x).dims();
                let row_sum = g.sum_to_axis(0)?.expand_axis(0, &dims)?;
                out.push((*x, g.sub(y.exp().mul(row_sum)?)?));
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for &p in parts {
                    let len = var(p).dims()[*axis];
                    if need(p) {
                        out.push((p, g.slice_axis(*axis, start, len)?));
                    }
                    start += len;
                }
            }
            Op::Slice {
                x, axis, start, ..
            } => {
                let total = var(*x).dims()[*axis];
                out.push((*x, g.pad_axis(*axis, *start, total)?));
            }
            Op::Pad {
                x, axis, start, ..
            } => {
                let len = var(*x).dims()[*axis];
                out.push((*x, g.slice_axis(*axis, *start, len)?));
            }
            Op::Upsample2(x) => out.push((*x, g.sumpool2()?)),
            Op::SumPool2(x) => out.push((*x, g.upsample2()?)),
            Op::Blur(x, s) => out.push((*x, self.push(Op::BlurAdjoint(g.id, *s))?)),
            Op::BlurAdjoint(x, s) => out.push((*x, self.push(Op::Blur(g.id, *s))?)),
            Op::Floor(_) => return Err(GradError::NoAdjoint("floor")),
        }
        Ok(out)
    }
}

impl<'g, T: Element> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.dims().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value as a constant leaf (gradient stops here).
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant(self.value().as_ref().clone())
    }

    pub fn add(self, o: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Mul(self.id, o.id))
    }

    pub fn div(self, o: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Div(self.id, o.id))
    }

    pub fn neg(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Neg(self.id))
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        self.graph.push_ok(Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        self.graph.push_ok(Op::AddScalar(self.id, c))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, c: Tensor<T>) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::MulConst(self.id, Rc::new(c)))
    }

    pub fn square(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Mul(self.id, self.id))
    }

    pub fn sum(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().numel();
        self.sum().scale(T::from_f64(1.0 / n as f64))
    }

    /// Sum over every axis except `axis`.
    pub fn sum_to_axis(self, axis: usize) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::SumToAxis(self.id, axis))
    }

    /// Broadcast a vector along `axis` of `dims`.
    pub fn expand_axis(self, axis: usize, dims: &[usize]) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::ExpandAxis(self.id, axis, dims.to_vec()))
    }

    /// Adds a per-channel (axis 1) bias vector.
    pub fn add_channel_bias(self, bias: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        let b = bias.expand_axis(1, &self.dims())?;
        self.add(b)
    }

    pub fn matmul(self, o: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::MatMul(self.id, o.id))
    }

    pub fn t(self) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Transpose(self.id))
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Reshape(self.id, dims.to_vec()))
    }

    /// Flattens every axis after the first.
    pub fn flatten(self) -> Result<Var<'g, T>, TensorError> {
        let d = self.dims();
        let rest = d[1..].iter().product();
        self.reshape(&[d[0], rest])
    }

    pub fn conv2d(self, kernel: Var<'g, T>, stride: usize, pad: usize) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Conv2d {
            x: self.id,
            w: kernel.id,
            stride,
            pad,
        })
    }

    pub fn conv2d_transpose(
        self,
        kernel: Var<'g, T>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::ConvTranspose2d {
            y: self.id,
            w: kernel.id,
            stride,
            pad,
        })
    }

    pub fn conv2d_weight_grad(
        self,
        grad_out: Var<'g, T>,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::ConvWeightGrad {
            x: self.id,
            gy: grad_out.id,
            kh,
            kw,
            stride,
            pad,
        })
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        self.graph.push_ok(Op::LeakyRelu(self.id, slope))
    }

    pub fn relu(self) -> Var<'g, T> {
        self.leaky_relu(T::zero())
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Sigmoid(self.id))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Softplus(self.id))
    }

    pub fn exp(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Log(self.id))
    }

    pub fn sqrt(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Sqrt(self.id))
    }

    pub fn log_softmax(self) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::LogSoftmax(self.id))
    }

    pub fn slice_axis(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Slice {
            x: self.id,
            axis,
            start,
            len,
        })
    }

    pub fn pad_axis(self, axis: usize, start: usize, total: usize) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Pad {
            x: self.id,
            axis,
            start,
            total,
        })
    }

    pub fn upsample2(self) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::Upsample2(self.id))
    }

    pub fn sumpool2(self) -> Result<Var<'g, T>, TensorError> {
        self.graph.push(Op::SumPool2(self.id))
    }

    pub fn avgpool2(self) -> Result<Var<'g, T>, TensorError> {
        Ok(self.sumpool2()?.scale(T::from_f64(0.25)))
    }

    pub fn gaussian_blur(self, sigma: f64) -> Result<Var<'g, T>, TensorError> {
        if !(sigma >= 0.0) {
            return Err(TensorError::Invalid(format!("blur sigma {sigma} < 0")));
        }
        self.graph.push(Op::Blur(self.id, sigma))
    }

    /// Not differentiable; backward through it fails with
    /// [`GradError::NoAdjoint`].
    pub fn floor(self) -> Var<'g, T> {
        self.graph.push_ok(Op::Floor(self.id))
    }
}
