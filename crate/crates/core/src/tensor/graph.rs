//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution order,
//! so node inputs always precede the node itself. [`Graph::backward`] walks the
//! tape in reverse and returns the gradient of a scalar loss for each node that
//! depends on a trainable leaf. The graph is dropped after backward.

use super::conv::{self, ConvGeometry};
use super::params::{ParamId, ParamStore};
use super::{Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    /// Leaky rectifier with negative slope 0.1.
    LeakyRelu,
}

impl Unary {
    pub const LEAKY_SLOPE: f64 = 0.1;

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    Self::LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    Self::LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// Norms below this are treated as zero by the cosine ops.
pub(crate) const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Unary {
        input: Var,
        kind: Unary,
    },
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
    },
    AddConst {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        input: Var,
        offset: usize,
    },
    GlobalAvgPool {
        input: Var,
        plane: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax {
        input: Var,
    },
    Cosine {
        a: Var,
        b: Var,
    },
    ChannelCosine {
        a: Var,
        b: Var,
        plane: usize,
    },
    Stack {
        parts: Vec<Var>,
    },
    ScaleChannels {
        input: Var,
        weights: Var,
        plane: usize,
    },
    WeightedSum {
        parts: Vec<Var>,
        weights: Var,
    },
    Sum {
        input: Var,
    },
    Norm {
        input: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Parameter handles bound into one graph, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Result of [`Graph::backward`]: one optional gradient per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient per bound parameter, zero-filled where the loss does not reach it.
    pub fn for_params(&self, graph: &Graph, bound: &Bound) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .map(|&v| {
                self.get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
            })
            .collect()
    }
}

fn elementwise_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn cosine_parts(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot, na, nb)
}

fn cosine_value(a: &[f64], b: &[f64]) -> f64 {
    let (dot, na, nb) = cosine_parts(a, b);
    if na < COSINE_EPS || nb < COSINE_EPS {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Adds d cos(a, b) / da and d cos(a, b) / db, scaled by `g`, into the accumulators.
fn cosine_backward(a: &[f64], b: &[f64], g: f64, ga: Option<&mut [f64]>, gb: Option<&mut [f64]>) {
    let (dot, na, nb) = cosine_parts(a, b);
    if na < COSINE_EPS || nb < COSINE_EPS {
        return;
    }
    let inv = 1.0 / (na * nb);
    let cos = dot * inv;
    if let Some(ga) = ga {
        let ca = cos / (na * na);
        for ((o, &x), &y) in ga.iter_mut().zip(a).zip(b) {
            *o += g * (y * inv - ca * x);
        }
    }
    if let Some(gb) = gb {
        let cb = cos / (nb * nb);
        for ((o, &x), &y) in gb.iter_mut().zip(a).zip(b) {
            *o += g * (x * inv - cb * y);
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is reported by [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers every parameter of `store` as a trainable leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Bound {
        let vars = store.values().iter().map(|t| self.leaf(t.clone())).collect();
        Bound { vars }
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, h, w) = self.value(input).dims3()?;
        let (c_out, kc, k) = match self.value(kernel).shape() {
            &[co, ci, kh, kw] if kh == kw => (co, ci, kh),
            other => {
                return Err(TensorError::invalid(
                    "conv2d",
                    format!("kernel must be [C_out, C_in, k, k], got {other:?}"),
                ))
            }
        };
        if kc != c_in {
            return Err(TensorError::mismatch("conv2d", self.value(input).shape(), self.value(kernel).shape()));
        }
        if self.value(bias).shape() != [c_out] {
            return Err(TensorError::mismatch("conv2d", &[c_out], self.value(bias).shape()));
        }
        let h_out = conv::conv2d_output_size(h, k, stride, padding)?;
        let w_out = conv::conv2d_output_size(w, k, stride, padding)?;
        let geom = ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            padding,
            h_out,
            w_out,
        };
        let data = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![c_out, h_out, w_out], data)?;
        let needs = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            needs,
        ))
    }

    pub fn unary(&mut self, input: Var, kind: Unary) -> Var {
        let value = self.value(input).map(|x| kind.apply(x));
        let needs = self.any_grad(&[input]);
        self.push(value, Op::Unary { input, kind }, needs)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.unary(input, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.unary(input, Unary::Tanh)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.unary(input, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, input: Var) -> Var {
        self.unary(input, Unary::LeakyRelu)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        elementwise_shape("binary", ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary { a, b, kind }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// `input + offset` for a constant offset of the same shape.
    pub fn add_const(&mut self, input: Var, offset: &Tensor) -> Result<Var> {
        let t = self.value(input);
        elementwise_shape("add_const", t, offset)?;
        let data = t.data().iter().zip(offset.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, Op::AddConst { input }, needs))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|x| x * factor);
        let needs = self.any_grad(&[input]);
        self.push(value, Op::Scale { input, factor }, needs)
    }

    /// Stacks `[C_i, H, W]` tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat_channels", "no parts"))?;
        let (_, h, w) = self.value(*first).dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (c, ph, pw) = t.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(TensorError::mismatch("concat_channels", self.value(*first).shape(), t.shape()));
            }
            channels += c;
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![channels, h, w], data)?;
        let needs = self.any_grad(parts);
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, needs))
    }

    /// Channels `[start, start + len)` of a `[C, H, W]` tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if start + len > c || len == 0 {
            return Err(TensorError::invalid(
                "slice_channels",
                format!("range {start}..{} invalid for {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let data = self.value(input).data()[start * plane..(start + len) * plane].to_vec();
        let value = Tensor::new(vec![len, h, w], data)?;
        let needs = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::Slice {
                input,
                offset: start * plane,
            },
            needs,
        ))
    }

    /// Elements `[start, start + len)` of a 1-D tensor.
    pub fn slice_vec(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 1 || start + len > t.len() || len == 0 {
            return Err(TensorError::invalid(
                "slice_vec",
                format!("range {start}..{} invalid for shape {:?}", start + len, t.shape()),
            ));
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, Op::Slice { input, offset: start }, needs))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        let plane = h * w;
        if plane == 0 {
            return Err(TensorError::invalid("global_avg_pool", "empty spatial extent"));
        }
        let data = self.value(input).data();
        let means = (0..c)
            .map(|j| data[j * plane..(j + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        let needs = self.any_grad(&[input]);
        Ok(self.push(Tensor::vector(means), Op::GlobalAvgPool { input, plane }, needs))
    }

    /// `weight · input + bias` with `weight: [m, n]`, `input: [n]`, `bias: [m]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        let (m, n) = match wt.shape() {
            &[m, n] => (m, n),
            other => {
                return Err(TensorError::invalid("linear", format!("weight must be 2-D, got {other:?}")));
            }
        };
        if x.shape() != [n] {
            return Err(TensorError::mismatch("linear", wt.shape(), x.shape()));
        }
        if b.shape() != [m] {
            return Err(TensorError::mismatch("linear", &[m], b.shape()));
        }
        let out = (0..m)
            .map(|r| {
                let row = &wt.data()[r * n..(r + 1) * n];
                b.data()[r] + row.iter().zip(x.data()).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let needs = self.any_grad(&[input, weight, bias]);
        Ok(self.push(Tensor::vector(out), Op::Linear { input, weight, bias }, needs))
    }

    /// Numerically stable softmax of a 1-D tensor.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.shape().len() != 1 || t.is_empty() {
            return Err(TensorError::invalid("softmax", format!("expected non-empty vector, got {:?}", t.shape())));
        }
        let value = Tensor::vector(softmax_values(t.data()));
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, Op::Softmax { input }, needs))
    }

    /// Cosine similarity of the flattened tensors; zero when either norm vanishes.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        elementwise_shape("cosine_similarity", ta, tb)?;
        let value = Tensor::scalar(cosine_value(ta.data(), tb.data()));
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Cosine { a, b }, needs))
    }

    /// Per-channel cosine similarity of two `[C, H, W]` tensors, giving `[C]`.
    pub fn channel_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        elementwise_shape("channel_cosine", ta, tb)?;
        let (c, h, w) = ta.dims3()?;
        let plane = h * w;
        let sims = (0..c)
            .map(|j| cosine_value(&ta.data()[j * plane..(j + 1) * plane], &tb.data()[j * plane..(j + 1) * plane]))
            .collect();
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::vector(sims), Op::ChannelCosine { a, b, plane }, needs))
    }

    /// Collects one-element tensors into a vector.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut values = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.len() != 1 {
                return Err(TensorError::invalid("stack", format!("part of shape {:?} is not a scalar", t.shape())));
            }
            values.push(t.item());
        }
        if values.is_empty() {
            return Err(TensorError::invalid("stack", "no parts"));
        }
        let needs = self.any_grad(parts);
        Ok(self.push(Tensor::vector(values), Op::Stack { parts: parts.to_vec() }, needs))
    }

    /// Multiplies channel `j` of a `[C, H, W]` tensor by `weights[j]`.
    pub fn scale_channels(&mut self, input: Var, weights: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if self.value(weights).shape() != [c] {
            return Err(TensorError::mismatch("scale_channels", &[c], self.value(weights).shape()));
        }
        let plane = h * w;
        let wv = self.value(weights).data();
        let data = self
            .value(input)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * wv[i / plane])
            .collect();
        let value = Tensor::new(vec![c, h, w], data)?;
        let needs = self.any_grad(&[input, weights]);
        Ok(self.push(value, Op::ScaleChannels { input, weights, plane }, needs))
    }

    /// `Σ_i weights[i] · parts[i]` over same-shape parts.
    pub fn weighted_sum(&mut self, parts: &[Var], weights: Var) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::invalid("weighted_sum", "no parts"));
        }
        if self.value(weights).shape() != [parts.len()] {
            return Err(TensorError::mismatch("weighted_sum", &[parts.len()], self.value(weights).shape()));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        let mut acc = vec![0.0; self.value(parts[0]).len()];
        for (i, &p) in parts.iter().enumerate() {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(TensorError::mismatch("weighted_sum", &shape, t.shape()));
            }
            let w = self.value(weights).data()[i];
            for (a, &x) in acc.iter_mut().zip(t.data()) {
                *a += w * x;
            }
        }
        let value = Tensor::new(shape, acc)?;
        let mut deps = parts.to_vec();
        deps.push(weights);
        let needs = self.any_grad(&deps);
        Ok(self.push(value, Op::WeightedSum { parts: parts.to_vec(), weights }, needs))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let needs = self.any_grad(&[input]);
        self.push(value, Op::Sum { input }, needs)
    }

    /// Euclidean norm of the flattened tensor; its gradient at zero is taken as zero.
    pub fn norm(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).norm());
        let needs = self.any_grad(&[input]);
        self.push(value, Op::Norm { input }, needs)
    }

    /// Sum of one-element tensors.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let stacked = self.stack(parts)?;
        Ok(self.sum(stacked))
    }

    /// Gradient of the scalar `loss` with respect to every node that depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].needs_grad)
                    .map(|data| Tensor::new(self.nodes[i].value.shape().to_vec(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accum<'a>(&self, grads: &'a mut [Option<Vec<f64>>], var: Var) -> Option<&'a mut [f64]> {
        if !self.nodes[var.0].needs_grad {
            return None;
        }
        let len = self.nodes[var.0].value.len();
        Some(grads[var.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let x = self.value(*input).data();
                let k = self.value(*kernel).data();
                let mut gi = self.nodes[input.0].needs_grad.then(|| vec![0.0; x.len()]);
                let mut gk = self.nodes[kernel.0].needs_grad.then(|| vec![0.0; k.len()]);
                let mut gb = self.nodes[bias.0].needs_grad.then(|| vec![0.0; geom.c_out]);
                conv::backward(geom, x, k, g, gi.as_deref_mut(), gk.as_deref_mut(), gb.as_deref_mut());
                for (var, buf) in [(*input, gi), (*kernel, gk), (*bias, gb)] {
                    if let (Some(buf), Some(dst)) = (buf, self.accum(grads, var)) {
                        dst.iter_mut().zip(buf).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Unary { input, kind } => {
                let x = self.value(*input).data();
                let y = node.value.data();
                if let Some(dst) = self.accum(grads, *input) {
                    for i in 0..g.len() {
                        dst[i] += g[i] * kind.derivative(x[i], y[i]);
                    }
                }
            }
            Op::Binary { a, b, kind } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                match kind {
                    Binary::Add | Binary::Sub => {
                        let sign = if *kind == Binary::Sub { -1.0 } else { 1.0 };
                        if let Some(dst) = self.accum(grads, *a) {
                            dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                        }
                        if let Some(dst) = self.accum(grads, *b) {
                            dst.iter_mut().zip(g).for_each(|(d, v)| *d += sign * v);
                        }
                    }
                    Binary::Mul => {
                        if let Some(dst) = self.accum(grads, *a) {
                            for i in 0..g.len() {
                                dst[i] += g[i] * vb[i];
                            }
                        }
                        if let Some(dst) = self.accum(grads, *b) {
                            for i in 0..g.len() {
                                dst[i] += g[i] * va[i];
                            }
                        }
                    }
                }
            }
            Op::AddConst { input } => {
                if let Some(dst) = self.accum(grads, *input) {
                    dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Scale { input, factor } => {
                if let Some(dst) = self.accum(grads, *input) {
                    dst.iter_mut().zip(g).for_each(|(d, v)| *d += factor * v);
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(dst) = self.accum(grads, p) {
                        dst.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, v)| *d += v);
                    }
                    offset += n;
                }
            }
            Op::Slice { input, offset } => {
                if let Some(dst) = self.accum(grads, *input) {
                    dst[*offset..*offset + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, v)| *d += v);
                }
            }
            Op::GlobalAvgPool { input, plane } => {
                let plane = *plane;
                if let Some(dst) = self.accum(grads, *input) {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d += g[i / plane] / plane as f64;
                    }
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let n = x.len();
                if let Some(dst) = self.accum(grads, *input) {
                    for (r, &gr) in g.iter().enumerate() {
                        for c in 0..n {
                            dst[c] += gr * w[r * n + c];
                        }
                    }
                }
                if let Some(dst) = self.accum(grads, *weight) {
                    for (r, &gr) in g.iter().enumerate() {
                        for c in 0..n {
                            dst[r * n + c] += gr * x[c];
                        }
                    }
                }
                if let Some(dst) = self.accum(grads, *bias) {
                    dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Softmax { input } => {
                let y = node.value.data();
                let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                if let Some(dst) = self.accum(grads, *input) {
                    for i in 0..g.len() {
                        dst[i] += y[i] * (g[i] - inner);
                    }
                }
            }
            Op::Cosine { a, b } => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let mut ga = self.nodes[a.0].needs_grad.then(|| vec![0.0; va.len()]);
                let mut gb = self.nodes[b.0].needs_grad.then(|| vec![0.0; vb.len()]);
                cosine_backward(va, vb, g[0], ga.as_deref_mut(), gb.as_deref_mut());
                for (var, buf) in [(*a, ga), (*b, gb)] {
                    if let (Some(buf), Some(dst)) = (buf, self.accum(grads, var)) {
                        dst.iter_mut().zip(buf).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::ChannelCosine { a, b, plane } => {
                let plane = *plane;
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let mut ga = self.nodes[a.0].needs_grad.then(|| vec![0.0; va.len()]);
                let mut gb = self.nodes[b.0].needs_grad.then(|| vec![0.0; vb.len()]);
                for (j, &gj) in g.iter().enumerate() {
                    let r = j * plane..(j + 1) * plane;
                    cosine_backward(
                        &va[r.clone()],
                        &vb[r.clone()],
                        gj,
                        ga.as_mut().map(|v| &mut v[r.clone()]),
                        gb.as_mut().map(|v| &mut v[r.clone()]),
                    );
                }
                for (var, buf) in [(*a, ga), (*b, gb)] {
                    if let (Some(buf), Some(dst)) = (buf, self.accum(grads, var)) {
                        dst.iter_mut().zip(buf).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Stack { parts } => {
                for (i, &p) in parts.iter().enumerate() {
                    if let Some(dst) = self.accum(grads, p) {
                        dst[0] += g[i];
                    }
                }
            }
            Op::ScaleChannels { input, weights, plane } => {
                let plane = *plane;
                let x = self.value(*input).data();
                let w = self.value(*weights).data();
                if let Some(dst) = self.accum(grads, *input) {
                    for i in 0..g.len() {
                        dst[i] += g[i] * w[i / plane];
                    }
                }
                if let Some(dst) = self.accum(grads, *weights) {
                    for i in 0..g.len() {
                        dst[i / plane] += g[i] * x[i];
                    }
                }
            }
            Op::WeightedSum { parts, weights } => {
                let w = self.value(*weights).data();
                let mut gw = vec![0.0; w.len()];
                for (i, &p) in parts.iter().enumerate() {
                    gw[i] = g.iter().zip(self.value(p).data()).map(|(a, b)| a * b).sum();
                    if let Some(dst) = self.accum(grads, p) {
                        dst.iter_mut().zip(g).for_each(|(d, v)| *d += w[i] * v);
                    }
                }
                if let Some(dst) = self.accum(grads, *weights) {
                    dst.iter_mut().zip(gw).for_each(|(d, v)| *d += v);
                }
            }
            Op::Sum { input } => {
                if let Some(dst) = self.accum(grads, *input) {
                    dst.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Norm { input } => {
                let n = node.value.item();
                if n > 0.0 {
                    let x = self.value(*input).data();
                    if let Some(dst) = self.accum(grads, *input) {
                        for (d, xi) in dst.iter_mut().zip(x) {
                            *d += g[0] * xi / n;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_values(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
