//! Reverse-mode differentiation over a linear tape of primitive ops.
//!
//! Nodes are appended in evaluation order, which is already a topological
//! order, so the backward pass is a single reverse sweep that visits each
//! node exactly once. Gradients of unreachable parameters stay at exact zero.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<F: Scalar> {
    Leaf,
    Param,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
    },
    Upsample2x {
        input: NodeId,
    },
    Affine {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    Narrow {
        input: NodeId,
        start: usize,
        len: usize,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: F,
    },
    SqDiffSum {
        a: NodeId,
        b: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    grad: Option<Vec<F>>,
    needs_grad: bool,
    op: Op<F>,
}

/// Kernel size and padding are fixed by the architecture.
pub const CONV_KERNEL: usize = 5;
pub const CONV_PAD: usize = 2;

pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, needs_grad: bool, op: Op<F>) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant input; no gradient is tracked through it.
    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// A trainable leaf; `backward` fills its grad (zero if unreachable).
    pub fn param(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, true, Op::Param)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a rank-anything single-element node.
    pub fn scalar_value(&self, id: NodeId) -> F {
        debug_assert_eq!(self.nodes[id.0].value.numel(), 1);
        self.nodes[id.0].value.data()[0]
    }

    /// Gradient slice of a node after `backward`; None if never computed.
    pub fn grad(&self, id: NodeId) -> Option<&[F]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        if x.rank() != 4 {
            return Err(Error::shape(format!(
                "conv2d input must be BxCxHxW, got {:?}",
                x.shape()
            )));
        }
        if k.rank() != 4 || k.shape()[2] != CONV_KERNEL || k.shape()[3] != CONV_KERNEL {
            return Err(Error::shape(format!(
                "conv2d kernel must be CoutxCinx{CONV_KERNEL}x{CONV_KERNEL}, got {:?}",
                k.shape()
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::arg(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let (batch, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let cout = k.shape()[0];
        if k.shape()[1] != cin {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {cin}, kernel expects {}",
                k.shape()[1]
            )));
        }
        if b.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{cout}], got {:?}",
                b.shape()
            )));
        }
        if !x.is_finite() {
            return Err(Error::numeric("conv2d: non-finite input"));
        }
        let oh = ops::conv_out_size(h, CONV_KERNEL, stride, CONV_PAD);
        let ow = ops::conv_out_size(w, CONV_KERNEL, stride, CONV_PAD);
        let mut out = Tensor::zeros(&[batch, cout, oh, ow]);
        ops::conv2d_forward(
            self.value(input).data(),
            batch,
            cin,
            h,
            w,
            self.value(kernel).data(),
            cout,
            CONV_KERNEL,
            stride,
            CONV_PAD,
            self.value(bias).data(),
            out.data_mut(),
        );
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            out,
            needs,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
            },
        ))
    }

    pub fn upsample2x(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if x.rank() != 4 {
            return Err(Error::shape(format!(
                "upsample2x input must be BxCxHxW, got {:?}",
                x.shape()
            )));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let mut out = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
        ops::upsample2x_forward(x.data(), b * c, h, w, out.data_mut());
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::Upsample2x { input }))
    }

    pub fn affine(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        if x.rank() != 2 || w.rank() != 2 {
            return Err(Error::shape(format!(
                "affine expects 2-D input and weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let (batch, d) = (x.shape()[0], x.shape()[1]);
        let (dout, dw) = (w.shape()[0], w.shape()[1]);
        if d != dw {
            return Err(Error::shape(format!(
                "affine dimension mismatch: input width {d}, weight expects {dw}"
            )));
        }
        if let Some(bias) = bias {
            let bt = self.value(bias);
            if bt.shape() != [dout] {
                return Err(Error::shape(format!(
                    "affine bias must be [{dout}], got {:?}",
                    bt.shape()
                )));
            }
        }
        if !x.is_finite() {
            return Err(Error::numeric("affine: non-finite input"));
        }
        let mut out = Tensor::zeros(&[batch, dout]);
        ops::affine_forward(
            self.value(input).data(),
            batch,
            d,
            self.value(weight).data(),
            dout,
            bias.map(|b| self.nodes[b.0].value.data()),
            out.data_mut(),
        );
        let needs = self.needs(input)
            || self.needs(weight)
            || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(out, needs, Op::Affine { input, weight, bias }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(|v| v.max(F::zero()));
        let needs = self.needs(input);
        self.push(out, needs, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let one = F::one();
        let out = self.value(input).map(|v| one / (one + (-v).exp()));
        let needs = self.needs(input);
        self.push(out, needs, Op::Sigmoid { input })
    }

    /// Columns [start, start+len) of a 2-D node.
    pub fn narrow(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(input);
        if x.rank() != 2 {
            return Err(Error::shape(format!(
                "narrow expects a 2-D node, got {:?}",
                x.shape()
            )));
        }
        let (batch, d) = (x.shape()[0], x.shape()[1]);
        if start + len > d {
            return Err(Error::shape(format!(
                "narrow [{start}, {}) out of bounds for width {d}",
                start + len
            )));
        }
        let mut out = Tensor::zeros(&[batch, len]);
        for b in 0..batch {
            out.data_mut()[b * len..(b + 1) * len]
                .copy_from_slice(&x.data()[b * d + start..b * d + start + len]);
        }
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::Narrow { input, start, len }))
    }

    /// Concatenates two 2-D nodes along columns.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(Error::shape(format!(
                "concat expects 2-D nodes with equal batch, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (batch, da, db) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(&[batch, da + db]);
        for i in 0..batch {
            out.data_mut()[i * (da + db)..i * (da + db) + da]
                .copy_from_slice(&ta.data()[i * da..(i + 1) * da]);
            out.data_mut()[i * (da + db) + da..(i + 1) * (da + db)]
                .copy_from_slice(&tb.data()[i * db..(i + 1) * db]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Concat { a, b }))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(input).clone().reshaped(shape)?;
        let needs = self.needs(input);
        Ok(self.push(out, needs, Op::Reshape { input }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, needs, Op::Add { a, b }))
    }

    pub fn scale(&mut self, input: NodeId, factor: F) -> NodeId {
        let out = self.value(input).map(|v| v * factor);
        let needs = self.needs(input);
        self.push(out, needs, Op::Scale { input, factor })
    }

    /// Scalar node: sum of squared differences between two same-shape nodes.
    pub fn sq_diff_sum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "sq_diff_sum shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let v = ops::sq_diff_sum(ta.data(), tb.data());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(v), needs, Op::SqDiffSum { a, b }))
    }

    /// Scalar node: mean softmax cross-entropy of 2-D logits vs labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let t = self.value(logits);
        if t.rank() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "cross-entropy expects logits [{}, k], got {:?}",
                labels.len(),
                t.shape()
            )));
        }
        let k = t.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::arg(format!("label {bad} out of range for {k} classes")));
        }
        let v = ops::softmax_cross_entropy(t.data(), labels.len(), k, labels);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(v),
            needs,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<F> {
        let n = self.nodes[id.0].value.numel();
        self.nodes[id.0].grad.get_or_insert_with(|| vec![F::zero(); n])
    }

    /// Reverse sweep from `loss` (a scalar node). Fills the grad slot of every
    /// grad-tracked node at or below `loss`; parameters never touched by the
    /// loss keep an all-zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::arg(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        // Pre-size every tracked grad so unreachable parameters end at zero.
        for i in 0..self.nodes.len() {
            if self.nodes[i].needs_grad {
                let _ = self.grad_buf(NodeId(i));
            }
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // loss does not depend on any parameter
        }
        self.grad_buf(loss)[0] = F::one();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf | Op::Param => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                } => self.backward_conv(NodeId(i), input, kernel, bias, stride),
                Op::Upsample2x { input } => {
                    if self.needs(input) {
                        let x = &self.nodes[input.0].value;
                        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                        let gout = self.nodes[i].grad.take().unwrap();
                        ops::upsample2x_backward(&gout, b * c, h, w, self.grad_buf(input));
                        self.nodes[i].grad = Some(gout);
                    }
                }
                Op::Affine { input, weight, bias } => self.backward_affine(NodeId(i), input, weight, bias),
                Op::Relu { input } => {
                    if self.needs(input) {
                        let gout = self.nodes[i].grad.take().unwrap();
                        let xs: Vec<F> = self.nodes[input.0].value.data().to_vec();
                        let gin = self.grad_buf(input);
                        // subgradient at exactly zero is zero
                        for j in 0..gout.len() {
                            if xs[j] > F::zero() {
                                gin[j] = gin[j] + gout[j];
                            }
                        }
                        self.nodes[i].grad = Some(gout);
                    }
                }
                Op::Sigmoid { input } => {
                    if self.needs(input) {
                        let gout = self.nodes[i].grad.take().unwrap();
                        let ys: Vec<F> = self.nodes[i].value.data().to_vec();
                        let gin = self.grad_buf(input);
                        for j in 0..gout.len() {
                            gin[j] = gin[j] + gout[j] * ys[j] * (F::one() - ys[j]);
                        }
                        self.nodes[i].grad = Some(gout);
                    }
                }
                Op::Narrow { input, start, len } => {
                    if self.needs(input) {
                        let gout = self.nodes[i].grad.take().unwrap();
                        let d = self.nodes[input.0].value.shape()[1];
                        let batch = self.nodes[input.0].value.shape()[0];
                        let gin = self.grad_buf(input);
                        for b in 0..batch {
                            for j in 0..len {
                                gin[b * d + start + j] = gin[b * d + start + j] + gout[b * len + j];
                            }
                        }
                        self.nodes[i].grad = Some(gout);
                    }
                }
                Op::Concat { a, b } => {
                    let gout = self.nodes[i].grad.take().unwrap();
                    let (batch, da) = {
                        let t = &self.nodes[a.0].value;
                        (t.shape()[0], t.shape()[1])
                    };
                    let db = self.nodes[b.0].value.shape()[1];
                    if self.needs(a) {
                        let ga = self.grad_buf(a);
                        for r in 0..batch {
                            for j in 0..da {
                                ga[r * da + j] = ga[r * da + j] + gout[r * (da + db) + j];
                            }
                        }
                    }
                    if self.needs(b) {
                        let gb = self.grad_buf(b);
                        for r in 0..batch {
                            for j in 0..db {
                                gb[r * db + j] = gb[r * db + j] + gout[r * (da + db) + da + j];
                            }
                        }
                    }
                    self.nodes[i].grad = Some(gout);
                }
                Op::Reshape { input } => {
                    if self.needs(input) {
                        let gout = self.nodes[i].grad.take().unwrap();
                        let gin = self.grad_buf(input);
                        for j in 0..gout.len() {
                            gin[j] = gin[j] + gout[j];
                        }
                        self.nodes[i].grad = Some(gout);
                    }
                }
                Op::Add { a, b } => {
                    let gout = self.nodes[i].grad.take().unwrap();
                    for (target, tracked) in [(a, self.needs(a)), (b, self.needs(b))] {
                        if tracked {
                            let g = self.grad_buf(target);
                            for j in 0..gout.len() {
                                g[j] = g[j] + gout[j];
                            }
                        }
                    }
                    self.nodes[i].grad = Some(gout);
                }
                Op::Scale { input, factor } => {
                    if self.needs(input) {
                        let gout = self.nodes[i].grad.take().unwrap();
                        let gin = self.grad_buf(input);
                        for j in 0..gout.len() {
                            gin[j] = gin[j] + gout[j] * factor;
                        }
                        self.nodes[i].grad = Some(gout);
                    }
                }
                Op::SqDiffSum { a, b } => {
                    let g = self.nodes[i].grad.as_ref().unwrap()[0];
                    let two = F::from_f64(2.0);
                    let diffs: Vec<F> = self.nodes[a.0]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(&x, &y)| x - y)
                        .collect();
                    if self.needs(a) {
                        let ga = self.grad_buf(a);
                        for j in 0..diffs.len() {
                            ga[j] = ga[j] + two * diffs[j] * g;
                        }
                    }
                    if self.needs(b) {
                        let gb = self.grad_buf(b);
                        for j in 0..diffs.len() {
                            gb[j] = gb[j] - two * diffs[j] * g;
                        }
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    if self.needs(logits) {
                        let g = self.nodes[i].grad.as_ref().unwrap()[0];
                        let t = self.nodes[logits.0].value.clone();
                        let k = t.shape()[1];
                        ops::softmax_cross_entropy_backward(
                            t.data(),
                            labels.len(),
                            k,
                            &labels,
                            g,
                            self.grad_buf(logits),
                        );
                    }
                }
            }
        }
        Ok(())
    }

    fn backward_conv(&mut self, out: NodeId, input: NodeId, kernel: NodeId, bias: NodeId, stride: usize) {
        let gout = self.nodes[out.0].grad.take().unwrap();
        let x = self.nodes[input.0].value.clone();
        let k = self.nodes[kernel.0].value.clone();
        let (batch, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let cout = k.shape()[0];

        // Grad buffers are needed for all three whenever any is tracked,
        // because the kernel walks them together; untracked ones are scratch.
        let mut gin = vec![F::zero(); x.numel()];
        let mut gk = vec![F::zero(); k.numel()];
        let mut gb = vec![F::zero(); cout];
        ops::conv2d_backward(
            x.data(),
            batch,
            cin,
            h,
            w,
            k.data(),
            cout,
            CONV_KERNEL,
            stride,
            CONV_PAD,
            &gout,
            &mut gin,
            &mut gk,
            &mut gb,
        );
        if self.needs(input) {
            let g = self.grad_buf(input);
            for j in 0..gin.len() {
                g[j] = g[j] + gin[j];
            }
        }
        if self.needs(kernel) {
            let g = self.grad_buf(kernel);
            for j in 0..gk.len() {
                g[j] = g[j] + gk[j];
            }
        }
        if self.needs(bias) {
            let g = self.grad_buf(bias);
            for j in 0..gb.len() {
                g[j] = g[j] + gb[j];
            }
        }
        self.nodes[out.0].grad = Some(gout);
    }

    fn backward_affine(&mut self, out: NodeId, input: NodeId, weight: NodeId, bias: Option<NodeId>) {
        let gout = self.nodes[out.0].grad.take().unwrap();
        let x = self.nodes[input.0].value.clone();
        let w = self.nodes[weight.0].value.clone();
        let (batch, d) = (x.shape()[0], x.shape()[1]);
        let dout = w.shape()[0];

        let mut gx = vec![F::zero(); x.numel()];
        let mut gw = vec![F::zero(); w.numel()];
        let mut gb = vec![F::zero(); dout];
        ops::affine_backward(
            x.data(),
            batch,
            d,
            w.data(),
            dout,
            &gout,
            &mut gx,
            &mut gw,
            Some(&mut gb),
        );
        if self.needs(input) {
            let g = self.grad_buf(input);
            for j in 0..gx.len() {
                g[j] = g[j] + gx[j];
            }
        }
        if self.needs(weight) {
            let g = self.grad_buf(weight);
            for j in 0..gw.len() {
                g[j] = g[j] + gw[j];
            }
        }
        if let Some(bias) = bias {
            if self.needs(bias) {
                let g = self.grad_buf(bias);
                for j in 0..gb.len() {
                    g[j] = g[j] + gb[j];
                }
            }
        }
        self.nodes[out.0].grad = Some(gout);
    }
}
