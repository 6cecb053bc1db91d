//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! append nodes in execution order, so the node list is topologically
//! sorted by construction and a single reverse sweep in [`Tape::backward`]
//! populates gradients for every leaf that requires them.
//!
//! ```
//! use renas::autograd::Tape;
//! use renas::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::full([1, 1, 1, 1], 3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().item(), 6.0);
//! ```

pub(crate) mod kernels;

use kernels::ConvGeom;

use crate::error::{Error, Result};
use crate::tensor::{numel, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Relu {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    WeightedSum {
        terms: Vec<Term>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    ConcatChannels {
        parts: Vec<Var>,
    },
    Sum {
        x: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::Relu { .. } => "relu",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Linear { .. } => "linear",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::SliceChannels { .. } => "slice_channels",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::Sum { .. } => "sum",
            Op::Mul { .. } => "mul",
        }
    }
}

/// One summand `coeff[index] * x` of a [`Tape::weighted_sum`].
#[derive(Debug, Clone, Copy)]
pub struct Term {
    pub x: Var,
    pub coeff: Var,
    pub index: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    /// First recorded node holding a NaN or infinity, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .position(|n| !n.value.is_finite())
            .map(|i| (i, self.nodes[i].op.name()))
    }

    /// Clears all gradients so the tape can be differentiated again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.consumed = false;
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("conv2d", x, w, stride, pad, false)?;
        let mut out = vec![0.0; geom.batch * geom.out_ch * geom.out_h * geom.out_w];
        kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
        );
        let value = Tensor::new([geom.batch, geom.out_ch, geom.out_h, geom.out_w], out)?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(value, rg, Op::Conv2d { x, w, geom }))
    }

    /// Per-channel spatial convolution with kernel `(C, 1, k, k)`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = self.conv_geom("depthwise_conv2d", x, w, stride, pad, true)?;
        let mut out = vec![0.0; geom.batch * geom.out_ch * geom.out_h * geom.out_w];
        kernels::depthwise_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
        );
        let value = Tensor::new([geom.batch, geom.out_ch, geom.out_h, geom.out_w], out)?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(value, rg, Op::Depthwise { x, w, geom }))
    }

    /// Depthwise `(C, 1, k, k)` convolution followed by a pointwise
    /// `(C_out, C, 1, 1)` convolution.
    pub fn dw_separable_conv(
        &mut self,
        x: Var,
        w_depth: Var,
        w_point: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let [_, c, _, _] = self.shape(x);
        let [pc_out, pc_in, pk, pk2] = self.shape(w_point);
        if pc_in != c || pk != 1 || pk2 != 1 {
            return Err(Error::shape(
                "dw_separable_conv",
                format!(
                    "pointwise kernel {:?} incompatible with {} depthwise channels",
                    [pc_out, pc_in, pk, pk2],
                    c
                ),
            ));
        }
        let depth = self.depthwise_conv2d(x, w_depth, stride, pad)?;
        self.conv2d(depth, w_point, 1, 0)
    }

    fn conv_geom(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        depthwise: bool,
    ) -> Result<ConvGeom> {
        let [n, c, h, wd] = self.shape(x);
        let [o, wc, k, k2] = self.shape(w);
        if k != k2 {
            return Err(Error::shape(op, format!("kernel must be square, got {k}x{k2}")));
        }
        if k % 2 == 0 {
            return Err(Error::shape(op, format!("kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        if depthwise {
            if o != c || wc != 1 {
                return Err(Error::shape(
                    op,
                    format!("depthwise kernel {:?} needs ({c}, 1, k, k)", [o, wc, k, k2]),
                ));
            }
        } else if wc != c {
            return Err(Error::shape(
                op,
                format!("input has {c} channels but kernel {:?} expects {wc}", [o, wc, k, k2]),
            ));
        }
        let (Some(oh), Some(ow)) = (
            kernels::out_dim(h, k, stride, pad),
            kernels::out_dim(wd, k, stride, pad),
        ) else {
            return Err(Error::shape(
                op,
                format!("{h}x{wd} input too small for kernel {k} with pad {pad}"),
            ));
        };
        Ok(ConvGeom {
            batch: n,
            in_ch: c,
            out_ch: o,
            in_h: h,
            in_w: wd,
            out_h: oh,
            out_w: ow,
            kernel: k,
            stride,
            pad,
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a < 0.0 { 0.0 } else { a }).collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Relu { x })
    }

    /// Spatial mean per channel, `(B, C, H, W) -> (B, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let [n, c, h, w] = v.shape();
        let plane = h * w;
        let data = v
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::new([n, c, 1, 1], data).expect("pool shape");
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::GlobalAvgPool { x })
    }

    /// `x · wᵀ + b` with `x: (B, F, ..)` flattened per sample, `w: (classes, F, 1, 1)`
    /// and `b: (1, classes, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let n = xs[0];
        let f = xs[1] * xs[2] * xs[3];
        let ws = self.shape(w);
        let classes = ws[0];
        if ws[1] * ws[2] * ws[3] != f {
            return Err(Error::shape(
                "linear",
                format!("input features {f} but weight {:?}", ws),
            ));
        }
        if numel(self.shape(b)) != classes {
            return Err(Error::shape(
                "linear",
                format!("bias {:?} does not match {classes} outputs", self.shape(b)),
            ));
        }
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; n * classes];
        for i in 0..n {
            let row = &xd[i * f..(i + 1) * f];
            for c in 0..classes {
                let wr = &wd[c * f..(c + 1) * f];
                let dot: f64 = row.iter().zip(wr).map(|(a, b)| a * b).sum();
                out[i * classes + c] = dot + bd[c];
            }
        }
        let value = Tensor::new([n, classes, 1, 1], out)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, rg, Op::Linear { x, w, b }))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, classes, h, w] = self.shape(logits);
        if h != 1 || w != 1 {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits must be (batch, classes, 1, 1), got {:?}", [n, classes, h, w]),
            ));
        }
        if labels.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for batch of {n}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * classes];
        let mut total = 0.0;
        for i in 0..n {
            let row = &ld[i * classes..(i + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            for p in &mut probs[i * classes..(i + 1) * classes] {
                *p /= z;
            }
            total += max + z.ln() - row[labels[i]];
        }
        let value = Tensor::scalar(total / n as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `Σ coeff[index] · x` over equally shaped terms, summed in the given order.
    pub fn weighted_sum(&mut self, terms: &[Term]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::shape("weighted_sum", "no terms"))?;
        let shape = self.shape(first.x);
        let mut out = vec![0.0; numel(shape)];
        for t in terms {
            if self.shape(t.x) != shape {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("term {:?} differs from {:?}", self.shape(t.x), shape),
                ));
            }
            let coeffs = self.value(t.coeff).data();
            let c = *coeffs.get(t.index).ok_or_else(|| {
                Error::shape(
                    "weighted_sum",
                    format!("coefficient index {} out of {}", t.index, coeffs.len()),
                )
            })?;
            for (o, x) in out.iter_mut().zip(self.value(t.x).data()) {
                *o += c * x;
            }
        }
        let rg = terms
            .iter()
            .any(|t| self.requires_grad(t.x) || self.requires_grad(t.coeff));
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Multiplies `x` by a fixed factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let c = self.constant(Tensor::scalar(factor));
        self.weighted_sum(&[Term {
            x,
            coeff: c,
            index: 0,
        }])
        .expect("single term")
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, len)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::SliceChannels { x, start }))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&refs)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            rg,
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), rg, Op::Sum { x })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Mul { a, b }))
    }

    /// Propagates gradients from the scalar `loss` to every reachable node
    /// that requires them. Intermediate gradients are released after use;
    /// leaf gradients remain readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Backward(
                "tape already differentiated; call zero_grad first".into(),
            ));
        }
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                shape
            )));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.take() else {
                continue;
            };
            propagate(before, &node.op, &node.value, &g);
        }
        Ok(())
    }
}

fn grad_buf(nodes: &mut [Node], v: Var) -> Option<Vec<f64>> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(
        node.grad
            .take()
            .unwrap_or_else(|| vec![0.0; node.value.len()]),
    )
}

fn put_grad(nodes: &mut [Node], v: Var, g: Vec<f64>) {
    nodes[v.0].grad = Some(g);
}

fn propagate(nodes: &mut [Node], op: &Op, out: &Tensor, g: &[f64]) {
    match op {
        Op::Leaf => {}
        Op::Conv2d { x, w, geom } => {
            if let Some(mut dx) = grad_buf(nodes, *x) {
                kernels::conv_backward_input(geom, g, nodes[w.0].value.data(), &mut dx);
                put_grad(nodes, *x, dx);
            }
            if let Some(mut dw) = grad_buf(nodes, *w) {
                kernels::conv_backward_weight(geom, g, nodes[x.0].value.data(), &mut dw);
                put_grad(nodes, *w, dw);
            }
        }
        Op::Depthwise { x, w, geom } => {
            if let Some(mut dx) = grad_buf(nodes, *x) {
                kernels::depthwise_backward_input(geom, g, nodes[w.0].value.data(), &mut dx);
                put_grad(nodes, *x, dx);
            }
            if let Some(mut dw) = grad_buf(nodes, *w) {
                kernels::depthwise_backward_weight(geom, g, nodes[x.0].value.data(), &mut dw);
                put_grad(nodes, *w, dw);
            }
        }
        Op::Relu { x } => {
            if let Some(mut dx) = grad_buf(nodes, *x) {
                for ((d, &gv), &o) in dx.iter_mut().zip(g).zip(out.data()) {
                    if o > 0.0 {
                        *d += gv;
                    }
                }
                put_grad(nodes, *x, dx);
            }
        }
        Op::GlobalAvgPool { x } => {
            if let Some(mut dx) = grad_buf(nodes, *x) {
                let [_, _, h, w] = nodes[x.0].value.shape();
                let plane = h * w;
                let inv = 1.0 / plane as f64;
                for (chunk, &gv) in dx.chunks_mut(plane).zip(g) {
                    for d in chunk {
                        *d += gv * inv;
                    }
                }
                put_grad(nodes, *x, dx);
            }
        }
        Op::Linear { x, w, b } => {
            let xs = nodes[x.0].value.shape();
            let n = xs[0];
            let f = xs[1] * xs[2] * xs[3];
            let classes = nodes[w.0].value.shape()[0];
            if let Some(mut dx) = grad_buf(nodes, *x) {
                let wd = nodes[w.0].value.data();
                for i in 0..n {
                    for c in 0..classes {
                        let gv = g[i * classes + c];
                        for (d, wv) in dx[i * f..(i + 1) * f].iter_mut().zip(&wd[c * f..]) {
                            *d += gv * wv;
                        }
                    }
                }
                put_grad(nodes, *x, dx);
            }
            if let Some(mut dw) = grad_buf(nodes, *w) {
                let xd = nodes[x.0].value.data();
                for i in 0..n {
                    for c in 0..classes {
                        let gv = g[i * classes + c];
                        for (d, xv) in dw[c * f..(c + 1) * f].iter_mut().zip(&xd[i * f..]) {
                            *d += gv * xv;
                        }
                    }
                }
                put_grad(nodes, *w, dw);
            }
            if let Some(mut db) = grad_buf(nodes, *b) {
                for i in 0..n {
                    for c in 0..classes {
                        db[c] += g[i * classes + c];
                    }
                }
                put_grad(nodes, *b, db);
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            if let Some(mut dl) = grad_buf(nodes, *logits) {
                let n = labels.len();
                let classes = probs.len() / n;
                let scale = g[0] / n as f64;
                for i in 0..n {
                    for c in 0..classes {
                        let onehot = if c == labels[i] { 1.0 } else { 0.0 };
                        dl[i * classes + c] += scale * (probs[i * classes + c] - onehot);
                    }
                }
                put_grad(nodes, *logits, dl);
            }
        }
        Op::WeightedSum { terms } => {
            for t in terms {
                if let Some(mut dc) = grad_buf(nodes, t.coeff) {
                    let dot: f64 = nodes[t.x.0]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(a, b)| a * b)
                        .sum();
                    dc[t.index] += dot;
                    put_grad(nodes, t.coeff, dc);
                }
                if let Some(mut dx) = grad_buf(nodes, t.x) {
                    let c = nodes[t.coeff.0].value.data()[t.index];
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += c * gv;
                    }
                    put_grad(nodes, t.x, dx);
                }
            }
        }
        Op::SliceChannels { x, start } => {
            if let Some(mut dx) = grad_buf(nodes, *x) {
                let [n, c, h, w] = nodes[x.0].value.shape();
                let len = out.channels();
                let plane = h * w;
                for b in 0..n {
                    let src = &g[b * len * plane..(b + 1) * len * plane];
                    let dst = &mut dx[(b * c + start) * plane..][..len * plane];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                put_grad(nodes, *x, dx);
            }
        }
        Op::ConcatChannels { parts } => {
            let [n, total, h, w] = out.shape();
            let plane = h * w;
            let mut offset = 0;
            for p in parts {
                let c = nodes[p.0].value.channels();
                if let Some(mut dp) = grad_buf(nodes, *p) {
                    for b in 0..n {
                        let src = &g[(b * total + offset) * plane..][..c * plane];
                        let dst = &mut dp[b * c * plane..(b + 1) * c * plane];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    put_grad(nodes, *p, dp);
                }
                offset += c;
            }
        }
        Op::Sum { x } => {
            if let Some(mut dx) = grad_buf(nodes, *x) {
                for d in &mut dx {
                    *d += g[0];
                }
                put_grad(nodes, *x, dx);
            }
        }
        Op::Mul { a, b } => {
            if let Some(mut da) = grad_buf(nodes, *a) {
                for ((d, gv), bv) in da.iter_mut().zip(g).zip(nodes[b.0].value.data()) {
                    *d += gv * bv;
                }
                put_grad(nodes, *a, da);
            }
            if let Some(mut db) = grad_buf(nodes, *b) {
                for ((d, gv), av) in db.iter_mut().zip(g).zip(nodes[a.0].value.data()) {
                    *d += gv * av;
                }
                put_grad(nodes, *b, db);
            }
        }
    }
}
