//! The computation tape: nodes are appended during the forward pass and
//! visited in reverse by [`Graph::backward`].

use crate::kernels::attention::{attention_backward, attention_forward, AttnGeom};
use crate::kernels::conv::{
    conv1d_backward, conv1d_forward, depthwise_backward, depthwise_forward, ConvGeom, DepthwiseGeom,
};
use crate::kernels::norm::{
    batch_norm_eval, batch_norm_eval_backward, batch_norm_train, batch_norm_train_backward, layer_norm,
    layer_norm_backward, BatchNormSaved, LayerNormSaved,
};
use crate::kernels::pool::max_pool_forward;
use crate::gemm::{gemm, MatRef};
use crate::{TapeError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding rule for depthwise convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zeros,
    Circular,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values each statistic was computed over.
    pub count: usize,
}

enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Depthwise {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: DepthwiseGeom,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        dims: (usize, usize, usize),
        saved: BatchNormSaved,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
        dims: (usize, usize, usize),
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: LayerNormSaved,
    },
    Relu(Var),
    Add(Var, Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanLast(Var),
    Transpose12 {
        x: Var,
        dims: (usize, usize, usize),
    },
    Linear {
        x: Var,
        w: Var,
        bias: Option<Var>,
    },
    Concat1 {
        parts: Vec<Var>,
        dims: Vec<(usize, usize, usize)>,
    },
    Slice1 {
        x: Var,
        start: usize,
        dims: (usize, usize, usize),
        len: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
        eps: f64,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        geom: AttnGeom,
        probs: Vec<f64>,
    },
    /// Scalar with precomputed partial derivatives w.r.t. each input.
    Scalar {
        inputs: Vec<Var>,
        partials: Vec<Tensor>,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `v`; `None` when no path reaches `v`.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient of the root w.r.t. `v`, zeros when unreachable.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn reaches(&self, v: Var) -> bool {
        matches!(self.grads.get(v.0), Some(Some(_)))
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize), TapeError> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(TapeError::Shape(format!("{what} expects a rank-3 tensor, got {s:?}"))),
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var, TapeError> {
        let (batch, c_in, len_in) = dims3(self.value(x), "conv1d input")?;
        let (c_out, wc, kernel) = dims3(self.value(w), "conv1d weight")?;
        if wc != c_in {
            return Err(TapeError::Shape(format!("conv1d weight expects {wc} input channels, got {c_in}")));
        }
        if let Some(b) = bias {
            if self.value(b).len() != c_out {
                return Err(TapeError::Shape("conv1d bias length mismatch".into()));
            }
        }
        let len_out = ConvGeom::output_len(len_in, kernel, stride, padding, dilation)
            .ok_or_else(|| TapeError::Shape(format!("conv1d input length {len_in} too short")))?;
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            len_in,
            len_out,
            kernel,
            stride,
            padding,
            dilation,
        };
        let y = conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let ng = self.ng(x) || self.ng(w) || bias.is_some_and(|b| self.ng(b));
        Ok(self.push(
            Tensor::from_parts(vec![batch, c_out, len_out], y),
            Op::Conv1d { x, w, bias, geom },
            ng,
        ))
    }

    /// Stride-1 depthwise convolution; `w` is `[channels, kernel]`.
    pub fn depthwise_conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        padding: usize,
        dilation: usize,
        mode: Padding,
    ) -> Result<Var, TapeError> {
        let (batch, channels, len_in) = dims3(self.value(x), "depthwise input")?;
        let (wc, kernel) = match self.value(w).shape() {
            [a, b] => (*a, *b),
            s => return Err(TapeError::Shape(format!("depthwise weight must be [C, K], got {s:?}"))),
        };
        if wc != channels {
            return Err(TapeError::Shape(format!("depthwise weight has {wc} channels, input {channels}")));
        }
        let len_out = ConvGeom::output_len(len_in, kernel, 1, padding, dilation)
            .ok_or_else(|| TapeError::Shape("depthwise input too short".into()))?;
        let circular = mode == Padding::Circular;
        if circular && len_out != len_in {
            return Err(TapeError::Shape("circular padding requires a length-preserving conv".into()));
        }
        let geom = DepthwiseGeom {
            batch,
            channels,
            len_in,
            len_out,
            kernel,
            padding,
            dilation,
            circular,
        };
        let y = depthwise_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let ng = self.ng(x) || self.ng(w) || bias.is_some_and(|b| self.ng(b));
        Ok(self.push(
            Tensor::from_parts(vec![batch, channels, len_out], y),
            Op::Depthwise { x, w, bias, geom },
            ng,
        ))
    }

    /// Batch norm using the statistics of the current batch.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats), TapeError> {
        let dims = dims3(self.value(x), "batch norm")?;
        let (y, saved) = batch_norm_train(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            dims.0,
            dims.1,
            dims.2,
            eps,
        );
        let stats = BatchStats {
            mean: saved.mean.clone(),
            var: saved.var.clone(),
            count: dims.0 * dims.2,
        };
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let shape = self.value(x).shape().to_vec();
        let v = self.push(
            Tensor::from_parts(shape, y),
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                dims,
                saved,
            },
            ng,
        );
        Ok((v, stats))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var, TapeError> {
        let dims = dims3(self.value(x), "batch norm")?;
        let y = batch_norm_eval(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            var,
            dims.0,
            dims.1,
            dims.2,
            eps,
        );
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, y),
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                var: var.to_vec(),
                eps,
                dims,
            },
            ng,
        ))
    }

    /// Layer norm over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TapeError> {
        let width = self.value(x).last_dim();
        if self.value(gamma).len() != width || self.value(beta).len() != width {
            return Err(TapeError::Shape("layer norm affine width mismatch".into()));
        }
        let (y, saved) = layer_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            width,
            eps,
        );
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, y), Op::LayerNorm { x, gamma, beta, saved }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(y, Op::Relu(x), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TapeError::Shape(format!(
                "add shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut y = self.value(a).clone();
        y.add_assign_slice(self.value(b).data());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(y, Op::Add(a, b), ng))
    }

    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var, TapeError> {
        let (b, c, len_in) = dims3(self.value(x), "max pool")?;
        if padding >= kernel {
            return Err(TapeError::Shape("max pool padding must be smaller than the kernel".into()));
        }
        let len_out = ConvGeom::output_len(len_in, kernel, stride, padding, 1)
            .ok_or_else(|| TapeError::Shape("max pool input too short".into()))?;
        let (y, argmax) = max_pool_forward(self.value(x).data(), b * c, len_in, len_out, kernel, stride, padding);
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b, c, len_out], y), Op::MaxPool { x, argmax }, ng))
    }

    /// Mean over the last axis (global average pooling for `[B, C, L]`).
    pub fn mean_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut shape = t.shape().to_vec();
        shape.pop();
        let y: Vec<f64> = t.data().chunks(d).map(|c| c.iter().sum::<f64>() / d as f64).collect();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, y), Op::MeanLast(x), ng)
    }

    /// `[B, A, C] -> [B, C, A]`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var, TapeError> {
        let dims = dims3(self.value(x), "transpose")?;
        let (b, a, c) = dims;
        let src = self.value(x).data();
        let mut y = vec![0.0; src.len()];
        for bi in 0..b {
            for i in 0..a {
                for j in 0..c {
                    y[(bi * c + j) * a + i] = src[(bi * a + i) * c + j];
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b, c, a], y), Op::Transpose12 { x, dims }, ng))
    }

    /// `y = x W^T + b` applied to the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var, TapeError> {
        let (out_dim, in_dim) = match self.value(w).shape() {
            [o, i] => (*o, *i),
            s => return Err(TapeError::Shape(format!("linear weight must be rank 2, got {s:?}"))),
        };
        let xt = self.value(x);
        if xt.last_dim() != in_dim {
            return Err(TapeError::Shape(format!(
                "linear expects last dim {in_dim}, got {:?}",
                xt.shape()
            )));
        }
        let rows = xt.rows();
        let mut y = vec![0.0; rows * out_dim];
        gemm(
            MatRef::row_major(xt.data(), rows, in_dim),
            MatRef::transposed(self.value(w).data(), out_dim, in_dim),
            &mut y,
            0.0,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            if bv.len() != out_dim {
                return Err(TapeError::Shape("linear bias length mismatch".into()));
            }
            for r in 0..rows {
                for (o, bb) in y[r * out_dim..(r + 1) * out_dim].iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let ng = self.ng(x) || self.ng(w) || bias.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::from_parts(shape, y), Op::Linear { x, w, bias }, ng))
    }

    /// Concatenates rank-3 tensors along axis 1.
    pub fn concat1(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        let dims: Vec<_> = parts
            .iter()
            .map(|p| dims3(self.value(*p), "concat"))
            .collect::<Result<_, _>>()?;
        let (b, _, c) = *dims.first().ok_or_else(|| TapeError::Shape("concat of nothing".into()))?;
        if dims.iter().any(|d| d.0 != b || d.2 != c) {
            return Err(TapeError::Shape(format!("concat shape mismatch {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut y = Vec::with_capacity(b * total * c);
        for bi in 0..b {
            for (p, d) in parts.iter().zip(&dims) {
                let src = self.value(*p).data();
                y.extend_from_slice(&src[bi * d.1 * c..(bi + 1) * d.1 * c]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(
            Tensor::from_parts(vec![b, total, c], y),
            Op::Concat1 {
                parts: parts.to_vec(),
                dims,
            },
            ng,
        ))
    }

    /// `x[:, start..start+len, :]` for a rank-3 tensor.
    pub fn slice1(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TapeError> {
        let dims = dims3(self.value(x), "slice")?;
        if start + len > dims.1 {
            return Err(TapeError::Shape(format!("slice {start}..{} out of {}", start + len, dims.1)));
        }
        let (b, a, c) = dims;
        let src = self.value(x).data();
        let mut y = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            y.extend_from_slice(&src[(bi * a + start) * c..(bi * a + start + len) * c]);
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::from_parts(vec![b, len, c], y), Op::Slice1 { x, start, dims, len }, ng))
    }

    /// Selects entries along axis 0.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TapeError> {
        let t = self.value(x);
        let n = t.shape()[0];
        let stride = t.len() / n.max(1);
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(TapeError::Shape(format!("row {bad} out of {n}")));
        }
        let mut y = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            y.extend_from_slice(&t.data()[r * stride..(r + 1) * stride]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(shape, y),
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Row-wise L2 normalization; rows with norm below `eps` are divided by `eps`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut norms = Vec::with_capacity(t.rows());
        let mut y = t.data().to_vec();
        for row in y.chunks_mut(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = n.max(eps);
            for v in row.iter_mut() {
                *v /= denom;
            }
            norms.push(n);
        }
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        self.push(Tensor::from_parts(shape, y), Op::L2Normalize { x, norms, eps }, ng)
    }

    /// Multi-head attention; `q` is `[B, T, C]`, `k` and `v` are `[B, S, C]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, scale: f64) -> Result<Var, TapeError> {
        let (b, t, c) = dims3(self.value(q), "attention query")?;
        let (bk, s, ck) = dims3(self.value(k), "attention key")?;
        if bk != b || ck != c || self.value(v).shape() != self.value(k).shape() {
            return Err(TapeError::Shape("attention q/k/v shape mismatch".into()));
        }
        if heads == 0 || c % heads != 0 {
            return Err(TapeError::Shape(format!("width {c} not divisible by {heads} heads")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(TapeError::Shape("attention scale must be positive".into()));
        }
        let geom = AttnGeom {
            batch: b,
            queries: t,
            keys: s,
            width: c,
            heads,
            scale,
        };
        let (y, probs) = attention_forward(self.value(q).data(), self.value(k).data(), self.value(v).data(), &geom);
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::from_parts(vec![b, t, c], y),
            Op::Attention { q, k, v, geom, probs },
            ng,
        ))
    }

    /// Attention weights `[B, heads, T, S]` of an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Records a scalar computed outside the tape together with its partial
    /// derivatives w.r.t. `inputs`.
    pub fn scalar_node(&mut self, value: f64, inputs: &[Var], partials: Vec<Tensor>) -> Result<Var, TapeError> {
        if inputs.len() != partials.len() {
            return Err(TapeError::Shape("one partial per input required".into()));
        }
        for (i, p) in inputs.iter().zip(&partials) {
            if self.value(*i).shape() != p.shape() {
                return Err(TapeError::Shape(format!(
                    "partial shape {:?} does not match input {:?}",
                    p.shape(),
                    self.value(*i).shape()
                )));
            }
        }
        let ng = inputs.iter().any(|i| self.ng(*i));
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                inputs: inputs.to_vec(),
                partials,
            },
            ng,
        ))
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var, TapeError> {
        let mut total = 0.0;
        for (v, w) in terms {
            let t = self.value(*v);
            if t.len() != 1 {
                return Err(TapeError::Shape("weighted_sum takes scalar nodes".into()));
            }
            total += w * t.data()[0];
        }
        let ng = terms.iter().any(|(v, w)| *w != 0.0 && self.ng(*v));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), ng))
    }

    /// `sum(x * weights)`; a convenient scalar probe for gradient checks.
    pub fn dot_const(&mut self, x: Var, weights: &Tensor) -> Result<Var, TapeError> {
        if self.value(x).shape() != weights.shape() {
            return Err(TapeError::Shape("dot_const shape mismatch".into()));
        }
        let value = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        self.scalar_node(value, &[x], vec![weights.clone()])
    }

    /// Gradients of the scalar `root` w.r.t. every node that needs one.
    pub fn backward(&self, root: Var) -> Result<Gradients, TapeError> {
        if self.value(root).len() != 1 {
            return Err(TapeError::Shape("backward root must be a scalar".into()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.ng(root) {
            grads[root.0] = Some(vec![1.0]);
        }
        for idx in (0..n).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let emit = |v: Var, g: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if !self.ng(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gy);
                    continue;
                }
                Op::Conv1d { x, w, bias, geom } => {
                    let r = conv1d_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &gy,
                        geom,
                        self.ng(*x),
                        self.ng(*w),
                        bias.is_some_and(|b| self.ng(b)),
                    );
                    if let Some(d) = r.dx {
                        emit(*x, d, &mut grads);
                    }
                    if let Some(d) = r.dw {
                        emit(*w, d, &mut grads);
                    }
                    if let (Some(b), Some(d)) = (bias, r.dbias) {
                        emit(*b, d, &mut grads);
                    }
                }
                Op::Depthwise { x, w, bias, geom } => {
                    let r = depthwise_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        &gy,
                        geom,
                        self.ng(*x),
                        self.ng(*w),
                        bias.is_some_and(|b| self.ng(b)),
                    );
                    if let Some(d) = r.dx {
                        emit(*x, d, &mut grads);
                    }
                    if let Some(d) = r.dw {
                        emit(*w, d, &mut grads);
                    }
                    if let (Some(b), Some(d)) = (bias, r.dbias) {
                        emit(*b, d, &mut grads);
                    }
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    dims,
                    saved,
                } => {
                    let r = batch_norm_train_backward(
                        &gy,
                        self.value(*gamma).data(),
                        saved,
                        dims.0,
                        dims.1,
                        dims.2,
                        (self.ng(*x), self.ng(*gamma), self.ng(*beta)),
                    );
                    if let Some(d) = r.dx {
                        emit(*x, d, &mut grads);
                    }
                    if let Some(d) = r.dgamma {
                        emit(*gamma, d, &mut grads);
                    }
                    if let Some(d) = r.dbeta {
                        emit(*beta, d, &mut grads);
                    }
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                    dims,
                } => {
                    let r = batch_norm_eval_backward(
                        self.value(*x).data(),
                        &gy,
                        self.value(*gamma).data(),
                        mean,
                        var,
                        dims.0,
                        dims.1,
                        dims.2,
                        *eps,
                        (self.ng(*x), self.ng(*gamma), self.ng(*beta)),
                    );
                    if let Some(d) = r.dx {
                        emit(*x, d, &mut grads);
                    }
                    if let Some(d) = r.dgamma {
                        emit(*gamma, d, &mut grads);
                    }
                    if let Some(d) = r.dbeta {
                        emit(*beta, d, &mut grads);
                    }
                }
                Op::LayerNorm { x, gamma, beta, saved } => {
                    let width = self.value(*x).last_dim();
                    let r = layer_norm_backward(
                        &gy,
                        self.value(*gamma).data(),
                        saved,
                        width,
                        (self.ng(*x), self.ng(*gamma), self.ng(*beta)),
                    );
                    if let Some(d) = r.dx {
                        emit(*x, d, &mut grads);
                    }
                    if let Some(d) = r.dgamma {
                        emit(*gamma, d, &mut grads);
                    }
                    if let Some(d) = r.dbeta {
                        emit(*beta, d, &mut grads);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let d = gy.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                    emit(*x, d, &mut grads);
                }
                Op::Add(a, b) => {
                    emit(*a, gy.clone(), &mut grads);
                    emit(*b, gy, &mut grads);
                }
                Op::MaxPool { x, argmax } => {
                    let mut d = vec![0.0; self.value(*x).len()];
                    for (g, &i) in gy.iter().zip(argmax) {
                        d[i] += g;
                    }
                    emit(*x, d, &mut grads);
                }
                Op::MeanLast(x) => {
                    let len = self.value(*x).last_dim();
                    let mut d = Vec::with_capacity(len * gy.len());
                    for g in &gy {
                        d.extend(std::iter::repeat(g / len as f64).take(len));
                    }
                    emit(*x, d, &mut grads);
                }
                Op::Transpose12 { x, dims } => {
                    let (b, a, c) = *dims;
                    let mut d = vec![0.0; gy.len()];
                    for bi in 0..b {
                        for i in 0..a {
                            for j in 0..c {
                                d[(bi * a + i) * c + j] = gy[(bi * c + j) * a + i];
                            }
                        }
                    }
                    emit(*x, d, &mut grads);
                }
                Op::Linear { x, w, bias } => {
                    let wt = self.value(*w);
                    let (out_dim, in_dim) = (wt.shape()[0], wt.shape()[1]);
                    let xt = self.value(*x);
                    let rows = xt.rows();
                    if self.ng(*x) {
                        let mut d = vec![0.0; rows * in_dim];
                        gemm(
                            MatRef::row_major(&gy, rows, out_dim),
                            MatRef::row_major(wt.data(), out_dim, in_dim),
                            &mut d,
                            0.0,
                        );
                        emit(*x, d, &mut grads);
                    }
                    if self.ng(*w) {
                        let mut d = vec![0.0; out_dim * in_dim];
                        gemm(
                            MatRef::transposed(&gy, rows, out_dim),
                            MatRef::row_major(xt.data(), rows, in_dim),
                            &mut d,
                            0.0,
                        );
                        emit(*w, d, &mut grads);
                    }
                    if let Some(b) = bias {
                        if self.ng(*b) {
                            let mut d = vec![0.0; out_dim];
                            for r in 0..rows {
                                for (acc, g) in d.iter_mut().zip(&gy[r * out_dim..(r + 1) * out_dim]) {
                                    *acc += g;
                                }
                            }
                            emit(*b, d, &mut grads);
                        }
                    }
                }
                Op::Concat1 { parts, dims } => {
                    let total: usize = dims.iter().map(|d| d.1).sum();
                    let c = dims[0].2;
                    let mut offset = 0;
                    for (p, d) in parts.iter().zip(dims) {
                        if self.ng(*p) {
                            let mut g = Vec::with_capacity(d.0 * d.1 * c);
                            for bi in 0..d.0 {
                                let base = (bi * total + offset) * c;
                                g.extend_from_slice(&gy[base..base + d.1 * c]);
                            }
                            emit(*p, g, &mut grads);
                        }
                        offset += d.1;
                    }
                }
                Op::Slice1 { x, start, dims, len } => {
                    let (b, a, c) = *dims;
                    let mut d = vec![0.0; b * a * c];
                    for bi in 0..b {
                        d[(bi * a + start) * c..(bi * a + start + len) * c]
                            .copy_from_slice(&gy[bi * len * c..(bi + 1) * len * c]);
                    }
                    emit(*x, d, &mut grads);
                }
                Op::GatherRows { x, rows } => {
                    let xt = self.value(*x);
                    let stride = xt.len() / xt.shape()[0].max(1);
                    let mut d = vec![0.0; xt.len()];
                    for (i, &r) in rows.iter().enumerate() {
                        for (a, g) in d[r * stride..(r + 1) * stride]
                            .iter_mut()
                            .zip(&gy[i * stride..(i + 1) * stride])
                        {
                            *a += g;
                        }
                    }
                    emit(*x, d, &mut grads);
                }
                Op::L2Normalize { x, norms, eps } => {
                    let y = node.value.data();
                    let dim = node.value.last_dim();
                    let mut d = vec![0.0; gy.len()];
                    for (r, &n) in norms.iter().enumerate() {
                        let o = r * dim;
                        if n > *eps {
                            let dot: f64 = (o..o + dim).map(|i| y[i] * gy[i]).sum();
                            for i in o..o + dim {
                                d[i] = (gy[i] - y[i] * dot) / n;
                            }
                        } else {
                            for i in o..o + dim {
                                d[i] = gy[i] / eps;
                            }
                        }
                    }
                    emit(*x, d, &mut grads);
                }
                Op::Attention { q, k, v, geom, probs } => {
                    let r = attention_backward(
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                        probs,
                        &gy,
                        geom,
                    );
                    emit(*q, r.dq, &mut grads);
                    emit(*k, r.dk, &mut grads);
                    emit(*v, r.dv, &mut grads);
                }
                Op::Scalar { inputs, partials } => {
                    let g = gy[0];
                    for (i, p) in inputs.iter().zip(partials) {
                        emit(*i, p.data().iter().map(|v| v * g).collect(), &mut grads);
                    }
                }
                Op::WeightedSum(terms) => {
                    for (v, w) in terms {
                        if *w != 0.0 {
                            emit(*v, vec![gy[0] * w], &mut grads);
                        }
                    }
                }
            }
        }
        // Only leaves keep their gradients; intermediate buffers were consumed above.
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}
