//! Reverse-mode autodiff over a linear tape of tensor operations.
//!
//! A [`Graph`] records every forward op into an arena; [`Graph::backward`]
//! replays the tape in reverse, accumulating gradients and handing the ones
//! that belong to bound [`Parameter`]s back to the caller. Every op output is
//! checked for non-finite values on the spot — a NaN/Inf is an error naming
//! the op and the enclosing layer scope, never a silent poison.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{strides, Parameter, Tensor};
use crate::{linalg, parallel};
use std::collections::HashMap;
use std::sync::Arc;

/// Handle to a node in the graph arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Matmul { a: Var, b: Var, b_t: bool },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Roll { x: Var, axis: usize, shift: usize },
    PadAxis { x: Var, axis: usize, pad: usize },
    SliceAxis { x: Var, axis: usize, start: usize, len: usize },
    SoftmaxLast(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Gelu { x: Var, tanh_u: Arc<Vec<T>> },
    /// Fused `gelu(x + bias)` with the bias tiling the trailing extent.
    BiasGelu { x: Var, bias: Var, tanh_u: Arc<Vec<T>> },
    SumAll(Var),
    GatherRows { table: Var, indices: Arc<Vec<usize>> },
    BceWithLogits { logits: Var, labels: Arc<Vec<u8>> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Matmul { .. } => "matmul",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Roll { .. } => "roll",
            Op::PadAxis { .. } => "pad_axis",
            Op::SliceAxis { .. } => "slice_axis",
            Op::SoftmaxLast(..) => "softmax_lastdim",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::BiasGelu { .. } => "bias_gelu",
            Op::SumAll(..) => "sum_all",
            Op::GatherRows { .. } => "gather_rows",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

struct Node<T> {
    data: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of one forward pass. Confine a graph to a single thread; the tensors
/// going in and out are plain values and move freely.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    scope: Arc<str>,
    param_binds: Vec<(usize, String)>,
    param_grads: HashMap<String, Vec<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        parallel::tune_allocator();
        Graph {
            nodes: Vec::new(),
            scope: Arc::from(""),
            param_binds: Vec::new(),
            param_grads: HashMap::new(),
        }
    }

    /// Label subsequent ops with a layer name; numeric failures report it.
    pub fn set_scope(&mut self, scope: &str) {
        self.scope = Arc::from(scope);
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].data.shape()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].data
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Push with a producer-supplied whole-buffer sum: a finite sum implies
    /// an all-finite buffer at the magnitudes this crate produces, so the
    /// cold re-read of `push` is skipped.
    fn push_presummed(
        &mut self,
        data: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
        sum: T,
    ) -> Result<Var> {
        if !sum.is_finite() {
            let idx = data.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::Numeric {
                context: format!("{} (op {})", self.scope, op.name()),
                detail: format!(
                    "non-finite value {} at flat index {idx} of shape {:?}",
                    data.data()[idx].to_f64(),
                    data.shape()
                ),
            });
        }
        let id = self.nodes.len();
        self.nodes.push(Node { data, op, requires_grad });
        Ok(Var(id))
    }

    fn push(&mut self, data: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        // Every op that computes values is checked for non-finite outputs.
        // Leaves are caller-supplied (and may carry mask sentinels); pure
        // data-movement ops rearrange already-checked values. Softmax and
        // layer norm provably map finite inputs to finite outputs (bounded
        // rows; eps-floored denominator), so they skip the scan too.
        let movement = matches!(
            op,
            Op::Leaf
                | Op::Reshape(_)
                | Op::Permute(..)
                | Op::Roll { .. }
                | Op::PadAxis { .. }
                | Op::SliceAxis { .. }
                | Op::GatherRows { .. }
                | Op::SoftmaxLast(..)
                | Op::LayerNorm { .. }
        );
        if !movement {
            if let Some(idx) = non_finite_index(data.data()) {
                return Err(Error::Numeric {
                    context: format!("{} (op {})", self.scope, op.name()),
                    detail: format!(
                        "non-finite value {} at flat index {idx} of shape {:?}",
                        data.data()[idx].to_f64(),
                        data.shape()
                    ),
                });
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { data, op, requires_grad });
        Ok(Var(id))
    }

    /// Non-trainable input (batch data, masks, constants).
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// Bind a parameter's current value; its gradient is collected by
    /// [`Graph::backward`] under the parameter's name.
    pub fn param(&mut self, p: &Parameter<T>) -> Result<Var> {
        let v = self.push(p.value.clone(), Op::Leaf, true)?;
        self.param_binds.push((v.0, p.name.clone()));
        Ok(v)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ── Elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shapes(&sa, &sb)?;
        let f = match op {
            Op::Add(..) => |x: T, y: T| x + y,
            Op::Sub(..) => |x: T, y: T| x - y,
            Op::Mul(..) => |x: T, y: T| x * y,
            _ => unreachable!(),
        };
        let (data, sum) = broadcast_zip(
            self.nodes[a.0].data.data(),
            &sa,
            self.nodes[b.0].data.data(),
            &sb,
            &out_shape,
            f,
        );
        let req = self.requires(a) || self.requires(b);
        self.push_presummed(Tensor::new(out_shape, data)?, op, req, sum)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let data = self.nodes[x.0].data.map(|v| v * c);
        let req = self.requires(x);
        self.push(data, Op::Scale(x, c), req)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let src = self.nodes[x.0].data.data();
        let n = src.len();
        let tanh_u: Vec<T> = parallel::alloc_filled(n, 16_384, |chunk, off| {
            for (i, t) in chunk.iter_mut().enumerate() {
                *t = gelu_inner(src[off + i]).tanh_activation();
            }
        });
        let half = T::from_f64(0.5);
        let (out, sum) = parallel::alloc_filled_summed(n, 65_536, |chunk, off| {
            for (i, o) in chunk.iter_mut().enumerate() {
                let x = src[off + i];
                *o = half * x * (T::one() + tanh_u[off + i]);
            }
        });
        let shape = self.nodes[x.0].data.shape().to_vec();
        let req = self.requires(x);
        self.push_presummed(
            Tensor::new(shape, out)?,
            Op::Gelu { x, tanh_u: Arc::new(tanh_u) },
            req,
            sum,
        )
    }

    /// Fused `gelu(x + bias)`: one traversal instead of an add and a gelu.
    /// `bias` must match the trailing extent of `x`.
    pub fn bias_gelu(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("rank >= 1");
        if self.shape(bias) != [d] {
            return Err(Error::dim(format!(
                "bias_gelu bias shape {:?} != [{d}]",
                self.shape(bias)
            )));
        }
        let src = self.nodes[x.0].data.data();
        let b = self.nodes[bias.0].data.data();
        let n = src.len();
        let half = T::from_f64(0.5);
        let tanh_u = parallel::alloc_filled(n, 32_768, |chunk, off| {
            let mut j = off % d;
            for (i, t) in chunk.iter_mut().enumerate() {
                let u = src[off + i] + b[j];
                *t = gelu_inner(u).tanh_activation();
                j += 1;
                if j == d {
                    j = 0;
                }
            }
        });

        let (out, sum) = parallel::alloc_filled_summed(n, 65_536, |chunk, off| {
            let mut j = off % d;
            for (i, o) in chunk.iter_mut().enumerate() {
                let u = src[off + i] + b[j];
                *o = half * u * (T::one() + tanh_u[off + i]);
                j += 1;
                if j == d {
                    j = 0;
                }
            }
        });
        let req = self.requires(x) || self.requires(bias);
        self.push_presummed(
            Tensor::new(shape, out)?,
            Op::BiasGelu { x, bias, tanh_u: Arc::new(tanh_u) },
            req,
            sum,
        )
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// Batched matrix product `(..., m, k) @ (..., k, n)` with broadcasting
    /// over the leading batch extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `(..., m, k) @ (..., n, k)ᵀ -> (..., m, n)`: the right operand is
    /// stored row-major but consumed transposed, as in `Q Kᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(format!(
                "matmul needs rank >= 2 operands, got {sa:?} @ {sb:?}"
            )));
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if b_t {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if ka != kb {
            return Err(Error::dim(format!(
                "matmul inner extents differ: {sa:?} @ {sb:?}{}",
                if b_t { " (rhs transposed)" } else { "" }
            )));
        }
        let batch = broadcast_shapes(&sa[..sa.len() - 2], &sb[..sb.len() - 2])?;
        let mut out_shape = batch.clone();
        out_shape.extend_from_slice(&[m, n]);

        let a_dat = self.nodes[a.0].data.data();
        let b_dat = self.nodes[b.0].data.data();
        let nbatch: usize = batch.iter().product();
        let mut out;

        if sb.len() == 2 {
            // Weight-matrix case: one big GEMM over all flattened rows.
            out = linalg::gemm_alloc(nbatch * m, ka, n, a_dat, false, b_dat, b_t);
        } else {
            out = vec![T::zero(); nbatch * m * n];
            let a_off = batch_offsets(&batch, &sa[..sa.len() - 2], m * ka);
            let b_off = batch_offsets(&batch, &sb[..sb.len() - 2], kb * n);
            let run = |c_chunk: &mut [T], start: usize| {
                for (i, c_blk) in c_chunk.chunks_mut(m * n).enumerate() {
                    let bi = start + i;
                    let a_blk = &a_dat[a_off[bi]..a_off[bi] + m * ka];
                    let b_blk = &b_dat[b_off[bi]..b_off[bi] + kb * n];
                    linalg::gemm(m, ka, n, a_blk, false, b_blk, b_t, T::zero(), c_blk);
                }
            };
            let chunks = parallel::chunk_ranges(nbatch, 64);
            if chunks.len() <= 1 {
                run(&mut out, 0);
            } else {
                // Disjoint output blocks per batch index: safe to parallelize.
                std::thread::scope(|scope| {
                    let mut rest: &mut [T] = &mut out;
                    let mut done = 0usize;
                    for r in chunks {
                        let (head, tail) = rest.split_at_mut(r.len() * m * n);
                        rest = tail;
                        let start = done;
                        done += r.len();
                        let run = &run;
                        scope.spawn(move || run(head, start));
                    }
                });
            }
        }
        let req = self.requires(a) || self.requires(b);
        self.push(Tensor::new(out_shape, out)?, Op::Matmul { a, b, b_t }, req)
    }

    // ── Shape movement ───────────────────────────────────────────────

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if !is_permutation(axes, shape.len()) {
            return Err(Error::dim(format!(
                "permute axes {axes:?} invalid for shape {shape:?}"
            )));
        }
        let out = copy_permuted(self.nodes[x.0].data.data(), &shape, axes);
        let req = self.requires(x);
        self.push(out, Op::Permute(x, axes.to_vec()), req)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let data = self.nodes[x.0].data.clone().reshaped(shape.to_vec())?;
        let req = self.requires(x);
        self.push(data, Op::Reshape(x), req)
    }

    /// Cyclic left roll along `axis`: `out[i] = x[(i + shift) % len]`.
    pub fn roll(&mut self, x: Var, axis: usize, shift: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("roll axis {axis} out of rank {}", shape.len())));
        }
        let len = shape[axis];
        let shift = shift % len;
        if shift == 0 {
            return Ok(x);
        }
        let data = roll_copy(self.nodes[x.0].data.data(), &shape, axis, shift);
        let req = self.requires(x);
        self.push(Tensor::new(shape, data)?, Op::Roll { x, axis, shift }, req)
    }

    /// Zero-pad `pad` trailing positions along `axis`.
    pub fn pad_axis(&mut self, x: Var, axis: usize, pad: usize) -> Result<Var> {
        if pad == 0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("pad axis {axis} out of rank {}", shape.len())));
        }
        let (outer, len, inner) = split3(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len + pad;
        let src = self.nodes[x.0].data.data();
        let mut out = vec![T::zero(); outer * (len + pad) * inner];
        for o in 0..outer {
            let s = &src[o * len * inner..(o + 1) * len * inner];
            out[o * (len + pad) * inner..o * (len + pad) * inner + len * inner]
                .copy_from_slice(s);
        }
        let req = self.requires(x);
        self.push(Tensor::new(out_shape, out)?, Op::PadAxis { x, axis, pad }, req)
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::dim(format!(
                "slice [{start}, {}) on axis {axis} of shape {shape:?}",
                start + len
            )));
        }
        if start == 0 && len == shape[axis] {
            return Ok(x);
        }
        let (outer, full, inner) = split3(&shape, axis);
        let src = self.nodes[x.0].data.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let req = self.requires(x);
        self.push(
            Tensor::new(out_shape, out)?,
            Op::SliceAxis { x, axis, start, len },
            req,
        )
    }

    // ── Normalization / attention pieces ─────────────────────────────

    /// Softmax over the last extent. Rows made entirely of `-inf` produce
    /// all-zero rows rather than NaN; `-inf` entries get exact zero weight.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("tensor rank >= 1");
        let src = self.nodes[x.0].data.data();
        let mut out = vec![T::zero(); src.len()];
        softmax_rows(src, &mut out, d);
        let req = self.requires(x);
        self.push(Tensor::new(shape, out)?, Op::SoftmaxLast(x), req)
    }

    /// Layer normalization over the last extent with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("tensor rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!(
                "layer_norm affine shapes {:?}/{:?} do not match feature dim {d}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let src = self.nodes[x.0].data.data();
        let gam = self.nodes[gamma.0].data.data();
        let bet = self.nodes[beta.0].data.data();
        let mut out = vec![T::zero(); src.len()];
        let epst = T::from_f64(eps);
        parallel::par_apply_mut(&mut out, 64 * d.max(1), |chunk, off| {
            for (r, row_out) in chunk.chunks_mut(d).enumerate() {
                let base = off + r * d;
                let row_in = &src[base..base + d];
                let (mean, inv_std) = row_moments(row_in, epst);
                for i in 0..d {
                    row_out[i] = (row_in[i] - mean) * inv_std * gam[i] + bet[i];
                }
            }
        });
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm { x, gamma, beta, eps },
            req,
        )
    }

    // ── Reductions / lookups / loss ──────────────────────────────────

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: T = self.nodes[x.0].data.data().iter().copied().sum();
        let req = self.requires(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), req)
    }

    /// Row lookup `out[i, :] = table[indices[i], :]`; backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::dim(format!("gather_rows wants a rank-2 table, got {shape:?}")));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!(
                "gather index {bad} out of range for table with {rows} rows"
            )));
        }
        let src = self.nodes[table.0].data.data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices.iter() {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let req = self.requires(table);
        self.push(
            Tensor::new(vec![indices.len(), cols], out)?,
            Op::GatherRows { table, indices },
            req,
        )
    }

    /// Mean binary cross-entropy on logits, in the stable log-sum form.
    /// Gradient is `(sigmoid(z) - y) / B`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if labels.is_empty() {
            return Err(Error::contract("bce_loss on an empty batch".to_string()));
        }
        if shape != [labels.len()] {
            return Err(Error::dim(format!(
                "bce_loss logits shape {shape:?} vs {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::contract(format!("bce_loss label {bad} not in {{0,1}}")));
        }
        let z = self.nodes[logits.0].data.data();
        let b = T::from_f64(labels.len() as f64);
        let mut total = T::zero();
        for (zi, &yi) in z.iter().zip(labels) {
            let s = if yi == 1 { T::one() } else { -T::one() };
            total = total + softplus(-s * *zi);
        }
        let req = self.requires(logits);
        self.push(
            Tensor::scalar(total / b),
            Op::BceWithLogits { logits, labels: Arc::new(labels.to_vec()) },
            req,
        )
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar `loss`. Gradients of bound parameters are
    /// collected by name; fetch them with [`Graph::take_param_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].data.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(vec![T::one()]);

        let bound: HashMap<usize, &str> = self
            .param_binds
            .iter()
            .map(|(i, name)| (*i, name.as_str()))
            .collect();

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Some(name) = bound.get(&i) {
                match self.param_grads.get_mut(*name) {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&g) {
                            *a = *a + *d;
                        }
                    }
                    None => {
                        self.param_grads.insert((*name).to_string(), g);
                    }
                }
                continue;
            }
            self.propagate(i, g, &mut grads);
        }
        Ok(())
    }

    /// Gradients harvested by the last backward pass, keyed by parameter
    /// name. Clears the internal store.
    pub fn take_param_grads(&mut self) -> HashMap<String, Vec<T>> {
        std::mem::take(&mut self.param_grads)
    }

    fn propagate(&self, i: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out_shape = node.data.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (ra, rb) = (self.requires(*a), self.requires(*b));
                if rb {
                    self.acc_reduced(grads, *b, &g, out_shape);
                }
                if ra {
                    if self.shape(*a) == out_shape {
                        acc_move(grads, *a, g);
                    } else {
                        self.acc_reduced(grads, *a, &g, out_shape);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.requires(*a) {
                    self.acc_reduced(grads, *a, &g, out_shape);
                }
                if self.requires(*b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    self.acc_reduced(grads, *b, &neg, out_shape);
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                if self.requires(*a) {
                    let (da, _) = broadcast_zip(
                        &g,
                        out_shape,
                        self.nodes[b.0].data.data(),
                        &sb,
                        out_shape,
                        |x, y| x * y,
                    );
                    self.acc_reduced(grads, *a, &da, out_shape);
                }
                if self.requires(*b) {
                    let (db, _) = broadcast_zip(
                        &g,
                        out_shape,
                        self.nodes[a.0].data.data(),
                        &sa,
                        out_shape,
                        |x, y| x * y,
                    );
                    self.acc_reduced(grads, *b, &db, out_shape);
                }
            }
            Op::Scale(x, c) => {
                if self.requires(*x) {
                    let dx: Vec<T> = g.iter().map(|&v| v * *c).collect();
                    acc_move(grads, *x, dx);
                }
            }
            Op::Matmul { a, b, b_t } => self.backward_matmul(*a, *b, *b_t, &g, out_shape, grads),
            Op::Permute(x, axes) => {
                if self.requires(*x) {
                    let inv = invert_permutation(axes);
                    let t = copy_permuted(&g, out_shape, &inv);
                    acc_move(grads, *x, t.into_data());
                }
            }
            Op::Reshape(x) => {
                if self.requires(*x) {
                    acc_move(grads, *x, g);
                }
            }
            Op::Roll { x, axis, shift } => {
                if self.requires(*x) {
                    let shape = self.shape(*x);
                    let len = shape[*axis];
                    let back = (len - shift % len) % len;
                    let dx = roll_copy(&g, shape, *axis, back);
                    acc_move(grads, *x, dx);
                }
            }
            Op::PadAxis { x, axis, pad } => {
                if self.requires(*x) {
                    let in_shape = self.shape(*x);
                    let (outer, len, inner) = split3(in_shape, *axis);
                    let padded = len + pad;
                    let mut dx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * padded * inner;
                        dx.extend_from_slice(&g[base..base + len * inner]);
                    }
                    acc_move(grads, *x, dx);
                }
            }
            Op::SliceAxis { x, axis, start, len } => {
                if self.requires(*x) {
                    let in_shape = self.shape(*x);
                    let (outer, full, inner) = split3(in_shape, *axis);
                    let mut dx = vec![T::zero(); outer * full * inner];
                    for o in 0..outer {
                        let dst = o * full * inner + start * inner;
                        let src = o * len * inner;
                        dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    acc_move(grads, *x, dx);
                }
            }
            Op::SoftmaxLast(x) => {
                if self.requires(*x) {
                    let y = node.data.data();
                    let d = *out_shape.last().unwrap();
                    let mut dx = vec![T::zero(); y.len()];
                    parallel::par_apply_mut(&mut dx, 256 * d.max(1), |chunk, off| {
                        for (r, dr) in chunk.chunks_mut(d).enumerate() {
                            let base = off + r * d;
                            let yr = &y[base..base + d];
                            let gr = &g[base..base + d];
                            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            for i in 0..d {
                                dr[i] = yr[i] * (gr[i] - dot);
                            }
                        }
                    });
                    acc_move(grads, *x, dx);
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                self.backward_layer_norm(*x, *gamma, *beta, *eps, &g, grads)
            }
            Op::Gelu { x, tanh_u } => {
                if self.requires(*x) {
                    let src = self.nodes[x.0].data.data();
                    let dx = parallel::alloc_filled(src.len(), 16_384, |chunk, off| {
                        for (i, d) in chunk.iter_mut().enumerate() {
                            *d = gelu_bwd_saved(src[off + i], tanh_u[off + i]) * g[off + i];
                        }
                    });
                    acc_move(grads, *x, dx);
                }
            }
            Op::BiasGelu { x, bias, tanh_u } => {
                let src = self.nodes[x.0].data.data();
                let b = self.nodes[bias.0].data.data();
                let d = b.len();
                let dx = parallel::alloc_filled(src.len(), 16_384, |chunk, off| {
                    let mut j = off % d;
                    for (i, out) in chunk.iter_mut().enumerate() {
                        let u = src[off + i] + b[j];
                        *out = gelu_bwd_saved(u, tanh_u[off + i]) * g[off + i];
                        j += 1;
                        if j == d {
                            j = 0;
                        }
                    }
                });
                if self.requires(*bias) {
                    let db = ensure(grads, *bias, d);
                    for row in dx.chunks(d) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                }
                if self.requires(*x) {
                    acc_move(grads, *x, dx);
                }
            }
            Op::SumAll(x) => {
                if self.requires(*x) {
                    let n = self.nodes[x.0].data.numel();
                    acc_move(grads, *x, vec![g[0]; n]);
                }
            }
            Op::GatherRows { table, indices } => {
                if self.requires(*table) {
                    let shape = self.shape(*table);
                    let cols = shape[1];
                    let dt = ensure(grads, *table, shape[0] * cols);
                    for (i, &row) in indices.iter().enumerate() {
                        for c in 0..cols {
                            dt[row * cols + c] = dt[row * cols + c] + g[i * cols + c];
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, labels } => {
                if self.requires(*logits) {
                    let z = self.nodes[logits.0].data.data();
                    let b = T::from_f64(labels.len() as f64);
                    let dz: Vec<T> = z
                        .iter()
                        .zip(labels.iter())
                        .map(|(&zi, &yi)| {
                            let y = if yi == 1 { T::one() } else { T::zero() };
                            g[0] * (sigmoid(zi) - y) / b
                        })
                        .collect();
                    acc_move(grads, *logits, dz);
                }
            }
        }
    }

    fn backward_matmul(
        &self,
        a: Var,
        b: Var,
        b_t: bool,
        g: &[T],
        out_shape: &[usize],
        grads: &mut [Option<Vec<T>>],
    ) {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = out_shape[out_shape.len() - 1];
        let a_dat = self.nodes[a.0].data.data();
        let b_dat = self.nodes[b.0].data.data();

        // dA = dC @ op(B)ᵀ; dB = op-aware pairing of A and dC.
        if sb.len() == 2 {
            let rows: usize = out_shape[..out_shape.len() - 1].iter().product();
            if self.requires(a) {
                let da = linalg::gemm_alloc(rows, n, k, g, false, b_dat, !b_t);
                acc_move(grads, a, da);
            }
            if self.requires(b) {
                let db = ensure(grads, b, k * n);
                if b_t {
                    // dB (n, k) += dCᵀ @ A
                    linalg::gemm(n, rows, k, g, true, a_dat, false, T::one(), db);
                } else {
                    // dB (k, n) += Aᵀ @ dC
                    linalg::gemm(k, rows, n, a_dat, true, g, false, T::one(), db);
                }
            }
            return;
        }

        let batch = &out_shape[..out_shape.len() - 2];
        let nbatch: usize = batch.iter().product();
        let a_off = batch_offsets(batch, &sa[..sa.len() - 2], m * k);
        let b_off = batch_offsets(batch, &sb[..sb.len() - 2], k * n);
        let need_a = self.requires(a);
        let need_b = self.requires(b);
        if need_a {
            ensure(grads, a, a_dat.len());
        }
        if need_b {
            ensure(grads, b, b_dat.len());
        }

        let step_a = |da_blk: &mut [T], gc: &[T], b_blk: &[T]| {
            linalg::gemm(m, n, k, gc, false, b_blk, !b_t, T::one(), da_blk);
        };
        let step_b = |db_blk: &mut [T], gc: &[T], a_blk: &[T]| {
            if b_t {
                linalg::gemm(n, m, k, gc, true, a_blk, false, T::one(), db_blk);
            } else {
                linalg::gemm(k, m, n, a_blk, true, gc, false, T::one(), db_blk);
            }
        };

        // Without broadcasting every batch block is disjoint, so the grads
        // can be filled in parallel; broadcast batches alias operand blocks
        // and accumulate sequentially.
        let no_broadcast = sa[..sa.len() - 2] == *batch && sb[..sb.len() - 2] == *batch;
        let chunks = parallel::chunk_ranges(nbatch, 64);
        if no_broadcast && chunks.len() > 1 {
            let mut da_guard = if need_a { grads[a.0].take() } else { None };
            let mut db_guard = if need_b { grads[b.0].take() } else { None };
            {
                let mut da_rest: &mut [T] = da_guard.as_deref_mut().unwrap_or(&mut []);
                let mut db_rest: &mut [T] = db_guard.as_deref_mut().unwrap_or(&mut []);
                std::thread::scope(|scope| {
                    for r in chunks {
                        let (da_head, da_tail) = if need_a {
                            da_rest.split_at_mut(r.len() * m * k)
                        } else {
                            (&mut [][..], &mut [][..])
                        };
                        da_rest = da_tail;
                        let (db_head, db_tail) = if need_b {
                            db_rest.split_at_mut(r.len() * k * n)
                        } else {
                            (&mut [][..], &mut [][..])
                        };
                        db_rest = db_tail;
                        let (step_a, step_b) = (&step_a, &step_b);
                        let (a_off, b_off) = (&a_off, &b_off);
                        scope.spawn(move || {
                            for (i, bi) in r.clone().enumerate() {
                                let gc = &g[bi * m * n..(bi + 1) * m * n];
                                if need_a {
                                    let blk = &b_dat[b_off[bi]..b_off[bi] + k * n];
                                    step_a(&mut da_head[i * m * k..(i + 1) * m * k], gc, blk);
                                }
                                if need_b {
                                    let blk = &a_dat[a_off[bi]..a_off[bi] + m * k];
                                    step_b(&mut db_head[i * k * n..(i + 1) * k * n], gc, blk);
                                }
                            }
                        });
                    }
                });
            }
            if let Some(da) = da_guard {
                grads[a.0] = Some(da);
            }
            if let Some(db) = db_guard {
                grads[b.0] = Some(db);
            }
            return;
        }

        for bi in 0..nbatch {
            let gc = &g[bi * m * n..(bi + 1) * m * n];
            if need_a {
                let da = grads[a.0].as_mut().unwrap();
                let blk = &b_dat[b_off[bi]..b_off[bi] + k * n];
                step_a(&mut da[a_off[bi]..a_off[bi] + m * k], gc, blk);
            }
            if need_b {
                let db = grads[b.0].as_mut().unwrap();
                let blk = &a_dat[a_off[bi]..a_off[bi] + m * k];
                step_b(&mut db[b_off[bi]..b_off[bi] + k * n], gc, blk);
            }
        }
    }

    fn backward_layer_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let src = self.nodes[x.0].data.data();
        let gam = self.nodes[gamma.0].data.data();
        let d = *self.shape(x).last().unwrap();
        let epst = T::from_f64(eps);
        let need_x = self.requires(x);
        let need_g = self.requires(gamma);
        let need_b = self.requires(beta);

        let rows = src.len() / d;
        let dinv = T::one() / T::from_f64(d as f64);
        let mut dx = if need_x { vec![T::zero(); src.len()] } else { Vec::new() };

        // Chunked over rows; each worker returns its dgamma/dbeta partials,
        // reduced in chunk order so results do not depend on scheduling.
        let ranges = parallel::chunk_ranges(rows, 128);
        let work = |dx_chunk: &mut [T], row_start: usize, row_count: usize| -> (Vec<T>, Vec<T>) {
            let mut pg = vec![T::zero(); if need_g { d } else { 0 }];
            let mut pb = vec![T::zero(); if need_b { d } else { 0 }];
            for r in 0..row_count {
                let base = (row_start + r) * d;
                let row = &src[base..base + d];
                let grow = &g[base..base + d];
                let (mean, inv_std) = row_moments(row, epst);
                let mut mean_dxh = T::zero();
                let mut mean_dxh_xh = T::zero();
                for i in 0..d {
                    let xh = (row[i] - mean) * inv_std;
                    let dxh = grow[i] * gam[i];
                    mean_dxh = mean_dxh + dxh;
                    mean_dxh_xh = mean_dxh_xh + dxh * xh;
                    if need_g {
                        pg[i] = pg[i] + grow[i] * xh;
                    }
                    if need_b {
                        pb[i] = pb[i] + grow[i];
                    }
                }
                mean_dxh = mean_dxh * dinv;
                mean_dxh_xh = mean_dxh_xh * dinv;
                if need_x {
                    let drow = &mut dx_chunk[r * d..(r + 1) * d];
                    for i in 0..d {
                        let xh = (row[i] - mean) * inv_std;
                        drow[i] = inv_std * (grow[i] * gam[i] - mean_dxh - xh * mean_dxh_xh);
                    }
                }
            }
            (pg, pb)
        };

        let (mut dgamma, mut dbeta) = (vec![T::zero(); d], vec![T::zero(); d]);
        if ranges.len() <= 1 {
            let (pg, pb) = work(&mut dx, 0, rows);
            dgamma = if need_g { pg } else { dgamma };
            dbeta = if need_b { pb } else { dbeta };
        } else {
            let partials: Vec<(Vec<T>, Vec<T>)> = std::thread::scope(|scope| {
                let mut handles = Vec::new();
                let mut dx_rest: &mut [T] = &mut dx;
                for r in &ranges {
                    let (head, tail) = if need_x {
                        dx_rest.split_at_mut(r.len() * d)
                    } else {
                        (&mut [][..], &mut [][..])
                    };
                    dx_rest = tail;
                    let (start, count) = (r.start, r.len());
                    let work = &work;
                    handles.push(scope.spawn(move || work(head, start, count)));
                }
                handles.into_iter().map(|h| h.join().expect("ln worker")).collect()
            });
            for (pg, pb) in partials {
                if need_g {
                    for (a, v) in dgamma.iter_mut().zip(pg) {
                        *a = *a + v;
                    }
                }
                if need_b {
                    for (a, v) in dbeta.iter_mut().zip(pb) {
                        *a = *a + v;
                    }
                }
            }
        }
        if need_x {
            acc_move(grads, x, dx);
        }
        if need_g {
            acc_move(grads, gamma, dgamma);
        }
        if need_b {
            acc_move(grads, beta, dbeta);
        }
    }

    fn acc_reduced(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], g_shape: &[usize]) {
        let target = self.shape(v);
        if target == g_shape {
            acc_add(grads, v, g);
            return;
        }
        let reduced = reduce_to_shape(g, g_shape, target);
        acc_add(grads, v, &reduced);
    }
}

// ── Shared numeric helpers ───────────────────────────────────────────

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus<T: Scalar>(t: T) -> T {
    let zero = T::zero();
    if t > zero {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Argument of the tanh in the GELU approximation.
fn gelu_inner<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    c * (x + a * x * x * x)
}

/// GELU derivative given the input and the saved `tanh(u)`.
fn gelu_bwd_saved<T: Scalar>(x: T, t: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

fn row_moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let d = T::from_f64(row.len() as f64);
    let mut sum = T::zero();
    let mut sumsq = T::zero();
    for &v in row {
        sum = sum + v;
        sumsq = sumsq + v * v;
    }
    let mean = sum / d;
    let var = (sumsq / d - mean * mean).max(T::zero());
    (mean, T::one() / (var + eps).sqrt())
}

fn softmax_rows<T: Scalar>(src: &[T], out: &mut [T], d: usize) {
    let rows = src.len() / d;
    let ranges = parallel::chunk_ranges(rows, 512);
    let do_rows = |out_chunk: &mut [T], row_start: usize| {
        for (r, row_out) in out_chunk.chunks_mut(d).enumerate() {
            let row = &src[(row_start + r) * d..(row_start + r + 1) * d];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                row_out.fill(T::zero());
                continue;
            }
            let mut sum = T::zero();
            for i in 0..d {
                let e = (row[i] - max).exp();
                row_out[i] = e;
                sum = sum + e;
            }
            let inv = T::one() / sum;
            for v in row_out.iter_mut() {
                *v = *v * inv;
            }
        }
    };
    if ranges.len() <= 1 {
        do_rows(out, 0);
        return;
    }
    std::thread::scope(|scope| {
        let mut rest: &mut [T] = out;
        let mut row = 0usize;
        for r in ranges {
            let (head, tail) = rest.split_at_mut(r.len() * d);
            rest = tail;
            let start = row;
            row += r.len();
            let do_rows = &do_rows;
            scope.spawn(move || do_rows(head, start));
        }
    });
}

fn non_finite_index<T: Scalar>(data: &[T]) -> Option<usize> {
    // Fast pass: a finite sum implies all-finite for the magnitudes used
    // here; fall back to a precise scan only on failure.
    let ranges = parallel::chunk_ranges(data.len(), 262_144);
    let ok = if ranges.len() <= 1 {
        data.iter().copied().sum::<T>().is_finite()
    } else {
        let flags: Vec<bool> = std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .into_iter()
                .map(|r| scope.spawn(move || data[r].iter().copied().sum::<T>().is_finite()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("checker thread")).collect()
        });
        flags.into_iter().all(|f| f)
    };
    if ok {
        None
    } else {
        data.iter().position(|v| !v.is_finite())
    }
}

// ── Broadcasting machinery ───────────────────────────────────────────

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
        };
    }
    Ok(out)
}

/// Strides for reading a (right-aligned) broadcast operand inside the output
/// iteration space; broadcast axes get stride 0.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let s = strides(shape);
    (0..rank)
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                s[i - offset]
            }
        })
        .collect()
}

fn broadcast_zip<T: Scalar>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T + Sync,
) -> (Vec<T>, T) {
    let numel: usize = out_shape.iter().product();
    // Same-shape fast path.
    if a_shape == out_shape && b_shape == out_shape {
        let f = &f;
        return crate::parallel::alloc_filled_summed(numel, 262_144, |chunk, off| {
            for (i, o) in chunk.iter_mut().enumerate() {
                *o = f(a[off + i], b[off + i]);
            }
        });
    }
    // Suffix fast path: b tiles the trailing extents of a full-shaped a.
    if a_shape == out_shape && is_suffix(b_shape, out_shape) && !b.is_empty() {
        let chunk_len = b.len();
        let f = &f;
        return crate::parallel::alloc_filled_summed(numel, 262_144.max(chunk_len), |chunk, off| {
            let mut j = off % chunk_len;
            for (i, o) in chunk.iter_mut().enumerate() {
                *o = f(a[off + i], b[j]);
                j += 1;
                if j == chunk_len {
                    j = 0;
                }
            }
        });
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut out = Vec::with_capacity(numel);
    let mut coords = vec![0usize; out_shape.len()];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut sum = T::zero();
    for _ in 0..numel {
        let v = f(a[ia], b[ib]);
        sum = sum + v;
        out.push(v);
        // Odometer increment, updating both flat offsets.
        for d in (0..out_shape.len()).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
    (out, sum)
}

/// Sum `grad` (shaped `g_shape`) down to `target` by collapsing broadcast
/// axes.
fn reduce_to_shape<T: Scalar>(grad: &[T], g_shape: &[usize], target: &[usize]) -> Vec<T> {
    if g_shape == target {
        return grad.to_vec();
    }
    if is_suffix(target, g_shape) {
        let chunk: usize = target.iter().product();
        let mut out = vec![T::zero(); chunk];
        for blk in grad.chunks(chunk) {
            for (o, &v) in out.iter_mut().zip(blk) {
                *o = *o + v;
            }
        }
        return out;
    }
    let st = broadcast_strides(target, g_shape);
    let numel_t: usize = target.iter().product();
    let mut out = vec![T::zero(); numel_t];
    let mut coords = vec![0usize; g_shape.len()];
    let mut it = 0usize;
    for &v in grad {
        out[it] = out[it] + v;
        for d in (0..g_shape.len()).rev() {
            coords[d] += 1;
            it += st[d];
            if coords[d] < g_shape[d] {
                break;
            }
            coords[d] = 0;
            it -= st[d] * g_shape[d];
        }
    }
    out
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

// ── Index plumbing ───────────────────────────────────────────────────

fn is_permutation(axes: &[usize], rank: usize) -> bool {
    if axes.len() != rank {
        return false;
    }
    let mut seen = vec![false; rank];
    for &a in axes {
        if a >= rank || seen[a] {
            return false;
        }
        seen[a] = true;
    }
    true
}

fn invert_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn copy_permuted<T: Scalar>(src: &[T], shape: &[usize], axes: &[usize]) -> Tensor<T> {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel = src.len();

    // When the innermost axis stays innermost, whole contiguous runs move.
    if rank >= 2 && axes[rank - 1] == rank - 1 && shape[rank - 1] > 1 {
        let run = shape[rank - 1];
        let mut out = vec![T::zero(); numel];
        let outer = numel / run;
        let mut coords = vec![0usize; rank - 1];
        let mut idx = 0usize;
        for o in 0..outer {
            out[o * run..(o + 1) * run].copy_from_slice(&src[idx..idx + run]);
            for d in (0..rank - 1).rev() {
                coords[d] += 1;
                idx += step[d];
                if coords[d] < out_shape[d] {
                    break;
                }
                coords[d] = 0;
                idx -= step[d] * out_shape[d];
            }
        }
        return Tensor::new(out_shape, out).expect("permute preserves element count");
    }

    let mut out = Vec::with_capacity(numel);
    let mut coords = vec![0usize; rank];
    let mut idx = 0usize;
    for _ in 0..numel {
        out.push(src[idx]);
        for d in (0..rank).rev() {
            coords[d] += 1;
            idx += step[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            idx -= step[d] * out_shape[d];
        }
    }
    Tensor::new(out_shape, out).expect("permute preserves element count")
}

fn roll_copy<T: Scalar>(src: &[T], shape: &[usize], axis: usize, shift: usize) -> Vec<T> {
    let (outer, len, inner) = split3(shape, axis);
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..len {
            let from = (i + shift) % len;
            out[base + i * inner..base + (i + 1) * inner]
                .copy_from_slice(&src[base + from * inner..base + (from + 1) * inner]);
        }
    }
    out
}

/// (product of extents before `axis`, extent at `axis`, product after).
fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Per-output-batch flat element offsets into an operand with the given
/// (possibly broadcast) batch shape.
fn batch_offsets(out_batch: &[usize], op_batch: &[usize], block: usize) -> Vec<usize> {
    let nbatch: usize = out_batch.iter().product();
    let st = broadcast_strides(op_batch, out_batch);
    let mut offs = Vec::with_capacity(nbatch);
    let mut coords = vec![0usize; out_batch.len()];
    let mut idx = 0usize;
    for _ in 0..nbatch {
        offs.push(idx * block);
        for d in (0..out_batch.len()).rev() {
            coords[d] += 1;
            idx += st[d];
            if coords[d] < out_batch[d] {
                break;
            }
            coords[d] = 0;
            idx -= st[d] * out_batch[d];
        }
    }
    offs
}

fn acc_move<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            parallel::par_apply_mut(acc, 262_144, |chunk, off| {
                for (i, a) in chunk.iter_mut().enumerate() {
                    *a = *a + delta[off + i];
                }
            });
        }
        slot @ None => *slot = Some(delta),
    }
}

fn acc_add<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
    match &mut grads[v.0] {
        Some(acc) => {
            parallel::par_apply_mut(acc, 262_144, |chunk, off| {
                for (i, a) in chunk.iter_mut().enumerate() {
                    *a = *a + delta[off + i];
                }
            });
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn ensure<'g, T: Scalar>(grads: &'g mut [Option<Vec<T>>], v: Var, len: usize) -> &'g mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}
