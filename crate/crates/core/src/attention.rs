//! Windowed multi-head self-attention with learnable relative positional
//! bias and cyclic shifting: the 1D temporal form, the 2D spatial form with
//! its 1D fallback for non-square token grids, and the global joint form used
//! by the ablation path.
//!
//! Shifted layers roll the sequence by half a window before partitioning;
//! wrapped tokens may attend across the sequence boundary (no boundary mask
//! beyond padding/validity blocking).

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};
use rand::rngs::StdRng;
use std::sync::Arc;

/// Learnable bias over relative temporal offsets: table row `i - j + W - 1`
/// holds the per-head bias for query `i` attending key `j`.
#[derive(Clone, Debug)]
pub struct RelPosBias1D<T> {
    pub table: Parameter<T>,
    pub window: usize,
    pub heads: usize,
}

impl<T: Scalar> RelPosBias1D<T> {
    pub fn new(name: impl Into<String>, window: usize, heads: usize) -> Self {
        RelPosBias1D {
            table: Parameter::new(name, Tensor::zeros(&[2 * window - 1, heads])),
            window,
            heads,
        }
    }

    /// Materialize as `(heads, W, W)`; entry `[h, i, j]` depends only on
    /// `i - j`.
    pub fn materialize(&self, g: &mut Graph<T>) -> Result<Var> {
        let w = self.window;
        let table = g.param(&self.table)?;
        let mut idx = Vec::with_capacity(w * w);
        for i in 0..w {
            for j in 0..w {
                idx.push(i + w - 1 - j);
            }
        }
        let rows = g.gather_rows(table, Arc::new(idx))?; // (W*W, H)
        let byhead = g.permute(rows, &[1, 0])?;
        g.reshape(byhead, &[self.heads, w, w])
    }
}

/// Learnable bias over 2D in-window offsets; table has `(2W-1)^2` rows, one
/// per `(d_row, d_col)` pair.
#[derive(Clone, Debug)]
pub struct RelPosBias2D<T> {
    pub table: Parameter<T>,
    pub window: usize,
    pub heads: usize,
}

impl<T: Scalar> RelPosBias2D<T> {
    pub fn new(name: impl Into<String>, window: usize, heads: usize) -> Self {
        let span = 2 * window - 1;
        RelPosBias2D {
            table: Parameter::new(name, Tensor::zeros(&[span * span, heads])),
            window,
            heads,
        }
    }

    /// Materialize as `(heads, N, N)` for `N = W^2`; entry `[h, p, q]`
    /// depends only on the 2D offset between positions `p` and `q`.
    pub fn materialize(&self, g: &mut Graph<T>) -> Result<Var> {
        let w = self.window;
        let span = 2 * w - 1;
        let n = w * w;
        let table = g.param(&self.table)?;
        let mut idx = Vec::with_capacity(n * n);
        for p in 0..n {
            let (r1, c1) = (p / w, p % w);
            for q in 0..n {
                let (r2, c2) = (q / w, q % w);
                idx.push((r1 + w - 1 - r2) * span + (c1 + w - 1 - c2));
            }
        }
        let rows = g.gather_rows(table, Arc::new(idx))?; // (N*N, H)
        let byhead = g.permute(rows, &[1, 0])?;
        g.reshape(byhead, &[self.heads, n, n])
    }
}

/// Per-block attention projections. Q, K, V and the output mix are separate
/// `D x D` maps without bias vectors.
#[derive(Clone, Debug)]
pub struct AttnParams<T> {
    pub w_q: Parameter<T>,
    pub w_k: Parameter<T>,
    pub w_v: Parameter<T>,
    pub w_o: Parameter<T>,
    pub heads: usize,
    pub d_model: usize,
}

impl<T: Scalar> AttnParams<T> {
    pub fn new(prefix: &str, d_model: usize, heads: usize, rng: &mut StdRng) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(format!(
                "d_model {d_model} not divisible by heads {heads}"
            )));
        }
        let bound = 1.0 / (d_model as f64).sqrt();
        let mk = |name: &str, rng: &mut StdRng| {
            Parameter::new(
                format!("{prefix}.{name}"),
                Tensor::uniform(&[d_model, d_model], bound, rng),
            )
        };
        Ok(AttnParams {
            w_q: mk("w_q", rng),
            w_k: mk("w_k", rng),
            w_v: mk("w_v", rng),
            w_o: mk("w_o", rng),
            heads,
            d_model,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Bookkeeping for undoing a window partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadInfo {
    pub orig_len: usize,
    pub pad: usize,
    pub shift: usize,
    pub num_windows: usize,
}

/// Roll the sequence axis left by `shift`, zero-pad to a multiple of `w`, and
/// split into contiguous windows: `(B', T, D) -> (B'*nW, w, D)`.
pub fn partition_1d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: usize,
    shift: usize,
) -> Result<(Var, PadInfo)> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(format!("partition_1d wants (B', T, D), got {shape:?}")));
    }
    if w == 0 {
        return Err(Error::contract("window size must be >= 1"));
    }
    if shift >= w {
        return Err(Error::contract(format!("shift {shift} must be < window {w}")));
    }
    let (bp, t, d) = (shape[0], shape[1], shape[2]);
    let pad = (w - t % w) % w;
    let rolled = g.roll(x, 1, shift % t)?;
    let padded = g.pad_axis(rolled, 1, pad)?;
    let num_windows = (t + pad) / w;
    let wins = g.reshape(padded, &[bp * num_windows, w, d])?;
    Ok((wins, PadInfo { orig_len: t, pad, shift, num_windows }))
}

/// Exact inverse of [`partition_1d`].
pub fn merge_1d<T: Scalar>(
    g: &mut Graph<T>,
    wins: Var,
    info: PadInfo,
    b_prime: usize,
) -> Result<Var> {
    let shape = g.shape(wins).to_vec();
    let (w, d) = (shape[1], shape[2]);
    let t = info.orig_len;
    let seq = g.reshape(wins, &[b_prime, info.num_windows * w, d])?;
    let cut = g.slice_axis(seq, 1, 0, t)?;
    g.roll(cut, 1, (t - info.shift % t) % t)
}

/// Additive mask for 1D windows: padded slots and temporally-invalid slots
/// are blocked as keys and as queries, except each slot keeps its diagonal so
/// softmax stays defined. `valid` gives per-row valid lengths in original
/// (pre-roll) coordinates. Returns `None` when nothing is blocked.
pub fn window_mask_1d<T: Scalar>(
    b_prime: usize,
    t: usize,
    w: usize,
    shift: usize,
    pad: usize,
    valid: Option<&[usize]>,
) -> Option<Tensor<T>> {
    let fully_valid = valid.is_none_or(|v| v.iter().all(|&c| c >= t));
    if pad == 0 && fully_valid {
        return None;
    }
    let num_windows = (t + pad) / w;
    let neg = T::neg_mask();
    let mut data = vec![T::zero(); b_prime * num_windows * w * w];
    let blocked = |b: usize, pos: usize| -> bool {
        if pos >= t {
            return true;
        }
        let orig = (pos + shift) % t;
        valid.is_some_and(|v| orig >= v[b])
    };
    for b in 0..b_prime {
        for wi in 0..num_windows {
            let base = (b * num_windows + wi) * w * w;
            for i in 0..w {
                let bi = blocked(b, wi * w + i);
                for j in 0..w {
                    if i == j {
                        continue;
                    }
                    if bi || blocked(b, wi * w + j) {
                        data[base + i * w + j] = neg;
                    }
                }
            }
        }
    }
    Some(Tensor::new(vec![b_prime * num_windows, w, w], data).expect("mask shape"))
}

/// Multi-head attention inside each window:
/// `softmax(Q Kᵀ / sqrt(d_h) + bias + mask) V`, heads concatenated and mixed
/// by the output projection.
pub fn window_attention<T: Scalar>(
    g: &mut Graph<T>,
    windows: Var,
    params: &AttnParams<T>,
    bias: Option<Var>,
    mask: Option<Var>,
) -> Result<Var> {
    let shape = g.shape(windows).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(format!("window_attention wants (n, L, D), got {shape:?}")));
    }
    let (n, l, d) = (shape[0], shape[1], shape[2]);
    if l == 0 {
        return Err(Error::contract("empty attention window"));
    }
    if d != params.d_model {
        return Err(Error::dim(format!(
            "window feature dim {d} != attention d_model {}",
            params.d_model
        )));
    }
    let h = params.heads;
    let dh = params.head_dim();
    if let Some(b) = bias {
        if g.shape(b) != [h, l, l] {
            return Err(Error::dim(format!(
                "bias shape {:?} != ({h}, {l}, {l})",
                g.shape(b)
            )));
        }
    }

    let wq = g.param(&params.w_q)?;
    let wk = g.param(&params.w_k)?;
    let wv = g.param(&params.w_v)?;
    let wo = g.param(&params.w_o)?;

    let split = |g: &mut Graph<T>, x: Var| -> Result<Var> {
        let r = g.reshape(x, &[n, l, h, dh])?;
        g.permute(r, &[0, 2, 1, 3]) // (n, H, L, dh)
    };
    let q = g.matmul(windows, wq)?;
    let k = g.matmul(windows, wk)?;
    let v = g.matmul(windows, wv)?;
    let qh = split(g, q)?;
    let vh = split(g, v)?;
    let kh = split(g, k)?;

    let logits = g.matmul_nt(qh, kh)?; // (n, H, L, L)
    let mut logits = g.scale(logits, T::from_f64(1.0 / (dh as f64).sqrt()))?;
    if let Some(b) = bias {
        logits = g.add(logits, b)?;
    }
    if let Some(m) = mask {
        let m4 = g.reshape(m, &[n, 1, l, l])?;
        logits = g.add(logits, m4)?;
    }
    let attn = g.softmax_lastdim(logits)?;
    let ctx = g.matmul(attn, vh)?; // (n, H, L, dh)
    let merged = g.permute(ctx, &[0, 2, 1, 3])?;
    let flat = g.reshape(merged, &[n, l, d])?;
    g.matmul(flat, wo)
}

/// Windowed attention along the temporal axis of `(B*S, T, D)` sequences.
/// Shifted layers roll by `W_t / 2`. `valid` carries per-sequence valid frame
/// counts for key blocking.
pub fn temporal_swin_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    params: &AttnParams<T>,
    bias: &RelPosBias1D<T>,
    shifted: bool,
    valid: Option<&[usize]>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (bp, t) = (shape[0], shape[1]);
    let w = bias.window;
    let shift = if shifted { w / 2 } else { 0 };
    let (wins, info) = partition_1d(g, x, w, shift)?;
    let b = bias.materialize(g)?;
    let mask = match window_mask_1d::<T>(bp, t, w, shift, info.pad, valid) {
        Some(m) => Some(g.leaf(m)?),
        None => None,
    };
    let out = window_attention(g, wins, params, Some(b), mask)?;
    merge_1d(g, out, info, bp)
}

/// What a spatial layer did on its last pass, for callers that record it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpatialTrace {
    pub fallback_1d: bool,
}

/// Additive mask for 2D grid windows covering only geometric padding.
fn window_mask_2d<T: Scalar>(
    b: usize,
    grid: usize,
    w: usize,
    pad_r: usize,
    pad_c: usize,
) -> Option<Tensor<T>> {
    if pad_r == 0 && pad_c == 0 {
        return None;
    }
    let (gr, gc) = ((grid + pad_r) / w, (grid + pad_c) / w);
    let n = w * w;
    let neg = T::neg_mask();
    let mut data = vec![T::zero(); b * gr * gc * n * n];
    for bi in 0..b {
        for wr in 0..gr {
            for wc in 0..gc {
                let base = ((bi * gr + wr) * gc + wc) * n * n;
                for p in 0..n {
                    let (r1, c1) = (wr * w + p / w, wc * w + p % w);
                    let bp = r1 >= grid || c1 >= grid;
                    for q in 0..n {
                        if p == q {
                            continue;
                        }
                        let (r2, c2) = (wr * w + q / w, wc * w + q % w);
                        if bp || r2 >= grid || c2 >= grid {
                            data[base + p * n + q] = neg;
                        }
                    }
                }
            }
        }
    }
    Some(Tensor::new(vec![b * gr * gc, n, n], data).expect("mask shape"))
}

/// Windowed attention over the spatial tokens of each frame, `(B*T, S, D)`.
/// Square token counts are treated as a `sqrt(S) x sqrt(S)` grid with 2D
/// windows and the 2D bias; anything else falls back to 1D windows over the
/// token axis with the dedicated 1D table.
pub fn spatial_swin_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    params: &AttnParams<T>,
    bias2d: &RelPosBias2D<T>,
    bias1d_fallback: &RelPosBias1D<T>,
    shifted: bool,
    trace: &mut SpatialTrace,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (bp, s, d) = (shape[0], shape[1], shape[2]);
    let grid = (s as f64).sqrt().round() as usize;
    if grid * grid != s {
        trace.fallback_1d = true;
        let w = bias1d_fallback.window;
        let shift = if shifted { w / 2 } else { 0 };
        let (wins, info) = partition_1d(g, x, w, shift)?;
        let b = bias1d_fallback.materialize(g)?;
        let mask = match window_mask_1d::<T>(bp, s, w, shift, info.pad, None) {
            Some(m) => Some(g.leaf(m)?),
            None => None,
        };
        let out = window_attention(g, wins, params, Some(b), mask)?;
        return merge_1d(g, out, info, bp);
    }
    trace.fallback_1d = false;

    let w = bias2d.window;
    let shift = if shifted { w / 2 } else { 0 };
    let pad = (w - grid % w) % w;
    let (gr, gc) = ((grid + pad) / w, (grid + pad) / w);
    let n = w * w;

    let gridded = g.reshape(x, &[bp, grid, grid, d])?;
    let rolled_r = g.roll(gridded, 1, shift % grid)?;
    let rolled = g.roll(rolled_r, 2, shift % grid)?;
    let padded_r = g.pad_axis(rolled, 1, pad)?;
    let padded = g.pad_axis(padded_r, 2, pad)?;
    // (B, Gr, w, Gc, w, D) -> (B, Gr, Gc, w, w, D) -> (B*Gr*Gc, w*w, D)
    let blocked = g.reshape(padded, &[bp, gr, w, gc, w, d])?;
    let grouped = g.permute(blocked, &[0, 1, 3, 2, 4, 5])?;
    let wins = g.reshape(grouped, &[bp * gr * gc, n, d])?;

    let b = bias2d.materialize(g)?;
    let mask = match window_mask_2d::<T>(bp, grid, w, pad, pad) {
        Some(m) => Some(g.leaf(m)?),
        None => None,
    };
    let out = window_attention(g, wins, params, Some(b), mask)?;

    let regrouped = g.reshape(out, &[bp, gr, gc, w, w, d])?;
    let unblocked = g.permute(regrouped, &[0, 1, 3, 2, 4, 5])?;
    let full = g.reshape(unblocked, &[bp, grid + pad, grid + pad, d])?;
    let cut_c = g.slice_axis(full, 2, 0, grid)?;
    let cut_r = g.slice_axis(cut_c, 1, 0, grid)?;
    let unr_c = g.roll(cut_r, 2, (grid - shift % grid) % grid)?;
    let unr_r = g.roll(unr_c, 1, (grid - shift % grid) % grid)?;
    g.reshape(unr_r, &[bp, s, d])
}

/// Global attention over all `T*S` tokens in one window with no positional
/// bias: the joint-attention ablation path. `token_valid`, when present, is a
/// flat `(B * M)` validity map used to block invalid keys.
pub fn joint_attention_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    params: &AttnParams<T>,
    token_valid: Option<&[bool]>,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (b, m) = (shape[0], shape[1]);
    let mask = match token_valid {
        Some(valid) if valid.iter().any(|v| !v) => {
            debug_assert_eq!(valid.len(), b * m);
            let neg = T::neg_mask();
            let mut data = vec![T::zero(); b * m * m];
            for bi in 0..b {
                for i in 0..m {
                    let vi = valid[bi * m + i];
                    for j in 0..m {
                        if i != j && (!vi || !valid[bi * m + j]) {
                            data[(bi * m + i) * m + j] = neg;
                        }
                    }
                }
            }
            Some(g.leaf(Tensor::new(vec![b, m, m], data)?)?)
        }
        _ => None,
    };
    window_attention(g, x, params, None, mask)
}
