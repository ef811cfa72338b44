//! Multiply-add counting for the factorized and joint attention paths,
//! mirroring the exact window geometry (including padding) of the layers.
//!
//! `attn` counts the window-attention core (Q·Kᵀ and weights·V) — the part
//! whose growth distinguishes linear from quadratic behavior in T. `linear`
//! counts the per-token projections and MLPs, which scale linearly in T for
//! both paths.

use serde::Serialize;

/// Shape of one hypothetical forward pass.
#[derive(Clone, Copy, Debug)]
pub struct CostShape {
    pub b: usize,
    pub t: usize,
    pub s: usize,
    pub d: usize,
    pub w_t: usize,
    pub w_s: usize,
    pub depth_t: usize,
    pub depth_s: usize,
}

/// Counted multiply-adds for one path.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PathCost {
    /// Window-attention core: logits (L*L*d_h per head) and apply (same).
    pub attn_madds: u128,
    /// Q/K/V/O projections plus the block MLPs.
    pub linear_madds: u128,
}

impl PathCost {
    pub fn total(&self) -> u128 {
        self.attn_madds + self.linear_madds
    }
}

fn padded(len: usize, w: usize) -> usize {
    len.div_ceil(w) * w
}

/// One block's linear work on `rows` tokens of width `d`: four attention
/// projections plus the 4x MLP.
fn block_linear(rows: u128, d: u128) -> u128 {
    4 * rows * d * d + 8 * rows * d * d
}

/// Window core cost over `windows` windows of length `l`: `2 * l^2 * d`
/// each (logits + apply, summed across heads).
fn window_core(windows: u128, l: u128, d: u128) -> u128 {
    2 * windows * l * l * d
}

/// Factorized temporal-then-spatial stack.
pub fn factorized_cost(c: &CostShape) -> PathCost {
    let (b, t, s, d) = (c.b as u128, c.t as u128, c.s as u128, c.d as u128);
    let mut attn = 0u128;
    let mut linear = 0u128;

    // Temporal blocks on (B*S) sequences of length T.
    let t_pad = padded(c.t, c.w_t) as u128;
    let windows_t = b * s * (t_pad / c.w_t as u128);
    attn += c.depth_t as u128 * window_core(windows_t, c.w_t as u128, d);
    linear += c.depth_t as u128 * block_linear(b * s * t, d);

    // Spatial blocks on (B*T) frames of S tokens.
    let grid = (c.s as f64).sqrt().round() as usize;
    let (windows_s, l_s) = if grid * grid == c.s {
        let g_pad = padded(grid, c.w_s) as u128;
        let per_side = g_pad / c.w_s as u128;
        (b * t * per_side * per_side, (c.w_s * c.w_s) as u128)
    } else {
        let s_pad = padded(c.s, c.w_s) as u128;
        (b * t * (s_pad / c.w_s as u128), c.w_s as u128)
    };
    attn += c.depth_s as u128 * window_core(windows_s, l_s, d);
    linear += c.depth_s as u128 * block_linear(b * t * s, d);

    PathCost { attn_madds: attn, linear_madds: linear }
}

/// Joint global-attention stack over all T*S tokens.
pub fn joint_cost(c: &CostShape) -> PathCost {
    let (b, t, s, d) = (c.b as u128, c.t as u128, c.s as u128, c.d as u128);
    let depth = (c.depth_t + c.depth_s) as u128;
    let m = t * s;
    PathCost {
        attn_madds: depth * window_core(b, m, d),
        linear_madds: depth * block_linear(b * m, d),
    }
}
