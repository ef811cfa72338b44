//! Brute-force reference implementations used by the test suites. Everything
//! here is deliberately written as explicit loops in f64, independent of the
//! graph engine, so the two routes can disagree.

/// Plain triple-loop matrix product, row-major.
pub fn matmul_naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Row softmax with the masking conventions of the production kernel: `-inf`
/// entries get probability zero; an all-`-inf` row becomes all zeros.
pub fn softmax_naive(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; row.len()];
    }
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Direct-formula layer norm over one row.
pub fn layer_norm_naive(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    row.iter()
        .enumerate()
        .map(|(i, &v)| (v - mean) * inv * gamma[i] + beta[i])
        .collect()
}

/// Dense multi-head attention over one window, explicit loops throughout.
///
/// * `x` — `L × d` tokens of the window
/// * `w_q/w_k/w_v/w_o` — `d × d` projection matrices
/// * `bias` — optional `heads × L × L` additive logit bias
/// * `mask` — optional `L × L` additive logit mask
#[allow(clippy::too_many_arguments)]
pub fn window_attention_naive(
    x: &[f64],
    l: usize,
    d: usize,
    heads: usize,
    w_q: &[f64],
    w_k: &[f64],
    w_v: &[f64],
    w_o: &[f64],
    bias: Option<&[f64]>,
    mask: Option<&[f64]>,
) -> Vec<f64> {
    assert_eq!(x.len(), l * d);
    assert_eq!(d % heads, 0);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = matmul_naive(l, d, d, x, w_q);
    let k = matmul_naive(l, d, d, x, w_k);
    let v = matmul_naive(l, d, d, x, w_v);

    // Concatenated head outputs, then the output projection.
    let mut concat = vec![0.0; l * d];
    for h in 0..heads {
        for i in 0..l {
            let mut logits = vec![0.0; l];
            for j in 0..l {
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q[i * d + h * dh + c] * k[j * d + h * dh + c];
                }
                let mut z = dot * scale;
                if let Some(b) = bias {
                    z += b[h * l * l + i * l + j];
                }
                if let Some(m) = mask {
                    z += m[i * l + j];
                }
                logits[j] = z;
            }
            let weights = softmax_naive(&logits);
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..l {
                    acc += weights[j] * v[j * d + h * dh + c];
                }
                concat[i * d + h * dh + c] = acc;
            }
        }
    }
    matmul_naive(l, d, d, &concat, w_o)
}


/// Full temporal-layer oracle: cyclic roll, zero-pad, per-window dense
/// attention with pad masking, unpad, unroll — explicit loops only.
#[allow(clippy::too_many_arguments)]
pub fn temporal_layer_oracle(
    x: &[f64],
    bp: usize,
    t: usize,
    d: usize,
    heads: usize,
    w: usize,
    shift: usize,
    w_q: &[f64],
    w_k: &[f64],
    w_v: &[f64],
    w_o: &[f64],
    bias_table: &[f64],
) -> Vec<f64> {
    const NEG: f64 = -1e9;
    let pad = (w - t % w) % w;
    let tt = t + pad;
    // Materialize the relative bias by hand.
    let mut bias = vec![0.0; heads * w * w];
    for h in 0..heads {
        for i in 0..w {
            for j in 0..w {
                bias[h * w * w + i * w + j] = bias_table[(i + w - 1 - j) * heads + h];
            }
        }
    }
    let mut out = vec![0.0; bp * t * d];
    for b in 0..bp {
        let mut seq = vec![0.0; tt * d];
        for i in 0..t {
            let src = (i + shift) % t;
            seq[i * d..(i + 1) * d].copy_from_slice(&x[(b * t + src) * d..(b * t + src + 1) * d]);
        }
        let mut attended = vec![0.0; tt * d];
        for wi in 0..tt / w {
            let win = &seq[wi * w * d..(wi + 1) * w * d];
            let mask: Option<Vec<f64>> = if pad > 0 {
                let mut m = vec![0.0; w * w];
                for i in 0..w {
                    for j in 0..w {
                        let (pi, pj) = (wi * w + i >= t, wi * w + j >= t);
                        if i != j && (pi || pj) {
                            m[i * w + j] = NEG;
                        }
                    }
                }
                Some(m)
            } else {
                None
            };
            let o = window_attention_naive(
                win, w, d, heads, w_q, w_k, w_v, w_o, Some(&bias), mask.as_deref(),
            );
            attended[wi * w * d..(wi + 1) * w * d].copy_from_slice(&o);
        }
        for i in 0..t {
            let dst = (i + shift) % t;
            out[(b * t + dst) * d..(b * t + dst + 1) * d]
                .copy_from_slice(&attended[i * d..(i + 1) * d]);
        }
    }
    out
}

/// Full spatial-layer oracle on a square grid: roll both axes, pad, 2D
/// windows, dense attention, inverse — explicit loops only.
#[allow(clippy::too_many_arguments)]
pub fn spatial_layer_oracle(
    x: &[f64],
    bp: usize,
    grid: usize,
    d: usize,
    heads: usize,
    w: usize,
    shift: usize,
    w_q: &[f64],
    w_k: &[f64],
    w_v: &[f64],
    w_o: &[f64],
    bias_table_2d: &[f64],
) -> Vec<f64> {
    const NEG: f64 = -1e9;
    let pad = (w - grid % w) % w;
    let gg = grid + pad;
    let wins_per_side = gg / w;
    let n = w * w;
    let span = 2 * w - 1;
    let mut bias = vec![0.0; heads * n * n];
    for h in 0..heads {
        for p in 0..n {
            for q in 0..n {
                let (r1, c1) = (p / w, p % w);
                let (r2, c2) = (q / w, q % w);
                let row = (r1 + w - 1 - r2) * span + (c1 + w - 1 - c2);
                bias[h * n * n + p * n + q] = bias_table_2d[row * heads + h];
            }
        }
    }
    let mut out = vec![0.0; bp * grid * grid * d];
    for b in 0..bp {
        let mut padded = vec![0.0; gg * gg * d];
        for r in 0..grid {
            for c in 0..grid {
                let (sr, sc) = ((r + shift) % grid, (c + shift) % grid);
                let src = (b * grid * grid + sr * grid + sc) * d;
                padded[(r * gg + c) * d..(r * gg + c) * d + d].copy_from_slice(&x[src..src + d]);
            }
        }
        let mut attended = vec![0.0; gg * gg * d];
        for wr in 0..wins_per_side {
            for wc in 0..wins_per_side {
                let mut win = vec![0.0; n * d];
                for p in 0..n {
                    let (r, c) = (wr * w + p / w, wc * w + p % w);
                    win[p * d..(p + 1) * d]
                        .copy_from_slice(&padded[(r * gg + c) * d..(r * gg + c) * d + d]);
                }
                let mask: Option<Vec<f64>> = if pad > 0 {
                    let mut m = vec![0.0; n * n];
                    for p in 0..n {
                        for q in 0..n {
                            let (r1, c1) = (wr * w + p / w, wc * w + p % w);
                            let (r2, c2) = (wr * w + q / w, wc * w + q % w);
                            let bp1 = r1 >= grid || c1 >= grid;
                            let bq = r2 >= grid || c2 >= grid;
                            if p != q && (bp1 || bq) {
                                m[p * n + q] = NEG;
                            }
                        }
                    }
                    Some(m)
                } else {
                    None
                };
                let o = window_attention_naive(
                    &win, n, d, heads, w_q, w_k, w_v, w_o, Some(&bias), mask.as_deref(),
                );
                for p in 0..n {
                    let (r, c) = (wr * w + p / w, wc * w + p % w);
                    attended[(r * gg + c) * d..(r * gg + c) * d + d]
                        .copy_from_slice(&o[p * d..(p + 1) * d]);
                }
            }
        }
        for r in 0..grid {
            for c in 0..grid {
                let (dr, dc) = ((r + shift) % grid, (c + shift) % grid);
                let dst = (b * grid * grid + dr * grid + dc) * d;
                out[dst..dst + d].copy_from_slice(&attended[(r * gg + c) * d..(r * gg + c) * d + d]);
            }
        }
    }
    out
}

/// Pair-counting AUC: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half. Returns `(2 * favorable, 2 * pairs)`
/// so exactness can be asserted in integers.
pub fn auc_pair_oracle(scores: &[f64], labels: &[u8]) -> (u64, u64) {
    let mut num2 = 0u64;
    let mut pairs = 0u64;
    for (i, (&sp, &lp)) in scores.iter().zip(labels).enumerate() {
        if lp != 1 {
            continue;
        }
        for (j, (&sn, &ln)) in scores.iter().zip(labels).enumerate() {
            if i == j || ln != 0 {
                continue;
            }
            pairs += 1;
            if sp > sn {
                num2 += 2;
            } else if sp == sn {
                num2 += 1;
            }
        }
    }
    (num2, pairs * 2)
}

/// Central finite difference of `f` at `x[i]`, step `h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let up = f(&xp);
    xp[i] = x[i] - h;
    let down = f(&xp);
    (up - down) / (2.0 * h)
}

/// Relative error with an absolute floor, the convention used by every
/// gradient check in this crate.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}
