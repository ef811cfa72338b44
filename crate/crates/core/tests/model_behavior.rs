//! Behavioral contracts of the assembled head: projection semantics, the
//! pre-norm block identity, ablation equivalences, masking, determinism.

use easwin_core::graph::Graph;
use easwin_core::model::{
    predict, swin_block, BlockAxis, BlockValidity, EaSwin, EmbeddingBatch, ForwardInfo,
    HeadConfig, HeadKind, PoolMode,
};
use easwin_core::oracles::{layer_norm_naive, window_attention_naive};
use easwin_core::tensor::Tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn tiny_cfg() -> HeadConfig {
    HeadConfig {
        d_in: 6,
        d_model: 8,
        heads: 2,
        w_t: 2,
        w_s: 2,
        depth_t: 1,
        depth_s: 1,
        tubelet: 1,
        pool: PoolMode::Attention,
        head_kind: HeadKind::Swin,
        use_shift: true,
        joint_attention: false,
        frames: 4,
    }
}

fn rand_batch(rng: &mut StdRng, b: usize, t: usize, s: usize, d_in: usize) -> EmbeddingBatch<f64> {
    let data: Vec<f64> = (0..b * t * s * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<u8> = (0..b).map(|i| (i % 2) as u8).collect();
    EmbeddingBatch::new(
        Tensor::new(vec![b, t, s, d_in], data).unwrap(),
        vec![t; b],
        Some(labels),
    )
    .unwrap()
}

#[test]
fn identity_projection_passes_input_through() {
    // tau=1, D_in == D, identity-initialized projection.
    let mut cfg = tiny_cfg();
    cfg.d_in = 8;
    let mut model = EaSwin::<f64>::new(cfg, 0).unwrap();
    let d = 8;
    let mut eye = Tensor::zeros(&[d, d]);
    for i in 0..d {
        eye.data_mut()[i * d + i] = 1.0;
    }
    model.proj_weight.value = eye;
    model.proj_bias.value = Tensor::zeros(&[d]);

    let mut rng = StdRng::seed_from_u64(1);
    let batch = rand_batch(&mut rng, 2, 4, 4, d);
    let mut g = Graph::new();
    let out = model.project_input(&mut g, &batch).unwrap();
    assert_eq!(g.shape(out), &[2, 4, 4, d]);
    assert_eq!(g.value(out).data(), batch.z.data());
}

#[test]
fn tubelets_halve_the_temporal_extent() {
    let mut cfg = tiny_cfg();
    cfg.tubelet = 2;
    cfg.frames = 16;
    let model = EaSwin::<f64>::new(cfg, 0).unwrap();
    let mut rng = StdRng::seed_from_u64(2);
    let batch = rand_batch(&mut rng, 1, 16, 2, 6);
    let mut g = Graph::new();
    let out = model.project_input(&mut g, &batch).unwrap();
    assert_eq!(g.shape(out), &[1, 8, 2, 8]);
}

#[test]
fn tubelet_projection_matches_concat_then_matmul() {
    let mut cfg = tiny_cfg();
    cfg.tubelet = 2;
    cfg.d_in = 3;
    cfg.frames = 4;
    let model = EaSwin::<f64>::new(cfg, 7).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    let (b, t, s, d_in, d) = (2, 4, 2, 3, 8);
    let batch = rand_batch(&mut rng, b, t, s, d_in);

    let mut g = Graph::new();
    let out = model.project_input(&mut g, &batch).unwrap();
    let got = g.value(out).data();

    // Oracle: concatenate tau consecutive frames' features, then w^T x + b.
    let w = model.proj_weight.value.data();
    let bias = model.proj_bias.value.data();
    let z = batch.z.data();
    let tau = 2;
    let tp = t / tau;
    for bi in 0..b {
        for tpi in 0..tp {
            for si in 0..s {
                let mut cat = Vec::with_capacity(tau * d_in);
                for f in 0..tau {
                    let t_abs = tpi * tau + f;
                    let base = ((bi * t + t_abs) * s + si) * d_in;
                    cat.extend_from_slice(&z[base..base + d_in]);
                }
                for o in 0..d {
                    let mut acc = bias[o];
                    for (i, &x) in cat.iter().enumerate() {
                        acc += x * w[i * d + o];
                    }
                    let idx = ((bi * tp + tpi) * s + si) * d + o;
                    assert!((got[idx] - acc).abs() < 1e-6, "{} vs {acc}", got[idx]);
                }
            }
        }
    }
}

#[test]
fn tubelet_must_divide_frames() {
    let mut cfg = tiny_cfg();
    cfg.tubelet = 3;
    cfg.frames = 4;
    assert!(EaSwin::<f64>::new(cfg, 0).is_err());
}

#[test]
fn zero_weight_block_is_bit_identity() {
    let cfg = tiny_cfg();
    let mut model = EaSwin::<f64>::new(cfg, 5).unwrap();
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v = 0.0;
        }
    }
    let block = &model.temporal[0];
    let mut rng = StdRng::seed_from_u64(9);
    let x_data: Vec<f64> = (0..2 * 4 * 8).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![2, 4, 8], x_data.clone()).unwrap()).unwrap();
    let mut info = ForwardInfo::default();
    for shifted in [false, true] {
        let out = swin_block(
            &mut g,
            x,
            block,
            BlockAxis::Temporal,
            shifted,
            BlockValidity::All,
            &mut info,
        )
        .unwrap();
        // Bit-level equality on 64-bit values.
        assert_eq!(g.value(out).data(), &x_data[..]);
    }
}

#[test]
fn single_temporal_block_equals_dense_prenorm_transformer() {
    // T = W_t and S = 1: the windowed path degenerates to one dense window,
    // so the block must equal a plain pre-norm transformer block computed by
    // explicit loops.
    let mut cfg = tiny_cfg();
    cfg.w_t = 4;
    let model = EaSwin::<f64>::new(cfg, 11).unwrap();
    let block = &model.temporal[0];
    let d = 8usize;
    let t = 4usize;
    let mut rng = StdRng::seed_from_u64(21);
    let x: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let vx = g.leaf(Tensor::new(vec![1, t, d], x.clone()).unwrap()).unwrap();
    let mut info = ForwardInfo::default();
    let out = swin_block(
        &mut g,
        vx,
        block,
        BlockAxis::Temporal,
        false,
        BlockValidity::All,
        &mut info,
    )
    .unwrap();
    let got = g.value(out).data();

    // Oracle: LN -> dense MSA (+bias) -> residual -> LN -> MLP -> residual.
    let gelu = |x: f64| {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
    };
    let ln = |rows: &[f64], gamma: &[f64], beta: &[f64]| -> Vec<f64> {
        rows.chunks(d)
            .flat_map(|r| layer_norm_naive(r, gamma, beta, 1e-5))
            .collect()
    };
    let bias_table = block_bias_table(block);
    let mut bias = vec![0.0; 2 * t * t];
    for h in 0..2 {
        for i in 0..t {
            for j in 0..t {
                bias[h * t * t + i * t + j] = bias_table[(i + t - 1 - j) * 2 + h];
            }
        }
    }
    let n1 = ln(&x, block.ln1_gamma.value.data(), block.ln1_beta.value.data());
    let msa = window_attention_naive(
        &n1,
        t,
        d,
        2,
        block.attn.w_q.value.data(),
        block.attn.w_k.value.data(),
        block.attn.w_v.value.data(),
        block.attn.w_o.value.data(),
        Some(&bias),
        None,
    );
    let y: Vec<f64> = x.iter().zip(&msa).map(|(a, b)| a + b).collect();
    let n2 = ln(&y, block.ln2_gamma.value.data(), block.ln2_beta.value.data());
    let w1 = block.mlp_w1.value.data();
    let b1 = block.mlp_b1.value.data();
    let w2 = block.mlp_w2.value.data();
    let b2 = block.mlp_b2.value.data();
    let hidden = 4 * d;
    let mut want = Vec::with_capacity(t * d);
    for r in 0..t {
        let mut h1 = vec![0.0; hidden];
        for (o, h1o) in h1.iter_mut().enumerate() {
            let mut acc = b1[o];
            for i in 0..d {
                acc += n2[r * d + i] * w1[i * hidden + o];
            }
            *h1o = gelu(acc);
        }
        for o in 0..d {
            let mut acc = b2[o];
            for (i, &h) in h1.iter().enumerate() {
                acc += h * w2[i * d + o];
            }
            want.push(y[r * d + o] + acc);
        }
    }
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

fn block_bias_table(block: &easwin_core::model::SwinBlock<f64>) -> Vec<f64> {
    match &block.bias {
        easwin_core::model::BlockBias::Temporal(b) => b.table.value.data().to_vec(),
        _ => panic!("temporal block expected"),
    }
}

#[test]
fn base_shapes_and_finiteness() {
    // Base architecture at full width: logits shape (2,), all finite.
    let cfg = HeadConfig { d_in: 64, ..HeadConfig::default() };
    let model = EaSwin::<f32>::new(cfg, 1).unwrap();
    let mut rng = StdRng::seed_from_u64(33);
    let data: Vec<f32> = (0..2 * 16 * 16 * 64).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let batch = EmbeddingBatch::new(
        Tensor::new(vec![2, 16, 16, 64], data).unwrap(),
        vec![16, 16],
        None,
    )
    .unwrap();
    let logits = model.forward_logits(&batch).unwrap();
    assert_eq!(logits.shape(), &[2]);
    assert!(logits.data().iter().all(|v| v.is_finite()));
}

#[test]
fn frame_level_s1_path_runs() {
    let mut cfg = tiny_cfg();
    cfg.w_s = 4;
    let model = EaSwin::<f64>::new(cfg, 3).unwrap();
    let mut rng = StdRng::seed_from_u64(4);
    let batch = rand_batch(&mut rng, 2, 4, 1, 6);
    let logits = model.forward_logits(&batch).unwrap();
    assert_eq!(logits.shape(), &[2]);
    assert!(logits.data().iter().all(|v| v.is_finite()));
}

#[test]
fn batch_permutation_permutes_logits() {
    let cfg = tiny_cfg();
    let model = EaSwin::<f64>::new(cfg, 13).unwrap();
    let mut rng = StdRng::seed_from_u64(5);
    let (b, t, s, d_in) = (3, 4, 4, 6);
    let batch = rand_batch(&mut rng, b, t, s, d_in);
    let logits = model.forward_logits(&batch).unwrap();

    // Reverse the batch.
    let stride = t * s * d_in;
    let mut rev = Vec::with_capacity(b * stride);
    for bi in (0..b).rev() {
        rev.extend_from_slice(&batch.z.data()[bi * stride..(bi + 1) * stride]);
    }
    let rev_batch = EmbeddingBatch::new(
        Tensor::new(vec![b, t, s, d_in], rev).unwrap(),
        batch.valid_t.iter().rev().copied().collect(),
        None,
    )
    .unwrap();
    let rev_logits = model.forward_logits(&rev_batch).unwrap();
    for i in 0..b {
        assert_eq!(logits.data()[i], rev_logits.data()[b - 1 - i]);
    }
}

#[test]
fn no_shift_config_equals_manually_unshifted_stack() {
    // With use_shift=false, every would-be-shifted block runs the unshifted
    // path: the full forward must bit-equal a manual stack that never shifts.
    let mut cfg = tiny_cfg();
    cfg.depth_t = 2;
    cfg.depth_s = 2;
    cfg.use_shift = false;
    cfg.pool = PoolMode::Mean;
    let model = EaSwin::<f64>::new(cfg, 17).unwrap();
    let mut rng = StdRng::seed_from_u64(6);
    let (b, t, s, d_in, d) = (2, 4, 4, 6, 8);
    let batch = rand_batch(&mut rng, b, t, s, d_in);
    let logits = model.forward_logits(&batch).unwrap();

    let mut g = Graph::new();
    let proj = model.project_input(&mut g, &batch).unwrap();
    let mut info = ForwardInfo::default();
    let perm = g.permute(proj, &[0, 2, 1, 3]).unwrap();
    let mut x = g.reshape(perm, &[b * s, t, d]).unwrap();
    let counts = vec![t; b * s];
    for block in &model.temporal {
        x = swin_block(
            &mut g,
            x,
            block,
            BlockAxis::Temporal,
            false,
            BlockValidity::FrameCounts(&counts),
            &mut info,
        )
        .unwrap();
    }
    let unflat = g.reshape(x, &[b, s, t, d]).unwrap();
    let back = g.permute(unflat, &[0, 2, 1, 3]).unwrap();
    let mut x = g.reshape(back, &[b * t, s, d]).unwrap();
    for block in &model.spatial {
        x = swin_block(&mut g, x, block, BlockAxis::Spatial, false, BlockValidity::All, &mut info)
            .unwrap();
    }
    let tokens = g.reshape(x, &[b, t * s, d]).unwrap();
    let valid = vec![true; b * t * s];
    let pooled = easwin_core::model::pool_tokens(
        &mut g,
        tokens,
        &valid,
        b,
        t * s,
        d,
        PoolMode::Mean,
        None,
    )
    .unwrap();
    let pool = model.pool.as_ref().unwrap();
    let vw1 = g.param(&pool.w1).unwrap();
    let vb1 = g.param(&pool.b1).unwrap();
    let vw2 = g.param(&pool.w2).unwrap();
    let vb2 = g.param(&pool.b2).unwrap();
    let h = g.matmul(pooled, vw1).unwrap();
    let h = g.add(h, vb1).unwrap();
    let h = g.gelu(h).unwrap();
    let o = g.matmul(h, vw2).unwrap();
    let o = g.add(o, vb2).unwrap();
    let manual = g.reshape(o, &[b]).unwrap();
    assert_eq!(logits.data(), g.value(manual).data());
}

#[test]
fn zero_query_attention_pooling_equals_mean_pooling() {
    // The attention-pool query is zero-initialized, so a fresh attention
    // model and a fresh mean model from the same seed agree to 1e-6.
    let cfg_attn = tiny_cfg();
    let mut cfg_mean = tiny_cfg();
    cfg_mean.pool = PoolMode::Mean;
    let m_attn = EaSwin::<f64>::new(cfg_attn, 19).unwrap();
    let m_mean = EaSwin::<f64>::new(cfg_mean, 19).unwrap();
    let mut rng = StdRng::seed_from_u64(7);
    let batch = rand_batch(&mut rng, 3, 4, 4, 6);
    let a = m_attn.forward_logits(&batch).unwrap();
    let b = m_mean.forward_logits(&batch).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn mlp_baseline_ignores_depth_settings() {
    let mut cfg_a = tiny_cfg();
    cfg_a.head_kind = HeadKind::MlpBaseline;
    cfg_a.depth_t = 2;
    cfg_a.depth_s = 2;
    let mut cfg_b = cfg_a.clone();
    cfg_b.depth_t = 0;
    cfg_b.depth_s = 0;
    let ma = EaSwin::<f64>::new(cfg_a, 23).unwrap();
    let mb = EaSwin::<f64>::new(cfg_b, 23).unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    let batch = rand_batch(&mut rng, 2, 4, 4, 6);
    assert_eq!(
        ma.forward_logits(&batch).unwrap().data(),
        mb.forward_logits(&batch).unwrap().data()
    );
}

#[test]
fn joint_attention_path_runs_and_differs() {
    let cfg = tiny_cfg();
    let joint_cfg = cfg.ablation(2).unwrap();
    assert!(joint_cfg.joint_attention);
    let base = EaSwin::<f64>::new(cfg, 29).unwrap();
    let joint = EaSwin::<f64>::new(joint_cfg, 29).unwrap();
    let mut rng = StdRng::seed_from_u64(9);
    let batch = rand_batch(&mut rng, 2, 4, 4, 6);
    let a = base.forward_logits(&batch).unwrap();
    let b = joint.forward_logits(&batch).unwrap();
    assert_eq!(a.shape(), b.shape());
    assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny_cfg();
    let m1 = EaSwin::<f64>::new(cfg.clone(), 31).unwrap();
    let m2 = EaSwin::<f64>::new(cfg, 31).unwrap();
    let mut rng = StdRng::seed_from_u64(10);
    let batch = rand_batch(&mut rng, 2, 4, 4, 6);
    assert_eq!(
        m1.forward_logits(&batch).unwrap().data(),
        m2.forward_logits(&batch).unwrap().data()
    );
}

#[test]
fn invalid_frames_cannot_influence_logits() {
    // Change the content of frames beyond valid_t: attention blocks them as
    // keys and pooling gives them zero weight, so logits are unchanged.
    let cfg = tiny_cfg();
    let model = EaSwin::<f64>::new(cfg, 37).unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    let (b, t, s, d_in) = (2, 4, 4, 6);
    let mut batch = rand_batch(&mut rng, b, t, s, d_in);
    batch.valid_t = vec![2, 3];
    let logits1 = model.forward_logits(&batch).unwrap();

    let mut altered = batch.clone();
    {
        let stride = s * d_in;
        let data = altered.z.data_mut();
        for bi in 0..b {
            for fi in batch.valid_t[bi]..t {
                let base = (bi * t + fi) * stride;
                for v in &mut data[base..base + stride] {
                    *v += 10.0 * rng.gen_range(0.5..1.5);
                }
            }
        }
    }
    let logits2 = model.forward_logits(&altered).unwrap();
    for (a, b) in logits1.data().iter().zip(logits2.data()) {
        assert!((a - b).abs() < 1e-9, "invalid frames leaked: {a} vs {b}");
    }
}

#[test]
fn predict_examples() {
    let logits = Tensor::new(vec![3], vec![0.0f64, 2.0, 40.0]).unwrap();
    let preds = predict(&logits);
    assert_eq!(preds[0].probability, 0.5);
    assert_eq!(preds[0].class, 1, "tie classifies as AI-generated");
    // Frozen from a 64-bit logistic evaluation.
    assert!((preds[1].probability - 0.88079707797788231).abs() < 1e-15);
    assert_eq!(preds[1].class, 1);
    assert!(preds[2].probability > 1.0 - 1e-12);
    let neg = predict(&Tensor::new(vec![1], vec![-3.0f64]).unwrap());
    assert_eq!(neg[0].class, 0);
}

#[test]
fn pool_examples() {
    // All tokens identical -> pooled == the token, both modes.
    let d = 4;
    let token = [0.5, -1.0, 2.0, 0.25];
    let data: Vec<f64> = (0..3).flat_map(|_| token).collect();
    let valid = vec![true; 3];
    for mode in [PoolMode::Mean, PoolMode::Attention] {
        let mut g = Graph::new();
        let tokens = g.leaf(Tensor::new(vec![1, 3, d], data.clone()).unwrap()).unwrap();
        let query = easwin_core::tensor::Parameter::new("q", Tensor::<f64>::zeros(&[d]));
        let pooled = easwin_core::model::pool_tokens(
            &mut g,
            tokens,
            &valid,
            1,
            3,
            d,
            mode,
            Some(&query),
        )
        .unwrap();
        for (a, b) in g.value(pooled).data().iter().zip(&token) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // Mean of [1,0] and [0,1] is [0.5, 0.5].
    let mut g = Graph::new();
    let tokens = g
        .leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
        .unwrap();
    let pooled = easwin_core::model::pool_tokens(
        &mut g,
        tokens,
        &[true, true],
        1,
        2,
        2,
        PoolMode::Mean,
        None,
    )
    .unwrap();
    assert_eq!(g.value(pooled).data(), &[0.5, 0.5]);
}

#[test]
fn concurrent_evaluation_matches_sequential() {
    // Independent forward graphs on separate threads, read-only parameters.
    let cfg = tiny_cfg();
    let model = EaSwin::<f64>::new(cfg, 41).unwrap();
    let mut rng = StdRng::seed_from_u64(12);
    let batches: Vec<EmbeddingBatch<f64>> =
        (0..4).map(|_| rand_batch(&mut rng, 2, 4, 4, 6)).collect();
    let sequential: Vec<Vec<f64>> = batches
        .iter()
        .map(|b| model.forward_logits(b).unwrap().data().to_vec())
        .collect();
    let parallel: Vec<Vec<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batches
            .iter()
            .map(|b| scope.spawn(|| model.forward_logits(b).unwrap().data().to_vec()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(sequential, parallel);
}
