//! Full-model gradient verification: analytic gradients from the reverse
//! pass against 64-bit central finite differences, parameter by parameter.

use crate::error::Result;
use crate::graph::Graph;
use crate::model::{EaSwin, EmbeddingBatch, HeadConfig, HeadKind, PoolMode};
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Worst relative error seen for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

/// One model variant's check.
#[derive(Clone, Debug)]
pub struct VariantReport {
    pub label: String,
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
}

/// The standard multi-variant report.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub variants: Vec<VariantReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn loss_of(model: &EaSwin<f64>, batch: &EmbeddingBatch<f64>) -> Result<f64> {
    let labels = batch.labels.as_ref().expect("gradcheck batch has labels");
    let mut g = Graph::new();
    let (logits, _) = model.forward(&mut g, batch)?;
    let loss = g.bce_with_logits(logits, labels)?;
    g.value(loss).item()
}

/// Check every parameter of `model` on `batch` against central differences
/// of the BCE training loss. `h` is the probe step.
pub fn gradcheck_model(
    model: &mut EaSwin<f64>,
    batch: &EmbeddingBatch<f64>,
    h: f64,
    label: &str,
) -> Result<VariantReport> {
    let labels = batch.labels.clone().expect("gradcheck batch has labels");

    // Analytic gradients.
    model.zero_grads();
    let mut g = Graph::new();
    let (logits, _) = model.forward(&mut g, batch)?;
    let loss = g.bce_with_logits(logits, &labels)?;
    g.backward(loss)?;
    let grads = g.take_param_grads();
    model.apply_grads(&grads);

    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut per_param = Vec::new();
    let mut worst = 0.0f64;
    for (pi, (name, agrad)) in analytic.iter().enumerate() {
        let mut max_err = 0.0f64;
        for ei in 0..agrad.len() {
            let orig = model.params()[pi].value.data()[ei];
            model.params_mut()[pi].value.data_mut()[ei] = orig + h;
            let up = loss_of(model, batch)?;
            model.params_mut()[pi].value.data_mut()[ei] = orig - h;
            let down = loss_of(model, batch)?;
            model.params_mut()[pi].value.data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = crate::oracles::rel_err(agrad[ei], numeric);
            max_err = max_err.max(err);
        }
        worst = worst.max(max_err);
        per_param.push(ParamCheck { name: name.clone(), max_rel_err: max_err });
    }
    Ok(VariantReport { label: label.to_string(), per_param, max_rel_err: worst })
}

/// The tiny verification architecture: d=8, 2 heads, T=4, S=4, windows 2,
/// one temporal and one spatial block.
pub fn tiny_config() -> HeadConfig {
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

fn tiny_batch(seed: u64) -> Result<EmbeddingBatch<f64>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let (b, t, s, d_in) = (2, 4, 4, 6);
    let data: Vec<f64> = (0..b * t * s * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // One video with trailing invalid frames, to push gradients through the
    // validity masking path.
    EmbeddingBatch::new(
        Tensor::new(vec![b, t, s, d_in], data)?,
        vec![t, t - 1],
        Some(vec![1, 0]),
    )
}

/// The standard check: both pooling modes, with and without shift, on the
/// tiny config.
pub fn standard_tiny_report(h: f64, tol: f64) -> Result<GradCheckReport> {
    let mut variants = Vec::new();
    let mut worst = 0.0f64;
    for (pool, pool_name) in [(PoolMode::Attention, "attention"), (PoolMode::Mean, "mean")] {
        for use_shift in [true, false] {
            let mut cfg = tiny_config();
            cfg.pool = pool;
            cfg.use_shift = use_shift;
            let mut model = EaSwin::<f64>::new(cfg, 42)?;
            // A zero attention-pool query has a symmetric gradient landscape;
            // perturb it so the check exercises a generic point.
            if let Some(pool_head) = &mut model.pool {
                if let Some(q) = &mut pool_head.query {
                    let mut rng = StdRng::seed_from_u64(7);
                    for v in q.value.data_mut() {
                        *v = rng.gen_range(-0.3..0.3);
                    }
                }
            }
            let batch = tiny_batch(1234)?;
            let label = format!("pool={pool_name} shift={use_shift}");
            let report = gradcheck_model(&mut model, &batch, h, &label)?;
            worst = worst.max(report.max_rel_err);
            variants.push(report);
        }
    }
    Ok(GradCheckReport { variants, max_rel_err: worst, tolerance: tol, passed: worst < tol })
}
