//! The optimization recipe: binary cross-entropy on logits, AdamW with
//! decoupled weight decay, per-step cosine schedule with linear warmup,
//! global gradient-norm clipping, deterministic multi-seed runs.

use crate::checkpoint;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::{self, EvalReport};
use crate::model::{EaSwin, HeadConfig};
use crate::scalar::Scalar;
use crate::tensor::Parameter;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Optimization hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply weight decay to every parameter, including layer norms and bias
    /// tables (normally excluded).
    pub decay_all: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            weight_decay: 0.05,
            warmup_epochs: 1,
            min_lr: 1e-6,
            max_grad_norm: 1.0,
            epochs: 30,
            batch_size: 64,
            seeds: vec![0, 1, 2],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_all: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_lr > self.lr {
            return Err(Error::config(format!(
                "min_lr {} exceeds lr {}",
                self.min_lr, self.lr
            )));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(Error::config(format!(
                "warmup_epochs {} must be < epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("max_grad_norm must be > 0".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1".to_string()));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed required".to_string()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be > 0".to_string()));
        }
        Ok(())
    }
}

/// Mean BCE over the batch, recorded on the graph (stable log-sum form).
pub fn bce_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    g.bce_with_logits(logits, labels)
}

/// Direct 64-bit BCE of probabilities-free logits, for evaluation logging.
pub fn bce_value(logits: &[f64], labels: &[u8]) -> f64 {
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(if y == 1 { -z } else { z }))
        .sum();
    total / labels.len() as f64
}

/// Per-step cosine schedule with linear warmup: 0 -> lr over the warmup
/// steps, then cosine from lr down to exactly min_lr on the final step.
pub fn cosine_lr(step: usize, total_steps: usize, warmup_steps: usize, lr: f64, min_lr: f64) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps + 1 {
        return lr;
    }
    let last = total_steps - 1;
    let progress = (step.min(last) - warmup_steps) as f64 / (last - warmup_steps) as f64;
    min_lr + 0.5 * (lr - min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scale all gradients so the global L2 norm is at most `max_norm`. Returns
/// the observed (pre-clip) norm.
pub fn clip_grad_norm<T: Scalar>(params: &mut [&mut Parameter<T>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        for &g in p.grad.data() {
            let g = g.to_f64();
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g = *g * scale;
            }
        }
    }
    norm
}

/// AdamW with decoupled weight decay. Layer-norm parameters, 1-D biases and
/// relative-bias tables are excluded from decay unless `decay_all` is set.
pub struct AdamW<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    decay_all: bool,
}

fn decays(p: &Parameter<impl Scalar>, decay_all: bool) -> bool {
    decay_all || (p.value.rank() >= 2 && !p.name.contains("bias_table"))
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[&Parameter<T>], cfg: &TrainConfig) -> Self {
        AdamW {
            m: params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            decay_all: cfg.decay_all,
        }
    }

    /// One update using the gradients currently stored on the parameters:
    /// `p -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * p` (decay decoupled,
    /// taken at the pre-update value).
    pub fn step(&mut self, params: &mut [&mut Parameter<T>], lr_t: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::from_f64(lr_t);
        let eps = T::from_f64(self.eps);
        let wd = T::from_f64(self.weight_decay);
        for (i, p) in params.iter_mut().enumerate() {
            if p.grad.numel() != self.m[i].len() {
                return Err(Error::contract(format!(
                    "parameter '{}' changed shape under the optimizer",
                    p.name
                )));
            }
            let decay = decays(p, self.decay_all);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grads = p.grad.data().to_vec();
            for (j, val) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let before = *val;
                let mut next = before - lr * (m_hat / (v_hat.sqrt() + eps));
                if decay {
                    next = next - lr * wd * before;
                }
                *val = next;
            }
        }
        Ok(())
    }
}

/// One row of metrics.csv.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: String,
    pub acc: f64,
    pub prec: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub loss: f64,
    pub lr: f64,
}

impl EpochRow {
    pub fn csv_header() -> &'static str {
        "epoch,split,acc,prec,recall,f1,auc,loss,lr"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch, self.split, self.acc, self.prec, self.recall, self.f1, self.auc,
            self.loss, self.lr
        )
    }
}

/// Outcome of one seed's training run. The model is restored to the
/// best-validation-AUC parameters.
pub struct TrainOutcome<T> {
    pub seed: u64,
    pub rows: Vec<EpochRow>,
    pub best_val_auc: f64,
    pub best_epoch: usize,
    pub diverged: bool,
    pub model: EaSwin<T>,
}

fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Batched evaluation: probability scores, labels, mean loss.
pub fn eval_split<T: Scalar>(
    model: &EaSwin<T>,
    split: &Split,
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<u8>, f64)> {
    let batch_size = batch_size.max(128);
    let n = split.n();
    let mut scores = Vec::with_capacity(n);
    let mut logit_values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = split.batch::<T>(&idx)?;
        let logits = model.forward_logits(&batch)?;
        for p in crate::model::predict(&logits) {
            scores.push(p.probability);
        }
        logit_values.extend(logits.data().iter().map(|&v| v.to_f64()));
        labels.extend(batch.labels.expect("split batches carry labels"));
        start = end;
    }
    let loss = bce_value(&logit_values, &labels);
    Ok((scores, labels, loss))
}

/// Full eval report over a split.
pub fn evaluate_model<T: Scalar>(
    model: &EaSwin<T>,
    split: &Split,
    batch_size: usize,
) -> Result<EvalReport> {
    let (scores, labels, _) = eval_split(model, split, batch_size)?;
    metrics::evaluate_all(&scores, &labels)
}

/// Train one seed. When `run_dir` is given, persists config.json,
/// metrics.csv and the best checkpoint there. Divergence (a non-finite loss
/// or activation) aborts, keeping the last good checkpoint.
pub fn train<T: Scalar>(
    train_split: &Split,
    val_split: &Split,
    head_cfg: &HeadConfig,
    cfg: &TrainConfig,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    head_cfg.validate()?;
    if train_split.n() == 0 || val_split.n() == 0 {
        return Err(Error::data("train and val splits must be non-empty".to_string()));
    }
    for split in [train_split, val_split] {
        let has = |c: u8| split.labels.iter().any(|&l| l == c);
        if !has(0) || !has(1) {
            return Err(Error::data("both classes must be present in each split".to_string()));
        }
    }

    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        let doc = serde_json::json!({ "model": head_cfg, "train": cfg, "seed": seed });
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&doc)?)?;
    }

    let mut model = EaSwin::<T>::new(head_cfg.clone(), seed)?;
    let mut adam = AdamW::new(&model.params(), cfg);
    let n = train_split.n();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;

    let mut rows: Vec<EpochRow> = Vec::new();
    let mut best_val_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.snapshot();
    let mut diverged = false;
    let mut step = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = StdRng::seed_from_u64(mix64(seed, epoch as u64 + 1));
        order.shuffle(&mut shuffle_rng);

        let mut train_scores = Vec::with_capacity(n);
        let mut train_labels = Vec::with_capacity(n);
        let mut loss_sum = 0.0f64;
        let mut last_lr = 0.0f64;

        for chunk in order.chunks(cfg.batch_size) {
            let lr_t = cosine_lr(step, total_steps, warmup_steps, cfg.lr, cfg.min_lr);
            last_lr = lr_t;
            let batch = train_split.batch::<T>(chunk)?;
            let labels = batch.labels.clone().expect("training batch has labels");

            let mut g = Graph::new();
            let step_result = (|| -> Result<f64> {
                let (logits, _) = model.forward(&mut g, &batch)?;
                let loss = bce_loss(&mut g, logits, &labels)?;
                let loss_val = g.value(loss).item()?.to_f64();
                for p in crate::model::predict(g.value(logits)) {
                    train_scores.push(p.probability);
                }
                train_labels.extend_from_slice(&labels);
                g.backward(loss)?;
                Ok(loss_val)
            })();
            let loss_val = match step_result {
                Ok(v) => v,
                Err(Error::Numeric { context, detail }) => {
                    eprintln!(
                        "training diverged at epoch {epoch} step {step} in {context}: {detail}; \
                         keeping last good checkpoint (epoch {best_epoch})"
                    );
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let grads = g.take_param_grads();
            drop(g);
            model.apply_grads(&grads);
            clip_grad_norm(&mut model.params_mut(), cfg.max_grad_norm);
            adam.step(&mut model.params_mut(), lr_t)?;
            model.zero_grads();
            loss_sum += loss_val * chunk.len() as f64;
            step += 1;
        }

        let train_report = metrics::evaluate_all(&train_scores, &train_labels)?;
        rows.push(EpochRow {
            epoch,
            split: "train".to_string(),
            acc: train_report.accuracy,
            prec: train_report.precision,
            recall: train_report.recall,
            f1: train_report.f1,
            auc: train_report.auc,
            loss: loss_sum / n as f64,
            lr: last_lr,
        });

        let (val_scores, val_labels, val_loss) = eval_split(&model, val_split, cfg.batch_size)?;
        let val_report = metrics::evaluate_all(&val_scores, &val_labels)?;
        rows.push(EpochRow {
            epoch,
            split: "val".to_string(),
            acc: val_report.accuracy,
            prec: val_report.precision,
            recall: val_report.recall,
            f1: val_report.f1,
            auc: val_report.auc,
            loss: val_loss,
            lr: last_lr,
        });

        if val_report.auc > best_val_auc {
            best_val_auc = val_report.auc;
            best_epoch = epoch;
            best_params = model.snapshot();
            if let Some(dir) = run_dir {
                model.restore(&best_params); // no-op copy, keeps file == memory
                checkpoint::save(&dir.join("best.ckpt"), &model)?;
            }
        }
    }

    model.restore(&best_params);
    if let Some(dir) = run_dir {
        let mut csv = String::from(EpochRow::csv_header());
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.to_csv());
            csv.push('\n');
        }
        let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
        f.write_all(csv.as_bytes())?;
    }
    Ok(TrainOutcome { seed, rows, best_val_auc, best_epoch, diverged, model })
}

/// Aggregate over seeds: mean, population std (zero for a single seed), and
/// the maximum of the per-seed best validation AUCs.
pub struct MultiSeedReport<T> {
    pub outcomes: Vec<TrainOutcome<T>>,
    pub mean_best_auc: f64,
    pub std_best_auc: f64,
    pub max_best_auc: f64,
}

pub fn train_multi_seed<T: Scalar>(
    train_split: &Split,
    val_split: &Split,
    head_cfg: &HeadConfig,
    cfg: &TrainConfig,
    run_root: Option<&Path>,
) -> Result<MultiSeedReport<T>> {
    cfg.validate()?;
    let mut outcomes = Vec::new();
    for &seed in &cfg.seeds {
        let dir: Option<PathBuf> = run_root.map(|r| r.join(format!("seed_{seed}")));
        outcomes.push(train::<T>(train_split, val_split, head_cfg, cfg, seed, dir.as_deref())?);
    }
    let k = outcomes.len() as f64;
    let mean = outcomes.iter().map(|o| o.best_val_auc).sum::<f64>() / k;
    let var = outcomes.iter().map(|o| (o.best_val_auc - mean).powi(2)).sum::<f64>() / k;
    let max = outcomes.iter().map(|o| o.best_val_auc).fold(f64::NEG_INFINITY, f64::max);
    Ok(MultiSeedReport { outcomes, mean_best_auc: mean, std_best_auc: var.sqrt(), max_best_auc: max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn bce_examples() {
        let mut g = Graph::<f64>::new();
        // logit 0, any label: ln 2.
        let z = g.leaf(Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        let l = bce_loss(&mut g, z, &[0]).unwrap();
        assert!((g.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        // Confident and correct: loss ~ 0.
        let z = g.leaf(Tensor::new(vec![1], vec![20.0]).unwrap()).unwrap();
        let l = bce_loss(&mut g, z, &[1]).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-8);

        // Frozen from direct 64-bit evaluation of logits [1.5, -0.5],
        // labels [1, 0].
        let z = g.leaf(Tensor::new(vec![2], vec![1.5, -0.5]).unwrap()).unwrap();
        let l = bce_loss(&mut g, z, &[1, 0]).unwrap();
        assert!((g.value(l).item().unwrap() - 0.33774513108142956).abs() < 1e-7);

        assert!(g.bce_with_logits(z, &[]).is_err());
    }

    #[test]
    fn bce_gradient_matches_finite_differences_tightly() {
        let logits = [0.7, -1.3, 2.1];
        let labels = [1u8, 0, 1];
        let mut g = Graph::<f64>::new();
        let p = Parameter::new("z", Tensor::new(vec![3], logits.to_vec()).unwrap());
        let v = g.param(&p).unwrap();
        let loss = bce_loss(&mut g, v, &labels).unwrap();
        g.backward(loss).unwrap();
        let grads = g.take_param_grads();
        let analytic = &grads["z"];
        let f = |z: &[f64]| bce_value(z, &labels);
        for i in 0..3 {
            let mut zp = logits.to_vec();
            zp[i] += 1e-6;
            let up = f(&zp);
            zp[i] = logits[i] - 1e-6;
            let down = f(&zp);
            let numeric = (up - down) / 2e-6;
            assert!((analytic[i] - numeric).abs() < 1e-6, "{} vs {numeric}", analytic[i]);
        }
    }

    fn one_param(value: Vec<f64>) -> (Vec<Parameter<f64>>, TrainConfig) {
        let p = Parameter::new("p", Tensor::new(vec![value.len()], value).unwrap());
        (vec![p], TrainConfig { weight_decay: 0.0, ..TrainConfig::default() })
    }

    #[test]
    fn adamw_zero_grad_is_a_fixed_point() {
        let (mut params, cfg) = one_param(vec![1.0, -2.0]);
        let mut adam = AdamW::new(&params.iter().collect::<Vec<_>>(), &cfg);
        let mut refs: Vec<&mut Parameter<f64>> = params.iter_mut().collect();
        adam.step(&mut refs, 0.1).unwrap();
        assert_eq!(refs[0].value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adamw_first_step_is_a_bias_corrected_unit_step() {
        // g=1, p=0, wd=0, lr=0.1: p becomes -lr * 1/(1 + eps') ~ -0.1.
        let (mut params, cfg) = one_param(vec![0.0]);
        params[0].accumulate_grad(&[1.0]);
        let mut adam = AdamW::new(&params.iter().collect::<Vec<_>>(), &cfg);
        let mut refs: Vec<&mut Parameter<f64>> = params.iter_mut().collect();
        adam.step(&mut refs, 0.1).unwrap();
        let got = refs[0].value.data()[0];
        assert!((got - (-0.09999999900000002)).abs() < 1e-15, "{got}");
    }

    #[test]
    fn adamw_pure_decay() {
        // wd=0.05, g=0, lr=0.1, p=1 -> 1 - 0.1*0.05 = 0.995. The parameter
        // must be rank >= 2 to receive decay.
        let p = Parameter::new("w", Tensor::new(vec![1, 1], vec![1.0f64]).unwrap());
        let mut params = vec![p];
        let cfg = TrainConfig { weight_decay: 0.05, ..TrainConfig::default() };
        let mut adam = AdamW::new(&params.iter().collect::<Vec<_>>(), &cfg);
        let mut refs: Vec<&mut Parameter<f64>> = params.iter_mut().collect();
        adam.step(&mut refs, 0.1).unwrap();
        assert!((refs[0].value.data()[0] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn adamw_moves_opposite_gradient_sign() {
        // Fresh state, wd=0: sign(update) == -sign(g) for every element.
        let (mut params, cfg) = one_param(vec![0.5, -0.25, 2.0]);
        params[0].accumulate_grad(&[0.3, -0.7, 0.001]);
        let before = params[0].value.data().to_vec();
        let grads = params[0].grad.data().to_vec();
        let mut adam = AdamW::new(&params.iter().collect::<Vec<_>>(), &cfg);
        let mut refs: Vec<&mut Parameter<f64>> = params.iter_mut().collect();
        adam.step(&mut refs, 0.01).unwrap();
        for ((b, a), g) in before.iter().zip(refs[0].value.data()).zip(&grads) {
            assert!((a - b).signum() == -g.signum());
        }
    }

    #[test]
    fn adamw_beta2_zero_degenerates_to_sign_steps() {
        // beta2 = 0 keeps v = g^2 at every step, so each update is close to
        // -lr * sign(g) once warm; the sign property holds at every step.
        let (mut params, mut cfg) = one_param(vec![0.0, 0.0]);
        cfg.beta2 = 0.0;
        let mut adam = AdamW::new(&params.iter().collect::<Vec<_>>(), &cfg);
        for _ in 0..5 {
            params[0].zero_grad();
            params[0].accumulate_grad(&[2.0, -0.5]);
            let before = params[0].value.data().to_vec();
            let mut refs: Vec<&mut Parameter<f64>> = params.iter_mut().collect();
            adam.step(&mut refs, 0.01).unwrap();
            let after = refs[0].value.data().to_vec();
            assert!(after[0] < before[0] && after[1] > before[1]);
        }
    }

    #[test]
    fn cosine_schedule_shape() {
        let (lr, min_lr) = (3e-4, 1e-6);
        let (total, warmup) = (200, 20);
        assert_eq!(cosine_lr(0, total, warmup, lr, min_lr), 0.0);
        assert_eq!(cosine_lr(warmup, total, warmup, lr, min_lr), lr);
        let last = cosine_lr(total - 1, total, warmup, lr, min_lr);
        assert!((last - min_lr).abs() < 1e-18, "{last}");

        let values: Vec<f64> =
            (0..total).map(|s| cosine_lr(s, total, warmup, lr, min_lr)).collect();
        for w in values[..warmup + 1].windows(2) {
            assert!(w[1] >= w[0], "warmup must be non-decreasing");
        }
        for w in values[warmup..].windows(2) {
            assert!(w[1] <= w[0] + 1e-18, "post-warmup must be non-increasing");
        }
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0); // warmup start
        let min_after = values[warmup..].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min_after - min_lr).abs() < 1e-18);
    }

    #[test]
    fn clip_examples() {
        // Norm 0.5: untouched.
        let mut p = vec![Parameter::new("a", Tensor::new(vec![2], vec![0.3, 0.4]).unwrap())];
        p[0].accumulate_grad(&[0.3, 0.4]);
        let mut refs: Vec<&mut Parameter<f64>> = p.iter_mut().collect();
        let norm = clip_grad_norm(&mut refs, 1.0);
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(refs[0].grad.data(), &[0.3, 0.4]);

        // [3,4] has norm 5: scaled to [0.6, 0.8].
        let mut p = vec![Parameter::new("a", Tensor::<f64>::zeros(&[2]))];
        p[0].accumulate_grad(&[3.0, 4.0]);
        let mut refs: Vec<&mut Parameter<f64>> = p.iter_mut().collect();
        let norm = clip_grad_norm(&mut refs, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        for (g, want) in refs[0].grad.data().iter().zip(&[0.6, 0.8]) {
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_many_tensors_matches_flatten_oracle() {
        let mut params = vec![
            Parameter::new("a", Tensor::<f64>::zeros(&[3])),
            Parameter::new("b", Tensor::<f64>::zeros(&[2, 2])),
            Parameter::new("c", Tensor::<f64>::zeros(&[1])),
        ];
        let grads: Vec<Vec<f64>> =
            vec![vec![1.0, -2.0, 0.5], vec![3.0, -1.0, 0.25, 2.0], vec![-4.0]];
        for (p, g) in params.iter_mut().zip(&grads) {
            p.accumulate_grad(g);
        }
        let flat: Vec<f64> = grads.iter().flatten().copied().collect();
        let norm: f64 = flat.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = 1.0 / norm;
        let mut refs: Vec<&mut Parameter<f64>> = params.iter_mut().collect();
        let observed = clip_grad_norm(&mut refs, 1.0);
        assert!((observed - norm).abs() < 1e-12);
        let mut k = 0;
        for p in refs.iter() {
            for &g in p.grad.data() {
                assert!((g - flat[k] * scale).abs() < 1e-6);
                k += 1;
            }
        }
        // Clipping never increases a gradient's magnitude.
        for (p, orig) in refs.iter().zip(&grads) {
            for (&g, &o) in p.grad.data().iter().zip(orig) {
                assert!(g.abs() <= o.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.min_lr = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { warmup_epochs: 5, epochs: 5, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { seeds: vec![], ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
