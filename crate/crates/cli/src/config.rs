//! Run configuration: a JSON document is the source of truth; every leaf is
//! also exposed as a CLI flag that overrides the corresponding key.

use anyhow::{bail, Context, Result};
use easwin_core::data::SyntheticSpec;
use easwin_core::model::{HeadConfig, HeadKind, PoolMode};
use easwin_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Synthetic generation spec (full form).
    pub synthetic: Option<SyntheticSpec>,
    /// Named preset: default | null | heldout.
    pub preset: Option<String>,
    /// Manifest of embedding files to ingest instead of generating.
    pub manifest: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: HeadConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out_dir: Option<String>,
}

/// Every flag is a strict projection of one RunConfig key; unset flags leave
/// the JSON (or default) value in place.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON run configuration; flags below override individual keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (model.out_dir).
    #[arg(long, alias = "out_dir", global = true)]
    pub out_dir: Option<String>,

    // model.*
    /// Input embedding dimension (model.d_in).
    #[arg(long, alias = "d_in", global = true)]
    pub d_in: Option<usize>,
    /// Hidden dimension (model.d_model).
    #[arg(long, alias = "d_model", global = true)]
    pub d_model: Option<usize>,
    /// Attention heads (model.heads).
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    /// Temporal window size (model.w_t).
    #[arg(long, alias = "w_t", global = true)]
    pub w_t: Option<usize>,
    /// Spatial window size (model.w_s).
    #[arg(long, alias = "w_s", global = true)]
    pub w_s: Option<usize>,
    /// Temporal block count (model.depth_t).
    #[arg(long, alias = "depth_t", global = true)]
    pub depth_t: Option<usize>,
    /// Spatial block count (model.depth_s).
    #[arg(long, alias = "depth_s", global = true)]
    pub depth_s: Option<usize>,
    /// Tubelet size tau (model.tubelet).
    #[arg(long, global = true)]
    pub tubelet: Option<usize>,
    /// Pooling mode: mean | attention (model.pool).
    #[arg(long, global = true)]
    pub pool: Option<String>,
    /// Head kind: swin | mlp_baseline (model.head_kind).
    #[arg(long, alias = "head_kind", global = true)]
    pub head_kind: Option<String>,
    /// Enable shifted windows (model.use_shift).
    #[arg(long, alias = "use_shift", global = true)]
    pub use_shift: Option<bool>,
    /// Use joint attention over all T*S tokens (model.joint_attention).
    #[arg(long, alias = "joint_attention", global = true)]
    pub joint_attention: Option<bool>,
    /// Frames per video (model.frames).
    #[arg(long, global = true)]
    pub frames: Option<usize>,

    // train.*
    /// Peak learning rate (train.lr).
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Decoupled weight decay (train.weight_decay).
    #[arg(long, alias = "weight_decay", global = true)]
    pub weight_decay: Option<f64>,
    /// Warmup epochs (train.warmup_epochs).
    #[arg(long, alias = "warmup_epochs", global = true)]
    pub warmup_epochs: Option<usize>,
    /// Final learning rate (train.min_lr).
    #[arg(long, alias = "min_lr", global = true)]
    pub min_lr: Option<f64>,
    /// Gradient clipping norm (train.max_grad_norm).
    #[arg(long, alias = "max_grad_norm", global = true)]
    pub max_grad_norm: Option<f64>,
    /// Training epochs (train.epochs).
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Batch size (train.batch_size).
    #[arg(long, alias = "batch_size", global = true)]
    pub batch_size: Option<usize>,
    /// Comma-separated seeds (train.seeds).
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Adam beta1 (train.beta1).
    #[arg(long, global = true)]
    pub beta1: Option<f64>,
    /// Adam beta2 (train.beta2).
    #[arg(long, global = true)]
    pub beta2: Option<f64>,
    /// Adam epsilon (train.eps).
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Apply weight decay to all parameters (train.decay_all).
    #[arg(long, alias = "decay_all", global = true)]
    pub decay_all: Option<bool>,

    // data.*
    /// Synthetic preset: default | null | heldout (data.preset).
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Embedding-file manifest path (data.manifest).
    #[arg(long, global = true)]
    pub manifest: Option<String>,
    /// Synthetic: videos per class in train (data.synthetic.n_train).
    #[arg(long, alias = "n_train", global = true)]
    pub n_train: Option<usize>,
    /// Synthetic: videos per class in val (data.synthetic.n_val).
    #[arg(long, alias = "n_val", global = true)]
    pub n_val: Option<usize>,
    /// Synthetic: videos per class in test (data.synthetic.n_test).
    #[arg(long, alias = "n_test", global = true)]
    pub n_test: Option<usize>,
    /// Synthetic: frames per video (data.synthetic.t).
    #[arg(long, global = true)]
    pub t: Option<usize>,
    /// Synthetic: spatial tokens per frame (data.synthetic.s).
    #[arg(long, global = true)]
    pub s: Option<usize>,
    /// Synthetic: real-class innovation sigma (data.synthetic.sigma_real).
    #[arg(long, alias = "sigma_real", global = true)]
    pub sigma_real: Option<f64>,
    /// Synthetic: real-class AR(1) coefficient (data.synthetic.rho_real).
    #[arg(long, alias = "rho_real", global = true)]
    pub rho_real: Option<f64>,
    /// Synthetic: fake-class innovation sigma (data.synthetic.sigma_fake).
    #[arg(long, alias = "sigma_fake", global = true)]
    pub sigma_fake: Option<f64>,
    /// Synthetic: fake-class AR(1) coefficient (data.synthetic.rho_fake).
    #[arg(long, alias = "rho_fake", global = true)]
    pub rho_fake: Option<f64>,
    /// Synthetic: periodic artifact amplitude (data.synthetic.artifact_amp).
    #[arg(long, alias = "artifact_amp", global = true)]
    pub artifact_amp: Option<f64>,
    /// Synthetic: artifact period in frames (data.synthetic.artifact_period).
    #[arg(long, alias = "artifact_period", global = true)]
    pub artifact_period: Option<usize>,
    /// Synthetic: master data seed (data.synthetic.seed).
    #[arg(long, alias = "data_seed", global = true)]
    pub data_seed: Option<u64>,
}

impl Overrides {
    /// Load the JSON config (or defaults) and apply every set flag.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };

        macro_rules! set {
            ($flag:expr, $slot:expr) => {
                if let Some(v) = &$flag {
                    $slot = v.clone();
                }
            };
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = Some(v.clone());
        }
        set!(self.d_in, cfg.model.d_in);
        set!(self.d_model, cfg.model.d_model);
        set!(self.heads, cfg.model.heads);
        set!(self.w_t, cfg.model.w_t);
        set!(self.w_s, cfg.model.w_s);
        set!(self.depth_t, cfg.model.depth_t);
        set!(self.depth_s, cfg.model.depth_s);
        set!(self.tubelet, cfg.model.tubelet);
        if let Some(p) = &self.pool {
            cfg.model.pool = match p.as_str() {
                "mean" => PoolMode::Mean,
                "attention" => PoolMode::Attention,
                other => bail!("invalid config: unknown pool mode '{other}'"),
            };
        }
        if let Some(k) = &self.head_kind {
            cfg.model.head_kind = match k.as_str() {
                "swin" => HeadKind::Swin,
                "mlp_baseline" => HeadKind::MlpBaseline,
                other => bail!("invalid config: unknown head kind '{other}'"),
            };
        }
        set!(self.use_shift, cfg.model.use_shift);
        set!(self.joint_attention, cfg.model.joint_attention);
        set!(self.frames, cfg.model.frames);

        set!(self.lr, cfg.train.lr);
        set!(self.weight_decay, cfg.train.weight_decay);
        set!(self.warmup_epochs, cfg.train.warmup_epochs);
        set!(self.min_lr, cfg.train.min_lr);
        set!(self.max_grad_norm, cfg.train.max_grad_norm);
        set!(self.epochs, cfg.train.epochs);
        set!(self.batch_size, cfg.train.batch_size);
        set!(self.seeds, cfg.train.seeds);
        set!(self.beta1, cfg.train.beta1);
        set!(self.beta2, cfg.train.beta2);
        set!(self.eps, cfg.train.eps);
        set!(self.decay_all, cfg.train.decay_all);

        if let Some(v) = &self.preset {
            cfg.data.preset = Some(v.clone());
        }
        if let Some(v) = &self.manifest {
            cfg.data.manifest = Some(v.clone());
        }
        let any_synth_flag = self.n_train.is_some()
            || self.n_val.is_some()
            || self.n_test.is_some()
            || self.t.is_some()
            || self.s.is_some()
            || self.sigma_real.is_some()
            || self.rho_real.is_some()
            || self.sigma_fake.is_some()
            || self.rho_fake.is_some()
            || self.artifact_amp.is_some()
            || self.artifact_period.is_some()
            || self.data_seed.is_some();
        if any_synth_flag || cfg.data.synthetic.is_some() || cfg.data.preset.is_some() {
            let base = match (&cfg.data.synthetic, &cfg.data.preset) {
                (Some(spec), _) => spec.clone(),
                (None, Some(name)) => SyntheticSpec::preset(name)
                    .map_err(|e| anyhow::anyhow!(e.to_string()))?,
                (None, None) => SyntheticSpec::default_artifact(),
            };
            let mut spec = base;
            set!(self.n_train, spec.n_train);
            set!(self.n_val, spec.n_val);
            set!(self.n_test, spec.n_test);
            set!(self.t, spec.t);
            set!(self.s, spec.s);
            set!(self.d_in, spec.d_in);
            set!(self.sigma_real, spec.sigma_real);
            set!(self.rho_real, spec.rho_real);
            set!(self.sigma_fake, spec.sigma_fake);
            set!(self.rho_fake, spec.rho_fake);
            set!(self.artifact_amp, spec.artifact_amp);
            set!(self.artifact_period, spec.artifact_period);
            set!(self.data_seed, spec.seed);
            cfg.data.synthetic = Some(spec);
        }
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .map(Path::new)
            .ok_or_else(|| anyhow::anyhow!("invalid config: out_dir is required for this command"))
    }

    /// Keep the model's input width consistent with synthetic data.
    pub fn reconcile(&mut self) {
        if let Some(spec) = &self.data.synthetic {
            self.model.d_in = spec.d_in;
            self.model.frames = spec.t;
        }
    }
}
