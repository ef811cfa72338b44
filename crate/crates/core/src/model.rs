//! The full detection head: tubelet projection, temporal then spatial Swin
//! blocks (pre-norm residual transformer structure), token pooling, and the
//! logit classifier — with every ablation variant reachable by configuration.

use crate::attention::{
    joint_attention_layer, spatial_swin_layer, temporal_swin_layer, AttnParams, RelPosBias1D,
    RelPosBias2D, SpatialTrace,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const LN_EPS: f64 = 1e-5;

/// Token aggregation mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Mean,
    Attention,
}

/// Which head sits on top of the projected embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Swin,
    MlpBaseline,
}

/// Architectural hyperparameters; one config reproduces one model variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub heads: usize,
    pub w_t: usize,
    pub w_s: usize,
    pub depth_t: usize,
    pub depth_s: usize,
    pub tubelet: usize,
    pub pool: PoolMode,
    pub head_kind: HeadKind,
    pub use_shift: bool,
    pub joint_attention: bool,
    pub frames: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            d_in: 64,
            d_model: 512,
            heads: 8,
            w_t: 4,
            w_s: 4,
            depth_t: 2,
            depth_s: 2,
            tubelet: 1,
            pool: PoolMode::Attention,
            head_kind: HeadKind::Swin,
            use_shift: true,
            joint_attention: false,
            frames: 16,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model < 2 {
            return Err(Error::config("d_model must be >= 2".to_string()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.w_t == 0 || self.w_s == 0 {
            return Err(Error::config("window sizes must be >= 1".to_string()));
        }
        if self.tubelet == 0 {
            return Err(Error::config("tubelet size must be >= 1".to_string()));
        }
        if self.frames == 0 || self.frames % self.tubelet != 0 {
            return Err(Error::config(format!(
                "tubelet {} must divide frames {}",
                self.tubelet, self.frames
            )));
        }
        if self.d_in == 0 {
            return Err(Error::config("d_in must be >= 1".to_string()));
        }
        Ok(())
    }

    /// The four architecture ablations: 1 disables shifted windows, 2 swaps
    /// in joint attention, 3 swaps in mean pooling, 4 replaces the head with
    /// the MLP baseline.
    pub fn ablation(&self, which: usize) -> Result<HeadConfig> {
        let mut cfg = self.clone();
        match which {
            1 => cfg.use_shift = false,
            2 => cfg.joint_attention = true,
            3 => cfg.pool = PoolMode::Mean,
            4 => cfg.head_kind = HeadKind::MlpBaseline,
            other => return Err(Error::config(format!("unknown ablation {other}"))),
        }
        Ok(cfg)
    }
}

/// The model's sole input: a 4D embedding tensor plus per-video valid frame
/// counts and optional labels (0 real, 1 AI-generated).
#[derive(Clone, Debug)]
pub struct EmbeddingBatch<T> {
    pub z: Tensor<T>,
    pub valid_t: Vec<usize>,
    pub labels: Option<Vec<u8>>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(z: Tensor<T>, valid_t: Vec<usize>, labels: Option<Vec<u8>>) -> Result<Self> {
        if z.rank() != 4 {
            return Err(Error::dim(format!(
                "embedding batch must be (B, T, S, D_in), got {:?}",
                z.shape()
            )));
        }
        let (b, t) = (z.shape()[0], z.shape()[1]);
        if valid_t.len() != b {
            return Err(Error::contract(format!(
                "valid_t has {} entries for batch of {b}",
                valid_t.len()
            )));
        }
        if valid_t.iter().any(|&v| v == 0 || v > t) {
            return Err(Error::contract(format!("valid_t entries must be in 1..={t}")));
        }
        if let Some(labels) = &labels {
            if labels.len() != b {
                return Err(Error::contract(format!(
                    "labels has {} entries for batch of {b}",
                    labels.len()
                )));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::contract("labels must be 0 or 1".to_string()));
            }
        }
        if let Some(idx) = z.first_non_finite() {
            return Err(Error::data(format!(
                "embedding batch contains a non-finite value at flat index {idx}"
            )));
        }
        Ok(EmbeddingBatch { z, valid_t, labels })
    }

    pub fn batch_size(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn spatial(&self) -> usize {
        self.z.shape()[2]
    }

    pub fn d_in(&self) -> usize {
        self.z.shape()[3]
    }
}

/// Positional-bias parameters owned by one block.
#[derive(Clone, Debug)]
pub enum BlockBias<T> {
    Temporal(RelPosBias1D<T>),
    Spatial { two_d: RelPosBias2D<T>, fallback: RelPosBias1D<T> },
    /// Joint-attention blocks carry no positional bias.
    None,
}

/// One pre-norm transformer block: attention and MLP, each behind layer norm
/// and a residual connection.
#[derive(Clone, Debug)]
pub struct SwinBlock<T> {
    pub ln1_gamma: Parameter<T>,
    pub ln1_beta: Parameter<T>,
    pub attn: AttnParams<T>,
    pub bias: BlockBias<T>,
    pub ln2_gamma: Parameter<T>,
    pub ln2_beta: Parameter<T>,
    pub mlp_w1: Parameter<T>,
    pub mlp_b1: Parameter<T>,
    pub mlp_w2: Parameter<T>,
    pub mlp_b2: Parameter<T>,
}

impl<T: Scalar> SwinBlock<T> {
    fn new(prefix: &str, cfg: &HeadConfig, bias: BlockBias<T>, rng: &mut StdRng) -> Result<Self> {
        let d = cfg.d_model;
        let hidden = 4 * d;
        let attn = AttnParams::new(&format!("{prefix}.attn"), d, cfg.heads, rng)?;
        let bound_in = 1.0 / (d as f64).sqrt();
        let bound_hidden = 1.0 / (hidden as f64).sqrt();
        Ok(SwinBlock {
            ln1_gamma: Parameter::new(format!("{prefix}.ln1.gamma"), Tensor::full(&[d], T::one())),
            ln1_beta: Parameter::new(format!("{prefix}.ln1.beta"), Tensor::zeros(&[d])),
            attn,
            bias,
            ln2_gamma: Parameter::new(format!("{prefix}.ln2.gamma"), Tensor::full(&[d], T::one())),
            ln2_beta: Parameter::new(format!("{prefix}.ln2.beta"), Tensor::zeros(&[d])),
            mlp_w1: Parameter::new(
                format!("{prefix}.mlp.w1"),
                Tensor::uniform(&[d, hidden], bound_in, rng),
            ),
            mlp_b1: Parameter::new(format!("{prefix}.mlp.b1"), Tensor::zeros(&[hidden])),
            mlp_w2: Parameter::new(
                format!("{prefix}.mlp.w2"),
                Tensor::uniform(&[hidden, d], bound_hidden, rng),
            ),
            mlp_b2: Parameter::new(format!("{prefix}.mlp.b2"), Tensor::zeros(&[d])),
        })
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = vec![&self.ln1_gamma, &self.ln1_beta];
        out.extend([&self.attn.w_q, &self.attn.w_k, &self.attn.w_v, &self.attn.w_o]);
        match &self.bias {
            BlockBias::Temporal(b) => out.push(&b.table),
            BlockBias::Spatial { two_d, fallback } => {
                out.push(&two_d.table);
                out.push(&fallback.table);
            }
            BlockBias::None => {}
        }
        out.extend([
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
        ]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = vec![&mut self.ln1_gamma, &mut self.ln1_beta];
        out.push(&mut self.attn.w_q);
        out.push(&mut self.attn.w_k);
        out.push(&mut self.attn.w_v);
        out.push(&mut self.attn.w_o);
        match &mut self.bias {
            BlockBias::Temporal(b) => out.push(&mut b.table),
            BlockBias::Spatial { two_d, fallback } => {
                out.push(&mut two_d.table);
                out.push(&mut fallback.table);
            }
            BlockBias::None => {}
        }
        out.push(&mut self.ln2_gamma);
        out.push(&mut self.ln2_beta);
        out.push(&mut self.mlp_w1);
        out.push(&mut self.mlp_b1);
        out.push(&mut self.mlp_w2);
        out.push(&mut self.mlp_b2);
        out
    }
}

/// Which axis a block attends along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockAxis {
    Temporal,
    Spatial,
    Joint,
}

/// Metadata recorded by one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardInfo {
    pub spatial_fallback_1d: bool,
}

/// Validity handed to a block: per-sequence frame counts for temporal
/// attention, or per-token flags for joint attention.
#[derive(Clone, Copy, Debug)]
pub enum BlockValidity<'a> {
    FrameCounts(&'a [usize]),
    TokenFlags(&'a [bool]),
    All,
}

/// Classifier and pooling parameters.
#[derive(Clone, Debug)]
pub struct PoolHead<T> {
    pub query: Option<Parameter<T>>,
    pub w1: Parameter<T>,
    pub b1: Parameter<T>,
    pub w2: Parameter<T>,
    pub b2: Parameter<T>,
}

/// The assembled detection head.
#[derive(Clone, Debug)]
pub struct EaSwin<T> {
    pub cfg: HeadConfig,
    pub proj_weight: Parameter<T>,
    pub proj_bias: Parameter<T>,
    pub temporal: Vec<SwinBlock<T>>,
    pub spatial: Vec<SwinBlock<T>>,
    pub joint: Vec<SwinBlock<T>>,
    pub pool: Option<PoolHead<T>>,
    /// MLP-baseline head: two-layer map D -> D -> 1 over the pooled vector.
    pub baseline: Option<(Parameter<T>, Parameter<T>, Parameter<T>, Parameter<T>)>,
}

impl<T: Scalar> EaSwin<T> {
    pub fn new(cfg: HeadConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = StdRng::seed_from_u64(seed);
        let d = cfg.d_model;
        let fan_in = cfg.tubelet * cfg.d_in;
        let proj_weight = Parameter::new(
            "proj.weight",
            Tensor::uniform(&[fan_in, d], 1.0 / (fan_in as f64).sqrt(), &mut rng),
        );
        let proj_bias = Parameter::new("proj.bias", Tensor::zeros(&[d]));

        let mut temporal = Vec::new();
        let mut spatial = Vec::new();
        let mut joint = Vec::new();
        let mut pool = None;
        let mut baseline = None;

        match cfg.head_kind {
            HeadKind::MlpBaseline => {
                let bound = 1.0 / (d as f64).sqrt();
                baseline = Some((
                    Parameter::new("baseline.w1", Tensor::uniform(&[d, d], bound, &mut rng)),
                    Parameter::new("baseline.b1", Tensor::zeros(&[d])),
                    Parameter::new("baseline.w2", Tensor::uniform(&[d, 1], bound, &mut rng)),
                    Parameter::new("baseline.b2", Tensor::zeros(&[1])),
                ));
            }
            HeadKind::Swin => {
                if cfg.joint_attention {
                    for i in 0..cfg.depth_t + cfg.depth_s {
                        let prefix = format!("blocks.j{i}");
                        joint.push(SwinBlock::new(&prefix, &cfg, BlockBias::None, &mut rng)?);
                    }
                } else {
                    for i in 0..cfg.depth_t {
                        let prefix = format!("blocks.t{i}");
                        let bias = BlockBias::Temporal(RelPosBias1D::new(
                            format!("{prefix}.attn.bias_table"),
                            cfg.w_t,
                            cfg.heads,
                        ));
                        temporal.push(SwinBlock::new(&prefix, &cfg, bias, &mut rng)?);
                    }
                    for i in 0..cfg.depth_s {
                        let prefix = format!("blocks.s{i}");
                        let bias = BlockBias::Spatial {
                            two_d: RelPosBias2D::new(
                                format!("{prefix}.attn.bias_table"),
                                cfg.w_s,
                                cfg.heads,
                            ),
                            fallback: RelPosBias1D::new(
                                format!("{prefix}.attn.bias_table_1d"),
                                cfg.w_s,
                                cfg.heads,
                            ),
                        };
                        spatial.push(SwinBlock::new(&prefix, &cfg, bias, &mut rng)?);
                    }
                }
                let half = (d / 2).max(1);
                let query = match cfg.pool {
                    PoolMode::Attention => Some(Parameter::new("pool.query", Tensor::zeros(&[d]))),
                    PoolMode::Mean => None,
                };
                pool = Some(PoolHead {
                    query,
                    w1: Parameter::new(
                        "cls.w1",
                        Tensor::uniform(&[d, half], 1.0 / (d as f64).sqrt(), &mut rng),
                    ),
                    b1: Parameter::new("cls.b1", Tensor::zeros(&[half])),
                    w2: Parameter::new(
                        "cls.w2",
                        Tensor::uniform(&[half, 1], 1.0 / (half as f64).sqrt(), &mut rng),
                    ),
                    b2: Parameter::new("cls.b2", Tensor::zeros(&[1])),
                });
            }
        }

        Ok(EaSwin { cfg, proj_weight, proj_bias, temporal, spatial, joint, pool, baseline })
    }

    /// All parameters in a stable order. Names are unique.
    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut out = vec![&self.proj_weight, &self.proj_bias];
        for b in self.temporal.iter().chain(&self.spatial).chain(&self.joint) {
            out.extend(b.params());
        }
        if let Some(p) = &self.pool {
            if let Some(q) = &p.query {
                out.push(q);
            }
            out.extend([&p.w1, &p.b1, &p.w2, &p.b2]);
        }
        if let Some((w1, b1, w2, b2)) = &self.baseline {
            out.extend([w1, b1, w2, b2]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = vec![&mut self.proj_weight, &mut self.proj_bias];
        for b in self
            .temporal
            .iter_mut()
            .chain(self.spatial.iter_mut())
            .chain(self.joint.iter_mut())
        {
            out.extend(b.params_mut());
        }
        if let Some(p) = &mut self.pool {
            if let Some(q) = &mut p.query {
                out.push(q);
            }
            out.push(&mut p.w1);
            out.push(&mut p.b1);
            out.push(&mut p.w2);
            out.push(&mut p.b2);
        }
        if let Some((w1, b1, w2, b2)) = &mut self.baseline {
            out.push(w1);
            out.push(b1);
            out.push(w2);
            out.push(b2);
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Accumulate gradients harvested from a graph into the parameters.
    pub fn apply_grads(&mut self, grads: &HashMap<String, Vec<T>>) {
        for p in self.params_mut() {
            if let Some(g) = grads.get(&p.name) {
                p.accumulate_grad(g);
            }
        }
    }

    /// Copy of all parameter values, for in-memory checkpoints.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Tensor<T>]) {
        for (p, s) in self.params_mut().into_iter().zip(snap) {
            p.value = s.clone();
        }
    }

    /// Tubelet grouping and the learned input projection:
    /// `(B, T, S, D_in) -> (B, T/tau, S, D)`.
    pub fn project_input(&self, g: &mut Graph<T>, batch: &EmbeddingBatch<T>) -> Result<Var> {
        let (b, t, s, d_in) =
            (batch.batch_size(), batch.frames(), batch.spatial(), batch.d_in());
        if d_in != self.cfg.d_in {
            return Err(Error::config(format!(
                "batch D_in {d_in} != configured d_in {}",
                self.cfg.d_in
            )));
        }
        let tau = self.cfg.tubelet;
        if t % tau != 0 {
            return Err(Error::config(format!("tubelet {tau} does not divide T {t}")));
        }
        g.set_scope("project");
        let z = g.leaf(batch.z.clone())?;
        let tp = t / tau;
        // Group frames into tubelets by feature concatenation.
        let grouped = g.reshape(z, &[b, tp, tau, s, d_in])?;
        let swapped = g.permute(grouped, &[0, 1, 3, 2, 4])?;
        let flat = g.reshape(swapped, &[b, tp, s, tau * d_in])?;
        let w = g.param(&self.proj_weight)?;
        let bias = g.param(&self.proj_bias)?;
        let projected = g.matmul(flat, w)?;
        g.add(projected, bias)
    }

    /// Valid tubelet count per video: a tubelet is valid when it contains at
    /// least one valid frame.
    fn valid_tubelets(&self, batch: &EmbeddingBatch<T>) -> Vec<usize> {
        batch.valid_t.iter().map(|&v| v.div_ceil(self.cfg.tubelet)).collect()
    }

    /// Full pipeline to per-video logits `(B,)`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        batch: &EmbeddingBatch<T>,
    ) -> Result<(Var, ForwardInfo)> {
        let mut info = ForwardInfo::default();
        let b = batch.batch_size();
        let s = batch.spatial();
        let projected = self.project_input(g, batch)?;
        let tp = g.shape(projected)[1];
        let d = self.cfg.d_model;
        let valid_tub = self.valid_tubelets(batch);
        let m = tp * s;
        let token_valid: Vec<bool> = (0..b * m)
            .map(|i| {
                let (bi, tok) = (i / m, i % m);
                tok / s < valid_tub[bi]
            })
            .collect();

        let tokens = match (self.cfg.head_kind, self.cfg.joint_attention) {
            (HeadKind::MlpBaseline, _) => g.reshape(projected, &[b, m, d])?,
            (HeadKind::Swin, true) => {
                let mut x = g.reshape(projected, &[b, m, d])?;
                for (i, block) in self.joint.iter().enumerate() {
                    g.set_scope(&format!("blocks.j{i}"));
                    let shifted = self.cfg.use_shift && i % 2 == 1;
                    x = swin_block(
                        g,
                        x,
                        block,
                        BlockAxis::Joint,
                        shifted,
                        BlockValidity::TokenFlags(&token_valid),
                        &mut info,
                    )?;
                }
                x
            }
            (HeadKind::Swin, false) => {
                // Temporal stage on (B*S, T', D).
                let per_seq_valid: Vec<usize> = (0..b * s).map(|i| valid_tub[i / s]).collect();
                let bt = g.permute(projected, &[0, 2, 1, 3])?; // (B, S, T', D)
                let mut x = g.reshape(bt, &[b * s, tp, d])?;
                for (i, block) in self.temporal.iter().enumerate() {
                    g.set_scope(&format!("blocks.t{i}"));
                    let shifted = self.cfg.use_shift && i % 2 == 1;
                    x = swin_block(
                        g,
                        x,
                        block,
                        BlockAxis::Temporal,
                        shifted,
                        BlockValidity::FrameCounts(&per_seq_valid),
                        &mut info,
                    )?;
                }
                let unflat = g.reshape(x, &[b, s, tp, d])?;
                let back = g.permute(unflat, &[0, 2, 1, 3])?; // (B, T', S, D)

                // Spatial stage on (B*T', S, D).
                let mut x = g.reshape(back, &[b * tp, s, d])?;
                for (i, block) in self.spatial.iter().enumerate() {
                    g.set_scope(&format!("blocks.s{i}"));
                    let shifted = self.cfg.use_shift && i % 2 == 1;
                    x = swin_block(
                        g,
                        x,
                        block,
                        BlockAxis::Spatial,
                        shifted,
                        BlockValidity::All,
                        &mut info,
                    )?;
                }
                g.reshape(x, &[b, m, d])?
            }
        };

        let logits = match self.cfg.head_kind {
            HeadKind::MlpBaseline => {
                g.set_scope("pool");
                let (w1, b1, w2, b2) = self.baseline.as_ref().expect("baseline params");
                let pooled = masked_mean(g, tokens, &token_valid, b, m, d)?;
                g.set_scope("baseline");
                mlp_head(g, pooled, w1, b1, w2, b2)?
            }
            HeadKind::Swin => {
                g.set_scope("pool");
                let pool = self.pool.as_ref().expect("pool head");
                let pooled = pool_tokens(
                    g,
                    tokens,
                    &token_valid,
                    b,
                    m,
                    d,
                    self.cfg.pool,
                    pool.query.as_ref(),
                )?;
                g.set_scope("classifier");
                mlp_head(g, pooled, &pool.w1, &pool.b1, &pool.w2, &pool.b2)?
            }
        };
        let flat = g.reshape(logits, &[b])?;
        Ok((flat, info))
    }

    /// Forward pass returning plain logits, for evaluation.
    pub fn forward_logits(&self, batch: &EmbeddingBatch<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let (v, _) = self.forward(&mut g, batch)?;
        Ok(g.value(v).clone())
    }
}

fn mlp_head<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w1: &Parameter<T>,
    b1: &Parameter<T>,
    w2: &Parameter<T>,
    b2: &Parameter<T>,
) -> Result<Var> {
    let vw1 = g.param(w1)?;
    let vb1 = g.param(b1)?;
    let vw2 = g.param(w2)?;
    let vb2 = g.param(b2)?;
    let h = g.matmul(x, vw1)?;
    let h = g.add(h, vb1)?;
    let h = g.gelu(h)?;
    let o = g.matmul(h, vw2)?;
    g.add(o, vb2)
}

/// Pre-norm block exactly as composed in the stack:
/// `y = x + MSA(LN(x)); z = y + MLP(LN(y))`, with the attention flavor
/// chosen by `axis`.
pub fn swin_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    block: &SwinBlock<T>,
    axis: BlockAxis,
    shifted: bool,
    valid: BlockValidity<'_>,
    info: &mut ForwardInfo,
) -> Result<Var> {
    let ln1g = g.param(&block.ln1_gamma)?;
    let ln1b = g.param(&block.ln1_beta)?;
    let normed = g.layer_norm(x, ln1g, ln1b, LN_EPS)?;
    let msa = match (axis, &block.bias) {
        (BlockAxis::Temporal, BlockBias::Temporal(bias)) => {
            let counts = match valid {
                BlockValidity::FrameCounts(c) => Some(c),
                BlockValidity::All => None,
                BlockValidity::TokenFlags(_) => {
                    return Err(Error::contract(
                        "temporal blocks take frame counts, not token flags".to_string(),
                    ))
                }
            };
            temporal_swin_layer(g, normed, &block.attn, bias, shifted, counts)?
        }
        (BlockAxis::Spatial, BlockBias::Spatial { two_d, fallback }) => {
            let mut trace = SpatialTrace::default();
            let out =
                spatial_swin_layer(g, normed, &block.attn, two_d, fallback, shifted, &mut trace)?;
            info.spatial_fallback_1d |= trace.fallback_1d;
            out
        }
        (BlockAxis::Joint, BlockBias::None) => {
            let flags = match valid {
                BlockValidity::TokenFlags(f) => Some(f),
                BlockValidity::All => None,
                BlockValidity::FrameCounts(_) => {
                    return Err(Error::contract(
                        "joint blocks take token flags, not frame counts".to_string(),
                    ))
                }
            };
            joint_attention_layer(g, normed, &block.attn, flags)?
        }
        (axis, _) => {
            return Err(Error::contract(format!(
                "block bias kind does not match axis {axis:?}"
            )))
        }
    };
    let y = g.add(x, msa)?;

    let ln2g = g.param(&block.ln2_gamma)?;
    let ln2b = g.param(&block.ln2_beta)?;
    let normed2 = g.layer_norm(y, ln2g, ln2b, LN_EPS)?;
    let w1 = g.param(&block.mlp_w1)?;
    let b1 = g.param(&block.mlp_b1)?;
    let w2 = g.param(&block.mlp_w2)?;
    let b2 = g.param(&block.mlp_b2)?;
    let h = g.matmul(normed2, w1)?;
    let h = g.bias_gelu(h, b1)?;
    let h = g.matmul(h, w2)?;
    let h = g.add(h, b2)?;
    g.add(y, h)
}

/// Masked arithmetic mean over valid tokens: `(B, M, D) -> (B, D)`.
fn masked_mean<T: Scalar>(
    g: &mut Graph<T>,
    tokens: Var,
    token_valid: &[bool],
    b: usize,
    m: usize,
    d: usize,
) -> Result<Var> {
    let mut weights = vec![T::zero(); b * m];
    for bi in 0..b {
        let count = token_valid[bi * m..(bi + 1) * m].iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::contract(format!("video {bi} has no valid tokens to pool")));
        }
        let w = T::one() / T::from_f64(count as f64);
        for t in 0..m {
            if token_valid[bi * m + t] {
                weights[bi * m + t] = w;
            }
        }
    }
    let wv = g.leaf(Tensor::new(vec![b, 1, m], weights)?)?;
    let pooled = g.matmul(wv, tokens)?; // (B, 1, D)
    g.reshape(pooled, &[b, d])
}

/// Token aggregation: masked mean or single-query attention pooling. Masked
/// tokens receive exactly zero weight in both modes.
#[allow(clippy::too_many_arguments)]
pub fn pool_tokens<T: Scalar>(
    g: &mut Graph<T>,
    tokens: Var,
    token_valid: &[bool],
    b: usize,
    m: usize,
    d: usize,
    mode: PoolMode,
    query: Option<&Parameter<T>>,
) -> Result<Var> {
    match mode {
        PoolMode::Mean => masked_mean(g, tokens, token_valid, b, m, d),
        PoolMode::Attention => {
            for bi in 0..b {
                if !token_valid[bi * m..(bi + 1) * m].iter().any(|&v| v) {
                    return Err(Error::contract(format!(
                        "video {bi} has no valid tokens to pool"
                    )));
                }
            }
            let q = query.ok_or_else(|| {
                Error::contract("attention pooling requires a query parameter".to_string())
            })?;
            let qv = g.param(q)?;
            let qcol = g.reshape(qv, &[d, 1])?;
            let scores = g.matmul(tokens, qcol)?; // (B, M, 1)
            let scores = g.reshape(scores, &[b, m])?;
            let scores = g.scale(scores, T::from_f64(1.0 / (d as f64).sqrt()))?;
            let mask_data: Vec<T> = token_valid
                .iter()
                .map(|&v| if v { T::zero() } else { T::neg_mask() })
                .collect();
            let mask = g.leaf(Tensor::new(vec![b, m], mask_data)?)?;
            let masked = g.add(scores, mask)?;
            let weights = g.softmax_lastdim(masked)?;
            let wrow = g.reshape(weights, &[b, 1, m])?;
            let pooled = g.matmul(wrow, tokens)?;
            g.reshape(pooled, &[b, d])
        }
    }
}

/// Class probability and decision for one logit. A tie at p = 0.5 classifies
/// as AI-generated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub class: u8,
}

pub fn predict<T: Scalar>(logits: &Tensor<T>) -> Vec<Prediction> {
    logits
        .data()
        .iter()
        .map(|&z| {
            let z = z.to_f64();
            let p = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            Prediction { probability: p, class: u8::from(p >= 0.5) }
        })
        .collect()
}
