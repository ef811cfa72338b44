//! Desk-scale data supply: a synthetic embedding generator with controllable
//! temporal-artifact structure, and a bit-exact binary container for real
//! encoder embeddings.
//!
//! Synthetic real videos follow a smooth AR(1) latent trajectory broadcast to
//! all spatial tokens; fake videos use a lower-coherence trajectory plus a
//! periodic component on a random feature direction. The periodic component
//! is zero-mean over a full period, so per-video mean features alone cannot
//! separate the classes — temporal modeling has to.

use crate::error::{Error, Result};
use crate::model::EmbeddingBatch;
use crate::parallel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Static per-token offset spread (spatial identity, temporally coherent).
const TOKEN_STD: f64 = 0.5;
/// Observation noise on every element.
const OBS_STD: f64 = 0.1;

/// Parameters of the synthetic embedding distribution. Counts are per class.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub t: usize,
    pub s: usize,
    pub d_in: usize,
    pub sigma_real: f64,
    pub rho_real: f64,
    pub sigma_fake: f64,
    pub rho_fake: f64,
    /// Amplitude of the periodic temporal artifact on fake videos.
    pub artifact_amp: f64,
    /// Period (frames) of the artifact; must not exceed `t`.
    pub artifact_period: usize,
    pub seed: u64,
    /// Generator label recorded in manifests and used for grouped reports.
    pub group: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::default_artifact()
    }
}

impl SyntheticSpec {
    /// The default artifact distribution: matched stationary variance across
    /// classes, separable only through temporal structure.
    pub fn default_artifact() -> Self {
        SyntheticSpec {
            n_train: 2000,
            n_val: 500,
            n_test: 0,
            t: 16,
            s: 16,
            d_in: 64,
            sigma_real: 0.1,
            rho_real: 0.95,
            sigma_fake: 0.45,
            rho_fake: 0.20,
            artifact_amp: 1.2,
            artifact_period: 4,
            seed: 7,
            group: "synthetic".to_string(),
        }
    }

    /// Identically distributed classes: the unlearnable control.
    pub fn null() -> Self {
        SyntheticSpec {
            n_train: 800,
            n_val: 200,
            sigma_fake: 0.1,
            rho_fake: 0.95,
            artifact_amp: 0.0,
            group: "null".to_string(),
            ..SyntheticSpec::default_artifact()
        }
    }

    /// Shifted artifact parameters standing in for unseen generators.
    pub fn heldout_shift() -> Self {
        SyntheticSpec {
            n_train: 0,
            n_val: 0,
            n_test: 500,
            sigma_fake: 0.36,
            rho_fake: 0.45,
            artifact_amp: 0.7,
            artifact_period: 8,
            seed: 1013,
            group: "heldout-gen".to_string(),
            ..SyntheticSpec::default_artifact()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" | "artifact" => Ok(Self::default_artifact()),
            "null" => Ok(Self::null()),
            "heldout" => Ok(Self::heldout_shift()),
            other => Err(Error::config(format!("unknown synthetic preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.s == 0 || self.d_in == 0 {
            return Err(Error::config("t, s, d_in must all be >= 1".to_string()));
        }
        if self.n_train + self.n_val + self.n_test == 0 {
            return Err(Error::config("spec generates no videos".to_string()));
        }
        for (name, sigma) in [("sigma_real", self.sigma_real), ("sigma_fake", self.sigma_fake)] {
            if !(sigma > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {sigma}")));
            }
        }
        for (name, rho) in [("rho_real", self.rho_real), ("rho_fake", self.rho_fake)] {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1], got {rho}")));
            }
        }
        if self.artifact_amp < 0.0 {
            return Err(Error::config("artifact_amp must be >= 0".to_string()));
        }
        if self.artifact_period == 0 || self.artifact_period > self.t {
            return Err(Error::config(format!(
                "artifact_period {} must be in 1..={}",
                self.artifact_period, self.t
            )));
        }
        Ok(())
    }

    /// True when the two classes are identically distributed, which makes
    /// the task unlearnable.
    pub fn is_null(&self) -> bool {
        self.sigma_real == self.sigma_fake
            && self.rho_real == self.rho_fake
            && self.artifact_amp == 0.0
    }

    /// Stable content hash of the spec for manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

/// One split of videos, flat f32 storage in `(n, T, S, D_in)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub t: usize,
    pub s: usize,
    pub d_in: usize,
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
    pub groups: Vec<String>,
}

impl Split {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn video_len(&self) -> usize {
        self.t * self.s * self.d_in
    }

    pub fn video(&self, i: usize) -> &[f32] {
        let len = self.video_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// Assemble a batch from the given video indices.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<EmbeddingBatch<T>> {
        let len = self.video_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend(self.video(i).iter().map(|&v| T::from_f64(v as f64)));
            labels.push(self.labels[i]);
        }
        EmbeddingBatch::new(
            Tensor::new(vec![indices.len(), self.t, self.s, self.d_in], data)?,
            vec![self.t; indices.len()],
            Some(labels),
        )
    }

    /// Merge another split into this one (shapes must match).
    pub fn extend(&mut self, other: &Split) -> Result<()> {
        if (self.t, self.s, self.d_in) != (other.t, other.s, other.d_in) {
            return Err(Error::data("cannot merge splits with different shapes".to_string()));
        }
        self.data.extend_from_slice(&other.data);
        self.labels.extend_from_slice(&other.labels);
        self.groups.extend_from_slice(&other.groups);
        Ok(())
    }
}

/// Generated dataset with disjoint splits.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

struct NormalGen {
    rng: StdRng,
    spare: Option<f64>,
}

impl NormalGen {
    fn new(seed: u64) -> Self {
        NormalGen { rng: StdRng::seed_from_u64(seed), spare: None }
    }

    fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Box–Muller standard normal.
    fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>(); // (0, 1]
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Per-video RNG stream: independent of every other video and stable across
/// thread counts.
fn video_seed(master: u64, global_index: u64) -> u64 {
    // splitmix64 over (master, index)
    let mut z = master ^ global_index.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn generate_video(spec: &SyntheticSpec, fake: bool, seed: u64, out: &mut [f32]) {
    let (t, s, d) = (spec.t, spec.s, spec.d_in);
    let (sigma, rho) = if fake {
        (spec.sigma_fake, spec.rho_fake)
    } else {
        (spec.sigma_real, spec.rho_real)
    };
    let mut gen = NormalGen::new(seed);

    // Stationary AR(1) latent trajectory (random walk when rho == 1).
    let init_std = if rho < 1.0 { sigma / (1.0 - rho * rho).sqrt() } else { sigma };
    let mut latent = vec![0.0f64; t * d];
    for c in 0..d {
        latent[c] = init_std * gen.normal();
    }
    for ti in 1..t {
        for c in 0..d {
            latent[ti * d + c] = rho * latent[(ti - 1) * d + c] + sigma * gen.normal();
        }
    }

    // Static token offsets: spatially varied, temporally coherent.
    let mut offsets = vec![0.0f64; s * d];
    for v in offsets.iter_mut() {
        *v = TOKEN_STD * gen.normal();
    }

    // Periodic artifact on a random unit direction, random phase.
    let mut artifact_dir = vec![0.0f64; d];
    let mut phase = 0.0;
    if fake && spec.artifact_amp > 0.0 {
        let mut norm = 0.0;
        for v in artifact_dir.iter_mut() {
            *v = gen.normal();
            norm += *v * *v;
        }
        let norm = norm.sqrt().max(1e-12);
        for v in artifact_dir.iter_mut() {
            *v /= norm;
        }
        phase = gen.uniform() * spec.artifact_period as f64;
    }

    let period = spec.artifact_period as f64;
    for ti in 0..t {
        let wave = if fake && spec.artifact_amp > 0.0 {
            spec.artifact_amp * (2.0 * std::f64::consts::PI * (ti as f64 + phase) / period).sin()
        } else {
            0.0
        };
        for si in 0..s {
            for c in 0..d {
                let v = latent[ti * d + c]
                    + offsets[si * d + c]
                    + OBS_STD * gen.normal()
                    + wave * artifact_dir[c];
                out[(ti * s + si) * d + c] = v as f32;
            }
        }
    }
}

fn generate_split(
    spec: &SyntheticSpec,
    n_per_class: usize,
    first_global_index: u64,
) -> Split {
    let len = spec.t * spec.s * spec.d_in;
    let n = n_per_class * 2;
    let mut data = vec![0.0f32; n * len];
    let mut labels = vec![0u8; n];
    // Reals first, then fakes.
    for (i, l) in labels.iter_mut().enumerate() {
        *l = u8::from(i >= n_per_class);
    }
    let labels_ref = &labels;
    let spec_ref = &spec;
    let chunks = parallel::chunk_ranges(n, 64);
    let mut rest: &mut [f32] = &mut data;
    let mut consumed = 0usize;
    std::thread::scope(|scope| {
        for r in chunks {
            let (head, tail) = rest.split_at_mut(r.len() * len);
            rest = tail;
            let start = consumed;
            consumed += r.len();
            scope.spawn(move || {
                for (k, video) in head.chunks_mut(len).enumerate() {
                    let i = start + k;
                    let seed = video_seed(spec_ref.seed, first_global_index + i as u64);
                    generate_video(spec_ref, labels_ref[i] == 1, seed, video);
                }
            });
        }
    });
    Split {
        t: spec.t,
        s: spec.s,
        d_in: spec.d_in,
        data,
        labels,
        groups: vec![spec.group.clone(); n],
    }
}

/// Generate all splits. Deterministic per spec+seed; splits are disjoint by
/// construction (every video draws from its own stream keyed by a unique
/// global index).
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    parallel::tune_allocator();
    let train = generate_split(spec, spec.n_train, 0);
    let val = generate_split(spec, spec.n_val, (spec.n_train * 2) as u64);
    let test = generate_split(spec, spec.n_test, ((spec.n_train + spec.n_val) * 2) as u64);
    Ok(SyntheticDataset { spec: spec.clone(), train, val, test })
}

// ── Embedding container format ──────────────────────────────────────
//
// magic "EAEMB" | version u16 | n u32 | T u32 | S u32 | D_in u32
// | n label bytes | n*T*S*D_in little-endian f32 | crc32(payload)

pub const MAGIC: &[u8; 5] = b"EAEMB";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 5 + 2 + 4 * 4;

/// Serialize a split into the embedding container layout.
pub fn encode_split(split: &Split) -> Vec<u8> {
    let n = split.n();
    let payload_len = split.data.len() * 4;
    let mut out = Vec::with_capacity(HEADER_LEN + n + payload_len + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(split.t as u32).to_le_bytes());
    out.extend_from_slice(&(split.s as u32).to_le_bytes());
    out.extend_from_slice(&(split.d_in as u32).to_le_bytes());
    out.extend_from_slice(&split.labels);
    let payload_start = out.len();
    for v in &split.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn write_file(path: &Path, split: &Split) -> Result<()> {
    let bytes = encode_split(split);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Parse the container; every corruption class gets its own error.
pub fn decode_split(bytes: &[u8], group: &str) -> Result<Split> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated { offset: 0, needed: MAGIC.len(), available: bytes.len() });
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC.to_vec(), found: bytes[..5].to_vec() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { offset: 5, needed: HEADER_LEN - 5, available: bytes.len() - 5 });
    }
    let version = u16::from_le_bytes([bytes[5], bytes[6]]);
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion { found: version, supported: FORMAT_VERSION });
    }
    let read_u32 = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let n = read_u32(7) as usize;
    let t = read_u32(11) as usize;
    let s = read_u32(15) as usize;
    let d_in = read_u32(19) as usize;
    let payload_len = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(s))
        .and_then(|v| v.checked_mul(d_in))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::data("header sizes overflow".to_string()))?;
    let need = HEADER_LEN + n + payload_len + 4;
    if bytes.len() < need {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: need - bytes.len(),
            available: 0,
        });
    }
    let labels = bytes[HEADER_LEN..HEADER_LEN + n].to_vec();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::data("label byte outside {0,1}".to_string()));
    }
    let payload_start = HEADER_LEN + n;
    let payload = &bytes[payload_start..payload_start + payload_len];
    let stored =
        u32::from_le_bytes(bytes[need - 4..need].try_into().expect("4 crc bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::CrcMismatch {
            start: payload_start,
            end: payload_start + payload_len,
            stored,
            computed,
        });
    }
    let mut data = Vec::with_capacity(payload_len / 4);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
    }
    Ok(Split { t, s, d_in, data, labels, groups: vec![group.to_string(); n] })
}

pub fn read_file(path: &Path, group: &str) -> Result<Split> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_split(&bytes, group)
}

// ── Manifest ─────────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub split: String,
    pub path: String,
    pub n: usize,
    pub t: usize,
    pub s: usize,
    pub d_in: usize,
    pub class_counts: [usize; 2],
    pub group: String,
    pub spec_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Write every non-empty split plus `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, ds: &SyntheticDataset) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, split) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        if split.n() == 0 {
            continue;
        }
        let file = format!("{name}.eaemb");
        write_file(&dir.join(&file), split)?;
        let fakes = split.labels.iter().filter(|&&l| l == 1).count();
        entries.push(ManifestEntry {
            split: name.to_string(),
            path: file,
            n: split.n(),
            t: split.t,
            s: split.s,
            d_in: split.d_in,
            class_counts: [split.n() - fakes, fakes],
            group: ds.spec.group.clone(),
            spec_hash: ds.spec.hash(),
        });
    }
    let manifest = Manifest { entries };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Load the split named `split` from a manifest (merging multiple entries).
pub fn load_split(manifest_path: &Path, split: &str) -> Result<Split> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let base = manifest_path.parent().map(PathBuf::from).unwrap_or_default();
    let mut out: Option<Split> = None;
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        let part = read_file(&base.join(&e.path), &e.group)?;
        if part.n() != e.n || part.t != e.t || part.s != e.s || part.d_in != e.d_in {
            return Err(Error::data(format!(
                "manifest entry {} disagrees with file contents",
                e.path
            )));
        }
        match &mut out {
            Some(acc) => acc.extend(&part)?,
            None => out = Some(part),
        }
    }
    out.ok_or_else(|| Error::data(format!("manifest has no '{split}' split")))
}

// ── Frame subsampling ────────────────────────────────────────────────

/// Evenly spaced frame indices including both endpoints:
/// `round(i * (T-1) / (k-1))`.
pub fn subsample_indices(t: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > t {
        return Err(Error::config(format!("cannot subsample {k} frames from {t}")));
    }
    if k == 1 {
        return Ok(vec![0]);
    }
    Ok((0..k)
        .map(|i| ((i * (t - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect())
}

/// Pure input transform: keep `k` evenly spaced frames, updating validity.
pub fn subsample_frames<T: Scalar>(batch: &EmbeddingBatch<T>, k: usize) -> Result<EmbeddingBatch<T>> {
    let (b, t, s, d) = (batch.batch_size(), batch.frames(), batch.spatial(), batch.d_in());
    let idx = subsample_indices(t, k)?;
    if idx.len() == t {
        return Ok(batch.clone());
    }
    let frame_len = s * d;
    let src = batch.z.data();
    let mut data = Vec::with_capacity(b * k * frame_len);
    for bi in 0..b {
        for &fi in &idx {
            let base = (bi * t + fi) * frame_len;
            data.extend_from_slice(&src[base..base + frame_len]);
        }
    }
    let valid_t = batch
        .valid_t
        .iter()
        .map(|&v| idx.iter().filter(|&&i| i < v).count().max(1))
        .collect();
    EmbeddingBatch::new(Tensor::new(vec![b, k, s, d], data)?, valid_t, batch.labels.clone())
}

/// Frame subsampling applied to a whole split.
pub fn subsample_split(split: &Split, k: usize) -> Result<Split> {
    let idx = subsample_indices(split.t, k)?;
    if idx.len() == split.t {
        return Ok(split.clone());
    }
    let frame_len = split.s * split.d_in;
    let mut data = Vec::with_capacity(split.n() * k * frame_len);
    for i in 0..split.n() {
        let video = split.video(i);
        for &fi in &idx {
            data.extend_from_slice(&video[fi * frame_len..(fi + 1) * frame_len]);
        }
    }
    Ok(Split {
        t: k,
        s: split.s,
        d_in: split.d_in,
        data,
        labels: split.labels.clone(),
        groups: split.groups.clone(),
    })
}
