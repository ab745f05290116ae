//! The masked-autoencoder motion model: pose decomposition into body-part
//! tokens, mixed embeddings, a transformer encoder-decoder over the full
//! `L*T` token sequence (masked tokens included), pose aggregation, and the
//! delta output head.

mod checkpoint;
mod scheme;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use scheme::{PatchScheme, PatchVariant};

use crate::kinematics::{KinError, MotionTensor, Repr, SkeletonTopology};
use crate::masking::{patchify_mask, MaskError, TokenMask};
use crate::numkit::{dct_matrix, Graph, NumError, Tensor, Var};
use crate::pipeline::{apply_delta, fill_motion, FillError, FillStrategy};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Kin(#[from] KinError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Fill(#[from] FillError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

type Result<T> = std::result::Result<T, ModelError>;

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive attention bias for tokens a causal query must not see.
/// exp(x - CAUSAL_BIAS) underflows to exactly 0.0 for any realistic score.
const CAUSAL_BIAS: f64 = -1e30;

// ── config ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Joint representation the model is trained on.
    pub repr: Repr,
    /// Token width D.
    pub token_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch_variant: PatchVariant,
    /// Pose aggregation; when off, per-patch linear heads decode each token
    /// back to its own joints.
    pub use_pa: bool,
    /// DCT/IDCT around the network (time axis), for strongly periodic data.
    pub use_dct: bool,
    /// Number of frame-mixing refinement blocks after pose aggregation.
    pub temp_mlp_blocks: usize,
    /// Sequence length the TempMLP frame-mixing weights are sized for.
    pub temp_mlp_frames: usize,
    pub use_kin_embedding: bool,
    /// Lower-triangular (over frame index) attention.
    pub causal_attention: bool,
    /// Copy observed values over the prediction before returning it.
    pub overwrite_observed: bool,
    pub fill: FillStrategy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            repr: Repr::Position3,
            token_dim: 64,
            encoder_depth: 2,
            decoder_depth: 2,
            heads: 4,
            mlp_ratio: 4,
            patch_variant: PatchVariant::FiveParts,
            use_pa: true,
            use_dct: false,
            temp_mlp_blocks: 0,
            temp_mlp_frames: 0,
            use_kin_embedding: true,
            causal_attention: false,
            overwrite_observed: true,
            fill: FillStrategy::Interpolate,
        }
    }
}

impl ModelConfig {
    /// Half-width variant of the default configuration.
    pub fn light() -> Self {
        ModelConfig {
            token_dim: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.token_dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "token_dim {} must be a positive multiple of heads {}",
                self.token_dim, self.heads
            )));
        }
        if self.encoder_depth == 0 && self.decoder_depth == 0 {
            return Err(ModelError::Config(
                "at least one of encoder/decoder must have depth >= 1".into(),
            ));
        }
        if self.temp_mlp_blocks > 0 {
            if !self.use_pa {
                return Err(ModelError::Config(
                    "temp_mlp refinement requires pose aggregation".into(),
                ));
            }
            if self.temp_mlp_frames == 0 {
                return Err(ModelError::Config(
                    "temp_mlp_blocks > 0 needs temp_mlp_frames set".into(),
                ));
            }
        }
        if self.mlp_ratio == 0 {
            return Err(ModelError::Config("mlp_ratio must be >= 1".into()));
        }
        Ok(())
    }
}

// ── parameters ───────────────────────────────────────────────────────

/// Named parameter tensors in stable insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    fn insert(&mut self, name: String, value: Tensor) {
        debug_assert!(!self.index.contains_key(&name), "duplicate param {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.values[i]),
            None => None,
        }
    }

    pub fn at(&self, i: usize) -> (&str, &Tensor) {
        (&self.names[i], &self.values[i])
    }

    pub fn at_mut(&mut self, i: usize) -> (&str, &mut Tensor) {
        (&self.names[i], &mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.names.iter().zip(self.values.iter())
    }
}

/// Graph handles for every parameter of one forward pass, aligned with the
/// owning [`ParamSet`].
pub struct ParamVars {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn var(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // resample outside +/- 2 std, the usual transformer init
    loop {
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

// ── model ────────────────────────────────────────────────────────────

pub struct MaskedAutoencoder {
    config: ModelConfig,
    topology: SkeletonTopology,
    scheme: PatchScheme,
    params: ParamSet,
}

const INIT_STD: f64 = 0.02;

impl MaskedAutoencoder {
    /// Fresh model with the scheme derived from `config.patch_variant`.
    /// Output projections start at zero so an untrained model reproduces the
    /// reference motion exactly.
    pub fn new(config: ModelConfig, topology: SkeletonTopology, seed: u64) -> Result<Self> {
        let scheme = PatchScheme::from_variant(config.patch_variant, &topology)?;
        Self::with_scheme(config, topology, scheme, seed)
    }

    pub fn with_scheme(
        config: ModelConfig,
        topology: SkeletonTopology,
        scheme: PatchScheme,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if scheme.joint_count() != topology.joint_count() {
            return Err(ModelError::Config(format!(
                "scheme covers {} joints, topology has {}",
                scheme.joint_count(),
                topology.joint_count()
            )));
        }
        let mut model = MaskedAutoencoder {
            config,
            topology,
            scheme,
            params: ParamSet::default(),
        };
        model.build_params(seed);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn scheme(&self) -> &PatchScheme {
        &self.scheme
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn channels(&self) -> usize {
        self.config.repr.channels()
    }

    /// Flattened pose width P = J * n.
    pub fn pose_dim(&self) -> usize {
        self.topology.joint_count() * self.channels()
    }

    fn build_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.config.token_dim;
        let n = self.channels();
        let p = self.pose_dim();
        let l = self.scheme.patch_count();

        let normal = |shape: &[usize], rng: &mut ChaCha8Rng| {
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| trunc_normal(rng, INIT_STD)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape/data agree")
        };

        for li in 0..l {
            let in_dim = self.scheme.group(li).len() * n;
            let w = normal(&[in_dim, d], &mut rng);
            self.params.insert(format!("pd.{li}.weight"), w);
            self.params.insert(format!("pd.{li}.bias"), Tensor::zeros(&[d]));
        }
        self.params.insert("emb.kin".into(), normal(&[l, d], &mut rng));
        self.params.insert("emb.mask".into(), normal(&[1, d], &mut rng));

        let block = |prefix: String, rng: &mut ChaCha8Rng, params: &mut ParamSet| {
            params.insert(format!("{prefix}.ln1.gamma"), Tensor::full(&[d], 1.0));
            params.insert(format!("{prefix}.ln1.beta"), Tensor::zeros(&[d]));
            for proj in ["q", "k", "v", "o"] {
                params.insert(format!("{prefix}.attn.{proj}.weight"), normal(&[d, d], rng));
                params.insert(format!("{prefix}.attn.{proj}.bias"), Tensor::zeros(&[d]));
            }
            params.insert(format!("{prefix}.ln2.gamma"), Tensor::full(&[d], 1.0));
            params.insert(format!("{prefix}.ln2.beta"), Tensor::zeros(&[d]));
            let hidden = d * self.config.mlp_ratio;
            params.insert(format!("{prefix}.mlp.w1"), normal(&[d, hidden], rng));
            params.insert(format!("{prefix}.mlp.b1"), Tensor::zeros(&[hidden]));
            params.insert(format!("{prefix}.mlp.w2"), normal(&[hidden, d], rng));
            params.insert(format!("{prefix}.mlp.b2"), Tensor::zeros(&[d]));
        };

        for i in 0..self.config.encoder_depth {
            block(format!("enc.{i}"), &mut rng, &mut self.params);
        }
        if self.config.encoder_depth > 0 {
            self.params.insert("enc.norm.gamma".into(), Tensor::full(&[d], 1.0));
            self.params.insert("enc.norm.beta".into(), Tensor::zeros(&[d]));
        }
        for i in 0..self.config.decoder_depth {
            block(format!("dec.{i}"), &mut rng, &mut self.params);
        }
        if self.config.decoder_depth > 0 {
            self.params.insert("dec.norm.gamma".into(), Tensor::full(&[d], 1.0));
            self.params.insert("dec.norm.beta".into(), Tensor::zeros(&[d]));
        }

        if self.config.use_pa {
            self.params.insert("pa.fc1.weight".into(), normal(&[l * d, d], &mut rng));
            self.params.insert("pa.fc1.bias".into(), Tensor::zeros(&[d]));
            self.params.insert("pa.fc2.weight".into(), normal(&[d, d], &mut rng));
            self.params.insert("pa.fc2.bias".into(), Tensor::zeros(&[d]));
            for i in 0..self.config.temp_mlp_blocks {
                let t = self.config.temp_mlp_frames;
                self.params
                    .insert(format!("tmlp.{i}.ln.gamma"), Tensor::full(&[d], 1.0));
                self.params
                    .insert(format!("tmlp.{i}.ln.beta"), Tensor::zeros(&[d]));
                // zero so each refinement block starts as the identity
                self.params
                    .insert(format!("tmlp.{i}.time.weight"), Tensor::zeros(&[t, t]));
                self.params
                    .insert(format!("tmlp.{i}.time.bias"), Tensor::zeros(&[t, 1]));
            }
            // zero-initialized delta head: untrained output is exactly x_ref
            self.params.insert("pa.out.weight".into(), Tensor::zeros(&[d, p]));
            self.params.insert("pa.out.bias".into(), Tensor::zeros(&[p]));
        } else {
            for li in 0..l {
                let out_dim = self.scheme.group(li).len() * n;
                self.params
                    .insert(format!("head.{li}.weight"), Tensor::zeros(&[d, out_dim]));
                self.params
                    .insert(format!("head.{li}.bias"), Tensor::zeros(&[out_dim]));
            }
        }
    }

    /// Register every parameter on a graph. `trainable` decides whether the
    /// leaves are tracked for gradients.
    pub fn bind_params(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let mut vars = Vec::with_capacity(self.params.len());
        let mut index = HashMap::with_capacity(self.params.len());
        for (i, (name, value)) in self.params.iter().enumerate() {
            let v = if trainable {
                g.leaf(value.clone())
            } else {
                g.constant(value.clone())
            };
            vars.push(v);
            index.insert(name.clone(), i);
        }
        ParamVars { vars, index }
    }

    /// Sinusoidal frame embedding, one row per token (`L*T x D`, frame-major).
    fn position_embedding(&self, frames: usize) -> Tensor {
        let d = self.config.token_dim;
        let l = self.scheme.patch_count();
        let mut data = vec![0.0; frames * l * d];
        for t in 0..frames {
            for li in 0..l {
                let row = (t * l + li) * d;
                for i in 0..d / 2 {
                    let freq = (t as f64) / 10000f64.powf(2.0 * i as f64 / d as f64);
                    data[row + 2 * i] = freq.sin();
                    data[row + 2 * i + 1] = freq.cos();
                }
            }
        }
        Tensor::new(vec![frames * l, d], data).expect("sized buffer")
    }

    /// Columns of the flattened pose belonging to patch `l`, joint order.
    fn patch_columns(&self, l: usize) -> Vec<usize> {
        let n = self.channels();
        let mut cols = Vec::with_capacity(self.scheme.group(l).len() * n);
        for &j in self.scheme.group(l) {
            for c in 0..n {
                cols.push(j * n + c);
            }
        }
        cols
    }

    /// Mixed embedding `emb_pos + emb_kin + emb_mask` over the token grid;
    /// shared by the encoder and decoder inputs.
    pub fn mixed_embedding(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        frames: usize,
        token_mask: &TokenMask,
    ) -> Result<Var> {
        let l = self.scheme.patch_count();
        let tokens = frames * l;
        let pos = g.constant(self.position_embedding(frames));
        let mut mix = pos;
        if self.config.use_kin_embedding {
            let kin_rows: Vec<usize> = (0..tokens).map(|i| i % l).collect();
            let kin = g.index_select(pv.var("emb.kin"), 0, &kin_rows)?;
            mix = g.add(mix, kin)?;
        }
        // indicator column (1 where hidden) times the mask token row
        let indicator: Vec<f64> = (0..tokens)
            .map(|i| {
                if token_mask.is_visible(i / l, i % l) {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let ind = g.constant(Tensor::new(vec![tokens, 1], indicator)?);
        let mask_term = g.matmul(ind, pv.var("emb.mask"))?;
        mix = g.add(mix, mask_term)?;
        Ok(mix)
    }

    fn vit_block(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        prefix: &str,
        x: Var,
        causal_bias: Option<Var>,
    ) -> Result<Var> {
        let d = self.config.token_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let tokens = g.shape(x)[0];

        let linear = |g: &mut Graph, x: Var, w: &str, b: &str| -> Result<Var> {
            let y = g.matmul(x, pv.var(w))?;
            Ok(g.add(y, pv.var(b))?)
        };

        let xn = g.layer_norm(
            x,
            pv.var(&format!("{prefix}.ln1.gamma")),
            pv.var(&format!("{prefix}.ln1.beta")),
            LAYER_NORM_EPS,
        )?;
        let q = linear(g, xn, &format!("{prefix}.attn.q.weight"), &format!("{prefix}.attn.q.bias"))?;
        let k = linear(g, xn, &format!("{prefix}.attn.k.weight"), &format!("{prefix}.attn.k.bias"))?;
        let v = linear(g, xn, &format!("{prefix}.attn.v.weight"), &format!("{prefix}.attn.v.bias"))?;

        let split = |g: &mut Graph, t: Var| -> Result<Var> {
            let r = g.reshape(t, &[tokens, heads, dh])?;
            Ok(g.permute(r, &[1, 0, 2])?)
        };
        let qh = split(g, q)?;
        let kh = split(g, k)?;
        let vh = split(g, v)?;
        let kt = g.permute(kh, &[0, 2, 1])?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        if let Some(bias) = causal_bias {
            scores = g.add(scores, bias)?;
        }
        let attn = g.softmax(scores, 2)?;
        let ctx = g.matmul(attn, vh)?;
        let merged = g.permute(ctx, &[1, 0, 2])?;
        let merged = g.reshape(merged, &[tokens, d])?;
        let out = linear(
            g,
            merged,
            &format!("{prefix}.attn.o.weight"),
            &format!("{prefix}.attn.o.bias"),
        )?;
        let x = g.add(x, out)?;

        let xn2 = g.layer_norm(
            x,
            pv.var(&format!("{prefix}.ln2.gamma")),
            pv.var(&format!("{prefix}.ln2.beta")),
            LAYER_NORM_EPS,
        )?;
        let h = linear(g, xn2, &format!("{prefix}.mlp.w1"), &format!("{prefix}.mlp.b1"))?;
        let h = g.gelu(h);
        let h = linear(g, h, &format!("{prefix}.mlp.w2"), &format!("{prefix}.mlp.b2"))?;
        Ok(g.add(x, h)?)
    }

    /// Additive mask keeping attention lower-triangular over frame index.
    fn causal_bias(&self, frames: usize) -> Tensor {
        let l = self.scheme.patch_count();
        let tokens = frames * l;
        let mut data = vec![0.0; tokens * tokens];
        for i in 0..tokens {
            for j in 0..tokens {
                if j / l > i / l {
                    data[i * tokens + j] = CAUSAL_BIAS;
                }
            }
        }
        Tensor::new(vec![tokens, tokens], data).expect("sized buffer")
    }

    /// Split a `[T, P]` pose matrix into per-patch `[T, n_l * n]` slices.
    pub fn pose_decompose(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        let mut patches = Vec::with_capacity(self.scheme.patch_count());
        for li in 0..self.scheme.patch_count() {
            let cols = self.patch_columns(li);
            patches.push(g.index_select(x, 1, &cols)?);
        }
        Ok(patches)
    }

    /// Inverse of [`Self::pose_decompose`]: reassemble patch slices into the
    /// `[T, P]` joint-order layout.
    pub fn pose_regroup(&self, g: &mut Graph, patches: &[Var]) -> Result<Var> {
        let p = self.pose_dim();
        let patch_order = g.concat(patches, 1)?;
        let mut order: Vec<usize> = Vec::with_capacity(p);
        for li in 0..self.scheme.patch_count() {
            order.extend(self.patch_columns(li));
        }
        let mut inverse = vec![0usize; p];
        for (pos, &col) in order.iter().enumerate() {
            inverse[col] = pos;
        }
        Ok(g.index_select(patch_order, 1, &inverse)?)
    }

    /// Project each patch slice through its own linear layer and flatten to
    /// the frame-major `[L*T, D]` token sequence.
    pub fn project_tokens(&self, g: &mut Graph, pv: &ParamVars, patches: &[Var]) -> Result<Var> {
        let d = self.config.token_dim;
        let l = self.scheme.patch_count();
        debug_assert_eq!(patches.len(), l);
        let frames = g.shape(patches[0])[0];
        let mut patch_tokens = Vec::with_capacity(l);
        for (li, &patch) in patches.iter().enumerate() {
            let tok = g.matmul(patch, pv.var(&format!("pd.{li}.weight")))?;
            let tok = g.add(tok, pv.var(&format!("pd.{li}.bias")))?;
            patch_tokens.push(g.reshape(tok, &[1, frames, d])?);
        }
        // [L, T, D] -> frame-major [T*L, D]
        let stacked = g.concat(&patch_tokens, 0)?;
        let by_frame = g.permute(stacked, &[1, 0, 2])?;
        Ok(g.reshape(by_frame, &[frames * l, d])?)
    }

    /// Encoder over the full token sequence (masked tokens included), then
    /// the decoder with the shared mixed embedding re-added.
    pub fn encode_decode(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        tokens: Var,
        mix: Var,
        frames: usize,
    ) -> Result<Var> {
        let causal = if self.config.causal_attention {
            Some(g.constant(self.causal_bias(frames)))
        } else {
            None
        };
        let mut tokens = g.add(tokens, mix)?;
        if self.config.encoder_depth > 0 {
            for i in 0..self.config.encoder_depth {
                tokens = self.vit_block(g, pv, &format!("enc.{i}"), tokens, causal)?;
            }
            tokens = g.layer_norm(
                tokens,
                pv.var("enc.norm.gamma"),
                pv.var("enc.norm.beta"),
                LAYER_NORM_EPS,
            )?;
        }
        if self.config.decoder_depth > 0 {
            // the decoder shares the same mixed embedding
            tokens = g.add(tokens, mix)?;
            for i in 0..self.config.decoder_depth {
                tokens = self.vit_block(g, pv, &format!("dec.{i}"), tokens, causal)?;
            }
            tokens = g.layer_norm(
                tokens,
                pv.var("dec.norm.gamma"),
                pv.var("dec.norm.beta"),
                LAYER_NORM_EPS,
            )?;
        }
        Ok(tokens)
    }

    /// Frame-mixing residual refinement of the pose representation.
    pub fn temp_mlp_refine(&self, g: &mut Graph, pv: &ParamVars, e_pose: Var) -> Result<Var> {
        let mut e_pose = e_pose;
        for i in 0..self.config.temp_mlp_blocks {
            let xn = g.layer_norm(
                e_pose,
                pv.var(&format!("tmlp.{i}.ln.gamma")),
                pv.var(&format!("tmlp.{i}.ln.beta")),
                LAYER_NORM_EPS,
            )?;
            let mixed = g.matmul(pv.var(&format!("tmlp.{i}.time.weight")), xn)?;
            let mixed = g.add(mixed, pv.var(&format!("tmlp.{i}.time.bias")))?;
            e_pose = g.add(e_pose, mixed)?;
        }
        Ok(e_pose)
    }

    /// Decode the token sequence back to per-frame joint deltas `[T, P]`.
    /// With pose aggregation each frame's tokens are regrouped and fused by
    /// two GELU layers; without it, per-patch heads decode independently.
    pub fn pose_aggregate(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        tokens: Var,
        frames: usize,
    ) -> Result<Var> {
        let d = self.config.token_dim;
        let l = self.scheme.patch_count();
        if self.config.use_pa {
            let pose = g.reshape(tokens, &[frames, l * d])?;
            let h = g.matmul(pose, pv.var("pa.fc1.weight"))?;
            let h = g.add(h, pv.var("pa.fc1.bias"))?;
            let h = g.gelu(h);
            let h2 = g.matmul(h, pv.var("pa.fc2.weight"))?;
            let h2 = g.add(h2, pv.var("pa.fc2.bias"))?;
            let e_pose = g.gelu(h2);
            let e_pose = self.temp_mlp_refine(g, pv, e_pose)?;
            let out = g.matmul(e_pose, pv.var("pa.out.weight"))?;
            Ok(g.add(out, pv.var("pa.out.bias"))?)
        } else {
            // inverted decomposition: per-patch heads back to joint values
            let mut parts = Vec::with_capacity(l);
            for li in 0..l {
                let rows: Vec<usize> = (0..frames).map(|t| t * l + li).collect();
                let tok = g.index_select(tokens, 0, &rows)?;
                let y = g.matmul(tok, pv.var(&format!("head.{li}.weight")))?;
                let y = g.add(y, pv.var(&format!("head.{li}.bias")))?;
                parts.push(y);
            }
            self.pose_regroup(g, &parts)
        }
    }

    /// The network body: `x_fill` (`[T, P]`) to the delta prediction
    /// (`[T, P]`), differentiable w.r.t. the bound parameters.
    pub fn forward_delta(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        x_fill: &Tensor,
        token_mask: &TokenMask,
    ) -> Result<Var> {
        let p = self.pose_dim();
        let frames = x_fill.shape()[0];
        if x_fill.shape() != [frames, p] {
            return Err(ModelError::Config(format!(
                "x_fill must be [T, {}], got {:?}",
                p,
                x_fill.shape()
            )));
        }
        let l = self.scheme.patch_count();
        if token_mask.frames() != frames || token_mask.patches() != l {
            return Err(ModelError::Config(format!(
                "token mask is {}x{}, expected {}x{}",
                token_mask.frames(),
                token_mask.patches(),
                frames,
                l
            )));
        }
        if self.config.temp_mlp_blocks > 0 && self.config.temp_mlp_frames != frames {
            return Err(ModelError::Config(format!(
                "temp_mlp weights are sized for {} frames, input has {}",
                self.config.temp_mlp_frames, frames
            )));
        }

        let mut x = g.constant(x_fill.clone());
        if self.config.use_dct {
            let basis = g.constant(dct_matrix(frames));
            x = g.matmul(basis, x)?;
        }
        let patches = self.pose_decompose(g, x)?;
        let tokens = self.project_tokens(g, pv, &patches)?;
        let mix = self.mixed_embedding(g, pv, frames, token_mask)?;
        let decoded = self.encode_decode(g, pv, tokens, mix, frames)?;
        let mut delta = self.pose_aggregate(g, pv, decoded, frames)?;
        if self.config.use_dct {
            let basis = g.constant(dct_matrix(frames));
            let inverse = g.permute(basis, &[1, 0])?;
            delta = g.matmul(inverse, delta)?;
        }
        Ok(delta)
    }

    /// End-to-end prediction: fill, run the network once, add the reference,
    /// and overwrite observed values when configured. No gradients.
    pub fn predict(&self, motion: &MotionTensor) -> Result<MotionTensor> {
        if motion.repr != self.config.repr {
            return Err(ModelError::Config(format!(
                "model expects {} motions, got {}",
                self.config.repr.as_str(),
                motion.repr.as_str()
            )));
        }
        if motion.joints() != self.topology.joint_count() {
            return Err(ModelError::Config(format!(
                "motion has {} joints, model topology {}",
                motion.joints(),
                self.topology.joint_count()
            )));
        }
        let filled = fill_motion(motion, self.config.fill)?;
        let token_mask = patchify_mask(motion.visibility(), &self.scheme)?;
        let x_fill = Tensor::new(
            vec![motion.frames(), self.pose_dim()],
            filled.x_fill.values().to_vec(),
        )?;
        let mut g = Graph::new();
        let pv = self.bind_params(&mut g, false);
        let delta = self.forward_delta(&mut g, &pv, &x_fill, &token_mask)?;
        let y = apply_delta(
            g.value(delta).data(),
            &filled.x_ref,
            motion,
            self.config.overwrite_observed,
        )?;
        Ok(y)
    }
}
