//! Operator graphs for multimodal LLM inference.
//!
//! A [`ModelConfig`] describes a vision encoder, a projector and a decoder-only
//! LLM. [`build_graph`] expands it into three phases:
//!
//! * encode: patch stem, encoder blocks and projector, as GEMMs;
//! * prefill: LLM blocks over the `input_tokens` prompt, as GEMMs;
//! * decode: `output_tokens` steps of LLM blocks as GEMVs, with attention
//!   reading a KV cache that grows by one entry per step.
//!
//! Attention is accounted at FLOP/byte granularity only. Score matrices and
//! softmax stay on chip, so elementwise and softmax kernels move no DRAM bytes.
//! Heads are folded into the matrix dimensions of a single kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Silu,
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Silu => x / (1.0 + (-x).exp()),
            Self::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044_715 * x * x * x)).tanh())
            }
            Self::Identity => x,
        }
    }
}

fn default_kv_heads() -> u32 {
    0
}

fn default_true() -> bool {
    true
}

fn default_patch_dim() -> u64 {
    3 * 14 * 14
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub encoder_layers: u32,
    pub encoder_d_model: u64,
    pub encoder_d_ffn: u64,
    pub encoder_heads: u32,
    /// Images (or image crops) encoded per request.
    pub encoder_images: u32,
    pub encoder_tokens_per_image: u64,
    /// Flattened patch length fed to the stem GEMM.
    #[serde(default = "default_patch_dim")]
    pub encoder_patch_dim: u64,
    pub llm_layers: u32,
    pub d_model: u64,
    pub d_ffn: u64,
    pub heads: u32,
    /// Key/value heads; 0 means equal to `heads`.
    #[serde(default = "default_kv_heads")]
    pub kv_heads: u32,
    pub weight_bytes_per_elem: u64,
    pub act_bytes_per_elem: u64,
    pub activation_fn: Activation,
    #[serde(default = "default_true")]
    pub gated_ffn: bool,
}

impl ModelConfig {
    pub fn effective_kv_heads(&self) -> u32 {
        if self.kv_heads == 0 {
            self.heads
        } else {
            self.kv_heads
        }
    }

    pub fn head_dim(&self) -> u64 {
        self.d_model / u64::from(self.heads.max(1))
    }

    pub fn encoder_head_dim(&self) -> u64 {
        self.encoder_d_model / u64::from(self.encoder_heads.max(1))
    }

    pub fn encoder_tokens(&self) -> u64 {
        u64::from(self.encoder_images) * self.encoder_tokens_per_image
    }

    fn kv_width(&self) -> u64 {
        u64::from(self.effective_kv_heads()) * self.head_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let dims = [
            ("llm_layers", u64::from(self.llm_layers)),
            ("d_model", self.d_model),
            ("d_ffn", self.d_ffn),
            ("heads", u64::from(self.heads)),
            ("weight_bytes_per_elem", self.weight_bytes_per_elem),
            ("act_bytes_per_elem", self.act_bytes_per_elem),
        ];
        for (name, v) in dims {
            if v == 0 {
                bad.push(format!("{name} must be ≥ 1"));
            }
        }
        if self.d_ffn < self.d_model {
            bad.push("d_ffn must be ≥ d_model".to_string());
        }
        if self.heads > 0 && !self.d_model.is_multiple_of(u64::from(self.heads)) {
            bad.push("d_model must be divisible by heads".to_string());
        }
        let kv = self.effective_kv_heads();
        if kv == 0 || !self.heads.is_multiple_of(kv) {
            bad.push("heads must be a multiple of kv_heads".to_string());
        }
        if self.encoder_layers > 0 {
            let enc = [
                ("encoder_d_model", self.encoder_d_model),
                ("encoder_d_ffn", self.encoder_d_ffn),
                ("encoder_heads", u64::from(self.encoder_heads)),
                ("encoder_images", u64::from(self.encoder_images)),
                ("encoder_tokens_per_image", self.encoder_tokens_per_image),
                ("encoder_patch_dim", self.encoder_patch_dim),
            ];
            for (name, v) in enc {
                if v == 0 {
                    bad.push(format!("{name} must be ≥ 1"));
                }
            }
            if self.encoder_heads > 0 && !self.encoder_d_model.is_multiple_of(u64::from(self.encoder_heads)) {
                bad.push("encoder_d_model must be divisible by encoder_heads".to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }

    /// Weight elements of one LLM block (attention projections and FFN).
    pub fn llm_block_params(&self) -> u64 {
        let d = self.d_model;
        let attn = d * (d + 2 * self.kv_width()) + d * d;
        attn + self.ffn_block_params()
    }

    pub fn ffn_block_params(&self) -> u64 {
        let mats = if self.gated_ffn { 3 } else { 2 };
        mats * self.d_model * self.d_ffn
    }

    /// Bytes of LLM block weights streamed per decode step (embedding and
    /// output head excluded).
    pub fn llm_weight_bytes(&self) -> u64 {
        u64::from(self.llm_layers) * self.llm_block_params() * self.weight_bytes_per_elem
    }

    pub fn ffn_weight_bytes(&self) -> u64 {
        u64::from(self.llm_layers) * self.ffn_block_params() * self.weight_bytes_per_elem
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// TinyLlama-1.1B decoder behind two ViT-L-class branches (CLIP ViT-L/14
    /// and DINOv2-L), folded into one 48-layer stack.
    pub fn sphinx_tiny() -> Self {
        Self {
            name: "sphinx-tiny".into(),
            encoder_layers: 48,
            encoder_d_model: 1024,
            encoder_d_ffn: 4096,
            encoder_heads: 16,
            encoder_images: 5,
            encoder_tokens_per_image: 576,
            encoder_patch_dim: default_patch_dim(),
            llm_layers: 22,
            d_model: 2048,
            d_ffn: 5632,
            heads: 32,
            kv_heads: 4,
            weight_bytes_per_elem: 2,
            act_bytes_per_elem: 2,
            activation_fn: Activation::Silu,
            gated_ffn: true,
        }
    }

    /// Qwen1.5-0.5B decoder behind a SigLIP-so400m-class encoder.
    pub fn karmavlm() -> Self {
        Self {
            name: "karmavlm".into(),
            encoder_layers: 27,
            encoder_d_model: 1152,
            encoder_d_ffn: 4304,
            encoder_heads: 16,
            encoder_images: 4,
            encoder_tokens_per_image: 729,
            encoder_patch_dim: default_patch_dim(),
            llm_layers: 24,
            d_model: 1024,
            d_ffn: 2816,
            heads: 16,
            kv_heads: 16,
            weight_bytes_per_elem: 2,
            act_bytes_per_elem: 2,
            activation_fn: Activation::Silu,
            gated_ffn: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BandwidthPolicy {
    /// Every cluster gets the same share.
    #[default]
    Equal,
    /// Ratio chosen per output length by the allocation search.
    Dynamic,
    /// Fixed CC:MC per-cluster budget ratio.
    FixedRatio { cc: u32, mc: u32 },
}

fn default_one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(default = "default_one")]
    pub batch: u32,
    #[serde(default)]
    pub pruning_enabled: bool,
    /// Uniform prune ratio; when absent and pruning is enabled the per-layer
    /// ratios measured on the synthetic trace are used.
    #[serde(default)]
    pub prune_ratio: Option<f64>,
    #[serde(default)]
    pub bandwidth_policy: BandwidthPolicy,
}

impl Scenario {
    pub fn new(id: impl Into<String>, input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            id: id.into(),
            input_tokens,
            output_tokens,
            batch: 1,
            pruning_enabled: false,
            prune_ratio: None,
            bandwidth_policy: BandwidthPolicy::Equal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_tokens == 0 || self.output_tokens == 0 || self.batch == 0 {
            return Err(Error::InvalidConfig(format!(
                "scenario {}: input_tokens, output_tokens and batch must be ≥ 1",
                self.id
            )));
        }
        if let Some(r) = self.prune_ratio {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::RatioOutOfRange(r));
            }
        }
        if let BandwidthPolicy::FixedRatio { cc, mc } = self.bandwidth_policy {
            if cc == 0 || mc == 0 {
                return Err(Error::InvalidConfig(format!(
                    "scenario {}: ratio terms must be ≥ 1",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Encode,
    Prefill,
    Decode,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Encode, Phase::Prefill, Phase::Decode];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Encode => "encode",
            Self::Prefill => "prefill",
            Self::Decode => "decode",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    PatchEmbed,
    Qkv,
    AttnScores,
    Softmax,
    AttnContext,
    OutProj,
    FfnUp,
    FfnGate,
    FfnAct,
    FfnDown,
    Projector,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PatchEmbed => "patch-embed",
            Self::Qkv => "qkv",
            Self::AttnScores => "attn-scores",
            Self::Softmax => "softmax",
            Self::AttnContext => "attn-context",
            Self::OutProj => "out-proj",
            Self::FfnUp => "ffn-up",
            Self::FfnGate => "ffn-gate",
            Self::FfnAct => "ffn-act",
            Self::FfnDown => "ffn-down",
            Self::Projector => "projector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Gemm {
        m: u64,
        k: u64,
        n: u64,
    },
    /// `batch` input vectors share one `d_out x d_in` matrix.
    Gemv {
        d_out: u64,
        d_in: u64,
        batch: u64,
    },
    Elementwise {
        len: u64,
    },
    Softmax {
        rows: u64,
        len: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub shape: Shape,
    pub phase: Phase,
    pub role: Role,
    pub layer: u32,
    pub weight_bytes: u64,
    /// Bytes read from the KV cache.
    pub kv_bytes: u64,
    pub act_bytes: u64,
    pub out_bytes: u64,
    pub flops: u64,
    pub prunable: bool,
}

impl Kernel {
    pub fn dram_bytes(&self) -> u64 {
        self.weight_bytes + self.kv_bytes + self.act_bytes + self.out_bytes
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self.shape, Shape::Gemm { .. } | Shape::Gemv { .. })
    }

    /// Multiply-accumulates performed by a matrix kernel.
    pub fn macs(&self) -> u64 {
        match self.shape {
            Shape::Gemm { m, k, n } => m * k * n,
            Shape::Gemv { d_out, d_in, batch } => d_out * d_in * batch,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub kernels: u64,
    pub flops: u64,
    pub weight_bytes: u64,
    pub kv_bytes: u64,
    pub act_bytes: u64,
    pub out_bytes: u64,
}

impl PhaseTotals {
    pub fn dram_bytes(&self) -> u64 {
        self.weight_bytes + self.kv_bytes + self.act_bytes + self.out_bytes
    }

    fn add(&mut self, k: &Kernel) {
        self.kernels += 1;
        self.flops += k.flops;
        self.weight_bytes += k.weight_bytes;
        self.kv_bytes += k.kv_bytes;
        self.act_bytes += k.act_bytes;
        self.out_bytes += k.out_bytes;
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorGraph {
    pub kernels: Vec<Kernel>,
}

impl OperatorGraph {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &Kernel> + '_ {
        self.kernels.iter().filter(move |k| k.phase == phase)
    }

    pub fn phase_kernels(&self, phase: Phase) -> Vec<Kernel> {
        self.phase(phase).copied().collect()
    }

    pub fn totals(&self, phase: Phase) -> PhaseTotals {
        let mut t = PhaseTotals::default();
        self.phase(phase).for_each(|k| t.add(k));
        t
    }

    /// One line per kernel, whitespace-separated, for debugging dumps.
    pub fn listing(&self) -> String {
        let mut out =
            String::from("# phase layer role shape flops weight_bytes kv_bytes act_bytes out_bytes prunable\n");
        for k in &self.kernels {
            let shape = match k.shape {
                Shape::Gemm { m, k, n } => format!("gemm:{m}x{k}x{n}"),
                Shape::Gemv { d_out, d_in, batch } => format!("gemv:{d_out}x{d_in}x{batch}"),
                Shape::Elementwise { len } => format!("elementwise:{len}"),
                Shape::Softmax { rows, len } => format!("softmax:{rows}x{len}"),
            };
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {}\n",
                k.phase,
                k.layer,
                k.role.name(),
                shape,
                k.flops,
                k.weight_bytes,
                k.kv_bytes,
                k.act_bytes,
                k.out_bytes,
                u8::from(k.prunable)
            ));
        }
        out
    }
}

/// Checked product used by every byte and FLOP count.
fn mul(context: &str, factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| Error::Overflow(context.to_string()))
}

struct Builder<'a> {
    model: &'a ModelConfig,
    phase: Phase,
    layer: u32,
    out: Vec<Kernel>,
}

impl Builder<'_> {
    fn gemm(&mut self, role: Role, m: u64, k: u64, n: u64, weights: bool, writes: bool) -> Result<()> {
        let wb = self.model.weight_bytes_per_elem;
        let ab = self.model.act_bytes_per_elem;
        let ctx = role.name();
        let flops = mul(ctx, &[2, m, k, n])?;
        let weight_bytes = if weights { mul(ctx, &[k, n, wb])? } else { 0 };
        let act_bytes = mul(ctx, &[m, k, ab])?;
        let out_bytes = if writes { mul(ctx, &[m, n, ab])? } else { 0 };
        self.out.push(Kernel {
            shape: Shape::Gemm { m, k, n },
            phase: self.phase,
            role,
            layer: self.layer,
            weight_bytes,
            kv_bytes: 0,
            act_bytes,
            out_bytes,
            flops,
            prunable: false,
        });
        Ok(())
    }

    fn gemv(&mut self, role: Role, d_out: u64, d_in: u64, batch: u64) -> Result<()> {
        let wb = self.model.weight_bytes_per_elem;
        let ab = self.model.act_bytes_per_elem;
        let ctx = role.name();
        self.out.push(Kernel {
            shape: Shape::Gemv { d_out, d_in, batch },
            phase: self.phase,
            role,
            layer: self.layer,
            weight_bytes: mul(ctx, &[d_out, d_in, wb])?,
            kv_bytes: 0,
            act_bytes: mul(ctx, &[batch, d_in, ab])?,
            out_bytes: mul(ctx, &[batch, d_out, ab])?,
            flops: mul(ctx, &[2, d_out, d_in, batch])?,
            prunable: matches!(role, Role::FfnUp | Role::FfnGate | Role::FfnDown),
        });
        Ok(())
    }

    /// GEMV against cached keys or values: the matrix is KV-cache data.
    fn kv_gemv(&mut self, role: Role, d_out: u64, d_in: u64, batch: u64) -> Result<()> {
        let ab = self.model.act_bytes_per_elem;
        let ctx = role.name();
        self.out.push(Kernel {
            shape: Shape::Gemv { d_out, d_in, batch },
            phase: self.phase,
            role,
            layer: self.layer,
            weight_bytes: 0,
            kv_bytes: mul(ctx, &[d_out, d_in, ab])?,
            act_bytes: 0,
            out_bytes: 0,
            flops: mul(ctx, &[2, d_out, d_in, batch])?,
            prunable: false,
        });
        Ok(())
    }

    fn vector(&mut self, role: Role, shape: Shape, flops_per_elem: u64) -> Result<()> {
        let elems = match shape {
            Shape::Elementwise { len } => len,
            Shape::Softmax { rows, len } => mul("softmax", &[rows, len])?,
            _ => unreachable!("vector kernels only"),
        };
        self.out.push(Kernel {
            shape,
            phase: self.phase,
            role,
            layer: self.layer,
            weight_bytes: 0,
            kv_bytes: 0,
            act_bytes: 0,
            out_bytes: 0,
            flops: mul(role.name(), &[elems, flops_per_elem])?,
            prunable: false,
        });
        Ok(())
    }
}

/// FLOPs charged per softmax element (max, subtract, exp, sum, divide).
pub const SOFTMAX_FLOPS_PER_ELEM: u64 = 5;

fn ffn_act_flops(gated: bool) -> u64 {
    if gated {
        2
    } else {
        1
    }
}

fn encoder_kernels(model: &ModelConfig) -> Result<Vec<Kernel>> {
    let mut b = Builder {
        model,
        phase: Phase::Encode,
        layer: 0,
        out: Vec::new(),
    };
    if model.encoder_layers == 0 {
        return Ok(b.out);
    }
    let n = model.encoder_tokens();
    let per_image = model.encoder_tokens_per_image;
    let d = model.encoder_d_model;
    let f = model.encoder_d_ffn;
    let heads = u64::from(model.encoder_heads);
    let hd = model.encoder_head_dim();
    b.gemm(Role::PatchEmbed, n, model.encoder_patch_dim, d, true, true)?;
    for layer in 0..model.encoder_layers {
        b.layer = layer;
        b.gemm(Role::Qkv, n, d, 3 * d, true, true)?;
        // Tokens attend within their own image.
        b.gemm(Role::AttnScores, n, hd, mul("attn", &[per_image, heads])?, false, false)?;
        b.vector(
            Role::Softmax,
            Shape::Softmax {
                rows: mul("softmax", &[n, heads])?,
                len: per_image,
            },
            SOFTMAX_FLOPS_PER_ELEM,
        )?;
        b.gemm(Role::AttnContext, n, per_image, d, false, true)?;
        b.gemm(Role::OutProj, n, d, d, true, true)?;
        b.gemm(Role::FfnUp, n, d, f, true, true)?;
        b.vector(
            Role::FfnAct,
            Shape::Elementwise {
                len: mul("act", &[n, f])?,
            },
            ffn_act_flops(false),
        )?;
        b.gemm(Role::FfnDown, n, f, d, true, true)?;
    }
    b.layer = model.encoder_layers - 1;
    b.gemm(Role::Projector, n, d, model.d_model, true, true)?;
    Ok(b.out)
}

fn prefill_kernels(model: &ModelConfig, tokens: u64) -> Result<Vec<Kernel>> {
    let mut b = Builder {
        model,
        phase: Phase::Prefill,
        layer: 0,
        out: Vec::new(),
    };
    let d = model.d_model;
    let f = model.d_ffn;
    let heads = u64::from(model.heads);
    let hd = model.head_dim();
    for layer in 0..model.llm_layers {
        b.layer = layer;
        // Output bytes include the K/V columns written to the cache.
        b.gemm(Role::Qkv, tokens, d, d + 2 * model.kv_width(), true, true)?;
        b.gemm(
            Role::AttnScores,
            tokens,
            hd,
            mul("attn", &[tokens, heads])?,
            false,
            false,
        )?;
        b.vector(
            Role::Softmax,
            Shape::Softmax {
                rows: mul("softmax", &[tokens, heads])?,
                len: tokens,
            },
            SOFTMAX_FLOPS_PER_ELEM,
        )?;
        b.gemm(Role::AttnContext, tokens, tokens, d, false, true)?;
        b.gemm(Role::OutProj, tokens, d, d, true, true)?;
        b.gemm(Role::FfnUp, tokens, d, f, true, true)?;
        if model.gated_ffn {
            b.gemm(Role::FfnGate, tokens, d, f, true, true)?;
        }
        b.vector(
            Role::FfnAct,
            Shape::Elementwise {
                len: mul("act", &[tokens, f])?,
            },
            ffn_act_flops(model.gated_ffn),
        )?;
        b.gemm(Role::FfnDown, tokens, f, d, true, true)?;
    }
    Ok(b.out)
}

/// Kernels of one decode step for `batch` sequences whose context (cached
/// entries including the new token) is `context` long.
pub fn decode_step_kernels(model: &ModelConfig, context: u64, batch: u64) -> Result<Vec<Kernel>> {
    let mut out = Vec::new();
    for layer in 0..model.llm_layers {
        out.extend(decode_layer_kernels(model, layer, context, batch)?);
    }
    Ok(out)
}

pub fn decode_layer_kernels(model: &ModelConfig, layer: u32, context: u64, batch: u64) -> Result<Vec<Kernel>> {
    let mut b = Builder {
        model,
        phase: Phase::Decode,
        layer,
        out: Vec::new(),
    };
    let d = model.d_model;
    let f = model.d_ffn;
    let heads = u64::from(model.heads);
    let kv = u64::from(model.effective_kv_heads());
    let hd = model.head_dim();
    let group = heads / kv;
    b.gemv(Role::Qkv, d + 2 * model.kv_width(), d, batch)?;
    b.kv_gemv(Role::AttnScores, mul("attn", &[context, kv, batch])?, hd, group)?;
    b.vector(
        Role::Softmax,
        Shape::Softmax {
            rows: heads * batch,
            len: context,
        },
        SOFTMAX_FLOPS_PER_ELEM,
    )?;
    b.kv_gemv(Role::AttnContext, mul("attn", &[hd, kv, batch])?, context, group)?;
    b.gemv(Role::OutProj, d, d, batch)?;
    b.gemv(Role::FfnUp, f, d, batch)?;
    if model.gated_ffn {
        b.gemv(Role::FfnGate, f, d, batch)?;
    }
    b.vector(
        Role::FfnAct,
        Shape::Elementwise { len: f * batch },
        ffn_act_flops(model.gated_ffn),
    )?;
    b.gemv(Role::FfnDown, d, f, batch)?;
    Ok(b.out)
}

/// Expands a model and scenario into encode, prefill and decode kernels.
///
/// Encode and prefill describe one request; the decode phase advances all
/// `scen.batch` sequences in lockstep, sharing each weight fetch.
pub fn build_graph(model: &ModelConfig, scen: &Scenario) -> Result<OperatorGraph> {
    model.validate()?;
    scen.validate()?;
    let mut kernels = encoder_kernels(model)?;
    kernels.extend(prefill_kernels(model, scen.input_tokens)?);
    let batch = u64::from(scen.batch);
    for step in 0..scen.output_tokens {
        let context = scen
            .input_tokens
            .checked_add(step + 1)
            .ok_or_else(|| Error::Overflow("context length".into()))?;
        kernels.extend(decode_step_kernels(model, context, batch)?);
    }
    let graph = OperatorGraph { kernels };
    // Aggregates must fit as well as the individual kernels.
    for phase in Phase::ALL {
        graph
            .phase(phase)
            .try_fold(0u64, |acc, k| {
                acc.checked_add(k.dram_bytes()).and_then(|a| a.checked_add(k.flops))
            })
            .ok_or_else(|| Error::Overflow(format!("{phase} totals")))?;
    }
    Ok(graph)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Gated FFN: `w_down · ((w_up · v) ∘ act(w_gate · v))`.
pub fn ffn_reference(
    v_x: &[f64],
    w_up: &Matrix,
    w_gate: &Matrix,
    w_down: &Matrix,
    act: Activation,
) -> Result<Vec<f64>> {
    if w_up.rows != w_gate.rows || w_up.cols != w_gate.cols {
        return Err(Error::ShapeMismatch("w_up and w_gate differ in shape".into()));
    }
    if w_down.cols != w_up.rows {
        return Err(Error::ShapeMismatch(format!(
            "w_down has {} columns but the FFN width is {}",
            w_down.cols, w_up.rows
        )));
    }
    let up = w_up.matvec(v_x)?;
    let gate = w_gate.matvec(v_x)?;
    let v_d: Vec<f64> = up.iter().zip(&gate).map(|(u, g)| u * act.apply(*g)).collect();
    w_down.matvec(&v_d)
}
