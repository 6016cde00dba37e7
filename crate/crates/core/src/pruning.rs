//! Layer-wise dynamic Top-k activation pruning.
//!
//! Every core owns a contiguous slice of the FFN input channels. For each
//! layer it keeps the `k` largest-magnitude channels of its slice and counts
//! how many channels exceed `max / t`; when that count is smaller than `k`,
//! it becomes `k` for the following layers. The first layer is never pruned
//! and `k` starts from the full slice width for every generated token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::ActivationTrace;
use crate::workload::{Activation, Matrix, OperatorGraph, Role, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneParams {
    /// Magnitude ratio below the maximum at which a channel stops counting.
    pub t: f64,
    pub skip_first_layer: bool,
    /// Also prune the FFN intermediate vector feeding the down projection.
    pub prune_vd: bool,
    pub cores: usize,
}

impl Default for PruneParams {
    fn default() -> Self {
        Self {
            t: 16.0,
            skip_first_layer: true,
            prune_vd: false,
            cores: 2,
        }
    }
}

impl PruneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 1.0) {
            return Err(Error::InvalidConfig(format!("threshold t = {} must be > 1", self.t)));
        }
        if self.cores == 0 {
            return Err(Error::InvalidConfig("cores must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Top-k state of one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreState {
    /// Channels kept at the next layer.
    pub k: usize,
    /// Index of the next layer, 0 for the first.
    pub layer: usize,
    /// Channels kept at the last processed layer.
    pub mask: Vec<bool>,
    pub realized_ratio: f64,
}

impl CoreState {
    pub fn new(width: usize) -> Self {
        Self {
            k: width,
            layer: 0,
            mask: vec![true; width],
            realized_ratio: 0.0,
        }
    }
}

/// Indices of the `k` largest `|v|`, lower index first on ties, returned in
/// ascending index order.
pub fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Processes one layer's local slice.
pub fn dynamic_topk_step(v: &[f64], state: &CoreState, params: &PruneParams) -> Result<(Vec<usize>, CoreState)> {
    params.validate()?;
    let d = v.len();
    if d == 0 {
        return Err(Error::EmptyVector);
    }
    let k = if state.layer == 0 && params.skip_first_layer {
        d
    } else {
        state.k.clamp(1, d)
    };
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        let next = CoreState {
            k: 1,
            layer: state.layer + 1,
            mask: vec![false; d],
            realized_ratio: 1.0,
        };
        return Ok((Vec::new(), next));
    }
    let selected = top_k_indices(v, k);
    let threshold = max / params.t;
    let n = v.iter().filter(|x| x.abs() > threshold).count();
    let mut mask = vec![false; d];
    for &i in &selected {
        mask[i] = true;
    }
    let next = CoreState {
        k: if n < k { n.max(1) } else { k },
        layer: state.layer + 1,
        mask,
        realized_ratio: 1.0 - k as f64 / d as f64,
    };
    Ok((selected, next))
}

/// Contiguous channel ranges of `cores` cores over `width` channels; the
/// first `width % cores` cores take one extra channel.
pub fn core_slices(width: usize, cores: usize) -> Vec<std::ops::Range<usize>> {
    let cores = cores.clamp(1, width.max(1));
    let base = width / cores;
    let extra = width % cores;
    let mut start = 0;
    (0..cores)
        .map(|c| {
            let len = base + usize::from(c < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Per-token driver running one [`CoreState`] per core.
#[derive(Debug, Clone)]
pub struct TopkPruner {
    pub params: PruneParams,
    slices: Vec<std::ops::Range<usize>>,
    pub cores: Vec<CoreState>,
}

impl TopkPruner {
    pub fn new(width: usize, params: PruneParams) -> Result<Self> {
        params.validate()?;
        if width == 0 {
            return Err(Error::EmptyVector);
        }
        let slices = core_slices(width, params.cores);
        let cores = slices.iter().map(|s| CoreState::new(s.len())).collect();
        Ok(Self { params, slices, cores })
    }

    /// Restores every core to the full width for a new token.
    pub fn begin_token(&mut self) {
        for (state, slice) in self.cores.iter_mut().zip(&self.slices) {
            *state = CoreState::new(slice.len());
        }
    }

    /// Returns the kept-channel mask over the full vector and the mean
    /// realized ratio across cores.
    pub fn step(&mut self, v: &[f64]) -> Result<(Vec<bool>, f64)> {
        let width = self.slices.last().map_or(0, |s| s.end);
        if v.len() != width {
            return Err(Error::ShapeMismatch(format!("vector of {} for width {width}", v.len())));
        }
        let mut mask = vec![false; width];
        let mut ratio = 0.0;
        for (state, slice) in self.cores.iter_mut().zip(&self.slices) {
            let (selected, next) = dynamic_topk_step(&v[slice.clone()], state, &self.params)?;
            for i in selected {
                mask[slice.start + i] = true;
            }
            ratio += next.realized_ratio;
            *state = next;
        }
        Ok((mask, ratio / self.cores.len() as f64))
    }
}

/// Per-core Top-k at a fixed prune ratio: each core keeps
/// `ceil((1 - ratio) * width)` channels.
pub fn fixed_ratio_mask(v: &[f64], ratio: f64, cores: usize) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::RatioOutOfRange(ratio));
    }
    let mut mask = vec![false; v.len()];
    for slice in core_slices(v.len(), cores) {
        let keep = ((1.0 - ratio) * slice.len() as f64).ceil() as usize;
        for i in top_k_indices(&v[slice.clone()], keep) {
            mask[slice.start + i] = true;
        }
    }
    Ok(mask)
}

/// Pearson (non-excess) kurtosis `m4 / m2^2` of the entries.
pub fn kurtosis(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::UndefinedMetric("kurtosis needs at least two values"));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(m2, m4), x| {
        let d = x - mean;
        let d2 = d * d;
        (m2 + d2, m4 + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        return Err(Error::UndefinedMetric("kurtosis of a constant vector"));
    }
    Ok(m4 / (m2 * m2))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero vector"));
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Weights of one gated FFN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub up: Matrix,
    pub gate: Matrix,
    pub down: Matrix,
    pub act: Activation,
}

impl FfnWeights {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`.
    pub fn random(d_model: usize, d_ffn: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        let mut mat = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                })
                .collect::<Vec<f64>>();
            Matrix { rows, cols, data }
        };
        let up = mat(d_ffn, d_model);
        let gate = mat(d_ffn, d_model);
        let down = mat(d_model, d_ffn);
        Self { up, gate, down, act }
    }

    /// One random layer per trace layer, seeded.
    pub fn random_stack(layers: usize, d_model: usize, d_ffn: usize, act: Activation, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..layers)
            .map(|_| Self::random(d_model, d_ffn, act, &mut rng))
            .collect()
    }

    pub fn intermediate(&self, v_x: &[f64]) -> Result<Vec<f64>> {
        let up = self.up.matvec(v_x)?;
        let gate = self.gate.matvec(v_x)?;
        Ok(up.iter().zip(&gate).map(|(u, g)| u * self.act.apply(*g)).collect())
    }

    pub fn forward(&self, v_x: &[f64]) -> Result<Vec<f64>> {
        crate::workload::ffn_reference(v_x, &self.up, &self.gate, &self.down, self.act)
    }
}

fn apply_mask(v: &[f64], mask: &[bool]) -> Vec<f64> {
    v.iter()
        .zip(mask)
        .map(|(x, &keep)| if keep { *x } else { 0.0 })
        .collect()
}

/// Per-layer means over tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFidelity {
    pub layer: usize,
    pub kurtosis: f64,
    pub dynamic_cosine: f64,
    pub fixed_01_cosine: f64,
    pub fixed_07_cosine: f64,
    /// Mean realized prune ratio of `V_x`.
    pub vx_ratio: f64,
    /// Mean realized prune ratio of `V_d`; zero unless `prune_vd`.
    pub vd_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub layers: Vec<LayerFidelity>,
}

impl FidelityReport {
    fn mean(&self, f: impl Fn(&LayerFidelity) -> f64) -> f64 {
        self.layers.iter().map(f).sum::<f64>() / self.layers.len().max(1) as f64
    }

    pub fn mean_dynamic_cosine(&self) -> f64 {
        self.mean(|l| l.dynamic_cosine)
    }

    pub fn mean_fixed_01_cosine(&self) -> f64 {
        self.mean(|l| l.fixed_01_cosine)
    }

    pub fn mean_fixed_07_cosine(&self) -> f64 {
        self.mean(|l| l.fixed_07_cosine)
    }

    pub fn mean_vx_ratio(&self) -> f64 {
        self.mean(|l| l.vx_ratio)
    }

    pub fn vx_ratios(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.vx_ratio).collect()
    }

    pub fn vd_ratios(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.vd_ratio).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Sample {
    kurtosis: f64,
    dynamic: f64,
    fixed_01: f64,
    fixed_07: f64,
    vx_ratio: f64,
    vd_ratio: f64,
}

/// Fidelity of an FFN output after a kept-channel mask on `V_x` (and,
/// optionally, a dynamic mask on `V_d`).
fn masked_output(
    w: &FfnWeights,
    v: &[f64],
    mask: &[bool],
    vd_pruner: Option<&mut TopkPruner>,
) -> Result<(Vec<f64>, f64)> {
    let mut v_d = w.intermediate(&apply_mask(v, mask))?;
    let mut ratio = 0.0;
    if let Some(p) = vd_pruner {
        let (m, r) = p.step(&v_d)?;
        v_d = apply_mask(&v_d, &m);
        ratio = r;
    }
    Ok((w.down.matvec(&v_d)?, ratio))
}

fn eval_token(
    trace: &ActivationTrace,
    weights: &[FfnWeights],
    params: &PruneParams,
    token: usize,
) -> Result<Vec<Sample>> {
    let mut pruner = TopkPruner::new(trace.d_model, *params)?;
    let mut vd_pruner = if params.prune_vd {
        Some(TopkPruner::new(trace.d_ffn, *params)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(trace.layers);
    for (layer, w) in weights.iter().enumerate() {
        let v: Vec<f64> = trace.vx(token, layer).iter().map(|&x| f64::from(x)).collect();
        let reference = w.forward(&v)?;
        let (mask, vx_ratio) = pruner.step(&v)?;
        let (dynamic_out, vd_ratio) = masked_output(w, &v, &mask, vd_pruner.as_mut())?;
        let f01 = masked_output(w, &v, &fixed_ratio_mask(&v, 0.1, params.cores)?, None)?.0;
        let f07 = masked_output(w, &v, &fixed_ratio_mask(&v, 0.7, params.cores)?, None)?.0;
        out.push(Sample {
            kurtosis: kurtosis(&v)?,
            dynamic: cosine_similarity(&dynamic_out, &reference)?,
            fixed_01: cosine_similarity(&f01, &reference)?,
            fixed_07: cosine_similarity(&f07, &reference)?,
            vx_ratio,
            vd_ratio,
        });
    }
    Ok(out)
}

/// Runs every token of `trace` through the unpruned FFN, the dynamic scheme
/// and fixed-ratio baselines 0.1 and 0.7, and averages per layer.
pub fn pruned_ffn_eval(
    trace: &ActivationTrace,
    weights: &[FfnWeights],
    params: &PruneParams,
) -> Result<FidelityReport> {
    params.validate()?;
    trace.validate()?;
    if weights.len() != trace.layers {
        return Err(Error::ShapeMismatch(format!(
            "{} weight layers for a {}-layer trace",
            weights.len(),
            trace.layers
        )));
    }
    for w in weights {
        if w.up.cols != trace.d_model || w.up.rows != trace.d_ffn {
            return Err(Error::ShapeMismatch("FFN weights do not match trace widths".into()));
        }
    }
    let per_token: Vec<Vec<Sample>> = (0..trace.tokens)
        .into_par_iter()
        .map(|t| eval_token(trace, weights, params, t))
        .collect::<Result<_>>()?;
    let n = trace.tokens as f64;
    let layers = (0..trace.layers)
        .map(|l| {
            let sum = per_token.iter().fold(Sample::default(), |acc, tok| {
                let s = tok[l];
                Sample {
                    kurtosis: acc.kurtosis + s.kurtosis,
                    dynamic: acc.dynamic + s.dynamic,
                    fixed_01: acc.fixed_01 + s.fixed_01,
                    fixed_07: acc.fixed_07 + s.fixed_07,
                    vx_ratio: acc.vx_ratio + s.vx_ratio,
                    vd_ratio: acc.vd_ratio + s.vd_ratio,
                }
            });
            LayerFidelity {
                layer: l,
                kurtosis: sum.kurtosis / n,
                dynamic_cosine: sum.dynamic / n,
                fixed_01_cosine: sum.fixed_01 / n,
                fixed_07_cosine: sum.fixed_07 / n,
                vx_ratio: sum.vx_ratio / n,
                vd_ratio: sum.vd_ratio / n,
            }
        })
        .collect();
    Ok(FidelityReport { layers })
}

/// Prune ratios per LLM layer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerRatios {
    pub vx: Vec<f64>,
    /// Ratios applied to the down projection; `None` leaves it dense.
    pub vd: Option<Vec<f64>>,
}

impl LayerRatios {
    pub fn uniform(layers: usize, ratio: f64) -> Self {
        Self {
            vx: vec![ratio; layers],
            vd: None,
        }
    }

    /// Stretches or squeezes the ratios onto `layers` layers by relative depth.
    pub fn resample(&self, layers: usize) -> Self {
        let pick = |src: &[f64]| -> Vec<f64> {
            if src.is_empty() {
                return vec![0.0; layers];
            }
            (0..layers)
                .map(|l| {
                    let pos = if layers <= 1 {
                        0.0
                    } else {
                        l as f64 * (src.len() - 1) as f64 / (layers - 1) as f64
                    };
                    src[(pos.round() as usize).min(src.len() - 1)]
                })
                .collect()
        };
        Self {
            vx: pick(&self.vx),
            vd: self.vd.as_deref().map(pick),
        }
    }
}

fn scaled(value: u64, keep: f64) -> u64 {
    (value as f64 * keep).round() as u64
}

/// Shrinks the prunable FFN GEMVs of `graph` by the per-layer ratios.
pub fn traffic_reduction(graph: &OperatorGraph, ratios: &LayerRatios) -> Result<OperatorGraph> {
    let all = ratios.vx.iter().chain(ratios.vd.iter().flatten());
    if let Some(&bad) = all.into_iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::RatioOutOfRange(bad));
    }
    let mut out = graph.clone();
    for k in out.kernels.iter_mut().filter(|k| k.prunable) {
        let layer = k.layer as usize;
        let ratio = match k.role {
            Role::FfnUp | Role::FfnGate => ratios.vx.get(layer).copied(),
            Role::FfnDown => match &ratios.vd {
                Some(vd) => vd.get(layer).copied(),
                None => Some(0.0),
            },
            _ => Some(0.0),
        }
        .ok_or_else(|| Error::ShapeMismatch(format!("no prune ratio for layer {layer}")))?;
        if ratio == 0.0 {
            continue;
        }
        let keep = 1.0 - ratio;
        if let Shape::Gemv { d_out, d_in, batch } = k.shape {
            let kept_in = ((d_in as f64 * keep).ceil() as u64).max(1);
            k.shape = Shape::Gemv {
                d_out,
                d_in: kept_in,
                batch,
            };
        }
        k.weight_bytes = scaled(k.weight_bytes, keep);
        k.flops = scaled(k.flops, keep);
    }
    Ok(out)
}
