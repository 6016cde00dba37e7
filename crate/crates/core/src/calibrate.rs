//! Grid search over configuration values for a design whose model outputs
//! sit closest to published reference numbers.
//!
//! Only config fields change between candidates: the DMA overhead knee, the
//! CIM macro dimensions, the systolic array size and the throttle interval.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{validate, ArchConfig, ClusterKind, Coproc};
use crate::error::{Error, Result};
use crate::memory::BandwidthBudget;
use crate::pipeline::{balance_length, cluster_ratios, compare_homo_hetero, pipeline_simulate, Design, SimOptions};
use crate::workload::{BandwidthPolicy, ModelConfig, Phase, Scenario};

/// Reference values the search aims at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub gemm_cc_over_mc: f64,
    pub gemv_mc_over_cc: f64,
    pub hetero_over_homo_cc: f64,
    pub hetero_over_homo_mc: f64,
    pub l_e: f64,
    pub latency_cut: f64,
    pub throughput_gain: f64,
    pub batch_throughput_gain: f64,
    pub batch_latency_overhead: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Self {
            gemm_cc_over_mc: 4.3,
            gemv_mc_over_cc: 2.42,
            hetero_over_homo_cc: 1.79,
            hetero_over_homo_mc: 2.65,
            l_e: 36.0,
            latency_cut: 0.403,
            throughput_gain: 2.14,
            batch_throughput_gain: 13.98,
            batch_latency_overhead: 0.42,
        }
    }
}

/// Scenarios the metrics are measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub model: ModelConfig,
    /// Full-model comparison scenario (dynamic policy).
    pub comparison: Scenario,
    pub input_tokens: u64,
    pub short_output: u64,
    pub long_output: u64,
    pub batch: u32,
    pub options: SimOptions,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            model: ModelConfig::sphinx_tiny(),
            comparison: Scenario {
                bandwidth_policy: BandwidthPolicy::Dynamic,
                ..Scenario::new("compare", 64, 24)
            },
            input_tokens: 64,
            short_output: 128,
            long_output: 1024,
            batch: 16,
            options: SimOptions::default(),
        }
    }
}

/// Model outputs compared against [`Targets`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub gemm_cc_over_mc: f64,
    pub gemv_mc_over_cc: f64,
    pub hetero_over_homo_cc: f64,
    pub hetero_over_homo_mc: f64,
    /// homo-CC fastest on encode and prefill, homo-MC fastest on decode,
    /// heterogeneous fastest overall.
    pub ordering_holds: bool,
    pub l_e: u64,
    pub l_b: u64,
    pub latency_cut: f64,
    pub throughput_gain: f64,
    pub batch_throughput_gain: f64,
    pub batch_latency_overhead: f64,
}

impl Metrics {
    pub fn measure(arch: &ArchConfig, setup: &Setup) -> Result<Self> {
        let model = &setup.model;
        let opts = &setup.options;
        let ratios = cluster_ratios(model, arch, &setup.comparison)?;
        let cmp = compare_homo_hetero(model, arch, &setup.comparison, opts)?;
        let fastest = |phase: Option<Phase>| {
            [Design::HomoCc, Design::HomoMc, Design::Hetero]
                .into_iter()
                .min_by_key(|&d| match phase {
                    Some(p) => cmp.row(d).phase(p).cycles,
                    None => cmp.row(d).total_cycles,
                })
                .expect("three designs")
        };
        let ordering_holds = fastest(Some(Phase::Encode)) == Design::HomoCc
            && fastest(Some(Phase::Prefill)) == Design::HomoCc
            && fastest(Some(Phase::Decode)) == Design::HomoMc
            && fastest(None) == Design::Hetero;

        let base = Scenario::new("balance", setup.input_tokens, setup.short_output);
        let balance = balance_length(model, arch, &base, opts)?;
        let equal = pipeline_simulate(model, arch, &base, opts)?;
        let dynamic = pipeline_simulate(
            model,
            arch,
            &Scenario {
                bandwidth_policy: BandwidthPolicy::Dynamic,
                ..base.clone()
            },
            opts,
        )?;
        let long = Scenario {
            output_tokens: setup.long_output,
            ..base
        };
        let single = pipeline_simulate(model, arch, &long, opts)?;
        let batched = pipeline_simulate(
            model,
            arch,
            &Scenario {
                batch: setup.batch,
                ..long
            },
            opts,
        )?;
        Ok(Self {
            gemm_cc_over_mc: ratios.gemm_cc_over_mc,
            gemv_mc_over_cc: ratios.gemv_mc_over_cc,
            hetero_over_homo_cc: cmp.speedup(Design::Hetero, Design::HomoCc, None),
            hetero_over_homo_mc: cmp.speedup(Design::Hetero, Design::HomoMc, None),
            ordering_holds,
            l_e: balance.l_e,
            l_b: balance.l_b,
            latency_cut: 1.0 - dynamic.latency_cycles as f64 / equal.latency_cycles as f64,
            throughput_gain: dynamic.throughput_tokens_per_s / equal.throughput_tokens_per_s,
            batch_throughput_gain: batched.throughput_tokens_per_s / single.throughput_tokens_per_s,
            batch_latency_overhead: batched.latency_cycles as f64 / single.latency_cycles as f64 - 1.0,
        })
    }

    /// Names of the acceptance windows this design misses.
    pub fn misses(&self, t: &Targets) -> Vec<&'static str> {
        let within = |x: f64, target: f64| (x - target).abs() <= 0.4 * target;
        let checks = [
            ("phase ordering", self.ordering_holds),
            ("gemm ratio", (3.0..=6.0).contains(&self.gemm_cc_over_mc)),
            ("gemv ratio", (1.8..=3.2).contains(&self.gemv_mc_over_cc)),
            (
                "hetero over homo-cc",
                within(self.hetero_over_homo_cc, t.hetero_over_homo_cc),
            ),
            (
                "hetero over homo-mc",
                within(self.hetero_over_homo_mc, t.hetero_over_homo_mc),
            ),
            ("balance length", (20..=60).contains(&self.l_e)),
            ("latency cut", self.latency_cut >= 0.25),
            ("throughput gain", self.throughput_gain >= 1.5),
            ("batch throughput gain", self.batch_throughput_gain >= 10.0),
            ("batch latency overhead", self.batch_latency_overhead <= 0.6),
        ];
        checks.into_iter().filter(|(_, ok)| !ok).map(|(n, _)| n).collect()
    }

    /// Sum of squared log errors against the targets.
    pub fn score(&self, t: &Targets) -> f64 {
        let sq = |x: f64, target: f64| {
            let e = (x.max(1e-9) / target).ln();
            e * e
        };
        sq(self.gemm_cc_over_mc, t.gemm_cc_over_mc)
            + sq(self.gemv_mc_over_cc, t.gemv_mc_over_cc)
            + sq(self.hetero_over_homo_cc, t.hetero_over_homo_cc)
            + sq(self.hetero_over_homo_mc, t.hetero_over_homo_mc)
            + sq(self.l_e as f64, t.l_e)
            + sq(self.latency_cut, t.latency_cut)
            + sq(self.throughput_gain, t.throughput_gain)
            + sq(self.batch_throughput_gain, t.batch_throughput_gain)
            + sq(self.batch_latency_overhead, t.batch_latency_overhead)
    }
}

/// Values tried for each calibrated field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub dma_overhead_bytes: Vec<f64>,
    pub cim_cols: Vec<u32>,
    pub cim_depth: Vec<u32>,
    pub sa_dims: Vec<u32>,
    pub throttle_intervals: Vec<u64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            dma_overhead_bytes: vec![12_288.0, 16_384.0, 20_480.0, 24_576.0, 28_672.0, 32_768.0],
            cim_cols: vec![64, 96, 128],
            cim_depth: vec![128, 256],
            sa_dims: vec![16],
            throttle_intervals: vec![1_000, 2_000, 5_000, 10_000, 20_000, 50_000],
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub arch: ArchConfig,
    pub metrics: Metrics,
    pub score: f64,
    pub misses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub best: Candidate,
    /// Every grid point in evaluation order.
    pub candidates: Vec<Candidate>,
}

/// `base` with the given knob values; MC data memory is resized to hold the
/// cores' macros plus the shared buffer.
pub fn apply_knobs(base: &ArchConfig, overhead: f64, cim_cols: u32, cim_depth: u32, sa_dim: u32) -> ArchConfig {
    let mut arch = base.clone();
    arch.dma_overhead_bytes = overhead;
    if let Coproc::Systolic(ref mut sa) = arch.cc_cluster.coproc {
        sa.rows = sa_dim;
        sa.cols = sa_dim;
    }
    if let Coproc::Cim(ref mut cim) = arch.mc_cluster.coproc {
        cim.cols = cim_cols;
        cim.depth = cim_depth;
        arch.mc_cluster.data_memory_bytes =
            u64::from(arch.mc_cluster.cores) * cim.macro_bytes() + arch.shared_buffer_bytes;
    }
    arch
}

/// Smallest interval in which every cluster's budget, under every ratio in
/// `ratios`, covers one full DMA chunk.
pub fn fit_interval(arch: &ArchConfig, ratios: &[(u32, u32)], intervals: &[u64]) -> Result<u64> {
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    for t in sorted {
        let probe = ArchConfig {
            throttle_interval_cycles: t,
            ..arch.clone()
        };
        let mut ok = true;
        for &(cc, mc) in ratios.iter().chain(std::iter::once(&(1, 1))) {
            let budget = BandwidthBudget::from_ratio(&probe, cc, mc)?;
            for kind in [ClusterKind::ComputeCentric, ClusterKind::MemoryCentric] {
                let chunk = probe.cluster(kind).dma_chunk_bytes(probe.dma_buffers) as f64;
                ok &= budget.per_cluster(kind) >= chunk;
            }
        }
        if ok {
            return Ok(t);
        }
    }
    Err(Error::InvalidConfig(
        "no throttle interval in the grid covers a DMA chunk".into(),
    ))
}

/// Evaluates every grid point and picks the best-scoring one that meets all
/// acceptance windows, or the best-scoring one overall if none does.
pub fn calibrate(base: &ArchConfig, setup: &Setup, grid: &Grid, targets: &Targets) -> Result<Calibration> {
    let mut points = Vec::new();
    for &o in &grid.dma_overhead_bytes {
        for &cols in &grid.cim_cols {
            for &depth in &grid.cim_depth {
                for &sa in &grid.sa_dims {
                    points.push(apply_knobs(base, o, cols, depth, sa));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidConfig("calibration grid is empty".into()));
    }
    let candidates = points
        .into_par_iter()
        .map(|mut arch| -> Result<Option<Candidate>> {
            if !validate(&arch).is_ok() {
                return Ok(None);
            }
            arch.throttle_interval_cycles =
                match fit_interval(&arch, &setup.options.ratio_set, &grid.throttle_intervals) {
                    Ok(t) => t,
                    Err(_) => return Ok(None),
                };
            let metrics = Metrics::measure(&arch, setup)?;
            Ok(Some(Candidate {
                score: metrics.score(targets),
                misses: metrics.misses(targets).into_iter().map(String::from).collect(),
                arch,
                metrics,
            }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let best = candidates
        .iter()
        .min_by(|a, b| {
            (!a.misses.is_empty(), a.score)
                .partial_cmp(&(!b.misses.is_empty(), b.score))
                .expect("finite scores")
        })
        .cloned()
        .ok_or_else(|| Error::InvalidConfig("no valid design in the calibration grid".into()))?;
    Ok(Calibration { best, candidates })
}
