//! Hardware description consumed by every other module.
//!
//! The chip is organised as `groups`, each holding some compute-centric (CC)
//! clusters built from systolic-array cores and some memory-centric (MC)
//! clusters built from digital compute-in-memory cores. All clusters share a
//! single DRAM channel through per-cluster DMA engines.
//!
//! Default dimensions are calibration choices; the reference design never
//! publishes array or macro sizes. See `docs/calibration.md`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight-stationary systolic array attached to a CC core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaSpec {
    /// PE rows (R); the reduction extent of one weight tile.
    pub rows: u32,
    /// PE columns (C); the output extent of one weight tile.
    pub cols: u32,
    #[serde(default = "default_matrix_registers")]
    pub matrix_registers: u32,
    #[serde(default = "default_operand_bits")]
    pub operand_bits: u32,
}

fn default_matrix_registers() -> u32 {
    4
}

fn default_operand_bits() -> u32 {
    16
}

impl SaSpec {
    pub fn macs_per_cycle(&self) -> f64 {
        f64::from(self.rows) * f64::from(self.cols)
    }
}

impl Default for SaSpec {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            matrix_registers: 4,
            operand_bits: 16,
        }
    }
}

/// Digital CIM macro attached to an MC core.
///
/// Each of the `cols` columns holds `subarrays` subarrays of `depth` x
/// `weight_bits` bit-cells. Activations are broadcast bit-serially, one bit
/// per cycle, so a full multiply takes `act_bits` cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CimSpec {
    pub cols: u32,
    pub subarrays: u32,
    pub depth: u32,
    pub weight_bits: u32,
    pub act_bits: u32,
}

impl CimSpec {
    pub fn capacity_weights(&self) -> u64 {
        u64::from(self.depth) * u64::from(self.subarrays) * u64::from(self.cols)
    }

    pub fn macro_bytes(&self) -> u64 {
        self.capacity_weights() * u64::from(self.weight_bits) / 8
    }

    /// Bit-serial amortised MAC rate: R*C products every W cycles.
    pub fn macs_per_cycle(&self) -> f64 {
        f64::from(self.subarrays) * f64::from(self.cols) / f64::from(self.act_bits)
    }
}

impl Default for CimSpec {
    fn default() -> Self {
        Self {
            cols: 96,
            subarrays: 16,
            depth: 256,
            weight_bits: 8,
            act_bits: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterKind {
    ComputeCentric,
    MemoryCentric,
}

impl ClusterKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            Self::ComputeCentric => "cc",
            Self::MemoryCentric => "mc",
        }
    }
}

impl std::fmt::Display for ClusterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Coproc {
    Systolic(SaSpec),
    Cim(CimSpec),
}

impl Coproc {
    pub fn natural_kind(&self) -> ClusterKind {
        match self {
            Self::Systolic(_) => ClusterKind::ComputeCentric,
            Self::Cim(_) => ClusterKind::MemoryCentric,
        }
    }

    pub fn macs_per_cycle(&self) -> f64 {
        match self {
            Self::Systolic(sa) => sa.macs_per_cycle(),
            Self::Cim(cim) => cim.macs_per_cycle(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub kind: ClusterKind,
    pub cores: u32,
    pub data_memory_bytes: u64,
    /// Elements processed per cycle by one core's vector unit.
    #[serde(default = "default_vector_lanes")]
    pub vector_lanes: u32,
    pub coproc: Coproc,
}

fn default_vector_lanes() -> u32 {
    16
}

impl ClusterSpec {
    pub fn default_cc() -> Self {
        Self {
            kind: ClusterKind::ComputeCentric,
            cores: 4,
            data_memory_bytes: 128 * 1024,
            vector_lanes: 16,
            coproc: Coproc::Systolic(SaSpec::default()),
        }
    }

    /// MC cluster whose data memory is its cores' macros plus the shared buffer.
    pub fn default_mc(shared_buffer_bytes: u64) -> Self {
        let cim = CimSpec::default();
        let cores = 2;
        Self {
            kind: ClusterKind::MemoryCentric,
            cores,
            data_memory_bytes: u64::from(cores) * cim.macro_bytes() + shared_buffer_bytes,
            vector_lanes: 16,
            coproc: Coproc::Cim(cim),
        }
    }

    /// Largest block one core's DMA share can land per transfer.
    pub fn dma_chunk_bytes(&self, dma_buffers: u32) -> u64 {
        let div = u64::from(self.cores.max(1)) * u64::from(dma_buffers.max(1));
        self.data_memory_bytes / div
    }

    pub fn macs_per_cycle(&self) -> f64 {
        f64::from(self.cores) * self.coproc.macs_per_cycle()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub groups: u32,
    pub cc_clusters_per_group: u32,
    pub mc_clusters_per_group: u32,
    pub clock_hz: f64,
    pub dram_bandwidth_bytes_per_s: f64,
    /// Knee of the DMA effective-bandwidth curve, in bytes.
    pub dma_overhead_bytes: f64,
    /// Buffers each core's DMA share is split into (2 = double buffering).
    #[serde(default = "default_dma_buffers")]
    pub dma_buffers: u32,
    pub shared_buffer_bytes: u64,
    /// Throttling interval T, in cycles.
    #[serde(default = "default_interval")]
    pub throttle_interval_cycles: u64,
    pub cc_cluster: ClusterSpec,
    pub mc_cluster: ClusterSpec,
}

fn default_dma_buffers() -> u32 {
    2
}

fn default_interval() -> u64 {
    10_000
}

impl Default for ArchConfig {
    fn default() -> Self {
        let shared_buffer_bytes = 16 * 1024;
        Self {
            groups: 4,
            cc_clusters_per_group: 2,
            mc_clusters_per_group: 2,
            clock_hz: 1.0e9,
            dram_bandwidth_bytes_per_s: 336.0e9,
            dma_overhead_bytes: 20_480.0,
            dma_buffers: 2,
            shared_buffer_bytes,
            throttle_interval_cycles: 10_000,
            cc_cluster: ClusterSpec::default_cc(),
            mc_cluster: ClusterSpec::default_mc(shared_buffer_bytes),
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msg = self
                .violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::InvalidConfig(msg))
        }
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_cluster(report: &mut ValidationReport, name: &str, spec: &ClusterSpec, used: bool) {
    if spec.coproc.natural_kind() != spec.kind {
        report.push(
            format!("{name}.coproc"),
            format!(
                "coproc kind mismatch: {} cluster carries a {} coprocessor",
                spec.kind,
                spec.coproc.natural_kind()
            ),
        );
    }
    if !used {
        return;
    }
    if spec.cores == 0 {
        report.push(format!("{name}.cores"), "cores must be ≥ 1");
    }
    if spec.data_memory_bytes == 0 {
        report.push(format!("{name}.data_memory_bytes"), "data memory must be > 0");
    }
    if spec.vector_lanes == 0 {
        report.push(format!("{name}.vector_lanes"), "vector lanes must be ≥ 1");
    }
    match spec.coproc {
        Coproc::Systolic(sa) => {
            if sa.rows == 0 || sa.cols == 0 {
                report.push(format!("{name}.coproc"), "systolic dims R, C must be ≥ 1");
            }
            if sa.matrix_registers < 2 {
                report.push(
                    format!("{name}.coproc.matrix_registers"),
                    "matrix_register_count must be ≥ 2",
                );
            }
            if sa.operand_bits == 0 {
                report.push(format!("{name}.coproc.operand_bits"), "operand bits must be ≥ 1");
            }
        }
        Coproc::Cim(cim) => {
            if cim.capacity_weights() == 0 {
                report.push(format!("{name}.coproc"), "CIM capacity must be > 0");
            }
            if !matches!(cim.weight_bits, 4 | 8 | 16) {
                report.push(
                    format!("{name}.coproc.weight_bits"),
                    "weight bits N must be one of 4, 8, 16",
                );
            }
            if cim.act_bits == 0 {
                report.push(format!("{name}.coproc.act_bits"), "activation bits W must be ≥ 1");
            }
            let need = u64::from(spec.cores) * cim.macro_bytes();
            if spec.data_memory_bytes < need {
                report.push(
                    format!("{name}.data_memory_bytes"),
                    format!(
                        "data memory {} smaller than the cores' macros ({need})",
                        spec.data_memory_bytes
                    ),
                );
            }
        }
    }
}

/// Reports every violated invariant; never fails.
pub fn validate(cfg: &ArchConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    if cfg.groups == 0 {
        report.push("groups", "groups must be ≥ 1");
    }
    if cfg.cc_clusters_per_group == 0 && cfg.mc_clusters_per_group == 0 {
        report.push("clusters", "at least one cluster per group is required");
    }
    let cc_used = cfg.cc_clusters_per_group > 0;
    let mc_used = cfg.mc_clusters_per_group > 0;
    check_cluster(&mut report, "cc_cluster", &cfg.cc_cluster, cc_used);
    check_cluster(&mut report, "mc_cluster", &cfg.mc_cluster, mc_used);
    if cc_used && mc_used && cfg.mc_cluster.data_memory_bytes < cfg.cc_cluster.data_memory_bytes {
        report.push(
            "mc_cluster.data_memory_bytes",
            "MC cluster data memory must be at least the CC cluster's",
        );
    }
    if !(cfg.clock_hz.is_finite() && cfg.clock_hz > 0.0) {
        report.push("clock_hz", "clock must be finite and > 0");
    }
    if !(cfg.dram_bandwidth_bytes_per_s.is_finite() && cfg.dram_bandwidth_bytes_per_s > 0.0) {
        report.push("dram_bandwidth_bytes_per_s", "DRAM bandwidth must be finite and > 0");
    }
    if !(cfg.dma_overhead_bytes.is_finite() && cfg.dma_overhead_bytes >= 0.0) {
        report.push("dma_overhead_bytes", "DMA overhead must be finite and ≥ 0");
    }
    if cfg.dma_buffers == 0 {
        report.push("dma_buffers", "dma_buffers must be ≥ 1");
    }
    if cfg.throttle_interval_cycles == 0 {
        report.push("throttle_interval_cycles", "interval T must be ≥ 1");
    }
    if report.is_ok() {
        let peak = peak_flops(cfg);
        if !(peak.is_finite() && peak > 0.0) {
            report.push("peak_flops", "peak MAC throughput must be finite and > 0");
        }
    }
    report
}

impl ArchConfig {
    pub fn cc_clusters(&self) -> u32 {
        self.groups * self.cc_clusters_per_group
    }

    pub fn mc_clusters(&self) -> u32 {
        self.groups * self.mc_clusters_per_group
    }

    pub fn clusters(&self) -> u32 {
        self.cc_clusters() + self.mc_clusters()
    }

    pub fn cc_cores(&self) -> u32 {
        self.cc_clusters() * self.cc_cluster.cores
    }

    pub fn mc_cores(&self) -> u32 {
        self.mc_clusters() * self.mc_cluster.cores
    }

    pub fn total_cores(&self) -> u32 {
        self.cc_cores() + self.mc_cores()
    }

    pub fn dram_bytes_per_cycle(&self) -> f64 {
        self.dram_bandwidth_bytes_per_s / self.clock_hz
    }

    pub fn cluster(&self, kind: ClusterKind) -> &ClusterSpec {
        match kind {
            ClusterKind::ComputeCentric => &self.cc_cluster,
            ClusterKind::MemoryCentric => &self.mc_cluster,
        }
    }

    pub fn cluster_count(&self, kind: ClusterKind) -> u32 {
        match kind {
            ClusterKind::ComputeCentric => self.cc_clusters(),
            ClusterKind::MemoryCentric => self.mc_clusters(),
        }
    }

    /// Rewrites the chip so every cluster is of `kind`, holding the per-group
    /// core count constant.
    pub fn homogeneous(&self, kind: ClusterKind) -> Result<ArchConfig> {
        let per_group =
            self.cc_clusters_per_group * self.cc_cluster.cores + self.mc_clusters_per_group * self.mc_cluster.cores;
        let cores = self.cluster(kind).cores;
        if cores == 0 || !per_group.is_multiple_of(cores) {
            return Err(Error::InvalidConfig(format!(
                "{per_group} cores per group cannot be regrouped into {kind} clusters of {cores}"
            )));
        }
        let mut out = self.clone();
        match kind {
            ClusterKind::ComputeCentric => {
                out.cc_clusters_per_group = per_group / cores;
                out.mc_clusters_per_group = 0;
            }
            ClusterKind::MemoryCentric => {
                out.mc_clusters_per_group = per_group / cores;
                out.cc_clusters_per_group = 0;
            }
        }
        Ok(out)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Peak coprocessor throughput in FLOP/s (2 FLOPs per MAC).
pub fn peak_flops(cfg: &ArchConfig) -> f64 {
    let cc = f64::from(cfg.cc_clusters()) * cfg.cc_cluster.macs_per_cycle();
    let mc = f64::from(cfg.mc_clusters()) * cfg.mc_cluster.macs_per_cycle();
    (cc + mc) * 2.0 * cfg.clock_hz
}
