//! Two-stage streaming pipeline: CC clusters encode and prefill each request,
//! MC clusters decode. Bandwidth budgets shift DRAM share between the stages
//! and batch decoding amortises weight fetches over several requests.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, ClusterKind, ClusterSpec};
use crate::cycles::{evaluate_kernel, evaluate_kernel_simd, CycleReport, MemoryShare};
use crate::error::{Error, Result};
use crate::memory::BandwidthBudget;
use crate::pruning::{traffic_reduction, LayerRatios};
use crate::workload::{
    build_graph, decode_layer_kernels, BandwidthPolicy, Kernel, ModelConfig, OperatorGraph, Phase, Role, Scenario,
};

/// Accumulated cost of a list of kernels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseReport {
    pub cycles: u64,
    pub compute_cycles: u64,
    pub dram_bytes: u64,
    pub ideal_cycles: f64,
    pub kernels: u64,
}

impl PhaseReport {
    pub fn utilization(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            (self.ideal_cycles / self.cycles as f64).min(1.0)
        }
    }

    fn push(&mut self, r: &CycleReport) {
        self.cycles += r.time_cycles;
        self.compute_cycles += r.compute_cycles;
        self.dram_bytes += r.dram_bytes;
        self.ideal_cycles += r.ideal_cycles;
        self.kernels += 1;
    }

    fn add(&self, o: &PhaseReport) -> PhaseReport {
        PhaseReport {
            cycles: self.cycles + o.cycles,
            compute_cycles: self.compute_cycles + o.compute_cycles,
            dram_bytes: self.dram_bytes + o.dram_bytes,
            ideal_cycles: self.ideal_cycles + o.ideal_cycles,
            kernels: self.kernels + o.kernels,
        }
    }

    fn scale(&self, times: u64) -> PhaseReport {
        PhaseReport {
            cycles: self.cycles * times,
            compute_cycles: self.compute_cycles * times,
            dram_bytes: self.dram_bytes * times,
            ideal_cycles: self.ideal_cycles * times as f64,
            kernels: self.kernels * times,
        }
    }
}

/// Execution engine for a set of kernels: some clusters of one kind, or the
/// scalar baseline, with a DRAM share.
#[derive(Debug, Clone, Copy)]
pub enum Engine<'a> {
    Clusters {
        spec: &'a ClusterSpec,
        clusters: u32,
        share: MemoryShare,
        dma_buffers: u32,
    },
    Scalar {
        cores: u32,
        lanes: u32,
        share: MemoryShare,
    },
}

impl<'a> Engine<'a> {
    /// `clusters` clusters of `kind` moving `bytes_per_cycle` in total.
    pub fn pool(arch: &'a ArchConfig, kind: ClusterKind, clusters: u32, bytes_per_cycle: f64) -> Self {
        let spec = arch.cluster(kind);
        Engine::Clusters {
            spec,
            clusters,
            share: MemoryShare {
                bytes_per_cycle,
                chunk_bytes: spec.dma_chunk_bytes(arch.dma_buffers),
                overhead_bytes: arch.dma_overhead_bytes,
            },
            dma_buffers: arch.dma_buffers,
        }
    }

    /// Every core of `arch` as scalar 1-MAC/cycle cores with the whole channel.
    pub fn scalar(arch: &ArchConfig) -> Self {
        Engine::Scalar {
            cores: arch.total_cores(),
            lanes: arch.cc_cluster.vector_lanes,
            share: MemoryShare {
                bytes_per_cycle: arch.dram_bytes_per_cycle(),
                chunk_bytes: arch.cc_cluster.dma_chunk_bytes(arch.dma_buffers),
                overhead_bytes: arch.dma_overhead_bytes,
            },
        }
    }

    pub fn kernel(&self, k: &Kernel) -> Result<CycleReport> {
        match *self {
            Engine::Clusters {
                spec,
                clusters,
                share,
                dma_buffers,
            } => evaluate_kernel(k, spec, clusters, &share, dma_buffers),
            Engine::Scalar { cores, lanes, share } => evaluate_kernel_simd(k, cores, lanes, &share),
        }
    }

    pub fn run<'k>(&self, kernels: impl IntoIterator<Item = &'k Kernel>) -> Result<PhaseReport> {
        let mut rep = PhaseReport::default();
        for k in kernels {
            rep.push(&self.kernel(k)?);
        }
        Ok(rep)
    }
}

/// Cluster kind each phase is mapped to in the heterogeneous design.
pub fn stage_kind(phase: Phase) -> ClusterKind {
    match phase {
        Phase::Encode | Phase::Prefill => ClusterKind::ComputeCentric,
        Phase::Decode => ClusterKind::MemoryCentric,
    }
}

/// Latency of `kernels` (all of `phase`) on all clusters of `kind`, each
/// limited to its budget.
pub fn stage_latency(
    phase: Phase,
    kernels: &[Kernel],
    arch: &ArchConfig,
    kind: ClusterKind,
    budget: &BandwidthBudget,
) -> Result<PhaseReport> {
    if stage_kind(phase) != kind {
        return Err(Error::WrongClusterKind {
            phase: phase.to_string(),
            kind: kind.to_string(),
        });
    }
    if let Some(k) = kernels.iter().find(|k| k.phase != phase) {
        return Err(Error::InvalidConfig(format!("{} kernel in the {phase} stage", k.phase)));
    }
    if kernels.is_empty() {
        return Ok(PhaseReport::default());
    }
    let clusters = arch.cluster_count(kind);
    let bw = f64::from(clusters) * budget.bytes_per_cycle(kind);
    if !(bw > 0.0) {
        return Err(Error::ZeroBandwidth(format!("{kind} clusters")));
    }
    Engine::pool(arch, kind, clusters, bw).run(kernels)
}

fn is_attention(role: Role) -> bool {
    matches!(role, Role::AttnScores | Role::Softmax | Role::AttnContext)
}

/// Prefix sums of decode-step cost, grown on demand.
///
/// A step's cost splits into a context-independent part (projections and
/// FFN) and attention, which depends on the context length and is identical
/// in every layer.
pub struct DecodeProfile<'a> {
    model: ModelConfig,
    engine: Engine<'a>,
    batch: u64,
    input_tokens: u64,
    fixed: PhaseReport,
    prefix: Vec<PhaseReport>,
}

impl<'a> DecodeProfile<'a> {
    pub fn new(
        model: &ModelConfig,
        engine: Engine<'a>,
        batch: u64,
        input_tokens: u64,
        ratios: Option<&LayerRatios>,
    ) -> Result<Self> {
        model.validate()?;
        let mut fixed_kernels = Vec::new();
        for layer in 0..model.llm_layers {
            fixed_kernels.extend(
                decode_layer_kernels(model, layer, input_tokens + 1, batch)?
                    .into_iter()
                    .filter(|k| !is_attention(k.role)),
            );
        }
        let mut graph = OperatorGraph { kernels: fixed_kernels };
        if let Some(r) = ratios {
            graph = traffic_reduction(&graph, &r.resample(model.llm_layers as usize))?;
        }
        let fixed = engine.run(&graph.kernels)?;
        Ok(Self {
            model: model.clone(),
            engine,
            batch,
            input_tokens,
            fixed,
            prefix: vec![PhaseReport::default()],
        })
    }

    fn step(&self, context: u64) -> Result<PhaseReport> {
        let attn: Vec<Kernel> = decode_layer_kernels(&self.model, 0, context, self.batch)?
            .into_iter()
            .filter(|k| is_attention(k.role))
            .collect();
        let per_layer = self.engine.run(&attn)?;
        Ok(self.fixed.add(&per_layer.scale(u64::from(self.model.llm_layers))))
    }

    /// Cost of the first `steps` decode steps.
    pub fn total(&mut self, steps: u64) -> Result<PhaseReport> {
        while (self.prefix.len() as u64) <= steps {
            let j = self.prefix.len() as u64;
            let step = self.step(self.input_tokens + j)?;
            let last = *self.prefix.last().expect("prefix starts non-empty");
            self.prefix.push(last.add(&step));
        }
        Ok(self.prefix[steps as usize])
    }

    pub fn latency(&mut self, steps: u64) -> Result<u64> {
        Ok(self.total(steps)?.cycles)
    }
}

/// Ratios `cc:mc` of per-cluster budgets to search over.
pub fn default_ratio_set() -> Vec<(u32, u32)> {
    vec![(1, 1), (1, 2), (1, 3), (1, 4), (1, 7)]
}

/// Options shared by every scenario of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub ratio_set: Vec<(u32, u32)>,
    /// Per-layer prune ratios used when a scenario enables pruning without
    /// a uniform ratio.
    pub trace_ratios: Option<LayerRatios>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            ratio_set: default_ratio_set(),
            trace_ratios: None,
        }
    }
}

impl SimOptions {
    fn prune_ratios(&self, model: &ModelConfig, scen: &Scenario) -> Result<Option<LayerRatios>> {
        if !scen.pruning_enabled {
            return Ok(None);
        }
        match (scen.prune_ratio, &self.trace_ratios) {
            (Some(r), _) => Ok(Some(LayerRatios::uniform(model.llm_layers as usize, r))),
            (None, Some(t)) => Ok(Some(t.resample(model.llm_layers as usize))),
            (None, None) => Err(Error::InvalidConfig(format!(
                "scenario {} enables pruning but no ratio or trace is available",
                scen.id
            ))),
        }
    }

    fn candidate_ratios(&self) -> Vec<(u32, u32)> {
        let mut set = self.ratio_set.clone();
        if !set.iter().any(|&(c, m)| c == m) {
            set.insert(0, (1, 1));
        }
        set
    }
}

/// Stage costs of one scenario under one budget.
struct StageModel<'a> {
    arch: &'a ArchConfig,
    model: &'a ModelConfig,
    scen: &'a Scenario,
    ratios: Option<LayerRatios>,
    cc_kernels: Vec<Kernel>,
}

struct BudgetEval<'a> {
    ratio: (u32, u32),
    budget: BandwidthBudget,
    encode: PhaseReport,
    prefill: PhaseReport,
    profile: DecodeProfile<'a>,
}

impl<'a> StageModel<'a> {
    fn new(arch: &'a ArchConfig, model: &'a ModelConfig, scen: &'a Scenario, opts: &SimOptions) -> Result<Self> {
        // Encode and prefill do not depend on the output length.
        let probe = Scenario {
            output_tokens: 1,
            batch: 1,
            ..scen.clone()
        };
        let graph = build_graph(model, &probe)?;
        let cc_kernels = graph.kernels.into_iter().filter(|k| k.phase != Phase::Decode).collect();
        Ok(Self {
            arch,
            model,
            scen,
            ratios: opts.prune_ratios(model, scen)?,
            cc_kernels,
        })
    }

    fn eval(&self, ratio: (u32, u32)) -> Result<BudgetEval<'a>> {
        let budget = BandwidthBudget::from_ratio(self.arch, ratio.0, ratio.1)?;
        let split = |phase| -> Vec<Kernel> { self.cc_kernels.iter().filter(|k| k.phase == phase).copied().collect() };
        let cc = ClusterKind::ComputeCentric;
        let encode = stage_latency(Phase::Encode, &split(Phase::Encode), self.arch, cc, &budget)?;
        let prefill = stage_latency(Phase::Prefill, &split(Phase::Prefill), self.arch, cc, &budget)?;
        let mc = ClusterKind::MemoryCentric;
        let n_mc = self.arch.mc_clusters();
        let bw = f64::from(n_mc) * budget.bytes_per_cycle(mc);
        if !(bw > 0.0) {
            return Err(Error::ZeroBandwidth("mc clusters".into()));
        }
        let engine = Engine::pool(self.arch, mc, n_mc, bw);
        let profile = DecodeProfile::new(
            self.model,
            engine,
            u64::from(self.scen.batch),
            self.scen.input_tokens,
            self.ratios.as_ref(),
        )?;
        Ok(BudgetEval {
            ratio,
            budget,
            encode,
            prefill,
            profile,
        })
    }
}

impl BudgetEval<'_> {
    fn cc_single(&self) -> u64 {
        self.encode.cycles + self.prefill.cycles
    }

    fn period(&mut self, batch: u64, steps: u64) -> Result<(u64, u64, u64)> {
        let cc = batch * self.cc_single();
        let dec = self.profile.latency(steps)?;
        Ok((cc, dec, cc.max(dec)))
    }
}

/// Equal-split balance length and the length beyond which no ratio in the
/// set can balance the stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePoints {
    pub l_e: u64,
    pub l_b: u64,
}

/// Longest output length searched before giving up.
pub const MAX_BALANCE_LENGTH: u64 = 1 << 20;

/// Smallest `l` with `decode(l) >= cc`.
fn first_crossing(profile: &mut DecodeProfile<'_>, cc: u64) -> Result<u64> {
    if profile.latency(1)? == 0 && cc > 0 {
        return Err(Error::DegenerateDecode);
    }
    let mut hi = 1u64;
    while profile.latency(hi)? < cc {
        if hi >= MAX_BALANCE_LENGTH {
            return Err(Error::DegenerateDecode);
        }
        hi = (hi * 2).min(MAX_BALANCE_LENGTH);
    }
    let mut lo = 0u64;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if profile.latency(mid)? >= cc {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.max(1))
}

/// Balance lengths for batch-1 streaming of `base` requests.
pub fn balance_length(
    model: &ModelConfig,
    arch: &ArchConfig,
    base: &Scenario,
    opts: &SimOptions,
) -> Result<BalancePoints> {
    let scen = Scenario {
        batch: 1,
        ..base.clone()
    };
    let stages = StageModel::new(arch, model, &scen, opts)?;
    let mut equal = stages.eval((1, 1))?;
    let cc = equal.cc_single();
    let l_e = first_crossing(&mut equal.profile, cc)?;
    let aggressive = opts
        .candidate_ratios()
        .into_iter()
        .max_by(|a, b| (f64::from(a.1) / f64::from(a.0)).total_cmp(&(f64::from(b.1) / f64::from(b.0))))
        .unwrap_or((1, 1));
    let mut agg = stages.eval(aggressive)?;
    let cc = agg.cc_single();
    let l_b = first_crossing(&mut agg.profile, cc)?.max(l_e);
    Ok(BalancePoints { l_e, l_b })
}

/// Imbalance of a ratio; 1 for the equal split.
fn skew(r: (u32, u32)) -> f64 {
    let (a, b) = (f64::from(r.0), f64::from(r.1));
    a.max(b) / a.min(b)
}

/// Chosen budget and the stage costs it yields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub ratio: (u32, u32),
    pub budget: BandwidthBudget,
    pub cc_cycles: u64,
    pub decode_cycles: u64,
    pub period_cycles: u64,
}

/// Budget ratios evaluated once and queried for many output lengths.
pub struct AllocationSearch<'a> {
    evals: Vec<BudgetEval<'a>>,
    batch: u64,
}

impl<'a> AllocationSearch<'a> {
    pub fn new(model: &'a ModelConfig, arch: &'a ArchConfig, scen: &'a Scenario, opts: &SimOptions) -> Result<Self> {
        let stages = StageModel::new(arch, model, scen, opts)?;
        let mut evals = opts
            .candidate_ratios()
            .into_iter()
            .map(|r| stages.eval(r))
            .collect::<Result<Vec<_>>>()?;
        evals.sort_by(|a, b| skew(a.ratio).total_cmp(&skew(b.ratio)));
        Ok(Self {
            evals,
            batch: u64::from(scen.batch),
        })
    }

    fn allocation(eval: &mut BudgetEval<'_>, batch: u64, l: u64) -> Result<Allocation> {
        let (cc, dec, period) = eval.period(batch, l)?;
        Ok(Allocation {
            ratio: eval.ratio,
            budget: eval.budget,
            cc_cycles: cc,
            decode_cycles: dec,
            period_cycles: period,
        })
    }

    /// Allocation at a fixed ratio from the candidate set.
    pub fn at_ratio(&mut self, ratio: (u32, u32), l: u64) -> Result<Allocation> {
        let batch = self.batch;
        let eval = self
            .evals
            .iter_mut()
            .find(|e| e.ratio == ratio)
            .ok_or_else(|| Error::InvalidConfig(format!("ratio {}:{} not evaluated", ratio.0, ratio.1)))?;
        Self::allocation(eval, batch, l)
    }

    /// Ratio minimising the pipeline period at output length `l`; ties go to
    /// the most equal ratio.
    pub fn best(&mut self, l: u64) -> Result<Allocation> {
        let batch = self.batch;
        let mut best: Option<Allocation> = None;
        for eval in &mut self.evals {
            let a = Self::allocation(eval, batch, l)?;
            if best.is_none_or(|b| a.period_cycles < b.period_cycles) {
                best = Some(a);
            }
        }
        best.ok_or_else(|| Error::InvalidConfig("empty ratio set".into()))
    }
}

/// Ratio minimising `max(cc stage, decode)` for output length `l`.
pub fn allocate_bandwidth(
    l: u64,
    model: &ModelConfig,
    arch: &ArchConfig,
    base: &Scenario,
    ratio_set: &[(u32, u32)],
) -> Result<Allocation> {
    let scen = Scenario {
        output_tokens: l,
        ..base.clone()
    };
    let opts = SimOptions {
        ratio_set: ratio_set.to_vec(),
        trace_ratios: None,
    };
    let scen = Scenario {
        pruning_enabled: scen.pruning_enabled && scen.prune_ratio.is_some(),
        ..scen
    };
    AllocationSearch::new(model, arch, &scen, &opts)?.best(l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub scenario_id: String,
    pub ratio: (u32, u32),
    pub budget: BandwidthBudget,
    pub batch: u32,
    pub output_tokens: u64,
    /// One request's encode phase on the CC clusters.
    pub encode: PhaseReport,
    /// One request's prefill phase on the CC clusters.
    pub prefill: PhaseReport,
    /// All decode steps of the batch on the MC clusters.
    pub decode: PhaseReport,
    /// CC stage for the whole batch.
    pub cc_stage_cycles: u64,
    pub period_cycles: u64,
    pub latency_cycles: u64,
    pub throughput_tokens_per_s: f64,
    pub latency_s: f64,
    pub prune_ratio_mean: f64,
}

/// Steady-state pipeline of one scenario.
pub fn pipeline_simulate(
    model: &ModelConfig,
    arch: &ArchConfig,
    scen: &Scenario,
    opts: &SimOptions,
) -> Result<PipelinePlan> {
    scen.validate()?;
    let ratio = match scen.bandwidth_policy {
        BandwidthPolicy::Equal => (1, 1),
        BandwidthPolicy::FixedRatio { cc, mc } => (cc, mc),
        BandwidthPolicy::Dynamic => {
            let mut search = AllocationSearch::new(model, arch, scen, opts)?;
            search.best(scen.output_tokens)?.ratio
        }
    };
    let stages = StageModel::new(arch, model, scen, opts)?;
    let mut eval = stages.eval(ratio)?;
    let batch = u64::from(scen.batch);
    let (cc, _, period) = eval.period(batch, scen.output_tokens)?;
    let decode = eval.profile.total(scen.output_tokens)?;
    let latency = cc + decode.cycles;
    let tokens = batch as f64 * scen.output_tokens as f64;
    let prune_ratio_mean = stages
        .ratios
        .as_ref()
        .map_or(0.0, |r| r.vx.iter().sum::<f64>() / r.vx.len().max(1) as f64);
    Ok(PipelinePlan {
        scenario_id: scen.id.clone(),
        ratio,
        budget: eval.budget,
        batch: scen.batch,
        output_tokens: scen.output_tokens,
        encode: eval.encode,
        prefill: eval.prefill,
        decode,
        cc_stage_cycles: cc,
        period_cycles: period,
        latency_cycles: latency,
        throughput_tokens_per_s: if period == 0 {
            0.0
        } else {
            tokens * arch.clock_hz / period as f64
        },
        latency_s: latency as f64 / arch.clock_hz,
        prune_ratio_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    HomoCc,
    HomoMc,
    Hetero,
    Simd,
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HomoCc => "homo-cc",
            Self::HomoMc => "homo-mc",
            Self::Hetero => "hetero",
            Self::Simd => "simd",
        }
    }
}

/// Per-phase cycles of one design. `total` is the time per batch of
/// requests: the pipeline period for the heterogeneous design, the phase sum
/// for the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub design: Design,
    pub encode: PhaseReport,
    pub prefill: PhaseReport,
    pub decode: PhaseReport,
    pub total_cycles: u64,
}

impl DesignRow {
    pub fn phase(&self, phase: Phase) -> &PhaseReport {
        match phase {
            Phase::Encode => &self.encode,
            Phase::Prefill => &self.prefill,
            Phase::Decode => &self.decode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<DesignRow>,
    pub plan: PipelinePlan,
}

impl Comparison {
    pub fn row(&self, design: Design) -> &DesignRow {
        self.rows
            .iter()
            .find(|r| r.design == design)
            .expect("every design is evaluated")
    }

    /// How many times faster `a` is than `b` on `phase` (`None` = total).
    pub fn speedup(&self, a: Design, b: Design, phase: Option<Phase>) -> f64 {
        let cycles = |d| match phase {
            Some(p) => self.row(d).phase(p).cycles,
            None => self.row(d).total_cycles,
        };
        cycles(b) as f64 / cycles(a) as f64
    }
}

/// One design running every phase on `engine` with the whole channel.
fn sequential_design(
    design: Design,
    engine: Engine<'_>,
    model: &ModelConfig,
    scen: &Scenario,
    ratios: Option<&LayerRatios>,
) -> Result<DesignRow> {
    let probe = Scenario {
        output_tokens: 1,
        batch: 1,
        ..scen.clone()
    };
    let graph = build_graph(model, &probe)?;
    let encode = engine.run(graph.phase(Phase::Encode))?;
    let prefill = engine.run(graph.phase(Phase::Prefill))?;
    let mut profile = DecodeProfile::new(model, engine, u64::from(scen.batch), scen.input_tokens, ratios)?;
    let decode = profile.total(scen.output_tokens)?;
    let batch = u64::from(scen.batch);
    Ok(DesignRow {
        design,
        encode,
        prefill,
        decode,
        total_cycles: batch * (encode.cycles + prefill.cycles) + decode.cycles,
    })
}

/// Heterogeneous pipeline against all-CC, all-MC and scalar designs with the
/// same core count.
pub fn compare_homo_hetero(
    model: &ModelConfig,
    arch: &ArchConfig,
    scen: &Scenario,
    opts: &SimOptions,
) -> Result<Comparison> {
    let plan = pipeline_simulate(model, arch, scen, opts)?;
    let ratios = opts.prune_ratios(model, scen)?;
    let full = arch.dram_bytes_per_cycle();
    let mut rows = Vec::new();
    for (design, kind) in [
        (Design::HomoCc, ClusterKind::ComputeCentric),
        (Design::HomoMc, ClusterKind::MemoryCentric),
    ] {
        let homo = arch.homogeneous(kind)?;
        let engine = Engine::pool(&homo, kind, homo.cluster_count(kind), full);
        rows.push(sequential_design(design, engine, model, scen, ratios.as_ref())?);
    }
    rows.push(DesignRow {
        design: Design::Hetero,
        encode: plan.encode,
        prefill: plan.prefill,
        decode: plan.decode,
        total_cycles: plan.period_cycles,
    });
    rows.push(sequential_design(
        Design::Simd,
        Engine::scalar(arch),
        model,
        scen,
        ratios.as_ref(),
    )?);
    Ok(Comparison { rows, plan })
}

/// Single-cluster speed ratios at equal per-cluster bandwidth: CC over MC on
/// the GEMM phases and MC over CC on decode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterRatios {
    pub gemm_cc_over_mc: f64,
    pub gemv_mc_over_cc: f64,
}

pub fn cluster_ratios(model: &ModelConfig, arch: &ArchConfig, scen: &Scenario) -> Result<ClusterRatios> {
    let per_cluster = arch.dram_bytes_per_cycle() / f64::from(arch.clusters());
    let cc = Engine::pool(arch, ClusterKind::ComputeCentric, 1, per_cluster);
    let mc = Engine::pool(arch, ClusterKind::MemoryCentric, 1, per_cluster);
    let probe = Scenario {
        output_tokens: 1,
        batch: 1,
        ..scen.clone()
    };
    let graph = build_graph(model, &probe)?;
    let gemm: Vec<&Kernel> = graph
        .kernels
        .iter()
        .filter(|k| k.phase != Phase::Decode && k.is_matrix())
        .collect();
    let t_cc = cc.run(gemm.iter().copied())?.cycles as f64;
    let t_mc = mc.run(gemm.iter().copied())?.cycles as f64;
    let mut dec_cc = DecodeProfile::new(model, cc, 1, scen.input_tokens, None)?;
    let mut dec_mc = DecodeProfile::new(model, mc, 1, scen.input_tokens, None)?;
    let d_cc = dec_cc.latency(scen.output_tokens)? as f64;
    let d_mc = dec_mc.latency(scen.output_tokens)? as f64;
    Ok(ClusterRatios {
        gemm_cc_over_mc: t_mc / t_cc,
        gemv_mc_over_cc: d_cc / d_mc,
    })
}
