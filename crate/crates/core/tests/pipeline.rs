use edgesim::arch::{ArchConfig, ClusterKind};
use edgesim::memory::BandwidthBudget;
use edgesim::pipeline::{
    allocate_bandwidth, balance_length, cluster_ratios, compare_homo_hetero, pipeline_simulate, stage_latency,
    AllocationSearch, DecodeProfile, Design, Engine, PhaseReport, SimOptions,
};
use edgesim::pruning::LayerRatios;
use edgesim::workload::{build_graph, BandwidthPolicy, ModelConfig, Phase, Scenario};
use edgesim::Error;
use proptest::prelude::*;

fn scenario(l_in: u64, l: u64, batch: u32, policy: BandwidthPolicy) -> Scenario {
    Scenario {
        batch,
        bandwidth_policy: policy,
        ..Scenario::new("t", l_in, l)
    }
}

fn mc_engine(arch: &ArchConfig, scale: f64) -> Engine<'_> {
    let budget = BandwidthBudget::equal(arch).unwrap();
    let mc = ClusterKind::MemoryCentric;
    let bw = f64::from(arch.mc_clusters()) * budget.bytes_per_cycle(mc) * scale;
    Engine::pool(arch, mc, arch.mc_clusters(), bw)
}

#[test]
fn decode_profile_matches_full_graph() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    for (l, batch) in [(1u64, 1u32), (7, 1), (5, 3)] {
        let scen = scenario(64, l, batch, BandwidthPolicy::Equal);
        let graph = build_graph(&model, &scen).unwrap();
        let budget = BandwidthBudget::equal(&arch).unwrap();
        let decode = graph.phase_kernels(Phase::Decode);
        let direct = stage_latency(Phase::Decode, &decode, &arch, ClusterKind::MemoryCentric, &budget).unwrap();
        let mut profile = DecodeProfile::new(&model, mc_engine(&arch, 1.0), u64::from(batch), 64, None).unwrap();
        let fast = profile.total(l).unwrap();
        assert_eq!(fast.cycles, direct.cycles);
        assert_eq!(fast.dram_bytes, direct.dram_bytes);
        assert_eq!(fast.kernels, direct.kernels);
    }
}

#[test]
fn stage_kind_is_enforced() {
    let arch = ArchConfig::default();
    let budget = BandwidthBudget::equal(&arch).unwrap();
    let graph = build_graph(&ModelConfig::karmavlm(), &Scenario::new("t", 4, 1)).unwrap();
    let prefill = graph.phase_kernels(Phase::Prefill);
    let err = stage_latency(Phase::Prefill, &prefill, &arch, ClusterKind::MemoryCentric, &budget).unwrap_err();
    assert!(matches!(err, Error::WrongClusterKind { .. }));
    let err = stage_latency(Phase::Encode, &prefill, &arch, ClusterKind::ComputeCentric, &budget).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
    let empty = stage_latency(Phase::Encode, &[], &arch, ClusterKind::ComputeCentric, &budget).unwrap();
    assert_eq!(empty, PhaseReport::default());
    assert_eq!(empty.utilization(), 0.0);
}

#[test]
fn decode_is_nearly_linear_in_length() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    let mut profile = DecodeProfile::new(&model, mc_engine(&arch, 1.0), 1, 64, None).unwrap();
    for l in [16u64, 64, 256] {
        let ratio = profile.latency(2 * l).unwrap() as f64 / profile.latency(l).unwrap() as f64;
        assert!((1.9..=2.1).contains(&ratio), "l={l}: {ratio}");
    }
}

#[test]
fn halving_bandwidth_doubles_decode() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    let mut full = DecodeProfile::new(&model, mc_engine(&arch, 1.0), 1, 64, None).unwrap();
    let mut half = DecodeProfile::new(&model, mc_engine(&arch, 0.5), 1, 64, None).unwrap();
    let ratio = half.latency(32).unwrap() as f64 / full.latency(32).unwrap() as f64;
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
}

#[test]
fn equal_split_balance_point_brackets_crossing() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    let base = scenario(64, 1, 1, BandwidthPolicy::Equal);
    let opts = SimOptions::default();
    let points = balance_length(&model, &arch, &base, &opts).unwrap();
    assert!(points.l_b >= points.l_e);
    let mut search = AllocationSearch::new(&model, &arch, &base, &opts).unwrap();
    let at = search.at_ratio((1, 1), points.l_e).unwrap();
    assert!(at.decode_cycles >= at.cc_cycles);
    if points.l_e > 1 {
        let before = search.at_ratio((1, 1), points.l_e - 1).unwrap();
        assert!(before.decode_cycles < before.cc_cycles);
    }
    let agg = search.at_ratio((1, 7), points.l_b).unwrap();
    assert!(agg.decode_cycles >= agg.cc_cycles);
}

#[test]
fn more_dram_bandwidth_delays_balance() {
    let model = ModelConfig::sphinx_tiny();
    let base = scenario(64, 1, 1, BandwidthPolicy::Equal);
    let opts = SimOptions::default();
    let arch = ArchConfig::default();
    let fast = ArchConfig {
        dram_bandwidth_bytes_per_s: 2.0 * arch.dram_bandwidth_bytes_per_s,
        ..arch.clone()
    };
    let slow = balance_length(&model, &arch, &base, &opts).unwrap().l_e;
    let quick = balance_length(&model, &fast, &base, &opts).unwrap().l_e;
    assert!(quick >= slow, "{quick} < {slow}");
}

#[test]
fn short_outputs_keep_equal_split() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    let base = scenario(64, 1, 1, BandwidthPolicy::Dynamic);
    let opts = SimOptions::default();
    let l_e = balance_length(&model, &arch, &base, &opts).unwrap().l_e;
    let mut search = AllocationSearch::new(&model, &arch, &base, &opts).unwrap();
    for l in 1..l_e {
        assert_eq!(search.best(l).unwrap().ratio, (1, 1), "l={l}");
    }
    let one = allocate_bandwidth(512, &model, &arch, &base, &[(1, 1)]).unwrap();
    assert_eq!(one.ratio, (1, 1));
    let forced = allocate_bandwidth(512, &model, &arch, &base, &[(1, 7)]).unwrap();
    assert!(forced.period_cycles <= one.period_cycles);
}

#[test]
fn plan_invariants() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    for (l, batch, policy) in [
        (24, 1, BandwidthPolicy::Dynamic),
        (128, 1, BandwidthPolicy::Equal),
        (1024, 16, BandwidthPolicy::Dynamic),
        (64, 2, BandwidthPolicy::FixedRatio { cc: 1, mc: 3 }),
    ] {
        let scen = scenario(64, l, batch, policy);
        let plan = pipeline_simulate(&model, &arch, &scen, &SimOptions::default()).unwrap();
        let b = u64::from(batch);
        assert_eq!(plan.cc_stage_cycles, b * (plan.encode.cycles + plan.prefill.cycles));
        assert_eq!(plan.period_cycles, plan.cc_stage_cycles.max(plan.decode.cycles));
        assert_eq!(plan.latency_cycles, plan.cc_stage_cycles + plan.decode.cycles);
        let tput = (b * l) as f64 * arch.clock_hz / plan.period_cycles as f64;
        assert!((plan.throughput_tokens_per_s - tput).abs() < 1e-9 * tput);
        assert_eq!(plan.latency_s, plan.latency_cycles as f64 / arch.clock_hz);
        if let BandwidthPolicy::FixedRatio { cc, mc } = policy {
            assert_eq!(plan.ratio, (cc, mc));
        }
        assert_eq!(
            plan,
            pipeline_simulate(&model, &arch, &scen, &SimOptions::default()).unwrap()
        );
    }
}

#[test]
fn pruning_shortens_decode() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    let dense = scenario(64, 64, 1, BandwidthPolicy::Equal);
    let pruned = Scenario {
        pruning_enabled: true,
        prune_ratio: Some(0.4),
        ..dense.clone()
    };
    let opts = SimOptions::default();
    let a = pipeline_simulate(&model, &arch, &dense, &opts).unwrap();
    let b = pipeline_simulate(&model, &arch, &pruned, &opts).unwrap();
    assert!(b.decode.cycles < a.decode.cycles);
    assert!(b.decode.dram_bytes < a.decode.dram_bytes);
    assert_eq!(b.prefill, a.prefill);
    assert!((b.prune_ratio_mean - 0.4).abs() < 1e-12);
    let traced = SimOptions {
        trace_ratios: Some(LayerRatios::uniform(5, 0.4)),
        ..SimOptions::default()
    };
    let from_trace = Scenario {
        prune_ratio: None,
        ..pruned.clone()
    };
    assert_eq!(
        pipeline_simulate(&model, &arch, &from_trace, &traced).unwrap().decode,
        b.decode
    );
    let err = pipeline_simulate(&model, &arch, &from_trace, &opts).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
}

#[test]
fn design_totals() {
    let arch = ArchConfig::default();
    let model = ModelConfig::sphinx_tiny();
    let scen = scenario(64, 24, 2, BandwidthPolicy::Dynamic);
    let cmp = compare_homo_hetero(&model, &arch, &scen, &SimOptions::default()).unwrap();
    assert_eq!(cmp.rows.len(), 4);
    for d in [Design::HomoCc, Design::HomoMc, Design::Simd] {
        let row = cmp.row(d);
        assert_eq!(
            row.total_cycles,
            2 * (row.encode.cycles + row.prefill.cycles) + row.decode.cycles
        );
    }
    assert_eq!(cmp.row(Design::Hetero).total_cycles, cmp.plan.period_cycles);
    assert!(cmp.speedup(Design::Hetero, Design::HomoCc, None) > 1.0);
    assert!(cmp.speedup(Design::Hetero, Design::HomoMc, None) > 1.0);
    assert!(cmp.speedup(Design::Hetero, Design::Simd, None) > 10.0);
    let s = cmp.speedup(Design::HomoMc, Design::HomoCc, Some(Phase::Decode));
    let want = cmp.row(Design::HomoCc).decode.cycles as f64 / cmp.row(Design::HomoMc).decode.cycles as f64;
    assert_eq!(s, want);
    assert_eq!(Design::HomoCc.name(), "homo-cc");
}

#[test]
fn each_cluster_wins_its_own_phase() {
    let r = cluster_ratios(
        &ModelConfig::sphinx_tiny(),
        &ArchConfig::default(),
        &Scenario::new("t", 64, 24),
    )
    .unwrap();
    assert!(r.gemm_cc_over_mc > 1.0);
    assert!(r.gemv_mc_over_cc > 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dynamic_never_loses_to_equal(l in 1u64..2048, batch in prop::sample::select(vec![1u32, 2, 4, 8, 16])) {
        let arch = ArchConfig::default();
        let model = ModelConfig::sphinx_tiny();
        let opts = SimOptions::default();
        let eq = pipeline_simulate(&model, &arch, &scenario(64, l, batch, BandwidthPolicy::Equal), &opts).unwrap();
        let dy = pipeline_simulate(&model, &arch, &scenario(64, l, batch, BandwidthPolicy::Dynamic), &opts).unwrap();
        prop_assert!(dy.period_cycles <= eq.period_cycles);
        prop_assert!(dy.throughput_tokens_per_s >= eq.throughput_tokens_per_s);
    }

    #[test]
    fn decode_grows_with_length(l in 1u64..512, extra in 1u64..64) {
        let arch = ArchConfig::default();
        let mut p = DecodeProfile::new(&ModelConfig::karmavlm(), mc_engine(&arch, 1.0), 1, 32, None).unwrap();
        prop_assert!(p.latency(l + extra).unwrap() > p.latency(l).unwrap());
    }
}
