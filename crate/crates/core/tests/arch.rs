use edgesim::arch::{peak_flops, validate, ArchConfig, CimSpec, ClusterKind, ClusterSpec, Coproc, SaSpec};
use edgesim::Error;
use proptest::prelude::*;

fn sa_only(groups: u32, clusters: u32, cores: u32, dim: u32, clock: f64) -> ArchConfig {
    let mut cfg = ArchConfig {
        groups,
        cc_clusters_per_group: clusters,
        mc_clusters_per_group: 0,
        clock_hz: clock,
        ..ArchConfig::default()
    };
    cfg.cc_cluster.cores = cores;
    cfg.cc_cluster.coproc = Coproc::Systolic(SaSpec {
        rows: dim,
        cols: dim,
        ..SaSpec::default()
    });
    cfg
}

#[test]
fn default_layout() {
    let cfg = ArchConfig::default();
    assert!(validate(&cfg).is_ok(), "{}", validate(&cfg));
    assert_eq!(cfg.cc_cores(), 4 * 2 * 4);
    assert_eq!(cfg.mc_cores(), 4 * 2 * 2);
    assert_eq!(cfg.dram_bytes_per_cycle(), 336.0);
    assert!(cfg.mc_cluster.data_memory_bytes >= cfg.cc_cluster.data_memory_bytes);
}

#[test]
fn sa_peak_is_hand_arithmetic() {
    let cfg = sa_only(4, 2, 4, 16, 1e9);
    assert_eq!(peak_flops(&cfg), 32.0 * 256.0 * 2.0 * 1e9);
    assert_eq!(peak_flops(&sa_only(1, 1, 1, 1, 1.0)), 2.0);
}

#[test]
fn default_peak_near_reported_figure() {
    let cfg = ArchConfig::default();
    let cim = CimSpec::default();
    let oracle = (32.0 * 256.0 + 16.0 * f64::from(cim.subarrays * cim.cols) / f64::from(cim.act_bits)) * 2.0 * 1e9;
    let peak = peak_flops(&cfg);
    assert_eq!(peak, oracle);
    assert!((16e12..=20e12).contains(&peak), "{peak}");
}

#[test]
fn violations_are_reported() {
    let cfg = ArchConfig {
        groups: 0,
        ..ArchConfig::default()
    };
    assert!(validate(&cfg).contains("groups must be ≥ 1"));

    let mut cfg = ArchConfig::default();
    cfg.cc_cluster.coproc = Coproc::Cim(CimSpec::default());
    assert!(validate(&cfg).contains("coproc kind mismatch"));

    let mut cfg = ArchConfig::default();
    cfg.cc_cluster.coproc = Coproc::Systolic(SaSpec {
        matrix_registers: 1,
        ..SaSpec::default()
    });
    assert!(validate(&cfg).contains("matrix_register_count"));

    let mut cfg = ArchConfig::default();
    cfg.mc_cluster.coproc = Coproc::Cim(CimSpec {
        weight_bits: 6,
        ..CimSpec::default()
    });
    let report = validate(&cfg);
    assert!(report.contains("weight bits"));
    assert!(matches!(report.into_result(), Err(Error::InvalidConfig(_))));
}

#[test]
fn several_violations_at_once() {
    let mut cfg = ArchConfig {
        groups: 0,
        clock_hz: f64::NAN,
        ..ArchConfig::default()
    };
    cfg.mc_cluster.data_memory_bytes = 1;
    let report = validate(&cfg);
    assert!(report.violations.len() >= 3, "{report}");
}

#[test]
fn homogeneous_keeps_core_count() {
    let cfg = ArchConfig::default();
    let cc = cfg.homogeneous(ClusterKind::ComputeCentric).unwrap();
    let mc = cfg.homogeneous(ClusterKind::MemoryCentric).unwrap();
    assert_eq!(cc.total_cores(), cfg.total_cores());
    assert_eq!(mc.total_cores(), cfg.total_cores());
    assert_eq!((cc.cc_clusters_per_group, cc.mc_clusters_per_group), (3, 0));
    assert_eq!((mc.cc_clusters_per_group, mc.mc_clusters_per_group), (0, 6));
    assert!(validate(&cc).is_ok());
    assert!(validate(&mc).is_ok());
}

#[test]
fn default_mc_memory_holds_macros() {
    let spec = ClusterSpec::default_mc(16 * 1024);
    let cim = CimSpec::default();
    assert_eq!(cim.macro_bytes(), 256 * 16 * 96);
    assert_eq!(spec.data_memory_bytes, 2 * cim.macro_bytes() + 16 * 1024);
}

#[test]
fn shipped_config_file_matches_default() {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/arch/default.toml")).unwrap();
    assert_eq!(ArchConfig::from_toml_str(&text).unwrap(), ArchConfig::default());
}

prop_compose! {
    fn arb_arch()(
        groups in 1u32..8,
        cc in 0u32..4,
        mc in 0u32..4,
        clock in 1e8f64..3e9,
        bw in 1e9f64..1e12,
        o in 0.0f64..65536.0,
        rows in 1u32..64,
        cols in 1u32..64,
        cim_cols in 1u32..256,
        depth in 1u32..512,
        bits in prop::sample::select(vec![4u32, 8, 16]),
        act in 1u32..32,
    ) -> ArchConfig {
        let mut cfg = ArchConfig {
            groups,
            cc_clusters_per_group: cc,
            mc_clusters_per_group: mc,
            clock_hz: clock,
            dram_bandwidth_bytes_per_s: bw,
            dma_overhead_bytes: o,
            ..ArchConfig::default()
        };
        cfg.cc_cluster.coproc = Coproc::Systolic(SaSpec { rows, cols, ..SaSpec::default() });
        cfg.mc_cluster.coproc = Coproc::Cim(CimSpec { cols: cim_cols, subarrays: 16, depth, weight_bits: bits, act_bits: act });
        cfg
    }
}

proptest! {
    #[test]
    fn toml_round_trip(cfg in arb_arch()) {
        let text = cfg.to_toml_string().unwrap();
        let back = ArchConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn peak_linear_in_groups(cfg in arb_arch()) {
        let double = ArchConfig { groups: cfg.groups * 2, ..cfg.clone() };
        prop_assert_eq!(peak_flops(&double), 2.0 * peak_flops(&cfg));
    }

    #[test]
    fn validate_is_total(cfg in arb_arch(), zero_cores in any::<bool>()) {
        let mut cfg = cfg;
        if zero_cores {
            cfg.cc_cluster.cores = 0;
        }
        let report = validate(&cfg);
        prop_assert_eq!(report.is_ok(), report.violations.is_empty());
    }
}
