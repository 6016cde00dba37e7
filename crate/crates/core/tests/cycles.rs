use edgesim::arch::{CimSpec, ClusterSpec, SaSpec};
use edgesim::cycles::{
    cim_pass_cycles, cim_schedule, cim_schedule_cycles, evaluate_kernel, evaluate_kernel_simd, map_gemm_sa,
    map_gemv_cim, map_vector, sa_schedule, sa_schedule_cycles, sa_tile_cycles, MemoryShare, TileSchedule,
};
use edgesim::microsim::{micro_simulate_cim, micro_simulate_sa, simulate_cim_passes, simulate_sa_tile};
use edgesim::workload::{Kernel, Phase, Role, Shape};
use edgesim::Error;
use proptest::prelude::*;

fn matrix_kernel(shape: Shape) -> Kernel {
    let (m, k, n) = match shape {
        Shape::Gemm { m, k, n } => (m, k, n),
        Shape::Gemv { d_out, d_in, batch } => (batch, d_in, d_out),
        _ => unreachable!(),
    };
    Kernel {
        shape,
        phase: Phase::Prefill,
        role: Role::FfnUp,
        layer: 0,
        weight_bytes: 2 * k * n,
        kv_bytes: 0,
        act_bytes: 2 * m * k,
        out_bytes: 2 * m * n,
        flops: 2 * m * k * n,
        prunable: false,
    }
}

fn gemm(m: u64, k: u64, n: u64) -> Kernel {
    matrix_kernel(Shape::Gemm { m, k, n })
}

fn gemv(d_out: u64, d_in: u64) -> Kernel {
    matrix_kernel(Shape::Gemv { d_out, d_in, batch: 1 })
}

fn unlimited() -> MemoryShare {
    MemoryShare {
        bytes_per_cycle: 1e18,
        chunk_bytes: 1 << 20,
        overhead_bytes: 0.0,
    }
}

fn sa(r: u32, c: u32) -> SaSpec {
    SaSpec {
        rows: r,
        cols: c,
        ..SaSpec::default()
    }
}

fn cim(r: u32, c: u32, depth: u32, w: u32) -> CimSpec {
    CimSpec {
        subarrays: r,
        cols: c,
        depth,
        act_bits: w,
        ..CimSpec::default()
    }
}

#[test]
fn tile_formula_examples() {
    assert_eq!(sa_tile_cycles(16, 16, 16).unwrap(), 61);
    assert_eq!(sa_tile_cycles(16, 16, 1).unwrap(), 46);
    assert_eq!(sa_tile_cycles(1, 1, 1).unwrap(), 1);
    assert!(matches!(sa_tile_cycles(0, 1, 1), Err(Error::InvalidDimension(_))));
    assert!(matches!(sa_tile_cycles(u64::MAX, 1, 1), Err(Error::Overflow(_))));
}

#[test]
fn pass_formula_examples() {
    assert_eq!(cim_pass_cycles(1, 16).unwrap(), 17);
    assert_eq!(cim_pass_cycles(4, 8).unwrap(), 33);
    assert_eq!(cim_pass_cycles(1, 1).unwrap(), 2);
    assert!(matches!(cim_pass_cycles(1, 0), Err(Error::InvalidDimension(_))));
    assert!(matches!(cim_pass_cycles(u64::MAX, 2), Err(Error::Overflow(_))));
}

#[test]
fn simulated_tiles_match_examples() {
    let w: Vec<i64> = (0..16).collect();
    let a: Vec<i64> = (0..16).map(|x| x - 5).collect();
    let (cycles, _) = simulate_sa_tile(&w, 4, 4, &a, 4);
    assert_eq!(cycles, 13);
    let (unit, out) = simulate_sa_tile(&[3], 1, 1, &[2], 1);
    assert_eq!(unit, 1);
    assert_eq!(out, vec![6]);
    let (cycles, out) = simulate_cim_passes(&[2, 3], 2, 1, &[5, 1], 1, 4);
    assert_eq!(cycles, 5);
    assert_eq!(out, vec![13]);
}

#[test]
fn schedule_covers_matrix() {
    let s = TileSchedule::build(33, 17, 16, 16, 4, 10, 4).unwrap();
    let (pk, pn) = s.padded();
    assert!(pk >= 33 && pn >= 17);
    assert_eq!(s.total_tiles(), s.k_tiles * s.n_tiles);
    assert_eq!(s.row_chunks, vec![4, 4, 2]);
    assert!(s.split_k());
}

#[test]
fn single_core_gemm_is_tiles_times_formula() {
    // 3 x 2 tiles, one row chunk of 10.
    let k = gemm(10, 48, 32);
    let report = map_gemm_sa(&k, &sa(16, 16), 1, 1 << 20, &unlimited()).unwrap();
    assert_eq!(report.compute_cycles, 6 * (32 + 16 + 10 - 3));
    assert_eq!(report.time_cycles, report.compute_cycles);
}

#[test]
fn resident_single_pass_is_w_plus_one() {
    let c = cim(16, 96, 256, 16);
    let k = gemv(96, 16);
    let report = map_gemv_cim(&k, &c, 1, true, &unlimited()).unwrap();
    assert_eq!(report.compute_cycles, 17);
    assert_eq!(report.dram_bytes, k.dram_bytes() - k.weight_bytes);
    let streamed = map_gemv_cim(&k, &c, 1, false, &unlimited()).unwrap();
    assert_eq!(streamed.dram_bytes, k.dram_bytes());
}

#[test]
fn passes_group_by_macro_depth() {
    // 8 reduction tiles on one core, depth 3: groups of 3, 3, 2 passes.
    let c = cim(4, 4, 3, 8);
    let k = gemv(4, 32);
    let sched = cim_schedule(&k, &c, 1).unwrap();
    assert_eq!(sched.total_tiles(), 8);
    let want = 2 * cim_pass_cycles(3, 8).unwrap() + cim_pass_cycles(2, 8).unwrap();
    assert_eq!(cim_schedule_cycles(&sched, &c, 1).unwrap(), want);
}

#[test]
fn gemv_favors_cim_and_large_gemm_favors_sa() {
    let s = sa(16, 16);
    let c = CimSpec::default();
    let v = gemv(2048, 2048);
    let sa_v = map_gemm_sa(&v, &s, 4, 16 << 10, &unlimited()).unwrap().compute_cycles;
    let cim_v = map_gemv_cim(&v, &c, 4, false, &unlimited()).unwrap().compute_cycles;
    assert!(sa_v > cim_v, "sa {sa_v} cim {cim_v}");
    let m = gemm(64, 2048, 2048);
    let sa_m = map_gemm_sa(&m, &s, 4, 16 << 10, &unlimited()).unwrap().compute_cycles;
    let cim_m = map_gemv_cim(&m, &c, 4, false, &unlimited()).unwrap().compute_cycles;
    assert!(cim_m > sa_m, "sa {sa_m} cim {cim_m}");
}

#[test]
fn memory_bound_kernel_takes_memory_time() {
    let k = gemv(1024, 1024);
    let mem = MemoryShare {
        bytes_per_cycle: 4.0,
        chunk_bytes: 4096,
        overhead_bytes: 4096.0,
    };
    let report = map_gemv_cim(&k, &CimSpec::default(), 4, false, &mem).unwrap();
    // Half the bandwidth survives DMA overhead at the knee.
    let want = k.dram_bytes() as f64 / 2.0;
    assert!((report.memory_cycles - want).abs() < 1e-6);
    assert_eq!(report.time_cycles, want.ceil() as u64);
    assert!(report.utilization < 1.0);
}

#[test]
fn vector_and_scalar_paths() {
    let v = Kernel {
        shape: Shape::Elementwise { len: 1000 },
        phase: Phase::Decode,
        role: Role::FfnAct,
        layer: 0,
        weight_bytes: 0,
        kv_bytes: 0,
        act_bytes: 0,
        out_bytes: 0,
        flops: 1000,
        prunable: false,
    };
    assert_eq!(map_vector(&v, 4, 16, &unlimited()).unwrap().compute_cycles, 16);
    let k = gemm(3, 5, 7);
    assert_eq!(
        evaluate_kernel_simd(&k, 4, 16, &unlimited()).unwrap().compute_cycles,
        27
    );
    let cluster = ClusterSpec::default_cc();
    assert_eq!(
        evaluate_kernel(&v, &cluster, 2, &unlimited(), 2)
            .unwrap()
            .compute_cycles,
        1000u64.div_ceil(128)
    );
    assert!(evaluate_kernel(&k, &cluster, 0, &unlimited(), 2).is_err());
}

#[test]
fn non_matrix_kernels_have_no_tile_schedule() {
    let mut k = gemm(1, 1, 1);
    k.shape = Shape::Softmax { rows: 2, len: 3 };
    assert!(matches!(
        sa_schedule(&k, &sa(4, 4), 1, 1024),
        Err(Error::InvalidDimension(_))
    ));
}

#[test]
fn micro_sim_rejects_oversized_arrays() {
    let k = gemm(2, 2, 2);
    assert!(matches!(
        micro_simulate_sa(&k, &sa(128, 4), 1, 1024, 0),
        Err(Error::OverSimCap { .. })
    ));
    assert!(matches!(
        micro_simulate_cim(&k, &cim(4, 65, 4, 8), 1, 0),
        Err(Error::OverSimCap { .. })
    ));
}

proptest! {
    #[test]
    fn tile_cycles_grow_with_every_dim(r in 1u64..64, c in 1u64..64, m in 1u64..64) {
        let base = sa_tile_cycles(r, c, m).unwrap();
        prop_assert!(sa_tile_cycles(r + 1, c, m).unwrap() > base);
        prop_assert!(sa_tile_cycles(r, c + 1, m).unwrap() >= base);
        prop_assert!(sa_tile_cycles(r, c, m + 1).unwrap() >= base);
        prop_assert!(cim_pass_cycles(m + 1, c).unwrap() > cim_pass_cycles(m, c).unwrap());
    }

    #[test]
    fn sa_model_matches_micro_sim(
        m in 1u64..12, k in 1u64..40, n in 1u64..40,
        r in 1u32..9, c in 1u32..9, cores in 1u32..5, buffer in 8u64..128, seed in any::<u64>(),
    ) {
        let kernel = gemm(m, k, n);
        let spec = sa(r, c);
        let sched = sa_schedule(&kernel, &spec, cores, buffer).unwrap();
        let model = sa_schedule_cycles(&sched, &spec).unwrap();
        prop_assert_eq!(model, micro_simulate_sa(&kernel, &spec, cores, buffer, seed).unwrap());
    }

    #[test]
    fn cim_model_matches_micro_sim(
        m in 1u64..4, k in 1u64..40, n in 1u64..40,
        r in 1u32..9, c in 1u32..9, depth in 1u32..6, w in 1u32..17, cores in 1u32..5, seed in any::<u64>(),
    ) {
        let kernel = gemm(m, k, n);
        let spec = cim(r, c, depth, w);
        let sched = cim_schedule(&kernel, &spec, cores).unwrap();
        let model = cim_schedule_cycles(&sched, &spec, m).unwrap();
        prop_assert_eq!(model, micro_simulate_cim(&kernel, &spec, cores, seed).unwrap());
    }

    #[test]
    fn kernel_time_is_roofline(m in 1u64..64, k in 1u64..512, n in 1u64..512, bw in 0.5f64..64.0) {
        let kernel = gemm(m, k, n);
        let mem = MemoryShare { bytes_per_cycle: bw, chunk_bytes: 16 << 10, overhead_bytes: 20480.0 };
        let report = evaluate_kernel(&kernel, &ClusterSpec::default_cc(), 1, &mem, 2).unwrap();
        prop_assert_eq!(report.dram_bytes, kernel.dram_bytes());
        prop_assert_eq!(report.time_cycles, report.compute_cycles.max(report.memory_cycles.ceil() as u64));
        prop_assert!(report.utilization > 0.0 && report.utilization <= 1.0);
    }

    #[test]
    fn more_work_never_takes_less_time(m in 1u64..32, k in 1u64..256, n in 1u64..256, cores in 1u32..8) {
        let s = sa(16, 16);
        let c = CimSpec::default();
        let t = |m, k, n| map_gemm_sa(&gemm(m, k, n), &s, cores, 16 << 10, &unlimited()).unwrap().time_cycles;
        let base = t(m, k, n);
        prop_assert!(t(m + 1, k, n) >= base);
        prop_assert!(t(m, k + 16, n) >= base);
        prop_assert!(t(m, k, n + 16) >= base);
        let v = |d_out, d_in| map_gemv_cim(&gemv(d_out, d_in), &c, cores, false, &unlimited()).unwrap().time_cycles;
        prop_assert!(v(n + 96, k) >= v(n, k));
        prop_assert!(v(n, k + 16) >= v(n, k));
    }

    #[test]
    fn schedule_partitions_every_tile(k in 1u64..500, n in 1u64..500, tk in 1u64..32, tn in 1u64..32, cores in 1u64..16) {
        let s = TileSchedule::build(k, n, tk, tn, cores, 1, 1).unwrap();
        prop_assert_eq!(s.total_tiles(), s.k_tiles * s.n_tiles);
        prop_assert_eq!(s.per_core.len() as u64, cores.max(s.n_tiles.min(cores)));
        let (pk, pn) = s.padded();
        prop_assert!(pk >= k && pk < k + tk && pn >= n && pn < n + tn);
    }
}
