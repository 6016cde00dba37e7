use edgesim::arch::{validate, ArchConfig, Coproc};
use edgesim::calibrate::{apply_knobs, calibrate, fit_interval, Grid, Metrics, Setup, Targets};
use edgesim::pipeline::default_ratio_set;

#[test]
fn default_knobs_are_a_fixed_point() {
    let arch = ArchConfig::default();
    let Coproc::Cim(cim) = arch.mc_cluster.coproc else {
        panic!("mc cluster without CIM")
    };
    let again = apply_knobs(&arch, arch.dma_overhead_bytes, cim.cols, cim.depth, 16);
    assert_eq!(again, arch);
}

#[test]
fn knobs_resize_macro_memory() {
    let arch = apply_knobs(&ArchConfig::default(), 8192.0, 128, 128, 8);
    assert!(validate(&arch).is_ok());
    let Coproc::Cim(cim) = arch.mc_cluster.coproc else {
        panic!("mc cluster without CIM")
    };
    assert_eq!(
        arch.mc_cluster.data_memory_bytes,
        2 * cim.macro_bytes() + arch.shared_buffer_bytes
    );
}

#[test]
fn interval_covers_one_chunk_per_cluster() {
    let arch = ArchConfig::default();
    let grid = Grid::default();
    let t = fit_interval(&arch, &default_ratio_set(), &grid.throttle_intervals).unwrap();
    assert_eq!(t, arch.throttle_interval_cycles);
    // At 1:7 each CC cluster gets 1/64 of the channel; a 16 KiB chunk needs T >= 3121.
    assert!(fit_interval(&arch, &default_ratio_set(), &[1000, 2000]).is_err());
}

#[test]
fn shipped_defaults_meet_every_window() {
    let metrics = Metrics::measure(&ArchConfig::default(), &Setup::default()).unwrap();
    assert!(metrics.misses(&Targets::default()).is_empty(), "{metrics:?}");
    assert!(metrics.ordering_holds);
}

#[test]
fn grid_search_recovers_defaults() {
    let mut base = ArchConfig::default();
    base.dma_overhead_bytes = 4096.0;
    base.throttle_interval_cycles = 1;
    let cal = calibrate(&base, &Setup::default(), &Grid::default(), &Targets::default()).unwrap();
    assert!(cal.best.misses.is_empty());
    assert_eq!(cal.best.arch, ArchConfig::default());
    assert!(cal
        .candidates
        .iter()
        .all(|c| c.score >= cal.best.score || !c.misses.is_empty()));
}
