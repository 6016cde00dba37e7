//! Analytical cycle models for the two coprocessors.
//!
//! * Systolic array: a weight-stationary R x C array. Loading one tile and
//!   streaming `m` activation rows through it takes `2R + C + m - 3` cycles.
//! * CIM macro: activations are broadcast bit-serially to the columns, so `m`
//!   back-to-back passes over resident weights take `m * W + 1` cycles.
//!
//! Kernel-level mappings combine these with the roofline rule
//! `time = max(compute, memory)`.

use serde::{Deserialize, Serialize};

use crate::arch::{CimSpec, ClusterSpec, Coproc, SaSpec};
use crate::error::{Error, Result};
use crate::memory::phase_memory_time;
use crate::workload::{Kernel, Shape};

fn require_positive(name: &str, v: u64) -> Result<()> {
    if v == 0 {
        Err(Error::InvalidDimension(format!("{name} must be ≥ 1")))
    } else {
        Ok(())
    }
}

/// Cycles to load one R x C weight tile and stream `m` activation rows.
pub fn sa_tile_cycles(r: u64, c: u64, m: u64) -> Result<u64> {
    require_positive("R", r)?;
    require_positive("C", c)?;
    require_positive("M", m)?;
    let total = r
        .checked_mul(2)
        .and_then(|x| x.checked_add(c))
        .and_then(|x| x.checked_add(m))
        .ok_or_else(|| Error::Overflow("sa_tile_cycles".into()))?;
    Ok((total - 3).max(1))
}

/// Cycles for `m` consecutive bit-serial passes of `w`-bit activations.
pub fn cim_pass_cycles(m: u64, w: u64) -> Result<u64> {
    require_positive("M", m)?;
    require_positive("W", w)?;
    m.checked_mul(w)
        .and_then(|x| x.checked_add(1))
        .ok_or_else(|| Error::Overflow("cim_pass_cycles".into()))
}

/// How a matrix is cut into coprocessor tiles and spread over cores.
///
/// `k_tiles` run along the reduction axis, `n_tiles` along the output axis.
/// When there are fewer output tiles than cores, several cores share one
/// output column and split its reduction tiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSchedule {
    pub tile_k: u64,
    pub tile_n: u64,
    pub k_tiles: u64,
    pub n_tiles: u64,
    /// Output tile columns and reduction tiles assigned to each core.
    pub per_core: Vec<CoreShare>,
    /// Rows of the streamed operand handled per tile pass, in order.
    pub row_chunks: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreShare {
    pub n_tiles: u64,
    pub k_tiles: u64,
}

impl CoreShare {
    pub fn tiles(&self) -> u64 {
        self.n_tiles * self.k_tiles
    }
}

impl TileSchedule {
    pub fn build(k: u64, n: u64, tile_k: u64, tile_n: u64, cores: u64, rows: u64, chunk_rows: u64) -> Result<Self> {
        for (name, v) in [
            ("K", k),
            ("N", n),
            ("tile K", tile_k),
            ("tile N", tile_n),
            ("cores", cores),
            ("rows", rows),
        ] {
            require_positive(name, v)?;
        }
        let k_tiles = k.div_ceil(tile_k);
        let n_tiles = n.div_ceil(tile_n);
        let per_core = if n_tiles >= cores {
            let base = n_tiles / cores;
            let extra = n_tiles % cores;
            (0..cores)
                .map(|c| CoreShare {
                    n_tiles: base + u64::from(c < extra),
                    k_tiles,
                })
                .collect()
        } else {
            let group = cores / n_tiles;
            let extra = cores % n_tiles;
            let mut shares = Vec::with_capacity(cores as usize);
            for col in 0..n_tiles {
                let members = group + u64::from(col < extra);
                let base = k_tiles / members;
                let rem = k_tiles % members;
                for m in 0..members {
                    let kt = base + u64::from(m < rem);
                    shares.push(CoreShare {
                        n_tiles: u64::from(kt > 0),
                        k_tiles: kt,
                    });
                }
            }
            shares
        };
        let chunk_rows = chunk_rows.max(1);
        let mut row_chunks = vec![chunk_rows; (rows / chunk_rows) as usize];
        if !rows.is_multiple_of(chunk_rows) {
            row_chunks.push(rows % chunk_rows);
        }
        Ok(Self {
            tile_k,
            tile_n,
            k_tiles,
            n_tiles,
            per_core,
            row_chunks,
        })
    }

    /// Whether any output column is shared by more than one core.
    pub fn split_k(&self) -> bool {
        (self.per_core.len() as u64) > self.n_tiles
    }

    pub fn max_tiles_per_core(&self) -> u64 {
        self.per_core.iter().map(CoreShare::tiles).max().unwrap_or(0)
    }

    pub fn max_n_tiles_per_core(&self) -> u64 {
        self.per_core.iter().map(|s| s.n_tiles).max().unwrap_or(0)
    }

    pub fn total_tiles(&self) -> u64 {
        self.per_core.iter().map(CoreShare::tiles).sum()
    }

    /// Padded extents covered by the tiles.
    pub fn padded(&self) -> (u64, u64) {
        (self.k_tiles * self.tile_k, self.n_tiles * self.tile_n)
    }
}

/// Cycles and traffic of one kernel on a pool of cores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CycleReport {
    pub compute_cycles: u64,
    pub dram_bytes: u64,
    /// Bytes moved between data memory and the coprocessor.
    pub onchip_bytes: u64,
    pub memory_cycles: f64,
    pub time_cycles: u64,
    /// Cycles the kernel would take at the coprocessors' peak rate.
    pub ideal_cycles: f64,
    /// `ideal_cycles / time_cycles`.
    pub utilization: f64,
}

impl CycleReport {
    fn finish(compute_cycles: u64, dram_bytes: u64, onchip_bytes: u64, ideal: f64, mem: &MemoryShare) -> Result<Self> {
        let memory_cycles = phase_memory_time(dram_bytes, mem.bytes_per_cycle, mem.chunk_bytes, mem.overhead_bytes)?;
        let time_cycles = compute_cycles.max(memory_cycles.ceil() as u64);
        let utilization = if time_cycles == 0 {
            0.0
        } else {
            (ideal / time_cycles as f64).min(1.0)
        };
        Ok(Self {
            compute_cycles,
            dram_bytes,
            onchip_bytes,
            memory_cycles,
            time_cycles,
            ideal_cycles: ideal,
            utilization,
        })
    }
}

/// DRAM bandwidth available to the cores running a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryShare {
    pub bytes_per_cycle: f64,
    /// Largest DMA block, bytes.
    pub chunk_bytes: u64,
    pub overhead_bytes: f64,
}

fn matrix_dims(kernel: &Kernel) -> Result<(u64, u64, u64)> {
    match kernel.shape {
        Shape::Gemm { m, k, n } => Ok((m, k, n)),
        Shape::Gemv { d_out, d_in, batch } => Ok((batch, d_in, d_out)),
        _ => Err(Error::InvalidDimension(format!(
            "{} is not a matrix kernel",
            kernel.role.name()
        ))),
    }
}

/// Tile schedule of a matrix kernel on the systolic array.
pub fn sa_schedule(kernel: &Kernel, sa: &SaSpec, cores: u32, buffer_bytes: u64) -> Result<TileSchedule> {
    let (m, k, n) = matrix_dims(kernel)?;
    let row_bytes = u64::from(sa.rows) * u64::from(sa.operand_bits).div_ceil(8);
    let chunk_rows = (buffer_bytes / row_bytes.max(1)).max(1);
    TileSchedule::build(
        k,
        n,
        u64::from(sa.rows),
        u64::from(sa.cols),
        u64::from(cores),
        m,
        chunk_rows,
    )
}

/// Compute cycles of a schedule on the systolic array: every tile is reloaded
/// once per row chunk.
pub fn sa_schedule_cycles(sched: &TileSchedule, sa: &SaSpec) -> Result<u64> {
    let (r, c) = (u64::from(sa.rows), u64::from(sa.cols));
    let mut per_tile = 0u64;
    for &rows in &sched.row_chunks {
        per_tile = per_tile
            .checked_add(sa_tile_cycles(r, c, rows)?)
            .ok_or_else(|| Error::Overflow("sa cycles".into()))?;
    }
    sched
        .max_tiles_per_core()
        .checked_mul(per_tile)
        .ok_or_else(|| Error::Overflow("sa cycles".into()))
}

/// Maps a GEMM (or a GEMV treated as an M = batch GEMM) onto `cores`
/// systolic arrays. `buffer_bytes` is one core's activation buffer.
pub fn map_gemm_sa(
    kernel: &Kernel,
    sa: &SaSpec,
    cores: u32,
    buffer_bytes: u64,
    mem: &MemoryShare,
) -> Result<CycleReport> {
    let sched = sa_schedule(kernel, sa, cores, buffer_bytes)?;
    let compute = sa_schedule_cycles(&sched, sa)?;
    let (m, _, _) = matrix_dims(kernel)?;
    let elem = u64::from(sa.operand_bits).div_ceil(8);
    let tiles = sched.total_tiles();
    let loads = tiles * sched.row_chunks.len() as u64;
    let onchip = loads * u64::from(sa.rows) * u64::from(sa.cols) * elem + tiles * m * u64::from(sa.rows) * elem;
    let ideal = kernel.macs() as f64 / (f64::from(cores) * sa.macs_per_cycle());
    CycleReport::finish(compute, kernel.dram_bytes(), onchip, ideal, mem)
}

/// Tile schedule of a matrix kernel on CIM macros: R subarrays cover the
/// reduction axis, C columns the outputs. Reduction tiles are split across
/// cores only when that beats leaving the spare cores idle.
pub fn cim_schedule(kernel: &Kernel, cim: &CimSpec, cores: u32) -> Result<TileSchedule> {
    let (m, k, n) = matrix_dims(kernel)?;
    let (tk, tn) = (u64::from(cim.subarrays), u64::from(cim.cols));
    let cores = u64::from(cores);
    let split = TileSchedule::build(k, n, tk, tn, cores, m, m)?;
    if !split.split_k() {
        return Ok(split);
    }
    let plain = TileSchedule::build(k, n, tk, tn, split.n_tiles, m, m)?;
    if cim_schedule_cycles(&plain, cim, m)? <= cim_schedule_cycles(&split, cim, m)? {
        Ok(plain)
    } else {
        Ok(split)
    }
}

/// Compute cycles of a CIM schedule. A core's passes are grouped by macro
/// depth; each group serves all `rows` input vectors before the next reload.
/// Split-K adds one reduction cycle per output held by a core.
pub fn cim_schedule_cycles(sched: &TileSchedule, cim: &CimSpec, rows: u64) -> Result<u64> {
    let depth = u64::from(cim.depth);
    let w = u64::from(cim.act_bits);
    let mut worst = 0u64;
    for share in &sched.per_core {
        let passes = share.tiles();
        if passes == 0 {
            continue;
        }
        let full = passes / depth;
        let rest = passes % depth;
        let mut cycles = if full > 0 {
            full.checked_mul(cim_pass_cycles(depth * rows, w)?)
                .ok_or_else(|| Error::Overflow("cim cycles".into()))?
        } else {
            0
        };
        if rest > 0 {
            cycles += cim_pass_cycles(rest * rows, w)?;
        }
        if sched.split_k() {
            cycles += share.n_tiles * sched.tile_n * rows;
        }
        worst = worst.max(cycles);
    }
    Ok(worst)
}

/// Maps a GEMV (or a GEMM treated as `m` GEMVs) onto `cores` CIM macros.
/// Resident weights are already in the macros and cost no DRAM traffic.
pub fn map_gemv_cim(
    kernel: &Kernel,
    cim: &CimSpec,
    cores: u32,
    resident: bool,
    mem: &MemoryShare,
) -> Result<CycleReport> {
    let (m, _, _) = matrix_dims(kernel)?;
    let sched = cim_schedule(kernel, cim, cores)?;
    let compute = cim_schedule_cycles(&sched, cim, m)?;
    let dram = if resident {
        kernel.dram_bytes() - kernel.weight_bytes
    } else {
        kernel.dram_bytes()
    };
    let cells = u64::from(cim.subarrays) * u64::from(cim.cols);
    let onchip = sched.total_tiles() * cells * u64::from(cim.weight_bits) / 8
        + sched.total_tiles() * m * u64::from(cim.subarrays) * u64::from(cim.act_bits).div_ceil(8);
    let ideal = kernel.macs() as f64 / (f64::from(cores) * cim.macs_per_cycle());
    CycleReport::finish(compute, dram, onchip, ideal, mem)
}

/// Elementwise and softmax kernels on the cores' vector units.
pub fn map_vector(kernel: &Kernel, cores: u32, lanes: u32, mem: &MemoryShare) -> Result<CycleReport> {
    let width = u64::from(cores) * u64::from(lanes);
    require_positive("vector width", width)?;
    let compute = kernel.flops.div_ceil(width);
    CycleReport::finish(compute, kernel.dram_bytes(), 0, compute as f64, mem)
}

/// Any kernel on a pool of `clusters` identical clusters sharing
/// `mem.bytes_per_cycle`.
pub fn evaluate_kernel(
    kernel: &Kernel,
    cluster: &ClusterSpec,
    clusters: u32,
    mem: &MemoryShare,
    dma_buffers: u32,
) -> Result<CycleReport> {
    let cores = clusters
        .checked_mul(cluster.cores)
        .ok_or_else(|| Error::Overflow("core count".into()))?;
    require_positive("cores", u64::from(cores))?;
    if !kernel.is_matrix() {
        return map_vector(kernel, cores, cluster.vector_lanes, mem);
    }
    match cluster.coproc {
        Coproc::Systolic(sa) => {
            let buffer = cluster.dma_chunk_bytes(dma_buffers);
            map_gemm_sa(kernel, &sa, cores, buffer, mem)
        }
        Coproc::Cim(cim) => map_gemv_cim(kernel, &cim, cores, false, mem),
    }
}

/// Scalar baseline: every core retires one MAC per cycle.
pub fn evaluate_kernel_simd(kernel: &Kernel, cores: u32, lanes: u32, mem: &MemoryShare) -> Result<CycleReport> {
    require_positive("cores", u64::from(cores))?;
    if !kernel.is_matrix() {
        return map_vector(kernel, cores, lanes, mem);
    }
    let compute = kernel.macs().div_ceil(u64::from(cores));
    CycleReport::finish(compute, kernel.dram_bytes(), 0, compute as f64, mem)
}
