//! Cycle-stepped reference simulators for small instances.
//!
//! These simulate register-level dataflow and check their numeric results,
//! so the cycle counts they return are independent of the closed-form models
//! in [`crate::cycles`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{CimSpec, SaSpec};
use crate::cycles::{cim_schedule, sa_schedule, TileSchedule};
use crate::error::{Error, Result};
use crate::workload::{Kernel, Shape};

/// Largest extent accepted along any axis.
pub const SIM_CAP: u64 = 64;

fn check_cap(dim: &'static str, value: u64) -> Result<()> {
    if value > SIM_CAP {
        Err(Error::OverSimCap {
            dim,
            value,
            cap: SIM_CAP,
        })
    } else if value == 0 {
        Err(Error::InvalidDimension(format!("{dim} must be ≥ 1")))
    } else {
        Ok(())
    }
}

/// Weight-stationary array: returns the cycle count and the `m x c` outputs.
///
/// Weight row `i` is written on cycle `i`. The activation feeder starts on
/// the last load cycle; row `r` of the array sees activation row `j` on cycle
/// `R - 1 + j + r`. Activations move right and partial sums move down one PE
/// per cycle, so every PE holds one (activation, partial sum) pair per cycle.
pub fn simulate_sa_tile(weights: &[i64], r: usize, c: usize, acts: &[i64], m: usize) -> (u64, Vec<i64>) {
    assert_eq!(weights.len(), r * c);
    assert_eq!(acts.len(), m * r);
    let mut w_reg = vec![None::<i64>; r * c];
    // (activation, row index j) travelling right; partial sum travelling down.
    let mut a_reg: Vec<Option<(i64, usize)>> = vec![None; r * c];
    let mut p_reg: Vec<Option<(i64, usize)>> = vec![None; r * c];
    let mut out = vec![0i64; m * c];
    let mut done = 0usize;
    let start = r - 1;
    let mut cycle = 0u64;
    loop {
        if (cycle as usize) < r {
            let row = cycle as usize;
            for col in 0..c {
                w_reg[row * c + col] = Some(weights[row * c + col]);
            }
        }
        let mut a_next = vec![None; r * c];
        let mut p_next = vec![None; r * c];
        for row in 0..r {
            for col in 0..c {
                let a_in = if col == 0 {
                    let t = cycle as isize - start as isize - row as isize;
                    (t >= 0 && (t as usize) < m).then(|| (acts[t as usize * r + row], t as usize))
                } else {
                    a_reg[row * c + col - 1]
                };
                let Some((a, j)) = a_in else { continue };
                let w = w_reg[row * c + col].expect("weight used before it was loaded");
                let p_in = if row == 0 {
                    0
                } else {
                    let (p, pj) = p_reg[(row - 1) * c + col].expect("partial sum missing");
                    assert_eq!(pj, j, "partial sum out of step");
                    p
                };
                a_next[row * c + col] = Some((a, j));
                p_next[row * c + col] = Some((p_in + a * w, j));
            }
        }
        for col in 0..c {
            if let Some((p, j)) = p_next[(r - 1) * c + col] {
                out[j * c + col] = p;
                done += 1;
            }
        }
        a_reg = a_next;
        p_reg = p_next;
        cycle += 1;
        if done == m * c {
            return (cycle, out);
        }
    }
}

/// Bit-serial CIM column group: `passes` vectors of `r` unsigned `w`-bit
/// activations against one `r x c` weight slice each. Returns the cycle count
/// and the `passes x c` outputs.
///
/// One activation bit plane is broadcast per cycle, LSB first; columns
/// shift-accumulate. A pass's result is registered out one cycle after its
/// last bit, overlapping the next pass's first bit.
pub fn simulate_cim_passes(
    weights: &[i64],
    r: usize,
    c: usize,
    acts: &[u64],
    passes: usize,
    w: u32,
) -> (u64, Vec<i64>) {
    assert_eq!(weights.len(), passes * r * c);
    assert_eq!(acts.len(), passes * r);
    let mut acc = vec![0i64; c];
    let mut pending: Option<(usize, Vec<i64>)> = None;
    let mut out = vec![0i64; passes * c];
    let mut done = 0usize;
    let mut cycle = 0u64;
    loop {
        if let Some((p, vals)) = pending.take() {
            out[p * c..(p + 1) * c].copy_from_slice(&vals);
            done += 1;
        }
        let slot = cycle as usize;
        let pass = slot / w as usize;
        if pass < passes {
            let bit = (slot % w as usize) as u32;
            for col in 0..c {
                let mut partial = 0i64;
                for row in 0..r {
                    if (acts[pass * r + row] >> bit) & 1 == 1 {
                        partial += weights[(pass * r + row) * c + col];
                    }
                }
                acc[col] += partial << bit;
            }
            if bit + 1 == w {
                pending = Some((pass, std::mem::replace(&mut acc, vec![0; c])));
            }
        }
        cycle += 1;
        if done == passes {
            return (cycle, out);
        }
    }
}

fn kernel_dims(kernel: &Kernel) -> Result<(u64, u64, u64)> {
    let (m, k, n) = match kernel.shape {
        Shape::Gemm { m, k, n } => (m, k, n),
        Shape::Gemv { d_out, d_in, batch } => (batch, d_in, d_out),
        _ => {
            return Err(Error::InvalidDimension(
                "micro-simulator handles matrix kernels only".into(),
            ))
        }
    };
    check_cap("M", m)?;
    check_cap("K", k)?;
    check_cap("N", n)?;
    Ok((m, k, n))
}

fn random_block(rng: &mut ChaCha8Rng, len: usize, lo: i64, hi: i64) -> Vec<i64> {
    (0..len).map(|_| rng.random_range(lo..=hi)).collect()
}

fn per_core_cycles(sched: &TileSchedule, mut tile: impl FnMut(u64) -> u64) -> u64 {
    sched
        .per_core
        .iter()
        .map(|share| (0..share.tiles()).map(&mut tile).sum::<u64>())
        .max()
        .unwrap_or(0)
}

/// Simulates every tile of `kernel` on `cores` systolic arrays and returns
/// the busiest core's cycle count.
pub fn micro_simulate_sa(kernel: &Kernel, sa: &SaSpec, cores: u32, buffer_bytes: u64, seed: u64) -> Result<u64> {
    kernel_dims(kernel)?;
    check_cap("R", u64::from(sa.rows))?;
    check_cap("C", u64::from(sa.cols))?;
    let sched = sa_schedule(kernel, sa, cores, buffer_bytes)?;
    let (r, c) = (sa.rows as usize, sa.cols as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failure = None;
    let cycles = per_core_cycles(&sched, |_| {
        sched
            .row_chunks
            .iter()
            .map(|&rows| {
                let rows = rows as usize;
                let w = random_block(&mut rng, r * c, -8, 8);
                let a = random_block(&mut rng, rows * r, -8, 8);
                let (cyc, out) = simulate_sa_tile(&w, r, c, &a, rows);
                for j in 0..rows {
                    for col in 0..c {
                        let want: i64 = (0..r).map(|i| a[j * r + i] * w[i * c + col]).sum();
                        if out[j * c + col] != want {
                            failure = Some(format!("systolic output mismatch at ({j}, {col})"));
                        }
                    }
                }
                cyc
            })
            .sum()
    });
    match failure {
        Some(msg) => Err(Error::ShapeMismatch(msg)),
        None => Ok(cycles),
    }
}

/// Simulates `kernel` on `cores` CIM macros and returns the busiest core's
/// cycle count, including the split-K reduction cost.
pub fn micro_simulate_cim(kernel: &Kernel, cim: &CimSpec, cores: u32, seed: u64) -> Result<u64> {
    let (m, _, _) = kernel_dims(kernel)?;
    check_cap("R", u64::from(cim.subarrays))?;
    check_cap("C", u64::from(cim.cols))?;
    check_cap("W", u64::from(cim.act_bits))?;
    let sched = cim_schedule(kernel, cim, cores)?;
    let (r, c) = (cim.subarrays as usize, cim.cols as usize);
    let w = cim.act_bits.min(32);
    let depth = u64::from(cim.depth);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0u64;
    for share in &sched.per_core {
        let mut passes_left = share.tiles();
        let mut cycles = 0u64;
        while passes_left > 0 {
            let group = passes_left.min(depth);
            passes_left -= group;
            // Every resident slice is used by each of the m input vectors.
            let passes = (group * m) as usize;
            let weights = random_block(&mut rng, passes * r * c, -8, 8);
            let max_act = if w >= 63 { u64::MAX } else { (1u64 << w) - 1 };
            let acts: Vec<u64> = (0..passes * r)
                .map(|_| rng.random_range(0..=max_act.min(1 << 12)))
                .collect();
            let (cyc, out) = simulate_cim_passes(&weights, r, c, &acts, passes, w);
            for p in 0..passes {
                for col in 0..c {
                    let want: i64 = (0..r)
                        .map(|i| acts[p * r + i] as i64 * weights[(p * r + i) * c + col])
                        .sum();
                    if out[p * c + col] != want {
                        return Err(Error::ShapeMismatch(format!(
                            "CIM output mismatch at pass {p}, column {col}"
                        )));
                    }
                }
            }
            cycles += cyc;
        }
        if sched.split_k() && share.tiles() > 0 {
            // One accumulate per output element through the shared buffer.
            cycles += share.n_tiles * sched.tile_n * m;
        }
        worst = worst.max(cycles);
    }
    Ok(worst)
}
