//! DRAM bandwidth, DMA efficiency and per-cluster budget throttling.
//!
//! Each cluster's DMA engine carries a counter of bytes moved in the current
//! interval of `T` cycles. Once a request would push the counter past the
//! cluster's budget it waits for the next interval, where the counter is reset
//! before the request is accounted.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, ClusterKind};
use crate::error::{Error, Result};

/// Sustained bandwidth of a DMA stream moving blocks of `transfer_bytes`,
/// `ideal_bw * s / (s + o)`.
pub fn effective_bandwidth(transfer_bytes: f64, ideal_bw: f64, overhead_bytes: f64) -> Result<f64> {
    if !(transfer_bytes >= 1.0) {
        return Err(Error::InvalidDimension(format!(
            "transfer size {transfer_bytes} must be ≥ 1 byte"
        )));
    }
    if !(ideal_bw > 0.0) {
        return Err(Error::ZeroBandwidth("effective bandwidth".into()));
    }
    if !(overhead_bytes >= 0.0) {
        return Err(Error::InvalidDimension(format!(
            "overhead {overhead_bytes} must be ≥ 0"
        )));
    }
    Ok(ideal_bw * transfer_bytes / (transfer_bytes + overhead_bytes))
}

/// Cycles to move `dram_bytes` at `bytes_per_cycle` when the DMA issues
/// blocks of at most `chunk_bytes`.
pub fn phase_memory_time(dram_bytes: u64, bytes_per_cycle: f64, chunk_bytes: u64, overhead_bytes: f64) -> Result<f64> {
    if !(bytes_per_cycle > 0.0) {
        return Err(Error::ZeroBandwidth("memory phase".into()));
    }
    if dram_bytes == 0 {
        return Ok(0.0);
    }
    let chunk = dram_bytes.min(chunk_bytes).max(1) as f64;
    let eff = effective_bandwidth(chunk, bytes_per_cycle, overhead_bytes)?;
    Ok(dram_bytes as f64 / eff)
}

/// Bytes each cluster may move per interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthBudget {
    /// Budget of every CC cluster, bytes per interval.
    pub cc_bytes: f64,
    /// Budget of every MC cluster, bytes per interval.
    pub mc_bytes: f64,
    pub interval_cycles: u64,
}

impl BandwidthBudget {
    /// Splits the DRAM bandwidth so per-cluster budgets stand in the ratio
    /// `cc : mc` and together use the whole channel, rounded down to whole
    /// bytes.
    pub fn from_ratio(arch: &ArchConfig, cc: u32, mc: u32) -> Result<Self> {
        if cc == 0 && mc == 0 {
            return Err(Error::InvalidConfig("ratio 0:0".into()));
        }
        let t = arch.throttle_interval_cycles;
        if t == 0 {
            return Err(Error::InvalidConfig("interval T must be ≥ 1".into()));
        }
        let per_interval = arch.dram_bytes_per_cycle() * t as f64;
        let n_cc = f64::from(arch.cc_clusters());
        let n_mc = f64::from(arch.mc_clusters());
        let denom = n_cc * f64::from(cc) + n_mc * f64::from(mc);
        if denom <= 0.0 {
            return Err(Error::ZeroBandwidth("every cluster".into()));
        }
        Ok(Self {
            cc_bytes: (per_interval * f64::from(cc) / denom).floor(),
            mc_bytes: (per_interval * f64::from(mc) / denom).floor(),
            interval_cycles: t,
        })
    }

    pub fn equal(arch: &ArchConfig) -> Result<Self> {
        Self::from_ratio(arch, 1, 1)
    }

    pub fn per_cluster(&self, kind: ClusterKind) -> f64 {
        match kind {
            ClusterKind::ComputeCentric => self.cc_bytes,
            ClusterKind::MemoryCentric => self.mc_bytes,
        }
    }

    /// Sustained bytes per cycle of one cluster of `kind`.
    pub fn bytes_per_cycle(&self, kind: ClusterKind) -> f64 {
        self.per_cluster(kind) / self.interval_cycles as f64
    }

    /// Bytes per interval summed over all clusters.
    pub fn total_bytes(&self, arch: &ArchConfig) -> f64 {
        f64::from(arch.cc_clusters()) * self.cc_bytes + f64::from(arch.mc_clusters()) * self.mc_bytes
    }

    pub fn fits(&self, arch: &ArchConfig) -> bool {
        let cap = arch.dram_bytes_per_cycle() * self.interval_cycles as f64;
        self.interval_cycles >= 1 && self.total_bytes(arch) <= cap * (1.0 + 1e-12)
    }
}

/// Per-cluster DMA byte counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PmcState {
    pub consumed: u64,
    pub interval_start: u64,
    /// The last request was refused within the current interval.
    pub blocked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThrottleOutcome {
    Granted,
    Blocked { until: u64 },
}

/// Accounts one DMA request against the budget. `budget = u64::MAX` disables
/// throttling.
pub fn throttle_step(
    pmc: PmcState,
    request_bytes: u64,
    budget: u64,
    interval: u64,
    now: u64,
) -> (PmcState, ThrottleOutcome) {
    let interval = interval.max(1);
    let mut next = pmc;
    if now >= pmc.interval_start.saturating_add(interval) {
        next = PmcState {
            consumed: 0,
            interval_start: now - now % interval,
            blocked: false,
        };
    }
    if budget == u64::MAX {
        next.consumed = next.consumed.saturating_add(request_bytes);
        next.blocked = false;
        return (next, ThrottleOutcome::Granted);
    }
    match next.consumed.checked_add(request_bytes) {
        Some(total) if total <= budget => {
            next.consumed = total;
            next.blocked = false;
            (next, ThrottleOutcome::Granted)
        }
        _ => {
            next.blocked = true;
            let until = next.interval_start + interval;
            (next, ThrottleOutcome::Blocked { until })
        }
    }
}

/// A granted piece of a DMA request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub request: usize,
    pub cycle: u64,
    pub bytes: u64,
}

/// Replays `(issue_cycle, bytes)` requests from one cluster in FIFO order.
/// Requests larger than the budget are split into budget-sized pieces;
/// refused pieces wait for the next interval boundary.
pub fn replay_requests(requests: &[(u64, u64)], budget: u64, interval: u64) -> Result<Vec<Grant>> {
    if budget == 0 {
        return Err(Error::ZeroBandwidth("throttled cluster".into()));
    }
    let interval = interval.max(1);
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by_key(|&i| (requests[i].0, i));
    let mut queue: VecDeque<(usize, u64)> = VecDeque::new();
    for i in order {
        let (_, bytes) = requests[i];
        let mut left = bytes;
        while left > 0 {
            let piece = left.min(budget);
            queue.push_back((i, piece));
            left -= piece;
        }
    }
    let mut pmc = PmcState::default();
    let mut now = 0u64;
    let mut grants = Vec::new();
    while let Some(&(i, bytes)) = queue.front() {
        now = now.max(requests[i].0);
        let (state, outcome) = throttle_step(pmc, bytes, budget, interval, now);
        pmc = state;
        match outcome {
            ThrottleOutcome::Granted => {
                grants.push(Grant {
                    request: i,
                    cycle: now,
                    bytes,
                });
                queue.pop_front();
            }
            ThrottleOutcome::Blocked { until } => now = until,
        }
    }
    Ok(grants)
}
