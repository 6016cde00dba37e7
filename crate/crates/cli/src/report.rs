//! Result tables and the run summary.

use std::io::Write;
use std::path::Path;

use edgesim::pipeline::{BalancePoints, Comparison, Design, DesignRow, PhaseReport, PipelinePlan};
use edgesim::workload::Phase;
use serde::Serialize;

/// One line of a per-scenario results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub scenario_id: String,
    pub design: &'static str,
    pub phase: &'static str,
    pub cycles: u64,
    pub dram_bytes: u64,
    pub utilization: f64,
    pub latency_ms: f64,
    pub throughput_tokens_per_s: f64,
    pub prune_ratio_mean: f64,
    pub bw_ratio: String,
    pub manifest_hash: String,
}

/// Everything computed for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub plan: PipelinePlan,
    pub comparison: Option<Comparison>,
    pub balance: Option<BalancePoints>,
}

fn ratio_label(r: (u32, u32)) -> String {
    format!("{}:{}", r.0, r.1)
}

struct DesignSummary<'a> {
    name: &'static str,
    encode: &'a PhaseReport,
    prefill: &'a PhaseReport,
    decode: &'a PhaseReport,
    total_cycles: u64,
    total_utilization: f64,
    latency_ms: f64,
    throughput: f64,
    bw_ratio: String,
}

fn sequential<'a>(row: &'a DesignRow, plan: &PipelinePlan, clock_hz: f64) -> DesignSummary<'a> {
    let b = f64::from(plan.batch);
    let ideal = b * (row.encode.ideal_cycles + row.prefill.ideal_cycles) + row.decode.ideal_cycles;
    let total = row.total_cycles as f64;
    DesignSummary {
        name: row.design.name(),
        encode: &row.encode,
        prefill: &row.prefill,
        decode: &row.decode,
        total_cycles: row.total_cycles,
        total_utilization: if total > 0.0 { (ideal / total).min(1.0) } else { 0.0 },
        latency_ms: 1e3 * total / clock_hz,
        throughput: if total > 0.0 {
            b * plan.output_tokens as f64 * clock_hz / total
        } else {
            0.0
        },
        bw_ratio: "full".into(),
    }
}

fn hetero(plan: &PipelinePlan) -> DesignSummary<'_> {
    let period = plan.period_cycles as f64;
    let b = f64::from(plan.batch);
    let cc_ideal = b * (plan.encode.ideal_cycles + plan.prefill.ideal_cycles);
    // Mean of the two stages' utilizations over one period.
    let util = if period > 0.0 {
        ((cc_ideal / period).min(1.0) + (plan.decode.ideal_cycles / period).min(1.0)) / 2.0
    } else {
        0.0
    };
    DesignSummary {
        name: Design::Hetero.name(),
        encode: &plan.encode,
        prefill: &plan.prefill,
        decode: &plan.decode,
        total_cycles: plan.period_cycles,
        total_utilization: util,
        latency_ms: 1e3 * plan.latency_s,
        throughput: plan.throughput_tokens_per_s,
        bw_ratio: ratio_label(plan.ratio),
    }
}

/// Rows for encode, prefill, decode and total of every evaluated design.
pub fn rows(result: &ScenarioResult, clock_hz: f64, manifest_hash: &str) -> Vec<Row> {
    let plan = &result.plan;
    let batch = u64::from(plan.batch);
    let mut designs = Vec::new();
    if let Some(cmp) = &result.comparison {
        for d in [Design::HomoCc, Design::HomoMc] {
            designs.push(sequential(cmp.row(d), plan, clock_hz));
        }
        designs.push(hetero(plan));
        designs.push(sequential(cmp.row(Design::Simd), plan, clock_hz));
    } else {
        designs.push(hetero(plan));
    }
    let mut out = Vec::new();
    for d in designs {
        let cc_bytes = batch * (d.encode.dram_bytes + d.prefill.dram_bytes);
        let phases = [
            (
                Phase::Encode.name(),
                d.encode.cycles,
                d.encode.dram_bytes,
                d.encode.utilization(),
            ),
            (
                Phase::Prefill.name(),
                d.prefill.cycles,
                d.prefill.dram_bytes,
                d.prefill.utilization(),
            ),
            (
                Phase::Decode.name(),
                d.decode.cycles,
                d.decode.dram_bytes,
                d.decode.utilization(),
            ),
            (
                "total",
                d.total_cycles,
                cc_bytes + d.decode.dram_bytes,
                d.total_utilization,
            ),
        ];
        for (phase, cycles, dram_bytes, utilization) in phases {
            out.push(Row {
                scenario_id: plan.scenario_id.clone(),
                design: d.name,
                phase,
                cycles,
                dram_bytes,
                utilization,
                latency_ms: d.latency_ms,
                throughput_tokens_per_s: d.throughput,
                prune_ratio_mean: plan.prune_ratio_mean,
                bw_ratio: d.bw_ratio.clone(),
                manifest_hash: manifest_hash.to_string(),
            });
        }
    }
    out
}

pub fn write_rows<W: Write>(w: W, rows: &[Row]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Per-scenario entry of `summary.json` and `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub batch: u32,
    pub bw_ratio: String,
    pub period_cycles: u64,
    pub latency_cycles: u64,
    pub latency_ms: f64,
    pub throughput_tokens_per_s: f64,
    pub prune_ratio_mean: f64,
    pub balance_l_e: Option<u64>,
    pub balance_l_b: Option<u64>,
    pub hetero_over_homo_cc: Option<f64>,
    pub hetero_over_homo_mc: Option<f64>,
    pub hetero_over_simd: Option<f64>,
}

pub fn summarize(result: &ScenarioResult, input_tokens: u64) -> ScenarioSummary {
    let plan = &result.plan;
    let speedup = |d| result.comparison.as_ref().map(|c| c.speedup(Design::Hetero, d, None));
    ScenarioSummary {
        scenario_id: plan.scenario_id.clone(),
        input_tokens,
        output_tokens: plan.output_tokens,
        batch: plan.batch,
        bw_ratio: ratio_label(plan.ratio),
        period_cycles: plan.period_cycles,
        latency_cycles: plan.latency_cycles,
        latency_ms: 1e3 * plan.latency_s,
        throughput_tokens_per_s: plan.throughput_tokens_per_s,
        prune_ratio_mean: plan.prune_ratio_mean,
        balance_l_e: result.balance.map(|b| b.l_e),
        balance_l_b: result.balance.map(|b| b.l_b),
        hetero_over_homo_cc: speedup(Design::HomoCc),
        hetero_over_homo_mc: speedup(Design::HomoMc),
        hetero_over_simd: speedup(Design::Simd),
    }
}
