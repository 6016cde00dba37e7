//! Scenario packs: the TOML files under `configs/scenarios/`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use edgesim::workload::{BandwidthPolicy, Scenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPack {
    /// Also evaluate the homogeneous and scalar designs.
    #[serde(default)]
    pub compare: bool,
    /// `[cc, mc]` per-cluster budget ratios for the allocation search.
    #[serde(default)]
    pub ratio_set: Option<Vec<(u32, u32)>>,
    /// Trace recipe (`.toml`) or trace file providing per-layer prune ratios,
    /// relative to the pack file.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub scenario: Vec<Scenario>,
    #[serde(default)]
    pub sweep: Vec<Sweep>,
}

/// Cartesian product of output lengths, batch sizes and policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub id: String,
    pub input_tokens: u64,
    pub output_tokens: Vec<u64>,
    #[serde(default = "default_batches")]
    pub batch: Vec<u32>,
    #[serde(default = "default_policies")]
    pub policies: Vec<BandwidthPolicy>,
    #[serde(default)]
    pub pruning_enabled: bool,
    #[serde(default)]
    pub prune_ratio: Option<f64>,
}

fn default_batches() -> Vec<u32> {
    vec![1]
}

fn default_policies() -> Vec<BandwidthPolicy> {
    vec![BandwidthPolicy::Equal]
}

pub fn policy_tag(p: &BandwidthPolicy) -> String {
    match p {
        BandwidthPolicy::Equal => "equal".into(),
        BandwidthPolicy::Dynamic => "dynamic".into(),
        BandwidthPolicy::FixedRatio { cc, mc } => format!("r{cc}-{mc}"),
    }
}

impl Sweep {
    pub fn expand(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &l in &self.output_tokens {
            for &b in &self.batch {
                for p in &self.policies {
                    out.push(Scenario {
                        id: format!("{}-l{l}-b{b}-{}", self.id, policy_tag(p)),
                        input_tokens: self.input_tokens,
                        output_tokens: l,
                        batch: b,
                        pruning_enabled: self.pruning_enabled,
                        prune_ratio: self.prune_ratio,
                        bandwidth_policy: *p,
                    });
                }
            }
        }
        out
    }
}

impl ScenarioPack {
    pub fn from_toml_str(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    /// Explicit scenarios, followed by the sweep grids when `with_sweeps`.
    pub fn scenarios(&self, with_sweeps: bool) -> Vec<Scenario> {
        let mut out = self.scenario.clone();
        if with_sweeps {
            out.extend(self.sweep.iter().flat_map(Sweep::expand));
        }
        out
    }

    pub fn trace_path(&self, pack_path: &Path) -> Option<PathBuf> {
        let dir = pack_path.parent().unwrap_or(Path::new("."));
        self.trace.as_ref().map(|t| dir.join(t))
    }
}

/// Problems with a scenario list: ids must be unique and usable as file
/// names, and each scenario must validate.
pub fn check_scenarios(scenarios: &[Scenario]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for s in scenarios {
        let id_ok = !s.id.is_empty()
            && !s.id.starts_with('.')
            && s.id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        if !id_ok {
            problems.push(format!("scenario id {:?} must be non-empty [A-Za-z0-9._-]", s.id));
        }
        if !seen.insert(s.id.as_str()) {
            problems.push(format!("duplicate scenario id {}", s.id));
        }
        if let Err(e) = s.validate() {
            problems.push(e.to_string());
        }
    }
    problems
}
