use edgesim::workload::BandwidthPolicy;
use edgesim_cli::manifest_hash;
use edgesim_cli::pack::{check_scenarios, policy_tag, ScenarioPack};

const PACK: &str = r#"
compare = true
ratio_set = [[1, 1], [1, 3]]

[[scenario]]
id = "one"
input_tokens = 8
output_tokens = 4

[[sweep]]
id = "grid"
input_tokens = 8
output_tokens = [4, 16]
batch = [1, 2]
policies = [{ kind = "equal" }, { kind = "dynamic" }, { kind = "fixed-ratio", cc = 1, mc = 3 }]
"#;

#[test]
fn sweep_expands_to_cartesian_product() {
    let pack = ScenarioPack::from_toml_str(PACK).unwrap();
    assert_eq!(pack.scenarios(false).len(), 1);
    let all = pack.scenarios(true);
    assert_eq!(all.len(), 1 + 2 * 2 * 3);
    assert_eq!(all[0].id, "one");
    assert_eq!(all[1].id, "grid-l4-b1-equal");
    assert_eq!(all[3].id, "grid-l4-b1-r1-3");
    assert_eq!(all[12].id, "grid-l16-b2-r1-3");
    assert!(check_scenarios(&all).is_empty());
    assert_eq!(pack.ratio_set, Some(vec![(1, 1), (1, 3)]));
}

#[test]
fn policy_tags() {
    assert_eq!(policy_tag(&BandwidthPolicy::Equal), "equal");
    assert_eq!(policy_tag(&BandwidthPolicy::Dynamic), "dynamic");
    assert_eq!(policy_tag(&BandwidthPolicy::FixedRatio { cc: 2, mc: 7 }), "r2-7");
}

#[test]
fn bad_ids_are_reported() {
    let mut pack = ScenarioPack::from_toml_str(PACK).unwrap();
    pack.scenario[0].id = "../escape".into();
    let problems = check_scenarios(&pack.scenarios(false));
    assert_eq!(problems.len(), 1);
    pack.scenario[0].id = ".hidden".into();
    assert_eq!(check_scenarios(&pack.scenarios(false)).len(), 1);
}

#[test]
fn trace_path_is_relative_to_pack() {
    let pack = ScenarioPack::from_toml_str("trace = \"../traces/t.toml\"").unwrap();
    let p = pack.trace_path(std::path::Path::new("/cfg/scenarios/p.toml")).unwrap();
    assert_eq!(p, std::path::Path::new("/cfg/scenarios/../traces/t.toml"));
}

#[test]
fn manifest_hash_separates_fields() {
    let a = manifest_hash(&[("arch", b"ab"), ("model", b"c")], 0);
    let b = manifest_hash(&[("arch", b"a"), ("model", b"bc")], 0);
    let c = manifest_hash(&[("arch", b"ab"), ("model", b"c")], 1);
    assert_eq!(a.len(), 64);
    assert_ne!(a, b);
    assert_ne!(a, c);
    assert_eq!(a, manifest_hash(&[("arch", b"ab"), ("model", b"c")], 0));
}
