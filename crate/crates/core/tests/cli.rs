use std::process::{Command, Output};

fn pseudoherm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pseudoherm")).args(args).output().expect("binary runs")
}

#[test]
fn table_exits_zero_with_json() {
    let out = pseudoherm(&["table"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], "1");
    assert_eq!(v["pass"], true);
}

#[test]
fn verify_exit_codes() {
    let base = ["verify", "--seed", "4", "--trials", "2", "--dim-pairs", "2,2", "--samples", "20"];
    assert_eq!(pseudoherm(&base).status.code(), Some(0));
    let mut neg = base.to_vec();
    neg.push("--negative-control");
    assert_eq!(pseudoherm(&neg).status.code(), Some(1));
}

#[test]
fn configuration_errors_exit_two() {
    for args in [
        vec!["model", "--family", "su_pq", "--params", "0,0"],
        vec!["verify", "--tol", "-1"],
        vec!["table", "--out", "/nonexistent-dir/report.json"],
    ] {
        let out = pseudoherm(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn positional_params_pair_with_families() {
    let out = pseudoherm(&["model", "--family", "su_pq", "--params", "2,1", "--family", "sp_p_R:2", "--samples", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["models"].as_array().unwrap().len(), 2);
}

#[test]
fn exceptional_family_reports_out_of_scope() {
    let out = pseudoherm(&["model", "--family", "e6_14"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["models"][0]["status"], "out_of_scope");
}
