use pseudoherm::cli_report::{run, Command, ModelSpec, ReportDocument, RowStatus, RunConfig};
use pseudoherm::lie_models::Family;

fn verify_config(negative: bool) -> RunConfig {
    let mut c = RunConfig::new(Command::Verify);
    c.seeds = vec![0, 1];
    c.dim_pairs = vec![(2, 2), (2, 3)];
    c.models = vec![ModelSpec::new(Family::SuPq, vec![2, 1])];
    c.samples = 50;
    c.negative_control = negative;
    c
}

#[test]
fn table_rows_match_closed_forms() {
    let doc = run(&RunConfig::new(Command::Table)).unwrap();
    assert!(doc.pass);
    assert_eq!(doc.exit_code(), 0);
    for row in &doc.table {
        match row.status {
            RowStatus::Ok => assert!(row.note.is_none() || row.space_form, "{row:?}"),
            RowStatus::Flat => assert_eq!(row.family, "heisenberg"),
            RowStatus::OutOfScope => assert!(row.family.starts_with('e')),
            RowStatus::Error => panic!("{row:?}"),
        }
    }
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let a = run(&verify_config(false)).unwrap().to_json().unwrap();
    let b = run(&verify_config(false)).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let mut m = RunConfig::new(Command::Model);
    m.models = vec![ModelSpec::parse("so_p_2:3").unwrap()];
    m.samples = 100;
    assert_eq!(run(&m).unwrap().to_json().unwrap(), run(&m).unwrap().to_json().unwrap());
}

#[test]
fn report_round_trips() {
    let doc = run(&verify_config(false)).unwrap();
    let text = doc.to_json().unwrap();
    let back = ReportDocument::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);
    assert_eq!(back.schema_version, "1");
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let ok = run(&verify_config(false)).unwrap();
    assert!(ok.pass, "{:?}", ok.suites.iter().filter(|s| !s.pass).collect::<Vec<_>>());
    let bad = run(&verify_config(true)).unwrap();
    assert!(!bad.pass);
    assert_eq!(bad.exit_code(), 1);
    assert!(bad.suites.iter().filter(|s| !s.pass).all(|s| s.name.starts_with("control/")));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = RunConfig::new(Command::Model);
    c.tolerance = 0.0;
    assert!(run(&c).is_err());
    let mut c = RunConfig::new(Command::Verify);
    c.samples = 0;
    assert!(run(&c).is_err());
    let mut c = RunConfig::new(Command::Model);
    c.models = vec![ModelSpec::parse("su_pq:0,1").unwrap()];
    assert!(run(&c).is_err());
    assert!(ModelSpec::parse("nonsense").is_err());
}

fn assert_close(a: &serde_json::Value, b: &serde_json::Value, path: &str) {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0), "{path}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_close(u, v, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}");
            for (k, u) in x {
                assert_close(u, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn table_matches_golden_report() {
    let golden: serde_json::Value = serde_json::from_str(include_str!("golden/table.json")).unwrap();
    let mut c = RunConfig::new(Command::Table);
    c.seeds = vec![0];
    let doc = run(&c).unwrap();
    let now: serde_json::Value = serde_json::from_str(&doc.to_json().unwrap()).unwrap();
    assert_close(&now, &golden, "$");
}
