//! Every report the pipeline emits must validate against the published JSON
//! schema, and the schema must be strict enough to reject shape drift.

use conley::report::{run_analyze, RunConfig, Stages};
use serde_json::Value;

fn schema() -> Value {
    let text = include_str!("../../../schema/report.schema.json");
    serde_json::from_str(text).expect("schema file is valid JSON")
}

fn validator() -> jsonschema::Validator {
    jsonschema::validator_for(&schema()).expect("schema compiles")
}

fn report_value(config_json: &str, stages: Stages) -> Value {
    let mut cfg: RunConfig = serde_json::from_str(config_json).unwrap();
    cfg.stages = stages;
    let report = run_analyze(&cfg).unwrap();
    serde_json::from_str(&conley::report::report_to_json(&report)).unwrap()
}

#[test]
fn full_pipeline_report_validates() {
    let v = validator();
    let report = report_value(
        r#"{"system": {"name": "cat_map"}, "depth": 4}"#,
        Stages::all(),
    );
    if let Err(e) = v.validate(&report) {
        panic!("cat_map report rejected: {e}");
    }
}

#[test]
fn partial_stage_report_validates() {
    let v = validator();
    let stages = Stages {
        classes: true,
        filtration: true,
        conley: true,
        closing: false,
        exponents: false,
        classify: false,
    };
    let report = report_value(
        r#"{"system": {"name": "morse_gradient_t1"}, "depth": 5}"#,
        stages,
    );
    if let Err(e) = v.validate(&report) {
        panic!("morse report rejected: {e}");
    }
}

#[test]
fn empty_and_box_domain_reports_validate() {
    let v = validator();
    let report = report_value(
        r#"{
            "system": {
                "name": "user_defined",
                "params": {
                    "space": {"kind": "box", "lo": [0.0], "hi": [1.0]},
                    "exprs": ["x0 + 0.3"],
                    "finite_differences": true
                }
            },
            "depth": 3,
            "epsilon": {"absolute": 0.01}
        }"#,
        Stages::default(),
    );
    if let Err(e) = v.validate(&report) {
        panic!("box-domain report rejected: {e}");
    }
    assert_eq!(report["classes"], serde_json::json!([]));
}

#[test]
fn schema_rejects_shape_drift() {
    let v = validator();
    let good = report_value(
        r#"{"system": {"name": "cat_map"}, "depth": 3}"#,
        Stages::default(),
    );
    assert!(v.validate(&good).is_ok());

    let mut extra_key = good.clone();
    extra_key["debug_blob"] = serde_json::json!({"x": 1});
    assert!(
        v.validate(&extra_key).is_err(),
        "unknown top-level keys must be rejected"
    );

    let mut wrong_type = good.clone();
    wrong_type["grid"]["box_count"] = serde_json::json!("1024");
    assert!(
        v.validate(&wrong_type).is_err(),
        "string where an integer belongs must be rejected"
    );

    let mut missing = good.clone();
    missing.as_object_mut().unwrap().remove("timing");
    assert!(
        v.validate(&missing).is_err(),
        "missing required section must be rejected"
    );

    let mut bad_version = good;
    bad_version["schema_version"] = serde_json::json!("2");
    assert!(
        v.validate(&bad_version).is_err(),
        "unknown schema version must be rejected"
    );
}
