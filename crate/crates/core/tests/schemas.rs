//! The JSON schemas under docs/schemas must describe exactly the fields the
//! config types serialize.

use std::path::PathBuf;

use efshap::embed::TsneConfig;
use efshap::etl::EtlConfig;
use efshap::gbt::Hyperparams;
use efshap::pipeline::PipelineConfig;
use efshap::synth::CohortConfig;
use efshap::viz::PlotSpec;
use serde_json::Value;

fn schema_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn load(file: &str) -> Value {
    let text = std::fs::read_to_string(schema_dir().join(file)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn may_be_absent(prop: &Value) -> bool {
    let nullable = prop["oneOf"].as_array().is_some_and(|b| b.iter().any(|t| t["type"] == "null"));
    let alias = prop["description"]
        .as_str()
        .is_some_and(|d| d.starts_with("Alias of") || d.starts_with("Read as"));
    nullable || alias
}

/// Walks `value` alongside `schema`, following `$ref` by file name and taking
/// the first non-null `oneOf` branch that fits the value's shape.
fn check(schema: &Value, value: &Value, path: &str) {
    if let Some(r) = schema["$ref"].as_str() {
        return check(&load(r), value, path);
    }
    if let Some(branches) = schema["oneOf"].as_array() {
        if value.is_null() {
            return;
        }
        // Stage variants: pick the branch whose single required key is present.
        let pick = branches.iter().find(|b| match (b["required"].as_array(), value.as_object()) {
            (Some(req), Some(obj)) => req.iter().all(|k| obj.contains_key(k.as_str().unwrap())),
            _ => b["type"] != "null",
        });
        return check(pick.unwrap_or_else(|| panic!("{path}: no schema branch")), value, path);
    }
    if let (Some(props), Some(obj)) = (schema["properties"].as_object(), value.as_object()) {
        for (k, v) in obj {
            let p = props.get(k).unwrap_or_else(|| panic!("{path}.{k} is not in the schema"));
            check(p, v, &format!("{path}.{k}"));
        }
        for (k, p) in props {
            assert!(obj.contains_key(k) || may_be_absent(p), "{path}.{k} is in the schema but not serialized");
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            check(items, v, &format!("{path}[{i}]"));
        }
    }
}

fn check_file<T: serde::Serialize>(file: &str, value: &T) {
    let schema = load(file);
    assert_eq!(schema["$id"], format!("efshap/{file}"));
    check(&schema, &serde_json::to_value(value).unwrap(), "$");
}

#[test]
fn cohort_schema() {
    check_file("cohort_config.v1.json", &CohortConfig::default());
}

#[test]
fn etl_schema() {
    check_file("etl_config.v1.json", &EtlConfig::default());
}

#[test]
fn hyperparams_schema() {
    check_file("hyperparams.v1.json", &Hyperparams::default());
}

#[test]
fn tsne_schema() {
    check_file("tsne_config.v1.json", &TsneConfig::default());
}

#[test]
fn plot_schema() {
    check_file("plot_spec.v1.json", &PlotSpec::default());
}

#[test]
fn pipeline_and_tune_schemas() {
    check_file("pipeline_config.v1.json", &PipelineConfig::full(7));
}
