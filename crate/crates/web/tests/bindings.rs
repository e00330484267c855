use pickle_sentry_web::{decompile_text, disassemble_json, sample_bytes, sample_catalog_json, Demo};
use serde_json::Value;

#[test]
fn disassembly_listing_and_histogram() {
    let v: Value = serde_json::from_str(&disassemble_json(b"N.").unwrap()).unwrap();
    assert_eq!(v["candidates"][0]["lines"], serde_json::json!(["0 NONE", "1 STOP"]));
    assert_eq!(v["candidates"][0]["chain"], "pkl");
    assert_eq!(v["total_opcodes"], 2);
    assert_eq!(v["histogram"], serde_json::json!([["NONE", 1], ["STOP", 1]]));
}

#[test]
fn wrapped_sample_is_unwrapped_before_listing() {
    let bytes = sample_bytes("reduce-call", "zip-zip", 3).unwrap();
    let v: Value = serde_json::from_str(&disassemble_json(&bytes).unwrap()).unwrap();
    assert_eq!(v["candidates"][0]["chain"], "zip:inner.zip > zip:model.pkl > pkl");
    assert!(decompile_text(&bytes).unwrap().starts_with("# zip:inner.zip > zip:model.pkl > pkl\n"));
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(disassemble_json(b"").is_err());
    assert!(sample_bytes("nope", "", 0).is_err());
    assert!(sample_bytes("estimator", "rar", 0).is_err());
}

#[test]
fn catalog_lists_every_recipe_and_wrap() {
    let v: Value = serde_json::from_str(&sample_catalog_json()).unwrap();
    assert_eq!(v["benign"].as_array().unwrap().len(), 5);
    assert_eq!(v["malicious"].as_array().unwrap().len(), 5);
    assert_eq!(v["wraps"].as_array().unwrap().len(), 10);
}

#[test]
fn in_page_forest_flags_a_wrapped_exploit() {
    let demo = Demo::train(7, 150, 40).unwrap();
    let summary: Value = serde_json::from_str(&demo.summary()).unwrap();
    assert!(summary["test_f1"].as_f64().unwrap() >= 0.9, "{summary}");
    let evil = sample_bytes("getattr-chain", "xz", 1).unwrap();
    let r: Value = serde_json::from_str(&demo.scan("evil.xz", &evil)).unwrap();
    assert_eq!(r["file_verdict"], "malicious");
    let ok = sample_bytes("state-dict", "", 1).unwrap();
    let r: Value = serde_json::from_str(&demo.scan("model.pt", &ok)).unwrap();
    assert_eq!(r["file_verdict"], "benign", "{r}");
}
