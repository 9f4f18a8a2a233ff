use emisynth_web::{allocate_remainder_json, natural_breaks_json, split_annual_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn flat_split() {
    let v = parse(&split_annual_json(1200.0, "").unwrap());
    let months = v["months"].as_array().unwrap();
    assert_eq!(months.len(), 12);
    assert!(months.iter().all(|m| m.as_f64() == Some(100.0)));
    assert_eq!(v["total"], 1200.0);
}

#[test]
fn weighted_split_keeps_total() {
    let w = "[0.10,0.09,0.08,0.08,0.08,0.08,0.09,0.09,0.08,0.08,0.07,0.08]";
    let v = parse(&split_annual_json(900.0, w).unwrap());
    assert!((v["total"].as_f64().unwrap() - 900.0).abs() < 1e-9);
    assert!((v["months"][0].as_f64().unwrap() - 90.0).abs() < 1e-9);
    assert!(split_annual_json(1.0, "[1,2]").is_err());
    assert!(split_annual_json(-1.0, "").is_err());
}

#[test]
fn remainder_over_units_and_parked() {
    let v = parse(&allocate_remainder_json(1000.0, 800.0, r#"[{"unit":"b","weight":1},{"unit":"a","weight":3}]"#).unwrap());
    assert_eq!(v["remainder"], 200.0);
    assert_eq!(v["units"][0][0], "a");
    assert_eq!(v["units"][0][1], 150.0);
    assert_eq!(v["parked"], 0.0);

    let v = parse(&allocate_remainder_json(1000.0, 800.0, "").unwrap());
    assert_eq!(v["parked"], 200.0);

    let v = parse(&allocate_remainder_json(500.0, 540.0, "").unwrap());
    assert_eq!(v["rule"], "assets_exceed_total");
    assert_eq!(v["effective_total"], 540.0);
    assert_eq!(v["remainder"], 0.0);
}

#[test]
fn breaks() {
    let v = parse(&natural_breaks_json("[12,1,11,2,10,3]", 2).unwrap());
    assert_eq!(v["breaks"], serde_json::json!([3.0]));
    assert_eq!(v["classes"][1], serde_json::json!([10.0, 11.0, 12.0]));
    assert!(natural_breaks_json("[1,2]", 3).is_err());
    assert!(natural_breaks_json("nope", 2).is_err());
}
