use std::path::Path;

use emisynth::gas::Gas;
use emisynth::model::{Asset, Provenance, SourceKind};
use emisynth::ingest::AssetRegistry;
use emisynth::pipeline::{self, Inputs, RunConfig};

fn toy() -> (RunConfig, Inputs) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy/run.toml");
    let cfg = RunConfig::load(&path).unwrap();
    let inputs = Inputs::load(&cfg).unwrap();
    (cfg, inputs)
}

fn annual(records: &[emisynth::model::EmissionRecord], id: &str) -> f64 {
    records
        .iter()
        .filter(|r| r.source_id == id && r.gas == Gas::Co2)
        .map(|r| r.amount())
        .sum()
}

#[test]
fn toy_fixture_validates_without_errors() {
    let (cfg, inputs) = toy();
    let report = pipeline::validate(&inputs, &cfg);
    assert!(!report.has_errors(), "{:?}", report.findings);
    assert_eq!(inputs.registry.len(), 6);
}

#[test]
fn new_asset_shifts_shares_and_conserves() {
    let (cfg, inputs) = toy();
    let before = pipeline::synthesize(&inputs, &cfg).unwrap();
    before.check().unwrap();

    let mut assets = inputs.registry.assets().to_vec();
    let mut a = Asset::new("USA-C3", "cement", "USA");
    a.output = Some(1.0);
    assets.push(a);
    let mut next = inputs.clone();
    next.registry = AssetRegistry::new(assets, &inputs.subsectors).unwrap();

    let (after, changes) = pipeline::iterate(&before, &next, &cfg).unwrap();
    after.check().unwrap();
    // national output 5 now fully registered: 3 + 1 + 1, EF 1000 / 5
    assert!((annual(&after.records, "USA-C1") - 600.0).abs() < 1e-9);
    assert!((annual(&after.records, "USA-C3") - 200.0).abs() < 1e-9);
    let rem: f64 = after
        .records
        .iter()
        .filter(|r| r.subsector == "cement" && r.country == "USA" && r.gas == Gas::Co2 && r.provenance() == Provenance::Remainder)
        .map(|r| r.amount())
        .sum();
    assert!(rem.abs() < 1e-9);
    // totals per key are unchanged, so no key moves
    assert!(changes.is_empty(), "{:?}", changes.changes);
    let usa_cement = after.report.audit.iter().find(|e| e.country == "USA" && e.subsector == "cement").unwrap();
    assert!((usa_cement.exported - 1000.0).abs() < 1e-9);
}

#[test]
fn empty_registry_gives_pure_remainder() {
    let (cfg, mut inputs) = toy();
    inputs.registry = AssetRegistry::default();
    inputs.reported.clear();
    let run = pipeline::synthesize(&inputs, &cfg).unwrap();
    run.check().unwrap();
    assert!(run.records.iter().all(|r| r.source_kind != SourceKind::Asset));
    let co2: f64 = run.records.iter().filter(|r| r.gas == Gas::Co2).map(|r| r.amount()).sum();
    assert!((co2 - 10_700.0).abs() < 1e-6);
}
