use std::path::Path;

use perfhom::config::{parse_config, RunConfig};

fn shipped(name: &str) -> RunConfig {
    parse_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for name in ["default.toml", "acceptance.toml", "well_mixed.toml"] {
        let cfg = shipped(name);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again.to_toml(), cfg.to_toml(), "{name}");
        cfg.study().validate().unwrap();
    }
}

#[test]
fn acceptance_study_covers_three_scales() {
    let cfg = shipped("acceptance.toml");
    assert_eq!(cfg.epsilons(), vec![0.125, 0.0625, 0.03125]);
    let study = cfg.study();
    assert_eq!(study.cells_per_period, 16);
    assert!(study.tests.len() >= 3);
}

#[test]
fn default_config_matches_documented_defaults() {
    let shipped = shipped("default.toml");
    let minimal = RunConfig::from_toml("").unwrap();
    assert_eq!(shipped.to_toml(), minimal.to_toml());
}
