//! Golden deployment image for the 1-D convolution toy. Regenerate with
//! `NFAB_REGEN_GOLDEN=1 cargo test -p neurofab --test golden` after a
//! deliberate format change and review the diff.

use std::path::Path;

use neurofab::connectivity::{Sharing, SynapseCostModel};
use neurofab::mapping::{emit, map_network};
use neurofab::model::{load_network, lower_average_pools};
use neurofab::partition::{optimize, CoreConstraints, CostWeights};
use neurofab::quant::{quantize_network, QuantizationConfig};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/conv1d")
        .join(name)
}

#[test]
fn conv1d_image_matches_golden() {
    let net = load_network(&fixture("manifest.json"), &fixture("weights.bin")).unwrap();
    let net = lower_average_pools(&net);
    let qnet = quantize_network(&net, &QuantizationConfig::default()).unwrap();
    let constraints = CoreConstraints::default();
    let cost_model = SynapseCostModel::default();
    let outcome = optimize(
        &net,
        4,
        &CostWeights::default(),
        &constraints,
        &cost_model,
        Sharing::On,
    )
    .unwrap();
    let image = map_network(
        &qnet,
        &outcome.partitions,
        1,
        &cost_model,
        Sharing::On,
        &constraints,
    )
    .unwrap();
    let bytes = emit(&image).unwrap();

    let golden_path = fixture("golden_image.json");
    if std::env::var("NFAB_REGEN_GOLDEN").is_ok() {
        std::fs::write(&golden_path, &bytes).unwrap();
    }
    let golden = std::fs::read_to_string(&golden_path).expect("golden fixture present");
    assert_eq!(bytes, golden, "image drifted from the committed golden");
}
