//! End-to-end pipeline checks: optimize on known networks, image round
//! trips, and reference/mapped execution agreement on hand-picked cases.

mod common;

use neurofab::connectivity::{Sharing, SynapseCostModel};
use neurofab::mapping;
use neurofab::model::{
    BlobDescriptor, LayerKind, LayerSpec, NetworkSpec, NeuronConfig, Padding, ResetMode, Shape,
};
use neurofab::partition::{
    check_hard, optimize, retally, total_cost, CoreConstraints, CostWeights,
};
use neurofab::quant::{quantize_network, QuantizationConfig};
use neurofab::sim::{run_mapped, run_reference, Stimulus};

fn neuron(threshold: i64, reset: ResetMode) -> NeuronConfig {
    NeuronConfig {
        threshold,
        v_decay: 0,
        i_decay: 4096,
        reset,
        bias: 0.0,
    }
}

fn mlp(fan_in: u32, units: u32) -> NetworkSpec {
    NetworkSpec {
        name: "mlp".into(),
        timesteps: 50,
        layers: vec![
            LayerSpec {
                id: "in".into(),
                kind: LayerKind::Input,
                output_shape: Shape::new(1, 1, fan_in),
                kernel: None,
                strides: None,
                padding: None,
                neuron: Some(neuron(100, ResetMode::Hard)),
                weight_ref: None,
            },
            LayerSpec {
                id: "d".into(),
                kind: LayerKind::Dense,
                output_shape: Shape::new(1, 1, units),
                kernel: None,
                strides: None,
                padding: None,
                neuron: Some(neuron(100, ResetMode::Hard)),
                weight_ref: None,
            },
        ],
        blob: BlobDescriptor {
            path: String::new(),
            dtype: "f32le".into(),
        },
        weights: vec![
            None,
            Some(
                (0..fan_in * units)
                    .map(|i| ((i % 13) as f32 - 6.0) / 6.0)
                    .collect(),
            ),
        ],
    }
}

#[test]
fn wide_mlp_splits_output_layer() {
    let net = mlp(20, 2048);
    let constraints = CoreConstraints::default();
    let model = SynapseCostModel::default();
    let outcome = optimize(
        &net,
        4,
        &CostWeights::default(),
        &constraints,
        &model,
        Sharing::On,
    )
    .unwrap();
    assert!(outcome.partitions[1].n_cores() >= 2);
    // Cached cumulative cost must equal an independent re-tally.
    let tallies = retally(&net, &outcome.partitions, Sharing::On, &model, None).unwrap();
    assert_eq!(tallies, outcome.tallies);
    let recomputed = total_cost(&tallies, &CostWeights::default(), &constraints);
    assert_eq!(recomputed, outcome.total_cost);
    for t in &tallies {
        assert!(check_hard(t, &constraints).is_none());
    }
}

#[test]
fn wider_beam_never_costs_more_on_mlp() {
    let net = mlp(20, 2048);
    let constraints = CoreConstraints::default();
    let model = SynapseCostModel::default();
    let mut last = f64::INFINITY;
    for m in [1usize, 2, 4, 8] {
        let outcome = optimize(
            &net,
            m,
            &CostWeights::default(),
            &constraints,
            &model,
            Sharing::On,
        )
        .unwrap();
        assert!(
            outcome.total_cost <= last + 1e-9,
            "beam {m} cost {} above {}",
            outcome.total_cost,
            last
        );
        last = outcome.total_cost;
    }
}

#[test]
fn input_only_network_degenerates_to_proposal() {
    let net = NetworkSpec {
        name: "input-only".into(),
        timesteps: 10,
        layers: vec![LayerSpec {
            id: "in".into(),
            kind: LayerKind::Input,
            output_shape: Shape::new(4, 4, 10),
            kernel: None,
            strides: None,
            padding: None,
            neuron: Some(neuron(100, ResetMode::Hard)),
            weight_ref: None,
        }],
        blob: BlobDescriptor {
            path: String::new(),
            dtype: "f32le".into(),
        },
        weights: vec![None],
    };
    let outcome = optimize(
        &net,
        4,
        &CostWeights::default(),
        &CoreConstraints::default(),
        &SynapseCostModel::default(),
        Sharing::On,
    )
    .unwrap();
    assert_eq!(outcome.partitions.len(), 1);
    assert_eq!(outcome.partitions[0].grid(), (1, 1, 1));
}

#[test]
fn image_round_trip_is_byte_identical() {
    let mut rng = common::rng(11);
    let net = common::random_network(&mut rng, 300);
    let qnet = common::quantized(&net);
    let lowered = &qnet.net;
    let model = SynapseCostModel::default();
    let outcome = optimize(
        lowered,
        4,
        &CostWeights::default(),
        &CoreConstraints::default(),
        &model,
        Sharing::On,
    )
    .unwrap();
    let image = common::compile(&qnet, &outcome.partitions, Sharing::On, &model);
    let bytes = mapping::emit(&image).unwrap();
    let reloaded = mapping::load_image_str(&bytes).unwrap();
    assert_eq!(mapping::emit(&reloaded).unwrap(), bytes);
    assert_eq!(reloaded, image);
}

#[test]
fn dangling_axon_target_refuses_to_emit() {
    let mut rng = common::rng(12);
    let net = common::random_network(&mut rng, 200);
    let qnet = common::quantized(&net);
    let model = SynapseCostModel::default();
    let outcome = optimize(
        &qnet.net,
        2,
        &CostWeights::default(),
        &CoreConstraints::default(),
        &model,
        Sharing::On,
    )
    .unwrap();
    let mut image = common::compile(&qnet, &outcome.partitions, Sharing::On, &model);
    // Point some connection axon at a non-existent slot.
    let mut broke = false;
    'outer: for chip in &mut image.chips {
        for core in &mut chip.cores {
            for axon in &mut core.output_axons {
                if let mapping::OutputTarget::Connection { dst_axon, .. } = &mut axon.target {
                    *dst_axon = 9999;
                    broke = true;
                    break 'outer;
                }
            }
        }
    }
    assert!(broke);
    assert!(matches!(
        mapping::emit(&image).unwrap_err(),
        neurofab::Error::Integrity(_)
    ));
}

#[test]
fn mapped_matches_reference_on_soft_reset_net_with_decay() {
    let net = NetworkSpec {
        name: "soft-decay".into(),
        timesteps: 60,
        layers: vec![
            LayerSpec {
                id: "in".into(),
                kind: LayerKind::Input,
                output_shape: Shape::new(4, 4, 1),
                kernel: None,
                strides: None,
                padding: None,
                neuron: Some(neuron(80, ResetMode::Hard)),
                weight_ref: None,
            },
            LayerSpec {
                id: "c".into(),
                kind: LayerKind::Conv2D,
                output_shape: Shape::new(4, 4, 2),
                kernel: Some((3, 3)),
                strides: Some((1, 1)),
                padding: Some(Padding::Same),
                neuron: Some(NeuronConfig {
                    threshold: 150,
                    v_decay: 512,
                    i_decay: 2048,
                    reset: ResetMode::Soft,
                    bias: 0.1,
                }),
                weight_ref: None,
            },
        ],
        blob: BlobDescriptor {
            path: String::new(),
            dtype: "f32le".into(),
        },
        weights: vec![
            None,
            Some((0..18).map(|i| (i as f32 - 6.0) / 10.0).collect()),
        ],
    };
    let qnet = quantize_network(&net, &QuantizationConfig::default()).unwrap();
    let model = SynapseCostModel::default();
    let outcome = optimize(
        &net,
        4,
        &CostWeights::default(),
        &CoreConstraints::default(),
        &model,
        Sharing::On,
    )
    .unwrap();
    let image = common::compile(&qnet, &outcome.partitions, Sharing::On, &model);

    let frame: Vec<f32> = (0..16).map(|i| 0.2 + 0.05 * i as f32).collect();
    let stim = Stimulus::Frame(frame);
    let reference = run_reference(&qnet, &stim, 60).unwrap();
    let mapped = run_mapped(&image, &stim, 60).unwrap();
    assert!(reference.trace.total_spikes() > 0, "net should be active");
    assert_eq!(mapped.trace, reference.trace);
    assert_eq!(mapped.output_counts, reference.output_counts);
}

#[test]
fn raster_stimulus_matches_between_executions() {
    let mut rng = common::rng(21);
    let net = common::random_network(&mut rng, 250);
    let qnet = common::quantized(&net);
    let model = SynapseCostModel::default();
    let outcome = optimize(
        &qnet.net,
        2,
        &CostWeights::default(),
        &CoreConstraints::default(),
        &model,
        Sharing::On,
    )
    .unwrap();
    let image = common::compile(&qnet, &outcome.partitions, Sharing::On, &model);
    let n_in = qnet.net.layers[0].output_shape.volume() as u32;
    let raster: Vec<Vec<u32>> = (0..40)
        .map(|t| (0..n_in).filter(|n| (n + t) % 3 == 0).collect())
        .collect();
    let stim = Stimulus::Raster(raster);
    let reference = run_reference(&qnet, &stim, 50).unwrap();
    let mapped = run_mapped(&image, &stim, 50).unwrap();
    assert_eq!(mapped.trace, reference.trace);
}
