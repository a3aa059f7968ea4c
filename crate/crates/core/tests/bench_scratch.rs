mod common;

use std::time::Instant;
use neurofab::connectivity::{full_sharing_core_bound, Sharing, SynapseCostModel};
use neurofab::model::{BlobDescriptor, LayerKind, LayerSpec, NetworkSpec, NeuronConfig, Padding, ResetMode, Shape};
use neurofab::partition::{optimize, CoreConstraints, CostWeights};

fn family_cnn(width: u32, input: u32) -> NetworkSpec {
    let neuron = NeuronConfig { threshold: 128, v_decay: 0, i_decay: 4096, reset: ResetMode::Hard, bias: 0.0 };
    let conv = |id: &str, c: u32| LayerSpec {
        id: id.into(), kind: LayerKind::Conv2D, output_shape: Shape::new(0, 0, c),
        kernel: Some((3, 3)), strides: Some((2, 2)), padding: Some(Padding::Same),
        neuron: Some(neuron), weight_ref: None,
    };
    let layers = vec![
        LayerSpec { id: "in".into(), kind: LayerKind::Input, output_shape: Shape::new(input, input, 1),
            kernel: None, strides: None, padding: None, neuron: Some(neuron), weight_ref: None },
        conv("c1", width),
        conv("c2", width),
        conv("c3", width),
        LayerSpec { id: "f".into(), kind: LayerKind::Flatten, output_shape: Shape::new(1,1,0),
            kernel: None, strides: None, padding: None, neuron: None, weight_ref: None },
        LayerSpec { id: "out".into(), kind: LayerKind::Dense, output_shape: Shape::new(1,1,10),
            kernel: None, strides: None, padding: None, neuron: Some(neuron), weight_ref: None },
    ];
    let net = NetworkSpec { name: "fam".into(), timesteps: 100, layers,
        blob: BlobDescriptor { path: String::new(), dtype: "f32le".into() }, weights: vec![None; 6] };
    neurofab::model::infer_shapes(&net).unwrap()
}

#[test]
fn bench_family() {
    let constraints = CoreConstraints::default();
    let model = SynapseCostModel::default();
    for (w, input) in [(8u32, 16u32), (16, 16), (16, 32), (32, 32), (32, 64), (64, 64)] {
        let net = family_cnn(w, input);
        let bound = full_sharing_core_bound(&net, &constraints).unwrap();
        let t0 = Instant::now();
        let on = optimize(&net, 4, &CostWeights::default(), &constraints, &model, Sharing::On).unwrap();
        let t_on = t0.elapsed();
        let t0 = Instant::now();
        let off = optimize(&net, 4, &CostWeights::default(), &constraints, &model, Sharing::Off).unwrap();
        let t_off = t0.elapsed();
        let cores_on: u64 = on.tallies.iter().map(|t| t.aggregate().n_cores).sum();
        let cores_off: u64 = off.tallies.iter().map(|t| t.aggregate().n_cores).sum();
        println!("w={w} in={input}: bound={bound} on={cores_on} ({t_on:.2?}) off={cores_off} ({t_off:.2?}) ratio={:.3}", cores_on as f64 / bound as f64);
    }
}
