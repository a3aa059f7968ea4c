//! Sweep analyses: error/EDP against the timestep budget, and core usage
//! across model widths for the three sharing regimes (idealized full-sharing
//! bound, sharing on, sharing off).

use std::path::Path;

use clap::ValueEnum;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use neurofab::connectivity::{full_sharing_core_bound, Sharing, SynapseCostModel};
use neurofab::error::{Error, Result};
use neurofab::model::{
    BlobDescriptor, LayerKind, LayerSpec, NetworkSpec, NeuronConfig, Padding, ResetMode, Shape,
};
use neurofab::partition::{optimize, CoreConstraints};
use neurofab::sim;

use crate::CommonOpts;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Timesteps,
    Scaling,
}

pub fn cmd_sweep(
    opts: &CommonOpts,
    inputs: Option<&Path>,
    labels: Option<&Path>,
    kind: SweepKind,
    widths: &[u32],
) -> Result<()> {
    match kind {
        SweepKind::Timesteps => {
            let inputs = inputs
                .ok_or_else(|| Error::Usage("timestep sweep needs --inputs".into()))?;
            let labels = labels
                .ok_or_else(|| Error::Usage("timestep sweep needs --labels".into()))?;
            sweep_timesteps(opts, inputs, labels)
        }
        SweepKind::Scaling => sweep_scaling(opts, widths),
    }
}

fn sweep_timesteps(opts: &CommonOpts, inputs: &Path, labels: &Path) -> Result<()> {
    let compiled = crate::cmd_compile(opts)?;
    let image = &compiled.image;
    let dim = image
        .iter_cores()
        .filter(|(_, _, c)| c.layer == 0)
        .map(|(_, _, c)| {
            c.input_axons
                .iter()
                .filter(|a| matches!(a, neurofab::mapping::InputAxon::Injection { .. }))
                .count()
        })
        .sum::<usize>();
    let samples = crate::read_samples(inputs, dim)?;
    let labels = crate::read_labels(labels)?;
    if labels.len() != samples.len() {
        return Err(Error::Usage(format!(
            "{} labels for {} samples",
            labels.len(),
            samples.len()
        )));
    }
    let t_max = opts.timesteps.unwrap_or(image.timesteps).max(10);
    let points: Vec<u32> = (1..=t_max / 10).map(|k| k * 10).collect();

    let mut csv = String::from("T,error,energy_proxy,delay_proxy,edp\n");
    for &t in &points {
        let mut totals = sim::Counters::default();
        let mut correct = 0usize;
        for (sample, &label) in samples.iter().zip(labels.iter()) {
            let run = sim::run_mapped(image, &sim::Stimulus::Frame(sample.clone()), t)?;
            correct += (sim::classify(&run.output_counts) == Some(label as usize)) as usize;
            totals.spikes_total += run.counters.spikes_total;
            totals.synaptic_ops += run.counters.synaptic_ops;
            totals.core_to_core_msgs += run.counters.core_to_core_msgs;
            totals.chip_to_chip_msgs += run.counters.chip_to_chip_msgs;
            totals.timesteps_run += run.counters.timesteps_run;
        }
        let error = 1.0 - correct as f64 / samples.len().max(1) as f64;
        let proxy = sim::edp_proxy(&totals, image.n_cores(), &sim::EdpConstants::default());
        csv.push_str(&format!(
            "{t},{error:.6},{:.6},{:.6},{:.6}\n",
            proxy.energy_proxy, proxy.delay_proxy, proxy.edp
        ));
    }
    std::fs::create_dir_all(&opts.out)?;
    std::fs::write(opts.out.join("sweep.csv"), &csv)?;
    println!("{csv}");
    Ok(())
}

/// Four-layer test CNN used by the scaling sweep, parameterized by channel
/// width. Weight values are irrelevant for resource accounting, so layers
/// carry shapes only.
pub fn scaling_cnn(width: u32, input: u32, seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let neuron = NeuronConfig {
        threshold: 128,
        v_decay: 0,
        i_decay: neurofab::model::DECAY_MAX,
        reset: ResetMode::Hard,
        bias: 0.0,
    };
    let conv = |id: &str, c: u32, stride: u32| LayerSpec {
        id: id.into(),
        kind: LayerKind::Conv2D,
        output_shape: Shape::new(0, 0, c),
        kernel: Some((3, 3)),
        strides: Some((stride, stride)),
        padding: Some(Padding::Same),
        neuron: Some(neuron),
        weight_ref: None,
    };
    let layers = vec![
        LayerSpec {
            id: "in".into(),
            kind: LayerKind::Input,
            output_shape: Shape::new(input, input, 1),
            kernel: None,
            strides: None,
            padding: None,
            neuron: Some(neuron),
            weight_ref: None,
        },
        conv("c1", width, 1),
        conv("c2", width, 2),
        conv("c3", width, 2),
        LayerSpec {
            id: "head".into(),
            kind: LayerKind::Flatten,
            output_shape: Shape::new(1, 1, 0),
            kernel: None,
            strides: None,
            padding: None,
            neuron: None,
            weight_ref: None,
        },
        LayerSpec {
            id: "out".into(),
            kind: LayerKind::Dense,
            output_shape: Shape::new(1, 1, 10),
            kernel: None,
            strides: None,
            padding: None,
            neuron: Some(neuron),
            weight_ref: None,
        },
    ];
    // The seed only perturbs the name so repeated sweeps are traceable.
    let net = NetworkSpec {
        name: format!("scaling-w{width}-{:04x}", rng.gen::<u16>()),
        timesteps: 100,
        layers,
        blob: BlobDescriptor {
            path: String::new(),
            dtype: "f32le".into(),
        },
        weights: vec![None; 6],
    };
    neurofab::model::infer_shapes(&net).expect("scaling network is well-formed")
}

fn sweep_scaling(opts: &CommonOpts, widths: &[u32]) -> Result<()> {
    let constraints = CoreConstraints::default();
    let cost_model = SynapseCostModel::with_choice(opts.compression.into());
    let input = 16u32;

    let mut csv = String::from(
        "model_scale,cores_full_sharing_bound,cores_sharing_on,cores_sharing_off,mean_utilization\n",
    );
    for &w in widths {
        let net = scaling_cnn(w, input, opts.seed);
        let bound = full_sharing_core_bound(&net, &constraints)?;
        let on = optimize(&net, opts.beam, &opts.alpha, &constraints, &cost_model, Sharing::On)?;
        let off = optimize(&net, opts.beam, &opts.alpha, &constraints, &cost_model, Sharing::Off)?;
        let cores_on: u64 = on.tallies.iter().map(|t| t.aggregate().n_cores).sum();
        let cores_off: u64 = off.tallies.iter().map(|t| t.aggregate().n_cores).sum();
        let neurons: u64 = on.tallies.iter().map(|t| t.aggregate().n_neurons).sum();
        let util = neurons as f64 / (cores_on.max(1) * constraints.max_neurons_per_core) as f64;
        csv.push_str(&format!("{w},{bound},{cores_on},{cores_off},{util:.6}\n"));
    }
    std::fs::create_dir_all(&opts.out)?;
    std::fs::write(opts.out.join("sweep.csv"), &csv)?;
    println!("{csv}");
    Ok(())
}
