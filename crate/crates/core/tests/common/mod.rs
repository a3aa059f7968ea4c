//! Shared helpers for integration tests: seeded network generation, an
//! independent brute-force connectivity oracle, and pipeline shortcuts.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use neurofab::connectivity::{Sharing, SynapseCostModel};
use neurofab::mapping::{self, DeploymentImage, InputAxon, OutputTarget, NO_NEURON};
use neurofab::model::{
    BlobDescriptor, LayerKind, LayerSpec, NetworkSpec, NeuronConfig, Padding, ResetMode, Shape,
};
use neurofab::partition::{check_hard, retally, CoreConstraints, Partition};
use neurofab::quant::{quantize_network, QuantizationConfig, QuantizedNetwork};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_neuron(rng: &mut ChaCha8Rng) -> NeuronConfig {
    let decays = [0i64, 128, 1024, 4096];
    NeuronConfig {
        threshold: rng.gen_range(50..=300),
        v_decay: decays[rng.gen_range(0..decays.len())],
        i_decay: decays[rng.gen_range(0..decays.len())],
        reset: if rng.gen_bool(0.5) {
            ResetMode::Soft
        } else {
            ResetMode::Hard
        },
        bias: rng.gen_range(-0.3..0.3),
    }
}

/// Random feed-forward chain: input, then up to three windowed layers, with
/// an optional flattened dense head. Total neurons stay under `max_neurons`.
pub fn random_network(rng: &mut ChaCha8Rng, max_neurons: u64) -> NetworkSpec {
    loop {
        if let Some(net) = try_random_network(rng, max_neurons) {
            return net;
        }
    }
}

fn try_random_network(rng: &mut ChaCha8Rng, max_neurons: u64) -> Option<NetworkSpec> {
    let input_shape = Shape::new(
        rng.gen_range(3..=8),
        rng.gen_range(3..=8),
        rng.gen_range(1..=3),
    );
    let mut layers = vec![LayerSpec {
        id: "in".into(),
        kind: LayerKind::Input,
        output_shape: input_shape,
        kernel: None,
        strides: None,
        padding: None,
        neuron: Some(NeuronConfig {
            threshold: rng.gen_range(50..=200),
            v_decay: 0,
            i_decay: 4096,
            reset: ResetMode::Hard,
            bias: 0.0,
        }),
        weight_ref: None,
    }];
    let mut weights: Vec<Option<Vec<f32>>> = vec![None];
    let mut current = input_shape;
    let mut total = input_shape.volume();

    let n_hidden = rng.gen_range(1..=3usize);
    for i in 0..n_hidden {
        let kind = match rng.gen_range(0..4) {
            0 => LayerKind::Conv2D,
            1 => LayerKind::DepthwiseConv2D,
            2 => LayerKind::AveragePool2D,
            _ => LayerKind::Conv2D,
        };
        let k = rng.gen_range(1..=3u32).min(current.h).min(current.w);
        let s = rng.gen_range(1..=2u32);
        let padding = if rng.gen_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let c_out = match kind {
            LayerKind::Conv2D => rng.gen_range(1..=4u32),
            _ => current.c,
        };
        let oh = neurofab::model::conv_out_dim(current.h, k, s, padding).ok()?;
        let ow = neurofab::model::conv_out_dim(current.w, k, s, padding).ok()?;
        let shape = Shape::new(oh, ow, c_out);
        if shape.volume() == 0 || total + shape.volume() > max_neurons {
            return None;
        }
        let count = match kind {
            LayerKind::Conv2D => (k * k * current.c * c_out) as usize,
            LayerKind::DepthwiseConv2D => (k * k * current.c) as usize,
            _ => 0,
        };
        layers.push(LayerSpec {
            id: format!("h{i}"),
            kind,
            output_shape: shape,
            kernel: Some((k, k)),
            strides: Some((s, s)),
            padding: Some(padding),
            neuron: Some(random_neuron(rng)),
            weight_ref: None,
        });
        weights.push(if count > 0 {
            Some((0..count).map(|_| rng.gen_range(-1.0..1.0)).collect())
        } else {
            None
        });
        current = shape;
        total += shape.volume();
    }

    if rng.gen_bool(0.6) && total + 10 <= max_neurons {
        let units = rng.gen_range(2..=10u32);
        let fan_in = current.volume() as u32;
        layers.push(LayerSpec {
            id: "flat".into(),
            kind: LayerKind::Flatten,
            output_shape: Shape::new(1, 1, fan_in),
            kernel: None,
            strides: None,
            padding: None,
            neuron: None,
            weight_ref: None,
        });
        weights.push(None);
        layers.push(LayerSpec {
            id: "head".into(),
            kind: LayerKind::Dense,
            output_shape: Shape::new(1, 1, units),
            kernel: None,
            strides: None,
            padding: None,
            neuron: Some(random_neuron(rng)),
            weight_ref: None,
        });
        weights.push(Some(
            (0..fan_in * units)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        ));
    }

    Some(NetworkSpec {
        name: "random".into(),
        timesteps: 100,
        layers,
        blob: BlobDescriptor {
            path: String::new(),
            dtype: "f32le".into(),
        },
        weights,
    })
}

/// Quantize a lowered network with defaults (no calibration).
pub fn quantized(net: &NetworkSpec) -> QuantizedNetwork {
    let lowered = neurofab::model::lower_average_pools(net);
    quantize_network(&lowered, &QuantizationConfig::default()).expect("random weights quantize")
}

/// Random hard-constraint-feasible partition chain, validated by full
/// re-tally; falls back to the optimizer's choice when sampling fails.
pub fn random_partitions(
    rng: &mut ChaCha8Rng,
    net: &NetworkSpec,
    sharing: Sharing,
    cost_model: &SynapseCostModel,
    constraints: &CoreConstraints,
) -> Vec<Partition> {
    let phys = net.physical_layers();
    'attempt: for _ in 0..40 {
        let mut parts = Vec::with_capacity(phys.len());
        for (pos, &idx) in phys.iter().enumerate() {
            let layer = &net.layers[idx];
            let shape = layer.output_shape;
            let soft = layer.compartment_factor() == 2;
            let grid = (
                rng.gen_range(1..=shape.h.min(3)),
                rng.gen_range(1..=shape.w.min(3)),
                rng.gen_range(1..=shape.c.min(3)),
            );
            match Partition::new(pos, shape, soft, grid) {
                Ok(p) if p.max_box_compartments() <= constraints.max_neurons_per_core => {
                    parts.push(p)
                }
                _ => continue 'attempt,
            }
        }
        if let Ok(tallies) = retally(net, &parts, sharing, cost_model, None) {
            if tallies.iter().all(|t| check_hard(t, constraints).is_none()) {
                return parts;
            }
        }
    }
    neurofab::partition::optimize(
        net,
        2,
        &neurofab::partition::CostWeights::default(),
        constraints,
        cost_model,
        sharing,
    )
    .expect("fallback optimize")
    .partitions
}

pub fn compile(
    qnet: &QuantizedNetwork,
    partitions: &[Partition],
    sharing: Sharing,
    cost_model: &SynapseCostModel,
) -> DeploymentImage {
    mapping::map_network(
        qnet,
        partitions,
        64,
        cost_model,
        sharing,
        &CoreConstraints::default(),
    )
    .expect("mapping succeeds")
}

// ---------------------------------------------------------------------------
// Brute-force connectivity oracle (independent of the library's geometry)
// ---------------------------------------------------------------------------

/// Every synapse of a layer pair as `(pre, post, weight_id)`, enumerated by
/// naive kernel application from the destination side.
pub fn oracle_pair_synapses(pre: &LayerSpec, post: &LayerSpec) -> Vec<(u32, u32, u32)> {
    let a = pre.output_shape;
    let b = post.output_shape;
    let mut out = Vec::new();
    match post.kind {
        LayerKind::Dense => {
            let n_in = a.volume() as u32;
            let n_out = b.c;
            for i in 0..n_in {
                for o in 0..n_out {
                    out.push((i, o, i * n_out + o));
                }
            }
        }
        LayerKind::Conv2D | LayerKind::DepthwiseConv2D | LayerKind::AveragePool2D => {
            let (kh, kw) = post.kernel.expect("windowed");
            let (sy, sx) = post.strides.unwrap_or((1, 1));
            let (pad_y, pad_x) = match post.padding.unwrap_or(Padding::Valid) {
                Padding::Valid => (0i64, 0i64),
                Padding::Same => {
                    let (py, _) = neurofab::model::same_padding(a.h, kh, sy);
                    let (px, _) = neurofab::model::same_padding(a.w, kw, sx);
                    (py as i64, px as i64)
                }
            };
            let depthwise = post.kind != LayerKind::Conv2D;
            for oy in 0..b.h {
                for ox in 0..b.w {
                    for oc in 0..b.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as i64 * sy as i64 - pad_y + ky as i64;
                                let ix = ox as i64 * sx as i64 - pad_x + kx as i64;
                                if iy < 0 || iy >= a.h as i64 || ix < 0 || ix >= a.w as i64 {
                                    continue;
                                }
                                let post_idx = b.index(oy, ox, oc);
                                if depthwise {
                                    let pre_idx = a.index(iy as u32, ix as u32, oc);
                                    let wid = (ky * kw + kx) * a.c + oc;
                                    out.push((pre_idx, post_idx, wid));
                                } else {
                                    for ic in 0..a.c {
                                        let pre_idx = a.index(iy as u32, ix as u32, ic);
                                        let wid = ((ky * kw + kx) * a.c + ic) * b.c + oc;
                                        out.push((pre_idx, post_idx, wid));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerKind::Input | LayerKind::Flatten => {}
    }
    out
}

/// Whole-network synapse multiset with resolved integer weights, keyed by
/// global neuron ids.
pub fn oracle_network_synapses(qnet: &QuantizedNetwork) -> Vec<(u64, u64, i64)> {
    let phys = qnet.net.physical_layers();
    let offsets = qnet.net.layer_offsets();
    let mut out = Vec::new();
    for pos in 1..phys.len() {
        let pre = &qnet.net.layers[phys[pos - 1]];
        let post = &qnet.net.layers[phys[pos]];
        let kernel = qnet.kernels[phys[pos]].as_ref().expect("weighted layer");
        for (p, q, wid) in oracle_pair_synapses(pre, post) {
            out.push((
                offsets[pos - 1] + p as u64,
                offsets[pos] + q as u64,
                kernel[wid as usize] as i64,
            ));
        }
    }
    out.sort_unstable();
    out
}

/// Expand a deployment image back into its synapse multiset, keyed by global
/// neuron ids with resolved weights. Recurrent soft-reset links are excluded:
/// they implement the reset rule, not network connectivity.
pub fn expand_image_synapses(image: &DeploymentImage) -> Vec<(u64, u64, i64)> {
    let mut neuron_of: std::collections::HashMap<(u32, u32), Vec<u32>> =
        std::collections::HashMap::new();
    for (chip, slot, core) in image.iter_cores() {
        let records = core.compartments.decode().expect("valid image");
        neuron_of.insert((chip, slot), records.iter().map(|r| r.neuron).collect());
    }
    let mut out = Vec::new();
    for (chip, slot, core) in image.iter_cores() {
        let src_neurons = &neuron_of[&(chip, slot)];
        for axon in &core.output_axons {
            let OutputTarget::Connection {
                dst_chip,
                dst_core,
                dst_axon,
            } = axon.target
            else {
                continue;
            };
            let dst = image.core(dst_chip, dst_core).expect("valid image");
            let InputAxon::Connection { group, base, .. } = dst.input_axons[dst_axon as usize]
            else {
                panic!("connection axon targets a non-connection slot");
            };
            let template =
                mapping::decode_group(&dst.groups[group as usize]).expect("valid image");
            let dst_neurons = &neuron_of[&(dst_chip, dst_core)];
            for (slot_idx, entries) in template.iter().enumerate() {
                let src_local = axon.member_start + slot_idx as u32;
                let pre = src_neurons[src_local as usize];
                assert_ne!(pre, NO_NEURON);
                for &(rel, w) in entries {
                    let post = dst_neurons[(base + rel) as usize];
                    assert_ne!(post, NO_NEURON);
                    out.push((pre as u64, post as u64, w));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

pub fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}
