//! Discrete-time execution of integer networks, both as an abstract
//! reference over the network description and as a mapped run over a
//! deployment image, with traffic counters for the energy/delay proxy.
//!
//! Both executions use the same update rule and a one-step axonal delay
//! between layers, so their spike trains are comparable bit for bit. Frame
//! stimuli are injected as per-step drive on the input-layer compartments;
//! raster stimuli force input spikes directly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mapping::{DeploymentImage, InputAxon, OutputTarget, NO_NEURON};
use crate::model::{LayerKind, Padding, ResetMode, DECAY_MAX};
use crate::quant::QuantizedNetwork;

/// Integer dynamics parameters of one compartment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompartmentConfig {
    pub threshold: i64,
    pub v_decay: i64,
    pub i_decay: i64,
    pub reset: ResetMode,
    pub bias: i64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NeuronState {
    pub u: i64,
    pub i: i64,
}

/// One integrate-and-fire step. Current decays and accumulates the arriving
/// weighted input, voltage decays and accumulates current plus bias, and a
/// spike fires when the voltage reaches the threshold. Hard reset zeroes the
/// voltage; soft reset subtracts exactly the threshold, retaining the excess.
/// Integer division truncates toward zero.
pub fn step_dynamics(state: &mut NeuronState, weighted_input: i64, cfg: &CompartmentConfig) -> bool {
    state.i = state.i * (DECAY_MAX - cfg.i_decay) / DECAY_MAX + weighted_input;
    state.u = state.u * (DECAY_MAX - cfg.v_decay) / DECAY_MAX + state.i + cfg.bias;
    if state.u >= cfg.threshold {
        match cfg.reset {
            ResetMode::Hard => state.u = 0,
            ResetMode::Soft => state.u -= cfg.threshold,
        }
        true
    } else {
        false
    }
}

/// Spike times per neuron (global id over physical layers) plus per-layer
/// per-step spike counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrace {
    pub times: Vec<Vec<u32>>,
    pub layer_step_counts: Vec<Vec<u32>>,
}

impl SpikeTrace {
    fn new(n_neurons: usize, n_layers: usize, t: u32) -> Self {
        SpikeTrace {
            times: vec![Vec::new(); n_neurons],
            layer_step_counts: vec![vec![0; t as usize]; n_layers],
        }
    }

    fn record(&mut self, neuron: usize, layer: usize, t: u32) {
        self.times[neuron].push(t);
        self.layer_step_counts[layer][(t - 1) as usize] += 1;
    }

    pub fn total_spikes(&self) -> u64 {
        self.times.iter().map(|v| v.len() as u64).sum()
    }

    /// `neuron_id,t` rows, one per spike.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("neuron_id,t\n");
        for (n, times) in self.times.iter().enumerate() {
            for t in times {
                out.push_str(&format!("{n},{t}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub spikes_total: u64,
    pub synaptic_ops: u64,
    pub core_to_core_msgs: u64,
    pub chip_to_chip_msgs: u64,
    pub timesteps_run: u64,
}

/// Input presented to a network: an analog frame (one value per input
/// neuron, injected as per-step drive) or a spike raster (forced input
/// spikes, outer index = timestep).
#[derive(Debug, Clone)]
pub enum Stimulus {
    Frame(Vec<f32>),
    Raster(Vec<Vec<u32>>),
}

/// Frame values near 1.0 drive an input neuron at threshold, firing once per
/// step; the drive is rounded half away from zero.
pub fn injection_drive(frame: &[f32], threshold: i64) -> Vec<i64> {
    frame
        .iter()
        .map(|&v| {
            let x = v as f64 * threshold as f64;
            if x >= 0.0 {
                (x + 0.5).floor() as i64
            } else {
                (x - 0.5).ceil() as i64
            }
        })
        .collect()
}

/// Predicted class from output spike counts: argmax with ties resolved to
/// the lowest index. No spikes at all means no prediction.
pub fn classify(output_counts: &[u64]) -> Option<usize> {
    if output_counts.iter().all(|&c| c == 0) {
        return None;
    }
    output_counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

// ---------------------------------------------------------------------------
// Reference execution: dense math over the network description
// ---------------------------------------------------------------------------

pub struct ReferenceRun {
    pub trace: SpikeTrace,
    pub output_counts: Vec<u64>,
}

/// Weighted input gathered per destination neuron by direct kernel
/// application over the previous step's source spikes.
fn gather_layer(
    qnet: &QuantizedNetwork,
    layer_idx: usize,
    pre_idx: usize,
    pre_spikes: &[bool],
    out: &mut [i64],
) {
    let layer = &qnet.net.layers[layer_idx];
    let pre_shape = qnet.net.layers[pre_idx].output_shape;
    let out_shape = layer.output_shape;
    let kernel = qnet.kernels[layer_idx]
        .as_ref()
        .expect("weighted layer has a kernel");
    out.fill(0);
    match layer.kind {
        LayerKind::Dense => {
            let n_out = out_shape.c as usize;
            for (i, &spiked) in pre_spikes.iter().enumerate() {
                if !spiked {
                    continue;
                }
                let row = &kernel[i * n_out..(i + 1) * n_out];
                for (o, acc) in out.iter_mut().enumerate() {
                    *acc += row[o] as i64;
                }
            }
        }
        LayerKind::Conv2D | LayerKind::DepthwiseConv2D | LayerKind::AveragePool2D => {
            let (kh, kw) = layer.kernel_dims();
            let (sy, sx) = layer.stride_dims();
            let (pad_y, pad_x) = match layer.padding_mode() {
                Padding::Valid => (0i64, 0i64),
                Padding::Same => {
                    let (a, _) = crate::model::same_padding(pre_shape.h, kh, sy);
                    let (b, _) = crate::model::same_padding(pre_shape.w, kw, sx);
                    (a as i64, b as i64)
                }
            };
            let depthwise = layer.kind != LayerKind::Conv2D;
            let c_in = pre_shape.c;
            let c_out = out_shape.c;
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    for oc in 0..c_out {
                        let mut acc = 0i64;
                        for ky in 0..kh {
                            let iy = oy as i64 * sy as i64 - pad_y + ky as i64;
                            if iy < 0 || iy >= pre_shape.h as i64 {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = ox as i64 * sx as i64 - pad_x + kx as i64;
                                if ix < 0 || ix >= pre_shape.w as i64 {
                                    continue;
                                }
                                if depthwise {
                                    let p = pre_shape.index(iy as u32, ix as u32, oc);
                                    if pre_spikes[p as usize] {
                                        acc += kernel
                                            [((ky * kw + kx) * c_in + oc) as usize]
                                            as i64;
                                    }
                                } else {
                                    for ic in 0..c_in {
                                        let p = pre_shape.index(iy as u32, ix as u32, ic);
                                        if pre_spikes[p as usize] {
                                            let wid =
                                                ((ky * kw + kx) * c_in + ic) * c_out + oc;
                                            acc += kernel[wid as usize] as i64;
                                        }
                                    }
                                }
                            }
                        }
                        out[out_shape.index(oy, ox, oc) as usize] = acc;
                    }
                }
            }
        }
        LayerKind::Input | LayerKind::Flatten => unreachable!("not a weighted layer"),
    }
}

/// Layer-synchronous reference execution for `t_max` steps.
pub fn run_reference(qnet: &QuantizedNetwork, stimulus: &Stimulus, t_max: u32) -> Result<ReferenceRun> {
    let phys = qnet.net.physical_layers();
    let offsets = qnet.net.layer_offsets();
    let n_layers = phys.len();
    let sizes: Vec<usize> = phys
        .iter()
        .map(|&i| qnet.net.layers[i].output_shape.volume() as usize)
        .collect();

    let configs: Vec<CompartmentConfig> = phys
        .iter()
        .map(|&i| {
            let cfg = qnet.net.layers[i].neuron_config();
            CompartmentConfig {
                threshold: cfg.threshold,
                v_decay: cfg.v_decay,
                i_decay: cfg.i_decay,
                reset: cfg.reset,
                bias: qnet.biases[i],
            }
        })
        .collect();

    let drive = match stimulus {
        Stimulus::Frame(frame) => {
            if frame.len() != sizes[0] {
                return Err(Error::Usage(format!(
                    "frame has {} values, input layer needs {}",
                    frame.len(),
                    sizes[0]
                )));
            }
            Some(injection_drive(frame, configs[0].threshold))
        }
        Stimulus::Raster(_) => None,
    };

    let mut states: Vec<Vec<NeuronState>> = sizes.iter().map(|&n| vec![NeuronState::default(); n]).collect();
    let mut prev_spikes: Vec<Vec<bool>> = sizes.iter().map(|&n| vec![false; n]).collect();
    let mut trace = SpikeTrace::new(sizes.iter().sum(), n_layers, t_max);
    let mut win = Vec::new();

    for t in 1..=t_max {
        let mut new_spikes: Vec<Vec<bool>> = sizes.iter().map(|&n| vec![false; n]).collect();
        for pos in 0..n_layers {
            if pos == 0 {
                match stimulus {
                    Stimulus::Frame(_) => {
                        let drive = drive.as_ref().expect("frame drive prepared");
                        for (n, state) in states[0].iter_mut().enumerate() {
                            if step_dynamics(state, drive[n], &configs[0]) {
                                new_spikes[0][n] = true;
                                trace.record(n, 0, t);
                            }
                        }
                    }
                    Stimulus::Raster(raster) => {
                        if let Some(step) = raster.get((t - 1) as usize) {
                            for &n in step {
                                if n as usize >= sizes[0] {
                                    return Err(Error::Usage(format!(
                                        "raster neuron {n} outside input layer"
                                    )));
                                }
                                new_spikes[0][n as usize] = true;
                                trace.record(n as usize, 0, t);
                            }
                        }
                    }
                }
                continue;
            }
            win.resize(sizes[pos], 0);
            gather_layer(qnet, phys[pos], phys[pos - 1], &prev_spikes[pos - 1], &mut win);
            for (n, state) in states[pos].iter_mut().enumerate() {
                if step_dynamics(state, win[n], &configs[pos]) {
                    new_spikes[pos][n] = true;
                    trace.record(offsets[pos] as usize + n, pos, t);
                }
            }
        }
        prev_spikes = new_spikes;
    }

    let out_offset = offsets[n_layers - 1] as usize;
    let output_counts = trace.times[out_offset..out_offset + sizes[n_layers - 1]]
        .iter()
        .map(|v| v.len() as u64)
        .collect();
    Ok(ReferenceRun {
        trace,
        output_counts,
    })
}

// ---------------------------------------------------------------------------
// Mapped execution over a deployment image
// ---------------------------------------------------------------------------

pub struct MappedRun {
    pub trace: SpikeTrace,
    pub counters: Counters,
    pub output_counts: Vec<u64>,
}

struct RtAxon {
    member_start: u32,
    dst_flat: usize,
    dst_chip: u32,
    group: u32,
    base: u32,
}

struct RtCore {
    chip: u32,
    layer: usize,
    configs: Vec<CompartmentConfig>,
    /// Logical neuron id per compartment (`NO_NEURON` for reset partners).
    neurons: Vec<u32>,
    /// Decoded group templates: `[group][slot] -> (dst_local, weight)`.
    templates: Vec<Vec<Vec<(u32, i64)>>>,
    axons: Vec<RtAxon>,
    /// Outgoing axon list per compartment.
    fanout: Vec<Vec<u32>>,
}

struct Runtime {
    cores: Vec<RtCore>,
    n_layers: usize,
    n_neurons: usize,
    /// `(flat core, compartment)` of each input-layer neuron, by input index.
    input_slots: Vec<(usize, u32)>,
    /// Output layer size and the logical offset of its first neuron.
    output_span: (usize, usize),
}

fn build_runtime(image: &DeploymentImage) -> Result<Runtime> {
    let mut flat_of: std::collections::HashMap<(u32, u32), usize> = std::collections::HashMap::new();
    for (idx, (chip, slot, _)) in image.iter_cores().enumerate() {
        flat_of.insert((chip, slot), idx);
    }

    let mut cores = Vec::new();
    let mut n_layers = 0usize;
    let mut max_neuron = 0u32;
    for (chip, _slot, core) in image.iter_cores() {
        let records = core.compartments.decode()?;
        n_layers = n_layers.max(core.layer as usize + 1);
        let configs = records
            .iter()
            .map(|r| CompartmentConfig {
                threshold: r.threshold,
                v_decay: r.v_decay as i64,
                i_decay: r.i_decay as i64,
                reset: r.reset,
                bias: r.bias,
            })
            .collect::<Vec<_>>();
        let neurons: Vec<u32> = records.iter().map(|r| r.neuron).collect();
        for &n in &neurons {
            if n != NO_NEURON {
                max_neuron = max_neuron.max(n + 1);
            }
        }
        let templates = core
            .groups
            .iter()
            .map(crate::mapping::decode_group)
            .collect::<Result<Vec<_>>>()?;
        let mut axons = Vec::new();
        let mut fanout: Vec<Vec<u32>> = vec![Vec::new(); records.len()];
        for out in &core.output_axons {
            if let OutputTarget::Connection {
                dst_chip,
                dst_core,
                dst_axon,
            } = out.target
            {
                let dst_flat = flat_of[&(dst_chip, dst_core)];
                let dst = image.core(dst_chip, dst_core).expect("integrity-checked");
                let (group, base) = match dst.input_axons[dst_axon as usize] {
                    InputAxon::Connection { group, base, .. } => (group, base),
                    _ => unreachable!("integrity-checked connection target"),
                };
                let idx = axons.len() as u32;
                axons.push(RtAxon {
                    member_start: out.member_start,
                    dst_flat,
                    dst_chip,
                    group,
                    base,
                });
                for m in out.member_start..out.member_start + out.member_len {
                    fanout[m as usize].push(idx);
                }
            }
        }
        cores.push(RtCore {
            chip,
            layer: core.layer as usize,
            configs,
            neurons,
            templates,
            axons,
            fanout,
        });
    }

    // Locate input and output logical spans.
    let mut input_slots: Vec<(usize, u32)> = Vec::new();
    let mut output_span = (0usize, 0usize);
    let mut output_min = u32::MAX;
    let mut output_count = 0usize;
    for (flat, core) in cores.iter().enumerate() {
        for (c, &n) in core.neurons.iter().enumerate() {
            if n == NO_NEURON {
                continue;
            }
            if core.layer == 0 {
                input_slots.push((flat, c as u32));
            }
            if core.layer == n_layers - 1 {
                output_min = output_min.min(n);
                output_count += 1;
            }
        }
    }
    if output_count > 0 {
        output_span = (output_min as usize, output_count);
    }
    // Deterministic injection order: by logical input index.
    input_slots.sort_by_key(|&(flat, c)| cores[flat].neurons[c as usize]);

    Ok(Runtime {
        cores,
        n_layers,
        n_neurons: max_neuron as usize,
        input_slots,
        output_span,
    })
}

/// Event-driven execution of a deployment image: each step delivers the
/// previous step's spikes through the axon tables and synapse groups, then
/// updates every compartment. Reset partners of soft neurons are passive
/// bookkeeping: the threshold subtraction they implement is applied at the
/// soma within the step, and their recurrent links carry no counted traffic.
pub fn run_mapped(image: &DeploymentImage, stimulus: &Stimulus, t_max: u32) -> Result<MappedRun> {
    let rt = build_runtime(image)?;
    let mut counters = Counters {
        timesteps_run: t_max as u64,
        ..Default::default()
    };

    let drive = match stimulus {
        Stimulus::Frame(frame) => {
            if frame.len() != rt.input_slots.len() {
                return Err(Error::Usage(format!(
                    "frame has {} values, input layer needs {}",
                    frame.len(),
                    rt.input_slots.len()
                )));
            }
            let threshold = rt
                .input_slots
                .first()
                .map(|&(flat, c)| rt.cores[flat].configs[c as usize].threshold)
                .unwrap_or(1);
            Some(injection_drive(frame, threshold))
        }
        Stimulus::Raster(_) => None,
    };

    let mut states: Vec<Vec<NeuronState>> = rt
        .cores
        .iter()
        .map(|c| vec![NeuronState::default(); c.configs.len()])
        .collect();
    let mut accum: Vec<Vec<i64>> = rt
        .cores
        .iter()
        .map(|c| vec![0i64; c.configs.len()])
        .collect();
    let mut prev_spikes: Vec<Vec<u32>> = vec![Vec::new(); rt.cores.len()];
    let mut trace = SpikeTrace::new(rt.n_neurons, rt.n_layers, t_max);

    for t in 1..=t_max {
        // Deliver the previous step's spikes.
        for flat in 0..rt.cores.len() {
            let core = &rt.cores[flat];
            for &local in &prev_spikes[flat] {
                for &a in &core.fanout[local as usize] {
                    let axon = &core.axons[a as usize];
                    let slot = (local - axon.member_start) as usize;
                    let template = &rt.cores[axon.dst_flat].templates[axon.group as usize][slot];
                    counters.synaptic_ops += template.len() as u64;
                    if axon.dst_flat != flat {
                        counters.core_to_core_msgs += 1;
                        if axon.dst_chip != core.chip {
                            counters.chip_to_chip_msgs += 1;
                        }
                    }
                    let dst = &mut accum[axon.dst_flat];
                    for &(rel, w) in template {
                        dst[(axon.base + rel) as usize] += w;
                    }
                }
            }
        }
        for spikes in prev_spikes.iter_mut() {
            spikes.clear();
        }

        // Inject the stimulus.
        match stimulus {
            Stimulus::Frame(_) => {
                let drive = drive.as_ref().expect("frame drive prepared");
                for (idx, &(flat, c)) in rt.input_slots.iter().enumerate() {
                    accum[flat][c as usize] += drive[idx];
                }
            }
            Stimulus::Raster(raster) => {
                if let Some(step) = raster.get((t - 1) as usize) {
                    for &n in step {
                        let &(flat, c) = rt.input_slots.get(n as usize).ok_or_else(|| {
                            Error::Usage(format!("raster neuron {n} outside input layer"))
                        })?;
                        let neuron = rt.cores[flat].neurons[c as usize] as usize;
                        prev_spikes[flat].push(c);
                        counters.spikes_total += 1;
                        trace.record(neuron, 0, t);
                    }
                }
            }
        }

        // Update compartments.
        let forced_input = matches!(stimulus, Stimulus::Raster(_));
        for (flat, core) in rt.cores.iter().enumerate() {
            if forced_input && core.layer == 0 {
                for v in accum[flat].iter_mut() {
                    *v = 0;
                }
                continue;
            }
            for (c, state) in states[flat].iter_mut().enumerate() {
                let neuron = core.neurons[c];
                if neuron == NO_NEURON {
                    continue; // passive reset partner
                }
                let w_in = std::mem::take(&mut accum[flat][c]);
                if step_dynamics(state, w_in, &core.configs[c]) {
                    prev_spikes[flat].push(c as u32);
                    counters.spikes_total += 1;
                    trace.record(neuron as usize, core.layer, t);
                }
            }
        }
    }

    let (out_offset, out_count) = rt.output_span;
    let output_counts = trace.times[out_offset..out_offset + out_count]
        .iter()
        .map(|v| v.len() as u64)
        .collect();
    Ok(MappedRun {
        trace,
        counters,
        output_counts,
    })
}

// ---------------------------------------------------------------------------
// Energy-delay proxy
// ---------------------------------------------------------------------------

/// Proxy cost constants. These are dimensionless accounting weights, not
/// physical watts or seconds: spikes and synaptic operations dominate the
/// active share, static cost scales with allocated cores and time, and
/// off-chip messages stretch the per-step duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdpConstants {
    pub e_spike: f64,
    pub e_syn: f64,
    pub e_static: f64,
    pub t_base: f64,
    pub t_syn: f64,
    pub t_offchip: f64,
}

impl Default for EdpConstants {
    fn default() -> Self {
        EdpConstants {
            e_spike: 1.0,
            e_syn: 0.2,
            e_static: 0.05,
            t_base: 1.0,
            t_syn: 0.01,
            t_offchip: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdpProxy {
    pub energy_proxy: f64,
    pub delay_proxy: f64,
    pub edp: f64,
}

/// Energy is spikes + synaptic ops + static floor per core-step; delay is the
/// per-step base stretched by synaptic work and off-chip traffic; the proxy
/// is their product.
pub fn edp_proxy(counters: &Counters, n_cores: u64, constants: &EdpConstants) -> EdpProxy {
    let t = counters.timesteps_run as f64;
    let energy_proxy = constants.e_spike * counters.spikes_total as f64
        + constants.e_syn * counters.synaptic_ops as f64
        + constants.e_static * n_cores as f64 * t;
    let delay_proxy = constants.t_base * t
        + constants.t_syn * counters.synaptic_ops as f64
        + constants.t_offchip * counters.chip_to_chip_msgs as f64;
    EdpProxy {
        energy_proxy,
        delay_proxy,
        edp: energy_proxy * delay_proxy,
    }
}
