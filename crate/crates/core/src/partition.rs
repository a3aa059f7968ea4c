//! Layer partitioning under hard per-core resource limits, scored by a soft
//! cost over cores, synapse memory, axons and off-chip traffic.
//!
//! Layers are split into balanced rectangular grids over their `(y, x, z)`
//! volume. Because a layer's axon requirements depend on how its successor is
//! partitioned, optimization walks the chain from output to input with a beam
//! of at most `M` retained candidate chains per layer; each step scores at
//! most `M * M` combinations.

use std::collections::HashMap;

use crate::connectivity::{pair_counts, PairCounts, Sharing, SynapseCostModel};
use crate::error::{Error, ResourceKind, Result};
use crate::model::{LayerKind, LayerSpec, NetworkSpec, Padding, Shape};

/// Hard per-core resource limits and the chip size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreConstraints {
    pub max_neurons_per_core: u64,
    pub max_input_axons: u64,
    pub max_output_axons: u64,
    pub synapse_budget_units: u64,
    pub cores_per_chip: u64,
}

impl Default for CoreConstraints {
    fn default() -> Self {
        CoreConstraints {
            max_neurons_per_core: 1024,
            max_input_axons: 4096,
            max_output_axons: 4096,
            synapse_budget_units: 131072,
            cores_per_chip: 128,
        }
    }
}

impl CoreConstraints {
    /// Per-core axon budget used to normalize the axon cost term
    /// (input plus output).
    pub fn axon_budget(&self) -> u64 {
        self.max_input_axons + self.max_output_axons
    }
}

/// Soft-cost weights. All non-negative, at least one positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub alpha: [f64; 4],
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { alpha: [1.0; 4] }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|a| *a < 0.0 || !a.is_finite()) {
            return Err(Error::Usage("cost weights must be non-negative".into()));
        }
        if self.alpha.iter().all(|a| *a == 0.0) {
            return Err(Error::Usage("at least one cost weight must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Partition: balanced grid split of a layer volume
// ---------------------------------------------------------------------------

fn balanced_bounds(extent: u32, parts: u32) -> Vec<u32> {
    let q = extent / parts;
    let r = extent % parts;
    (0..=parts).map(|i| i * q + i.min(r)).collect()
}

/// Assignment of one layer's neurons to cores via a balanced rectangular grid
/// split of its `(y, x, z)` volume. Core-local neuron order is row-major
/// within the core's box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    layer: usize,
    shape: Shape,
    soft: bool,
    grid: (u32, u32, u32),
    bounds_y: Vec<u32>,
    bounds_x: Vec<u32>,
    bounds_z: Vec<u32>,
}

impl Partition {
    pub fn new(layer: usize, shape: Shape, soft: bool, grid: (u32, u32, u32)) -> Result<Self> {
        let (gy, gx, gz) = grid;
        if gy == 0 || gx == 0 || gz == 0 || gy > shape.h || gx > shape.w || gz > shape.c {
            return Err(Error::Partition(format!(
                "grid {grid:?} does not tile shape {shape:?}"
            )));
        }
        Ok(Partition {
            layer,
            shape,
            soft,
            grid,
            bounds_y: balanced_bounds(shape.h, gy),
            bounds_x: balanced_bounds(shape.w, gx),
            bounds_z: balanced_bounds(shape.c, gz),
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn grid(&self) -> (u32, u32, u32) {
        self.grid
    }

    pub fn is_soft(&self) -> bool {
        self.soft
    }

    pub fn compartment_factor(&self) -> u32 {
        if self.soft {
            2
        } else {
            1
        }
    }

    pub fn n_cores(&self) -> u32 {
        self.grid.0 * self.grid.1 * self.grid.2
    }

    fn axis_part(bounds: &[u32], v: u32) -> u32 {
        (bounds.partition_point(|&b| b <= v) - 1) as u32
    }

    /// Box of a core as `(y0..y1, x0..x1, z0..z1)`.
    pub fn core_box(&self, core: u32) -> ((u32, u32), (u32, u32), (u32, u32)) {
        let gz = self.grid.2;
        let gx = self.grid.1;
        let pz = core % gz;
        let px = (core / gz) % gx;
        let py = core / (gz * gx);
        (
            (self.bounds_y[py as usize], self.bounds_y[py as usize + 1]),
            (self.bounds_x[px as usize], self.bounds_x[px as usize + 1]),
            (self.bounds_z[pz as usize], self.bounds_z[pz as usize + 1]),
        )
    }

    pub fn neurons_in_core(&self, core: u32) -> u32 {
        let ((y0, y1), (x0, x1), (z0, z1)) = self.core_box(core);
        (y1 - y0) * (x1 - x0) * (z1 - z0)
    }

    pub fn compartments_in_core(&self, core: u32) -> u32 {
        self.neurons_in_core(core) * self.compartment_factor()
    }

    /// Largest per-core compartment count over the grid.
    pub fn max_box_compartments(&self) -> u64 {
        let sy = (self.bounds_y[1] - self.bounds_y[0]) as u64;
        let sx = (self.bounds_x[1] - self.bounds_x[0]) as u64;
        let sz = (self.bounds_z[1] - self.bounds_z[0]) as u64;
        sy * sx * sz * self.compartment_factor() as u64
    }

    /// Map a layer-global neuron index to `(core, core-local index)`.
    pub fn core_and_local(&self, global: u32) -> (u32, u32) {
        let (y, x, z) = self.shape.coords(global);
        let py = Self::axis_part(&self.bounds_y, y);
        let px = Self::axis_part(&self.bounds_x, x);
        let pz = Self::axis_part(&self.bounds_z, z);
        let core = (py * self.grid.1 + px) * self.grid.2 + pz;
        let ((y0, _), (x0, x1), (z0, z1)) = self.core_box(core);
        let bw = x1 - x0;
        let bd = z1 - z0;
        let local = ((y - y0) * bw + (x - x0)) * bd + (z - z0);
        (core, local)
    }

    pub fn local_to_global(&self, core: u32, local: u32) -> u32 {
        let ((y0, _), (x0, x1), (z0, z1)) = self.core_box(core);
        let bw = x1 - x0;
        let bd = z1 - z0;
        let z = local % bd;
        let xy = local / bd;
        let x = xy % bw;
        let y = xy / bw;
        self.shape.index(y0 + y, x0 + x, z0 + z)
    }
}

// ---------------------------------------------------------------------------
// Resource tallies and the cost function
// ---------------------------------------------------------------------------

/// Per-core resource usage. `output_axons` carries the off-chip-doubled
/// charge; `offchip_axons` counts the axons that leave the chip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreCounts {
    pub neurons: u64,
    pub input_axons: u64,
    pub output_axons: u64,
    pub synapse_units: u64,
    pub offchip_axons: u64,
}

/// One layer's complete per-core resource usage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceTally {
    pub layer: usize,
    pub per_core: Vec<CoreCounts>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TallyAggregates {
    pub n_cores: u64,
    pub n_neurons: u64,
    pub n_syn: u64,
    pub n_axons: u64,
    pub n_offchip: u64,
}

impl ResourceTally {
    pub fn aggregate(&self) -> TallyAggregates {
        let mut agg = TallyAggregates {
            n_cores: self.per_core.len() as u64,
            ..Default::default()
        };
        for c in &self.per_core {
            agg.n_neurons += c.neurons;
            agg.n_syn += c.synapse_units;
            agg.n_axons += c.input_axons + c.output_axons;
            agg.n_offchip += c.offchip_axons;
        }
        agg
    }
}

/// Soft cost of one layer tally:
/// `a0 * N_cores + a1 * N_syn / syn_budget + a2 * N_axons / axon_budget
///  + a3 * N_offchip`.
pub fn evaluate_cost(tally: &ResourceTally, w: &CostWeights, c: &CoreConstraints) -> f64 {
    let agg = tally.aggregate();
    if agg.n_cores == 0 {
        return 0.0;
    }
    w.alpha[0] * agg.n_cores as f64
        + w.alpha[1] * agg.n_syn as f64 / c.synapse_budget_units as f64
        + w.alpha[2] * agg.n_axons as f64 / c.axon_budget() as f64
        + w.alpha[3] * agg.n_offchip as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HardViolation {
    pub core: u32,
    pub kind: ResourceKind,
    pub value: u64,
    pub limit: u64,
}

/// First per-core hard-limit violation, or `None` when the tally is valid.
/// Limits are inclusive.
pub fn check_hard(tally: &ResourceTally, c: &CoreConstraints) -> Option<HardViolation> {
    for (i, counts) in tally.per_core.iter().enumerate() {
        let checks = [
            (ResourceKind::Neurons, counts.neurons, c.max_neurons_per_core),
            (ResourceKind::InputAxons, counts.input_axons, c.max_input_axons),
            (ResourceKind::OutputAxons, counts.output_axons, c.max_output_axons),
            (ResourceKind::Synapses, counts.synapse_units, c.synapse_budget_units),
        ];
        for (kind, value, limit) in checks {
            if value > limit {
                return Some(HardViolation {
                    core: i as u32,
                    kind,
                    value,
                    limit,
                });
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Candidate proposal
// ---------------------------------------------------------------------------

/// Static per-output-position fan-in counts along one axis. For valid padding
/// every position sees the full kernel extent; same padding clips borders.
fn axis_fanin_counts(input: u32, out: u32, k: u32, s: u32, pad_lead: i64) -> Vec<u64> {
    (0..out)
        .map(|o| {
            let start = o as i64 * s as i64 - pad_lead;
            let lo = start.max(0);
            let hi = (start + k as i64).min(input as i64);
            (hi - lo).max(0) as u64
        })
        .collect()
}

fn prefix(v: &[u64]) -> Vec<u64> {
    let mut p = vec![0u64; v.len() + 1];
    for (i, x) in v.iter().enumerate() {
        p[i + 1] = p[i] + x;
    }
    p
}

fn max_section_sum(prefix: &[u64], bounds: &[u32]) -> u64 {
    bounds
        .windows(2)
        .map(|w| prefix[w[1] as usize] - prefix[w[0] as usize])
        .max()
        .unwrap_or(0)
}

/// Incoming-connection profile of a layer, used for locally provable
/// feasibility screens during candidate generation.
struct IncomingProfile {
    /// Synapse entries per output position, separable as y * x * channel.
    fanin_y: Vec<u64>,
    fanin_x: Vec<u64>,
    entries_per_channel: u64,
    /// Receptive-field extent along y/x per output section (sharing off
    /// lower-bounds input axons by distinct source neurons).
    rf: Option<RfProfile>,
    dense_fan_in: Option<u64>,
}

struct RfProfile {
    input_h: u32,
    input_w: u32,
    k: (u32, u32),
    s: (u32, u32),
    pad: (i64, i64),
    cross_channel: bool,
    input_c: u32,
}

fn incoming_profile(layer: &LayerSpec, pre: Option<&LayerSpec>) -> Option<IncomingProfile> {
    let pre = pre?;
    let input = pre.output_shape;
    let out = layer.output_shape;
    match layer.kind {
        LayerKind::Dense => Some(IncomingProfile {
            fanin_y: vec![1],
            fanin_x: vec![1],
            entries_per_channel: input.volume(),
            rf: None,
            dense_fan_in: Some(input.volume()),
        }),
        LayerKind::Conv2D | LayerKind::DepthwiseConv2D | LayerKind::AveragePool2D => {
            let (kh, kw) = layer.kernel_dims();
            let (sy, sx) = layer.stride_dims();
            let (py, px) = match layer.padding_mode() {
                Padding::Valid => (0i64, 0i64),
                Padding::Same => {
                    let (a, _) = crate::model::same_padding(input.h, kh, sy);
                    let (b, _) = crate::model::same_padding(input.w, kw, sx);
                    (a as i64, b as i64)
                }
            };
            let cross = layer.kind == LayerKind::Conv2D;
            Some(IncomingProfile {
                fanin_y: axis_fanin_counts(input.h, out.h, kh, sy, py),
                fanin_x: axis_fanin_counts(input.w, out.w, kw, sx, px),
                entries_per_channel: if cross { input.c as u64 } else { 1 },
                rf: Some(RfProfile {
                    input_h: input.h,
                    input_w: input.w,
                    k: (kh, kw),
                    s: (sy, sx),
                    pad: (py, px),
                    cross_channel: cross,
                    input_c: input.c,
                }),
                dense_fan_in: None,
            })
        }
        LayerKind::Input | LayerKind::Flatten => None,
    }
}

fn rf_extent(out0: u32, out1: u32, k: u32, s: u32, pad: i64, input: u32) -> u64 {
    let lo = (out0 as i64 * s as i64 - pad).max(0);
    let hi = ((out1 as i64 - 1) * s as i64 - pad + k as i64).min(input as i64);
    (hi - lo).max(0) as u64
}

/// Enumerate balanced grid splits of a layer, discard those that provably
/// violate a per-core hard limit, rank by (fewest cores, most balanced boxes,
/// fewest channel splits, grid order), and return the best `m`.
pub fn propose_candidates(
    layer: &LayerSpec,
    layer_pos: usize,
    pre: Option<&LayerSpec>,
    m: usize,
    constraints: &CoreConstraints,
    cost_model: &SynapseCostModel,
    sharing: Sharing,
) -> Result<Vec<Partition>> {
    if m == 0 {
        return Err(Error::Usage("beam width must be at least 1".into()));
    }
    let shape = layer.output_shape;
    let soft = layer.compartment_factor() == 2;
    let factor = if soft { 2u64 } else { 1u64 };
    let soft_extra = if soft { 1u64 } else { 0u64 };

    let profile = incoming_profile(layer, pre);

    // Per-axis statistics for every part count, so the grid loop is O(1)
    // per candidate: largest box extent, largest per-section fan-in sum, and
    // largest per-section receptive-field extent.
    struct AxisStats {
        max_len: Vec<u64>,
        max_fanin: Vec<u64>,
        max_rf: Vec<u64>,
    }
    let axis_stats = |extent: u32, fanin: Option<&[u64]>, rf: Option<(u32, u32, i64, u32)>| {
        let pref = fanin.map(prefix);
        let mut stats = AxisStats {
            max_len: vec![0; extent as usize + 1],
            max_fanin: vec![0; extent as usize + 1],
            max_rf: vec![0; extent as usize + 1],
        };
        for parts in 1..=extent {
            let bounds = balanced_bounds(extent, parts);
            stats.max_len[parts as usize] = (bounds[1] - bounds[0]) as u64;
            if let Some(pref) = &pref {
                stats.max_fanin[parts as usize] = max_section_sum(pref, &bounds);
            }
            if let Some((k, s, pad, input)) = rf {
                stats.max_rf[parts as usize] = bounds
                    .windows(2)
                    .map(|w| rf_extent(w[0], w[1], k, s, pad, input))
                    .max()
                    .unwrap_or(0);
            }
        }
        stats
    };
    let (stats_y, stats_x) = match &profile {
        Some(p) => {
            let rf_y = p.rf.as_ref().map(|r| (r.k.0, r.s.0, r.pad.0, r.input_h));
            let rf_x = p.rf.as_ref().map(|r| (r.k.1, r.s.1, r.pad.1, r.input_w));
            (
                axis_stats(shape.h, Some(&p.fanin_y), rf_y),
                axis_stats(shape.w, Some(&p.fanin_x), rf_x),
            )
        }
        None => (
            axis_stats(shape.h, None, None),
            axis_stats(shape.w, None, None),
        ),
    };
    let stats_z = axis_stats(shape.c, None, None);

    // Cheapest possible unit cost per stored entry under the configured
    // scheme; used only as an admissible lower bound.
    let unit_floor = match cost_model.choice {
        crate::connectivity::CompressionChoice::Sparse => cost_model.sparse_per_entry,
        _ => cost_model
            .dense_per_slot
            .min(cost_model.rle_per_entry)
            .min(cost_model.sparse_per_entry),
    };

    struct Scored {
        grid: (u32, u32, u32),
        cores: u64,
        max_comp: u64,
        nz: u32,
    }
    let mut feasible: Vec<Scored> = Vec::new();
    let mut any_neuron_ok = false;

    for gy in 1..=shape.h {
        let max_y = stats_y.max_len[gy as usize];
        for gx in 1..=shape.w {
            let max_x = stats_x.max_len[gx as usize];
            for gz in 1..=shape.c {
                let max_z = stats_z.max_len[gz as usize];
                let max_neurons = max_y * max_x * max_z;
                let max_comp = max_neurons * factor;
                if max_comp > constraints.max_neurons_per_core {
                    continue;
                }
                any_neuron_ok = true;

                if let Some(p) = &profile {
                    // Synapse floor: raw incoming entries are a valid bound
                    // only where canonical dedup provably cannot help, which
                    // is dense layers (every column has distinct weight ids)
                    // and any layer with sharing disabled.
                    let raw_entries = if p.dense_fan_in.is_some() {
                        Some(max_neurons * p.entries_per_channel)
                    } else if sharing == Sharing::Off {
                        Some(
                            stats_y.max_fanin[gy as usize]
                                * stats_x.max_fanin[gx as usize]
                                * p.entries_per_channel
                                * max_z,
                        )
                    } else {
                        None
                    };
                    let syn_floor =
                        raw_entries.unwrap_or(0) * unit_floor + max_neurons * soft_extra;
                    if syn_floor > constraints.synapse_budget_units {
                        continue;
                    }
                    // Input-axon floor: every distinct source neuron in the
                    // receptive field sends a discrete axon when sharing is
                    // off, and also when a channel split of cross-channel
                    // connectivity makes every source multi-destination.
                    let cores = gy as u64 * gx as u64 * gz as u64;
                    let arriving = match (&p.rf, p.dense_fan_in) {
                        (_, Some(fan_in)) => {
                            if sharing == Sharing::Off || cores > 1 {
                                fan_in
                            } else {
                                0
                            }
                        }
                        (Some(rf), _) => {
                            let forced_discrete = sharing == Sharing::Off
                                || (gz > 1 && rf.cross_channel);
                            if forced_discrete {
                                let ch = if rf.cross_channel {
                                    rf.input_c as u64
                                } else {
                                    max_z
                                };
                                stats_y.max_rf[gy as usize] * stats_x.max_rf[gx as usize] * ch
                            } else {
                                0
                            }
                        }
                        _ => 0,
                    };
                    if arriving + max_neurons * soft_extra > constraints.max_input_axons {
                        continue;
                    }
                }

                feasible.push(Scored {
                    grid: (gy, gx, gz),
                    cores: gy as u64 * gx as u64 * gz as u64,
                    max_comp,
                    nz: gz,
                });
            }
        }
    }

    if feasible.is_empty() {
        let reason = if any_neuron_ok {
            "every neuron-feasible grid exceeds a synapse or axon floor"
        } else {
            "compartment count exceeds the per-core limit even at maximal split"
        };
        return Err(Error::NoFeasiblePartition {
            layer: layer.id.clone(),
            reason: reason.into(),
        });
    }

    feasible.sort_by_key(|s| (s.cores, s.max_comp, s.nz, s.grid));
    feasible.truncate(m);
    feasible
        .into_iter()
        .map(|s| Partition::new(layer_pos, shape, soft, s.grid))
        .collect()
}

// ---------------------------------------------------------------------------
// Chain assembly helpers
// ---------------------------------------------------------------------------

/// Base per-core counts of a layer before pair contributions: compartments,
/// the per-neuron recurrent charge of soft reset (one input axon and one
/// synapse unit per neuron), frame injection on the input layer, and the
/// readout axon per neuron on the output layer.
fn base_counts(part: &Partition, is_input: bool, is_output: bool) -> Vec<CoreCounts> {
    (0..part.n_cores())
        .map(|core| {
            let logical = part.neurons_in_core(core) as u64;
            let soft_extra = if part.is_soft() { logical } else { 0 };
            CoreCounts {
                neurons: part.compartments_in_core(core) as u64,
                input_axons: soft_extra + if is_input { logical } else { 0 },
                output_axons: if is_output { logical } else { 0 },
                synapse_units: soft_extra,
                offchip_axons: 0,
            }
        })
        .collect()
}

fn add_pair_to_layers(
    pre_counts: &mut [CoreCounts],
    post_counts: &mut [CoreCounts],
    pair: &PairCounts,
) {
    for (c, add) in pre_counts.iter_mut().zip(&pair.pre_output_axons) {
        c.output_axons += add;
    }
    for (c, add) in pre_counts.iter_mut().zip(&pair.pre_offchip) {
        c.offchip_axons += add;
    }
    for (c, add) in post_counts.iter_mut().zip(&pair.post_input_axons) {
        c.input_axons += add;
    }
    for (c, add) in post_counts.iter_mut().zip(&pair.post_synapse_units) {
        c.synapse_units += add;
    }
}

fn partial_violation(counts: &[CoreCounts], c: &CoreConstraints) -> bool {
    counts.iter().any(|cc| {
        cc.neurons > c.max_neurons_per_core
            || cc.input_axons > c.max_input_axons
            || cc.output_axons > c.max_output_axons
            || cc.synapse_units > c.synapse_budget_units
    })
}

/// Recompute the full per-layer tallies of a partition chain from scratch.
/// `chips` optionally supplies per-layer chip residency for off-chip charges.
pub fn retally(
    net: &NetworkSpec,
    partitions: &[Partition],
    sharing: Sharing,
    cost_model: &SynapseCostModel,
    chips: Option<&[Vec<u32>]>,
) -> Result<Vec<ResourceTally>> {
    let phys = net.physical_layers();
    if partitions.len() != phys.len() {
        return Err(Error::Partition(format!(
            "chain has {} partitions but the network has {} physical layers",
            partitions.len(),
            phys.len()
        )));
    }
    let n = phys.len();
    let mut counts: Vec<Vec<CoreCounts>> = (0..n)
        .map(|pos| base_counts(&partitions[pos], pos == 0, pos == n - 1))
        .collect();
    for pos in 0..n.saturating_sub(1) {
        let chip_pair = chips.map(|c| (c[pos].as_slice(), c[pos + 1].as_slice()));
        let pair = pair_counts(
            &net.layers[phys[pos]],
            &net.layers[phys[pos + 1]],
            &partitions[pos],
            &partitions[pos + 1],
            sharing,
            cost_model,
            chip_pair,
        )?;
        let (a, b) = counts.split_at_mut(pos + 1);
        add_pair_to_layers(&mut a[pos], &mut b[0], &pair);
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(pos, per_core)| ResourceTally {
            layer: pos,
            per_core,
        })
        .collect())
}

/// Total soft cost of a set of layer tallies, summed from the output layer
/// down to the input layer (the same order the optimizer accumulates in).
pub fn total_cost(
    tallies: &[ResourceTally],
    w: &CostWeights,
    c: &CoreConstraints,
) -> f64 {
    let mut total = 0.0;
    for t in tallies.iter().rev() {
        total += evaluate_cost(t, w, c);
    }
    total
}

// ---------------------------------------------------------------------------
// Greedy reverse-order beam optimization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    /// One partition per physical layer, input first.
    pub partitions: Vec<Partition>,
    pub tallies: Vec<ResourceTally>,
    pub total_cost: f64,
}

#[derive(Clone)]
struct Chain {
    parts: Vec<Option<Partition>>,
    counts: Vec<Option<Vec<CoreCounts>>>,
    finalized_cost: f64,
}

impl Chain {
    fn grid_key(&self) -> Vec<(u32, u32, u32)> {
        self.parts
            .iter()
            .map(|p| p.as_ref().map(|p| p.grid()).unwrap_or((0, 0, 0)))
            .collect()
    }
}

/// Partition every physical layer of a network. Traverses layers from output
/// to input keeping the `m` best candidate chains by cumulative finalized
/// cost; a layer's tally is finalized once its own and its successor's
/// partitions are fixed. Every returned partition passes [`check_hard`].
pub fn optimize(
    net: &NetworkSpec,
    m: usize,
    w: &CostWeights,
    constraints: &CoreConstraints,
    cost_model: &SynapseCostModel,
    sharing: Sharing,
) -> Result<OptimizeOutcome> {
    w.validate()?;
    let phys = net.physical_layers();
    let n = phys.len();
    if n == 0 {
        return Err(Error::Shape("network has no physical layers".into()));
    }

    let rank_cost = |chain: &Chain, frontier: usize, c: &CoreConstraints| -> f64 {
        let mut cost = chain.finalized_cost;
        if let Some(counts) = &chain.counts[frontier] {
            let t = ResourceTally {
                layer: frontier,
                per_core: counts.clone(),
            };
            // The frontier layer still lacks its input-side contributions;
            // score what is already known.
            if chain.parts[frontier].is_some() && frontier != 0 {
                cost += evaluate_cost(&t, w, c);
            }
        }
        cost
    };

    let select = |mut chains: Vec<Chain>, frontier: usize| -> Vec<Chain> {
        chains.sort_by(|a, b| {
            rank_cost(a, frontier, constraints)
                .total_cmp(&rank_cost(b, frontier, constraints))
                .then_with(|| a.grid_key().cmp(&b.grid_key()))
        });
        chains.truncate(m);
        chains
    };

    // Seed with the output layer.
    let last = n - 1;
    let out_spec = &net.layers[phys[last]];
    let out_pre = if last > 0 {
        Some(&net.layers[phys[last - 1]])
    } else {
        None
    };
    let mut beam: Vec<Chain> = Vec::new();
    for part in propose_candidates(out_spec, last, out_pre, m, constraints, cost_model, sharing)? {
        let counts = base_counts(&part, last == 0, true);
        if partial_violation(&counts, constraints) {
            continue;
        }
        let mut chain = Chain {
            parts: vec![None; n],
            counts: vec![None; n],
            finalized_cost: 0.0,
        };
        if n == 1 {
            let t = ResourceTally {
                layer: last,
                per_core: counts.clone(),
            };
            if check_hard(&t, constraints).is_some() {
                continue;
            }
            chain.finalized_cost = evaluate_cost(&t, w, constraints);
        }
        chain.parts[last] = Some(part);
        chain.counts[last] = Some(counts);
        beam.push(chain);
    }
    if beam.is_empty() {
        return Err(Error::InfeasibleNetwork {
            layer: out_spec.id.clone(),
        });
    }
    beam = select(beam, last);

    for pos in (0..last).rev() {
        let spec = &net.layers[phys[pos]];
        let pre_spec = if pos > 0 {
            Some(&net.layers[phys[pos - 1]])
        } else {
            None
        };
        let post_spec = &net.layers[phys[pos + 1]];
        let proposals =
            propose_candidates(spec, pos, pre_spec, m, constraints, cost_model, sharing)?;

        let mut cache: HashMap<((u32, u32, u32), (u32, u32, u32)), PairCounts> = HashMap::new();
        let mut next: Vec<Chain> = Vec::new();
        for chain in &beam {
            let post_part = chain.parts[pos + 1].as_ref().expect("frontier is partitioned");
            for part in &proposals {
                let key = (part.grid(), post_part.grid());
                let pair = match cache.get(&key) {
                    Some(p) => p.clone(),
                    None => {
                        let p = pair_counts(
                            spec, post_spec, part, post_part, sharing, cost_model, None,
                        )?;
                        cache.insert(key, p.clone());
                        p
                    }
                };
                let mut counts = base_counts(part, pos == 0, false);
                let mut post_counts = chain.counts[pos + 1].clone().expect("frontier counted");
                add_pair_to_layers(&mut counts, &mut post_counts, &pair);

                let post_tally = ResourceTally {
                    layer: pos + 1,
                    per_core: post_counts.clone(),
                };
                if check_hard(&post_tally, constraints).is_some() {
                    continue;
                }
                if partial_violation(&counts, constraints) {
                    continue;
                }
                let mut new_chain = chain.clone();
                new_chain.counts[pos + 1] = Some(post_counts);
                new_chain.finalized_cost += evaluate_cost(&post_tally, w, constraints);
                if pos == 0 {
                    let t = ResourceTally {
                        layer: 0,
                        per_core: counts.clone(),
                    };
                    if check_hard(&t, constraints).is_some() {
                        continue;
                    }
                    new_chain.finalized_cost += evaluate_cost(&t, w, constraints);
                }
                new_chain.parts[pos] = Some(part.clone());
                new_chain.counts[pos] = Some(counts);
                next.push(new_chain);
            }
        }
        if next.is_empty() {
            return Err(Error::InfeasibleNetwork {
                layer: spec.id.clone(),
            });
        }
        beam = select(next, pos);
    }

    let best = beam
        .into_iter()
        .min_by(|a, b| {
            a.finalized_cost
                .total_cmp(&b.finalized_cost)
                .then_with(|| a.grid_key().cmp(&b.grid_key()))
        })
        .expect("beam is non-empty");

    let partitions: Vec<Partition> = best
        .parts
        .into_iter()
        .map(|p| p.expect("all layers partitioned"))
        .collect();
    let tallies: Vec<ResourceTally> = best
        .counts
        .into_iter()
        .enumerate()
        .map(|(pos, c)| ResourceTally {
            layer: pos,
            per_core: c.expect("all layers tallied"),
        })
        .collect();
    Ok(OptimizeOutcome {
        partitions,
        tallies,
        total_cost: best.finalized_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NeuronConfig, ResetMode};

    fn layer(id: &str, kind: LayerKind, shape: Shape, reset: ResetMode) -> LayerSpec {
        LayerSpec {
            id: id.into(),
            kind,
            output_shape: shape,
            kernel: None,
            strides: None,
            padding: None,
            neuron: Some(NeuronConfig {
                threshold: 100,
                v_decay: 0,
                i_decay: crate::model::DECAY_MAX,
                reset,
                bias: 0.0,
            }),
            weight_ref: None,
        }
    }

    fn tally_of(counts: Vec<CoreCounts>) -> ResourceTally {
        ResourceTally {
            layer: 0,
            per_core: counts,
        }
    }

    #[test]
    fn cost_at_full_budgets_is_three() {
        let c = CoreConstraints::default();
        let t = tally_of(vec![CoreCounts {
            neurons: 1024,
            input_axons: 4096,
            output_axons: 4096,
            synapse_units: 131072,
            offchip_axons: 0,
        }]);
        let cost = evaluate_cost(&t, &CostWeights::default(), &c);
        assert_eq!(cost, 3.0);
    }

    #[test]
    fn empty_tally_costs_zero() {
        let c = CoreConstraints::default();
        assert_eq!(evaluate_cost(&tally_of(vec![]), &CostWeights::default(), &c), 0.0);
    }

    #[test]
    fn single_term_projection() {
        let c = CoreConstraints::default();
        let t = tally_of(vec![CoreCounts::default(); 7]);
        let w = CostWeights {
            alpha: [1.0, 0.0, 0.0, 0.0],
        };
        assert_eq!(evaluate_cost(&t, &w, &c), 7.0);
    }

    #[test]
    fn hard_check_boundaries() {
        let c = CoreConstraints::default();
        let over_neurons = tally_of(vec![CoreCounts {
            neurons: 1025,
            ..Default::default()
        }]);
        assert_eq!(
            check_hard(&over_neurons, &c).unwrap().kind,
            ResourceKind::Neurons
        );

        let at_axon_limit = tally_of(vec![CoreCounts {
            input_axons: 4096,
            ..Default::default()
        }]);
        assert!(check_hard(&at_axon_limit, &c).is_none());

        let over_syn = tally_of(vec![CoreCounts {
            synapse_units: 131073,
            ..Default::default()
        }]);
        assert_eq!(
            check_hard(&over_syn, &c).unwrap().kind,
            ResourceKind::Synapses
        );
    }

    #[test]
    fn soft_wide_layer_needs_channel_split() {
        let l = layer("d", LayerKind::Dense, Shape::new(1, 1, 2048), ResetMode::Soft);
        let c = CoreConstraints::default();
        let model = SynapseCostModel::default();
        let cands =
            propose_candidates(&l, 0, None, 4, &c, &model, Sharing::On).unwrap();
        assert_eq!(cands[0].grid(), (1, 1, 4));
        assert!(cands[0].max_box_compartments() <= 1024);
    }

    #[test]
    fn small_layer_fits_one_core() {
        let l = layer("c", LayerKind::Input, Shape::new(4, 4, 10), ResetMode::Hard);
        let c = CoreConstraints::default();
        let model = SynapseCostModel::default();
        let cands = propose_candidates(&l, 0, None, 4, &c, &model, Sharing::On).unwrap();
        assert_eq!(cands[0].grid(), (1, 1, 1));
    }

    #[test]
    fn large_layer_candidates_respect_neuron_bound() {
        let l = layer("c", LayerKind::Input, Shape::new(32, 32, 64), ResetMode::Hard);
        let c = CoreConstraints::default();
        let model = SynapseCostModel::default();
        let cands = propose_candidates(&l, 0, None, 2, &c, &model, Sharing::On).unwrap();
        assert_eq!(cands.len(), 2);
        assert_ne!(cands[0].grid(), cands[1].grid());
        for p in &cands {
            assert!(p.max_box_compartments() <= 1024);
        }
    }

    #[test]
    fn partition_boxes_tile_the_volume() {
        let shape = Shape::new(5, 7, 3);
        let p = Partition::new(0, shape, false, (2, 3, 2)).unwrap();
        let mut seen = vec![false; shape.volume() as usize];
        for core in 0..p.n_cores() {
            for local in 0..p.neurons_in_core(core) {
                let g = p.local_to_global(core, local);
                assert!(!seen[g as usize]);
                seen[g as usize] = true;
                assert_eq!(p.core_and_local(g), (core, local));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
