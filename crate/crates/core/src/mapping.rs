//! Placement of partitioned layers onto chips and cores, soft-reset
//! compartment expansion, synapse encoding, and the deployment image.
//!
//! The image is canonical JSON with base64 payload blocks so that repeated
//! builds of the same network are byte-identical and goldens stay diffable.

use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::connectivity::{
    build_groups, unroll, PopulationAxon, Scheme, Sharing, SynapseCostModel, SynapseGroup,
};
use crate::error::{Error, Result};
use crate::model::ResetMode;
use crate::partition::{
    check_hard, CoreConstraints, CoreCounts, Partition, ResourceTally,
};
use crate::quant::QuantizedNetwork;

pub const IMAGE_FORMAT: &str = "nfimg/1";

// ---------------------------------------------------------------------------
// Chip placement
// ---------------------------------------------------------------------------

/// Chip/slot assignment per layer core, filled first-fit in layer order so
/// consecutive layers share a chip while space permits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub per_layer: Vec<Vec<(u32, u32)>>,
    pub chips_used: u32,
}

impl Placement {
    pub fn chip_vector(&self, layer: usize) -> Vec<u32> {
        self.per_layer[layer].iter().map(|&(chip, _)| chip).collect()
    }
}

pub fn place(
    partitions: &[Partition],
    chips: u32,
    constraints: &CoreConstraints,
) -> Result<Placement> {
    let total: u64 = partitions.iter().map(|p| p.n_cores() as u64).sum();
    let available = chips as u64 * constraints.cores_per_chip;
    if total > available {
        return Err(Error::Capacity {
            needed: total,
            available,
        });
    }
    let mut per_layer = Vec::with_capacity(partitions.len());
    let mut next = 0u64;
    for part in partitions {
        let mut cores = Vec::with_capacity(part.n_cores() as usize);
        for _ in 0..part.n_cores() {
            let chip = (next / constraints.cores_per_chip) as u32;
            let slot = (next % constraints.cores_per_chip) as u32;
            cores.push((chip, slot));
            next += 1;
        }
        per_layer.push(cores);
    }
    let chips_used = next.div_ceil(constraints.cores_per_chip).max(1) as u32;
    Ok(Placement {
        per_layer,
        chips_used,
    })
}

// ---------------------------------------------------------------------------
// Compartments
// ---------------------------------------------------------------------------

/// Reserved `neuron` value for compartments that are not logical neurons.
pub const NO_NEURON: u32 = u32::MAX;
pub const NO_PAIR: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompartmentRecord {
    pub threshold: i64,
    pub v_decay: u16,
    pub i_decay: u16,
    pub bias: i64,
    pub reset: ResetMode,
    /// Global physical neuron id, or `NO_NEURON` for reset partners.
    pub neuron: u32,
    /// Local index of the paired compartment, or `NO_PAIR`.
    pub pair: u32,
}

/// Expand a soft-reset core: each logical neuron (soma) gets a paired reset
/// compartment that fires back the negated threshold through a recurrent
/// link. Somas keep indices `0..n`; partners occupy `n..2n`. Hard-reset input
/// is returned unchanged. Returned links are `(soma, reset, weight)`.
pub fn expand_soft_reset(
    somas: Vec<CompartmentRecord>,
) -> (Vec<CompartmentRecord>, Vec<(u32, u32, i64)>) {
    if somas.iter().all(|c| c.reset != ResetMode::Soft) {
        return (somas, Vec::new());
    }
    let n = somas.len() as u32;
    let mut table = somas;
    let mut links = Vec::with_capacity(n as usize);
    for soma_idx in 0..n {
        let soma = &mut table[soma_idx as usize];
        let reset_idx = n + soma_idx;
        soma.pair = reset_idx;
        let weight = -soma.threshold;
        let partner = CompartmentRecord {
            threshold: soma.threshold,
            v_decay: soma.v_decay,
            i_decay: soma.i_decay,
            bias: 0,
            reset: ResetMode::Soft,
            neuron: NO_NEURON,
            pair: soma_idx,
        };
        links.push((soma_idx, reset_idx, weight));
        table.push(partner);
    }
    (table, links)
}

// ---------------------------------------------------------------------------
// Synapse encoding
// ---------------------------------------------------------------------------

/// One synapse group in its on-core encoded form. The payload decodes back to
/// the exact template including zero-valued weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedGroup {
    pub scheme: Scheme,
    pub slot_count: u32,
    pub cost_units: u64,
    pub payload: String,
}

type WeightedTemplate = Vec<Vec<(u32, i64)>>;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_i64(buf: &mut Vec<u8>, v: i64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.at + 4;
        if end > self.data.len() {
            return Err(Error::Integrity("truncated synapse payload".into()));
        }
        let v = u32::from_le_bytes(self.data[self.at..end].try_into().expect("4 bytes"));
        self.at = end;
        Ok(v)
    }
    fn i64(&mut self) -> Result<i64> {
        let end = self.at + 8;
        if end > self.data.len() {
            return Err(Error::Integrity("truncated synapse payload".into()));
        }
        let v = i64::from_le_bytes(self.data[self.at..end].try_into().expect("8 bytes"));
        self.at = end;
        Ok(v)
    }
}

/// Encode a weighted template under the configured scheme (`Auto` picks the
/// cheapest, ties resolving sparse < dense < run-length). The dense payload
/// carries a presence bitmap, uncounted by the cost model, so that gaps in a
/// covered range are not confused with zero-weight synapses.
pub fn encode_group(
    template: &WeightedTemplate,
    cost_model: &SynapseCostModel,
) -> EncodedGroup {
    let dsts: Vec<Vec<u32>> = template
        .iter()
        .map(|slot| slot.iter().map(|&(d, _)| d).collect())
        .collect();
    let (cost_units, scheme) = cost_model.template_cost(dsts.iter().map(|d| d.as_slice()));

    let mut buf = Vec::new();
    put_u32(&mut buf, template.len() as u32);
    match scheme {
        Scheme::Sparse => {
            for slot in template {
                put_u32(&mut buf, slot.len() as u32);
                for &(d, w) in slot {
                    put_u32(&mut buf, d);
                    put_i64(&mut buf, w);
                }
            }
        }
        Scheme::Dense => {
            for slot in template {
                if slot.is_empty() {
                    put_u32(&mut buf, 0);
                    put_u32(&mut buf, 0);
                    continue;
                }
                let base = slot[0].0;
                let span = slot[slot.len() - 1].0 - base + 1;
                put_u32(&mut buf, base);
                put_u32(&mut buf, span);
                let mut weights = vec![0i64; span as usize];
                let mut present = vec![0u8; span.div_ceil(8) as usize];
                for &(d, w) in slot {
                    let off = (d - base) as usize;
                    weights[off] = w;
                    present[off / 8] |= 1 << (off % 8);
                }
                for w in weights {
                    put_i64(&mut buf, w);
                }
                buf.extend_from_slice(&present);
            }
        }
        Scheme::RunLength => {
            for slot in template {
                let mut runs: Vec<(u32, Vec<i64>)> = Vec::new();
                for &(d, w) in slot {
                    match runs.last_mut() {
                        Some((start, ws)) if *start + ws.len() as u32 == d => ws.push(w),
                        _ => runs.push((d, vec![w])),
                    }
                }
                put_u32(&mut buf, runs.len() as u32);
                for (start, ws) in runs {
                    put_u32(&mut buf, start);
                    put_u32(&mut buf, ws.len() as u32);
                    for w in ws {
                        put_i64(&mut buf, w);
                    }
                }
            }
        }
    }
    EncodedGroup {
        scheme,
        slot_count: template.len() as u32,
        cost_units,
        payload: B64.encode(buf),
    }
}

pub fn decode_group(group: &EncodedGroup) -> Result<WeightedTemplate> {
    let bytes = B64
        .decode(&group.payload)
        .map_err(|e| Error::Integrity(format!("bad synapse payload base64: {e}")))?;
    let mut r = Reader {
        data: &bytes,
        at: 0,
    };
    let slots = r.u32()?;
    if slots != group.slot_count {
        return Err(Error::Integrity(format!(
            "payload slot count {slots} != header {}",
            group.slot_count
        )));
    }
    let mut template = Vec::with_capacity(slots as usize);
    for _ in 0..slots {
        let mut slot = Vec::new();
        match group.scheme {
            Scheme::Sparse => {
                let n = r.u32()?;
                for _ in 0..n {
                    let d = r.u32()?;
                    let w = r.i64()?;
                    slot.push((d, w));
                }
            }
            Scheme::Dense => {
                let base = r.u32()?;
                let span = r.u32()?;
                let mut weights = Vec::with_capacity(span as usize);
                for _ in 0..span {
                    weights.push(r.i64()?);
                }
                let mut present = vec![0u8; span.div_ceil(8) as usize];
                for b in present.iter_mut() {
                    let end = r.at + 1;
                    if end > r.data.len() {
                        return Err(Error::Integrity("truncated presence bitmap".into()));
                    }
                    *b = r.data[r.at];
                    r.at = end;
                }
                for (off, w) in weights.into_iter().enumerate() {
                    if present[off / 8] & (1 << (off % 8)) != 0 {
                        slot.push((base + off as u32, w));
                    }
                }
            }
            Scheme::RunLength => {
                let runs = r.u32()?;
                for _ in 0..runs {
                    let start = r.u32()?;
                    let len = r.u32()?;
                    for k in 0..len {
                        let w = r.i64()?;
                        slot.push((start + k, w));
                    }
                }
            }
        }
        template.push(slot);
    }
    Ok(template)
}

// ---------------------------------------------------------------------------
// Deployment image
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompartmentBlock {
    pub count: u32,
    pub threshold: String,
    pub v_decay: String,
    pub i_decay: String,
    pub bias: String,
    pub reset: String,
    pub neuron: String,
    pub pair: String,
}

impl CompartmentBlock {
    pub fn encode(records: &[CompartmentRecord]) -> Self {
        fn pack<T, F: Fn(&CompartmentRecord) -> T, const N: usize>(
            records: &[CompartmentRecord],
            f: F,
            to_bytes: fn(T) -> [u8; N],
        ) -> String {
            let mut buf = Vec::with_capacity(records.len() * N);
            for r in records {
                buf.extend_from_slice(&to_bytes(f(r)));
            }
            B64.encode(buf)
        }
        CompartmentBlock {
            count: records.len() as u32,
            threshold: pack(records, |r| r.threshold, i64::to_le_bytes),
            v_decay: pack(records, |r| r.v_decay, u16::to_le_bytes),
            i_decay: pack(records, |r| r.i_decay, u16::to_le_bytes),
            bias: pack(records, |r| r.bias, i64::to_le_bytes),
            reset: pack(
                records,
                |r| match r.reset {
                    ResetMode::Hard => 0u8,
                    ResetMode::Soft => 1u8,
                },
                u8::to_le_bytes,
            ),
            neuron: pack(records, |r| r.neuron, u32::to_le_bytes),
            pair: pack(records, |r| r.pair, u32::to_le_bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<CompartmentRecord>> {
        fn unpack<const N: usize>(s: &str, count: usize, field: &str) -> Result<Vec<[u8; N]>> {
            let bytes = B64
                .decode(s)
                .map_err(|e| Error::Integrity(format!("bad {field} base64: {e}")))?;
            if bytes.len() != count * N {
                return Err(Error::Integrity(format!(
                    "{field} block is {} bytes, expected {}",
                    bytes.len(),
                    count * N
                )));
            }
            Ok(bytes
                .chunks_exact(N)
                .map(|c| c.try_into().expect("chunk size"))
                .collect())
        }
        let n = self.count as usize;
        let thresholds = unpack::<8>(&self.threshold, n, "threshold")?;
        let v_decays = unpack::<2>(&self.v_decay, n, "v_decay")?;
        let i_decays = unpack::<2>(&self.i_decay, n, "i_decay")?;
        let biases = unpack::<8>(&self.bias, n, "bias")?;
        let resets = unpack::<1>(&self.reset, n, "reset")?;
        let neurons = unpack::<4>(&self.neuron, n, "neuron")?;
        let pairs = unpack::<4>(&self.pair, n, "pair")?;
        (0..n)
            .map(|i| {
                let reset = match resets[i][0] {
                    0 => ResetMode::Hard,
                    1 => ResetMode::Soft,
                    other => {
                        return Err(Error::Integrity(format!("bad reset mode byte {other}")))
                    }
                };
                Ok(CompartmentRecord {
                    threshold: i64::from_le_bytes(thresholds[i]),
                    v_decay: u16::from_le_bytes(v_decays[i]),
                    i_decay: u16::from_le_bytes(i_decays[i]),
                    bias: i64::from_le_bytes(biases[i]),
                    reset,
                    neuron: u32::from_le_bytes(neurons[i]),
                    pair: u32::from_le_bytes(pairs[i]),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputAxon {
    /// Spikes arriving from another core, fanned out through a stored group.
    Connection { group: u32, base: u32, slots: u32 },
    /// Frame injection slot for one input-layer neuron.
    Injection { compartment: u32 },
    /// Soft-reset recurrent link from a soma to its reset partner.
    Recurrent { soma: u32, reset: u32, weight: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutputTarget {
    Connection {
        dst_chip: u32,
        dst_core: u32,
        dst_axon: u32,
    },
    /// Egress of one output-layer neuron to the readout interface.
    Readout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputAxon {
    pub member_start: u32,
    pub member_len: u32,
    /// Axon-slot charge: 2 when the destination is on another chip.
    pub charge: u8,
    pub target: OutputTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreImage {
    pub layer: u32,
    pub layer_id: String,
    pub compartments: CompartmentBlock,
    pub groups: Vec<EncodedGroup>,
    pub input_axons: Vec<InputAxon>,
    pub output_axons: Vec<OutputAxon>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipImage {
    pub cores: Vec<CoreImage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentImage {
    pub format: String,
    pub name: String,
    pub timesteps: u32,
    pub chips: Vec<ChipImage>,
}

impl DeploymentImage {
    pub fn core(&self, chip: u32, core: u32) -> Option<&CoreImage> {
        self.chips.get(chip as usize)?.cores.get(core as usize)
    }

    pub fn n_cores(&self) -> u64 {
        self.chips.iter().map(|c| c.cores.len() as u64).sum()
    }

    pub fn iter_cores(&self) -> impl Iterator<Item = (u32, u32, &CoreImage)> {
        self.chips.iter().enumerate().flat_map(|(ci, chip)| {
            chip.cores
                .iter()
                .enumerate()
                .map(move |(si, core)| (ci as u32, si as u32, core))
        })
    }
}

// ---------------------------------------------------------------------------
// Image construction
// ---------------------------------------------------------------------------

/// Compile a quantized network with fixed partitions into a deployment
/// image: place cores on chips, expand soft-reset compartments, resolve and
/// encode synapse groups, and wire the axon tables. Off-chip axon doubling is
/// recomputed after placement and the result must still satisfy the hard
/// constraints.
pub fn map_network(
    qnet: &QuantizedNetwork,
    partitions: &[Partition],
    chips: u32,
    cost_model: &SynapseCostModel,
    sharing: Sharing,
    constraints: &CoreConstraints,
) -> Result<DeploymentImage> {
    let phys = qnet.net.physical_layers();
    if partitions.len() != phys.len() {
        return Err(Error::Map(format!(
            "{} partitions for {} physical layers",
            partitions.len(),
            phys.len()
        )));
    }
    let placement = place(partitions, chips, constraints)?;
    let offsets = qnet.net.layer_offsets();

    // Core skeletons with compartment tables.
    let mut cores: Vec<Vec<CoreImage>> = Vec::with_capacity(phys.len());
    let mut soma_counts: Vec<Vec<u32>> = Vec::with_capacity(phys.len());
    for (pos, &layer_idx) in phys.iter().enumerate() {
        let layer = &qnet.net.layers[layer_idx];
        let cfg = layer.neuron_config();
        let part = &partitions[pos];
        let mut layer_cores = Vec::with_capacity(part.n_cores() as usize);
        let mut counts = Vec::with_capacity(part.n_cores() as usize);
        for core in 0..part.n_cores() {
            let n = part.neurons_in_core(core);
            counts.push(n);
            let somas: Vec<CompartmentRecord> = (0..n)
                .map(|local| CompartmentRecord {
                    threshold: cfg.threshold,
                    v_decay: cfg.v_decay as u16,
                    i_decay: cfg.i_decay as u16,
                    bias: qnet.biases[layer_idx],
                    reset: cfg.reset,
                    neuron: offsets[pos] as u32 + part.local_to_global(core, local),
                    pair: NO_PAIR,
                })
                .collect();
            let (table, links) = expand_soft_reset(somas);
            let mut input_axons: Vec<InputAxon> = links
                .into_iter()
                .map(|(soma, reset, weight)| InputAxon::Recurrent { soma, reset, weight })
                .collect();
            if pos == 0 {
                input_axons.extend((0..n).map(|c| InputAxon::Injection { compartment: c }));
            }
            layer_cores.push(CoreImage {
                layer: pos as u32,
                layer_id: layer.id.clone(),
                compartments: CompartmentBlock::encode(&table),
                groups: Vec::new(),
                input_axons,
                output_axons: Vec::new(),
            });
        }
        cores.push(layer_cores);
        soma_counts.push(counts);
    }

    // Connection wiring per layer pair.
    for pos in 0..phys.len().saturating_sub(1) {
        let pre = &qnet.net.layers[phys[pos]];
        let post = &qnet.net.layers[phys[pos + 1]];
        let kernel = qnet.kernels[phys[pos + 1]].as_ref().ok_or_else(|| {
            Error::Map(format!("layer {} has no resolved weights", post.id))
        })?;
        let pair = unroll(pre, post)?;
        let (groups, axons) = build_groups(&pair, &partitions[pos], &partitions[pos + 1], sharing)?;
        wire_pair(
            &mut cores,
            pos,
            &placement,
            &groups,
            &axons,
            kernel,
            cost_model,
        );
    }

    // Output-layer egress: one on-chip readout axon per neuron.
    let last = phys.len() - 1;
    for (core, n) in soma_counts[last].iter().enumerate() {
        let out = &mut cores[last][core].output_axons;
        out.extend((0..*n).map(|local| OutputAxon {
            member_start: local,
            member_len: 1,
            charge: 1,
            target: OutputTarget::Readout,
        }));
    }

    // Assemble chips.
    let mut chips_out: Vec<ChipImage> = (0..placement.chips_used)
        .map(|_| ChipImage { cores: Vec::new() })
        .collect();
    for (pos, layer_cores) in cores.into_iter().enumerate() {
        for (core_idx, core) in layer_cores.into_iter().enumerate() {
            let (chip, slot) = placement.per_layer[pos][core_idx];
            debug_assert_eq!(chips_out[chip as usize].cores.len(), slot as usize);
            chips_out[chip as usize].cores.push(core);
        }
    }
    let image = DeploymentImage {
        format: IMAGE_FORMAT.to_string(),
        name: qnet.net.name.clone(),
        timesteps: qnet.net.timesteps,
        chips: chips_out,
    };

    // Off-chip doubling is now final; the image must still fit the cores.
    for tally in recount(&image)? {
        if let Some(v) = check_hard(&tally, constraints) {
            return Err(Error::Map(format!(
                "core {} exceeds {} after placement: {} > {}",
                v.core, v.kind, v.value, v.limit
            )));
        }
    }
    integrity_check(&image)?;
    Ok(image)
}

fn wire_pair(
    cores: &mut [Vec<CoreImage>],
    pos: usize,
    placement: &Placement,
    groups: &[SynapseGroup],
    axons: &[PopulationAxon],
    kernel: &[i32],
    cost_model: &SynapseCostModel,
) {
    // Group tables are per destination core; a group referenced from several
    // cores is stored once on each.
    let mut local_group: HashMap<(u32, usize), u32> = HashMap::new();
    for axon in axons {
        let dst_core = axon.dst_core;
        let group_idx = match local_group.get(&(dst_core, axon.group)) {
            Some(&g) => g,
            None => {
                let template: WeightedTemplate = groups[axon.group]
                    .template
                    .iter()
                    .map(|slot| {
                        slot.iter()
                            .map(|s| (s.dst_local, kernel[s.weight_id as usize] as i64))
                            .collect()
                    })
                    .collect();
                let encoded = encode_group(&template, cost_model);
                let table = &mut cores[pos + 1][dst_core as usize].groups;
                table.push(encoded);
                let g = (table.len() - 1) as u32;
                local_group.insert((dst_core, axon.group), g);
                g
            }
        };
        let dst_axon = {
            let dst = &mut cores[pos + 1][dst_core as usize];
            dst.input_axons.push(InputAxon::Connection {
                group: group_idx,
                base: axon.dst_base,
                slots: axon.member_len,
            });
            (dst.input_axons.len() - 1) as u32
        };
        let (src_chip, _) = placement.per_layer[pos][axon.src_core as usize];
        let (dst_chip, dst_slot) = placement.per_layer[pos + 1][dst_core as usize];
        let charge = if src_chip == dst_chip { 1 } else { 2 };
        cores[pos][axon.src_core as usize].output_axons.push(OutputAxon {
            member_start: axon.member_start,
            member_len: axon.member_len,
            charge,
            target: OutputTarget::Connection {
                dst_chip,
                dst_core: dst_slot,
                dst_axon,
            },
        });
    }
}

// ---------------------------------------------------------------------------
// Integrity, serialization, recounting
// ---------------------------------------------------------------------------

pub fn integrity_check(image: &DeploymentImage) -> Result<()> {
    if image.format != IMAGE_FORMAT {
        return Err(Error::Version {
            found: image.format.clone(),
            expected: IMAGE_FORMAT.to_string(),
        });
    }
    for (chip_idx, chip) in image.chips.iter().enumerate() {
        for (core_idx, core) in chip.cores.iter().enumerate() {
            let at = |what: &str| format!("chip {chip_idx} core {core_idx}: {what}");
            let n = core.compartments.count;
            let records = core.compartments.decode()?;
            let somas = records.iter().filter(|r| r.neuron != NO_NEURON).count() as u32;
            let mut group_reach: Vec<u32> = Vec::with_capacity(core.groups.len());
            for g in &core.groups {
                let template = decode_group(g)?;
                if template.len() as u32 != g.slot_count {
                    return Err(Error::Integrity(at("group slot count mismatch")));
                }
                let reach = template
                    .iter()
                    .flat_map(|s| s.iter().map(|&(d, _)| d + 1))
                    .max()
                    .unwrap_or(0);
                group_reach.push(reach);
            }
            for axon in &core.input_axons {
                match axon {
                    InputAxon::Connection { group, base, slots } => {
                        let reach = *group_reach
                            .get(*group as usize)
                            .ok_or_else(|| Error::Integrity(at("dangling group reference")))?;
                        if *slots == 0 {
                            return Err(Error::Integrity(at("empty input axon")));
                        }
                        if reach > 0 && base + reach > n {
                            return Err(Error::Integrity(at("synapse destination out of range")));
                        }
                    }
                    InputAxon::Injection { compartment } => {
                        if *compartment >= n {
                            return Err(Error::Integrity(at("injection target out of range")));
                        }
                    }
                    InputAxon::Recurrent { soma, reset, .. } => {
                        if *soma >= n || *reset >= n {
                            return Err(Error::Integrity(at("recurrent link out of range")));
                        }
                    }
                }
            }
            for axon in &core.output_axons {
                if axon.member_start + axon.member_len > somas {
                    return Err(Error::Integrity(at("output axon members out of range")));
                }
                if let OutputTarget::Connection {
                    dst_chip,
                    dst_core,
                    dst_axon,
                } = axon.target
                {
                    let dst = image
                        .core(dst_chip, dst_core)
                        .ok_or_else(|| Error::Integrity(at("dangling axon target core")))?;
                    match dst.input_axons.get(dst_axon as usize) {
                        Some(InputAxon::Connection { slots, .. }) => {
                            if *slots != axon.member_len {
                                return Err(Error::Integrity(at(
                                    "axon population size mismatch",
                                )));
                            }
                        }
                        _ => return Err(Error::Integrity(at("dangling axon target slot"))),
                    }
                }
            }
        }
    }
    Ok(())
}

/// Serialize to the canonical byte form (checked for integrity first).
pub fn emit(image: &DeploymentImage) -> Result<String> {
    integrity_check(image)?;
    let mut s = serde_json::to_string_pretty(image).expect("image serialization cannot fail");
    s.push('\n');
    Ok(s)
}

pub fn emit_to(image: &DeploymentImage, path: &Path) -> Result<()> {
    std::fs::write(path, emit(image)?)?;
    Ok(())
}

pub fn load_image_str(text: &str) -> Result<DeploymentImage> {
    let image: DeploymentImage =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if image.format != IMAGE_FORMAT {
        return Err(Error::Version {
            found: image.format,
            expected: IMAGE_FORMAT.to_string(),
        });
    }
    integrity_check(&image)?;
    Ok(image)
}

pub fn load_image(path: &Path) -> Result<DeploymentImage> {
    load_image_str(&std::fs::read_to_string(path)?)
}

/// Recompute per-layer resource tallies from an image. Matches the
/// partitioner's accounting exactly: compartments, arriving axons (plus one
/// injection slot per input neuron and one recurrent slot per soft neuron),
/// charged output axons, and synapse units including the per-soft-neuron
/// recurrent unit.
pub fn recount(image: &DeploymentImage) -> Result<Vec<ResourceTally>> {
    let mut layers: Vec<Vec<CoreCounts>> = Vec::new();
    for (_, _, core) in image.iter_cores() {
        let pos = core.layer as usize;
        if layers.len() <= pos {
            layers.resize(pos + 1, Vec::new());
        }
        let recurrent = core
            .input_axons
            .iter()
            .filter(|a| matches!(a, InputAxon::Recurrent { .. }))
            .count() as u64;
        let counts = CoreCounts {
            neurons: core.compartments.count as u64,
            input_axons: core.input_axons.len() as u64,
            output_axons: core.output_axons.iter().map(|a| a.charge as u64).sum(),
            synapse_units: core.groups.iter().map(|g| g.cost_units).sum::<u64>() + recurrent,
            offchip_axons: core.output_axons.iter().filter(|a| a.charge == 2).count() as u64,
        };
        layers[pos].push(counts);
    }
    Ok(layers
        .into_iter()
        .enumerate()
        .map(|(layer, per_core)| ResourceTally { layer, per_core })
        .collect())
}
