//! Layer-to-layer connectivity: unrolling into column-major sparse form,
//! canonicalization of repeated synapse blocks, and axon/synapse accounting
//! for a given pair of layer partitions.
//!
//! Connectivity is stored column-major: synapse lookup is triggered by the
//! arrival of a source spike, so each source neuron owns the list of
//! `(destination, weight)` entries it fans out to. Repeated column blocks are
//! canonicalized into shared synapse groups, and contiguous runs of source
//! neurons that target a single destination core share one population axon.
//! A source neuron whose fan-out spans more than one destination core gets a
//! discrete axon per destination core and never joins a population.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, Shape, same_padding};
use crate::partition::Partition;

/// Whether axon/synapse sharing is exploited or every connection gets
/// discrete resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sharing {
    On,
    Off,
}

/// One synapse inside a group template. `dst_local` is relative to the
/// group's base destination; the absolute compartment index is resolved by
/// the axon that references the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Synapse {
    pub dst_local: u32,
    pub weight_id: u32,
}

/// A canonical block of synapses shared by one or more population axons.
/// `template[s]` lists the fan-out of the s-th source slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynapseGroup {
    pub slot_count: u32,
    pub template: Vec<Vec<Synapse>>,
    pub canonical_hash: u128,
}

impl SynapseGroup {
    pub fn entry_count(&self) -> u64 {
        self.template.iter().map(|s| s.len() as u64).sum()
    }
}

/// A routing slot carrying spikes from a contiguous run of source neurons on
/// one core to a synapse group on one destination core. `shared == false`
/// marks a discrete axon serving a single source neuron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationAxon {
    pub src_core: u32,
    pub dst_core: u32,
    pub group: usize,
    pub dst_base: u32,
    pub member_start: u32,
    pub member_len: u32,
    pub shared: bool,
}

/// Fully unrolled connectivity between two layers. `column_index[p]` lists
/// `(post_global, weight_id)` for source neuron `p`, ascending in
/// `post_global`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionPair {
    pub pre_shape: Shape,
    pub post_shape: Shape,
    pub column_index: Vec<Vec<(u32, u32)>>,
}

impl ConnectionPair {
    pub fn total_entries(&self) -> u64 {
        self.column_index.iter().map(|c| c.len() as u64).sum()
    }
}

// ---------------------------------------------------------------------------
// Column generation
// ---------------------------------------------------------------------------

enum Pattern {
    Dense { fan_out: u32 },
    Conv { c_in: u32, c_out: u32 },
    Depthwise { c: u32 },
}

/// Column generator for one layer pair. Generates each source neuron's
/// fan-out on demand so that large pairs never have to be materialized.
pub struct PairGeometry {
    pre_shape: Shape,
    post_shape: Shape,
    kernel: (u32, u32),
    strides: (u32, u32),
    pad: (i64, i64),
    pattern: Pattern,
}

fn div_floor(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

fn div_ceil(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

impl PairGeometry {
    pub fn new(pre: &LayerSpec, post: &LayerSpec) -> Result<Self> {
        let pre_shape = pre.output_shape;
        let post_shape = post.output_shape;
        let pattern = match post.kind {
            LayerKind::Dense => Pattern::Dense {
                fan_out: post_shape.c,
            },
            LayerKind::Conv2D => Pattern::Conv {
                c_in: pre_shape.c,
                c_out: post_shape.c,
            },
            LayerKind::DepthwiseConv2D | LayerKind::AveragePool2D => {
                if pre_shape.c != post_shape.c {
                    return Err(Error::Shape(format!(
                        "depthwise channel mismatch: {} vs {}",
                        pre_shape.c, post_shape.c
                    )));
                }
                Pattern::Depthwise { c: pre_shape.c }
            }
            LayerKind::Flatten | LayerKind::Input => {
                return Err(Error::UnsupportedKind(format!("{:?}", post.kind)))
            }
        };
        let (kernel, strides, pad) = if post.kind.is_windowed() {
            let k = post.kernel_dims();
            let s = post.stride_dims();
            let pad = match post.padding_mode() {
                crate::model::Padding::Valid => (0i64, 0i64),
                crate::model::Padding::Same => {
                    let (py, _) = same_padding(pre_shape.h, k.0, s.0);
                    let (px, _) = same_padding(pre_shape.w, k.1, s.1);
                    (py as i64, px as i64)
                }
            };
            (k, s, pad)
        } else {
            ((0, 0), (1, 1), (0, 0))
        };
        Ok(PairGeometry {
            pre_shape,
            post_shape,
            kernel,
            strides,
            pad,
            pattern,
        })
    }

    pub fn n_pre(&self) -> u32 {
        self.pre_shape.volume() as u32
    }

    /// Output positions along one axis reached from input position `i`.
    fn out_range(&self, i: u32, axis: usize) -> (i64, i64) {
        let (k, s, pad, out) = match axis {
            0 => (
                self.kernel.0 as i64,
                self.strides.0 as i64,
                self.pad.0,
                self.post_shape.h as i64,
            ),
            _ => (
                self.kernel.1 as i64,
                self.strides.1 as i64,
                self.pad.1,
                self.post_shape.w as i64,
            ),
        };
        let i = i as i64;
        let lo = div_ceil(i + pad - k + 1, s).max(0);
        let hi = div_floor(i + pad, s).min(out - 1);
        (lo, hi)
    }

    /// Append the column of source neuron `pre_idx` to `out`, ascending in
    /// destination index.
    pub fn column(&self, pre_idx: u32, out: &mut Vec<(u32, u32)>) {
        match &self.pattern {
            Pattern::Dense { fan_out } => {
                for o in 0..*fan_out {
                    out.push((o, pre_idx * fan_out + o));
                }
            }
            Pattern::Conv { c_in, c_out } => {
                let (iy, ix, ic) = self.pre_shape.coords(pre_idx);
                let (kh_w, _) = (self.kernel.0, self.kernel.1);
                let _ = kh_w;
                let (y_lo, y_hi) = self.out_range(iy, 0);
                let (x_lo, x_hi) = self.out_range(ix, 1);
                for oy in y_lo..=y_hi {
                    let ky = iy as i64 + self.pad.0 - oy * self.strides.0 as i64;
                    for ox in x_lo..=x_hi {
                        let kx = ix as i64 + self.pad.1 - ox * self.strides.1 as i64;
                        let kpos = (ky as u32 * self.kernel.1 + kx as u32) * c_in + ic;
                        for oc in 0..*c_out {
                            let dst = self.post_shape.index(oy as u32, ox as u32, oc);
                            out.push((dst, kpos * c_out + oc));
                        }
                    }
                }
            }
            Pattern::Depthwise { c } => {
                let (iy, ix, ic) = self.pre_shape.coords(pre_idx);
                let (y_lo, y_hi) = self.out_range(iy, 0);
                let (x_lo, x_hi) = self.out_range(ix, 1);
                for oy in y_lo..=y_hi {
                    let ky = iy as i64 + self.pad.0 - oy * self.strides.0 as i64;
                    for ox in x_lo..=x_hi {
                        let kx = ix as i64 + self.pad.1 - ox * self.strides.1 as i64;
                        let dst = self.post_shape.index(oy as u32, ox as u32, ic);
                        out.push((dst, (ky as u32 * self.kernel.1 + kx as u32) * c + ic));
                    }
                }
            }
        }
    }

    pub fn total_entries(&self) -> u64 {
        let mut total = 0u64;
        let mut buf = Vec::new();
        for p in 0..self.n_pre() {
            buf.clear();
            self.column(p, &mut buf);
            total += buf.len() as u64;
        }
        total
    }
}

/// Unroll the full connectivity between two layers into column-major form.
pub fn unroll(pre: &LayerSpec, post: &LayerSpec) -> Result<ConnectionPair> {
    let geom = PairGeometry::new(pre, post)?;
    let mut columns = Vec::with_capacity(geom.n_pre() as usize);
    let mut buf = Vec::new();
    for p in 0..geom.n_pre() {
        buf.clear();
        geom.column(p, &mut buf);
        columns.push(buf.clone());
    }
    Ok(ConnectionPair {
        pre_shape: geom.pre_shape,
        post_shape: geom.post_shape,
        column_index: columns,
    })
}

// ---------------------------------------------------------------------------
// Synapse encoding cost model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sparse,
    Dense,
    RunLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionChoice {
    Auto,
    Sparse,
    Dense,
    RunLength,
}

/// Synapse memory accounting, in abstract cost units per core. Sparse entries
/// pay for index plus weight; dense pays one unit per covered destination
/// slot; run-length pays one unit per entry plus one per run header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapseCostModel {
    pub choice: CompressionChoice,
    pub sparse_per_entry: u64,
    pub dense_per_slot: u64,
    pub rle_per_entry: u64,
    pub rle_per_run: u64,
}

impl Default for SynapseCostModel {
    fn default() -> Self {
        SynapseCostModel {
            choice: CompressionChoice::Auto,
            sparse_per_entry: 2,
            dense_per_slot: 1,
            rle_per_entry: 1,
            rle_per_run: 1,
        }
    }
}

impl SynapseCostModel {
    pub fn with_choice(choice: CompressionChoice) -> Self {
        SynapseCostModel {
            choice,
            ..Default::default()
        }
    }

    /// Cost of one slot's destination list under every scheme:
    /// `(sparse, dense, runlength)`. Destinations must be ascending.
    pub fn slot_costs(&self, dsts: &[u32]) -> (u64, u64, u64) {
        if dsts.is_empty() {
            return (0, 0, 0);
        }
        let n = dsts.len() as u64;
        let covered = (dsts[dsts.len() - 1] - dsts[0] + 1) as u64;
        let mut runs = 1u64;
        for w in dsts.windows(2) {
            if w[1] != w[0] + 1 {
                runs += 1;
            }
        }
        (
            n * self.sparse_per_entry,
            covered * self.dense_per_slot,
            n * self.rle_per_entry + runs * self.rle_per_run,
        )
    }

    /// Total cost of a template and the scheme that realizes it. Ties under
    /// `Auto` resolve sparse, then dense, then run-length.
    pub fn template_cost<'a, I>(&self, slots: I) -> (u64, Scheme)
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let (mut sp, mut de, mut rl) = (0u64, 0u64, 0u64);
        for dsts in slots {
            let (a, b, c) = self.slot_costs(dsts);
            sp += a;
            de += b;
            rl += c;
        }
        match self.choice {
            CompressionChoice::Sparse => (sp, Scheme::Sparse),
            CompressionChoice::Dense => (de, Scheme::Dense),
            CompressionChoice::RunLength => (rl, Scheme::RunLength),
            CompressionChoice::Auto => {
                if sp <= de && sp <= rl {
                    (sp, Scheme::Sparse)
                } else if de <= rl {
                    (de, Scheme::Dense)
                } else {
                    (rl, Scheme::RunLength)
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Population walk
// ---------------------------------------------------------------------------

// 128-bit FNV-1a over 64-bit chunks. Canonical template digests only need
// to be deterministic and collision-free for structured, non-adversarial
// data; this is an order of magnitude faster than a cryptographic digest on
// the partition-search hot path.
const FNV128_OFFSET: u128 = 0x6c62272e07bb014262b821756295c58d;
const FNV128_PRIME: u128 = 0x0000000001000000000000000000013B;

#[derive(Clone, Copy)]
struct TemplateHasher(u128);

impl TemplateHasher {
    fn new() -> Self {
        TemplateHasher(FNV128_OFFSET)
    }
    fn write(&mut self, chunk: u64) {
        self.0 = (self.0 ^ chunk as u128).wrapping_mul(FNV128_PRIME);
    }
    fn finish(self) -> u128 {
        self.0
    }
}

fn hash_template(slots: &[&[(u32, u32)]], base: u32) -> u128 {
    let mut h = TemplateHasher::new();
    h.write(slots.len() as u64);
    for slot in slots {
        h.write(slot.len() as u64);
        for &(dst, wid) in *slot {
            h.write(((dst - base) as u64) << 32 | wid as u64);
        }
    }
    h.finish()
}

fn template_base(slots: &[&[(u32, u32)]]) -> u32 {
    slots
        .iter()
        .filter_map(|s| s.first())
        .map(|&(d, _)| d)
        .min()
        .unwrap_or(0)
}

/// Receives every population/discrete axon produced by the walk. Slot entries
/// carry absolute destination-core-local indices; `base` is their minimum.
trait PopulationSink {
    fn emit(
        &mut self,
        src_core: u32,
        dst_core: u32,
        member_start: u32,
        slots: &[&[(u32, u32)]],
        base: u32,
        shared: bool,
    );
}

trait ColumnSource {
    fn column(&self, pre: u32, out: &mut Vec<(u32, u32)>);
}

impl ColumnSource for PairGeometry {
    fn column(&self, pre: u32, out: &mut Vec<(u32, u32)>) {
        PairGeometry::column(self, pre, out)
    }
}

impl ColumnSource for ConnectionPair {
    fn column(&self, pre: u32, out: &mut Vec<(u32, u32)>) {
        out.extend_from_slice(&self.column_index[pre as usize]);
    }
}

struct PendingRun {
    dst_core: u32,
    start_local: u32,
    slots: Vec<Vec<(u32, u32)>>,
}

fn walk_populations<S: ColumnSource, K: PopulationSink>(
    source: &S,
    pre_part: &Partition,
    post_part: &Partition,
    sharing: Sharing,
    sink: &mut K,
) -> Result<()> {
    // Per-destination-neuron (core, local) lookup; columns are visited once
    // per source neuron, so this turns the inner loop into an array read.
    let n_post = post_part.shape().volume() as u32;
    let post_lookup: Vec<(u32, u32)> = (0..n_post).map(|g| post_part.core_and_local(g)).collect();

    let mut column = Vec::new();
    let mut local_entries: Vec<(u32, u32, u32)> = Vec::new(); // (dst_core, dst_local, wid)
    let mut pieces: Vec<(u32, Vec<(u32, u32)>)> = Vec::new();

    for src_core in 0..pre_part.n_cores() {
        let mut pending: Option<PendingRun> = None;
        let n_local = pre_part.neurons_in_core(src_core);
        for local in 0..n_local {
            let global = pre_part.local_to_global(src_core, local);
            column.clear();
            source.column(global, &mut column);

            local_entries.clear();
            let mut first_core = u32::MAX;
            let mut single_core = true;
            for &(post_global, wid) in &column {
                let (core, dst_local) = post_lookup[post_global as usize];
                if first_core == u32::MAX {
                    first_core = core;
                } else if core != first_core {
                    single_core = false;
                }
                local_entries.push((core, dst_local, wid));
            }

            if column.is_empty() {
                if let Some(run) = pending.take() {
                    flush_run(sink, src_core, run);
                }
                continue;
            }

            if single_core && sharing == Sharing::On {
                let dst_core = first_core;
                let slot: Vec<(u32, u32)> =
                    local_entries.iter().map(|&(_, d, w)| (d, w)).collect();
                match pending.as_mut() {
                    Some(run) if run.dst_core == dst_core => run.slots.push(slot),
                    _ => {
                        if let Some(run) = pending.take() {
                            flush_run(sink, src_core, run);
                        }
                        pending = Some(PendingRun {
                            dst_core,
                            start_local: local,
                            slots: vec![slot],
                        });
                    }
                }
                continue;
            }

            if let Some(run) = pending.take() {
                flush_run(sink, src_core, run);
            }
            if single_core {
                // Sharing off: one discrete axon, template passed by slice.
                let slot: Vec<(u32, u32)> =
                    local_entries.iter().map(|&(_, d, w)| (d, w)).collect();
                let slots = [slot.as_slice()];
                let base = template_base(&slots);
                sink.emit(src_core, first_core, local, &slots, base, false);
            } else {
                pieces.clear();
                for &(core, d, w) in &local_entries {
                    match pieces.iter_mut().find(|(c, _)| *c == core) {
                        Some((_, list)) => list.push((d, w)),
                        None => pieces.push((core, vec![(d, w)])),
                    }
                }
                pieces.sort_by_key(|(c, _)| *c);
                for (dst_core, list) in pieces.drain(..) {
                    let slots = [list.as_slice()];
                    let base = template_base(&slots);
                    sink.emit(src_core, dst_core, local, &slots, base, false);
                }
            }
        }
        if let Some(run) = pending.take() {
            flush_run(sink, src_core, run);
        }
    }
    Ok(())
}

fn flush_run<K: PopulationSink>(sink: &mut K, src_core: u32, run: PendingRun) {
    let slot_refs: Vec<&[(u32, u32)]> = run.slots.iter().map(|s| s.as_slice()).collect();
    let base = template_base(&slot_refs);
    let shared = run.slots.len() > 1;
    sink.emit(
        src_core,
        run.dst_core,
        run.start_local,
        &slot_refs,
        base,
        shared,
    );
}

fn check_partitions(
    pre_shape: Shape,
    post_shape: Shape,
    pre_part: &Partition,
    post_part: &Partition,
) -> Result<()> {
    if pre_part.shape() != pre_shape || post_part.shape() != post_shape {
        return Err(Error::Partition(format!(
            "partitions cover {:?}/{:?} but the layer pair is {:?}/{:?}",
            pre_part.shape(),
            post_part.shape(),
            pre_shape,
            post_shape
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// build_groups: materialized groups and axons
// ---------------------------------------------------------------------------

struct MaterializeSink {
    sharing: Sharing,
    groups: Vec<SynapseGroup>,
    axons: Vec<PopulationAxon>,
    dedup: HashMap<u128, usize>,
}

impl PopulationSink for MaterializeSink {
    fn emit(
        &mut self,
        src_core: u32,
        dst_core: u32,
        member_start: u32,
        slots: &[&[(u32, u32)]],
        base: u32,
        shared: bool,
    ) {
        let hash = hash_template(slots, base);
        let group = match self.sharing {
            Sharing::On => match self.dedup.get(&hash) {
                Some(&idx) => idx,
                None => {
                    let idx = self.push_group(slots, base, hash);
                    self.dedup.insert(hash, idx);
                    idx
                }
            },
            Sharing::Off => self.push_group(slots, base, hash),
        };
        self.axons.push(PopulationAxon {
            src_core,
            dst_core,
            group,
            dst_base: base,
            member_start,
            member_len: slots.len() as u32,
            shared,
        });
    }
}

impl MaterializeSink {
    fn push_group(&mut self, slots: &[&[(u32, u32)]], base: u32, hash: u128) -> usize {
        let template = slots
            .iter()
            .map(|slot| {
                slot.iter()
                    .map(|&(dst, wid)| Synapse {
                        dst_local: dst - base,
                        weight_id: wid,
                    })
                    .collect()
            })
            .collect::<Vec<Vec<Synapse>>>();
        self.groups.push(SynapseGroup {
            slot_count: template.len() as u32,
            template,
            canonical_hash: hash,
        });
        self.groups.len() - 1
    }
}

/// Build shared synapse groups and population axons for a partitioned layer
/// pair. With sharing off, every `(source neuron, destination core)` pair
/// gets one discrete axon backed by a private group. With sharing on,
/// multi-destination neurons get discrete axons, remaining neurons pack into
/// maximal contiguous populations per `(source core, destination core)`, and
/// canonically equal templates anywhere in the pair reference one group.
pub fn build_groups(
    pair: &ConnectionPair,
    pre_part: &Partition,
    post_part: &Partition,
    sharing: Sharing,
) -> Result<(Vec<SynapseGroup>, Vec<PopulationAxon>)> {
    check_partitions(pair.pre_shape, pair.post_shape, pre_part, post_part)?;
    let mut sink = MaterializeSink {
        sharing,
        groups: Vec::new(),
        axons: Vec::new(),
        dedup: HashMap::new(),
    };
    walk_populations(pair, pre_part, post_part, sharing, &mut sink)?;
    Ok((sink.groups, sink.axons))
}

// ---------------------------------------------------------------------------
// Tallying
// ---------------------------------------------------------------------------

/// Per-core resource counts for the two sides of one layer pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairCounts {
    /// Output-axon charge per source core (off-chip axons count twice).
    pub pre_output_axons: Vec<u64>,
    pub pre_offchip: Vec<u64>,
    pub post_input_axons: Vec<u64>,
    pub post_synapse_units: Vec<u64>,
}

impl PairCounts {
    fn new(pre_cores: u32, post_cores: u32) -> Self {
        PairCounts {
            pre_output_axons: vec![0; pre_cores as usize],
            pre_offchip: vec![0; pre_cores as usize],
            post_input_axons: vec![0; post_cores as usize],
            post_synapse_units: vec![0; post_cores as usize],
        }
    }
}

/// Chip residency of each core on the two sides, for off-chip charging.
/// `None` means everything lives on one chip.
pub type ChipMap<'a> = Option<(&'a [u32], &'a [u32])>;

struct CountingSink<'a> {
    counts: PairCounts,
    cost_model: &'a SynapseCostModel,
    sharing: Sharing,
    chips: ChipMap<'a>,
    seen: HashMap<(u32, u128), ()>,
    dst_buf: Vec<u32>,
}

impl CountingSink<'_> {
    fn axon_charge(&self, src_core: u32, dst_core: u32) -> (u64, u64) {
        match self.chips {
            Some((pre, post)) if pre[src_core as usize] != post[dst_core as usize] => (2, 1),
            _ => (1, 0),
        }
    }
}

impl PopulationSink for CountingSink<'_> {
    fn emit(
        &mut self,
        src_core: u32,
        dst_core: u32,
        _member_start: u32,
        slots: &[&[(u32, u32)]],
        base: u32,
        _shared: bool,
    ) {
        let (charge, off) = self.axon_charge(src_core, dst_core);
        self.counts.pre_output_axons[src_core as usize] += charge;
        self.counts.pre_offchip[src_core as usize] += off;
        self.counts.post_input_axons[dst_core as usize] += 1;

        let store = match self.sharing {
            Sharing::Off => true,
            Sharing::On => {
                let hash = hash_template(slots, base);
                self.seen.insert((dst_core, hash), ()).is_none()
            }
        };
        if store {
            let mut total = 0u64;
            for slot in slots {
                self.dst_buf.clear();
                self.dst_buf.extend(slot.iter().map(|&(d, _)| d));
                let (cost, _) = self.cost_model.template_cost([self.dst_buf.as_slice()]);
                total += cost;
            }
            self.counts.post_synapse_units[dst_core as usize] += total;
        }
    }
}

/// Streaming pair accounting straight from the layer geometry; equivalent to
/// `build_groups` + `tally` but never materializes templates.
pub fn pair_counts(
    pre: &LayerSpec,
    post: &LayerSpec,
    pre_part: &Partition,
    post_part: &Partition,
    sharing: Sharing,
    cost_model: &SynapseCostModel,
    chips: ChipMap,
) -> Result<PairCounts> {
    let geom = PairGeometry::new(pre, post)?;
    check_partitions(geom.pre_shape, geom.post_shape, pre_part, post_part)?;
    let mut sink = CountingSink {
        counts: PairCounts::new(pre_part.n_cores(), post_part.n_cores()),
        cost_model,
        sharing,
        chips,
        seen: HashMap::new(),
        dst_buf: Vec::new(),
    };
    walk_populations(&geom, pre_part, post_part, sharing, &mut sink)?;
    Ok(sink.counts)
}

/// Resource accounting over materialized groups and axons: per source core
/// output-axon charges (doubled off-chip), per destination core input axons
/// and synapse memory, and compartment counts on both sides (doubled for
/// soft-reset layers).
pub struct PairTally {
    pub pre_neurons: Vec<u64>,
    pub post_neurons: Vec<u64>,
    pub counts: PairCounts,
}

pub fn tally(
    pre_part: &Partition,
    post_part: &Partition,
    groups: &[SynapseGroup],
    axons: &[PopulationAxon],
    cost_model: &SynapseCostModel,
    chips: ChipMap,
) -> PairTally {
    let mut counts = PairCounts::new(pre_part.n_cores(), post_part.n_cores());
    let mut stored: HashMap<(u32, usize), ()> = HashMap::new();
    for axon in axons {
        let (charge, off) = match chips {
            Some((pre, post))
                if pre[axon.src_core as usize] != post[axon.dst_core as usize] =>
            {
                (2, 1)
            }
            _ => (1, 0),
        };
        counts.pre_output_axons[axon.src_core as usize] += charge;
        counts.pre_offchip[axon.src_core as usize] += off;
        counts.post_input_axons[axon.dst_core as usize] += 1;
        if stored.insert((axon.dst_core, axon.group), ()).is_none() {
            let group = &groups[axon.group];
            let mut total = 0;
            for slot in &group.template {
                let dsts: Vec<u32> = slot.iter().map(|s| s.dst_local).collect();
                let (cost, _) = cost_model.template_cost([dsts.as_slice()]);
                total += cost;
            }
            counts.post_synapse_units[axon.dst_core as usize] += total;
        }
    }
    let pre_neurons = (0..pre_part.n_cores())
        .map(|c| pre_part.compartments_in_core(c) as u64)
        .collect();
    let post_neurons = (0..post_part.n_cores())
        .map(|c| post_part.compartments_in_core(c) as u64)
        .collect();
    PairTally {
        pre_neurons,
        post_neurons,
        counts,
    }
}

// ---------------------------------------------------------------------------
// Canonicalization oracle: per-neuron column templates
// ---------------------------------------------------------------------------

/// Summary of the distinct canonical single-column templates of a layer pair,
/// ignoring any partitioning. This is the idealized full-sharing storage:
/// every distinct column pattern stored exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSummary {
    pub total_entries: u64,
    pub unique_templates: u64,
    pub unique_entries: u64,
}

pub fn column_summary(pre: &LayerSpec, post: &LayerSpec) -> Result<ColumnSummary> {
    let geom = PairGeometry::new(pre, post)?;
    let mut buf = Vec::new();
    let mut seen: HashMap<u128, ()> = HashMap::new();
    let mut summary = ColumnSummary {
        total_entries: 0,
        unique_templates: 0,
        unique_entries: 0,
    };
    for p in 0..geom.n_pre() {
        buf.clear();
        geom.column(p, &mut buf);
        if buf.is_empty() {
            continue;
        }
        summary.total_entries += buf.len() as u64;
        let base = buf[0].0;
        let slots = [buf.as_slice()];
        let hash = hash_template(&slots, base);
        if seen.insert(hash, ()).is_none() {
            summary.unique_templates += 1;
            summary.unique_entries += buf.len() as u64;
        }
    }
    Ok(summary)
}

/// Lower bound on the cores a network needs if every distinct column
/// template were stored exactly once at one unit per entry: per layer, the
/// larger of its compartment demand and its idealized synapse demand.
pub fn full_sharing_core_bound(
    net: &crate::model::NetworkSpec,
    constraints: &crate::partition::CoreConstraints,
) -> Result<u64> {
    let phys = net.physical_layers();
    let mut total = 0u64;
    for (pos, &idx) in phys.iter().enumerate() {
        let layer = &net.layers[idx];
        let logical = layer.output_shape.volume();
        let compartments = logical * layer.compartment_factor() as u64;
        let mut units = if layer.compartment_factor() == 2 {
            logical
        } else {
            0
        };
        if pos > 0 {
            let pre = &net.layers[phys[pos - 1]];
            units += column_summary(pre, layer)?.unique_entries;
        }
        let by_neurons = compartments.div_ceil(constraints.max_neurons_per_core);
        let by_synapses = units.div_ceil(constraints.synapse_budget_units);
        total += by_neurons.max(by_synapses).max(1);
    }
    Ok(total)
}
