//! Network intermediate representation: the feed-forward layer chain, shape
//! arithmetic, and manifest / weight-blob I/O.
//!
//! A model is described by a JSON manifest plus a flat little-endian `f32`
//! weight blob. Convolution kernels are stored row-major as
//! `(kh, kw, c_in, c_out)`, depthwise kernels as `(kh, kw, c)`, and dense
//! weights as `(fan_in, fan_out)`. Layers are flattened to 1-D in row-major
//! `(y, x, channel)` order everywhere in the pipeline.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominator of the decay encoding. A decay setting `d` in `[0, DECAY_MAX]`
/// retains `(DECAY_MAX - d) / DECAY_MAX` of the state per step, so `d = 0` is
/// a pure integrator and `d = DECAY_MAX` clears the state every step.
pub const DECAY_MAX: i64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Input,
    Dense,
    Conv2D,
    DepthwiseConv2D,
    AveragePool2D,
    Flatten,
}

impl LayerKind {
    /// Kinds that carry a kernel, strides and padding.
    pub fn is_windowed(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2D | LayerKind::DepthwiseConv2D | LayerKind::AveragePool2D
        )
    }

    /// Kinds backed by trained weights in the blob.
    pub fn has_weights(self) -> bool {
        matches!(
            self,
            LayerKind::Dense | LayerKind::Conv2D | LayerKind::DepthwiseConv2D
        )
    }

    /// Flatten is a pure reindexing; it owns no neurons and no cores.
    pub fn is_virtual(self) -> bool {
        matches!(self, LayerKind::Flatten)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Hard,
    Soft,
}

/// Layer volume in neurons, `(height, width, channels)`. Dense and Flatten
/// layers use `(1, 1, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: u32,
    pub w: u32,
    pub c: u32,
}

impl Shape {
    pub fn new(h: u32, w: u32, c: u32) -> Self {
        Shape { h, w, c }
    }

    pub fn volume(&self) -> u64 {
        self.h as u64 * self.w as u64 * self.c as u64
    }

    /// Row-major `(y, x, z)` flattening.
    pub fn index(&self, y: u32, x: u32, z: u32) -> u32 {
        (y * self.w + x) * self.c + z
    }

    pub fn coords(&self, idx: u32) -> (u32, u32, u32) {
        let z = idx % self.c;
        let xy = idx / self.c;
        (xy / self.w, xy % self.w, z)
    }

    pub fn is_flat(&self) -> bool {
        self.h == 1 && self.w == 1
    }
}

/// Per-layer neuron dynamics configuration. `bias` is kept as a real number
/// in the IR; it becomes an integer during parameter normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronConfig {
    pub threshold: i64,
    pub v_decay: i64,
    pub i_decay: i64,
    pub reset: ResetMode,
    pub bias: f64,
}

impl NeuronConfig {
    pub fn validate(&self, is_input: bool, layer: &str) -> Result<()> {
        if self.threshold < 0 || (!is_input && self.threshold == 0) {
            return Err(Error::Parse(format!(
                "layer {layer}: threshold must be positive (non-negative for inputs)"
            )));
        }
        for (name, d) in [("v_decay", self.v_decay), ("i_decay", self.i_decay)] {
            if !(0..=DECAY_MAX).contains(&d) {
                return Err(Error::Parse(format!(
                    "layer {layer}: {name} {d} outside [0, {DECAY_MAX}]"
                )));
            }
        }
        Ok(())
    }
}

/// Slice of the weight blob, in `f32` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRef {
    pub offset: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    pub output_shape: Shape,
    pub kernel: Option<(u32, u32)>,
    pub strides: Option<(u32, u32)>,
    pub padding: Option<Padding>,
    pub neuron: Option<NeuronConfig>,
    pub weight_ref: Option<WeightRef>,
}

impl LayerSpec {
    pub fn neuron_config(&self) -> &NeuronConfig {
        self.neuron
            .as_ref()
            .expect("non-virtual layers always carry a neuron config")
    }

    pub fn kernel_dims(&self) -> (u32, u32) {
        self.kernel.expect("windowed layers always carry a kernel")
    }

    pub fn stride_dims(&self) -> (u32, u32) {
        self.strides.unwrap_or((1, 1))
    }

    pub fn padding_mode(&self) -> Padding {
        self.padding.unwrap_or(Padding::Valid)
    }

    /// Number of compartments a neuron of this layer occupies on a core.
    pub fn compartment_factor(&self) -> u32 {
        match self.neuron.as_ref().map(|n| n.reset) {
            Some(ResetMode::Soft) => 2,
            _ => 1,
        }
    }

    /// Expected weight element count given the input shape.
    pub fn expected_weight_count(&self, input: Shape) -> Option<u64> {
        match self.kind {
            LayerKind::Dense => Some(input.volume() * self.output_shape.c as u64),
            LayerKind::Conv2D => {
                let (kh, kw) = self.kernel_dims();
                Some(kh as u64 * kw as u64 * input.c as u64 * self.output_shape.c as u64)
            }
            LayerKind::DepthwiseConv2D => {
                let (kh, kw) = self.kernel_dims();
                Some(kh as u64 * kw as u64 * input.c as u64)
            }
            _ => None,
        }
    }
}

/// Descriptor of the external weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobDescriptor {
    pub path: String,
    pub dtype: String,
}

/// A validated feed-forward network plus its loaded per-layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub timesteps: u32,
    pub layers: Vec<LayerSpec>,
    pub blob: BlobDescriptor,
    /// Per-layer float weights, `None` for layers without parameters.
    pub weights: Vec<Option<Vec<f32>>>,
}

impl NetworkSpec {
    /// Indices of layers that own neurons (everything except Flatten).
    pub fn physical_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.kind.is_virtual())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn neuron_count(&self) -> u64 {
        self.physical_layers()
            .iter()
            .map(|&i| self.layers[i].output_shape.volume())
            .sum()
    }

    /// Global neuron id offset of each physical layer, in chain order.
    pub fn layer_offsets(&self) -> Vec<u64> {
        let mut offsets = Vec::new();
        let mut acc = 0u64;
        for &i in &self.physical_layers() {
            offsets.push(acc);
            acc += self.layers[i].output_shape.volume();
        }
        offsets
    }

    /// Shape feeding a layer: the output of the nearest preceding layer.
    pub fn input_shape_of(&self, layer_idx: usize) -> Option<Shape> {
        if layer_idx == 0 {
            return None;
        }
        Some(self.layers[layer_idx - 1].output_shape)
    }
}

// ---------------------------------------------------------------------------
// Shape arithmetic
// ---------------------------------------------------------------------------

/// One spatial output extent. `valid`: floor((in - k) / s) + 1, requiring
/// k <= in; `same`: ceil(in / s).
pub fn conv_out_dim(input: u32, k: u32, s: u32, padding: Padding) -> Result<u32> {
    if s == 0 || k == 0 {
        return Err(Error::Shape("kernel and stride must be positive".into()));
    }
    match padding {
        Padding::Valid => {
            if k > input {
                Err(Error::Shape(format!(
                    "kernel {k} exceeds input extent {input} under valid padding"
                )))
            } else {
                Ok((input - k) / s + 1)
            }
        }
        Padding::Same => Ok(input.div_ceil(s)),
    }
}

/// Total asymmetric zero padding for `same` mode, split as
/// `(leading, trailing)` with the smaller half leading.
pub fn same_padding(input: u32, k: u32, s: u32) -> (u32, u32) {
    let out = input.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(input);
    (total / 2, total - total / 2)
}

fn infer_layer_shape(layer: &LayerSpec, input: Shape) -> Result<Shape> {
    let id = &layer.id;
    match layer.kind {
        LayerKind::Input => Ok(layer.output_shape),
        LayerKind::Flatten => Ok(Shape::new(1, 1, input.volume() as u32)),
        LayerKind::Dense => {
            if !input.is_flat() {
                return Err(Error::Shape(format!(
                    "layer {id}: dense input must be 1-D, got {input:?}"
                )));
            }
            let units = match (layer.output_shape.c, layer.weight_ref) {
                (0, Some(wr)) => {
                    let fan_in = input.volume();
                    if fan_in == 0 || wr.count % fan_in != 0 {
                        return Err(Error::Shape(format!(
                            "layer {id}: weight count {} is not a multiple of fan-in {fan_in}",
                            wr.count
                        )));
                    }
                    (wr.count / fan_in) as u32
                }
                (c, _) => c,
            };
            if units == 0 {
                return Err(Error::Shape(format!("layer {id}: zero output units")));
            }
            Ok(Shape::new(1, 1, units))
        }
        LayerKind::Conv2D => {
            let (kh, kw) = layer.kernel_dims();
            let (sy, sx) = layer.stride_dims();
            let pad = layer.padding_mode();
            let oh = conv_out_dim(input.h, kh, sy, pad)?;
            let ow = conv_out_dim(input.w, kw, sx, pad)?;
            let c_out = match (layer.output_shape.c, layer.weight_ref) {
                (0, Some(wr)) => {
                    let per_filter = kh as u64 * kw as u64 * input.c as u64;
                    if per_filter == 0 || wr.count % per_filter != 0 {
                        return Err(Error::Shape(format!(
                            "layer {id}: weight count {} does not factor into {per_filter}-element filters",
                            wr.count
                        )));
                    }
                    (wr.count / per_filter) as u32
                }
                (c, _) => c,
            };
            if c_out == 0 {
                return Err(Error::Shape(format!("layer {id}: zero output channels")));
            }
            Ok(Shape::new(oh, ow, c_out))
        }
        LayerKind::DepthwiseConv2D | LayerKind::AveragePool2D => {
            let (kh, kw) = layer.kernel_dims();
            let (sy, sx) = layer.stride_dims();
            let pad = layer.padding_mode();
            let oh = conv_out_dim(input.h, kh, sy, pad)?;
            let ow = conv_out_dim(input.w, kw, sx, pad)?;
            Ok(Shape::new(oh, ow, input.c))
        }
    }
}

/// Recompute every non-input `output_shape` by forward propagation. Declared
/// shapes are replaced; the result is a fixed point of this function.
pub fn infer_shapes(net: &NetworkSpec) -> Result<NetworkSpec> {
    let mut out = net.clone();
    let mut current = out.layers[0].output_shape;
    if current.volume() == 0 {
        return Err(Error::Shape("input layer has zero volume".into()));
    }
    for layer in out.layers.iter_mut().skip(1) {
        let shape = infer_layer_shape(layer, current)?;
        if shape.volume() == 0 {
            return Err(Error::Shape(format!(
                "layer {}: inferred non-positive dimension",
                layer.id
            )));
        }
        layer.output_shape = shape;
        current = shape;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Manifest documents
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestNeuron {
    threshold: i64,
    v_decay: i64,
    i_decay: i64,
    reset: ResetMode,
    bias: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestWeights {
    offset: u64,
    count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLayer {
    id: String,
    kind: LayerKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    shape: Option<[u32; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strides: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<Padding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    neuron: Option<ManifestNeuron>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<ManifestWeights>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    name: String,
    timesteps: u32,
    layers: Vec<ManifestLayer>,
    blob: BlobDescriptor,
}

fn layer_from_manifest(m: &ManifestLayer) -> Result<LayerSpec> {
    let id = m.id.clone();
    if m.kind.is_windowed() && m.kernel.is_none() {
        return Err(Error::Parse(format!("layer {id}: kernel required")));
    }
    if !m.kind.is_windowed() && (m.kernel.is_some() || m.strides.is_some() || m.padding.is_some())
    {
        return Err(Error::Parse(format!(
            "layer {id}: kernel/strides/padding not allowed for {:?}",
            m.kind
        )));
    }
    if m.kind.has_weights() && m.weights.is_none() {
        return Err(Error::Parse(format!("layer {id}: weights required")));
    }
    if !m.kind.has_weights() && m.weights.is_some() {
        return Err(Error::Parse(format!(
            "layer {id}: weights not allowed for {:?}",
            m.kind
        )));
    }
    if m.neuron.is_none() && !m.kind.is_virtual() {
        return Err(Error::Parse(format!("layer {id}: neuron config required")));
    }
    if m.kind == LayerKind::Input && m.shape.is_none() {
        return Err(Error::Parse(format!("layer {id}: input shape required")));
    }
    let shape = m
        .shape
        .map(|s| Shape::new(s[0], s[1], s[2]))
        .unwrap_or(Shape::new(0, 0, 0));
    Ok(LayerSpec {
        id,
        kind: m.kind,
        output_shape: shape,
        kernel: m.kernel.map(|k| (k[0], k[1])),
        strides: m.strides.map(|s| (s[0], s[1])),
        padding: m.padding,
        neuron: m.neuron.as_ref().map(|n| NeuronConfig {
            threshold: n.threshold,
            v_decay: n.v_decay,
            i_decay: n.i_decay,
            reset: n.reset,
            bias: n.bias,
        }),
        weight_ref: m.weights.as_ref().map(|w| WeightRef {
            offset: w.offset,
            count: w.count,
        }),
    })
}

fn validate_chain(net: &NetworkSpec) -> Result<()> {
    if net.layers.is_empty() {
        return Err(Error::Shape("network has no layers".into()));
    }
    if net.layers[0].kind != LayerKind::Input {
        return Err(Error::Shape("first layer must be the input layer".into()));
    }
    if net.layers.iter().skip(1).any(|l| l.kind == LayerKind::Input) {
        return Err(Error::Shape("exactly one input layer allowed".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for layer in &net.layers {
        if !seen.insert(layer.id.clone()) {
            return Err(Error::Parse(format!("duplicate layer id {}", layer.id)));
        }
        if let Some(cfg) = &layer.neuron {
            cfg.validate(layer.kind == LayerKind::Input, &layer.id)?;
        }
    }
    // Declared shapes must agree with the forward arithmetic.
    let inferred = infer_shapes(net)?;
    for (a, b) in net.layers.iter().zip(inferred.layers.iter()) {
        if a.output_shape.c != 0 && a.output_shape != b.output_shape {
            return Err(Error::Shape(format!(
                "layer {}: declared shape {:?} but arithmetic gives {:?}",
                a.id, a.output_shape, b.output_shape
            )));
        }
    }
    Ok(())
}

fn parse_blob(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Blob(format!(
            "blob size {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Load and validate a network from its manifest and weight blob.
pub fn load_network(manifest_path: &Path, blob_path: &Path) -> Result<NetworkSpec> {
    let text = fs::read_to_string(manifest_path)?;
    let blob = fs::read(blob_path)?;
    load_network_from(&text, &blob)
}

/// In-memory variant of [`load_network`].
pub fn load_network_from(manifest_text: &str, blob_bytes: &[u8]) -> Result<NetworkSpec> {
    let doc: ManifestDoc =
        serde_json::from_str(manifest_text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.blob.dtype != "f32le" {
        return Err(Error::Parse(format!(
            "unsupported blob dtype {}",
            doc.blob.dtype
        )));
    }
    let layers = doc
        .layers
        .iter()
        .map(layer_from_manifest)
        .collect::<Result<Vec<_>>>()?;
    let mut net = NetworkSpec {
        name: doc.name,
        timesteps: doc.timesteps,
        layers,
        blob: doc.blob,
        weights: Vec::new(),
    };
    validate_chain(&net)?;
    net = infer_shapes(&net)?;

    let floats = parse_blob(blob_bytes)?;
    let mut weights = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        match layer.weight_ref {
            Some(wr) => {
                let end = wr.offset.checked_add(wr.count).ok_or_else(|| {
                    Error::Blob(format!("layer {}: weight range overflows", layer.id))
                })?;
                if end > floats.len() as u64 {
                    return Err(Error::Blob(format!(
                        "layer {}: weight range {}..{} exceeds blob length {}",
                        layer.id,
                        wr.offset,
                        end,
                        floats.len()
                    )));
                }
                let input = net.input_shape_of(i).ok_or_else(|| {
                    Error::Shape(format!("layer {}: weighted layer without input", layer.id))
                })?;
                let expected = layer.expected_weight_count(input).unwrap_or(0);
                if wr.count != expected {
                    return Err(Error::Shape(format!(
                        "layer {}: weight count {} but connectivity needs {expected}",
                        layer.id, wr.count
                    )));
                }
                weights.push(Some(
                    floats[wr.offset as usize..end as usize].to_vec(),
                ));
            }
            None => weights.push(None),
        }
    }
    net.weights = weights;
    Ok(net)
}

/// Serialize a network back to its canonical manifest form. Loading the
/// result and saving again is byte-identical.
pub fn save_manifest(net: &NetworkSpec) -> String {
    let doc = ManifestDoc {
        name: net.name.clone(),
        timesteps: net.timesteps,
        layers: net
            .layers
            .iter()
            .map(|l| ManifestLayer {
                id: l.id.clone(),
                kind: l.kind,
                shape: Some([l.output_shape.h, l.output_shape.w, l.output_shape.c]),
                kernel: l.kernel.map(|(a, b)| [a, b]),
                strides: l.strides.map(|(a, b)| [a, b]),
                padding: l.padding,
                neuron: l.neuron.as_ref().map(|n| ManifestNeuron {
                    threshold: n.threshold,
                    v_decay: n.v_decay,
                    i_decay: n.i_decay,
                    reset: n.reset,
                    bias: n.bias,
                }),
                weights: l.weight_ref.map(|w| ManifestWeights {
                    offset: w.offset,
                    count: w.count,
                }),
            })
            .collect(),
        blob: net.blob.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("manifest serialization cannot fail");
    s.push('\n');
    s
}

/// Rewrite every average-pool layer as a depthwise convolution with uniform
/// `1/(kh*kw)` weights so that all downstream stages see only one windowed
/// connectivity pattern.
pub fn lower_average_pools(net: &NetworkSpec) -> NetworkSpec {
    let mut out = net.clone();
    for (i, layer) in out.layers.iter_mut().enumerate() {
        if layer.kind == LayerKind::AveragePool2D {
            let (kh, kw) = layer.kernel_dims();
            let c = layer.output_shape.c;
            let uniform = 1.0f32 / (kh * kw) as f32;
            out.weights[i] = Some(vec![uniform; (kh * kw * c) as usize]);
            layer.kind = LayerKind::DepthwiseConv2D;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neuron_json() -> &'static str {
        r#"{"threshold": 100, "v_decay": 0, "i_decay": 4096, "reset": "hard", "bias": 0.0}"#
    }

    fn conv_manifest(shape: Option<&str>) -> String {
        let shape_field = shape.map(|s| format!("\"shape\": {s},")).unwrap_or_default();
        format!(
            r#"{{
  "name": "t",
  "timesteps": 16,
  "layers": [
    {{"id": "in", "kind": "Input", "shape": [6, 6, 1], "neuron": {n}}},
    {{"id": "c1", "kind": "Conv2D", {shape_field} "kernel": [3, 3], "strides": [1, 1],
      "padding": "valid", "neuron": {n}, "weights": {{"offset": 0, "count": 9}}}}
  ],
  "blob": {{"path": "w.bin", "dtype": "f32le"}}
}}"#,
            n = neuron_json()
        )
    }

    fn blob(n: usize) -> Vec<u8> {
        (0..n).flat_map(|i| (i as f32).to_le_bytes()).collect()
    }

    #[test]
    fn conv_shape_inferred() {
        let net = load_network_from(&conv_manifest(None), &blob(9)).unwrap();
        assert_eq!(net.layers[1].output_shape, Shape::new(4, 4, 1));
    }

    #[test]
    fn declared_shape_mismatch_is_shape_error() {
        let err = load_network_from(&conv_manifest(Some("[5, 5, 1]")), &blob(9)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err:?}");
    }

    #[test]
    fn dense_weight_count_checked() {
        let manifest = format!(
            r#"{{
  "name": "t",
  "timesteps": 16,
  "layers": [
    {{"id": "in", "kind": "Input", "shape": [1, 1, 10], "neuron": {n}}},
    {{"id": "d", "kind": "Dense", "shape": [1, 1, 5], "neuron": {n},
      "weights": {{"offset": 0, "count": 50}}}}
  ],
  "blob": {{"path": "w.bin", "dtype": "f32le"}}
}}"#,
            n = neuron_json()
        );
        let net = load_network_from(&manifest, &blob(50)).unwrap();
        assert_eq!(net.weights[1].as_ref().unwrap().len(), 50);

        let bad = manifest.replace("\"count\": 50", "\"count\": 40");
        assert!(matches!(
            load_network_from(&bad, &blob(50)).unwrap_err(),
            Error::Shape(_)
        ));
    }

    #[test]
    fn blob_out_of_bounds() {
        let err = load_network_from(&conv_manifest(None), &blob(4)).unwrap_err();
        assert!(matches!(err, Error::Blob(_)), "got {err:?}");
    }

    #[test]
    fn same_padding_shape() {
        // 28x28 stays 28x28 under same padding, stride 1.
        assert_eq!(conv_out_dim(28, 3, 1, Padding::Same).unwrap(), 28);
        // floor((32 - 3) / 2) + 1 = 15.
        assert_eq!(conv_out_dim(32, 3, 2, Padding::Valid).unwrap(), 15);
        // ceil(32 / 2) = 16.
        assert_eq!(conv_out_dim(32, 3, 2, Padding::Same).unwrap(), 16);
    }

    #[test]
    fn kernel_exceeding_input_is_shape_error() {
        assert!(matches!(
            conv_out_dim(4, 5, 1, Padding::Valid).unwrap_err(),
            Error::Shape(_)
        ));
    }

    #[test]
    fn manifest_round_trip_is_byte_identical() {
        let net = load_network_from(&conv_manifest(None), &blob(9)).unwrap();
        let canon = save_manifest(&net);
        let net2 = load_network_from(&canon, &blob(9)).unwrap();
        assert_eq!(save_manifest(&net2), canon);
    }

    #[test]
    fn infer_shapes_is_idempotent() {
        let net = load_network_from(&conv_manifest(None), &blob(9)).unwrap();
        let once = infer_shapes(&net).unwrap();
        let twice = infer_shapes(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn neuron_count_sums_layer_volumes() {
        let net = load_network_from(&conv_manifest(None), &blob(9)).unwrap();
        assert_eq!(net.neuron_count(), 36 + 16);
    }

    #[test]
    fn pool_lowering_synthesizes_uniform_weights() {
        let manifest = format!(
            r#"{{
  "name": "t",
  "timesteps": 16,
  "layers": [
    {{"id": "in", "kind": "Input", "shape": [4, 4, 2], "neuron": {n}}},
    {{"id": "p", "kind": "AveragePool2D", "kernel": [2, 2], "strides": [2, 2],
      "padding": "valid", "neuron": {n}}}
  ],
  "blob": {{"path": "w.bin", "dtype": "f32le"}}
}}"#,
            n = neuron_json()
        );
        let net = load_network_from(&manifest, &[]).unwrap();
        assert_eq!(net.layers[1].output_shape, Shape::new(2, 2, 2));
        let lowered = lower_average_pools(&net);
        assert_eq!(lowered.layers[1].kind, LayerKind::DepthwiseConv2D);
        let w = lowered.weights[1].as_ref().unwrap();
        assert_eq!(w.len(), 8);
        assert!(w.iter().all(|&v| v == 0.25));
    }
}
