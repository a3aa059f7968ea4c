//! Parameter normalization: float-to-integer weight conversion with full
//! dynamic-range utilization, plus mantissa/exponent decomposition.
//!
//! Weights are normalized by a high percentile of their magnitude
//! distribution, scaled to the integer weight range, rounded half away from
//! zero, and clipped. Calibration then measures the per-layer net drive
//! `du/dt = W x + b` on sample data through an emulation of the spiking
//! network (activations clipped to `[0, threshold]` and divided by the
//! threshold) and rescales each layer so its peak drive lands at the firing
//! threshold: drive above threshold saturates because a neuron cannot fire
//! more than one spike per step, drive far below it starves the layer.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::NetworkSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationConfig {
    pub weight_bits: u32,
    pub bias_bits: u32,
    /// Percentile of the magnitude distribution used as the normalization
    /// scale, in (0, 100].
    pub percentile: f64,
    pub mantissa_bits: u32,
    pub exponent_min: i32,
    pub exponent_max: i32,
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        QuantizationConfig {
            weight_bits: 8,
            bias_bits: 13,
            percentile: 99.9,
            mantissa_bits: 8,
            exponent_min: -8,
            exponent_max: 7,
        }
    }
}

impl QuantizationConfig {
    /// Integer limits for a signed field of `bits` width.
    pub fn limits(bits: u32) -> (i64, i64) {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    }

    pub fn weight_limits(&self) -> (i64, i64) {
        Self::limits(self.weight_bits)
    }

    pub fn bias_limits(&self) -> (i64, i64) {
        Self::limits(self.bias_bits)
    }

    pub fn max_representable(&self) -> i64 {
        let max_m = (1i64 << (self.mantissa_bits - 1)) - 1;
        max_m << self.exponent_max
    }
}

/// Per-layer normalization record: `sigma` is the weight scale, `lambda` the
/// measured peak drive, `threshold` the target it was scaled to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerScale {
    pub sigma: f64,
    pub lambda: Option<f64>,
    pub threshold: i64,
}

/// Integer weight in the mantissa/exponent form used on-core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantizedWeight {
    pub mantissa: i32,
    pub exponent: i32,
}

impl QuantizedWeight {
    pub fn value(&self) -> i64 {
        let m = self.mantissa as i64;
        if self.exponent >= 0 {
            m << self.exponent
        } else {
            // Negative exponents only arise for sub-integer scales.
            m >> (-self.exponent)
        }
    }
}

fn round_half_away(v: f64) -> i64 {
    if v >= 0.0 {
        (v + 0.5).floor() as i64
    } else {
        (v - 0.5).ceil() as i64
    }
}

/// Linear-interpolation percentile of a sorted slice, `p` in (0, 100].
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    if p >= 100.0 {
        return *sorted.last().expect("non-empty");
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Convert a float weight array to integers: normalize by the `p`-th
/// percentile of magnitudes, scale to the integer range, round half away
/// from zero, clip. Returns the integers and the scale `sigma`. Clipping only
/// changes values when `p < 100`.
pub fn quantize_weights(w: &[f32], bits: u32, p: f64) -> Result<(Vec<i32>, f64)> {
    let mut mags: Vec<f64> = w.iter().map(|v| v.abs() as f64).collect();
    mags.sort_by(f64::total_cmp);
    let sigma = percentile_sorted(&mags, p);
    if sigma == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    let (lo, hi) = QuantizationConfig::limits(bits);
    let scale = (-lo).max(hi) as f64;
    let out = w
        .iter()
        .map(|&v| round_half_away(v as f64 / sigma * scale).clamp(lo, hi) as i32)
        .collect();
    Ok((out, sigma))
}

/// Decompose an integer into `mantissa * 2^exponent` with the minimal
/// absolute exponent. Values that are not exactly representable round the
/// mantissa half away from zero, preferring the smaller exponent.
pub fn decompose(w: i64, cfg: &QuantizationConfig) -> Result<QuantizedWeight> {
    if w.unsigned_abs() > cfg.max_representable().unsigned_abs() {
        return Err(Error::Range(format!(
            "{w} exceeds the mantissa/exponent range (max {})",
            cfg.max_representable()
        )));
    }
    let max_m = (1i64 << (cfg.mantissa_bits - 1)) - 1;
    let mut best: Option<(f64, i32, i64)> = None; // (abs error, |e| then e key via scan order, mantissa)
    for e in cfg.exponent_min..=cfg.exponent_max {
        let scale = 2f64.powi(e);
        let m = round_half_away(w as f64 / scale).clamp(-max_m, max_m);
        let value = m as f64 * scale;
        let err = (value - w as f64).abs();
        let better = match &best {
            None => true,
            Some((berr, be, _)) => {
                err < *berr
                    || (err == *berr
                        && (e.abs() < be.abs() || (e.abs() == be.abs() && e < *be)))
            }
        };
        if better {
            best = Some((err, e, m));
        }
    }
    let (_, exponent, mantissa) = best.expect("exponent range is non-empty");
    Ok(QuantizedWeight {
        mantissa: mantissa as i32,
        exponent,
    })
}

/// A network whose weights and biases have been converted to integers.
#[derive(Debug, Clone)]
pub struct QuantizedNetwork {
    pub net: NetworkSpec,
    /// Per-layer integer kernels, aligned with `net.layers`.
    pub kernels: Vec<Option<Vec<i32>>>,
    /// Per-layer integer bias, in voltage units per step.
    pub biases: Vec<i64>,
    pub scales: Vec<Option<LayerScale>>,
}

impl QuantizedNetwork {
    pub fn threshold_of(&self, layer_idx: usize) -> i64 {
        self.net.layers[layer_idx].neuron_config().threshold
    }
}

fn snap(v: i64, cfg: &QuantizationConfig) -> Result<i64> {
    Ok(decompose(v, cfg)?.value())
}

/// Quantize every weighted layer of a (pool-lowered) network. Biases share
/// the weight scale of their layer but clip to the wider bias range; all
/// integers are snapped to the mantissa/exponent-representable grid.
pub fn quantize_network(net: &NetworkSpec, cfg: &QuantizationConfig) -> Result<QuantizedNetwork> {
    let (wlo, whi) = cfg.weight_limits();
    let wscale = (-wlo).max(whi) as f64;
    let (blo, bhi) = cfg.bias_limits();
    let mut kernels = Vec::with_capacity(net.layers.len());
    let mut biases = Vec::with_capacity(net.layers.len());
    let mut scales = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        match &net.weights[i] {
            Some(w) => {
                let (q, sigma) = quantize_weights(w, cfg.weight_bits, cfg.percentile)?;
                let q = q
                    .into_iter()
                    .map(|v| snap(v as i64, cfg).map(|s| s as i32))
                    .collect::<Result<Vec<i32>>>()?;
                let bias_f = layer.neuron_config().bias;
                let bias = snap(round_half_away(bias_f / sigma * wscale).clamp(blo, bhi), cfg)?;
                kernels.push(Some(q));
                biases.push(bias);
                scales.push(Some(LayerScale {
                    sigma,
                    lambda: None,
                    threshold: layer.neuron_config().threshold,
                }));
            }
            None => {
                let bias = layer
                    .neuron
                    .as_ref()
                    .map(|n| round_half_away(n.bias))
                    .unwrap_or(0);
                kernels.push(None);
                biases.push(snap(bias.clamp(blo, bhi), cfg)?);
                scales.push(None);
            }
        }
    }
    Ok(QuantizedNetwork {
        net: net.clone(),
        kernels,
        biases,
        scales,
    })
}

/// Dense-math forward drive of one weighted layer in the emulation:
/// `du/dt[j] = sum_i W[i -> j] x[i] + bias`. Uses the unrolled column
/// geometry of the layer pair.
fn layer_drive(
    qnet: &QuantizedNetwork,
    layer_idx: usize,
    pre_idx: usize,
    x: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let geom = crate::connectivity::PairGeometry::new(
        &qnet.net.layers[pre_idx],
        &qnet.net.layers[layer_idx],
    )?;
    let kernel = qnet.kernels[layer_idx]
        .as_ref()
        .expect("weighted layer has a kernel");
    let bias = qnet.biases[layer_idx] as f64;
    out.fill(bias);
    let mut column = Vec::new();
    for p in 0..geom.n_pre() {
        let xv = x[p as usize];
        if xv == 0.0 {
            continue;
        }
        column.clear();
        geom.column(p, &mut column);
        for &(dst, wid) in &column {
            out[dst as usize] += kernel[wid as usize] as f64 * xv;
        }
    }
    Ok(())
}

/// Calibrate the dynamic range of a quantized network on a sample batch.
/// Layers are processed in order: the peak (percentile) drive `lambda` is
/// measured through the emulation, the layer's integers are rescaled by
/// `threshold / lambda`, and the rescaled layer feeds the next measurement.
pub fn calibrate_dynamic_range(
    qnet: &mut QuantizedNetwork,
    batch: &[Vec<f32>],
    cfg: &QuantizationConfig,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let phys = qnet.net.physical_layers();
    let input_dim = qnet.net.layers[phys[0]].output_shape.volume() as usize;
    for (i, sample) in batch.iter().enumerate() {
        if sample.len() != input_dim {
            return Err(Error::Usage(format!(
                "calibration sample {i} has {} values, input layer needs {input_dim}",
                sample.len()
            )));
        }
    }
    let (wlo, whi) = cfg.weight_limits();
    let (blo, bhi) = cfg.bias_limits();

    // Input activations are spike rates in [0, 1].
    let mut activations: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| s.iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect())
        .collect();

    for window in phys.windows(2) {
        let (pre_idx, layer_idx) = (window[0], window[1]);
        if qnet.kernels[layer_idx].is_none() {
            return Err(Error::Usage(format!(
                "layer {} has no weights; calibrate on a pool-lowered network",
                qnet.net.layers[layer_idx].id
            )));
        }
        let layer = &qnet.net.layers[layer_idx];
        let n_out = layer.output_shape.volume() as usize;
        let tau = layer.neuron_config().threshold;

        let mut drives: Vec<Vec<f64>> = Vec::with_capacity(activations.len());
        let mut all: Vec<f64> = Vec::with_capacity(activations.len() * n_out);
        for x in &activations {
            let mut d = vec![0.0; n_out];
            layer_drive(qnet, layer_idx, pre_idx, x, &mut d)?;
            all.extend_from_slice(&d);
            drives.push(d);
        }
        all.sort_by(f64::total_cmp);
        let lambda = percentile_sorted(&all, cfg.percentile);
        if lambda <= 0.0 {
            return Err(Error::DeadLayer(layer.id.clone()));
        }

        let rescale = tau as f64 / lambda;
        {
            let kernel = qnet.kernels[layer_idx].as_mut().expect("weighted layer");
            for w in kernel.iter_mut() {
                let scaled = round_half_away(*w as f64 * rescale).clamp(wlo, whi);
                *w = snap(scaled, cfg)? as i32;
            }
        }
        let scaled_bias = round_half_away(qnet.biases[layer_idx] as f64 * rescale).clamp(blo, bhi);
        qnet.biases[layer_idx] = snap(scaled_bias, cfg)?;
        if let Some(scale) = qnet.scales[layer_idx].as_mut() {
            scale.lambda = Some(lambda);
        }

        // Feed the next layer with the final parameters.
        for (x, d) in activations.iter_mut().zip(drives.iter_mut()) {
            layer_drive(qnet, layer_idx, pre_idx, x, d)?;
            *x = d.iter().map(|&v| v.clamp(0.0, tau as f64) / tau as f64).collect();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_steps_by_hand() {
        let (q, sigma) = quantize_weights(&[0.5, -0.25, 1.0], 8, 100.0).unwrap();
        assert_eq!(sigma, 1.0);
        // Scale 128, then clip 128 -> 127.
        assert_eq!(q, vec![64, -32, 127]);
    }

    #[test]
    fn max_maps_to_upper_limit() {
        let (q, _) = quantize_weights(&[1.0], 8, 100.0).unwrap();
        assert_eq!(q, vec![127]);
        let (q, _) = quantize_weights(&[1.0], 6, 100.0).unwrap();
        assert_eq!(q, vec![31]);
    }

    #[test]
    fn all_zero_weights_are_degenerate() {
        assert!(matches!(
            quantize_weights(&[0.0, 0.0], 8, 100.0).unwrap_err(),
            Error::DegenerateWeights
        ));
    }

    #[test]
    fn quantization_is_scale_invariant_at_p100() {
        let w = [0.3f32, -0.9, 0.04, 0.77];
        let scaled: Vec<f32> = w.iter().map(|v| v * 37.5).collect();
        let (a, _) = quantize_weights(&w, 8, 100.0).unwrap();
        let (b, _) = quantize_weights(&scaled, 8, 100.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outputs_stay_within_limits() {
        let w = [5.0f32, -3.0, 0.1, -7.7, 2.2];
        for bits in [2u32, 4, 8] {
            let (q, _) = quantize_weights(&w, bits, 95.0).unwrap();
            let (lo, hi) = QuantizationConfig::limits(bits);
            assert!(q.iter().all(|&v| (v as i64) >= lo && (v as i64) <= hi));
        }
    }

    #[test]
    fn decompose_minimal_exponent() {
        let cfg = QuantizationConfig::default();
        assert_eq!(
            decompose(64, &cfg).unwrap(),
            QuantizedWeight {
                mantissa: 64,
                exponent: 0
            }
        );
        // 512 = 64 * 2^3; exponents below 3 overflow the mantissa.
        assert_eq!(
            decompose(512, &cfg).unwrap(),
            QuantizedWeight {
                mantissa: 64,
                exponent: 3
            }
        );
        assert_eq!(
            decompose(0, &cfg).unwrap(),
            QuantizedWeight {
                mantissa: 0,
                exponent: 0
            }
        );
    }

    #[test]
    fn decompose_out_of_range() {
        let cfg = QuantizationConfig::default();
        assert_eq!(cfg.max_representable(), 127 << 7);
        assert!(decompose(cfg.max_representable(), &cfg).is_ok());
        assert!(matches!(
            decompose(cfg.max_representable() + 1, &cfg).unwrap_err(),
            Error::Range(_)
        ));
    }

    #[test]
    fn decompose_value_roundtrip_exhaustive() {
        let cfg = QuantizationConfig::default();
        for e in cfg.exponent_min..=cfg.exponent_max {
            for m in -127i64..=127 {
                let v = if e >= 0 {
                    m << e
                } else if m % (1i64 << -e) == 0 {
                    m >> -e
                } else {
                    continue; // not an integer value
                };
                let d = decompose(v, &cfg).unwrap();
                assert_eq!(d.value(), v, "m={m} e={e}");
            }
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&v, 100.0), 4.0);
        assert_eq!(percentile_sorted(&v, 50.0), 2.5);
    }
}
