//! Post-training int8 quantization.
//!
//! Weights use per-tensor symmetric quantization with `scale = max|w| / 127`
//! and are dequantized at inference. The fixed-point mode additionally
//! fake-quantizes every layer input and the output logits to 256 levels over
//! the `[min, max]` range observed on a calibration set.

use serde::{Deserialize, Serialize};

use super::model::{Classifier, Mlp};
use super::TrainError;
use crate::ledger::QuantKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub kind: QuantKind,
    #[serde(default = "default_calibration")]
    pub calibration_set_size: usize,
}

fn default_calibration() -> usize {
    100
}

impl QuantSpec {
    pub fn new(kind: QuantKind) -> Self {
        Self {
            kind,
            calibration_set_size: default_calibration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub values: Vec<i8>,
    pub scale: f32,
    /// The tensor was all zeros; scale fell back to 1.
    pub degenerate: bool,
}

impl QuantizedTensor {
    pub fn dequantize(&self) -> Vec<f32> {
        self.values.iter().map(|&q| q as f32 * self.scale).collect()
    }
}

pub fn quantize_tensor(w: &[f32]) -> QuantizedTensor {
    let max = w.iter().fold(0f32, |m, x| m.max(x.abs()));
    let (scale, degenerate) = if max == 0.0 { (1.0, true) } else { (max / 127.0, false) };
    QuantizedTensor {
        values: w
            .iter()
            .map(|x| (x / scale).round().clamp(-127.0, 127.0) as i8)
            .collect(),
        scale,
        degenerate,
    }
}

/// Calibrated activation range with 256 uniformly spaced levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationRange {
    pub min: f32,
    pub max: f32,
}

impl ActivationRange {
    fn observe(&mut self, xs: &[f32]) {
        for &x in xs {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
    }

    pub fn fake_quantize(&self, x: f32) -> f32 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return self.min;
        }
        let step = span / 255.0;
        let q = ((x.clamp(self.min, self.max) - self.min) / step).round();
        self.min + q * step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub weights: QuantizedTensor,
    pub bias: Vec<f32>,
    dequantized: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub kind: QuantKind,
    base: Mlp,
    pub layers: Vec<QuantizedLayer>,
    /// Fixed-point only: range of each layer's input, then of the logits.
    pub activation_ranges: Option<Vec<ActivationRange>>,
    pub flags: Vec<String>,
}

pub fn quantize(
    model: &Mlp,
    spec: &QuantSpec,
    calibration: &[f32],
) -> Result<QuantizedModel, TrainError> {
    let mut flags = Vec::new();
    let layers: Vec<QuantizedLayer> = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let q = quantize_tensor(&l.weights);
            if q.degenerate {
                flags.push(format!("layer {i}: all-zero weight tensor, scale set to 1"));
            }
            QuantizedLayer {
                dequantized: q.dequantize(),
                weights: q,
                bias: l.bias.clone(),
            }
        })
        .collect();
    let mut out = QuantizedModel {
        kind: spec.kind,
        base: model.clone(),
        layers,
        activation_ranges: None,
        flags,
    };
    if spec.kind == QuantKind::FixedpointInt8 {
        let d = model.layers[0].in_dim;
        let rows = calibration.len() / d;
        if rows == 0 {
            return Err(TrainError::Quantization(
                "fixed-point quantization needs calibration data".into(),
            ));
        }
        if rows < spec.calibration_set_size {
            return Err(TrainError::Quantization(format!(
                "calibration set has {rows} examples, {} requested",
                spec.calibration_set_size
            )));
        }
        let mut ranges = vec![
            ActivationRange {
                min: f32::INFINITY,
                max: f32::NEG_INFINITY,
            };
            model.layers.len() + 1
        ];
        for row in calibration.chunks_exact(d).take(spec.calibration_set_size) {
            out.trace(row, None, |i, xs| ranges[i].observe(xs));
        }
        out.activation_ranges = Some(ranges);
    }
    Ok(out)
}

impl QuantizedModel {
    /// Runs the dequantized network, calling `visit(i, activations)` on each
    /// layer input `i` and on the logits (index `layers.len()`), after the
    /// fake quantization for that point has been applied.
    fn trace(
        &self,
        x: &[f32],
        ranges: Option<&[ActivationRange]>,
        mut visit: impl FnMut(usize, &[f32]),
    ) -> Vec<f32> {
        let quant = |i: usize, v: &mut Vec<f32>| {
            if let Some(r) = ranges {
                v.iter_mut().for_each(|a| *a = r[i].fake_quantize(*a));
            }
        };
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, (layer, dense)) in self.layers.iter().zip(&self.base.layers).enumerate() {
            quant(i, &mut cur);
            visit(i, &cur);
            let mut next = vec![0.0; dense.out_dim];
            dense.forward_into(&layer.dequantized, &cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        quant(self.layers.len(), &mut cur);
        visit(self.layers.len(), &cur);
        cur
    }
}

impl Classifier for QuantizedModel {
    fn logits(&self, x: &[f32]) -> Vec<f32> {
        self.trace(x, self.activation_ranges.as_deref(), |_, _| {})
    }
}
