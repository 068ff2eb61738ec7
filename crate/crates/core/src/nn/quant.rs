//! Linear quantization to sign-magnitude integers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit widths used for one network.
///
/// `weight_bits` counts the sign: 5 bits give magnitudes up to 15.
/// Activations are non-negative after ReLU and use all `activation_bits`
/// for magnitude unless `symmetric_activations` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantScheme {
    pub weight_bits: u32,
    pub activation_bits: u32,
    pub symmetric_activations: bool,
}

impl Default for QuantScheme {
    fn default() -> Self {
        QuantScheme {
            weight_bits: 5,
            activation_bits: 4,
            symmetric_activations: false,
        }
    }
}

impl QuantScheme {
    pub fn validate(&self) -> Result<()> {
        for (what, bits) in [
            ("weight", self.weight_bits),
            ("activation", self.activation_bits),
        ] {
            if !(2..=16).contains(&bits) {
                return Err(Error::Config(format!(
                    "{what}_bits must be in 2..=16, got {bits}"
                )));
            }
        }
        Ok(())
    }
}

/// Integer tensor with the real value of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub values: Vec<i16>,
    pub scale: f64,
}

impl Quantized {
    pub fn dequantize(&self) -> Vec<f64> {
        self.values.iter().map(|&q| q as f64 * self.scale).collect()
    }
}

/// Largest magnitude representable in `bits`.
pub fn max_level(bits: u32, signed: bool) -> i32 {
    if signed {
        (1 << (bits - 1)) - 1
    } else {
        (1 << bits) - 1
    }
}

/// `scale = max|x| / max_level`, `q = round(x / scale)` with ties away from
/// zero. An all-zero tensor gets scale 1. Unsigned quantization rejects
/// negative inputs.
pub fn quantize_linear(x: &[f32], bits: u32, signed: bool) -> Result<Quantized> {
    if !(2..=16).contains(&bits) {
        return Err(Error::Config(format!("bits must be in 2..=16, got {bits}")));
    }
    if !signed {
        if let Some(i) = x.iter().position(|&v| v < 0.0) {
            return Err(Error::InputDomain(format!(
                "unsigned quantization of negative value {} at index {i}",
                x[i]
            )));
        }
    }
    let scale = activation_scale(x, bits, signed);
    let values = x.iter().map(|&v| quantize_value(v, scale)).collect();
    Ok(Quantized { values, scale })
}

/// Step size used by [`quantize_linear`].
pub fn activation_scale(x: &[f32], bits: u32, signed: bool) -> f64 {
    let max = x.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        1.0
    } else {
        max as f64 / max_level(bits, signed) as f64
    }
}

#[inline]
pub fn quantize_value(v: f32, scale: f64) -> i16 {
    (v as f64 / scale).round() as i16
}
