//! Signed analog accumulator and SAR-ADC readout.
//!
//! Each product voltage is sampled onto `c_sample` and dumped through a PMOS
//! pass device (threshold `v_th_m9`) onto one of two accumulation capacitors,
//! chosen by the product sign. While the capacitor stays below `v_th_m9`, the
//! charge moved per sample is `c_sample * (V_sample - v_th_m9)` regardless of
//! what is already stored, so the accumulated voltage is a plain sum.
//!
//! After at most `n_acc` samples both capacitors are digitized by a 4-bit SAR
//! ADC and reset. The ADC references track the number of samples held, so a
//! capacitor holding `n` samples is converted over
//! `[v_lo * n / n_acc, v_hi * n / n_acc]`.

use serde::{Deserialize, Serialize};

use crate::device::{AnalogSample, DeviceParams, Stage, FULL_SCALE_PRODUCT};
use crate::error::{Error, Result};

/// Charge on the two accumulation capacitors between conversions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AccumulatorState {
    pub v_acc_pos: f64,
    pub v_acc_neg: f64,
    /// Samples dumped onto the positive capacitor.
    pub n_pos: usize,
    /// Samples dumped onto the negative capacitor.
    pub n_neg: usize,
}

impl AccumulatorState {
    /// Both capacitors discharged to 0 mV.
    pub fn reset() -> Self {
        Self::default()
    }

    /// Total accumulations since the last reset.
    pub fn count(&self) -> usize {
        self.n_pos + self.n_neg
    }
}

/// Voltage step on the accumulation capacitor for one sample.
pub fn delta_v_acc(sample_mv: f64, params: &DeviceParams) -> f64 {
    params.c_sample * (sample_mv - params.v_th_m9) / params.c_acc
}

/// Accumulation-node step per unit of product (0.125 mV with defaults).
pub fn mv_per_product_on_acc(params: &DeviceParams) -> f64 {
    params.c_sample / params.c_acc * params.mv_per_product()
}

/// Dumps one sample onto the capacitor selected by `negative`.
pub fn accumulate(
    state: AccumulatorState,
    sample: AnalogSample,
    negative: bool,
    params: &DeviceParams,
) -> Result<AccumulatorState> {
    if sample.mv < params.v_th_m9 {
        return Err(Error::Constraint(format!(
            "sample voltage {:.3} mV is below the pass-device threshold {:.3} mV",
            sample.mv, params.v_th_m9
        )));
    }
    if state.count() >= params.n_acc {
        return Err(Error::Capacity {
            count: state.count() + 1,
            limit: params.n_acc,
        });
    }
    let step = delta_v_acc(sample.mv, params);
    let mut next = state;
    let target = if negative {
        next.n_neg += 1;
        &mut next.v_acc_neg
    } else {
        next.n_pos += 1;
        &mut next.v_acc_pos
    };
    *target += step;
    if *target > params.v_th_m9 {
        return Err(Error::Constraint(format!(
            "accumulated {:.3} mV exceeds the pass-device threshold {:.3} mV",
            *target, params.v_th_m9
        )));
    }
    Ok(next)
}

/// Outcome of checking the accumulator operating conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintReport {
    /// Smallest sample the array can produce (full-scale product).
    pub min_sample_mv: f64,
    /// `min_sample_mv - v_th_m9`; the pass device must conduct.
    pub sample_slack_mv: f64,
    pub sample_ok: bool,
    /// Accumulated voltage after `n_acc` zero-product samples.
    pub worst_acc_mv: f64,
    /// `v_th_m9 - worst_acc_mv`; the capacitor must stay below threshold.
    pub acc_slack_mv: f64,
    pub acc_ok: bool,
    /// Smallest accumulation capacitance that keeps `acc_ok`.
    pub c_acc_min_ff: f64,
}

impl ConstraintReport {
    pub fn passed(&self) -> bool {
        self.sample_ok && self.acc_ok
    }
}

/// Reports both accumulator conditions for `params`, with slack in mV.
pub fn check_constraints(params: &DeviceParams) -> ConstraintReport {
    let min_sample_mv = params.v_sample_min;
    let sample_slack_mv = min_sample_mv - params.v_th_m9;
    let per_sample_max = delta_v_acc(params.v_dd, params);
    let worst_acc_mv = params.n_acc as f64 * per_sample_max;
    let acc_slack_mv = params.v_th_m9 - worst_acc_mv;
    let c_acc_min_ff =
        params.c_sample * (params.v_dd - params.v_th_m9) * params.n_acc as f64 / params.v_th_m9;
    ConstraintReport {
        min_sample_mv,
        sample_slack_mv,
        sample_ok: sample_slack_mv >= 0.0,
        worst_acc_mv,
        acc_slack_mv,
        acc_ok: acc_slack_mv >= 0.0,
        c_acc_min_ff,
    }
}

/// SAR-ADC resolution and conversion window for a full `n_acc`-sample
/// accumulation, in mV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcConfig {
    pub bits: u32,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        AdcConfig::matched(&DeviceParams::default())
    }
}

impl AdcConfig {
    /// 4-bit window spanning exactly the voltages `n_acc` samples can reach:
    /// code 15 is an all-zero MAC and code 0 a full-scale MAC.
    pub fn matched(params: &DeviceParams) -> Self {
        let n = params.n_acc as f64;
        AdcConfig {
            bits: 4,
            v_lo: n * delta_v_acc(params.v_sample_min, params),
            v_hi: n * delta_v_acc(params.v_dd, params),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 16 {
            return Err(Error::Config(format!(
                "ADC bits must be in 1..=16, got {}",
                self.bits
            )));
        }
        if !(self.v_lo.is_finite() && self.v_hi.is_finite() && self.v_lo < self.v_hi) {
            return Err(Error::Config("ADC window must satisfy v_lo < v_hi".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    pub fn max_code(&self) -> u32 {
        self.levels() - 1
    }

    pub fn lsb_mv(&self) -> f64 {
        (self.v_hi - self.v_lo) / self.levels() as f64
    }

    /// Window for a capacitor that holds `n` of `n_acc` samples.
    pub fn scaled(&self, n: usize, n_acc: usize) -> AdcConfig {
        let f = n as f64 / n_acc as f64;
        AdcConfig {
            bits: self.bits,
            v_lo: self.v_lo * f,
            v_hi: self.v_hi * f,
        }
    }

    /// Input range `[lo, hi)` and center of `code`.
    pub fn bin(&self, code: u32) -> CodeBin {
        let lsb = self.lsb_mv();
        let lo = self.v_lo + code as f64 * lsb;
        CodeBin {
            code,
            lo_mv: lo,
            hi_mv: lo + lsb,
            center_mv: lo + 0.5 * lsb,
        }
    }

    pub fn code_table(&self) -> Vec<CodeBin> {
        (0..self.levels()).map(|c| self.bin(c)).collect()
    }

    /// One ADC step expressed in units of summed product (`vin * w`).
    pub fn bin_width_products(&self, params: &DeviceParams) -> f64 {
        self.lsb_mv() / mv_per_product_on_acc(params)
    }
}

/// One row of the code-to-voltage table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodeBin {
    pub code: u32,
    pub lo_mv: f64,
    pub hi_mv: f64,
    pub center_mv: f64,
}

/// Bit-serial successive-approximation conversion.
///
/// Each cycle sets the next bit, compares the input against the DAC level of
/// the trial code and keeps the bit if the input is at or above it. Inputs
/// outside the window saturate at 0 or the top code.
pub fn sar_adc(v_in: f64, cfg: &AdcConfig) -> u32 {
    // Input in units of one LSB above v_lo, as seen by the comparator.
    let x = (v_in - cfg.v_lo) / cfg.lsb_mv();
    let mut code = 0u32;
    for bit in (0..cfg.bits).rev() {
        let trial = code | (1 << bit);
        if x >= trial as f64 {
            code = trial;
        }
    }
    code
}

/// Closed-form quantizer equivalent to [`sar_adc`].
pub fn quantize_closed_form(v_in: f64, cfg: &AdcConfig) -> u32 {
    let x = ((v_in - cfg.v_lo) / cfg.lsb_mv()).floor();
    x.clamp(0.0, cfg.max_code() as f64) as u32
}

/// Converts a capacitor holding `n` samples. Returns `None` when it is empty.
pub fn convert(v_acc: f64, n: usize, cfg: &AdcConfig, params: &DeviceParams) -> Option<u32> {
    (n > 0).then(|| sar_adc(v_acc, &cfg.scaled(n, params.n_acc)))
}

/// Estimated product sum behind a code from a capacitor with `n` samples.
///
/// The capacitor voltage is `n * dV(v_dd) - 0.125 mV * sum` (defaults), so
/// a reconstruction voltage is mapped back through that affine relation.
/// Interior codes reconstruct at their bin center. The two saturating codes
/// reconstruct at the window edge they clip against: the window spans
/// exactly the reachable range, so those edges are the zero and full-scale
/// sums, which a ReLU network produces far more often than any other value.
pub fn decode_sum(code: u32, n: usize, cfg: &AdcConfig, params: &DeviceParams) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let window = cfg.scaled(n, params.n_acc);
    let code = code.min(window.max_code());
    let v = if code == window.max_code() {
        window.v_hi
    } else if code == 0 {
        window.v_lo
    } else {
        window.bin(code).center_mv
    };
    let top = n as f64 * delta_v_acc(params.v_dd, params);
    let sum = (top - v) / mv_per_product_on_acc(params);
    sum.clamp(0.0, n as f64 * FULL_SCALE_PRODUCT as f64)
}

/// Signed MAC estimate from the two capacitor codes, rounded half away
/// from zero.
pub fn decode_mac(
    pos: (u32, usize),
    neg: (u32, usize),
    cfg: &AdcConfig,
    params: &DeviceParams,
) -> i64 {
    let estimate = decode_sum(pos.0, pos.1, cfg, params) - decode_sum(neg.0, neg.1, cfg, params);
    estimate.round() as i64
}

/// Tags a charge-share voltage as held on the sampling capacitor.
///
/// `c_sample` is small next to the four bitlines, so the sampled voltage
/// equals the charge-share node.
pub fn sample_node(v: AnalogSample) -> AnalogSample {
    v.at(Stage::SampleNode)
}
