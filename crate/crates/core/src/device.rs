//! Bitline-discharge multiplication in a 6T SRAM column group.
//!
//! A 4-bit input magnitude is turned into a wordline amplitude by a linear
//! DAC. Each of the four cells holding a weight bit discharges its BLB at a
//! rate set by the wordline overdrive, for a time that makes the per-bit
//! discharge follow the bit significance. Shorting the four BLBs together
//! (charge sharing) averages them into the product voltage `V_ch-sh`.
//!
//! All timing is normalized to the unit `tau`; the wordline pulse is `8 tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest operand magnitude (4 bits).
pub const MAX_MAGNITUDE: u8 = 15;

/// Largest single product, `15 * 15`.
pub const FULL_SCALE_PRODUCT: u32 = (MAX_MAGNITUDE as u32) * (MAX_MAGNITUDE as u32);

/// Wordline pulse width in units of `tau`.
pub const WORDLINE_PULSE_TAU: f64 = 8.0;

/// Analog constants of the array and its accumulator.
///
/// Voltages in mV, capacitances in fF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub v_dd: f64,
    /// Wordline amplitude for a zero input.
    pub v_wl_min: f64,
    /// Wordline amplitude for a full-scale input (DAC ceiling).
    pub v_wl_max: f64,
    /// Lowest bitline voltage that still discharges linearly.
    pub v_blb_floor: f64,
    /// Full-scale discharge endpoints, MSB bitline first.
    pub blb_targets: [f64; 4],
    /// Lower end of the product node range; the full-scale product lands here.
    pub v_sample_min: f64,
    pub c_bitline: f64,
    pub c_sample: f64,
    pub c_acc: f64,
    /// Threshold of the PMOS pass device feeding the accumulation capacitor.
    pub v_th_m9: f64,
    /// Accumulations per ADC conversion.
    pub n_acc: usize,
    pub sigma_analog_mv: f64,
    pub sigma_digital_code: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            v_dd: 1200.0,
            v_wl_min: 300.0,
            v_wl_max: 1000.0,
            v_blb_floor: 350.0,
            blb_targets: [350.0, 775.0, 987.5, 1093.75],
            v_sample_min: 750.0,
            c_bitline: 50.0,
            c_sample: 2.5,
            c_acc: 40.0,
            v_th_m9: 600.0,
            n_acc: 10,
            sigma_analog_mv: 13.17,
            sigma_digital_code: 0.6,
        }
    }
}

impl DeviceParams {
    /// Checks the structural invariants. The accumulator headroom condition is
    /// reported separately by [`crate::peripherals::check_constraints`].
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v_dd", self.v_dd),
            ("v_wl_min", self.v_wl_min),
            ("v_wl_max", self.v_wl_max),
            ("v_blb_floor", self.v_blb_floor),
            ("v_sample_min", self.v_sample_min),
            ("c_bitline", self.c_bitline),
            ("c_sample", self.c_sample),
            ("c_acc", self.c_acc),
            ("v_th_m9", self.v_th_m9),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.n_acc == 0 {
            return Err(Error::Config("n_acc must be at least 1".into()));
        }
        if self.v_blb_floor >= self.v_dd {
            return Err(Error::Config("v_blb_floor must be below v_dd".into()));
        }
        if self.v_wl_min >= self.v_wl_max || self.v_wl_max > self.v_dd {
            return Err(Error::Config(
                "wordline span must satisfy v_wl_min < v_wl_max <= v_dd".into(),
            ));
        }
        if self.blb_targets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "blb_targets must be strictly increasing".into(),
            ));
        }
        if self.blb_targets[0] != self.v_blb_floor {
            return Err(Error::Config(
                "blb_targets[0] must equal v_blb_floor".into(),
            ));
        }
        if self.blb_targets[3] >= self.v_dd {
            return Err(Error::Config("blb_targets must lie below v_dd".into()));
        }
        if self.v_sample_min >= self.v_dd || self.v_sample_min < self.v_th_m9 {
            return Err(Error::Config(
                "v_sample_min must lie in [v_th_m9, v_dd)".into(),
            ));
        }
        if self.c_sample > self.c_acc {
            return Err(Error::Config("c_sample must not exceed c_acc".into()));
        }
        if self.sigma_analog_mv < 0.0 || self.sigma_digital_code < 0.0 {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }

    /// Product-node drop per unit of `vin * w`, in mV (2 mV with defaults).
    pub fn mv_per_product(&self) -> f64 {
        (self.v_dd - self.v_sample_min) / FULL_SCALE_PRODUCT as f64
    }
}

/// Sign-magnitude operand: a sign bit plus a 4-bit magnitude.
///
/// A zero magnitude is sign-agnostic: `+0 == -0`.
#[derive(Debug, Clone, Copy, Eq, Serialize, Deserialize)]
pub struct SignedWord {
    negative: bool,
    magnitude: u8,
}

impl PartialEq for SignedWord {
    fn eq(&self, other: &Self) -> bool {
        self.magnitude == other.magnitude
            && (self.magnitude == 0 || self.negative == other.negative)
    }
}

impl SignedWord {
    pub const ZERO: SignedWord = SignedWord {
        negative: false,
        magnitude: 0,
    };

    pub fn new(negative: bool, magnitude: u8) -> Result<Self> {
        check_magnitude(magnitude)?;
        Ok(SignedWord {
            negative,
            magnitude,
        })
    }

    /// Builds a word from a signed integer in `-15..=15`.
    pub fn from_i32(value: i32) -> Result<Self> {
        if value.unsigned_abs() > MAX_MAGNITUDE as u32 {
            return Err(Error::InputDomain(format!(
                "{value} does not fit sign + 4-bit magnitude"
            )));
        }
        Ok(SignedWord {
            negative: value < 0,
            magnitude: value.unsigned_abs() as u8,
        })
    }

    pub fn magnitude(self) -> u8 {
        self.magnitude
    }

    pub fn is_negative(self) -> bool {
        self.negative && self.magnitude != 0
    }

    /// Raw sign bit, which may be set on a zero magnitude.
    pub fn sign_bit(self) -> bool {
        self.negative
    }

    pub fn to_i32(self) -> i32 {
        if self.is_negative() {
            -(self.magnitude as i32)
        } else {
            self.magnitude as i32
        }
    }

    pub fn negated(self) -> Self {
        SignedWord {
            negative: !self.negative,
            magnitude: self.magnitude,
        }
    }

    /// Sign bit of the product `self * other`: XOR of the operand sign bits.
    pub fn product_sign(self, other: SignedWord) -> bool {
        self.negative ^ other.negative
    }
}

impl std::fmt::Display for SignedWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}{}",
            if self.negative { '-' } else { '+' },
            self.magnitude
        )
    }
}

pub(crate) fn check_magnitude(magnitude: u8) -> Result<()> {
    if magnitude > MAX_MAGNITUDE {
        return Err(Error::InputDomain(format!(
            "magnitude {magnitude} exceeds {MAX_MAGNITUDE}"
        )));
    }
    Ok(())
}

/// Four stored weight bits, MSB first (`w3, w2, w1, w0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightBits(pub [bool; 4]);

impl WeightBits {
    pub fn from_magnitude(w: u8) -> Result<Self> {
        check_magnitude(w)?;
        Ok(WeightBits([w & 8 != 0, w & 4 != 0, w & 2 != 0, w & 1 != 0]))
    }

    pub fn magnitude(self) -> u8 {
        self.0
            .iter()
            .fold(0u8, |acc, &bit| (acc << 1) | u8::from(bit))
    }
}

/// Analog drive applied to the wordline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WordlineDrive {
    pub amplitude_mv: f64,
    /// Pulse width in units of `tau`.
    pub duration_tau: f64,
}

/// Circuit node a voltage was observed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bitline,
    ChargeShare,
    SampleNode,
    AccumulationNode,
}

/// A node voltage in mV tagged with where it was taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalogSample {
    pub mv: f64,
    pub stage: Stage,
}

impl AnalogSample {
    pub fn new(mv: f64, stage: Stage) -> Self {
        AnalogSample { mv, stage }
    }

    /// The same voltage seen at another node (ideal buffer / switch).
    pub fn at(self, stage: Stage) -> Self {
        AnalogSample { mv: self.mv, stage }
    }
}

/// Linear input DAC: `v_wl_min + vin * (v_wl_max - v_wl_min) / 15`.
pub fn dac_map(vin: u8, params: &DeviceParams) -> Result<WordlineDrive> {
    check_magnitude(vin)?;
    let span = params.v_wl_max - params.v_wl_min;
    Ok(WordlineDrive {
        amplitude_mv: params.v_wl_min + vin as f64 * span / MAX_MAGNITUDE as f64,
        duration_tau: WORDLINE_PULSE_TAU,
    })
}

/// Normalized BLB discharge rate for a wordline amplitude.
///
/// The access transistor is in its constant-current region, so the rate
/// follows the overdrive above `v_wl_min`; it is 0 at cutoff and 1 at the DAC
/// ceiling.
pub fn discharge_rate(amplitude_mv: f64, params: &DeviceParams) -> f64 {
    let rate = (amplitude_mv - params.v_wl_min) / (params.v_wl_max - params.v_wl_min);
    rate.clamp(0.0, 1.0)
}

/// Closed-form product voltage: `v_dd - k * vin * w` with `k` chosen so the
/// full-scale product lands on `v_sample_min`.
pub fn ideal_product_voltage(vin: u8, w: u8, params: &DeviceParams) -> Result<AnalogSample> {
    check_magnitude(vin)?;
    check_magnitude(w)?;
    let product = vin as f64 * w as f64;
    Ok(AnalogSample::new(
        params.v_dd - params.mv_per_product() * product,
        Stage::ChargeShare,
    ))
}

/// Per-bitline detail of one staggered-discharge multiplication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StaggeredProduct {
    pub drive: WordlineDrive,
    pub rate: f64,
    /// Final BLB voltages, MSB bitline first.
    pub bitlines_mv: [f64; 4],
    /// Plain average of the four bitlines (equal capacitances).
    pub shared_raw_mv: f64,
    /// Product node after the fixed gain/offset trim.
    pub product: AnalogSample,
}

/// Gain of the trim that maps the raw charge-share swing onto
/// `[v_sample_min, v_dd]`. Fixed by the two full-scale endpoints.
fn recalibration_gain(params: &DeviceParams) -> f64 {
    let raw_full_scale: f64 = params.blb_targets.iter().sum::<f64>() / 4.0;
    (params.v_dd - params.v_sample_min) / (params.v_dd - raw_full_scale)
}

/// Simulates the four bitlines of one column group and charge-shares them.
///
/// Bit `i` (MSB first) discharges from `v_dd` towards `blb_targets[i]`,
/// scaled by the wordline rate; a cleared bit leaves its bitline at `v_dd`.
pub fn staggered_discharge_product(
    vin: u8,
    w_bits: WeightBits,
    params: &DeviceParams,
) -> Result<StaggeredProduct> {
    let drive = dac_map(vin, params)?;
    let rate = discharge_rate(drive.amplitude_mv, params);

    let mut bitlines_mv = [params.v_dd; 4];
    for ((blb, &bit), &target) in bitlines_mv
        .iter_mut()
        .zip(w_bits.0.iter())
        .zip(params.blb_targets.iter())
    {
        if bit {
            *blb = params.v_dd - rate * (params.v_dd - target);
        }
    }
    let shared_raw_mv = bitlines_mv.iter().sum::<f64>() / 4.0;
    let trimmed = params.v_dd - recalibration_gain(params) * (params.v_dd - shared_raw_mv);

    Ok(StaggeredProduct {
        drive,
        rate,
        bitlines_mv,
        shared_raw_mv,
        product: AnalogSample::new(trimmed, Stage::ChargeShare),
    })
}
