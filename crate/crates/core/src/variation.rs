//! Process-variation models.
//!
//! Two abstraction levels are provided. `Analog` perturbs every product
//! voltage with Gaussian noise; `Digital` perturbs the accumulated voltage
//! by a Gaussian measured in ADC codes. At network level, the same digital
//! sigma becomes a frozen per-output error map.
//!
//! Every random draw comes from a ChaCha8 stream selected by `(seed, index)`,
//! so trials can run in any order or on any number of threads.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{
    check_magnitude, staggered_discharge_product, AnalogSample, DeviceParams, WeightBits,
};
use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::peripherals::{self, AccumulatorState, AdcConfig};

/// Random stream for `(seed, index)`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    #[default]
    None,
    Analog,
    Digital,
}

impl std::str::FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseLevel::None),
            "analog" => Ok(NoiseLevel::Analog),
            "digital" => Ok(NoiseLevel::Digital),
            other => Err(Error::Config(format!(
                "unknown noise level '{other}' (expected none, analog or digital)"
            ))),
        }
    }
}

/// What one code of digital error is worth when injected into an integer
/// MAC output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorUnit {
    /// One unit of summed product (`vin * w`).
    #[default]
    Product,
    /// One ADC bin of a full accumulation window.
    AdcBin,
}

impl std::str::FromStr for ErrorUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(ErrorUnit::Product),
            "adc_bin" | "adc-bin" => Ok(ErrorUnit::AdcBin),
            other => Err(Error::Config(format!(
                "unknown error unit '{other}' (expected product or adc_bin)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub level: NoiseLevel,
    pub sigma_analog_mv: f64,
    pub sigma_digital_code: f64,
    pub seed: u64,
    pub error_unit: ErrorUnit,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            level: NoiseLevel::None,
            sigma_analog_mv: 13.17,
            sigma_digital_code: 0.6,
            seed: 0,
            error_unit: ErrorUnit::Product,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    /// Sigmas taken from the device parameters.
    pub fn from_params(level: NoiseLevel, seed: u64, params: &DeviceParams) -> Self {
        NoiseSpec {
            level,
            sigma_analog_mv: params.sigma_analog_mv,
            sigma_digital_code: params.sigma_digital_code,
            seed,
            error_unit: ErrorUnit::Product,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_analog_mv >= 0.0 && self.sigma_digital_code >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }

    /// MAC units per code of digital error.
    pub fn unit_scale(&self, adc: &AdcConfig, params: &DeviceParams) -> f64 {
        match self.error_unit {
            ErrorUnit::Product => 1.0,
            ErrorUnit::AdcBin => adc.bin_width_products(params),
        }
    }
}

/// Adds Gaussian noise to a product voltage, clamped to the linear
/// discharge range `[v_blb_floor, v_dd]`. Identity unless the level is
/// `Analog`.
pub fn perturb_analog(
    v: AnalogSample,
    spec: &NoiseSpec,
    params: &DeviceParams,
    rng: &mut ChaCha8Rng,
) -> AnalogSample {
    if spec.level != NoiseLevel::Analog || spec.sigma_analog_mv == 0.0 {
        return v;
    }
    let mv = v.mv + spec.sigma_analog_mv * std_normal(rng);
    AnalogSample::new(mv.clamp(params.v_blb_floor, params.v_dd), v.stage)
}

/// Adds code-level noise to an accumulated voltage before conversion.
/// Identity unless the level is `Digital`.
pub fn perturb_accumulated(
    v_acc: f64,
    window: &AdcConfig,
    spec: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if spec.level != NoiseLevel::Digital || spec.sigma_digital_code == 0.0 {
        return v_acc;
    }
    v_acc + spec.sigma_digital_code * window.lsb_mv() * std_normal(rng)
}

/// Digital sigma, in codes, of an output built from `n_groups` analog MAC
/// groups: `sigma_digital_code * sqrt(n_groups)`.
pub fn mac_error_sigma(n_groups: usize, spec: &NoiseSpec) -> f64 {
    spec.sigma_digital_code * (n_groups.max(1) as f64).sqrt()
}

/// Additive error per output element, in MAC units, fixed for as long as
/// the weights it belongs to stay in place.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorMapSample {
    pub values: Vec<f64>,
    /// Sigma each element was drawn with, in MAC units.
    pub sigma_mac: f64,
    pub frozen: bool,
}

impl ErrorMapSample {
    pub fn zeros(len: usize) -> Self {
        ErrorMapSample {
            values: vec![0.0; len],
            sigma_mac: 0.0,
            frozen: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Marks the map stale; the owner must draw a new one before reuse.
    pub fn invalidate(&mut self) {
        self.frozen = false;
    }
}

/// Draws `outputs` independent errors of `sigma_codes * unit` each.
pub fn sample_error_values(
    outputs: usize,
    sigma_mac: f64,
    spec: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> ErrorMapSample {
    if spec.level == NoiseLevel::None || sigma_mac == 0.0 {
        return ErrorMapSample::zeros(outputs);
    }
    let values = (0..outputs).map(|_| sigma_mac * std_normal(rng)).collect();
    ErrorMapSample {
        values,
        sigma_mac,
        frozen: true,
    }
}

/// One error per output element of `layer`, with
/// `sigma = mac_error_sigma(ceil(M K^2 / n_acc))` converted to MAC units.
pub fn sample_error_map(
    layer: &LayerSpec,
    spec: &NoiseSpec,
    adc: &AdcConfig,
    params: &DeviceParams,
    rng: &mut ChaCha8Rng,
) -> ErrorMapSample {
    let groups = layer.mac_groups(params.n_acc);
    let sigma = mac_error_sigma(groups, spec) * spec.unit_scale(adc, params);
    sample_error_values(layer.outputs(), sigma, spec, rng)
}

/// Code distribution of repeated noisy conversions of one MAC.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodeHistogram {
    pub counts: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
    /// Code the noise-free pipeline produces.
    pub nominal_code: u32,
    pub mean: f64,
    pub std: f64,
}

impl CodeHistogram {
    fn from_counts(counts: Vec<u64>, seed: u64, nominal_code: u32) -> Self {
        let trials: u64 = counts.iter().sum();
        let n = trials as f64;
        let mean = counts
            .iter()
            .enumerate()
            .map(|(c, &k)| c as f64 * k as f64)
            .sum::<f64>()
            / n;
        let var = if trials > 1 {
            counts
                .iter()
                .enumerate()
                .map(|(c, &k)| k as f64 * (c as f64 - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        CodeHistogram {
            counts,
            trials,
            seed,
            nominal_code,
            mean,
            std: var.sqrt(),
        }
    }

    pub fn min_code(&self) -> Option<u32> {
        self.counts.iter().position(|&k| k > 0).map(|c| c as u32)
    }

    pub fn max_code(&self) -> Option<u32> {
        self.counts.iter().rposition(|&k| k > 0).map(|c| c as u32)
    }

    /// `code,count` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["code", "count"])?;
        for (code, count) in self.counts.iter().enumerate() {
            w.write_record([code.to_string(), count.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> McSummary {
        McSummary {
            mean: self.mean,
            std: self.std,
            trials: self.trials,
            seed: self.seed,
            nominal_code: self.nominal_code,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McSummary {
    pub mean: f64,
    pub std: f64,
    pub trials: u64,
    pub seed: u64,
    pub nominal_code: u32,
}

/// One conversion of an unsigned MAC (all products on the positive
/// capacitor) through the discharge, accumulation and ADC stages.
fn convert_once(
    vin: &[u8],
    w: &[u8],
    spec: &NoiseSpec,
    adc: &AdcConfig,
    params: &DeviceParams,
    rng: &mut ChaCha8Rng,
) -> Result<u32> {
    let mut state = AccumulatorState::reset();
    for (&a, &b) in vin.iter().zip(w) {
        let product = staggered_discharge_product(a, WeightBits::from_magnitude(b)?, params)?;
        let sampled = peripherals::sample_node(product.product);
        let noisy = perturb_analog(sampled, spec, params, rng);
        state = peripherals::accumulate(state, noisy, false, params)?;
    }
    let window = adc.scaled(state.n_pos, params.n_acc);
    let v = perturb_accumulated(state.v_acc_pos, &window, spec, rng);
    Ok(peripherals::sar_adc(v, &window))
}

/// Repeats one unsigned `vin . w` MAC of at most `n_acc` elements `trials`
/// times under `spec` and histograms the output code.
///
/// Trial `t` draws from `stream(spec.seed, t)`.
pub fn monte_carlo_mac(
    vin: &[u8],
    w: &[u8],
    trials: u64,
    spec: &NoiseSpec,
    adc: &AdcConfig,
    params: &DeviceParams,
) -> Result<CodeHistogram> {
    if vin.len() != w.len() {
        return Err(Error::InputDomain(format!(
            "operand lengths differ: {} inputs vs {} weights",
            vin.len(),
            w.len()
        )));
    }
    if vin.is_empty() || vin.len() > params.n_acc {
        return Err(Error::InputDomain(format!(
            "a single conversion takes 1..={} elements, got {}",
            params.n_acc,
            vin.len()
        )));
    }
    if trials == 0 {
        return Err(Error::InputDomain("trials must be at least 1".into()));
    }
    for (i, (&a, &b)) in vin.iter().zip(w).enumerate() {
        check_magnitude(a).map_err(|_| Error::InputDomain(format!("vin[{i}] = {a} exceeds 15")))?;
        check_magnitude(b).map_err(|_| Error::InputDomain(format!("w[{i}] = {b} exceeds 15")))?;
    }
    spec.validate()?;

    let nominal = convert_once(vin, w, &NoiseSpec::none(), adc, params, &mut stream(0, 0))?;
    let levels = adc.levels() as usize;
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(spec.seed, t);
            convert_once(vin, w, spec, adc, params, &mut rng)
        })
        .try_fold(
            || vec![0u64; levels],
            |mut acc, code| {
                acc[code? as usize] += 1;
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u64; levels],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(CodeHistogram::from_counts(counts, spec.seed, nominal))
}
