//! Array-level signed dot products.
//!
//! A weight occupies one sign cell and four magnitude cells of a row; the
//! row holds `n_cols / bits_per_weight` weights, one per column group. A dot
//! product runs down a column group: row `r` is driven with `vin[r]`, the
//! group multiplies it by its stored weight and the product is dumped onto
//! the positive or negative capacitor by the XOR of the two sign bits. Every
//! `R` rows both capacitors are converted, decoded and reset; the decoded
//! group values are summed digitally.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{staggered_discharge_product, DeviceParams, SignedWord, WeightBits};
use crate::error::{Error, Result};
use crate::peripherals::{self, AccumulatorState, AdcConfig};
use crate::variation::{
    self, mac_error_sigma, perturb_analog, ErrorMapSample, NoiseLevel, NoiseSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Cells per weight: one sign cell plus four magnitude cells.
    pub bits_per_weight: usize,
    /// Products accumulated per ADC conversion.
    pub r_amortization: usize,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            n_rows: 256,
            n_cols: 256,
            bits_per_weight: 5,
            r_amortization: 10,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self, params: &DeviceParams) -> Result<()> {
        if self.bits_per_weight != 5 {
            return Err(Error::Config(format!(
                "bits_per_weight must be 5 (sign + 4-bit magnitude), got {}",
                self.bits_per_weight
            )));
        }
        if self.n_rows == 0 || self.n_cols < self.bits_per_weight {
            return Err(Error::Config(format!(
                "array {}x{} cannot hold a single weight",
                self.n_rows, self.n_cols
            )));
        }
        if self.r_amortization != params.n_acc {
            return Err(Error::Config(format!(
                "r_amortization ({}) must equal n_acc ({})",
                self.r_amortization, params.n_acc
            )));
        }
        Ok(())
    }

    /// Weights per row.
    pub fn groups_per_row(&self) -> usize {
        self.n_cols / self.bits_per_weight
    }
}

/// Weights placed in the array: `rows` input positions by `groups` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredMatrix {
    rows: usize,
    groups: usize,
    bits_per_weight: usize,
    /// Row-major `rows x groups`.
    weights: Vec<SignedWord>,
    error_map: Option<ErrorMapSample>,
}

impl StoredMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn weight(&self, row: usize, group: usize) -> SignedWord {
        self.weights[row * self.groups + group]
    }

    /// Weights feeding output `group`, in row order.
    pub fn column(&self, group: usize) -> Vec<SignedWord> {
        (0..self.rows).map(|r| self.weight(r, group)).collect()
    }

    /// Array row and the cell columns `[start, end)` holding a weight. The
    /// first cell is the sign, the remaining four the magnitude.
    pub fn cells(&self, row: usize, group: usize) -> (usize, std::ops::Range<usize>) {
        let start = group * self.bits_per_weight;
        (row, start..start + self.bits_per_weight)
    }

    pub fn error_map(&self) -> Option<&ErrorMapSample> {
        self.error_map.as_ref().filter(|m| m.frozen)
    }

    /// Rewrites one weight. Any attached error map belongs to the old
    /// placement and is invalidated.
    pub fn set_weight(&mut self, row: usize, group: usize, w: SignedWord) -> Result<()> {
        if row >= self.rows || group >= self.groups {
            return Err(Error::Placement(format!(
                "({row}, {group}) is outside the {}x{} matrix",
                self.rows, self.groups
            )));
        }
        self.weights[row * self.groups + group] = w;
        if let Some(map) = self.error_map.as_mut() {
            map.invalidate();
        }
        Ok(())
    }

    /// Draws a fresh error map for the current placement.
    pub fn resample_error_map(
        &mut self,
        noise: &NoiseSpec,
        adc: &AdcConfig,
        params: &DeviceParams,
        rng: &mut ChaCha8Rng,
    ) {
        self.error_map = match noise.level {
            NoiseLevel::None => None,
            _ => {
                let groups = self.rows.div_ceil(params.n_acc);
                let sigma = mac_error_sigma(groups, noise) * noise.unit_scale(adc, params);
                Some(variation::sample_error_values(
                    self.groups,
                    sigma,
                    noise,
                    rng,
                ))
            }
        };
    }
}

/// Places a `rows x groups` weight matrix row-major in the array.
///
/// With an active noise spec, an error map is drawn from stream
/// `(noise.seed, 0)`.
pub fn store_weights(
    matrix: &[Vec<SignedWord>],
    cfg: &ArrayConfig,
    noise: &NoiseSpec,
    adc: &AdcConfig,
    params: &DeviceParams,
) -> Result<StoredMatrix> {
    let rows = matrix.len();
    let groups = matrix.first().map_or(0, Vec::len);
    if rows == 0 || groups == 0 {
        return Err(Error::Placement("empty weight matrix".into()));
    }
    if let Some((i, r)) = matrix.iter().enumerate().find(|(_, r)| r.len() != groups) {
        return Err(Error::Placement(format!(
            "row {i} has {} weights, expected {groups}",
            r.len()
        )));
    }
    if rows > cfg.n_rows {
        return Err(Error::Placement(format!(
            "{rows} rows exceed the {} array rows",
            cfg.n_rows
        )));
    }
    if groups > cfg.groups_per_row() {
        return Err(Error::Placement(format!(
            "{groups} weights per row exceed the {} that fit in {} columns",
            cfg.groups_per_row(),
            cfg.n_cols
        )));
    }
    let mut stored = StoredMatrix {
        rows,
        groups,
        bits_per_weight: cfg.bits_per_weight,
        weights: matrix.iter().flatten().copied().collect(),
        error_map: None,
    };
    stored.resample_error_map(noise, adc, params, &mut variation::stream(noise.seed, 0));
    Ok(stored)
}

/// Reference dot product in plain integers.
pub fn exact_mac_oracle(vin: &[SignedWord], w: &[SignedWord]) -> Result<i64> {
    if vin.len() != w.len() {
        return Err(Error::InputDomain(format!(
            "operand lengths differ: {} vs {}",
            vin.len(),
            w.len()
        )));
    }
    Ok(vin
        .iter()
        .zip(w)
        .map(|(a, b)| a.to_i32() as i64 * b.to_i32() as i64)
        .sum())
}

/// One product on its way to the accumulator.
#[derive(Debug, Clone, Serialize)]
pub struct ElementTrace {
    pub vin: i32,
    pub w: i32,
    pub wordline_mv: f64,
    /// MSB bitline first.
    pub bitlines_mv: [f64; 4],
    pub v_ch_sh_mv: f64,
    pub v_sample_mv: f64,
    pub negative: bool,
    pub delta_v_acc_mv: f64,
}

/// One `R`-element conversion.
#[derive(Debug, Clone, Serialize)]
pub struct GroupTrace {
    pub elements: Vec<ElementTrace>,
    pub v_acc_pos_mv: f64,
    pub v_acc_neg_mv: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub code_pos: Option<u32>,
    pub code_neg: Option<u32>,
    pub decoded: i64,
}

/// Device, ADC and array parameters bundled for dot-product evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImacEngine {
    pub params: DeviceParams,
    pub adc: AdcConfig,
    pub array: ArrayConfig,
}

impl ImacEngine {
    pub fn new(params: DeviceParams, adc: AdcConfig, array: ArrayConfig) -> Result<Self> {
        params.validate()?;
        adc.validate()?;
        array.validate(&params)?;
        Ok(ImacEngine { params, adc, array })
    }

    /// Analog dot product of arbitrary length, split into `R`-element
    /// conversions whose decoded values are summed.
    pub fn mac(
        &self,
        vin: &[SignedWord],
        w: &[SignedWord],
        noise: &NoiseSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<i64> {
        self.run(vin, w, noise, rng, None)
    }

    /// [`ImacEngine::mac`] keeping every intermediate voltage and code.
    pub fn mac_traced(
        &self,
        vin: &[SignedWord],
        w: &[SignedWord],
        noise: &NoiseSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<(i64, Vec<GroupTrace>)> {
        let mut trace = Vec::new();
        let value = self.run(vin, w, noise, rng, Some(&mut trace))?;
        Ok((value, trace))
    }

    fn run(
        &self,
        vin: &[SignedWord],
        w: &[SignedWord],
        noise: &NoiseSpec,
        rng: &mut ChaCha8Rng,
        mut trace: Option<&mut Vec<GroupTrace>>,
    ) -> Result<i64> {
        if vin.len() != w.len() {
            return Err(Error::InputDomain(format!(
                "operand lengths differ: {} inputs vs {} weights",
                vin.len(),
                w.len()
            )));
        }
        let p = &self.params;
        let mut total = 0i64;
        for (a_group, w_group) in vin
            .chunks(self.array.r_amortization)
            .zip(w.chunks(self.array.r_amortization))
        {
            let mut state = AccumulatorState::reset();
            let mut elements = Vec::new();
            for (&a, &b) in a_group.iter().zip(w_group) {
                let product = staggered_discharge_product(
                    a.magnitude(),
                    WeightBits::from_magnitude(b.magnitude())?,
                    p,
                )?;
                let sampled =
                    perturb_analog(peripherals::sample_node(product.product), noise, p, rng);
                let negative = a.product_sign(b);
                state = peripherals::accumulate(state, sampled, negative, p)?;
                if trace.is_some() {
                    elements.push(ElementTrace {
                        vin: a.to_i32(),
                        w: b.to_i32(),
                        wordline_mv: product.drive.amplitude_mv,
                        bitlines_mv: product.bitlines_mv,
                        v_ch_sh_mv: product.product.mv,
                        v_sample_mv: sampled.mv,
                        negative,
                        delta_v_acc_mv: peripherals::delta_v_acc(sampled.mv, p),
                    });
                }
            }
            let code_pos = peripherals::convert(state.v_acc_pos, state.n_pos, &self.adc, p);
            let code_neg = peripherals::convert(state.v_acc_neg, state.n_neg, &self.adc, p);
            let decoded = peripherals::decode_mac(
                (code_pos.unwrap_or(0), state.n_pos),
                (code_neg.unwrap_or(0), state.n_neg),
                &self.adc,
                p,
            );
            total += decoded;
            if let Some(t) = trace.as_deref_mut() {
                t.push(GroupTrace {
                    elements,
                    v_acc_pos_mv: state.v_acc_pos,
                    v_acc_neg_mv: state.v_acc_neg,
                    n_pos: state.n_pos,
                    n_neg: state.n_neg,
                    code_pos,
                    code_neg,
                    decoded,
                });
            }
        }
        Ok(total)
    }

    /// Dot product of `vin` with column group `group` of `stored`. A frozen
    /// error map, when attached, is added to the decoded value.
    pub fn dot_product(
        &self,
        vin: &[SignedWord],
        stored: &StoredMatrix,
        group: usize,
        noise: &NoiseSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<i64> {
        if group >= stored.groups() {
            return Err(Error::InputDomain(format!(
                "column group {group} out of range (matrix has {})",
                stored.groups()
            )));
        }
        if vin.len() != stored.rows() {
            return Err(Error::InputDomain(format!(
                "{} inputs for a matrix with {} rows",
                vin.len(),
                stored.rows()
            )));
        }
        let value = self.mac(vin, &stored.column(group), noise, rng)?;
        let error = match (noise.level, stored.error_map()) {
            (NoiseLevel::Digital, Some(map)) => map.values[group],
            _ => 0.0,
        };
        Ok((value as f64 + error).round() as i64)
    }

    /// One ADC step in product units for a full conversion.
    pub fn bin_width_products(&self) -> f64 {
        self.adc.bin_width_products(&self.params)
    }
}
