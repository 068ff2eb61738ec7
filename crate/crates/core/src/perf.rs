//! Analytic delay and energy of a layer on a von Neumann baseline and on
//! the in-memory array.
//!
//! Canonical units are nanoseconds, picojoules and nanowatts; a power times
//! a time goes through [`Nanowatts::times`], which applies the 1e-9 factor.

use std::fmt;
use std::io::Write;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::LayerSpec;

macro_rules! unit {
    ($name:ident, $suffix:literal) => {
        #[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub f64);

        impl Add for $name {
            type Output = $name;
            fn add(self, rhs: $name) -> $name {
                $name(self.0 + rhs.0)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: $name) {
                self.0 += rhs.0;
            }
        }

        impl Mul<f64> for $name {
            type Output = $name;
            fn mul(self, rhs: f64) -> $name {
                $name(self.0 * rhs)
            }
        }

        /// Same-unit division is a plain ratio.
        impl Div for $name {
            type Output = f64;
            fn div(self, rhs: $name) -> f64 {
                self.0 / rhs.0
            }
        }

        impl Sum for $name {
            fn sum<I: Iterator<Item = $name>>(iter: I) -> $name {
                $name(iter.map(|v| v.0).sum())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $suffix)
            }
        }
    };
}

unit!(Nanoseconds, "ns");
unit!(Picojoules, "pJ");
unit!(Nanowatts, "nW");

impl Nanowatts {
    /// Energy drawn over `t`: nW x ns = 1e-18 J = 1e-9 pJ.
    pub fn times(self, t: Nanoseconds) -> Picojoules {
        Picojoules(self.0 * t.0 * 1e-9)
    }
}

impl Picojoules {
    pub fn to_nanojoules(self) -> f64 {
        self.0 * 1e-3
    }
}

/// Architecture constants of both systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerfParams {
    /// Bits fetched from SRAM to the processor per bank.
    pub b_io: f64,
    /// Bits per weight.
    pub b_w: f64,
    pub n_bank: f64,
    pub n_col: f64,
    /// Parallel digital multipliers in the baseline.
    pub n_mult: f64,
    pub t_read: Nanoseconds,
    pub t_mult: Nanoseconds,
    pub t_amac: Nanoseconds,
    pub t_adc: Nanoseconds,
    pub e_read: Picojoules,
    pub e_mult: Picojoules,
    pub e_amac: Picojoules,
    pub e_adc: Picojoules,
    pub p_leak: Nanowatts,
    /// Analog MACs per ADC conversion.
    pub r: f64,
    /// Round every occupancy fraction up to a whole number of accesses.
    pub ceil_occupancy: bool,
}

impl Default for PerfParams {
    fn default() -> Self {
        PerfParams {
            b_io: 16.0,
            b_w: 5.0,
            n_bank: 4.0,
            n_col: 256.0,
            n_mult: 175.0,
            t_read: Nanoseconds(4.0),
            t_mult: Nanoseconds(4.0),
            t_amac: Nanoseconds(1.0),
            t_adc: Nanoseconds(5.0),
            e_read: Picojoules(5.2),
            e_mult: Picojoules(0.9),
            e_amac: Picojoules(0.254),
            e_adc: Picojoules(0.253),
            p_leak: Nanowatts(2.4),
            r: 10.0,
            ceil_occupancy: false,
        }
    }
}

impl PerfParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("b_io", self.b_io),
            ("b_w", self.b_w),
            ("n_bank", self.n_bank),
            ("n_col", self.n_col),
            ("n_mult", self.n_mult),
            ("t_read", self.t_read.0),
            ("t_mult", self.t_mult.0),
            ("t_amac", self.t_amac.0),
            ("t_adc", self.t_adc.0),
            ("e_read", self.e_read.0),
            ("e_mult", self.e_mult.0),
            ("e_amac", self.e_amac.0),
            ("e_adc", self.e_adc.0),
            ("r", self.r),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.p_leak.0 >= 0.0 && self.p_leak.0.is_finite()) {
            return Err(Error::Config(format!(
                "p_leak must be non-negative, got {}",
                self.p_leak.0
            )));
        }
        Ok(())
    }

    fn occupancy(&self, x: f64) -> f64 {
        if self.ceil_occupancy {
            x.ceil()
        } else {
            x
        }
    }
}

fn mnk2(l: &LayerSpec) -> f64 {
    l.weight_count() as f64
}

fn n_mov2(l: &LayerSpec) -> f64 {
    (l.n_mov * l.n_mov) as f64
}

/// Baseline delay: weight fetch over `B_IO / B_W` words per bank per access,
/// plus multiplication on `N_mult` parallel multipliers.
pub fn vn_delay(l: &LayerSpec, p: &PerfParams) -> Result<Nanoseconds> {
    p.validate()?;
    let fetch = p.occupancy(mnk2(l) / ((p.b_io / p.b_w) * p.n_bank));
    let mult = p.occupancy(mnk2(l) / p.n_mult);
    Ok(p.t_read * fetch + p.t_mult * (mult * n_mov2(l)))
}

pub fn vn_energy(l: &LayerSpec, p: &PerfParams, t_vn: Nanoseconds) -> Picojoules {
    p.e_read * mnk2(l) + p.e_mult * (mnk2(l) * n_mov2(l)) + p.p_leak.times(t_vn)
}

/// In-memory delay: `N_col / B_W` weights per row in each of `N_bank`
/// banks, one analog MAC per position plus an ADC conversion every `R`.
pub fn imac_delay(l: &LayerSpec, p: &PerfParams) -> Result<Nanoseconds> {
    p.validate()?;
    let occupancy = p.occupancy(mnk2(l) / ((p.n_col / p.b_w) * p.n_bank));
    Ok((p.t_amac + p.t_adc * (1.0 / p.r)) * (occupancy * n_mov2(l)))
}

pub fn imac_energy(l: &LayerSpec, p: &PerfParams, t_imac: Nanoseconds) -> Picojoules {
    (p.e_amac + p.e_adc * (1.0 / p.r)) * (mnk2(l) * n_mov2(l)) + p.p_leak.times(t_imac)
}

/// One report row: a layer or the network total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfRow {
    pub layer: String,
    pub t_vn: Nanoseconds,
    pub e_vn: Picojoules,
    pub t_imac: Nanoseconds,
    pub e_imac: Picojoules,
    pub energy_ratio: f64,
    pub delay_ratio: f64,
    /// `energy_ratio * delay_ratio`.
    pub edp_ratio: f64,
}

impl PerfRow {
    fn new(
        layer: String,
        t_vn: Nanoseconds,
        e_vn: Picojoules,
        t_imac: Nanoseconds,
        e_imac: Picojoules,
    ) -> Self {
        let energy_ratio = e_vn / e_imac;
        let delay_ratio = t_vn / t_imac;
        PerfRow {
            layer,
            t_vn,
            e_vn,
            t_imac,
            e_imac,
            energy_ratio,
            delay_ratio,
            edp_ratio: energy_ratio * delay_ratio,
        }
    }
}

pub fn layer_row(l: &LayerSpec, p: &PerfParams) -> Result<PerfRow> {
    l.validate()?;
    let t_vn = vn_delay(l, p)?;
    let t_imac = imac_delay(l, p)?;
    Ok(PerfRow::new(
        l.name.clone(),
        t_vn,
        vn_energy(l, p, t_vn),
        t_imac,
        imac_energy(l, p, t_imac),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkReport {
    pub b_io: f64,
    pub layers: Vec<PerfRow>,
    pub total: PerfRow,
}

impl NetworkReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "layer",
            "t_vn_ns",
            "e_vn_pj",
            "t_imac_ns",
            "e_imac_pj",
            "energy_ratio",
            "delay_ratio",
            "edp_ratio",
        ])?;
        for r in self.layers.iter().chain(std::iter::once(&self.total)) {
            w.write_record([
                r.layer.clone(),
                r.t_vn.0.to_string(),
                r.e_vn.0.to_string(),
                r.t_imac.0.to_string(),
                r.e_imac.0.to_string(),
                r.energy_ratio.to_string(),
                r.delay_ratio.to_string(),
                r.edp_ratio.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Per-layer rows and the network total; ratios of the total are formed
/// from summed energies and delays.
pub fn compare_network(net: &[LayerSpec], p: &PerfParams) -> Result<NetworkReport> {
    p.validate()?;
    let layers = net
        .iter()
        .map(|l| layer_row(l, p))
        .collect::<Result<Vec<_>>>()?;
    let total = PerfRow::new(
        "total".into(),
        layers.iter().map(|r| r.t_vn).sum(),
        layers.iter().map(|r| r.e_vn).sum(),
        layers.iter().map(|r| r.t_imac).sum(),
        layers.iter().map(|r| r.e_imac).sum(),
    );
    Ok(NetworkReport {
        b_io: p.b_io,
        layers,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub b_io: f64,
    pub energy_ratio: f64,
    pub delay_ratio: f64,
    pub edp_ratio: f64,
}

/// Network totals for each `B_IO`.
pub fn sweep_bio(net: &[LayerSpec], p: &PerfParams, bio_values: &[f64]) -> Result<Vec<SweepRow>> {
    if bio_values.is_empty() {
        return Err(Error::InputDomain(
            "B_IO sweep needs at least one value".into(),
        ));
    }
    bio_values
        .iter()
        .map(|&b_io| {
            let r = compare_network(net, &PerfParams { b_io, ..*p })?.total;
            Ok(SweepRow {
                b_io,
                energy_ratio: r.energy_ratio,
                delay_ratio: r.delay_ratio,
                edp_ratio: r.edp_ratio,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["b_io", "energy_ratio", "delay_ratio", "edp_ratio"])?;
    for r in rows {
        w.write_record([
            r.b_io.to_string(),
            r.energy_ratio.to_string(),
            r.delay_ratio.to_string(),
            r.edp_ratio.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Parses `lo:hi:step` into `lo, lo+step, ..., <= hi`.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("expected lo:hi:step, got '{s}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi, step) = (nums[0], nums[1], nums[2]);
    if !(lo > 0.0 && hi >= lo && step > 0.0) {
        return Err(Error::Config(format!(
            "range '{s}' must satisfy 0 < lo <= hi, step > 0"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

/// Energy of one inference on the in-memory array, in nanojoules.
pub fn per_inference_energy(net: &[LayerSpec], p: &PerfParams) -> Result<f64> {
    let mut total = Picojoules(0.0);
    for l in net {
        l.validate()?;
        total += imac_energy(l, p, imac_delay(l, p)?);
    }
    Ok(total.to_nanojoules())
}

/// Components that exist only because of in-memory computing.
pub const INTRODUCED_PERIPHERALS: [&str; 4] = ["ADC", "Accumulator", "DAC", "MUX"];

/// Area per array, in square micrometres.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaTable {
    pub components: Vec<(String, f64)>,
}

impl Default for AreaTable {
    fn default() -> Self {
        let rows = [
            ("SRAM cell", 83100.0),
            ("ADC", 40800.0),
            ("Accumulator", 30600.0),
            ("DAC", 400.0),
            ("MUX", 2100.0),
            ("Decoder", 4800.0),
            ("Column circuit", 44000.0),
        ];
        AreaTable {
            components: rows.iter().map(|(n, a)| (n.to_string(), *a)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AreaSummary {
    pub total_um2: f64,
    /// Share of the in-memory compute peripherals (ADC, accumulator, DAC,
    /// MUX).
    pub peripheral_fraction: f64,
    /// Share of everything except the bitcells.
    pub non_sram_fraction: f64,
}

impl AreaTable {
    pub fn total(&self) -> f64 {
        self.components.iter().map(|(_, a)| a).sum()
    }

    fn area_of(&self, names: &[&str]) -> f64 {
        self.components
            .iter()
            .filter(|(n, _)| names.contains(&n.as_str()))
            .map(|(_, a)| a)
            .sum()
    }

    pub fn summary(&self) -> AreaSummary {
        let total = self.total();
        AreaSummary {
            total_um2: total,
            peripheral_fraction: self.area_of(&INTRODUCED_PERIPHERALS) / total,
            non_sram_fraction: (total - self.area_of(&["SRAM cell"])) / total,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component", "area_um2"])?;
        for (n, a) in &self.components {
            w.write_record([n.clone(), a.to_string()])?;
        }
        w.write_record(["total".to_string(), self.total().to_string()])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_layer() -> LayerSpec {
        LayerSpec::fc("u", 1, 1).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn unit_layer_reduces() {
        let p = PerfParams::default();
        let l = unit_layer();
        let t = vn_delay(&l, &p).unwrap().0;
        assert!(close(t, 4.0 * 5.0 / (16.0 * 4.0) + 4.0 / 175.0));
        let e = vn_energy(&l, &p, Nanoseconds(t)).0;
        assert!(close(e, 5.2 + 0.9 + 2.4 * t * 1e-9));
        let ti = imac_delay(&l, &p).unwrap().0;
        assert!(close(ti, 5.0 / (256.0 * 4.0) * (1.0 + 0.5)));
        let ei = imac_energy(&l, &p, Nanoseconds(ti)).0;
        assert!(close(ei, 0.2793 + 2.4 * ti * 1e-9));
    }

    #[test]
    fn zero_leakage_decouples_energy() {
        let p = PerfParams {
            p_leak: Nanowatts(0.0),
            ..PerfParams::default()
        };
        let l = LayerSpec::fc("f", 400, 120).unwrap();
        assert_eq!(
            vn_energy(&l, &p, Nanoseconds(1.0)),
            vn_energy(&l, &p, Nanoseconds(1e9))
        );
    }

    #[test]
    fn doubling_bio_halves_fetch_term_only() {
        let l = LayerSpec::conv("c", 6, 16, 5, 14).unwrap();
        let p = PerfParams::default();
        let p2 = PerfParams { b_io: 32.0, ..p };
        let mult = p.t_mult.0 * (2400.0 / 175.0) * 100.0;
        let f1 = vn_delay(&l, &p).unwrap().0 - mult;
        let f2 = vn_delay(&l, &p2).unwrap().0 - mult;
        assert!((f1 / f2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn adc_terms_vanish_for_large_r() {
        let p = PerfParams {
            r: 1e300,
            p_leak: Nanowatts(0.0),
            ..PerfParams::default()
        };
        let l = unit_layer();
        let t = imac_delay(&l, &p).unwrap();
        assert!(close(t.0, 5.0 / 1024.0));
        assert!(close(imac_energy(&l, &p, t).0, 0.254));
    }

    #[test]
    fn ceil_mode_rounds_occupancy() {
        let p = PerfParams {
            ceil_occupancy: true,
            ..PerfParams::default()
        };
        let t = imac_delay(&unit_layer(), &p).unwrap();
        assert!(close(t.0, 1.5));
    }

    #[test]
    fn edp_identity_and_single_layer() {
        let l = LayerSpec::conv("c", 6, 16, 5, 14).unwrap();
        let r = compare_network(std::slice::from_ref(&l), &PerfParams::default()).unwrap();
        assert_eq!(r.layers[0].energy_ratio, r.total.energy_ratio);
        assert_eq!(
            r.total.edp_ratio,
            r.total.energy_ratio * r.total.delay_ratio
        );
    }

    #[test]
    fn empty_network_has_no_energy() {
        assert_eq!(
            per_inference_energy(&[], &PerfParams::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn ranges() {
        assert_eq!(
            parse_range("16:64:16").unwrap(),
            vec![16.0, 32.0, 48.0, 64.0]
        );
        assert!(parse_range("16:8:1").is_err());
        assert!(parse_range("a:b").is_err());
    }

    #[test]
    fn area_fractions() {
        let s = AreaTable::default().summary();
        assert_eq!(s.total_um2, 205800.0);
        assert!((s.peripheral_fraction - 73900.0 / 205800.0).abs() < 1e-15);
        assert!((s.non_sram_fraction - 122700.0 / 205800.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = PerfParams {
            n_bank: 0.0,
            ..PerfParams::default()
        };
        assert!(matches!(vn_delay(&unit_layer(), &p), Err(Error::Config(_))));
    }
}
