//! Shape of a convolution or fully connected layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `M` input maps, `N` output maps, `K x K` kernel over an `L x L` input,
/// producing `N_mov x N_mov` outputs per map.
///
/// A fully connected layer is the `K = L = N_mov = 1` case with `M` and `N`
/// counting neurons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    #[serde(default)]
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub n_mov: usize,
}

impl LayerSpec {
    /// Unpadded stride-1 convolution: `N_mov = L - K + 1`.
    pub fn conv(name: impl Into<String>, m: usize, n: usize, k: usize, l: usize) -> Result<Self> {
        if k == 0 || k > l {
            return Err(Error::Shape(format!(
                "kernel {k} does not fit input side {l}"
            )));
        }
        let spec = LayerSpec {
            name: name.into(),
            m,
            n,
            k,
            l,
            n_mov: l - k + 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fc(name: impl Into<String>, inputs: usize, outputs: usize) -> Result<Self> {
        let spec = LayerSpec {
            name: name.into(),
            m: inputs,
            n: outputs,
            k: 1,
            l: 1,
            n_mov: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 || self.l == 0 || self.n_mov == 0 {
            return Err(Error::Shape(format!(
                "layer '{}' has a zero dimension",
                self.name
            )));
        }
        if self.k > self.l {
            return Err(Error::Shape(format!(
                "layer '{}': kernel side {} exceeds input side {}",
                self.name, self.k, self.l
            )));
        }
        Ok(())
    }

    pub fn is_fc(&self) -> bool {
        self.k == 1 && self.l == 1 && self.n_mov == 1
    }

    /// `M * N * K^2`: weights in the layer.
    pub fn weight_count(&self) -> usize {
        self.m * self.n * self.k * self.k
    }

    /// Products summed into one output element, `M * K^2`.
    pub fn fan_in(&self) -> usize {
        self.m * self.k * self.k
    }

    /// Output elements, `N * N_mov^2`.
    pub fn outputs(&self) -> usize {
        self.n * self.n_mov * self.n_mov
    }

    /// `M * N * K^2 * N_mov^2`.
    pub fn macs(&self) -> usize {
        self.weight_count() * self.n_mov * self.n_mov
    }

    /// Number of `r`-element analog MAC groups behind one output element.
    pub fn mac_groups(&self, r: usize) -> usize {
        self.fan_in().div_ceil(r)
    }
}
