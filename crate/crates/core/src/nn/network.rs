//! Network topology descriptions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor_file::TensorFile;
use super::Tensor;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;

fn two() -> usize {
    2
}

/// One stage of a feed-forward network. Convolutions are stride 1 with
/// symmetric zero padding; weights are looked up as `<name>.weight`
/// (`[out, in, k, k]` or `[out, in]`) and `<name>.bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default)]
        padding: usize,
    },
    Fc {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    MaxPool {
        #[serde(default = "two")]
        size: usize,
    },
    Relu {},
    Flatten {},
    /// Training-time only; the identity at inference.
    Dropout {
        #[serde(default)]
        rate: f64,
    },
}

impl Layer {
    pub fn conv(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    ) -> Self {
        Layer::Conv {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            padding,
        }
    }

    pub fn fc(name: &str, inputs: usize, outputs: usize) -> Self {
        Layer::Fc {
            name: name.into(),
            inputs,
            outputs,
        }
    }

    /// Name of a layer that owns weights.
    pub fn weight_name(&self) -> Option<&str> {
        match self {
            Layer::Conv { name, .. } | Layer::Fc { name, .. } => Some(name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// conv(1->6, 5x5, pad 2) -> pool -> conv(6->16, 5x5) -> pool ->
    /// fc(400->120) -> fc(120->84) -> fc(84->10), ReLU after every hidden
    /// layer.
    pub fn lenet5() -> Self {
        NetworkSpec {
            name: "lenet5".into(),
            input: [1, 28, 28],
            layers: vec![
                Layer::conv("conv1", 1, 6, 5, 2),
                Layer::Relu {},
                Layer::MaxPool { size: 2 },
                Layer::conv("conv2", 6, 16, 5, 0),
                Layer::Relu {},
                Layer::MaxPool { size: 2 },
                Layer::Flatten {},
                Layer::fc("fc1", 400, 120),
                Layer::Relu {},
                Layer::fc("fc2", 120, 84),
                Layer::Relu {},
                Layer::fc("fc3", 84, 10),
            ],
        }
    }

    /// Seven 3x3 convolutions (64, 64, 128, 128, 256, 256, 256 maps, pad 1)
    /// with 2x2 pooling after the 2nd, 4th and 7th, then 4096 -> 4096 ->
    /// 4096 -> 10 fully connected.
    pub fn vgg_cifar10() -> Self {
        let mut layers = Vec::new();
        let convs = [
            ("conv1", 3, 64, Some(0.3), false),
            ("conv2", 64, 64, None, true),
            ("conv3", 64, 128, Some(0.4), false),
            ("conv4", 128, 128, None, true),
            ("conv5", 128, 256, Some(0.4), false),
            ("conv6", 256, 256, Some(0.4), false),
            ("conv7", 256, 256, None, true),
        ];
        for (name, cin, cout, dropout, pool) in convs {
            layers.push(Layer::conv(name, cin, cout, 3, 1));
            layers.push(Layer::Relu {});
            if let Some(rate) = dropout {
                layers.push(Layer::Dropout { rate });
            }
            if pool {
                layers.push(Layer::MaxPool { size: 2 });
            }
        }
        layers.push(Layer::Flatten {});
        layers.push(Layer::fc("fc1", 4096, 4096));
        layers.push(Layer::Relu {});
        layers.push(Layer::Dropout { rate: 0.5 });
        layers.push(Layer::fc("fc2", 4096, 4096));
        layers.push(Layer::Relu {});
        layers.push(Layer::Dropout { rate: 0.5 });
        layers.push(Layer::fc("fc3", 4096, 10));
        NetworkSpec {
            name: "vgg-cifar10".into(),
            input: [3, 32, 32],
            layers,
        }
    }

    /// A built-in name (`lenet5`, `vgg`) or a path to a JSON description.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "lenet5" | "lenet" => Ok(Self::lenet5()),
            "vgg" | "vgg-cifar10" => Ok(Self::vgg_cifar10()),
            path => Self::from_json_file(Path::new(path)),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: NetworkSpec = serde_json::from_str(&text)?;
        spec.shapes()?;
        Ok(spec)
    }

    /// Activation shape after every layer, starting with the input.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        if shape.contains(&0) {
            return Err(Error::Shape(format!(
                "input shape {shape:?} has a zero dimension"
            )));
        }
        let mut out = vec![shape];
        for (i, layer) in self.layers.iter().enumerate() {
            let [c, h, w] = shape;
            shape = match layer {
                Layer::Conv {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                } => {
                    if *in_channels != c {
                        return Err(Error::Shape(format!(
                            "{name}: expects {in_channels} input maps, gets {c}"
                        )));
                    }
                    if *kernel == 0
                        || *out_channels == 0
                        || h + 2 * padding < *kernel
                        || w + 2 * padding < *kernel
                    {
                        return Err(Error::Shape(format!(
                            "{name}: {kernel}x{kernel} kernel does not fit {h}x{w} (padding {padding})"
                        )));
                    }
                    [
                        *out_channels,
                        h + 2 * padding - kernel + 1,
                        w + 2 * padding - kernel + 1,
                    ]
                }
                Layer::Fc {
                    name,
                    inputs,
                    outputs,
                } => {
                    if *inputs != c * h * w {
                        return Err(Error::Shape(format!(
                            "{name}: expects {inputs} inputs, gets {}",
                            c * h * w
                        )));
                    }
                    if *outputs == 0 {
                        return Err(Error::Shape(format!("{name}: zero outputs")));
                    }
                    [*outputs, 1, 1]
                }
                Layer::MaxPool { size } => {
                    if *size == 0 || h < *size || w < *size {
                        return Err(Error::Shape(format!(
                            "layer {i}: {size}x{size} pool does not fit {h}x{w}"
                        )));
                    }
                    [c, h / size, w / size]
                }
                Layer::Flatten {} => [c * h * w, 1, 1],
                Layer::Relu {} | Layer::Dropout { .. } => shape,
            };
            out.push(shape);
        }
        let mut names: Vec<&str> = self.layers.iter().filter_map(Layer::weight_name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate layer name '{}'", w[0])));
        }
        Ok(out)
    }

    pub fn output_len(&self) -> Result<usize> {
        let last = *self
            .shapes()?
            .last()
            .expect("input shape is always present");
        Ok(last.iter().product())
    }

    /// Shape of every weighted layer in the form used by the performance
    /// model: `L` is the padded input side, so `N_mov` is the output side.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let shapes = self.shapes()?;
        let mut specs = Vec::new();
        for (layer, input) in self.layers.iter().zip(&shapes) {
            match layer {
                Layer::Conv {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                } => {
                    if input[1] != input[2] {
                        return Err(Error::Shape(format!(
                            "{name}: non-square input {}x{}",
                            input[1], input[2]
                        )));
                    }
                    specs.push(LayerSpec::conv(
                        name.clone(),
                        *in_channels,
                        *out_channels,
                        *kernel,
                        input[1] + 2 * padding,
                    )?)
                }
                Layer::Fc {
                    name,
                    inputs,
                    outputs,
                } => specs.push(LayerSpec::fc(name.clone(), *inputs, *outputs)?),
                _ => {}
            }
        }
        Ok(specs)
    }

    /// Checks that `weights` holds a correctly shaped weight and bias for
    /// every weighted layer.
    pub fn check_weights(&self, weights: &TensorFile) -> Result<()> {
        for layer in &self.layers {
            let (name, wshape, out) = match layer {
                Layer::Conv {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    name,
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                    *out_channels,
                ),
                Layer::Fc {
                    name,
                    inputs,
                    outputs,
                } => (name, vec![*outputs, *inputs], *outputs),
                _ => continue,
            };
            expect_shape(weights, &format!("{name}.weight"), &wshape)?;
            expect_shape(weights, &format!("{name}.bias"), &[out])?;
        }
        Ok(())
    }
}

fn expect_shape<'a>(weights: &'a TensorFile, name: &str, shape: &[usize]) -> Result<&'a Tensor> {
    let t = weights
        .get(name)
        .ok_or_else(|| Error::Shape(format!("weight file has no tensor '{name}'")))?;
    if t.shape != shape {
        return Err(Error::Shape(format!(
            "'{name}' has shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    Ok(t)
}
