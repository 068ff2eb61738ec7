//! Quantized forward pass and accuracy bands.
//!
//! Every conv/FC layer quantizes its input activations to unsigned
//! `activation_bits` with a per-image scale, multiplies them with the
//! pre-quantized weights as an integer MAC, adds the frozen error-map value
//! for that output element, then dequantizes and adds the bias. ReLU and
//! pooling act on the dequantized values and never see injected error.

use std::io::Write;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::network::{Layer, NetworkSpec};
use super::quant::{activation_scale, quantize_linear, quantize_value, QuantScheme};
use super::tensor_file::TensorFile;
use crate::device::{DeviceParams, SignedWord};
use crate::engine::ImacEngine;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::peripherals::AdcConfig;
use crate::variation::{sample_error_map, stream, ErrorMapSample, NoiseLevel, NoiseSpec};

/// How a conv/FC output element is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacPath {
    /// Exact integer arithmetic.
    #[default]
    Oracle,
    /// Element-by-element through the analog array model.
    Engine,
}

impl FromStr for MacPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(MacPath::Oracle),
            "engine" => Ok(MacPath::Engine),
            other => Err(Error::Config(format!(
                "unknown MAC path '{other}' (expected oracle or engine)"
            ))),
        }
    }
}

/// Whether the application-level error map models the noise for this
/// combination. The engine path simulates analog noise per product itself.
pub fn uses_error_maps(path: MacPath, level: NoiseLevel) -> bool {
    match level {
        NoiseLevel::None => false,
        NoiseLevel::Digital => true,
        NoiseLevel::Analog => path == MacPath::Oracle,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MacKind {
    Conv { kernel: usize, padding: usize },
    Fc,
}

/// A conv or FC layer with quantized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MacLayer {
    pub spec: LayerSpec,
    kind: MacKind,
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    /// `[out][fan_in]`, fan-in ordered by (channel, row, column).
    pub weights: Vec<i16>,
    pub weight_scale: f64,
    pub bias: Vec<f64>,
}

impl MacLayer {
    pub fn fan_in(&self) -> usize {
        self.spec.fan_in()
    }

    pub fn outputs(&self) -> usize {
        self.out_shape.iter().product()
    }

    fn weight_row(&self, o: usize) -> &[i16] {
        let f = self.fan_in();
        &self.weights[o * f..(o + 1) * f]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Mac(usize),
    Relu,
    MaxPool(usize),
    Reshape([usize; 3]),
}

/// A network bound to quantized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNetwork {
    pub spec: NetworkSpec,
    pub scheme: QuantScheme,
    ops: Vec<Op>,
    layers: Vec<MacLayer>,
}

impl QuantizedNetwork {
    pub fn new(spec: NetworkSpec, weights: &TensorFile, scheme: QuantScheme) -> Result<Self> {
        scheme.validate()?;
        let shapes = spec.shapes()?;
        spec.check_weights(weights)?;
        let specs = spec.layer_specs()?;
        let mut ops = Vec::new();
        let mut layers = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            let (in_shape, out_shape) = (shapes[i], shapes[i + 1]);
            let op = match layer {
                Layer::Conv {
                    kernel, padding, ..
                } => MacKind::Conv {
                    kernel: *kernel,
                    padding: *padding,
                },
                Layer::Fc { .. } => MacKind::Fc,
                Layer::Relu {} => {
                    ops.push(Op::Relu);
                    continue;
                }
                Layer::MaxPool { size } => {
                    ops.push(Op::MaxPool(*size));
                    continue;
                }
                Layer::Flatten {} => {
                    ops.push(Op::Reshape(out_shape));
                    continue;
                }
                Layer::Dropout { .. } => continue,
            };
            let name = layer.weight_name().expect("weighted layer");
            let w = weights.get(&format!("{name}.weight")).expect("checked");
            let b = weights.get(&format!("{name}.bias")).expect("checked");
            let q = quantize_linear(&w.data, scheme.weight_bits, true)?;
            ops.push(Op::Mac(layers.len()));
            layers.push(MacLayer {
                spec: specs[layers.len()].clone(),
                kind: op,
                in_shape,
                out_shape,
                weights: q.values,
                weight_scale: q.scale,
                bias: b.data.iter().map(|&v| v as f64).collect(),
            });
        }
        Ok(QuantizedNetwork {
            spec,
            scheme,
            ops,
            layers,
        })
    }

    pub fn mac_layers(&self) -> &[MacLayer] {
        &self.layers
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.iter().product()
    }
}

/// One frozen error map per conv/FC layer, in MAC units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorMaps {
    pub maps: Vec<ErrorMapSample>,
}

impl ErrorMaps {
    /// Draws maps for every weighted layer with
    /// `sigma = mac_error_sigma(ceil(fan_in / n_acc))`.
    pub fn sample(
        net: &QuantizedNetwork,
        noise: &NoiseSpec,
        adc: &AdcConfig,
        params: &DeviceParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let maps = net
            .layers
            .iter()
            .map(|l| sample_error_map(&l.spec, noise, adc, params, rng))
            .collect();
        ErrorMaps { maps }
    }
}

/// Integer accumulators (plus injected error) of every weighted layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    pub accumulators: Vec<Vec<f64>>,
    pub activation_scales: Vec<f64>,
}

/// Runs a [`QuantizedNetwork`] on one of the two MAC paths.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub net: &'a QuantizedNetwork,
    pub engine: &'a ImacEngine,
    pub path: MacPath,
    pub noise: NoiseSpec,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        net: &'a QuantizedNetwork,
        engine: &'a ImacEngine,
        path: MacPath,
        noise: NoiseSpec,
    ) -> Self {
        Evaluator {
            net,
            engine,
            path,
            noise,
        }
    }

    /// Class scores for one image. `rng` feeds per-product analog noise on
    /// the engine path and is otherwise untouched.
    pub fn forward(
        &self,
        image: &[f32],
        maps: Option<&ErrorMaps>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f32>> {
        self.run(image, maps, rng, None)
    }

    pub fn forward_traced(
        &self,
        image: &[f32],
        maps: Option<&ErrorMaps>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f32>, ForwardTrace)> {
        let mut trace = ForwardTrace::default();
        let out = self.run(image, maps, rng, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn run(
        &self,
        image: &[f32],
        maps: Option<&ErrorMaps>,
        rng: &mut ChaCha8Rng,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<Vec<f32>> {
        if image.len() != self.net.input_len() {
            return Err(Error::Shape(format!(
                "image has {} values, network expects {}",
                image.len(),
                self.net.input_len()
            )));
        }
        if let Some(m) = maps {
            if m.maps.len() != self.net.layers.len()
                || m.maps
                    .iter()
                    .zip(&self.net.layers)
                    .any(|(m, l)| m.len() != l.outputs())
            {
                return Err(Error::Shape("error maps do not match the network".into()));
            }
        }
        let mut x = image.to_vec();
        let mut shape = self.net.spec.input;
        for op in &self.net.ops {
            match op {
                Op::Mac(i) => {
                    let layer = &self.net.layers[*i];
                    let err = maps.map(|m| &m.maps[*i].values[..]);
                    x = self.mac_layer(layer, &x, err, rng, trace.as_deref_mut())?;
                    shape = layer.out_shape;
                }
                Op::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
                Op::MaxPool(s) => {
                    x = max_pool(&x, shape, *s);
                    shape = [shape[0], shape[1] / s, shape[2] / s];
                }
                Op::Reshape(to) => shape = *to,
            }
        }
        Ok(x)
    }

    fn mac_layer(
        &self,
        layer: &MacLayer,
        x: &[f32],
        err: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<Vec<f32>> {
        let scheme = &self.net.scheme;
        let signed = scheme.symmetric_activations;
        if !signed {
            if let Some(i) = x.iter().position(|&v| v < 0.0) {
                return Err(Error::InputDomain(format!(
                    "{}: negative activation {} at index {i} cannot be quantized unsigned",
                    layer.spec.name, x[i]
                )));
            }
        }
        let a_scale = activation_scale(x, scheme.activation_bits, signed);
        let q: Vec<i16> = x.iter().map(|&v| quantize_value(v, a_scale)).collect();
        let patches = im2col(layer, &q);
        let fan_in = layer.fan_in();
        let positions = patches.len() / fan_in;
        let n_out = layer.out_shape[0];
        let mut acc = vec![0.0f64; n_out * positions];

        match self.path {
            MacPath::Oracle => {
                for (pos, patch) in patches.chunks_exact(fan_in).enumerate() {
                    for o in 0..n_out {
                        acc[o * positions + pos] = dot(layer.weight_row(o), patch) as f64;
                    }
                }
            }
            MacPath::Engine => {
                let words = |v: &[i16]| -> Result<Vec<SignedWord>> {
                    v.iter().map(|&q| SignedWord::from_i32(q as i32)).collect()
                };
                let rows: Vec<Vec<SignedWord>> = (0..n_out)
                    .map(|o| words(layer.weight_row(o)))
                    .collect::<Result<_>>()?;
                for (pos, patch) in patches.chunks_exact(fan_in).enumerate() {
                    let vin = words(patch)?;
                    for (o, w) in rows.iter().enumerate() {
                        acc[o * positions + pos] =
                            self.engine.mac(&vin, w, &self.noise, rng)? as f64;
                    }
                }
            }
        }
        if let Some(err) = err {
            acc.iter_mut().zip(err).for_each(|(a, e)| *a += e);
        }
        let scale = layer.weight_scale * a_scale;
        let out = acc
            .iter()
            .enumerate()
            .map(|(i, &a)| (a * scale + layer.bias[i / positions]) as f32)
            .collect();
        if let Some(t) = trace {
            t.accumulators.push(acc);
            t.activation_scales.push(a_scale);
        }
        Ok(out)
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn dot(a: &[i16], b: &[i16]) -> i32 {
    a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
}

/// Receptive fields of every output position, each `fan_in` long.
fn im2col(layer: &MacLayer, q: &[i16]) -> Vec<i16> {
    match layer.kind {
        MacKind::Fc => q.to_vec(),
        MacKind::Conv { kernel, padding } => {
            let [c, h, w] = layer.in_shape;
            let [_, oh, ow] = layer.out_shape;
            let mut out = vec![0i16; oh * ow * c * kernel * kernel];
            let mut idx = 0;
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        for ky in 0..kernel {
                            let y = (oy + ky) as isize - padding as isize;
                            for kx in 0..kernel {
                                let xx = (ox + kx) as isize - padding as isize;
                                if y >= 0 && (y as usize) < h && xx >= 0 && (xx as usize) < w {
                                    out[idx] = q[(ch * h + y as usize) * w + xx as usize];
                                }
                                idx += 1;
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

fn max_pool(x: &[f32], [c, h, w]: [usize; 3], s: usize) -> Vec<f32> {
    let (oh, ow) = (h / s, w / s);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for dy in 0..s {
                    for dx in 0..s {
                        m = m.max(x[(ch * h + oy * s + dy) * w + ox * s + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// Plain float forward pass with the unquantized weights.
pub fn forward_float(spec: &NetworkSpec, weights: &TensorFile, image: &[f32]) -> Result<Vec<f32>> {
    let shapes = spec.shapes()?;
    spec.check_weights(weights)?;
    if image.len() != spec.input.iter().product::<usize>() {
        return Err(Error::Shape(
            "image does not match the network input".into(),
        ));
    }
    let mut x = image.to_vec();
    for (i, layer) in spec.layers.iter().enumerate() {
        let [c, h, w] = shapes[i];
        let [oc, oh, ow] = shapes[i + 1];
        x = match layer {
            Layer::Conv {
                name,
                kernel,
                padding,
                ..
            } => {
                let wt = &weights
                    .get(&format!("{name}.weight"))
                    .expect("checked")
                    .data;
                let b = &weights.get(&format!("{name}.bias")).expect("checked").data;
                let k = *kernel;
                let mut out = vec![0f32; oc * oh * ow];
                for o in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = b[o] as f64;
                            for ch in 0..c {
                                for ky in 0..k {
                                    let y = (oy + ky) as isize - *padding as isize;
                                    if y < 0 || y as usize >= h {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let xx = (ox + kx) as isize - *padding as isize;
                                        if xx < 0 || xx as usize >= w {
                                            continue;
                                        }
                                        s += wt[((o * c + ch) * k + ky) * k + kx] as f64
                                            * x[(ch * h + y as usize) * w + xx as usize] as f64;
                                    }
                                }
                            }
                            out[(o * oh + oy) * ow + ox] = s as f32;
                        }
                    }
                }
                out
            }
            Layer::Fc {
                name,
                inputs,
                outputs,
            } => {
                let wt = &weights
                    .get(&format!("{name}.weight"))
                    .expect("checked")
                    .data;
                let b = &weights.get(&format!("{name}.bias")).expect("checked").data;
                (0..*outputs)
                    .map(|o| {
                        let row = &wt[o * inputs..(o + 1) * inputs];
                        (row.iter()
                            .zip(&x)
                            .map(|(&a, &v)| a as f64 * v as f64)
                            .sum::<f64>()
                            + b[o] as f64) as f32
                    })
                    .collect()
            }
            Layer::Relu {} => x.iter().map(|v| v.max(0.0)).collect(),
            Layer::MaxPool { size } => max_pool(&x, [c, h, w], *size),
            Layer::Flatten {} | Layer::Dropout { .. } => x,
        };
    }
    Ok(x)
}

/// Top-1 accuracy of the float network, in percent.
pub fn float_accuracy(spec: &NetworkSpec, weights: &TensorFile, data: &Dataset) -> Result<f64> {
    let correct = (0..data.len())
        .into_par_iter()
        .map(|i| {
            Ok::<_, Error>(
                (argmax(&forward_float(spec, weights, data.image(i))?) == data.labels[i] as usize)
                    as usize,
            )
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(percent(correct, data.len()))
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Random stream of image `i` in trial `t`; the trial's error maps use
/// image slot zero.
fn trial_stream(seed: u64, trial: u64, image: u64) -> ChaCha8Rng {
    stream(seed, (trial << 32) | image)
}

impl Evaluator<'_> {
    /// Error maps for trial `t`, if this configuration uses them.
    pub fn trial_maps(&self, trial: u64) -> Option<ErrorMaps> {
        uses_error_maps(self.path, self.noise.level).then(|| {
            ErrorMaps::sample(
                self.net,
                &self.noise,
                &self.engine.adc,
                &self.engine.params,
                &mut trial_stream(self.noise.seed, trial, 0),
            )
        })
    }

    /// Accuracy in percent of one trial over the whole dataset.
    pub fn accuracy(&self, data: &Dataset, trial: u64) -> Result<f64> {
        let maps = self.trial_maps(trial);
        let correct = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = trial_stream(self.noise.seed, trial, i as u64 + 1);
                let scores = self.forward(data.image(i), maps.as_ref(), &mut rng)?;
                Ok::<_, Error>((argmax(&scores) == data.labels[i] as usize) as usize)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Ok(percent(correct, data.len()))
    }

    /// Accuracy over `trials` independent weight placements, each with a
    /// fresh error map.
    pub fn accuracy_band(&self, data: &Dataset, trials: usize) -> Result<AccuracyBand> {
        if trials == 0 {
            return Err(Error::InputDomain("trials must be at least 1".into()));
        }
        if data.image_shape.iter().product::<usize>() != self.net.input_len() {
            return Err(Error::Shape(format!(
                "dataset images are {:?}, network expects {:?}",
                data.image_shape, self.net.spec.input
            )));
        }
        let accuracies = (0..trials as u64)
            .into_par_iter()
            .map(|t| self.accuracy(data, t))
            .collect::<Result<Vec<f64>>>()?;
        Ok(AccuracyBand::from_trials(
            accuracies,
            data.len(),
            self.noise.seed,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyBand {
    pub trials: usize,
    pub images: usize,
    pub seed: u64,
    pub mean: f64,
    /// Sample standard deviation; zero for a single trial.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    #[serde(skip)]
    pub accuracies: Vec<f64>,
}

impl AccuracyBand {
    pub fn from_trials(accuracies: Vec<f64>, images: usize, seed: u64) -> Self {
        let n = accuracies.len();
        let mean = accuracies.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        AccuracyBand {
            trials: n,
            images,
            seed,
            mean,
            std,
            min: accuracies.iter().copied().fold(f64::INFINITY, f64::min),
            max: accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            accuracies,
        }
    }

    /// `trial,accuracy` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "accuracy"])?;
        for (t, a) in self.accuracies.iter().enumerate() {
            w.write_record([t.to_string(), format!("{a:.4}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
