//! Acceptance run: one PASS/FAIL line per criterion, details indented below.
//! Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use imac_core::config::SimConfig;
use imac_core::device::{
    ideal_product_voltage, staggered_discharge_product, DeviceParams, SignedWord, WeightBits,
};
use imac_core::engine::exact_mac_oracle;
use imac_core::nn::dataset::{load_mnist, Dataset};
use imac_core::nn::infer::{float_accuracy, Evaluator, MacPath, QuantizedNetwork};
use imac_core::nn::network::{Layer, NetworkSpec};
use imac_core::nn::quant::QuantScheme;
use imac_core::nn::tensor_file::TensorFile;
use imac_core::nn::Tensor;
use imac_core::perf::{compare_network, per_inference_energy, sweep_bio, PerfParams};
use imac_core::peripherals::check_constraints;
use imac_core::variation::{monte_carlo_mac, stream, NoiseLevel, NoiseSpec};
use imac_sim::Cli;
use rand::seq::index::sample;
use rand::Rng;

#[path = "../../core/tests/support/lenet_ref.rs"]
mod lenet_ref;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        self.pass &= ok;
        self.details.push(format!(
            "{} {}",
            if ok { "ok  " } else { "FAIL" },
            msg.into()
        ));
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.details.push(format!("     {}", msg.into()));
    }
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mnist")
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

fn linearity() -> Outcome {
    let mut o = Outcome::new();
    let p = DeviceParams::default();
    let (mut exact, mut worst) = (true, 0.0f64);
    for vin in 0..16u8 {
        for w in 0..16u8 {
            let ideal = ideal_product_voltage(vin, w, &p).unwrap().mv;
            exact &= p.v_dd - ideal == 2.0 * vin as f64 * w as f64;
            let sim = staggered_discharge_product(vin, WeightBits::from_magnitude(w).unwrap(), &p)
                .unwrap();
            worst = worst.max((sim.product.mv - ideal).abs());
        }
    }
    o.check(exact, "v_dd - V_ch-sh == 2 mV * vin * w for all 256 pairs");
    o.check(
        worst <= 1e-9,
        format!("staggered bitlines vs ideal: max |dV| = {worst:.3e} mV (<= 1e-9)"),
    );
    o
}

fn constraints() -> Outcome {
    let mut o = Outcome::new();
    let p = DeviceParams::default();
    let r = check_constraints(&p);
    o.check(r.passed(), "defaults pass both conditions");
    o.check(
        (r.acc_slack_mv - 225.0).abs() < 1e-9,
        format!("accumulator slack {} mV (want 225)", r.acc_slack_mv),
    );
    o.check(
        (r.c_acc_min_ff - 25.0).abs() < 1e-9,
        format!("minimum C_acc {} fF (want 25)", r.c_acc_min_ff),
    );
    let tight = check_constraints(&DeviceParams {
        c_acc: 25.0,
        ..p.clone()
    });
    o.check(
        tight.passed() && tight.acc_slack_mv.abs() < 1e-9,
        format!(
            "C_acc = 25 fF is exactly tight (slack {:.3e} mV)",
            tight.acc_slack_mv
        ),
    );
    let under = check_constraints(&DeviceParams { c_acc: 24.9, ..p });
    o.check(!under.passed(), "C_acc = 24.9 fF is flagged");
    o
}

fn mac_fidelity() -> Outcome {
    let mut o = Outcome::new();
    let engine = SimConfig::default().engine().unwrap();
    let bin = engine.bin_width_products();
    let mut rng = stream(31, 0);
    let mut worst = 0.0f64;
    let off = NoiseSpec::none();
    for _ in 0..10_000 {
        let mut word = || SignedWord::from_i32(rng.random_range(-15..=15)).unwrap();
        let vin: Vec<SignedWord> = (0..10).map(|_| word()).collect();
        let w: Vec<SignedWord> = (0..10).map(|_| word()).collect();
        let got = engine.mac(&vin, &w, &off, &mut stream(0, 0)).unwrap();
        let want = exact_mac_oracle(&vin, &w).unwrap();
        worst = worst.max((got - want).abs() as f64);
    }
    o.check(
        (bin - 2250.0 / 16.0).abs() < 1e-12,
        format!("bin width {bin} products"),
    );
    o.check(
        worst <= bin,
        format!("10^4 signed 10-element MACs: max |error| = {worst} (<= {bin})"),
    );
    o
}

fn monte_carlo() -> Outcome {
    let mut o = Outcome::new();
    let cfg = SimConfig::default();
    let noise = NoiseSpec {
        level: NoiseLevel::Analog,
        seed: 2021,
        ..NoiseSpec::default()
    };
    let run = |vin: &[u8], w: &[u8]| {
        monte_carlo_mac(vin, w, 1000, &noise, &cfg.adc, &cfg.device).unwrap()
    };

    let mut sets: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for a in 0..16u8 {
        for b in 0..16u8 {
            sets.push((vec![a], vec![b]));
        }
    }
    let mut rng = stream(5, 0);
    for n in [3usize, 5, 10] {
        for _ in 0..20 {
            sets.push((
                (0..n).map(|_| rng.random_range(0..16)).collect(),
                (0..n).map(|_| rng.random_range(0..16)).collect(),
            ));
        }
    }
    sets.push((vec![15; 10], vec![15; 10]));
    sets.push((vec![0; 10], vec![9; 10]));

    let (mut worst, mut worst_set) = (0.0f64, String::new());
    let (mut zero_rail, mut top_rail, mut one_sided) = (0, 0, true);
    for (vin, w) in &sets {
        let h = run(vin, w);
        if h.std > worst {
            worst = h.std;
            worst_set = format!("vin {vin:?} w {w:?}");
        }
        let max_code = cfg.adc.max_code();
        if h.nominal_code == 0 {
            zero_rail += 1;
            one_sided &= h.min_code() == Some(0) && h.mean >= 0.0;
        } else if h.nominal_code == max_code {
            top_rail += 1;
            one_sided &= h.max_code() == Some(max_code) && h.mean <= max_code as f64;
        }
    }
    o.check(
        worst <= 0.6,
        format!(
            "{} operand sets x 1000 trials: max code std {worst:.4} at {worst_set} (<= 0.6)",
            sets.len()
        ),
    );
    o.check(
        zero_rail > 0 && top_rail > 0 && one_sided,
        format!("rail histograms ({zero_rail} at code 0, {top_rail} at code 15) stay on the interior side"),
    );
    o
}

fn headline_ratios() -> Outcome {
    let mut o = Outcome::new();
    let p = PerfParams::default();
    let net = NetworkSpec::lenet5().layer_specs().unwrap();
    let r = compare_network(&net, &p).unwrap();
    let t = &r.total;
    o.note(format!("B_IO = {}", p.b_io));
    o.check(
        within(t.energy_ratio, 9.42, 0.15),
        format!("energy ratio {:.3}x (want 9.42x +-15%)", t.energy_ratio),
    );
    o.check(
        within(t.delay_ratio, 6.24, 0.15),
        format!("delay ratio {:.3}x (want 6.24x +-15%)", t.delay_ratio),
    );
    o.check(
        within(t.edp_ratio, 58.79, 0.15),
        format!("EDP ratio {:.3}x (want 58.79x +-15%)", t.edp_ratio),
    );
    o.check(
        t.edp_ratio == t.energy_ratio * t.delay_ratio,
        "EDP == energy ratio * delay ratio exactly",
    );
    let end = sweep_bio(&net, &p, &[256.0]).unwrap()[0].edp_ratio;
    o.check(
        end >= 22.0,
        format!("EDP at B_IO = 256: {end:.3}x (want >= 22x)"),
    );
    let nj = per_inference_energy(&net, &p).unwrap();
    o.check(
        within(nj, 158.203, 0.15),
        format!("IMAC energy per inference {nj:.3} nJ (want 158.203 nJ +-15%)"),
    );
    o
}

fn mnist() -> (TensorFile, Dataset) {
    let w = TensorFile::read(&fixture().join("lenet5.tensors")).unwrap();
    (w, load_mnist(&fixture()).unwrap())
}

fn zero_noise_equivalence() -> Outcome {
    let mut o = Outcome::new();
    let (t, data) = mnist();
    let net = QuantizedNetwork::new(NetworkSpec::lenet5(), &t, QuantScheme::default()).unwrap();
    let engine = SimConfig::default().engine().unwrap();
    let eval = Evaluator::new(&net, &engine, MacPath::Oracle, NoiseSpec::none());
    let mut mismatched = Vec::new();
    for i in sample(&mut stream(606, 0), data.len(), 100) {
        let (want, want_acc) = lenet_ref::reference(&t, data.image(i));
        let (got, trace) = eval
            .forward_traced(data.image(i), None, &mut stream(0, 0))
            .unwrap();
        let same_acc = trace
            .accumulators
            .iter()
            .zip(&want_acc)
            .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| *x == *y as f64));
        let same_out = got.len() == want.len()
            && got
                .iter()
                .zip(&want)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !(same_acc && same_out) {
            mismatched.push(i);
        }
    }
    o.check(
        mismatched.is_empty(),
        format!(
            "100 random fixture images bit-identical to the reference (mismatches: {mismatched:?})"
        ),
    );
    o
}

fn lenet_band() -> Outcome {
    let mut o = Outcome::new();
    let (t, data) = mnist();
    let spec = NetworkSpec::lenet5();
    let net = QuantizedNetwork::new(spec.clone(), &t, QuantScheme::default()).unwrap();
    let engine = SimConfig::default().engine().unwrap();
    let float = float_accuracy(&spec, &t, &data).unwrap();
    let quant = Evaluator::new(&net, &engine, MacPath::Oracle, NoiseSpec::none())
        .accuracy(&data, 0)
        .unwrap();
    o.note(format!(
        "{} fixture images, float {float:.3}%, quantized {quant:.3}%",
        data.len()
    ));
    o.check(
        (quant - float).abs() < 0.5,
        format!("quantized - float = {:+.3}% (|.| < 0.5)", quant - float),
    );
    let noise = NoiseSpec {
        level: NoiseLevel::Digital,
        ..NoiseSpec::default()
    };
    let band = Evaluator::new(&net, &engine, MacPath::Oracle, noise)
        .accuracy_band(&data, 100)
        .unwrap();
    o.check(
        (band.mean - quant).abs() < 0.5,
        format!(
            "100-trial band mean {:.3}% vs quantized (|diff| = {:.3} < 0.5)",
            band.mean,
            (band.mean - quant).abs()
        ),
    );
    o.check(band.std < 0.1, format!("band std {:.4}% (< 0.1)", band.std));
    o
}

/// Seeded He-style uniform weights for every weighted layer of `spec`.
fn random_weights(spec: &NetworkSpec, seed: u64) -> TensorFile {
    let mut rng = stream(seed, 0);
    let mut t = TensorFile::default();
    for layer in &spec.layers {
        let (name, shape, fan_in, out) = match layer {
            Layer::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                name,
                vec![*out_channels, *in_channels, *kernel, *kernel],
                in_channels * kernel * kernel,
                *out_channels,
            ),
            Layer::Fc {
                name,
                inputs,
                outputs,
            } => (name, vec![*outputs, *inputs], *inputs, *outputs),
            _ => continue,
        };
        let a = (6.0 / fan_in as f32).sqrt();
        let n: usize = shape.iter().product();
        let w = (0..n).map(|_| rng.random_range(-a..a)).collect();
        t.insert(format!("{name}.weight"), Tensor::new(shape, w).unwrap());
        let b = (0..out).map(|_| rng.random_range(-0.05..0.05)).collect();
        t.insert(format!("{name}.bias"), Tensor::new(vec![out], b).unwrap());
    }
    t
}

fn synthetic_cifar(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, 0);
    Dataset {
        image_shape: [3, 32, 32],
        pixels: (0..n * 3072)
            .map(|_| rng.random_range(0u8..=255) as f32 / 255.0)
            .collect(),
        labels: (0..n).map(|_| rng.random_range(0..10)).collect(),
    }
}

fn vgg_smoke() -> Outcome {
    let mut o = Outcome::new();
    let spec = NetworkSpec::vgg_cifar10();
    let t = random_weights(&spec, 88);
    let net = QuantizedNetwork::new(spec, &t, QuantScheme::default()).unwrap();
    let engine = SimConfig::default().engine().unwrap();
    let data = synthetic_cifar(500, 89);
    o.check(
        net.mac_layers()
            .iter()
            .all(|l| l.weights.iter().all(|q| q.abs() <= 15) && l.weight_scale > 0.0),
        "quantized weights fit 1+4 bits, scales positive",
    );

    let clean = Evaluator::new(&net, &engine, MacPath::Oracle, NoiseSpec::none());
    let band = clean.accuracy_band(&data, 1).unwrap();
    o.check(
        band.std == 0.0 && band.min == band.max && (0.0..=100.0).contains(&band.mean),
        format!("500 images, noise off: band collapses to {:.1}%", band.mean),
    );
    let img = data.image(0);
    let a = clean.forward(img, None, &mut stream(0, 0)).unwrap();
    let b = clean.forward(img, None, &mut stream(0, 0)).unwrap();
    o.check(
        a.len() == 10 && a.iter().all(|v| v.is_finite()) && a == b,
        "10 finite scores, bit-identical on repeat",
    );

    let small = data.clone().truncated(40);
    let noise = NoiseSpec {
        level: NoiseLevel::Digital,
        seed: 3,
        ..NoiseSpec::default()
    };
    let noisy = Evaluator::new(&net, &engine, MacPath::Oracle, noise);
    let b1 = noisy.accuracy_band(&small, 3).unwrap();
    let b2 = noisy.accuracy_band(&small, 3).unwrap();
    o.check(
        b1.accuracies == b2.accuracies,
        format!("frozen maps reproduce the band ({:?})", b1.accuracies),
    );
    let maps = noisy.trial_maps(0).unwrap();
    let (_, plain) = clean.forward_traced(img, None, &mut stream(0, 0)).unwrap();
    let (_, shifted) = noisy
        .forward_traced(img, Some(&maps), &mut stream(0, 0))
        .unwrap();
    let linear = plain.accumulators[0]
        .iter()
        .zip(&shifted.accumulators[0])
        .zip(&maps.maps[0].values)
        .all(|((c, n), e)| (n - c - e).abs() <= 1e-9 * c.abs().max(1.0));
    o.check(linear, "first-layer error injection equals the frozen map");
    o
}

fn accuracy_bands() -> Outcome {
    let mut o = lenet_band();
    let v = vgg_smoke();
    o.note("VGG/CIFAR-10 smoke (synthetic data, seeded weights):");
    o.pass &= v.pass;
    o.details.extend(v.details);
    o
}

/// Output files by name.
type Files = BTreeMap<String, Vec<u8>>;

fn snapshot(dir: &Path) -> Files {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

/// Runs one CLI invocation in-process on a pool of `threads` workers and
/// returns its stdout plus every file it wrote.
fn run_cli(args: &[String], threads: usize) -> Result<(Vec<u8>, Files), String> {
    let dir = tempfile::tempdir().unwrap();
    let argv = [
        "imac-sim",
        "--seed",
        "17",
        "--out",
        dir.path().to_str().unwrap(),
    ]
    .into_iter()
    .map(String::from)
    .chain(args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let mut stdout = Vec::new();
    pool.install(|| imac_sim::run(&cli, &mut stdout))
        .map_err(|e| e.to_string())?;
    let files = if dir.path().exists() {
        snapshot(dir.path())
    } else {
        BTreeMap::new()
    };
    Ok((stdout, files))
}

fn determinism() -> Outcome {
    let mut o = Outcome::new();
    let w = fixture().join("lenet5.tensors");
    let d = fixture();
    let (w, d) = (w.display(), d.display());
    let commands = [
        ("mac", "--format json mac --vin 15,-3,7 --w -15,2,9 --noise analog --trace".to_string()),
        ("montecarlo", "montecarlo --trials 2000".to_string()),
        (
            "infer",
            format!("infer --net lenet5 --weights {w} --data {d} --limit 300 --trials 4 --noise digital"),
        ),
        (
            "infer-engine",
            format!("infer --net lenet5 --weights {w} --data {d} --limit 20 --path engine --noise analog"),
        ),
        ("perf", "perf --sweep-bio 16:256:16 --area".to_string()),
    ];
    for (label, line) in commands {
        let args: Vec<String> = line.split_whitespace().map(String::from).collect();
        let runs: Result<Vec<_>, String> = [1, 4, 1].iter().map(|&t| run_cli(&args, t)).collect();
        match runs {
            Ok(runs) => {
                let files: Vec<&String> = runs[0].1.keys().collect();
                o.check(
                    runs.windows(2).all(|p| p[0] == p[1]),
                    format!("{label}: stdout and {files:?} identical on 1/4/1 threads"),
                );
            }
            Err(e) => o.check(false, format!("{label}: {e}")),
        }
    }
    o
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 8] = [
        (
            "multiplication linearity",
            linearity,
            Duration::from_secs(1),
        ),
        (
            "accumulator constraints",
            constraints,
            Duration::from_secs(1),
        ),
        (
            "MAC fidelity within one ADC bin",
            mac_fidelity,
            Duration::from_secs(10),
        ),
        (
            "Monte Carlo code statistics",
            monte_carlo,
            Duration::from_secs(30),
        ),
        (
            "headline system ratios",
            headline_ratios,
            Duration::from_secs(1),
        ),
        (
            "zero-noise inference equivalence",
            zero_noise_equivalence,
            Duration::from_secs(60),
        ),
        (
            "accuracy bands",
            accuracy_bands,
            Duration::from_secs(15 * 60),
        ),
        ("determinism", determinism, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = run();
        let took = start.elapsed();
        if *budget != Duration::MAX {
            outcome.check(
                took <= *budget,
                format!("runtime {took:.2?} (budget {budget:?})"),
            );
        }
        println!(
            "{} {}. {name} ({took:.2?})",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1
        );
        for d in &outcome.details {
            println!("      {d}");
        }
        failed += !outcome.pass as usize;
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
