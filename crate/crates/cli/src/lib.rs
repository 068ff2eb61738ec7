//! Command implementations behind the `imac-sim` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use imac_core::config::SimConfig;
use imac_core::device::SignedWord;
use imac_core::engine::exact_mac_oracle;
use imac_core::error::{Error, Result};
use imac_core::nn::dataset::{load_dataset, DatasetKind};
use imac_core::nn::infer::{float_accuracy, AccuracyBand, Evaluator, MacPath, QuantizedNetwork};
use imac_core::nn::network::NetworkSpec;
use imac_core::nn::tensor_file::TensorFile;
use imac_core::perf::{self, AreaTable};
use imac_core::peripherals::check_constraints;
use imac_core::variation::{monte_carlo_mac, stream, ErrorUnit, NoiseLevel};

/// Behavioral simulator for in-memory multiply-and-accumulate in 6T SRAM.
#[derive(Debug, Parser)]
#[command(name = "imac-sim", version)]
pub struct Cli {
    /// JSON configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for report files.
    #[arg(long, global = true, default_value = "imac-out")]
    out: PathBuf,

    /// Format of what is printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    Analog,
    Digital,
}

impl From<NoiseArg> for NoiseLevel {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::None => NoiseLevel::None,
            NoiseArg::Analog => NoiseLevel::Analog,
            NoiseArg::Digital => NoiseLevel::Digital,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UnitArg {
    Product,
    AdcBin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PathArg {
    Oracle,
    Engine,
}

#[derive(Debug, Args)]
struct Operands {
    /// Comma-separated inputs.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    vin: Vec<i32>,

    /// Comma-separated weights.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    w: Vec<i32>,
}

/// Operands for repeated conversions; defaults to a small mid-range MAC.
#[derive(Debug, Args)]
struct McOperands {
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "15,3,7"
    )]
    vin: Vec<i32>,

    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "15,2,9"
    )]
    w: Vec<i32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Signed dot product through the analog pipeline.
    Mac {
        #[command(flatten)]
        ops: Operands,
        #[arg(long, value_enum)]
        noise: Option<NoiseArg>,
        /// Print every intermediate voltage and code.
        #[arg(long)]
        trace: bool,
    },
    /// Code histogram of repeated noisy conversions of one MAC.
    Montecarlo {
        #[command(flatten)]
        ops: McOperands,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, value_enum, default_value_t = NoiseArg::Analog)]
        noise: NoiseArg,
    },
    /// Accuracy band of a quantized network over repeated weight placements.
    Infer {
        /// `lenet5`, `vgg` or a JSON network description.
        #[arg(long)]
        net: String,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "mnist-idx")]
        dataset: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, value_enum)]
        noise: Option<NoiseArg>,
        #[arg(long, value_enum)]
        error_unit: Option<UnitArg>,
        #[arg(long, value_enum, default_value_t = PathArg::Oracle)]
        path: PathArg,
        /// Use only the first N images.
        #[arg(long)]
        limit: Option<usize>,
        /// Also report the unquantized network's accuracy.
        #[arg(long)]
        float: bool,
    },
    /// Delay, energy and EDP against the von Neumann baseline.
    Perf {
        #[arg(long, default_value = "lenet5")]
        net: String,
        #[arg(long)]
        b_io: Option<f64>,
        /// `lo:hi:step` sweep of B_IO.
        #[arg(long)]
        sweep_bio: Option<String>,
        /// Also write the area table.
        #[arg(long)]
        area: bool,
        /// Round occupancy fractions up.
        #[arg(long)]
        ceil: bool,
    },
    /// Accumulator operating-condition check; exits 3 on violation.
    Constraints,
    /// Voltage window of every ADC code.
    AdcTable,
    /// Print the effective configuration as JSON.
    ConfigDump,
}

fn load_config(cli: &Cli) -> Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    Ok(cfg)
}

fn words(name: &str, values: &[i32]) -> Result<Vec<SignedWord>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            SignedWord::from_i32(v)
                .map_err(|_| Error::InputDomain(format!("{name}[{i}] = {v} is outside -15..=15")))
        })
        .collect()
}

fn magnitudes(name: &str, values: &[i32]) -> Result<Vec<u8>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            u8::try_from(v)
                .ok()
                .filter(|&m| m <= 15)
                .ok_or_else(|| Error::InputDomain(format!("{name}[{i}] = {v} is outside 0..=15")))
        })
        .collect()
}

fn check_lengths(vin: &[i32], w: &[i32]) -> Result<()> {
    if vin.len() != w.len() {
        return Err(Error::InputDomain(format!(
            "--vin has {} values but --w has {}",
            vin.len(),
            w.len()
        )));
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

/// `writeln!` to the command's output, with I/O failures as [`Error::Io`].
macro_rules! outln {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| Error::io(STDOUT, e))?
    };
}

/// Path label used for errors writing the command output.
pub const STDOUT: &str = "<stdout>";

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    outln!(out, "{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs one parsed command, printing to `out` and writing report files
/// under `--out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Mac { ops, noise, trace } => cmd_mac(cli, out, cfg, ops, *noise, *trace),
        Command::Montecarlo { ops, trials, noise } => {
            cmd_montecarlo(cli, out, cfg, ops, *trials, *noise)
        }
        Command::Infer {
            net,
            weights,
            data,
            dataset,
            trials,
            noise,
            error_unit,
            path,
            limit,
            float,
        } => {
            let mut cfg = cfg;
            if let Some(n) = noise {
                cfg.noise.level = (*n).into();
            }
            if let Some(u) = error_unit {
                cfg.noise.error_unit = match u {
                    UnitArg::Product => ErrorUnit::Product,
                    UnitArg::AdcBin => ErrorUnit::AdcBin,
                };
            }
            let path = match path {
                PathArg::Oracle => MacPath::Oracle,
                PathArg::Engine => MacPath::Engine,
            };
            let req = InferRequest {
                net,
                weights,
                data,
                dataset,
                trials: *trials,
                path,
                limit: *limit,
                float: *float,
            };
            cmd_infer(cli, out, cfg, req)
        }
        Command::Perf {
            net,
            b_io,
            sweep_bio,
            area,
            ceil,
        } => {
            let mut cfg = cfg;
            if let Some(b) = b_io {
                cfg.perf.b_io = *b;
            }
            cfg.perf.ceil_occupancy |= *ceil;
            cmd_perf(cli, out, cfg, net, sweep_bio.as_deref(), *area)
        }
        Command::Constraints => cmd_constraints(cli, out, cfg),
        Command::AdcTable => cmd_adc_table(cli, out, cfg),
        Command::ConfigDump => print_json(out, &cfg),
    }
}

#[derive(Serialize)]
struct MacReport {
    vin: Vec<i32>,
    w: Vec<i32>,
    decoded: i64,
    exact: i64,
    bin_width_products: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<Vec<imac_core::engine::GroupTrace>>,
}

fn cmd_mac(
    cli: &Cli,
    out: &mut dyn Write,
    mut cfg: SimConfig,
    ops: &Operands,
    noise: Option<NoiseArg>,
    trace: bool,
) -> Result<()> {
    check_lengths(&ops.vin, &ops.w)?;
    if let Some(n) = noise {
        cfg.noise.level = n.into();
    }
    let engine = cfg.engine()?;
    let vin = words("vin", &ops.vin)?;
    let w = words("w", &ops.w)?;
    let mut rng = stream(cfg.noise.seed, 0);
    let (decoded, groups) = engine.mac_traced(&vin, &w, &cfg.noise, &mut rng)?;
    let report = MacReport {
        vin: ops.vin.clone(),
        w: ops.w.clone(),
        decoded,
        exact: exact_mac_oracle(&vin, &w)?,
        bin_width_products: engine.bin_width_products(),
        groups: trace.then_some(groups),
    };
    if cli.format == Format::Json {
        return print_json(out, &report);
    }
    if let Some(groups) = &report.groups {
        for (g, group) in groups.iter().enumerate() {
            outln!(out, "group {g}");
            for el in &group.elements {
                outln!(out,
                    "  vin {:>3} w {:>3}  wl {:7.2} mV  blb [{:.2}, {:.2}, {:.2}, {:.2}] mV  v_ch_sh {:.4} mV  {} dV_acc {:.4} mV",
                    el.vin,
                    el.w,
                    el.wordline_mv,
                    el.bitlines_mv[0],
                    el.bitlines_mv[1],
                    el.bitlines_mv[2],
                    el.bitlines_mv[3],
                    el.v_ch_sh_mv,
                    if el.negative { "neg" } else { "pos" },
                    el.delta_v_acc_mv
                );
            }
            outln!(
                out,
                "  v_acc+ {:.4} mV (n={}) code {}  v_acc- {:.4} mV (n={}) code {}  decoded {}",
                group.v_acc_pos_mv,
                group.n_pos,
                code_str(group.code_pos),
                group.v_acc_neg_mv,
                group.n_neg,
                code_str(group.code_neg),
                group.decoded
            );
        }
    }
    outln!(out, "decoded {}", report.decoded);
    outln!(out, "exact {}", report.exact);
    Ok(())
}

fn code_str(c: Option<u32>) -> String {
    c.map_or_else(|| "-".into(), |c| c.to_string())
}

#[derive(Serialize)]
struct McReport {
    vin: Vec<i32>,
    w: Vec<i32>,
    noise: NoiseLevel,
    #[serde(flatten)]
    summary: imac_core::variation::McSummary,
    min_code: Option<u32>,
    max_code: Option<u32>,
}

fn cmd_montecarlo(
    cli: &Cli,
    out: &mut dyn Write,
    mut cfg: SimConfig,
    ops: &McOperands,
    trials: u64,
    noise: NoiseArg,
) -> Result<()> {
    check_lengths(&ops.vin, &ops.w)?;
    if trials == 0 {
        return Err(Error::InputDomain("--trials must be at least 1".into()));
    }
    cfg.noise.level = noise.into();
    let vin = magnitudes("vin", &ops.vin)?;
    let w = magnitudes("w", &ops.w)?;
    let hist = monte_carlo_mac(&vin, &w, trials, &cfg.noise, &cfg.adc, &cfg.device)?;
    let report = McReport {
        vin: ops.vin.clone(),
        w: ops.w.clone(),
        noise: cfg.noise.level,
        summary: hist.summary(),
        min_code: hist.min_code(),
        max_code: hist.max_code(),
    };
    create_out(&cli.out)?;
    write_file(&cli.out.join("histogram.csv"), |w| hist.write_csv(w))?;
    write_json(&cli.out.join("montecarlo.json"), &report)?;
    match cli.format {
        Format::Json => print_json(out, &report),
        Format::Csv => hist.write_csv(&mut *out),
        Format::Text => {
            outln!(
                out,
                "trials {}  nominal code {}  mean {:.4}  std {:.4}  range {}..{}",
                report.summary.trials,
                report.summary.nominal_code,
                report.summary.mean,
                report.summary.std,
                code_str(report.min_code),
                code_str(report.max_code)
            );
            Ok(())
        }
    }
}

struct InferRequest<'a> {
    net: &'a str,
    weights: &'a Path,
    data: &'a Path,
    dataset: &'a str,
    trials: usize,
    path: MacPath,
    limit: Option<usize>,
    float: bool,
}

#[derive(Serialize)]
struct InferReport {
    network: String,
    path: MacPath,
    noise: imac_core::variation::NoiseSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    float_accuracy: Option<f64>,
    band: AccuracyBand,
}

fn cmd_infer(cli: &Cli, out: &mut dyn Write, cfg: SimConfig, req: InferRequest<'_>) -> Result<()> {
    if req.trials == 0 {
        return Err(Error::InputDomain("--trials must be at least 1".into()));
    }
    if !req.data.exists() {
        return Err(Error::Config(format!(
            "dataset path {} does not exist",
            req.data.display()
        )));
    }
    let kind: DatasetKind = req.dataset.parse()?;
    let spec = NetworkSpec::resolve(req.net)?;
    let weights = TensorFile::read(req.weights)?;
    let mut data = load_dataset(req.data, kind)?;
    if let Some(n) = req.limit {
        data = data.truncated(n);
    }
    let engine = cfg.engine()?;
    let float = if req.float {
        Some(float_accuracy(&spec, &weights, &data)?)
    } else {
        None
    };
    let net = QuantizedNetwork::new(spec, &weights, cfg.quant)?;
    let eval = Evaluator::new(&net, &engine, req.path, cfg.noise);
    let band = eval.accuracy_band(&data, req.trials)?;
    let report = InferReport {
        network: net.spec.name.clone(),
        path: req.path,
        noise: cfg.noise,
        float_accuracy: float,
        band,
    };
    create_out(&cli.out)?;
    write_file(&cli.out.join("accuracy.csv"), |w| report.band.write_csv(w))?;
    write_json(&cli.out.join("band.json"), &report)?;
    match cli.format {
        Format::Json => print_json(out, &report),
        Format::Csv => report.band.write_csv(&mut *out),
        Format::Text => {
            if let Some(f) = report.float_accuracy {
                outln!(out, "float accuracy {f:.4}%");
            }
            let b = &report.band;
            outln!(
                out,
                "{} images, {} trials: mean {:.4}%  std {:.4}%  min {:.4}%  max {:.4}%",
                b.images,
                b.trials,
                b.mean,
                b.std,
                b.min,
                b.max
            );
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PerfSummary<'a> {
    network: &'a str,
    params: &'a perf::PerfParams,
    report: &'a perf::NetworkReport,
    per_inference_energy_nj: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<&'a [perf::SweepRow]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    area: Option<AreaReport>,
}

#[derive(Serialize)]
struct AreaReport {
    components: Vec<(String, f64)>,
    #[serde(flatten)]
    summary: perf::AreaSummary,
}

fn cmd_perf(
    cli: &Cli,
    out: &mut dyn Write,
    cfg: SimConfig,
    net: &str,
    sweep: Option<&str>,
    area: bool,
) -> Result<()> {
    let spec = NetworkSpec::resolve(net)?;
    let layers = spec.layer_specs()?;
    let report = perf::compare_network(&layers, &cfg.perf)?;
    let energy = perf::per_inference_energy(&layers, &cfg.perf)?;
    let sweep_rows = match sweep {
        Some(r) => Some(perf::sweep_bio(&layers, &cfg.perf, &perf::parse_range(r)?)?),
        None => None,
    };
    let table = AreaTable::default();
    let area_report = area.then(|| AreaReport {
        components: table.components.clone(),
        summary: table.summary(),
    });

    create_out(&cli.out)?;
    write_file(&cli.out.join("perf.csv"), |w| report.write_csv(w))?;
    if let Some(rows) = &sweep_rows {
        write_file(&cli.out.join("sweep_bio.csv"), |w| {
            perf::write_sweep_csv(rows, w)
        })?;
    }
    if area {
        write_file(&cli.out.join("area.csv"), |w| table.write_csv(w))?;
    }
    let summary = PerfSummary {
        network: &spec.name,
        params: &cfg.perf,
        report: &report,
        per_inference_energy_nj: energy,
        sweep: sweep_rows.as_deref(),
        area: area_report,
    };
    write_json(&cli.out.join("perf.json"), &summary)?;

    match cli.format {
        Format::Json => print_json(out, &summary),
        Format::Csv => report.write_csv(&mut *out),
        Format::Text => {
            outln!(
                out,
                "{:<8} {:>14} {:>14} {:>14} {:>14} {:>9} {:>9} {:>9}",
                "layer",
                "T_vn ns",
                "E_vn pJ",
                "T_imac ns",
                "E_imac pJ",
                "energy",
                "delay",
                "EDP"
            );
            for r in report.layers.iter().chain(std::iter::once(&report.total)) {
                outln!(
                    out,
                    "{:<8} {:>14.3} {:>14.3} {:>14.3} {:>14.3} {:>8.3}x {:>8.3}x {:>8.3}x",
                    r.layer,
                    r.t_vn.0,
                    r.e_vn.0,
                    r.t_imac.0,
                    r.e_imac.0,
                    r.energy_ratio,
                    r.delay_ratio,
                    r.edp_ratio
                );
            }
            outln!(out, "energy per inference {energy:.3} nJ");
            if let Some(rows) = &sweep_rows {
                outln!(out, "B_IO sweep:");
                for r in rows {
                    outln!(out, "  {:>6}  EDP {:.3}x", r.b_io, r.edp_ratio);
                }
            }
            if let Some(a) = &summary.area {
                for (n, v) in &a.components {
                    outln!(out, "  {n:<16} {v:>10} um^2");
                }
                outln!(
                    out,
                    "  total {} um^2, compute peripherals {:.1}%, all non-bitcell {:.1}%",
                    a.summary.total_um2,
                    100.0 * a.summary.peripheral_fraction,
                    100.0 * a.summary.non_sram_fraction
                );
            }
            Ok(())
        }
    }
}

fn cmd_constraints(cli: &Cli, out: &mut dyn Write, cfg: SimConfig) -> Result<()> {
    let r = check_constraints(&cfg.device);
    if cli.format == Format::Json {
        print_json(out, &r)?;
    } else {
        outln!(
            out,
            "sample >= v_th: min sample {:.3} mV, slack {:.3} mV  [{}]",
            r.min_sample_mv,
            r.sample_slack_mv,
            if r.sample_ok { "ok" } else { "VIOLATED" }
        );
        outln!(
            out,
            "v_acc <= v_th:  worst {:.3} mV, slack {:.3} mV  [{}]",
            r.worst_acc_mv,
            r.acc_slack_mv,
            if r.acc_ok { "ok" } else { "VIOLATED" }
        );
        outln!(out, "minimum C_acc {:.3} fF", r.c_acc_min_ff);
    }
    if r.passed() {
        Ok(())
    } else {
        Err(Error::Constraint(
            "accumulator operating conditions violated".into(),
        ))
    }
}

fn cmd_adc_table(cli: &Cli, out: &mut dyn Write, cfg: SimConfig) -> Result<()> {
    let table = cfg.adc.code_table();
    match cli.format {
        Format::Json => print_json(out, &table),
        _ => {
            outln!(out, "code,lo_mv,hi_mv,center_mv");
            for b in table {
                outln!(out, "{},{},{},{}", b.code, b.lo_mv, b.hi_mv, b.center_mv);
            }
            Ok(())
        }
    }
}
