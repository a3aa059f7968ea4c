mod report;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use neurofab::connectivity::{CompressionChoice, Sharing, SynapseCostModel};
use neurofab::error::Error;
use neurofab::mapping;
use neurofab::model;
use neurofab::partition::{optimize, CoreConstraints, CostWeights};
use neurofab::quant::{calibrate_dynamic_range, quantize_network, QuantizationConfig};
use neurofab::sim;

#[derive(Parser)]
#[command(name = "nfab", about = "Compile and run spiking networks on a many-core fabric model", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SharingArg {
    On,
    Off,
}

impl From<SharingArg> for Sharing {
    fn from(v: SharingArg) -> Sharing {
        match v {
            SharingArg::On => Sharing::On,
            SharingArg::Off => Sharing::Off,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CompressionArg {
    Auto,
    Sparse,
    Dense,
    Runlength,
}

impl From<CompressionArg> for CompressionChoice {
    fn from(v: CompressionArg) -> CompressionChoice {
        match v {
            CompressionArg::Auto => CompressionChoice::Auto,
            CompressionArg::Sparse => CompressionChoice::Sparse,
            CompressionArg::Dense => CompressionChoice::Dense,
            CompressionArg::Runlength => CompressionChoice::RunLength,
        }
    }
}

#[derive(Args)]
struct CommonOpts {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Weight blob (flat little-endian f32).
    #[arg(long)]
    blob: PathBuf,
    /// Calibration batch blob for dynamic-range scaling.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Available chips.
    #[arg(long, default_value_t = 1)]
    chips: u32,
    /// Partition candidates retained per layer.
    #[arg(long, default_value_t = 4)]
    beam: usize,
    /// Cost weights a0,a1,a2,a3.
    #[arg(long, default_value = "1,1,1,1", value_parser = parse_alpha)]
    alpha: CostWeights,
    #[arg(long, value_enum, default_value_t = SharingArg::On)]
    sharing: SharingArg,
    #[arg(long, value_enum, default_value_t = CompressionArg::Auto)]
    compression: CompressionArg,
    /// Timesteps per sample (defaults to the manifest value).
    #[arg(long)]
    timesteps: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize, partition and map a model; write the image and a
    /// utilization report.
    Compile(CommonOpts),
    /// Run a compiled model on labeled inputs; write predictions, counters
    /// and the energy-delay proxy.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Input samples (flat f32 blob, one row per sample).
        #[arg(long)]
        inputs: PathBuf,
        /// Labels (little-endian u32, one per sample).
        #[arg(long)]
        labels: PathBuf,
    },
    /// Sweep timesteps for an error/EDP curve, or model widths for a
    /// sharing-mode scaling table.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = sweep::SweepKind::Timesteps)]
        kind: sweep::SweepKind,
        /// Widths for the scaling sweep.
        #[arg(long, default_value = "8,16,32", value_delimiter = ',')]
        widths: Vec<u32>,
    },
}

fn parse_alpha(s: &str) -> Result<CostWeights, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err("expected four comma-separated weights".into());
    }
    let mut alpha = [0.0; 4];
    for (i, p) in parts.iter().enumerate() {
        alpha[i] = p.trim().parse::<f64>().map_err(|e| e.to_string())?;
    }
    Ok(CostWeights { alpha })
}

/// Exit codes per error class, also listed in the README.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse(_) => 2,
        Error::Shape(_) => 3,
        Error::Blob(_) => 4,
        Error::UnsupportedKind(_) | Error::Partition(_) => 5,
        Error::NoFeasiblePartition { .. } => 6,
        Error::InfeasibleNetwork { .. } => 7,
        Error::Capacity { .. } => 8,
        Error::Map(_) | Error::Integrity(_) => 9,
        Error::Version { .. } => 10,
        Error::DegenerateWeights
        | Error::EmptyCalibration
        | Error::DeadLayer(_)
        | Error::Range(_) => 11,
        Error::Usage(_) => 12,
        Error::Io(_) => 13,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compile(opts) => cmd_compile(&opts).map(|_| ()),
        Command::Run {
            common,
            inputs,
            labels,
        } => cmd_run(&common, &inputs, &labels),
        Command::Sweep {
            common,
            inputs,
            labels,
            kind,
            widths,
        } => sweep::cmd_sweep(&common, inputs.as_deref(), labels.as_deref(), kind, &widths),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

struct Compiled {
    image: mapping::DeploymentImage,
}

fn read_samples(path: &std::path::Path, dim: usize) -> Result<Vec<Vec<f32>>, Error> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Blob(format!(
            "{} is not a multiple of 4 bytes",
            path.display()
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if dim == 0 || floats.len() % dim != 0 {
        return Err(Error::Blob(format!(
            "{} holds {} values, not divisible into rows of {dim}",
            path.display(),
            floats.len()
        )));
    }
    Ok(floats.chunks_exact(dim).map(|c| c.to_vec()).collect())
}

fn read_labels(path: &std::path::Path) -> Result<Vec<u32>, Error> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Blob(format!(
            "{} is not a multiple of 4 bytes",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn cmd_compile(opts: &CommonOpts) -> Result<Compiled, Error> {
    if opts.chips == 0 {
        return Err(Error::Usage("--chips must be at least 1".into()));
    }
    let net = model::load_network(&opts.model, &opts.blob)?;
    let net = model::lower_average_pools(&net);
    let qcfg = QuantizationConfig::default();
    let mut qnet = quantize_network(&net, &qcfg)?;
    if let Some(calib_path) = &opts.calib {
        let dim = net.layers[0].output_shape.volume() as usize;
        let batch = read_samples(calib_path, dim)?;
        calibrate_dynamic_range(&mut qnet, &batch, &qcfg)?;
    }

    let constraints = CoreConstraints::default();
    let cost_model = SynapseCostModel::with_choice(opts.compression.into());
    let sharing: Sharing = opts.sharing.into();
    let outcome = optimize(&net, opts.beam, &opts.alpha, &constraints, &cost_model, sharing)?;
    let image = mapping::map_network(
        &qnet,
        &outcome.partitions,
        opts.chips,
        &cost_model,
        sharing,
        &constraints,
    )?;

    let report = report::build_report(&net, &outcome, &image, &opts.alpha, &constraints)?;

    std::fs::create_dir_all(&opts.out)?;
    mapping::emit_to(&image, &opts.out.join("image.json"))?;
    std::fs::write(
        opts.out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serialization") + "\n",
    )?;
    std::fs::write(opts.out.join("report.csv"), report.to_csv())?;
    println!(
        "compiled {}: {} cores on {} chip(s), total cost {:.4}",
        report.model, report.total_cores, report.chips_used, report.total_cost
    );
    Ok(Compiled { image })
}

fn cmd_run(opts: &CommonOpts, inputs: &std::path::Path, labels: &std::path::Path) -> Result<(), Error> {
    let compiled = cmd_compile(opts)?;
    let image = &compiled.image;
    let dim = image
        .iter_cores()
        .filter(|(_, _, c)| c.layer == 0)
        .map(|(_, _, c)| {
            c.input_axons
                .iter()
                .filter(|a| matches!(a, mapping::InputAxon::Injection { .. }))
                .count()
        })
        .sum::<usize>();
    let samples = read_samples(inputs, dim)?;
    let labels = read_labels(labels)?;
    if labels.len() != samples.len() {
        return Err(Error::Usage(format!(
            "{} labels for {} samples",
            labels.len(),
            samples.len()
        )));
    }
    let t_max = opts.timesteps.unwrap_or(image.timesteps);

    let mut predictions = String::from("sample,label,prediction,correct\n");
    let mut totals = sim::Counters::default();
    let mut correct = 0usize;
    for (idx, (sample, &label)) in samples.iter().zip(labels.iter()).enumerate() {
        let run = sim::run_mapped(image, &sim::Stimulus::Frame(sample.clone()), t_max)?;
        let pred = sim::classify(&run.output_counts);
        let ok = pred == Some(label as usize);
        correct += ok as usize;
        predictions.push_str(&format!(
            "{idx},{label},{},{}\n",
            pred.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
            ok as u8
        ));
        totals.spikes_total += run.counters.spikes_total;
        totals.synaptic_ops += run.counters.synaptic_ops;
        totals.core_to_core_msgs += run.counters.core_to_core_msgs;
        totals.chip_to_chip_msgs += run.counters.chip_to_chip_msgs;
        totals.timesteps_run += run.counters.timesteps_run;
    }
    let error = 1.0 - correct as f64 / samples.len().max(1) as f64;
    let proxy = sim::edp_proxy(&totals, image.n_cores(), &sim::EdpConstants::default());

    std::fs::create_dir_all(&opts.out)?;
    std::fs::write(opts.out.join("predictions.csv"), predictions)?;
    let summary = serde_json::json!({
        "samples": samples.len(),
        "timesteps": t_max,
        "error": error,
        "counters": totals,
        "edp": proxy,
    });
    std::fs::write(
        opts.out.join("run.json"),
        serde_json::to_string_pretty(&summary).expect("summary serialization") + "\n",
    )?;
    println!(
        "ran {} samples for {} steps: error {:.4}, edp {:.1}",
        samples.len(),
        t_max,
        error,
        proxy.edp
    );
    Ok(())
}
