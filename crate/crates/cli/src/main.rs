use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use rcc_core::codec::{decode_image, encode_image, StreamHeader};
use rcc_core::experiment::{exact_line_parameters, run_rates_sweep, run_redundancy, run_verify, BlockMode, ExperimentSpec};
use rcc_core::gibbs::{model_hash, write_sample_set};
use rcc_core::io::{parse_key_values, read_raster_file, write_raster_file};
use rcc_core::model::{build_layout, Configuration};
use rcc_core::moment::{fit, pooled_block_moment, FitResult};
use rcc_core::oracle::centered;
use rcc_core::par::Execution;
use rcc_core::{RccError, Result};

/// Reduced cutset coding of lattice Markov random fields.
#[derive(Parser)]
#[command(name = "rcc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw Gibbs samples into a directory of raster files.
    Sample(SpecArgs),
    /// Fit a reduced line model to samples by moment matching.
    Fit {
        #[command(flatten)]
        spec: SpecArgs,
        /// Directory of `.rccimg` samples; sampled from the spec if absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Encode a raster file.
    Encode {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        input: PathBuf,
        /// Fitted line model shared by every line; exact per-line fits otherwise.
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Decode a stream back into a raster file.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
    /// Line, strip and combined rates for every (n_L, n_S) pair, as CSV.
    Rates(SpecArgs),
    /// Redundancy decomposition for every pair that tiles the lattice, as CSV.
    Redundancy(SpecArgs),
    /// Check the rate orderings on the exact oracle; writes a ledger.
    Verify(SpecArgs),
}

/// Experiment settings; flags override the spec file.
#[derive(Args, Clone, Default)]
struct SpecArgs {
    /// `key=value` spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    theta_edge: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_node: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_h: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_v: Option<f64>,
    /// Comma-separated `n_L:n_S` pairs.
    #[arg(long)]
    pairs: Option<String>,
    #[arg(long)]
    line_heights: Option<String>,
    #[arg(long)]
    strip_heights: Option<String>,
    #[arg(long)]
    line_strip_sum: Option<usize>,
    /// `centered` or `layout`.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    fit_tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

impl SpecArgs {
    fn map(&self) -> Result<BTreeMap<String, String>> {
        let mut map = match &self.spec {
            Some(path) => parse_key_values(&std::fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        let flags: [(&str, Option<String>); 19] = [
            ("rows", self.rows.map(|v| v.to_string())),
            ("cols", self.cols.map(|v| v.to_string())),
            ("theta_edge", self.theta_edge.map(|v| v.to_string())),
            ("theta_node", self.theta_node.map(|v| v.to_string())),
            ("theta_h", self.theta_h.map(|v| v.to_string())),
            ("theta_v", self.theta_v.map(|v| v.to_string())),
            ("pairs", self.pairs.clone()),
            ("line_heights", self.line_heights.clone()),
            ("strip_heights", self.strip_heights.clone()),
            ("line_strip_sum", self.line_strip_sum.map(|v| v.to_string())),
            ("blocks", self.blocks.clone()),
            ("burn_in", self.burn_in.map(|v| v.to_string())),
            ("thinning", self.thinning.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("samples", self.samples.map(|v| v.to_string())),
            ("fit_tolerance", self.fit_tolerance.map(|v| v.to_string())),
            ("max_iter", self.max_iter.map(|v| v.to_string())),
            ("max_n", self.max_n.map(|v| v.to_string())),
            ("output", self.output.as_ref().map(|p| p.display().to_string())),
        ];
        // flags that conflict with a spec-file way of listing pairs replace it
        if self.pairs.is_some() || self.line_strip_sum.is_some() || self.line_heights.is_some() || self.strip_heights.is_some() {
            for k in ["pairs", "line_strip_sum", "line_heights", "strip_heights"] {
                map.remove(k);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| RccError::Parse(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    fn load(&self) -> Result<ExperimentSpec> {
        ExperimentSpec::from_map(&self.map()?)
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

fn single_pair(spec: &ExperimentSpec) -> Result<(usize, usize)> {
    match spec.pairs.as_slice() {
        [p] => Ok(*p),
        _ => Err(RccError::InvalidConfiguration("this command needs exactly one (n_L, n_S) pair".into())),
    }
}

fn require_output(spec: &ExperimentSpec) -> Result<&Path> {
    spec.output
        .as_deref()
        .ok_or_else(|| RccError::InvalidConfiguration("an output path is required".into()))
}

/// Writes `text` to `dir/name` when an output directory is set, else stdout.
fn emit(spec: &ExperimentSpec, name: &str, text: &str) -> Result<()> {
    match &spec.output {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_sample_dir(dir: &Path) -> Result<Vec<Configuration>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "rccimg"));
    paths.sort();
    paths.iter().map(|p| Ok(read_raster_file(p)?.1)).collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sample(args) => {
            let mut spec = args.load()?;
            if spec.sampler.sample_count == 0 {
                spec.sampler.sample_count = 1;
            }
            let model = spec.model()?;
            let samples = spec.samples(&model)?;
            write_sample_set(require_output(&spec)?, &model, &spec.sampler, &samples)?;
        }
        Command::Fit { spec: args, input } => {
            let mut spec = args.load()?;
            let samples = match input {
                Some(dir) => read_sample_dir(&dir)?,
                None => {
                    if spec.sampler.sample_count == 0 {
                        spec.sampler.sample_count = 100;
                    }
                    spec.samples(&spec.model()?)?
                }
            };
            let first = samples
                .first()
                .ok_or_else(|| RccError::InvalidConfiguration("no samples to fit".into()))?;
            let rows = first.shape().rows;
            let (nl, ns) = single_pair(&spec)?;
            let lines = match spec.blocks {
                BlockMode::Centered => vec![centered(rows, nl)],
                BlockMode::Layout => build_layout(rows, nl, ns)?.line_ranges(),
            };
            let target = pooled_block_moment(&samples, &lines, &spec.family)?;
            let init = rcc_core::model::ComponentVector::zeros(target.shape());
            let result = fit(&spec.family, &target, &init, &spec.fit)?;
            let text = result.to_key_value();
            match &spec.output {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }
        Command::Encode { spec: args, input, fit } => {
            let (_, image) = read_raster_file(&input)?;
            let mut map = args.map()?;
            map.insert("rows".into(), image.shape().rows.to_string());
            map.insert("cols".into(), image.shape().cols.to_string());
            let spec = ExperimentSpec::from_map(&map)?;
            let model = spec.model()?;
            let (nl, ns) = single_pair(&spec)?;
            let layout = build_layout(image.shape().rows, nl, ns)?;
            let exec = args.execution();
            let theta_star = match fit {
                Some(path) => {
                    let result = FitResult::from_key_value(&std::fs::read_to_string(path)?)?;
                    vec![result.theta_hat; layout.line_count()]
                }
                None => exact_line_parameters(&model, &layout, &spec.fit, exec)?,
            };
            let provenance = u64::from_str_radix(&model_hash(&model)[..16], 16).expect("hex digest");
            let header = StreamHeader::new(model, layout, theta_star, provenance)?;
            let encoded = encode_image(&image, &header, spec.cap(), exec)?;
            std::fs::write(require_output(&spec)?, &encoded.bytes)?;
            println!(
                "payload_bits={} rate={:.6} stream_bytes={} stream_rate={:.6}",
                encoded.payload_bits(),
                encoded.rate(),
                encoded.bytes.len(),
                encoded.stream_rate()
            );
        }
        Command::Decode { input, output, sequential } => {
            let bytes = std::fs::read(&input)?;
            let exec = if sequential { Execution::Sequential } else { Execution::default() };
            let decoded = decode_image(&bytes, rcc_core::chain::state_cap_from_env(), exec)?;
            write_raster_file(&output, &decoded.config, decoded.header.model.q())?;
        }
        Command::Rates(args) => {
            let spec = args.load()?;
            let sweep = run_rates_sweep(&spec, args.execution())?;
            emit(&spec, "rates.csv", &sweep.to_csv(spec.cols))?;
            let report = sweep.ordering_report();
            for line in &report {
                eprintln!("{line}");
            }
            for ((nl, ns), reason) in &sweep.skipped {
                warn!("skipped ({nl}, {ns}): {reason}");
            }
            if spec.output.is_some() {
                emit(&spec, "rates_report.txt", &report.iter().map(|l| format!("{l}\n")).collect::<String>())?;
            }
        }
        Command::Redundancy(args) => {
            let spec = args.load()?;
            let (csv, _) = run_redundancy(&spec, args.execution())?;
            emit(&spec, "redundancy.csv", &csv)?;
        }
        Command::Verify(args) => {
            let spec = args.load()?;
            let ledger = run_verify(&spec, args.execution())?;
            emit(&spec, "ledger.csv", &ledger.to_csv())?;
            if ledger.falsified() {
                eprintln!("verification falsified at least one ordering");
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &RccError) -> u8 {
    match e {
        RccError::CorruptStream(_) => 4,
        RccError::Parse(_)
        | RccError::InvalidConfiguration(_)
        | RccError::InvalidModel(_)
        | RccError::NoValidTiling { .. }
        | RccError::LayoutMismatch(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
