use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ctt_engine::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ctt", version, about = "CTT multiply-accumulate engine simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network case: 1, 2 or 3.
    #[arg(long)]
    case: Option<u8>,
    /// Resolutions, e.g. `8`, `4,8,16` or `1-16`.
    #[arg(long)]
    bits: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use only the first N test images.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a float model and save it.
    Train(Common),
    /// Quantize a model and program its arrays; writes snapshots.
    Program(Common),
    /// Run engine inference on the test subset.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Write inter-layer values as CSV.
        #[arg(long)]
        dump: bool,
    },
    /// Accuracy versus interface resolution; writes a CSV.
    Sweep(Common),
    /// Equivalent MACs per cycle, TOPS and programming cycles.
    Throughput {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 784)]
        m: u64,
        #[arg(long, default_value_t = 784)]
        n: u64,
        #[arg(long, default_value_t = 8)]
        saf_bits: u64,
        #[arg(long, default_value_t = 500e6)]
        clock_hz: f64,
        /// Longest pulse train; derived from the device and codec if absent.
        #[arg(long)]
        max_pulses: Option<u64>,
    },
    /// Check calibrated products against known probe vectors.
    Calibrate(Common),
}

fn parse_bits(list: &str) -> Result<Vec<u32>> {
    let mut bits = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.parse()?, b.parse()?);
                if a > b {
                    bail!("empty bit range {part}");
                }
                bits.extend(a..=b);
            }
            None => bits.push(part.parse().with_context(|| format!("bad bits entry {part:?}"))?),
        }
    }
    Ok(bits)
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(case) = common.case {
        cfg.case = case;
    }
    if let Some(bits) = &common.bits {
        cfg.bits = parse_bits(bits)?;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.subset.is_some() {
        cfg.subset = common.subset;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = config(&common)?;
            let r = harness::train_command(&cfg)?;
            for (e, loss) in r.epoch_losses.iter().enumerate() {
                println!("epoch {:>3}  loss {loss:.5}", e + 1);
            }
            println!("model      {}", r.model_path.display());
            if let Some(acc) = r.test_accuracy {
                println!("test accuracy {acc:.4}");
            }
        }
        Command::Program(common) => {
            let cfg = config(&common)?;
            let r = harness::run_program(&cfg)?;
            for (k, layer) in r.layers.iter().enumerate() {
                println!(
                    "layer {k}: {} lines, longest pulse train {}, programming cycles {}",
                    layer.per_column_pulses.len(),
                    layer.max_pulses,
                    layer.total_cycles
                );
            }
            for f in &r.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Infer { common, dump } => {
            let cfg = config(&common)?;
            let r = harness::run_infer(&cfg, dump)?;
            println!("float accuracy {:.4}", r.float_accuracy);
            for row in &r.rows {
                println!(
                    "bits {:>2}  accuracy {:.4}  saturation {:.4}  agreement {:.4}",
                    row.bits, row.accuracy, row.saturation_rate, row.float_agreement
                );
            }
            for f in &r.dumps {
                println!("wrote {}", f.display());
            }
        }
        Command::Sweep(common) => {
            let cfg = config(&common)?;
            let r = harness::run_sweep(&cfg)?;
            println!("float accuracy {:.4} on {} images", r.float_accuracy, r.images);
            print!("{}", r.to_csv());
            println!("wrote {}", r.csv_path.display());
        }
        Command::Throughput {
            common,
            m,
            n,
            saf_bits,
            clock_hz,
            max_pulses,
        } => {
            let cfg = config(&common)?;
            let pulses = match max_pulses {
                Some(p) => p,
                None => harness::worst_case_pulses(&cfg.device, cfg.weight_bits, &cfg.array.programming)?,
            };
            let r = harness::run_throughput_report(m, n, saf_bits, clock_hz, Some(pulses))?;
            println!("equivalent MACs/cycle {}", r.macs_per_cycle);
            println!("throughput            {:.3} TOPS", r.tops);
            println!("longest pulse train   {pulses}");
            println!("programming cycles    {}", r.programming_cycles.unwrap_or(0));
        }
        Command::Calibrate(common) => {
            let cfg = config(&common)?;
            let r = harness::run_calibration_demo(&cfg)?;
            println!("zero-vector deviation      {:.3e}", r.zero_deviation);
            println!("basis deviation / bound    {:.4}", r.basis_bound_ratio);
            println!("random deviation / bound   {:.4} over {} vectors", r.random_bound_ratio, r.vectors);
            println!("random max relative error  {:.3e}", r.random_max_relative);
            if !r.within_bound() {
                bail!("calibration deviation exceeds the programming-error bound");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
