use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use sfl_core::data::{generate_blobs, write_idx};
use sfl_core::diagnostics::{bound_report, read_csv, Estimates};
use sfl_core::model::ModelSpec;
use sfl_core::netsim::{
    comm_bytes_per_round, round_latency, CostSetting, DeviceWork, Direction, Method, ModelSizes, NetworkProfile, Query, Speeds,
};
use sfl_core::quant::{dequantize, quantize};
use sfl_core::runtime::{run_training, Mode, RunConfig, Trainer};
use sfl_core::{Error, Tensor};

#[derive(Parser)]
#[command(name = "sfl", version, about = "Split/federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config and write metrics, checkpoint and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// wifi, 4g, 3g or UP/DOWN in Mbps.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Per-round communication cost of every method.
    Cost {
        #[arg(long, default_value = "vgg11")]
        model: String,
        #[arg(long, value_enum, default_value_t = Setting::Cifar10K5)]
        setting: Setting,
        /// Adds simulated round latency under this profile.
        #[arg(long)]
        profile: Option<String>,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Bound report from a run directory's diagnostics.csv and estimates.json.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        /// Rounds at which to state whether the bound holds.
        #[arg(long, value_delimiter = ',', default_value = "10,30")]
        at: Vec<usize>,
    },
    /// Write a synthetic blobs dataset as IDX files.
    GenData {
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Channels,height,width.
        #[arg(long, value_parser = parse_shape, default_value = "1,28,28")]
        shape: [usize; 3],
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Quick invariant checks on a tiny run.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Setting {
    /// Five devices with 10000 CIFAR-10 samples each, batches of 100.
    #[value(name = "cifar10-k5")]
    Cifar10K5,
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let dims: Vec<usize> = s.split(',').map(|d| d.trim().parse().map_err(|_| format!("bad dimension {d:?}"))).collect::<Result<_, _>>()?;
    dims.try_into().map_err(|_| "expected C,H,W".to_string())
}

/// Process exit status per error class; clap uses 2 for usage errors.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Network(_) => 3,
        Error::Io(_) => 4,
        Error::IdxMagic { .. }
        | Error::IdxTruncated(_)
        | Error::IdxCountMismatch { .. }
        | Error::EmptyDataset(_)
        | Error::LabelRange { .. }
        | Error::Record(_) => 5,
        Error::Spec(_) | Error::PartitionPoint { .. } | Error::IncompatibleHalves(_) => 6,
        Error::Round { source, .. } => exit_code(source),
        _ => 7,
    }
}

const SELFTEST_FAILED: u8 = 8;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SFL_LOG_LEVEL", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out, profile } => run(&config, seed, &out, profile),
        Command::Cost { model, setting, profile, csv } => cost(&model, setting, profile.as_deref(), csv),
        Command::Diagnose { run, at } => diagnose(&run, &at),
        Command::GenData { classes, per_class, shape, sigma, seed, out } => {
            gen_data(classes, per_class, shape, sigma, seed, &out)
        }
        Command::Selftest => selftest(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("sfl: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(config: &Path, seed: Option<u64>, out: &Path, profile: Option<String>) -> sfl_core::Result<u8> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if profile.is_some() {
        cfg.profile = profile;
    }
    cfg.validate()?;
    let data = cfg.dataset.load(cfg.seed, config.parent())?;
    info!("{} on {} samples, {} devices, {} rounds", cfg.mode.as_str(), data.len(), cfg.devices, cfg.rounds);
    let output = run_training(cfg, data)?;
    output.write_artifacts(out)?;
    fs::write(out.join("config.json"), output.config.to_json())?;
    let up = output.ledger.total(Query::default().direction(Direction::Up));
    let down = output.ledger.total(Query::default().direction(Direction::Down));
    println!(
        "train_acc {:.4}  test_acc {:.4}  bytes_up {up}  bytes_down {down}  -> {}",
        output.train_acc,
        output.test_acc,
        out.display()
    );
    Ok(0)
}

fn cost(model: &str, setting: Setting, profile: Option<&str>, csv: bool) -> sfl_core::Result<u8> {
    let (spec, setting) = match setting {
        Setting::Cifar10K5 => (ModelSpec::from_name_or_layers(model, [3, 32, 32], 10)?, CostSetting::cifar10_k5()),
    };
    let profile: Option<NetworkProfile> = profile.map(str::parse).transpose()?;
    let mut rows = Vec::new();
    for method in Method::ALL {
        let report = comm_bytes_per_round(method, &spec, &setting)?;
        let latency = match &profile {
            Some(p) => {
                let work: Vec<DeviceWork> = report.devices.iter().copied().map(DeviceWork::from).collect();
                Some(round_latency(&work, Speeds::default(), p)?.round_s())
            }
            None => None,
        };
        rows.push((method, report, latency));
    }
    let mut out = io::stdout().lock();
    if csv {
        writeln!(out, "method,bytes_up,bytes_down,total_gib,round_latency_s")?;
        for (m, r, l) in &rows {
            let l = l.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{m},{},{},{},{l}", r.total_up(), r.total_down(), r.total_gib())?;
        }
    } else {
        let params = ModelSizes::of(&spec)?.params;
        writeln!(out, "{} ({params} params), {} devices", spec.name, setting.samples_per_device.len())?;
        writeln!(out, "{:<22} {:>14} {:>14} {:>10} {:>12}", "method", "bytes_up", "bytes_down", "GiB", "latency_s")?;
        for (m, r, l) in &rows {
            let l = l.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            writeln!(out, "{:<22} {:>14} {:>14} {:>10.4} {:>12}", m.label(), r.total_up(), r.total_down(), r.total_gib(), l)?;
        }
    }
    Ok(0)
}

fn diagnose(run: &Path, at: &[usize]) -> sfl_core::Result<u8> {
    let records = read_csv(BufReader::new(fs::File::open(run.join("diagnostics.csv"))?))?;
    let estimates: Estimates = serde_json::from_str(&fs::read_to_string(run.join("estimates.json"))?)?;
    let report = bound_report(&records, estimates)?;
    print!("{}", report.summary());
    for &t in at {
        match report.holds_at(t) {
            Some(true) => println!("T={t}: bound holds"),
            Some(false) => println!("T={t}: bound VIOLATED"),
            None => warn!("T={t}: outside the {} logged rounds", records.len()),
        }
    }
    Ok(0)
}

fn gen_data(classes: usize, per_class: usize, shape: [usize; 3], sigma: f64, seed: u64, out: &Path) -> sfl_core::Result<u8> {
    let data = generate_blobs(classes, per_class, shape, sigma, seed)?;
    fs::create_dir_all(out)?;
    let (images, labels) = (out.join("images.idx"), out.join("labels.idx"));
    write_idx(&data, &images, &labels)?;
    println!("{} samples -> {} {}", data.len(), images.display(), labels.display());
    Ok(0)
}

fn selftest() -> sfl_core::Result<u8> {
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{:<44} {}", name, if ok { "ok" } else { "FAILED" });
        failures += !ok as u32;
    };
    for mode in [Mode::ClassicFL, Mode::VanillaDPFL, Mode::LocalLossDPFL, Mode::ActionFed] {
        let cfg = RunConfig { rho: 2, ..RunConfig::smoke(mode) };
        let data = cfg.dataset.load(cfg.seed, None)?;
        let mut t = Trainer::new(cfg, data)?;
        let mut agree = true;
        for round in 0..2 {
            let r = t.step()?;
            let predicted = comm_bytes_per_round(mode.method(r.transmitted), t.spec(), &t.cost_setting())?;
            agree &= predicted.total_bytes() == t.ledger().total(Query::default().round(round));
        }
        check(&format!("ledger matches cost model ({})", mode.as_str()), agree);
    }
    let a = Tensor::new(vec![4], vec![-1.0f32, 0.3, 0.7, 2.0])?;
    let z = quantize(&a)?;
    let back = dequantize(&z)?;
    let ok = a.data().iter().zip(back.data()).all(|(x, y)| (x - y).abs() <= z.scale / 2.0 + f32::EPSILON * 2.0);
    check("quantization round trip", ok);
    Ok(if failures == 0 { 0 } else { SELFTEST_FAILED })
}
