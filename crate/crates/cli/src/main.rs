use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xbar_core::circuit::CrossbarParams;
use xbar_core::harness::{
    load_dataset, load_mapped, load_model, map_model, nf_table, save_dataset, save_mapped,
    save_model, sweep, write_nf_table, write_report, ExperimentConfig, MapOptions, MapRun,
    ReportRow, Seeds, Variant,
};
use xbar_core::mapping::Arrangement;
use xbar_core::nn::{
    evaluate, gen_synthetic_dataset, inject_nonideal_weights, train, wct_train, Model, Split,
};
use xbar_core::pruning::{compression_rate, PruneMethod};
use xbar_core::{Error, Result};

/// Crossbar non-ideality simulator for structured-pruned networks.
#[derive(Parser)]
#[command(name = "xbar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic dataset files.
    Dataset {
        #[command(subcommand)]
        action: DatasetCommand,
    },
    /// Train a model (optionally pruned at init, optionally with WCT).
    Train(TrainArgs),
    /// Map a trained model onto non-ideal crossbars.
    Map(MapArgs),
    /// Evaluate a mapped model and append a report row.
    Infer(InferArgs),
    /// Tabulate NF per layer against crossbar size.
    Nf(NfArgs),
    /// Run the full factorial experiment from a config file.
    Sweep(SweepArgs),
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate train and test splits.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
    },
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print the default experiment config as JSON.
    PrintDefaults {
        /// Print the default crossbar parameters instead.
        #[arg(long)]
        xbar: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Cf,
    Xcs,
    Xrs,
}

impl From<Method> for PruneMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Cf => PruneMethod::Cf,
            Method::Xcs => PruneMethod::Xcs,
            Method::Xrs => PruneMethod::Xrs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Ascending,
    CenterOut,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    prune: Option<Method>,
    /// Sparsity ratio; defaults to the config's `prune.s`.
    #[arg(long, requires = "prune")]
    s: Option<f64>,
    #[arg(long)]
    wct: bool,
    /// Model, mask and shuffle seed; defaults to the first config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    model: PathBuf,
    /// Crossbar parameters (JSON); defaults apply when omitted.
    #[arg(long)]
    xbar: Option<PathBuf>,
    #[arg(long)]
    size: usize,
    #[arg(long)]
    rearrange: bool,
    #[arg(long, value_enum, default_value = "ascending")]
    arrangement: Order,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    mapped: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct NfArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    xbar: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report path; defaults to `<out_dir>/sweep.csv`.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn xbar_params(path: Option<&Path>, size: usize) -> Result<CrossbarParams> {
    let p = match path {
        Some(p) => read_json::<CrossbarParams>(p)?,
        None => CrossbarParams::default(),
    };
    let p = p.with_size(size);
    p.validate()?;
    Ok(p)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("config types serialize")
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = a.prune {
        cfg.prune.method = m.into();
    }
    if let Some(s) = a.s {
        cfg.prune.s = s;
    }
    cfg.validate()?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let spec = cfg.model_spec(seed);
    let pattern = a.prune.map(|_| cfg.pattern(&spec, seed)).transpose()?;
    let (train_set, test_set) = cfg.dataset.generate()?;
    let tc = cfg.train_config(seed, pattern.clone());
    let mut model = train(&Model::init(&spec)?, &train_set, &tc)?.model;
    let mut cutoffs = None;
    if a.wct {
        let out = wct_train(&model, &train_set, &tc)?;
        model = out.model;
        cutoffs = Some(out.cutoffs);
    }
    let seeds = Seeds {
        model: seed,
        train: seed,
        dataset: Some(cfg.dataset.seed),
    };
    let hash = save_model(&a.out, &model, pattern.as_ref(), &tc, seeds, cutoffs)?;
    println!(
        "model {} (hash {hash}), test accuracy {:.4}",
        a.out.display(),
        evaluate(&model, &test_set)?
    );
    Ok(())
}

fn cmd_map(a: MapArgs) -> Result<()> {
    let start = Instant::now();
    let stored = load_model(&a.model)?;
    let params = xbar_params(a.xbar.as_deref(), a.size)?;
    let arrangement = a.rearrange.then_some(match a.arrangement {
        Order::Ascending => Arrangement::Ascending,
        Order::CenterOut => Arrangement::CenterOut,
    });
    let mapped = map_model(
        &stored.model,
        stored.pattern.as_ref(),
        &params,
        &MapOptions {
            arrangement,
            seed: a.seed,
        },
    )?;
    let run = MapRun {
        model_hash: &stored.manifest.config_hash,
        crossbar: &params,
        seed: a.seed,
        arrangement,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    save_mapped(&a.out, &mapped, &run)?;
    println!(
        "mapped {} at {n}x{n}, mean NF {:.6}",
        a.out.display(),
        mapped.mean_nf().unwrap_or(0.0),
        n = a.size
    );
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let start = Instant::now();
    let stored = load_model(&a.model)?;
    let (weights, mapped) = load_mapped(&a.mapped, &stored)?;
    let test_set = load_dataset(&a.dataset, Split::Test)?;
    let software = evaluate(&stored.model, &test_set)?;
    let nonideal = evaluate(
        &inject_nonideal_weights(&stored.model, &weights)?,
        &test_set,
    )?;
    let pattern = stored.pattern.as_ref();
    let size = mapped.crossbar.n_rows;
    let rate = match pattern {
        Some(p) => compression_rate(&stored.model.spec.geometries()?, p, size)?,
        None => 1.0,
    };
    let variant = Variant {
        pruned: pattern.is_some(),
        rearrange: mapped.arrangement.is_some(),
        wct: stored.wct(),
    };
    let row = ReportRow {
        seed: mapped.seed,
        method: pattern.map_or_else(|| "none".into(), |p| p.method.to_string()),
        s: pattern.map_or(0.0, |p| p.s),
        crossbar_size: size,
        mitigation: variant.mitigation(),
        software_accuracy: software,
        nonideal_accuracy: nonideal,
        mean_nf: mapped.mean_nf.unwrap_or(0.0),
        compression_rate: rate,
        wall_time_s: mapped.wall_time_s + start.elapsed().as_secs_f64(),
    };
    write_report(&a.report, &[row], true)?;
    println!(
        "software {software:.4}, non-ideal {nonideal:.4} -> {}",
        a.report.display()
    );
    Ok(())
}

fn cmd_nf(a: NfArgs) -> Result<()> {
    let stored = load_model(&a.model)?;
    if a.sizes.is_empty() {
        return Err(Error::InvalidParam("--sizes must not be empty".into()));
    }
    let params = xbar_params(a.xbar.as_deref(), a.sizes[0])?;
    for &n in &a.sizes {
        params.clone().with_size(n).validate()?;
    }
    let rows = nf_table(
        &stored.model,
        stored.pattern.as_ref(),
        &params,
        &a.sizes,
        a.seed,
    )?;
    write_nf_table(&a.report, &rows)?;
    println!("{} rows -> {}", rows.len(), a.report.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let rows = sweep(&cfg)?;
    let path = a.report.unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
    write_report(&path, &rows, false)?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset {
            action:
                DatasetCommand::Gen {
                    seed,
                    out,
                    n_train,
                    n_test,
                },
        } => {
            let (train_set, test_set) = gen_synthetic_dataset(seed, n_train, n_test)?;
            let hash = save_dataset(&out, seed, &[&train_set, &test_set])?;
            println!("dataset {} (hash {hash})", out.display());
            Ok(())
        }
        Command::Train(a) => cmd_train(a),
        Command::Map(a) => cmd_map(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Nf(a) => cmd_nf(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Config {
            action: ConfigCommand::PrintDefaults { xbar },
        } => {
            if xbar {
                println!("{}", to_json(&CrossbarParams::default()));
            } else {
                println!("{}", to_json(&ExperimentConfig::default()));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
