use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hpinn_core::experiments::{
    compare_methods, generate, run_experiment, run_sweep, symbolic_fits, ExperimentConfig, Method,
    RunOptions, SweepSpec,
};
use hpinn_core::autodiff::{DerivSpec, JetBatch};
use hpinn_core::dynamics::DifferentialSystem;
use hpinn_core::sampling::Dataset;
use hpinn_core::ude::ude_solve;
use hpinn_core::symreg::{evaluate_hidden_on_states, evaluate_network_on_data};
use hpinn_core::trainer::TrainReport;
use hpinn_core::{load_checkpoint, Error, Mlp};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "hpinn", version, about = "Hidden-term discovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment (or sweep) TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir` or `runs/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate and write the manifest only.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetKind {
    /// Hidden-term network of the physics-informed method.
    Hidden,
    /// Full-state network of the UDE baseline.
    Ude,
}

#[derive(Subcommand)]
enum Command {
    /// Write datasets and collocation sets without training.
    Generate(Common),
    /// Train the physics-informed hidden-term method.
    Train(Common),
    /// Train the UDE baseline.
    Ude(Common),
    /// Run a sweep over config overrides.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads; overrides the sweep file.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train both methods on identical data and compare them.
    Compare(Common),
    /// Symbolic regression on a saved network.
    Symfit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV whose states are fed to the network.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "hidden")]
        kind: NetKind,
        /// Learned coupling factor for shared-output models.
        #[arg(long)]
        scale: Option<f64>,
        /// Surrogate checkpoint; gives the trajectory for the hidden network.
        #[arg(long)]
        surrogate: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretty-print a checkpoint, report or manifest.
    Inspect { path: PathBuf },
}

fn output_dir(common: &Common, config_name: &str, configured: Option<&Path>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("runs").join(config_name))
}

fn options(common: &Common, method: Option<Method>) -> RunOptions {
    RunOptions {
        dry_run: common.dry_run,
        seed: common.seed,
        method,
        quiet: common.quiet,
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::Integration { .. } | Error::Conditioning(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn run_single(common: &Common, method: Option<Method>, compare: bool) -> Result<u8, Error> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = output_dir(common, &cfg.name, cfg.output_dir.as_deref());
    let opts = options(common, method);
    let outcome = if compare {
        compare_methods(&cfg, &out, &opts)?
    } else {
        run_experiment(&cfg, &out, &opts)?
    };
    for run in &outcome.runs {
        for (name, r) in [("pinn", &run.pinn), ("ude", &run.ude)] {
            if let Some(r) = r {
                println!(
                    "seed {} {name}: hidden MSE {:.4e}, surrogate MSE {:.4e}",
                    run.seed, r.report.hidden_mse, r.report.surrogate_mse
                );
                for fit in &r.symbolic {
                    for (j, m) in fit.selected.iter().enumerate() {
                        println!("  F{} ({:?}): {}", j + 1, fit.protocol, m.expression());
                    }
                }
            }
        }
    }
    println!("artifacts in {}", out.display());
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let out = output_dir(&common, &cfg.name, cfg.output_dir.as_deref());
            generate(&cfg, &out, &options(&common, None))?;
            println!("data in {}", out.display());
            Ok(0)
        }
        Command::Train(common) => run_single(&common, Some(Method::Pinn), false),
        Command::Ude(common) => run_single(&common, Some(Method::Ude), false),
        Command::Compare(common) => run_single(&common, None, true),
        Command::Sweep { common, workers } => {
            let mut spec = SweepSpec::load(&common.config)?;
            if let Some(w) = workers {
                spec.workers = w;
            }
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&spec.name));
            let outcome = run_sweep(&spec, &out, &options(&common, None))?;
            for t in &outcome.tables {
                println!("wrote {}", t.display());
            }
            let failed = outcome.failed();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", outcome.cells.len());
                return Ok(EXIT_PARTIAL);
            }
            Ok(0)
        }
        Command::Symfit {
            config,
            checkpoint,
            data,
            kind,
            scale,
            surrogate,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let system = cfg.system()?.clone();
            let system = cfg.train.apply_to(&system)?;
            let net = load_checkpoint(&checkpoint)?.to_mlp()?;
            let dataset = Dataset::read_csv(&data)?;
            let trajectory = symfit_trajectory(&cfg, &system, &dataset, &net, kind, surrogate.as_deref())?;
            let fits = symbolic_fits(&cfg, &system, &dataset, trajectory.as_deref(), |states| match kind {
                NetKind::Hidden => evaluate_hidden_on_states(&system, &net, scale, states),
                NetKind::Ude => evaluate_network_on_data(&net, states),
            })?;
            if fits.is_empty() {
                return Err(Error::Config(
                    "no symbolic fit possible: the hidden inputs are not plain states".into(),
                ));
            }
            for fit in &fits {
                for (j, m) in fit.selected.iter().enumerate() {
                    println!("F{} ({:?}): {}  [mse {:.3e}]", j + 1, fit.protocol, m.expression(), m.mse);
                }
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let path = dir.join("symbolic.json");
                let text = serde_json::to_string_pretty(&fits)?;
                std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
            }
            Ok(0)
        }
        Command::Inspect { path } => {
            inspect(&path)?;
            Ok(0)
        }
    }
}

fn symfit_trajectory(
    cfg: &ExperimentConfig,
    system: &DifferentialSystem,
    dataset: &Dataset,
    net: &Mlp,
    kind: NetKind,
    surrogate: Option<&Path>,
) -> Result<Option<Vec<Vec<f64>>>, Error> {
    if !system.is_ode() {
        return Ok(None);
    }
    let n = cfg.symreg.trajectory_points;
    match kind {
        NetKind::Hidden => {
            let Some(path) = surrogate else {
                return Ok(None);
            };
            let u = load_checkpoint(path)?.to_mlp()?;
            let times: Vec<f64> = (0..n)
                .map(|i| system.domain.horizon * i as f64 / (n - 1) as f64)
                .collect();
            let batch = JetBatch::forward(&u, &times, &DerivSpec::values())?;
            Ok(Some(batch.output().chunks(system.state_dim()).map(<[f64]>::to_vec).collect()))
        }
        NetKind::Ude => {
            let Some(first) = dataset.records.iter().min_by(|a, b| a.t.total_cmp(&b.t)) else {
                return Ok(None);
            };
            let span = system.domain.horizon - first.t;
            let times: Vec<f64> = (0..n).map(|i| first.t + span * i as f64 / (n - 1) as f64).collect();
            let step = cfg.ude.clone().unwrap_or_default().step;
            Ok(Some(ude_solve(system, net, &times, &first.u, step)?))
        }
    }
}

fn inspect(path: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("format").and_then(|f| f.as_str()) == Some("hpinn-mlp") {
        let ckpt = load_checkpoint(path)?;
        println!("network checkpoint");
        println!("  widths     {:?}", ckpt.widths);
        println!("  parameters {}", ckpt.params.len());
        println!("  seed       {:?}", ckpt.seed);
        println!("  step       {}", ckpt.step);
        println!("  input map  shift {:?} scale {:?}", ckpt.input_shift, ckpt.input_scale);
    } else if value.get("loss_measurement").is_some() {
        let r = TrainReport::read_json(path)?;
        let f = r.final_loss();
        println!("training report");
        println!("  method        {}", r.method);
        println!("  system        {}", r.system);
        println!("  iterations    {}", r.iterations);
        println!("  final L_M     {:.4e}", f.measurement);
        println!("  final L_B     {:.4e}", f.boundary);
        println!("  final L_P     {:.4e}", f.pinn);
        println!("  hidden MSE    {:.4e}", r.hidden_mse);
        println!("  surrogate MSE {:.4e}", r.surrogate_mse);
        if let Some(phi) = r.scale {
            println!("  phi           {phi:.6}");
        }
        println!("  seeds         {:?}", r.seeds);
    } else {
        println!("{}", serde_json::to_string_pretty(&value)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
