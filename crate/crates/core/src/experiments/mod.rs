//! Config-driven experiment runner: data generation, PINN and UDE training,
//! symbolic distillation, sweeps and method comparisons, all written as
//! CSV/JSON artifacts.

mod config;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    derive_seed, DataConfig, ExperimentConfig, Method, SymregProtocol, SymregSettings, SystemConfig,
};
pub use sweep::{run_sweep, Axis, CellResult, SweepOutcome, SweepSpec, TableKind};

use crate::dynamics::DifferentialSystem;
use crate::error::{Error, Result};
use crate::neural::{save_checkpoint, Mlp, MlpCheckpoint};
use crate::sampling::{
    add_noise, burgers_reference, collocation, ode_reference, sample_measurements, CollocationSet, Dataset,
    ReferenceSolution, SPACE_COLUMN,
};
use crate::symreg::{
    evaluate_hidden_on_states, evaluate_network_on_data, pareto_rank, select_model, threshold_sweep, BasisLibrary,
    RankedModel, SampleTable, SymbolicModel,
};
use crate::trainer::{evaluate_hidden, train, TrainReport};
use crate::ude::{ude_solve, ude_train};
use crate::autodiff::{DerivSpec, JetBatch};

/// Everything an experiment seed needs before training.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub system: DifferentialSystem,
    pub reference: ReferenceSolution,
    pub dataset: Dataset,
    pub collocation: CollocationSet,
}

/// Builds the reference solution for a system.
pub fn reference_for(system: &DifferentialSystem, config: &ExperimentConfig) -> Result<ReferenceSolution> {
    if system.is_ode() {
        Ok(ReferenceSolution::Ode(ode_reference(system, config.data.reference_step)?))
    } else {
        let nu = system.viscosity().ok_or_else(|| Error::config("PDE system without viscosity"))?;
        let settings = match &config.system {
            SystemConfig::Burgers { reference, .. } => *reference,
            _ => Default::default(),
        };
        Ok(ReferenceSolution::Pde(burgers_reference(nu, &settings)?))
    }
}

/// Dataset and collocation set for one seed, given a shared reference.
pub fn prepare_seed(
    config: &ExperimentConfig,
    system: &DifferentialSystem,
    reference: &ReferenceSolution,
    seed: u64,
) -> Result<Inputs> {
    let clean = sample_measurements(system, reference, &config.data.schedule, config.data.spatial_points)?;
    let dataset = add_noise(&clean, config.data.noise, derive_seed(seed, 1));
    let colloc = collocation(
        system,
        config.collocation.n_interior,
        config.collocation.n_boundary,
        derive_seed(seed, 2),
    )?;
    Ok(Inputs {
        system: system.clone(),
        reference: reference.clone(),
        dataset,
        collocation: colloc,
    })
}

/// Symbolic fits of one predictor under one input protocol.
#[derive(Clone, Debug, Serialize)]
pub struct SymbolicFit {
    pub protocol: SymregProtocol,
    pub samples: usize,
    /// Set when fewer samples than library terms forced ridge regularization.
    pub underdetermined: bool,
    /// Reported model per hidden term.
    pub selected: Vec<SymbolicModel>,
    /// Pareto-ranked candidates per hidden term.
    pub terms: Vec<Vec<RankedModel>>,
}

/// Samples a trained predictor for symbolic regression. `trajectory` holds
/// the states of the model's own solution on a uniform time grid.
fn symreg_samples<P>(
    system: &DifferentialSystem,
    dataset: &Dataset,
    trajectory: Option<&[Vec<f64>]>,
    protocol: SymregProtocol,
    mut predict: P,
) -> Result<Option<SampleTable>>
where
    P: FnMut(&[Vec<f64>]) -> Result<SampleTable>,
{
    let plain = system
        .hidden_inputs
        .iter()
        .all(|h| h.derivative == crate::dynamics::Derivative::Value);
    if !plain {
        return Ok(None);
    }
    match protocol {
        SymregProtocol::TrainingData => Ok(Some(predict(&dataset.states())?)),
        SymregProtocol::Trajectory => trajectory.map(|states| predict(states)).transpose(),
        SymregProtocol::Both => Err(Error::config("protocol must be resolved before sampling")),
    }
}

fn symbolic_fit(config: &ExperimentConfig, system: &DifferentialSystem, table: &SampleTable, protocol: SymregProtocol) -> Result<SymbolicFit> {
    let library = BasisLibrary::polynomial(system.hidden_input_names(), config.symreg.max_degree);
    let targets = config
        .symreg
        .target
        .as_ref()
        .map(|t| t.iter().map(|s| library.parse_term(s)).collect::<Result<Vec<_>>>())
        .transpose()?;
    let outputs = table.outputs.first().map_or(0, Vec::len);
    let mut terms = Vec::with_capacity(outputs);
    let mut selected = Vec::with_capacity(outputs);
    for j in 0..outputs {
        let y = table.column(j);
        let mut models = threshold_sweep(&table.inputs, &y, &library, &config.symreg.thresholds, Some(config.symreg.ridge))?;
        if let Some(t) = &targets {
            models.iter_mut().for_each(|m| m.mark_target(t));
        }
        let ranked = pareto_rank(&models);
        let pick = select_model(&ranked, &y, config.symreg.selection_tolerance)
            .ok_or_else(|| Error::config("symbolic fit produced no candidates"))?;
        selected.push(pick.clone());
        terms.push(ranked);
    }
    Ok(SymbolicFit {
        protocol,
        samples: table.inputs.len(),
        underdetermined: table.inputs.len() < library.len(),
        selected,
        terms,
    })
}

/// Runs every configured protocol for a predictor.
pub fn symbolic_fits<P>(
    config: &ExperimentConfig,
    system: &DifferentialSystem,
    dataset: &Dataset,
    trajectory: Option<&[Vec<f64>]>,
    mut predict: P,
) -> Result<Vec<SymbolicFit>>
where
    P: FnMut(&[Vec<f64>]) -> Result<SampleTable>,
{
    let protocols = match config.symreg.protocol {
        SymregProtocol::Both => vec![SymregProtocol::TrainingData, SymregProtocol::Trajectory],
        p => vec![p],
    };
    let mut out = Vec::new();
    for p in protocols {
        if let Some(table) = symreg_samples(system, dataset, trajectory, p, &mut predict)? {
            out.push(symbolic_fit(config, system, &table, p)?);
        }
    }
    Ok(out)
}

/// Result of one method on one seed.
#[derive(Clone, Debug, Serialize)]
pub struct MethodRun {
    pub report: TrainReport,
    pub symbolic: Vec<SymbolicFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub pinn: Option<MethodRun>,
    pub ude: Option<MethodRun>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutcome {
    pub name: String,
    pub runs: Vec<SeedRun>,
}

impl ExperimentOutcome {
    fn collect(&self, pick: impl Fn(&SeedRun) -> Option<&MethodRun>) -> Vec<f64> {
        self.runs.iter().filter_map(pick).map(|r| r.report.hidden_mse).collect()
    }

    pub fn pinn_hidden_mse(&self) -> Vec<f64> {
        self.collect(|r| r.pinn.as_ref())
    }

    pub fn ude_hidden_mse(&self) -> Vec<f64> {
        self.collect(|r| r.ude.as_ref())
    }
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub dry_run: bool,
    /// Replaces the configured seed list.
    pub seed: Option<u64>,
    /// Replaces the configured method.
    pub method: Option<Method>,
    /// Suppresses per-seed progress lines on stderr.
    pub quiet: bool,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    seeds: Vec<ManifestSeed>,
    dry_run: bool,
}

#[derive(Serialize)]
struct ManifestSeed {
    seed: u64,
    noise_seed: u64,
    collocation_seed: u64,
    model_seed: u64,
}

fn manifest_seeds(seeds: &[u64]) -> Vec<ManifestSeed> {
    seeds
        .iter()
        .map(|&s| ManifestSeed {
            seed: s,
            noise_seed: derive_seed(s, 1),
            collocation_seed: derive_seed(s, 2),
            model_seed: derive_seed(s, 3),
        })
        .collect()
}

fn save_net(net: &Mlp, seed: u64, steps: usize, path: &Path) -> Result<()> {
    save_checkpoint(&MlpCheckpoint::new(net, Some(seed), steps as u64), path)
}

/// `x_coord,t,u_reference[,u_surrogate]` over every stored slice and node.
pub fn write_solution_grid(path: &Path, reference: &ReferenceSolution, surrogate: Option<&Mlp>) -> Result<()> {
    let ReferenceSolution::Pde(grid) = reference else {
        return Err(Error::config("solution grid export needs a PDE reference"));
    };
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![SPACE_COLUMN, "t", "u_reference"];
    if surrogate.is_some() {
        header.push("u_surrogate");
    }
    w.write_record(&header)?;
    for (ti, &t) in grid.ts.iter().enumerate() {
        let coords: Vec<f64> = grid.xs.iter().flat_map(|&x| [x, t]).collect();
        let pred = match surrogate {
            Some(net) => Some(
                JetBatch::forward(net, &coords, &DerivSpec::values())?
                    .output()
                    .to_vec(),
            ),
            None => None,
        };
        for (xi, &x) in grid.xs.iter().enumerate() {
            let mut row = vec![x.to_string(), t.to_string(), grid.at(ti, xi).to_string()];
            if let Some(p) = &pred {
                row.push(p[xi].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the dataset, collocation and (for PDEs) reference grid for each
/// seed without training.
pub fn generate(config: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<()> {
    config.validate()?;
    let seeds = opts.seed.map_or_else(|| config.seeds.clone(), |s| vec![s]);
    create_dir(out)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            tool: "hpinn",
            version: env!("CARGO_PKG_VERSION"),
            config,
            seeds: manifest_seeds(&seeds),
            dry_run: opts.dry_run,
        },
    )?;
    if opts.dry_run {
        return Ok(());
    }
    let system = config.system()?;
    let reference = reference_for(&system, config)?;
    if !system.is_ode() {
        write_solution_grid(&out.join("solution_grid.csv"), &reference, None)?;
    }
    for &seed in &seeds {
        let dir = out.join(format!("seed_{seed}"));
        create_dir(&dir)?;
        let inputs = prepare_seed(config, &system, &reference, seed)?;
        inputs.dataset.write_csv(&dir.join("dataset.csv"))?;
        inputs.collocation.write_csv(&dir.join("collocation.csv"))?;
    }
    Ok(())
}

/// Trains the configured method(s) for each seed and writes all artifacts
/// under `out/seed_<s>/`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<ExperimentOutcome> {
    config.validate()?;
    let method = opts.method.unwrap_or(config.method);
    if matches!(method, Method::Ude | Method::Both) && config.ude.is_none() {
        return Err(Error::config("UDE runs need a [ude] section"));
    }
    let seeds = opts.seed.map_or_else(|| config.seeds.clone(), |s| vec![s]);
    let system = config.system()?;
    if matches!(method, Method::Ude | Method::Both) && !system.is_ode() {
        return Err(Error::config("the UDE baseline supports ODE systems only"));
    }
    create_dir(out)?;
    let probe = out.join(".write_test");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
    let mut resolved = config.clone();
    resolved.method = method;
    resolved.seeds = seeds.clone();
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            tool: "hpinn",
            version: env!("CARGO_PKG_VERSION"),
            config: &resolved,
            seeds: manifest_seeds(&seeds),
            dry_run: opts.dry_run,
        },
    )?;
    if opts.dry_run {
        return Ok(ExperimentOutcome {
            name: config.name.clone(),
            runs: Vec::new(),
        });
    }
    let reference = reference_for(&system, config)?;
    let mut runs = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let dir = out.join(format!("seed_{seed}"));
        create_dir(&dir)?;
        let inputs = prepare_seed(config, &system, &reference, seed)?;
        inputs.dataset.write_csv(&dir.join("dataset.csv"))?;
        inputs.collocation.write_csv(&dir.join("collocation.csv"))?;
        let pinn = if matches!(method, Method::Pinn | Method::Both) {
            Some(run_pinn(config, &inputs, seed, &dir)?)
        } else {
            None
        };
        let ude = if matches!(method, Method::Ude | Method::Both) {
            Some(run_ude(config, &inputs, seed, &dir)?)
        } else {
            None
        };
        if !opts.quiet {
            let fmt = |r: &Option<MethodRun>| r.as_ref().map_or("-".to_string(), |r| format!("{:.3e}", r.report.hidden_mse));
            eprintln!(
                "[{}] seed {seed} ({}/{}): hidden MSE pinn {} ude {}",
                config.name,
                i + 1,
                seeds.len(),
                fmt(&pinn),
                fmt(&ude)
            );
        }
        runs.push(SeedRun { seed, pinn, ude });
    }
    let outcome = ExperimentOutcome {
        name: config.name.clone(),
        runs,
    };
    write_summary(&outcome, out)?;
    Ok(outcome)
}

/// Trains both methods on identical data and writes `comparison.csv`.
pub fn compare_methods(config: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let opts = RunOptions {
        method: Some(Method::Both),
        ..opts.clone()
    };
    run_experiment(config, out, &opts)
}

fn run_pinn(config: &ExperimentConfig, inputs: &Inputs, seed: u64, dir: &Path) -> Result<MethodRun> {
    let mut tc = config.train.clone();
    tc.seed = derive_seed(seed, 3);
    let outcome = train(&inputs.system, &inputs.dataset, &inputs.collocation, &tc, &inputs.reference)?;
    let system = tc.apply_to(&inputs.system)?;
    let m = &outcome.model;
    save_net(&m.surrogate, tc.seed, tc.iterations, &dir.join("surrogate.json"))?;
    save_net(&m.hidden, tc.seed, tc.iterations, &dir.join("hidden.json"))?;
    if let Some(b) = &m.boundary {
        save_net(b, tc.seed, tc.iterations, &dir.join("boundary.json"))?;
    }
    if let Some(phi) = m.scale {
        write_json(&dir.join("scale.json"), &serde_json::json!({ "phi": phi }))?;
    }
    outcome.report.write_json(&dir.join("report.json"))?;
    outcome.report.write_loss_csv(&dir.join("loss.csv"))?;
    write_json(&dir.join("timing.json"), &serde_json::json!({ "pinn_seconds": outcome.report.elapsed_seconds }))?;
    evaluate_hidden(&m.hidden, m.scale, &system, &inputs.reference, &tc)?.write_csv(&dir.join("hidden_eval.csv"), &system)?;
    if !system.is_ode() {
        write_solution_grid(&dir.join("solution_grid.csv"), &inputs.reference, Some(&m.surrogate))?;
    }
    let trajectory = if system.is_ode() {
        let times = uniform_times(system.domain.horizon, config.symreg.trajectory_points);
        let batch = JetBatch::forward(&m.surrogate, &times, &DerivSpec::values())?;
        Some(batch.output().chunks(system.state_dim()).map(<[f64]>::to_vec).collect::<Vec<_>>())
    } else {
        None
    };
    let symbolic = symbolic_fits(config, &system, &inputs.dataset, trajectory.as_deref(), |states| {
        evaluate_hidden_on_states(&system, &m.hidden, m.scale, states)
    })?;
    write_json(&dir.join("symbolic.json"), &symbolic)?;
    Ok(MethodRun {
        report: outcome.report,
        symbolic,
    })
}

fn run_ude(config: &ExperimentConfig, inputs: &Inputs, seed: u64, dir: &Path) -> Result<MethodRun> {
    let mut uc = config.ude.clone().ok_or_else(|| Error::config("missing [ude] section"))?;
    uc.seed = derive_seed(seed, 3);
    let outcome = ude_train(&inputs.system, &inputs.dataset, &uc, &inputs.reference)?;
    save_net(&outcome.network, uc.seed, uc.iterations, &dir.join("ude_network.json"))?;
    outcome.report.write_json(&dir.join("ude_report.json"))?;
    outcome.report.write_loss_csv(&dir.join("ude_loss.csv"))?;
    write_json(&dir.join("ude_timing.json"), &serde_json::json!({ "ude_seconds": outcome.report.elapsed_seconds }))?;
    let symbolic = if inputs.system.hidden_terms() == inputs.system.state_dim() {
        let first = inputs
            .dataset
            .records
            .iter()
            .min_by(|a, b| a.t.total_cmp(&b.t))
            .ok_or_else(|| Error::validation("empty dataset"))?;
        let span = inputs.system.domain.horizon - first.t;
        let times: Vec<f64> = uniform_times(span, config.symreg.trajectory_points)
            .into_iter()
            .map(|t| first.t + t)
            .collect();
        let trajectory = ude_solve(&inputs.system, &outcome.network, &times, &first.u, uc.step)?;
        symbolic_fits(config, &inputs.system, &inputs.dataset, Some(&trajectory), |states| {
            evaluate_network_on_data(&outcome.network, states)
        })?
    } else {
        Vec::new()
    };
    write_json(&dir.join("ude_symbolic.json"), &symbolic)?;
    Ok(MethodRun {
        report: outcome.report,
        symbolic,
    })
}

/// `summary.csv` (one row per seed and method) and, when both methods ran,
/// `comparison.csv`.
fn write_summary(outcome: &ExperimentOutcome, out: &Path) -> Result<()> {
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["seed", "method", "hidden_mse", "surrogate_mse", "final_L_M", "final_L_B", "final_L_P"])?;
    for run in &outcome.runs {
        for (name, r) in [("pinn", &run.pinn), ("ude", &run.ude)] {
            if let Some(r) = r {
                let f = r.report.final_loss();
                w.write_record([
                    run.seed.to_string(),
                    name.to_string(),
                    r.report.hidden_mse.to_string(),
                    r.report.surrogate_mse.to_string(),
                    f.measurement.to_string(),
                    f.boundary.to_string(),
                    f.pinn.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let both = outcome.runs.iter().all(|r| r.pinn.is_some() && r.ude.is_some());
    if both && !outcome.runs.is_empty() {
        let path = out.join("comparison.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["seed", "pinn_hidden_mse", "ude_hidden_mse", "winner"])?;
        for run in &outcome.runs {
            let (p, u) = (run.pinn.as_ref().unwrap().report.hidden_mse, run.ude.as_ref().unwrap().report.hidden_mse);
            w.write_record([run.seed.to_string(), p.to_string(), u.to_string(), winner(p, u).into()])?;
        }
        let (mp, mu) = (median(&outcome.pinn_hidden_mse()), median(&outcome.ude_hidden_mse()));
        w.write_record(["median".to_string(), mp.to_string(), mu.to_string(), winner(mp, mu).into()])?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn winner(pinn: f64, ude: f64) -> &'static str {
    if pinn < ude {
        "pinn"
    } else if ude < pinn {
        "ude"
    } else {
        "tie"
    }
}

fn uniform_times(span: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| span * i as f64 / (n - 1).max(1) as f64).collect()
}

/// Path of a per-seed artifact.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}
