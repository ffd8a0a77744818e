use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::{median, run_experiment, ExperimentOutcome, MethodRun, RunOptions};
use crate::error::{Error, Result};

/// One sweep axis: a dotted key into the base config and its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted path such as `data.schedule.count` or `collocation.n_interior`.
    pub key: String,
    /// Column label in the output tables; defaults to the last key segment.
    #[serde(default)]
    pub label: Option<String>,
    pub values: Vec<toml::Value>,
}

impl Axis {
    pub fn label(&self) -> &str {
        self.label
            .as_deref()
            .unwrap_or_else(|| self.key.rsplit('.').next().unwrap_or(&self.key))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// Median hidden-term MSE per cell.
    #[default]
    HiddenMse,
    /// Symbolic coefficients and recovery flags per cell.
    Symbolic,
}

/// A base experiment plus axis overrides; cells are the cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    /// Base config file, relative to the sweep file.
    #[serde(default)]
    pub base: Option<PathBuf>,
    /// Inline base config, used when `base` is absent.
    #[serde(default)]
    pub config: Option<toml::Value>,
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub table: TableKind,
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Loads a sweep file and resolves a relative `base` path against it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text)?;
        if let Some(b) = &spec.base {
            if b.is_relative() {
                spec.base = Some(path.parent().unwrap_or(Path::new(".")).join(b));
            }
        }
        Ok(spec)
    }

    fn base_value(&self) -> Result<toml::Value> {
        match (&self.base, &self.config) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Ok(toml::from_str(&text)?)
            }
            (None, Some(v)) => Ok(v.clone()),
            (None, None) => Err(Error::config("sweep needs a base config file or an inline [config]")),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Axis value indices of every cell, last axis fastest.
    pub fn cell_indices(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new()];
        for axis in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    (0..axis.values.len()).map(move |i| {
                        let mut c = c.clone();
                        c.push(i);
                        c
                    })
                })
                .collect();
        }
        cells
    }

    /// Expands and validates every cell before anything runs.
    pub fn cells(&self) -> Result<Vec<ExperimentConfig>> {
        if self.axes.is_empty() || self.axes.iter().any(|a| a.values.is_empty()) {
            return Err(Error::config("sweep needs at least one axis and every axis needs values"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        let base = self.base_value()?;
        self.cell_indices()
            .iter()
            .map(|idx| {
                let mut v = base.clone();
                for (axis, &i) in self.axes.iter().zip(idx) {
                    set_dotted(&mut v, &axis.key, axis.values[i].clone())?;
                }
                let cfg = ExperimentConfig::from_value(v)
                    .map_err(|e| Error::config(format!("cell {}: {e}", describe(self, idx))))?;
                cfg.validate()
                    .map_err(|e| Error::config(format!("cell {}: {e}", describe(self, idx))))?;
                Ok(cfg)
            })
            .collect()
    }
}

fn describe(spec: &SweepSpec, idx: &[usize]) -> String {
    spec.axes
        .iter()
        .zip(idx)
        .map(|(a, &i)| format!("{}={}", a.label(), a.values[i]))
        .collect::<Vec<_>>()
        .join(",")
}

/// Sets a dotted key, creating tables on the way. A key under
/// `data.schedule` replaces the whole schedule, since its variants are
/// mutually exclusive.
pub fn set_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed sweep key `{key}`")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("sweep key `{key}` descends into a non-table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        let replace = parts[..=i] == ["data", "schedule"];
        if replace || !table.contains_key(*part) {
            table.insert(part.to_string(), toml::Value::Table(Default::default()));
        }
        node = table.get_mut(*part).expect("inserted above");
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub index: Vec<usize>,
    pub label: String,
    pub directory: PathBuf,
    pub outcome: Option<ExperimentOutcome>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepOutcome {
    pub name: String,
    pub cells: Vec<CellResult>,
    pub tables: Vec<PathBuf>,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Runs every cell on a pool of `spec.workers` threads and writes the
/// aggregated tables. Failing cells are recorded and do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, out: &Path, opts: &RunOptions) -> Result<SweepOutcome> {
    let configs = spec.cells()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let indices = spec.cell_indices();
    let jobs: Vec<(usize, &ExperimentConfig)> = configs.iter().enumerate().collect();
    let run_cell = |(i, cfg): &(usize, &ExperimentConfig)| -> CellResult {
        let dir = out.join(format!("cell_{i:03}"));
        let result = run_experiment(cfg, &dir, opts);
        let label = describe(spec, &indices[*i]);
        match result {
            Ok(o) => CellResult {
                index: indices[*i].clone(),
                label,
                directory: dir,
                outcome: Some(o),
                error: None,
            },
            Err(e) => {
                if !opts.quiet {
                    eprintln!("[{}] cell {label} failed: {e}", spec.name);
                }
                CellResult {
                    index: indices[*i].clone(),
                    label,
                    directory: dir,
                    outcome: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };
    let cells: Vec<CellResult> = if spec.workers == 1 {
        jobs.iter().map(run_cell).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run_cell).collect())
    };
    let mut outcome = SweepOutcome {
        name: spec.name.clone(),
        cells,
        tables: Vec::new(),
    };
    if opts.dry_run {
        return Ok(outcome);
    }
    outcome.tables.push(write_cells(spec, &outcome, &out.join("cells.csv"))?);
    match spec.table {
        TableKind::HiddenMse => {
            for method in ["pinn", "ude"] {
                if let Some(p) = write_grid(spec, &outcome, method, &out.join(format!("table_{method}.csv")))? {
                    outcome.tables.push(p);
                }
            }
        }
        TableKind::Symbolic => outcome.tables.push(write_symbolic(spec, &outcome, &configs, &out.join("symbolic_table.csv"))?),
    }
    Ok(outcome)
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn method_runs<'a>(o: &'a ExperimentOutcome, method: &str) -> Vec<&'a MethodRun> {
    o.runs
        .iter()
        .filter_map(|r| if method == "pinn" { r.pinn.as_ref() } else { r.ude.as_ref() })
        .collect()
}

/// `cells.csv`: axis values, method, seed count, median hidden and surrogate
/// MSE, error text.
fn write_cells(spec: &SweepSpec, outcome: &SweepOutcome, path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = spec.axes.iter().map(|a| a.label().to_string()).collect();
    header.extend(["method", "seeds", "median_hidden_mse", "median_surrogate_mse", "error"].map(String::from));
    w.write_record(&header)?;
    for cell in &outcome.cells {
        let axis_vals: Vec<String> = spec.axes.iter().zip(&cell.index).map(|(a, &i)| value_text(&a.values[i])).collect();
        match (&cell.outcome, &cell.error) {
            (Some(o), _) => {
                for method in ["pinn", "ude"] {
                    let runs = method_runs(o, method);
                    if runs.is_empty() {
                        continue;
                    }
                    let h: Vec<f64> = runs.iter().map(|r| r.report.hidden_mse).collect();
                    let s: Vec<f64> = runs.iter().map(|r| r.report.surrogate_mse).collect();
                    let mut row = axis_vals.clone();
                    row.extend([
                        method.to_string(),
                        runs.len().to_string(),
                        median(&h).to_string(),
                        median(&s).to_string(),
                        String::new(),
                    ]);
                    w.write_record(&row)?;
                }
            }
            (None, err) => {
                let mut row = axis_vals;
                row.extend([String::new(), "0".into(), String::new(), String::new(), err.clone().unwrap_or_default()]);
                w.write_record(&row)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Table layout of median hidden MSE: rows are the first axis, columns the
/// remaining axes combined. Failed cells are left empty.
fn write_grid(spec: &SweepSpec, outcome: &SweepOutcome, method: &str, path: &Path) -> Result<Option<PathBuf>> {
    let any = outcome
        .cells
        .iter()
        .any(|c| c.outcome.as_ref().is_some_and(|o| !method_runs(o, method).is_empty()));
    if !any {
        return Ok(None);
    }
    let first = &spec.axes[0];
    let cols_per_row = outcome.cells.len() / first.values.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![first.label().to_string()];
    for cell in outcome.cells.iter().take(cols_per_row) {
        let name: Vec<String> = spec.axes[1..]
            .iter()
            .zip(&cell.index[1..])
            .map(|(a, &i)| format!("{}={}", a.label(), value_text(&a.values[i])))
            .collect();
        header.push(if name.is_empty() { "median_hidden_mse".into() } else { name.join(",") });
    }
    w.write_record(&header)?;
    for (r, chunk) in outcome.cells.chunks(cols_per_row).enumerate() {
        let mut row = vec![value_text(&first.values[r])];
        for cell in chunk {
            let v = cell
                .outcome
                .as_ref()
                .map(|o| method_runs(o, method).iter().map(|m| m.report.hidden_mse).collect::<Vec<_>>())
                .filter(|h| !h.is_empty())
                .map_or(String::new(), |h| median(&h).to_string());
            row.push(v);
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(Some(path.to_path_buf()))
}

/// Symbolic table: per cell and method, each hidden term's selected
/// expression (first seed), the median coefficient of the target monomial
/// and the fraction of seeds in which the target set was recovered.
fn write_symbolic(spec: &SweepSpec, outcome: &SweepOutcome, configs: &[ExperimentConfig], path: &Path) -> Result<PathBuf> {
    let terms = outcome
        .cells
        .iter()
        .filter_map(|c| c.outcome.as_ref())
        .flat_map(|o| o.runs.iter())
        .flat_map(|r| [r.pinn.as_ref(), r.ude.as_ref()])
        .flatten()
        .filter_map(|m| m.symbolic.first())
        .map(|f| f.selected.len())
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = spec.axes.iter().map(|a| a.label().to_string()).collect();
    for method in ["pinn", "ude"] {
        for j in 1..=terms {
            header.push(format!("{method}_F{j}_expression"));
            header.push(format!("{method}_F{j}_coefficient"));
            header.push(format!("{method}_F{j}_recovered"));
        }
    }
    w.write_record(&header)?;
    for (cell, cfg) in outcome.cells.iter().zip(configs) {
        let mut row: Vec<String> = spec.axes.iter().zip(&cell.index).map(|(a, &i)| value_text(&a.values[i])).collect();
        let target = cfg.symreg.target.as_ref().and_then(|t| t.first()).cloned();
        for method in ["pinn", "ude"] {
            let runs = cell.outcome.as_ref().map(|o| method_runs(o, method)).unwrap_or_default();
            let wanted = match cfg.method {
                Method::Both => true,
                Method::Pinn => method == "pinn",
                Method::Ude => method == "ude",
            };
            for j in 0..terms {
                let models: Vec<_> = runs
                    .iter()
                    .filter_map(|r| r.symbolic.first())
                    .filter_map(|f| f.selected.get(j))
                    .collect();
                if !wanted || models.is_empty() {
                    row.extend([String::new(), String::new(), String::new()]);
                    continue;
                }
                let coefs: Vec<f64> = models
                    .iter()
                    .map(|m| target.as_deref().and_then(|t| m.coefficient(t)).unwrap_or(0.0))
                    .collect();
                let rec = models.iter().filter(|m| m.recovered == Some(true)).count() as f64 / models.len() as f64;
                row.extend([
                    models[0].expression(),
                    target.as_ref().map_or(String::new(), |_| median(&coefs).to_string()),
                    rec.to_string(),
                ]);
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
