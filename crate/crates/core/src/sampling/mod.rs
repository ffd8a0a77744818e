//! Synthetic ground truth, measurement noise and collocation sets.

pub mod burgers;
pub mod lhs;
pub mod noise;
pub mod ode;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::DifferentialSystem;
use crate::error::{Error, Result};

pub use burgers::{burgers_reference, BurgersSettings, FieldGrid};
pub use lhs::latin_hypercube;
pub use noise::add_noise;
pub use ode::{ode_reference, rk4_integrate, rk4_path, Trajectory};

/// Column name used for the spatial coordinate in CSV files (state columns
/// use the system's state names, which may include `x`).
pub const SPACE_COLUMN: &str = "x_coord";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    /// Spatial point; empty for ODE data.
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub state_names: Vec<String>,
    pub noise: f64,
    pub noise_seed: Option<u64>,
    pub provenance: String,
}

impl Dataset {
    pub fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    pub fn spatial_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.len())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Network inputs (spatial coordinates then time), flattened row-major.
    pub fn inputs(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.x.iter().copied().chain(std::iter::once(r.t)))
            .collect()
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.u.clone()).collect()
    }

    /// Sidecar file holding the noise metadata of a dataset CSV.
    pub fn meta_path(path: &Path) -> std::path::PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes `t[,x_coord],<state names...>` with a header row, plus the
    /// noise metadata in a `.meta.json` sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        if self.spatial_dim() > 0 {
            header.push(SPACE_COLUMN.into());
        }
        header.extend(self.state_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.records {
            let row: Vec<String> = std::iter::once(r.t)
                .chain(r.x.iter().copied())
                .chain(r.u.iter().copied())
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let meta = DatasetMeta {
            noise: self.noise,
            noise_seed: self.noise_seed,
            provenance: self.provenance.clone(),
        };
        let meta_path = Self::meta_path(path);
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    /// Reads a dataset CSV; the sidecar is optional.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::config(format!("{}: first column must be t", path.display())));
        }
        let spatial = usize::from(header.get(1).map(String::as_str) == Some(SPACE_COLUMN));
        let state_names = header[1 + spatial..].to_vec();
        let mut records = Vec::new();
        for row in r.records() {
            let row = row?;
            let vals = row
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            records.push(Record {
                t: vals[0],
                x: vals[1..1 + spatial].to_vec(),
                u: vals[1 + spatial..].to_vec(),
            });
        }
        let meta_path = Self::meta_path(path);
        let meta = match std::fs::read_to_string(&meta_path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => DatasetMeta {
                noise: 0.0,
                noise_seed: None,
                provenance: format!("loaded from {}", path.display()),
            },
            Err(e) => return Err(Error::io(&meta_path, e)),
        };
        Ok(Dataset {
            records,
            state_names,
            noise: meta.noise,
            noise_seed: meta.noise_seed,
            provenance: meta.provenance,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    noise: f64,
    noise_seed: Option<u64>,
    provenance: String,
}

/// Interior and boundary collocation points in network-input order
/// (spatial coordinates, then time), flattened row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub input_dim: usize,
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
    pub seed: u64,
}

impl CollocationSet {
    pub fn n_interior(&self) -> usize {
        self.interior.len() / self.input_dim
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len() / self.input_dim
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["set".to_string()];
        if self.input_dim == 2 {
            header.push(SPACE_COLUMN.into());
        }
        header.push("t".into());
        w.write_record(&header)?;
        for (name, pts) in [("interior", &self.interior), ("boundary", &self.boundary)] {
            for p in pts.chunks(self.input_dim) {
                let mut row = vec![name.to_string()];
                row.extend(p.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let input_dim = r.headers()?.len() - 1;
        let (mut interior, mut boundary) = (Vec::new(), Vec::new());
        for row in r.records() {
            let row = row?;
            let vals = row
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            match &row[0] {
                "interior" => interior.extend(vals),
                "boundary" => boundary.extend(vals),
                other => return Err(Error::config(format!("unknown collocation set {other:?}"))),
            }
        }
        Ok(CollocationSet {
            input_dim,
            interior,
            boundary,
            seed,
        })
    }
}

/// Latin hypercube collocation: `n_interior` points in the open space-time
/// box and, for a 1-D spatial domain, `n_boundary` points with times
/// stratified over `(0, T)` alternating between the two endpoints.
pub fn collocation(system: &DifferentialSystem, n_interior: usize, n_boundary: usize, seed: u64) -> Result<CollocationSet> {
    let bounds = system.input_bounds();
    let interior = latin_hypercube(n_interior, &bounds, seed)?.concat();
    let mut boundary = Vec::new();
    if !system.is_ode() && n_boundary > 0 {
        let (lo, hi) = system.domain.spatial[0];
        let times = latin_hypercube(n_boundary, &[(0.0, system.domain.horizon)], seed ^ 0x5eed_b0da)?;
        for (k, t) in times.iter().enumerate() {
            boundary.push(if k % 2 == 0 { lo } else { hi });
            boundary.push(t[0]);
        }
    }
    Ok(CollocationSet {
        input_dim: bounds.len(),
        interior,
        boundary,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSchedule {
    /// `n` equispaced times over `[0, T]` including both ends (`n = 1` gives
    /// the initial condition only).
    Count(usize),
    /// Times `0, dt, 2 dt, ...` up to `T`.
    Spacing(f64),
    Times(Vec<f64>),
}

impl TimeSchedule {
    pub fn times(&self, horizon: f64) -> Result<Vec<f64>> {
        let times = match self {
            TimeSchedule::Count(0) => return Err(Error::validation("need at least one measurement time")),
            TimeSchedule::Count(1) => vec![0.0],
            TimeSchedule::Count(n) => (0..*n).map(|k| horizon * k as f64 / (*n - 1) as f64).collect(),
            TimeSchedule::Spacing(dt) => {
                if !(*dt > 0.0) {
                    return Err(Error::validation(format!("spacing {dt} must be positive")));
                }
                let n = (horizon / dt + 1e-9).floor() as usize;
                (0..=n).map(|k| (k as f64 * dt).min(horizon)).collect()
            }
            TimeSchedule::Times(ts) => ts.clone(),
        };
        if let Some(t) = times.iter().find(|&&t| !(-1e-12..=horizon + 1e-12).contains(&t)) {
            return Err(Error::validation(format!("measurement time {t} outside [0, {horizon}]")));
        }
        Ok(times)
    }
}

#[derive(Clone, Debug)]
pub enum ReferenceSolution {
    Ode(Trajectory),
    Pde(FieldGrid),
}

/// Extracts measurements at scheduled times. For PDE references every time
/// must be a stored slice; `spatial_points` equispaced grid nodes are taken
/// from each slice.
pub fn sample_measurements(
    system: &DifferentialSystem,
    reference: &ReferenceSolution,
    schedule: &TimeSchedule,
    spatial_points: usize,
) -> Result<Dataset> {
    let times = schedule.times(system.domain.horizon)?;
    let records = match reference {
        ReferenceSolution::Ode(traj) => times
            .iter()
            .map(|&t| Record {
                t,
                x: vec![],
                u: traj.at(t),
            })
            .collect(),
        ReferenceSolution::Pde(grid) => {
            if spatial_points < 2 {
                return Err(Error::config("need at least two spatial measurement points"));
            }
            let last = grid.nx() - 1;
            let mut recs = Vec::new();
            for &t in &times {
                let ti = grid
                    .time_index(t)
                    .ok_or_else(|| Error::validation(format!("t = {t} is not a stored reference slice")))?;
                for k in 0..spatial_points {
                    let xi = (k * last + (spatial_points - 1) / 2) / (spatial_points - 1);
                    recs.push(Record {
                        t: grid.ts[ti],
                        x: vec![grid.xs[xi]],
                        u: vec![grid.at(ti, xi)],
                    });
                }
            }
            recs
        }
    };
    Ok(Dataset {
        records,
        state_names: system.state_names.clone(),
        noise: 0.0,
        noise_seed: None,
        provenance: format!("{} reference, schedule {schedule:?}", system.name),
    })
}
