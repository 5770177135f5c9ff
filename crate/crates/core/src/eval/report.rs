use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::mean;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub crate_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub building: String,
    pub num_aps: usize,
    pub num_rps: usize,
    pub train_fingerprints: usize,
    pub test_fingerprints: usize,
    pub dropped_readings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub d_fraction: f64,
    pub samples_per_rp: usize,
    pub param_count: usize,
    pub param_hash: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub boost_final_loss: f64,
}

/// Mean localization error of one (train device, test device, CI) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub train_device: String,
    pub test_device: String,
    pub ci: u32,
    pub training_cell: bool,
    pub held_out: bool,
    pub queries: usize,
    pub mean_error_m: f64,
}

/// Device-level statistics of one CI: mean, best and worst cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiAggregate {
    pub ci: u32,
    pub mean_error_m: f64,
    pub min_error_m: f64,
    pub max_error_m: f64,
    pub best_device: String,
    pub worst_device: String,
}

impl CiAggregate {
    pub fn spread_m(&self) -> f64 {
        self.max_error_m - self.min_error_m
    }
}

fn per_ci(cells: &[Cell]) -> Vec<CiAggregate> {
    let mut by_ci: BTreeMap<u32, Vec<&Cell>> = BTreeMap::new();
    for c in cells {
        by_ci.entry(c.ci).or_default().push(c);
    }
    by_ci
        .into_iter()
        .map(|(ci, cs)| {
            let mut best = cs[0];
            let mut worst = cs[0];
            for &c in &cs[1..] {
                if c.mean_error_m < best.mean_error_m {
                    best = c;
                }
                if c.mean_error_m > worst.mean_error_m {
                    worst = c;
                }
            }
            let errors: Vec<f64> = cs.iter().map(|c| c.mean_error_m).collect();
            CiAggregate {
                ci,
                mean_error_m: mean(&errors),
                min_error_m: best.mean_error_m,
                max_error_m: worst.mean_error_m,
                best_device: best.test_device.clone(),
                worst_device: worst.test_device.clone(),
            }
        })
        .collect()
}

fn cell_mean(cells: &[Cell]) -> f64 {
    mean(&cells.iter().map(|c| c.mean_error_m).collect::<Vec<_>>())
}

/// Full device × CI evaluation of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub building: String,
    pub param_hash: String,
    /// Mean over cells.
    pub mean_error_m: f64,
    pub cells: Vec<Cell>,
    pub per_ci: Vec<CiAggregate>,
}

impl Grid {
    pub fn new(building: &str, cells: Vec<Cell>, param_hash: String) -> Self {
        Self { building: building.into(), param_hash, mean_error_m: cell_mean(&cells), per_ci: per_ci(&cells), cells }
    }

    pub fn ci(&self, ci: u32) -> Option<&CiAggregate> {
        self.per_ci.iter().find(|a| a.ci == ci)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DRow {
    pub d_fraction: f64,
    pub mean_error_m: f64,
    pub min_error_m: f64,
    pub max_error_m: f64,
}

impl DRow {
    pub fn from_grid(d_fraction: f64, grid: &Grid) -> Self {
        let e = grid.cells.iter().map(|c| c.mean_error_m);
        Self {
            d_fraction,
            mean_error_m: grid.mean_error_m,
            min_error_m: e.clone().fold(f64::INFINITY, f64::min),
            max_error_m: e.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplesCurve {
    pub samples_per_rp: usize,
    pub mean_error_m: f64,
    pub per_ci: Vec<CiAggregate>,
}

impl SamplesCurve {
    pub fn from_grid(samples_per_rp: usize, grid: &Grid) -> Self {
        Self { samples_per_rp, mean_error_m: grid.mean_error_m, per_ci: grid.per_ci.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Stellar,
    KnnRaw,
    LtKnn,
    KnnEmbedding,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Stellar => "stellar",
            Arm::KnnRaw => "knn_raw",
            Arm::LtKnn => "lt_knn",
            Arm::KnnEmbedding => "knn_embedding",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub mean_error_m: f64,
    pub cells: Vec<Cell>,
    pub per_ci: Vec<CiAggregate>,
}

impl ArmResult {
    pub fn new(arm: Arm, cells: Vec<Cell>) -> Self {
        Self { arm, mean_error_m: cell_mean(&cells), per_ci: per_ci(&cells), cells }
    }

    /// Mean of the per-CI means over CIs `>= from`.
    pub fn mean_from_ci(&self, from: u32) -> f64 {
        mean(&self.per_ci.iter().filter(|a| a.ci >= from).map(|a| a.mean_error_m).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arms: Vec<ArmResult>,
}

impl Comparison {
    pub fn arm(&self, arm: Arm) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

/// Everything one CLI run produced. Sections not computed by the run are
/// `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub training: Vec<TrainingSummary>,
    pub grid: Option<Grid>,
    pub d_sweep: Option<Vec<DRow>>,
    pub samples: Option<Vec<SamplesCurve>>,
    pub comparison: Option<Comparison>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Writes `report.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

struct Table {
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &'static [&'static str]) -> Self {
        Self { header, rows: Vec::new() }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(e) => Error::io(path, e),
            other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(io)?;
        w.write_record(self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn ci_rows(table: &mut Table, prefix: &[String], per_ci: &[CiAggregate]) {
    for a in per_ci {
        let mut row = prefix.to_vec();
        row.extend([a.ci.to_string(), a.mean_error_m.to_string(), a.min_error_m.to_string(), a.max_error_m.to_string()]);
        table.rows.push(row);
    }
}

fn matrix_rows(table: &mut Table, building: &str, cells: &[Cell]) {
    for c in cells {
        table.rows.push(vec![
            building.into(),
            c.train_device.clone(),
            c.test_device.clone(),
            c.ci.to_string(),
            c.training_cell.to_string(),
            c.queries.to_string(),
            c.mean_error_m.to_string(),
        ]);
    }
}

/// Writes one tidy CSV per figure family present in the report and
/// returns their paths.
///
/// - `d_sweep.csv`: `d_fraction, mean_error_m, min_error_m, max_error_m`
/// - `samples.csv`: `samples_per_rp, ci, mean_error_m, min_error_m, max_error_m`
/// - `device_matrix.csv`: `building, train_device, test_device, ci,
///   training_cell, queries, mean_error_m`
/// - `temporal_curves.csv`: `arm, ci, mean_error_m, min_error_m, max_error_m`
/// - `box_deltas.csv`: `arm, test_device, ci, delta_m` where `delta_m` is
///   the baseline cell error minus the STELLAR cell error
///
/// Min and max are taken over test devices.
pub fn emit_plots(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tables: Vec<(&str, Table)> = Vec::new();
    let building = &report.meta.building;

    if let Some(rows) = &report.d_sweep {
        let mut t = Table::new(&["d_fraction", "mean_error_m", "min_error_m", "max_error_m"]);
        for r in rows {
            t.rows.push(vec![
                r.d_fraction.to_string(),
                r.mean_error_m.to_string(),
                r.min_error_m.to_string(),
                r.max_error_m.to_string(),
            ]);
        }
        tables.push(("d_sweep.csv", t));
    }
    if let Some(curves) = &report.samples {
        let mut t = Table::new(&["samples_per_rp", "ci", "mean_error_m", "min_error_m", "max_error_m"]);
        for c in curves {
            ci_rows(&mut t, &[c.samples_per_rp.to_string()], &c.per_ci);
        }
        tables.push(("samples.csv", t));
    }
    let matrix_header: &[&str] =
        &["building", "train_device", "test_device", "ci", "training_cell", "queries", "mean_error_m"];
    if let Some(g) = &report.grid {
        let mut t = Table::new(matrix_header);
        matrix_rows(&mut t, building, &g.cells);
        tables.push(("device_matrix.csv", t));
    }
    if let Some(cmp) = &report.comparison {
        let mut curves = Table::new(&["arm", "ci", "mean_error_m", "min_error_m", "max_error_m"]);
        for a in &cmp.arms {
            ci_rows(&mut curves, &[a.arm.name().to_string()], &a.per_ci);
        }
        tables.push(("temporal_curves.csv", curves));

        let mut deltas = Table::new(&["arm", "test_device", "ci", "delta_m"]);
        if let Some(stellar) = cmp.arm(Arm::Stellar) {
            for a in cmp.arms.iter().filter(|a| a.arm != Arm::Stellar) {
                for (b, s) in a.cells.iter().zip(&stellar.cells) {
                    deltas.rows.push(vec![
                        a.arm.name().to_string(),
                        b.test_device.clone(),
                        b.ci.to_string(),
                        (b.mean_error_m - s.mean_error_m).to_string(),
                    ]);
                }
            }
        }
        tables.push(("box_deltas.csv", deltas));
        if report.grid.is_none() {
            if let Some(stellar) = cmp.arm(Arm::Stellar) {
                let mut t = Table::new(matrix_header);
                matrix_rows(&mut t, building, &stellar.cells);
                tables.push(("device_matrix.csv", t));
            }
        }
    }

    let mut paths = Vec::new();
    for (name, table) in tables {
        let path = dir.join(name);
        table.write(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
