use std::collections::BTreeMap;

use ndarray::Array2;

use super::config::{DataSource, ExperimentConfig};
use super::report::{Arm, ArmResult, Cell, Comparison, DRow, EvalReport, Grid, RunMeta, SamplesCurve, TrainingSummary};
use super::{localization_error, mean};
use crate::dataset::{self, FingerprintDataset, NormalizedFingerprint, RpId};
use crate::error::{Error, Result, StageExt};
use crate::gbt::{gbt_fit, ltknn_evaluate, BoostedEnsemble, CiStage, KnnModel};
use crate::siamese::{self, SiameseModel};
use crate::synthgen;
use crate::triplets::MinerConfig;

/// Queries of one (test device, CI) cell.
#[derive(Clone, Debug)]
pub struct CellQueries {
    pub device: String,
    pub ci: u32,
    /// Held out from a survey split of the training device.
    pub held_out: bool,
    pub queries: Vec<NormalizedFingerprint>,
}

/// Data of one experiment, aligned to the training AP universe.
///
/// Cells of the training device are evaluated on the held-out part of a
/// per-CI split (at the training CI that is the test split of the training
/// slice); cells of other devices use every fingerprint.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub data: FingerprintDataset,
    pub universe: Vec<String>,
    pub train: FingerprintDataset,
    pub test: FingerprintDataset,
    /// Visible readings at APs never heard in the training slice.
    pub dropped_readings: usize,
    pub cells: Vec<CellQueries>,
    /// Training-device survey split of every CI in the data.
    pub surveys: BTreeMap<u32, Vec<NormalizedFingerprint>>,
}

fn load_building(cfg: &ExperimentConfig) -> Result<FingerprintDataset> {
    match &cfg.source {
        DataSource::Synthetic { world_seed } => synthgen::default_benchmark(world_seed.unwrap_or(cfg.seed))?
            .into_iter()
            .map(|b| b.dataset)
            .find(|d| d.building_id() == cfg.building)
            .ok_or_else(|| Error::Config(format!("no synthetic building `{}`", cfg.building))),
        DataSource::Csv { paths } => {
            let mut found = None;
            for p in paths {
                let ds = dataset::load_csv(p)?;
                if paths.len() == 1 || ds.building_id() == cfg.building {
                    found = Some(ds);
                    break;
                }
            }
            found.ok_or_else(|| Error::Config(format!("no CSV file for building `{}`", cfg.building)))
        }
    }
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate().stage("config")?;
        let cfg = cfg.resolved();
        let raw = load_building(&cfg).stage("data")?;
        let slice = raw.slice(&cfg.train_device, cfg.train_ci);
        if slice.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "no fingerprints for training device `{}` at CI {}",
                cfg.train_device, cfg.train_ci
            )))
            .stage("data");
        }
        let universe = slice.visible_aps();
        let (data, dropped_readings) = raw.project(&universe).stage("data")?;
        let (train, test) = dataset::split(&data.slice(&cfg.train_device, cfg.train_ci), &cfg.split).stage("split")?;

        let explicit = !cfg.test_devices.is_empty() || !cfg.test_cis.is_empty();
        let devices = if cfg.test_devices.is_empty() { data.devices() } else { cfg.test_devices.clone() };
        let cis = if cfg.test_cis.is_empty() { data.cis() } else { cfg.test_cis.clone() };
        let mut surveys = BTreeMap::new();
        let mut held_out = BTreeMap::new();
        for ci in data.cis() {
            let (survey, held) = if ci == cfg.train_ci {
                (train.clone(), test.clone())
            } else {
                let s = data.slice(&cfg.train_device, ci);
                if s.is_empty() {
                    (s.clone(), s)
                } else {
                    dataset::split(&s, &cfg.split).stage("split")?
                }
            };
            surveys.insert(ci, survey.normalized()?);
            held_out.insert(ci, held);
        }
        let mut cells = Vec::new();
        for &ci in &cis {
            for device in &devices {
                let (held, queries) = if *device == cfg.train_device {
                    (true, held_out.get(&ci).cloned().unwrap_or_else(|| data.filter(|_| false)))
                } else {
                    (false, data.slice(device, ci))
                };
                if queries.is_empty() {
                    if explicit {
                        return Err(Error::InvalidDataset(format!("no fingerprints for device `{device}` at CI {ci}")))
                            .stage("data");
                    }
                    continue;
                }
                cells.push(CellQueries { device: device.clone(), ci, held_out: held, queries: queries.normalized()? });
            }
        }
        cells.sort_by(|a, b| a.device.cmp(&b.device).then(a.ci.cmp(&b.ci)));
        Ok(Self { config: cfg, data, universe, train, test, dropped_readings, cells, surveys })
    }

    fn is_training_cell(&self, c: &CellQueries) -> bool {
        c.device == self.config.train_device && c.ci == self.config.train_ci
    }

    fn cell(&self, c: &CellQueries, errors: &[f64]) -> Cell {
        Cell {
            train_device: self.config.train_device.clone(),
            test_device: c.device.clone(),
            ci: c.ci,
            training_cell: self.is_training_cell(c),
            held_out: c.held_out,
            queries: errors.len(),
            mean_error_m: mean(errors),
        }
    }

    fn errors(&self, predicted: &[RpId], queries: &[NormalizedFingerprint]) -> Result<Vec<f64>> {
        predicted
            .iter()
            .zip(queries)
            .map(|(&p, q)| localization_error(p, q.rp_id, self.data.rps()))
            .collect()
    }

    fn meta(&self) -> RunMeta {
        RunMeta {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            building: self.data.building_id().to_string(),
            num_aps: self.universe.len(),
            num_rps: self.data.rps().len(),
            train_fingerprints: self.train.len(),
            test_fingerprints: self.test.len(),
            dropped_readings: self.dropped_readings,
        }
    }
}

fn to_matrix(rows: &[NormalizedFingerprint]) -> Result<Array2<f64>> {
    let m = rows.first().map_or(0, |r| r.values.len());
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.values.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), m), flat).map_err(|e| Error::Shape(e.to_string()))
}

fn embed(model: &SiameseModel, rows: &[NormalizedFingerprint]) -> Result<Vec<Vec<f64>>> {
    let e = model.encode_batch(to_matrix(rows)?.view())?;
    Ok(e.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// A trained encoder and the boosted classifier over its embeddings.
#[derive(Clone, Debug)]
pub struct Stellar {
    pub d_fraction: f64,
    pub samples_per_rp: usize,
    pub model: SiameseModel,
    pub ensemble: BoostedEnsemble,
    pub loss_history: Vec<f64>,
    pub train_embeddings: Vec<Vec<f64>>,
    pub train_labels: Vec<RpId>,
}

impl Stellar {
    pub fn fit(prep: &Prepared, d_fraction: f64, samples_per_rp: usize) -> Result<Self> {
        let cfg = &prep.config;
        let train = prep.train.take_per_rp(samples_per_rp).normalized()?;
        let miner = MinerConfig { d_fraction, ..cfg.miner };
        let out = siamese::train(&train, prep.universe.clone(), &miner, &cfg.model).stage("train")?;
        let train_embeddings = embed(&out.model, &train).stage("train")?;
        let train_labels: Vec<RpId> = train.iter().map(|f| f.rp_id).collect();
        let ensemble = gbt_fit(&train_embeddings, &train_labels, &cfg.gbt).stage("boost")?;
        Ok(Self {
            d_fraction,
            samples_per_rp,
            model: out.model,
            ensemble,
            loss_history: out.loss_history,
            train_embeddings,
            train_labels,
        })
    }

    pub fn locate(&self, queries: &[NormalizedFingerprint]) -> Result<Vec<RpId>> {
        embed(&self.model, queries)?.iter().map(|e| Ok(self.ensemble.predict(e)?.rp_id)).collect()
    }

    fn summary(&self) -> TrainingSummary {
        TrainingSummary {
            d_fraction: self.d_fraction,
            samples_per_rp: self.samples_per_rp,
            param_count: self.model.params.count(),
            param_hash: self.model.param_hash(),
            initial_loss: self.loss_history.first().copied().unwrap_or(f64::NAN),
            final_loss: self.loss_history.last().copied().unwrap_or(f64::NAN),
            boost_final_loss: *self.ensemble.train_loss.last().expect("initial loss recorded"),
        }
    }
}

type FitKey = (u64, usize);

/// Shares data preparation and trained models across pipeline, sweep and
/// comparison runs of one configuration.
pub struct Session {
    prep: Prepared,
    fits: BTreeMap<FitKey, Stellar>,
}

impl Session {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self { prep: Prepared::new(cfg)?, fits: BTreeMap::new() })
    }

    pub fn prepared(&self) -> &Prepared {
        &self.prep
    }

    fn default_key(&self) -> FitKey {
        (self.prep.config.miner.d_fraction.to_bits(), self.prep.config.split.train_per_rp)
    }

    fn ensure(&mut self, key: FitKey) -> Result<()> {
        if !self.fits.contains_key(&key) {
            let fit = Stellar::fit(&self.prep, f64::from_bits(key.0), key.1)?;
            self.fits.insert(key, fit);
        }
        Ok(())
    }

    /// The model trained with mining fraction `d` on `samples` fingerprints
    /// per RP, trained on first use.
    pub fn stellar(&mut self, d: f64, samples: usize) -> Result<&Stellar> {
        let key = (d.to_bits(), samples);
        self.ensure(key)?;
        Ok(&self.fits[&key])
    }

    /// Evaluates a model on every cell. The encoder and ensemble must be
    /// unchanged afterwards.
    fn grid(&self, key: FitKey) -> Result<Grid> {
        let s = &self.fits[&key];
        let before = s.model.param_hash();
        let ensemble_before = s.ensemble.clone();
        let mut cells = Vec::with_capacity(self.prep.cells.len());
        for c in &self.prep.cells {
            let predicted = s.locate(&c.queries).stage("evaluate")?;
            cells.push(self.prep.cell(c, &self.prep.errors(&predicted, &c.queries)?));
        }
        if s.model.param_hash() != before || s.ensemble != ensemble_before {
            return Err(Error::Config("model parameters changed during evaluation".into())).stage("evaluate");
        }
        Ok(Grid::new(self.prep.data.building_id(), cells, before))
    }

    fn report(&self) -> EvalReport {
        EvalReport {
            meta: self.prep.meta(),
            training: self.fits.values().map(Stellar::summary).collect(),
            grid: None,
            d_sweep: None,
            samples: None,
            comparison: None,
        }
    }

    pub fn run_pipeline(&mut self) -> Result<EvalReport> {
        let key = self.default_key();
        self.ensure(key)?;
        let grid = self.grid(key)?;
        Ok(EvalReport { grid: Some(grid), ..self.report() })
    }

    pub fn sweep_d(&mut self, grid: &[f64]) -> Result<Vec<DRow>> {
        let samples = self.prep.config.split.train_per_rp;
        let mut rows = Vec::with_capacity(grid.len());
        for &d in grid {
            let key = (d.to_bits(), samples);
            self.ensure(key)?;
            rows.push(DRow::from_grid(d, &self.grid(key)?));
        }
        Ok(rows)
    }

    pub fn sweep_samples(&mut self, grid: &[usize]) -> Result<Vec<SamplesCurve>> {
        let d = self.prep.config.miner.d_fraction;
        let mut curves = Vec::with_capacity(grid.len());
        for &k in grid {
            let key = (d.to_bits(), k);
            self.ensure(key)?;
            curves.push(SamplesCurve::from_grid(k, &self.grid(key)?));
        }
        Ok(curves)
    }

    fn knn_arm(&self, arm: Arm, model: &KnnModel, encoder: Option<&SiameseModel>) -> Result<ArmResult> {
        let mut cells = Vec::with_capacity(self.prep.cells.len());
        for c in &self.prep.cells {
            let vectors = match encoder {
                Some(m) => embed(m, &c.queries)?,
                None => c.queries.iter().map(|q| q.values.clone()).collect(),
            };
            let predicted = vectors.iter().map(|v| model.predict(v)).collect::<Result<Vec<_>>>()?;
            cells.push(self.prep.cell(c, &self.prep.errors(&predicted, &c.queries)?));
        }
        Ok(ArmResult::new(arm, cells))
    }

    /// LT-KNN streams start at the training CI and run through every CI up
    /// to the last evaluated one. Evaluated CIs before the training CI use
    /// the initial model.
    fn ltknn_arm(&self) -> Result<ArmResult> {
        let cfg = &self.prep.config;
        let initial = KnnModel::from_fingerprints(&self.prep.surveys[&cfg.train_ci], cfg.knn_k)?;
        let mut devices: Vec<&str> = self.prep.cells.iter().map(|c| c.device.as_str()).collect();
        devices.dedup();
        let mut cells = Vec::new();
        for device in devices {
            let own: Vec<&CellQueries> = self.prep.cells.iter().filter(|c| c.device == device).collect();
            for c in own.iter().filter(|c| c.ci < cfg.train_ci) {
                let predicted = c.queries.iter().map(|q| initial.predict(&q.values)).collect::<Result<Vec<_>>>()?;
                cells.push(self.prep.cell(c, &self.prep.errors(&predicted, &c.queries)?));
            }
            let Some(last) = own.iter().map(|c| c.ci).filter(|&ci| ci >= cfg.train_ci).max() else {
                continue;
            };
            let mut stages = Vec::new();
            for ci in cfg.train_ci..=last {
                let survey = self.prep.surveys.get(&ci).ok_or(Error::MissingCi(ci))?;
                let queries = own.iter().find(|c| c.ci == ci).map_or(&[][..], |c| &c.queries[..]);
                stages.push(CiStage { ci, survey, queries });
            }
            let out = ltknn_evaluate(&stages, cfg.ltknn_retrain_every, cfg.knn_k, self.prep.data.rps())?;
            for r in out {
                if let Some(c) = own.iter().find(|c| c.ci == r.ci) {
                    cells.push(self.prep.cell(c, &r.errors_m));
                }
            }
        }
        Ok(ArmResult::new(Arm::LtKnn, cells))
    }

    pub fn compare_baselines(&mut self) -> Result<Comparison> {
        let key = self.default_key();
        self.ensure(key)?;
        let k = self.prep.config.knn_k;
        let s = &self.fits[&key];
        let stellar = ArmResult::new(Arm::Stellar, self.grid(key)?.cells);
        let raw = KnnModel::from_fingerprints(&self.prep.train.normalized()?, k).stage("baseline")?;
        let raw_arm = self.knn_arm(Arm::KnnRaw, &raw, None).stage("baseline")?;
        let lt = self.ltknn_arm().stage("baseline")?;
        let emb = KnnModel::new(s.train_embeddings.clone(), s.train_labels.clone(), k).stage("baseline")?;
        let emb_arm = self.knn_arm(Arm::KnnEmbedding, &emb, Some(&s.model)).stage("baseline")?;
        Ok(Comparison { arms: vec![stellar, raw_arm, lt, emb_arm] })
    }

    pub fn sweep_d_report(&mut self) -> Result<EvalReport> {
        let grid = self.prep.config.d_grid.clone();
        let rows = self.sweep_d(&grid)?;
        Ok(EvalReport { d_sweep: Some(rows), ..self.report() })
    }

    pub fn sweep_samples_report(&mut self) -> Result<EvalReport> {
        let grid = self.prep.config.samples_grid.clone();
        let curves = self.sweep_samples(&grid)?;
        Ok(EvalReport { samples: Some(curves), ..self.report() })
    }

    pub fn compare_report(&mut self) -> Result<EvalReport> {
        let cmp = self.compare_baselines()?;
        Ok(EvalReport { comparison: Some(cmp), ..self.report() })
    }
}

/// Trains once on the training slice and evaluates every requested cell.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<EvalReport> {
    Session::new(cfg)?.run_pipeline()
}

/// One pipeline per D fraction of `cfg.d_grid`.
pub fn sweep_d(cfg: &ExperimentConfig) -> Result<EvalReport> {
    Session::new(cfg)?.sweep_d_report()
}

/// One pipeline per samples-per-RP count of `cfg.samples_grid`.
pub fn sweep_samples(cfg: &ExperimentConfig) -> Result<EvalReport> {
    Session::new(cfg)?.sweep_samples_report()
}

/// STELLAR against raw-RSS KNN, LT-KNN and KNN on embeddings, sharing
/// splits and seeds.
pub fn compare_baselines(cfg: &ExperimentConfig) -> Result<EvalReport> {
    Session::new(cfg)?.compare_report()
}
