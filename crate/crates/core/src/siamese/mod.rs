//! Siamese multi-head attention encoder.
//!
//! One parameter set encodes all three members of a triplet. Queries attend
//! over the whole training database (keys) and its one-hot RP labels
//! (values); the attended vector passes through a ReLU dense stack and a
//! linear embedding layer and is L2-normalized.

mod attention;
mod fast;
mod loss;
mod network;
mod train;

pub use attention::{attention, Attention};
pub use fast::{fast_augment, FaStConfig, FaStDraw};
pub use loss::{triplet_loss, LossMode};
pub use network::{Context, Dense, Params, Shape};
pub use train::{train, Adam, TrainOutcome};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{NormalizedFingerprint, RpId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_heads: usize,
    pub head_size: usize,
    pub dense_widths: Vec<usize>,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub loss_mode: LossMode,
    pub fast: FaStConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_heads: 7,
            head_size: 50,
            dense_widths: vec![128, 64],
            embedding_dim: 64,
            learning_rate: 1e-4,
            epochs: 300,
            batch_size: 32,
            margin: 0.2,
            loss_mode: LossMode::Hinge,
            fast: FaStConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_size == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("heads, head size and embedding dim must be >= 1".into()));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::Config("dense widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning rate must be > 0 and batch size >= 1".into()));
        }
        if !self.margin.is_finite() {
            return Err(Error::Config("margin must be finite".into()));
        }
        self.fast.validate()
    }

    pub fn shape(&self, num_aps: usize, num_classes: usize) -> Shape {
        Shape {
            num_aps,
            num_classes,
            num_heads: self.num_heads,
            head_size: self.head_size,
            dense_widths: self.dense_widths.clone(),
            embedding_dim: self.embedding_dim,
        }
    }
}

/// A unit-length encoder output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A trained (or freshly initialized) encoder with its fixed context.
#[derive(Clone, Debug, PartialEq)]
pub struct SiameseModel {
    pub config: ModelConfig,
    /// APs the query vectors are aligned to.
    pub ap_universe: Vec<String>,
    /// RP of each one-hot value column.
    pub labels: Vec<RpId>,
    pub context: Context,
    pub params: Params,
}

impl SiameseModel {
    /// Builds the context from `db` and initializes parameters from
    /// `config.seed`.
    pub fn new(config: ModelConfig, ap_universe: Vec<String>, db: &[NormalizedFingerprint]) -> Result<Self> {
        config.validate()?;
        let m = ap_universe.len();
        if m == 0 || db.is_empty() {
            return Err(Error::Config("encoder needs a non-empty AP universe and database".into()));
        }
        let mut labels: Vec<RpId> = db.iter().map(|f| f.rp_id).collect();
        labels.sort_unstable();
        labels.dedup();
        let mut keys = Array2::zeros((db.len(), m));
        let mut values = Array2::zeros((db.len(), labels.len()));
        for (n, f) in db.iter().enumerate() {
            if f.values.len() != m {
                return Err(Error::LengthMismatch { left: f.values.len(), right: m });
            }
            keys.row_mut(n).assign(&ndarray::ArrayView1::from(&f.values[..]));
            let class = labels.binary_search(&f.rp_id).expect("label present");
            values[[n, class]] = 1.0;
        }
        let mut r = crate::rng::stream(config.seed, &[crate::rng::domain::INIT]);
        let params = Params::init(&config.shape(m, labels.len()), &mut r);
        Ok(Self { config, ap_universe, labels, context: Context { keys, values }, params })
    }

    pub fn num_aps(&self) -> usize {
        self.ap_universe.len()
    }

    /// Encodes every row of `queries` (one fingerprint per row).
    pub fn encode_batch(&self, queries: ArrayView2<f64>) -> Result<Array2<f64>> {
        let proj = network::project(&self.params, &self.context);
        Ok(network::forward(&self.params, &proj, queries)?.embeddings)
    }

    /// Clean (unaugmented) embedding of one normalized fingerprint.
    pub fn encode(&self, query: &[f64]) -> Result<Embedding> {
        let row = ArrayView2::from_shape((1, query.len()), query)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Embedding(self.encode_batch(row)?.row(0).to_vec()))
    }

    /// Summed triplet loss of stacked `[anchors; positives; negatives]`
    /// query rows, with its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, queries: ArrayView2<f64>) -> Result<(f64, Params)> {
        loss_and_grad(&self.params, &self.context, queries, self.config.margin, self.config.loss_mode)
    }

    /// Loss only; used by finite-difference checks.
    pub fn loss(&self, queries: ArrayView2<f64>) -> Result<f64> {
        let b = stacked_rows(queries)?;
        let proj = network::project(&self.params, &self.context);
        let trace = network::forward(&self.params, &proj, queries)?;
        Ok(loss::stacked_loss_grad(trace.embeddings.view(), b, self.config.margin, self.config.loss_mode).0)
    }

    /// SHA-256 over every parameter and context value, in declared order.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, data, _) in self.params.tensors() {
            h.update(name.as_bytes());
            for v in data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for v in self.context.keys.iter().chain(self.context.values.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn stacked_rows(queries: ArrayView2<f64>) -> Result<usize> {
    if queries.nrows() % 3 != 0 || queries.nrows() == 0 {
        return Err(Error::Shape(format!("{} rows is not a stack of triplets", queries.nrows())));
    }
    Ok(queries.nrows() / 3)
}

pub(crate) fn loss_and_grad(
    params: &Params,
    ctx: &Context,
    queries: ArrayView2<f64>,
    margin: f64,
    mode: LossMode,
) -> Result<(f64, Params)> {
    let b = stacked_rows(queries)?;
    let proj = network::project(params, ctx);
    let trace = network::forward(params, &proj, queries)?;
    let (loss, d_emb) = loss::stacked_loss_grad(trace.embeddings.view(), b, margin, mode);
    let mut grads = params.zeros_like();
    network::backward(params, ctx, &proj, &trace, &d_emb, &mut grads);
    Ok((loss, grads))
}

/// Encoder output for one query; alias of [`SiameseModel::encode`].
pub fn multi_head(model: &SiameseModel, query: &[f64]) -> Result<Embedding> {
    model.encode(query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    pub(crate) fn toy_db(seed: u64) -> Vec<NormalizedFingerprint> {
        let mut r = rng::stream(seed, &[]);
        (0..6)
            .map(|n| NormalizedFingerprint {
                values: (0..4).map(|_| r.random::<f64>()).collect(),
                rp_id: RpId((n % 3) as u32),
                device_id: "A".into(),
                ci: 0,
            })
            .collect()
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            num_heads: 2,
            head_size: 2,
            dense_widths: vec![8, 4],
            embedding_dim: 4,
            seed: 3,
            ..Default::default()
        }
    }

    fn universe(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("ap{i}")).collect()
    }

    #[test]
    fn encode_is_pure_and_unit_norm() {
        let db = toy_db(1);
        let model = SiameseModel::new(toy_config(), universe(4), &db).unwrap();
        let mut r = rng::stream(9, &[]);
        for _ in 0..100 {
            let q: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
            let e = model.encode(&q).unwrap();
            assert!((e.norm() - 1.0).abs() < 1e-6);
            assert_eq!(e, model.encode(&q).unwrap());
        }
    }

    #[test]
    fn single_head_configuration_encodes() {
        let db = toy_db(2);
        let cfg = ModelConfig { num_heads: 1, ..toy_config() };
        let model = SiameseModel::new(cfg, universe(4), &db).unwrap();
        assert_eq!(model.params.w_q.len(), 1);
        assert_eq!(model.params.w_o.shape(), &[2, 2]);
        assert!((model.encode(&[0.1, 0.2, 0.3, 0.4]).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_weights_give_identical_branch_outputs() {
        let db = toy_db(3);
        let model = SiameseModel::new(toy_config(), universe(4), &db).unwrap();
        let row = ndarray::arr1(&[0.3, 0.1, 0.8, 0.5]);
        let stacked = ndarray::stack(ndarray::Axis(0), &[row.view(), row.view(), row.view()]).unwrap();
        let emb = model.encode_batch(stacked.view()).unwrap();
        assert_eq!(emb.row(0), emb.row(1));
        assert_eq!(emb.row(1), emb.row(2));
        // identical branches: anchor-positive and anchor-negative distances
        // are both zero so the hinge loss equals the margin
        assert!((model.loss(stacked.view()).unwrap() - model.config.margin).abs() < 1e-15);
    }

    #[test]
    fn default_config_matches_reported_hyperparameters() {
        let c = ModelConfig::default();
        assert_eq!((c.num_heads, c.head_size), (7, 50));
        assert_eq!(c.dense_widths, vec![128, 64]);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.epochs, 300);
        assert_eq!(c.fast.ap_dropout_p, 0.1);
        assert_eq!(c.fast.gaussian_sigma, 0.12);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig { num_heads: 0, ..toy_config() }.validate().is_err());
        assert!(ModelConfig { learning_rate: 0.0, ..toy_config() }.validate().is_err());
        assert!(ModelConfig { dense_widths: vec![0], ..toy_config() }.validate().is_err());
    }

    #[test]
    fn query_width_mismatch() {
        let model = SiameseModel::new(toy_config(), universe(4), &toy_db(4)).unwrap();
        assert!(model.encode(&[0.5; 5]).is_err());
    }
}
