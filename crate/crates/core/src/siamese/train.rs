use ndarray::Array2;
use rand::seq::SliceRandom;

use super::fast::fast_augment;
use super::network::Params;
use super::{loss_and_grad, ModelConfig, SiameseModel};
use crate::dataset::NormalizedFingerprint;
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::triplets::{MinerConfig, TripletMiner};

/// Adaptive-moment optimizer over a [`Params`] set.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.learning_rate;
        let eps = self.eps;
        let tensors = params.tensors_mut();
        let g = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for (((p, (_, g, _)), m), v) in tensors.into_iter().zip(g).zip(m).zip(v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    /// Mean per-triplet training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains the encoder on `db` with mined triplets.
///
/// Each epoch mines triplets (positives resampled when configured),
/// shuffles them with a per-epoch stream and takes Adam steps on
/// mini-batches. FaSt augmentation is applied to the anchor branch only.
pub fn train(
    db: &[NormalizedFingerprint],
    ap_universe: Vec<String>,
    miner_cfg: &MinerConfig,
    model_cfg: &ModelConfig,
) -> Result<TrainOutcome> {
    let mut model = SiameseModel::new(model_cfg.clone(), ap_universe, db)?;
    if model.labels.len() < 2 {
        return Err(Error::Config("training needs at least two reference points".into()));
    }
    let miner = TripletMiner::new(db.to_vec(), *miner_cfg)?;
    let cfg = &model.config;
    let m = model.num_aps();
    let seed = cfg.seed;
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = miner.len();

    for epoch in 0..cfg.epochs {
        let triplets = miner.mine_epoch(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[domain::SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let b = chunk.len();
            let mut x = Array2::zeros((3 * b, m));
            for (row, &t) in chunk.iter().enumerate() {
                let trip = &triplets[t];
                let mut r = rng::stream(seed, &[domain::FAST, epoch as u64, t as u64]);
                let anchor = fast_augment(&trip.anchor.values, &cfg.fast, &mut r);
                x.row_mut(row).assign(&ndarray::ArrayView1::from(&anchor[..]));
                x.row_mut(b + row).assign(&ndarray::ArrayView1::from(&trip.positive.values[..]));
                x.row_mut(2 * b + row).assign(&ndarray::ArrayView1::from(&trip.negative.values[..]));
            }
            let (loss, grads) = loss_and_grad(&model.params, &model.context, x.view(), cfg.margin, cfg.loss_mode)
                .map_err(|e| match e {
                    Error::NonFiniteActivation { .. } => Error::NonFiniteLoss { epoch, step },
                    other => other,
                })?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            adam.update(&mut model.params, &grads);
            epoch_loss += loss;
        }
        history.push(epoch_loss / n as f64);
    }
    Ok(TrainOutcome { model, loss_history: history })
}
