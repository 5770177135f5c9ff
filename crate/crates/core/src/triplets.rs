//! Offline triplet mining.
//!
//! Every training fingerprint becomes an anchor. Its positive is the same
//! vector with a fixed fraction of APs forced to zero (invisible); its
//! negative is the nearest fingerprint, by Euclidean distance, recorded at
//! any other reference point.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizedFingerprint, RpId};
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

/// Which member of the triplet carries the structured AP dropout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutTarget {
    #[default]
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinerConfig {
    /// Fraction of APs forced to zero, in `[0, 1]`.
    pub d_fraction: f64,
    pub seed: u64,
    pub resample_per_epoch: bool,
    pub dropout_target: DropoutTarget,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self { d_fraction: 0.6, seed: 0, resample_per_epoch: true, dropout_target: DropoutTarget::Positive }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.d_fraction) {
            return Err(Error::Config(format!("d_fraction {} outside [0, 1]", self.d_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub anchor: NormalizedFingerprint,
    pub positive: NormalizedFingerprint,
    pub negative: NormalizedFingerprint,
    pub anchor_rp: RpId,
}

/// `round(d_fraction * m)` with halves rounded up.
pub fn dropped_count(d_fraction: f64, m: usize) -> usize {
    ((d_fraction * m as f64 + 0.5 + 1e-9).floor() as usize).min(m)
}

/// Indices to force to zero: `dropped_count(d_fraction, m)` of `0..m`,
/// uniformly without replacement.
pub fn dropout_indices(m: usize, d_fraction: f64, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, m, dropped_count(d_fraction, m)).into_vec();
    idx.sort_unstable();
    idx
}

/// Copies `anchor` and zeroes a fresh random `d_fraction` of its entries.
pub fn make_positive(
    anchor: &NormalizedFingerprint,
    d_fraction: f64,
    rng: &mut impl Rng,
) -> NormalizedFingerprint {
    let mut out = anchor.clone();
    for i in dropout_indices(out.values.len(), d_fraction, rng) {
        out.values[i] = 0.0;
    }
    out
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(squared_distance(a, b).sqrt())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index in `db` of the nearest fingerprint at an RP other than the
/// anchor's. Ties go to the lowest `(rp_id, index)`.
pub fn select_negative(anchor: &NormalizedFingerprint, db: &[NormalizedFingerprint]) -> Result<usize> {
    let mut best: Option<(f64, RpId, usize)> = None;
    for (i, cand) in db.iter().enumerate() {
        if cand.rp_id == anchor.rp_id {
            continue;
        }
        let d = euclidean(&anchor.values, &cand.values)?;
        let better = match best {
            None => true,
            Some((bd, brp, _)) => d < bd || (d == bd && cand.rp_id < brp),
        };
        if better {
            best = Some((d, cand.rp_id, i));
        }
    }
    best.map(|(_, _, i)| i)
        .ok_or(Error::NoNegativeCandidate { anchor_rp: anchor.rp_id.0 })
}

/// Miner with the epoch-invariant negatives precomputed.
#[derive(Clone, Debug)]
pub struct TripletMiner {
    db: Vec<NormalizedFingerprint>,
    negatives: Vec<usize>,
    cfg: MinerConfig,
}

impl TripletMiner {
    pub fn new(db: Vec<NormalizedFingerprint>, cfg: MinerConfig) -> Result<Self> {
        cfg.validate()?;
        let negatives = db
            .iter()
            .map(|a| select_negative(a, &db))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { db, negatives, cfg })
    }

    pub fn len(&self) -> usize {
        self.db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.db.is_empty()
    }

    pub fn negative_index(&self, anchor: usize) -> usize {
        self.negatives[anchor]
    }

    fn anchor_rng(&self, epoch: usize, anchor: usize) -> StreamRng {
        let epoch_key = if self.cfg.resample_per_epoch { epoch as u64 } else { 0 };
        rng::stream(self.cfg.seed, &[domain::MINER, epoch_key, anchor as u64])
    }

    /// One triplet per stored fingerprint, in storage order.
    pub fn mine_epoch(&self, epoch: usize) -> Vec<Triplet> {
        self.db
            .iter()
            .enumerate()
            .map(|(i, anchor)| {
                let mut r = self.anchor_rng(epoch, i);
                let negative = &self.db[self.negatives[i]];
                let (positive, negative) = match self.cfg.dropout_target {
                    DropoutTarget::Positive => {
                        (make_positive(anchor, self.cfg.d_fraction, &mut r), negative.clone())
                    }
                    DropoutTarget::Negative => {
                        (anchor.clone(), make_positive(negative, self.cfg.d_fraction, &mut r))
                    }
                };
                Triplet { anchor: anchor.clone(), positive, negative, anchor_rp: anchor.rp_id }
            })
            .collect()
    }
}

pub fn mine_epoch(db: &[NormalizedFingerprint], cfg: &MinerConfig, epoch: usize) -> Result<Vec<Triplet>> {
    Ok(TripletMiner::new(db.to_vec(), *cfg)?.mine_epoch(epoch))
}
