use std::collections::BTreeMap;

use crate::dataset::{NormalizedFingerprint, ReferencePoint, RpId};
use crate::error::{Error, Result};
use crate::eval::localization_error;
use crate::triplets::squared_distance;

/// Brute-force k-nearest-neighbour classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    vectors: Vec<Vec<f64>>,
    labels: Vec<RpId>,
    k: usize,
}

impl KnnModel {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<RpId>, k: usize) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::LengthMismatch { left: vectors.len(), right: labels.len() });
        }
        if k == 0 || k > vectors.len() {
            return Err(Error::Config(format!("k = {k} with {} training vectors", vectors.len())));
        }
        let width = vectors[0].len();
        if let Some(v) = vectors.iter().find(|v| v.len() != width) {
            return Err(Error::LengthMismatch { left: v.len(), right: width });
        }
        Ok(Self { vectors, labels, k })
    }

    pub fn from_fingerprints(db: &[NormalizedFingerprint], k: usize) -> Result<Self> {
        Self::new(db.iter().map(|f| f.values.clone()).collect(), db.iter().map(|f| f.rp_id).collect(), k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Majority label of the `k` nearest vectors. Equal distances rank by
    /// storage order; vote ties go to the smaller mean distance, then the
    /// lower RP id.
    pub fn predict(&self, x: &[f64]) -> Result<RpId> {
        if x.len() != self.vectors[0].len() {
            return Err(Error::LengthMismatch { left: x.len(), right: self.vectors[0].len() });
        }
        let mut d: Vec<(f64, usize)> =
            self.vectors.iter().enumerate().map(|(i, v)| (squared_distance(x, v), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<RpId, (usize, f64)> = BTreeMap::new();
        for &(sq, i) in &d[..self.k] {
            let e = votes.entry(self.labels[i]).or_default();
            e.0 += 1;
            e.1 += sq.sqrt();
        }
        let mut best: Option<(RpId, usize, f64)> = None;
        for (&rp, &(count, sum)) in &votes {
            let mean = sum / count as f64;
            let better = match best {
                None => true,
                Some((_, c, m)) => count > c || (count == c && mean < m),
            };
            if better {
                best = Some((rp, count, mean));
            }
        }
        Ok(best.expect("k >= 1").0)
    }
}

pub fn knn_predict(model: &KnnModel, x: &[f64]) -> Result<RpId> {
    model.predict(x)
}

/// One collection instance in an LT-KNN stream: the fresh survey slice a
/// refit may use and the queries to localize.
#[derive(Clone, Copy, Debug)]
pub struct CiStage<'a> {
    pub ci: u32,
    pub survey: &'a [NormalizedFingerprint],
    pub queries: &'a [NormalizedFingerprint],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiErrors {
    pub ci: u32,
    /// Whether the model was refit on entering this CI.
    pub refit: bool,
    pub errors_m: Vec<f64>,
}

impl CiErrors {
    pub fn mean(&self) -> f64 {
        self.errors_m.iter().sum::<f64>() / self.errors_m.len().max(1) as f64
    }
}

/// Runs KNN over consecutive CIs. The model is fit on the first stage's
/// survey slice and refit on entering every CI `c > first` with
/// `(c - first) % every == 0`. `None` never refits.
pub fn ltknn_evaluate(
    stages: &[CiStage<'_>],
    retrain_every: Option<u32>,
    k: usize,
    rps: &[ReferencePoint],
) -> Result<Vec<CiErrors>> {
    let Some(first) = stages.first() else {
        return Ok(Vec::new());
    };
    if retrain_every == Some(0) {
        return Err(Error::Config("retrain interval must be >= 1".into()));
    }
    let mut model = KnnModel::from_fingerprints(first.survey, k)?;
    let mut out = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        let expected = first.ci + i as u32;
        if stage.ci != expected {
            return Err(Error::MissingCi(expected));
        }
        let offset = stage.ci - first.ci;
        let refit = offset > 0 && retrain_every.is_some_and(|every| offset % every == 0);
        if refit {
            model = KnnModel::from_fingerprints(stage.survey, k)?;
        }
        let errors_m = stage
            .queries
            .iter()
            .map(|q| localization_error(model.predict(&q.values)?, q.rp_id, rps))
            .collect::<Result<_>>()?;
        out.push(CiErrors { ci: stage.ci, refit, errors_m });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn fp(values: Vec<f64>, rp: u32, ci: u32) -> NormalizedFingerprint {
        NormalizedFingerprint { values, rp_id: RpId(rp), device_id: "A".into(), ci }
    }

    fn line_rps(n: u32) -> Vec<ReferencePoint> {
        (0..n).map(|i| ReferencePoint { rp_id: RpId(i), x: i as f64, y: 0.0 }).collect()
    }

    /// Exhaustive re-statement of the voting rule.
    fn oracle(vectors: &[Vec<f64>], labels: &[RpId], k: usize, x: &[f64]) -> RpId {
        let dist = |v: &Vec<f64>| v.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..k {
            let mut pick = None;
            for i in 0..vectors.len() {
                if chosen.contains(&i) {
                    continue;
                }
                if pick.is_none_or(|p: usize| dist(&vectors[i]) < dist(&vectors[p])) {
                    pick = Some(i);
                }
            }
            chosen.push(pick.unwrap());
        }
        let mut candidates: Vec<RpId> = chosen.iter().map(|&i| labels[i]).collect();
        candidates.sort();
        candidates.dedup();
        let stats = |rp: RpId| {
            let ds: Vec<f64> = chosen.iter().filter(|&&i| labels[i] == rp).map(|&i| dist(&vectors[i])).collect();
            (ds.len(), ds.iter().sum::<f64>() / ds.len() as f64)
        };
        let mut best = candidates[0];
        for &rp in &candidates[1..] {
            let (c, m) = stats(rp);
            let (bc, bm) = stats(best);
            if c > bc || (c == bc && m < bm) {
                best = rp;
            }
        }
        best
    }

    #[test]
    fn exact_match_with_k1() {
        let m = KnnModel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![RpId(4), RpId(9)], 1).unwrap();
        assert_eq!(m.predict(&[1.0, 0.0]).unwrap(), RpId(9));
    }

    #[test]
    fn k_equal_n_gives_global_majority() {
        let v: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let labels = vec![RpId(2), RpId(1), RpId(2), RpId(1), RpId(2)];
        let m = KnnModel::new(v, labels, 5).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), RpId(2));
        assert_eq!(m.predict(&[100.0]).unwrap(), RpId(2));
    }

    #[test]
    fn vote_tie_uses_mean_distance_then_rp() {
        let m = KnnModel::new(vec![vec![0.0], vec![3.0]], vec![RpId(7), RpId(1)], 2).unwrap();
        assert_eq!(m.predict(&[1.0]).unwrap(), RpId(7));
        assert_eq!(m.predict(&[1.5]).unwrap(), RpId(1));
    }

    #[test]
    fn rejects_bad_k() {
        assert!(KnnModel::new(vec![vec![0.0]], vec![RpId(0)], 2).is_err());
        assert!(KnnModel::new(vec![vec![0.0]], vec![RpId(0)], 0).is_err());
    }

    #[test]
    fn seeded_instance_matches_scan() {
        let mut r = rng::stream(20, &[]);
        let v: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| r.random()).collect()).collect();
        let labels: Vec<RpId> = (0..20).map(|i| RpId(i % 5)).collect();
        let m = KnnModel::new(v.clone(), labels.clone(), 4).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..3).map(|_| r.random()).collect();
            assert_eq!(m.predict(&q).unwrap(), oracle(&v, &labels, 4, &q));
        }
    }

    proptest! {
        #[test]
        fn matches_bruteforce(
            n in 1usize..40,
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let k = k.min(n);
            let mut r = rng::stream(seed, &[]);
            let v: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.random()).collect()).collect();
            let labels: Vec<RpId> = (0..n).map(|_| RpId(r.random_range(0..6))).collect();
            let m = KnnModel::new(v.clone(), labels.clone(), k).unwrap();
            let q: Vec<f64> = (0..4).map(|_| r.random()).collect();
            prop_assert_eq!(m.predict(&q).unwrap(), oracle(&v, &labels, k, &q));
        }
    }

    fn stream(n: u32) -> Vec<(Vec<NormalizedFingerprint>, Vec<NormalizedFingerprint>)> {
        // the signal for each RP moves by 0.1 per CI so stale models drift
        (0..n)
            .map(|ci| {
                let shift = 0.1 * ci as f64;
                let survey = (0..4).map(|rp| fp(vec![rp as f64 + shift], rp, ci)).collect();
                let queries = (0..4).map(|rp| fp(vec![rp as f64 + shift + 0.05], rp, ci)).collect();
                (survey, queries)
            })
            .collect()
    }

    fn stages(data: &[(Vec<NormalizedFingerprint>, Vec<NormalizedFingerprint>)]) -> Vec<CiStage<'_>> {
        data.iter()
            .enumerate()
            .map(|(ci, (s, q))| CiStage { ci: ci as u32, survey: s, queries: q })
            .collect()
    }

    #[test]
    fn refit_schedule() {
        let data = stream(7);
        let out = ltknn_evaluate(&stages(&data), Some(3), 1, &line_rps(4)).unwrap();
        let refits: Vec<u32> = out.iter().filter(|c| c.refit).map(|c| c.ci).collect();
        assert_eq!(refits, vec![3, 6]);
    }

    #[test]
    fn never_refitting_equals_static_knn() {
        let data = stream(7);
        let rps = line_rps(4);
        let out = ltknn_evaluate(&stages(&data), None, 1, &rps).unwrap();
        let model = KnnModel::from_fingerprints(&data[0].0, 1).unwrap();
        for (ci, (_, queries)) in data.iter().enumerate() {
            let expected: Vec<f64> = queries
                .iter()
                .map(|q| localization_error(model.predict(&q.values).unwrap(), q.rp_id, &rps).unwrap())
                .collect();
            assert_eq!(out[ci].errors_m, expected);
            assert!(!out[ci].refit);
        }
    }

    #[test]
    fn refit_helps_under_drift() {
        let data = stream(7);
        let rps = line_rps(4);
        let stale = ltknn_evaluate(&stages(&data), None, 1, &rps).unwrap();
        let fresh = ltknn_evaluate(&stages(&data), Some(3), 1, &rps).unwrap();
        assert!(fresh[6].mean() <= stale[6].mean());
        assert_eq!(fresh[..3], stale[..3]);
    }

    #[test]
    fn gap_in_stream_is_an_error() {
        let data = stream(3);
        let mut s = stages(&data);
        s[2].ci = 5;
        assert!(matches!(ltknn_evaluate(&s, Some(3), 1, &line_rps(4)), Err(Error::MissingCi(2))));
    }
}
