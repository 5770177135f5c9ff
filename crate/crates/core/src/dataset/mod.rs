//! RSS fingerprint data model.
//!
//! Raw readings are dBm in `[-100, 0]` with `-100` meaning the AP was not
//! heard. Models consume [`NormalizedFingerprint`]s, the same vectors mapped
//! affinely onto `[0, 1]`.

mod csv_io;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// RSS reported for an AP that is not visible.
pub const INVISIBLE_DBM: f64 = -100.0;
/// Strongest representable RSS.
pub const MAX_DBM: f64 = 0.0;

/// Reference-point identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RpId(pub u32);

impl fmt::Display for RpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RP:{}", self.0)
    }
}

/// One scan: an RSS value per AP of the owning dataset's universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub ap_values: Vec<f64>,
    pub rp_id: RpId,
    pub device_id: String,
    pub ci: u32,
}

/// A fingerprint mapped onto `[0, 1]`; 0 is invisible, 1 is strongest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedFingerprint {
    pub values: Vec<f64>,
    pub rp_id: RpId,
    pub device_id: String,
    pub ci: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub rp_id: RpId,
    pub x: f64,
    pub y: f64,
}

impl ReferencePoint {
    pub fn distance_to(&self, other: &ReferencePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Maps a single dBm value onto `[0, 1]`, clamping out-of-range input.
pub fn normalize_dbm(dbm: f64) -> f64 {
    (dbm.clamp(INVISIBLE_DBM, MAX_DBM) - INVISIBLE_DBM) / (MAX_DBM - INVISIBLE_DBM)
}

/// Inverse of [`normalize_dbm`] on `[0, 1]`.
pub fn denormalize(value: f64) -> f64 {
    value * (MAX_DBM - INVISIBLE_DBM) + INVISIBLE_DBM
}

/// Normalizes every AP value. Values outside `[-100, 0]` are clamped;
/// non-finite values are rejected with the offending AP index.
pub fn normalize(f: &Fingerprint) -> Result<NormalizedFingerprint> {
    let values = normalize_values(&f.ap_values)?;
    Ok(NormalizedFingerprint {
        values,
        rp_id: f.rp_id,
        device_id: f.device_id.clone(),
        ci: f.ci,
    })
}

pub fn normalize_values(dbm: &[f64]) -> Result<Vec<f64>> {
    dbm.iter()
        .enumerate()
        .map(|(index, &v)| {
            if v.is_finite() {
                Ok(normalize_dbm(v))
            } else {
                Err(Error::NonFiniteValue { index })
            }
        })
        .collect()
}

/// Result of projecting a raw scan onto an AP universe.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub ap_values: Vec<f64>,
    /// Readings for APs outside the universe, which were discarded.
    pub dropped: usize,
}

/// Orders a raw `AP -> dBm` scan by `universe`. APs absent from the scan
/// read [`INVISIBLE_DBM`]; APs not in the universe are dropped and counted.
pub fn align<'a, I>(scan: I, universe: &[String]) -> Alignment
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    let position: HashMap<&str, usize> =
        universe.iter().enumerate().map(|(i, ap)| (ap.as_str(), i)).collect();
    let mut ap_values = vec![INVISIBLE_DBM; universe.len()];
    let mut dropped = 0;
    for (ap, dbm) in scan {
        match position.get(ap) {
            Some(&i) => ap_values[i] = dbm.clamp(INVISIBLE_DBM, MAX_DBM),
            None => dropped += 1,
        }
    }
    Alignment { ap_values, dropped }
}

/// Per-RP split sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_per_rp: usize,
    pub test_per_rp: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_per_rp: 5, test_per_rp: 1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_per_rp == 0 || self.test_per_rp == 0 {
            return Err(Error::Config(
                "split needs train_per_rp >= 1 and test_per_rp >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fingerprints of one building, aligned to a shared AP universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerprintDataset {
    building_id: String,
    ap_universe: Vec<String>,
    rps: Vec<ReferencePoint>,
    records: Vec<Fingerprint>,
}

impl FingerprintDataset {
    /// Validates and builds a dataset. Reference points are stored sorted by
    /// id; records keep their given order.
    pub fn new(
        building_id: impl Into<String>,
        ap_universe: Vec<String>,
        mut rps: Vec<ReferencePoint>,
        records: Vec<Fingerprint>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for ap in &ap_universe {
            if !seen.insert(ap.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate AP `{ap}`")));
            }
        }
        rps.sort_by_key(|rp| rp.rp_id);
        for pair in rps.windows(2) {
            if pair[0].rp_id == pair[1].rp_id {
                return Err(Error::InvalidDataset(format!(
                    "duplicate reference point {}",
                    pair[0].rp_id
                )));
            }
        }
        if let Some(rp) = rps.iter().find(|rp| !rp.x.is_finite() || !rp.y.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite coordinates at {}",
                rp.rp_id
            )));
        }
        let ds = Self { building_id: building_id.into(), ap_universe, rps, records };
        for (i, rec) in ds.records.iter().enumerate() {
            if ds.rp(rec.rp_id).is_none() {
                return Err(Error::InvalidDataset(format!(
                    "record {i} references unknown {}",
                    rec.rp_id
                )));
            }
            if rec.ap_values.len() != ds.ap_universe.len() {
                return Err(Error::InvalidDataset(format!(
                    "record {i} has {} values for {} APs",
                    rec.ap_values.len(),
                    ds.ap_universe.len()
                )));
            }
            if let Some(j) = rec
                .ap_values
                .iter()
                .position(|v| !(INVISIBLE_DBM..=MAX_DBM).contains(v))
            {
                return Err(Error::InvalidDataset(format!(
                    "record {i}, AP `{}`: RSS {} outside [-100, 0]",
                    ds.ap_universe[j], rec.ap_values[j]
                )));
            }
        }
        Ok(ds)
    }

    pub fn building_id(&self) -> &str {
        &self.building_id
    }

    pub fn ap_universe(&self) -> &[String] {
        &self.ap_universe
    }

    pub fn rps(&self) -> &[ReferencePoint] {
        &self.rps
    }

    pub fn records(&self) -> &[Fingerprint] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rp(&self, id: RpId) -> Option<&ReferencePoint> {
        self.rps
            .binary_search_by_key(&id, |rp| rp.rp_id)
            .ok()
            .map(|i| &self.rps[i])
    }

    /// Euclidean distance in meters between two reference points.
    pub fn rp_distance(&self, a: RpId, b: RpId) -> Result<f64> {
        let pa = self.rp(a).ok_or(Error::UnknownRp(a.0))?;
        let pb = self.rp(b).ok_or(Error::UnknownRp(b.0))?;
        Ok(pa.distance_to(pb))
    }

    /// Sorted distinct device ids.
    pub fn devices(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.device_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Sorted distinct collection instances.
    pub fn cis(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.records.iter().map(|r| r.ci).collect();
        set.into_iter().collect()
    }

    fn with_records(&self, records: Vec<Fingerprint>) -> Self {
        Self {
            building_id: self.building_id.clone(),
            ap_universe: self.ap_universe.clone(),
            rps: self.rps.clone(),
            records,
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&Fingerprint) -> bool) -> Self {
        self.with_records(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    /// Records captured by `device` during `ci`.
    pub fn slice(&self, device: &str, ci: u32) -> Self {
        self.filter(|r| r.device_id == device && r.ci == ci)
    }

    /// The first `k` records of every RP, in stored order.
    pub fn take_per_rp(&self, k: usize) -> Self {
        let mut taken: HashMap<RpId, usize> = HashMap::new();
        self.filter(|r| {
            let n = taken.entry(r.rp_id).or_insert(0);
            *n += 1;
            *n <= k
        })
    }

    /// APs heard (RSS above the invisible sentinel) in at least one record,
    /// in universe order.
    pub fn visible_aps(&self) -> Vec<String> {
        (0..self.ap_universe.len())
            .filter(|&j| self.records.iter().any(|r| r.ap_values[j] > INVISIBLE_DBM))
            .map(|j| self.ap_universe[j].clone())
            .collect()
    }

    /// Re-aligns every record onto `universe` with [`align`] semantics.
    /// Returns the projected dataset and the total count of dropped readings
    /// (visible readings at APs outside `universe`).
    pub fn project(&self, universe: &[String]) -> Result<(Self, usize)> {
        let mut dropped = 0;
        let records = self
            .records
            .iter()
            .map(|r| {
                let scan = self
                    .ap_universe
                    .iter()
                    .zip(&r.ap_values)
                    .filter(|(_, &v)| v > INVISIBLE_DBM)
                    .map(|(ap, &v)| (ap.as_str(), v));
                let a = align(scan, universe);
                dropped += a.dropped;
                Fingerprint { ap_values: a.ap_values, ..r.clone() }
            })
            .collect();
        let ds = Self::new(self.building_id.clone(), universe.to_vec(), self.rps.clone(), records)?;
        Ok((ds, dropped))
    }

    pub fn normalized(&self) -> Result<Vec<NormalizedFingerprint>> {
        self.records.iter().map(normalize).collect()
    }

    /// Record indices grouped by RP, RPs ascending, records in stored order.
    pub fn indices_by_rp(&self) -> BTreeMap<RpId, Vec<usize>> {
        let mut groups: BTreeMap<RpId, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            groups.entry(r.rp_id).or_default().push(i);
        }
        groups
    }
}

/// Splits `ds` per RP into disjoint train and test sets.
///
/// Test fingerprints are drawn uniformly without replacement from a stream
/// keyed on `(seed, rp_id)`; the train set takes the next `train_per_rp`
/// draws. Both outputs list RPs in ascending order, records in draw order.
/// Fingerprints beyond `train_per_rp + test_per_rp` at an RP are unused.
pub fn split(
    ds: &FingerprintDataset,
    spec: &SplitSpec,
) -> Result<(FingerprintDataset, FingerprintDataset)> {
    spec.validate()?;
    let needed = spec.train_per_rp + spec.test_per_rp;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (rp, mut idx) in ds.indices_by_rp() {
        if idx.len() < needed {
            return Err(Error::InsufficientFingerprints {
                rp: rp.0,
                available: idx.len(),
                needed,
            });
        }
        let mut r = rng::stream(spec.seed, &[rng::domain::SPLIT, rp.0 as u64]);
        idx.shuffle(&mut r);
        test.extend(idx[..spec.test_per_rp].iter().map(|&i| ds.records[i].clone()));
        train.extend(idx[spec.test_per_rp..needed].iter().map(|&i| ds.records[i].clone()));
    }
    Ok((ds.with_records(train), ds.with_records(test)))
}
