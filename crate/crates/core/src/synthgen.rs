//! Synthetic multi-device, multi-CI fingerprint worlds.
//!
//! Propagation is log-distance path loss with static log-normal shadowing
//! per (AP, RP) and per-reading fading. Device heterogeneity is an additive
//! gain, a static per-(device, AP) offset, and a probability of losing weak
//! APs. Time enters through a [`TemporalSchedule`] of disabled APs and a
//! slow per-CI drift. Readings are quantized to integer dBm like phone scans.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Fingerprint, FingerprintDataset, ReferencePoint, RpId, INVISIBLE_DBM, MAX_DBM};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Reference distance of the path-loss model, meters.
pub const REFERENCE_DISTANCE_M: f64 = 1.0;
/// Readings weaker than this (before clamping) are subject to device dropout.
pub const WEAK_SIGNAL_DBM: f64 = -90.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLoss {
    /// RSS at the reference distance, dBm.
    pub p0: f64,
    /// Path-loss exponent.
    pub n: f64,
    /// Static shadowing standard deviation per (AP, RP), dB.
    pub shadow_sigma: f64,
    /// Per-reading fading standard deviation, dB.
    #[serde(default)]
    pub fading_sigma: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        Self { p0: -38.0, n: 3.3, shadow_sigma: 4.0, fading_sigma: 2.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentModel {
    pub building_id: String,
    /// Width and height of the floor, meters.
    pub extent: (f64, f64),
    pub rps: Vec<ReferencePoint>,
    pub ap_ids: Vec<String>,
    pub ap_positions: Vec<Point>,
    pub pathloss: PathLoss,
    pub seed: u64,
}

impl EnvironmentModel {
    /// A straight corridor of `num_rps` RPs at `spacing` meters, centred in
    /// the floor, with `num_aps` APs placed uniformly at random in `extent`.
    pub fn corridor(
        building_id: impl Into<String>,
        num_rps: usize,
        spacing: f64,
        num_aps: usize,
        extent: (f64, f64),
        pathloss: PathLoss,
        seed: u64,
    ) -> Result<Self> {
        let building_id = building_id.into();
        let (w, h) = extent;
        let length = spacing * num_rps.saturating_sub(1) as f64;
        let x0 = (w - length) / 2.0;
        let rps = (0..num_rps)
            .map(|i| ReferencePoint {
                rp_id: RpId(i as u32),
                x: x0 + spacing * i as f64,
                y: h / 2.0,
            })
            .collect();
        let mut r = rng::stream(seed, &[domain::SYNTH_ENV, rng::str_tag(&building_id)]);
        let ap_positions = (0..num_aps)
            .map(|_| Point { x: r.random::<f64>() * w, y: r.random::<f64>() * h })
            .collect();
        let tag = (rng::str_tag(&building_id) & 0xff) as u8;
        let ap_ids = (0..num_aps)
            .map(|j| format!("02:00:{tag:02x}:00:{:02x}:{:02x}", j >> 8, j & 0xff))
            .collect();
        let env = Self { building_id, extent, rps, ap_ids, ap_positions, pathloss, seed };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let pl = &self.pathloss;
        if !(pl.n > 0.0) {
            return Err(Error::Config("path-loss exponent must be > 0".into()));
        }
        if !(pl.shadow_sigma >= 0.0) || !(pl.fading_sigma >= 0.0) {
            return Err(Error::Config("shadowing sigmas must be >= 0".into()));
        }
        if self.ap_positions.is_empty() || self.rps.len() < 2 {
            return Err(Error::Config("environment needs >= 1 AP and >= 2 RPs".into()));
        }
        if self.ap_ids.len() != self.ap_positions.len() {
            return Err(Error::Config("one id per AP position required".into()));
        }
        Ok(())
    }

    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }
}

/// Noise-free mean RSS of `ap` at `rp`, dBm, clamped to `[-100, 0]`.
/// Distances below the reference distance are clamped to it.
pub fn mean_rss(env: &EnvironmentModel, ap: usize, rp: usize) -> f64 {
    let a = env.ap_positions[ap];
    let p = &env.rps[rp];
    log_distance(&env.pathloss, (a.x - p.x).hypot(a.y - p.y))
}

pub(crate) fn log_distance(pl: &PathLoss, distance: f64) -> f64 {
    let d = distance.max(REFERENCE_DISTANCE_M);
    (pl.p0 - 10.0 * pl.n * (d / REFERENCE_DISTANCE_M).log10()).clamp(INVISIBLE_DBM, MAX_DBM)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub device_id: String,
    /// Additive bias applied to every reading, dB.
    pub gain_offset: f64,
    /// Standard deviation of the static per-AP offset, dB.
    pub per_ap_jitter_sigma: f64,
    /// Probability that an otherwise-visible weak AP reads -100.
    pub dropout_bias: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.per_ap_jitter_sigma >= 0.0) || !(0.0..=1.0).contains(&self.dropout_bias) {
            return Err(Error::Config(format!(
                "device `{}`: jitter must be >= 0 and dropout in [0, 1]",
                self.device_id
            )));
        }
        Ok(())
    }
}

/// AP availability and drift for one collection instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CiState {
    pub disabled: BTreeSet<usize>,
    pub drift_db: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalSchedule {
    pub cis: BTreeMap<u32, CiState>,
}

/// A run of CIs sharing one churn fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct ChurnPhase {
    pub cis: std::ops::RangeInclusive<u32>,
    pub disabled_fraction: f64,
}

impl TemporalSchedule {
    /// One disabled subset of `floor(fraction * num_aps)` APs per phase,
    /// drawn uniformly and independently per phase. Drift is zero during the
    /// first phase and follows a seeded random walk (`drift_step_db` per CI)
    /// afterwards.
    pub fn churn(num_aps: usize, phases: &[ChurnPhase], drift_step_db: f64, seed: u64) -> Self {
        let mut cis = BTreeMap::new();
        let mut drift = 0.0;
        let mut walk = rng::stream(seed, &[domain::SYNTH_SCHEDULE, u64::MAX]);
        for (p, phase) in phases.iter().enumerate() {
            let count = ((phase.disabled_fraction * num_aps as f64) + 1e-9).floor() as usize;
            let mut r = rng::stream(seed, &[domain::SYNTH_SCHEDULE, p as u64]);
            let disabled: BTreeSet<usize> =
                rand::seq::index::sample(&mut r, num_aps, count.min(num_aps))
                    .into_iter()
                    .collect();
            for ci in phase.cis.clone() {
                if p > 0 {
                    let step: f64 = walk.sample(StandardNormal);
                    drift += drift_step_db * step;
                }
                cis.insert(ci, CiState { disabled: disabled.clone(), drift_db: drift });
            }
        }
        Self { cis }
    }
}

/// Generates `fingerprints_per_rp` scans for every (device, CI, RP).
///
/// Records are ordered by device (as given), then CI, then RP, then sample.
/// Each (device, CI) slice draws from its own stream keyed on
/// `(seed, device, ci)`, so slices are independent of generation order.
pub fn generate(
    env: &EnvironmentModel,
    devices: &[DeviceProfile],
    schedule: &TemporalSchedule,
    fingerprints_per_rp: usize,
    seed: u64,
) -> Result<FingerprintDataset> {
    env.validate()?;
    let m = env.num_aps();
    for d in devices {
        d.validate()?;
    }
    for (ci, st) in &schedule.cis {
        if st.disabled.iter().any(|&j| j >= m) {
            return Err(Error::Config(format!("CI {ci} disables an AP outside the universe")));
        }
    }

    let pl = &env.pathloss;
    let mut shadow_rng = rng::stream(env.seed, &[domain::SYNTH_ENV, rng::str_tag(&env.building_id), 1]);
    // mean RSS plus static shadowing, [rp][ap]
    let base: Vec<Vec<f64>> = (0..env.rps.len())
        .map(|rp| {
            (0..m)
                .map(|ap| {
                    let s: f64 = shadow_rng.sample(StandardNormal);
                    mean_rss(env, ap, rp) + pl.shadow_sigma * s
                })
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    for dev in devices {
        let dev_tag = rng::str_tag(&dev.device_id);
        let mut jr = rng::stream(seed, &[domain::SYNTH_DEVICE, rng::str_tag(&env.building_id), dev_tag]);
        let offsets: Vec<f64> = (0..m)
            .map(|_| dev.per_ap_jitter_sigma * jr.sample::<f64, _>(StandardNormal))
            .collect();
        for (&ci, state) in &schedule.cis {
            let mut r = rng::stream(
                seed,
                &[domain::SYNTH_SLICE, rng::str_tag(&env.building_id), dev_tag, ci as u64],
            );
            for (rp_idx, rp) in env.rps.iter().enumerate() {
                for _ in 0..fingerprints_per_rp {
                    let ap_values = (0..m)
                        .map(|ap| {
                            let fade: f64 = r.sample(StandardNormal);
                            let coin: f64 = r.random();
                            if state.disabled.contains(&ap) {
                                return INVISIBLE_DBM;
                            }
                            let v = base[rp_idx][ap]
                                + dev.gain_offset
                                + offsets[ap]
                                + state.drift_db
                                + pl.fading_sigma * fade;
                            if v < WEAK_SIGNAL_DBM && coin < dev.dropout_bias {
                                INVISIBLE_DBM
                            } else {
                                v.clamp(INVISIBLE_DBM, MAX_DBM).round()
                            }
                        })
                        .collect();
                    records.push(Fingerprint {
                        ap_values,
                        rp_id: rp.rp_id,
                        device_id: dev.device_id.clone(),
                        ci,
                    });
                }
            }
        }
    }
    FingerprintDataset::new(env.building_id.clone(), env.ap_ids.clone(), env.rps.clone(), records)
}

/// One building of the default benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkBuilding {
    pub env: EnvironmentModel,
    pub devices: Vec<DeviceProfile>,
    pub schedule: TemporalSchedule,
    pub dataset: FingerprintDataset,
}

pub const BENCHMARK_RPS: usize = 16;
pub const BENCHMARK_APS: usize = 40;
pub const BENCHMARK_CIS: u32 = 17;
pub const BENCHMARK_FINGERPRINTS_PER_RP: usize = 6;

/// The four benchmark devices.
pub fn benchmark_devices() -> Vec<DeviceProfile> {
    let d = |id: &str, gain: f64, jitter: f64, dropout: f64| DeviceProfile {
        device_id: id.into(),
        gain_offset: gain,
        per_ap_jitter_sigma: jitter,
        dropout_bias: dropout,
    };
    vec![
        d("A", 0.0, 2.0, 0.1),
        d("B", -7.0, 4.0, 0.3),
        d("C", 5.0, 3.0, 0.05),
        d("D", -12.0, 5.0, 0.5),
    ]
}

/// AP churn by CI: none through CI 2, 20% CI 3-9, 40% CI 10-15, 60% CI 16.
pub fn benchmark_phases() -> Vec<ChurnPhase> {
    vec![
        ChurnPhase { cis: 0..=2, disabled_fraction: 0.0 },
        ChurnPhase { cis: 3..=9, disabled_fraction: 0.2 },
        ChurnPhase { cis: 10..=15, disabled_fraction: 0.4 },
        ChurnPhase { cis: 16..=16, disabled_fraction: 0.6 },
    ]
}

/// Two synthetic buildings (`Building-A`, `Building-B`), each with 16 RPs
/// at 1 m spacing, 40 APs, 4 devices and 17 CIs of 6 fingerprints per RP.
pub fn default_benchmark(seed: u64) -> Result<Vec<BenchmarkBuilding>> {
    ["Building-A", "Building-B"]
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let bseed = rng::derive_seed(seed, &[domain::BENCHMARK, b as u64]);
            let env = EnvironmentModel::corridor(
                *name,
                BENCHMARK_RPS,
                1.0,
                BENCHMARK_APS,
                (40.0, 20.0),
                PathLoss::default(),
                bseed,
            )?;
            let devices = benchmark_devices();
            let schedule = TemporalSchedule::churn(BENCHMARK_APS, &benchmark_phases(), 1.0, bseed);
            let dataset = generate(&env, &devices, &schedule, BENCHMARK_FINGERPRINTS_PER_RP, bseed)?;
            Ok(BenchmarkBuilding { env, devices, schedule, dataset })
        })
        .collect()
}
