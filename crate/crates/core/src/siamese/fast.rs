//! Fingerprint augmentation stack, applied to training queries only.
//!
//! Steps, in order: AP dropout with half-normal infill, random brightness
//! (additive shift), random contrast (scaling of deviations from the vector
//! mean), additive Gaussian noise, and a final clip to `[0, 1]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaStConfig {
    pub ap_dropout_p: f64,
    pub contrast_delta: f64,
    pub brightness_delta: f64,
    pub gaussian_sigma: f64,
    /// Scale of the half-normal values written into dropped APs.
    pub infill_sigma: f64,
}

impl Default for FaStConfig {
    fn default() -> Self {
        Self {
            ap_dropout_p: 0.1,
            contrast_delta: 0.1,
            brightness_delta: 0.1,
            gaussian_sigma: 0.12,
            infill_sigma: 0.12,
        }
    }
}

impl FaStConfig {
    /// Configuration that leaves inputs untouched.
    pub fn disabled() -> Self {
        Self { ap_dropout_p: 0.0, contrast_delta: 0.0, brightness_delta: 0.0, gaussian_sigma: 0.0, infill_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let probs_ok = (0.0..=1.0).contains(&self.ap_dropout_p)
            && (0.0..=1.0).contains(&self.contrast_delta);
        let sigmas_ok = [self.brightness_delta, self.gaussian_sigma, self.infill_sigma]
            .iter()
            .all(|s| *s >= 0.0);
        if probs_ok && sigmas_ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid FaSt configuration {self:?}")))
        }
    }
}

/// Concrete random choices for one augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct FaStDraw {
    /// Replacement value for each dropped AP; `None` keeps the entry.
    pub infill: Vec<Option<f64>>,
    pub brightness: f64,
    pub contrast: f64,
    pub noise: Vec<f64>,
}

impl FaStDraw {
    pub fn sample(len: usize, cfg: &FaStConfig, rng: &mut impl Rng) -> Self {
        let infill = (0..len)
            .map(|_| {
                let coin: f64 = rng.random();
                let z: f64 = rng.sample(StandardNormal);
                (coin < cfg.ap_dropout_p).then(|| (cfg.infill_sigma * z).abs().min(1.0))
            })
            .collect();
        let brightness = cfg.brightness_delta * (2.0 * rng.random::<f64>() - 1.0);
        let contrast = 1.0 + cfg.contrast_delta * (2.0 * rng.random::<f64>() - 1.0);
        let noise = (0..len)
            .map(|_| cfg.gaussian_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { infill, brightness, contrast, noise }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x
            .iter()
            .zip(&self.infill)
            .map(|(&v, fill)| fill.unwrap_or(v) + self.brightness)
            .collect();
        if !out.is_empty() {
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            for v in &mut out {
                *v = mean + self.contrast * (*v - mean);
            }
        }
        for (v, n) in out.iter_mut().zip(&self.noise) {
            *v = (*v + n).clamp(0.0, 1.0);
        }
        out
    }
}

pub fn fast_augment(x: &[f64], cfg: &FaStConfig, rng: &mut impl Rng) -> Vec<f64> {
    FaStDraw::sample(x.len(), cfg, rng).apply(x)
}
