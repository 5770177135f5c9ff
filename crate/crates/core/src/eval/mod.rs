//! Experiment runner: wires the dataset, miner, encoder and classifiers
//! together, computes localization errors over the device × CI grid and
//! writes reports and plot data.

mod config;
mod pipeline;
mod report;

pub use config::{DataSource, ExperimentConfig};
pub use pipeline::{
    compare_baselines, run_pipeline, sweep_d, sweep_samples, CellQueries, Prepared, Session, Stellar,
};
pub use report::{
    emit_plots, Arm, ArmResult, Cell, CiAggregate, Comparison, DRow, EvalReport, Grid, RunMeta,
    SamplesCurve, TrainingSummary,
};

use crate::dataset::{ReferencePoint, RpId};
use crate::error::{Error, Result};

/// Euclidean distance in meters between two RPs' coordinates.
pub fn localization_error(predicted: RpId, truth: RpId, rps: &[ReferencePoint]) -> Result<f64> {
    let find = |id: RpId| rps.iter().find(|r| r.rp_id == id).ok_or(Error::UnknownRp(id.0));
    Ok(find(predicted)?.distance_to(find(truth)?))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rps() -> Vec<ReferencePoint> {
        let mut v: Vec<ReferencePoint> = (0..6).map(|i| ReferencePoint { rp_id: RpId(i), x: i as f64, y: 0.0 }).collect();
        v.push(ReferencePoint { rp_id: RpId(10), x: 0.0, y: 0.0 });
        v.push(ReferencePoint { rp_id: RpId(11), x: 3.0, y: 4.0 });
        v
    }

    #[test]
    fn localization_error_examples() {
        let r = rps();
        assert_eq!(localization_error(RpId(2), RpId(2), &r).unwrap(), 0.0);
        assert_eq!(localization_error(RpId(3), RpId(5), &r).unwrap(), 2.0);
        assert_eq!(localization_error(RpId(10), RpId(11), &r).unwrap(), 5.0);
        assert!(matches!(localization_error(RpId(99), RpId(1), &r), Err(Error::UnknownRp(99))));
    }
}
