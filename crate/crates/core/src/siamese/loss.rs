use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `max(0, d_pos² - d_neg² + margin)` per triplet.
    #[default]
    Hinge,
    /// `d_pos² - d_neg²` per triplet, no margin and no clamp.
    Raw,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn per_triplet(d_pos: f64, d_neg: f64, margin: f64, mode: LossMode) -> f64 {
    match mode {
        LossMode::Hinge => (d_pos - d_neg + margin).max(0.0),
        LossMode::Raw => d_pos - d_neg,
    }
}

/// Summed triplet loss over `(anchor, positive, negative)` embeddings.
pub fn triplet_loss(batch: &[(&[f64], &[f64], &[f64])], margin: f64, mode: LossMode) -> Result<f64> {
    let mut total = 0.0;
    for &(a, p, n) in batch {
        if a.len() != p.len() || a.len() != n.len() {
            return Err(Error::LengthMismatch { left: a.len(), right: p.len().max(n.len()) });
        }
        total += per_triplet(sq(a, p), sq(a, n), margin, mode);
    }
    Ok(total)
}

/// Loss and its gradient for a stacked embedding matrix laid out as
/// `[anchors; positives; negatives]`, `b` rows each.
pub(crate) fn stacked_loss_grad(emb: ArrayView2<f64>, b: usize, margin: f64, mode: LossMode) -> (f64, Array2<f64>) {
    debug_assert_eq!(emb.nrows(), 3 * b);
    let mut grad = Array2::zeros(emb.raw_dim());
    let mut total = 0.0;
    for i in 0..b {
        let a = emb.row(i);
        let p = emb.row(b + i);
        let n = emb.row(2 * b + i);
        let (a, p, n) = (a.as_slice().unwrap(), p.as_slice().unwrap(), n.as_slice().unwrap());
        let l = per_triplet(sq(a, p), sq(a, n), margin, mode);
        total += l;
        let active = match mode {
            LossMode::Hinge => l > 0.0,
            LossMode::Raw => true,
        };
        if active {
            for j in 0..a.len() {
                grad[[i, j]] = 2.0 * (n[j] - p[j]);
                grad[[b + i, j]] = -2.0 * (a[j] - p[j]);
                grad[[2 * b + i, j]] = 2.0 * (a[j] - n[j]);
            }
        }
    }
    (total, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::stack;
    use ndarray::Axis;

    fn unit(theta: f64) -> [f64; 2] {
        [theta.cos(), theta.sin()]
    }

    #[test]
    fn satisfied_constraint_is_zero() {
        let a = unit(0.0);
        let n = unit(std::f64::consts::PI);
        assert_eq!(triplet_loss(&[(&a, &a, &n)], 0.2, LossMode::Hinge).unwrap(), 0.0);
    }

    #[test]
    fn worst_negative_costs_margin_plus_positive_gap() {
        let a = unit(0.0);
        let p = unit(1.0);
        let d = sq(&a, &p);
        let l = triplet_loss(&[(&a, &p, &a), (&a, &p, &a)], 0.2, LossMode::Hinge).unwrap();
        assert!((l - 2.0 * (d + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn hand_worked_trio() {
        // |a-p|² = 2 - 2cos so cos = 0.75 gives 0.5 and cos = 0.8 gives 0.4.
        let a = [1.0, 0.0];
        let p = [0.75, (1.0f64 - 0.5625).sqrt()];
        let n = [0.8, 0.6];
        let hinge = triplet_loss(&[(&a, &p, &n)], 0.2, LossMode::Hinge).unwrap();
        let raw = triplet_loss(&[(&a, &p, &n)], 0.2, LossMode::Raw).unwrap();
        assert!((hinge - 0.3).abs() < 1e-12);
        assert!((raw - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(triplet_loss(&[(&[1.0], &[1.0, 0.0], &[0.0])], 0.2, LossMode::Hinge).is_err());
    }

    #[test]
    fn stacked_matches_slice_form() {
        let rows = [unit(0.1), unit(0.9), unit(2.0), unit(-0.4), unit(0.3), unit(1.2)];
        let views: Vec<_> = rows.iter().map(|r| ndarray::ArrayView1::from(&r[..])).collect();
        let emb = stack(Axis(0), &views).unwrap();
        for mode in [LossMode::Hinge, LossMode::Raw] {
            let (l, _) = stacked_loss_grad(emb.view(), 2, 0.5, mode);
            let slice = triplet_loss(
                &[(&rows[0], &rows[2], &rows[4]), (&rows[1], &rows[3], &rows[5])],
                0.5,
                mode,
            )
            .unwrap();
            assert!((l - slice).abs() < 1e-15);
        }
    }
}
