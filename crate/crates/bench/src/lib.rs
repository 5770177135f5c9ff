//! Shared fixtures for the criterion benchmarks under `benches/`.

use ndarray::Array2;
use stellar_core::dataset::{NormalizedFingerprint, RpId};
use stellar_core::siamese::{ModelConfig, SiameseModel};
use stellar_core::synthgen;

/// Training slice of the first benchmark building with a freshly
/// initialized default-size encoder.
pub struct Fixture {
    pub db: Vec<NormalizedFingerprint>,
    pub model: SiameseModel,
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<RpId>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let world = synthgen::default_benchmark(seed).expect("benchmark world");
        let ds = &world[0].dataset;
        let slice = ds.slice("A", 0);
        let universe = slice.visible_aps();
        let (slice, _) = slice.project(&universe).expect("projection");
        let db = slice.normalized().expect("normalized");
        let cfg = ModelConfig { seed, ..Default::default() };
        let model = SiameseModel::new(cfg, universe, &db).expect("model");
        let embeddings = model.encode_batch(Self::matrix(&db).view()).expect("encode");
        Self {
            embeddings: embeddings.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: db.iter().map(|f| f.rp_id).collect(),
            db,
            model,
        }
    }

    pub fn matrix(rows: &[NormalizedFingerprint]) -> Array2<f64> {
        let m = rows[0].values.len();
        Array2::from_shape_fn((rows.len(), m), |(i, j)| rows[i].values[j])
    }

    /// `batch` stacked triplets drawn cyclically from the database.
    pub fn triplet_stack(&self, batch: usize) -> Array2<f64> {
        let n = self.db.len();
        let rows: Vec<NormalizedFingerprint> = (0..3 * batch).map(|i| self.db[(i * 7) % n].clone()).collect();
        Self::matrix(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_consistent() {
        let f = Fixture::new(1);
        assert_eq!(f.db.len(), 16 * 6);
        assert_eq!(f.embeddings.len(), f.db.len());
        assert_eq!(f.triplet_stack(4).nrows(), 12);
    }
}
