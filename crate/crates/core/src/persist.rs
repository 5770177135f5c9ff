//! Versioned JSON model files.
//!
//! ```json
//! {"format": "stellar-model", "version": 1, "kind": "siamese", ...}
//! ```
//!
//! Encoder files carry the config, the AP universe, the RP labels, the
//! context matrices and every parameter tensor by name in declared order.
//! Ensemble files carry the boosted trees. Floats are written in shortest
//! round-trip form so save followed by load is exact.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::RpId;
use crate::error::{Error, Result};
use crate::gbt::BoostedEnsemble;
use crate::siamese::{Context, ModelConfig, Params, SiameseModel};

pub const FORMAT: &str = "stellar-model";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Payload {
    Siamese {
        config: ModelConfig,
        ap_universe: Vec<String>,
        labels: Vec<RpId>,
        keys: TensorRecord,
        values: TensorRecord,
        tensors: Vec<TensorRecord>,
    },
    Ensemble {
        ensemble: BoostedEnsemble,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    payload: Payload,
}

fn matrix(name: &str, m: &Array2<f64>) -> TensorRecord {
    TensorRecord { name: name.into(), shape: m.shape().to_vec(), data: m.iter().copied().collect() }
}

fn unmatrix(t: TensorRecord) -> Result<Array2<f64>> {
    let [r, c] = t.shape[..] else {
        return Err(Error::ModelFile(format!("tensor `{}` is not two-dimensional", t.name)));
    };
    Array2::from_shape_vec((r, c), t.data).map_err(|e| Error::ModelFile(format!("tensor `{}`: {e}", t.name)))
}

fn encode(payload: Payload) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile { format: FORMAT.into(), version: VERSION, payload })?)
}

fn decode(json: &str) -> Result<Payload> {
    let file: ModelFile = serde_json::from_str(json).map_err(|e| Error::ModelFile(e.to_string()))?;
    if file.format != FORMAT {
        return Err(Error::ModelFile(format!("unexpected format `{}`", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::ModelFile(format!("unsupported version {}", file.version)));
    }
    Ok(file.payload)
}

pub fn siamese_to_json(model: &SiameseModel) -> Result<String> {
    encode(Payload::Siamese {
        config: model.config.clone(),
        ap_universe: model.ap_universe.clone(),
        labels: model.labels.clone(),
        keys: matrix("keys", &model.context.keys),
        values: matrix("values", &model.context.values),
        tensors: model
            .params
            .tensors()
            .into_iter()
            .map(|(name, data, shape)| TensorRecord { name, shape, data: data.to_vec() })
            .collect(),
    })
}

pub fn siamese_from_json(json: &str) -> Result<SiameseModel> {
    let Payload::Siamese { config, ap_universe, labels, keys, values, tensors } = decode(json)? else {
        return Err(Error::ModelFile("expected a siamese model file".into()));
    };
    config.validate()?;
    let context = Context { keys: unmatrix(keys)?, values: unmatrix(values)? };
    let shape = config.shape(ap_universe.len(), labels.len());
    let mut params = Params::zeros(&shape);
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().into_iter().map(|(n, _, s)| (n, s)).collect();
    if tensors.len() != expected.len() {
        return Err(Error::ModelFile(format!("{} tensors, expected {}", tensors.len(), expected.len())));
    }
    for ((slot, record), (name, shape)) in params.tensors_mut().into_iter().zip(&tensors).zip(&expected) {
        if &record.name != name || &record.shape != shape || record.data.len() != slot.len() {
            return Err(Error::ModelFile(format!(
                "tensor `{}` {:?} where `{name}` {shape:?} was expected",
                record.name, record.shape
            )));
        }
        slot.copy_from_slice(&record.data);
    }
    if context.keys.ncols() != ap_universe.len() || context.values.ncols() != labels.len() {
        return Err(Error::ModelFile("context does not match AP universe or labels".into()));
    }
    if !params.is_finite() {
        return Err(Error::ModelFile("non-finite parameter".into()));
    }
    Ok(SiameseModel { config, ap_universe, labels, context, params })
}

pub fn ensemble_to_json(model: &BoostedEnsemble) -> Result<String> {
    encode(Payload::Ensemble { ensemble: model.clone() })
}

pub fn ensemble_from_json(json: &str) -> Result<BoostedEnsemble> {
    match decode(json)? {
        Payload::Ensemble { ensemble } => Ok(ensemble),
        Payload::Siamese { .. } => Err(Error::ModelFile("expected an ensemble model file".into())),
    }
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn save_siamese(model: &SiameseModel, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), siamese_to_json(model)?)
}

pub fn load_siamese(path: impl AsRef<Path>) -> Result<SiameseModel> {
    siamese_from_json(&read(path.as_ref())?)
}

pub fn save_ensemble(model: &BoostedEnsemble, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), ensemble_to_json(model)?)
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<BoostedEnsemble> {
    ensemble_from_json(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NormalizedFingerprint;
    use crate::gbt::{gbt_fit, GbtParams};
    use crate::rng;
    use rand::Rng;

    fn model() -> SiameseModel {
        let mut r = rng::stream(3, &[]);
        let db: Vec<NormalizedFingerprint> = (0..6)
            .map(|n| NormalizedFingerprint {
                values: (0..4).map(|_| r.random::<f64>()).collect(),
                rp_id: RpId(n % 3),
                device_id: "A".into(),
                ci: 0,
            })
            .collect();
        let cfg = ModelConfig { num_heads: 2, head_size: 3, dense_widths: vec![5], embedding_dim: 4, ..Default::default() };
        SiameseModel::new(cfg, (0..4).map(|i| format!("ap{i}")).collect(), &db).unwrap()
    }

    #[test]
    fn siamese_round_trip_is_exact() {
        let m = model();
        let back = siamese_from_json(&siamese_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.param_hash(), m.param_hash());
    }

    #[test]
    fn ensemble_round_trip_is_exact() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 / 7.0]).collect();
        let y: Vec<RpId> = (0..12).map(|i| RpId(i % 3)).collect();
        let e = gbt_fit(&x, &y, &GbtParams { num_rounds: 4, min_child_weight: 0.0, ..Default::default() }).unwrap();
        assert_eq!(ensemble_from_json(&ensemble_to_json(&e).unwrap()).unwrap(), e);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model();
        save_siamese(&m, &path).unwrap();
        assert_eq!(load_siamese(&path).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_version_kind_and_tensors() {
        let json = siamese_to_json(&model()).unwrap();
        let v2 = json.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(siamese_from_json(&v2), Err(Error::ModelFile(_))));
        assert!(ensemble_from_json(&json).is_err());
        let renamed = json.replacen("\"w_o\"", "\"w_x\"", 1);
        assert!(siamese_from_json(&renamed).is_err());
        assert!(load_siamese("/nonexistent/model.json").is_err());
    }
}
