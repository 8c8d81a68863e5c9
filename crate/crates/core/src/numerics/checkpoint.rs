//! JSON parameter checkpoints. Floats are written in shortest round-trip
//! form, so save followed by load reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BnStats, NumericsError, ParamSet, Result, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Model-specific settings, stored verbatim.
    pub hyperparameters: serde_json::Value,
    pub parameters: BTreeMap<String, ParamRecord>,
    pub batch_norm: BTreeMap<String, BnStats>,
    pub rng_seed: u64,
}

fn ck_err(e: impl std::fmt::Display) -> NumericsError {
    NumericsError::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn new(
        hyperparameters: serde_json::Value,
        params: &ParamSet,
        batch_norm: BTreeMap<String, BnStats>,
        rng_seed: u64,
    ) -> Self {
        let parameters = params
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    ParamRecord {
                        shape: p.value.shape().to_vec(),
                        values: p.value.data().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            hyperparameters,
            parameters,
            batch_norm,
            rng_seed,
        }
    }

    pub fn params(&self) -> Result<ParamSet> {
        let mut ps = ParamSet::new();
        for (k, r) in &self.parameters {
            ps.insert(k.clone(), Tensor::from_vec(&r.shape, r.values.clone())?);
        }
        Ok(ps)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(ck_err)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s).map_err(ck_err)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ck_err(format!("unsupported format version {}", ck.format_version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(ck_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(ck_err)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let awkward = vec![0.1, 1.0 / 3.0, -2.0e-308, 5e-324, f64::MAX, -0.0, 1e300 * 1.7, std::f64::consts::PI];
        ps.insert("a", Tensor::from_vec(&[8], awkward).unwrap());
        ps.insert(
            "b",
            Tensor::from_vec(&[20, 5], (0..100).map(|_| rng.random::<f64>() * 1e3 - 500.0).collect()).unwrap(),
        );
        let mut bn = BTreeMap::new();
        bn.insert(
            "bn0".to_string(),
            BnStats {
                mean: vec![0.7, -1e-17],
                var: vec![1.0 + f64::EPSILON, 2.5],
            },
        );
        let ck = Checkpoint::new(serde_json::json!({"d_model": 8}), &ps, bn, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let ps2 = back.params().unwrap();
        for (k, p) in ps.iter() {
            let a: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = ps2.get(k).unwrap().data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{k}");
        }
        assert_eq!(back.batch_norm["bn0"].var[0].to_bits(), (1.0 + f64::EPSILON).to_bits());
        assert_eq!(back.rng_seed, 42);
        assert_eq!(back.hyperparameters["d_model"], 8);
    }

    #[test]
    fn rejects_other_versions() {
        let ck = Checkpoint::new(serde_json::Value::Null, &ParamSet::new(), BTreeMap::new(), 0);
        let s = ck.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(Checkpoint::from_json(&s), Err(NumericsError::Checkpoint(_))));
    }
}
