//! Decomposition-linear baseline: the normalized target channel is split
//! into a moving-average trend and a remainder, and each part is mapped to
//! the horizon by its own linear layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{TrainStep, Trainable};
use super::{check_sample, ForecastError, Forecaster, Result};
use crate::market_data::{Transform, WindowSample};
use crate::numerics::{Checkpoint, Gradients, Layer, Linear, Mode, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DLinearHyper {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for DLinearHyper {
    fn default() -> Self {
        Self {
            lookback: 336,
            horizon: 24,
            channels: 3,
            kernel: 25,
        }
    }
}

/// Centered moving average of odd width `kernel`, padding both ends by
/// repeating the edge values.
pub fn moving_average(x: &[f64], kernel: usize) -> Vec<f64> {
    let half = kernel / 2;
    let n = x.len() as isize;
    let at = |i: isize| x[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|i| (i - half as isize..=i + half as isize).map(at).sum::<f64>() / (2 * half + 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DLinear {
    pub hyper: DLinearHyper,
    pub transform: Transform,
    pub params: ParamSet,
    pub seed: u64,
}

impl DLinear {
    pub fn new(hyper: DLinearHyper, transform: Transform, seed: u64) -> Result<Self> {
        if hyper.kernel.is_multiple_of(2) || hyper.lookback == 0 || hyper.horizon == 0 || hyper.channels == 0 {
            return Err(ForecastError::GeometryMismatch(format!("{hyper:?}")));
        }
        let mut model = Self {
            hyper,
            transform,
            params: ParamSet::new(),
            seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.trend().init(&mut model.params, &mut rng);
        model.season().init(&mut model.params, &mut rng);
        Ok(model)
    }

    fn trend(&self) -> Linear {
        Linear::new("trend", self.hyper.lookback, self.hyper.horizon, true)
    }

    fn season(&self) -> Linear {
        Linear::new("season", self.hyper.lookback, self.hyper.horizon, true)
    }

    /// Trend and remainder matrices, one row per sample.
    fn decompose(&self, batch: &[&WindowSample]) -> Result<(Tensor, Tensor)> {
        let h = &self.hyper;
        let mut trend = Vec::with_capacity(batch.len() * h.lookback);
        let mut rest = Vec::with_capacity(batch.len() * h.lookback);
        for s in batch {
            check_sample(s, h.channels, h.lookback, h.horizon, self.transform)?;
            let x = s.normalized_channel(0);
            let t = moving_average(&x, h.kernel);
            rest.extend(x.iter().zip(&t).map(|(a, b)| a - b));
            trend.extend(t);
        }
        Ok((
            Tensor::matrix(batch.len(), h.lookback, trend),
            Tensor::matrix(batch.len(), h.lookback, rest),
        ))
    }

    fn forward(&self, batch: &[&WindowSample]) -> Result<(Tensor, Tensor, Tensor)> {
        let (trend, rest) = self.decompose(batch)?;
        let (mut out, _) = self.trend().forward(&self.params, &trend, Mode::Eval)?;
        out.add_assign(&self.season().forward(&self.params, &rest, Mode::Eval)?.0);
        Ok((out, trend, rest))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            serde_json::json!({
                "kind": "dlinear",
                "hyper": self.hyper,
                "transform": self.transform,
            }),
            &self.params,
            Default::default(),
            self.seed,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let hp = &ck.hyperparameters;
        if hp.get("kind").and_then(|k| k.as_str()) != Some("dlinear") {
            return Err(ForecastError::WrongModelKind("dlinear".into()));
        }
        let bad = |e: serde_json::Error| ForecastError::Numerics(crate::numerics::NumericsError::Checkpoint(e.to_string()));
        let hyper: DLinearHyper = serde_json::from_value(hp["hyper"].clone()).map_err(bad)?;
        let transform: Transform = serde_json::from_value(hp["transform"].clone()).map_err(bad)?;
        let mut model = Self::new(hyper, transform, ck.rng_seed)?;
        let params = ck.params()?;
        for (name, p) in model.params.iter() {
            if params.get(name)?.shape() != p.value.shape() || params.len() != model.params.len() {
                return Err(ForecastError::ShapeMismatch(format!("checkpoint parameter `{name}`")));
            }
        }
        model.params = params;
        Ok(model)
    }
}

impl Forecaster for DLinear {
    fn predict_batch(&self, batch: &[&WindowSample]) -> Result<Vec<Vec<f64>>> {
        let (out, _, _) = self.forward(batch)?;
        Ok(out.data().chunks(self.hyper.horizon).map(<[f64]>::to_vec).collect())
    }
}

impl Trainable for DLinear {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn train_step(&self, batch: &[&WindowSample], _seed: u64) -> Result<TrainStep> {
        let (out, trend, rest) = self.forward(batch)?;
        let t = self.hyper.horizon;
        let denom = (batch.len() * t) as f64;
        let mut loss = 0.0;
        let mut dout = Vec::with_capacity(out.len());
        for (s, pred) in batch.iter().zip(out.data().chunks(t)) {
            for (p, y) in pred.iter().zip(s.normalized_target()) {
                loss += (p - y) * (p - y) / denom;
                dout.push(2.0 * (p - y) / denom);
            }
        }
        let dout = Tensor::matrix(batch.len(), t, dout);
        let mut grads: Gradients = self.params.zero_gradients();
        self.trend().backward(&self.params, &trend, &dout, &mut grads)?;
        self.season().backward(&self.params, &rest, &dout, &mut grads)?;
        Ok(TrainStep {
            loss,
            grads,
            batch_norm: Vec::new(),
        })
    }
}
