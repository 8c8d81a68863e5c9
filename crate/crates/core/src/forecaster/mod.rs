//! Hourly real-time price forecasting: the patch transformer, a
//! decomposition-linear baseline, the 7-day naive baseline, training and
//! accuracy metrics.
//!
//! Models work in "model space": each input channel is transformed (for the
//! price channels) and normalized by its own window statistics, and the
//! target is predicted in the target channel's normalized space. Forecasts
//! are mapped back to $/MWh with [`WindowSample::to_price`].

mod dlinear;
mod metrics;
mod patch_transformer;
mod train;

pub use dlinear::{moving_average, DLinear, DLinearHyper};
pub use metrics::{evaluate, AccuracyReport, DayResiduals};
pub use patch_transformer::{PatchTransformer, TransformerHyper};
pub use train::{mse, train, EpochLog, TrainConfig, TrainOutcome, TrainStep, Trainable};

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{lagged_day, DataError, MarketDataset, NormStats, Transform, WindowSample};
use crate::numerics::{Checkpoint, NumericsError, Tensor};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("patch geometry: {0}")]
    GeometryMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("non-finite forecast for {0}")]
    NonFiniteForecast(NaiveDate),
    #[error("no training windows")]
    NoTrainingWindows,
    #[error("forecast and actual days do not line up: {0}")]
    DayMismatch(String),
    #[error("naive forecast error is zero, relative MAE undefined")]
    NaiveErrorZero,
    #[error("checkpoint does not describe a {0} model")]
    WrongModelKind(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, ForecastError>;

/// Transformed-normalized space a forecast was produced in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastSpace {
    pub transform: Transform,
    pub norm: NormStats,
}

impl ForecastSpace {
    pub fn to_model(&self, price: f64) -> f64 {
        self.norm.normalize(self.transform.apply(price))
    }
}

/// Next-day hourly real-time mean price forecast in $/MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyForecast {
    pub target_day: NaiveDate,
    pub values: Vec<f64>,
    /// Present for model forecasts; used to report MSE in model space.
    pub space: Option<ForecastSpace>,
}

impl HourlyForecast {
    /// Maps model-space outputs for `sample` back to prices.
    pub fn from_model_output(sample: &WindowSample, z: &[f64]) -> Result<Self> {
        let values = sample.to_price(z);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFiniteForecast(sample.target_day));
        }
        Ok(Self {
            target_day: sample.target_day,
            values,
            space: Some(ForecastSpace {
                transform: sample.transform,
                norm: sample.norm_stats[0],
            }),
        })
    }
}

/// Anything that maps windows to next-day forecasts.
pub trait Forecaster: Sync {
    /// Model-space predictions, one row of `horizon` values per sample.
    fn predict_batch(&self, batch: &[&WindowSample]) -> Result<Vec<Vec<f64>>>;

    fn forecast(&self, sample: &WindowSample) -> Result<HourlyForecast> {
        let z = self.predict_batch(&[sample])?;
        HourlyForecast::from_model_output(sample, &z[0])
    }

    /// Forecasts for many windows, fanned out over chunks of samples.
    fn forecast_all(&self, samples: &[WindowSample]) -> Result<Vec<HourlyForecast>> {
        const CHUNK: usize = 32;
        let chunks: Vec<&[WindowSample]> = samples.chunks(CHUNK).collect();
        let parts = crate::par::map(&chunks, |chunk| -> Result<Vec<HourlyForecast>> {
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            let z = self.predict_batch(&refs)?;
            chunk
                .iter()
                .zip(&z)
                .map(|(s, z)| HourlyForecast::from_model_output(s, z))
                .collect()
        });
        let mut out = Vec::with_capacity(samples.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Splits `series` into overlapping patches: row `i` holds
/// `series[i * stride .. i * stride + patch_len]`.
pub fn patchify(series: &[f64], patch_len: usize, stride: usize) -> Result<Tensor> {
    let n = patch_count(series.len(), patch_len, stride)?;
    let mut out = Vec::with_capacity(n * patch_len);
    for i in 0..n {
        out.extend_from_slice(&series[i * stride..i * stride + patch_len]);
    }
    Ok(Tensor::matrix(n, patch_len, out))
}

/// Number of patches, requiring that the patches tile the series exactly.
pub fn patch_count(len: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 || patch_len > len || !(len - patch_len).is_multiple_of(stride) {
        return Err(ForecastError::GeometryMismatch(format!(
            "length {len}, patch {patch_len}, stride {stride}"
        )));
    }
    Ok((len - patch_len) / stride + 1)
}

/// Same-hour-last-week forecast.
pub fn naive_forecast(ds: &MarketDataset, zone: &str, target_day: NaiveDate) -> Result<HourlyForecast> {
    Ok(HourlyForecast {
        target_day,
        values: lagged_day(ds, zone, target_day, 7)?,
        space: None,
    })
}

/// Realized hourly real-time means for `days`, in the shape `evaluate` wants.
pub fn actual_days(ds: &MarketDataset, zone: &str, days: &[NaiveDate]) -> Result<Vec<(NaiveDate, Vec<f64>)>> {
    let data = ds.zone(zone)?;
    days.iter()
        .map(|&d| {
            let i = ds
                .day_index(d)
                .ok_or_else(|| ForecastError::DayMismatch(format!("{d} outside the dataset")))?;
            Ok((d, data.rt_mean_day(i).to_vec()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Transformer,
    Dlinear,
    Naive,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "transformer" => Ok(Self::Transformer),
            "dlinear" => Ok(Self::Dlinear),
            "naive" => Ok(Self::Naive),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// A trained model restored from a checkpoint.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Transformer(PatchTransformer),
    Dlinear(DLinear),
}

impl AnyModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.hyperparameters.get("kind").and_then(|k| k.as_str()) {
            Some("transformer") => Ok(Self::Transformer(PatchTransformer::from_checkpoint(ck)?)),
            Some("dlinear") => Ok(Self::Dlinear(DLinear::from_checkpoint(ck)?)),
            other => Err(ForecastError::WrongModelKind(format!("{other:?}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        match self {
            Self::Transformer(m) => m.checkpoint(),
            Self::Dlinear(m) => m.checkpoint(),
        }
    }

    pub fn transform(&self) -> Transform {
        match self {
            Self::Transformer(m) => m.transform,
            Self::Dlinear(m) => m.transform,
        }
    }

    pub fn lookback(&self) -> usize {
        match self {
            Self::Transformer(m) => m.hyper.lookback,
            Self::Dlinear(m) => m.hyper.lookback,
        }
    }
}

impl Forecaster for AnyModel {
    fn predict_batch(&self, batch: &[&WindowSample]) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Transformer(m) => m.predict_batch(batch),
            Self::Dlinear(m) => m.predict_batch(batch),
        }
    }
}

pub(crate) fn check_sample(sample: &WindowSample, channels: usize, lookback: usize, horizon: usize, transform: Transform) -> Result<()> {
    if sample.channels != channels || sample.lookback != lookback || sample.horizon() != horizon {
        return Err(ForecastError::ShapeMismatch(format!(
            "sample is {}x{} -> {}, model expects {channels}x{lookback} -> {horizon}",
            sample.channels,
            sample.lookback,
            sample.horizon()
        )));
    }
    if sample.transform != transform {
        return Err(ForecastError::ShapeMismatch(format!(
            "sample transform {:?}, model transform {transform:?}",
            sample.transform
        )));
    }
    Ok(())
}
