//! End-to-end glue: day-aligned windows, model training, day-ahead
//! forecasts, value tables and backtests over a dataset split.

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::{build_value_table, BiddingError, PolicyParams, ValueTable};
use crate::forecaster::{
    actual_days, evaluate, naive_forecast, train, AccuracyReport, AnyModel, DLinear, DLinearHyper, ForecastError,
    Forecaster, HourlyForecast, ModelKind, PatchTransformer, TrainConfig, TrainOutcome, TransformerHyper,
};
use crate::market_data::{build_windows_in, DataError, HourRange, MarketDataset, Transform, WindowConfig, WindowSample, HOURS_PER_DAY};
use crate::settlement::{run_backtest, BacktestInputs, ModeId, ModeOptions, RunReport, SettlementError};
use crate::storage::BatterySpec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("lookback of {0} hours is not a whole number of days")]
    LookbackNotDaily(usize),
    #[error("no forecastable days in {0:?}")]
    NoDays(HourRange),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Bidding(#[from] BiddingError),
    #[error(transparent)]
    Settlement(#[from] SettlementError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub transform: Transform,
    pub transformer: TransformerHyper,
    pub dlinear: DLinearHyper,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Transformer,
            transform: Transform::Raw,
            transformer: TransformerHyper::default(),
            dlinear: DLinearHyper::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn lookback(&self) -> usize {
        match self.kind {
            ModelKind::Transformer => self.transformer.lookback,
            ModelKind::Dlinear => self.dlinear.lookback,
            ModelKind::Naive => 7 * HOURS_PER_DAY,
        }
    }
}

/// A way of producing next-day forecasts.
#[derive(Debug, Clone)]
pub enum Predictor {
    Model(AnyModel),
    Naive,
}

/// Windows whose targets are whole days inside `range`.
pub fn day_windows(ds: &MarketDataset, zone: &str, lookback: usize, transform: Transform, range: HourRange) -> Result<Vec<WindowSample>> {
    if lookback == 0 || !lookback.is_multiple_of(HOURS_PER_DAY) {
        return Err(PipelineError::LookbackNotDaily(lookback));
    }
    let cfg = WindowConfig {
        lookback,
        horizon: HOURS_PER_DAY,
        stride: HOURS_PER_DAY,
        transform,
    };
    Ok(build_windows_in(ds, zone, &cfg, range)?)
}

/// Trains a fresh model on windows targeting `train_range`, early-stopping
/// on windows targeting `val_range`.
pub fn train_model(
    ds: &MarketDataset,
    zone: &str,
    train_range: HourRange,
    val_range: HourRange,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Predictor, Option<TrainOutcome>)> {
    if model.kind == ModelKind::Naive {
        return Ok((Predictor::Naive, None));
    }
    let lookback = model.lookback();
    let train_w = day_windows(ds, zone, lookback, model.transform, train_range)?;
    let val_w = if val_range.is_empty() {
        Vec::new()
    } else {
        day_windows(ds, zone, lookback, model.transform, val_range)?
    };
    let (m, outcome) = match model.kind {
        ModelKind::Transformer => {
            let mut m = PatchTransformer::new(model.transformer, model.transform, model.seed)?;
            let o = train(&mut m, &train_w, &val_w, cfg)?;
            (AnyModel::Transformer(m), o)
        }
        ModelKind::Dlinear => {
            let mut m = DLinear::new(model.dlinear, model.transform, model.seed)?;
            let o = train(&mut m, &train_w, &val_w, cfg)?;
            (AnyModel::Dlinear(m), o)
        }
        ModelKind::Naive => unreachable!("handled above"),
    };
    Ok((Predictor::Model(m), Some(outcome)))
}

/// Next-day forecasts for every forecastable day in `range`.
pub fn forecast_range(predictor: &Predictor, ds: &MarketDataset, zone: &str, range: HourRange) -> Result<Vec<HourlyForecast>> {
    let out = match predictor {
        Predictor::Model(m) => {
            let w = day_windows(ds, zone, m.lookback(), m.transform(), range)?;
            m.forecast_all(&w)?
        }
        Predictor::Naive => range
            .full_days()
            .filter(|&d| d >= 7)
            .map(|d| naive_forecast(ds, zone, ds.day(d)))
            .collect::<std::result::Result<_, _>>()?,
    };
    if out.is_empty() {
        return Err(PipelineError::NoDays(range));
    }
    Ok(out)
}

pub fn forecast_map(forecasts: &[HourlyForecast]) -> BTreeMap<NaiveDate, Vec<f64>> {
    forecasts.iter().map(|f| (f.target_day, f.values.clone())).collect()
}

/// Accuracy of `forecasts` against realized hourly means and the 7-day naive.
pub fn accuracy(ds: &MarketDataset, zone: &str, forecasts: &[HourlyForecast]) -> Result<AccuracyReport> {
    let days: Vec<NaiveDate> = forecasts.iter().map(|f| f.target_day).collect();
    let actual = actual_days(ds, zone, &days)?;
    let naive = days
        .iter()
        .map(|&d| naive_forecast(ds, zone, d))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(evaluate(forecasts, &actual, &naive)?)
}

/// Value table from the real-time prices of the given dataset days.
pub fn value_table(ds: &MarketDataset, zone: &str, days: Range<usize>, spec: &BatterySpec, params: &PolicyParams) -> Result<ValueTable> {
    let data = ds.zone(zone)?;
    let prices: Vec<Vec<f64>> = days.clone().map(|d| data.rt_day(d).to_vec()).collect();
    let span = (!days.is_empty()).then(|| (ds.day(days.start), ds.day(days.end - 1)));
    Ok(build_value_table(&prices, spec, params, span)?)
}

/// Everything a backtest needs beyond the dataset.
pub struct BacktestPlan<'a> {
    pub zone: &'a str,
    pub days: Range<usize>,
    pub modes: &'a [ModeId],
    pub forecasts: Option<&'a BTreeMap<NaiveDate, Vec<f64>>>,
    pub table: Option<&'a ValueTable>,
    pub spec: BatterySpec,
    pub params: PolicyParams,
    pub options: ModeOptions,
}

pub fn backtest(ds: &MarketDataset, plan: &BacktestPlan<'_>) -> Result<Vec<RunReport>> {
    let inputs = BacktestInputs {
        ds,
        zone: plan.zone,
        days: plan.days.clone().collect(),
        forecasts: plan.forecasts,
        table: plan.table,
        spec: plan.spec,
        params: plan.params,
        options: plan.options,
        e0: 0.0,
    };
    Ok(run_backtest(&inputs, plan.modes)?)
}
