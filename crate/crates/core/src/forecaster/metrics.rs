use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ForecastError, HourlyForecast, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResiduals {
    pub day: NaiveDate,
    /// `actual - forecast` per hour, $/MWh.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Mean squared error in model space; `None` when the forecasts carry
    /// no model space (e.g. the naive baseline).
    pub mse: Option<f64>,
    /// Mean absolute error, $/MWh.
    pub mae: f64,
    /// Total absolute error relative to the naive forecast's.
    pub rmae: f64,
    pub days: Vec<DayResiduals>,
}

fn aligned(forecasts: &[HourlyForecast], actual: &[(NaiveDate, Vec<f64>)], what: &str) -> Result<()> {
    if forecasts.len() != actual.len() {
        return Err(ForecastError::DayMismatch(format!(
            "{} {what} days vs {} actual days",
            forecasts.len(),
            actual.len()
        )));
    }
    for (f, (d, a)) in forecasts.iter().zip(actual) {
        if f.target_day != *d || f.values.len() != a.len() {
            return Err(ForecastError::DayMismatch(format!("{what} {} vs actual {d}", f.target_day)));
        }
    }
    Ok(())
}

/// Scores `forecasts` against realized hourly means, relative to `naive`.
pub fn evaluate(
    forecasts: &[HourlyForecast],
    actual: &[(NaiveDate, Vec<f64>)],
    naive: &[HourlyForecast],
) -> Result<AccuracyReport> {
    aligned(forecasts, actual, "forecast")?;
    aligned(naive, actual, "naive")?;
    if actual.is_empty() {
        return Err(ForecastError::DayMismatch("no days".into()));
    }
    let mut abs_err = 0.0;
    let mut naive_err = 0.0;
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut have_space = true;
    let mut days = Vec::with_capacity(actual.len());
    for ((f, n), (day, a)) in forecasts.iter().zip(naive).zip(actual) {
        let residuals: Vec<f64> = a.iter().zip(&f.values).map(|(x, y)| x - y).collect();
        abs_err += residuals.iter().map(|r| r.abs()).sum::<f64>();
        naive_err += a.iter().zip(&n.values).map(|(x, y)| (x - y).abs()).sum::<f64>();
        match f.space {
            Some(space) => {
                sq += a
                    .iter()
                    .zip(&f.values)
                    .map(|(&x, &y)| (space.to_model(x) - space.to_model(y)).powi(2))
                    .sum::<f64>()
            }
            None => have_space = false,
        }
        count += a.len();
        days.push(DayResiduals { day: *day, residuals });
    }
    if naive_err == 0.0 {
        return Err(ForecastError::NaiveErrorZero);
    }
    Ok(AccuracyReport {
        mse: have_space.then(|| sq / count as f64),
        mae: abs_err / count as f64,
        rmae: abs_err / naive_err,
        days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, d).unwrap()
    }

    fn fc(d: u32, v: Vec<f64>) -> HourlyForecast {
        HourlyForecast {
            target_day: day(d),
            values: v,
            space: None,
        }
    }

    #[test]
    fn toy_mae() {
        let actual = vec![(day(1), vec![1.0, 2.0])];
        let r = evaluate(&[fc(1, vec![0.0, 0.0])], &actual, &[fc(1, vec![0.0, 0.0])]).unwrap();
        assert_eq!(r.mae, 1.5);
        assert_eq!(r.rmae, 1.0);
        assert_eq!(r.mse, None);
        assert_eq!(r.days[0].residuals, vec![1.0, 2.0]);
    }

    #[test]
    fn perfect_and_naive_cases() {
        let actual = vec![(day(1), vec![3.0, -1.0]), (day(2), vec![5.0, 7.0])];
        let naive = vec![fc(1, vec![2.0, 2.0]), fc(2, vec![1.0, 1.0])];
        let perfect: Vec<HourlyForecast> = actual
            .iter()
            .map(|(d, v)| HourlyForecast {
                target_day: *d,
                values: v.clone(),
                space: Some(super::super::ForecastSpace {
                    transform: crate::market_data::Transform::SignedLog,
                    norm: crate::market_data::NormStats { mean: 0.3, std: 2.0 },
                }),
            })
            .collect();
        let r = evaluate(&perfect, &actual, &naive).unwrap();
        assert_eq!((r.mse, r.mae, r.rmae), (Some(0.0), 0.0, 0.0));
        assert_eq!(evaluate(&naive, &actual, &naive).unwrap().rmae, 1.0);
        assert!(matches!(evaluate(&naive, &actual, &perfect), Err(ForecastError::NaiveErrorZero)));
        assert!(matches!(
            evaluate(&naive[..1], &actual, &naive),
            Err(ForecastError::DayMismatch(_))
        ));
    }
}
