//! Seeded synthetic scenarios used by the acceptance suite and the CLI.
//!
//! * `acceptance`: day-ahead prices are the smoothed expectation of real-time
//!   prices (template + day-level AR(1) shock + expected spike premium + small
//!   noise); real-time prices add interval noise and exponential upward spikes.
//! * `low_noise`: the same market with light noise and no spikes.
//! * `sinusoid`: noise-free daily sinusoid plus a 60-hour sinusoid, with no
//!   weekend effect. The second component keeps the 7-day naive forecast from
//!   being exact.

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::market_data::{split_train_val_test, DataSplit, MarketDataset, Result, SynthParams, HOURS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub params: SynthParams,
    /// History-only days before the first training target.
    pub warmup_days: usize,
    pub train_days: usize,
    pub val_days: usize,
    pub test_days: usize,
}

impl Scenario {
    pub fn acceptance() -> Self {
        Self {
            name: "acceptance".into(),
            seed: 20240601,
            params: SynthParams {
                base_price: 40.0,
                daily_amplitude: 15.0,
                weekend_discount: 6.0,
                level_std: 4.0,
                level_persistence: 0.7,
                da_noise_std: 1.0,
                rt_noise_std: 8.0,
                spike_prob: 0.01,
                spike_mean: 120.0,
                negative_prob: 0.002,
                negative_scale: 20.0,
                load_noise_std: 150.0,
                ..SynthParams::default()
            },
            warmup_days: 14,
            train_days: 60,
            val_days: 14,
            test_days: 60,
        }
    }

    pub fn low_noise() -> Self {
        Self {
            name: "low_noise".into(),
            seed: 7,
            params: SynthParams {
                base_price: 40.0,
                daily_amplitude: 15.0,
                weekend_discount: 4.0,
                level_std: 1.0,
                level_persistence: 0.7,
                da_noise_std: 0.5,
                rt_noise_std: 2.0,
                ..SynthParams::default()
            },
            warmup_days: 0,
            train_days: 60,
            val_days: 0,
            test_days: 200,
        }
    }

    pub fn sinusoid() -> Self {
        Self {
            name: "sinusoid".into(),
            seed: 0,
            params: SynthParams {
                base_price: 40.0,
                daily_amplitude: 12.0,
                weekend_discount: 0.0,
                extra_period_hours: 60.0,
                extra_amplitude: 8.0,
                ..SynthParams::default()
            },
            warmup_days: 14,
            train_days: 30,
            val_days: 0,
            test_days: 7,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "acceptance" => Some(Self::acceptance()),
            "low_noise" => Some(Self::low_noise()),
            "sinusoid" => Some(Self::sinusoid()),
            _ => None,
        }
    }

    pub fn total_days(&self) -> usize {
        self.warmup_days + self.train_days + self.val_days + self.test_days
    }

    pub fn dataset(&self) -> MarketDataset {
        crate::market_data::synth_generate(self.seed, self.total_days(), &self.params)
    }

    pub fn val_start(&self) -> NaiveDate {
        self.params.start_date + Duration::days((self.warmup_days + self.train_days) as i64)
    }

    pub fn test_start(&self) -> NaiveDate {
        self.val_start() + Duration::days(self.val_days as i64)
    }

    /// Train covers warmup and training days; an empty validation part is
    /// represented by an empty range at the test boundary.
    pub fn split(&self, ds: &MarketDataset) -> Result<DataSplit> {
        if self.val_days > 0 {
            return split_train_val_test(ds, self.val_start(), self.test_start());
        }
        let cut = (self.warmup_days + self.train_days) * HOURS_PER_DAY;
        let parts = crate::market_data::split_dataset(ds, &[self.test_start().and_time(chrono::NaiveTime::MIN)])?;
        debug_assert_eq!(parts[0].end, cut);
        Ok(DataSplit {
            train: parts[0],
            val: crate::market_data::HourRange { start: cut, end: cut },
            test: parts[1],
        })
    }
}
