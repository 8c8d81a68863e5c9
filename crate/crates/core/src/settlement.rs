//! Two-settlement accounting, participation modes and run-level risk stats.
//!
//! A day is settled as
//! `Σ_t λ_t (p_t^D − b_t^D) + Σ_s π_s (p_s^R − b_s^R − p_τ^D/S + b_τ^D/S) − c Σ_s p_s^R`,
//! where `τ` is the hour containing interval `s`: day-ahead energy is paid at
//! the day-ahead price and any physical deviation from it is re-settled at
//! the real-time price. Virtual positions enter as day-ahead energy with no
//! physical counterpart.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::{
    da_clear, da_self_schedule, perfect_foresight_dispatch, rt_policy_day, vb_positions, BiddingError, DaySchedule, PolicyParams,
    RtDispatch, ValueTable, VbDirection, VbMode, VbPosition,
};
use crate::market_data::{MarketDataset, HOURS_PER_DAY};
use crate::storage::{BatterySpec, Scale};

#[derive(Debug, Error)]
pub enum SettlementError {
    #[error("misaligned inputs: {0}")]
    Alignment(String),
    #[error("no days to aggregate")]
    EmptyRun,
    #[error("mode {mode} needs a price forecast for {day}")]
    MissingForecast { mode: ModeId, day: NaiveDate },
    #[error("mode {0} needs a value table")]
    MissingValueTable(ModeId),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error(transparent)]
    Bidding(#[from] BiddingError),
    #[error(transparent)]
    Data(#[from] crate::market_data::DataError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SettlementError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Market {
    /// Real-time only.
    Rt,
    /// Day-ahead only: an hourly self-schedule planned on the price
    /// expectation, followed physically.
    Da,
    /// Day-ahead positions plus independent real-time dispatch.
    DaRt,
    /// Virtual bids only.
    Vb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    /// Forecast prices (and the value-table policy in real time).
    F,
    /// Realized prices.
    Pf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeId {
    pub market: Market,
    pub source: Source,
}

impl ModeId {
    pub const RT_F: ModeId = ModeId::new(Market::Rt, Source::F);
    pub const RT_PF: ModeId = ModeId::new(Market::Rt, Source::Pf);

    pub const fn new(market: Market, source: Source) -> Self {
        Self { market, source }
    }

    pub fn all() -> Vec<ModeId> {
        let mut out = Vec::new();
        for market in [Market::Rt, Market::Da, Market::DaRt, Market::Vb] {
            for source in [Source::F, Source::Pf] {
                out.push(ModeId::new(market, source));
            }
        }
        out
    }

    /// Whether the mode reads hourly price forecasts.
    pub fn needs_forecast(&self) -> bool {
        self.source == Source::F && self.market != Market::Rt
    }

    /// Whether the mode runs the value-table policy.
    pub fn needs_value_table(&self) -> bool {
        self.source == Source::F && matches!(self.market, Market::Rt | Market::DaRt)
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.market {
            Market::Rt => "RT",
            Market::Da => "DA",
            Market::DaRt => "DA+RT",
            Market::Vb => "VB",
        };
        let s = match self.source {
            Source::F => "F",
            Source::Pf => "PF",
        };
        write!(f, "{m}-{s}")
    }
}

impl FromStr for ModeId {
    type Err = SettlementError;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let (m, src) = up.rsplit_once('-').ok_or_else(|| SettlementError::UnknownMode(s.to_string()))?;
        let market = match m {
            "RT" => Market::Rt,
            "DA" => Market::Da,
            "DA+RT" | "DA_RT" | "DART" => Market::DaRt,
            "VB" => Market::Vb,
            _ => return Err(SettlementError::UnknownMode(s.to_string())),
        };
        let source = match src {
            "F" => Source::F,
            "PF" => Source::Pf,
            _ => return Err(SettlementError::UnknownMode(s.to_string())),
        };
        Ok(ModeId::new(market, source))
    }
}

impl Serialize for ModeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub date: NaiveDate,
    pub mode: ModeId,
    pub da_revenue: f64,
    pub rt_settlement: f64,
    pub discharge_cost: f64,
    pub total: f64,
    /// Physical SoC at the end of the day.
    pub soc_end: f64,
    /// Part of the total earned by virtual positions.
    pub vb_profit: f64,
}

fn check_lengths(lambda: &[f64], pi: &[f64], da_net: &[f64], disp: &RtDispatch) -> Result<usize> {
    let hours = lambda.len();
    if hours == 0 || da_net.len() != hours || !pi.len().is_multiple_of(hours) {
        return Err(SettlementError::Alignment(format!(
            "{} DA prices, {} RT prices, {} DA quantities",
            hours,
            pi.len(),
            da_net.len()
        )));
    }
    if disp.p_rt.len() != pi.len() || disp.b_rt.len() != pi.len() {
        return Err(SettlementError::Alignment(format!(
            "{} RT prices, dispatch of {}",
            pi.len(),
            disp.p_rt.len()
        )));
    }
    Ok(pi.len() / hours)
}

/// Money flows of one day from net day-ahead energy per hour
/// (`p^D − b^D`, positive when selling) and the physical dispatch.
pub fn settle_net(
    date: NaiveDate,
    mode: ModeId,
    lambda: &[f64],
    pi: &[f64],
    da_net: &[f64],
    disp: &RtDispatch,
    spec: &BatterySpec,
) -> Result<DayResult> {
    let per_hour = check_lengths(lambda, pi, da_net, disp)?;
    let da_revenue: f64 = lambda.iter().zip(da_net).map(|(l, q)| l * q).sum();
    let mut rt_settlement = 0.0;
    let mut discharged = 0.0;
    for (s, &price) in pi.iter().enumerate() {
        let hour = s / per_hour;
        let deviation = disp.p_rt[s] - disp.b_rt[s] - da_net[hour] / per_hour as f64;
        rt_settlement += price * deviation;
        discharged += disp.p_rt[s];
    }
    let discharge_cost = spec.discharge_cost * discharged;
    Ok(DayResult {
        date,
        mode,
        da_revenue,
        rt_settlement,
        discharge_cost,
        total: da_revenue + rt_settlement - discharge_cost,
        soc_end: disp.soc.last().copied().unwrap_or(f64::NAN),
        vb_profit: 0.0,
    })
}

/// Settles a day-ahead schedule and a physical dispatch.
pub fn settle_day(
    date: NaiveDate,
    mode: ModeId,
    lambda: &[f64],
    pi: &[f64],
    sched: &DaySchedule,
    disp: &RtDispatch,
    spec: &BatterySpec,
) -> Result<DayResult> {
    let net: Vec<f64> = sched.p_da.iter().zip(&sched.b_da).map(|(p, b)| p - b).collect();
    settle_net(date, mode, lambda, pi, &net, disp, spec)
}

/// Gap between the settlement total and its split into a day-ahead spread
/// term plus a stand-alone real-time term:
/// `Σ_t (λ_t − π̄_t)(p_t^D − b_t^D) + Σ_s π_s (p_s^R − b_s^R) − c Σ_s p_s^R`,
/// with `π̄_t` the realized hourly mean.
pub fn decomposition_residual(lambda: &[f64], pi: &[f64], da_net: &[f64], disp: &RtDispatch, spec: &BatterySpec) -> Result<f64> {
    let day = NaiveDate::MIN;
    let settled = settle_net(day, ModeId::RT_F, lambda, pi, da_net, disp, spec)?;
    let per_hour = pi.len() / lambda.len();
    let mut split = 0.0;
    for (t, (&l, &q)) in lambda.iter().zip(da_net).enumerate() {
        let mean = pi[t * per_hour..(t + 1) * per_hour].iter().sum::<f64>() / per_hour as f64;
        split += (l - mean) * q;
    }
    for ((&price, &p), &b) in pi.iter().zip(&disp.p_rt).zip(&disp.b_rt) {
        split += price * (p - b) - spec.discharge_cost * p;
    }
    Ok((settled.total - split).abs())
}

/// Net hourly day-ahead energy of virtual positions (supply sells).
pub fn vb_net(positions: &[VbPosition]) -> Vec<f64> {
    positions
        .iter()
        .map(|v| match v.direction {
            VbDirection::Supply => v.quantity,
            VbDirection::Demand => -v.quantity,
            VbDirection::None => 0.0,
        })
        .collect()
}

/// Physical dispatch that delivers a day-ahead schedule evenly within each hour.
pub fn follow_schedule(sched: &DaySchedule, e0: f64, per_hour: usize, spec: &BatterySpec) -> RtDispatch {
    let n = sched.p_da.len() * per_hour;
    let mut out = RtDispatch {
        p_rt: Vec::with_capacity(n),
        b_rt: Vec::with_capacity(n),
        soc: Vec::with_capacity(n),
    };
    let mut e = e0;
    for t in 0..sched.p_da.len() {
        let p = sched.p_da[t] / per_hour as f64;
        let b = sched.b_da[t] / per_hour as f64;
        for k in 0..per_hour {
            e += spec.soc_delta(p, b);
            // Land exactly on the scheduled hourly SoC at the end of the hour.
            if k + 1 == per_hour {
                e = sched.soc[t];
            }
            out.p_rt.push(p);
            out.b_rt.push(b);
            out.soc.push(e);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeOptions {
    /// Stack perfect-foresight virtual bids on DA+RT-PF.
    pub include_vb_in_joint_pf: bool,
    /// Stack forecast virtual bids on DA+RT-F.
    pub include_vb_in_joint_f: bool,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            include_vb_in_joint_pf: true,
            include_vb_in_joint_f: false,
        }
    }
}

/// Inputs shared by all modes of a backtest.
pub struct BacktestInputs<'a> {
    pub ds: &'a MarketDataset,
    pub zone: &'a str,
    /// Dataset day indices, consecutive.
    pub days: Vec<usize>,
    /// Forecast hourly real-time means by target day.
    pub forecasts: Option<&'a BTreeMap<NaiveDate, Vec<f64>>>,
    pub table: Option<&'a ValueTable>,
    pub spec: BatterySpec,
    pub params: PolicyParams,
    pub options: ModeOptions,
    /// SoC at the start of the first day.
    pub e0: f64,
}

/// Runs one mode over all backtest days, carrying SoC from day to day.
pub fn run_mode(inputs: &BacktestInputs<'_>, mode: ModeId) -> Result<Vec<DayResult>> {
    let zone = inputs.ds.zone(inputs.zone)?;
    let spec = &inputs.spec;
    let per_hour = spec.intervals_per_hour;
    if mode.needs_value_table() && inputs.table.is_none() {
        return Err(SettlementError::MissingValueTable(mode));
    }
    let mut e_phys = inputs.e0;
    let mut e_da = inputs.e0;
    let mut out = Vec::with_capacity(inputs.days.len());
    for &d in &inputs.days {
        let date = inputs.ds.day(d);
        let lambda = zone.da_day(d);
        let pi = zone.rt_day(d);
        let pi_bar = zone.rt_mean_day(d);
        if lambda.len() != HOURS_PER_DAY || pi.len() != HOURS_PER_DAY * per_hour {
            return Err(SettlementError::Alignment(format!(
                "day {date}: {} DA and {} RT prices for {per_hour} intervals per hour",
                lambda.len(),
                pi.len()
            )));
        }
        let forecast = || -> Result<&[f64]> {
            inputs
                .forecasts
                .and_then(|f| f.get(&date))
                .map(Vec::as_slice)
                .ok_or(SettlementError::MissingForecast { mode, day: date })
        };
        let da_prices = || -> Result<&[f64]> {
            match mode.source {
                Source::F => forecast(),
                Source::Pf => Ok(pi_bar),
            }
        };
        let rt_dispatch = |e: f64| -> Result<RtDispatch> {
            match mode.source {
                Source::F => Ok(rt_policy_day(pi, e, inputs.table.expect("checked above"), &inputs.params)?),
                Source::Pf => Ok(RtDispatch::from_dispatch(perfect_foresight_dispatch(
                    pi,
                    e,
                    spec,
                    Scale::RealTime,
                    &inputs.params,
                )?)),
            }
        };
        let vb = |m: VbMode| -> Result<Vec<VbPosition>> {
            let hat = match m {
                VbMode::Forecast => forecast()?,
                VbMode::Perfect => pi_bar,
            };
            Ok(vb_positions(hat, lambda, pi_bar, inputs.params.vb_q_max, m)?)
        };
        let vb_mode = match mode.source {
            Source::F => VbMode::Forecast,
            Source::Pf => VbMode::Perfect,
        };

        let (sched, disp, vb) = match mode.market {
            Market::Rt => (DaySchedule::empty(e_da), rt_dispatch(e_phys)?, None),
            Market::Da => {
                let sched = da_self_schedule(da_prices()?, e_phys, spec, &inputs.params)?;
                let disp = follow_schedule(&sched, e_phys, per_hour, spec);
                (sched, disp, None)
            }
            Market::DaRt => {
                let sched = da_clear(da_prices()?, lambda, e_da, spec, &inputs.params)?;
                let stack = match mode.source {
                    Source::F => inputs.options.include_vb_in_joint_f,
                    Source::Pf => inputs.options.include_vb_in_joint_pf,
                };
                let vb = if stack { Some(vb(vb_mode)?) } else { None };
                (sched, rt_dispatch(e_phys)?, vb)
            }
            Market::Vb => (
                DaySchedule::empty(e_da),
                RtDispatch::idle(pi.len(), e_phys),
                Some(vb(vb_mode)?),
            ),
        };

        let mut net: Vec<f64> = sched.p_da.iter().zip(&sched.b_da).map(|(p, b)| p - b).collect();
        let mut vb_profit = 0.0;
        if let Some(positions) = &vb {
            for (n, v) in net.iter_mut().zip(vb_net(positions)) {
                *n += v;
            }
            vb_profit = positions.iter().map(|p| p.profit).sum();
        }
        let mut result = settle_net(date, mode, lambda, pi, &net, &disp, spec)?;
        result.vb_profit = vb_profit;
        e_phys = disp.end_soc(e_phys);
        e_da = match mode.market {
            Market::Da => e_phys,
            _ => sched.end_soc(e_da),
        };
        out.push(result);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: ModeId,
    pub days: Vec<DayResult>,
    /// Running sum of daily totals.
    pub cumulative: Vec<f64>,
    pub negative_days: usize,
    pub total_profit: f64,
    /// `(total − RT-only total) / RT-only total`; `None` when the RT-only
    /// total is not positive or no baseline was given.
    pub ipm: Option<f64>,
}

/// Folds daily results into run statistics.
pub fn aggregate(days: Vec<DayResult>, baseline_rt_total: Option<f64>) -> Result<RunReport> {
    let mode = days.first().ok_or(SettlementError::EmptyRun)?.mode;
    let mut cumulative = Vec::with_capacity(days.len());
    let mut acc = 0.0;
    for d in &days {
        acc += d.total;
        cumulative.push(acc);
    }
    let negative_days = days.iter().filter(|d| d.total < 0.0).count();
    let ipm = baseline_rt_total.filter(|&b| b > 0.0).map(|b| (acc - b) / b);
    Ok(RunReport {
        mode,
        days,
        cumulative,
        negative_days,
        total_profit: acc,
        ipm,
    })
}

/// Runs every mode (in parallel) and reports IPM against RT-F when it is
/// among the modes.
pub fn run_backtest(inputs: &BacktestInputs<'_>, modes: &[ModeId]) -> Result<Vec<RunReport>> {
    let runs = crate::par::map(modes, |&m| run_mode(inputs, m));
    let runs: Vec<Vec<DayResult>> = runs.into_iter().collect::<Result<_>>()?;
    let baseline = modes
        .iter()
        .position(|&m| m == ModeId::RT_F)
        .map(|i| runs[i].iter().map(|d| d.total).sum::<f64>());
    runs.into_iter().map(|days| aggregate(days, baseline)).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SettlementError + '_ {
    move |source| SettlementError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `report.json`, `daily.csv`, `cumulative.csv` and `cumulative.gp`
/// into `dir`. `meta` is embedded in the JSON; `preamble` lines are written
/// as `#` comments at the top of each CSV and the plot script.
pub fn write_reports(dir: &Path, reports: &[RunReport], meta: &serde_json::Value, preamble: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let header: String = preamble.iter().map(|l| format!("# {l}\n")).collect();

    let path = dir.join("report.json");
    let json = serde_json::json!({ "meta": meta, "reports": reports });
    std::fs::write(&path, serde_json::to_string_pretty(&json).expect("report serializes") + "\n").map_err(io_err(&path))?;

    let path = dir.join("daily.csv");
    let mut s = header.clone();
    s.push_str("date,mode,da_revenue,rt_settlement,discharge_cost,total,soc_end\n");
    for r in reports {
        for d in &r.days {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                d.date, d.mode, d.da_revenue, d.rt_settlement, d.discharge_cost, d.total, d.soc_end
            ));
        }
    }
    std::fs::write(&path, s).map_err(io_err(&path))?;

    let path = dir.join("cumulative.csv");
    let mut s = header.clone();
    s.push_str("date");
    for r in reports {
        s.push_str(&format!(",{}", r.mode));
    }
    s.push('\n');
    let n = reports.iter().map(|r| r.days.len()).max().unwrap_or(0);
    for i in 0..n {
        let date = reports.iter().find_map(|r| r.days.get(i).map(|d| d.date)).expect("some report has day i");
        s.push_str(&date.to_string());
        for r in reports {
            match r.cumulative.get(i) {
                Some(v) => s.push_str(&format!(",{v}")),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    std::fs::write(&path, s).map_err(io_err(&path))?;

    let path = dir.join("cumulative.gp");
    let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
    let mut gp = header;
    gp.push_str(
        "set datafile separator ','\nset xdata time\nset timefmt '%Y-%m-%d'\nset format x '%m/%d'\n\
         set key left top\nset ylabel 'Cumulative profit ($)'\nset terminal pngcairo size 1000,600\n\
         set output 'cumulative.png'\n",
    );
    let plots: Vec<String> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| format!("'cumulative.csv' using 1:{} with lines title '{}'", i + 2, r.mode))
        .collect();
    gp.push_str(&format!("plot {}\n", plots.join(", \\\n     ")));
    f.write_all(gp.as_bytes()).map_err(io_err(&path))?;
    Ok(())
}
