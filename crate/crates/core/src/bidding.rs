//! Decision making: the perfect-foresight dispatch oracle, the value-table
//! real-time policy, day-ahead clearing at forecast prices and virtual bids.
//!
//! Every optimizer here runs on a uniform state-of-charge grid with `K + 1`
//! levels. One-step moves go from the current SoC to a grid level reachable
//! within the step's power limit; staying put is always allowed. Ties are
//! broken toward staying put.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::storage::{BatterySpec, Scale, FEASIBILITY_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiddingError {
    #[error("initial state of charge {0} outside [0, capacity]")]
    InfeasibleStart(f64),
    #[error("value table needs at least one training day")]
    EmptyTrainingSet,
    #[error("grid needs at least 2 intervals, got {0}")]
    InvalidGrid(usize),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite price {value} at index {index}")]
    NonFinitePrice { index: usize, value: f64 },
    #[error("value table {kind} violated by {magnitude} at row {row}, level {level}")]
    ValueTableInvariant {
        kind: &'static str,
        row: usize,
        level: usize,
        magnitude: f64,
    },
}

pub type Result<T> = std::result::Result<T, BiddingError>;

/// Policy and oracle knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    /// Number of grid intervals; the grid has `grid_k + 1` levels.
    pub grid_k: usize,
    /// Virtual bid quantity per hour (MWh).
    pub vb_q_max: f64,
    /// Improvements at or below this margin do not displace the null action.
    pub tie_tol: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            grid_k: 100,
            vb_q_max: 0.5,
            tie_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocGrid {
    pub k: usize,
    pub e_max: f64,
}

impl SocGrid {
    pub fn new(k: usize, e_max: f64) -> Result<Self> {
        if k < 2 {
            return Err(BiddingError::InvalidGrid(k));
        }
        Ok(Self { k, e_max })
    }

    pub fn step(&self) -> f64 {
        self.e_max / self.k as f64
    }

    pub fn level(&self, i: usize) -> f64 {
        if i == self.k {
            self.e_max
        } else {
            i as f64 * self.step()
        }
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..=self.k).map(|i| self.level(i)).collect()
    }

    /// Index of the grid level equal to `e` (within tolerance).
    pub fn index_of(&self, e: f64) -> Option<usize> {
        let x = e / self.step();
        let i = x.round();
        ((x - i).abs() * self.step() <= FEASIBILITY_TOL && i >= 0.0 && i <= self.k as f64).then_some(i as usize)
    }

    /// Linear interpolation of a per-level row at `e`.
    pub fn interp(&self, row: &[f64], e: f64) -> f64 {
        let x = (e / self.step()).clamp(0.0, self.k as f64);
        let i = (x.floor() as usize).min(self.k - 1);
        let w = x - i as f64;
        if w == 0.0 {
            row[i]
        } else if w == 1.0 {
            row[i + 1]
        } else {
            row[i] * (1.0 - w) + row[i + 1] * w
        }
    }
}

/// One-step move economics.
#[derive(Debug, Clone, Copy)]
struct StepModel {
    eta: f64,
    limit: f64,
    cost: f64,
    /// Forbid discharging at negative prices.
    no_negative_discharge: bool,
}

impl StepModel {
    fn real_time(spec: &BatterySpec) -> Self {
        Self {
            eta: spec.eta,
            limit: spec.step_limit(Scale::RealTime),
            cost: spec.discharge_cost,
            no_negative_discharge: true,
        }
    }

    /// Day-ahead clearing: hourly limits, no discharge cost, no price sign rule.
    fn day_ahead(spec: &BatterySpec) -> Self {
        Self {
            eta: spec.eta,
            limit: spec.step_limit(Scale::Hourly),
            cost: 0.0,
            no_negative_discharge: false,
        }
    }

    fn for_scale(spec: &BatterySpec, scale: Scale) -> Self {
        match scale {
            Scale::RealTime => Self::real_time(spec),
            Scale::Hourly => Self {
                limit: spec.step_limit(Scale::Hourly),
                ..Self::real_time(spec)
            },
        }
    }

    /// `(p, b)` taking the SoC from `from` to `to`, if feasible at `price`.
    fn action(&self, from: f64, to: f64, price: f64) -> Option<(f64, f64)> {
        let delta = to - from;
        if delta > 0.0 {
            let b = delta / self.eta;
            (b <= self.limit + FEASIBILITY_TOL).then_some((0.0, b.min(self.limit)))
        } else if delta < 0.0 {
            if self.no_negative_discharge && price < 0.0 {
                return None;
            }
            let p = -delta * self.eta;
            (p <= self.limit + FEASIBILITY_TOL).then_some((p.min(self.limit), 0.0))
        } else {
            Some((0.0, 0.0))
        }
    }

    fn reward(&self, price: f64, (p, b): (f64, f64)) -> f64 {
        price * (p - b) - self.cost * p
    }
}

/// Exact backward induction over an explicit, sorted state list.
/// Returns `values[s][i]` (rows `0..=n`) and the chosen next-state index.
fn backward_induction(states: &[f64], prices: &[f64], m: &StepModel, tie_tol: f64) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n = prices.len();
    let ns = states.len();
    let mut values = vec![vec![0.0; ns]; n + 1];
    let mut choice = vec![vec![0usize; ns]; n];
    for s in (0..n).rev() {
        let (head, tail) = values.split_at_mut(s + 1);
        let next = &tail[0];
        let row = &mut head[s];
        let price = prices[s];
        for i in 0..ns {
            let mut best = next[i];
            let mut arg = i;
            // Reachable levels form a contiguous band around i.
            let mut down = 0;
            while down < i && m.action(states[i], states[i - down - 1], price).is_some() {
                down += 1;
            }
            let mut up = 0;
            while i + up + 1 < ns && m.action(states[i], states[i + up + 1], price).is_some() {
                up += 1;
            }
            // Widen outward so ties favour smaller moves.
            for dist in 1..=down.max(up) {
                let lower = (dist <= down).then(|| i - dist);
                let upper = (dist <= up).then_some(i + dist);
                for j in [lower, upper].into_iter().flatten() {
                    let a = m.action(states[i], states[j], price).expect("inside the band");
                    let v = m.reward(price, a) + next[j];
                    if v > best + tie_tol {
                        best = v;
                        arg = j;
                    }
                }
            }
            row[i] = best;
            choice[s][i] = arg;
        }
    }
    (values, choice)
}

/// Optimal dispatch for a known price path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p: Vec<f64>,
    pub b: Vec<f64>,
    pub soc: Vec<f64>,
    pub profit: f64,
}

fn check_prices(prices: &[f64]) -> Result<()> {
    for (index, &value) in prices.iter().enumerate() {
        if !value.is_finite() {
            return Err(BiddingError::NonFinitePrice { index, value });
        }
    }
    Ok(())
}

fn check_start(e0: f64, spec: &BatterySpec) -> Result<()> {
    if !(e0 >= -FEASIBILITY_TOL && e0 <= spec.e_mwh + FEASIBILITY_TOL) {
        return Err(BiddingError::InfeasibleStart(e0));
    }
    Ok(())
}

fn grid_dispatch(prices: &[f64], e0: f64, spec: &BatterySpec, grid: &SocGrid, m: &StepModel, tie_tol: f64) -> Result<Dispatch> {
    check_prices(prices)?;
    check_start(e0, spec)?;
    let mut states = grid.levels();
    let start = match grid.index_of(e0) {
        Some(i) => i,
        None => {
            // Off-grid start: add it as an extra state.
            let pos = states.partition_point(|&x| x < e0);
            states.insert(pos, e0);
            pos
        }
    };
    let (values, choice) = backward_induction(&states, prices, m, tie_tol);
    let mut out = Dispatch {
        p: Vec::with_capacity(prices.len()),
        b: Vec::with_capacity(prices.len()),
        soc: Vec::with_capacity(prices.len()),
        profit: 0.0,
    };
    let mut i = start;
    for (s, &price) in prices.iter().enumerate() {
        let j = choice[s][i];
        let (p, b) = m.action(states[i], states[j], price).expect("chosen move is feasible");
        out.profit += m.reward(price, (p, b));
        out.p.push(p);
        out.b.push(b);
        out.soc.push(states[j]);
        i = j;
    }
    debug_assert!((out.profit - values[0][start]).abs() <= 1e-6 * (1.0 + out.profit.abs()));
    Ok(out)
}

/// Profit-maximizing dispatch with full knowledge of `prices`: maximizes
/// `Σ π(p − b) − c Σ p` under the power, capacity and price-sign limits.
pub fn perfect_foresight_dispatch(
    prices: &[f64],
    e0: f64,
    spec: &BatterySpec,
    scale: Scale,
    params: &PolicyParams,
) -> Result<Dispatch> {
    let grid = SocGrid::new(params.grid_k, spec.e_mwh)?;
    grid_dispatch(prices, e0, spec, &grid, &StepModel::for_scale(spec, scale), params.tie_tol)
}

/// Time-of-day values of stored energy, averaged over training days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub grid: SocGrid,
    /// `values[s][k]`: value ($) of holding grid level `k` at the start of
    /// interval `s`; the last row is the end of the day and is zero.
    pub values: Vec<Vec<f64>>,
    pub spec: BatterySpec,
    pub training_days: usize,
    pub training_span: Option<(NaiveDate, NaiveDate)>,
    /// Entries where more stored energy is worth strictly less. This happens
    /// legitimately when negative prices pay for charging.
    pub monotonicity_violations: usize,
}

impl ValueTable {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s]
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("value table serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Tolerance below which invariant violations are treated as float noise
/// and projected away.
const PROJECTION_TOL: f64 = 1e-9;

/// Solves every training day by backward induction and averages the value
/// rows. Concavity in SoC is enforced: violations up to 1e-9 are clipped,
/// larger ones are errors. Decreasing values in SoC are tolerated only when
/// the training prices include negative values.
pub fn build_value_table(
    training_days: &[Vec<f64>],
    spec: &BatterySpec,
    params: &PolicyParams,
    training_span: Option<(NaiveDate, NaiveDate)>,
) -> Result<ValueTable> {
    if training_days.is_empty() {
        return Err(BiddingError::EmptyTrainingSet);
    }
    let grid = SocGrid::new(params.grid_k, spec.e_mwh)?;
    let n = spec.steps_per_day(Scale::RealTime);
    for d in training_days {
        if d.len() != n {
            return Err(BiddingError::LengthMismatch {
                expected: n,
                got: d.len(),
            });
        }
        check_prices(d)?;
    }
    let states = grid.levels();
    let m = StepModel::real_time(spec);
    let per_day = crate::par::map(training_days, |d| backward_induction(&states, d, &m, params.tie_tol).0);
    let mut values = vec![vec![0.0; states.len()]; n + 1];
    for v in &per_day {
        for (row, vr) in values.iter_mut().zip(v) {
            for (a, b) in row.iter_mut().zip(vr) {
                *a += b;
            }
        }
    }
    let count = training_days.len() as f64;
    values.iter_mut().flatten().for_each(|v| *v /= count);

    let has_negative = training_days.iter().flatten().any(|&p| p < 0.0);
    let mut monotonicity_violations = 0;
    for (s, row) in values.iter_mut().enumerate() {
        for k in 1..row.len() - 1 {
            let second = row[k + 1] - 2.0 * row[k] + row[k - 1];
            if second > PROJECTION_TOL {
                return Err(BiddingError::ValueTableInvariant {
                    kind: "concavity",
                    row: s,
                    level: k,
                    magnitude: second,
                });
            }
        }
        for k in 1..row.len() {
            let drop = row[k - 1] - row[k];
            if drop > PROJECTION_TOL {
                if !has_negative {
                    return Err(BiddingError::ValueTableInvariant {
                        kind: "monotonicity",
                        row: s,
                        level: k,
                        magnitude: drop,
                    });
                }
                monotonicity_violations += 1;
            } else if drop > 0.0 {
                row[k] = row[k - 1];
            }
        }
    }
    Ok(ValueTable {
        grid,
        values,
        spec: *spec,
        training_days: training_days.len(),
        training_span,
        monotonicity_violations,
    })
}

/// Best one-interval action from SoC `e` at price `price` given the value
/// of each grid level after the interval. Uses nothing but the current
/// price and the table row.
pub fn rt_policy_step(e: f64, price: f64, v_next: &[f64], grid: &SocGrid, spec: &BatterySpec, tie_tol: f64) -> (f64, f64) {
    let m = StepModel::real_time(spec);
    let mut best = grid.interp(v_next, e);
    let mut act = (0.0, 0.0);
    let mut cands: Vec<usize> = (0..=grid.k).collect();
    cands.sort_by(|&a, &b| {
        (grid.level(a) - e)
            .abs()
            .partial_cmp(&(grid.level(b) - e).abs())
            .expect("finite levels")
            .then(a.cmp(&b))
    });
    for j in cands {
        let to = grid.level(j);
        if (to - e).abs() <= FEASIBILITY_TOL {
            continue;
        }
        if let Some(a) = m.action(e, to, price) {
            let v = m.reward(price, a) + v_next[j];
            if v > best + tie_tol {
                best = v;
                act = a;
            }
        }
    }
    act
}

/// Real-time dispatch of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtDispatch {
    pub p_rt: Vec<f64>,
    pub b_rt: Vec<f64>,
    /// SoC after each interval.
    pub soc: Vec<f64>,
}

impl RtDispatch {
    pub fn idle(n: usize, e0: f64) -> Self {
        Self {
            p_rt: vec![0.0; n],
            b_rt: vec![0.0; n],
            soc: vec![e0; n],
        }
    }

    pub fn end_soc(&self, e0: f64) -> f64 {
        self.soc.last().copied().unwrap_or(e0)
    }

    pub fn from_dispatch(d: Dispatch) -> Self {
        Self {
            p_rt: d.p,
            b_rt: d.b,
            soc: d.soc,
        }
    }
}

/// Replays the value-table policy over one day of real-time prices.
pub fn rt_policy_day(prices: &[f64], e0: f64, table: &ValueTable, params: &PolicyParams) -> Result<RtDispatch> {
    check_prices(prices)?;
    check_start(e0, &table.spec)?;
    if prices.len() != table.intervals() {
        return Err(BiddingError::LengthMismatch {
            expected: table.intervals(),
            got: prices.len(),
        });
    }
    let mut e = e0;
    let mut out = RtDispatch {
        p_rt: Vec::with_capacity(prices.len()),
        b_rt: Vec::with_capacity(prices.len()),
        soc: Vec::with_capacity(prices.len()),
    };
    for (s, &price) in prices.iter().enumerate() {
        let (p, b) = rt_policy_step(e, price, table.row(s + 1), &table.grid, &table.spec, params.tie_tol);
        e = (e + table.spec.soc_delta(p, b)).clamp(0.0, table.spec.e_mwh);
        if let Some(i) = table.grid.index_of(e) {
            e = table.grid.level(i);
        }
        out.p_rt.push(p);
        out.b_rt.push(b);
        out.soc.push(e);
    }
    Ok(out)
}

/// Day-ahead cleared energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub p_da: Vec<f64>,
    pub b_da: Vec<f64>,
    pub cleared: Vec<bool>,
    /// `Σ (λ − π̂)(p − b)`.
    pub objective: f64,
    /// SoC of the day-ahead position after each hour.
    pub soc: Vec<f64>,
}

impl DaySchedule {
    pub fn empty(e0: f64) -> Self {
        Self {
            p_da: vec![0.0; 24],
            b_da: vec![0.0; 24],
            cleared: vec![false; 24],
            objective: 0.0,
            soc: vec![e0; 24],
        }
    }

    pub fn end_soc(&self, e0: f64) -> f64 {
        self.soc.last().copied().unwrap_or(e0)
    }
}

/// Simulates clearing hourly bids priced at the forecast hourly real-time
/// mean: the schedule maximizes `Σ (λ_t − π̂_t)(p_t − b_t)`.
pub fn da_clear(pi_hat: &[f64], lambda: &[f64], e0: f64, spec: &BatterySpec, params: &PolicyParams) -> Result<DaySchedule> {
    if pi_hat.len() != lambda.len() {
        return Err(BiddingError::LengthMismatch {
            expected: lambda.len(),
            got: pi_hat.len(),
        });
    }
    let spread: Vec<f64> = lambda.iter().zip(pi_hat).map(|(l, f)| l - f).collect();
    let grid = SocGrid::new(params.grid_k, spec.e_mwh)?;
    let d = grid_dispatch(&spread, e0, spec, &grid, &StepModel::day_ahead(spec), params.tie_tol)?;
    Ok(DaySchedule {
        cleared: d.p.iter().zip(&d.b).map(|(p, b)| *p > 0.0 || *b > 0.0).collect(),
        objective: d.profit,
        p_da: d.p,
        b_da: d.b,
        soc: d.soc,
    })
}

/// Day-ahead-only participation: an hourly self-schedule that maximizes
/// `Σ ρ_t (p_t − b_t) − c Σ p_t` on the planning prices `ρ` (a price
/// expectation), delivered physically and settled at the day-ahead price.
/// `objective` holds the planned value.
pub fn da_self_schedule(plan: &[f64], e0: f64, spec: &BatterySpec, params: &PolicyParams) -> Result<DaySchedule> {
    let d = perfect_foresight_dispatch(plan, e0, spec, Scale::Hourly, params)?;
    Ok(DaySchedule {
        cleared: d.p.iter().zip(&d.b).map(|(p, b)| *p > 0.0 || *b > 0.0).collect(),
        objective: d.profit,
        p_da: d.p,
        b_da: d.b,
        soc: d.soc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbDirection {
    /// Sell day-ahead, buy back in real time.
    Supply,
    /// Buy day-ahead, sell back in real time.
    Demand,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbPosition {
    pub direction: VbDirection,
    pub quantity: f64,
    pub cleared: bool,
    pub profit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbMode {
    Forecast,
    Perfect,
}

/// Hourly virtual positions. Both a supply offer and a demand bid are
/// priced at the forecast (or, in perfect mode, the realized) hourly mean;
/// the supply offer clears when `λ` exceeds that price, the demand bid when
/// `λ` is below it.
pub fn vb_positions(pi_hat: &[f64], lambda: &[f64], pi_bar: &[f64], q_max: f64, mode: VbMode) -> Result<Vec<VbPosition>> {
    for v in [pi_hat, pi_bar] {
        if v.len() != lambda.len() {
            return Err(BiddingError::LengthMismatch {
                expected: lambda.len(),
                got: v.len(),
            });
        }
    }
    Ok((0..lambda.len())
        .map(|t| {
            let bid = match mode {
                VbMode::Forecast => pi_hat[t],
                VbMode::Perfect => pi_bar[t],
            };
            let (direction, profit) = if lambda[t] > bid {
                (VbDirection::Supply, q_max * (lambda[t] - pi_bar[t]))
            } else if lambda[t] < bid {
                (VbDirection::Demand, q_max * (pi_bar[t] - lambda[t]))
            } else {
                (VbDirection::None, 0.0)
            };
            let cleared = direction != VbDirection::None;
            VbPosition {
                direction,
                quantity: if cleared { q_max } else { 0.0 },
                cleared,
                profit,
            }
        })
        .collect())
}
