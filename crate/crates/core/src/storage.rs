//! Battery ratings and state-of-charge bookkeeping.
//!
//! Energies are in MWh. `p` is discharged energy and `b` charged energy over
//! one step; a step is one hour at [`Scale::Hourly`] and one real-time
//! interval at [`Scale::RealTime`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack on every bound, absorbing float noise from the optimizers.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StorageError {
    #[error("invalid battery spec: {0}")]
    InvalidSpec(String),
    #[error("power limit violated: {what} = {value} outside [0, {limit}]")]
    PowerLimitViolation { what: &'static str, value: f64, limit: f64 },
    #[error("state of charge {soc} outside [0, {capacity}]")]
    SocOutOfBounds { soc: f64, capacity: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySpec {
    /// Maximum energy charged or discharged per hour (MWh/h).
    pub p_mwh_per_hour: f64,
    /// Energy capacity (MWh).
    pub e_mwh: f64,
    /// One-way efficiency in (0, 1].
    pub eta: f64,
    /// Cost per MWh discharged ($/MWh).
    pub discharge_cost: f64,
    /// Real-time intervals per hour.
    pub intervals_per_hour: usize,
}

impl Default for BatterySpec {
    /// 1 MWh / 2-hour battery, 90% one-way efficiency, $10/MWh discharge
    /// cost, five-minute real-time intervals.
    fn default() -> Self {
        Self {
            p_mwh_per_hour: 0.5,
            e_mwh: 1.0,
            eta: 0.9,
            discharge_cost: 10.0,
            intervals_per_hour: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Hourly,
    RealTime,
}

impl BatterySpec {
    pub fn validate(&self) -> Result<(), StorageError> {
        let bad = |m: &str| Err(StorageError::InvalidSpec(m.to_string()));
        if !(self.p_mwh_per_hour > 0.0 && self.p_mwh_per_hour.is_finite()) {
            return bad("power rating must be positive");
        }
        if !(self.e_mwh > 0.0 && self.e_mwh.is_finite()) {
            return bad("capacity must be positive");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("efficiency must lie in (0, 1]");
        }
        if !(self.discharge_cost >= 0.0 && self.discharge_cost.is_finite()) {
            return bad("discharge cost must be non-negative");
        }
        if self.intervals_per_hour == 0 {
            return bad("need at least one interval per hour");
        }
        Ok(())
    }

    /// Per-step energy limit on each of `p` and `b`.
    pub fn step_limit(&self, scale: Scale) -> f64 {
        match scale {
            Scale::Hourly => self.p_mwh_per_hour,
            Scale::RealTime => self.p_mwh_per_hour / self.intervals_per_hour as f64,
        }
    }

    pub fn steps_per_day(&self, scale: Scale) -> usize {
        match scale {
            Scale::Hourly => 24,
            Scale::RealTime => 24 * self.intervals_per_hour,
        }
    }

    /// Change in stored energy from discharging `p` and charging `b`.
    pub fn soc_delta(&self, p: f64, b: f64) -> f64 {
        -p / self.eta + b * self.eta
    }
}

/// Advances the state of charge by one step.
pub fn soc_step(e: f64, p: f64, b: f64, spec: &BatterySpec, scale: Scale) -> Result<f64, StorageError> {
    let limit = spec.step_limit(scale);
    for (what, value) in [("p", p), ("b", b)] {
        if !(value >= -FEASIBILITY_TOL && value <= limit + FEASIBILITY_TOL) {
            return Err(StorageError::PowerLimitViolation { what, value, limit });
        }
    }
    let next = e + spec.soc_delta(p, b);
    if !(next >= -FEASIBILITY_TOL && next <= spec.e_mwh + FEASIBILITY_TOL) {
        return Err(StorageError::SocOutOfBounds {
            soc: next,
            capacity: spec.e_mwh,
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DischargeLimit,
    ChargeLimit,
    SocBelowZero,
    SocAboveCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
    /// Amount by which the bound is exceeded.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCheck {
    pub violations: Vec<Violation>,
    /// SoC after every step (clamped to [0, E] after a violation).
    pub soc: Vec<f64>,
}

impl ScheduleCheck {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays `actions` from `e0` and collects every violated bound. After an
/// SoC violation the replay continues from the clamped state.
pub fn check_schedule(actions: &[(f64, f64)], e0: f64, spec: &BatterySpec, scale: Scale) -> ScheduleCheck {
    let limit = spec.step_limit(scale);
    let mut violations = Vec::new();
    let mut soc = Vec::with_capacity(actions.len());
    let mut e = e0;
    for (index, &(p, b)) in actions.iter().enumerate() {
        for (kind, value) in [(ViolationKind::DischargeLimit, p), (ViolationKind::ChargeLimit, b)] {
            let excess = if value < 0.0 { -value } else { value - limit };
            if excess > FEASIBILITY_TOL {
                violations.push(Violation {
                    index,
                    kind,
                    magnitude: excess,
                });
            }
        }
        e += spec.soc_delta(p, b);
        if e < -FEASIBILITY_TOL {
            violations.push(Violation {
                index,
                kind: ViolationKind::SocBelowZero,
                magnitude: -e,
            });
            e = 0.0;
        } else if e > spec.e_mwh + FEASIBILITY_TOL {
            violations.push(Violation {
                index,
                kind: ViolationKind::SocAboveCapacity,
                magnitude: e - spec.e_mwh,
            });
            e = spec.e_mwh;
        }
        soc.push(e);
    }
    ScheduleCheck { violations, soc }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_spec() -> BatterySpec {
        BatterySpec::default()
    }

    #[test]
    fn soc_step_examples() {
        let spec = reference_spec();
        let up = soc_step(0.5, 0.0, 0.1, &spec, Scale::Hourly).unwrap();
        assert!((up - 0.59).abs() < 1e-12);
        let down = soc_step(0.5, 0.09, 0.0, &spec, Scale::Hourly).unwrap();
        assert!((down - 0.4).abs() < 1e-12);
        assert!(matches!(
            soc_step(0.0, 0.01, 0.0, &spec, Scale::RealTime),
            Err(StorageError::SocOutOfBounds { .. })
        ));
        assert!(matches!(
            soc_step(0.5, 0.05, 0.0, &spec, Scale::RealTime),
            Err(StorageError::PowerLimitViolation { what: "p", .. })
        ));
    }

    #[test]
    fn zero_actions_are_feasible() {
        let c = check_schedule(&[(0.0, 0.0); 24], 0.3, &reference_spec(), Scale::Hourly);
        assert!(c.feasible());
        assert!(c.soc.iter().all(|&e| e == 0.3));
    }

    #[test]
    fn overflow_hour_from_recurrence() {
        let spec = reference_spec();
        // 0.45 MWh stored per hour: 0.45, 0.90, then 1.35 > 1.
        let hours = (spec.e_mwh / (spec.p_mwh_per_hour * spec.eta)).floor() as usize + 1;
        assert_eq!(hours, 3);
        let c = check_schedule(&vec![(0.0, 0.5); hours], 0.0, &spec, Scale::Hourly);
        assert!((c.soc[0] - 0.45).abs() < 1e-12);
        assert!((c.soc[1] - 0.90).abs() < 1e-12);
        assert_eq!(c.violations.len(), 1);
        let v = c.violations[0];
        assert_eq!((v.index, v.kind), (2, ViolationKind::SocAboveCapacity));
        assert!((v.magnitude - 0.35).abs() < 1e-12);
    }

    #[test]
    fn round_trip_loses_energy() {
        let spec = reference_spec();
        let b = 0.4;
        let e1 = soc_step(0.0, 0.0, b, &spec, Scale::Hourly).unwrap();
        // Discharge until back at zero: p = e1 * eta.
        let p = e1 * spec.eta;
        let e2 = soc_step(e1, p, 0.0, &spec, Scale::Hourly).unwrap();
        assert!(e2.abs() < 1e-12);
        assert!((p - b * spec.eta * spec.eta).abs() < 1e-12);
        assert!(p < b);
    }

    #[test]
    fn spec_validation() {
        assert!(reference_spec().validate().is_ok());
        let bad = BatterySpec {
            eta: 1.2,
            ..reference_spec()
        };
        assert!(bad.validate().is_err());
        let bad = BatterySpec {
            intervals_per_hour: 0,
            ..reference_spec()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn soc_step_is_linear(e in 0.0..1.0f64, p in 0.0..0.04f64, b in 0.0..0.04f64, alpha in 0.0..1.0f64) {
            let spec = reference_spec();
            if let (Ok(full), Ok(part)) = (
                soc_step(e, p, b, &spec, Scale::RealTime),
                soc_step(e, alpha * p, alpha * b, &spec, Scale::RealTime),
            ) {
                prop_assert!(((part - e) - alpha * (full - e)).abs() < 1e-12);
            }
        }

        #[test]
        fn check_schedule_agrees_with_soc_step(
            actions in proptest::collection::vec((0.0..0.05f64, 0.0..0.05f64), 1..30),
            e0 in 0.0..1.0f64,
        ) {
            let spec = reference_spec();
            let mut e = e0;
            let mut ok = true;
            for &(p, b) in &actions {
                match soc_step(e, p, b, &spec, Scale::RealTime) {
                    Ok(next) => e = next,
                    Err(_) => { ok = false; break; }
                }
            }
            prop_assert_eq!(check_schedule(&actions, e0, &spec, Scale::RealTime).feasible(), ok);
        }
    }
}
