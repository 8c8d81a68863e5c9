use std::collections::BTreeMap;

use chrono::NaiveDate;
use esarb::bidding::*;
use esarb::market_data::{synth_generate, MarketDataset, SynthParams};
use esarb::settlement::*;
use esarb::storage::{check_schedule, BatterySpec, Scale};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 6, 1).unwrap()
}

fn market(seed: u64, days: usize) -> MarketDataset {
    let params = SynthParams {
        level_std: 3.0,
        da_noise_std: 2.0,
        rt_noise_std: 6.0,
        spike_prob: 0.01,
        negative_prob: 0.005,
        ..SynthParams::default()
    };
    synth_generate(seed, days, &params)
}

/// A random feasible day: DA schedule cleared against a random forecast,
/// RT dispatch from the oracle on the realized prices.
fn random_day(rng: &mut ChaCha8Rng, spec: &BatterySpec) -> (Vec<f64>, Vec<f64>, DaySchedule, RtDispatch) {
    let params = PolicyParams {
        grid_k: 20,
        ..PolicyParams::default()
    };
    let lambda: Vec<f64> = (0..24).map(|_| rng.random_range(-10.0..90.0)).collect();
    let pi: Vec<f64> = (0..288).map(|_| rng.random_range(-30.0..150.0)).collect();
    let hat: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..80.0)).collect();
    let sched = da_clear(&hat, &lambda, rng.random_range(0.0..1.0), spec, &params).unwrap();
    let disp = perfect_foresight_dispatch(&pi, rng.random_range(0.0..1.0), spec, Scale::RealTime, &params).unwrap();
    (lambda, pi, sched, RtDispatch::from_dispatch(disp))
}

fn net(s: &DaySchedule) -> Vec<f64> {
    s.p_da.iter().zip(&s.b_da).map(|(p, b)| p - b).collect()
}

#[test]
#[allow(clippy::needless_range_loop)]
fn components_follow_the_settlement_formula() {
    let spec = BatterySpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (lambda, pi, sched, disp) = random_day(&mut rng, &spec);
        let r = settle_day(day0(), ModeId::new(Market::DaRt, Source::F), &lambda, &pi, &sched, &disp, &spec).unwrap();
        // Recompute hour by hour with explicit loops.
        let mut da = 0.0;
        let mut rt = 0.0;
        let mut cost = 0.0;
        for t in 0..24 {
            da += lambda[t] * (sched.p_da[t] - sched.b_da[t]);
            for k in 0..12 {
                let s = 12 * t + k;
                rt += pi[s] * (disp.p_rt[s] - disp.b_rt[s] - sched.p_da[t] / 12.0 + sched.b_da[t] / 12.0);
                cost += 10.0 * disp.p_rt[s];
            }
        }
        assert!((r.da_revenue - da).abs() < 1e-9);
        assert!((r.rt_settlement - rt).abs() < 1e-9);
        assert!((r.discharge_cost - cost).abs() < 1e-9);
        assert!((r.total - (r.da_revenue + r.rt_settlement - r.discharge_cost)).abs() < 1e-9);
    }
}

#[test]
fn following_the_day_ahead_schedule_zeroes_real_time_settlement() {
    let spec = BatterySpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (lambda, pi, sched, _) = random_day(&mut rng, &spec);
        let e0 = sched.soc[0] - spec.soc_delta(sched.p_da[0], sched.b_da[0]);
        let disp = follow_schedule(&sched, e0, 12, &spec);
        let actions: Vec<(f64, f64)> = disp.p_rt.iter().zip(&disp.b_rt).map(|(&p, &b)| (p, b)).collect();
        assert!(check_schedule(&actions, e0, &spec, Scale::RealTime).feasible());
        let r = settle_day(day0(), ModeId::new(Market::Da, Source::F), &lambda, &pi, &sched, &disp, &spec).unwrap();
        assert!(r.rt_settlement.abs() < 1e-9, "{}", r.rt_settlement);
        let discharged: f64 = disp.p_rt.iter().sum();
        let direct: f64 = net(&sched).iter().zip(&lambda).map(|(q, l)| q * l).sum::<f64>() - 10.0 * discharged;
        assert!((r.total - direct).abs() < 1e-9);
    }
}

#[test]
fn decomposition_residual_on_100_random_days() {
    let spec = BatterySpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (lambda, pi, sched, disp) = random_day(&mut rng, &spec);
        worst = worst.max(decomposition_residual(&lambda, &pi, &net(&sched), &disp, &spec).unwrap());
    }
    assert!(worst <= 1e-9, "max residual {worst}");
    let (lambda, pi, _, disp) = random_day(&mut rng, &spec);
    assert!(decomposition_residual(&lambda, &pi, &[0.0; 24], &disp, &spec).unwrap() <= 1e-12);
}

#[test]
fn real_time_only_total_matches_the_policy_profit() {
    let ds = market(3, 40);
    let spec = BatterySpec::default();
    let params = PolicyParams::default();
    let z = ds.zone("SYN").unwrap();
    let days: Vec<Vec<f64>> = (0..20).map(|d| z.rt_day(d).to_vec()).collect();
    let table = build_value_table(&days, &spec, &params, None).unwrap();
    let inputs = BacktestInputs {
        ds: &ds,
        zone: "SYN",
        days: (20..40).collect(),
        forecasts: None,
        table: Some(&table),
        spec,
        params,
        options: ModeOptions::default(),
        e0: 0.0,
    };
    let results = run_mode(&inputs, ModeId::RT_F).unwrap();
    let mut e = 0.0;
    for (i, r) in results.iter().enumerate() {
        let prices = z.rt_day(20 + i);
        let disp = rt_policy_day(prices, e, &table, &params).unwrap();
        let profit: f64 = (0..prices.len())
            .map(|s| prices[s] * (disp.p_rt[s] - disp.b_rt[s]) - spec.discharge_cost * disp.p_rt[s])
            .sum();
        assert!((r.total - profit).abs() < 1e-9);
        assert_eq!(r.da_revenue, 0.0);
        e = disp.end_soc(e);
        assert_eq!(r.soc_end, e);
    }
}

#[test]
fn perfect_foresight_run_sums_oracle_profits() {
    let ds = market(5, 50);
    let spec = BatterySpec::default();
    let params = PolicyParams::default();
    let z = ds.zone("SYN").unwrap();
    let inputs = BacktestInputs {
        ds: &ds,
        zone: "SYN",
        days: (0..50).collect(),
        forecasts: None,
        table: None,
        spec,
        params,
        options: ModeOptions::default(),
        e0: 0.0,
    };
    let report = run_backtest(&inputs, &[ModeId::RT_PF]).unwrap().remove(0);
    let mut e = 0.0;
    let mut sum = 0.0;
    for (d, r) in report.days.iter().enumerate() {
        let o = perfect_foresight_dispatch(z.rt_day(d), e, &spec, Scale::RealTime, &params).unwrap();
        assert!((r.total - o.profit).abs() < 1e-9);
        e = *o.soc.last().unwrap();
        sum += o.profit;
    }
    assert!((report.total_profit - sum).abs() < 1e-6);
    assert_eq!(report.ipm, None);
}

fn all_mode_inputs<'a>(
    ds: &'a MarketDataset,
    table: &'a ValueTable,
    forecasts: &'a BTreeMap<NaiveDate, Vec<f64>>,
    days: std::ops::Range<usize>,
) -> BacktestInputs<'a> {
    BacktestInputs {
        ds,
        zone: "SYN",
        days: days.collect(),
        forecasts: Some(forecasts),
        table: Some(table),
        spec: BatterySpec::default(),
        params: PolicyParams::default(),
        options: ModeOptions::default(),
        e0: 0.0,
    }
}

#[test]
fn every_mode_runs_and_keeps_its_invariants() {
    let ds = market(9, 45);
    let spec = BatterySpec::default();
    let params = PolicyParams::default();
    let z = ds.zone("SYN").unwrap();
    let train: Vec<Vec<f64>> = (0..15).map(|d| z.rt_day(d).to_vec()).collect();
    let table = build_value_table(&train, &spec, &params, None).unwrap();
    // Forecast: last week's same-hour mean.
    let forecasts: BTreeMap<NaiveDate, Vec<f64>> = (15..45).map(|d| (ds.day(d), z.rt_mean_day(d - 7).to_vec())).collect();
    let inputs = all_mode_inputs(&ds, &table, &forecasts, 15..45);
    let reports = run_backtest(&inputs, &ModeId::all()).unwrap();
    let by_mode: BTreeMap<ModeId, &RunReport> = reports.iter().map(|r| (r.mode, r)).collect();

    for r in &reports {
        assert_eq!(r.days.len(), 30);
        for d in &r.days {
            assert!((d.total - (d.da_revenue + d.rt_settlement - d.discharge_cost)).abs() < 1e-9);
            assert!((-1e-9..=1.0 + 1e-9).contains(&d.soc_end));
        }
        if r.mode.market == Market::Da {
            assert!(r.days.iter().all(|d| d.rt_settlement.abs() < 1e-9));
        }
        if r.mode.market == Market::Vb {
            assert!(r.days.iter().all(|d| d.discharge_cost == 0.0 && (d.vb_profit - d.total).abs() < 1e-9));
        }
    }
    // Perfect-foresight virtual bids never lose.
    let vb_pf = by_mode[&ModeId::new(Market::Vb, Source::Pf)];
    assert!(vb_pf.days.iter().all(|d| d.total >= -1e-12));
    assert_eq!(vb_pf.negative_days, 0);
    // The joint modes add the day-ahead spread on top of the same real-time dispatch.
    let rt_f = by_mode[&ModeId::RT_F];
    let joint_f = by_mode[&ModeId::new(Market::DaRt, Source::F)];
    for (a, b) in rt_f.days.iter().zip(&joint_f.days) {
        assert_eq!(a.soc_end, b.soc_end);
        assert_eq!(a.discharge_cost, b.discharge_cost);
    }
    assert!(rt_f.ipm == Some(0.0) || rt_f.total_profit <= 0.0);
}

#[test]
fn joint_perfect_mode_stacks_virtual_bids_only_when_asked() {
    let ds = market(4, 30);
    let spec = BatterySpec::default();
    let params = PolicyParams::default();
    let z = ds.zone("SYN").unwrap();
    let table = build_value_table(&[z.rt_day(0).to_vec()], &spec, &params, None).unwrap();
    let forecasts = BTreeMap::new();
    let mut inputs = all_mode_inputs(&ds, &table, &forecasts, 10..30);
    let mode = ModeId::new(Market::DaRt, Source::Pf);
    let with = run_mode(&inputs, mode).unwrap();
    inputs.options.include_vb_in_joint_pf = false;
    let without = run_mode(&inputs, mode).unwrap();
    let vb = run_mode(&inputs, ModeId::new(Market::Vb, Source::Pf)).unwrap();
    for ((a, b), v) in with.iter().zip(&without).zip(&vb) {
        assert!((a.total - b.total - v.total).abs() < 1e-9);
        assert_eq!(b.vb_profit, 0.0);
    }
}

#[test]
fn missing_artifacts_are_reported() {
    let ds = market(1, 10);
    let empty = BTreeMap::new();
    let spec = BatterySpec::default();
    let params = PolicyParams::default();
    let table = build_value_table(&[ds.zone("SYN").unwrap().rt_day(0).to_vec()], &spec, &params, None).unwrap();
    let mut inputs = all_mode_inputs(&ds, &table, &empty, 8..10);
    assert!(matches!(
        run_mode(&inputs, ModeId::new(Market::Da, Source::F)),
        Err(SettlementError::MissingForecast { .. })
    ));
    // RT-F never touches forecasts.
    assert!(run_mode(&inputs, ModeId::RT_F).is_ok());
    inputs.table = None;
    assert!(matches!(run_mode(&inputs, ModeId::RT_F), Err(SettlementError::MissingValueTable(_))));
    assert!(run_mode(&inputs, ModeId::new(Market::Da, Source::Pf)).is_ok());
}

#[test]
fn report_files_are_written_with_provenance() {
    let ds = market(6, 12);
    let spec = BatterySpec::default();
    let params = PolicyParams::default();
    let table = build_value_table(&[ds.zone("SYN").unwrap().rt_day(0).to_vec()], &spec, &params, None).unwrap();
    let empty = BTreeMap::new();
    let inputs = all_mode_inputs(&ds, &table, &empty, 2..12);
    let reports = run_backtest(&inputs, &[ModeId::RT_F, ModeId::RT_PF]).unwrap();
    let meta = serde_json::json!({"config_sha256": "abc", "seed": 7});
    let preamble = vec!["config_sha256=abc seed=7".to_string()];
    let dir = tempfile::tempdir().unwrap();
    write_reports(dir.path(), &reports, &meta, &preamble).unwrap();
    let daily = std::fs::read_to_string(dir.path().join("daily.csv")).unwrap();
    let mut lines = daily.lines();
    assert_eq!(lines.next(), Some("# config_sha256=abc seed=7"));
    assert_eq!(lines.next(), Some("date,mode,da_revenue,rt_settlement,discharge_cost,total,soc_end"));
    assert_eq!(lines.count(), 20);
    let cum = std::fs::read_to_string(dir.path().join("cumulative.csv")).unwrap();
    assert!(cum.lines().nth(1).unwrap() == "date,RT-F,RT-PF");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["meta"]["seed"], 7);
    let back: Vec<RunReport> = serde_json::from_value(json["reports"].clone()).unwrap();
    assert_eq!(back, reports);
    assert!(std::fs::read_to_string(dir.path().join("cumulative.gp")).unwrap().contains("plot 'cumulative.csv'"));

    let again = tempfile::tempdir().unwrap();
    write_reports(again.path(), &reports, &meta, &preamble).unwrap();
    for f in ["report.json", "daily.csv", "cumulative.csv", "cumulative.gp"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn settlement_is_linear_in_quantities(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
        let spec = BatterySpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lambda, pi, sched, disp) = random_day(&mut rng, &spec);
        let scaled_sched = DaySchedule {
            p_da: sched.p_da.iter().map(|x| alpha * x).collect(),
            b_da: sched.b_da.iter().map(|x| alpha * x).collect(),
            ..sched.clone()
        };
        let scaled_disp = RtDispatch {
            p_rt: disp.p_rt.iter().map(|x| alpha * x).collect(),
            b_rt: disp.b_rt.iter().map(|x| alpha * x).collect(),
            soc: disp.soc.clone(),
        };
        let m = ModeId::new(Market::DaRt, Source::F);
        let a = settle_day(day0(), m, &lambda, &pi, &sched, &disp, &spec).unwrap();
        let b = settle_day(day0(), m, &lambda, &pi, &scaled_sched, &scaled_disp, &spec).unwrap();
        for (x, y) in [(a.da_revenue, b.da_revenue), (a.rt_settlement, b.rt_settlement), (a.discharge_cost, b.discharge_cost), (a.total, b.total)] {
            prop_assert!((alpha * x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn aggregate_is_a_prefix_sum(totals in prop::collection::vec(-100.0f64..100.0, 1..60), base in -50.0f64..500.0) {
        let days: Vec<DayResult> = totals.iter().map(|&t| DayResult {
            date: day0(), mode: ModeId::RT_F, da_revenue: t, rt_settlement: 0.0,
            discharge_cost: 0.0, total: t, soc_end: 0.0, vb_profit: 0.0,
        }).collect();
        let r = aggregate(days, Some(base)).unwrap();
        let mut acc = 0.0;
        for (c, t) in r.cumulative.iter().zip(&totals) {
            acc += t;
            prop_assert!((c - acc).abs() < 1e-9);
        }
        prop_assert_eq!(r.negative_days, totals.iter().filter(|&&t| t < 0.0).count());
        prop_assert_eq!(r.ipm.is_some(), base > 0.0);
        if let Some(ipm) = r.ipm {
            prop_assert!((ipm - (acc - base) / base).abs() < 1e-9);
        }
    }
}
