use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use esarb::bidding::ValueTable;
use esarb::forecaster::{AnyModel, HourlyForecast, ModelKind};
use esarb::market_data::{zone_stats, MarketDataset};
use esarb::pipeline::{self, BacktestPlan, Predictor};
use esarb::settlement::{write_reports, ModeId, RunReport};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{opt, write_csv, write_json, Provenance};

pub struct Ctx {
    pub cfg: RunConfig,
    pub prov: Provenance,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Self {
        let prov = Provenance {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
        };
        Self { cfg, prov }
    }
}

const MODEL_FILE: &str = "model.json";
const FORECAST_FILE: &str = "forecasts.csv";

fn write_dataset(ctx: &Ctx, ds: &MarketDataset) -> Result<PathBuf, CliError> {
    let dir = ctx.cfg.out_dir.join("data");
    ds.write_dir(&dir, &ctx.prov.preamble())?;
    let manifest = serde_json::json!({
        "meta": ctx.prov.meta(),
        "first_day": ds.first_day(),
        "last_day": ds.last_day(),
        "days": ds.days(),
        "zones": ds.zone_names().collect::<Vec<_>>(),
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

pub fn synth(ctx: &Ctx) -> Result<(), CliError> {
    if ctx.cfg.data.dir.is_some() {
        return Err(CliError::Config("synth needs [data] scenario or synth, not dir".into()));
    }
    let ds = ctx.cfg.dataset()?;
    let dir = write_dataset(ctx, &ds)?;
    println!("wrote {} days ({} to {}) to {}", ds.days(), ds.first_day(), ds.last_day(), dir.display());
    Ok(())
}

pub fn ingest(ctx: &Ctx) -> Result<(), CliError> {
    if ctx.cfg.data.dir.is_none() {
        return Err(CliError::Config("ingest needs [data] dir".into()));
    }
    let ds = ctx.cfg.dataset()?;
    let dir = write_dataset(ctx, &ds)?;
    println!("ingested {} days for {} zone(s) into {}", ds.days(), ds.zone_names().count(), dir.display());
    Ok(())
}

pub fn stats(ctx: &Ctx) -> Result<(), CliError> {
    let ds = ctx.cfg.dataset()?;
    let mut rows = Vec::new();
    println!("{:<10} {:>10} {:>10} {:>10} {:>10} {:>13}", "Zone", "mu DAP", "sigma DAP", "mu RTP", "sigma RTP", "Negative RTP");
    for zone in ctx.cfg.zone_list(&ds)? {
        let s = zone_stats(&ds, &zone, None)?;
        println!(
            "{:<10} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>13}",
            zone, s.mean_dap, s.std_dap, s.mean_rtp, s.std_rtp, s.negative_rtp
        );
        rows.push(vec![
            zone,
            s.mean_dap.to_string(),
            s.std_dap.to_string(),
            s.mean_rtp.to_string(),
            s.std_rtp.to_string(),
            s.negative_rtp.to_string(),
        ]);
    }
    write_csv(
        &ctx.cfg.out_dir.join("stats.csv"),
        &ctx.prov,
        &["zone", "mean_dap", "std_dap", "mean_rtp", "std_rtp", "negative_rtp"],
        &rows,
    )
}

/// Trains one zone's model and writes its checkpoint and history.
fn train_zone(ctx: &Ctx, ds: &MarketDataset, zone: &str) -> Result<(), CliError> {
    let split = ctx.cfg.split(ds)?;
    let (predictor, outcome) = pipeline::train_model(ds, zone, split.train, split.val, &ctx.cfg.model, &ctx.cfg.train)?;
    let dir = ctx.cfg.zone_dir(zone);
    let rows: Vec<Vec<String>> = outcome
        .iter()
        .flat_map(|o| &o.history)
        .map(|e| vec![e.epoch.to_string(), e.train_mse.to_string(), opt(e.val_mse)])
        .collect();
    write_csv(&dir.join("history.csv"), &ctx.prov, &["epoch", "train_mse", "val_mse"], &rows)?;
    if let Predictor::Model(m) = &predictor {
        let mut ck = m.checkpoint();
        if let Some(h) = ck.hyperparameters.as_object_mut() {
            h.insert("meta".into(), ctx.prov.meta());
        }
        ck.save(&dir.join(MODEL_FILE))?;
    }
    write_json(&dir.join("train.json"), &ctx.prov.wrap("outcome", &outcome))?;
    match outcome.as_ref().and_then(|o| o.best_epoch.map(|b| (b, &o.history[b]))) {
        Some((b, e)) => println!("{zone}: best epoch {b}, train mse {}, val mse {}", e.train_mse, opt(e.val_mse)),
        None => println!("{zone}: {:?} model, nothing to fit", ctx.cfg.model.kind),
    }
    Ok(())
}

pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let ds = ctx.cfg.dataset()?;
    for zone in ctx.cfg.zone_list(&ds)? {
        train_zone(ctx, &ds, &zone)?;
    }
    Ok(())
}

fn load_predictor(ctx: &Ctx, zone: &str) -> Result<Predictor, CliError> {
    if ctx.cfg.model.kind == ModelKind::Naive {
        return Ok(Predictor::Naive);
    }
    let path = ctx.cfg.zone_dir(zone).join(MODEL_FILE);
    if !path.is_file() {
        return Err(CliError::MissingArtifact(format!("{} (run `train` first)", path.display())));
    }
    Ok(Predictor::Model(AnyModel::load(&path)?))
}

pub fn forecast(ctx: &Ctx) -> Result<(), CliError> {
    let ds = ctx.cfg.dataset()?;
    let split = ctx.cfg.split(&ds)?;
    for zone in ctx.cfg.zone_list(&ds)? {
        let predictor = load_predictor(ctx, &zone)?;
        let forecasts = pipeline::forecast_range(&predictor, &ds, &zone, split.test)?;
        let acc = pipeline::accuracy(&ds, &zone, &forecasts)?;
        let dir = ctx.cfg.zone_dir(&zone);
        write_forecasts(&dir.join(FORECAST_FILE), &ctx.prov, &forecasts, &acc.days)?;
        let summary = serde_json::json!({
            "meta": ctx.prov.meta(),
            "days": forecasts.len(),
            "mse": acc.mse,
            "mae": acc.mae,
            "rmae": acc.rmae,
        });
        write_json(&dir.join("accuracy.json"), &summary)?;
        println!("{zone}: {} test days, MAE {:.4}, rMAE {:.4}", forecasts.len(), acc.mae, acc.rmae);
    }
    Ok(())
}

fn write_forecasts(
    path: &Path,
    prov: &Provenance,
    forecasts: &[HourlyForecast],
    residuals: &[esarb::forecaster::DayResiduals],
) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (f, r) in forecasts.iter().zip(residuals) {
        for (h, (v, e)) in f.values.iter().zip(&r.residuals).enumerate() {
            rows.push(vec![f.target_day.to_string(), h.to_string(), v.to_string(), (v + e).to_string()]);
        }
    }
    write_csv(path, prov, &["date", "hour", "forecast", "actual"], &rows)
}

fn read_forecasts(path: &Path) -> Result<BTreeMap<NaiveDate, Vec<f64>>, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact(format!("{} (run `forecast` first)", path.display())));
    }
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let mut out: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("short record {rec:?}")));
        let day: NaiveDate = field(0)?.parse().map_err(|e| bad(format!("{e}")))?;
        let hour: usize = field(1)?.parse().map_err(|e| bad(format!("{e}")))?;
        let value: f64 = field(2)?.parse().map_err(|e| bad(format!("{e}")))?;
        let row = out.entry(day).or_default();
        if row.len() != hour {
            return Err(bad(format!("hours out of order on {day}")));
        }
        row.push(value);
    }
    if let Some((d, _)) = out.iter().find(|(_, v)| v.len() != 24) {
        return Err(bad(format!("{d} does not have 24 hours")));
    }
    Ok(out)
}

/// Value table from the zone's training days, written next to the reports.
fn build_table(ctx: &Ctx, ds: &MarketDataset, zone: &str) -> Result<ValueTable, CliError> {
    let split = ctx.cfg.split(ds)?;
    let table = pipeline::value_table(ds, zone, split.train.full_days(), &ctx.cfg.battery, &ctx.cfg.policy)?;
    write_json(&ctx.cfg.zone_dir(zone).join("value_table.json"), &ctx.prov.wrap("table", &table))?;
    Ok(table)
}

pub fn backtest(ctx: &Ctx) -> Result<(), CliError> {
    let modes = ctx.cfg.modes()?;
    let ds = ctx.cfg.dataset()?;
    let split = ctx.cfg.split(&ds)?;
    for zone in ctx.cfg.zone_list(&ds)? {
        let dir = ctx.cfg.zone_dir(&zone);
        // Only modes that price day-ahead bids read forecasts; RT-F never does.
        let mut artifacts: Vec<String> = Vec::new();
        let forecasts = if modes.iter().any(ModeId::needs_forecast) {
            artifacts.push(FORECAST_FILE.into());
            Some(read_forecasts(&dir.join(FORECAST_FILE))?)
        } else {
            None
        };
        let table = if modes.iter().any(ModeId::needs_value_table) {
            artifacts.push("value_table.json".into());
            Some(build_table(ctx, &ds, &zone)?)
        } else {
            None
        };
        let plan = BacktestPlan {
            zone: &zone,
            days: split.test.full_days(),
            modes: &modes,
            forecasts: forecasts.as_ref(),
            table: table.as_ref(),
            spec: ctx.cfg.battery,
            params: ctx.cfg.policy,
            options: ctx.cfg.backtest.options,
        };
        let reports = pipeline::backtest(&ds, &plan)?;
        let meta = serde_json::json!({
            "config_sha256": ctx.prov.config_sha256,
            "seed": ctx.prov.seed,
            "zone": zone,
            "artifacts_read": artifacts,
        });
        write_reports(&dir.join("backtest"), &reports, &meta, &ctx.prov.preamble())?;
        print_summary(&zone, &reports);
    }
    Ok(())
}

fn print_summary(zone: &str, reports: &[RunReport]) {
    println!("{zone}");
    println!("  {:<10} {:>12} {:>10} {:>9}", "mode", "profit", "neg days", "IPM");
    for r in reports {
        let ipm = r.ipm.map(|x| format!("{:.1}%", 100.0 * x)).unwrap_or_else(|| "n/a".into());
        println!("  {:<10} {:>12.2} {:>10} {:>9}", r.mode.to_string(), r.total_profit, r.negative_days, ipm);
    }
}

pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    let zones = if ctx.cfg.zones.is_empty() {
        // Every zone directory that holds a backtest.
        let mut z = Vec::new();
        let entries = std::fs::read_dir(&ctx.cfg.out_dir).map_err(|e| CliError::io(&ctx.cfg.out_dir, e))?;
        for entry in entries.flatten() {
            if entry.path().join("backtest/report.json").is_file() {
                z.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        z.sort();
        z
    } else {
        ctx.cfg.zones.clone()
    };
    if zones.is_empty() {
        return Err(CliError::MissingArtifact(format!("no backtest reports under {}", ctx.cfg.out_dir.display())));
    }
    let mut rows = Vec::new();
    for zone in zones {
        let path = ctx.cfg.zone_dir(&zone).join("backtest/report.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let reports: Vec<RunReport> =
            serde_json::from_value(json["reports"].clone()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        print_summary(&zone, &reports);
        for r in &reports {
            rows.push(vec![
                zone.clone(),
                r.mode.to_string(),
                r.days.len().to_string(),
                r.total_profit.to_string(),
                r.negative_days.to_string(),
                opt(r.ipm),
            ]);
        }
    }
    write_csv(
        &ctx.cfg.out_dir.join("summary.csv"),
        &ctx.prov,
        &["zone", "mode", "days", "total_profit", "negative_days", "ipm"],
        &rows,
    )
}
