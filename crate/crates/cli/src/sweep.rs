//! Hyperparameter sensitivity sweep.

use esarb::forecaster::ModelKind;
use esarb::pipeline::{self, BacktestPlan};
use esarb::settlement::ModeId;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commands::Ctx;
use crate::config::{RunConfig, SweepConfig};
use crate::error::CliError;
use crate::output::{opt, write_csv, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub sub_seed: u64,
    pub d_model: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    #[serde(flatten)]
    pub sample: Sample,
    pub val_mse: Option<f64>,
    pub mae: f64,
    pub rmae: f64,
    pub profit: f64,
}

/// Sub-seeds for `n` rows; row `i` depends only on `seed` and `i`.
pub fn sub_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

pub fn sample(sub_seed: u64, ranges: &SweepConfig) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let d_model = *ranges.d_models.choose(&mut rng).expect("validated non-empty");
    let patch_len = *ranges.patch_lens.choose(&mut rng).expect("validated non-empty");
    Sample {
        sub_seed,
        d_model,
        patch_len,
        stride: (patch_len / 2).max(1),
        n_layers: rng.random_range(ranges.n_layers[0]..=ranges.n_layers[1]),
        dropout: rng.random_range(ranges.dropout[0]..=ranges.dropout[1]),
        lr: rng.random_range(ranges.lr[0]..=ranges.lr[1]),
    }
}

/// The run configuration a sweep row corresponds to.
pub fn row_config(base: &RunConfig, s: &Sample) -> RunConfig {
    let mut cfg = base.clone();
    cfg.seed = s.sub_seed;
    cfg.model.seed = s.sub_seed;
    cfg.train.seed = s.sub_seed;
    cfg.model.kind = ModelKind::Transformer;
    let h = &mut cfg.model.transformer;
    h.d_model = s.d_model;
    h.patch_len = s.patch_len;
    h.stride = s.stride;
    h.n_layers = s.n_layers;
    h.dropout = s.dropout;
    cfg.train.adam.lr = s.lr;
    cfg
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn run(ctx: &Ctx, n: Option<usize>) -> Result<(), CliError> {
    let base = &ctx.cfg;
    let n = n.unwrap_or(base.sweep.n_samples);
    if n == 0 {
        return Err(CliError::Config("sweep needs at least one sample".into()));
    }
    let ds = base.dataset()?;
    let split = base.split(&ds)?;
    let zone = base.zone_list(&ds)?.into_iter().next().ok_or_else(|| CliError::Data("dataset has no zones".into()))?;
    let profit_mode: ModeId = base.sweep.profit_mode.parse()?;
    let table = pipeline::value_table(&ds, &zone, split.train.full_days(), &base.battery, &base.policy)?;

    let mut rows = Vec::with_capacity(n);
    for (index, sub_seed) in sub_seeds(base.seed, n).into_iter().enumerate() {
        let s = sample(sub_seed, &base.sweep);
        let cfg = row_config(base, &s);
        let (predictor, outcome) = pipeline::train_model(&ds, &zone, split.train, split.val, &cfg.model, &cfg.train)?;
        let val_mse = outcome
            .as_ref()
            .and_then(|o| o.best_epoch.and_then(|b| o.history[b].val_mse));
        let forecasts = pipeline::forecast_range(&predictor, &ds, &zone, split.test)?;
        let acc = pipeline::accuracy(&ds, &zone, &forecasts)?;
        let map = pipeline::forecast_map(&forecasts);
        let modes = [profit_mode];
        let plan = BacktestPlan {
            zone: &zone,
            days: split.test.full_days(),
            modes: &modes,
            forecasts: Some(&map),
            table: Some(&table),
            spec: cfg.battery,
            params: cfg.policy,
            options: cfg.backtest.options,
        };
        let profit = pipeline::backtest(&ds, &plan)?[0].total_profit;
        println!(
            "row {index}: d_model {} patch {} layers {} dropout {:.3} lr {:.2e} -> MAE {:.4}, profit {:.2}",
            s.d_model, s.patch_len, s.n_layers, s.dropout, s.lr, acc.mae, profit
        );
        rows.push(SweepRow {
            index,
            sample: s,
            val_mse,
            mae: acc.mae,
            rmae: acc.rmae,
            profit,
        });
    }

    let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
    let profits: Vec<f64> = rows.iter().map(|r| r.profit).collect();
    let rho = spearman(&maes, &profits);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.sample;
            vec![
                r.index.to_string(),
                s.sub_seed.to_string(),
                s.d_model.to_string(),
                s.patch_len.to_string(),
                s.stride.to_string(),
                s.n_layers.to_string(),
                s.dropout.to_string(),
                s.lr.to_string(),
                opt(r.val_mse),
                r.mae.to_string(),
                r.rmae.to_string(),
                r.profit.to_string(),
            ]
        })
        .collect();
    write_csv(
        &base.out_dir.join("sweep.csv"),
        &ctx.prov,
        &[
            "index", "sub_seed", "d_model", "patch_len", "stride", "n_layers", "dropout", "lr", "val_mse", "mae", "rmae", "profit",
        ],
        &csv_rows,
    )?;
    let summary = serde_json::json!({
        "meta": ctx.prov.meta(),
        "zone": zone,
        "profit_mode": profit_mode,
        "spearman_mae_profit": rho,
        "rows": rows,
    });
    write_json(&base.out_dir.join("sweep.json"), &summary)?;
    match rho {
        Some(r) => println!("Spearman(MAE, profit) = {r:.3}"),
        None => println!("Spearman(MAE, profit) undefined"),
    }
    Ok(())
}
