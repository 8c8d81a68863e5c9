use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use esarb::bidding::{perfect_foresight_dispatch, PolicyParams};
use esarb::forecaster::{PatchTransformer, TransformerHyper};
use esarb::market_data::{synth_generate, SynthParams, Transform};
use esarb::numerics::Checkpoint;
use esarb::storage::{BatterySpec, Scale};

const SMALL_MODEL: &str = r#"
[model.transformer]
lookback = 96
patch_len = 8
stride = 4
d_model = 16
n_heads = 2
n_layers = 1
ffn_dim = 32
"#;

fn esarb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esarb")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = esarb(args);
    assert!(
        out.status.success(),
        "esarb {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    esarb(args).status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, format!("out_dir = {:?}\n{body}", dir.join("out"))).unwrap();
    path.display().to_string()
}

fn scenario_config(dir: &Path, extra: &str) -> String {
    write_config(
        dir,
        "run.toml",
        &format!("seed = 3\n[data]\nscenario = \"acceptance\"\n{SMALL_MODEL}\n[train]\nepochs = 3\nbatch_size = 8\n{extra}"),
    )
}

/// Every file under `root`, relative path to bytes.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn full_pipeline(cfg: &str, extra: &[&str]) {
    for cmd in ["stats", "train", "forecast", "backtest", "report"] {
        let mut args = vec![cmd, "--config", cfg];
        args.extend_from_slice(extra);
        ok(&args);
    }
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = scenario_config(a.path(), "");
    let cfg_b = scenario_config(b.path(), "");
    full_pipeline(&cfg_a, &[]);
    full_pipeline(&cfg_b, &["--jobs", "1"]);
    let (ta, tb) = (tree(&a.path().join("out")), tree(&b.path().join("out")));
    assert!(ta.len() >= 12, "{:?}", ta.keys());
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{} differs", k.display());
    }
    // Every CSV starts with the provenance line and every JSON carries it.
    for (k, v) in &ta {
        let text = String::from_utf8(v.clone()).unwrap();
        match k.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("gp") => assert!(text.starts_with("# config_sha256="), "{}", k.display()),
            Some("json") => assert!(text.contains("config_sha256"), "{}", k.display()),
            _ => {}
        }
    }
}

#[test]
fn seed_override_changes_the_model_and_the_hash() {
    let a = tempfile::tempdir().unwrap();
    let cfg = scenario_config(a.path(), "");
    ok(&["train", "--config", &cfg]);
    let first = std::fs::read(a.path().join("out/SYN/model.json")).unwrap();
    ok(&["train", "--config", &cfg, "--seed", "4"]);
    let second = std::fs::read(a.path().join("out/SYN/model.json")).unwrap();
    assert_ne!(first, second);
    ok(&["train", "--config", &cfg]);
    assert_eq!(first, std::fs::read(a.path().join("out/SYN/model.json")).unwrap());
}

#[test]
fn zero_epoch_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_config(dir.path(), "").replace("run.toml", "zero.toml");
    let text = std::fs::read_to_string(dir.path().join("run.toml")).unwrap().replace("epochs = 3", "epochs = 0");
    std::fs::write(&cfg, text).unwrap();
    ok(&["train", "--config", &cfg]);
    let ck = Checkpoint::load(&dir.path().join("out/SYN/model.json")).unwrap();
    let hyper = TransformerHyper {
        lookback: 96,
        patch_len: 8,
        stride: 4,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 32,
        ..TransformerHyper::default()
    };
    let init = PatchTransformer::new(hyper, Transform::Raw, 3).unwrap().checkpoint();
    assert_eq!(ck.parameters, init.parameters);
}

#[test]
fn memorization_config_fits_its_training_windows() {
    let dir = tempfile::tempdir().unwrap();
    // 4 lookback days + 4 training days + 1 validation day + 1 test day.
    let cfg = write_config(
        dir.path(),
        "mem.toml",
        r#"seed = 0
[data.synth]
days = 10
level_std = 3.0
da_noise_std = 2.0
rt_noise_std = 5.0
[split]
val_start = "2021-01-09"
test_start = "2021-01-10"
[model.transformer]
lookback = 96
patch_len = 8
stride = 4
d_model = 16
n_heads = 2
n_layers = 2
ffn_dim = 32
dropout = 0.0
[train]
epochs = 200
batch_size = 4
patience = 1000
[train.adam]
lr = 3e-4
"#,
    );
    ok(&["train", "--config", &cfg]);
    let hist = std::fs::read_to_string(dir.path().join("out/SYN/history.csv")).unwrap();
    let last = hist.lines().last().unwrap();
    let train_mse: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(train_mse < 1e-2, "final train mse {train_mse}");
}

#[test]
fn perfect_foresight_backtest_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "pf.toml",
        r#"seed = 11
[data.synth]
days = 50
level_std = 2.0
rt_noise_std = 6.0
spike_prob = 0.01
[split]
val_start = "2021-01-05"
test_start = "2021-01-06"
[backtest]
modes = ["RT-PF"]
"#,
    );
    ok(&["backtest", "--config", &cfg]);
    let daily = std::fs::read_to_string(dir.path().join("out/SYN/backtest/daily.csv")).unwrap();
    let totals: Vec<f64> = daily
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 45);
    let params = SynthParams {
        level_std: 2.0,
        rt_noise_std: 6.0,
        spike_prob: 0.01,
        ..SynthParams::default()
    };
    let ds = synth_generate(11, 50, &params);
    let z = ds.zone("SYN").unwrap();
    let (spec, policy) = (BatterySpec::default(), PolicyParams::default());
    let mut e = 0.0;
    for (i, t) in totals.iter().enumerate() {
        let o = perfect_foresight_dispatch(z.rt_day(5 + i), e, &spec, Scale::RealTime, &policy).unwrap();
        assert!((o.profit - t).abs() < 1e-9, "day {i}: {} vs {t}", o.profit);
        e = *o.soc.last().unwrap();
    }
}

#[test]
fn real_time_only_backtest_never_reads_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_config(dir.path(), "");
    // No train or forecast has run, so no forecast file exists.
    ok(&["backtest", "--config", &cfg, "--modes", "RT-F,RT-PF"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/SYN/backtest/report.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["artifacts_read"], serde_json::json!(["value_table.json"]));
    assert_eq!(code(&["backtest", "--config", &cfg, "--modes", "DA+RT-F"]), 3);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario_config(dir.path(), "");
    assert_eq!(code(&["backtest", "--config", &cfg, "--modes", "RT-F,XX-F"]), 2);
    assert_eq!(code(&["stats", "--config", "/nonexistent/run.toml"]), 2);
    let both = write_config(dir.path(), "both.toml", "seed = 1\n[data]\nscenario = \"acceptance\"\ndir = \"data\"\n");
    assert_eq!(code(&["stats", "--config", &both]), 2);
    let missing = write_config(dir.path(), "missing.toml", "seed = 1\nzones = [\"A\"]\n[data]\ndir = \"nope\"\n[split]\nval_start = \"2021-01-02\"\ntest_start = \"2021-01-03\"\n");
    assert_eq!(code(&["stats", "--config", &missing]), 2);
    let unknown = write_config(dir.path(), "unknown.toml", "seed = 1\ncolour = 3\n[data]\nscenario = \"acceptance\"\n");
    assert_eq!(code(&["stats", "--config", &unknown]), 2);
    for section in ["model.transformer", "train.adam", "battery", "policy"] {
        let body = format!("seed = 1\n[data]\nscenario = \"acceptance\"\n[{section}]\ncolour = 3\n");
        let nested = write_config(dir.path(), "nested.toml", &body);
        assert_eq!(code(&["stats", "--config", &nested]), 2, "[{section}]");
    }
    let synth = write_config(dir.path(), "synth.toml", "seed = 1\n[data.synth]\ndays = 30\ncolour = 3\n[split]\nval_start = \"2021-01-20\"\ntest_start = \"2021-01-25\"\n");
    assert_eq!(code(&["stats", "--config", &synth]), 2);
    assert_eq!(code(&["forecast", "--config", &cfg]), 3, "forecast before train");
}

#[test]
fn synth_then_ingest_round_trips_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let synth_cfg = write_config(
        dir.path(),
        "synth.toml",
        "seed = 1\n[data.synth]\ndays = 30\nrt_noise_std = 4.0\nzones = [\"A\", \"B\"]\n[split]\nval_start = \"2021-01-20\"\ntest_start = \"2021-01-25\"\n",
    );
    ok(&["synth", "--config", &synth_cfg]);
    let first = tree(&dir.path().join("out/data"));
    ok(&["synth", "--config", &synth_cfg]);
    assert_eq!(first, tree(&dir.path().join("out/data")));

    let data_dir = dir.path().join("ingest_src");
    std::fs::rename(dir.path().join("out/data"), &data_dir).unwrap();
    let ingest_cfg = write_config(
        dir.path(),
        "ingest.toml",
        "seed = 1\nzones = [\"A\", \"B\"]\n[data]\ndir = \"ingest_src\"\n[split]\nval_start = \"2021-01-20\"\ntest_start = \"2021-01-25\"\n",
    );
    ok(&["ingest", "--config", &ingest_cfg]);
    let stats_synth = {
        ok(&["stats", "--config", &synth_cfg]);
        std::fs::read_to_string(dir.path().join("out/stats.csv")).unwrap()
    };
    ok(&["stats", "--config", &ingest_cfg]);
    let stats_ingest = std::fs::read_to_string(dir.path().join("out/stats.csv")).unwrap();
    // Same numbers; only the provenance line differs.
    assert_eq!(stats_synth.lines().skip(1).collect::<Vec<_>>(), stats_ingest.lines().skip(1).collect::<Vec<_>>());
    for f in ["da_hourly.csv", "rt_5min.csv", "load_hourly.csv"] {
        let a = std::fs::read_to_string(data_dir.join(f)).unwrap();
        let b = std::fs::read_to_string(dir.path().join("out/data").join(f)).unwrap();
        assert_eq!(a.lines().skip(1).collect::<Vec<_>>(), b.lines().skip(1).collect::<Vec<_>>(), "{f}");
    }
}

#[test]
fn constant_prices_have_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "flat.toml",
        "seed = 1\n[data.synth]\ndays = 20\ndaily_amplitude = 0.0\nweekend_discount = 0.0\n[split]\nval_start = \"2021-01-10\"\ntest_start = \"2021-01-15\"\n",
    );
    let out = ok(&["stats", "--config", &cfg]);
    assert!(out.contains("SYN"));
    let stats = std::fs::read_to_string(dir.path().join("out/stats.csv")).unwrap();
    let row: Vec<&str> = stats.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[0], "SYN");
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);
}

fn sweep_config(dir: &Path) -> String {
    scenario_config(
        dir,
        "[sweep]\nd_models = [8, 16]\npatch_lens = [8, 16]\nn_layers = [1, 2]\n",
    )
}

#[test]
fn sweeps_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["sweep", "--config", &sweep_config(a.path()), "--n", "2"]);
    ok(&["sweep", "--config", &sweep_config(b.path()), "--n", "2"]);
    let csv = std::fs::read(a.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.path().join("out/sweep.csv")).unwrap());
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    assert_eq!(
        std::fs::read(a.path().join("out/sweep.json")).unwrap(),
        std::fs::read(b.path().join("out/sweep.json")).unwrap()
    );
}

#[test]
fn one_sample_sweep_reduces_to_train_and_backtest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sweep", "--config", &sweep_config(dir.path()), "--n", "1"]);
    let sweep = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let header: Vec<&str> = sweep.lines().nth(1).unwrap().split(',').collect();
    let row: Vec<&str> = sweep.lines().nth(2).unwrap().split(',').collect();
    let get = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];

    // Re-express the sampled row as an ordinary run configuration.
    let body = format!(
        "seed = {}\n[data]\nscenario = \"acceptance\"\n[model.transformer]\nlookback = 96\npatch_len = {}\nstride = {}\nd_model = {}\nn_heads = 2\nn_layers = {}\nffn_dim = 32\ndropout = {}\n[train]\nepochs = 3\nbatch_size = 8\n[train.adam]\nlr = {}\n[sweep]\nd_models = [8, 16]\npatch_lens = [8, 16]\nn_layers = [1, 2]\n",
        get("sub_seed"),
        get("patch_len"),
        get("stride"),
        get("d_model"),
        get("n_layers"),
        get("dropout"),
        get("lr"),
    );
    let single = tempfile::tempdir().unwrap();
    let cfg = write_config(single.path(), "row.toml", &body);
    for cmd in ["train", "forecast"] {
        ok(&[cmd, "--config", &cfg]);
    }
    ok(&["backtest", "--config", &cfg, "--modes", "DA+RT-F"]);
    let daily = std::fs::read_to_string(single.path().join("out/SYN/backtest/daily.csv")).unwrap();
    let total: f64 = daily.lines().skip(2).map(|l| l.split(',').nth(5).unwrap().parse::<f64>().unwrap()).sum();
    let profit: f64 = get("profit").parse().unwrap();
    assert!((total - profit).abs() < 1e-6 * (1.0 + profit.abs()), "{total} vs {profit}");
    let acc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(single.path().join("out/SYN/accuracy.json")).unwrap()).unwrap();
    assert_eq!(acc["mae"].as_f64().unwrap(), get("mae").parse::<f64>().unwrap());
}
