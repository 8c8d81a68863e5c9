//! TOML run configuration.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use esarb::bidding::PolicyParams;
use esarb::forecaster::{ModelKind, TrainConfig};
use esarb::market_data::{DataSplit, FillPolicy, MarketDataset, SynthParams};
use esarb::pipeline::ModelConfig;
use esarb::scenario::Scenario;
use esarb::settlement::{ModeId, ModeOptions};
use esarb::storage::BatterySpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Zones to process; empty means every zone in the dataset.
    #[serde(default)]
    pub zones: Vec<String>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub battery: BatterySpec,
    #[serde(default)]
    pub policy: PolicyParams,
    #[serde(default)]
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Directory of the config file; relative data paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of `dir`, `scenario` or `synth`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `da_hourly.csv`, `rt_5min.csv` and `load_hourly.csv`.
    pub dir: Option<PathBuf>,
    /// Named built-in scenario; also supplies the split.
    pub scenario: Option<String>,
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub fill: FillPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    #[serde(flatten)]
    pub params: SynthParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub val_start: NaiveDate,
    pub test_start: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub modes: Vec<String>,
    #[serde(flatten)]
    pub options: ModeOptions,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            modes: ModeId::all().iter().map(ToString::to_string).collect(),
            options: ModeOptions::default(),
        }
    }
}

/// Uniform sampling ranges for the sensitivity sweep. Two-element lists are
/// closed ranges; `patch_lens` and `d_models` are sets of choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_samples: usize,
    pub d_models: Vec<usize>,
    pub patch_lens: Vec<usize>,
    pub n_layers: [usize; 2],
    pub dropout: [f64; 2],
    pub lr: [f64; 2],
    /// Mode whose total profit is reported per row.
    pub profit_mode: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_samples: 4,
            d_models: vec![16, 32, 64],
            patch_lens: vec![8, 16, 24],
            n_layers: [1, 3],
            dropout: [0.0, 0.2],
            lr: [1e-4, 3e-3],
            profit_mode: "DA+RT-F".into(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub zones: Option<Vec<String>>,
    pub modes: Option<Vec<String>>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(z) = &o.zones {
            self.zones = z.clone();
        }
        if let Some(m) = &o.modes {
            self.backtest.modes = m.clone();
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        // One seed drives initialization and batch order.
        self.model.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = &self.data;
        let sources = d.dir.is_some() as u8 + d.scenario.is_some() as u8 + d.synth.is_some() as u8;
        if sources != 1 {
            return bad("[data] needs exactly one of `dir`, `scenario` or `synth`".into());
        }
        if let Some(dir) = self.data_dir() {
            if !dir.is_dir() {
                return bad(format!("data directory {} does not exist", dir.display()));
            }
        }
        if let Some(name) = &d.scenario {
            if Scenario::by_name(name).is_none() {
                return bad(format!("unknown scenario `{name}`"));
            }
        } else if self.split.is_none() {
            return bad("[split] is required unless a scenario is used".into());
        }
        if let Some(s) = &d.synth {
            if s.days == 0 {
                return bad("synth.days must be positive".into());
            }
        }
        if let Some(s) = &self.split {
            if s.val_start > s.test_start {
                return bad("split.val_start is after split.test_start".into());
            }
        }
        self.modes()?;
        self.battery.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.policy.grid_k < 2 {
            return bad("policy.grid_k must be at least 2".into());
        }
        match self.model.kind {
            ModelKind::Transformer => {
                self.model.transformer.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            ModelKind::Dlinear | ModelKind::Naive => {}
        }
        if self.model.kind != ModelKind::Naive && !self.model.lookback().is_multiple_of(24) {
            return bad(format!("model lookback {} is not a whole number of days", self.model.lookback()));
        }
        let sw = &self.sweep;
        if sw.d_models.is_empty() || sw.patch_lens.is_empty() {
            return bad("sweep.d_models and sweep.patch_lens need at least one choice".into());
        }
        if sw.n_layers[0] == 0 || sw.n_layers[0] > sw.n_layers[1] || sw.dropout[0] > sw.dropout[1] || sw.lr[0] > sw.lr[1] || sw.lr[0] <= 0.0 {
            return bad("sweep ranges must be ordered [lo, hi] with positive layers and rates".into());
        }
        for &d in &sw.d_models {
            for &p in &sw.patch_lens {
                let mut h = self.model.transformer;
                h.d_model = d;
                h.patch_len = p;
                h.stride = (p / 2).max(1);
                h.validate().map_err(|e| CliError::Config(format!("sweep choice d_model {d}, patch {p}: {e}")))?;
            }
        }
        sw.profit_mode.parse::<ModeId>().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Data directory resolved against the config file's directory.
    pub fn data_dir(&self) -> Option<PathBuf> {
        self.data.dir.as_ref().map(|d| self.base_dir.join(d))
    }

    pub fn modes(&self) -> Result<Vec<ModeId>, CliError> {
        self.backtest
            .modes
            .iter()
            .map(|m| m.parse::<ModeId>().map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    /// SHA-256 of the effective configuration, excluding the output
    /// directory so that relocated reruns stay byte-identical.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn dataset(&self) -> Result<MarketDataset, CliError> {
        let d = &self.data;
        if let Some(dir) = self.data_dir() {
            if self.zones.is_empty() {
                return Err(CliError::Config("`zones` must be listed when loading a data directory".into()));
            }
            return Ok(MarketDataset::load_dir(&dir, &self.zones, &d.fill)?);
        }
        if let Some(name) = &d.scenario {
            return Ok(Scenario::by_name(name).expect("validated").dataset());
        }
        let s = d.synth.as_ref().expect("validated");
        Ok(esarb::market_data::synth_generate(self.seed, s.days, &s.params))
    }

    pub fn split(&self, ds: &MarketDataset) -> Result<DataSplit, CliError> {
        if let Some(name) = &self.data.scenario {
            let sc = Scenario::by_name(name).expect("validated");
            if self.split.is_none() {
                return Ok(sc.split(ds)?);
            }
        }
        let s = self.split.expect("validated");
        Ok(esarb::market_data::split_train_val_test(ds, s.val_start, s.test_start)?)
    }

    pub fn zone_list(&self, ds: &MarketDataset) -> Result<Vec<String>, CliError> {
        if self.zones.is_empty() {
            return Ok(ds.zone_names().map(str::to_string).collect());
        }
        for z in &self.zones {
            ds.zone(z)?;
        }
        Ok(self.zones.clone())
    }

    pub fn zone_dir(&self, zone: &str) -> PathBuf {
        self.out_dir.join(zone)
    }
}
