use esarb::bidding::BiddingError;
use esarb::forecaster::ForecastError;
use esarb::market_data::DataError;
use esarb::numerics::NumericsError;
use esarb::pipeline::PipelineError;
use esarb::settlement::SettlementError;
use thiserror::Error;

/// Top-level failure, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::MissingArtifact(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::BoundaryOutOfRange(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::Checkpoint(_) => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::Data(d) => d.into(),
            ForecastError::Numerics(n) => n.into(),
            ForecastError::NonFiniteLoss { .. } | ForecastError::NonFiniteForecast(_) | ForecastError::NaiveErrorZero => {
                CliError::Numeric(e.to_string())
            }
            ForecastError::GeometryMismatch(_) | ForecastError::WrongModelKind(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BiddingError> for CliError {
    fn from(e: BiddingError) -> Self {
        match e {
            BiddingError::ValueTableInvariant { .. } | BiddingError::NonFinitePrice { .. } => CliError::Numeric(e.to_string()),
            BiddingError::InvalidGrid(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SettlementError> for CliError {
    fn from(e: SettlementError) -> Self {
        match e {
            SettlementError::Bidding(b) => b.into(),
            SettlementError::Data(d) => d.into(),
            SettlementError::UnknownMode(_) => CliError::Config(e.to_string()),
            SettlementError::MissingForecast { .. } | SettlementError::MissingValueTable(_) => {
                CliError::MissingArtifact(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Forecast(f) => f.into(),
            PipelineError::Data(d) => d.into(),
            PipelineError::Bidding(b) => b.into(),
            PipelineError::Settlement(s) => s.into(),
            PipelineError::LookbackNotDaily(_) => CliError::Config(e.to_string()),
            PipelineError::NoDays(_) => CliError::Data(e.to_string()),
        }
    }
}
