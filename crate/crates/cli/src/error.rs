use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at step {step}")]
    Divergence { step: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence { .. } => 4,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<openworld::trainer::TrainError> for CliError {
    fn from(e: openworld::trainer::TrainError) -> Self {
        use openworld::trainer::TrainError;
        match e {
            TrainError::Divergence { step, .. } => CliError::Divergence { step },
            TrainError::InvalidConfig(m) => CliError::Config(m),
            TrainError::NoPositives => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_errors!(
    std::io::Error,
    serde_json::Error,
    openworld::io::IoError,
    openworld::retrieval::RetrievalError,
    openworld::ood::OodError,
    openworld::simdata::SimDataError,
    plates::synth::SynthError,
    plates::lpr::LprError
);
