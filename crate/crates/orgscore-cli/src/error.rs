//! CLI error type carrying the exit-code distinction: usage problems
//! (bad flag values, contradictory options) exit 1; data and processing
//! failures (unreadable files, malformed corpora, training errors) exit 2.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! data_from {
    ($($ty:ty),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_from!(
    std::io::Error,
    serde_json::Error,
    orgscore_core::corpus::CorpusError,
    orgscore_core::corruption::CorruptionError,
    orgscore_core::dataset::DatasetError,
    orgscore_core::encoder::EncoderError,
    orgscore_core::fusion::FusionError,
    orgscore_core::train_eval::TrainError,
    orgscore_core::weights::WeightsError,
);
