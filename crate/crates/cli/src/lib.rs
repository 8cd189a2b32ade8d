//! Implementation of the `orientrace` command-line tool.

pub mod commands;
pub mod doc;
pub mod overlay;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const ILL_CONDITIONED: i32 = 3;
    pub const NO_SEEDS: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    IllConditioned(String),
    #[error("{0}")]
    NoSeeds(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => exit::USAGE,
            Self::IllConditioned(_) => exit::ILL_CONDITIONED,
            Self::NoSeeds(_) => exit::NO_SEEDS,
            Self::Runtime(_) => exit::FAILURE,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<orientrace::raster::RasterError> for CliError {
    fn from(e: orientrace::raster::RasterError) -> Self {
        use orientrace::raster::RasterError as R;
        match e {
            R::NotFound(_) | R::InvalidParam(_) | R::DimMismatch { .. } | R::FormatError(_) => {
                Self::Usage(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<orientrace::wavelets::WaveletError> for CliError {
    fn from(e: orientrace::wavelets::WaveletError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<orientrace::oscore::ScoreError> for CliError {
    fn from(e: orientrace::oscore::ScoreError) -> Self {
        use orientrace::oscore::ScoreError as S;
        match e {
            S::IllConditioned { .. } => Self::IllConditioned(e.to_string()),
            S::DimError { .. } | S::Mismatch(_) => Self::Usage(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<orientrace::vasculature::VascError> for CliError {
    fn from(e: orientrace::vasculature::VascError) -> Self {
        use orientrace::vasculature::VascError as V;
        match e {
            V::NoSeeds | V::LowConfidence { .. } => Self::NoSeeds(e.to_string()),
            V::Param(_) => Self::Usage(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<orientrace::etos::EtosError> for CliError {
    fn from(e: orientrace::etos::EtosError) -> Self {
        use orientrace::etos::EtosError as E;
        match e {
            E::Param(_) | E::SeedError(_) => Self::Usage(e.to_string()),
            E::Boundary => Self::Runtime(e.to_string()),
        }
    }
}

impl From<orientrace::ctos::CtosError> for CliError {
    fn from(e: orientrace::ctos::CtosError) -> Self {
        use orientrace::ctos::CtosError as C;
        match e {
            C::Param(_) | C::ScaleMismatch { .. } => Self::Usage(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<orientrace::completion::CompletionError> for CliError {
    fn from(e: orientrace::completion::CompletionError) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Usage(format!("malformed JSON: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Usage(format!("malformed CSV: {e}"))
    }
}

/// Thread count: `ORIENTRACE_THREADS` wins over the flag.
pub fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    std::env::var("ORIENTRACE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .or(flag)
        .filter(|&n| n > 0)
}
