use std::fmt::Display;

use carloc_core::pipeline::PipelineError;

/// An error tagged with the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Stage(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Stage(e) => e,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Config(e.into()),
            PipelineError::Stage { .. } => Failure::Stage(e.into()),
        }
    }
}

/// Tags a result as a configuration or a stage failure.
pub trait Classify<T> {
    fn config(self, what: impl Display) -> Result<T, Failure>;
    fn stage(self, what: impl Display) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn config(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(anyhow::Error::new(e).context(what.to_string())))
    }

    fn stage(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Stage(anyhow::Error::new(e).context(what.to_string())))
    }
}

pub fn config_error(msg: impl Display) -> Failure {
    Failure::Config(anyhow::anyhow!("{msg}"))
}
