use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("economy too large: bound {bound} exceeds limit {limit}")]
    EconomyTooLarge { bound: String, limit: u64 },
    #[error("game too large: {profiles} strategy profiles exceed limit {limit}")]
    GameTooLarge { profiles: String, limit: u64 },
    #[error("out of range: {0}")]
    Range(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty horizon: continuation requested at a leaf")]
    EmptyHorizon,
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("mechanism contract violation: {0}")]
    MechanismContract(String),
    #[error("invalid economy: {0}")]
    InvalidEconomy(String),
    #[error("invalid matching: {0}")]
    InvalidMatching(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown fixture: {0}")]
    UnknownFixture(String),
}

impl Error {
    pub fn is_resource_limit(&self) -> bool {
        matches!(self, Error::EconomyTooLarge { .. } | Error::GameTooLarge { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
