use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] aspire_core::Error),

    #[error(transparent)]
    Classifier(#[from] aspire_classifier::Error),

    #[error(transparent)]
    Bench(#[from] synthbench::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no adapter named `{name}` for {role}")]
    UnknownAdapter { role: &'static str, name: String },

    #[error("extractor returned malformed output ({reason}): {raw}")]
    Malformed { reason: String, raw: String },

    #[error("extraction adapter failed: {0}")]
    Adapter(String),

    #[error("caption is empty")]
    EmptyCaption,

    #[error("background is empty")]
    EmptyBackground,

    #[error("alternate background for `{background}` repeats it after a retry (got `{suggested}`)")]
    SameAlternate { background: String, suggested: String },

    #[error("alternate background `{alt}` equals the original `{background}`")]
    SameBackground { background: String, alt: String },

    #[error("`{phrase}` is not an extracted foreground phrase of {image}")]
    NotExtracted { image: String, phrase: String },

    #[error("`{phrase}` names the class `{label}` and must not be removed")]
    LabelPhrase { phrase: String, label: String },

    #[error("k must be at least 1")]
    ZeroK,

    #[error("augmentation multiplier must be at least 1")]
    ZeroMultiplier,

    #[error("minority_match needs group labels but `{0}` has none; use class_match")]
    MinorityNeedsGroups(String),

    #[error("personalization job for `{0}` has no training images")]
    EmptyJob(String),

    #[error("personalization job {job} failed: {reason}")]
    Personalize { job: String, reason: String },

    #[error("class `{0}` has no augmentation budget")]
    NoBudget(String),

    #[error("generator for `{class}` failed: {reason}")]
    Generate { class: String, reason: String },

    #[error("base classifier failed to learn: no training item is classified correctly")]
    NothingCorrect,

    #[error("holdout fraction {0} is outside (0, 1]")]
    BadFraction(f64),

    #[error("stage `{stage}` failed (last good stage: {last_good}): {source}")]
    Stage {
        stage: &'static str,
        last_good: String,
        #[source]
        source: Box<Error>,
    },

    #[error("run `{run}` was trained on dataset {found}, expected {expected}")]
    DatasetMismatch { run: String, expected: String, found: String },

    #[error("report needs at least one manifest")]
    EmptyReport,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the failure comes from configuration rather than execution.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::UnknownAdapter { .. }
            | Error::BadFraction(_)
            | Error::ZeroK
            | Error::ZeroMultiplier
            | Error::MinorityNeedsGroups(_) => true,
            Error::Classifier(aspire_classifier::Error::InvalidConfig(_)) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
