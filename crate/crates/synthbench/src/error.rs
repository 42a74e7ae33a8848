pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] aspire_core::Error),

    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("image {0} was not produced by this benchmark")]
    UnknownImage(String),

    #[error("`{phrase}` is not an element of the scene")]
    NotInScene { phrase: String },

    #[error("`{phrase}` names the class object and cannot be removed")]
    ProtectedPhrase { phrase: String },

    #[error("scene background is `{actual}`, not `{claimed}`")]
    BackgroundMismatch { claimed: String, actual: String },

    #[error("`{0}` is not a palette background")]
    UnknownBackground(String),

    #[error("replacement background equals the original `{0}`")]
    SameBackground(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("`{phrase}` is not a planted feature of class `{class}`")]
    NotPlanted { class: String, phrase: String },

    #[error("generation count must be positive")]
    ZeroCount,
}
