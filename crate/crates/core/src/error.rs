use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("timestamp {t:.9} outside trajectory span [{start:.9}, {end:.9}]")]
    TimestampOutOfRange { t: f64, start: f64, end: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("point cloud contains a non-finite coordinate at index {0}")]
    NonFinitePoint(usize),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("image {width}x{height} is smaller than 64x64")]
    ImageTooSmall { width: usize, height: usize },
    #[error("need at least {needed} descriptors to train, got {got}")]
    InsufficientDescriptors { needed: usize, got: usize },
    #[error("malformed vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("image database is empty")]
    EmptyDatabase,
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("every minimal sample was degenerate")]
    DegenerateConfiguration,
    #[error("descriptor parameters differ")]
    ParamMismatch,
    #[error("registration needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no candidate match survived registration")]
    NoSurvivingMatches,
    #[error("relative trajectory is empty")]
    EmptyRelativeTrajectory,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    /// The error beneath any stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
