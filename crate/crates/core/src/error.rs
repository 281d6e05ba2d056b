use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame mismatch: expected `{expected}`, found `{found}`")]
    FrameMismatch { expected: String, found: String },

    #[error("invalid sonar configuration: {0}")]
    InvalidSonarConfig(String),

    #[error("sonar fields of view overlap {bearing_deg:.1} x {elevation_deg:.1} degrees, need {required_deg:.1} x {required_deg:.1}")]
    InsufficientOverlap {
        bearing_deg: f64,
        elevation_deg: f64,
        required_deg: f64,
    },

    #[error("scene has no primitives")]
    EmptyScene,

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("map is empty")]
    EmptyMap,

    #[error("class model for `{0}` already has a reference frame")]
    ReferenceAlreadySet(String),

    #[error("class model for `{0}` has no reference frame")]
    ReferenceMissing(String),

    #[error("submap anchored at keyframe {0} is closed")]
    SubmapClosed(usize),

    #[error("capture time {time:.3} s outside dead-reckoning span [{start:.3}, {end:.3}]")]
    OutsideDeadReckoning { time: f64, start: f64, end: f64 },

    #[error("capture time {time:.3} s precedes the submap anchor at {anchor:.3} s")]
    BeforeAnchor { time: f64, anchor: f64 },

    #[error("timestamps must increase: {time:.3} s after {last:.3} s")]
    NonMonotonicTime { time: f64, last: f64 },

    #[error("no pose estimate for keyframe {0}")]
    MissingEstimate(usize),

    #[error("unknown keyframe {0}")]
    UnknownKeyframe(usize),

    #[error("pose graph needs exactly one prior factor, found {0}")]
    PriorCount(usize),

    #[error("pose graph is disconnected: keyframe {0} unreachable from the prior")]
    Disconnected(usize),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
