use thiserror::Error;

use crate::model::ScreenKind;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown study {0:?}")]
    UnknownStudy(String),
    #[error("study {0:?} already exists")]
    DuplicateStudy(String),
    #[error("study {0:?} is closed")]
    StudyClosed(String),
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
    #[error("screen {screen_id:?}: {reason}")]
    InvalidScreen { screen_id: String, reason: String },
    #[error("duplicate screen id {0:?}")]
    DuplicateScreen(String),
    #[error("study has {available} screens, fewer than the {requested} per listener")]
    InsufficientScreens { available: usize, requested: usize },
    #[error("unknown listener {0:?}")]
    UnknownListener(String),
    #[error("listener {0:?} is already registered")]
    DuplicateListener(String),
    #[error("unknown screen {0:?}")]
    UnknownScreen(String),
    #[error("payload is for a {got} screen, screen is {expected}")]
    KindMismatch { expected: ScreenKind, got: ScreenKind },
    #[error("{0}")]
    OutOfRange(String),
    #[error("screen {screen_id:?} is not the listener's current screen ({expected})")]
    WrongScreen { screen_id: String, expected: String },
    #[error("screen {0:?} was already answered by this listener")]
    AlreadyAnswered(String),
    #[error("listener has completed every assigned screen")]
    AssignmentComplete,
    #[error("unknown stimulus {0:?}")]
    UnknownStimulus(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("no route for {0}")]
    UnknownRoute(String),
}

impl StudyError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            StudyError::UnknownStudy(_) => "unknown_study",
            StudyError::DuplicateStudy(_) => "duplicate_study",
            StudyError::StudyClosed(_) => "study_closed",
            StudyError::InvalidConfig(_) => "invalid_config",
            StudyError::InvalidScreen { .. } => "invalid_screen",
            StudyError::DuplicateScreen(_) => "duplicate_screen",
            StudyError::InsufficientScreens { .. } => "insufficient_screens",
            StudyError::UnknownListener(_) => "unknown_listener",
            StudyError::DuplicateListener(_) => "duplicate_listener",
            StudyError::UnknownScreen(_) => "unknown_screen",
            StudyError::KindMismatch { .. } => "kind_mismatch",
            StudyError::OutOfRange(_) => "out_of_range",
            StudyError::WrongScreen { .. } => "wrong_screen",
            StudyError::AlreadyAnswered(_) => "already_answered",
            StudyError::AssignmentComplete => "assignment_complete",
            StudyError::UnknownStimulus(_) => "unknown_stimulus",
            StudyError::Journal(_) => "journal_error",
            StudyError::BadRequest(_) => "bad_request",
            StudyError::UnknownRoute(_) => "unknown_route",
        }
    }
}
