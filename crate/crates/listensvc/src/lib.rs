//! Listening-test service.
//!
//! A study is a fixed set of screens. Listeners register, receive a
//! stratified assignment of screens, and answer them in order. Every state
//! change is an event in an append-only journal that is replayed on start.

pub mod error;
pub mod http;
pub mod journal;
pub mod model;
pub mod report;
pub mod service;
pub mod study;

pub use error::StudyError;
pub use model::{Assignment, NextScreen, Payload, Response, Screen, ScreenKind, StudyConfig};
pub use service::StudyService;
pub use study::{Study, StudyExport};
