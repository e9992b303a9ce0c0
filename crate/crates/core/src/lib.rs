//! Corpus pairing, F0 analysis, delexification and evaluation statistics for
//! prosody-transfer experiments.
//!
//! * [`corpus`] loads and indexes the utterance manifest.
//! * [`pitch`] estimates or loads F0 tracks and builds per-phone contours.
//! * [`dtw`] and [`pairing`] select (target, reference) training pairs.
//! * [`metrics`] scores synthesized F0 against references.
//! * [`delexify`] low-pass filters stimuli.
//! * [`stats`] aggregates listening-test responses.

pub mod audio;
pub mod corpus;
pub mod delexify;
pub mod dtw;
pub mod fsutil;
pub mod metrics;
pub mod pairing;
pub mod pitch;
pub mod stats;

pub use corpus::{load_manifest, CorpusManifest, PhoneInterval, Utterance};
pub use dtw::{dtw_alignment, dtw_distance};
pub use pairing::{PairRecord, PairingConfig, Strategy};
pub use pitch::{F0Track, PhoneContour, SpeakerF0Stats};
