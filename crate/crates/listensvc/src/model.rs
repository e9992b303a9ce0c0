//! Screens, responses and the wire types exchanged with listeners.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use ptkit_core::stats::AxyChoice;

use crate::error::StudyError;

/// System label of the MUSHRA anchor slot.
pub const ANCHOR_SYSTEM: &str = "shuffle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreenKind {
    Mos,
    Mushra,
    Axy,
    Preference,
}

impl ScreenKind {
    /// Audio slots per screen: MOS one stimulus; MUSHRA a reference plus four
    /// systems; AXY the A, X and Y samples; preference a target plus three
    /// candidates.
    pub fn slot_count(self) -> usize {
        match self {
            ScreenKind::Mos => 1,
            ScreenKind::Mushra => 5,
            ScreenKind::Axy => 3,
            ScreenKind::Preference => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScreenKind::Mos => "mos",
            ScreenKind::Mushra => "mushra",
            ScreenKind::Axy => "axy",
            ScreenKind::Preference => "preference",
        }
    }
}

impl fmt::Display for ScreenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub id: String,
    pub kind: ScreenKind,
    /// Stimulus references, one per slot, resolved against the audio root.
    pub stimulus_refs: Vec<String>,
    pub category: String,
    /// System behind each slot. Never sent to listeners.
    pub system_labels: Vec<String>,
    /// Optional item key (e.g. sentence id) used to pair screens in tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
}

impl Screen {
    pub fn validate(&self) -> Result<(), StudyError> {
        let invalid = |reason: String| StudyError::InvalidScreen {
            screen_id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("empty screen id".into()));
        }
        if self.category.is_empty() {
            return Err(invalid("empty category".into()));
        }
        let slots = self.kind.slot_count();
        if self.stimulus_refs.len() != slots {
            return Err(invalid(format!(
                "{} screen needs {slots} stimuli, got {}",
                self.kind,
                self.stimulus_refs.len()
            )));
        }
        if self.system_labels.len() != slots {
            return Err(invalid(format!(
                "{} screen needs {slots} system labels, got {}",
                self.kind,
                self.system_labels.len()
            )));
        }
        if let Some(r) = self.stimulus_refs.iter().find(|r| !is_safe_ref(r)) {
            return Err(invalid(format!("unsafe stimulus reference {r:?}")));
        }
        if self.kind == ScreenKind::Mushra {
            let anchors = self.system_labels[1..]
                .iter()
                .filter(|l| *l == ANCHOR_SYSTEM)
                .count();
            if anchors != 1 {
                return Err(invalid(format!(
                    "mushra screen needs exactly one {ANCHOR_SYSTEM:?} anchor slot, found {anchors}"
                )));
            }
        }
        Ok(())
    }

    /// System whose rating a payload slot carries.
    pub fn rated_system(&self, slot: usize) -> Option<&str> {
        let offset = match self.kind {
            ScreenKind::Mos | ScreenKind::Axy => 0,
            ScreenKind::Mushra | ScreenKind::Preference => 1,
        };
        self.system_labels.get(slot + offset).map(String::as_str)
    }
}

/// Relative path without parent components or a root.
pub fn is_safe_ref(r: &str) -> bool {
    !r.is_empty()
        && !r.starts_with('/')
        && !r.starts_with('\\')
        && !r.contains(':')
        && r.split(['/', '\\']).all(|part| !part.is_empty() && part != "." && part != "..")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    #[serde(default = "default_screens_per_listener")]
    pub screens_per_listener: usize,
    #[serde(default = "default_min_ratings")]
    pub min_ratings_per_screen: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

fn default_screens_per_listener() -> usize {
    36
}

fn default_min_ratings() -> usize {
    8
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            screens_per_listener: default_screens_per_listener(),
            min_ratings_per_screen: default_min_ratings(),
            rng_seed: 0,
        }
    }
}

/// A listener's answer. Numbers are kept wide so out-of-range input is
/// reported rather than failing to parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Payload {
    Mos(i64),
    Mushra(Vec<i64>),
    Axy(AxyChoice),
    Preference(i64),
}

impl Payload {
    pub fn kind(&self) -> ScreenKind {
        match self {
            Payload::Mos(_) => ScreenKind::Mos,
            Payload::Mushra(_) => ScreenKind::Mushra,
            Payload::Axy(_) => ScreenKind::Axy,
            Payload::Preference(_) => ScreenKind::Preference,
        }
    }

    pub fn validate_for(&self, kind: ScreenKind) -> Result<(), StudyError> {
        if self.kind() != kind {
            return Err(StudyError::KindMismatch {
                expected: kind,
                got: self.kind(),
            });
        }
        let out_of_range = |m: String| Err(StudyError::OutOfRange(m));
        match self {
            Payload::Mos(v) if !(1..=5).contains(v) => out_of_range(format!("MOS rating {v} outside 1..=5")),
            Payload::Mushra(v) if v.len() != 4 => {
                out_of_range(format!("MUSHRA payload needs 4 ratings, got {}", v.len()))
            }
            Payload::Mushra(v) => match v.iter().find(|x| !(0..=100).contains(*x)) {
                Some(x) => out_of_range(format!("MUSHRA rating {x} outside 0..=100")),
                None => Ok(()),
            },
            Payload::Preference(i) if !(0..=2).contains(i) => {
                out_of_range(format!("preference index {i} outside 0..=2"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub listener_id: String,
    pub screen_id: String,
    pub payload: Payload,
    /// Unix time in milliseconds.
    pub received_at: u64,
}

pub type ListenerMetadata = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub listener_id: String,
    pub screens: Vec<String>,
    pub cursor: usize,
}

/// One audio slot as the listener sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotView {
    pub slot: usize,
    pub audio_url: String,
}

/// A screen with system identities withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenView {
    pub screen_id: String,
    pub kind: ScreenKind,
    pub slots: Vec<SlotView>,
    /// 1-based position in the listener's assignment.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextScreen {
    Screen { screen: ScreenView },
    Done { total: usize },
}
