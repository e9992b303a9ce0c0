//! Corpus manifest loading, validation and indexing.
//!
//! A manifest is a JSON Lines file with one utterance per line. An optional
//! first line carrying a `"format"` key is treated as a header and skipped.
//! All paths inside the manifest are relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header line written at the top of every manifest produced by this crate.
pub const MANIFEST_HEADER: &str = r#"{"format":"ptkit-manifest","version":1}"#;

/// Slack allowed between the last phone boundary and the recording duration.
const PHONE_END_SLACK_S: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("utterance {id:?}: phone {index} ({label:?}) overlaps or precedes the previous phone")]
    OverlappingPhones {
        id: String,
        index: usize,
        label: String,
    },
    #[error("utterance {id:?}: {message}")]
    Invalid { id: String, message: String },
    #[error("unknown sentence id {0:?}")]
    UnknownSentence(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneInterval {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub sentence_id: String,
    pub text: String,
    /// Unicode scalar values in `text`.
    pub char_len: usize,
    pub phones: Vec<PhoneInterval>,
    pub audio_path: PathBuf,
    pub f0_path: Option<PathBuf>,
    pub duration_s: f64,
}

impl Utterance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        speaker_id: impl Into<String>,
        sentence_id: impl Into<String>,
        text: impl Into<String>,
        phones: Vec<PhoneInterval>,
        audio_path: impl Into<PathBuf>,
        f0_path: Option<PathBuf>,
        duration_s: f64,
    ) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            speaker_id: speaker_id.into(),
            sentence_id: sentence_id.into(),
            char_len: text.chars().count(),
            text,
            phones,
            audio_path: audio_path.into(),
            f0_path,
            duration_s,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid(format!("duration_s must be > 0, got {}", self.duration_s)));
        }
        if self.char_len != self.text.chars().count() {
            return Err(invalid("char_len does not match text".into()));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for (index, p) in self.phones.iter().enumerate() {
            if !(p.start_s >= 0.0 && p.end_s > p.start_s && p.end_s.is_finite()) {
                return Err(invalid(format!(
                    "phone {index} ({:?}) has invalid bounds [{}, {})",
                    p.label, p.start_s, p.end_s
                )));
            }
            if p.start_s < prev_end {
                return Err(CorpusError::OverlappingPhones {
                    id: self.id.clone(),
                    index,
                    label: p.label.clone(),
                });
            }
            prev_end = p.end_s;
        }
        if let Some(last) = self.phones.last() {
            if last.end_s > self.duration_s + PHONE_END_SLACK_S {
                return Err(invalid(format!(
                    "last phone ends at {} s, after duration {} s",
                    last.end_s, self.duration_s
                )));
            }
        }
        Ok(())
    }
}

/// Wire form of one manifest line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    speaker_id: String,
    sentence_id: String,
    text: String,
    audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f0_path: Option<PathBuf>,
    duration_s: f64,
    phones: Vec<(String, f64, f64)>,
}

impl From<ManifestRecord> for Utterance {
    fn from(r: ManifestRecord) -> Self {
        let phones = r
            .phones
            .into_iter()
            .map(|(label, start_s, end_s)| PhoneInterval {
                label,
                start_s,
                end_s,
            })
            .collect();
        Utterance::new(
            r.id,
            r.speaker_id,
            r.sentence_id,
            r.text,
            phones,
            r.audio_path,
            r.f0_path,
            r.duration_s,
        )
    }
}

impl From<&Utterance> for ManifestRecord {
    fn from(u: &Utterance) -> Self {
        ManifestRecord {
            id: u.id.clone(),
            speaker_id: u.speaker_id.clone(),
            sentence_id: u.sentence_id.clone(),
            text: u.text.clone(),
            audio_path: u.audio_path.clone(),
            f0_path: u.f0_path.clone(),
            duration_s: u.duration_s,
            phones: u
                .phones
                .iter()
                .map(|p| (p.label.clone(), p.start_s, p.end_s))
                .collect(),
        }
    }
}

/// A validated, immutable corpus index.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    root_dir: PathBuf,
    utterances: Vec<Utterance>,
    speakers: BTreeSet<String>,
    sentences: BTreeMap<String, Vec<String>>,
    by_id: HashMap<String, usize>,
}

impl CorpusManifest {
    /// Builds the indices and checks every invariant.
    pub fn new(root_dir: impl Into<PathBuf>, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(utterances.len());
        let mut speakers = BTreeSet::new();
        let mut sentences: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, u) in utterances.iter().enumerate() {
            u.validate()?;
            if by_id.insert(u.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(u.id.clone()));
            }
            speakers.insert(u.speaker_id.clone());
            sentences
                .entry(u.sentence_id.clone())
                .or_default()
                .push(u.id.clone());
        }
        Ok(Self {
            root_dir: root_dir.into(),
            utterances,
            speakers,
            sentences,
            by_id,
        })
    }

    pub fn root_dir(&self) -> &Path {
        &self.root_dir
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn speakers(&self) -> &BTreeSet<String> {
        &self.speakers
    }

    /// Utterance ids grouped by sentence id, in manifest order.
    pub fn sentences(&self) -> &BTreeMap<String, Vec<String>> {
        &self.sentences
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.by_id.get(id).map(|&i| &self.utterances[i])
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Resolves a manifest-relative path against the root directory.
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root_dir.join(rel)
    }

    /// Keeps utterances whose text has at most `max_chars` characters.
    pub fn filter_by_char_length(&self, max_chars: usize) -> CorpusManifest {
        let kept = self
            .utterances
            .iter()
            .filter(|u| u.char_len <= max_chars)
            .cloned()
            .collect();
        CorpusManifest::new(self.root_dir.clone(), kept)
            .expect("a subset of a valid manifest is valid")
    }

    /// All renditions of a sentence, optionally without one speaker's.
    pub fn parallel_renditions(
        &self,
        sentence_id: &str,
        exclude_speaker: Option<&str>,
    ) -> Result<Vec<&Utterance>, CorpusError> {
        let ids = self
            .sentences
            .get(sentence_id)
            .ok_or_else(|| CorpusError::UnknownSentence(sentence_id.to_string()))?;
        Ok(ids
            .iter()
            .filter_map(|id| self.get(id))
            .filter(|u| exclude_speaker.is_none_or(|s| u.speaker_id != s))
            .collect())
    }

    /// Serializes to manifest text, header line included.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for u in &self.utterances {
            let line = serde_json::to_string(&ManifestRecord::from(u))
                .expect("manifest records always serialize");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Parses manifest text. `root_dir` anchors the relative paths.
    pub fn from_jsonl(text: &str, root_dir: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let mut utterances = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if i == 0 && is_header(trimmed) {
                continue;
            }
            let record: ManifestRecord =
                serde_json::from_str(trimmed).map_err(|e| CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            utterances.push(Utterance::from(record));
        }
        CorpusManifest::new(root_dir, utterances)
    }
}

fn is_header(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key("format")))
        .unwrap_or(false)
}

/// A loaded manifest plus the load-time warnings.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: CorpusManifest,
    /// Ids of utterances whose audio file does not exist.
    pub missing_audio: Vec<String>,
}

/// Reads and validates a manifest file. Missing audio files are reported,
/// not rejected.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<LoadedManifest, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = CorpusManifest::from_jsonl(&text, root)?;
    let missing_audio: Vec<String> = manifest
        .utterances()
        .iter()
        .filter(|u| !manifest.resolve(&u.audio_path).exists())
        .map(|u| u.id.clone())
        .collect();
    for id in &missing_audio {
        log::warn!("utterance {id}: audio file missing");
    }
    Ok(LoadedManifest {
        manifest,
        missing_audio,
    })
}

/// Writes a manifest atomically.
pub fn write_manifest(m: &CorpusManifest, path: impl AsRef<Path>) -> std::io::Result<()> {
    crate::fsutil::atomic_write(path.as_ref(), m.to_jsonl().as_bytes())
}
