//! F0 tracks, per-speaker log-F0 statistics and per-phone contours.
//!
//! Frame `i` of a track is centred at `i * hop_s` seconds.

mod yin;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, Utterance};

pub use yin::{estimate_f0, YinConfig};

/// Floor applied to a speaker's log-F0 standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PitchError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("hop_s must be positive, got {0}")]
    BadHop(f64),
    #[error("values and voicing flags differ in length ({values} vs {voiced})")]
    LengthMismatch { values: usize, voiced: usize },
    #[error("frame {frame} is voiced but has non-positive F0 {value}")]
    NonPositiveVoiced { frame: usize, value: f64 },
    #[error("audio has {samples} samples, shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("invalid estimator configuration: {0}")]
    BadConfig(String),
    #[error("track for utterance {0:?} has no entry in the manifest")]
    UnknownUtterance(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    hop_s: f64,
    values_hz: Vec<f64>,
    voiced: Vec<bool>,
}

impl F0Track {
    pub fn new(hop_s: f64, values_hz: Vec<f64>, voiced: Vec<bool>) -> Result<Self, PitchError> {
        if !(hop_s > 0.0 && hop_s.is_finite()) {
            return Err(PitchError::BadHop(hop_s));
        }
        if values_hz.len() != voiced.len() {
            return Err(PitchError::LengthMismatch {
                values: values_hz.len(),
                voiced: voiced.len(),
            });
        }
        if let Some(frame) = (0..voiced.len()).find(|&i| voiced[i] && !is_valid_f0(values_hz[i])) {
            return Err(PitchError::NonPositiveVoiced {
                frame,
                value: values_hz[frame],
            });
        }
        Ok(Self {
            hop_s,
            values_hz,
            voiced,
        })
    }

    /// `None` frames are unvoiced and stored as 0 Hz.
    pub fn from_frames(hop_s: f64, frames: &[Option<f64>]) -> Result<Self, PitchError> {
        let values = frames.iter().map(|f| f.unwrap_or(0.0)).collect();
        let voiced = frames.iter().map(Option::is_some).collect();
        Self::new(hop_s, values, voiced)
    }

    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    pub fn values_hz(&self) -> &[f64] {
        &self.values_hz
    }

    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }

    /// F0 of frame `i` if voiced.
    pub fn frame(&self, i: usize) -> Option<f64> {
        self.voiced[i].then(|| self.values_hz[i])
    }

    /// Voiced F0 values in frame order.
    pub fn voiced_values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).filter_map(|i| self.frame(i))
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|&&v| v).count()
    }

    /// Serializes to the text track format.
    pub fn to_text(&self) -> String {
        let mut out = format!("hop_s={}\n", self.hop_s);
        for (v, voiced) in self.values_hz.iter().zip(&self.voiced) {
            out.push_str(&format!("{},{}\n", v, if *voiced { 'v' } else { 'u' }));
        }
        out
    }
}

fn is_valid_f0(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Parses the text track format: a `hop_s=<float>` line, then one
/// `value_hz,v|u` row per frame.
///
/// Voiced rows with a non-positive value are coerced to unvoiced; their
/// frame indices are returned alongside the track.
pub fn parse_f0_track(text: &str) -> Result<(F0Track, Vec<usize>), PitchError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(PitchError::Parse {
        line: 1,
        message: "missing hop_s header".into(),
    })?;
    let hop_s: f64 = header
        .trim()
        .strip_prefix("hop_s=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| PitchError::Parse {
            line: 1,
            message: format!("expected hop_s=<float>, got {header:?}"),
        })?;
    if !(hop_s > 0.0 && hop_s.is_finite()) {
        return Err(PitchError::BadHop(hop_s));
    }
    let mut values = Vec::new();
    let mut voiced = Vec::new();
    let mut coerced = Vec::new();
    for (i, line) in lines {
        let bad = |message: String| PitchError::Parse {
            line: i + 1,
            message,
        };
        let (value, flag) = line
            .trim()
            .split_once(',')
            .ok_or_else(|| bad(format!("expected value_hz,v|u, got {line:?}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad F0 value {value:?}: {e}")))?;
        let mut is_voiced = match flag.trim() {
            "v" => true,
            "u" => false,
            other => return Err(bad(format!("voicing flag must be v or u, got {other:?}"))),
        };
        if is_voiced && !is_valid_f0(value) {
            log::warn!("line {}: voiced frame with F0 {value} treated as unvoiced", i + 1);
            coerced.push(values.len());
            is_voiced = false;
        }
        values.push(value);
        voiced.push(is_voiced);
    }
    Ok((F0Track::new(hop_s, values, voiced)?, coerced))
}

pub fn load_f0_track(path: impl AsRef<Path>) -> Result<F0Track, PitchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PitchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_f0_track(&text).map(|(t, _)| t)
}

pub fn write_f0_track(path: impl AsRef<Path>, track: &F0Track) -> Result<(), PitchError> {
    let path = path.as_ref();
    crate::fsutil::atomic_write(path, track.to_text().as_bytes()).map_err(|source| PitchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Natural-log F0 statistics over a speaker's voiced frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerF0Stats {
    pub speaker_id: String,
    pub mean_log_f0: f64,
    /// Population standard deviation.
    pub std_log_f0: f64,
    pub n_voiced_frames: usize,
}

impl SpeakerF0Stats {
    /// Statistics over a set of log-F0 values; `None` when empty.
    pub fn from_log_values(speaker_id: impl Into<String>, logs: &[f64]) -> Option<Self> {
        if logs.is_empty() {
            return None;
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            speaker_id: speaker_id.into(),
            mean_log_f0: mean,
            std_log_f0: var.sqrt(),
            n_voiced_frames: logs.len(),
        })
    }

    /// Geometric-mean F0 in Hz.
    pub fn mean_hz(&self) -> f64 {
        self.mean_log_f0.exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpeakerStatsReport {
    pub stats: BTreeMap<String, SpeakerF0Stats>,
    /// Speakers with tracks but no voiced frame at all.
    pub no_voiced_frames: Vec<String>,
}

/// Pools voiced log-F0 per speaker across all their utterances.
pub fn speaker_stats(
    tracks: &HashMap<String, F0Track>,
    m: &CorpusManifest,
) -> Result<SpeakerStatsReport, PitchError> {
    let mut pooled: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut ids: Vec<&String> = tracks.keys().collect();
    ids.sort();
    for id in ids {
        let u = m
            .get(id)
            .ok_or_else(|| PitchError::UnknownUtterance(id.clone()))?;
        pooled
            .entry(u.speaker_id.as_str())
            .or_default()
            .extend(tracks[id].voiced_values().map(f64::ln));
    }
    let mut report = SpeakerStatsReport::default();
    for (speaker, logs) in pooled {
        match SpeakerF0Stats::from_log_values(speaker, &logs) {
            Some(s) => {
                report.stats.insert(speaker.to_string(), s);
            }
            None => {
                log::warn!("speaker {speaker}: no voiced frames, excluded from statistics");
                report.no_voiced_frames.push(speaker.to_string());
            }
        }
    }
    Ok(report)
}

/// Framewise z-scored log-F0; unvoiced frames are `None`.
pub fn normalize_track(t: &F0Track, s: &SpeakerF0Stats) -> Vec<Option<f64>> {
    let scale = s.std_log_f0.max(STD_FLOOR);
    (0..t.len())
        .map(|i| t.frame(i).map(|hz| (hz.ln() - s.mean_log_f0) / scale))
        .collect()
}

/// Per-phone mean of speaker-normalized log-F0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneContour {
    pub utterance_id: String,
    pub values: Vec<f64>,
    /// Index of each value's phone in the utterance's phone list.
    pub phone_indices: Vec<usize>,
}

impl PhoneContour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// First frame index whose centre time is at or after `t`.
fn first_frame_at_or_after(t: f64, hop_s: f64) -> usize {
    let mut i = (t / hop_s).ceil().max(0.0) as usize;
    while i > 0 && (i - 1) as f64 * hop_s >= t {
        i -= 1;
    }
    while (i as f64) * hop_s < t {
        i += 1;
    }
    i
}

/// Averages framewise z-values within each phone. A frame belongs to the
/// phone whose half-open interval contains its centre time. Phones without
/// voiced frames are left out.
pub fn phone_contour(u: &Utterance, z: &[Option<f64>], hop_s: f64) -> PhoneContour {
    let needed = first_frame_at_or_after(u.phones.last().map_or(0.0, |p| p.end_s), hop_s);
    if z.len() + 1 < needed {
        log::warn!(
            "utterance {}: {} frames do not cover the phone span ({} needed)",
            u.id,
            z.len(),
            needed
        );
    }
    let mut values = Vec::new();
    let mut phone_indices = Vec::new();
    for (k, p) in u.phones.iter().enumerate() {
        let lo = first_frame_at_or_after(p.start_s, hop_s).min(z.len());
        let hi = first_frame_at_or_after(p.end_s, hop_s).min(z.len());
        let (sum, n) = z[lo..hi]
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n > 0 {
            values.push(sum / n as f64);
            phone_indices.push(k);
        }
    }
    PhoneContour {
        utterance_id: u.id.clone(),
        values,
        phone_indices,
    }
}
