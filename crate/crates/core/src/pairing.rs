//! Reference selection for prosody-transfer training and the held-out
//! evaluation set.
//!
//! Three strategies produce (target, reference) pairs:
//!
//! * `text`: another speaker's rendition of the target's sentence.
//! * `f0`: the utterance whose per-phone normalized log-F0 contour is nearest
//!   under DTW, restricted to contours of similar phone count, followed by a
//!   mean + k·σ outlier cut over all selected distances.
//! * `shuffle`: any other utterance, uniformly at random.
//!
//! Every strategy is deterministic for a given manifest and config.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, Utterance};
use crate::dtw::dtw_distance;
use crate::pitch::PhoneContour;

#[derive(Debug, Error)]
pub enum PairingError {
    #[error("invalid pairing config: {0}")]
    BadConfig(String),
    #[error("shuffle pairing needs at least 2 utterances, manifest has {0}")]
    TooFewUtterances(usize),
    #[error("insufficient unseen data: {0}")]
    InsufficientData(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Text,
    F0,
    Shuffle,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Text => "text",
            Strategy::F0 => "f0",
            Strategy::Shuffle => "shuffle",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Strategy::Text),
            "f0" => Ok(Strategy::F0),
            "shuffle" => Ok(Strategy::Shuffle),
            other => Err(format!("unknown strategy {other:?} (expected text, f0 or shuffle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub target_id: String,
    pub reference_id: String,
    pub strategy: Strategy,
    /// Present for `f0` pairs only.
    pub dtw_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingConfig {
    /// Allowed phone-count difference as a fraction of the target's count.
    pub length_tolerance: f64,
    /// Pairs farther than mean + this many standard deviations are dropped.
    pub cutoff_sigmas: f64,
    pub rng_seed: u64,
    /// Caps the F0 search to the nearest-length candidates.
    pub max_candidates: Option<usize>,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            length_tolerance: 0.15,
            cutoff_sigmas: 1.0,
            rng_seed: 0,
            max_candidates: None,
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<(), PairingError> {
        if !(self.length_tolerance > 0.0 && self.length_tolerance < 1.0) {
            return Err(PairingError::BadConfig(format!(
                "length_tolerance {} outside (0, 1)",
                self.length_tolerance
            )));
        }
        if !(self.cutoff_sigmas >= 0.0 && self.cutoff_sigmas.is_finite()) {
            return Err(PairingError::BadConfig(format!(
                "cutoff_sigmas {} must be >= 0",
                self.cutoff_sigmas
            )));
        }
        if self.max_candidates == Some(0) {
            return Err(PairingError::BadConfig("max_candidates must be positive".into()));
        }
        Ok(())
    }

    /// Largest phone-count difference accepted for a target of `len` phones.
    pub fn max_length_difference(&self, len: usize) -> usize {
        (self.length_tolerance * len as f64 + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub target_id: String,
    pub reason: String,
}

/// Summary of the distance cut applied to F0 pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub mean: f64,
    /// Population standard deviation over the selected pairs.
    pub std: f64,
    pub threshold: f64,
    pub removed: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairingOutcome {
    /// Sorted by target id.
    pub pairs: Vec<PairRecord>,
    pub skipped: Vec<SkipEntry>,
    pub cutoff: Option<Cutoff>,
}

fn sorted_utterances(m: &CorpusManifest) -> Vec<&Utterance> {
    let mut v: Vec<&Utterance> = m.utterances().iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Pairs each target with another speaker's rendition of the same sentence.
pub fn select_text_pairs(m: &CorpusManifest, cfg: &PairingConfig) -> Result<PairingOutcome, PairingError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = PairingOutcome::default();
    for target in sorted_utterances(m) {
        let mut candidates: Vec<&Utterance> = m
            .parallel_renditions(&target.sentence_id, Some(&target.speaker_id))
            .expect("sentence of a manifest utterance exists");
        if candidates.is_empty() {
            out.skipped.push(SkipEntry {
                target_id: target.id.clone(),
                reason: "no rendition of the sentence by another speaker".into(),
            });
            continue;
        }
        candidates.sort_by(|a, b| a.id.cmp(&b.id));
        let pick = candidates[rng.random_range(0..candidates.len())];
        out.pairs.push(PairRecord {
            target_id: target.id.clone(),
            reference_id: pick.id.clone(),
            strategy: Strategy::Text,
            dtw_distance: None,
        });
    }
    Ok(out)
}

/// Pairs each target with a uniformly random other utterance.
pub fn select_shuffle_pairs(m: &CorpusManifest, cfg: &PairingConfig) -> Result<PairingOutcome, PairingError> {
    cfg.validate()?;
    let utts = sorted_utterances(m);
    if utts.len() < 2 {
        return Err(PairingError::TooFewUtterances(utts.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let pairs = utts
        .iter()
        .enumerate()
        .map(|(i, target)| {
            // draw from every index except the target's own
            let mut j = rng.random_range(0..utts.len() - 1);
            if j >= i {
                j += 1;
            }
            PairRecord {
                target_id: target.id.clone(),
                reference_id: utts[j].id.clone(),
                strategy: Strategy::Shuffle,
                dtw_distance: None,
            }
        })
        .collect();
    Ok(PairingOutcome {
        pairs,
        ..Default::default()
    })
}

struct Candidate<'a> {
    id: &'a str,
    values: &'a [f64],
}

/// Nearest reference for one target, ties to the smallest id.
fn nearest<'a>(
    target: &Candidate<'a>,
    by_len: &[Candidate<'a>],
    cfg: &PairingConfig,
) -> Option<(&'a str, f64)> {
    let len = target.values.len();
    let slack = cfg.max_length_difference(len);
    let lo = by_len.partition_point(|c| c.values.len() + slack < len);
    let hi = by_len.partition_point(|c| c.values.len() <= len + slack);
    let mut eligible: Vec<&Candidate> = by_len[lo..hi].iter().filter(|c| c.id != target.id).collect();
    if let Some(cap) = cfg.max_candidates {
        eligible.sort_by(|a, b| {
            a.values
                .len()
                .abs_diff(len)
                .cmp(&b.values.len().abs_diff(len))
                .then_with(|| a.id.cmp(b.id))
        });
        eligible.truncate(cap);
    }
    eligible
        .into_iter()
        .map(|c| {
            let d = dtw_distance(target.values, c.values).expect("contours are non-empty");
            (c.id, d)
        })
        .min_by(|(ia, da), (ib, db)| da.total_cmp(db).then_with(|| ia.cmp(ib)))
}

/// Selects the DTW-nearest contour for every target and drops outlying pairs.
///
/// Only utterances present in both `contours` and `m` with a non-empty
/// contour take part, as targets and as candidates.
pub fn select_f0_pairs(
    contours: &HashMap<String, PhoneContour>,
    m: &CorpusManifest,
    cfg: &PairingConfig,
) -> Result<PairingOutcome, PairingError> {
    cfg.validate()?;
    let mut out = PairingOutcome::default();
    let mut targets: Vec<Candidate> = Vec::new();
    for u in sorted_utterances(m) {
        match contours.get(&u.id) {
            Some(c) if !c.is_empty() => targets.push(Candidate {
                id: &u.id,
                values: &c.values,
            }),
            Some(_) => out.skipped.push(SkipEntry {
                target_id: u.id.clone(),
                reason: "empty contour (no voiced phones)".into(),
            }),
            None => out.skipped.push(SkipEntry {
                target_id: u.id.clone(),
                reason: "no contour".into(),
            }),
        }
    }
    let mut by_len: Vec<Candidate> = targets
        .iter()
        .map(|c| Candidate {
            id: c.id,
            values: c.values,
        })
        .collect();
    by_len.sort_by(|a, b| a.values.len().cmp(&b.values.len()).then_with(|| a.id.cmp(b.id)));

    #[cfg(feature = "parallel")]
    let found: Vec<Option<(&str, f64)>> = {
        use rayon::prelude::*;
        targets.par_iter().map(|t| nearest(t, &by_len, cfg)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let found: Vec<Option<(&str, f64)>> = targets.iter().map(|t| nearest(t, &by_len, cfg)).collect();

    let mut selected = Vec::new();
    for (t, hit) in targets.iter().zip(found) {
        match hit {
            Some((reference, d)) => selected.push(PairRecord {
                target_id: t.id.to_string(),
                reference_id: reference.to_string(),
                strategy: Strategy::F0,
                dtw_distance: Some(d),
            }),
            None => out.skipped.push(SkipEntry {
                target_id: t.id.to_string(),
                reason: format!(
                    "no candidate within ±{} phones of {}",
                    cfg.max_length_difference(t.values.len()),
                    t.values.len()
                ),
            }),
        }
    }

    if !selected.is_empty() {
        let distances: Vec<f64> = selected.iter().filter_map(|p| p.dtw_distance).collect();
        let (mean, std, threshold) = outlier_threshold(&distances, cfg.cutoff_sigmas);
        let mut removed = 0;
        for p in selected {
            let d = p.dtw_distance.expect("f0 pairs carry a distance");
            if d > threshold {
                removed += 1;
                out.skipped.push(SkipEntry {
                    target_id: p.target_id,
                    reason: format!("dtw distance {d} above cutoff {threshold}"),
                });
            } else {
                out.pairs.push(p);
            }
        }
        out.cutoff = Some(Cutoff {
            mean,
            std,
            threshold,
            removed,
        });
    }
    out.skipped.sort_by(|a, b| a.target_id.cmp(&b.target_id));
    Ok(out)
}

/// Mean, population standard deviation and `mean + sigmas * std` of a
/// non-empty distance set.
pub fn outlier_threshold(distances: &[f64], sigmas: f64) -> (f64, f64, f64) {
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, std, mean + sigmas * std)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SameText,
    DifferentText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationEntry {
    pub sentence_id: String,
    pub target_speaker: String,
    /// The target speaker's own rendition of the sentence.
    pub target_id: String,
    pub reference_id: String,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationSet {
    pub entries: Vec<EvaluationEntry>,
    pub same_text: usize,
    pub different_text: usize,
}

impl EvaluationSet {
    /// Checks that no sentence or reference of the set was used in training.
    pub fn is_disjoint_from(&self, m: &CorpusManifest, training: &[PairRecord]) -> bool {
        let used = used_ids(training);
        self.entries.iter().all(|e| {
            !used.contains(e.reference_id.as_str())
                && m.sentences()
                    .get(&e.sentence_id)
                    .is_some_and(|ids| ids.iter().all(|id| !used.contains(id.as_str())))
        })
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entries serialize") + "\n")
            .collect()
    }
}

fn used_ids(training: &[PairRecord]) -> HashSet<&str> {
    training
        .iter()
        .flat_map(|p| [p.target_id.as_str(), p.reference_id.as_str()])
        .collect()
}

/// Draws `n_sentences` test sentences that no training pair touches, split
/// between same-text and different-text references.
pub fn build_evaluation_set(
    m: &CorpusManifest,
    training: &[PairRecord],
    n_sentences: usize,
    same_text_fraction: f64,
    rng_seed: u64,
) -> Result<EvaluationSet, PairingError> {
    if !(0.0..=1.0).contains(&same_text_fraction) {
        return Err(PairingError::BadConfig(format!(
            "same_text_fraction {same_text_fraction} outside [0, 1]"
        )));
    }
    let used = used_ids(training);
    let unseen: Vec<&String> = m
        .sentences()
        .iter()
        .filter(|(_, ids)| ids.iter().all(|id| !used.contains(id.as_str())))
        .map(|(s, _)| s)
        .collect();
    let n_same = (n_sentences as f64 * same_text_fraction).round() as usize;
    let n_diff = n_sentences - n_same;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order = unseen.clone();
    order.shuffle(&mut rng);

    let speakers_of = |s: &str| -> BTreeSet<&str> {
        m.parallel_renditions(s, None)
            .expect("sentence exists")
            .into_iter()
            .map(|u| u.speaker_id.as_str())
            .collect()
    };
    let mut same: Vec<&String> = Vec::new();
    let mut rest: Vec<&String> = Vec::new();
    for s in order {
        if same.len() < n_same && speakers_of(s).len() >= 2 {
            same.push(s);
        } else {
            rest.push(s);
        }
    }
    if same.len() < n_same {
        return Err(PairingError::InsufficientData(format!(
            "need {n_same} unseen multi-speaker sentences, found {}",
            same.len()
        )));
    }
    if rest.len() < n_diff {
        return Err(PairingError::InsufficientData(format!(
            "need {n_sentences} unseen sentences, found {}",
            unseen.len()
        )));
    }
    let different = &rest[..n_diff];
    let test_sentences: HashSet<&str> = same.iter().chain(different).map(|s| s.as_str()).collect();

    // unseen utterances outside the test sentences, as different-text references
    let outside: Vec<&Utterance> = sorted_utterances(m)
        .into_iter()
        .filter(|u| !used.contains(u.id.as_str()) && !test_sentences.contains(u.sentence_id.as_str()))
        .collect();
    let inside: Vec<&Utterance> = sorted_utterances(m)
        .into_iter()
        .filter(|u| test_sentences.contains(u.sentence_id.as_str()))
        .collect();

    let mut entries = Vec::with_capacity(n_sentences);
    for (sentences, condition) in [(&same[..], Condition::SameText), (different, Condition::DifferentText)] {
        for s in sentences {
            let mut renditions = m.parallel_renditions(s, None).expect("sentence exists");
            renditions.sort_by(|a, b| a.id.cmp(&b.id));
            let target = if condition == Condition::SameText {
                let multi: Vec<&&Utterance> = renditions
                    .iter()
                    .filter(|u| renditions.iter().any(|o| o.speaker_id != u.speaker_id))
                    .collect();
                *multi[rng.random_range(0..multi.len())]
            } else {
                renditions[rng.random_range(0..renditions.len())]
            };
            let pool: Vec<&Utterance> = match condition {
                Condition::SameText => renditions
                    .iter()
                    .copied()
                    .filter(|u| u.speaker_id != target.speaker_id)
                    .collect(),
                Condition::DifferentText => {
                    let primary = other_text_refs(&outside, s, &target.speaker_id);
                    if primary.is_empty() {
                        other_text_refs(&inside, s, &target.speaker_id)
                    } else {
                        primary
                    }
                }
            };
            if pool.is_empty() {
                return Err(PairingError::InsufficientData(format!(
                    "no unseen reference for sentence {s:?} ({condition:?})"
                )));
            }
            let reference = pool[rng.random_range(0..pool.len())];
            entries.push(EvaluationEntry {
                sentence_id: (*s).clone(),
                target_speaker: target.speaker_id.clone(),
                target_id: target.id.clone(),
                reference_id: reference.id.clone(),
                condition,
            });
        }
    }
    entries.sort_by(|a, b| (a.condition, &a.sentence_id).cmp(&(b.condition, &b.sentence_id)));
    Ok(EvaluationSet {
        entries,
        same_text: n_same,
        different_text: n_diff,
    })
}

fn other_text_refs<'a>(pool: &[&'a Utterance], sentence_id: &str, speaker_id: &str) -> Vec<&'a Utterance> {
    pool.iter()
        .copied()
        .filter(|u| u.sentence_id != sentence_id && u.speaker_id != speaker_id)
        .collect()
}

/// Pair manifest text: one JSON record per line, sorted by target id.
pub fn pairs_to_jsonl(pairs: &[PairRecord]) -> String {
    let mut sorted: Vec<&PairRecord> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.target_id.cmp(&b.target_id));
    sorted
        .into_iter()
        .map(|p| serde_json::to_string(p).expect("pair records serialize") + "\n")
        .collect()
}

pub fn pairs_from_jsonl(text: &str) -> Result<Vec<PairRecord>, PairingError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PairingError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Skip report text: `target_id<TAB>reason` rows under a header.
pub fn skip_report(skipped: &[SkipEntry]) -> String {
    let mut out = String::from("target_id\treason\n");
    for s in skipped {
        out.push_str(&format!("{}\t{}\n", s.target_id, s.reason));
    }
    out
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>, PairingError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PairingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    pairs_from_jsonl(&text)
}
