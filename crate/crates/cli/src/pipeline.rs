use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;
use serde_json::json;

use ptkit_core::audio::read_wav;
use ptkit_core::corpus::{load_manifest, CorpusManifest};
use ptkit_core::delexify::{delex_file_name, delexify_dir, delexify_wav, FilterSpec};
use ptkit_core::metrics::{
    build_reports, f0_dtw_error, mean_f0_target_error, mean_f0_utterance_error, report_to_tsv, PairMeasurement,
};
use ptkit_core::pairing::{
    build_evaluation_set, pairs_to_jsonl, read_pairs, select_f0_pairs, select_shuffle_pairs, select_text_pairs,
    skip_report, PairingConfig, PairingOutcome, Strategy,
};
use ptkit_core::pitch::{
    estimate_f0, load_f0_track, normalize_track, phone_contour, speaker_stats, F0Track, PhoneContour,
    SpeakerF0Stats, YinConfig,
};

use crate::output::{distinct, require_dir, require_file, Outputs};
use crate::{DelexifyArgs, EvalsetArgs, IngestArgs, MeanF0Reference, MetricsArgs, PairArgs, PitchArgs};

fn manifest(path: &Path) -> Result<CorpusManifest> {
    require_file(path, "manifest")?;
    let loaded = load_manifest(path).with_context(|| format!("loading {}", path.display()))?;
    if !loaded.missing_audio.is_empty() {
        log::warn!("{} utterances have no audio file", loaded.missing_audio.len());
    }
    Ok(loaded.manifest)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    require_file(&a.manifest, "manifest")?;
    if let Some(out) = &a.out {
        distinct(out, &[&a.manifest])?;
    }
    let loaded = load_manifest(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let mut m = loaded.manifest;
    let before = m.len();
    if let Some(max) = a.max_chars {
        m = m.filter_by_char_length(max);
    }
    let mut outputs = Outputs::new();
    if let Some(out) = &a.out {
        outputs.write(out, m.to_jsonl().as_bytes())?;
    }
    outputs.commit();
    print_json(&json!({
        "utterances": before,
        "kept": m.len(),
        "speakers": m.speakers().len(),
        "sentences": m.sentences().len(),
        "missing_audio": loaded.missing_audio,
    }));
    Ok(())
}

fn file_safe(id: &str) -> Result<&str> {
    ensure!(
        !id.is_empty() && !id.contains(['/', '\\']) && id != "." && id != "..",
        "utterance id {id:?} cannot be used as a file name"
    );
    Ok(id)
}

fn track_for(m: &CorpusManifest, id: &str, recompute: bool, yin: &YinConfig) -> Result<(F0Track, bool)> {
    let u = m.get(id).expect("id from manifest");
    if let (Some(p), false) = (&u.f0_path, recompute) {
        let path = m.resolve(p);
        let t = load_f0_track(&path).with_context(|| format!("utterance {id}: {}", path.display()))?;
        return Ok((t, false));
    }
    let path = m.resolve(&u.audio_path);
    let audio = read_wav(&path).with_context(|| format!("utterance {id}: {}", path.display()))?;
    let t = estimate_f0(&audio, yin).with_context(|| format!("utterance {id}: F0 estimation"))?;
    Ok((t, true))
}

pub fn pitch(a: &PitchArgs) -> Result<()> {
    let m = manifest(&a.manifest)?;
    let yin = a.yin.config();
    let mut ids: Vec<&str> = m.utterances().iter().map(|u| u.id.as_str()).collect();
    ids.sort_unstable();
    for id in &ids {
        file_safe(id)?;
    }

    let mut tracks: HashMap<String, F0Track> = HashMap::new();
    let mut estimated = Vec::new();
    for id in &ids {
        let (t, est) = track_for(&m, id, a.recompute, &yin)?;
        if est {
            estimated.push(*id);
        }
        tracks.insert(id.to_string(), t);
    }
    let report = speaker_stats(&tracks, &m)?;
    let mut contours: BTreeMap<&str, PhoneContour> = BTreeMap::new();
    let mut empty = 0usize;
    for id in &ids {
        let u = m.get(id).expect("id from manifest");
        let Some(stats) = report.stats.get(&u.speaker_id) else {
            continue;
        };
        let t = &tracks[*id];
        let c = phone_contour(u, &normalize_track(t, stats), t.hop_s());
        if c.is_empty() {
            empty += 1;
        }
        contours.insert(id, c);
    }

    let mut outputs = Outputs::new();
    outputs.dir(&a.out_dir)?;
    for id in &estimated {
        let path = a.out_dir.join("tracks").join(format!("{id}.f0"));
        outputs.write(&path, tracks[*id].to_text().as_bytes())?;
    }
    for (id, c) in &contours {
        let path = a.out_dir.join("contours").join(format!("{id}.json"));
        outputs.write(&path, (serde_json::to_string(c)? + "\n").as_bytes())?;
    }
    let stats_json = serde_json::to_string_pretty(&report.stats)? + "\n";
    outputs.write(&a.out_dir.join("speaker_stats.json"), stats_json.as_bytes())?;
    outputs.commit();
    print_json(&json!({
        "utterances": ids.len(),
        "estimated": estimated.len(),
        "contours": contours.len(),
        "empty_contours": empty,
        "speakers": report.stats.len(),
        "speakers_without_voiced_frames": report.no_voiced_frames,
    }));
    Ok(())
}

pub fn load_contours(dir: &Path) -> Result<HashMap<String, PhoneContour>> {
    require_dir(dir, "contour directory")?;
    let mut out = HashMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let c: PhoneContour =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        out.insert(c.utterance_id.clone(), c);
    }
    Ok(out)
}

pub fn pair(a: &PairArgs) -> Result<()> {
    let skips = a.skips.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".skipped.tsv");
        PathBuf::from(s)
    });
    distinct(&a.out, &[&a.manifest])?;
    let cfg = PairingConfig {
        length_tolerance: a.length_tolerance,
        cutoff_sigmas: a.cutoff_sigmas,
        rng_seed: a.seed,
        max_candidates: a.max_candidates,
    };
    cfg.validate()?;
    let contours = match (a.strategy, &a.contours) {
        (Strategy::F0, Some(dir)) => Some(load_contours(dir)?),
        (Strategy::F0, None) => bail!("--contours is required for the f0 strategy"),
        (_, Some(_)) => {
            log::warn!("--contours is ignored for the {} strategy", a.strategy);
            None
        }
        _ => None,
    };
    let m = manifest(&a.manifest)?;
    let outcome: PairingOutcome = match a.strategy {
        Strategy::Text => select_text_pairs(&m, &cfg)?,
        Strategy::Shuffle => select_shuffle_pairs(&m, &cfg)?,
        Strategy::F0 => select_f0_pairs(contours.as_ref().expect("loaded above"), &m, &cfg)?,
    };
    let mut outputs = Outputs::new();
    outputs.write(&a.out, pairs_to_jsonl(&outcome.pairs).as_bytes())?;
    outputs.write(&skips, skip_report(&outcome.skipped).as_bytes())?;
    outputs.commit();
    print_json(&json!({
        "strategy": a.strategy.to_string(),
        "pairs": outcome.pairs.len(),
        "skipped": outcome.skipped.len(),
        "cutoff": outcome.cutoff,
    }));
    Ok(())
}

pub fn evalset(a: &EvalsetArgs) -> Result<()> {
    for p in &a.pairs {
        require_file(p, "pair manifest")?;
    }
    let m = manifest(&a.manifest)?;
    let mut training = Vec::new();
    for p in &a.pairs {
        training.extend(read_pairs(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let set = build_evaluation_set(&m, &training, a.n_sentences, a.same_text_fraction, a.seed)?;
    debug_assert!(set.is_disjoint_from(&m, &training));
    let mut outputs = Outputs::new();
    outputs.write(&a.out, set.to_jsonl().as_bytes())?;
    outputs.commit();
    print_json(&json!({
        "entries": set.entries.len(),
        "same_text": set.same_text,
        "different_text": set.different_text,
    }));
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricJob {
    pair_id: String,
    system: String,
    output: PathBuf,
    reference: PathBuf,
    #[serde(default)]
    target_speaker: Option<String>,
    #[serde(default)]
    ground_truth: Option<PathBuf>,
}

fn job_track(root: &Path, rel: &Path, yin: &YinConfig) -> Result<F0Track> {
    let path = root.join(rel);
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        let audio = read_wav(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(estimate_f0(&audio, yin)?)
    } else {
        load_f0_track(&path).with_context(|| format!("reading {}", path.display()))
    }
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    require_file(&a.jobs, "job file")?;
    let stats: Option<BTreeMap<String, SpeakerF0Stats>> = match &a.speaker_stats {
        Some(p) => {
            require_file(p, "speaker statistics")?;
            Some(serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    if a.mean_f0_reference == MeanF0Reference::Speaker && stats.is_none() {
        bail!("--speaker-stats is required with --mean-f0-reference speaker");
    }
    distinct(&a.out, &[&a.jobs])?;
    let yin = a.yin.config();
    let root = a.jobs.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&a.jobs)?;
    let mut batch = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let job: MetricJob =
            serde_json::from_str(line).with_context(|| format!("{} line {}", a.jobs.display(), i + 1))?;
        let ctx = || format!("pair {} ({})", job.pair_id, job.system);
        let output = job_track(root, &job.output, &yin).with_context(ctx)?;
        let reference = job_track(root, &job.reference, &yin).with_context(ctx)?;
        let raw = f0_dtw_error(&output, &reference).with_context(ctx)?;
        let mean_err = match a.mean_f0_reference {
            MeanF0Reference::Speaker => {
                let spk = job
                    .target_speaker
                    .as_ref()
                    .with_context(|| format!("{}: target_speaker missing", ctx()))?;
                let s = stats
                    .as_ref()
                    .and_then(|m| m.get(spk))
                    .with_context(|| format!("{}: no statistics for speaker {spk}", ctx()))?;
                mean_f0_target_error(&output, s).with_context(ctx)?
            }
            MeanF0Reference::Utterance => {
                let gt = job
                    .ground_truth
                    .as_ref()
                    .with_context(|| format!("{}: ground_truth missing", ctx()))?;
                let gt = job_track(root, gt, &yin).with_context(ctx)?;
                mean_f0_utterance_error(&output, &gt).with_context(ctx)?
            }
        };
        batch.push(PairMeasurement {
            pair_id: job.pair_id,
            system: job.system,
            f0_dtw_error_raw: raw,
            mean_f0_target_error_hz: mean_err,
        });
    }
    ensure!(!batch.is_empty(), "{} has no jobs", a.jobs.display());
    let reports = build_reports(batch)?;
    let mut outputs = Outputs::new();
    outputs.write(&a.out, report_to_tsv(&reports).as_bytes())?;
    outputs.commit();
    print_json(&json!({"pairs": reports.len()}));
    Ok(())
}

pub fn delexify(a: &DelexifyArgs) -> Result<()> {
    let spec = FilterSpec {
        cutoff_hz: a.cutoff_hz,
        rolloff_db_per_octave: a.rolloff_db_per_octave,
        output_peak_dbfs: a.peak_dbfs,
    };
    spec.order()?;
    if a.input.is_dir() {
        ensure!(!a.output.is_file(), "output {} is a file", a.output.display());
        let mut outputs = Outputs::new();
        outputs.dir(&a.output)?;
        let before: Vec<PathBuf> = existing_wavs(&a.output);
        match delexify_dir(&a.input, &a.output, &spec) {
            Ok(written) => {
                outputs.commit();
                print_json(&json!({"written": written.len()}));
                Ok(())
            }
            Err(e) => {
                for p in existing_wavs(&a.output) {
                    if !before.contains(&p) {
                        outputs.track(p);
                    }
                }
                Err(e.into())
            }
        }
    } else {
        require_file(&a.input, "input")?;
        let out = if a.output.is_dir() {
            a.output.join(delex_file_name(&a.input))
        } else {
            a.output.clone()
        };
        distinct(&out, &[&a.input])?;
        let audible = delexify_wav(&a.input, &out, &spec)?;
        print_json(&json!({"written": 1, "silent_input": !audible}));
        Ok(())
    }
}

fn existing_wavs(dir: &Path) -> Vec<PathBuf> {
    fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default()
}
