//! Objective F0 metrics for synthesized speech.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtw::dtw_distance;
use crate::pitch::{F0Track, SpeakerF0Stats, STD_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("{0} track has no voiced frames")]
    NoVoicedFrames(&'static str),
    #[error("batch is empty")]
    EmptyBatch,
}

/// Voiced log-F0 of a track z-scored against its own statistics.
fn self_normalized_log_f0(t: &F0Track) -> Vec<f64> {
    let logs: Vec<f64> = t.voiced_values().map(f64::ln).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let std = (logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = std.max(STD_FLOOR);
    logs.iter().map(|x| (x - mean) / scale).collect()
}

/// Normalized DTW distance between the contour shapes of two tracks.
///
/// Unvoiced frames are dropped and each track is z-scored in the log domain
/// against its own voiced frames, so level and range differences cancel.
pub fn f0_dtw_error(output: &F0Track, reference: &F0Track) -> Result<f64, MetricsError> {
    if output.voiced_count() == 0 {
        return Err(MetricsError::NoVoicedFrames("output"));
    }
    if reference.voiced_count() == 0 {
        return Err(MetricsError::NoVoicedFrames("reference"));
    }
    let a = self_normalized_log_f0(output);
    let b = self_normalized_log_f0(reference);
    Ok(dtw_distance(&a, &b).expect("voiced sequences are non-empty"))
}

/// Scales a batch by its maximum; an all-zero batch stays zero.
pub fn normalize_batch(raw: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if raw.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![0.0; raw.len()]);
    }
    Ok(raw.iter().map(|v| v / max).collect())
}

fn mean_voiced_hz(t: &F0Track, which: &'static str) -> Result<f64, MetricsError> {
    let n = t.voiced_count();
    if n == 0 {
        return Err(MetricsError::NoVoicedFrames(which));
    }
    Ok(t.voiced_values().sum::<f64>() / n as f64)
}

/// Absolute difference between the output's mean voiced F0 and the target
/// speaker's geometric-mean F0, in Hz.
pub fn mean_f0_target_error(output: &F0Track, target: &SpeakerF0Stats) -> Result<f64, MetricsError> {
    Ok((mean_voiced_hz(output, "output")? - target.mean_hz()).abs())
}

/// Same as [`mean_f0_target_error`] but against one ground-truth utterance.
pub fn mean_f0_utterance_error(output: &F0Track, ground_truth: &F0Track) -> Result<f64, MetricsError> {
    Ok((mean_voiced_hz(output, "output")? - mean_voiced_hz(ground_truth, "ground truth")?).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pair_id: String,
    pub system: String,
    pub f0_dtw_error_raw: f64,
    /// Raw error over the batch maximum.
    pub f0_dtw_error_norm: f64,
    pub mean_f0_target_error_hz: f64,
}

/// One evaluated pair before batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeasurement {
    pub pair_id: String,
    pub system: String,
    pub f0_dtw_error_raw: f64,
    pub mean_f0_target_error_hz: f64,
}

/// Fills in the normalized column over the whole batch.
pub fn build_reports(batch: Vec<PairMeasurement>) -> Result<Vec<MetricReport>, MetricsError> {
    let raw: Vec<f64> = batch.iter().map(|m| m.f0_dtw_error_raw).collect();
    let norm = normalize_batch(&raw)?;
    Ok(batch
        .into_iter()
        .zip(norm)
        .map(|(m, n)| MetricReport {
            pair_id: m.pair_id,
            system: m.system,
            f0_dtw_error_raw: m.f0_dtw_error_raw,
            f0_dtw_error_norm: n,
            mean_f0_target_error_hz: m.mean_f0_target_error_hz,
        })
        .collect())
}

pub const REPORT_COLUMNS: [&str; 5] = [
    "pair_id",
    "system",
    "f0_dtw_error_raw",
    "f0_dtw_error_norm",
    "mean_f0_target_error_hz",
];

/// Tab-separated report: one row per pair, then one `mean` row per system.
pub fn report_to_tsv(reports: &[MetricReport]) -> String {
    let mut out = REPORT_COLUMNS.join("\t");
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.3}\n",
            r.pair_id, r.system, r.f0_dtw_error_raw, r.f0_dtw_error_norm, r.mean_f0_target_error_hz
        ));
    }
    let mut by_system: BTreeMap<&str, Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        by_system.entry(&r.system).or_default().push(r);
    }
    for (system, rows) in by_system {
        let n = rows.len() as f64;
        let mean = |f: fn(&MetricReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        out.push_str(&format!(
            "mean\t{}\t{:.6}\t{:.6}\t{:.3}\n",
            system,
            mean(|r| r.f0_dtw_error_raw),
            mean(|r| r.f0_dtw_error_norm),
            mean(|r| r.mean_f0_target_error_hz)
        ));
    }
    out
}

/// Parses the per-pair rows of a report, skipping the summary rows.
pub fn reports_from_tsv(text: &str) -> Result<Vec<MetricReport>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != REPORT_COLUMNS.len() {
            return Err(format!("line {}: expected {} columns", i + 1, REPORT_COLUMNS.len()));
        }
        if cols[0] == "mean" {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1));
        out.push(MetricReport {
            pair_id: cols[0].to_string(),
            system: cols[1].to_string(),
            f0_dtw_error_raw: num(cols[2])?,
            f0_dtw_error_norm: num(cols[3])?,
            mean_f0_target_error_hz: num(cols[4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(hz: &[Option<f64>]) -> F0Track {
        F0Track::from_frames(0.01, hz).unwrap()
    }

    fn random_contour(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<f64>> {
        let mut level: f64 = 150.0;
        (0..n)
            .map(|_| {
                level = (level * (rng.random_range(-0.05..0.05f64)).exp()).clamp(70.0, 400.0);
                (rng.random::<f64>() > 0.2).then_some(level)
            })
            .collect()
    }

    #[test]
    fn identical_tracks_score_zero() {
        let t = track(&[Some(100.0), Some(120.0), None, Some(90.0)]);
        assert_eq!(f0_dtw_error(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn constant_log_offset_cancels() {
        let base = [Some(100.0), Some(130.0), None, Some(85.0), Some(110.0)];
        let shifted: Vec<Option<f64>> = base.iter().map(|v| v.map(|x| x * 1.5)).collect();
        assert!(f0_dtw_error(&track(&shifted), &track(&base)).unwrap() < 1e-9);
    }

    #[test]
    fn matched_beats_random_over_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let reference = random_contour(&mut rng, 80);
            let other = random_contour(&mut rng, 80);
            let matched: Vec<Option<f64>> = reference
                .iter()
                .map(|v| v.map(|x| x * (rng.random_range(-0.005..0.005f64)).exp()))
                .collect();
            let r = track(&reference);
            let dm = f0_dtw_error(&track(&matched), &r).unwrap();
            let dr = f0_dtw_error(&track(&other), &r).unwrap();
            assert!(dm < dr, "matched {dm} vs random {dr}");
        }
    }

    #[test]
    fn unvoiced_tracks_rejected() {
        let voiced = track(&[Some(100.0)]);
        let silent = track(&[None, None]);
        assert_eq!(f0_dtw_error(&silent, &voiced), Err(MetricsError::NoVoicedFrames("output")));
        assert_eq!(f0_dtw_error(&voiced, &silent), Err(MetricsError::NoVoicedFrames("reference")));
    }

    #[test]
    fn batch_normalization_cases() {
        assert_eq!(normalize_batch(&[0.0, 1.0, 2.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_batch(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(normalize_batch(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(normalize_batch(&[]), Err(MetricsError::EmptyBatch));
    }

    fn speaker(mean_hz: f64) -> SpeakerF0Stats {
        SpeakerF0Stats {
            speaker_id: "T".into(),
            mean_log_f0: mean_hz.ln(),
            std_log_f0: 0.1,
            n_voiced_frames: 10,
        }
    }

    #[test]
    fn mean_target_error_arithmetic() {
        let out = track(&[Some(180.0), None, Some(200.0)]);
        assert!((mean_f0_target_error(&out, &speaker(200.0)).unwrap() - 10.0).abs() < 1e-9);
        assert!(mean_f0_target_error(&out, &speaker(190.0)).unwrap() < 1e-9);
        assert!(mean_f0_target_error(&track(&[None]), &speaker(100.0)).is_err());
        let gt = track(&[Some(170.0)]);
        assert!((mean_f0_utterance_error(&out, &gt).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn mean_target_error_ignores_order_and_unvoiced_values() {
        let a = F0Track::new(0.01, vec![120.0, 55.0, 180.0], vec![true, false, true]).unwrap();
        let b = F0Track::new(0.01, vec![180.0, 120.0, 999.0], vec![true, true, false]).unwrap();
        let s = speaker(140.0);
        assert_eq!(mean_f0_target_error(&a, &s), mean_f0_target_error(&b, &s));
    }

    #[test]
    fn tsv_has_summary_rows() {
        let reports = build_reports(vec![
            PairMeasurement {
                pair_id: "p1".into(),
                system: "a".into(),
                f0_dtw_error_raw: 1.0,
                mean_f0_target_error_hz: 10.0,
            },
            PairMeasurement {
                pair_id: "p2".into(),
                system: "a".into(),
                f0_dtw_error_raw: 2.0,
                mean_f0_target_error_hz: 20.0,
            },
        ])
        .unwrap();
        let tsv = report_to_tsv(&reports);
        assert!(tsv.ends_with("mean\ta\t1.500000\t0.750000\t15.000\n"));
        assert_eq!(reports_from_tsv(&tsv).unwrap(), reports);
    }
}
