//! YIN fundamental frequency estimator.
//!
//! Per frame: squared difference function over the search lags, cumulative
//! mean normalization, the first dip under the threshold followed down to its
//! local minimum, then parabolic refinement of the lag.

use serde::{Deserialize, Serialize};

use super::{F0Track, PitchError};
use crate::audio::MonoAudio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YinConfig {
    /// Integration window length.
    pub frame_s: f64,
    pub hop_s: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Aperiodicity threshold on the normalized difference.
    pub threshold: f64,
    /// Frames with RMS below this are unvoiced without analysis.
    pub min_rms: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            frame_s: 0.025,
            hop_s: 0.01,
            f0_min_hz: 50.0,
            f0_max_hz: 500.0,
            threshold: 0.15,
            min_rms: 1e-4,
        }
    }
}

impl YinConfig {
    fn validate(&self, sample_rate: u32) -> Result<(), PitchError> {
        let sr = f64::from(sample_rate);
        let bad = |m: String| Err(PitchError::BadConfig(m));
        if sample_rate < 8000 {
            return bad(format!("sample rate {sample_rate} Hz is below 8000 Hz"));
        }
        if !(self.frame_s > 0.0 && self.hop_s > 0.0) {
            return bad("frame and hop must be positive".into());
        }
        if !(self.f0_min_hz > 1.0 / self.frame_s) {
            return bad(format!(
                "f0_min {} Hz must exceed 1/frame = {} Hz",
                self.f0_min_hz,
                1.0 / self.frame_s
            ));
        }
        if !(self.f0_max_hz < sr / 4.0 && self.f0_max_hz > self.f0_min_hz) {
            return bad(format!(
                "f0_max {} Hz must lie in ({}, {})",
                self.f0_max_hz,
                self.f0_min_hz,
                sr / 4.0
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        Ok(())
    }
}

/// Estimates an F0 track with one frame per hop, frame `i` centred at
/// `i * hop_s`.
pub fn estimate_f0(audio: &MonoAudio, cfg: &YinConfig) -> Result<F0Track, PitchError> {
    cfg.validate(audio.sample_rate)?;
    let sr = f64::from(audio.sample_rate);
    let x = &audio.samples;
    let window = (cfg.frame_s * sr).round() as usize;
    if x.len() < window {
        return Err(PitchError::TooShort {
            samples: x.len(),
            frame: window,
        });
    }
    let hop = ((cfg.hop_s * sr).round() as usize).max(1);
    let hop_s = hop as f64 / sr;
    let tau_min = ((sr / cfg.f0_max_hz).floor() as usize).max(2);
    let tau_max = (sr / cfg.f0_min_hz).ceil() as usize;
    let span = window + tau_max + 1;
    let n_frames = x.len().div_ceil(hop);

    let mut diff = vec![0.0; tau_max + 2];
    let mut cmnd = vec![0.0; tau_max + 2];
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let centre = i * hop;
        let start = centre
            .saturating_sub(window / 2)
            .min(x.len().saturating_sub(span));
        let sample = |k: usize| x.get(start + k).copied().unwrap_or(0.0);

        let energy: f64 = (0..window).map(|j| sample(j).powi(2)).sum::<f64>() / window as f64;
        if energy.sqrt() < cfg.min_rms {
            frames.push(None);
            continue;
        }
        difference(&sample, window, &mut diff);
        cumulative_mean_normalize(&diff, &mut cmnd);
        frames.push(
            pick_lag(&cmnd, tau_min, tau_max, cfg.threshold)
                .map(|tau| sr / refine(&diff, tau))
                .filter(|f| (cfg.f0_min_hz..=cfg.f0_max_hz).contains(f)),
        );
    }
    F0Track::from_frames(hop_s, &frames)
}

fn difference(sample: &impl Fn(usize) -> f64, window: usize, out: &mut [f64]) {
    out[0] = 0.0;
    for tau in 1..out.len() {
        out[tau] = (0..window)
            .map(|j| {
                let d = sample(j) - sample(j + tau);
                d * d
            })
            .sum();
    }
}

fn cumulative_mean_normalize(diff: &[f64], out: &mut [f64]) {
    out[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..diff.len() {
        running += diff[tau];
        out[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
}

fn pick_lag(cmnd: &[f64], tau_min: usize, tau_max: usize, threshold: f64) -> Option<usize> {
    let mut tau = (tau_min..=tau_max).find(|&t| cmnd[t] < threshold)?;
    while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
        tau += 1;
    }
    Some(tau)
}

/// Vertex of the parabola through the difference values around `tau`.
fn refine(diff: &[f64], tau: usize) -> f64 {
    if tau == 0 || tau + 1 >= diff.len() {
        return tau as f64;
    }
    let (a, b, c) = (diff[tau - 1], diff[tau], diff[tau + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::EPSILON {
        return tau as f64;
    }
    let shift = 0.5 * (a - c) / denom;
    tau as f64 + shift.clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn sine(freq: f64, sr: u32, secs: f64) -> MonoAudio {
        let n = (secs * f64::from(sr)) as usize;
        MonoAudio::new(
            sr,
            (0..n)
                .map(|i| 0.5 * (TAU * freq * i as f64 / f64::from(sr)).sin())
                .collect(),
        )
    }

    #[test]
    fn sine_220_every_voiced_frame_within_1hz() {
        let t = estimate_f0(&sine(220.0, 16000, 1.0), &YinConfig::default()).unwrap();
        assert_eq!(t.len(), 100);
        assert!(t.voiced_count() >= 95);
        for f in t.voiced_values() {
            assert!((f - 220.0).abs() <= 1.0, "{f}");
        }
    }

    #[test]
    fn sine_100_within_1hz() {
        let t = estimate_f0(&sine(100.0, 16000, 1.0), &YinConfig::default()).unwrap();
        assert!(t.voiced_count() >= 95);
        for f in t.voiced_values() {
            assert!((f - 100.0).abs() <= 1.0, "{f}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let t = estimate_f0(&MonoAudio::new(16000, vec![0.0; 16000]), &YinConfig::default()).unwrap();
        assert_eq!(t.voiced_count(), 0);
    }

    #[test]
    fn too_short_audio_rejected() {
        let err = estimate_f0(&MonoAudio::new(16000, vec![0.1; 100]), &YinConfig::default()).unwrap_err();
        assert!(matches!(err, PitchError::TooShort { samples: 100, frame: 400 }));
    }

    #[test]
    fn config_range_checks() {
        let audio = sine(100.0, 16000, 0.5);
        let low = YinConfig {
            f0_min_hz: 30.0,
            ..YinConfig::default()
        };
        assert!(matches!(estimate_f0(&audio, &low), Err(PitchError::BadConfig(_))));
        let high = YinConfig {
            f0_max_hz: 4000.0,
            ..YinConfig::default()
        };
        assert!(matches!(estimate_f0(&audio, &high), Err(PitchError::BadConfig(_))));
        assert!(estimate_f0(&sine(100.0, 4000, 0.5), &YinConfig::default()).is_err());
    }
}
