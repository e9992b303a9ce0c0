//! Low-pass delexification of speech stimuli.
//!
//! A Butterworth low-pass of order `rolloff / 6` is built as a cascade of
//! bilinear-transformed sections (prewarped at the cutoff), run once forward,
//! and the result is peak-normalized.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, write_wav, AudioError, MonoAudio};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz")]
    BadCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("roll-off {0} dB/octave is not a positive multiple of 6")]
    BadRolloff(f64),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub rolloff_db_per_octave: f64,
    pub output_peak_dbfs: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff_hz: 200.0,
            rolloff_db_per_octave: 24.0,
            output_peak_dbfs: -3.0,
        }
    }
}

impl FilterSpec {
    /// Filter order implied by the roll-off (6 dB/octave per pole).
    pub fn order(&self) -> Result<usize, FilterError> {
        let order = self.rolloff_db_per_octave / 6.0;
        if order >= 1.0 && order.fract() == 0.0 && order <= 32.0 {
            Ok(order as usize)
        } else {
            Err(FilterError::BadRolloff(self.rolloff_db_per_octave))
        }
    }

    fn check_cutoff(&self, sample_rate: f64) -> Result<(), FilterError> {
        let nyquist_hz = sample_rate / 2.0;
        if self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist_hz {
            Ok(())
        } else {
            Err(FilterError::BadCutoff {
                cutoff_hz: self.cutoff_hz,
                nyquist_hz,
            })
        }
    }
}

/// Second-order section, coefficients normalized so `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn lowpass(w0: f64, q: f64) -> Self {
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cos) / 2.0 / a0,
            b1: (1.0 - cos) / a0,
            b2: (1.0 - cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// First-order bilinear low-pass stored in biquad form.
    fn first_order(w0: f64) -> Self {
        let k = (w0 / 2.0).tan();
        Self {
            b0: k / (1.0 + k),
            b1: k / (1.0 + k),
            b2: 0.0,
            a1: (k - 1.0) / (k + 1.0),
            a2: 0.0,
        }
    }

    /// Complex gain at normalized angular frequency `w` as (re, im).
    fn response(&self, w: f64) -> (f64, f64) {
        // H(z) with z^-1 = e^{-jw}
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        (
            (num.0 * den.0 + num.1 * den.1) / d,
            (num.1 * den.0 - num.0 * den.1) / d,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowpassCascade {
    pub sample_rate: f64,
    pub sections: Vec<Biquad>,
}

impl LowpassCascade {
    /// Magnitude response in dB at `freq_hz`.
    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate;
        let gain: f64 = self
            .sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                (re * re + im * im).sqrt()
            })
            .product();
        20.0 * gain.log10()
    }

    /// Runs the cascade over a signal from a zero state.
    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            // transposed direct form II
            let (mut z1, mut z2) = (0.0, 0.0);
            for x in out.iter_mut() {
                let y = s.b0 * *x + z1;
                z1 = s.b1 * *x - s.a1 * y + z2;
                z2 = s.b2 * *x - s.a2 * y;
                *x = y;
            }
        }
        out
    }
}

/// Designs the Butterworth low-pass described by `spec`.
pub fn design_lowpass(spec: &FilterSpec, sample_rate: f64) -> Result<LowpassCascade, FilterError> {
    spec.check_cutoff(sample_rate)?;
    let order = spec.order()?;
    let w0 = 2.0 * PI * spec.cutoff_hz / sample_rate;
    let mut sections: Vec<Biquad> = (0..order / 2)
        .map(|k| {
            let q = 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin());
            Biquad::lowpass(w0, q)
        })
        .collect();
    if order % 2 == 1 {
        sections.push(Biquad::first_order(w0));
    }
    Ok(LowpassCascade {
        sample_rate,
        sections,
    })
}

/// Filtered signal before any gain staging.
pub fn filter_signal(samples: &[f64], sample_rate: u32, spec: &FilterSpec) -> Result<Vec<f64>, FilterError> {
    Ok(design_lowpass(spec, f64::from(sample_rate))?.process(samples))
}

/// Scales so the absolute peak sits at `peak_dbfs`; silence is returned as is.
pub fn peak_normalize(samples: &mut [f64], peak_dbfs: f64) -> bool {
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return false;
    }
    let gain = 10f64.powf(peak_dbfs / 20.0) / peak;
    samples.iter_mut().for_each(|x| *x *= gain);
    true
}

/// Filters and peak-normalizes in memory. The flag is false for silent input.
pub fn delexify_audio(audio: &MonoAudio, spec: &FilterSpec) -> Result<(MonoAudio, bool), FilterError> {
    let mut out = filter_signal(&audio.samples, audio.sample_rate, spec)?;
    let audible = peak_normalize(&mut out, spec.output_peak_dbfs);
    Ok((MonoAudio::new(audio.sample_rate, out), audible))
}

/// Reads a mono WAV, delexifies it and writes 16-bit PCM. Returns false when
/// the input was silent (written as silence).
pub fn delexify_wav(in_path: &Path, out_path: &Path, spec: &FilterSpec) -> Result<bool, FilterError> {
    let audio = read_wav(in_path)?;
    let (out, audible) = delexify_audio(&audio, spec)?;
    if !audible {
        log::warn!("{}: all-zero input, writing silence", in_path.display());
    }
    write_wav(out_path, &out)?;
    Ok(audible)
}

/// Output name for batch mode: `a.wav` becomes `a.delex.wav`.
pub fn delex_file_name(input: &Path) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PathBuf::from(format!("{stem}.delex.wav"))
}

/// Delexifies every `.wav` file of `in_dir` into `out_dir`.
pub fn delexify_dir(in_dir: &Path, out_dir: &Path, spec: &FilterSpec) -> Result<Vec<PathBuf>, FilterError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FilterError::Io { path, source }
    };
    let mut inputs: Vec<PathBuf> = fs::read_dir(in_dir)
        .map_err(io(in_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
                && !p.to_string_lossy().ends_with(".delex.wav")
        })
        .collect();
    inputs.sort();
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;

    let run = |input: &PathBuf| -> Result<PathBuf, FilterError> {
        let out = out_dir.join(delex_file_name(input));
        delexify_wav(input, &out, spec)?;
        Ok(out)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        inputs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        inputs.iter().map(run).collect()
    }
}
