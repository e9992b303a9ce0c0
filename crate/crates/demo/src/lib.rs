//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export wraps a plain function that native tests call directly.

use wasm_bindgen::prelude::*;

use ptkit_core::audio::MonoAudio;
use ptkit_core::delexify::{design_lowpass, FilterSpec};
use ptkit_core::dtw::dtw_alignment;
use ptkit_core::pitch::{estimate_f0, YinConfig};

/// An optimal warping path and its length-normalized distance.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct DtwPath {
    distance: f64,
    a_index: Vec<u32>,
    b_index: Vec<u32>,
}

#[wasm_bindgen]
impl DtwPath {
    #[wasm_bindgen(getter)]
    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Index into the first sequence for each path step.
    #[wasm_bindgen(getter, js_name = aIndex)]
    pub fn a_index(&self) -> Vec<u32> {
        self.a_index.clone()
    }

    #[wasm_bindgen(getter, js_name = bIndex)]
    pub fn b_index(&self) -> Vec<u32> {
        self.b_index.clone()
    }
}

pub fn align(a: &[f64], b: &[f64]) -> Result<DtwPath, String> {
    let al = dtw_alignment(a, b).map_err(|e| e.to_string())?;
    Ok(DtwPath {
        distance: al.distance,
        a_index: al.path.iter().map(|p| p.0 as u32).collect(),
        b_index: al.path.iter().map(|p| p.1 as u32).collect(),
    })
}

/// Magnitude in dB of the delexification low-pass at each of `freqs_hz`.
pub fn lowpass_response(
    cutoff_hz: f64,
    rolloff_db_per_octave: f64,
    sample_rate: f64,
    freqs_hz: &[f64],
) -> Result<Vec<f64>, String> {
    let spec = FilterSpec {
        cutoff_hz,
        rolloff_db_per_octave,
        ..FilterSpec::default()
    };
    let cascade = design_lowpass(&spec, sample_rate).map_err(|e| e.to_string())?;
    Ok(freqs_hz.iter().map(|&f| cascade.magnitude_db(f)).collect())
}

/// Per-frame F0 in Hz with the default analysis settings; NaN marks
/// unvoiced frames.
pub fn f0_track(samples: &[f64], sample_rate: u32) -> Result<Vec<f64>, String> {
    let audio = MonoAudio::new(sample_rate, samples.to_vec());
    let track = estimate_f0(&audio, &YinConfig::default()).map_err(|e| e.to_string())?;
    Ok((0..track.len()).map(|i| track.frame(i).unwrap_or(f64::NAN)).collect())
}

#[wasm_bindgen(js_name = dtwAlign)]
pub fn dtw_align_js(a: &[f64], b: &[f64]) -> Result<DtwPath, JsError> {
    align(a, b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = lowpassResponse)]
pub fn lowpass_response_js(
    cutoff_hz: f64,
    rolloff_db_per_octave: f64,
    sample_rate: f64,
    freqs_hz: &[f64],
) -> Result<Vec<f64>, JsError> {
    lowpass_response(cutoff_hz, rolloff_db_per_octave, sample_rate, freqs_hz).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = f0Track)]
pub fn f0_track_js(samples: &[f64], sample_rate: u32) -> Result<Vec<f64>, JsError> {
    f0_track(samples, sample_rate).map_err(|e| JsError::new(&e))
}

/// Frame hop of [`f0Track`] output, in seconds.
#[wasm_bindgen(js_name = f0HopSeconds)]
pub fn f0_hop_seconds() -> f64 {
    YinConfig::default().hop_s
}
