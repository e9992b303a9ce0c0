//! Mono 16-bit PCM WAV input and output.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: expected mono audio, found {channels} channels")]
    NotMono { path: PathBuf, channels: u16 },
    #[error("{path}: expected 16-bit integer PCM, found {bits}-bit {format:?}")]
    UnsupportedFormat {
        path: PathBuf,
        bits: u16,
        format: hound::SampleFormat,
    },
}

/// Mono samples scaled to [-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct MonoAudio {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl MonoAudio {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Self {
        Self {
            sample_rate,
            samples,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MonoAudio, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| AudioError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode(reader, path)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<MonoAudio, AudioError> {
    let path = Path::new("<memory>");
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|source| AudioError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode(reader, path)
}

fn decode<R: std::io::Read>(reader: hound::WavReader<R>, path: &Path) -> Result<MonoAudio, AudioError> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::NotMono {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat {
            path: path.to_path_buf(),
            bits: spec.bits_per_sample,
            format: spec.sample_format,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| AudioError::Read {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(MonoAudio::new(spec.sample_rate, samples))
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

/// Encodes to an in-memory 16-bit PCM WAV file.
pub fn encode_wav(audio: &MonoAudio) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec(audio.sample_rate))
            .expect("writing to memory cannot fail");
        for &s in &audio.samples {
            w.write_sample(quantize(s)).expect("writing to memory cannot fail");
        }
        w.finalize().expect("writing to memory cannot fail");
    }
    buf.into_inner()
}

/// Writes a 16-bit PCM WAV file atomically.
pub fn write_wav(path: impl AsRef<Path>, audio: &MonoAudio) -> Result<(), AudioError> {
    let path = path.as_ref();
    crate::fsutil::atomic_write(path, &encode_wav(audio)).map_err(|e| AudioError::Write {
        path: path.to_path_buf(),
        source: hound::Error::IoError(e),
    })
}
