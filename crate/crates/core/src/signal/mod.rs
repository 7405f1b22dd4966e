//! Audio signals: waveforms, STFT analysis/synthesis, SNR mixing, the SDR
//! metric, WAV I/O and the synthetic speech-in-noise corpus.

mod corpus;
mod stft;
mod wav;

pub use corpus::{
    read_manifest, synth_corpus, synth_triplet, write_manifest, CorpusConfig, Manifest,
    ManifestEntry, MixSpec, Triplet, SNR_LEVELS,
};
pub use stft::{
    edge_margin, frame_count, istft, sqrt_hann, stft, Spectrogram, StftPlan, DEFAULT_FRAME_SIZE,
    DEFAULT_HOP,
};
pub(crate) use stft::magnitude;
pub use wav::{read_wav, write_wav, WavStream, WavStreamWriter};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Value reported by [`sdr`] when the estimate matches the reference exactly.
pub const PERFECT_SDR_DB: f64 = 300.0;

/// Mono audio at 16 kHz with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySignal);
        }
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "sample rate {sample_rate} Hz, only {SAMPLE_RATE} Hz is supported"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    /// First `len` samples.
    pub fn truncated(&self, len: usize) -> Result<Waveform> {
        Waveform::new(self.samples[..len.min(self.len())].to_vec(), self.sample_rate)
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Scales `noise` so that the clean-to-noise energy ratio equals `snr_db` and
/// adds it to `clean`. Returns `(mixture, scaled_noise)`.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, Waveform)> {
    if clean.len() != noise.len() {
        return Err(Error::shape(format!(
            "clean has {} samples, noise has {}",
            clean.len(),
            noise.len()
        )));
    }
    let ec = clean.energy();
    let en = noise.energy();
    if ec == 0.0 {
        return Err(Error::ZeroEnergy("clean"));
    }
    if en == 0.0 {
        return Err(Error::ZeroEnergy("noise"));
    }
    let gain = (ec / en).sqrt() * 10f64.powf(-snr_db / 20.0);
    let scaled: Vec<f64> = noise.samples.iter().map(|v| v * gain).collect();
    let mixture: Vec<f64> = clean
        .samples
        .iter()
        .zip(&scaled)
        .map(|(c, n)| c + n)
        .collect();
    Ok((
        Waveform::new(mixture, clean.sample_rate)?,
        Waveform::new(scaled, clean.sample_rate)?,
    ))
}

/// Signal-to-distortion ratio `10 log10(sum y^2 / sum (y - y_hat)^2)` in dB,
/// without the BSS Eval distortion projection. Capped at [`PERFECT_SDR_DB`].
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    sdr_slices(reference.samples(), estimate.samples())
}

pub fn sdr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    let signal = energy(reference);
    if signal == 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    let distortion: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(y, e)| (y - e).powi(2))
        .sum();
    if distortion == 0.0 {
        return Ok(PERFECT_SDR_DB);
    }
    Ok((10.0 * (signal / distortion).log10()).min(PERFECT_SDR_DB))
}
