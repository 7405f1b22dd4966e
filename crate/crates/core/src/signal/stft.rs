//! Short-time Fourier analysis and weighted overlap-add synthesis with a
//! square-root periodic Hann window.
//!
//! Frames start at sample 0 and advance by `hop`; a trailing partial frame is
//! dropped. With `frame_size / hop >= 2` the squared window sums to a constant
//! over overlapping frames, so synthesis reproduces the input exactly away from
//! the first and last `frame_size - hop` samples.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const DEFAULT_FRAME_SIZE: usize = 512;
pub const DEFAULT_HOP: usize = 128;

/// Paired complex STFT and magnitude, both `F x T` with `F = frame_size/2 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub complex_stft: Array2<Complex64>,
    pub magnitude: Array2<f64>,
    pub frame_size: usize,
    pub hop: usize,
}

/// `|c|` without the overflow guard of `hypot`, which audio never needs.
#[inline]
pub(crate) fn magnitude(c: Complex64) -> f64 {
    c.norm_sqr().sqrt()
}

impl Spectrogram {
    pub fn from_complex(complex_stft: Array2<Complex64>, frame_size: usize, hop: usize) -> Self {
        let magnitude = complex_stft.mapv(magnitude);
        Spectrogram {
            complex_stft,
            magnitude,
            frame_size,
            hop,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.complex_stft.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.complex_stft.ncols()
    }

    /// Multiplies every complex bin by the matching mask entry.
    pub fn masked(&self, mask: &Array2<f64>) -> Result<Spectrogram> {
        if mask.dim() != self.complex_stft.dim() {
            return Err(Error::shape(format!(
                "mask {:?} vs spectrogram {:?}",
                mask.dim(),
                self.complex_stft.dim()
            )));
        }
        let mut out = self.complex_stft.clone();
        out.zip_mut_with(mask, |c, &m| *c *= m);
        Ok(Spectrogram::from_complex(out, self.frame_size, self.hop))
    }
}

/// Square root of the periodic (DFT-even) Hann window.
pub fn sqrt_hann(frame_size: usize) -> Vec<f64> {
    (0..frame_size)
        .map(|n| {
            let hann = 0.5 * (1.0 - (2.0 * PI * n as f64 / frame_size as f64).cos());
            hann.sqrt()
        })
        .collect()
}

/// Number of complete frames in a signal of `len` samples.
pub fn frame_count(len: usize, frame_size: usize, hop: usize) -> usize {
    if len < frame_size {
        0
    } else {
        1 + (len - frame_size) / hop
    }
}

/// Planned FFTs and window for one frame geometry. Reusable across calls and
/// by the streaming separator.
#[derive(Clone)]
pub struct StftPlan {
    frame_size: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // 1 / (frame_size * sum_j w[j]^2 / hop): inverse-FFT scaling times the
    // overlap-add normalization.
    synthesis_scale: f64,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("frame_size", &self.frame_size)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftPlan {
    pub fn new(frame_size: usize, hop: usize) -> Result<Self> {
        if frame_size == 0 || frame_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "frame_size must be even and positive, got {frame_size}"
            )));
        }
        if hop == 0 || frame_size % hop != 0 || frame_size / hop < 2 {
            return Err(Error::InvalidArgument(format!(
                "hop {hop} must divide frame_size {frame_size} at least twice"
            )));
        }
        let window = sqrt_hann(frame_size);
        let energy: f64 = window.iter().map(|w| w * w).sum();
        let mut planner = FftPlanner::new();
        Ok(StftPlan {
            frame_size,
            hop,
            forward: planner.plan_fft_forward(frame_size),
            inverse: planner.plan_fft_inverse(frame_size),
            synthesis_scale: hop as f64 / (energy * frame_size as f64),
            window,
        })
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Windowed DFT of one frame; returns the `frame_size/2 + 1` lower bins.
    pub fn analyze_frame(&self, frame: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(frame.len(), self.frame_size);
        let mut buf: Vec<Complex64> = frame
            .iter()
            .zip(&self.window)
            .map(|(&x, &w)| Complex64::new(x * w, 0.0))
            .collect();
        self.forward.process(&mut buf);
        out.copy_from_slice(&buf[..self.n_bins()]);
    }

    /// Inverse DFT of a half spectrum, windowed and scaled for overlap-add.
    pub fn synthesize_frame(&self, bins: &[Complex64], out: &mut [f64]) {
        let n = self.frame_size;
        let half = self.n_bins();
        debug_assert_eq!(bins.len(), half);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..half].copy_from_slice(bins);
        // DC and Nyquist must be real for a real signal.
        buf[0].im = 0.0;
        buf[half - 1].im = 0.0;
        for k in half..n {
            buf[k] = buf[n - k].conj();
        }
        self.inverse.process(&mut buf);
        for ((o, b), &w) in out.iter_mut().zip(&buf).zip(&self.window) {
            *o = b.re * w * self.synthesis_scale;
        }
    }

    pub fn stft(&self, w: &Waveform) -> Result<Spectrogram> {
        let x = w.samples();
        if x.is_empty() {
            return Err(Error::EmptySignal);
        }
        let n_frames = frame_count(x.len(), self.frame_size, self.hop);
        if n_frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "signal of {} samples is shorter than one {}-sample frame",
                x.len(),
                self.frame_size
            )));
        }
        let mut spec = Array2::zeros((self.n_bins(), n_frames));
        let mut bins = vec![Complex64::new(0.0, 0.0); self.n_bins()];
        for t in 0..n_frames {
            let start = t * self.hop;
            self.analyze_frame(&x[start..start + self.frame_size], &mut bins);
            spec.column_mut(t)
                .iter_mut()
                .zip(&bins)
                .for_each(|(s, b)| *s = *b);
        }
        Ok(Spectrogram::from_complex(spec, self.frame_size, self.hop))
    }

    pub fn istft(&self, s: &Spectrogram) -> Result<Waveform> {
        if s.frame_size != self.frame_size || s.hop != self.hop {
            return Err(Error::shape(format!(
                "spectrogram geometry {}/{} vs plan {}/{}",
                s.frame_size, s.hop, self.frame_size, self.hop
            )));
        }
        if s.n_bins() != self.n_bins() {
            return Err(Error::shape(format!(
                "{} frequency bins, expected {}",
                s.n_bins(),
                self.n_bins()
            )));
        }
        let n_frames = s.n_frames();
        if n_frames == 0 {
            return Err(Error::EmptySignal);
        }
        let len = self.frame_size + (n_frames - 1) * self.hop;
        let mut out = vec![0.0; len];
        let mut bins = vec![Complex64::new(0.0, 0.0); self.n_bins()];
        let mut frame = vec![0.0; self.frame_size];
        for t in 0..n_frames {
            bins.iter_mut()
                .zip(s.complex_stft.column(t))
                .for_each(|(b, &c)| *b = c);
            self.synthesize_frame(&bins, &mut frame);
            let start = t * self.hop;
            out[start..start + self.frame_size]
                .iter_mut()
                .zip(&frame)
                .for_each(|(o, f)| *o += f);
        }
        Waveform::new(out, SAMPLE_RATE)
    }
}

pub fn stft(w: &Waveform, frame_size: usize, hop: usize) -> Result<Spectrogram> {
    if w.is_empty() {
        return Err(Error::EmptySignal);
    }
    StftPlan::new(frame_size, hop)?.stft(w)
}

pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    StftPlan::new(s.frame_size, s.hop)?.istft(s)
}

/// Samples excluded at each end when comparing a round trip: the region where
/// fewer than the full number of frames overlap.
pub fn edge_margin(frame_size: usize, hop: usize) -> usize {
    frame_size - hop
}
