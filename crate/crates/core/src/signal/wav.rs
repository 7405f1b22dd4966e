use std::path::Path;

use hound::{SampleFormat, WavSpec};
use log::warn;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Reads 16-bit PCM at 16 kHz. Multichannel files keep the first (left)
/// channel.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    check_spec(path, &spec)?;
    let channels = spec.channels.max(1) as usize;
    let mut samples = Vec::with_capacity(reader.len() as usize / channels);
    for (i, s) in reader.samples::<i16>().enumerate() {
        let s = s.map_err(|e| hound_err(path, e))?;
        if i % channels == 0 {
            samples.push(s as f64 / 32768.0);
        }
    }
    Waveform::new(samples, SAMPLE_RATE).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes 16-bit PCM mono. Out-of-range samples saturate; the number of
/// clipped samples is returned.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<usize> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    let mut clipped = 0;
    for &x in w.samples() {
        let (q, c) = quantize(x);
        clipped += c as usize;
        writer.write_sample(q).map_err(|e| hound_err(path, e))?;
    }
    writer.finalize().map_err(|e| hound_err(path, e))?;
    if clipped > 0 {
        warn!("{}: {clipped} samples clipped", path.display());
    }
    Ok(clipped)
}

type FileReader = hound::WavReader<std::io::BufReader<std::fs::File>>;
type FileWriter = hound::WavWriter<std::io::BufWriter<std::fs::File>>;

fn check_spec(path: &Path, spec: &WavSpec) -> Result<()> {
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            format!("expected 16-bit PCM, got {:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(path, format!("expected {SAMPLE_RATE} Hz, got {} Hz", spec.sample_rate)));
    }
    Ok(())
}

/// Incremental reader with the same conventions as [`read_wav`].
pub struct WavStream {
    reader: FileReader,
    channels: usize,
    path: std::path::PathBuf,
}

impl WavStream {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
        check_spec(path, &reader.spec())?;
        Ok(WavStream { channels: reader.spec().channels.max(1) as usize, reader, path: path.to_path_buf() })
    }

    /// Number of (mono) samples in the file.
    pub fn len(&self) -> usize {
        self.reader.len() as usize / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces `buf` with up to `max` samples; returns how many were read.
    pub fn read_chunk(&mut self, buf: &mut Vec<f64>, max: usize) -> Result<usize> {
        buf.clear();
        let channels = self.channels;
        let path = self.path.clone();
        let mut it = self.reader.samples::<i16>();
        while buf.len() < max {
            let mut frame_first = None;
            for c in 0..channels {
                match it.next() {
                    Some(s) => {
                        let s = s.map_err(|e| hound_err(&path, e))?;
                        if c == 0 {
                            frame_first = Some(s);
                        }
                    }
                    None => break,
                }
            }
            match frame_first {
                Some(s) => buf.push(s as f64 / 32768.0),
                None => break,
            }
        }
        Ok(buf.len())
    }
}

/// Incremental mono PCM16 writer; counts clipped samples.
pub struct WavStreamWriter {
    writer: FileWriter,
    clipped: usize,
    path: std::path::PathBuf,
}

impl WavStreamWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let spec = WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let writer = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
        Ok(WavStreamWriter { writer, clipped: 0, path: path.to_path_buf() })
    }

    pub fn write(&mut self, samples: &[f64]) -> Result<()> {
        for &x in samples {
            let (q, clipped) = quantize(x);
            self.clipped += clipped as usize;
            self.writer.write_sample(q).map_err(|e| hound_err(&self.path, e))?;
        }
        Ok(())
    }

    /// Finalizes the header; returns the number of clipped samples.
    pub fn finish(self) -> Result<usize> {
        let path = self.path;
        self.writer.finalize().map_err(|e| hound_err(&path, e))?;
        if self.clipped > 0 {
            warn!("{}: {} samples clipped", path.display(), self.clipped);
        }
        Ok(self.clipped)
    }
}

fn quantize(x: f64) -> (i16, bool) {
    let v = (x * 32768.0).round();
    if v > i16::MAX as f64 {
        (i16::MAX, true)
    } else if v < i16::MIN as f64 {
        (i16::MIN, true)
    } else {
        (v as i16, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..500).map(|i| ((i * 37) % 2001) as f64 / 32768.0 - 1000.0 / 32768.0).collect();
        let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
        assert_eq!(write_wav(&path, &w).unwrap(), 0);
        assert_eq!(read_wav(&path).unwrap(), w);
    }

    #[test]
    fn clipping_saturates_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let w = Waveform::new(vec![1.5, -2.0, 0.5], SAMPLE_RATE).unwrap();
        assert_eq!(write_wav(&path, &w).unwrap(), 2);
        let r = read_wav(&path).unwrap();
        assert_eq!(r.samples(), &[32767.0 / 32768.0, -1.0, 0.5]);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_wav("/nonexistent/x.wav").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.wav"));
    }

    #[test]
    fn streams_match_whole_file_io() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        let samples: Vec<f64> = (0..1001).map(|i| ((i * 73) % 4001) as f64 / 32768.0 - 2000.0 / 32768.0).collect();
        let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
        write_wav(&a, &w).unwrap();
        let mut s = WavStream::open(&a).unwrap();
        assert_eq!(s.len(), 1001);
        let mut out = WavStreamWriter::create(&b).unwrap();
        let mut buf = Vec::new();
        let mut all = Vec::new();
        while s.read_chunk(&mut buf, 128).unwrap() > 0 {
            all.extend_from_slice(&buf);
            out.write(&buf).unwrap();
        }
        assert_eq!(out.finish().unwrap(), 0);
        assert_eq!(all, w.samples());
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
