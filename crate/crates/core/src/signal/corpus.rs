//! Synthetic speech-in-noise corpus.
//!
//! Clean utterances are sequences of harmonic "vowels" with gliding pitch,
//! formant-shaped harmonic amplitudes and smooth onsets. Noise is resonant
//! filtered noise plus amplitude-modulated tones. Each utterance is mixed at
//! one of [`SNR_LEVELS`], cycling so that the levels are balanced.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mix_at_snr, read_wav, write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const SNR_LEVELS: [f64; 6] = [-6.0, -3.0, 0.0, 3.0, 6.0, 9.0];

const MANIFEST_HEADER: [&str; 5] = ["utt_id", "snr_db", "clean_path", "noise_path", "mix_path"];

// Peak level of each written mixture.
const MIX_PEAK: f64 = 0.7;

// (F1, F2, F3) in Hz for a handful of vowels.
const VOWEL_FORMANTS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub n_utts: usize,
    pub seed: u64,
    pub duration_s: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_utts: 12,
            seed: 0,
            duration_s: 2.0,
        }
    }
}

/// Mixing parameters for one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub snr_db: f64,
    pub seed: u64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub snr_db: f64,
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub mix_path: PathBuf,
}

/// Paths in entries are absolute (resolved against the manifest directory).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// One generated triplet held in memory.
#[derive(Debug, Clone)]
pub struct Triplet {
    pub clean: Waveform,
    pub noise: Waveform,
    pub mixture: Waveform,
}

impl ManifestEntry {
    pub fn load(&self) -> Result<Triplet> {
        Ok(Triplet {
            clean: read_wav(&self.clean_path)?,
            noise: read_wav(&self.noise_path)?,
            mixture: read_wav(&self.mix_path)?,
        })
    }
}

fn formant_gain(freq: f64, formants: &[f64; 3], bandwidths: &[f64; 3]) -> f64 {
    let peaks: f64 = formants
        .iter()
        .zip(bandwidths)
        .enumerate()
        .map(|(i, (&f, &bw))| {
            let d = (freq - f) / bw;
            (-0.5 * d * d).exp() / (1.0 + i as f64)
        })
        .sum();
    peaks + 0.02
}

fn synth_speech(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let mut out = vec![0.0; n];
    let mut cursor = (rng.random_range(0.02..0.1) * fs) as usize;
    let mut phase = 0.0f64;
    while cursor < n {
        let seg_len = ((rng.random_range(0.12..0.35) * fs) as usize).min(n - cursor);
        let f0_start = rng.random_range(90.0..240.0);
        let f0_end = f0_start * rng.random_range(0.8..1.25);
        let vibrato_rate = rng.random_range(3.0..6.0);
        let vibrato_depth = rng.random_range(0.0..0.02);
        let vowel = VOWEL_FORMANTS[rng.random_range(0..VOWEL_FORMANTS.len())];
        let formants = vowel.map(|f| f * rng.random_range(0.92..1.08));
        let bandwidths = [
            rng.random_range(80.0..160.0),
            rng.random_range(100.0..200.0),
            rng.random_range(150.0..250.0),
        ];
        let gain = rng.random_range(0.4..1.0);
        let ramp = (0.025 * fs) as usize;
        for i in 0..seg_len {
            let frac = i as f64 / seg_len as f64;
            let vib = 1.0 + vibrato_depth * (2.0 * PI * vibrato_rate * i as f64 / fs).sin();
            let f0 = (f0_start + (f0_end - f0_start) * frac) * vib;
            phase += 2.0 * PI * f0 / fs;
            let env = if i < ramp {
                (0.5 * PI * i as f64 / ramp as f64).sin().powi(2)
            } else if seg_len - i < ramp {
                (0.5 * PI * (seg_len - i) as f64 / ramp as f64).sin().powi(2)
            } else {
                1.0
            };
            let mut s = 0.0;
            let mut h = 1;
            while h as f64 * f0 < 7000.0 {
                let f = h as f64 * f0;
                s += formant_gain(f, &formants, &bandwidths) / (h as f64).sqrt()
                    * (h as f64 * phase).sin();
                h += 1;
            }
            out[cursor + i] = gain * env * s;
        }
        cursor += seg_len + (rng.random_range(0.03..0.15) * fs) as usize;
    }
    out
}

fn unit_energy(x: &mut [f64]) {
    let e: f64 = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if e > 0.0 {
        let s = 1.0 / e.sqrt();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

fn synth_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;

    // Two-pole resonator driven by white noise, with a slow level drift.
    let centre = rng.random_range(200.0..4000.0);
    let r: f64 = rng.random_range(0.85..0.97);
    let a1 = 2.0 * r * (2.0 * PI * centre / fs).cos();
    let a2 = -r * r;
    let drift_rate = rng.random_range(0.2..1.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let mut filtered = vec![0.0; n];
    let (mut y1, mut y2) = (0.0, 0.0);
    for (i, out) in filtered.iter_mut().enumerate() {
        let x: f64 = rng.random_range(-1.0..1.0);
        let y = x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        let drift = 1.0 + 0.5 * (2.0 * PI * drift_rate * i as f64 / fs + drift_phase).sin();
        *out = y * drift;
    }
    unit_energy(&mut filtered);

    let mut tones = vec![0.0; n];
    for _ in 0..rng.random_range(1..=2) {
        let freq = rng.random_range(250.0..3500.0);
        let am_rate = rng.random_range(0.5..4.0);
        let am_depth = rng.random_range(0.5..1.0);
        let phase0 = rng.random_range(0.0..2.0 * PI);
        for (i, out) in tones.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let am = 1.0 - am_depth * 0.5 * (1.0 + (2.0 * PI * am_rate * t).cos());
            *out += am * (2.0 * PI * freq * t + phase0).sin();
        }
    }
    unit_energy(&mut tones);

    let tone_weight = rng.random_range(0.3..0.7);
    filtered
        .iter()
        .zip(&tones)
        .map(|(f, t)| (1.0 - tone_weight) * f + tone_weight * t)
        .collect()
}

/// Generates one clean/noise/mixture triplet in memory.
pub fn synth_triplet(spec: &MixSpec, stream: u64) -> Result<Triplet> {
    if !(spec.duration_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {}",
            spec.duration_s
        )));
    }
    let n = (spec.duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let clean = Waveform::new(synth_speech(&mut rng, n), SAMPLE_RATE)?;
    let noise = Waveform::new(synth_noise(&mut rng, n), SAMPLE_RATE)?;
    let (mixture, scaled_noise) = mix_at_snr(&clean, &noise, spec.snr_db)?;
    let peak = mixture.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = MIX_PEAK / peak;
    let rescale = |w: &Waveform| Waveform::new(w.samples().iter().map(|v| v * scale).collect(), SAMPLE_RATE);
    Ok(Triplet {
        clean: rescale(&clean)?,
        noise: rescale(&scaled_noise)?,
        mixture: rescale(&mixture)?,
    })
}

/// Writes `cfg.n_utts` triplets and `manifest.csv` under `out_dir`.
pub fn synth_corpus(out_dir: impl AsRef<Path>, cfg: &CorpusConfig) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if cfg.n_utts == 0 {
        return Err(Error::InvalidArgument("n_utts must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Manifest::default();
    for i in 0..cfg.n_utts {
        let spec = MixSpec {
            snr_db: SNR_LEVELS[i % SNR_LEVELS.len()],
            seed: cfg.seed,
            duration_s: cfg.duration_s,
        };
        let triplet = synth_triplet(&spec, i as u64)?;
        let utt_id = format!("utt{i:04}");
        let entry = ManifestEntry {
            clean_path: out_dir.join(format!("{utt_id}_clean.wav")),
            noise_path: out_dir.join(format!("{utt_id}_noise.wav")),
            mix_path: out_dir.join(format!("{utt_id}_mix.wav")),
            snr_db: spec.snr_db,
            utt_id,
        };
        write_wav(&entry.clean_path, &triplet.clean)?;
        write_wav(&entry.noise_path, &triplet.noise)?;
        write_wav(&entry.mix_path, &triplet.mixture)?;
        manifest.entries.push(entry);
    }
    write_manifest(out_dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}

fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Writes the manifest with paths relative to the manifest's directory.
pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for e in &manifest.entries {
        w.write_record([
            e.utt_id.clone(),
            format!("{}", e.snr_db),
            relative_to(&e.clean_path, base),
            relative_to(&e.noise_path, base),
            relative_to(&e.mix_path, base),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let csv_err = |e: csv::Error| match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::format(path, e.to_string()),
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let mut manifest = Manifest::default();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let snr_db = rec[1]
            .parse()
            .map_err(|_| Error::format(path, format!("bad snr_db {:?}", &rec[1])))?;
        manifest.entries.push(ManifestEntry {
            utt_id: rec[0].to_string(),
            snr_db,
            clean_path: base.join(&rec[2]),
            noise_path: base.join(&rec[3]),
            mix_path: base.join(&rec[4]),
        });
    }
    Ok(manifest)
}
