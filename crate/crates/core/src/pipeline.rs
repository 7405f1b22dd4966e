//! Glue shared by the command-line tool and the end-to-end tests: a flat
//! configuration, corpus loading, dictionary training, the two separators
//! and SDR evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ista;
use crate::network::{apply_mask, compute_mask, partitioned_estimates, DrNmfParams, RealizedWeights, StreamingSeparator};
use crate::signal::{sdr, Manifest, Spectrogram, StftPlan, Waveform};
use crate::snmf::{infer_h_mu, train_noise_dict, train_speech_dict, Dictionary, SnmfConfig};
use crate::train::{MagnitudePair, TrainConfig};

/// How the initial inverse step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    /// `N / 4`.
    Auto,
    /// Power-iteration estimate of the largest eigenvalue of `W^T W`.
    Lipschitz,
    Fixed(f64),
}

impl AlphaPolicy {
    pub fn resolve(&self, w: &Array2<f64>) -> f64 {
        match *self {
            AlphaPolicy::Auto => ista::alpha_heuristic(w.ncols()),
            AlphaPolicy::Lipschitz => ista::lipschitz_estimate(w.view()),
            AlphaPolicy::Fixed(a) => a,
        }
    }
}

impl std::fmt::Display for AlphaPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlphaPolicy::Auto => write!(f, "auto"),
            AlphaPolicy::Lipschitz => write!(f, "lipschitz"),
            AlphaPolicy::Fixed(a) => write!(f, "{a}"),
        }
    }
}

impl std::str::FromStr for AlphaPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(AlphaPolicy::Auto),
            "lipschitz" => Ok(AlphaPolicy::Lipschitz),
            _ => match s.parse::<f64>() {
                Ok(a) if a > 0.0 && a.is_finite() => Ok(AlphaPolicy::Fixed(a)),
                _ => Err(format!("`{s}` is not auto, lipschitz or a positive number")),
            },
        }
    }
}

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

/// Every configuration key with its default. The defaults of
/// [`PipelineConfig`] are parsed from this table.
pub const KEYS: &[KeySpec] = &[
    KeySpec { name: "frame_size", default: "512", help: "STFT frame length in samples" },
    KeySpec { name: "hop", default: "128", help: "STFT hop in samples" },
    KeySpec { name: "n_speech", default: "32", help: "speech dictionary atoms" },
    KeySpec { name: "n_noise", default: "32", help: "noise dictionary atoms" },
    KeySpec { name: "layers", default: "5", help: "DR-NMF layers per frame (K)" },
    KeySpec { name: "lambda1", default: "0.1", help: "L1 weight on activations, shared by every stage" },
    KeySpec { name: "alpha", default: "auto", help: "initial inverse step size: auto (N/4), lipschitz, or a number" },
    KeySpec { name: "h0_init", default: "0.001", help: "initial value of every entry of h0" },
    KeySpec { name: "nmf_iters", default: "200", help: "multiplicative-update iterations for dictionary training" },
    KeySpec { name: "mu_test_iters", default: "200", help: "multiplicative-update iterations for SNMF separation" },
    KeySpec { name: "learning_rate", default: "0.001", help: "Adam learning rate" },
    KeySpec { name: "batch_size", default: "32", help: "sequences per Adam step" },
    KeySpec { name: "max_seq_frames", default: "500", help: "training sequences are cut to at most this many frames" },
    KeySpec { name: "patience_epochs", default: "50", help: "stop after this many epochs without validation improvement" },
    KeySpec { name: "max_epochs", default: "200", help: "hard cap on training epochs" },
    KeySpec { name: "nmf_seed", default: "1", help: "seed for dictionary and activation initialization" },
    KeySpec { name: "shuffle_seed", default: "3", help: "seed for mini-batch shuffling" },
    KeySpec { name: "corpus_seed", default: "7", help: "seed for corpus synthesis" },
    KeySpec { name: "n_utts", default: "12", help: "utterances generated by synth" },
    KeySpec { name: "utt_seconds", default: "2", help: "duration of each synthesized utterance" },
    KeySpec { name: "eps_mu", default: "1e-12", help: "denominator floor of the multiplicative updates" },
    KeySpec { name: "eps_log", default: "1e-8", help: "offset in log(eps + w) when initializing the network" },
    KeySpec { name: "eps_mask", default: "1e-12", help: "mask guard against 0/0" },
    KeySpec { name: "gradcheck_coords", default: "50", help: "coordinates probed per tensor by gradcheck" },
    KeySpec { name: "gradcheck_step", default: "1e-5", help: "central-difference step for gradcheck" },
    KeySpec { name: "gradcheck_seed", default: "0", help: "seed for gradcheck model and probes" },
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub n_speech: usize,
    pub n_noise: usize,
    pub layers: usize,
    pub lambda1: f64,
    pub alpha: AlphaPolicy,
    pub h0_init: f64,
    pub nmf_iters: usize,
    pub mu_test_iters: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_seq_frames: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub nmf_seed: u64,
    pub shuffle_seed: u64,
    pub corpus_seed: u64,
    pub n_utts: usize,
    pub utt_seconds: f64,
    pub eps_mu: f64,
    pub eps_log: f64,
    pub eps_mask: f64,
    pub gradcheck_coords: usize,
    pub gradcheck_step: f64,
    pub gradcheck_seed: u64,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut c = PipelineConfig {
            frame_size: 0,
            hop: 0,
            n_speech: 0,
            n_noise: 0,
            layers: 0,
            lambda1: 0.0,
            alpha: AlphaPolicy::Auto,
            h0_init: 0.0,
            nmf_iters: 0,
            mu_test_iters: 0,
            learning_rate: 0.0,
            batch_size: 0,
            max_seq_frames: 0,
            patience_epochs: 0,
            max_epochs: 0,
            nmf_seed: 0,
            shuffle_seed: 0,
            corpus_seed: 0,
            n_utts: 0,
            utt_seconds: 0.0,
            eps_mu: 0.0,
            eps_log: 0.0,
            eps_mask: 0.0,
            gradcheck_coords: 0,
            gradcheck_step: 0.0,
            gradcheck_seed: 0,
        };
        for k in KEYS {
            c.set(k.name, k.default).expect("table defaults parse");
        }
        c
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "frame_size" => self.frame_size = parse(key, value)?,
            "hop" => self.hop = parse(key, value)?,
            "n_speech" => self.n_speech = parse(key, value)?,
            "n_noise" => self.n_noise = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "alpha" => self.alpha = value.trim().parse().map_err(|e| Error::Config(format!("`alpha`: {e}")))?,
            "h0_init" => self.h0_init = parse(key, value)?,
            "nmf_iters" => self.nmf_iters = parse(key, value)?,
            "mu_test_iters" => self.mu_test_iters = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_seq_frames" => self.max_seq_frames = parse(key, value)?,
            "patience_epochs" => self.patience_epochs = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "nmf_seed" => self.nmf_seed = parse(key, value)?,
            "shuffle_seed" => self.shuffle_seed = parse(key, value)?,
            "corpus_seed" => self.corpus_seed = parse(key, value)?,
            "n_utts" => self.n_utts = parse(key, value)?,
            "utt_seconds" => self.utt_seconds = parse(key, value)?,
            "eps_mu" => self.eps_mu = parse(key, value)?,
            "eps_log" => self.eps_log = parse(key, value)?,
            "eps_mask" => self.eps_mask = parse(key, value)?,
            "gradcheck_coords" => self.gradcheck_coords = parse(key, value)?,
            "gradcheck_step" => self.gradcheck_step = parse(key, value)?,
            "gradcheck_seed" => self.gradcheck_seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "frame_size" => self.frame_size.to_string(),
            "hop" => self.hop.to_string(),
            "n_speech" => self.n_speech.to_string(),
            "n_noise" => self.n_noise.to_string(),
            "layers" => self.layers.to_string(),
            "lambda1" => self.lambda1.to_string(),
            "alpha" => self.alpha.to_string(),
            "h0_init" => self.h0_init.to_string(),
            "nmf_iters" => self.nmf_iters.to_string(),
            "mu_test_iters" => self.mu_test_iters.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_seq_frames" => self.max_seq_frames.to_string(),
            "patience_epochs" => self.patience_epochs.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "nmf_seed" => self.nmf_seed.to_string(),
            "shuffle_seed" => self.shuffle_seed.to_string(),
            "corpus_seed" => self.corpus_seed.to_string(),
            "n_utts" => self.n_utts.to_string(),
            "utt_seconds" => self.utt_seconds.to_string(),
            "eps_mu" => self.eps_mu.to_string(),
            "eps_log" => self.eps_log.to_string(),
            "eps_mask" => self.eps_mask.to_string(),
            "gradcheck_coords" => self.gradcheck_coords.to_string(),
            "gradcheck_step" => self.gradcheck_step.to_string(),
            "gradcheck_seed" => self.gradcheck_seed.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = PipelineConfig::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Effective configuration as `key = value` lines in table order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.name, self.get(k.name).expect("every table key is gettable")))
            .collect()
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|k| (k.name.to_string(), self.get(k.name).expect("table key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        StftPlan::new(self.frame_size, self.hop).map_err(|e| Error::Config(e.to_string()))?;
        if self.n_speech == 0 {
            return bad("n_speech must be at least 1".into());
        }
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        for (name, v) in [("lambda1", self.lambda1), ("h0_init", self.h0_init)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("utt_seconds", self.utt_seconds),
            ("eps_mu", self.eps_mu),
            ("eps_log", self.eps_log),
            ("eps_mask", self.eps_mask),
            ("gradcheck_step", self.gradcheck_step),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and positive"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_seq_frames", self.max_seq_frames),
            ("patience_epochs", self.patience_epochs),
            ("n_utts", self.n_utts),
            ("gradcheck_coords", self.gradcheck_coords),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<StftPlan> {
        StftPlan::new(self.frame_size, self.hop)
    }

    pub fn snmf_train(&self) -> SnmfConfig {
        SnmfConfig { lambda1: self.lambda1, n_iters: self.nmf_iters, epsilon: self.eps_mu, seed: self.nmf_seed }
    }

    pub fn snmf_test(&self) -> SnmfConfig {
        SnmfConfig { n_iters: self.mu_test_iters, ..self.snmf_train() }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_seq_frames: self.max_seq_frames,
            patience_epochs: self.patience_epochs,
            max_epochs: self.max_epochs,
            shuffle_seed: self.shuffle_seed,
            learning_rate: self.learning_rate,
        }
    }

    pub fn initial_network(&self, dict: &Dictionary) -> Result<DrNmfParams> {
        let alpha0 = self.alpha.resolve(dict.w());
        let mut p = DrNmfParams::from_dictionary_with_eps(dict, self.lambda1, self.layers, alpha0, self.h0_init, self.eps_log)?;
        p.eps_mask = self.eps_mask;
        Ok(p)
    }
}

/// One utterance of a manifest with its spectra.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub snr_db: f64,
    pub clean: Waveform,
    pub noise: Waveform,
    pub mixture: Waveform,
    pub noisy_spec: Spectrogram,
    pub clean_mag: Array2<f64>,
    pub noise_mag: Array2<f64>,
}

pub fn load_utterances(manifest: &Manifest, plan: &StftPlan) -> Result<Vec<Utterance>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let t = e.load()?;
            let noisy_spec = plan.stft(&t.mixture)?;
            let clean_mag = plan.stft(&t.clean)?.magnitude;
            let noise_mag = plan.stft(&t.noise)?.magnitude;
            Ok(Utterance {
                id: e.utt_id.clone(),
                snr_db: e.snr_db,
                clean: t.clean,
                noise: t.noise,
                mixture: t.mixture,
                noisy_spec,
                clean_mag,
                noise_mag,
            })
        })
        .collect()
}

pub fn magnitude_pairs(utts: &[Utterance]) -> Vec<MagnitudePair> {
    utts.iter()
        .map(|u| (u.noisy_spec.magnitude.clone(), u.clean_mag.clone()))
        .collect()
}

pub struct TrainedDictionary {
    pub dictionary: Dictionary,
    pub speech_objectives: Vec<f64>,
    pub noise_objectives: Vec<f64>,
}

/// Speech atoms from clean spectra, then noise atoms from the mixtures with
/// the speech block frozen.
pub fn train_dictionary(utts: &[Utterance], n_speech: usize, n_noise: usize, cfg: &SnmfConfig) -> Result<TrainedDictionary> {
    let clean: Vec<Array2<f64>> = utts.iter().map(|u| u.clean_mag.clone()).collect();
    let noisy: Vec<Array2<f64>> = utts.iter().map(|u| u.noisy_spec.magnitude.clone()).collect();
    let speech = train_speech_dict(&clean, n_speech, cfg)?;
    info!(
        "speech dictionary: objective {:.6e} -> {:.6e}",
        speech.objectives[0],
        speech.objectives.last().unwrap()
    );
    let full = train_noise_dict(&noisy, &speech.dictionary, n_noise, cfg)?;
    info!(
        "noise dictionary: objective {:.6e} -> {:.6e}",
        full.objectives[0],
        full.objectives.last().unwrap()
    );
    Ok(TrainedDictionary {
        dictionary: full.dictionary,
        speech_objectives: speech.objectives,
        noise_objectives: full.objectives,
    })
}

/// Sparse NMF separation: multiplicative-update activations on the mixture,
/// Wiener-style mask from the two dictionary blocks.
pub fn snmf_mask(dict: &Dictionary, x: &Array2<f64>, cfg: &SnmfConfig, eps_mask: f64) -> Result<Array2<f64>> {
    let h = infer_h_mu(x.view(), dict, cfg)?;
    let (y, v) = partitioned_estimates(dict.w().view(), h.view(), dict.n_speech());
    Ok(compute_mask(&y, &v, eps_mask))
}

pub fn separate_snmf(dict: &Dictionary, mixture: &Spectrogram, plan: &StftPlan, cfg: &SnmfConfig, eps_mask: f64) -> Result<Waveform> {
    apply_mask(mixture, &snmf_mask(dict, &mixture.magnitude, cfg, eps_mask)?, plan)
}

pub fn separate_drnmf(weights: &RealizedWeights, mixture: &Spectrogram, plan: &StftPlan) -> Result<Waveform> {
    let mask = crate::network::infer_mask(weights, mixture.magnitude.view())?;
    apply_mask(mixture, &mask, plan)
}

/// Streams `noisy` through the network in fixed-size chunks.
pub fn separate_streaming(weights: &RealizedWeights, plan: &StftPlan, noisy: &Waveform, chunk: usize) -> Result<Waveform> {
    let mut s = StreamingSeparator::new(weights.clone(), plan.clone(), crate::network::MaskMode::Model)?;
    let mut out = Vec::with_capacity(noisy.len());
    for c in noisy.samples().chunks(chunk.max(1)) {
        s.push(c, &mut out)?;
    }
    s.finish(&mut out);
    Waveform::new(out, noisy.sample_rate())
}

/// SDR of `estimate` against `reference`, both truncated to the shorter
/// length (the STFT drops a trailing partial frame).
pub fn sdr_aligned(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    let n = reference.len().min(estimate.len());
    sdr(&reference.truncated(n)?, &estimate.truncated(n)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrRow {
    pub utt_id: String,
    pub snr_db: f64,
    pub sdr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrTable {
    pub method: String,
    pub rows: Vec<SdrRow>,
}

impl SdrTable {
    pub fn mean(&self) -> f64 {
        self.rows.iter().map(|r| r.sdr_db).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// Mean SDR per SNR label, ascending.
    pub fn per_snr(&self) -> Vec<(f64, f64, usize)> {
        let mut groups: Vec<(f64, f64, usize)> = Vec::new();
        for r in &self.rows {
            match groups.iter_mut().find(|g| g.0 == r.snr_db) {
                Some(g) => {
                    g.1 += r.sdr_db;
                    g.2 += 1;
                }
                None => groups.push((r.snr_db, r.sdr_db, 1)),
            }
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0));
        groups.into_iter().map(|(s, sum, n)| (s, sum / n as f64, n)).collect()
    }

    /// Per-utterance rows, then one `mean` row per SNR and an overall mean.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::from("utt_id,snr_db,method,sdr_db\n");
        for r in &self.rows {
            text.push_str(&format!("{},{},{},{:.4}\n", r.utt_id, r.snr_db, self.method, r.sdr_db));
        }
        for (snr, mean, _) in self.per_snr() {
            text.push_str(&format!("mean,{snr},{},{mean:.4}\n", self.method));
        }
        text.push_str(&format!("mean,all,{},{:.4}\n", self.method, self.mean()));
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Scores `estimate(utt)` against each clean reference.
pub fn evaluate<F>(utts: &[Utterance], method: &str, mut estimate: F) -> Result<SdrTable>
where
    F: FnMut(&Utterance) -> Result<Waveform>,
{
    let mut rows = Vec::with_capacity(utts.len());
    for u in utts {
        let est = estimate(u)?;
        rows.push(SdrRow { utt_id: u.id.clone(), snr_db: u.snr_db, sdr_db: sdr_aligned(&u.clean, &est)? });
    }
    Ok(SdrTable { method: method.to_string(), rows })
}
