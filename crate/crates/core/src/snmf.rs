//! Sparse NMF for the squared-error (beta = 2) cost with unit-norm
//! dictionary columns, optimized by multiplicative updates.
//!
//! The objective is `0.5 * ||X - W H||_F^2 + lambda1 * ||H||_1`. The H update
//! is the usual majorize-minimize rule. The W update carries the
//! normalization-correction terms so that a multiplicative step followed by
//! column renormalization descends the normalized objective; a step that would
//! raise the objective is damped geometrically, and dropped if no damping helps.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Columns whose column norm may deviate from 1 by at most this much.
pub const UNIT_NORM_TOL: f64 = 1e-10;

// Number of halvings of the W-step exponent before the step is dropped.
const MAX_DAMPING: usize = 12;

/// Nonnegative `F x N` matrix with unit-norm columns, split into a speech
/// block (first `n_speech` columns) and a noise block.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    w: Array2<f64>,
    n_speech: usize,
    n_noise: usize,
}

impl Dictionary {
    pub fn new(w: Array2<f64>, n_speech: usize, n_noise: usize) -> Result<Self> {
        if w.ncols() != n_speech + n_noise {
            return Err(Error::shape(format!(
                "dictionary has {} columns, partition is {n_speech} + {n_noise}",
                w.ncols()
            )));
        }
        if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "dictionary entries must be finite and nonnegative, found {v}"
            )));
        }
        let dev = max_column_norm_deviation(w.view());
        if dev > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "dictionary columns must have unit norm (deviation {dev:e})"
            )));
        }
        let w = if w.is_standard_layout() { w } else { w.as_standard_layout().into_owned() };
        Ok(Dictionary {
            w,
            n_speech,
            n_noise,
        })
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.w
    }

    pub fn n_speech(&self) -> usize {
        self.n_speech
    }

    pub fn n_noise(&self) -> usize {
        self.n_noise
    }

    pub fn n_bins(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.w.ncols()
    }

    pub fn speech(&self) -> ArrayView2<'_, f64> {
        self.w.slice(s![.., ..self.n_speech])
    }

    pub fn noise(&self) -> ArrayView2<'_, f64> {
        self.w.slice(s![.., self.n_speech..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnmfConfig {
    pub lambda1: f64,
    pub n_iters: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SnmfConfig {
    fn default() -> Self {
        SnmfConfig {
            lambda1: 0.1,
            n_iters: 200,
            epsilon: 1e-12,
            seed: 1,
        }
    }
}

pub fn max_column_norm_deviation(w: ArrayView2<'_, f64>) -> f64 {
    w.axis_iter(Axis(1))
        .map(|c| (c.dot(&c).sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn check_shapes(x: &ArrayView2<'_, f64>, w: &ArrayView2<'_, f64>, h: &ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() != w.nrows() || w.ncols() != h.nrows() || x.ncols() != h.ncols() {
        return Err(Error::shape(format!(
            "X {:?}, W {:?}, H {:?}",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    Ok(())
}

fn objective_from_product(x: ArrayView2<'_, f64>, wh: &Array2<f64>, h: ArrayView2<'_, f64>, lambda1: f64) -> f64 {
    let mut sq = 0.0;
    Zip::from(x).and(wh).for_each(|&a, &b| sq += (a - b) * (a - b));
    0.5 * sq + lambda1 * h.sum()
}

/// `0.5 * ||X - W H||_F^2 + lambda1 * ||H||_1` (H is nonnegative, so the L1
/// norm is the plain sum).
pub fn snmf_objective(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>, lambda1: f64) -> Result<f64> {
    check_shapes(&x, &w, &h)?;
    Ok(objective_from_product(x, &w.dot(&h), h, lambda1))
}

fn check_finite(a: &Array2<f64>, name: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

/// H <- H * (W^T X) / (W^T (W H) + lambda1 + eps), given a precomputed W^T X.
fn update_h(wtx: &Array2<f64>, w: ArrayView2<'_, f64>, h: &mut Array2<f64>, lambda1: f64, eps: f64) {
    let denom = w.t().dot(&w.dot(h));
    Zip::from(h)
        .and(wtx)
        .and(&denom)
        .for_each(|h, &num, &den| *h *= num / (den + lambda1 + eps));
}

fn normalize_column(mut col: ndarray::ArrayViewMut1<'_, f64>) -> bool {
    let norm = col.dot(&col).sqrt();
    if norm > 0.0 && norm.is_finite() {
        col.mapv_inplace(|v| v / norm);
        true
    } else {
        false
    }
}

/// One alternating multiplicative update: H first, then every column of W with
/// `frozen[n] == false`. Frozen columns are left bitwise unchanged. Returns
/// the objective after the step.
pub fn mu_step(
    x: ArrayView2<'_, f64>,
    w: &mut Array2<f64>,
    h: &mut Array2<f64>,
    lambda1: f64,
    frozen: &[bool],
    eps: f64,
) -> Result<f64> {
    check_shapes(&x, &w.view(), &h.view())?;
    if frozen.len() != w.ncols() {
        return Err(Error::shape(format!(
            "column mask has {} entries for {} columns",
            frozen.len(),
            w.ncols()
        )));
    }

    let wtx = w.t().dot(&x);
    update_h(&wtx, w.view(), h, lambda1, eps);
    check_finite(h, "H")?;

    let wh = w.dot(&*h);
    let objective = objective_from_product(x, &wh, h.view(), lambda1);
    if frozen.iter().all(|&f| f) {
        return Ok(objective);
    }

    let xht = x.dot(&h.t());
    let whht = wh.dot(&h.t());
    // Column sums of (W H H^T) .* W and (X H^T) .* W.
    let grad_neg_corr: Array1<f64> = (&whht * &*w).sum_axis(Axis(0));
    let grad_pos_corr: Array1<f64> = (&xht * &*w).sum_axis(Axis(0));

    let mut ratio = Array2::<f64>::ones(w.dim());
    for (n, &is_frozen) in frozen.iter().enumerate() {
        if is_frozen {
            continue;
        }
        let wcol = w.column(n);
        Zip::from(ratio.column_mut(n))
            .and(&wcol)
            .and(xht.column(n))
            .and(whht.column(n))
            .for_each(|r, &wv, &pos, &neg| {
                let num = pos + wv * grad_neg_corr[n];
                let den = neg + wv * grad_pos_corr[n] + eps;
                *r = num / den;
            });
    }
    check_finite(&ratio, "W")?;

    let mut exponent = 1.0;
    for _ in 0..MAX_DAMPING {
        let mut candidate = w.clone();
        for (n, &is_frozen) in frozen.iter().enumerate() {
            if is_frozen {
                continue;
            }
            let mut col = candidate.column_mut(n);
            if exponent == 1.0 {
                col.zip_mut_with(&ratio.column(n), |v, &r| *v *= r);
            } else {
                col.zip_mut_with(&ratio.column(n), |v, &r| *v *= r.powf(exponent));
            }
            if !normalize_column(col) {
                // A column that collapsed to zero keeps its previous value.
                candidate.column_mut(n).assign(&w.column(n));
            }
        }
        let cand_obj = objective_from_product(x, &candidate.dot(&*h), h.view(), lambda1);
        if cand_obj <= objective {
            *w = candidate;
            return Ok(cand_obj);
        }
        exponent *= 0.5;
    }
    Ok(objective)
}

fn random_dictionary(rng: &mut ChaCha8Rng, n_bins: usize, n_atoms: usize) -> Array2<f64> {
    let mut w = Array2::from_shape_fn((n_bins, n_atoms), |_| rng.random_range(0.0..1.0));
    for col in w.axis_iter_mut(Axis(1)) {
        normalize_column(col);
    }
    w
}

fn random_activations(rng: &mut ChaCha8Rng, n_atoms: usize, n_frames: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_atoms, n_frames), |_| rng.random_range(0.0..1.0))
}

fn concat_frames(mags: &[Array2<f64>]) -> Result<Array2<f64>> {
    if mags.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let views: Vec<_> = mags.iter().map(|m| m.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))
}

/// Outcome of dictionary training: the dictionary and the objective after
/// initialization followed by the value after every MU step.
#[derive(Debug, Clone)]
pub struct DictionaryFit {
    pub dictionary: Dictionary,
    pub objectives: Vec<f64>,
}

/// Learns the speech block from concatenated clean magnitude spectrograms.
pub fn train_speech_dict(clean_mags: &[Array2<f64>], n_speech: usize, cfg: &SnmfConfig) -> Result<DictionaryFit> {
    if n_speech == 0 {
        return Err(Error::InvalidArgument("n_speech must be at least 1".into()));
    }
    let x = concat_frames(clean_mags)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = random_dictionary(&mut rng, x.nrows(), n_speech);
    let mut h = random_activations(&mut rng, n_speech, x.ncols());
    let frozen = vec![false; n_speech];
    let mut objectives = vec![snmf_objective(x.view(), w.view(), h.view(), cfg.lambda1)?];
    for _ in 0..cfg.n_iters {
        objectives.push(mu_step(x.view(), &mut w, &mut h, cfg.lambda1, &frozen, cfg.epsilon)?);
    }
    Ok(DictionaryFit {
        dictionary: Dictionary::new(w, n_speech, 0)?,
        objectives,
    })
}

/// Appends a noise block learned on noisy spectrograms, keeping the speech
/// block fixed.
pub fn train_noise_dict(
    noisy_mags: &[Array2<f64>],
    speech: &Dictionary,
    n_noise: usize,
    cfg: &SnmfConfig,
) -> Result<DictionaryFit> {
    let x = concat_frames(noisy_mags)?;
    if x.nrows() != speech.n_bins() {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, dictionary {}",
            x.nrows(),
            speech.n_bins()
        )));
    }
    let ws = speech.speech();
    if n_noise == 0 {
        let w = ws.to_owned();
        let h = random_activations(&mut ChaCha8Rng::seed_from_u64(cfg.seed), w.ncols(), x.ncols());
        let obj = snmf_objective(x.view(), w.view(), h.view(), cfg.lambda1)?;
        return Ok(DictionaryFit {
            dictionary: Dictionary::new(w, speech.n_speech(), 0)?,
            objectives: vec![obj],
        });
    }
    let n_speech = speech.n_speech();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let wv = random_dictionary(&mut rng, x.nrows(), n_noise);
    let mut w = ndarray::concatenate(Axis(1), &[ws, wv.view()]).map_err(|e| Error::shape(e.to_string()))?;
    let mut h = random_activations(&mut rng, n_speech + n_noise, x.ncols());
    let mut frozen = vec![true; n_speech];
    frozen.extend(std::iter::repeat_n(false, n_noise));
    let mut objectives = vec![snmf_objective(x.view(), w.view(), h.view(), cfg.lambda1)?];
    for _ in 0..cfg.n_iters {
        objectives.push(mu_step(x.view(), &mut w, &mut h, cfg.lambda1, &frozen, cfg.epsilon)?);
    }
    Ok(DictionaryFit {
        dictionary: Dictionary::new(w, n_speech, n_noise)?,
        objectives,
    })
}

/// Activations for a fixed dictionary: `cfg.n_iters` H-only MU steps from a
/// seeded uniform(0, 1) start.
pub fn infer_h_mu(x: ArrayView2<'_, f64>, w: &Dictionary, cfg: &SnmfConfig) -> Result<Array2<f64>> {
    let wv = w.w().view();
    if x.nrows() != wv.nrows() {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, dictionary {}",
            x.nrows(),
            wv.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut h = random_activations(&mut rng, wv.ncols(), x.ncols());
    let wtx = wv.t().dot(&x);
    for _ in 0..cfg.n_iters {
        update_h(&wtx, wv, &mut h, cfg.lambda1, cfg.epsilon);
    }
    check_finite(&h, "H")?;
    Ok(h)
}
