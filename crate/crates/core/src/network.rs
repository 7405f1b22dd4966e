//! The DR-NMF network: warm-start ISTA unrolled into `K` untied layers per
//! frame, with the last layer of frame `t - 1` feeding the first layer of
//! frame `t`.
//!
//! Trainable weights live in the log domain. Layer `k` uses
//! `W_k = exp(W_log_k)` with every column rescaled to unit norm and
//! `alpha_k = exp(alpha_log_k)`; the initial state is `h0 = exp(h0_log)`.
//! The sparsity weight `lambda1` stays fixed, so the per-layer threshold
//! `lambda1 / alpha_k` moves only through `alpha_k`.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::ista;
use crate::signal::{Spectrogram, StftPlan, Waveform};
use crate::snmf::Dictionary;

pub const DEFAULT_EPS_LOG: f64 = 1e-8;
pub const DEFAULT_EPS_MASK: f64 = 1e-12;

/// Log-domain trainable tensors. Also used for their gradients and for the
/// optimizer moments, which share the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainables {
    pub w_log: Vec<Array2<f64>>,
    pub alpha_log: Array1<f64>,
    pub h0_log: Array1<f64>,
}

pub type Gradients = Trainables;

impl Trainables {
    pub fn zeros_like(other: &Trainables) -> Trainables {
        Trainables {
            w_log: other.w_log.iter().map(|w| Array2::zeros(w.dim())).collect(),
            alpha_log: Array1::zeros(other.alpha_log.len()),
            h0_log: Array1::zeros(other.h0_log.len()),
        }
    }

    /// Tensor names in storage order: `W_log_1..K`, `alpha_log`, `h0_log`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.w_log.len()).map(|k| format!("W_log_{k}")).collect();
        names.push("alpha_log".into());
        names.push("h0_log".into());
        names
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self
            .w_log
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .collect();
        v.push(self.alpha_log.as_slice().expect("contiguous"));
        v.push(self.h0_log.as_slice().expect("contiguous"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self
            .w_log
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .collect();
        v.push(self.alpha_log.as_slice_mut().expect("contiguous"));
        v.push(self.h0_log.as_slice_mut().expect("contiguous"));
        v
    }

    pub fn same_shape(&self, other: &Trainables) -> bool {
        self.w_log.len() == other.w_log.len()
            && self.w_log.iter().zip(&other.w_log).all(|(a, b)| a.dim() == b.dim())
            && self.alpha_log.len() == other.alpha_log.len()
            && self.h0_log.len() == other.h0_log.len()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Trainables, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .into_iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().into_iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrNmfParams {
    pub weights: Trainables,
    pub lambda1: f64,
    pub n_speech: usize,
    pub n_noise: usize,
    pub eps_log: f64,
    pub eps_mask: f64,
}

impl DrNmfParams {
    /// Every layer starts from the same dictionary and step size:
    /// `W_log_k = log(eps + W)`, `alpha_log_k = log(eps + alpha0)`,
    /// `h0_log = log(eps + h0_const)`.
    pub fn from_dictionary(dict: &Dictionary, lambda1: f64, n_layers: usize, alpha0: f64, h0_const: f64) -> Result<Self> {
        Self::from_dictionary_with_eps(dict, lambda1, n_layers, alpha0, h0_const, DEFAULT_EPS_LOG)
    }

    pub fn from_dictionary_with_eps(
        dict: &Dictionary,
        lambda1: f64,
        n_layers: usize,
        alpha0: f64,
        h0_const: f64,
        eps: f64,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::InvalidArgument("the network needs at least one layer".into()));
        }
        if !(alpha0 > 0.0) || !(h0_const >= 0.0) || !(lambda1 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha0 = {alpha0}, h0 = {h0_const}, lambda1 = {lambda1} out of range"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("eps_log = {eps} must be positive")));
        }
        let w_log = dict.w().mapv(|v| (eps + v).ln());
        Ok(DrNmfParams {
            weights: Trainables {
                w_log: vec![w_log; n_layers],
                alpha_log: Array1::from_elem(n_layers, (eps + alpha0).ln()),
                h0_log: Array1::from_elem(dict.n_atoms(), (eps + h0_const).ln()),
            },
            lambda1,
            n_speech: dict.n_speech(),
            n_noise: dict.n_noise(),
            eps_log: eps,
            eps_mask: DEFAULT_EPS_MASK,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.w_log.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.n_speech + self.n_noise
    }

    pub fn n_bins(&self) -> usize {
        self.weights.w_log.first().map_or(0, |w| w.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_layers();
        let n = self.n_atoms();
        if k == 0 {
            return Err(Error::InvalidArgument("the network needs at least one layer".into()));
        }
        let f = self.n_bins();
        if self.weights.w_log.iter().any(|w| w.dim() != (f, n)) {
            return Err(Error::shape(format!("every W_log_k must be {f}x{n}")));
        }
        if self.weights.w_log.iter().any(|w| !w.is_standard_layout()) {
            return Err(Error::InvalidArgument("W_log tensors must be in row-major layout".into()));
        }
        if self.weights.alpha_log.len() != k || self.weights.h0_log.len() != n {
            return Err(Error::shape(format!(
                "alpha_log has {} entries for {k} layers, h0_log {} for {n} atoms",
                self.weights.alpha_log.len(),
                self.weights.h0_log.len()
            )));
        }
        for (name, t) in self.weights.tensor_names().iter().zip(self.weights.tensors()) {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.clone()));
            }
        }
        Ok(())
    }

    pub fn realize(&self) -> Result<RealizedWeights> {
        self.validate()?;
        let mut w = Vec::with_capacity(self.n_layers());
        for (k, wl) in self.weights.w_log.iter().enumerate() {
            let mut v = wl.mapv(f64::exp);
            for (n, mut col) in v.axis_iter_mut(Axis(1)).enumerate() {
                let norm = col.dot(&col).sqrt();
                if !norm.is_finite() || norm == 0.0 {
                    return Err(Error::Overflow(format!("W_log_{}[:, {n}]", k + 1)));
                }
                col.mapv_inplace(|x| x / norm);
            }
            w.push(v);
        }
        let alpha: Vec<f64> = self.weights.alpha_log.iter().map(|a| a.exp()).collect();
        if let Some(k) = alpha.iter().position(|a| !a.is_finite() || *a == 0.0) {
            return Err(Error::Overflow(format!("alpha_log_{}", k + 1)));
        }
        let h0 = self.weights.h0_log.mapv(f64::exp);
        if h0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow("h0_log".into()));
        }
        Ok(RealizedWeights {
            gram: w.iter().map(|wk| ista::gram(wk.view())).collect(),
            w,
            alpha,
            h0,
            lambda1: self.lambda1,
            n_speech: self.n_speech,
            eps_mask: self.eps_mask,
        })
    }
}

/// Nonnegative weights actually applied by the network, with the per-layer
/// Gram matrices `W_k^T W_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedWeights {
    pub w: Vec<Array2<f64>>,
    pub alpha: Vec<f64>,
    pub h0: Array1<f64>,
    pub gram: Vec<Array2<f64>>,
    pub lambda1: f64,
    pub n_speech: usize,
    pub eps_mask: f64,
}

impl RealizedWeights {
    pub fn n_layers(&self) -> usize {
        self.w.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.h0.len()
    }

    pub fn n_bins(&self) -> usize {
        self.w[0].nrows()
    }

    /// Dictionary used to reconstruct the speech and noise estimates.
    pub fn output_dictionary(&self) -> &Array2<f64> {
        self.w.last().expect("at least one layer")
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub weights: RealizedWeights,
    /// `states[[t, k, ..]]` is the input to layer `k` at frame `t`; index `K`
    /// holds the frame's output.
    pub states: Array3<f64>,
    /// Pre-activation `z - lambda1 / alpha_k` of every layer.
    pub pre_activations: Array3<f64>,
    /// Per-layer `W_k^T X`, `N x T`.
    pub wtx: Vec<Array2<f64>>,
    /// Final activations `[h_1^(K) ... h_T^(K)]`, `N x T`.
    pub h: Array2<f64>,
    pub y_hat: Array2<f64>,
    pub v_hat: Array2<f64>,
    pub mask: Array2<f64>,
    /// `mask .* X`.
    pub output: Array2<f64>,
}

fn check_input(x: &ArrayView2<'_, f64>, n_bins: usize) -> Result<()> {
    if x.nrows() != n_bins {
        return Err(Error::shape(format!("input has {} bins, model {n_bins}", x.nrows())));
    }
    if x.ncols() == 0 {
        return Err(Error::EmptySignal);
    }
    if x.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("input magnitudes must be finite and nonnegative".into()));
    }
    Ok(())
}

/// `(Y + eps/2) / (Y + V + eps)`, elementwise. Exactly 0.5 where both vanish.
pub fn compute_mask(y_hat: &Array2<f64>, v_hat: &Array2<f64>, eps_mask: f64) -> Array2<f64> {
    let mut m = Array2::zeros(y_hat.dim());
    Zip::from(&mut m)
        .and(y_hat)
        .and(v_hat)
        .for_each(|m, &y, &v| *m = (y + 0.5 * eps_mask) / (y + v + eps_mask));
    m
}

/// Speech and noise estimates `W_s H_s` and `W_n H_n` for a partitioned
/// dictionary.
pub fn partitioned_estimates(w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>, n_speech: usize) -> (Array2<f64>, Array2<f64>) {
    let y = w.slice(s![.., ..n_speech]).dot(&h.slice(s![..n_speech, ..]));
    let v = w.slice(s![.., n_speech..]).dot(&h.slice(s![n_speech.., ..]));
    (y, v)
}

/// `sum_{f,t} (Y - M .* X)^2`.
pub fn signal_approx_loss(y: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, mask: ArrayView2<'_, f64>) -> Result<f64> {
    if y.dim() != x.dim() || x.dim() != mask.dim() {
        return Err(Error::shape(format!(
            "Y {:?}, X {:?}, mask {:?}",
            y.dim(),
            x.dim(),
            mask.dim()
        )));
    }
    let mut acc = 0.0;
    Zip::from(y).and(x).and(mask).for_each(|&y, &x, &m| {
        let r = y - m * x;
        acc += r * r;
    });
    Ok(acc)
}

fn nonfinite_at(h: &Array1<f64>, t: usize, k: usize) -> Result<()> {
    if h.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("activations at frame {t}, layer {}", k + 1)))
    }
}

/// Runs the unrolled recurrence and keeps every intermediate state.
pub fn forward(p: &DrNmfParams, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
    forward_realized(p.realize()?, x)
}

pub fn forward_realized(weights: RealizedWeights, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
    check_input(&x, weights.n_bins())?;
    let (n, t_len, k_len) = (weights.n_atoms(), x.ncols(), weights.n_layers());
    let wtx: Vec<Array2<f64>> = weights.w.iter().map(|w| w.t().dot(&x)).collect();
    let mut states = Array3::zeros((t_len, k_len + 1, n));
    let mut pre = Array3::zeros((t_len, k_len, n));
    let mut h = Array2::zeros((n, t_len));
    let mut prev = weights.h0.clone();
    let mut cur = Array1::zeros(n);
    let mut z = Array1::zeros(n);
    for t in 0..t_len {
        states.slice_mut(s![t, 0, ..]).assign(&prev);
        for k in 0..k_len {
            let alpha = weights.alpha[k];
            ista::iterate(&weights.gram[k], wtx[k].column(t), prev.view(), alpha, weights.lambda1, true, &mut z, &mut cur);
            nonfinite_at(&cur, t, k)?;
            let threshold = weights.lambda1 * (1.0 / alpha);
            pre.slice_mut(s![t, k, ..]).assign(&z.mapv(|v| v - threshold));
            std::mem::swap(&mut prev, &mut cur);
            states.slice_mut(s![t, k + 1, ..]).assign(&prev);
        }
        h.column_mut(t).assign(&prev);
    }
    let (y_hat, v_hat) = partitioned_estimates(weights.output_dictionary().view(), h.view(), weights.n_speech);
    let mask = compute_mask(&y_hat, &v_hat, weights.eps_mask);
    let output = &mask * &x;
    Ok(ForwardTrace {
        weights,
        states,
        pre_activations: pre,
        wtx,
        h,
        y_hat,
        v_hat,
        mask,
        output,
    })
}

/// Final activations and mask without storing the per-layer trace.
pub fn infer_mask(weights: &RealizedWeights, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_input(&x, weights.n_bins())?;
    let n = weights.n_atoms();
    let wtx: Vec<Array2<f64>> = weights.w.iter().map(|w| w.t().dot(&x)).collect();
    let mut h = Array2::zeros((n, x.ncols()));
    let mut prev = weights.h0.clone();
    let mut cur = Array1::zeros(n);
    let mut z = Array1::zeros(n);
    for t in 0..x.ncols() {
        for k in 0..weights.n_layers() {
            ista::iterate(&weights.gram[k], wtx[k].column(t), prev.view(), weights.alpha[k], weights.lambda1, true, &mut z, &mut cur);
            nonfinite_at(&cur, t, k)?;
            std::mem::swap(&mut prev, &mut cur);
        }
        h.column_mut(t).assign(&prev);
    }
    let (y_hat, v_hat) = partitioned_estimates(weights.output_dictionary().view(), h.view(), weights.n_speech);
    Ok(compute_mask(&y_hat, &v_hat, weights.eps_mask))
}

/// Mean of the per-utterance loss over `(noisy, clean)` magnitude pairs.
pub fn mean_loss(weights: &RealizedWeights, pairs: &[(Array2<f64>, Array2<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no utterances".into()));
    }
    let mut total = 0.0;
    for (x, y) in pairs {
        let m = infer_mask(weights, x.view())?;
        total += signal_approx_loss(y.view(), x.view(), m.view())?;
    }
    Ok(total / pairs.len() as f64)
}

/// How the time-frequency mask is obtained when separating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Model,
    /// All-ones mask; reconstructs the input.
    Identity,
    /// All-zeros mask; silences the output.
    Zero,
}

/// Batch separation: STFT, mask from the network, masked inverse STFT.
pub fn separate(p: &DrNmfParams, noisy: &Waveform, plan: &StftPlan) -> Result<Waveform> {
    separate_with(&p.realize()?, noisy, plan, MaskMode::Model)
}

pub fn separate_with(weights: &RealizedWeights, noisy: &Waveform, plan: &StftPlan, mode: MaskMode) -> Result<Waveform> {
    let spec = plan.stft(noisy)?;
    let mask = match mode {
        MaskMode::Model => infer_mask(weights, spec.magnitude.view())?,
        MaskMode::Identity => Array2::ones(spec.magnitude.dim()),
        MaskMode::Zero => Array2::zeros(spec.magnitude.dim()),
    };
    apply_mask(&spec, &mask, plan)
}

pub fn apply_mask(spec: &Spectrogram, mask: &Array2<f64>, plan: &StftPlan) -> Result<Waveform> {
    plan.istft(&spec.masked(mask)?)
}

/// Frame-synchronous separator: consumes samples in arbitrary chunks and emits
/// enhanced samples as soon as they are final. State size depends only on the
/// frame geometry and the model, never on the signal length.
#[derive(Debug)]
pub struct StreamingSeparator {
    weights: RealizedWeights,
    plan: StftPlan,
    mode: MaskMode,
    input: Vec<f64>,
    overlap: Vec<f64>,
    h_prev: Array1<f64>,
    frames_seen: usize,
    // scratch
    bins: Vec<num_complex::Complex64>,
    magnitude: Array1<f64>,
    frame_out: Vec<f64>,
    z: Array1<f64>,
    h_cur: Array1<f64>,
}

impl StreamingSeparator {
    pub fn new(weights: RealizedWeights, plan: StftPlan, mode: MaskMode) -> Result<Self> {
        if weights.n_bins() != plan.n_bins() {
            return Err(Error::shape(format!(
                "model has {} bins, STFT {}",
                weights.n_bins(),
                plan.n_bins()
            )));
        }
        let n = weights.n_atoms();
        let f = plan.n_bins();
        Ok(StreamingSeparator {
            h_prev: weights.h0.clone(),
            input: Vec::with_capacity(plan.frame_size()),
            overlap: vec![0.0; plan.frame_size()],
            frames_seen: 0,
            bins: vec![num_complex::Complex64::new(0.0, 0.0); f],
            magnitude: Array1::zeros(f),
            frame_out: vec![0.0; plan.frame_size()],
            z: Array1::zeros(n),
            h_cur: Array1::zeros(n),
            weights,
            plan,
            mode,
        })
    }

    /// Number of `f64` values held as state, for memory accounting.
    pub fn state_len(&self) -> usize {
        self.input.capacity()
            + self.overlap.len()
            + self.h_prev.len()
            + self.bins.len() * 2
            + self.magnitude.len()
            + self.frame_out.len()
            + self.z.len()
            + self.h_cur.len()
    }

    fn frame_mask(&mut self) -> Result<Array1<f64>> {
        let f = self.plan.n_bins();
        match self.mode {
            MaskMode::Identity => return Ok(Array1::ones(f)),
            MaskMode::Zero => return Ok(Array1::zeros(f)),
            MaskMode::Model => {}
        }
        let w = &self.weights;
        let t = self.frames_seen;
        for k in 0..w.n_layers() {
            let wtx = w.w[k].t().dot(&self.magnitude);
            ista::iterate(&w.gram[k], wtx.view(), self.h_prev.view(), w.alpha[k], w.lambda1, true, &mut self.z, &mut self.h_cur);
            nonfinite_at(&self.h_cur, t, k)?;
            std::mem::swap(&mut self.h_prev, &mut self.h_cur);
        }
        let wo = w.output_dictionary();
        let ns = w.n_speech;
        let y = wo.slice(s![.., ..ns]).dot(&self.h_prev.slice(s![..ns]));
        let v = wo.slice(s![.., ns..]).dot(&self.h_prev.slice(s![ns..]));
        let eps = w.eps_mask;
        Ok(Zip::from(&y).and(&v).map_collect(|&y, &v| (y + 0.5 * eps) / (y + v + eps)))
    }

    /// Feeds samples; appends finished output samples to `out`.
    pub fn push(&mut self, samples: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let (n, hop) = (self.plan.frame_size(), self.plan.hop());
        for &s in samples {
            self.input.push(s);
            if self.input.len() < n {
                continue;
            }
            self.plan.analyze_frame(&self.input, &mut self.bins);
            for (m, b) in self.magnitude.iter_mut().zip(&self.bins) {
                *m = crate::signal::magnitude(*b);
            }
            let mask = self.frame_mask()?;
            for (b, m) in self.bins.iter_mut().zip(mask.iter()) {
                *b *= *m;
            }
            self.plan.synthesize_frame(&self.bins, &mut self.frame_out);
            for (o, f) in self.overlap.iter_mut().zip(&self.frame_out) {
                *o += f;
            }
            out.extend_from_slice(&self.overlap[..hop]);
            self.overlap.copy_within(hop.., 0);
            self.overlap[n - hop..].iter_mut().for_each(|v| *v = 0.0);
            self.input.drain(..hop);
            self.frames_seen += 1;
        }
        Ok(())
    }

    /// Emits the tail of the last frame. Output length is
    /// `frame_size + (frames - 1) * hop`, or zero when no frame completed.
    pub fn finish(mut self, out: &mut Vec<f64>) {
        if self.frames_seen > 0 {
            let tail = self.plan.frame_size() - self.plan.hop();
            out.extend_from_slice(&self.overlap[..tail]);
        }
        self.input.clear();
    }
}
