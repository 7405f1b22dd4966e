//! End-to-end training of the DR-NMF network: reverse-mode gradients through
//! the mask, the unrolled layers and the frame recurrence, Adam updates, and
//! a mini-batch loop with early stopping.

use std::time::Instant;

use log::{debug, info};
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{forward, mean_loss, DrNmfParams, ForwardTrace, Gradients, Trainables};
use crate::snmf::Dictionary;

/// A `(noisy, clean)` pair of magnitude spectrograms with equal shape.
pub type MagnitudePair = (Array2<f64>, Array2<f64>);

pub fn initialize_from_snmf(dict: &Dictionary, lambda1: f64, n_layers: usize, alpha0: f64, h0_const: f64) -> Result<DrNmfParams> {
    DrNmfParams::from_dictionary(dict, lambda1, n_layers, alpha0, h0_const)
}

fn check_trace(p: &DrNmfParams, x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>, trace: &ForwardTrace) -> Result<()> {
    let r = &trace.weights;
    let same_alpha = p
        .weights
        .alpha_log
        .iter()
        .zip(&r.alpha)
        .all(|(a, b)| a.exp() == *b);
    if r.n_layers() != p.n_layers()
        || r.n_atoms() != p.n_atoms()
        || r.n_speech != p.n_speech
        || r.lambda1 != p.lambda1
        || !same_alpha
    {
        return Err(Error::InvalidArgument("trace was not produced by these parameters".into()));
    }
    if x.dim() != trace.mask.dim() || y.dim() != x.dim() {
        return Err(Error::shape(format!(
            "X {:?}, Y {:?}, trace {:?}",
            x.dim(),
            y.dim(),
            trace.mask.dim()
        )));
    }
    Ok(())
}

/// Loss and its gradient with respect to every log-domain parameter.
pub fn backward(p: &DrNmfParams, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, trace: &ForwardTrace) -> Result<(f64, Gradients)> {
    backward_impl(p, x, y, trace, false)
}

fn backward_impl(
    p: &DrNmfParams,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    trace: &ForwardTrace,
    corrupt: bool,
) -> Result<(f64, Gradients)> {
    check_trace(p, &x, &y, trace)?;
    let r = &trace.weights;
    let (n, t_len, k_len, ns) = (r.n_atoms(), x.ncols(), r.n_layers(), r.n_speech);
    let eps = r.eps_mask;

    let mut loss = 0.0;
    let mut g_mask = Array2::zeros(x.dim());
    Zip::from(&mut g_mask).and(&y).and(&x).and(&trace.mask).for_each(|gm, &yv, &xv, &m| {
        let resid = yv - m * xv;
        loss += resid * resid;
        *gm = -2.0 * resid * xv;
    });
    let mut g_y = Array2::zeros(x.dim());
    let mut g_v = Array2::zeros(x.dim());
    Zip::from(&mut g_y)
        .and(&mut g_v)
        .and(&g_mask)
        .and(&trace.y_hat)
        .and(&trace.v_hat)
        .for_each(|gy, gv, &g_m, &yh, &vh| {
            let d = yh + vh + eps;
            let d2 = d * d;
            *gy = g_m * (vh + 0.5 * eps) / d2;
            *gv = -g_m * (yh + 0.5 * eps) / d2;
        });

    // Gradients with respect to the realized (normalized) dictionaries.
    let mut g_w: Vec<Array2<f64>> = r.w.iter().map(|w| Array2::zeros(w.dim())).collect();
    let w_out = r.output_dictionary();
    let (h_s, h_n) = (trace.h.slice(s![..ns, ..]), trace.h.slice(s![ns.., ..]));
    g_w[k_len - 1].slice_mut(s![.., ..ns]).assign(&g_y.dot(&h_s.t()));
    g_w[k_len - 1].slice_mut(s![.., ns..]).assign(&g_v.dot(&h_n.t()));
    let mut g_h = Array2::zeros((n, t_len));
    g_h.slice_mut(s![..ns, ..]).assign(&w_out.slice(s![.., ..ns]).t().dot(&g_y));
    g_h.slice_mut(s![ns.., ..]).assign(&w_out.slice(s![.., ns..]).t().dot(&g_v));

    // Reverse sweep over frames and layers. `g_act[k]` collects the gradient
    // at layer k's pre-activation for every frame.
    let mut g_act: Vec<Array2<f64>> = (0..k_len).map(|_| Array2::zeros((n, t_len))).collect();
    let mut carry = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(n);
    for t in (0..t_len).rev() {
        g.assign(&g_h.column(t));
        g += &carry;
        for k in (0..k_len).rev() {
            let pre = trace.pre_activations.slice(s![t, k, ..]);
            Zip::from(&mut g).and(&pre).for_each(|gv, &a| {
                if a <= 0.0 {
                    *gv = 0.0;
                }
            });
            g_act[k].column_mut(t).assign(&g);
            let gg = r.gram[k].dot(&g);
            let inv_alpha = 1.0 / r.alpha[k];
            Zip::from(&mut g).and(&gg).for_each(|gv, &q| *gv -= inv_alpha * q);
        }
        std::mem::swap(&mut carry, &mut g);
    }
    let g_h0 = carry;

    let mut grads = Gradients::zeros_like(&p.weights);
    for k in 0..k_len {
        let inv_alpha = 1.0 / r.alpha[k];
        let inputs = trace.states.slice(s![.., k, ..]); // T x N
        let ga = &g_act[k];
        let mut g_gram = ga.dot(&inputs);
        g_gram *= -inv_alpha;
        g_w[k] += &(x.dot(&ga.t()) * inv_alpha);
        let sym = &g_gram + &g_gram.t();
        let gram_term = r.w[k].dot(&sym);
        if corrupt && k == 0 {
            g_w[k] -= &gram_term;
        } else {
            g_w[k] += &gram_term;
        }

        let gu = r.gram[k].dot(&inputs.t());
        let mut g_inv = 0.0;
        Zip::from(ga).and(&trace.wtx[k]).and(&gu).for_each(|&a, &b, &q| {
            g_inv += a * (b - q - r.lambda1);
        });
        grads.alpha_log[k] = -inv_alpha * g_inv;

        // Through the column normalization and the elementwise exp.
        let w = &r.w[k];
        let proj = (&g_w[k] * w).sum_axis(Axis(0));
        let mut gl = g_w[k].clone();
        gl -= &(w * &proj.broadcast(w.dim()).expect("row broadcast"));
        gl *= w;
        grads.w_log[k] = gl;
    }
    grads.h0_log = &g_h0 * &r.h0;

    if !grads.all_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok((loss, grads))
}

/// Forward then backward on one pair.
pub fn loss_and_gradients(p: &DrNmfParams, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(f64, Gradients)> {
    let trace = forward(p, x)?;
    backward(p, x, y, &trace)
}

/// Loss alone, for finite differences and validation.
pub fn loss_only(p: &DrNmfParams, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    let r = p.realize()?;
    let m = crate::network::infer_mask(&r, x)?;
    crate::network::signal_approx_loss(y, x, m.view())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Trainables,
    pub v: Trainables,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Trainables, learning_rate: f64) -> Self {
        AdamState {
            m: Trainables::zeros_like(params),
            v: Trainables::zeros_like(params),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut Trainables, g: &Gradients) -> Result<()> {
        if !params.same_shape(g) || !params.same_shape(&self.m) {
            return Err(Error::shape("gradient and parameter shapes differ".to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.learning_rate, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, p: &mut DrNmfParams, g: &Gradients) -> Result<()> {
    state.step(&mut p.weights, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_seq_frames: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub shuffle_seed: u64,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_seq_frames: 500,
            patience_epochs: 50,
            max_epochs: 200,
            shuffle_seed: 3,
            learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_seq_frames == 0 || self.patience_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, max_seq_frames and patience_epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Cuts every pair into consecutive chunks of at most `max_frames` frames.
pub fn split_sequences(pairs: &[MagnitudePair], max_frames: usize) -> Result<Vec<MagnitudePair>> {
    if max_frames == 0 {
        return Err(Error::InvalidArgument("max_frames must be positive".into()));
    }
    let mut out = Vec::new();
    for (x, y) in pairs {
        if x.dim() != y.dim() {
            return Err(Error::shape(format!("noisy {:?} vs clean {:?}", x.dim(), y.dim())));
        }
        let t = x.ncols();
        let mut start = 0;
        while start < t {
            let end = (start + max_frames).min(t);
            out.push((
                x.slice(s![.., start..end]).to_owned(),
                y.slice(s![.., start..end]).to_owned(),
            ));
            start = end;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: DrNmfParams,
    /// 0 when no epoch beat the initial parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub history: Vec<EpochRecord>,
}

pub fn train_loop(init: &DrNmfParams, train_set: &[MagnitudePair], val_set: &[MagnitudePair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_loop_with(init, train_set, val_set, cfg, |_, _, _| Ok(()))
}

/// Trains with Adam on mini-batches of `train_set` (already split into
/// sequences) and keeps the parameters with the lowest validation loss.
/// Training stops once `patience_epochs` consecutive epochs fail to improve
/// on the best epoch so far. `on_epoch` sees each record, the current
/// parameters and whether they are the new best.
pub fn train_loop_with<F>(
    init: &DrNmfParams,
    train_set: &[MagnitudePair],
    val_set: &[MagnitudePair],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &DrNmfParams, bool) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    if let Some((x, _)) = train_set.iter().find(|(x, _)| x.ncols() > cfg.max_seq_frames) {
        return Err(Error::InvalidArgument(format!(
            "training sequence of {} frames exceeds max_seq_frames = {}",
            x.ncols(),
            cfg.max_seq_frames
        )));
    }
    let initial_val_loss = mean_loss(&init.realize()?, val_set)?;
    info!("initial validation loss {initial_val_loss:.6}");

    let mut params = init.clone();
    let mut best = init.clone();
    let mut best_val_loss = initial_val_loss;
    let mut best_epoch = 0;
    // Patience is counted against the best epoch, so the first epoch always
    // resets it.
    let mut best_epoch_val = f64::INFINITY;
    let mut stale = 0;
    let mut adam = AdamState::new(&params.weights, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&params.weights);
            for &i in batch {
                let (x, y) = &train_set[i];
                let (loss, g) = loss_and_gradients(&params, x.view(), y.view())?;
                train_total += loss;
                acc.add_scaled(&g, 1.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for t in acc.tensors_mut() {
                t.iter_mut().for_each(|v| *v *= scale);
            }
            adam.step(&mut params.weights, &acc)?;
        }
        let val_loss = mean_loss(&params.realize()?, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: train_total / train_set.len() as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        let improved_epoch = val_loss < best_epoch_val;
        if improved_epoch {
            best_epoch_val = val_loss;
            stale = 0;
        } else {
            stale += 1;
        }
        let is_best = val_loss < best_val_loss;
        if is_best {
            best_val_loss = val_loss;
            best = params.clone();
            best_epoch = epoch;
        }
        debug!(
            "epoch {epoch}: train {:.6} val {:.6} ({:.2}s)",
            record.train_loss, record.val_loss, record.seconds
        );
        on_epoch(&record, &params, is_best)?;
        history.push(record);
        if stale >= cfg.patience_epochs {
            info!("early stop after {epoch} epochs");
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_loss,
        initial_val_loss,
        history,
    })
}

pub fn write_history(path: impl AsRef<std::path::Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "train_loss", "val_loss", "seconds"])
        .map_err(|e| csv_err(path, e))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.10e}", r.train_loss),
            format!("{:.10e}", r.val_loss),
            format!("{:.3}", r.seconds),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &std::path::Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

/// Worst finite-difference disagreement found in one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub probed: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is numerically zero are judged on absolute error.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for a loss of magnitude `loss`. Central differences at
/// `h = 1e-5` carry round-off of roughly `1e-10 * |loss|` once errors
/// accumulate through several layers, so a gradient entry below
/// `1e-4 * |loss|` cannot be resolved to 1e-5 relative accuracy; such entries
/// are judged on absolute error against this floor.
pub fn gradcheck_floor(loss: f64) -> f64 {
    1e-4 * loss.abs().max(1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub coords_per_tensor: usize,
    pub step: f64,
    pub seed: u64,
    /// Flips the sign of one backward term, as a negative control.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { coords_per_tensor: 50, step: 1e-5, seed: 0, corrupt: false }
    }
}

/// Compares `backward` against central differences of the loss on randomly
/// chosen coordinates of every parameter tensor (all coordinates when a
/// tensor is smaller than the probe count).
pub fn gradient_check(p: &DrNmfParams, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let trace = forward(p, x)?;
    let (loss, grads) = backward_impl(p, x, y, &trace, cfg.corrupt)?;
    let floor = gradcheck_floor(loss);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names = p.weights.tensor_names();
    let sizes: Vec<usize> = p.weights.tensors().iter().map(|t| t.len()).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = p.clone();
    let mut tensors = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for (ti, name) in names.into_iter().enumerate() {
        let len = sizes[ti];
        let picks: Vec<usize> = if len <= cfg.coords_per_tensor {
            (0..len).collect()
        } else {
            index::sample(&mut rng, len, cfg.coords_per_tensor).into_vec()
        };
        let mut worst = TensorCheck {
            name,
            probed: picks.len(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
        };
        for &i in &picks {
            let orig = probe.weights.tensors()[ti][i];
            probe.weights.tensors_mut()[ti][i] = orig + cfg.step;
            let lp = loss_only(&probe, x, y)?;
            probe.weights.tensors_mut()[ti][i] = orig - cfg.step;
            let lm = loss_only(&probe, x, y)?;
            probe.weights.tensors_mut()[ti][i] = orig;
            let numeric = (lp - lm) / (2.0 * cfg.step);
            let a = analytic[ti][i];
            let rel = relative_error(a, numeric, floor);
            if rel >= worst.rel_error {
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
                worst.rel_error = rel;
            }
        }
        max_rel_error = max_rel_error.max(worst.rel_error);
        tensors.push(worst);
    }
    Ok(GradCheckReport { tensors, max_rel_error })
}

/// A random untied model with an `F x T` input pair, for gradient checks.
/// Atoms split evenly between speech and noise; `alpha` starts at the
/// Lipschitz estimate so every layer stays active.
pub fn synthetic_problem(seed: u64, f: usize, n: usize, k: usize, t: usize) -> Result<(DrNmfParams, Array2<f64>, Array2<f64>)> {
    if f == 0 || n < 2 || k == 0 || t == 0 {
        return Err(Error::InvalidArgument(format!("synthetic problem needs F, K, T >= 1 and N >= 2, got {f}, {n}, {k}, {t}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Array2<f64> = Array2::from_shape_fn((f, n), |_| rng.random_range(0.05..1.0));
    for mut c in w.axis_iter_mut(Axis(1)) {
        let norm = c.dot(&c).sqrt();
        c.mapv_inplace(|v| v / norm);
    }
    let d = Dictionary::new(w, n / 2, n - n / 2)?;
    let alpha = crate::ista::lipschitz_estimate(d.w().view());
    let mut p = initialize_from_snmf(&d, 0.05, k, alpha, 0.05)?;
    for w in p.weights.w_log.iter_mut() {
        w.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    for a in p.weights.alpha_log.iter_mut() {
        *a += rng.random_range(-0.2..0.2);
    }
    for h in p.weights.h0_log.iter_mut() {
        *h += rng.random_range(-0.5..0.5);
    }
    let x = Array2::from_shape_fn((f, t), |_| rng.random_range(0.0..1.0));
    let y = x.mapv(|v| v * rng.random_range(0.0..1.0));
    Ok((p, x, y))
}
