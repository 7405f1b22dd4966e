//! Iterative soft-thresholding for `0.5 * ||x - W h||^2 + lambda1 * ||h||_1`
//! and its warm-start sequential form, where frame `t` starts from the
//! solution of frame `t - 1`.
//!
//! A single iteration is
//!
//! ```text
//! z = (I - W^T W / alpha) h + W^T x / alpha
//! h = soft(z, lambda1 / alpha)
//! ```
//!
//! The unfolded network in [`crate::network`] evaluates its layers with the
//! same [`iterate`] routine, so a network with tied weights reproduces
//! [`warm_start_ista`] bit for bit.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaConfig {
    /// Inverse step size; the gradient step is `1 / alpha`.
    pub alpha: f64,
    pub lambda1: f64,
    pub n_iters: usize,
    /// One-sided threshold (ReLU), enforcing `h >= 0`.
    pub nonnegative: bool,
}

impl IstaConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda1 >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda1 must be nonnegative, got {}", self.lambda1)));
        }
        if self.n_iters == 0 {
            return Err(Error::InvalidArgument("ISTA needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Iterate and pre-threshold intermediate of one ISTA step.
#[derive(Debug, Clone, PartialEq)]
pub struct IstaState {
    pub h: Array1<f64>,
    pub z: Array1<f64>,
}

#[inline]
pub fn soft_scalar(z: f64, b: f64, nonnegative: bool) -> f64 {
    if nonnegative {
        (z - b).max(0.0)
    } else {
        z.signum() * (z.abs() - b).max(0.0)
    }
}

/// Elementwise soft threshold: `sign(z) max(|z| - b, 0)`, or `max(z - b, 0)`
/// in the one-sided case.
pub fn soft_threshold(z: ArrayView1<'_, f64>, b: f64, nonnegative: bool) -> Array1<f64> {
    z.mapv(|v| soft_scalar(v, b, nonnegative))
}

/// One step from `h_prev` given the Gram matrix `W^T W` and `W^T x`. Writes
/// the pre-threshold value `z` and the thresholded iterate.
#[inline]
pub(crate) fn iterate(
    gram: &Array2<f64>,
    wtx: ArrayView1<'_, f64>,
    h_prev: ArrayView1<'_, f64>,
    alpha: f64,
    lambda1: f64,
    nonnegative: bool,
    z: &mut Array1<f64>,
    h: &mut Array1<f64>,
) {
    let inv_alpha = 1.0 / alpha;
    let threshold = lambda1 * inv_alpha;
    let gh = gram.dot(&h_prev);
    for n in 0..h.len() {
        let zn = h_prev[n] - inv_alpha * gh[n] + inv_alpha * wtx[n];
        z[n] = zn;
        h[n] = soft_scalar(zn, threshold, nonnegative);
    }
}

pub(crate) fn gram(w: ArrayView2<'_, f64>) -> Array2<f64> {
    w.t().dot(&w)
}

/// Frame-wise sparse-coding objective `0.5 ||x - W h||^2 + lambda1 ||h||_1`.
pub fn frame_objective(x: ArrayView1<'_, f64>, w: ArrayView2<'_, f64>, h: ArrayView1<'_, f64>, lambda1: f64) -> f64 {
    let r = &x - &w.dot(&h);
    0.5 * r.dot(&r) + lambda1 * h.iter().map(|v| v.abs()).sum::<f64>()
}

/// Sum of [`frame_objective`] over the columns of `x` and `h`.
pub fn sequence_objective(x: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>, lambda1: f64) -> f64 {
    x.axis_iter(Axis(1))
        .zip(h.axis_iter(Axis(1)))
        .map(|(xt, ht)| frame_objective(xt, w, ht, lambda1))
        .sum()
}

fn check_inputs(x: &ArrayView2<'_, f64>, w: &ArrayView2<'_, f64>, h0: &ArrayView1<'_, f64>, cfg: &IstaConfig) -> Result<()> {
    cfg.validate()?;
    if x.nrows() != w.nrows() || h0.len() != w.ncols() {
        return Err(Error::shape(format!(
            "x has {} rows, W is {:?}, h0 has {} entries",
            x.nrows(),
            w.dim(),
            h0.len()
        )));
    }
    if cfg.nonnegative && h0.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("h0 must be nonnegative in one-sided mode".into()));
    }
    Ok(())
}

/// `cfg.n_iters` ISTA iterations on a single frame from `h0`.
pub fn ista(x: ArrayView1<'_, f64>, w: ArrayView2<'_, f64>, h0: ArrayView1<'_, f64>, cfg: &IstaConfig) -> Result<Array1<f64>> {
    let h = warm_start_ista(x.insert_axis(Axis(1)), w, h0, cfg)?;
    Ok(h.column(0).to_owned())
}

/// Warm-start sequential ISTA: frame 0 starts from `h0_init`, frame `t` from
/// the output of frame `t - 1`. Returns the `N x T` activations.
pub fn warm_start_ista(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h0_init: ArrayView1<'_, f64>,
    cfg: &IstaConfig,
) -> Result<Array2<f64>> {
    check_inputs(&x, &w, &h0_init, cfg)?;
    let g = gram(w);
    let wtx = w.t().dot(&x);
    let n = w.ncols();
    let mut out = Array2::zeros((n, x.ncols()));
    let mut prev = h0_init.to_owned();
    let mut cur = Array1::zeros(n);
    let mut z = Array1::zeros(n);
    for t in 0..x.ncols() {
        for _ in 0..cfg.n_iters {
            iterate(&g, wtx.column(t), prev.view(), cfg.alpha, cfg.lambda1, cfg.nonnegative, &mut z, &mut cur);
            std::mem::swap(&mut prev, &mut cur);
        }
        out.column_mut(t).assign(&prev);
    }
    Ok(out)
}

/// Cold-start counterpart of [`warm_start_ista`]: every frame starts from `h0`.
pub fn cold_start_ista(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h0: ArrayView1<'_, f64>,
    cfg: &IstaConfig,
) -> Result<Array2<f64>> {
    check_inputs(&x, &w, &h0, cfg)?;
    let mut out = Array2::zeros((w.ncols(), x.ncols()));
    for (t, xt) in x.axis_iter(Axis(1)).enumerate() {
        out.column_mut(t).assign(&ista(xt, w, h0, cfg)?);
    }
    Ok(out)
}

/// Practical inverse step size `N / 4`.
pub fn alpha_heuristic(n_atoms: usize) -> f64 {
    n_atoms as f64 / 4.0
}

/// `1 + delta (N - 1)`, with `delta` the largest inner product between two
/// distinct columns. For nonnegative unit-norm columns this bounds every row
/// sum of `W^T W`, hence its spectral norm.
pub fn alpha_coherence_bound(w: ArrayView2<'_, f64>) -> f64 {
    let n = w.ncols();
    let g = gram(w);
    let mut delta = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                delta = delta.max(g[[i, j]]);
            }
        }
    }
    1.0 + delta * (n as f64 - 1.0)
}

/// Power-iteration estimate of `||W^T W||_2`, nudged upward by a relative
/// 1e-9 so that it can serve as a Lipschitz constant.
pub fn lipschitz_estimate(w: ArrayView2<'_, f64>) -> f64 {
    let g = gram(w);
    let n = g.nrows();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let gv = g.dot(&v);
        let norm = gv.dot(&gv).sqrt();
        if norm == 0.0 {
            return f64::MIN_POSITIVE;
        }
        let next = gv.dot(&v);
        v = gv / norm;
        if (next - lambda).abs() <= 1e-15 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    let rayleigh = v.dot(&g.dot(&v));
    rayleigh.max(lambda) * (1.0 + 1e-9)
}
