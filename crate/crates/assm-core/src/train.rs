//! Training harness: Adam, losses, bicubic resampling, synthetic data,
//! PSNR/SSIM metrics, finite-difference checking, and the SR training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::ase::RouteMode;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{
    network_backward, network_forward, ForwardCtx, ModelConfig, NetworkWeights,
};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const CHARBONNIER_EPS: f64 = 1e-3;
pub const ADAM_EPS: f64 = 1e-8;
pub const CLIP_NORM: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    Charbonnier,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub steps: usize,
    /// steps at which the learning rate is halved; strictly increasing
    pub milestones: Vec<usize>,
    pub loss: LossKind,
    /// HQ patch edge length
    pub patch: usize,
    pub scale: usize,
    pub seed: u64,
    pub clip_grads: bool,
}

impl TrainConfig {
    pub fn toy(steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            batch: 8,
            steps,
            milestones: default_milestones(steps),
            loss: LossKind::L1,
            patch: 32,
            scale: 2,
            seed,
            clip_grads: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.batch == 0 || self.steps == 0 {
            return Err(Error::Config("batch and steps must be nonzero".into()));
        }
        if self.patch % self.scale != 0 {
            return Err(Error::Config(format!(
                "patch {} not divisible by scale {}",
                self.patch, self.scale
            )));
        }
        Ok(())
    }

    /// lr after the k-th milestone is exactly lr/2^k.
    pub fn lr_at(&self, step: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| step >= m).count();
        self.lr / (1u64 << k) as f64
    }
}

/// Halve at 60% and 80% of the run.
pub fn default_milestones(steps: usize) -> Vec<usize> {
    let a = steps * 3 / 5;
    let b = steps * 4 / 5;
    if a < b {
        vec![a, b]
    } else {
        vec![]
    }
}

// ------------------------------------------------------------------ adam

pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &NetworkWeights) -> AdamState {
        let zeros: Vec<Tensor> = weights
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros_like(t))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Gradients carry the same
/// tensor layout as the weights.
pub fn adam_step(
    weights: &mut NetworkWeights,
    grads: &NetworkWeights,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
) -> Result<()> {
    for (name, g) in grads.named_tensors() {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                position: 0,
                what: format!("non-finite gradient in {name}"),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - math::powi(beta1, t);
    let bc2 = 1.0 - math::powi(beta2, t);
    let grads = grads.named_tensors();
    for (i, (_, w)) in weights.named_tensors_mut().into_iter().enumerate() {
        let g = grads[i].1.data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for k in 0..g.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            w.data_mut()[k] -= lr * mhat / (math::sqrt(vhat) + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scales every gradient so the global l2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut NetworkWeights, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, g) in grads.named_tensors() {
        for &v in g.data() {
            sq += v * v;
        }
    }
    let norm = math::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, g) in grads.named_tensors_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

// ----------------------------------------------------------------- losses

/// Mean absolute error and its gradient with respect to `pred`.
/// The subgradient at zero residual is fixed to 0 for determinism.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "loss shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros_like(pred);
    let mut total = 0.0;
    for (k, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let r = p - t;
        total += math::abs(r);
        grad.data_mut()[k] = if r > 0.0 {
            1.0 / n
        } else if r < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((total / n, grad))
}

/// Mean sqrt(r^2 + eps^2); smooth everywhere, equals eps at zero residual.
pub fn charbonnier_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "loss shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros_like(pred);
    let mut total = 0.0;
    for (k, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let r = p - t;
        let s = math::sqrt(r * r + CHARBONNIER_EPS * CHARBONNIER_EPS);
        total += s;
        grad.data_mut()[k] = r / (s * n);
    }
    Ok((total / n, grad))
}

pub fn loss_of(kind: LossKind, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::L1 => l1_loss(pred, target),
        LossKind::Charbonnier => charbonnier_loss(pred, target),
    }
}

// --------------------------------------------------------------- bicubic

/// Keys cubic convolution kernel with a = -0.5.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = math::abs(x);
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

fn resample_weights(src_len: usize, dst_len: usize) -> Vec<(usize, Vec<f64>)> {
    let ratio = src_len as f64 / dst_len as f64;
    // widen the kernel when shrinking so it acts as an anti-alias filter
    let width = if ratio > 1.0 { ratio } else { 1.0 };
    let support = 2.0 * width;
    let mut rows = Vec::with_capacity(dst_len);
    for i in 0..dst_len {
        let center = (i as f64 + 0.5) * ratio - 0.5;
        let lo = math::floor(center - support) as isize;
        let hi = math::ceil(center + support) as isize;
        // accumulate onto clamped source indices (edge taps fold together)
        let start = lo.clamp(0, src_len as isize - 1) as usize;
        let stop = hi.clamp(0, src_len as isize - 1) as usize;
        let mut taps = vec![0.0; stop - start + 1];
        let mut sum = 0.0;
        for j in lo..=hi {
            let w = cubic_kernel((j as f64 - center) / width);
            let src = j.clamp(0, src_len as isize - 1) as usize;
            taps[src - start] += w;
            sum += w;
        }
        for t in &mut taps {
            *t /= sum;
        }
        rows.push((start, taps));
    }
    rows
}

/// Separable bicubic resample of an H x W x C image; anti-aliased when
/// shrinking. Output values are not clamped.
pub fn bicubic_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if img.rank() != 3 {
        return Err(Error::Dimension(format!(
            "expected H x W x C image, got {:?}",
            img.shape()
        )));
    }
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let wrows = resample_weights(w, out_w);
    let mut mid = Tensor::zeros(&[h, out_w, c]);
    for i in 0..h {
        for (j, (start, taps)) in wrows.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    acc += t * img.at3(i, start + k, ch);
                }
                mid.set3(i, j, ch, acc);
            }
        }
    }
    let hrows = resample_weights(h, out_h);
    let mut out = Tensor::zeros(&[out_h, out_w, c]);
    for (i, (start, taps)) in hrows.iter().enumerate() {
        for j in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    acc += t * mid.at3(start + k, j, ch);
                }
                out.set3(i, j, ch, acc);
            }
        }
    }
    Ok(out)
}

pub fn clamp01(img: &Tensor) -> Tensor {
    img.map(|v| v.clamp(0.0, 1.0))
}

// ----------------------------------------------------------- synthetic data

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Checkerboards,
    Gradients,
    GaussianTextures,
    TinyNatural,
}

impl DataKind {
    pub fn parse(s: &str) -> Result<DataKind> {
        match s {
            "checkerboards" => Ok(DataKind::Checkerboards),
            "gradients" => Ok(DataKind::Gradients),
            "gaussian-textures" => Ok(DataKind::GaussianTextures),
            "tiny-natural" => Ok(DataKind::TinyNatural),
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }

    pub const ALL: [DataKind; 4] = [
        DataKind::Checkerboards,
        DataKind::Gradients,
        DataKind::GaussianTextures,
        DataKind::TinyNatural,
    ];
}

fn synth_patch(kind: DataKind, patch: usize, rng: &mut RngState) -> Tensor {
    let mut hq = Tensor::zeros(&[patch, patch, 3]);
    match kind {
        DataKind::Checkerboards => {
            // cells >= 3 stay recoverable after a 2x bicubic downsample;
            // 2-pixel cells alias to flat gray and carry no signal
            let cell = 3 + (rng.next_u64() % 3) as usize;
            let (oi, oj) = (
                (rng.next_u64() % cell as u64) as usize,
                (rng.next_u64() % cell as u64) as usize,
            );
            let ca: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.0, 0.45)).collect();
            let cb: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.55, 1.0)).collect();
            for i in 0..patch {
                for j in 0..patch {
                    let pick = (((i + oi) / cell) + ((j + oj) / cell)) % 2 == 0;
                    for ch in 0..3 {
                        hq.set3(i, j, ch, if pick { ca[ch] } else { cb[ch] });
                    }
                }
            }
        }
        DataKind::Gradients => {
            let theta = rng.uniform_in(0.0, core::f64::consts::TAU);
            let (dx, dy) = (math::cos(theta), math::sin(theta));
            let base: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.1, 0.9)).collect();
            let amp: Vec<f64> = (0..3).map(|_| rng.uniform_in(-0.4, 0.4)).collect();
            for i in 0..patch {
                for j in 0..patch {
                    let t = (i as f64 * dy + j as f64 * dx) / patch as f64;
                    for ch in 0..3 {
                        hq.set3(i, j, ch, (base[ch] + amp[ch] * t).clamp(0.0, 1.0));
                    }
                }
            }
        }
        DataKind::GaussianTextures => {
            // a few random low-frequency cosine waves per channel
            for ch in 0..3 {
                let mut params = Vec::new();
                for _ in 0..4 {
                    params.push((
                        rng.uniform_in(0.3, 3.0),
                        rng.uniform_in(0.3, 3.0),
                        rng.uniform_in(0.0, core::f64::consts::TAU),
                        rng.uniform_in(0.05, 0.2),
                    ));
                }
                for i in 0..patch {
                    for j in 0..patch {
                        let mut v = 0.5;
                        for &(fi, fj, ph, a) in &params {
                            let arg = core::f64::consts::TAU
                                * (fi * i as f64 + fj * j as f64)
                                / patch as f64
                                + ph;
                            v += a * math::cos(arg);
                        }
                        hq.set3(i, j, ch, v.clamp(0.0, 1.0));
                    }
                }
            }
        }
        DataKind::TinyNatural => {
            // cartoon scene: background gradient plus random rectangles
            // and disks with crisp edges
            let bg: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.2, 0.8)).collect();
            for i in 0..patch {
                for j in 0..patch {
                    for ch in 0..3 {
                        hq.set3(i, j, ch, bg[ch] * (0.7 + 0.3 * i as f64 / patch as f64));
                    }
                }
            }
            let shapes = 3 + (rng.next_u64() % 4) as usize;
            for _ in 0..shapes {
                let col: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.0, 1.0)).collect();
                let disk = rng.next_u64() % 2 == 0;
                let ci = rng.uniform_in(0.0, patch as f64);
                let cj = rng.uniform_in(0.0, patch as f64);
                let r = rng.uniform_in(patch as f64 * 0.1, patch as f64 * 0.35);
                for i in 0..patch {
                    for j in 0..patch {
                        let (di, dj) = (i as f64 - ci, j as f64 - cj);
                        let inside = if disk {
                            di * di + dj * dj <= r * r
                        } else {
                            math::abs(di) <= r && math::abs(dj) <= r * 0.7
                        };
                        if inside {
                            for ch in 0..3 {
                                hq.set3(i, j, ch, col[ch]);
                            }
                        }
                    }
                }
            }
        }
    }
    hq
}

/// Deterministic super-resolution pairs: HQ patches with anti-aliased
/// bicubic LQ counterparts.
pub fn synth_dataset(
    kind: DataKind,
    n: usize,
    patch: usize,
    scale: usize,
    seed: u64,
) -> Result<Vec<(Tensor, Tensor)>> {
    if patch % scale != 0 {
        return Err(Error::Config(format!(
            "patch {patch} not divisible by scale {scale}"
        )));
    }
    let mut rng = RngState::new(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let hq = synth_patch(kind, patch, &mut rng);
        let lq = clamp01(&bicubic_resize(&hq, patch / scale, patch / scale)?);
        out.push((lq, hq));
    }
    Ok(out)
}

/// Pairs cycling over every kind; the default CLI training corpus.
pub fn synth_dataset_mixed(
    n: usize,
    patch: usize,
    scale: usize,
    seed: u64,
) -> Result<Vec<(Tensor, Tensor)>> {
    if patch % scale != 0 {
        return Err(Error::Config(format!(
            "patch {patch} not divisible by scale {scale}"
        )));
    }
    let mut rng = RngState::new(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let kind = DataKind::ALL[i % DataKind::ALL.len()];
        let hq = synth_patch(kind, patch, &mut rng);
        let lq = clamp01(&bicubic_resize(&hq, patch / scale, patch / scale)?);
        out.push((lq, hq));
    }
    Ok(out)
}

/// Denoising pairs: LQ = HQ + N(0, sigma/255).
pub fn synth_denoise_dataset(
    kind: DataKind,
    n: usize,
    patch: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<(Tensor, Tensor)>> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let hq = synth_patch(kind, patch, &mut rng);
        let lq = if sigma == 0.0 {
            hq.clone()
        } else {
            let mut lq = hq.clone();
            for v in lq.data_mut() {
                *v = (*v + rng.normal() * sigma / 255.0).clamp(0.0, 1.0);
            }
            lq
        };
        out.push((lq, hq));
    }
    Ok(out)
}

// ---------------------------------------------------------------- metrics

pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Debug)]
pub struct MetricReport {
    pub psnr_values: Vec<f64>,
    pub ssim_values: Vec<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub y_channel: bool,
}

fn y_plane(img: &Tensor) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut y = Tensor::zeros(&[h, w, 1]);
    for i in 0..h {
        for j in 0..w {
            let v = 0.299 * img.at3(i, j, 0) + 0.587 * img.at3(i, j, 1) + 0.114 * img.at3(i, j, 2);
            y.set3(i, j, 0, v);
        }
    }
    y
}

fn metric_input(img: &Tensor, y_channel: bool) -> Tensor {
    if y_channel && img.shape()[2] == 3 {
        y_plane(img)
    } else {
        img.clone()
    }
}

/// 10*log10(1/MSE) with MAX=1, capped at 100 dB for identical inputs.
pub fn psnr(pred: &Tensor, target: &Tensor, y_channel: bool) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "psnr shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let a = metric_input(pred, y_channel);
    let b = metric_input(target, y_channel);
    let mut mse = 0.0;
    for (&p, &t) in a.data().iter().zip(b.data()) {
        mse += (p - t) * (p - t);
    }
    mse /= a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * math::log10(1.0 / mse)).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; 11] {
    let sigma = 1.5;
    let mut w = [0.0; 11];
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *v = math::exp(-x * x / (2.0 * sigma * sigma));
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

fn filter_plane(p: &[Vec<f64>], win: &[f64; 11]) -> Vec<Vec<f64>> {
    let h = p.len();
    let w = p[0].len();
    let oh = h - 10;
    let ow = w - 10;
    // horizontal pass then vertical, valid region only
    let mut mid = vec![vec![0.0; ow]; h];
    for i in 0..h {
        for j in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in win.iter().enumerate() {
                acc += g * p[i][j + k];
            }
            mid[i][j] = acc;
        }
    }
    let mut out = vec![vec![0.0; ow]; oh];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in win.iter().enumerate() {
                acc += g * mid[i + k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn ssim_plane(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let c1 = 0.01 * 0.01;
    let c2 = 0.03 * 0.03;
    let win = gaussian_window();
    let mu1 = filter_plane(a, &win);
    let mu2 = filter_plane(b, &win);
    let sq1: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v * v).collect()).collect();
    let sq2: Vec<Vec<f64>> = b.iter().map(|r| r.iter().map(|v| v * v).collect()).collect();
    let ab: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).collect())
        .collect();
    let s1 = filter_plane(&sq1, &win);
    let s2 = filter_plane(&sq2, &win);
    let s12 = filter_plane(&ab, &win);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..mu1.len() {
        for j in 0..mu1[0].len() {
            let (m1, m2) = (mu1[i][j], mu2[i][j]);
            let v1 = s1[i][j] - m1 * m1;
            let v2 = s2[i][j] - m2 * m2;
            let cov = s12[i][j] - m1 * m2;
            let num = (2.0 * m1 * m2 + c1) * (2.0 * cov + c2);
            let den = (m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

fn planes_of(img: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    (0..c)
        .map(|ch| {
            (0..h)
                .map(|i| (0..w).map(|j| img.at3(i, j, ch)).collect())
                .collect()
        })
        .collect()
}

/// Mean structural similarity with the standard 11x11 gaussian window
/// (sigma 1.5, K1=0.01, K2=0.03, dynamic range 1). Needs images of at
/// least 11x11.
pub fn ssim(pred: &Tensor, target: &Tensor, y_channel: bool) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "ssim shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.shape()[0] < 11 || pred.shape()[1] < 11 {
        return Err(Error::Dimension(format!(
            "ssim needs at least 11x11, got {:?}",
            pred.shape()
        )));
    }
    let a = metric_input(pred, y_channel);
    let b = metric_input(target, y_channel);
    let pa = planes_of(&a);
    let pb = planes_of(&b);
    let mut total = 0.0;
    for (ca, cb) in pa.iter().zip(&pb) {
        total += ssim_plane(ca, cb);
    }
    Ok(total / pa.len() as f64)
}

pub fn metric_report(
    pairs: &[(Tensor, Tensor)],
    y_channel: bool,
) -> Result<MetricReport> {
    let mut psnr_values = Vec::new();
    let mut ssim_values = Vec::new();
    for (pred, target) in pairs {
        psnr_values.push(psnr(pred, target, y_channel)?);
        ssim_values.push(ssim(pred, target, y_channel)?);
    }
    let n = pairs.len().max(1) as f64;
    Ok(MetricReport {
        psnr: psnr_values.iter().sum::<f64>() / n,
        ssim: ssim_values.iter().sum::<f64>() / n,
        psnr_values,
        ssim_values,
        y_channel,
    })
}

// ----------------------------------------------------- finite differences

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Central-difference check of an analytic gradient. For large points a
/// deterministic sample of at least 200 coordinates is probed.
pub fn grad_check(
    f: &mut dyn FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    step: f64,
    seed: u64,
) -> GradCheckReport {
    let n = point.len();
    let coords: Vec<usize> = if n <= 200 {
        (0..n).collect()
    } else {
        let mut rng = RngState::new(seed);
        let mut picked = vec![false; n];
        let mut coords = Vec::with_capacity(200);
        while coords.len() < 200 {
            let k = (rng.next_u64() % n as u64) as usize;
            if !picked[k] {
                picked[k] = true;
                coords.push(k);
            }
        }
        coords
    };
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    let mut buf = point.to_vec();
    for &k in &coords {
        let orig = buf[k];
        buf[k] = orig + step;
        let fp = f(&buf);
        buf[k] = orig - step;
        let fm = f(&buf);
        buf[k] = orig;
        let fd = (fp - fm) / (2.0 * step);
        let denom = math::abs(fd).max(math::abs(analytic[k])).max(1.0);
        let rel = math::abs(fd - analytic[k]) / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = k;
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_coord,
        coords_checked: coords.len(),
    }
}

// ------------------------------------------------------------ training loop

#[derive(Clone, Copy, Debug)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainResult {
    pub weights: NetworkWeights,
    pub log: Vec<TrainLogRow>,
}

fn hflip(img: &Tensor) -> Tensor {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Tensor::zeros(&[h, w, c]);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out.set3(i, j, ch, img.at3(i, w - 1 - j, ch));
            }
        }
    }
    out
}

fn rot90(img: &Tensor) -> Tensor {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Tensor::zeros(&[w, h, c]);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out.set3(j, h - 1 - i, ch, img.at3(i, j, ch));
            }
        }
    }
    out
}

/// Random horizontal flip and 90-degree rotations, applied identically
/// to both halves of the pair.
pub fn augment_pair(lq: &Tensor, hq: &Tensor, rng: &mut RngState) -> (Tensor, Tensor) {
    let mut lq = lq.clone();
    let mut hq = hq.clone();
    if rng.next_u64() % 2 == 0 {
        lq = hflip(&lq);
        hq = hflip(&hq);
    }
    for _ in 0..(rng.next_u64() % 4) {
        lq = rot90(&lq);
        hq = rot90(&hq);
    }
    (lq, hq)
}

fn accumulate(into: &mut NetworkWeights, from: &NetworkWeights, scale: f64) {
    let src = from.named_tensors();
    for (i, (_, t)) in into.named_tensors_mut().into_iter().enumerate() {
        for (a, &b) in t.data_mut().iter_mut().zip(src[i].1.data()) {
            *a += scale * b;
        }
    }
}

/// Deterministic single-threaded SR training loop. Per-step noise streams
/// derive from the config seed, so identical inputs give an identical
/// loss curve.
pub fn train_sr(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &[(Tensor, Tensor)],
    on_step: Option<&mut dyn FnMut(&TrainLogRow, &NetworkWeights)>,
) -> Result<TrainResult> {
    train_sr_from(model_cfg, cfg, data, None, on_step)
}

/// Like `train_sr`, but optionally warm-starts from existing weights
/// (e.g. reusing a lower-scale checkpoint when training a larger head).
pub fn train_sr_from(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &[(Tensor, Tensor)],
    initial: Option<NetworkWeights>,
    mut on_step: Option<&mut dyn FnMut(&TrainLogRow, &NetworkWeights)>,
) -> Result<TrainResult> {
    cfg.validate()?;
    model_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let master = RngState::new(cfg.seed);
    let mut init_rng = master.split(0);
    let mut sample_rng = master.split(1);
    let mut aug_rng = master.split(2);

    let mut weights = match initial {
        Some(w) => w,
        None => NetworkWeights::init(model_cfg, &mut init_rng)?,
    };
    let mut adam = AdamState::new(&weights);
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let lr = cfg.lr_at(step);
        let mut grad_acc = NetworkWeights::zeros(model_cfg)?;
        let mut loss_acc = 0.0;
        for b in 0..cfg.batch {
            let idx = (sample_rng.next_u64() % data.len() as u64) as usize;
            let (lq, hq) = augment_pair(&data[idx].0, &data[idx].1, &mut aug_rng);
            let mut ctx = ForwardCtx::new(
                RouteMode::Hard,
                master.split(10 + (step * cfg.batch + b) as u64),
            );
            let (pred, cache) = network_forward(&lq, model_cfg, &weights, &mut ctx)?;
            let (loss, g) = loss_of(cfg.loss, &pred, &hq)?;
            loss_acc += loss;
            let grads = network_backward(&cache, model_cfg, &weights, &g)?;
            accumulate(&mut grad_acc, &grads.weights, 1.0 / cfg.batch as f64);
        }
        if cfg.clip_grads {
            clip_global_norm(&mut grad_acc, CLIP_NORM);
        }
        adam_step(&mut weights, &grad_acc, &mut adam, lr, cfg.beta1, cfg.beta2)?;
        let row = TrainLogRow {
            step,
            loss: loss_acc / cfg.batch as f64,
            lr,
        };
        if let Some(cb) = on_step.as_deref_mut() {
            cb(&row, &weights);
        }
        log.push(row);
    }
    Ok(TrainResult { weights, log })
}

/// Mean Y-channel PSNR of the model on held-out pairs, argmax routing.
pub fn evaluate_sr(
    model_cfg: &ModelConfig,
    weights: &NetworkWeights,
    val: &[(Tensor, Tensor)],
) -> Result<f64> {
    let mut total = 0.0;
    for (lq, hq) in val {
        let mut ctx = ForwardCtx::eval(0);
        let (pred, _) = network_forward(lq, model_cfg, weights, &mut ctx)?;
        total += psnr(&clamp01(&pred), hq, true)?;
    }
    Ok(total / val.len().max(1) as f64)
}

/// Mean Y-channel PSNR of plain bicubic upsampling on the same pairs.
pub fn bicubic_baseline(val: &[(Tensor, Tensor)], scale: usize) -> Result<f64> {
    let mut total = 0.0;
    for (lq, hq) in val {
        let up = clamp01(&bicubic_resize(
            lq,
            lq.shape()[0] * scale,
            lq.shape()[1] * scale,
        )?);
        total += psnr(&up, hq, true)?;
    }
    Ok(total / val.len().max(1) as f64)
}
