//! Small layer zoo with hand-written backward passes: linear, 3x3
//! convolutions (full and depthwise), channel LayerNorm, GELU FFN, and
//! pixel shuffle.

use alloc::format;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const LAYERNORM_EPS: f64 = 1e-6;

// ---------------------------------------------------------------- linear

/// y = x W + b with x of shape L x In, W of In x Out, b of Out.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = x.matmul(w)?;
    let (rows, cols) = (out.shape()[0], out.shape()[1]);
    if b.shape() != [cols] {
        return Err(Error::Dimension(format!(
            "bias {:?} vs output width {cols}",
            b.shape()
        )));
    }
    for i in 0..rows {
        for j in 0..cols {
            out.set2(i, j, out.at2(i, j) + b.data()[j]);
        }
    }
    Ok(out)
}

pub struct LinearGrads {
    pub w: Tensor,
    pub b: Tensor,
    pub x: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> Result<LinearGrads> {
    let g_w = x.transpose2()?.matmul(grad)?;
    let cols = grad.shape()[1];
    let mut g_b = Tensor::zeros(&[cols]);
    for i in 0..grad.shape()[0] {
        for j in 0..cols {
            g_b.data_mut()[j] += grad.at2(i, j);
        }
    }
    let g_x = grad.matmul(&w.transpose2()?)?;
    Ok(LinearGrads {
        w: g_w,
        b: g_b,
        x: g_x,
    })
}

// ------------------------------------------------------------ conv 3x3

/// 3x3 convolution, stride 1, zero padding 1, channel-last layout.
/// Weight shape: Cout x Cin x 3 x 3.
pub fn conv3x3(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 || w.rank() != 4 || w.shape()[2] != 3 || w.shape()[3] != 3 {
        return Err(Error::Dimension(format!(
            "conv3x3: input {:?}, weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (h, wid, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cout = w.shape()[0];
    if w.shape()[1] != cin || b.shape() != [cout] {
        return Err(Error::Dimension(format!(
            "conv3x3: weight {:?} / bias {:?} vs input {:?}",
            w.shape(),
            b.shape(),
            x.shape()
        )));
    }
    let mut out = Tensor::zeros(&[h, wid, cout]);
    for p in 0..h * wid {
        out.data_mut()[p * cout..(p + 1) * cout].copy_from_slice(b.data());
    }
    // tap-major accumulation: each of the 9 taps is a contiguous
    // (Cin x Cout) pass over the shifted image
    let taps = tap_matrices(w, cin, cout);
    for (tap, wt) in taps.iter().enumerate() {
        let (dy, dx) = (tap / 3, tap % 3);
        let (i0, i1) = row_span(h, dy);
        for i in i0..i1 {
            let si = i + dy - 1;
            let (j0, j1) = row_span(wid, dx);
            for j in j0..j1 {
                let sj = j + dx - 1;
                let xrow = &x.data()[(si * wid + sj) * cin..(si * wid + sj + 1) * cin];
                let orow = &mut out.data_mut()[(i * wid + j) * cout..(i * wid + j + 1) * cout];
                for (ci, &a) in xrow.iter().enumerate() {
                    let wrow = &wt[ci * cout..(ci + 1) * cout];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += a * wv;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Output index range whose tap offset (dy or dx in 0..3) stays in bounds.
fn row_span(len: usize, d: usize) -> (usize, usize) {
    match d {
        0 => (1, len),
        1 => (0, len),
        _ => (0, len - 1),
    }
}

/// The 3x3 weight rearranged as nine Cin x Cout matrices, one per tap.
fn tap_matrices(w: &Tensor, cin: usize, cout: usize) -> Vec<Vec<f64>> {
    let mut taps = vec![alloc::vec![0.0; cin * cout]; 9];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..9 {
                taps[t][ci * cout + co] = w.data()[(co * cin + ci) * 9 + t];
            }
        }
    }
    taps
}

pub struct ConvGrads {
    pub w: Tensor,
    pub b: Tensor,
    pub x: Tensor,
}

pub fn conv3x3_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> Result<ConvGrads> {
    let (h, wid, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cout = w.shape()[0];
    let mut g_w = Tensor::zeros_like(w);
    let mut g_b = Tensor::zeros(&[cout]);
    let mut g_x = Tensor::zeros_like(x);
    for p in 0..h * wid {
        let grow = &grad.data()[p * cout..(p + 1) * cout];
        for (acc, &g) in g_b.data_mut().iter_mut().zip(grow) {
            *acc += g;
        }
    }
    let taps = tap_matrices(w, cin, cout);
    let mut g_taps = alloc::vec![alloc::vec![0.0; cin * cout]; 9];
    for tap in 0..9 {
        let wt = &taps[tap];
        let gt = &mut g_taps[tap];
        let (dy, dx) = (tap / 3, tap % 3);
        let (i0, i1) = row_span(h, dy);
        for i in i0..i1 {
            let si = i + dy - 1;
            let (j0, j1) = row_span(wid, dx);
            for j in j0..j1 {
                let sj = j + dx - 1;
                let grow = &grad.data()[(i * wid + j) * cout..(i * wid + j + 1) * cout];
                let xrow = &x.data()[(si * wid + sj) * cin..(si * wid + sj + 1) * cin];
                let gxrow =
                    &mut g_x.data_mut()[(si * wid + sj) * cin..(si * wid + sj + 1) * cin];
                for ci in 0..cin {
                    let a = xrow[ci];
                    let wrow = &wt[ci * cout..(ci + 1) * cout];
                    let gwrow = &mut gt[ci * cout..(ci + 1) * cout];
                    let mut acc = 0.0;
                    for co in 0..cout {
                        let g = grow[co];
                        gwrow[co] += a * g;
                        acc += g * wrow[co];
                    }
                    gxrow[ci] += acc;
                }
            }
        }
    }
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..9 {
                g_w.data_mut()[(co * cin + ci) * 9 + t] = g_taps[t][ci * cout + co];
            }
        }
    }
    Ok(ConvGrads {
        w: g_w,
        b: g_b,
        x: g_x,
    })
}

/// Depthwise 3x3 convolution (one 3x3 kernel per channel), zero padding 1.
/// Weight shape: C x 3 x 3.
pub fn dwconv3x3(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 || w.rank() != 3 || w.shape()[1] != 3 || w.shape()[2] != 3 {
        return Err(Error::Dimension(format!(
            "dwconv3x3: input {:?}, weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (h, wid, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if w.shape()[0] != c || b.shape() != [c] {
        return Err(Error::Dimension(format!(
            "dwconv3x3: weight {:?} / bias {:?} vs {c} channels",
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[h, wid, c]);
    for i in 0..h {
        for j in 0..wid {
            for ch in 0..c {
                let mut acc = b.data()[ch];
                for dy in 0..3usize {
                    let si = i as isize + dy as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dx in 0..3usize {
                        let sj = j as isize + dx as isize - 1;
                        if sj < 0 || sj >= wid as isize {
                            continue;
                        }
                        acc += w.at3(ch, dy, dx) * x.at3(si as usize, sj as usize, ch);
                    }
                }
                out.set3(i, j, ch, acc);
            }
        }
    }
    Ok(out)
}

pub fn dwconv3x3_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> Result<ConvGrads> {
    let (h, wid, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut g_w = Tensor::zeros_like(w);
    let mut g_b = Tensor::zeros(&[c]);
    let mut g_x = Tensor::zeros_like(x);
    for i in 0..h {
        for j in 0..wid {
            for ch in 0..c {
                let g = grad.at3(i, j, ch);
                if g == 0.0 {
                    continue;
                }
                g_b.data_mut()[ch] += g;
                for dy in 0..3usize {
                    let si = i as isize + dy as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for dx in 0..3usize {
                        let sj = j as isize + dx as isize - 1;
                        if sj < 0 || sj >= wid as isize {
                            continue;
                        }
                        g_w.set3(
                            ch,
                            dy,
                            dx,
                            g_w.at3(ch, dy, dx) + g * x.at3(si as usize, sj as usize, ch),
                        );
                        let xv = g_x.at3(si as usize, sj as usize, ch) + g * w.at3(ch, dy, dx);
                        g_x.set3(si as usize, sj as usize, ch, xv);
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        w: g_w,
        b: g_b,
        x: g_x,
    })
}

// ----------------------------------------------------------- layernorm

pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Tensor, // one per row
}

/// LayerNorm over the channel (last) dimension of an L x C input.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    if x.rank() != 2 {
        return Err(Error::Dimension(format!(
            "layernorm expects L x C, got {:?}",
            x.shape()
        )));
    }
    let (l, c) = (x.shape()[0], x.shape()[1]);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Dimension(format!(
            "layernorm scales {:?}/{:?} vs {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut out = Tensor::zeros(&[l, c]);
    let mut normalized = Tensor::zeros(&[l, c]);
    let mut inv_std = Tensor::zeros(&[l]);
    for i in 0..l {
        let row = x.row(i);
        let mean: f64 = row.iter().sum::<f64>() / c as f64;
        let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let istd = 1.0 / math::sqrt(var + LAYERNORM_EPS);
        inv_std.data_mut()[i] = istd;
        for j in 0..c {
            let nv = (row[j] - mean) * istd;
            normalized.set2(i, j, nv);
            out.set2(i, j, gamma.data()[j] * nv + beta.data()[j]);
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

pub struct LayerNormGrads {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub x: Tensor,
}

pub fn layernorm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    grad: &Tensor,
) -> Result<LayerNormGrads> {
    let (l, c) = (grad.shape()[0], grad.shape()[1]);
    let mut g_gamma = Tensor::zeros_like(gamma);
    let mut g_beta = Tensor::zeros_like(gamma);
    let mut g_x = Tensor::zeros(&[l, c]);
    for i in 0..l {
        let istd = cache.inv_std.data()[i];
        let mut sum_g = 0.0;
        let mut sum_gn = 0.0;
        for j in 0..c {
            let gh = grad.at2(i, j) * gamma.data()[j];
            let nv = cache.normalized.at2(i, j);
            g_gamma.data_mut()[j] += grad.at2(i, j) * nv;
            g_beta.data_mut()[j] += grad.at2(i, j);
            sum_g += gh;
            sum_gn += gh * nv;
        }
        for j in 0..c {
            let gh = grad.at2(i, j) * gamma.data()[j];
            let nv = cache.normalized.at2(i, j);
            g_x.set2(
                i,
                j,
                istd * (gh - sum_g / c as f64 - nv * sum_gn / c as f64),
            );
        }
    }
    Ok(LayerNormGrads {
        gamma: g_gamma,
        beta: g_beta,
        x: g_x,
    })
}

// ----------------------------------------------------------------- ffn

#[derive(Clone, Debug)]
pub struct FfnWeights {
    pub w1: Tensor, // C x E
    pub b1: Tensor,
    pub w2: Tensor, // E x C
    pub b2: Tensor,
}

impl FfnWeights {
    pub fn zeros(c: usize, expansion: usize) -> FfnWeights {
        let e = c * expansion;
        FfnWeights {
            w1: Tensor::zeros(&[c, e]),
            b1: Tensor::zeros(&[e]),
            w2: Tensor::zeros(&[e, c]),
            b2: Tensor::zeros(&[c]),
        }
    }
}

pub struct FfnCache {
    x: Tensor,
    pre_act: Tensor,
    hidden: Tensor,
}

/// x -> gelu(x W1 + b1) W2 + b2 on an L x C input.
pub fn ffn_forward(x: &Tensor, w: &FfnWeights) -> Result<(Tensor, FfnCache)> {
    let pre_act = linear(x, &w.w1, &w.b1)?;
    let hidden = pre_act.map(math::gelu);
    let out = linear(&hidden, &w.w2, &w.b2)?;
    Ok((
        out,
        FfnCache {
            x: x.clone(),
            pre_act,
            hidden,
        },
    ))
}

pub struct FfnGrads {
    pub weights: FfnWeights,
    pub x: Tensor,
}

pub fn ffn_backward(cache: &FfnCache, w: &FfnWeights, grad: &Tensor) -> Result<FfnGrads> {
    let g2 = linear_backward(&cache.hidden, &w.w2, grad)?;
    let mut g_pre = g2.x;
    for (g, &p) in g_pre.data_mut().iter_mut().zip(cache.pre_act.data()) {
        *g *= math::gelu_grad(p);
    }
    let g1 = linear_backward(&cache.x, &w.w1, &g_pre)?;
    Ok(FfnGrads {
        weights: FfnWeights {
            w1: g1.w,
            b1: g1.b,
            w2: g2.w,
            b2: g2.b,
        },
        x: g1.x,
    })
}

// -------------------------------------------------------- pixel shuffle

/// H x W x (s^2 * Cout) -> sH x sW x Cout; channel c = co*s^2 + dy*s + dx.
pub fn pixel_shuffle(x: &Tensor, scale: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Dimension(format!(
            "pixel_shuffle expects H x W x C, got {:?}",
            x.shape()
        )));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let s2 = scale * scale;
    if c % s2 != 0 {
        return Err(Error::Dimension(format!(
            "pixel_shuffle: {c} channels not divisible by scale^2 {s2}"
        )));
    }
    let cout = c / s2;
    let mut out = Tensor::zeros(&[h * scale, w * scale, cout]);
    for i in 0..h {
        for j in 0..w {
            for co in 0..cout {
                for dy in 0..scale {
                    for dx in 0..scale {
                        out.set3(
                            i * scale + dy,
                            j * scale + dx,
                            co,
                            x.at3(i, j, co * s2 + dy * scale + dx),
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pixel_shuffle_backward(grad: &Tensor, scale: usize) -> Result<Tensor> {
    let (hs, ws, cout) = (grad.shape()[0], grad.shape()[1], grad.shape()[2]);
    let s2 = scale * scale;
    let (h, w) = (hs / scale, ws / scale);
    let mut out = Tensor::zeros(&[h, w, cout * s2]);
    for i in 0..h {
        for j in 0..w {
            for co in 0..cout {
                for dy in 0..scale {
                    for dx in 0..scale {
                        out.set3(
                            i,
                            j,
                            co * s2 + dy * scale + dx,
                            grad.at3(i * scale + dy, j * scale + dx, co),
                        );
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn rt(rng: &mut RngState, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        rng.fill_uniform(t.data_mut(), -1.0, 1.0);
        t
    }

    fn fd_check(
        f: &dyn Fn(&Tensor) -> f64,
        point: &Tensor,
        analytic: &Tensor,
        tol: f64,
    ) {
        let h = 1e-6;
        for idx in 0..point.len() {
            let mut p = point.clone();
            p.data_mut()[idx] += h;
            let mut m = point.clone();
            m.data_mut()[idx] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let an = analytic.data()[idx];
            let scale = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / scale < tol, "idx {idx}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn linear_backward_matches_fd() {
        let mut rng = RngState::new(61);
        let x = rt(&mut rng, &[4, 3]);
        let w = rt(&mut rng, &[3, 5]);
        let b = rt(&mut rng, &[5]);
        let gout = rt(&mut rng, &[4, 5]);
        let g = linear_backward(&x, &w, &gout).unwrap();
        let loss_w = |wt: &Tensor| linear(&x, wt, &b).unwrap().mul(&gout).unwrap().sum();
        let loss_x = |xt: &Tensor| linear(xt, &w, &b).unwrap().mul(&gout).unwrap().sum();
        fd_check(&loss_w, &w, &g.w, 1e-7);
        fd_check(&loss_x, &x, &g.x, 1e-7);
    }

    #[test]
    fn conv3x3_known_kernel() {
        // identity kernel reproduces the input
        let mut rng = RngState::new(62);
        let x = rt(&mut rng, &[5, 4, 2]);
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        for co in 0..2 {
            w.data_mut()[((co * 2 + co) * 3 + 1) * 3 + 1] = 1.0;
        }
        let y = conv3x3(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv3x3_backward_matches_fd() {
        let mut rng = RngState::new(63);
        let x = rt(&mut rng, &[4, 4, 2]);
        let w = rt(&mut rng, &[3, 2, 3, 3]);
        let b = rt(&mut rng, &[3]);
        let gout = rt(&mut rng, &[4, 4, 3]);
        let g = conv3x3_backward(&x, &w, &gout).unwrap();
        fd_check(
            &|wt| conv3x3(&x, wt, &b).unwrap().mul(&gout).unwrap().sum(),
            &w,
            &g.w,
            1e-6,
        );
        fd_check(
            &|xt| conv3x3(xt, &w, &b).unwrap().mul(&gout).unwrap().sum(),
            &x,
            &g.x,
            1e-6,
        );
        fd_check(
            &|bt| conv3x3(&x, &w, bt).unwrap().mul(&gout).unwrap().sum(),
            &b,
            &g.b,
            1e-6,
        );
    }

    #[test]
    fn dwconv3x3_backward_matches_fd() {
        let mut rng = RngState::new(64);
        let x = rt(&mut rng, &[4, 3, 2]);
        let w = rt(&mut rng, &[2, 3, 3]);
        let b = rt(&mut rng, &[2]);
        let gout = rt(&mut rng, &[4, 3, 2]);
        let g = dwconv3x3_backward(&x, &w, &gout).unwrap();
        fd_check(
            &|wt| dwconv3x3(&x, wt, &b).unwrap().mul(&gout).unwrap().sum(),
            &w,
            &g.w,
            1e-6,
        );
        fd_check(
            &|xt| dwconv3x3(xt, &w, &b).unwrap().mul(&gout).unwrap().sum(),
            &x,
            &g.x,
            1e-6,
        );
    }

    #[test]
    fn layernorm_normalizes_rows() {
        let mut rng = RngState::new(65);
        let x = rt(&mut rng, &[3, 8]);
        let gamma = Tensor::full(&[8], 1.0);
        let beta = Tensor::zeros(&[8]);
        let (y, _) = layernorm(&x, &gamma, &beta).unwrap();
        for i in 0..3 {
            let mean: f64 = y.row(i).iter().sum::<f64>() / 8.0;
            let var: f64 = y.row(i).iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layernorm_backward_matches_fd() {
        let mut rng = RngState::new(66);
        let x = rt(&mut rng, &[3, 6]);
        let gamma = rt(&mut rng, &[6]);
        let beta = rt(&mut rng, &[6]);
        let gout = rt(&mut rng, &[3, 6]);
        let (_, cache) = layernorm(&x, &gamma, &beta).unwrap();
        let g = layernorm_backward(&cache, &gamma, &gout).unwrap();
        fd_check(
            &|xt| layernorm(xt, &gamma, &beta).unwrap().0.mul(&gout).unwrap().sum(),
            &x,
            &g.x,
            1e-5,
        );
        fd_check(
            &|gt| layernorm(&x, gt, &beta).unwrap().0.mul(&gout).unwrap().sum(),
            &gamma,
            &g.gamma,
            1e-6,
        );
    }

    #[test]
    fn ffn_backward_matches_fd() {
        let mut rng = RngState::new(67);
        let c = 4;
        let x = rt(&mut rng, &[5, c]);
        let w = FfnWeights {
            w1: rt(&mut rng, &[c, 2 * c]),
            b1: rt(&mut rng, &[2 * c]),
            w2: rt(&mut rng, &[2 * c, c]),
            b2: rt(&mut rng, &[c]),
        };
        let gout = rt(&mut rng, &[5, c]);
        let (_, cache) = ffn_forward(&x, &w).unwrap();
        let g = ffn_backward(&cache, &w, &gout).unwrap();
        fd_check(
            &|xt| ffn_forward(xt, &w).unwrap().0.mul(&gout).unwrap().sum(),
            &x,
            &g.x,
            1e-5,
        );
        let loss_w1 = |w1: &Tensor| {
            let wt = FfnWeights {
                w1: w1.clone(),
                ..w.clone()
            };
            ffn_forward(&x, &wt).unwrap().0.mul(&gout).unwrap().sum()
        };
        fd_check(&loss_w1, &w.w1, &g.weights.w1, 1e-5);
    }

    #[test]
    fn pixel_shuffle_constant_stays_constant() {
        let x = Tensor::full(&[3, 3, 12], 0.7);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[6, 6, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn pixel_shuffle_roundtrip() {
        let mut rng = RngState::new(68);
        let x = rt(&mut rng, &[2, 3, 8]);
        let y = pixel_shuffle(&x, 2).unwrap();
        let back = pixel_shuffle_backward(&y, 2).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible_channels() {
        let x = Tensor::zeros(&[2, 2, 7]);
        assert!(matches!(pixel_shuffle(&x, 2), Err(Error::Dimension(_))));
    }
}
