//! Softmax self-attention inside non-overlapping spatial windows with a
//! learned relative position bias per head. Inputs that do not divide the
//! window are reflection-padded and cropped back.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{softmax_row, Tensor};

/// Projection weights for one window-attention layer. All projections are
/// C x C; the bias table holds (2w-1)^2 entries per head.
#[derive(Clone, Debug)]
pub struct MhsaWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
    pub rel_bias: Tensor, // heads x (2w-1)^2
}

impl MhsaWeights {
    pub fn zeros(channels: usize, heads: usize, window: usize) -> MhsaWeights {
        let side = 2 * window - 1;
        MhsaWeights {
            wq: Tensor::zeros(&[channels, channels]),
            wk: Tensor::zeros(&[channels, channels]),
            wv: Tensor::zeros(&[channels, channels]),
            wo: Tensor::zeros(&[channels, channels]),
            bq: Tensor::zeros(&[channels]),
            bk: Tensor::zeros(&[channels]),
            bv: Tensor::zeros(&[channels]),
            bo: Tensor::zeros(&[channels]),
            rel_bias: Tensor::zeros(&[heads, side * side]),
        }
    }

    pub fn identity_value(channels: usize, heads: usize, window: usize) -> MhsaWeights {
        let mut w = MhsaWeights::zeros(channels, heads, window);
        for i in 0..channels {
            w.wv.set2(i, i, 1.0);
            w.wo.set2(i, i, 1.0);
        }
        w
    }
}

pub struct MhsaCache {
    hp: usize,
    wp: usize,
    h: usize,
    w: usize,
    heads: usize,
    window: usize,
    x_pad: Tensor,      // (Hp*Wp) x C
    q: Tensor,          // (Hp*Wp) x C
    k: Tensor,
    v: Tensor,
    attn: Vec<Tensor>,  // per (window, head): n x n probabilities
    mixed: Tensor,      // (Hp*Wp) x C, pre output-projection
}

fn check_config(c: usize, heads: usize, window: usize) -> Result<()> {
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!(
            "heads {heads} must divide channels {c}"
        )));
    }
    if window == 0 {
        return Err(Error::Config("window size must be positive".into()));
    }
    Ok(())
}

/// Reflection-pad an H x W x C map on the bottom/right to the target extents.
pub fn reflect_pad_hwc(x: &Tensor, ht: usize, wt: usize) -> Tensor {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[ht, wt, c]);
    for i in 0..ht {
        let si = reflect_index(i, h);
        for j in 0..wt {
            let sj = reflect_index(j, w);
            for ch in 0..c {
                out.set3(i, j, ch, x.at3(si, sj, ch));
            }
        }
    }
    out
}

/// Scatter-add adjoint of `reflect_pad_hwc`.
pub fn reflect_pad_hwc_backward(grad: &Tensor, h: usize, w: usize) -> Tensor {
    let (ht, wt, c) = (grad.shape()[0], grad.shape()[1], grad.shape()[2]);
    let mut out = Tensor::zeros(&[h, w, c]);
    for i in 0..ht {
        let si = reflect_index(i, h);
        for j in 0..wt {
            let sj = reflect_index(j, w);
            for ch in 0..c {
                out.set3(si, sj, ch, out.at3(si, sj, ch) + grad.at3(i, j, ch));
            }
        }
    }
    out
}

pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        return i;
    }
    if n == 1 {
        return 0;
    }
    // reflect without repeating the edge sample
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

fn window_rows(_hp: usize, wp: usize, window: usize, wy: usize, wx: usize) -> Vec<usize> {
    let mut rows = Vec::with_capacity(window * window);
    for dy in 0..window {
        for dx in 0..window {
            rows.push((wy * window + dy) * wp + (wx * window + dx));
        }
    }
    rows
}

/// rel_index for every (ii, jj) pair of a window, flattened.
fn rel_table(window: usize) -> Vec<usize> {
    let n = window * window;
    let mut tab = Vec::with_capacity(n * n);
    for ii in 0..n {
        for jj in 0..n {
            tab.push(rel_index(ii, jj, window));
        }
    }
    tab
}

/// Copy one head's slice of the given window rows into a dense n x dh buffer.
fn gather_head(m: &Tensor, rows: &[usize], off: usize, dh: usize, out: &mut [f64]) {
    let c = m.shape()[1];
    for (ii, &r) in rows.iter().enumerate() {
        out[ii * dh..(ii + 1) * dh].copy_from_slice(&m.data()[r * c + off..r * c + off + dh]);
    }
}

/// Adjoint of `gather_head`: add the dense buffer back into place.
fn scatter_head(m: &mut Tensor, rows: &[usize], off: usize, dh: usize, buf: &[f64]) {
    let c = m.shape()[1];
    for (ii, &r) in rows.iter().enumerate() {
        let dst = &mut m.data_mut()[r * c + off..r * c + off + dh];
        for (d, &v) in dst.iter_mut().zip(&buf[ii * dh..(ii + 1) * dh]) {
            *d += v;
        }
    }
}

fn rel_index(ii: usize, jj: usize, window: usize) -> usize {
    let side = 2 * window - 1;
    let (yi, xi) = (ii / window, ii % window);
    let (yj, xj) = (jj / window, jj % window);
    (yi + window - 1 - yj) * side + (xi + window - 1 - xj)
}

fn project(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = x.matmul(w)?;
    let cols = out.shape()[1];
    let rows = out.shape()[0];
    for i in 0..rows {
        for j in 0..cols {
            out.set2(i, j, out.at2(i, j) + b.data()[j]);
        }
    }
    Ok(out)
}

/// Forward pass; returns the H x W x C output and the cache for backward.
pub fn window_mhsa_forward(
    x: &Tensor,
    weights: &MhsaWeights,
    heads: usize,
    window: usize,
) -> Result<(Tensor, MhsaCache)> {
    if x.rank() != 3 {
        return Err(Error::Dimension(format!(
            "window_mhsa expects H x W x C input, got {:?}",
            x.shape()
        )));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    check_config(c, heads, window)?;
    let dh = c / heads;
    let scale = 1.0 / math::sqrt(dh as f64);

    let hp = h.div_ceil(window) * window;
    let wp = w.div_ceil(window) * window;
    let x_pad = if hp == h && wp == w {
        x.clone()
    } else {
        reflect_pad_hwc(x, hp, wp)
    };
    let x_flat = x_pad.clone().reshaped(&[hp * wp, c])?;

    let q = project(&x_flat, &weights.wq, &weights.bq)?;
    let k = project(&x_flat, &weights.wk, &weights.bk)?;
    let v = project(&x_flat, &weights.wv, &weights.bv)?;

    let n = window * window;
    let rel_tab = rel_table(window);
    let mut mixed = Tensor::zeros(&[hp * wp, c]);
    let mut attn_all = Vec::new();
    let mut qb = vec![0.0; n * dh];
    let mut kb = vec![0.0; n * dh];
    let mut vb = vec![0.0; n * dh];
    for wy in 0..hp / window {
        for wx in 0..wp / window {
            let rows = window_rows(hp, wp, window, wy, wx);
            for head in 0..heads {
                let off = head * dh;
                gather_head(&q, &rows, off, dh, &mut qb);
                gather_head(&k, &rows, off, dh, &mut kb);
                gather_head(&v, &rows, off, dh, &mut vb);
                let rb = weights.rel_bias.row(head);
                let mut attn = Tensor::zeros(&[n, n]);
                {
                    let ad = attn.data_mut();
                    for ii in 0..n {
                        let qrow = &qb[ii * dh..(ii + 1) * dh];
                        for jj in 0..n {
                            let krow = &kb[jj * dh..(jj + 1) * dh];
                            let mut logit = 0.0;
                            for s in 0..dh {
                                logit += qrow[s] * krow[s];
                            }
                            ad[ii * n + jj] = logit * scale + rb[rel_tab[ii * n + jj]];
                        }
                    }
                }
                for ii in 0..n {
                    let row = &mut attn.data_mut()[ii * n..(ii + 1) * n];
                    softmax_row(row);
                }
                for ii in 0..n {
                    let arow = &attn.data()[ii * n..(ii + 1) * n];
                    let orow =
                        &mut mixed.data_mut()[rows[ii] * c + off..rows[ii] * c + off + dh];
                    for (jj, &a) in arow.iter().enumerate() {
                        let vrow = &vb[jj * dh..(jj + 1) * dh];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += a * vv;
                        }
                    }
                }
                attn_all.push(attn);
            }
        }
    }

    let out_flat = project(&mixed, &weights.wo, &weights.bo)?;
    let out_pad = out_flat.reshaped(&[hp, wp, c])?;
    let out = crop_hwc(&out_pad, h, w);
    Ok((
        out,
        MhsaCache {
            hp,
            wp,
            h,
            w,
            heads,
            window,
            x_pad: x_flat,
            q,
            k,
            v,
            attn: attn_all,
            mixed,
        },
    ))
}

pub fn window_mhsa(
    x: &Tensor,
    weights: &MhsaWeights,
    heads: usize,
    window: usize,
) -> Result<Tensor> {
    window_mhsa_forward(x, weights, heads, window).map(|(y, _)| y)
}

pub struct MhsaGrads {
    pub weights: MhsaWeights,
    pub x: Tensor,
}

pub fn window_mhsa_backward(
    cache: &MhsaCache,
    weights: &MhsaWeights,
    grad_out: &Tensor,
) -> Result<MhsaGrads> {
    let (hp, wp) = (cache.hp, cache.wp);
    let c = cache.q.shape()[1];
    let heads = cache.heads;
    let window = cache.window;
    let dh = c / heads;
    let n = window * window;
    let scale = 1.0 / math::sqrt(dh as f64);

    // pad the incoming gradient with zeros (crop adjoint)
    let mut g_out_pad = Tensor::zeros(&[hp, wp, c]);
    for i in 0..cache.h {
        for j in 0..cache.w {
            for ch in 0..c {
                g_out_pad.set3(i, j, ch, grad_out.at3(i, j, ch));
            }
        }
    }
    let g_out_flat = g_out_pad.reshaped(&[hp * wp, c])?;

    // out = mixed * wo + bo
    let mut gw = MhsaWeights::zeros(c, heads, window);
    gw.wo = cache.mixed.transpose2()?.matmul(&g_out_flat)?;
    for i in 0..hp * wp {
        for j in 0..c {
            gw.bo.data_mut()[j] += g_out_flat.at2(i, j);
        }
    }
    let g_mixed = g_out_flat.matmul(&weights.wo.transpose2()?)?;

    let mut g_q = Tensor::zeros(&[hp * wp, c]);
    let mut g_k = Tensor::zeros(&[hp * wp, c]);
    let mut g_v = Tensor::zeros(&[hp * wp, c]);

    let rel_tab = rel_table(window);
    let mut qb = vec![0.0; n * dh];
    let mut kb = vec![0.0; n * dh];
    let mut vb = vec![0.0; n * dh];
    let mut gm = vec![0.0; n * dh];
    let mut cache_idx = 0;
    for wy in 0..hp / window {
        for wx in 0..wp / window {
            let rows = window_rows(hp, wp, window, wy, wx);
            for head in 0..heads {
                let off = head * dh;
                let attn = cache.attn[cache_idx].data();
                cache_idx += 1;
                gather_head(&cache.q, &rows, off, dh, &mut qb);
                gather_head(&cache.k, &rows, off, dh, &mut kb);
                gather_head(&cache.v, &rows, off, dh, &mut vb);
                gather_head(&g_mixed, &rows, off, dh, &mut gm);

                // mixed_i = sum_j attn_ij v_j
                let mut g_attn = vec![0.0; n * n];
                let mut gvb = vec![0.0; n * dh];
                for ii in 0..n {
                    let gmrow = &gm[ii * dh..(ii + 1) * dh];
                    let arow = &attn[ii * n..(ii + 1) * n];
                    let garow = &mut g_attn[ii * n..(ii + 1) * n];
                    for jj in 0..n {
                        let vrow = &vb[jj * dh..(jj + 1) * dh];
                        let gvrow = &mut gvb[jj * dh..(jj + 1) * dh];
                        let a = arow[jj];
                        let mut acc = 0.0;
                        for s in 0..dh {
                            acc += gmrow[s] * vrow[s];
                            gvrow[s] += a * gmrow[s];
                        }
                        garow[jj] = acc;
                    }
                }
                // softmax backward per row, then the q/k chain
                let grel = gw.rel_bias.data_mut();
                let side2 = (2 * window - 1) * (2 * window - 1);
                let mut gqb = vec![0.0; n * dh];
                let mut gkb = vec![0.0; n * dh];
                for ii in 0..n {
                    let arow = &attn[ii * n..(ii + 1) * n];
                    let garow = &g_attn[ii * n..(ii + 1) * n];
                    let mut dot = 0.0;
                    for jj in 0..n {
                        dot += garow[jj] * arow[jj];
                    }
                    let qrow: Vec<f64> = qb[ii * dh..(ii + 1) * dh].to_vec();
                    let gqrow_acc = &mut gqb[ii * dh..(ii + 1) * dh];
                    for jj in 0..n {
                        let g_logit = arow[jj] * (garow[jj] - dot);
                        grel[head * side2 + rel_tab[ii * n + jj]] += g_logit;
                        let gs = g_logit * scale;
                        let krow = &kb[jj * dh..(jj + 1) * dh];
                        let gkrow = &mut gkb[jj * dh..(jj + 1) * dh];
                        for s in 0..dh {
                            gqrow_acc[s] += gs * krow[s];
                            gkrow[s] += gs * qrow[s];
                        }
                    }
                }
                scatter_head(&mut g_q, &rows, off, dh, &gqb);
                scatter_head(&mut g_k, &rows, off, dh, &gkb);
                scatter_head(&mut g_v, &rows, off, dh, &gvb);
            }
        }
    }

    // back through the three projections
    let xt = cache.x_pad.transpose2()?;
    gw.wq = xt.matmul(&g_q)?;
    gw.wk = xt.matmul(&g_k)?;
    gw.wv = xt.matmul(&g_v)?;
    for i in 0..hp * wp {
        for j in 0..c {
            gw.bq.data_mut()[j] += g_q.at2(i, j);
            gw.bk.data_mut()[j] += g_k.at2(i, j);
            gw.bv.data_mut()[j] += g_v.at2(i, j);
        }
    }
    let mut g_x_flat = g_q.matmul(&weights.wq.transpose2()?)?;
    g_x_flat.add_assign(&g_k.matmul(&weights.wk.transpose2()?)?)?;
    g_x_flat.add_assign(&g_v.matmul(&weights.wv.transpose2()?)?)?;
    let g_x_pad = g_x_flat.reshaped(&[hp, wp, c])?;
    let g_x = if hp == cache.h && wp == cache.w {
        g_x_pad
    } else {
        reflect_pad_hwc_backward(&g_x_pad, cache.h, cache.w)
    };
    Ok(MhsaGrads { weights: gw, x: g_x })
}

pub(crate) fn crop_hwc(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (hp, wp, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if hp == h && wp == w {
        return x.clone();
    }
    let mut out = Tensor::zeros(&[h, w, c]);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out.set3(i, j, ch, x.at3(i, j, ch));
            }
        }
    }
    out
}
