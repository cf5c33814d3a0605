//! Causal linear attention in direct and recurrent form, the structural
//! correspondence between the attention recurrence and the state-space
//! recurrence, and windowed multi-head self-attention for the local branch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::ssm::SsmParams;
use crate::tensor::Tensor;

/// Query/key/value rows, each L x d_head.
#[derive(Clone, Debug)]
pub struct QkvTriple {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

impl QkvTriple {
    pub fn validate(&self) -> Result<()> {
        if self.q.shape() != self.k.shape() || self.q.shape() != self.v.shape() {
            return Err(Error::Dimension(format!(
                "Q {:?}, K {:?}, V {:?} must share one shape",
                self.q.shape(),
                self.k.shape(),
                self.v.shape()
            )));
        }
        if self.q.rank() != 2 {
            return Err(Error::Dimension(format!(
                "expected rank-2 Q/K/V, got {:?}",
                self.q.shape()
            )));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.q.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.q.shape()[1]
    }

    /// elu(u)+1 on Q and K keeps every dot product strictly positive.
    pub fn feature_mapped(&self) -> QkvTriple {
        QkvTriple {
            q: self.q.map(math::elu_plus_one),
            k: self.k.map(math::elu_plus_one),
            v: self.v.clone(),
        }
    }
}

/// Lower-triangular normalized weights of the direct form; row i holds the
/// weight of each value j <= i.
pub fn causal_attention_weights(t: &QkvTriple) -> Result<Tensor> {
    t.validate()?;
    let f = t.feature_mapped();
    let (l, d) = (f.seq_len(), f.head_dim());
    let mut w = Tensor::zeros(&[l, l]);
    for i in 0..l {
        let qi = f.q.row(i);
        let mut denom = 0.0;
        for tpos in 0..=i {
            denom += dot(qi, f.k.row(tpos), d);
        }
        if denom == 0.0 {
            return Err(Error::Numeric {
                position: i,
                what: "zero attention denominator".into(),
            });
        }
        for j in 0..=i {
            w.set2(i, j, dot(qi, f.k.row(j), d) / denom);
        }
    }
    Ok(w)
}

/// O(L^2) form: y_i = sum_{j<=i} (Q_i K_j^T / sum_{t<=i} Q_i K_t^T) V_j.
pub fn causal_linear_attention_direct(t: &QkvTriple) -> Result<Tensor> {
    let w = causal_attention_weights(t)?;
    let (l, d) = (t.seq_len(), t.head_dim());
    let mut y = Tensor::zeros(&[l, d]);
    for i in 0..l {
        for j in 0..=i {
            let wij = w.at2(i, j);
            for s in 0..d {
                y.set2(i, s, y.at2(i, s) + wij * t.v.at2(j, s));
            }
        }
    }
    Ok(y)
}

/// Recurrent form over running sums S_i = S_{i-1} + K_i^T V_i and
/// Z_i = Z_{i-1} + K_i^T; y_i = Q_i S_i / Q_i Z_i.
pub fn causal_linear_attention_recurrent(t: &QkvTriple) -> Result<Tensor> {
    t.validate()?;
    let f = t.feature_mapped();
    let (l, d) = (f.seq_len(), f.head_dim());
    let mut s = Tensor::zeros(&[d, d]);
    let mut z = vec![0.0; d];
    let mut y = Tensor::zeros(&[l, d]);
    for i in 0..l {
        let ki = f.k.row(i);
        for a in 0..d {
            for b in 0..d {
                s.set2(a, b, s.at2(a, b) + ki[a] * f.v.at2(i, b));
            }
            z[a] += ki[a];
        }
        let qi = f.q.row(i);
        let denom = dot(qi, &z, d);
        if denom == 0.0 {
            return Err(Error::Numeric {
                position: i,
                what: "zero attention denominator".into(),
            });
        }
        for b in 0..d {
            let mut num = 0.0;
            for a in 0..d {
                num += qi[a] * s.at2(a, b);
            }
            y.set2(i, b, num / denom);
        }
    }
    Ok(y)
}

/// Recurrent attention with the normalizer dropped and no feature map:
/// S_i = S_{i-1} + K_i^T V_i, y_i = Q_i S_i. With A = 0 and D = 0 this is
/// exactly the state-space recurrence under the role binding B ~ K^T, C ~ Q.
pub fn unnormalized_recurrent_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.rank() != 2 || q.shape() != k.shape() || v.rank() != 2 || v.shape()[0] != q.shape()[0] {
        return Err(Error::Dimension(format!(
            "Q {:?} and K {:?} must match; V {:?} must share their leading extent",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (l, d) = (q.shape()[0], q.shape()[1]);
    let dv = v.shape()[1];
    let mut s = Tensor::zeros(&[d, dv]);
    let mut y = Tensor::zeros(&[l, dv]);
    for i in 0..l {
        for a in 0..d {
            for b in 0..dv {
                s.set2(a, b, s.at2(a, b) + k.at2(i, a) * v.at2(i, b));
            }
        }
        for b in 0..dv {
            let mut acc = 0.0;
            for a in 0..d {
                acc += q.at2(i, a) * s.at2(a, b);
            }
            y.set2(i, b, acc);
        }
    }
    Ok(y)
}

/// One mapped role pair in the attention/state-space comparison.
#[derive(Clone, Debug)]
pub struct CorrespondencePair {
    pub ssm_role: &'static str,
    pub attn_role: &'static str,
    pub ssm_shape: Vec<usize>,
    pub attn_shape: Vec<usize>,
    pub shape_valid: bool,
}

/// Shape-level verification that the two recurrences share one template:
/// carried state (h ~ S), per-step write-in (B ~ K^T), readout (C ~ Q).
#[derive(Clone, Debug)]
pub struct CorrespondenceReport {
    pub pairs: Vec<CorrespondencePair>,
    pub state_dim: usize,
}

pub fn common_form_report(ssm: &SsmParams, attn: &QkvTriple) -> Result<CorrespondenceReport> {
    attn.validate()?;
    let d = ssm.state_dim();
    let dh = attn.head_dim();
    if d != dh {
        return Err(Error::Dimension(format!(
            "state dim {d} does not match head dim {dh}"
        )));
    }
    let l_ssm = ssm.seq_len();
    let l_attn = attn.seq_len();
    if l_ssm != l_attn {
        return Err(Error::Dimension(format!(
            "sequence lengths differ: {l_ssm} vs {l_attn}"
        )));
    }
    let c = ssm.channels();
    let pairs = vec![
        CorrespondencePair {
            ssm_role: "h (carried state)",
            attn_role: "S (running sum)",
            ssm_shape: vec![c, d],
            attn_shape: vec![dh, dh],
            shape_valid: true,
        },
        CorrespondencePair {
            ssm_role: "B (input matrix)",
            attn_role: "K^T (key)",
            ssm_shape: ssm.b.shape().to_vec(),
            attn_shape: attn.k.shape().to_vec(),
            shape_valid: ssm.b.shape() == attn.k.shape(),
        },
        CorrespondencePair {
            ssm_role: "C (output matrix)",
            attn_role: "Q (query)",
            ssm_shape: ssm.c_out.shape().to_vec(),
            attn_shape: attn.q.shape().to_vec(),
            shape_valid: ssm.c_out.shape() == attn.q.shape(),
        },
    ];
    Ok(CorrespondenceReport {
        pairs,
        state_dim: d,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        acc += a[i] * b[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::ssm;
    use crate::tensor::Tensor;

    fn random_triple(rng: &mut RngState, l: usize, d: usize) -> QkvTriple {
        let mut q = Tensor::zeros(&[l, d]);
        let mut k = Tensor::zeros(&[l, d]);
        let mut v = Tensor::zeros(&[l, d]);
        rng.fill_uniform(q.data_mut(), -1.5, 1.5);
        rng.fill_uniform(k.data_mut(), -1.5, 1.5);
        rng.fill_uniform(v.data_mut(), -1.5, 1.5);
        QkvTriple { q, k, v }
    }

    #[test]
    fn single_token_returns_value() {
        let mut rng = RngState::new(1);
        let t = random_triple(&mut rng, 1, 4);
        let y = causal_linear_attention_direct(&t).unwrap();
        for s in 0..4 {
            assert!((y.at2(0, s) - t.v.at2(0, s)).abs() < 1e-12);
        }
        let y = causal_linear_attention_recurrent(&t).unwrap();
        for s in 0..4 {
            assert!((y.at2(0, s) - t.v.at2(0, s)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_keys_give_running_average() {
        let mut rng = RngState::new(2);
        let l = 6;
        let d = 3;
        let mut t = random_triple(&mut rng, l, d);
        let first = t.k.row(0).to_vec();
        for i in 0..l {
            for s in 0..d {
                t.k.set2(i, s, first[s]);
            }
        }
        let y = causal_linear_attention_direct(&t).unwrap();
        for i in 0..l {
            for s in 0..d {
                let avg: f64 = (0..=i).map(|j| t.v.at2(j, s)).sum::<f64>() / (i + 1) as f64;
                assert!((y.at2(i, s) - avg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_values_give_zero_output() {
        let mut rng = RngState::new(3);
        let mut t = random_triple(&mut rng, 5, 4);
        t.v = Tensor::zeros(&[5, 4]);
        let y = causal_linear_attention_recurrent(&t).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_and_recurrent_agree() {
        let mut rng = RngState::new(4);
        for _ in 0..30 {
            let t = random_triple(&mut rng, 8, 4);
            let yd = causal_linear_attention_direct(&t).unwrap();
            let yr = causal_linear_attention_recurrent(&t).unwrap();
            for (a, b) in yd.data().iter().zip(yr.data()) {
                let scale = a.abs().max(b.abs()).max(1e-6);
                assert!((a - b).abs() / scale <= 1e-10);
            }
        }
    }

    #[test]
    fn weights_sum_to_one_per_position() {
        let mut rng = RngState::new(6);
        let t = random_triple(&mut rng, 16, 4);
        let w = causal_attention_weights(&t).unwrap();
        for i in 0..16 {
            let sum: f64 = (0..=i).map(|j| w.at2(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for j in i + 1..16 {
                assert_eq!(w.at2(i, j), 0.0);
            }
        }
    }

    #[test]
    fn attention_is_causal() {
        let mut rng = RngState::new(7);
        let t = random_triple(&mut rng, 10, 3);
        let y0 = causal_linear_attention_recurrent(&t).unwrap();
        let mut t2 = t.clone();
        t2.v.set2(6, 1, 99.0);
        t2.q.set2(6, 0, -3.0);
        t2.k.set2(6, 2, 5.0);
        let y1 = causal_linear_attention_recurrent(&t2).unwrap();
        for i in 0..6 {
            for s in 0..3 {
                assert_eq!(y0.at2(i, s), y1.at2(i, s));
            }
        }
    }

    #[test]
    fn report_validates_shapes() {
        let mut rng = RngState::new(8);
        let (p, _) = ssm::random_instance(&mut rng, 12, 2, 16);
        let t = random_triple(&mut rng, 12, 16);
        let rep = common_form_report(&p, &t).unwrap();
        assert_eq!(rep.pairs.len(), 3);
        assert!(rep.pairs.iter().all(|pr| pr.shape_valid));

        let t_bad = random_triple(&mut rng, 12, 8);
        assert!(matches!(
            common_form_report(&p, &t_bad),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn degenerate_scan_equals_unnormalized_attention() {
        // A = 0 (Abar = 1), Delta = 1, D = 0, one channel, x = 1: the scan's
        // h update is h_i = h_{i-1} + B_i and y_i = C_i h_i, which is the
        // unnormalized attention recurrence with K = B, Q = C, V = x.
        let mut rng = RngState::new(9);
        let l = 12;
        let d = 5;
        let mut b = Tensor::zeros(&[l, d]);
        let mut c_out = Tensor::zeros(&[l, d]);
        rng.fill_uniform(b.data_mut(), -1.0, 1.0);
        rng.fill_uniform(c_out.data_mut(), -1.0, 1.0);
        let mut xv = Tensor::zeros(&[l, 1]);
        rng.fill_uniform(xv.data_mut(), -1.0, 1.0);

        let p = SsmParams {
            a: Tensor::zeros(&[1, d]),
            b: b.clone(),
            c_out: c_out.clone(),
            delta: Tensor::full(&[l, 1], 1.0),
            d_skip: Tensor::zeros(&[1]),
        };
        let ds = ssm::discretize(&p).unwrap();
        // Bbar_i x_i = B_i * x_i matches K_i^T V_i with V_i = x_i
        let (y_scan, _) = ssm::selective_scan(&ds, &c_out, &p.d_skip, &xv).unwrap();
        let y_attn = unnormalized_recurrent_attention(&c_out, &b, &xv).unwrap();
        for i in 0..l {
            let a = y_scan.at2(i, 0);
            let bb = y_attn.at2(i, 0);
            let scale = a.abs().max(bb.abs()).max(1e-6);
            assert!((a - bb).abs() / scale <= 1e-10);
        }
    }
}
