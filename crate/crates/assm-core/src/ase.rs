//! The attentive state-space equation: a low-rank prompt pool, gumbel
//! routing over projected log-probabilities, and the scan with the output
//! matrix augmented as C + P.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::RngState;
use crate::ssm::{self, DiscreteSsm, ScanGrads};
use crate::tensor::Tensor;

/// Low-rank factored prompt bank: the pool is M (T x r, block-specific)
/// times N (r x d, shared across blocks).
#[derive(Clone, Debug)]
pub struct PromptPool {
    pub m: Tensor,
    pub n: Tensor,
}

impl PromptPool {
    pub fn prompt_count(&self) -> usize {
        self.m.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.m.shape()[1]
    }

    pub fn state_dim(&self) -> usize {
        self.n.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (t, r) = (self.prompt_count(), self.rank());
        let d = self.state_dim();
        if self.n.shape()[0] != r {
            return Err(Error::Dimension(format!(
                "M {:?} and N {:?} disagree on rank",
                self.m.shape(),
                self.n.shape()
            )));
        }
        if r == 0 || t == 0 || d == 0 {
            return Err(Error::Config(format!(
                "degenerate pool factors T={t}, r={r}, d={d}"
            )));
        }
        Ok(())
    }

    /// The materialized T x d pool, M * N.
    pub fn pool(&self) -> Result<Tensor> {
        self.m.matmul(&self.n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteMode {
    /// One-hot sample via gumbel-max; backward treats the sample as its
    /// soft relaxation (straight-through).
    Hard,
    /// Fully soft relaxation, rows sum to 1.
    Soft,
    /// Deterministic argmax, no noise; used at inference.
    ArgmaxEval,
}

#[derive(Clone, Debug)]
pub struct Router {
    pub proj: Tensor, // C x T
    pub bias: Tensor, // T
    pub temperature: f64,
    pub mode: RouteMode,
}

impl Router {
    pub fn prompt_count(&self) -> usize {
        self.proj.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct RoutingResult {
    /// L x T; exactly one-hot rows in Hard/ArgmaxEval mode.
    pub r: Tensor,
    /// argmax of each row of `r`.
    pub labels: Vec<usize>,
    /// L x T log-probabilities before noise.
    pub log_probs: Tensor,
}

/// Forward intermediates needed by `route_backward`.
#[derive(Clone, Debug)]
pub struct RouteCache {
    x_flat: Tensor,
    prob: Tensor, // softmax of logits = exp(log_probs)
    soft: Tensor, // soft relaxation actually used in backward
    temperature: f64,
    mode: RouteMode,
}

/// Route each position to a prompt. `rng` supplies gumbel noise; passing
/// `None` suppresses noise (ArgmaxEval never draws noise).
pub fn route_full(
    router: &Router,
    x_flat: &Tensor,
    rng: Option<&mut RngState>,
) -> Result<(RoutingResult, RouteCache)> {
    if router.temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {}",
            router.temperature
        )));
    }
    if x_flat.rank() != 2 || x_flat.shape()[1] != router.proj.shape()[0] {
        return Err(Error::Dimension(format!(
            "x {:?} vs router projection {:?}",
            x_flat.shape(),
            router.proj.shape()
        )));
    }
    let l = x_flat.shape()[0];
    let t = router.prompt_count();

    let mut logits = x_flat.matmul(&router.proj)?;
    for i in 0..l {
        for j in 0..t {
            logits.set2(i, j, logits.at2(i, j) + router.bias.data()[j]);
        }
    }
    let log_probs = logits.log_softmax_lastdim()?;
    let prob = log_probs.map(math::exp);

    // perturbed, temperature-scaled scores
    let mut z = log_probs.clone();
    if router.mode != RouteMode::ArgmaxEval {
        if let Some(rng) = rng {
            for v in z.data_mut() {
                *v += rng.gumbel();
            }
        }
    }
    let z = z.scale(1.0 / router.temperature);
    let soft = z.softmax_lastdim()?;

    let mut labels = Vec::with_capacity(l);
    for i in 0..l {
        let row = z.row(i);
        let mut best = 0;
        for j in 1..t {
            if row[j] > row[best] {
                best = j;
            }
        }
        labels.push(best);
    }

    let r = match router.mode {
        RouteMode::Soft => soft.clone(),
        RouteMode::Hard | RouteMode::ArgmaxEval => {
            let mut r = Tensor::zeros(&[l, t]);
            for (i, &lb) in labels.iter().enumerate() {
                r.set2(i, lb, 1.0);
            }
            r
        }
    };

    Ok((
        RoutingResult {
            r,
            labels,
            log_probs,
        },
        RouteCache {
            x_flat: x_flat.clone(),
            prob,
            soft,
            temperature: router.temperature,
            mode: router.mode,
        },
    ))
}

pub fn route(router: &Router, x_flat: &Tensor, rng: Option<&mut RngState>) -> Result<RoutingResult> {
    route_full(router, x_flat, rng).map(|(res, _)| res)
}

/// P = R * (M N); with one-hot rows this gathers pool rows by label.
pub fn select_prompts(pool: &PromptPool, res: &RoutingResult) -> Result<Tensor> {
    pool.validate()?;
    if res.r.shape()[1] != pool.prompt_count() {
        return Err(Error::Dimension(format!(
            "routing matrix {:?} vs pool with T={}",
            res.r.shape(),
            pool.prompt_count()
        )));
    }
    res.r.matmul(&pool.pool()?)
}

pub struct SelectGrads {
    pub m: Tensor,
    pub n: Tensor,
    pub r: Tensor,
}

pub fn select_prompts_backward(
    pool: &PromptPool,
    r: &Tensor,
    grad_p: &Tensor,
) -> Result<SelectGrads> {
    let pool_mat = pool.pool()?;
    let g_r = grad_p.matmul(&pool_mat.transpose2()?)?;
    let g_pool = r.transpose2()?.matmul(grad_p)?;
    let g_m = g_pool.matmul(&pool.n.transpose2()?)?;
    let g_n = pool.m.transpose2()?.matmul(&g_pool)?;
    Ok(SelectGrads {
        m: g_m,
        n: g_n,
        r: g_r,
    })
}

pub struct RouterGrads {
    pub proj: Tensor,
    pub bias: Tensor,
    pub x: Tensor,
}

/// Backward through routing. Hard mode uses the straight-through
/// convention: the one-hot forward sample is differentiated as its soft
/// relaxation. ArgmaxEval routing is frozen and contributes no gradient.
pub fn route_backward(router: &Router, cache: &RouteCache, grad_r: &Tensor) -> Result<RouterGrads> {
    let l = cache.x_flat.shape()[0];
    let t = router.prompt_count();
    if cache.mode == RouteMode::ArgmaxEval {
        return Ok(RouterGrads {
            proj: Tensor::zeros_like(&router.proj),
            bias: Tensor::zeros_like(&router.bias),
            x: Tensor::zeros_like(&cache.x_flat),
        });
    }
    // softmax((log_probs + g)/tau) backward to log_probs
    let mut g_lp = Tensor::zeros(&[l, t]);
    for i in 0..l {
        let s = cache.soft.row(i);
        let g = grad_r.row(i);
        let dot: f64 = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for j in 0..t {
            g_lp.set2(i, j, s[j] * (g[j] - dot) / cache.temperature);
        }
    }
    // log-softmax backward to logits
    let mut g_logits = Tensor::zeros(&[l, t]);
    for i in 0..l {
        let row_sum: f64 = g_lp.row(i).iter().sum();
        for j in 0..t {
            g_logits.set2(i, j, g_lp.at2(i, j) - cache.prob.at2(i, j) * row_sum);
        }
    }
    let g_proj = cache.x_flat.transpose2()?.matmul(&g_logits)?;
    let mut g_bias = Tensor::zeros_like(&router.bias);
    for i in 0..l {
        for j in 0..t {
            g_bias.data_mut()[j] += g_logits.at2(i, j);
        }
    }
    let g_x = g_logits.matmul(&router.proj.transpose2()?)?;
    Ok(RouterGrads {
        proj: g_proj,
        bias: g_bias,
        x: g_x,
    })
}

/// The scan of the attentive equation: identical to `selective_scan` with
/// the output matrix replaced by C + P.
pub fn attentive_scan(
    ds: &DiscreteSsm,
    c_out: &Tensor,
    d_skip: &Tensor,
    x: &Tensor,
    p: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let c_eff = c_out.add(p)?;
    ssm::selective_scan(ds, &c_eff, d_skip, x)
}

/// Gradients of `attentive_scan`; `scan.c_out` is the gradient of the
/// effective matrix C + P, which is also the gradient of P itself.
pub struct AttentiveScanGrads {
    pub scan: ScanGrads,
    pub p: Tensor,
}

pub fn attentive_scan_backward(
    ds: &DiscreteSsm,
    c_out: &Tensor,
    d_skip: &Tensor,
    x: &Tensor,
    p: &Tensor,
    grad_y: &Tensor,
) -> Result<AttentiveScanGrads> {
    let c_eff = c_out.add(p)?;
    let scan = ssm::scan_backward(ds, &c_eff, d_skip, x, grad_y)?;
    let p_grad = scan.c_out.clone();
    Ok(AttentiveScanGrads { scan, p: p_grad })
}
