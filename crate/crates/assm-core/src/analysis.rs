//! Cost accounting and distribution analysis: analytic multiply-accumulate
//! tables, scan-direction cost ratios with an instrumented cross-check,
//! and gaussian kernel density estimation of the decay factors.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ase::RouteMode;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{
    network_forward, scan_mac_count, ForwardCtx, ModelConfig, NetworkWeights,
};
use crate::rng::RngState;
use crate::ssm;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct MacEntry {
    pub name: String,
    pub macs: u64,
}

#[derive(Clone, Debug)]
pub struct MacTable {
    pub entries: Vec<MacEntry>,
    /// scan-stage subtotal: the part that scales with direction count
    pub scan_stage: u64,
}

impl MacTable {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.macs).sum()
    }
}

/// Analytic multiply-accumulate count of one forward at input H x W with
/// `directions` scan passes per ASSM. Projections are shared across
/// directions; only the recurrent stage scales with the count.
pub fn mac_table(cfg: &ModelConfig, h: usize, w: usize, directions: usize) -> Result<MacTable> {
    cfg.validate()?;
    if ![1, 2, 4].contains(&directions) {
        return Err(Error::Config(format!(
            "direction count {directions} not in {{1, 2, 4}}"
        )));
    }
    let hp = h.div_ceil(cfg.window) * cfg.window;
    let wp = w.div_ceil(cfg.window) * cfg.window;
    let l = (hp * wp) as u64;
    let c = cfg.channels as u64;
    let d = cfg.state_dim as u64;
    let t = cfg.prompt_count as u64;
    let r = cfg.prompt_rank as u64;
    let ws = (cfg.window * cfg.window) as u64;
    let exp = cfg.ffn_expansion as u64;
    let blocks = (cfg.groups * cfg.blocks_per_group) as u64;

    let mut entries = Vec::new();
    let mut push = |name: &str, macs: u64| {
        entries.push(MacEntry {
            name: String::from(name),
            macs,
        })
    };

    push("shallow_conv", l * c * 3 * 9);
    push("mhsa_projections", blocks * 4 * l * c * c);
    push("mhsa_attention", blocks * 2 * l * ws * c);
    push("ffn", blocks * 2 * 2 * l * c * c * exp);
    push("assm_positional_encoding", blocks * l * c * 9);
    push("assm_routing", blocks * l * c * t);
    push("assm_prompt_pool", blocks * (t * r * d + l * t * d));
    push("assm_projections", blocks * (l * c * c + 2 * l * c * d));
    let scan_stage = blocks * directions as u64 * scan_mac_count(l as usize, c as usize, d as usize);
    push("assm_scan_stage", scan_stage);
    push("assm_output_projection", blocks * l * c * c);
    push("group_convs", cfg.groups as u64 * l * c * c * 9);
    push("body_conv", l * c * c * 9);
    let head_out = match cfg.task {
        crate::model::TaskHead::SuperResolution => 3 * (cfg.scale * cfg.scale) as u64,
        crate::model::TaskHead::Denoise => 3,
    };
    push("head_conv", l * head_out * c * 9);

    Ok(MacTable {
        entries,
        scan_stage,
    })
}

#[derive(Clone, Debug)]
pub struct ScanCostReport {
    pub directions: usize,
    pub table: MacTable,
    pub baseline_scan_stage: u64,
    /// scan-stage MACs of `directions` scans over the single-scan baseline
    pub ratio: f64,
    /// scan-stage MACs actually executed by an instrumented forward
    /// (single semantic scan)
    pub measured_single_scan: u64,
}

/// Compares the SSM-stage cost of an n-direction variant against the
/// single semantic scan, cross-checked by running one real forward.
pub fn scan_cost_report(
    cfg: &ModelConfig,
    h: usize,
    w: usize,
    directions: usize,
    seed: u64,
) -> Result<ScanCostReport> {
    let table = mac_table(cfg, h, w, directions)?;
    let baseline = mac_table(cfg, h, w, 1)?;

    let mut rng = RngState::new(seed);
    let weights = NetworkWeights::init(cfg, &mut rng)?;
    let mut lq = Tensor::zeros(&[h, w, 3]);
    rng.fill_uniform(lq.data_mut(), 0.0, 1.0);
    let mut ctx = ForwardCtx::new(RouteMode::ArgmaxEval, RngState::new(seed));
    network_forward(&lq, cfg, &weights, &mut ctx)?;

    Ok(ScanCostReport {
        directions,
        ratio: table.scan_stage as f64 / baseline.scan_stage as f64,
        baseline_scan_stage: baseline.scan_stage,
        table,
        measured_single_scan: ctx.scan_macs,
    })
}

// ------------------------------------------------------------ decay stats

#[derive(Clone, Debug)]
pub struct DecayReport {
    /// per ASSM block, mean |C Abar^k Bbar| for k = 0..k_max
    pub profiles: Vec<Vec<f64>>,
    /// every decrete decay factor observed in the forward
    pub a_bar_values: Vec<f64>,
}

/// Runs one forward and harvests the discrete decay factors and the
/// per-block distance/coefficient profiles.
pub fn decay_report(
    cfg: &ModelConfig,
    weights: &NetworkWeights,
    lq: &Tensor,
    k_max: usize,
    seed: u64,
) -> Result<DecayReport> {
    let mut ctx = ForwardCtx::new(RouteMode::ArgmaxEval, RngState::new(seed));
    let (_, cache) = network_forward(lq, cfg, weights, &mut ctx)?;
    let mut profiles = Vec::new();
    let mut a_bar_values = Vec::new();
    for (ds, c_out) in cache.scan_states() {
        let prof = ssm::decay_profile(ds, c_out, k_max)?;
        profiles.push(prof.data().to_vec());
        a_bar_values.extend_from_slice(ds.a_bar.data());
    }
    Ok(DecayReport {
        profiles,
        a_bar_values,
    })
}

// --------------------------------------------------------------------- kde

/// Scott's rule bandwidth: sigma * n^(-1/5).
pub fn scott_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sigma = math::sqrt(var);
    let h = sigma * math::exp(-0.2 * math::ln(n));
    if h > 0.0 {
        h
    } else {
        // degenerate sample sets still get a usable kernel width
        1e-3
    }
}

/// Gaussian kernel density estimate evaluated on a uniform grid over
/// [lo, hi]; integrates to ~1 over the real line.
pub fn gaussian_kde(samples: &[f64], lo: f64, hi: f64, points: usize) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Domain("kde of an empty sample set".into()));
    }
    if points < 2 || hi <= lo {
        return Err(Error::Config(format!(
            "bad kde grid [{lo}, {hi}] with {points} points"
        )));
    }
    let h = scott_bandwidth(samples);
    let norm = 1.0 / (samples.len() as f64 * h * math::sqrt(2.0 * core::f64::consts::PI));
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let mut dens = 0.0;
        for &s in samples {
            let z = (x - s) / h;
            dens += math::exp(-0.5 * z * z);
        }
        out.push((x, dens * norm));
    }
    Ok(out)
}
