//! Implementations behind each CLI subcommand. Every command returns the
//! process exit code: 0 success, 1 property failure, 2 usage/IO failure.

use std::path::{Path, PathBuf};

use assm_core::analysis;
use assm_core::model::{network_forward, ForwardCtx, ModelConfig, NetworkWeights, TaskHead};
use assm_core::train::{
    self, bicubic_baseline, evaluate_sr, synth_dataset_mixed, synth_denoise_dataset, DataKind,
    TrainConfig,
};
use assm_core::{RngState, Tensor};

use crate::checks::{run_checks, CheckOpts};
use crate::csvio::write_csv;
use crate::error::{Result, ToolError};
use crate::weights::{load_weights, save_weights};

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn cmd_check(filter: Option<&str>, fault: Option<&str>, seed: u64) -> Result<i32> {
    let opts = CheckOpts {
        seed,
        fault: fault.map(|s| s.to_string()),
    };
    let outcomes = run_checks(filter, &opts);
    if outcomes.is_empty() {
        return Err(ToolError::Usage(format!(
            "filter {filter:?} matches no property; known: {}",
            crate::checks::CHECK_NAMES.join(", ")
        )));
    }
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed { "pass" } else { "FAIL" };
        println!("{status}  {:<22} {}", o.name, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    println!("{} properties, {} failed", outcomes.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

pub fn cmd_train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out: &Path,
    seed: u64,
    warm_start: Option<&Path>,
) -> Result<i32> {
    ensure_out_dir(out)?;
    let initial = warm_start.map(|p| load_weights(p, model_cfg)).transpose()?;
    let n_train = (train_cfg.steps * train_cfg.batch).clamp(64, 2000);
    let (data, val) = match model_cfg.task {
        TaskHead::SuperResolution => (
            synth_dataset_mixed(n_train, train_cfg.patch, train_cfg.scale, seed ^ 0xda7a)?,
            synth_dataset_mixed(16, train_cfg.patch, train_cfg.scale, seed ^ 0x7a1)?,
        ),
        TaskHead::Denoise => (
            synth_denoise_dataset(
                DataKind::GaussianTextures,
                n_train,
                train_cfg.patch,
                15.0,
                seed ^ 0xda7a,
            )?,
            synth_denoise_dataset(DataKind::GaussianTextures, 16, train_cfg.patch, 15.0, seed ^ 0x7a1)?,
        ),
    };

    let eval_every = (train_cfg.steps / 10).max(1);
    let ckpt_every = (train_cfg.steps / 4).max(1);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut ckpt_err: Option<ToolError> = None;
    let mut on_step = |row: &train::TrainLogRow, w: &NetworkWeights| {
        let psnr_cell = if row.step % eval_every == 0 {
            match evaluate_sr(model_cfg, w, &val) {
                Ok(p) => format!("{p:.4}"),
                Err(_) => String::new(),
            }
        } else {
            String::new()
        };
        rows.push(vec![
            row.step.to_string(),
            format!("{:.8}", row.loss),
            format!("{:.3e}", row.lr),
            psnr_cell,
        ]);
        if row.step % ckpt_every == 0 && ckpt_err.is_none() {
            let p = out.join(format!("checkpoint_{:06}.ckpt", row.step));
            if let Err(e) = save_weights(&p, w) {
                ckpt_err = Some(e);
            }
        }
    };
    let result = train::train_sr_from(model_cfg, train_cfg, &data, initial, Some(&mut on_step))?;
    drop(on_step);
    if let Some(e) = ckpt_err {
        return Err(e);
    }
    save_weights(&out.join("final.ckpt"), &result.weights)?;
    write_csv(
        &out.join("train_log.csv"),
        &["step", "loss", "lr", "psnr_val"],
        &rows,
    )?;
    let final_psnr = evaluate_sr(model_cfg, &result.weights, &val)?;
    println!("final validation PSNR: {final_psnr:.3} dB");
    if matches!(model_cfg.task, TaskHead::SuperResolution) {
        let base = bicubic_baseline(&val, train_cfg.scale)?;
        println!("bicubic baseline:      {base:.3} dB");
    }
    println!("wrote {}", out.join("train_log.csv").display());
    Ok(0)
}

pub fn cmd_infer(
    image: &Path,
    checkpoint: &Path,
    model_cfg: &ModelConfig,
    out: &Path,
    ground_truth: Option<&Path>,
    seed: u64,
) -> Result<i32> {
    ensure_out_dir(out)?;
    let lq = crate::image::read_image(image)?;
    let weights = load_weights(checkpoint, model_cfg)?;
    let mut ctx = ForwardCtx::eval(seed);
    let (pred, _) = network_forward(&lq, model_cfg, &weights, &mut ctx)?;
    let pred = train::clamp01(&pred);
    let ppm = out.join("restored.ppm");
    let png = out.join("restored.png");
    crate::image::write_ppm(&ppm, &pred)?;
    crate::image::write_png(&png, &pred)?;
    println!(
        "restored {}x{} -> {}x{}; wrote {} and {}",
        lq.shape()[0],
        lq.shape()[1],
        pred.shape()[0],
        pred.shape()[1],
        ppm.display(),
        png.display()
    );
    if let Some(gt_path) = ground_truth {
        let gt = crate::image::read_image(gt_path)?;
        let psnr = train::psnr(&pred, &gt, true)?;
        let ssim = train::ssim(&pred, &gt, true)?;
        println!("PSNR {psnr:.3} dB, SSIM {ssim:.4}");
    }
    Ok(0)
}

pub fn cmd_decay(
    model_cfg: &ModelConfig,
    checkpoint: Option<&Path>,
    out: &Path,
    seed: u64,
) -> Result<i32> {
    ensure_out_dir(out)?;
    let weights = match checkpoint {
        Some(p) => load_weights(p, model_cfg)?,
        None => {
            let mut rng = RngState::new(seed);
            NetworkWeights::init(model_cfg, &mut rng)?
        }
    };
    let mut rng = RngState::new(seed ^ 0x1);
    let mut lq = Tensor::zeros(&[24, 24, 3]);
    rng.fill_uniform(lq.data_mut(), 0.0, 1.0);
    let k_max = 32;
    let rep = analysis::decay_report(model_cfg, &weights, &lq, k_max, seed)?;

    let mut rows = Vec::new();
    for (block, prof) in rep.profiles.iter().enumerate() {
        for (k, &mag) in prof.iter().enumerate() {
            rows.push(vec![block.to_string(), k.to_string(), format!("{mag:.12e}")]);
        }
    }
    let profile_path = out.join("decay_profile.csv");
    write_csv(&profile_path, &["block", "distance", "mean_coefficient_magnitude"], &rows)?;

    let grid = analysis::gaussian_kde(&rep.a_bar_values, 0.0, 1.1, 221)?;
    let kde_rows: Vec<Vec<String>> = grid
        .iter()
        .map(|&(x, d)| vec![format!("{x:.6}"), format!("{d:.12e}")])
        .collect();
    let kde_path = out.join("decay_kde.csv");
    write_csv(&kde_path, &["decay_factor", "density"], &kde_rows)?;

    println!(
        "wrote {} ({} blocks x {k_max} distances) and {} ({} decay factors)",
        profile_path.display(),
        rep.profiles.len(),
        kde_path.display(),
        rep.a_bar_values.len()
    );
    Ok(0)
}

pub fn cmd_scan_cost(
    model_cfg: &ModelConfig,
    directions: usize,
    out: Option<&Path>,
    seed: u64,
) -> Result<i32> {
    let rep = analysis::scan_cost_report(model_cfg, 32, 32, directions, seed)?;
    println!("{:<26} {:>16}", "module", "MACs");
    for e in &rep.table.entries {
        println!("{:<26} {:>16}", e.name, e.macs);
    }
    println!("{:<26} {:>16}", "total", rep.table.total());
    println!(
        "scan-stage MACs: {} ({directions} directions) vs {} (semantic single scan)",
        rep.table.scan_stage, rep.baseline_scan_stage
    );
    println!("ratio: {:.4}", rep.ratio);
    println!("instrumented single-scan MACs: {}", rep.measured_single_scan);
    if let Some(out) = out {
        ensure_out_dir(out)?;
        let rows: Vec<Vec<String>> = rep
            .table
            .entries
            .iter()
            .map(|e| vec![e.name.clone(), e.macs.to_string()])
            .collect();
        let p = out.join("mac_table.csv");
        write_csv(&p, &["module", "macs"], &rows)?;
        println!("wrote {}", p.display());
    }
    Ok(0)
}

pub fn cmd_count_params(model_cfg: &ModelConfig) -> Result<i32> {
    let table = assm_core::model::count_params(model_cfg)?;
    let total: usize = table.iter().map(|(_, n)| n).sum();
    for (name, n) in &table {
        println!("{name:<40} {n:>10}");
    }
    println!("{:<40} {total:>10}", "total");
    Ok(0)
}

pub fn cmd_export_plan(
    image: &Path,
    checkpoint: Option<&Path>,
    model_cfg: &ModelConfig,
    out: &Path,
    seed: u64,
) -> Result<i32> {
    ensure_out_dir(out)?;
    let lq = crate::image::read_image(image)?;
    let weights = match checkpoint {
        Some(p) => load_weights(p, model_cfg)?,
        None => {
            let mut rng = RngState::new(seed);
            NetworkWeights::init(model_cfg, &mut rng)?
        }
    };
    let mut ctx = ForwardCtx::eval(seed);
    let (_, cache) = network_forward(&lq, model_cfg, &weights, &mut ctx)?;
    let plans = cache.routing_plans();
    let (labels, plan) = plans
        .first()
        .ok_or_else(|| ToolError::Config("model has no routed blocks".to_string()))?;
    let wp = lq.shape()[1].div_ceil(model_cfg.window) * model_cfg.window;
    let mut rows = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        rows.push(vec![
            (i / wp).to_string(),
            (i % wp).to_string(),
            label.to_string(),
            plan.perm[i].to_string(),
        ]);
    }
    let p = out.join("routing_plan.csv");
    write_csv(&p, &["row", "col", "label", "perm_index"], &rows)?;
    println!("wrote {} ({} positions)", p.display(), rows.len());
    Ok(0)
}

/// Applies the shared CLI overrides on top of file-derived configs.
pub fn apply_overrides(
    model_cfg: &mut ModelConfig,
    train_cfg: Option<&mut TrainConfig>,
    scale: Option<usize>,
    steps: Option<usize>,
) -> Result<()> {
    if let Some(s) = scale {
        model_cfg.scale = s;
    }
    if let Some(t) = train_cfg {
        if let Some(s) = scale {
            t.scale = s;
        }
        if let Some(n) = steps {
            t.steps = n;
            t.milestones = train::default_milestones(n);
        }
        t.validate()?;
    }
    model_cfg.validate()?;
    Ok(())
}

/// Shared `--config`-or-default loader.
pub fn load_configs(config: Option<&PathBuf>, seed: u64) -> Result<(ModelConfig, TrainConfig)> {
    let raw = match config {
        Some(p) => crate::config::load_config(p)?,
        None => crate::config::RawConfig::default(),
    };
    let m = crate::config::model_config(&raw)?;
    let t = crate::config::train_config(&raw, seed)?;
    Ok((m, t))
}
