//! End-to-end run: synth → analyze → permute → train → denoise → unmix →
//! metrics, with a single JSON report.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};
use spend_core::cubeio::save_cube;
use spend_core::metrics::{cube_mse, frc_resolution, psnr, snr, spectral_distortion_map, ssim};
use spend_core::noisestats::analyze;
use spend_core::permute::{save_pairs, split_permute};
use spend_core::rng::derive_seed;
use spend_core::synth::{truth_rois, NoiseSpec, PhantomSpec};
use spend_core::unmix::{reshape_cube, spectral_phasor, UnmixResult};
use spend_nnet::{predict, save_model};

use crate::commands::{
    resolve_axis, save_truth, save_unmix, synth_cubes, train_pairs, unmix_cube, write_report, TrainSummary,
};
use crate::config::{read_config, PipelineConfig, TrainFile};
use crate::io::{write_json, Roi};
use crate::preview::{mean_image, save_frc, save_loss_curve, save_mean_image, save_phasor_scatter};

/// Substream keys for the per-stage seeds.
const NOISE_KEY: u64 = 1;
const INIT_KEY: u64 = 2;
const TRAIN_KEY: u64 = 3;

pub const REPORT_VERSION: u64 = 1;

/// A pipeline stage failed; outputs written before it are kept.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report: Value,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
struct Check {
    name: &'static str,
    value: Value,
    limit: Value,
    passed: bool,
}

/// Root-mean-square difference between estimated and true concentrations.
fn concentration_rmse(est: &UnmixResult, truth: &UnmixResult) -> f64 {
    let d = &est.c - &truth.c;
    (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    report: Map<String, Value>,
}

impl Run<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn section(&mut self, name: &str, value: Value) {
        self.report.insert(name.to_string(), value);
    }

    fn save_report(&self) -> Result<()> {
        write_json(&self.out("report.json"), &Value::Object(self.report.clone()))
    }

    fn stage<T>(&mut self, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T, StageError> {
        log::info!("stage {stage}");
        f(self).map_err(|source| {
            self.section("failure", json!({ "stage": stage, "error": format!("{source:#}") }));
            if let Err(e) = self.save_report() {
                log::error!("could not write the partial report: {e:#}");
            }
            StageError { stage, source }
        })
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, StageError> {
    let mut run = Run {
        cfg,
        report: Map::new(),
    };
    run.section("version", json!(REPORT_VERSION));
    run.section("seed", json!(cfg.seed));

    let (spec, noise, tf) = run.stage("config", |r| {
        r.cfg.check_inputs()?;
        let spec: PhantomSpec = read_config(&r.cfg.phantom)?;
        let mut noise: NoiseSpec = read_config(&r.cfg.noise)?;
        let mut tf: TrainFile = read_config(&r.cfg.train)?;
        noise.seed = derive_seed(r.cfg.seed, &[NOISE_KEY]);
        tf.model.seed = derive_seed(r.cfg.seed, &[INIT_KEY]);
        tf.train.seed = derive_seed(r.cfg.seed, &[TRAIN_KEY]);
        std::fs::create_dir_all(&r.cfg.out_dir).with_context(|| format!("cannot create {}", r.cfg.out_dir.display()))?;
        // paths are left out so runs in different directories compare equal
        r.section(
            "config",
            json!({
                "axis": r.cfg.axis,
                "unmix": r.cfg.unmix,
                "roi_fraction": r.cfg.roi_fraction,
                "thresholds": r.cfg.thresholds,
                "phantom": spec,
                "noise": noise,
                "model": tf.model,
                "train": tf.train,
            }),
        );
        Ok((spec, noise, tf))
    })?;

    let (clean, noisy, truth, roi) = run.stage("synth", |r| {
        let (mut clean, mut noisy, truth) = synth_cubes(&spec, &noise)?;
        clean.seed = Some(r.cfg.seed);
        noisy.seed = Some(r.cfg.seed);
        save_cube(&clean, r.out("clean"))?;
        save_cube(&noisy, r.out("noisy"))?;
        save_truth(&truth, &clean, &r.out("truth"))?;
        let (signal, background) = truth_rois(&truth, r.cfg.roi_fraction)?;
        let roi = Roi { signal, background };
        write_json(&r.out("roi.json"), &roi)?;
        r.section(
            "synth",
            json!({
                "dims": clean.dims(),
                "components": truth.k,
                "signal_pixels": roi.signal.len(),
                "background_pixels": roi.background.len(),
                "checksum_clean": spend_core::cubeio::checksum(&clean),
                "checksum_noisy": spend_core::cubeio::checksum(&noisy),
            }),
        );
        Ok((clean, noisy, truth, roi))
    })?;

    let axis = run.stage("analyze", |r| {
        let blind = analyze(&noisy, None, spend_core::noisestats::DEFAULT_TILE)?;
        write_report(&blind, &r.out("analysis/noise_report.json"))?;
        let (axis, _) = resolve_axis(&r.cfg.axis, &noisy)?;
        let fit = spend_core::noisestats::linear_fit(&blind.noise_vs_signal).ok();
        r.section(
            "analyze",
            json!({
                "pcc": blind.pcc,
                "fluctuation": blind.fluctuation,
                "recommended_axis": blind.selected_axis,
                "noise_source": blind.noise_source,
                "noise_vs_signal_fit": fit.map(|(slope, intercept)| json!({ "slope": slope, "intercept": intercept })),
                "selected_axis": axis,
                "axis_choice": r.cfg.axis,
            }),
        );
        Ok(axis)
    })?;

    let pairs = run.stage("permute", |r| {
        let pairs = split_permute(&noisy, axis)?;
        save_pairs(&pairs, r.out("pairs/input"), r.out("pairs/target"), r.out("pairs/meta.json"))?;
        r.section(
            "permute",
            json!({ "axis": axis, "pairs": pairs.len(), "n_original": pairs.n_original, "parity_dropped": pairs.parity_dropped }),
        );
        Ok(pairs)
    })?;

    let model = run.stage("train", |r| {
        let out = train_pairs(&pairs, &tf)?;
        save_model(&out.model, r.cfg.model_path())?;
        let summary = TrainSummary::of(&out);
        let mut section = to_value(&summary)?;
        section["history"] = to_value(&out.model.history)?;
        section["normalization"] = to_value(&out.model.normalization)?;
        r.section("train", section);
        if r.cfg.previews {
            save_loss_curve(&out.model.history, &r.out("previews/loss.png"))?;
        }
        Ok(out.model)
    })?;

    let denoised = run.stage("denoise", |r| {
        let mut den = predict(&model, &noisy)?;
        den.seed = Some(r.cfg.seed);
        save_cube(&den, r.out("denoised"))?;
        r.section("denoise", json!({ "checksum": spend_core::cubeio::checksum(&den) }));
        Ok(den)
    })?;

    run.stage("unmix", |r| {
        let u = &r.cfg.unmix;
        let mcr_iters = spend_core::unmix::McrOptions::default().max_iter;
        let mut section = Map::new();
        section.insert("method".into(), to_value(&u.method)?);
        section.insert("lambda".into(), json!(u.lambda));
        for (name, cube) in [("raw", &noisy), ("denoised", &denoised)] {
            let res = unmix_cube(cube, u.method, &truth.s, u.lambda, mcr_iters, 1, 0.05)?;
            if name == "denoised" {
                save_unmix(&res, cube, &r.out("unmix"), &r.out("unmix/spectra.csv"))?;
            }
            section.insert(
                name.into(),
                json!({
                    "relative_residual": res.relative_residual(&reshape_cube(cube)),
                    "concentration_rmse": concentration_rmse(&res, &truth),
                    "iterations": res.iterations,
                    "converged": res.converged,
                }),
            );
        }
        r.section("unmix", Value::Object(section));
        Ok(())
    })?;

    let passed = run.stage("metrics", |r| {
        let mse_raw = cube_mse(&noisy, &clean)?;
        let mse_den = cube_mse(&denoised, &clean)?;
        let snr_raw = snr(&noisy, &roi.signal, &roi.background)?;
        let snr_den = snr(&denoised, &roi.signal, &roi.background)?;
        let snr_gain = snr_den.ratio() / snr_raw.ratio();
        let dist_raw = spectral_distortion_map(&noisy, &clean)?.mean();
        let dist_den = spectral_distortion_map(&denoised, &clean)?.mean();
        let (ic, ir, id) = (mean_image(&clean)?, mean_image(&noisy)?, mean_image(&denoised)?);
        let frc_raw = frc_resolution(&ir, &ic)?;
        let frc_den = frc_resolution(&id, &ic)?;
        let mse_ratio = mse_den / mse_raw;
        let dist_ratio = dist_den / dist_raw;

        let t = &r.cfg.thresholds;
        let mut checks = Vec::new();
        if let Some(min) = t.snr_gain_min {
            checks.push(Check { name: "snr_gain", value: json!(snr_gain), limit: json!({ "min": min }), passed: snr_gain >= min });
        }
        if let Some(max) = t.mse_ratio_max {
            checks.push(Check { name: "mse_ratio", value: json!(mse_ratio), limit: json!({ "max": max }), passed: mse_ratio <= max });
        }
        if let Some(max) = t.distortion_ratio_max {
            checks.push(Check { name: "distortion_ratio", value: json!(dist_ratio), limit: json!({ "max": max }), passed: dist_ratio <= max });
        }
        if let Some(want) = t.selected_axis {
            checks.push(Check { name: "selected_axis", value: json!(axis), limit: json!({ "equals": want }), passed: axis == want });
        }
        let passed = checks.iter().all(|c| c.passed);

        r.section(
            "metrics",
            json!({
                "snr_raw": snr_raw,
                "snr_denoised": snr_den,
                "snr_gain": snr_gain,
                "mse_raw": mse_raw,
                "mse_denoised": mse_den,
                "mse_ratio": mse_ratio,
                "distortion_raw": dist_raw,
                "distortion_denoised": dist_den,
                "distortion_ratio": dist_ratio,
                "ssim_raw": ssim(&ir, &ic)?,
                "ssim_denoised": ssim(&id, &ic)?,
                "psnr_raw": psnr(&ic, &ir)?,
                "psnr_denoised": psnr(&ic, &id)?,
                "frc_cutoff_raw": frc_raw.cutoff_frequency,
                "frc_cutoff_denoised": frc_den.cutoff_frequency,
            }),
        );
        r.section("snr_gain", json!(snr_gain));
        r.section("selected_axis", json!(axis));
        r.section("checks", to_value(&checks)?);
        r.section("passed", json!(passed));

        if r.cfg.previews {
            save_mean_image(&clean, &r.out("previews/clean.png"))?;
            save_mean_image(&noisy, &r.out("previews/noisy.png"))?;
            save_mean_image(&denoised, &r.out("previews/denoised.png"))?;
            save_frc(&[&frc_raw, &frc_den], &r.out("previews/frc.png"))?;
            let map = spectral_phasor(&denoised, 1)?;
            let (_, ny) = truth.dims.unwrap_or((0, 0));
            let mut groups = vec![Vec::new(); truth.k];
            for (i, row) in truth.c.rows().into_iter().enumerate() {
                if let Some((k, _)) = row
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .max_by(|a, b| a.1.total_cmp(b.1))
                {
                    groups[k].push((i / ny, i % ny));
                }
            }
            save_phasor_scatter(&map, &groups, &r.out("previews/phasor.png"))?;
        }
        r.save_report()?;
        Ok(passed)
    })?;

    Ok(PipelineOutcome {
        report: Value::Object(run.report),
        passed,
    })
}

/// Loads `path` and runs it, mapping config errors to the `config` stage.
pub fn run_pipeline_file(path: &Path) -> Result<PipelineOutcome, StageError> {
    let cfg = PipelineConfig::load(path).map_err(|source| StageError { stage: "config", source })?;
    run_pipeline(&cfg)
}
