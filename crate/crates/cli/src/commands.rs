//! One function per subcommand. Each reads its inputs, makes the library
//! call and writes the result, nothing more.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use ndarray::{Array2, Array3};
use serde::Serialize;
use spend_core::baseline::{arpls, ArplsConfig};
use spend_core::cubeio::{cube_paths, load_cube, save_cube};
use spend_core::metrics::{cube_mse, frc_resolution, psnr, snr, spectral_distortion_map, ssim, FrcCurve};
use spend_core::noisestats::{analyze, select_permutation_axis, NoiseReport, DEFAULT_TILE};
use spend_core::permute::{load_pairs, save_pairs, split_permute, PairSet};
use spend_core::synth::{corrupt, make_phantom, truth_rois, NoiseSpec, PhantomSpec};
use spend_core::unmix::{
    lasso_unmix, mcr_als, phasor_select, reshape_cube, spectral_phasor, McrOptions, UnmixResult,
};
use spend_core::{Axis, HyperCube};
use spend_nnet::{build_model, load_model, predict, predict_along, save_model, train, TrainOutcome};

use crate::config::{read_config, TrainFile, UnmixMethod};
use crate::io::{read_json, read_spectra, write_curve, write_json, write_spectra, Roi, SpectraTable};
use crate::preview::{mean_image, save_image};

/// `auto` or an axis name.
pub fn resolve_axis(choice: &str, cube: &HyperCube) -> Result<(Axis, Option<NoiseReport>)> {
    if choice == "auto" {
        let (axis, report) = select_permutation_axis(cube)?;
        Ok((axis, Some(report)))
    } else {
        let axis: Axis = choice
            .parse()
            .map_err(|e| anyhow::anyhow!("bad axis {choice:?}: {e}"))?;
        Ok((axis, None))
    }
}

/// Sibling file of a cube or report path: `dir/name.json` → `dir/name_{suffix}`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let (json, _) = cube_paths(path);
    let stem = json.with_extension("");
    let mut s = stem.into_os_string();
    s.push("_");
    s.push(suffix);
    s.into()
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Phantom description (versioned JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Noise description (versioned JSON).
    #[arg(long)]
    pub noise: PathBuf,
    /// Overrides the seed in the noise file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_clean: PathBuf,
    #[arg(long)]
    pub out_noisy: PathBuf,
    /// Truth concentrations as an `(x, y, K)` cube; spectra go to
    /// `<name>_spectra.csv` next to it.
    #[arg(long)]
    pub out_truth: PathBuf,
    /// Optional signal/background ROI derived from the truth.
    #[arg(long)]
    pub out_roi: Option<PathBuf>,
    /// Signal ROI threshold as a fraction of the peak total concentration.
    #[arg(long, default_value_t = 0.5)]
    pub roi_fraction: f64,
}

/// Concentrations as an `(x, y, K)` cube.
pub fn concentration_cube(result: &UnmixResult) -> Result<HyperCube> {
    let (nx, ny) = match result.dims {
        Some(d) => d,
        None => bail!("unmixing result has no spatial dimensions"),
    };
    let c = &result.c;
    Ok(HyperCube::new(Array3::from_shape_fn((nx, ny, result.k), |(x, y, k)| {
        c[[x * ny + y, k]] as f32
    }))?)
}

pub fn save_truth(truth: &UnmixResult, clean: &HyperCube, path: &Path) -> Result<()> {
    let mut cube = concentration_cube(truth)?;
    cube.seed = clean.seed;
    cube.pixel_size = clean.pixel_size;
    save_cube(&cube, path)?;
    let table = SpectraTable::new(truth.s.clone(), clean.wavenumbers.as_deref())?;
    write_spectra(&sibling(path, "spectra.csv"), &table)
}

pub fn synth_cubes(spec: &PhantomSpec, noise: &NoiseSpec) -> Result<(HyperCube, HyperCube, UnmixResult)> {
    let (mut clean, truth) = make_phantom(spec)?;
    clean.seed = Some(noise.seed);
    let noisy = corrupt(&clean, noise)?;
    Ok((clean, noisy, truth))
}

pub fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let spec: PhantomSpec = read_config(&a.spec)?;
    let mut noise: NoiseSpec = read_config(&a.noise)?;
    if let Some(seed) = a.seed {
        noise.seed = seed;
    }
    let (clean, noisy, truth) = synth_cubes(&spec, &noise)?;
    save_cube(&clean, &a.out_clean)?;
    save_cube(&noisy, &a.out_noisy)?;
    save_truth(&truth, &clean, &a.out_truth)?;
    if let Some(p) = &a.out_roi {
        let (signal, background) = truth_rois(&truth, a.roi_fraction)?;
        write_json(p, &Roi { signal, background })?;
    }
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// NoiseReport as JSON; PSD curves go to `<name>_psd_<axis>.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Clean or denoised estimate; without it the noise is the residual of
    /// a 5×5 median filter.
    #[arg(long)]
    pub signal: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TILE)]
    pub tile: usize,
}

pub fn write_report(report: &NoiseReport, out: &Path) -> Result<()> {
    write_json(out, report)?;
    for (axis, psd) in &report.psd {
        write_curve(&sibling(out, &format!("psd_{axis}.csv")), ["frequency", "power"], psd)?;
    }
    Ok(())
}

pub fn analyze_cmd(a: &AnalyzeArgs) -> Result<NoiseReport> {
    let cube = load_cube(&a.input)?;
    let signal = a.signal.as_ref().map(load_cube).transpose()?;
    let report = analyze(&cube, signal.as_ref(), a.tile)?;
    write_report(&report, &a.out)?;
    Ok(report)
}

#[derive(Args, Debug, Clone)]
pub struct PermuteArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// x, y, w or auto (chosen by noise analysis).
    #[arg(long, default_value = "auto")]
    pub axis: String,
    #[arg(long)]
    pub out_input: PathBuf,
    #[arg(long)]
    pub out_target: PathBuf,
    #[arg(long)]
    pub out_meta: PathBuf,
}

pub fn permute_cmd(a: &PermuteArgs) -> Result<PairSet> {
    let cube = load_cube(&a.input)?;
    let (axis, _) = resolve_axis(&a.axis, &cube)?;
    log::info!("permuting along {axis}");
    let pairs = split_permute(&cube, axis)?;
    save_pairs(&pairs, &a.out_input, &a.out_target, &a.out_meta)?;
    Ok(pairs)
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Pair metadata written by `permute`. Without it the stacks are taken
    /// as an ω permutation.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Model and optimizer settings (versioned JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub diverged_at: Option<usize>,
    pub param_count: usize,
    pub validation_frames: Vec<usize>,
}

impl TrainSummary {
    pub fn of(out: &TrainOutcome) -> Self {
        Self {
            epochs_run: out.model.history.len(),
            best_epoch: out.best_epoch,
            best_val_loss: out
                .model
                .history
                .iter()
                .find(|r| r.epoch == out.best_epoch)
                .map(|r| r.val_loss),
            diverged_at: out.diverged_at,
            param_count: out.model.param_count(),
            validation_frames: out.validation_frames.clone(),
        }
    }
}

fn load_training_pairs(a: &TrainArgs) -> Result<PairSet> {
    if let Some(meta) = &a.meta {
        return Ok(load_pairs(&a.input, &a.target, meta)?);
    }
    let input = load_cube(&a.input)?;
    let target = load_cube(&a.target)?;
    let n = input.extent(Axis::W);
    if n % 2 == 1 {
        bail!("pair stacks have an odd ω extent {n}; pass --meta");
    }
    let pairs = PairSet {
        input,
        target,
        axis: Axis::W,
        n_original: n,
        parity_dropped: false,
        augmented: false,
    };
    pairs.check()?;
    Ok(pairs)
}

pub fn train_pairs(pairs: &PairSet, tf: &TrainFile) -> Result<TrainOutcome> {
    let model = build_model(&tf.model)?;
    let out = train(&model, pairs, &tf.train)?;
    if let Some(e) = out.diverged_at {
        log::warn!("training diverged at epoch {e}; keeping the best weights before it");
    }
    Ok(out)
}

pub fn train_cmd(a: &TrainArgs) -> Result<TrainSummary> {
    let tf: TrainFile = read_config(&a.config)?;
    let pairs = load_training_pairs(a)?;
    let out = train_pairs(&pairs, &tf)?;
    save_model(&out.model, &a.out)?;
    Ok(TrainSummary::of(&out))
}

#[derive(Args, Debug, Clone)]
pub struct DenoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Frames are taken perpendicular to this axis; defaults to the axis
    /// the model was trained on.
    #[arg(long)]
    pub axis: Option<Axis>,
}

pub fn denoise_cmd(a: &DenoiseArgs) -> Result<HyperCube> {
    let cube = load_cube(&a.input)?;
    let model = load_model(&a.model)?;
    let out = match a.axis {
        Some(axis) => predict_along(&model, &cube, axis)?,
        None => predict(&model, &cube)?,
    };
    save_cube(&out, &a.out)?;
    Ok(out)
}

#[derive(Args, Debug, Clone)]
pub struct UnmixArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "lasso")]
    pub method: UnmixMethod,
    /// Reference spectra: fixed endmembers for lasso, initial guess for mcr,
    /// phasor cluster centres for phasor.
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Directory for the concentration cube and per-component PNG maps.
    #[arg(long)]
    pub out_c: PathBuf,
    #[arg(long)]
    pub out_s: PathBuf,
    #[arg(long, default_value_t = McrOptions::default().max_iter)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1)]
    pub harmonic: usize,
    /// Half side of the square phasor window around each reference.
    #[arg(long, default_value_t = 0.05)]
    pub radius: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnmixSummary {
    pub method: UnmixMethod,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
    pub collapsed: Vec<usize>,
}

/// Phasor of a single spectrum.
pub fn spectrum_phasor(spectrum: &[f64], harmonic: usize) -> Result<(f64, f64)> {
    let cube = HyperCube::new(Array3::from_shape_fn((1, 1, spectrum.len()), |(_, _, n)| spectrum[n] as f32))?;
    let map = spectral_phasor(&cube, harmonic)?;
    if map.zero[[0, 0]] {
        bail!("reference spectrum sums to zero and has no phasor");
    }
    Ok((map.g[[0, 0]], map.s[[0, 0]]))
}

/// Phasor unmixing as a result: masks become 0/1 concentrations and the
/// masked mean spectra become `S`.
fn phasor_unmix(cube: &HyperCube, refs: &Array2<f64>, harmonic: usize, radius: f64) -> Result<UnmixResult> {
    let (nx, ny, nw) = cube.dims();
    let map = spectral_phasor(cube, harmonic)?;
    let k = refs.nrows();
    let mut c = Array2::zeros((nx * ny, k));
    let mut s = Array2::zeros((k, nw));
    for (i, r) in refs.rows().into_iter().enumerate() {
        let (g0, s0) = spectrum_phasor(&r.to_vec(), harmonic)?;
        let square = [
            (g0 - radius, s0 - radius),
            (g0 + radius, s0 - radius),
            (g0 + radius, s0 + radius),
            (g0 - radius, s0 + radius),
        ];
        let sel = phasor_select(&map, &square, cube).with_context(|| format!("reference {i}"))?;
        for &(x, y) in &sel.mask {
            c[[x * ny + y, i]] = 1.0;
        }
        s.row_mut(i).assign(&ndarray::Array1::from(sel.spectrum));
    }
    let d = reshape_cube(cube);
    let e = &d.values - &c.dot(&s);
    Ok(UnmixResult {
        c,
        s,
        e,
        k,
        iterations: 1,
        converged: true,
        objective: Vec::new(),
        collapsed: Vec::new(),
        dims: Some((nx, ny)),
    })
}

pub fn unmix_cube(
    cube: &HyperCube,
    method: UnmixMethod,
    refs: &Array2<f64>,
    lambda: f64,
    max_iter: usize,
    harmonic: usize,
    radius: f64,
) -> Result<UnmixResult> {
    let d = reshape_cube(cube);
    Ok(match method {
        UnmixMethod::Lasso => lasso_unmix(&d, refs, lambda)?,
        UnmixMethod::Mcr => mcr_als(
            &d,
            refs,
            &McrOptions {
                max_iter,
                ..McrOptions::default()
            },
        )?,
        UnmixMethod::Phasor => phasor_unmix(cube, refs, harmonic, radius)?,
    })
}

pub fn save_unmix(result: &UnmixResult, cube: &HyperCube, out_c: &Path, out_s: &Path) -> Result<()> {
    let mut conc = concentration_cube(result)?;
    conc.seed = cube.seed;
    save_cube(&conc, out_c.join("concentrations"))?;
    for k in 0..result.k {
        save_image(&result.concentration_map(k)?, &out_c.join(format!("c{k}.png")))?;
    }
    write_spectra(out_s, &SpectraTable::new(result.s.clone(), cube.wavenumbers.as_deref())?)
}

pub fn unmix_cmd(a: &UnmixArgs) -> Result<UnmixSummary> {
    let cube = load_cube(&a.input)?;
    let refs = read_spectra(&a.refs)?;
    let result = unmix_cube(&cube, a.method, &refs.values, a.lambda, a.max_iter, a.harmonic, a.radius)?;
    save_unmix(&result, &cube, &a.out_c, &a.out_s)?;
    let summary = UnmixSummary {
        method: a.method,
        k: result.k,
        iterations: result.iterations,
        converged: result.converged,
        relative_residual: result.relative_residual(&reshape_cube(&cube)),
        collapsed: result.collapsed.clone(),
    };
    write_json(&a.out_c.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Args, Debug, Clone)]
pub struct BaselineArgs {
    /// Spectra table: header row of wavenumbers, one spectrum per row.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = ArplsConfig::default().lambda)]
    pub lambda: f64,
    #[arg(long, default_value_t = ArplsConfig::default().ratio)]
    pub ratio: f64,
    #[arg(long, default_value_t = ArplsConfig::default().max_iter)]
    pub max_iter: usize,
    /// Baseline-corrected spectra.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub out_baseline: Option<PathBuf>,
}

pub fn baseline_table(table: &SpectraTable, cfg: &ArplsConfig) -> Result<(SpectraTable, SpectraTable)> {
    let (rows, n) = table.values.dim();
    let mut base = Array2::zeros((rows, n));
    for (i, row) in table.values.rows().into_iter().enumerate() {
        let r = arpls(&row.to_vec(), cfg).with_context(|| format!("spectrum {i}"))?;
        if r.degenerate {
            log::warn!("spectrum {i}: no negative residuals, baseline is the smoothed spectrum");
        }
        base.row_mut(i).assign(&ndarray::Array1::from(r.baseline));
    }
    let corrected = &table.values - &base;
    Ok((
        SpectraTable {
            axis: table.axis.clone(),
            values: corrected,
        },
        SpectraTable {
            axis: table.axis.clone(),
            values: base,
        },
    ))
}

pub fn baseline_cmd(a: &BaselineArgs) -> Result<()> {
    let table = read_spectra(&a.input)?;
    let cfg = ArplsConfig {
        lambda: a.lambda,
        ratio: a.ratio,
        max_iter: a.max_iter,
        ..ArplsConfig::default()
    };
    let (corrected, base) = baseline_table(&table, &cfg)?;
    write_spectra(&a.out, &corrected)?;
    if let Some(p) = &a.out_baseline {
        write_spectra(p, &base)?;
    }
    Ok(())
}

#[derive(Args, Debug, Clone)]
pub struct MetricsArgs {
    /// Cube under test (an image is a cube with one frame).
    #[arg(long)]
    pub a: PathBuf,
    /// Reference cube.
    #[arg(long)]
    pub b: PathBuf,
    /// Comma-separated subset of ssim, psnr, frc, frechet, snr, mse.
    #[arg(long, default_value = "ssim,psnr,frc,frechet,snr,mse")]
    pub which: String,
    /// Signal/background pixels, required for snr.
    #[arg(long)]
    pub roi: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrPair {
    pub a: f64,
    /// Absent when `b` is noise-free, as a clean reference is.
    pub b: Option<f64>,
    /// SNR of `a` over SNR of `b`.
    pub gain: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrcSummary {
    pub cutoff_frequency: f64,
    pub resolution: Option<f64>,
    pub nyquist_flag: bool,
}

impl From<&FrcCurve> for FrcSummary {
    fn from(c: &FrcCurve) -> Self {
        Self {
            cutoff_frequency: c.cutoff_frequency,
            resolution: c.resolution,
            nyquist_flag: c.nyquist_flag,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frc: Option<FrcSummary>,
    /// Mean per-pixel Fréchet distance of normalized spectra.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frechet: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr: Option<SnrPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

pub const METRIC_NAMES: [&str; 6] = ["ssim", "psnr", "frc", "frechet", "snr", "mse"];

/// Image metrics use the ω-mean images of both cubes.
pub fn compare(a: &HyperCube, b: &HyperCube, which: &[&str], roi: Option<&Roi>) -> Result<MetricsReport> {
    if a.dims() != b.dims() {
        bail!("cubes differ in shape: {:?} vs {:?}", a.dims(), b.dims());
    }
    let mut report = MetricsReport::default();
    let (ia, ib) = (mean_image(a)?, mean_image(b)?);
    for &name in which {
        match name {
            "ssim" => report.ssim = Some(ssim(&ia, &ib)?),
            "psnr" => report.psnr = Some(psnr(&ib, &ia)?),
            "frc" => report.frc = Some((&frc_resolution(&ia, &ib)?).into()),
            "frechet" => report.frechet = Some(spectral_distortion_map(a, b)?.mean()),
            "mse" => report.mse = Some(cube_mse(a, b)?),
            "snr" => {
                let roi = roi.context("snr needs --roi")?;
                let sa = snr(a, &roi.signal, &roi.background)?.ratio();
                let sb = match snr(b, &roi.signal, &roi.background) {
                    Ok(v) => Some(v.ratio()),
                    Err(spend_core::Error::Undefined(_)) => None,
                    Err(e) => return Err(e.into()),
                };
                report.snr = Some(SnrPair { a: sa, b: sb, gain: sb.map(|sb| sa / sb) });
            }
            other => bail!("unknown metric {other:?}; choose from {}", METRIC_NAMES.join(", ")),
        }
    }
    Ok(report)
}

pub fn metrics_cmd(a: &MetricsArgs) -> Result<MetricsReport> {
    let ca = load_cube(&a.a)?;
    let cb = load_cube(&a.b)?;
    let roi: Option<Roi> = a.roi.as_deref().map(read_json).transpose()?;
    let which: Vec<&str> = a.which.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let report = compare(&ca, &cb, &which, roi.as_ref())?;
    write_json(&a.out, &report)?;
    Ok(report)
}
