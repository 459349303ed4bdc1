//! Noise diagnostics: per-axis power spectral density, adjacent-pixel Pearson
//! correlation, noise-versus-signal curves, and the fluctuation score that
//! picks the permutation axis.
//!
//! Statistics that need a noise field take it as `cube − signal_estimate`.
//! Without a signal estimate the noise is the residual of a per-frame 5×5
//! median filter (each ω frame filtered in `(x, y)`), and reports say so.
//!
//! All reductions are computed per line in parallel and then summed in line
//! order, so results are independent of the thread count.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, ArrayView1, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cubeio::{Axis, HyperCube};
use crate::error::{Error, Result};

/// Edge of the median window used when no signal estimate is available.
pub const MEDIAN_WINDOW: usize = 5;

/// Axes whose fluctuation score is within this relative distance of the best
/// score are treated as tied; ties go to ω, then y, then x.
pub const FLUCTUATION_TIE: f64 = 0.05;

pub const DEFAULT_TILE: usize = 4;

/// How the noise field behind a report was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSource {
    /// `cube − signal_estimate` with a caller-supplied estimate.
    SignalEstimate,
    /// `cube − median5x5(cube)` over the frames perpendicular to each
    /// measured axis (single-stack fallback).
    MedianResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    /// `(frequency in cycles/pixel, one-sided power)` per axis.
    pub psd: BTreeMap<Axis, Vec<(f64, f64)>>,
    pub pcc: BTreeMap<Axis, f64>,
    /// `(tile mean, tile std)` of the raw cube.
    pub noise_vs_signal: Vec<(f64, f64)>,
    pub fluctuation: BTreeMap<Axis, f64>,
    pub selected_axis: Axis,
    pub noise_source: NoiseSource,
}

fn lanes(data: &Array3<f64>, axis: Axis) -> Vec<ArrayView1<'_, f64>> {
    data.lanes(axis.nd()).into_iter().collect()
}

fn to_f64(cube: &HyperCube) -> Array3<f64> {
    cube.data().mapv(|v| v as f64)
}

/// One-sided mean periodogram over all lines along `axis`.
///
/// Each line has its mean removed; with `N` the line length, bin `k` sits at
/// `k/N` cycles/pixel for `k = 0..=N/2`, interior bins are doubled, and
/// `Σ power·(1/N)` equals the mean per-line variance. For a stationary
/// process with two-sided spectrum `S(f)`, interior bins estimate `2·S(f)`.
pub fn axis_psd(cube: &HyperCube, axis: Axis) -> Result<Vec<(f64, f64)>> {
    psd_of(&to_f64(cube), axis)
}

pub(crate) fn psd_of(data: &Array3<f64>, axis: Axis) -> Result<Vec<(f64, f64)>> {
    let n = data.len_of(axis.nd());
    if n < 4 {
        return Err(Error::invalid(format!(
            "PSD along {axis} needs an extent of at least 4, got {n}"
        )));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let half = n / 2;
    let lines = lanes(data, axis);
    let per_line: Vec<Vec<f64>> = lines
        .par_iter()
        .map(|lane| {
            let mean = lane.sum() / n as f64;
            let mut buf: Vec<Complex<f64>> =
                lane.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
            fft.process(&mut buf);
            (0..=half)
                .map(|k| {
                    let p = buf[k].norm_sqr() / n as f64;
                    if k == 0 || (n % 2 == 0 && k == half) {
                        p
                    } else {
                        2.0 * p
                    }
                })
                .collect()
        })
        .collect();
    let mut acc = vec![0.0; half + 1];
    for line in &per_line {
        for (a, v) in acc.iter_mut().zip(line) {
            *a += v;
        }
    }
    let count = per_line.len() as f64;
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(k, p)| (k as f64 / n as f64, p / count))
        .collect())
}

/// Median of a small window, averaging the two middle values for even counts.
fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Every frame perpendicular to `axis` filtered with a `window × window`
/// median; the window is clipped at the borders.
pub fn median_filter_frames(data: &Array3<f64>, window: usize, axis: Axis) -> Array3<f64> {
    let r = window / 2;
    let planes: Vec<Array2<f64>> = (0..data.len_of(axis.nd()))
        .into_par_iter()
        .map(|t| {
            let frame = data.index_axis(axis.nd(), t);
            let (h, w) = frame.dim();
            let mut buf = Vec::with_capacity(window * window);
            Array2::from_shape_fn((h, w), |(i, j)| {
                buf.clear();
                for ii in i.saturating_sub(r)..(i + r + 1).min(h) {
                    for jj in j.saturating_sub(r)..(j + r + 1).min(w) {
                        buf.push(frame[[ii, jj]]);
                    }
                }
                median(&mut buf)
            })
        })
        .collect();
    let mut out = Array3::zeros(data.dim());
    for (t, p) in planes.iter().enumerate() {
        out.index_axis_mut(axis.nd(), t).assign(p);
    }
    out
}

/// Noise field used for statistics along `axis`: `cube − signal`, or
/// without a signal estimate the residual of a median filter applied to each
/// frame perpendicular to `axis`.
///
/// Filtering across the measured axis keeps each frame's residual a
/// function of that frame alone, so frames that are independent stay
/// independent and the lag-1 correlation along `axis` is not biased by the
/// filter. A filter along the measured axis would make neighbouring
/// residuals anti-correlated.
pub fn estimate_noise(
    cube: &HyperCube,
    signal: Option<&HyperCube>,
    axis: Axis,
) -> Result<(Array3<f64>, NoiseSource)> {
    let data = to_f64(cube);
    match signal {
        Some(sig) => {
            if sig.dims() != cube.dims() {
                return Err(Error::Shape(format!(
                    "signal estimate is {:?}, cube is {:?}",
                    sig.dims(),
                    cube.dims()
                )));
            }
            let mut noise = data;
            Zip::from(&mut noise)
                .and(sig.data())
                .for_each(|n, &s| *n -= s as f64);
            Ok((noise, NoiseSource::SignalEstimate))
        }
        None => {
            let smooth = median_filter_frames(&data, MEDIAN_WINDOW, axis);
            Ok((data - smooth, NoiseSource::MedianResidual))
        }
    }
}

/// Pearson correlation between the noise and its one-step shift along `axis`,
/// pooled over every line.
pub fn adjacent_pcc(cube: &HyperCube, axis: Axis, signal: Option<&HyperCube>) -> Result<f64> {
    let (noise, _) = estimate_noise(cube, signal, axis)?;
    pcc_of(&noise, axis)
}

pub(crate) fn pcc_of(noise: &Array3<f64>, axis: Axis) -> Result<f64> {
    let n = noise.len_of(axis.nd());
    if n < 2 {
        return Err(Error::invalid(format!(
            "adjacent correlation along {axis} needs an extent of at least 2"
        )));
    }
    let lines = lanes(noise, axis);
    // first pass: means of the leading and trailing samples
    let sums: Vec<(f64, f64)> = lines
        .par_iter()
        .map(|l| {
            let a: f64 = l.iter().take(n - 1).sum();
            let b: f64 = l.iter().skip(1).sum();
            (a, b)
        })
        .collect();
    let count = (lines.len() * (n - 1)) as f64;
    let (sa, sb) = sums
        .iter()
        .fold((0.0, 0.0), |(x, y), &(a, b)| (x + a, y + b));
    let (ma, mb) = (sa / count, sb / count);
    let moments: Vec<(f64, f64, f64)> = lines
        .par_iter()
        .map(|l| {
            let mut saa = 0.0;
            let mut sbb = 0.0;
            let mut sab = 0.0;
            for t in 0..n - 1 {
                let a = l[t] - ma;
                let b = l[t + 1] - mb;
                saa += a * a;
                sbb += b * b;
                sab += a * b;
            }
            (saa, sbb, sab)
        })
        .collect();
    let (saa, sbb, sab) = moments
        .iter()
        .fold((0.0, 0.0, 0.0), |(x, y, z), &(a, b, c)| (x + a, y + b, z + c));
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::Undefined(format!(
            "noise along {axis} has zero variance, so its correlation is undefined; \
             supply a different signal estimate or check that the cube is not constant"
        )));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `(mean, sample std)` for every full `tile × tile` spatial block of every
/// ω frame, ordered by frame, then tile row, then tile column. Partial tiles
/// at the right/bottom edges are skipped.
pub fn noise_vs_signal(cube: &HyperCube, tile: usize) -> Result<Vec<(f64, f64)>> {
    let (nx, ny, nw) = cube.dims();
    if tile < 2 {
        return Err(Error::invalid("tile edge must be at least 2"));
    }
    if tile > nx || tile > ny {
        return Err(Error::invalid(format!(
            "tile {tile} larger than the {nx}x{ny} image"
        )));
    }
    let data = cube.data();
    let (tx, ty) = (nx / tile, ny / tile);
    let mut out = Vec::with_capacity(nw * tx * ty);
    let m = (tile * tile) as f64;
    for n in 0..nw {
        for bx in 0..tx {
            for by in 0..ty {
                let mut sum = 0.0;
                for x in bx * tile..(bx + 1) * tile {
                    for y in by * tile..(by + 1) * tile {
                        sum += data[[x, y, n]] as f64;
                    }
                }
                let mean = sum / m;
                let mut ss = 0.0;
                for x in bx * tile..(bx + 1) * tile {
                    for y in by * tile..(by + 1) * tile {
                        let d = data[[x, y, n]] as f64 - mean;
                        ss += d * d;
                    }
                }
                out.push((mean, (ss / (m - 1.0)).sqrt()));
            }
        }
    }
    Ok(out)
}

/// Ordinary least-squares line `y = slope·x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points for a fit"));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Mean over lines of `mean |first difference| / line std`.
pub(crate) fn fluctuation_of(noise: &Array3<f64>, axis: Axis) -> Result<f64> {
    let n = noise.len_of(axis.nd());
    if n < 2 {
        return Err(Error::invalid(format!("fluctuation along {axis} needs extent >= 2")));
    }
    let scores: Vec<Option<f64>> = lanes(noise, axis)
        .par_iter()
        .map(|l| {
            let mean = l.sum() / n as f64;
            let var = l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return None;
            }
            let mad = (0..n - 1).map(|t| (l[t + 1] - l[t]).abs()).sum::<f64>() / (n - 1) as f64;
            Some(mad / var.sqrt())
        })
        .collect();
    let valid: Vec<f64> = scores.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::Undefined(format!("no line along {axis} has non-zero variance")));
    }
    Ok(valid.iter().sum::<f64>() / valid.len() as f64)
}

/// Highest fluctuation wins; scores within [`FLUCTUATION_TIE`] of the best are
/// tied and resolved in the order ω, y, x.
pub fn pick_axis(fluctuation: &BTreeMap<Axis, f64>) -> Axis {
    let best = fluctuation.values().cloned().fold(f64::MIN, f64::max);
    [Axis::W, Axis::Y, Axis::X]
        .into_iter()
        .find(|a| {
            fluctuation
                .get(a)
                .is_some_and(|&f| f >= best * (1.0 - FLUCTUATION_TIE))
        })
        .unwrap_or(Axis::W)
}

/// Full report with an optional signal estimate. `tile` sets the
/// noise-vs-signal block size; the curve is left empty if the image is smaller
/// than one tile.
pub fn analyze(cube: &HyperCube, signal: Option<&HyperCube>, tile: usize) -> Result<NoiseReport> {
    let (nx, ny, nw) = cube.dims();
    if nx < 4 || ny < 4 || nw < 4 {
        return Err(Error::invalid(format!(
            "noise analysis needs every extent >= 4, got {nx}x{ny}x{nw}"
        )));
    }
    let mut psd = BTreeMap::new();
    let mut pcc = BTreeMap::new();
    let mut fluctuation = BTreeMap::new();
    let mut noise_source = NoiseSource::SignalEstimate;
    for axis in Axis::ALL {
        let (noise, source) = estimate_noise(cube, signal, axis)?;
        noise_source = source;
        psd.insert(axis, psd_of(&noise, axis)?);
        pcc.insert(axis, pcc_of(&noise, axis)?);
        fluctuation.insert(axis, fluctuation_of(&noise, axis)?);
    }
    let noise_vs_signal = if tile <= nx && tile <= ny {
        noise_vs_signal(cube, tile)?
    } else {
        Vec::new()
    };
    let selected_axis = pick_axis(&fluctuation);
    Ok(NoiseReport {
        psd,
        pcc,
        noise_vs_signal,
        fluctuation,
        selected_axis,
        noise_source,
    })
}

/// Picks the permutation axis from the cube alone (median-residual noise).
pub fn select_permutation_axis(cube: &HyperCube) -> Result<(Axis, NoiseReport)> {
    let report = analyze(cube, None, DEFAULT_TILE)?;
    Ok((report.selected_axis, report))
}
