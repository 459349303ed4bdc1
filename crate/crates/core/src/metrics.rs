//! Image and spectrum quality metrics: SSIM, PSNR, SNR gain, Fourier ring
//! correlation, discrete Fréchet distance and Welch's t-test.
//!
//! Everything is computed in `f64` regardless of the `f32` storage type.

use ndarray::{s, Array2, ArrayView2, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cubeio::{Axis, HyperCube, Image};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// FRC threshold for the resolution read-out.
pub const FRC_THRESHOLD: f64 = 1.0 / 7.0;
pub const FRC_MIN_SIDE: usize = 16;

fn as_f64(img: &Image) -> Array2<f64> {
    img.data.mapv(f64::from)
}

fn range_of(a: &Array2<f64>) -> f64 {
    let (lo, hi) = a
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "images differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn gaussian_window() -> Array2<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w = Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(i, j)| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let total = w.sum();
    w / total
}

/// Gaussian-weighted local means over every fully contained window.
fn filter_valid(img: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let (h, wd) = img.dim();
    let k = w.nrows();
    Array2::from_shape_fn((h + 1 - k, wd + 1 - k), |(i, j)| {
        let patch = img.slice(s![i..i + k, j..j + k]);
        Zip::from(&patch).and(w).fold(0.0, |acc, &p, &g| acc + p * g)
    })
}

/// Mean structural similarity over all valid 11×11 Gaussian windows
/// (σ = 1.5). The dynamic range is the larger of the two image ranges.
///
/// Two constant images have no dynamic range: the result is 1 when they are
/// identical and an error otherwise.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dim();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs both dimensions >= {SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (a, b) = (as_f64(a), as_f64(b));
    let l = range_of(&a).max(range_of(&b));
    if l == 0.0 {
        return if a == b {
            Ok(1.0)
        } else {
            Err(Error::Undefined(
                "SSIM of two different constant images has no dynamic range".into(),
            ))
        };
    }
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let g = gaussian_window();
    let mu_a = filter_valid(&a, &g);
    let mu_b = filter_valid(&b, &g);
    let aa = filter_valid(&(&a * &a), &g);
    let bb = filter_valid(&(&b * &b), &g);
    let ab = filter_valid(&(&a * &b), &g);
    let n = mu_a.len() as f64;
    let mut total = 0.0;
    Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        });
    Ok(total / n)
}

fn mse_of(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> f64 {
    let sum = Zip::from(&a).and(&b).fold(0.0, |acc, &x, &y| {
        let d = f64::from(x) - f64::from(y);
        acc + d * d
    });
    sum / a.len() as f64
}

/// `10·log₁₀(peak² / MSE)` with `peak` the range of the reference.
///
/// Returns `f64::INFINITY` when the images are identical.
pub fn psnr(reference: &Image, b: &Image) -> Result<f64> {
    same_shape(reference, b)?;
    let mse = mse_of(reference.data.view(), b.data.view());
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = range_of(&as_f64(reference));
    if peak == 0.0 {
        return Err(Error::Undefined("PSNR reference has zero range".into()));
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean squared difference between two cubes of equal shape.
pub fn cube_mse(a: &HyperCube, b: &HyperCube) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "cubes differ in shape: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let sum = Zip::from(a.data()).and(b.data()).fold(0.0, |acc, &x, &y| {
        let d = f64::from(x) - f64::from(y);
        acc + d * d
    });
    Ok(sum / a.len() as f64)
}

/// Signal level and background noise of one cube over two pixel sets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    /// Mean over signal pixels and all ω.
    pub mean_signal: f64,
    /// Population standard deviation over background pixels and all ω.
    pub std_background: f64,
}

impl Snr {
    pub fn ratio(&self) -> f64 {
        self.mean_signal / self.std_background
    }
}

fn check_rois(
    dims: (usize, usize, usize),
    signal: &[(usize, usize)],
    background: &[(usize, usize)],
) -> Result<()> {
    if signal.is_empty() || background.is_empty() {
        return Err(Error::invalid("signal and background ROIs must be nonempty"));
    }
    let (nx, ny, _) = dims;
    let mut seen = vec![0u8; nx * ny];
    for (tag, roi) in [(1u8, signal), (2u8, background)] {
        for &(x, y) in roi {
            if x >= nx || y >= ny {
                return Err(Error::IndexOutOfRange {
                    axis: if x >= nx { Axis::X } else { Axis::Y },
                    index: if x >= nx { x } else { y },
                    extent: if x >= nx { nx } else { ny },
                });
            }
            let slot = &mut seen[x * ny + y];
            if *slot != 0 && *slot != tag {
                return Err(Error::invalid(format!(
                    "pixel ({x}, {y}) is in both the signal and the background ROI"
                )));
            }
            *slot = tag;
        }
    }
    Ok(())
}

pub fn snr(cube: &HyperCube, signal: &[(usize, usize)], background: &[(usize, usize)]) -> Result<Snr> {
    check_rois(cube.dims(), signal, background)?;
    let d = cube.data();
    let pooled = |roi: &[(usize, usize)]| -> Vec<f64> {
        roi.iter()
            .flat_map(|&(x, y)| d.slice(s![x, y, ..]).iter().map(|&v| f64::from(v)).collect::<Vec<_>>())
            .collect()
    };
    let sig = pooled(signal);
    let bg = pooled(background);
    let mean_signal = sig.iter().sum::<f64>() / sig.len() as f64;
    let mb = bg.iter().sum::<f64>() / bg.len() as f64;
    let std_background = (bg.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / bg.len() as f64).sqrt();
    if std_background == 0.0 {
        return Err(Error::Undefined("background ROI has zero standard deviation".into()));
    }
    Ok(Snr {
        mean_signal,
        std_background,
    })
}

/// SNR of `denoised` divided by SNR of `raw`, both measured as
/// mean(signal ROI) / std(background ROI) pooled over all ω.
pub fn snr_gain(
    raw: &HyperCube,
    denoised: &HyperCube,
    signal: &[(usize, usize)],
    background: &[(usize, usize)],
) -> Result<f64> {
    if raw.dims() != denoised.dims() {
        return Err(Error::Shape(format!(
            "cubes differ in shape: {:?} vs {:?}",
            raw.dims(),
            denoised.dims()
        )));
    }
    Ok(snr(denoised, signal, background)?.ratio() / snr(raw, signal, background)?.ratio())
}

/// Fourier ring correlation curve and the 1/7 resolution read-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrcCurve {
    /// `(cycles/pixel, correlation)` per ring, DC excluded, up to 0.5.
    pub points: Vec<(f64, f64)>,
    /// 3-point moving average of the correlations.
    pub smoothed: Vec<f64>,
    /// Number of Fourier pixels per ring.
    pub ring_sizes: Vec<usize>,
    pub cutoff_frequency: f64,
    /// `pixel_size / cutoff_frequency` when the images carry a pixel size.
    pub resolution: Option<f64>,
    /// The smoothed curve never fell below 1/7; the cutoff is Nyquist.
    pub nyquist_flag: bool,
}

fn fft2(img: ArrayView2<'_, f64>) -> Array2<Complex<f64>> {
    let (h, w) = img.dim();
    let mut planner = FftPlanner::new();
    let mut out = img.mapv(|v| Complex::new(v, 0.0));
    let row_fft = planner.plan_fft_forward(w);
    for mut row in out.rows_mut() {
        let mut buf = row.to_vec();
        row_fft.process(&mut buf);
        row.iter_mut().zip(buf).for_each(|(a, b)| *a = b);
    }
    let col_fft = planner.plan_fft_forward(h);
    for mut col in out.columns_mut() {
        let mut buf = col.to_vec();
        col_fft.process(&mut buf);
        col.iter_mut().zip(buf).for_each(|(a, b)| *a = b);
    }
    out
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn center_square(img: &Image) -> ArrayView2<'_, f32> {
    let (h, w) = img.dim();
    let n = h.min(w);
    let (i0, j0) = ((h - n) / 2, (w - n) / 2);
    img.data.slice(s![i0..i0 + n, j0..j0 + n])
}

/// Fourier ring correlation of two images.
///
/// Rings are one frequency pixel wide (`r = round(|k|)`), DC is skipped and
/// rings run to Nyquist. The per-ring value is
/// `Re Σ F_a·F_b* / √(Σ|F_a|²·Σ|F_b|²)`; for real images the ring sum is
/// real, so this is the signed form of the usual magnitude. A ring where both
/// images carry no energy counts as fully correlated. Non-square images are
/// center-cropped to the largest square.
///
/// The cutoff is the first crossing of the smoothed curve below 1/7,
/// linearly interpolated between rings. When there is none the cutoff is
/// Nyquist and `nyquist_flag` is set.
pub fn frc_resolution(a: &Image, b: &Image) -> Result<FrcCurve> {
    same_shape(a, b)?;
    let (h, w) = a.dim();
    let n = h.min(w);
    if n < FRC_MIN_SIDE {
        return Err(Error::Shape(format!(
            "FRC needs a side of at least {FRC_MIN_SIDE}, got {h}x{w}"
        )));
    }
    let fa = fft2(center_square(a).mapv(f64::from).view());
    let fb = fft2(center_square(b).mapv(f64::from).view());
    let rings = n / 2;
    let mut cross = vec![0.0; rings + 1];
    let mut ea = vec![0.0; rings + 1];
    let mut eb = vec![0.0; rings + 1];
    let mut sizes = vec![0usize; rings + 1];
    for i in 0..n {
        for j in 0..n {
            let r = signed_freq(i, n).hypot(signed_freq(j, n)).round() as usize;
            if r == 0 || r > rings {
                continue;
            }
            let (p, q) = (fa[[i, j]], fb[[i, j]]);
            cross[r] += (p * q.conj()).re;
            ea[r] += p.norm_sqr();
            eb[r] += q.norm_sqr();
            sizes[r] += 1;
        }
    }
    let mut points = Vec::with_capacity(rings);
    for r in 1..=rings {
        let denom = (ea[r] * eb[r]).sqrt();
        let c = if denom > 0.0 {
            (cross[r] / denom).clamp(-1.0, 1.0)
        } else if ea[r] == 0.0 && eb[r] == 0.0 {
            1.0
        } else {
            0.0
        };
        points.push((r as f64 / n as f64, c));
    }
    let smoothed: Vec<f64> = (0..points.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(points.len() - 1);
            points[lo..=hi].iter().map(|p| p.1).sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();

    let mut cutoff = None;
    for i in 0..smoothed.len() {
        if smoothed[i] < FRC_THRESHOLD {
            cutoff = Some(if i == 0 {
                points[0].0
            } else {
                let (f0, f1) = (points[i - 1].0, points[i].0);
                let (s0, s1) = (smoothed[i - 1], smoothed[i]);
                f0 + (s0 - FRC_THRESHOLD) / (s0 - s1) * (f1 - f0)
            });
            break;
        }
    }
    let nyquist_flag = cutoff.is_none();
    let cutoff_frequency = cutoff.unwrap_or(0.5);
    let pixel_size = a.pixel_size.or(b.pixel_size);
    Ok(FrcCurve {
        points,
        smoothed,
        ring_sizes: sizes[1..].to_vec(),
        cutoff_frequency,
        resolution: pixel_size.map(|p| p / cutoff_frequency),
        nyquist_flag,
    })
}

fn dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Discrete Fréchet distance between two polygonal curves with Euclidean
/// point distance.
pub fn frechet_distance<const D: usize>(p: &[[f64; D]], q: &[[f64; D]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("Fréchet distance of an empty curve"));
    }
    // one row of the coupling table at a time
    let mut prev = vec![0.0f64; q.len()];
    let mut cur = vec![0.0f64; q.len()];
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            let d = dist(pi, qj);
            let reach = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
            cur[j] = d.max(reach);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[q.len() - 1])
}

/// Curve `(position, intensity / max intensity)` of one spectrum. Positions
/// are the wavenumbers mapped onto `[0, 1]`, or the sample index mapped onto
/// `[0, 1]` without wavenumbers. `None` when the maximum is not positive.
pub fn spectrum_curve(spectrum: &[f64], wavenumbers: Option<&[f64]>) -> Option<Vec<[f64; 2]>> {
    let n = spectrum.len();
    let max = spectrum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return None;
    }
    let position = |i: usize| -> f64 {
        if n < 2 {
            return 0.0;
        }
        match wavenumbers {
            Some(w) => (w[i] - w[0]) / (w[n - 1] - w[0]),
            None => i as f64 / (n - 1) as f64,
        }
    };
    Some(spectrum.iter().enumerate().map(|(i, &v)| [position(i), v / max]).collect())
}

/// Per-pixel spectral distortion.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionMap {
    pub image: Image,
    /// Pixels where either spectrum has no positive maximum. Their value is 0.
    pub flagged: Vec<(usize, usize)>,
}

impl DistortionMap {
    /// Mean over pixels that are not flagged.
    pub fn mean(&self) -> f64 {
        let total: f64 = self.image.data.iter().map(|&v| f64::from(v)).sum();
        let n = self.image.data.len() - self.flagged.len();
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

/// Fréchet distance between the normalized spectra of every pixel.
pub fn spectral_distortion_map(cube: &HyperCube, reference: &HyperCube) -> Result<DistortionMap> {
    if cube.dims() != reference.dims() {
        return Err(Error::Shape(format!(
            "cubes differ in shape: {:?} vs {:?}",
            cube.dims(),
            reference.dims()
        )));
    }
    let (nx, ny, _) = cube.dims();
    let wn = reference.wavenumbers.as_deref().or(cube.wavenumbers.as_deref());
    let rows: Vec<Vec<Option<f64>>> = (0..nx)
        .into_par_iter()
        .map(|x| {
            (0..ny)
                .map(|y| {
                    let spec = |c: &HyperCube| -> Vec<f64> {
                        c.data().slice(s![x, y, ..]).iter().map(|&v| f64::from(v)).collect()
                    };
                    let p = spectrum_curve(&spec(cube), wn)?;
                    let q = spectrum_curve(&spec(reference), wn)?;
                    frechet_distance(&p, &q).ok()
                })
                .collect()
        })
        .collect();
    let mut flagged = Vec::new();
    let mut data = Array2::<f32>::zeros((nx, ny));
    for (x, row) in rows.iter().enumerate() {
        for (y, v) in row.iter().enumerate() {
            match v {
                Some(d) => data[[x, y]] = *d as f32,
                None => flagged.push((x, y)),
            }
        }
    }
    let mut image = Image::new(data)?;
    image.pixel_size = cube.pixel_size;
    Ok(DistortionMap { image, flagged })
}

/// Two-sided Welch t-test. Returns `(t, p)` with `t` positive when the mean
/// of `a` exceeds the mean of `b`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "each group needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let moments = |g: &[f64]| {
        let n = g.len() as f64;
        let m = g.iter().sum::<f64>() / n;
        let v = g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Undefined("t-test group has zero variance".into()));
    }
    let (qa, qb) = (va / na, vb / nb);
    let t = (ma - mb) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let p = statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t * t));
    Ok((t, p.clamp(0.0, 1.0)))
}
