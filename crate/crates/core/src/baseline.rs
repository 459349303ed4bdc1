//! Asymmetrically reweighted penalized least squares (arPLS) baseline
//! estimation.
//!
//! For a spectrum `x` the baseline `z` minimises
//! `(x − z)ᵀW(x − z) + λ·zᵀDᵀDz` with `D` the `(n−2) × n` second-difference
//! matrix, i.e. `z = (W + λDᵀD)⁻¹Wx`. The system is pentadiagonal and solved
//! directly with a banded Cholesky factorisation.
//!
//! Weights start at one. After each solve, with `d = x − z` and `m`, `σ` the
//! mean and standard deviation of the negative part of `d`:
//!
//! ```text
//! wᵢ = 1                                        if xᵢ < zᵢ
//! wᵢ = 1 / (1 + exp(2(dᵢ − (−m + 2σ)) / σ))     otherwise
//! ```
//!
//! Iteration stops once `‖w_t − w_{t+1}‖₂ / ‖w_t‖₂ < ratio` or after
//! `max_iter` solves. Some arPLS write-ups place the constants of the
//! logistic differently; this module uses the form above.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArplsConfig {
    /// Smoothness weight λ.
    pub lambda: f64,
    /// Convergence threshold on the relative weight change.
    pub ratio: f64,
    pub max_iter: usize,
    /// Order of the difference penalty. Only 2 is supported.
    #[serde(default = "second_order")]
    pub diff_order: usize,
}

fn second_order() -> usize {
    2
}

impl Default for ArplsConfig {
    /// Tuned on synthetic 64–256 point spectra.
    fn default() -> Self {
        Self {
            lambda: 1e5,
            ratio: 0.05,
            max_iter: 50,
            diff_order: 2,
        }
    }
}

impl ArplsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::invalid(format!("ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.diff_order != 2 {
            return Err(Error::invalid(format!(
                "only second-order differences are supported, got {}",
                self.diff_order
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArplsResult {
    pub baseline: Vec<f64>,
    /// Weights used for the final solve.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped early because `x ≥ z` everywhere (σ undefined).
    pub degenerate: bool,
    /// `‖(W + λDᵀD)z − Wx‖ / ‖Wx‖` for every solve.
    pub residuals: Vec<f64>,
}

const BAND: usize = 2;

/// Lower band of `W + λDᵀD`: `band[i][j]` holds entry `(i, i − j)`.
fn assemble(w: &[f64], lambda: f64) -> Vec<[f64; BAND + 1]> {
    let n = w.len();
    let mut band = vec![[0.0; BAND + 1]; n];
    for (i, &wi) in w.iter().enumerate() {
        band[i][0] = wi;
    }
    const COEF: [f64; 3] = [1.0, -2.0, 1.0];
    for r in 0..n.saturating_sub(2) {
        for a in 0..3 {
            for b in 0..=a {
                band[r + a][a - b] += lambda * COEF[a] * COEF[b];
            }
        }
    }
    band
}

fn band_mul(band: &[[f64; BAND + 1]], z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in 0..=BAND.min(i) {
            let v = band[i][j];
            out[i] += v * z[i - j];
            if j > 0 {
                out[i - j] += v * z[i];
            }
        }
    }
    out
}

/// Banded Cholesky `A = LLᵀ`, same storage as [`assemble`].
fn cholesky(band: &[[f64; BAND + 1]]) -> Result<Vec<[f64; BAND + 1]>> {
    let n = band.len();
    let mut l = vec![[0.0; BAND + 1]; n];
    for i in 0..n {
        for j in i.saturating_sub(BAND)..=i {
            let mut sum = band[i][i - j];
            for k in i.saturating_sub(BAND).max(j.saturating_sub(BAND))..j {
                sum -= l[i][i - k] * l[j][j - k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::Undefined(format!(
                        "smoothing system is not positive definite at row {i}"
                    )));
                }
                l[i][0] = sum.sqrt();
            } else {
                l[i][i - j] = sum / l[j][0];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[[f64; BAND + 1]], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = rhs[i];
        for k in i.saturating_sub(BAND)..i {
            s -= l[i][i - k] * y[k];
        }
        y[i] = s / l[i][0];
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..(i + BAND + 1).min(n) {
            s -= l[k][k - i] * z[k];
        }
        z[i] = s / l[i][0];
    }
    z
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Solves `(W + λDᵀD)z = Wx` with one step of iterative refinement and returns
/// `z` with its relative residual.
pub fn smooth_solve(x: &[f64], w: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    if x.len() != w.len() {
        return Err(Error::Shape("weights and spectrum differ in length".into()));
    }
    let band = assemble(w, lambda);
    let l = cholesky(&band)?;
    let wx: Vec<f64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
    let mut z = cholesky_solve(&l, &wx);
    let az = band_mul(&band, &z);
    let r: Vec<f64> = wx.iter().zip(&az).map(|(a, b)| a - b).collect();
    let dz = cholesky_solve(&l, &r);
    z.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
    let az = band_mul(&band, &z);
    let resid: Vec<f64> = wx.iter().zip(&az).map(|(a, b)| a - b).collect();
    let scale = norm(&wx);
    let rel = if scale > 0.0 { norm(&resid) / scale } else { norm(&resid) };
    Ok((z, rel))
}

fn logistic_weight(d: f64, m: f64, sigma: f64) -> f64 {
    let arg = 2.0 * (d - (-m + 2.0 * sigma)) / sigma;
    let w = if arg > 0.0 {
        let e = (-arg).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + arg.exp())
    };
    w.clamp(f64::MIN_POSITIVE, 1.0)
}

pub fn arpls(x: &[f64], cfg: &ArplsConfig) -> Result<ArplsResult> {
    cfg.validate()?;
    if x.len() < 3 {
        return Err(Error::invalid(format!(
            "arPLS needs at least 3 samples, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectrum".into()));
    }
    let n = x.len();
    let mut w = vec![1.0; n];
    let mut residuals = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate = false;
    let mut z = Vec::new();

    while iterations < cfg.max_iter {
        iterations += 1;
        let (zn, rel) = smooth_solve(x, &w, cfg.lambda)?;
        z = zn;
        residuals.push(rel);

        let d: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a - b).collect();
        let neg: Vec<f64> = d.iter().copied().filter(|&v| v < 0.0).collect();
        if neg.is_empty() {
            degenerate = true;
            break;
        }
        let m = neg.iter().sum::<f64>() / neg.len() as f64;
        let sigma = (neg.iter().map(|v| (v - m).powi(2)).sum::<f64>() / neg.len() as f64).sqrt();
        if !(sigma > 0.0 && sigma.is_finite()) {
            degenerate = true;
            break;
        }
        let w_next: Vec<f64> = d
            .iter()
            .map(|&di| if di < 0.0 { 1.0 } else { logistic_weight(di, m, sigma) })
            .collect();
        let change: Vec<f64> = w.iter().zip(&w_next).map(|(a, b)| a - b).collect();
        let rel_change = norm(&change) / norm(&w);
        if rel_change < cfg.ratio {
            converged = true;
            break;
        }
        w = w_next;
    }

    Ok(ArplsResult {
        baseline: z,
        weights: w,
        iterations,
        converged,
        degenerate,
        residuals,
    })
}

/// `x − arpls(x)`.
pub fn peak_extract(x: &[f64], cfg: &ArplsConfig) -> Result<Vec<f64>> {
    let r = arpls(x, cfg)?;
    Ok(x.iter().zip(&r.baseline).map(|(a, b)| a - b).collect())
}
