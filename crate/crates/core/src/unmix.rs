//! Chemical unmixing of `(N_x·N_y) × N_λ` data matrices.
//!
//! The bilinear model is `D = C·S + E` with `C` the `(N_x·N_y) × K`
//! concentrations and `S` the `K × N_λ` pure spectra (one spectrum per row).
//!
//! Pixels are arranged in raster order with `y` varying fastest: pixel
//! `(x, y)` is row `x·N_y + y`, matching the cube storage order.
//!
//! All least-squares sub-problems go through one cyclic coordinate-descent
//! kernel ([`solve_quadratic`]) on the normal equations: LASSO rows use it with
//! an L1 weight, MCR-ALS uses it with `λ = 0` for both half-steps.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis as NdAxis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubeio::{HyperCube, Image};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    pub values: Array2<f64>,
    pub nx: usize,
    pub ny: usize,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, nx: usize, ny: usize) -> Result<Self> {
        if values.nrows() != nx * ny {
            return Err(Error::Shape(format!(
                "{} rows for a {nx}x{ny} image",
                values.nrows()
            )));
        }
        Ok(Self { values, nx, ny })
    }

    pub fn row_of(&self, x: usize, y: usize) -> usize {
        x * self.ny + y
    }
}

pub fn reshape_cube(cube: &HyperCube) -> DataMatrix {
    let (nx, ny, nw) = cube.dims();
    let values = Array2::from_shape_fn((nx * ny, nw), |(i, n)| {
        cube.data()[[i / ny, i % ny, n]] as f64
    });
    DataMatrix { values, nx, ny }
}

/// Inverse of [`reshape_cube`] for the whole matrix.
pub fn to_cube(matrix: &DataMatrix, template: &HyperCube) -> Result<HyperCube> {
    let (nx, ny) = (matrix.nx, matrix.ny);
    let nw = matrix.values.ncols();
    let data = ndarray::Array3::from_shape_fn((nx, ny, nw), |(x, y, n)| {
        matrix.values[[x * ny + y, n]] as f32
    });
    if template.dims() == (nx, ny, nw) {
        template.with_data(data)
    } else {
        HyperCube::new(data)
    }
}

/// One matrix column (e.g. a concentration map) back to an `(x, y)` image.
pub fn unreshape(column: ArrayView1<'_, f64>, dims: (usize, usize)) -> Result<Image> {
    let (nx, ny) = dims;
    if column.len() != nx * ny {
        return Err(Error::Shape(format!(
            "column of length {} cannot fill a {nx}x{ny} image",
            column.len()
        )));
    }
    Image::new(Array2::from_shape_fn((nx, ny), |(x, y)| {
        column[x * ny + y] as f32
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnmixResult {
    /// `(N_x·N_y) × K` concentrations.
    pub c: Array2<f64>,
    /// `K × N_λ` spectra.
    pub s: Array2<f64>,
    /// Residual `D − C·S`.
    pub e: Array2<f64>,
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius norm of the residual after each full iteration (MCR only).
    pub objective: Vec<f64>,
    /// Components whose concentrations collapsed to zero and were reseeded.
    pub collapsed: Vec<usize>,
    pub dims: Option<(usize, usize)>,
}

impl UnmixResult {
    pub fn relative_residual(&self, d: &DataMatrix) -> f64 {
        frobenius(&self.e) / frobenius(&d.values).max(f64::MIN_POSITIVE)
    }

    pub fn concentration_map(&self, k: usize) -> Result<Image> {
        let dims = self
            .dims
            .ok_or_else(|| Error::invalid("result carries no spatial dimensions"))?;
        if k >= self.k {
            return Err(Error::invalid(format!("component {k} of {}", self.k)));
        }
        unreshape(self.c.column(k), dims)
    }
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Stopping threshold of the coordinate-descent kernel, relative to the
/// problem scale `max(|b|∞, λ)`.
const CD_TOL: f64 = 1e-11;
const CD_MAX_SWEEPS: usize = 20_000;

/// KKT violation of `min ½xᵀGx − bᵀx + λ·Σ|x|` at `x` (with `x ≥ 0` when
/// `nonneg`).
pub fn kkt_violation(g: &Array2<f64>, b: &[f64], lambda: f64, nonneg: bool, x: &[f64]) -> f64 {
    let k = b.len();
    let mut worst = 0.0f64;
    for i in 0..k {
        let grad: f64 = (0..k).map(|j| g[[i, j]] * x[j]).sum::<f64>() - b[i];
        let v = if x[i] > 0.0 {
            (grad + lambda).abs()
        } else if x[i] < 0.0 {
            (grad - lambda).abs()
        } else if nonneg {
            (-(grad + lambda)).max(0.0)
        } else {
            (grad.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn problem_scale(b: &[f64], lambda: f64) -> f64 {
    let s = b.iter().fold(lambda, |m, v| m.max(v.abs()));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Cyclic coordinate descent for `min ½xᵀGx − bᵀx + λ‖x‖₁`, optionally with
/// `x ≥ 0`, warm-started from `x`. Coordinates with `G_kk = 0` are left
/// untouched. Returns `(sweeps, converged)`.
pub fn solve_quadratic(
    g: &Array2<f64>,
    b: &[f64],
    lambda: f64,
    nonneg: bool,
    x: &mut [f64],
) -> (usize, bool) {
    let k = b.len();
    let tol = CD_TOL * problem_scale(b, lambda);
    // grad = G x − b, kept up to date incrementally
    let mut grad: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| g[[i, j]] * x[j]).sum::<f64>() - b[i])
        .collect();
    for sweep in 1..=CD_MAX_SWEEPS {
        for i in 0..k {
            let gii = g[[i, i]];
            if gii <= 0.0 {
                continue;
            }
            // minimise over x_i with the rest fixed
            let r = gii * x[i] - grad[i];
            let mut new = if nonneg {
                ((r - lambda) / gii).max(0.0)
            } else if r > lambda {
                (r - lambda) / gii
            } else if r < -lambda {
                (r + lambda) / gii
            } else {
                0.0
            };
            if !new.is_finite() {
                new = 0.0;
            }
            let delta = new - x[i];
            if delta != 0.0 {
                x[i] = new;
                for j in 0..k {
                    grad[j] += g[[j, i]] * delta;
                }
            }
        }
        if kkt_active(g, &grad, lambda, nonneg, x) <= tol {
            return (sweep, true);
        }
    }
    (CD_MAX_SWEEPS, false)
}

fn kkt_active(g: &Array2<f64>, grad: &[f64], lambda: f64, nonneg: bool, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        if g[[i, i]] <= 0.0 {
            continue;
        }
        let v = if x[i] > 0.0 {
            (grad[i] + lambda).abs()
        } else if x[i] < 0.0 {
            (grad[i] - lambda).abs()
        } else if nonneg {
            (-(grad[i] + lambda)).max(0.0)
        } else {
            (grad[i].abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn check_spectra(d: &DataMatrix, s: &Array2<f64>) -> Result<()> {
    if s.nrows() == 0 {
        return Err(Error::invalid("need at least one reference spectrum"));
    }
    if s.ncols() != d.values.ncols() {
        return Err(Error::Shape(format!(
            "spectra have {} channels but the data has {}",
            s.ncols(),
            d.values.ncols()
        )));
    }
    check_finite(&d.values, "data matrix")?;
    check_finite(s, "spectra")?;
    if let Some(k) = s.rows().into_iter().position(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::invalid(format!("spectrum {k} is identically zero")));
    }
    Ok(())
}

/// Row-wise non-negative LASSO:
/// `Ĉᵢ = argmin_{Cᵢ ≥ 0} ½‖Dᵢ − Cᵢ·S‖² + λ‖Cᵢ‖₁`.
pub fn lasso_unmix(d: &DataMatrix, s: &Array2<f64>, lambda: f64) -> Result<UnmixResult> {
    check_spectra(d, s)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let k = s.nrows();
    let gram = s.dot(&s.t());
    let rows: Vec<(Vec<f64>, usize, bool)> = d
        .values
        .axis_iter(NdAxis(0))
        .into_par_iter()
        .map(|row| {
            let b: Vec<f64> = s.dot(&row).to_vec();
            let mut x = vec![0.0; k];
            let (sweeps, ok) = solve_quadratic(&gram, &b, lambda, true, &mut x);
            (x, sweeps, ok)
        })
        .collect();

    let mut c = Array2::<f64>::zeros((d.values.nrows(), k));
    let mut iterations = 0;
    let mut converged = true;
    for (i, (x, sweeps, ok)) in rows.into_iter().enumerate() {
        c.row_mut(i).assign(&Array1::from(x));
        iterations = iterations.max(sweeps);
        converged &= ok;
    }
    let e = &d.values - &c.dot(s);
    Ok(UnmixResult {
        c,
        s: s.clone(),
        e,
        k,
        iterations,
        converged,
        objective: Vec::new(),
        collapsed: Vec::new(),
        dims: Some((d.nx, d.ny)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McrOptions {
    pub max_iter: usize,
    /// Stop when the relative change of `‖D − C·S‖_F` drops below this.
    pub tol: f64,
    pub nonneg_c: bool,
    pub nonneg_s: bool,
    /// Keep `S` fixed: a single non-negative least-squares pass for `C`.
    pub fix_s: bool,
}

impl Default for McrOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-10,
            nonneg_c: true,
            nonneg_s: true,
            fix_s: false,
        }
    }
}

fn solve_rows(
    gram: &Array2<f64>,
    rhs: &Array2<f64>,
    warm: &Array2<f64>,
    nonneg: bool,
) -> (Array2<f64>, bool) {
    let solved: Vec<(Vec<f64>, bool)> = rhs
        .axis_iter(NdAxis(0))
        .into_par_iter()
        .zip(warm.axis_iter(NdAxis(0)).into_par_iter())
        .map(|(b, w)| {
            let b = b.to_vec();
            let mut x = w.to_vec();
            let (_, ok) = solve_quadratic(gram, &b, 0.0, nonneg, &mut x);
            (x, ok)
        })
        .collect();
    let mut out = Array2::<f64>::zeros(warm.dim());
    let mut all_ok = true;
    for (i, (x, ok)) in solved.into_iter().enumerate() {
        out.row_mut(i).assign(&Array1::from(x));
        all_ok &= ok;
    }
    (out, all_ok)
}

/// Multivariate curve resolution by alternating (non-negative) least squares.
///
/// Each full iteration solves for `C` given `S`, then for `S` given `C`, both
/// exactly, so `‖D − C·S‖_F` is non-increasing unless a component collapses
/// (its concentrations all reach zero); a collapsed component's spectrum is
/// reseeded from the residual row of largest norm and recorded in
/// `collapsed`. Returned spectra are scaled to unit maximum (concentrations
/// absorb the scale).
pub fn mcr_als(d: &DataMatrix, s_init: &Array2<f64>, opts: &McrOptions) -> Result<UnmixResult> {
    check_spectra(d, s_init)?;
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be positive"));
    }
    let k = s_init.nrows();
    let dv = &d.values;
    let mut s = s_init.clone();
    let mut c = Array2::<f64>::zeros((dv.nrows(), k));
    let mut objective = Vec::new();
    let mut collapsed = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        // C half-step: rows of D against S
        let gram_s = s.dot(&s.t());
        let rhs_c = dv.dot(&s.t());
        let (c_new, _) = solve_rows(&gram_s, &rhs_c, &c, opts.nonneg_c);
        c = c_new;

        if opts.fix_s {
            objective.push(frobenius(&(dv - &c.dot(&s))));
            converged = true;
            break;
        }

        for kk in 0..k {
            if c.column(kk).iter().all(|&v| v == 0.0) {
                let resid = dv - &c.dot(&s);
                let best = resid
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| (i, r.dot(&r)))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                let mut seed = resid.row(best).to_owned();
                if opts.nonneg_s {
                    let clipped = seed.mapv(|v| v.max(0.0));
                    seed = if clipped.iter().any(|&v| v > 0.0) {
                        clipped
                    } else {
                        seed.mapv(f64::abs)
                    };
                }
                if seed.iter().any(|&v| v != 0.0) {
                    s.row_mut(kk).assign(&seed);
                }
                collapsed.push(kk);
            }
        }

        // S half-step: columns of D against C
        let gram_c = c.t().dot(&c);
        let rhs_s = c.t().dot(dv).reversed_axes();
        let (st, _) = solve_rows(&gram_c, &rhs_s, &s.t().to_owned(), opts.nonneg_s);
        s = st.reversed_axes().as_standard_layout().into_owned();

        normalise(&mut c, &mut s, opts.nonneg_s);

        let obj = frobenius(&(dv - &c.dot(&s)));
        let prev = objective.last().copied();
        objective.push(obj);
        if let Some(prev) = prev {
            if (prev - obj).abs() <= opts.tol * prev.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }

    normalise(&mut c, &mut s, opts.nonneg_s);
    let e = dv - &c.dot(&s);
    Ok(UnmixResult {
        c,
        s,
        e,
        k,
        iterations,
        converged,
        objective,
        collapsed,
        dims: Some((d.nx, d.ny)),
    })
}

fn normalise(c: &mut Array2<f64>, s: &mut Array2<f64>, nonneg: bool) {
    for kk in 0..s.nrows() {
        let m = if nonneg {
            s.row(kk).iter().cloned().fold(0.0f64, f64::max)
        } else {
            s.row(kk).iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        if m > 0.0 && m.is_finite() {
            s.row_mut(kk).mapv_inplace(|v| v / m);
            c.column_mut(kk).mapv_inplace(|v| v * m);
        }
    }
}

/// Per-pixel first-harmonic spectral phasor coordinates.
///
/// `G = Σₙ I(n)·e^{−i2πhn/N} / Σₙ I(n)`, `g = Re G`, `s = −Im G`, i.e.
/// `g = Σ I cos θₙ / Σ I` and `s = Σ I sin θₙ / Σ I`. A delta at frame 0 sits
/// at `(1, 0)` and a delta at frame `k` at angle `+2πhk/N`. Pixels with zero
/// total intensity are put at the origin and flagged in `zero`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasorMap {
    pub g: Array2<f64>,
    pub s: Array2<f64>,
    pub zero: Array2<bool>,
    pub harmonic: usize,
    pub masks: BTreeMap<String, Vec<(usize, usize)>>,
}

pub fn spectral_phasor(cube: &HyperCube, harmonic: usize) -> Result<PhasorMap> {
    let (nx, ny, nw) = cube.dims();
    if nw < 2 {
        return Err(Error::invalid("phasor needs at least 2 spectral frames"));
    }
    if harmonic == 0 {
        return Err(Error::invalid("harmonic must be >= 1"));
    }
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..nw)
        .map(|n| {
            let th = 2.0 * PI * (harmonic * n) as f64 / nw as f64;
            (th.cos(), th.sin())
        })
        .unzip();
    let mut g = Array2::<f64>::zeros((nx, ny));
    let mut s = Array2::<f64>::zeros((nx, ny));
    let mut zero = Array2::<bool>::from_elem((nx, ny), false);
    let data = cube.data();
    for x in 0..nx {
        for y in 0..ny {
            let mut total = 0.0;
            let mut re = 0.0;
            let mut im = 0.0;
            for n in 0..nw {
                let v = data[[x, y, n]] as f64;
                total += v;
                re += v * cos[n];
                im += v * sin[n];
            }
            if total == 0.0 {
                zero[[x, y]] = true;
            } else {
                g[[x, y]] = re / total;
                s[[x, y]] = im / total;
            }
        }
    }
    Ok(PhasorMap {
        g,
        s,
        zero,
        harmonic,
        masks: BTreeMap::new(),
    })
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: (f64, f64), polygon: &[(f64, f64)]) -> bool {
    let (px, py) = p;
    let mut inside = false;
    let n = polygon.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhasorSelection {
    pub mask: Vec<(usize, usize)>,
    /// Mean spectrum over the masked pixels.
    pub spectrum: Vec<f64>,
}

/// Pixels whose phasor falls inside `polygon` and their mean spectrum.
pub fn phasor_select(
    map: &PhasorMap,
    polygon: &[(f64, f64)],
    cube: &HyperCube,
) -> Result<PhasorSelection> {
    if polygon.len() < 3 {
        return Err(Error::invalid(format!(
            "selection polygon needs at least 3 vertices, got {}",
            polygon.len()
        )));
    }
    let (nx, ny, nw) = cube.dims();
    if map.g.dim() != (nx, ny) {
        return Err(Error::Shape("phasor map and cube differ in size".into()));
    }
    let mut mask = Vec::new();
    let mut spectrum = vec![0.0; nw];
    for x in 0..nx {
        for y in 0..ny {
            if map.zero[[x, y]] {
                continue;
            }
            if point_in_polygon((map.g[[x, y]], map.s[[x, y]]), polygon) {
                mask.push((x, y));
                for (n, acc) in spectrum.iter_mut().enumerate() {
                    *acc += cube.data()[[x, y, n]] as f64;
                }
            }
        }
    }
    if mask.is_empty() {
        return Err(Error::invalid(format!(
            "polygon {polygon:?} selects no pixels"
        )));
    }
    let count = mask.len() as f64;
    spectrum.iter_mut().for_each(|v| *v /= count);
    Ok(PhasorSelection { mask, spectrum })
}

impl PhasorMap {
    /// Runs [`phasor_select`] and keeps the mask under `name`.
    pub fn select_named(
        &mut self,
        name: &str,
        polygon: &[(f64, f64)],
        cube: &HyperCube,
    ) -> Result<Vec<f64>> {
        let sel = phasor_select(self, polygon, cube)?;
        self.masks.insert(name.to_string(), sel.mask);
        Ok(sel.spectrum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn cube(data: Array3<f32>) -> HyperCube {
        HyperCube::new(data).unwrap()
    }

    #[test]
    fn reshape_layout_and_round_trip() {
        let data = Array3::from_shape_fn((2, 2, 3), |(x, y, n)| (x * 100 + y * 10 + n) as f32);
        let c = cube(data);
        let m = reshape_cube(&c);
        assert_eq!(m.values.dim(), (4, 3));
        // pixel (x=1, y=0) is row x·N_y + y = 2
        assert_eq!(m.row_of(1, 0), 2);
        assert_eq!(m.values.row(2).to_vec(), vec![100.0, 101.0, 102.0]);
        assert_eq!(to_cube(&m, &c).unwrap(), c);
        let img = unreshape(m.values.column(1), (2, 2)).unwrap();
        assert_eq!(img.data, array![[1.0f32, 11.0], [101.0, 111.0]]);
        assert!(unreshape(m.values.column(1), (3, 2)).is_err());
    }

    #[test]
    fn lasso_unit_vector_closed_form() {
        let d = DataMatrix::new(array![[3.0, -2.0, 1.0], [0.5, 4.0, -1.0]], 2, 1).unwrap();
        let s = array![[0.0, 1.0, 0.0]];
        let r = lasso_unmix(&d, &s, 0.0).unwrap();
        assert_eq!(r.c[[0, 0]], 0.0);
        assert!((r.c[[1, 0]] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lasso_kill_condition() {
        let d = DataMatrix::new(array![[1.0, 2.0, 0.5, 0.1]], 1, 1).unwrap();
        let s = array![[1.0, 0.5, 0.0, 0.0], [0.0, 1.0, 1.0, 0.2]];
        let row = d.values.row(0);
        let lam_max = s
            .rows()
            .into_iter()
            .map(|sk| sk.dot(&row).abs())
            .fold(0.0, f64::max);
        let r = lasso_unmix(&d, &s, lam_max).unwrap();
        assert!(r.c.iter().all(|&v| v == 0.0));
        let r = lasso_unmix(&d, &s, lam_max * 0.9).unwrap();
        assert!(r.c.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn lasso_rejects_bad_inputs() {
        let d = DataMatrix::new(array![[1.0, 2.0]], 1, 1).unwrap();
        assert!(lasso_unmix(&d, &array![[0.0, 0.0]], 0.0).is_err());
        assert!(lasso_unmix(&d, &array![[1.0, f64::NAN]], 0.0).is_err());
        assert!(lasso_unmix(&d, &array![[1.0, 0.0, 1.0]], 0.0).is_err());
        assert!(lasso_unmix(&d, &array![[1.0, 0.0]], -1.0).is_err());
    }

    #[test]
    fn fix_s_matches_lasso_at_zero_lambda() {
        let d = DataMatrix::new(
            array![[1.0, 2.0, 0.5, 0.0], [0.2, 0.1, 2.0, 1.0], [1.0, 1.0, 1.0, 1.0]],
            3,
            1,
        )
        .unwrap();
        let s = array![[1.0, 0.8, 0.1, 0.0], [0.0, 0.2, 1.0, 0.6]];
        let lasso = lasso_unmix(&d, &s, 0.0).unwrap();
        let mcr = mcr_als(
            &d,
            &s,
            &McrOptions {
                fix_s: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(mcr.s, s);
        for (a, b) in lasso.c.iter().zip(mcr.c.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn phasor_of_delta_and_flat() {
        let n = 8;
        for k in 0..n {
            let mut data = Array3::<f32>::zeros((1, 1, n));
            data[[0, 0, k]] = 2.0;
            let m = spectral_phasor(&cube(data), 1).unwrap();
            let th = 2.0 * PI * k as f64 / n as f64;
            assert!((m.g[[0, 0]] - th.cos()).abs() < 1e-12);
            assert!((m.s[[0, 0]] - th.sin()).abs() < 1e-12);
        }
        let flat = spectral_phasor(&cube(Array3::from_elem((1, 1, n), 3.0)), 1).unwrap();
        assert!(flat.g[[0, 0]].abs() < 1e-12 && flat.s[[0, 0]].abs() < 1e-12);
        let zero = spectral_phasor(&cube(Array3::zeros((1, 1, n))), 1).unwrap();
        assert!(zero.zero[[0, 0]]);
    }

    #[test]
    fn phasor_polygon_rules() {
        let mut data = Array3::<f32>::zeros((2, 1, 4));
        data[[0, 0, 0]] = 1.0;
        let c = cube(data);
        let map = spectral_phasor(&c, 1).unwrap();
        let disk: Vec<(f64, f64)> = (0..64)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 64.0;
                (1.1 * t.cos(), 1.1 * t.sin())
            })
            .collect();
        let sel = phasor_select(&map, &disk, &c).unwrap();
        assert_eq!(sel.mask, vec![(0, 0)]);
        assert!(phasor_select(&map, &[(0.0, 0.0), (1.0, 1.0)], &c).is_err());
        let far = [(5.0, 5.0), (6.0, 5.0), (6.0, 6.0)];
        let err = phasor_select(&map, &far, &c).unwrap_err();
        assert!(err.to_string().contains("5.0"), "{err}");
    }
}
