//! Ground-truth phantoms and noise models.
//!
//! A phantom is a sum of components, each a non-negative spatial map times a
//! non-negative spectrum, plus a constant background. [`corrupt`] adds three
//! noise classes on top:
//!
//! * white noise with std `sigma_iid`;
//! * an AR(1) process along the cube's fast axis, coefficient `rho_fast` and
//!   stationary std `sigma_corr`, restarted on every line;
//! * zero-mean Gaussian noise whose std is `k_resonance` times the clean value
//!   (noise that peaks on resonance together with the signal).
//!
//! An optional shot-noise term replaces each clean value `v` by
//! `gain * Poisson(v / gain)` before the additive terms.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubeio::{HyperCube, ScanOrder};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::unmix::UnmixResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    /// Hard-edged disk: every pixel within `radius` of the centre gets `amplitude`.
    Disk {
        cx: f64,
        cy: f64,
        radius: f64,
        amplitude: f64,
    },
    /// Isotropic Gaussian blob with peak `amplitude`.
    Blob {
        cx: f64,
        cy: f64,
        sigma: f64,
        amplitude: f64,
    },
    Constant {
        amplitude: f64,
    },
}

impl Shape {
    fn amplitude(&self) -> f64 {
        match *self {
            Shape::Disk { amplitude, .. }
            | Shape::Blob { amplitude, .. }
            | Shape::Constant { amplitude } => amplitude,
        }
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Disk {
                cx,
                cy,
                radius,
                amplitude,
            } => {
                if (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius {
                    amplitude
                } else {
                    0.0
                }
            }
            Shape::Blob {
                cx,
                cy,
                sigma,
                amplitude,
            } => amplitude * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp(),
            Shape::Constant { amplitude } => amplitude,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Peak {
    /// `height / (1 + ((n - center) / width)^2)`; `width` is the half width at
    /// half maximum in frames.
    Lorentzian { center: f64, width: f64, height: f64 },
    /// `height` at a single frame.
    Delta { index: usize, height: f64 },
}

impl Peak {
    fn value(&self, n: usize) -> f64 {
        match *self {
            Peak::Lorentzian {
                center,
                width,
                height,
            } => height / (1.0 + ((n as f64 - center) / width).powi(2)),
            Peak::Delta { index, height } => {
                if index == n {
                    height
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub shapes: Vec<Shape>,
    pub peaks: Vec<Peak>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// `(n_x, n_y, n_ω)`.
    pub dims: [usize; 3],
    pub components: Vec<ComponentSpec>,
    #[serde(default)]
    pub background: f64,
    /// First and last wavenumber (cm⁻¹); samples are spaced linearly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavenumber_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_size_nm: Option<f64>,
    /// Acquisition order, fastest axis first. The fastest axis carries the
    /// correlated noise.
    #[serde(default)]
    pub axis_order: ScanOrder,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let [nx, ny, nw] = self.dims;
        if nx == 0 || ny == 0 || nw == 0 {
            return Err(Error::invalid("phantom dimensions must be at least 1"));
        }
        if self.components.is_empty() {
            return Err(Error::invalid("phantom needs at least one component"));
        }
        if !(self.background.is_finite() && self.background >= 0.0) {
            return Err(Error::invalid("background must be finite and non-negative"));
        }
        for (k, comp) in self.components.iter().enumerate() {
            for shape in &comp.shapes {
                let amp = shape.amplitude();
                if !(amp.is_finite() && amp >= 0.0) {
                    return Err(Error::invalid(format!(
                        "component {k}: amplitudes must be non-negative"
                    )));
                }
                match *shape {
                    Shape::Disk { radius, .. } if !(radius >= 0.0) => {
                        return Err(Error::invalid(format!("component {k}: negative radius")))
                    }
                    Shape::Blob { sigma, .. } if !(sigma > 0.0) => {
                        return Err(Error::invalid(format!("component {k}: blob sigma must be positive")))
                    }
                    _ => {}
                }
            }
            for peak in &comp.peaks {
                match *peak {
                    Peak::Lorentzian {
                        center,
                        width,
                        height,
                    } => {
                        if !(center >= 0.0 && center < nw as f64) {
                            return Err(Error::invalid(format!(
                                "component {k}: peak centre {center} outside [0, {nw})"
                            )));
                        }
                        if !(width > 0.0) || !(height.is_finite() && height >= 0.0) {
                            return Err(Error::invalid(format!(
                                "component {k}: peak width must be positive and height non-negative"
                            )));
                        }
                    }
                    Peak::Delta { index, height } => {
                        if index >= nw {
                            return Err(Error::invalid(format!(
                                "component {k}: delta index {index} outside [0, {nw})"
                            )));
                        }
                        if !(height.is_finite() && height >= 0.0) {
                            return Err(Error::invalid(format!(
                                "component {k}: peak height must be non-negative"
                            )));
                        }
                    }
                }
            }
        }
        if let Some([a, b]) = self.wavenumber_range {
            if !(a.is_finite() && b.is_finite()) || (nw > 1 && a == b) {
                return Err(Error::invalid("wavenumber range must be finite and non-degenerate"));
            }
        }
        Ok(())
    }
}

/// Builds the clean cube and the exact factors it was built from.
///
/// `truth.c` is `(n_x·n_y) × K` in raster order (see [`crate::unmix`]),
/// `truth.s` is `K × n_ω`, and `truth.e` holds the constant background, so
/// `c·s + e` reproduces the clean cube.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(HyperCube, UnmixResult)> {
    spec.validate()?;
    let [nx, ny, nw] = spec.dims;
    let k = spec.components.len();

    let mut c = Array2::<f64>::zeros((nx * ny, k));
    let mut s = Array2::<f64>::zeros((k, nw));
    for (ki, comp) in spec.components.iter().enumerate() {
        for x in 0..nx {
            for y in 0..ny {
                c[[x * ny + y, ki]] = comp
                    .shapes
                    .iter()
                    .map(|sh| sh.value(x as f64, y as f64))
                    .sum();
            }
        }
        for n in 0..nw {
            s[[ki, n]] = comp.peaks.iter().map(|p| p.value(n)).sum();
        }
    }

    let recon = c.dot(&s);
    let clean64 = recon.mapv(|v| v + spec.background);
    let data = Array3::from_shape_fn((nx, ny, nw), |(x, y, n)| clean64[[x * ny + y, n]] as f32);
    let e = Array2::from_shape_fn((nx * ny, nw), |(i, n)| {
        data[[i / ny, i % ny, n]] as f64 - recon[[i, n]]
    });

    let mut cube = HyperCube::new(data)?;
    cube.axis_order = spec.axis_order;
    cube.fast_axis = spec.axis_order.fastest();
    cube.pixel_size = spec.pixel_size_nm;
    cube.wavenumbers = spec.wavenumber_range.map(|[a, b]| {
        if nw == 1 {
            vec![a]
        } else {
            (0..nw)
                .map(|i| a + (b - a) * i as f64 / (nw - 1) as f64)
                .collect()
        }
    });

    let truth = UnmixResult {
        c,
        s,
        e,
        k,
        iterations: 0,
        converged: true,
        objective: Vec::new(),
        collapsed: Vec::new(),
        dims: Some((nx, ny)),
    };
    Ok((cube, truth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub sigma_iid: f64,
    #[serde(default)]
    pub rho_fast: f64,
    #[serde(default)]
    pub sigma_corr: f64,
    #[serde(default)]
    pub k_resonance: f64,
    #[serde(default)]
    pub poisson_gain: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn silent(seed: u64) -> Self {
        Self {
            sigma_iid: 0.0,
            rho_fast: 0.0,
            sigma_corr: 0.0,
            k_resonance: 0.0,
            poisson_gain: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_iid", self.sigma_iid),
            ("rho_fast", self.rho_fast),
            ("sigma_corr", self.sigma_corr),
            ("k_resonance", self.k_resonance),
            ("poisson_gain", self.poisson_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.rho_fast >= 1.0 {
            return Err(Error::invalid("rho_fast must be < 1"));
        }
        Ok(())
    }
}

/// Adds noise to a clean cube. Deterministic in `(clean, noise)`; each line
/// along the fast axis draws from its own substream keyed by the line index,
/// so the result does not depend on thread scheduling.
pub fn corrupt(clean: &HyperCube, noise: &NoiseSpec) -> Result<HyperCube> {
    noise.validate()?;
    let axis = clean.fast_axis;
    let data = clean.data();
    let n = clean.extent(axis);
    let [b, c] = axis.others();
    let (nb, nc) = (clean.extent(b), clean.extent(c));

    let lines: Vec<Vec<f32>> = (0..nb * nc)
        .into_par_iter()
        .map(|line| {
            let (ib, ic) = (line / nc, line % nc);
            let mut rng = substream(noise.seed, &[line as u64]);
            let mut out = Vec::with_capacity(n);
            let innov = (1.0 - noise.rho_fast * noise.rho_fast).sqrt();
            let mut ar = 0.0f64;
            for t in 0..n {
                let mut idx = [0usize; 3];
                idx[axis.index()] = t;
                idx[b.index()] = ib;
                idx[c.index()] = ic;
                let v = data[idx] as f64;

                let z_ar: f64 = rng.sample(StandardNormal);
                let z_iid: f64 = rng.sample(StandardNormal);
                let z_spec: f64 = rng.sample(StandardNormal);
                ar = if t == 0 {
                    noise.sigma_corr * z_ar
                } else {
                    noise.rho_fast * ar + innov * noise.sigma_corr * z_ar
                };

                let mut value = v;
                if noise.poisson_gain > 0.0 {
                    let rate = v.max(0.0) / noise.poisson_gain;
                    let count = if rate > 0.0 {
                        Poisson::new(rate)
                            .map(|p| p.sample(&mut rng))
                            .unwrap_or(rate)
                    } else {
                        0.0
                    };
                    value = noise.poisson_gain * count;
                }
                value += ar + noise.sigma_iid * z_iid + noise.k_resonance * v.abs() * z_spec;
                out.push(value as f32);
            }
            out
        })
        .collect();

    let mut noisy = Array3::<f32>::zeros(clean.dims());
    for (line, values) in lines.into_iter().enumerate() {
        let (ib, ic) = (line / nc, line % nc);
        for (t, v) in values.into_iter().enumerate() {
            let mut idx = [0usize; 3];
            idx[axis.index()] = t;
            idx[b.index()] = ib;
            idx[c.index()] = ic;
            noisy[idx] = v;
        }
    }
    clean.with_data(noisy)
}

/// Pixels (in `(x, y)` order) where the total truth concentration is at least
/// `frac` of its maximum, and pixels where every component is zero. Handy as
/// signal / background regions for SNR measurements.
pub fn truth_rois(truth: &UnmixResult, frac: f64) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let (_, ny) = truth
        .dims
        .ok_or_else(|| Error::invalid("truth has no spatial dimensions"))?;
    let totals: Vec<f64> = truth.c.rows().into_iter().map(|r| r.sum()).collect();
    let max = totals.iter().cloned().fold(0.0f64, f64::max);
    let mut signal = Vec::new();
    let mut background = Vec::new();
    for (i, &t) in totals.iter().enumerate() {
        let px = (i / ny, i % ny);
        if max > 0.0 && t >= frac * max {
            signal.push(px);
        } else if t == 0.0 {
            background.push(px);
        }
    }
    Ok((signal, background))
}

/// Phantom helper used by demos and tests: two disks with distinct,
/// well-separated Lorentzian spectra on a zero background.
pub fn two_disk_phantom(n_x: usize, n_y: usize, n_w: usize) -> PhantomSpec {
    let (fx, fy, fw) = (n_x as f64, n_y as f64, n_w as f64);
    let r = fx.min(fy) * 0.22;
    PhantomSpec {
        dims: [n_x, n_y, n_w],
        components: vec![
            ComponentSpec {
                shapes: vec![Shape::Disk {
                    cx: fx * 0.3,
                    cy: fy * 0.32,
                    radius: r,
                    amplitude: 1.0,
                }],
                peaks: vec![Peak::Lorentzian {
                    center: fw * 0.3,
                    width: fw * 0.12,
                    height: 1.0,
                }],
            },
            ComponentSpec {
                shapes: vec![Shape::Disk {
                    cx: fx * 0.68,
                    cy: fy * 0.66,
                    radius: r,
                    amplitude: 1.0,
                }],
                peaks: vec![Peak::Lorentzian {
                    center: fw * 0.7,
                    width: fw * 0.12,
                    height: 1.0,
                }],
            },
        ],
        background: 0.0,
        wavenumber_range: None,
        pixel_size_nm: None,
        axis_order: ScanOrder::default(),
    }
}
