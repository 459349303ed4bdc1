//! PNG previews: frame images, training curves, phasor scatter, FRC curves.

use std::path::Path;

use anyhow::Result;
use ndarray::{Array2, Axis as NdAxis};
use spend_core::metrics::FrcCurve;
use spend_core::raster::{line_plot, scatter_plot, Canvas};
use spend_core::unmix::PhasorMap;
use spend_core::{HyperCube, Image};
use spend_nnet::EpochRecord;

use crate::io::ensure_parent;

const PLOT: (usize, usize) = (480, 320);

/// Mean over ω, the image a camera would record with all channels open.
pub fn mean_image(cube: &HyperCube) -> Result<Image> {
    let mean: Array2<f32> = cube
        .data()
        .mean_axis(NdAxis(2))
        .expect("cubes have at least one frame");
    Ok(Image::new(mean)?)
}

/// Upscales small images so previews are not postage stamps.
fn enlarge(c: &Canvas, min_side: usize) -> Canvas {
    let f = (min_side / c.width.min(c.height).max(1)).max(1);
    if f == 1 {
        return c.clone();
    }
    let mut out = Canvas::new(c.width * f, c.height * f, [0, 0, 0]);
    for y in 0..out.height {
        for x in 0..out.width {
            out.set(x as i64, y as i64, c.get(x / f, y / f));
        }
    }
    out
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    enlarge(&Canvas::from_frame(image.data.view()), 256).save_png(path)?;
    Ok(())
}

pub fn save_mean_image(cube: &HyperCube, path: &Path) -> Result<()> {
    save_image(&mean_image(cube)?, path)
}

/// Training (first series) and validation (second series) loss per epoch.
pub fn save_loss_curve(history: &[EpochRecord], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let train: Vec<(f64, f64)> = history.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
    let val: Vec<(f64, f64)> = history.iter().map(|r| (r.epoch as f64, r.val_loss)).collect();
    line_plot(&[train, val], &[], PLOT.0, PLOT.1).save_png(path)?;
    Ok(())
}

/// Phasor scatter with one colour per pixel group; groups index into
/// `(x, y)` pixel lists.
pub fn save_phasor_scatter(map: &PhasorMap, groups: &[Vec<(usize, usize)>], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let pts: Vec<Vec<(f64, f64)>> = groups
        .iter()
        .map(|g| {
            g.iter()
                .filter(|&&(x, y)| !map.zero[[x, y]])
                .map(|&(x, y)| (map.g[[x, y]], map.s[[x, y]]))
                .collect()
        })
        .collect();
    scatter_plot(&pts, PLOT.0, PLOT.0).save_png(path)?;
    Ok(())
}

/// FRC curves with the 1/7 threshold drawn as a guide.
pub fn save_frc(curves: &[&FrcCurve], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let series: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| c.points.iter().map(|p| p.0).zip(c.smoothed.iter().copied()).collect())
        .collect();
    line_plot(&series, &[1.0 / 7.0], PLOT.0, PLOT.1).save_png(path)?;
    Ok(())
}
