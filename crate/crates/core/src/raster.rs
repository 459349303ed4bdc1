//! Minimal RGB raster with PNG output, for frame previews, phasor scatter
//! plots and curve plots.
//!
//! The PNG encoder writes uncompressed (stored) deflate blocks, which every
//! decoder accepts.

use std::fs;
use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
pub const GREY: Rgb = [160, 160, 160];
pub const PALETTE: [Rgb; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pixels: Vec<Rgb>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    /// Grayscale rendering of a frame, min to black and max to white.
    /// Rows of the array become rows of the image.
    pub fn from_frame(frame: ArrayView2<'_, f32>) -> Self {
        let (h, w) = frame.dim();
        let lo = frame.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = frame.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut c = Self::new(w, h, BLACK);
        for ((i, j), &v) in frame.indexed_iter() {
            let g = (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
            c.set(j as i64, i as i64, [g, g, g]);
        }
        c
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Sets a pixel; coordinates outside the canvas are ignored.
    pub fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = color;
        }
    }

    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn dot(&mut self, x: i64, y: i64, radius: i64, color: Rgb) {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    self.set(x + dx, y + dy, color);
                }
            }
        }
    }

    /// PNG file bytes (8-bit RGB).
    pub fn encode_png(&self) -> Vec<u8> {
        let mut raw = Vec::with_capacity(self.height * (1 + 3 * self.width));
        for row in self.pixels.chunks(self.width.max(1)) {
            raw.push(0); // filter: none
            for p in row {
                raw.extend_from_slice(p);
            }
        }
        let mut ihdr = Vec::with_capacity(13);
        ihdr.extend_from_slice(&(self.width as u32).to_be_bytes());
        ihdr.extend_from_slice(&(self.height as u32).to_be_bytes());
        ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);

        let mut out = b"\x89PNG\r\n\x1a\n".to_vec();
        chunk(&mut out, b"IHDR", &ihdr);
        chunk(&mut out, b"IDAT", &zlib_stored(&raw));
        chunk(&mut out, b"IEND", &[]);
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }
}

fn chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    let mut crc = crc32fast::Hasher::new();
    crc.update(kind);
    crc.update(data);
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    out.extend_from_slice(&crc.finalize().to_be_bytes());
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for chunk in data.chunks(5552) {
        for &v in chunk {
            a += u32::from(v);
            b += a;
        }
        a %= 65521;
        b %= 65521;
    }
    (b << 16) | a
}

fn zlib_stored(data: &[u8]) -> Vec<u8> {
    const MAX_BLOCK: usize = 65535;
    let mut out = vec![0x78, 0x01];
    let blocks: Vec<&[u8]> = if data.is_empty() { vec![&[]] } else { data.chunks(MAX_BLOCK).collect() };
    for (i, block) in blocks.iter().enumerate() {
        out.push(u8::from(i + 1 == blocks.len()));
        let len = block.len() as u16;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&(!len).to_le_bytes());
        out.extend_from_slice(block);
    }
    out.extend_from_slice(&adler32(data).to_be_bytes());
    out
}

/// Axis-aligned data-to-pixel mapping with a fixed margin.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    width: usize,
    height: usize,
}

const MARGIN: usize = 20;

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, width: usize, height: usize) -> Self {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for (a, b) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
        let widen = |r: (f64, f64)| {
            if !r.0.is_finite() {
                (0.0, 1.0)
            } else if r.1 > r.0 {
                r
            } else {
                (r.0 - 0.5, r.1 + 0.5)
            }
        };
        Self {
            x: widen(x),
            y: widen(y),
            width,
            height,
        }
    }

    fn px(&self, (a, b): (f64, f64)) -> (i64, i64) {
        let w = (self.width - 2 * MARGIN) as f64;
        let h = (self.height - 2 * MARGIN) as f64;
        let u = (a - self.x.0) / (self.x.1 - self.x.0) * w;
        let v = (b - self.y.0) / (self.y.1 - self.y.0) * h;
        (MARGIN as i64 + u.round() as i64, (self.height - MARGIN) as i64 - v.round() as i64)
    }

    fn axes(&self, c: &mut Canvas) {
        let (l, b) = (MARGIN as i64, (self.height - MARGIN) as i64);
        let (r, t) = ((self.width - MARGIN) as i64, MARGIN as i64);
        c.line((l, b), (r, b), BLACK);
        c.line((l, b), (l, t), BLACK);
    }
}

/// Line plot of several series with shared, automatically fitted axes.
/// `hlines` are drawn as grey horizontal guides (e.g. a threshold).
pub fn line_plot(series: &[Vec<(f64, f64)>], hlines: &[f64], width: usize, height: usize) -> Canvas {
    let mut c = Canvas::new(width.max(2 * MARGIN + 2), height.max(2 * MARGIN + 2), WHITE);
    let pts = series.iter().flatten().copied().chain(hlines.iter().map(|&h| (f64::NAN, h)));
    let f = Frame::fit(pts, c.width, c.height);
    f.axes(&mut c);
    for &h in hlines {
        let (l, y) = f.px((f.x.0, h));
        let (r, _) = f.px((f.x.1, h));
        c.line((l, y), (r, y), GREY);
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for w in s.windows(2) {
            c.line(f.px(w[0]), f.px(w[1]), color);
        }
        if s.len() == 1 {
            let (x, y) = f.px(s[0]);
            c.dot(x, y, 1, color);
        }
    }
    c
}

/// Scatter plot of labelled point groups.
pub fn scatter_plot(groups: &[Vec<(f64, f64)>], width: usize, height: usize) -> Canvas {
    let mut c = Canvas::new(width.max(2 * MARGIN + 2), height.max(2 * MARGIN + 2), WHITE);
    let f = Frame::fit(groups.iter().flatten().copied(), c.width, c.height);
    f.axes(&mut c);
    for (k, g) in groups.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for &p in g {
            let (x, y) = f.px(p);
            c.set(x, y, color);
        }
    }
    c
}
