//! Binary PPM (P6) images: matrix heatmaps and a log-likelihood trace.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::io::{numbered_header, write_atomic, write_matrix_csv};

/// Color scale of a heatmap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    /// White at the minimum through dark red at the maximum.
    Sequential,
    /// Blue for negative, white at zero, red for positive, symmetric in the
    /// largest absolute value.
    Diverging,
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

const WHITE: [u8; 3] = [255, 255, 255];
const RED: [u8; 3] = [165, 15, 21];
const BLUE: [u8; 3] = [8, 69, 148];
const BLACK: [u8; 3] = [0, 0, 0];
const GREY: [u8; 3] = [170, 170, 170];

fn color(x: f64, lo: f64, hi: f64, scale: Scale) -> [u8; 3] {
    if !x.is_finite() {
        return BLACK;
    }
    match scale {
        Scale::Sequential => {
            let t = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
            lerp(WHITE, RED, t)
        }
        Scale::Diverging => {
            let m = lo.abs().max(hi.abs());
            if m == 0.0 {
                WHITE
            } else if x >= 0.0 {
                lerp(WHITE, RED, x / m)
            } else {
                lerp(WHITE, BLUE, -x / m)
            }
        }
    }
}

fn ppm(width: usize, height: usize, pixels: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(pixels.len() * 3);
    for p in pixels {
        out.extend_from_slice(p);
    }
    out
}

/// Heatmap with each matrix entry drawn as a `cell x cell` square.
pub fn heatmap_ppm(m: &DMatrix<f64>, cell: usize, scale: Scale) -> Vec<u8> {
    let cell = cell.max(1);
    let finite = m.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (m.ncols() * cell, m.nrows() * cell);
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            px.push(color(m[(y / cell, x / cell)], lo, hi, scale));
        }
    }
    ppm(w, h, &px)
}

/// Line plot of `values` against their index, with an optional vertical
/// marker (for the end of burn-in).
pub fn trace_ppm(values: &[f64], marker: Option<usize>, width: usize, height: usize) -> Vec<u8> {
    let (width, height) = (width.max(2), height.max(2));
    let mut px = vec![WHITE; width * height];
    let finite: Vec<(usize, f64)> = values.iter().copied().enumerate().filter(|(_, v)| v.is_finite()).collect();
    let n = values.len().max(2);
    let to_x = |i: usize| ((i as f64 / (n - 1) as f64) * (width - 1) as f64).round() as usize;
    if let Some(m) = marker.filter(|&m| m < n) {
        let x = to_x(m);
        for y in 0..height {
            px[y * width + x] = GREY;
        }
    }
    if finite.is_empty() {
        return ppm(width, height, &px);
    }
    let lo = finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let to_y = |v: f64| {
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        ((1.0 - t) * (height - 1) as f64).round() as usize
    };
    let mut prev: Option<(usize, usize)> = None;
    for &(i, v) in &finite {
        let (x, y) = (to_x(i), to_y(v));
        if let Some((px0, py0)) = prev {
            let steps = px0.abs_diff(x).max(py0.abs_diff(y)).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let xx = (px0 as f64 + (x as f64 - px0 as f64) * t).round() as usize;
                let yy = (py0 as f64 + (y as f64 - py0 as f64) * t).round() as usize;
                px[yy * width + xx] = BLACK;
            }
        } else {
            px[y * width + x] = BLACK;
        }
        prev = Some((x, y));
    }
    ppm(width, height, &px)
}

/// Writes `<stem>.ppm` and the backing `<stem>.csv` into `dir`.
pub fn write_heatmap(dir: &Path, stem: &str, m: &DMatrix<f64>, scale: Scale) -> Result<()> {
    let cell = (600 / m.nrows().max(1)).clamp(1, 24);
    write_atomic(&dir.join(format!("{stem}.ppm")), &heatmap_ppm(m, cell, scale))?;
    write_matrix_csv(&dir.join(format!("{stem}.csv")), m, &numbered_header("c", m.ncols()))
}
