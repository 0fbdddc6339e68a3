//! 8-bit grayscale renders of slices, masks and contour overlays (binary PGM).

use std::path::Path;

use crate::contour::{BinaryMask, ContourPair, Polygon, SliceGrid};
use crate::{Result, Volume};

pub const LUMEN_LEVEL: u8 = 255;
pub const OUTER_LEVEL: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    /// Row-major, row `j` holds pixels with voxel index `y = j`.
    pub data: Vec<u8>,
}

impl Gray8 {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[x + self.width * y]
    }

    fn put(&mut self, x: i64, y: i64, v: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.data[x as usize + self.width * y as usize] = v;
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Slice `k` with its own min..max stretched to 0..255. A constant slice
/// renders mid-gray.
pub fn render_slice(vol: &Volume, k: usize) -> Gray8 {
    let [m, n, _] = vol.dims();
    let s = vol.slice(k);
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        let scale = 255.0 / (hi - lo);
        s.iter()
            .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![128; s.len()]
    };
    Gray8 {
        width: m,
        height: n,
        data,
    }
}

pub fn render_mask(mask: &BinaryMask) -> Gray8 {
    Gray8 {
        width: mask.grid.nx,
        height: mask.grid.ny,
        data: mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
}

/// Integer points on the segment from `a` to `b`, both ends included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - x).abs();
    let dy = -(b.1 - y).abs();
    let sx = if x < b.0 { 1 } else { -1 };
    let sy = if y < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::new();
    loop {
        out.push((x, y));
        if (x, y) == b {
            return out;
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

fn to_pixel(grid: &SliceGrid, p: [f64; 2]) -> (i64, i64) {
    (
        ((p[0] - grid.origin[0]) / grid.spacing[0]).round() as i64,
        ((p[1] - grid.origin[1]) / grid.spacing[1]).round() as i64,
    )
}

/// Draws the closed polygon outline; off-image pixels are dropped.
pub fn burn_polygon(img: &mut Gray8, grid: &SliceGrid, poly: &Polygon, level: u8) {
    for (a, b) in poly.edges() {
        for (x, y) in bresenham(to_pixel(grid, a), to_pixel(grid, b)) {
            img.put(x, y, level);
        }
    }
}

/// Renders slice `k` with lumen and outer contours burned in.
pub fn overlay_image(vol: &Volume, k: usize, contours: &[ContourPair]) -> Gray8 {
    let grid = SliceGrid::of_volume(vol);
    let mut img = render_slice(vol, k);
    for cp in contours {
        let (l, o) = cp.to_polygons();
        burn_polygon(&mut img, &grid, &o, OUTER_LEVEL);
        burn_polygon(&mut img, &grid, &l, LUMEN_LEVEL);
    }
    img
}

pub fn emit_overlay(vol: &Volume, k: usize, contours: &[ContourPair], path: &Path) -> Result<()> {
    overlay_image(vol, k, contours).write_pgm(path)
}
