//! Nested lumen/outer-wall contours, polygon conversion and sub-pixel
//! rasterization.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Volume, WorldPoint};

/// Equidistant ray angles `2πi/N`.
pub fn ray_angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| TAU * i as f64 / n as f64).collect()
}

/// Two nested star-shaped contours around a common center. The outer radius
/// at each angle is the lumen radius plus a non-negative thickness, so the
/// contours cannot cross.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourPair {
    pub center: WorldPoint,
    pub lumen_radii: Vec<f64>,
    pub thickness: Vec<f64>,
}

impl ContourPair {
    pub fn new(center: WorldPoint, lumen_radii: Vec<f64>, thickness: Vec<f64>) -> Result<Self> {
        if lumen_radii.len() != thickness.len() || lumen_radii.len() < 3 {
            return Err(Error::Shape(format!(
                "contour pair needs matching radii/thickness of length >= 3, got {} and {}",
                lumen_radii.len(),
                thickness.len()
            )));
        }
        if lumen_radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Degenerate("lumen radii must be positive".into()));
        }
        if thickness.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(Error::Degenerate(
                "wall thickness must be non-negative".into(),
            ));
        }
        Ok(Self {
            center,
            lumen_radii,
            thickness,
        })
    }

    /// Builds a pair from lumen and outer radii; thickness is their difference.
    pub fn from_radii(center: WorldPoint, lumen: &[f64], outer: &[f64]) -> Result<Self> {
        let thickness = lumen.iter().zip(outer).map(|(l, o)| o - l).collect();
        Self::new(center, lumen.to_vec(), thickness)
    }

    pub fn len(&self) -> usize {
        self.lumen_radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lumen_radii.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        ray_angles(self.len())
    }

    pub fn outer_radii(&self) -> Vec<f64> {
        self.lumen_radii
            .iter()
            .zip(&self.thickness)
            .map(|(l, t)| l + t)
            .collect()
    }

    /// Lumen and outer polygons; vertex `i` lies at angle `2πi/N`.
    pub fn to_polygons(&self) -> (Polygon, Polygon) {
        let c = [self.center.x, self.center.y];
        (
            Polygon::from_radii(c, &self.lumen_radii),
            Polygon::from_radii(c, &self.outer_radii()),
        )
    }

    pub fn to_record(&self, slice: usize) -> ContourRecord {
        ContourRecord {
            slice,
            center_mm: self.center.to_array(),
            angles_rad: self.angles(),
            lumen_radii_mm: self.lumen_radii.clone(),
            thickness_mm: self.thickness.clone(),
        }
    }
}

/// Serialized form of one slice's contour pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourRecord {
    pub slice: usize,
    pub center_mm: [f64; 3],
    pub angles_rad: Vec<f64>,
    pub lumen_radii_mm: Vec<f64>,
    pub thickness_mm: Vec<f64>,
}

impl ContourRecord {
    pub fn to_pair(&self) -> Result<ContourPair> {
        if self.angles_rad.len() != self.lumen_radii_mm.len() {
            return Err(Error::Shape("angles and radii lengths differ".into()));
        }
        ContourPair::new(
            self.center_mm.into(),
            self.lumen_radii_mm.clone(),
            self.thickness_mm.clone(),
        )
    }
}

/// A closed polygon in the axial plane (mm). The closing edge is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    pub fn from_radii(center: [f64; 2], radii: &[f64]) -> Self {
        let angles = ray_angles(radii.len());
        let vertices = radii
            .iter()
            .zip(angles)
            .map(|(&r, a)| [center[0] + r * a.cos(), center[1] + r * a.sin()])
            .collect();
        Self { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Signed shoelace area (positive for counter-clockwise order).
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges()
            .map(|(a, b)| (b[0] - a[0]).hypot(b[1] - a[1]))
            .sum()
    }

    /// Even-odd point test. Points exactly on an edge are unspecified.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polygon {
        Polygon::new(
            self.vertices
                .iter()
                .map(|v| [v[0] + dx, v[1] + dy])
                .collect(),
        )
    }

    /// Boundary resampled so consecutive points are at most `step` apart.
    pub fn densify(&self, step: f64) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for (a, b) in self.edges() {
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let pieces = ((len / step).ceil() as usize).max(1);
            for s in 0..pieces {
                let t = s as f64 / pieces as f64;
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        out
    }

    /// Sorted x positions where the horizontal line `y` crosses an edge.
    fn crossings(&self, y: f64, out: &mut Vec<f64>) {
        out.clear();
        for (a, b) in self.edges() {
            if (a[1] > y) != (b[1] > y) {
                out.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        out.sort_by(f64::total_cmp);
    }
}

/// A closed region that can be probed point-wise.
pub trait Region {
    fn contains(&self, p: [f64; 2]) -> bool;
}

impl Region for Polygon {
    fn contains(&self, p: [f64; 2]) -> bool {
        Polygon::contains(self, p)
    }
}

/// Axial pixel grid of one volume slice. Pixel `(i, j)` is centered at
/// `origin + (i·sx, j·sy)` and covers one spacing in each direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceGrid {
    pub nx: usize,
    pub ny: usize,
    pub spacing: [f64; 2],
    pub origin: [f64; 2],
}

impl SliceGrid {
    pub fn of_volume(vol: &Volume) -> Self {
        let [m, n, _] = vol.dims();
        let s = vol.spacing();
        let o = vol.origin();
        Self {
            nx: m,
            ny: n,
            spacing: [s[0], s[1]],
            origin: [o[0], o[1]],
        }
    }

    pub fn pixel_area(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
        ]
    }
}

/// Fractional coverage per pixel, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMask {
    pub grid: SliceGrid,
    pub data: Vec<f64>,
}

impl SliceMask {
    pub fn empty(grid: SliceGrid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.nx * grid.ny],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.grid.nx * j]
    }

    /// Covered area in mm².
    pub fn area(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.pixel_area()
    }

    pub fn binarize(&self) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            data: self.data.iter().map(|&v| v >= 0.5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub grid: SliceGrid,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(grid: SliceGrid) -> Self {
        Self {
            grid,
            data: vec![false; grid.nx * grid.ny],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i + self.grid.nx * j]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `self` with every pixel of `other` removed.
    pub fn minus(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && !b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Fraction of the `s×s` subsamples of each pixel that fall strictly inside
/// the polygon (even-odd rule).
pub fn rasterize(polygon: &Polygon, grid: SliceGrid, supersample: usize) -> SliceMask {
    let s = supersample.max(1);
    let mut mask = SliceMask::empty(grid);
    if polygon.len() < 3 || polygon.area() == 0.0 {
        return mask;
    }
    let [sx, sy] = grid.spacing;
    let sub_x = |q: usize| grid.origin[0] - 0.5 * sx + (q as f64 + 0.5) / s as f64 * sx;
    let sub_y = |q: usize| grid.origin[1] - 0.5 * sy + (q as f64 + 0.5) / s as f64 * sy;
    let cols = grid.nx * s;
    let weight = 1.0 / (s * s) as f64;
    let mut xs = Vec::new();
    for qy in 0..grid.ny * s {
        let y = sub_y(qy);
        polygon.crossings(y, &mut xs);
        let row = qy / s;
        for span in xs.chunks_exact(2) {
            let (x0, x1) = (span[0], span[1]);
            // First subsample column strictly right of x0.
            let mut q = ((x0 - grid.origin[0] + 0.5 * sx) / sx * s as f64 - 0.5).floor();
            q = q.max(-1.0);
            let mut qx = (q + 1.0) as usize;
            while qx > 0 && sub_x(qx - 1) > x0 {
                qx -= 1;
            }
            while qx < cols && sub_x(qx) <= x0 {
                qx += 1;
            }
            while qx < cols && sub_x(qx) < x1 {
                mask.data[qx / s + grid.nx * row] += weight;
                qx += 1;
            }
        }
    }
    for v in &mut mask.data {
        *v = v.min(1.0);
    }
    mask
}

/// Fractional ring mask: outer coverage minus lumen coverage, floored at 0.
pub fn wall_mask(cp: &ContourPair, grid: SliceGrid, supersample: usize) -> SliceMask {
    let (lumen, outer) = cp.to_polygons();
    let l = rasterize(&lumen, grid, supersample);
    let mut o = rasterize(&outer, grid, supersample);
    for (ov, lv) in o.data.iter_mut().zip(&l.data) {
        *ov = (*ov - lv).max(0.0);
    }
    o
}

/// Binary lumen, outer and ring masks. The ring is the outer mask with the
/// lumen removed; since the lumen polygon lies inside the outer polygon the
/// lumen mask is always a subset of the outer mask.
pub fn binary_masks(
    cp: &ContourPair,
    grid: SliceGrid,
    supersample: usize,
) -> (BinaryMask, BinaryMask, BinaryMask) {
    let (lumen, outer) = cp.to_polygons();
    let l = rasterize(&lumen, grid, supersample).binarize();
    let o = rasterize(&outer, grid, supersample).binarize();
    let w = o.minus(&l);
    (l, o, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, s: f64) -> SliceGrid {
        SliceGrid {
            nx: n,
            ny: n,
            spacing: [s, s],
            origin: [0.0, 0.0],
        }
    }

    fn circle_pair(c: [f64; 2], r: f64, t: f64, n: usize) -> ContourPair {
        ContourPair::new(WorldPoint::new(c[0], c[1], 0.0), vec![r; n], vec![t; n]).unwrap()
    }

    #[test]
    fn constant_radii_give_regular_polygon() {
        let (l, _) = circle_pair([1.0, 2.0], 3.0, 1.0, 8).to_polygons();
        for v in &l.vertices {
            assert!(((v[0] - 1.0).hypot(v[1] - 2.0) - 3.0).abs() < 1e-12);
        }
        let expected = 0.5 * 8.0 * 9.0 * (TAU / 8.0).sin();
        assert!((l.area() - expected).abs() < 1e-12);
        assert!(l.signed_area() > 0.0);
    }

    #[test]
    fn zero_thickness_polygons_coincide() {
        let (l, o) = circle_pair([0.0, 0.0], 2.0, 0.0, 31).to_polygons();
        assert_eq!(l, o);
    }

    #[test]
    fn square_covering_four_pixels() {
        // Pixels (2..4, 3..5) at unit spacing cover [1.5, 3.5] x [2.5, 4.5].
        let sq = Polygon::new(vec![[1.5, 2.5], [3.5, 2.5], [3.5, 4.5], [1.5, 4.5]]);
        let m = rasterize(&sq, grid(8, 1.0), 4);
        for j in 0..8 {
            for i in 0..8 {
                let inside = (2..4).contains(&i) && (3..5).contains(&j);
                assert_eq!(m.get(i, j), if inside { 1.0 } else { 0.0 }, "pixel {i},{j}");
            }
        }
    }

    #[test]
    fn circle_area_matches_analytic() {
        let sx = 0.5;
        let r = 4.0 * sx;
        let cp = circle_pair([5.0, 5.0], r, 0.0, 256);
        let (l, _) = cp.to_polygons();
        let m = rasterize(&l, grid(20, sx), 8);
        let expected = PI * r * r;
        assert!(
            (m.area() - expected).abs() / expected < 0.01,
            "{} vs {expected}",
            m.area()
        );
    }

    #[test]
    fn one_pixel_translation_shifts_mask() {
        let g = grid(16, 0.5);
        let (l, _) = circle_pair([3.3, 3.6], 1.7, 0.0, 31).to_polygons();
        let a = rasterize(&l, g, 4);
        let b = rasterize(&l.translated(0.5, 0.0), g, 4);
        for j in 0..16 {
            for i in 0..15 {
                assert!((a.get(i, j) - b.get(i + 1, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_polygon_rasterizes_empty() {
        let line = Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        assert!(rasterize(&line, grid(4, 1.0), 4)
            .data
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn wall_mask_properties() {
        let g = grid(40, 0.25);
        let zero = circle_pair([5.0, 5.0], 2.0, 0.0, 31);
        assert!(wall_mask(&zero, g, 4).data.iter().all(|&v| v == 0.0));

        let (r, t) = (2.0, 1.2);
        let ring = circle_pair([5.0, 5.0], r, t, 720);
        let w = wall_mask(&ring, g, 4);
        let expected = PI * ((r + t) * (r + t) - r * r);
        assert!((w.area() - expected).abs() / expected < 0.02);
        assert!(w.data.iter().all(|&v| v >= 0.0));
        // Zero inside the lumen's inscribed disk.
        let inscribed = r * (PI / 720.0).cos();
        for j in 0..40 {
            for i in 0..40 {
                let c = g.pixel_center(i, j);
                let far = (c[0] - 5.0).hypot(c[1] - 5.0) + 0.25 * std::f64::consts::SQRT_2 / 2.0;
                if far < inscribed {
                    assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn supersampling_converges_to_shoelace_area() {
        let cp = ContourPair::new(
            WorldPoint::new(4.1, 3.9, 0.0),
            (0..17)
                .map(|i| 1.5 + 0.4 * ((i * 5) as f64).sin())
                .collect(),
            vec![0.0; 17],
        )
        .unwrap();
        let (l, _) = cp.to_polygons();
        let exact = l.area();
        let g = grid(20, 0.5);
        let errs: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&s| (rasterize(&l, g, s).area() - exact).abs())
            .collect();
        assert!(errs[2] < errs[0], "{errs:?}");
        assert!(errs[2] / exact < 0.01);
    }

    #[test]
    fn invalid_pairs_are_rejected() {
        let c = WorldPoint::default();
        assert!(ContourPair::new(c, vec![1.0; 4], vec![-0.1; 4]).is_err());
        assert!(ContourPair::new(c, vec![0.0; 4], vec![0.1; 4]).is_err());
        assert!(ContourPair::new(c, vec![1.0; 4], vec![0.1; 3]).is_err());
    }

    #[test]
    fn binary_lumen_inside_outer() {
        let g = grid(30, 0.3);
        let cp = ContourPair::new(
            WorldPoint::new(4.5, 4.4, 0.0),
            (0..31).map(|i| 2.0 + 0.3 * (i as f64).cos()).collect(),
            (0..31).map(|i| 0.05 * i as f64 % 0.9).collect(),
        )
        .unwrap();
        let (l, o, w) = binary_masks(&cp, g, 4);
        assert!(l.is_subset_of(&o));
        assert_eq!(w.count() + l.count(), o.count());
    }
}
