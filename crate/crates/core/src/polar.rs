//! Cartesian to polar resampling around a center point.
//!
//! Rays are cast in the axial plane at `N` equidistant angles. The angle axis
//! is then extended circularly by `⌊N/2⌋` rows on each side so a valid
//! (unpadded) convolution over `2N-1` rows yields exactly `N` outputs that
//! respect the wraparound.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::contour::{ray_angles, Region};
use crate::volume::Field;
use crate::{Error, Result, Volume, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarGrid {
    pub n_angles: usize,
    pub n_samples: usize,
    pub ray_spacing: f64,
}

impl Default for PolarGrid {
    fn default() -> Self {
        Self {
            n_angles: 31,
            n_samples: 127,
            ray_spacing: 0.25,
        }
    }
}

impl PolarGrid {
    pub fn new(n_angles: usize, n_samples: usize, ray_spacing: f64) -> Result<Self> {
        let g = Self {
            n_angles,
            n_samples,
            ray_spacing,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_angles < 4 {
            return Err(Error::InvalidConfig(format!(
                "need at least 4 angles, got {}",
                self.n_angles
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 samples per ray, got {}",
                self.n_samples
            )));
        }
        if !(self.ray_spacing > 0.0 && self.ray_spacing.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ray spacing must be > 0, got {}",
                self.ray_spacing
            )));
        }
        Ok(())
    }

    pub fn angles(&self) -> Vec<f64> {
        ray_angles(self.n_angles)
    }

    /// Rows added on each side of the canonical rays.
    pub fn pad(&self) -> usize {
        self.n_angles / 2
    }

    /// Total rows after periodic padding, `2N-1` for odd `N`.
    pub fn padded_rows(&self) -> usize {
        self.n_angles + 2 * self.pad()
    }

    /// Ray length covered by the samples (mm).
    pub fn ray_length(&self) -> f64 {
        (self.n_samples - 1) as f64 * self.ray_spacing
    }
}

/// Ray-cast intensities, laid out `[slice][row][sample]` with the sample
/// index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarImage {
    pub grid: PolarGrid,
    pub center: WorldPoint,
    pub slice: Option<usize>,
    pub n_slices: usize,
    pub data: Vec<f64>,
}

impl PolarImage {
    /// `(rows, samples, slices)`.
    pub fn dims(&self) -> [usize; 3] {
        [self.grid.padded_rows(), self.grid.n_samples, self.n_slices]
    }

    pub fn get(&self, row: usize, sample: usize, slice: usize) -> f64 {
        let [rows, r, _] = self.dims();
        self.data[(slice * rows + row) * r + sample]
    }

    pub fn row(&self, row: usize, slice: usize) -> &[f64] {
        let [rows, r, _] = self.dims();
        let start = (slice * rows + row) * r;
        &self.data[start..start + r]
    }

    /// The `N` unpadded rays of one plane, concatenated.
    pub fn canonical(&self, slice: usize) -> Vec<f64> {
        let pad = self.grid.pad();
        (0..self.grid.n_angles)
            .flat_map(|i| self.row(pad + i, slice).to_vec())
            .collect()
    }

    /// Rotates the canonical rays by `shift` positions (ray `i` takes the
    /// values of ray `i + shift`) and rebuilds the padding.
    pub fn cyclic_shift(&self, shift: isize) -> PolarImage {
        let n = self.grid.n_angles;
        let r = self.grid.n_samples;
        let mut planes = Vec::with_capacity(self.n_slices);
        for s in 0..self.n_slices {
            let canon = self.canonical(s);
            let mut shifted = vec![0.0; n * r];
            for i in 0..n {
                let src = (i as isize + shift).rem_euclid(n as isize) as usize;
                shifted[i * r..(i + 1) * r].copy_from_slice(&canon[src * r..(src + 1) * r]);
            }
            planes.push(shifted);
        }
        let data = planes.iter().flat_map(|p| pad_rays(p, n, r)).collect();
        PolarImage {
            data,
            ..self.clone()
        }
    }

    /// Writes the image as a raw+JSON pair with dims `(2N-1, R, S)`.
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        let stem = crate::io::volume_stem(path);
        let spacing = [
            2.0 * std::f64::consts::PI / self.grid.n_angles as f64,
            self.grid.ray_spacing,
            1.0,
        ];
        // Reorder to x-fastest (row fastest) to match the volume convention.
        let [rows, r, s] = self.dims();
        let mut out = Vec::with_capacity(self.data.len());
        for k in 0..s {
            for j in 0..r {
                for i in 0..rows {
                    out.push(self.get(i, j, k));
                }
            }
        }
        crate::io::write_raw_f32(&stem, &[rows, r, s], spacing, self.center.to_array(), &out)
    }
}

/// Circular extension of `n` canonical rays of length `r`: the last `⌊n/2⌋`
/// rays are prepended and the first `⌊n/2⌋` appended.
pub fn pad_rays(canonical: &[f64], n: usize, r: usize) -> Vec<f64> {
    let pad = n / 2;
    let mut out = Vec::with_capacity((n + 2 * pad) * r);
    out.extend_from_slice(&canonical[(n - pad) * r..]);
    out.extend_from_slice(canonical);
    out.extend_from_slice(&canonical[..pad * r]);
    out
}

fn cast_plane<F: Field + ?Sized>(
    field: &F,
    center: WorldPoint,
    grid: &PolarGrid,
    out: &mut Vec<f64>,
) {
    let n = grid.n_angles;
    let r = grid.n_samples;
    let mut canon = Vec::with_capacity(n * r);
    for phi in grid.angles() {
        let (s, c) = phi.sin_cos();
        for j in 0..r {
            let d = j as f64 * grid.ray_spacing;
            canon.push(field.sample(WorldPoint::new(
                center.x + d * c,
                center.y + d * s,
                center.z,
            )));
        }
    }
    out.extend(pad_rays(&canon, n, r));
}

/// Casts a stack of `2k+1` planes at axial offsets `-k..=k` times
/// `slice_spacing` through an arbitrary field.
pub fn cast_polar_field<F: Field + ?Sized>(
    field: &F,
    center: WorldPoint,
    grid: &PolarGrid,
    k: usize,
    slice_spacing: f64,
) -> PolarImage {
    let s = 2 * k + 1;
    let mut data = Vec::with_capacity(s * grid.padded_rows() * grid.n_samples);
    for off in -(k as isize)..=(k as isize) {
        let c = WorldPoint::new(center.x, center.y, center.z + off as f64 * slice_spacing);
        cast_plane(field, c, grid, &mut data);
    }
    PolarImage {
        grid: *grid,
        center,
        slice: None,
        n_slices: s,
        data,
    }
}

/// Single-plane polar image around `center`.
pub fn cast_polar(vol: &Volume, center: WorldPoint, grid: &PolarGrid) -> Result<PolarImage> {
    cast_polar_stack(vol, center, grid, 0)
}

/// `2k+1` planes at axial voxel offsets `-k..=k`, ordered by offset.
/// Planes beyond the volume sample as zero.
pub fn cast_polar_stack(
    vol: &Volume,
    center: WorldPoint,
    grid: &PolarGrid,
    k: usize,
) -> Result<PolarImage> {
    grid.validate()?;
    if !vol.contains(center) {
        return Err(Error::OutsideVolume {
            x: center.x,
            y: center.y,
            z: center.z,
        });
    }
    let mut img = cast_polar_field(vol, center, grid, k, vol.spacing()[2]);
    let kz = vol.world_to_continuous(center)[2];
    img.slice = Some(kz.round() as usize);
    Ok(img)
}

/// Uniform sample from the axial disk of radius `max_radius` around
/// `center`; z is unchanged.
pub fn jitter_center<R: rand::Rng + ?Sized>(
    center: WorldPoint,
    max_radius: f64,
    rng: &mut R,
) -> WorldPoint {
    if max_radius <= 0.0 {
        return center;
    }
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let rho = max_radius * u.sqrt();
    let (s, c) = (TAU * v).sin_cos();
    center.shifted(rho * c, rho * s)
}

/// Convenience wrapper seeding its own stream.
pub fn jitter_center_seeded(center: WorldPoint, max_radius: f64, seed: u64) -> WorldPoint {
    let mut rng = crate::rng::seeded(seed, "jitter");
    jitter_center(center, max_radius, &mut rng)
}

/// Marching step when searching for a region's boundary along a ray (mm).
const MARCH_STEP: f64 = 0.02;
const MAX_RAY: f64 = 1.0e3;

/// Distance from `center` along each ray angle to the first boundary
/// crossing of `region`.
pub fn ray_radii<R: Region + ?Sized>(
    region: &R,
    center: [f64; 2],
    n_angles: usize,
) -> Result<Vec<f64>> {
    if !region.contains(center) {
        return Err(Error::CenterOutsideContour);
    }
    ray_angles(n_angles)
        .into_iter()
        .map(|phi| {
            let (s, c) = phi.sin_cos();
            let at = |t: f64| [center[0] + t * c, center[1] + t * s];
            let mut lo = 0.0;
            let mut hi = MARCH_STEP;
            while region.contains(at(hi)) {
                lo = hi;
                hi += MARCH_STEP;
                if hi > MAX_RAY {
                    return Err(Error::Degenerate("region is unbounded along a ray".into()));
                }
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if region.contains(at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        })
        .collect()
}

/// Regression targets at `center`: lumen and outer radii per ray angle.
pub fn radii_from_truth<L, O>(
    lumen: &L,
    outer: &O,
    center: [f64; 2],
    grid: &PolarGrid,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    L: Region + ?Sized,
    O: Region + ?Sized,
{
    let l = ray_radii(lumen, center, grid.n_angles)?;
    let o = ray_radii(outer, center, grid.n_angles)?;
    Ok((l, o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{ContourPair, Polygon};

    struct Disk {
        c: [f64; 2],
        r: f64,
    }

    impl Region for Disk {
        fn contains(&self, p: [f64; 2]) -> bool {
            (p[0] - self.c[0]).hypot(p[1] - self.c[1]) < self.r
        }
    }

    fn grid() -> PolarGrid {
        PolarGrid::new(31, 33, 0.25).unwrap()
    }

    #[test]
    fn radially_symmetric_field_gives_identical_rows() {
        let c = WorldPoint::new(1.0, -2.0, 0.5);
        let field = move |p: WorldPoint| ((p.x - c.x).hypot(p.y - c.y) * 0.7).cos();
        let img = cast_polar_field(&field, c, &grid(), 0, 1.0);
        let first = img.row(grid().pad(), 0).to_vec();
        for i in 0..31 {
            for (a, b) in img.row(grid().pad() + i, 0).iter().zip(&first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_layout() {
        let g = grid();
        let field = |p: WorldPoint| p.x * 0.3 + p.y * p.y * 0.1;
        let img = cast_polar_field(&field, WorldPoint::default(), &g, 0, 1.0);
        let n = g.n_angles;
        let pad = g.pad();
        assert_eq!(img.dims(), [2 * n - 1, 33, 1]);
        // Padded row 0 duplicates canonical ray N - ⌊N/2⌋, i.e. row pad + N - pad.
        assert_eq!(img.row(0, 0), img.row(n, 0));
        for t in 0..pad {
            assert_eq!(img.row(t, 0), img.row(pad + n - pad + t, 0));
            assert_eq!(img.row(pad + n + t, 0), img.row(pad + t, 0));
        }
        // Re-padding the canonical rows reproduces the image.
        assert_eq!(img.cyclic_shift(0), img);
    }

    #[test]
    fn step_edge_crossing_position() {
        let g = PolarGrid::new(31, 25, 0.35).unwrap();
        let vol = step_volume();
        let c = WorldPoint::new(10.0, 10.0, 1.0);
        let img = cast_polar(&vol, c, &g).unwrap();
        // Edge at 3 mm: the profile crosses 0.5 between samples ⌊3/0.35⌋ and the next.
        let j = (3.0f64 / 0.35).floor() as usize;
        for row in 0..g.padded_rows() {
            let ray = img.row(row, 0);
            assert!(ray[..=j].iter().all(|&v| v < 0.5), "row {row}");
            assert!(ray[j + 1..].iter().all(|&v| v > 0.5), "row {row}");
        }
    }

    fn step_volume() -> Volume {
        // 0.1 mm voxels keep the interpolated edge within one ray sample.
        let n = 201;
        let mut data = Vec::with_capacity(n * n * 3);
        for _k in 0..3 {
            for j in 0..n {
                for i in 0..n {
                    let d = (i as f64 * 0.1 - 10.0).hypot(j as f64 * 0.1 - 10.0);
                    data.push(if d < 3.0 { 0.1 } else { 0.9 });
                }
            }
        }
        Volume::new([n, n, 3], [0.1, 0.1, 0.5], [0.0, 0.0, 0.5], data).unwrap()
    }

    #[test]
    fn stack_planes() {
        let g = PolarGrid::new(15, 9, 0.5).unwrap();
        let data: Vec<f64> = (0..10 * 10 * 6)
            .map(|i| ((i % 10) as f64 * 0.1).sin().abs())
            .collect();
        let vol = Volume::new([10, 10, 6], [0.5; 3], [0.0; 3], data).unwrap();
        let c = WorldPoint::new(2.2, 2.4, 1.0);
        let single = cast_polar(&vol, c, &g).unwrap();
        let k0 = cast_polar_stack(&vol, c, &g, 0).unwrap();
        assert_eq!(single, k0);

        // z-invariant content: every plane inside the volume is identical.
        let stack = cast_polar_stack(&vol, c, &g, 2).unwrap();
        assert_eq!(stack.n_slices, 5);
        let mid = (0..g.padded_rows())
            .flat_map(|r| stack.row(r, 2).to_vec())
            .collect::<Vec<_>>();
        for s in 0..5 {
            let plane = (0..g.padded_rows())
                .flat_map(|r| stack.row(r, s).to_vec())
                .collect::<Vec<_>>();
            assert_eq!(plane, mid);
        }

        // Top slice: planes above the volume are zero.
        let top = WorldPoint::new(2.2, 2.4, 2.5);
        let stack = cast_polar_stack(&vol, top, &g, 3).unwrap();
        for s in 4..7 {
            for r in 0..g.padded_rows() {
                assert!(stack.row(r, s).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn center_outside_volume_is_error() {
        let vol = Volume::filled([4, 4, 4], [1.0; 3], [0.0; 3], 0.5).unwrap();
        assert!(matches!(
            cast_polar(&vol, WorldPoint::new(-1.0, 1.0, 1.0), &grid()),
            Err(Error::OutsideVolume { .. })
        ));
    }

    #[test]
    fn jitter_contract() {
        let c = WorldPoint::new(1.0, 2.0, 3.0);
        assert_eq!(jitter_center_seeded(c, 0.0, 9), c);
        assert_eq!(
            jitter_center_seeded(c, 1.0, 9),
            jitter_center_seeded(c, 1.0, 9)
        );
        let mut rng = crate::rng::seeded(5, "t");
        let n = 10_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let p = jitter_center(c, 1.0, &mut rng);
            let (dx, dy) = (p.x - c.x, p.y - c.y);
            assert!(dx.hypot(dy) <= 1.0);
            assert_eq!(p.z, c.z);
            sx += dx;
            sy += dy;
        }
        // Each coordinate of a uniform unit-disk sample has variance 1/4.
        let sigma_mean = (0.25f64 / n as f64).sqrt();
        assert!((sx / n as f64).abs() < 3.0 * sigma_mean);
        assert!((sy / n as f64).abs() < 3.0 * sigma_mean);
    }

    #[test]
    fn circle_radii() {
        let disk = Disk {
            c: [0.0, 0.0],
            r: 2.5,
        };
        for r in ray_radii(&disk, [0.0, 0.0], 31).unwrap() {
            assert!((r - 2.5).abs() < 1e-9);
        }
        let d = 1.0;
        let n = 4;
        let radii = ray_radii(&disk, [d, 0.0], n).unwrap();
        assert!((radii[0] - (2.5 - d)).abs() < 1e-9);
        assert!((radii[2] - (2.5 + d)).abs() < 1e-9);
        let expected = (2.5f64 * 2.5 - d * d).sqrt();
        assert!((radii[1] - expected).abs() < 1e-9);
        // Independent check by Newton iteration on |c + t·u| = r along φ = π/2.
        let mut t = 1.0;
        for _ in 0..50 {
            let f = d * d + t * t - 6.25;
            t -= f / (2.0 * t);
        }
        assert!((radii[1] - t).abs() < 1e-9);
    }

    #[test]
    fn center_outside_region_is_error() {
        let disk = Disk {
            c: [0.0, 0.0],
            r: 1.0,
        };
        assert!(matches!(
            ray_radii(&disk, [2.0, 0.0], 8),
            Err(Error::CenterOutsideContour)
        ));
    }

    #[test]
    fn radii_survive_polygon_round_trip() {
        let radii: Vec<f64> = (0..31)
            .map(|i| 2.0 + 0.5 * (i as f64 * 0.7).sin())
            .collect();
        let thick: Vec<f64> = (0..31)
            .map(|i| 0.6 + 0.2 * (i as f64 * 1.3).cos())
            .collect();
        let center = WorldPoint::new(3.0, 4.0, 0.0);
        let cp = ContourPair::new(center, radii.clone(), thick).unwrap();
        let (l, o): (Polygon, Polygon) = cp.to_polygons();
        let (lr, or) = radii_from_truth(&l, &o, [3.0, 4.0], &grid()).unwrap();
        for i in 0..31 {
            assert!((lr[i] - radii[i]).abs() < 1e-9);
            assert!((or[i] - cp.outer_radii()[i]).abs() < 1e-9);
        }
    }
}
