//! 3D scalar volumes and their world-coordinate mapping.
//!
//! Voxel `(i, j, k)` has its center at `origin + (i·sx, j·sy, k·sz)` and is
//! stored at linear index `i + m·(j + n·k)` (x fastest), so an axial slice is
//! one contiguous run of `m·n` values.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point in world coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Offset in the axial plane, leaving z untouched.
    pub fn shifted(&self, dx: f64, dy: f64) -> WorldPoint {
        WorldPoint::new(self.x + dx, self.y + dy, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for WorldPoint {
    fn from(v: [f64; 3]) -> Self {
        WorldPoint::new(v[0], v[1], v[2])
    }
}

/// Anything that can be sampled at a world point. Ray casting is written
/// against this so analytic fields can be sampled without voxelization.
pub trait Field {
    fn sample(&self, pt: WorldPoint) -> f64;
}

impl<F: Fn(WorldPoint) -> f64> Field for F {
    fn sample(&self, pt: WorldPoint) -> f64 {
        self(pt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        data: Vec<f64>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!(
                "volume dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Shape(format!(
                "voxel spacing must be > 0, got {spacing:?}"
            )));
        }
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::Shape(format!(
                "volume {dims:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        value: f64,
    ) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, spacing, origin, vec![value; len])
    }

    /// A volume on the same grid with new data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [m, n, _] = self.dims;
        [idx % m, (idx / m) % n, idx / (m * n)]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = value;
    }

    pub fn voxel_to_world(&self, i: usize, j: usize, k: usize) -> WorldPoint {
        WorldPoint::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Continuous voxel coordinates of a world point.
    pub fn world_to_continuous(&self, pt: WorldPoint) -> [f64; 3] {
        let p = pt.to_array();
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }

    /// Nearest voxel to a world point, if it lies within the grid.
    pub fn world_to_voxel(&self, pt: WorldPoint) -> Option<[usize; 3]> {
        let c = self.world_to_continuous(pt);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let r = c[a].round();
            if r < 0.0 || r > (self.dims[a] - 1) as f64 {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    /// World z of axial slice `k`.
    pub fn slice_z(&self, k: usize) -> f64 {
        self.origin[2] + k as f64 * self.spacing[2]
    }

    /// True when `pt` lies inside the voxel-center bounding box.
    pub fn contains(&self, pt: WorldPoint) -> bool {
        let c = self.world_to_continuous(pt);
        (0..3).all(|a| within_axis(c[a], self.dims[a]).is_some())
    }

    /// Values of axial slice `k` (length `m·n`).
    pub fn slice(&self, k: usize) -> &[f64] {
        let plane = self.dims[0] * self.dims[1];
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Trilinear interpolation; zero outside the voxel-center bounding box.
    pub fn sample_trilinear(&self, pt: WorldPoint) -> f64 {
        let c = self.world_to_continuous(pt);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            match within_axis(c[a], self.dims[a]) {
                Some((b, f)) => {
                    base[a] = b;
                    frac[a] = f;
                }
                None => return 0.0,
            }
        }
        let mut acc = 0.0;
        for corner in 0..8usize {
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let hi = (corner >> a) & 1 == 1;
                if hi {
                    w *= frac[a];
                    idx[a] = base[a] + 1;
                } else {
                    w *= 1.0 - frac[a];
                    idx[a] = base[a];
                }
            }
            if w != 0.0 {
                acc += w * self.get(idx[0], idx[1], idx[2]);
            }
        }
        acc
    }

    /// Mirror across the sagittal plane: voxel `(i, j, k)` moves to
    /// `(m-1-i, j, k)`. Spacing and origin are kept.
    pub fn flip_sagittal(&self) -> Volume {
        let [m, n, p] = self.dims;
        let mut data = Vec::with_capacity(self.data.len());
        for k in 0..p {
            for j in 0..n {
                let row = self.index(0, j, k);
                data.extend(self.data[row..row + m].iter().rev());
            }
        }
        Volume {
            data,
            ..self.clone()
        }
    }

    /// Rescale so the 5th percentile maps to 0 and the 95th to 1, clamping
    /// the rest. A constant image cannot be rescaled; it comes back as zeros
    /// with `degenerate` set.
    pub fn normalize_intensity(&self) -> Normalized {
        let p5 = percentile(&self.data, 5.0);
        let p95 = percentile(&self.data, 95.0);
        let span = p95 - p5;
        if !(span > 0.0) {
            log::warn!("constant-intensity volume ({p5}); normalization yields zeros");
            return Normalized {
                volume: Volume {
                    data: vec![0.0; self.data.len()],
                    ..self.clone()
                },
                degenerate: true,
                p5,
                p95,
            };
        }
        let data = self
            .data
            .iter()
            .map(|&v| ((v - p5) / span).clamp(0.0, 1.0))
            .collect();
        Normalized {
            volume: Volume {
                data,
                ..self.clone()
            },
            degenerate: false,
            p5,
            p95,
        }
    }
}

impl Field for Volume {
    fn sample(&self, pt: WorldPoint) -> f64 {
        self.sample_trilinear(pt)
    }
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub volume: Volume,
    pub degenerate: bool,
    pub p5: f64,
    pub p95: f64,
}

/// Base index and fraction along one axis, or `None` outside `[0, dim-1]`.
#[inline]
fn within_axis(c: f64, dim: usize) -> Option<(usize, f64)> {
    const EPS: f64 = 1e-9;
    let hi = (dim - 1) as f64;
    if !(c >= -EPS && c <= hi + EPS) {
        return None;
    }
    if dim == 1 {
        return Some((0, 0.0));
    }
    let c = c.clamp(0.0, hi);
    let base = (c.floor() as usize).min(dim - 2);
    Some((base, c - base as f64))
}

/// Percentile by linear interpolation between closest ranks
/// (position `q/100 · (n-1)` in the sorted values).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty set");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(values: &[f64]) -> Volume {
        Volume::new([values.len(), 1, 1], [1.0; 3], [0.0; 3], values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_uniform_ramp() {
        let vol = line(&(0..=100).map(f64::from).collect::<Vec<_>>());
        let n = vol.normalize_intensity();
        assert!(!n.degenerate);
        assert_eq!(n.p5, 5.0);
        assert_eq!(n.p95, 95.0);
        assert_eq!(n.volume.get(5, 0, 0), 0.0);
        assert_eq!(n.volume.get(95, 0, 0), 1.0);
        assert!((n.volume.get(50, 0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(n.volume.get(0, 0, 0), 0.0);
        assert_eq!(n.volume.get(100, 0, 0), 1.0);
    }

    #[test]
    fn normalize_constant_is_flagged() {
        let vol = Volume::filled([3, 3, 3], [1.0; 3], [0.0; 3], 7.0).unwrap();
        let n = vol.normalize_intensity();
        assert!(n.degenerate);
        assert!(n.volume.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_two_level() {
        let mut values = vec![0.0; 95];
        values.extend([1.0; 5]);
        let n = line(&values).normalize_intensity();
        // p95 sits at rank 94.05 of 100 sorted values: 0 + 0.05 * (1 - 0).
        assert!((n.p95 - 0.05).abs() < 1e-12);
        assert_eq!(n.volume.min_value(), 0.0);
        assert_eq!(n.volume.max_value(), 1.0);
        for (a, b) in values.iter().zip(n.volume.data()) {
            assert_eq!(*a, *b);
        }
    }

    #[test]
    fn sample_at_voxel_center_and_midpoint() {
        let vol = Volume::new([2, 1, 1], [0.5, 1.0, 1.0], [1.0, 0.0, 0.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(vol.sample_trilinear(WorldPoint::new(1.5, 0.0, 0.0)), 1.0);
        assert_eq!(vol.sample_trilinear(WorldPoint::new(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(vol.sample_trilinear(WorldPoint::new(1.25, 0.0, 0.0)), 0.5);
        assert_eq!(vol.sample_trilinear(WorldPoint::new(11.5, 0.0, 0.0)), 0.0);
        assert_eq!(vol.sample_trilinear(WorldPoint::new(-9.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn flip_small() {
        let vol = line(&[3.0, 4.0]);
        assert_eq!(vol.flip_sagittal().data(), &[4.0, 3.0]);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Volume::new([0, 1, 1], [1.0; 3], [0.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3], vec![0.0]).is_err());
        assert!(Volume::new([2, 1, 1], [1.0; 3], [0.0; 3], vec![0.0]).is_err());
    }

    fn small_volume() -> impl Strategy<Value = Volume> {
        (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(m, n, p)| {
            prop::collection::vec(-10.0f64..10.0, m * n * p).prop_map(move |data| {
                Volume::new([m, n, p], [0.7, 1.1, 0.9], [1.0, -2.0, 0.5], data).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn flip_is_involution(vol in small_volume()) {
            let twice = vol.flip_sagittal().flip_sagittal();
            prop_assert_eq!(&twice, &vol);
            let mut a = vol.data().to_vec();
            let mut b = vol.flip_sagittal().data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn trilinear_exact_on_affine(alpha in -5.0f64..5.0, beta in -3.0f64..3.0,
                                     gamma in -2.0f64..2.0,
                                     u in 0.0f64..1.0, v in 0.0f64..1.0, w in 0.0f64..1.0) {
            let dims = [6, 5, 4];
            let spacing = [0.4, 0.5, 0.8];
            let mut data = Vec::new();
            for k in 0..4 { for j in 0..5 { for i in 0..6 {
                data.push(alpha + beta * i as f64 + gamma * (j + k) as f64);
            }}}
            let vol = Volume::new(dims, spacing, [0.0; 3], data).unwrap();
            let (ci, cj, ck) = (u * 5.0, v * 4.0, w * 3.0);
            let pt = WorldPoint::new(ci * 0.4, cj * 0.5, ck * 0.8);
            let expected = alpha + beta * ci + gamma * (cj + ck);
            let got = vol.sample_trilinear(pt);
            prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }

        #[test]
        fn normalize_idempotent(inner in prop::collection::vec(0.0f64..1.0, 1..60), pad in 1usize..6) {
            // Enough exact zeros and ones that p5 = 0 and p95 = 1 already.
            let extra = inner.len() / 5 + 2 + pad;
            let mut values = inner;
            values.extend(std::iter::repeat_n(0.0, extra));
            values.extend(std::iter::repeat_n(1.0, extra));
            let vol = line(&values);
            let once = vol.normalize_intensity();
            prop_assert_eq!((once.p5, once.p95), (0.0, 1.0));
            prop_assert_eq!(once.volume.data(), vol.data());
            let twice = once.volume.normalize_intensity();
            prop_assert_eq!(twice.volume.data(), once.volume.data());
        }
    }
}
