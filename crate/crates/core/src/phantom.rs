//! Synthetic vessel volumes with exact ground truth.
//!
//! Each vessel is a tube whose axial cross-section is star-shaped around its
//! centerline point: an (optionally elliptic) lumen surrounded by a wall whose
//! thickness carries smooth Gaussian plaque bumps. Radii are analytic, so
//! polar ground truth at any center inside the lumen is exact.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contour::{rasterize, ray_angles, BinaryMask, Polygon, Region, SliceGrid};
use crate::{rng, Error, Result, Volume, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensities {
    pub lumen: f64,
    pub wall: f64,
    pub background: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Self {
            lumen: 0.1,
            wall: 0.8,
            background: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    /// 1 for a single internal artery, 2 adds an external branch.
    pub vessel_count: usize,
    /// Axial position of the branch point as a fraction of the slice count.
    pub branch_fraction: f64,
    /// Lateral drift of the external branch, mm per mm of axial travel.
    pub branch_divergence: f64,
    pub lumen_radius_mm: [f64; 2],
    /// Upper bound on the lumen's relative elliptic deformation.
    pub lumen_ellipticity: f64,
    pub wall_thickness_mm: [f64; 2],
    pub plaques_per_vessel: usize,
    pub plaque_amplitude_mm: [f64; 2],
    pub plaque_angular_width_rad: f64,
    pub plaque_axial_sigma_mm: f64,
    pub centerline_amplitude_mm: [f64; 2],
    pub centerline_period_mm: [f64; 2],
    pub intensity: Intensities,
    pub noise_sigma: f64,
    /// Number of equidistant angles at which truth radii are tabulated.
    pub eval_angles: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [48, 48, 40],
            spacing_mm: [0.4, 0.4, 0.4],
            origin_mm: [0.0, 0.0, 0.0],
            vessel_count: 1,
            branch_fraction: 0.4,
            branch_divergence: 0.35,
            lumen_radius_mm: [2.0, 3.0],
            lumen_ellipticity: 0.1,
            wall_thickness_mm: [0.8, 1.4],
            plaques_per_vessel: 1,
            plaque_amplitude_mm: [0.0, 0.8],
            plaque_angular_width_rad: 0.6,
            plaque_axial_sigma_mm: 2.0,
            centerline_amplitude_mm: [0.5, 2.0],
            centerline_period_mm: [12.0, 24.0],
            intensity: Intensities::default(),
            noise_sigma: 0.03,
            eval_angles: 31,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0] >= min && r[1] >= r[0] && r[1].is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "{name} must satisfy {min} <= min <= max, got {r:?}"
        )));
    }
    Ok(())
}

impl PhantomConfig {
    /// Largest outer radius any vessel can reach (mm).
    pub fn max_outer_radius(&self) -> f64 {
        self.lumen_radius_mm[1] * (1.0 + self.lumen_ellipticity)
            + self.wall_thickness_mm[1]
            + self.plaques_per_vessel as f64 * self.plaque_amplitude_mm[1]
    }

    fn branch_slice(&self) -> usize {
        ((self.dims[2] as f64 * self.branch_fraction).round() as usize).min(self.dims[2] - 1)
    }

    /// Total lateral drift of the external branch at the last slice (mm).
    fn branch_drift(&self) -> f64 {
        if self.vessel_count < 2 {
            return 0.0;
        }
        let span = (self.dims[2] - 1 - self.branch_slice()) as f64 * self.spacing_mm[2];
        self.branch_divergence * span
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidConfig(format!(
                "phantom dims must be >= 2, got {:?}",
                self.dims
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("voxel spacing must be > 0".into()));
        }
        if !(1..=2).contains(&self.vessel_count) {
            return Err(Error::InvalidConfig(format!(
                "vessel_count must be 1 or 2, got {}",
                self.vessel_count
            )));
        }
        if !(0.0..1.0).contains(&self.branch_fraction) || self.branch_divergence < 0.0 {
            return Err(Error::InvalidConfig(
                "branch_fraction must be in [0, 1) and divergence >= 0".into(),
            ));
        }
        check_range("lumen_radius_mm", self.lumen_radius_mm, f64::MIN_POSITIVE)?;
        check_range("wall_thickness_mm", self.wall_thickness_mm, 0.0)?;
        check_range("plaque_amplitude_mm", self.plaque_amplitude_mm, 0.0)?;
        check_range("centerline_amplitude_mm", self.centerline_amplitude_mm, 0.0)?;
        check_range(
            "centerline_period_mm",
            self.centerline_period_mm,
            f64::MIN_POSITIVE,
        )?;
        if !(0.0..1.0).contains(&self.lumen_ellipticity) {
            return Err(Error::InvalidConfig(
                "lumen_ellipticity must be in [0, 1)".into(),
            ));
        }
        if !(self.plaque_angular_width_rad > 0.0 && self.plaque_axial_sigma_mm > 0.0) {
            return Err(Error::InvalidConfig("plaque widths must be > 0".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if self.eval_angles < 4 {
            return Err(Error::InvalidConfig("eval_angles must be >= 4".into()));
        }
        let need =
            self.centerline_amplitude_mm[1] + self.max_outer_radius() + 0.5 * self.branch_drift();
        for a in 0..2 {
            let half = 0.5 * (self.dims[a] - 1) as f64 * self.spacing_mm[a];
            // Keep at least one voxel of background around the outer wall.
            if need + self.spacing_mm[a] > half {
                return Err(Error::InvalidConfig(format!(
                    "vessels do not fit in-plane: sinusoid amplitude {:.2} + max outer radius {:.2} + branch drift {:.2} \
                     + one voxel exceeds the half-extent {half:.2} mm along axis {a}",
                    self.centerline_amplitude_mm[1],
                    self.max_outer_radius(),
                    0.5 * self.branch_drift(),
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArteryClass {
    Internal,
    External,
}

impl ArteryClass {
    pub fn channel(self) -> usize {
        match self {
            ArteryClass::Internal => 0,
            ArteryClass::External => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude_mm: f64,
    pub period_mm: f64,
    pub phase_rad: f64,
}

impl Sinusoid {
    fn at(&self, z: f64) -> f64 {
        self.amplitude_mm * (TAU * z / self.period_mm + self.phase_rad).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plaque {
    pub amplitude_mm: f64,
    pub angle_rad: f64,
    pub z_mm: f64,
    pub angular_width_rad: f64,
    pub axial_sigma_mm: f64,
}

/// Lateral drift of a branch starting at `z0_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub z0_mm: f64,
    pub direction: [f64; 2],
    pub divergence: f64,
}

/// Analytic description of one vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselSpec {
    pub class: ArteryClass,
    /// First and last slice (inclusive) the vessel occupies.
    pub slices: [usize; 2],
    pub base_center_mm: [f64; 2],
    pub wobble: [Sinusoid; 2],
    pub branch: Option<Branch>,
    pub lumen_radius_mm: f64,
    pub ellipticity: f64,
    pub ellipse_angle_rad: f64,
    pub thickness_mm: f64,
    pub plaques: Vec<Plaque>,
}

/// Wraps an angle difference into `(-π, π]`.
fn wrap(d: f64) -> f64 {
    let w = d.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

impl VesselSpec {
    pub fn center(&self, z: f64) -> [f64; 2] {
        let mut c = [
            self.base_center_mm[0] + self.wobble[0].at(z),
            self.base_center_mm[1] + self.wobble[1].at(z),
        ];
        if let Some(b) = &self.branch {
            let s = b.divergence * (z - b.z0_mm).max(0.0);
            c[0] += s * b.direction[0];
            c[1] += s * b.direction[1];
        }
        c
    }

    pub fn lumen_radius(&self, theta: f64, _z: f64) -> f64 {
        self.lumen_radius_mm
            * (1.0 + self.ellipticity * (2.0 * (theta - self.ellipse_angle_rad)).cos())
    }

    pub fn thickness(&self, theta: f64, z: f64) -> f64 {
        let bumps: f64 = self
            .plaques
            .iter()
            .map(|p| {
                let da = wrap(theta - p.angle_rad) / p.angular_width_rad;
                let dz = (z - p.z_mm) / p.axial_sigma_mm;
                p.amplitude_mm * (-0.5 * (da * da + dz * dz)).exp()
            })
            .sum();
        self.thickness_mm + bumps
    }

    pub fn outer_radius(&self, theta: f64, z: f64) -> f64 {
        self.lumen_radius(theta, z) + self.thickness(theta, z)
    }

    /// Upper bound on the outer radius at any angle and height.
    pub fn max_outer_radius(&self) -> f64 {
        self.lumen_radius_mm * (1.0 + self.ellipticity)
            + self.thickness_mm
            + self.plaques.iter().map(|p| p.amplitude_mm).sum::<f64>()
    }

    pub fn contains_slice(&self, k: usize) -> bool {
        (self.slices[0]..=self.slices[1]).contains(&k)
    }

    /// Mirror image across the plane `x = x_mid`.
    pub fn mirrored(&self, x_mid: f64) -> VesselSpec {
        let mut m = self.clone();
        m.base_center_mm[0] = 2.0 * x_mid - self.base_center_mm[0];
        m.wobble[0].amplitude_mm = -self.wobble[0].amplitude_mm;
        if let Some(b) = m.branch.as_mut() {
            b.direction[0] = -b.direction[0];
        }
        m.ellipse_angle_rad = PI - self.ellipse_angle_rad;
        for p in &mut m.plaques {
            p.angle_rad = PI - p.angle_rad;
        }
        m
    }
}

/// One analytic contour of a vessel at a fixed height.
#[derive(Debug, Clone, Copy)]
pub struct StarContour<'a> {
    pub spec: &'a VesselSpec,
    pub z: f64,
    pub center: [f64; 2],
    pub outer: bool,
}

impl StarContour<'_> {
    pub fn radius(&self, theta: f64) -> f64 {
        if self.outer {
            self.spec.outer_radius(theta, self.z)
        } else {
            self.spec.lumen_radius(theta, self.z)
        }
    }

    /// Polygon through `n` equiangular boundary points.
    pub fn polygon(&self, n: usize) -> Polygon {
        let radii: Vec<f64> = ray_angles(n).into_iter().map(|a| self.radius(a)).collect();
        Polygon::from_radii(self.center, &radii)
    }
}

impl Region for StarContour<'_> {
    fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        dx.hypot(dy) < self.radius(dy.atan2(dx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceTruth {
    pub slice: usize,
    /// False where another vessel's wall comes close enough to touch.
    pub annotated: bool,
    pub lumen_radii_mm: Vec<f64>,
    pub thickness_mm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselTruth {
    pub spec: VesselSpec,
    /// One vertex per occupied slice, increasing in z.
    pub centerline_mm: Vec<[f64; 3]>,
    pub slices: Vec<SliceTruth>,
}

impl VesselTruth {
    pub fn class(&self) -> ArteryClass {
        self.spec.class
    }

    pub fn slice_truth(&self, k: usize) -> Option<&SliceTruth> {
        self.slices.iter().find(|s| s.slice == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomTruth {
    pub config: PhantomConfig,
    pub angles_rad: Vec<f64>,
    pub vessels: Vec<VesselTruth>,
}

/// Vertex count of the dense truth polygons used for metrics.
const TRUTH_POLYGON_VERTICES: usize = 256;

impl PhantomTruth {
    pub fn slice_z(&self, k: usize) -> f64 {
        self.config.origin_mm[2] + k as f64 * self.config.spacing_mm[2]
    }

    /// Centerline point of vessel `v` on slice `k`.
    pub fn center(&self, v: usize, k: usize) -> Option<WorldPoint> {
        let spec = &self.vessels.get(v)?.spec;
        if !spec.contains_slice(k) {
            return None;
        }
        let z = self.slice_z(k);
        let c = spec.center(z);
        Some(WorldPoint::new(c[0], c[1], z))
    }

    /// Analytic lumen and outer contours of vessel `v` on slice `k`.
    pub fn contours(&self, v: usize, k: usize) -> Option<(StarContour<'_>, StarContour<'_>)> {
        let spec = &self.vessels.get(v)?.spec;
        if !spec.contains_slice(k) {
            return None;
        }
        let z = self.slice_z(k);
        let center = spec.center(z);
        Some((
            StarContour {
                spec,
                z,
                center,
                outer: false,
            },
            StarContour {
                spec,
                z,
                center,
                outer: true,
            },
        ))
    }

    /// Dense truth polygons (lumen, outer) for metric evaluation.
    pub fn polygons(&self, v: usize, k: usize) -> Option<(Polygon, Polygon)> {
        let (l, o) = self.contours(v, k)?;
        Some((
            l.polygon(TRUTH_POLYGON_VERTICES),
            o.polygon(TRUTH_POLYGON_VERTICES),
        ))
    }

    /// Mirror of this phantom across the volume's mid-sagittal plane.
    pub fn mirrored(&self) -> PhantomTruth {
        let c = &self.config;
        let x_mid = c.origin_mm[0] + 0.5 * (c.dims[0] - 1) as f64 * c.spacing_mm[0];
        let specs = self
            .vessels
            .iter()
            .map(|v| v.spec.mirrored(x_mid))
            .collect::<Vec<_>>();
        render_truth(c, &specs)
    }
}

/// Lumen and outer-wall masks of vessel `v` on slice `k`, rasterized from the
/// analytic contours. Slices outside the vessel give empty masks.
pub fn rasterize_truth_masks(
    truth: &PhantomTruth,
    vol: &Volume,
    v: usize,
    k: usize,
    supersample: usize,
) -> (BinaryMask, BinaryMask) {
    let grid = SliceGrid::of_volume(vol);
    match truth.polygons(v, k) {
        Some((l, o)) => (
            rasterize(&l, grid, supersample).binarize(),
            rasterize(&o, grid, supersample).binarize(),
        ),
        None => (BinaryMask::empty(grid), BinaryMask::empty(grid)),
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

/// Draws the vessel geometry for a validated config.
pub fn sample_vessels(cfg: &PhantomConfig) -> Vec<VesselSpec> {
    let mut rng = rng::seeded(cfg.seed, "phantom-geometry");
    let last = cfg.dims[2] - 1;
    let z_of = |k: usize| cfg.origin_mm[2] + k as f64 * cfg.spacing_mm[2];
    let mid = [
        cfg.origin_mm[0] + 0.5 * (cfg.dims[0] - 1) as f64 * cfg.spacing_mm[0],
        cfg.origin_mm[1] + 0.5 * (cfg.dims[1] - 1) as f64 * cfg.spacing_mm[1],
    ];
    let branch_dir = {
        let a = TAU * rng.random::<f64>();
        [a.cos(), a.sin()]
    };
    let drift = cfg.branch_drift();
    let base = [
        mid[0] - 0.5 * drift * branch_dir[0],
        mid[1] - 0.5 * drift * branch_dir[1],
    ];
    let wobble: [Sinusoid; 2] = std::array::from_fn(|_| Sinusoid {
        amplitude_mm: uniform(&mut rng, cfg.centerline_amplitude_mm),
        period_mm: uniform(&mut rng, cfg.centerline_period_mm),
        phase_rad: TAU * rng.random::<f64>(),
    });
    let mut specs = Vec::new();
    for v in 0..cfg.vessel_count {
        let (class, slices, branch) = if v == 0 {
            (ArteryClass::Internal, [0, last], None)
        } else {
            let k0 = cfg.branch_slice();
            let b = Branch {
                z0_mm: z_of(k0),
                direction: branch_dir,
                divergence: cfg.branch_divergence,
            };
            (ArteryClass::External, [k0, last], Some(b))
        };
        let n = cfg.eval_angles;
        let plaques = (0..cfg.plaques_per_vessel)
            .map(|_| {
                let k = rng.random_range(slices[0]..=slices[1]);
                Plaque {
                    amplitude_mm: uniform(&mut rng, cfg.plaque_amplitude_mm),
                    angle_rad: TAU * rng.random_range(0..n) as f64 / n as f64,
                    z_mm: z_of(k),
                    angular_width_rad: cfg.plaque_angular_width_rad,
                    axial_sigma_mm: cfg.plaque_axial_sigma_mm,
                }
            })
            .collect();
        specs.push(VesselSpec {
            class,
            slices,
            base_center_mm: base,
            wobble,
            branch,
            lumen_radius_mm: uniform(&mut rng, cfg.lumen_radius_mm),
            ellipticity: cfg.lumen_ellipticity * rng.random::<f64>(),
            ellipse_angle_rad: PI * rng.random::<f64>(),
            thickness_mm: uniform(&mut rng, cfg.wall_thickness_mm),
            plaques,
        });
    }
    specs
}

/// Tabulates truth for explicit vessel specs.
pub fn render_truth(cfg: &PhantomConfig, specs: &[VesselSpec]) -> PhantomTruth {
    let angles = ray_angles(cfg.eval_angles);
    let z_of = |k: usize| cfg.origin_mm[2] + k as f64 * cfg.spacing_mm[2];
    let vessels = specs
        .iter()
        .enumerate()
        .map(|(v, spec)| {
            let ks = spec.slices[0]..=spec.slices[1];
            let centerline_mm = ks
                .clone()
                .map(|k| {
                    let c = spec.center(z_of(k));
                    [c[0], c[1], z_of(k)]
                })
                .collect();
            let slices = ks
                .map(|k| {
                    let z = z_of(k);
                    let c = spec.center(z);
                    let annotated = specs.iter().enumerate().all(|(u, other)| {
                        if u == v || !other.contains_slice(k) {
                            return true;
                        }
                        let oc = other.center(z);
                        (c[0] - oc[0]).hypot(c[1] - oc[1])
                            > spec.max_outer_radius() + other.max_outer_radius()
                    });
                    SliceTruth {
                        slice: k,
                        annotated,
                        lumen_radii_mm: angles.iter().map(|&a| spec.lumen_radius(a, z)).collect(),
                        thickness_mm: angles.iter().map(|&a| spec.thickness(a, z)).collect(),
                    }
                })
                .collect();
            VesselTruth {
                spec: spec.clone(),
                centerline_mm,
                slices,
            }
        })
        .collect();
    PhantomTruth {
        config: cfg.clone(),
        angles_rad: angles,
        vessels,
    }
}

/// Noise-free intensities for explicit vessel specs. Lumen of any vessel
/// wins over wall, wall over background.
pub fn render_volume(cfg: &PhantomConfig, specs: &[VesselSpec]) -> Result<Volume> {
    let [m, n, p] = cfg.dims;
    let levels = cfg.intensity;
    let mut data = Vec::with_capacity(m * n * p);
    for k in 0..p {
        let z = cfg.origin_mm[2] + k as f64 * cfg.spacing_mm[2];
        let active: Vec<(&VesselSpec, [f64; 2], f64)> = specs
            .iter()
            .filter(|s| s.contains_slice(k))
            .map(|s| (s, s.center(z), s.max_outer_radius()))
            .collect();
        for j in 0..n {
            let y = cfg.origin_mm[1] + j as f64 * cfg.spacing_mm[1];
            for i in 0..m {
                let x = cfg.origin_mm[0] + i as f64 * cfg.spacing_mm[0];
                let mut value = levels.background;
                for &(spec, c, bound) in &active {
                    let (dx, dy) = (x - c[0], y - c[1]);
                    let d = dx.hypot(dy);
                    if d >= bound {
                        continue;
                    }
                    let theta = dy.atan2(dx);
                    let rl = spec.lumen_radius(theta, z);
                    if d < rl {
                        value = levels.lumen;
                        break;
                    }
                    if d < rl + spec.thickness(theta, z) {
                        value = levels.wall;
                    }
                }
                data.push(value);
            }
        }
    }
    Volume::new(cfg.dims, cfg.spacing_mm, cfg.origin_mm, data)
}

/// Generates the phantom volume and its truth. Identical configs (including
/// the seed) give bit-identical outputs.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(Volume, PhantomTruth)> {
    cfg.validate()?;
    let specs = sample_vessels(cfg);
    let mut vol = render_volume(cfg, &specs)?;
    if cfg.noise_sigma > 0.0 {
        let normal =
            Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rng = rng::seeded(cfg.seed, "phantom-noise");
        for v in vol.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok((vol, render_truth(cfg, &specs)))
}
