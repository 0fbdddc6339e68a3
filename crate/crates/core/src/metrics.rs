//! Dice overlap of wall regions and Hausdorff distance of contours.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contour::{rasterize, BinaryMask, ContourRecord, Polygon, SliceGrid};
use crate::phantom::PhantomTruth;
use crate::volume::percentile;
use crate::{Error, Result};

/// Upper bound on the boundary sampling step (mm).
pub const HAUSDORFF_STEP_MM: f64 = 0.05;
/// Boundary samples per polygon while that still meets the step bound. A
/// count proportional to the perimeter keeps the metric scale-covariant.
const HAUSDORFF_SAMPLES: usize = 2048;

/// `2|a∩b| / (|a|+|b|)`, defined as 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.grid != b.grid || a.data.len() != b.data.len() {
        return Err(Error::Shape("dice needs masks on the same grid".into()));
    }
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let both = a.data.iter().zip(&b.data).filter(|(&x, &y)| x && y).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

fn boundary_samples(p: &Polygon) -> Result<Vec<[f64; 2]>> {
    let perimeter = p.perimeter();
    if p.len() < 3 || !(p.area() > 0.0) || !perimeter.is_finite() {
        return Err(Error::Degenerate(format!(
            "hausdorff needs a polygon with >= 3 vertices and positive area (got {} vertices)",
            p.len()
        )));
    }
    let count = HAUSDORFF_SAMPLES.max((perimeter / HAUSDORFF_STEP_MM).ceil() as usize);
    Ok(p.densify(perimeter / count as f64))
}

/// Directed distance `max_{a∈A} min_{b∈B} |a-b|`, with the early-break scan.
fn directed(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut worst2 = 0.0f64;
    for p in a {
        let mut best2 = f64::INFINITY;
        for q in b {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d2 < best2 {
                best2 = d2;
                if best2 <= worst2 {
                    break;
                }
            }
        }
        worst2 = worst2.max(best2);
    }
    worst2.sqrt()
}

/// Symmetric Hausdorff distance between densified polygon boundaries (mm).
pub fn hausdorff(a: &Polygon, b: &Polygon) -> Result<f64> {
    let (pa, pb) = (boundary_samples(a)?, boundary_samples(b)?);
    Ok(directed(&pa, &pb).max(directed(&pb, &pa)))
}

/// Binary ring mask: outer region with the lumen region removed.
pub fn ring_mask(
    lumen: &Polygon,
    outer: &Polygon,
    grid: SliceGrid,
    supersample: usize,
) -> BinaryMask {
    let l = rasterize(lumen, grid, supersample).binarize();
    rasterize(outer, grid, supersample).binarize().minus(&l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    /// Name of the scored volume; empty for single-volume runs.
    #[serde(default)]
    pub volume: String,
    pub vessel: usize,
    pub slice: usize,
    pub dsc_wall: f64,
    pub hd_lumen_mm: f64,
    pub hd_outer_mm: f64,
    /// False when the prediction could not be scored (degenerate contour).
    pub valid: bool,
}

impl CaseResult {
    pub fn slice_id(&self) -> String {
        if self.volume.is_empty() {
            format!("v{}_s{}", self.vessel, self.slice)
        } else {
            format!("{}/v{}_s{}", self.volume, self.vessel, self.slice)
        }
    }
}

/// Scores one predicted contour pair against its truth polygons.
pub fn score_case(
    pred: (&Polygon, &Polygon),
    truth: (&Polygon, &Polygon),
    grid: SliceGrid,
    supersample: usize,
) -> Result<(f64, f64, f64)> {
    let dsc = dice(
        &ring_mask(pred.0, pred.1, grid, supersample),
        &ring_mask(truth.0, truth.1, grid, supersample),
    )?;
    Ok((
        dsc,
        hausdorff(pred.0, truth.0)?,
        hausdorff(pred.1, truth.1)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (q1, median, q3) = (
            percentile(values, 25.0),
            percentile(values, 50.0),
            percentile(values, 75.0),
        );
        Some(Self {
            median,
            q1,
            q3,
            iqr: q3 - q1,
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Quartiles::of(values).map(|q| q.median)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub invalid: usize,
    pub dsc_wall: Option<Quartiles>,
    pub hd_lumen_mm: Option<Quartiles>,
    pub hd_outer_mm: Option<Quartiles>,
}

impl Summary {
    pub fn of(cases: &[CaseResult]) -> Self {
        let ok: Vec<&CaseResult> = cases.iter().filter(|c| c.valid).collect();
        let col =
            |f: fn(&CaseResult) -> f64| Quartiles::of(&ok.iter().map(|c| f(c)).collect::<Vec<_>>());
        Self {
            cases: cases.len(),
            invalid: cases.len() - ok.len(),
            dsc_wall: col(|c| c.dsc_wall),
            hd_lumen_mm: col(|c| c.hd_lumen_mm),
            hd_outer_mm: col(|c| c.hd_outer_mm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cases: Vec<CaseResult>,
    pub summary: Summary,
}

/// A predicted contour for one vessel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselPrediction {
    pub vessel: usize,
    pub contours: Vec<ContourRecord>,
}

/// Scores every predicted slice that has annotated truth. Slices without
/// truth are skipped with a warning; unscorable predictions are kept with
/// `valid = false` and worst-case values.
pub fn evaluate_volume(
    predictions: &[VesselPrediction],
    truth: &PhantomTruth,
    grid: SliceGrid,
    supersample: usize,
) -> Result<Evaluation> {
    let mut cases = Vec::new();
    for pred in predictions {
        for rec in &pred.contours {
            let annotated = truth
                .vessels
                .get(pred.vessel)
                .and_then(|v| v.slice_truth(rec.slice))
                .is_some_and(|s| s.annotated);
            let Some(truth_polys) = truth.polygons(pred.vessel, rec.slice).filter(|_| annotated)
            else {
                log::warn!(
                    "no annotated truth for vessel {} slice {}; skipped",
                    pred.vessel,
                    rec.slice
                );
                continue;
            };
            let scored = rec.to_pair().and_then(|pair| {
                let (l, o) = pair.to_polygons();
                score_case(
                    (&l, &o),
                    (&truth_polys.0, &truth_polys.1),
                    grid,
                    supersample,
                )
            });
            let case = match scored {
                Ok((dsc_wall, hd_lumen_mm, hd_outer_mm)) => CaseResult {
                    volume: String::new(),
                    vessel: pred.vessel,
                    slice: rec.slice,
                    dsc_wall,
                    hd_lumen_mm,
                    hd_outer_mm,
                    valid: true,
                },
                Err(e) => {
                    log::warn!(
                        "vessel {} slice {} not scorable: {e}",
                        pred.vessel,
                        rec.slice
                    );
                    CaseResult {
                        volume: String::new(),
                        vessel: pred.vessel,
                        slice: rec.slice,
                        dsc_wall: 0.0,
                        hd_lumen_mm: f64::INFINITY,
                        hd_outer_mm: f64::INFINITY,
                        valid: false,
                    }
                }
            };
            cases.push(case);
        }
    }
    let summary = Summary::of(&cases);
    Ok(Evaluation { cases, summary })
}

pub fn write_csv(path: &Path, cases: &[CaseResult]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "slice_id,dsc_wall,hd_lumen_mm,hd_outer_mm")?;
    for c in cases {
        writeln!(
            f,
            "{},{:.6},{:.6},{:.6}",
            c.slice_id(),
            c.dsc_wall,
            c.hd_lumen_mm,
            c.hd_outer_mm
        )?;
    }
    f.flush()?;
    Ok(())
}
