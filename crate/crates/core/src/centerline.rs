//! Proximity fields and shortest-path centerline tracing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::phantom::{ArteryClass, PhantomTruth};
use crate::{rng, Error, Result, Volume, WorldPoint};

pub const CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProximityParams {
    pub a: f64,
    pub d_max_mm: f64,
}

impl Default for ProximityParams {
    fn default() -> Self {
        Self {
            a: 6.0,
            d_max_mm: 5.0,
        }
    }
}

impl ProximityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.d_max_mm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "proximity parameters must be positive, got a={} d_max={}",
                self.a, self.d_max_mm
            )));
        }
        Ok(())
    }

    /// Value on the centerline itself.
    pub fn peak(&self) -> f64 {
        self.a.exp_m1()
    }
}

/// `exp(a(1 - d/d_max)) - 1` inside the support, zero outside.
pub fn proximity_value(d: f64, p: &ProximityParams) -> f64 {
    if d < p.d_max_mm {
        (p.a * (1.0 - d / p.d_max_mm)).exp_m1()
    } else {
        0.0
    }
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Euclidean distance from `p` to a polyline (a single vertex counts as a point).
pub fn distance_to_polyline(p: [f64; 3], poly: &[[f64; 3]]) -> f64 {
    match poly {
        [] => f64::INFINITY,
        [v] => segment_distance(p, *v, *v),
        _ => poly
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMap {
    /// Indexed by artery channel: 0 internal, 1 external.
    pub channels: Vec<Volume>,
    pub params: ProximityParams,
    /// The polylines each channel was built from.
    pub sources: Vec<Vec<Vec<[f64; 3]>>>,
}

impl ProximityMap {
    pub fn channel(&self, c: usize) -> &Volume {
        &self.channels[c]
    }
}

fn render_channel(geometry: &Volume, lines: &[Vec<[f64; 3]>], p: &ProximityParams) -> Volume {
    let mut out = Volume::filled(geometry.dims(), geometry.spacing(), geometry.origin(), 0.0)
        .expect("geometry comes from a valid volume");
    if lines.iter().all(|l| l.is_empty()) {
        return out;
    }
    let [m, n, q] = geometry.dims();
    for k in 0..q {
        let z = geometry.slice_z(k);
        // Only segments whose z-range comes within d_max of this slice matter.
        let near: Vec<Vec<[f64; 3]>> = lines
            .iter()
            .flat_map(|l| {
                let segs: Vec<[[f64; 3]; 2]> = if l.len() == 1 {
                    vec![[l[0], l[0]]]
                } else {
                    l.windows(2).map(|w| [w[0], w[1]]).collect()
                };
                segs.into_iter()
                    .filter(move |s| {
                        s[0][2].min(s[1][2]) - p.d_max_mm < z
                            && z < s[0][2].max(s[1][2]) + p.d_max_mm
                    })
                    .map(|s| s.to_vec())
            })
            .collect();
        if near.is_empty() {
            continue;
        }
        for j in 0..n {
            for i in 0..m {
                let w = geometry.voxel_to_world(i, j, k).to_array();
                let d = near
                    .iter()
                    .map(|s| segment_distance(w, s[0], s[1]))
                    .fold(f64::INFINITY, f64::min);
                out.set(i, j, k, proximity_value(d, p));
            }
        }
    }
    out
}

/// Builds the two-channel map on the grid of `geometry` from explicit polylines.
pub fn proximity_from_lines(
    geometry: &Volume,
    sources: Vec<Vec<Vec<[f64; 3]>>>,
    params: ProximityParams,
) -> Result<ProximityMap> {
    params.validate()?;
    if sources.len() != CHANNELS {
        return Err(Error::Shape(format!(
            "expected {CHANNELS} channels, got {}",
            sources.len()
        )));
    }
    let channels = sources
        .iter()
        .map(|lines| render_channel(geometry, lines, &params))
        .collect();
    Ok(ProximityMap {
        channels,
        params,
        sources,
    })
}

/// Builds the map from the phantom's analytic centerlines.
pub fn proximity_map(
    truth: &PhantomTruth,
    geometry: &Volume,
    params: ProximityParams,
) -> Result<ProximityMap> {
    let mut sources = vec![Vec::new(); CHANNELS];
    for v in &truth.vessels {
        sources[v.class().channel()].push(v.centerline_mm.clone());
    }
    proximity_from_lines(geometry, sources, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeParams {
    pub sigma_add: f64,
    /// Probability that each aligned block is zeroed.
    pub dropout_prob: f64,
    pub dropout_block: usize,
    pub centerline_wobble_mm: f64,
}

impl Default for DegradeParams {
    fn default() -> Self {
        Self {
            sigma_add: 0.0,
            dropout_prob: 0.0,
            dropout_block: 8,
            centerline_wobble_mm: 0.0,
        }
    }
}

impl DegradeParams {
    pub fn is_identity(&self) -> bool {
        self.sigma_add == 0.0 && self.dropout_prob == 0.0 && self.centerline_wobble_mm == 0.0
    }
}

/// Shifts each vertex laterally by `wobble * sin(2πz/P + φ)` along a random direction.
fn wobble_line<R: Rng + ?Sized>(line: &[[f64; 3]], wobble: f64, rng: &mut R) -> Vec<[f64; 3]> {
    let period = 10.0 + 20.0 * rng.random::<f64>();
    let phase = TAU * rng.random::<f64>();
    let dir = TAU * rng.random::<f64>();
    line.iter()
        .map(|p| {
            let s = wobble * (TAU * p[2] / period + phase).sin();
            [p[0] + s * dir.cos(), p[1] + s * dir.sin(), p[2]]
        })
        .collect()
}

/// Emulates an imperfect predicted map. Steps run in order: rebuild from
/// wobbled centerlines, add clipped Gaussian noise, zero random blocks.
pub fn degrade_map(map: &ProximityMap, noise: &DegradeParams, seed: u64) -> Result<ProximityMap> {
    if noise.sigma_add < 0.0
        || !(0.0..=1.0).contains(&noise.dropout_prob)
        || noise.centerline_wobble_mm < 0.0
    {
        return Err(Error::InvalidConfig(format!(
            "invalid degradation parameters {noise:?}"
        )));
    }
    if noise.dropout_block == 0 {
        return Err(Error::InvalidConfig("dropout_block must be >= 1".into()));
    }
    let mut out = map.clone();
    if noise.centerline_wobble_mm > 0.0 {
        let mut rng = rng::seeded(seed, "degrade-wobble");
        let sources: Vec<Vec<Vec<[f64; 3]>>> = map
            .sources
            .iter()
            .map(|lines| {
                lines
                    .iter()
                    .map(|l| wobble_line(l, noise.centerline_wobble_mm, &mut rng))
                    .collect()
            })
            .collect();
        out = proximity_from_lines(&map.channels[0], sources, map.params)?;
    }
    let hi = map.params.peak();
    if noise.sigma_add > 0.0 {
        let normal =
            Normal::new(0.0, noise.sigma_add).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rng = rng::seeded(seed, "degrade-noise");
        for ch in &mut out.channels {
            for v in ch.data_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, hi);
            }
        }
    }
    if noise.dropout_prob > 0.0 {
        let mut rng = rng::seeded(seed, "degrade-dropout");
        let b = noise.dropout_block;
        for ch in &mut out.channels {
            let [m, n, q] = ch.dims();
            for bk in (0..q).step_by(b) {
                for bj in (0..n).step_by(b) {
                    for bi in (0..m).step_by(b) {
                        if rng.random::<f64>() >= noise.dropout_prob {
                            continue;
                        }
                        for k in bk..(bk + b).min(q) {
                            for j in bj..(bj + b).min(n) {
                                for i in bi..(bi + b).min(m) {
                                    ch.set(i, j, k, 0.0);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterlinePath {
    pub channel: usize,
    pub voxels: Vec<[usize; 3]>,
    pub world: Vec<WorldPoint>,
    /// Sum of edge weights under the node cost `max(f) - f`.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterlineRecord {
    pub channel: usize,
    pub voxels: Vec<[usize; 3]>,
    pub world_mm: Vec<[f64; 3]>,
}

impl CenterlinePath {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// True when consecutive vertices are distinct 26-neighbors.
    pub fn is_connected(&self) -> bool {
        self.voxels.windows(2).all(|w| are_neighbors(w[0], w[1]))
    }

    /// Mean path position on every slice the path visits.
    pub fn slice_centers(&self) -> BTreeMap<usize, WorldPoint> {
        let mut acc: BTreeMap<usize, ([f64; 3], usize)> = BTreeMap::new();
        for (v, w) in self.voxels.iter().zip(&self.world) {
            let e = acc.entry(v[2]).or_insert(([0.0; 3], 0));
            e.0[0] += w.x;
            e.0[1] += w.y;
            e.0[2] += w.z;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, (s, n))| {
                (
                    k,
                    WorldPoint::new(s[0] / n as f64, s[1] / n as f64, s[2] / n as f64),
                )
            })
            .collect()
    }

    pub fn to_record(&self) -> CenterlineRecord {
        CenterlineRecord {
            channel: self.channel,
            voxels: self.voxels.clone(),
            world_mm: self.world.iter().map(|w| w.to_array()).collect(),
        }
    }

    /// Rebuilds a path from JSON; the cost is not stored and reads back as NaN.
    pub fn from_record(rec: &CenterlineRecord) -> Result<Self> {
        if rec.voxels.len() != rec.world_mm.len() {
            return Err(Error::Shape(
                "centerline voxels and world_mm differ in length".into(),
            ));
        }
        Ok(Self {
            channel: rec.channel,
            voxels: rec.voxels.clone(),
            world: rec.world_mm.iter().map(|&p| p.into()).collect(),
            cost: f64::NAN,
        })
    }
}

pub fn are_neighbors(a: [usize; 3], b: [usize; 3]) -> bool {
    let d = (0..3).map(|i| a[i].abs_diff(b[i])).collect::<Vec<_>>();
    d.iter().all(|&x| x <= 1) && d.contains(&1)
}

/// Relative size of the per-node cost floor. Without it a flat map has zero
/// cost everywhere and every path would tie; with it ties resolve to the
/// geometrically shortest path.
const COST_FLOOR: f64 = 1e-9;

/// Node costs `max(f) - f` plus the tie-breaking floor.
pub fn node_costs(map: &Volume) -> (Vec<f64>, f64) {
    let hi = map.max_value();
    let floor = COST_FLOOR * hi.max(1.0);
    (map.data().iter().map(|&f| hi - f + floor).collect(), hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed so the max-heap pops the smallest distance, then smallest index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The 26 neighbor offsets with their step lengths in mm.
pub fn neighbor_offsets(spacing: [f64; 3]) -> Vec<([isize; 3], f64)> {
    let mut out = Vec::with_capacity(26);
    for dk in -1isize..=1 {
        for dj in -1isize..=1 {
            for di in -1isize..=1 {
                if (di, dj, dk) == (0, 0, 0) {
                    continue;
                }
                let len = ((di as f64 * spacing[0]).powi(2)
                    + (dj as f64 * spacing[1]).powi(2)
                    + (dk as f64 * spacing[2]).powi(2))
                .sqrt();
                out.push(([di, dj, dk], len));
            }
        }
    }
    out
}

fn check_voxel(map: &Volume, v: [usize; 3]) -> Result<()> {
    let d = map.dims();
    if (0..3).any(|i| v[i] >= d[i]) {
        let w = map.voxel_to_world(v[0], v[1], v[2]);
        return Err(Error::OutsideVolume {
            x: w.x,
            y: w.y,
            z: w.z,
        });
    }
    Ok(())
}

/// Sum of edge weights along a voxel path using the true costs `max(f) - f`.
pub fn path_cost(map: &Volume, voxels: &[[usize; 3]]) -> f64 {
    let hi = map.max_value();
    let s = map.spacing();
    voxels
        .windows(2)
        .map(|w| {
            let (u, v) = (w[0], w[1]);
            let len = (0..3)
                .map(|i| ((u[i] as f64 - v[i] as f64) * s[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let cu = hi - map.get(u[0], u[1], u[2]);
            let cv = hi - map.get(v[0], v[1], v[2]);
            0.5 * (cu + cv) * len
        })
        .sum()
}

/// Minimum-cost 26-connected path from `start` to `end` on one map channel.
pub fn trace_centerline(
    map: &Volume,
    channel: usize,
    start: [usize; 3],
    end: [usize; 3],
) -> Result<CenterlinePath> {
    check_voxel(map, start)?;
    check_voxel(map, end)?;
    let voxels = dijkstra(map, &node_costs(map).0, start, end);
    Ok(CenterlinePath {
        channel,
        world: voxels
            .iter()
            .map(|v| map.voxel_to_world(v[0], v[1], v[2]))
            .collect(),
        cost: path_cost(map, &voxels),
        voxels,
    })
}

fn dijkstra(map: &Volume, cost: &[f64], start: [usize; 3], end: [usize; 3]) -> Vec<[usize; 3]> {
    let [m, n, q] = map.dims();
    let src = map.index(start[0], start[1], start[2]);
    let dst = map.index(end[0], end[1], end[2]);
    let offsets = neighbor_offsets(map.spacing());
    let mut dist = vec![f64::INFINITY; cost.len()];
    let mut pred = vec![usize::MAX; cost.len()];
    let mut done = vec![false; cost.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        node: src,
    });
    while let Some(Entry { dist: d, node: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == dst {
            break;
        }
        let [i, j, k] = map.coords(u);
        for &(o, len) in &offsets {
            let (ni, nj, nk) = (i as isize + o[0], j as isize + o[1], k as isize + o[2]);
            if ni < 0
                || nj < 0
                || nk < 0
                || ni as usize >= m
                || nj as usize >= n
                || nk as usize >= q
            {
                continue;
            }
            let v = map.index(ni as usize, nj as usize, nk as usize);
            if done[v] {
                continue;
            }
            let nd = d + 0.5 * (cost[u] + cost[v]) * len;
            if nd < dist[v] || (nd == dist[v] && u < pred[v]) {
                dist[v] = nd;
                pred[v] = u;
                heap.push(Entry { dist: nd, node: v });
            }
        }
    }
    let mut path = vec![map.coords(dst)];
    let mut cur = dst;
    while cur != src {
        cur = pred[cur];
        path.push(map.coords(cur));
    }
    path.reverse();
    path
}

/// Argmax voxel of every `stride`-th slice, counted from the first nonzero
/// slice, plus the last nonzero slice. All-zero slices are skipped.
pub fn extract_waypoints(map: &Volume, stride: usize) -> Result<Vec<[usize; 3]>> {
    if stride == 0 {
        return Err(Error::InvalidConfig("waypoint stride must be >= 1".into()));
    }
    let [m, _, q] = map.dims();
    let peak = |k: usize| -> Option<[usize; 3]> {
        let (mut best, mut at) = (0.0, None);
        for (idx, &v) in map.slice(k).iter().enumerate() {
            if v > best {
                best = v;
                at = Some([idx % m, idx / m, k]);
            }
        }
        at
    };
    let nonzero: Vec<usize> = (0..q).filter(|&k| peak(k).is_some()).collect();
    let (Some(&first), Some(&last)) = (nonzero.first(), nonzero.last()) else {
        return Ok(Vec::new());
    };
    let mut out: Vec<[usize; 3]> = (first..=last).step_by(stride).filter_map(peak).collect();
    if out.last().map(|w| w[2]) != Some(last) {
        out.extend(peak(last));
    }
    Ok(out)
}

/// Traces consecutive waypoints and concatenates the segments.
pub fn trace_with_waypoints(map: &Volume, channel: usize, stride: usize) -> Result<CenterlinePath> {
    let waypoints = extract_waypoints(map, stride)?;
    if waypoints.is_empty() {
        return Err(Error::Degenerate(format!(
            "proximity channel {channel} is zero everywhere"
        )));
    }
    let costs = node_costs(map).0;
    let mut voxels = vec![waypoints[0]];
    for w in waypoints.windows(2) {
        let seg = dijkstra(map, &costs, w[0], w[1]);
        voxels.extend_from_slice(&seg[1..]);
    }
    Ok(CenterlinePath {
        channel,
        world: voxels
            .iter()
            .map(|v| map.voxel_to_world(v[0], v[1], v[2]))
            .collect(),
        cost: path_cost(map, &voxels),
        voxels,
    })
}

/// Channel index for an artery class.
pub fn channel_of(class: ArteryClass) -> usize {
    class.channel()
}
