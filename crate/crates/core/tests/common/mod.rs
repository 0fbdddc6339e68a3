//! Independent reference implementations used only by the integration tests.
#![allow(dead_code)]

use polarring::Volume;

/// Shortest path cost by plain Bellman-Ford relaxation over the 26-neighborhood,
/// node cost `max(f) - f`, edge weight = mean endpoint cost times step length.
pub fn bellman_ford(map: &Volume, start: [usize; 3], end: [usize; 3]) -> f64 {
    let [m, n, q] = map.dims();
    let s = map.spacing();
    let hi = map.data().iter().cloned().fold(f64::MIN, f64::max);
    let idx = |i: usize, j: usize, k: usize| i + m * (j + n * k);
    let total = m * n * q;
    let mut dist = vec![f64::INFINITY; total];
    dist[idx(start[0], start[1], start[2])] = 0.0;
    let mut edges = Vec::new();
    for k in 0..q {
        for j in 0..n {
            for i in 0..m {
                for dk in -1i64..=1 {
                    for dj in -1i64..=1 {
                        for di in -1i64..=1 {
                            if di == 0 && dj == 0 && dk == 0 {
                                continue;
                            }
                            let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                            if a < 0
                                || b < 0
                                || c < 0
                                || a >= m as i64
                                || b >= n as i64
                                || c >= q as i64
                            {
                                continue;
                            }
                            let len = ((di as f64 * s[0]).powi(2)
                                + (dj as f64 * s[1]).powi(2)
                                + (dk as f64 * s[2]).powi(2))
                            .sqrt();
                            let cu = hi - map.get(i, j, k);
                            let cv = hi - map.get(a as usize, b as usize, c as usize);
                            edges.push((
                                idx(i, j, k),
                                idx(a as usize, b as usize, c as usize),
                                0.5 * (cu + cv) * len,
                            ));
                        }
                    }
                }
            }
        }
    }
    for _ in 0..total {
        let mut changed = false;
        for &(u, v, w) in &edges {
            if dist[u] + w < dist[v] {
                dist[v] = dist[u] + w;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    dist[idx(end[0], end[1], end[2])]
}

/// Closed-form shortest 26-connected geometric length between two voxels.
pub fn chamfer_length(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    // Only valid for isotropic spacing, which is all the tests use.
    assert!(spacing[0] == spacing[1] && spacing[1] == spacing[2]);
    let mut d: Vec<f64> = (0..3).map(|i| a[i].abs_diff(b[i]) as f64).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    let (hi, mid, lo) = (d[0], d[1], d[2]);
    spacing[0] * (3f64.sqrt() * lo + 2f64.sqrt() * (mid - lo) + (hi - mid))
}

/// Geometric length of a voxel path in mm.
pub fn path_length(voxels: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    voxels
        .windows(2)
        .map(|w| {
            (0..3)
                .map(|i| ((w[0][i] as f64 - w[1][i] as f64) * spacing[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Simple LCG so oracle inputs do not depend on the library's RNG helpers.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n - 1)
    }
}

pub fn random_map(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Volume {
    let mut rng = Lcg(seed);
    let data = (0..dims.iter().product::<usize>())
        .map(|_| rng.next_f64())
        .collect();
    Volume::new(dims, spacing, [0.0; 3], data).unwrap()
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Number of edge pairs, one from each closed polygon, that properly cross
/// (interiors intersect at a single point). Touching or collinear overlap is
/// not counted.
pub fn proper_crossings(a: &[[f64; 2]], b: &[[f64; 2]]) -> usize {
    let edges = |p: &[[f64; 2]]| -> Vec<([f64; 2], [f64; 2])> {
        (0..p.len()).map(|i| (p[i], p[(i + 1) % p.len()])).collect()
    };
    let mut count = 0;
    for (p, q) in edges(a) {
        for (r, s) in edges(b) {
            let d1 = orient(p, q, r);
            let d2 = orient(p, q, s);
            let d3 = orient(r, s, p);
            let d4 = orient(r, s, q);
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// Hand-enumerated Dice: pixel sets given as (i, j) lists.
pub fn dice_by_hand(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let both = a.iter().filter(|p| b.contains(p)).count();
    2.0 * both as f64 / (a.len() + b.len()) as f64
}
