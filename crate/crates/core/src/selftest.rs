//! Built-in oracle checks run by `polarring selftest`.

use rand::Rng;

use crate::centerline::{neighbor_offsets, trace_centerline};
use crate::neuralnet::{grad_check, Tensor};
use crate::polar::{PolarGrid, PolarImage};
use crate::segmenter::{build_model, Mode, Model, ModelConfig};
use crate::{rng, Result, Volume, WorldPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Cost of the cheapest path by repeated edge relaxation.
fn relaxation_oracle(map: &Volume, start: [usize; 3], end: [usize; 3]) -> f64 {
    let hi = map.max_value();
    let [m, n, q] = map.dims();
    let mut dist = vec![f64::INFINITY; map.len()];
    dist[map.index(start[0], start[1], start[2])] = 0.0;
    let offsets = neighbor_offsets(map.spacing());
    loop {
        let mut changed = false;
        for u in 0..map.len() {
            if !dist[u].is_finite() {
                continue;
            }
            let [i, j, k] = map.coords(u);
            for &(o, len) in &offsets {
                let (a, b, c) = (i as isize + o[0], j as isize + o[1], k as isize + o[2]);
                if a < 0 || b < 0 || c < 0 || a as usize >= m || b as usize >= n || c as usize >= q
                {
                    continue;
                }
                let v = map.index(a as usize, b as usize, c as usize);
                let w = 0.5 * ((hi - map.data()[u]) + (hi - map.data()[v])) * len;
                if dist[u] + w < dist[v] {
                    dist[v] = dist[u] + w;
                    changed = true;
                }
            }
        }
        if !changed {
            return dist[map.index(end[0], end[1], end[2])];
        }
    }
}

fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut r = rng::seeded(seed, "selftest-map");
    let data = (0..dims.iter().product::<usize>())
        .map(|_| r.random::<f64>())
        .collect();
    Volume::new(dims, [1.0, 1.0, 1.0], [0.0; 3], data).expect("valid dims")
}

fn random_polar(grid: PolarGrid, slices: usize, seed: u64) -> PolarImage {
    let mut r = rng::seeded(seed, "selftest-polar");
    let canon: Vec<Vec<f64>> = (0..slices)
        .map(|_| {
            (0..grid.n_angles * grid.n_samples)
                .map(|_| r.random::<f64>())
                .collect()
        })
        .collect();
    let data = canon
        .iter()
        .flat_map(|c| crate::polar::pad_rays(c, grid.n_angles, grid.n_samples))
        .collect();
    PolarImage {
        grid,
        center: WorldPoint::new(0.0, 0.0, 0.0),
        slice: None,
        n_slices: slices,
        data,
    }
}

fn small_model(seed: u64) -> Result<Model> {
    let cfg = ModelConfig {
        mode: Mode::Multi,
        grid: PolarGrid {
            n_angles: 7,
            n_samples: 7,
            ray_spacing: 0.5,
        },
        slice_radius: 1,
        channels: 3,
        ..ModelConfig::default()
    };
    build_model(&cfg, seed)
}

pub fn check_dijkstra() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..8u64 {
        let map = random_volume([5, 5, 5], seed);
        let (s, e) = ([0, 0, 0], [4, 4 - (seed as usize % 3), 4]);
        let got = trace_centerline(&map, 0, s, e)
            .map(|p| p.cost)
            .unwrap_or(f64::NAN);
        let want = relaxation_oracle(&map, s, e);
        worst = worst.max((got - want).abs() / (1.0 + want));
    }
    Check {
        name: "dijkstra matches exhaustive relaxation",
        passed: worst <= 1e-7,
        detail: format!("max relative cost gap {worst:.2e}"),
    }
}

pub fn check_gradients() -> Check {
    let result = small_model(3).and_then(|mut m| {
        m.set_head_prior(2.0, 1.0);
        let shape = m.net.input_shape();
        let samples: Vec<(Tensor, Vec<f64>)> = (0..3u64)
            .map(|s| {
                let img = random_polar(m.config.grid, shape[3], 10 + s);
                let target = (0..2 * m.config.grid.n_angles)
                    .map(|i| 1.0 + 0.1 * i as f64)
                    .collect();
                (Tensor::from_polar(&img), target)
            })
            .collect();
        grad_check(&m.net, &samples, 1.0, 1e-4)
    });
    match result {
        Ok(err) => Check {
            name: "backprop matches finite differences",
            passed: err <= 1e-3,
            detail: format!("max relative error {err:.2e}"),
        },
        Err(e) => Check {
            name: "backprop matches finite differences",
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn check_equivariance() -> Check {
    let result = small_model(4).and_then(|m| {
        let n = m.config.grid.n_angles;
        let img = random_polar(m.config.grid, m.net.input_shape()[3], 5);
        let (l, t) = m.forward_samples(&img)?;
        let mut worst = 0.0f64;
        for shift in 1..n as isize {
            let (ls, ts) = m.forward_samples(&img.cyclic_shift(shift))?;
            for i in 0..n {
                let src = (i as isize + shift).rem_euclid(n as isize) as usize;
                worst = worst
                    .max((ls[i] - l[src]).abs())
                    .max((ts[i] - t[src]).abs());
            }
        }
        Ok(worst)
    });
    match result {
        Ok(w) => Check {
            name: "cyclic row shift shifts the radii",
            passed: w <= 1e-6,
            detail: format!("max deviation {w:.2e}"),
        },
        Err(e) => Check {
            name: "cyclic row shift shifts the radii",
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn check_topology() -> Check {
    let mut violations = 0;
    let mut runs = 0;
    for seed in 0..100u64 {
        let Ok(m) = small_model(100 + seed) else {
            violations += 1;
            continue;
        };
        let img = random_polar(m.config.grid, m.net.input_shape()[3], seed);
        match m.forward_polar(&img) {
            Ok(cp) => {
                runs += 1;
                let outer = cp.outer_radii();
                violations += outer
                    .iter()
                    .zip(&cp.lumen_radii)
                    .filter(|(o, l)| o < l)
                    .count();
            }
            Err(_) => violations += 1,
        }
    }
    Check {
        name: "outer contour never inside lumen",
        passed: violations == 0,
        detail: format!("{runs} random-weight predictions, {violations} violations"),
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check_dijkstra(),
        check_gradients(),
        check_equivariance(),
        check_topology(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
