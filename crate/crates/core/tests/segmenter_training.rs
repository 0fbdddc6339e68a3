use std::f64::consts::TAU;

use polarring::phantom::{generate_phantom, PhantomConfig};
use polarring::polar::{cast_polar_field, PolarGrid};
use polarring::segmenter::{
    build_model, ensemble_predict, predict, train, Dataset, Mode, ModelConfig, TrainingCase,
};
use polarring::WorldPoint;

fn tube(seed: u64, slices: usize) -> PhantomConfig {
    PhantomConfig {
        dims: [80, 80, slices],
        spacing_mm: [0.2, 0.2, 0.4],
        lumen_ellipticity: 0.0,
        plaques_per_vessel: 0,
        centerline_amplitude_mm: [0.0, 0.0],
        noise_sigma: 0.0,
        seed,
        ..PhantomConfig::default()
    }
}

fn tube_cases(seeds: std::ops::Range<u64>, slices: usize) -> Vec<TrainingCase> {
    seeds
        .map(|s| {
            let (v, t) = generate_phantom(&tube(s, slices)).unwrap();
            TrainingCase::new(&v, t)
        })
        .collect()
}

fn small_single() -> ModelConfig {
    ModelConfig {
        mode: Mode::Single,
        grid: PolarGrid {
            n_angles: 15,
            n_samples: 31,
            ray_spacing: 0.25,
        },
        channels: 8,
        augment: false,
        ..ModelConfig::default()
    }
}

#[test]
fn output_is_two_by_31_in_both_modes() {
    for mode in [Mode::Single, Mode::Multi] {
        let cfg = ModelConfig {
            mode,
            ..ModelConfig::default()
        };
        let m = build_model(&cfg, 1).unwrap();
        assert_eq!(m.net.output_shape(), [2, 31, 1, 1]);
    }
}

#[test]
fn single_sample_overfits() {
    let mut data = Dataset::new(tube_cases(0..1, 4), 1);
    data.samples.truncate(1);
    let cfg = ModelConfig {
        epochs: 500,
        batch_size: 1,
        ..small_single()
    };
    let mut m = build_model(&cfg, 2).unwrap();
    let rec = train(&mut m, &data, None).unwrap();
    let last = rec.final_loss().unwrap();
    assert!(last < 1e-3, "loss after 500 steps {last}");
}

#[test]
fn straight_tube_loss_decreases() {
    let data = Dataset::new(tube_cases(0..4, 4), 1);
    let cfg = ModelConfig {
        epochs: 50,
        batch_size: 8,
        ..small_single()
    };
    let mut m = build_model(&cfg, 3).unwrap();
    let rec = train(&mut m, &data, None).unwrap();
    let first = rec.epochs[0].loss;
    let last = rec.final_loss().unwrap();
    assert!(last <= first, "epoch 1 {first}, epoch 50 {last}");
    assert_eq!(
        rec.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(),
        (1..=50).collect::<Vec<_>>()
    );
}

#[test]
fn trained_tube_model_is_subsample_accurate() {
    let data = Dataset::new(tube_cases(0..16, 3), 1);
    let cfg = ModelConfig {
        epochs: 400,
        batch_size: 16,
        ..small_single()
    };
    let mut m = build_model(&cfg, 4).unwrap();
    train(&mut m, &data, None).unwrap();

    let spacing = cfg.grid.ray_spacing;
    for seed in 100..103 {
        let (vol, truth) = generate_phantom(&tube(seed, 3)).unwrap();
        let norm = vol.normalize_intensity().volume;
        let c = truth.center(0, 1).unwrap();
        let pred = predict(&m, &norm, c, 1).unwrap();
        let (lumen, outer) = truth.contours(0, 1).unwrap();
        let mut worst = 0.0f64;
        for (i, phi) in cfg.grid.angles().into_iter().enumerate() {
            worst = worst
                .max((pred.lumen_radii[i] - lumen.radius(phi)).abs())
                .max((pred.outer_radii()[i] - outer.radius(phi)).abs());
        }
        assert!(
            worst <= 0.5 * spacing,
            "held-out tube {seed}: max radius error {worst:.4} mm"
        );
    }
}

#[test]
fn functional_rotation_shifts_prediction() {
    let cfg = ModelConfig::default();
    let m = build_model(&cfg, 9).unwrap();
    let n = cfg.grid.n_angles;
    let c = WorldPoint::new(1.3, -0.4, 2.0);
    let field = |p: WorldPoint| {
        let (x, y) = (p.x - c.x, p.y - c.y);
        let r2 = x * x + y * y;
        let th = y.atan2(x);
        0.5 + 0.3 * (-r2 / 9.0).exp() * (2.0 * th).cos()
            + 0.1 * (0.6 * x + 0.2 * y).sin()
            + 0.05 * (0.3 * p.z).cos()
    };
    let alpha = TAU / n as f64;
    let (sa, ca) = alpha.sin_cos();
    let rotated = |p: WorldPoint| {
        let (x, y) = (p.x - c.x, p.y - c.y);
        field(WorldPoint::new(
            c.x + ca * x + sa * y,
            c.y - sa * x + ca * y,
            p.z,
        ))
    };
    let k = cfg.stack_radius();
    let a = m
        .forward_polar(&cast_polar_field(&field, c, &cfg.grid, k, 0.4))
        .unwrap();
    let b = m
        .forward_polar(&cast_polar_field(&rotated, c, &cfg.grid, k, 0.4))
        .unwrap();
    let (ao, bo) = (a.outer_radii(), b.outer_radii());
    let mut worst = 0.0f64;
    for i in 0..n {
        let j = (i + n - 1) % n;
        worst = worst
            .max((b.lumen_radii[i] - a.lumen_radii[j]).abs())
            .max((bo[i] - ao[j]).abs());
    }
    assert!(worst <= 1e-3, "rotation deviation {worst:.2e} mm");
}

#[test]
fn single_member_ensemble_equals_predict() {
    let (vol, truth) = generate_phantom(&tube(5, 8)).unwrap();
    let m = build_model(&small_single(), 6).unwrap();
    let c = truth.center(0, 4).unwrap();
    let a = predict(&m, &vol, c, 4).unwrap();
    let b = ensemble_predict(std::slice::from_ref(&m), &vol, c, 4).unwrap();
    assert_eq!(a, b);
}
