//! Polar contour regression: network layout, training, inference and
//! ensembling.
//!
//! The network maps a periodically padded polar image (`2N-1` rows, `R`
//! samples, optionally a slice stack) to two values per ray angle: lumen
//! radius and wall thickness, both through a softplus so the outer contour
//! can never cross inside the lumen. Every layer is a valid convolution, so
//! the angular padding is consumed exactly and the output has `N` rows.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::contour::ContourPair;
use crate::neuralnet::{adam_step, Activation, AdamConfig, AdamState, ConvSpec, Network, Tensor};
use crate::phantom::PhantomTruth;
use crate::polar::{cast_polar_stack, jitter_center, radii_from_truth, PolarGrid, PolarImage};
use crate::{io, rng, Error, Result, Volume, WorldPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One axial slice per prediction.
    Single,
    /// A stack of neighboring slices around the target slice.
    Multi,
}

/// How the slice axis of a multi-slice stack is reduced to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceCollapse {
    /// The first layer spans the whole stack.
    FirstLayer,
    /// Undilated size-3 kernels on the leading layers.
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mode: Mode,
    pub grid: PolarGrid,
    /// Multi mode uses `2·slice_radius + 1` slices.
    pub slice_radius: usize,
    pub slice_collapse: SliceCollapse,
    pub channels: usize,
    pub augment: bool,
    /// Largest in-plane center displacement used for augmentation (mm).
    pub jitter_mm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Smooth-L1 transition point in ray-sample units.
    pub loss_beta: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Multi,
            grid: PolarGrid {
                n_angles: 31,
                n_samples: 31,
                ray_spacing: 0.25,
            },
            slice_radius: 3,
            slice_collapse: SliceCollapse::FirstLayer,
            channels: 8,
            augment: true,
            jitter_mm: 1.2,
            epochs: 40,
            batch_size: 100,
            lr: 1e-3,
            loss_beta: 1.0,
            seed: 0,
        }
    }
}

/// Kernel/dilation pairs for one axis: dilation doubles while it fits, a
/// final layer takes any even remainder, then the axis is exhausted.
fn axis_schedule(budget: usize, name: &str) -> Result<Vec<(usize, usize)>> {
    if !budget.is_multiple_of(2) {
        return Err(Error::Footprint(format!(
            "{name} budget {budget} is odd; size-3 kernels can only consume an even extent"
        )));
    }
    let mut out = Vec::new();
    let (mut left, mut d) = (budget, 1);
    while left > 0 {
        let step = if 2 * d <= left { d } else { left / 2 };
        out.push((3, step));
        left -= 2 * step;
        d *= 2;
    }
    Ok(out)
}

impl ModelConfig {
    pub fn stack_slices(&self) -> usize {
        match self.mode {
            Mode::Single => 1,
            Mode::Multi => 2 * self.slice_radius + 1,
        }
    }

    /// Slices on each side of the target that the input stack covers.
    pub fn stack_radius(&self) -> usize {
        (self.stack_slices() - 1) / 2
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [
            1,
            self.grid.padded_rows(),
            self.grid.n_samples,
            self.stack_slices(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.channels == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "channels and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.loss_beta > 0.0 && self.jitter_mm >= 0.0) {
            return Err(Error::InvalidConfig(
                "lr and loss_beta must be > 0, jitter_mm >= 0".into(),
            ));
        }
        if self.mode == Mode::Multi && self.slice_radius == 0 {
            return Err(Error::InvalidConfig(
                "multi-slice mode needs slice_radius >= 1".into(),
            ));
        }
        self.layer_specs().map(|_| ())
    }

    /// The full layer stack, ending in the two-channel softplus head.
    pub fn layer_specs(&self) -> Result<Vec<ConvSpec>> {
        let n = self.grid.n_angles;
        if n.is_multiple_of(2) {
            return Err(Error::Footprint(format!(
                "angular budget: N = {n} gives 2N-1 = {} padded rows but an odd N is needed for the footprint to be exactly N-1",
                2 * n - 1
            )));
        }
        let angle = axis_schedule(n - 1, "angular")?;
        let radius = axis_schedule(self.grid.n_samples - 1, "radial (R-1)")?;
        let slices = self.stack_slices();
        let slice: Vec<(usize, usize)> = match (self.mode, self.slice_collapse) {
            (Mode::Single, _) => Vec::new(),
            (Mode::Multi, SliceCollapse::FirstLayer) => vec![(slices, 1)],
            (Mode::Multi, SliceCollapse::Stacked) => vec![(3, 1); self.slice_radius],
        };
        let depth = angle.len().max(radius.len()).max(slice.len());
        let pick = |s: &[(usize, usize)], l: usize| s.get(l).copied().unwrap_or((1, 1));
        let mut specs = Vec::with_capacity(depth + 1);
        for l in 0..depth {
            let (ka, da) = pick(&angle, l);
            let (kr, dr) = pick(&radius, l);
            let (ks, ds) = pick(&slice, l);
            specs.push(ConvSpec {
                in_channels: if l == 0 { 1 } else { self.channels },
                out_channels: self.channels,
                kernel: [ka, kr, ks],
                dilation: [da, dr, ds],
                activation: Activation::LeakyRelu,
            });
        }
        specs.push(ConvSpec {
            in_channels: if depth == 0 { 1 } else { self.channels },
            out_channels: 2,
            kernel: [1, 1, 1],
            dilation: [1, 1, 1],
            activation: Activation::Softplus,
        });
        Ok(specs)
    }
}

/// A configured network plus the config it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub net: Network,
}

/// Builds and He-initializes a model. Equal seeds give equal weights.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut net = Network::new(cfg.layer_specs()?, cfg.input_shape())?;
    let out = net.output_shape();
    if out != [2, cfg.grid.n_angles, 1, 1] {
        return Err(Error::Footprint(format!(
            "network output {out:?} is not 2 x {} angles",
            cfg.grid.n_angles
        )));
    }
    net.init_he(&mut rng::seeded(seed, "model-init"));
    Ok(Model {
        config: cfg.clone(),
        net,
    })
}

fn inverse_softplus(y: f64) -> f64 {
    let y = y.max(1e-6);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Model {
    pub fn grid(&self) -> &PolarGrid {
        &self.config.grid
    }

    /// Sets the head biases so an all-zero hidden state predicts the given
    /// lumen radius and thickness (ray-sample units).
    pub fn set_head_prior(&mut self, lumen: f64, thickness: f64) {
        let last = self.net.layers().len() - 1;
        let b = self.net.bias_mut(last);
        b[0] = inverse_softplus(lumen);
        b[1] = inverse_softplus(thickness);
    }

    /// Raw network outputs (lumen radii, thicknesses) in ray-sample units.
    pub fn forward_samples(&self, img: &PolarImage) -> Result<(Vec<f64>, Vec<f64>)> {
        let y = self.net.forward(&Tensor::from_polar(img))?.into_data();
        let n = self.config.grid.n_angles;
        Ok((y[..n].to_vec(), y[n..].to_vec()))
    }

    /// Contour pair in mm around the image's center.
    pub fn forward_polar(&self, img: &PolarImage) -> Result<ContourPair> {
        let (l, t) = self.forward_samples(img)?;
        let s = self.config.grid.ray_spacing;
        ContourPair::new(
            img.center,
            l.iter().map(|v| v * s).collect(),
            t.iter().map(|v| v * s).collect(),
        )
    }

    pub fn cast(&self, vol: &Volume, center: WorldPoint) -> Result<PolarImage> {
        cast_polar_stack(vol, center, &self.config.grid, self.config.stack_radius())
    }
}

/// Predicts the contour pair on `slice` around the in-plane `center`.
pub fn predict(
    model: &Model,
    vol: &Volume,
    center: WorldPoint,
    slice: usize,
) -> Result<ContourPair> {
    let c = WorldPoint::new(center.x, center.y, vol.slice_z(slice));
    model.forward_polar(&model.cast(vol, c)?)
}

/// Per-angle mean of lumen radii and of thicknesses over several models.
pub fn ensemble_predict(
    models: &[Model],
    vol: &Volume,
    center: WorldPoint,
    slice: usize,
) -> Result<ContourPair> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidConfig("ensemble needs at least one model".into()))?;
    if models.iter().any(|m| m.config.grid != first.config.grid) {
        return Err(Error::Shape(
            "ensemble members use different polar grids".into(),
        ));
    }
    let preds = models
        .iter()
        .map(|m| predict(m, vol, center, slice))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_pairs(&preds))
}

/// Mean of contour pairs sharing a center and angle count.
pub fn average_pairs(preds: &[ContourPair]) -> ContourPair {
    let n = preds[0].len();
    let k = preds.len() as f64;
    let mean = |f: fn(&ContourPair) -> &Vec<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| preds.iter().map(|p| f(p)[i]).sum::<f64>() / k)
            .collect()
    };
    ContourPair {
        center: preds[0].center,
        lumen_radii: mean(|p| &p.lumen_radii),
        thickness: mean(|p| &p.thickness),
    }
}

/// One training phantom: its intensity-normalized volume and truth.
#[derive(Debug, Clone)]
pub struct TrainingCase {
    pub volume: Volume,
    pub truth: PhantomTruth,
}

impl TrainingCase {
    /// Normalizes the volume's intensities.
    pub fn new(volume: &Volume, truth: PhantomTruth) -> Self {
        Self {
            volume: volume.normalize_intensity().volume,
            truth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub case: usize,
    pub vessel: usize,
    pub slice: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cases: Vec<TrainingCase>,
    pub samples: Vec<SampleRef>,
}

impl Dataset {
    /// Every `slice_stride`-th annotated slice of every vessel.
    pub fn new(cases: Vec<TrainingCase>, slice_stride: usize) -> Self {
        let stride = slice_stride.max(1);
        let mut samples = Vec::new();
        for (ci, case) in cases.iter().enumerate() {
            for (v, vt) in case.truth.vessels.iter().enumerate() {
                for st in vt.slices.iter().filter(|s| s.annotated).step_by(stride) {
                    samples.push(SampleRef {
                        case: ci,
                        vessel: v,
                        slice: st.slice,
                    });
                }
            }
        }
        Self { cases, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The exact centerline point of a sample.
    pub fn center(&self, s: &SampleRef) -> WorldPoint {
        self.cases[s.case]
            .truth
            .center(s.vessel, s.slice)
            .expect("samples come from truth slices")
    }

    /// Polar input and target (lumen radii then thicknesses, ray-sample units) at `center`.
    pub fn example(
        &self,
        s: &SampleRef,
        center: WorldPoint,
        cfg: &ModelConfig,
    ) -> Result<(Tensor, Vec<f64>)> {
        let case = &self.cases[s.case];
        let img = cast_polar_stack(&case.volume, center, &cfg.grid, cfg.stack_radius())?;
        let (lumen, outer) = case
            .truth
            .contours(s.vessel, s.slice)
            .expect("samples come from truth slices");
        let (l, o) = radii_from_truth(&lumen, &outer, [center.x, center.y], &cfg.grid)?;
        let rs = cfg.grid.ray_spacing;
        let mut target: Vec<f64> = l.iter().map(|v| v / rs).collect();
        target.extend(l.iter().zip(&o).map(|(a, b)| (b - a) / rs));
        Ok((Tensor::from_polar(&img), target))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub validation_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: Option<String>,
}

impl TrainRecord {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

fn mean_loss(model: &Model, examples: &[(Tensor, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in examples {
        total += model.net.loss(x, t, model.config.loss_beta)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Mini-batch Adam on smooth-L1. With augmentation on, every epoch re-casts
/// each sample at a freshly jittered center and recomputes its targets there.
/// The head biases start at the training-set mean lumen radius and thickness.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    validation: Option<&Dataset>,
) -> Result<TrainRecord> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let cfg = model.config.clone();
    let centered = data
        .samples
        .iter()
        .map(|s| data.example(s, data.center(s), &cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.grid.n_angles;
    let (mut lsum, mut tsum) = (0.0, 0.0);
    for (_, t) in &centered {
        lsum += t[..n].iter().sum::<f64>();
        tsum += t[n..].iter().sum::<f64>();
    }
    let denom = (centered.len() * n) as f64;
    model.set_head_prior(lsum / denom, tsum / denom);

    let val = match validation {
        Some(v) => Some(
            v.samples
                .iter()
                .map(|s| v.example(s, v.center(s), &cfg))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.net.param_count());
    let mut grads = vec![0.0; model.net.param_count()];
    let mut order_rng = rng::seeded(cfg.seed, "train-order");
    let mut jitter_rng = rng::seeded(cfg.seed, "train-jitter");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut record = TrainRecord::default();

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let jittered;
        let examples: &[(Tensor, Vec<f64>)] = if cfg.augment {
            jittered = data
                .samples
                .iter()
                .map(|s| {
                    let c = jitter_center(data.center(s), cfg.jitter_mm, &mut jitter_rng);
                    data.example(s, c, &cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            &jittered
        } else {
            &centered
        };
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let w = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, t) = &examples[i];
                batch_loss += model
                    .net
                    .loss_and_grad(x, t, cfg.loss_beta, w, &mut grads)?;
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            adam_step(model.net.params_mut(), &grads, &mut state, &adam);
            total += batch_loss;
        }
        let loss = total / data.len() as f64;
        let validation_loss = val.as_deref().map(|v| mean_loss(model, v)).transpose()?;
        log::info!("epoch {epoch}: loss {loss:.5}");
        record.epochs.push(EpochRecord {
            epoch,
            loss,
            validation_loss,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    layers: Vec<ConvSpec>,
    input_shape: [usize; 4],
    offsets: Vec<usize>,
    param_count: usize,
    weights: String,
    record: Option<TrainRecord>,
}

const MANIFEST_VERSION: u32 = 1;

/// Writes `manifest.json` and `weights.bin` (little-endian f64) into `dir`.
pub fn save_checkpoint(dir: &Path, model: &Model, record: Option<&TrainRecord>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: model.config.clone(),
        layers: model.net.layers().to_vec(),
        input_shape: model.net.input_shape(),
        offsets: model.net.offsets().to_vec(),
        param_count: model.net.param_count(),
        weights: "weights.bin".into(),
        record: record.cloned(),
    };
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    let bytes: Vec<u8> = model
        .net
        .params()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    std::fs::write(dir.join("weights.bin"), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, Option<TrainRecord>)> {
    let path = dir.join("manifest.json");
    let m: Manifest = io::read_json(&path)?;
    let bad = |message: String| Error::Format {
        path: path.clone(),
        message,
    };
    if m.version != MANIFEST_VERSION {
        return Err(bad(format!("unsupported checkpoint version {}", m.version)));
    }
    if m.layers != m.config.layer_specs()? || m.input_shape != m.config.input_shape() {
        return Err(bad(
            "layer list does not match the stored model config".into()
        ));
    }
    let wpath = dir.join(&m.weights);
    let bytes = std::fs::read(&wpath)?;
    if bytes.len() != 8 * m.param_count {
        return Err(Error::Format {
            path: wpath,
            message: format!(
                "expected {} bytes, found {}",
                8 * m.param_count,
                bytes.len()
            ),
        });
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = Network::with_params(m.layers, m.input_shape, params)?;
    if net.offsets() != m.offsets.as_slice() {
        return Err(bad("layer offsets do not match".into()));
    }
    Ok((
        Model {
            config: m.config,
            net,
        },
        m.record,
    ))
}
