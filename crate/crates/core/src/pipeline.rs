//! File-based pipeline stages. Every stage reads and writes plain files so
//! the CLI, the Python bindings and the tests share one implementation.
//!
//! Directory layout of one phantom:
//!
//! ```text
//! <dir>/volume.vol.json, volume.vol.raw
//! <dir>/truth.json
//! <dir>/proximity_internal.vol.*, proximity_external.vol.*
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::centerline::{
    degrade_map, proximity_map, trace_with_waypoints, CenterlinePath, CenterlineRecord,
    DegradeParams, ProximityParams, CHANNELS,
};
use crate::contour::{ContourRecord, SliceGrid};
use crate::metrics::{evaluate_volume, write_csv, CaseResult, Summary, VesselPrediction};
use crate::overlay::emit_overlay;
use crate::phantom::{generate_phantom, PhantomConfig, PhantomTruth};
use crate::segmenter::{
    average_pairs, build_model, load_checkpoint, predict, save_checkpoint, train, Dataset, Mode,
    Model, ModelConfig, TrainRecord, TrainingCase,
};
use crate::{io, rng, Error, Result, Volume};

pub const CONFIG_VERSION: u32 = 1;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["internal", "external"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Rasterization subsamples per pixel axis for the wall masks.
    pub supersample: usize,
    /// Overlay images written per held-out phantom (evenly spaced slices).
    pub overlays_per_phantom: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            supersample: 4,
            overlays_per_phantom: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub version: u32,
    /// Every stochastic component derives its seed from this one.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub phantom: PhantomConfig,
    pub phantoms: usize,
    /// Trailing fraction of phantoms (by seed order) held out for evaluation.
    pub holdout_fraction: f64,
    /// Train on every n-th annotated slice.
    pub train_slice_stride: usize,
    pub proximity: ProximityParams,
    pub degrade: DegradeParams,
    pub waypoint_stride: usize,
    pub model: ModelConfig,
    /// Models trained with different seeds whose radii are averaged.
    pub ensemble: usize,
    pub eval: EvalOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            out_dir: PathBuf::from("polarring-out"),
            phantom: PhantomConfig::default(),
            phantoms: 20,
            holdout_fraction: 0.2,
            train_slice_stride: 1,
            proximity: ProximityParams::default(),
            degrade: DegradeParams::default(),
            waypoint_stride: 50,
            model: ModelConfig::default(),
            ensemble: 1,
            eval: EvalOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.phantom.validate()?;
        self.proximity.validate()?;
        self.model.validate()?;
        if self.phantoms < 2 || !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig(
                "need >= 2 phantoms and holdout_fraction in [0, 1)".into(),
            ));
        }
        if self.holdout_count() == 0 || self.holdout_count() >= self.phantoms {
            return Err(Error::InvalidConfig(format!(
                "{} phantoms with holdout fraction {} leave no train or no test phantoms",
                self.phantoms, self.holdout_fraction
            )));
        }
        if self.train_slice_stride == 0 || self.waypoint_stride == 0 || self.ensemble == 0 {
            return Err(Error::InvalidConfig(
                "strides and ensemble size must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn holdout_count(&self) -> usize {
        (self.phantoms as f64 * self.holdout_fraction).round() as usize
    }

    pub fn phantom_seed(&self, i: usize) -> u64 {
        rng::derive_seed(self.seed, &format!("phantom/{i}"))
    }

    pub fn model_seed(&self, member: usize) -> u64 {
        rng::derive_seed(self.seed, &format!("model/{member}"))
    }

    pub fn degrade_seed(&self, i: usize) -> u64 {
        rng::derive_seed(self.seed, &format!("degrade/{i}"))
    }
}

/// Intra-stage worker cap from `POLARRING_THREADS` (default 1). Stages are
/// currently sequential, so values above 1 are accepted but have no effect.
pub fn threads() -> Result<usize> {
    match std::env::var("POLARRING_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::InvalidConfig(format!(
                "POLARRING_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(1),
    }
}

pub fn volume_path(dir: &Path) -> PathBuf {
    dir.join("volume.vol")
}

pub fn truth_path(dir: &Path) -> PathBuf {
    dir.join("truth.json")
}

pub fn map_path(dir: &Path, channel: usize) -> PathBuf {
    dir.join(format!("proximity_{}.vol", CHANNEL_NAMES[channel]))
}

/// Generates one phantom with its (optionally degraded) proximity maps.
pub fn stage_phantom(
    cfg: &PhantomConfig,
    proximity: ProximityParams,
    degrade: &DegradeParams,
    degrade_seed: u64,
    out: &Path,
) -> Result<(Volume, PhantomTruth)> {
    let (vol, truth) = generate_phantom(cfg)?;
    io::write_volume(&volume_path(out), &vol)?;
    io::write_json(&truth_path(out), &truth)?;
    let map = degrade_map(
        &proximity_map(&truth, &vol, proximity)?,
        degrade,
        degrade_seed,
    )?;
    for (c, ch) in map.channels.iter().enumerate() {
        io::write_volume(&map_path(out, c), ch)?;
    }
    Ok((vol, truth))
}

/// Traces a centerline on one map channel and writes it as JSON.
pub fn stage_trace(
    map: &Path,
    channel: usize,
    stride: usize,
    out: &Path,
) -> Result<CenterlinePath> {
    let vol = io::read_volume(map)?;
    let path = trace_with_waypoints(&vol, channel, stride)?;
    io::write_json(out, &path.to_record())?;
    Ok(path)
}

pub fn load_phantom(dir: &Path) -> Result<(Volume, PhantomTruth)> {
    Ok((
        io::read_volume(&volume_path(dir))?,
        io::read_json(&truth_path(dir))?,
    ))
}

/// Phantom directories (those holding a `truth.json`) under `dir`, sorted.
pub fn phantom_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| truth_path(p).is_file())
        .collect();
    out.sort();
    Ok(out)
}

fn load_cases(dirs: &[PathBuf]) -> Result<Vec<TrainingCase>> {
    dirs.iter()
        .map(|d| {
            let (v, t) = load_phantom(d)?;
            Ok(TrainingCase::new(&v, t))
        })
        .collect()
}

/// Trains `members` models on the given phantom directories and writes
/// their checkpoints to `out` (or `out/member_<i>` for ensembles).
pub fn stage_train(
    train_dirs: &[PathBuf],
    validation_dirs: &[PathBuf],
    model: &ModelConfig,
    slice_stride: usize,
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<(Model, TrainRecord)>> {
    let data = Dataset::new(load_cases(train_dirs)?, slice_stride);
    let val = if validation_dirs.is_empty() {
        None
    } else {
        Some(Dataset::new(load_cases(validation_dirs)?, slice_stride))
    };
    let mut trained = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let cfg = ModelConfig {
            seed,
            ..model.clone()
        };
        let mut m = build_model(&cfg, seed)?;
        log::info!("training member {i} on {} samples", data.len());
        let mut rec = train(&mut m, &data, val.as_ref())?;
        let dir = if seeds.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("member_{i}"))
        };
        rec.checkpoint = Some(dir.display().to_string());
        save_checkpoint(&dir, &m, Some(&rec))?;
        trained.push((m, rec));
    }
    Ok(trained)
}

/// Loads one checkpoint directory, or every `member_*` inside it.
pub fn load_models(dir: &Path) -> Result<Vec<Model>> {
    if dir.join("manifest.json").is_file() {
        return Ok(vec![load_checkpoint(dir)?.0]);
    }
    let mut members: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    members.sort();
    if members.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            message: "no model checkpoint found".into(),
        });
    }
    members.iter().map(|m| Ok(load_checkpoint(m)?.0)).collect()
}

/// Predicts contours on every slice the centerline visits. `vol` is the raw
/// volume; intensities are normalized here once.
pub fn predict_along(
    models: &[Model],
    vol: &Volume,
    path: &CenterlinePath,
) -> Result<VesselPrediction> {
    let norm = vol.normalize_intensity();
    if norm.degenerate {
        log::warn!("volume intensities are constant; predictions are uninformative");
    }
    let mut contours = Vec::new();
    for (slice, center) in path.slice_centers() {
        if !vol.contains(center) {
            continue;
        }
        let preds = models
            .iter()
            .map(|m| predict(m, &norm.volume, center, slice))
            .collect::<Result<Vec<_>>>()?;
        contours.push(average_pairs(&preds).to_record(slice));
    }
    Ok(VesselPrediction {
        vessel: path.channel,
        contours,
    })
}

pub fn stage_predict(
    model_dir: &Path,
    volume: &Path,
    centerline: &Path,
    out: &Path,
) -> Result<VesselPrediction> {
    let models = load_models(model_dir)?;
    let vol = io::read_volume(volume)?;
    let rec: CenterlineRecord = io::read_json(centerline)?;
    let pred = predict_along(&models, &vol, &CenterlinePath::from_record(&rec)?)?;
    io::write_json(out, &pred)?;
    Ok(pred)
}

pub fn stage_eval(
    truth: &Path,
    volume: &Path,
    predictions: &[PathBuf],
    supersample: usize,
    csv: &Path,
    summary: &Path,
) -> Result<Summary> {
    let truth: PhantomTruth = io::read_json(truth)?;
    let vol = io::read_volume(volume)?;
    let preds = predictions
        .iter()
        .map(|p| io::read_json(p))
        .collect::<Result<Vec<VesselPrediction>>>()?;
    let ev = evaluate_volume(&preds, &truth, SliceGrid::of_volume(&vol), supersample)?;
    write_csv(csv, &ev.cases)?;
    io::write_json(summary, &ev.summary)?;
    Ok(ev.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub summary: Summary,
    pub train_phantoms: usize,
    pub test_phantoms: usize,
    pub final_loss: Vec<f64>,
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
}

/// Generates phantoms, trains on the leading ones, then traces, predicts
/// and scores the held-out ones.
pub fn run_e2e(cfg: &PipelineConfig) -> Result<E2eReport> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    let n_test = cfg.holdout_count();
    let n_train = cfg.phantoms - n_test;
    let mut dirs = Vec::new();
    for i in 0..cfg.phantoms {
        let dir = out.join("phantoms").join(format!("p{i:03}"));
        let pc = PhantomConfig {
            seed: cfg.phantom_seed(i),
            ..cfg.phantom.clone()
        };
        stage_phantom(&pc, cfg.proximity, &cfg.degrade, cfg.degrade_seed(i), &dir)?;
        dirs.push(dir);
    }
    let (train_dirs, test_dirs) = dirs.split_at(n_train);
    let seeds: Vec<u64> = (0..cfg.ensemble).map(|m| cfg.model_seed(m)).collect();
    let trained = stage_train(
        train_dirs,
        test_dirs,
        &cfg.model,
        cfg.train_slice_stride,
        &seeds,
        &out.join("model"),
    )?;
    let final_loss = trained.iter().filter_map(|(_, r)| r.final_loss()).collect();
    let models: Vec<Model> = trained.into_iter().map(|(m, _)| m).collect();

    let mut all = Vec::new();
    for dir in test_dirs {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (vol, truth) = load_phantom(dir)?;
        let mut preds = Vec::new();
        for c in 0..CHANNELS {
            if !truth.vessels.iter().any(|v| v.class().channel() == c) {
                continue;
            }
            let cl = out
                .join("centerlines")
                .join(format!("{name}_{}.json", CHANNEL_NAMES[c]));
            let path = stage_trace(&map_path(dir, c), c, cfg.waypoint_stride, &cl)?;
            let pred = predict_along(&models, &vol, &path)?;
            io::write_json(
                &out.join("predictions")
                    .join(format!("{name}_{}.json", CHANNEL_NAMES[c])),
                &pred,
            )?;
            preds.push(pred);
        }
        let ev = evaluate_volume(
            &preds,
            &truth,
            SliceGrid::of_volume(&vol),
            cfg.eval.supersample,
        )?;
        write_overlays(
            &out.join("overlays"),
            &name,
            &vol,
            &preds,
            cfg.eval.overlays_per_phantom,
        )?;
        all.extend(ev.cases.into_iter().map(|c| CaseResult {
            volume: name.clone(),
            ..c
        }));
    }
    let summary = Summary::of(&all);
    let metrics_csv = out.join("metrics.csv");
    let summary_json = out.join("summary.json");
    write_csv(&metrics_csv, &all)?;
    io::write_json(&summary_json, &summary)?;
    Ok(E2eReport {
        summary,
        train_phantoms: n_train,
        test_phantoms: n_test,
        final_loss,
        metrics_csv,
        summary_json,
    })
}

fn write_overlays(
    dir: &Path,
    name: &str,
    vol: &Volume,
    preds: &[VesselPrediction],
    count: usize,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let mut by_slice: BTreeMap<usize, Vec<&ContourRecord>> = BTreeMap::new();
    for p in preds {
        for r in &p.contours {
            by_slice.entry(r.slice).or_default().push(r);
        }
    }
    let slices: Vec<usize> = by_slice.keys().copied().collect();
    if slices.is_empty() {
        return Ok(());
    }
    for i in 0..count.min(slices.len()) {
        let k = slices[i * slices.len() / count.min(slices.len())];
        let pairs = by_slice[&k]
            .iter()
            .map(|r| r.to_pair())
            .collect::<Result<Vec<_>>>()?;
        emit_overlay(vol, k, &pairs, &dir.join(format!("{name}_slice{k:03}.pgm")))?;
    }
    Ok(())
}

/// Mode shorthand used by the CLI.
pub fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "single" => Ok(Mode::Single),
        "multi" => Ok(Mode::Multi),
        other => Err(Error::InvalidConfig(format!(
            "mode must be single or multi, got {other:?}"
        ))),
    }
}
