use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use polarring::phantom::PhantomConfig;
use polarring::pipeline::{self, PipelineConfig};
use polarring::selftest;

#[derive(Parser)]
#[command(
    name = "polarring",
    version,
    about = "Vessel wall segmentation on synthetic phantoms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Single,
    Multi,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom volumes, truth and proximity maps.
    Phantom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of phantoms; more than one writes p000, p001, ... under --out.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Overrides the config's global seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trace a centerline on one proximity map channel.
    Trace {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 50)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a contour regression model on a directory of phantoms.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        aug: Option<Switch>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict contours along a traced centerline.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        centerline: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against phantom truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long = "pred", required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        supersample: usize,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        summary: PathBuf,
    },
    /// Run every stage: phantoms, training, tracing, prediction, scoring.
    E2e {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    pipeline::threads()?;
    match cli.command {
        Command::Phantom {
            config,
            out,
            count,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if count == 0 {
                bail!("--count must be at least 1");
            }
            for i in 0..count {
                let dir = if count == 1 {
                    out.clone()
                } else {
                    out.join(format!("p{i:03}"))
                };
                let pc = PhantomConfig {
                    seed: cfg.phantom_seed(i),
                    ..cfg.phantom.clone()
                };
                pipeline::stage_phantom(
                    &pc,
                    cfg.proximity,
                    &cfg.degrade,
                    cfg.degrade_seed(i),
                    &dir,
                )?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Trace {
            map,
            stride,
            channel,
            out,
        } => {
            let path = pipeline::stage_trace(&map, channel, stride, &out)?;
            println!(
                "traced {} voxels, cost {:.4}; wrote {}",
                path.len(),
                path.cost,
                out.display()
            );
        }
        Command::Train {
            data,
            mode,
            aug,
            epochs,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut model = cfg.model.clone();
            if let Some(m) = mode {
                model.mode = match m {
                    ModeArg::Single => polarring::segmenter::Mode::Single,
                    ModeArg::Multi => polarring::segmenter::Mode::Multi,
                };
            }
            if let Some(a) = aug {
                model.augment = matches!(a, Switch::On);
            }
            if let Some(e) = epochs {
                model.epochs = e;
            }
            let dirs = pipeline::phantom_dirs(&data)?;
            if dirs.is_empty() {
                bail!(
                    "no phantom directories (with truth.json) under {}",
                    data.display()
                );
            }
            let seeds: Vec<u64> = (0..cfg.ensemble).map(|m| cfg.model_seed(m)).collect();
            let trained =
                pipeline::stage_train(&dirs, &[], &model, cfg.train_slice_stride, &seeds, &out)?;
            for (_, rec) in &trained {
                println!("final loss {:.5}", rec.final_loss().unwrap_or(f64::NAN));
            }
            println!("wrote {}", out.display());
        }
        Command::Predict {
            model,
            volume,
            centerline,
            out,
        } => {
            let pred = pipeline::stage_predict(&model, &volume, &centerline, &out)?;
            println!(
                "predicted {} slices; wrote {}",
                pred.contours.len(),
                out.display()
            );
        }
        Command::Eval {
            truth,
            volume,
            predictions,
            supersample,
            csv,
            summary,
        } => {
            let s =
                pipeline::stage_eval(&truth, &volume, &predictions, supersample, &csv, &summary)?;
            print_summary(&s);
        }
        Command::E2e { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = pipeline::run_e2e(&cfg)?;
            print_summary(&report.summary);
            println!(
                "wrote {} and {}",
                report.metrics_csv.display(),
                report.summary_json.display()
            );
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!(
                    "[{}] {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                bail!("{failed} selftest check(s) failed");
            }
        }
    }
    Ok(())
}

fn print_summary(s: &polarring::metrics::Summary) {
    let fmt = |q: &Option<polarring::metrics::Quartiles>| match q {
        Some(q) => format!("{:.4} (IQR {:.4})", q.median, q.iqr),
        None => "n/a".to_string(),
    };
    println!("cases {} (invalid {})", s.cases, s.invalid);
    println!("median DSC wall   {}", fmt(&s.dsc_wall));
    println!("median HD lumen   {}", fmt(&s.hd_lumen_mm));
    println!("median HD outer   {}", fmt(&s.hd_outer_mm));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
