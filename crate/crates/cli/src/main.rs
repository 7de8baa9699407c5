use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use preseg::data::SequenceManifest;
use preseg::evaluation::ClassSet;
use preseg::pipeline::{PipelineConfig, Stage};
use preseg::segmenter::MockSegmenter;
use preseg::synthetic::SceneParams;
use preseg_cli::commands::{self, InputFormat};
use preseg_cli::segserver::segmenter_router;
use preseg_cli::service::{annotation_router, AppState, SequenceSlot};

#[derive(Parser)]
#[command(name = "preseg", version, about = "Training-free LiDAR sequence presegmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; defaults apply to everything it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Sequence manifest (`manifest`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (`output`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Random seed (`seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Segmenter backend (`segmenter.backend`): mock or remote.
    #[arg(long)]
    backend: Option<String>,
    /// Remote segmenter URL (`segmenter.url`).
    #[arg(long)]
    segmenter_url: Option<String>,
    /// Any other key, as `section.key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut sets = Vec::new();
        let quoted = |p: &Path| format!("{:?}", p.display().to_string());
        if let Some(m) = &self.manifest {
            sets.push(format!("manifest={}", quoted(&absolute(m)?)));
        }
        if let Some(o) = &self.output {
            sets.push(format!("output={}", quoted(&absolute(o)?)));
        }
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        if let Some(b) = &self.backend {
            sets.push(format!("segmenter.backend={b:?}"));
        }
        if let Some(u) = &self.segmenter_url {
            sets.push(format!("segmenter.url={u:?}"));
        }
        sets.extend(self.set.iter().cloned());
        Ok(commands::load_config(self.config.as_deref(), &sets)?)
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

#[derive(Subcommand)]
enum Command {
    /// Convert point files and poses into a sequence directory.
    Ingest {
        /// Directory of point files, taken in name order.
        #[arg(long, required_unless_present = "synthetic")]
        points: Option<PathBuf>,
        /// Pose file: one row-major 3×4 matrix per line.
        #[arg(long, required_unless_present = "synthetic")]
        poses: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "kitti-bin")]
        format: InputFormat,
        /// Write the generated box scene with ground truth instead.
        #[arg(long, conflicts_with_all = ["points", "poses"])]
        synthetic: bool,
        /// Frame count of the generated scene.
        #[arg(long, requires = "synthetic")]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full presegmentation and write labels and tracks.
    Presegment(ConfigArgs),
    /// Serve the annotation API, and optionally the mock segmenter.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// A sequence as NAME=CONFIG; repeatable.
        #[arg(long = "sequence", value_name = "NAME=CONFIG")]
        sequences: Vec<String>,
        /// Also serve the mock segmenter protocol under /segmenter.
        #[arg(long)]
        mock_segmenter: bool,
    },
    /// Score labels against a sequence's ground truth.
    Eval {
        /// Directory holding labels/NNNNNN.label or NNNNNN.label files.
        #[arg(long)]
        pred: PathBuf,
        /// Sequence manifest with ground-truth labels.
        #[arg(long)]
        manifest: PathBuf,
        /// Use predicted classes as they are instead of the majority oracle.
        #[arg(long)]
        direct: bool,
        #[arg(long)]
        json: bool,
    },
    /// Write the current annotated labels of a sequence to a directory.
    Export {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        to: PathBuf,
    },
    /// Show configuration.
    Config {
        /// Print every key with its default value.
        #[arg(long)]
        dump_defaults: bool,
        /// Print the effective configuration.
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn label_dir(pred: &Path) -> PathBuf {
    let nested = pred.join("labels");
    if nested.is_dir() {
        nested
    } else {
        pred.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            points,
            poses,
            format,
            synthetic,
            frames,
            out,
        } => {
            let m = if synthetic {
                let mut p = SceneParams::default();
                if let Some(n) = frames {
                    p.frames = n;
                }
                commands::ingest_synthetic(&p, &out)?
            } else {
                let (points, poses) = (points.expect("required by clap"), poses.expect("required by clap"));
                commands::ingest(&points, &poses, format, &out)?
            };
            println!("{} frames -> {}", m.frames.len(), out.join(commands::SEQUENCE_FILE).display());
        }
        Command::Presegment(args) => {
            let cfg = args.load()?;
            let mut last = None;
            let out = commands::run_presegment(&cfg, &mut |p| {
                if last != Some(p.stage) {
                    log::info!("{}", p.stage.name());
                    last = Some(p.stage);
                }
                eprint!("\r{:>12} {:5.1}%", p.stage.name(), 100.0 * p.fraction);
            })?;
            eprintln!("\r{:>12} {:5.1}%", Stage::Output.name(), 100.0);
            println!(
                "{} tracks over {} frames -> {}",
                out.manifest.tracks.len(),
                out.labels.frames.len(),
                cfg.output.as_deref().unwrap_or(Path::new("?")).display()
            );
        }
        Command::Serve {
            addr,
            sequences,
            mock_segmenter,
        } => {
            let mut slots = Vec::new();
            for s in &sequences {
                let Some((name, path)) = s.split_once('=') else {
                    bail!("--sequence expects NAME=CONFIG, got {s:?}");
                };
                let cfg = commands::load_config(Some(Path::new(path)), &[])?;
                slots.push(SequenceSlot::open(name, cfg).with_context(|| format!("opening sequence {name}"))?);
            }
            let mut app = annotation_router(Arc::new(AppState::new(slots)));
            if mock_segmenter {
                app = app.nest("/segmenter", segmenter_router(Arc::new(MockSegmenter::default())));
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                log::info!("listening on {}", listener.local_addr()?);
                eprintln!("listening on {}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
        Command::Eval {
            pred,
            manifest,
            direct,
            json,
        } => {
            let m = SequenceManifest::load(&manifest)?;
            let Some(gt) = m.read_ground_truth()? else {
                bail!("{} lists no ground truth", manifest.display());
            };
            let labels = commands::read_label_dir(&label_dir(&pred), gt.frames.len())?;
            let report = commands::evaluate(&labels, &gt, &ClassSet::default(), !direct)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Export { config, to } => {
            let cfg = config.load()?;
            let (_, seq) = commands::load_sequence(&cfg)?;
            let state = commands::open_annotation(&cfg, &seq)?;
            commands::write_label_dir(&to, &state.labels())?;
            println!("{} frames at revision {} -> {}", seq.frames.len(), state.revision(), to.display());
        }
        Command::Config { dump_defaults, config } => {
            let cfg = if dump_defaults { PipelineConfig::default() } else { config.load()? };
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
