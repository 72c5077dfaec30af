//! Experiment configuration, the command implementations behind the CLI,
//! map rendering and the environment socket server.

mod config;
mod mapviz;
mod server;
pub mod wire;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::*;
pub use mapviz::*;
pub use server::*;

use crate::agent::Network;
use crate::analysis::{
    curve_auc, read_logs, run_episodes, top_k_mean, train_position_decoder, write_logs, Curve, Dataset, EpisodeLog,
    FeatureSource, MetricsReport, RolloutConfig,
};
use crate::autodiff::{read_checkpoint, write_checkpoint, ParamVector};
use crate::error::{NavError, Result};
use crate::maze::{Action, World};
use crate::trainer::{read_curve_csv, sample_hyperparams, train, write_curve_csv, CurvePoint, HyperParams, TrainReport};

/// Replicas averaged in the sweep summary curve.
pub const SWEEP_TOP_K: usize = 5;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::other)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn curve_points(curve: &[CurvePoint]) -> Curve {
    curve.iter().map(|p| (p.agent_steps as f64, p.mean_episode_score)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub agent_steps: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub final_score: Option<f64>,
    pub auc: Option<f64>,
    pub recent_entropy: f64,
    pub wall_clock_s: f64,
    pub hyper: HyperParams,
}

fn summarise(r: &TrainReport, hyper: &HyperParams) -> TrainSummary {
    let pts = curve_points(&r.curve);
    TrainSummary {
        agent_steps: r.agent_steps,
        env_steps: r.env_steps,
        episodes: r.episodes,
        final_score: pts.last().map(|p| p.1),
        auc: curve_auc(&pts).ok(),
        recent_entropy: r.recent_entropy,
        wall_clock_s: r.wall_clock_s,
        hyper: hyper.clone(),
    }
}

fn train_one(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let mut setup = cfg.train_setup()?;
    setup.checkpoint_dir = cfg.checkpoint_every.map(|_| out.join("checkpoints"));
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    log::info!("training into {} for {} agent steps", out.display(), cfg.max_agent_steps);
    let report = train(&setup, None, None)?;
    let mut f = create(&out.join("curve.csv"))?;
    write_curve_csv(&mut f, &report.curve)?;
    f.flush()?;
    let mut f = create(&out.join("final.navw"))?;
    write_checkpoint(&mut f, &report.params)?;
    f.flush()?;
    let summary = summarise(&report, &cfg.hyper);
    write_json(&out.join("train.json"), &summary)?;
    Ok(summary)
}

/// Trains one agent, or each replica of a sampled sweep under `out/replica_NN`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<Vec<TrainSummary>> {
    match cfg.sweep()? {
        Sweep::Fixed => Ok(vec![train_one(cfg, &cfg.out)?]),
        Sweep::Sample(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut summaries = Vec::with_capacity(n);
            let mut curves = Vec::with_capacity(n);
            for i in 0..n {
                let mut c = cfg.clone();
                c.hyper = sample_hyperparams(&mut rng, &cfg.hyper);
                c.seed = cfg.seed.wrapping_add(i as u64);
                c.sweep = "fixed".into();
                let dir = cfg.out.join(format!("replica_{i:02}"));
                c.out = dir.clone();
                summaries.push(train_one(&c, &dir)?);
                let text = std::fs::read_to_string(dir.join("curve.csv"))?;
                let pts = curve_points(&read_curve_csv(&text)?);
                if !pts.is_empty() {
                    curves.push(pts);
                }
            }
            write_json(&cfg.out.join("sweep.json"), &summaries)?;
            if !curves.is_empty() {
                let top = top_k_mean(&curves, SWEEP_TOP_K.min(curves.len()))?;
                let mut f = create(&cfg.out.join("top_curve.csv"))?;
                writeln!(f, "agent_steps,mean_episode_score")?;
                for (x, y) in top {
                    writeln!(f, "{x},{y}")?;
                }
                f.flush()?;
            }
            Ok(summaries)
        }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector<f32>> {
    if !path.is_file() {
        return Err(NavError::MissingCheckpoint(path.display().to_string()));
    }
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Builds the configured network and checks the checkpoint matches it.
pub fn load_agent(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(Network, ParamVector<f32>)> {
    let net = Network::build(&cfg.arch)?;
    let params = load_checkpoint(checkpoint)?;
    if *params.registry != **net.registry() {
        return Err(NavError::Config(format!(
            "checkpoint {} does not match the configured architecture",
            checkpoint.display()
        )));
    }
    Ok((net, params))
}

/// Fills the decoder accuracy and curve AUC of a report when data allow.
pub fn complete_report(
    cfg: &ExperimentConfig,
    logs: &[EpisodeLog],
    curve: Option<&Path>,
    num_cells: usize,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::from_logs(logs)?;
    if logs.iter().flat_map(|l| &l.steps).all(|s| s.activations.is_some()) && !logs.is_empty() {
        let ds = Dataset::from_logs(logs)?;
        match train_position_decoder(&ds, num_cells, &cfg.eval.decoder) {
            Ok(d) => report.position_acc = Some(d.test_accuracy),
            Err(e) => log::warn!("position decoder skipped: {e}"),
        }
    }
    if let Some(path) = curve {
        let text = std::fs::read_to_string(path)?;
        let pts = curve_points(&read_curve_csv(&text)?);
        report.auc = curve_auc(&pts).ok();
    }
    Ok(report)
}

/// Runs the evaluation episodes and writes `episodes.jsonl` and `metrics.json`.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path, curve: Option<&Path>, out: &Path) -> Result<MetricsReport> {
    let (net, params) = load_agent(cfg, checkpoint)?;
    let layout = cfg.layout()?;
    let source = if net.spec().recurrent() { cfg.eval.features } else { FeatureSource::Encoder };
    let rc = RolloutConfig {
        activations: Some(source),
        loop_thresholds: cfg.loops,
        ..RolloutConfig::new(cfg.eval.episodes, cfg.eval.seed)
    };
    let logs = run_episodes(&net, &params.flat, Arc::clone(&layout), cfg.world, &rc)?;
    let mut f = create(&out.join("episodes.jsonl"))?;
    write_logs(&mut f, &logs)?;
    f.flush()?;
    let report = complete_report(cfg, &logs, curve, layout.num_floor())?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

pub fn load_logs(path: &Path) -> Result<Vec<EpisodeLog>> {
    let f = File::open(path).map_err(|e| NavError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_logs(BufReader::new(f))
}

/// Recomputes the metrics of existing logs, optionally exporting activations.
pub fn run_analyze(
    cfg: &ExperimentConfig,
    logs_path: &Path,
    curve: Option<&Path>,
    export: Option<&Path>,
    out: &Path,
) -> Result<MetricsReport> {
    let logs = load_logs(logs_path)?;
    let layout = cfg.layout()?;
    if let Some(path) = export {
        let mut f = create(path)?;
        let rows = crate::analysis::export_activations(&mut f, &logs)?;
        f.flush()?;
        log::info!("wrote {rows} activation rows to {}", path.display());
    }
    let report = complete_report(cfg, &logs, curve, layout.num_floor())?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

fn pick_episode(logs: &[EpisodeLog], episode: usize) -> Result<&EpisodeLog> {
    logs.iter()
        .find(|l| l.meta.episode == episode)
        .ok_or_else(|| NavError::Data(format!("episode {episode} is not in the log")))
}

/// Re-simulates a logged episode from its seed and actions, writing every
/// `every`-th frame as PNG. Fails if the replay drifts from the log.
pub fn run_replay(cfg: &ExperimentConfig, logs_path: &Path, episode: usize, out: &Path, every: usize) -> Result<usize> {
    let logs = load_logs(logs_path)?;
    let log = pick_episode(&logs, episode)?;
    let mut world = World::new(cfg.layout()?, cfg.world);
    let mut obs = world.reset(log.meta.episode_seed);
    std::fs::create_dir_all(out)?;
    let mut written = 0;
    for s in &log.steps {
        let ([x, y], _) = world.ground_truth_position()?;
        if x != s.x || y != s.y {
            return Err(NavError::Data(format!(
                "replay diverged at step {}: ({x}, {y}) vs logged ({}, {})",
                s.step, s.x, s.y
            )));
        }
        if s.step % every.max(1) == 0 {
            let f = create(&out.join(format!("frame_{:05}.png", s.step)))?;
            write_png(f, obs.width, obs.height, &obs.rgb)?;
            written += 1;
        }
        let r = world.step(Action::new(s.action)?)?;
        if r.reward != s.reward {
            return Err(NavError::Data(format!("replay reward {} differs from logged {} at step {}", r.reward, s.reward, s.step)));
        }
        obs = r.obs;
    }
    Ok(written)
}

/// Writes the maze and trajectory of one logged episode as SVG or PNG,
/// chosen by the extension of `out`.
pub fn run_render_map(cfg: &ExperimentConfig, logs_path: &Path, episode: usize, out: &Path) -> Result<()> {
    let logs = load_logs(logs_path)?;
    let log = pick_episode(&logs, episode)?;
    let layout = cfg.layout()?;
    match out.extension().and_then(|e| e.to_str()) {
        Some("svg") => {
            let mut f = create(out)?;
            f.write_all(render_map_svg(&layout, log).as_bytes())?;
            f.flush()?;
        }
        Some("png") => {
            let (w, h, rgb) = render_map_rgb(&layout, log);
            write_png(create(out)?, w, h, &rgb)?;
        }
        _ => return Err(NavError::Usage(format!("{}: map output must end in .svg or .png", out.display()))),
    }
    Ok(())
}

/// Output directory: `NAVW_OUT` if set, else the flag, else the config value.
pub fn resolve_out(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("NAVW_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.unwrap_or_else(|| cfg.out.clone()),
    }
}
