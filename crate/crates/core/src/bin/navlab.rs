use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use navlab::runner::{
    resolve_out, run_analyze, run_eval, run_render_map, run_replay, run_train, EnvServer, ExperimentConfig, ServerConfig,
};
use navlab::NavError;

#[derive(Parser)]
#[command(name = "navlab", version, about = "Train and analyse maze navigation agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; NAVW_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent (or a sampled sweep) and write curves and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        deterministic: bool,
        /// Maximum agent steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Run test episodes with a checkpoint and write logs and metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Learning curve used for the AUC field.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Recompute metrics from episode logs.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Write recorded activations as CSV.
        #[arg(long)]
        export_activations: Option<PathBuf>,
    },
    /// Re-render the frames of a logged episode.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Keep every n-th frame.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Draw the maze and a logged trajectory as SVG or PNG.
    RenderMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Output file ending in .svg or .png.
        #[arg(long)]
        map: PathBuf,
    },
    /// Serve environments over TCP, one per connection.
    ServeEnv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Send per-pixel depth instead of the 4x16 grid.
        #[arg(long)]
        raw_depth: bool,
    },
}

fn load(common: &Common) -> navlab::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = resolve_out(common.out.clone(), &cfg);
    cfg.out = out.clone();
    Ok((cfg, out))
}

fn require(path: &Path) -> navlab::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(NavError::Data(format!("{} does not exist", path.display())))
    }
}

fn run(cli: Cli) -> navlab::Result<()> {
    match cli.command {
        Command::Train { common, workers, deterministic, steps, checkpoint_every } => {
            let (mut cfg, _) = load(&common)?;
            if let Some(w) = workers {
                cfg.hyper.n_workers = w;
            }
            cfg.deterministic |= deterministic;
            if let Some(s) = steps {
                cfg.max_agent_steps = s;
            }
            if checkpoint_every.is_some() {
                cfg.checkpoint_every = checkpoint_every;
            }
            cfg.hyper.validate()?;
            for s in run_train(&cfg)? {
                println!(
                    "agent_steps={} episodes={} final_score={} auc={}",
                    s.agent_steps,
                    s.episodes,
                    s.final_score.map_or("n/a".into(), |v| format!("{v:.3}")),
                    s.auc.map_or("n/a".into(), |v| format!("{v:.3}"))
                );
            }
        }
        Command::Eval { common, checkpoint, episodes, curve } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            let report = run_eval(&cfg, &checkpoint, curve.as_deref(), &out)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?);
        }
        Command::Analyze { common, logs, curve, export_activations } => {
            let (cfg, out) = load(&common)?;
            require(&logs)?;
            let report = run_analyze(&cfg, &logs, curve.as_deref(), export_activations.as_deref(), &out)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?);
        }
        Command::Replay { common, logs, episode, every } => {
            let (cfg, out) = load(&common)?;
            require(&logs)?;
            let n = run_replay(&cfg, &logs, episode, &out.join(format!("replay_{episode}")), every)?;
            println!("wrote {n} frames");
        }
        Command::RenderMap { common, logs, episode, map } => {
            let (cfg, _) = load(&common)?;
            require(&logs)?;
            run_render_map(&cfg, &logs, episode, &map)?;
            println!("wrote {}", map.display());
        }
        Command::ServeEnv { common, port, host, raw_depth } => {
            let (cfg, _) = load(&common)?;
            let server = EnvServer::bind((host.as_str(), port), ServerConfig { layout: cfg.layout()?, world: cfg.world, raw_depth })?;
            println!("listening on {}", server.local_addr()?);
            server.serve()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("navlab: {e}");
            ExitCode::from(match e {
                NavError::Config(_) => 2,
                NavError::MissingCheckpoint(_) => 3,
                _ => 1,
            })
        }
    }
}
