use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{ArchitectureSpec, Head};
use crate::analysis::{DecoderConfig, FeatureSource};
use crate::error::{NavError, Result};
use crate::maze::{generate_layout, MazeKind, MazeLayout, WorldConfig};
use crate::targets::{check_depth_frame, LoopThresholds};
use crate::trainer::{HyperParams, TrainSetup};

/// Upper bound on the number of replicas in a sampled sweep.
pub const MAX_SWEEP: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeConfig {
    pub kind: MazeKind,
    pub seed: u64,
    /// Text layout to load instead of generating one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_file: Option<PathBuf>,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self { kind: MazeKind::StaticSmall, seed: 0, layout_file: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub features: FeatureSource,
    pub decoder: DecoderConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 100, seed: 1, features: FeatureSource::Top, decoder: DecoderConfig::default() }
    }
}

/// Hyperparameters used as given, or `N` random draws around them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Fixed,
    Sample(usize),
}

impl Sweep {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "fixed" {
            return Ok(Sweep::Fixed);
        }
        let n = s
            .strip_prefix("sample:")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| NavError::Config(format!("sweep must be `fixed` or `sample:N`, got `{s}`")))?;
        if n == 0 || n > MAX_SWEEP {
            return Err(NavError::Config(format!("sweep size {n} outside 1..={MAX_SWEEP}")));
        }
        Ok(Sweep::Sample(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub max_agent_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    pub out: PathBuf,
    pub deterministic: bool,
    /// Environment steps per learning-curve window.
    pub curve_window: u64,
    /// `fixed` or `sample:N`.
    pub sweep: String,
    pub maze: MazeConfig,
    pub world: WorldConfig,
    pub arch: ArchitectureSpec,
    pub hyper: HyperParams,
    pub loops: LoopThresholds,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_agent_steps: 25_000_000,
            checkpoint_every: None,
            out: PathBuf::from("runs/default"),
            deterministic: false,
            curve_window: 50_000,
            sweep: "fixed".into(),
            maze: MazeConfig::default(),
            world: WorldConfig::default(),
            arch: ArchitectureSpec::default(),
            hyper: HyperParams::default(),
            loops: LoopThresholds::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Line of `key` inside `[table]` (empty table = top level), if present.
/// An empty key finds the table header.
pub fn key_line(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            if key.is_empty() && current == table {
                return Some(i + 1);
            }
            continue;
        }
        if key.is_empty() {
            continue;
        }
        if current == table {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl ExperimentConfig {
    /// Parses and validates; `origin` names the source in messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let loc = e.span().map(|s| line_col(text, s.start));
            let msg = e.message().trim().to_string();
            match loc {
                Some((l, c)) => NavError::Config(format!("{origin}:{l}:{c}: {msg}")),
                None => NavError::Config(format!("{origin}: {msg}")),
            }
        })?;
        cfg.validate().map_err(|(table, key, msg)| {
            let at = key_line(text, table, key).map_or_else(
                || format!("{origin}: `{}` (default)", [table, key].iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join(".")),
                |l| format!("{origin}:{l}"),
            );
            NavError::Config(format!("{at}: {msg}"))
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NavError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| NavError::Config(format!("cannot serialise config: {e}")))
    }

    pub fn sweep(&self) -> Result<Sweep> {
        Sweep::parse(&self.sweep)
    }

    /// Semantic checks; failures name the table and key to blame.
    fn validate(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        let err = |t, k, e: NavError| (t, k, e.detail());
        self.sweep().map_err(|e| err("", "sweep", e))?;
        if self.curve_window == 0 {
            return Err(("", "curve_window", "must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(("", "checkpoint_every", "must be positive".into()));
        }
        self.hyper.validate().map_err(|e| err("hyper", "", e))?;
        self.arch.validate().map_err(|e| err("arch", "", e))?;
        self.loops.validate().map_err(|e| err("loops", "eta1", e))?;
        let r = &self.world.render;
        if r.width == 0 || r.height == 0 || !(r.max_range > 0.0) {
            return Err(("world.render", "width", "render size and max_range must be positive".into()));
        }
        if r.width != self.arch.image_width {
            return Err(("arch", "image_width", format!("is {} but world.render.width is {}", self.arch.image_width, r.width)));
        }
        if r.height != self.arch.image_height {
            return Err(("arch", "image_height", format!("is {} but world.render.height is {}", self.arch.image_height, r.height)));
        }
        if self.arch.has(Head::D1) || self.arch.has(Head::D2) {
            check_depth_frame(r.height, r.width).map_err(|e| err("world.render", "height", e))?;
        }
        if self.world.physics.action_repeat == 0 {
            return Err(("world.physics", "action_repeat", "must be positive".into()));
        }
        if self.world.budget == Some(0) {
            return Err(("world", "budget", "must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<Arc<MazeLayout>> {
        let layout = match &self.maze.layout_file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| NavError::Config(format!("cannot read layout {}: {e}", p.display())))?;
                MazeLayout::from_text(&text)?
            }
            None => generate_layout(self.maze.kind, self.maze.seed),
        };
        Ok(Arc::new(layout))
    }

    pub fn train_setup(&self) -> Result<TrainSetup> {
        let mut s = TrainSetup::new(self.layout()?, self.world, self.arch.clone(), self.hyper.clone());
        s.loop_thresholds = self.loops;
        s.max_agent_steps = self.max_agent_steps;
        s.seed = self.seed;
        s.deterministic = self.deterministic;
        s.curve_window = self.curve_window;
        s.checkpoint_every = self.checkpoint_every;
        s.checkpoint_dir = self.checkpoint_every.map(|_| self.out.join("checkpoints"));
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Head, Variant};

    const SAMPLE: &str = r#"
seed = 3
max_agent_steps = 1000
out = "runs/x"
sweep = "sample:4"

[maze]
kind = "mini"

[world.render]
width = 32
height = 32

[arch]
variant = "nav2lstm"
heads = ["d2"]
image_width = 32
image_height = 32

[hyper]
lr = 0.001
n_workers = 2
"#;

    #[test]
    fn parses_partial_files() {
        let c = ExperimentConfig::parse(SAMPLE, "t.toml").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.maze.kind, MazeKind::Mini);
        assert_eq!(c.arch.variant, Variant::Nav2lstm);
        assert_eq!(c.arch.heads, vec![Head::D2]);
        assert_eq!(c.hyper.lr, 0.001);
        assert_eq!(c.hyper.gamma, 0.99);
        assert_eq!(c.sweep().unwrap(), Sweep::Sample(4));
        assert_eq!(c.world.render.max_range, 20.0);
    }

    #[test]
    fn round_trip_is_identity() {
        for c in [ExperimentConfig::parse(SAMPLE, "t").unwrap(), ExperimentConfig::default()] {
            let text = c.to_toml().unwrap();
            let back = ExperimentConfig::parse(&text, "t").unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    fn err(text: &str) -> String {
        match ExperimentConfig::parse(text, "c.toml") {
            Err(NavError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        let m = err("seed = 1\n\n[hyper]\nlr = 0.1\nbogus = 3\n");
        assert!(m.starts_with("c.toml:5:"), "{m}");
        assert!(m.contains("bogus"), "{m}");
        let m = err("seed = 1\n[maze]\nkind = \"castle\"\n");
        assert!(m.starts_with("c.toml:3:"), "{m}");
        let m = err("seed = 1\nsweep = \"sample:65\"\n");
        assert!(m.starts_with("c.toml:2:"), "{m}");
        let m = err("[world.render]\nwidth = 32\nheight = 32\n[arch]\nimage_width = 84\n");
        assert!(m.starts_with("c.toml:5:"), "{m}");
        let m = err("seed = 1\n[hyper]\ngamma = 2.0\n");
        assert!(m.starts_with("c.toml:2:") && m.contains("gamma"), "{m}");
        let m = err("seed = \"a\"\nmax_agent_steps = 1\n");
        assert!(m.starts_with("c.toml:1:"), "{m}");
    }

    #[test]
    fn semantic_error_on_default_key() {
        let m = err("[world.render]\nwidth = 32\n");
        assert!(m.contains("arch.image_width"), "{m}");
    }

    #[test]
    fn sweep_values() {
        assert_eq!(Sweep::parse("fixed").unwrap(), Sweep::Fixed);
        assert_eq!(Sweep::parse("sample:64").unwrap(), Sweep::Sample(64));
        for bad in ["sample:0", "sample:65", "sample:x", "many"] {
            assert!(Sweep::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn key_lines() {
        let t = "a = 1\n[x]\na = 2\n[x.y]\n a=3\n";
        assert_eq!(key_line(t, "", "a"), Some(1));
        assert_eq!(key_line(t, "x", "a"), Some(3));
        assert_eq!(key_line(t, "x.y", "a"), Some(5));
        assert_eq!(key_line(t, "z", "a"), None);
        assert_eq!(key_line(t, "x.y", ""), Some(4));
    }
}
