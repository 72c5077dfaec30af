use std::process::Command;

const CONFIG: &str = r#"
seed = 1
max_agent_steps = 100

[maze]
kind = "mini"

[world.render]
width = 32
height = 32

[arch]
image_width = 32
image_height = 32
"#;

fn navlab(args: &[&str], out: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_navlab"))
        .args(args)
        .env("NAVW_OUT", out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[hyper]\nlr = \"fast\"\n").unwrap();
    let out = navlab(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("bad.toml:3"), "{msg}");
}

#[test]
fn missing_checkpoint_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let ckpt = dir.path().join("absent.navw");
    let out = navlab(&["eval", "--config", cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_then_eval_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let c = cfg.to_str().unwrap();
    let out = navlab(&["train", "--config", c, "--deterministic"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "curve.csv", "final.navw", "train.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let ckpt = dir.path().join("final.navw");
    let out = navlab(&["eval", "--config", c, "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("metrics.json").is_file());
    let logs = dir.path().join("episodes.jsonl");
    let map = dir.path().join("map.svg");
    let out = navlab(&["render-map", "--config", c, "--logs", logs.to_str().unwrap(), "--map", map.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(map).unwrap().contains("<polyline"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = navlab::runner::ExperimentConfig::load(&path).unwrap();
            cfg.train_setup().unwrap().validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 3);
}
