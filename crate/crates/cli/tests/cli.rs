use std::path::Path;
use std::process::{Command, Output};

use gausstalk::config::RunConfig;

fn gausstalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gausstalk")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "[synth]\nframes = 10\nwidth = 24\nheight = 24\nface_prims = 300\nmouth_prims = 30\n\
[train]\nstatic_iters = 6\nmotion_iters = 6\nfinetune_iters = 4\nholdout = 2\ncheckpoint_every = 8\n";

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let bundle = dir.join("bundle");
    let out = gausstalk(&["gen-data", "--config", p(&cfg), "--out", p(&bundle)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (p(&cfg).to_string(), p(&bundle).to_string())
}

#[test]
fn default_config_is_complete_and_parses() {
    let out = gausstalk(&["inspect", "--default-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    for section in ["[paths]", "[synth]", "[train]", "[loss]", "[motion]", "[model]"] {
        assert!(text.contains(section), "{section}");
    }
}

#[test]
fn full_pipeline_and_reproducible_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, bundle) = setup(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = gausstalk(&["train", "--config", &cfg, "--bundle", &bundle, "--out", p(&out_dir), "--threads", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    let log_a = std::fs::read_to_string(a.join("log.jsonl")).unwrap();
    assert_eq!(log_a, std::fs::read_to_string(b.join("log.jsonl")).unwrap());
    assert_eq!(log_a.lines().count(), 16);
    for line in log_a.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"]["total"].is_number() && v["stage"].is_string());
    }
    assert!(a.join("checkpoint-000008.hmtc").is_file());
    assert_eq!(std::fs::read(a.join("checkpoint.hmtc")).unwrap(), std::fs::read(b.join("checkpoint.hmtc")).unwrap());

    let ckpt = a.join("checkpoint.hmtc");
    let rendered = dir.path().join("rendered");
    let out = gausstalk(&["render", "--checkpoint", p(&ckpt), "--bundle", &bundle, "--out", p(&rendered), "--start", "7", "--drive", "image"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for t in 7..10 {
        assert!(rendered.join(format!("{t:05}.png")).is_file());
        assert!(rendered.join(format!("{t:05}.hmtk")).is_file());
    }
    let report = dir.path().join("report.jsonl");
    let out = gausstalk(&["eval", "--rendered", p(&rendered), "--bundle", &bundle, "--report", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("psnr") && stdout.contains("mean"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 4);
    assert!(dir.path().join("report.txt").is_file());

    let empty = dir.path().join("empty");
    let out = gausstalk(&["render", "--checkpoint", p(&ckpt), "--bundle", &bundle, "--out", p(&empty), "--start", "4", "--end", "4"]);
    assert!(out.status.success());
    assert!(!empty.exists());

    let out = gausstalk(&["inspect", "--checkpoint", p(&ckpt), "--bundle", &bundle]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("iteration 16"));
}

#[test]
fn resume_continues_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, bundle) = setup(dir.path());
    let full = dir.path().join("full");
    assert!(gausstalk(&["train", "--config", &cfg, "--bundle", &bundle, "--out", p(&full)]).status.success());
    let resumed = dir.path().join("resumed");
    std::fs::create_dir_all(&resumed).unwrap();
    let lines: Vec<String> = std::fs::read_to_string(full.join("log.jsonl")).unwrap().lines().map(String::from).collect();
    std::fs::write(resumed.join("log.jsonl"), lines[..8].join("\n") + "\n").unwrap();
    let ckpt = full.join("checkpoint-000008.hmtc");
    let out = gausstalk(&["train", "--config", &cfg, "--bundle", &bundle, "--out", p(&resumed), "--resume", p(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(resumed.join("log.jsonl")).unwrap(),
        std::fs::read_to_string(full.join("log.jsonl")).unwrap()
    );
    assert_eq!(std::fs::read(resumed.join("checkpoint.hmtc")).unwrap(), std::fs::read(full.join("checkpoint.hmtc")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| gausstalk(args).status.code().unwrap();

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlr = -1.0\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", p(&bad)]), 2);
    assert_eq!(code(&["train", "--config", p(&dir.path().join("missing.toml"))]), 2);
    assert_eq!(code(&["train", "--bundle", p(&dir.path().join("nothing"))]), 3);

    let (cfg, bundle) = setup(dir.path());
    // the bundle was rendered as-written
    assert_eq!(code(&["train", "--config", &cfg, "--bundle", &bundle, "--blend", "face-complement"]), 2);

    let hot = dir.path().join("hot.toml");
    std::fs::write(&hot, format!("{SMALL}lr = 1e200\n")).unwrap();
    let out = dir.path().join("hot");
    assert_eq!(code(&["train", "--config", p(&hot), "--bundle", &bundle, "--out", p(&out)]), 4);

    let rendered = dir.path().join("r");
    std::fs::create_dir_all(&rendered).unwrap();
    assert_eq!(code(&["eval", "--rendered", p(&rendered), "--bundle", &bundle]), 3);
}
