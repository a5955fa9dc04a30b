use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[suite]
train_per_family = 1
eval_per_family = 1

[il]
epochs = 2

[sampler]
d_model = 16
heads = 2

[grpo]
updates = 2
batch_scenarios = 1
inner_steps = 1

[grpo.group]
group_size = 5

[rwm]
groups_per_scenario = 1
jitter_groups = 1
il_groups = 1
group_size = 5
epochs = 2
confidence_epochs = 1

[plan]
n_bestof = 2

[plan.group]
group_size = 5
"#;

fn pairplan(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pairplan"));
    cmd.args(args).env("RUST_LOG", "warn");
    match threads {
        Some(n) => cmd.env("PAIRPLAN_THREADS", n),
        None => cmd.env_remove("PAIRPLAN_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stage(name: &str, config: &Path, out: &Path) -> Output {
    let o = pairplan(
        &[name, "--config", config.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{name} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let out = dir.path().join("run");
    for name in ["gen-scenarios", "train-il", "train-rl", "train-rwm", "eval", "plan"] {
        stage(name, &config, &out);
    }
    for file in ["suite/manifest.json", "il.ckpt", "sampler.ckpt", "rwm.ckpt", "rl_log.csv", "report.csv", "timing.csv", "report.svg"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert!(lines[1].starts_with("scenario_id,agent,corruption,nc,dac,"));
    // 5 eval scenarios x 4 agents, then one mean row per agent
    assert_eq!(lines.len(), 2 + 20 + 4);
    assert_eq!(lines.iter().filter(|l| l.starts_with("mean,")).count(), 4);
    assert_eq!(std::fs::read_dir(out.join("plans")).unwrap().count(), 5);

    // a second eval appends a new block
    stage("eval", &config, &out);
    let again = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(again.len(), 2 * report.len());
    assert!(again.starts_with(&report));
}

#[test]
fn eval_without_checkpoints_fails_with_the_missing_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let out = dir.path().join("run");
    stage("gen-scenarios", &config, &out);
    let o = pairplan(
        &["eval", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()],
        None,
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("il.ckpt"));
}

#[test]
fn human_only_eval_needs_no_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("human.toml");
    std::fs::write(&config, format!("{TINY}\n[eval]\nroster = [\"human\"]\nsvg = false\n")).unwrap();
    let out = dir.path().join("run");
    stage("gen-scenarios", &config, &out);
    stage("eval", &config, &out);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2 + 5 + 1);
    assert!(!out.join("report.svg").exists());
}

#[test]
fn bad_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[rwm]\nepochz = 3\n").unwrap();
    let out = dir.path().join("run");
    let o = pairplan(&["gen-scenarios", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));

    let o = pairplan(&["gen-scenarios", "--out", out.to_str().unwrap()], Some("zero"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("PAIRPLAN_THREADS"));

    let o = pairplan(&["eval", "--out", dir.path().join("nowhere").to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest.json"));
}
