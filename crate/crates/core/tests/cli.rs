use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"
[env]
periods = 12
n_advertisers = 4
n_min = 20
n_max = 40
[collect]
n_trajectories = 16
[diffusion]
steps = 4
[denoiser]
channels = [8, 16]
embed_dim = 16
hidden_dim = 32
groups = 4
[train]
epochs = 2
lr = 1e-3
ema_warmup = 4
[invdyn_train]
epochs = 2
[eval]
n_runs = 2
top_k = 1
budgets = [1500.0, 2500.0]
replan_every = 3
"#;

fn run(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_diffbid"))
        .current_dir(dir)
        .args(["--config", "small.toml", "--out-dir", "out", "--log-level", "warn"])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn subcommands_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.toml"), SMALL).unwrap();
    std::fs::write(
        d.join("hist.csv"),
        "remaining_time,remaining_budget,spend_speed,realtime_cost_efficiency,avg_cost_efficiency\n1,1,0,0,0\n",
    )
    .unwrap();

    run(d, &["collect"]);
    run(d, &["train-diffusion"]);
    run(d, &["train-invdyn", "--denoiser", "denoiser.ckpt"]);
    run(d, &["evaluate"]);
    run(d, &["evaluate", "--pacing"]);
    run(d, &["oracle", "--runs", "1"]);
    run(d, &["generate", "--history-csv", "hist.csv", "--condition", "return=0.8", "--seed", "5"]);
    run(d, &["export", "--dataset", "dataset.jsonl", "--svg"]);
    run(d, &["sweep", "--axis", "omega", "--values", "0,1", "--dataset", "dataset.jsonl"]);

    let out = d.join("out");
    assert_eq!(header(&out.join("oracle.csv")), "seed,advertiser,oracle_value,oracle_cost,lambda_star");
    assert!(header(&out.join("diffbid_metrics.csv")).starts_with("budget,top_k_score,mean_score"));
    assert_eq!(header(&out.join("curves.csv")), "episode,advertiser,period,remaining_budget,cost,reward,lambda_0");
    assert!(out.join("budget_bands.svg").exists());
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 1 + 2 * 2);

    let gen = std::fs::read_to_string(out.join("generated.csv")).unwrap();
    assert_eq!(gen.lines().count(), 1 + 12);
    assert!(gen.lines().nth(1).unwrap().starts_with("0,1,1,0,0,0,"));

    // Every curve starts with the full budget.
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    for line in curves.lines().skip(1).filter(|l| l.split(',').nth(2) == Some("0")) {
        assert_eq!(line.split(',').nth(3), Some("1"));
    }
}

#[test]
fn bad_condition_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_diffbid"))
        .current_dir(dir.path())
        .args(["--config", "small.toml", "--out-dir", "out", "generate", "--condition", "ctr_ok=1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ctr_ok"));
}
