use std::fs;
use std::path::Path;

use evfuse::harness::{
    cmd_benchmark, cmd_evaluate, cmd_generate, cmd_stratify, cmd_train_experts, cmd_train_gate,
    load_dataset, load_results, ExperimentConfig, Method, RunContext,
};
use evfuse::simdata::Split;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.generator.videos.train = 60;
    cfg.generator.videos.val = 24;
    cfg.generator.videos.test = 24;
    cfg.generator.videos.unseen = 24;
    cfg.generator.frames_range = [6, 12];
    cfg.training.experts.epochs = 2;
    cfg.training.gate.epochs = 2;
    cfg.baselines.mc_passes = 3;
    cfg
}

fn run_all(ctx: &RunContext, methods: &[Method]) {
    cmd_generate(ctx).unwrap();
    cmd_train_experts(ctx, methods).unwrap();
    if methods.contains(&Method::Gated) {
        cmd_train_gate(ctx).unwrap();
    }
    cmd_evaluate(ctx, methods).unwrap();
}

#[test]
fn staged_commands_match_benchmark() {
    let cfg = tiny();
    let staged = tempfile::tempdir().unwrap();
    let bench = tempfile::tempdir().unwrap();
    let ctx = RunContext::new(cfg.clone(), Some(3), Some(staged.path().to_path_buf()));
    run_all(&ctx, &Method::ALL);
    cmd_benchmark(&cfg, &[3], &Method::ALL, bench.path()).unwrap();
    let a = fs::read(ctx.layout.results()).unwrap();
    let b = fs::read(bench.path().join("benchmark_results.csv")).unwrap();
    assert_eq!(String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap());
}

#[test]
fn retraining_the_gate_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = RunContext::new(tiny(), Some(1), Some(dir.path().to_path_buf()));
    let methods = [Method::Edl, Method::Naive, Method::Gated];
    run_all(&ctx, &methods);
    let gate = fs::read(ctx.layout.gate()).unwrap();
    let results = fs::read(ctx.layout.results()).unwrap();
    fs::remove_file(ctx.layout.gate()).unwrap();
    cmd_train_gate(&ctx).unwrap();
    cmd_evaluate(&ctx, &methods).unwrap();
    assert_eq!(fs::read(ctx.layout.gate()).unwrap(), gate);
    assert_eq!(fs::read(ctx.layout.results()).unwrap(), results);
}

#[test]
fn single_method_gives_one_row_per_split() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = RunContext::new(tiny(), Some(0), Some(dir.path().to_path_buf()));
    run_all(&ctx, &[Method::Edl]);
    let rows = load_results(&ctx.layout.results(), Some(&ctx.hash())).unwrap();
    let splits: Vec<Split> = rows.iter().map(|r| r.split).collect();
    assert_eq!(splits, [Split::Val, Split::Test, Split::Unseen]);
    assert!(rows.iter().all(|r| r.method == Method::Edl && r.seed == 0));
    assert!(!ctx.layout.gate().exists());

    let strat = cmd_stratify(&ctx, &[Method::Edl]).unwrap();
    assert_eq!(strat.len(), 2);
    assert!(strat.iter().all(|r| r.confident_count + r.uncertain_count == r.total));
}

#[test]
fn dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ctx = RunContext::new(cfg.clone(), Some(7), Some(dir.path().to_path_buf()));
    cmd_generate(&ctx).unwrap();
    let loaded = load_dataset(&ctx).unwrap();
    let fresh = evfuse::harness::generate(&cfg, 7).unwrap();
    for s in Split::ALL {
        for (a, b) in loaded.split(s).iter().zip(fresh.split(s)) {
            assert_eq!(a, b, "bag {}", b.bag_id);
        }
        assert_eq!(loaded.split(s).len(), fresh.split(s).len());
    }
}

#[test]
fn missing_artifacts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = RunContext::new(tiny(), Some(0), Some(dir.path().to_path_buf()));
    let err = cmd_train_experts(&ctx, &[Method::Edl]).unwrap_err();
    assert_eq!(err.kind(), "missing_file");
    cmd_generate(&ctx).unwrap();
    let err = cmd_train_gate(&ctx).unwrap_err();
    assert_eq!(err.kind(), "missing_file");
}

#[test]
fn foreign_config_hash_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = RunContext::new(tiny(), Some(0), Some(dir.path().to_path_buf()));
    cmd_generate(&ctx).unwrap();
    let mut other = tiny();
    other.training.experts.epochs = 3;
    let mut ctx2 = RunContext::new(other, Some(0), Some(dir.path().to_path_buf()));
    assert_eq!(load_dataset(&ctx2).unwrap_err().kind(), "config_hash");
    ctx2.allow_hash_mismatch = true;
    assert!(load_dataset(&ctx2).is_ok());
}

fn csv_files(root: &Path) -> Vec<std::path::PathBuf> {
    fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect()
}

#[test]
fn csv_outputs_carry_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = RunContext::new(tiny(), Some(2), Some(dir.path().to_path_buf()));
    let methods = [Method::Edl, Method::Naive, Method::Gated];
    run_all(&ctx, &methods);
    cmd_stratify(&ctx, &methods).unwrap();
    let files = csv_files(dir.path());
    assert_eq!(files.len(), 4);
    let head = format!("# config_hash={}\n", ctx.hash());
    for f in files {
        let text = fs::read_to_string(&f).unwrap();
        assert!(text.starts_with(&head), "{}", f.display());
    }
    let json = fs::read_to_string(ctx.layout.reliability()).unwrap();
    assert!(json.contains(&ctx.hash()));
}
