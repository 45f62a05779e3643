//! Acceptance criteria 1 to 8.
//!
//! Each criterion prints one `PASS`/`FAIL` line before asserting. The
//! end-to-end benchmark (criterion 7) trains the full default configuration
//! on five seeds and takes several minutes; run this file with
//! `cargo test --release --test acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

use std::time::Instant;

use evfuse::diff::special::{digamma, ln_gamma, EULER_MASCHERONI};
use evfuse::diff::{grad_check, Tape, Tensor, Var};
use evfuse::evidential::{
    edl_loss, edl_loss_on_tape, evidential_on_tape, kl_dirichlet_vs_uniform, one_hot,
    EdlLossConfig, EvidentialOutput,
};
use evfuse::expert::{
    train_expert, AttentionKind, ExpertLoss, ExpertModel, ExpertSpec, HeadKind, LabelSource, Mode,
    TrainConfig,
};
use evfuse::gate::{
    gate_forward, gate_loss_on_tape, naive_fuse, train_gate, ExpertView, GateLossConfig,
    GateModel, GateSpec,
};
use evfuse::harness::{cmd_benchmark, ExperimentConfig, Method, ResultRow};
use evfuse::metrics::{ece, ece_from_bins, reliability_diagram, weighted_f1};
use evfuse::simdata::{generate_dataset, trial_label, GeneratorConfig, RaterPanel, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use sha2::{Digest, Sha256};

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("{verdict} criterion {id} ({name}): {detail}");
}

// ---------------------------------------------------------------------------
// 1. Numerical kernels

fn ln_dirichlet(x: &[f64], alpha: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let mut v = statrs::function::gamma::ln_gamma(s);
    for (&xi, &a) in x.iter().zip(alpha) {
        v += -statrs::function::gamma::ln_gamma(a) + (a - 1.0) * xi.ln();
    }
    v
}

#[test]
fn criterion_1_numerical_kernels() {
    let mut worst = 0.0_f64;
    let mut track = |got: f64, want: f64| worst = worst.max((got - want).abs());

    track(ln_gamma(5.0).unwrap(), 24f64.ln());
    track(digamma(1.0).unwrap(), -EULER_MASCHERONI);
    let mut h = 0.0;
    for n in 1..=20 {
        h += 1.0 / n as f64;
        track(digamma(n as f64 + 1.0).unwrap() - digamma(1.0).unwrap(), h);
    }
    for x in [0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 7.25, 12.0, 40.0, 250.0] {
        track(ln_gamma(x).unwrap(), statrs::function::gamma::ln_gamma(x));
        track(digamma(x).unwrap(), statrs::function::gamma::digamma(x));
    }
    let rounded = (ln_gamma(5.0).unwrap() * 1e6).round() / 1e6;

    let alpha = [2.0, 1.0, 1.0, 1.0];
    let kl = kl_dirichlet_vs_uniform(&alpha).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let draws = 4_000_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
        let s: f64 = g.iter().sum();
        let x: Vec<f64> = g.iter().map(|v| v / s).collect();
        acc += ln_dirichlet(&x, &alpha) - ln_dirichlet(&x, &[1.0; 4]);
    }
    let mc = acc / draws as f64;

    let ok = worst < 1e-10 && rounded == 3.178054 && (kl - 0.302961).abs() < 1e-6 && (kl - mc).abs() < 1e-3;
    report(
        1,
        "numerical kernels",
        ok,
        &format!("max special-function error {worst:.2e}; KL {kl:.7}; Monte Carlo KL {mc:.5}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

fn edl_batch_gradient_error(seed: u64, epoch: u32, cfg: &EdlLossConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 5;
    let logits: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..4)).collect();

    // The tape loss must equal the plain-value loss before its gradient is
    // worth checking.
    let outputs: Vec<(EvidentialOutput, Vec<f64>)> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let out = EvidentialOutput::from_logits(&logits[i * 4..(i + 1) * 4]).unwrap();
            (out, one_hot(y, 4).unwrap())
        })
        .collect();
    let direct = edl_loss(&outputs, epoch, cfg).unwrap();

    let f = |tape: &mut Tape, p: &[Var]| {
        let mut terms = Vec::new();
        for (i, &y) in labels.iter().enumerate() {
            let row: Vec<f64> = (0..rows).map(|j| if j == i { 1.0 } else { 0.0 }).collect();
            let pick = tape.constant(Tensor::matrix(1, rows, row)?);
            let z = tape.matmul(pick, p[0])?;
            let ev = evidential_on_tape(tape, z)?;
            terms.push(edl_loss_on_tape(tape, ev.alpha, &one_hot(y, 4)?, epoch, cfg)?);
        }
        let all = tape.concat(&terms, 1)?;
        tape.mean(all)
    };
    let params = [Tensor::matrix(rows, 4, logits).unwrap()];
    let on_tape = evfuse::diff::evaluate(&f, &params).unwrap();
    assert!((on_tape - direct).abs() < 1e-12, "tape {on_tape} vs direct {direct}");
    grad_check(f, &params, 1e-5).unwrap()
}

fn random_views(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<ExpertView> {
    (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            ExpertView {
                probs: raw.iter().map(|x| x / s).collect(),
                uncertainty: rng.random_range(0.05..0.95),
                features: (0..d).map(|_| rng.random_range(0.0..2.0)).collect(),
            }
        })
        .collect()
}

fn gate_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let mut gate = GateModel::new(GateSpec {
        shared_dim: 8,
        head_hidden: 5,
        ..GateSpec::new(3, 6, seed)
    })
    .unwrap();
    for t in gate.params.tensors_mut() {
        let shape = t.shape().to_vec();
        let data = t.data().iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
        *t = Tensor::new(shape, data).unwrap();
    }
    let batch: Vec<(Vec<ExpertView>, usize)> =
        (0..4).map(|_| (random_views(3, 6, &mut rng), rng.random_range(0..4))).collect();
    let frozen: Vec<bool> = batch
        .iter()
        .map(|(v, y)| gate.forward(v).unwrap().correct(*y))
        .collect();
    let cfg = GateLossConfig::default();
    let f = |tape: &mut Tape, vars: &[Var]| {
        let mut terms = Vec::new();
        for (i, ((views, y), &c)) in batch.iter().zip(&frozen).enumerate() {
            // Same dropout masks on every evaluation.
            let mut r = ChaCha8Rng::seed_from_u64(i as u64);
            let fused = gate.forward_on_tape(tape, vars, views, Mode::Train, &mut r)?;
            terms.push(gate_loss_on_tape(tape, &fused, *y, c, &cfg)?);
        }
        let all = tape.concat(&terms, 1)?;
        tape.mean(all)
    };
    grad_check(f, gate.params.tensors(), 1e-6).unwrap()
}

#[test]
fn criterion_2_gradient_suite() {
    let mut worst_edl = 0.0_f64;
    for adjust in [true, false] {
        let cfg = EdlLossConfig {
            annealing_threshold: 10,
            kl_evidence_adjustment: adjust,
        };
        for epoch in [0, 5, 10, 14] {
            for seed in 0..5 {
                worst_edl = worst_edl.max(edl_batch_gradient_error(seed, epoch, &cfg));
            }
        }
    }
    let worst_gate = (0..5).map(gate_gradient_error).fold(0.0_f64, f64::max);
    let ok = worst_edl < 1e-4 && worst_gate < 1e-4;
    report(
        2,
        "gradient suite",
        ok,
        &format!("max relative error: evidential loss {worst_edl:.2e}, gate loss {worst_gate:.2e}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. Evidential invariants

#[test]
fn criterion_3_evidential_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0usize;
    let mut worst_sum = 0.0_f64;
    for i in 0..100_000 {
        let span = [1.0, 10.0, 60.0, 700.0][i % 4];
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-span..span)).collect();
        let out = EvidentialOutput::from_logits(&z).unwrap();
        let sum_err = (out.probs.iter().sum::<f64>() - 1.0).abs();
        worst_sum = worst_sum.max(sum_err);
        let alpha_exact = out.alpha.iter().zip(&out.evidence).all(|(a, e)| *a == e + 1.0);
        if !(out.uncertainty > 0.0 && out.uncertainty <= 1.0) || sum_err > 1e-9 || !alpha_exact {
            violations += 1;
        }
    }
    let vacuous = EvidentialOutput::from_logits(&[-800.0; 4]).unwrap();
    let limit_ok = vacuous.uncertainty == 1.0 && vacuous.probs.iter().all(|&p| p == 0.25);
    let ok = violations == 0 && limit_ok;
    report(
        3,
        "evidential invariants",
        ok,
        &format!(
            "{violations} violations in 100000 draws; max |Σp − 1| {worst_sum:.1e}; zero evidence u = {}",
            vacuous.uncertainty
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 4. Fusion invariants

fn param_hash(models: &[ExpertModel]) -> String {
    let mut h = Sha256::new();
    for m in models {
        for t in m.params.tensors() {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

fn freeze_contract_holds() -> bool {
    let gen = GeneratorConfig {
        videos: evfuse::simdata::SplitSizes {
            train: 60,
            val: 10,
            test: 10,
            unseen: 10,
        },
        frames_range: [4, 8],
        feature_dim: 8,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&gen, &RaterPanel::development(), &RaterPanel::prospective()).unwrap();
    let quick = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let experts: Vec<ExpertModel> = (0..3)
        .map(|k| {
            let spec = ExpertSpec {
                name: format!("e{k}"),
                head: HeadKind::Evidential,
                label_source: if k == 2 { LabelSource::Local } else { LabelSource::Central },
                hidden: 8,
                attention: 4,
                feature: 6,
                dropout: 0.1,
                attention_kind: AttentionKind::Gated,
                seed: k,
            };
            let mut m = ExpertModel::new(spec, 8).unwrap();
            train_expert(&mut m, &data.train, &quick, &ExpertLoss::Evidential(EdlLossConfig::default()))
                .unwrap();
            m
        })
        .collect();
    let before = param_hash(&experts);
    let mut gate = GateModel::new(GateSpec::new(3, 6, 9)).unwrap();
    let gate_before = gate.clone();
    train_gate(&mut gate, &experts, &data.train, &quick, &GateLossConfig::default()).unwrap();
    before == param_hash(&experts) && gate != gate_before
}

#[test]
fn criterion_4_fusion_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0usize;
    let mut worst_sum = 0.0_f64;
    let mut states = 0usize;
    for g in 0..1000u64 {
        let k = 2 + (g as usize % 6);
        let d = 3 + (g as usize % 5);
        let mut gate = GateModel::new(GateSpec {
            shared_dim: 6,
            head_hidden: 4,
            ..GateSpec::new(k, d, g)
        })
        .unwrap();
        let scale = [0.5, 3.0, 20.0][g as usize % 3];
        for t in gate.params.tensors_mut() {
            let shape = t.shape().to_vec();
            let data = t.data().iter().map(|_| rng.random_range(-scale..scale)).collect();
            *t = Tensor::new(shape, data).unwrap();
        }
        if g % 4 == 0 {
            // All-negative probability weights.
            let n = gate.params.tensors().len();
            let t = gate.params.tensors_mut();
            t[6] = Tensor::zeros(t[6].shape());
            t[7] = Tensor::filled(&[1, 1], -3.0);
            assert_eq!(n, 16);
        }
        for _ in 0..100 {
            let views: Vec<ExpertView> = random_views(k, d, &mut rng)
                .into_iter()
                .map(|mut v| {
                    v.features.iter_mut().for_each(|x| *x *= scale);
                    v.uncertainty = rng.random_range(0.0..=1.0);
                    v
                })
                .collect();
            let out = gate_forward(&gate, &views).unwrap();
            let sum_err = (out.probs.iter().sum::<f64>() - 1.0).abs();
            worst_sum = worst_sum.max(sum_err);
            let finite = out.probs.iter().all(|p| p.is_finite() && *p >= 0.0);
            if sum_err > 1e-9 || !finite || !(0.0..=1.0).contains(&out.uncertainty) {
                violations += 1;
            }
            states += 1;
        }
    }

    let mut perm_mismatch = 0usize;
    for _ in 0..10_000 {
        let k = rng.random_range(2..8);
        let views = random_views(k, 3, &mut rng);
        let mut shuffled = views.clone();
        shuffled.shuffle(&mut rng);
        if naive_fuse(&views).unwrap() != naive_fuse(&shuffled).unwrap() {
            perm_mismatch += 1;
        }
    }

    let frozen = freeze_contract_holds();
    let ok = violations == 0 && perm_mismatch == 0 && frozen;
    report(
        4,
        "fusion invariants",
        ok,
        &format!(
            "{violations} violations in {states} gate states (max |Σp̂ − 1| {worst_sum:.1e}); \
             {perm_mismatch} naive permutation mismatches; expert hash unchanged: {frozen}"
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

#[test]
fn criterion_5_metric_oracles() {
    let f1 = weighted_f1(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
    let f1_oracle = 0.5 * (2.0 / 3.0) + 0.5 * 0.8;
    let e = ece(&[0.9, 0.9, 0.6, 0.6], &[true, false, true, false], 10).unwrap();
    let e_oracle = 0.5 * (0.5_f64 - 0.9).abs() + 0.5 * (0.5_f64 - 0.6).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let n = rng.random_range(1..400);
        let conf: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let correct: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let bins = rng.random_range(1..20);
        let direct = ece(&conf, &correct, bins).unwrap();
        let recomposed = ece_from_bins(&reliability_diagram(&conf, &correct, bins).unwrap());
        worst = worst.max((direct - recomposed).abs());
    }
    let ok = (f1 - f1_oracle).abs() < 1e-12 && (e - e_oracle).abs() < 1e-12 && worst < 1e-12;
    report(
        5,
        "metric oracles",
        ok,
        &format!("weighted F1 {f1:.6}; ECE {e:.6}; bin recomposition error {worst:.1e}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6. Trial labelling

#[test]
fn criterion_6_trial_labelling() {
    let mut failures = Vec::new();
    for l in 0u8..4 {
        for c in 0u8..4 {
            for a in 0u8..4 {
                let (fin, adjudicated) = trial_label(l, c, || a);
                let mut sorted = [l, c, a];
                sorted.sort_unstable();
                let want = if l == c { l } else { sorted[1] };
                let swapped = trial_label(c, l, || a);
                if fin != want || adjudicated != (l != c) || swapped != (fin, adjudicated) {
                    failures.push((l, c, a));
                }
            }
        }
    }
    let ok = failures.is_empty();
    report(6, "trial labelling", ok, &format!("64 cases, failures {failures:?}"));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 7. End-to-end benchmark

fn pick<'a>(rows: &'a [ResultRow], method: Method, split: Split, seed: u64) -> &'a ResultRow {
    rows.iter()
        .find(|r| r.method == method && r.split == split && r.seed == seed)
        .expect("row present")
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_7_end_to_end_benchmark() {
    let cfg = ExperimentConfig::default();
    let seeds: Vec<u64> = (0..5).collect();
    let methods = [Method::Edl, Method::Naive, Method::Gated];
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let outcome = cmd_benchmark(&cfg, &seeds, &methods, dir.path()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let rows = &outcome.rows;

    for r in rows.iter().filter(|r| r.split != Split::Val) {
        println!(
            "  seed {} {:<6} {:<6} F1 {:.4} ECE {:.4} retention {:.3} confident {:?} uncertain {:?}",
            r.seed,
            r.method.as_str(),
            r.split.as_str(),
            r.weighted_f1,
            r.ece,
            r.retention,
            r.confident_f1,
            r.uncertain_f1
        );
    }

    let test_mean = |m: Method, f: fn(&ResultRow) -> f64| {
        mean(seeds.iter().map(|&s| f(pick(rows, m, Split::Test, s))))
    };
    let ece_gated = test_mean(Method::Gated, |r| r.ece);
    let ece_edl = test_mean(Method::Edl, |r| r.ece);
    let a = ece_gated < ece_edl;

    let held_out_ece = |m: Method, s: u64| {
        (pick(rows, m, Split::Test, s).ece + pick(rows, m, Split::Unseen, s).ece) / 2.0
    };
    let b_wins = seeds
        .iter()
        .filter(|&&s| held_out_ece(Method::Gated, s) <= held_out_ece(Method::Naive, s))
        .count();
    let b = b_wins >= 4;

    let f1_gated = test_mean(Method::Gated, |r| r.weighted_f1);
    let f1_edl = test_mean(Method::Edl, |r| r.weighted_f1);
    let c = f1_gated >= f1_edl - 0.01;

    let separated = |m: Method| {
        seeds
            .iter()
            .filter(|&&s| {
                let r = pick(rows, m, Split::Unseen, s);
                matches!((r.confident_f1, r.uncertain_f1), (Some(cf), Some(uf)) if cf > uf)
            })
            .count()
    };
    let d_counts: Vec<usize> = methods.iter().map(|&m| separated(m)).collect();
    let d = d_counts.iter().all(|&n| n >= 4);

    let e_wins = seeds
        .iter()
        .filter(|&&s| {
            pick(rows, Method::Gated, Split::Unseen, s).retention
                >= pick(rows, Method::Edl, Split::Unseen, s).retention
        })
        .count();
    let e = e_wins >= 3;

    println!(
        "  (a) test ECE gated {ece_gated:.4} vs EDL {ece_edl:.4}: {}",
        if a { "ok" } else { "not met" }
    );
    println!(
        "  (b) gated held-out ECE ≤ naive in {b_wins}/5 seeds: {}",
        if b { "ok" } else { "not met" }
    );
    println!(
        "  (c) test F1 gated {f1_gated:.4} vs EDL {f1_edl:.4}: {}",
        if c { "ok" } else { "not met" }
    );
    println!(
        "  (d) unseen confident F1 > uncertain F1, seeds per method (edl, naive, gated) {d_counts:?}: {}",
        if d { "ok" } else { "not met" }
    );
    println!(
        "  (e) unseen retention gated ≥ EDL in {e_wins}/5 seeds: {}",
        if e { "ok" } else { "not met" }
    );
    let ok = a && b && c && d && e;
    report(
        7,
        "end-to-end benchmark",
        ok,
        &format!("(a) {a} (b) {b} (c) {c} (d) {d} (e) {e}; runtime {elapsed:.0} s (target < 900 s)"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 8. Determinism

#[test]
fn criterion_8_determinism() {
    let mut cfg = ExperimentConfig::default();
    cfg.generator.videos.train = 120;
    cfg.generator.videos.val = 40;
    cfg.generator.videos.test = 40;
    cfg.generator.videos.unseen = 40;
    cfg.generator.frames_range = [8, 16];
    cfg.training.experts.epochs = 2;
    cfg.training.gate.epochs = 2;
    cfg.baselines.mc_passes = 5;
    let seeds = [0, 1];
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    cmd_benchmark(&cfg, &seeds, &Method::ALL, first.path()).unwrap();
    cmd_benchmark(&cfg, &seeds, &Method::ALL, second.path()).unwrap();
    let mut identical = true;
    for name in ["benchmark_results.csv", "benchmark_summary.csv"] {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        identical &= a == b && !a.is_empty();
    }
    report(
        8,
        "determinism",
        identical,
        "two benchmark runs over seeds 0 and 1, all six methods; results and summary CSVs compared byte for byte",
    );
    assert!(identical);
}
