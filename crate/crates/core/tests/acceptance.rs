//! Exit criteria. Each test writes one `criterion N ... PASS|FAIL` line
//! straight to stderr, bypassing output capture, and then asserts it. Tests
//! hold a global lock so timings are not disturbed by concurrent training.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmkt::dataset::*;
use cmkt::diagnostics::{mmd, Kernel};
use cmkt::evaluation::*;
use cmkt::losses::*;
use cmkt::models::{build_model, layer::*, ArchitectureSpec, EncodedBatch};
use cmkt::training::*;
use cmkt::xai::{intersection_stats, explain_samples, AuditConfig, LimeConfig};

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n} {name}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {n} {name} failed: {detail}");
}

// ---------------------------------------------------------------- 1

const GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn oracle_metrics(scores: &[f64], labels: &[u8]) -> (f64, Option<f64>, Option<f64>) {
    let n = scores.len();
    let correct = scores.iter().zip(labels).filter(|(s, y)| (**s >= 0.5) == (**y == 1)).count();
    let acc = correct as f64 / n as f64;
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, y)| **y == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, y)| **y == 0).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return (acc, None, None);
    }
    let tpr = pos.iter().filter(|s| **s >= 0.5).count() as f64 / pos.len() as f64;
    let tnr = neg.iter().filter(|s| **s < 0.5).count() as f64 / neg.len() as f64;
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    (acc, Some((tpr + tnr) / 2.0), Some(wins / (pos.len() * neg.len()) as f64))
}

fn implementation_metrics(scores: &[f64], labels: &[u8]) -> (f64, Option<f64>, Option<f64>) {
    let cm = confusion(scores, labels, DEFAULT_THRESHOLD).unwrap();
    (accuracy(&cm).unwrap(), balanced_accuracy(&cm).ok(), auc_roc(scores, labels).ok())
}

/// Every multiset of `n` (score, label) cells out of the 10 possible ones,
/// as non-decreasing cell-index sequences.
fn multisets(n: usize, cells: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == n {
        out.push(cur.clone());
        return;
    }
    for c in start..cells {
        cur.push(c);
        multisets(n, cells, c, cur, out);
        cur.pop();
    }
}

#[test]
fn criterion_1_metric_oracle() {
    let _g = serial();
    let t = Instant::now();
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    let mut check = |scores: &[f64], labels: &[u8]| {
        checked += 1;
        if oracle_metrics(scores, labels) != implementation_metrics(scores, labels) {
            mismatches += 1;
        }
    };
    // every ordered assignment up to n = 5
    for n in 1..=5usize {
        for code in 0..(10usize.pow(n as u32)) {
            let mut c = code;
            let (mut s, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for _ in 0..n {
                s.push(GRID[c % 10 / 2]);
                y.push((c % 2) as u8);
                c /= 10;
            }
            check(&s, &y);
        }
    }
    // every multiset up to n = 8, in a shuffled order; all three metrics are order-free
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 6..=8 {
        let mut sets = Vec::new();
        multisets(n, 10, 0, &mut Vec::new(), &mut sets);
        for mut cells in sets {
            for i in (1..cells.len()).rev() {
                cells.swap(i, rng.random_range(0..=i));
            }
            let s: Vec<f64> = cells.iter().map(|c| GRID[c / 2]).collect();
            let y: Vec<u8> = cells.iter().map(|c| (c % 2) as u8).collect();
            check(&s, &y);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(1, "metric oracle equivalence", mismatches == 0 && secs < 60.0, &format!("{checked} assignments, {mismatches} mismatches, {secs:.1}s"));
}

// ---------------------------------------------------------------- 2

fn oracle_pair_losses(v: &Array2<f64>, yv: &[u8], a: &Array2<f64>, ya: &[u8], m: f64) -> (f64, f64) {
    let (mut sa, mut sep) = (0.0, 0.0);
    for cv in 0..2u8 {
        for ca in 0..2u8 {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in 0..v.nrows() {
                for j in 0..a.nrows() {
                    if yv[i] != cv || ya[j] != ca {
                        continue;
                    }
                    let d = (&v.row(i) - &a.row(j)).mapv(|x| x * x).sum().sqrt();
                    count += 1;
                    sum += if cv == ca { d * d / 2.0 } else { (m - d).max(0.0).powi(2) / 2.0 };
                }
            }
            if count > 0 {
                if cv == ca {
                    sa += sum / count as f64;
                } else {
                    sep += sum / count as f64;
                }
            }
        }
    }
    (sa, sep)
}

fn ccsa_fd_rel_error() -> (f64, usize) {
    let cfg = SyntheticConfig { n_samples: 40, seed: 3, ..Default::default() };
    let samples = generate_synthetic(&cfg).unwrap();
    let batch = AlignmentBatch::from_samples(&samples[..12]);
    let enc = build_model(&ArchitectureSpec::new(vec![1, 80, 80], vec![conv(2, 5, 5, 0), act("tanh"), maxpool(4), flatten(), dense(8), act("tanh")]), 5).unwrap();
    let params = enc.param_count();
    let cls = build_model(&ArchitectureSpec::new(vec![8], vec![dense(1), act("sigmoid")]), 6).unwrap();
    let tc = TrainConfig { weight_decay: 0.0, ..Default::default() };
    let mut t = AlignmentTrainer::new(enc, cls, &tc).unwrap();
    let theta = t.encoder().flat_params();
    let (_, g) = t.ccsa_gradient(&batch).unwrap();
    let h = 1e-6;
    let mut fd = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] = theta[i] + h;
        t.set_encoder_params(&p).unwrap();
        let up = t.ccsa_gradient(&batch).unwrap().0;
        p[i] = theta[i] - h;
        t.set_encoder_params(&p).unwrap();
        let down = t.ccsa_gradient(&batch).unwrap().0;
        fd[i] = (up - down) / (2.0 * h);
    }
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    (norm(&diff) / norm(&g).max(norm(&fd)), params)
}

#[test]
fn criterion_2_losses_and_gradients() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut identities = true;
    for _ in 0..200 {
        let (sa, s, lc): (f64, f64, f64) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        identities &= ccsa_loss(sa, s, lc, 1.0).unwrap() == lc;
        identities &= ccsa_loss(sa, s, lc, 0.0).unwrap() == sa + s;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nv, na, d) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..6));
        let v = Array2::from_shape_fn((nv, d), |_| rng.random_range(-1.0..1.0));
        let a = Array2::from_shape_fn((na, d), |_| rng.random_range(-1.0..1.0));
        let yv: Vec<u8> = (0..nv).map(|_| rng.random_range(0..2)).collect();
        let ya: Vec<u8> = (0..na).map(|_| rng.random_range(0..2)).collect();
        let m = rng.random_range(0.5..2.0);
        let ev = EncodedBatch::new(v.clone(), yv.clone(), Modality::Visual).unwrap();
        let ea = EncodedBatch::new(a.clone(), ya.clone(), Modality::Audio).unwrap();
        let (osa, osep) = oracle_pair_losses(&v, &yv, &a, &ya, m);
        worst = worst.max((semantic_alignment_loss(&ev, &ea).unwrap() - osa).abs());
        worst = worst.max((separation_loss(&ev, &ea, m).unwrap() - osep).abs());
    }
    let (rel, params) = ccsa_fd_rel_error();
    let secs = t.elapsed().as_secs_f64();
    let ok = identities && worst <= 1e-10 && rel < 1e-4 && params <= 500 && secs < 120.0;
    verdict(2, "loss identities and gradients", ok, &format!("identities {identities}, pair-loss max err {worst:.1e}, grad rel err {rel:.1e} on {params} params, {secs:.1}s"));
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_mmd_properties() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut self_max, mut sym_max, mut lin_max): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let (nx, ny, d) = (rng.random_range(1..30), rng.random_range(1..30), rng.random_range(1..8));
        let x = Array2::from_shape_fn((nx, d), |_| rng.random_range(-3.0..3.0));
        let y = Array2::from_shape_fn((ny, d), |_| rng.random_range(-3.0..3.0));
        for k in [Kernel::default(), Kernel::Linear] {
            self_max = self_max.max(mmd(x.view(), x.view(), k).unwrap());
            sym_max = sym_max.max((mmd(x.view(), y.view(), k).unwrap() - mmd(y.view(), x.view(), k).unwrap()).abs());
        }
        let means = (0..d).map(|j| x.column(j).mean().unwrap() - y.column(j).mean().unwrap()).map(|v| v * v).sum::<f64>().sqrt();
        lin_max = lin_max.max((mmd(x.view(), y.view(), Kernel::Linear).unwrap() - means).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = self_max <= 1e-12 && sym_max <= 1e-12 && lin_max <= 1e-9 && secs < 60.0;
    verdict(3, "mmd properties", ok, &format!("mmd(X,X) max {self_max:.1e}, asymmetry {sym_max:.1e}, linear err {lin_max:.1e}, {secs:.1}s"));
}

// ---------------------------------------------------------------- 4

fn tone_peak_row(hz: f64) -> usize {
    let samples = (0..SNIPPET_LEN).map(|i| 0.5 * (std::f64::consts::TAU * hz * i as f64 / SAMPLE_RATE as f64).sin()).collect();
    let spec = make_spectrogram(&AudioSnippet::new(samples).unwrap());
    let energy: Vec<f64> = spec.pixels.rows().into_iter().map(|r| r.sum()).collect();
    (0..energy.len()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap()
}

#[test]
fn criterion_4_spectrogram_physics() {
    let _g = serial();
    let t = Instant::now();
    let (r1, r2) = (tone_peak_row(5512.5), tone_peak_row(11025.0));
    let (lo, _) = Spectrogram::row_band(0);
    let (_, hi) = Spectrogram::row_band(79);
    let silence = make_spectrogram(&AudioSnippet::new(vec![0.0; SNIPPET_LEN]).unwrap());
    let ok = r1.abs_diff(20) <= 1
        && r2.abs_diff(40) <= 1
        && silence.pixels.dim() == (80, 80)
        && (BIN_HZ - 275.0).abs() < 1.0
        && lo == 0.0
        && hi >= 22_000.0
        && t.elapsed().as_secs_f64() < 60.0;
    verdict(4, "spectrogram physics", ok, &format!("peaks at rows {r1} and {r2}, {BIN_HZ} Hz per row, 80 rows cover {lo}..{hi} Hz"));
}

// ---------------------------------------------------------------- 5 and 6

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct SeedRun {
    sa_accuracy: f64,
    visual_only_accuracy: f64,
    first: cmkt::diagnostics::GroupMmds,
    last: cmkt::diagnostics::GroupMmds,
}

struct TransferRuns {
    runs: Vec<SeedRun>,
    seconds: f64,
}

fn synthetic_split(seed: u64, nuisance: f64) -> DatasetSplit {
    let cfg = SyntheticConfig { n_samples: 2000, seed, visual_nuisance_strength: nuisance, ..Default::default() };
    split_dataset(generate_synthetic(&cfg).unwrap(), (8, 1, 1), seed).unwrap()
}

fn transfer_runs() -> &'static TransferRuns {
    static RUNS: OnceLock<TransferRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let runs = SEEDS
            .iter()
            .map(|&seed| {
                let split = synthetic_split(seed, 0.0);
                let o = TrainOverrides { seed: Some(seed), snapshot_every: Some(1), ..Default::default() };
                let train = |m: Method| {
                    let plan = MethodPlan::builtin(m, Direction::A2v, Scale::Compact, &o).unwrap();
                    train_method(&plan, &split, &SnapshotOptions::default()).unwrap()
                };
                let sa = train(Method::SemanticAlignment);
                let vo = train(Method::VisualOnly);
                assert_eq!(sa.model.input_modalities(), [Modality::Visual]);
                let (first, last) = (sa.snapshots.first().expect("snapshots"), sa.snapshots.last().expect("snapshots"));
                SeedRun {
                    sa_accuracy: evaluate_on(&sa.model, &split.test).unwrap().accuracy,
                    visual_only_accuracy: evaluate_on(&vo.model, &split.test).unwrap().accuracy,
                    first: first.mmds,
                    last: last.mmds,
                }
            })
            .collect();
        TransferRuns { runs, seconds: t.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion_5_synthetic_transfer_benefit() {
    let _g = serial();
    let r = transfer_runs();
    let n = r.runs.len() as f64;
    let sa = r.runs.iter().map(|s| s.sa_accuracy).sum::<f64>() / n;
    let vo = r.runs.iter().map(|s| s.visual_only_accuracy).sum::<f64>() / n;
    let ok = sa >= vo && sa >= 0.95 && r.seconds < 15.0 * 60.0;
    verdict(5, "synthetic transfer benefit", ok, &format!("mean test accuracy on visual: alignment {sa:.4}, visual-only {vo:.4}, {:.0}s", r.seconds));
}

#[test]
fn criterion_6_encoded_space_trend() {
    let _g = serial();
    let r = transfer_runs();
    let good = r
        .runs
        .iter()
        .filter(|s| {
            s.last.d_va_defect_free < s.first.d_va_defect_free
                && s.last.d_va_defective < s.first.d_va_defective
                && s.last.d_a > s.first.d_a
                && s.last.d_v > s.first.d_v
        })
        .count();
    let detail: Vec<String> = r
        .runs
        .iter()
        .map(|s| {
            format!(
                "dVA {:.3}/{:.3}->{:.3}/{:.3} dA {:.3}->{:.3} dV {:.3}->{:.3}",
                s.first.d_va_defect_free, s.first.d_va_defective, s.last.d_va_defect_free, s.last.d_va_defective, s.first.d_a, s.last.d_a, s.first.d_v, s.last.d_v
            )
        })
        .collect();
    verdict(6, "encoded-space trend", good >= 4, &format!("{good} of {} seeds; {}", r.runs.len(), detail.join("; ")));
}

// ---------------------------------------------------------------- 7

/// One-sided sign test: `P(X >= wins)` for `X ~ Binomial(trials, 1/2)`.
fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    let mut c = 1.0f64; // C(trials, k), built up iteratively
    for k in 0..=trials {
        if k > 0 {
            c = c * (trials - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            p += c;
        }
    }
    p / 2f64.powi(trials as i32)
}

#[test]
fn criterion_7_denoising_audit() {
    let _g = serial();
    let t = Instant::now();
    let split = synthetic_split(0, 1.0);
    let test = &split.test[..60];
    let mask = synthetic_nozzle_mask();
    let audit = AuditConfig { lime: LimeConfig::default(), ..Default::default() };
    let o = TrainOverrides { seed: Some(0), ..Default::default() };
    let counts: Vec<(Vec<usize>, f64)> = [Method::VisualOnly, Method::SemanticAlignment]
        .into_iter()
        .map(|m| {
            let plan = MethodPlan::builtin(m, Direction::A2v, Scale::Compact, &o).unwrap();
            let out = train_method(&plan, &split, &SnapshotOptions::default()).unwrap();
            let predict = out.model.image_predictor(Modality::Visual).unwrap();
            let explained = explain_samples(&predict, test, Modality::Visual, &audit).unwrap();
            let st = intersection_stats(&explained, &mask).unwrap();
            (st.counts, st.mean)
        })
        .collect();
    let ((vo, vo_mean), (sa, sa_mean)) = (&counts[0], &counts[1]);
    let lower = sa.iter().zip(vo).filter(|(s, v)| s < v).count();
    let higher = sa.iter().zip(vo).filter(|(s, v)| s > v).count();
    let p = sign_test_p(lower, lower + higher);
    let secs = t.elapsed().as_secs_f64();
    let ok = sa_mean < vo_mean && p < 0.05 && test.len() >= 50 && secs < 20.0 * 60.0;
    verdict(
        7,
        "denoising audit",
        ok,
        &format!("mean ring intersection: alignment {sa_mean:.1}, visual-only {vo_mean:.1}; alignment lower on {lower}, higher on {higher} of {} samples, p = {p:.3}, {secs:.0}s", test.len()),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_split_arithmetic() {
    let _g = serial();
    let s = split_dataset((0..4345).collect::<Vec<usize>>(), (8, 1, 1), 0).unwrap();
    let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
    all.sort_unstable();
    let ok = s.sizes() == (3476, 434, 435) && all == (0..4345).collect::<Vec<_>>();
    verdict(8, "split arithmetic", ok, &format!("sizes {:?}", s.sizes()));
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_runtime_ordering() {
    let _g = serial();
    let split = synthetic_split(0, 0.0);
    let o = TrainOverrides::default();
    let runtime = |m: Method| {
        let plan = MethodPlan::builtin(m, Direction::A2v, Scale::Compact, &o).unwrap();
        median_runtime(&untrained_model(&plan).unwrap(), &split.validation, 5).unwrap()
    };
    let sa = runtime(Method::SemanticAlignment);
    let single = runtime(Method::VisualOnly);
    let fusion: Vec<(Method, f64)> = [Method::FusionData, Method::FusionFeature, Method::FusionDecision].into_iter().map(|m| (m, runtime(m))).collect();
    let ok = fusion.iter().all(|(_, f)| sa < *f) && sa <= 1.5 * single;
    let fusion_s: Vec<String> = fusion.iter().map(|(m, f)| format!("{m} {:.1}ms", f * 1e3)).collect();
    verdict(9, "runtime ordering", ok, &format!("alignment {:.1}ms, visual-only {:.1}ms, {}", sa * 1e3, single * 1e3, fusion_s.join(", ")));
}

// ---------------------------------------------------------------- 10

/// Needs the public dataset in raw layout under `CMKT_DATASET_DIR` and an
/// accelerator-class time budget.
#[test]
#[ignore]
fn criterion_10_full_reproduction() {
    let _g = serial();
    let dir = std::env::var("CMKT_DATASET_DIR").expect("set CMKT_DATASET_DIR to the raw dataset directory");
    let split = split_dataset(load_raw_dataset(std::path::Path::new(&dir)).unwrap(), (8, 1, 1), 0).unwrap();
    let o = TrainOverrides::default();
    let acc = |m: Method| {
        let plan = MethodPlan::builtin(m, Direction::A2v, Scale::Full, &o).unwrap();
        let out = train_method(&plan, &split, &SnapshotOptions::default()).unwrap();
        evaluate_on(&out.model, &split.test).unwrap().accuracy
    };
    let (sa, vo) = (acc(Method::SemanticAlignment), acc(Method::VisualOnly));
    verdict(10, "full reproduction", sa >= 0.965 && vo >= 0.955, &format!("alignment {sa:.4}, visual-only {vo:.4}"));
}

#[test]
fn sign_test_reference_values() {
    // 5 of 5 heads: 1/32; 0 wins: certain
    assert!((sign_test_p(5, 5) - 1.0 / 32.0).abs() < 1e-15);
    assert_eq!(sign_test_p(0, 7), 1.0);
    assert!((sign_test_p(3, 4) - 5.0 / 16.0).abs() < 1e-15);
}
