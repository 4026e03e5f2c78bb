//! End-to-end acceptance checks, one test per criterion.
//!
//! Criteria 1-5 and 8-10 are formula-level: gradients against central finite
//! differences, closed forms, the pairwise-term bound, direction symmetry,
//! %mono consistency, margin semantics, metric hand cases, and separator
//! handling. Criteria 6, 7, 11 and 12 train the stock tiny transformer on
//! generated tasks and assert the qualitative trends: the loss crushes
//! L_MONO on a monotone task without costing accuracy, restricting the loss
//! to one head separates that head from the rest, the loss does not help a
//! task that needs occasional reordering, and dev L_MONO falls as lambda
//! grows. Training runs are shared between criteria through a process-wide
//! cache, so the suite trains each (task, lambda, mask, seed) setting once.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use monoattn::attention::AttentionWeights;
use monoattn::corpus::{gen_cipher, gen_reorder, TaskData};
use monoattn::metrics::{edit_distance, eval_metric, mfs, EvalPair};
use monoattn::model::{positional_encoding, ModelConfig, PosMode};
use monoattn::monoloss::{
    abar_path, hinge_terms, mono_loss, percent_mono, report_batch, score_batch, Direction,
    HeadMask, HeadReport, MonoConfig, SeqScope,
};
use monoattn::ndgrad::{Array, Graph, NodeId};
use monoattn::trainer::{decode_corpus, decoded_mono_report, eval_pairs, TrainConfig, Trainer};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INC: Direction = Direction::Increasing;
const DEC: Direction = Direction::Decreasing;

fn mono_config(delta: f64) -> MonoConfig {
    MonoConfig {
        lambda: 0.0,
        delta,
        direction: INC,
        head_mask: HeadMask::All,
        separator_masking: false,
    }
}

/// Full-row scope (no separator) over a y-by-x weight matrix.
fn full_scope(x: usize, y: usize) -> SeqScope {
    SeqScope {
        src_len: x,
        tgt_len: y,
        sep: None,
    }
}

/// Wraps a weight matrix as a single scored mechanism. The node id only has
/// to be valid inside `g`; reporting never touches the graph.
fn head_of(g: &mut Graph, node: NodeId, weights: Array) -> AttentionWeights {
    let x = weights.ncols();
    let y = weights.nrows();
    let _ = g;
    AttentionWeights {
        layer: 0,
        head: 0,
        node,
        weights,
        src_mask: vec![true; x],
        tgt_mask: vec![true; y],
    }
}

// ---------------------------------------------------------------------------
// criterion 1: analytic gradient through row-softmax vs finite differences
// ---------------------------------------------------------------------------

/// lambda * L_mono of softmax(energies), built exactly like the training
/// path: energies leaf -> row softmax -> batch loss node -> scale.
fn softmax_mono_value(energies: &Array, delta: f64, lambda: f64) -> f64 {
    let scope = full_scope(energies.ncols(), energies.nrows());
    let mut g = Graph::new();
    let leaf = g.leaf(energies.clone()).unwrap();
    let w = g.row_softmax(leaf).unwrap();
    let weights = g.value(w).clone();
    let aw = head_of(&mut g, w, weights);
    let (loss, _) = score_batch(&mut g, &[vec![aw]], &[scope], &mono_config(delta)).unwrap();
    let scaled = g.scale(loss, lambda).unwrap();
    g.value(scaled).scalar_value().unwrap()
}

#[test]
fn criterion_01_softmax_composed_gradient_matches_central_differences() {
    const EPS: f64 = 1e-5;
    const KINK_GUARD: f64 = 1e-7;
    const LAMBDA: f64 = 0.7;
    let deltas = [0.0, 0.5, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let started = Instant::now();
    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    let mut trial = 0usize;
    while checked < 120 {
        let delta = deltas[trial % deltas.len()];
        trial += 1;
        let x = rng.random_range(2..=10usize);
        let y = rng.random_range(2..=8usize);
        let data: Vec<f64> = (0..x * y).map(|_| rng.random_range(-2.0..2.0)).collect();
        let energies = Array::new(vec![y, x], data).unwrap();
        let scope = full_scope(x, y);

        // One graph gives both the analytic gradient and the kink guard.
        let mut g = Graph::new();
        let leaf = g.leaf(energies.clone()).unwrap();
        let w = g.row_softmax(leaf).unwrap();
        let weights = g.value(w).clone();
        let path = abar_path(&weights, &scope, false).unwrap();
        let margin = delta * x as f64 / y as f64;
        let near_kink = (0..y - 1).any(|k| (path[k] - path[k + 1] + margin).abs() < KINK_GUARD);
        if near_kink {
            continue;
        }
        let aw = head_of(&mut g, w, weights);
        let (loss, _) = score_batch(&mut g, &[vec![aw]], &[scope], &mono_config(delta)).unwrap();
        let scaled = g.scale(loss, LAMBDA).unwrap();
        let grads = g.backward(scaled).unwrap();
        let analytic = grads.get(leaf).clone();

        for i in 0..y {
            for j in 0..x {
                let mut plus = energies.clone();
                plus.set(i, j, plus.at(i, j) + EPS);
                let mut minus = energies.clone();
                minus.set(i, j, minus.at(i, j) - EPS);
                let fd = (softmax_mono_value(&plus, delta, LAMBDA)
                    - softmax_mono_value(&minus, delta, LAMBDA))
                    / (2.0 * EPS);
                let a = analytic.at(i, j);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "criterion 1 FAIL: gradient mismatch at ({}, {}) of a {}x{} instance, \
                     delta {}: analytic {:e} vs finite difference {:e} (rel {:e})",
                    i,
                    j,
                    y,
                    x,
                    delta,
                    a,
                    fd,
                    rel
                );
                max_rel = max_rel.max(rel);
            }
        }
        checked += 1;
    }
    let elapsed = started.elapsed();
    assert!(checked >= 100, "criterion 1 FAIL: only {} instances", checked);
    assert!(
        elapsed < Duration::from_secs(10),
        "criterion 1 FAIL: gradient check took {:?}",
        elapsed
    );
    println!(
        "criterion 1 PASS: {} softmax-composed instances, max relative error {:.3e}, {:?}",
        checked, max_rel, elapsed
    );
}

// ---------------------------------------------------------------------------
// criterion 2: closed forms
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_closed_form_losses_reproduce_exactly() {
    const TOL: f64 = 1e-12;
    let weakly_increasing = mono_loss(&[1.0, 1.5, 1.5, 2.75], 4, 0.0, INC).unwrap();
    assert!(
        weakly_increasing.abs() <= TOL,
        "criterion 2 FAIL: weakly increasing path scored {}",
        weakly_increasing
    );
    let single_drop = mono_loss(&[2.0, 1.0], 4, 0.0, INC).unwrap();
    assert!(
        (single_drop - 0.25).abs() <= TOL,
        "criterion 2 FAIL: [2,1] with |X|=4 scored {}, want 0.25",
        single_drop
    );
    let diagonal = mono_loss(&[1.0, 2.0, 3.0, 4.0, 5.0], 5, 1.0, INC).unwrap();
    assert!(
        diagonal.abs() <= TOL,
        "criterion 2 FAIL: diagonal path at delta=1 scored {}",
        diagonal
    );
    let constant = mono_loss(&[2.0, 2.0, 2.0], 5, 1.0, INC).unwrap();
    assert!(
        (constant - 2.0 / 3.0).abs() <= TOL,
        "criterion 2 FAIL: constant path at delta=1, |X|=5, |Y|=3 scored {}, want 2/3",
        constant
    );
    println!("criterion 2 PASS: all four closed-form losses exact to 1e-12");
}

// ---------------------------------------------------------------------------
// criterion 3: pairwise-term bound
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_every_pairwise_term_respects_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(903);
    let mut terms_seen = 0usize;
    for instance in 0..100_000usize {
        let x = rng.random_range(2..=200usize);
        let y = rng.random_range(2..=8usize);
        let delta = rng.random_range(0.0..=1.0);
        let positions: Vec<f64> = if instance % 100 == 0 {
            // Extremal sawtooth: full-range drops hit the bound itself.
            (0..y)
                .map(|i| if i % 2 == 0 { x as f64 } else { 1.0 })
                .collect()
        } else {
            (0..y).map(|_| rng.random_range(1.0..=x as f64)).collect()
        };
        let bound = (x as f64 - 1.0) / x as f64 + delta / y as f64;
        for (k, term) in hinge_terms(&positions, x, delta, INC)
            .unwrap()
            .iter()
            .enumerate()
        {
            assert!(
                *term <= bound + 1e-12,
                "criterion 3 FAIL: term {} at pair {} exceeds bound {} (|X|={}, |Y|={}, delta={})",
                term,
                k,
                bound,
                x,
                y,
                delta
            );
            terms_seen += 1;
        }
    }
    println!(
        "criterion 3 PASS: {} pairwise terms over 100000 instances all within the bound",
        terms_seen
    );
}

// ---------------------------------------------------------------------------
// criterion 4: direction symmetry
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_decreasing_loss_equals_increasing_loss_of_reversed_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(904);
    for _ in 0..10_000usize {
        let x = rng.random_range(1..=50usize);
        let y = rng.random_range(1..=12usize);
        let delta = rng.random_range(0.0..=1.0);
        let positions: Vec<f64> = (0..y).map(|_| rng.random_range(1.0..=x as f64)).collect();
        let reversed: Vec<f64> = positions.iter().rev().copied().collect();
        let inc = mono_loss(&positions, x, delta, INC).unwrap();
        let dec = mono_loss(&reversed, x, delta, DEC).unwrap();
        assert!(
            inc.to_bits() == dec.to_bits(),
            "criterion 4 FAIL: increasing loss {} != decreasing loss of reversed path {}",
            inc,
            dec
        );
    }
    println!("criterion 4 PASS: 10000 random paths, bitwise direction symmetry");
}

// ---------------------------------------------------------------------------
// criterion 5: %mono equals the fraction of zero hinge terms
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_percent_mono_is_the_zero_term_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(905);
    for _ in 0..10_000usize {
        let x = rng.random_range(1..=40usize);
        let y = rng.random_range(1..=12usize);
        let delta = rng.random_range(0.0..=1.0);
        // Mix rounded and raw positions so exact zero terms actually occur.
        let positions: Vec<f64> = (0..y)
            .map(|_| {
                let p = rng.random_range(1.0..=x as f64);
                if rng.random_range(0..2) == 0 {
                    p.round().clamp(1.0, x as f64)
                } else {
                    p
                }
            })
            .collect();
        let terms = hinge_terms(&positions, x, delta, INC).unwrap();
        let expected = if terms.is_empty() {
            1.0
        } else {
            terms.iter().filter(|&&t| t == 0.0).count() as f64 / terms.len() as f64
        };
        let pct = percent_mono(&positions, x, y, delta);
        assert!(
            pct.to_bits() == expected.to_bits(),
            "criterion 5 FAIL: percent_mono {} vs zero-term fraction {} (|X|={}, |Y|={})",
            pct,
            expected,
            x,
            y
        );
    }
    println!("criterion 5 PASS: 10000 random instances, %mono equals the zero-term fraction");
}

// ---------------------------------------------------------------------------
// criterion 6/7/11/12: shared training runs
// ---------------------------------------------------------------------------

const RUN_BUDGET: Duration = Duration::from_secs(300);
const CIPHER_DATA_SEED: u64 = 11;
const REORDER_DATA_SEED: u64 = 13;

#[derive(Clone)]
struct RunOutcome {
    test_acc: f64,
    test_l_mono: f64,
    test_pct_mono: f64,
    test_per_head: Vec<HeadReport>,
    dev_l_mono: f64,
    fit_seconds: f64,
}

fn task_data(task: &str) -> TaskData {
    match task {
        "cipher" => gen_cipher((2000, 200, 200), 20, (5, 15), CIPHER_DATA_SEED).unwrap(),
        "reorder" => gen_reorder((2000, 200, 200), 0.3, 20, (5, 15), REORDER_DATA_SEED).unwrap(),
        other => panic!("unknown task {}", other),
    }
}

/// Trains the stock tiny transformer on the named task and evaluates the
/// best checkpoint on the test split. Results are cached process-wide and
/// the cache lock is held across training, which also serializes the heavy
/// runs when the harness runs criteria in parallel.
fn trained(task: &'static str, lambda: f64, mask: &HeadMask, seed: u64) -> RunOutcome {
    static CACHE: OnceLock<Mutex<HashMap<String, RunOutcome>>> = OnceLock::new();
    let key = format!("{}|{}|{:?}|{}", task, lambda.to_bits(), mask, seed);
    let mut cache = CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .unwrap();
    if let Some(hit) = cache.get(&key) {
        return hit.clone();
    }

    let data = task_data(task);
    let mut model = ModelConfig::new(data.train.src_vocab.len(), data.train.tgt_vocab.len());
    model.seed = seed;
    let mut config = TrainConfig::new(model);
    config.seed = seed;
    config.mono.lambda = lambda;
    config.mono.delta = 0.0;
    config.mono.head_mask = mask.clone();

    let started = Instant::now();
    let mut trainer = Trainer::new(config).unwrap();
    let fit = trainer.fit(&data.train, &data.dev).unwrap();
    let fit_seconds = started.elapsed().as_secs_f64();

    let decoded = decode_corpus(&fit.best, &data.test).unwrap();
    let pairs = eval_pairs(&data.test, &decoded).unwrap();
    let test_acc = eval_metric("acc", &pairs).unwrap();
    let report = decoded_mono_report(&decoded, &mono_config(0.0)).unwrap();
    let outcome = RunOutcome {
        test_acc,
        test_l_mono: report.l_mono,
        test_pct_mono: report.pct_mono,
        test_per_head: report.per_head,
        dev_l_mono: fit.best_row.dev_mono,
        fit_seconds,
    };
    println!(
        "run {} lambda={} mask={:?} seed={}: test acc {:.1}, test L_mono {:.5}, \
         test %mono {:.3}, {:.0} s",
        task, lambda, mask, seed, test_acc, report.l_mono, report.pct_mono, fit_seconds
    );
    cache.insert(key, outcome.clone());
    outcome
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

const SEEDS: [u64; 3] = [1, 2, 3];

#[test]
fn criterion_06_loss_crushes_l_mono_on_cipher_without_costing_accuracy() {
    let base: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&s| trained("cipher", 0.0, &HeadMask::All, s))
        .collect();
    let reg: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&s| trained("cipher", 0.1, &HeadMask::All, s))
        .collect();
    for run in base.iter().chain(reg.iter()) {
        assert!(
            run.fit_seconds <= RUN_BUDGET.as_secs_f64(),
            "criterion 6 FAIL: a run took {:.0} s, budget {} s",
            run.fit_seconds,
            RUN_BUDGET.as_secs()
        );
    }
    let base_l = mean(base.iter().map(|r| r.test_l_mono));
    let reg_l = mean(reg.iter().map(|r| r.test_l_mono));
    let base_pct = mean(base.iter().map(|r| r.test_pct_mono));
    let reg_pct = mean(reg.iter().map(|r| r.test_pct_mono));
    let base_acc = mean(base.iter().map(|r| r.test_acc));
    let reg_acc = mean(reg.iter().map(|r| r.test_acc));
    assert!(
        reg_l <= 0.1 * base_l,
        "criterion 6 FAIL: mean test L_mono {} not <= 0.1 x baseline {}",
        reg_l,
        base_l
    );
    assert!(
        reg_pct >= 0.95,
        "criterion 6 FAIL: mean test %mono {:.4} below 0.95 (baseline {:.4})",
        reg_pct,
        base_pct
    );
    assert!(
        (reg_acc - base_acc).abs() <= 5.0,
        "criterion 6 FAIL: accuracy {:.2} vs baseline {:.2} differs by more than 5 points",
        reg_acc,
        base_acc
    );
    println!(
        "criterion 6 PASS: cipher over seeds {:?}: L_mono {:.5} -> {:.5} ({:.1}x down), \
         %mono {:.3} -> {:.3}, accuracy {:.1} -> {:.1}",
        SEEDS,
        base_l,
        reg_l,
        base_l / reg_l.max(1e-300),
        base_pct,
        reg_pct,
        base_acc,
        reg_acc
    );
}

#[test]
fn criterion_07_single_scored_head_separates_from_unconstrained_heads() {
    let mask = HeadMask::Subset(vec![(0, 1)]);
    let mut scored = Vec::new();
    let mut others = Vec::new();
    for &seed in &SEEDS {
        let run = trained("cipher", 0.1, &mask, seed);
        let head = |l: usize, h: usize| -> f64 {
            run.test_per_head
                .iter()
                .find(|r| r.layer == l && r.head == h)
                .unwrap_or_else(|| panic!("missing head {}:{} in report", l, h))
                .l_mono
        };
        scored.push(head(0, 1));
        others.push(mean([head(0, 0), head(0, 2), head(0, 3)]));
    }
    let scored_mean = mean(scored.iter().copied());
    let others_mean = mean(others.iter().copied());
    assert!(
        scored_mean <= 0.1 * others_mean,
        "criterion 7 FAIL: scored head mean L_mono {} not <= 0.1 x unconstrained mean {}",
        scored_mean,
        others_mean
    );
    println!(
        "criterion 7 PASS: scored head L_mono {:.6} vs unconstrained heads {:.6} ({:.1}x apart)",
        scored_mean,
        others_mean,
        others_mean / scored_mean.max(1e-300)
    );
}

#[test]
fn criterion_11_loss_does_not_help_when_reordering_is_required() {
    let base: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&s| trained("reorder", 0.0, &HeadMask::All, s))
        .collect();
    let reg: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&s| trained("reorder", 0.1, &HeadMask::All, s))
        .collect();
    let base_acc = mean(base.iter().map(|r| r.test_acc));
    let reg_acc = mean(reg.iter().map(|r| r.test_acc));
    let base_l = mean(base.iter().map(|r| r.test_l_mono));
    let reg_l = mean(reg.iter().map(|r| r.test_l_mono));
    assert!(
        reg_acc <= base_acc + 2.0,
        "criterion 11 FAIL: regularized accuracy {:.2} exceeds baseline {:.2} by more than 2",
        reg_acc,
        base_acc
    );
    assert!(
        reg_l < base_l,
        "criterion 11 FAIL: regularized L_mono {} not below baseline {}",
        reg_l,
        base_l
    );
    println!(
        "criterion 11 PASS: reorder accuracy {:.1} -> {:.1} (no gain beyond noise), \
         L_mono {:.5} -> {:.5}",
        base_acc, reg_acc, base_l, reg_l
    );
}

#[test]
fn criterion_12_dev_l_mono_is_non_increasing_in_lambda() {
    let lambdas = [0.0, 0.001, 0.01, 0.1];
    let runs: Vec<RunOutcome> = lambdas
        .iter()
        .map(|&l| trained("cipher", l, &HeadMask::All, 1))
        .collect();
    let at_zero = runs[0].dev_l_mono;
    let tolerance = 0.05 * at_zero;
    for i in 1..runs.len() {
        assert!(
            runs[i].dev_l_mono <= runs[i - 1].dev_l_mono + tolerance,
            "criterion 12 FAIL: dev L_mono rises from {} (lambda {}) to {} (lambda {}), \
             tolerance {}",
            runs[i - 1].dev_l_mono,
            lambdas[i - 1],
            runs[i].dev_l_mono,
            lambdas[i],
            tolerance
        );
    }
    let shown: Vec<String> = lambdas
        .iter()
        .zip(&runs)
        .map(|(l, r)| format!("{}:{:.5}", l, r.dev_l_mono))
        .collect();
    println!(
        "criterion 12 PASS: dev L_mono non-increasing over lambda ({})",
        shown.join(", ")
    );
}

// ---------------------------------------------------------------------------
// criterion 8: margin semantics on hand-built attention
// ---------------------------------------------------------------------------

fn one_hot_rows(cols: usize, hot: &[usize]) -> Array {
    let rows: Vec<Vec<f64>> = hot
        .iter()
        .map(|&j| {
            let mut row = vec![0.0; cols];
            row[j] = 1.0;
            row
        })
        .collect();
    Array::from_rows(&rows).unwrap()
}

fn report_single(weights: Array, scope: SeqScope, delta: f64) -> f64 {
    let mut g = Graph::new();
    let node = g.scalar_leaf(0.0).unwrap();
    let aw = head_of(&mut g, node, weights);
    let config = mono_config(delta);
    report_batch(&[vec![aw]], &[scope], &config).unwrap().l_mono
}

#[test]
fn criterion_08_diagonal_meets_the_full_margin_and_constant_paths_fail_it() {
    let n = 6;
    let diagonal = one_hot_rows(n, &(0..n).collect::<Vec<_>>());
    let diag_loss = report_single(diagonal, full_scope(n, n), 1.0);
    assert!(
        diag_loss == 0.0,
        "criterion 8 FAIL: exact diagonal path at delta=1 scored {}",
        diag_loss
    );
    let constant = one_hot_rows(5, &[2, 2, 2, 2]);
    for delta in [1e-6, 0.25, 1.0] {
        let loss = report_single(constant.clone(), full_scope(5, 4), delta);
        assert!(
            loss > 0.0,
            "criterion 8 FAIL: constant path at delta={} scored {}, want > 0",
            delta,
            loss
        );
    }
    let at_zero = report_single(constant, full_scope(5, 4), 0.0);
    assert!(
        at_zero == 0.0,
        "criterion 8 FAIL: constant path at delta=0 scored {}",
        at_zero
    );
    println!(
        "criterion 8 PASS: diagonal scores 0 at delta=1; constant positions score > 0 \
         for delta > 0 and 0 at delta=0"
    );
}

// ---------------------------------------------------------------------------
// criterion 9: metric formulas against oracles
// ---------------------------------------------------------------------------

/// Plain recursive Levenshtein with a per-pair memo table.
fn oracle_distance(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut [[usize; 7]; 7]) -> usize {
    if i == 0 {
        return j;
    }
    if j == 0 {
        return i;
    }
    if memo[i][j] != usize::MAX {
        return memo[i][j];
    }
    let result = if a[i - 1] == b[j - 1] {
        oracle_distance(a, b, i - 1, j - 1, memo)
    } else {
        let substitute = oracle_distance(a, b, i - 1, j - 1, memo);
        let delete = oracle_distance(a, b, i - 1, j, memo);
        let insert = oracle_distance(a, b, i, j - 1, memo);
        1 + substitute.min(delete).min(insert)
    };
    memo[i][j] = result;
    result
}

fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn pair_of(candidate: &[&str], reference: &[&str]) -> EvalPair {
    EvalPair::new(
        candidate.iter().map(|s| s.to_string()).collect(),
        vec![reference.iter().map(|s| s.to_string()).collect()],
    )
    .unwrap()
}

#[test]
fn criterion_09_metric_hand_cases_and_edit_distance_oracle() {
    let identical = mfs(&[pair_of(&["a", "b", "c"], &["a", "b", "c"])]).unwrap();
    assert!(
        (identical - 100.0).abs() <= 1e-9,
        "criterion 9 FAIL: identical strings scored mfs {}",
        identical
    );
    let shorter = mfs(&[pair_of(&["a", "b"], &["a", "b", "c"])]).unwrap();
    assert!(
        (shorter - 80.0).abs() <= 1e-9,
        "criterion 9 FAIL: ab vs abc scored mfs {}, want 80",
        shorter
    );

    let strings = all_strings(b"abc", 6);
    assert_eq!(strings.len(), 1093);
    let mut compared = 0usize;
    for a in &strings {
        for b in &strings {
            let fast = edit_distance(a, b);
            let mut memo = [[usize::MAX; 7]; 7];
            let slow = oracle_distance(a, b, a.len(), b.len(), &mut memo);
            assert!(
                fast == slow,
                "criterion 9 FAIL: edit_distance({:?}, {:?}) = {} but oracle says {}",
                a,
                b,
                fast,
                slow
            );
            compared += 1;
        }
    }
    assert_eq!(compared, 1093 * 1093);
    println!(
        "criterion 9 PASS: mfs hand cases exact; edit distance matches the recursive \
         oracle on {} pairs",
        compared
    );
}

// ---------------------------------------------------------------------------
// criterion 10: separator-centered positions and separator masking
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_separator_centered_positions_and_masked_scoring() {
    let (positions, _) = positional_encoding(8, Some(4), PosMode::SepCentered, 16).unwrap();
    assert_eq!(
        positions,
        vec![-4, -3, -2, -1, 0, 1, 2, 3],
        "criterion 10 FAIL: separator-centered positions wrong"
    );

    // Source layout: columns 0..4 are tags + separator (sep at 4), columns
    // 5..8 the lemma. Attention walks forward over the lemma but backward
    // over the tags, and the tag mass dominates the raw mean position.
    let weights = Array::from_rows(&[
        vec![0.0, 0.0, 0.0, 0.8, 0.0, 0.2, 0.0, 0.0],
        vec![0.0, 0.0, 0.7, 0.0, 0.0, 0.0, 0.3, 0.0],
        vec![0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4],
    ])
    .unwrap();
    let scope = SeqScope {
        src_len: 8,
        tgt_len: 3,
        sep: Some(4),
    };

    let raw = abar_path(&weights, &scope, false).unwrap();
    assert!(
        raw[0] > raw[1] && raw[1] > raw[2],
        "criterion 10 FAIL: unmasked path {:?} should decrease",
        raw
    );
    let masked = abar_path(&weights, &scope, true).unwrap();
    assert!(
        masked.windows(2).all(|w| w[1] > w[0]),
        "criterion 10 FAIL: lemma-region path {:?} should increase",
        masked
    );

    let mut g = Graph::new();
    let node = g.scalar_leaf(0.0).unwrap();
    let aw = head_of(&mut g, node, weights);
    let mut config = mono_config(0.0);
    config.separator_masking = true;
    let masked_report = report_batch(&[vec![aw.clone()]], &[scope], &config).unwrap();
    assert!(
        masked_report.l_mono == 0.0 && masked_report.pct_mono == 1.0,
        "criterion 10 FAIL: masked scoring gave L_mono {} / %mono {}",
        masked_report.l_mono,
        masked_report.pct_mono
    );
    config.separator_masking = false;
    let raw_report = report_batch(&[vec![aw]], &[scope], &config).unwrap();
    assert!(
        raw_report.l_mono > 0.0,
        "criterion 10 FAIL: unmasked scoring of the same attention gave {}",
        raw_report.l_mono
    );
    println!(
        "criterion 10 PASS: positions [-4..3] exact; separator masking scores only the \
         lemma region (masked loss 0, unmasked {:.4})",
        raw_report.l_mono
    );
}
