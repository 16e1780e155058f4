//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use awl_core::augment::{run_refine_loop, ConfidenceMethod, MockBackend, MockReply, QueryKind};
use awl_core::autodiff::{gradient_check, Tape};
use awl_core::awl::{
    assemble_task_losses, combine, read_trajectory, stationary_sigma, AlfVariant, AwlError, DawlStrategy,
    Example, SigmaParams, TaskLosses,
};
use awl_core::data::{AugmentedInstance, Dataset, Entry, Instance, Polarity};
use awl_core::eval::{accuracy, macro_f1};
use awl_core::experiment::{run_ablation, run_variant, SINGLE_TASK, SYNTHETIC_LEARNING_RATE};
use awl_core::model::{ParamId, ToyModel, Vocabulary};
use awl_core::synthetic::{generate, SynthConfig};
use awl_core::trainer::{train, TrainConfig};

type Outcome = Result<String, String>;

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-4;
const GRAD_INSTANCES: usize = 50;
const IDENTITY_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-3;
const MIN_SYNTH_ACCURACY: f64 = 0.95;
const WEIGHT_SUM_TOL: f64 = 1e-9;

const WORDS: [&str; 6] = ["good", "bad", "soup", "slow", "cold", "tea"];
const STRATEGIES: [DawlStrategy; 4] = [
    DawlStrategy::None,
    DawlStrategy::Input,
    DawlStrategy::Output,
    DawlStrategy::InputOutput,
];

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// A small augmented batch over a vocabulary of at most ten tokens.
fn random_batch(rng: &mut ChaCha8Rng, unit_confidence: bool) -> (Vocabulary, Vec<Example>) {
    let n = rng.random_range(1..=3);
    let entries: Vec<Entry> = (0..n)
        .map(|i| {
            let mut c = || if unit_confidence { 1.0 } else { rng.random_range(0.5..=1.0) };
            let (ca, co) = (c(), c());
            AugmentedInstance {
                base: Instance::new(
                    format!("g{i}"),
                    random_text(rng, 5),
                    random_text(rng, 2),
                    Polarity::ALL[rng.random_range(0..3)],
                    rng.random_bool(0.5),
                )
                .unwrap(),
                aspect: random_text(rng, 2),
                aspect_confidence: ca,
                opinion: random_text(rng, 3),
                opinion_confidence: co,
                refine_epochs_used: 1,
                consensus_reached: true,
            }
            .into()
        })
        .collect();
    let data = Dataset::new("grad", entries).unwrap();
    let vocab = Vocabulary::build(&data);
    assert!(vocab.len() <= 10);
    let examples = data.iter().map(|e| Example::from_entry(e, &vocab, 16)).collect();
    (vocab, examples)
}

fn unwrap_awl<T>(r: Result<T, AwlError>) -> Result<T, awl_core::autodiff::AutodiffError> {
    r.map_err(|e| match e {
        AwlError::Autodiff(a) => a,
        other => panic!("{other}"),
    })
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checks = 0;
    let mut failures = Vec::new();
    for i in 0..GRAD_INSTANCES {
        let (vocab, batch) = random_batch(&mut rng, false);
        let refs: Vec<&Example> = batch.iter().collect();
        let dim = rng.random_range(2..=8);
        let model = ToyModel::new(vocab.len(), dim, rng.random()).unwrap();
        let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let sigma = SigmaParams::from_log_variances(s);
        // Every (loss, strategy) pair is visited on several instances.
        let variant = if i % 2 == 0 { AlfVariant::Alf1 } else { AlfVariant::Alf2 };
        let strategy = STRATEGIES[(i / 2) % 4];

        for p in ParamId::ALL {
            let report = gradient_check(
                |tape, x| {
                    let b = model.bind(tape).with_node(p, x);
                    let sn = sigma.bind(tape);
                    let l = unwrap_awl(assemble_task_losses(tape, &b, &refs, strategy))?;
                    unwrap_awl(combine(tape, variant, &l, sn))
                },
                model.param(p),
                FD_STEP,
                GRAD_TOL,
            );
            worst = worst.max(report.max_rel_error);
            checks += 1;
            if !report.passed {
                failures.push(format!("instance {i} {variant} {strategy} {}: {:.2e}", p.name(), report.max_rel_error));
            }
        }
        let report = gradient_check(
            |tape, x| {
                let b = model.bind(tape);
                let l = unwrap_awl(assemble_task_losses(tape, &b, &refs, strategy))?;
                unwrap_awl(combine(tape, variant, &l, x))
            },
            sigma.tensor(),
            FD_STEP,
            GRAD_TOL,
        );
        worst = worst.max(report.max_rel_error);
        checks += 1;
        if !report.passed {
            failures.push(format!("instance {i} {variant} {strategy} sigma: {:.2e}", report.max_rel_error));
        }
    }
    let detail = format!("{GRAD_INSTANCES} instances, {checks} tensors, max rel err {worst:.2e} (< {GRAD_TOL:e})");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn frozen(tape: &mut Tape, l: [f64; 3]) -> TaskLosses {
    let [p, a, o] = l.map(|v| tape.scalar_constant(v));
    TaskLosses::new(p, a, o)
}

fn alf_value(variant: AlfVariant, l: [f64; 3], s: [f64; 3]) -> f64 {
    let mut tape = Tape::new();
    let losses = frozen(&mut tape, l);
    let node = SigmaParams::from_log_variances(s).bind(&mut tape);
    let out = combine(&mut tape, variant, &losses, node).unwrap();
    tape.scalar(out)
}

fn reduction_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = Vec::new();
    for i in 0..20 {
        let (vocab, batch) = random_batch(&mut rng, true);
        let refs: Vec<&Example> = batch.iter().collect();
        let model = ToyModel::new(vocab.len(), rng.random_range(2..=8), i).unwrap();
        let values = |strategy| {
            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            assemble_task_losses(&mut tape, &b, &refs, strategy).unwrap().values(&tape)
        };
        let none = values(DawlStrategy::None);
        for strategy in &STRATEGIES[1..] {
            let v = values(*strategy);
            if v[1].to_bits() != none[1].to_bits() || v[2].to_bits() != none[2].to_bits() {
                mismatches.push(format!("{strategy}: {v:?} vs {none:?}"));
            }
        }
    }
    let mut worst_alf2 = 0.0f64;
    for _ in 0..100 {
        let l: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..5.0));
        let plain = l[0] + l[1] + l[2];
        let a1 = alf_value(AlfVariant::Alf1, l, [0.0; 3]);
        if a1 != plain {
            mismatches.push(format!("alf1 at unit variance: {a1} vs {plain}"));
        }
        let a2 = alf_value(AlfVariant::Alf2, l, [0.0; 3]);
        worst_alf2 = worst_alf2.max((a2 - (plain + 3.0 * std::f64::consts::LN_2)).abs());
    }
    if worst_alf2 >= IDENTITY_TOL {
        mismatches.push(format!("alf2 off by {worst_alf2:e}"));
    }
    if mismatches.is_empty() {
        Ok(format!("aux losses bit-identical over 20 batches x 3 strategies; alf1 exact; alf2 |err| {worst_alf2:.1e}"))
    } else {
        Err(mismatches.join("; "))
    }
}

/// Golden-section minimum of one task's term over σ².
fn minimize_1d(f: impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (1e-6, 100.0);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

fn stationarity() -> Outcome {
    let l = [0.5, 1.0, 2.0];
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for variant in [AlfVariant::Alf1, AlfVariant::Alf2] {
        let mut sigma = SigmaParams::default();
        for _ in 0..5000 {
            let mut tape = Tape::new();
            let losses = frozen(&mut tape, l);
            let node = sigma.bind(&mut tape);
            let out = combine(&mut tape, variant, &losses, node).unwrap();
            tape.backward(out).unwrap();
            let g = tape.grad(node).unwrap().to_vec();
            for (v, gi) in sigma.tensor_mut().data_mut().iter_mut().zip(g) {
                *v -= 0.05 * gi;
            }
        }
        let var = sigma.variances();
        for k in 0..3 {
            let closed = match variant {
                AlfVariant::Alf1 => l[k],
                _ => (l[k] + (l[k] * l[k] + 4.0 * l[k]).sqrt()) / 2.0,
            };
            let numeric = minimize_1d(|u| match variant {
                AlfVariant::Alf1 => l[k] / u + u.ln(),
                _ => l[k] / u + (u + 1.0).ln(),
            });
            let lib = stationary_sigma(variant, l[k]).unwrap();
            let err = (var[k] - closed).abs();
            if err >= STATIONARY_TOL || (numeric - closed).abs() >= STATIONARY_TOL || (lib - closed).abs() > 1e-12 {
                bad.push(format!("{variant} L={}: descent {:.5}, closed {closed:.5}, 1-D {numeric:.5}", l[k], var[k]));
            }
        }
        lines.push(format!("{variant} σ²=({:.4},{:.4},{:.4})", var[0], var[1], var[2]));
    }
    if bad.is_empty() {
        Ok(format!("{} within {STATIONARY_TOL:e}", lines.join(", ")))
    } else {
        Err(bad.join("; "))
    }
}

fn script(polarity_by_epoch: &[&str]) -> MockBackend {
    let mut m = MockBackend::new()
        .with("*", QueryKind::Aspect, None, MockReply::text("temperature\nConfidence: 0.3").with_logprobs(vec![("temperature".into(), -0.2)]))
        .with("*", QueryKind::Opinion, None, MockReply::text("cold\nConfidence: 0.9").with_logprobs(vec![("cold".into(), -1.5)]))
        .with("*", QueryKind::ChoiceAspect, None, MockReply::text("(A)").with_logprobs(vec![("A".into(), -0.1)]))
        .with("*", QueryKind::ChoiceOpinion, None, MockReply::text("(B)").with_logprobs(vec![("B".into(), -2.0)]))
        .with("*", QueryKind::Feedback, None, MockReply::text("The food was served cold."));
    for (e, p) in polarity_by_epoch.iter().enumerate() {
        m.insert("*", QueryKind::Polarity, Some(e as u32), MockReply::text(*p));
    }
    m
}

fn refine_contract() -> Outcome {
    const E: u32 = 4;
    let instance = Instance::new("r1", "The soup arrived after an hour", "soup", Polarity::Negative, true).unwrap();
    let cases: [(&str, Vec<&str>, u32, usize); 3] = [
        ("immediate", vec!["negative"], 1, 0),
        ("never", vec!["positive"; E as usize], E, E as usize),
        ("at-2", vec!["neutral", "negative"], 2, 1),
    ];
    let mut bad = Vec::new();
    for method in [ConfidenceMethod::Prompt, ConfidenceMethod::MarkovChain, ConfidenceMethod::ChoiceToken] {
        for (name, answers, epochs, feedback) in &cases {
            let m = script(answers);
            let out = match run_refine_loop(&instance, &m, method, E) {
                Ok(o) => o,
                Err(e) => {
                    bad.push(format!("{method} {name}: {e}"));
                    continue;
                }
            };
            let fb = m.count("r1", QueryKind::Feedback);
            if out.refine_epochs_used != *epochs || fb != *feedback {
                bad.push(format!("{method} {name}: {} epochs, {fb} feedback", out.refine_epochs_used));
            }
            for c in [out.aspect_confidence, out.opinion_confidence] {
                if !(0.5..=1.0).contains(&c) {
                    bad.push(format!("{method} {name}: confidence {c}"));
                }
            }
        }
    }
    if bad.is_empty() {
        Ok("3 scripts x 3 methods: epochs (1, E, 2) and feedback calls (0, E, 1); confidences in [0.5, 1]".into())
    } else {
        Err(bad.join("; "))
    }
}

fn oracle_macro_f1(gold: &[Polarity], pred: &[Polarity]) -> f64 {
    let mut f1s = Vec::new();
    for class in Polarity::ALL {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == class && **p == class).count() as f64;
        let fp = gold.iter().zip(pred).filter(|(g, p)| **g != class && **p == class).count() as f64;
        let fneg = gold.iter().zip(pred).filter(|(g, p)| **g == class && **p != class).count() as f64;
        if tp + fp + fneg == 0.0 {
            continue;
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        f1s.push(if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 });
    }
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let gold: Vec<Polarity> = (0..n).map(|_| Polarity::ALL[rng.random_range(0..3)]).collect();
        let pred: Vec<Polarity> = (0..n).map(|_| Polarity::ALL[rng.random_range(0..3)]).collect();
        worst = worst.max((macro_f1(&gold, &pred).unwrap() - oracle_macro_f1(&gold, &pred)).abs());
    }
    use Polarity::{Negative as N, Positive as P};
    let acc = accuracy(&[P, P, N], &[P, N, N]).unwrap();
    if worst < 1e-12 && acc == 2.0 / 3.0 {
        Ok(format!("1000 cases, max |diff| {worst:.1e}; 3-instance accuracy = 2/3 exactly"))
    } else {
        Err(format!("max |diff| {worst:e}, accuracy {acc}"))
    }
}

fn synthetic_end_to_end() -> Outcome {
    let data = generate(&SynthConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let base = TrainConfig {
        learning_rate: SYNTHETIC_LEARNING_RATE,
        ..TrainConfig::default()
    };
    let seeds = [42, 43, 44, 45, 46];
    let grid = run_ablation(&data.train, &data.test, &base, &seeds, dir.path()).map_err(|e| e.to_string())?;
    let single = run_variant(&data.train, &data.test, &base, SINGLE_TASK, &seeds, dir.path()).map_err(|e| e.to_string())?;

    let full = &grid[0];
    let isa = |r: &awl_core::experiment::VariantResult| r.isa_accuracy.map_or(f64::NAN, |m| m.mean);
    let mut bad = Vec::new();
    if full.accuracy.mean < MIN_SYNTH_ACCURACY {
        bad.push(format!("full accuracy {:.4} < {MIN_SYNTH_ACCURACY}", full.accuracy.mean));
    }
    if full.accuracy.mean <= single.accuracy.mean {
        bad.push(format!(
            "full accuracy {:.4} does not exceed single-task {:.4}",
            full.accuracy.mean, single.accuracy.mean
        ));
    }
    for r in &grid[1..] {
        if isa(full) < isa(r) {
            bad.push(format!("ISA {} {:.4} < {} {:.4}", full.name, isa(full), r.name, isa(r)));
        }
    }
    let summary: Vec<String> = grid
        .iter()
        .chain([&single])
        .map(|r| format!("{} acc {:.4} isa {:.4}", r.name, r.accuracy.mean, isa(r)))
        .collect();
    let detail = summary.join(", ");
    if bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", bad.join("; ")))
    }
}

fn weight_semantics() -> Outcome {
    let data = generate(&SynthConfig::default());
    let mut bad = Vec::new();
    let mut rows_seen = 0;
    for (alf, lr) in [(AlfVariant::Alf1, 0.05), (AlfVariant::Alf2, 0.05), (AlfVariant::Fixed(AlfVariant::BASE_WEIGHTS), 0.01)] {
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig {
            alf,
            epochs: 5,
            embedding_dim: 16,
            learning_rate: lr,
            ..TrainConfig::default()
        };
        let r = train(&data.train, None, &config, dir.path(), &mut |_| {}).map_err(|e| e.to_string())?;
        let rows = read_trajectory(&r.trajectory).map_err(|e| e.to_string())?;
        rows_seen += rows.len();
        let first = rows[0].weights();
        let expected = if alf.learns_sigma() { [1.0 / 3.0; 3] } else { AlfVariant::BASE_WEIGHTS };
        if first != expected {
            bad.push(format!("{alf}: initial weights {first:?}"));
        }
        for row in &rows {
            let sum: f64 = row.weights().iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                bad.push(format!("{alf} step {}: weights sum to {sum}", row.step));
            }
        }
    }
    let mut tape = Tape::new();
    let unit = frozen(&mut tape, [1.0; 3]);
    let node = SigmaParams::default().bind(&mut tape);
    let total = combine(&mut tape, AlfVariant::Fixed(AlfVariant::BASE_WEIGHTS), &unit, node).unwrap();
    let base = tape.scalar(total);
    if (base - 1.0).abs() > IDENTITY_TOL {
        bad.push(format!("base fixed mode on unit losses gives {base}"));
    }
    if bad.is_empty() {
        Ok(format!("{rows_seen} rows sum to 1 within {WEIGHT_SUM_TOL:e}; learned runs start at 1/3; base mode gives {base}"))
    } else {
        Err(bad.join("; "))
    }
}

fn determinism() -> Outcome {
    let data = generate(&SynthConfig::default());
    let config = TrainConfig {
        epochs: 3,
        learning_rate: SYNTHETIC_LEARNING_RATE,
        ..TrainConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        train(&data.train, Some(&data.test), &config, d.path(), &mut |_| {}).map_err(|e| e.to_string())?;
    }
    let mut bytes = 0;
    for f in ["checkpoint.json", "trajectory.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
        bytes += a.len();
    }
    Ok(format!("checkpoint and trajectory byte-identical ({bytes} bytes)"))
}

fn main() {
    let criteria: [(u32, &str, Option<Duration>, fn() -> Outcome); 8] = [
        (1, "gradient suite", Some(Duration::from_secs(30)), gradient_suite),
        (2, "reduction identities", None, reduction_identities),
        (3, "stationarity", Some(Duration::from_secs(10)), stationarity),
        (4, "refinement loop contract", Some(Duration::from_secs(5)), refine_contract),
        (5, "metric oracle", None, metric_oracle),
        (6, "synthetic end-to-end", Some(Duration::from_secs(180)), synthetic_end_to_end),
        (7, "weight-report semantics", None, weight_semantics),
        (8, "determinism", None, determinism),
    ];
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if took >= l => Err(format!("took {:.1}s, limit {}s", took.as_secs_f64(), l.as_secs())),
            (o, _) => o,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} criterion {n} ({name}): {detail} [{:.2}s]", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
