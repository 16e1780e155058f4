use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradient_check;
use crate::model::{ParamId, ToyModel};

const LN2: f64 = std::f64::consts::LN_2;

fn frozen(tape: &mut Tape, l: [f64; 3]) -> TaskLosses {
    let [p, a, o] = l.map(|v| tape.scalar_constant(v));
    TaskLosses::new(p, a, o)
}

fn alf_value(variant: AlfVariant, l: [f64; 3], s: [f64; 3]) -> f64 {
    let mut tape = Tape::new();
    let losses = frozen(&mut tape, l);
    let sigma = SigmaParams::from_log_variances(s);
    let node = sigma.bind(&mut tape);
    let out = combine(&mut tape, variant, &losses, node).unwrap();
    tape.scalar(out)
}

/// Golden-section search on one task's term over σ² in [lo, hi].
fn minimize_per_task(variant: AlfVariant, loss: f64) -> f64 {
    let f = |u: f64| match variant {
        AlfVariant::Alf1 => loss / u + u.ln(),
        AlfVariant::Alf2 => loss / u + (u + 1.0).ln(),
        AlfVariant::Fixed(_) => unreachable!(),
    };
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

#[test]
fn output_reduce_examples() {
    let mut tape = Tape::new();
    let l1 = tape.scalar_constant(1.0);
    let l2 = tape.scalar_constant(2.0);
    let r = dawl_output_reduce(&mut tape, &[(l1, 1.0), (l2, 0.5)]).unwrap();
    assert_eq!(tape.scalar(r), 1.0);

    let l = tape.scalar_constant(4.0);
    let r = dawl_output_reduce(&mut tape, &[(l, 0.5)]).unwrap();
    assert_eq!(tape.scalar(r), 2.0);

    let r = dawl_output_reduce(&mut tape, &[(l1, 1.0), (l2, 1.0)]).unwrap();
    let m = mean_reduce(&mut tape, &[l1, l2]).unwrap();
    assert_eq!(tape.scalar(r).to_bits(), tape.scalar(m).to_bits());

    assert_eq!(dawl_output_reduce(&mut tape, &[]), Err(AwlError::EmptyBatch));
    assert!(matches!(
        dawl_output_reduce(&mut tape, &[(l1, 0.4)]),
        Err(AwlError::ConfidenceRange(_))
    ));
}

#[test]
fn alf1_examples() {
    assert_eq!(alf_value(AlfVariant::Alf1, [1.0; 3], [0.0; 3]), 3.0);
    let half = 0.5f64.ln();
    let v = alf_value(AlfVariant::Alf1, [1.0; 3], [half; 3]);
    assert!((v - (6.0 + 3.0 * half)).abs() < 1e-12);
    assert!((v - 3.9206).abs() < 1e-4);
}

#[test]
fn alf2_examples() {
    let v = alf_value(AlfVariant::Alf2, [1.0; 3], [0.0; 3]);
    assert!((v - (3.0 + 3.0 * LN2)).abs() < 1e-12);
    assert!((v - 5.0794).abs() < 1e-4);
}

#[test]
fn fixed_examples() {
    let v = alf_value(AlfVariant::Fixed(AlfVariant::BASE_WEIGHTS), [1.0; 3], [0.0; 3]);
    assert!((v - 1.0).abs() < 1e-15);
    assert_eq!(alf_value(AlfVariant::Fixed([1.0, 0.0, 0.0]), [0.7, 3.0, 9.0], [0.0; 3]), 0.7);
    let third = 1.0 / 3.0;
    let v = alf_value(AlfVariant::Fixed([third; 3]), [2.5; 3], [0.0; 3]);
    assert!((v - 2.5).abs() < 1e-15);

    let mut tape = Tape::new();
    let losses = frozen(&mut tape, [1.0; 3]);
    assert!(matches!(
        combine_fixed(&mut tape, &losses, [1.2, -0.2, 0.0]),
        Err(AwlError::InvalidWeights(_))
    ));
    assert!(AlfVariant::fixed([0.5, 0.5, 0.5]).is_err());
}

#[test]
fn normalized_weight_examples() {
    let w = normalized_task_weights(&SigmaParams::default());
    assert_eq!(w, [1.0 / 3.0; 3]);
    let w = normalized_task_weights(&SigmaParams::from_variances([1.0, 2.0, 2.0]));
    for (a, b) in w.iter().zip([0.5, 0.25, 0.25]) {
        assert!((a - b).abs() < 1e-15);
    }
    let w2 = normalized_task_weights(&SigmaParams::from_variances([7.0, 14.0, 14.0]));
    for (a, b) in w.iter().zip(w2) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(round2(0.7349), 0.73);
}

#[test]
fn stationary_sigma_matches_numerical_minimum() {
    for (variant, loss, expected) in [
        (AlfVariant::Alf1, 2.0, 2.0),
        (AlfVariant::Alf1, 1.0, 1.0),
        (AlfVariant::Alf2, 1.0, (1.0 + 5f64.sqrt()) / 2.0),
    ] {
        let closed = stationary_sigma(variant, loss).unwrap();
        assert!((closed - expected).abs() < 1e-12);
        let numeric = minimize_per_task(variant, loss);
        assert!((closed - numeric).abs() < 1e-6, "{variant} L={loss}: {closed} vs {numeric}");
    }
    assert!((stationary_sigma(AlfVariant::Alf2, 1.0).unwrap() - 1.6180).abs() < 1e-4);
    assert_eq!(stationary_sigma(AlfVariant::Alf1, 0.0), Err(AwlError::NonPositiveLoss(0.0)));
    assert_eq!(
        stationary_sigma(AlfVariant::Fixed([1.0, 0.0, 0.0]), 1.0),
        Err(AwlError::NoStationaryPoint)
    );
}

#[test]
fn sigma_gradients_match_closed_form_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let l: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..3.0));
        let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        for variant in [AlfVariant::Alf1, AlfVariant::Alf2] {
            let point = SigmaParams::from_log_variances(s).tensor().clone();
            let report = gradient_check(
                |tape, x| {
                    let losses = frozen(tape, l);
                    combine(tape, variant, &losses, x).map_err(|e| match e {
                        AwlError::Autodiff(a) => a,
                        other => panic!("{other}"),
                    })
                },
                &point,
                1e-4,
                1e-4,
            );
            assert!(report.passed, "{report:?}");
            for k in 0..3 {
                let reg = match variant {
                    AlfVariant::Alf1 => 1.0,
                    _ => s[k].exp() / (s[k].exp() + 1.0),
                };
                let closed = -(-s[k]).exp() * l[k] + reg;
                assert!((report.analytic[k] - closed).abs() < 1e-12);
            }
        }
    }
}

fn descend(variant: AlfVariant, l: [f64; 3], lr: f64, steps: usize) -> [f64; 3] {
    let mut sigma = SigmaParams::default();
    for _ in 0..steps {
        let mut tape = Tape::new();
        let losses = frozen(&mut tape, l);
        let node = sigma.bind(&mut tape);
        let out = combine(&mut tape, variant, &losses, node).unwrap();
        tape.backward(out).unwrap();
        let g = tape.grad(node).unwrap().to_vec();
        for (v, gi) in sigma.tensor_mut().data_mut().iter_mut().zip(g) {
            *v -= lr * gi;
        }
    }
    sigma.variances()
}

#[test]
fn gradient_descent_reaches_stationary_sigma() {
    let l = [0.5, 1.0, 2.0];
    for variant in [AlfVariant::Alf1, AlfVariant::Alf2] {
        let var = descend(variant, l, 0.05, 5000);
        for k in 0..3 {
            let target = stationary_sigma(variant, l[k]).unwrap();
            assert!((var[k] - target).abs() < 1e-3, "{variant} task {k}: {} vs {target}", var[k]);
        }
    }
}

#[test]
fn reduction_identities_at_unit_sigma() {
    let l = [0.37, 1.91, 0.05];
    let plain = l[0] + l[1] + l[2];
    assert_eq!(alf_value(AlfVariant::Alf1, l, [0.0; 3]), plain);
    assert!((alf_value(AlfVariant::Alf2, l, [0.0; 3]) - (plain + 3.0 * LN2)).abs() < 1e-12);
}

fn toy_batch(vocab_size: usize, confidences: &[(f64, f64)]) -> Vec<Example> {
    confidences
        .iter()
        .enumerate()
        .map(|(i, &(ca, co))| Example {
                id: format!("e{i}"),
                sentence: vec![4 + i % 3, 5, 6 + (i % 2)],
                target: vec![5],
                polarity: Polarity::ALL[i % 3],
                implicit: i % 2 == 0,
                aux: Some(AuxTargets {
                    aspect: token_seq(&[4 + (i % (vocab_size - 4))]),
                    aspect_confidence: ca,
                    opinion: token_seq(&[6, 7]),
                    opinion_confidence: co,
                }),
        })
        .collect()
}

fn token_seq(ids: &[usize]) -> TokenSequence {
    let mut v = Vocabulary::default();
    let words = ["a", "b", "c", "d", "e", "f"];
    v.extend(words);
    let text: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
    v.tokenize(&text.join(" "))
}

fn losses_for(model: &ToyModel, batch: &[Example], strategy: DawlStrategy) -> [f64; 3] {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let refs: Vec<&Example> = batch.iter().collect();
    let l = assemble_task_losses(&mut tape, &b, &refs, strategy).unwrap();
    l.values(&tape)
}

#[test]
fn strategies_reduce_to_none_at_unit_confidence() {
    let model = ToyModel::new(10, 4, 5).unwrap();
    let batch = toy_batch(10, &[(1.0, 1.0); 4]);
    let none = losses_for(&model, &batch, DawlStrategy::None);
    for s in [DawlStrategy::Input, DawlStrategy::Output, DawlStrategy::InputOutput] {
        let other = losses_for(&model, &batch, s);
        assert_eq!(none.map(f64::to_bits), other.map(f64::to_bits), "{s}");
    }
}

#[test]
fn output_strategy_is_confidence_weighted_mean() {
    let model = ToyModel::new(10, 4, 6).unwrap();
    let batch = toy_batch(10, &[(1.0, 0.6), (0.5, 0.9)]);
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let refs: Vec<&Example> = batch.iter().collect();
    let l = assemble_task_losses(&mut tape, &b, &refs, DawlStrategy::Output).unwrap();
    let per: Vec<f64> = l.aspect_instances.iter().map(|i| tape.scalar(i.loss)).collect();
    let expected = (1.0 * per[0] + 0.5 * per[1]) / 2.0;
    assert!((tape.scalar(l.aspect) - expected).abs() < 1e-12);
    let none = losses_for(&model, &batch, DawlStrategy::None);
    // polarity never reweighted
    assert_eq!(tape.scalar(l.polarity), none[0]);
}

#[test]
fn input_strategy_changes_aux_but_not_polarity() {
    let model = ToyModel::new(10, 4, 6).unwrap();
    let batch = toy_batch(10, &[(0.6, 0.7), (0.8, 0.5)]);
    let none = losses_for(&model, &batch, DawlStrategy::None);
    let input = losses_for(&model, &batch, DawlStrategy::Input);
    assert_eq!(none[0], input[0]);
    assert_ne!(none[1], input[1]);
    assert_ne!(none[2], input[2]);
}

#[test]
fn missing_confidence_names_instance() {
    let model = ToyModel::new(10, 4, 6).unwrap();
    let mut batch = toy_batch(10, &[(1.0, 1.0), (1.0, 1.0)]);
    batch[1].aux = None;
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let refs: Vec<&Example> = batch.iter().collect();
    let err = assemble_task_losses(&mut tape, &b, &refs, DawlStrategy::Output).unwrap_err();
    assert_eq!(err, AwlError::MissingConfidence("e1".into(), DawlStrategy::Output));
    assert_eq!(
        assemble_task_losses(&mut tape, &b, &[], DawlStrategy::None).unwrap_err(),
        AwlError::EmptyBatch
    );
}

#[test]
fn combined_loss_gradients_on_model_params() {
    let model = ToyModel::new(10, 4, 8).unwrap();
    let batch = toy_batch(10, &[(0.9, 0.6), (0.5, 1.0), (0.75, 0.8)]);
    let refs: Vec<&Example> = batch.iter().collect();
    let sigma = SigmaParams::from_log_variances([0.3, -0.4, 0.8]);
    for strategy in [DawlStrategy::None, DawlStrategy::Input, DawlStrategy::Output, DawlStrategy::InputOutput] {
        for variant in [AlfVariant::Alf1, AlfVariant::Alf2] {
            for p in [ParamId::Embedding, ParamId::ContextW, ParamId::GenerationW] {
                let report = gradient_check(
                    |tape, x| {
                        let b = model.bind(tape).with_node(p, x);
                        let s = sigma.bind(tape);
                        let l = assemble_task_losses(tape, &b, &refs, strategy).unwrap();
                        Ok(combine(tape, variant, &l, s).unwrap())
                    },
                    model.param(p),
                    1e-4,
                    1e-4,
                );
                assert!(report.passed, "{strategy} {variant} {}: {report:?}", p.name());
            }
        }
    }
}

#[test]
fn output_weight_monotone_in_confidence() {
    let model = ToyModel::new(10, 4, 9).unwrap();
    let grad_norm_and_loss = |c: f64| {
        let batch = toy_batch(10, &[(c, 0.7), (0.6, 0.6)]);
        let refs: Vec<&Example> = batch.iter().collect();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let l = assemble_task_losses(&mut tape, &b, &refs, DawlStrategy::Output).unwrap();
        let total = tape.scalar(l.aspect);
        tape.backward(l.aspect).unwrap();
        let g = tape.grad(b.node(ParamId::GenerationW)).unwrap();
        (total, g.iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    let mut prev = grad_norm_and_loss(0.5);
    for c in [0.6, 0.75, 0.9, 1.0] {
        let cur = grad_norm_and_loss(c);
        assert!(cur.0 > prev.0);
        prev = cur;
    }
}

proptest! {
    #[test]
    fn regularizer_signs(s in -5.0f64..5.0) {
        let with_zero_loss = |v| alf_value(v, [0.0; 3], [s; 3]);
        prop_assert!(with_zero_loss(AlfVariant::Alf2) > 0.0);
        let alf1 = with_zero_loss(AlfVariant::Alf1);
        if s < 0.0 {
            prop_assert!(alf1 < 0.0);
        } else {
            prop_assert!(alf1 >= 0.0);
        }
    }

    #[test]
    fn alf1_stationary_weights_rank_by_inverse_loss(
        l in prop::array::uniform3(0.05f64..5.0)
    ) {
        prop_assume!((l[0] - l[1]).abs() > 1e-6 && (l[1] - l[2]).abs() > 1e-6 && (l[0] - l[2]).abs() > 1e-6);
        let var = l.map(|v| stationary_sigma(AlfVariant::Alf1, v).unwrap());
        let w = normalized_task_weights(&SigmaParams::from_variances(var));
        for i in 0..3 {
            for j in 0..3 {
                if l[i] < l[j] {
                    prop_assert!(w[i] > w[j]);
                }
            }
        }
    }

    #[test]
    fn normalized_weights_sum_to_one(s in prop::array::uniform3(-20.0f64..20.0)) {
        let w = normalized_task_weights(&SigmaParams::from_log_variances(s));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
