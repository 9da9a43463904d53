use proptest::prelude::*;
use ptk_core::fixtures::lattice;
use ptk_core::{tokenize, TokenizerConfig};
use ptk_model::gradcheck::{compare_gradients, grad_check, GradCheckOptions};
use ptk_model::model::{forward_cached, softmax_rows};
use ptk_model::params::{read_checkpoint, write_checkpoint};
use ptk_model::{
    embed_sequence, forward, loss, loss_and_grad, train, vocab, Example, LrSchedule, ModelError, ToyModelConfig,
    ToyModelParams, TrainOptions,
};

fn small_config() -> ToyModelConfig {
    ToyModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        vocab_size: 40,
        max_seq: 32,
        m: 4,
        seed: 5,
    }
}

/// 2x2 lattice (4 patches, one row separator) followed by a question and answer.
fn lattice_example(answer: &[&str]) -> Example {
    let seq = tokenize(&lattice(1, 2, 2, 4), &TokenizerConfig::with_mk(4, 2)).unwrap().sequence;
    let answer: Vec<u32> = answer.iter().map(|w| vocab::id(w)).collect();
    Example::with_answer(seq, &[vocab::id("what"), vocab::id("shape")], &answer).unwrap()
}

fn single_patch_example() -> Example {
    let seq = tokenize(&lattice(1, 1, 1, 4), &TokenizerConfig::with_mk(4, 2)).unwrap().sequence;
    assert_eq!(seq.patch_count(), 1);
    Example::with_answer(seq, &[], &[vocab::id("cube")]).unwrap()
}

#[test]
fn gradients_match_finite_differences_in_every_group() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let batch = [lattice_example(&["cube", "<eos>"]), lattice_example(&["torus"])];
    let report = grad_check(&params, &batch, &GradCheckOptions::default()).unwrap();
    assert!(report.checked >= 200, "{}", report.checked);
    for group in ["projector", "embeddings", "attention", "mlp", "head"] {
        let g = report.groups[group];
        assert!(g.checked > 0, "{group}");
        assert!(g.max_rel <= 1e-4 || g.max_abs <= 1e-8, "{group}: {g:?}");
    }
}

#[test]
fn projector_gradient_on_one_patch_one_text() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let batch = [single_patch_example()];
    let opts = GradCheckOptions {
        samples: 400,
        ..Default::default()
    };
    let report = grad_check(&params, &batch, &opts).unwrap();
    assert!(report.groups["projector"].max_rel <= 1e-4);
}

#[test]
fn corrupted_projector_gradient_is_caught() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let batch = [single_patch_example()];
    let (_, mut grads) = loss_and_grad(&params, &batch).unwrap();
    let proj = params.layout.projector.clone();
    grads.data[proj].iter_mut().for_each(|g| *g *= 1.1);
    match compare_gradients(&params, &batch, &grads, &GradCheckOptions::default()) {
        Err(ModelError::GradMismatch { offenders, .. }) => {
            assert!(!offenders.is_empty());
            assert!(offenders.iter().all(|o| o.tensor == "projector"));
        }
        other => panic!("expected GradMismatch, got {other:?}"),
    }
}

#[test]
fn epsilon_outside_range_rejected() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let opts = GradCheckOptions {
        epsilon: 1e-2,
        ..Default::default()
    };
    assert!(grad_check(&params, &[single_patch_example()], &opts).is_err());
}

#[test]
fn softmax_rows_sum_to_one() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let ex = lattice_example(&["cube"]);
    let logits = forward(&params, &embed_sequence(&params, &ex.sequence).unwrap()).unwrap();
    let probs = softmax_rows(&logits);
    for t in 0..probs.rows {
        assert!((probs.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn shared_prefix_gives_identical_logits() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let a = lattice_example(&["cube", "<eos>"]);
    let b = lattice_example(&["torus"]);
    let la = forward(&params, &embed_sequence(&params, &a.sequence).unwrap()).unwrap();
    let lb = forward(&params, &embed_sequence(&params, &b.sequence).unwrap()).unwrap();
    let shared = b.sequence.tokens.len() - 1;
    for t in 0..shared {
        assert_eq!(la.row(t), lb.row(t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logits_are_causal(t in 0usize..12, noise in prop::collection::vec(-3.0f64..3.0, 16)) {
        let params = ToyModelParams::init(small_config()).unwrap();
        let ex = lattice_example(&["cube", "<eos>"]);
        let base = embed_sequence(&params, &ex.sequence).unwrap();
        let t = t.min(base.rows - 1);
        let mut perturbed = base.clone();
        for (v, n) in perturbed.row_mut(t).iter_mut().zip(&noise) {
            *v += n;
        }
        let (a, _) = forward_cached(&params, &base).unwrap();
        let (b, _) = forward_cached(&params, &perturbed).unwrap();
        for s in 0..t {
            let same = a.row(s).iter().zip(b.row(s)).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same, "row {} changed after perturbing {}", s, t);
        }
        prop_assert_ne!(a.row(t), b.row(t));
    }

    #[test]
    fn loss_is_finite_and_nonnegative(seed in 0u64..1000) {
        let params = ToyModelParams::init(ToyModelConfig { seed, ..small_config() }).unwrap();
        let l = loss(&params, &[lattice_example(&["cone", "<eos>"])]).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}

#[test]
fn overfits_a_single_batch() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let batch = [lattice_example(&["cube", "<eos>"]), lattice_example(&["torus", "red"])];
    let opts = TrainOptions {
        steps: 500,
        schedule: LrSchedule::cosine(3e-3),
        ..Default::default()
    };
    let (trained, report) = train(&params, &batch, &opts).unwrap();
    let (first, last) = (report.losses[0], loss(&trained, &batch).unwrap());
    assert_eq!(report.losses.len(), 500);
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let opts = TrainOptions {
        steps: 5,
        schedule: LrSchedule::constant(0.0),
        ..Default::default()
    };
    let (trained, report) = train(&params, &[lattice_example(&["cube"])], &opts).unwrap();
    assert_eq!(report.losses.len(), 5);
    let same = trained.data.iter().zip(&params.data).all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same);
}

#[test]
fn training_is_deterministic() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let data: Vec<Example> = ["cube", "torus", "cone", "line", "plane"]
        .iter()
        .map(|w| lattice_example(&[w, "<eos>"]))
        .collect();
    let opts = TrainOptions {
        steps: 20,
        batch_size: 2,
        ..Default::default()
    };
    let (pa, ra) = train(&params, &data, &opts).unwrap();
    let (pb, rb) = train(&params, &data, &opts).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(pa, pb);
}

#[test]
fn non_finite_loss_is_divergence() {
    let mut params = ToyModelParams::init(small_config()).unwrap();
    let head = params.layout.head.start;
    params.data[head] = f64::NAN;
    let err = train(&params, &[lattice_example(&["cube"])], &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, ModelError::DivergenceDetected { step: 0 }));
}

#[test]
fn checkpoint_file_round_trip() {
    let params = ToyModelParams::init(small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ptkc");
    write_checkpoint(&params, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_checkpoint(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, params);
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"PTKC");
}

#[test]
fn full_size_patch_width_embeds() {
    let cfg = ToyModelConfig {
        m: 512,
        ..small_config()
    };
    let params = ToyModelParams::init(cfg).unwrap();
    let seq = tokenize(&lattice(1, 1, 2, 3), &TokenizerConfig::default()).unwrap().sequence;
    assert_eq!(seq.patch_dim, 3072);
    let e = embed_sequence(&params, &seq).unwrap();
    assert_eq!((e.rows, e.cols), (seq.tokens.len(), 16));
    let mismatched = ToyModelParams::init(small_config()).unwrap();
    assert!(matches!(embed_sequence(&mismatched, &seq), Err(ModelError::ShapeMismatch(_))));
}
