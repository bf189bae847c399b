use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spoken_latex::channel::builtin_profiles;
use spoken_latex::corpus::{generate_corpus, MathSample};
use spoken_latex::neural::model::{build_vocab, Seq2SeqParams};
use spoken_latex::neural::Mat;
use spoken_latex::pipeline::{
    encode_sample, joint_loss, joint_loss_grads, train, Coupling, DecodeConfig, DecodeMode, Encoded, Pipeline,
    PipelineError, TrainConfig,
};
use spoken_latex::verbalize::{GrammarConfig, VerbalStyle};

fn corpus(n: usize, seed: u64) -> Vec<MathSample> {
    generate_corpus(n, &GrammarConfig::default(), &builtin_profiles(), &VerbalStyle::all(), seed).unwrap()
}

struct Setup {
    f: Seq2SeqParams<f64>,
    g: Seq2SeqParams<f64>,
    enc: Vec<Encoded>,
}

fn setup(n: usize, width: usize) -> Setup {
    let c = corpus(n, 3);
    let vocab = build_vocab(&c).unwrap();
    Setup {
        f: Seq2SeqParams::new(vocab.len(), width, 1).unwrap(),
        g: Seq2SeqParams::new(vocab.len(), width, 2).unwrap(),
        enc: c.iter().map(|s| encode_sample(&vocab, s).unwrap()).collect(),
    }
}

fn cfg(coupling: Coupling, ls: f64, ll: f64) -> TrainConfig {
    TrainConfig {
        coupling,
        lambda_se: ls,
        lambda_latex: ll,
        ..TrainConfig::default()
    }
}

fn max_abs(ms: &[Mat<f64>]) -> f64 {
    ms.iter().flat_map(|m| m.data.iter()).fold(0.0, |a, x| a.max(x.abs()))
}

#[test]
fn total_is_the_weighted_sum() {
    let c = corpus(4, 1);
    let vocab = build_vocab(&c).unwrap();
    let f = Seq2SeqParams::<f64>::new(vocab.len(), 8, 1).unwrap();
    let g = Seq2SeqParams::<f64>::new(vocab.len(), 8, 2).unwrap();
    for coupling in Coupling::ALL {
        let l = joint_loss(Some(&f), &g, &vocab, &c, &cfg(coupling, 0.3, 0.7)).unwrap();
        assert_eq!(l.total, 0.3 * l.se + 0.7 * l.latex);
        assert!(l.latex > 0.0);
        assert_eq!(l.se == 0.0, coupling == Coupling::TranslatorOnly);
    }
    let mut bad = c[0].clone();
    bad.asr.clear();
    assert!(matches!(
        joint_loss(Some(&f), &g, &vocab, &[bad], &cfg(Coupling::Soft, 0.3, 0.7)),
        Err(PipelineError::MissingHypotheses { .. })
    ));
}

#[test]
fn corrector_only_weights_leave_translator_untouched() {
    let s = setup(6, 8);
    let batch: Vec<&Encoded> = s.enc.iter().collect();
    let gr = joint_loss_grads(Some(&s.f), &s.g, &batch, &cfg(Coupling::Soft, 1.0, 0.0));
    assert_eq!(max_abs(&gr.g), 0.0);
    assert!(max_abs(gr.f.as_ref().unwrap()) > 0.0);
}

#[test]
fn latex_loss_reaches_corrector_only_when_soft() {
    let s = setup(6, 8);
    let batch: Vec<&Encoded> = s.enc.iter().collect();
    let soft = joint_loss_grads(Some(&s.f), &s.g, &batch, &cfg(Coupling::Soft, 0.0, 1.0));
    let det = joint_loss_grads(Some(&s.f), &s.g, &batch, &cfg(Coupling::Detached, 0.0, 1.0));
    let jc = joint_loss_grads(Some(&s.f), &s.g, &batch, &cfg(Coupling::JustConnect, 0.0, 1.0));
    assert!(max_abs(soft.f.as_ref().unwrap()) > 1e-6);
    assert_eq!(max_abs(det.f.as_ref().unwrap()), 0.0);
    assert_eq!(max_abs(jc.f.as_ref().unwrap()), 0.0);
    // Soft and detached agree on the forward value.
    assert_eq!(soft.value, det.value);
}

#[test]
fn soft_joint_loss_gradients_match_finite_differences() {
    let s = setup(3, 6);
    let batch: Vec<&Encoded> = s.enc.iter().collect();
    let c = cfg(Coupling::Soft, 0.3, 0.7);
    let gr = joint_loss_grads(Some(&s.f), &s.g, &batch, &c);
    let f_grads = gr.f.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for probe in 0..60 {
        let in_f = probe % 2 == 0;
        let n_tensors = s.f.tensors.len();
        let k = rng.gen_range(0..n_tensors);
        let j = rng.gen_range(0..s.f.tensors[k].data.len());
        let eval = |delta: f64| {
            let (mut f, mut g) = (s.f.clone(), s.g.clone());
            if in_f {
                f.tensors[k].data[j] += delta;
            } else {
                g.tensors[k].data[j] += delta;
            }
            joint_loss_grads(Some(&f), &g, &batch, &c).value.total
        };
        let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
        let an = if in_f { f_grads[k].data[j] } else { gr.g[k].data[j] };
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn training_config_is_validated() {
    let c = corpus(10, 1);
    for bad in [
        TrainConfig {
            epochs: 21,
            ..TrainConfig::default()
        },
        TrainConfig {
            lambda_se: 0.0,
            lambda_latex: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            width: 7,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(train(&c, &bad), Err(PipelineError::Config(_))));
    }
    assert!(matches!(
        train(&c, &TrainConfig::default()),
        Err(PipelineError::CorpusTooSmall { .. })
    ));
}

fn tiny_run(coupling: Coupling) -> (Pipeline, spoken_latex::pipeline::History) {
    let c = corpus(80, 4);
    let cfg = TrainConfig {
        coupling,
        epochs: 2,
        steps_per_epoch: Some(5),
        batch_size: 8,
        width: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    train(&c, &cfg).unwrap()
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let (p, h) = tiny_run(Coupling::Soft);
    let (q, h2) = tiny_run(Coupling::Soft);
    assert_eq!(p, q);
    assert_eq!(h, h2);
    assert!(h.epochs.len() <= 2);
    assert!(p.corrector.is_some());

    let dir = tempfile::tempdir().unwrap();
    p.save(dir.path()).unwrap();
    let loaded = Pipeline::load(dir.path()).unwrap();
    assert_eq!(loaded, p);
    let dc = DecodeConfig::default();
    let pairs = [("x plus one", "x plus 1"), ("sine of x", "side of x")];
    assert_eq!(p.infer_batch(&pairs, &dc).unwrap(), loaded.infer_batch(&pairs, &dc).unwrap());

    let beam1 = DecodeConfig {
        mode: DecodeMode::Beam,
        beam_width: 1,
        ..dc
    };
    assert_eq!(p.infer_batch(&pairs, &beam1).unwrap(), p.infer_batch(&pairs, &dc).unwrap());
    let mid = p.correct("x", "x", &dc).unwrap();
    assert_eq!(p.infer("x", "x", &dc).unwrap(), p.translate(&mid, &dc).unwrap());

    let long = "x ".repeat(100);
    assert!(matches!(
        p.correct(&long, &long, &dc),
        Err(PipelineError::Model(spoken_latex::neural::ModelError::LengthExceeded { .. }))
    ));
}

#[test]
fn translator_only_has_no_corrector() {
    let (p, _) = tiny_run(Coupling::TranslatorOnly);
    assert!(p.corrector.is_none());
    let dc = DecodeConfig::default();
    assert_eq!(p.infer("x", "y", &dc).unwrap(), p.translate("x", &dc).unwrap());
    let dir = tempfile::tempdir().unwrap();
    p.save(dir.path()).unwrap();
    assert_eq!(Pipeline::load(dir.path()).unwrap(), p);
}
