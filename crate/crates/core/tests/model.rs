use std::collections::BTreeMap;

use spoken_latex::corpus::MathSample;
use spoken_latex::neural::model::{argmax, build_vocab, teacher_pair, Seq2SeqParams, SeqBatch, Vocab};
use spoken_latex::neural::{Mat, ModelError, Tape, BOS, EOS, PAD, SEP, UNK};

fn sample(se: &str) -> MathSample {
    MathSample {
        id: 0,
        latex: se.to_string(),
        se: se.to_string(),
        asr: BTreeMap::new(),
    }
}

#[test]
fn vocab_layout() {
    let v = build_vocab(&[sample("x")]).unwrap();
    assert_eq!(v.len(), 6);
    assert_eq!((PAD, BOS, EOS, SEP, UNK), (0, 1, 2, 3, 4));
    assert_eq!(v.id('x'), 5);
    assert_eq!(v.id('?'), UNK);
    assert_eq!(build_vocab(&[sample("x")]).unwrap(), v);
    assert_eq!(build_vocab(&[]), Err(ModelError::EmptyCorpus));
    let w = Vocab::from_chars("zyx".chars());
    assert_eq!(w.decode(&w.encode("xyz")), "xyz");
    assert_eq!(w.decode(&[BOS, 5, EOS]), "x");
    assert_ne!(v.fingerprint(), w.fingerprint());
}

#[test]
fn logits_shape_and_normalization() {
    let p = Seq2SeqParams::<f32>::new(10, 8, 1).unwrap();
    let logits = p.forward(&[5, 6, 7, EOS], &[BOS, 8, 9]);
    assert_eq!(logits.shape(), (3, 10));
    for r in 0..3 {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = row.iter().map(|x| ((x - max) as f64).exp()).sum();
        let probs: f64 = row.iter().map(|x| ((x - max) as f64).exp() / sum).sum();
        assert!((probs - 1.0).abs() < 1e-6);
    }
    assert!(matches!(Seq2SeqParams::<f32>::new(10, 7, 1), Err(ModelError::BadWidth(7))));
}

#[test]
fn padding_tail_is_invisible() {
    let p = Seq2SeqParams::<f64>::new(12, 8, 2).unwrap();
    let run = |srcs: Vec<Vec<usize>>| {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let mut batch = SeqBatch::new(&srcs);
        // Scribble over the padding region of the short row.
        for step in batch.lens[0]..batch.steps {
            batch.ids[step * 2] = 9;
        }
        let enc = p.encode_ids(&mut t, &b, &batch);
        let dec = SeqBatch::new(&[vec![BOS, 6], vec![BOS, 7]]);
        let l = p.decode_teacher(&mut t, &b, &enc, &dec);
        t.value(l).row(0).to_vec()
    };
    let a = run(vec![vec![5, 6, EOS], vec![5, 6, 7, 8, 9, 10, EOS]]);
    let single = {
        let logits = p.forward(&[5, 6, EOS], &[BOS, 6]);
        logits.row(0).to_vec()
    };
    for (x, y) in a.iter().zip(&single) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn direct_ce(logits: &[f64], v: usize, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (t, &y) in targets.iter().enumerate() {
        let row = &logits[t * v..(t + 1) * v];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        total -= (row[y].exp() / z).ln();
    }
    total / targets.len() as f64
}

#[test]
fn cross_entropy_oracles() {
    let logits = vec![
        0.3, -1.2, 0.8, 0.0, 2.1, //
        -0.5, 0.4, 0.4, 1.7, -2.0, //
        1.1, 0.9, -0.3, 0.2, 0.05,
    ];
    let targets = [4usize, 3, 0];
    let mut t = Tape::new();
    let x = t.leaf(Mat::from_vec(3, 5, logits.clone()));
    let l = t.cross_entropy(x, &targets, &[true; 3]);
    assert!((t.scalar(l) - direct_ce(&logits, 5, &targets)).abs() < 1e-9);

    let uniform = t.leaf(Mat::from_vec(4, 7, vec![0.25; 28]));
    let l = t.cross_entropy(uniform, &[1, 2, 3, 4], &[true, true, false, true]);
    assert!((t.scalar(l) - 7f64.ln()).abs() < 1e-12);

    let mut sharp = vec![-50.0; 10];
    sharp[3] = 50.0;
    sharp[5 + 1] = 50.0;
    let s = t.leaf(Mat::from_vec(2, 5, sharp));
    let l = t.cross_entropy(s, &[3, 1], &[true, true]);
    assert!(t.scalar(l) >= 0.0 && t.scalar(l) < 1e-30);
}

#[test]
fn beam_of_one_is_greedy() {
    for seed in 0..5 {
        let p = Seq2SeqParams::<f32>::new(14, 16, seed).unwrap();
        let srcs: Vec<Vec<usize>> = (0..6)
            .map(|i| (0..3 + i).map(|j| 5 + (i * 3 + j) % 9).chain([EOS]).collect())
            .collect();
        let greedy = p.greedy(&srcs, 12);
        for (s, g) in srcs.iter().zip(&greedy) {
            assert_eq!(&p.beam(s, 1, 12), g);
            let wide = p.beam(s, 4, 12);
            assert!(wide.len() <= 12);
        }
    }
}

#[test]
fn greedy_matches_teacher_forced_argmax() {
    let p = Seq2SeqParams::<f64>::new(11, 8, 9).unwrap();
    let src = vec![5, 7, 9, EOS];
    let out = p.greedy(&[src.clone()], 6).remove(0);
    let (input, _) = teacher_pair(&out);
    let logits = p.forward(&src, &input);
    for (t, tok) in out.iter().enumerate() {
        assert_eq!(argmax(logits.row(t)), *tok);
    }
}
