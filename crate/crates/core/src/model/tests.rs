use super::*;
use crate::numerics::gradcheck::relative_error;
use crate::tokenizer::{encode, EOS, PAD, VOCAB_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(seed: u64) -> Model {
    Model::build(ModelConfig::toy(), seed).unwrap()
}

fn random_dna(len: usize, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    (0..len).map(|_| b"ACGT"[rng.random_range(0..4)] as TokenId).collect()
}

#[test]
fn toy_encoder_shape_and_determinism() {
    let a = toy(3);
    let b = toy(3);
    for id in a.params().ids() {
        assert_eq!(a.params().digest(id), b.params().digest(id));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_dna(64, &mut rng);
    let s = a.encode(&x, None).unwrap();
    assert_eq!(s.shape(), &[64, 64]);
    assert!(s.all_finite());
    assert_eq!(s, b.encode(&x, None).unwrap());
    let one = a.encode(&x[..1], None).unwrap();
    assert_eq!(one.shape(), &[1, 64]);
    assert!(one.all_finite());
    assert!(a.encode(&vec![65; 513], None).is_err());
}

#[test]
fn base_preset_builds_count() {
    let c = ModelConfig::preset(Preset::Base);
    assert!(c.parameter_count() > 100_000_000);
    let t = toy(0);
    assert_eq!(t.parameter_count(), t.config().parameter_count());
}

#[test]
fn pad_tail_does_not_leak() {
    let m = toy(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut x = random_dna(40, &mut rng);
    let mask: Vec<bool> = (0..40).map(|i| i < 30).collect();
    let a = m.encode(&x, Some(&mask)).unwrap();
    for t in &mut x[30..] {
        *t = b'G' as TokenId;
    }
    x[35] = PAD;
    let b = m.encode(&x, Some(&mask)).unwrap();
    for i in 0..30 {
        assert_eq!(a.row(i), b.row(i));
    }
    let bad: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
    assert!(m.encode(&x, Some(&bad)).is_err());
}

#[test]
fn sliding_receptive_field() {
    let mut cfg = ModelConfig::toy();
    cfg.encoder_attention.kind = EncoderAttentionKind::Sliding;
    let m = Model::build(cfg.clone(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = random_dna(120, &mut rng);
    let a = m.encode(&x, None).unwrap();
    x[0] = if x[0] == b'A' as TokenId { b'C' as TokenId } else { b'A' as TokenId };
    let b = m.encode(&x, None).unwrap();
    let reach: usize = cfg.encoder_attention.radii.iter().sum();
    assert!(a.row(reach) != b.row(reach) || a.row(1) != b.row(1));
    for i in reach + 1..120 {
        assert_eq!(a.row(i), b.row(i), "row {i}");
    }
}

#[test]
fn decoder_is_causal() {
    let m = toy(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let src = random_dna(20, &mut rng);
    let states = m.encode(&src, None).unwrap();
    let mut prefix = random_dna(10, &mut rng);
    let a = m.decode_logits(&prefix, &states).unwrap();
    assert_eq!(a.shape(), &[11, VOCAB_SIZE]);
    prefix[5] = if prefix[5] == b'T' as TokenId { b'G' as TokenId } else { b'T' as TokenId };
    let b = m.decode_logits(&prefix, &states).unwrap();
    for t in 0..=5 {
        assert_eq!(a.row(t), b.row(t));
    }
    assert_ne!(a.row(6), b.row(6));
    let empty = m.decode_logits(&[], &states).unwrap();
    assert_eq!(empty.shape(), &[1, VOCAB_SIZE]);
    let p = crate::numerics::ops::softmax(&a, 1).unwrap();
    for t in 0..11 {
        assert!((p.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn classifier_outputs_distribution() {
    let mut m = toy(5);
    assert!(m.classify(&encode(b"ACGT")).is_err());
    m.attach_classifier(2).unwrap();
    let p = m.classify(&encode(b"ACGTACGGT")).unwrap();
    assert_eq!(p.len(), 2);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(p, m.classify(&encode(b"ACGTACGGT")).unwrap());
    assert!(m.attach_classifier(3).is_err());
}

#[test]
fn incremental_decoding_matches_full_pass() {
    let m = toy(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let src = random_dna(30, &mut rng);
    let prefix = random_dna(12, &mut rng);
    let states = m.encode(&src, None).unwrap();
    let full = m.decode_logits(&prefix, &states).unwrap();
    let mem = m.memory_from_states(&states).unwrap();
    let mut st = m.decoder_start();
    let mut input = vec![PAD];
    input.extend_from_slice(&prefix);
    for (t, &tok) in input.iter().enumerate() {
        let logits = m.decoder_step(&mem, &mut st, tok).unwrap();
        let diff = logits
            .iter()
            .zip(full.row(t))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "position {t}: {diff}");
    }
}

#[test]
fn beam_of_one_is_greedy_and_beams_are_sorted() {
    let m = toy(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let src = random_dna(16, &mut rng);
        let greedy = m.generate_greedy(&src, 12).unwrap();
        let beam = m.generate_beam(&src, 1, 12).unwrap();
        assert_eq!(beam.len(), 1);
        assert_eq!(beam[0].tokens, greedy);
    }
    let src = random_dna(16, &mut rng);
    let beams = m.generate_beam(&src, 5, 10).unwrap();
    assert_eq!(beams.len(), 5);
    for w in beams.windows(2) {
        assert!(w[0].score >= w[1].score);
    }
    for b in &beams {
        let s = m.sequence_score(&src, &b.tokens, b.finished).unwrap();
        assert!((s - b.score).abs() < 1e-9);
    }
    let greedy = m.generate_greedy(&src, 10).unwrap();
    let finished = greedy.len() < 10;
    let gs = m.sequence_score(&src, &greedy, finished).unwrap();
    assert!(beams[0].score >= gs - 1e-12);
}

#[test]
fn attention_maps_per_head() {
    let m = toy(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_dna(64, &mut rng);
    let maps = m.export_attention_maps(&x).unwrap();
    assert_eq!(maps.len(), 4 * 4);
    for map in &maps {
        assert_eq!(map.weights.rows(), 64);
        for i in 0..64 {
            assert!((map.weights.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(maps[0].weights.cols(), 2 * 8 + 1 + 4);
    let mut cfg = ModelConfig::toy();
    cfg.encoder_attention.kind = EncoderAttentionKind::Dense;
    let dense = Model::build(cfg, 8).unwrap();
    let maps = dense.export_attention_maps(&x[..16]).unwrap();
    assert_eq!(maps[0].weights.shape(), &[16, 16]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = toy(9);
    m.attach_classifier(2).unwrap();
    save_checkpoint(dir.path(), &m, 17, None).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.step, 17);
    assert_eq!(loaded.model.n_classes(), Some(2));
    for id in m.params().ids() {
        let a = m.params().get(id);
        let b = loaded.model.params().get(id);
        assert!(a.max_abs_diff(b) < 1e-6 * a.data().iter().fold(1.0f64, |x, y| x.max(y.abs())));
    }
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(dir2.path(), &loaded.model, 17, None).unwrap();
    let blob = |d: &std::path::Path| std::fs::read(d.join("params.bin")).unwrap();
    assert_eq!(blob(dir.path()), blob(dir2.path()));
}

/// Central differences through the whole encoder-decoder in training mode
/// (fixed dropout masks), every parameter probed.
#[test]
fn full_model_grad_check() {
    let mut cfg = ModelConfig::toy();
    cfg.encoder_attention.radii = vec![2, 2, 3, 3];
    cfg.encoder_attention.global_blocks = 2;
    let mut m = Model::build(cfg, 11).unwrap();
    m.attach_classifier(3).unwrap();
    for id in m.params().ids().collect::<Vec<_>>() {
        let name = m.params().name(id).to_string();
        if name.ends_with("relative_bias") || name.ends_with("norm") || name == "classifier.bias" {
            let mut rng = ChaCha8Rng::seed_from_u64(id.0 as u64);
            for x in m.params_mut().get_mut(id).data_mut() {
                *x += rng.random::<f64>() * 0.4 - 0.2;
            }
        }
    }
    let src: Vec<TokenId> = encode(b"ACGTTGCAAGTC");
    let mut tgt: Vec<TokenId> = encode(b"GATTACA");
    tgt.push(EOS);
    let loss = |model: &Model, grads: bool| -> (f64, Vec<(ParamId, NdArray)>) {
        let mut g = Graph::training(99);
        let (l, c) = {
            let mut f = Forward::new(&mut g, model, if grads { Trainable::All } else { Trainable::None });
            let l = f.seq2seq_loss(&src, &tgt).unwrap();
            let c = f.classification_loss(&src, 1).unwrap();
            (l, c)
        };
        let total = g.add(l, c).unwrap();
        let value = g.value(total).data()[0];
        if !grads {
            return (value, Vec::new());
        }
        let gr = g.backward(total).unwrap();
        (value, gr.param_grads(&g))
    };
    let (_, grads) = loss(&m, true);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in m.params().ids().collect::<Vec<_>>() {
        let n = m.params().get(id).len();
        let analytic = grads.iter().find(|(g, _)| *g == id).map(|(_, a)| a.clone());
        let analytic = analytic.unwrap_or_else(|| NdArray::zeros(m.params().get(id).shape()));
        let step = (n / 3).max(1);
        for idx in (0..n).step_by(step).take(3) {
            let orig = m.params().get(id).data()[idx];
            m.params_mut().get_mut(id).data_mut()[idx] = orig + h;
            let plus = loss(&m, false).0;
            m.params_mut().get_mut(id).data_mut()[idx] = orig - h;
            let minus = loss(&m, false).0;
            m.params_mut().get_mut(id).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = relative_error(analytic.data()[idx], numeric);
            assert!(rel < 1e-4, "{} [{idx}]: analytic {} numeric {numeric}", m.params().name(id), analytic.data()[idx]);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 100);
}
