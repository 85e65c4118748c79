use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::init::normal;
use crate::nn::{Graph, ParamStore, Tensor};

fn tiny(copy: bool, mode: PositionMode) -> ModelConfig {
    ModelConfig {
        layers: 1,
        d_model: 8,
        d_ff: 12,
        heads: 2,
        rel_radius: 2,
        position_mode: mode,
        copy_decoder: copy,
        vocab_size: 11,
        dropout: 0.0,
        label_smoothing: 0.1,
        init_seed: 5,
        ..ModelConfig::default()
    }
}

/// Closed-form weight count of the stack built by `Transformer::new`.
fn expected_weights(c: &ModelConfig) -> usize {
    let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
    let attn = 4 * (d * d + d);
    let rel = if c.relative() { 2 * (2 * c.rel_radius + 1) * (d / c.heads) } else { 0 };
    let ln = 2 * d;
    let ff = d * f + f + f * d + d;
    let enc = attn + rel + 2 * ln + ff;
    let dec = 2 * attn + rel + 3 * ln + ff;
    let copy = if c.copy_decoder { d + 1 } else { 0 };
    v * d + c.layers * (enc + dec) + 2 * ln + d * v + v + copy
}

#[test]
fn weight_count_matches_closed_form() {
    let c = ModelConfig { vocab_size: 538, ..ModelConfig::default() };
    let m = Transformer::<f32>::new(c.clone()).unwrap();
    assert_eq!(m.num_weights(), expected_weights(&c));
    assert_eq!(m.num_weights(), 776_602);
    let c = ModelConfig { copy_decoder: true, ..c };
    assert_eq!(Transformer::<f32>::new(c).unwrap().num_weights(), 776_667);
}

#[test]
fn init_is_deterministic() {
    let a = Transformer::<f32>::new(tiny(true, PositionMode::RelativeClipped)).unwrap();
    let b = Transformer::<f32>::new(tiny(true, PositionMode::RelativeClipped)).unwrap();
    for ((_, p), (_, q)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

fn loss_value(m: &Transformer<f64>, src: &[usize], tgt: &[usize]) -> f64 {
    let mut g = Graph::new();
    let l = m.loss(&mut g, &[(src, tgt)], None).unwrap();
    g.value(l).item()
}

fn grad_check(config: ModelConfig) {
    let mut m = Transformer::<f64>::new(config).unwrap();
    let src = [7, 8, 9, 10, 7];
    let tgt = [9, 7, 10, 5, 2];
    let mut g = Graph::new();
    let l = m.loss(&mut g, &[(&src[..], &tgt[..])], None).unwrap();
    g.backward(l, &mut m.params).unwrap();
    let analytic: Vec<Tensor<f64>> = m.params.iter().map(|(_, p)| p.grad.clone()).collect();
    let names: Vec<String> = m.params.iter().map(|(_, p)| p.name.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for (pi, name) in names.iter().enumerate() {
        let id = m.params.find(name).unwrap();
        let n = m.params.get(id).value.len();
        let picks: Vec<usize> = if n <= 4 { (0..n).collect() } else { (0..4).map(|_| rng.gen_range(0..n)).collect() };
        for k in picks {
            let orig = m.params.get(id).value.data()[k];
            m.params.get_mut(id).value.data_mut()[k] = orig + h;
            let up = loss_value(&m, &src, &tgt);
            m.params.get_mut(id).value.data_mut()[k] = orig - h;
            let down = loss_value(&m, &src, &tgt);
            m.params.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[k];
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-7 {
                continue;
            }
            let rel = (a - numeric).abs() / scale;
            assert!(rel < 1e-3, "{name}[{k}]: analytic {a} numeric {numeric} rel {rel}");
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3);
}

#[test]
fn gradients_match_finite_differences_relative_copy() {
    grad_check(tiny(true, PositionMode::RelativeClipped));
}

#[test]
fn gradients_match_finite_differences_absolute() {
    grad_check(tiny(false, PositionMode::AbsoluteSinusoidal));
}

#[test]
fn decoder_is_causal() {
    let m = Transformer::<f64>::new(tiny(true, PositionMode::RelativeClipped)).unwrap();
    let src = [7, 8, 9];
    let run = |dec: &[usize]| {
        let mut g = Graph::new();
        let mem = m.encode(&mut g, &src, None).unwrap();
        let out = m.decode(&mut g, mem, &src, dec, None).unwrap();
        g.value(out).clone()
    };
    let a = run(&[1, 7, 8, 9, 10]);
    let b = run(&[1, 7, 8, 4, 3]);
    for i in 0..3 {
        assert_eq!(a.row(i), b.row(i), "row {i} saw a future token");
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn relative_scores_are_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let p = AttentionParams::new(&mut store, &mut rng, "a", 8, 2, Some(3));
    let x = normal::<f64, _>(&mut rng, &[6, 8], 1.0);
    let run = |offset: i64| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let pos: Vec<i64> = (0..6).map(|i| i + offset).collect();
        let positions = Positions { query: &pos, key: &pos };
        let out = attention(&mut g, &store, &p, xv, xv, None, Some(positions)).unwrap();
        out.logits.iter().map(|&v| g.value(v).clone()).collect::<Vec<_>>()
    };
    let base = run(0);
    for shift in [1, 17, 1000] {
        assert_eq!(run(shift), base, "shift {shift}");
    }
}

#[test]
fn copy_mix_is_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = Graph::<f64>::new();
    let raw = g.constant(normal(&mut rng, &[3, 6], 1.0));
    let p = g.softmax(raw, None).unwrap();
    let raw_a = g.constant(normal(&mut rng, &[3, 4], 1.0));
    let alpha = g.softmax(raw_a, None).unwrap();
    let gate = g.constant(Tensor::new(vec![3, 1], vec![0.0, 0.3, 1.0]).unwrap());
    let mix = copy_mix(&mut g, p, alpha, &[2, 5, 2, 0], gate).unwrap();
    let mix = g.value(mix).clone();
    for i in 0..3 {
        assert!((mix.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // gate 1 keeps the vocabulary distribution
    assert_eq!(mix.row(2), g.value(p).row(2));
    // gate 0 only places mass on source tokens
    assert!(mix.row(0)[1] == 0.0 && mix.row(0)[3] == 0.0 && mix.row(0)[4] == 0.0);
}

#[test]
fn overlength_is_rejected() {
    let c = ModelConfig { max_len: 4, ..tiny(false, PositionMode::RelativeClipped) };
    let m = Transformer::<f32>::new(c).unwrap();
    let mut g = Graph::new();
    let err = m.forward_teacher_forced(&mut g, &[7; 5], &[7], None).unwrap_err();
    assert!(matches!(err, crate::Error::Overlength { len: 5, max: 4 }));
}

#[test]
fn greedy_decode_is_bounded() {
    let m = Transformer::<f32>::new(tiny(true, PositionMode::RelativeClipped)).unwrap();
    let out = decode_greedy(&m, &[7, 8], 6).unwrap();
    assert!(out.len() <= 6);
    assert!(out.iter().all(|&t| t < 11 && t != crate::vocab::EOS));
}
