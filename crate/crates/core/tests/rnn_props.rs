use podscale::rnn::{
    lstm_backward_deferred, lstm_backward_stepwise, lstm_forward_hoisted, lstm_forward_masked, lstm_forward_standard, LstmParams, LstmState,
};
use podscale::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
struct Dims {
    t: usize,
    b: usize,
    f: usize,
    h: usize,
    seed: u64,
}

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..7, 1usize..5, 1usize..6, 1usize..6, any::<u64>()).prop_map(|(t, b, f, h, seed)| Dims { t, b, f, h, seed })
}

fn setup(d: &Dims) -> (Tensor, LstmParams, LstmState, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let x = Tensor::from_fn(&[d.t, d.b, d.f], |_| rng.random_range(-1.0f32..1.0));
    let p = LstmParams::random(d.f, d.h, 0.5, &mut rng);
    let init = LstmState {
        h: Tensor::from_fn(&[d.b, d.h], |_| rng.random_range(-0.5f32..0.5)),
        c: Tensor::from_fn(&[d.b, d.h], |_| rng.random_range(-0.5f32..0.5)),
    };
    (x, p, init, rng)
}

fn rel_inf(a: &Tensor, b: &Tensor) -> f32 {
    a.max_abs_diff(b) / b.data().iter().fold(1e-12f32, |m, v| m.max(v.abs()))
}

/// Batch row `r` of a `[T, B, ...]` or `[B, ...]` tensor, kept as batch size 1.
fn row(t: &Tensor, r: usize, time_major: bool) -> Tensor {
    let s = t.shape();
    if time_major {
        let inner: usize = s[2..].iter().product();
        let mut shape = s.to_vec();
        shape[1] = 1;
        Tensor::from_fn(&shape, |i| t.data()[(i / inner) * s[1] * inner + r * inner + i % inner])
    } else {
        let inner: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = 1;
        Tensor::from_fn(&shape, |i| t.data()[r * inner + i])
    }
}

proptest! {
    #[test]
    fn hoisting_is_bitwise_neutral(d in dims(), lens in prop::collection::vec(0usize..7, 4)) {
        let (x, p, init, _) = setup(&d);
        let a = lstm_forward_standard(&x, &p, &init).unwrap();
        let b = lstm_forward_hoisted(&x, &p, &init).unwrap();
        prop_assert!(a.h_seq.bitwise_eq(&b.h_seq));
        prop_assert!(a.final_state.c.bitwise_eq(&b.final_state.c));
        prop_assert_eq!(a.stats.calls, d.t);
        prop_assert_eq!((b.stats.calls, b.stats.rows_per_call), (1, d.t * d.b));

        let lengths: Vec<usize> = lens.iter().take(d.b).map(|&l| l.min(d.t)).chain(std::iter::repeat(d.t)).take(d.b).collect();
        let ms = lstm_forward_masked(&x, &lengths, &p, &init, false).unwrap();
        let mh = lstm_forward_masked(&x, &lengths, &p, &init, true).unwrap();
        prop_assert!(ms.h_seq.bitwise_eq(&mh.h_seq) && ms.final_state.h.bitwise_eq(&mh.final_state.h));
    }

    #[test]
    fn full_lengths_match_unmasked(d in dims()) {
        let (x, p, init, _) = setup(&d);
        let plain = lstm_forward_standard(&x, &p, &init).unwrap();
        let masked = lstm_forward_masked(&x, &vec![d.t; d.b], &p, &init, true).unwrap();
        prop_assert!(plain.h_seq.bitwise_eq(&masked.h_seq));
        prop_assert!(plain.final_state.h.bitwise_eq(&masked.final_state.h));
    }

    #[test]
    fn padding_never_reaches_real_steps(d in dims(), len in 0usize..7) {
        let (x, p, init, mut rng) = setup(&d);
        let len = len.min(d.t);
        let lengths = vec![len; d.b];
        // Garbage in the padded steps must not change anything.
        let noisy = Tensor::from_fn(x.shape(), |i| if i / (d.b * d.f) < len { x.data()[i] } else { rng.random_range(-9.0f32..9.0) });
        let a = lstm_forward_masked(&x, &lengths, &p, &init, true).unwrap();
        let b = lstm_forward_masked(&noisy, &lengths, &p, &init, true).unwrap();
        prop_assert!(a.h_seq.bitwise_eq(&b.h_seq));
        prop_assert!(a.final_state.h.bitwise_eq(&b.final_state.h) && a.final_state.c.bitwise_eq(&b.final_state.c));
        let hb = d.b * d.h;
        prop_assert!(a.h_seq.data()[len * hb..].iter().all(|&v| v == 0.0));
        if len == 0 {
            prop_assert!(a.final_state.h.bitwise_eq(&init.h));
        }
    }

    #[test]
    fn rows_are_independent(d in dims()) {
        let (x, p, init, _) = setup(&d);
        let all = lstm_forward_hoisted(&x, &p, &init).unwrap();
        for r in 0..d.b {
            let one = LstmState { h: row(&init.h, r, false), c: row(&init.c, r, false) };
            let alone = lstm_forward_hoisted(&row(&x, r, true), &p, &one).unwrap();
            prop_assert!(alone.h_seq.bitwise_eq(&row(&all.h_seq, r, true)));
        }
    }

    #[test]
    fn deferred_backward_matches_stepwise(d in dims(), masked in any::<bool>()) {
        let (x, p, init, mut rng) = setup(&d);
        let out = if masked {
            let lengths: Vec<usize> = (0..d.b).map(|_| rng.random_range(0..=d.t)).collect();
            lstm_forward_masked(&x, &lengths, &p, &init, true).unwrap()
        } else {
            lstm_forward_hoisted(&x, &p, &init).unwrap()
        };
        let dh = Tensor::from_fn(&[d.t, d.b, d.h], |_| rng.random_range(-1.0f32..1.0));
        let fin = LstmState {
            h: Tensor::from_fn(&[d.b, d.h], |_| rng.random_range(-1.0f32..1.0)),
            c: Tensor::from_fn(&[d.b, d.h], |_| rng.random_range(-1.0f32..1.0)),
        };
        let s = lstm_backward_stepwise(&out, &p, &dh, Some(&fin)).unwrap();
        let g = lstm_backward_deferred(&out, &p, &dh, Some(&fin)).unwrap();
        prop_assert!(rel_inf(&g.w_x, &s.w_x) <= 1e-4);
        prop_assert!(rel_inf(&g.w_h, &s.w_h) <= 1e-4);
        prop_assert!(rel_inf(&g.bias, &s.bias) <= 1e-4);
        prop_assert!(g.x.bitwise_eq(&s.x) || rel_inf(&g.x, &s.x) <= 1e-4);
        prop_assert!(rel_inf(&g.init.h, &s.init.h) <= 1e-4);
    }
}
