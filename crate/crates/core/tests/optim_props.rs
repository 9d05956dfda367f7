use podscale::optim::{
    adam_step, lars_scaled_step, lars_unscaled_step, lr_schedule, sharded_weight_update, trust_ratio, AdamConfig, LarsConfig, Optimizer,
    OptimizerState, ScheduleKind, Slot, WeightShardLayout, PRESET_NAMES,
};
use podscale::tensor::Tensor;
use podscale::torus::{TorusTopology, WeightSet};
use proptest::prelude::*;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4.0f32..4.0, n)
}

/// Weights, gradients and velocities of one shared length.
fn triple() -> impl Strategy<Value = (Vec<f32>, Vec<f32>, Vec<f32>)> {
    (1usize..40).prop_flat_map(|n| (vec_of(n), vec_of(n), vec_of(n)))
}

fn t(v: &[f32]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).unwrap()
}

fn cfg(momentum: f64, weight_decay: f64) -> LarsConfig {
    LarsConfig { epsilon: 0.001, weight_decay, momentum, base_lr: 1.0, warmup_epochs: 5.0, total_epochs: 50.0, schedule: ScheduleKind::WarmupPoly2 }
}

fn weight_set(sizes: &[usize], salt: f32) -> WeightSet {
    let entries =
        sizes.iter().enumerate().map(|(i, &n)| (format!("w{i}"), Tensor::from_fn(&[n], |j| ((i * 31 + j) as f32 * 0.37 + salt).sin()))).collect();
    WeightSet::new(entries).unwrap()
}

proptest! {
    #[test]
    fn zero_momentum_variants_agree((w, g, v) in triple(), eta in 0.0f64..40.0, beta in 0.0f64..1e-3) {
        let slot = Slot { first: t(&v), second: None };
        let c = cfg(0.0, beta);
        let (ws, vs) = lars_scaled_step(&t(&w), &t(&g), &slot, &c, eta).unwrap();
        let (wu, _) = lars_unscaled_step(&t(&w), &t(&g), &slot, &c, eta).unwrap();
        prop_assert!(ws.bitwise_eq(&wu));
        // Without momentum the old velocity has no influence.
        let fresh = Slot { first: Tensor::zeros(&[w.len()]), second: None };
        let (w0, v0) = lars_scaled_step(&t(&w), &t(&g), &fresh, &c, eta).unwrap();
        prop_assert!(ws.bitwise_eq(&w0) && vs.first.bitwise_eq(&v0.first));
    }

    #[test]
    fn trust_ratio_is_scale_free_without_decay((w, g, _) in triple(), a in 0.01f64..100.0) {
        let lam = trust_ratio(&t(&w), &t(&g), 0.001, 0.0);
        prop_assume!(lam > 0.0);
        let scaled_g: Vec<f32> = g.iter().map(|&x| x * a as f32).collect();
        let scaled_w: Vec<f32> = w.iter().map(|&x| x * a as f32).collect();
        let lg = trust_ratio(&t(&w), &t(&scaled_g), 0.001, 0.0);
        let lw = trust_ratio(&t(&scaled_w), &t(&g), 0.001, 0.0);
        prop_assert!((lg * a / lam - 1.0).abs() < 1e-5);
        prop_assert!((lw / (a * lam) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn trust_ratio_is_bounded((w, g, _) in triple(), beta in 1e-6f64..1.0) {
        let lam = trust_ratio(&t(&w), &t(&g), 0.001, beta);
        prop_assert!(lam >= 0.0 && lam <= 0.001 / beta * (1.0 + 1e-12));
    }

    #[test]
    fn schedule_shape(base in 0.1f64..40.0, warmup in 0.5f64..30.0, extra in 0.5f64..60.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let c = LarsConfig { base_lr: base, warmup_epochs: warmup, total_epochs: warmup + extra, ..cfg(0.9, 5e-5) };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(lr_schedule(lo * warmup, &c) <= lr_schedule(hi * warmup, &c));
        let after = |f: f64| warmup + f * extra;
        prop_assert!(lr_schedule(after(lo), &c) >= lr_schedule(after(hi), &c));
        prop_assert!((lr_schedule(warmup, &c) - base).abs() <= 1e-12 * base);
        prop_assert!((lr_schedule(warmup * (1.0 - 1e-9), &c) - base).abs() <= 1e-6 * base);
        prop_assert_eq!(lr_schedule(c.total_epochs, &c), 0.0);
        prop_assert!(lr_schedule(hi * (warmup + extra), &c) <= base * (1.0 + 1e-12));
    }

    #[test]
    fn sharded_update_matches_replicated(
        sizes in prop::collection::vec(1usize..30, 1..8),
        rows in 1usize..3,
        cols in 1usize..4,
        preset in prop::sample::select(PRESET_NAMES.to_vec()),
        steps in 1usize..4,
    ) {
        let opt = Optimizer::preset(preset).unwrap();
        let topo = TorusTopology::new(rows, cols).unwrap();
        let n = topo.num_cores();
        let weights = weight_set(&sizes, 0.0);
        let layout = WeightShardLayout::balanced(&weights, n).unwrap();
        let mut replicated = (weights.clone(), OptimizerState::new(&opt, &weights));
        let mut sharded = vec![weights.clone(); n];
        let mut states: Vec<_> = (0..n).map(|c| OptimizerState::for_core(&opt, &weights, &layout, c)).collect();
        for s in 0..steps {
            let grads = weight_set(&sizes, 1.0 + s as f32);
            let eta = opt.rate(s as f64 * 0.5);
            replicated = opt.step(&replicated.0, &grads, &replicated.1, eta).unwrap();
            sharded = sharded_weight_update(&vec![grads; n], &sharded, &mut states, &layout, &opt, eta, &topo).unwrap();
            prop_assert!(sharded.iter().all(|w| w.bitwise_eq(&replicated.0)));
        }
    }

    #[test]
    fn layout_covers_every_tensor_once(sizes in prop::collection::vec(1usize..100, 0..12), cores in 1usize..9) {
        let layout = WeightShardLayout::balanced(&weight_set(&sizes, 0.0), cores).unwrap();
        let mut order = layout.order().to_vec();
        order.sort_unstable();
        prop_assert_eq!(order, (0..sizes.len()).collect::<Vec<_>>());
        let total: usize = sizes.iter().sum();
        prop_assert_eq!((0..cores).map(|c| layout.range(c).len()).sum::<usize>(), total);
        let max = sizes.iter().copied().max().unwrap_or(0);
        let loads: Vec<usize> = (0..cores).map(|c| layout.range(c).len()).collect();
        let (lo, hi) = (*loads.iter().min().unwrap(), *loads.iter().max().unwrap());
        prop_assert!(hi - lo <= max);
    }

    #[test]
    fn first_adam_step_moves_by_about_lr(g in prop::collection::vec(0.01f32..4.0, 1..20), neg in any::<bool>(), lr in 1e-4f64..1e-1) {
        let g: Vec<f32> = g.iter().map(|&x| if neg { -x } else { x }).collect();
        let w = vec![0.5f32; g.len()];
        let slot = Optimizer::Adam { config: AdamConfig::default() }.init_slot(&t(&w));
        let (w2, _) = adam_step(&t(&w), &t(&g), &slot, &AdamConfig::default(), lr, 1).unwrap();
        for (a, b) in w.iter().zip(w2.data()) {
            let moved = (a - b) as f64 * if neg { -1.0 } else { 1.0 };
            prop_assert!((moved / lr - 1.0).abs() < 1e-3);
        }
    }
}

#[test]
fn presets_roundtrip_through_json() {
    for name in PRESET_NAMES {
        let opt = Optimizer::preset(name).unwrap();
        let text = serde_json::to_string(&opt).unwrap();
        assert_eq!(serde_json::from_str::<Optimizer>(&text).unwrap(), opt);
        opt.validate().unwrap();
    }
    assert!(Optimizer::preset("scaled-31.3").is_none());
}

#[test]
fn zero_norm_weight_is_left_alone() {
    let w = t(&[0.0, -0.0, 0.0]);
    let g = t(&[1.0, -2.0, 3.0]);
    for variant in [lars_scaled_step, lars_unscaled_step] {
        let slot = Slot { first: Tensor::zeros(&[3]), second: None };
        let (w2, _) = variant(&w, &g, &slot, &cfg(0.9, 5e-5), 10.0).unwrap();
        assert_eq!(w2.data(), w.data());
    }
}
