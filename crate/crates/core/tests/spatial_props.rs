use podscale::spatial::{
    assemble_output, batch_norm_train, distributed_batch_norm, halo_exchange, load_imbalance_report, plan_partition, scatter_input, sharded_conv2d,
    AxisMode, ShardSpec,
};
use podscale::tensor::{conv2d, ConvParams, Padding, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

#[derive(Debug, Clone)]
struct Case {
    input: [usize; 4],
    params: ConvParams,
    spec: ShardSpec,
    seed: u64,
}

fn case() -> impl Strategy<Value = Case> {
    (
        prop::sample::select(vec![1usize, 3, 5]),
        1usize..3,
        1usize..3,
        1usize..3,
        1usize..3,
        prop::sample::select(vec![1usize, 2]),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_flat_map(|(k, gh, gw, splits, c, stride, same, seed)| {
            let stride = if same { stride } else { 1 };
            let min_tile = (k / 2).max(stride).max(1);
            (Just((k, gh, gw, splits, c, stride, same, seed)), min_tile..5, min_tile..5, 1usize..3)
        })
        .prop_map(|((k, gh, gw, splits, c, stride, same, seed), th, tw, per_split)| {
            // SAME tiles must be stride multiples so output ownership lines up.
            let round = |t: usize| if same { t.div_ceil(stride) * stride } else { t };
            Case {
                input: [splits * per_split, gh * round(th), gw * round(tw), c],
                params: ConvParams {
                    kernel_size: k,
                    stride,
                    padding: if same { Padding::Same } else { Padding::Valid },
                    in_channels: c,
                    out_channels: 2,
                },
                spec: ShardSpec { grid_h: gh, grid_w: gw, batch_splits: splits },
                seed,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sharded_conv_equals_monolithic(c in case()) {
        let plan = match plan_partition(c.input, &c.params, &c.spec) {
            Ok(p) => p,
            // VALID tiles smaller than the kernel are a documented planning error.
            Err(_) if c.params.padding == Padding::Valid => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let x = random(&c.input, &mut rng);
        let k = random(&[c.params.kernel_size, c.params.kernel_size, c.params.in_channels, 2], &mut rng);
        let shards = scatter_input(&x, &plan).unwrap();
        let got = assemble_output(&sharded_conv2d(&shards, &k, &c.params, &plan).unwrap(), &plan).unwrap();
        prop_assert!(got.bitwise_eq(&conv2d(&x, &k, &c.params).unwrap()));
    }

    #[test]
    fn slices_tile_the_input(c in case()) {
        let Ok(plan) = plan_partition(c.input, &c.params, &c.spec) else { return Ok(()) };
        let [n, h, w, _] = c.input;
        let mut covered = vec![0u32; n * h * w];
        for core in &plan.cores {
            let contributes = (plan.row_mode == AxisMode::Split || core.cell.1 == 0) && (plan.col_mode == AxisMode::Split || core.cell.2 == 0);
            if !contributes {
                continue;
            }
            for b in core.batch.clone() {
                for r in core.rows.clone() {
                    for col in core.cols.clone() {
                        covered[(b * h + r) * w + col] += 1;
                    }
                }
            }
        }
        prop_assert!(covered.iter().all(|&v| v == 1));
    }

    #[test]
    fn halo_widths_follow_the_kernel(gh in 1usize..4, gw in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let t = (k / 2).max(1) + 1;
        let plan = plan_partition([1, gh * t, gw * t, 1], &ConvParams::same(k, 1, 1), &ShardSpec::spatial(gh, gw)).unwrap();
        for core in &plan.cores {
            let (_, r, c) = core.cell;
            let want = |interior: bool| if interior { k / 2 } else { 0 };
            prop_assert_eq!(core.halo.top, want(r > 0));
            prop_assert_eq!(core.halo.bottom, want(r + 1 < gh));
            prop_assert_eq!(core.halo.left, want(c > 0));
            prop_assert_eq!(core.halo.right, want(c + 1 < gw));
        }
    }

    #[test]
    fn distributed_bn_matches_concatenated(sizes in prop::collection::vec(1usize..6, 1..6), f in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shards: Vec<Tensor> = sizes.iter().map(|&n| random(&[n, f], &mut rng)).collect();
        let group: Vec<usize> = (0..shards.len()).collect();
        let got = Tensor::concat_rows(&distributed_batch_norm(&shards, &group).unwrap()).unwrap();
        let all = Tensor::concat_rows(&shards).unwrap();
        let want = &batch_norm_train(&[&all], &vec![1.0; f], &vec![0.0; f]).unwrap().outputs[0];
        prop_assert!(got.max_abs_diff(want) <= 1e-6);
    }

    #[test]
    fn imbalance_puts_the_unsharded_work_on_core_zero(g in 1usize..4, frac in 0.0f64..=1.0) {
        let plan = plan_partition([1, 4 * g, 4, 1], &ConvParams::same(3, 1, 1), &ShardSpec::spatial(g, 1)).unwrap();
        let r = load_imbalance_report(&plan, frac).unwrap();
        prop_assert!(r.per_core.iter().skip(1).all(|&v| v <= r.per_core[0]));
        prop_assert!(r.max_over_mean >= 1.0 - 1e-12);
    }
}

#[test]
fn two_core_halo_example() {
    let x = Tensor::from_fn(&[1, 4, 1, 1], |i| i as f32);
    let plan = plan_partition([1, 4, 1, 1], &ConvParams::same(3, 1, 1), &ShardSpec::spatial(2, 1)).unwrap();
    let ext = halo_exchange(&scatter_input(&x, &plan).unwrap(), &plan).unwrap();
    // Core 0 gets row 2 below its rows {0, 1}; core 1 gets row 1 above {2, 3}.
    // Global edges, including both sides of the single column, are zero-padded.
    let centre = |t: &Tensor| t.data().chunks(3).map(|r| r[1]).collect::<Vec<_>>();
    assert_eq!(centre(&ext[0]), [0.0, 0.0, 1.0, 2.0]);
    assert_eq!(centre(&ext[1]), [1.0, 2.0, 3.0, 0.0]);
    assert!(ext.iter().all(|t| t.shape() == [1, 4, 3, 1]));
}

#[test]
fn oversized_grids_are_rejected() {
    let p = ConvParams::same(3, 3, 4);
    assert!(plan_partition([2, 8, 8, 3], &p, &ShardSpec::spatial(1, 18_888_888_882_880)).is_err());
    assert!(plan_partition([2, 8, 8, 3], &p, &ShardSpec { grid_h: usize::MAX, grid_w: 2, batch_splits: 1 }).is_err());
}
