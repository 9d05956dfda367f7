use podscale::tensor::Tensor;
use podscale::train::{build_model, evaluate, generate_task, masked_top1, pad_eval_dataset, InputShape, ModelSpec, TaskSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn task(eval_examples: usize) -> TaskSpec {
    TaskSpec { classes: 3, train_examples: 8, eval_examples, noise: 1.0, input: InputShape::Sequence { steps: 3, features: 2 } }
}

proptest! {
    #[test]
    fn eval_padding_invariants(n in 1usize..60, cores in 1usize..9, per in 1usize..9, seed in any::<u64>()) {
        let (_, eval) = generate_task(&task(n), seed).unwrap();
        let e = pad_eval_dataset(&eval, cores, per).unwrap();
        let global = cores * per;
        prop_assert_eq!(e.padded_count() % global, 0);
        prop_assert!(e.padded_count() - n < global);
        prop_assert_eq!(e.mask.iter().filter(|&&m| m).count(), n);
        prop_assert!(e.mask[..n].iter().all(|&m| m));
        prop_assert_eq!(e.data.inputs.shape()[0], e.padded_count());
        let per_example = 6;
        prop_assert_eq!(&e.data.inputs.data()[..n * per_example], eval.inputs.data());
        prop_assert!(e.data.inputs.data()[n * per_example..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_rows_do_not_count(rows in 1usize..20, classes in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::from_fn(&[rows, classes], |_| rng.random_range(-1.0f32..1.0));
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let mask: Vec<bool> = (0..rows).map(|_| rng.random_bool(0.6)).collect();
        let (c, r) = masked_top1(std::slice::from_ref(&logits), &[&labels], &[&mask]).unwrap();
        prop_assert_eq!(r, mask.iter().filter(|&&m| m).count());
        // Scrambling the padded rows' logits and labels changes nothing.
        let scrambled = Tensor::from_fn(&[rows, classes], |i| if mask[i / classes] { logits.data()[i] } else { 100.0 * (i % classes) as f32 });
        let other: Vec<usize> = labels.iter().zip(&mask).map(|(&y, &m)| if m { y } else { classes - 1 }).collect();
        prop_assert_eq!(masked_top1(&[scrambled], &[&other], &[&mask]).unwrap(), (c, r));
    }

    #[test]
    fn accuracy_does_not_depend_on_eval_layout(n in 1usize..40, cores in 1usize..5, per in 1usize..7, seed in any::<u64>()) {
        let spec = task(n);
        let (_, eval) = generate_task(&spec, seed).unwrap();
        let model = build_model(&ModelSpec::Lstm { hidden: 4 }, &spec.input, spec.classes).unwrap();
        let w = model.init_weights(&mut ChaCha8Rng::seed_from_u64(seed));
        let reference = evaluate(model.as_ref(), std::slice::from_ref(&w), &pad_eval_dataset(&eval, 1, n).unwrap()).unwrap();
        let got = evaluate(model.as_ref(), &vec![w; cores], &pad_eval_dataset(&eval, cores, per).unwrap()).unwrap();
        prop_assert_eq!(got, reference);
        prop_assert_eq!(reference.1, n);
    }
}

#[test]
fn generated_data_is_seeded() {
    let spec = task(10);
    assert_eq!(generate_task(&spec, 3).unwrap(), generate_task(&spec, 3).unwrap());
    assert_ne!(generate_task(&spec, 3).unwrap().0, generate_task(&spec, 4).unwrap().0);
}
