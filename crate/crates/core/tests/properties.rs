//! Property tests for the statistical invariants: symmetry, range, scale and
//! permutation invariance of connectivity, plus mask accounting under random
//! prune schedules and the brute-force connectivity oracle.

use connflow::connectivity::{
    empirical_priors, layer_connectivity, pearson_abs, standardize, ActivationSample,
};
use connflow::masking::{freeze_survivors, magnitude_prune, MaskSet};
use connflow::nn::{forward, Activation, LayerSpec, Network};
use connflow::Tensor;
use proptest::prelude::*;

fn labels_strategy(n: usize, classes: usize) -> impl Strategy<Value = Vec<usize>> {
    // at least 2 examples per class: lay classes down round-robin, then shuffle
    Just(()).prop_perturb(move |_, mut rng| {
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        for i in (1..n).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            labels.swap(i, j);
        }
        labels
    })
}

fn acts_strategy(n: usize, filters: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-10.0f64..10.0, n * filters)
}

/// Definition-literal connectivity: per class, standardize by the class mean
/// and population variance, average products, weight by priors, take the
/// absolute value, and average over all filter pairs.
fn brute_force_delta(
    lower: &[f64],
    upper: &[f64],
    n: usize,
    ml: usize,
    mu: usize,
    labels: &[usize],
) -> f64 {
    let classes = labels.iter().copied().max().unwrap() + 1;
    let priors = empirical_priors(labels, classes);
    let standardize_col = |raw: &[f64], filter: usize, width: usize| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for class in 0..classes {
            let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if idx.is_empty() {
                continue;
            }
            let cn = idx.len() as f64;
            let mean = idx.iter().map(|&i| raw[i * width + filter]).sum::<f64>() / cn;
            let var = idx
                .iter()
                .map(|&i| (raw[i * width + filter] - mean).powi(2))
                .sum::<f64>()
                / cn;
            if var == 0.0 {
                continue;
            }
            for &i in &idx {
                out[i] = (raw[i * width + filter] - mean) / var.sqrt();
            }
        }
        out
    };
    let mut total = 0.0;
    for i in 0..ml {
        let a = standardize_col(lower, i, ml);
        for j in 0..mu {
            let b = standardize_col(upper, j, mu);
            let mut rho = 0.0;
            for class in 0..classes {
                let idx: Vec<usize> = (0..n).filter(|&k| labels[k] == class).collect();
                if idx.is_empty() {
                    continue;
                }
                let mean = idx.iter().map(|&k| a[k] * b[k]).sum::<f64>() / idx.len() as f64;
                rho += priors[class] * mean;
            }
            total += rho.abs().min(1.0);
        }
    }
    total / (ml * mu) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pearson_is_symmetric_and_in_range(
        raw in acts_strategy(12, 2),
        labels in labels_strategy(12, 2),
    ) {
        let sample = ActivationSample::new(
            0,
            Tensor::new(vec![12, 2], raw).unwrap(),
            labels.clone(),
        ).unwrap();
        let st = standardize(&sample, true).unwrap();
        let a = st.filter_column(0);
        let b = st.filter_column(1);
        let priors = empirical_priors(&labels, 2);
        let ab = pearson_abs(&a, &b, &labels, &priors).unwrap();
        let ba = pearson_abs(&b, &a, &labels, &priors).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn connectivity_is_invariant_to_affine_filter_rescaling(
        raw_lower in acts_strategy(10, 2),
        raw_upper in acts_strategy(10, 3),
        labels in labels_strategy(10, 2),
        scale in 0.05f64..20.0,
        offset in -5.0f64..5.0,
    ) {
        let priors = empirical_priors(&labels, 2);
        let lower = ActivationSample::new(
            0, Tensor::new(vec![10, 2], raw_lower.clone()).unwrap(), labels.clone()).unwrap();
        let upper = ActivationSample::new(
            1, Tensor::new(vec![10, 3], raw_upper.clone()).unwrap(), labels.clone()).unwrap();
        let (delta_base, _) = layer_connectivity(
            &standardize(&lower, true).unwrap(),
            &standardize(&upper, true).unwrap(),
            &priors,
        ).unwrap();

        // rescale every lower filter; standardization must absorb it
        let rescaled: Vec<f64> = raw_lower.iter().map(|v| v * scale + offset).collect();
        let lower2 = ActivationSample::new(
            0, Tensor::new(vec![10, 2], rescaled).unwrap(), labels.clone()).unwrap();
        let (delta_scaled, _) = layer_connectivity(
            &standardize(&lower2, true).unwrap(),
            &standardize(&upper, true).unwrap(),
            &priors,
        ).unwrap();
        prop_assert!((delta_base - delta_scaled).abs() < 1e-10,
            "{delta_base} vs {delta_scaled}");
    }

    #[test]
    fn connectivity_is_invariant_to_example_order(
        raw_lower in acts_strategy(8, 2),
        raw_upper in acts_strategy(8, 2),
        labels in labels_strategy(8, 2),
        swap_a in 0usize..8,
        swap_b in 0usize..8,
    ) {
        let priors = empirical_priors(&labels, 2);
        let mk = |vals: &[f64], labs: &[usize]| {
            standardize(
                &ActivationSample::new(0, Tensor::new(vec![8, 2], vals.to_vec()).unwrap(), labs.to_vec()).unwrap(),
                true,
            ).unwrap()
        };
        let (delta, _) = layer_connectivity(
            &mk(&raw_lower, &labels), &mk(&raw_upper, &labels), &priors).unwrap();

        // permute rows (same permutation on activations and labels)
        let mut order: Vec<usize> = (0..8).collect();
        order.swap(swap_a, swap_b);
        order.rotate_left(3);
        let permute = |vals: &[f64]| -> Vec<f64> {
            order.iter().flat_map(|&r| vals[r * 2..r * 2 + 2].to_vec()).collect()
        };
        let plabels: Vec<usize> = order.iter().map(|&r| labels[r]).collect();
        let (delta_p, _) = layer_connectivity(
            &mk(&permute(&raw_lower), &plabels), &mk(&permute(&raw_upper), &plabels), &priors).unwrap();
        prop_assert!((delta - delta_p).abs() < 1e-12, "{delta} vs {delta_p}");
    }

    #[test]
    fn layer_connectivity_matches_brute_force(
        raw_lower in acts_strategy(8, 3),
        raw_upper in acts_strategy(8, 2),
        labels in labels_strategy(8, 2),
    ) {
        let priors = empirical_priors(&labels, 2);
        let lower = standardize(
            &ActivationSample::new(0, Tensor::new(vec![8, 3], raw_lower.clone()).unwrap(), labels.clone()).unwrap(),
            true,
        ).unwrap();
        let upper = standardize(
            &ActivationSample::new(1, Tensor::new(vec![8, 2], raw_upper.clone()).unwrap(), labels.clone()).unwrap(),
            true,
        ).unwrap();
        let (delta, _) = layer_connectivity(&lower, &upper, &priors).unwrap();
        let oracle = brute_force_delta(&raw_lower, &raw_upper, 8, 3, 2, &labels);
        prop_assert!((delta - oracle).abs() < 1e-12, "{delta} vs {oracle}");
    }

    #[test]
    fn prune_freeze_accounting_holds_for_random_schedules(
        weights in proptest::collection::vec(-3.0f64..3.0, 30),
        fractions in proptest::collection::vec(0.0f64..1.0, 4),
    ) {
        let mut w = Tensor::new(vec![5, 6], weights).unwrap();
        let mut masks = MaskSet::from_shapes(&[(5, 6)]);
        let mut owners = vec![0u32; 30];
        let mut prev_sparsity = 0.0;
        for (step, &fraction) in fractions.iter().enumerate() {
            let task = step as u32 + 1;
            let (_, free_before, _) = masks.layer_counts(0);
            magnitude_prune(&mut w, &mut masks, 0, fraction).unwrap();
            let (_, _, pruned) = masks.layer_counts(0);
            prop_assert_eq!(pruned, (fraction * free_before as f64).floor() as usize);
            let frozen_before = masks.layer_counts(0).0;
            freeze_survivors(&mut masks, task).unwrap();
            let (frozen_after, free_after, pruned_after) = masks.layer_counts(0);
            // exact accounting
            prop_assert_eq!(pruned_after, 0);
            prop_assert_eq!(frozen_after - frozen_before + pruned, free_before);
            prop_assert_eq!(free_after, pruned);
            // monotone capacity
            let s = masks.sparsity(0, task);
            prop_assert!(s >= prev_sparsity);
            prev_sparsity = s;
            // permanent unique ownership
            for i in 0..30 {
                let now = masks.layer(0).frozen_owner(i);
                if owners[i] != 0 {
                    prop_assert_eq!(now, owners[i]);
                } else {
                    owners[i] = now;
                }
            }
        }
    }

    #[test]
    fn forward_decomposes_over_batch_rows(
        inputs in proptest::collection::vec(-2.0f64..2.0, 3 * 4),
        seed in 0u64..1000,
    ) {
        let net = Network::init(
            &[
                LayerSpec { in_dim: 4, out_dim: 5, activation: Activation::Tanh },
                LayerSpec { in_dim: 5, out_dim: 2, activation: Activation::SoftmaxOutput },
            ],
            seed,
            false,
        ).unwrap();
        let batch = Tensor::new(vec![3, 4], inputs).unwrap();
        let (logits, _) = forward(&net, &batch).unwrap();
        for r in 0..3 {
            let (row, _) = forward(&net, &batch.select_rows(&[r])).unwrap();
            prop_assert_eq!(row.data(), logits.row(r));
        }
    }
}
