use minidiff::data::{denormalize, normalize};
use minidiff::schedule::linear_beta_schedule;
use minidiff::{randn, DdimPlan, Diffusion, Rng, Tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_broadcast_matches_tiling(b in 1usize..3, c in 1usize..4, h in 1usize..4, w in 1usize..4, seed: u64) {
        let mut rng = Rng::seed_from_u64(seed);
        let x = randn::<f32>(&mut rng, &[b, c, h, w]);
        let v = randn::<f32>(&mut rng, &[b, c]);
        let got = x.add(&v.reshape(&[b, c, 1, 1]).unwrap()).unwrap().to_vec();
        let (xs, vs) = (x.to_vec(), v.to_vec());
        let tiled: Vec<f32> = (0..b * c * h * w).map(|i| xs[i] + vs[i / (h * w)]).collect();
        prop_assert_eq!(got, tiled);
    }

    #[test]
    fn q_sample_is_the_closed_form(t in 0usize..300, seed: u64) {
        let d = Diffusion::linear(300).unwrap();
        let mut rng = Rng::seed_from_u64(seed);
        let x0 = randn::<f64>(&mut rng, &[1, 1, 3, 3]);
        let eps = randn::<f64>(&mut rng, &[1, 1, 3, 3]);
        let abar: f64 = linear_beta_schedule(300).unwrap()[..=t].iter().map(|b| 1.0 - b).product();
        let got = d.q_sample(&x0, &[t], &eps).unwrap().to_vec();
        for ((g, x), e) in got.iter().zip(x0.to_vec()).zip(eps.to_vec()) {
            prop_assert!((g - (abar.sqrt() * x + (1.0 - abar).sqrt() * e)).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_kernels_with_same_padding_keep_extents(k in prop::sample::select(vec![1usize, 3, 5]), h in 3usize..9, w in 3usize..9) {
        let x = Tensor::<f32>::zeros(&[1, 2, h, w]);
        let wt = Tensor::<f32>::zeros(&[3, 2, k, k]);
        let y = x.conv2d(&wt, None, 1, (k - 1) / 2).unwrap();
        prop_assert_eq!(y.shape(), &[1, 3, h, w]);
    }

    #[test]
    fn group_norm_standardizes_each_group(groups in prop::sample::select(vec![1usize, 2, 4]), hw in 2usize..5, seed: u64) {
        let x = randn::<f64>(&mut Rng::seed_from_u64(seed), &[2, 4, hw, hw]).mul_scalar(3.0).add_scalar(1.5);
        let y = x.group_norm(groups, 1e-5).unwrap().to_vec();
        let slab = 4 / groups * hw * hw;
        for chunk in y.chunks(slab) {
            let mean = chunk.iter().sum::<f64>() / slab as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / slab as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn ddim_plans_are_increasing_and_in_range(t in 31usize..1200, s in 1usize..100) {
        match DdimPlan::new(t, s) {
            Ok(plan) => {
                prop_assert_eq!(plan.seq.len(), s);
                prop_assert!(plan.seq.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(*plan.seq.last().unwrap() < t);
                prop_assert_eq!(plan.seq_prev[0], 0);
                prop_assert_eq!(&plan.seq_prev[1..], &plan.seq[..s - 1]);
            }
            Err(_) => prop_assert!(s > t || 1 + (s - 1) * (t / s) >= t),
        }
    }

    #[test]
    fn clamped_normalization_is_inverse_consistent(byte: u8, noise in -0.001f64..0.001) {
        let v = (normalize(byte) + noise * 1e-3).clamp(-1.0, 1.0);
        prop_assert_eq!(denormalize(v), byte);
    }
}
