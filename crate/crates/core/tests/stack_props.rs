use imt_core::io::{load_stack, save_stack};
use imt_core::stack::{
    average_repetitions, coil_combine_rss, mean_signal_power, power_denormalize, power_normalize,
    DEFAULT_TARGET_POWER,
};
use imt_core::{Complex32, ComplexImageStack};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_stack(seed: u64, s: usize, h: usize, w: usize, scale: f64) -> ComplexImageStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexImageStack::from_fn(s, h, w, |_, _, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex32::new((re * scale) as f32, (im * scale) as f32)
    })
    .unwrap()
}

fn max_rel_diff(a: &ComplexImageStack, b: &ComplexImageStack) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = ((x.re - y.re) as f64).hypot((x.im - y.im) as f64);
            d / (y.norm() as f64).max(1e-30)
        })
        .fold(0.0, f64::max)
}

#[test]
fn mean_power_matches_brute_force_sum() {
    let stack = random_stack(11, 4, 8, 8, 3.0);
    // independent oracle: explicit index loop over (s, r, c)
    let mut total = 0.0f64;
    for s in 0..4 {
        for r in 0..8 {
            for c in 0..8 {
                let z = stack.get(s, r, c);
                total += (z.re as f64) * (z.re as f64) + (z.im as f64) * (z.im as f64);
            }
        }
    }
    let oracle = total / 256.0;
    let value = mean_signal_power(&stack).unwrap();
    assert!((value - oracle).abs() <= 1e-5 * oracle);
}

#[test]
fn averaging_four_repetitions_halves_noise() {
    let (s, h, w) = (4, 64, 64);
    let clean = ComplexImageStack::from_fn(s, h, w, |s, r, c| {
        Complex32::new((s + r) as f32 * 0.5, (c as f32).sin() * 10.0)
    })
    .unwrap();
    let sigma = 3.0;
    let reps: Vec<ComplexImageStack> = (0..4)
        .map(|i| {
            let noise = random_stack(100 + i, s, h, w, sigma);
            clean.zip_map(&noise, |a, b| a + b).unwrap()
        })
        .collect();
    let residual_std = |x: &ComplexImageStack| {
        let d: Vec<f64> = x
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| (a.re - b.re) as f64)
            .collect();
        (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
    };
    let single = residual_std(&reps[0]);
    let averaged = residual_std(&average_repetitions(&reps).unwrap());
    let ratio = averaged / single;
    assert!((ratio - 0.5).abs() <= 0.05 * 0.5, "ratio {ratio}");
}

#[test]
fn save_load_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stack.imts");
    let mut stack_data = random_stack(5, 3, 7, 9, 1e3).into_data();
    stack_data[0] = Complex32::new(-0.0, f32::MIN_POSITIVE / 4.0);
    let stack = ComplexImageStack::new(3, 7, 9, stack_data).unwrap();
    save_stack(&stack, &path).unwrap();
    let back = load_stack(&path).unwrap();
    assert_eq!(back.dims(), stack.dims());
    for (a, b) in stack.data().iter().zip(back.data()) {
        assert_eq!(a.re.to_bits(), b.re.to_bits());
        assert_eq!(a.im.to_bits(), b.im.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_normalize_hits_target(seed in any::<u64>(), log_scale in -6.0f64..6.0, s in 1usize..4, h in 1usize..9, w in 1usize..9) {
        let stack = random_stack(seed, s, h, w, 10f64.powf(log_scale));
        prop_assume!(mean_signal_power(&stack).unwrap() > 0.0);
        let (normed, state) = power_normalize(&stack, DEFAULT_TARGET_POWER).unwrap();
        let p = mean_signal_power(&normed).unwrap();
        prop_assert!((p - 1600.0).abs() <= 1e-4 * 1600.0, "power {}", p);
        prop_assert!(((state.k * state.k * state.mean_power) - 1600.0).abs() <= 1e-6 * 1600.0);
        let back = power_denormalize(&normed, &state).unwrap();
        prop_assert!(max_rel_diff(&back, &stack) <= 1e-6);
    }

    #[test]
    fn rss_is_non_negative(seed in any::<u64>(), coils in 1usize..5) {
        let stacks: Vec<_> = (0..coils).map(|i| random_stack(seed.wrapping_add(i as u64), 2, 3, 3, 5.0)).collect();
        let out = coil_combine_rss(&stacks).unwrap();
        prop_assert!(out.data().iter().all(|z| z.re >= 0.0 && z.im >= 0.0));
    }

    #[test]
    fn averaging_is_permutation_invariant(seed in any::<u64>(), reps in 2usize..6, rot in 0usize..5) {
        let stacks: Vec<_> = (0..reps).map(|i| random_stack(seed.wrapping_add(i as u64), 2, 4, 3, 7.0)).collect();
        let mut shuffled = stacks.clone();
        shuffled.rotate_left(rot % reps);
        shuffled.swap(0, reps - 1);
        let a = average_repetitions(&stacks).unwrap();
        let b = average_repetitions(&shuffled).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).norm() <= 1e-6 * (1.0 + x.norm()));
        }
    }
}
