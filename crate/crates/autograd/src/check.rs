use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Max relative error between `analytic` and central differences of `f`
/// at `point`, over `coords`. The denominator is `max(|g|, 1e-8)`.
pub fn finite_difference_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len(), "gradient length");
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// `samples` distinct coordinates out of `n` (all of them if `samples ≥ n`).
pub fn sample_coords(n: usize, samples: usize, seed: u64) -> Vec<usize> {
    if samples >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = index::sample(&mut rng, n, samples).into_vec();
    v.sort_unstable();
    v
}
