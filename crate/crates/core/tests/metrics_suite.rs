use imt_core::metrics::{nrmse, psnr, ssim, NrmseMode};
use imt_core::stats::{bland_altman, icc_2_1, paired_t_test};
use imt_core::{Complex32, ComplexImageStack};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn random_real(seed: u64, s: usize, h: usize, w: usize, lo: f32, hi: f32) -> ComplexImageStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(lo, hi).unwrap();
    ComplexImageStack::from_fn(s, h, w, |_, _, _| Complex32::new(dist.sample(&mut rng), 0.0)).unwrap()
}

/// Direct-formula SSIM: 2D window evaluated at every valid position.
fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let size = 11.min(if h.min(w) % 2 == 1 { h.min(w) } else { h.min(w) - 1 });
    let half = (size / 2) as f64;
    let mut win = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            win[i * size + j] = (-((i as f64 - half).powi(2) + (j as f64 - half).powi(2)) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for r in 0..=h - size {
        for c in 0..=w - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let k = win[i * size + j];
                    let (a, b) = (x[(r + i) * w + c + j], y[(r + i) * w + c + j]);
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn ssim_matches_direct_oracle() {
    for &(h, w) in &[(24, 20), (9, 14)] {
        let a = random_real(1, 2, h, w, 0.0, 10.0);
        let b = a.zip_map(&random_real(2, 2, h, w, -2.0, 2.0), |x, y| x + y).unwrap();
        let (ma, mb) = (a.magnitudes(), b.magnitudes());
        let lo = ma.iter().chain(&mb).copied().fold(f64::INFINITY, f64::min);
        let hi = ma.iter().chain(&mb).copied().fold(f64::NEG_INFINITY, f64::max);
        let n = h * w;
        let oracle = (0..2)
            .map(|s| ssim_oracle(&mb[s * n..(s + 1) * n], &ma[s * n..(s + 1) * n], h, w, hi - lo))
            .sum::<f64>()
            / 2.0;
        let value = ssim(&b, &a).unwrap();
        assert!((value - oracle).abs() <= 1e-6, "{value} vs {oracle}");
    }
}

#[test]
fn ssim_of_noise_against_constant_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 50.0).unwrap();
    let reference = ComplexImageStack::new(1, 64, 64, vec![Complex32::new(100.0, 0.0); 4096]).unwrap();
    let test = ComplexImageStack::from_fn(1, 64, 64, |_, _, _| {
        Complex32::new(100.0 + noise.sample(&mut rng) as f32, 0.0)
    })
    .unwrap();
    let v = ssim(&test, &reference).unwrap();
    assert!(v < 0.1, "{v}");
}

#[test]
fn ssim_is_symmetric() {
    let a = random_real(5, 1, 32, 32, 0.0, 5.0);
    let b = random_real(6, 1, 32, 32, 0.0, 5.0);
    assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-9);
}

#[test]
fn psnr_decreases_along_offset_ladder() {
    let reference = random_real(7, 2, 16, 16, 1.0, 9.0);
    let mut last = f64::INFINITY;
    for step in 1..10 {
        let delta = 0.1 * step as f32;
        let test = reference.map(|z| z + Complex32::new(delta, 0.0)).unwrap();
        let v = psnr(&test, &reference).unwrap();
        assert!(v < last, "step {step}: {v} !< {last}");
        last = v;
    }
}

#[test]
fn psnr_and_nrmse_scale_invariance() {
    let a = random_real(8, 2, 12, 12, 0.0, 3.0);
    let b = random_real(9, 2, 12, 12, 0.0, 3.0);
    let (a2, b2) = (a.scaled(2.0).unwrap(), b.scaled(2.0).unwrap());
    assert!((psnr(&a, &b).unwrap() - psnr(&a2, &b2).unwrap()).abs() < 1e-9);
    assert!(
        (nrmse(&a, &b, NrmseMode::SignalNorm).unwrap() - nrmse(&a2, &b2, NrmseMode::SignalNorm).unwrap()).abs()
            < 1e-12
    );
}

#[test]
fn metrics_ignore_phase() {
    let a = random_real(10, 2, 16, 16, 0.5, 3.0);
    let b = random_real(11, 2, 16, 16, 0.5, 3.0);
    // rotating by i swaps components exactly, so magnitudes are bit-identical
    let rot = |s: &ComplexImageStack| s.map(|z| Complex32::new(-z.im, z.re)).unwrap();
    let (ra, rb) = (rot(&a), rot(&b));
    assert_eq!(psnr(&ra, &b).unwrap(), psnr(&a, &b).unwrap());
    assert_eq!(ssim(&ra, &rb).unwrap(), ssim(&a, &b).unwrap());
    assert_eq!(
        nrmse(&a, &rb, NrmseMode::SignalNorm).unwrap(),
        nrmse(&a, &b, NrmseMode::SignalNorm).unwrap()
    );
    // arbitrary voxelwise phases agree to rounding
    let twisted = ComplexImageStack::from_fn(2, 16, 16, |s, r, c| {
        a.get(s, r, c) * Complex32::from_polar(1.0, (r * 16 + c + s) as f32 * 0.37)
    })
    .unwrap();
    assert!((psnr(&twisted, &b).unwrap() - psnr(&a, &b).unwrap()).abs() < 1e-5);
}

#[test]
fn nrmse_triangle_inequality() {
    let a = random_real(12, 1, 10, 10, 0.0, 4.0);
    let b = random_real(13, 1, 10, 10, 0.0, 4.0);
    let c = random_real(14, 1, 10, 10, 1.0, 4.0);
    let norm = |s: &ComplexImageStack| s.magnitudes().iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = |x, y| nrmse(x, y, NrmseMode::SignalNorm).unwrap();
    // unnormalized distances: n(x, y)·‖y‖
    assert!(n(&a, &c) * norm(&c) <= n(&a, &b) * norm(&b) + n(&b, &c) * norm(&c) + 1e-12);
}

/// Textbook two-way ANOVA with explicit residuals.
fn icc_oracle(table: &[[f64; 2]]) -> f64 {
    let n = table.len() as f64;
    let k = 2.0;
    let mut grand = 0.0;
    for row in table {
        for v in row {
            grand += v;
        }
    }
    grand /= n * k;
    let row_mean: Vec<f64> = table.iter().map(|r| (r[0] + r[1]) / 2.0).collect();
    let col_mean = [
        table.iter().map(|r| r[0]).sum::<f64>() / n,
        table.iter().map(|r| r[1]).sum::<f64>() / n,
    ];
    let mut msr = 0.0;
    for m in &row_mean {
        msr += k * (m - grand).powi(2);
    }
    msr /= n - 1.0;
    let mut msc = 0.0;
    for m in &col_mean {
        msc += n * (m - grand).powi(2);
    }
    msc /= k - 1.0;
    let mut mse = 0.0;
    for (i, row) in table.iter().enumerate() {
        for j in 0..2 {
            mse += (row[j] - row_mean[i] - col_mean[j] + grand).powi(2);
        }
    }
    mse /= (n - 1.0) * (k - 1.0);
    (msr - mse) / (msr + (k - 1.0) * mse + k * (msc - mse) / n)
}

#[test]
fn icc_matches_anova_oracle() {
    let table = [[4.0, 3.0], [2.0, 2.0], [5.0, 4.0], [3.0, 1.0]];
    let rows: Vec<Vec<f64>> = table.iter().map(|r| r.to_vec()).collect();
    let value = icc_2_1(&rows).unwrap();
    assert!((value - icc_oracle(&table)).abs() <= 1e-9);
}

#[test]
fn t_test_is_pairing_invariant() {
    let a = [3.0, 5.0, 4.0, 4.0, 2.0];
    let b = [2.0, 3.0, 4.0, 1.0, 2.5];
    let r1 = paired_t_test(&a, &b).unwrap();
    let order = [3, 0, 4, 2, 1];
    let pa: Vec<f64> = order.iter().map(|&i| a[i]).collect();
    let pb: Vec<f64> = order.iter().map(|&i| b[i]).collect();
    let r2 = paired_t_test(&pa, &pb).unwrap();
    assert!((r1.t - r2.t).abs() < 1e-12 && (r1.p - r2.p).abs() < 1e-12);
}

#[test]
fn bland_altman_translation() {
    let a = [3.0, 5.0, 4.0, 4.0];
    let b = [2.0, 3.0, 4.0, 1.0];
    let base = bland_altman(&a, &b).unwrap();
    let shifted: Vec<f64> = a.iter().map(|v| v + 0.75).collect();
    let moved = bland_altman(&shifted, &b).unwrap();
    assert!((moved.mean_diff - base.mean_diff - 0.75).abs() < 1e-12);
    assert!((moved.loa_high - moved.loa_low - (base.loa_high - base.loa_low)).abs() < 1e-12);
}
