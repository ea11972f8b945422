use hpalf::metrics::*;
use hpalf::mrisim::{Image, SliceVolume};
use hpalf::objectives::FeatureExtractor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn noisy_flat(n: usize, level: f64, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let data = (0..n * n).map(|_| level + if sigma > 0.0 { g.sample(&mut rng) } else { 0.0 }).collect();
    Image::new(n, n, data).unwrap()
}

// literal-formula oracles, kept deliberately naive

fn oracle_psnr(x: &Image, y: &Image) -> f64 {
    let mut sse = 0.0;
    for r in 0..x.height {
        for c in 0..x.width {
            let d = x.at(r, c) - y.at(r, c);
            sse += d * d;
        }
    }
    let mse = sse / (x.height * x.width) as f64;
    20.0 * 1.0f64.log10() - 10.0 * mse.log10()
}

fn oracle_ssim(x: &Image, y: &Image) -> f64 {
    let mut w = [[0.0; 11]; 11];
    let mut z = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..=x.height - 11 {
        for c in 0..=x.width - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    mx += w[i][j] / z * x.at(r + i, c + j);
                    my += w[i][j] / z * y.at(r + i, c + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let a = x.at(r + i, c + j) - mx;
                    let b = y.at(r + i, c + j) - my;
                    vx += w[i][j] / z * a * a;
                    vy += w[i][j] / z * b * b;
                    cxy += w[i][j] / z * a * b;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

fn oracle_sobel(x: &Image) -> Vec<f64> {
    let (h, w) = (x.height as i64, x.width as i64);
    let px = |r: i64, c: i64| x.at(r.max(0).min(h - 1) as usize, c.max(0).min(w - 1) as usize);
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut out = vec![];
    for r in 0..h {
        for c in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    let v = px(r + i as i64 - 1, c + j as i64 - 1);
                    gx += kx[i][j] * v;
                    gy += kx[j][i] * v;
                }
            }
            out.push(gx.hypot(gy));
        }
    }
    out
}

#[test]
fn psnr_hand_values() {
    let x = Image::filled(8, 8, 0.5);
    let y = Image::filled(8, 8, 0.6);
    assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
    assert!(psnr(&x, &y, 0.0).is_err());
    assert!(psnr(&x, &Image::filled(4, 8, 0.0), 1.0).is_err());
}

#[test]
fn psnr_is_invariant_to_a_shared_affine_map() {
    let x = random_image(16, 16, 1);
    let y = random_image(16, 16, 2);
    let f = |v: f64| 3.0 * v - 1.0;
    let a = psnr(&x, &y, 1.0).unwrap();
    let b = psnr(&x.map(f), &y.map(f), 3.0).unwrap();
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn psnr_and_ssim_match_literal_oracles() {
    for seed in 0..50 {
        let x = random_image(20, 24, 100 + seed);
        // correlated partner so SSIM is not near zero
        let n = random_image(20, 24, 200 + seed);
        let y = Image::new(20, 24, x.data.iter().zip(&n.data).map(|(a, b)| 0.8 * a + 0.2 * b).collect()).unwrap();
        assert!((psnr(&x, &y, 1.0).unwrap() - oracle_psnr(&x, &y)).abs() < 1e-9);
        let (s, o) = (ssim(&x, &y).unwrap(), oracle_ssim(&x, &y));
        assert!((s - o).abs() < 1e-9, "seed {seed}: {s} vs {o}");
    }
}

#[test]
fn ssim_constant_images_reduce_to_luminance() {
    let s = ssim(&Image::filled(16, 16, 0.2), &Image::filled(16, 16, 0.8)).unwrap();
    assert!((s - 0.4707).abs() < 5e-5, "{s}");
    let want = (2.0 * 0.2 * 0.8 + 1e-4) / (0.04 + 0.64 + 1e-4);
    assert!((s - want).abs() < 1e-12);
}

#[test]
fn ssim_identity_symmetry_and_size() {
    let x = random_image(16, 16, 3);
    let y = random_image(16, 16, 4);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    assert!(ssim(&x, &y).unwrap() < 1.0);
    assert!(ssim(&Image::filled(10, 32, 0.0), &Image::filled(10, 32, 0.0)).is_err());
}

#[test]
fn psim_lite_properties() {
    let x = random_image(16, 16, 5);
    assert!((psim_lite(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let flat = Image::filled(16, 16, 0.3);
    let g = oracle_sobel(&x);
    let want = g.iter().map(|g| 1e-4 / (g * g + 1e-4)).sum::<f64>() / g.len() as f64;
    let got = psim_lite(&x, &flat).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!(got < 1.0);
    let y = random_image(16, 16, 6);
    let shift = |v: f64| v + 0.25;
    let a = psim_lite(&x, &y).unwrap();
    let b = psim_lite(&x.map(shift), &y.map(shift)).unwrap();
    assert!((a - b).abs() < 1e-12);
    for (a, b) in sobel_magnitude(&x).iter().zip(oracle_sobel(&x)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ffd_identity_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows = |rng: &mut ChaCha8Rng, n: usize, shift: f64| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..32).map(|_| rng.random::<f64>() + shift).collect()).collect()
    };
    let a = rows(&mut rng, 100, 0.0);
    let b = rows(&mut rng, 120, 0.1);
    let same = ffd_features(&a, &a).unwrap();
    assert!(same.value.abs() < 1e-6 && !same.loaded);
    let (ab, ba) = (ffd_features(&a, &b).unwrap(), ffd_features(&b, &a).unwrap());
    assert!((ab.value - ba.value).abs() < 1e-9);
    assert!(ab.value > 0.0);
    // fewer rows than dimensions: singular, loaded, flagged
    let few = ffd_features(&a[..10], &b[..10]).unwrap();
    assert!(few.loaded);
    assert!(ffd_features(&a[..1], &b).is_err());
}

#[test]
fn ffd_of_shifted_gaussian_clouds_is_the_squared_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = Normal::new(0.0, 1.0).unwrap();
    let d = 8;
    let delta: Vec<f64> = (0..d).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
    let a: Vec<Vec<f64>> = (0..10_000).map(|_| (0..d).map(|_| n.sample(&mut rng)).collect()).collect();
    let b: Vec<Vec<f64>> = (0..10_000)
        .map(|_| (0..d).map(|i| n.sample(&mut rng) + delta[i]).collect())
        .collect();
    let v = ffd_features(&a, &b).unwrap().value;
    assert!((v - 4.0).abs() < 0.05 * 4.0, "{v}");
}

#[test]
fn ffd_on_images_goes_through_the_frozen_extractor() {
    let phi = FeatureExtractor::<f64>::new(0).unwrap();
    let a: Vec<Image> = (0..6).map(|s| random_image(16, 16, s)).collect();
    let b: Vec<Image> = (0..6).map(|s| random_image(16, 16, 50 + s).map(|v| v * 0.5)).collect();
    let same = ffd(&a, &a, &phi).unwrap();
    assert!(same.value < 1e-6 && same.loaded);
    assert!(ffd(&a, &b, &phi).unwrap().value > same.value);
}

#[test]
fn noise_estimate_on_flat_noisy_images() {
    for sigma in [0.05, 0.10, 0.20] {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for seed in 0..20 {
            let e = estimate_noise_level(&noisy_flat(64, 0.5, sigma, seed)).unwrap();
            assert!((e.sigma / sigma - 1.0).abs() <= 0.2, "sigma {sigma} seed {seed}: {e:?}");
            assert!(!e.low_confidence);
            assert!(e.iterations <= 10);
            lo = lo.min(e.sigma / sigma);
            hi = hi.max(e.sigma / sigma);
        }
        println!("sigma {sigma}: estimate/true in [{lo:.3}, {hi:.3}]");
    }
    let e = estimate_noise_level(&noisy_flat(64, 0.5, 0.0, 0)).unwrap();
    assert!(e.sigma < 0.005);
}

#[test]
fn noise_estimate_is_monotone_in_injected_noise() {
    for seed in 0..10 {
        let s: Vec<f64> = [0.05, 0.10, 0.20]
            .iter()
            .map(|&sigma| estimate_noise_level(&noisy_flat(48, 0.5, sigma, 300 + seed)).unwrap().sigma)
            .collect();
        assert!(s[0] < s[1] && s[1] < s[2], "seed {seed}: {s:?}");
    }
}

#[test]
fn noise_estimate_ignores_smooth_structure_and_flags_pure_texture() {
    // a ramp plus noise: gradients are weak compared with the noise
    let base = noisy_flat(64, 0.0, 0.1, 11);
    let ramp = Image::new(64, 64, (0..64 * 64).map(|i| base.data[i] + (i % 64) as f64 / 640.0).collect()).unwrap();
    let e = estimate_noise_level(&ramp).unwrap();
    assert!((0.08..=0.12).contains(&e.sigma), "{e:?}");

    // a noiseless sinusoid has textured patches only
    let tex = Image::new(
        64,
        64,
        (0..64 * 64).map(|i| ((i % 64) as f64 * 1.3).sin() + ((i / 64) as f64 * 0.7).cos()).collect(),
    )
    .unwrap();
    let e = estimate_noise_level(&tex).unwrap();
    assert!(e.low_confidence, "{e:?}");
    assert!(estimate_noise_level(&Image::filled(16, 64, 0.0)).is_err());
}

#[test]
fn cosine_diversity_cases() {
    let a = vec![1.0, 2.0, -0.5, 3.0];
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    let same = feature_cosine_diversity(&[a.clone(), a.clone(), a.clone()]).unwrap();
    assert!((same.mean - 1.0).abs() < 1e-12);
    let ortho = feature_cosine_diversity(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 2.0]]).unwrap();
    assert_eq!(ortho.mean, 0.0);
    let mixed = feature_cosine_diversity(&[a.clone(), a.clone(), neg]).unwrap();
    assert!((mixed.mean + 1.0 / 3.0).abs() < 1e-12);
    let with_zero = feature_cosine_diversity(&[a.clone(), vec![0.0; 4], a.clone()]).unwrap();
    assert_eq!(with_zero.excluded, vec![1]);
    assert!((with_zero.mean - 1.0).abs() < 1e-12);
    assert!(feature_cosine_diversity(&[a.clone(), vec![0.0; 4]]).is_err());
    assert!(feature_cosine_diversity(&[a, vec![1.0]]).is_err());
}

#[test]
fn volume_report_and_csv() {
    let phi = FeatureExtractor::<f64>::new(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let vox: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let reference = SliceVolume::from_voxels(3, 16, 16, vox.clone()).unwrap();
    let mut rec_vox = vox;
    for v in rec_vox[256..].iter_mut() {
        *v = (*v * 0.9).clamp(-1.0, 1.0);
    }
    let rec = SliceVolume::from_voxels(3, 16, 16, rec_vox).unwrap();
    let r = evaluate_volumes(&reference, &rec, &phi).unwrap();
    assert_eq!(r.per_slice.len(), 3);
    assert_eq!(r.per_slice[0].psnr, f64::INFINITY);
    assert!(r.per_slice[1].psnr.is_finite());
    assert!((r.per_slice[0].ssim - 1.0).abs() < 1e-12);
    // same thing, mapped to [0,1] by hand
    let x = reference.slice(1).map(|v| (v + 1.0) / 2.0);
    let y = rec.slice(1).map(|v| (v + 1.0) / 2.0);
    assert!((r.per_slice[1].psnr - oracle_psnr(&x, &y)).abs() < 1e-9);
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &r).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), RANGE_NOTE);
    assert_eq!(lines.next().unwrap(), "slice,psnr_db,ssim,psim_lite,ffd");
    assert!(lines.next().unwrap().starts_with("0,inf,"));
    assert!(text.lines().last().unwrap().starts_with("mean,inf,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn similarity_scores_are_bounded_and_symmetric(a in 0u64..1000, b in 0u64..1000) {
        let x = random_image(12, 12, a);
        let y = random_image(12, 12, b + 1000);
        let s = ssim(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(s, ssim(&y, &x).unwrap());
        let p = psim_lite(&x, &y).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!((p - psim_lite(&y, &x).unwrap()).abs() < 1e-15);
        prop_assert!(psnr(&x, &y, 1.0).unwrap().is_finite());
    }
}
