mod common;

use common::*;
use hpalf::objectives::*;
use hpalf_tensor::check::GradCheck;
use hpalf_tensor::{Tape, Tensor, Var};
use rand::Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn anchors() -> Anchors {
    Anchors::new(10, DEFAULT_SHAPE).unwrap()
}

fn value(tape: &Tape<f64>, v: Var) -> f64 {
    tape.value(v).item()
}

#[test]
fn anchors_mirror_and_normalize() {
    for k in [2, 3, 5, 10, 17] {
        let a = Anchors::new(k, DEFAULT_SHAPE).unwrap();
        for i in 0..k {
            assert!((a.real.probs[i] - a.fake.probs[k - 1 - i]).abs() < 1e-12);
        }
        assert!((a.real.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.real.probs.iter().all(|&p| p > 0.0));
        assert!(a.separation() > 0.0);
    }
    assert!(build_anchor(1, Skew::Positive, 4.0).is_err());
    assert!(build_anchor(10, Skew::Positive, 0.0).is_err());
}

#[test]
fn anchor_modes_differ_at_k10() {
    // direct evaluation of 2 phi(x) Phi(4x) on the grid, written out here
    let k = 10;
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = |x: f64| {
        // midpoint-rule integral of phi from -10
        let n = 200_000;
        let h = (x + 10.0) / n as f64;
        (0..n).map(|i| phi(-10.0 + (i as f64 + 0.5) * h)).sum::<f64>() * h
    };
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let x = -3.0 + 6.0 * i as f64 / 9.0;
            2.0 * phi(x) * cdf(4.0 * x)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let a = anchors();
    for (r, p) in raw.iter().zip(&a.real.probs) {
        assert!((r / total - p).abs() < 1e-6);
    }
    let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_ne!(argmax(&a.real.probs), argmax(&a.fake.probs));
}

#[test]
fn kl_oracles() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let k = r.random_range(2..12);
        let mut p: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let mut q: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        p.iter_mut().for_each(|v| *v /= sp);
        q.iter_mut().for_each(|v| *v /= sq);
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
    }
    let hand = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    assert!((kl - hand).abs() < 1e-15);
    assert!((kl - 0.143841).abs() < 1e-5);
    assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    assert_eq!(kl_divergence(&[0.0, 1.0], &[1.0, 0.0]).ok(), None);
    assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 2f64.ln());
}

fn judgement(tape: &mut Tape<f64>, s: &[f64], p: &[Vec<f64>]) -> Judgement {
    let b = s.len();
    let k = p[0].len();
    let flat: Vec<f64> = p.iter().flatten().copied().collect();
    Judgement {
        scalar: tape.constant(Tensor::from_f64(&[b], s).unwrap()).unwrap(),
        perspective: tape.constant(Tensor::from_f64(&[b, k], &flat).unwrap()).unwrap(),
    }
}

#[test]
fn discriminator_encoder_loss_at_anchors() {
    let a = anchors();
    let mut tape = Tape::new();
    let real = judgement(&mut tape, &[0.5, 0.5], &[a.real.probs.clone(), a.real.probs.clone()]);
    let fake = judgement(&mut tape, &[0.5, 0.5], &[a.fake.probs.clone(), a.fake.probs.clone()]);
    let l = loss_d_enc(&mut tape, real, fake, &a, Convention::Realness, true).unwrap();
    assert!((value(&tape, l.total) - 2.0 * LN2).abs() < 1e-12);
    assert!((value(&tape, l.total) - 1.386294).abs() < 1e-6);
    assert!(value(&tape, l.kl.unwrap()).abs() < 1e-12);
}

#[test]
fn conventions_differ_only_in_kl_sign() {
    let a = anchors();
    let mut r = rng(3);
    for _ in 0..20 {
        let mut tape = Tape::new();
        let mut rand_p = || {
            let v: Vec<f64> = (0..10).map(|_| r.random_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p1, p2) = (rand_p(), rand_p());
        let real = judgement(&mut tape, &[0.7], &[p1]);
        let fake = judgement(&mut tape, &[0.2], &[p2]);
        let lr = loss_d_enc(&mut tape, real, fake, &a, Convention::Realness, true).unwrap();
        let lv = loss_d_enc(&mut tape, real, fake, &a, Convention::Verbatim, true).unwrap();
        let (kr, kv) = (value(&tape, lr.kl.unwrap()), value(&tape, lv.kl.unwrap()));
        assert!(kr > 0.0);
        assert!((kr + kv).abs() < 1e-14);
        assert_eq!(value(&tape, lr.scalar), value(&tape, lv.scalar));
    }
}

#[test]
fn decoder_loss_oracles() {
    let mut tape = Tape::new();
    let half = tape.constant(Tensor::full(&[2, 1, 8, 8], 0.5)).unwrap();
    let (l, clamped) = loss_d_dec(&mut tape, half, half).unwrap();
    assert!((value(&tape, l) - 2.0 * LN2).abs() < 1e-9);
    assert!(!clamped);

    let one = tape.constant(Tensor::full(&[1, 1, 4, 4], 1.0 - 1e-9)).unwrap();
    let zero = tape.constant(Tensor::full(&[1, 1, 4, 4], 1e-9)).unwrap();
    let (l, _) = loss_d_dec(&mut tape, one, zero).unwrap();
    assert!(value(&tape, l) < 1e-6);
    let exact_one = tape.constant(Tensor::full(&[1, 1, 4, 4], 1.0)).unwrap();
    let exact_zero = tape.constant(Tensor::zeros(&[1, 1, 4, 4])).unwrap();
    let (l, clamped) = loss_d_dec(&mut tape, exact_one, exact_zero).unwrap();
    assert!(clamped && value(&tape, l).is_finite());

    let m = uniform(&[1, 1, 6, 6], 0.05, 0.95, 4);
    let f = uniform(&[1, 1, 6, 6], 0.05, 0.95, 5);
    let mut rev = |t: &Tensor<f64>| {
        let d: Vec<f64> = t.data().iter().rev().copied().collect();
        tape.constant(Tensor::from_vec(&[1, 1, 6, 6], d).unwrap()).unwrap()
    };
    let (mr, fr) = (rev(&m), rev(&f));
    let (mv, fv) = (tape.constant(m).unwrap(), tape.constant(f).unwrap());
    let (a, _) = loss_d_dec(&mut tape, mv, fv).unwrap();
    let (b, _) = loss_d_dec(&mut tape, mr, fr).unwrap();
    assert!((value(&tape, a) - value(&tape, b)).abs() < 1e-14);
}

#[test]
fn generator_loss_at_real_anchor() {
    let a = anchors();
    let mut tape = Tape::new();
    let fake = judgement(&mut tape, &[0.5], &[a.real.probs.clone()]);
    let map = tape.constant(Tensor::full(&[1, 1, 8, 8], 0.5)).unwrap();
    let l = loss_adv_g(&mut tape, fake, Some(map), &a, Convention::Realness, true).unwrap();
    assert!((value(&tape, l.total) - 1.386294).abs() < 1e-6);
    let near_one = tape.constant(Tensor::full(&[1, 1, 8, 8], 1.0 - 1e-7)).unwrap();
    let l = loss_adv_g(&mut tape, fake, Some(near_one), &a, Convention::Realness, true).unwrap();
    assert!(value(&tape, l.pixel.unwrap()) < 1e-6);
}

#[test]
fn tal_oracles() {
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::from_f64(&[2], &[0.5, 0.5]).unwrap()).unwrap();
    let (d, _) = loss_tal(&mut tape, h, h).unwrap();
    assert!((value(&tape, d) - 2.0 * LN2).abs() < 1e-12);
    let good = tape.constant(Tensor::from_f64(&[1], &[1.0 - 1e-9]).unwrap()).unwrap();
    let bad = tape.constant(Tensor::from_f64(&[1], &[1e-9]).unwrap()).unwrap();
    let (d, _) = loss_tal(&mut tape, good, bad).unwrap();
    assert!(value(&tape, d) < 1e-6);
    let mut last = f64::INFINITY;
    for s in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let f = tape.constant(Tensor::from_f64(&[1], &[s]).unwrap()).unwrap();
        let (_, g) = loss_tal(&mut tape, h, f).unwrap();
        assert!(value(&tape, g) < last);
        last = value(&tape, g);
    }
}

#[test]
fn switches_remove_terms() {
    let a = anchors();
    let mut tape = Tape::new();
    let real = judgement(&mut tape, &[0.6], &[a.real.probs.clone()]);
    let fake = judgement(&mut tape, &[0.4], &[a.fake.probs.clone()]);
    let m = tape.constant(Tensor::full(&[1, 1, 4, 4], 0.5)).unwrap();
    let tal = AdversarialTerms {
        tal: true,
        ..Default::default()
    };
    let d = discriminator_loss(&mut tape, real, fake, Some((m, m)), &a, tal).unwrap();
    let g = generator_adversarial_loss(&mut tape, fake, Some(m), &a, tal).unwrap();
    assert!(d.kl.is_none() && d.pixel.is_none() && g.kl.is_none() && g.pixel.is_none());
    let no_mpd = AdversarialTerms {
        mpd: false,
        ..Default::default()
    };
    let d = discriminator_loss(&mut tape, real, fake, Some((m, m)), &a, no_mpd).unwrap();
    assert!(d.kl.is_none() && d.pixel.is_some());
    let no_glc = AdversarialTerms {
        glc: false,
        ..Default::default()
    };
    let g = generator_adversarial_loss(&mut tape, fake, None, &a, no_glc).unwrap();
    assert!(g.kl.is_some() && g.pixel.is_none());
}

#[test]
fn total_loss_arithmetic() {
    let mut tape = Tape::new();
    let mut c = |v: f64| tape.constant(Tensor::scalar(v)).unwrap();
    let (f, v, a) = (c(0.02), c(0.5), c(1.0));
    let w = LossWeights::default();
    let t = loss_total(&mut tape, f, v, a, &w).unwrap();
    assert!((value(&tape, t) - 1.35).abs() < 1e-12);
    let zero = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        ..w
    };
    let t = loss_total(&mut tape, f, v, a, &zero).unwrap();
    assert_eq!(value(&tape, t), 1.0);
    assert!(LossWeights { alpha: -1.0, ..w }.validate().is_err());
}

#[test]
fn content_losses_vanish_on_identity_and_obey_parseval() {
    let phi = FeatureExtractor::<f64>::new(7).unwrap();
    for seed in 0..10 {
        let x = uniform(&[2, 1, 16, 16], -1.0, 1.0, seed);
        let y = uniform(&[2, 1, 16, 16], -1.0, 1.0, 100 + seed);
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(x.clone()).unwrap(), tape.constant(y.clone()).unwrap());
        let same = fmse_loss(&mut tape, xv, xv).unwrap();
        assert_eq!(value(&tape, same), 0.0);
        let same = perceptual_loss(&mut tape, &phi, xv, xv).unwrap();
        assert_eq!(value(&tape, same), 0.0);
        let l = fmse_loss(&mut tape, xv, yv).unwrap();
        let direct = 0.5 * x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.numel() as f64;
        assert!((value(&tape, l) - direct).abs() < 1e-9);
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 8, 8])).unwrap();
    let y = tape.constant(Tensor::zeros(&[1, 1, 16, 16])).unwrap();
    assert!(fmse_loss(&mut tape, x, y).is_err());
}

#[test]
fn feature_extractor_is_seed_determined() {
    let x = uniform(&[3, 1, 16, 16], -1.0, 1.0, 1);
    let a = FeatureExtractor::<f64>::new(42).unwrap().pooled(&x).unwrap();
    let b = FeatureExtractor::<f64>::new(42).unwrap().pooled(&x).unwrap();
    let c = FeatureExtractor::<f64>::new(43).unwrap().pooled(&x).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a[0].len(), 32);
    let y = uniform(&[3, 1, 16, 16], -1.0, 1.0, 2);
    let loss = |seed| {
        let phi = FeatureExtractor::<f64>::new(seed).unwrap();
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(x.clone()).unwrap(), tape.constant(y.clone()).unwrap());
        let l = perceptual_loss(&mut tape, &phi, xv, yv).unwrap();
        tape.value(l).item()
    };
    assert_eq!(loss(42), loss(42));
}

fn prob_vec(k: usize, seed: u64) -> Tensor<f64> {
    uniform(&[2, k], 0.05, 1.0, seed)
}

/// 20 seeded central-difference checks of each loss in its inputs.
#[test]
fn loss_gradients() {
    let a = anchors();
    let check = |seed: u64| GradCheck {
        seed,
        ..Default::default()
    };
    for seed in 0..20 {
        let s = |o| uniform(&[2], 0.05, 0.95, seed * 10 + o);
        let inputs = [s(0), prob_vec(10, seed * 10 + 1), s(2), prob_vec(10, seed * 10 + 3)];
        for conv in [Convention::Realness, Convention::Verbatim] {
            let r = check(seed)
                .run(&inputs, |t, v| {
                    let real = Judgement { scalar: v[0], perspective: v[1] };
                    let fake = Judgement { scalar: v[2], perspective: v[3] };
                    Ok(loss_d_enc(t, real, fake, &a, conv, true).unwrap().total)
                })
                .unwrap();
            assert!(r.max_rel_err < 1e-4, "d_enc {conv} seed {seed}: {r:?}");
        }
        let maps = [
            uniform(&[2, 1, 4, 4], 0.05, 0.95, seed + 500),
            uniform(&[2, 1, 4, 4], 0.05, 0.95, seed + 600),
        ];
        let r = check(seed)
            .run(&maps, |t, v| Ok(loss_d_dec(t, v[0], v[1]).unwrap().0))
            .unwrap();
        assert!(r.max_rel_err < 1e-4, "d_dec seed {seed}: {r:?}");

        let g_inputs = [inputs[2].clone(), inputs[3].clone(), maps[1].clone()];
        for conv in [Convention::Realness, Convention::Verbatim] {
            let r = check(seed)
                .run(&g_inputs, |t, v| {
                    let fake = Judgement { scalar: v[0], perspective: v[1] };
                    Ok(loss_adv_g(t, fake, Some(v[2]), &a, conv, true).unwrap().total)
                })
                .unwrap();
            assert!(r.max_rel_err < 1e-4, "adv_g {conv} seed {seed}: {r:?}");
        }
        let r = check(seed)
            .run(&[inputs[0].clone(), inputs[2].clone()], |t, v| {
                let (d, g) = loss_tal(t, v[0], v[1]).unwrap();
                Ok(t.add(d, g)?)
            })
            .unwrap();
        assert!(r.max_rel_err < 1e-4, "tal seed {seed}: {r:?}");

        let imgs = [
            uniform(&[1, 1, 8, 8], -1.0, 1.0, seed + 700),
            uniform(&[1, 1, 8, 8], -1.0, 1.0, seed + 800),
        ];
        let r = check(seed).run(&imgs, |t, v| Ok(fmse_loss(t, v[0], v[1]).unwrap())).unwrap();
        assert!(r.max_rel_err < 1e-4, "fmse seed {seed}: {r:?}");
        let r = check(seed)
            .run(&imgs[..1], |t, v| {
                let y = fft2c_op(t, v[0]).unwrap();
                Ok(projection(t, y, seed))
            })
            .unwrap();
        assert!(r.max_rel_err < 1e-4, "fft2c seed {seed}: {r:?}");

        let phi = FeatureExtractor::<f64>::new(seed).unwrap();
        let r = check(seed)
            .run(&imgs, |t, v| Ok(perceptual_loss(t, &phi, v[0], v[1]).unwrap()))
            .unwrap();
        assert!(r.max_rel_err < 1e-4, "vgg seed {seed}: {r:?}");

        let parts = [
            Tensor::scalar(0.3 + seed as f64 * 0.01),
            Tensor::scalar(0.7),
            Tensor::scalar(1.1),
        ];
        let w = LossWeights::default();
        let r = check(seed)
            .run(&parts, |t, v| Ok(loss_total(t, v[0], v[1], v[2], &w).unwrap()))
            .unwrap();
        assert!(r.max_rel_err < 1e-4, "total seed {seed}: {r:?}");
    }
}
