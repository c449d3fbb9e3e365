//! Noise schedule, forward/reverse process and denoiser contracts.

use ndarray::Array4;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vrmatte::checkpoint::Checkpoint;
use vrmatte::codec::{standard_normal_latent, CodecConfig, ConvCodec, LatentBlock};
use vrmatte::diffusion::{
    forward_sample, from_alpha_bar, make_schedule, reverse_step, Denoiser, DenoiserConfig, DiffusionInput, LatentNorm, ScheduleConfig,
    ScheduleKind,
};
use vrmatte::text::{encode_text, TextConfig};

fn latent(shape: (usize, usize, usize, usize), seed: u64) -> LatentBlock<f64> {
    standard_normal_latent(shape, shape.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_denoiser(seed: u64) -> Denoiser<f64> {
    let cfg = DenoiserConfig {
        latent_channels: 2,
        patch: 1,
        d_model: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        text: TextConfig { slots: 4, dim: 8, ..TextConfig::default() },
    };
    Denoiser::new(cfg, seed).unwrap()
}

#[test]
fn linear_reference_schedule_ends_near_pure_noise() {
    let s = make_schedule(1000, ScheduleKind::Linear, 1e-4, 2e-2).unwrap();
    let direct: f64 = (0..1000).map(|i| 1.0 - (1e-4 + (2e-2 - 1e-4) * i as f64 / 999.0)).product();
    assert!((s.alpha_bar[999] - direct).abs() < 1e-15);
    assert!(s.alpha_bar[999] < 0.01);
}

#[test]
fn forward_limits_return_data_or_noise() {
    let x0 = latent((2, 2, 2, 3), 1);
    let eps = latent((2, 2, 2, 3), 2);
    let s = from_alpha_bar(ScheduleKind::Linear, vec![1.0, 0.0], vec![1, 2]);
    assert_eq!(forward_sample(&x0, 1, &eps, &s).unwrap(), x0);
    assert_eq!(forward_sample(&x0, 2, &eps, &s).unwrap(), eps);
}

#[test]
fn terminal_step_adds_no_noise() {
    let s = make_schedule(10, ScheduleKind::Linear, 1e-3, 0.2).unwrap();
    let x = latent((1, 2, 2, 2), 3);
    let e = latent((1, 2, 2, 2), 4);
    let a = reverse_step(&x, 1, &e, &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let b = reverse_step(&x, 1, &e, &s, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    assert_eq!(a, b);
    let c = reverse_step(&x, 2, &e, &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let d = reverse_step(&x, 2, &e, &s, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    assert_ne!(c, d);
}

#[test]
fn diffusion_checkpoint_round_trips_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let codec = ConvCodec::<f64>::new(CodecConfig::default(), 0).unwrap();
    let mut w = small_denoiser(5);
    w.norm = LatentNorm {
        video_shift: vec![0.1, -0.2],
        video_scale: vec![2.0, 0.5],
        matte_shift: vec![0.0, 0.3],
        matte_scale: vec![1.5, 1.0],
        matte_clip: Some(3.0),
    };
    let schedule = ScheduleConfig::default();
    let path = dir.path().join("d.ckpt");
    Checkpoint::for_diffusion(&codec, &w, &schedule, 12, "abc").save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.header.step, 12);
    assert_eq!(back.schedule().unwrap(), schedule);
    let w2 = back.denoiser().unwrap();
    assert_eq!(w2.norm, w.norm);
    assert_eq!(w2.digest(), w.digest());
}

#[test]
fn trained_denoiser_responds_to_the_caption() {
    // A fresh head is zero, so perturb every parameter to stand in for training.
    let mut w = small_denoiser(1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for m in w.params.values_mut() {
        for v in m.data.iter_mut() {
            *v += 0.3 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng);
        }
    }
    let z = latent((1, 2, 2, 2), 6);
    let x = latent((1, 2, 2, 2), 7);
    let cfg = w.config.text.clone();
    let a = encode_text::<f64>("the red circle", &cfg).unwrap();
    let b = encode_text::<f64>("the blue square", &cfg).unwrap();
    let pa = w.predict(&DiffusionInput { z_video: &z, z_noise: &x, t: 10, text: &a }).unwrap();
    let pb = w.predict(&DiffusionInput { z_video: &z, z_noise: &x, t: 10, text: &b }).unwrap();
    assert!(pa.as_slice().iter().zip(pb.as_slice()).any(|(u, v)| u != v));
}

fn shape() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..3, 1usize..4, 1usize..4, 1usize..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn alpha_bar_strictly_decreases(t in 1usize..400, lo in 1e-5f64..0.05, span in 0.0f64..0.4, cosine in any::<bool>()) {
        let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
        let s = make_schedule(t, kind, lo, lo + span).unwrap();
        prop_assert!(s.alpha_bar[0] < 1.0);
        for w in s.alpha_bar.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        prop_assert!(s.alpha_bar.iter().all(|a| *a > 0.0));
    }

    #[test]
    fn respacing_keeps_a_decreasing_subsequence(steps in 1usize..60) {
        let base = make_schedule(200, ScheduleKind::Linear, 1e-4, 2e-2).unwrap();
        let s = base.respace(steps).unwrap();
        prop_assert_eq!(s.len(), steps);
        prop_assert_eq!(*s.timesteps.last().unwrap(), 200);
        for w in s.timesteps.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for (ab, t) in s.alpha_bar.iter().zip(&s.timesteps) {
            prop_assert_eq!(*ab, base.alpha_bar[t - 1]);
        }
    }

    #[test]
    fn single_step_reverse_inverts_forward(sh in shape(), seed in any::<u64>(), beta in 0.01f64..0.99) {
        let s = make_schedule(1, ScheduleKind::Linear, beta, beta).unwrap();
        let x0 = latent(sh, seed);
        let eps = latent(sh, seed ^ 1);
        let xt = forward_sample(&x0, 1, &eps, &s).unwrap();
        let back = reverse_step(&xt, 1, &eps, &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in back.as_slice().iter().zip(x0.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn oracle_reverse_loop_recovers_the_data(sh in shape(), seed in any::<u64>()) {
        let s = make_schedule(1000, ScheduleKind::Linear, 1e-4, 2e-2).unwrap().respace(50).unwrap();
        let x0 = latent(sh, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let mut x = standard_normal_latent(sh, sh.0, &mut rng);
        for t in (1..=s.len()).rev() {
            let ab = s.alpha_bar[t - 1];
            let true_eps: Vec<f64> = x.as_slice().iter().zip(x0.as_slice()).map(|(xt, x0)| (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt()).collect();
            x = reverse_step(&x, t, &x.with_data(true_eps), &s, &mut rng).unwrap();
        }
        let mse = x.as_slice().iter().zip(x0.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x0.len() as f64;
        prop_assert!(mse < 1e-3, "{}", mse);
    }

    #[test]
    fn prediction_shape_matches_noise(t in 1usize..3, h in 1usize..4, w in 1usize..4, step in 1usize..1000, seed in any::<u64>()) {
        let d = small_denoiser(seed);
        let z = latent((t, h, w, 2), seed);
        let x = latent((t, h, w, 2), seed ^ 3);
        let text = encode_text::<f64>("a cat", &d.config.text).unwrap();
        let eps = d.predict(&DiffusionInput { z_video: &z, z_noise: &x, t: step, text: &text }).unwrap();
        prop_assert_eq!(eps.shape(), x.shape());
        prop_assert!(eps.as_slice().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn non_finite_latents_are_rejected() {
    let bad = Array4::from_elem((1, 1, 1, 2), f64::NAN);
    assert!(LatentBlock::new(bad, 1).is_err());
}
