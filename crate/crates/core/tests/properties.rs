mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swcm_core::config::RunConfig;
use swcm_core::data::special::{BOS, EOS, MASK};
use swcm_core::data::{dae_noise_with, frame_sequence, frame_truncated, sampling_weights, unframe, NoiseConfig, Vocab};
use swcm_core::eval::{lcs_length, rouge_l};
use swcm_core::grafting::build_decoder_layout;
use swcm_core::train::{clip_grad_slices, lr_schedule, TrainConfig};

fn vocab() -> Vocab {
    Vocab::new(&["zh", "bo", "kk"], "abcdefgh ".chars()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tokenize_round_trips_in_vocabulary_text(s in "[a-h ]{0,40}") {
        let v = vocab();
        prop_assert_eq!(v.detokenize(&v.tokenize(&s)), s);
    }

    #[test]
    fn frame_then_unframe_is_identity(body in prop::collection::vec(8u32..17, 0..30), lang in 0usize..3) {
        let v = vocab();
        let l = &v.languages()[lang];
        let framed = frame_sequence(&body, l);
        prop_assert_eq!(framed[0], BOS);
        prop_assert!(v.is_language_token(framed[1]));
        let (tok, inner) = unframe(&framed).unwrap();
        prop_assert_eq!(tok, l.token());
        prop_assert_eq!(inner, &body[..]);
        // Another language changes only position 1.
        let other = frame_sequence(&body, &v.languages()[(lang + 1) % 3]);
        let diffs: Vec<usize> = (0..framed.len()).filter(|&i| framed[i] != other[i]).collect();
        prop_assert_eq!(diffs, vec![1]);
    }

    #[test]
    fn truncation_respects_budget(body in prop::collection::vec(8u32..17, 0..40), max_len in 3usize..20) {
        let v = vocab();
        let framed = frame_truncated(&body, &v.languages()[0], max_len).unwrap();
        prop_assert!(framed.len() <= max_len);
        prop_assert_eq!(*framed.last().unwrap(), EOS);
        let keep = body.len().min(max_len - 3);
        prop_assert_eq!(&framed[2..framed.len() - 1], &body[..keep]);
    }

    #[test]
    fn noise_preserves_frame_and_target(
        body in prop::collection::vec(8u32..17, 0..60),
        ratio in 0.0f64..=1.0,
        lambda in 0.5f64..8.0,
        seed in any::<u64>(),
    ) {
        let v = vocab();
        let framed = frame_sequence(&body, &v.languages()[1]);
        let cfg = NoiseConfig { mask_ratio: ratio, span_lambda: lambda, seed };
        let e = dae_noise_with(&framed, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&e.target, &framed);
        prop_assert_eq!(&e.input[..2], &framed[..2]);
        prop_assert_eq!(*e.input.last().unwrap(), EOS);
        prop_assert!(e.masked as f64 >= ratio * body.len() as f64);
        prop_assert!(e.masked <= body.len());
        // Unmasked tokens survive in order, and no two masks are adjacent.
        let inner = &e.input[2..e.input.len() - 1];
        prop_assert!(inner.windows(2).all(|w| !(w[0] == MASK && w[1] == MASK)));
        let kept: Vec<u32> = inner.iter().copied().filter(|&t| t != MASK).collect();
        prop_assert_eq!(kept.len() + e.masked, body.len());
        prop_assert_eq!(lcs_length(&kept, &body), kept.len());
    }

    #[test]
    fn sampling_weights_are_a_distribution(
        q in prop::collection::vec(1e-6f64..1.0, 1..8),
        alpha in 1e-3f64..2.0,
    ) {
        let w = sampling_weights(&q, alpha).unwrap();
        prop_assert!((w.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..q.len() {
            for j in 0..q.len() {
                if q[i] > q[j] {
                    prop_assert!(w.p[i] >= w.p[j]);
                }
            }
        }
        let argmax = |xs: &[f64]| (0..xs.len()).fold(0, |b, i| if xs[i] > xs[b] { i } else { b });
        prop_assert_eq!(argmax(&w.p), argmax(&q));
        if alpha < 1.0 {
            // Smoothing moves mass towards the smallest language.
            let small = (0..q.len()).fold(0, |b, i| if q[i] < q[b] { i } else { b });
            prop_assert!(w.p[small] >= w.q[small] - 1e-15);
        }
    }

    #[test]
    fn tiny_alpha_flattens_ratios(q in prop::collection::vec(1e-3f64..1.0, 2..6)) {
        let w = sampling_weights(&q, 1e-6).unwrap();
        for i in 0..q.len() {
            prop_assert!((w.p[i] / w.p[0] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rouge_is_bounded_and_symmetric(
        a in prop::collection::vec(0u8..5, 0..15),
        b in prop::collection::vec(0u8..5, 0..15),
    ) {
        let x = rouge_l(&a, &b, 1.0).unwrap();
        let y = rouge_l(&b, &a, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&x.f));
        prop_assert_eq!(x.p, y.r);
        prop_assert_eq!(x.r, y.p);
        prop_assert!((x.f - y.f).abs() < 1e-15);
        prop_assert_eq!(lcs_length(&a, &a), a.len());
    }

    #[test]
    fn clipping_bounds_the_norm(g in prop::collection::vec(-10.0f64..10.0, 1..50), max in 0.1f64..5.0) {
        let mut a = g.clone();
        let mut views: Vec<&mut [f64]> = vec![&mut a];
        let pre = clip_grad_slices(&mut views, max);
        let post = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((pre - g.iter().map(|x| x * x).sum::<f64>().sqrt()).abs() < 1e-12);
        prop_assert!(post <= max + 1e-12);
        if pre <= max {
            prop_assert_eq!(a, g);
        }
    }

    #[test]
    fn lr_schedule_is_piecewise_linear(total in 10u64..400, p in 0.05f64..0.5) {
        let cfg = TrainConfig { warmup_proportion: p, ..Default::default() };
        let w = (p * total as f64).ceil() as u64;
        let lr = |s| lr_schedule(s, total, &cfg).unwrap();
        prop_assert!((lr(0) - cfg.warmup_floor_lr).abs() < 1e-18);
        prop_assert!((lr(w) - cfg.peak_lr).abs() < 1e-18);
        prop_assert_eq!(lr(total), 0.0);
        let mut max = 0.0f64;
        for s in 0..=total {
            max = max.max(lr(s));
            prop_assert!(lr(s) <= cfg.peak_lr + 1e-18);
            if s > 0 && s < total && s != w {
                // Second differences vanish away from the kink.
                let d2 = lr(s + 1) - 2.0 * lr(s) + lr(s - 1);
                prop_assert!(d2.abs() < 1e-15);
            }
        }
        prop_assert!((max - cfg.peak_lr).abs() < 1e-18);
    }

    #[test]
    fn normal_layers_are_separated_by_full_groups(n in 1usize..40, x in 1usize..10) {
        let l = build_decoder_layout(n, x).unwrap();
        prop_assert_eq!(l.len(), n + n / x);
        let sources: Vec<usize> = l.entries.iter().filter_map(|e| e.source_encoder_layer).collect();
        prop_assert_eq!(sources, (0..n).collect::<Vec<_>>());
        prop_assert!(l.validate(n, x).is_ok());
    }

    #[test]
    fn config_text_round_trips(lr in 1e-6f64..1e-2, seed in any::<u64>(), x in 1usize..6, mt in any::<bool>()) {
        let mut cfg = RunConfig::default();
        cfg.train.peak_lr = lr;
        cfg.train.seed = seed;
        cfg.model.insert_every_x = x;
        cfg.train.use_mt = mt;
        cfg.train.freeze = vec!["encoder.".into(), "embeddings.".into()];
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoints_round_trip_bitwise(
        n in 1usize..4,
        heads in 1usize..3,
        x in 1usize..4,
        seed in any::<u64>(),
        tie in any::<bool>(),
    ) {
        let d = 4 * heads;
        let cfg = common::config(n, d, heads, 2 * d, 11, 6, x);
        let opts = swcm_core::grafting::GraftOptions { tie_decoder: tie, ..Default::default() };
        let m = swcm_core::grafting::assemble_model(cfg, swcm_core::model::EncoderInit::Random, opts, seed).unwrap();
        let bytes = swcm_core::checkpoint::to_bytes(&m, None, None).unwrap();
        let back = swcm_core::checkpoint::from_bytes(&bytes).unwrap();
        prop_assert!(swcm_core::checkpoint::models_bitwise_equal(&m, &back.model));
        prop_assert_eq!(swcm_core::checkpoint::to_bytes(&back.model, None, None).unwrap(), bytes);
    }
}
