//! Property-based checks over metrics, the data pipeline and persistence.

use proptest::prelude::*;

use psgan::checkpoint::{CheckpointData, Record};
use psgan::data::sample::{image_to_planar, planar_to_image, signed_to_unit, unit_to_signed};
use psgan::data::{build_sample, filter_regions, generate_image, Annotation, SynthSpec};
use psgan::discriminator::DiscriminatorConfig;
use psgan::generator::GeneratorConfig;
use psgan::metrics::edit_distance;
use psgan::train::TrainConfig;

fn rect_ann(x0: f32, y0: f32, w: f32, h: f32, ignore: bool) -> Annotation {
    Annotation {
        points: vec![(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)],
        script: "Latin".into(),
        transcript: if ignore { "###".into() } else { "AB".into() },
    }
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(
        a in "[a-z ]{0,10}",
        b in "[a-z ]{0,10}",
        c in "[a-z ]{0,10}",
    ) {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn edit_distance_is_bounded_and_counts_chars(
        a in "\\PC{0,8}",
        b in "\\PC{0,8}",
    ) {
        let (la, lb) = (a.chars().count(), b.chars().count());
        let d = edit_distance(&a, &b);
        prop_assert!(d >= la.abs_diff(lb));
        prop_assert!(d <= la.max(lb));
    }

    #[test]
    fn filter_regions_is_monotone_in_the_threshold(
        rects in prop::collection::vec(
            (0.0f32..500.0, 0.0f32..500.0, 1.0f32..400.0, 1.0f32..400.0, any::<bool>()),
            0..12,
        ),
        t1 in 0.0f32..300.0,
        dt in 0.0f32..200.0,
    ) {
        let anns: Vec<Annotation> =
            rects.iter().map(|&(x, y, w, h, ig)| rect_ann(x, y, w, h, ig)).collect();
        let t2 = t1 + dt;
        let loose = filter_regions(&anns, t1);
        let tight = filter_regions(&anns, t2);
        for a in &tight {
            prop_assert!(!a.is_ignore());
            prop_assert!(a.max_dimension() >= t2);
            prop_assert!(loose.iter().any(|b| std::ptr::eq(*a, *b)));
        }
        for a in &loose {
            prop_assert!(a.max_dimension() >= t1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthetic_samples_keep_pipeline_invariants(
        size in prop::sample::select(vec![48usize, 64, 96]),
        regions in 1usize..=3,
        seed in 0u64..1000,
        index in 0u64..50,
    ) {
        let spec = SynthSpec {
            image_size: size,
            regions_min: regions,
            regions_max: regions,
            seed,
        };
        spec.validate().unwrap();
        let synth = generate_image(&spec, index).unwrap();
        let img = planar_to_image(size, size, &synth.pixels);
        let sample = build_sample(&img, &synth.annotations).unwrap().expect("regions kept");

        prop_assert_eq!(sample.masks.len(), sample.transcripts.len());
        prop_assert!(sample.masks.len() >= 1);

        // Masks are pairwise disjoint.
        let hw = size * size;
        let mut claimed = vec![false; hw];
        for m in sample.masks.iter() {
            for (i, &v) in m.data().iter().enumerate() {
                if v != 0.0 {
                    prop_assert!(!claimed[i], "pixel {i} claimed twice");
                    claimed[i] = true;
                }
            }
        }

        // The style image is the target, and the content image only
        // deviates from the target inside region masks.
        prop_assert_eq!(&sample.style, &sample.target);
        for (i, c) in claimed.iter().enumerate() {
            if !c {
                for ch in 0..3 {
                    prop_assert_eq!(
                        sample.content[ch * hw + i],
                        sample.target[ch * hw + i],
                        "content differs from target outside masks at pixel {}", i
                    );
                }
            }
        }
    }

    #[test]
    fn quantized_images_survive_the_signed_roundtrip(
        side in 2usize..12,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bytes: Vec<u8> = (0..3 * side * side).map(|_| rng.gen()).collect();
        let img = image::RgbImage::from_raw(side as u32, side as u32, bytes).unwrap();

        let (h, w, mut planar) = image_to_planar(&img);
        prop_assert_eq!((h, w), (side, side));
        unit_to_signed(&mut planar);
        signed_to_unit(&mut planar);
        let back = planar_to_image(h, w, &planar);
        prop_assert_eq!(back.as_raw(), img.as_raw());
    }
}

fn record_strategy() -> impl Strategy<Value = Record> {
    (
        "[a-z][a-z0-9._]{0,15}",
        prop::collection::vec(1usize..5, 1..=3),
    )
        .prop_flat_map(|(name, shape)| {
            let n: usize = shape.iter().product();
            (
                Just(name),
                Just(shape),
                prop::collection::vec(-1e3f32..1e3, n),
            )
        })
        .prop_map(|(name, shape, data)| Record { name, shape, data })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_roundtrip_exactly(
        step in any::<u64>(),
        rng_seed in any::<[u8; 32]>(),
        rng_word_pos in any::<u128>(),
        rng_stream in any::<u64>(),
        lambda_l1 in 0.0f32..200.0,
        learning_rate in 1e-6f32..1.0,
        beta1 in 0.0f32..0.99,
        beta2 in 0.0f32..0.999,
        batch_size in 1usize..4,
        steps in 1u64..100_000,
        seed in any::<u64>(),
        gen_k in 1usize..4,
        n_downsamples in 0usize..3,
        n_resblocks in 0usize..4,
        dropout in 0.0f32..0.9,
        disc_base in 1usize..64,
        disc_layers in 1usize..4,
        adam_g_t in any::<u64>(),
        adam_d_t in any::<u64>(),
        records in prop::collection::vec(record_strategy(), 0..6),
    ) {
        let data = CheckpointData {
            step,
            rng_seed,
            rng_word_pos,
            rng_stream,
            train: TrainConfig {
                lambda_l1,
                learning_rate,
                adam_beta1: beta1,
                adam_beta2: beta2,
                batch_size,
                steps,
                seed,
            },
            gen: GeneratorConfig {
                image_size: (4 * gen_k) << n_downsamples,
                base_channels: 8,
                n_downsamples,
                n_resblocks,
                dropout,
            },
            disc: DiscriminatorConfig {
                base_channels: disc_base,
                n_layers: disc_layers,
            },
            adam_g_t,
            adam_d_t,
            records,
        };
        let bytes = data.to_bytes();
        let parsed = CheckpointData::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&parsed, &data);
        prop_assert_eq!(parsed.to_bytes(), bytes);
    }
}
