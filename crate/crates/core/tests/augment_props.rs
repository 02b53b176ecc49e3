use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symdepth_core::augment::{
    horizontal_flip, nearfarmix, nearfarmix_batch, roll_batch, sample_threshold, MixConfig, NearFarMasks, Sample,
    ThresholdRange,
};
use symdepth_core::tensor::Tensor;

fn random_sample(rng: &mut ChaCha8Rng, h: usize, w: usize, depth: (f64, f64)) -> Sample {
    let image = Tensor::from_fn([h, w, 3], |_| rng.random::<f64>());
    let d = Tensor::from_fn([h, w, 1], |_| {
        // coarse grid so that ties with a threshold drawn from the map occur
        (rng.random_range(depth.0..depth.1) * 4.0).round() / 4.0
    });
    let semantics = Tensor::from_fn([h, w, 1], |_| rng.random_range(0..5) as f64);
    Sample::new(image, d, semantics).unwrap()
}

/// Pixelwise select: near pixels of the first sample, everything else from
/// the second.
fn select(s1: &Sample, s2: &Sample, thr: f64) -> Sample {
    let pick = |a: &Tensor, b: &Tensor| {
        let c = a.shape()[2];
        let data = (0..a.len()).map(|i| if s1.depth.data()[i / c] <= thr { a.data()[i] } else { b.data()[i] }).collect();
        Tensor::new(a.shape().to_vec(), data).unwrap()
    };
    Sample {
        image: pick(&s1.image, &s2.image),
        depth: pick(&s1.depth, &s2.depth),
        semantics: pick(&s1.semantics, &s2.semantics),
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn assert_bitwise(a: &Sample, b: &Sample) {
    assert_eq!(bits(&a.image), bits(&b.image));
    assert_eq!(bits(&a.depth), bits(&b.depth));
    assert_eq!(bits(&a.semantics), bits(&b.semantics));
}

#[test]
fn hand_case_two_by_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s1 = random_sample(&mut rng, 2, 2, (1.0, 8.0));
    s1.depth = Tensor::new([2, 2, 1], vec![1.0, 5.0, 3.0, 7.0]).unwrap();
    let s2 = random_sample(&mut rng, 2, 2, (1.0, 8.0));
    let (out, _) = nearfarmix(&s1, &s2, 4.0).unwrap();
    for (pixel, from_first) in [(0, true), (1, false), (2, true), (3, false)] {
        let src = if from_first { &s1 } else { &s2 };
        assert_eq!(out.image.data()[pixel * 3..pixel * 3 + 3], src.image.data()[pixel * 3..pixel * 3 + 3]);
        assert_eq!(out.depth.data()[pixel], src.depth.data()[pixel]);
        assert_eq!(out.semantics.data()[pixel], src.semantics.data()[pixel]);
    }
}

#[test]
fn degenerate_thresholds_and_sources() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s1 = random_sample(&mut rng, 3, 4, (1.0, 5.0));
    let s2 = random_sample(&mut rng, 3, 4, (1.0, 5.0));
    assert_bitwise(&nearfarmix(&s1, &s2, 0.5).unwrap().0, &s2);
    assert_bitwise(&nearfarmix(&s1, &s1, 2.0).unwrap().0, &s1);
    let other = random_sample(&mut rng, 4, 4, (1.0, 5.0));
    assert!(nearfarmix(&s1, &other, 2.0).is_err());
}

#[test]
fn roll_batch_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<Sample> = (0..3).map(|_| random_sample(&mut rng, 2, 2, (1.0, 2.0))).collect();
    let rolled = roll_batch(&batch).unwrap();
    assert_eq!(rolled, vec![batch[2].clone(), batch[0].clone(), batch[1].clone()]);
    assert_eq!(roll_batch(&batch[..1]).unwrap(), batch[..1].to_vec());
    let pair = &batch[..2];
    assert_eq!(roll_batch(&roll_batch(pair).unwrap()).unwrap(), pair.to_vec());
    assert!(roll_batch(&[]).is_err());
}

#[test]
fn threshold_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut wide = random_sample(&mut rng, 4, 4, (0.4, 9.8));
    wide.depth.data_mut()[0] = 0.4;
    wide.depth.data_mut()[1] = 9.8;
    let range = ThresholdRange::from_batch(1.5, 6.5, &[wide.clone(), wide.clone()]).unwrap();
    assert_eq!(range.interval(), Some((1.5, 6.5)));
    for _ in 0..10_000 {
        let t = sample_threshold(&range, &mut rng).unwrap();
        assert!((1.5..=6.5).contains(&t));
    }
    let shallow = Sample { depth: Tensor::full([4, 4, 1], 1.0), ..wide };
    let range = ThresholdRange::from_batch(1.5, 6.5, &[shallow]).unwrap();
    assert_eq!(sample_threshold(&range, &mut rng), None);

    let range = ThresholdRange { dataset_min: 1.0, dataset_max: 2.0, batch_min: 0.0, batch_max: 5.0 };
    let a = sample_threshold(&range, &mut ChaCha8Rng::seed_from_u64(42));
    let b = sample_threshold(&range, &mut ChaCha8Rng::seed_from_u64(42));
    assert_eq!(a, b);
}

#[test]
fn batch_level_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<Sample> = (0..4).map(|_| random_sample(&mut rng, 4, 4, (1.0, 7.0))).collect();
    let never = MixConfig { p_apply: 0.0, ..MixConfig::indoor() };
    assert_eq!(nearfarmix_batch(&batch, &never, &mut rng).unwrap().samples, batch);
    let empty = MixConfig { p_apply: 1.0, depth_min: 50.0, depth_max: 60.0 };
    let out = nearfarmix_batch(&batch, &empty, &mut rng).unwrap();
    assert_eq!((out.samples, out.thresholds), (batch.clone(), None));
    let single = nearfarmix_batch(&batch[..1], &MixConfig { p_apply: 1.0, ..MixConfig::indoor() }, &mut rng).unwrap();
    assert_eq!(single.samples, batch[..1].to_vec());
}

#[test]
fn flip_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_sample(&mut rng, 3, 5, (1.0, 4.0));
    assert_eq!(horizontal_flip(&horizontal_flip(&s)), s);
    let narrow = random_sample(&mut rng, 3, 1, (1.0, 4.0));
    assert_eq!(horizontal_flip(&narrow), narrow);
    let coord = Sample { depth: Tensor::from_fn([3, 5, 1], |i| i[1] as f64 + 1.0), ..s };
    let flipped = horizontal_flip(&coord);
    for i in 0..3 {
        for j in 0..5 {
            assert_eq!(flipped.depth.at(&[i, j, 0]), (5 - 1 - j) as f64 + 1.0);
        }
    }
}

/// 100 random instances; a third use a threshold equal to a depth value.
#[test]
fn four_mask_blend_equals_select_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ties = 0;
    for k in 0..100 {
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let s1 = random_sample(&mut rng, h, w, (0.5, 8.0));
        let s2 = random_sample(&mut rng, h, w, (0.5, 8.0));
        let thr = if k % 3 == 0 {
            ties += 1;
            s1.depth.data()[rng.random_range(0..h * w)]
        } else {
            rng.random_range(0.0..9.0)
        };
        let (out, masks) = nearfarmix(&s1, &s2, thr).unwrap();
        assert_bitwise(&out, &select(&s1, &s2, thr));
        for p in 0..h * w {
            let (m1, m2, mo, me) =
                (masks.near.data()[p], masks.pre_far.data()[p], masks.overlap.data()[p], masks.exclusive.data()[p]);
            assert_eq!(m1 + m2 - mo + me, 1.0);
            if m1 == 1.0 {
                assert!(out.depth.data()[p] <= thr);
            }
        }
    }
    assert!(ties >= 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_partition_unity(d1 in prop::collection::vec(0.0..10.0f64, 12), d2 in prop::collection::vec(0.0..10.0f64, 12), thr in 0.0..10.0f64) {
        let t = |d: Vec<f64>| Tensor::new([3, 4, 1], d).unwrap();
        let m = NearFarMasks::compute(&t(d1), &t(d2), thr).unwrap();
        for p in 0..12 {
            let vals = [m.near.data()[p], m.pre_far.data()[p], m.overlap.data()[p], m.exclusive.data()[p]];
            prop_assert!(vals.iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert_eq!(vals[0] + vals[1] - vals[2] + vals[3], 1.0);
        }
    }

    #[test]
    fn batch_mix_provenance_and_determinism(seed in any::<u64>(), b in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<Sample> = (0..b).map(|_| random_sample(&mut rng, 4, 4, (0.5, 8.0))).collect();
        let cfg = MixConfig { p_apply: 1.0, ..MixConfig::indoor() };
        let run = |s: u64| nearfarmix_batch(&batch, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        let out = run(seed ^ 0xabc);
        prop_assert_eq!(&out, &run(seed ^ 0xabc));
        let Some(thresholds) = &out.thresholds else {
            // empty interval: identity
            prop_assert_eq!(&out.samples, &batch);
            return Ok(());
        };
        for (i, (mixed, &thr)) in out.samples.iter().zip(thresholds).enumerate() {
            let partner = &batch[(i + b - 1) % b];
            prop_assert!((1.5..=6.5).contains(&thr));
            for p in 0..16 {
                // every pixel's triplet comes jointly from one source
                let from = |s: &Sample| {
                    s.image.data()[p * 3..p * 3 + 3] == mixed.image.data()[p * 3..p * 3 + 3]
                        && s.depth.data()[p] == mixed.depth.data()[p]
                        && s.semantics.data()[p] == mixed.semantics.data()[p]
                };
                let near = batch[i].depth.data()[p] <= thr;
                let source = if near { &batch[i] } else { partner };
                prop_assert!(from(source));
            }
        }
    }
}
