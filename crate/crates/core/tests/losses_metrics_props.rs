use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use symdepth_core::losses::{jaccard_loss, jaccard_loss_masked, one_hot, si_loss, total_loss, LossConfig};
use symdepth_core::metrics::{depth_metrics, miou};
use symdepth_core::tensor::{grad_check, GradCheckOptions, Tape, Tensor};

fn plane(data: Vec<f64>) -> Tensor {
    let n = data.len();
    Tensor::new([1, 1, n, 1], data).unwrap()
}

fn si_value(pred: &Tensor, gt: &Tensor, mask: &Tensor, cfg: &LossConfig) -> f64 {
    let tape = Tape::new();
    si_loss(tape.constant(pred.clone()), gt, mask, cfg).unwrap().value().item()
}

fn jaccard_value(pred: &Tensor, gt: &Tensor) -> f64 {
    let tape = Tape::new();
    jaccard_loss(tape.constant(pred.clone()), gt).unwrap().value().item()
}

/// Rows of `[n, c]` probabilities built from positive weights.
fn probs(weights: &[f64], c: usize) -> Tensor {
    let data = weights
        .chunks(c)
        .flat_map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(move |v| v / s)
        })
        .collect();
    Tensor::new([1, 1, weights.len() / c, c], data).unwrap()
}

#[test]
fn closed_forms() {
    let cfg = LossConfig::default();
    let one = plane(vec![1.0]);
    assert_abs_diff_eq!(si_value(&plane(vec![2.0]), &one, &one, &cfg), 2.6844, epsilon = 1e-3);
    let pred = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap();
    let gt = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_abs_diff_eq!(jaccard_value(&pred, &gt), 5.0 / 12.0, epsilon = 1e-6);
    assert_eq!(total_loss(0.0, 0.0), 0.0);
    assert_abs_diff_eq!(total_loss(2.5, 0.4), 2.9, epsilon = 1e-15);
}

#[test]
fn si_loss_gradient_on_eight_by_eight() {
    let gt = Tensor::from_fn([1, 8, 8, 1], |i| 1.0 + 0.3 * i[1] as f64 + 0.1 * i[2] as f64);
    let pred = Tensor::from_fn([1, 8, 8, 1], |i| 1.5 + ((i[1] * 7 + i[2] * 3) % 5) as f64 * 0.4);
    let mask = Tensor::from_fn([1, 8, 8, 1], |i| if (i[1] + i[2]) % 7 == 0 { 0.0 } else { 1.0 });
    let cfg = LossConfig::default();
    let report = grad_check("si_loss", &[pred], |_, v| si_loss(v[0], &gt, &mask, &cfg), &GradCheckOptions::default());
    assert!(report.passed, "{report}");
}

#[test]
fn jaccard_masked_ignores_invalid_pixels() {
    let pred = probs(&[3.0, 1.0, 1.0, 2.0, 5.0, 1.0], 2);
    let (gt, mask) = one_hot(&Tensor::new([1, 1, 3, 1], vec![0.0, 1.0, 9.0]).unwrap(), 2).unwrap();
    let tape = Tape::new();
    let masked = jaccard_loss_masked(tape.constant(pred.clone()), &gt, &mask).unwrap().value().item();
    let two = Tensor::new([1, 1, 2, 2], pred.data()[..4].to_vec()).unwrap();
    let gt2 = Tensor::new([1, 1, 2, 2], gt.data()[..4].to_vec()).unwrap();
    assert_abs_diff_eq!(masked, jaccard_value(&two, &gt2), epsilon = 1e-15);
}

/// Confusion counts by direct enumeration over class pairs.
fn brute_miou(pred: &[usize], gt: &[usize], classes: usize) -> Option<f64> {
    let mut ious = Vec::new();
    for k in 0..classes {
        let mut inter = 0;
        let mut union = 0;
        for (&p, &g) in pred.iter().zip(gt) {
            if g >= classes {
                continue;
            }
            let (a, b) = (p == k, g == k);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

#[test]
fn miou_matches_brute_force_on_50_maps() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let classes = rng.random_range(2..6);
        let n = rng.random_range(1..40);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        // ground truth may contain the ignore label
        let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..=classes)).collect();
        match brute_miou(&pred, &gt, classes) {
            Some(expect) => assert_abs_diff_eq!(miou(&pred, &gt, classes).unwrap(), expect, epsilon = 1e-12),
            None => assert!(miou(&pred, &gt, classes).is_err()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn si_loss_nonnegative(pred in prop::collection::vec(1e-3..20.0f64, 1..30), seed in 0.5..10.0f64, lambda in 0.0..=1.0f64) {
        let n = pred.len();
        let gt = plane((0..n).map(|i| seed + i as f64 * 0.37).collect());
        let mask = plane(vec![1.0; n]);
        let v = si_value(&plane(pred), &gt, &mask, &LossConfig { lambda, ..Default::default() });
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn si_loss_scale_invariant_at_lambda_one(pred in prop::collection::vec(0.1..20.0f64, 2..30)) {
        let n = pred.len();
        let gt = plane((0..n).map(|i| 1.0 + (i % 5) as f64 * 0.8).collect());
        let mask = plane(vec![1.0; n]);
        let cfg = LossConfig { lambda: 1.0, ..Default::default() };
        let base = si_value(&plane(pred.clone()), &gt, &mask, &cfg);
        for c in [0.5, 2.0, 10.0] {
            let scaled = plane(pred.iter().map(|p| p * c).collect());
            prop_assert!((si_value(&scaled, &gt, &mask, &cfg) - base).abs() <= 1e-9);
        }
    }

    #[test]
    fn jaccard_in_unit_interval(w in prop::collection::vec(0.01..5.0f64, 3..=30), labels in prop::collection::vec(0usize..3, 10)) {
        let n = w.len() / 3;
        let pred = probs(&w[..n * 3], 3);
        let lab = Tensor::new([1, 1, n, 1], labels[..n].iter().map(|&l| l as f64).collect()).unwrap();
        let (gt, _) = one_hot(&lab, 3).unwrap();
        let v = jaccard_value(&pred, &gt);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(v > 0.0);
        // only the union stabilizer separates a perfect prediction from zero
        prop_assert!(jaccard_value(&gt, &gt) < 1e-6);
    }

    #[test]
    fn depth_metrics_monotone_and_mask_respecting(
        pred in prop::collection::vec(0.1..10.0f64, 12),
        gt in prop::collection::vec(0.1..10.0f64, 12),
        mask in prop::collection::vec(any::<bool>(), 12),
        noise in prop::collection::vec(0.1..10.0f64, 12),
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let t = |v: &[f64]| Tensor::new([3, 4], v.to_vec()).unwrap();
        let m = t(&mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        let a = depth_metrics(&t(&pred), &t(&gt), &m).unwrap();
        prop_assert!(a.delta1 <= a.delta2 && a.delta2 <= a.delta3);
        prop_assert!((0.0..=1.0).contains(&a.delta1) && (0.0..=1.0).contains(&a.delta3));
        let perturb = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(&mask).zip(&noise).map(|((&x, &keep), &n)| if keep { x } else { n }).collect()
        };
        let b = depth_metrics(&t(&perturb(&pred)), &t(&perturb(&gt)), &m).unwrap();
        prop_assert_eq!(a, b);
    }
}
