//! Loss values against direct formula transcriptions, gradients against
//! finite differences, and the semi-hard miner against brute force.

mod common;

use cdml_core::cluster::{ClassClusters, ClusterId, ClusterModel};
use cdml_core::losses::{
    cross_entropy, cross_entropy_logits, magnet_loss, mine_semi_hard, pairwise_loss,
    triplet_batch_loss, triplet_loss, variance_estimate, MagnetTerms, PairHead, TripletIndices,
};
use cdml_core::tensor::{grad_check, softmax};
use cdml_core::Tensor64 as T64;
use common::oracles::{batch, brute_force_miner, dist, magnet_transcription, random_clusters};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

#[test]
fn pairwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..20 {
        let d = 8;
        let a = T64::from_fn(&[d], |_| rng.gen_range(-1.0..1.0));
        let b = T64::from_fn(&[d], |_| rng.gen_range(-1.0..1.0));
        let head = PairHead {
            weights: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            bias: rng.gen_range(-1.0..1.0),
        };
        let similar = trial % 2 == 0;
        let e = grad_check(
            |a| {
                let g = pairwise_loss(a.data(), b.data(), &head, similar)?;
                Ok((g.loss, T64::vector(g.grad_a)))
            },
            &a,
            EPS,
        )
        .unwrap();
        assert!(e < TOL, "grad_a {e}");
        let e = grad_check(
            |b| {
                let g = pairwise_loss(a.data(), b.data(), &head, similar)?;
                Ok((g.loss, T64::vector(g.grad_b)))
            },
            &b,
            EPS,
        )
        .unwrap();
        assert!(e < TOL, "grad_b {e}");
        let mut wb = head.weights.clone();
        wb.push(head.bias);
        let e = grad_check(
            |wb| {
                let h = PairHead {
                    weights: wb.data()[..d].to_vec(),
                    bias: wb.data()[d],
                };
                let g = pairwise_loss(a.data(), b.data(), &h, similar)?;
                let mut gw = g.grad_weights;
                gw.push(g.grad_bias);
                Ok((g.loss, T64::vector(gw)))
            },
            &T64::vector(wb),
            EPS,
        )
        .unwrap();
        assert!(e < TOL, "head {e}");
    }
}

#[test]
fn pairwise_examples() {
    let a = [0.3, -0.2];
    let g = pairwise_loss(&a, &a, &PairHead::zeros(2), true).unwrap();
    assert!((g.loss - 2f64.ln()).abs() < 1e-15);
    assert_eq!(g.prob, 0.5);
    let g = pairwise_loss(&a, &a, &PairHead::zeros(2), false).unwrap();
    assert!((g.loss - 2f64.ln()).abs() < 1e-15);
    let confident = PairHead {
        weights: vec![0.0; 2],
        bias: 40.0,
    };
    // The clamp at 1 − 1e-12 bounds the loss below by about 1e-12.
    assert!(pairwise_loss(&a, &a, &confident, true).unwrap().loss < 1.01e-12);
    assert!(pairwise_loss(&[f64::NAN, 0.0], &a, &confident, true).is_err());
}

#[test]
fn triplet_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (e, labels) = batch(&mut rng, 6, 5, 2);
        let t = loop {
            let (a, p, n) = (
                rng.gen_range(0..6),
                rng.gen_range(0..6),
                rng.gen_range(0..6),
            );
            let t = TripletIndices {
                anchor: a,
                positive: p,
                negative: n,
            };
            if t.validate(&labels).is_ok() {
                break t;
            }
        };
        // Margin large enough that the hinge is active.
        let err = grad_check(|x| triplet_loss(x, &labels, t, 3.0), &e, EPS).unwrap();
        assert!(err < TOL, "{err}");
        let mined = mine_semi_hard(&e, &labels, 0.2).unwrap();
        let err = grad_check(|x| triplet_batch_loss(x, &labels, &mined, 0.2), &e, EPS).unwrap();
        // Inactive triplets contribute exact zeros on both sides.
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn miner_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let n = rng.gen_range(2..=32);
        let classes = rng.gen_range(1..=3.min(n));
        let (mut e, labels) = batch(&mut rng, n, 3, classes);
        if trial % 5 == 0 {
            // Quantized coordinates force distance ties.
            e = e.map(|v| (v * 2.0).round() / 2.0);
        }
        let margin = rng.gen_range(0.05..1.0);
        assert_eq!(
            mine_semi_hard(&e, &labels, margin).unwrap(),
            brute_force_miner(&e, &labels, margin),
            "trial {trial}"
        );
    }
}

#[test]
fn magnet_matches_transcription_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (classes, k, d, n) = (3, rng.gen_range(1..4), 4, 9);
        let m = random_clusters(&mut rng, classes, k, d);
        let (e, labels) = batch(&mut rng, n, d, classes);
        let own: Vec<ClusterId> = labels
            .iter()
            .map(|&c| ClusterId {
                class: c,
                index: rng.gen_range(0..k),
            })
            .collect();
        let alpha = rng.gen_range(-0.5..1.5);
        let var = rng.gen_range(0.2..2.0);
        let terms = MagnetTerms::new(alpha, k, var).unwrap();
        let (l, _) = magnet_loss(&e, &labels, &own, &m, &terms).unwrap();
        let want = magnet_transcription(&e, &labels, &own, &m, alpha, var);
        assert!(
            (l - want).abs() <= 1e-10 * want.abs().max(1e-300),
            "{l} vs {want}"
        );
        let err = grad_check(|x| magnet_loss(x, &labels, &own, &m, &terms), &e, EPS).unwrap();
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn magnet_decreases_toward_own_centroid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let d = 3;
        // Own centroid at the origin, one imposter far enough that moving
        // toward the origin does not approach it.
        let m = ClusterModel {
            classes: vec![
                ClassClusters {
                    class: 0,
                    centroids: vec![vec![0.0; d]],
                },
                ClassClusters {
                    class: 1,
                    centroids: vec![vec![0.5, 0.5, 0.5]],
                },
            ],
            assignments: vec![],
            variance: 1.0,
        };
        let r: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let terms = MagnetTerms::new(5.0, 1, 1.0).unwrap();
        let own = [ClusterId { class: 0, index: 0 }];
        let e = T64::new(vec![1, d], r.clone()).unwrap();
        let (_, g) = magnet_loss(&e, &[0], &own, &m, &terms).unwrap();
        // Direction toward the own centroid.
        let dir: Vec<f64> = r.iter().map(|v| -v).collect();
        let imp = &m.classes[1].centroids[0];
        // Only points whose distance to the imposter does not shrink along `dir`
        // keep the imposter term fixed or growing.
        let approach: f64 = (0..d).map(|i| dir[i] * (r[i] - imp[i])).sum();
        if approach < 0.0 {
            continue;
        }
        let deriv: f64 = g.data().iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!(deriv < 0.0, "{deriv}");
    }
}

#[test]
fn variance_matches_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let n = rng.gen_range(2..30);
        let (e, _) = batch(&mut rng, n, 5, 1);
        let cents: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = cents.iter().map(Vec::as_slice).collect();
        let mut want = 0.0;
        for i in 0..n {
            for j in 0..5 {
                want += (e.row(i)[j] - cents[i][j]).powi(2);
            }
        }
        want /= (n - 1) as f64;
        let got = variance_estimate(&e, &refs).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let z = T64::from_fn(&[3], |_| rng.gen_range(-3.0..3.0));
        let label = rng.gen_range(0..3);
        let err = grad_check(
            |z| {
                let (l, g) = cross_entropy_logits(z.data(), label)?;
                Ok((l, T64::vector(g)))
            },
            &z,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "{err}");
        let err = grad_check(
            |z| {
                let (l, g) = cross_entropy(softmax(z).data(), label)?;
                Ok((l, T64::vector(g)))
            },
            &z,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "{err}");
    }
}

fn seeded(seed: u64, n: usize, classes: usize) -> (T64, Vec<usize>) {
    batch(&mut ChaCha8Rng::seed_from_u64(seed), n, 4, classes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>(), n in 3usize..12, margin in 0.01f64..2.0, alpha in -2.0f64..2.0) {
        let (e, labels) = seeded(seed, n, 2);
        let mined = mine_semi_hard(&e, &labels, margin).unwrap();
        prop_assert!(triplet_batch_loss(&e, &labels, &mined, margin).unwrap().0 >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let m = random_clusters(&mut rng, 2, 2, 4);
        let own: Vec<ClusterId> = labels.iter().map(|&c| ClusterId { class: c, index: 0 }).collect();
        let terms = MagnetTerms::new(alpha, 2, 0.5).unwrap();
        prop_assert!(magnet_loss(&e, &labels, &own, &m, &terms).unwrap().0 >= 0.0);
        let g = pairwise_loss(e.row(0), e.row(1), &PairHead::initial(4), labels[0] == labels[1]).unwrap();
        prop_assert!(g.loss >= 0.0);
        let (l, _) = cross_entropy_logits(e.row(0), labels[0]).unwrap();
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn triplet_translation_invariant(seed in any::<u64>(), shift in prop::collection::vec(-5.0f64..5.0, 4)) {
        let (e, labels) = seeded(seed, 3, 2);
        let labels = vec![labels[0], labels[0], 1 - labels[0]];
        let t = TripletIndices { anchor: 0, positive: 1, negative: 2 };
        let moved = T64::from_fn(e.shape(), |i| e.data()[i] + shift[i % 4]);
        let (a, _) = triplet_loss(&e, &labels, t, 0.2).unwrap();
        let (b, _) = triplet_loss(&moved, &labels, t, 0.2).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn mined_triplets_are_valid(seed in any::<u64>(), n in 2usize..20, margin in 0.01f64..1.0) {
        let (e, labels) = seeded(seed, n, 3.min(n));
        for t in mine_semi_hard(&e, &labels, margin).unwrap() {
            prop_assert!(t.validate(&labels).is_ok());
            let dap = dist(e.row(t.anchor), e.row(t.positive));
            let dan = dist(e.row(t.anchor), e.row(t.negative));
            prop_assert!((dap < dan && dan < dap + margin) || dan <= dap);
        }
    }
}
