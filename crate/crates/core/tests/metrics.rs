mod common;

use common::oracles::{direct_msssim, kl_score, luma};
use logoforge::data::{synth_logo_corpus, NearestCentroid};
use logoforge::eval::{
    classifier_score, default_scales, diversity_score, msssim, msssim_images, msssim_weights, score_images, Classifier,
    ClassifierConfig, ConvClassifier, EvalError, Plane,
};
use logoforge::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(n: usize, k: usize, sharp: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let e: Vec<f64> = (0..k).map(|_| (sharp * rng.random::<f64>()).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

#[test]
fn score_matches_loop_oracle() {
    for (seed, sharp, k, splits) in [(1, 1.0, 10, 10), (2, 8.0, 10, 5), (3, 30.0, 4, 1), (4, 0.1, 100, 2)] {
        let rows = random_rows(200, k, sharp, seed);
        let got = classifier_score(&rows, splits).unwrap();
        let want: f64 = (0..splits)
            .map(|s| kl_score(&rows[s * 200 / splits..(s + 1) * 200 / splits], 1))
            .sum::<f64>()
            / splits as f64;
        assert!((got.mean - want).abs() < 1e-6, "{} vs {want}", got.mean);
        assert!((got.mean - kl_score(&rows, splits)).abs() < 1e-6);
        assert!(got.mean >= 1.0 && got.mean <= k as f64);
    }
}

#[test]
fn score_extremes() {
    let uniform = vec![vec![0.25; 4]; 40];
    assert_eq!(classifier_score(&uniform, 10).unwrap().mean, 1.0);
    let onehot: Vec<Vec<f64>> = (0..40).map(|i| (0..4).map(|j| if j == i % 4 { 1.0 } else { 0.0 }).collect()).collect();
    let r = classifier_score(&onehot, 10).unwrap();
    assert_eq!(r.mean, 4.0);
    assert_eq!(r.std, 0.0);
}

#[test]
fn score_is_permutation_invariant_within_splits() {
    let rows = random_rows(60, 6, 5.0, 9);
    let mut shuffled = rows.clone();
    shuffled[..30].reverse();
    shuffled[30..].rotate_left(7);
    let a = classifier_score(&rows, 2).unwrap().mean;
    let b = classifier_score(&shuffled, 2).unwrap().mean;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn score_rejects_bad_input() {
    assert!(matches!(classifier_score(&[vec![0.5, 0.6]], 1), Err(EvalError::BadRow { .. })));
    assert!(matches!(classifier_score(&[vec![1.5, -0.5]], 1), Err(EvalError::BadRow { .. })));
    assert!(classifier_score(&random_rows(7, 3, 1.0, 0), 2).is_err());
    assert!(classifier_score(&[], 1).is_err());
}

fn image(rng: &mut ChaCha8Rng, channels: usize, side: usize) -> Vec<f32> {
    // Smooth blobs plus noise, in [-1, 1].
    let (cx, cy, r) = (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.1..0.4));
    let mut out = Vec::with_capacity(channels * side * side);
    for c in 0..channels {
        for y in 0..side {
            for x in 0..side {
                let d = ((x as f64 / side as f64 - cx).powi(2) + (y as f64 / side as f64 - cy).powi(2)).sqrt();
                let base = if d < r { 0.8 - 0.3 * c as f64 } else { -0.6 };
                out.push((base + rng.random_range(-0.2..0.2)) as f32);
            }
        }
    }
    out
}

#[test]
fn msssim_matches_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for pair in 0..50 {
        let (channels, side) = [(1, 16), (3, 32), (3, 24), (1, 64)][pair % 4];
        let a = image(&mut rng, channels, side);
        let b = image(&mut rng, channels, side);
        let got = msssim_images(&a, &b, channels, side).unwrap();
        let want = direct_msssim(&luma(&a, side), &luma(&b, side), side, default_scales(side));
        assert!((got - want).abs() < 1e-6, "pair {pair}: {got} vs {want}");
    }
}

#[test]
fn msssim_five_scales_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = image(&mut rng, 1, 176);
    let b = image(&mut rng, 1, 176);
    assert_eq!(default_scales(176), 5);
    let got = msssim_images(&a, &b, 1, 176).unwrap();
    assert!((got - direct_msssim(&luma(&a, 176), &luma(&b, 176), 176, 5)).abs() < 1e-6);
}

#[test]
fn msssim_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let a = image(&mut rng, 3, 32);
    let b = image(&mut rng, 3, 32);
    assert!((msssim_images(&a, &a, 3, 32).unwrap() - 1.0).abs() < 1e-12);
    let ab = msssim_images(&a, &b, 3, 32).unwrap();
    assert!((ab - msssim_images(&b, &a, 3, 32).unwrap()).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&ab));
    let neg: Vec<f32> = a.iter().map(|v| -v).collect();
    assert!(msssim_images(&a, &neg, 3, 32).unwrap() < 0.1);
    let small = Plane { side: 4, data: vec![0.0; 16] };
    assert!(matches!(msssim(&small, &small, &msssim_weights(3)), Err(EvalError::TooSmall { .. })));
}

#[test]
fn diversity_of_noise_and_duplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let noise = Tensor::from_fn(&[32, 3, 32, 32], |_| rng.random_range(-1.0f32..1.0));
    let r = diversity_score(&noise, 200, 1).unwrap();
    assert!(r.mean < 0.05, "noise diversity {}", r.mean);
    let one: Vec<f32> = image(&mut rng, 3, 32);
    let dup = Tensor::from_fn(&[8, 3, 32, 32], |i| one[i % one.len()]);
    let d = diversity_score(&dup, 50, 2).unwrap();
    assert!((d.mean - 1.0).abs() < 1e-12 && d.std < 1e-12);
    assert_eq!(diversity_score(&noise, 100, 3).unwrap(), diversity_score(&noise, 100, 3).unwrap());
    assert!(diversity_score(&noise.narrow_batch(0, 1).unwrap(), 5, 0).is_err());
}

#[test]
fn nearest_centroid_scores_near_k_on_balanced_synth() {
    let (ds, modes) = synth_logo_corpus(400, 16, 4, 1).unwrap();
    let x = ds.to_tensor().unwrap();
    let nc = NearestCentroid::fit(&x, &modes, 4).unwrap();
    let r = score_images(&nc, &x, 10).unwrap();
    assert!(r.mean > 3.5, "score {}", r.mean);
}

#[test]
fn conv_classifier_learns_and_round_trips() {
    let (ds, modes) = synth_logo_corpus(256, 16, 4, 2).unwrap();
    let x = ds.to_tensor().unwrap();
    let cfg = ClassifierConfig { epochs: 4, ..ClassifierConfig::default() };
    let clf = ConvClassifier::train(&x, &modes, 4, &cfg).unwrap();
    assert!(clf.epoch_losses.last().unwrap() < &clf.epoch_losses[0]);
    let p = clf.predict_proba(&x).unwrap();
    let acc = p
        .iter()
        .zip(&modes)
        .filter(|(row, &m)| row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0 == m)
        .count() as f64
        / 256.0;
    assert!(acc > 0.9, "accuracy {acc}");
    let back = ConvClassifier::from_tensor_map(&clf.to_tensor_map()).unwrap();
    assert_eq!(back.predict_proba(&x).unwrap(), p);
    assert_eq!(back.classes(), 4);
    assert!(clf.predict_proba(&Tensor::zeros(&[1, 3, 8, 8])).is_err());
}
