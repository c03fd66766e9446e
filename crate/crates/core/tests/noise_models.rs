use anne::noisegen::{class_centroids, generate_ood_pool, ClassMap};
use anne::prelude::*;
use anne::trainer::{predict_dataset, TrainConfig};

fn spec(classes: usize, dim: usize, per_class: usize, sep: f64, seed: u64) -> ClusterSpec {
    ClusterSpec {
        class_count: classes,
        dim,
        samples_per_class: per_class,
        centroid_separation: sep,
        intra_class_std: 1.0,
        ood_class_count: 1,
        seed,
    }
}

fn flips(ds: &Dataset) -> usize {
    ds.true_labels().unwrap().iter().zip(ds.noisy_labels()).filter(|(t, y)| t != y).count()
}

#[test]
fn separable_clusters_train_to_full_accuracy() {
    // separation/std = 10 in the plane: a linear classifier is the oracle
    let ds = generate_clusters(&spec(2, 2, 100, 10.0, 1)).unwrap();
    let cfg = TrainConfig { epochs: 60, warmup_epochs: 60, learning_rate: 0.05, batch_size: 20, seed: 1, ..Default::default() };
    let (model, _) = train_loop(&ds, &ds, &PipelineConfig::default().with_selector(Selector::Passthrough), &cfg).unwrap();
    let preds = predict_dataset(&model, &ds, 0).unwrap();
    let hits = (0..ds.len()).filter(|&i| preds.top(i).0 as u32 == ds.noisy_labels()[i]).count();
    assert!(hits as f64 / ds.len() as f64 >= 0.99, "{hits}/200");
}

#[test]
fn symmetric_rate_at_fifty_thousand() {
    let ds = generate_clusters(&spec(10, 4, 5000, 4.0, 2)).unwrap();
    let noisy = inject_symmetric(&ds, 0.5, 2).unwrap();
    let rate = flips(&noisy) as f64 / 50000.0;
    assert!((0.4935..=0.5065).contains(&rate), "{rate}");
    assert_eq!(noisy.features(), ds.features());
}

#[test]
fn binary_symmetric_noise_flips_to_the_other_class() {
    let ds = generate_clusters(&spec(2, 3, 500, 4.0, 3)).unwrap();
    let noisy = inject_symmetric(&ds, 0.9, 3).unwrap();
    assert_eq!(flips(&noisy), 900);
}

#[test]
fn asymmetric_cyclic_targets() {
    let ds = generate_clusters(&spec(10, 4, 5000, 4.0, 4)).unwrap();
    let noisy = inject_asymmetric(&ds, 0.4, &ClassMap::cyclic(10), 4).unwrap();
    let truth = ds.true_labels().unwrap();
    let mut flipped = 0;
    for (t, y) in truth.iter().zip(noisy.noisy_labels()) {
        if t != y {
            assert_eq!(*y, (t + 1) % 10);
            flipped += 1;
        }
    }
    let rate = flipped as f64 / 50000.0;
    let sigma = (0.4f64 * 0.6 / 50000.0).sqrt();
    assert!((rate - 0.4).abs() <= 3.0 * sigma, "{rate}");
}

#[test]
fn instance_noise_follows_geometry() {
    // classes 0 and 2 far apart, class 1 halfway between them
    let mut f = Vec::new();
    let mut y = Vec::new();
    let mut r = anne::rng::stream(5, &[]);
    use rand::Rng;
    for (c, x0) in [(0u32, 0.0f32), (1, 5.0), (2, 10.0)] {
        for _ in 0..400 {
            f.extend([x0 + r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)]);
            y.push(c);
        }
    }
    let ds = Dataset::new(f, 2, y.clone(), Some(y), 3).unwrap();
    let noisy = inject_instance_dependent(&ds, 0.4, 5).unwrap();
    let centroids: Vec<Vec<f64>> = class_centroids(&ds).unwrap().into_iter().map(Option::unwrap).collect();
    let dist = |i: usize, c: usize| -> f64 {
        ds.row(i).iter().zip(&centroids[c]).map(|(a, b)| (f64::from(*a) - b).powi(2)).sum()
    };
    let mut from_mid = [0usize; 3];
    for i in 0..ds.len() {
        let (t, n) = (ds.true_labels().unwrap()[i] as usize, noisy.noisy_labels()[i] as usize);
        if t == n {
            continue;
        }
        let nearest = (0..3).filter(|&c| c != t).min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b))).unwrap();
        assert_eq!(n, nearest);
        if t == 1 {
            from_mid[n] += 1;
        } else {
            // the outer classes always flip to the middle one
            assert_eq!(n, 1);
        }
    }
    assert!(from_mid[0] > 0 && from_mid[2] > 0);
}

/// Mean of N(mu, sd^2) truncated to [0, 1), by midpoint quadrature.
fn truncated_mean(mu: f64, sd: f64) -> f64 {
    let steps = 200_000;
    let (mut mass, mut first) = (0.0, 0.0);
    for k in 0..steps {
        let x = (k as f64 + 0.5) / steps as f64;
        let w = (-(x - mu).powi(2) / (2.0 * sd * sd)).exp();
        mass += w;
        first += w * x;
    }
    first / mass
}

#[test]
fn instance_noise_rate_at_fifty_thousand() {
    let ds = generate_clusters(&spec(10, 4, 5000, 4.0, 6)).unwrap();
    let noisy = inject_instance_dependent(&ds, 0.5, 6).unwrap();
    let m = truncated_mean(0.5, 0.125);
    let rate = flips(&noisy) as f64 / 50000.0;
    assert!((rate - m).abs() <= 3.0 * (m * (1.0 - m) / 50000.0).sqrt(), "{rate} vs {m}");
    assert!((0.485..=0.515).contains(&rate));
}

#[test]
fn openset_counts_are_exact_and_disjoint() {
    let s = ClusterSpec { ood_class_count: 2, ..spec(10, 8, 1000, 4.0, 7) };
    let ds = generate_clusters(&s).unwrap();
    let pool = generate_ood_pool(&s, 2000).unwrap();
    let noisy = inject_openset(&ds, &pool, 0.6, 0.5, 7).unwrap();
    let truth = noisy.true_labels().unwrap();
    let replaced: Vec<usize> = (0..noisy.len()).filter(|&i| truth[i] == 10).collect();
    let flipped: Vec<usize> =
        (0..noisy.len()).filter(|&i| truth[i] != 10 && truth[i] != noisy.noisy_labels()[i]).collect();
    assert_eq!(replaced.len(), 3000);
    assert_eq!(flipped.len(), 3000);
    assert!(replaced.iter().all(|i| flipped.binary_search(i).is_err()));
    assert!(replaced.iter().all(|&i| noisy.noisy_labels()[i] < 10));
}

#[test]
fn pure_closed_set_matches_symmetric_counts() {
    let s = ClusterSpec { ood_class_count: 2, ..spec(10, 8, 1000, 4.0, 8) };
    let ds = generate_clusters(&s).unwrap();
    let pool = generate_ood_pool(&s, 10).unwrap();
    let open = inject_openset(&ds, &pool, 0.3, 1.0, 8).unwrap();
    assert_eq!(flips(&open), flips(&inject_symmetric(&ds, 0.3, 8).unwrap()));
    assert_eq!(open.features(), ds.features());
}

#[test]
fn small_ood_pool_is_rejected() {
    let s = ClusterSpec { ood_class_count: 1, ..spec(4, 4, 100, 4.0, 9) };
    let ds = generate_clusters(&s).unwrap();
    let pool = generate_ood_pool(&s, 5).unwrap();
    assert!(matches!(inject_openset(&ds, &pool, 0.5, 0.5, 9), Err(Error::InsufficientOodPool { .. })));
}
