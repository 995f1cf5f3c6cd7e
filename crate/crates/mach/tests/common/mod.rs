//! Shared helpers for the integration suites: synthetic Gaussian-cluster
//! data, a directly trained flat classifier as oracle, and accuracy counting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mach::hashing::next_prime_at_least;
use mach::model::{train_meta, MachConfig, MetaClassifier, Mode};
use mach::{top_k, LabeledSample, SparseVector, UniversalHash};

/// Gaussian clusters: one center per class, unit-ish separation over noise.
pub fn gaussian_clusters(
    num_classes: usize,
    dim: usize,
    per_class_train: usize,
    per_class_test: usize,
    noise: f64,
    seed: u64,
) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| normal(&mut rng)).collect())
        .collect();
    let sample = |class: usize, rng: &mut ChaCha8Rng| -> LabeledSample {
        let entries: Vec<(u32, f64)> = centers[class]
            .iter()
            .enumerate()
            .map(|(j, &c)| (j as u32, c + noise * normal(rng)))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        LabeledSample::new(
            SparseVector::new(dim, entries).unwrap(),
            vec![class as u32],
        )
        .unwrap()
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..num_classes {
        for _ in 0..per_class_train {
            train.push(sample(class, &mut rng));
        }
        for _ in 0..per_class_test {
            test.push(sample(class, &mut rng));
        }
    }
    (train, test)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `h(i) = i` on `[0, k)`: a=1, b=0, any prime p >= k.
pub fn identity_hash(k: u64) -> UniversalHash {
    UniversalHash::from_parts(1, 0, next_prime_at_least(k), k).unwrap()
}

/// Round every parameter through f32, matching what training does before
/// returning a model.
pub fn quantize(clf: &mut MetaClassifier) {
    for w in clf.first.weights.iter_mut() {
        *w = *w as f32 as f64;
    }
    for b in clf.first.biases.iter_mut() {
        *b = *b as f32 as f64;
    }
    if let Some(second) = &mut clf.second {
        for w in second.weights.iter_mut() {
            *w = *w as f32 as f64;
        }
        for b in second.biases.iter_mut() {
            *b = *b as f32 as f64;
        }
    }
}

/// Train an ordinary K-class classifier with the same optimizer path the
/// meta-classifiers use (identity label mapping, bucket count = K).
pub fn train_vanilla(
    data: &[LabeledSample],
    num_classes: u64,
    input_dim: usize,
    epochs: usize,
    train_seed: u64,
) -> MetaClassifier {
    let config = MachConfig {
        num_classes,
        buckets: num_classes,
        reps: 1,
        mode: Mode::Multiclass,
        input_dim,
        hidden_units: 0,
        master_seed: 0,
        epochs,
        learning_rate: 0.1,
        batch_size: 64,
    };
    let (mut clf, _) = train_meta(data, &identity_hash(num_classes), &config, train_seed).unwrap();
    quantize(&mut clf);
    clf
}

pub fn vanilla_predict(clf: &MetaClassifier, x: &SparseVector) -> u32 {
    let probs = clf.probabilities(x, Mode::Multiclass);
    top_k(&probs, 1).unwrap()[0].0
}

pub fn accuracy(predicted: &[u32], samples: &[LabeledSample]) -> f64 {
    let hits = predicted
        .iter()
        .zip(samples)
        .filter(|(p, s)| s.labels.contains(p))
        .count();
    hits as f64 / samples.len() as f64
}
