//! Model definition, label transformation, and training of the R independent
//! meta-classifiers.
//!
//! Each repetition trains a B-output model on the same features with labels
//! pushed through that repetition's hash. Repetitions share nothing, so they
//! can run serially or in parallel with bit-identical results.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;

use crate::data::{LabeledSample, SparseVector};
use crate::error::{MachError, Result};
use crate::hashing::{mix_seed, UniversalHash};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Multiclass,
    Multilabel,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Multiclass => "multiclass",
            Mode::Multilabel => "multilabel",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = MachError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass" => Ok(Mode::Multiclass),
            "multilabel" => Ok(Mode::Multilabel),
            other => Err(MachError::InvalidArgument(format!(
                "unknown mode '{other}', expected multiclass or multilabel"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachConfig {
    pub num_classes: u64,
    pub buckets: u64,
    pub reps: u64,
    pub mode: Mode,
    pub input_dim: usize,
    /// 0 means a linear model; otherwise one hidden layer with relu.
    pub hidden_units: usize,
    pub master_seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl MachConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 {
            return Err(MachError::InvalidConfig("num_classes must be positive".into()));
        }
        if self.buckets < 2 {
            return Err(MachError::InvalidConfig(format!(
                "buckets must be at least 2, got {}",
                self.buckets
            )));
        }
        if self.reps < 1 {
            return Err(MachError::InvalidConfig("reps must be at least 1".into()));
        }
        if self.input_dim < 1 {
            return Err(MachError::InvalidConfig("input_dim must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(MachError::InvalidConfig("batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(MachError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Seed for repetition j's hash draw.
pub fn rep_hash_seed(master: u64, j: u64) -> u64 {
    mix_seed(master, 2 * j)
}

/// Seed for repetition j's initialization and shuffling rng.
pub fn rep_train_seed(master: u64, j: u64) -> u64 {
    mix_seed(master, 2 * j + 1)
}

/// Dense layer, weights stored row-major by input unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    pub fn uniform_init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Layer {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.out_dim..(i + 1) * self.out_dim]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// One B-output meta-classifier: either linear (first layer only) or one
/// relu hidden layer followed by the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaClassifier {
    pub first: Layer,
    pub second: Option<Layer>,
}

pub struct Activation {
    pub hidden: Option<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl MetaClassifier {
    pub fn new(input_dim: usize, hidden_units: usize, outputs: usize, seed: u64) -> Self {
        if hidden_units == 0 {
            MetaClassifier {
                first: Layer::zeros(input_dim, outputs),
                second: None,
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let first = Layer::uniform_init(input_dim, hidden_units, &mut rng);
            let second = Layer::uniform_init(hidden_units, outputs, &mut rng);
            MetaClassifier {
                first,
                second: Some(second),
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.first.in_dim
    }

    pub fn outputs(&self) -> usize {
        self.second
            .as_ref()
            .map(|l| l.out_dim)
            .unwrap_or(self.first.out_dim)
    }

    pub fn hidden_units(&self) -> usize {
        self.second.as_ref().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.first.param_count() + self.second.as_ref().map(|l| l.param_count()).unwrap_or(0)
    }

    pub fn forward(&self, x: &SparseVector) -> Activation {
        let mut acc = self.first.biases.clone();
        for &(idx, val) in x.entries() {
            let row = self.first.row(idx as usize);
            for (a, w) in acc.iter_mut().zip(row) {
                *a += val * w;
            }
        }
        match &self.second {
            None => Activation {
                hidden: None,
                logits: acc,
            },
            Some(out) => {
                for h in acc.iter_mut() {
                    if *h < 0.0 {
                        *h = 0.0;
                    }
                }
                let mut logits = out.biases.clone();
                for (j, &h) in acc.iter().enumerate() {
                    if h != 0.0 {
                        let row = out.row(j);
                        for (l, w) in logits.iter_mut().zip(row) {
                            *l += h * w;
                        }
                    }
                }
                Activation {
                    hidden: Some(acc),
                    logits,
                }
            }
        }
    }

    /// Per-bucket probabilities: softmax over buckets (multiclass) or
    /// independent sigmoids (multilabel).
    pub fn probabilities(&self, x: &SparseVector, mode: Mode) -> Vec<f64> {
        let logits = self.forward(x).logits;
        match mode {
            Mode::Multiclass => softmax(&logits),
            Mode::Multilabel => logits.iter().map(|&z| sigmoid(z)).collect(),
        }
    }

    /// Mean loss over a batch of (features, target buckets).
    pub fn batch_loss(&self, batch: &[(&SparseVector, &[u64])], mode: Mode) -> f64 {
        let mut total = 0.0;
        for &(x, targets) in batch {
            let logits = self.forward(x).logits;
            total += sample_loss(&logits, targets, mode);
        }
        total / batch.len() as f64
    }

    /// Mean loss and dense mean gradient over a batch. The dense form exists
    /// for gradient checking; SGD uses the sparse accumulator below.
    pub fn batch_gradient(
        &self,
        batch: &[(&SparseVector, &[u64])],
        mode: Mode,
    ) -> (f64, Gradients) {
        let mut acc = GradAccumulator::new(self);
        let mut total = 0.0;
        for &(x, targets) in batch {
            total += acc.accumulate(self, x, targets, mode);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = acc.into_dense(self);
        grads.scale(scale);
        (total * scale, grads)
    }
}

/// Dense gradients mirroring a classifier's layers.
pub struct Gradients {
    pub first_weights: Vec<f64>,
    pub first_biases: Vec<f64>,
    pub second_weights: Option<Vec<f64>>,
    pub second_biases: Option<Vec<f64>>,
}

impl Gradients {
    fn scale(&mut self, s: f64) {
        for v in self.first_weights.iter_mut() {
            *v *= s;
        }
        for v in self.first_biases.iter_mut() {
            *v *= s;
        }
        if let Some(w) = &mut self.second_weights {
            for v in w.iter_mut() {
                *v *= s;
            }
        }
        if let Some(b) = &mut self.second_biases {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

fn sample_loss(logits: &[f64], targets: &[u64], mode: Mode) -> f64 {
    match mode {
        Mode::Multiclass => {
            let t = targets[0] as usize;
            log_sum_exp(logits) - logits[t]
        }
        Mode::Multilabel => {
            let mut loss = 0.0;
            let mut ti = 0usize;
            for (b, &z) in logits.iter().enumerate() {
                let y = if ti < targets.len() && targets[ti] == b as u64 {
                    ti += 1;
                    1.0
                } else {
                    0.0
                };
                // stable BCE from the logit
                loss += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
            }
            loss
        }
    }
}

/// Accumulates raw (unscaled) gradients over samples. First-layer rows are
/// kept sparse so large input dimensions stay cheap per batch.
struct GradAccumulator {
    input_rows: HashMap<u32, Vec<f64>>,
    first_biases: Vec<f64>,
    second_weights: Option<Vec<f64>>,
    second_biases: Option<Vec<f64>>,
}

impl GradAccumulator {
    fn new(model: &MetaClassifier) -> Self {
        GradAccumulator {
            input_rows: HashMap::new(),
            first_biases: vec![0.0; model.first.out_dim],
            second_weights: model
                .second
                .as_ref()
                .map(|l| vec![0.0; l.in_dim * l.out_dim]),
            second_biases: model.second.as_ref().map(|l| vec![0.0; l.out_dim]),
        }
    }

    /// Returns the sample's loss.
    fn accumulate(
        &mut self,
        model: &MetaClassifier,
        x: &SparseVector,
        targets: &[u64],
        mode: Mode,
    ) -> f64 {
        let act = model.forward(x);
        let loss = sample_loss(&act.logits, targets, mode);

        // d loss / d logits
        let mut dlogits = match mode {
            Mode::Multiclass => {
                let mut d = softmax(&act.logits);
                d[targets[0] as usize] -= 1.0;
                d
            }
            Mode::Multilabel => {
                let mut d: Vec<f64> = act.logits.iter().map(|&z| sigmoid(z)).collect();
                for &t in targets {
                    d[t as usize] -= 1.0;
                }
                d
            }
        };

        match (&model.second, &act.hidden) {
            (Some(out), Some(hidden)) => {
                let gw = self.second_weights.as_mut().unwrap();
                let gb = self.second_biases.as_mut().unwrap();
                for (b, &d) in dlogits.iter().enumerate() {
                    gb[b] += d;
                }
                let mut dhidden = vec![0.0; hidden.len()];
                for (j, &h) in hidden.iter().enumerate() {
                    let row = out.row(j);
                    if h != 0.0 {
                        let grow = &mut gw[j * out.out_dim..(j + 1) * out.out_dim];
                        let mut dh = 0.0;
                        for (b, &d) in dlogits.iter().enumerate() {
                            grow[b] += h * d;
                            dh += row[b] * d;
                        }
                        dhidden[j] = dh; // relu active
                    }
                }
                dlogits = dhidden;
            }
            _ => {}
        }

        // first layer: dlogits now holds the gradient at its outputs
        for (b, &d) in dlogits.iter().enumerate() {
            self.first_biases[b] += d;
        }
        let out_dim = model.first.out_dim;
        for &(idx, val) in x.entries() {
            let row = self
                .input_rows
                .entry(idx)
                .or_insert_with(|| vec![0.0; out_dim]);
            for (b, &d) in dlogits.iter().enumerate() {
                row[b] += val * d;
            }
        }
        loss
    }

    /// Apply `-lr * grad / n` to the model.
    fn apply(self, model: &mut MetaClassifier, lr: f64, n: usize) {
        let step = lr / n as f64;
        let out_dim = model.first.out_dim;
        let mut rows: Vec<(u32, Vec<f64>)> = self.input_rows.into_iter().collect();
        rows.sort_unstable_by_key(|&(i, _)| i);
        for (idx, grow) in rows {
            let wrow =
                &mut model.first.weights[idx as usize * out_dim..(idx as usize + 1) * out_dim];
            for (w, g) in wrow.iter_mut().zip(&grow) {
                *w -= step * g;
            }
        }
        for (b, g) in model.first.biases.iter_mut().zip(&self.first_biases) {
            *b -= step * g;
        }
        if let Some(out) = &mut model.second {
            let gw = self.second_weights.unwrap();
            let gb = self.second_biases.unwrap();
            for (w, g) in out.weights.iter_mut().zip(&gw) {
                *w -= step * g;
            }
            for (b, g) in out.biases.iter_mut().zip(&gb) {
                *b -= step * g;
            }
        }
    }

    fn into_dense(self, model: &MetaClassifier) -> Gradients {
        let out_dim = model.first.out_dim;
        let mut first_weights = vec![0.0; model.first.in_dim * out_dim];
        for (idx, row) in self.input_rows {
            first_weights[idx as usize * out_dim..(idx as usize + 1) * out_dim]
                .copy_from_slice(&row);
        }
        Gradients {
            first_weights,
            first_biases: self.first_biases,
            second_weights: self.second_weights,
            second_biases: self.second_biases,
        }
    }
}

/// Image of a label set under one hash: collisions merge, output sorted.
pub fn transform_label(labels: &[u32], h: &UniversalHash) -> Result<Vec<u64>> {
    if labels.is_empty() {
        return Err(MachError::Validation("cannot transform an empty label set".into()));
    }
    let mut buckets: Vec<u64> = labels.iter().map(|&l| h.eval(l as u64)).collect();
    buckets.sort_unstable();
    buckets.dedup();
    Ok(buckets)
}

/// Train one meta-classifier: seeded init, seeded per-epoch shuffle,
/// mini-batch SGD with a fixed learning rate. Hashed targets are produced on
/// the fly from the repetition's hash. Returns per-epoch mean losses too.
pub fn train_meta(
    data: &[LabeledSample],
    hash: &UniversalHash,
    config: &MachConfig,
    train_seed: u64,
) -> Result<(MetaClassifier, Vec<f64>)> {
    let mut model = MetaClassifier::new(
        config.input_dim,
        config.hidden_units,
        config.buckets as usize,
        train_seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(train_seed, 0x5f5f));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut acc = GradAccumulator::new(&model);
            for &i in chunk {
                let sample = &data[i];
                let targets = transform_label(&sample.labels, hash)?;
                epoch_loss += acc.accumulate(&model, &sample.features, &targets, config.mode);
            }
            acc.apply(&mut model, config.learning_rate, chunk.len());
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok((model, epoch_losses))
}

/// The deployable artifact: config, R hashes, R meta-classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct MachModel {
    config: MachConfig,
    hashes: Vec<UniversalHash>,
    classifiers: Vec<MetaClassifier>,
}

impl MachModel {
    pub fn assemble(
        config: MachConfig,
        hashes: Vec<UniversalHash>,
        classifiers: Vec<MetaClassifier>,
    ) -> Result<Self> {
        config.validate()?;
        if hashes.len() != config.reps as usize || classifiers.len() != config.reps as usize {
            return Err(MachError::Format(format!(
                "expected {} hashes and classifiers, got {} and {}",
                config.reps,
                hashes.len(),
                classifiers.len()
            )));
        }
        for h in &hashes {
            if h.range() != config.buckets {
                return Err(MachError::Format("hash range does not match bucket count".into()));
            }
        }
        for c in &classifiers {
            if c.input_dim() != config.input_dim
                || c.outputs() != config.buckets as usize
                || c.hidden_units() != config.hidden_units
            {
                return Err(MachError::Format("classifier shape does not match config".into()));
            }
        }
        Ok(MachModel {
            config,
            hashes,
            classifiers,
        })
    }

    pub fn config(&self) -> &MachConfig {
        &self.config
    }

    pub fn hashes(&self) -> &[UniversalHash] {
        &self.hashes
    }

    pub fn classifiers(&self) -> &[MetaClassifier] {
        &self.classifiers
    }

    pub fn param_count(&self) -> usize {
        self.classifiers.iter().map(|c| c.param_count()).sum()
    }

    /// Meta-probabilities of repetition j for one input.
    pub fn meta_predict(&self, j: usize, x: &SparseVector) -> Result<Vec<f64>> {
        if j >= self.classifiers.len() {
            return Err(MachError::InvalidArgument(format!(
                "repetition {j} out of range ({} repetitions)",
                self.classifiers.len()
            )));
        }
        if x.dim() != self.config.input_dim {
            return Err(MachError::Validation(format!(
                "input dimension {} does not match model dimension {}",
                x.dim(),
                self.config.input_dim
            )));
        }
        Ok(self.classifiers[j].probabilities(x, self.config.mode))
    }

    /// Round every parameter through f32 so serialized and in-memory models
    /// score identically.
    fn quantize_f32(&mut self) {
        for c in &mut self.classifiers {
            for w in c.first.weights.iter_mut() {
                *w = *w as f32 as f64;
            }
            for b in c.first.biases.iter_mut() {
                *b = *b as f32 as f64;
            }
            if let Some(out) = &mut c.second {
                for w in out.weights.iter_mut() {
                    *w = *w as f32 as f64;
                }
                for b in out.biases.iter_mut() {
                    *b = *b as f32 as f64;
                }
            }
        }
    }
}

fn validate_dataset(data: &[LabeledSample], config: &MachConfig) -> Result<()> {
    if data.is_empty() {
        return Err(MachError::Validation("training data is empty".into()));
    }
    for (i, sample) in data.iter().enumerate() {
        if sample.features.dim() != config.input_dim {
            return Err(MachError::Validation(format!(
                "sample {i}: feature dimension {} does not match config input_dim {}",
                sample.features.dim(),
                config.input_dim
            )));
        }
        if let Some(&l) = sample.labels.iter().find(|&&l| l as u64 >= config.num_classes) {
            return Err(MachError::Validation(format!(
                "sample {i}: label {l} out of range for {} classes",
                config.num_classes
            )));
        }
        if config.mode == Mode::Multiclass && sample.labels.len() != 1 {
            return Err(MachError::Validation(format!(
                "sample {i}: multiclass mode requires exactly one label, got {}",
                sample.labels.len()
            )));
        }
    }
    Ok(())
}

/// Train all R repetitions (in parallel on the current rayon pool) and return
/// the model plus per-repetition per-epoch losses.
pub fn train_with_log(
    data: &[LabeledSample],
    config: &MachConfig,
) -> Result<(MachModel, Vec<Vec<f64>>)> {
    config.validate()?;
    validate_dataset(data, config)?;
    let results: Vec<(UniversalHash, MetaClassifier, Vec<f64>)> = (0..config.reps)
        .into_par_iter()
        .map(|j| {
            let hash = UniversalHash::sample(
                rep_hash_seed(config.master_seed, j),
                config.buckets,
                config.num_classes,
            )?;
            let (classifier, losses) =
                train_meta(data, &hash, config, rep_train_seed(config.master_seed, j))?;
            Ok((hash, classifier, losses))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hashes = Vec::with_capacity(results.len());
    let mut classifiers = Vec::with_capacity(results.len());
    let mut logs = Vec::with_capacity(results.len());
    for (h, c, l) in results {
        hashes.push(h);
        classifiers.push(c);
        logs.push(l);
    }
    let mut model = MachModel::assemble(config.clone(), hashes, classifiers)?;
    model.quantize_f32();
    Ok((model, logs))
}

pub fn train(data: &[LabeledSample], config: &MachConfig) -> Result<MachModel> {
    train_with_log(data, config).map(|(m, _)| m)
}
