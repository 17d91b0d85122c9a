//! Trainable classifiers built on [`Network`]: label mappings for the
//! multi-class and binary variants, the minibatch training loop and
//! inference.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::net::{Ablation, Architecture, Network};
use crate::preprocess::{augment, CropConfig, NormalizationStats, Sample};
use crate::tensor::{softmax, softmax_cross_entropy, Optimizer, OptimizerConfig, Tensor};
use crate::types::{ClassScores, CubeGeometry, RoadClass, NUM_CLASSES};

pub const ACTIVATION: &str = "relu";

/// Gradients are summed over fixed chunks of this many samples so the
/// reduction order does not depend on the thread count.
const GRAD_CHUNK: usize = 32;

/// Derives an independent seed for a named sub-stream (splitmix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SPLIT: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_ORDER: u64 = 4;

/// How class labels map to network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LabelMapping {
    MultiClass,
    /// Output 1 is the named class, output 0 everything else.
    OneVsAll {
        class: RoadClass,
    },
    /// Output 0 is `first`, output 1 is `second`; other classes are unused.
    OneVsOne {
        first: RoadClass,
        second: RoadClass,
    },
}

impl LabelMapping {
    pub fn n_out(&self) -> usize {
        match self {
            LabelMapping::MultiClass => NUM_CLASSES,
            _ => 2,
        }
    }

    pub fn target(&self, label: RoadClass) -> Option<usize> {
        match *self {
            LabelMapping::MultiClass => Some(label.index()),
            LabelMapping::OneVsAll { class } => Some(usize::from(label == class)),
            LabelMapping::OneVsOne { first, second } => {
                if label == first {
                    Some(0)
                } else if label == second {
                    Some(1)
                } else {
                    None
                }
            }
        }
    }

    /// A class whose absence leaves `output` without samples.
    fn class_for_output(&self, output: usize) -> RoadClass {
        match *self {
            LabelMapping::MultiClass => RoadClass::from_index(output).expect("output index"),
            LabelMapping::OneVsAll { class } => {
                if output == 1 {
                    class
                } else {
                    *RoadClass::ALL.iter().find(|&&c| c != class).expect("four classes")
                }
            }
            LabelMapping::OneVsOne { first, second } => {
                if output == 0 {
                    first
                } else {
                    second
                }
            }
        }
    }

    /// Short identifier used for member file names.
    pub fn tag(&self) -> String {
        match self {
            LabelMapping::MultiClass => "multiclass".into(),
            LabelMapping::OneVsAll { class } => format!("ova-{class}"),
            LabelMapping::OneVsOne { first, second } => format!("ovo-{first}-{second}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Balancing {
    /// Weighted sampling for binary mappings, plain shuffling otherwise.
    #[default]
    Auto,
    None,
    /// Each epoch draws samples with probability inversely proportional to
    /// their class frequency.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub balancing: Balancing,
    pub validation_fraction: f64,
    pub augment: bool,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            balancing: Balancing::Auto,
            validation_fraction: 0.1,
            augment: true,
            ablation: Ablation::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn weighted(&self, mapping: &LabelMapping) -> bool {
        match self.balancing {
            Balancing::Auto => mapping.n_out() == 2,
            Balancing::None => false,
            Balancing::Weighted => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mapping: LabelMapping,
    pub batch_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Validation loss of the initialized network. When the split leaves no
    /// validation samples, "validation" refers to the training samples.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// A trained network with everything inference needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RtcNetModel {
    pub network: Network<f32>,
    pub mapping: LabelMapping,
    pub normalization: NormalizationStats,
    pub crop: CropConfig,
    pub geometry: Option<CubeGeometry>,
    pub train_config: TrainConfig,
}

/// Normalized network inputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub block: Vec<f32>,
    pub features: [f32; 4],
}

impl PreparedInput {
    pub fn new(sample: &Sample, stats: &NormalizationStats) -> Self {
        let z = stats.normalize_features(&sample.features);
        Self {
            block: stats.normalize_block(&sample.block.values),
            features: z.map(|v| v as f32),
        }
    }

    fn selected_features(&self, ablation: Ablation) -> ([f32; 4], usize) {
        let idx = ablation.feature_indices();
        let mut out = [0.0; 4];
        for (o, &i) in out.iter_mut().zip(idx) {
            *o = self.features[i];
        }
        (out, idx.len())
    }
}

/// Samples normalized once and shared by every member trained on them.
/// Entry `i * copies + k` is copy `k` of sample `i`; copy 0 is the sample
/// itself.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    inputs: Vec<PreparedInput>,
    labels: Vec<RoadClass>,
    copies: usize,
}

impl PreparedSet {
    pub fn new(samples: &[Sample], stats: &NormalizationStats, augmented: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_AUGMENT));
        let copies = if augmented { 3 } else { 1 };
        let mut inputs = Vec::with_capacity(samples.len() * copies);
        for s in samples {
            if augmented {
                inputs.extend(augment(s, stats, &mut rng).iter().map(|a| PreparedInput::new(a, stats)));
            } else {
                inputs.push(PreparedInput::new(s, stats));
            }
        }
        Self {
            inputs,
            labels: samples.iter().map(|s| s.label).collect(),
            copies,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[RoadClass] {
        &self.labels
    }

    fn input(&self, sample: usize, copy: usize) -> &PreparedInput {
        &self.inputs[sample * self.copies + copy]
    }
}

impl RtcNetModel {
    pub fn architecture(&self) -> &Architecture {
        self.network.architecture()
    }

    pub fn logits(&self, input: &PreparedInput) -> Result<Vec<f32>> {
        let (features, n) = input.selected_features(self.architecture().ablation);
        self.network.logits(&input.block, &features[..n])
    }

    /// Softmax over the network outputs.
    pub fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.predict_prepared(&PreparedInput::new(sample, &self.normalization))
    }

    pub fn predict_prepared(&self, input: &PreparedInput) -> Result<Vec<f64>> {
        let logits: Vec<f64> = self.logits(input)?.into_iter().map(f64::from).collect();
        Ok(softmax(&logits))
    }

    /// Class scores of a multi-class model.
    pub fn predict_scores(&self, sample: &Sample) -> Result<ClassScores> {
        if self.mapping != LabelMapping::MultiClass {
            return Err(Error::Config(format!(
                "{} model does not produce four-class scores",
                self.mapping.tag()
            )));
        }
        let p = self.predict(sample)?;
        Ok(ClassScores(std::array::from_fn(|i| p[i])))
    }
}

/// Normalizes, augments and trains one network.
pub fn train(
    samples: &[Sample],
    stats: &NormalizationStats,
    crop: CropConfig,
    config: &TrainConfig,
    mapping: LabelMapping,
) -> Result<TrainOutcome> {
    config.validate()?;
    let set = PreparedSet::new(samples, stats, config.augment, config.seed);
    train_prepared(&set, stats, crop, config, mapping)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RtcNetModel,
    /// Parameters of the epoch with the best validation F1.
    pub best: RtcNetModel,
    pub log: TrainingLog,
}

/// Shuffled train/validation split over the samples that `mapping` uses.
/// Returns `(train, val)` sample indices.
pub fn split_indices(
    labels: &[RoadClass],
    mapping: &LabelMapping,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..labels.len())
        .filter(|&i| mapping.target(labels[i]).is_some())
        .collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT)));
    let n_val = (idx.len() as f64 * fraction).round() as usize;
    let train = idx.split_off(n_val);
    (train, idx)
}

pub fn train_prepared(
    set: &PreparedSet,
    stats: &NormalizationStats,
    crop: CropConfig,
    config: &TrainConfig,
    mapping: LabelMapping,
) -> Result<TrainOutcome> {
    config.validate()?;
    let arch = Architecture::new(mapping.n_out(), config.ablation, crop.block_shape())?;
    let (train_idx, val_idx) = split_indices(set.labels(), &mapping, config.validation_fraction, config.seed);
    if train_idx.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }

    let n_out = mapping.n_out();
    let mut class_counts = vec![0usize; n_out];
    for &i in &train_idx {
        class_counts[mapping.target(set.labels()[i]).expect("filtered")] += 1;
    }
    if let Some(missing) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(mapping.class_for_output(missing)));
    }

    // (input sample, copy, target output)
    let train_items: Vec<(usize, usize, usize)> = train_idx
        .iter()
        .flat_map(|&i| {
            let t = mapping.target(set.labels()[i]).expect("filtered");
            (0..set.copies).map(move |k| (i, k, t))
        })
        .collect();
    let eval_items: Vec<(usize, usize, usize)> = if val_idx.is_empty() { &train_idx } else { &val_idx }
        .iter()
        .map(|&i| (i, 0, mapping.target(set.labels()[i]).expect("filtered")))
        .collect();

    let mut net = Network::<f32>::init(arch, derive_seed(config.seed, STREAM_INIT));
    let mut opt = Optimizer::new(config.optimizer);
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_ORDER));
    let weights = if config.weighted(&mapping) {
        let w: Vec<f64> = train_items
            .iter()
            .map(|&(_, _, t)| 1.0 / class_counts[t] as f64)
            .collect();
        Some(WeightedIndex::new(&w).expect("positive weights"))
    } else {
        None
    };

    let (initial_val_loss, _) = evaluate(&net, set, &eval_items, n_out)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, net.clone());

    for epoch in 1..=config.epochs {
        let order: Vec<usize> = match &weights {
            Some(w) => (0..train_items.len()).map(|_| w.sample(&mut order_rng)).collect(),
            None => {
                let mut o: Vec<usize> = (0..train_items.len()).collect();
                o.shuffle(&mut order_rng);
                o
            }
        };
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, mut grads) = batch_gradients(&net, set, &train_items, batch)?;
            loss_sum += loss;
            let scale = 1.0 / batch.len() as f32;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            opt.step(net.params_mut(), &grads)?;
        }
        if !net.params().iter().all(Tensor::all_finite) {
            return Err(Error::NonFinite(format!(
                "{} parameters after epoch {epoch}",
                mapping.tag()
            )));
        }
        let (val_loss, val_f1) = evaluate(&net, set, &eval_items, n_out)?;
        if val_f1 > best.0 {
            best = (val_f1, epoch, net.clone());
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss,
            val_f1,
        });
    }

    let wrap = |network: Network<f32>| RtcNetModel {
        network,
        mapping,
        normalization: *stats,
        crop,
        geometry: None,
        train_config: *config,
    };
    Ok(TrainOutcome {
        model: wrap(net),
        best: wrap(best.2),
        log: TrainingLog {
            mapping,
            batch_size: config.batch_size,
            n_train: train_items.len(),
            n_val: val_idx.len(),
            initial_val_loss,
            epochs,
            best_epoch: best.1,
        },
    })
}

fn features_of(net: &Network<f32>, input: &PreparedInput) -> ([f32; 4], usize) {
    input.selected_features(net.architecture().ablation)
}

/// Summed loss and summed gradients over `batch`.
fn batch_gradients(
    net: &Network<f32>,
    set: &PreparedSet,
    items: &[(usize, usize, usize)],
    batch: &[usize],
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let partials: Vec<Result<(f64, Vec<Tensor<f32>>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = net.zero_grads();
            let mut loss = 0.0;
            for &j in chunk {
                let (i, k, t) = items[j];
                let input = set.input(i, k);
                let (f, n) = features_of(net, input);
                let trace = net.forward(&input.block, &f[..n])?;
                let (l, g) = softmax_cross_entropy(trace.logits(), t);
                loss += l as f64;
                net.backward(&trace, &g, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch")?;
    for part in iter {
        let (l, grads) = part?;
        loss += l;
        for (t, g) in total.iter_mut().zip(&grads) {
            t.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
        }
    }
    Ok((loss, total))
}

/// Mean cross-entropy and macro F1 over `items`.
fn evaluate(
    net: &Network<f32>,
    set: &PreparedSet,
    items: &[(usize, usize, usize)],
    n_out: usize,
) -> Result<(f64, f64)> {
    let results: Vec<Result<(f64, usize)>> = items
        .par_iter()
        .map(|&(i, k, t)| {
            let input = set.input(i, k);
            let (f, n) = features_of(net, input);
            let logits = net.logits(&input.block, &f[..n])?;
            let (l, _) = softmax_cross_entropy(&logits, t);
            let pred = (0..logits.len()).fold(0, |b, c| if logits[c] > logits[b] { c } else { b });
            Ok((l as f64, pred))
        })
        .collect();
    let mut loss = 0.0;
    let mut pred = Vec::with_capacity(items.len());
    for r in results {
        let (l, p) = r?;
        loss += l;
        pred.push(p);
    }
    let truth: Vec<usize> = items.iter().map(|&(_, _, t)| t).collect();
    Ok((loss / items.len() as f64, macro_f1(&pred, &truth, n_out)))
}
