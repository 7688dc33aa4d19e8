//! Training loops for the metric-learning objectives and the end-to-end
//! baseline, the frozen-embedding classifier, and the experiment grid.
//!
//! All randomness (initialization, batches, dropout, cluster seeding) is
//! derived from the run seed and the step counter, so a run is
//! bit-reproducible and can be resumed from any step.

mod adam;
mod config;
mod grid;

use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use config::{parse_config_text, parse_list, LossKind, TrainConfig};
pub use grid::{run_grid, CellKey, GridOptions, GridOutcome, GridSpec};

use crate::cluster::{
    nearest_imposter_clusters, refresh_clusters, ClassClusters, ClusterId, ClusterModel,
};
use crate::data::{DatasetSplit, NormStats, SensorWindow};
use crate::error::{Error, Result};
use crate::eval::{embed_all, evaluate, ConfusionMatrix3};
use crate::losses::{
    cross_entropy_logits, magnet_loss, mine_semi_hard, pairwise_loss, triplet_batch_loss,
    MagnetTerms, PairHead,
};
use crate::nn::{
    build_classifier, with_l2_normalization, Gradients, LayerSpec, Mode, NetworkModel,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layers the classifier head adds when composed after an embedding network.
pub const HEAD_LAYERS: usize = 4;

/// Normalized model inputs with their three-way class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData<T> {
    pub train_x: Vec<Tensor<T>>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<Tensor<T>>,
    pub test_y: Vec<usize>,
}

impl<T: Scalar> TrainData<T> {
    pub fn new(
        train_x: Vec<Tensor<T>>,
        train_y: Vec<usize>,
        test_x: Vec<Tensor<T>>,
        test_y: Vec<usize>,
    ) -> Result<Self> {
        if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
            return Err(Error::Contract("inputs and labels differ in length".into()));
        }
        if train_x.is_empty() {
            return Err(Error::Contract("empty training set".into()));
        }
        Ok(Self {
            train_x,
            train_y,
            test_x,
            test_y,
        })
    }

    pub fn from_split(split: &DatasetSplit, stats: &NormStats) -> Result<Self> {
        let conv = |ws: &[SensorWindow]| -> (Vec<Tensor<T>>, Vec<usize>) {
            ws.iter()
                .map(|w| (stats.apply(w).to_tensor(), w.label3.index()))
                .unzip()
        };
        let (train_x, train_y) = conv(&split.train);
        let (test_x, test_y) = conv(&split.test);
        Self::new(train_x, train_y, test_x, test_y)
    }
}

/// Outcome of one (architecture, objective, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub arch: crate::nn::Arch,
    pub loss_fn: LossKind,
    pub seed: u64,
    /// Mean training loss per epoch of the embedding (or end-to-end) phase.
    pub epoch_losses: Vec<f64>,
    /// Mean cross-entropy per epoch of the classifier head on frozen embeddings.
    pub classifier_losses: Vec<f64>,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub confusion: ConfusionMatrix3,
    pub steps: usize,
    pub wall_s: f64,
}

/// Trained models of one run. `classifier` takes 64-dim embeddings.
#[derive(Debug, Clone)]
pub struct TrainedCell<T> {
    pub embedding: NetworkModel<T>,
    pub classifier: NetworkModel<T>,
    pub report: TrainReport,
}

impl<T: Scalar> TrainedCell<T> {
    /// Embedding and classifier as one network (the checkpoint layout).
    pub fn composite(&self) -> Result<NetworkModel<T>> {
        self.embedding.compose(&self.classifier)
    }
}

/// Inverse of [`TrainedCell::composite`].
pub fn split_composite<T: Scalar>(
    model: &NetworkModel<T>,
) -> Result<(NetworkModel<T>, NetworkModel<T>)> {
    let n = model.specs().len();
    if n <= HEAD_LAYERS + 1 || !matches!(model.specs().last(), Some(LayerSpec::Softmax)) {
        return Err(Error::Input(
            "model is not an embedding network with a classifier head".into(),
        ));
    }
    model.split(n - HEAD_LAYERS)
}

mod stream {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const CLUSTER: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of random stream `stream` within a run.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(seed) ^ stream) ^ index)
}

/// Zeroes the last dense layer so an untrained head outputs the uniform distribution.
fn zero_output_layer<T: Scalar>(model: &mut NetworkModel<T>) {
    let last = model
        .specs()
        .iter()
        .rposition(|s| matches!(s, LayerSpec::Dense { .. }))
        .expect("head has a dense layer");
    model.params_mut()[last]
        .iter_mut()
        .for_each(|t| t.fill(T::zero()));
}

fn classifier_head<T: Scalar>(seed: u64) -> NetworkModel<T> {
    let mut head = build_classifier::<T>().initialized(derive_seed(seed, stream::INIT, 1));
    zero_output_layer(&mut head);
    head
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b).max(1)
}

/// One run's optimization state. The embedding objectives and the baseline
/// share it; for the baseline, `model` is the embedding network with the
/// classifier head attached.
#[derive(Debug, Clone)]
pub struct Trainer<'a, T> {
    cfg: &'a TrainConfig,
    data: &'a TrainData<T>,
    seed: u64,
    model: NetworkModel<T>,
    optimizer: Adam<T>,
    head: PairHead<T>,
    head_optimizer: Adam<T>,
    clusters: Option<ClusterModel<T>>,
    refreshed_at: usize,
    step: usize,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(cfg: &'a TrainConfig, data: &'a TrainData<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut model = cfg
            .arch
            .build::<T>()
            .initialized(derive_seed(seed, stream::INIT, 0));
        if cfg.l2_normalize {
            model = with_l2_normalization(&model)?;
        }
        if cfg.loss == LossKind::Baseline {
            model = model.compose(&classifier_head(seed))?;
        }
        let dim = model.output_dim();
        Ok(Self {
            cfg,
            data,
            seed,
            model,
            optimizer: Adam::new(cfg.learning_rate),
            head: PairHead::initial(dim),
            head_optimizer: Adam::new(cfg.learning_rate),
            clusters: None,
            refreshed_at: 0,
            step: 0,
        })
    }

    /// Continues a run from saved parameters and optimizer state.
    pub fn resume(
        cfg: &'a TrainConfig,
        data: &'a TrainData<T>,
        seed: u64,
        model: NetworkModel<T>,
        optimizer: Adam<T>,
        step: usize,
    ) -> Result<Self> {
        let mut t = Self::new(cfg, data, seed)?;
        if model.specs() != t.model.specs() {
            return Err(Error::Contract(
                "resumed model does not match the configured architecture".into(),
            ));
        }
        t.model = model;
        t.optimizer = optimizer;
        t.step = step;
        Ok(t)
    }

    pub fn model(&self) -> &NetworkModel<T> {
        &self.model
    }

    pub fn into_model(self) -> NetworkModel<T> {
        self.model
    }

    pub fn optimizer(&self) -> &Adam<T> {
        &self.optimizer
    }

    pub fn pair_head(&self) -> &PairHead<T> {
        &self.head
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Current cluster model (magnet only) and the step it was computed at.
    pub fn clusters(&self) -> Option<(&ClusterModel<T>, usize)> {
        self.clusters.as_ref().map(|c| (c, self.refreshed_at))
    }

    fn samples_per_step(&self) -> usize {
        let c = self.cfg;
        match c.loss {
            LossKind::Pairwise => 2 * c.batch_pairs,
            LossKind::Triplet => c.batch_classes * c.batch_per_class,
            LossKind::Magnet => (c.neighbors + 1) * c.samples_per_cluster,
            LossKind::Baseline => c.batch_size,
        }
    }

    /// Steps that together draw about one pass over the training set.
    pub fn steps_per_epoch(&self) -> usize {
        ceil_div(self.data.train_x.len(), self.samples_per_step())
    }

    pub fn refresh_period(&self) -> usize {
        self.cfg
            .refresh_steps
            .unwrap_or_else(|| self.steps_per_epoch())
    }

    fn dropout(&self, item: usize) -> Mode {
        Mode::Train {
            dropout_seed: derive_seed(
                derive_seed(self.seed, stream::DROPOUT, self.step as u64),
                0,
                item as u64,
            ),
        }
    }

    fn abort(&self, msg: impl Into<String>) -> Error {
        Error::TrainAbort {
            epoch: self.step / self.steps_per_epoch(),
            step: self.step,
            msg: msg.into(),
        }
    }

    /// Runs one optimization step and returns its loss.
    pub fn step(&mut self) -> Result<T> {
        let out = match self.cfg.loss {
            LossKind::Pairwise => self.pairwise_step(),
            LossKind::Triplet => self.triplet_step(),
            LossKind::Magnet => self.magnet_step(),
            LossKind::Baseline => self.baseline_step(),
        };
        let loss = match out {
            Ok(l) => l,
            Err(Error::TrainAbort { .. }) => return out,
            Err(e) => return Err(self.abort(e.to_string())),
        };
        self.step += 1;
        Ok(loss)
    }

    /// Runs whole epochs, returning the mean step loss of each.
    pub fn run_epochs(&mut self, epochs: usize) -> Result<Vec<f64>> {
        let spe = self.steps_per_epoch();
        let mut out = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut total = 0.0;
            for _ in 0..spe {
                total += self.step()?.to_f64_lossy();
            }
            out.push(total / spe as f64);
        }
        Ok(out)
    }

    fn apply(&mut self, loss: T, grads: &Gradients<T>) -> Result<()> {
        if !loss.is_finite() {
            return Err(self.abort(format!("non-finite loss {loss}")));
        }
        if !grads.is_finite() {
            return Err(self.abort("non-finite gradient"));
        }
        self.optimizer.step_model(&mut self.model, grads)
    }

    /// Forward passes in training mode over `indices`; returns the
    /// embeddings as rows and the traces for backpropagation.
    fn embed_batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<crate::nn::Trace<T>>)> {
        let dim = self.model.output_dim();
        let mut rows = Vec::with_capacity(indices.len() * dim);
        let mut traces = Vec::with_capacity(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            let (y, tr) = self
                .model
                .forward_trace(&self.data.train_x[i], self.dropout(k))?;
            rows.extend_from_slice(y.data());
            traces.push(tr);
        }
        Ok((Tensor::new(vec![indices.len(), dim], rows)?, traces))
    }

    fn backward_rows(
        &self,
        traces: &[crate::nn::Trace<T>],
        grad: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let dim = grad.shape()[1];
        for (k, tr) in traces.iter().enumerate() {
            let row = grad.row(k);
            if row.iter().all(|&v| v == T::zero()) {
                continue;
            }
            let up = Tensor::new(
                self.model.shape_trace().last().expect("output").clone(),
                row.to_vec(),
            )?;
            debug_assert_eq!(up.len(), dim);
            self.model.backward(tr, &up, grads)?;
        }
        Ok(())
    }

    fn pairwise_step(&mut self) -> Result<T> {
        let seed = derive_seed(self.seed, stream::BATCH, self.step as u64);
        let batch = crate::data::sample_pairs(&self.data.train_y, self.cfg.batch_pairs, seed)?;
        let flat: Vec<usize> = batch.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        let (emb, traces) = self.embed_batch(&flat)?;
        let n = batch.pairs.len();
        let inv = T::one() / T::from_usize_lossy(n);
        let dim = emb.shape()[1];
        let mut up = Tensor::zeros(emb.shape());
        let mut gw = vec![T::zero(); dim];
        let mut gb = T::zero();
        let mut loss = T::zero();
        for (k, &similar) in batch.similar.iter().enumerate() {
            let g = pairwise_loss(emb.row(2 * k), emb.row(2 * k + 1), &self.head, similar)?;
            loss += g.loss * inv;
            for d in 0..dim {
                up.row_mut(2 * k)[d] = g.grad_a[d] * inv;
                up.row_mut(2 * k + 1)[d] = g.grad_b[d] * inv;
                gw[d] += g.grad_weights[d] * inv;
            }
            gb += g.grad_bias * inv;
        }
        let mut grads = Gradients::zeros_like(&self.model);
        self.backward_rows(&traces, &up, &mut grads)?;
        if !gb.is_finite() || gw.iter().any(|v| !v.is_finite()) {
            return Err(self.abort("non-finite pair head gradient"));
        }
        self.apply(loss, &grads)?;
        let mut bias = [self.head.bias];
        self.head_optimizer
            .step(vec![&mut self.head.weights, &mut bias], vec![&gw, &[gb]])?;
        self.head.bias = bias[0];
        Ok(loss)
    }

    fn triplet_step(&mut self) -> Result<T> {
        let seed = derive_seed(self.seed, stream::BATCH, self.step as u64);
        let c = self.cfg;
        let batch = crate::data::sample_pk_batch(
            &self.data.train_y,
            c.batch_classes,
            c.batch_per_class,
            seed,
        )?;
        let (emb, traces) = self.embed_batch(&batch.indices)?;
        let labels: Vec<usize> = batch
            .indices
            .iter()
            .map(|&i| self.data.train_y[i])
            .collect();
        let margin = T::lit(c.margin);
        let triplets = mine_semi_hard(&emb, &labels, margin)?;
        if triplets.is_empty() {
            return Ok(T::zero());
        }
        let (loss, up) = triplet_batch_loss(&emb, &labels, &triplets, margin)?;
        let mut grads = Gradients::zeros_like(&self.model);
        self.backward_rows(&traces, &up, &mut grads)?;
        self.apply(loss, &grads)?;
        Ok(loss)
    }

    fn refresh(&mut self) -> Result<()> {
        let emb = embed_all(&self.model, &self.data.train_x)?;
        let seed = derive_seed(self.seed, stream::CLUSTER, self.step as u64);
        self.clusters = Some(refresh_clusters(
            &emb,
            &self.data.train_y,
            self.cfg.clusters,
            seed,
        )?);
        self.refreshed_at = self.step;
        Ok(())
    }

    fn magnet_step(&mut self) -> Result<T> {
        if self.clusters.is_none() || self.step - self.refreshed_at >= self.refresh_period() {
            self.refresh()?;
        }
        let clusters = self.clusters.as_ref().expect("refreshed");
        let c = self.cfg;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, stream::BATCH, self.step as u64));
        let members: Vec<(ClusterId, Vec<usize>)> = clusters
            .cluster_ids()
            .into_iter()
            .map(|id| (id, clusters.members(id)))
            .filter(|(_, m)| !m.is_empty())
            .collect();
        let seed_id = members[rng.gen_range(0..members.len())].0;
        let mut chosen = vec![seed_id];
        chosen.extend(nearest_imposter_clusters(seed_id, clusters, c.neighbors)?.ids);
        let mut indices = Vec::new();
        let mut assigned = Vec::new();
        for &id in &chosen {
            let Some((_, m)) = members.iter().find(|(mid, _)| *mid == id) else {
                continue;
            };
            let d = c.samples_per_cluster;
            let picks: Vec<usize> = if m.len() >= d {
                sample(&mut rng, m.len(), d)
                    .into_iter()
                    .map(|k| m[k])
                    .collect()
            } else {
                (0..d).map(|_| m[rng.gen_range(0..m.len())]).collect()
            };
            indices.extend(&picks);
            assigned.extend(std::iter::repeat(id).take(picks.len()));
        }
        let (sub, remapped) = restrict_clusters(clusters, &chosen, &assigned);
        let labels: Vec<usize> = indices.iter().map(|&i| self.data.train_y[i]).collect();
        let terms = MagnetTerms::new(T::lit(c.alpha), c.clusters, clusters.variance)?;
        let (emb, traces) = self.embed_batch(&indices)?;
        let (loss, up) = magnet_loss(&emb, &labels, &remapped, &sub, &terms)?;
        let mut grads = Gradients::zeros_like(&self.model);
        self.backward_rows(&traces, &up, &mut grads)?;
        self.apply(loss, &grads)?;
        Ok(loss)
    }

    fn baseline_step(&mut self) -> Result<T> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (self.step / spe, self.step % spe);
        let n = self.data.train_x.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            stream::SHUFFLE,
            epoch as u64,
        )));
        let bs = self.cfg.batch_size;
        let idx = &order[pos * bs..((pos + 1) * bs).min(n)];
        let mut grads = Gradients::zeros_like(&self.model);
        let loss = ce_minibatch(
            &self.model,
            &self.data.train_x,
            &self.data.train_y,
            idx,
            &mut grads,
            |k| self.dropout(k),
        )?;
        self.apply(loss, &grads)?;
        Ok(loss)
    }
}

/// Mean cross-entropy over `idx`, accumulating parameter gradients.
fn ce_minibatch<T: Scalar>(
    model: &NetworkModel<T>,
    xs: &[Tensor<T>],
    ys: &[usize],
    idx: &[usize],
    grads: &mut Gradients<T>,
    mode: impl Fn(usize) -> Mode,
) -> Result<T> {
    let inv = T::one() / T::from_usize_lossy(idx.len());
    let mut loss = T::zero();
    for (k, &i) in idx.iter().enumerate() {
        let (logits, trace) = model.forward_logits_trace(&xs[i], mode(k))?;
        let (l, g) = cross_entropy_logits(logits.data(), ys[i])?;
        loss += l * inv;
        let up = Tensor::new(
            logits.shape().to_vec(),
            g.into_iter().map(|v| v * inv).collect(),
        )?;
        model.backward(&trace, &up, grads)?;
    }
    Ok(loss)
}

/// The chosen clusters as a standalone model, re-indexed within each class,
/// and `assigned` translated to the new ids.
fn restrict_clusters<T: Scalar>(
    model: &ClusterModel<T>,
    chosen: &[ClusterId],
    assigned: &[ClusterId],
) -> (ClusterModel<T>, Vec<ClusterId>) {
    let mut classes: Vec<ClassClusters<T>> = Vec::new();
    let mut map: Vec<(ClusterId, ClusterId)> = Vec::new();
    for &id in chosen {
        let centroid = model.centroid(id).expect("chosen cluster exists").to_vec();
        let pos = match classes.iter().position(|c| c.class == id.class) {
            Some(p) => p,
            None => {
                classes.push(ClassClusters {
                    class: id.class,
                    centroids: Vec::new(),
                });
                classes.len() - 1
            }
        };
        map.push((
            id,
            ClusterId {
                class: id.class,
                index: classes[pos].centroids.len(),
            },
        ));
        classes[pos].centroids.push(centroid);
    }
    classes.sort_by_key(|c| c.class);
    let remapped: Vec<ClusterId> = assigned
        .iter()
        .map(|a| {
            map.iter()
                .find(|(from, _)| from == a)
                .expect("assigned cluster chosen")
                .1
        })
        .collect();
    (
        ClusterModel {
            classes,
            assignments: remapped.clone(),
            variance: model.variance,
        },
        remapped,
    )
}

/// Trains the classifier head on frozen embeddings of the training set.
/// Returns the head and its per-epoch mean loss.
pub fn train_classifier<T: Scalar>(
    embedding: &NetworkModel<T>,
    data: &TrainData<T>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(NetworkModel<T>, Vec<f64>)> {
    let emb = embed_all(embedding, &data.train_x)?;
    let dim = emb.shape()[1];
    let xs: Vec<Tensor<T>> = (0..emb.shape()[0])
        .map(|i| Tensor::new(vec![dim], emb.row(i).to_vec()))
        .collect::<Result<_>>()?;
    train_head_on(xs, &data.train_y, cfg, seed)
}

/// Trains a fresh classifier head on the given embedding vectors.
pub fn train_head_on<T: Scalar>(
    xs: Vec<Tensor<T>>,
    ys: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(NetworkModel<T>, Vec<f64>)> {
    let mut head = classifier_head::<T>(seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let n = xs.len();
    let bs = cfg.batch_size;
    let spe = ceil_div(n, bs);
    let mut losses = Vec::new();
    for epoch in 0..cfg.classifier_epochs() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            stream::SHUFFLE,
            1 << 32 | epoch as u64,
        )));
        let mut total = 0.0;
        for pos in 0..spe {
            let idx = &order[pos * bs..((pos + 1) * bs).min(n)];
            let mut grads = Gradients::zeros_like(&head);
            let loss = ce_minibatch(&head, &xs, ys, idx, &mut grads, |_| Mode::Infer)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::TrainAbort {
                    epoch,
                    step: epoch * spe + pos,
                    msg: "non-finite classifier loss".into(),
                });
            }
            opt.step_model(&mut head, &grads)?;
            total += loss.to_f64_lossy();
        }
        losses.push(total / spe as f64);
    }
    Ok((head, losses))
}

/// Full run: the objective, then (for metric objectives) the classifier head,
/// then evaluation on both sides of the split.
pub fn train_cell<T: Scalar>(
    cfg: &TrainConfig,
    data: &TrainData<T>,
    seed: u64,
) -> Result<TrainedCell<T>> {
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, data, seed)?;
    let epoch_losses = trainer.run_epochs(cfg.epochs)?;
    let steps = trainer.step_count();
    let (embedding, classifier, classifier_losses) = if cfg.loss == LossKind::Baseline {
        let (e, c) = split_composite(&trainer.into_model())?;
        (e, c, Vec::new())
    } else {
        let embedding = trainer.into_model();
        let (c, losses) = train_classifier(&embedding, data, cfg, seed)?;
        (embedding, c, losses)
    };
    let train = evaluate(&embedding, &classifier, &data.train_x, &data.train_y)?;
    let (test_loss, test_acc, confusion) = if data.test_x.is_empty() {
        (f64::NAN, f64::NAN, ConfusionMatrix3::default())
    } else {
        let t = evaluate(&embedding, &classifier, &data.test_x, &data.test_y)?;
        (t.loss, t.accuracy, t.confusion)
    };
    let report = TrainReport {
        arch: cfg.arch,
        loss_fn: cfg.loss,
        seed,
        epoch_losses,
        classifier_losses,
        train_acc: train.accuracy,
        test_loss,
        test_acc,
        confusion,
        steps,
        wall_s: start.elapsed().as_secs_f64(),
    };
    Ok(TrainedCell {
        embedding,
        classifier,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Arch;

    fn blobs(n_per: usize, seed: u64) -> TrainData<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for c in 0..3 {
            for _ in 0..n_per {
                xs.push(Tensor::from_fn(&[28, 28], |i| {
                    let centre = if i % 3 == c { 1.0 } else { 0.0 };
                    centre + rng.gen_range(-0.2..0.2)
                }));
                ys.push(c);
            }
        }
        TrainData::new(xs.clone(), ys.clone(), xs, ys).unwrap()
    }

    fn cfg(loss: LossKind) -> TrainConfig {
        TrainConfig {
            loss,
            arch: Arch::FaceNet,
            epochs: 2,
            ..Default::default()
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(1, 2, 3);
        assert_ne!(a, derive_seed(1, 3, 2));
        assert_ne!(a, derive_seed(2, 2, 3));
        assert_eq!(a, derive_seed(1, 2, 3));
    }

    #[test]
    fn zero_epoch_classifier_is_uniform() {
        let data = blobs(10, 0);
        let c = TrainConfig {
            classifier_epochs: Some(0),
            ..cfg(LossKind::Triplet)
        };
        let emb = Arch::FaceNet.build::<f64>().initialized(1);
        let (head, losses) = train_classifier(&emb, &data, &c, 0).unwrap();
        assert!(losses.is_empty());
        let e = evaluate(&emb, &head, &data.test_x, &data.test_y).unwrap();
        assert!((e.loss - 3f64.ln()).abs() < 1e-12);
        assert!((e.accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn every_objective_steps_and_is_deterministic() {
        let data = blobs(12, 1);
        for loss in LossKind::ALL {
            let c = cfg(loss);
            let a = train_cell(&c, &data, 5).unwrap();
            let b = train_cell(&c, &data, 5).unwrap();
            assert_eq!(a.embedding, b.embedding, "{loss}");
            assert_eq!(a.classifier, b.classifier, "{loss}");
            assert_eq!(a.report.epoch_losses, b.report.epoch_losses, "{loss}");
            assert!(
                a.report.epoch_losses.iter().all(|l| l.is_finite()),
                "{loss}"
            );
        }
    }

    #[test]
    fn magnet_refresh_schedule() {
        let data = blobs(12, 2);
        let c = TrainConfig {
            refresh_steps: Some(3),
            clusters: 2,
            ..cfg(LossKind::Magnet)
        };
        let mut t = Trainer::new(&c, &data, 0).unwrap();
        for s in 0..10 {
            t.step().unwrap();
            let (_, at) = t.clusters().unwrap();
            assert_eq!(at, s / 3 * 3, "step {s}");
        }
    }

    #[test]
    fn composite_round_trip() {
        let data = blobs(6, 3);
        let c = TrainConfig {
            epochs: 0,
            classifier_epochs: Some(1),
            ..cfg(LossKind::Triplet)
        };
        let cell = train_cell(&c, &data, 0).unwrap();
        let (e, h) = split_composite(&cell.composite().unwrap()).unwrap();
        assert_eq!(e, cell.embedding);
        assert_eq!(h, cell.classifier);
    }

    #[test]
    fn restricted_clusters_reindex() {
        let model = ClusterModel {
            classes: vec![
                ClassClusters {
                    class: 0,
                    centroids: vec![vec![0.0], vec![1.0]],
                },
                ClassClusters {
                    class: 2,
                    centroids: vec![vec![5.0], vec![6.0], vec![7.0]],
                },
            ],
            assignments: vec![],
            variance: 0.5,
        };
        let id = |class, index| ClusterId { class, index };
        let (sub, re) = restrict_clusters(&model, &[id(2, 2), id(0, 1)], &[id(0, 1), id(2, 2)]);
        assert_eq!(sub.classes[0].class, 0);
        assert_eq!(sub.classes[0].centroids, vec![vec![1.0]]);
        assert_eq!(sub.classes[1].centroids, vec![vec![7.0]]);
        assert_eq!(re, vec![id(0, 0), id(2, 0)]);
    }
}
