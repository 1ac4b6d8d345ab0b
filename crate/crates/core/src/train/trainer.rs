//! One training step and the full SGD loop.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;
use crate::manifest::DatasetManifest;
use crate::matrix::Matrix;
use crate::partition::Partition;
use crate::rng::PortableRng;
use crate::sft::{SftForward, SftGradient};
use crate::spectral::ncut_loss;

use super::am_softmax::{am_softmax_loss, AmSoftmaxClassifier};
use super::config::{lr_at, DeepSupervision, Method, TrainConfig};
use super::model::EmbedModel;
use super::sampler::{PkBatch, PkSampler};

const INIT_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;

/// Everything the optimizer updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: EmbedModel,
    pub classifier: AmSoftmaxClassifier,
    /// Separate classifier for the original features under unshared deep
    /// supervision.
    pub aux_classifier: Option<AmSoftmaxClassifier>,
}

impl TrainedModel {
    pub fn init(input_dim: usize, num_classes: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = PortableRng::derived(cfg.seed, INIT_STREAM);
        let model = EmbedModel::random(input_dim, cfg.hidden_dim, cfg.embed_dim, true, &mut rng)?;
        let classifier = AmSoftmaxClassifier::random(num_classes, cfg.embed_dim, cfg.margin, cfg.scale, &mut rng)?;
        let aux_classifier = if cfg.method == Method::Sft && cfg.deep_supervision == DeepSupervision::Unshared {
            Some(AmSoftmaxClassifier::random(
                num_classes,
                cfg.embed_dim,
                cfg.margin,
                cfg.scale,
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(TrainedModel {
            model,
            classifier,
            aux_classifier,
        })
    }

    /// Model blocks, then the classifier, then the auxiliary classifier.
    pub fn blocks(&self) -> Vec<&Matrix> {
        let mut out = self.model.blocks();
        out.push(&self.classifier.weight);
        if let Some(aux) = &self.aux_classifier {
            out.push(&aux.weight);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.model.blocks_mut();
        out.push(&mut self.classifier.weight);
        if let Some(aux) = &mut self.aux_classifier {
            out.push(&mut aux.weight);
        }
        out
    }

    pub fn embed(&self, inputs: &Matrix) -> Result<Matrix> {
        self.model.embed(inputs)
    }
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Loss on the untransformed embeddings (cross-entropy term for Ncut).
    pub loss_orig: f64,
    /// Loss on the transformed embeddings (the Ncut value for Ncut).
    pub loss_sft: f64,
    /// The weighted objective actually differentiated.
    pub total: f64,
    /// One gradient per entry of [`TrainedModel::blocks`].
    pub grads: Vec<Matrix>,
}

/// Loss and parameter gradients for one batch. `inputs` holds the raw
/// features of every manifest row.
pub fn forward_backward(
    batch: &PkBatch,
    inputs: &Matrix,
    params: &TrainedModel,
    cfg: &TrainConfig,
) -> Result<StepOutput> {
    let clf = &params.classifier;
    let labels = batch.partition(clf.num_classes())?;
    let x = inputs.select_rows(&batch.rows);
    let cache = params.model.forward(&x)?;
    let f = cache.output();

    let mut grad_clf = Matrix::zeros(clf.weight.rows(), clf.weight.cols());
    let mut grad_aux = None;
    let (loss_orig, loss_sft, total, grad_f) = match cfg.method {
        Method::Baseline => {
            let out = am_softmax_loss(f, &labels, clf)?;
            grad_clf = out.grad_weight;
            (out.loss, out.loss, out.loss, out.grad_features)
        }
        Method::Ncut => {
            let ce = am_softmax_loss(f, &labels, clf)?;
            let fm = FeatureMatrix::from_matrix(f.clone())?;
            let (ncut, grad_ncut) = ncut_loss(&fm, &batch.local_partition(), cfg.sigma)?;
            grad_clf.axpy(cfg.ce_weight, &ce.grad_weight);
            let mut grad_f = ce.grad_features.scaled(cfg.ce_weight);
            grad_f.axpy(cfg.ncut_weight, grad_ncut.matrix());
            let total = cfg.ce_weight * ce.loss + cfg.ncut_weight * ncut;
            (ce.loss, ncut, total, grad_f)
        }
        Method::Sft => {
            let sft = SftForward::new(f, cfg.sigma)?;
            let out = am_softmax_loss(sft.output(), &labels, clf)?;
            grad_clf.axpy(cfg.sft_weight, &out.grad_weight);
            let mode = if cfg.sft_grad_through_t {
                SftGradient::Full
            } else {
                SftGradient::FeaturesOnly
            };
            let mut grad_f = sft.backward(&out.grad_features.scaled(cfg.sft_weight), mode);
            let mut total = cfg.sft_weight * out.loss;
            let loss_orig = match cfg.deep_supervision {
                DeepSupervision::Off => am_softmax_loss(f, &labels, clf)?.loss,
                DeepSupervision::Shared => {
                    let orig = am_softmax_loss(f, &labels, clf)?;
                    grad_clf.axpy(cfg.orig_weight, &orig.grad_weight);
                    grad_f.axpy(cfg.orig_weight, &orig.grad_features);
                    total += cfg.orig_weight * orig.loss;
                    orig.loss
                }
                DeepSupervision::Unshared => {
                    let aux = params
                        .aux_classifier
                        .as_ref()
                        .ok_or_else(|| SftError::Config("unshared supervision needs an auxiliary classifier".into()))?;
                    let orig = am_softmax_loss(f, &labels, aux)?;
                    grad_aux = Some(orig.grad_weight.scaled(cfg.orig_weight));
                    grad_f.axpy(cfg.orig_weight, &orig.grad_features);
                    total += cfg.orig_weight * orig.loss;
                    orig.loss
                }
            };
            (loss_orig, out.loss, total, grad_f)
        }
    };

    let mut grads = params.model.backward(&cache, &grad_f);
    grads.push(grad_clf);
    if let Some(aux) = &params.aux_classifier {
        grads.push(grad_aux.unwrap_or_else(|| Matrix::zeros(aux.weight.rows(), aux.weight.cols())));
    }
    Ok(StepOutput {
        loss_orig,
        loss_sft,
        total,
        grads,
    })
}

/// Classic momentum: `v ← μv − lr·g; θ ← θ + v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(params: &TrainedModel, momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: params
                .blocks()
                .iter()
                .map(|b| Matrix::zeros(b.rows(), b.cols()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut TrainedModel, grads: &[Matrix], lr: f64) {
        for ((theta, v), g) in params.blocks_mut().into_iter().zip(&mut self.velocity).zip(grads) {
            v.scale(self.momentum);
            v.axpy(-lr, g);
            theta.add_assign(v);
        }
    }
}

/// Embedding-space statistics on the training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean `exp(cos/σ)` over distinct same-identity pairs.
    pub mean_intra_affinity: f64,
    /// Mean `exp(cos/σ)` over different-identity pairs.
    pub mean_inter_affinity: f64,
    pub ncut: f64,
}

/// Mean intra- and inter-identity affinity `exp(cos/σ)` of `embeddings`.
pub fn mean_affinities(embeddings: &Matrix, labels: &[usize], sigma: f64) -> Result<(f64, f64)> {
    let fm = FeatureMatrix::from_matrix(embeddings.clone())?;
    let cos = crate::sft::cosine_matrix(&fm)?;
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if i == j {
                continue;
            }
            let w = (cos[(i, j)] / sigma).exp();
            if labels[i] == labels[j] {
                intra += w;
                n_intra += 1;
            } else {
                inter += w;
                n_inter += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok((mean(intra, n_intra), mean(inter, n_inter)))
}

fn diagnostics(embeddings: &Matrix, labels: &Partition, sigma: f64) -> Result<Diagnostics> {
    let (mean_intra_affinity, mean_inter_affinity) = mean_affinities(embeddings, labels.labels(), sigma)?;
    let fm = FeatureMatrix::from_matrix(embeddings.clone())?;
    let ncut = if labels.num_classes() >= 2 {
        ncut_loss(&fm, labels, sigma)?.0
    } else {
        f64::NAN
    };
    Ok(Diagnostics {
        mean_intra_affinity,
        mean_inter_affinity,
        ncut,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_orig: f64,
    pub loss_sft: f64,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Tab-separated, one line per epoch, with a header row.
    pub fn to_tsv(&self) -> String {
        let with_diag = self.epochs.iter().any(|r| r.diagnostics.is_some());
        let mut out = String::from("epoch\tlr\tloss_orig\tloss_sft");
        if with_diag {
            out.push_str("\tmean_intra_affinity\tmean_inter_affinity\tncut");
        }
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{}\t{}\t{}\t{}", r.epoch, r.lr, r.loss_orig, r.loss_sft);
            if let Some(d) = &r.diagnostics {
                let _ = write!(
                    out,
                    "\t{}\t{}\t{}",
                    d.mean_intra_affinity, d.mean_inter_affinity, d.ncut
                );
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: TrainedModel,
    pub log: TrainingLog,
    /// Identity of each training class index.
    pub class_identities: Vec<u32>,
}

/// Trains on the train split of `manifest`; `inputs` has one row per record.
pub fn train(inputs: &FeatureMatrix, manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    manifest.check_paired(inputs)?;
    let sampler = PkSampler::new(manifest);
    if sampler.num_classes() < cfg.p {
        return Err(SftError::NotEnoughIdentities {
            needed: cfg.p,
            found: sampler.num_classes(),
        });
    }
    let mut params = TrainedModel::init(inputs.d(), sampler.num_classes(), cfg)?;
    let mut sgd = Sgd::new(&params, cfg.momentum);
    let mut rng = PortableRng::derived(cfg.seed, SAMPLER_STREAM);
    let batches = if cfg.batches_per_epoch > 0 {
        cfg.batches_per_epoch
    } else {
        (sampler.num_samples() / (cfg.p * cfg.k)).max(1)
    };

    let train_rows: Vec<usize> = manifest.train_groups().into_values().flatten().collect();
    let train_labels = {
        let ids = manifest.identities(&train_rows);
        Partition::from_identities(&ids)?.0
    };
    let train_inputs = inputs.matrix().select_rows(&train_rows);

    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg)?;
        let (mut sum_orig, mut sum_sft) = (0.0, 0.0);
        for _ in 0..batches {
            let batch = sampler.sample(cfg.p, cfg.k, &mut rng)?;
            let step = forward_backward(&batch, inputs.matrix(), &params, cfg)?;
            sum_orig += step.loss_orig;
            sum_sft += step.loss_sft;
            sgd.step(&mut params, &step.grads, lr);
        }
        let diagnostics = if cfg.diagnostics {
            let emb = params.embed(&train_inputs)?;
            Some(diagnostics(&emb, &train_labels, cfg.sigma)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss_orig: sum_orig / batches as f64,
            loss_sft: sum_sft / batches as f64,
            diagnostics,
        };
        log::debug!(
            "epoch {epoch} lr {lr:.5} loss_orig {:.5} loss_sft {:.5}",
            record.loss_orig,
            record.loss_sft
        );
        log.epochs.push(record);
    }
    Ok(TrainOutcome {
        params,
        log,
        class_identities: sampler.identities(),
    })
}
