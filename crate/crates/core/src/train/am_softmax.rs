//! Additive-margin softmax over cosine logits.
//!
//! For a sample with label `y`, normalized feature `f` and normalized class
//! weights `w_j`, the logits are `s·(f·w_j − m·[j = y])` and the loss is the
//! softmax cross-entropy of the target class, averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::matrix::Matrix;
use crate::partition::Partition;
use crate::rng::PortableRng;
use crate::sft::{normalize_rows, unit_backward};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmSoftmaxClassifier {
    /// `num_classes × embed_dim`; rows are l2-normalized at every use.
    pub weight: Matrix,
    pub margin: f64,
    pub scale: f64,
}

impl AmSoftmaxClassifier {
    pub fn new(weight: Matrix, margin: f64, scale: f64) -> Result<Self> {
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(SftError::Config(format!("margin must be >= 0, got {margin}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(SftError::Config(format!("scale must be > 0, got {scale}")));
        }
        Ok(AmSoftmaxClassifier { weight, margin, scale })
    }

    /// Weights drawn from N(0, 1/embed_dim).
    pub fn random(
        num_classes: usize,
        embed_dim: usize,
        margin: f64,
        scale: f64,
        rng: &mut PortableRng,
    ) -> Result<Self> {
        let std = 1.0 / (embed_dim as f64).sqrt();
        let data = (0..num_classes * embed_dim).map(|_| rng.normal() * std).collect();
        Self::new(Matrix::from_vec(num_classes, embed_dim, data)?, margin, scale)
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug)]
pub struct AmSoftmaxOutput {
    pub loss: f64,
    /// Gradient with respect to the (unnormalized) input features.
    pub grad_features: Matrix,
    /// Gradient with respect to the raw classifier weight matrix.
    pub grad_weight: Matrix,
}

pub fn am_softmax_loss(features: &Matrix, labels: &Partition, clf: &AmSoftmaxClassifier) -> Result<AmSoftmaxOutput> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(SftError::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    if d != clf.embed_dim() {
        return Err(SftError::Shape(format!(
            "features have dimension {d}, classifier expects {}",
            clf.embed_dim()
        )));
    }
    let classes = clf.num_classes();
    if let Some(&label) = labels.labels().iter().find(|&&l| l >= classes) {
        return Err(SftError::LabelOutOfRange {
            label,
            num_classes: classes,
        });
    }
    let (f_unit, f_norms) = normalize_rows(features)?;
    let (w_unit, w_norms) =
        normalize_rows(&clf.weight).map_err(|e| SftError::Shape(format!("classifier weight: {e}")))?;

    let cos = f_unit.matmul_t(&w_unit);
    let (s, m) = (clf.scale, clf.margin);
    let mut grad_cos = Matrix::zeros(n, classes);
    let mut loss = 0.0;
    let mut logits = vec![0.0; classes];
    for i in 0..n {
        let y = labels.class_of(i);
        for (j, z) in logits.iter_mut().enumerate() {
            *z = s * (cos[(i, j)] - if j == y { m } else { 0.0 });
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_norm = max + total.ln();
        loss += log_norm - logits[y];
        for j in 0..classes {
            let p = (logits[j] - log_norm).exp();
            let target = if j == y { 1.0 } else { 0.0 };
            grad_cos[(i, j)] = s * (p - target) / n as f64;
        }
    }
    loss /= n as f64;

    // cos = F̂ Ŵᵀ
    let grad_f_unit = grad_cos.matmul(&w_unit);
    let grad_w_unit = grad_cos.t_matmul(&f_unit);
    Ok(AmSoftmaxOutput {
        loss,
        grad_features: unit_backward(&f_unit, &f_norms, grad_f_unit),
        grad_weight: unit_backward(&w_unit, &w_norms, grad_w_unit),
    })
}
