//! Graph cuts and random-walk quantities on an affinity graph, plus the
//! supervised multiclass Ncut loss used as a comparator objective.
//!
//! With `d_i = Σ_j w_ij` and `vol(X) = Σ_i d_i`, the walk's stationary
//! distribution is `π_i = d_i / vol(X)` and the one-step escape probability
//! from a class `A` is
//!
//! ```text
//! P(A → Ā) = Σ_{i∈A, j∈Ā} π_i T_ij / Σ_{i∈A} π_i = cut(A, Ā) / vol(A)
//! ```
//!
//! so `Ncut(A, Ā) = P(A → Ā) + P(Ā → A)`.

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;
use crate::matrix::Matrix;
use crate::partition::Partition;
use crate::sft::{check_sigma, cosine_backward, gram_symmetric, normalize_rows, transition, AffinityMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct RandomWalkStats {
    /// `π_i = d_i / vol(X)`.
    pub stationary: Vec<f64>,
    /// `vol(X)`.
    pub volume: f64,
}

fn check_sizes(w: &AffinityMatrix, part: &Partition) -> Result<()> {
    if w.n() != part.len() {
        return Err(SftError::Shape(format!(
            "graph has {} nodes, partition has {} labels",
            w.n(),
            part.len()
        )));
    }
    Ok(())
}

/// Membership mask of `class`; errors if it is out of range, empty, or (when
/// `need_complement`) covers every node.
fn class_mask(part: &Partition, class: usize, need_complement: bool) -> Result<Vec<bool>> {
    part.check_class(class)?;
    let mask: Vec<bool> = part.labels().iter().map(|&l| l == class).collect();
    let size = mask.iter().filter(|&&m| m).count();
    if size == 0 {
        return Err(SftError::EmptyClass(class));
    }
    if need_complement && size == mask.len() {
        return Err(SftError::EmptyComplement(class));
    }
    Ok(mask)
}

fn cut_masks(w: &Matrix, a: &[bool], b: &[bool]) -> f64 {
    let mut total = 0.0;
    for i in (0..a.len()).filter(|&i| a[i]) {
        let row = w.row(i);
        for j in (0..b.len()).filter(|&j| b[j]) {
            total += row[j];
        }
    }
    total
}

fn volume_mask(w: &Matrix, a: &[bool]) -> f64 {
    (0..a.len())
        .filter(|&i| a[i])
        .map(|i| w.row(i).iter().sum::<f64>())
        .sum()
}

fn complement(mask: &[bool]) -> Vec<bool> {
    mask.iter().map(|m| !m).collect()
}

/// `cut(A, B) = Σ_{i∈A, j∈B} w_ij` between two classes of the partition.
pub fn cut(w: &AffinityMatrix, part: &Partition, a: usize, b: usize) -> Result<f64> {
    check_sizes(w, part)?;
    if a == b {
        return Err(SftError::SameClass(a));
    }
    let ma = class_mask(part, a, false)?;
    let mb = class_mask(part, b, false)?;
    // Summed in (min, max) order so cut(a, b) and cut(b, a) agree bitwise.
    let (first, second) = if a < b { (&ma, &mb) } else { (&mb, &ma) };
    Ok(cut_masks(w.weights(), first, second))
}

/// `vol(A) = Σ_{i∈A, j∈X} w_ij`.
pub fn volume(w: &AffinityMatrix, part: &Partition, a: usize) -> Result<f64> {
    check_sizes(w, part)?;
    let ma = class_mask(part, a, false)?;
    Ok(volume_mask(w.weights(), &ma))
}

/// `Ncut(A, Ā) = cut(A, Ā)/vol(A) + cut(A, Ā)/vol(Ā)`.
pub fn ncut(w: &AffinityMatrix, part: &Partition, a: usize) -> Result<f64> {
    check_sizes(w, part)?;
    let ma = class_mask(part, a, true)?;
    let mc = complement(&ma);
    let c = cut_masks(w.weights(), &ma, &mc);
    Ok(c / volume_mask(w.weights(), &ma) + c / volume_mask(w.weights(), &mc))
}

pub fn stationary(w: &AffinityMatrix) -> RandomWalkStats {
    let degrees = w.degrees();
    let volume: f64 = degrees.iter().sum();
    RandomWalkStats {
        stationary: degrees.iter().map(|d| d / volume).collect(),
        volume,
    }
}

/// `P(A → Ā)`, evaluated from `π` and `T` rather than from cut and volume.
pub fn escape_probability(w: &AffinityMatrix, part: &Partition, a: usize) -> Result<f64> {
    check_sizes(w, part)?;
    let ma = class_mask(part, a, true)?;
    Ok(escape_masks(w, &ma))
}

fn escape_masks(w: &AffinityMatrix, from: &[bool]) -> f64 {
    let pi = stationary(w).stationary;
    let t = transition(w);
    let t = t.matrix();
    let mut flow = 0.0;
    let mut mass = 0.0;
    for i in (0..from.len()).filter(|&i| from[i]) {
        mass += pi[i];
        for j in (0..from.len()).filter(|&j| !from[j]) {
            flow += pi[i] * t[(i, j)];
        }
    }
    flow / mass
}

/// `(Ncut(A, Ā), P(A → Ā) + P(Ā → A))`; the two agree up to rounding.
pub fn ncut_escape_identity_check(w: &AffinityMatrix, part: &Partition, a: usize) -> Result<(f64, f64)> {
    let n = ncut(w, part, a)?;
    let ma = class_mask(part, a, true)?;
    let escapes = escape_masks(w, &ma) + escape_masks(w, &complement(&ma));
    Ok((n, escapes))
}

/// Multiclass Ncut of the supervised partition, `Σ_c P(A_c → Ā_c)`, on
/// `affinity(x, σ)`, and its gradient with respect to `x`.
///
/// Every class in `0..num_classes` must be non-empty and there must be at
/// least two of them.
pub fn ncut_loss(x: &FeatureMatrix, labels: &Partition, sigma: f64) -> Result<(f64, FeatureMatrix)> {
    check_sigma(sigma)?;
    if labels.len() != x.n() {
        return Err(SftError::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            x.n()
        )));
    }
    let k = labels.num_classes();
    if k < 2 {
        return Err(SftError::DegeneratePartition(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    let mut sizes = vec![0usize; k];
    labels.labels().iter().for_each(|&l| sizes[l] += 1);
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(SftError::EmptyClass(c));
    }

    let (unit, norms) = normalize_rows(x.matrix())?;
    let cos = gram_symmetric(&unit);
    let n = x.n();
    // The loss is invariant to a global scale of W; exp((c - 1)/σ) ≤ 1 keeps
    // small temperatures in range.
    let mut w = cos.clone();
    w.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = ((*v - 1.0) / sigma).exp());

    let lab = labels.labels();
    let mut assoc = vec![0.0; k];
    let mut vol = vec![0.0; k];
    for i in 0..n {
        let ci = lab[i];
        for j in 0..n {
            let wij = w[(i, j)];
            vol[ci] += wij;
            if lab[j] == ci {
                assoc[ci] += wij;
            }
        }
    }
    // cut(A, Ā)/vol(A) = 1 - assoc(A)/vol(A)
    let loss: f64 = (0..k).map(|c| 1.0 - assoc[c] / vol[c]).sum();

    let mut grad_c = Matrix::zeros(n, n);
    for i in 0..n {
        let ci = lab[i];
        let base = assoc[ci] / (vol[ci] * vol[ci]);
        for j in 0..n {
            let dw = if lab[j] == ci { base - 1.0 / vol[ci] } else { base };
            grad_c[(i, j)] = dw * w[(i, j)] / sigma;
        }
    }
    let grad = cosine_backward(&unit, &norms, &grad_c);
    Ok((loss, FeatureMatrix::from_matrix(grad)?))
}
