//! A small affine embedding network: one or two dense layers with a ReLU in
//! between, optionally followed by l2 normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::matrix::Matrix;
use crate::rng::PortableRng;
use crate::sft::{normalize_rows, unit_backward};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`.
    pub weight: Matrix,
    /// `1 × out`.
    pub bias: Matrix,
}

impl Dense {
    fn random(input: usize, output: usize, rng: &mut PortableRng) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        let data = (0..input * output).map(|_| rng.normal() * std).collect();
        Dense {
            weight: Matrix::from_vec(output, input, data).expect("sized"),
            bias: Matrix::zeros(1, output),
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = x.matmul_t(&self.weight);
        let b = self.bias.row(0);
        for i in 0..out.rows() {
            for (o, bv) in out.row_mut(i).iter_mut().zip(b) {
                *o += bv;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedModel {
    pub layers: Vec<Dense>,
    pub normalize: bool,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EmbedCache {
    input: Matrix,
    /// Pre-activations of every layer but the last.
    hidden_pre: Vec<Matrix>,
    /// Post-ReLU activations feeding each later layer.
    hidden_post: Vec<Matrix>,
    /// Unit rows and norms of the raw output when normalizing.
    unit: Option<(Matrix, Vec<f64>)>,
    output: Matrix,
}

impl EmbedCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl EmbedModel {
    /// `hidden_dim == 0` builds a single affine map.
    pub fn random(
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        normalize: bool,
        rng: &mut PortableRng,
    ) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 {
            return Err(SftError::Config("model dimensions must be positive".into()));
        }
        let layers = if hidden_dim == 0 {
            vec![Dense::random(input_dim, embed_dim, rng)]
        } else {
            vec![
                Dense::random(input_dim, hidden_dim, rng),
                Dense::random(hidden_dim, embed_dim, rng),
            ]
        };
        Ok(EmbedModel { layers, normalize })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<EmbedCache> {
        if x.cols() != self.input_dim() {
            return Err(SftError::Shape(format!(
                "input has dimension {}, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut hidden_pre = Vec::new();
        let mut hidden_post = Vec::new();
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            let mut a = h.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            let next = layer.forward(&a);
            hidden_pre.push(h);
            hidden_post.push(a);
            h = next;
        }
        let (unit, output) = if self.normalize {
            let (u, norms) = normalize_rows(&h)?;
            (Some((u.clone(), norms)), u)
        } else {
            (None, h)
        };
        Ok(EmbedCache {
            input: x.clone(),
            hidden_pre,
            hidden_post,
            unit,
            output,
        })
    }

    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.output)
    }

    /// Gradients of every parameter block, in [`EmbedModel::blocks`] order.
    pub fn backward(&self, cache: &EmbedCache, grad_out: &Matrix) -> Vec<Matrix> {
        let mut grad = match &cache.unit {
            Some((u, norms)) => unit_backward(u, norms, grad_out.clone()),
            None => grad_out.clone(),
        };
        let mut grads = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = if l == 0 {
                &cache.input
            } else {
                &cache.hidden_post[l - 1]
            };
            let grad_w = grad.t_matmul(input);
            let grad_b = Matrix::from_vec(1, grad.cols(), column_sums(&grad)).expect("sized");
            grads.push(grad_b);
            grads.push(grad_w);
            if l > 0 {
                let mut g = grad.matmul(&layer.weight);
                let pre = &cache.hidden_pre[l - 1];
                for (gv, &p) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
                grad = g;
            }
        }
        grads.reverse();
        grads
    }

    /// Parameter blocks: weight then bias for each layer.
    pub fn blocks(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in m.row_iter() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}
