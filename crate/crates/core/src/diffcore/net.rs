//! Dense multi-layer perceptron machinery over flat parameter slices.
//!
//! Layer parameters are packed `[W row-major (out x in), b (out)]` in layer
//! order. Forward keeps a cache of pre/post activations; backward consumes
//! it and accumulates parameter gradients into a caller-provided slice, so
//! encoder/decoder pairs can share one flat vector.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative, given the pre-activation and the already-computed output.
    fn prime(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    /// Fully-connected chain through `dims`, `hidden_act` between hidden
    /// layers and `out_act` on the final layer.
    pub fn chain(dims: &[usize], hidden_act: Activation, out_act: Activation) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                act: if i + 2 == dims.len() { out_act } else { hidden_act },
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    fn layer_views<'a>(
        &self,
        params: &'a [f64],
        index: usize,
    ) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let offset: usize = self.layers[..index]
            .iter()
            .map(LayerSpec::param_count)
            .sum();
        let l = &self.layers[index];
        let w_len = l.out_dim * l.in_dim;
        let w = ArrayView2::from_shape((l.out_dim, l.in_dim), &params[offset..offset + w_len])
            .expect("weight slice shape");
        let b = ArrayView1::from(&params[offset + w_len..offset + w_len + l.out_dim]);
        (w, b)
    }

    /// Forward pass over a batch (rows are samples). Returns the output and
    /// the cache needed for `backward`.
    pub fn forward(&self, params: &[f64], input: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        assert_eq!(params.len(), self.param_count(), "parameter count");
        assert_eq!(input.ncols(), self.input_dim(), "input width");

        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_views(params, i);
            let mut z = current.dot(&w.t());
            z += &b;
            let a = z.mapv(|v| layer.act.apply(v));
            pre.push(z);
            current = a.clone();
            post.push(a);
        }
        (
            current,
            MlpCache {
                input: input.clone(),
                pre,
                post,
            },
        )
    }

    /// Backward pass. `grad_out` is dLoss/dOutput for the batch; parameter
    /// gradients are accumulated into `grad_params`. Returns dLoss/dInput.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        grad_out: &Array2<f64>,
        grad_params: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grad_params.len(), self.param_count(), "gradient count");
        assert_eq!(grad_out.dim(), cache.post.last().expect("cache").dim());

        let mut delta = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            // delta currently holds dLoss/dPost for layer i.
            let pre = &cache.pre[i];
            let post = &cache.post[i];
            ndarray::Zip::from(&mut delta)
                .and(pre)
                .and(post)
                .for_each(|d, &z, &a| *d *= layer.act.prime(z, a));

            let layer_input = if i == 0 {
                &cache.input
            } else {
                &cache.post[i - 1]
            };
            let grad_w = delta.t().dot(layer_input);
            let grad_b = delta.sum_axis(Axis(0));

            let offset: usize = self.layers[..i].iter().map(LayerSpec::param_count).sum();
            let w_len = layer.out_dim * layer.in_dim;
            for (g, v) in grad_params[offset..offset + w_len]
                .iter_mut()
                .zip(grad_w.iter())
            {
                *g += v;
            }
            for (g, v) in grad_params[offset + w_len..offset + w_len + layer.out_dim]
                .iter_mut()
                .zip(grad_b.iter())
            {
                *g += v;
            }

            let (w, _) = self.layer_views(params, i);
            delta = delta.dot(&w);
        }
        delta
    }
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("non-empty net")
    }
}

/// Row-wise softmax, shifted for stability.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean activations per column.
pub fn column_means(m: &Array2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).expect("non-empty matrix")
}
