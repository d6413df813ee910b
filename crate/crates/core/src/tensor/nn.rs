//! Neural building blocks over the tensor graph: parameter registry,
//! linear/MLP layers, layer normalization with affine terms, and scaled
//! dot-product multi-head attention with an optional additive logit bias.
//!
//! Initialization is seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases
//! and layer-norm offsets start at zero, layer-norm gains at one. Parameter
//! registration order is construction order, which fixes the optimizer
//! iteration order and the checkpoint layout.

use super::{
    add, add_row, concat_cols, matmul, mul_row, relu, softmax_rows, transpose, layer_norm_rows,
    scale, Tensor,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Ordered registry of named parameters. A parameter belongs to exactly one
/// registry; the optimizer and checkpoints address it by name.
#[derive(Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a unique name and returns the handle.
    pub fn register(&mut self, name: &str, t: Tensor) -> Tensor {
        assert!(
            !self.names.iter().any(|n| n == name),
            "parameter {name:?} registered twice"
        );
        self.names.push(name.to_string());
        self.tensors.push(t.clone());
        t
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn zero_grads(&self) {
        for t in &self.tensors {
            t.zero_grad();
        }
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zeroes every parameter whose name contains any of the given
    /// fragments. Used by passthrough and ablation tests.
    pub fn zero_matching(&self, fragments: &[&str]) {
        for (name, t) in self.iter() {
            if fragments.iter().any(|f| name.contains(f)) {
                t.fill(0.0);
            }
        }
    }
}

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight init.
pub fn init_weight(
    params: &mut ParamSet,
    name: &str,
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    params.register(name, Tensor::leaf(rows, cols, data))
}

fn init_zeros(params: &mut ParamSet, name: &str, cols: usize) -> Tensor {
    params.register(name, Tensor::leaf(1, cols, vec![0.0; cols]))
}

/// Affine map `x . W + b` with W sized in_dim x out_dim.
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = init_weight(params, &format!("{name}.w"), in_dim, out_dim, in_dim, rng);
        let b = Some(init_zeros(params, &format!("{name}.b"), out_dim));
        Linear { w, b }
    }

    /// Weight-only variant (no bias term).
    pub fn new_no_bias(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = init_weight(params, &format!("{name}.w"), in_dim, out_dim, in_dim, rng);
        Linear { w, b: None }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let y = matmul(x, &self.w);
        match &self.b {
            Some(b) => add_row(&y, b),
            None => y,
        }
    }
}

/// Multilayer perceptron: affine layers with ReLU between them, final layer
/// affine.
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths, e.g. `[in, hidden, out]`.
    pub fn new(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i != last {
                h = relu(&h);
            }
        }
        h
    }

    /// Forward pass for a single input row on raw slices, building no graph
    /// nodes. Matches [`Mlp::forward`] up to summation order.
    pub fn eval_row(&self, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (in_dim, out_dim) = (layer.w.rows(), layer.w.cols());
            assert_eq!(h.len(), in_dim, "eval_row: width mismatch {} vs {in_dim}", h.len());
            let mut next = match &layer.b {
                Some(b) => b.values(),
                None => vec![0.0; out_dim],
            };
            layer.w.with_data(|w| {
                for (i, &hv) in h.iter().enumerate() {
                    if hv != 0.0 {
                        let row = &w[i * out_dim..(i + 1) * out_dim];
                        for (n, &wv) in next.iter_mut().zip(row.iter()) {
                            *n += hv * wv;
                        }
                    }
                }
            });
            if li != last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            h = next;
        }
        h
    }
}

/// Layer normalization with learned gain and offset.
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gain = params.register(&format!("{name}.gain"), Tensor::leaf(1, dim, vec![1.0; dim]));
        let bias = init_zeros(params, &format!("{name}.bias"), dim);
        LayerNorm { gain, bias, eps: 1e-8 }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        add_row(&mul_row(&layer_norm_rows(x, self.eps), &self.gain), &self.bias)
    }
}

/// Scaled dot-product multi-head attention. Projections carry no bias terms
/// so that a zeroed value projection collapses the block to exactly zero,
/// which keeps the residual-identity property exact.
pub struct MultiHeadAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(
            dim % heads == 0,
            "attention dim {dim} not divisible by {heads} heads"
        );
        let wq = init_weight(params, &format!("{name}.wq"), dim, dim, dim, rng);
        let wk = init_weight(params, &format!("{name}.wk"), dim, dim, dim, rng);
        let wv = init_weight(params, &format!("{name}.wv"), dim, dim, dim, rng);
        let wo = init_weight(params, &format!("{name}.wo"), dim, dim, dim, rng);
        MultiHeadAttention { wq, wk, wv, wo, heads, dim }
    }

    /// `query` is Mq x dim, `key`/`value` are Mk x dim_kv already projected
    /// to dim by the caller where needed. An optional Mq x Mk bias is added
    /// to every head's logits before the softmax.
    pub fn forward(&self, query: &Tensor, key: &Tensor, value: &Tensor, bias: Option<&Tensor>) -> Tensor {
        assert_eq!(
            key.rows(),
            value.rows(),
            "attention: key and value sequence lengths differ, {}x{} vs {}x{}",
            key.rows(),
            key.cols(),
            value.rows(),
            value.cols()
        );
        let q = matmul(query, &self.wq);
        let k = matmul(key, &self.wk);
        let v = matmul(value, &self.wv);
        let dh = self.dim / self.heads;
        let scale_factor = 1.0 / (dh as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = super::narrow_cols(&q, h * dh, dh);
            let kh = super::narrow_cols(&k, h * dh, dh);
            let vh = super::narrow_cols(&v, h * dh, dh);
            let mut logits = scale(&matmul(&qh, &transpose(&kh)), scale_factor);
            if let Some(b) = bias {
                logits = add(&logits, b);
            }
            let attn = softmax_rows(&logits);
            head_outputs.push(matmul(&attn, &vh));
        }
        let refs: Vec<&Tensor> = head_outputs.iter().collect();
        matmul(&concat_cols(&refs), &self.wo)
    }
}
