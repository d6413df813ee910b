//! Central finite-difference verification of analytic gradients.
//!
//! The checker re-evaluates the loss function at perturbed parameter values
//! (forward passes only) and never consults the reverse-mode path it
//! verifies.

use super::nn::ParamSet;
use super::{backward, Tensor};

/// Worst observed deviation between analytic and finite-difference
/// gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients of `loss_fn` against central finite
/// differences with step `h`, probing at most `max_per_param` entries per
/// parameter (evenly strided; all entries when it covers them).
///
/// The relative error denominator is floored at 1e-3 so near-zero gradient
/// pairs compare absolutely at that scale.
pub fn check_gradients(
    params: &ParamSet,
    mut loss_fn: impl FnMut() -> Tensor,
    h: f64,
    max_per_param: usize,
) -> GradCheckReport {
    params.zero_grads();
    let loss = loss_fn();
    backward(&loss).expect("gradient check loss must be scalar");
    let analytic: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.grad()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };

    for (pi, (name, tensor)) in params.iter().enumerate() {
        let n = tensor.len();
        let stride = (n / max_per_param.max(1)).max(1);
        let mut values = tensor.values();
        let mut idx = 0usize;
        while idx < n {
            let original = values[idx];
            values[idx] = original + h;
            tensor.set_values(&values);
            let plus = loss_fn().item();
            values[idx] = original - h;
            tensor.set_values(&values);
            let minus = loss_fn().item();
            values[idx] = original;
            tensor.set_values(&values);

            let fd = (plus - minus) / (2.0 * h);
            let an = analytic[pi][idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.to_string();
                report.worst_index = idx;
            }
            report.checked += 1;
            idx += stride;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::nn::{LayerNorm, Mlp, MultiHeadAttention, ParamSet};
    use crate::tensor::{
        chamfer_l1_loss, group_max_rows, layer_norm_rows, matmul, mean_all, mul, relu, scale_by,
        softmax_rows, sum_all, Tensor,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-5;
    const H: f64 = 1e-5;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let a = params.register("a", Tensor::leaf(3, 4, rand_vec(&mut rng, 12)));
        let b = params.register("b", Tensor::leaf(4, 2, rand_vec(&mut rng, 8)));
        let r = check_gradients(&params, || sum_all(&matmul(&a, &b)), H, 64);
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn softmax_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let a = params.register("a", Tensor::leaf(3, 5, rand_vec(&mut rng, 15)));
        let w = Tensor::constant(3, 5, rand_vec(&mut rng, 15));
        let r = check_gradients(&params, || sum_all(&mul(&softmax_rows(&a), &w)), H, 64);
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn layer_norm_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let a = params.register("a", Tensor::leaf(2, 6, rand_vec(&mut rng, 12)));
        let w = Tensor::constant(2, 6, rand_vec(&mut rng, 12));
        let r =
            check_gradients(&params, || sum_all(&mul(&layer_norm_rows(&a, 1e-8), &w)), H, 64);
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn relu_and_pool_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::new();
        let a = params.register("a", Tensor::leaf(6, 4, rand_vec(&mut rng, 24)));
        let r = check_gradients(&params, || sum_all(&group_max_rows(&relu(&a), 3)), H, 64);
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn mlp_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "m", &[3, 8, 2], &mut rng);
        let x = Tensor::constant(5, 3, rand_vec(&mut rng, 15));
        let r = check_gradients(&params, || mean_all(&mul(&mlp.forward(&x), &mlp.forward(&x))), H, 64);
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn attention_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParamSet::new();
        let attn = MultiHeadAttention::new(&mut params, "a", 8, 2, &mut rng);
        let q = params.register("q", Tensor::leaf(3, 8, rand_vec(&mut rng, 24)));
        let kv = params.register("kv", Tensor::leaf(4, 8, rand_vec(&mut rng, 32)));
        let lambda = params.register("lam", Tensor::leaf(1, 1, vec![0.5]));
        let dist = Tensor::constant(3, 4, rand_vec(&mut rng, 12));
        let r = check_gradients(
            &params,
            || {
                let bias = scale_by(&dist, &relu(&lambda));
                sum_all(&attn.forward(&q, &kv, &kv, Some(&bias)))
            },
            H,
            64,
        );
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn layer_norm_with_affine_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamSet::new();
        let ln = LayerNorm::new(&mut params, "ln", 5);
        let x = params.register("x", Tensor::leaf(3, 5, rand_vec(&mut rng, 15)));
        let w = Tensor::constant(3, 5, rand_vec(&mut rng, 15));
        let r = check_gradients(&params, || sum_all(&mul(&ln.forward(&x), &w)), H, 64);
        assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn chamfer_loss_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ParamSet::new();
        let pred = params.register("pred", Tensor::leaf(6, 3, rand_vec(&mut rng, 18)));
        let target = Tensor::constant(5, 3, rand_vec(&mut rng, 15));
        let r = check_gradients(&params, || chamfer_l1_loss(&pred, &target), H, 64);
        // piecewise-linear loss: exact except across nearest-neighbor flips
        assert!(r.max_rel_err < TOL, "{r:?}");
    }
}
