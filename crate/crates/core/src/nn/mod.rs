//! Dense tensors, a reverse-mode autodiff tape and first-order optimizers.
//!
//! Operations cover affine layers, ReLU, stride-1 convolution with max
//! pooling, fused softmax cross-entropy, L2 normalization, elementwise
//! arithmetic and a handful of reductions.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use optim::{Optimizer, OptimizerKind};
pub use params::ParamSet;
pub use tensor::Tensor;

use crate::error::Result;

/// Row-wise L2 normalization of a tensor outside any graph.
pub fn l2_normalize(z: &Tensor, axis: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.input(z.clone());
    let y = g.l2_normalize(x, axis)?;
    Ok(g.value(y).clone())
}


#[cfg(test)]
mod tests {
    use super::gradcheck::*;
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_forward() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.reshape(x, vec![3]).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn dense_identity_weights() {
        let mut params = ParamSet::new();
        params.push("w", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        params.push("b", Tensor::zeros(&[2]));
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 2], vec![0.5, -0.5]).unwrap());
        let (w, b) = (g.param(&params, 0), g.param(&params, 1));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -0.5]);
    }

    #[test]
    fn two_layer_mlp_matches_hand_rolled_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, &[4, 3]);
        let w1 = random_tensor(&mut rng, &[3, 5]);
        let b1 = random_tensor(&mut rng, &[5]);
        let w2 = random_tensor(&mut rng, &[5, 2]);
        let b2 = random_tensor(&mut rng, &[2]);

        let mut params = ParamSet::new();
        for (n, t) in [("w1", &w1), ("b1", &b1), ("w2", &w2), ("b2", &b2)] {
            params.push(n, t.clone());
        }
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let ids: Vec<_> = (0..4).map(|i| g.param(&params, i)).collect();
        let h = g.dense(xi, ids[0], ids[1]).unwrap();
        let h = g.relu(h);
        let y = g.dense(h, ids[2], ids[3]).unwrap();

        // Plain triple loops, no shared code with the gemm path.
        let mut expected = vec![0.0; 8];
        for r in 0..4 {
            let mut hidden = [0.0; 5];
            for (j, hv) in hidden.iter_mut().enumerate() {
                let mut acc = b1.data()[j];
                for k in 0..3 {
                    acc += x.data()[r * 3 + k] * w1.data()[k * 5 + j];
                }
                *hv = acc.max(0.0);
            }
            for o in 0..2 {
                let mut acc = b2.data()[o];
                for (j, hv) in hidden.iter().enumerate() {
                    acc += hv * w2.data()[j * 2 + o];
                }
                expected[r * 2 + o] = acc;
            }
        }
        for (a, e) in g.value(y).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("inner dimensions"), "{err}");
    }

    #[test]
    fn square_gradient_at_three() {
        let mut params = ParamSet::new();
        params.push("theta", Tensor::vector(vec![3.0]));
        let mut g = Graph::new();
        let t = g.param(&params, 0);
        let sq = g.mul(t, t).unwrap();
        let loss = g.sum(sq);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(0).grad().unwrap(), &[6.0]);
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let mut params = ParamSet::new();
        params.push("x", Tensor::vector(vec![1.0]));
        let mut g = Graph::new();
        let x = g.param(&params, 0);
        let neg = g.scale(x, -1.0);
        let r = g.relu(neg);
        let loss = g.sum(r);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(0).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let g = Graph::new();
        let mut other = Graph::new();
        let loss = other.input(Tensor::scalar(1.0));
        let mut params = ParamSet::new();
        assert!(matches!(g.backward(loss, &mut params), Err(Error::State(_))));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut params = ParamSet::new();
        params.push("x", Tensor::vector(vec![2.0]));
        for _ in 0..2 {
            let mut g = Graph::new();
            let x = g.param(&params, 0);
            let loss = g.sum(x);
            g.backward(loss, &mut params).unwrap();
        }
        assert_eq!(params.get(0).grad().unwrap(), &[2.0]);
        params.zero_grad();
        assert_eq!(params.get(0).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn disconnected_parameter_gets_exact_zero() {
        let mut params = ParamSet::new();
        params.push("used", Tensor::vector(vec![1.0, 2.0]));
        params.push("unused", Tensor::vector(vec![5.0]));
        let mut g = Graph::new();
        let u = g.param(&params, 0);
        let _ = g.param(&params, 1);
        let loss = g.sum(u);
        g.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(1).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn sgd_single_step() {
        let mut params = ParamSet::new();
        params.push("t", Tensor::vector(vec![1.0]));
        params.get_mut(0).grad_mut()[0] = 1.0;
        Optimizer::sgd(0.1).step(&mut params).unwrap();
        assert!((params.get(0).data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut params = ParamSet::new();
        params.push("t", Tensor::vector(vec![1.5, -2.0]));
        params.zero_grad();
        let mut opt = Optimizer::adam(0.01);
        for _ in 0..5 {
            opt.step(&mut params).unwrap();
        }
        assert_eq!(params.get(0).data(), &[1.5, -2.0]);
        assert_eq!(opt.steps_taken(), 5);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut params = ParamSet::new();
        params.push("t", Tensor::vector(vec![1.0]));
        let mut opt = Optimizer::adam(0.1);
        for _ in 0..50 {
            params.zero_grad();
            let mut g = Graph::new();
            let t = g.param(&params, 0);
            let d = g.add_scalar(t, -2.0);
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq);
            g.backward(loss, &mut params).unwrap();
            opt.step(&mut params).unwrap();
        }
        let theta = params.get(0).data()[0];
        assert!((theta - 2.0).abs() < 1e-2, "theta = {theta}");
    }

    #[test]
    fn optimizer_requires_gradients() {
        let mut params = ParamSet::new();
        params.push("t", Tensor::vector(vec![1.0]));
        assert!(matches!(
            Optimizer::adam(0.1).step(&mut params),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn normalize_three_four_five() {
        let z = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let n = l2_normalize(&z, 1).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);
        let again = l2_normalize(&n, 1).unwrap();
        for (a, b) in again.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_zero_slice() {
        let z = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(l2_normalize(&z, 1), Err(Error::Normalization { index: 1, .. })));
    }

    #[test]
    fn normalize_columns() {
        let z = Tensor::new(vec![2, 2], vec![3.0, 1.0, 4.0, 0.0]).unwrap();
        let n = l2_normalize(&z, 0).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15);
        assert!((n.data()[2] - 0.8).abs() < 1e-15);
        assert!((n.data()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for axis in [0, 1] {
            let x = random_tensor(&mut rng, &[3, 4]);
            let w = random_tensor(&mut rng, &[3, 4]);
            let f = |x: &Tensor| {
                let mut g = Graph::new();
                let xi = g.input(x.clone());
                let wi = g.input(w.clone());
                let y = g.l2_normalize(xi, axis).unwrap();
                let p = g.mul(y, wi).unwrap();
                let s = g.sum(p);
                g.value(s).item().unwrap()
            };
            let mut g = Graph::new();
            let xi = g.variable(x.clone());
            let wi = g.input(w.clone());
            let y = g.l2_normalize(xi, axis).unwrap();
            let p = g.mul(y, wi).unwrap();
            let s = g.sum(p);
            let grads = g.backward(s, &mut ParamSet::new()).unwrap();
            let err = max_input_error(&x, 1e-5, f, grads.get(xi).unwrap());
            assert!(err < 1e-4, "axis {axis}: {err}");
        }
    }

    #[test]
    fn conv_pool_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[2, 2, 6, 6]);
        let mut params = ParamSet::new();
        params.push("w", random_tensor(&mut rng, &[3, 2, 3, 3]));
        params.push("b", random_tensor(&mut rng, &[3]));
        let target = random_tensor(&mut rng, &[2, 3, 3, 3]);
        let build = |p: &ParamSet, g: &mut Graph| -> NodeId {
            let xi = g.input(x.clone());
            let (w, b) = (g.param(p, 0), g.param(p, 1));
            let c = g.conv2d(xi, w, b, 1).unwrap();
            let m = g.max_pool2d(c, 2).unwrap();
            let t = g.input(target.clone());
            let prod = g.mul(m, t).unwrap();
            g.sum(prod)
        };
        let mut analytic = params.clone();
        let mut g = Graph::new();
        let loss = build(&params, &mut g);
        g.backward(loss, &mut analytic).unwrap();
        let err = max_param_error(
            &params,
            1e-5,
            |p| {
                let mut g = Graph::new();
                let l = build(p, &mut g);
                g.value(l).item()
            },
            &analytic,
        );
        assert!(err < 1e-4, "{err}");
    }
}
