//! Backward-pass agreement with central finite differences for every
//! differentiable primitive, plus linearity and determinism of the engine.

use gentest_core::tensor::{finite_difference_gradient, max_relative_error};
use gentest_core::{Graph, NodeId, Result, Rng, Tensor};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;
const POINTS: usize = 100;

fn random(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Builds `op(x)` and returns a fixed random linear functional of it, so that
/// non-scalar primitives are checked on every output coordinate.
fn check_unary<F>(name: &str, shape: &[usize], seed: u64, mut adjust: impl FnMut(&mut Tensor), op: F)
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut rng = Rng::new(seed);
    for trial in 0..POINTS {
        let mut x = random(&mut rng, shape, 1.0);
        adjust(&mut x);
        let eval = |x: &Tensor, weights: Option<&Tensor>| -> Result<(Graph, NodeId, NodeId, Tensor)> {
            let mut g = Graph::new();
            let xv = g.variable(x.clone());
            let y = op(&mut g, xv)?;
            let w = match weights {
                Some(w) => w.clone(),
                None => Tensor::new(
                    g.value(y)?.shape().to_vec(),
                    (0..g.value(y)?.len()).map(|i| ((i * 7 + 3) as f64 * 0.731).sin()).collect(),
                )?,
            };
            let wn = g.constant(w.clone());
            let prod = g.mul(y, wn)?;
            let root = g.sum(prod)?;
            Ok((g, root, xv, w))
        };
        let (g, root, xv, w) = eval(&x, None).unwrap();
        let analytic = g.backward(root, &[xv]).unwrap().remove(0);
        let numeric = finite_difference_gradient(
            |p| {
                let (g, root, _, _) = eval(p, Some(&w))?;
                Ok(g.value(root)?.item())
            },
            &x,
            STEP,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric, FLOOR).unwrap();
        assert!(err < TOL, "{name} trial {trial}: relative error {err:e}");
    }
}

#[test]
fn matmul_both_operands() {
    let mut rng = Rng::new(11);
    let b = random(&mut rng, &[4, 3], 1.0);
    check_unary("matmul lhs", &[2, 4], 1, |_| {}, |g, x| {
        let bn = g.constant(b.clone());
        g.matmul(x, bn)
    });
    let a = random(&mut rng, &[2, 4], 1.0);
    check_unary("matmul rhs", &[4, 3], 2, |_| {}, |g, x| {
        let an = g.constant(a.clone());
        g.matmul(an, x)
    });
}

#[test]
fn add_sub_mul_scale() {
    let mut rng = Rng::new(12);
    let other = random(&mut rng, &[3, 2], 1.0);
    check_unary("add", &[3, 2], 3, |_| {}, |g, x| {
        let o = g.constant(other.clone());
        g.add(x, o)
    });
    check_unary("sub", &[3, 2], 4, |_| {}, |g, x| {
        let o = g.constant(other.clone());
        g.sub(o, x)
    });
    check_unary("mul", &[3, 2], 5, |_| {}, |g, x| {
        let o = g.constant(other.clone());
        g.mul(x, o)
    });
    check_unary("mul self", &[3, 2], 6, |_| {}, |g, x| g.mul(x, x));
    check_unary("scale", &[3, 2], 7, |_| {}, |g, x| g.scale(x, -2.5));
    check_unary("add_scalar", &[3, 2], 8, |_| {}, |g, x| g.add_scalar(x, 0.7));
}

#[test]
fn add_bias_both_operands() {
    let mut rng = Rng::new(13);
    let bias = random(&mut rng, &[3], 1.0);
    check_unary("add_bias x", &[2, 3], 9, |_| {}, |g, x| {
        let b = g.constant(bias.clone());
        g.add_bias(x, b)
    });
    let x0 = random(&mut rng, &[2, 3], 1.0);
    check_unary("add_bias b", &[3], 10, |_| {}, |g, b| {
        let x = g.constant(x0.clone());
        g.add_bias(x, b)
    });
}

#[test]
fn pointwise_nonlinearities() {
    check_unary(
        "relu",
        &[4, 5],
        14,
        |t| {
            for v in t.data_mut() {
                if v.abs() < 1e-3 {
                    *v = 0.5;
                }
            }
        },
        |g, x| g.relu(x),
    );
    check_unary("tanh", &[4, 5], 15, |_| {}, |g, x| g.tanh(x));
    check_unary("sigmoid", &[4, 5], 16, |_| {}, |g, x| g.sigmoid(x));
    check_unary("softplus", &[4, 5], 17, |_| {}, |g, x| g.softplus(x));
}

#[test]
fn softmax_and_cross_entropy() {
    check_unary("softmax", &[3, 4], 18, |_| {}, |g, x| g.softmax(x));
    check_unary("softmax_cross_entropy", &[3, 4], 19, |_| {}, |g, x| {
        g.softmax_cross_entropy(x, &[0, 3, 1])
    });
}

#[test]
fn structural_ops() {
    let mut rng = Rng::new(20);
    let other = random(&mut rng, &[2, 2], 1.0);
    check_unary("reshape", &[2, 3], 21, |_| {}, |g, x| g.reshape(x, &[3, 2]));
    check_unary("concat lhs", &[2, 3], 22, |_| {}, |g, x| {
        let o = g.constant(other.clone());
        g.concat(x, o)
    });
    check_unary("concat rhs", &[2, 3], 23, |_| {}, |g, x| {
        let o = g.constant(other.clone());
        g.concat(o, x)
    });
    check_unary("sum", &[2, 3], 24, |_| {}, |g, x| g.sum(x));
    check_unary("mean", &[2, 3], 25, |_| {}, |g, x| g.mean(x));
    check_unary("column", &[2, 3], 26, |_| {}, |g, x| g.column(x, 2));
    check_unary("row_max", &[2, 4], 27, |_| {}, |g, x| g.row_max(x, None));
    check_unary("row_max excluding", &[2, 4], 28, |_| {}, |g, x| g.row_max(x, Some(1)));
}

/// Scalar loss of a three-layer dense network, checked against finite
/// differences with respect to the input and every weight.
#[test]
fn three_layer_network_loss() {
    let mut rng = Rng::new(29);
    let widths = [6, 8, 5, 3];
    for trial in 0..POINTS {
        let mut params: Vec<Tensor> = Vec::new();
        for w in widths.windows(2) {
            params.push(random(&mut rng, &[w[0], w[1]], 0.5));
            params.push(random(&mut rng, &[w[1]], 0.1));
        }
        let input = random(&mut rng, &[2, widths[0]], 1.0);
        let labels = [trial % 3, (trial + 1) % 3];

        let loss = |input: &Tensor, params: &[Tensor]| -> Result<(Graph, NodeId, Vec<NodeId>)> {
            let mut g = Graph::new();
            let mut leaves = vec![g.variable(input.clone())];
            let mut h = leaves[0];
            for (layer, pair) in params.chunks(2).enumerate() {
                let w = g.variable(pair[0].clone());
                let b = g.variable(pair[1].clone());
                leaves.push(w);
                leaves.push(b);
                let z = g.matmul(h, w)?;
                let z = g.add_bias(z, b)?;
                h = if layer + 1 < params.len() / 2 { g.tanh(z)? } else { z };
            }
            let root = g.softmax_cross_entropy(h, &labels)?;
            Ok((g, root, leaves))
        };

        let (g, root, leaves) = loss(&input, &params).unwrap();
        let grads = g.backward(root, &leaves).unwrap();

        let fd_input = finite_difference_gradient(
            |p| {
                let (g, r, _) = loss(p, &params)?;
                Ok(g.value(r)?.item())
            },
            &input,
            STEP,
        )
        .unwrap();
        let err = max_relative_error(&grads[0], &fd_input, FLOOR).unwrap();
        assert!(err < TOL, "input grad trial {trial}: {err:e}");

        for (k, p) in params.iter().enumerate() {
            let fd = finite_difference_gradient(
                |q| {
                    let mut ps = params.clone();
                    ps[k] = q.clone();
                    let (g, r, _) = loss(&input, &ps)?;
                    Ok(g.value(r)?.item())
                },
                p,
                STEP,
            )
            .unwrap();
            let err = max_relative_error(&grads[k + 1], &fd, FLOOR).unwrap();
            assert!(err < TOL, "param {k} trial {trial}: {err:e}");
        }
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = Rng::new(30);
    for _ in 0..POINTS {
        let x = random(&mut rng, &[5, 7], 10.0);
        let mut g = Graph::new();
        let xn = g.constant(x);
        let s = g.softmax(xn).unwrap();
        let v = g.value(s).unwrap();
        for row in v.data().chunks(7) {
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = Rng::new(31);
    for _ in 0..POINTS {
        let x = random(&mut rng, &[3, 4], 1.0);
        let (a, b) = (rng.normal(), rng.normal());
        let grad = |ca: f64, cb: f64| {
            let mut g = Graph::new();
            let xv = g.variable(x.clone());
            let t = g.tanh(xv).unwrap();
            let f = g.sum(t).unwrap();
            let s = g.softmax(xv).unwrap();
            let sq = g.mul(s, s).unwrap();
            let h = g.sum(sq).unwrap();
            let fa = g.scale(f, ca).unwrap();
            let hb = g.scale(h, cb).unwrap();
            let root = g.add(fa, hb).unwrap();
            g.backward(root, &[xv]).unwrap().remove(0)
        };
        let combined = grad(a, b);
        let gf = grad(1.0, 0.0);
        let gh = grad(0.0, 1.0);
        for i in 0..combined.len() {
            let want = a * gf.data()[i] + b * gh.data()[i];
            assert!((combined.data()[i] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn identical_graphs_are_bit_identical() {
    let mut rng = Rng::new(32);
    let x = random(&mut rng, &[4, 16], 1.0);
    let w = random(&mut rng, &[16, 9], 0.3);
    let run = || {
        let mut g = Graph::new();
        let xv = g.variable(x.clone());
        let wv = g.variable(w.clone());
        let h = g.matmul(xv, wv).unwrap();
        let root = g.softmax_cross_entropy(h, &[1, 2, 3, 4]).unwrap();
        let value = g.forward(root).unwrap();
        let grads = g.backward(root, &[xv, wv]).unwrap();
        (value, grads)
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert!(v1.bit_eq(&v2));
    for (a, b) in g1.iter().zip(&g2) {
        assert!(a.bit_eq(b));
    }
}
