use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

#[test]
fn matmul_hand_example() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[2, 2], -3.0, 3.0);
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let c = g.matmul(av, i).unwrap();
    assert_eq!(g.value(c), a.data());
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn broadcast_only_on_leading_axes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[4, 3]));
    let row = g.constant(Tensor::full(&[3], 1.0));
    let col = g.constant(Tensor::full(&[4, 1], 1.0));
    assert_eq!(g.add(a, row).map(|v| g.shape(v).to_vec()).unwrap(), vec![4, 3]);
    assert!(g.add(a, col).is_err());
}

#[test]
fn silu_at_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.silu(x);
    assert_eq!(g.item(y), 0.0);
}

#[test]
fn backward_square_sum() {
    let mut g = Graph::new();
    let x = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]).into_param());
    let sq = g.square(x);
    let l = g.sum_all(sq);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_sin_at_zero() {
    let mut g = Graph::new();
    let x = g.leaf(&t(&[1], &[0.0]).into_param());
    let s = g.sin(x);
    let l = g.sum_all(s);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);
}

#[test]
fn backward_rejects_non_scalar_and_empty() {
    let mut g = Graph::<f64>::new();
    assert!(matches!(g.backward(Var::from_raw(0)), Err(Error::EmptyGraph)));
    let x = g.leaf(&Tensor::zeros(&[2]).into_param());
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn fan_out_accumulates() {
    // loss = y + y, y = 2x
    let mut g = Graph::new();
    let x = g.leaf(&Tensor::scalar(1.25).into_param());
    let y = g.scale(x, 2.0);
    let l = g.add(y, y).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0]);
}

#[test]
fn mean_axis_times_len_is_sum_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let x = rand_tensor(&mut rng, &[3, 5, 4], -10.0, 10.0);
        for axis in 0..3 {
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let m = g.mean_axis(v, axis).unwrap();
            let m = g.scale(m, x.shape()[axis] as f64);
            let s = g.sum_axis(v, axis).unwrap();
            for (a, b) in g.value(m).iter().zip(g.value(s)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn gradient_check_linear_is_exact() {
    let x = t(&[4], &[0.3, -1.0, 2.0, 5.0]);
    let err = gradient_check(|g, x| Ok(g.sum_all(x)), &x, 1e-5).unwrap();
    assert!(err < 1e-9);
}

#[test]
fn gradient_check_zero_step_is_error() {
    let x = t(&[1], &[1.0]);
    assert!(gradient_check(|g, x| Ok(g.sum_all(x)), &x, 0.0).is_err());
}

#[test]
fn gradient_check_non_finite_is_error() {
    let x = t(&[1], &[1000.0]);
    let r = gradient_check(
        |g, x| {
            let e = g.exp(x);
            Ok(g.sum_all(e))
        },
        &x,
        1e-5,
    );
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

/// Every differentiable primitive, wrapped to a scalar via a weighted sum so
/// that every output coordinate contributes a distinct gradient.
fn weighted(g: &mut Graph<f64>, y: Var) -> Result<Var, Error> {
    let n = g.value(y).len();
    let w = Tensor::from_fn(g.shape(y), |i| 0.5 + (i as f64 * 0.37).sin());
    debug_assert_eq!(w.numel(), n);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

type Prim = fn(&mut Graph<f64>, Var) -> Result<Var, Error>;

fn primitives() -> Vec<(&'static str, Prim)> {
    vec![
        ("add", |g, x| {
            let c = g.constant(Tensor::from_fn(&[4], |i| i as f64 - 1.5));
            let y = g.add(x, c)?;
            weighted(g, y)
        }),
        ("add_self", |g, x| {
            let y = g.add(x, x)?;
            weighted(g, y)
        }),
        ("sub", |g, x| {
            let s = g.slice(x, 1, 0, 2)?;
            let r = g.slice(x, 1, 2, 2)?;
            let y = g.sub(s, r)?;
            weighted(g, y)
        }),
        ("mul", |g, x| {
            let y = g.mul(x, x)?;
            weighted(g, y)
        }),
        ("mul_broadcast", |g, x| {
            let row = g.slice(x, 0, 0, 1)?;
            let row = g.reshape(row, &[4])?;
            let y = g.mul(x, row)?;
            weighted(g, y)
        }),
        ("div_or_zero", |g, x| {
            let d = g.exp(x);
            let y = g.div_or_zero(x, d)?;
            weighted(g, y)
        }),
        ("atan2", |g, x| {
            let a = g.slice(x, 1, 0, 2)?;
            let b = g.slice(x, 1, 2, 2)?;
            let y = g.atan2(a, b)?;
            weighted(g, y)
        }),
        ("scale", |g, x| {
            let y = g.scale(x, -2.5);
            weighted(g, y)
        }),
        ("add_scalar", |g, x| {
            let y = g.add_scalar(x, 0.7);
            weighted(g, y)
        }),
        ("neg", |g, x| {
            let y = g.neg(x);
            weighted(g, y)
        }),
        ("pow_int3", |g, x| {
            let y = g.pow_int(x, 3);
            weighted(g, y)
        }),
        ("pow_int0", |g, x| {
            let y = g.pow_int(x, 0);
            let z = g.add(y, x)?;
            weighted(g, z)
        }),
        ("sin", |g, x| {
            let y = g.sin(x);
            weighted(g, y)
        }),
        ("cos", |g, x| {
            let y = g.cos(x);
            weighted(g, y)
        }),
        ("exp", |g, x| {
            let y = g.exp(x);
            weighted(g, y)
        }),
        ("silu", |g, x| {
            let y = g.silu(x);
            weighted(g, y)
        }),
        ("sqrt", |g, x| {
            let s = g.square(x);
            let s = g.add_scalar(s, 0.5);
            let y = g.sqrt(s);
            weighted(g, y)
        }),
        ("abs", |g, x| {
            let y = g.abs(x);
            weighted(g, y)
        }),
        ("matmul", |g, x| {
            let w = g.constant(Tensor::from_fn(&[4, 3], |i| (i as f64).cos()));
            let y = g.matmul(x, w)?;
            weighted(g, y)
        }),
        ("matmul_rhs", |g, x| {
            let a = g.constant(Tensor::from_fn(&[2, 3], |i| (i as f64 * 0.7).sin()));
            let y = g.matmul(a, x)?;
            weighted(g, y)
        }),
        ("matmul_batched", |g, x| {
            let a = g.reshape(x, &[3, 1, 4])?;
            let b = g.constant(Tensor::from_fn(&[3, 4, 2], |i| (i as f64 * 0.3).cos()));
            let y = g.matmul(a, b)?;
            let at = g_perm(g, a)?;
            let z = g.matmul(a, at)?;
            let y = weighted(g, y)?;
            let z = weighted(g, z)?;
            g.add(y, z)
        }),
        ("sum_axis", |g, x| {
            let y = g.sum_axis(x, 0)?;
            weighted(g, y)
        }),
        ("mean_axis", |g, x| {
            let y = g.mean_axis(x, 1)?;
            weighted(g, y)
        }),
        ("mean_all", |g, x| {
            let s = g.square(x);
            Ok(g.mean_all(s))
        }),
        ("reshape", |g, x| {
            let y = g.reshape(x, &[2, 6])?;
            let y = g.square(y);
            weighted(g, y)
        }),
        ("permute", |g, x| {
            let y = g.reshape(x, &[3, 2, 2])?;
            let y = g.permute(y, &[2, 0, 1])?;
            let y = g.sin(y);
            weighted(g, y)
        }),
        ("concat", |g, x| {
            let s = g.square(x);
            let y = g.concat(&[x, s, x], 1)?;
            weighted(g, y)
        }),
        ("slice", |g, x| {
            let y = g.slice(x, 1, 1, 2)?;
            let y = g.exp(y);
            weighted(g, y)
        }),
        ("moving_average", |g, x| {
            let y = g.moving_average(x, 3)?;
            let y = g.square(y);
            weighted(g, y)
        }),
    ]
}

fn g_perm(g: &mut Graph<f64>, a: Var) -> Result<Var, Error> {
    g.permute(a, &[0, 2, 1])
}

#[test]
fn primitives_pass_gradient_check_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (name, f) in primitives() {
        let shape: &[usize] = &[3, 4];
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let x = rand_tensor(&mut rng, shape, -2.0, 2.0);
            let err = gradient_check(f, &x, 1e-5).unwrap();
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn atan2_origin_is_zero_with_zero_gradient() {
    let mut g = Graph::new();
    let y = g.leaf(&Tensor::scalar(0.0).into_param());
    let x = g.leaf(&Tensor::scalar(0.0).into_param());
    let p = g.atan2(y, x).unwrap();
    assert_eq!(g.item(p), 0.0);
    g.backward(p).unwrap();
    assert_eq!(g.grad(y).unwrap(), &[0.0]);
    assert_eq!(g.grad(x).unwrap(), &[0.0]);
}

#[test]
fn atan2_negative_axis_maps_to_pi() {
    let mut g = Graph::new();
    let y = g.constant(Tensor::scalar(-0.0));
    let x = g.constant(Tensor::scalar(-1.0));
    let p = g.atan2(y, x).unwrap();
    assert_eq!(g.item(p), std::f64::consts::PI);
}

#[test]
fn forward_is_bit_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let run = || {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let outs: Vec<f64> = primitives()
            .iter()
            .map(|(_, f)| g_item(&mut g, *f, v))
            .collect();
        outs
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn g_item(g: &mut Graph<f64>, f: Prim, v: Var) -> f64 {
    let y = f(g, v).unwrap();
    g.item(y)
}

#[test]
fn unreachable_params_get_zero_grad_written() {
    let mut p = Tensor::<f64>::zeros(&[2]).into_param();
    let mut g = Graph::new();
    let pv = g.leaf(&p);
    let x = g.leaf(&Tensor::scalar(2.0).into_param());
    let l = g.square(x);
    g.backward(l).unwrap();
    assert!(g.grad(pv).is_none());
    g.write_grad(pv, &mut p).unwrap();
    assert_eq!(p.grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn f32_graph_works() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(&Tensor::new(&[2], vec![1.0f32, -2.0]).unwrap().into_param());
    let y = g.pow_int(x, 3);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0f32, 12.0]);
}
