//! Point-wise embedding and moving-average trend/seasonal decomposition.
//!
//! Every time point of a univariate series is lifted to `d` channels by one
//! affine map shared across variates and time, then the embedded series is
//! split into a smooth trend (centered moving average over an
//! edge-replicated series) and the seasonal residual `x - trend`.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, Linear};
use crate::scalar::Scalar;

pub const DEFAULT_KERNEL: usize = 25;

/// Embedded representation of shape `(N, L, d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSeries<T> {
    pub values: Tensor<T>,
}

impl<T: Scalar> EmbeddedSeries<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::invalid("embedded_series", format!("expected (N, L, d), got {:?}", values.shape())));
        }
        if !values.all_finite() {
            return Err(Error::NonFinite("embedded_series"));
        }
        Ok(Self { values })
    }

    pub fn variates(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.values.numel() == 0
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionResult<T> {
    pub trend: Tensor<T>,
    pub seasonal: Tensor<T>,
    pub kernel: usize,
}

/// Shared affine lift `1 → d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub map: Linear<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, width: usize) -> Self {
        Self {
            map: Linear::new(rng, 1, width),
        }
    }

    pub fn from_parts(weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let d = weight.len();
        Ok(Self {
            map: Linear {
                weight: Tensor::new(&[1, d], weight)?.into_param(),
                bias: Tensor::new(&[d], bias)?.into_param(),
            },
        })
    }

    pub fn width(&self) -> usize {
        self.map.output_dim()
    }

    /// `(N, L) → (N, L, d)`
    pub fn forward(&self, g: &mut Graph<T>, b: &mut Bindings, prefix: &str, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid("embed", format!("expected (N, L), got {shape:?}")));
        }
        let col = g.reshape(x, &[shape[0], shape[1], 1])?;
        self.map.forward(g, b, prefix, col)
    }
}

/// Embeds a `(N, L)` batch of series.
pub fn embed<T: Scalar>(x: &Tensor<T>, embedding: &Embedding<T>) -> Result<EmbeddedSeries<T>> {
    if x.numel() == 0 || x.rank() != 2 {
        return Err(Error::invalid("embed", format!("expected non-empty (N, L), got {:?}", x.shape())));
    }
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let xv = g.constant(x.clone());
    let y = embedding.forward(&mut g, &mut b, "embed", xv)?;
    EmbeddedSeries::new(g.tensor(y))
}

pub fn validate_kernel(kernel: usize, len: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::invalid("decompose", format!("kernel {kernel} must be odd")));
    }
    if kernel > 2 * len - 1 {
        return Err(Error::invalid(
            "decompose",
            format!("kernel {kernel} exceeds 2L-1 = {} for L = {len}", 2 * len - 1),
        ));
    }
    Ok(())
}

/// Differentiable decomposition of `(N, L, d)` along the time axis.
/// Returns `(trend, seasonal)`.
pub fn decompose_var<T: Scalar>(g: &mut Graph<T>, x: Var, kernel: usize) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::invalid("decompose", format!("expected (N, L, d), got {shape:?}")));
    }
    validate_kernel(kernel, shape[1])?;
    let xt = g.permute(x, &[0, 2, 1])?;
    let avg = g.moving_average(xt, kernel)?;
    let trend = g.permute(avg, &[0, 2, 1])?;
    let seasonal = g.sub(x, trend)?;
    Ok((trend, seasonal))
}

pub fn moving_average_decompose<T: Scalar>(x: &EmbeddedSeries<T>, kernel: usize) -> Result<DecompositionResult<T>> {
    let mut g = Graph::new();
    let xv = g.constant(x.values.clone());
    let (trend, seasonal) = decompose_var(&mut g, xv, kernel)?;
    Ok(DecompositionResult {
        trend: g.tensor(trend),
        seasonal: g.tensor(seasonal),
        kernel,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn series(n: usize, l: usize, d: usize, data: Vec<f64>) -> EmbeddedSeries<f64> {
        EmbeddedSeries::new(Tensor::new(&[n, l, d], data).unwrap()).unwrap()
    }

    #[test]
    fn projection_onto_first_channel() {
        let emb = Embedding::from_parts(vec![1.0, 0.0, 0.0], vec![0.0; 3]).unwrap();
        let x = Tensor::new(&[1, 4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let e = embed(&x, &emb).unwrap();
        for t in 0..4 {
            assert_eq!(e.values.at(&[0, t, 0]), x.at(&[0, t]));
            assert_eq!(e.values.at(&[0, t, 1]), 0.0);
            assert_eq!(e.values.at(&[0, t, 2]), 0.0);
        }
    }

    #[test]
    fn zero_input_gives_bias() {
        let emb = Embedding::from_parts(vec![0.3, -2.0], vec![1.5, -0.25]).unwrap();
        let e = embed(&Tensor::zeros(&[2, 3]), &emb).unwrap();
        for n in 0..2 {
            for t in 0..3 {
                assert_eq!(e.values.at(&[n, t, 0]), 1.5);
                assert_eq!(e.values.at(&[n, t, 1]), -0.25);
            }
        }
    }

    #[test]
    fn embedding_matches_affine_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let emb = Embedding::<f64>::new(&mut rng, 4);
        let x = Tensor::from_fn(&[3, 7], |_| rng.gen_range(-3.0..3.0));
        let e = embed(&x, &emb).unwrap();
        let (w, bias) = (emb.map.weight.data(), emb.map.bias.data());
        for n in 0..3 {
            for t in 0..7 {
                for c in 0..4 {
                    let want = w[c] * x.at(&[n, t]) + bias[c];
                    assert!((e.values.at(&[n, t, c]) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn empty_input_is_error() {
        let emb = Embedding::<f64>::from_parts(vec![1.0], vec![0.0]).unwrap();
        assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
        assert!(embed(&Tensor::<f64>::zeros(&[3]), &emb).is_err());
    }

    #[test]
    fn hand_window_means() {
        let x = series(1, 5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = moving_average_decompose(&x, 3).unwrap();
        let want = [4.0 / 3.0, 2.0, 3.0, 4.0, 14.0 / 3.0];
        for (got, want) in r.trend.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_series() {
        let x = series(2, 6, 2, vec![3.25; 24]);
        let r = moving_average_decompose(&x, 5).unwrap();
        assert!(r.trend.data().iter().all(|&v| v == 3.25));
        assert!(r.seasonal.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = series(1, 4, 2, vec![1.0, -2.0, 0.5, 7.0, 3.0, 3.0, -1.0, 0.0]);
        let r = moving_average_decompose(&x, 1).unwrap();
        assert_eq!(r.trend.data(), x.values.data());
        assert!(r.seasonal.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bad_kernels() {
        let x = series(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(moving_average_decompose(&x, 2).is_err());
        assert!(moving_average_decompose(&x, 9).is_err());
        assert!(moving_average_decompose(&x, 7).is_ok());
    }

    #[test]
    fn integer_ramp_interior_is_exact() {
        let l = 40;
        let kernel = 9;
        let x = series(1, l, 1, (0..l).map(|t| t as f64).collect());
        let r = moving_average_decompose(&x, kernel).unwrap();
        let half = (kernel - 1) / 2;
        for t in half..l - half {
            assert_eq!(r.trend.data()[t], t as f64);
        }
    }

    proptest! {
        #[test]
        fn reconstruction(data in proptest::collection::vec(-100.0f64..100.0, 2 * 16 * 3), k in 0usize..8) {
            let kernel = 2 * k + 1;
            let x = series(2, 16, 3, data);
            let r = moving_average_decompose(&x, kernel).unwrap();
            for ((t, s), v) in r.trend.data().iter().zip(r.seasonal.data()).zip(x.values.data()) {
                prop_assert!((t + s - v).abs() <= 1e-12);
            }
        }

        #[test]
        fn shift_equivariance(data in proptest::collection::vec(-10.0f64..10.0, 12 * 2), c in -50.0f64..50.0) {
            let x = series(1, 12, 2, data.clone());
            let xs = series(1, 12, 2, data.iter().map(|v| v + c).collect());
            let r = moving_average_decompose(&x, 5).unwrap();
            let rs = moving_average_decompose(&xs, 5).unwrap();
            for i in 0..24 {
                prop_assert!((rs.trend.data()[i] - r.trend.data()[i] - c).abs() <= 1e-10);
                prop_assert!((rs.seasonal.data()[i] - r.seasonal.data()[i]).abs() <= 1e-10);
            }
        }

        #[test]
        fn ramp_interior(a in -5.0f64..5.0, slope in -3.0f64..3.0) {
            let l = 30;
            let kernel = 7;
            let x = series(1, l, 1, (0..l).map(|t| a + slope * t as f64).collect());
            let r = moving_average_decompose(&x, kernel).unwrap();
            for t in 3..l - 3 {
                prop_assert!((r.trend.data()[t] - x.values.data()[t]).abs() <= 1e-12);
            }
        }
    }
}
