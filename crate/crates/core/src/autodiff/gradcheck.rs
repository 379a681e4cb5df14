use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient check of a scalar-valued tensor function.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|)` over the
/// coordinates of `x`.
pub fn gradient_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if eps == T::zero() || !eps.is_finite() {
        return Err(Error::invalid("gradient_check", "step size must be finite and nonzero"));
    }
    let mut param = x.clone();
    param.set_requires_grad(true);

    let mut g = Graph::new();
    let xv = g.leaf(&param);
    let y = f(&mut g, xv)?;
    if !g.item(y).is_finite() {
        return Err(Error::NonFinite("gradient_check"));
    }
    g.backward(y)?;
    let analytic: Vec<T> = match g.grad(xv) {
        Some(gr) => gr.to_vec(),
        None => vec![T::zero(); x.numel()],
    };

    let eval = |data: &[T]| -> Result<T> {
        let t = Tensor::new(x.shape(), data.to_vec())?;
        let mut g = Graph::new();
        let v = g.constant(t);
        let y = f(&mut g, v)?;
        Ok(g.item(y))
    };
    max_relative_error(eval, x.data(), &analytic, eps)
}

/// Compares `analytic` against central differences of `eval` around `x0`.
pub fn max_relative_error<T, F>(mut eval: F, x0: &[T], analytic: &[T], eps: T) -> Result<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    if eps == T::zero() {
        return Err(Error::invalid("gradient_check", "step size must be nonzero"));
    }
    let mut x = x0.to_vec();
    let mut worst = T::zero();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = eval(&x)?;
        x[i] = orig - eps;
        let fm = eval(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("gradient_check"));
        }
        let numeric = (fp - fm) / (eps + eps);
        let err = (analytic[i] - numeric).abs() / T::one().max(analytic[i].abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
