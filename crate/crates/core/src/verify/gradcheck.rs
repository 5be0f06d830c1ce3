use crate::autodiff::{Tape, Var};
use crate::data::Rng;
use crate::error::{MptError, Result};
use crate::tensor::{DType, Element, Tensor};

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|)` over all inputs.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradReport {
    /// Tolerance for the element type: 1e-3 for f32, 1e-5 for f64.
    pub fn tolerance(dtype: DType) -> f64 {
        match dtype {
            DType::F32 => 1e-3,
            DType::F64 => 1e-5,
        }
    }

    pub fn passes(&self, dtype: DType) -> bool {
        self.rel_err.is_finite() && self.rel_err <= Self::tolerance(dtype)
    }
}

fn base_step(dtype: DType) -> f64 {
    match dtype {
        DType::F32 => 1e-3,
        DType::F64 => 1e-5,
    }
}

/// Scalarizes `out` with a fixed random projection so every output element matters.
fn project<'t, T: Element>(tape: &'t Tape<T>, out: &Var<'t, T>, seed: u64) -> Result<Var<'t, T>> {
    if out.value().numel() == 1 {
        return out.reshape(vec![]);
    }
    let mut rng = Rng::new(seed);
    let r = Tensor::from_fn(out.shape().to_vec(), |_| T::from_f64c(rng.uniform_range(-1.0, 1.0)));
    Ok(out.mul(&tape.constant(r))?.sum())
}

fn eval<T: Element, F>(f: &F, inputs: &[Tensor<T>], seed: u64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let tape = Tape::no_grad();
    let vars: Vec<Var<'_, T>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    Ok(project(&tape, &out, seed)?.value().item().to_f64c())
}

/// Compares tape gradients of `f` with central differences at `inputs`.
///
/// The step for element `x` is `base · max(1, |x|)` with `base` 1e-3 (f32) or 1e-5 (f64).
/// Only the first `max_per_input` elements of each input are perturbed.
pub fn gradcheck<T: Element, F>(inputs: &[Tensor<T>], max_per_input: usize, f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let seed = 0x9e37_79b9;
    let tape = Tape::new();
    let vars: Vec<Var<'_, T>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let loss = project(&tape, &out, seed)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();
    drop(grads);

    let step = base_step(T::DTYPE);
    let (mut max_err, mut max_a, mut max_n, mut checked) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel().min(max_per_input) {
            let x = input.data()[j].to_f64c();
            let h = step * x.abs().max(1.0);
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[j] = T::from_f64c(x + h);
            let up = eval(&f, &shifted, seed)?;
            shifted[i].data_mut()[j] = T::from_f64c(x - h);
            let down = eval(&f, &shifted, seed)?;
            // the actual perturbation after rounding to T
            let span = T::from_f64c(x + h).to_f64c() - T::from_f64c(x - h).to_f64c();
            let numeric = (up - down) / span;
            let a = analytic[i].data()[j].to_f64c();
            if !numeric.is_finite() || !a.is_finite() {
                return Err(MptError::NonFinite(format!("gradcheck input {} element {}", i, j)));
            }
            max_err = max_err.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
            checked += 1;
        }
    }
    let scale = max_a.max(max_n);
    let rel_err = if scale == 0.0 { 0.0 } else { max_err / scale };
    Ok(GradReport {
        rel_err,
        max_abs_err: max_err,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_gradient() {
        let x = Tensor::<f64>::from_f64([3], &[0.3, -1.2, 2.0]).unwrap();
        let r = gradcheck(&[x], 16, |_, v| v[0].mul(&v[0])).unwrap();
        assert!(r.passes(DType::F64), "{:?}", r);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn detects_wrong_gradient() {
        // detach hides the dependence from the tape while the value still changes
        let x = Tensor::<f64>::from_f64([2], &[0.5, 1.5]).unwrap();
        let r = gradcheck(&[x], 16, |_, v| v[0].mul(&v[0].detach())).unwrap();
        assert!(!r.passes(DType::F64), "{:?}", r);
    }
}
