//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use indexmap::IndexMap;

use crate::error::{MptError, Result};
use crate::network::ParameterStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct AdamW<T: Element = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: IndexMap<String, Tensor<T>>,
    v: IndexMap<String, Tensor<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.v.get(name)
    }

    /// One update of every parameter in `params`; each needs a gradient.
    pub fn step(
        &mut self,
        params: &mut ParameterStore<T>,
        grads: &IndexMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        for (name, p) in params.iter() {
            match grads.get(name) {
                None => return Err(MptError::MissingGradient(name.to_string())),
                Some(g) if g.shape() != p.shape() => {
                    return Err(MptError::shape(
                        "adamw",
                        format!("{}: gradient {:?} vs parameter {:?}", name, g.shape(), p.shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
        let (one, eps) = (T::one(), T::from_f64c(self.eps));
        let decay = T::from_f64c(1.0 - lr * self.weight_decay);
        let (rc1, rc2) = (T::from_f64c(1.0 / bc1), T::from_f64c(1.0 / bc2));
        let lr_t = T::from_f64c(lr);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for (((theta, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi * rc1;
                let vhat = *vi * rc2;
                *theta = *theta * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        params.meta.step = self.step;
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling. A non-positive `max_norm` leaves them untouched.
pub fn clip_grad_norm<T: Element>(grads: &mut IndexMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v.to_f64c() * v.to_f64c())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = T::from_f64c(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// `lr_min + (lr_max − lr_min)(1 + cos(π·step/total))/2`.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(MptError::invalid("cosine_lr", "total steps must be positive"));
    }
    if step > total {
        return Err(MptError::invalid("cosine_lr", format!("step {} beyond total {}", step, total)));
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    Ok(lr_min + (lr_max - lr_min) * (1.0 + phase.cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = IndexMap::new();
        g.insert("a".to_string(), Tensor::<f64>::full([2], 3.0));
        g.insert("b".to_string(), Tensor::<f64>::full([1], 4.0));
        let before = clip_grad_norm(&mut g, 0.0);
        assert!((before - 34f64.sqrt()).abs() < 1e-12);
        assert_eq!(g["b"].data(), &[4.0]);
        assert!((clip_grad_norm(&mut g, 2.0) - before).abs() < 1e-12);
        let after = clip_grad_norm(&mut g, 0.0);
        assert!((after - 2.0).abs() < 1e-12);
        assert!((g["a"].data()[0] / g["b"].data()[0] - 0.75).abs() < 1e-12);
    }

    fn store(v: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::full([2], v)).unwrap();
        s
    }

    fn grads(v: f64) -> IndexMap<String, Tensor<f64>> {
        IndexMap::from([("w".to_string(), Tensor::full([2], v))])
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut s = store(0.7);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut s, &grads(0.0), 0.1).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.7, 0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(1.0);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut s, &grads(1.0), 0.1).unwrap();
        for &x in s.get("w").unwrap().data() {
            assert!((x - 0.9).abs() < 1e-6);
        }
    }

    #[test]
    fn decay_is_decoupled() {
        let mut s = store(2.0);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 1e-4);
        opt.step(&mut s, &grads(0.0), 0.1).unwrap();
        for &x in s.get("w").unwrap().data() {
            assert!((x - 2.0 * (1.0 - 1e-5)).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store(1.0);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        let err = opt.step(&mut s, &IndexMap::new(), 0.1).unwrap_err();
        assert!(matches!(err, MptError::MissingGradient(_)));
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 1e-6).unwrap(), 1e-4);
        assert!((cosine_lr(100, 100, 1e-4, 1e-6).unwrap() - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1e-4, 1e-6).unwrap() - (1e-4 + 1e-6) / 2.0).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 1.0, 0.0).is_err());
    }
}
