//! AdamW with decoupled weight decay, and the EMA weight shadow.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        // Constant 1e-4, no weight decay.
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Optimizer state: first/second moments aligned with a parameter list.
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, param_sizes: &[usize]) -> Self {
        AdamW {
            config,
            step_count: 0,
            m: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update over `(name, data, grad)` triples with an optional
    /// learning-rate override (warm-up). Parameters whose `grad` is `None`
    /// are skipped entirely, leaving their bytes untouched.
    pub fn step<'a, I>(&mut self, params: I, lr_override: Option<f64>) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut [T], Option<&'a [T]>)>,
        T: 'a,
    {
        self.step_count += 1;
        let lr = lr_override.unwrap_or(self.config.lr);
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bc1 = 1.0 - b1.powi(self.step_count as i32);
        let bc2 = 1.0 - b2.powi(self.step_count as i32);

        for (idx, (name, data, grad)) in params.into_iter().enumerate() {
            let Some(grad) = grad else { continue };
            if grad.len() != data.len() {
                return Err(Error::shape(format!(
                    "optimizer state mismatch for {name}: grad {} vs param {}",
                    grad.len(),
                    data.len()
                )));
            }
            if grad.iter().any(|g| !g.as_f64().is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient in parameter {name}")));
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..data.len() {
                let g = grad[i].as_f64();
                // decoupled decay first, then the adaptive update
                let mut w = data[i].as_f64();
                w -= lr * self.config.weight_decay * w;
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                w -= lr * mhat / (vhat.sqrt() + self.config.eps);
                data[i] = T::from_f64(w);
            }
        }
        Ok(())
    }
}

/// shadow <- decay * shadow + (1 - decay) * live
pub fn ema_update<T: Scalar>(shadow: &mut [T], live: &[T], decay: f64) -> Result<()> {
    if shadow.len() != live.len() {
        return Err(Error::shape(format!(
            "ema shapes differ: shadow {} vs live {}",
            shadow.len(),
            live.len()
        )));
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::config(format!("ema decay {decay} outside [0, 1)")));
    }
    let d = T::from_f64(decay);
    let omd = T::from_f64(1.0 - decay);
    for (s, &l) in shadow.iter_mut().zip(live) {
        *s = d * *s + omd * l;
    }
    Ok(())
}
