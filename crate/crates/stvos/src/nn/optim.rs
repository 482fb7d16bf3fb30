//! Optimizers operating on named parameter maps.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::params::ParamGroup;

/// Adaptive-moment optimizer with the usual bias correction.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over every trainable entry that has a gradient. Frozen
    /// groups are never touched.
    pub fn step(&mut self, group: &mut ParamGroup, grads: &BTreeMap<String, ArrayD<f64>>) {
        if group.frozen {
            return;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, entry) in group.entries.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let Some(grad) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            m.zip_mut_with(grad, |mm, &gg| *mm = self.beta1 * *mm + (1.0 - self.beta1) * gg);
            v.zip_mut_with(grad, |vv, &gg| {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gg * gg
            });
            ndarray::Zip::from(&mut entry.value)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &mm, &vv| {
                    let mhat = mm / bc1;
                    let vhat = vv / bc2;
                    *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

/// Stochastic gradient descent with classical momentum.
pub struct Sgd {
    pub lr: f64,
    momentum: f64,
    velocity: BTreeMap<String, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, group: &mut ParamGroup, grads: &BTreeMap<String, ArrayD<f64>>) {
        if group.frozen {
            return;
        }
        for (name, entry) in group.entries.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let Some(grad) = grads.get(name) else { continue };
            let vel = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            vel.zip_mut_with(grad, |vv, &gg| *vv = self.momentum * *vv + gg);
            entry.value.zip_mut_with(vel, |w, &vv| *w -= self.lr * vv);
        }
    }
}
