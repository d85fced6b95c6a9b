//! Adam with per-tensor moment state keyed by parameter name.

use super::model::ActorCritic;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update step. `filter` selects which tensors move (pre-training
    /// leaves the policy head untouched through it).
    pub fn step_filtered(
        &mut self,
        model: &mut ActorCritic,
        grads: &ActorCritic,
        filter: impl Fn(&str) -> bool,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let gtensors: HashMap<String, Vec<f64>> = grads
            .named_tensors()
            .into_iter()
            .map(|(n, _, d)| (n, d.to_vec()))
            .collect();
        for (name, data) in model.named_tensors_mut() {
            if !filter(&name) {
                continue;
            }
            let g = &gtensors[&name];
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub fn step(&mut self, model: &mut ActorCritic, grads: &ActorCritic) {
        self.step_filtered(model, grads, |_| true);
    }
}
