use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamWConfig {
    pub fn projection() -> Self {
        Self::default()
    }

    pub fn classifier() -> Self {
        AdamWConfig { lr: 5e-4, weight_decay: 1e-3, ..Self::default() }
    }

    pub fn validate(&self, group: &str) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.lr > 0.0) {
            bad.push(format!("{group}: learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            bad.push(format!("{group}: weight decay must be non-negative"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            bad.push(format!("{group}: betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            bad.push(format!("{group}: eps must be positive"));
        }
        bad
    }
}

/// One AdamW optimizer over a fixed parameter set.
#[derive(Clone, Debug)]
pub struct AdamW<T: Real> {
    pub name: String,
    pub config: AdamWConfig,
    ids: Vec<ParamId>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(name: impl Into<String>, config: AdamWConfig, ids: Vec<ParamId>, store: &ParamStore<T>) -> Self {
        let zeros = |id: &ParamId| vec![T::zero(); store.get(*id).numel()];
        AdamW {
            name: name.into(),
            config,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Decoupled decay `theta -= lr * wd * theta`, then the bias-corrected
    /// adaptive update `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for &id in &self.ids {
            let p = store.get(id);
            match p.grad() {
                None => return Err(Error::contract(format!("parameter {:?} is not trainable", p.name))),
                Some(g) if g.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::Numeric(format!("non-finite gradient in parameter {:?}", p.name)))
                }
                _ => {}
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (nb1, nb2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr_t, decay, eps) = (T::lit(lr), T::one() - T::lit(lr * c.weight_decay), T::lit(c.eps));
        for (k, &id) in self.ids.iter().enumerate() {
            let (value, grad) = store.value_and_grad_mut(id).expect("checked above");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + nb1 * g;
                v[i] = b2 * v[i] + nb2 * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                value[i] = value[i] * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients of `ids` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(store: &mut ParamStore<T>, ids: &[ParamId], max_norm: f64) -> f64 {
    let sq: f64 =
        ids.iter().filter_map(|&id| store.get(id).grad()).flat_map(|g| g.iter().map(|x| x.as_f64() * x.as_f64())).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for &id in ids {
            if let Some(g) = store.grad_mut(id) {
                g.iter_mut().for_each(|x| *x = *x * s);
            }
        }
    }
    norm
}

/// Checks that groups are disjoint and together cover exactly the
/// trainable parameters of `store`.
pub fn check_group_coverage<T: Real>(store: &ParamStore<T>, groups: &[&[ParamId]]) -> Result<()> {
    let mut owner = vec![0usize; store.len()];
    for ids in groups {
        for id in *ids {
            owner[id.index()] += 1;
        }
    }
    let mut bad = Vec::new();
    for (id, p) in store.iter() {
        match (p.requires_grad(), owner[id.index()]) {
            (true, 1) | (false, 0) => {}
            (true, 0) => bad.push(format!("{} is in no optimizer group", p.name)),
            (false, _) => bad.push(format!("{} is frozen but in an optimizer group", p.name)),
            (true, _) => bad.push(format!("{} is in several optimizer groups", p.name)),
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::contract(bad.join("; ")))
    }
}
