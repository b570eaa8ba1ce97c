use crate::error::{Result, TensorError};
use crate::param::{Grads, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Moments as named tensors, for checkpointing.
    pub fn to_tensors(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * store.len());
        for (id, name, t) in store.iter() {
            let i = id.index();
            for (tag, buf) in [("m", &self.m[i]), ("v", &self.v[i])] {
                let tensor = Tensor::new(t.shape().to_vec(), buf.clone())
                    .expect("moment buffers match parameter shapes");
                out.push((format!("{tag}/{name}"), tensor));
            }
        }
        out
    }

    pub fn from_tensors(
        store: &ParamStore,
        step: u64,
        lookup: impl Fn(&str) -> Option<Tensor>,
    ) -> Result<Self> {
        let mut state = Self::new(store);
        state.step = step;
        for (id, name, t) in store.iter() {
            for (tag, dst) in [("m", &mut state.m), ("v", &mut state.v)] {
                let key = format!("{tag}/{name}");
                let src = lookup(&key)
                    .ok_or_else(|| TensorError::Checkpoint(format!("missing moment `{key}`")))?;
                if src.shape() != t.shape() {
                    return Err(TensorError::Checkpoint(format!("moment `{key}` has wrong shape")));
                }
                dst[id.index()] = src.into_data();
            }
        }
        Ok(state)
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: OptimizerState,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        Self {
            config,
            state: OptimizerState::new(store),
        }
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        if grads.len() != store.len() {
            return Err(TensorError::invalid("AdamW::step", "gradients do not match store"));
        }
        if grads.has_non_finite() {
            return Err(TensorError::NonFinite("gradients".into()));
        }
        let c = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * p[j]);
            }
        }
        Ok(())
    }
}
