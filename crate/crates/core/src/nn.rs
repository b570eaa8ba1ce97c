//! Parameterised layers on top of the tape.

use bipo_tensor::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

use crate::error::Result;

fn register(store: &mut ParamStore, name: String, value: Tensor) -> Result<ParamId> {
    Ok(store.add(name, value)?)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Weights `N(0, 1/in)`, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Result<Self> {
        let std = 1.0 / (d_in as f64).sqrt();
        Ok(Self {
            w: register(store, format!("{name}.w"), Tensor::randn(vec![d_in, d_out], std, rng))?,
            b: register(store, format!("{name}.b"), Tensor::zeros(vec![d_out]))?,
        })
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            w: register(store, format!("{name}.w"), Tensor::zeros(vec![d_in, d_out]))?,
            b: register(store, format!("{name}.b"), Tensor::zeros(vec![d_out]))?,
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(tape.linear(x, w, b)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let std = (2.0 / (kernel * c_in) as f64).sqrt();
        Ok(Self {
            w: register(store, format!("{name}.w"), Tensor::randn(vec![kernel, c_in, c_out], std, rng))?,
            b: register(store, format!("{name}.b"), Tensor::zeros(vec![c_out]))?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(tape.conv1d(x, w, b, self.stride, self.pad)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            g: register(store, format!("{name}.g"), Tensor::full(vec![dim], 1.0))?,
            b: register(store, format!("{name}.b"), Tensor::zeros(vec![dim]))?,
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.g);
        let b = tape.param(store, self.b);
        Ok(tape.layer_norm(x, g, b)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, n: usize, dim: usize, std: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            table: register(store, name.to_string(), Tensor::randn(vec![n, dim], std, rng))?,
        })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let t = tape.param(store, self.table);
        Ok(tape.gather(t, ids)?)
    }
}

/// Linear warmup followed by cosine decay to 10% of `base`.
pub fn lr_at(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    let warm = if warmup == 0 { 1.0 } else { ((step + 1) as f64 / warmup as f64).min(1.0) };
    let frac = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
    base * warm * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * frac).cos()))
}
