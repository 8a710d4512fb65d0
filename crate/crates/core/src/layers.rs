//! Learnable building blocks shared by the vision, fusion and generation stages.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{OridError, Result};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, d_in, d_out, Init::Xavier, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), group, 1, d_out, Init::Zeros, rng));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), group, 1, dim, Init::Ones, rng),
            beta: store.add(format!("{name}.beta"), group, 1, dim, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.normalize_rows(x, Self::EPS);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub size: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        size: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let table = store.add(format!("{name}.table"), group, size, dim, Init::Uniform(0.5), rng);
        Embedding { table, size }
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.size) {
            return Err(OridError::TokenOutOfRange { id, size: self.size });
        }
        let table = g.param(self.table);
        Ok(g.gather_rows(table, Rc::new(ids.iter().map(|&i| Some(i)).collect()), 1))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), group, dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), group, hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Spatial convolution over a flattened `(H*W) x C` map.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub c_in: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = kernel * kernel * c_in;
        let weight = store.add(format!("{name}.weight"), group, fan_in, c_out, Init::Xavier, rng);
        let bias = store.add(format!("{name}.bias"), group, 1, c_out, Init::Zeros, rng);
        Conv2d { weight, bias, kernel, stride, padding: kernel / 2, c_in }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    pub fn forward(&self, g: &mut Graph, x: Var, h: usize, w: usize) -> (Var, usize, usize) {
        debug_assert_eq!(g.shape(x), (h * w, self.c_in));
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let mut index = Vec::with_capacity(oh * ow * k * k);
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * self.stride + ky) as isize - self.padding as isize;
                        let xx = (ox * self.stride + kx) as isize - self.padding as isize;
                        let inside = y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w;
                        index.push(inside.then(|| y as usize * w + xx as usize));
                    }
                }
            }
        }
        let cols = if k == 1 && self.stride == 1 { x } else { g.gather_rows(x, Rc::new(index), k * k) };
        let wv = g.param(self.weight);
        let y = g.matmul(cols, wv);
        let b = g.param(self.bias);
        (g.add_row(y, b), oh, ow)
    }
}

/// `(oh*ow) x (h*w)` matrix averaging each output cell's adaptive input window.
pub fn adaptive_pool_matrix(h: usize, w: usize, oh: usize, ow: usize) -> Mat {
    let window = |i: usize, n: usize, out: usize| (i * n / out, ((i + 1) * n).div_ceil(out));
    let mut m = Mat::zeros(oh * ow, h * w);
    for oy in 0..oh {
        let (y0, y1) = window(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1) = window(ox, w, ow);
            let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    m.set(oy * ow + ox, y * w + x, inv);
                }
            }
        }
    }
    m
}

/// Multi-head cross-attention `Softmax(Q K^T / sqrt(d_head)) V` with an output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct Attended {
    pub output: Var,
    /// One `query_len x key_len` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(OridError::InvalidArgument(format!("model dim {dim} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), group, dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), group, dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), group, dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), group, dim, dim, true, rng),
            heads,
            dim,
        })
    }

    /// `mask`, when given, is `query_len x key_len` with `false` marking blocked keys.
    pub fn forward(&self, g: &mut Graph, query: Var, keyvalue: Var, mask: Option<&[bool]>) -> Result<Attended> {
        let (_, dq) = g.shape(query);
        let (l, dk) = g.shape(keyvalue);
        if dq != self.dim || dk != self.dim {
            return Err(OridError::Shape(format!("attention expects dim {}, got query {dq} / key {dk}", self.dim)));
        }
        if l == 0 {
            return Err(OridError::InvalidArgument("attention over zero keys".into()));
        }
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, keyvalue);
        let v = self.v.forward(g, keyvalue);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh), g.slice_cols(v, h * dh, dh))
            };
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores, mask);
            contexts.push(g.matmul(attn, vh));
            weights.push(attn);
        }
        let ctx = if self.heads == 1 { contexts[0] } else { g.concat_cols(&contexts) };
        Ok(Attended { output: self.out.forward(g, ctx), weights })
    }
}
