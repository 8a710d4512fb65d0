//! Organ importance coefficients: the six cross-modal grids are pooled to
//! graph nodes, passed through graph attention over the prior adjacency and
//! mapped to one bounded weight per organ, which scales that organ's grid in
//! the final cross-modal feature.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::ds_graph::{AdjacencyMatrix, NODE_COUNT};
use crate::error::{OridError, Result};
use crate::layers::Linear;
use crate::ocf::CrossModalFeatures;
use crate::organ::{OrganId, PerOrgan};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::tensor::{FeatureGrid, Mat};

/// Six pooled node rows, `6 x d`, organs first and the coarse node last.
pub fn pool_nodes(g: &mut Graph, cm: &CrossModalFeatures) -> Var {
    let mut rows: Vec<Var> = cm.fine.values().map(|&v| g.mean_rows(v)).collect();
    rows.push(g.mean_rows(cm.coarse));
    g.concat_rows(&rows)
}

#[derive(Clone, Debug)]
pub struct GatHead {
    pub weight: ParamId,
    pub att_dst: ParamId,
    pub att_src: ParamId,
}

#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub bias: ParamId,
    pub dim: usize,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl GatLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(OridError::InvalidArgument(format!("node dim {dim} not divisible by {heads} heads")));
        }
        let dh = dim / heads;
        let g = ParamGroup::Other;
        let heads = (0..heads)
            .map(|h| GatHead {
                weight: store.add(format!("{name}.head{h}.weight"), g, dim, dh, Init::Xavier, rng),
                att_dst: store.add(format!("{name}.head{h}.att_dst"), g, dh, 1, Init::Xavier, rng),
                att_src: store.add(format!("{name}.head{h}.att_src"), g, dh, 1, Init::Xavier, rng),
            })
            .collect();
        let bias = store.add(format!("{name}.bias"), g, 1, dim, Init::Zeros, rng);
        Ok(GatLayer { heads, bias, dim })
    }

    /// Returns the updated `6 x d` nodes and one `6 x 6` attention matrix per head.
    pub fn forward(&self, g: &mut Graph, nodes: Var, adj: &AdjacencyMatrix) -> (Var, Vec<Var>) {
        let n = g.shape(nodes).0;
        let mask = adj.mask();
        let ones_col = g.constant(Mat::filled(n, 1, 1.0));
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut attns = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let w = g.param(head.weight);
            let wh = g.matmul(nodes, w);
            let a_dst = g.param(head.att_dst);
            let a_src = g.param(head.att_src);
            let s_dst = g.matmul(wh, a_dst);
            let s_src = g.matmul(wh, a_src);
            // scores[v, u] = s_dst[v] + s_src[u]
            let dst_b = g.matmul_bt(s_dst, ones_col);
            let src_b = g.matmul_bt(ones_col, s_src);
            let scores = g.add(dst_b, src_b);
            let scores = g.leaky_relu(scores, LEAKY_SLOPE);
            let attn = g.softmax_rows(scores, Some(&mask));
            outs.push(g.matmul(attn, wh));
            attns.push(attn);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        let b = g.param(self.bias);
        let y = g.add_row(cat, b);
        (g.elu(y), attns)
    }
}

/// Graph attention stack plus the shared coefficient perceptron.
#[derive(Clone, Debug)]
pub struct Oica {
    pub layers: Vec<GatLayer>,
    pub hidden: Linear,
    pub output: Linear,
}

impl Oica {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        heads: usize,
        depth: usize,
        mlp_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let layers =
            (0..depth).map(|k| GatLayer::new(store, &format!("oica.gat{k}"), dim, heads, rng)).collect::<Result<_>>()?;
        let g = ParamGroup::Other;
        Ok(Oica {
            layers,
            hidden: Linear::new(store, "oica.mlp.hidden", g, dim, mlp_hidden, true, rng),
            output: Linear::new(store, "oica.mlp.output", g, mlp_hidden, 1, true, rng),
        })
    }

    /// Runs the graph layers; returns final nodes and every layer's per-head attention.
    pub fn propagate(&self, g: &mut Graph, nodes: Var, adj: &AdjacencyMatrix) -> (Var, Vec<Vec<Var>>) {
        let mut h = nodes;
        let mut attn = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, a) = layer.forward(g, h, adj);
            h = next;
            attn.push(a);
        }
        (h, attn)
    }

    /// `5 x 1` coefficients in (0, 1) from the organ rows of the final nodes.
    pub fn importance_coefficients(&self, g: &mut Graph, nodes_out: Var) -> Var {
        debug_assert_eq!(g.shape(nodes_out).0, NODE_COUNT);
        let organs = g.slice_rows(nodes_out, 0, OrganId::COUNT);
        let h = self.hidden.forward(g, organs);
        let h = g.gelu(h);
        let s = self.output.forward(g, h);
        g.sigmoid(s)
    }

    /// Pool, propagate and score in one pass.
    pub fn forward(&self, g: &mut Graph, cm: &CrossModalFeatures, adj: &AdjacencyMatrix) -> (Var, Vec<Vec<Var>>) {
        let nodes = pool_nodes(g, cm);
        let (out, attn) = self.propagate(g, nodes, adj);
        (self.importance_coefficients(g, out), attn)
    }
}

/// `x^C_T + sum_o alpha_o x^C_o`; `alpha` is `5 x 1`, or all ones when `None`.
pub fn assemble_cross_modal(g: &mut Graph, cm: &CrossModalFeatures, alpha: Option<Var>) -> Result<Var> {
    let shape = g.shape(cm.coarse);
    let mut acc = cm.coarse;
    for (organ, &x) in cm.fine.iter() {
        if g.shape(x) != shape {
            return Err(OridError::Shape(format!("{organ} grid {:?} vs coarse grid {shape:?}", g.shape(x))));
        }
        let term = match alpha {
            Some(a) => {
                let a_o = g.slice_rows(a, organ.index(), 1);
                g.mul_scalar(x, a_o)
            }
            None => x,
        };
        acc = g.add(acc, term);
    }
    Ok(acc)
}

/// Value-level `(x^C_F, x_I)` with `x^C_F = x^C_T + sum_o alpha_o x^C_o` and `x_I = x^C_F + x^{I_r}_F`.
pub fn assemble_final(
    fine: &PerOrgan<FeatureGrid>,
    coarse: &FeatureGrid,
    alpha: &[f64; 5],
    raw_final: &FeatureGrid,
) -> Result<(FeatureGrid, FeatureGrid)> {
    if raw_final.shape() != coarse.shape() {
        return Err(OridError::Shape(format!("raw final {:?} vs coarse {:?}", raw_final.shape(), coarse.shape())));
    }
    let mut cf = coarse.clone();
    for (organ, x) in fine.iter() {
        if x.shape() != coarse.shape() {
            return Err(OridError::Shape(format!("{organ} grid {:?} vs coarse {:?}", x.shape(), coarse.shape())));
        }
        let a = alpha[organ.index()];
        for (o, v) in cf.data_mut().iter_mut().zip(x.data()) {
            *o += a * v;
        }
    }
    let xi = cf.zip_map(raw_final, |a, b| a + b);
    Ok((cf, xi))
}
