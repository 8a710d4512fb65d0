//! Organ-based cross-modal fusion: per-organ attention of image grids over
//! their description embeddings, and a coarse fusion of the summed organ
//! grid with all five descriptions.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::corpus::{encode_words, Vocabulary, PAD};
use crate::error::{OridError, Result};
use crate::layers::{Attended, Embedding, MultiHeadAttention};
use crate::organ::{OrganId, PerOrgan};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::tensor::{FeatureGrid, Mat};

/// Total length of the concatenated descriptions.
pub const COARSE_DESC_LEN: usize = 224;

/// Per-organ `L_o x d` description embeddings.
pub type DescFeatures = PerOrgan<Var>;

/// Fine `x^C_o` and coarse `x^C_T` grids.
#[derive(Clone, Debug)]
pub struct CrossModalFeatures {
    pub fine: PerOrgan<Var>,
    pub coarse: Var,
}

/// Description ids padded with PAD or truncated to the organ's fixed length.
pub fn description_tokens(text: &str, organ: OrganId, vocab: &Vocabulary) -> Vec<usize> {
    let mut ids = encode_words(text, vocab);
    ids.resize(organ.description_length(), PAD);
    ids
}

#[derive(Clone, Debug)]
pub struct Ocf {
    pub embed: Embedding,
    /// Learned positional tokens over the concatenated descriptions.
    pub positional: ParamId,
    /// One learned token per organ, broadcast over that organ's span.
    pub organ_tokens: ParamId,
    pub fine: PerOrgan<MultiHeadAttention>,
    pub coarse: MultiHeadAttention,
}

impl Ocf {
    pub fn new(
        store: &mut ParamStore,
        vocab_size: usize,
        dim: usize,
        heads: usize,
        share_fine: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Other;
        let embed = Embedding::new(store, "ocf.desc_embed", g, vocab_size, dim, rng);
        let positional = store.add("ocf.positional", g, COARSE_DESC_LEN, dim, Init::Uniform(0.1), rng);
        let organ_tokens = store.add("ocf.organ_tokens", g, OrganId::COUNT, dim, Init::Uniform(0.1), rng);
        let fine = if share_fine {
            let shared = MultiHeadAttention::new(store, "ocf.fine", g, dim, heads, rng)?;
            PerOrgan::from_fn(|_| shared.clone())
        } else {
            PerOrgan::try_from_fn(|o| MultiHeadAttention::new(store, &format!("ocf.fine.{o}"), g, dim, heads, rng))?
        };
        let coarse = MultiHeadAttention::new(store, "ocf.coarse", g, dim, heads, rng)?;
        Ok(Ocf { embed, positional, organ_tokens, fine, coarse })
    }

    /// Embeds each organ's ids after fitting them to the organ's fixed length.
    pub fn embed_descriptions(&self, g: &mut Graph, tokens: &PerOrgan<Vec<usize>>) -> Result<DescFeatures> {
        PerOrgan::try_from_fn(|organ| {
            let mut ids = tokens[organ].clone();
            ids.resize(organ.description_length(), PAD);
            self.embed.forward(g, &ids)
        })
    }

    /// `concat(x^D_o) + T_p + T_o`, 224 rows.
    pub fn coarse_desc_feature(&self, g: &mut Graph, desc: &DescFeatures) -> Var {
        let parts: Vec<Var> = desc.values().copied().collect();
        let cat = g.concat_rows(&parts);
        let pos = g.param(self.positional);
        let with_pos = g.add(cat, pos);
        let span: Vec<Option<usize>> =
            OrganId::ALL.iter().flat_map(|o| std::iter::repeat_n(Some(o.index()), o.description_length())).collect();
        let organ_tokens = g.param(self.organ_tokens);
        let organ_rows = g.gather_rows(organ_tokens, Rc::new(span), 1);
        g.add(with_pos, organ_rows)
    }

    /// Fine attention of one organ grid over its own description.
    pub fn attend_fine(&self, g: &mut Graph, organ: OrganId, query: Var, desc: Var, tokens: &[usize]) -> Result<Attended> {
        let mut ids = tokens.to_vec();
        ids.resize(organ.description_length(), PAD);
        let mask = key_padding_mask(&ids, g.shape(query).0);
        self.fine[organ].forward(g, query, desc, Some(&mask))
    }

    /// Coarse attention of the summed grid over all five descriptions.
    pub fn attend_coarse(&self, g: &mut Graph, query: Var, desc: &DescFeatures, tokens: &PerOrgan<Vec<usize>>) -> Result<Attended> {
        let ids: Vec<usize> = OrganId::ALL
            .iter()
            .flat_map(|&o| {
                let mut t = tokens[o].clone();
                t.resize(o.description_length(), PAD);
                t
            })
            .collect();
        let mask = key_padding_mask(&ids, g.shape(query).0);
        let d_t = self.coarse_desc_feature(g, desc);
        self.coarse.forward(g, query, d_t, Some(&mask))
    }

    /// Fine and coarse cross-attention; attention weights are returned for inspection.
    pub fn fuse(
        &self,
        g: &mut Graph,
        organ_feats: &PerOrgan<Var>,
        desc: &DescFeatures,
        tokens: &PerOrgan<Vec<usize>>,
    ) -> Result<(CrossModalFeatures, Vec<Var>)> {
        let mut weights = Vec::new();
        let fine = PerOrgan::try_from_fn(|o| {
            let a = self.attend_fine(g, o, organ_feats[o], desc[o], &tokens[o])?;
            weights.extend(a.weights);
            Ok::<_, OridError>(a.output)
        })?;
        let x_t = coarse_image_feature_graph(g, organ_feats)?;
        let a = self.attend_coarse(g, x_t, desc, tokens)?;
        weights.extend(a.weights);
        Ok((CrossModalFeatures { fine, coarse: a.output }, weights))
    }
}

/// `queries x keys` mask that blocks PAD keys; an all-PAD description leaves every key open.
pub fn key_padding_mask(tokens: &[usize], queries: usize) -> Vec<bool> {
    let all_pad = tokens.iter().all(|&t| t == PAD);
    let row: Vec<bool> = tokens.iter().map(|&t| all_pad || t != PAD).collect();
    row.repeat(queries)
}

/// Positionwise sum of the organ grids.
pub fn coarse_image_feature_graph(g: &mut Graph, organ_feats: &PerOrgan<Var>) -> Result<Var> {
    let shape = g.shape(organ_feats[OrganId::Lung]);
    let mut acc = organ_feats[OrganId::Lung];
    for organ in &OrganId::ALL[1..] {
        let x = organ_feats[*organ];
        if g.shape(x) != shape {
            return Err(OridError::Shape(format!("{organ} grid {:?} vs lung grid {shape:?}", g.shape(x))));
        }
        acc = g.add(acc, x);
    }
    Ok(acc)
}

/// Value-level organ sum.
pub fn coarse_image_feature(organ_feats: &PerOrgan<FeatureGrid>) -> Result<FeatureGrid> {
    let mut acc = organ_feats[OrganId::Lung].clone();
    for organ in &OrganId::ALL[1..] {
        let x = &organ_feats[*organ];
        if x.shape() != acc.shape() {
            return Err(OridError::Shape(format!("{organ} grid {:?} vs lung grid {:?}", x.shape(), acc.shape())));
        }
        acc.add_assign(x);
    }
    Ok(acc)
}

/// Value-level coarse description feature from explicit embeddings.
pub fn coarse_desc_feature(desc: &PerOrgan<Mat>, positional: &Mat, organ_tokens: &Mat) -> Result<Mat> {
    let dim = positional.cols();
    if positional.rows() != COARSE_DESC_LEN || organ_tokens.shape() != (OrganId::COUNT, dim) {
        return Err(OridError::Shape("positional must be 224 x d and organ tokens 5 x d".into()));
    }
    let mut out = Mat::zeros(COARSE_DESC_LEN, dim);
    let mut row = 0;
    for (organ, m) in desc.iter() {
        if m.shape() != (organ.description_length(), dim) {
            return Err(OridError::Shape(format!(
                "{organ} description is {:?}, expected ({}, {dim})",
                m.shape(),
                organ.description_length()
            )));
        }
        for r in 0..m.rows() {
            let out_row = out.row_mut(row);
            for (k, x) in out_row.iter_mut().enumerate() {
                *x = m.get(r, k) + positional.get(row, k) + organ_tokens.get(organ.index(), k);
            }
            row += 1;
        }
    }
    Ok(out)
}
