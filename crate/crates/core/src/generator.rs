//! Transformer encoder-decoder over the fused image grid, with teacher-forced
//! training losses and cached incremental decoding for beam search.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{log_softmax_at, Graph, Var};
use crate::corpus::{TokenSeq, BOS, EOS, PAD};
use crate::error::{OridError, Result};
use crate::layers::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// Encoder output `x^_I` (`P x d`) and its positionwise mean (`1 x d`).
#[derive(Clone, Copy, Debug)]
pub struct EncodedImage {
    pub states: Var,
    pub pooled: Var,
}

/// Per-sample training losses.
#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub total: Var,
    pub ce: Var,
    pub cs: Var,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub enc_pos: ParamId,
    pub enc_layers: Vec<EncoderLayer>,
    pub enc_ln: LayerNorm,
    pub embed: Embedding,
    pub dec_pos: ParamId,
    pub dec_layers: Vec<DecoderLayer>,
    pub dec_ln: LayerNorm,
    pub out: Linear,
    pub vocab_size: usize,
    pub max_len: usize,
}

pub struct GeneratorDims {
    pub positions: usize,
    pub dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_hidden: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Generator {
    pub fn new(store: &mut ParamStore, dims: &GeneratorDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let g = ParamGroup::Other;
        let d = dims.dim;
        let enc_layers = (0..dims.enc_layers)
            .map(|i| {
                let n = format!("gen.enc{i}");
                Ok(EncoderLayer {
                    ln_attn: LayerNorm::new(store, &format!("{n}.ln_attn"), g, d, rng),
                    attn: MultiHeadAttention::new(store, &format!("{n}.attn"), g, d, dims.heads, rng)?,
                    ln_ff: LayerNorm::new(store, &format!("{n}.ln_ff"), g, d, rng),
                    ff: FeedForward::new(store, &format!("{n}.ff"), g, d, dims.ff_hidden, rng),
                })
            })
            .collect::<Result<_>>()?;
        let dec_layers = (0..dims.dec_layers)
            .map(|i| {
                let n = format!("gen.dec{i}");
                Ok(DecoderLayer {
                    ln_self: LayerNorm::new(store, &format!("{n}.ln_self"), g, d, rng),
                    self_attn: MultiHeadAttention::new(store, &format!("{n}.self_attn"), g, d, dims.heads, rng)?,
                    ln_cross: LayerNorm::new(store, &format!("{n}.ln_cross"), g, d, rng),
                    cross_attn: MultiHeadAttention::new(store, &format!("{n}.cross_attn"), g, d, dims.heads, rng)?,
                    ln_ff: LayerNorm::new(store, &format!("{n}.ln_ff"), g, d, rng),
                    ff: FeedForward::new(store, &format!("{n}.ff"), g, d, dims.ff_hidden, rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Generator {
            enc_pos: store.add("gen.enc_pos", g, dims.positions, d, Init::Uniform(0.1), rng),
            enc_layers,
            enc_ln: LayerNorm::new(store, "gen.enc_ln", g, d, rng),
            embed: Embedding::new(store, "gen.embed", g, dims.vocab_size, d, rng),
            dec_pos: store.add("gen.dec_pos", g, dims.max_len, d, Init::Uniform(0.1), rng),
            dec_layers,
            dec_ln: LayerNorm::new(store, "gen.dec_ln", g, d, rng),
            out: Linear::new(store, "gen.out", g, d, dims.vocab_size, true, rng),
            vocab_size: dims.vocab_size,
            max_len: dims.max_len,
        })
    }

    pub fn encode(&self, g: &mut Graph, x_i: Var) -> Result<EncodedImage> {
        let pos = g.param(self.enc_pos);
        if g.shape(pos) != g.shape(x_i) {
            return Err(OridError::Shape(format!("encoder expects {:?}, got {:?}", g.shape(pos), g.shape(x_i))));
        }
        let mut x = g.add(x_i, pos);
        for layer in &self.enc_layers {
            let h = layer.ln_attn.forward(g, x);
            let a = layer.attn.forward(g, h, h, None)?.output;
            x = g.add(x, a);
            let h = layer.ln_ff.forward(g, x);
            let f = layer.ff.forward(g, h);
            x = g.add(x, f);
        }
        let states = self.enc_ln.forward(g, x);
        let pooled = g.mean_rows(states);
        Ok(EncodedImage { states, pooled })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.first() != Some(&BOS) {
            return Err(OridError::MissingBos);
        }
        if tokens.len() > self.max_len {
            return Err(OridError::InvalidArgument(format!("sequence of {} exceeds max_len {}", tokens.len(), self.max_len)));
        }
        Ok(())
    }

    /// `T x |V|` logits; row `t` sees only `tokens[..=t]` and the image.
    pub fn decode_teacher_forced(&self, g: &mut Graph, enc: &EncodedImage, tokens: &[usize]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let emb = self.embed.forward(g, tokens)?;
        let pos_all = g.param(self.dec_pos);
        let pos = g.slice_rows(pos_all, 0, t);
        let mut x = g.add(emb, pos);
        let causal: Vec<bool> = (0..t * t).map(|i| i % t <= i / t).collect();
        for layer in &self.dec_layers {
            let h = layer.ln_self.forward(g, x);
            let a = layer.self_attn.forward(g, h, h, Some(&causal))?.output;
            x = g.add(x, a);
            let h = layer.ln_cross.forward(g, x);
            let c = layer.cross_attn.forward(g, h, enc.states, None)?.output;
            x = g.add(x, c);
            let h = layer.ln_ff.forward(g, x);
            let f = layer.ff.forward(g, h);
            x = g.add(x, f);
        }
        let h = self.dec_ln.forward(g, x);
        Ok(self.out.forward(g, h))
    }

    /// Mean of the report's token embeddings over non-PAD positions, `1 x d`.
    pub fn target_embedding(&self, g: &mut Graph, target: &[usize]) -> Result<Var> {
        let ids: Vec<usize> = target.iter().copied().filter(|&t| t != PAD).collect();
        if ids.is_empty() {
            return Err(OridError::DegenerateEmbedding);
        }
        let emb = self.embed.forward(g, &ids)?;
        Ok(g.mean_rows(emb))
    }

    /// Teacher-forced `L_CE + beta * L_CS` for one padded target sequence.
    pub fn total_loss(&self, g: &mut Graph, enc: &EncodedImage, target: &[usize], beta: f64) -> Result<Losses> {
        let len = effective_len(target);
        if len < 2 {
            return Err(OridError::InvalidArgument("target needs BOS and at least one more token".into()));
        }
        let logits = self.decode_teacher_forced(g, enc, &target[..len - 1])?;
        let targets: Vec<Option<usize>> = target[1..len].iter().map(|&t| (t != PAD).then_some(t)).collect();
        let ce = g.cross_entropy(logits, Rc::new(targets));
        let temb = self.target_embedding(g, &target[..len])?;
        let cs = consistency_loss(g, enc.pooled, temb)?;
        let scaled = g.scale(cs, beta);
        let total = g.add(ce, scaled);
        Ok(Losses { total, ce, cs })
    }
}

/// Length up to and including the first EOS, or up to the first PAD.
pub fn effective_len(target: &[usize]) -> usize {
    match target.iter().position(|&t| t == EOS || t == PAD) {
        Some(i) if target[i] == EOS => i + 1,
        Some(i) => i,
        None => target.len(),
    }
}

/// `1 - cos(a, b)`.
pub fn consistency_loss(g: &mut Graph, pooled: Var, target_emb: Var) -> Result<Var> {
    let c = g.cosine(pooled, target_emb)?;
    let neg = g.scale(c, -1.0);
    Ok(g.add_const(neg, 1.0))
}

fn linear_v(store: &ParamStore, l: &Linear, x: &Mat) -> Mat {
    let mut y = x.matmul(store.value(l.weight));
    if let Some(b) = l.bias {
        let b = store.value(b);
        for r in 0..y.rows() {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
    }
    y
}

fn layer_norm_v(store: &ParamStore, ln: &LayerNorm, x: &Mat) -> Mat {
    let (gamma, beta) = (store.value(ln.gamma), store.value(ln.beta));
    let cols = x.cols() as f64;
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / cols;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
        let inv = 1.0 / (var + LayerNorm::EPS).sqrt();
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma.data()[k] + beta.data()[k];
        }
    }
    out
}

fn gelu_v(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x)).tanh())
}

fn ff_v(store: &ParamStore, ff: &FeedForward, x: &Mat) -> Mat {
    let h = linear_v(store, &ff.up, x).map(gelu_v);
    linear_v(store, &ff.down, &h)
}

/// Single-query attention over already projected keys and values.
fn attend_v(store: &ParamStore, m: &MultiHeadAttention, q_in: &Mat, keys: &Mat, values: &Mat) -> Mat {
    let q = linear_v(store, &m.q, q_in);
    let dh = m.dim / m.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Mat::zeros(1, m.dim);
    for h in 0..m.heads {
        let cols = h * dh..(h + 1) * dh;
        let scores: Vec<f64> = (0..keys.rows())
            .map(|j| q.row(0)[cols.clone()].iter().zip(&keys.row(j)[cols.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out = &mut ctx.row_mut(0)[cols.clone()];
        for (j, e) in exps.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&values.row(j)[cols.clone()]) {
                *o += e / z * v;
            }
        }
    }
    linear_v(store, &m.out, &ctx)
}

fn append_row(m: &mut Mat, row: &Mat) {
    let mut data = std::mem::replace(m, Mat::zeros(0, 0)).into_vec();
    data.extend_from_slice(row.data());
    *m = Mat::from_vec(data.len() / row.cols(), row.cols(), data).expect("row append");
}

/// Decoder prefix with per-layer self-attention key/value caches.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub prefix: TokenSeq,
    self_keys: Vec<Mat>,
    self_values: Vec<Mat>,
}

/// Encoder output prepared for repeated decoding steps.
pub struct InferenceContext<'a> {
    gen: &'a Generator,
    store: &'a ParamStore,
    cross_keys: Vec<Mat>,
    cross_values: Vec<Mat>,
}

impl<'a> InferenceContext<'a> {
    pub fn new(gen: &'a Generator, store: &'a ParamStore, enc_states: &Mat) -> Self {
        let cross_keys = gen.dec_layers.iter().map(|l| linear_v(store, &l.cross_attn.k, enc_states)).collect();
        let cross_values = gen.dec_layers.iter().map(|l| linear_v(store, &l.cross_attn.v, enc_states)).collect();
        InferenceContext { gen, store, cross_keys, cross_values }
    }

    pub fn start(&self) -> DecoderState {
        let d = self.gen.embed_dim(self.store);
        let n = self.gen.dec_layers.len();
        DecoderState { prefix: Vec::new(), self_keys: vec![Mat::zeros(0, d); n], self_values: vec![Mat::zeros(0, d); n] }
    }

    /// Appends `token` and returns next-token log-probabilities over the full vocabulary.
    pub fn step(&self, state: &mut DecoderState, token: usize) -> Result<Vec<f64>> {
        let (gen, store) = (self.gen, self.store);
        let t = state.prefix.len();
        if t == 0 && token != BOS {
            return Err(OridError::MissingBos);
        }
        if t >= gen.max_len {
            return Err(OridError::InvalidArgument(format!("decoder prefix exceeds max_len {}", gen.max_len)));
        }
        if token >= gen.vocab_size {
            return Err(OridError::TokenOutOfRange { id: token, size: gen.vocab_size });
        }
        let emb = store.value(gen.embed.table);
        let pos = store.value(gen.dec_pos);
        let d = emb.cols();
        let mut x = Mat::from_fn(1, d, |_, k| emb.get(token, k) + pos.get(t, k));
        for (i, layer) in gen.dec_layers.iter().enumerate() {
            let h = layer_norm_v(store, &layer.ln_self, &x);
            append_row(&mut state.self_keys[i], &linear_v(store, &layer.self_attn.k, &h));
            append_row(&mut state.self_values[i], &linear_v(store, &layer.self_attn.v, &h));
            let a = attend_v(store, &layer.self_attn, &h, &state.self_keys[i], &state.self_values[i]);
            x.add_assign(&a);
            let h = layer_norm_v(store, &layer.ln_cross, &x);
            let c = attend_v(store, &layer.cross_attn, &h, &self.cross_keys[i], &self.cross_values[i]);
            x.add_assign(&c);
            let h = layer_norm_v(store, &layer.ln_ff, &x);
            x.add_assign(&ff_v(store, &layer.ff, &h));
        }
        let h = layer_norm_v(store, &gen.dec_ln, &x);
        let logits = linear_v(store, &gen.out, &h);
        state.prefix.push(token);
        let row = logits.row(0);
        Ok((0..row.len()).map(|k| log_softmax_at(row, k)).collect())
    }
}

impl Generator {
    fn embed_dim(&self, store: &ParamStore) -> usize {
        store.value(self.embed.table).cols()
    }
}

/// A finished decoding hypothesis; `tokens` excludes BOS and includes EOS when emitted.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: TokenSeq,
    pub logprob: f64,
}

impl Hypothesis {
    /// Length-normalized log-probability.
    pub fn score(&self) -> f64 {
        self.logprob / self.tokens.len().max(1) as f64
    }
}

/// Tokens that may be generated: everything but PAD and BOS.
fn allowed(vocab_size: usize) -> impl Iterator<Item = usize> {
    (0..vocab_size).filter(|&t| t != PAD && t != BOS)
}

/// Beam search over at most `max_len - 1` generated tokens.
pub fn beam_search(ctx: &InferenceContext, width: usize, max_len: usize) -> Result<Hypothesis> {
    if width < 1 || max_len < 2 {
        return Err(OridError::InvalidArgument("beam search needs width >= 1 and max_len >= 2".into()));
    }
    let max_len = max_len.min(ctx.gen.max_len + 1);
    let mut root = ctx.start();
    let first = ctx.step(&mut root, BOS)?;
    // (state, next-token log-probs, accumulated log-prob, generated tokens)
    let mut alive = vec![(root, first, 0.0f64, Vec::<usize>::new())];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (rank, (_, lp, acc, _)) in alive.iter().enumerate() {
            cands.extend(allowed(ctx.gen.vocab_size).map(|tok| (acc + lp[tok], tok, rank)));
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut next = Vec::with_capacity(cands.len());
        for (logprob, tok, rank) in cands {
            let (state, _, _, toks) = &alive[rank];
            let mut tokens = toks.clone();
            tokens.push(tok);
            if tok == EOS || step == max_len - 1 {
                finished.push(Hypothesis { tokens, logprob });
            } else {
                let mut state = state.clone();
                let lp = ctx.step(&mut state, tok)?;
                next.push((state, lp, logprob, tokens));
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    let mut best = finished.swap_remove(0);
    for h in finished {
        if h.score() > best.score() {
            best = h;
        }
    }
    Ok(best)
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy(ctx: &InferenceContext, max_len: usize) -> Result<Hypothesis> {
    let max_len = max_len.min(ctx.gen.max_len + 1);
    let mut state = ctx.start();
    let mut lp = ctx.step(&mut state, BOS)?;
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    while tokens.len() + 1 < max_len {
        let mut best = None::<(f64, usize)>;
        for tok in allowed(ctx.gen.vocab_size) {
            if best.is_none_or(|(s, _)| lp[tok] > s) {
                best = Some((lp[tok], tok));
            }
        }
        let (s, tok) = best.ok_or_else(|| OridError::InvalidArgument("vocabulary has no generable tokens".into()))?;
        logprob += s;
        tokens.push(tok);
        if tok == EOS || tokens.len() + 1 == max_len {
            break;
        }
        lp = ctx.step(&mut state, tok)?;
    }
    Ok(Hypothesis { tokens, logprob })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::softmax_rows;
    use rand::{Rng, SeedableRng};

    fn toy(vocab: usize, max_len: usize, seed: u64) -> (ParamStore, Generator) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = GeneratorDims {
            positions: 4,
            dim: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 2,
            ff_hidden: 8,
            vocab_size: vocab,
            max_len,
        };
        let gen = Generator::new(&mut store, &dims, &mut rng).unwrap();
        (store, gen)
    }

    fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Mat {
        Mat::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn encoder_shape_and_determinism() {
        let (store, gen) = toy(11, 8, 1);
        let x = random(4, 8, &mut ChaCha8Rng::seed_from_u64(2));
        let run = || {
            let mut g = Graph::new(&store);
            let xi = g.constant(x.clone());
            let e = gen.encode(&mut g, xi).unwrap();
            g.value(e.states).clone()
        };
        let a = run();
        assert_eq!(a.shape(), (4, 8));
        assert_eq!(a, run());
    }

    #[test]
    fn causality_and_row_normalization() {
        let (store, gen) = toy(11, 8, 3);
        let x = random(4, 8, &mut ChaCha8Rng::seed_from_u64(4));
        let logits = |tokens: &[usize]| {
            let mut g = Graph::new(&store);
            let xi = g.constant(x.clone());
            let e = gen.encode(&mut g, xi).unwrap();
            let l = gen.decode_teacher_forced(&mut g, &e, tokens).unwrap();
            g.value(l).clone()
        };
        let a = logits(&[BOS, 5, 6, 7, 8]);
        let b = logits(&[BOS, 5, 6, 9, 10]);
        for t in 0..3 {
            assert_eq!(a.row(t), b.row(t));
        }
        assert_ne!(a.row(3), b.row(3));
        let s = softmax_rows(&a, None);
        for t in 0..5 {
            assert!((s.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(a.is_finite());
    }

    #[test]
    fn missing_bos_rejected() {
        let (store, gen) = toy(11, 8, 5);
        let mut g = Graph::new(&store);
        let xi = g.constant(Mat::filled(4, 8, 0.1));
        let e = gen.encode(&mut g, xi).unwrap();
        assert!(matches!(gen.decode_teacher_forced(&mut g, &e, &[5, 6]), Err(OridError::MissingBos)));
    }

    #[test]
    fn consistency_loss_values() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Mat::from_rows(&[vec![1.0, 2.0, 0.0]]).unwrap());
        let same = g.constant(Mat::from_rows(&[vec![2.0, 4.0, 0.0]]).unwrap());
        let opp = g.constant(Mat::from_rows(&[vec![-1.0, -2.0, 0.0]]).unwrap());
        let orth = g.constant(Mat::from_rows(&[vec![-2.0, 1.0, 5.0]]).unwrap());
        let zero = g.constant(Mat::zeros(1, 3));
        let l = consistency_loss(&mut g, a, same).unwrap();
        assert!(g.scalar(l).abs() <= 1e-12);
        let l = consistency_loss(&mut g, a, opp).unwrap();
        assert!((g.scalar(l) - 2.0).abs() <= 1e-12);
        let l = consistency_loss(&mut g, a, orth).unwrap();
        assert!((g.scalar(l) - 1.0).abs() <= 1e-12);
        let err = consistency_loss(&mut g, a, zero).unwrap_err();
        assert_eq!(err.to_string(), "degenerate embedding");
    }

    #[test]
    fn total_loss_matches_scalar_recomputation() {
        let (store, gen) = toy(11, 8, 6);
        let x = random(4, 8, &mut ChaCha8Rng::seed_from_u64(7));
        let target = [BOS, 4, 9, 5, EOS, PAD, PAD];
        let mut g = Graph::new(&store);
        let xi = g.constant(x);
        let e = gen.encode(&mut g, xi).unwrap();
        let losses = gen.total_loss(&mut g, &e, &target, 0.1).unwrap();
        let logits = gen.decode_teacher_forced(&mut g, &e, &target[..4]).unwrap();
        let lv = g.value(logits).clone();
        let ce = -(0..4).map(|t| log_softmax_at(lv.row(t), target[t + 1])).sum::<f64>() / 4.0;
        let table = store.value(gen.embed.table);
        let temb: Vec<f64> = (0..8).map(|k| target[..5].iter().map(|&t| table.get(t, k)).sum::<f64>() / 5.0).collect();
        let pooled = g.value(e.states).mean_rows();
        let dot: f64 = pooled.iter().zip(&temb).map(|(a, b)| a * b).sum();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cs = 1.0 - dot / (norm(&pooled) * norm(&temb));
        assert!((g.scalar(losses.ce) - ce).abs() < 1e-12);
        assert!((g.scalar(losses.cs) - cs).abs() < 1e-12);
        assert!((g.scalar(losses.total) - (ce + 0.1 * cs)).abs() < 1e-12);
        let l0 = gen.total_loss(&mut g, &e, &target, 0.0).unwrap();
        assert_eq!(g.scalar(l0.total), g.scalar(l0.ce));
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.constant(Mat::filled(3, 11, 0.7));
        let ce = g.cross_entropy(logits, Rc::new(vec![Some(1), Some(4), Some(10)]));
        assert!((g.scalar(ce) - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cached_steps_match_teacher_forcing() {
        let (store, gen) = toy(11, 8, 8);
        let x = random(4, 8, &mut ChaCha8Rng::seed_from_u64(9));
        let tokens = [BOS, 6, 4, 10, 7];
        let mut g = Graph::new(&store);
        let xi = g.constant(x);
        let e = gen.encode(&mut g, xi).unwrap();
        let logits = gen.decode_teacher_forced(&mut g, &e, &tokens).unwrap();
        let ctx = InferenceContext::new(&gen, &store, g.value(e.states));
        let mut st = ctx.start();
        for (t, &tok) in tokens.iter().enumerate() {
            let lp = ctx.step(&mut st, tok).unwrap();
            for k in 0..11 {
                assert!((lp[k] - log_softmax_at(g.value(logits).row(t), k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..5 {
            let (store, gen) = toy(7, 6, seed);
            let x = random(4, 8, &mut ChaCha8Rng::seed_from_u64(seed + 100));
            let mut g = Graph::new(&store);
            let xi = g.constant(x);
            let e = gen.encode(&mut g, xi).unwrap();
            let ctx = InferenceContext::new(&gen, &store, g.value(e.states));
            assert_eq!(beam_search(&ctx, 1, 6).unwrap(), greedy(&ctx, 6).unwrap());
        }
    }
}
