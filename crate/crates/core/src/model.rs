//! The full pipeline: vision, fusion, importance weighting and generation,
//! with per-module toggles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::corpus::{tokenize, Sample, TokenSeq, Vocabulary};
use crate::ds_graph::AdjacencyMatrix;
use crate::error::{OridError, Result};
use crate::generator::{beam_search, greedy, EncodedImage, Generator, GeneratorDims, Hypothesis, InferenceContext, Losses};
use crate::ocf::{coarse_image_feature_graph, description_tokens, CrossModalFeatures, Ocf};
use crate::oica::{assemble_cross_modal, Oica};
use crate::organ::{OrganId, PerOrgan};
use crate::params::ParamStore;
use crate::tensor::Mat;
use crate::vision::{organ_image_features_graph, MaskBackbone, RawBackbone};

/// One preprocessed case.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub id: String,
    /// `(H*W) x C` pixels.
    pub image: Mat,
    /// Masks pooled to the backbone's mask size, `(s*s) x C_o` per organ.
    pub masks: PerOrgan<Mat>,
    pub desc_tokens: PerOrgan<Vec<usize>>,
    pub target: TokenSeq,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Replaces the computed importance coefficients.
    pub alpha_override: Option<[f64; 5]>,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub raw_mid: Var,
    pub raw_final: Var,
    pub mask_feats: Option<PerOrgan<Var>>,
    pub organ_feats: PerOrgan<Var>,
    pub cross_modal: CrossModalFeatures,
    pub alpha: Option<Var>,
    pub cross_modal_final: Var,
    pub x_i: Var,
    pub encoded: EncodedImage,
    /// Cross-attention weight matrices of the fusion stage.
    pub fusion_attention: Vec<Var>,
    /// Per layer, per head graph attention.
    pub graph_attention: Vec<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct OridModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub adjacency: AdjacencyMatrix,
    pub params: ParamStore,
    pub raw: RawBackbone,
    pub mask: MaskBackbone,
    pub ocf: Ocf,
    pub oica: Oica,
    pub generator: Generator,
}

impl OridModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, adjacency: AdjacencyMatrix, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.dim;
        let raw = RawBackbone::new(&mut params, &config.vision, d, &mut rng);
        let mask = MaskBackbone::new(&mut params, &config.vision, d, &mut rng);
        let ocf = Ocf::new(&mut params, vocab.len(), d, config.heads, config.share_fine_attention, &mut rng)?;
        let oica = Oica::new(&mut params, d, config.gat_heads, config.gat_layers, config.mlp_hidden, &mut rng)?;
        let dims = GeneratorDims {
            positions: config.vision.positions(),
            dim: d,
            heads: config.heads,
            enc_layers: config.enc_layers,
            dec_layers: config.dec_layers,
            ff_hidden: config.ff_hidden,
            vocab_size: vocab.len(),
            max_len: config.max_report_len,
        };
        let generator = Generator::new(&mut params, &dims, &mut rng)?;
        Ok(OridModel { config, vocab, adjacency, params, raw, mask, ocf, oica, generator })
    }

    pub fn prepare(&self, sample: &Sample) -> Result<ModelInput> {
        let image = sample.image.to_mat();
        self.raw.check_image(&image)?;
        sample.masks.validate()?;
        Ok(ModelInput {
            id: sample.id.clone(),
            image,
            masks: sample.masks.downsample(self.config.vision.mask_size),
            desc_tokens: PerOrgan::from_fn(|o| description_tokens(&sample.descriptions[o], o, &self.vocab)),
            target: tokenize(&sample.report, &self.vocab, self.config.max_report_len),
        })
    }

    /// Runs everything up to the encoder output.
    pub fn forward(&self, g: &mut Graph, input: &ModelInput, opts: &ForwardOptions) -> Result<Forward> {
        let t = self.config.toggles;
        t.validate()?;
        self.raw.check_image(&input.image)?;
        let image = g.constant(input.image.clone());
        let (raw_mid, raw_final) = self.raw.forward(g, image);

        let (mask_feats, organ_feats) = if t.use_mask {
            let vars = input.masks.map(|_, m| g.constant(m.clone()));
            let m = self.mask.forward(g, &vars)?;
            let o = organ_image_features_graph(g, &m, raw_mid)?;
            (Some(m), o)
        } else {
            (None, PerOrgan::from_fn(|_| raw_mid))
        };

        let mut fusion_attention = Vec::new();
        let desc = if t.use_ocf_fine || t.use_ocf_coarse {
            Some(self.ocf.embed_descriptions(g, &input.desc_tokens)?)
        } else {
            None
        };
        let fine = match &desc {
            Some(desc) if t.use_ocf_fine => PerOrgan::try_from_fn(|o| {
                let a = self.ocf.attend_fine(g, o, organ_feats[o], desc[o], &input.desc_tokens[o])?;
                fusion_attention.extend(a.weights);
                Ok::<_, OridError>(a.output)
            })?,
            _ => organ_feats.clone(),
        };
        let x_it = coarse_image_feature_graph(g, &organ_feats)?;
        let coarse = match &desc {
            Some(desc) if t.use_ocf_coarse => {
                let a = self.ocf.attend_coarse(g, x_it, desc, &input.desc_tokens)?;
                fusion_attention.extend(a.weights);
                a.output
            }
            _ => x_it,
        };
        let cross_modal = CrossModalFeatures { fine, coarse };

        let (alpha, graph_attention) = match opts.alpha_override {
            Some(a) => (Some(g.constant(Mat::from_vec(5, 1, a.to_vec())?)), Vec::new()),
            None if t.use_oica => {
                let (a, attn) = self.oica.forward(g, &cross_modal, &self.adjacency);
                (Some(a), attn)
            }
            None => (None, Vec::new()),
        };
        let cross_modal_final = assemble_cross_modal(g, &cross_modal, alpha)?;
        let x_i = g.add(cross_modal_final, raw_final);
        let encoded = self.generator.encode(g, x_i)?;
        Ok(Forward {
            raw_mid,
            raw_final,
            mask_feats,
            organ_feats,
            cross_modal,
            alpha,
            cross_modal_final,
            x_i,
            encoded,
            fusion_attention,
            graph_attention,
        })
    }

    pub fn loss(&self, g: &mut Graph, input: &ModelInput, beta: f64, opts: &ForwardOptions) -> Result<(Forward, Losses)> {
        let f = self.forward(g, input, opts)?;
        let losses = self.generator.total_loss(g, &f.encoded, &input.target, beta)?;
        Ok((f, losses))
    }

    /// Decodes one case; `alpha` is reported when the importance module ran.
    pub fn generate(&self, input: &ModelInput, width: usize) -> Result<Generated> {
        let mut g = Graph::new(&self.params);
        let f = self.forward(&mut g, input, &ForwardOptions::default())?;
        let ctx = InferenceContext::new(&self.generator, &self.params, g.value(f.encoded.states));
        let hyp = if width == 1 {
            greedy(&ctx, self.config.max_report_len)?
        } else {
            beam_search(&ctx, width, self.config.max_report_len)?
        };
        let alpha = match f.alpha {
            Some(a) if self.config.toggles.use_oica => {
                let v = g.value(a).data();
                Some(std::array::from_fn(|i| v[i]))
            }
            _ => None,
        };
        Ok(Generated { hypothesis: hyp, alpha })
    }

    /// Report text for generated token ids.
    pub fn detokenize(&self, tokens: &[usize]) -> String {
        crate::corpus::detokenize(tokens, &self.vocab)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub hypothesis: Hypothesis,
    pub alpha: Option<[f64; OrganId::COUNT]>,
}
