//! Raw-image and organ-mask feature extraction and mask-gated organ image features.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::config::VisionConfig;
use crate::error::{OridError, Result};
use crate::io::{ArrayData, NdArray};
use crate::layers::{adaptive_pool_matrix, Conv2d, Linear};
use crate::organ::{OrganId, PerOrgan};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::{FeatureGrid, Mat};

/// Per-organ binary mask stacks, each stored `C x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskBundle {
    pub height: usize,
    pub width: usize,
    pub stacks: PerOrgan<Vec<u8>>,
    /// Organs whose masks were absent from the source and are all zero.
    pub missing: PerOrgan<bool>,
}

impl MaskBundle {
    pub fn zeros(height: usize, width: usize) -> Self {
        MaskBundle {
            height,
            width,
            stacks: PerOrgan::from_fn(|o| vec![0; o.mask_channels() * height * width]),
            missing: PerOrgan::from_fn(|_| false),
        }
    }

    pub fn new(height: usize, width: usize, stacks: PerOrgan<Vec<u8>>) -> Result<Self> {
        let bundle = MaskBundle { height, width, stacks, missing: PerOrgan::from_fn(|_| false) };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let plane = self.height * self.width;
        for (organ, stack) in self.stacks.iter() {
            if plane == 0 || stack.len() % plane != 0 {
                return Err(OridError::Shape(format!("{organ} mask stack does not tile {}x{}", self.height, self.width)));
            }
            let actual = stack.len() / plane;
            if actual != organ.mask_channels() {
                return Err(OridError::MaskChannels { organ: organ.name(), expected: organ.mask_channels(), actual });
            }
            if stack.iter().any(|&x| x > 1) {
                return Err(OridError::InvalidArgument(format!("{organ} mask is not binary")));
            }
        }
        Ok(())
    }

    pub fn channels(&self, organ: OrganId) -> usize {
        self.stacks[organ].len() / (self.height * self.width).max(1)
    }

    pub fn get(&self, organ: OrganId, ch: usize, y: usize, x: usize) -> u8 {
        self.stacks[organ][(ch * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, organ: OrganId, ch: usize, y: usize, x: usize, v: u8) {
        let (h, w) = (self.height, self.width);
        self.stacks[organ][(ch * h + y) * w + x] = v;
    }

    /// Pixelwise OR over an organ's channels, `H*W` long.
    pub fn union(&self, organ: OrganId) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = vec![0u8; plane];
        for ch in self.stacks[organ].chunks_exact(plane) {
            for (o, &m) in out.iter_mut().zip(ch) {
                *o |= m;
            }
        }
        out
    }

    /// One `(C, H, W)` array per present organ, canonical order.
    pub fn to_arrays(&self) -> Vec<(OrganId, NdArray)> {
        self.stacks
            .iter()
            .filter(|(o, _)| !self.missing[*o])
            .map(|(o, s)| {
                (o, NdArray { shape: vec![o.mask_channels(), self.height, self.width], data: ArrayData::U8(s.clone()) })
            })
            .collect()
    }

    /// Inverse of [`MaskBundle::to_arrays`]; absent organs become zero stacks flagged missing.
    pub fn from_arrays(arrays: Vec<(String, NdArray)>) -> Result<Self> {
        let mut found: PerOrgan<Option<NdArray>> = PerOrgan::from_fn(|_| None);
        let mut hw = None;
        for (name, arr) in arrays {
            let organ: OrganId = name.parse()?;
            let [c, h, w] = arr.shape[..] else {
                return Err(OridError::Shape(format!("{organ} masks must be (C, H, W), got {:?}", arr.shape)));
            };
            if c != organ.mask_channels() {
                return Err(OridError::MaskChannels { organ: organ.name(), expected: organ.mask_channels(), actual: c });
            }
            match hw {
                None => hw = Some((h, w)),
                Some(prev) if prev != (h, w) => {
                    return Err(OridError::Shape(format!("{organ} masks are {h}x{w}, others {}x{}", prev.0, prev.1)))
                }
                _ => {}
            }
            found[organ] = Some(arr);
        }
        let (h, w) = hw.ok_or_else(|| OridError::InvalidArgument("mask archive holds no organs".into()))?;
        let missing = found.map(|_, a| a.is_none());
        let stacks = PerOrgan::from_fn(|o| match found[o].take() {
            Some(a) => a.data.to_u8(),
            None => vec![0; o.mask_channels() * h * w],
        });
        let bundle = MaskBundle { height: h, width: w, stacks, missing };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Average-pools every organ stack to `size x size`, giving `(size*size) x C` maps.
    pub fn downsample(&self, size: usize) -> PerOrgan<Mat> {
        let (h, w) = (self.height, self.width);
        let window = |i: usize, n: usize| (i * n / size, ((i + 1) * n).div_ceil(size));
        PerOrgan::from_fn(|organ| {
            let c = organ.mask_channels();
            let stack = &self.stacks[organ];
            let mut out = Mat::zeros(size * size, c);
            for oy in 0..size {
                let (y0, y1) = window(oy, h);
                for ox in 0..size {
                    let (x0, x1) = window(ox, w);
                    let inv = 1.0 / ((y1 - y0) * (x1 - x0)) as f64;
                    let row = out.row_mut(oy * size + ox);
                    for (ch, r) in row.iter_mut().enumerate() {
                        let mut acc = 0u32;
                        for y in y0..y1 {
                            let base = (ch * h + y) * w;
                            acc += stack[base + x0..base + x1].iter().map(|&m| m as u32).sum::<u32>();
                        }
                        *r = acc as f64 * inv;
                    }
                }
            }
            out
        })
    }
}

/// Stride-2 convolution stages; returns every stage's `(map, h, w)`.
fn run_stages(g: &mut Graph, stages: &[Conv2d], mut x: Var, mut h: usize, mut w: usize) -> Vec<(Var, usize, usize)> {
    let mut taps = Vec::with_capacity(stages.len());
    for conv in stages {
        let (y, oh, ow) = conv.forward(g, x, h, w);
        x = g.gelu(y);
        (h, w) = (oh, ow);
        taps.push((x, h, w));
    }
    taps
}

/// Pools a `(h*w) x c` map to the grid and projects it to `P x d`.
fn to_grid(g: &mut Graph, map: Var, h: usize, w: usize, grid: usize, proj: &Linear) -> Var {
    let pooled = if (h, w) == (grid, grid) {
        map
    } else {
        let pool = g.constant(adaptive_pool_matrix(h, w, grid, grid));
        g.matmul(pool, map)
    };
    proj.forward(g, pooled)
}

/// Convolutional encoder for the radiograph with a mid-stage and a final tap.
#[derive(Clone, Debug)]
pub struct RawBackbone {
    pub stages: Vec<Conv2d>,
    pub mid_proj: Linear,
    pub final_proj: Linear,
    pub cfg: VisionConfig,
}

impl RawBackbone {
    pub fn new(store: &mut ParamStore, cfg: &VisionConfig, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let group = ParamGroup::ImageExtractor;
        let mut c_in = cfg.image_channels;
        let mut stages = Vec::new();
        for (i, &c) in cfg.raw_channels.iter().enumerate() {
            stages.push(Conv2d::new(store, &format!("vision.raw.stage{i}"), group, c_in, c, 3, 2, rng));
            c_in = c;
        }
        let mid_c = cfg.raw_channels[cfg.mid_stage];
        RawBackbone {
            stages,
            mid_proj: Linear::new(store, "vision.raw.mid_proj", group, mid_c, dim, true, rng),
            final_proj: Linear::new(store, "vision.raw.final_proj", group, c_in, dim, true, rng),
            cfg: cfg.clone(),
        }
    }

    pub fn check_image(&self, image: &Mat) -> Result<()> {
        let (s, c) = (self.cfg.image_size, self.cfg.image_channels);
        if image.shape() != (s * s, c) {
            let actual = (image.rows(), 1, image.cols());
            return Err(OridError::Resolution { expected: (s, s, c), actual });
        }
        Ok(())
    }

    /// `image` is `(H*W) x C`. Returns `(mid, final)` grids.
    pub fn forward(&self, g: &mut Graph, image: Var) -> (Var, Var) {
        let s = self.cfg.image_size;
        let taps = run_stages(g, &self.stages, image, s, s);
        let (m, mh, mw) = taps[self.cfg.mid_stage];
        let (f, fh, fw) = *taps.last().expect("at least one stage");
        let mid = to_grid(g, m, mh, mw, self.cfg.grid, &self.mid_proj);
        let fin = to_grid(g, f, fh, fw, self.cfg.grid, &self.final_proj);
        (mid, fin)
    }
}

/// Mask encoder: one 1x1 adapter per organ, then a shared convolution stack.
#[derive(Clone, Debug)]
pub struct MaskBackbone {
    pub adapters: PerOrgan<Conv2d>,
    pub stages: Vec<Conv2d>,
    pub proj: Linear,
    pub cfg: VisionConfig,
}

impl MaskBackbone {
    pub fn new(store: &mut ParamStore, cfg: &VisionConfig, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let group = ParamGroup::ImageExtractor;
        let adapters = PerOrgan::from_fn(|o| {
            Conv2d::new(store, &format!("vision.mask.adapter.{o}"), group, o.mask_channels(), cfg.mask_adapter, 1, 1, rng)
        });
        let mut c_in = cfg.mask_adapter;
        let mut stages = Vec::new();
        for (i, &c) in cfg.mask_channels.iter().enumerate() {
            stages.push(Conv2d::new(store, &format!("vision.mask.stage{i}"), group, c_in, c, 3, 2, rng));
            c_in = c;
        }
        let proj = Linear::new(store, "vision.mask.proj", group, c_in, dim, true, rng);
        MaskBackbone { adapters, stages, proj, cfg: cfg.clone() }
    }

    /// `masks[o]` is the organ's downsampled `(s*s) x C_o` map.
    pub fn forward(&self, g: &mut Graph, masks: &PerOrgan<Var>) -> Result<PerOrgan<Var>> {
        let s = self.cfg.mask_size;
        PerOrgan::try_from_fn(|organ| {
            let (rows, c) = g.shape(masks[organ]);
            if c != organ.mask_channels() {
                return Err(OridError::MaskChannels { organ: organ.name(), expected: organ.mask_channels(), actual: c });
            }
            if rows != s * s {
                return Err(OridError::Shape(format!("{organ} mask map has {rows} positions, expected {}", s * s)));
            }
            let (a, _, _) = self.adapters[organ].forward(g, masks[organ], s, s);
            let a = g.gelu(a);
            let taps = run_stages(g, &self.stages, a, s, s);
            let (f, h, w) = *taps.last().expect("at least one stage");
            Ok(to_grid(g, f, h, w, self.cfg.grid, &self.proj))
        })
    }
}

/// Mid and final raw grids for one `(H*W) x C` image.
pub fn extract_raw_features(g: &mut Graph, backbone: &RawBackbone, image: &Mat) -> Result<(Var, Var)> {
    backbone.check_image(image)?;
    let x = g.constant(image.clone());
    Ok(backbone.forward(g, x))
}

/// Per-organ mask grids from a bundle already pooled to the backbone's mask size.
pub fn extract_mask_features(g: &mut Graph, backbone: &MaskBackbone, masks: &PerOrgan<Mat>) -> Result<PerOrgan<Var>> {
    let vars = masks.map(|_, m| g.constant(m.clone()));
    backbone.forward(g, &vars)
}

/// `x_o = m_o * r` elementwise for every organ.
pub fn organ_image_features_graph(g: &mut Graph, mask_feats: &PerOrgan<Var>, raw_mid: Var) -> Result<PerOrgan<Var>> {
    let shape = g.shape(raw_mid);
    PerOrgan::try_from_fn(|organ| {
        let m = mask_feats[organ];
        if g.shape(m) != shape {
            return Err(OridError::Shape(format!("{organ} mask feature {:?} vs raw feature {shape:?}", g.shape(m))));
        }
        Ok(g.mul(m, raw_mid))
    })
}

/// Value-level counterpart of [`organ_image_features_graph`].
pub fn organ_image_features(mask_feats: &PerOrgan<FeatureGrid>, raw_mid: &FeatureGrid) -> Result<PerOrgan<FeatureGrid>> {
    PerOrgan::try_from_fn(|organ| {
        let m = &mask_feats[organ];
        if m.shape() != raw_mid.shape() {
            return Err(OridError::Shape(format!("{organ} mask feature {:?} vs raw feature {:?}", m.shape(), raw_mid.shape())));
        }
        Ok(m.zip_map(raw_mid, |a, b| a * b))
    })
}
