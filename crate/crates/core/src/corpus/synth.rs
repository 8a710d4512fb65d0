//! Deterministic synthetic chest radiographs with organ masks, per-organ
//! descriptions and template reports. Every finding is painted into the
//! image under its organ's masks, stated in that organ's description and
//! reported as one sentence, so the generation task is learnable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{manifest_record, DatasetManifest, Image, Sample, SplitRatios};
use crate::error::{OridError, Result};
use crate::organ::{OrganId, PerOrgan};
use crate::vision::MaskBundle;

const SEVERITY: [&str; 3] = ["mild", "moderate", "severe"];
const SIDE: [&str; 3] = ["left", "right", "bilateral"];

/// `(keyword, lateralized)` findings per organ.
fn catalog(organ: OrganId) -> &'static [(&'static str, bool)] {
    match organ {
        OrganId::Lung => &[
            ("pulmonary edema", true),
            ("pneumonia", true),
            ("atelectasis", true),
            ("consolidation", true),
            ("pneumothorax", true),
            ("opacity", true),
        ],
        OrganId::Heart => &[("cardiomegaly", false)],
        OrganId::Bone => &[("rib fracture", true), ("degenerative changes", false), ("scoliosis", false)],
        OrganId::Pleural => &[("pleural effusion", true), ("pleural thickening", true)],
        OrganId::Mediastinum => &[("hilar enlargement", true), ("aortic calcification", false)],
    }
}

fn normal_sentence(organ: OrganId) -> &'static str {
    match organ {
        OrganId::Lung => "the lungs are clear",
        OrganId::Heart => "the heart size is normal",
        OrganId::Bone => "the osseous structures are intact",
        OrganId::Pleural => "there is no pleural effusion",
        OrganId::Mediastinum => "the mediastinal contour is normal",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFinding {
    /// Index into the organ's finding catalog.
    pub kind: usize,
    pub severity: usize,
    pub side: Option<usize>,
}

impl SynthFinding {
    pub fn keyword(&self, organ: OrganId) -> &'static str {
        catalog(organ)[self.kind].0
    }

    fn phrase(&self, organ: OrganId) -> String {
        match self.side {
            Some(s) => format!("{} {} {}", SEVERITY[self.severity], SIDE[s], self.keyword(organ)),
            None => format!("{} {}", SEVERITY[self.severity], self.keyword(organ)),
        }
    }

    pub fn sentence(&self, organ: OrganId) -> String {
        format!("there is {}", self.phrase(organ))
    }

    pub fn description(&self, organ: OrganId) -> String {
        format!("{organ} shows {}", self.phrase(organ))
    }
}

/// Generator knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthGrammar {
    pub image_size: usize,
    pub channels: usize,
    /// Probability that an organ carries a finding.
    pub finding_prob: f64,
    /// Probability that a normal organ is mentioned in the report.
    pub mention_normal_prob: f64,
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
    pub ratios: SplitRatios,
}

impl Default for SynthGrammar {
    fn default() -> Self {
        SynthGrammar {
            image_size: 64,
            channels: 1,
            finding_prob: 0.35,
            mention_normal_prob: 1.0,
            noise: 0.02,
            ratios: SplitRatios::default(),
        }
    }
}

/// Ground truth behind one synthetic sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthLabels {
    pub findings: PerOrgan<Option<SynthFinding>>,
    /// Report sentences (normalized) with the organ that produced each.
    pub sentences: Vec<(String, OrganId)>,
}

pub fn synth_dataset(seed: u64, n: usize, grammar: &SynthGrammar) -> Result<(DatasetManifest, Vec<Sample>)> {
    let (samples, _) = synth_corpus(seed, n, grammar)?;
    let manifest = DatasetManifest { records: samples.iter().map(manifest_record).collect() };
    Ok((manifest, samples))
}

pub fn synth_corpus(seed: u64, n: usize, grammar: &SynthGrammar) -> Result<(Vec<Sample>, Vec<SynthLabels>)> {
    if n < 1 {
        return Err(OridError::InvalidArgument("synthetic dataset needs n >= 1".into()));
    }
    if grammar.image_size < 8 || grammar.channels == 0 {
        return Err(OridError::InvalidArgument("synthetic images need size >= 8 and >= 1 channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = synth_masks(grammar.image_size);
    let splits = grammar.ratios.assign(n);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, split) in splits.into_iter().enumerate() {
        let findings = PerOrgan::from_fn(|organ| {
            if rng.gen::<f64>() < grammar.finding_prob {
                let cat = catalog(organ);
                let kind = rng.gen_range(0..cat.len());
                let severity = rng.gen_range(0..SEVERITY.len());
                let side = cat[kind].1.then(|| rng.gen_range(0..SIDE.len()));
                Some(SynthFinding { kind, severity, side })
            } else {
                None
            }
        });
        let mut sentences = Vec::new();
        for organ in OrganId::ALL {
            match findings[organ] {
                Some(f) => sentences.push((f.sentence(organ), organ)),
                None if rng.gen::<f64>() < grammar.mention_normal_prob => {
                    sentences.push((normal_sentence(organ).to_string(), organ))
                }
                None => {}
            }
        }
        let descriptions = PerOrgan::from_fn(|organ| match findings[organ] {
            Some(f) => f.description(organ),
            None => format!("{organ} appears normal"),
        });
        let report = sentences.iter().map(|(s, _)| capitalize(s) + ".").collect::<Vec<_>>().join(" ");
        let image = paint(&masks, &findings, grammar, &mut rng);
        samples.push(Sample {
            id: format!("s{i:05}"),
            image,
            masks: masks.clone(),
            descriptions,
            report,
            split,
        });
        labels.push(SynthLabels { findings, sentences });
    }
    Ok((samples, labels))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> bool {
    let (a, b) = ((u - cu) / ru, (v - cv) / rv);
    a * a + b * b <= 1.0
}

/// Anatomical masks on an `size x size` grid; the same geometry for every sample.
pub fn synth_masks(size: usize) -> MaskBundle {
    let mut bundle = MaskBundle::zeros(size, size);
    let s = size as f64;
    const LUNG_C: [(f64, f64); 2] = [(0.31, 0.45), (0.69, 0.45)];
    const LUNG_R: (f64, f64) = (0.17, 0.3);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
            let mut mark = |organ: OrganId, ch: usize| bundle.set(organ, ch, y, x, 1);

            for (side, &(cu, cv)) in LUNG_C.iter().enumerate() {
                if in_ellipse(u, v, cu, cv, LUNG_R.0, LUNG_R.1) {
                    // Lobes: two on the image-left lung, three on the right.
                    let rel = (v - (cv - LUNG_R.1)) / (2.0 * LUNG_R.1);
                    let lobe = if side == 0 { usize::from(rel >= 0.5) } else { 2 + ((rel * 3.0) as usize).min(2) };
                    mark(OrganId::Lung, lobe);
                    mark(OrganId::Lung, 5 + side * 4 + ((rel * 4.0) as usize).min(3));
                    mark(OrganId::Lung, 13 + side);
                } else if in_ellipse(u, v, cu, cv, LUNG_R.0 * 1.18, LUNG_R.1 * 1.1) {
                    let rel = ((v - (cv - LUNG_R.1 * 1.1)) / (2.2 * LUNG_R.1)).clamp(0.0, 0.999);
                    mark(OrganId::Pleural, side * 5 + (rel * 5.0) as usize);
                }
                // Ribs: 23 thin arcs per side, then 12 wider super-rib bands per side.
                let du = (u - cu) / 0.2;
                if du.abs() <= 1.0 {
                    let arc = v - 0.08 * du * du;
                    for k in 0..23 {
                        if (arc - (0.12 + 0.03 * k as f64)).abs() < 0.6 / s {
                            mark(OrganId::Bone, side * 23 + k);
                        }
                    }
                    for k in 0..12 {
                        if (arc - (0.135 + 0.06 * k as f64)).abs() < 1.1 / s {
                            mark(OrganId::Bone, 46 + side * 12 + k);
                        }
                    }
                }
            }
            if in_ellipse(u, v, 0.55, 0.62, 0.15, 0.13) {
                let angle = (v - 0.62).atan2(u - 0.55) + std::f64::consts::PI;
                let sector = ((angle / (2.0 * std::f64::consts::PI) * 6.0) as usize).min(5);
                mark(OrganId::Heart, sector);
            }
            if (0.44..0.56).contains(&u) && (0.08..0.75).contains(&v) {
                mark(OrganId::Mediastinum, (((v - 0.08) / 0.67 * 6.0) as usize).min(5));
            }
            if (0.12..0.88).contains(&u) && (0.78..0.84).contains(&v) {
                mark(OrganId::Mediastinum, 6 + (((u - 0.12) / 0.76 * 3.0) as usize).min(2));
            }
        }
    }
    bundle
}

fn base_intensity(organ: OrganId) -> f64 {
    match organ {
        OrganId::Lung => 0.15,
        OrganId::Heart => 0.35,
        OrganId::Bone => 0.2,
        OrganId::Pleural => 0.1,
        OrganId::Mediastinum => 0.25,
    }
}

fn paint(
    masks: &MaskBundle,
    findings: &PerOrgan<Option<SynthFinding>>,
    grammar: &SynthGrammar,
    rng: &mut ChaCha8Rng,
) -> Image {
    let size = grammar.image_size;
    let mut image = Image::zeros(size, size, grammar.channels);
    let unions = PerOrgan::from_fn(|o| masks.union(o));
    for y in 0..size {
        for x in 0..size {
            let mut value = 0.05;
            for organ in OrganId::ALL {
                if unions[organ][y * size + x] == 0 {
                    continue;
                }
                value += base_intensity(organ);
                if let Some(f) = findings[organ] {
                    let on_side = match f.side {
                        Some(0) => x < size / 2,
                        Some(1) => x >= size / 2,
                        _ => true,
                    };
                    let period = f.kind + 1;
                    let stripe = (x / period + (y / period) * (f.kind % 2)) % 2 == 0;
                    if on_side && stripe {
                        value += 0.12 * (f.severity + 1) as f64;
                    }
                }
            }
            for c in 0..grammar.channels {
                let noisy = value + rng.gen_range(-grammar.noise..=grammar.noise);
                image.set(y, x, c, noisy.clamp(0.0, 1.0) as f32);
            }
        }
    }
    image
}
