//! Train-time augmentation applied identically to image and masks.

use rand::Rng;

use crate::corpus::{Image, Sample};
use crate::organ::OrganId;
use crate::vision::MaskBundle;

/// Crop window offset within the padded frame plus a flip flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jitter {
    pub pad: usize,
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl Jitter {
    pub fn identity(pad: usize) -> Self {
        Jitter { pad, dy: pad, dx: pad, flip: false }
    }

    pub fn sample(pad: usize, flip_prob: f64, rng: &mut impl Rng) -> Self {
        Jitter { pad, dy: rng.gen_range(0..=2 * pad), dx: rng.gen_range(0..=2 * pad), flip: rng.gen_bool(flip_prob) }
    }

    /// Source coordinate for output `(y, x)` of an `h x w` plane whose
    /// offsets are rescaled from a `ref_h x ref_w` frame.
    fn source(&self, y: usize, x: usize, h: usize, w: usize, ref_h: usize, ref_w: usize) -> Option<(usize, usize)> {
        let rescale = |v: usize, n: usize, r: usize| (v * n + r / 2) / r.max(1);
        let (pad_y, pad_x) = (rescale(self.pad, h, ref_h), rescale(self.pad, w, ref_w));
        let (dy, dx) = (rescale(self.dy, h, ref_h), rescale(self.dx, w, ref_w));
        let x = if self.flip { w - 1 - x } else { x };
        let sy = (y + dy).checked_sub(pad_y)?;
        let sx = (x + dx).checked_sub(pad_x)?;
        (sy < h && sx < w).then_some((sy, sx))
    }
}

pub fn jitter_image(image: &Image, j: &Jitter) -> Image {
    let mut out = Image::zeros(image.height, image.width, image.channels);
    for y in 0..image.height {
        for x in 0..image.width {
            if let Some((sy, sx)) = j.source(y, x, image.height, image.width, image.height, image.width) {
                for c in 0..image.channels {
                    out.set(y, x, c, image.get(sy, sx, c));
                }
            }
        }
    }
    out
}

pub fn jitter_masks(masks: &MaskBundle, j: &Jitter, ref_h: usize, ref_w: usize) -> MaskBundle {
    let mut out = masks.clone();
    let (h, w) = (masks.height, masks.width);
    for organ in OrganId::ALL {
        for ch in 0..masks.channels(organ) {
            for y in 0..h {
                for x in 0..w {
                    let v = j.source(y, x, h, w, ref_h, ref_w).map_or(0, |(sy, sx)| masks.get(organ, ch, sy, sx));
                    out.set(organ, ch, y, x, v);
                }
            }
        }
    }
    out
}

/// Pads by `pad`, crops back to the original size at a random offset and flips horizontally with `flip_prob`.
pub fn augment_sample(sample: &Sample, pad: usize, flip_prob: f64, rng: &mut impl Rng) -> Sample {
    let j = Jitter::sample(pad, flip_prob, rng);
    Sample {
        image: jitter_image(&sample.image, &j),
        masks: jitter_masks(&sample.masks, &j, sample.image.height, sample.image.width),
        ..sample.clone()
    }
}
