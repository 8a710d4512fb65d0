//! Dataset ingestion: text normalization, vocabulary, manifests and the
//! synthetic desk-scale corpus.

mod synth;
mod vocab;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use synth::{synth_corpus, synth_dataset, synth_masks, SynthFinding, SynthGrammar, SynthLabels};
pub use vocab::{
    build_vocabulary, detokenize, encode_words, tokenize, TokenSeq, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK,
};

use crate::error::{OridError, Result};
use crate::io::{read_npy, read_npz, write_npy, write_npz, ArrayData, NdArray};
use crate::organ::{OrganId, PerOrgan};
use crate::tensor::Mat;
use crate::vision::MaskBundle;

/// Lowercases and strips every non-alphanumeric character except hyphens
/// inside words and decimal points between digits.
pub fn normalize_text(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        let keep = if c.is_alphanumeric() {
            true
        } else if c == '-' {
            prev.is_some_and(char::is_alphanumeric) && next.is_some_and(char::is_alphanumeric)
        } else if c == '.' {
            prev.is_some_and(|p| p.is_ascii_digit()) && next.is_some_and(|n| n.is_ascii_digit())
        } else {
            false
        };
        if keep {
            out.extend(c.to_lowercase());
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = OridError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(OridError::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Train/val/test proportions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 7.0, val: 2.0, test: 1.0 }
    }
}

impl SplitRatios {
    /// Split of each of `n` consecutive items: rounded train and val counts, the rest test.
    pub fn assign(&self, n: usize) -> Vec<Split> {
        let total = self.train + self.val + self.test;
        let n_train = ((n as f64 * self.train / total).round() as usize).min(n);
        let n_val = ((n as f64 * self.val / total).round() as usize).min(n - n_train);
        (0..n)
            .map(|i| match i {
                i if i < n_train => Split::Train,
                i if i < n_train + n_val => Split::Val,
                _ => Split::Test,
            })
            .collect()
    }
}

/// Radiograph with values in `[0, 1]`, stored `H x W x C` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// `(H*W) x C` feature map.
    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(self.height * self.width, self.channels, self.data.iter().map(|&x| x as f64).collect())
            .expect("image buffer matches its shape")
    }

    pub fn to_array(&self) -> NdArray {
        NdArray { shape: vec![self.height, self.width, self.channels], data: ArrayData::F32(self.data.clone()) }
    }

    pub fn from_array(arr: &NdArray) -> Result<Self> {
        let (h, w, c) = match arr.shape[..] {
            [h, w] => (h, w, 1),
            [h, w, c] => (h, w, c),
            _ => return Err(OridError::Shape(format!("image array must be HxW or HxWxC, got {:?}", arr.shape))),
        };
        let data = match &arr.data {
            ArrayData::U8(v) => v.iter().map(|&x| x as f32 / 255.0).collect(),
            ArrayData::F32(v) => v.clone(),
            ArrayData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        };
        Ok(Image { height: h, width: w, channels: c, data })
    }
}

/// One radiology case.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub masks: MaskBundle,
    pub descriptions: PerOrgan<String>,
    pub report: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub descriptions: BTreeMap<OrganId, String>,
    pub report: String,
    pub split: Split,
}

/// JSON-lines manifest; relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| OridError::Parse { line: i + 1, msg: e.to_string() })?;
            records.push(rec);
        }
        Ok(DatasetManifest { records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut text = String::new();
        for line in reader.lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }
}

pub fn manifest_record(sample: &Sample) -> ManifestRecord {
    ManifestRecord {
        id: sample.id.clone(),
        image_path: PathBuf::from("images").join(format!("{}.npy", sample.id)),
        mask_path: PathBuf::from("masks").join(format!("{}.npz", sample.id)),
        descriptions: sample.descriptions.iter().map(|(o, d)| (o, d.clone())).collect(),
        report: sample.report.clone(),
        split: sample.split,
    }
}

/// Writes `manifest.jsonl`, `images/<id>.npy` and `masks/<id>.npz` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = DatasetManifest::default();
    for s in samples {
        let rec = manifest_record(s);
        write_npy(dir.join(&rec.image_path), &s.image.to_array())?;
        let arrays = s.masks.to_arrays();
        let entries: Vec<(&str, &NdArray)> = arrays.iter().map(|(o, a)| (o.name(), a)).collect();
        write_npz(dir.join(&rec.mask_path), &entries)?;
        manifest.records.push(rec);
    }
    let path = dir.join("manifest.jsonl");
    manifest.write(&path)?;
    Ok(path)
}

pub fn load_record(base: &Path, rec: &ManifestRecord) -> Result<Sample> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let image = Image::from_array(&read_npy(resolve(&rec.image_path))?)?;
    let masks = MaskBundle::from_arrays(read_npz(resolve(&rec.mask_path))?)?;
    let descriptions = PerOrgan::from_fn(|o| rec.descriptions.get(&o).cloned().unwrap_or_default());
    Ok(Sample { id: rec.id.clone(), image, masks, descriptions, report: rec.report.clone(), split: rec.split })
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let manifest_path = manifest_path.as_ref();
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    DatasetManifest::read(manifest_path)?.records.iter().map(|r| load_record(base, r)).collect()
}
