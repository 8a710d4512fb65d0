//! Organ-level instruction QA dataset construction.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, Sample};
use crate::ds_graph::{assign_sentence_to_organ, DsGraph};
use crate::error::{OridError, Result};
use crate::organ::{OrganId, PerOrgan};

/// Answers are kept strictly below this many tokens.
pub const MAX_ANSWER_TOKENS: usize = 20;

const NEGATION_CUES: [&str; 4] = ["no", "without", "free", "clear"];
const NORMAL_WORDS: [&str; 7] = ["normal", "clear", "intact", "unremarkable", "stable", "unchanged", "appears"];

pub fn prompt(organ: OrganId) -> String {
    format!("What have you found in {organ}?\n<image>")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub image_id: String,
    pub organ: OrganId,
    pub prompt: String,
    pub answer: String,
}

impl QAPair {
    pub fn answer_tokens(&self) -> usize {
        normalize_text(&self.answer).split_whitespace().count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderConfig {
    pub positive_boost: f64,
    pub max_duplicate_answers: usize,
    pub min_pairs_per_image: usize,
    pub balance_tolerance: f64,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig { positive_boost: 2.0, max_duplicate_answers: 8, min_pairs_per_image: 0, balance_tolerance: 0.1 }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OridError::Config(m.to_string()));
        if !(self.positive_boost >= 1.0 && self.positive_boost.is_finite()) {
            return bad("positive_boost must be >= 1");
        }
        if self.max_duplicate_answers < 1 {
            return bad("max_duplicate_answers must be >= 1");
        }
        if !(self.balance_tolerance > 0.0 && self.balance_tolerance <= 1.0) {
            return bad("balance_tolerance must be in (0, 1]");
        }
        Ok(())
    }
}

/// A report and the image it belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub id: String,
    pub report: String,
}

impl From<&Sample> for ReportEntry {
    fn from(s: &Sample) -> Self {
        ReportEntry { id: s.id.clone(), report: s.report.clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub per_organ: BTreeMap<OrganId, usize>,
    pub total: usize,
    pub mean_answer_tokens: f64,
    pub positive: usize,
    pub normal: usize,
    pub positive_ratio: f64,
    pub config: Option<BuilderConfig>,
    pub candidates: usize,
    pub dropped_duplicates: usize,
    pub dropped_normal: usize,
    pub dropped_sparse_images: usize,
    /// `id:organ` of positive pairs removed while balancing.
    pub trimmed_positive: Vec<String>,
    pub trimmed_normal: usize,
    pub warnings: Vec<String>,
}

/// Splits at periods not inside decimal numbers and normalizes each sentence.
pub fn segment_report(report: &str) -> Vec<String> {
    let chars: Vec<char> = report.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let decimal = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if c == '.' && !decimal {
            out.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    out.push(cur);
    out.iter().map(|s| normalize_text(s)).filter(|s| !s.is_empty()).collect()
}

/// A sentence describes disease when it hits a keyword that no negation cue
/// precedes and it carries no normality word.
pub fn is_positive_sentence(sentence: &str, g: &DsGraph) -> bool {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    if words.iter().any(|w| NORMAL_WORDS.contains(w)) {
        return false;
    }
    g.keyword_hits(sentence)
        .iter()
        .any(|&(_, _, pos)| !words[..pos].iter().any(|w| NEGATION_CUES.contains(w)))
}

/// Joins sentences while the answer stays under the token limit; a lone
/// over-long first sentence is cut at the limit.
fn join_answer(sentences: &[&str]) -> String {
    let mut kept: Vec<String> = Vec::new();
    let mut n = 0;
    for s in sentences {
        let len = s.split_whitespace().count();
        if n + len < MAX_ANSWER_TOKENS {
            kept.push(s.to_string());
            n += len;
        } else if kept.is_empty() {
            kept.push(s.split_whitespace().take(MAX_ANSWER_TOKENS - 1).collect::<Vec<_>>().join(" "));
            break;
        } else {
            break;
        }
    }
    kept.iter().map(|s| format!("{s}.")).collect::<Vec<_>>().join(" ")
}

struct Candidate {
    pair: QAPair,
    positive: bool,
}

fn organ_rng(seed: u64, stage: u64, organ: OrganId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (stage << 32) ^ (organ.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Largest per-organ cap under which every count lies within `tol` of the mean.
fn balance_cap(counts: &[usize], tol: f64) -> usize {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    for cap in (min..=max).rev() {
        let capped: Vec<f64> = counts.iter().map(|&c| c.min(cap) as f64).collect();
        let mean = capped.iter().sum::<f64>() / capped.len() as f64;
        if capped.iter().all(|&c| (c - mean).abs() <= tol * mean + 1e-12) {
            return cap;
        }
    }
    min
}

/// Builds organ-level QA pairs from reports favoring positive findings, answer diversity,
/// diagnosis-rich images and organ balance.
pub fn build_qa_pairs(corpus: &[ReportEntry], g: &DsGraph, cfg: &BuilderConfig, seed: u64) -> Result<(Vec<QAPair>, BuildStats)> {
    cfg.validate()?;
    let mut stats = BuildStats { config: Some(cfg.clone()), ..Default::default() };

    let mut images: Vec<(&str, Vec<Candidate>)> = Vec::with_capacity(corpus.len());
    for entry in corpus {
        let mut groups: PerOrgan<Vec<String>> = PerOrgan::default();
        for s in segment_report(&entry.report) {
            for organ in assign_sentence_to_organ(&s, g) {
                if !groups[organ].contains(&s) {
                    groups[organ].push(s.clone());
                }
            }
        }
        let cands: Vec<Candidate> = groups
            .iter()
            .filter(|(_, ss)| !ss.is_empty())
            .map(|(organ, ss)| {
                let refs: Vec<&str> = ss.iter().map(String::as_str).collect();
                let answer = join_answer(&refs);
                let positive = segment_report(&answer).iter().any(|s| is_positive_sentence(s, g));
                Candidate { pair: QAPair { image_id: entry.id.clone(), organ, prompt: prompt(organ), answer }, positive }
            })
            .collect();
        images.push((&entry.id, cands));
    }
    stats.candidates = images.iter().map(|(_, c)| c.len()).sum();

    // Richest images first.
    images.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
    let before = images.len();
    images.retain(|(_, c)| c.len() >= cfg.min_pairs_per_image.max(1));
    stats.dropped_sparse_images = before - images.len();
    let ordered: Vec<Candidate> = images.into_iter().flat_map(|(_, c)| c).collect();

    // Later copies of an answer beyond the allowance are dropped.
    let mut seen: HashMap<(OrganId, String), usize> = HashMap::new();
    let mut deduped = Vec::with_capacity(ordered.len());
    for c in ordered {
        let n = seen.entry((c.pair.organ, c.pair.answer.clone())).or_default();
        *n += 1;
        if *n <= cfg.max_duplicate_answers {
            deduped.push(c);
        } else {
            stats.dropped_duplicates += 1;
        }
    }

    let mut by_organ: PerOrgan<Vec<Candidate>> = PerOrgan::default();
    for c in deduped {
        by_organ[c.pair.organ].push(c);
    }

    // Normal pairs are down-sampled to the organ's positives / boost.
    let total_positive: usize = by_organ.values().flatten().filter(|c| c.positive).count();
    if total_positive == 0 && cfg.positive_boost > 1.0 {
        stats.warnings.push("no positive pairs in corpus; positive_boost has no effect".into());
    }
    for organ in OrganId::ALL {
        let list = std::mem::take(&mut by_organ[organ]);
        let pos = list.iter().filter(|c| c.positive).count();
        let normal_idx: Vec<usize> = (0..list.len()).filter(|&i| !list[i].positive).collect();
        let quota = if pos == 0 { normal_idx.len() } else { ((pos as f64 / cfg.positive_boost).ceil() as usize).min(normal_idx.len()) };
        let mut keep = vec![true; list.len()];
        let mut rng = organ_rng(seed, 1, organ);
        let mut drop = normal_idx.clone();
        drop.shuffle(&mut rng);
        for &i in &drop[..normal_idx.len() - quota] {
            keep[i] = false;
        }
        stats.dropped_normal += normal_idx.len() - quota;
        by_organ[organ] = list.into_iter().zip(keep).filter_map(|(c, k)| k.then_some(c)).collect();
    }

    // Trim organs above the balance cap, normals first.
    let counts: Vec<usize> = by_organ.values().map(Vec::len).collect();
    let cap = balance_cap(&counts, cfg.balance_tolerance);
    for organ in OrganId::ALL {
        let list = std::mem::take(&mut by_organ[organ]);
        let excess = list.len().saturating_sub(cap);
        let mut keep = vec![true; list.len()];
        if excess > 0 {
            let mut rng = organ_rng(seed, 4, organ);
            let mut normals: Vec<usize> = (0..list.len()).filter(|&i| !list[i].positive).collect();
            let mut positives: Vec<usize> = (0..list.len()).filter(|&i| list[i].positive).collect();
            normals.shuffle(&mut rng);
            positives.shuffle(&mut rng);
            for &i in normals.iter().chain(&positives).take(excess) {
                keep[i] = false;
                if list[i].positive {
                    stats.trimmed_positive.push(format!("{}:{}", list[i].pair.image_id, organ));
                } else {
                    stats.trimmed_normal += 1;
                }
            }
        }
        by_organ[organ] = list.into_iter().zip(keep).filter_map(|(c, k)| k.then_some(c)).collect();
    }
    stats.trimmed_positive.sort();

    let mut out: Vec<Candidate> = by_organ.0.into_iter().flatten().collect();
    out.sort_by(|a, b| a.pair.image_id.cmp(&b.pair.image_id).then(a.pair.organ.cmp(&b.pair.organ)));
    let positive = out.iter().filter(|c| c.positive).count();
    let pairs: Vec<QAPair> = out.into_iter().map(|c| c.pair).collect();
    if pairs.is_empty() {
        return Ok((pairs, stats));
    }
    let summary = build_stats(&pairs, g)?;
    debug_assert_eq!(summary.positive, positive);
    Ok((pairs, merge(summary, stats)))
}

fn merge(summary: BuildStats, process: BuildStats) -> BuildStats {
    BuildStats {
        per_organ: summary.per_organ,
        total: summary.total,
        mean_answer_tokens: summary.mean_answer_tokens,
        positive: summary.positive,
        normal: summary.normal,
        positive_ratio: summary.positive_ratio,
        ..process
    }
}

/// Per-organ counts, mean answer length and positive share of a pair list.
pub fn build_stats(pairs: &[QAPair], g: &DsGraph) -> Result<BuildStats> {
    if pairs.is_empty() {
        return Err(OridError::EmptyCorpus);
    }
    let mut per_organ: BTreeMap<OrganId, usize> = OrganId::ALL.iter().map(|&o| (o, 0)).collect();
    let mut tokens = 0;
    let mut positive = 0;
    for p in pairs {
        *per_organ.entry(p.organ).or_default() += 1;
        tokens += p.answer_tokens();
        if segment_report(&p.answer).iter().any(|s| is_positive_sentence(s, g)) {
            positive += 1;
        }
    }
    let total = pairs.len();
    Ok(BuildStats {
        per_organ,
        total,
        mean_answer_tokens: tokens as f64 / total as f64,
        positive,
        normal: total - positive,
        positive_ratio: positive as f64 / total as f64,
        ..Default::default()
    })
}

/// One JSON object per line.
pub fn write_jsonl(path: impl AsRef<Path>, pairs: &[QAPair]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<QAPair>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
