//! Text-generation metrics and rule-based clinical-efficacy scoring.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_text;
use crate::error::{OridError, Result};

/// Floor for zero n-gram match counts.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

/// Lowercased, punctuation-free word tokens.
pub fn words(text: &str) -> Vec<String> {
    normalize_text(text).split_whitespace().map(str::to_string).collect()
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    out
}

/// Corpus BLEU@1..=4 with one reference per candidate.
pub fn bleu_scores<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<[f64; 4]> {
    if candidates.is_empty() {
        return Err(OridError::InvalidArgument("BLEU over an empty candidate set".into()));
    }
    if candidates.len() != references.len() {
        return Err(OridError::InvalidArgument(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refr) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += refr.len();
        for n in 1..=4 {
            let rc = ngram_counts(refr, n);
            for (gram, count) in ngram_counts(cand, n) {
                matches[n - 1] += count.min(rc.get(&gram).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }
    if c_len == 0 {
        return Ok([0.0; 4]);
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    let log_p: Vec<f64> = (0..4)
        .map(|k| {
            let m = if matches[k] == 0 { BLEU_EPSILON } else { matches[k] as f64 };
            (m / totals[k].max(1) as f64).ln()
        })
        .collect();
    Ok(std::array::from_fn(|i| {
        let n = i + 1;
        bp * (log_p[..n].iter().sum::<f64>() / n as f64).exp()
    }))
}

/// Corpus BLEU@n for `n` in 1..=4.
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(OridError::InvalidArgument(format!("BLEU order must be 1-4, got {n}")));
    }
    Ok(bleu_scores(candidates, references)?[n - 1])
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure weighted toward recall by `beta = 1.2`.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

const SUFFIXES: [&str; 12] = ["ational", "ations", "ation", "ings", "ing", "ness", "ment", "ies", "es", "ed", "ly", "s"];

/// Suffix-stripping stem: drops the first listed suffix that leaves at least
/// three characters, then a trailing `e`.
pub fn stem(word: &str) -> String {
    let mut w = word.to_string();
    for suf in SUFFIXES {
        if w.len() >= suf.len() + 3 && w.ends_with(suf) {
            w.truncate(w.len() - suf.len());
            if suf == "ies" {
                w.push('y');
            }
            break;
        }
    }
    if w.len() > 3 && w.ends_with('e') {
        w.pop();
    }
    w
}

/// METEOR with exact then stem matching and parameters (alpha 0.9, gamma 0.5, beta 3).
pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let mut align: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut used = vec![false; reference.len()];
    let stages: [fn(&str, &str) -> bool; 2] = [|a, b| a == b, |a, b| stem(a) == stem(b)];
    for same in stages {
        for (i, c) in candidate.iter().enumerate() {
            if align[i].is_some() {
                continue;
            }
            if let Some(j) = (0..reference.len()).find(|&j| !used[j] && same(c.as_ref(), reference[j].as_ref())) {
                align[i] = Some(j);
                used[j] = true;
            }
        }
    }
    let m = align.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, a) in align.iter().enumerate() {
        if let Some(j) = *a {
            match prev {
                Some((pi, pj)) if pi + 1 == i && pj + 1 == j => {}
                _ => chunks += 1,
            }
            prev = Some((i, j));
        }
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Present,
    Absent,
    Unmentioned,
}

pub const OBSERVATIONS: [&str; 14] = [
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "enlarged cardiomediastinum",
    "fracture",
    "lung lesion",
    "lung opacity",
    "no finding",
    "pleural effusion",
    "pleural other",
    "pneumonia",
    "pneumothorax",
    "support devices",
];

pub const NO_FINDING: usize = 8;
pub const SUPPORT_DEVICES: usize = 13;

fn observation_phrases(i: usize) -> &'static [&'static str] {
    match i {
        0 => &["atelectasis", "atelectatic"],
        1 => &["cardiomegaly", "cardiac enlargement", "enlarged heart"],
        2 => &["consolidation", "consolidations"],
        3 => &["edema"],
        4 => &["enlarged cardiomediastinum", "widened mediastinum", "mediastinal widening", "hilar enlargement"],
        5 => &["fracture", "fractures"],
        6 => &["nodule", "nodules", "mass", "lesion", "lesions"],
        7 => &["opacity", "opacities"],
        9 => &["pleural effusion", "pleural effusions", "effusion", "effusions"],
        10 => &["pleural thickening", "pleural plaque", "pleural plaques"],
        11 => &["pneumonia"],
        12 => &["pneumothorax"],
        13 => &["tube", "catheter", "pacemaker", "support device", "support devices"],
        _ => &[],
    }
}

const NEGATIONS: [&[&str]; 5] = [&["no"], &["without"], &["free", "of"], &["clear", "of"], &["resolved"]];

/// Fourteen ternary observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(pub [Label; 14]);

impl LabelVector {
    pub fn get(&self, observation: &str) -> Option<Label> {
        OBSERVATIONS.iter().position(|&o| o == observation).map(|i| self.0[i])
    }
}

/// Splits at periods that are not between digits.
fn sentences(report: &str) -> Vec<String> {
    let chars: Vec<char> = report.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let decimal = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if (c == '.' && !decimal) || c == '\n' {
            out.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    out.push(cur);
    out.into_iter().map(|s| normalize_text(&s)).filter(|s| !s.is_empty()).collect()
}

/// Keyword/negation labeler: a mention is negated when a cue precedes it in its sentence.
pub fn ce_labels(report: &str) -> LabelVector {
    let mut labels = [Label::Unmentioned; 14];
    for sentence in sentences(report) {
        let w: Vec<&str> = sentence.split_whitespace().collect();
        let cue_positions: Vec<usize> = (0..w.len())
            .filter(|&i| NEGATIONS.iter().any(|cue| w[i..].starts_with(cue)))
            .collect();
        for (obs, label) in labels.iter_mut().enumerate() {
            for phrase in observation_phrases(obs) {
                let p: Vec<&str> = phrase.split_whitespace().collect();
                for start in (0..w.len()).filter(|&s| w[s..].starts_with(&p)) {
                    let negated = cue_positions.iter().any(|&c| c < start);
                    *label = match (*label, negated) {
                        (Label::Present, _) | (_, false) => Label::Present,
                        (_, true) => Label::Absent,
                    };
                }
            }
        }
    }
    let any_finding = labels.iter().enumerate().any(|(i, l)| i != NO_FINDING && i != SUPPORT_DEVICES && *l == Label::Present);
    labels[NO_FINDING] = if any_finding { Label::Absent } else { Label::Present };
    LabelVector(labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged precision, recall and F1 with `Present` as the positive class.
pub fn ce_prf(pred: &[LabelVector], reference: &[LabelVector]) -> Result<Prf> {
    if pred.len() != reference.len() {
        return Err(OridError::InvalidArgument(format!("{} predictions but {} references", pred.len(), reference.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, r) in pred.iter().zip(reference) {
        for (a, b) in p.0.iter().zip(&r.0) {
            match (*a == Label::Present, *b == Label::Present) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(Prf { precision, recall, f1 })
}

/// NLG columns plus clinical-efficacy scores for a set of generated reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    #[serde(rename = "BLEU@1")]
    pub bleu1: f64,
    #[serde(rename = "BLEU@2")]
    pub bleu2: f64,
    #[serde(rename = "BLEU@3")]
    pub bleu3: f64,
    #[serde(rename = "BLEU@4")]
    pub bleu4: f64,
    #[serde(rename = "METEOR")]
    pub meteor: f64,
    #[serde(rename = "ROUGE-L")]
    pub rouge_l: f64,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
}

impl MetricTable {
    pub const NLG_COLUMNS: [&'static str; 6] = ["BLEU@1", "BLEU@2", "BLEU@3", "BLEU@4", "METEOR", "ROUGE-L"];
    pub const CE_COLUMNS: [&'static str; 3] = ["P", "R", "F1"];
}

impl fmt::Display for MetricTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols: Vec<&str> = Self::NLG_COLUMNS.iter().chain(&Self::CE_COLUMNS).copied().collect();
        let vals = [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.meteor,
            self.rouge_l,
            self.precision,
            self.recall,
            self.f1,
        ];
        writeln!(f, "{}", cols.iter().map(|c| format!("{c:>8}")).collect::<String>())?;
        write!(f, "{}", vals.iter().map(|v| format!("{v:>8.4}")).collect::<String>())
    }
}

/// Scores aligned prediction/reference report texts.
pub fn score_reports<S: AsRef<str>>(predictions: &[S], references: &[S]) -> Result<MetricTable> {
    if predictions.len() != references.len() {
        return Err(OridError::InvalidArgument(format!(
            "{} predictions but {} references",
            predictions.len(),
            references.len()
        )));
    }
    let cand: Vec<Vec<String>> = predictions.iter().map(|p| words(p.as_ref())).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|r| words(r.as_ref())).collect();
    let b = bleu_scores(&cand, &refs)?;
    let n = cand.len() as f64;
    let meteor_mean = cand.iter().zip(&refs).map(|(c, r)| meteor(c, r)).sum::<f64>() / n;
    let rouge_mean = cand.iter().zip(&refs).map(|(c, r)| rouge_l(c, r)).sum::<f64>() / n;
    let pl: Vec<LabelVector> = predictions.iter().map(|p| ce_labels(p.as_ref())).collect();
    let rl: Vec<LabelVector> = references.iter().map(|r| ce_labels(r.as_ref())).collect();
    let prf = ce_prf(&pl, &rl)?;
    Ok(MetricTable {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        meteor: meteor_mean,
        rouge_l: rouge_mean,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<String> {
        words(s)
    }

    #[test]
    fn bleu_hand_counts() {
        // "the cat sat" vs "the cat sat down": p1=p2=p3=1, no 4-grams.
        let bp = (1.0f64 - 4.0 / 3.0).exp();
        let b = bleu_scores(&[t("the cat sat")], &[t("the cat sat down")]).unwrap();
        assert!((b[0] - bp).abs() < 1e-12 && (b[2] - bp).abs() < 1e-12);
        assert!((b[3] - bp * (BLEU_EPSILON.ln() / 4.0).exp()).abs() < 1e-15);
        let same = t("there is a small left pleural effusion");
        assert_eq!(bleu(std::slice::from_ref(&same), std::slice::from_ref(&same), 4).unwrap(), 1.0);
        assert!(bleu(&[t("a b")], &[t("c d")], 1).unwrap() < 1e-8);
        assert!(bleu::<String>(&[], &[], 4).is_err());
    }

    #[test]
    fn rouge_hand_lcs() {
        let (a, b) = (t("a b c d"), t("a c b d"));
        assert_eq!(lcs_len(&a, &b), 3);
        let (p, r) = (0.75, 0.75);
        let want = (1.0 + 1.44) * p * r / (r + 1.44 * p);
        assert!((rouge_l(&a, &b) - want).abs() < 1e-12);
        assert_eq!(rouge_l(&a, &a), 1.0);
        assert_eq!(rouge_l(&t("x y"), &t("z w")), 0.0);
        assert_eq!(rouge_l::<String>(&[], &a), 0.0);
    }

    #[test]
    fn meteor_identical_and_stems() {
        assert!((meteor(&t("heart normal"), &t("heart normal")) - 0.9375).abs() < 1e-12);
        assert_eq!(meteor(&t("a b"), &t("c d")), 0.0);
        assert_eq!(stem("effusions"), stem("effusion"));
        assert!(meteor(&t("effusions"), &t("effusion")) > 0.0);
    }

    #[test]
    fn labeler_negation() {
        let l = ce_labels("There is a small pleural effusion.");
        assert_eq!(l.get("pleural effusion"), Some(Label::Present));
        assert_eq!(l.get("no finding"), Some(Label::Absent));
        let l = ce_labels("No pleural effusion.");
        assert_eq!(l.get("pleural effusion"), Some(Label::Absent));
        assert_eq!(l.get("no finding"), Some(Label::Present));
        assert_eq!(l.get("pneumonia"), Some(Label::Unmentioned));
    }

    #[test]
    fn prf_arithmetic() {
        let mk = |present: &[usize]| {
            let mut v = [Label::Unmentioned; 14];
            for &i in present {
                v[i] = Label::Present;
            }
            LabelVector(v)
        };
        // 3 TP, 1 FP, 2 FN.
        let pred = [mk(&[0, 1]), mk(&[2, 3])];
        let gold = [mk(&[0, 1, 4]), mk(&[2, 5])];
        let p = ce_prf(&pred, &gold).unwrap();
        assert!((p.precision - 0.75).abs() < 1e-12 && (p.recall - 0.6).abs() < 1e-12);
        assert!((p.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-12);
        assert_eq!(ce_prf(&gold, &gold).unwrap(), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(ce_prf(&[mk(&[])], &[mk(&[3])]).unwrap(), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert!(ce_prf(&pred, &gold[..1]).is_err());
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["the", "lungs", "are", "clear", "heart", "is", "normal"]), 1..10)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn metrics_bounded(a in sentence(), b in sentence()) {
            for x in bleu_scores(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap() {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            prop_assert!((0.0..=1.0).contains(&rouge_l(&a, &b)));
            prop_assert!((0.0..=1.0).contains(&meteor(&a, &b)));
            let m = a.len() as f64;
            prop_assert!((meteor(&a, &a) - (1.0 - 0.5 / (m * m * m))).abs() < 1e-12);
        }

        #[test]
        fn corpus_bleu_is_order_free(pairs in prop::collection::vec((sentence(), sentence()), 1..6)) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let (mut c2, mut r2) = (c.clone(), r.clone());
            c2.reverse();
            r2.reverse();
            prop_assert_eq!(bleu_scores(&c, &r).unwrap(), bleu_scores(&c2, &r2).unwrap());
        }
    }
}
