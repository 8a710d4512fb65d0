//! Prior-knowledge disease-symptom graph: organ keyword sets, sentence
//! assignment and the 6-node adjacency (five organs plus the coarse node).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::normalize_text;
use crate::error::{OridError, Result};
use crate::organ::{OrganId, PerOrgan};
use crate::tensor::Mat;

const DEFAULT_GRAPH: &str = include_str!("../data/ds_graph.txt");

/// Number of graph nodes: the five organs followed by the coarse ("total") node.
pub const NODE_COUNT: usize = 6;
pub const TOTAL_NODE: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct DsGraph {
    pub organ_diseases: PerOrgan<BTreeSet<String>>,
    /// Undirected co-morbidity links, stored with the lower organ index first.
    pub comorbidity: BTreeSet<(OrganId, OrganId)>,
}

impl Default for DsGraph {
    fn default() -> Self {
        parse_ds_graph(DEFAULT_GRAPH).expect("bundled ds-graph parses")
    }
}

pub fn load_ds_graph(path: impl AsRef<Path>) -> Result<DsGraph> {
    parse_ds_graph(&std::fs::read_to_string(path)?)
}

/// Parses `organ: kw, kw, ...` lines and an optional `edges: a-b, c-d` line.
pub fn parse_ds_graph(text: &str) -> Result<DsGraph> {
    let mut diseases: PerOrgan<Option<BTreeSet<String>>> = PerOrgan::from_fn(|_| None);
    let mut comorbidity = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| OridError::Parse { line: lineno + 1, msg };
        let (key, rest) = line.split_once(':').ok_or_else(|| parse_err("expected 'key: values'".into()))?;
        let key = key.trim().to_ascii_lowercase();
        let items = rest.split(',').map(str::trim).filter(|s| !s.is_empty());
        if key == "edges" {
            for item in items {
                let (a, b) = item
                    .split_once('-')
                    .ok_or_else(|| parse_err(format!("edge '{item}' is not of the form a-b")))?;
                let (a, b) = (a.parse::<OrganId>()?, b.parse::<OrganId>()?);
                if a != b {
                    comorbidity.insert((a.min(b), a.max(b)));
                }
            }
            continue;
        }
        let organ: OrganId = key.parse().map_err(|_| parse_err(format!("unknown section '{key}'")))?;
        let set = diseases[organ].get_or_insert_with(BTreeSet::new);
        for item in items {
            let kw = normalize_text(item);
            if !kw.is_empty() {
                set.insert(kw);
            }
        }
    }
    let organ_diseases = PerOrgan::try_from_fn(|o| match diseases[o].take() {
        Some(set) if !set.is_empty() => Ok(set),
        Some(_) => Err(OridError::DsGraph(format!("organ '{o}' has an empty keyword set"))),
        None => Err(OridError::DsGraph(format!("missing organ '{o}'"))),
    })?;
    Ok(DsGraph { organ_diseases, comorbidity })
}

impl DsGraph {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (organ, kws) in self.organ_diseases.iter() {
            let list: Vec<&str> = kws.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{organ}: {}", list.join(", "));
        }
        let edges: Vec<String> = self.comorbidity.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        let _ = writeln!(out, "edges: {}", edges.join(", "));
        out
    }

    /// Every keyword occurrence in a normalized sentence as `(organ, keyword, word offset)`.
    pub fn keyword_hits<'a>(&'a self, sentence: &str) -> Vec<(OrganId, &'a str, usize)> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let mut hits = Vec::new();
        for (organ, kws) in self.organ_diseases.iter() {
            for kw in kws {
                let phrase: Vec<&str> = kw.split_whitespace().collect();
                if let Some(pos) = find_phrase(&words, &phrase) {
                    hits.push((organ, kw.as_str(), pos));
                }
            }
        }
        hits
    }
}

/// First word offset at which `phrase` occurs contiguously in `words`.
pub fn find_phrase(words: &[&str], phrase: &[&str]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > words.len() {
        return None;
    }
    words.windows(phrase.len()).position(|w| w == phrase)
}

/// Organs referenced by a normalized sentence, through a keyword phrase or the organ's name.
pub fn assign_sentence_to_organ(sentence: &str, g: &DsGraph) -> BTreeSet<OrganId> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let mut out: BTreeSet<OrganId> = g.keyword_hits(sentence).into_iter().map(|(o, _, _)| o).collect();
    for organ in OrganId::ALL {
        if organ.name_forms().iter().any(|n| words.contains(n)) {
            out.insert(organ);
        }
    }
    out
}

/// Symmetric 0/1 adjacency over (lung, heart, bone, pleural, mediastinum, total).
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    entries: Mat,
}

impl AdjacencyMatrix {
    pub fn identity() -> Self {
        AdjacencyMatrix { entries: Mat::identity(NODE_COUNT) }
    }

    pub fn from_mat(entries: Mat) -> Result<Self> {
        if entries.shape() != (NODE_COUNT, NODE_COUNT) {
            return Err(OridError::Shape(format!("adjacency must be 6x6, got {:?}", entries.shape())));
        }
        if entries.data().iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(OridError::InvalidArgument("adjacency entries must be 0 or 1".into()));
        }
        Ok(AdjacencyMatrix { entries })
    }

    pub fn get(&self, v: usize, u: usize) -> f64 {
        self.entries.get(v, u)
    }

    pub fn connected(&self, v: usize, u: usize) -> bool {
        self.entries.get(v, u) != 0.0
    }

    pub fn set(&mut self, v: usize, u: usize, value: bool) {
        let x = if value { 1.0 } else { 0.0 };
        self.entries.set(v, u, x);
        self.entries.set(u, v, x);
    }

    pub fn as_mat(&self) -> &Mat {
        &self.entries
    }

    /// Row-major neighbourhood mask, `true` where `adj[v, u] = 1`.
    pub fn mask(&self) -> Vec<bool> {
        self.entries.data().iter().map(|&x| x != 0.0).collect()
    }

    /// Removes every link of `node` except its self-loop.
    pub fn isolate(&mut self, node: usize) {
        for u in 0..NODE_COUNT {
            if u != node {
                self.set(node, u, false);
            }
        }
    }
}

/// Organs are linked when they share a keyword or are listed as co-morbid;
/// the total node links to everything and every node has a self-loop.
pub fn build_adjacency(g: &DsGraph) -> AdjacencyMatrix {
    let mut adj = AdjacencyMatrix::identity();
    for a in OrganId::ALL {
        for b in OrganId::ALL {
            if a >= b {
                continue;
            }
            let shared = !g.organ_diseases[a].is_disjoint(&g.organ_diseases[b]);
            if shared || g.comorbidity.contains(&(a, b)) {
                adj.set(a.index(), b.index(), true);
            }
        }
    }
    for v in 0..NODE_COUNT {
        adj.set(TOTAL_NODE, v, true);
    }
    adj
}
