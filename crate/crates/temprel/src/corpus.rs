//! Corpus data model: documents, events, edges, annotation coverage,
//! JSONL serialization, candidate-edge generation under the sentence
//! window, and constraint propagation over annotated edges.

use crate::algebra::{CompositionTable, LabelSet, RelLabel, ALL_LABELS};
use crate::{Result, TempRelError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// A canonically oriented event pair: `src < dst` always.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub src: u32,
    pub dst: u32,
}

impl EdgeKey {
    /// Panics if `a == b`.
    pub fn new(a: u32, b: u32) -> EdgeKey {
        assert_ne!(a, b, "self-edge");
        if a < b {
            EdgeKey { src: a, dst: b }
        } else {
            EdgeKey { src: b, dst: a }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gold,
    Bootstrapped,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Full,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventNode {
    pub id: u32,
    pub sentence: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<RelLabel>,
    pub annotated: bool,
    pub provenance: Provenance,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub split: Split,
    pub coverage: Coverage,
    pub window: u32,
    pub nodes: Vec<EventNode>,
    pub edges: BTreeMap<EdgeKey, EdgeRecord>,
}

impl Document {
    /// The label on (a, b) in either orientation; `None` if unlabeled or absent.
    pub fn label(&self, a: u32, b: u32) -> Option<RelLabel> {
        let key = EdgeKey::new(a, b);
        let l = self.edges.get(&key)?.label?;
        Some(if a < b { l } else { l.inverse() })
    }

    pub fn sentence_of(&self, id: u32) -> u32 {
        self.nodes[id as usize].sentence
    }

    pub fn annotated_edges(&self) -> impl Iterator<Item = (EdgeKey, &EdgeRecord)> {
        self.edges
            .iter()
            .filter(|(_, r)| r.annotated)
            .map(|(k, r)| (*k, r))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(move |d| d.split == split)
    }
}

/// Permissible labels per candidate edge.
pub type DomainMap = BTreeMap<EdgeKey, LabelSet>;

/// All pairs (i, j), i < j, within the document's sentence window, in
/// lexicographic order.
pub fn candidate_edges(doc: &Document) -> Vec<EdgeKey> {
    let mut out = Vec::new();
    let n = doc.nodes.len() as u32;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = doc.sentence_of(j).abs_diff(doc.sentence_of(i));
            if d <= doc.window {
                out.push(EdgeKey { src: i, dst: j });
            }
        }
    }
    out
}

/// Triangles (i, j, k), i < j < k, whose three edges are all in `keys`.
pub fn triangles(keys: &[EdgeKey]) -> Vec<(u32, u32, u32)> {
    let set: std::collections::BTreeSet<EdgeKey> = keys.iter().copied().collect();
    let mut nodes: Vec<u32> = keys.iter().flat_map(|k| [k.src, k.dst]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let mut out = Vec::new();
    for (a, &i) in nodes.iter().enumerate() {
        for (b, &j) in nodes.iter().enumerate().skip(a + 1) {
            if !set.contains(&EdgeKey { src: i, dst: j }) {
                continue;
            }
            for &k in nodes.iter().skip(b + 1) {
                if set.contains(&EdgeKey { src: j, dst: k })
                    && set.contains(&EdgeKey { src: i, dst: k })
                {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

/// Shrinks `domains` to the triangle-consistency fixpoint.
///
/// A label survives on an edge of a triangle only if some pair of labels in
/// the other two domains completes a jointly consistent triangle. Domains
/// only shrink, so the fixpoint is unique regardless of visitation order.
pub fn refine_domains(domains: &mut DomainMap, tris: &[(u32, u32, u32)], table: &CompositionTable) {
    let mut changed = true;
    while changed {
        changed = false;
        for &tri in tris {
            changed |= refine_triangle(domains, tri, table) != [false; 3];
        }
    }
}

/// One triangle-consistency step: shrinks the three domains of `tri` to the
/// labels that participate in some jointly consistent triple. Returns which
/// of the edges (ij, jk, ik) changed.
pub fn refine_triangle(
    domains: &mut DomainMap,
    (i, j, k): (u32, u32, u32),
    table: &CompositionTable,
) -> [bool; 3] {
    let kij = EdgeKey { src: i, dst: j };
    let kjk = EdgeKey { src: j, dst: k };
    let kik = EdgeKey { src: i, dst: k };
    let dij = domains[&kij];
    let djk = domains[&kjk];
    let dik = domains[&kik];
    if dij.is_empty() || djk.is_empty() || dik.is_empty() {
        return [false; 3];
    }

    let mut nij = LabelSet::EMPTY;
    let mut njk = LabelSet::EMPTY;
    let mut nik = LabelSet::EMPTY;
    for r_ij in dij.iter() {
        for r_jk in djk.iter() {
            for r_ik in dik.iter() {
                if table.triangle_consistent(r_ij, r_jk, r_ik) {
                    nij.insert(r_ij);
                    njk.insert(r_jk);
                    nik.insert(r_ik);
                }
            }
        }
    }
    let out = [nij != dij, njk != djk, nik != dik];
    if out[0] {
        domains.insert(kij, nij);
    }
    if out[1] {
        domains.insert(kjk, njk);
    }
    if out[2] {
        domains.insert(kik, nik);
    }
    out
}

/// Initializes annotated edges to their gold singleton and everything else
/// to the full set, then propagates triangle consistency to fixpoint.
pub fn propagate_domains(doc: &Document, table: &CompositionTable) -> DomainMap {
    let keys = candidate_edges(doc);
    let mut domains: DomainMap = keys
        .iter()
        .map(|k| {
            let d = match doc.edges.get(k) {
                Some(r) if r.annotated => LabelSet::singleton(r.label.expect("annotated edge without label")),
                _ => LabelSet::FULL,
            };
            (*k, d)
        })
        .collect();
    let tris = triangles(&keys);
    refine_domains(&mut domains, &tris, table);
    domains
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsistencyCheck {
    Ok,
    Conflict(Vec<EdgeKey>),
}

/// Ok iff propagation yields no empty domain; otherwise the edges whose
/// domains emptied.
pub fn check_consistency(doc: &Document, table: &CompositionTable) -> ConsistencyCheck {
    let domains = propagate_domains(doc, table);
    let conflicts: Vec<EdgeKey> = domains
        .iter()
        .filter(|(_, d)| d.is_empty())
        .map(|(k, _)| *k)
        .collect();
    if conflicts.is_empty() {
        ConsistencyCheck::Ok
    } else {
        ConsistencyCheck::Conflict(conflicts)
    }
}

// --- serialization ---------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EdgeJson {
    src: u32,
    dst: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    annotated: bool,
    #[serde(default)]
    provenance: Option<Provenance>,
    features: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocJson {
    doc_id: String,
    split: Split,
    coverage: Coverage,
    window: u32,
    events: Vec<EventNode>,
    edges: Vec<EdgeJson>,
}

fn doc_to_json(doc: &Document) -> DocJson {
    DocJson {
        doc_id: doc.doc_id.clone(),
        split: doc.split,
        coverage: doc.coverage,
        window: doc.window,
        events: doc.nodes.clone(),
        edges: doc
            .edges
            .iter()
            .map(|(k, r)| EdgeJson {
                src: k.src,
                dst: k.dst,
                label: r.label.map(|l| l.name().to_string()),
                annotated: r.annotated,
                provenance: Some(r.provenance),
                features: r.features.clone(),
            })
            .collect(),
    }
}

fn doc_from_json(j: DocJson, locus: &str) -> Result<Document> {
    let mut edges = BTreeMap::new();
    for e in j.edges {
        if e.src >= e.dst {
            return Err(TempRelError::Validation(format!(
                "{locus}: edge ({}, {}) is not canonically oriented",
                e.src, e.dst
            )));
        }
        let label = match &e.label {
            None => None,
            Some(name) => Some(RelLabel::from_name(name).ok_or_else(|| {
                TempRelError::Validation(format!("{locus}: unknown label {name:?}"))
            })?),
        };
        if e.annotated && label.is_none() {
            return Err(TempRelError::Validation(format!(
                "{locus}: annotated edge ({}, {}) has no label",
                e.src, e.dst
            )));
        }
        edges.insert(
            EdgeKey { src: e.src, dst: e.dst },
            EdgeRecord {
                label,
                annotated: e.annotated,
                provenance: e.provenance.unwrap_or(Provenance::Gold),
                features: e.features,
            },
        );
    }
    for (n, ev) in j.events.iter().enumerate() {
        if ev.id != n as u32 {
            return Err(TempRelError::Validation(format!(
                "{locus}: event ids must be dense 0..n-1, got {} at position {n}",
                ev.id
            )));
        }
    }
    Ok(Document {
        doc_id: j.doc_id,
        split: j.split,
        coverage: j.coverage,
        window: j.window,
        nodes: j.events,
        edges,
    })
}

/// Writes one JSON object per line.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for doc in &corpus.documents {
        let line = serde_json::to_string(&doc_to_json(doc)).expect("document serializes");
        writeln!(f, "{line}")?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut documents = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let locus = format!("{}:{}", path.display(), n + 1);
        let j: DocJson = serde_json::from_str(&line).map_err(|e| TempRelError::Parse {
            locus: locus.clone(),
            msg: e.to_string(),
        })?;
        let doc = doc_from_json(j, &locus)?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(TempRelError::Validation(format!(
                "{locus}: duplicate doc_id {:?}",
                doc.doc_id
            )));
        }
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

/// The full label domain, exported for callers building domains by hand.
pub fn full_domain(keys: &[EdgeKey]) -> DomainMap {
    keys.iter().map(|k| (*k, LabelSet::FULL)).collect()
}

pub fn all_labels() -> [RelLabel; 6] {
    ALL_LABELS
}
