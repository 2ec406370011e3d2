//! Metrics: bucketed pairwise P/R/F, the temporal awareness metric
//! (closure + transitive reduction over definite edges), McNemar's test,
//! and report rendering.

use crate::algebra::{CompositionTable, RelLabel};
use crate::corpus::{candidate_edges, Document, EdgeKey};
use crate::{Result, TempRelError};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    /// Both events in the same sentence.
    Same,
    /// Sentence distance exactly 1.
    Nearby,
    /// All candidate edges.
    Overall,
}

fn in_bucket(doc: &Document, k: EdgeKey, bucket: Bucket) -> bool {
    let d = doc.sentence_of(k.src).abs_diff(doc.sentence_of(k.dst));
    match bucket {
        Bucket::Same => d == 0,
        Bucket::Nearby => d == 1,
        Bucket::Overall => true,
    }
}

/// Pairwise confusion counts over non-vague labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub predicted_nonvague: usize,
    pub gold_nonvague: usize,
    pub correct_nonvague: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, other: ConfusionCounts) {
        self.predicted_nonvague += other.predicted_nonvague;
        self.gold_nonvague += other.gold_nonvague;
        self.correct_nonvague += other.correct_nonvague;
    }
}

/// Precision/recall/F1 with the empty-denominator-is-zero convention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
    /// Set when a denominator was empty and the metric was forced to 0.
    pub degenerate: bool,
}

pub fn prf_from_counts(c: ConfusionCounts) -> Prf {
    let mut degenerate = false;
    let p = if c.predicted_nonvague > 0 {
        c.correct_nonvague as f64 / c.predicted_nonvague as f64
    } else {
        degenerate = true;
        0.0
    };
    let r = if c.gold_nonvague > 0 {
        c.correct_nonvague as f64 / c.gold_nonvague as f64
    } else {
        degenerate = true;
        0.0
    };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    Prf { p, r, f, degenerate }
}

/// Predicted labels for one document's candidate edges.
pub type PredictedDoc = BTreeMap<EdgeKey, RelLabel>;

/// Counts correct/predicted/gold non-vague edges in one bucket.
///
/// "Correct" requires equal non-vague labels; vague on either side counts
/// only through the denominators.
pub fn confusion_counts(
    pred: &PredictedDoc,
    gold_doc: &Document,
    bucket: Bucket,
) -> Result<ConfusionCounts> {
    let keys = candidate_edges(gold_doc);
    if keys.len() != pred.len() || !keys.iter().all(|k| pred.contains_key(k)) {
        return Err(TempRelError::Validation(format!(
            "prediction coverage mismatch for {}",
            gold_doc.doc_id
        )));
    }
    let mut c = ConfusionCounts::default();
    for k in keys {
        if !in_bucket(gold_doc, k, bucket) {
            continue;
        }
        let gold = gold_doc.edges[&k].label.ok_or_else(|| {
            TempRelError::Validation(format!("gold document {} has unlabeled edges", gold_doc.doc_id))
        })?;
        let p = pred[&k];
        if p.is_definite() {
            c.predicted_nonvague += 1;
        }
        if gold.is_definite() {
            c.gold_nonvague += 1;
        }
        if p.is_definite() && p == gold {
            c.correct_nonvague += 1;
        }
    }
    Ok(c)
}

/// Micro-averaged pairwise P/R/F over documents for one bucket.
pub fn pairwise_prf(
    preds: &BTreeMap<String, PredictedDoc>,
    gold: &[&Document],
    bucket: Bucket,
) -> Result<Prf> {
    let mut total = ConfusionCounts::default();
    for doc in gold {
        let pred = preds.get(&doc.doc_id).ok_or_else(|| {
            TempRelError::Validation(format!("missing predictions for {}", doc.doc_id))
        })?;
        total.add(confusion_counts(pred, doc, bucket)?);
    }
    Ok(prf_from_counts(total))
}

// --- temporal awareness -----------------------------------------------------

/// A definite-labeled graph over `n_nodes` events: map from canonical pair
/// to a definite label. Vague edges are simply absent.
pub type DefiniteGraph = BTreeMap<EdgeKey, RelLabel>;

pub fn definite_graph(pred: &PredictedDoc) -> DefiniteGraph {
    pred.iter()
        .filter(|(_, l)| l.is_definite())
        .map(|(k, l)| (*k, *l))
        .collect()
}

fn get_oriented(g: &DefiniteGraph, a: u32, b: u32) -> Option<RelLabel> {
    let l = *g.get(&EdgeKey::new(a, b))?;
    Some(if a < b { l } else { l.inverse() })
}

fn set_oriented(g: &mut DefiniteGraph, a: u32, b: u32, l: RelLabel) {
    let key = EdgeKey::new(a, b);
    g.insert(key, if a < b { l } else { l.inverse() });
}

/// Fixpoint closure: adds every edge whose label is forced to a unique
/// definite value by composing two definite edges. A predicted graph may
/// be globally inconsistent (inference only constrains triangles whose
/// three pairs are all candidate edges, while composition here chains
/// across any distance), so a forced label that contradicts an edge
/// already in the graph is skipped: explicit or earlier-derived labels
/// win, and the visiting order is fixed, keeping the result deterministic.
pub fn closure(g: &DefiniteGraph, n_nodes: u32, table: &CompositionTable) -> Result<DefiniteGraph> {
    let mut out = g.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for j in 0..n_nodes {
            for i in 0..n_nodes {
                if i == j {
                    continue;
                }
                let Some(r1) = get_oriented(&out, i, j) else { continue };
                for k in 0..n_nodes {
                    if k == i || k == j {
                        continue;
                    }
                    let Some(r2) = get_oriented(&out, j, k) else { continue };
                    let composed = table.compose(r1, r2);
                    if composed.len() == 1 {
                        let forced = composed.iter().next().unwrap();
                        if !forced.is_definite() {
                            continue;
                        }
                        match get_oriented(&out, i, k) {
                            Some(_) => {}
                            None => {
                                set_oriented(&mut out, i, k, forced);
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Deterministic greedy transitive reduction: visit definite edges in
/// canonical order and drop any edge whose label is still forced by the
/// closure of the remaining edges.
pub fn reduce(g: &DefiniteGraph, n_nodes: u32, table: &CompositionTable) -> Result<DefiniteGraph> {
    let mut kept = g.clone();
    let keys: Vec<EdgeKey> = g.keys().copied().collect();
    for k in keys {
        let label = kept[&k];
        kept.remove(&k);
        let cl = closure(&kept, n_nodes, table)?;
        if cl.get(&k) != Some(&label) {
            kept.insert(k, label);
        }
    }
    Ok(kept)
}

/// Per-document numerator/denominator pairs for micro-averaging.
#[derive(Debug, Clone, Copy, Default)]
pub struct AwarenessCounts {
    pub p_num: usize,
    pub p_den: usize,
    pub r_num: usize,
    pub r_den: usize,
}

impl AwarenessCounts {
    pub fn add(&mut self, o: AwarenessCounts) {
        self.p_num += o.p_num;
        self.p_den += o.p_den;
        self.r_num += o.r_num;
        self.r_den += o.r_den;
    }

    pub fn prf(self) -> Prf {
        let mut degenerate = false;
        let p = if self.p_den > 0 {
            self.p_num as f64 / self.p_den as f64
        } else {
            degenerate = true;
            0.0
        };
        let r = if self.r_den > 0 {
            self.r_num as f64 / self.r_den as f64
        } else {
            degenerate = true;
            0.0
        };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Prf { p, r, f, degenerate }
    }
}

/// Temporal awareness counts for one document: precision credits reduced
/// predicted edges verified by the gold closure, recall the converse.
pub fn temporal_awareness_counts(
    pred: &DefiniteGraph,
    gold: &DefiniteGraph,
    n_nodes: u32,
    table: &CompositionTable,
) -> Result<AwarenessCounts> {
    let pred_closure = closure(pred, n_nodes, table)?;
    let gold_closure = closure(gold, n_nodes, table)?;
    let pred_reduced = reduce(pred, n_nodes, table)?;
    let gold_reduced = reduce(gold, n_nodes, table)?;

    let hits = |reduced: &DefiniteGraph, other_closure: &DefiniteGraph| {
        reduced
            .iter()
            .filter(|(k, l)| other_closure.get(k) == Some(l))
            .count()
    };
    Ok(AwarenessCounts {
        p_num: hits(&pred_reduced, &gold_closure),
        p_den: pred_reduced.len(),
        r_num: hits(&gold_reduced, &pred_closure),
        r_den: gold_reduced.len(),
    })
}

/// Micro-averaged temporal awareness over documents.
pub fn temporal_awareness(
    preds: &BTreeMap<String, PredictedDoc>,
    gold: &[&Document],
    table: &CompositionTable,
) -> Result<Prf> {
    let mut total = AwarenessCounts::default();
    for doc in gold {
        let pred = preds.get(&doc.doc_id).ok_or_else(|| {
            TempRelError::Validation(format!("missing predictions for {}", doc.doc_id))
        })?;
        let gold_graph: DefiniteGraph = doc
            .edges
            .iter()
            .filter_map(|(k, r)| r.label.filter(|l| l.is_definite()).map(|l| (*k, l)))
            .collect();
        let pred_graph = definite_graph(pred);
        let n = doc.nodes.len() as u32;
        total.add(temporal_awareness_counts(&pred_graph, &gold_graph, n, table)?);
    }
    Ok(total.prf())
}

// --- McNemar ----------------------------------------------------------------

/// Aligned per-edge correctness vectors for two systems on the same edges.
#[derive(Debug, Clone, Default)]
pub struct PairedCorrectness {
    pub a: Vec<bool>,
    pub b: Vec<bool>,
}

impl PairedCorrectness {
    pub fn push(&mut self, a: bool, b: bool) {
        self.a.push(a);
        self.b.push(b);
    }
}

/// Continuity-corrected McNemar p-value from discordant counts.
pub fn mcnemar_from_counts(b: u64, c: u64) -> f64 {
    if b + c == 0 {
        return 1.0;
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let chi2 = diff * diff / (b + c) as f64;
    // Upper tail of chi-square with 1 dof.
    statrs::function::erf::erfc((chi2 / 2.0).sqrt())
}

pub fn mcnemar(pc: &PairedCorrectness) -> Result<f64> {
    if pc.a.len() != pc.b.len() {
        return Err(TempRelError::Validation(format!(
            "paired vectors differ in length: {} vs {}",
            pc.a.len(),
            pc.b.len()
        )));
    }
    let mut b = 0u64;
    let mut c = 0u64;
    for (&x, &y) in pc.a.iter().zip(&pc.b) {
        match (x, y) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c))
}

// --- report -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SystemMetrics {
    pub system_id: u32,
    pub same: Prf,
    pub nearby: Prf,
    pub overall: Prf,
    pub awareness: Prf,
}

/// One machine-readable record per system/bucket.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRecord {
    pub system_id: u32,
    pub bucket: String,
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

pub fn report_records(rows: &[SystemMetrics]) -> Vec<ReportRecord> {
    let mut out = Vec::new();
    for row in rows {
        for (name, prf) in [
            ("same", row.same),
            ("nearby", row.nearby),
            ("overall", row.overall),
            ("awareness", row.awareness),
        ] {
            out.push(ReportRecord {
                system_id: row.system_id,
                bucket: name.to_string(),
                p: prf.p,
                r: prf.r,
                f: prf.f,
            });
        }
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:5.1}", x * 100.0)
}

/// Fixed-width text table, one row per system, percentages to one decimal.
pub fn render_report(rows: &[SystemMetrics]) -> String {
    let mut out = String::new();
    out.push_str(
        "Sys |   Same Sentence   |  Nearby Sentence  |      Overall      |     Awareness     \n",
    );
    out.push_str(
        "    |   P     R     F   |   P     R     F   |   P     R     F   |   P     R     F   \n",
    );
    for row in rows {
        out.push_str(&format!(
            "{:>3} | {} {} {} | {} {} {} | {} {} {} | {} {} {}\n",
            row.system_id,
            pct(row.same.p),
            pct(row.same.r),
            pct(row.same.f),
            pct(row.nearby.p),
            pct(row.nearby.r),
            pct(row.nearby.f),
            pct(row.overall.p),
            pct(row.overall.r),
            pct(row.overall.f),
            pct(row.awareness.p),
            pct(row.awareness.r),
            pct(row.awareness.f),
        ));
    }
    out
}
