//! Joint learning from a fully annotated corpus F and a partially
//! annotated corpus P: dataset transforms, the bootstrap loop with local
//! or global inference over P, and the System 1-9 experiment matrix.

use crate::algebra::{CompositionTable, RelLabel};
use crate::corpus::{
    candidate_edges, check_consistency, ConsistencyCheck, Corpus, Coverage, Document, EdgeKey,
    EdgeRecord, Provenance,
};
use crate::inference::{infer_global, infer_local, problem_for_document};
use crate::learner::{train, FeatureVector, WeightMatrix};
use crate::parallel::map_items;
use crate::{Result, TempRelError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingComposition {
    F,
    PFull,
    P,
    FPlusPFull,
    FPlusP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    None,
    Local,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PVariant {
    AsIs,
    FilledVague,
    Emptied,
}

/// One row of the experiment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SystemConfig {
    pub id: u32,
    pub composition: TrainingComposition,
    pub mode: BootstrapMode,
    pub p_variant: PVariant,
}

impl SystemConfig {
    /// The fixed mapping of ids to matrix rows.
    pub fn from_id(id: u32) -> Result<SystemConfig> {
        use BootstrapMode::*;
        use PVariant::*;
        use TrainingComposition::*;
        let (composition, mode, p_variant) = match id {
            1 => (F, None, AsIs),
            2 => (PFull, None, FilledVague),
            3 => (P, None, AsIs),
            4 => (FPlusPFull, None, FilledVague),
            5 => (FPlusP, None, AsIs),
            6 => (FPlusP, Local, Emptied),
            7 => (FPlusP, Global, Emptied),
            8 => (FPlusP, Local, AsIs),
            9 => (FPlusP, Global, AsIs),
            _ => return Err(TempRelError::Config(format!("unknown system id {id}"))),
        };
        Ok(SystemConfig { id, composition, mode, p_variant })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergenceCriteria {
    pub max_iterations: u32,
    /// Loop exits when the fraction of changed edge labels drops below this.
    pub change_threshold: f64,
}

impl Default for ConvergenceCriteria {
    fn default() -> ConvergenceCriteria {
        ConvergenceCriteria { max_iterations: 10, change_threshold: 0.01 }
    }
}

/// Per-iteration record for the run log.
#[derive(Debug, Clone, Serialize)]
pub struct IterationLog {
    pub iteration: u32,
    pub changed_fraction: f64,
    pub train_examples: usize,
    pub wall_secs: f64,
}

#[derive(Debug)]
pub struct TrainedSystem {
    pub model: WeightMatrix,
    pub iterations: Vec<IterationLog>,
    /// Documents that failed the consistency pre-check and fell back to
    /// local inference.
    pub fallback_docs: Vec<String>,
}

/// Fills every unannotated candidate edge with vague (provenance
/// bootstrapped); coverage becomes full. Rejects already-full documents.
pub fn fill_vague(doc: &Document) -> Result<Document> {
    if doc.coverage != Coverage::Partial {
        return Err(TempRelError::Validation(format!(
            "fill_vague requires a partial document, got {}",
            doc.doc_id
        )));
    }
    let mut out = doc.clone();
    for k in candidate_edges(doc) {
        let rec = out.edges.entry(k).or_insert_with(|| EdgeRecord {
            label: None,
            annotated: false,
            provenance: Provenance::Bootstrapped,
            features: vec![],
        });
        if !rec.annotated {
            rec.label = Some(RelLabel::Vague);
            rec.provenance = Provenance::Bootstrapped;
        }
    }
    out.coverage = Coverage::Full;
    Ok(out)
}

/// Removes all labels; nodes and features are retained. This is P^Empty.
pub fn strip_annotations(doc: &Document) -> Document {
    let mut out = doc.clone();
    out.coverage = Coverage::Partial;
    for rec in out.edges.values_mut() {
        rec.label = None;
        rec.annotated = false;
        rec.provenance = Provenance::Gold;
    }
    out
}

/// Labeled edges of a document as training pairs, in edge order.
pub fn training_examples(doc: &Document) -> Vec<(FeatureVector, RelLabel)> {
    doc.edges
        .values()
        .filter_map(|r| {
            r.label
                .map(|l| (FeatureVector::indicators(r.features.iter().cloned()), l))
        })
        .collect()
}

fn corpus_examples(docs: &[&Document]) -> Vec<(FeatureVector, RelLabel)> {
    docs.iter().flat_map(|d| training_examples(d)).collect()
}

/// Labels every candidate edge of `p` with the current model: per-edge
/// argmax in local mode, exact constrained inference in global mode.
/// Per-document search budget for the bootstrap fill. The fill is a
/// self-training heuristic, so a pathological document is not worth an
/// unbounded exact search; past this budget it falls back to local
/// inference (flagged, like an inconsistent clamp set). Test-time
/// inference uses the solver's full default cap and never falls back.
const FILL_NODE_CAP: u64 = 30_000;

/// Annotated edges keep their gold labels in both modes. Documents whose
/// clamps are inconsistent, and documents whose exact search exceeds the
/// fill budget, fall back to local inference; both cases are flagged so
/// the caller can log them.
fn infer_p_document(
    doc: &Document,
    model: &WeightMatrix,
    table: &CompositionTable,
    mode: BootstrapMode,
) -> Result<(BTreeMap<EdgeKey, RelLabel>, bool)> {
    let mut fallback = false;
    let mut labels = match mode {
        BootstrapMode::Local | BootstrapMode::None => {
            let p = problem_for_document(doc, model, table, false);
            infer_local(&p).labels
        }
        BootstrapMode::Global => {
            if check_consistency(doc, table) == ConsistencyCheck::Ok {
                let mut p = problem_for_document(doc, model, table, true);
                p.node_cap = FILL_NODE_CAP;
                match infer_global(&p) {
                    Ok((a, _)) => a.labels,
                    Err(TempRelError::SolverCap(_)) => {
                        fallback = true;
                        let p = problem_for_document(doc, model, table, false);
                        infer_local(&p).labels
                    }
                    Err(e) => return Err(e),
                }
            } else {
                fallback = true;
                let p = problem_for_document(doc, model, table, false);
                infer_local(&p).labels
            }
        }
    };
    // Gold preservation: annotated edges always keep their labels.
    for (k, rec) in doc.annotated_edges() {
        labels.insert(k, rec.label.expect("annotated edge has label"));
    }
    Ok((labels, fallback))
}

/// A copy of `p` with every candidate edge labeled per `labels`.
fn filled_document(doc: &Document, labels: &BTreeMap<EdgeKey, RelLabel>) -> Document {
    let mut out = doc.clone();
    for (k, l) in labels {
        let rec = out.edges.entry(*k).or_insert_with(|| EdgeRecord {
            label: None,
            annotated: false,
            provenance: Provenance::Bootstrapped,
            features: vec![],
        });
        if !rec.annotated {
            rec.label = Some(*l);
            rec.provenance = Provenance::Bootstrapped;
        }
    }
    out.coverage = Coverage::Full;
    out
}

/// Algorithm: train on F, then repeatedly fill P with the current model's
/// inference and retrain from scratch on F plus the filled documents, until
/// the filled labels stabilize or the iteration cap is reached.
pub fn bootstrap(
    f: &Corpus,
    p: &Corpus,
    mode: BootstrapMode,
    criteria: ConvergenceCriteria,
    epochs: u32,
    seed: u64,
) -> Result<TrainedSystem> {
    let f_docs: Vec<&Document> = f.documents.iter().collect();
    let f_examples = corpus_examples(&f_docs);
    if f_examples.is_empty() {
        return Err(TempRelError::EmptyTrainingSet);
    }
    let mut model = train(&f_examples, epochs, seed)?;
    let mut iterations = Vec::new();
    let mut fallback_docs = Vec::new();

    let total_p_edges: usize = p.documents.iter().map(|d| candidate_edges(d).len()).sum();
    if total_p_edges == 0 {
        return Ok(TrainedSystem { model, iterations, fallback_docs });
    }

    let table = shared_table();
    let mut prev: Option<Vec<BTreeMap<EdgeKey, RelLabel>>> = None;
    for iteration in 1..=criteria.max_iterations {
        let start = Instant::now();
        let results = map_items(&p.documents, |doc| infer_p_document(doc, &model, table, mode));
        let mut all_labels = Vec::with_capacity(results.len());
        for (doc, r) in p.documents.iter().zip(results) {
            let (labels, fell_back) = r?;
            if fell_back && iteration == 1 {
                fallback_docs.push(doc.doc_id.clone());
            }
            all_labels.push(labels);
        }

        let changed_fraction = match &prev {
            None => 1.0,
            Some(old) => {
                let changed: usize = old
                    .iter()
                    .zip(&all_labels)
                    .map(|(a, b)| a.iter().filter(|(k, l)| b[k] != **l).count())
                    .sum();
                changed as f64 / total_p_edges as f64
            }
        };

        let filled: Vec<Document> = p
            .documents
            .iter()
            .zip(&all_labels)
            .map(|(d, labels)| filled_document(d, labels))
            .collect();
        let mut examples = f_examples.clone();
        for d in &filled {
            examples.extend(training_examples(d));
        }
        model = train(&examples, epochs, seed)?;

        iterations.push(IterationLog {
            iteration,
            changed_fraction,
            train_examples: examples.len(),
            wall_secs: start.elapsed().as_secs_f64(),
        });
        let converged = prev.is_some() && changed_fraction < criteria.change_threshold;
        prev = Some(all_labels);
        if converged {
            break;
        }
    }
    Ok(TrainedSystem { model, iterations, fallback_docs })
}

/// Lazily built composition table shared by the whole process.
pub fn shared_table() -> &'static CompositionTable {
    use std::sync::OnceLock;
    static TABLE: OnceLock<CompositionTable> = OnceLock::new();
    TABLE.get_or_init(|| crate::algebra::build_composition_table(8))
}

/// Applies the row's P-variant transform and runs either plain union
/// training (rows 1-5) or the bootstrap loop (rows 6-9).
pub fn run_system(
    cfg: SystemConfig,
    f: &Corpus,
    p: &Corpus,
    criteria: ConvergenceCriteria,
    epochs: u32,
    seed: u64,
) -> Result<TrainedSystem> {
    let transformed: Corpus = match cfg.p_variant {
        PVariant::AsIs => p.clone(),
        PVariant::FilledVague => Corpus {
            documents: p.documents.iter().map(fill_vague).collect::<Result<_>>()?,
        },
        PVariant::Emptied => Corpus {
            documents: p.documents.iter().map(strip_annotations).collect(),
        },
    };

    match cfg.mode {
        BootstrapMode::None => {
            let mut docs: Vec<&Document> = Vec::new();
            use TrainingComposition::*;
            if matches!(cfg.composition, F | FPlusPFull | FPlusP) {
                docs.extend(f.documents.iter());
            }
            if matches!(cfg.composition, PFull | P | FPlusPFull | FPlusP) {
                docs.extend(transformed.documents.iter());
            }
            let examples = corpus_examples(&docs);
            let model = train(&examples, epochs, seed)?;
            Ok(TrainedSystem { model, iterations: Vec::new(), fallback_docs: Vec::new() })
        }
        mode => bootstrap(f, &transformed, mode, criteria, epochs, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::generator::{gen_corpus, gen_document, mask_to_partial, GenParams};
    use crate::inference::assignment_consistent;
    use crate::learner::serialize_model;

    fn small_params() -> GenParams {
        GenParams {
            full_train_docs: 6,
            dev_docs: 1,
            partial_docs: 8,
            test_docs: 3,
            ..GenParams::default()
        }
    }

    fn partial_doc(i: usize) -> Document {
        let params = GenParams::default();
        let (full, _) = gen_document(&params, 20, i, format!("p{i}"), Split::Train);
        mask_to_partial(&full, 0.2, 4.0, i as u64)
    }

    #[test]
    fn fill_vague_counts() {
        let doc = partial_doc(0);
        let annotated = doc.annotated_edges().count();
        let total = candidate_edges(&doc).len();
        let filled = fill_vague(&doc).unwrap();
        assert_eq!(filled.coverage, Coverage::Full);
        let vague_added = filled
            .edges
            .values()
            .filter(|r| !r.annotated && r.label == Some(RelLabel::Vague))
            .count();
        assert_eq!(vague_added, total - annotated);
        // Annotated labels unchanged.
        for (k, rec) in doc.annotated_edges() {
            assert_eq!(filled.edges[&k].label, rec.label);
        }
        // Fully annotated input rejected.
        assert!(fill_vague(&filled).is_err());
    }

    #[test]
    fn strip_annotations_properties() {
        let doc = partial_doc(1);
        let stripped = strip_annotations(&doc);
        assert_eq!(stripped.annotated_edges().count(), 0);
        assert!(stripped.edges.values().all(|r| r.label.is_none()));
        for (k, rec) in &stripped.edges {
            assert_eq!(rec.features, doc.edges[k].features);
        }
        assert_eq!(strip_annotations(&stripped), stripped);
    }

    #[test]
    fn bootstrap_with_empty_p_is_plain_training() {
        let (f, _, _) = gen_corpus(&small_params());
        let empty = Corpus::default();
        let ts = bootstrap(&f, &empty, BootstrapMode::Global, ConvergenceCriteria::default(), 2, 3)
            .unwrap();
        assert!(ts.iterations.is_empty());
        let direct = train(
            &corpus_examples(&f.documents.iter().collect::<Vec<_>>()),
            2,
            3,
        )
        .unwrap();
        assert_eq!(
            serialize_model(&ts.model, 2, 3),
            serialize_model(&direct, 2, 3)
        );
    }

    #[test]
    fn bootstrap_empty_f_is_error() {
        let (_, p, _) = gen_corpus(&small_params());
        let empty = Corpus::default();
        assert!(matches!(
            bootstrap(&empty, &p, BootstrapMode::Local, ConvergenceCriteria::default(), 1, 0),
            Err(TempRelError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn bootstrap_runs_and_converges() {
        let (f, p, _) = gen_corpus(&small_params());
        let criteria = ConvergenceCriteria::default();
        let ts = bootstrap(&f, &p, BootstrapMode::Global, criteria, 2, 5).unwrap();
        assert!(!ts.iterations.is_empty());
        assert!(ts.iterations.len() as u32 <= criteria.max_iterations);
        for log in &ts.iterations {
            assert!((0.0..=1.0).contains(&log.changed_fraction));
        }
    }

    #[test]
    fn gold_preservation_and_global_consistency() {
        let (f, p, _) = gen_corpus(&small_params());
        let f_docs: Vec<&Document> = f.documents.iter().collect();
        let model = train(&corpus_examples(&f_docs), 2, 5).unwrap();
        let table = shared_table();
        for doc in &p.documents {
            for mode in [BootstrapMode::Local, BootstrapMode::Global] {
                let (labels, _) = infer_p_document(doc, &model, table, mode).unwrap();
                for (k, rec) in doc.annotated_edges() {
                    assert_eq!(labels[&k], rec.label.unwrap(), "gold not preserved");
                }
                if mode == BootstrapMode::Global {
                    let edges = candidate_edges(doc);
                    assert!(assignment_consistent(&labels, &edges, table));
                }
            }
        }
    }

    #[test]
    fn system_configs_map_to_rows() {
        let c = SystemConfig::from_id(7).unwrap();
        assert_eq!(c.mode, BootstrapMode::Global);
        assert_eq!(c.p_variant, PVariant::Emptied);
        let c = SystemConfig::from_id(2).unwrap();
        assert_eq!(c.composition, TrainingComposition::PFull);
        assert_eq!(c.mode, BootstrapMode::None);
        assert!(SystemConfig::from_id(10).is_err());
    }

    #[test]
    fn run_system_determinism() {
        let (f, p, _) = gen_corpus(&small_params());
        let cfg = SystemConfig::from_id(9).unwrap();
        let criteria = ConvergenceCriteria::default();
        let a = run_system(cfg, &f, &p, criteria, 2, 11).unwrap();
        let b = run_system(cfg, &f, &p, criteria, 2, 11).unwrap();
        assert_eq!(
            serialize_model(&a.model, 2, 11),
            serialize_model(&b.model, 2, 11)
        );
    }

    #[test]
    fn system5_is_single_train_on_union() {
        let (f, p, _) = gen_corpus(&small_params());
        let cfg = SystemConfig::from_id(5).unwrap();
        let ts = run_system(cfg, &f, &p, ConvergenceCriteria::default(), 2, 1).unwrap();
        assert!(ts.iterations.is_empty());
        let mut docs: Vec<&Document> = f.documents.iter().collect();
        docs.extend(p.documents.iter());
        let direct = train(&corpus_examples(&docs), 2, 1).unwrap();
        assert_eq!(
            serialize_model(&ts.model, 2, 1),
            serialize_model(&direct, 2, 1)
        );
    }

    #[test]
    fn system7_touches_no_p_labels() {
        // P^Empty: training examples from P must all be bootstrapped, and
        // the stripped corpus has no annotated edges at all.
        let (_, p, _) = gen_corpus(&small_params());
        let stripped: Vec<Document> = p.documents.iter().map(strip_annotations).collect();
        assert!(stripped.iter().all(|d| d.annotated_edges().count() == 0));
    }
}
