//! End-to-end experiment driver: per-system epoch tuning on dev, retraining
//! with dev folded in, global inference on the test split, metric
//! aggregation across seeds, and McNemar comparisons.

use crate::algebra::CompositionTable;
use crate::bootstrap::{run_system, shared_table, ConvergenceCriteria, SystemConfig, TrainedSystem};
use crate::corpus::{candidate_edges, Corpus, Document, Split};
use crate::evaluation::{
    pairwise_prf, temporal_awareness, Bucket, PairedCorrectness, Prf, PredictedDoc, SystemMetrics,
};
use crate::inference::{infer_global, infer_local, problem_for_document};
use crate::learner::WeightMatrix;
use crate::parallel::map_items;
use crate::{Result, TempRelError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PathsConfig {
    pub f_corpus: Option<PathBuf>,
    pub p_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub gen: crate::generator::GenParams,
    pub criteria: ConvergenceCriteria,
    pub epochs_grid: Vec<u32>,
    pub seeds: Vec<u64>,
    pub systems: Vec<u32>,
    /// Test-time inference mode; global unless overridden for ablation.
    pub test_inference: TestInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestInference {
    Local,
    Global,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            paths: PathsConfig::default(),
            gen: crate::generator::GenParams::default(),
            criteria: ConvergenceCriteria::default(),
            epochs_grid: vec![1, 3, 5, 10],
            seeds: (0..10).collect(),
            systems: (1..=9).collect(),
            test_inference: TestInference::Global,
        }
    }
}

/// Labels a document with the model, never reading its gold labels: the
/// document is stripped before the problem is built.
pub fn predict_document(
    doc: &Document,
    model: &WeightMatrix,
    table: &CompositionTable,
    mode: TestInference,
) -> Result<PredictedDoc> {
    let stripped = crate::bootstrap::strip_annotations(doc);
    let problem = problem_for_document(&stripped, model, table, false);
    let labels = match mode {
        TestInference::Local => infer_local(&problem).labels,
        TestInference::Global => infer_global(&problem)?.0.labels,
    };
    Ok(labels)
}

pub fn predict_corpus(
    docs: &[&Document],
    model: &WeightMatrix,
    table: &CompositionTable,
    mode: TestInference,
) -> Result<BTreeMap<String, PredictedDoc>> {
    let results = map_items(docs, |doc| predict_document(doc, model, table, mode));
    let mut out = BTreeMap::new();
    for (doc, r) in docs.iter().zip(results) {
        out.insert(doc.doc_id.clone(), r?);
    }
    Ok(out)
}

fn metrics_for(
    preds: &BTreeMap<String, PredictedDoc>,
    gold: &[&Document],
    table: &CompositionTable,
    system_id: u32,
) -> Result<SystemMetrics> {
    Ok(SystemMetrics {
        system_id,
        same: pairwise_prf(preds, gold, Bucket::Same)?,
        nearby: pairwise_prf(preds, gold, Bucket::Nearby)?,
        overall: pairwise_prf(preds, gold, Bucket::Overall)?,
        awareness: temporal_awareness(preds, gold, table)?,
    })
}

/// Per-edge exact-label correctness in (doc, edge) order, for McNemar.
fn correctness_vector(
    preds: &BTreeMap<String, PredictedDoc>,
    gold: &[&Document],
) -> Vec<bool> {
    let mut out = Vec::new();
    for doc in gold {
        let pred = &preds[&doc.doc_id];
        for k in candidate_edges(doc) {
            out.push(pred[&k] == doc.edges[&k].label.expect("gold label"));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub system_id: u32,
    pub seed: u64,
    pub epochs: u32,
    pub bootstrap_iterations: usize,
    pub fallback_docs: usize,
    pub metrics: SystemMetrics,
    #[serde(skip)]
    pub correctness: Vec<bool>,
}

/// Per-document search budget for dev scoring during epoch tuning. Model
/// selection only needs a relative ranking, and the exact solver is at its
/// slowest on the weak low-epoch models this loop has to evaluate, so a
/// document that exhausts the budget is scored with local inference.
const DEV_NODE_CAP: u64 = 200_000;

/// Dev predictions under the tuning budget.
fn predict_dev(
    docs: &[&Document],
    model: &WeightMatrix,
    table: &CompositionTable,
) -> Result<BTreeMap<String, PredictedDoc>> {
    let mut preds = BTreeMap::new();
    for doc in docs {
        let stripped = crate::bootstrap::strip_annotations(doc);
        let mut problem = problem_for_document(&stripped, model, table, false);
        problem.node_cap = DEV_NODE_CAP;
        let labels = match infer_global(&problem) {
            Ok((a, _)) => a.labels,
            Err(TempRelError::SolverCap(_)) => infer_local(&problem).labels,
            Err(e) => return Err(e),
        };
        preds.insert(doc.doc_id.clone(), labels);
    }
    Ok(preds)
}

/// Tunes epochs per system on the dev split of F (the whole pipeline is
/// re-run per grid entry; ties go to the earlier entry), retrains with dev
/// folded in, and evaluates on test.
pub fn run_system_seed(
    cfg: SystemConfig,
    f: &Corpus,
    p: &Corpus,
    test: &Corpus,
    run: &RunConfig,
    seed: u64,
) -> Result<SeedResult> {
    let table = shared_table();
    let f_train = Corpus {
        documents: f.of_split(Split::Train).cloned().collect(),
    };
    let dev_docs: Vec<&Document> = f.of_split(Split::Dev).collect();

    let mut best: Option<(u32, f64)> = None;
    if run.epochs_grid.len() > 1 && !dev_docs.is_empty() {
        for &epochs in &run.epochs_grid {
            let ts = run_system(cfg, &f_train, p, run.criteria, epochs, seed)?;
            let preds = predict_dev(&dev_docs, &ts.model, table)?;
            let prf = pairwise_prf(&preds, &dev_docs, Bucket::Overall)?;
            if best.map_or(true, |(_, f)| prf.f > f) {
                best = Some((epochs, prf.f));
            }
        }
    }
    let epochs = best
        .map(|(e, _)| e)
        .or_else(|| run.epochs_grid.first().copied())
        .unwrap_or(5);

    // Final model: dev folded back into F.
    let final_system: TrainedSystem = run_system(cfg, f, p, run.criteria, epochs, seed)?;

    let test_docs: Vec<&Document> = test.documents.iter().collect();
    let preds = predict_corpus(&test_docs, &final_system.model, table, run.test_inference)?;
    let metrics = metrics_for(&preds, &test_docs, table, cfg.id)?;
    let correctness = correctness_vector(&preds, &test_docs);
    Ok(SeedResult {
        system_id: cfg.id,
        seed,
        epochs,
        bootstrap_iterations: final_system.iterations.len(),
        fallback_docs: final_system.fallback_docs.len(),
        metrics,
        correctness,
    })
}

fn mean_prf(values: impl Iterator<Item = Prf> + Clone) -> Prf {
    let n = values.clone().count().max(1) as f64;
    let mut out = Prf::default();
    for v in values {
        out.p += v.p / n;
        out.r += v.r / n;
        out.f += v.f / n;
        out.degenerate |= v.degenerate;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct McNemarResult {
    pub system_a: u32,
    pub system_b: u32,
    pub p_value: f64,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub seed_results: Vec<SeedResult>,
    pub means: Vec<SystemMetrics>,
    pub mcnemar: Vec<McNemarResult>,
}

/// Runs the requested systems over all seeds and aggregates.
pub fn run_experiment(
    run: &RunConfig,
    f: &Corpus,
    p: &Corpus,
    test: &Corpus,
) -> Result<ExperimentReport> {
    let mut jobs: Vec<(SystemConfig, u64)> = Vec::new();
    for &id in &run.systems {
        let cfg = SystemConfig::from_id(id)?;
        for &seed in &run.seeds {
            jobs.push((cfg, seed));
        }
    }
    let results = map_items(&jobs, |(cfg, seed)| {
        run_system_seed(*cfg, f, p, test, run, *seed)
    });
    let mut seed_results = Vec::with_capacity(results.len());
    for r in results {
        seed_results.push(r?);
    }

    let mut means = Vec::new();
    for &id in &run.systems {
        let rows: Vec<&SeedResult> = seed_results.iter().filter(|r| r.system_id == id).collect();
        means.push(SystemMetrics {
            system_id: id,
            same: mean_prf(rows.iter().map(|r| r.metrics.same)),
            nearby: mean_prf(rows.iter().map(|r| r.metrics.nearby)),
            overall: mean_prf(rows.iter().map(|r| r.metrics.overall)),
            awareness: mean_prf(rows.iter().map(|r| r.metrics.awareness)),
        });
    }

    // McNemar over pooled per-edge correctness: (9 vs 1) and (9 vs 5).
    let pooled = |id: u32| -> Vec<bool> {
        run.seeds
            .iter()
            .flat_map(|&s| {
                seed_results
                    .iter()
                    .find(|r| r.system_id == id && r.seed == s)
                    .map(|r| r.correctness.clone())
                    .unwrap_or_default()
            })
            .collect()
    };
    let mut mcnemar = Vec::new();
    for (a, b) in [(9u32, 1u32), (9, 5)] {
        if run.systems.contains(&a) && run.systems.contains(&b) {
            let pc = PairedCorrectness { a: pooled(a), b: pooled(b) };
            mcnemar.push(McNemarResult {
                system_a: a,
                system_b: b,
                p_value: crate::evaluation::mcnemar(&pc)?,
            });
        }
    }

    Ok(ExperimentReport { seed_results, means, mcnemar })
}

/// Line-delimited machine-readable report. Deterministic for a fixed
/// config: no wall times or other environment-dependent values appear.
pub fn machine_report(report: &ExperimentReport, run: &RunConfig) -> String {
    let mut out = String::new();
    let config_echo = serde_json::json!({
        "type": "config",
        "gen": run.gen,
        "criteria": run.criteria,
        "epochs_grid": run.epochs_grid,
        "seeds": run.seeds,
        "systems": run.systems,
        "test_inference": run.test_inference,
    });
    out.push_str(&config_echo.to_string());
    out.push('\n');
    for r in &report.seed_results {
        out.push_str(&serde_json::to_string(r).unwrap());
        out.push('\n');
    }
    for m in &report.means {
        for rec in crate::evaluation::report_records(std::slice::from_ref(m)) {
            let line = serde_json::json!({
                "type": "mean",
                "system_id": rec.system_id,
                "bucket": rec.bucket,
                "p": rec.p,
                "r": rec.r,
                "f": rec.f,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    for m in &report.mcnemar {
        let line = serde_json::json!({
            "type": "mcnemar",
            "system_a": m.system_a,
            "system_b": m.system_b,
            "p_value": m.p_value,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{gen_corpus, GenParams};

    fn tiny_run() -> (RunConfig, Corpus, Corpus, Corpus) {
        let gen = GenParams {
            full_train_docs: 5,
            dev_docs: 1,
            partial_docs: 6,
            test_docs: 3,
            ..GenParams::default()
        };
        let (f, p, test) = gen_corpus(&gen);
        let run = RunConfig {
            gen,
            epochs_grid: vec![1, 3],
            seeds: vec![0, 1],
            systems: vec![1, 5, 9],
            ..RunConfig::default()
        };
        (run, f, p, test)
    }

    #[test]
    fn experiment_shape_and_determinism() {
        let (run, f, p, test) = tiny_run();
        let a = run_experiment(&run, &f, &p, &test).unwrap();
        assert_eq!(a.means.len(), 3);
        assert_eq!(a.seed_results.len(), 6);
        assert_eq!(a.mcnemar.len(), 2);
        let b = run_experiment(&run, &f, &p, &test).unwrap();
        assert_eq!(machine_report(&a, &run), machine_report(&b, &run));
    }

    #[test]
    fn test_labels_never_leak() {
        // Predictions must be identical whether or not the test document
        // carries gold labels.
        let (run, f, p, test) = tiny_run();
        let cfg = SystemConfig::from_id(1).unwrap();
        let ts = run_system(cfg, &f, &p, run.criteria, 2, 0).unwrap();
        let table = shared_table();
        let doc = &test.documents[0];
        let stripped = crate::bootstrap::strip_annotations(doc);
        let with_labels = predict_document(doc, &ts.model, table, TestInference::Global).unwrap();
        let without = predict_document(&stripped, &ts.model, table, TestInference::Global).unwrap();
        assert_eq!(with_labels, without);
    }
}
