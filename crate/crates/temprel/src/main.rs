//! Command-line surface: corpus generation, training, bootstrapping,
//! inference, evaluation, the composition table dump, the full experiment
//! matrix, and McNemar comparisons.

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use temprel::algebra::{build_composition_table, render_table, RelLabel};
use temprel::bootstrap::{bootstrap, shared_table, BootstrapMode};
use temprel::corpus::{candidate_edges, load_corpus, save_corpus, Corpus, EdgeKey};
use temprel::evaluation::{
    mcnemar, pairwise_prf, render_report, temporal_awareness, Bucket, PairedCorrectness,
    PredictedDoc, SystemMetrics,
};
use temprel::experiment::{
    machine_report, predict_corpus, run_experiment, RunConfig, TestInference,
};
use temprel::generator::gen_corpus;
use temprel::learner::{deserialize_model, serialize_model, train};
use temprel::TempRelError;

#[derive(Parser)]
#[command(name = "temprel", about = "Temporal relation extraction experiments")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the generator seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (0 = default).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output path for the subcommand's primary artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Local,
    Global,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic F/P/test corpora and print corpus statistics.
    Gen,
    /// Train a plain averaged perceptron on a corpus file's labeled edges.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: u32,
    },
    /// Run the bootstrap loop on F and P corpus files.
    Bootstrap {
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        p: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Global)]
        mode: ModeArg,
        #[arg(long, default_value_t = 5)]
        epochs: u32,
    },
    /// Label a corpus with a trained model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Ablation switch; the standard inference step is global.
        #[arg(long = "test-inference", value_enum, default_value_t = ModeArg::Global)]
        test_inference: ModeArg,
    },
    /// Evaluate a prediction file against a gold corpus.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Print the 36-entry transitivity composition table.
    Table,
    /// Run the System 1-9 matrix across seeds and emit the report.
    Experiment,
    /// McNemar's test between two prediction files on the same gold corpus.
    Mcnemar {
        #[arg(long)]
        pred_a: PathBuf,
        #[arg(long)]
        pred_b: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
}

// Distinct exit codes per failure class.
const EXIT_CONFIG: i32 = 2;
const EXIT_DATA: i32 = 3;
const EXIT_SOLVER: i32 = 4;
const EXIT_IO: i32 = 5;

fn exit_code_for(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<TempRelError>() {
        Some(TempRelError::Config(_)) => EXIT_CONFIG,
        Some(TempRelError::SolverCap(_)) | Some(TempRelError::TooManyFreeEdges(_)) => EXIT_SOLVER,
        Some(TempRelError::Io(_)) => EXIT_IO,
        Some(_) => EXIT_DATA,
        None => {
            if e.downcast_ref::<std::io::Error>().is_some() {
                EXIT_IO
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| TempRelError::Config(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.gen.seed = seed;
    }
    Ok(cfg)
}

fn path_or(base: &Option<PathBuf>, default: &str) -> PathBuf {
    base.clone().unwrap_or_else(|| PathBuf::from(default))
}

#[derive(Serialize, Deserialize)]
struct PredEdge {
    src: u32,
    dst: u32,
    label: RelLabel,
}

#[derive(Serialize, Deserialize)]
struct PredDocJson {
    doc_id: String,
    edges: Vec<PredEdge>,
}

fn save_predictions(preds: &BTreeMap<String, PredictedDoc>, path: &Path) -> anyhow::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (doc_id, labels) in preds {
        let j = PredDocJson {
            doc_id: doc_id.clone(),
            edges: labels
                .iter()
                .map(|(k, l)| PredEdge { src: k.src, dst: k.dst, label: *l })
                .collect(),
        };
        writeln!(f, "{}", serde_json::to_string(&j)?)?;
    }
    Ok(())
}

fn load_predictions(path: &Path) -> anyhow::Result<BTreeMap<String, PredictedDoc>> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let j: PredDocJson = serde_json::from_str(&line).map_err(|e| TempRelError::Parse {
            locus: format!("{}:{}", path.display(), n + 1),
            msg: e.to_string(),
        })?;
        let labels: PredictedDoc = j
            .edges
            .into_iter()
            .map(|e| (EdgeKey { src: e.src, dst: e.dst }, e.label))
            .collect();
        out.insert(j.doc_id, labels);
    }
    Ok(out)
}

fn corpus_stats(name: &str, corpus: &Corpus) {
    let docs = corpus.documents.len();
    let mut candidates = 0usize;
    let mut annotated = 0usize;
    for d in &corpus.documents {
        candidates += candidate_edges(d).len();
        annotated += d.annotated_edges().count();
    }
    let ratio = if candidates > 0 {
        100.0 * annotated as f64 / candidates as f64
    } else {
        0.0
    };
    println!("{name}: docs={docs} annotated_edges={annotated} candidate_edges={candidates} ratio={ratio:.1}%");
}

fn cmd_gen(cfg: &RunConfig) -> anyhow::Result<()> {
    let (f, p, test) = gen_corpus(&cfg.gen);
    let f_path = path_or(&cfg.paths.f_corpus, "f.jsonl");
    let p_path = path_or(&cfg.paths.p_corpus, "p.jsonl");
    let t_path = path_or(&cfg.paths.test_corpus, "test.jsonl");
    save_corpus(&f, &f_path)?;
    save_corpus(&p, &p_path)?;
    save_corpus(&test, &t_path)?;
    corpus_stats("F", &f);
    corpus_stats("P", &p);
    corpus_stats("test", &test);
    Ok(())
}

fn labeled_examples(corpus: &Corpus) -> Vec<(temprel::learner::FeatureVector, RelLabel)> {
    corpus
        .documents
        .iter()
        .flat_map(temprel::bootstrap::training_examples)
        .collect()
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    temprel::parallel::configure_jobs(cli.jobs);
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Gen => cmd_gen(&cfg)?,
        Command::Train { corpus, epochs } => {
            let c = load_corpus(corpus)?;
            let seed = cli.seed.unwrap_or(cfg.gen.seed);
            let model = train(&labeled_examples(&c), *epochs, seed)?;
            let out = cli
                .out
                .clone()
                .or(cfg.paths.model.clone())
                .unwrap_or_else(|| PathBuf::from("model.json"));
            std::fs::write(&out, serialize_model(&model, *epochs, seed))?;
            eprintln!("wrote {}", out.display());
        }
        Command::Bootstrap { f, p, mode, epochs } => {
            let f = load_corpus(f)?;
            let p = load_corpus(p)?;
            let mode = match mode {
                ModeArg::Local => BootstrapMode::Local,
                ModeArg::Global => BootstrapMode::Global,
            };
            let seed = cli.seed.unwrap_or(cfg.gen.seed);
            let ts = bootstrap(&f, &p, mode, cfg.criteria, *epochs, seed)?;
            for log in &ts.iterations {
                eprintln!("{}", serde_json::to_string(log)?);
            }
            let out = cli
                .out
                .clone()
                .or(cfg.paths.model.clone())
                .unwrap_or_else(|| PathBuf::from("model.json"));
            std::fs::write(&out, serialize_model(&ts.model, *epochs, seed))?;
            eprintln!("wrote {}", out.display());
        }
        Command::Infer { model, corpus, test_inference } => {
            let model = deserialize_model(&std::fs::read_to_string(model)?)?;
            let c = load_corpus(corpus)?;
            let docs: Vec<&temprel::corpus::Document> = c.documents.iter().collect();
            let mode = match test_inference {
                ModeArg::Local => TestInference::Local,
                ModeArg::Global => TestInference::Global,
            };
            let preds = predict_corpus(&docs, &model, shared_table(), mode)?;
            let out = path_or(&cli.out, "predictions.jsonl");
            save_predictions(&preds, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Eval { pred, gold } => {
            let preds = load_predictions(pred)?;
            let gold = load_corpus(gold)?;
            let docs: Vec<&temprel::corpus::Document> = gold.documents.iter().collect();
            let table = shared_table();
            let metrics = SystemMetrics {
                system_id: 0,
                same: pairwise_prf(&preds, &docs, Bucket::Same)?,
                nearby: pairwise_prf(&preds, &docs, Bucket::Nearby)?,
                overall: pairwise_prf(&preds, &docs, Bucket::Overall)?,
                awareness: temporal_awareness(&preds, &docs, table)?,
            };
            print!("{}", render_report(std::slice::from_ref(&metrics)));
            println!("{}", serde_json::to_string(&metrics)?);
        }
        Command::Table => {
            print!("{}", render_table(&build_composition_table(8)));
        }
        Command::Experiment => {
            let (f, p, test) = match (&cfg.paths.f_corpus, &cfg.paths.p_corpus, &cfg.paths.test_corpus) {
                (Some(f), Some(p), Some(t)) if f.exists() && p.exists() && t.exists() => {
                    (load_corpus(f)?, load_corpus(p)?, load_corpus(t)?)
                }
                _ => gen_corpus(&cfg.gen),
            };
            let report = run_experiment(&cfg, &f, &p, &test)?;
            print!("{}", render_report(&report.means));
            for m in &report.mcnemar {
                println!(
                    "mcnemar system {} vs {}: p = {:.6}",
                    m.system_a, m.system_b, m.p_value
                );
            }
            let out = cli
                .out
                .clone()
                .or(cfg.paths.report.clone())
                .unwrap_or_else(|| PathBuf::from("report.jsonl"));
            std::fs::write(&out, machine_report(&report, &cfg))?;
            eprintln!("wrote {}", out.display());
        }
        Command::Mcnemar { pred_a, pred_b, gold } => {
            let a = load_predictions(pred_a)?;
            let b = load_predictions(pred_b)?;
            let gold = load_corpus(gold)?;
            let mut pc = PairedCorrectness::default();
            for doc in &gold.documents {
                let (pa, pb) = (
                    a.get(&doc.doc_id).ok_or_else(|| {
                        TempRelError::Validation(format!("pred_a misses {}", doc.doc_id))
                    })?,
                    b.get(&doc.doc_id).ok_or_else(|| {
                        TempRelError::Validation(format!("pred_b misses {}", doc.doc_id))
                    })?,
                );
                for k in candidate_edges(doc) {
                    let gold_label = doc.edges[&k].label.ok_or_else(|| {
                        TempRelError::Validation(format!("gold misses label on {:?}", k))
                    })?;
                    pc.push(pa[&k] == gold_label, pb[&k] == gold_label);
                }
            }
            println!("{}", serde_json::json!({"p_value": mcnemar(&pc)?}));
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code_for(&e));
    }
}
