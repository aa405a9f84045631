//! Command implementations behind the `fmtm` binary.
//!
//! Every command returns a [`CommandResult`] with the files it wrote and a
//! JSON summary; the binary prints the summary on standard output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fmtm::analysis::{self, Relevance};
use fmtm::corpus::{load_corpus, write_corpus, MultiModalCorpus, Vocabulary};
use fmtm::evaluation::{self, EvalReport, ModalityPerplexity};
use fmtm::generative::{make_synthetic_scenario, ModelParams, ScenarioConfig};
use fmtm::inference::{fit, TrainConfig, TrainState};
use fmtm::par::Executor;
use fmtm::persistence::{load_model, save_model, ModelArchive, Provenance};
use fmtm::prediction::{predict_corpus, write_predictions_jsonl, Predictor};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Serialize)]
pub struct CommandResult {
    pub artifacts: Vec<PathBuf>,
    pub summary: Value,
}

/// Settings shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct GlobalOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub config: Option<PathBuf>,
}

impl GlobalOptions {
    /// The training configuration: the `--config` file (or defaults) with
    /// `--seed` and `--workers` applied on top.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn executor(&self) -> Executor {
        Executor::new(self.workers.unwrap_or(1))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Samples a synthetic corpus. Without a scenario file the built-in
/// two-modality scenario is used; `--seed` overrides the scenario seed.
///
/// Writes `corpus/` (manifest, vocabularies, documents), `truth.fmtm` and
/// `latent.jsonl` into `out_dir`.
pub fn cmd_generate(scenario: Option<&Path>, out_dir: &Path, global: &GlobalOptions) -> Result<CommandResult> {
    let mut spec = match scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ScenarioConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ScenarioConfig::acceptance(),
    };
    if let Some(seed) = global.seed {
        spec.seed = seed;
    }
    let (truth, corpus, latent) = make_synthetic_scenario(&spec, &global.executor())?;
    create_dir(out_dir)?;
    let manifest = write_corpus(&corpus, out_dir.join("corpus"))?;
    let truth_path = out_dir.join("truth.fmtm");
    let provenance = Provenance {
        corpus_hash: corpus.content_hash(),
        seed: spec.seed,
        ..Provenance::default()
    };
    save_model(&truth, &provenance, &truth_path)?;
    let latent_path = out_dir.join("latent.jsonl");
    let mut body = String::new();
    for rec in &latent {
        body.push_str(&serde_json::to_string(rec)?);
        body.push('\n');
    }
    write_file(&latent_path, body)?;
    Ok(CommandResult {
        artifacts: vec![manifest, truth_path, latent_path],
        summary: json!({
            "command": "generate",
            "documents": corpus.len(),
            "seed": spec.seed,
            "corpus_hash": corpus.content_hash(),
        }),
    })
}

/// Archive provenance for a finished training run.
pub fn provenance(corpus: &MultiModalCorpus, state: &TrainState) -> Provenance {
    let names = state.params.layout.names();
    let train_perplexity = state
        .trace
        .last()
        .map(|t| {
            names
                .iter()
                .zip(&t.train_perplexity)
                .map(|(n, &p)| ModalityPerplexity { modality: n.clone(), perplexity: p })
                .collect()
        })
        .unwrap_or_default();
    Provenance {
        config_hash: state.config.hash(),
        corpus_hash: corpus.content_hash(),
        seed: state.config.seed,
        sweeps: state.sweeps(),
        final_elbo: state.final_elbo(),
        converged: state.converged,
        train_perplexity,
        config: Some(state.config.clone()),
    }
}

/// The trace CSV written next to a model archive.
pub fn trace_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".trace.csv");
    model.with_file_name(name)
}

/// Trains on a corpus and writes the archive and `<model>.trace.csv`.
pub fn cmd_train(corpus_path: &Path, out_model: &Path, tied_xi: bool, global: &GlobalOptions) -> Result<CommandResult> {
    let mut cfg = global.train_config()?;
    cfg.tied_xi |= tied_xi;
    cfg.validate()?;
    let corpus = load_corpus(corpus_path)?;
    let state = fit(&corpus, &cfg)?;
    let prov = provenance(&corpus, &state);
    save_model(&state.params, &prov, out_model)?;
    let trace = trace_path(out_model);
    write_file(&trace, state.trace_csv())?;
    Ok(CommandResult {
        artifacts: vec![out_model.to_path_buf(), trace],
        summary: json!({
            "command": "train",
            "tied_xi": cfg.tied_xi,
            "sweeps": prov.sweeps,
            "converged": prov.converged,
            "final_elbo": prov.final_elbo,
            "train_perplexity": prov.train_perplexity,
            "config_hash": prov.config_hash,
            "corpus_hash": prov.corpus_hash,
        }),
    })
}

/// Predicts the target modality of every eligible document and writes them
/// as JSON lines.
#[allow(clippy::too_many_arguments)]
pub fn cmd_predict(
    model: &Path,
    corpus_path: &Path,
    observed: &[String],
    target: &str,
    predictor: Predictor,
    top_words: usize,
    out: &Path,
    global: &GlobalOptions,
) -> Result<CommandResult> {
    let archive = load_model(model)?;
    let corpus = load_corpus(corpus_path)?;
    let opts = global.train_config()?.local_options();
    let observed: Vec<&str> = observed.iter().map(String::as_str).collect();
    let preds = predict_corpus(&corpus, &archive.params, &observed, target, predictor, &opts, &global.executor())?;
    let vocab = &corpus.vocabularies[corpus.modality_index(target)?];
    write_predictions_jsonl(&preds, vocab, top_words.min(vocab.size()), out)?;
    Ok(CommandResult {
        artifacts: vec![out.to_path_buf()],
        summary: json!({
            "command": "predict",
            "target": target,
            "observed": observed,
            "predictions": preds.len(),
            "skipped": corpus.len() - preds.len(),
        }),
    })
}

fn model_name(path: &Path, index: usize, taken: &[String]) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("model{index}"));
    if taken.contains(&stem) {
        format!("{stem}-{index}")
    } else {
        stem
    }
}

/// Evaluation report of one archive on a corpus, as `cmd_evaluate` computes
/// it.
pub fn evaluate_archive(
    name: &str,
    archive: &ModelArchive,
    corpus: &MultiModalCorpus,
    global: &GlobalOptions,
) -> Result<EvalReport> {
    let opts = global.train_config()?.local_options();
    Ok(evaluation::evaluate_model(
        name,
        &archive.params,
        &archive.provenance.config_hash,
        archive.provenance.train_perplexity.clone(),
        corpus,
        Predictor::Conditional,
        &opts,
        &global.executor(),
    )?)
}

/// Writes `<name>.report.json` per model and, for two or more models,
/// `comparison.csv`.
pub fn cmd_evaluate(models: &[PathBuf], corpus_path: &Path, out_dir: &Path, global: &GlobalOptions) -> Result<CommandResult> {
    if models.is_empty() {
        bail!("no models given");
    }
    let corpus = load_corpus(corpus_path)?;
    create_dir(out_dir)?;
    let mut reports = Vec::new();
    let mut names = Vec::new();
    let mut artifacts = Vec::new();
    for (i, path) in models.iter().enumerate() {
        let archive = load_model(path)?;
        let name = model_name(path, i, &names);
        let report = evaluate_archive(&name, &archive, &corpus, global)?;
        let report_path = out_dir.join(format!("{name}.report.json"));
        write_file(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
        artifacts.push(report_path);
        names.push(name);
        reports.push((report, archive.provenance.corpus_hash));
    }
    let training_hashes: Vec<&String> = reports.iter().map(|(_, h)| h).collect();
    if training_hashes.iter().any(|h| *h != training_hashes[0]) {
        bail!("models were trained on different corpora");
    }
    let reports: Vec<EvalReport> = reports.into_iter().map(|(r, _)| r).collect();
    let mut summary = json!({ "command": "evaluate", "reports": reports });
    if reports.len() >= 2 {
        let rows = evaluation::compare_models(&reports)?;
        let csv = out_dir.join("comparison.csv");
        write_file(&csv, evaluation::comparison_csv(&rows))?;
        artifacts.push(csv);
        summary["comparison"] = serde_json::to_value(&rows)?;
    }
    Ok(CommandResult { artifacts, summary })
}

/// Options of `cmd_analyze`.
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub source: Option<String>,
    pub target: Option<String>,
    pub threshold: f64,
    pub relevance: Relevance,
    pub top_words: usize,
    /// Corpus whose vocabularies name the terms; synthetic names otherwise.
    pub corpus: Option<PathBuf>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            source: None,
            target: None,
            threshold: analysis::DEFAULT_THRESHOLD,
            relevance: Relevance::Mean,
            top_words: 10,
            corpus: None,
        }
    }
}

fn vocabularies(params: &ModelParams, corpus: Option<&Path>) -> Result<Vec<Vocabulary>> {
    match corpus {
        Some(path) => {
            let corpus = load_corpus(path)?;
            params
                .layout
                .names()
                .iter()
                .map(|n| Ok(corpus.vocabularies[corpus.modality_index(n)?].clone()))
                .collect()
        }
        None => params
            .layout
            .names()
            .iter()
            .zip(params.vocab_sizes())
            .map(|(n, w)| Ok(Vocabulary::synthetic(n, w)?))
            .collect(),
    }
}

/// Writes `sticks.csv`, `cross_block.csv` and `ranking.csv` into `out_dir`.
pub fn cmd_analyze(model: &Path, out_dir: &Path, opts: &AnalyzeOptions) -> Result<CommandResult> {
    let archive = load_model(model)?;
    if archive.provenance.sweeps == 0 {
        bail!("{} is not a trained model", model.display());
    }
    let params = &archive.params;
    let names = params.layout.names();
    if names.len() < 2 {
        bail!("analysis needs a model with at least two modalities");
    }
    let source = opts.source.clone().unwrap_or_else(|| names[0].clone());
    let target = opts.target.clone().unwrap_or_else(|| names[1].clone());
    let result = analysis::analyze(params, &source, &target, opts.threshold, opts.relevance)?;
    let vocabs = vocabularies(params, opts.corpus.as_deref())?;
    let vocab = &vocabs[params.modality_index(&source)?];

    create_dir(out_dir)?;
    let sticks = analysis::stick_report(params);
    let files = [
        ("sticks.csv", analysis::stick_report_csv(&sticks)),
        ("cross_block.csv", analysis::cross_block_csv(&result)),
        ("ranking.csv", analysis::ranking_csv(&result, params, vocab, opts.top_words)?),
    ];
    let mut artifacts = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        write_file(&path, body)?;
        artifacts.push(path);
    }
    let private: Vec<usize> = (0..result.rho.len()).filter(|&k| result.is_private(k)).collect();
    Ok(CommandResult {
        artifacts,
        summary: json!({
            "command": "analyze",
            "source": source,
            "target": target,
            "threshold": opts.threshold,
            "relevance": opts.relevance,
            "rho": result.rho,
            "ranking": result.ranking,
            "private": private,
            "sticks": sticks,
        }),
    })
}
