//! The batch driver. Each subcommand is one stage reading and writing the
//! formats of this crate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use quisg_core::corpus::CorpusEntry;
use quisg_core::encoder::EmbeddingSource;
use quisg_core::extractor::{coverage_recall, KeySet};
use quisg_core::gradcheck::{finite_diff_check, GradCheckReport};
use quisg_core::graph::build_graph;
use quisg_core::metrics::{score, speaker_breakdown, EvalReport};
use quisg_core::pipeline::{
    self, answers, composed_loss, composed_store, extract, predict, prepare_corpus, train_extractor, train_qa, ExtractorModel, Prepared, QaModel,
    EXTRACTOR_PREFIX, QA_PREFIX,
};
use quisg_core::textseq::WhitespaceTokenizer;
use quisg_core::{ParameterStore, PipelineConfig, Tape};
use serde::Serialize;

use crate::artifacts::{read_answers, read_keysets, write_json, KeySets};
use crate::corpus_io::{self, CorpusFormat};
use crate::{config_io, tensor_io};

#[derive(Debug, Parser)]
#[command(name = "quisg", version, about = "Dialogue reading comprehension over speaker-scope graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat TOML file of pipeline settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one setting, e.g. `--set k=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// canonical, friendsqa or molweni.
    #[arg(long, default_value = "canonical")]
    pub corpus_format: CorpusFormat,
    /// JSON map from question id to recognized person names.
    #[arg(long)]
    pub ner: Option<PathBuf>,
    /// Precomputed sequence embeddings; replaces the trainable encoder.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the key-utterance extractor.
    TrainExtractor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Training log as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score units and export key sets.
    ExtractKeys {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint_in: Vec<PathBuf>,
        #[arg(long)]
        keysets: PathBuf,
        /// Coverage recall as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train graph attention and span heads on exported key sets.
    TrainQa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        keysets: PathBuf,
        #[arg(long)]
        checkpoint_out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decode answers.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        keysets: PathBuf,
        #[arg(long, required = true)]
        checkpoint_in: Vec<PathBuf>,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Score predictions against the corpus answers.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Adds coverage recall and key-set size to the report.
        #[arg(long)]
        keysets: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build the graph of one question and write it as DOT or JSON.
    InspectGraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        keysets: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        dot_out: Option<PathBuf>,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Finite-difference check of the whole chain on a shrunk model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Questions to check, taken from the start of the corpus.
        #[arg(long, default_value_t = 5)]
        questions: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

struct Session {
    cfg: PipelineConfig,
    corpus: Vec<CorpusEntry>,
    prepared: Vec<Prepared>,
    embeddings: Option<tensor_io::TensorMap>,
}

impl Session {
    fn open(c: &Common) -> anyhow::Result<Self> {
        let cfg = config_io::resolve(c.config.as_deref(), &c.set, c.seed)?;
        log::info!("seed {}", cfg.seed);
        log::info!("config {}", serde_json::to_string(&cfg)?);
        Self::with_config(c, cfg)
    }

    fn with_config(c: &Common, cfg: PipelineConfig) -> anyhow::Result<Self> {
        let corpus = corpus_io::load(&c.corpus, c.corpus_format)?.entries;
        let ner = c.ner.as_deref().map(corpus_io::load_ner).transpose()?;
        let prepared = prepare_corpus(&corpus, &cfg, &WhitespaceTokenizer, ner.as_ref())?;
        let embeddings = c.embeddings.as_deref().map(tensor_io::read).transpose()?;
        Ok(Self {
            cfg,
            corpus,
            prepared,
            embeddings,
        })
    }

    fn toy(&self) -> bool {
        self.embeddings.is_none()
    }

    fn emb(&self) -> Option<&dyn EmbeddingSource> {
        self.embeddings.as_ref().map(|m| m as &dyn EmbeddingSource)
    }

    fn questions(&self) -> Vec<quisg_core::corpus::Question> {
        self.prepared.iter().map(|p| p.question.clone()).collect()
    }

    fn keysets(&self, path: &Path) -> anyhow::Result<KeySets> {
        let keys = read_keysets(path)?;
        for p in &self.prepared {
            let id = &p.question.id;
            let e = keys.get(id).with_context(|| format!("{}: no key set for question {id}", path.display()))?;
            let n = self.corpus[p.entry].dialogue.len();
            if e.utterances.is_empty() || e.utterances.iter().any(|&u| u >= n) {
                bail!("{}: key set of question {id} is empty or names an utterance outside its dialogue", path.display());
            }
        }
        Ok(keys)
    }
}

fn load_stage(store: &mut ParameterStore, paths: &[PathBuf], prefix: &str) -> anyhow::Result<()> {
    let merged = tensor_io::read_merged(paths)?;
    let origin = paths.first().map(PathBuf::as_path).unwrap_or(Path::new("<none>"));
    tensor_io::load_store(store, &merged, prefix, origin)?;
    Ok(())
}

#[derive(Serialize)]
struct GradcheckSummary {
    passed: bool,
    questions: Vec<String>,
    reports: Vec<GradCheckReport>,
}

/// Model dimensions used by the `gradcheck` subcommand.
pub fn shrunk(cfg: &PipelineConfig) -> PipelineConfig {
    PipelineConfig {
        d_model: 4,
        vocab: 32,
        mix_layers: 1,
        gat_layers: 2,
        heads: 2,
        ..cfg.clone()
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainExtractor {
            common,
            checkpoint_out,
            report,
        } => {
            let s = Session::open(&common)?;
            let mut store = ExtractorModel::new_store(&s.cfg);
            let model = ExtractorModel::register(&mut store, &s.cfg, s.toy())?;
            let log = train_extractor(&model, &mut store, &s.prepared, &s.cfg, s.emb())?;
            log::info!("extractor: {} steps, epoch losses {:?}", log.steps, log.epoch_losses);
            tensor_io::save_store(&checkpoint_out, &store)?;
            if let Some(r) = report {
                write_json(&r, &log)?;
            }
        }
        Command::ExtractKeys {
            common,
            checkpoint_in,
            keysets,
            report,
        } => {
            let s = Session::open(&common)?;
            let mut store = ExtractorModel::new_store(&s.cfg);
            let model = ExtractorModel::register(&mut store, &s.cfg, s.toy())?;
            load_stage(&mut store, &checkpoint_in, EXTRACTOR_PREFIX)?;
            let keys = extract(&model, &store, &s.prepared, &s.cfg, s.emb())?;
            let qs = s.questions();
            let cov = coverage_recall(qs.iter().map(|q| (&keys[&q.id].keyset, q)));
            log::info!("coverage recall {:.4}, mean key-set size {:.2}", cov.recall, cov.mean_keyset_size);
            write_json(&keysets, &keys)?;
            if let Some(r) = report {
                write_json(&r, &cov)?;
            }
        }
        Command::TrainQa {
            common,
            keysets,
            checkpoint_out,
            report,
        } => {
            let s = Session::open(&common)?;
            let keys = s.keysets(&keysets)?;
            let mut store = QaModel::new_store(&s.cfg);
            let model = QaModel::register(&mut store, &s.cfg, s.toy())?;
            let log = train_qa(&model, &mut store, &s.corpus, &s.prepared, &keys, &s.cfg, s.emb())?;
            log::info!("qa: {} steps, epoch losses {:?}", log.steps, log.epoch_losses);
            tensor_io::save_store(&checkpoint_out, &store)?;
            if let Some(r) = report {
                write_json(&r, &log)?;
            }
        }
        Command::Predict {
            common,
            keysets,
            checkpoint_in,
            predictions,
        } => {
            let s = Session::open(&common)?;
            let keys = s.keysets(&keysets)?;
            let mut store = QaModel::new_store(&s.cfg);
            let model = QaModel::register(&mut store, &s.cfg, s.toy())?;
            load_stage(&mut store, &checkpoint_in, QA_PREFIX)?;
            let records = predict(&model, &store, &s.corpus, &s.prepared, &keys, &s.cfg, s.emb())?;
            write_json(&predictions, &records)?;
        }
        Command::Evaluate {
            common,
            predictions,
            keysets,
            report,
        } => {
            let s = Session::open(&common)?;
            let preds = read_answers(&predictions)?;
            let qs = s.questions();
            let mut r: EvalReport = score(&preds, &qs).with_context(|| format!("scoring {}", predictions.display()))?;
            let mentions: BTreeMap<_, _> = s.prepared.iter().map(|p| (p.question.id.clone(), p.mentions.clone())).collect();
            let b = speaker_breakdown(&preds, &qs, &mentions)?;
            r.per_speaker = b.per_speaker;
            r.with_speaker = b.with_speaker;
            r.without_speaker = b.without_speaker;
            if let Some(k) = keysets {
                let keys = s.keysets(&k)?;
                let cov = coverage_recall(qs.iter().map(|q| (&keys[&q.id].keyset, q)));
                r.coverage_recall = Some(cov.recall);
                r.mean_keyset_size = Some(cov.mean_keyset_size);
            }
            println!("EM {:.2}  F1 {:.2}  ({} questions)", r.em, r.f1, r.n_questions);
            if let Some(p) = report {
                write_json(&p, &r)?;
            }
        }
        Command::InspectGraph {
            common,
            keysets,
            question,
            dot_out,
            json_out,
        } => {
            let s = Session::open(&common)?;
            let keys = s.keysets(&keysets)?;
            let p = s.prepared.iter().find(|p| p.question.id == question).with_context(|| format!("no question {question} in the corpus"))?;
            let keyset: &KeySet = &keys[&question].keyset;
            let g = build_graph(&p.question, &p.mentions, keyset, &s.corpus[p.entry].dialogue, &p.map, &p.seq, s.cfg.k_w)?;
            log::info!("{} nodes, {} edges", g.len(), g.edges().len());
            if let Some(path) = &json_out {
                write_json(path, &g)?;
            }
            match &dot_out {
                Some(path) => std::fs::write(path, g.to_dot()).with_context(|| path.display().to_string())?,
                None if json_out.is_none() => print!("{}", g.to_dot()),
                None => {}
            }
        }
        Command::Gradcheck {
            common,
            questions,
            tolerance,
            report,
        } => {
            let base = config_io::resolve(common.config.as_deref(), &common.set, common.seed)?;
            let cfg = shrunk(&base);
            log::info!("seed {}", cfg.seed);
            log::info!("config {}", serde_json::to_string(&cfg)?);
            let s = Session::with_config(&common, cfg)?;
            if s.embeddings.is_some() {
                bail!("gradcheck runs on the trainable encoder; drop --embeddings");
            }
            let (store, ex, qa) = composed_store(&s.cfg)?;
            let mut summary = GradcheckSummary {
                passed: true,
                questions: Vec::new(),
                reports: Vec::new(),
            };
            for p in s.prepared.iter().filter(|p| p.question.answerable || s.cfg.unanswerable).take(questions) {
                let dialogue = &s.corpus[p.entry].dialogue;
                let f = |st: &ParameterStore, t: &mut Tape| composed_loss(&ex, &qa, st, t, p, dialogue, &s.cfg);
                let r = finite_diff_check(f, &store, 1e-5, tolerance)?;
                println!(
                    "{}: {} entries, max relative error {:.3e}, {}",
                    p.question.id,
                    r.checked,
                    r.max_rel_error,
                    if r.passed() { "pass" } else { "FAIL" }
                );
                summary.passed &= r.passed();
                summary.questions.push(p.question.id.clone());
                summary.reports.push(r);
            }
            if let Some(path) = report {
                write_json(&path, &summary)?;
            }
            if !summary.passed {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

/// Runs every stage in process; the reference for staged CLI runs.
pub fn fused(corpus: &[CorpusEntry], prepared: &[Prepared], cfg: &PipelineConfig) -> quisg_core::Result<BTreeMap<String, pipeline::PredictionRecord>> {
    let fitted = pipeline::fit(corpus, prepared, cfg)?;
    predict(&fitted.qa, &fitted.qa_store, corpus, prepared, &fitted.keys, cfg, None)
}

/// Answer strings of [`fused`].
pub fn fused_answers(corpus: &[CorpusEntry], prepared: &[Prepared], cfg: &PipelineConfig) -> quisg_core::Result<quisg_core::metrics::Predictions> {
    fused(corpus, prepared, cfg).map(|r| answers(&r))
}
