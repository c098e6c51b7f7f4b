//! Offline build (index → expansion → extraction → EM → model) and the
//! online question-answering session over the resulting artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::answer::{AnswerEngine, NoAnswer};
use crate::concepts::{open_reader, ConceptGraph};
use crate::decompose::{self, PatternIndex};
use crate::entity_index::{EntityDictionary, StaticHashArray};
use crate::error::{Error, Result};
use crate::expansion::{self, ExpansionIndex, FileTripleSource};
use crate::extraction::{
    self, build_observations, verified_mentions, CorpusStats, Extractor, PredicateCategories, QaPair,
    DEFAULT_MAX_MENTION_SPAN,
};
use crate::kb::{KnowledgeBase, NodeId, PathPolicy, SpoPath, DEFAULT_MAX_PATH_LEN, DEFAULT_NAME_PREDICATE};
use crate::learner::{self, PredicateModel, TrainingReport, TrainingSet};
use crate::text;

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Recognized configuration keys, as written in config files and flags.
pub const CONFIG_KEYS: &[&str] = &[
    "kb",
    "isa",
    "corpus",
    "predicate-categories",
    "dictionary",
    "context-weights",
    "fixture-overrides",
    "model",
    "index",
    "expansion",
    "report",
    "k",
    "em-max-iters",
    "em-epsilon",
    "name-restriction",
    "max-question-len",
    "max-mention-span",
    "refine",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kb: Option<PathBuf>,
    pub isa: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub predicate_categories: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub context_weights: Option<PathBuf>,
    pub fixture_overrides: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub expansion: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub k: usize,
    pub em_max_iters: usize,
    pub em_epsilon: f64,
    pub name_restriction: bool,
    pub max_question_len: usize,
    pub max_mention_span: usize,
    pub refine: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kb: None,
            isa: None,
            corpus: None,
            predicate_categories: None,
            dictionary: None,
            context_weights: None,
            fixture_overrides: None,
            model: None,
            index: None,
            expansion: None,
            report: None,
            k: DEFAULT_MAX_PATH_LEN,
            em_max_iters: learner::DEFAULT_MAX_ITERS,
            em_epsilon: learner::DEFAULT_EPSILON,
            name_restriction: true,
            max_question_len: decompose::DEFAULT_MAX_QUESTION_LEN,
            max_mention_span: DEFAULT_MAX_MENTION_SPAN,
            refine: true,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config_text(text: &str, source_name: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(source_name, i + 1, "expected key = value"));
        };
        let v = v.trim();
        let v = v
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .unwrap_or(v);
        out.push((k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    /// Applies `key = value` pairs in order; relative paths are resolved
    /// against `base`.
    pub fn apply(&mut self, pairs: &[(String, String)], base: &Path) -> Result<()> {
        for (key, value) in pairs {
            let path = || Some(base.join(value));
            match key.as_str() {
                "kb" => self.kb = path(),
                "isa" => self.isa = path(),
                "corpus" => self.corpus = path(),
                "predicate-categories" => self.predicate_categories = path(),
                "dictionary" => self.dictionary = path(),
                "context-weights" => self.context_weights = path(),
                "fixture-overrides" => self.fixture_overrides = path(),
                "model" => self.model = path(),
                "index" => self.index = path(),
                "expansion" => self.expansion = path(),
                "report" => self.report = path(),
                "k" => self.k = number(key, value)?,
                "em-max-iters" => self.em_max_iters = number(key, value)?,
                "em-epsilon" => self.em_epsilon = number(key, value)?,
                "name-restriction" => self.name_restriction = flag(key, value)?,
                "max-question-len" => self.max_question_len = number(key, value)?,
                "max-mention-span" => self.max_mention_span = number(key, value)?,
                "refine" => self.refine = flag(key, value)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.em_max_iters < 1 {
            return Err(Error::Config("em-max-iters must be at least 1".into()));
        }
        if self.em_epsilon.is_nan() || self.em_epsilon < 0.0 {
            return Err(Error::Config("em-epsilon must be non-negative".into()));
        }
        if self.max_mention_span < 1 {
            return Err(Error::Config("max-mention-span must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let pairs = parse_config_text(&text, &path.display().to_string())?;
        let mut cfg = PipelineConfig::default();
        cfg.apply(&pairs, path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    pub fn policy(&self) -> PathPolicy {
        if self.name_restriction {
            PathPolicy {
                max_len: self.k,
                name_predicate: Some(DEFAULT_NAME_PREDICATE.to_string()),
            }
        } else {
            PathPolicy::unrestricted(self.k)
        }
    }

    fn get(&self, key: &str) -> Option<&PathBuf> {
        match key {
            "kb" => self.kb.as_ref(),
            "isa" => self.isa.as_ref(),
            "corpus" => self.corpus.as_ref(),
            "predicate-categories" => self.predicate_categories.as_ref(),
            "dictionary" => self.dictionary.as_ref(),
            "context-weights" => self.context_weights.as_ref(),
            "fixture-overrides" => self.fixture_overrides.as_ref(),
            "model" => self.model.as_ref(),
            "index" => self.index.as_ref(),
            "expansion" => self.expansion.as_ref(),
            "report" => self.report.as_ref(),
            _ => None,
        }
    }

    /// Checks that `inputs` are set and readable and `outputs` are set;
    /// every problem is listed in one error.
    pub fn require(&self, inputs: &[&str], outputs: &[&str]) -> Result<()> {
        let mut problems = Vec::new();
        for key in inputs {
            match self.get(key) {
                None => problems.push(format!("{key}: not set")),
                Some(p) if std::fs::File::open(p).is_err() => problems.push(format!("{key}: {} not readable", p.display())),
                Some(_) => {}
            }
        }
        for key in ["context-weights", "fixture-overrides"] {
            if let Some(p) = self.get(key) {
                if std::fs::File::open(p).is_err() {
                    problems.push(format!("{key}: {} not readable", p.display()));
                }
            }
        }
        for key in outputs {
            if self.get(key).is_none() {
                problems.push(format!("{key}: not set"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn path(&self, key: &str) -> Result<&Path> {
        self.get(key)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("{key}: not set")))
    }

    /// Expansion dump path, defaulting to `expansion.tsv` beside the model.
    pub fn expansion_path(&self) -> Result<PathBuf> {
        self.sibling(self.expansion.as_ref(), "expansion.tsv")
    }

    /// Report path, defaulting to `report.json` beside the model.
    pub fn report_path(&self) -> Result<PathBuf> {
        self.sibling(self.report.as_ref(), "report.json")
    }

    fn sibling(&self, explicit: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p.clone());
        }
        let model = self.path("model")?;
        Ok(model.parent().unwrap_or(Path::new(".")).join(name))
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        other => Error::Stage {
            stage: name,
            message: other.to_string(),
        },
    })
}

/// Input stores shared by all stages.
pub struct Inputs {
    pub kb: KnowledgeBase,
    pub dictionary: EntityDictionary,
    pub concepts: ConceptGraph,
}

impl Inputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let kb = KnowledgeBase::load_file(cfg.path("kb")?)?;
        let dictionary = EntityDictionary::load_file(cfg.path("dictionary")?, &kb)?;
        let mut concepts = ConceptGraph::new();
        let isa = cfg.path("isa")?;
        concepts.load_isa(open_reader(isa)?, &isa.display().to_string(), &kb)?;
        if let Some(p) = &cfg.context_weights {
            concepts.load_context(open_reader(p)?, &p.display().to_string())?;
        }
        if let Some(p) = &cfg.fixture_overrides {
            concepts.load_overrides(open_reader(p)?, &p.display().to_string())?;
        }
        Ok(Inputs {
            kb,
            dictionary,
            concepts,
        })
    }
}

/// Summary written next to the model.
#[derive(Debug, Clone, Serialize)]
pub struct OfflineReport {
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub dropped_observations: usize,
    pub index_entries: usize,
    pub seed_entities: usize,
    pub expanded_paths: usize,
    pub observations: usize,
    pub templates: usize,
    pub model_rows: usize,
}

/// Entities mentioned in any corpus question.
pub fn corpus_seeds(corpus: &[QaPair], idx: &StaticHashArray, kb: &KnowledgeBase, max_span: usize) -> BTreeSet<NodeId> {
    corpus
        .iter()
        .flat_map(|p| verified_mentions(idx, kb, &p.question, max_span))
        .flat_map(|m| m.entities)
        .collect()
}

pub fn build_index(cfg: &PipelineConfig, inputs: &Inputs) -> Result<StaticHashArray> {
    let idx = inputs.dictionary.build_index();
    idx.check_structure()?;
    idx.save(cfg.path("index")?)?;
    log::info!("index: {} entries, {} buckets", idx.len(), idx.bucket_count());
    Ok(idx)
}

pub fn expand(cfg: &PipelineConfig, inputs: &Inputs, idx: &StaticHashArray, corpus: &[QaPair]) -> Result<BTreeSet<SpoPath>> {
    let seeds = corpus_seeds(corpus, idx, &inputs.kb, cfg.max_mention_span);
    let source = FileTripleSource::new(cfg.path("kb")?, &inputs.kb);
    let paths = expansion::expand_predicates(&source, &inputs.kb, &seeds, &cfg.policy())?;
    let mut buf = Vec::new();
    expansion::write_expansion(&inputs.kb, &paths, &mut buf)?;
    write_atomic(&cfg.expansion_path()?, &buf)?;
    log::info!("expansion: {} seeds, {} paths", seeds.len(), paths.len());
    Ok(paths)
}

pub struct LearnOutput {
    pub model: PredicateModel,
    pub training: TrainingReport,
    pub observations: usize,
    pub templates: usize,
}

pub fn learn(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    idx: &StaticHashArray,
    paths: &BTreeSet<SpoPath>,
    corpus: &[QaPair],
) -> Result<LearnOutput> {
    let categories = PredicateCategories::load_file(cfg.path("predicate-categories")?, &inputs.kb)?;
    let expansion = ExpansionIndex::from_paths(paths);
    let extractor = Extractor {
        kb: &inputs.kb,
        index: idx,
        dictionary: &inputs.dictionary,
        expansion: &expansion,
        categories: &categories,
        max_span: cfg.max_mention_span,
    };
    let observations = match CorpusStats::compute(corpus) {
        Ok(stats) => build_observations(&extractor, &stats, cfg.refine),
        Err(Error::EmptyCorpus) => Vec::new(),
        Err(e) => return Err(e),
    };
    if observations.is_empty() {
        return Err(Error::Stage {
            stage: "extract",
            message: "no observations extracted".into(),
        });
    }
    log::info!("extraction: {} observations", observations.len());
    let set = TrainingSet::build(&observations, &inputs.concepts, &inputs.kb, &expansion)?;
    let (theta, training) = learner::learn(&set.instances, cfg.em_max_iters, cfg.em_epsilon);
    log::info!(
        "em: {} iterations, log-likelihood {:.6}",
        training.iterations,
        training.final_log_likelihood
    );
    let model = set.model(&theta);
    let mut buf = Vec::new();
    model.write(&inputs.kb, &mut buf)?;
    write_atomic(cfg.path("model")?, &buf)?;
    Ok(LearnOutput {
        model,
        training,
        observations: observations.len(),
        templates: set.templates.len(),
    })
}

/// Runs every offline stage; on failure, artifacts written by this run are
/// removed and the error names the failing stage.
pub fn run_offline(cfg: &PipelineConfig) -> Result<OfflineReport> {
    cfg.require(&["kb", "isa", "corpus", "predicate-categories", "dictionary"], &["model", "index"])?;
    let outputs = [
        cfg.path("index")?.to_path_buf(),
        cfg.expansion_path()?,
        cfg.path("model")?.to_path_buf(),
        cfg.report_path()?,
    ];
    let result = offline_stages(cfg);
    if result.is_err() {
        for p in &outputs {
            let _ = std::fs::remove_file(p);
        }
    }
    result
}

fn offline_stages(cfg: &PipelineConfig) -> Result<OfflineReport> {
    let inputs = stage("load", Inputs::load(cfg))?;
    let corpus = stage("load", extraction::load_corpus_file(cfg.path("corpus")?))?;
    let idx = stage("index", build_index(cfg, &inputs))?;
    let paths = stage("expand", expand(cfg, &inputs, &idx, &corpus))?;
    finish(cfg, &inputs, &idx, &paths, &corpus)
}

fn finish(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    idx: &StaticHashArray,
    paths: &BTreeSet<SpoPath>,
    corpus: &[QaPair],
) -> Result<OfflineReport> {
    let learned = stage("learn", learn(cfg, inputs, idx, paths, corpus))?;
    let seeds = corpus_seeds(corpus, idx, &inputs.kb, cfg.max_mention_span);
    let report = OfflineReport {
        iterations: learned.training.iterations,
        final_log_likelihood: learned.training.final_log_likelihood,
        dropped_observations: learned.training.dropped_observations,
        index_entries: idx.len(),
        seed_entities: seeds.len(),
        expanded_paths: paths.len(),
        observations: learned.observations,
        templates: learned.templates,
        model_rows: learned.model.len(),
    };
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    stage("report", write_atomic(&cfg.report_path()?, &json))?;
    Ok(report)
}

/// Index stage alone; returns the number of entries.
pub fn run_build_index(cfg: &PipelineConfig) -> Result<usize> {
    cfg.require(&["kb", "isa", "dictionary"], &["index"])?;
    let inputs = stage("load", Inputs::load(cfg))?;
    Ok(stage("index", build_index(cfg, &inputs))?.len())
}

/// Expansion stage alone, reading the index artifact; returns the number
/// of paths written.
pub fn run_expand(cfg: &PipelineConfig) -> Result<usize> {
    cfg.require(&["kb", "isa", "dictionary", "corpus", "index"], &[])?;
    cfg.expansion_path()?;
    let inputs = stage("load", Inputs::load(cfg))?;
    let corpus = stage("load", extraction::load_corpus_file(cfg.path("corpus")?))?;
    let idx = stage("load", StaticHashArray::load(cfg.path("index")?))?;
    Ok(stage("expand", expand(cfg, &inputs, &idx, &corpus))?.len())
}

/// Extraction and EM from the index and expansion artifacts.
pub fn run_learn(cfg: &PipelineConfig) -> Result<OfflineReport> {
    cfg.require(&["kb", "isa", "dictionary", "corpus", "predicate-categories", "index"], &["model"])?;
    let expansion_path = cfg.expansion_path()?;
    if std::fs::File::open(&expansion_path).is_err() {
        return Err(Error::Config(format!("expansion: {} not readable", expansion_path.display())));
    }
    let inputs = stage("load", Inputs::load(cfg))?;
    let corpus = stage("load", extraction::load_corpus_file(cfg.path("corpus")?))?;
    let idx = stage("load", StaticHashArray::load(cfg.path("index")?))?;
    let paths = stage("load", expansion::read_expansion(&inputs.kb, &expansion_path))?;
    finish(cfg, &inputs, &idx, &paths, &corpus)
}

/// Loaded artifacts for answering questions.
pub struct OnlineSystem {
    pub inputs: Inputs,
    pub index: StaticHashArray,
    pub model: PredicateModel,
    pub patterns: PatternIndex,
    pub max_span: usize,
    pub max_question_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub entity: String,
    pub template: String,
    pub predicate_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerRecord {
    pub question: String,
    pub answer: Option<String>,
    pub probability: Option<f64>,
    pub trace: Option<TraceRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequence: Option<Vec<String>>,
}

impl AnswerRecord {
    pub fn is_answered(&self) -> bool {
        self.answer.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecomposeRecord {
    pub question: String,
    pub sequence: Vec<String>,
    pub score: f64,
    pub primitive_flags: Vec<bool>,
}

impl OnlineSystem {
    /// Fails with one error naming every absent input or artifact.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        cfg.require(&["kb", "isa", "dictionary", "corpus", "model", "index"], &[])?;
        let inputs = Inputs::load(cfg)?;
        let index = StaticHashArray::load(cfg.path("index")?)?;
        let model = PredicateModel::load_file(cfg.path("model")?, &inputs.kb)?;
        let corpus = extraction::load_corpus_file(cfg.path("corpus")?)?;
        let patterns = match CorpusStats::compute(&corpus) {
            Ok(stats) => PatternIndex::build(&stats, &index, &inputs.kb, cfg.max_mention_span),
            Err(_) => PatternIndex::default(),
        };
        Ok(OnlineSystem {
            inputs,
            index,
            model,
            patterns,
            max_span: cfg.max_mention_span,
            max_question_len: cfg.max_question_len,
        })
    }

    pub fn engine(&self) -> AnswerEngine<'_> {
        AnswerEngine {
            kb: &self.inputs.kb,
            index: &self.index,
            dictionary: &self.inputs.dictionary,
            concepts: &self.inputs.concepts,
            model: &self.model,
            max_span: self.max_span,
        }
    }

    pub fn decompose(&self, tokens: &[String]) -> Result<decompose::Decomposition> {
        let engine = self.engine();
        decompose::decompose(tokens, &self.patterns, &engine, self.max_question_len)
    }

    pub fn decompose_record(&self, question: &str) -> Result<DecomposeRecord> {
        let tokens = text::tokenize(question);
        let d = self.decompose(&tokens)?;
        let engine = self.engine();
        Ok(DecomposeRecord {
            question: question.to_string(),
            primitive_flags: d.sequence.iter().map(|s| engine.is_primitive(s)).collect(),
            sequence: d.sequence.iter().map(|s| text::detokenize(s)).collect(),
            score: d.score,
        })
    }

    /// Answers directly when the question is primitive, otherwise through
    /// its best decomposition.
    pub fn answer(&self, question: &str) -> AnswerRecord {
        let kb = &self.inputs.kb;
        let tokens = text::tokenize(question);
        let engine = self.engine();
        let mut record = AnswerRecord {
            question: question.to_string(),
            answer: None,
            probability: None,
            trace: None,
            reason: None,
            sequence: None,
        };
        let seq = if engine.is_primitive(&tokens) {
            vec![tokens]
        } else {
            match self.decompose(&tokens) {
                Ok(d) if d.score > 0.0 => d.sequence,
                Ok(_) => vec![tokens],
                Err(e) => {
                    record.reason = Some(e.to_string());
                    return record;
                }
            }
        };
        if seq.len() > 1 {
            record.sequence = Some(seq.iter().map(|s| text::detokenize(s)).collect());
        }
        match engine.answer_sequence(&seq) {
            Ok(ans) => {
                let (v, p) = ans.value().expect("non-empty sequence");
                record.answer = Some(kb.node_symbol(v).to_string());
                record.probability = Some(p);
                record.trace = ans.last.trace.get(&v).map(|x| TraceRecord {
                    entity: kb.node_symbol(x.entity).to_string(),
                    template: x.template.to_string(),
                    predicate_path: kb.format_path(&x.path),
                });
            }
            Err(f) if seq.len() > 1 => {
                record.reason = Some(format!("{} at step {}", f.reason, f.index));
            }
            Err(f) => record.reason = Some(f.reason.as_str().to_string()),
        }
        record
    }

    /// Answer distribution as `symbol → probability`, for diagnostics.
    pub fn distribution(&self, question: &str) -> std::result::Result<BTreeMap<String, f64>, NoAnswer> {
        let dist = self.engine().answer_distribution(&text::tokenize(question));
        if let Some(r) = dist.reason {
            return Err(r);
        }
        Ok(dist
            .entries
            .iter()
            .map(|(v, p)| (self.inputs.kb.node_symbol(*v).to_string(), *p))
            .collect())
    }
}
