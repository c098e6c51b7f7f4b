//! QA-corpus ingestion, corpus statistics and entity/value extraction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::entity_index::{EntityDictionary, StaticHashArray};
use crate::error::{Error, Result};
use crate::expansion::ExpansionIndex;
use crate::kb::{KnowledgeBase, NodeId, PredicateId};
use crate::text;

pub const DEFAULT_MAX_MENTION_SPAN: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub frequency: u64,
}

impl QaPair {
    pub fn new(question: &str, answer: &str, frequency: u64) -> Self {
        QaPair {
            question: text::tokenize(question),
            answer: text::tokenize(answer),
            frequency,
        }
    }
}

#[derive(Deserialize)]
struct CorpusRecord {
    question: String,
    answer: String,
    #[serde(default = "one")]
    count: u64,
}

fn one() -> u64 {
    1
}

/// JSON lines: `{"question": "...", "answer": "...", "count": n}`.
pub fn load_corpus<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<QaPair>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        if rec.count == 0 {
            return Err(Error::parse(source_name, i + 1, "count must be at least 1"));
        }
        out.push(QaPair::new(&rec.question, &rec.answer, rec.count));
    }
    Ok(out)
}

pub fn load_corpus_file(path: &Path) -> Result<Vec<QaPair>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_corpus(std::io::BufReader::new(file), &path.display().to_string())
}

type Tokens = Vec<String>;

/// Frequencies `n(q, a)` aggregated over identical pairs.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    pair_counts: BTreeMap<(Tokens, Tokens), u64>,
    question_counts: BTreeMap<Tokens, u64>,
    total: u64,
}

impl CorpusStats {
    pub fn compute(corpus: &[QaPair]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut pair_counts = BTreeMap::new();
        let mut question_counts = BTreeMap::new();
        let mut total = 0;
        for pair in corpus {
            *pair_counts
                .entry((pair.question.clone(), pair.answer.clone()))
                .or_insert(0) += pair.frequency;
            *question_counts.entry(pair.question.clone()).or_insert(0) += pair.frequency;
            total += pair.frequency;
        }
        Ok(CorpusStats {
            pair_counts,
            question_counts,
            total,
        })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `Σ_y n(q, y)`.
    pub fn question_count(&self, q: &[String]) -> u64 {
        self.question_counts.get(q).copied().unwrap_or(0)
    }

    pub fn pair_count(&self, q: &[String], a: &[String]) -> u64 {
        self.pair_counts
            .get(&(q.to_vec(), a.to_vec()))
            .copied()
            .unwrap_or(0)
    }

    /// `P(q) = Σ_y n(q,y) / Σ_{x,y} n(x,y)`.
    pub fn p_question(&self, q: &[String]) -> f64 {
        self.question_count(q) as f64 / self.total as f64
    }

    /// `P(a|q) = n(q,a) / Σ_y n(q,y)`.
    pub fn p_answer(&self, q: &[String], a: &[String]) -> f64 {
        let qc = self.question_count(q);
        if qc == 0 {
            return 0.0;
        }
        self.pair_count(q, a) as f64 / qc as f64
    }

    pub fn questions(&self) -> impl Iterator<Item = (&Tokens, u64)> {
        self.question_counts.iter().map(|(q, &c)| (q, c))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Tokens, &Tokens, u64)> {
        self.pair_counts.iter().map(|((q, a), &c)| (q, a, c))
    }
}

/// Coarse answer-type categories shared by questions and predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CategoryTag {
    Date,
    Number,
    Person,
    Location,
    Description,
    Other,
}

impl FromStr for CategoryTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "date" => CategoryTag::Date,
            "number" | "num" => CategoryTag::Number,
            "person" | "human" => CategoryTag::Person,
            "location" | "loc" => CategoryTag::Location,
            "description" | "desc" => CategoryTag::Description,
            "other" => CategoryTag::Other,
            other => return Err(format!("unknown category {other:?}")),
        })
    }
}

impl fmt::Display for CategoryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CategoryTag::Date => "date",
            CategoryTag::Number => "number",
            CategoryTag::Person => "person",
            CategoryTag::Location => "location",
            CategoryTag::Description => "description",
            CategoryTag::Other => "other",
        })
    }
}

/// Expected answer type from the question's wh-phrase; `Other` when there
/// is no wh-word at all.
pub fn categorize_question<S: AsRef<str>>(q: &[S]) -> CategoryTag {
    let toks: Vec<&str> = q.iter().map(AsRef::as_ref).collect();
    let has_pair = |a: &str, b: &str| toks.windows(2).any(|w| w[0] == a && w[1] == b);
    if toks.contains(&"when") || has_pair("what", "year") {
        CategoryTag::Date
    } else if has_pair("how", "many") || has_pair("how", "much") || has_pair("how", "long") {
        CategoryTag::Number
    } else if toks.iter().any(|t| matches!(*t, "who" | "whom" | "whose")) {
        CategoryTag::Person
    } else if toks.contains(&"where") {
        CategoryTag::Location
    } else if toks.iter().any(|t| matches!(*t, "what" | "which" | "how")) {
        CategoryTag::Description
    } else {
        CategoryTag::Other
    }
}

/// Manually labeled predicate categories; unlabeled predicates are `Other`.
#[derive(Debug, Clone, Default)]
pub struct PredicateCategories {
    labels: HashMap<PredicateId, CategoryTag>,
}

impl PredicateCategories {
    pub fn load<R: BufRead>(reader: R, source_name: &str, kb: &KnowledgeBase) -> Result<Self> {
        let mut labels = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((p, c)) = line.split_once('\t') else {
                return Err(Error::parse(source_name, i + 1, "expected predicate<TAB>category"));
            };
            let tag: CategoryTag = c.parse().map_err(|m: String| Error::parse(source_name, i + 1, m))?;
            if let Some(pid) = kb.predicate_id(p) {
                labels.insert(pid, tag);
            }
        }
        Ok(PredicateCategories { labels })
    }

    pub fn load_file(path: &Path, kb: &KnowledgeBase) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load(std::io::BufReader::new(file), &path.display().to_string(), kb)
    }

    pub fn insert(&mut self, p: PredicateId, tag: CategoryTag) {
        self.labels.insert(p, tag);
    }

    pub fn get(&self, p: PredicateId) -> CategoryTag {
        self.labels.get(&p).copied().unwrap_or(CategoryTag::Other)
    }
}

/// An entity mention found in a question, verified against the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub span: Range<usize>,
    pub entities: Vec<NodeId>,
}

/// Index mentions whose candidates include at least one store entity;
/// fingerprint false positives are dropped here.
pub fn verified_mentions<S: AsRef<str>>(
    idx: &StaticHashArray,
    kb: &KnowledgeBase,
    tokens: &[S],
    max_span: usize,
) -> Vec<EntityMention> {
    idx.find_mentions(tokens, max_span)
        .into_iter()
        .filter_map(|m| {
            let entities: Vec<NodeId> = m
                .candidates
                .iter()
                .filter(|&&c| c < kb.node_count() as u64)
                .map(|&c| NodeId(c as u32))
                .filter(|&n| kb.is_entity(n))
                .collect();
            (!entities.is_empty()).then_some(EntityMention {
                span: m.start..m.end,
                entities,
            })
        })
        .collect()
}

/// Distinct entities of a question with the span of their first mention.
pub fn mentioned_entities(mentions: &[EntityMention]) -> BTreeMap<NodeId, Range<usize>> {
    let mut out = BTreeMap::new();
    for m in mentions {
        for &e in &m.entities {
            out.entry(e).or_insert_with(|| m.span.clone());
        }
    }
    out
}

fn contains_span(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Bundles the read-only stores used for entity/value extraction.
pub struct Extractor<'a> {
    pub kb: &'a KnowledgeBase,
    pub index: &'a StaticHashArray,
    pub dictionary: &'a EntityDictionary,
    pub expansion: &'a ExpansionIndex,
    pub categories: &'a PredicateCategories,
    pub max_span: usize,
}

impl Extractor<'_> {
    /// Surface token sequences a node can appear as in an answer.
    fn value_surfaces(&self, v: NodeId) -> Vec<Vec<String>> {
        let mut out = vec![text::tokenize(self.kb.node_symbol(v))];
        if let Some(s) = self.dictionary.canonical(v) {
            let toks = text::tokenize(s);
            if !out.contains(&toks) {
                out.push(toks);
            }
        }
        out
    }

    /// `EV(q, a)`: entity mentions of the question paired with answer spans
    /// that are values reachable from the entity. With `refine`, pairs whose
    /// value category (via the last predicate of a connecting path) differs
    /// from the question category are dropped; questions of category `Other`
    /// constrain nothing.
    pub fn extract_entity_values(&self, pair: &QaPair, refine: bool) -> BTreeSet<(NodeId, NodeId)> {
        let mentions = verified_mentions(self.index, self.kb, &pair.question, self.max_span);
        let qcat = categorize_question(&pair.question);
        let mut out = BTreeSet::new();
        for e in mentioned_entities(&mentions).into_keys() {
            for (v, paths) in self.expansion.values_from(e) {
                if !self.value_surfaces(v).iter().any(|s| contains_span(&pair.answer, s)) {
                    continue;
                }
                if refine
                    && qcat != CategoryTag::Other
                    && !paths
                        .iter()
                        .filter_map(|p| p.last())
                        .any(|last| self.categories.get(last) == qcat)
                {
                    continue;
                }
                out.insert((e, v));
            }
        }
        out
    }
}

/// `P(e, v | q, a)`: uniform over the extracted pairs.
pub fn entity_value_distribution(pairs: &BTreeSet<(NodeId, NodeId)>) -> BTreeMap<(NodeId, NodeId), f64> {
    let share = 1.0 / pairs.len() as f64;
    pairs.iter().map(|&p| (p, share)).collect()
}

/// `P(e | q)`: uniform over the entities of `EV`, else over the question's
/// mentioned entities.
pub fn entity_distribution(ev: &BTreeSet<(NodeId, NodeId)>, mentioned: &[NodeId]) -> BTreeMap<NodeId, f64> {
    let entities: BTreeSet<NodeId> = if ev.is_empty() {
        mentioned.iter().copied().collect()
    } else {
        ev.iter().map(|&(e, _)| e).collect()
    };
    let share = 1.0 / entities.len() as f64;
    entities.into_iter().map(|e| (e, share)).collect()
}

/// One `(q_i, e, v)` training triple with the factors it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub question: Vec<String>,
    /// Span of the entity's first mention in `question`.
    pub mention: Range<usize>,
    pub entity: NodeId,
    pub value: NodeId,
    /// `n(q, a)` of the source pair.
    pub count: u64,
    pub p_question: f64,
    pub p_answer: f64,
    pub p_entity_value: f64,
    pub p_entity: f64,
}

impl Observation {
    /// `P(e,v|q,a) · P(a|q) · P(q)`.
    pub fn weight(&self) -> f64 {
        self.p_entity_value * self.p_answer * self.p_question
    }
}

/// One observation per distinct `(q, a)` pair and extracted `(e, v)`, in
/// sorted pair order.
pub fn build_observations(extractor: &Extractor<'_>, stats: &CorpusStats, refine: bool) -> Vec<Observation> {
    let mut out = Vec::new();
    for (q, a, count) in stats.pairs() {
        let pair = QaPair {
            question: q.clone(),
            answer: a.clone(),
            frequency: count,
        };
        let ev = extractor.extract_entity_values(&pair, refine);
        if ev.is_empty() {
            continue;
        }
        let mentions = verified_mentions(extractor.index, extractor.kb, q, extractor.max_span);
        let spans = mentioned_entities(&mentions);
        let pev = entity_value_distribution(&ev);
        let pe = entity_distribution(&ev, &[]);
        let (pq, pa) = (stats.p_question(q), stats.p_answer(q, a));
        for (&(e, v), &p) in &pev {
            out.push(Observation {
                question: q.clone(),
                mention: spans[&e].clone(),
                entity: e,
                value: v,
                count,
                p_question: pq,
                p_answer: pa,
                p_entity_value: p,
                p_entity: pe[&e],
            });
        }
    }
    out
}

/// Debug dump: `question<TAB>entity<TAB>value<TAB>weight`.
pub fn write_observations<W: std::io::Write>(
    kb: &KnowledgeBase,
    obs: &[Observation],
    mut out: W,
) -> std::io::Result<()> {
    for o in obs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            text::detokenize(&o.question),
            kb.node_symbol(o.entity),
            kb.node_symbol(o.value),
            o.weight()
        )?;
    }
    Ok(())
}
