//! Online inference of `P(v|q)` and answering of question sequences.
//!
//! `P(v|q) ∝ Σ_{e,t,p} P(e|q) P(t|e,q) θ_pt P(v|e,p)`, enumerated
//! entity → template → predicate → value and skipping zero factors.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::concepts::{ConceptGraph, Template};
use crate::entity_index::{EntityDictionary, StaticHashArray};
use crate::extraction::{mentioned_entities, verified_mentions};
use crate::kb::{ExpandedPredicate, KnowledgeBase, NodeId};
use crate::learner::PredicateModel;
use crate::text::{self, ENTITY_PLACEHOLDER};

/// Machine-readable cause of an empty answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoAnswer {
    NoEntity,
    NoTemplate,
    NoValue,
}

impl NoAnswer {
    pub fn as_str(self) -> &'static str {
        match self {
            NoAnswer::NoEntity => "no entity",
            NoAnswer::NoTemplate => "no template",
            NoAnswer::NoValue => "no value",
        }
    }
}

impl fmt::Display for NoAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Largest single `(e, t, p)` contribution to a value.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub entity: NodeId,
    pub template: Template,
    pub path: ExpandedPredicate,
    pub mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerDistribution {
    /// Normalized `P(v|q)`.
    pub entries: BTreeMap<NodeId, f64>,
    /// Unnormalized mass per value.
    pub raw: BTreeMap<NodeId, f64>,
    pub trace: BTreeMap<NodeId, Explanation>,
    pub reason: Option<NoAnswer>,
    /// Number of `(e, t, p)` combinations visited.
    pub enumerated: usize,
}

impl AnswerDistribution {
    fn empty(reason: NoAnswer, enumerated: usize) -> Self {
        AnswerDistribution {
            reason: Some(reason),
            enumerated,
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest probability value; ties go to the smaller id, which is the
    /// lexicographically smaller symbol.
    pub fn best(&self) -> Option<(NodeId, f64)> {
        self.entries
            .iter()
            .fold(None, |best: Option<(NodeId, f64)>, (&v, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((v, p)),
            })
    }
}

/// A sequence that could not be answered: which element failed and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceFailure {
    pub index: usize,
    pub reason: NoAnswer,
}

/// Result of answering a question sequence element by element.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAnswer {
    /// The concrete questions asked, after substitution.
    pub questions: Vec<Vec<String>>,
    pub answers: Vec<(NodeId, f64)>,
    /// Distribution of the last question.
    pub last: AnswerDistribution,
}

impl SequenceAnswer {
    pub fn value(&self) -> Option<(NodeId, f64)> {
        self.answers.last().copied()
    }
}

/// Read-only view over the stores needed online.
#[derive(Clone, Copy)]
pub struct AnswerEngine<'a> {
    pub kb: &'a KnowledgeBase,
    pub index: &'a StaticHashArray,
    pub dictionary: &'a EntityDictionary,
    pub concepts: &'a ConceptGraph,
    pub model: &'a PredicateModel,
    pub max_span: usize,
}

impl AnswerEngine<'_> {
    /// `P(e|q)`: uniform over the distinct verified entities, each with the
    /// span of its first mention.
    fn entities<S: AsRef<str>>(&self, q: &[S]) -> Vec<(NodeId, std::ops::Range<usize>, f64)> {
        let mentions = verified_mentions(self.index, self.kb, q, self.max_span);
        let spans = mentioned_entities(&mentions);
        let share = 1.0 / spans.len() as f64;
        spans.into_iter().map(|(e, span)| (e, span, share)).collect()
    }

    pub fn answer_distribution<S: AsRef<str>>(&self, q: &[S]) -> AnswerDistribution {
        let entities = self.entities(q);
        if entities.is_empty() {
            return AnswerDistribution::empty(NoAnswer::NoEntity, 0);
        }
        let mut dist = AnswerDistribution::default();
        let mut supported = false;
        for (e, span, pe) in entities {
            let Ok(templates) = self.concepts.template_distribution(q, span, e) else {
                continue;
            };
            for (t, pt) in templates {
                let Some(row) = self.model.row(&t) else { continue };
                supported = true;
                for (p, theta) in row {
                    dist.enumerated += 1;
                    let w = pe * pt * theta;
                    if w <= 0.0 {
                        continue;
                    }
                    for (v, pv) in self.kb.value_distribution(e, p) {
                        let mass = w * pv;
                        *dist.raw.entry(v).or_insert(0.0) += mass;
                        let better = dist.trace.get(&v).is_none_or(|x| mass > x.mass);
                        if better {
                            dist.trace.insert(
                                v,
                                Explanation {
                                    entity: e,
                                    template: t.clone(),
                                    path: p.clone(),
                                    mass,
                                },
                            );
                        }
                    }
                }
            }
        }
        if !supported {
            return AnswerDistribution::empty(NoAnswer::NoTemplate, dist.enumerated);
        }
        let total: f64 = dist.raw.values().sum();
        if total <= 0.0 {
            return AnswerDistribution::empty(NoAnswer::NoValue, dist.enumerated);
        }
        dist.entries = dist.raw.iter().map(|(&v, &m)| (v, m / total)).collect();
        dist
    }

    pub fn answer<S: AsRef<str>>(&self, q: &[S]) -> Result<(NodeId, f64), NoAnswer> {
        let dist = self.answer_distribution(q);
        dist.best().ok_or(dist.reason.unwrap_or(NoAnswer::NoValue))
    }

    /// Answers `seq[0]`, substitutes the answer's surface form for `$e` in
    /// the next element, and so on.
    pub fn answer_sequence<S: AsRef<str>>(&self, seq: &[Vec<S>]) -> Result<SequenceAnswer, SequenceFailure> {
        let mut out = SequenceAnswer {
            questions: Vec::with_capacity(seq.len()),
            answers: Vec::with_capacity(seq.len()),
            last: AnswerDistribution::default(),
        };
        let mut previous: Option<Vec<String>> = None;
        for (index, element) in seq.iter().enumerate() {
            let mut q = Vec::with_capacity(element.len());
            for tok in element {
                match (&previous, tok.as_ref()) {
                    (Some(surface), ENTITY_PLACEHOLDER) => q.extend(surface.iter().cloned()),
                    (_, t) => q.push(t.to_string()),
                }
            }
            let dist = self.answer_distribution(&q);
            let Some((v, p)) = dist.best() else {
                return Err(SequenceFailure {
                    index,
                    reason: dist.reason.unwrap_or(NoAnswer::NoValue),
                });
            };
            previous = Some(text::tokenize(&self.dictionary.surface_of(self.kb, v)));
            out.questions.push(q);
            out.answers.push((v, p));
            out.last = dist;
        }
        Ok(out)
    }

    /// `δ(q)`: exactly one verified mention, and some template derivable
    /// from it has a row in the model.
    pub fn is_primitive<S: AsRef<str>>(&self, q: &[S]) -> bool {
        let mentions = verified_mentions(self.index, self.kb, q, self.max_span);
        let [mention] = mentions.as_slice() else {
            return false;
        };
        mention.entities.iter().any(|&e| {
            self.concepts
                .template_distribution(q, mention.span.clone(), e)
                .map(|ts| ts.keys().any(|t| self.model.row(t).is_some()))
                .unwrap_or(false)
        })
    }
}
