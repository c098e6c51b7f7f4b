//! isA taxonomy, context-aware conceptualization and template derivation.
//!
//! `P(c|q,e) ∝ P(c|e) · (1 + Σ_w weight(c, w))` over the question tokens
//! outside the mention. Per-question overrides replace the computed
//! distribution outright.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, NodeId};
use crate::text;

/// Concept assigned to entities with no isA edges.
pub const FALLBACK_CONCEPT: &str = "entity";

/// A question with one entity mention replaced by `$concept`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Template {
    tokens: Vec<String>,
    slot: usize,
}

impl Template {
    pub fn new(tokens: Vec<String>, slot: usize) -> Option<Self> {
        let placeholders = tokens.iter().filter(|t| is_placeholder(t)).count();
        if slot >= tokens.len() || placeholders != 1 || !is_placeholder(&tokens[slot]) {
            return None;
        }
        Some(Template { tokens, slot })
    }

    /// Parses the display form, e.g. `when was $person born`.
    pub fn parse(text: &str) -> Option<Self> {
        let tokens = text::tokenize(text);
        let slot = tokens.iter().position(|t| is_placeholder(t))?;
        Template::new(tokens, slot)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn concept(&self) -> &str {
        &self.tokens[self.slot][1..]
    }
}

fn is_placeholder(tok: &str) -> bool {
    tok.len() > 1 && tok.starts_with('$')
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&text::detokenize(&self.tokens))
    }
}

/// Replaces `mention` in `q` with `$concept` for every concept of positive
/// probability; the template inherits that probability.
pub fn derive_templates<S: AsRef<str>>(
    q: &[S],
    mention: Range<usize>,
    concepts: &BTreeMap<String, f64>,
) -> Result<BTreeMap<Template, f64>> {
    if mention.start >= mention.end || mention.end > q.len() {
        return Err(Error::SpanOutOfRange {
            start: mention.start,
            end: mention.end,
            len: q.len(),
        });
    }
    let mut out = BTreeMap::new();
    for (concept, &p) in concepts {
        if p <= 0.0 {
            continue;
        }
        let mut tokens: Vec<String> = q[..mention.start].iter().map(|s| s.as_ref().to_string()).collect();
        let slot = tokens.len();
        tokens.push(format!("${concept}"));
        tokens.extend(q[mention.end..].iter().map(|s| s.as_ref().to_string()));
        if let Some(t) = Template::new(tokens, slot) {
            out.insert(t, p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct ConceptGraph {
    isa: HashMap<NodeId, BTreeMap<String, f64>>,
    context: HashMap<(String, String), f64>,
    overrides: HashMap<String, BTreeMap<String, f64>>,
}

impl ConceptGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_isa(&mut self, entity: NodeId, concept: &str, weight: f64) {
        *self
            .isa
            .entry(entity)
            .or_default()
            .entry(concept.to_string())
            .or_insert(0.0) += weight;
    }

    pub fn set_context_weight(&mut self, concept: &str, token: &str, weight: f64) {
        self.context.insert((concept.to_string(), token.to_string()), weight);
    }

    /// Pins `P(c|q,e)` for a question regardless of prior and context.
    pub fn set_override(&mut self, question: &str, concept: &str, probability: f64) {
        self.overrides
            .entry(text::normalize(question))
            .or_default()
            .insert(concept.to_string(), probability);
    }

    /// `entity<TAB>concept<TAB>weight`; weights must be positive.
    pub fn load_isa<R: BufRead>(&mut self, reader: R, source_name: &str, kb: &KnowledgeBase) -> Result<()> {
        for_each_tsv3(reader, source_name, |line, a, b, w| {
            if w <= 0.0 {
                return Err(Error::parse(source_name, line, "isA weight must be positive"));
            }
            match kb.node_id(a) {
                Some(e) => self.add_isa(e, b, w),
                None => log::warn!("{source_name}:{line}: unknown entity {a:?}"),
            }
            Ok(())
        })
    }

    /// `concept<TAB>token<TAB>weight`.
    pub fn load_context<R: BufRead>(&mut self, reader: R, source_name: &str) -> Result<()> {
        for_each_tsv3(reader, source_name, |line, c, tok, w| {
            if w < 0.0 {
                return Err(Error::parse(source_name, line, "context weight must be non-negative"));
            }
            self.set_context_weight(c, &text::normalize(tok), w);
            Ok(())
        })
    }

    /// `question<TAB>concept<TAB>probability`.
    pub fn load_overrides<R: BufRead>(&mut self, reader: R, source_name: &str) -> Result<()> {
        for_each_tsv3(reader, source_name, |line, q, c, p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(source_name, line, "probability outside [0, 1]"));
            }
            self.set_override(q, c, p);
            Ok(())
        })
    }

    pub fn has_concepts(&self, e: NodeId) -> bool {
        self.isa.contains_key(&e)
    }

    /// `P(c|e)`: isA weights normalized to one.
    pub fn concept_prior(&self, e: NodeId) -> BTreeMap<String, f64> {
        let Some(weights) = self.isa.get(&e) else {
            return BTreeMap::new();
        };
        normalized(weights.clone())
    }

    /// `P(c|q,e)` from prior and context weights; empty if `e` has no concepts.
    pub fn conceptualize<S: AsRef<str>>(&self, q: &[S], mention: Range<usize>, e: NodeId) -> BTreeMap<String, f64> {
        let prior = self.concept_prior(e);
        if prior.is_empty() || self.context.is_empty() {
            return prior;
        }
        let context: Vec<&str> = q
            .iter()
            .enumerate()
            .filter(|(i, _)| !mention.contains(i))
            .map(|(_, t)| t.as_ref())
            .collect();
        let scored = prior
            .into_iter()
            .map(|(c, p)| {
                let boost: f64 = context
                    .iter()
                    .filter_map(|w| self.context.get(&(c.clone(), (*w).to_string())))
                    .sum();
                (c, p * (1.0 + boost))
            })
            .collect();
        normalized(scored)
    }

    /// The distribution actually used for templates: override if present,
    /// else [`conceptualize`](Self::conceptualize), else the fallback concept.
    pub fn concept_distribution<S: AsRef<str>>(
        &self,
        q: &[S],
        mention: Range<usize>,
        e: NodeId,
    ) -> BTreeMap<String, f64> {
        let key = text::detokenize(q);
        if let Some(fixed) = self.overrides.get(&key) {
            if self.isa.get(&e).is_some_and(|cs| fixed.keys().any(|c| cs.contains_key(c))) || !self.has_concepts(e) {
                return fixed.clone();
            }
        }
        let dist = self.conceptualize(q, mention, e);
        if dist.is_empty() {
            return BTreeMap::from([(FALLBACK_CONCEPT.to_string(), 1.0)]);
        }
        dist
    }

    /// `P(t|q,e)` for one mention of `e` in `q`.
    pub fn template_distribution<S: AsRef<str>>(
        &self,
        q: &[S],
        mention: Range<usize>,
        e: NodeId,
    ) -> Result<BTreeMap<Template, f64>> {
        let concepts = self.concept_distribution(q, mention.clone(), e);
        derive_templates(q, mention, &concepts)
    }
}

fn normalized(weights: BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let total: f64 = weights.values().sum();
    if total <= 0.0 {
        return BTreeMap::new();
    }
    weights.into_iter().map(|(c, w)| (c, w / total)).collect()
}

fn for_each_tsv3<R: BufRead>(
    reader: R,
    source_name: &str,
    mut f: impl FnMut(usize, &str, &str, f64) -> Result<()>,
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(source_name, i + 1, "expected 3 non-empty tab-separated fields"));
        }
        let w: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source_name, i + 1, format!("bad number {:?}", fields[2])))?;
        if !w.is_finite() {
            return Err(Error::parse(source_name, i + 1, "non-finite number"));
        }
        f(i + 1, fields[0], fields[1], w)?;
    }
    Ok(())
}

pub fn open_reader(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::tests::toy;
    use crate::text::tokenize;

    fn sum(m: &BTreeMap<String, f64>) -> f64 {
        m.values().sum()
    }

    #[test]
    fn prior_normalizes() {
        let kb = KnowledgeBase::from_triples([("apple", "color", "red")]);
        let apple = kb.node_id("apple").unwrap();
        let mut g = ConceptGraph::new();
        g.load_isa("apple\tcompany\t4\napple\tfruit\t6\n".as_bytes(), "isa", &kb).unwrap();
        let prior = g.concept_prior(apple);
        assert!((prior["company"] - 0.4).abs() < 1e-15);
        assert!((prior["fruit"] - 0.6).abs() < 1e-15);
        assert!(g.concept_prior(kb.node_id("red").unwrap()).is_empty());

        let mut single = ConceptGraph::new();
        single.add_isa(apple, "fruit", 3.0);
        assert_eq!(single.concept_prior(apple), BTreeMap::from([("fruit".to_string(), 1.0)]));
    }

    #[test]
    fn context_reweighting() {
        let kb = toy();
        let obama = kb.node_id("BarackObama").unwrap();
        let mut g = ConceptGraph::new();
        g.add_isa(obama, "person", 1.0);
        g.add_isa(obama, "politician", 1.0);
        let q = tokenize("when was barack obama born");
        assert_eq!(g.conceptualize(&q, 2..4, obama), g.concept_prior(obama));

        // (1 + w_person) / (1 + w_politician) = 0.64 / 0.36 with w_politician = 0
        g.set_context_weight("person", "born", 0.64 / 0.36 - 1.0);
        let post = g.conceptualize(&q, 2..4, obama);
        assert!((post["person"] - 0.64).abs() < 1e-12);
        assert!((post["politician"] - 0.36).abs() < 1e-12);
        assert!((sum(&post) - 1.0).abs() < 1e-12);

        // tokens inside the mention are not context
        g.set_context_weight("politician", "obama", 5.0);
        assert_eq!(g.conceptualize(&q, 2..4, obama), post);
    }

    #[test]
    fn override_wins() {
        let kb = toy();
        let obama = kb.node_id("BarackObama").unwrap();
        let mut g = ConceptGraph::new();
        g.add_isa(obama, "person", 1.0);
        g.add_isa(obama, "politician", 1.0);
        g.load_overrides(
            "When was Barack Obama born?\tperson\t0.64\nWhen was Barack Obama born?\tpolitician\t0.36\n".as_bytes(),
            "fx",
        )
        .unwrap();
        let q = tokenize("when was barack obama born");
        let d = g.concept_distribution(&q, 2..4, obama);
        assert_eq!(d["person"], 0.64);
        let other = tokenize("where was barack obama born");
        assert_eq!(g.concept_distribution(&other, 2..4, obama)["person"], 0.5);
    }

    #[test]
    fn fallback_concept() {
        let kb = toy();
        let g = ConceptGraph::new();
        let q = tokenize("where is honolulu");
        let h = kb.node_id("Honolulu").unwrap();
        let ts = g.template_distribution(&q, 2..3, h).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.keys().next().unwrap().to_string(), "where is $entity");
    }

    #[test]
    fn derive_examples() {
        let q = tokenize("when was barack obama born");
        let concepts = BTreeMap::from([("person".to_string(), 0.64), ("politician".to_string(), 0.36)]);
        let ts = derive_templates(&q, 2..4, &concepts).unwrap();
        let shown: Vec<(String, f64)> = ts.iter().map(|(t, p)| (t.to_string(), *p)).collect();
        assert_eq!(
            shown,
            vec![("when was $person born".to_string(), 0.64), ("when was $politician born".to_string(), 0.36)]
        );
        let q = tokenize("How many people are there in Honolulu?");
        let ts = derive_templates(&q, 6..7, &BTreeMap::from([("city".to_string(), 1.0)])).unwrap();
        assert_eq!(ts.keys().next().unwrap().to_string(), "how many people are there in $city");
        assert_eq!(ts.values().next(), Some(&1.0));
        assert!(derive_templates(&q, 6..9, &BTreeMap::new()).is_err());
        assert!(derive_templates(&q, 3..3, &BTreeMap::new()).is_err());
    }

    #[test]
    fn template_parse_round_trip() {
        let t = Template::parse("When was $person born?").unwrap();
        assert_eq!(t.concept(), "person");
        assert_eq!(t.to_string(), "when was $person born");
        assert!(Template::parse("no placeholder").is_none());
        assert!(Template::parse("$a and $b").is_none());
    }
}
