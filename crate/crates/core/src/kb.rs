//! Immutable RDF triple store.
//!
//! Node and predicate symbols are interned in sorted order, so comparing ids
//! is the same as comparing symbols. Triples are kept sorted by
//! `(subject, predicate, object)`; a subject's outgoing edges are one
//! contiguous slice.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PredicateId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: NodeId,
    pub predicate: PredicateId,
    pub object: NodeId,
}

/// A predicate sequence treated as one relation, e.g. `marriage|person|name`.
///
/// Ordered shorter-first, then lexicographically by step ids (which follow
/// symbol order).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExpandedPredicate {
    steps: Vec<PredicateId>,
}

impl ExpandedPredicate {
    pub fn new(steps: Vec<PredicateId>) -> Self {
        ExpandedPredicate { steps }
    }

    pub fn single(p: PredicateId) -> Self {
        ExpandedPredicate { steps: vec![p] }
    }

    pub fn steps(&self) -> &[PredicateId] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<PredicateId> {
        self.steps.last().copied()
    }

    pub fn extended(&self, p: PredicateId) -> Self {
        let mut steps = Vec::with_capacity(self.steps.len() + 1);
        steps.extend_from_slice(&self.steps);
        steps.push(p);
        ExpandedPredicate { steps }
    }
}

impl Ord for ExpandedPredicate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.steps
            .len()
            .cmp(&other.steps.len())
            .then_with(|| self.steps.cmp(&other.steps))
    }
}

impl PartialOrd for ExpandedPredicate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// `(s, p+, o)`: the path connects subject and object in the store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpoPath {
    pub subject: NodeId,
    pub path: ExpandedPredicate,
    pub object: NodeId,
}

/// Which expanded predicates are admissible.
///
/// With a name restriction, every path of length two or more must end with the
/// given predicate symbol. Length-one paths are always admissible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPolicy {
    pub max_len: usize,
    pub name_predicate: Option<String>,
}

pub const DEFAULT_MAX_PATH_LEN: usize = 3;
pub const DEFAULT_NAME_PREDICATE: &str = "name";

impl Default for PathPolicy {
    fn default() -> Self {
        PathPolicy {
            max_len: DEFAULT_MAX_PATH_LEN,
            name_predicate: Some(DEFAULT_NAME_PREDICATE.to_string()),
        }
    }
}

impl PathPolicy {
    pub fn unrestricted(max_len: usize) -> Self {
        PathPolicy {
            max_len,
            name_predicate: None,
        }
    }

    pub fn restricted(max_len: usize) -> Self {
        PathPolicy {
            max_len,
            ..Default::default()
        }
    }

    pub(crate) fn resolve(&self, kb: &KnowledgeBase) -> ResolvedPolicy {
        let terminal = match &self.name_predicate {
            None => Terminal::Any,
            Some(sym) => match kb.predicate_id(sym) {
                Some(p) => Terminal::Only(p),
                None => Terminal::Never,
            },
        };
        ResolvedPolicy {
            max_len: self.max_len,
            terminal,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Terminal {
    Any,
    Only(PredicateId),
    // restriction requested but the predicate does not occur in the store
    Never,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ResolvedPolicy {
    pub max_len: usize,
    terminal: Terminal,
}

impl ResolvedPolicy {
    pub fn accepts(&self, path: &ExpandedPredicate) -> bool {
        if path.is_empty() || path.len() > self.max_len {
            return false;
        }
        if path.len() == 1 {
            return true;
        }
        match self.terminal {
            Terminal::Any => true,
            Terminal::Only(p) => path.last() == Some(p),
            Terminal::Never => false,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    fn from_sorted(names: BTreeSet<String>) -> Self {
        let names: Vec<String> = names.into_iter().collect();
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        SymbolTable { names, ids }
    }

    fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }
}

#[derive(Debug, Default, Clone)]
pub struct KnowledgeBase {
    nodes: SymbolTable,
    predicates: SymbolTable,
    triples: Vec<Triple>,
    subjects: HashMap<NodeId, Range<usize>>,
    pairs: HashMap<(NodeId, NodeId), Vec<PredicateId>>,
}

impl KnowledgeBase {
    /// Parses `subject<TAB>predicate<TAB>object` lines. Blank lines and lines
    /// starting with `#` are skipped; duplicate triples collapse.
    pub fn load<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            if let Some((s, p, o)) = parse_triple_line(&line, source_name, i + 1)? {
                raw.push((s.to_string(), p.to_string(), o.to_string()));
            }
        }
        Ok(Self::from_triples(raw))
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn from_triples<S: Into<String>>(raw: impl IntoIterator<Item = (S, S, S)>) -> Self {
        let raw: Vec<(String, String, String)> = raw
            .into_iter()
            .map(|(s, p, o)| (s.into(), p.into(), o.into()))
            .collect();
        let mut node_names = BTreeSet::new();
        let mut pred_names = BTreeSet::new();
        for (s, p, o) in &raw {
            node_names.insert(s.clone());
            node_names.insert(o.clone());
            pred_names.insert(p.clone());
        }
        let nodes = SymbolTable::from_sorted(node_names);
        let predicates = SymbolTable::from_sorted(pred_names);

        let mut triples: Vec<Triple> = raw
            .iter()
            .map(|(s, p, o)| Triple {
                subject: NodeId(nodes.get(s).unwrap()),
                predicate: PredicateId(predicates.get(p).unwrap()),
                object: NodeId(nodes.get(o).unwrap()),
            })
            .collect();
        triples.sort_unstable();
        triples.dedup();

        let mut subjects: HashMap<NodeId, Range<usize>> = HashMap::new();
        let mut pairs: HashMap<(NodeId, NodeId), Vec<PredicateId>> = HashMap::new();
        for (i, t) in triples.iter().enumerate() {
            subjects.entry(t.subject).or_insert(i..i).end = i + 1;
            pairs.entry((t.subject, t.object)).or_default().push(t.predicate);
        }

        KnowledgeBase {
            nodes,
            predicates,
            triples,
            subjects,
            pairs,
        }
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    /// Number of distinct subjects; only these are entities.
    pub fn entity_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.names.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn is_entity(&self, n: NodeId) -> bool {
        self.subjects.contains_key(&n)
    }

    /// All entities in id order.
    pub fn entities(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.subjects.keys().copied().collect();
        out.sort_unstable();
        out
    }

    pub fn node_id(&self, symbol: &str) -> Option<NodeId> {
        self.nodes.get(symbol).map(NodeId)
    }

    pub fn predicate_id(&self, symbol: &str) -> Option<PredicateId> {
        self.predicates.get(symbol).map(PredicateId)
    }

    pub fn node_symbol(&self, n: NodeId) -> &str {
        &self.nodes.names[n.0 as usize]
    }

    pub fn predicate_symbol(&self, p: PredicateId) -> &str {
        &self.predicates.names[p.0 as usize]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.names.len() as u32).map(NodeId)
    }

    /// Parses `p1|p2|...` into an expanded predicate; `None` if any step is unknown.
    pub fn parse_path(&self, text: &str) -> Option<ExpandedPredicate> {
        let steps = text
            .split('|')
            .map(|s| self.predicate_id(s))
            .collect::<Option<Vec<_>>>()?;
        if steps.is_empty() {
            return None;
        }
        Some(ExpandedPredicate::new(steps))
    }

    pub fn format_path(&self, path: &ExpandedPredicate) -> String {
        path.steps()
            .iter()
            .map(|&p| self.predicate_symbol(p))
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Outgoing edges of `s`, sorted by predicate then object.
    pub fn outgoing(&self, s: NodeId) -> &[Triple] {
        match self.subjects.get(&s) {
            Some(r) => &self.triples[r.clone()],
            None => &[],
        }
    }

    pub fn objects(&self, s: NodeId, p: PredicateId) -> impl Iterator<Item = NodeId> + '_ {
        let out = self.outgoing(s);
        let start = out.partition_point(|t| t.predicate < p);
        out[start..]
            .iter()
            .take_while(move |t| t.predicate == p)
            .map(|t| t.object)
    }

    /// Direct predicates between a subject/object pair.
    pub fn direct_predicates(&self, s: NodeId, o: NodeId) -> &[PredicateId] {
        self.pairs.get(&(s, o)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct nodes reachable from `e` by walking `path`.
    pub fn values(&self, e: NodeId, path: &ExpandedPredicate) -> BTreeSet<NodeId> {
        let mut frontier: BTreeSet<NodeId> = BTreeSet::from([e]);
        for &p in path.steps() {
            let mut next = BTreeSet::new();
            for &n in &frontier {
                next.extend(self.objects(n, p));
            }
            if next.is_empty() {
                return next;
            }
            frontier = next;
        }
        if path.is_empty() {
            return BTreeSet::new();
        }
        frontier
    }

    /// `P(v|e,p)`: uniform over the distinct values reachable through `path`.
    pub fn value_distribution(&self, e: NodeId, path: &ExpandedPredicate) -> BTreeMap<NodeId, f64> {
        let values = self.values(e, path);
        let share = 1.0 / values.len() as f64;
        values.into_iter().map(|v| (v, share)).collect()
    }

    /// Every expanded predicate of length `<= k_max` connecting `e` to `v`,
    /// without the name restriction.
    pub fn predicates_between(&self, e: NodeId, v: NodeId, k_max: usize) -> Vec<ExpandedPredicate> {
        self.predicates_between_with(e, v, &PathPolicy::unrestricted(k_max))
    }

    pub fn predicates_between_with(
        &self,
        e: NodeId,
        v: NodeId,
        policy: &PathPolicy,
    ) -> Vec<ExpandedPredicate> {
        self.paths_from(e, policy)
            .remove(&v)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default()
    }

    /// All admissible `(p+, o)` from `e`, grouped by object.
    pub fn paths_from(
        &self,
        e: NodeId,
        policy: &PathPolicy,
    ) -> BTreeMap<NodeId, BTreeSet<ExpandedPredicate>> {
        let resolved = policy.resolve(self);
        let mut out: BTreeMap<NodeId, BTreeSet<ExpandedPredicate>> = BTreeMap::new();
        let mut frontier: BTreeSet<(NodeId, ExpandedPredicate)> =
            BTreeSet::from([(e, ExpandedPredicate::new(Vec::new()))]);
        for _ in 0..policy.max_len {
            let mut next = BTreeSet::new();
            for (node, path) in &frontier {
                for t in self.outgoing(*node) {
                    let extended = path.extended(t.predicate);
                    if resolved.accepts(&extended) {
                        out.entry(t.object).or_default().insert(extended.clone());
                    }
                    next.insert((t.object, extended));
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        out
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject.0, self.predicate.0, self.object.0)
    }
}

pub(crate) fn parse_triple_line<'a>(
    line: &'a str,
    source_name: &str,
    line_no: usize,
) -> Result<Option<(&'a str, &'a str, &'a str)>> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(Error::parse(
            source_name,
            line_no,
            format!("expected 3 tab-separated fields, found {}", fields.len()),
        ));
    }
    if fields.iter().any(|f| f.is_empty()) {
        return Err(Error::parse(source_name, line_no, "empty field"));
    }
    Ok(Some((fields[0], fields[1], fields[2])))
}
