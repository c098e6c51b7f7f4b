//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use kbqa_core::answer::AnswerEngine;
use kbqa_core::concepts::{ConceptGraph, Template};
use kbqa_core::decompose::{self, PatternIndex};
use kbqa_core::entity_index::{EntityDictionary, StaticHashArray};
use kbqa_core::extraction::{CorpusStats, QaPair};
use kbqa_core::kb::{ExpandedPredicate, KnowledgeBase, NodeId, SpoPath};
use kbqa_core::learner::{Instance, PredicateModel, Theta};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

pub fn toy_kb() -> KnowledgeBase {
    KnowledgeBase::load_file(fixtures().join("kb.tsv")).unwrap()
}

// ---------------------------------------------------------------- graphs

/// Random multigraph over `n{i}` nodes with predicates `p0..` plus `name`.
pub fn random_graph(rng: &mut ChaCha8Rng, nodes: usize, predicates: usize, edges: usize) -> KnowledgeBase {
    let mut preds: Vec<String> = (0..predicates).map(|i| format!("p{i}")).collect();
    preds.push("name".to_string());
    let triples: Vec<(String, String, String)> = (0..edges)
        .map(|_| {
            let s = rng.gen_range(0..nodes);
            let o = rng.gen_range(0..nodes);
            let p = preds.choose(rng).unwrap().clone();
            (format!("n{s}"), p, format!("n{o}"))
        })
        .collect();
    KnowledgeBase::from_triples(triples)
}

/// Depth-first enumeration of every walk of length `1..=k` from each seed,
/// over an adjacency list built here from the raw triples.
pub fn naive_expansion(kb: &KnowledgeBase, seeds: &BTreeSet<NodeId>, k: usize, restricted: bool) -> BTreeSet<SpoPath> {
    let mut adj: HashMap<NodeId, Vec<(kbqa_core::PredicateId, NodeId)>> = HashMap::new();
    for t in kb.triples() {
        adj.entry(t.subject).or_default().push((t.predicate, t.object));
    }
    let name = kb.predicate_id("name");
    let mut out = BTreeSet::new();
    fn walk(
        adj: &HashMap<NodeId, Vec<(kbqa_core::PredicateId, NodeId)>>,
        seed: NodeId,
        at: NodeId,
        path: &mut Vec<kbqa_core::PredicateId>,
        k: usize,
        accept: &dyn Fn(&[kbqa_core::PredicateId]) -> bool,
        out: &mut BTreeSet<SpoPath>,
    ) {
        if path.len() == k {
            return;
        }
        for &(p, o) in adj.get(&at).map(Vec::as_slice).unwrap_or(&[]) {
            path.push(p);
            if accept(path) {
                out.insert(SpoPath {
                    subject: seed,
                    path: ExpandedPredicate::new(path.clone()),
                    object: o,
                });
            }
            walk(adj, seed, o, path, k, accept, out);
            path.pop();
        }
    }
    let accept = |p: &[kbqa_core::PredicateId]| !restricted || p.len() == 1 || (name.is_some() && p.last().copied() == name);
    for &s in seeds {
        walk(&adj, s, s, &mut Vec::new(), k, &accept, &mut out);
    }
    out
}

// ---------------------------------------------------------------- EM

pub fn random_instances(rng: &mut ChaCha8Rng, n: usize, templates: usize, predicates: usize) -> Vec<Instance> {
    (0..n)
        .map(|_| {
            let nt = rng.gen_range(1..=templates);
            let np = rng.gen_range(1..=predicates);
            let mut ts: Vec<usize> = (0..templates).collect();
            ts.shuffle(rng);
            let mut ps: Vec<usize> = (0..predicates).collect();
            ps.shuffle(rng);
            let mut tprobs: Vec<f64> = (0..nt).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = tprobs.iter().sum();
            tprobs.iter_mut().for_each(|p| *p /= total);
            Instance {
                prefactor: rng.gen_range(0.01..1.0),
                templates: ts[..nt].iter().copied().zip(tprobs).collect(),
                predicates: ps[..np].iter().map(|&p| (p, rng.gen_range(0.05..1.0))).collect(),
                count: rng.gen_range(1..4) as f64,
                weight: rng.gen_range(0.01..1.0),
            }
        })
        .collect()
}

/// Bayes posterior over the full `templates × predicates` grid, built from
/// the raw instance fields.
pub fn brute_posterior(inst: &Instance, theta: &Theta, templates: usize, predicates: usize) -> BTreeMap<(usize, usize), f64> {
    let lookup = |v: &[(usize, f64)], id: usize| v.iter().find(|x| x.0 == id).map_or(0.0, |x| x.1);
    let mut joint = BTreeMap::new();
    for t in 0..templates {
        for p in 0..predicates {
            let f = inst.prefactor * lookup(&inst.templates, t) * lookup(&inst.predicates, p);
            joint.insert((t, p), f * theta.get(t, p));
        }
    }
    let z: f64 = joint.values().sum();
    joint.into_iter().map(|(k, v)| (k, if z > 0.0 { v / z } else { 0.0 })).collect()
}

/// 100 observations of template 0: 90 connect through predicate 0 (plus a
/// weaker co-connector 2), 10 through predicate 1 only.
pub fn noisy_instances(rng: &mut ChaCha8Rng) -> Vec<Instance> {
    let mut out = Vec::new();
    for i in 0..100 {
        let predicates = if i < 90 {
            vec![(0, 1.0), (2, rng.gen_range(0.1..0.5))]
        } else {
            vec![(1, 1.0)]
        };
        out.push(Instance {
            prefactor: 0.01,
            templates: vec![(0, 1.0)],
            predicates,
            count: 1.0,
            weight: 0.01,
        });
    }
    out.shuffle(rng);
    out
}

// ---------------------------------------------------------------- answering

/// A random store where each of `entities` subjects `e{i}` has a single-token
/// surface `ent{i}`, random concepts and a random model.
pub struct RandomWorld {
    pub kb: KnowledgeBase,
    pub dict: EntityDictionary,
    pub index: StaticHashArray,
    pub concepts: ConceptGraph,
    pub model: PredicateModel,
    pub isa: BTreeMap<NodeId, BTreeMap<String, f64>>,
    pub paths: Vec<ExpandedPredicate>,
}

pub const CONCEPTS: [&str; 3] = ["alpha", "beta", "gamma"];

impl RandomWorld {
    pub fn new(rng: &mut ChaCha8Rng, entities: usize, predicates: usize) -> Self {
        let mut triples = Vec::new();
        for e in 0..entities {
            for _ in 0..rng.gen_range(1..5) {
                let p = rng.gen_range(0..predicates);
                let o = if rng.gen_bool(0.5) {
                    format!("e{}", rng.gen_range(0..entities))
                } else {
                    format!("v{}", rng.gen_range(0..6))
                };
                triples.push((format!("e{e}"), format!("p{p}"), o));
            }
        }
        let kb = KnowledgeBase::from_triples(triples);
        let mut dict = EntityDictionary::default();
        let mut concepts = ConceptGraph::new();
        let mut isa = BTreeMap::new();
        for e in 0..entities {
            let Some(n) = kb.node_id(&format!("e{e}")) else { continue };
            dict.insert(n, format!("ent{e}"));
            let mut weights = BTreeMap::new();
            for c in CONCEPTS {
                if rng.gen_bool(0.6) {
                    let w = rng.gen_range(0.1..2.0);
                    concepts.add_isa(n, c, w);
                    weights.insert(c.to_string(), w);
                }
            }
            isa.insert(n, weights);
        }
        let index = dict.build_index();
        let mut paths: Vec<ExpandedPredicate> = Vec::new();
        for p in 0..predicates {
            let Some(a) = kb.predicate_id(&format!("p{p}")) else { continue };
            paths.push(ExpandedPredicate::single(a));
            for q in 0..predicates {
                if let Some(b) = kb.predicate_id(&format!("p{q}")) {
                    if rng.gen_bool(0.2) {
                        paths.push(ExpandedPredicate::new(vec![a, b]));
                    }
                }
            }
        }
        let mut model = PredicateModel::default();
        let shapes: [&[&str]; 3] = [&["what", "is", "the", "$", "of"], &["$", "born"], &["who", "$"]];
        for shape in shapes {
            for c in CONCEPTS.iter().chain(std::iter::once(&"entity")) {
                if !rng.gen_bool(0.7) {
                    continue;
                }
                let tokens: Vec<String> = shape
                    .iter()
                    .map(|t| if *t == "$" { format!("${c}") } else { t.to_string() })
                    .collect();
                let t = Template::parse(&tokens.join(" ")).unwrap();
                let mut chosen: Vec<&ExpandedPredicate> = paths.iter().filter(|_| rng.gen_bool(0.4)).collect();
                if chosen.is_empty() {
                    chosen.push(paths.choose(rng).unwrap());
                }
                let ws: Vec<f64> = chosen.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = ws.iter().sum();
                for (p, w) in chosen.into_iter().zip(ws) {
                    model.insert(t.clone(), p.clone(), w / total);
                }
            }
        }
        RandomWorld {
            kb,
            dict,
            index,
            concepts,
            model,
            isa,
            paths,
        }
    }

    pub fn engine(&self) -> AnswerEngine<'_> {
        AnswerEngine {
            kb: &self.kb,
            index: &self.index,
            dictionary: &self.dict,
            concepts: &self.concepts,
            model: &self.model,
            max_span: 1,
        }
    }

    /// A question in one of the model shapes around entity `e`'s surface.
    pub fn question(&self, rng: &mut ChaCha8Rng, entities: usize) -> Vec<String> {
        let e = format!("ent{}", rng.gen_range(0..entities));
        let shape = rng.gen_range(0..4);
        let words: Vec<&str> = match shape {
            0 => vec!["what", "is", "the", &e, "of"],
            1 => vec![&e, "born"],
            2 => vec!["who", &e],
            _ => vec!["who", "knows", &e],
        };
        words.into_iter().map(str::to_string).collect()
    }

    /// Quadruple sum over every entity, template, predicate and node, with
    /// each factor recomputed from raw inputs.
    pub fn brute_force(&self, q: &[String]) -> BTreeMap<NodeId, f64> {
        let mentioned: Vec<(NodeId, usize)> = self
            .kb
            .entities()
            .into_iter()
            .filter_map(|e| {
                let surface = self.dict.canonical(e)?;
                q.iter().position(|t| t == surface).map(|i| (e, i))
            })
            .collect();
        let mut raw: BTreeMap<NodeId, f64> = BTreeMap::new();
        for e in self.kb.entities() {
            let Some(&(_, at)) = mentioned.iter().find(|(m, _)| *m == e) else { continue };
            let pe = 1.0 / mentioned.len() as f64;
            let weights = &self.isa[&e];
            let total: f64 = weights.values().sum();
            let concept_dist: BTreeMap<String, f64> = if weights.is_empty() {
                BTreeMap::from([("entity".to_string(), 1.0)])
            } else {
                weights.iter().map(|(c, w)| (c.clone(), w / total)).collect()
            };
            for t in self.model.templates() {
                let pt = template_probability(q, at, t, &concept_dist);
                for p in &self.paths {
                    let theta = self.model.get(t, p);
                    let reach = walk_values(&self.kb, e, p);
                    for v in self.kb.nodes() {
                        let pv = if reach.contains(&v) { 1.0 / reach.len() as f64 } else { 0.0 };
                        let m = pe * pt * theta * pv;
                        if m > 0.0 {
                            *raw.entry(v).or_insert(0.0) += m;
                        }
                    }
                }
            }
        }
        let z: f64 = raw.values().sum();
        raw.into_iter().map(|(v, m)| (v, m / z)).collect()
    }
}

fn template_probability(q: &[String], at: usize, t: &Template, concepts: &BTreeMap<String, f64>) -> f64 {
    let toks = t.tokens();
    if toks.len() != q.len() {
        return 0.0;
    }
    for (i, tok) in toks.iter().enumerate() {
        if i == at {
            if !tok.starts_with('$') {
                return 0.0;
            }
        } else if tok != &q[i] {
            return 0.0;
        }
    }
    concepts.get(t.concept()).copied().unwrap_or(0.0)
}

fn walk_values(kb: &KnowledgeBase, e: NodeId, path: &ExpandedPredicate) -> BTreeSet<NodeId> {
    let mut frontier = BTreeSet::from([e]);
    for &p in path.steps() {
        frontier = kb
            .triples()
            .iter()
            .filter(|t| t.predicate == p && frontier.contains(&t.subject))
            .map(|t| t.object)
            .collect();
    }
    frontier
}

// ---------------------------------------------------------------- decomposition

pub const VOCAB: [&str; 9] = ["when", "was", "born", "wife", "'s", "of", "the", "ent0", "ent1"];

/// Store with single-token entity surfaces `ent0`, `ent1`, `ent2`.
pub fn decomposition_world() -> (KnowledgeBase, StaticHashArray) {
    let kb = KnowledgeBase::from_triples([("e0", "p", "x"), ("e1", "p", "y"), ("e2", "q", "x")]);
    let mut dict = EntityDictionary::default();
    for i in 0..3 {
        dict.insert(kb.node_id(&format!("e{i}")).unwrap(), format!("ent{i}"));
    }
    let idx = dict.build_index();
    (kb, idx)
}

pub fn random_question(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<String> {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
}

/// Random corpus plus pattern index over [`decomposition_world`].
pub fn random_patterns(rng: &mut ChaCha8Rng, kb: &KnowledgeBase, idx: &StaticHashArray) -> PatternIndex {
    let corpus: Vec<QaPair> = (0..40)
        .map(|_| {
            let q = random_question(rng, 2, 5);
            QaPair {
                question: q,
                answer: vec!["x".to_string()],
                frequency: rng.gen_range(1..3),
            }
        })
        .collect();
    let stats = CorpusStats::compute(&corpus).unwrap();
    PatternIndex::build(&stats, idx, kb, 1)
}

/// `δ`: exactly one entity token, at most three tokens, and not ending in
/// `of`.
pub fn toy_delta(q: &[String]) -> bool {
    q.len() <= 3 && q.iter().filter(|t| t.starts_with("ent")).count() == 1 && q.last().map(String::as_str) != Some("of")
}

pub fn decompose_pair(
    q: &[String],
    patterns: &PatternIndex,
) -> (decompose::Decomposition, decompose::Decomposition) {
    let dp = decompose::decompose(q, patterns, &toy_delta, 23).unwrap();
    let bf = decompose::decompose_bruteforce(q, patterns, &toy_delta).unwrap();
    (dp, bf)
}
