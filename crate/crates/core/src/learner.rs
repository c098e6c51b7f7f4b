//! Estimation of `θ = P(p|t)` by expectation-maximization.
//!
//! Each observation `x_i` is reduced to an [`Instance`]: the template and
//! predicate candidates with positive probability and the constant prefactor
//! `P(q)P(e|q)`, so `f(x_i, (p,t)) = prefactor · P(t|e,q) · P(v|e,p)`. Only
//! those candidates are ever enumerated, which keeps one iteration linear in
//! the number of observations.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::concepts::{ConceptGraph, Template};
use crate::error::{Error, Result};
use crate::expansion::ExpansionIndex;
use crate::extraction::Observation;
use crate::kb::{ExpandedPredicate, KnowledgeBase};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_EPSILON: f64 = 1e-6;

pub type TemplateId = usize;
pub type PathId = usize;

/// Precomputed factors of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// `P(q) · P(e|q)`.
    pub prefactor: f64,
    /// `(t, P(t|e,q))` with positive probability.
    pub templates: Vec<(TemplateId, f64)>,
    /// `(p, P(v|e,p))` with positive probability.
    pub predicates: Vec<(PathId, f64)>,
    /// Multiplicity of the observation (`n(q, a)` of its pair).
    pub count: f64,
    /// `P(e,v|q,a) P(a|q) P(q)`, used only by the counting baseline.
    pub weight: f64,
}

impl Instance {
    pub fn f(&self, t: TemplateId, p: PathId) -> f64 {
        let pt = self.templates.iter().find(|(id, _)| *id == t).map_or(0.0, |x| x.1);
        let pv = self.predicates.iter().find(|(id, _)| *id == p).map_or(0.0, |x| x.1);
        self.prefactor * pt * pv
    }

    fn support(&self) -> impl Iterator<Item = (TemplateId, PathId, f64)> + '_ {
        self.templates.iter().flat_map(move |&(t, pt)| {
            self.predicates
                .iter()
                .map(move |&(p, pv)| (t, p, self.prefactor * pt * pv))
        })
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sparse row-stochastic table `θ[t][p]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Theta {
    rows: BTreeMap<TemplateId, BTreeMap<PathId, f64>>,
}

impl Theta {
    pub fn get(&self, t: TemplateId, p: PathId) -> f64 {
        self.rows.get(&t).and_then(|r| r.get(&p)).copied().unwrap_or(0.0)
    }

    pub fn rows(&self) -> &BTreeMap<TemplateId, BTreeMap<PathId, f64>> {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn set_row(&mut self, t: TemplateId, row: BTreeMap<PathId, f64>) {
        self.rows.insert(t, row);
    }

    /// Largest absolute entry-wise difference over the union of supports.
    pub fn max_abs_diff(&self, other: &Theta) -> f64 {
        let mut d: f64 = 0.0;
        for (t, row) in &self.rows {
            for (p, v) in row {
                d = d.max((v - other.get(*t, *p)).abs());
            }
        }
        for (t, row) in &other.rows {
            for (p, v) in row {
                d = d.max((v - self.get(*t, *p)).abs());
            }
        }
        d
    }

    /// Highest-probability predicate of a template; ties go to the smaller id.
    pub fn argmax(&self, t: TemplateId) -> Option<PathId> {
        let row = self.rows.get(&t)?;
        row.iter()
            .fold(None, |best: Option<(PathId, f64)>, (&p, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((p, v)),
            })
            .map(|(p, _)| p)
    }

    fn from_accumulators(acc: BTreeMap<TemplateId, BTreeMap<PathId, CompensatedSum>>) -> Theta {
        let mut rows = BTreeMap::new();
        for (t, cells) in acc {
            let mut total = CompensatedSum::default();
            for c in cells.values() {
                total.add(c.value());
            }
            let total = total.value();
            if total <= 0.0 {
                continue;
            }
            let row: BTreeMap<PathId, f64> = cells
                .into_iter()
                .map(|(p, c)| (p, c.value() / total))
                .filter(|(_, v)| *v > 0.0)
                .collect();
            rows.insert(t, row);
        }
        Theta { rows }
    }
}

/// `((t, p), responsibility)` pairs of one observation.
pub type Responsibilities = Vec<((TemplateId, PathId), f64)>;

/// Per-observation responsibilities; `None` marks a dropped observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub responsibilities: Vec<Option<Responsibilities>>,
}

impl Posterior {
    pub fn dropped(&self) -> usize {
        self.responsibilities.iter().filter(|r| r.is_none()).count()
    }
}

/// `θ⁽⁰⁾`: uniform over the predicates that co-occur with each template in
/// some positive `f`.
pub fn init_theta(instances: &[Instance]) -> Theta {
    let mut acc: BTreeMap<TemplateId, BTreeMap<PathId, CompensatedSum>> = BTreeMap::new();
    for inst in instances {
        for (t, p, f) in inst.support() {
            if f > 0.0 {
                acc.entry(t).or_default().entry(p).or_insert_with(|| {
                    let mut c = CompensatedSum::default();
                    c.add(1.0);
                    c
                });
            }
        }
    }
    Theta::from_accumulators(acc)
}

/// Responsibilities `∝ f(x_i, z) θ_pt`, normalized per observation.
pub fn e_step(instances: &[Instance], theta: &Theta) -> Posterior {
    let responsibilities = instances
        .iter()
        .map(|inst| {
            let scored: Vec<((TemplateId, PathId), f64)> = inst
                .support()
                .map(|(t, p, f)| ((t, p), f * theta.get(t, p)))
                .filter(|(_, s)| *s > 0.0)
                .collect();
            let mut total = CompensatedSum::default();
            for (_, s) in &scored {
                total.add(*s);
            }
            let total = total.value();
            if scored.is_empty() || total <= 0.0 {
                return None;
            }
            Some(scored.into_iter().map(|(z, s)| (z, s / total)).collect())
        })
        .collect();
    Posterior { responsibilities }
}

/// `θ_pt = Σ_i r_i(p,t) / Σ_p' Σ_i r_i(p',t)`, each observation weighted by
/// its multiplicity.
pub fn m_step(instances: &[Instance], posterior: &Posterior) -> Theta {
    let mut acc: BTreeMap<TemplateId, BTreeMap<PathId, CompensatedSum>> = BTreeMap::new();
    for (inst, resp) in instances.iter().zip(&posterior.responsibilities) {
        let Some(resp) = resp else { continue };
        for &((t, p), r) in resp {
            acc.entry(t).or_default().entry(p).or_default().add(inst.count * r);
        }
    }
    Theta::from_accumulators(acc)
}

/// `Σ_i count_i · log Σ_z f(x_i,z) θ_pt`, skipping zero-support observations.
pub fn log_likelihood(instances: &[Instance], theta: &Theta) -> f64 {
    let mut ll = CompensatedSum::default();
    for inst in instances {
        let mut marginal = CompensatedSum::default();
        for (t, p, f) in inst.support() {
            marginal.add(f * theta.get(t, p));
        }
        let m = marginal.value();
        if m > 0.0 {
            ll.add(inst.count * m.ln());
        }
    }
    ll.value()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub dropped_observations: usize,
    #[serde(skip)]
    pub log_likelihood_trace: Vec<f64>,
}

/// Alternates E and M steps from [`init_theta`] until the largest parameter
/// change drops below `epsilon` or `max_iters` iterations ran.
pub fn learn(instances: &[Instance], max_iters: usize, epsilon: f64) -> (Theta, TrainingReport) {
    let mut theta = init_theta(instances);
    let mut trace = vec![log_likelihood(instances, &theta)];
    let mut iterations = 0;
    let mut dropped = 0;
    if theta.is_empty() {
        let report = TrainingReport {
            iterations,
            final_log_likelihood: 0.0,
            dropped_observations: instances.len(),
            log_likelihood_trace: trace,
        };
        return (theta, report);
    }
    while iterations < max_iters.max(1) {
        let posterior = e_step(instances, &theta);
        dropped = posterior.dropped();
        let next = m_step(instances, &posterior);
        iterations += 1;
        let delta = next.max_abs_diff(&theta);
        theta = next;
        trace.push(log_likelihood(instances, &theta));
        if delta < epsilon {
            break;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} observations have no supported (template, predicate) pair");
    }
    let report = TrainingReport {
        iterations,
        final_log_likelihood: *trace.last().unwrap(),
        dropped_observations: dropped,
        log_likelihood_trace: trace,
    };
    (theta, report)
}

/// `θ_pt ∝ Σ_i weight_i · P(t|q_i,e_i) · P(p|e_i,v_i)` with
/// `P(p|e,v) ∝ P(v|e,p)`.
pub fn counting_baseline(instances: &[Instance]) -> Theta {
    let mut acc: BTreeMap<TemplateId, BTreeMap<PathId, CompensatedSum>> = BTreeMap::new();
    for inst in instances {
        let norm: f64 = inst.predicates.iter().map(|(_, pv)| pv).sum();
        if norm <= 0.0 {
            continue;
        }
        for &(t, pt) in &inst.templates {
            for &(p, pv) in &inst.predicates {
                acc.entry(t).or_default().entry(p).or_default().add(inst.weight * pt * pv / norm);
            }
        }
    }
    Theta::from_accumulators(acc)
}

/// Interned templates and expanded predicates plus the instances over them.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub templates: Vec<Template>,
    pub paths: Vec<ExpandedPredicate>,
    pub instances: Vec<Instance>,
}

impl TrainingSet {
    /// Computes `P(t|e,q)` through the concept graph and `P(v|e,p)` through
    /// the store for each expanded predicate that connects `e` and `v`.
    pub fn build(
        observations: &[Observation],
        concepts: &ConceptGraph,
        kb: &KnowledgeBase,
        expansion: &ExpansionIndex,
    ) -> Result<Self> {
        let mut set = TrainingSet::default();
        let mut template_ids: HashMap<Template, TemplateId> = HashMap::new();
        let mut path_ids: HashMap<ExpandedPredicate, PathId> = HashMap::new();
        for o in observations {
            let tdist = concepts.template_distribution(&o.question, o.mention.clone(), o.entity)?;
            let templates = tdist
                .into_iter()
                .map(|(t, p)| {
                    let next = template_ids.len();
                    let id = *template_ids.entry(t.clone()).or_insert_with(|| {
                        set.templates.push(t);
                        next
                    });
                    (id, p)
                })
                .collect();
            let predicates = expansion
                .paths_between(o.entity, o.value)
                .iter()
                .filter_map(|path| {
                    let pv = kb.value_distribution(o.entity, path).get(&o.value).copied()?;
                    let next = path_ids.len();
                    let id = *path_ids.entry(path.clone()).or_insert_with(|| {
                        set.paths.push(path.clone());
                        next
                    });
                    Some((id, pv))
                })
                .collect();
            set.instances.push(Instance {
                prefactor: o.p_question * o.p_entity,
                templates,
                predicates,
                count: o.count as f64,
                weight: o.weight(),
            });
        }
        Ok(set)
    }

    pub fn template_id(&self, t: &Template) -> Option<TemplateId> {
        self.templates.iter().position(|x| x == t)
    }

    pub fn path_id(&self, p: &ExpandedPredicate) -> Option<PathId> {
        self.paths.iter().position(|x| x == p)
    }

    pub fn model(&self, theta: &Theta) -> PredicateModel {
        let mut model = PredicateModel::default();
        for (&t, row) in theta.rows() {
            for (&p, &v) in row {
                model.insert(self.templates[t].clone(), self.paths[p].clone(), v);
            }
        }
        model.sort_rows();
        model
    }
}

/// Learned `P(p|t)`, keyed by template.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredicateModel {
    rows: BTreeMap<Template, Vec<(ExpandedPredicate, f64)>>,
}

impl PredicateModel {
    pub fn insert(&mut self, t: Template, p: ExpandedPredicate, prob: f64) {
        self.rows.entry(t).or_default().push((p, prob));
    }

    /// Probability descending, then path order.
    fn sort_rows(&mut self) {
        for row in self.rows.values_mut() {
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        }
    }

    pub fn row(&self, t: &Template) -> Option<&[(ExpandedPredicate, f64)]> {
        self.rows.get(t).map(Vec::as_slice)
    }

    pub fn get(&self, t: &Template, p: &ExpandedPredicate) -> f64 {
        self.row(t)
            .and_then(|r| r.iter().find(|(q, _)| q == p))
            .map_or(0.0, |x| x.1)
    }

    pub fn templates(&self) -> impl Iterator<Item = &Template> {
        self.rows.keys()
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Top predicate of a template (first in row order).
    pub fn best(&self, t: &Template) -> Option<&ExpandedPredicate> {
        self.row(t).and_then(|r| r.first()).map(|x| &x.0)
    }

    /// TSV `template<TAB>p1|p2|...<TAB>probability`, sorted by template then
    /// probability descending.
    pub fn write<W: Write>(&self, kb: &KnowledgeBase, mut out: W) -> std::io::Result<()> {
        for (t, row) in &self.rows {
            for (p, v) in row {
                writeln!(out, "{}\t{}\t{}", t, kb.format_path(p), v)?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R, source_name: &str, kb: &KnowledgeBase) -> Result<Self> {
        let mut model = PredicateModel::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(source_name, i + 1, "expected template<TAB>path<TAB>probability"));
            }
            let t = Template::parse(fields[0])
                .ok_or_else(|| Error::parse(source_name, i + 1, "template needs exactly one $concept"))?;
            let Some(p) = kb.parse_path(fields[1]) else {
                log::warn!("{source_name}:{}: path {:?} not in store, skipped", i + 1, fields[1]);
                continue;
            };
            let prob: f64 = fields[2]
                .parse()
                .ok()
                .filter(|v: &f64| (0.0..=1.0).contains(v))
                .ok_or_else(|| Error::parse(source_name, i + 1, "probability outside [0, 1]"))?;
            model.insert(t, p, prob);
        }
        model.sort_rows();
        Ok(model)
    }

    pub fn load_file(path: &Path, kb: &KnowledgeBase) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load(std::io::BufReader::new(file), &path.display().to_string(), kb)
    }
}
