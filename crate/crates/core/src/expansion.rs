//! Multi-source, scan-based generation of expanded predicates.
//!
//! Round `i` makes one full pass over a [`TripleSource`] and joins each
//! triple's subject against an in-memory hash of the frontier reached after
//! `i - 1` steps. The store is never indexed by object, so the same code runs
//! unchanged against a file that is re-read on every round.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kb::{parse_triple_line, ExpandedPredicate, KnowledgeBase, NodeId, PathPolicy, SpoPath, Triple};

/// Something that can be scanned front to back, repeatedly.
pub trait TripleSource {
    fn scan(&self, visit: &mut dyn FnMut(Triple)) -> Result<()>;
}

impl TripleSource for KnowledgeBase {
    fn scan(&self, visit: &mut dyn FnMut(Triple)) -> Result<()> {
        for &t in self.triples() {
            visit(t);
        }
        Ok(())
    }
}

/// Re-reads a KB file on every scan, resolving symbols through an already
/// loaded store.
pub struct FileTripleSource<'a> {
    path: PathBuf,
    symbols: &'a KnowledgeBase,
}

impl<'a> FileTripleSource<'a> {
    pub fn new(path: impl Into<PathBuf>, symbols: &'a KnowledgeBase) -> Self {
        FileTripleSource {
            path: path.into(),
            symbols,
        }
    }
}

impl TripleSource for FileTripleSource<'_> {
    fn scan(&self, visit: &mut dyn FnMut(Triple)) -> Result<()> {
        let name = self.path.display().to_string();
        let file = std::fs::File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            let Some((s, p, o)) = parse_triple_line(&line, &name, i + 1)? else {
                continue;
            };
            let resolved = (
                self.symbols.node_id(s),
                self.symbols.predicate_id(p),
                self.symbols.node_id(o),
            );
            match resolved {
                (Some(subject), Some(predicate), Some(object)) => visit(Triple {
                    subject,
                    predicate,
                    object,
                }),
                _ => return Err(Error::parse(&name, i + 1, "symbol not present in the loaded store")),
            }
        }
        Ok(())
    }
}

/// `{(s, p+, o) | s in seeds, |p+| <= k}` filtered by the policy's name
/// restriction. Paths that fail the restriction are still extended.
pub fn expand_predicates(
    source: &dyn TripleSource,
    kb: &KnowledgeBase,
    seeds: &BTreeSet<NodeId>,
    policy: &PathPolicy,
) -> Result<BTreeSet<SpoPath>> {
    let resolved = policy.resolve(kb);
    let mut results = BTreeSet::new();
    let mut frontier: HashMap<NodeId, BTreeSet<(NodeId, ExpandedPredicate)>> = seeds
        .iter()
        .map(|&s| (s, BTreeSet::from([(s, ExpandedPredicate::new(Vec::new()))])))
        .collect();

    for round in 1..=policy.max_len {
        if frontier.is_empty() {
            break;
        }
        let mut next: HashMap<NodeId, BTreeSet<(NodeId, ExpandedPredicate)>> = HashMap::new();
        source.scan(&mut |t: Triple| {
            let Some(entries) = frontier.get(&t.subject) else {
                return;
            };
            for (seed, path) in entries {
                let extended = path.extended(t.predicate);
                if resolved.accepts(&extended) {
                    results.insert(SpoPath {
                        subject: *seed,
                        path: extended.clone(),
                        object: t.object,
                    });
                }
                if round < policy.max_len {
                    next.entry(t.object).or_default().insert((*seed, extended));
                }
            }
        })?;
        log::debug!("expansion round {round}: {} paths so far, {} frontier nodes", results.len(), next.len());
        frontier = next;
    }
    Ok(results)
}

/// `valid(k)`: number of length-`k` paths whose endpoints appear in the
/// reference fact set.
pub fn valid_k(paths: &BTreeSet<SpoPath>, reference: &HashSet<(NodeId, NodeId)>, k: usize) -> usize {
    paths
        .iter()
        .filter(|p| p.path.len() == k && reference.contains(&(p.subject, p.object)))
        .count()
}

/// Expansion results grouped by subject then object, for extraction lookups.
#[derive(Debug, Default, Clone)]
pub struct ExpansionIndex {
    by_subject: HashMap<NodeId, BTreeMap<NodeId, Vec<ExpandedPredicate>>>,
}

impl ExpansionIndex {
    pub fn from_paths<'a>(paths: impl IntoIterator<Item = &'a SpoPath>) -> Self {
        let mut by_subject: HashMap<NodeId, BTreeMap<NodeId, Vec<ExpandedPredicate>>> = HashMap::new();
        for p in paths {
            by_subject
                .entry(p.subject)
                .or_default()
                .entry(p.object)
                .or_default()
                .push(p.path.clone());
        }
        for objects in by_subject.values_mut() {
            for paths in objects.values_mut() {
                paths.sort();
                paths.dedup();
            }
        }
        ExpansionIndex { by_subject }
    }

    /// Builds the index directly from the in-memory store.
    pub fn build(kb: &KnowledgeBase, seeds: &BTreeSet<NodeId>, policy: &PathPolicy) -> Result<Self> {
        Ok(Self::from_paths(&expand_predicates(kb, kb, seeds, policy)?))
    }

    pub fn values_from(&self, e: NodeId) -> impl Iterator<Item = (NodeId, &[ExpandedPredicate])> {
        self.by_subject
            .get(&e)
            .into_iter()
            .flat_map(|m| m.iter().map(|(v, ps)| (*v, ps.as_slice())))
    }

    pub fn paths_between(&self, e: NodeId, v: NodeId) -> &[ExpandedPredicate] {
        self.by_subject
            .get(&e)
            .and_then(|m| m.get(&v))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Writes `subject<TAB>p1|p2|...<TAB>object` lines in path order.
pub fn write_expansion<W: Write>(kb: &KnowledgeBase, paths: &BTreeSet<SpoPath>, mut out: W) -> std::io::Result<()> {
    for p in paths {
        writeln!(
            out,
            "{}\t{}\t{}",
            kb.node_symbol(p.subject),
            kb.format_path(&p.path),
            kb.node_symbol(p.object)
        )?;
    }
    Ok(())
}

pub fn read_expansion(kb: &KnowledgeBase, path: &Path) -> Result<BTreeSet<SpoPath>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let Some((s, p, o)) = parse_triple_line(line, &name, i + 1)? else {
            continue;
        };
        let parsed = (kb.node_id(s), kb.parse_path(p), kb.node_id(o));
        let (Some(subject), Some(path), Some(object)) = parsed else {
            return Err(Error::parse(&name, i + 1, "unknown symbol in expansion dump"));
        };
        out.insert(SpoPath { subject, path, object });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::tests::toy;

    #[test]
    fn toy_expansion_contains_spouse_path() {
        let kb = toy();
        let obama = kb.node_id("BarackObama").unwrap();
        let seeds = BTreeSet::from([obama]);
        let paths = expand_predicates(&kb, &kb, &seeds, &PathPolicy::default()).unwrap();
        let spouse = SpoPath {
            subject: obama,
            path: kb.parse_path("marriage|person|name").unwrap(),
            object: kb.node_id("Michelle Obama").unwrap(),
        };
        assert!(paths.contains(&spouse));
        let birthday = SpoPath {
            subject: obama,
            path: kb.parse_path("marriage|person|dob").unwrap(),
            object: kb.node_id("1964").unwrap(),
        };
        assert!(!paths.contains(&birthday));
        let open = expand_predicates(&kb, &kb, &seeds, &PathPolicy::unrestricted(3)).unwrap();
        assert!(open.contains(&birthday));

        let reference = HashSet::from([(obama, kb.node_id("Michelle Obama").unwrap())]);
        assert_eq!(valid_k(&paths, &reference, 3), 1);
        assert_eq!(valid_k(&paths, &HashSet::new(), 3), 0);
        assert_eq!(valid_k(&paths, &reference, 7), 0);
    }

    #[test]
    fn degenerate_inputs() {
        let kb = toy();
        assert!(expand_predicates(&kb, &kb, &BTreeSet::new(), &PathPolicy::default()).unwrap().is_empty());
        let seeds = BTreeSet::from([kb.node_id("BarackObama").unwrap()]);
        assert!(expand_predicates(&kb, &kb, &seeds, &PathPolicy::restricted(0)).unwrap().is_empty());
    }

    #[test]
    fn dump_round_trip() {
        let kb = toy();
        let seeds: BTreeSet<_> = kb.entities().into_iter().collect();
        let paths = expand_predicates(&kb, &kb, &seeds, &PathPolicy::unrestricted(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("exp.tsv");
        write_expansion(&kb, &paths, std::fs::File::create(&file).unwrap()).unwrap();
        assert_eq!(read_expansion(&kb, &file).unwrap(), paths);
    }
}
