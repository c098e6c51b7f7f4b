//! Decomposition of complex questions into chains of simple ones.
//!
//! For every contiguous span `q_i` of the question,
//! `P*(q_i) = max(δ(q_i), max_{q_j ⊂ q_i} P(r(q_i, q_j)) · P*(q_j))`, where
//! `r` replaces `q_j` by `$e` and `P(pattern) = f_v / f_o` is read from a
//! precomputed corpus pattern index.

use std::collections::HashMap;

use serde::Serialize;

use crate::entity_index::StaticHashArray;
use crate::error::{Error, Result};
use crate::extraction::{verified_mentions, CorpusStats};
use crate::kb::KnowledgeBase;
use crate::text::ENTITY_PLACEHOLDER;

/// Questions this long or shorter cover nearly all natural questions.
pub const DEFAULT_MAX_QUESTION_LEN: usize = 23;
/// Length limit of the exhaustive oracle.
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

/// `δ(q)`: whether `q` can be answered directly.
pub trait Primitive {
    fn is_primitive(&self, q: &[String]) -> bool;
}

impl<F: Fn(&[String]) -> bool> Primitive for F {
    fn is_primitive(&self, q: &[String]) -> bool {
        self(q)
    }
}

impl Primitive for crate::answer::AnswerEngine<'_> {
    fn is_primitive(&self, q: &[String]) -> bool {
        crate::answer::AnswerEngine::is_primitive(self, q)
    }
}

/// Pattern counts: `f_o` questions match, `f_v` of them with an entity
/// mention as the replaced span.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Validity {
    pub f_v: u64,
    pub f_o: u64,
}

impl Validity {
    pub fn probability(&self) -> f64 {
        if self.f_o == 0 {
            0.0
        } else {
            self.f_v as f64 / self.f_o as f64
        }
    }
}

/// Replaces `q[span]` by `$e`.
pub fn replace_span(q: &[String], start: usize, end: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(q.len() + 1 - (end - start));
    out.extend_from_slice(&q[..start]);
    out.push(ENTITY_PLACEHOLDER.to_string());
    out.extend_from_slice(&q[end..]);
    out
}

/// A pattern needs exactly one `$e` and at least one other token.
pub fn is_pattern(tokens: &[String]) -> bool {
    tokens.len() >= 2 && tokens.iter().filter(|t| *t == ENTITY_PLACEHOLDER).count() == 1
}

/// Every pattern obtainable from a corpus question by replacing one span,
/// with counts weighted by pair frequency.
#[derive(Debug, Clone, Default)]
pub struct PatternIndex {
    counts: HashMap<Vec<String>, Validity>,
}

impl PatternIndex {
    pub fn build(stats: &CorpusStats, idx: &StaticHashArray, kb: &KnowledgeBase, max_span: usize) -> Self {
        let mut counts: HashMap<Vec<String>, Validity> = HashMap::new();
        for (q, n) in stats.questions() {
            let mentions: Vec<_> = all_mention_spans(q, idx, kb, max_span);
            for start in 0..q.len() {
                for end in start + 1..=q.len() {
                    let pattern = replace_span(q, start, end);
                    if !is_pattern(&pattern) {
                        continue;
                    }
                    let c = counts.entry(pattern).or_default();
                    c.f_o += n;
                    if mentions.contains(&(start, end)) {
                        c.f_v += n;
                    }
                }
            }
        }
        PatternIndex { counts }
    }

    pub fn validity(&self, pattern: &[String]) -> Validity {
        if !is_pattern(pattern) {
            return Validity::default();
        }
        self.counts.get(pattern).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Spans of `q` that are verified entity mentions on their own, regardless
/// of greedy segmentation.
fn all_mention_spans(q: &[String], idx: &StaticHashArray, kb: &KnowledgeBase, max_span: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for start in 0..q.len() {
        for end in start + 1..=q.len().min(start + max_span) {
            let m = verified_mentions(idx, kb, &q[start..end], max_span);
            if m.len() == 1 && m[0].span == (0..end - start) {
                out.push((start, end));
            }
        }
    }
    out
}

/// Pattern validity by scanning the corpus, without the precomputed index.
pub fn pattern_validity_scan(
    pattern: &[String],
    stats: &CorpusStats,
    idx: &StaticHashArray,
    kb: &KnowledgeBase,
    max_span: usize,
) -> Validity {
    let mut v = Validity::default();
    if !is_pattern(pattern) {
        return v;
    }
    let slot = pattern.iter().position(|t| t == ENTITY_PLACEHOLDER).unwrap();
    let (prefix, suffix) = (&pattern[..slot], &pattern[slot + 1..]);
    for (q, n) in stats.questions() {
        if q.len() < prefix.len() + suffix.len() + 1 || !q.starts_with(prefix) || !q.ends_with(suffix) {
            continue;
        }
        let span = &q[prefix.len()..q.len() - suffix.len()];
        v.f_o += n;
        let m = verified_mentions(idx, kb, span, max_span);
        if span.len() <= max_span && m.len() == 1 && m[0].span == (0..span.len()) {
            v.f_v += n;
        }
    }
    v
}

/// `q̌_0, q̌_1, ...` with the product score; `q̌_1..` contain `$e`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub sequence: Vec<Vec<String>>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy)]
enum Choice {
    Primitive,
    Replace { start: usize, end: usize },
}

/// Dynamic program over all spans in ascending length. Candidate inner
/// spans are tried longest first, then leftmost; only a strictly better
/// score replaces the current choice, and `δ` is tried before any of them.
pub fn decompose(
    q: &[String],
    patterns: &PatternIndex,
    delta: &dyn Primitive,
    max_len: usize,
) -> Result<Decomposition> {
    let n = q.len();
    if n > max_len {
        return Err(Error::QuestionTooLong { len: n, limit: max_len });
    }
    if n == 0 {
        return Ok(Decomposition {
            sequence: vec![Vec::new()],
            score: 0.0,
        });
    }
    // best[i][j] for the span i..j
    let mut best = vec![vec![(0.0f64, Choice::Primitive); n + 1]; n + 1];
    for len in 1..=n {
        for i in 0..=n - len {
            let j = i + len;
            let span = &q[i..j];
            let mut score = if delta.is_primitive(span) { 1.0 } else { 0.0 };
            let mut choice = Choice::Primitive;
            for inner in (1..len).rev() {
                for (a, row) in best.iter().enumerate().take(j - inner + 1).skip(i) {
                    let b = a + inner;
                    let sub = row[b].0;
                    if sub <= 0.0 {
                        continue;
                    }
                    let p = patterns.validity(&replace_span(span, a - i, b - i)).probability();
                    let s = p * sub;
                    if s > score {
                        score = s;
                        choice = Choice::Replace { start: a, end: b };
                    }
                }
            }
            best[i][j] = (score, choice);
        }
    }
    let score = best[0][n].0;
    if score <= 0.0 {
        return Ok(Decomposition {
            sequence: vec![q.to_vec()],
            score: 0.0,
        });
    }
    let mut outer_to_inner = Vec::new();
    let (mut i, mut j) = (0, n);
    loop {
        match best[i][j].1 {
            Choice::Primitive => {
                outer_to_inner.push(q[i..j].to_vec());
                break;
            }
            Choice::Replace { start, end } => {
                outer_to_inner.push(replace_span(&q[i..j], start - i, end - i));
                (i, j) = (start, end);
            }
        }
    }
    outer_to_inner.reverse();
    Ok(Decomposition {
        sequence: outer_to_inner,
        score,
    })
}

/// Exhaustive oracle: enumerates every nested chain of spans ending in a
/// primitive one and keeps the best under the same tie order as
/// [`decompose`].
pub fn decompose_bruteforce(q: &[String], patterns: &PatternIndex, delta: &dyn Primitive) -> Result<Decomposition> {
    if q.len() > BRUTE_FORCE_MAX_LEN {
        return Err(Error::QuestionTooLong {
            len: q.len(),
            limit: BRUTE_FORCE_MAX_LEN,
        });
    }
    if q.is_empty() {
        return Ok(Decomposition {
            sequence: vec![Vec::new()],
            score: 0.0,
        });
    }
    let mut chains = Vec::new();
    enumerate_chains(0, q.len(), &mut Vec::new(), &mut chains);

    // A chain is (spans outer to inner); the innermost must be primitive.
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for chain in chains {
        let &(a, b) = chain.last().unwrap();
        if !delta.is_primitive(&q[a..b]) {
            continue;
        }
        let score = chain_score(q, &chain, patterns);
        if score <= 0.0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((s, c)) => score > *s || (score == *s && tie_key(&chain) < tie_key(c)),
        };
        if better {
            best = Some((score, chain));
        }
    }
    let Some((score, chain)) = best else {
        return Ok(Decomposition {
            sequence: vec![q.to_vec()],
            score: 0.0,
        });
    };
    let mut sequence: Vec<Vec<String>> = chain
        .windows(2)
        .map(|w| {
            let ((i, j), (a, b)) = (w[0], w[1]);
            replace_span(&q[i..j], a - i, b - i)
        })
        .collect();
    let &(a, b) = chain.last().unwrap();
    sequence.push(q[a..b].to_vec());
    sequence.reverse();
    Ok(Decomposition { sequence, score })
}

fn enumerate_chains(i: usize, j: usize, prefix: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
    prefix.push((i, j));
    out.push(prefix.clone());
    for a in i..j {
        for b in a + 1..=j {
            if (a, b) != (i, j) {
                enumerate_chains(a, b, prefix, out);
            }
        }
    }
    prefix.pop();
}

/// Product computed innermost first, matching the order the DP multiplies in.
fn chain_score(q: &[String], chain: &[(usize, usize)], patterns: &PatternIndex) -> f64 {
    let mut score = 1.0;
    for w in chain.windows(2).rev() {
        let ((i, j), (a, b)) = (w[0], w[1]);
        score *= patterns.validity(&replace_span(&q[i..j], a - i, b - i)).probability();
    }
    score
}

/// Outer replacements compared first: a shorter chain (stopping at a
/// primitive) wins, then the longer replaced span, then the leftmost.
fn tie_key(chain: &[(usize, usize)]) -> Vec<(usize, usize, usize)> {
    let mut key: Vec<(usize, usize, usize)> = chain
        .windows(2)
        .map(|w| {
            let (a, b) = w[1];
            (1, usize::MAX - (b - a), a)
        })
        .collect();
    key.push((0, 0, 0));
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::tests::Online;
    use crate::extraction::tests::sample_corpus;
    use crate::text::tokenize;

    fn patterns(fx: &Online) -> (CorpusStats, PatternIndex) {
        let stats = CorpusStats::compute(&sample_corpus()).unwrap();
        let idx = PatternIndex::build(&stats, &fx.index, &fx.kb, 6);
        (stats, idx)
    }

    #[test]
    fn validity_examples() {
        let fx = Online::new();
        let (stats, idx) = patterns(&fx);
        let born = tokenize("when was $e born");
        assert_eq!(idx.validity(&born), Validity { f_v: 2, f_o: 2 });
        assert_eq!(idx.validity(&born).probability(), 1.0);
        let when = tokenize("when $e");
        assert_eq!(idx.validity(&when), Validity { f_v: 0, f_o: 2 });
        assert_eq!(idx.validity(&when).probability(), 0.0);
        assert_eq!(idx.validity(&tokenize("who is $e")), Validity::default());
        assert_eq!(idx.validity(&tokenize("$e")), Validity::default());
        for p in [&born, &when] {
            assert_eq!(pattern_validity_scan(p, &stats, &fx.index, &fx.kb, 6), idx.validity(p));
        }
    }

    #[test]
    fn wife_birth_example() {
        let fx = Online::new();
        let (_, idx) = patterns(&fx);
        let engine = fx.engine();
        let q = tokenize("when was barack obama's wife born");
        let d = decompose(&q, &idx, &engine, DEFAULT_MAX_QUESTION_LEN).unwrap();
        assert_eq!(d.sequence, vec![tokenize("barack obama's wife"), tokenize("when was $e born")]);
        assert_eq!(d.score, 1.0);
        assert_eq!(decompose_bruteforce(&q, &idx, &engine).unwrap(), d);
    }

    #[test]
    fn primitive_and_degenerate() {
        let fx = Online::new();
        let (_, idx) = patterns(&fx);
        let engine = fx.engine();
        let q = tokenize("when was barack obama born");
        let d = decompose(&q, &idx, &engine, 23).unwrap();
        assert_eq!((d.sequence, d.score), (vec![q.clone()], 1.0));

        let none = tokenize("what is love");
        let d = decompose(&none, &idx, &engine, 23).unwrap();
        assert_eq!((d.sequence.clone(), d.score), (vec![none.clone()], 0.0));
        assert_eq!(decompose_bruteforce(&none, &idx, &engine).unwrap(), d);

        let one = tokenize("honolulu");
        assert_eq!(decompose_bruteforce(&one, &idx, &engine).unwrap().sequence, vec![one]);

        let long: Vec<String> = (0..24).map(|i| format!("w{i}")).collect();
        assert!(matches!(
            decompose(&long, &idx, &engine, 23),
            Err(Error::QuestionTooLong { len: 24, limit: 23 })
        ));
        assert!(decompose_bruteforce(&long[..9], &idx, &engine).is_err());
    }
}
