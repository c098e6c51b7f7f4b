//! Static hash array: a read-only string → entity-id index.
//!
//! Keys are never stored. Each item keeps only a 64-bit fingerprint (`hash2`)
//! and its payload; items of one bucket (`hash1 & mask`) sit next to each
//! other in a flat array, and `bucket_offsets` is the prefix sum of bucket
//! sizes. Construction goes through a chained table that is then flattened.
//!
//! Lookups have no false negatives. A fingerprint collision can produce a
//! false positive; callers verify candidates against the knowledge base.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, NodeId};
use crate::text;

pub const MAGIC: &[u8; 7] = b"SHA1DX\0";
pub const VERSION: u32 = 1;
pub const DEFAULT_SEEDS: [u64; 2] = [0x9e37_79b9_7f4a_7c15, 0xc2b2_ae3d_27d4_eb4f];

const HEADER_LEN: usize = 7 + 4 + 8 * 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Item {
    pub fingerprint: u64,
    pub payload: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub bucket: u64,
    pub fingerprint: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            bucket: DEFAULT_SEEDS[0],
            fingerprint: DEFAULT_SEEDS[1],
        }
    }
}

impl Seeds {
    pub fn hash1(&self, key: &str) -> u64 {
        xxh3_64_with_seed(key.as_bytes(), self.bucket)
    }

    pub fn hash2(&self, key: &str) -> u64 {
        xxh3_64_with_seed(key.as_bytes(), self.fingerprint)
    }
}

/// The dynamic, separately chained table used during construction.
#[derive(Debug, Clone)]
pub struct ChainedTable {
    seeds: Seeds,
    buckets: Vec<Vec<Item>>,
}

impl ChainedTable {
    /// `expected` sizes the table: bucket count is the smallest power of two
    /// `>= expected` (at least one bucket).
    pub fn with_capacity(expected: usize, seeds: Seeds) -> Self {
        let bucket_count = expected.max(1).next_power_of_two();
        ChainedTable {
            seeds,
            buckets: vec![Vec::new(); bucket_count],
        }
    }

    pub fn insert(&mut self, key: &str, payload: u64) {
        let mask = self.buckets.len() as u64 - 1;
        let bucket = &mut self.buckets[(self.seeds.hash1(key) & mask) as usize];
        let item = Item {
            fingerprint: self.seeds.hash2(key),
            payload,
        };
        if !bucket.contains(&item) {
            bucket.push(item);
        }
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.buckets.iter().flatten()
    }

    /// Heap bytes held by the chained form (bucket headers plus chain storage).
    pub fn footprint_bytes(&self) -> usize {
        self.buckets.capacity() * std::mem::size_of::<Vec<Item>>()
            + self
                .buckets
                .iter()
                .map(|b| b.capacity() * std::mem::size_of::<Item>())
                .sum::<usize>()
    }

    pub fn flatten(&self) -> StaticHashArray {
        let mut bucket_offsets = Vec::with_capacity(self.buckets.len() + 1);
        let mut items = Vec::with_capacity(self.buckets.iter().map(Vec::len).sum());
        bucket_offsets.push(0);
        for bucket in &self.buckets {
            items.extend_from_slice(bucket);
            bucket_offsets.push(items.len() as u64);
        }
        StaticHashArray {
            seeds: self.seeds,
            bucket_offsets,
            items,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticHashArray {
    seeds: Seeds,
    bucket_offsets: Vec<u64>,
    items: Vec<Item>,
}

/// A matched token span `[start, end)` with its candidate payloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub candidates: Vec<u64>,
}

impl StaticHashArray {
    pub fn build<'a>(entries: impl IntoIterator<Item = (&'a str, u64)>) -> Self {
        Self::build_with_seeds(entries, Seeds::default())
    }

    pub fn build_with_seeds<'a>(entries: impl IntoIterator<Item = (&'a str, u64)>, seeds: Seeds) -> Self {
        Self::chained(entries, seeds).flatten()
    }

    pub fn chained<'a>(entries: impl IntoIterator<Item = (&'a str, u64)>, seeds: Seeds) -> ChainedTable {
        let entries: Vec<(&str, u64)> = entries.into_iter().collect();
        let mut table = ChainedTable::with_capacity(entries.len(), seeds);
        for (key, payload) in entries {
            table.insert(key, payload);
        }
        table
    }

    pub fn seeds(&self) -> Seeds {
        self.seeds
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_offsets.len() - 1
    }

    pub fn bucket_offsets(&self) -> &[u64] {
        &self.bucket_offsets
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn bucket_of(&self, key: &str) -> usize {
        (self.seeds.hash1(key) & (self.bucket_count() as u64 - 1)) as usize
    }

    /// Payloads whose fingerprint matches `hash2(key)` in `key`'s bucket.
    pub fn lookup(&self, key: &str) -> Vec<u64> {
        let b = self.bucket_of(key);
        let fp = self.seeds.hash2(key);
        let (lo, hi) = (self.bucket_offsets[b] as usize, self.bucket_offsets[b + 1] as usize);
        self.items[lo..hi]
            .iter()
            .filter(|it| it.fingerprint == fp)
            .map(|it| it.payload)
            .collect()
    }

    /// Greedy left-to-right longest match over token spans of at most
    /// `max_span` tokens. Spans are joined with single spaces before lookup.
    pub fn find_mentions<S: AsRef<str>>(&self, tokens: &[S], max_span: usize) -> Vec<Mention> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (i + max_span).min(tokens.len());
            let hit = (i + 1..=longest).rev().find_map(|end| {
                let key = tokens[i..end].iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
                let mut candidates = self.lookup(&key);
                if candidates.is_empty() {
                    return None;
                }
                candidates.sort_unstable();
                candidates.dedup();
                Some(Mention { start: i, end, candidates })
            });
            match hit {
                Some(m) => {
                    i = m.end;
                    out.push(m);
                }
                None => i += 1,
            }
        }
        out
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + self.bucket_offsets.len() * 8 + self.items.len() * 16
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.seeds.bucket.to_le_bytes())?;
        w.write_all(&self.seeds.fingerprint.to_le_bytes())?;
        w.write_all(&(self.bucket_count() as u64).to_le_bytes())?;
        w.write_all(&(self.items.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.bucket_offsets.len() * 8);
        for o in &self.bucket_offsets {
            buf.extend_from_slice(&o.to_le_bytes());
        }
        w.write_all(&buf)?;
        buf.clear();
        buf.reserve(self.items.len() * 16);
        for it in &self.items {
            buf.extend_from_slice(&it.fingerprint.to_le_bytes());
            buf.extend_from_slice(&it.payload.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let seeds = Seeds {
            bucket: cur.u64("header")?,
            fingerprint: cur.u64("header")?,
        };
        let bucket_count = cur.u64("header")?;
        let item_count = cur.u64("header")?;
        if bucket_count == 0 || !bucket_count.is_power_of_two() {
            return Err(Error::IndexFormat(format!("bucket count {bucket_count} is not a power of two")));
        }

        let offsets_len = usize::try_from(bucket_count + 1)
            .ok()
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::IndexFormat("truncated offsets section".into()))?;
        let raw = cur.take(offsets_len, "offsets")?;
        let bucket_offsets: Vec<u64> = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let items_len = usize::try_from(item_count)
            .ok()
            .and_then(|n| n.checked_mul(16))
            .ok_or_else(|| Error::IndexFormat("truncated items section".into()))?;
        let raw = cur.take(items_len, "items")?;
        let items: Vec<Item> = raw
            .chunks_exact(16)
            .map(|c| Item {
                fingerprint: u64::from_le_bytes(c[..8].try_into().unwrap()),
                payload: u64::from_le_bytes(c[8..].try_into().unwrap()),
            })
            .collect();
        if cur.pos != bytes.len() {
            return Err(Error::IndexFormat("trailing bytes after items section".into()));
        }

        let idx = StaticHashArray {
            seeds,
            bucket_offsets,
            items,
        };
        idx.check_structure()?;
        Ok(idx)
    }

    /// Offsets start at zero, never decrease and end at the item count.
    pub fn check_structure(&self) -> Result<()> {
        let offs = &self.bucket_offsets;
        if offs.first() != Some(&0) {
            return Err(Error::IndexFormat("offsets section does not start at 0".into()));
        }
        if offs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::IndexFormat("offsets section is not monotone".into()));
        }
        if *offs.last().unwrap() != self.items.len() as u64 {
            return Err(Error::IndexFormat("offsets section does not end at item count".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::IndexFormat(format!("truncated {section} section")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }
}

/// Canonical surface strings of entities, loaded from `id<TAB>surface`.
#[derive(Debug, Clone, Default)]
pub struct EntityDictionary {
    surfaces: BTreeMap<NodeId, Vec<String>>,
}

impl EntityDictionary {
    /// Lines whose id is not a node of `kb` are skipped with a warning.
    pub fn load<R: BufRead>(reader: R, source_name: &str, kb: &KnowledgeBase) -> Result<Self> {
        let mut dict = EntityDictionary::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source_name, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((id, surface)) = line.split_once('\t') else {
                return Err(Error::parse(source_name, i + 1, "expected id<TAB>surface"));
            };
            let surface = text::normalize(surface);
            if surface.is_empty() {
                return Err(Error::parse(source_name, i + 1, "empty surface form"));
            }
            match kb.node_id(id) {
                Some(n) => dict.insert(n, surface),
                None => log::warn!("{source_name}:{}: unknown entity {id:?}", i + 1),
            }
        }
        Ok(dict)
    }

    pub fn load_file(path: &Path, kb: &KnowledgeBase) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load(std::io::BufReader::new(file), &path.display().to_string(), kb)
    }

    pub fn insert(&mut self, node: NodeId, surface: String) {
        let entry = self.surfaces.entry(node).or_default();
        if !entry.contains(&surface) {
            entry.push(surface);
        }
    }

    /// First listed surface, which is the canonical one.
    pub fn canonical(&self, node: NodeId) -> Option<&str> {
        self.surfaces.get(&node).and_then(|v| v.first()).map(String::as_str)
    }

    /// Display form of any node: its canonical surface, else its normalized symbol.
    pub fn surface_of(&self, kb: &KnowledgeBase, node: NodeId) -> String {
        self.canonical(node)
            .map(str::to_string)
            .unwrap_or_else(|| text::normalize(kb.node_symbol(node)))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.surfaces
            .iter()
            .flat_map(|(n, ss)| ss.iter().map(move |s| (s.as_str(), n.0 as u64)))
    }

    pub fn len(&self) -> usize {
        self.surfaces.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn build_index(&self) -> StaticHashArray {
        StaticHashArray::build(self.entries())
    }
}
