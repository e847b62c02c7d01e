//! Inverted-index archive of user behaviors with top-S BM25 search.
//!
//! Each behavior is a document: one user token plus a fixed-size set of
//! categorical feature tokens, all of the form `<field>_<value>`. Every token
//! has a posting list, so term frequency within a document is 0 or 1 and all
//! documents have the same length. A query is the user token AND the union of
//! the selected feature tokens; the candidates are scored with BM25 and the
//! top S before a time cutoff are returned.
//!
//! The archive is immutable after [`build_index`]; concurrent read-only
//! searches are safe.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const SNAPSHOT_MAGIC: &str = "UBRIDX1";

/// One user behavior presented to the index builder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorDoc {
    pub doc_id: u32,
    /// The user-id token, e.g. `user_id_7`.
    pub user_token: String,
    /// Item + context feature tokens in canonical field order. Field names
    /// are embedded in the tokens, so the list has set semantics.
    pub feature_tokens: Vec<String>,
    /// Seconds since the epoch.
    pub timestamp: i64,
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("duplicate doc id {0}")]
    DuplicateDocId(u32),
    #[error("doc {doc_id}: empty user token")]
    EmptyUserToken { doc_id: u32 },
    #[error("doc {doc_id}: duplicate feature token `{token}`")]
    DuplicateToken { doc_id: u32, token: String },
    #[error("doc {doc_id} has {got} tokens, expected {expected} (documents must have equal length)")]
    MixedDocLength {
        doc_id: u32,
        got: usize,
        expected: usize,
    },
    #[error("idf on an empty archive")]
    EmptyArchive,
    #[error("snapshot i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
}

/// Interned token id, valid within one archive.
type Tid = u32;

#[derive(Debug, Clone)]
struct StoredDoc {
    doc_id: u32,
    user_tid: Tid,
    feature_tids: Vec<Tid>,
    timestamp: i64,
}

/// Search result: doc ids in descending BM25 order with their scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievedSet {
    pub doc_ids: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Work counters for one search call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Posting-list entries read while collecting candidates.
    pub posting_entries_touched: usize,
    /// Documents that received a BM25 evaluation.
    pub docs_scored: usize,
}

/// A boolean retrieval query: the user token is mandatory, the feature
/// tokens are OR-ed. `log_prob` is the log-probability of the feature subset
/// under the selection policy that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub user_token: String,
    pub feature_tokens: Vec<String>,
    pub log_prob: f64,
}

/// Immutable feature-based inverted index over behavior documents.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    token_text: Vec<String>,
    token_ids: HashMap<String, Tid>,
    /// token id -> doc ids, ascending.
    postings: Vec<Vec<u32>>,
    /// doc id -> slot in `docs`.
    doc_index: HashMap<u32, usize>,
    docs: Vec<StoredDoc>,
    /// user token id -> doc ids sorted by (timestamp, doc id) ascending.
    user_index: HashMap<Tid, Vec<u32>>,
    /// Tokens per document (user token included); equal across documents.
    doc_len: usize,
}

/// Build the index. Rejects duplicate doc ids, empty user tokens, duplicate
/// tokens within a document, and mixed document lengths. Deterministic and
/// idempotent for a fixed input list.
pub fn build_index(docs: &[BehaviorDoc]) -> Result<Archive, ArchiveError> {
    let mut archive = Archive::default();
    for doc in docs {
        archive.insert(doc)?;
    }
    for list in &mut archive.postings {
        list.sort_unstable();
    }
    let doc_index = &archive.doc_index;
    let docs = &archive.docs;
    for timeline in archive.user_index.values_mut() {
        timeline.sort_unstable_by_key(|id| (docs[doc_index[id]].timestamp, *id));
    }
    Ok(archive)
}

impl Archive {
    fn intern(&mut self, token: &str) -> Tid {
        match self.token_ids.entry(token.to_string()) {
            Entry::Occupied(e) => *e.get(),
            Entry::Vacant(e) => {
                let id = self.token_text.len() as Tid;
                self.token_text.push(token.to_string());
                self.postings.push(Vec::new());
                e.insert(id);
                id
            }
        }
    }

    fn tid(&self, token: &str) -> Option<Tid> {
        self.token_ids.get(token).copied()
    }

    fn insert(&mut self, doc: &BehaviorDoc) -> Result<(), ArchiveError> {
        if self.doc_index.contains_key(&doc.doc_id) {
            return Err(ArchiveError::DuplicateDocId(doc.doc_id));
        }
        if doc.user_token.is_empty() {
            return Err(ArchiveError::EmptyUserToken { doc_id: doc.doc_id });
        }
        let token_count = doc.feature_tokens.len() + 1;
        if self.docs.is_empty() {
            self.doc_len = token_count;
        } else if token_count != self.doc_len {
            return Err(ArchiveError::MixedDocLength {
                doc_id: doc.doc_id,
                got: token_count,
                expected: self.doc_len,
            });
        }
        for (i, t) in doc.feature_tokens.iter().enumerate() {
            if doc.feature_tokens[..i].contains(t) || *t == doc.user_token {
                return Err(ArchiveError::DuplicateToken {
                    doc_id: doc.doc_id,
                    token: t.clone(),
                });
            }
        }

        let user_tid = self.intern(&doc.user_token);
        let feature_tids: Vec<Tid> = doc.feature_tokens.iter().map(|t| self.intern(t)).collect();
        self.postings[user_tid as usize].push(doc.doc_id);
        for &t in &feature_tids {
            self.postings[t as usize].push(doc.doc_id);
        }
        self.user_index.entry(user_tid).or_default().push(doc.doc_id);
        self.doc_index.insert(doc.doc_id, self.docs.len());
        self.docs.push(StoredDoc {
            doc_id: doc.doc_id,
            user_tid,
            feature_tids,
            timestamp: doc.timestamp,
        });
        Ok(())
    }

    /// Total number of behavior documents.
    pub fn total_docs(&self) -> usize {
        self.docs.len()
    }

    /// Number of distinct tokens.
    pub fn vocab_size(&self) -> usize {
        self.token_text.len()
    }

    /// Tokens per document (equal for all documents).
    pub fn doc_len(&self) -> usize {
        self.doc_len
    }

    /// Number of documents containing the token; 0 for unknown tokens.
    pub fn doc_freq(&self, token: &str) -> usize {
        self.tid(token)
            .map_or(0, |t| self.postings[t as usize].len())
    }

    /// Posting list of a token, ascending doc ids; empty for unknown tokens.
    pub fn posting(&self, token: &str) -> &[u32] {
        self.tid(token)
            .map_or(&[][..], |t| &self.postings[t as usize])
    }

    pub fn timestamp(&self, doc_id: u32) -> Option<i64> {
        self.doc_index
            .get(&doc_id)
            .map(|&slot| self.docs[slot].timestamp)
    }

    /// The document's tokens: user token first, then features in canonical
    /// field order.
    pub fn doc_tokens(&self, doc_id: u32) -> Option<Vec<&str>> {
        let &slot = self.doc_index.get(&doc_id)?;
        let doc = &self.docs[slot];
        let mut out = Vec::with_capacity(doc.feature_tids.len() + 1);
        out.push(self.token_text[doc.user_tid as usize].as_str());
        out.extend(
            doc.feature_tids
                .iter()
                .map(|&t| self.token_text[t as usize].as_str()),
        );
        Some(out)
    }

    /// The user's doc ids sorted by (timestamp, doc id) ascending.
    pub fn user_timeline(&self, user_token: &str) -> &[u32] {
        self.tid(user_token)
            .and_then(|t| self.user_index.get(&t))
            .map_or(&[][..], Vec::as_slice)
    }

    /// The user's most recent `s` docs strictly before `cutoff_ts`, ordered
    /// by (timestamp desc, doc id asc) like the search tie-break.
    pub fn recent(&self, user_token: &str, s: usize, cutoff_ts: i64) -> Vec<u32> {
        let timeline = self.user_timeline(user_token);
        let end = timeline
            .partition_point(|id| self.docs[self.doc_index[id]].timestamp < cutoff_ts);
        let mut recent: Vec<(i64, u32)> = timeline[..end]
            .iter()
            .map(|&id| (self.docs[self.doc_index[&id]].timestamp, id))
            .collect();
        recent.sort_unstable_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        recent.truncate(s);
        recent.into_iter().map(|(_, id)| id).collect()
    }

    /// Literal IDF: ln((N - N(f) + 0.5) / (N(f) + 0.5)). May be negative for
    /// tokens appearing in more than half the corpus; unknown tokens take the
    /// N(f) = 0 branch.
    pub fn idf(&self, token: &str) -> Result<f64, ArchiveError> {
        if self.docs.is_empty() {
            return Err(ArchiveError::EmptyArchive);
        }
        let n = self.docs.len() as f64;
        let nf = self.doc_freq(token) as f64;
        Ok(((n - nf + 0.5) / (nf + 0.5)).ln())
    }

    /// BM25 score of a document against a set of query tokens, with k1 = 1.2
    /// and b = 0.75. Terms are summed in the given token order. With binary
    /// term frequency and equal-length documents the per-token term reduces
    /// exactly to the token's IDF.
    pub fn bm25_score(&self, query_tokens: &[&str], doc_id: u32) -> f64 {
        let Some(&slot) = self.doc_index.get(&doc_id) else {
            return 0.0;
        };
        let doc = &self.docs[slot];
        let len_ratio = 1.0; // |D| / avgdl with equal-length documents
        let mut score = 0.0;
        for token in query_tokens {
            let Some(t) = self.tid(token) else { continue };
            let tf = f64::from(t == doc.user_tid || doc.feature_tids.contains(&t));
            if tf == 0.0 {
                continue;
            }
            let n = self.docs.len() as f64;
            let nf = self.postings[t as usize].len() as f64;
            let idf = ((n - nf + 0.5) / (nf + 0.5)).ln();
            score +=
                idf * (tf * (BM25_K1 + 1.0)) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * len_ratio));
        }
        score
    }

    /// Top-S BM25 search over one user's history strictly before `cutoff_ts`.
    ///
    /// Candidates are the user's documents containing at least one query
    /// feature token. Ties are broken by larger timestamp, then smaller doc
    /// id. If no candidate matches, the user's most recent documents are
    /// returned with score 0. An unknown user yields an empty result.
    pub fn search(&self, query: &Query, s: usize, cutoff_ts: i64) -> RetrievedSet {
        self.search_with_stats(query, s, cutoff_ts).0
    }

    /// [`Archive::search`] plus work counters.
    ///
    /// The candidate set `posting(user) ∩ ∪ posting(f_i)` is materialized by
    /// scanning the user timeline and testing token membership per document,
    /// so the entries touched are bounded by the user's posting length and
    /// the documents scored never exceed it.
    pub fn search_with_stats(
        &self,
        query: &Query,
        s: usize,
        cutoff_ts: i64,
    ) -> (RetrievedSet, SearchStats) {
        let mut stats = SearchStats::default();
        let Some(user_tid) = self.tid(&query.user_token) else {
            return (RetrievedSet::default(), stats);
        };
        let Some(timeline) = self.user_index.get(&user_tid) else {
            return (RetrievedSet::default(), stats);
        };
        let query_tids: Vec<Tid> = query
            .feature_tokens
            .iter()
            .filter_map(|t| self.tid(t))
            .collect();
        let query_refs: Vec<&str> = query.feature_tokens.iter().map(String::as_str).collect();

        // (score, timestamp, doc_id) for each matching doc before the cutoff
        let mut scored: Vec<(f64, i64, u32)> = Vec::new();
        for &doc_id in timeline.iter() {
            stats.posting_entries_touched += 1;
            let doc = &self.docs[self.doc_index[&doc_id]];
            if doc.timestamp >= cutoff_ts {
                // Timeline is time-sorted; everything later is also too new.
                break;
            }
            if !query_tids.iter().any(|t| doc.feature_tids.contains(t)) {
                continue;
            }
            stats.docs_scored += 1;
            scored.push((self.bm25_score(&query_refs, doc_id), doc.timestamp, doc_id));
        }

        if scored.is_empty() {
            let ids = self.recent(&query.user_token, s, cutoff_ts);
            let scores = vec![0.0; ids.len()];
            return (
                RetrievedSet {
                    doc_ids: ids,
                    scores,
                },
                stats,
            );
        }

        scored.sort_unstable_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| b.1.cmp(&a.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        scored.truncate(s);
        (
            RetrievedSet {
                doc_ids: scored.iter().map(|&(_, _, id)| id).collect(),
                scores: scored.iter().map(|&(sc, _, _)| sc).collect(),
            },
            stats,
        )
    }

    /// Persist as a `UBRIDX1` snapshot: a header line with the doc and token
    /// counts, one `token<TAB>id,id,...` line per token, then a `#DOCS`
    /// section carrying each document's timestamp and tokens (the postings
    /// alone cannot reconstruct timestamps).
    pub fn save_snapshot(&self, path: &Path) -> Result<(), ArchiveError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(
            w,
            "{SNAPSHOT_MAGIC}\t{}\t{}",
            self.docs.len(),
            self.token_text.len()
        )?;
        let mut tokens: Vec<&String> = self.token_text.iter().collect();
        tokens.sort_unstable();
        for token in tokens {
            let ids = self.posting(token);
            let joined: Vec<String> = ids.iter().map(u32::to_string).collect();
            writeln!(w, "{token}\t{}", joined.join(","))?;
        }
        writeln!(w, "#DOCS\t{}", self.docs.len())?;
        let mut by_id: Vec<&StoredDoc> = self.docs.iter().collect();
        by_id.sort_unstable_by_key(|d| d.doc_id);
        for doc in by_id {
            let tokens: Vec<&str> = std::iter::once(doc.user_tid)
                .chain(doc.feature_tids.iter().copied())
                .map(|t| self.token_text[t as usize].as_str())
                .collect();
            writeln!(w, "{}\t{}\t{}", doc.doc_id, doc.timestamp, tokens.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Archive, ArchiveError> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| ArchiveError::BadSnapshot("empty file".into()))??;
        let mut parts = header.split('\t');
        if parts.next() != Some(SNAPSHOT_MAGIC) {
            return Err(ArchiveError::BadSnapshot("missing UBRIDX1 magic".into()));
        }
        let total_docs: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ArchiveError::BadSnapshot("bad doc count".into()))?;
        let vocab: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ArchiveError::BadSnapshot("bad token count".into()))?;

        // Skip the postings section; it is re-derived from the docs section.
        for _ in 0..vocab {
            lines
                .next()
                .ok_or_else(|| ArchiveError::BadSnapshot("truncated postings".into()))??;
        }
        let docs_header = lines
            .next()
            .ok_or_else(|| ArchiveError::BadSnapshot("missing #DOCS section".into()))??;
        if !docs_header.starts_with("#DOCS\t") {
            return Err(ArchiveError::BadSnapshot("missing #DOCS section".into()));
        }
        let mut docs = Vec::with_capacity(total_docs);
        for _ in 0..total_docs {
            let line = lines
                .next()
                .ok_or_else(|| ArchiveError::BadSnapshot("truncated docs".into()))??;
            let mut fields = line.split('\t');
            let (Some(id), Some(ts), Some(tokens)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(ArchiveError::BadSnapshot(format!("bad doc line `{line}`")));
            };
            let doc_id: u32 = id
                .parse()
                .map_err(|_| ArchiveError::BadSnapshot(format!("bad doc id `{id}`")))?;
            let timestamp: i64 = ts
                .parse()
                .map_err(|_| ArchiveError::BadSnapshot(format!("bad timestamp `{ts}`")))?;
            let mut toks = tokens.split(',');
            let user_token = toks
                .next()
                .ok_or_else(|| ArchiveError::BadSnapshot("doc without tokens".into()))?
                .to_string();
            docs.push(BehaviorDoc {
                doc_id,
                user_token,
                feature_tokens: toks.map(str::to_string).collect(),
                timestamp,
            });
        }
        let archive = build_index(&docs)?;
        if archive.vocab_size() != vocab {
            return Err(ArchiveError::BadSnapshot(format!(
                "token count mismatch: header says {vocab}, docs contain {}",
                archive.vocab_size()
            )));
        }
        Ok(archive)
    }
}
