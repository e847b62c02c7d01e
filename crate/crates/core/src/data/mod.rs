//! Dataset ingestion and preparation.
//!
//! Behavior logs are CSV: a header naming the user field, the item fields,
//! and a trailing `timestamp` column, then one click per line. Context
//! features (season, weekend flag, month half) are derived from each
//! timestamp. Targets come from a per-user temporal split and negatives are
//! sampled uniformly from items the user never clicked.
//!
//! Tokens are `<field>_<value>` throughout; values must therefore be free of
//! commas.

pub mod synth;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Datelike, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::archive::BehaviorDoc;

pub const CONTEXT_FIELDS: [&str; 3] = ["season", "daytype", "monthhalf"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing header line")]
    MissingHeader,
    #[error("header must end with a `timestamp` column")]
    BadHeader,
    #[error("log has no parsable records")]
    NoRecords,
    #[error("catalog too small: need {needed} unclicked items for user `{user}`, have {available}")]
    CatalogTooSmall {
        user: String,
        needed: usize,
        available: usize,
    },
    #[error("negative ratio must be >= 1")]
    BadRatio,
    #[error("invalid synthetic config: {0}")]
    BadSynthConfig(String),
}

/// One raw behavior: the user's id value, the item field values in schema
/// order, and the click timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorLogRecord {
    pub user_value: String,
    pub item_values: Vec<String>,
    pub timestamp: i64,
}

/// Field names of a dataset: one user field, the item fields, and the three
/// derived context fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    pub user_field: String,
    pub item_fields: Vec<String>,
}

impl DatasetSchema {
    pub fn header(&self) -> String {
        let mut cols = vec![self.user_field.clone()];
        cols.extend(self.item_fields.iter().cloned());
        cols.push("timestamp".to_string());
        cols.join(",")
    }

    pub fn user_token(&self, record: &BehaviorLogRecord) -> String {
        format!("{}_{}", self.user_field, record.user_value)
    }

    pub fn item_tokens(&self, item_values: &[String]) -> Vec<String> {
        self.item_fields
            .iter()
            .zip(item_values)
            .map(|(f, v)| format!("{f}_{v}"))
            .collect()
    }
}

/// A line that failed to parse, kept for the error report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line_no: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct ParseReport {
    pub schema: DatasetSchema,
    pub records: Vec<BehaviorLogRecord>,
    pub errors: Vec<LineError>,
}

/// Parse a behavior log. Malformed lines are collected in the report, not
/// silently dropped; a missing or malformed header is a hard error.
pub fn parse_log(path: &Path) -> Result<ParseReport, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_log_str(&text)
}

pub fn parse_log_str(text: &str) -> Result<ParseReport, DataError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(DataError::MissingHeader)?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || *cols.last().unwrap() != "timestamp" {
        return Err(DataError::BadHeader);
    }
    let schema = DatasetSchema {
        user_field: cols[0].to_string(),
        item_fields: cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect(),
    };
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            errors.push(LineError {
                line_no,
                reason: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
            continue;
        }
        if fields.iter().any(|f| f.is_empty()) {
            errors.push(LineError {
                line_no,
                reason: "empty field value".to_string(),
            });
            continue;
        }
        let ts: i64 = match fields[cols.len() - 1].parse() {
            Ok(ts) => ts,
            Err(_) => {
                errors.push(LineError {
                    line_no,
                    reason: format!("bad timestamp `{}`", fields[cols.len() - 1]),
                });
                continue;
            }
        };
        records.push(BehaviorLogRecord {
            user_value: fields[0].to_string(),
            item_values: fields[1..cols.len() - 1].iter().map(|s| s.to_string()).collect(),
            timestamp: ts,
        });
    }
    Ok(ParseReport {
        schema,
        records,
        errors,
    })
}

/// Write records in the log CSV format (inverse of [`parse_log`]).
pub fn write_log(
    path: &Path,
    schema: &DatasetSchema,
    records: &[BehaviorLogRecord],
) -> Result<(), DataError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", schema.header())?;
    for r in records {
        writeln!(
            w,
            "{},{},{}",
            r.user_value,
            r.item_values.join(","),
            r.timestamp
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Derive the three context tokens from a UTC timestamp: meteorological
/// season, weekend/weekday flag, and which half of the month.
pub fn derive_context(ts: i64) -> Vec<String> {
    let dt = DateTime::from_timestamp(ts, 0).unwrap_or_else(|| DateTime::from_timestamp(0, 0).unwrap());
    let season = match dt.month() {
        3..=5 => "spring",
        6..=8 => "summer",
        9..=11 => "autumn",
        _ => "winter",
    };
    let daytype = match dt.weekday() {
        Weekday::Sat | Weekday::Sun => "weekend",
        _ => "weekday",
    };
    let half = if dt.day() <= 15 { "first_half" } else { "second_half" };
    vec![
        format!("season_{season}"),
        format!("daytype_{daytype}"),
        format!("monthhalf_{half}"),
    ]
}

/// A labeled prediction target: user, candidate item, context, and cutoff
/// timestamp. Retrieval for this target only sees behaviors strictly before
/// `timestamp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionTarget {
    pub id: String,
    pub user_token: String,
    pub item_tokens: Vec<String>,
    pub context_tokens: Vec<String>,
    pub timestamp: i64,
    pub label: u8,
}

impl PredictionTarget {
    /// Candidate features for selection: item tokens then context tokens, in
    /// canonical field order. The user id is not a candidate.
    pub fn candidate_tokens(&self) -> Vec<&str> {
        self.item_tokens
            .iter()
            .map(String::as_str)
            .chain(self.context_tokens.iter().map(String::as_str))
            .collect()
    }

    /// All field tokens in canonical order (user, item fields, context),
    /// the layout shared by behavior documents and targets.
    pub fn field_tokens(&self) -> Vec<&str> {
        std::iter::once(self.user_token.as_str())
            .chain(self.item_tokens.iter().map(String::as_str))
            .chain(self.context_tokens.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct SplitOutput {
    /// All behaviors as archive documents (leakage is prevented by per-target
    /// time cutoffs at search time, not by splitting the archive).
    pub docs: Vec<BehaviorDoc>,
    /// Positive targets per split, one of each per surviving user.
    pub train: Vec<PredictionTarget>,
    pub valid: Vec<PredictionTarget>,
    pub test: Vec<PredictionTarget>,
    /// Users dropped for having fewer than 4 behaviors.
    pub dropped_users: usize,
}

/// Temporal split: for a user with T behaviors, the behavior at step T-2 is
/// the train target (history steps 1..T-3), T-1 the validation target, and T
/// the test target. Users with fewer than 4 behaviors are dropped.
pub fn temporal_split(schema: &DatasetSchema, records: &[BehaviorLogRecord]) -> SplitOutput {
    let mut by_user: HashMap<&str, Vec<&BehaviorLogRecord>> = HashMap::new();
    for r in records {
        by_user.entry(&r.user_value).or_default().push(r);
    }
    let mut users: Vec<&str> = by_user.keys().copied().collect();
    users.sort_unstable();

    let mut out = SplitOutput::default();
    let mut doc_id: u32 = 0;
    for user in users {
        let mut seq = by_user.remove(user).unwrap();
        seq.sort_by_key(|r| r.timestamp);
        if seq.len() < 4 {
            out.dropped_users += 1;
            continue;
        }
        for r in &seq {
            out.docs.push(BehaviorDoc {
                doc_id,
                user_token: schema.user_token(r),
                feature_tokens: schema
                    .item_tokens(&r.item_values)
                    .into_iter()
                    .chain(derive_context(r.timestamp))
                    .collect(),
                timestamp: r.timestamp,
            });
            doc_id += 1;
        }
        let t = seq.len();
        let push = |split: &mut Vec<PredictionTarget>, name: &str, step: usize| {
            let r = seq[step];
            split.push(PredictionTarget {
                id: format!("{name}-{}", split.len()),
                user_token: schema.user_token(r),
                item_tokens: schema.item_tokens(&r.item_values),
                context_tokens: derive_context(r.timestamp),
                timestamp: r.timestamp,
                label: 1,
            });
        };
        push(&mut out.train, "train", t - 3);
        push(&mut out.valid, "valid", t - 2);
        push(&mut out.test, "test", t - 1);
    }
    out
}

/// An item available as a negative candidate: its field values in schema
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogItem {
    pub values: Vec<String>,
}

/// Read a catalog CSV whose header is the item field list.
pub fn parse_catalog(path: &Path) -> Result<(Vec<String>, Vec<CatalogItem>), DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(DataError::MissingHeader)?;
    let fields: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut items = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let values: Vec<String> = line.split(',').map(str::to_string).collect();
        if values.len() == fields.len() {
            items.push(CatalogItem { values });
        }
    }
    Ok((fields, items))
}

pub fn write_catalog(
    path: &Path,
    item_fields: &[String],
    items: &[CatalogItem],
) -> Result<(), DataError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", item_fields.join(","))?;
    for item in items {
        writeln!(w, "{}", item.values.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// For each positive target, draw `ratio` negatives with the same user,
/// context, and timestamp but an item the user never clicked (uniform,
/// without replacement within one positive). The result interleaves each
/// positive with its negatives; ids extend the positive's id.
pub fn sample_negatives(
    schema: &DatasetSchema,
    positives: &[PredictionTarget],
    user_clicked: &HashMap<String, HashSet<Vec<String>>>,
    catalog: &[CatalogItem],
    ratio: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PredictionTarget>, DataError> {
    if ratio < 1 {
        return Err(DataError::BadRatio);
    }
    let empty = HashSet::new();
    let mut out = Vec::with_capacity(positives.len() * (1 + ratio));
    for pos in positives {
        let clicked = user_clicked.get(&pos.user_token).unwrap_or(&empty);
        let available = catalog.iter().filter(|i| !clicked.contains(&i.values)).count();
        if available < ratio {
            return Err(DataError::CatalogTooSmall {
                user: pos.user_token.clone(),
                needed: ratio,
                available,
            });
        }
        out.push(pos.clone());
        let mut taken: HashSet<usize> = HashSet::new();
        for j in 0..ratio {
            let idx = loop {
                let idx = rng.gen_range(0..catalog.len());
                if !taken.contains(&idx) && !clicked.contains(&catalog[idx].values) {
                    break idx;
                }
            };
            taken.insert(idx);
            out.push(PredictionTarget {
                id: format!("{}-neg{j}", pos.id),
                user_token: pos.user_token.clone(),
                item_tokens: schema.item_tokens(&catalog[idx].values),
                context_tokens: pos.context_tokens.clone(),
                timestamp: pos.timestamp,
                label: 0,
            });
        }
    }
    Ok(out)
}

/// Click sets per user token, keyed by raw item values, for negative
/// sampling.
pub fn clicked_items(
    schema: &DatasetSchema,
    records: &[BehaviorLogRecord],
) -> HashMap<String, HashSet<Vec<String>>> {
    let mut map: HashMap<String, HashSet<Vec<String>>> = HashMap::new();
    for r in records {
        map.entry(schema.user_token(r))
            .or_default()
            .insert(r.item_values.clone());
    }
    map
}

/// Token-to-id mapping with id 0 reserved for padding/unknown. Ids are
/// assigned in first-seen order, so the mapping is stable for a fixed input
/// order.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self::default();
        v.tokens.push("<pad>".to_string());
        v.index.insert("<pad>".to_string(), 0);
        v
    }

    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Id of a token; 0 (the padding/unknown id) when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }
}

/// Build the vocabulary over every token any split or the catalog can
/// produce: document tokens, target tokens, and catalog item tokens.
pub fn build_vocabulary(
    schema: &DatasetSchema,
    split: &SplitOutput,
    catalog: &[CatalogItem],
) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for doc in &split.docs {
        vocab.intern(&doc.user_token);
        for t in &doc.feature_tokens {
            vocab.intern(t);
        }
    }
    for target in split.train.iter().chain(&split.valid).chain(&split.test) {
        vocab.intern(&target.user_token);
        for t in target.item_tokens.iter().chain(&target.context_tokens) {
            vocab.intern(t);
        }
    }
    for item in catalog {
        for t in schema.item_tokens(&item.values) {
            vocab.intern(&t);
        }
    }
    vocab
}

/// Write a split manifest CSV. List-valued cells are `;`-separated since
/// tokens are comma-free but fields are comma-separated.
pub fn write_split_manifest(path: &Path, targets: &[PredictionTarget]) -> Result<(), DataError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "target_id,user,item_tokens,context_tokens,ts,label")?;
    for t in targets {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.id,
            t.user_token,
            t.item_tokens.join(";"),
            t.context_tokens.join(";"),
            t.timestamp,
            t.label
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            user_field: "user_id".into(),
            item_fields: vec!["item_id".into(), "category".into()],
        }
    }

    fn record(user: &str, item: &str, cat: &str, ts: i64) -> BehaviorLogRecord {
        BehaviorLogRecord {
            user_value: user.into(),
            item_values: vec![item.into(), cat.into()],
            timestamp: ts,
        }
    }

    #[test]
    fn parse_empty_file_after_header() {
        let report = parse_log_str("user_id,item_id,category,timestamp\n").unwrap();
        assert!(report.records.is_empty());
        assert!(report.errors.is_empty());
        assert_eq!(report.schema, schema());
    }

    #[test]
    fn parse_single_line() {
        let report =
            parse_log_str("user_id,item_id,category,timestamp\n7,42,3,1435968000\n").unwrap();
        assert_eq!(report.records, vec![record("7", "42", "3", 1_435_968_000)]);
    }

    #[test]
    fn parse_missing_header_rejected() {
        assert!(matches!(parse_log_str(""), Err(DataError::MissingHeader)));
        assert!(matches!(
            parse_log_str("user_id,item_id\n"),
            Err(DataError::BadHeader)
        ));
    }

    #[test]
    fn parse_collects_line_errors_with_numbers() {
        let text = "user_id,item_id,category,timestamp\n\
                    1,2,3,100\n\
                    1,2,100\n\
                    1,2,3,notatime\n\
                    1,,3,100\n\
                    1,2,3,200\n";
        let report = parse_log_str(text).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.errors.len(), 3);
        assert_eq!(report.errors[0].line_no, 3);
        assert!(report.errors[0].reason.contains("expected 4 fields"));
        assert_eq!(report.errors[1].line_no, 4);
        assert!(report.errors[1].reason.contains("bad timestamp"));
        assert_eq!(report.errors[2].line_no, 5);
    }

    proptest! {
        #[test]
        fn log_round_trip_is_identity(
            rows in proptest::collection::vec(
                ("[a-z0-9]{1,6}", "[a-z0-9]{1,6}", "[a-z0-9]{1,6}", 0i64..10_000_000),
                0..50
            )
        ) {
            let recs: Vec<BehaviorLogRecord> = rows
                .iter()
                .map(|(u, i, c, ts)| record(u, i, c, *ts))
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("log.csv");
            write_log(&path, &schema(), &recs).unwrap();
            let report = parse_log(&path).unwrap();
            prop_assert!(report.errors.is_empty());
            prop_assert_eq!(report.records, recs);
            prop_assert_eq!(report.schema, schema());
        }
    }

    #[test]
    fn context_saturday_in_july() {
        // 2015-07-04 was a Saturday in the first half of a summer month.
        let tokens = derive_context(1_435_968_000);
        assert_eq!(
            tokens,
            vec!["season_summer", "daytype_weekend", "monthhalf_first_half"]
        );
    }

    #[test]
    fn context_wednesday_in_december() {
        // 2015-12-16 was a Wednesday in the second half of a winter month.
        let tokens = derive_context(1_450_224_000);
        assert_eq!(
            tokens,
            vec!["season_winter", "daytype_weekday", "monthhalf_second_half"]
        );
    }

    #[test]
    fn context_always_three_tokens() {
        for ts in [0i64, 1, 86_400_000, 1_700_000_000, -1] {
            assert_eq!(derive_context(ts).len(), 3);
        }
    }

    #[test]
    fn split_smallest_user() {
        let recs = vec![
            record("1", "a", "c", 10),
            record("1", "b", "c", 20),
            record("1", "c", "c", 30),
            record("1", "d", "c", 40),
        ];
        let out = temporal_split(&schema(), &recs);
        assert_eq!(out.docs.len(), 4);
        assert_eq!(out.train.len(), 1);
        assert_eq!(out.train[0].item_tokens[0], "item_id_b");
        assert_eq!(out.train[0].timestamp, 20);
        assert_eq!(out.valid[0].item_tokens[0], "item_id_c");
        assert_eq!(out.test[0].item_tokens[0], "item_id_d");
        assert_eq!(out.dropped_users, 0);
    }

    #[test]
    fn split_drops_short_users() {
        let recs = vec![
            record("1", "a", "c", 10),
            record("1", "b", "c", 20),
            record("1", "c", "c", 30),
        ];
        let out = temporal_split(&schema(), &recs);
        assert!(out.train.is_empty());
        assert_eq!(out.dropped_users, 1);
        assert!(out.docs.is_empty());
    }

    #[test]
    fn split_has_no_temporal_leakage() {
        let mut rng = stream_rng(99, "test-data");
        use rand::Rng;
        let mut recs = Vec::new();
        for u in 0..100 {
            let t = rng.gen_range(2..12);
            let mut ts = rng.gen_range(0..1000i64);
            for i in 0..t {
                ts += rng.gen_range(1..50i64);
                recs.push(record(&u.to_string(), &format!("i{i}"), "c", ts));
            }
        }
        let out = temporal_split(&schema(), &recs);
        let archive = crate::archive::build_index(&out.docs).unwrap();
        for target in out.train.iter().chain(&out.valid).chain(&out.test) {
            // Every behavior of this user before the cutoff really is earlier.
            for &doc_id in archive.user_timeline(&target.user_token) {
                let ts = archive.timestamp(doc_id).unwrap();
                let in_history = ts < target.timestamp;
                assert_eq!(in_history, ts < target.timestamp);
            }
            // The recent window never returns anything at/after the cutoff.
            for doc_id in archive.recent(&target.user_token, 100, target.timestamp) {
                assert!(archive.timestamp(doc_id).unwrap() < target.timestamp);
            }
        }
    }

    fn catalog_of(n: usize) -> Vec<CatalogItem> {
        (0..n)
            .map(|i| CatalogItem {
                values: vec![format!("i{i}"), "c".into()],
            })
            .collect()
    }

    #[test]
    fn negatives_count_and_labels() {
        let recs: Vec<BehaviorLogRecord> = (0..10)
            .flat_map(|u| {
                (0..4).map(move |i| record(&u.to_string(), &format!("i{i}"), "c", 10 + i as i64))
            })
            .collect();
        let out = temporal_split(&schema(), &recs);
        let clicked = clicked_items(&schema(), &recs);
        let mut rng = stream_rng(1, "negatives");
        let labeled =
            sample_negatives(&schema(), &out.train, &clicked, &catalog_of(20), 1, &mut rng)
                .unwrap();
        assert_eq!(labeled.len(), 20);
        assert_eq!(labeled.iter().filter(|t| t.label == 1).count(), 10);
        assert_eq!(labeled.iter().filter(|t| t.label == 0).count(), 10);
    }

    #[test]
    fn negatives_never_clicked_and_deterministic() {
        let recs: Vec<BehaviorLogRecord> = (0..4)
            .map(|i| record("1", &format!("i{i}"), "c", 10 + i as i64))
            .collect();
        let out = temporal_split(&schema(), &recs);
        let clicked = clicked_items(&schema(), &recs);
        let catalog = catalog_of(8);
        let run = |seed| {
            let mut rng = stream_rng(seed, "negatives");
            sample_negatives(&schema(), &out.train, &clicked, &catalog, 3, &mut rng).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a, b);
        for t in a.iter().filter(|t| t.label == 0) {
            let item_value = t.item_tokens[0].strip_prefix("item_id_").unwrap();
            assert!(!clicked["user_id_1"]
                .iter()
                .any(|values| values[0] == item_value));
            // same user, context, timestamp as the positive
            assert_eq!(t.user_token, "user_id_1");
            assert_eq!(t.timestamp, a[0].timestamp);
        }
    }

    #[test]
    fn negatives_catalog_too_small_rejected() {
        let recs: Vec<BehaviorLogRecord> = (0..4)
            .map(|i| record("1", &format!("i{i}"), "c", 10 + i as i64))
            .collect();
        let out = temporal_split(&schema(), &recs);
        let clicked = clicked_items(&schema(), &recs);
        // catalog of 4, all clicked -> nothing to sample
        let catalog: Vec<CatalogItem> = (0..4)
            .map(|i| CatalogItem {
                values: vec![format!("i{i}"), "c".into()],
            })
            .collect();
        let mut rng = stream_rng(1, "negatives");
        assert!(matches!(
            sample_negatives(&schema(), &out.train, &clicked, &catalog, 1, &mut rng),
            Err(DataError::CatalogTooSmall { .. })
        ));
    }

    #[test]
    fn vocabulary_is_stable_and_dense() {
        let mut v = Vocabulary::new();
        assert_eq!(v.id("<pad>"), 0);
        let a = v.intern("x_1");
        let b = v.intern("x_2");
        assert_eq!(v.intern("x_1"), a);
        assert_eq!((a, b), (1, 2));
        assert_eq!(v.id("unknown"), 0);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn vocabulary_covers_all_splits_and_catalog() {
        let recs: Vec<BehaviorLogRecord> = (0..5)
            .flat_map(|u| {
                (0..5).map(move |i| {
                    record(&u.to_string(), &format!("i{}", u * 5 + i), "c", 10 + i as i64)
                })
            })
            .collect();
        let out = temporal_split(&schema(), &recs);
        let catalog = catalog_of(30);
        let vocab = build_vocabulary(&schema(), &out, &catalog);
        for t in out.train.iter().chain(&out.valid).chain(&out.test) {
            assert!(vocab.contains(&t.user_token));
            for tok in t.item_tokens.iter().chain(&t.context_tokens) {
                assert!(vocab.contains(tok), "missing {tok}");
            }
        }
        for item in &catalog {
            for tok in schema().item_tokens(&item.values) {
                assert!(vocab.contains(&tok));
            }
        }
    }
}
