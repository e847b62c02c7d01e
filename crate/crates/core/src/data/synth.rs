//! Synthetic behavior logs with planted long-range preferences.
//!
//! Each user gets a hidden preferred category. It is exercised early in the
//! sequence, never inside the recency window preceding the first target step,
//! and resurfaces at the three target steps with probability `rho`. A model
//! that only sees the recent window therefore has almost nothing to learn
//! from, while one that can reach far back in the history does.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BehaviorLogRecord, CatalogItem, DataError, DatasetSchema};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub users: usize,
    pub categories: usize,
    pub items_per_category: usize,
    pub brands: usize,
    /// Behaviors per user (T). The last three steps become the train, valid,
    /// and test targets.
    pub seq_len: usize,
    /// Width W of the unrelated-category window right before the first
    /// target step.
    pub recency_window: usize,
    /// Probability that a target step follows the hidden preference.
    pub rho: f64,
    /// Timestamp of the earliest possible behavior.
    pub start_ts: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 100,
            categories: 10,
            items_per_category: 10,
            brands: 10,
            seq_len: 30,
            recency_window: 6,
            rho: 0.9,
            // 2015-01-01T00:00:00Z
            start_ts: 1_420_070_400,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.recency_window >= self.seq_len {
            return Err(DataError::BadSynthConfig(format!(
                "recency window {} must be smaller than sequence length {}",
                self.recency_window, self.seq_len
            )));
        }
        if self.seq_len < self.recency_window + 4 {
            return Err(DataError::BadSynthConfig(
                "sequence must leave at least one step before the recency window".into(),
            ));
        }
        if self.users == 0 || self.items_per_category == 0 || self.brands == 0 {
            return Err(DataError::BadSynthConfig("zero-sized dimension".into()));
        }
        if self.categories < 2 {
            return Err(DataError::BadSynthConfig(
                "need at least two categories".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(DataError::BadSynthConfig(format!(
                "rho {} outside [0, 1]",
                self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SynthOutput {
    pub schema: DatasetSchema,
    pub records: Vec<BehaviorLogRecord>,
    pub catalog: Vec<CatalogItem>,
    /// Ground-truth hidden category per user index.
    pub hidden_category: Vec<usize>,
    /// Target steps that followed the hidden preference, for frequency
    /// checks against `rho`.
    pub pattern_targets: usize,
    pub total_targets: usize,
}

fn item_values(item: usize, category: usize, brand: usize) -> Vec<String> {
    vec![item.to_string(), category.to_string(), brand.to_string()]
}

/// Generate the log and catalog. Deterministic for a fixed config and RNG.
pub fn gen_synthetic(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SynthOutput, DataError> {
    cfg.validate()?;
    let schema = DatasetSchema {
        user_field: "user_id".to_string(),
        item_fields: vec![
            "item_id".to_string(),
            "category".to_string(),
            "brand".to_string(),
        ],
    };

    // Global catalog: items_per_category items per category, each with a
    // fixed random brand.
    let n_items = cfg.categories * cfg.items_per_category;
    let brand_of: Vec<usize> = (0..n_items).map(|_| rng.gen_range(0..cfg.brands)).collect();
    let category_of = |item: usize| item / cfg.items_per_category;
    let catalog: Vec<CatalogItem> = (0..n_items)
        .map(|i| CatalogItem {
            values: item_values(i, category_of(i), brand_of[i]),
        })
        .collect();

    let t = cfg.seq_len;
    let w = cfg.recency_window;
    let first_target = t - 3;
    let window_start = first_target - w;

    let mut records = Vec::with_capacity(cfg.users * t);
    let mut hidden_category = Vec::with_capacity(cfg.users);
    let mut pattern_targets = 0usize;

    for user in 0..cfg.users {
        let hidden = rng.gen_range(0..cfg.categories);
        hidden_category.push(hidden);

        // Shuffled round-robin over the hidden category's items; the first
        // pass covers every item, so with enough early steps the user's
        // click set contains the whole hidden pool.
        let mut pool: Vec<usize> =
            (hidden * cfg.items_per_category..(hidden + 1) * cfg.items_per_category).collect();
        pool.shuffle(rng);
        let mut cursor = 0usize;
        let mut next_hidden_item = |rng: &mut ChaCha8Rng| {
            if cursor == pool.len() {
                pool.shuffle(rng);
                cursor = 0;
            }
            let item = pool[cursor];
            cursor += 1;
            item
        };
        let unrelated_item = |rng: &mut ChaCha8Rng| {
            let mut cat = rng.gen_range(0..cfg.categories - 1);
            if cat >= hidden {
                cat += 1;
            }
            cat * cfg.items_per_category + rng.gen_range(0..cfg.items_per_category)
        };

        let mut ts = cfg.start_ts + rng.gen_range(0..30 * 86_400);
        for step in 0..t {
            ts += rng.gen_range(86_400..4 * 86_400) + rng.gen_range(0..3_600);
            let item = if step >= first_target {
                // Target step: revisit the hidden preference w.p. rho.
                if rng.gen_bool(cfg.rho) {
                    pattern_targets += 1;
                    next_hidden_item(rng)
                } else {
                    unrelated_item(rng)
                }
            } else if step >= window_start {
                unrelated_item(rng)
            } else if step < cfg.items_per_category {
                // Guarantee early coverage of the hidden pool.
                next_hidden_item(rng)
            } else if rng.gen_bool(0.5) {
                next_hidden_item(rng)
            } else {
                unrelated_item(rng)
            };
            records.push(BehaviorLogRecord {
                user_value: user.to_string(),
                item_values: item_values(item, category_of(item), brand_of[item]),
                timestamp: ts,
            });
        }
    }

    Ok(SynthOutput {
        schema,
        records,
        catalog,
        hidden_category,
        pattern_targets,
        total_targets: cfg.users * 3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{clicked_items, sample_negatives, temporal_split};
    use crate::metrics::{auc, ScoredSet};
    use crate::rng::stream_rng;

    fn cfg(users: usize, rho: f64) -> SynthConfig {
        SynthConfig {
            users,
            categories: 8,
            items_per_category: 5,
            brands: 6,
            seq_len: 24,
            recency_window: 6,
            rho,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn rejects_inconsistent_config() {
        let mut c = cfg(10, 0.5);
        c.recency_window = c.seq_len;
        let mut rng = stream_rng(0, "data");
        assert!(gen_synthetic(&c, &mut rng).is_err());
        c.recency_window = c.seq_len + 5;
        assert!(gen_synthetic(&c, &mut rng).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let c = cfg(20, 0.7);
        let a = gen_synthetic(&c, &mut stream_rng(3, "data")).unwrap();
        let b = gen_synthetic(&c, &mut stream_rng(3, "data")).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.hidden_category, b.hidden_category);
    }

    #[test]
    fn hidden_category_absent_from_recency_window() {
        let c = cfg(50, 1.0);
        let out = gen_synthetic(&c, &mut stream_rng(7, "data")).unwrap();
        let t = c.seq_len;
        let w = c.recency_window;
        for (u, chunk) in out.records.chunks(t).enumerate() {
            let hidden = out.hidden_category[u].to_string();
            // steps [t-3-w, t-3) are the unrelated window
            for step in (t - 3 - w)..(t - 3) {
                assert_ne!(
                    chunk[step].item_values[1], hidden,
                    "user {u} step {step} leaked the hidden category into the window"
                );
            }
            // and the early zone does exercise it
            let early_hits = chunk[..t - 3 - w]
                .iter()
                .filter(|r| r.item_values[1] == hidden)
                .count();
            assert!(early_hits > 0, "user {u} never exercised the hidden category early");
        }
    }

    #[test]
    fn timestamps_strictly_increase_within_users() {
        let c = cfg(20, 0.5);
        let out = gen_synthetic(&c, &mut stream_rng(11, "data")).unwrap();
        for chunk in out.records.chunks(c.seq_len) {
            for pair in chunk.windows(2) {
                assert!(pair[0].timestamp < pair[1].timestamp);
            }
        }
    }

    #[test]
    fn pattern_frequency_within_two_sigma_of_rho() {
        let c = cfg(400, 0.8);
        let out = gen_synthetic(&c, &mut stream_rng(13, "data")).unwrap();
        let n = out.total_targets as f64;
        let freq = out.pattern_targets as f64 / n;
        let sigma = (0.8f64 * 0.2 / n).sqrt();
        assert!(
            (freq - 0.8).abs() <= 2.0 * sigma,
            "freq {freq} not within 2 sigma ({sigma}) of 0.8"
        );
    }

    /// Score test candidates by hidden-category match and compute AUC.
    fn oracle_auc(c: &SynthConfig, seed: u64) -> f64 {
        let out = gen_synthetic(c, &mut stream_rng(seed, "data")).unwrap();
        let split = temporal_split(&out.schema, &out.records);
        let clicked = clicked_items(&out.schema, &out.records);
        let mut rng = stream_rng(seed, "negatives");
        let labeled = sample_negatives(
            &out.schema,
            &split.test,
            &clicked,
            &out.catalog,
            1,
            &mut rng,
        )
        .unwrap();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for t in &labeled {
            let user: usize = t
                .user_token
                .strip_prefix("user_id_")
                .unwrap()
                .parse()
                .unwrap();
            let hidden = format!("category_{}", out.hidden_category[user]);
            scores.push(f64::from(t.item_tokens.contains(&hidden)));
            labels.push(t.label);
        }
        auc(&ScoredSet::new(scores, labels).unwrap()).unwrap()
    }

    #[test]
    fn full_signal_oracle_auc_is_one() {
        assert_eq!(oracle_auc(&cfg(300, 1.0), 17), 1.0);
    }

    #[test]
    fn no_signal_oracle_auc_is_half() {
        let v = oracle_auc(&cfg(300, 0.0), 19);
        assert!((v - 0.5).abs() < 0.03, "auc = {v}");
    }
}
