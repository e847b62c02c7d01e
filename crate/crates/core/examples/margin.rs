//! Quick experiment: train UBR and the recent-N baseline on planted-pattern
//! synthetic data and print the test AUC margin. Used to sanity-check
//! hyperparameters at different scales.
//!
//! Usage: cargo run -p ubr-core --example margin [users] [rounds] [s] [d]

use std::time::Instant;

use ubr_core::data::synth::{gen_synthetic, SynthConfig};
use ubr_core::rng::stream_rng;
use ubr_core::trainer::{self, Mode, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let users: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let rounds: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let s: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(12);
    let d: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);

    let synth = SynthConfig {
        users,
        categories: 20,
        items_per_category: 10,
        brands: 20,
        seq_len: 60,
        recency_window: 12,
        rho: 0.9,
        ..SynthConfig::default()
    };
    let t0 = Instant::now();
    let out = gen_synthetic(&synth, &mut stream_rng(42, "data")).unwrap();
    let data = trainer::prepare_data(out.schema, &out.records, &out.catalog, 1, 42).unwrap();
    println!(
        "data: {} docs, {} train targets, vocab {} ({:.1?})",
        data.archive.total_docs(),
        data.train.len(),
        data.vocab.len(),
        t0.elapsed()
    );

    for mode in [Mode::Ubr, Mode::RecentN] {
        let cfg = TrainConfig {
            mode,
            seed: 42,
            s,
            embed_dim: d,
            max_rounds: rounds,
            patience: 3,
            ..TrainConfig::default()
        };
        let t1 = Instant::now();
        let run = trainer::run(&data, &cfg).unwrap();
        println!(
            "{:<16} test auc {:.4} logloss {:.4} rig {:.4} best_round {} rows {} ({:.1?})",
            mode.name(),
            run.test.auc,
            run.test.logloss,
            run.test.rig,
            run.best_round,
            run.rows.len(),
            t1.elapsed()
        );
        for row in &run.rows {
            println!("    {}", row.to_csv());
        }
    }
}
