//! Probe the sum-pooling ablation pair at acceptance scale.

use ubr_core::data::synth::{gen_synthetic, SynthConfig};
use ubr_core::rng::stream_rng;
use ubr_core::trainer::{self, Mode, TrainConfig};

fn main() {
    let synth = SynthConfig {
        users: 10_000,
        categories: 20,
        items_per_category: 10,
        brands: 20,
        seq_len: 60,
        recency_window: 12,
        rho: 0.9,
        ..SynthConfig::default()
    };
    let out = gen_synthetic(&synth, &mut stream_rng(42, "data")).unwrap();
    let data = trainer::prepare_data(out.schema, &out.records, &out.catalog, 1, 42).unwrap();
    println!("data: {} docs", data.archive.total_docs());
    for mode in [Mode::UbrSumPooling, Mode::SumPooling] {
        let cfg = TrainConfig {
            mode,
            seed: 42,
            s: 12,
            max_rounds: 10,
            ..TrainConfig::default()
        };
        let t = std::time::Instant::now();
        let run = trainer::run(&data, &cfg).unwrap();
        println!(
            "{:<16} test auc {:.4} logloss {:.4} rows {} ({:.1?})",
            mode.name(),
            run.test.auc,
            run.test.logloss,
            run.rows.len(),
            t.elapsed()
        );
    }
}
