//! Planted-relevance comparison: baseline vs. strategies, mean over seeds.
//!
//! `cargo run --release --example planted -- [key=value ...]`, where keys are
//! training config keys plus `topics`, `noise`, `seeds`, `grid`.

use std::time::Instant;

use frame_contrast::cli::{sweep_cell, GridEntry};
use frame_contrast::data::{generate_synthetic, Dataset, SyntheticSpec};
use frame_contrast::trainkit::TrainConfig;

fn main() -> frame_contrast::Result<()> {
    let mut spec = SyntheticSpec {
        num_pairs: 300,
        ..SyntheticSpec::default()
    };
    let mut config = TrainConfig {
        lr: 1e-2,
        warmup_steps: 100,
        total_steps: 1500,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut seeds = 3u64;
    let mut on_train = false;
    let mut grid = "baseline,fixed-k:7,random:7,fixed-k:1,fixed-k:32".to_string();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        match k {
            "topics" => spec.num_topics = v.parse().unwrap(),
            "noise" => spec.noise_std = v.parse().unwrap(),
            "tokens" => spec.tokens_per_text = v.parse().unwrap(),
            "data_seed" => spec.seed = v.parse().unwrap(),
            "seeds" => seeds = v.parse().unwrap(),
            "grid" => grid = v.to_string(),
            "on_train" => on_train = v == "1",
            _ => config.set(&arg)?,
        }
    }
    let all = generate_synthetic(&spec)?;
    let train = Dataset {
        examples: all.examples[..200].to_vec(),
    };
    let test = Dataset {
        examples: all.examples[200..].to_vec(),
    };
    for entry in grid.split(',') {
        let e: GridEntry = entry.parse()?;
        let start = Instant::now();
        let mut sums = [0.0; 3];
        for seed in 0..seeds {
            let row = sweep_cell(&config, e, seed, &train, if on_train { &train } else { &test }, false)?;
            sums[0] += row[3].parse::<f64>().unwrap();
            sums[1] += row[7].parse::<f64>().unwrap();
            sums[2] += row[8].parse::<f64>().unwrap();
        }
        let n = seeds as f64;
        println!(
            "{entry:>14}  r1 {:6.2}  prec {:.3}  rec {:.3}  ({:.1}s)",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
