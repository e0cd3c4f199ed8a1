//! Write a planted-hierarchy corpus and its ground truth.
//!
//! Usage: cargo run -p topictree-core --example planted -- <corpus.txt> [truth.json] [seed]

use std::env;
use std::fs;

use topictree::synthetic::{PlantedConfig, PlantedCorpus};

fn main() -> std::io::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let Some(corpus_path) = args.first() else {
        eprintln!("usage: planted <corpus.txt> [truth.json] [seed]");
        std::process::exit(2);
    };
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(42);
    let planted = PlantedCorpus::generate(&PlantedConfig {
        seed,
        ..PlantedConfig::default()
    });
    fs::write(corpus_path, planted.lines.join("\n") + "\n")?;
    if let Some(truth_path) = args.get(1) {
        fs::write(truth_path, serde_json::to_string_pretty(&planted.truth)?)?;
    }
    eprintln!("{} documents, {} terms", planted.lines.len(), planted.truth.len());
    Ok(())
}
