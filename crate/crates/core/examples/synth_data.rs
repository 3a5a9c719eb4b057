//! Write a synthetic dataset and print the per-sample foreground ratios.
//!
//! `cargo run --example synth_data -- [dir] [n] [seed]`

use madgnet::data::{synth_generate, SynthConfig};

fn main() -> madgnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args.first().cloned().unwrap_or_else(|| std::env::temp_dir().join("madgnet-synth").display().to_string());
    let n: usize = args.get(1).map_or(8, |v| v.parse().expect("n"));
    let seed: u64 = args.get(2).map_or(0, |v| v.parse().expect("seed"));
    let ratios = synth_generate(dir.as_ref(), n, &SynthConfig::default(), seed)?;
    for (i, r) in ratios.iter().enumerate() {
        println!("{i:04}\t{r:.4}");
    }
    println!("{n} samples in {dir}");
    Ok(())
}
