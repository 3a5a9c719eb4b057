//! Scale and frequency statistics of a generated dataset.

use madgnet::analysis::{profile_dataset, DEFAULT_CUTOFF};
use madgnet::data::{synth_generate, Manifest, SynthConfig};

fn main() -> madgnet::Result<()> {
    let dir = std::env::temp_dir().join("madgnet-profile");
    synth_generate(&dir, 16, &SynthConfig::default(), 5)?;
    let profile = profile_dataset(&Manifest::load(&dir)?, DEFAULT_CUTOFF);
    print!("{}", profile.to_tsv());
    Ok(())
}
