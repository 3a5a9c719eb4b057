//! Overfit a small synthetic set and print train DSC as training goes.
//!
//! `cargo run --release --example overfit -- [epochs] [embed] [lr]`

use std::time::Instant;

use madgnet::config::Config;
use madgnet::data::{synth_generate, AugmentConfig, Manifest, SynthConfig};
use madgnet::train::{evaluate, Trainer};

fn main() -> madgnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let epochs: usize = arg(0, "300").parse().expect("epochs");
    let embed: usize = arg(1, "16").parse().expect("embed");
    let lr: f64 = arg(2, "0.003").parse().expect("lr");

    let dir = std::env::temp_dir().join("madgnet-overfit");
    synth_generate(&dir, 8, &SynthConfig::default(), 7)?;
    let data = Manifest::load(&dir)?.load_all(Some((64, 64)))?;

    let mut cfg = Config::default();
    cfg.network.widths = [8, 16, 16, 32, 32];
    cfg.network.embed = embed;
    cfg.network.mfmsa.min_channels = 4;
    cfg.network.mfmsa.reduction = 4;
    cfg.network.mfmsa.frequencies = 4;
    cfg.network.mfmsa.min_height = 2;
    cfg.network.mfmsa.min_width = 2;
    cfg.train.epochs = epochs;
    cfg.train.lr_max = lr;
    cfg.data.augment = AugmentConfig::NONE;

    let mut trainer = Trainer::new(cfg)?;
    println!("{} parameters", trainer.store.numel());
    let start = Instant::now();
    while trainer.epoch < epochs {
        let loss = trainer.train_epoch(&data, &mut |_| Ok(()))?;
        if trainer.epoch % 10 == 0 || trainer.epoch == epochs {
            let rep = evaluate(&trainer.net, &trainer.store, &data)?;
            println!(
                "epoch {:4}  loss {loss:.4}  dsc {:.4}  {:.1}s",
                trainer.epoch,
                rep.mean.dsc,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
