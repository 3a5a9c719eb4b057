//! Train on a synthetic split, evaluate held-out samples and save a checkpoint.
//!
//! `cargo run --release --example train_eval -- [epochs] [ensemble|parallel|forward]`

use madgnet::config::Config;
use madgnet::data::{synth_generate, Manifest, SynthConfig};
use madgnet::esdm::DecodingFlow;
use madgnet::train::{evaluate, Trainer};

fn main() -> madgnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(20, |v| v.parse().expect("epochs"));
    let flow: DecodingFlow = args.get(1).map_or(Ok(DecodingFlow::Ensemble), |v| v.parse())?;

    let dir = std::env::temp_dir().join("madgnet-train-eval");
    synth_generate(&dir.join("data"), 48, &SynthConfig::default(), 1)?;
    let all = Manifest::load(&dir.join("data"))?.load_all(Some((64, 64)))?;
    let (train, test) = all.split_at(32);

    let mut cfg = Config::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.ini").as_ref())?;
    cfg.network.flow = flow;
    cfg.train.epochs = epochs;
    let mut trainer = Trainer::new(cfg)?;
    let rows = trainer.run(train, Some(&dir.join("train.log")), Some(&dir.join("model.ckpt")))?;
    println!("final loss {:.4}", rows.last().map_or(f64::NAN, |r| r.loss));

    let rep = evaluate(&trainer.net, &trainer.store, test)?;
    print!("{}", rep.to_tsv());
    println!("checkpoint in {}", dir.join("model.ckpt").display());
    Ok(())
}
