//! Load a checkpoint and write a binary mask for one image.
//!
//! `cargo run --release --example infer_mask -- <ckpt> <image.ppm> <out.pgm>`

use madgnet::data::{image_tensor, read_raster, write_raster, Raster};
use madgnet::network::threshold_logits;
use madgnet::tensor::kernels::resample;
use madgnet::tensor::ResampleMode;
use madgnet::train::Checkpoint;

fn main() -> madgnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [ckpt, image, out] = args.as_slice() else {
        eprintln!("usage: infer_mask <ckpt> <image> <out.pgm>");
        std::process::exit(1);
    };
    let (cfg, net, store) = Checkpoint::load(ckpt.as_ref())?.model()?;
    let raster = read_raster(image.as_ref())?;
    let x = image_tensor(&raster, Some((cfg.network.height, cfg.network.width)))?;
    let mask = threshold_logits(&net.logits(&store, &x)?[0]);
    let mask = resample(&mask, raster.height, raster.width, ResampleMode::Nearest)?;
    let fg = mask.data().iter().filter(|&&v| v >= 0.5).count();
    let pixels = mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    write_raster(out.as_ref(), &Raster::gray(raster.width, raster.height, pixels))?;
    println!("{fg} foreground pixels of {}", raster.width * raster.height);
    Ok(())
}
