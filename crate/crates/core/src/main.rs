use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use madgnet::analysis::{profile_dataset, write_text, ParamReport, DEFAULT_CUTOFF};
use madgnet::config::Config;
use madgnet::data::{image_tensor, read_raster, synth_generate, write_raster, Manifest, Raster, SynthConfig};
use madgnet::esdm::DecodingFlow;
use madgnet::network::threshold_logits;
use madgnet::tensor::kernels::resample;
use madgnet::tensor::ResampleMode;
use madgnet::train::{evaluate, Checkpoint, Trainer};
use madgnet::{selfcheck, Error, Result};

#[derive(Parser)]
#[command(name = "madgnet", version, about = "Segmentation with MFMSA decoding and ensemble sub-decoding")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic ellipse dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a config and a dataset directory or manifest.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        flow: Option<DecodingFlow>,
        #[arg(long)]
        no_deep_supervision: bool,
        /// Loss log path (default: the checkpoint path with a .log extension).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset and write the metric table.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Only rows with this split tag (default: every row).
        #[arg(long)]
        split: Option<String>,
    },
    /// Predict a binary mask for one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scale/frequency profile of a dataset.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// High-pass cutoff as a fraction of the Nyquist radius.
        #[arg(long, default_value_t = DEFAULT_CUTOFF)]
        cutoff: f64,
    },
    /// Parameter census of the configured attention block.
    ParamCheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Gradient and identity suites.
    Selfcheck {
        #[arg(long, default_value_t = 60)]
        probes: usize,
    },
}

fn cmd_train(
    config: Option<PathBuf>,
    data: &Path,
    out: &Path,
    flow: Option<DecodingFlow>,
    no_ds: bool,
    log: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let log = log.unwrap_or_else(|| out.with_extension("log"));
    let mut trainer = match resume {
        Some(ck) => Trainer::from_checkpoint(&Checkpoint::load(&ck)?)?,
        None => {
            let mut cfg = Config::load(&config.expect("required without --resume"))?;
            if let Some(f) = flow {
                cfg.network.flow = f;
            }
            if no_ds {
                cfg.network.deep_supervision = false;
            }
            cfg.validate()?;
            if log.exists() {
                std::fs::remove_file(&log).map_err(|e| Error::Io { path: log.clone(), source: e })?;
            }
            Trainer::new(cfg)?
        }
    };
    let cfg = &trainer.cfg;
    let manifest = Manifest::load(data)?.split(&cfg.data.train_split);
    if manifest.is_empty() {
        return Err(Error::Config(format!(
            "no manifest rows tagged {:?} in {}",
            cfg.data.train_split,
            data.display()
        )));
    }
    let samples = manifest.load_all(Some((cfg.network.height, cfg.network.width)))?;
    log::info!(
        "training {} parameters on {} samples for {} epochs",
        trainer.store.numel(),
        samples.len(),
        cfg.train.epochs
    );
    let rows = trainer.run(&samples, Some(&log), Some(out))?;
    if let Some(last) = rows.last() {
        println!("final loss {:.6} after {} steps", last.loss, last.step);
    }
    Ok(())
}

fn cmd_eval(ckpt: &Path, data: &Path, report: &Path, split: Option<String>) -> Result<()> {
    let (cfg, net, store) = Checkpoint::load(ckpt)?.model()?;
    let mut manifest = Manifest::load(data)?;
    if let Some(tag) = split {
        manifest = manifest.split(&tag);
    }
    let samples = manifest.load_all(Some((cfg.network.height, cfg.network.width)))?;
    let rep = evaluate(&net, &store, &samples)?;
    rep.write(report)?;
    let m = &rep.mean;
    println!(
        "dsc {:.4}  miou {:.4}  f_beta_w {:.4}  s_alpha {:.4}  e_phi_max {:.4}  mae {:.4}",
        m.dsc, m.miou, m.f_beta_w, m.s_alpha, m.e_phi_max, m.mae
    );
    Ok(())
}

fn cmd_infer(ckpt: &Path, image: &Path, out: &Path) -> Result<()> {
    let (cfg, net, store) = Checkpoint::load(ckpt)?.model()?;
    let raster = read_raster(image)?;
    let (h, w) = (raster.height, raster.width);
    let x = image_tensor(&raster, Some((cfg.network.height, cfg.network.width)))?;
    let logits = net.logits(&store, &x)?;
    let mask = threshold_logits(&logits[0]);
    let mask = resample(&mask, h, w, ResampleMode::Nearest)?;
    let r = Raster::gray(w, h, mask.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect());
    write_raster(out, &r)?;
    Ok(())
}

fn cmd_param_check(config: Option<PathBuf>) -> Result<bool> {
    let cfg = match config {
        Some(p) => Config::load(&p)?,
        None => Config::default(),
    };
    let block = cfg.network.block_config();
    let rep = ParamReport::sweep(&block, &[(block.channels, block.reduction, block.gamma)])?;
    print!("{}", rep.to_tsv());
    let bad = rep.violations();
    for v in &bad {
        eprintln!("violation: {v}");
    }
    Ok(bad.is_empty())
}

fn dispatch(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::GenData { out, n, size, seed } => {
            let cfg = SynthConfig {
                size,
                ..SynthConfig::default()
            };
            let ratios = synth_generate(&out, n, &cfg, seed)?;
            println!("wrote {} samples to {}", ratios.len(), out.display());
        }
        Cmd::Train {
            config,
            data,
            out,
            flow,
            no_deep_supervision,
            log,
            resume,
        } => cmd_train(config, &data, &out, flow, no_deep_supervision, log, resume)?,
        Cmd::Eval {
            ckpt,
            data,
            report,
            split,
        } => cmd_eval(&ckpt, &data, &report, split)?,
        Cmd::Infer { ckpt, image, out } => cmd_infer(&ckpt, &image, &out)?,
        Cmd::Analyze { data, out, cutoff } => {
            let profile = profile_dataset(&Manifest::load(&data)?, cutoff);
            write_text(&out, &profile.to_tsv())?;
            if profile.skipped > 0 {
                eprintln!("skipped {} unreadable samples", profile.skipped);
            }
            println!("profiled {} samples", profile.rows.len());
        }
        Cmd::ParamCheck { config } => return cmd_param_check(config),
        Cmd::Selfcheck { probes } => {
            let results = selfcheck::run_all(probes);
            for r in &results {
                println!(
                    "{}\t{}\t{:.2}s\t{}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.seconds,
                    r.detail
                );
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
