//! INI run configuration. Every key is optional and falls back to the value
//! in [`Config::default`]; unknown sections or keys are errors.
//!
//! ```text
//! [network]  height width encoder_widths embed sub_tasks labels flow deep_supervision
//! [mfmsa]    scales frequencies gamma reduction min_channels min_height min_width strategy resample
//! [train]    epochs batch_size lr_max lr_min seed checkpoint_every grad_clip
//!            lambda_region lambda_distance lambda_boundary
//! [data]     hflip vflip max_rotation multi_scale train_split eval_split
//! ```
//!
//! `encoder_widths` is five comma-separated integers. `grad_clip = 0` turns
//! clipping off. `checkpoint_every = 0` writes only the final checkpoint.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::{NetworkConfig, ENCODER_STAGES};
use crate::tensor::ResampleMode;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 4,
            lr_max: 1e-4,
            lr_min: 1e-6,
            seed: 0,
            checkpoint_every: 0,
            grad_clip: None,
            loss: LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub augment: AugmentConfig,
    pub multi_scale: bool,
    pub train_split: String,
    pub eval_split: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            augment: AugmentConfig::default(),
            multi_scale: false,
            train_split: "train".into(),
            eval_split: "test".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn resample_name(m: ResampleMode) -> &'static str {
    match m {
        ResampleMode::Bilinear => "bilinear",
        ResampleMode::Nearest => "nearest",
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key} = {v:?} is not a valid value")))
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("[{section}] {key} = {v:?} is not a boolean"))),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Config::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key {k:?} outside any section")));
                }
                continue;
            };
            for (key, v) in props.iter() {
                cfg.set(section, key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let n = &mut self.network;
        let t = &mut self.train;
        let d = &mut self.data;
        macro_rules! p {
            () => {
                parse_value(section, key, v)?
            };
        }
        match (section, key) {
            ("network", "height") => n.height = p!(),
            ("network", "width") => n.width = p!(),
            ("network", "encoder_widths") => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|s| parse_value(section, key, s))
                    .collect::<Result<_>>()?;
                n.widths = parts.try_into().map_err(|_| {
                    Error::Config(format!("[network] encoder_widths needs {ENCODER_STAGES} values"))
                })?;
            }
            ("network", "embed") => n.embed = p!(),
            ("network", "sub_tasks") => n.sub_tasks = p!(),
            ("network", "labels") => n.labels = p!(),
            ("network", "flow") => n.flow = p!(),
            ("network", "deep_supervision") => n.deep_supervision = parse_bool(section, key, v)?,
            ("mfmsa", "scales") => n.mfmsa.scales = p!(),
            ("mfmsa", "frequencies") => n.mfmsa.frequencies = p!(),
            ("mfmsa", "gamma") => n.mfmsa.gamma = p!(),
            ("mfmsa", "reduction") => n.mfmsa.reduction = p!(),
            ("mfmsa", "min_channels") => n.mfmsa.min_channels = p!(),
            ("mfmsa", "min_height") => n.mfmsa.min_height = p!(),
            ("mfmsa", "min_width") => n.mfmsa.min_width = p!(),
            ("mfmsa", "strategy") => n.mfmsa.strategy = p!(),
            ("mfmsa", "resample") => {
                n.mfmsa.resample = match v.trim() {
                    "bilinear" => ResampleMode::Bilinear,
                    "nearest" => ResampleMode::Nearest,
                    _ => return Err(Error::Config(format!("[mfmsa] resample = {v:?}, expected bilinear|nearest"))),
                }
            }
            ("train", "epochs") => t.epochs = p!(),
            ("train", "batch_size") => t.batch_size = p!(),
            ("train", "lr_max") => t.lr_max = p!(),
            ("train", "lr_min") => t.lr_min = p!(),
            ("train", "seed") => t.seed = p!(),
            ("train", "checkpoint_every") => t.checkpoint_every = p!(),
            ("train", "grad_clip") => {
                let c: f64 = p!();
                t.grad_clip = (c > 0.0).then_some(c);
            }
            ("train", "lambda_region") => t.loss.region = p!(),
            ("train", "lambda_distance") => t.loss.distance = p!(),
            ("train", "lambda_boundary") => t.loss.boundary = p!(),
            ("data", "hflip") => d.augment.hflip = p!(),
            ("data", "vflip") => d.augment.vflip = p!(),
            ("data", "max_rotation") => d.augment.max_rotation_deg = p!(),
            ("data", "multi_scale") => d.multi_scale = parse_bool(section, key, v)?,
            ("data", "train_split") => d.train_split = v.trim().to_string(),
            ("data", "eval_split") => d.eval_split = v.trim().to_string(),
            ("network" | "mfmsa" | "train" | "data", _) => {
                return Err(Error::Config(format!("unknown key {key:?} in [{section}]")))
            }
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let t = &self.train;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if t.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(t.lr_max.is_finite() && t.lr_min.is_finite() && t.lr_min >= 0.0 && t.lr_max >= 0.0) {
            return bad("learning rates must be finite and non-negative");
        }
        let l = &t.loss;
        if [l.region, l.distance, l.boundary].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("loss weights must be finite and non-negative");
        }
        let a = &self.data.augment;
        if !(0.0..=1.0).contains(&a.hflip) || !(0.0..=1.0).contains(&a.vflip) {
            return bad("flip probabilities must lie in [0, 1]");
        }
        if !(a.max_rotation_deg >= 0.0 && a.max_rotation_deg < 180.0) {
            return bad("max_rotation must lie in [0, 180)");
        }
        Ok(())
    }

    /// Canonical text; parsing it gives back an equal config.
    pub fn to_ini(&self) -> String {
        let n = &self.network;
        let m = &n.mfmsa;
        let t = &self.train;
        let d = &self.data;
        let widths: Vec<String> = n.widths.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "[network]");
        let _ = writeln!(s, "height = {}\nwidth = {}", n.height, n.width);
        let _ = writeln!(s, "encoder_widths = {}", widths.join(","));
        let _ = writeln!(s, "embed = {}\nsub_tasks = {}\nlabels = {}", n.embed, n.sub_tasks, n.labels);
        let _ = writeln!(s, "flow = {}\ndeep_supervision = {}", n.flow, n.deep_supervision);
        let _ = writeln!(s, "\n[mfmsa]");
        let _ = writeln!(s, "scales = {}\nfrequencies = {}\ngamma = {:?}", m.scales, m.frequencies, m.gamma);
        let _ = writeln!(s, "reduction = {}\nmin_channels = {}", m.reduction, m.min_channels);
        let _ = writeln!(s, "min_height = {}\nmin_width = {}", m.min_height, m.min_width);
        let _ = writeln!(s, "strategy = {}\nresample = {}", m.strategy, resample_name(m.resample));
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}\nbatch_size = {}", t.epochs, t.batch_size);
        let _ = writeln!(s, "lr_max = {:?}\nlr_min = {:?}\nseed = {}", t.lr_max, t.lr_min, t.seed);
        let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(s, "grad_clip = {:?}", t.grad_clip.unwrap_or(0.0));
        let _ = writeln!(s, "lambda_region = {:?}", t.loss.region);
        let _ = writeln!(s, "lambda_distance = {:?}", t.loss.distance);
        let _ = writeln!(s, "lambda_boundary = {:?}", t.loss.boundary);
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "hflip = {:?}\nvflip = {:?}", d.augment.hflip, d.augment.vflip);
        let _ = writeln!(s, "max_rotation = {:?}", d.augment.max_rotation_deg);
        let _ = writeln!(s, "multi_scale = {}", d.multi_scale);
        let _ = writeln!(s, "train_split = {}\neval_split = {}", d.train_split, d.eval_split);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esdm::DecodingFlow;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_ini()).unwrap(), c);
    }

    #[test]
    fn overrides_apply() {
        let c = Config::parse(
            "[network]\nembed = 32\nflow = parallel\nencoder_widths = 8,8,16,16,32\n[train]\ngrad_clip = 1.5\n",
        )
        .unwrap();
        assert_eq!(c.network.embed, 32);
        assert_eq!(c.network.flow, DecodingFlow::Parallel);
        assert_eq!(c.network.widths, [8, 8, 16, 16, 32]);
        assert_eq!(c.train.grad_clip, Some(1.5));
        assert_eq!(Config::parse(&c.to_ini()).unwrap(), c);
    }

    #[test]
    fn typos_are_rejected() {
        for bad in ["[network]\nembd = 3\n", "[netwrk]\nembed = 3\n", "embed = 3\n", "[train]\nepochs = -1\n"] {
            assert!(matches!(Config::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
