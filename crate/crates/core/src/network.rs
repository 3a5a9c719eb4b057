//! MADGNet-mini: a plain five-stage CNN encoder, four decoder stages of
//! fusion + MFMSA, and E-SDM heads on every supervised stage.
//!
//! Shapes for an `H0 x W0` input: `f_i` sits at `H0 / 2^i`, `Y_0` is a 1x1
//! projection of `f_5`, and decoder stage `i` runs at `H0 / 2^(5-i)`.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::esdm::{decode_stage, DecodingFlow, StageSpec, TaskBundle, TaskHeads};
use crate::mfmsa::{MfmsaBlock, MfmsaConfig};
use crate::nn::Conv2d;
use crate::tensor::{Bound, ParamStore, Shape, Tape, Tensor, Var};

pub const ENCODER_STAGES: usize = 5;
pub const DECODER_STAGES: usize = 4;
pub const IN_CHANNELS: usize = 3;

/// Supervised tasks in head order: region first, then distance, then boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Region,
    Distance,
    Boundary,
}

impl Task {
    pub const ORDER: [Task; 3] = [Task::Region, Task::Distance, Task::Boundary];

    pub fn name(self) -> &'static str {
        match self {
            Task::Region => "region",
            Task::Distance => "distance",
            Task::Boundary => "boundary",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub height: usize,
    pub width: usize,
    pub widths: [usize; ENCODER_STAGES],
    /// `C_e`, the decoder width.
    pub embed: usize,
    /// Block hyperparameters; `channels` is overwritten with `embed`.
    pub mfmsa: MfmsaConfig,
    /// Number of sub-tasks `L` (0, 1 or 2).
    pub sub_tasks: usize,
    /// Number of labels `M`.
    pub labels: usize,
    pub flow: DecodingFlow,
    pub deep_supervision: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            height: 64,
            width: 64,
            widths: [16, 32, 64, 128, 256],
            embed: 64,
            mfmsa: MfmsaConfig::default(),
            sub_tasks: 2,
            labels: 1,
            flow: DecodingFlow::Ensemble,
            deep_supervision: true,
        }
    }
}

impl NetworkConfig {
    /// A 32x32 network small enough for finite-difference checks.
    pub fn mini() -> Self {
        NetworkConfig {
            height: 32,
            width: 32,
            widths: [4, 4, 8, 8, 8],
            embed: 8,
            mfmsa: MfmsaConfig {
                frequencies: 4,
                reduction: 4,
                min_channels: 4,
                min_height: 2,
                min_width: 2,
                ..MfmsaConfig::default()
            },
            ..NetworkConfig::default()
        }
    }

    pub fn block_config(&self) -> MfmsaConfig {
        MfmsaConfig {
            channels: self.embed,
            ..self.mfmsa.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return bad(format!(
                "input size {}x{} must be a positive multiple of 32",
                self.height, self.width
            ));
        }
        if self.widths.iter().any(|&c| c == 0) {
            return bad("encoder widths must be positive".into());
        }
        if self.embed < self.mfmsa.min_channels {
            return bad(format!(
                "embed width {} is below min_channels {}",
                self.embed, self.mfmsa.min_channels
            ));
        }
        if self.sub_tasks >= Task::ORDER.len() {
            return bad(format!("sub_tasks = {} but only 0..=2 are defined", self.sub_tasks));
        }
        if self.labels == 0 {
            return bad("labels must be >= 1".into());
        }
        self.block_config().validate()
    }

    /// Decoder stages that carry heads and losses.
    pub fn emitted_stages(&self) -> Vec<usize> {
        if self.deep_supervision {
            (1..=DECODER_STAGES).collect()
        } else {
            vec![DECODER_STAGES]
        }
    }

    /// Tasks supervised per label, in head order.
    pub fn tasks(&self) -> &'static [Task] {
        &Task::ORDER[..=self.sub_tasks]
    }

    /// Side length divisor of decoder stage `i`.
    pub fn stage_stride(stage: usize) -> usize {
        1 << (ENCODER_STAGES - stage)
    }

    /// Any 3-channel input whose sides are positive multiples of 32.
    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != IN_CHANNELS || s.h == 0 || s.w == 0 || s.h % 32 != 0 || s.w % 32 != 0 {
            return Err(Error::dim(
                "network input",
                format!("expected (N, {IN_CHANNELS}, 32a, 32b), got {s}"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    first: Conv2d,
    second: Conv2d,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    lateral: Conv2d,
    fuse: Conv2d,
    block: MfmsaBlock,
    /// One head chain per label; empty when the stage is not supervised.
    heads: Vec<TaskHeads>,
}

/// Network topology. Weights live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Madgnet {
    pub cfg: NetworkConfig,
    encoder: Vec<EncoderStage>,
    y0: Conv2d,
    decoder: Vec<DecoderStage>,
    signature: Vec<(String, Shape)>,
}

/// Output of one supervised decoder stage.
#[derive(Clone, Debug)]
pub struct StagePrediction<'t> {
    pub stage: usize,
    /// One bundle per label.
    pub labels: Vec<TaskBundle<'t>>,
}

impl Madgnet {
    /// Register every parameter in `store` and return the topology.
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let before = store.len();
        let mut encoder = Vec::with_capacity(ENCODER_STAGES);
        let mut c_in = IN_CHANNELS;
        for (i, &c) in cfg.widths.iter().enumerate() {
            let n = format!("enc{}", i + 1);
            encoder.push(EncoderStage {
                first: Conv2d::new(store, &format!("{n}.conv1"), c_in, c, 3, 1, rng),
                second: Conv2d::new(store, &format!("{n}.conv2"), c, c, 3, 1, rng),
            });
            c_in = c;
        }
        let ce = cfg.embed;
        let y0 = Conv2d::new(store, "dec0.project", cfg.widths[ENCODER_STAGES - 1], ce, 1, 1, rng);
        let emitted = cfg.emitted_stages();
        let block_cfg = cfg.block_config();
        let mut decoder = Vec::with_capacity(DECODER_STAGES);
        for i in 1..=DECODER_STAGES {
            let n = format!("dec{i}");
            let skip = cfg.widths[ENCODER_STAGES - 1 - i];
            let lateral = Conv2d::new(store, &format!("{n}.lateral"), skip, ce, 1, 1, rng);
            let fuse = Conv2d::new(store, &format!("{n}.fuse"), 2 * ce, ce, 1, 1, rng);
            let block = MfmsaBlock::new(store, &format!("{n}.mfmsa"), &block_cfg, rng)?;
            let heads = if emitted.contains(&i) {
                (0..cfg.labels)
                    .map(|m| TaskHeads::new(store, &format!("{n}.label{m}"), ce, cfg.sub_tasks, rng))
                    .collect()
            } else {
                Vec::new()
            };
            decoder.push(DecoderStage {
                lateral,
                fuse,
                block,
                heads,
            });
        }
        let signature = store
            .iter()
            .skip(before)
            .map(|(name, t)| (name.to_string(), t.shape()))
            .collect();
        Ok(Madgnet {
            cfg: cfg.clone(),
            encoder,
            y0,
            decoder,
            signature,
        })
    }

    /// Fresh topology and weights from a seed.
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<(Self, ParamStore)> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Madgnet::new(cfg, &mut store, &mut rng)?;
        Ok((net, store))
    }

    /// Parameter names and shapes in registration order.
    pub fn signature(&self) -> &[(String, Shape)] {
        &self.signature
    }

    /// A store is usable when it holds exactly this network's parameters.
    pub fn check_store(&self, store: &ParamStore) -> Result<()> {
        if store.is_empty() {
            return Err(Error::State("no parameters loaded".into()));
        }
        if store.len() != self.signature.len() {
            return Err(Error::State(format!(
                "parameter store holds {} arrays, network expects {}",
                store.len(),
                self.signature.len()
            )));
        }
        for ((name, t), (want, shape)) in store.iter().zip(&self.signature) {
            if name != want || t.shape() != *shape {
                return Err(Error::State(format!(
                    "parameter {name} {} does not match expected {want} {shape}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Encoder features `f_1..f_5`.
    pub fn encode<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Vec<Var<'t>>> {
        self.cfg.check_input(x.shape())?;
        let mode = self.cfg.mfmsa.resample;
        let mut feats = Vec::with_capacity(ENCODER_STAGES);
        let mut h = x;
        for stage in &self.encoder {
            h = stage.first.forward(h, p)?.relu();
            h = stage.second.forward(h, p)?.relu();
            let s = h.shape();
            h = h.resample(s.h / 2, s.w / 2, mode)?;
            feats.push(h);
        }
        Ok(feats)
    }

    /// Decoder chain over encoder features; returns supervised stages only.
    pub fn decode<'t>(&self, feats: &[Var<'t>], p: &Bound<'t>) -> Result<Vec<StagePrediction<'t>>> {
        if feats.len() != ENCODER_STAGES {
            return Err(Error::Contract(format!(
                "decoder needs {ENCODER_STAGES} encoder features, got {}",
                feats.len()
            )));
        }
        let mode = self.cfg.mfmsa.resample;
        let full_h = 2 * feats[0].shape().h;
        let mut y = self.y0.forward(feats[ENCODER_STAGES - 1], p)?;
        let mut out = Vec::new();
        for (idx, stage) in self.decoder.iter().enumerate() {
            let i = idx + 1;
            let skip = stage.lateral.forward(feats[ENCODER_STAGES - 1 - i], p)?;
            let s = skip.shape();
            let up = y.resample(s.h, s.w, mode)?;
            let fused = stage.fuse.forward(skip.concat_channels(up)?, p)?;
            y = stage.block.forward(fused, p)?;
            if stage.heads.is_empty() {
                continue;
            }
            let spec = StageSpec {
                stage: i,
                upscale: full_h / s.h,
                mode,
            };
            let labels = stage
                .heads
                .iter()
                .map(|h| decode_stage(self.cfg.flow, y, h, spec, p))
                .collect::<Result<Vec<_>>>()?;
            out.push(StagePrediction { stage: i, labels });
        }
        Ok(out)
    }

    pub fn forward<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Vec<StagePrediction<'t>>> {
        let feats = self.encode(x, p)?;
        self.decode(&feats, p)
    }

    /// Core logits of the last stage, one `(N, 1, H, W)` tensor per label.
    pub fn logits(&self, store: &ParamStore, image: &Tensor) -> Result<Vec<Tensor>> {
        self.check_store(store)?;
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(image.clone());
        let stages = self.forward(x, &p)?;
        let last = stages.last().expect("stage 4 is always supervised");
        Ok(last
            .labels
            .iter()
            .map(|b| Rc::try_unwrap(b.core().value()).unwrap_or_else(|rc| (*rc).clone()))
            .collect())
    }

    /// `σ(T^c)` of the last stage per label.
    pub fn probabilities(&self, store: &ParamStore, image: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self
            .logits(store, image)?
            .into_iter()
            .map(|t| t.map(crate::tensor::sigmoid))
            .collect())
    }

    /// Binary masks, `σ(T^c) >= 0.5`, i.e. logit `>= 0`.
    pub fn infer(&self, store: &ParamStore, image: &Tensor) -> Result<Vec<Tensor>> {
        Ok(self.logits(store, image)?.into_iter().map(|t| threshold_logits(&t)).collect())
    }
}

/// Foreground wherever the logit is `>= 0`.
pub fn threshold_logits(t: &Tensor) -> Tensor {
    t.map(|v| if v >= 0.0 { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> NetworkConfig {
        NetworkConfig::mini()
    }

    #[test]
    fn validation() {
        let mut cfg = tiny();
        cfg.height = 48;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny();
        cfg.embed = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny();
        cfg.sub_tasks = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shapes_through_the_chain() {
        let mut cfg = tiny();
        cfg.height = 64;
        cfg.width = 64;
        let (net, store) = Madgnet::init(&cfg, 1).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = tape.constant(Tensor::uniform(Shape::new(1, 3, 64, 64), 0.0, 1.0, &mut rng));
        let feats = net.encode(x, &p).unwrap();
        let sides: Vec<_> = feats.iter().map(|f| f.shape().h).collect();
        assert_eq!(sides, vec![32, 16, 8, 4, 2]);
        let stages = net.decode(&feats, &p).unwrap();
        assert_eq!(stages.len(), 4);
        for (k, st) in stages.iter().enumerate() {
            let b = &st.labels[0];
            assert_eq!(b.pseudo[0].shape().h, 4 << k);
            for t in &b.outputs {
                assert_eq!(t.shape(), Shape::new(1, 1, 64, 64));
            }
        }
    }

    #[test]
    fn heads_only_on_emitted_stages() {
        let mut cfg = tiny();
        cfg.deep_supervision = false;
        let (net, store) = Madgnet::init(&cfg, 2).unwrap();
        assert!(store.find("dec4.label0.head0.weight").is_some());
        assert!(store.find("dec1.label0.head0.weight").is_none());
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(Tensor::zeros(Shape::new(1, 3, 32, 32)));
        let stages = net.forward(x, &p).unwrap();
        assert_eq!(stages.len(), 1);
        assert_eq!(stages[0].stage, 4);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let (net, store) = Madgnet::init(&tiny(), 3).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(Tensor::zeros(Shape::new(2, 3, 32, 32)));
        for f in net.encode(x, &p).unwrap() {
            assert!(f.value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unloaded_store_is_a_state_error() {
        let (net, store) = Madgnet::init(&tiny(), 4).unwrap();
        let img = Tensor::zeros(Shape::new(1, 3, 32, 32));
        assert!(matches!(net.infer(&ParamStore::new(), &img), Err(Error::State(_))));
        let (_, other) = Madgnet::init(&NetworkConfig { embed: 16, ..tiny() }, 4).unwrap();
        assert!(matches!(net.infer(&other, &img), Err(Error::State(_))));
        let masks = net.infer(&store, &img).unwrap();
        assert_eq!(masks[0].shape(), Shape::new(1, 1, 32, 32));
    }

    #[test]
    fn threshold_rule() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-10.0, 0.0, 10.0]).unwrap();
        assert_eq!(threshold_logits(&t).data(), &[0.0, 1.0, 1.0]);
    }
}
