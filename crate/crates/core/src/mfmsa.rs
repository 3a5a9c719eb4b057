//! Multi-frequency in multi-scale attention block.
//!
//! For every scale branch `s = 1..=S` the input `(N, C, H, W)` is
//! downsampled to `(H_s, W_s)` and reduced to `C_s` channels with a 3x3
//! convolution of dilation `s`. Channel attention comes from the min,
//! max and mean of `K` DCT coefficients per channel, pushed through a
//! shared two-layer bottleneck. Spatial attention splits the recalibrated
//! map into a foreground part `F = σ(conv1x1)` and a background part
//! `1 - F`, weighted by learnable scalars `alpha` and `beta`, before a 3x3
//! convolution restores `C` channels. Branch outputs are upsampled, averaged
//! and added back to the input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::freq::{self, DctBasis, FrequencySet, Strategy, BASE_GRID};
use crate::nn::{Conv2d, Linear};
use crate::tensor::{Bound, ParamId, ParamStore, PoolStat, ResampleMode, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MfmsaConfig {
    /// Number of scale branches `S`.
    pub scales: usize,
    /// Number of DCT frequencies `K`.
    pub frequencies: usize,
    /// Channel reduction between successive branches, in `(0, 1)`.
    pub gamma: f64,
    /// Bottleneck ratio `r` of the channel-attention MLP.
    pub reduction: usize,
    /// Block width `C`.
    pub channels: usize,
    pub min_channels: usize,
    pub min_height: usize,
    pub min_width: usize,
    pub strategy: Strategy,
    /// Ranking used by the `Top` strategy; `None` means the shipped table.
    pub top_table: Option<Vec<(usize, usize)>>,
    pub resample: ResampleMode,
}

impl Default for MfmsaConfig {
    fn default() -> Self {
        MfmsaConfig {
            scales: 3,
            frequencies: 16,
            gamma: 0.5,
            reduction: 16,
            channels: 64,
            min_channels: 32,
            min_height: 8,
            min_width: 8,
            strategy: Strategy::Top,
            top_table: None,
            resample: ResampleMode::Bilinear,
        }
    }
}

impl MfmsaConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.scales == 0 || self.frequencies == 0 || self.reduction == 0 {
            return fail("scales, frequencies and reduction must all be >= 1".into());
        }
        if self.min_channels == 0 || self.channels < self.min_channels {
            return fail(format!(
                "need channels >= min_channels >= 1, got {} and {}",
                self.channels, self.min_channels
            ));
        }
        if self.min_height == 0 || self.min_width == 0 {
            return fail("min_height and min_width must be >= 1".into());
        }
        Ok(())
    }

    /// `C_s = max(C * gamma^(s-1), C_min)`, with `s` counted from 1.
    pub fn branch_channels(&self, s: usize) -> usize {
        let raw = self.channels as f64 * self.gamma.powi(s as i32 - 1);
        ((raw + 1e-9).floor() as usize).max(self.min_channels)
    }

    /// Hidden width of the channel-attention MLP, `C_s / r` (at least 1).
    pub fn hidden_channels(&self, s: usize) -> usize {
        (self.branch_channels(s) / self.reduction).max(1)
    }

    /// `(H_s, W_s)`: halved per branch and clamped below at the minimum,
    /// but never larger than the input itself.
    pub fn branch_dims(&self, s: usize, h: usize, w: usize) -> (usize, usize) {
        let shift = s - 1;
        let hs = (h >> shift.min(63)).max(self.min_height.min(h));
        let ws = (w >> shift.min(63)).max(self.min_width.min(w));
        (hs, ws)
    }

    pub fn frequency_set(&self) -> Result<FrequencySet> {
        freq::select_frequencies(self.strategy, self.frequencies, BASE_GRID, self.top_table.as_deref())
    }
}

/// Parameters of one scale branch.
#[derive(Clone, Debug)]
pub struct Branch {
    pub scale: usize,
    pub channels: usize,
    pub decompose: Conv2d,
    pub fc1: Linear,
    pub fc2: Linear,
    pub foreground: Conv2d,
    pub restore: Conv2d,
    pub alpha: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct MfmsaBlock {
    pub cfg: MfmsaConfig,
    pub freqs: FrequencySet,
    pub branches: Vec<Branch>,
}

impl MfmsaBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &MfmsaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let freqs = cfg.frequency_set()?;
        let c = cfg.channels;
        let branches = (1..=cfg.scales)
            .map(|s| {
                let cs = cfg.branch_channels(s);
                let hidden = cfg.hidden_channels(s);
                let p = format!("{name}.branch{s}");
                Branch {
                    scale: s,
                    channels: cs,
                    decompose: Conv2d::new(store, &format!("{p}.decompose"), c, cs, 3, s, rng),
                    fc1: Linear::new(store, &format!("{p}.fc1"), cs, hidden, rng),
                    fc2: Linear::new(store, &format!("{p}.fc2"), hidden, cs, rng),
                    foreground: Conv2d::new(store, &format!("{p}.foreground"), cs, 1, 1, 1, rng),
                    restore: Conv2d::new(store, &format!("{p}.restore"), cs, c, 3, 1, rng),
                    alpha: store.add(format!("{p}.alpha"), Tensor::scalar(1.0)),
                    beta: store.add(format!("{p}.beta"), Tensor::scalar(1.0)),
                }
            })
            .collect();
        Ok(MfmsaBlock {
            cfg: cfg.clone(),
            freqs,
            branches,
        })
    }

    fn check_input(&self, x: &Var<'_>) -> Result<()> {
        let s = x.shape();
        if s.c != self.cfg.channels {
            return Err(Error::dim(
                "mfmsa",
                format!("C: block expects {} channels, input has {}", self.cfg.channels, s.c),
            ));
        }
        Ok(())
    }

    /// Branch feature maps `X^s`, each `(N, C_s, H_s, W_s)`.
    pub fn scale_decompose<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Vec<Var<'t>>> {
        self.check_input(&x)?;
        let s = x.shape();
        self.branches
            .iter()
            .map(|b| {
                let (hs, ws) = self.cfg.branch_dims(b.scale, s.h, s.w);
                let down = x.resample(hs, ws, self.cfg.resample)?;
                b.decompose.forward(down, p)
            })
            .collect()
    }

    pub fn basis(&self, height: usize, width: usize) -> Result<DctBasis> {
        freq::build_basis(&self.freqs, height, width)
    }

    /// Channel attention for one branch. Returns the recalibrated map and
    /// the `(N, C_s, 1, 1)` attention vector.
    pub fn mfca<'t>(
        &self,
        branch: &Branch,
        x: Var<'t>,
        basis: &DctBasis,
        p: &Bound<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if basis.scaled.is_empty() {
            return Err(Error::Contract("channel attention needs K >= 1".into()));
        }
        let coeffs = freq::dct_coefficients(x, basis)?;
        let mut logits: Option<Var<'t>> = None;
        for stat in [PoolStat::Avg, PoolStat::Max, PoolStat::Min] {
            let z = coeffs.global_pool(stat)?;
            let h = branch.fc1.forward(z, p)?.relu();
            let o = branch.fc2.forward(h, p)?;
            logits = Some(match logits {
                None => o,
                Some(acc) => acc.add(o)?,
            });
        }
        let attention = logits.expect("three statistics").sigmoid();
        Ok((x.mul_channelwise(attention)?, attention))
    }

    /// Foreground/background spatial attention followed by channel restore.
    pub fn mssa<'t>(&self, branch: &Branch, x_hat: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        let fg = branch.foreground.forward(x_hat, p)?.sigmoid();
        let bg = fg.one_minus();
        let fore = x_hat.mul_spatial(fg)?.mul_scalar(p.get(branch.alpha))?;
        let back = x_hat.mul_spatial(bg)?.mul_scalar(p.get(branch.beta))?;
        branch.restore.forward(fore.add(back)?, p)
    }

    /// Refined, channel-restored output of every branch at its own resolution.
    pub fn branch_outputs<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Vec<Var<'t>>> {
        let parts = self.scale_decompose(x, p)?;
        self.branches
            .iter()
            .zip(parts)
            .map(|(b, xs)| {
                let s = xs.shape();
                let basis = self.basis(s.h, s.w)?;
                let (x_hat, _) = self.mfca(b, xs, &basis, p)?;
                self.mssa(b, x_hat, p)
            })
            .collect()
    }

    /// `Y = X + mean_s Up(branch_s)`.
    pub fn forward<'t>(&self, x: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        let outs = self.branch_outputs(x, p)?;
        let count = outs.len();
        let mut acc: Option<Var<'t>> = None;
        for o in outs {
            let up = o.resample(s.h, s.w, self.cfg.resample)?;
            acc = Some(match acc {
                None => up,
                Some(a) => a.add(up)?,
            });
        }
        let agg = acc.expect("S >= 1").scale(1.0 / count as f64);
        x.add(agg)
    }
}

/// Parameter census of one branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchCount {
    pub scale: usize,
    pub channels: usize,
    /// Weight entries actually allocated (decomposition conv, both MLP
    /// layers, foreground conv, restore conv; biases and scalars excluded).
    pub counted: usize,
    /// `C g (18 C + C g 2 / r + 1)` with `g = gamma^(s-1)`.
    pub closed_form: f64,
    /// `closed_form / p`, where `p` is the closed form at `gamma = 1`.
    pub ratio: f64,
    pub gamma_pow: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCensus {
    pub branches: Vec<BranchCount>,
    /// `C (18 C + 2 C / r + 1)`.
    pub reference: f64,
    /// `sum_s p_s / p`.
    pub ratio_sum: f64,
    /// `sum_s gamma^(s-1)`, accumulated term by term.
    pub gamma_sum: f64,
    /// `(1 - gamma^S) / (1 - gamma)`.
    pub geometric: f64,
}

pub fn param_count(cfg: &MfmsaConfig) -> Result<ParamCensus> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let block = MfmsaBlock::new(&mut store, "census", cfg, &mut rng)?;
    let c = cfg.channels as f64;
    let r = cfg.reduction as f64;
    let reference = c * (18.0 * c + 2.0 * c / r + 1.0);
    let branches: Vec<BranchCount> = block
        .branches
        .iter()
        .map(|b| {
            let counted = [b.decompose.weight, b.fc1.weight, b.fc2.weight, b.foreground.weight, b.restore.weight]
                .iter()
                .map(|&id| store.get(id).numel())
                .sum();
            let g = cfg.gamma.powi(b.scale as i32 - 1);
            let cg = c * g;
            let closed_form = cg * (18.0 * c + cg * 2.0 / r + 1.0);
            BranchCount {
                scale: b.scale,
                channels: b.channels,
                counted,
                closed_form,
                ratio: closed_form / reference,
                gamma_pow: g,
            }
        })
        .collect();
    let ratio_sum = branches.iter().map(|b| b.ratio).sum();
    let gamma_sum = branches.iter().map(|b| b.gamma_pow).sum();
    let geometric = (1.0 - cfg.gamma.powi(cfg.scales as i32)) / (1.0 - cfg.gamma);
    Ok(ParamCensus {
        branches,
        reference,
        ratio_sum,
        gamma_sum,
        geometric,
    })
}
