//! Ensemble sub-decoding: chained task heads and summed upsampled logits.
//!
//! Head `l` sees the stage features gated by the sigmoid of head `l - 1`
//! (the forward stream). The final prediction for task `l` is its own
//! upsampled logits plus the final prediction of task `l + 1` (the backward
//! stream), so the core output is the sum of every task's upsampled logits.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::tensor::{Bound, ParamStore, ResampleMode, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum DecodingFlow {
    /// Forward and backward stream.
    #[default]
    Ensemble,
    /// Every head reads the stage features directly; no summation.
    Parallel,
    /// Forward stream only.
    ForwardOnly,
}

impl FromStr for DecodingFlow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(DecodingFlow::Ensemble),
            "parallel" => Ok(DecodingFlow::Parallel),
            "forward_only" => Ok(DecodingFlow::ForwardOnly),
            other => Err(Error::Config(format!(
                "unknown decoding flow {other:?} (expected ensemble, parallel or forward_only)"
            ))),
        }
    }
}

impl fmt::Display for DecodingFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodingFlow::Ensemble => "ensemble",
            DecodingFlow::Parallel => "parallel",
            DecodingFlow::ForwardOnly => "forward_only",
        })
    }
}

/// `L + 1` one-channel 1x1 heads; index 0 is the core task.
#[derive(Clone, Debug)]
pub struct TaskHeads {
    pub heads: Vec<Conv2d>,
}

impl TaskHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        sub_tasks: usize,
        rng: &mut R,
    ) -> Self {
        let heads = (0..=sub_tasks)
            .map(|l| Conv2d::new(store, &format!("{name}.head{l}"), channels, 1, 1, 1, rng))
            .collect();
        TaskHeads { heads }
    }

    /// Number of sub-tasks `L`.
    pub fn sub_tasks(&self) -> usize {
        self.heads.len() - 1
    }
}

/// Predictions of one decoder stage for one label.
#[derive(Clone, Debug)]
pub struct TaskBundle<'t> {
    pub stage: usize,
    /// `P^{s_l}` at stage resolution, logits, one channel each.
    pub pseudo: Vec<Var<'t>>,
    /// `T^{s_l}` at output resolution; `outputs[0]` is the core prediction.
    pub outputs: Vec<Var<'t>>,
}

impl<'t> TaskBundle<'t> {
    pub fn core(&self) -> Var<'t> {
        self.outputs[0]
    }
}

/// Shared inputs of every decoding variant.
#[derive(Clone, Copy, Debug)]
pub struct StageSpec {
    pub stage: usize,
    /// Integer upsampling factor from stage to output resolution.
    pub upscale: usize,
    pub mode: ResampleMode,
}

impl StageSpec {
    fn up<'t>(&self, p: Var<'t>) -> Result<Var<'t>> {
        let s = p.shape();
        p.resample(s.h * self.upscale, s.w * self.upscale, self.mode)
    }

    fn check(&self, heads: &TaskHeads) -> Result<()> {
        if self.upscale == 0 {
            return Err(Error::Contract("upscale factor must be >= 1".into()));
        }
        if heads.heads.is_empty() {
            return Err(Error::Contract("at least the core head is required".into()));
        }
        Ok(())
    }
}

/// Forward stream: `P^c = head_0(Y)`, `P^{s_l} = head_l(Y * σ(P^{s_{l-1}}))`.
fn forward_stream<'t>(y: Var<'t>, heads: &TaskHeads, p: &Bound<'t>) -> Result<Vec<Var<'t>>> {
    let mut pseudo: Vec<Var<'t>> = Vec::with_capacity(heads.heads.len());
    for (l, head) in heads.heads.iter().enumerate() {
        let input = if l == 0 {
            y
        } else {
            y.mul_spatial(pseudo[l - 1].sigmoid())?
        };
        pseudo.push(head.forward(input, p)?);
    }
    Ok(pseudo)
}

pub fn esdm_forward<'t>(
    y: Var<'t>,
    heads: &TaskHeads,
    spec: StageSpec,
    p: &Bound<'t>,
) -> Result<TaskBundle<'t>> {
    spec.check(heads)?;
    let pseudo = forward_stream(y, heads, p)?;
    let mut outputs: Vec<Var<'t>> = Vec::with_capacity(pseudo.len());
    // T^{s_L} = Up(P^{s_L}); T^{s_l} = Up(P^{s_l}) + T^{s_{l+1}}
    for (i, &pl) in pseudo.iter().enumerate().rev() {
        let up = spec.up(pl)?;
        let t = if i + 1 == pseudo.len() {
            up
        } else {
            up.add(*outputs.last().expect("later task computed first"))?
        };
        outputs.push(t);
    }
    outputs.reverse();
    Ok(TaskBundle {
        stage: spec.stage,
        pseudo,
        outputs,
    })
}

pub fn esdm_forward_only<'t>(
    y: Var<'t>,
    heads: &TaskHeads,
    spec: StageSpec,
    p: &Bound<'t>,
) -> Result<TaskBundle<'t>> {
    spec.check(heads)?;
    let pseudo = forward_stream(y, heads, p)?;
    let outputs = pseudo.iter().map(|&pl| spec.up(pl)).collect::<Result<_>>()?;
    Ok(TaskBundle {
        stage: spec.stage,
        pseudo,
        outputs,
    })
}

pub fn esdm_parallel<'t>(
    y: Var<'t>,
    heads: &TaskHeads,
    spec: StageSpec,
    p: &Bound<'t>,
) -> Result<TaskBundle<'t>> {
    spec.check(heads)?;
    let pseudo: Vec<Var<'t>> = heads
        .heads
        .iter()
        .map(|h| h.forward(y, p))
        .collect::<Result<_>>()?;
    let outputs = pseudo.iter().map(|&pl| spec.up(pl)).collect::<Result<_>>()?;
    Ok(TaskBundle {
        stage: spec.stage,
        pseudo,
        outputs,
    })
}

pub fn decode_stage<'t>(
    flow: DecodingFlow,
    y: Var<'t>,
    heads: &TaskHeads,
    spec: StageSpec,
    p: &Bound<'t>,
) -> Result<TaskBundle<'t>> {
    match flow {
        DecodingFlow::Ensemble => esdm_forward(y, heads, spec, p),
        DecodingFlow::Parallel => esdm_parallel(y, heads, spec, p),
        DecodingFlow::ForwardOnly => esdm_forward_only(y, heads, spec, p),
    }
}

/// One independent head chain per label, all reading the same features.
pub fn esdm_multilabel<'t>(
    flow: DecodingFlow,
    y: Var<'t>,
    label_heads: &[TaskHeads],
    spec: StageSpec,
    p: &Bound<'t>,
) -> Result<Vec<TaskBundle<'t>>> {
    if label_heads.is_empty() {
        return Err(Error::Contract("multi-label decoding needs M >= 1".into()));
    }
    label_heads
        .iter()
        .map(|h| decode_stage(flow, y, h, spec, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(upscale: usize) -> StageSpec {
        StageSpec {
            stage: 1,
            upscale,
            mode: ResampleMode::Bilinear,
        }
    }

    /// Heads whose weights are zero and whose bias is `consts[l]`.
    fn constant_heads(store: &mut ParamStore, name: &str, c: usize, consts: &[f64]) -> TaskHeads {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let heads = TaskHeads::new(store, name, c, consts.len() - 1, &mut rng);
        for (h, &v) in heads.heads.iter().zip(consts) {
            let w = store.get(h.weight).shape();
            store.set(h.weight, Tensor::zeros(w)).unwrap();
            store.set(h.bias.unwrap(), Tensor::scalar(v)).unwrap();
        }
        heads
    }

    fn run(flow: DecodingFlow, store: &ParamStore, heads: &TaskHeads, y: &Tensor, up: usize) -> Vec<Tensor> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let yv = tape.constant(y.clone());
        let b = decode_stage(flow, yv, heads, spec(up), &p).unwrap();
        b.outputs.iter().map(|t| (*t.value()).clone()).collect()
    }

    #[test]
    fn constant_chain() {
        let mut store = ParamStore::new();
        let heads = constant_heads(&mut store, "h", 3, &[0.1, 0.2, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = Tensor::randn(Shape::new(1, 3, 4, 4), 1.0, &mut rng);
        let ens = run(DecodingFlow::Ensemble, &store, &heads, &y, 4);
        assert_eq!(ens[0].shape(), Shape::new(1, 1, 16, 16));
        assert!(ens[0].data().iter().all(|&v| v == 0.1 + (0.2 + 0.3)));
        assert!((ens[0].data()[0] - 0.6).abs() < 1e-15);
        let fwd = run(DecodingFlow::ForwardOnly, &store, &heads, &y, 4);
        assert!(fwd[0].data().iter().all(|&v| v == 0.1));
        assert_eq!(fwd[2], ens[2]);
    }

    #[test]
    fn variants_agree_without_sub_tasks() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let heads = TaskHeads::new(&mut store, "h", 4, 0, &mut rng);
        let y = Tensor::randn(Shape::new(2, 4, 3, 5), 1.0, &mut rng);
        let a = run(DecodingFlow::Ensemble, &store, &heads, &y, 2);
        let b = run(DecodingFlow::Parallel, &store, &heads, &y, 2);
        let c = run(DecodingFlow::ForwardOnly, &store, &heads, &y, 2);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn identical_parallel_heads_agree() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let heads = TaskHeads::new(&mut store, "h", 4, 2, &mut rng);
        let w = store.get(heads.heads[0].weight).clone();
        for h in &heads.heads[1..] {
            store.set(h.weight, w.clone()).unwrap();
        }
        let y = Tensor::randn(Shape::new(1, 4, 4, 4), 1.0, &mut rng);
        let out = run(DecodingFlow::Parallel, &store, &heads, &y, 2);
        assert_eq!(out[0], out[1]);
        assert_eq!(out[1], out[2]);
        let ens = run(DecodingFlow::Ensemble, &store, &heads, &y, 2);
        assert!(ens[0].max_abs_diff(&out[0]).unwrap() > 0.0);
    }

    #[test]
    fn multilabel_single_label_matches() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let heads = TaskHeads::new(&mut store, "h", 4, 2, &mut rng);
        let zeroed = constant_heads(&mut store, "z", 4, &[0.0, 0.0, 0.0]);
        let y = Tensor::randn(Shape::new(1, 4, 4, 4), 1.0, &mut rng);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let yv = tape.constant(y);
        let single = esdm_forward(yv, &heads, spec(2), &p).unwrap();
        let multi = esdm_multilabel(DecodingFlow::Ensemble, yv, &[heads.clone(), zeroed], spec(2), &p).unwrap();
        assert_eq!(*multi[0].core().value(), *single.core().value());
        assert!(multi[1].core().value().data().iter().all(|&v| v == 0.0));
        assert!(esdm_multilabel(DecodingFlow::Ensemble, yv, &[], spec(2), &p).is_err());
    }

    #[test]
    fn flow_names_round_trip() {
        for f in [DecodingFlow::Ensemble, DecodingFlow::Parallel, DecodingFlow::ForwardOnly] {
            assert_eq!(f.to_string().parse::<DecodingFlow>().unwrap(), f);
        }
        assert!("both".parse::<DecodingFlow>().is_err());
    }
}
