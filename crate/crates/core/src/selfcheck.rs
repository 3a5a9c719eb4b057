//! Built-in identity and gradient suites behind `madgnet selfcheck`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::esdm::{esdm_forward, StageSpec, TaskHeads};
use crate::freq::{build_basis, dct_coefficients, select_frequencies, Strategy};
use crate::gradcheck;
use crate::losses::{total_loss, GroundTruth, LossWeights};
use crate::metrics::{evaluate_sample, MetricParams, Plane};
use crate::mfmsa::{param_count, MfmsaBlock, MfmsaConfig};
use crate::network::{Madgnet, NetworkConfig, ENCODER_STAGES};
use crate::nn::he_normal;
use crate::tensor::kernels::resample;
use crate::tensor::{ParamId, ParamStore, ResampleMode, Shape, Tape, Tensor};

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    SuiteResult {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Core prediction of the recursive stream against a left-to-right sum of
/// upsampled pseudo-predictions. Returns the number of mismatching trials.
pub fn ensemble_identity(trials: u64) -> Result<usize> {
    let mut bad = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stage = rng.gen_range(1..=4);
        let sub_tasks = rng.gen_range(0..=3);
        // a 64x64 input puts stage i at 2^(i+1) and upsamples by 2^(5-i)
        let side = 1usize << (stage + 1);
        let upscale = 1usize << (ENCODER_STAGES - stage);
        let mut store = ParamStore::new();
        let heads = TaskHeads::new(&mut store, "h", 4, sub_tasks, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            let s = store.get(id).shape();
            store.set(id, Tensor::randn(s, 1.0, &mut rng))?;
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let y = tape.constant(Tensor::randn(Shape::new(2, 4, side, side), 1.0, &mut rng));
        let spec = StageSpec {
            stage,
            upscale,
            mode: ResampleMode::Bilinear,
        };
        let b = esdm_forward(y, &heads, spec, &p)?;
        let mut acc: Option<Tensor> = None;
        for pl in b.pseudo.iter().rev() {
            let v = pl.value();
            let up = resample(&v, side * upscale, side * upscale, ResampleMode::Bilinear)?;
            acc = Some(match acc {
                None => up,
                Some(a) => up.zip_map(&a, |x, y| x + y)?,
            });
        }
        if *b.core().value() != acc.expect("at least one head") {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Largest `|projection - double sum|` over random planes.
pub fn dct_max_error(trials: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.gen_range(4..=16), rng.gen_range(4..=16));
        let freqs = select_frequencies(Strategy::Low, 16, (8, 8), None)?;
        let basis = build_basis(&freqs, h, w)?;
        let x = Tensor::randn(Shape::new(1, 2, h, w), 1.0, &mut rng);
        let tape = Tape::new();
        let got = dct_coefficients(tape.constant(x.clone()), &basis)?.value();
        for c in 0..2 {
            let plane = x.plane(0, c);
            for (k, &(u, v)) in basis.scaled.iter().enumerate() {
                let mut sum = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        let cu = (std::f64::consts::PI * u as f64 * (i as f64 + 0.5) / h as f64).cos();
                        let cv = (std::f64::consts::PI * v as f64 * (j as f64 + 0.5) / w as f64).cos();
                        sum += plane[i * w + j] * cu * cv;
                    }
                }
                worst = worst.max((got.at(0, c, k, 0) - sum).abs());
            }
        }
    }
    Ok(worst)
}

/// With `alpha = beta`, redraw the foreground convolution `draws` times and
/// return the largest output change.
pub fn mssa_collapse(draws: u64, seed: u64) -> Result<f64> {
    let cfg = MfmsaConfig {
        channels: 8,
        min_channels: 4,
        reduction: 4,
        frequencies: 4,
        min_height: 2,
        min_width: 2,
        ..MfmsaConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = MfmsaBlock::new(&mut store, "b", &cfg, &mut rng)?;
    for b in &block.branches {
        let a: f64 = rng.gen_range(0.2..2.0);
        store.set(b.alpha, Tensor::scalar(a))?;
        store.set(b.beta, Tensor::scalar(a))?;
    }
    let x = Tensor::randn(Shape::new(2, 8, 16, 16), 1.0, &mut rng);
    let eval = |store: &ParamStore| -> Result<Tensor> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let y = block.forward(tape.constant(x.clone()), &p)?;
        Ok((*y.value()).clone())
    };
    let reference = eval(&store)?;
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        for b in &block.branches {
            let w = b.foreground.weight;
            let s = store.get(w).shape();
            store.set(w, he_normal(s, &mut rng).map(|v| 3.0 * v))?;
            if let Some(bias) = b.foreground.bias {
                store.set(bias, Tensor::randn(Shape::new(1, 1, 1, 1), 1.0, &mut rng))?;
            }
        }
        worst = worst.max(eval(&store)?.max_abs_diff(&reference)?);
    }
    Ok(worst)
}

/// Random input and mask pair for the mini network.
pub fn mini_batch(cfg: &NetworkConfig, seed: u64) -> (Tensor, GroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(Shape::new(1, 3, cfg.height, cfg.width), 0.0, 1.0, &mut rng);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let (cy, cx, r) = (rng.gen_range(0.3..0.7) * h, rng.gen_range(0.3..0.7) * w, 0.25 * h);
    let mut m = Tensor::zeros(Shape::new(1, 1, cfg.height, cfg.width));
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            if (y as f64 + 0.5 - cy).hypot(x as f64 + 0.5 - cx) < r {
                m.set(0, 0, y, x, 1.0);
            }
        }
    }
    (x, GroundTruth::from_region(&m))
}

/// Pick at least `count` probes: one entry of every `alpha`/`beta` scalar,
/// MFCA MLP weight and head tensor, the rest uniformly at random.
pub fn choose_probes(store: &ParamStore, count: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    let mut probes: Vec<(ParamId, usize)> = ids
        .iter()
        .filter(|&&id| {
            let n = store.name(id);
            n.ends_with(".alpha")
                || n.ends_with(".beta")
                || n.ends_with(".fc1.weight")
                || n.ends_with(".fc2.weight")
                || n.contains(".head")
        })
        .map(|&id| (id, rng.gen_range(0..store.get(id).numel())))
        .collect();
    while probes.len() < count {
        let id = ids[rng.gen_range(0..ids.len())];
        probes.push((id, rng.gen_range(0..store.get(id).numel())));
    }
    probes
}

/// Full mini forward and total loss against central differences.
pub fn network_gradients(probes: usize, seed: u64) -> Result<Vec<gradcheck::Probe>> {
    let cfg = NetworkConfig::mini();
    let (net, mut store) = Madgnet::init(&cfg, seed)?;
    // move the flow scalars off 1 so their gradients are generic
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.name(id);
        if n.ends_with(".alpha") || n.ends_with(".beta") || n.ends_with(".bias") {
            let s = store.get(id).shape();
            store.set(id, Tensor::uniform(s, 0.5, 1.5, &mut rng))?;
        }
    }
    let (x, gt) = mini_batch(&cfg, seed);
    let lambda = LossWeights::default();
    let loss = gradcheck::loss_fn(|tape, p| {
        let stages = net.forward(tape.constant(x.clone()), p)?;
        total_loss(&stages, std::slice::from_ref(&gt), &lambda)
    });
    let chosen = choose_probes(&store, probes, seed);
    gradcheck::check(&store, &chosen, 1e-5, &loss)
}

/// Run every suite. `probes` sets the gradient-check sample size.
pub fn run_all(probes: usize) -> Vec<SuiteResult> {
    vec![
        run("ensemble identity", || {
            let bad = ensemble_identity(100)?;
            Ok((bad == 0, format!("{bad} of 100 trials differ")))
        }),
        run("parameter census", || {
            // C = 64, r = 16, gamma = 1/2 with every branch above the channel floor
            let c = param_count(&MfmsaConfig {
                min_channels: 8,
                ..MfmsaConfig::default()
            })?;
            let exact = c.branches.iter().all(|b| b.counted as f64 == b.closed_form);
            let q = c.branches[1].counted as f64 / c.branches[0].counted as f64;
            let ok = exact && (q / 0.5 - 1.0).abs() <= 0.02 && c.gamma_sum == 1.75;
            Ok((ok, format!("exact={exact} p2/p1={q:.4} sum gamma^(s-1)={}", c.gamma_sum)))
        }),
        run("dct projection", || {
            let e = dct_max_error(20)?;
            Ok((e < 1e-12, format!("max error {e:.2e}")))
        }),
        run("mssa collapse", || {
            let d = mssa_collapse(20, 3)?;
            Ok((d < 1e-12, format!("max change {d:.2e}")))
        }),
        run("ideal metrics", || {
            let mut m = vec![0.0; 64];
            m[10..30].fill(1.0);
            let p = Plane::new(8, 8, &m)?;
            let s = evaluate_sample(p, p, &MetricParams::default())?;
            let v = s.values();
            let ok = v[..5].iter().all(|&x| (x - 1.0).abs() < 1e-12) && v[5] == 0.0;
            Ok((ok, format!("{v:?}")))
        }),
        run("network gradients", || {
            let probes = network_gradients(probes, 11)?;
            let w = gradcheck::worst(&probes).expect("probes");
            let e = w.rel_error();
            Ok((
                e < 1e-6,
                format!("{} probes, worst {:.2e} at {}[{}]", probes.len(), e, w.name, w.index),
            ))
        }),
    ]
}
