use std::f64::consts::PI;

use madgnet::mfmsa::{param_count, MfmsaBlock, MfmsaConfig};
use madgnet::selfcheck::mssa_collapse;
use madgnet::tensor::{ParamStore, Tape};
use madgnet::{Error, Shape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> MfmsaConfig {
    MfmsaConfig {
        channels: 8,
        min_channels: 4,
        reduction: 2,
        frequencies: 6,
        min_height: 2,
        min_width: 2,
        ..MfmsaConfig::default()
    }
}

fn randomise(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let s = store.get(id).shape();
        store.set(id, Tensor::randn(s, 0.5, &mut rng)).unwrap();
    }
}

fn weight_count(store: &ParamStore, prefix: &str) -> usize {
    ["decompose.weight", "fc1.weight", "fc2.weight", "foreground.weight", "restore.weight"]
        .iter()
        .map(|n| store.get(store.find(&format!("{prefix}.{n}")).unwrap()).numel())
        .sum()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `W` `(out, in, 1, 1)` times `z`.
fn matvec(w: &Tensor, z: &[f64]) -> Vec<f64> {
    let s = w.shape();
    (0..s.n).map(|o| (0..s.c).map(|i| w.at(o, i, 0, 0) * z[i]).sum()).collect()
}

#[test]
fn channel_attention_matches_straight_line_oracle() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let block = MfmsaBlock::new(&mut store, "b", &cfg, &mut rng).unwrap();
    randomise(&mut store, 2);
    for b in &block.branches {
        let (h, w) = (8 >> (b.scale - 1), 6);
        let xs = Tensor::randn(Shape::new(2, b.channels, h, w), 1.0, &mut rng);
        let basis = block.basis(h, w).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let (got, att) = block.mfca(b, tape.constant(xs.clone()), &basis, &p).unwrap();
        let w1 = store.get(b.fc1.weight);
        let w2 = store.get(b.fc2.weight);
        for n in 0..2 {
            let coeffs: Vec<Vec<f64>> = (0..b.channels)
                .map(|c| {
                    basis
                        .scaled
                        .iter()
                        .map(|&(u, v)| {
                            let plane = xs.plane(n, c);
                            let mut s = 0.0;
                            for i in 0..h {
                                for j in 0..w {
                                    s += plane[i * w + j]
                                        * (PI * u as f64 * (i as f64 + 0.5) / h as f64).cos()
                                        * (PI * v as f64 * (j as f64 + 0.5) / w as f64).cos();
                                }
                            }
                            s
                        })
                        .collect()
                })
                .collect();
            let k = basis.scaled.len() as f64;
            let stats: [Vec<f64>; 3] = [
                coeffs.iter().map(|v| v.iter().sum::<f64>() / k).collect(),
                coeffs.iter().map(|v| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect(),
                coeffs.iter().map(|v| v.iter().cloned().fold(f64::INFINITY, f64::min)).collect(),
            ];
            let mut logits = vec![0.0; b.channels];
            for z in &stats {
                let hidden: Vec<f64> = matvec(w1, z).into_iter().map(|v| v.max(0.0)).collect();
                for (l, o) in logits.iter_mut().zip(matvec(w2, &hidden)) {
                    *l += o;
                }
            }
            for c in 0..b.channels {
                let m = sigmoid(logits[c]);
                let a = att.value().at(n, c, 0, 0);
                assert!(a > 0.0 && a < 1.0);
                assert!((a - m).abs() < 1e-12, "attention {a} vs {m}");
                for (i, &v) in xs.plane(n, c).iter().enumerate() {
                    let d = (got.value().plane(n, c)[i] - v * m).abs();
                    assert!(d < 1e-12, "branch {} channel {c}: {d}", b.scale);
                }
            }
        }
    }
}

#[test]
fn forced_unit_attention_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let x = tape.constant(Tensor::randn(Shape::new(1, 8, 6, 6), 1.0, &mut rng));
    let ones = tape.constant(Tensor::ones(Shape::new(1, 8, 1, 1)));
    assert_eq!(*x.mul_channelwise(ones).unwrap().value(), *x.value());
}

#[test]
fn foreground_and_background_sum_to_one() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = MfmsaBlock::new(&mut store, "b", &cfg, &mut rng).unwrap();
    randomise(&mut store, 5);
    let b = &block.branches[0];
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let x = tape.constant(Tensor::randn(Shape::new(2, b.channels, 8, 8), 3.0, &mut rng));
    let f = b.foreground.forward(x, &p).unwrap().sigmoid();
    let total = f.add(f.one_minus()).unwrap();
    assert!(total.value().data().iter().all(|&v| v == 1.0));
}

#[test]
fn flow_scalars_collapse() {
    for seed in 0..3 {
        let d = mssa_collapse(20, seed).unwrap();
        assert!(d < 1e-12, "seed {seed}: {d}");
    }
}

#[test]
fn single_scale_is_residual_plus_branch() {
    let cfg = MfmsaConfig {
        scales: 1,
        ..small_cfg()
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let block = MfmsaBlock::new(&mut store, "b", &cfg, &mut rng).unwrap();
    randomise(&mut store, 7);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let x = tape.constant(Tensor::randn(Shape::new(1, 8, 8, 8), 1.0, &mut rng));
    let b = &block.branches[0];
    let xs = b.decompose.forward(x, &p).unwrap();
    let basis = block.basis(8, 8).unwrap();
    let (x_hat, _) = block.mfca(b, xs, &basis, &p).unwrap();
    let manual = x.add(block.mssa(b, x_hat, &p).unwrap()).unwrap();
    assert_eq!(*block.forward(x, &p).unwrap().value(), *manual.value());
}

#[test]
fn zero_restore_returns_the_input() {
    let cfg = small_cfg();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let block = MfmsaBlock::new(&mut store, "b", &cfg, &mut rng).unwrap();
    randomise(&mut store, 9);
    for b in &block.branches {
        let s = store.get(b.restore.weight).shape();
        store.set(b.restore.weight, Tensor::zeros(s)).unwrap();
        if let Some(bias) = b.restore.bias {
            let s = store.get(bias).shape();
            store.set(bias, Tensor::zeros(s)).unwrap();
        }
    }
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let x = tape.constant(Tensor::randn(Shape::new(2, 8, 16, 16), 1.0, &mut rng));
    assert_eq!(*block.forward(x, &p).unwrap().value(), *x.value());
}

#[test]
fn reference_census() {
    let cfg = MfmsaConfig {
        min_channels: 8,
        ..MfmsaConfig::default()
    };
    let c = param_count(&cfg).unwrap();
    let counted: Vec<usize> = c.branches.iter().map(|b| b.counted).collect();
    assert_eq!(counted, vec![74304, 37024, 64 / 4 * (18 * 64 + 16 * 2 / 16 + 1)]);
    assert_eq!(c.reference, 74304.0);
    assert_eq!(c.branches[0].ratio, 1.0);
    assert!((c.branches[1].ratio - 37024.0 / 74304.0).abs() < 1e-15);
    assert!((c.branches[1].counted as f64 / c.branches[0].counted as f64 / 0.5 - 1.0).abs() <= 0.02);
    assert_eq!(c.gamma_sum, 1.75);
    assert_eq!(c.geometric, 1.75);
}

#[test]
fn default_floor_clamps_the_third_branch() {
    let cfg = MfmsaConfig::default();
    let chans: Vec<usize> = (1..=3).map(|s| cfg.branch_channels(s)).collect();
    assert_eq!(chans, vec![64, 32, 32]);
    let dims: Vec<(usize, usize)> = (1..=3).map(|s| cfg.branch_dims(s, 32, 32)).collect();
    assert_eq!(dims, vec![(32, 32), (16, 16), (8, 8)]);
}

#[test]
fn invalid_configs() {
    for cfg in [
        MfmsaConfig { gamma: 1.0, ..MfmsaConfig::default() },
        MfmsaConfig { scales: 0, ..MfmsaConfig::default() },
        MfmsaConfig { reduction: 0, ..MfmsaConfig::default() },
        MfmsaConfig { channels: 16, ..MfmsaConfig::default() },
    ] {
        assert!(param_count(&cfg).is_err(), "{cfg:?}");
    }
    let k0 = MfmsaConfig { frequencies: 0, ..MfmsaConfig::default() };
    assert!(matches!(param_count(&k0), Err(Error::Config(_))));
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = MfmsaBlock::new(&mut store, "b", &small_cfg(), &mut rng).unwrap();
    let mut empty = block.basis(4, 4).unwrap();
    empty.scaled.clear();
    empty.images = Tensor::zeros(Shape::new(0, 1, 4, 4));
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let x = tape.constant(Tensor::zeros(Shape::new(1, 8, 4, 4)));
    assert!(matches!(block.mfca(&block.branches[0], x, &empty, &p), Err(Error::Contract(_))));
}

#[test]
fn output_shape_is_preserved() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let block = MfmsaBlock::new(&mut store, "b", &MfmsaConfig::default(), &mut rng).unwrap();
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let x = tape.constant(Tensor::randn(Shape::new(2, 64, 32, 32), 1.0, &mut rng));
    assert_eq!(block.forward(x, &p).unwrap().shape(), Shape::new(2, 64, 32, 32));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn census_counts_allocated_weights(
        c8 in 1usize..=12, r in prop::sample::select(vec![1usize, 2, 4, 8, 16]),
        gamma in prop::sample::select(vec![0.25f64, 0.5, 0.75]),
        scales in 1usize..=4, floor in 1usize..=8,
    ) {
        let channels = 8 * c8;
        let cfg = MfmsaConfig {
            channels,
            reduction: r,
            gamma,
            scales,
            min_channels: floor.min(channels),
            frequencies: 4,
            ..MfmsaConfig::default()
        };
        let census = param_count(&cfg).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = MfmsaBlock::new(&mut store, "x", &cfg, &mut rng).unwrap();
        let mut gsum = 0.0;
        for (b, n) in block.branches.iter().zip(&census.branches) {
            let cs = b.channels;
            let hidden = (cs / r).max(1);
            let direct = weight_count(&store, &format!("x.branch{}", b.scale));
            prop_assert_eq!(n.counted, direct);
            prop_assert_eq!(direct, 18 * channels * cs + 2 * cs * hidden + cs);
            let ideal = channels as f64 * gamma.powi(b.scale as i32 - 1);
            if ideal.fract() == 0.0 && ideal as usize == cs && cs % r == 0 {
                prop_assert_eq!(n.counted as f64, n.closed_form);
            }
            gsum += gamma.powi(b.scale as i32 - 1);
        }
        prop_assert_eq!(census.gamma_sum, gsum);
        prop_assert!((census.geometric - (1.0 - gamma.powi(scales as i32)) / (1.0 - gamma)).abs() < 1e-15);
    }
}
