use madgnet::losses::{
    boundary_loss, derive_boundary_plane, derive_distance_plane, distance_loss, region_loss_with_weights,
    region_weights, task_loss, total_loss, weight_window, weighted_region_loss, GroundTruth, LossWeights,
};
use madgnet::network::{Madgnet, NetworkConfig, Task};
use madgnet::selfcheck::mini_batch;
use madgnet::tensor::Tape;
use madgnet::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..h * w).map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 }).collect()
}

fn boundary_oracle(h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            g[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let eroded = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
                .iter()
                .map(|&(dy, dx)| at(y + dy, x + dx))
                .fold(1.0, f64::min);
            out[y as usize * w + x as usize] = at(y, x) - eroded;
        }
    }
    out
}

fn distance_oracle(h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let bg: Vec<(f64, f64)> = (0..h * w)
        .filter(|&i| g[i] < 0.5)
        .map(|i| ((i / w) as f64, (i % w) as f64))
        .collect();
    let raw: Vec<f64> = (0..h * w)
        .map(|i| {
            if g[i] < 0.5 {
                return 0.0;
            }
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            bg.iter().map(|&(by, bx)| (y - by).hypot(x - bx)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
}

fn weights_oracle(h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = weight_window(h, w) as isize;
    let r = k / 2;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        s += g[yy as usize * w + xx as usize];
                    }
                }
            }
            let i = y as usize * w + x as usize;
            out[i] = 1.0 + 5.0 * (s / (k * k) as f64 - g[i]).abs();
        }
    }
    out
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Per-sample weighted BCE and IoU, averaged over the batch.
fn region_oracle(t: &Tensor, g: &Tensor, w: &Tensor) -> f64 {
    let s = t.shape();
    let per = s.h * s.w;
    let mut total = 0.0;
    for n in 0..s.n {
        let (mut bce, mut wsum, mut inter, mut union) = (0.0, 0.0, 0.0, 0.0);
        for i in n * per..(n + 1) * per {
            let (x, y, wi) = (t.data()[i], g.data()[i], w.data()[i]);
            let p = sig(x);
            bce += wi * -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            wsum += wi;
            inter += wi * p * y;
            union += wi * (p + y - p * y);
        }
        total += bce / wsum + 1.0 - (inter + 1.0) / (union + 1.0);
    }
    total / s.n as f64
}

fn value<F>(f: F) -> f64
where
    F: for<'t> FnOnce(&'t Tape) -> madgnet::Result<madgnet::tensor::Var<'t>>,
{
    let tape = Tape::new();
    f(&tape).unwrap().item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boundary_matches_set_oracle(seed in any::<u64>(), h in 1usize..12, w in 1usize..12, d in 0.0f64..1.0) {
        let g = random_mask(h, w, d, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = derive_boundary_plane(h, w, &g);
        prop_assert_eq!(&b, &boundary_oracle(h, w, &g));
        prop_assert!(b.iter().zip(&g).all(|(&bv, &gv)| bv <= gv));
    }

    #[test]
    fn distance_matches_brute_force(seed in any::<u64>(), h in 1usize..12, w in 1usize..12, d in 0.0f64..0.95) {
        let g = random_mask(h, w, d, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assume!(g.iter().any(|&v| v < 0.5));
        let got = derive_distance_plane(h, w, &g);
        let want = distance_oracle(h, w, &g);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (v, gv) in got.iter().zip(&g) {
            prop_assert!(*gv >= 0.5 || *v == 0.0);
        }
        if g.iter().any(|&v| v >= 0.5) {
            prop_assert_eq!(got.iter().cloned().fold(0.0, f64::max), 1.0);
        }
    }

    #[test]
    fn distance_is_translation_equivariant(seed in any::<u64>(), dy in 0usize..4, dx in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (14, 14);
        // random blob inside rows/cols 2..8, shifted by up to 3 stays interior
        let mut g = vec![0.0; h * w];
        for y in 2..8 {
            for x in 2..8 {
                if rng.gen_bool(0.7) {
                    g[y * w + x] = 1.0;
                }
            }
        }
        prop_assume!(g.iter().any(|&v| v > 0.5));
        let mut shifted = vec![0.0; h * w];
        for y in 0..h - dy {
            for x in 0..w - dx {
                shifted[(y + dy) * w + x + dx] = g[y * w + x];
            }
        }
        let a = derive_distance_plane(h, w, &g);
        let b = derive_distance_plane(h, w, &shifted);
        for y in 0..h - dy {
            for x in 0..w - dx {
                prop_assert!((a[y * w + x] - b[(y + dy) * w + x + dx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_match_window_oracle(seed in any::<u64>(), h in 1usize..40, w in 1usize..40) {
        let g = random_mask(h, w, 0.4, &mut ChaCha8Rng::seed_from_u64(seed));
        let t = Tensor::from_vec(Shape::new(1, 1, h, w), g.clone()).unwrap();
        let got = region_weights(&t);
        for (a, b) in got.data().iter().zip(weights_oracle(h, w, &g)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_match_oracles_and_bounds(seed in any::<u64>(), n in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Shape::new(n, 1, 12, 12);
        let logits = Tensor::randn(s, 3.0, &mut rng);
        let g = Tensor::from_vec(s, random_mask(12, 12 * n, 0.3, &mut rng)).unwrap();
        let gt = GroundTruth::from_region(&g);
        let w = region_weights(&g);
        let lr = value(|tp| weighted_region_loss(tp.constant(logits.clone()), &g));
        prop_assert!((lr - region_oracle(&logits, &g, &w)).abs() < 1e-12);
        let ones = Tensor::ones(s);
        let plain = value(|tp| region_loss_with_weights(tp.constant(logits.clone()), &g, &ones));
        prop_assert!((plain - region_oracle(&logits, &g, &ones)).abs() < 1e-12);
        let ld = value(|tp| distance_loss(tp.constant(logits.clone()), &gt.distance));
        let lb = value(|tp| boundary_loss(tp.constant(logits.clone()), &gt.boundary));
        prop_assert!(lr >= 0.0 && ld >= 0.0 && lb >= 0.0);
        prop_assert!(ld <= 1.0);
        let iou_part = lr - value(|tp| {
            let t = tp.constant(logits.clone());
            let wsum: Vec<f64> = w.data().chunks(144).map(|c| c.iter().sum()).collect();
            let norm = tp.constant(Tensor::from_vec(Shape::new(n, 1, 1, 1), wsum)?);
            Ok(t.bce_with_logits(&g)?.mul_const(&w)?.sum_per_sample().div(norm)?.mean())
        });
        prop_assert!(iou_part <= 1.0 + 1e-12 && iou_part >= -1e-12);
    }
}

#[test]
fn row_distance_example() {
    let d = derive_distance_plane(1, 5, &[0.0, 1.0, 1.0, 1.0, 0.0]);
    assert_eq!(d, vec![0.0, 0.5, 1.0, 0.5, 0.0]);
}

#[test]
fn ring_and_border_examples() {
    let mut g = vec![0.0; 49];
    for y in 2..5 {
        for x in 2..5 {
            g[y * 7 + x] = 1.0;
        }
    }
    let b = derive_boundary_plane(7, 7, &g);
    assert_eq!(b.iter().sum::<f64>(), 8.0);
    assert_eq!(b[3 * 7 + 3], 0.0);
    let full = derive_boundary_plane(4, 5, &[1.0; 20]);
    for y in 0..4 {
        for x in 0..5 {
            let border = y == 0 || x == 0 || y == 3 || x == 4;
            assert_eq!(full[y * 5 + x], if border { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn zero_logits_give_ln_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Tensor::from_vec(Shape::new(1, 1, 6, 6), random_mask(6, 6, 0.5, &mut rng)).unwrap();
    let l = value(|tp| boundary_loss(tp.constant(Tensor::zeros(g.shape())), &g));
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn saturated_prediction_is_nearly_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Tensor::from_vec(Shape::new(1, 1, 16, 16), random_mask(16, 16, 0.4, &mut rng)).unwrap();
    let logits = g.map(|v| if v > 0.5 { 20.0 } else { -20.0 });
    let l = value(|tp| weighted_region_loss(tp.constant(logits.clone()), &g));
    assert!(l.abs() < 1e-6, "{l}");
}

fn stage_terms(lambda: &LossWeights, seed: u64) -> (f64, f64) {
    let cfg = NetworkConfig::mini();
    let (net, store) = Madgnet::init(&cfg, seed).unwrap();
    let (x, gt) = mini_batch(&cfg, seed);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let stages = net.forward(tape.constant(x), &p).unwrap();
    let total = total_loss(&stages, std::slice::from_ref(&gt), lambda).unwrap().item();
    let mut hand = 0.0;
    for st in &stages {
        let mut stage_sum = 0.0;
        for (l, &task) in Task::ORDER.iter().enumerate() {
            let t = st.labels[0].outputs[l];
            stage_sum += lambda.get(task) * task_loss(task, t, &gt).unwrap().item();
        }
        hand += stage_sum;
    }
    (total, hand)
}

#[test]
fn total_loss_accumulates_stage_sums() {
    for (seed, lambda) in [
        (1, LossWeights::default()),
        (2, LossWeights { region: 0.5, distance: 2.0, boundary: 0.25 }),
        (3, LossWeights { region: 1.0, distance: 0.0, boundary: 0.0 }),
    ] {
        let (total, hand) = stage_terms(&lambda, seed);
        assert!((total - hand).abs() < 1e-12, "{total} vs {hand}");
    }
}

#[test]
fn single_stage_config_sums_stage_four_only() {
    let cfg = NetworkConfig {
        deep_supervision: false,
        ..NetworkConfig::mini()
    };
    let (net, store) = Madgnet::init(&cfg, 5).unwrap();
    let (x, gt) = mini_batch(&cfg, 5);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let stages = net.forward(tape.constant(x), &p).unwrap();
    assert_eq!(stages.len(), 1);
    let total = total_loss(&stages, std::slice::from_ref(&gt), &LossWeights::default()).unwrap().item();
    let hand: f64 = Task::ORDER
        .iter()
        .enumerate()
        .map(|(l, &task)| task_loss(task, stages[0].labels[0].outputs[l], &gt).unwrap().item())
        .sum();
    assert!((total - hand).abs() < 1e-12);
}

#[test]
fn missing_head_is_a_config_error() {
    let cfg = NetworkConfig {
        sub_tasks: 0,
        ..NetworkConfig::mini()
    };
    let (net, store) = Madgnet::init(&cfg, 6).unwrap();
    let (x, gt) = mini_batch(&cfg, 6);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let stages = net.forward(tape.constant(x), &p).unwrap();
    assert!(matches!(
        total_loss(&stages, std::slice::from_ref(&gt), &LossWeights::default()),
        Err(madgnet::Error::Config(_))
    ));
    let only_region = LossWeights { region: 1.0, distance: 0.0, boundary: 0.0 };
    assert!(total_loss(&stages, std::slice::from_ref(&gt), &only_region).is_ok());
}
