use madgnet::metrics::{
    dsc, e_phi_max, evaluate_dataset, f_beta_w, mae, miou, s_alpha, MetricParams, Plane,
};
use madgnet::{Shape, Tensor};
use proptest::prelude::*;

struct Case {
    h: usize,
    w: usize,
    s: f64,
    e: f64,
    f: f64,
    mae: f64,
    pred: Vec<f64>,
    gt: Vec<f64>,
}

fn cases() -> Vec<Case> {
    let text = include_str!("data/metric_reference.txt");
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    lines
        .chunks(3)
        .map(|c| {
            let head: Vec<f64> = c[0].split_whitespace().map(|v| v.parse().unwrap()).collect();
            Case {
                h: head[0] as usize,
                w: head[1] as usize,
                s: head[2],
                e: head[3],
                f: head[4],
                mae: head[5],
                pred: c[1].split_whitespace().map(|v| v.parse().unwrap()).collect(),
                gt: c[2].bytes().map(|b| f64::from(b - b'0')).collect(),
            }
        })
        .collect()
}

#[test]
fn structural_measures_match_reference_toolkit() {
    let params = MetricParams::default();
    let all = cases();
    assert_eq!(all.len(), 5);
    for c in all {
        let p = Plane::new(c.h, c.w, &c.pred).unwrap();
        let g = Plane::new(c.h, c.w, &c.gt).unwrap();
        let s = s_alpha(p, g, &params).unwrap();
        let e = e_phi_max(p, g, &params).unwrap();
        let f = f_beta_w(p, g, &params).unwrap();
        let m = mae(p, g).unwrap();
        assert!((s - c.s).abs() < 1e-12, "S {s} vs {}", c.s);
        assert!((e - c.e).abs() < 1e-12, "E {e} vs {}", c.e);
        assert!((f - c.f).abs() < 1e-12, "F {f} vs {}", c.f);
        assert!((m - c.mae).abs() < 1e-12, "MAE {m} vs {}", c.mae);
    }
}

fn bits(v: u16) -> Vec<f64> {
    (0..16).map(|i| f64::from((v >> i) & 1)).collect()
}

proptest! {
    #[test]
    fn overlap_identities(a in any::<u16>(), b in any::<u16>()) {
        let (pa, pb) = (bits(a), bits(b));
        let p = Plane::new(4, 4, &pa).unwrap();
        let g = Plane::new(4, 4, &pb).unwrap();
        let d = dsc(p, g).unwrap();
        let j = miou(p, g).unwrap();
        prop_assert!(d >= j);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        prop_assert_eq!(mae(p, g).unwrap(), mae(g, p).unwrap());
        let inter = (a & b).count_ones() as f64;
        let union = (a | b).count_ones() as f64;
        let expect = if union == 0.0 { 1.0 } else { inter / union };
        prop_assert_eq!(j, expect);
    }

    #[test]
    fn measures_stay_in_unit_interval(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.gen_range(2..12), rng.gen_range(2..12));
        let pred: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        let gt: Vec<f64> = (0..h * w).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect();
        let params = MetricParams::default();
        let (p, g) = (Plane::new(h, w, &pred).unwrap(), Plane::new(h, w, &gt).unwrap());
        for v in [
            dsc(p, g).unwrap(),
            miou(p, g).unwrap(),
            f_beta_w(p, g, &params).unwrap(),
            s_alpha(p, g, &params).unwrap(),
            e_phi_max(p, g, &params).unwrap(),
            mae(p, g).unwrap(),
        ] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }
}

#[test]
fn dataset_aggregation() {
    let params = MetricParams::default();
    let s = Shape::new(1, 1, 4, 4);
    let g = Tensor::from_vec(s, bits(0x0ff0)).unwrap();
    let p1 = Tensor::from_vec(s, bits(0x0ff0)).unwrap();
    let p2 = Tensor::from_vec(s, bits(0x00f0)).unwrap();
    let one = evaluate_dataset(&["a".into()], &[p2.clone()], &[g.clone()], &params).unwrap();
    assert_eq!(one.mean, one.samples[0]);
    let two = evaluate_dataset(&["a".into(), "b".into()], &[p1, p2.clone()], &[g.clone(), g.clone()], &params).unwrap();
    let hand = (1.0 + one.samples[0].dsc) / 2.0;
    assert!((two.mean.dsc - hand).abs() < 1e-15);
    let dup = evaluate_dataset(&["a".into(), "a".into()], &[p2.clone(), p2.clone()], &[g.clone(), g.clone()], &params).unwrap();
    assert_eq!(dup.mean, one.mean);
    assert!(evaluate_dataset(&["a".into()], &[p2.clone(), p2], &[g], &params).is_err());
}
