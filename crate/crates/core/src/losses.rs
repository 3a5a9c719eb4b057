//! Sub-task ground truths and the deep-supervision loss.

use crate::error::{Error, Result};
use crate::edt::edt;
use crate::esdm::TaskBundle;
use crate::network::{StagePrediction, Task};
use crate::tensor::{Shape, Tensor, Var};

/// Region mask plus the two derived targets, each `(N, 1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub region: Tensor,
    pub distance: Tensor,
    pub boundary: Tensor,
}

impl GroundTruth {
    pub fn from_region(region: &Tensor) -> Self {
        GroundTruth {
            region: region.clone(),
            distance: per_plane(region, derive_distance_plane),
            boundary: per_plane(region, derive_boundary_plane),
        }
    }

    pub fn target(&self, task: Task) -> &Tensor {
        match task {
            Task::Region => &self.region,
            Task::Distance => &self.distance,
            Task::Boundary => &self.boundary,
        }
    }

    pub fn stack(items: &[GroundTruth]) -> Result<GroundTruth> {
        let pick = |f: fn(&GroundTruth) -> &Tensor| -> Result<Tensor> {
            let v: Vec<Tensor> = items.iter().map(|g| f(g).clone()).collect();
            Tensor::stack_batch(&v)
        };
        Ok(GroundTruth {
            region: pick(|g| &g.region)?,
            distance: pick(|g| &g.distance)?,
            boundary: pick(|g| &g.boundary)?,
        })
    }
}

fn per_plane(t: &Tensor, f: impl Fn(usize, usize, &[f64]) -> Vec<f64>) -> Tensor {
    let s = t.shape();
    let plane = s.h * s.w;
    let mut data = Vec::with_capacity(t.numel());
    for chunk in t.data().chunks(plane.max(1)) {
        data.extend(f(s.h, s.w, chunk));
    }
    Tensor::from_vec(s, data).expect("same shape")
}

/// Boundary of every plane of a binary mask.
pub fn derive_boundary(mask: &Tensor) -> Tensor {
    per_plane(mask, derive_boundary_plane)
}

/// Max-normalised distance-to-background of every plane.
pub fn derive_distance(mask: &Tensor) -> Tensor {
    per_plane(mask, derive_distance_plane)
}

/// `G - erode(G)` with the 3x3 cross, pixels outside the frame count as 0.
pub fn derive_boundary_plane(h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let on = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && g[y as usize * w + x as usize] >= 0.5
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !on(y, x) {
                continue;
            }
            let eroded = on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1);
            if !eroded {
                out[y as usize * w + x as usize] = 1.0;
            }
        }
    }
    out
}

/// Euclidean distance to the nearest background pixel divided by its
/// maximum. Empty foreground gives zeros; a mask with no background at all
/// gives ones.
pub fn derive_distance_plane(h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    if g.iter().all(|&v| v < 0.5) {
        return vec![0.0; h * w];
    }
    let Some(t) = edt(h, w, |i| g[i] < 0.5) else {
        return vec![1.0; h * w];
    };
    let dist: Vec<f64> = t.squared.iter().map(|v| v.sqrt()).collect();
    let max = dist.iter().cloned().fold(0.0, f64::max);
    dist.iter().map(|v| v / max).collect()
}

/// Side of the averaging window used for loss weights.
pub fn weight_window(h: usize, w: usize) -> usize {
    let m = h.min(w).clamp(1, 31);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// `1 + 5 |avgpool_k(G) - G|`, zero padding counted in the average.
pub fn region_weights(g: &Tensor) -> Tensor {
    let s = g.shape();
    let k = weight_window(s.h, s.w);
    let r = (k / 2) as isize;
    let area = (k * k) as f64;
    per_plane(g, |h, w, p| {
        // summed-area table
        let mut sat = vec![0.0; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += p[y * w + x];
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        let clampy = |v: isize| v.clamp(0, h as isize) as usize;
        let clampx = |v: isize| v.clamp(0, w as isize) as usize;
        let mut out = vec![0.0; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (y0, y1) = (clampy(y - r), clampy(y + r + 1));
                let (x0, x1) = (clampx(x - r), clampx(x + r + 1));
                let total = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                    + sat[y0 * (w + 1) + x0];
                let i = y as usize * w + x as usize;
                out[i] = 1.0 + 5.0 * (total / area - p[i]).abs();
            }
        }
        out
    })
}

fn check_pair(op: &'static str, t: &Var<'_>, g: &Tensor) -> Result<()> {
    if t.shape() != g.shape() {
        return Err(Error::dim(op, format!("prediction {} vs target {}", t.shape(), g.shape())));
    }
    if t.shape().c != 1 {
        return Err(Error::dim(op, format!("C: expected one channel, got {}", t.shape())));
    }
    Ok(())
}

/// Per-sample values `(N, 1, 1, 1)` averaged over the batch.
fn batch_mean<'t>(v: Var<'t>) -> Var<'t> {
    v.mean()
}

/// Weighted BCE plus weighted IoU with the given pixel weights.
pub fn region_loss_with_weights<'t>(t: Var<'t>, g: &Tensor, w: &Tensor) -> Result<Var<'t>> {
    check_pair("region loss", &t, g)?;
    let s = g.shape();
    let wsum: Vec<f64> = w
        .data()
        .chunks((s.h * s.w).max(1))
        .map(|c| c.iter().sum::<f64>())
        .collect();
    let wsum_t = Tensor::from_vec(Shape::new(s.n, 1, 1, 1), wsum)?;
    let bce = t.bce_with_logits(g)?.mul_const(w)?.sum_per_sample().div(t.tape().constant(wsum_t))?;
    let p = t.sigmoid();
    let inter = p.mul_const(&g.zip_map(w, |a, b| a * b)?)?.sum_per_sample();
    // p + g - p g = p (1 - g) + g
    let one_minus_g = g.map(|v| 1.0 - v);
    let union = p
        .mul_const(&one_minus_g)?
        .add_const(g)?
        .mul_const(w)?
        .sum_per_sample();
    let iou = inter.affine(1.0, 1.0).div(union.affine(1.0, 1.0))?.one_minus();
    Ok(batch_mean(bce).add(batch_mean(iou))?)
}

/// `L_R`: weighted BCE + weighted IoU on region logits.
pub fn weighted_region_loss<'t>(t: Var<'t>, g: &Tensor) -> Result<Var<'t>> {
    check_pair("region loss", &t, g)?;
    region_loss_with_weights(t, g, &region_weights(g))
}

/// `L_B`: mean BCE on boundary logits.
pub fn boundary_loss<'t>(t: Var<'t>, g: &Tensor) -> Result<Var<'t>> {
    check_pair("boundary loss", &t, g)?;
    Ok(t.bce_with_logits(g)?.mean())
}

/// `L_D`: mean squared error between `σ(T)` and the distance map.
pub fn distance_loss<'t>(t: Var<'t>, g: &Tensor) -> Result<Var<'t>> {
    check_pair("distance loss", &t, g)?;
    let d = t.sigmoid().add_const(&g.map(|v| -v))?;
    Ok(d.mul(d)?.mean())
}

pub fn task_loss<'t>(task: Task, t: Var<'t>, g: &GroundTruth) -> Result<Var<'t>> {
    match task {
        Task::Region => weighted_region_loss(t, &g.region),
        Task::Distance => distance_loss(t, &g.distance),
        Task::Boundary => boundary_loss(t, &g.boundary),
    }
}

/// Task weights `λ_R, λ_D, λ_B`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub region: f64,
    pub distance: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            region: 1.0,
            distance: 1.0,
            boundary: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Region => self.region,
            Task::Distance => self.distance,
            Task::Boundary => self.boundary,
        }
    }
}

fn bundle_loss<'t>(b: &TaskBundle<'t>, g: &GroundTruth, lambda: &LossWeights) -> Result<Option<Var<'t>>> {
    let mut acc: Option<Var<'t>> = None;
    for (l, &task) in Task::ORDER.iter().enumerate() {
        let weight = lambda.get(task);
        if weight == 0.0 {
            continue;
        }
        let Some(&t) = b.outputs.get(l) else {
            return Err(Error::Config(format!(
                "loss weight for {} is {weight} but stage {} has no {} head",
                task.name(),
                b.stage,
                task.name()
            )));
        };
        let term = task_loss(task, t, g)?;
        let term = if weight == 1.0 { term } else { term.scale(weight) };
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(term)?,
        });
    }
    Ok(acc)
}

/// `Σ_stages Σ_labels Σ_tasks λ_t L_t`. `gts` holds one entry per label.
pub fn total_loss<'t>(stages: &[StagePrediction<'t>], gts: &[GroundTruth], lambda: &LossWeights) -> Result<Var<'t>> {
    let mut acc: Option<Var<'t>> = None;
    for st in stages {
        if st.labels.len() != gts.len() {
            return Err(Error::Contract(format!(
                "stage {} has {} labels but {} ground truths were given",
                st.stage,
                st.labels.len(),
                gts.len()
            )));
        }
        for (b, g) in st.labels.iter().zip(gts) {
            if let Some(term) = bundle_loss(b, g, lambda)? {
                acc = Some(match acc {
                    None => term,
                    Some(a) => a.add(term)?,
                });
            }
        }
    }
    acc.ok_or_else(|| Error::Config("total loss has no terms (no stages or all weights zero)".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn plane(h: usize, w: usize, on: &[(usize, usize)]) -> Vec<f64> {
        let mut g = vec![0.0; h * w];
        for &(y, x) in on {
            g[y * w + x] = 1.0;
        }
        g
    }

    #[test]
    fn boundary_examples() {
        assert!(derive_boundary_plane(4, 4, &[0.0; 16]).iter().all(|&v| v == 0.0));
        let all = derive_boundary_plane(4, 5, &[1.0; 20]);
        for y in 0..4 {
            for x in 0..5 {
                let border = y == 0 || x == 0 || y == 3 || x == 4;
                assert_eq!(all[y * 5 + x], if border { 1.0 } else { 0.0 });
            }
        }
        let sq: Vec<_> = (2..5).flat_map(|y| (2..5).map(move |x| (y, x))).collect();
        let b = derive_boundary_plane(7, 7, &plane(7, 7, &sq));
        assert_eq!(b.iter().sum::<f64>(), 8.0);
        assert_eq!(b[3 * 7 + 3], 0.0);
    }

    #[test]
    fn distance_examples() {
        assert!(derive_distance_plane(3, 3, &[0.0; 9]).iter().all(|&v| v == 0.0));
        let single = derive_distance_plane(3, 3, &plane(3, 3, &[(1, 1)]));
        assert_eq!(single, plane(3, 3, &[(1, 1)]));
        let row = derive_distance_plane(1, 5, &[0.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(row, vec![0.0, 0.5, 1.0, 0.5, 0.0]);
        assert!(derive_distance_plane(2, 2, &[1.0; 4]).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn window_rule() {
        assert_eq!(weight_window(352, 352), 31);
        assert_eq!(weight_window(64, 32), 31);
        assert_eq!(weight_window(8, 8), 7);
        assert_eq!(weight_window(5, 9), 5);
    }

    #[test]
    fn saturated_prediction_has_near_zero_loss() {
        let g = Tensor::from_vec(Shape::new(1, 1, 4, 4), plane(4, 4, &[(1, 1), (1, 2), (2, 1), (2, 2)])).unwrap();
        let tape = Tape::new();
        let t = tape.constant(g.map(|v| if v > 0.5 { 20.0 } else { -20.0 }));
        assert!(weighted_region_loss(t, &g).unwrap().item() < 1e-6);
        assert!(boundary_loss(t, &g).unwrap().item() < 1e-6);
    }

    #[test]
    fn zero_logits_give_ln2_bce() {
        let g = Tensor::from_vec(Shape::new(2, 1, 3, 3), (0..18).map(|i| (i % 2) as f64).collect()).unwrap();
        let tape = Tape::new();
        let t = tape.constant(Tensor::zeros(g.shape()));
        assert!((boundary_loss(t, &g).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn distance_loss_zero_at_match() {
        let g = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.25, 0.5, 0.75]).unwrap();
        let tape = Tape::new();
        let t = tape.constant(g.map(|p| (p / (1.0 - p)).ln()));
        assert!(distance_loss(t, &g).unwrap().item() < 1e-30);
    }

    #[test]
    fn constant_masks_have_unit_weights() {
        let g = Tensor::zeros(Shape::new(1, 1, 8, 8));
        assert!(region_weights(&g).data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn shape_mismatch() {
        let tape = Tape::new();
        let t = tape.constant(Tensor::zeros(Shape::new(1, 1, 4, 4)));
        assert!(boundary_loss(t, &Tensor::zeros(Shape::new(1, 1, 4, 5))).is_err());
    }
}
