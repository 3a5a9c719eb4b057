//! Segmentation quality measures.
//!
//! `dsc` and `miou` binarise the prediction at 0.5; the other four take the
//! probability map as is. Ground truths are binarised at 0.5 everywhere.
//! The structural measures follow the widely used saliency evaluation
//! toolkit conventions, including its degenerate-case rules.

use std::fmt::Write as _;
use std::path::Path;

use crate::edt::edt;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tiny constant guarding divisions, equal to the spacing of 1.0.
pub const EPS: f64 = f64::EPSILON;

/// Constants of the weighted F-measure, E-measure and S-measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricParams {
    pub beta2: f64,
    pub gauss_size: usize,
    pub gauss_sigma: f64,
    pub alpha: f64,
    pub thresholds: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            beta2: 1.0,
            gauss_size: 7,
            gauss_sigma: 5.0,
            alpha: 0.5,
            thresholds: 256,
        }
    }
}

/// A single-channel 2-D map.
#[derive(Clone, Copy, Debug)]
pub struct Plane<'a> {
    pub h: usize,
    pub w: usize,
    pub data: &'a [f64],
}

impl<'a> Plane<'a> {
    pub fn new(h: usize, w: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != h * w || h == 0 || w == 0 {
            return Err(Error::dim("plane", format!("{h}x{w} plane with {} values", data.len())));
        }
        Ok(Plane { h, w, data })
    }

    /// View a `(1, 1, H, W)` tensor.
    pub fn of(t: &'a Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::dim("plane", format!("N, C: expected (1, 1, H, W), got {s}")));
        }
        Plane::new(s.h, s.w, t.data())
    }
}

fn check_pair(op: &'static str, p: &Plane<'_>, g: &Plane<'_>) -> Result<()> {
    if p.h != g.h || p.w != g.w {
        return Err(Error::dim(op, format!("prediction {}x{} vs target {}x{}", p.h, p.w, g.h, g.w)));
    }
    Ok(())
}

fn bin(v: f64) -> bool {
    v >= 0.5
}

/// `(|P ∩ G|, |P|, |G|)` after binarisation.
fn counts(p: &Plane<'_>, g: &Plane<'_>) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut np = 0;
    let mut ng = 0;
    for (&a, &b) in p.data.iter().zip(g.data) {
        let (a, b) = (bin(a), bin(b));
        inter += (a && b) as usize;
        np += a as usize;
        ng += b as usize;
    }
    (inter, np, ng)
}

/// `2|P ∩ G| / (|P| + |G|)`, 1 when both are empty.
pub fn dsc(p: Plane<'_>, g: Plane<'_>) -> Result<f64> {
    check_pair("dsc", &p, &g)?;
    let (i, np, ng) = counts(&p, &g);
    Ok(if np + ng == 0 {
        1.0
    } else {
        2.0 * i as f64 / (np + ng) as f64
    })
}

/// `|P ∩ G| / |P ∪ G|`, 1 when both are empty.
pub fn miou(p: Plane<'_>, g: Plane<'_>) -> Result<f64> {
    check_pair("miou", &p, &g)?;
    let (i, np, ng) = counts(&p, &g);
    let union = np + ng - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

pub fn mae(p: Plane<'_>, g: Plane<'_>) -> Result<f64> {
    check_pair("mae", &p, &g)?;
    let s: f64 = p.data.iter().zip(g.data).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / p.data.len() as f64)
}

/// `fspecial('gaussian', size, sigma)`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let m = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let y = (i / size) as f64 - m;
            let x = (i % size) as f64 - m;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let max = k.iter().cloned().fold(0.0, f64::max);
    for v in k.iter_mut() {
        if *v < EPS * max {
            *v = 0.0;
        }
    }
    let sum: f64 = k.iter().sum();
    if sum != 0.0 {
        k.iter_mut().for_each(|v| *v /= sum);
    }
    k
}

/// Same-size correlation with zeros outside the frame.
fn filter_zero_padded(h: usize, w: usize, x: &[f64], k: &[f64], size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for xx in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = y + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let sx = xx + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += k[((dy + r) as usize) * size + (dx + r) as usize] * x[sy as usize * w + sx as usize];
                }
            }
            out[y as usize * w + xx as usize] = acc;
        }
    }
    out
}

/// Weighted F-measure. An empty ground truth scores 1 if the prediction
/// is empty too (all values below 0.5), else 0.
pub fn f_beta_w(p: Plane<'_>, g: Plane<'_>, params: &MetricParams) -> Result<f64> {
    check_pair("f_beta_w", &p, &g)?;
    let (h, w) = (p.h, p.w);
    let gt: Vec<bool> = g.data.iter().map(|&v| bin(v)).collect();
    // distance from every pixel to the nearest foreground pixel
    let Some(t) = edt(h, w, |i| gt[i]) else {
        return Ok(if p.data.iter().all(|&v| !bin(v)) { 1.0 } else { 0.0 });
    };
    let gf = |i: usize| if gt[i] { 1.0 } else { 0.0 };
    let e: Vec<f64> = (0..h * w).map(|i| (p.data[i] - gf(i)).abs()).collect();
    let et: Vec<f64> = (0..h * w).map(|i| if gt[i] { e[i] } else { e[t.nearest[i]] }).collect();
    let k = gaussian_kernel(params.gauss_size, params.gauss_sigma);
    let ea = filter_zero_padded(h, w, &et, &k, params.gauss_size);
    let mut tp_w = 0.0;
    let mut fp_w = 0.0;
    let mut fg_err = 0.0;
    let mut fg = 0usize;
    for i in 0..h * w {
        let min_e = if gt[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        if gt[i] {
            fg += 1;
            fg_err += min_e;
        } else {
            let b = 2.0 - ((0.5f64).ln() / 5.0 * t.squared[i].sqrt()).exp();
            fp_w += min_e * b;
        }
    }
    tp_w += fg as f64 - fg_err;
    let r = 1.0 - fg_err / fg as f64;
    let prec = tp_w / (tp_w + fp_w + EPS);
    let q = (1.0 + params.beta2) * r * prec / (r + params.beta2 * prec + EPS);
    Ok(q)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_ddof1(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn s_object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_ddof1(values) + EPS)
}

fn ssim_part(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let x = mean(pred);
    let y = mean(gt);
    let denom = (n - 1) as f64 + EPS;
    let sx = pred.iter().map(|v| (v - x).powi(2)).sum::<f64>() / denom;
    let sy = gt.iter().map(|v| (v - y).powi(2)).sum::<f64>() / denom;
    let sxy = pred.iter().zip(gt).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// S-measure. An all-background ground truth scores `1 - mean(p)`, an
/// all-foreground one `mean(p)`.
pub fn s_alpha(p: Plane<'_>, g: Plane<'_>, params: &MetricParams) -> Result<f64> {
    check_pair("s_alpha", &p, &g)?;
    let (h, w) = (p.h, p.w);
    let gt: Vec<f64> = g.data.iter().map(|&v| if bin(v) { 1.0 } else { 0.0 }).collect();
    let y = mean(&gt);
    if y == 0.0 {
        return Ok(1.0 - mean(p.data));
    }
    if y == 1.0 {
        return Ok(mean(p.data));
    }
    // object term
    let fg: Vec<f64> = (0..h * w).filter(|&i| gt[i] == 1.0).map(|i| p.data[i]).collect();
    let bg: Vec<f64> = (0..h * w).filter(|&i| gt[i] == 0.0).map(|i| 1.0 - p.data[i]).collect();
    let object = y * s_object(&fg) + (1.0 - y) * s_object(&bg);
    // region term, split at the rounded foreground centroid (+1)
    let (mut sy, mut sx) = (0.0, 0.0);
    let mut cnt = 0.0;
    for i in 0..h * w {
        if gt[i] == 1.0 {
            sy += (i / w) as f64;
            sx += (i % w) as f64;
            cnt += 1.0;
        }
    }
    let cx = ((sx / cnt).round_ties_even() as usize + 1).min(w);
    let cy = ((sy / cnt).round_ties_even() as usize + 1).min(h);
    let area = (h * w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let w1 = (cx * cy) as f64 / area;
    let w2 = (cy * (w - cx)) as f64 / area;
    let w3 = ((h - cy) * cx) as f64 / area;
    let weights = [w1, w2, w3, 1.0 - w1 - w2 - w3];
    let mut region = 0.0;
    for (&(y0, y1, x0, x1), &wt) in quads.iter().zip(&weights) {
        let mut pp = Vec::new();
        let mut gg = Vec::new();
        for yy in y0..y1 {
            for xx in x0..x1 {
                pp.push(p.data[yy * w + xx]);
                gg.push(gt[yy * w + xx]);
            }
        }
        if !pp.is_empty() {
            region += wt * ssim_part(&pp, &gg);
        }
    }
    let sm = params.alpha * object + (1.0 - params.alpha) * region;
    Ok(sm.max(0.0))
}

/// E-measure curve over `thresholds` levels of the 8-bit quantised
/// prediction; entry `j` treats values `>= thresholds - 1 - j` as foreground.
/// Normalised by the pixel count.
pub fn e_phi_curve(p: Plane<'_>, g: Plane<'_>, params: &MetricParams) -> Result<Vec<f64>> {
    check_pair("e_phi", &p, &g)?;
    let levels = params.thresholds.max(1);
    let top = (levels - 1) as f64;
    let n = p.data.len();
    let mut fg_hist = vec![0usize; levels];
    let mut bg_hist = vec![0usize; levels];
    let mut gt_fg = 0usize;
    for (&pv, &gv) in p.data.iter().zip(g.data) {
        let q = (pv * top).floor().clamp(0.0, top) as usize;
        if bin(gv) {
            fg_hist[q] += 1;
            gt_fg += 1;
        } else {
            bg_hist[q] += 1;
        }
    }
    let size = n as f64;
    let mut out = Vec::with_capacity(levels);
    let (mut ff, mut fb) = (0usize, 0usize);
    for j in 0..levels {
        let level = levels - 1 - j;
        ff += fg_hist[level];
        fb += bg_hist[level];
        let pred_fg = ff + fb;
        let pred_bg = n - pred_fg;
        let sum = if gt_fg == 0 {
            pred_bg as f64
        } else if gt_fg == n {
            pred_fg as f64
        } else {
            let bf = gt_fg - ff;
            let bb = pred_bg - bf;
            let mp = pred_fg as f64 / size;
            let mg = gt_fg as f64 / size;
            let parts = [
                (ff, 1.0 - mp, 1.0 - mg),
                (fb, 1.0 - mp, -mg),
                (bf, -mp, 1.0 - mg),
                (bb, -mp, -mg),
            ];
            parts
                .iter()
                .map(|&(count, a, b)| {
                    let align = 2.0 * a * b / (a * a + b * b + EPS);
                    (align + 1.0).powi(2) / 4.0 * count as f64
                })
                .sum()
        };
        out.push(sum / size);
    }
    Ok(out)
}

pub fn e_phi_max(p: Plane<'_>, g: Plane<'_>, params: &MetricParams) -> Result<f64> {
    Ok(e_phi_curve(p, g, params)?.into_iter().fold(0.0, f64::max))
}

/// The six measures of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SampleMetrics {
    pub dsc: f64,
    pub miou: f64,
    pub f_beta_w: f64,
    pub s_alpha: f64,
    pub e_phi_max: f64,
    pub mae: f64,
}

impl SampleMetrics {
    pub const HEADER: [&'static str; 6] = ["dsc", "miou", "f_beta_w", "s_alpha", "e_phi_max", "mae"];

    pub fn values(&self) -> [f64; 6] {
        [self.dsc, self.miou, self.f_beta_w, self.s_alpha, self.e_phi_max, self.mae]
    }

    fn from_values(v: [f64; 6]) -> Self {
        SampleMetrics {
            dsc: v[0],
            miou: v[1],
            f_beta_w: v[2],
            s_alpha: v[3],
            e_phi_max: v[4],
            mae: v[5],
        }
    }
}

/// All six measures for a probability map against a mask.
pub fn evaluate_sample(prob: Plane<'_>, gt: Plane<'_>, params: &MetricParams) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        dsc: dsc(prob, gt)?,
        miou: miou(prob, gt)?,
        f_beta_w: f_beta_w(prob, gt, params)?,
        s_alpha: s_alpha(prob, gt, params)?,
        e_phi_max: e_phi_max(prob, gt, params)?,
        mae: mae(prob, gt)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub ids: Vec<String>,
    pub samples: Vec<SampleMetrics>,
    pub mean: SampleMetrics,
}

impl MetricReport {
    pub fn from_samples(ids: Vec<String>, samples: Vec<SampleMetrics>) -> Result<Self> {
        if ids.len() != samples.len() {
            return Err(Error::Contract(format!("{} ids for {} samples", ids.len(), samples.len())));
        }
        let mut acc = [0.0; 6];
        for s in &samples {
            for (a, v) in acc.iter_mut().zip(s.values()) {
                *a += v;
            }
        }
        let n = samples.len().max(1) as f64;
        let mean = SampleMetrics::from_values(acc.map(|a| a / n));
        Ok(MetricReport { ids, samples, mean })
    }

    /// Tab-separated: header, one row per sample, then a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id");
        for h in SampleMetrics::HEADER {
            out.push('\t');
            out.push_str(h);
        }
        out.push('\n');
        let row = |out: &mut String, id: &str, m: &SampleMetrics| {
            out.push_str(id);
            for v in m.values() {
                let _ = write!(out, "\t{v:.6}");
            }
            out.push('\n');
        };
        for (id, m) in self.ids.iter().zip(&self.samples) {
            row(&mut out, id, m);
        }
        row(&mut out, "mean", &self.mean);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Evaluate aligned `(id, probability, mask)` triples, in parallel.
pub fn evaluate_dataset(
    ids: &[String],
    probs: &[Tensor],
    gts: &[Tensor],
    params: &MetricParams,
) -> Result<MetricReport> {
    use rayon::prelude::*;
    if probs.len() != gts.len() || ids.len() != gts.len() {
        return Err(Error::Contract(format!(
            "evaluate_dataset: {} ids, {} predictions, {} ground truths",
            ids.len(),
            probs.len(),
            gts.len()
        )));
    }
    let samples = probs
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| evaluate_sample(Plane::of(p)?, Plane::of(g)?, params))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_samples(ids.to_vec(), samples)
}
