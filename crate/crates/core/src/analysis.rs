//! Dataset profiling (object scale vs. high-frequency energy) and the
//! MFMSA parameter report.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::data::{mask_from_raster, read_raster, Manifest};
use crate::error::{Error, Result};
use crate::mfmsa::{param_count, MfmsaConfig, ParamCensus};

/// Fraction of foreground pixels.
pub fn scale_statistic(mask: &[f64]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&v| v >= 0.5).count() as f64 / mask.len() as f64
}

/// Default high-pass cutoff as a fraction of the Nyquist radius.
pub const DEFAULT_CUTOFF: f64 = 0.5;

fn fft_rows(data: &mut [Complex<f64>], len: usize, fft: &Arc<dyn Fft<f64>>) {
    for row in data.chunks_mut(len) {
        fft.process(row);
    }
}

/// 2-D DFT power spectrum of a row-major `h x w` plane.
pub fn power_spectrum(h: usize, w: usize, img: &[f64]) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = img.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_rows(&mut buf, w, &planner.plan_fft_forward(w));
    let mut t = vec![Complex::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            t[x * h + y] = buf[y * w + x];
        }
    }
    fft_rows(&mut t, h, &planner.plan_fft_forward(h));
    let mut power = vec![0.0; h * w];
    for x in 0..w {
        for y in 0..h {
            power[y * w + x] = t[x * h + y].norm_sqr();
        }
    }
    power
}

/// Share of non-DC spectral power whose radial frequency exceeds
/// `cutoff * 0.5` cycles per pixel. Zero for a constant image.
pub fn frequency_statistic_with(h: usize, w: usize, img: &[f64], cutoff: f64) -> f64 {
    assert_eq!(img.len(), h * w, "plane size");
    let power = power_spectrum(h, w, img);
    let radius = cutoff * 0.5;
    let (mut high, mut total) = (0.0, 0.0);
    for ky in 0..h {
        let fy = ky.min(h - ky) as f64 / h as f64;
        for kx in 0..w {
            if ky == 0 && kx == 0 {
                continue;
            }
            let fx = kx.min(w - kx) as f64 / w as f64;
            let p = power[ky * w + kx];
            total += p;
            if (fy * fy + fx * fx).sqrt() > radius {
                high += p;
            }
        }
    }
    // rounding leaves ~1e-25 of power in constant images
    let energy: f64 = img.iter().map(|v| v * v).sum::<f64>() * (h * w) as f64;
    if total <= energy * 1e-24 || total == 0.0 {
        0.0
    } else {
        high / total
    }
}

pub fn frequency_statistic(h: usize, w: usize, img: &[f64]) -> f64 {
    frequency_statistic_with(h, w, img, DEFAULT_CUTOFF)
}

/// Channel mean of a `(1, C, H, W)` image.
pub fn to_gray(img: &crate::Tensor) -> Vec<f64> {
    let s = img.shape();
    let mut g = vec![0.0; s.h * s.w];
    for c in 0..s.c {
        for (a, v) in g.iter_mut().zip(img.plane(0, c)) {
            *a += v / s.c as f64;
        }
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    pub id: String,
    pub scale: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub rows: Vec<ProfileRow>,
    /// Manifest rows that could not be read.
    pub skipped: usize,
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var)
}

impl Profile {
    /// `(mean, population variance)` of the scale column.
    pub fn scale_moments(&self) -> (f64, f64) {
        mean_var(self.rows.iter().map(|r| r.scale))
    }

    pub fn frequency_moments(&self) -> (f64, f64) {
        mean_var(self.rows.iter().map(|r| r.frequency))
    }

    /// Tab-separated: header, one row per sample, then `mean` and `variance`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("id\tscale\tfrequency\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:?}\t{:?}", r.id, r.scale, r.frequency);
        }
        let (sm, sv) = self.scale_moments();
        let (fm, fv) = self.frequency_moments();
        let _ = writeln!(s, "mean\t{sm:?}\t{fm:?}");
        let _ = writeln!(s, "variance\t{sv:?}\t{fv:?}");
        s
    }
}

fn profile_one(image: &Path, mask: &Path, cutoff: f64) -> Result<ProfileRow> {
    let img = read_raster(image)?;
    let m = read_raster(mask)?;
    let gray = to_gray(&img.to_tensor());
    let region = mask_from_raster(&m);
    Ok(ProfileRow {
        id: image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        scale: scale_statistic(region.data()),
        frequency: frequency_statistic_with(img.height, img.width, &gray, cutoff),
    })
}

/// Profile every manifest row at native resolution. Unreadable rows are
/// logged and counted, not fatal.
pub fn profile_dataset(manifest: &Manifest, cutoff: f64) -> Profile {
    use rayon::prelude::*;
    let results: Vec<Result<ProfileRow>> = manifest
        .entries
        .par_iter()
        .map(|e| profile_one(&e.image, &e.mask, cutoff))
        .collect();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("skipping sample: {e}");
                skipped += 1;
            }
        }
    }
    Profile { rows, skipped }
}

/// One swept configuration and its census.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRow {
    pub channels: usize,
    pub reduction: usize,
    pub gamma: f64,
    pub census: ParamCensus,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamReport {
    pub rows: Vec<ParamRow>,
}

/// Relative tolerance for the ratio checks.
pub const RATIO_TOLERANCE: f64 = 0.02;

impl ParamReport {
    pub fn sweep(base: &MfmsaConfig, points: &[(usize, usize, f64)]) -> Result<Self> {
        let rows = points
            .iter()
            .map(|&(channels, reduction, gamma)| {
                let cfg = MfmsaConfig {
                    channels,
                    reduction,
                    gamma,
                    ..base.clone()
                };
                Ok(ParamRow {
                    channels,
                    reduction,
                    gamma,
                    census: param_count(&cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ParamReport { rows })
    }

    /// Violated identities, empty when all hold. Exact counts are only
    /// required for branches whose width is the unclamped `C gamma^(s-1)`.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            let tag = format!("C={} r={} gamma={}", r.channels, r.reduction, r.gamma);
            let b = &r.census.branches;
            for br in b {
                let ideal = r.channels as f64 * br.gamma_pow;
                if ideal.fract() == 0.0 && br.channels as f64 == ideal && br.counted as f64 != br.closed_form {
                    out.push(format!(
                        "{tag} s={}: counted {} != closed form {}",
                        br.scale, br.counted, br.closed_form
                    ));
                }
            }
            if b.len() >= 2 {
                let q = b[1].counted as f64 / b[0].counted as f64;
                if ((q - r.gamma) / r.gamma).abs() > RATIO_TOLERANCE {
                    out.push(format!("{tag}: p2/p1 = {q:.4} is not within 2% of gamma"));
                }
            }
            let c = &r.census;
            if ((c.ratio_sum - c.geometric) / c.geometric).abs() > RATIO_TOLERANCE {
                out.push(format!(
                    "{tag}: ratio sum {:.4} is not within 2% of {:.4}",
                    c.ratio_sum, c.geometric
                ));
            }
            if c.gamma_sum != c.geometric {
                out.push(format!("{tag}: sum of gamma powers {} != {}", c.gamma_sum, c.geometric));
            }
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("channels\treduction\tgamma\tscale\tbranch_channels\tcounted\tclosed_form\tratio\tgamma_pow\n");
        for r in &self.rows {
            let head = format!("{}\t{}\t{}", r.channels, r.reduction, r.gamma);
            for b in &r.census.branches {
                let _ = writeln!(
                    s,
                    "{head}\t{}\t{}\t{}\t{}\t{:.6}\t{}",
                    b.scale, b.channels, b.counted, b.closed_form, b.ratio, b.gamma_pow
                );
            }
            let c = &r.census;
            let ok = ((c.ratio_sum - c.geometric) / c.geometric).abs() <= RATIO_TOLERANCE;
            let _ = writeln!(
                s,
                "{head}\tsum\t-\t-\t-\t{:.6}\t{}\t(geometric {}, {})",
                c.ratio_sum,
                c.gamma_sum,
                c.geometric,
                if ok { "within 2%" } else { "OUT OF TOLERANCE" }
            );
        }
        s
    }
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_counts() {
        assert_eq!(scale_statistic(&[0.0; 16]), 0.0);
        let mut m = [0.0; 16];
        m[..3].fill(1.0);
        assert_eq!(scale_statistic(&m), 0.1875);
        m[..8].fill(1.0);
        assert_eq!(scale_statistic(&m), 0.5);
    }

    #[test]
    fn spectrum_extremes() {
        assert_eq!(frequency_statistic(8, 8, &[0.7; 64]), 0.0);
        let checker: Vec<f64> = (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((frequency_statistic(8, 8, &checker) - 1.0).abs() < 1e-12);
        let low: Vec<f64> = (0..64)
            .map(|i| (2.0 * std::f64::consts::PI * (i % 8) as f64 / 8.0).cos())
            .collect();
        assert!(frequency_statistic(8, 8, &low).abs() < 1e-12);
    }

    #[test]
    fn reference_sweep() {
        let base = MfmsaConfig::default();
        let rep = ParamReport::sweep(&base, &[(64, 16, 0.5)]).unwrap();
        assert!(rep.violations().is_empty(), "{:?}", rep.violations());
        let ratios: Vec<f64> = rep.rows[0].census.branches.iter().map(|b| b.ratio).collect();
        assert!((ratios[1] - 0.498).abs() < 1e-3 && (ratios[2] - 0.248).abs() < 1e-3, "{ratios:?}");
        assert!(rep.to_tsv().contains("1.75"));
    }
}
