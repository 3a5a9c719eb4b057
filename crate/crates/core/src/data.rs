//! Images, masks, manifests, the synthetic ellipse dataset and augmentation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::GroundTruth;
use crate::tensor::kernels::resample;
use crate::tensor::{ResampleMode, Shape, Tensor};

/// An 8-bit netpbm raster, 1 (P5) or 3 (P6) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        Raster {
            width,
            height,
            channels: 1,
            pixels,
        }
    }

    /// `(1, channels, H, W)` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; c * h * w];
        for (i, &p) in self.pixels.iter().enumerate() {
            let (pix, ch) = (i / c, i % c);
            data[ch * h * w + pix] = f64::from(p) / 255.0;
        }
        Tensor::from_vec(Shape::new(1, c, h, w), data).expect("raster size")
    }

    /// Quantise a `(1, C, H, W)` tensor with `C` in {1, 3}; values are clamped.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || (s.c != 1 && s.c != 3) {
            return Err(Error::dim("raster", format!("expected (1, 1|3, H, W), got {s}")));
        }
        let plane = s.h * s.w;
        let mut pixels = vec![0u8; s.c * plane];
        for ch in 0..s.c {
            for (pix, &v) in t.plane(0, ch).iter().enumerate() {
                pixels[pix * s.c + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Ok(Raster {
            width: s.w,
            height: s.h,
            channels: s.c,
            pixels,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, (usize, String)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start, format!("{what} out of range")))
    }
}

/// Parse P5/P6 bytes. Errors carry the byte offset where parsing failed.
pub fn parse_netpbm(bytes: &[u8]) -> std::result::Result<Raster, (usize, String)> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err((0, "missing netpbm magic".into()));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        other => return Err((1, format!("unsupported netpbm type P{}", other as char))),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err((maxval_at, format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err((maxval_at, format!("maxval {maxval}, only 8-bit (255) is supported")));
    }
    if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
        return Err((c.pos, "expected a single whitespace byte before the raster".into()));
    }
    let start = c.pos + 1;
    let need = width * height * channels;
    if bytes.len() - start < need {
        return Err((bytes.len(), format!("raster truncated: need {need} bytes, have {}", bytes.len() - start)));
    }
    Ok(Raster {
        width,
        height,
        channels,
        pixels: bytes[start..start + need].to_vec(),
    })
}

pub fn encode_netpbm(r: &Raster) -> Vec<u8> {
    let magic = if r.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.pixels);
    out
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_png(path) {
        return decode_png(path, &bytes);
    }
    parse_netpbm(&bytes).map_err(|(offset, msg)| Error::Parse {
        path: path.to_path_buf(),
        offset,
        msg,
    })
}

pub fn write_raster(path: &Path, r: &Raster) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_netpbm(r)).map_err(|e| Error::io(path, e))
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

#[cfg(feature = "png")]
fn decode_png(path: &Path, bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    Ok(Raster {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        channels: 3,
        pixels: rgb.into_raw(),
    })
}

#[cfg(not(feature = "png"))]
fn decode_png(path: &Path, _bytes: &[u8]) -> Result<Raster> {
    Err(Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        msg: "PNG support is not compiled in (enable the `png` feature)".into(),
    })
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub image: Tensor,
    pub gt: GroundTruth,
}

/// Replicate a grayscale image to three channels.
fn to_rgb(t: Tensor) -> Tensor {
    let s = t.shape();
    if s.c == 3 {
        return t;
    }
    let plane = t.data().to_vec();
    let data = plane.iter().chain(&plane).chain(&plane).copied().collect();
    Tensor::from_vec(Shape::new(1, 3, s.h, s.w), data).expect("three planes")
}

/// Binary `(1, 1, H, W)` mask: pixel value (channel mean) `>= 128`.
pub fn mask_from_raster(r: &Raster) -> Tensor {
    let data = r
        .pixels
        .chunks(r.channels)
        .map(|px| {
            let m = px.iter().map(|&v| f64::from(v)).sum::<f64>() / px.len() as f64;
            if m >= 128.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(Shape::new(1, 1, r.height, r.width), data).expect("raster size")
}

/// `(1, 3, H, W)` image, bilinearly resized to `target` (height, width).
pub fn image_tensor(r: &Raster, target: Option<(usize, usize)>) -> Result<Tensor> {
    let x = to_rgb(r.to_tensor());
    match target {
        Some((h, w)) if (r.height, r.width) != (h, w) => resample(&x, h, w, ResampleMode::Bilinear),
        _ => Ok(x),
    }
}

pub fn load_image(path: &Path, target: Option<(usize, usize)>) -> Result<Tensor> {
    image_tensor(&read_raster(path)?, target)
}

/// Read an image/mask pair, resize to `target` (height, width) if given and
/// derive the sub-task targets. The mask is resized by nearest sampling and
/// then thresholded.
pub fn load_sample(image: &Path, mask: &Path, target: Option<(usize, usize)>) -> Result<SampleRecord> {
    let x = load_image(image, target)?;
    let msk = read_raster(mask)?;
    let gray: Vec<f64> = msk
        .pixels
        .chunks(msk.channels)
        .map(|px| f64::from(px.iter().map(|&v| u32::from(v)).sum::<u32>() / px.len() as u32))
        .collect();
    let mut raw = Tensor::from_vec(Shape::new(1, 1, msk.height, msk.width), gray).expect("raster size");
    if let Some((h, w)) = target {
        if (msk.height, msk.width) != (h, w) {
            raw = resample(&raw, h, w, ResampleMode::Nearest)?;
        }
    }
    let region = raw.map(|v| if v >= 128.0 { 1.0 } else { 0.0 });
    let (xs, ms) = (x.shape(), region.shape());
    if (xs.h, xs.w) != (ms.h, ms.w) {
        return Err(Error::dim(
            "load_sample",
            format!("image {} and mask {} differ in H, W", xs, ms),
        ));
    }
    let id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SampleRecord {
        id,
        image: x,
        gt: GroundTruth::from_region(&region),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    /// Optional third column; defaults to `train`.
    pub split: String,
}

/// `image<TAB>mask[<TAB>split]` lines; relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const STATS_FILE: &str = "stats.tsv";

impl Manifest {
    pub fn parse(text: &str, base: &Path, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.trim().is_empty() && !body.starts_with('#') {
                let cols: Vec<&str> = body.split('\t').collect();
                if cols.len() < 2 || cols.len() > 3 || cols.iter().any(|c| c.is_empty()) {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        offset,
                        msg: format!("expected image<TAB>mask[<TAB>split], got {body:?}"),
                    });
                }
                entries.push(ManifestEntry {
                    image: base.join(cols[0]),
                    mask: base.join(cols[1]),
                    split: cols.get(2).unwrap_or(&"train").to_string(),
                });
            }
            offset += line.len();
        }
        Ok(Manifest { entries })
    }

    /// Load `DIR/manifest.tsv`, or the given file directly.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let base = file.parent().unwrap_or(Path::new("."));
        Manifest::parse(&text, base, &file)
    }

    pub fn split(&self, tag: &str) -> Manifest {
        Manifest {
            entries: self.entries.iter().filter(|e| e.split == tag).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_all(&self, target: Option<(usize, usize)>) -> Result<Vec<SampleRecord>> {
        use rayon::prelude::*;
        self.entries
            .par_iter()
            .map(|e| load_sample(&e.image, &e.mask, target))
            .collect()
    }
}

/// Generator knobs. Defaults give 1-3 ellipses with noise sigma 0.05.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    pub noise: f64,
    pub min_contrast: f64,
    /// Open interval of accepted foreground ratios.
    pub ratio_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            min_ellipses: 1,
            max_ellipses: 3,
            noise: 0.05,
            min_contrast: 0.2,
            ratio_range: (0.02, 0.6),
        }
    }
}

/// One generated sample before quantisation.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: Raster,
    pub mask: Raster,
    pub foreground_ratio: f64,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Sample `index` of the dataset with seed `seed`; independent of the others.
pub fn synth_sample(cfg: &SynthConfig, seed: u64, index: u64) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = cfg.size;
    let sf = n as f64;
    // geometry, redrawn until the foreground ratio is acceptable
    let (mask, ratio) = loop {
        let count = rng.gen_range(cfg.min_ellipses..=cfg.max_ellipses);
        let shapes: Vec<Ellipse> = (0..count)
            .map(|_| Ellipse {
                cy: rng.gen_range(0.2..0.8) * sf,
                cx: rng.gen_range(0.2..0.8) * sf,
                a: rng.gen_range(0.08..0.3) * sf,
                b: rng.gen_range(0.08..0.3) * sf,
                theta: rng.gen_range(0.0..std::f64::consts::PI),
            })
            .collect();
        let mask: Vec<bool> = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5);
                shapes.iter().any(|e| e.contains(y, x))
            })
            .collect();
        let ratio = mask.iter().filter(|&&m| m).count() as f64 / (n * n) as f64;
        if ratio > cfg.ratio_range.0 && ratio < cfg.ratio_range.1 {
            break (mask, ratio);
        }
    };
    // intensities: background level, foreground offset of at least min_contrast
    let bg = rng.gen_range(0.15..0.85);
    let delta = rng.gen_range(cfg.min_contrast + 0.05..cfg.min_contrast + 0.35);
    let fg = if bg + delta <= 0.95 && (bg - delta < 0.05 || rng.gen_bool(0.5)) {
        bg + delta
    } else {
        bg - delta
    };
    let tint: [f64; 3] = [rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04)];
    // background texture: two oriented sinusoids
    let waves: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let f = rng.gen_range(1.0..6.0) * std::f64::consts::TAU / sf;
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            (f * ang.cos(), f * ang.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.02..0.06))
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise).expect("finite sigma");
    let mut pixels = vec![0u8; 3 * n * n];
    for i in 0..n * n {
        let (y, x) = ((i / n) as f64, (i % n) as f64);
        let base = if mask[i] {
            fg
        } else {
            bg + waves.iter().map(|&(fy, fx, ph, amp)| amp * (fy * y + fx * x + ph).sin()).sum::<f64>()
        };
        for (c, t) in tint.iter().enumerate() {
            let v = base + t + noise.sample(&mut rng);
            pixels[3 * i + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    SynthSample {
        image: Raster {
            width: n,
            height: n,
            channels: 3,
            pixels,
        },
        mask: Raster::gray(n, n, mask.iter().map(|&m| if m { 255 } else { 0 }).collect()),
        foreground_ratio: ratio,
    }
}

/// Write `n` samples, `manifest.tsv` and `stats.tsv` (id, foreground ratio)
/// under `dir`. Returns the foreground ratios.
pub fn synth_generate(dir: &Path, n: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    if cfg.size == 0 || cfg.size % 32 != 0 {
        return Err(Error::Config(format!("synthetic size {} must be a positive multiple of 32", cfg.size)));
    }
    if cfg.min_ellipses == 0 || cfg.min_ellipses > cfg.max_ellipses {
        return Err(Error::Config("ellipse count range is empty".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ratios = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = synth_sample(cfg, seed, i as u64);
            write_raster(&dir.join(format!("images/{i:04}.ppm")), &s.image)?;
            write_raster(&dir.join(format!("masks/{i:04}.pgm")), &s.mask)?;
            Ok(s.foreground_ratio)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut manifest = String::new();
    let mut stats = String::from("id\tforeground_ratio\n");
    for (i, r) in ratios.iter().enumerate() {
        let _ = writeln!(manifest, "images/{i:04}.ppm\tmasks/{i:04}.pgm");
        let _ = writeln!(stats, "{i:04}\t{r:?}");
    }
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
    let sp = dir.join(STATS_FILE);
    fs::write(&sp, stats).map_err(|e| Error::io(&sp, e))?;
    Ok(ratios)
}

/// Read back `stats.tsv`.
pub fn read_stats(dir: &Path) -> Result<Vec<(String, f64)>> {
    let p = dir.join(STATS_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for (k, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end();
        if k > 0 && !body.is_empty() {
            let bad = || Error::Parse {
                path: p.clone(),
                offset,
                msg: format!("bad stats row {body:?}"),
            };
            let (id, v) = body.split_once('\t').ok_or_else(bad)?;
            out.push((id.to_string(), v.parse().map_err(|_| bad())?));
        }
        offset += line.len();
    }
    Ok(out)
}

/// Geometric augmentation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub hflip: f64,
    pub vflip: f64,
    /// Rotation drawn uniformly from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: 0.5,
            vflip: 0.5,
            max_rotation_deg: 5.0,
        }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        hflip: 0.0,
        vflip: 0.0,
        max_rotation_deg: 0.0,
    };
}

/// Mirror every plane left-right.
pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = t.clone();
    for (dst, src) in out.data_mut().chunks_mut(s.w).zip(t.data().chunks(s.w)) {
        for (d, v) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *v;
        }
    }
    out
}

/// Mirror every plane top-bottom.
pub fn flip_vertical(t: &Tensor) -> Tensor {
    let s = t.shape();
    let plane = s.h * s.w;
    let mut out = t.clone();
    for (dst, src) in out.data_mut().chunks_mut(plane).zip(t.data().chunks(plane)) {
        for y in 0..s.h {
            dst[y * s.w..(y + 1) * s.w].copy_from_slice(&src[(s.h - 1 - y) * s.w..(s.h - y) * s.w]);
        }
    }
    out
}

/// Rotate every plane by `deg` degrees about the image centre; samples
/// outside the frame clamp to the nearest edge pixel.
pub fn rotate(t: &Tensor, deg: f64, mode: ResampleMode) -> Tensor {
    let s = t.shape();
    let (h, w) = (s.h, s.w);
    let (sin, cos) = deg.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let at = |p: &[f64], y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        p[y * w + x]
    };
    let mut out = t.clone();
    let plane = h * w;
    for (dst, src) in out.data_mut().chunks_mut(plane).zip(t.data().chunks(plane)) {
        for y in 0..h {
            for x in 0..w {
                // inverse map of the pixel centre
                let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let sy = cos * py - sin * px + cy - 0.5;
                let sx = sin * py + cos * px + cx - 0.5;
                dst[y * w + x] = match mode {
                    ResampleMode::Nearest => at(src, sy.round() as isize, sx.round() as isize),
                    ResampleMode::Bilinear => {
                        let (y0, x0) = (sy.floor(), sx.floor());
                        let (ty, tx) = (sy - y0, sx - x0);
                        let (y0, x0) = (y0 as isize, x0 as isize);
                        let top = at(src, y0, x0) + tx * (at(src, y0, x0 + 1) - at(src, y0, x0));
                        let bot = at(src, y0 + 1, x0) + tx * (at(src, y0 + 1, x0 + 1) - at(src, y0 + 1, x0));
                        top + ty * (bot - top)
                    }
                };
            }
        }
    }
    out
}

/// Random flips and a small rotation. Image and mask move together; the
/// distance and boundary targets are re-derived from the moved mask.
pub fn augment<R: Rng + ?Sized>(sample: &SampleRecord, rng: &mut R, cfg: &AugmentConfig) -> SampleRecord {
    let hf = rng.gen_bool(cfg.hflip.clamp(0.0, 1.0));
    let vf = rng.gen_bool(cfg.vflip.clamp(0.0, 1.0));
    let deg = if cfg.max_rotation_deg > 0.0 {
        rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
    } else {
        0.0
    };
    if !hf && !vf && deg == 0.0 {
        return sample.clone();
    }
    let mut img = sample.image.clone();
    let mut mask = sample.gt.region.clone();
    if hf {
        img = flip_horizontal(&img);
        mask = flip_horizontal(&mask);
    }
    if vf {
        img = flip_vertical(&img);
        mask = flip_vertical(&mask);
    }
    if deg != 0.0 {
        img = rotate(&img, deg, ResampleMode::Bilinear);
        mask = rotate(&mask, deg, ResampleMode::Nearest);
    }
    SampleRecord {
        id: sample.id.clone(),
        image: img,
        gt: GroundTruth::from_region(&mask),
    }
}

/// Multi-scale factors applied per batch when enabled.
pub const MULTI_SCALE: [f64; 3] = [0.75, 1.0, 1.25];

/// `round(side * factor / 32) * 32` with ties to even, at least 32.
pub fn scaled_side(side: usize, factor: f64) -> usize {
    (((side as f64 * factor / 32.0).round_ties_even() as usize) * 32).max(32)
}

/// Resize a whole batch; masks use nearest sampling and targets are re-derived.
pub fn rescale_batch(images: &Tensor, region: &Tensor, h: usize, w: usize) -> Result<(Tensor, GroundTruth)> {
    let s = images.shape();
    if (s.h, s.w) == (h, w) {
        return Ok((images.clone(), GroundTruth::from_region(region)));
    }
    let x = resample(images, h, w, ResampleMode::Bilinear)?;
    let m = resample(region, h, w, ResampleMode::Nearest)?;
    Ok((x, GroundTruth::from_region(&m)))
}

/// Stack samples into one batch.
pub fn collate(samples: &[&SampleRecord]) -> Result<(Tensor, GroundTruth)> {
    let imgs: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
    let gts: Vec<GroundTruth> = samples.iter().map(|s| s.gt.clone()).collect();
    Ok((Tensor::stack_batch(&imgs)?, GroundTruth::stack(&gts)?))
}
