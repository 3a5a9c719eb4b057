//! Tape-free forward and backward kernels.
//!
//! Convolution is lowered to im2col followed by a GEMM; the nested-loop
//! reference in the tests is the definition of correctness.

use rayon::prelude::*;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1 with the padding that keeps spatial size for an odd kernel `k`.
    pub const fn same(k: usize, dilation: usize) -> Self {
        ConvSpec {
            stride: 1,
            padding: dilation * (k - 1) / 2,
            dilation,
        }
    }

    pub fn out_dim(&self, input: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec::same(1, 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolStat {
    Avg,
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ResampleMode {
    #[default]
    Bilinear,
    Nearest,
}

/// `C = A·B + beta·C` over row/column strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every offset the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    c_in: usize,
    c_out: usize,
    k: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl ConvGeom {
    fn new(x: Shape, wt: Shape, spec: ConvSpec) -> Result<Self> {
        if wt.h != wt.w {
            return Err(Error::dim(
                "conv2d",
                format!("kernel must be square, got {}x{}", wt.h, wt.w),
            ));
        }
        if wt.c != x.c {
            return Err(Error::dim(
                "conv2d",
                format!("C_in: input has {} channels, weight expects {}", x.c, wt.c),
            ));
        }
        let k = wt.h;
        let (oh, ow) = match (spec.out_dim(x.h, k), spec.out_dim(x.w, k)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("H/W: input {}x{} too small for kernel {k} with {spec:?}", x.h, x.w),
                ))
            }
        };
        Ok(ConvGeom {
            c_in: x.c,
            c_out: wt.n,
            k,
            h: x.h,
            w: x.w,
            oh,
            ow,
            spec,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    /// Source coordinate for output `o` and tap `t`, if inside the input.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let p = (o * self.spec.stride + t * self.spec.dilation) as isize - self.spec.padding as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.cols();
        for ci in 0..self.c_in {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let row = (ci * self.k + kh) * self.k + kw;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, kh, self.h) {
                            None => line.fill(0.0),
                            Some(iy) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.src(ox, kw, self.w) {
                                        Some(ix) => plane[iy * self.w + ix],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let p = self.cols();
        for ci in 0..self.c_in {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for kh in 0..self.k {
                for kw in 0..self.k {
                    let row = (ci * self.k + kh) * self.k + kw;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, kh, self.h) else {
                            continue;
                        };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kw, self.w) {
                                plane[iy * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(bias: Option<&Tensor>, c_out: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != Shape::new(c_out, 1, 1, 1) {
            return Err(Error::dim(
                op,
                format!("bias must be ({c_out}, 1, 1, 1), got {}", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Cross-correlation of `x` `(N, C_in, H, W)` with `weight` `(C_out, C_in, k, k)`.
/// Bias, when present, has shape `(C_out, 1, 1, 1)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let xs = x.shape();
    let g = ConvGeom::new(xs, weight.shape(), spec)?;
    check_bias(bias, g.c_out, "conv2d")?;
    let out_shape = Shape::new(xs.n, g.c_out, g.oh, g.ow);
    let mut out = Tensor::zeros(out_shape);
    let in_per = xs.c * xs.plane();
    let out_per = g.c_out * g.cols();
    let wdata = weight.data();
    out.data_mut()
        .par_chunks_mut(out_per)
        .zip(x.data().par_chunks(in_per))
        .for_each(|(y, xn)| {
            let owned;
            let cols: &[f64] = if g.is_pointwise() {
                xn
            } else {
                let mut buf = vec![0.0; g.rows() * g.cols()];
                g.im2col(xn, &mut buf);
                owned = buf;
                &owned
            };
            gemm(
                g.c_out,
                g.rows(),
                g.cols(),
                wdata,
                (g.rows(), 1),
                cols,
                (g.cols(), 1),
                0.0,
                y,
            );
            if let Some(b) = bias {
                for (co, chunk) in y.chunks_mut(g.cols()).enumerate() {
                    let bv = b.data()[co];
                    chunk.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Tensor,
}

/// Gradients of [`conv2d`] given the upstream gradient `gy`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    gy: &Tensor,
    spec: ConvSpec,
    need_input: bool,
    need_weight: bool,
) -> Result<ConvGrads> {
    let xs = x.shape();
    let g = ConvGeom::new(xs, weight.shape(), spec)?;
    let expect = Shape::new(xs.n, g.c_out, g.oh, g.ow);
    if gy.shape() != expect {
        return Err(Error::dim(
            "conv2d_backward",
            format!("upstream gradient {} vs output {}", gy.shape(), expect),
        ));
    }
    let in_per = xs.c * xs.plane();
    let out_per = g.c_out * g.cols();
    let wdata = weight.data();

    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = x
        .data()
        .par_chunks(in_per)
        .zip(gy.data().par_chunks(out_per))
        .map(|(xn, gyn)| {
            let mut gx = Vec::new();
            let mut gw = Vec::new();
            if need_input {
                gx = vec![0.0; in_per];
                if g.is_pointwise() {
                    gemm(
                        g.rows(),
                        g.c_out,
                        g.cols(),
                        wdata,
                        (1, g.rows()),
                        gyn,
                        (g.cols(), 1),
                        0.0,
                        &mut gx,
                    );
                } else {
                    let mut gcols = vec![0.0; g.rows() * g.cols()];
                    gemm(
                        g.rows(),
                        g.c_out,
                        g.cols(),
                        wdata,
                        (1, g.rows()),
                        gyn,
                        (g.cols(), 1),
                        0.0,
                        &mut gcols,
                    );
                    g.col2im(&gcols, &mut gx);
                }
            }
            if need_weight {
                gw = vec![0.0; g.c_out * g.rows()];
                let owned;
                let cols: &[f64] = if g.is_pointwise() {
                    xn
                } else {
                    let mut buf = vec![0.0; g.rows() * g.cols()];
                    g.im2col(xn, &mut buf);
                    owned = buf;
                    &owned
                };
                gemm(
                    g.c_out,
                    g.cols(),
                    g.rows(),
                    gyn,
                    (g.cols(), 1),
                    cols,
                    (1, g.cols()),
                    0.0,
                    &mut gw,
                );
            }
            (gx, gw)
        })
        .collect();

    let input = if need_input {
        let mut data = Vec::with_capacity(xs.numel());
        for (gx, _) in &per_sample {
            data.extend_from_slice(gx);
        }
        Some(Tensor::from_vec(xs, data)?)
    } else {
        None
    };
    let weight_grad = if need_weight {
        let mut acc = vec![0.0; g.c_out * g.rows()];
        for (_, gw) in &per_sample {
            for (a, b) in acc.iter_mut().zip(gw) {
                *a += b;
            }
        }
        Some(Tensor::from_vec(weight.shape(), acc)?)
    } else {
        None
    };
    let mut gb = vec![0.0; g.c_out];
    for n in 0..xs.n {
        for (co, acc) in gb.iter_mut().enumerate() {
            let start = n * out_per + co * g.cols();
            *acc += gy.data()[start..start + g.cols()].iter().sum::<f64>();
        }
    }
    Ok(ConvGrads {
        input,
        weight: weight_grad,
        bias: Tensor::from_vec(Shape::new(g.c_out, 1, 1, 1), gb)?,
    })
}

/// Per-channel spatial statistic. For max/min the second value holds the
/// in-plane index of the first attaining element in row-major order.
pub fn global_pool(x: &Tensor, stat: PoolStat) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::dim("global_pool", "H*W is zero"));
    }
    let mut out = Vec::with_capacity(s.n * s.c);
    let mut arg = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            match stat {
                PoolStat::Avg => out.push(plane.iter().sum::<f64>() / plane.len() as f64),
                PoolStat::Max | PoolStat::Min => {
                    let mut best = 0;
                    for (i, &v) in plane.iter().enumerate().skip(1) {
                        let better = match stat {
                            PoolStat::Max => v > plane[best],
                            _ => v < plane[best],
                        };
                        if better {
                            best = i;
                        }
                    }
                    out.push(plane[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), out)?, arg))
}

pub fn global_pool_backward(in_shape: Shape, gy: &Tensor, stat: PoolStat, arg: &[usize]) -> Tensor {
    let mut gx = Tensor::zeros(in_shape);
    let plane = in_shape.plane();
    let data = gx.data_mut();
    for (i, &g) in gy.data().iter().enumerate() {
        let base = i * plane;
        match stat {
            PoolStat::Avg => {
                let share = g / plane as f64;
                data[base..base + plane].iter_mut().for_each(|v| *v += share);
            }
            PoolStat::Max | PoolStat::Min => data[base + arg[i]] += g,
        }
    }
    gx
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn taps(input: usize, output: usize, mode: ResampleMode) -> Vec<Tap> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| match mode {
            ResampleMode::Nearest => {
                let i = (((o as f64 + 0.5) * ratio).floor() as usize).min(input - 1);
                Tap {
                    i0: i,
                    i1: i,
                    frac: 0.0,
                }
            }
            ResampleMode::Bilinear => {
                let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (input - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(input - 1);
                Tap {
                    i0,
                    i1,
                    frac: src - i0 as f64,
                }
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Resize every plane to `out_h x out_w` with half-pixel centres.
/// Bilinear output is written in `a + t(b - a)` form, so constant planes
/// come back unchanged bit for bit.
pub fn resample(x: &Tensor, out_h: usize, out_w: usize, mode: ResampleMode) -> Result<Tensor> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::dim(
            "resample",
            format!("H/W: cannot resize {}x{} to {out_h}x{out_w}", s.h, s.w),
        ));
    }
    let ty = taps(s.h, out_h, mode);
    let tx = taps(s.w, out_w, mode);
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let p = x.plane(n, c);
            for y in &ty {
                let r0 = &p[y.i0 * s.w..(y.i0 + 1) * s.w];
                let r1 = &p[y.i1 * s.w..(y.i1 + 1) * s.w];
                for t in &tx {
                    let top = lerp(r0[t.i0], r0[t.i1], t.frac);
                    let bot = lerp(r1[t.i0], r1[t.i1], t.frac);
                    out.push(lerp(top, bot, y.frac));
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn resample_backward(in_shape: Shape, gy: &Tensor, mode: ResampleMode) -> Tensor {
    let gs = gy.shape();
    let ty = taps(in_shape.h, gs.h, mode);
    let tx = taps(in_shape.w, gs.w, mode);
    let mut gx = Tensor::zeros(in_shape);
    let w = in_shape.w;
    let gxd = gx.data_mut();
    for n in 0..gs.n {
        for c in 0..gs.c {
            let gp = gy.plane(n, c);
            let base = in_shape.index(n, c, 0, 0);
            for (oy, y) in ty.iter().enumerate() {
                for (ox, t) in tx.iter().enumerate() {
                    let g = gp[oy * gs.w + ox];
                    let (wy0, wy1) = (1.0 - y.frac, y.frac);
                    let (wx0, wx1) = (1.0 - t.frac, t.frac);
                    gxd[base + y.i0 * w + t.i0] += g * wy0 * wx0;
                    gxd[base + y.i0 * w + t.i1] += g * wy0 * wx1;
                    gxd[base + y.i1 * w + t.i0] += g * wy1 * wx0;
                    gxd[base + y.i1 * w + t.i1] += g * wy1 * wx1;
                }
            }
        }
    }
    gx
}

/// Fully connected map on `(N, C_in, 1, 1)` with weight `(C_out, C_in, 1, 1)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.h != 1 || xs.w != 1 || ws.h != 1 || ws.w != 1 {
        return Err(Error::dim(
            "linear",
            format!("H/W must be 1: input {xs}, weight {ws}"),
        ));
    }
    if ws.c != xs.c {
        return Err(Error::dim(
            "linear",
            format!("C_in: input has {}, weight expects {}", xs.c, ws.c),
        ));
    }
    check_bias(bias, ws.n, "linear")?;
    let mut out = Vec::with_capacity(xs.n * ws.n);
    for n in 0..xs.n {
        let row = &x.data()[n * xs.c..(n + 1) * xs.c];
        for o in 0..ws.n {
            let wrow = &weight.data()[o * ws.c..(o + 1) * ws.c];
            let mut acc: f64 = wrow.iter().zip(row).map(|(a, b)| a * b).sum();
            if let Some(b) = bias {
                acc += b.data()[o];
            }
            out.push(acc);
        }
    }
    Tensor::from_vec(Shape::new(xs.n, ws.n, 1, 1), out)
}

/// Projection of each `(H, W)` plane onto `K` basis images stored as
/// `(K, 1, H, W)`; the result is `(N, C, K, 1)`.
pub fn project(x: &Tensor, basis: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let bs = basis.shape();
    if bs.c != 1 || (bs.h, bs.w) != (xs.h, xs.w) {
        return Err(Error::dim(
            "project",
            format!("H/W: basis is {}x{}, input is {}x{}", bs.h, bs.w, xs.h, xs.w),
        ));
    }
    let k = bs.n;
    let plane = xs.plane();
    let mut out = Vec::with_capacity(xs.n * xs.c * k);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let p = x.plane(n, c);
            for b in 0..k {
                let img = &basis.data()[b * plane..(b + 1) * plane];
                out.push(p.iter().zip(img).map(|(a, d)| a * d).sum());
            }
        }
    }
    Tensor::from_vec(Shape::new(xs.n, xs.c, k, 1), out)
}

pub fn project_backward(in_shape: Shape, basis: &Tensor, gy: &Tensor) -> Tensor {
    let k = basis.shape().n;
    let plane = in_shape.plane();
    let mut gx = Tensor::zeros(in_shape);
    let gxd = gx.data_mut();
    for nc in 0..in_shape.n * in_shape.c {
        let dst = &mut gxd[nc * plane..(nc + 1) * plane];
        for b in 0..k {
            let g = gy.data()[nc * k + b];
            let img = &basis.data()[b * plane..(b + 1) * plane];
            for (d, v) in dst.iter_mut().zip(img) {
                *d += g * v;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dim_formula() {
        let s = ConvSpec {
            stride: 2,
            padding: 1,
            dilation: 1,
        };
        assert_eq!(s.out_dim(8, 3), Some(4));
        assert_eq!(ConvSpec::same(3, 2).out_dim(5, 3), Some(5));
        assert_eq!(ConvSpec { stride: 1, padding: 0, dilation: 3 }.out_dim(5, 3), None);
    }

    #[test]
    fn box_sum_on_ones() {
        let x = Tensor::ones(Shape::new(1, 1, 3, 3));
        let w = Tensor::ones(Shape::new(1, 1, 3, 3));
        let y = conv2d(&x, &w, None, ConvSpec::same(3, 1)).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, h, w), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::ones(Shape::new(1, 2, 4, 4));
        let w = Tensor::ones(Shape::new(1, 3, 3, 3));
        let err = conv2d(&x, &w, None, ConvSpec::same(3, 1)).unwrap_err();
        assert!(err.to_string().contains("C_in"), "{err}");
        let bad_bias = Tensor::ones(Shape::new(2, 1, 1, 1));
        let w = Tensor::ones(Shape::new(1, 2, 3, 3));
        assert!(conv2d(&x, &w, Some(&bad_bias), ConvSpec::same(3, 1)).is_err());
    }

    #[test]
    fn pooling_small_map() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_pool(&x, PoolStat::Avg).unwrap().0.data(), &[2.5]);
        assert_eq!(global_pool(&x, PoolStat::Max).unwrap().0.data(), &[4.0]);
        assert_eq!(global_pool(&x, PoolStat::Min).unwrap().0.data(), &[1.0]);
        let c = Tensor::full(Shape::new(1, 2, 3, 3), 3.2);
        for stat in [PoolStat::Avg, PoolStat::Max, PoolStat::Min] {
            let (y, _) = global_pool(&c, stat).unwrap();
            assert!(y.data().iter().all(|&v| (v - 3.2).abs() < 1e-15));
        }
    }

    #[test]
    fn pooling_ties_pick_first() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![5.0, 5.0, 1.0, 1.0]).unwrap();
        let (_, arg) = global_pool(&x, PoolStat::Max).unwrap();
        assert_eq!(arg, vec![0]);
        let (_, arg) = global_pool(&x, PoolStat::Min).unwrap();
        assert_eq!(arg, vec![2]);
        let empty = Tensor::zeros(Shape::new(1, 1, 0, 3));
        assert!(global_pool(&empty, PoolStat::Avg).is_err());
    }

    #[test]
    fn bilinear_half_pixel_row() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let y = resample(&x, 1, 4, ResampleMode::Bilinear).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn halving_is_block_average() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let y = resample(&x, 1, 1, ResampleMode::Bilinear).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn constants_survive_resampling() {
        let x = Tensor::full(Shape::new(1, 2, 5, 3), 7.0);
        for mode in [ResampleMode::Bilinear, ResampleMode::Nearest] {
            let up = resample(&x, 20, 12, mode).unwrap();
            assert!(up.data().iter().all(|&v| v == 7.0));
            let down = resample(&up, 3, 2, mode).unwrap();
            let back = resample(&down, 5, 3, mode).unwrap();
            assert!(back.data().iter().all(|&v| v == 7.0));
        }
        assert!(resample(&x, 0, 3, ResampleMode::Bilinear).is_err());
    }

    #[test]
    fn linear_identity_and_ones() {
        let x = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let mut eye = Tensor::zeros(Shape::new(3, 3, 1, 1));
        for i in 0..3 {
            eye.set(i, i, 0, 0, 1.0);
        }
        assert_eq!(linear(&x, &eye, None).unwrap().data(), x.data());
        let ones = Tensor::ones(Shape::new(2, 3, 1, 1));
        assert_eq!(linear(&x, &ones, None).unwrap().data(), &[6.0, 6.0]);
        let bad = Tensor::ones(Shape::new(2, 4, 1, 1));
        assert!(linear(&x, &bad, None).is_err());
    }
}
