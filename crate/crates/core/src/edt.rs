//! Exact Euclidean distance transform with nearest-site indices
//! (separable lower envelope of parabolas).

const FAR: f64 = 1e20;

/// Squared distance and flat index of the nearest site for every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Edt {
    pub squared: Vec<f64>,
    pub nearest: Vec<usize>,
}

struct Scratch {
    v: Vec<usize>,
    z: Vec<f64>,
}

/// 1-D pass. Entries `>= FAR` are not sites. Writes the squared distance and
/// the position of the chosen site; ties go to the earlier site.
fn dt1d(f: &[f64], d: &mut [f64], arg: &mut [usize], s: &mut Scratch) -> bool {
    let (v, z) = (&mut s.v, &mut s.z);
    let mut k: Option<usize> = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq >= FAR {
            continue;
        }
        let qf = q as f64;
        let Some(mut kk) = k else {
            k = Some(0);
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        };
        let sep = loop {
            let p = v[kk] as f64;
            let sep = ((fq + qf * qf) - (f[v[kk]] + p * p)) / (2.0 * (qf - p));
            if sep <= z[kk] {
                // z[0] is -inf, so the first parabola is never popped
                kk -= 1;
            } else {
                break sep;
            }
        };
        kk += 1;
        v[kk] = q;
        z[kk] = sep;
        z[kk + 1] = f64::INFINITY;
        k = Some(kk);
    }
    if k.is_none() {
        return false;
    }
    let mut kk = 0;
    for q in 0..f.len() {
        while z[kk + 1] < q as f64 {
            kk += 1;
        }
        let dq = q as f64 - v[kk] as f64;
        d[q] = dq * dq + f[v[kk]];
        arg[q] = v[kk];
    }
    true
}

/// Distance transform of an `h x w` grid where `site(i)` marks the sites.
/// `None` when the grid holds no site.
pub fn edt(h: usize, w: usize, site: impl Fn(usize) -> bool) -> Option<Edt> {
    let mut grid: Vec<f64> = (0..h * w).map(|i| if site(i) { 0.0 } else { FAR }).collect();
    if !grid.iter().any(|&v| v == 0.0) {
        return None;
    }
    let n = h.max(w);
    let mut scratch = Scratch {
        v: vec![0; n],
        z: vec![0.0; n + 1],
    };
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut arg = vec![0usize; n];
    // nearest site row, per column
    let mut row_of = vec![0usize; h * w];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        let found = dt1d(&f[..h], &mut d[..h], &mut arg[..h], &mut scratch);
        for y in 0..h {
            grid[y * w + x] = if found { d[y] } else { FAR };
            row_of[y * w + x] = arg[y];
        }
    }
    let mut nearest = vec![0usize; h * w];
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt1d(&f[..w], &mut d[..w], &mut arg[..w], &mut scratch);
        for x in 0..w {
            grid[y * w + x] = d[x];
            let col = arg[x];
            nearest[y * w + x] = row_of[y * w + col] * w + col;
        }
    }
    Some(Edt { squared: grid, nearest })
}
