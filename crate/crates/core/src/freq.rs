//! 2-D DCT basis images and frequency-index selection.
//!
//! Frequencies are chosen on a fixed base grid (8x8 by default) and then
//! rescaled to the resolution of each scale branch with
//! `u' = floor(u * H_s / G_h)`.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::rc::Rc;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor, Var};

pub const BASE_GRID: (usize, usize) = (8, 8);

/// Shipped ranking for the `Top` strategy.
pub const DEFAULT_TOP_TABLE: &str = include_str!("../data/top_frequencies.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Top,
    Bot,
    Low,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "top" => Ok(Strategy::Top),
            "bot" => Ok(Strategy::Bot),
            "low" => Ok(Strategy::Low),
            other => Err(Error::Config(format!(
                "unknown frequency strategy {other:?} (expected top, bot or low)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Top => "top",
            Strategy::Bot => "bot",
            Strategy::Low => "low",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencySet {
    pub strategy: Strategy,
    pub grid: (usize, usize),
    pub indices: Vec<(usize, usize)>,
}

impl FrequencySet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// JPEG zigzag traversal of a `rows x cols` grid starting at `(0, 0)`.
pub fn zigzag(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(rows * cols);
    if rows == 0 || cols == 0 {
        return out;
    }
    for d in 0..rows + cols - 1 {
        let lo = d.saturating_sub(cols - 1);
        let hi = d.min(rows - 1);
        if d % 2 == 0 {
            // up and to the right: row decreasing
            for r in (lo..=hi).rev() {
                out.push((r, d - r));
            }
        } else {
            for r in lo..=hi {
                out.push((r, d - r));
            }
        }
    }
    out
}

/// Parse a frequency table: one `u v` pair per line, `#` starts a comment.
pub fn parse_table(text: &str, grid: (usize, usize)) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Config(format!("frequency table line {}: expected \"u v\", got {raw:?}", lineno + 1));
        let mut parts = line.split_whitespace();
        let u: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let v: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        if u >= grid.0 || v >= grid.1 {
            return Err(Error::Config(format!(
                "frequency table line {}: ({u}, {v}) outside the {}x{} grid",
                lineno + 1,
                grid.0,
                grid.1
            )));
        }
        if out.contains(&(u, v)) {
            return Err(Error::Config(format!(
                "frequency table line {}: duplicate pair ({u}, {v})",
                lineno + 1
            )));
        }
        out.push((u, v));
    }
    Ok(out)
}

pub fn load_table(path: &Path, grid: (usize, usize)) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text, grid)
}

/// Pick `k` frequencies. `Top` reads `top_table` (or the shipped default).
pub fn select_frequencies(
    strategy: Strategy,
    k: usize,
    grid: (usize, usize),
    top_table: Option<&[(usize, usize)]>,
) -> Result<FrequencySet> {
    let cells = grid.0 * grid.1;
    if k == 0 || k > cells {
        return Err(Error::Contract(format!(
            "K = {k} outside 1..={cells} for a {}x{} grid",
            grid.0, grid.1
        )));
    }
    let indices = match strategy {
        Strategy::Low => zigzag(grid.0, grid.1).into_iter().take(k).collect(),
        Strategy::Bot => zigzag(grid.0, grid.1).into_iter().rev().take(k).collect(),
        Strategy::Top => {
            let owned;
            let table = match top_table {
                Some(t) => t,
                None => {
                    owned = parse_table(DEFAULT_TOP_TABLE, grid)?;
                    &owned
                }
            };
            if table.len() < k {
                return Err(Error::Contract(format!(
                    "K = {k} but the Top table lists only {} pairs",
                    table.len()
                )));
            }
            table[..k].to_vec()
        }
    };
    Ok(FrequencySet {
        strategy,
        grid,
        indices,
    })
}

/// `K` basis images at one branch resolution.
#[derive(Clone, Debug)]
pub struct DctBasis {
    pub height: usize,
    pub width: usize,
    /// Frequency pairs after rescaling to `(height, width)`.
    pub scaled: Vec<(usize, usize)>,
    /// `(K, 1, H, W)`.
    pub images: Tensor,
}

/// `cos(pi * u * (h + 1/2) / n)` for `h in 0..n`.
fn cosine_row(u: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|h| (PI * u as f64 * (h as f64 + 0.5) / n as f64).cos())
        .collect()
}

pub fn build_basis(freqs: &FrequencySet, height: usize, width: usize) -> Result<DctBasis> {
    if height == 0 || width == 0 {
        return Err(Error::Contract(format!(
            "basis resolution must be positive, got {height}x{width}"
        )));
    }
    let (gh, gw) = freqs.grid;
    let scaled: Vec<(usize, usize)> = freqs
        .indices
        .iter()
        .map(|&(u, v)| ((u * height / gh).min(height - 1), (v * width / gw).min(width - 1)))
        .collect();
    let mut data = Vec::with_capacity(scaled.len() * height * width);
    for &(u, v) in &scaled {
        let rows = cosine_row(u, height);
        let cols = cosine_row(v, width);
        for r in &rows {
            data.extend(cols.iter().map(|c| r * c));
        }
    }
    let images = Tensor::from_vec(Shape::new(scaled.len(), 1, height, width), data)?;
    Ok(DctBasis {
        height,
        width,
        scaled,
        images,
    })
}

/// Per-channel DCT coefficients, `(N, C, H, W) -> (N, C, K, 1)`.
pub fn dct_coefficients<'t>(x: Var<'t>, basis: &DctBasis) -> Result<Var<'t>> {
    let s = x.shape();
    if (s.h, s.w) != (basis.height, basis.width) {
        return Err(Error::dim(
            "dct_coefficients",
            format!(
                "H/W: input is {}x{}, basis is {}x{}",
                s.h, s.w, basis.height, basis.width
            ),
        ));
    }
    x.project(Rc::new(basis.images.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn zigzag_prefix_matches_jpeg() {
        let z = zigzag(8, 8);
        assert_eq!(
            &z[..10],
            &[(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1), (3, 0)]
        );
        assert_eq!(z.last(), Some(&(7, 7)));
        assert_eq!(&z[60..], &[(5, 7), (6, 7), (7, 6), (7, 7)]);
    }

    #[test]
    fn zigzag_covers_rectangular_grids() {
        for (r, c) in [(1, 1), (2, 5), (5, 2), (3, 3), (8, 4)] {
            let mut z = zigzag(r, c);
            assert_eq!(z.len(), r * c);
            z.sort_unstable();
            z.dedup();
            assert_eq!(z.len(), r * c);
        }
    }

    #[test]
    fn strategy_examples() {
        let low = select_frequencies(Strategy::Low, 1, BASE_GRID, None).unwrap();
        assert_eq!(low.indices, vec![(0, 0)]);
        let bot = select_frequencies(Strategy::Bot, 1, BASE_GRID, None).unwrap();
        assert_eq!(bot.indices, vec![(7, 7)]);
        let low3 = select_frequencies(Strategy::Low, 3, BASE_GRID, None).unwrap();
        assert_eq!(low3.indices, vec![(0, 0), (0, 1), (1, 0)]);
        let top = select_frequencies(Strategy::Top, 16, BASE_GRID, None).unwrap();
        assert_eq!(top.indices.len(), 16);
        assert_eq!(top.indices[0], (0, 0));
    }

    #[test]
    fn k_out_of_range() {
        assert!(select_frequencies(Strategy::Low, 0, BASE_GRID, None).is_err());
        assert!(select_frequencies(Strategy::Low, 65, BASE_GRID, None).is_err());
        assert!(select_frequencies(Strategy::Top, 33, BASE_GRID, None).is_err());
        assert!(select_frequencies(Strategy::Bot, 64, BASE_GRID, None).is_ok());
    }

    #[test]
    fn low_and_bot_partition_the_grid() {
        for k in 0..=64 {
            let mut all: Vec<_> = Vec::new();
            if k > 0 {
                all.extend(select_frequencies(Strategy::Low, k, BASE_GRID, None).unwrap().indices);
            }
            if k < 64 {
                all.extend(select_frequencies(Strategy::Bot, 64 - k, BASE_GRID, None).unwrap().indices);
            }
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 64, "k = {k}");
        }
    }

    #[test]
    fn table_parsing_validates() {
        assert_eq!(parse_table("0 1\n# c\n\n2 3 # x\n", BASE_GRID).unwrap(), vec![(0, 1), (2, 3)]);
        assert!(parse_table("8 0\n", BASE_GRID).is_err());
        assert!(parse_table("1\n", BASE_GRID).is_err());
        assert!(parse_table("1 2 3\n", BASE_GRID).is_err());
        assert!(parse_table("1 1\n1 1\n", BASE_GRID).is_err());
        let shipped = parse_table(DEFAULT_TOP_TABLE, BASE_GRID).unwrap();
        assert_eq!(shipped.len(), 32);
    }

    #[test]
    fn dc_basis_is_all_ones() {
        let f = select_frequencies(Strategy::Low, 1, BASE_GRID, None).unwrap();
        for (h, w) in [(1, 1), (3, 7), (16, 16)] {
            let b = build_basis(&f, h, w).unwrap();
            assert!(b.images.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn first_vertical_frequency_on_two_rows() {
        let f = FrequencySet {
            strategy: Strategy::Top,
            grid: (2, 2),
            indices: vec![(1, 0)],
        };
        let b = build_basis(&f, 2, 3).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for w in 0..3 {
            assert!((b.images.at(0, 0, 0, w) - r).abs() < 1e-15);
            assert!((b.images.at(0, 0, 1, w) + r).abs() < 1e-15);
        }
    }

    #[test]
    fn indices_scale_to_branch_resolution() {
        let f = FrequencySet {
            strategy: Strategy::Top,
            grid: BASE_GRID,
            indices: vec![(7, 5), (1, 1)],
        };
        let b = build_basis(&f, 4, 16).unwrap();
        assert_eq!(b.scaled, vec![(3, 10), (0, 2)]);
    }

    #[test]
    fn coefficients_of_constant_map() {
        let f = select_frequencies(Strategy::Low, 6, BASE_GRID, None).unwrap();
        let b = build_basis(&f, 8, 8).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(Shape::new(1, 2, 8, 8), 0.3));
        let c = dct_coefficients(x, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 2, 6, 1));
        let v = c.value();
        for ch in 0..2 {
            assert!((v.at(0, ch, 0, 0) - 0.3 * 64.0).abs() < 1e-12);
            for k in 1..6 {
                assert!(v.at(0, ch, k, 0).abs() < 1e-9);
            }
        }
        let wrong = build_basis(&f, 4, 8).unwrap();
        assert!(dct_coefficients(x, &wrong).is_err());
    }
}
