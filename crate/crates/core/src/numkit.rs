//! Dense arithmetic and seeded randomness.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. [`Matrix`] is a row-major dense
//! matrix. All randomness flows through [`Rng`], a ChaCha-backed generator
//! that can be forked by label into independent child streams, so that a run
//! is reproducible from `(base seed, label path)` alone.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    /// New matrix holding the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(v: &mut [f64], alpha: f64) {
    v.iter_mut().for_each(|x| *x *= alpha);
}

/// Linear-interpolated quantile of an unsorted sample; 0 for empty input.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantiles(values, &[p])[0]
}

/// Several quantiles of one sample, sharing a single scratch copy.
pub fn quantiles(values: &[f64], ps: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0; ps.len()];
    }
    let mut buf = Vec::new();
    ps.iter()
        .map(|&p| {
            let p = p.clamp(0.0, 1.0);
            if p == 1.0 {
                return values.iter().copied().max_by(f64::total_cmp).unwrap_or(0.0);
            }
            if buf.is_empty() {
                buf = values.to_vec();
            }
            let pos = p * (buf.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let (_, &mut below, above) = buf.select_nth_unstable_by(lo, f64::total_cmp);
            if frac == 0.0 {
                return below;
            }
            let next = above.iter().copied().min_by(f64::total_cmp).unwrap_or(below);
            below + (next - below) * frac
        })
        .collect()
}

/// Seeded generator with labeled forking.
///
/// A child produced by [`Rng::fork`] depends only on the parent's seed and
/// the label, never on how much of the parent stream was consumed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, label: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ fnv1a(label.as_bytes())))
    }

    pub fn fork_indexed(&self, label: &str, index: u64) -> Rng {
        Rng::new(splitmix64(
            splitmix64(self.seed ^ fnv1a(label.as_bytes())) ^ index,
        ))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `amount` distinct indices from `0..n`, returned in ascending order.
    pub fn sample_without_replacement(&mut self, n: usize, amount: usize) -> Vec<usize> {
        let mut picked = rand::seq::index::sample(&mut self.inner, n, amount.min(n)).into_vec();
        picked.sort_unstable();
        picked
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// I.i.d. `N(0, std²)` draws; `std == 0` yields exact zeros without consuming
/// randomness.
pub fn gaussian_vector(dim: usize, std: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::param(format!(
            "gaussian std must be finite and non-negative, got {std}"
        )));
    }
    if std == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    Ok((0..dim).map(|_| std * rng.standard_normal()).collect())
}

/// Poisson subsampling: each of `0..n` kept independently with probability `q`.
pub fn poisson_subsample(n: usize, q: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::param(format!("sampling rate must lie in [0, 1], got {q}")));
    }
    if q == 0.0 {
        return Ok(Vec::new());
    }
    if q == 1.0 {
        return Ok((0..n).collect());
    }
    Ok((0..n).filter(|_| rng.uniform() < q).collect())
}
