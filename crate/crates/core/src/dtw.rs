//! Dynamic time warping between frame sequences, used as a non-embedding
//! same-different baseline.

use crate::corpus::Segment;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtwConfig {
    /// Divide the accumulated cost by the number of aligned frame pairs.
    pub normalize: bool,
}

impl Default for DtwConfig {
    fn default() -> Self {
        DtwConfig { normalize: true }
    }
}

/// Minimum accumulated cosine frame cost over monotone alignments with steps
/// (1,0), (0,1), (1,1). Among equal-cost paths the shortest is used for the
/// length normalisation.
pub fn dtw_frames(a: &Matrix, b: &Matrix, cfg: DtwConfig) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "frame dimensions differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let (n, m) = (a.rows(), b.rows());
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("DTW needs at least one frame per sequence".into()));
    }
    let norms_a: Vec<f64> = a.iter_rows().map(crate::matrix::norm).collect();
    let norms_b: Vec<f64> = b.iter_rows().map(crate::matrix::norm).collect();
    // (cost, path length) per cell, one row at a time
    let mut prev: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    let mut cur: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    for i in 0..n {
        for j in 0..m {
            let c = frame_cost(a.row(i), norms_a[i], b.row(j), norms_b[j]);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                if i > 0 && j > 0 {
                    best = prev[j - 1];
                }
                if i > 0 && lex_less(prev[j], best) {
                    best = prev[j];
                }
                if j > 0 && lex_less(cur[j - 1], best) {
                    best = cur[j - 1];
                }
                best
            };
            cur[j] = (best.0 + c, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    Ok(if cfg.normalize { cost / len as f64 } else { cost })
}

#[inline]
fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[inline]
fn frame_cost(x: &[f64], nx: f64, y: &[f64], ny: f64) -> f64 {
    if nx == 0.0 || ny == 0.0 {
        1.0
    } else {
        1.0 - crate::matrix::dot(x, y) / (nx * ny)
    }
}

/// Length-normalised DTW cost between two segments.
pub fn dtw_cost(a: &Segment, b: &Segment) -> Result<f64> {
    dtw_frames(a.frames(), b.frames(), DtwConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::cosine_distance;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use rand::Rng;

    /// Exhaustive search over all monotone paths: lexicographic minimum of
    /// (accumulated cost, length).
    pub(crate) fn brute_force(a: &Matrix, b: &Matrix, normalize: bool) -> f64 {
        fn walk(a: &Matrix, b: &Matrix, i: usize, j: usize, acc: f64, len: usize, best: &mut (f64, usize)) {
            let acc = acc + cosine_distance(a.row(i), b.row(j));
            let len = len + 1;
            if i + 1 == a.rows() && j + 1 == b.rows() {
                if acc < best.0 || (acc == best.0 && len < best.1) {
                    *best = (acc, len);
                }
                return;
            }
            if i + 1 < a.rows() && j + 1 < b.rows() {
                walk(a, b, i + 1, j + 1, acc, len, best);
            }
            if i + 1 < a.rows() {
                walk(a, b, i + 1, j, acc, len, best);
            }
            if j + 1 < b.rows() {
                walk(a, b, i, j + 1, acc, len, best);
            }
        }
        let mut best = (f64::INFINITY, usize::MAX);
        walk(a, b, 0, 0, 0.0, 0, &mut best);
        if normalize {
            best.0 / best.1 as f64
        } else {
            best.0
        }
    }

    fn random_frames(rng: &mut SplitMix64, t: usize, d: usize) -> Matrix {
        let data = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(t, d, data).unwrap()
    }

    #[test]
    fn identical_sequences_cost_zero() {
        let mut rng = SplitMix64::new(3);
        let a = random_frames(&mut rng, 7, 4);
        assert!(dtw_frames(&a, &a, DtwConfig::default()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_frames() {
        let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!((dtw_frames(&a, &b, DtwConfig::default()).unwrap() - 1.0).abs() < 1e-15);
        let z = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert_eq!(dtw_frames(&a, &z, DtwConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(dtw_frames(&a, &b, DtwConfig::default()).is_err());
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = SplitMix64::new(42);
        for _ in 0..50 {
            let ta = rng.random_range(1..=6);
            let tb = rng.random_range(1..=6);
            let a = random_frames(&mut rng, ta, 3);
            let b = random_frames(&mut rng, tb, 3);
            for normalize in [true, false] {
                let got = dtw_frames(&a, &b, DtwConfig { normalize }).unwrap();
                assert_eq!(got, brute_force(&a, &b, normalize));
            }
        }
    }

    #[test]
    fn kernel_matches_cosine_distance() {
        let x = [0.3, -1.2, 2.0];
        let y = [1.0, 0.5, -0.25];
        let c = frame_cost(&x, crate::matrix::norm(&x), &y, crate::matrix::norm(&y));
        assert_eq!(c, cosine_distance(&x, &y));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(seed in 0u64..10_000, ta in 1usize..9, tb in 1usize..9) {
            let mut rng = SplitMix64::new(seed);
            let a = random_frames(&mut rng, ta, 3);
            let b = random_frames(&mut rng, tb, 3);
            let ab = dtw_frames(&a, &b, DtwConfig::default()).unwrap();
            let ba = dtw_frames(&b, &a, DtwConfig::default()).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&ab));
        }
    }
}
