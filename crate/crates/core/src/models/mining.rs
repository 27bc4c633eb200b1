use crate::error::{Error, Result};
use crate::matrix::squared_distance;

/// Batch indices of an (anchor, positive, negative) triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One triplet per ordered positive pair (a, p). The negative is the closest
/// one still farther from the anchor than the positive; when no negative is
/// that far, the farthest negative. Distances are squared Euclidean, ties go
/// to the lowest batch index.
pub fn mine_semi_hard<E: AsRef<[f64]>>(embeddings: &[E], labels: &[usize]) -> Result<Vec<Triplet>> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    if n > 0 && labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::InsufficientData("batch holds a single class, no negatives".into()));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(embeddings[i].as_ref(), embeddings[j].as_ref());
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = dist[a * n + p];
            let mut semi: Option<(f64, usize)> = None;
            let mut far: Option<(f64, usize)> = None;
            for (m, &lm) in labels.iter().enumerate() {
                if lm == labels[a] {
                    continue;
                }
                let d = dist[a * n + m];
                if d > d_ap && semi.is_none_or(|(best, _)| d < best) {
                    semi = Some((d, m));
                }
                if far.is_none_or(|(best, _)| d > best) {
                    far = Some((d, m));
                }
            }
            let (_, negative) = semi.or(far).expect("a negative exists");
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn picks_the_unique_semi_hard_negative() {
        // class 0 at indices 0, 1; class 1 at 2, 3
        let z = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.0], vec![3.0, 0.0]];
        let t = mine_semi_hard(&z, &[0, 0, 1, 1]).unwrap();
        let first = t.iter().find(|t| t.anchor == 0 && t.positive == 1).unwrap();
        assert_eq!(first.negative, 3);
    }

    #[test]
    fn falls_back_to_the_farthest_negative() {
        let z = vec![vec![0.0], vec![10.0], vec![1.0], vec![2.0]];
        let t = mine_semi_hard(&z, &[0, 0, 1, 1]).unwrap();
        let first = t.iter().find(|t| t.anchor == 0 && t.positive == 1).unwrap();
        assert_eq!(first.negative, 3);
    }

    #[test]
    fn ties_go_to_the_lowest_index_and_singletons_are_skipped() {
        let z = vec![vec![0.0], vec![1.0], vec![2.0], vec![-2.0], vec![5.0]];
        let t = mine_semi_hard(&z, &[0, 0, 1, 1, 2]).unwrap();
        let first = t.iter().find(|t| t.anchor == 0 && t.positive == 1).unwrap();
        assert_eq!(first.negative, 2);
        assert!(t.iter().all(|t| t.anchor != 4));
        assert_eq!(t.len(), 4);
        assert!(mine_semi_hard(&z[..2], &[0, 0]).is_err());
        assert!(mine_semi_hard(&z, &[0, 0]).is_err());
    }

    proptest! {
        // signed coordinate permutations are orthogonal and keep integer
        // distances exact, so selections must match one for one
        #[test]
        fn invariant_under_orthogonal_maps(seed in 0u64..5000) {
            let mut rng = SplitMix64::new(seed);
            let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
            let z: Vec<Vec<f64>> = (0..12)
                .map(|_| (0..4).map(|_| rng.random_range(-4i32..=4) as f64).collect())
                .collect();
            let mut perm: Vec<usize> = (0..4).collect();
            for i in (1..4).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let signs: Vec<f64> = (0..4).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let q: Vec<Vec<f64>> = z.iter().map(|v| (0..4).map(|k| signs[k] * v[perm[k]]).collect()).collect();
            prop_assert_eq!(mine_semi_hard(&z, &labels).unwrap(), mine_semi_hard(&q, &labels).unwrap());
        }
    }
}
