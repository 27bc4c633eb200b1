//! Linear probes and structure measurements on frozen embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::corpus::{Corpus, SegmentMeta};
use crate::error::{Error, Result};
use crate::eval::cosine_distance;
use crate::features::Embedding;
use crate::matrix::Matrix;
use crate::rng::rng_for;

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn phone_edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditDistanceBin {
    /// Edit distance; the last bin holds everything at or beyond it.
    pub distance: usize,
    pub mean_cosine: f64,
    pub count: usize,
}

/// Mean cosine distance of all segment pairs grouped by phone edit
/// distance, capped at `max_bin`. Empty bins are left out.
pub fn cosine_by_edit_distance(
    corpus: &Corpus,
    embeddings: &[Embedding],
    max_bin: usize,
) -> Result<Vec<EditDistanceBin>> {
    let metas: Vec<&SegmentMeta> = corpus.segments().iter().map(|s| s.meta()).collect();
    if metas.len() != embeddings.len() {
        return Err(Error::Shape(format!(
            "{} segments but {} embeddings",
            metas.len(),
            embeddings.len()
        )));
    }
    if let Some(m) = metas.iter().find(|m| m.phones.is_empty()) {
        return Err(Error::InvalidInput(format!("segment of {:?} has no phones", m.word)));
    }
    let mut sums = vec![0.0; max_bin + 1];
    let mut counts = vec![0usize; max_bin + 1];
    for i in 0..metas.len() {
        for j in i + 1..metas.len() {
            let d = phone_edit_distance(&metas[i].phones, &metas[j].phones).min(max_bin);
            sums[d] += cosine_distance(embeddings[i].as_slice(), embeddings[j].as_slice());
            counts[d] += 1;
        }
    }
    Ok((0..=max_bin)
        .filter(|&d| counts[d] > 0)
        .map(|d| EditDistanceBin {
            distance: d,
            mean_cosine: sums[d] / counts[d] as f64,
            count: counts[d],
        })
        .collect())
}

pub fn write_edit_distance_bins(bins: &[EditDistanceBin], w: &mut impl Write) -> Result<()> {
    writeln!(w, "edit_distance\tmean_cosine_distance\tn_pairs")?;
    for b in bins {
        writeln!(w, "{}\t{}\t{}", b.distance, b.mean_cosine, b.count)?;
    }
    Ok(())
}

/// Spearman rank correlation, ties given their average rank. Zero when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Shuffled 80/20 split of `0..n` (train, test).
fn split_80_20(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, "probe-split"));
    let n_train = ((n as f64) * 0.8).round() as usize;
    let test = idx.split_off(n_train.min(n));
    (idx, test)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionReport {
    /// R² on the held-out 20%.
    pub r2: f64,
    pub train_r2: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub split_seed: u64,
}

fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Least squares with an intercept on 80% of the data (ridge 1e-8 for
/// rank safety); R² on the other 20%. Constant targets give R² = 0.
pub fn fit_duration_regression(embeddings: &[Embedding], durations: &[f64], seed: u64) -> Result<RegressionReport> {
    let n = embeddings.len();
    if durations.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} durations", durations.len())));
    }
    if n < 10 {
        return Err(Error::InsufficientData(format!("regression needs 10 samples, got {n}")));
    }
    let dim = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != dim) {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    let (train, test) = split_80_20(n, seed);
    let degenerate = durations.iter().all(|d| *d == durations[0]);
    let design = |ids: &[usize]| {
        DMatrix::from_fn(ids.len(), dim + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                embeddings[ids[r]].0[c - 1]
            }
        })
    };
    let x = design(&train);
    let y = DVector::from_iterator(train.len(), train.iter().map(|&i| durations[i]));
    let mut gram = x.transpose() * &x;
    for k in 0..=dim {
        gram[(k, k)] += 1e-8;
    }
    let rhs = x.transpose() * &y;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonFinite("singular regression system".into()))?,
    };
    let predict = |ids: &[usize]| -> Vec<f64> { (design(ids) * &beta).iter().copied().collect() };
    let ys = |ids: &[usize]| -> Vec<f64> { ids.iter().map(|&i| durations[i]).collect() };
    let (r2, train_r2) = if degenerate {
        (0.0, 0.0)
    } else {
        (r_squared(&ys(&test), &predict(&test)), r_squared(&ys(&train), &predict(&train)))
    };
    Ok(RegressionReport {
        r2,
        train_r2,
        n_train: train.len(),
        n_test: test.len(),
        split_seed: seed,
    })
}

pub const PROBE_ITERATIONS: usize = 500;
pub const PROBE_LR: f64 = 0.1;

/// Multinomial logistic regression weights (`classes × dim`) and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxRegression {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        SoftmaxRegression {
            w: Matrix::zeros(classes, dim),
            b: vec![0.0; classes],
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        crate::matrix::gemv_acc(&self.w, x, &mut out);
        out
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        (0..l.len()).fold(0, |best, k| if l[k] > l[best] { k } else { best })
    }
}

/// Full-batch gradient descent on the mean cross-entropy. Returns the model
/// and the loss before each update.
pub fn fit_softmax_regression(
    x: &[Vec<f64>],
    y: &[usize],
    init: SoftmaxRegression,
    iterations: usize,
    lr: f64,
) -> Result<(SoftmaxRegression, Vec<f64>)> {
    let mut model = init;
    let k = model.b.len();
    let n = x.len() as f64;
    let mut trajectory = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut gw = Matrix::zeros(model.w.rows(), model.w.cols());
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let (l, mut d) = crate::models::softmax_cross_entropy(&model.logits(xi), yi)?;
            loss += l;
            d.iter_mut().for_each(|v| *v /= n);
            crate::matrix::outer_acc(&mut gw, &d, xi);
            crate::matrix::axpy(1.0, &d, &mut gb);
        }
        trajectory.push(loss / n);
        crate::matrix::axpy(-lr, gw.as_slice(), model.w.as_mut_slice());
        crate::matrix::axpy(-lr, &gb, &mut model.b);
    }
    if !trajectory.iter().all(|l| l.is_finite()) {
        return Err(Error::NonFinite("probe classifier diverged".into()));
    }
    Ok((model, trajectory))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassF1 {
    pub label: String,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassF1>,
    /// Seed of the split that was used (after any re-splits).
    pub split_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_loss: Vec<f64>,
}

/// Centring and one global scale from the training rows. Both commute with
/// rotations, unlike per-dimension standardisation.
fn normalise(embeddings: &[Embedding], train: &[usize]) -> Vec<Vec<f64>> {
    let dim = embeddings[0].dim();
    let mut mean = vec![0.0; dim];
    for &i in train {
        crate::matrix::axpy(1.0 / train.len() as f64, embeddings[i].as_slice(), &mut mean);
    }
    let ms: f64 = train
        .iter()
        .map(|&i| crate::matrix::squared_distance(embeddings[i].as_slice(), &mean))
        .sum::<f64>()
        / train.len() as f64;
    let scale = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
    embeddings
        .iter()
        .map(|e| e.0.iter().zip(&mean).map(|(v, m)| (v - m) * scale).collect())
        .collect()
}

/// Softmax-regression probe: 500 full-batch steps at learning rate 0.1 on
/// a shuffled 80% split, scored on the remaining 20%. A split that leaves a
/// class out of training is redrawn with the next seed, up to 10 times.
pub fn fit_linear_classifier<L: AsRef<str>>(embeddings: &[Embedding], labels: &[L], seed: u64) -> Result<ClassifierReport> {
    let n = embeddings.len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} embeddings but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let dim = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != dim) {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *classes.entry(l.as_ref()).or_default() += 1;
    }
    if let Some((c, _)) = classes.iter().find(|(_, &k)| k < 2) {
        return Err(Error::InsufficientData(format!("class {c:?} has fewer than 2 samples")));
    }
    let names: Vec<&str> = classes.keys().copied().collect();
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let y: Vec<usize> = labels.iter().map(|l| index[l.as_ref()]).collect();

    for attempt in 0..10u64 {
        let split_seed = seed.wrapping_add(attempt);
        let (train, test) = split_80_20(n, split_seed);
        let mut seen = vec![false; names.len()];
        train.iter().for_each(|&i| seen[y[i]] = true);
        if seen.contains(&false) {
            continue;
        }
        let x = normalise(embeddings, &train);
        let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let (model, train_loss) = fit_softmax_regression(
            &xt,
            &yt,
            SoftmaxRegression::zeros(names.len(), dim),
            PROBE_ITERATIONS,
            PROBE_LR,
        )?;
        let k = names.len();
        let (mut tp, mut fp, mut fneg, mut support) = (vec![0usize; k], vec![0usize; k], vec![0usize; k], vec![0usize; k]);
        let mut correct = 0;
        for &i in &test {
            let p = model.predict(&x[i]);
            support[y[i]] += 1;
            if p == y[i] {
                correct += 1;
                tp[p] += 1;
            } else {
                fp[p] += 1;
                fneg[y[i]] += 1;
            }
        }
        let per_class = (0..k)
            .map(|c| {
                let denom = 2 * tp[c] + fp[c] + fneg[c];
                ClassF1 {
                    label: names[c].to_string(),
                    f1: if denom == 0 { 0.0 } else { 2.0 * tp[c] as f64 / denom as f64 },
                    support: support[c],
                }
            })
            .collect();
        return Ok(ClassifierReport {
            accuracy: if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 },
            per_class,
            split_seed,
            n_train: train.len(),
            n_test: test.len(),
            train_loss,
        });
    }
    Err(Error::InsufficientData(
        "every one of 10 splits left a class out of the training part".into(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca2d {
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

/// Projection onto the top two principal axes of the centred set. Each axis
/// is signed so its largest-magnitude loading (first on ties) is positive.
pub fn pca_2d(embeddings: &[Embedding]) -> Result<Pca2d> {
    let n = embeddings.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("projection needs 3 points, got {n}")));
    }
    let dim = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != dim) {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    let mut mean = vec![0.0; dim];
    for e in embeddings {
        crate::matrix::axpy(1.0 / n as f64, e.as_slice(), &mut mean);
    }
    let x = DMatrix::from_fn(n, dim, |r, c| embeddings[r].0[c] - mean[c]);
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let axis = |k: usize| -> Vec<f64> {
        let Some(&row) = order.get(k) else {
            return vec![0.0; dim];
        };
        let mut v: Vec<f64> = (0..dim).map(|c| vt[(row, c)]).collect();
        let lead = (0..dim).fold(0, |best, c| if v[c].abs() > v[best].abs() { c } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        v
    };
    let components = [axis(0), axis(1)];
    let coords = (0..n)
        .map(|r| {
            let row: Vec<f64> = (0..dim).map(|c| x[(r, c)]).collect();
            [crate::matrix::dot(&row, &components[0]), crate::matrix::dot(&row, &components[1])]
        })
        .collect();
    Ok(Pca2d {
        coords,
        components,
        mean,
    })
}

pub fn write_pca(ids: &[usize], pca: &Pca2d, w: &mut impl Write) -> Result<()> {
    if ids.len() != pca.coords.len() {
        return Err(Error::Shape("one id per projected point".into()));
    }
    writeln!(w, "id\tx\ty")?;
    for (id, [x, y]) in ids.iter().zip(&pca.coords) {
        writeln!(w, "{id}\t{x}\t{y}")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeKind {
    EditDistanceBins,
    DurationR2,
    SpeakerAcc,
    LanguageAcc,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::EditDistanceBins => "edit_distance_bins",
            ProbeKind::DurationR2 => "duration_r2",
            ProbeKind::SpeakerAcc => "speaker_acc",
            ProbeKind::LanguageAcc => "language_acc",
        })
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edit_distance_bins" => Ok(ProbeKind::EditDistanceBins),
            "duration_r2" => Ok(ProbeKind::DurationR2),
            "speaker_acc" => Ok(ProbeKind::SpeakerAcc),
            "language_acc" => Ok(ProbeKind::LanguageAcc),
            _ => Err(Error::InvalidConfig(format!("unknown probe {s:?}"))),
        }
    }
}

/// Uniform tabular form of any probe result.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub kind: ProbeKind,
    pub metrics: Vec<(String, f64)>,
    pub per_class: Vec<ClassF1>,
    pub split_seed: Option<u64>,
}

impl ProbeReport {
    pub fn from_regression(r: &RegressionReport) -> Self {
        ProbeReport {
            kind: ProbeKind::DurationR2,
            metrics: vec![("r2".into(), r.r2), ("train_r2".into(), r.train_r2)],
            per_class: Vec::new(),
            split_seed: Some(r.split_seed),
        }
    }

    pub fn from_classifier(kind: ProbeKind, r: &ClassifierReport) -> Self {
        ProbeReport {
            kind,
            metrics: vec![("accuracy".into(), r.accuracy)],
            per_class: r.per_class.clone(),
            split_seed: Some(r.split_seed),
        }
    }

    pub fn from_bins(bins: &[EditDistanceBin]) -> Self {
        let d: Vec<f64> = bins.iter().map(|b| b.distance as f64).collect();
        let m: Vec<f64> = bins.iter().map(|b| b.mean_cosine).collect();
        let mut metrics = vec![("spearman_rho".into(), spearman(&d, &m))];
        metrics.extend(bins.iter().map(|b| (format!("mean_cosine@{}", b.distance), b.mean_cosine)));
        ProbeReport {
            kind: ProbeKind::EditDistanceBins,
            metrics,
            per_class: Vec::new(),
            split_seed: None,
        }
    }

    /// `kind  name  value  support` rows; per-class F1 rows are named
    /// `f1:<label>`.
    pub fn write_tsv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "kind\tname\tvalue\tsupport")?;
        for (name, v) in &self.metrics {
            writeln!(w, "{}\t{name}\t{v}\t", self.kind)?;
        }
        for c in &self.per_class {
            writeln!(w, "{}\tf1:{}\t{}\t{}", self.kind, c.label, c.f1, c.support)?;
        }
        if let Some(s) = self.split_seed {
            writeln!(w, "{}\tsplit_seed\t{s}\t", self.kind)?;
        }
        Ok(())
    }
}
