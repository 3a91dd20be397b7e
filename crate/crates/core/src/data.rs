//! Synthetic clustered datasets, query/database splits and similarity pairs.
//!
//! Labels are stored as bitmasks so single- and multi-label data share one
//! code path: a single-label sample of class `c` has mask `1 << c`, and two
//! samples are similar when their masks intersect.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, Rng};

pub const MAX_CLASSES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLayout {
    /// Class means on the scaled coordinate simplex (needs `classes <= dim`).
    Simplex,
    /// Class means drawn uniformly on a sphere.
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Standard deviation of the isotropic noise around each mean.
    pub spread: f64,
    /// Radius of the class means.
    pub radius: f64,
    pub layout: ClassLayout,
    /// Draw 1–3 labels per sample out of `classes` instead of one.
    pub multi_label: bool,
    /// Fraction of every class held out as queries.
    pub query_fraction: f64,
    pub normalize: bool,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 100,
            dim: 16,
            spread: 0.35,
            radius: 1.0,
            layout: ClassLayout::Simplex,
            multi_label: false,
            query_fraction: 0.1,
            normalize: true,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > MAX_CLASSES {
            return Err(invalid("classes", format!("must lie in [2, {MAX_CLASSES}], got {}", self.classes)));
        }
        if self.per_class == 0 {
            return Err(invalid("per_class", "must be positive"));
        }
        if self.dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(invalid("spread", "must be finite and nonnegative"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("radius", "must be positive"));
        }
        if self.layout == ClassLayout::Simplex && self.classes > self.dim {
            return Err(invalid("layout", "simplex layout needs classes <= dim"));
        }
        if !(0.0..1.0).contains(&self.query_fraction) {
            return Err(invalid("query_fraction", "must lie in [0, 1)"));
        }
        let train = self.per_class - self.queries_per_class();
        if train < 2 && !self.multi_label {
            return Err(invalid("per_class", "every class needs at least two training samples"));
        }
        Ok(())
    }

    fn queries_per_class(&self) -> usize {
        (self.query_fraction * self.per_class as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u64>,
    pub splits: Vec<Split>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Features and labels of one split, in dataset order.
    pub fn part(&self, split: Split) -> (Matrix, Vec<u64>) {
        let idx = self.indices(split);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (self.features.select_rows(&idx), labels)
    }

    /// Write `features.csv` (one row per sample) and `labels.csv`
    /// (`index,labels,split`, with labels as a `;`-separated class list).
    pub fn write_csv<W1: Write, W2: Write>(&self, features: W1, labels: W2) -> std::io::Result<()> {
        let mut fw = csv::Writer::from_writer(features);
        for row in self.features.iter_rows() {
            fw.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        fw.flush()?;
        let mut lw = csv::Writer::from_writer(labels);
        lw.write_record(["index", "labels", "split"])?;
        for i in 0..self.len() {
            let classes: Vec<String> = (0..MAX_CLASSES)
                .filter(|c| self.labels[i] >> c & 1 == 1)
                .map(|c| c.to_string())
                .collect();
            lw.write_record([i.to_string(), classes.join(";"), self.splits[i].as_str().to_string()])?;
        }
        lw.flush()
    }
}

fn class_means(rng: &mut Rng, spec: &ClusterSpec) -> Vec<Vec<f64>> {
    match spec.layout {
        ClassLayout::Simplex => (0..spec.classes)
            .map(|c| {
                let mut m = vec![0.0; spec.dim];
                m[c] = spec.radius;
                m
            })
            .collect(),
        ClassLayout::Sphere => (0..spec.classes)
            .map(|_| {
                let v: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.iter().map(|x| spec.radius * x / norm).collect()
            })
            .collect(),
    }
}

fn random_label_set(rng: &mut Rng, classes: usize) -> u64 {
    let count = 1 + rng.index(3.min(classes));
    let mut mask = 0u64;
    while (mask.count_ones() as usize) < count {
        mask |= 1 << rng.index(classes);
    }
    mask
}

/// Gaussian clusters around class means, with the last
/// `round(query_fraction · per_class)` samples of every class held out as
/// queries. In multi-label mode a sample's mean is the average of its
/// labels' means.
pub fn gen_gaussian_clusters(rng: &mut Rng, spec: &ClusterSpec) -> Result<Dataset> {
    spec.validate()?;
    let means = class_means(rng, spec);
    let n = spec.classes * spec.per_class;
    let queries = spec.queries_per_class();
    let mut features = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut splits = Vec::with_capacity(n);
    for c in 0..spec.classes {
        for s in 0..spec.per_class {
            let i = labels.len();
            let mask = if spec.multi_label {
                random_label_set(rng, spec.classes)
            } else {
                1u64 << c
            };
            let members: Vec<usize> = (0..spec.classes).filter(|k| mask >> k & 1 == 1).collect();
            let row = features.row_mut(i);
            for &k in &members {
                for (r, m) in row.iter_mut().zip(&means[k]) {
                    *r += m / members.len() as f64;
                }
            }
            for r in row.iter_mut() {
                *r += spec.spread * rng.normal();
            }
            labels.push(mask);
            splits.push(if s >= spec.per_class - queries {
                Split::Query
            } else {
                Split::Train
            });
        }
    }
    if spec.normalize {
        zscore(&mut features);
    }
    Ok(Dataset {
        features,
        labels,
        splits,
        classes: spec.classes,
    })
}

/// Standardize every column to zero mean and unit variance. Constant
/// columns are only centered.
pub fn zscore(m: &mut Matrix) {
    let (rows, cols) = m.shape();
    for j in 0..cols {
        let mean = (0..rows).map(|i| m[(i, j)]).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|i| (m[(i, j)] - mean).powi(2)).sum::<f64>() / rows as f64;
        let scale = if var > 0.0 { var.sqrt().recip() } else { 1.0 };
        for i in 0..rows {
            m[(i, j)] = (m[(i, j)] - mean) * scale;
        }
    }
}

/// Class of the nearest class centroid, computed on the given samples.
pub fn nearest_centroid_accuracy(features: &Matrix, labels: &[u64]) -> f64 {
    let classes: Vec<u64> = {
        let mut c = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let centroids: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let mut mean = vec![0.0; features.cols()];
            for &i in &rows {
                for (m, v) in mean.iter_mut().zip(features.row(i)) {
                    *m += v / rows.len() as f64;
                }
            }
            mean
        })
        .collect();
    let correct = (0..labels.len())
        .filter(|&i| {
            let best = centroids
                .iter()
                .enumerate()
                .map(|(k, c)| (k, crate::numerics::dist_sq(c, features.row(i))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            classes[best] == labels[i]
        })
        .count();
    correct as f64 / labels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub similar: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pairs: Vec<Pair>,
}

impl PairSet {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Pair> {
        self.pairs.iter()
    }

    pub fn as_slice(&self) -> &[Pair] {
        &self.pairs
    }

    /// Largest index referenced plus one.
    pub fn span(&self) -> usize {
        self.pairs.iter().map(|p| p.i.max(p.j) + 1).max().unwrap_or(0)
    }

    /// For every sample, the positions in the pair list that touch it.
    pub fn incidence(&self, n: usize) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); n];
        for (k, p) in self.pairs.iter().enumerate() {
            inc[p.i].push(k);
            inc[p.j].push(k);
        }
        inc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PairMode {
    All,
    /// `per_anchor` distinct partners per sample, half drawn among similar
    /// samples and half among the rest when both exist.
    Sampled { per_anchor: usize },
}

pub fn similar(a: u64, b: u64) -> bool {
    a & b != 0
}

/// Similarity pairs over samples `0..labels.len()`, each unordered pair at
/// most once and stored with `i < j`.
pub fn build_pairs(labels: &[u64], mode: PairMode, rng: &mut Rng) -> Result<PairSet> {
    let n = labels.len();
    let mut pairs = Vec::new();
    match mode {
        PairMode::All => {
            for i in 0..n {
                for j in i + 1..n {
                    pairs.push(Pair {
                        i,
                        j,
                        similar: similar(labels[i], labels[j]),
                    });
                }
            }
        }
        PairMode::Sampled { per_anchor } => {
            if per_anchor == 0 {
                return Err(invalid("pairs_per_anchor", "must be positive"));
            }
            let mut seen = std::collections::BTreeSet::new();
            for i in 0..n {
                let (same, other): (Vec<usize>, Vec<usize>) =
                    (0..n).filter(|&j| j != i).partition(|&j| similar(labels[i], labels[j]));
                let want_same = if other.is_empty() {
                    per_anchor
                } else if same.is_empty() {
                    0
                } else {
                    per_anchor.div_ceil(2)
                };
                for (pool, want) in [(same, want_same), (other, per_anchor - want_same.min(per_anchor))] {
                    let mut pool = pool;
                    rng.shuffle(&mut pool);
                    for &j in pool.iter().take(want) {
                        let key = (i.min(j), i.max(j));
                        if seen.insert(key) {
                            pairs.push(Pair {
                                i: key.0,
                                j: key.1,
                                similar: similar(labels[i], labels[j]),
                            });
                        }
                    }
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Empty("pair set"));
    }
    Ok(PairSet::new(pairs))
}
