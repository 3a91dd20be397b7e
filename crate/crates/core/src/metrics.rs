//! Hamming-ranking retrieval metrics, quantization error and Hamming
//! distance distributions.
//!
//! Codes are packed into 64-bit words; a set bit stands for `-1`. Database
//! items are ranked by Hamming distance to the query with ties broken by
//! ascending database index, which a counting sort over distances gives for
//! free.

use serde::{Deserialize, Serialize};

use crate::data::similar;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::par;

/// A matrix of `±1` codes, one row per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    bits: usize,
    words: Vec<u64>,
}

impl CodeMatrix {
    fn words_per_row(bits: usize) -> usize {
        bits.div_ceil(64)
    }

    fn pack(rows: usize, bits: usize, mut negative: impl FnMut(usize, usize) -> bool) -> Self {
        let wpr = Self::words_per_row(bits);
        let mut words = vec![0u64; rows * wpr];
        for i in 0..rows {
            for k in 0..bits {
                if negative(i, k) {
                    words[i * wpr + k / 64] |= 1 << (k % 64);
                }
            }
        }
        Self { rows, bits, words }
    }

    /// Binarize continuous codes with `sign(0) = +1`.
    pub fn from_continuous(u: &Matrix) -> Self {
        Self::pack(u.rows(), u.cols(), |i, k| u[(i, k)] < 0.0)
    }

    /// Take a matrix whose entries must already be exactly `±1`.
    pub fn from_pm1(m: &Matrix) -> Result<Self> {
        if let Some(&v) = m.as_slice().iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::NotBinary(v));
        }
        Ok(Self::from_continuous(m))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    fn words(&self, i: usize) -> &[u64] {
        let wpr = Self::words_per_row(self.bits);
        &self.words[i * wpr..(i + 1) * wpr]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        if self.words(i)[k / 64] >> (k % 64) & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn row_pm1(&self, i: usize) -> Vec<f64> {
        (0..self.bits).map(|k| self.get(i, k)).collect()
    }

    /// Hamming distance between row `i` of `self` and row `j` of `other`.
    pub fn distance(&self, i: usize, other: &CodeMatrix, j: usize) -> usize {
        self.words(i)
            .iter()
            .zip(other.words(j))
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

/// `½(d − ⟨h₁, h₂⟩)` for two `±1` codes.
pub fn hamming_dist(h1: &[f64], h2: &[f64]) -> Result<usize> {
    if h1.len() != h2.len() {
        return Err(Error::DimensionMismatch {
            op: "hamming_dist",
            expected: h1.len(),
            got: h2.len(),
        });
    }
    if let Some(&v) = h1.iter().chain(h2).find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::NotBinary(v));
    }
    let inner: f64 = h1.iter().zip(h2).map(|(a, b)| a * b).sum();
    Ok(((h1.len() as f64 - inner) / 2.0) as usize)
}

/// `Σ_{k ≤ N} P(k)·rel(k) / min(N, R_q)` over the first `n` entries of a
/// ranked relevance list. `None` when the query has no relevant items.
pub fn average_precision(relevance: &[bool], r_q: usize, n: usize) -> Option<f64> {
    if r_q == 0 {
        return None;
    }
    let n = n.min(relevance.len());
    if n == 0 {
        return Some(0.0);
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &rel) in relevance[..n].iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    Some(acc / n.min(r_q) as f64)
}

/// A set of codes with labels (bitmasks; similar iff they intersect).
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub codes: &'a CodeMatrix,
    pub labels: &'a [u64],
}

impl<'a> Labeled<'a> {
    pub fn new(codes: &'a CodeMatrix, labels: &'a [u64]) -> Result<Self> {
        if codes.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "codes vs labels",
                expected: codes.rows(),
                got: labels.len(),
            });
        }
        Ok(Self { codes, labels })
    }
}

/// Database indices ordered by distance to query `q`.
fn rank(query: &Labeled, q: usize, db: &Labeled) -> Vec<usize> {
    let d = query.codes.bits();
    let dist: Vec<usize> = (0..db.codes.rows())
        .map(|j| query.codes.distance(q, db.codes, j))
        .collect();
    let mut buckets = vec![Vec::new(); d + 1];
    for (j, &h) in dist.iter().enumerate() {
        buckets[h].push(j);
    }
    buckets.into_iter().flatten().collect()
}

fn check_pair(query: &Labeled, db: &Labeled) -> Result<()> {
    if query.codes.bits() != db.codes.bits() {
        return Err(Error::DimensionMismatch {
            op: "code length",
            expected: query.codes.bits(),
            got: db.codes.bits(),
        });
    }
    if db.codes.rows() == 0 || query.codes.rows() == 0 {
        return Err(Error::Empty("retrieval set"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub evaluated: usize,
    /// Queries without any relevant database item.
    pub skipped: usize,
}

/// Mean average precision over Hamming rankings, optionally truncated to
/// the first `top_n` results.
pub fn mean_ap(query: &Labeled, db: &Labeled, top_n: Option<usize>) -> Result<MapResult> {
    check_pair(query, db)?;
    let n = top_n.unwrap_or(db.codes.rows()).min(db.codes.rows());
    let aps = par::map_range(query.codes.rows(), |q| {
        let r = rank(query, q, db);
        let rel: Vec<bool> = r.iter().map(|&j| similar(query.labels[q], db.labels[j])).collect();
        let r_q = rel.iter().filter(|&&x| x).count();
        average_precision(&rel, r_q, n)
    });
    let evaluated: Vec<f64> = aps.iter().flatten().copied().collect();
    let skipped = aps.len() - evaluated.len();
    if evaluated.is_empty() {
        return Err(Error::Undefined("no query has a relevant database item"));
    }
    Ok(MapResult {
        map: evaluated.iter().sum::<f64>() / evaluated.len() as f64,
        evaluated: evaluated.len(),
        skipped,
    })
}

/// Mean precision among the first `K` results for every `K` in `ks`.
pub fn precision_at_topk(query: &Labeled, db: &Labeled, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    check_pair(query, db)?;
    let per_query = par::map_range(query.codes.rows(), |q| {
        let r = rank(query, q, db);
        let mut hits = Vec::with_capacity(r.len());
        let mut acc = 0usize;
        for &j in &r {
            acc += similar(query.labels[q], db.labels[j]) as usize;
            hits.push(acc);
        }
        hits
    });
    let nq = query.codes.rows() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let k = k.clamp(1, db.codes.rows());
            let p = per_query.iter().map(|h| h[k - 1] as f64 / k as f64).sum::<f64>() / nq;
            (k, p)
        })
        .collect())
}

/// Mean precision of the Hamming ball of radius `r` around each query;
/// an empty ball contributes 0.
pub fn precision_within_radius(query: &Labeled, db: &Labeled, r: usize) -> Result<f64> {
    check_pair(query, db)?;
    let per_query = par::map_range(query.codes.rows(), |q| {
        let (mut inside, mut relevant) = (0usize, 0usize);
        for j in 0..db.codes.rows() {
            if query.codes.distance(q, db.codes, j) <= r {
                inside += 1;
                relevant += similar(query.labels[q], db.labels[j]) as usize;
            }
        }
        if inside == 0 {
            0.0
        } else {
            relevant as f64 / inside as f64
        }
    });
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// Rank-based precision-recall curve averaged over queries with at least
/// one relevant item, sampled at `points` ranks spread over the database
/// (always including rank 1 and the last rank).
pub fn pr_curve(query: &Labeled, db: &Labeled, points: usize) -> Result<Vec<(f64, f64)>> {
    check_pair(query, db)?;
    let m = db.codes.rows();
    let points = points.max(2).min(m.max(2));
    let mut ranks: Vec<usize> = (0..points)
        .map(|p| 1 + ((m - 1) as f64 * p as f64 / (points - 1) as f64).round() as usize)
        .collect();
    ranks.dedup();
    let per_query: Vec<Option<Vec<(f64, f64)>>> = par::map_range(query.codes.rows(), |q| {
        let r = rank(query, q, db);
        let mut cum = Vec::with_capacity(m);
        let mut acc = 0usize;
        for &j in &r {
            acc += similar(query.labels[q], db.labels[j]) as usize;
            cum.push(acc);
        }
        let r_q = acc;
        (r_q > 0).then(|| {
            ranks
                .iter()
                .map(|&k| (cum[k - 1] as f64 / r_q as f64, cum[k - 1] as f64 / k as f64))
                .collect()
        })
    });
    let valid: Vec<&Vec<(f64, f64)>> = per_query.iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::Undefined("no query has a relevant database item"));
    }
    let count = valid.len() as f64;
    Ok((0..ranks.len())
        .map(|p| {
            let rec = valid.iter().map(|c| c[p].0).sum::<f64>() / count;
            let prec = valid.iter().map(|c| c[p].1).sum::<f64>() / count;
            (rec, prec)
        })
        .collect())
}

/// Per-bit mean of `|u − sgn(u)|`.
pub fn quantization_error(u: &Matrix) -> f64 {
    let s = u.as_slice();
    s.iter().map(|&v| (v - crate::regularizer::sign(v)).abs()).sum::<f64>() / s.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammingHistograms {
    /// Fraction of similar pairs at each distance `0..=d`.
    pub intra: Vec<f64>,
    /// Fraction of dissimilar pairs at each distance `0..=d`.
    pub inter: Vec<f64>,
    /// `E[D_inter] − E[D_intra]`.
    pub separability: f64,
}

/// Normalized distance histograms over all unordered pairs of one code set.
pub fn hamming_histograms(codes: &CodeMatrix, labels: &[u64]) -> Result<HammingHistograms> {
    let set = Labeled::new(codes, labels)?;
    let d = codes.bits();
    let n = codes.rows();
    let rows = par::map_range(n, |i| {
        let mut intra = vec![0u64; d + 1];
        let mut inter = vec![0u64; d + 1];
        for j in i + 1..n {
            let h = codes.distance(i, codes, j);
            if similar(set.labels[i], set.labels[j]) {
                intra[h] += 1;
            } else {
                inter[h] += 1;
            }
        }
        (intra, inter)
    });
    let mut intra = vec![0u64; d + 1];
    let mut inter = vec![0u64; d + 1];
    for (a, b) in rows {
        for h in 0..=d {
            intra[h] += a[h];
            inter[h] += b[h];
        }
    }
    let normalize = |c: &[u64], what| -> Result<(Vec<f64>, f64)> {
        let total: u64 = c.iter().sum();
        if total == 0 {
            return Err(Error::Undefined(what));
        }
        let hist: Vec<f64> = c.iter().map(|&v| v as f64 / total as f64).collect();
        let mean = c.iter().enumerate().map(|(h, &v)| (h as u64 * v) as f64).sum::<f64>() / total as f64;
        Ok((hist, mean))
    };
    let (intra, e_intra) = normalize(&intra, "no pair of similar samples")?;
    let (inter, e_inter) = normalize(&inter, "inter-class distances need at least two classes")?;
    Ok(HammingHistograms {
        intra,
        inter,
        separability: e_inter - e_intra,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub map: f64,
    pub map_top_n: Option<usize>,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
    pub ap_at_topk: Vec<(usize, f64)>,
    pub ap_at_r2: f64,
    pub pr_curve: Vec<(f64, f64)>,
    pub quant_error: f64,
    pub separability: f64,
    pub intra_hist: Vec<f64>,
    pub inter_hist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub top_n: Option<usize>,
    pub topk: Vec<usize>,
    pub pr_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_n: None,
            topk: vec![1, 10, 50, 100, 200, 500, 1000],
            pr_points: 51,
        }
    }
}

/// Full evaluation from continuous query and database outputs. The
/// quantization error and the histograms are measured on the queries.
pub fn evaluate(
    query_u: &Matrix,
    query_labels: &[u64],
    db_u: &Matrix,
    db_labels: &[u64],
    opts: &EvalOptions,
) -> Result<RetrievalReport> {
    let qc = CodeMatrix::from_continuous(query_u);
    let dc = CodeMatrix::from_continuous(db_u);
    let q = Labeled::new(&qc, query_labels)?;
    let db = Labeled::new(&dc, db_labels)?;
    let m = mean_ap(&q, &db, opts.top_n)?;
    let hist = hamming_histograms(&qc, query_labels)?;
    let mut ks: Vec<usize> = opts.topk.iter().map(|&k| k.clamp(1, dc.rows())).collect();
    ks.dedup();
    Ok(RetrievalReport {
        map: m.map,
        map_top_n: opts.top_n,
        queries_evaluated: m.evaluated,
        queries_skipped: m.skipped,
        ap_at_topk: precision_at_topk(&q, &db, &ks)?,
        ap_at_r2: precision_within_radius(&q, &db, 2)?,
        pr_curve: pr_curve(&q, &db, opts.pr_points)?,
        quant_error: quantization_error(query_u),
        separability: hist.separability,
        intra_hist: hist.intra,
        inter_hist: hist.inter,
    })
}
