use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{invalid, Error, Result};

const INDEX_MAGIC: &[u8; 4] = b"EIDX";

/// Exact nearest-neighbor index over location embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<u64>,
    vectors: Array2<f64>,
    normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    /// L2 distance.
    pub distance: f64,
}

/// Retrieval depth: an absolute count or a percentage of the database.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopK {
    Count(usize),
    Percent(f64),
}

impl TopK {
    /// `Percent(p)` resolves to `ceil(p * M / 100)`.
    pub fn resolve(self, m: usize) -> usize {
        match self {
            TopK::Count(k) => k,
            TopK::Percent(p) => (p * m as f64 / 100.0).ceil().max(0.0) as usize,
        }
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

impl EmbeddingIndex {
    /// Builds an index; with `normalize` every row is L2-normalized first.
    pub fn new(ids: Vec<u64>, vectors: Array2<f64>, normalize: bool) -> Result<Self> {
        if ids.len() != vectors.nrows() {
            return Err(Error::DimensionMismatch {
                context: "index ids",
                expected: vectors.nrows(),
                actual: ids.len(),
            });
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("index ids must be unique"));
        }
        let mut vectors = vectors;
        if normalize {
            for mut row in vectors.rows_mut() {
                let n = row.dot(&row).sqrt();
                if n == 0.0 {
                    return Err(Error::ZeroVector);
                }
                row /= n;
            }
        }
        Ok(Self {
            ids,
            vectors,
            normalized: normalize,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vectors(&self) -> ArrayView2<'_, f64> {
        self.vectors.view()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// Squared L2 distance from `q` to every stored row, in storage order.
    pub fn squared_distances(&self, q: ArrayView1<f64>) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "query",
                expected: self.dim(),
                actual: q.len(),
            });
        }
        Ok(self
            .vectors
            .axis_iter(Axis(0))
            .map(|row| sq_dist(q, row))
            .collect())
    }

    /// The `k` nearest stored vectors by ascending distance, ties broken by
    /// ascending id.
    pub fn knn_query(&self, q: ArrayView1<f64>, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        let d2 = self.squared_distances(q)?;
        let mut ranked: Vec<(f64, u64)> = d2.into_iter().zip(self.ids.iter().copied()).collect();
        let cmp = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(ranked.len());
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k - 1, cmp);
            ranked.truncate(k);
        }
        ranked.sort_unstable_by(cmp);
        Ok(ranked
            .into_iter()
            .map(|(d, id)| Neighbor {
                id,
                distance: d.sqrt(),
            })
            .collect())
    }

    /// Zero-based rank `truth` would get in `knn_query(q, M)`.
    pub fn rank_of(&self, q: ArrayView1<f64>, truth: u64) -> Result<usize> {
        let pos = self
            .ids
            .iter()
            .position(|&id| id == truth)
            .ok_or(Error::UnknownLocation(truth))?;
        let d2 = self.squared_distances(q)?;
        let key = (d2[pos], truth);
        Ok(d2
            .iter()
            .zip(&self.ids)
            .filter(|&(&d, &id)| match d.total_cmp(&key.0) {
                Ordering::Less => true,
                Ordering::Equal => id < key.1,
                Ordering::Greater => false,
            })
            .count())
    }
}

/// Full ranking of the database for one query.
pub fn single_image_localize(index: &EmbeddingIndex, q: ArrayView1<f64>) -> Result<Vec<u64>> {
    Ok(index
        .knn_query(q, index.len().max(1))?
        .into_iter()
        .map(|n| n.id)
        .collect())
}

/// Fraction of queries whose true id ranks within the top `k`.
pub fn recall_at(
    index: &EmbeddingIndex,
    queries: ArrayView2<f64>,
    truth: &[u64],
    top: TopK,
) -> Result<f64> {
    Ok(recall_curve(index, queries, truth, &[top])?[0])
}

/// Recall for several depths, ranking each query once.
pub fn recall_curve(
    index: &EmbeddingIndex,
    queries: ArrayView2<f64>,
    truth: &[u64],
    tops: &[TopK],
) -> Result<Vec<f64>> {
    if queries.nrows() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "recall truth ids",
            expected: queries.nrows(),
            actual: truth.len(),
        });
    }
    let ranks = queries
        .rows()
        .into_iter()
        .zip(truth)
        .map(|(q, &t)| index.rank_of(q, t))
        .collect::<Result<Vec<_>>>()?;
    let n = ranks.len().max(1) as f64;
    Ok(tops
        .iter()
        .map(|top| {
            let k = top.resolve(index.len());
            ranks.iter().filter(|&&r| r < k).count() as f64 / n
        })
        .collect())
}

/// `k,recall` with a header row.
pub fn recall_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("k,recall\n");
    for (k, r) in rows {
        s.push_str(&format!("{k},{r:.6}\n"));
    }
    s
}

/// Layout: magic `EIDX`, `d u32`, `M u64`, `M` ids as `u64`, then `M x d`
/// `f32` rows.
pub fn encode_index(index: &EmbeddingIndex) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(INDEX_MAGIC);
    w.u32(index.dim() as u32);
    w.u64(index.len() as u64);
    for &id in &index.ids {
        w.u64(id);
    }
    for v in index.vectors.iter() {
        w.f32(*v);
    }
    w.finish()
}

/// Decodes an `EIDX` blob. Rows are taken as stored; `normalized` records
/// what the caller knows about them.
pub fn decode_index(bytes: &[u8], normalized: bool) -> Result<EmbeddingIndex> {
    let mut r = ByteReader::new(bytes, "embedding index");
    r.magic(INDEX_MAGIC)?;
    let d = r.u32()? as usize;
    let m = r.count_u64(8 + 4 * d)?;
    let ids: Vec<u64> = (0..m).map(|_| r.u64()).collect::<Result<_>>()?;
    let at = r.offset();
    let data = r.f32_vec(m * d)?;
    r.finish()?;
    let vectors = Array2::from_shape_vec((m, d), data).map_err(|e| r_err(at, e.to_string()))?;
    let mut index = EmbeddingIndex::new(ids, vectors, false).map_err(|e| r_err(8, e.to_string()))?;
    index.normalized = normalized;
    Ok(index)
}

fn r_err(offset: u64, message: String) -> Error {
    Error::Malformed {
        what: "embedding index",
        offset,
        message,
    }
}
