//! Low-rank item embeddings from a truncated SVD of the item-user rating matrix.
//!
//! The decomposition is computed with a randomized range finder (Gaussian
//! test matrix, `f + 10` columns, 5 QR-normalized power iterations) followed by
//! an exact SVD of the small projected matrix. Item vectors are `U_f * S_f`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::MovieId;
use crate::embedding::cosine;

pub const FACTORS_FORMAT: &str = "retrocrs.latent-items";
pub const FACTORS_VERSION: u32 = 1;
const OVERSAMPLES: usize = 10;
const POWER_ITERATIONS: usize = 5;

#[derive(Debug, Error)]
pub enum FactorizeError {
    #[error("no ratings to factorize")]
    NoRatings,
    #[error("latent dimension must be at least 1")]
    ZeroFactors,
    #[error("{factors} factors exceed the rank of the {items}x{users} rating matrix")]
    ExceedsRank { factors: usize, items: usize, users: usize },
    #[error("ratings csv {path}: {message}")]
    Ratings { path: String, message: String },
    #[error("factor file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    #[serde(rename = "userId")]
    pub user: u32,
    #[serde(rename = "movieId")]
    pub movie: u32,
    pub rating: f32,
}

/// Reads a MovieLens `userId,movieId,rating,timestamp` file.
pub fn read_ratings(path: &Path) -> Result<Vec<Rating>, FactorizeError> {
    let err = |message: String| FactorizeError::Ratings { path: path.display().to_string(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    reader.deserialize::<Rating>().map(|r| r.map_err(|e| err(e.to_string()))).collect()
}

/// Mean rating and count per movie.
pub fn rating_stats(ratings: &[Rating]) -> HashMap<MovieId, (f64, u32)> {
    let mut acc: HashMap<MovieId, (f64, u32)> = HashMap::new();
    for r in ratings {
        let e = acc.entry(MovieId(r.movie)).or_insert((0.0, 0));
        e.0 += r.rating as f64;
        e.1 += 1;
    }
    for v in acc.values_mut() {
        v.0 /= v.1 as f64;
    }
    acc
}

/// Item-by-user sparse matrix in compressed row form.
struct SparseRows {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    cols_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    /// `self * x` for dense `x` with `cols` rows.
    fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let w = x.ncols();
        // columns of xᵀ are rows of x, contiguous in memory
        let xt = x.transpose();
        let mut out = vec![0.0; self.rows * w];
        for (i, row_out) in out.chunks_mut(w).enumerate() {
            for k in self.offsets[i]..self.offsets[i + 1] {
                let (c, v) = (self.cols_idx[k], self.values[k]);
                for (o, xv) in row_out.iter_mut().zip(xt.column(c).iter()) {
                    *o += v * xv;
                }
            }
        }
        DMatrix::from_row_slice(self.rows, w, &out)
    }

    /// `selfᵀ * x` for dense `x` with `rows` rows.
    fn tmul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let w = x.ncols();
        let xt = x.transpose();
        let mut out = vec![0.0; self.cols * w];
        for i in 0..self.rows {
            let xi = xt.column(i);
            for k in self.offsets[i]..self.offsets[i + 1] {
                let (c, v) = (self.cols_idx[k], self.values[k]);
                for (o, xv) in out[c * w..(c + 1) * w].iter_mut().zip(xi.iter()) {
                    *o += v * xv;
                }
            }
        }
        DMatrix::from_row_slice(self.cols, w, &out)
    }
}

fn orthonormal_basis(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentItemSpace {
    factors: usize,
    singular_values: Vec<f64>,
    vectors: HashMap<MovieId, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FactorFile {
    format: String,
    version: u32,
    factors: usize,
    singular_values: Vec<f64>,
    items: Vec<(MovieId, Vec<f64>)>,
}

impl LatentItemSpace {
    pub fn from_vectors(factors: usize, vectors: HashMap<MovieId, Vec<f64>>) -> Result<Self, FactorizeError> {
        if vectors.values().any(|v| v.len() != factors || v.iter().any(|x| !x.is_finite())) {
            return Err(FactorizeError::File("vector length or value mismatch".into()));
        }
        Ok(LatentItemSpace { factors, singular_values: Vec::new(), vectors })
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: MovieId) -> Option<&[f64]> {
        self.vectors.get(&id).map(Vec::as_slice)
    }

    pub fn similarity(&self, a: MovieId, b: MovieId) -> Option<f64> {
        Some(cosine(self.vector(a)?, self.vector(b)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), FactorizeError> {
        let mut items: Vec<_> = self.vectors.iter().map(|(k, v)| (*k, v.clone())).collect();
        items.sort_by_key(|(k, _)| *k);
        let file = FactorFile {
            format: FACTORS_FORMAT.into(),
            version: FACTORS_VERSION,
            factors: self.factors,
            singular_values: self.singular_values.clone(),
            items,
        };
        let w = BufWriter::new(File::create(path).map_err(|e| FactorizeError::File(e.to_string()))?);
        serde_json::to_writer(w, &file).map_err(|e| FactorizeError::File(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FactorizeError> {
        let r = BufReader::new(File::open(path).map_err(|e| FactorizeError::File(e.to_string()))?);
        let file: FactorFile = serde_json::from_reader(r).map_err(|e| FactorizeError::File(e.to_string()))?;
        if file.format != FACTORS_FORMAT || file.version != FACTORS_VERSION {
            return Err(FactorizeError::File(format!("expected {FACTORS_FORMAT} v{FACTORS_VERSION}")));
        }
        let mut space = Self::from_vectors(file.factors, file.items.into_iter().collect())?;
        space.singular_values = file.singular_values;
        Ok(space)
    }
}

/// Truncated SVD item factors with `factors` dimensions; deterministic for a seed.
pub fn factorize(ratings: &[Rating], factors: usize, seed: u64) -> Result<LatentItemSpace, FactorizeError> {
    if ratings.is_empty() {
        return Err(FactorizeError::NoRatings);
    }
    if factors == 0 {
        return Err(FactorizeError::ZeroFactors);
    }
    let mut items: Vec<u32> = ratings.iter().map(|r| r.movie).collect();
    items.sort_unstable();
    items.dedup();
    let mut users: Vec<u32> = ratings.iter().map(|r| r.user).collect();
    users.sort_unstable();
    users.dedup();
    let item_ix: HashMap<u32, usize> = items.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let user_ix: HashMap<u32, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let (m, n) = (items.len(), users.len());
    if factors > m.min(n) {
        return Err(FactorizeError::ExceedsRank { factors, items: m, users: n });
    }

    // later duplicates of a (movie, user) pair replace earlier ones
    let mut entries: Vec<((usize, usize), f64)> =
        ratings.iter().map(|r| ((item_ix[&r.movie], user_ix[&r.user]), r.rating as f64)).collect();
    entries.sort_by_key(|(k, _)| *k);
    entries.reverse();
    entries.dedup_by_key(|(k, _)| *k);
    entries.reverse();
    let mut offsets = vec![0usize; m + 1];
    for ((i, _), _) in &entries {
        offsets[i + 1] += 1;
    }
    for i in 0..m {
        offsets[i + 1] += offsets[i];
    }
    let a = SparseRows {
        rows: m,
        cols: n,
        offsets,
        cols_idx: entries.iter().map(|((_, c), _)| *c).collect(),
        values: entries.iter().map(|(_, v)| *v).collect(),
    };

    let width = (factors + OVERSAMPLES).min(m.min(n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, width, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_basis(a.mul(&omega));
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormal_basis(a.tmul(&q));
        q = orthonormal_basis(a.mul(&z));
    }
    // B = Qᵀ A, computed as (Aᵀ Q)ᵀ
    let b = a.tmul(&q).transpose();
    let svd = b.svd(true, false);
    let u_small = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let sigma: Vec<f64> = order.iter().take(factors).map(|&k| svd.singular_values[k]).collect();
    let top = sigma[0];
    if top <= 0.0 || sigma[factors - 1] <= top * 1e-10 {
        return Err(FactorizeError::ExceedsRank { factors, items: m, users: n });
    }
    let u = &q * &u_small;

    let vectors = items
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let v = order.iter().take(factors).zip(&sigma).map(|(&k, s)| u[(i, k)] * s).collect();
            (MovieId(id), v)
        })
        .collect();
    Ok(LatentItemSpace { factors, singular_values: sigma, vectors })
}
