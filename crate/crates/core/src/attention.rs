//! Dense single-head attention over a 2D token grid, with axial rotary
//! embeddings and entropy metrics.
//!
//! The full `N x N` weight matrix is materialized, so this is meant for
//! analysis-sized grids (a few thousand tokens at most).

use ndarray::{Array2, ArrayView2, Axis as NdAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::rope::{self, RopeError, RopeSchedule};
use crate::tensorio::LatentGrid;

/// Row-sum tolerance for a valid field.
pub const ROW_SUM_TOL: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("logit scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error(transparent)]
    Rope(#[from] RopeError),
}

/// Row-stochastic `N x N` attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionField {
    weights: Array2<f64>,
}

impl AttentionField {
    pub fn new(weights: Array2<f64>) -> Result<Self, AttentionError> {
        for (row, r) in weights.rows().into_iter().enumerate() {
            if r.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(AttentionError::NonFinite("attention weights"));
            }
            let sum = r.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(AttentionError::NotStochastic { row, sum });
            }
        }
        Ok(Self { weights })
    }

    /// Every query attending uniformly to `n` keys.
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: Array2::from_elem((n, n), 1.0 / n as f64),
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.weights
            .row(i)
            .to_slice()
            .expect("weights are stored in standard layout")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyStats {
    pub per_row: Vec<f64>,
    pub mean: f64,
}

fn check_finite(m: &ArrayView2<f64>, what: &'static str) -> Result<(), AttentionError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AttentionError::NonFinite(what))
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `softmax(τ · Q Kᵀ / √D) V`.
pub fn attend(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    logit_scale: f64,
) -> Result<(Array2<f64>, AttentionField), AttentionError> {
    if q.ncols() != k.ncols() {
        return Err(AttentionError::Shape(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(AttentionError::Shape(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    if q.ncols() == 0 || k.nrows() == 0 {
        return Err(AttentionError::Shape("empty query or key set".into()));
    }
    if !(logit_scale > 0.0 && logit_scale.is_finite()) {
        return Err(AttentionError::NonPositiveScale(logit_scale));
    }
    check_finite(&q, "queries")?;
    check_finite(&k, "keys")?;
    check_finite(&v, "values")?;

    let factor = logit_scale / (q.ncols() as f64).sqrt();
    // The product may come back column-major; rows must be contiguous.
    let mut weights = q.dot(&k.t()).as_standard_layout().into_owned();
    weights
        .axis_iter_mut(NdAxis(0))
        .into_par_iter()
        .for_each(|mut row| {
            row.mapv_inplace(|x| x * factor);
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        });
    let out = weights.dot(&v);
    Ok((out, AttentionField { weights }))
}

/// Query, key and value features for the tokens of an `H x W` grid, row
/// index `h·W + w`. Rotary position is applied later.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenField {
    pub height: usize,
    pub width: usize,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

impl TokenField {
    pub fn new(
        height: usize,
        width: usize,
        q: Array2<f64>,
        k: Array2<f64>,
        v: Array2<f64>,
    ) -> Result<Self, AttentionError> {
        let n = height * width;
        if q.nrows() != n || k.nrows() != n || v.nrows() != n {
            return Err(AttentionError::Shape(format!(
                "expected {n} rows for a {height}x{width} grid"
            )));
        }
        if q.ncols() != k.ncols() {
            return Err(AttentionError::Shape("query and key widths differ".into()));
        }
        Ok(Self {
            height,
            width,
            q,
            k,
            v,
        })
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn position(&self, row: usize) -> (usize, usize) {
        (row / self.width, row % self.width)
    }

    /// Seeded Gaussian projections `X·W_q`, `X·W_k`, `X·W_v` of the latent's
    /// channel vectors, each projection scaled by `1/√C`.
    pub fn from_latent(grid: &LatentGrid, dim: usize, seed: u64) -> Self {
        let (n, c) = (grid.tokens(), grid.channels());
        let x = Array2::from_shape_fn((n, c), |(i, j)| f64::from(grid.values()[i * c + j]));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (c as f64).sqrt().recip();
        let mut proj = || {
            let w: Array2<f64> =
                Array2::from_shape_simple_fn((c, dim), || StandardNormal.sample(&mut rng));
            x.dot(&w) * scale
        };
        let (q, k, v) = (proj(), proj(), proj());
        Self {
            height: grid.height(),
            width: grid.width(),
            q,
            k,
            v,
        }
    }

    /// Applies axial rotary embeddings to every row of `m`, optionally
    /// scaling each pair by `m_h` / `m_w`.
    pub fn embed(
        &self,
        m: &Array2<f64>,
        sched_h: &RopeSchedule,
        sched_w: &RopeSchedule,
        scale: Option<(&[f64], &[f64])>,
    ) -> Result<Array2<f64>, AttentionError> {
        let width = sched_h.dim + sched_w.dim;
        if m.ncols() != width {
            return Err(RopeError::DimensionMismatch {
                expected: width,
                actual: m.ncols(),
            }
            .into());
        }
        if let Some((mh, mw)) = scale {
            rope::check_scale(mh, sched_h.pairs())?;
            rope::check_scale(mw, sched_w.pairs())?;
        }
        let m = m.as_standard_layout();
        let mut out = Array2::zeros(m.raw_dim());
        out.axis_iter_mut(NdAxis(0))
            .into_par_iter()
            .zip(m.axis_iter(NdAxis(0)))
            .enumerate()
            .for_each(|(row, (mut dst, src))| {
                rope::axial_into(
                    src.as_slice().expect("contiguous row"),
                    self.position(row),
                    sched_h,
                    sched_w,
                    scale,
                    dst.as_slice_mut().expect("contiguous row"),
                );
            });
        Ok(out)
    }
}

/// Rotary attention with per-pair magnitudes on both queries and keys, so
/// each pair's contribution to the logits scales by `m_d²`.
pub fn attend_rotary(
    tokens: &TokenField,
    sched_h: &RopeSchedule,
    sched_w: &RopeSchedule,
    m_h: &[f64],
    m_w: &[f64],
    extra_logit_scale: f64,
) -> Result<(Array2<f64>, AttentionField), AttentionError> {
    let scale = Some((m_h, m_w));
    let q = tokens.embed(&tokens.q, sched_h, sched_w, scale)?;
    let k = tokens.embed(&tokens.k, sched_h, sched_w, scale)?;
    attend(q.view(), k.view(), tokens.v.view(), extra_logit_scale)
}

/// Shannon entropy (nats) of every row, with `0 · ln 0 = 0`.
pub fn attention_entropy(field: &AttentionField) -> EntropyStats {
    let per_row: Vec<f64> = field
        .weights
        .rows()
        .into_iter()
        .map(|r| {
            -r.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect();
    let mean = per_row.iter().sum::<f64>() / per_row.len() as f64;
    EntropyStats { per_row, mean }
}

/// Mean entropy of `a` minus that of `b`; positive means `a` is more diffuse.
pub fn entropy_delta(a: &AttentionField, b: &AttentionField) -> f64 {
    attention_entropy(a).mean - attention_entropy(b).mean
}
