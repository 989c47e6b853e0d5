//! Parameter vectors, declared sample counts and the weighted average that
//! every aggregation scheme reduces to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of model parameters. Never empty, never holds NaN or ±∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::structural("parameter vector must have dim >= 1"));
        }
        if let Some(d) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "parameter vector entry {d} is not finite ({})",
                values[d]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::splat(dim, 0.0)
    }

    pub fn splat(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Coordinate-wise map over two vectors of equal dimension.
    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        self.check_dim(other.dim())?;
        Self::new(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    /// `self - other`, coordinate-wise.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_dim(other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::structural(format!(
                "dimension mismatch: expected {dim}, got {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;

    fn index(&self, d: usize) -> &f64 {
        &self.0[d]
    }
}

/// Declared per-client sample counts `M_i` and their total `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleWeights {
    counts: Vec<u64>,
    total: u64,
}

impl SampleWeights {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::structural("sample weights need at least one client"));
        }
        if let Some(i) = counts.iter().position(|&m| m == 0) {
            return Err(Error::domain(format!("client {i} declares zero samples")));
        }
        let total = counts
            .iter()
            .try_fold(0u64, |acc, &m| acc.checked_add(m))
            .ok_or_else(|| Error::domain("total sample count overflows u64"))?;
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `N = Σ M_i`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// `M_i / N`, formed in double precision at use time.
    #[inline]
    pub fn ratio(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.total as f64
    }
}

/// Sample-weighted average `Σ_i (M_i/N)·θ_i`, summed in client order.
///
/// Each coordinate is clamped to the range of its inputs, which only removes
/// rounding excursions: identical inputs return exactly that value.
pub fn weighted_average(params: &[ParameterVector], weights: &SampleWeights) -> Result<ParameterVector> {
    let first = params
        .first()
        .ok_or_else(|| Error::structural("weighted average over an empty client list"))?;
    if params.len() != weights.len() {
        return Err(Error::structural(format!(
            "{} parameter vectors but {} sample weights",
            params.len(),
            weights.len()
        )));
    }
    let dim = first.dim();
    let mut out = vec![0.0; dim];
    let mut lo = first.as_slice().to_vec();
    let mut hi = lo.clone();
    for (i, p) in params.iter().enumerate() {
        p.check_dim(dim)?;
        let w = weights.ratio(i);
        for (d, v) in p.iter().enumerate() {
            out[d] += w * v;
            lo[d] = lo[d].min(*v);
            hi[d] = hi[d].max(*v);
        }
    }
    for ((o, l), h) in out.iter_mut().zip(&lo).zip(&hi) {
        *o = o.clamp(*l, *h);
    }
    ParameterVector::new(out)
}
