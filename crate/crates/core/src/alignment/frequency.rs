//! Normalized DFT magnitude spectra and their magnitude-binned statistics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// `|DFT| / max |DFT|` of a gray image, DC term included.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyFeature<T>(pub Matrix<T>);

/// 2D DFT of a real matrix, rows then columns.
pub fn dft2<T: Real>(img: &Matrix<T>) -> Vec<Complex<T>> {
    let (rows, cols) = (img.rows, img.cols);
    let mut buf: Vec<Complex<T>> = img.data.iter().map(|&v| Complex::new(v, T::zero())).collect();
    let mut planner = FftPlanner::<T>::new();
    let row_fft = planner.plan_fft_forward(cols);
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut column = vec![Complex::new(T::zero(), T::zero()); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
    buf
}

/// Normalized magnitude spectrum. A constant-zero spectrum (max = 0) yields
/// an all-zero feature instead of dividing by zero.
pub fn frequency_feature<T: Real>(img: &Matrix<T>) -> Result<FrequencyFeature<T>> {
    if img.is_empty() {
        return Err(Error::param("frequency feature of an empty image"));
    }
    let mags: Vec<T> = dft2(img).iter().map(|z| z.norm()).collect();
    let max = mags.iter().copied().fold(T::zero(), T::max);
    let data = if max > T::zero() {
        mags.into_iter().map(|m| (m / max).min(T::one())).collect()
    } else {
        vec![T::zero(); mags.len()]
    };
    Ok(FrequencyFeature(Matrix {
        rows: img.rows,
        cols: img.cols,
        data,
    }))
}

/// Strictly increasing bin edges `m_0 < … < m_{K+1}` covering `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinEdges<T>(Vec<T>);

impl<T: Real> BinEdges<T> {
    pub fn new(edges: Vec<T>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::param("need at least two bin edges"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("bin edges must be strictly increasing"));
        }
        if edges[0] > T::zero() || edges[edges.len() - 1] <= T::one() {
            return Err(Error::param(
                "bin edges must cover [0, 1] (first ≤ 0, last > 1)",
            ));
        }
        Ok(Self(edges))
    }

    /// `bins` bins: `[0, 1e-4)`, then log-spaced edges up to 1, and a final
    /// bin `[1, 1.0001)` holding the peak.
    pub fn log_spaced(bins: usize) -> Result<Self> {
        if bins < 3 {
            return Err(Error::param("log-spaced edges need ≥ 3 bins"));
        }
        let inner = bins - 1; // edges from 1e-4 to 1 inclusive
        let mut e = vec![T::zero()];
        for k in 0..inner {
            let expo = -4.0 + 4.0 * k as f64 / (inner - 1) as f64;
            e.push(T::c(10f64.powf(expo)));
        }
        e.push(T::c(1.0001));
        Self::new(e)
    }

    pub fn edges(&self) -> &[T] {
        &self.0
    }

    pub fn bin_count(&self) -> usize {
        self.0.len() - 1
    }

    /// Bin holding `v`, if any.
    pub fn bin_of(&self, v: T) -> Option<usize> {
        let e = &self.0;
        if v < e[0] || v >= e[e.len() - 1] {
            return None;
        }
        // Last edge ≤ v.
        let k = e.partition_point(|m| *m <= v);
        Some(k - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramDescriptor<T>(pub Vec<T>);

/// `γ_k = mean over all elements of v·[v ∈ [m_k, m_{k+1})]`: each bin's mass
/// divided by the total element count (zeros included).
pub fn histogram_descriptor<T: Real>(
    feature: &FrequencyFeature<T>,
    edges: &BinEdges<T>,
) -> HistogramDescriptor<T> {
    let mut gamma = vec![T::zero(); edges.bin_count()];
    for &v in &feature.0.data {
        if let Some(k) = edges.bin_of(v) {
            gamma[k] += v;
        }
    }
    let n = T::from_usize_lossy(feature.0.len().max(1));
    HistogramDescriptor(gamma.into_iter().map(|g| g / n).collect())
}
