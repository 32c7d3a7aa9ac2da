//! Truncated real Fourier series with vector values, and a weighted
//! least-squares fit for them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{lstsq, CONDITION_LIMIT};

/// `f(θ) = c + Σ_{k=1..K} a_k cos(kθ) + b_k sin(kθ)`, component-wise for a
/// vector-valued output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    order: usize,
    output_dim: usize,
    /// Constant term per output component.
    constant: Vec<f64>,
    /// `cos(kθ)` coefficients indexed `[k-1][component]`.
    cos_coeffs: Vec<Vec<f64>>,
    /// `sin(kθ)` coefficients indexed `[k-1][component]`.
    sin_coeffs: Vec<Vec<f64>>,
}

impl FourierSeries {
    /// Constant series (all harmonic coefficients zero).
    pub fn constant(values: Vec<f64>) -> Self {
        FourierSeries {
            order: 0,
            output_dim: values.len(),
            constant: values,
            cos_coeffs: Vec::new(),
            sin_coeffs: Vec::new(),
        }
    }

    pub fn from_coefficients(
        constant: Vec<f64>,
        cos_coeffs: Vec<Vec<f64>>,
        sin_coeffs: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(cos_coeffs.len(), sin_coeffs.len());
        let output_dim = constant.len();
        for c in cos_coeffs.iter().chain(sin_coeffs.iter()) {
            assert_eq!(c.len(), output_dim);
        }
        FourierSeries {
            order: cos_coeffs.len(),
            output_dim,
            constant,
            cos_coeffs,
            sin_coeffs,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn eval(&self, theta: f64) -> DVector<f64> {
        let mut out = DVector::from_column_slice(&self.constant);
        for k in 1..=self.order {
            let (s, c) = (k as f64 * theta).sin_cos();
            for d in 0..self.output_dim {
                out[d] += self.cos_coeffs[k - 1][d] * c + self.sin_coeffs[k - 1][d] * s;
            }
        }
        out
    }

    /// Evaluate a scalar-valued series.
    pub fn eval_scalar(&self, theta: f64) -> f64 {
        debug_assert_eq!(self.output_dim, 1);
        let mut out = self.constant[0];
        for k in 1..=self.order {
            let (s, c) = (k as f64 * theta).sin_cos();
            out += self.cos_coeffs[k - 1][0] * c + self.sin_coeffs[k - 1][0] * s;
        }
        out
    }

    /// Term-wise derivative in θ.
    pub fn derivative(&self, theta: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.output_dim);
        for k in 1..=self.order {
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            for d in 0..self.output_dim {
                out[d] += kf * (self.sin_coeffs[k - 1][d] * c - self.cos_coeffs[k - 1][d] * s);
            }
        }
        out
    }

    pub fn derivative_scalar(&self, theta: f64) -> f64 {
        debug_assert_eq!(self.output_dim, 1);
        let mut out = 0.0;
        for k in 1..=self.order {
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            out += kf * (self.sin_coeffs[k - 1][0] * c - self.cos_coeffs[k - 1][0] * s);
        }
        out
    }

    /// Upper bound on |f| for a scalar series: |c| + Σ (|a_k| + |b_k|).
    pub fn magnitude_bound(&self, component: usize) -> f64 {
        let mut b = self.constant[component].abs();
        for k in 0..self.order {
            b += self.cos_coeffs[k][component].abs() + self.sin_coeffs[k][component].abs();
        }
        b
    }
}

/// A fitted series plus the quality numbers of its regression.
#[derive(Debug, Clone)]
pub struct FourierFit {
    pub series: FourierSeries,
    /// RMS residual per sample entry, in the (sqrt-)weighted metric when
    /// weights are given.
    pub residual_rms: f64,
    pub condition: f64,
}

/// Weighted least-squares Fourier fit of `values` (one row per sample, one
/// column per output component) against angles.
///
/// Needs at least `2·order + 1` samples; rejects designs whose condition
/// number exceeds [`CONDITION_LIMIT`] (for example when all angles coincide).
pub fn fit_fourier(
    angles: &[f64],
    values: &DMatrix<f64>,
    order: usize,
    weights: Option<&[f64]>,
) -> Result<FourierFit> {
    let n = angles.len();
    let cols = 2 * order + 1;
    if values.nrows() != n {
        return Err(Error::InvalidConfig(format!(
            "{} angle samples but {} value rows",
            n,
            values.nrows()
        )));
    }
    if n < cols {
        return Err(Error::Underdetermined { rows: n, cols });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::InvalidConfig("weight length mismatch".into()));
        }
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidConfig("weights must be positive".into()));
        }
    }

    let d = values.ncols();
    let mut design = DMatrix::zeros(n, cols);
    let mut rhs = values.clone();
    for (i, &theta) in angles.iter().enumerate() {
        let sw = weights.map_or(1.0, |w| w[i].sqrt());
        design[(i, 0)] = sw;
        for k in 1..=order {
            let (s, c) = (k as f64 * theta).sin_cos();
            design[(i, 2 * k - 1)] = sw * c;
            design[(i, 2 * k)] = sw * s;
        }
        if weights.is_some() {
            for j in 0..d {
                rhs[(i, j)] *= sw;
            }
        }
    }

    let fit = lstsq(design, &rhs)?;
    if fit.condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { cond: fit.condition });
    }

    let residual_rms = (fit.residual_sq.iter().sum::<f64>() / (n * d) as f64).sqrt();
    let sol = fit.solution;
    let constant: Vec<f64> = (0..d).map(|j| sol[(0, j)]).collect();
    let mut cos_coeffs = Vec::with_capacity(order);
    let mut sin_coeffs = Vec::with_capacity(order);
    for k in 1..=order {
        cos_coeffs.push((0..d).map(|j| sol[(2 * k - 1, j)]).collect());
        sin_coeffs.push((0..d).map(|j| sol[(2 * k, j)]).collect());
    }
    Ok(FourierFit {
        series: FourierSeries {
            order,
            output_dim: d,
            constant,
            cos_coeffs,
            sin_coeffs,
        },
        residual_rms,
        condition: fit.condition,
    })
}
