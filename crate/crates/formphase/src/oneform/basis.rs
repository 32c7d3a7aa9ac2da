//! Scalar function basis on rectified coordinates whose differentials span
//! the correction part of the fitted 1-form.
//!
//! Each member is a product `ξ_i(z) · (r-1)^j · u_k(θ)` where `ξ_0 = 1`,
//! `ξ_i = z_{i-1}` for `i ≥ 1`, and `u_k` is `cos(kθ)` or `sin(kθ)`. The
//! globally constant member (i = j = k = 0, cosine) is excluded because its
//! differential vanishes, and `sin(0θ)` members are excluded as duplicates
//! of zero.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trig {
    Cos,
    Sin,
}

/// Index of one basis member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisIndex {
    /// 0 for no z factor, `i ≥ 1` for the factor `z_{i-1}`.
    pub z_index: usize,
    /// Power of `(r - 1)`.
    pub poly: usize,
    /// Angular harmonic `k`.
    pub harmonic: usize,
    pub trig: Trig,
}

/// Basis sizes: harmonics up to `fourier_order`, radial powers up to
/// `poly_order`, and `z_dim` transverse coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    fourier_order: usize,
    poly_order: usize,
    z_dim: usize,
}

impl BasisSpec {
    pub fn new(fourier_order: usize, poly_order: usize, z_dim: usize) -> Result<Self> {
        if poly_order < 1 {
            return Err(Error::InvalidConfig(
                "poly order must be at least 1".into(),
            ));
        }
        Ok(BasisSpec {
            fourier_order,
            poly_order,
            z_dim,
        })
    }

    /// Basis for a given full state dimension (`z_dim = dim - 2`).
    pub fn for_dim(dim: usize, fourier_order: usize, poly_order: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(
                "state dimension must be at least 2".into(),
            ));
        }
        Self::new(fourier_order, poly_order, dim - 2)
    }

    pub fn fourier_order(&self) -> usize {
        self.fourier_order
    }

    pub fn poly_order(&self) -> usize {
        self.poly_order
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn state_dim(&self) -> usize {
        self.z_dim + 2
    }

    /// Number of members: `(z_dim+1)(J+1)(2K+1) - 1`.
    pub fn len(&self) -> usize {
        (self.z_dim + 1) * (self.poly_order + 1) * (2 * self.fourier_order + 1) - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Members in their fixed enumeration order (the order of coefficient
    /// vectors everywhere in this crate).
    pub fn members(&self) -> Vec<BasisIndex> {
        let mut out = Vec::with_capacity(self.len());
        self.scan(|_, idx| out.push(idx));
        out
    }

    #[inline]
    fn scan<F: FnMut(usize, BasisIndex)>(&self, mut f: F) {
        let mut n = 0;
        for i in 0..=self.z_dim {
            for j in 0..=self.poly_order {
                for k in 0..=self.fourier_order {
                    if !(i == 0 && j == 0 && k == 0) {
                        f(
                            n,
                            BasisIndex {
                                z_index: i,
                                poly: j,
                                harmonic: k,
                                trig: Trig::Cos,
                            },
                        );
                        n += 1;
                    }
                    if k > 0 {
                        f(
                            n,
                            BasisIndex {
                                z_index: i,
                                poly: j,
                                harmonic: k,
                                trig: Trig::Sin,
                            },
                        );
                        n += 1;
                    }
                }
            }
        }
        debug_assert_eq!(n, self.len());
    }

    fn tables(&self, theta: f64, r: f64, z: &DVector<f64>) -> Tables {
        let k_max = self.fourier_order;
        let mut cos_k = Vec::with_capacity(k_max + 1);
        let mut sin_k = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let (s, c) = (k as f64 * theta).sin_cos();
            cos_k.push(c);
            sin_k.push(s);
        }
        let mut pow = Vec::with_capacity(self.poly_order + 1);
        let mut acc = 1.0;
        for _ in 0..=self.poly_order {
            pow.push(acc);
            acc *= r - 1.0;
        }
        let mut xi = Vec::with_capacity(self.z_dim + 1);
        xi.push(1.0);
        for i in 0..self.z_dim {
            xi.push(z[i]);
        }
        Tables {
            cos_k,
            sin_k,
            pow,
            xi,
        }
    }

    /// `Σ_μ m_μ v_μ(θ, r, z)`.
    pub fn weighted_value(&self, coeff: &[f64], theta: f64, r: f64, z: &DVector<f64>) -> f64 {
        debug_assert_eq!(coeff.len(), self.len());
        let t = self.tables(theta, r, z);
        let mut acc = 0.0;
        self.scan(|n, ix| {
            let u = match ix.trig {
                Trig::Cos => t.cos_k[ix.harmonic],
                Trig::Sin => t.sin_k[ix.harmonic],
            };
            acc += coeff[n] * t.xi[ix.z_index] * t.pow[ix.poly] * u;
        });
        acc
    }

    /// Cylindrical gradient of `Σ_μ m_μ v_μ`: `(∂/∂θ, ∂/∂r, ∂/∂z)`.
    pub fn weighted_gradient(
        &self,
        coeff: &[f64],
        theta: f64,
        r: f64,
        z: &DVector<f64>,
    ) -> (f64, f64, DVector<f64>) {
        debug_assert_eq!(coeff.len(), self.len());
        let t = self.tables(theta, r, z);
        let mut d_theta = 0.0;
        let mut d_r = 0.0;
        let mut d_z = DVector::zeros(self.z_dim);
        self.scan(|n, ix| {
            let m = coeff[n];
            if m == 0.0 {
                return;
            }
            let k = ix.harmonic;
            let (u, du) = match ix.trig {
                Trig::Cos => (t.cos_k[k], -(k as f64) * t.sin_k[k]),
                Trig::Sin => (t.sin_k[k], (k as f64) * t.cos_k[k]),
            };
            let xi = t.xi[ix.z_index];
            let rho = t.pow[ix.poly];
            d_theta += m * xi * rho * du;
            if ix.poly > 0 {
                d_r += m * xi * ix.poly as f64 * t.pow[ix.poly - 1] * u;
            }
            if ix.z_index > 0 {
                d_z[ix.z_index - 1] += m * rho * u;
            }
        });
        (d_theta, d_r, d_z)
    }

    /// Fill one design-matrix row: `out[μ] = ⟨dv_μ(q), q̇⟩`, given the
    /// cylindrical coordinates of `q` and the pairings of `dθ` and `dr` with
    /// `q̇` (`s_theta`, `s_r`) plus the transverse velocity components.
    #[allow(clippy::too_many_arguments)]
    pub fn pairing_row_into(
        &self,
        theta: f64,
        r: f64,
        z: &DVector<f64>,
        s_theta: f64,
        s_r: f64,
        z_dot: &[f64],
        out: &mut [f64],
    ) {
        debug_assert_eq!(out.len(), self.len());
        debug_assert_eq!(z_dot.len(), self.z_dim);
        let t = self.tables(theta, r, z);
        self.scan(|n, ix| {
            let k = ix.harmonic;
            let (u, du) = match ix.trig {
                Trig::Cos => (t.cos_k[k], -(k as f64) * t.sin_k[k]),
                Trig::Sin => (t.sin_k[k], (k as f64) * t.cos_k[k]),
            };
            let xi = t.xi[ix.z_index];
            let rho = t.pow[ix.poly];
            let mut acc = xi * rho * du * s_theta;
            if ix.poly > 0 {
                acc += xi * ix.poly as f64 * t.pow[ix.poly - 1] * u * s_r;
            }
            if ix.z_index > 0 {
                acc += rho * u * z_dot[ix.z_index - 1];
            }
            out[n] = acc;
        });
    }
}

struct Tables {
    cos_k: Vec<f64>,
    sin_k: Vec<f64>,
    pow: Vec<f64>,
    xi: Vec<f64>,
}

/// `⟨dθ(q), q̇⟩ = (q_1 q̇_0 - q_0 q̇_1) / r²` in the circulation plane.
pub fn dtheta_pairing(q: &DVector<f64>, q_dot: &DVector<f64>) -> Result<f64> {
    let r2 = q[0] * q[0] + q[1] * q[1];
    if r2 == 0.0 {
        return Err(Error::OriginSingularity);
    }
    Ok((q[1] * q_dot[0] - q[0] * q_dot[1]) / r2)
}

/// `⟨dr(q), q̇⟩ = (q_0 q̇_0 + q_1 q̇_1) / r`.
pub fn dr_pairing(q: &DVector<f64>, q_dot: &DVector<f64>) -> Result<f64> {
    let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
    if r == 0.0 {
        return Err(Error::OriginSingularity);
    }
    Ok((q[0] * q_dot[0] + q[1] * q_dot[1]) / r)
}
