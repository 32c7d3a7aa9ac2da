//! The normal-form oscillator every synthetic system is conjugate to:
//! unit-rate rotation with an affine contraction transverse to the cycle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::numeric::polar_angle_radius;

/// `θ̇ = 1, ṙ = β(r-1) + c_rᵀp, ṗ = γ(r-1) + Mp` with the `(r-1, p)`
/// block Hurwitz, so the unit circle `r = 1, p = 0` attracts.
#[derive(Debug, Clone)]
pub struct FloquetSystem {
    dim: usize,
    beta: f64,
    c_r: DVector<f64>,
    gamma: DVector<f64>,
    m: DMatrix<f64>,
}

/// Largest real part of the spectrum of the transverse block.
fn spectral_abscissa(j: &DMatrix<f64>) -> f64 {
    j.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

impl FloquetSystem {
    pub fn new(beta: f64, c_r: DVector<f64>, gamma: DVector<f64>, m: DMatrix<f64>) -> Result<Self> {
        let k = c_r.len();
        if gamma.len() != k || m.nrows() != k || m.ncols() != k {
            return Err(Error::InvalidConfig(
                "transverse block dimensions disagree".into(),
            ));
        }
        let sys = FloquetSystem {
            dim: k + 2,
            beta,
            c_r,
            gamma,
            m,
        };
        let max_re = spectral_abscissa(&sys.transverse_matrix());
        if !(max_re < 0.0) {
            return Err(Error::NotHurwitz { max_re });
        }
        Ok(sys)
    }

    /// Random contracting system: decay rates uniform in [-3, -0.3], with
    /// complex pairs (imaginary parts in [0.3, 3]) when the transverse block
    /// is big enough; coupling entries from N(0, 0.3²). Redraws until the
    /// assembled block is safely Hurwitz.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(
                "oscillator dimension must be at least 2".into(),
            ));
        }
        let k = dim - 2;
        let rate = Uniform::new(-3.0, -0.3);
        let spin = Uniform::new(0.3, 3.0);
        let coupling = Normal::new(0.0, 0.3).expect("fixed standard deviation");
        let mut last_re = 0.0;
        for _ in 0..200 {
            let beta = rate.sample(rng);
            let mut blocks = DMatrix::zeros(k, k);
            let mut at = 0;
            while at < k {
                if k - at >= 2 && rng.gen_bool(0.5) {
                    let re = rate.sample(rng);
                    let im = spin.sample(rng);
                    blocks[(at, at)] = re;
                    blocks[(at + 1, at + 1)] = re;
                    blocks[(at, at + 1)] = im;
                    blocks[(at + 1, at)] = -im;
                    at += 2;
                } else {
                    blocks[(at, at)] = rate.sample(rng);
                    at += 1;
                }
            }
            let q = random_orthogonal(k, rng);
            let m = &q * blocks * q.transpose();
            let c_r = DVector::from_fn(k, |_, _| coupling.sample(rng));
            let gamma = DVector::from_fn(k, |_, _| coupling.sample(rng));
            let candidate = FloquetSystem {
                dim,
                beta,
                c_r,
                gamma,
                m,
            };
            last_re = spectral_abscissa(&candidate.transverse_matrix());
            if last_re < -0.05 {
                return Ok(candidate);
            }
        }
        Err(Error::NotHurwitz { max_re: last_re })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// The `(n-1)×(n-1)` linearization of `(ṙ, ṗ)` in `(r-1, p)`.
    pub fn transverse_matrix(&self) -> DMatrix<f64> {
        let k = self.dim - 2;
        let mut j = DMatrix::zeros(k + 1, k + 1);
        j[(0, 0)] = self.beta;
        for i in 0..k {
            j[(0, 1 + i)] = self.c_r[i];
            j[(1 + i, 0)] = self.gamma[i];
            for l in 0..k {
                j[(1 + i, 1 + l)] = self.m[(i, l)];
            }
        }
        j
    }

    /// Field in cylindrical coordinates.
    pub fn field(&self, _theta: f64, r: f64, p: &DVector<f64>) -> (f64, f64, DVector<f64>) {
        let dr = self.beta * (r - 1.0) + self.c_r.dot(p);
        let dp = &self.gamma * (r - 1.0) + &self.m * p;
        (1.0, dr, dp)
    }

    /// The affine field as one matrix acting on `(θ, r, p, 1)`.
    pub fn homogeneous_matrix(&self) -> DMatrix<f64> {
        let n = self.dim;
        let k = n - 2;
        let mut h = DMatrix::zeros(n, n + 1);
        h[(0, n)] = 1.0;
        h[(1, 1)] = self.beta;
        h[(1, n)] = -self.beta;
        for i in 0..k {
            h[(1, 2 + i)] = self.c_r[i];
            h[(2 + i, 1)] = self.gamma[i];
            h[(2 + i, n)] = -self.gamma[i];
            for l in 0..k {
                h[(2 + i, 2 + l)] = self.m[(i, l)];
            }
        }
        h
    }

    /// Field in the wound (Cartesian) coordinates `x = unwind(θ, r, p)`.
    pub fn wound_field(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (theta, r, p) = wind(x)?;
        let (d_theta, d_r, d_p) = self.field(theta, r, &p);
        let (s, c) = theta.sin_cos();
        let mut out = DVector::zeros(self.dim);
        out[0] = d_r * s + r * c * d_theta;
        out[1] = d_r * c - r * s * d_theta;
        for i in 0..p.len() {
            out[2 + i] = d_p[i];
        }
        Ok(out)
    }
}

/// Cylindrical decomposition `θ = atan2(x_0, x_1)`, `r = √(x_0²+x_1²)`.
pub fn wind(x: &DVector<f64>) -> Result<(f64, f64, DVector<f64>)> {
    let (theta, r) = polar_angle_radius(x[0], x[1])?;
    let p = x.rows(2, x.len() - 2).clone_owned();
    Ok((theta, r, p))
}

/// Inverse of [`wind`]: `x = (r sin θ, r cos θ, p)`.
pub fn unwind(theta: f64, r: f64, p: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(p.len() + 2);
    let (s, c) = theta.sin_cos();
    x[0] = r * s;
    x[1] = r * c;
    for i in 0..p.len() {
        x[2 + i] = p[i];
    }
    x
}

/// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the R
/// diagonal signs fixed.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let g = DMatrix::from_fn(n, n, |_, _| normal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.unpack_r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
