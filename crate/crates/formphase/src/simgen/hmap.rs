//! Invertible building blocks for state distortions: well-conditioned affine
//! maps and block-triangular coupling maps whose inverse is available in
//! closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// `x ↦ Ax + b` with the inverse cached.
#[derive(Debug, Clone)]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
    inverse: DMatrix<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != offset.len() {
            return Err(Error::InvalidConfig("affine map shapes disagree".into()));
        }
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or(Error::NonInvertibleAffine)?;
        Ok(AffineMap {
            matrix,
            offset,
            inverse,
        })
    }

    pub fn identity(dim: usize) -> Self {
        AffineMap {
            matrix: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
            inverse: DMatrix::identity(dim, dim),
        }
    }

    /// Gaussian matrix with singular values clipped into [0.5, 2] so chains
    /// of these stay well-conditioned; Gaussian offset with spread 0.3.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let raw = DMatrix::from_fn(dim, dim, |_, _| normal.sample(rng));
        let svd = raw.svd(true, true);
        let u = svd.u.expect("requested");
        let vt = svd.v_t.expect("requested");
        let clipped = DVector::from_iterator(
            dim,
            svd.singular_values.iter().map(|s: &f64| s.clamp(0.5, 2.0)),
        );
        let matrix = &u * DMatrix::from_diagonal(&clipped) * &vt;
        let off = Normal::new(0.0, 0.3).expect("fixed spread");
        let offset = DVector::from_fn(dim, |_, _| off.sample(rng));
        AffineMap::new(matrix, offset).expect("clipped singular values are invertible")
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }

    pub fn inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.inverse * (y - &self.offset)
    }
}

/// Triangular coupling map on `ℝ^{D_X} × ℝ^{D_Y}`:
///
///   x̃ = g_X(x) + f(g_Y(y)),   ỹ = g_Y(y)
///
/// so the inverse is `y = g_Y⁻¹(ỹ)`, `x = g_X⁻¹(x̃ − f(ỹ))`. The coupling
/// folds the Y image onto X by index classes mod D_X (w_j = Σ_{i≡j} u_i),
/// then scales it by a rational bump of ϱ = wᵀAw that peaks near the unit
/// level set of A.
#[derive(Debug, Clone)]
pub struct HMap {
    dim_x: usize,
    dim_y: usize,
    g_x: AffineMap,
    g_y: AffineMap,
    a: DMatrix<f64>,
    amplitude: f64,
    shape: f64,
}

impl HMap {
    pub fn new(
        g_x: AffineMap,
        g_y: AffineMap,
        a: DMatrix<f64>,
        amplitude: f64,
        shape: f64,
    ) -> Result<Self> {
        let dim_x = g_x.dim();
        let dim_y = g_y.dim();
        if dim_x == 0 || dim_y == 0 {
            return Err(Error::InvalidConfig(
                "coupling map needs both blocks non-empty".into(),
            ));
        }
        if a.nrows() != dim_x || a.ncols() != dim_x {
            return Err(Error::InvalidConfig(
                "coupling metric must act on the first block".into(),
            ));
        }
        if !(shape > -2.0) {
            return Err(Error::BadShapeParameter(format!(
                "shape {shape} must exceed -2 so the bump denominator stays positive"
            )));
        }
        if (&a - a.transpose()).amax() > 1e-9 {
            return Err(Error::InvalidConfig("coupling metric not symmetric".into()));
        }
        let eigs = a.clone().symmetric_eigen().eigenvalues;
        for &l in eigs.iter() {
            if !(0.95 - 1e-9..=1.05 + 1e-9).contains(&l) {
                return Err(Error::InvalidConfig(format!(
                    "coupling metric eigenvalue {l} outside [0.95, 1.05]"
                )));
            }
        }
        Ok(HMap {
            dim_x,
            dim_y,
            g_x,
            g_y,
            a,
            amplitude,
            shape,
        })
    }

    /// Random map with a near-identity metric, a firm amplitude (sign
    /// flipped at random) and a shape drawn from the safe range.
    pub fn random<R: Rng>(dim_x: usize, dim_y: usize, rng: &mut R) -> Self {
        let g_x = AffineMap::random(dim_x, rng);
        let g_y = AffineMap::random(dim_y, rng);
        let q = super::floquet::random_orthogonal(dim_x, rng);
        let lam = Uniform::new(0.95, 1.05);
        let diag = DVector::from_fn(dim_x, |_, _| lam.sample(rng));
        let a = &q * DMatrix::from_diagonal(&diag) * q.transpose();
        // Exact re-symmetrization: QΛQᵀ picks up rounding noise.
        let a = (&a + a.transpose()) * 0.5;
        let m_mag = Uniform::new(0.65, 0.9).sample(rng);
        let amplitude = if rng.gen_bool(0.5) { m_mag } else { -m_mag };
        let shape = Uniform::new(-1.9, 0.0).sample(rng);
        HMap::new(g_x, g_y, a, amplitude, shape).expect("sampled parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim_x + self.dim_y
    }

    pub fn split(&self) -> (usize, usize) {
        (self.dim_x, self.dim_y)
    }

    /// Fold u ∈ ℝ^{D_Y} onto ℝ^{D_X} by summing index classes mod D_X.
    fn fold(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.dim_x);
        for i in 0..self.dim_y {
            w[i % self.dim_x] += u[i];
        }
        w
    }

    /// Bump factor s(ϱ) = m(β+2)ϱ / (ϱ² + βϱ + 1); s(1) = m.
    fn bump(&self, rho: f64) -> f64 {
        self.amplitude * (self.shape + 2.0) * rho / (rho * rho + self.shape * rho + 1.0)
    }

    fn bump_derivative(&self, rho: f64) -> f64 {
        let den = rho * rho + self.shape * rho + 1.0;
        self.amplitude * (self.shape + 2.0) * (1.0 - rho * rho) / (den * den)
    }

    /// Coupling term f(u) ∈ ℝ^{D_X} for u ∈ ℝ^{D_Y}.
    pub fn coupling(&self, u: &DVector<f64>) -> DVector<f64> {
        let w = self.fold(u);
        let rho = (&self.a * &w).dot(&w);
        w * self.bump(rho)
    }

    /// Jacobian of the coupling term, D_X × D_Y.
    fn coupling_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let w = self.fold(u);
        let aw = &self.a * &w;
        let rho = aw.dot(&w);
        let s = self.bump(rho);
        let ds = self.bump_derivative(rho);
        let mut jac = DMatrix::zeros(self.dim_x, self.dim_y);
        for i in 0..self.dim_y {
            let class = i % self.dim_x;
            let drho = 2.0 * aw[class];
            for l in 0..self.dim_x {
                let mut v = ds * drho * w[l];
                if l == class {
                    v += s;
                }
                jac[(l, i)] = v;
            }
        }
        jac
    }

    pub fn forward(&self, point: &DVector<f64>) -> DVector<f64> {
        let x = point.rows(0, self.dim_x).clone_owned();
        let y = point.rows(self.dim_x, self.dim_y).clone_owned();
        let gy = self.g_y.forward(&y);
        let top = self.g_x.forward(&x) + self.coupling(&gy);
        stack(&top, &gy)
    }

    pub fn inverse(&self, point: &DVector<f64>) -> DVector<f64> {
        let xt = point.rows(0, self.dim_x).clone_owned();
        let yt = point.rows(self.dim_x, self.dim_y).clone_owned();
        let x = self.g_x.inverse(&(xt - self.coupling(&yt)));
        stack(&x, &self.g_y.inverse(&yt))
    }

    pub fn jacobian(&self, point: &DVector<f64>) -> DMatrix<f64> {
        let y = point.rows(self.dim_x, self.dim_y).clone_owned();
        let gy = self.g_y.forward(&y);
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        jac.view_mut((0, 0), (self.dim_x, self.dim_x))
            .copy_from(self.g_x.matrix());
        let top_right = self.coupling_jacobian(&gy) * self.g_y.matrix();
        jac.view_mut((0, self.dim_x), (self.dim_x, self.dim_y))
            .copy_from(&top_right);
        jac.view_mut((self.dim_x, self.dim_x), (self.dim_y, self.dim_y))
            .copy_from(self.g_y.matrix());
        jac
    }
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_difference_jacobian;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_point<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        DVector::from_fn(dim, |_, _| normal.sample(rng))
    }

    #[test]
    fn affine_round_trip_and_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dim in [1usize, 2, 5] {
            let map = AffineMap::random(dim, &mut rng);
            let svd = map.matrix().clone().svd(false, false);
            for s in svd.singular_values.iter() {
                assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(s), "singular value {s}");
            }
            for _ in 0..20 {
                let x = random_point(dim, &mut rng);
                let back = map.inverse(&map.forward(&x));
                assert_relative_eq!((back - &x).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn singular_affine_is_rejected() {
        let err = AffineMap::new(DMatrix::zeros(2, 2), DVector::zeros(2));
        assert!(matches!(err, Err(Error::NonInvertibleAffine)));
    }

    #[test]
    fn bump_is_stationary_with_value_m_at_unit_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let map = HMap::random(2, 3, &mut rng);
            assert_relative_eq!(map.bump(1.0), map.amplitude, epsilon = 1e-14);
            assert_relative_eq!(map.bump_derivative(1.0), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_amplitude_reduces_to_block_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g_x = AffineMap::random(2, &mut rng);
        let g_y = AffineMap::random(2, &mut rng);
        let map = HMap::new(
            g_x.clone(),
            g_y.clone(),
            DMatrix::identity(2, 2),
            0.0,
            -0.5,
        )
        .unwrap();
        let point = random_point(4, &mut rng);
        let out = map.forward(&point);
        let x = point.rows(0, 2).clone_owned();
        let y = point.rows(2, 2).clone_owned();
        let ex = g_x.forward(&x);
        let ey = g_y.forward(&y);
        assert_eq!(out.rows(0, 2).clone_owned(), ex);
        assert_eq!(out.rows(2, 2).clone_owned(), ey);
    }

    #[test]
    fn coupling_vanishes_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = HMap::random(3, 2, &mut rng);
        assert_eq!(map.coupling(&DVector::zeros(2)).norm(), 0.0);
    }

    #[test]
    fn forward_inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let dim_x = 1 + (rng.gen::<u32>() % 3) as usize;
            let dim_y = 1 + (rng.gen::<u32>() % 3) as usize;
            let map = HMap::random(dim_x, dim_y, &mut rng);
            let p = random_point(dim_x + dim_y, &mut rng);
            let there = map.forward(&p);
            let back = map.inverse(&there);
            assert!(
                (back - &p).norm() <= 1e-10 * (1.0 + p.norm()),
                "round trip drifted"
            );
            let again = map.forward(&map.inverse(&p));
            assert!((again - &p).norm() <= 1e-10 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let dim_x = 1 + (rng.gen::<u32>() % 3) as usize;
            let dim_y = 1 + (rng.gen::<u32>() % 3) as usize;
            let map = HMap::random(dim_x, dim_y, &mut rng);
            let p = random_point(dim_x + dim_y, &mut rng);
            let exact = map.jacobian(&p);
            let approx =
                finite_difference_jacobian(|x| map.forward(x), &p, 1e-6);
            let scale = exact.amax().max(1.0);
            assert!(
                (exact - approx).amax() <= 1e-5 * scale,
                "jacobian mismatch at split ({dim_x}, {dim_y})"
            );
        }
    }

    #[test]
    fn jacobian_determinant_is_block_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let map = HMap::random(2, 3, &mut rng);
            let p = random_point(5, &mut rng);
            let det = map.jacobian(&p).determinant();
            let expected = map.g_x.matrix().determinant() * map.g_y.matrix().determinant();
            assert_relative_eq!(det, expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn shape_at_or_below_minus_two_is_rejected() {
        let g = AffineMap::identity(1);
        let err = HMap::new(
            g.clone(),
            g.clone(),
            DMatrix::identity(1, 1),
            0.3,
            -2.0,
        );
        assert!(matches!(err, Err(Error::BadShapeParameter(_))));
    }

    #[test]
    fn out_of_range_metric_is_rejected() {
        let g = AffineMap::identity(1);
        let err = HMap::new(
            g.clone(),
            g.clone(),
            DMatrix::from_vec(1, 1, vec![1.2]),
            0.3,
            -0.5,
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
