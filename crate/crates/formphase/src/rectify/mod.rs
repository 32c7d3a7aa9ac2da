//! Limit-cycle rectification.
//!
//! A fitted [`RectificationMap`] sends original coordinates to coordinates in
//! which the limit cycle is the unit circle in the first two components,
//! traversed at uniform angular rate, with the remaining components centred
//! on zero. The map is a composition of an affine PCA frame, a cylindrical
//! conversion, and an angle-indexed correction by three Fourier series
//! (radius, transverse offset, and angle remap), re-embedded so the result is
//! smooth across the angle seam.

mod fourier;

pub use fourier::{fit_fourier, FourierFit, FourierSeries};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::numeric::{lstsq, polar_angle_radius, unwrap_angles, CONDITION_LIMIT};

/// Grid size for the positivity and monotonicity checks at fit time.
const CHECK_GRID: usize = 4096;

/// Centre data and rotate onto principal axes.
///
/// Returns `(mean, rotation, rotated)` where `rotation` is orthogonal with
/// rows sorted by decreasing variance; rotated points are `R (x - mean)`.
/// Eigenvector signs are fixed deterministically (largest-magnitude entry
/// positive).
pub fn center_and_rotate(
    points: &[DVector<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<DVector<f64>>)> {
    let n = points.len();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 2, got: 0 });
    }
    let dim = points[0].len();
    if n < dim + 1 {
        return Err(Error::TooFewSamples {
            needed: dim + 1,
            got: n,
        });
    }

    let mut mean = DVector::zeros(dim);
    for p in points {
        mean += p;
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        cov.syger(1.0 / n as f64, &d, &d, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..dim {
        for j in (i + 1)..dim {
            cov[(i, j)] = cov[(j, i)];
        }
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lead = eig.eigenvalues[order[0]].max(0.0);
    let second = eig.eigenvalues[order[1]].max(0.0);
    if lead <= 0.0 || second <= 1e-12 * lead {
        return Err(Error::DegenerateData(
            "sample covariance has rank < 2".into(),
        ));
    }

    let mut rotation = DMatrix::zeros(dim, dim);
    for (row, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        let mut pivot = 0;
        for i in 1..dim {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        rotation.set_row(row, &v.transpose());
    }

    let rotated: Vec<DVector<f64>> = points.iter().map(|p| &rotation * (p - &mean)).collect();
    Ok((mean, rotation, rotated))
}

/// Cylindrical coordinates of a rectification-frame point: angle
/// `θ = atan2(q0, q1) ∈ (-π, π]`, radius `r = √(q0² + q1²)`, and the
/// remaining coordinates unchanged.
pub fn to_cylindrical(q: &DVector<f64>) -> Result<(f64, f64, DVector<f64>)> {
    let (theta, r) = polar_angle_radius(q[0], q[1])?;
    Ok((theta, r, q.rows(2, q.len() - 2).clone_owned()))
}

/// Angle-indexed model of the fitted limit cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleModel {
    /// Cycle radius `r̂(θ) > 0`.
    radial: FourierSeries,
    /// Transverse cycle offset `ẑ(θ)`; absent in two dimensions.
    transverse: Option<FourierSeries>,
    /// Angle remap `φ̂(θ)` with zero constant term; `θ - φ̂(θ)` advances
    /// uniformly in time on the cycle.
    protophase: FourierSeries,
    /// Estimated cycle period.
    period: f64,
    /// Whether `θ ↦ θ - φ̂(θ)` was strictly increasing on the check grid.
    /// Inversion requires it.
    monotone: bool,
}

impl LimitCycleModel {
    pub fn fourier_order(&self) -> usize {
        self.radial.order().max(self.protophase.order())
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn radial(&self) -> &FourierSeries {
        &self.radial
    }

    pub fn transverse(&self) -> Option<&FourierSeries> {
        self.transverse.as_ref()
    }

    pub fn protophase(&self) -> &FourierSeries {
        &self.protophase
    }
}

/// Affine frame plus cycle model: the full rectification map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RectificationMapDoc", into = "RectificationMapDoc")]
pub struct RectificationMap {
    dim: usize,
    mean: DVector<f64>,
    rotation: DMatrix<f64>,
    /// Per-coordinate rescaling applied after rotation (unit-variance first
    /// two components when z-scoring is enabled at fit time).
    scale: DVector<f64>,
    cycle: LimitCycleModel,
}

/// Serialized form: matrices row-major.
#[derive(Serialize, Deserialize)]
struct RectificationMapDoc {
    dim: usize,
    mean: Vec<f64>,
    rotation: Vec<f64>,
    scale: Vec<f64>,
    cycle: LimitCycleModel,
}

impl From<RectificationMap> for RectificationMapDoc {
    fn from(m: RectificationMap) -> Self {
        RectificationMapDoc {
            dim: m.dim,
            mean: m.mean.iter().copied().collect(),
            rotation: m.rotation.transpose().as_slice().to_vec(),
            scale: m.scale.iter().copied().collect(),
            cycle: m.cycle,
        }
    }
}

impl TryFrom<RectificationMapDoc> for RectificationMap {
    type Error = Error;

    fn try_from(d: RectificationMapDoc) -> Result<Self> {
        let n = d.dim;
        if d.mean.len() != n || d.scale.len() != n || d.rotation.len() != n * n {
            return Err(Error::ModelFormat(
                "rectification map field lengths inconsistent with dim".into(),
            ));
        }
        Ok(RectificationMap {
            dim: n,
            mean: DVector::from_vec(d.mean),
            rotation: DMatrix::from_row_slice(n, n, &d.rotation),
            scale: DVector::from_vec(d.scale),
            cycle: d.cycle,
        })
    }
}

/// Options for [`fit_limit_cycle`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleFitOptions {
    /// Fourier order of the radius, transverse, and angle-remap fits.
    pub fourier_order: usize,
    /// Rescale the first two principal components to unit variance before
    /// the cylindrical conversion.
    pub zscore: bool,
}

impl Default for CycleFitOptions {
    fn default() -> Self {
        CycleFitOptions {
            fourier_order: 10,
            zscore: true,
        }
    }
}

struct CylSegment {
    times: Vec<f64>,
    theta: Vec<f64>,
    theta_unwrapped: Vec<f64>,
    radius: Vec<f64>,
    z: Vec<DVector<f64>>,
}

fn cylindrical_segments(
    data: &TimeSeriesDataset,
    mean: &DVector<f64>,
    rotation: &DMatrix<f64>,
    scale: &DVector<f64>,
) -> Result<Vec<CylSegment>> {
    let mut out = Vec::with_capacity(data.segments.len());
    for seg in &data.segments {
        let mut theta = Vec::with_capacity(seg.len());
        let mut radius = Vec::with_capacity(seg.len());
        let mut z = Vec::with_capacity(seg.len());
        for x in &seg.states {
            let v = (rotation * (x - mean)).component_mul(scale);
            let (th, r) = polar_angle_radius(v[0], v[1])?;
            theta.push(th);
            radius.push(r);
            z.push(v.rows(2, v.len() - 2).clone_owned());
        }
        let theta_unwrapped = unwrap_angles(&theta);
        out.push(CylSegment {
            times: seg.times.clone(),
            theta,
            theta_unwrapped,
            radius,
            z,
        });
    }
    Ok(out)
}

/// Data mean, principal rotation (oriented so the data winds positively),
/// per-axis scaling, and the cylindrical view of every segment: the shared
/// front end of cycle fitting and of the circulation precondition.
fn oriented_cylindrical(
    data: &TimeSeriesDataset,
    zscore: bool,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>, Vec<CylSegment>)> {
    let dim = data.dim;
    if dim < 2 {
        return Err(Error::InvalidConfig(
            "rectification needs at least two state dimensions".into(),
        ));
    }
    let points: Vec<DVector<f64>> = data.all_states().cloned().collect();
    let (mean, mut rotation, rotated) = center_and_rotate(&points)?;

    let mut scale = DVector::from_element(dim, 1.0);
    if zscore {
        for j in 0..2 {
            let var = rotated.iter().map(|p| p[j] * p[j]).sum::<f64>() / rotated.len() as f64;
            if var <= 0.0 {
                return Err(Error::DegenerateData(format!(
                    "principal component {j} has zero variance"
                )));
            }
            scale[j] = 1.0 / var.sqrt();
        }
    }

    let mut cyl = cylindrical_segments(data, &mean, &rotation, &scale)?;
    let total_winding: f64 = cyl
        .iter()
        .filter(|s| !s.theta_unwrapped.is_empty())
        .map(|s| s.theta_unwrapped.last().unwrap() - s.theta_unwrapped[0])
        .sum();
    if total_winding < 0.0 {
        // Flip the first axis so the data winds in the positive direction.
        let flipped = -rotation.row(0).clone_owned();
        rotation.set_row(0, &flipped);
        cyl = cylindrical_segments(data, &mean, &rotation, &scale)?;
    }
    Ok((mean, rotation, scale, cyl))
}

/// Per-segment winding about the data mean in the scaled principal plane,
/// oriented so the total is non-negative. [`fit_limit_cycle`] requires each
/// entry to be non-negative and the total to reach a full turn; callers
/// producing data can use this to verify it is fit for that contract.
pub fn segment_windings(data: &TimeSeriesDataset, zscore: bool) -> Result<Vec<f64>> {
    let (_, _, _, cyl) = oriented_cylindrical(data, zscore)?;
    Ok(cyl
        .iter()
        .map(|s| {
            if s.theta_unwrapped.is_empty() {
                0.0
            } else {
                s.theta_unwrapped.last().unwrap() - s.theta_unwrapped[0]
            }
        })
        .collect())
}

/// Fit a rectification map to trajectory data.
///
/// The data must circulate: each segment's total winding must be
/// non-negative and the summed winding must reach a full turn. The frame
/// orientation is chosen so the data winds in the positive angle direction.
pub fn fit_limit_cycle(data: &TimeSeriesDataset, opts: &CycleFitOptions) -> Result<RectificationMap> {
    let dim = data.dim;
    let (mean, rotation, scale, cyl) = oriented_cylindrical(data, opts.zscore)?;

    let mut summed = 0.0;
    for (i, s) in cyl.iter().enumerate() {
        if s.theta_unwrapped.is_empty() {
            continue;
        }
        let w = s.theta_unwrapped.last().unwrap() - s.theta_unwrapped[0];
        if w < 0.0 {
            return Err(Error::NoCirculation(format!(
                "segment {i} has negative total winding ({w:.3e})"
            )));
        }
        summed += w;
    }
    if summed < TAU {
        return Err(Error::NoCirculation(format!(
            "summed winding {summed:.3e} is less than one full turn"
        )));
    }

    // Period from the sample-count-weighted mean angular rate; segments
    // shorter than 3 samples carry no rate estimate.
    let mut rate_acc = 0.0;
    let mut weight_acc = 0.0;
    for s in &cyl {
        let n = s.times.len();
        if n < 3 {
            continue;
        }
        let mut seg_rate = 0.0;
        for i in 0..n - 1 {
            seg_rate += (s.theta_unwrapped[i + 1] - s.theta_unwrapped[i])
                / (s.times[i + 1] - s.times[i]);
        }
        seg_rate /= (n - 1) as f64;
        rate_acc += seg_rate * n as f64;
        weight_acc += n as f64;
    }
    if weight_acc == 0.0 {
        return Err(Error::TooFewSamples { needed: 3, got: 0 });
    }
    let mean_rate = rate_acc / weight_acc;
    if mean_rate <= 0.0 {
        return Err(Error::NoCirculation(format!(
            "mean angular rate {mean_rate:.3e} is not positive"
        )));
    }
    let period = TAU / mean_rate;
    let omega = mean_rate;

    let n_total: usize = cyl.iter().map(|s| s.times.len()).sum();
    let all_theta: Vec<f64> = cyl.iter().flat_map(|s| s.theta.iter().copied()).collect();
    let all_radius: Vec<f64> = cyl.iter().flat_map(|s| s.radius.iter().copied()).collect();
    let radius_col = DMatrix::from_column_slice(n_total, 1, &all_radius);

    let k = opts.fourier_order;
    let radial = fit_fourier(&all_theta, &radius_col, k, None)?.series;
    let mut min_radius = f64::INFINITY;
    for m in 0..CHECK_GRID {
        let th = TAU * m as f64 / CHECK_GRID as f64;
        min_radius = min_radius.min(radial.eval_scalar(th));
    }
    if min_radius <= 0.0 {
        return Err(Error::NonPositiveRadius { min: min_radius });
    }

    let transverse = if dim > 2 {
        let mut zmat = DMatrix::zeros(n_total, dim - 2);
        let mut row = 0;
        for s in &cyl {
            for z in &s.z {
                zmat.set_row(row, &z.transpose());
                row += 1;
            }
        }
        Some(fit_fourier(&all_theta, &zmat, k, None)?.series)
    } else {
        None
    };

    // Angle remap: least squares of θ_unwrapped - ω t against harmonics of θ,
    // with per-segment offsets absorbed by centring target and regressors
    // within each segment. The constant term stays zero so the rectified
    // angle matches the raw angle on average.
    let mut design = DMatrix::zeros(n_total, 2 * k);
    let mut target = DMatrix::zeros(n_total, 1);
    let mut row = 0;
    for s in &cyl {
        let start = row;
        for i in 0..s.times.len() {
            for h in 1..=k {
                let (sn, cs) = (h as f64 * s.theta[i]).sin_cos();
                design[(row, 2 * h - 2)] = cs;
                design[(row, 2 * h - 1)] = sn;
            }
            target[(row, 0)] = s.theta_unwrapped[i] - omega * s.times[i];
            row += 1;
        }
        let len = row - start;
        if len == 0 {
            continue;
        }
        for c in 0..2 * k {
            let m = design.view((start, c), (len, 1)).sum() / len as f64;
            for r in start..row {
                design[(r, c)] -= m;
            }
        }
        let m = target.view((start, 0), (len, 1)).sum() / len as f64;
        for r in start..row {
            target[(r, 0)] -= m;
        }
    }
    if n_total < 2 * k {
        return Err(Error::Underdetermined {
            rows: n_total,
            cols: 2 * k,
        });
    }
    let proto_fit = lstsq(design, &target)?;
    if proto_fit.condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned {
            cond: proto_fit.condition,
        });
    }
    let mut cos_c = Vec::with_capacity(k);
    let mut sin_c = Vec::with_capacity(k);
    for h in 1..=k {
        cos_c.push(vec![proto_fit.solution[(2 * h - 2, 0)]]);
        sin_c.push(vec![proto_fit.solution[(2 * h - 1, 0)]]);
    }
    let protophase = FourierSeries::from_coefficients(vec![0.0], cos_c, sin_c);

    let mut monotone = true;
    let mut prev = 0.0 - protophase.eval_scalar(0.0);
    for m in 1..=CHECK_GRID {
        let th = TAU * m as f64 / CHECK_GRID as f64;
        let g = th - protophase.eval_scalar(th);
        if g <= prev {
            monotone = false;
            break;
        }
        prev = g;
    }

    Ok(RectificationMap {
        dim,
        mean,
        rotation,
        scale,
        cycle: LimitCycleModel {
            radial,
            transverse,
            protophase,
            period,
            monotone,
        },
    })
}

impl RectificationMap {
    /// The identity map: useful when data is already rectified.
    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 2);
        RectificationMap {
            dim,
            mean: DVector::zeros(dim),
            rotation: DMatrix::identity(dim, dim),
            scale: DVector::from_element(dim, 1.0),
            cycle: LimitCycleModel {
                radial: FourierSeries::constant(vec![1.0]),
                transverse: (dim > 2).then(|| FourierSeries::constant(vec![0.0; dim - 2])),
                protophase: FourierSeries::constant(vec![0.0]),
                period: TAU,
                monotone: true,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cycle(&self) -> &LimitCycleModel {
        &self.cycle
    }

    pub fn period(&self) -> f64 {
        self.cycle.period
    }

    /// Rectified cylindrical coordinates `(θ', r', z')` of a point.
    pub fn rectify_cylindrical(&self, x: &DVector<f64>) -> Result<(f64, f64, DVector<f64>)> {
        debug_assert_eq!(x.len(), self.dim);
        let v = (&self.rotation * (x - &self.mean)).component_mul(&self.scale);
        let (theta, r) = polar_angle_radius(v[0], v[1])?;
        let c = &self.cycle;
        let theta_p = theta - c.protophase.eval_scalar(theta);
        let r_p = r / c.radial.eval_scalar(theta);
        let mut z_p = v.rows(2, self.dim - 2).clone_owned();
        if let Some(tr) = &c.transverse {
            z_p -= tr.eval(theta);
        }
        Ok((theta_p, r_p, z_p))
    }

    /// Map a point to rectified coordinates, re-embedded as
    /// `(r' sin θ', r' cos θ', z')`.
    pub fn rectify(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (theta_p, r_p, z_p) = self.rectify_cylindrical(x)?;
        let mut out = DVector::zeros(self.dim);
        out[0] = r_p * theta_p.sin();
        out[1] = r_p * theta_p.cos();
        for (i, z) in z_p.iter().enumerate() {
            out[2 + i] = *z;
        }
        Ok(out)
    }

    /// Jacobian of [`RectificationMap::rectify`] at `x`.
    pub fn rectify_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let v = (&self.rotation * (x - &self.mean)).component_mul(&self.scale);
        let (theta, r) = polar_angle_radius(v[0], v[1])?;
        let c = &self.cycle;

        // d(θ, r, z)/dv
        let mut b = DMatrix::zeros(n, n);
        b[(0, 0)] = v[1] / (r * r);
        b[(0, 1)] = -v[0] / (r * r);
        b[(1, 0)] = v[0] / r;
        b[(1, 1)] = v[1] / r;
        for i in 2..n {
            b[(i, i)] = 1.0;
        }

        // d(θ', r', z')/d(θ, r, z)
        let rhat = c.radial.eval_scalar(theta);
        let rhat_d = c.radial.derivative_scalar(theta);
        let mut m = DMatrix::zeros(n, n);
        m[(0, 0)] = 1.0 - c.protophase.derivative_scalar(theta);
        m[(1, 0)] = -r * rhat_d / (rhat * rhat);
        m[(1, 1)] = 1.0 / rhat;
        if let Some(tr) = &c.transverse {
            let dz = tr.derivative(theta);
            for i in 0..n - 2 {
                m[(2 + i, 0)] = -dz[i];
                m[(2 + i, 2 + i)] = 1.0;
            }
        }

        // dw/d(θ', r', z')
        let theta_p = theta - c.protophase.eval_scalar(theta);
        let r_p = r / rhat;
        let (sp, cp) = theta_p.sin_cos();
        let mut e = DMatrix::zeros(n, n);
        e[(0, 0)] = r_p * cp;
        e[(0, 1)] = sp;
        e[(1, 0)] = -r_p * sp;
        e[(1, 1)] = cp;
        for i in 2..n {
            e[(i, i)] = 1.0;
        }

        let mut front = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                front[(i, j)] = self.scale[i] * self.rotation[(i, j)];
            }
        }
        Ok(e * m * b * front)
    }

    /// Invert the rectification: find `x` with `rectify(x) = q`.
    ///
    /// Requires the angle remap to be monotone; solves `θ - φ̂(θ) = θ'` by
    /// bisection (the left side is strictly increasing) to a residual below
    /// 1e-10 and reassembles the original coordinates.
    pub fn unrectify(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.cycle.monotone {
            return Err(Error::NotInvertible);
        }
        let (theta_p, r_p) = polar_angle_radius(q[0], q[1])?;
        let c = &self.cycle;
        let bound = c.protophase.magnitude_bound(0) + 1.0;
        let g = |th: f64| th - c.protophase.eval_scalar(th);
        let mut lo = theta_p - bound;
        let mut hi = theta_p + bound;
        for _ in 0..200 {
            if hi - lo <= 1e-15 * (1.0 + theta_p.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if g(mid) < theta_p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut theta = 0.5 * (lo + hi);
        for _ in 0..3 {
            let deriv = 1.0 - c.protophase.derivative_scalar(theta);
            if deriv <= 1e-12 {
                break;
            }
            theta -= (g(theta) - theta_p) / deriv;
        }
        if (g(theta) - theta_p).abs() > 1e-10 {
            return Err(Error::NotInvertible);
        }

        let r = r_p * c.radial.eval_scalar(theta);
        let mut v = DVector::zeros(self.dim);
        v[0] = r * theta.sin();
        v[1] = r * theta.cos();
        for i in 2..self.dim {
            v[i] = q[i];
        }
        if let Some(tr) = &c.transverse {
            let z = tr.eval(theta);
            for i in 0..self.dim - 2 {
                v[2 + i] += z[i];
            }
        }
        let u = v.component_div(&self.scale);
        Ok(self.rotation.tr_mul(&u) + &self.mean)
    }
}
