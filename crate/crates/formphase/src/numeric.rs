//! Small numeric utilities shared across the crate: angle wrapping,
//! QR least squares, a Nelder-Mead simplex, and finite differences.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_to_2pi(a: f64) -> f64 {
    let mut x = a % TAU;
    if x < 0.0 {
        x += TAU;
    }
    // `x % TAU + TAU` can round up to exactly TAU for tiny negative inputs.
    if x >= TAU {
        x = 0.0;
    }
    x
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_to_pi(a: f64) -> f64 {
    let mut x = a % TAU;
    if x <= -PI {
        x += TAU;
    } else if x > PI {
        x -= TAU;
    }
    x
}

/// Unwrap a sequence of angles: jumps larger than π in magnitude are treated
/// as wraps around the circle.
pub fn unwrap_angles(seq: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(seq.len());
    let mut prev_in = f64::NAN;
    let mut prev_out = 0.0;
    for (i, &a) in seq.iter().enumerate() {
        if i == 0 {
            prev_out = a;
        } else {
            prev_out += wrap_to_pi(a - prev_in);
        }
        prev_in = a;
        out.push(prev_out);
    }
    out
}

/// Polar decomposition of the circulation plane. The angle convention is
/// `θ = atan2(q0, q1)`, so `(q0, q1) = (r sin θ, r cos θ)` and θ lies in
/// `(-π, π]`.
pub fn polar_angle_radius(q0: f64, q1: f64) -> Result<(f64, f64)> {
    let r = q0.hypot(q1);
    if r == 0.0 {
        return Err(Error::OriginSingularity);
    }
    let mut theta = q0.atan2(q1);
    if theta == -PI {
        theta = PI;
    }
    Ok((theta, r))
}

/// Result of a least-squares solve.
pub struct Lstsq {
    /// Solution matrix, one column per right-hand-side column.
    pub solution: DMatrix<f64>,
    /// 2-norm condition number of the design matrix.
    pub condition: f64,
    /// Squared residual ‖A x − b‖² per right-hand-side column, from the
    /// Pythagorean identity ‖b‖² − ‖Q₁ᵀb‖² (clamped at zero).
    pub residual_sq: Vec<f64>,
}

/// Minimise ‖A x − b‖₂ column-wise by Householder QR. Requires
/// `A.nrows() ≥ A.ncols()`; fails only if R is exactly singular. Callers
/// enforce their own condition-number limits via [`Lstsq::condition`].
pub fn lstsq(design: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<Lstsq> {
    assert!(design.nrows() >= design.ncols(), "design must be tall");
    let qr = design.qr();
    let qtb = qr.q().tr_mul(rhs);
    let r = qr.unpack_r();
    let sv = r.clone().singular_values();
    let (mut smax, mut smin) = (0.0f64, f64::INFINITY);
    for &s in sv.iter() {
        smax = smax.max(s);
        smin = smin.min(s);
    }
    let condition = if smin <= 0.0 { f64::INFINITY } else { smax / smin };
    let residual_sq = (0..rhs.ncols())
        .map(|c| (rhs.column(c).norm_squared() - qtb.column(c).norm_squared()).max(0.0))
        .collect();
    let solution = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::IllConditioned { cond: condition })?;
    Ok(Lstsq {
        solution,
        condition,
        residual_sq,
    })
}

/// Condition-number limit above which fits are rejected as ill-conditioned.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Nelder-Mead simplex minimisation. Returns the best point and value seen.
/// Deterministic for a fixed starting point and step.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: f64, max_iter: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if (values[worst] - values[best]).abs() < 1e-12 * (1.0 + values[best].abs()) {
            break;
        }

        let mut centroid = vec![0.0; n];
        for &i in order.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / n as f64;
            }
        }

        let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
        };

        let reflected = blend(&centroid, &simplex[worst], -alpha);
        let f_ref = f(&reflected);
        if f_ref < values[second_worst] && f_ref >= values[best] {
            simplex[worst] = reflected;
            values[worst] = f_ref;
        } else if f_ref < values[best] {
            let expanded = blend(&centroid, &simplex[worst], -gamma);
            let f_exp = f(&expanded);
            if f_exp < f_ref {
                simplex[worst] = expanded;
                values[worst] = f_exp;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_ref;
            }
        } else {
            let contracted = blend(&centroid, &simplex[worst], rho);
            let f_con = f(&contracted);
            if f_con < values[worst] {
                simplex[worst] = contracted;
                values[worst] = f_con;
            } else {
                let best_point = simplex[best].clone();
                for i in 0..=n {
                    if i == best {
                        continue;
                    }
                    simplex[i] = blend(&best_point, &simplex[i], sigma);
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best])
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let fx = f(x);
    let m = fx.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

/// Format a float with 17 significant digits, enough to round-trip f64.
pub fn fmt_g17(x: f64) -> String {
    format!("{:.16e}", x)
}
