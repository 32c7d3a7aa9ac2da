//! Stratonovich sample paths via a three-stage stochastic Runge-Kutta step
//! whose deterministic core is the classical third-order rule. The same
//! Brownian increment enters every stage; averaging the stage positions
//! gives midpoint (Stratonovich) consistency.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One sample path. The Brownian increments that produced it are kept so a
/// coarser integration can be driven by the same noise (pair-summing
/// adjacent increments), which is what strong-convergence measurements need.
#[derive(Debug, Clone)]
pub struct SdePath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub increments: Vec<DVector<f64>>,
}

impl SdePath {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("paths hold at least the start")
    }

    /// Total Brownian displacement over the path.
    pub fn total_increment(&self) -> DVector<f64> {
        let n = self.increments.first().map_or(0, |w| w.len());
        let mut total = DVector::zeros(n);
        for w in &self.increments {
            total += w;
        }
        total
    }

    /// Increments for a path with twice the step: adjacent pairs summed.
    pub fn coarsened_increments(&self) -> Vec<DVector<f64>> {
        self.increments
            .chunks(2)
            .map(|pair| {
                let mut w = pair[0].clone();
                if pair.len() == 2 {
                    w += &pair[1];
                }
                w
            })
            .collect()
    }
}

fn check_finite(x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

/// Integrate with explicitly supplied Brownian increments, one per step.
/// The step count is the increment count; the increment length must match
/// the diffusion's column count.
pub fn sde_integrate_with_increments<F, G>(
    field: F,
    diffusion: G,
    x0: &DVector<f64>,
    dt: f64,
    increments: Vec<DVector<f64>>,
) -> Result<SdePath>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    G: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("step size {dt} must be positive")));
    }
    let steps = increments.len();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.clone());
    check_finite(x0, 0.0)?;

    let stage = |x: &DVector<f64>, dw: &DVector<f64>| -> Result<DVector<f64>> {
        let mut k = field(x)? * dt;
        if dw.len() > 0 {
            k += diffusion(x) * dw;
        }
        Ok(k)
    };

    let mut x = x0.clone();
    for (step, dw) in increments.iter().enumerate() {
        let t_next = (step + 1) as f64 * dt;
        let k1 = stage(&x, dw)?;
        let k2 = stage(&(&x + &k1 * 0.5), dw)?;
        let k3 = stage(&(&x - &k1 + &k2 * 2.0), dw)?;
        x += (k1 + k2 * 4.0 + k3) / 6.0;
        check_finite(&x, t_next)?;
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(SdePath {
        times,
        states,
        increments,
    })
}

/// Integrate from 0 to `t_end` on a uniform grid, drawing the Brownian
/// increments (one N(0, dt) draw per noise column per step) from `rng`.
/// The diffusion's column count is probed at the start point.
pub fn sde_integrate<F, G, R>(
    field: F,
    diffusion: G,
    x0: &DVector<f64>,
    dt: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<SdePath>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    G: Fn(&DVector<f64>) -> DMatrix<f64>,
    R: Rng,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("step size {dt} must be positive")));
    }
    if !(t_end >= dt) {
        return Err(Error::InvalidConfig(format!(
            "horizon {t_end} shorter than one step {dt}"
        )));
    }
    let steps = ((t_end / dt) + 1e-9).floor().max(1.0) as usize;
    let n_noise = diffusion(x0).ncols();
    let root_dt = dt.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let increments: Vec<DVector<f64>> = (0..steps)
        .map(|_| DVector::from_fn(n_noise, |_, _| normal.sample(rng) * root_dt))
        .collect();
    sde_integrate_with_increments(field, diffusion, x0, dt, increments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_vec(vec![v])
    }

    #[test]
    fn deterministic_limit_matches_the_exponential() {
        let path = sde_integrate(
            |x| Ok(-x),
            |_| DMatrix::zeros(1, 0),
            &scalar(1.0),
            1e-3,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(path.times.len(), 1001);
        assert_eq!(*path.times.last().unwrap(), 1000.0 * 1e-3);
        let err = (path.final_state()[0] - (-1.0f64).exp()).abs();
        assert!(err < 1e-6, "endpoint error {err}");
    }

    #[test]
    fn fixed_seed_reproduces_the_path_bitwise() {
        let run = || {
            sde_integrate(
                |x| Ok(-x),
                |x| DMatrix::from_vec(1, 1, vec![0.4 * x[0]]),
                &scalar(1.0),
                1e-2,
                2.0,
                &mut ChaCha8Rng::seed_from_u64(99),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x[0].to_bits(), y[0].to_bits());
        }
    }

    #[test]
    fn diverging_paths_are_reported_with_a_time() {
        let err = sde_integrate(
            |x| Ok(scalar(x[0] * x[0] * x[0])),
            |_| DMatrix::zeros(1, 0),
            &scalar(10.0),
            0.5,
            10.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        match err {
            Err(Error::NonFinite { t }) => assert!(t > 0.0 && t <= 10.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let field = |x: &DVector<f64>| Ok(-x);
        let noise = |_: &DVector<f64>| DMatrix::zeros(1, 0);
        assert!(matches!(
            sde_integrate(field, noise, &scalar(1.0), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            sde_integrate(field, noise, &scalar(1.0), 0.5, 0.1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InvalidConfig(_))
        ));
    }

    // dx = a x dt + b x ∘ dW solves to x(t) = x0 exp(at + bW(t)), which
    // makes both strong error and the mean directly checkable.
    const A: f64 = -0.5;
    const B: f64 = 0.3;

    fn geometric(x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(x * A)
    }

    fn geometric_noise(x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_vec(1, 1, vec![B * x[0]])
    }

    #[test]
    fn strong_error_shrinks_when_the_step_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fine_dt = 2f64.powi(-8);
        let n_paths = 400;
        let mut errors = [0.0f64; 3];
        for _ in 0..n_paths {
            let fine = sde_integrate(
                geometric,
                geometric_noise,
                &scalar(1.0),
                fine_dt,
                1.0,
                &mut rng,
            )
            .unwrap();
            let w_total = fine.total_increment()[0];
            let exact = (A + B * w_total).exp();
            let mut path = fine;
            let mut dt = fine_dt;
            for err in errors.iter_mut().rev() {
                *err += (path.final_state()[0] - exact).abs();
                dt *= 2.0;
                let coarse = path.coarsened_increments();
                path = sde_integrate_with_increments(
                    geometric,
                    geometric_noise,
                    &scalar(1.0),
                    dt,
                    coarse,
                )
                .unwrap();
            }
        }
        for pair in errors.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                ratio >= 1.2,
                "errors {errors:?} should shrink by ≥1.2 per halving"
            );
        }
    }

    #[test]
    fn weak_mean_matches_the_lognormal_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n_paths = 4000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_paths {
            let path = sde_integrate(
                geometric,
                geometric_noise,
                &scalar(1.0),
                2f64.powi(-6),
                1.0,
                &mut rng,
            )
            .unwrap();
            let v = path.final_state()[0];
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n_paths as f64;
        let var = (sum_sq / n_paths as f64 - mean * mean).max(0.0);
        let se = (var / n_paths as f64).sqrt();
        let expected = (A + B * B / 2.0).exp();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean} vs {expected} (3se = {})",
            3.0 * se
        );
    }
}
