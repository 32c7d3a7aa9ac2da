//! Constant-velocity Kalman smoothing. Each coordinate gets an independent
//! two-state [position; velocity] filter; the two process-variance levels
//! are shared across coordinates and chosen by maximizing the observation
//! likelihood. Velocities fall out of the smoothed state.

use nalgebra::{Matrix2, Vector2};

use crate::dataset::{Segment, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::numeric::nelder_mead;

#[derive(Debug, Clone)]
pub struct SmootherConfig {
    /// Observation variance, held fixed during the likelihood search.
    pub r_obs: f64,
    /// Initial guess for the two process-variance levels.
    pub q_pos: f64,
    pub q_vel: f64,
    /// Search box for ln q_pos and ln q_vel.
    pub log_q_bounds: (f64, f64),
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            r_obs: 1e-4,
            q_pos: 1e-3,
            q_vel: 1e-1,
            log_q_bounds: (-30.0, 10.0),
        }
    }
}

impl SmootherConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_obs", self.r_obs),
            ("q_pos", self.q_pos),
            ("q_vel", self.q_vel),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a positive variance, got {v}"
                )));
            }
        }
        if !(self.log_q_bounds.0 < self.log_q_bounds.1) {
            return Err(Error::InvalidConfig("empty likelihood search box".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KalmanSmoothed {
    /// Smoothed positions with smoothed velocities filled in; timestamps
    /// and any truth labels pass through untouched.
    pub data: TimeSeriesDataset,
    /// Fitted process-variance levels.
    pub q_pos: f64,
    pub q_vel: f64,
    pub log_likelihood: f64,
}

struct ForwardPass {
    log_likelihood: f64,
    // Per step: filtered state/cov and one-step prediction, for the
    // backward smoother.
    filt_x: Vec<Vector2<f64>>,
    filt_p: Vec<Matrix2<f64>>,
    pred_x: Vec<Vector2<f64>>,
    pred_p: Vec<Matrix2<f64>>,
}

/// Forward filter on one coordinate of one segment. The first sample
/// initializes the position state, so its innovation carries no
/// information and is skipped in the likelihood.
fn forward(times: &[f64], obs: &[f64], q_pos: f64, q_vel: f64, r_obs: f64) -> ForwardPass {
    let n = obs.len();
    let mut pass = ForwardPass {
        log_likelihood: 0.0,
        filt_x: Vec::with_capacity(n),
        filt_p: Vec::with_capacity(n),
        pred_x: Vec::with_capacity(n),
        pred_p: Vec::with_capacity(n),
    };
    let spread = obs.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let dt0 = (times[1] - times[0]).max(1e-300);
    let mut x = Vector2::new(obs[0], 0.0);
    let mut p = Matrix2::new(r_obs, 0.0, 0.0, 1e6 * (spread / (dt0 * dt0) + 1.0));
    pass.pred_x.push(x);
    pass.pred_p.push(p);
    pass.filt_x.push(x);
    pass.filt_p.push(p);

    for k in 1..n {
        let dt = times[k] - times[k - 1];
        let f = Matrix2::new(1.0, dt, 0.0, 1.0);
        let q = Matrix2::new(q_pos * dt, 0.0, 0.0, q_vel * dt);
        let xp = f * x;
        let pp = f * p * f.transpose() + q;
        pass.pred_x.push(xp);
        pass.pred_p.push(pp);

        let s = pp[(0, 0)] + r_obs;
        let innov = obs[k] - xp[0];
        pass.log_likelihood -=
            0.5 * ((std::f64::consts::TAU * s).ln() + innov * innov / s);
        let gain = Vector2::new(pp[(0, 0)] / s, pp[(1, 0)] / s);
        x = xp + gain * innov;
        // Joseph form keeps the covariance symmetric positive.
        let ikh = Matrix2::new(1.0 - gain[0], 0.0, -gain[1], 1.0);
        p = ikh * pp * ikh.transpose() + gain * gain.transpose() * r_obs;
        pass.filt_x.push(x);
        pass.filt_p.push(p);
    }
    pass
}

/// Backward (RTS) pass; returns smoothed [position; velocity] per sample.
fn backward(times: &[f64], pass: &ForwardPass) -> Vec<Vector2<f64>> {
    let n = pass.filt_x.len();
    let mut out = vec![Vector2::zeros(); n];
    out[n - 1] = pass.filt_x[n - 1];
    let mut x_next = pass.filt_x[n - 1];
    for k in (0..n - 1).rev() {
        let dt = times[k + 1] - times[k];
        let f = Matrix2::new(1.0, dt, 0.0, 1.0);
        let gain = pass.filt_p[k]
            * f.transpose()
            * pass.pred_p[k + 1]
                .try_inverse()
                .expect("prediction covariance is positive definite");
        x_next = pass.filt_x[k] + gain * (x_next - pass.pred_x[k + 1]);
        out[k] = x_next;
    }
    out
}

fn check_segments(data: &TimeSeriesDataset) -> Result<()> {
    for (index, seg) in data.segments.iter().enumerate() {
        if seg.times.len() < 3 {
            return Err(Error::SegmentTooShort {
                index,
                len: seg.times.len(),
            });
        }
    }
    Ok(())
}

/// Total observation log-likelihood of the dataset under the shared
/// two-level constant-velocity model.
pub fn log_likelihood(
    data: &TimeSeriesDataset,
    q_pos: f64,
    q_vel: f64,
    r_obs: f64,
) -> Result<f64> {
    check_segments(data)?;
    let mut total = 0.0;
    for seg in &data.segments {
        for c in 0..data.dim {
            let obs: Vec<f64> = seg.states.iter().map(|x| x[c]).collect();
            total += forward(&seg.times, &obs, q_pos, q_vel, r_obs).log_likelihood;
        }
    }
    Ok(total)
}

/// Smooth with explicit parameter values (no fitting).
pub fn smooth_with(
    data: &TimeSeriesDataset,
    q_pos: f64,
    q_vel: f64,
    r_obs: f64,
) -> Result<KalmanSmoothed> {
    check_segments(data)?;
    let mut segments = Vec::with_capacity(data.segments.len());
    let mut total_ll = 0.0;
    for seg in &data.segments {
        let n = seg.times.len();
        let mut states = vec![nalgebra::DVector::zeros(data.dim); n];
        let mut velocities = vec![nalgebra::DVector::zeros(data.dim); n];
        for c in 0..data.dim {
            let obs: Vec<f64> = seg.states.iter().map(|x| x[c]).collect();
            let pass = forward(&seg.times, &obs, q_pos, q_vel, r_obs);
            total_ll += pass.log_likelihood;
            for (k, sm) in backward(&seg.times, &pass).into_iter().enumerate() {
                states[k][c] = sm[0];
                velocities[k][c] = sm[1];
            }
        }
        segments.push(Segment {
            times: seg.times.clone(),
            states,
            velocities: Some(velocities),
            true_phase: seg.true_phase.clone(),
        });
    }
    let mut out = TimeSeriesDataset::new(data.dim, segments)?;
    out.config_json = data.config_json.clone();
    Ok(KalmanSmoothed {
        data: out,
        q_pos,
        q_vel,
        log_likelihood: total_ll,
    })
}

/// Fit the two process-variance levels by likelihood, then smooth.
///
/// The search runs over (ln q_pos, ln q_vel) with a derivative-free simplex
/// from three deterministic starts (the configured guess and two spread
/// probes); out-of-box moves pay a quadratic penalty.
pub fn kalman_smooth(data: &TimeSeriesDataset, cfg: &SmootherConfig) -> Result<KalmanSmoothed> {
    cfg.validate()?;
    check_segments(data)?;
    let (lo, hi) = cfg.log_q_bounds;
    let clamp = |v: f64| v.clamp(lo, hi);
    let objective = |v: &[f64]| {
        let mut penalty = 0.0;
        for &u in v {
            let c = u.clamp(lo, hi);
            penalty += 1e6 * (u - c) * (u - c);
        }
        let q_pos = clamp(v[0]).exp();
        let q_vel = clamp(v[1]).exp();
        let ll = log_likelihood(data, q_pos, q_vel, cfg.r_obs)
            .expect("segment lengths already checked");
        penalty - ll
    };

    let starts = [
        [clamp(cfg.q_pos.ln()), clamp(cfg.q_vel.ln())],
        [clamp(-6.0), clamp(0.0)],
        [clamp(0.0), clamp(4.0)],
    ];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (point, value) = nelder_mead(&objective, &start, 1.0, 200);
        if best.as_ref().map_or(true, |(_, bv)| value < *bv) {
            best = Some((point, value));
        }
    }
    let (point, _) = best.expect("at least one start");
    smooth_with(
        data,
        clamp(point[0]).exp(),
        clamp(point[1]).exp(),
        cfg.r_obs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset_from_scalar(times: Vec<f64>, values: Vec<f64>) -> TimeSeriesDataset {
        let states = values.iter().map(|&v| DVector::from_vec(vec![v])).collect();
        TimeSeriesDataset::new(
            1,
            vec![Segment {
                times,
                states,
                velocities: None,
                true_phase: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn ramp_velocity_is_recovered() {
        let times: Vec<f64> = (0..200).map(|k| 0.01 * k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| 3.0 * t + 0.5).collect();
        let data = dataset_from_scalar(times, values);
        let sm = smooth_with(&data, 1e-4, 1e-2, 1e-8).unwrap();
        let v = sm.data.segments[0].velocities.as_ref().unwrap();
        for k in 20..200 {
            assert!(
                (v[k][0] - 3.0).abs() < 1e-6,
                "velocity {} at sample {k}",
                v[k][0]
            );
        }
    }

    #[test]
    fn vanishing_observation_noise_reproduces_the_samples() {
        let times: Vec<f64> = (0..100).map(|k| 0.05 * k as f64).collect();
        let values: Vec<f64> = times.iter().map(|t| (2.0 * t).sin() + 0.3 * t).collect();
        let data = dataset_from_scalar(times.clone(), values.clone());
        let sm = smooth_with(&data, 1.0, 1.0, 1e-12).unwrap();
        let states = &sm.data.segments[0].states;
        let worst = values
            .iter()
            .zip(states)
            .map(|(y, x)| (y - x[0]).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-9, "worst reproduction error {worst}");
    }

    #[test]
    fn two_sample_segments_are_rejected() {
        let data = dataset_from_scalar(vec![0.0, 0.1], vec![1.0, 2.0]);
        let err = kalman_smooth(&data, &SmootherConfig::default());
        assert!(matches!(
            err,
            Err(Error::SegmentTooShort { index: 0, len: 2 })
        ));
    }

    #[test]
    fn fitted_parameters_beat_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let times: Vec<f64> = (0..300).map(|k| 0.02 * k as f64).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|t| (1.5 * t).sin() + 0.05 * rng.gen::<f64>())
            .collect();
        let data = dataset_from_scalar(times, values);
        let cfg = SmootherConfig::default();
        let fitted = kalman_smooth(&data, &cfg).unwrap();
        let (lo, hi) = cfg.log_q_bounds;
        for _ in 0..25 {
            let q_pos = (lo + (hi - lo) * rng.gen::<f64>()).exp();
            let q_vel = (lo + (hi - lo) * rng.gen::<f64>()).exp();
            let ll = log_likelihood(&data, q_pos, q_vel, cfg.r_obs).unwrap();
            assert!(
                fitted.log_likelihood >= ll - 1e-9,
                "probe ({q_pos:.3e}, {q_vel:.3e}) beat the fit: {ll} > {}",
                fitted.log_likelihood
            );
        }
    }

    #[test]
    fn smoothed_velocity_beats_finite_differences_on_noisy_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let dt = 0.01;
        let times: Vec<f64> = (0..1000).map(|k| dt * k as f64).collect();
        let noise = rand_distr::Normal::new(0.0, 0.05).unwrap();
        let values: Vec<f64> = times
            .iter()
            .map(|t| t.sin() + rand_distr::Distribution::sample(&noise, &mut rng))
            .collect();
        let data = dataset_from_scalar(times.clone(), values.clone());
        let cfg = SmootherConfig {
            r_obs: 0.05 * 0.05,
            ..SmootherConfig::default()
        };
        let sm = kalman_smooth(&data, &cfg).unwrap();
        let v = sm.data.segments[0].velocities.as_ref().unwrap();

        let mut kalman_sq = 0.0;
        let mut fd_sq = 0.0;
        let mut count = 0;
        for k in 1..999 {
            let truth = times[k].cos();
            let fd = (values[k + 1] - values[k - 1]) / (2.0 * dt);
            kalman_sq += (v[k][0] - truth).powi(2);
            fd_sq += (fd - truth).powi(2);
            count += 1;
        }
        let kalman_rms = (kalman_sq / count as f64).sqrt();
        let fd_rms = (fd_sq / count as f64).sqrt();
        assert!(
            kalman_rms < fd_rms,
            "smoother RMS {kalman_rms} vs finite-difference RMS {fd_rms}"
        );
    }
}
