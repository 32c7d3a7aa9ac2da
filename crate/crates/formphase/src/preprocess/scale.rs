//! Scale normalization before fitting: rotate onto principal axes and give
//! the two cycle-carrying components unit variance. The transform is affine
//! and kept around so results can be mapped back.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Segment, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::numeric::unwrap_angles;
use crate::rectify::center_and_rotate;

/// Invertible record of the z-scoring transform: `x' = S R (x - mean)`
/// with `R` orthogonal (principal axes as rows) and `S` diagonal.
#[derive(Debug, Clone)]
pub struct PcScaling {
    pub mean: DVector<f64>,
    pub rotation: DMatrix<f64>,
    pub scale: DVector<f64>,
}

impl PcScaling {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut q = &self.rotation * (x - &self.mean);
        q.component_mul_assign(&self.scale);
        q
    }

    /// Velocities transform without the offset.
    pub fn apply_tangent(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut q = &self.rotation * v;
        q.component_mul_assign(&self.scale);
        q
    }

    pub fn invert(&self, q: &DVector<f64>) -> DVector<f64> {
        let unscaled = q.component_div(&self.scale);
        self.rotation.tr_mul(&unscaled) + &self.mean
    }
}

/// Rotate the dataset onto its principal axes and rescale the first two
/// components to unit (population) variance; components past the second
/// keep their scale.
pub fn zscore_pcs(data: &TimeSeriesDataset) -> Result<(TimeSeriesDataset, PcScaling)> {
    let points: Vec<DVector<f64>> = data.all_states().cloned().collect();
    let (mean, rotation, rotated) = center_and_rotate(&points)?;
    let n = rotated.len();
    let dim = data.dim;

    let mut scale = DVector::from_element(dim, 1.0);
    for c in 0..2.min(dim) {
        let var = rotated.iter().map(|q| q[c] * q[c]).sum::<f64>() / n as f64;
        if var <= 1e-24 {
            return Err(Error::DegenerateData(format!(
                "principal component {c} has no variance"
            )));
        }
        scale[c] = 1.0 / var.sqrt();
    }

    let scaling = PcScaling {
        mean,
        rotation,
        scale,
    };
    let segments = data
        .segments
        .iter()
        .map(|seg| Segment {
            times: seg.times.clone(),
            states: seg.states.iter().map(|x| scaling.apply(x)).collect(),
            velocities: seg
                .velocities
                .as_ref()
                .map(|vs| vs.iter().map(|v| scaling.apply_tangent(v)).collect()),
            true_phase: seg.true_phase.clone(),
        })
        .collect();
    let mut out = TimeSeriesDataset::new(dim, segments)?;
    out.config_json = data.config_json.clone();
    Ok((out, scaling))
}

/// Unwrap each oscillator's phase and remove the across-oscillator mean at
/// every timestamp, leaving per-oscillator relative phases that sum to zero.
pub fn relative_phase(phases: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if phases.len() < 2 {
        return Err(Error::InvalidConfig(
            "relative phase needs at least two oscillators".into(),
        ));
    }
    let len = phases[0].len();
    for (i, p) in phases.iter().enumerate() {
        if p.len() != len {
            return Err(Error::MismatchedTimestamps(format!(
                "oscillator {i} has {} samples, expected {len}",
                p.len()
            )));
        }
    }
    let unwrapped: Vec<Vec<f64>> = phases.iter().map(|p| unwrap_angles(p)).collect();
    let mut out = vec![vec![0.0; len]; phases.len()];
    for k in 0..len {
        let mean = unwrapped.iter().map(|p| p[k]).sum::<f64>() / phases.len() as f64;
        for (i, p) in unwrapped.iter().enumerate() {
            out[i][k] = p[k] - mean;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(points: Vec<Vec<f64>>) -> TimeSeriesDataset {
        let states: Vec<DVector<f64>> = points.into_iter().map(DVector::from_vec).collect();
        let times: Vec<f64> = (0..states.len()).map(|k| k as f64).collect();
        let velocities = states.iter().map(|x| x * 2.0).collect();
        TimeSeriesDataset::new(
            2,
            vec![Segment {
                times,
                states,
                velocities: Some(velocities),
                true_phase: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn known_variances_get_reciprocal_scales() {
        // Population variances 4 (first axis) and 9 (second); principal
        // order puts the 9 first.
        let data = dataset(vec![
            vec![2.0, 3.0],
            vec![2.0, -3.0],
            vec![-2.0, 3.0],
            vec![-2.0, -3.0],
        ]);
        let (out, scaling) = zscore_pcs(&data).unwrap();
        assert!((scaling.scale[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((scaling.scale[1] - 1.0 / 2.0).abs() < 1e-12);
        for c in 0..2 {
            let var = out.segments[0]
                .states
                .iter()
                .map(|q| q[c] * q[c])
                .sum::<f64>()
                / 4.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_is_idempotent() {
        let data = dataset(vec![
            vec![1.0, 0.3],
            vec![-0.5, 1.2],
            vec![0.2, -1.1],
            vec![-0.7, -0.4],
            vec![0.9, 0.8],
        ]);
        let (once, _) = zscore_pcs(&data).unwrap();
        let (_, again) = zscore_pcs(&once).unwrap();
        assert!((again.scale[0] - 1.0).abs() < 1e-9);
        assert!((again.scale[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn transform_round_trips_states_and_velocities() {
        let data = dataset(vec![
            vec![1.0, 0.3],
            vec![-0.5, 1.2],
            vec![0.2, -1.1],
            vec![-0.7, -0.4],
        ]);
        let (out, scaling) = zscore_pcs(&data).unwrap();
        for (orig, scaled) in data.segments[0].states.iter().zip(&out.segments[0].states) {
            let back = scaling.invert(scaled);
            assert!((back - orig).norm() < 1e-12);
        }
        let vs_orig = data.segments[0].velocities.as_ref().unwrap();
        let vs_out = out.segments[0].velocities.as_ref().unwrap();
        for (orig, scaled) in vs_orig.iter().zip(vs_out) {
            let mut unscaled = scaled.component_div(&scaling.scale);
            unscaled = scaling.rotation.tr_mul(&unscaled);
            assert!((unscaled - orig).norm() < 1e-12);
        }
    }

    #[test]
    fn flat_direction_is_degenerate() {
        let data = dataset(vec![
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![-1.0, -2.0],
            vec![0.5, 1.0],
        ]);
        assert!(matches!(
            zscore_pcs(&data),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn identical_phases_have_zero_relative_phase() {
        let p = vec![0.1, 0.5, 1.2, 2.0];
        let out = relative_phase(&[p.clone(), p.clone(), p]).unwrap();
        for series in &out {
            for &v in series {
                // The cross-trial mean rounds, so "zero" is only up to a few ulps.
                assert!(v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn antiphase_pair_splits_symmetrically() {
        let a = vec![0.0, 0.3, 0.6];
        let b: Vec<f64> = a.iter().map(|v| v + std::f64::consts::PI).collect();
        let out = relative_phase(&[a, b]).unwrap();
        for k in 0..3 {
            assert!((out[0][k] + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
            assert!((out[1][k] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_phases_sum_to_zero() {
        let series: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..40)
                    .map(|k| 0.11 * k as f64 + 0.7 * i as f64 + (k as f64 * 0.3).sin())
                    .collect()
            })
            .collect();
        let out = relative_phase(&series).unwrap();
        for k in 0..40 {
            let sum: f64 = out.iter().map(|s| s[k]).sum();
            assert!(sum.abs() < 5.0 * f64::EPSILON * 40.0);
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let err = relative_phase(&[vec![0.0, 0.1], vec![0.0]]);
        assert!(matches!(err, Err(Error::MismatchedTimestamps(_))));
        let err = relative_phase(&[vec![0.0, 0.1]]);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
