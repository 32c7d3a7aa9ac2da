//! Reference estimators and the evaluation harness: event phase from
//! zero crossings of the leading principal component, circular residual
//! variance with per-trial offset removal, and the train/test comparison
//! against the 1-form estimator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::numeric::{fmt_g17, wrap_to_pi};
use crate::oneform::{BasisSpec, FitOptions, FormPhaseModel};
use crate::preprocess::{kalman_smooth, SmootherConfig};
use crate::rectify::{center_and_rotate, fit_limit_cycle, CycleFitOptions};
use crate::simgen::SimConfig;

/// Event phase: pick a distinguished event once per cycle (the upward zero
/// crossing of the leading principal component of the training data) and
/// interpolate phase linearly between consecutive events.
#[derive(Debug, Clone)]
pub struct EventPhaseModel {
    mean: DVector<f64>,
    axis: DVector<f64>,
    /// Event times per training segment, kept for inspection.
    pub train_events: Vec<Vec<f64>>,
    /// Mean inter-event interval over the training data.
    pub period: f64,
}

impl EventPhaseModel {
    pub fn fit(train: &TimeSeriesDataset) -> Result<Self> {
        let points: Vec<DVector<f64>> = train.all_states().cloned().collect();
        let (mean, rotation, _) = center_and_rotate(&points)?;
        let axis = rotation.row(0).transpose();
        let mut train_events = Vec::with_capacity(train.segments.len());
        let mut intervals: Vec<f64> = Vec::new();
        for seg in &train.segments {
            let events = upward_zero_crossings(&seg.times, &seg.states, &mean, &axis);
            intervals.extend(events.windows(2).map(|w| w[1] - w[0]));
            train_events.push(events);
        }
        if intervals.is_empty() {
            return Err(Error::DegenerateData(
                "no pair of consecutive events in the training data".into(),
            ));
        }
        let period = intervals.iter().sum::<f64>() / intervals.len() as f64;
        Ok(EventPhaseModel {
            mean,
            axis,
            train_events,
            period,
        })
    }

    /// Per-sample phase for one segment; `None` where no event pair
    /// brackets the sample.
    pub fn segment_phases(&self, times: &[f64], states: &[DVector<f64>]) -> Vec<Option<f64>> {
        let events = upward_zero_crossings(times, states, &self.mean, &self.axis);
        times
            .iter()
            .map(|&t| {
                if events.len() < 2 {
                    return None;
                }
                // Index of the first event strictly after t.
                let next = events.partition_point(|&e| e <= t);
                if next == 0 || next == events.len() {
                    return None;
                }
                let (prev, after) = (events[next - 1], events[next]);
                Some(std::f64::consts::TAU * (t - prev) / (after - prev))
            })
            .collect()
    }

    /// Phases for every sample of a dataset, segment by segment.
    pub fn phases(&self, data: &TimeSeriesDataset) -> Vec<Vec<Option<f64>>> {
        data.segments
            .iter()
            .map(|seg| self.segment_phases(&seg.times, &seg.states))
            .collect()
    }
}

fn upward_zero_crossings(
    times: &[f64],
    states: &[DVector<f64>],
    mean: &DVector<f64>,
    axis: &DVector<f64>,
) -> Vec<f64> {
    let proj: Vec<f64> = states.iter().map(|x| axis.dot(&(x - mean))).collect();
    let mut events = Vec::new();
    for i in 1..proj.len() {
        if proj[i - 1] < 0.0 && proj[i] >= 0.0 {
            let frac = -proj[i - 1] / (proj[i] - proj[i - 1]);
            events.push(times[i - 1] + frac * (times[i] - times[i - 1]));
        }
    }
    events
}

/// Variance of the wrapped residual est − truth for one trial, after
/// removing the trial's circular mean offset.
pub fn circular_residual_variance(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::MismatchedTimestamps(format!(
            "{} estimates for {} truths",
            est.len(),
            truth.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: est.len(),
        });
    }
    let deltas: Vec<f64> = est
        .iter()
        .zip(truth)
        .map(|(e, t)| wrap_to_pi(e - t))
        .collect();
    let (mut s, mut c) = (0.0, 0.0);
    for &d in &deltas {
        s += d.sin();
        c += d.cos();
    }
    let mu = s.atan2(c);
    let var = deltas
        .iter()
        .map(|&d| wrap_to_pi(d - mu).powi(2))
        .sum::<f64>()
        / deltas.len() as f64;
    Ok(var)
}

/// Residual variance over several trials: offsets removed per trial, then
/// both the sample-pooled variance and the mean of per-trial variances.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualStats {
    pub pooled: f64,
    pub trial_mean: f64,
    pub n_samples: usize,
    pub n_trials: usize,
}

pub fn residual_stats(trials: &[(Vec<f64>, Vec<f64>)]) -> Result<ResidualStats> {
    let mut pooled_sum = 0.0;
    let mut n_samples = 0;
    let mut trial_vars = Vec::new();
    for (est, truth) in trials {
        if est.len() < 2 {
            continue;
        }
        let var = circular_residual_variance(est, truth)?;
        pooled_sum += var * est.len() as f64;
        n_samples += est.len();
        trial_vars.push(var);
    }
    if trial_vars.is_empty() {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: trials.iter().map(|(e, _)| e.len()).max().unwrap_or(0),
        });
    }
    Ok(ResidualStats {
        pooled: pooled_sum / n_samples as f64,
        trial_mean: trial_vars.iter().sum::<f64>() / trial_vars.len() as f64,
        n_samples,
        n_trials: trial_vars.len(),
    })
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub cycle: CycleFitOptions,
    /// One-form basis orders.
    pub fourier_order: usize,
    pub poly_order: usize,
    pub fit: FitOptions,
    /// Used when the training data carries no velocity columns.
    pub smoother: SmootherConfig,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            cycle: CycleFitOptions::default(),
            fourier_order: 6,
            poly_order: 6,
            fit: FitOptions::default(),
            smoother: SmootherConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseComparisonReport {
    pub dim: usize,
    pub event: ResidualStats,
    pub form: ResidualStats,
    /// Defined-sample counts over the test data.
    pub defined_event: usize,
    pub defined_form: usize,
    pub common_samples: usize,
    pub total_samples: usize,
    /// Noise configuration echo when the dataset carries one.
    pub config_json: Option<String>,
}

impl PhaseComparisonReport {
    fn noise_columns(&self) -> (String, String, String) {
        match self
            .config_json
            .as_deref()
            .and_then(|j| serde_json::from_str::<SimConfig>(j).ok())
        {
            Some(c) => (
                format!("{}", c.init_noise),
                format!("{}", c.system_noise),
                format!("{}", c.phase_noise),
            ),
            None => (String::new(), String::new(), String::new()),
        }
    }

    /// One-row CSV mirroring the benchmark table layout plus counts.
    pub fn to_csv(&self) -> String {
        let (init, system, phase) = self.noise_columns();
        let mut out = String::from(
            "D,init,system,phase,event,form,event_trial_mean,form_trial_mean,\
             defined_event,defined_form,common_samples,total_samples\n",
        );
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.dim,
            init,
            system,
            phase,
            fmt_g17(self.event.pooled),
            fmt_g17(self.form.pooled),
            fmt_g17(self.event.trial_mean),
            fmt_g17(self.form.trial_mean),
            self.defined_event,
            self.defined_form,
            self.common_samples,
            self.total_samples,
        ));
        out
    }

    pub fn to_text(&self) -> String {
        let (init, system, phase) = self.noise_columns();
        let mut out = String::new();
        out.push_str(&format!("dimension        {}\n", self.dim));
        if !init.is_empty() {
            out.push_str(&format!(
                "noise            init {init}  system {system}  phase {phase}\n"
            ));
        }
        out.push_str(&format!(
            "event variance   {:.6} (trial mean {:.6})\n",
            self.event.pooled, self.event.trial_mean
        ));
        out.push_str(&format!(
            "form variance    {:.6} (trial mean {:.6})\n",
            self.form.pooled, self.form.trial_mean
        ));
        out.push_str(&format!(
            "defined samples  event {} / form {} / common {} of {}\n",
            self.defined_event, self.defined_form, self.common_samples, self.total_samples
        ));
        out
    }
}

/// Fit both estimators on `train`, evaluate on `test`, and report circular
/// residual variances over the samples where every estimator is defined.
/// Training data without velocity columns is Kalman-smoothed first.
pub fn compare_estimators(
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    opts: &CompareOptions,
) -> Result<PhaseComparisonReport> {
    if !train.has_true_phase() || !test.has_true_phase() {
        return Err(Error::MissingTruth);
    }
    let event_model = EventPhaseModel::fit(train)?;

    let smoothed;
    let fit_data = if train.has_velocities() {
        train
    } else {
        smoothed = kalman_smooth(train, &opts.smoother)?.data;
        &smoothed
    };
    let rect = fit_limit_cycle(fit_data, &opts.cycle)?;
    let basis = BasisSpec::for_dim(train.dim, opts.fourier_order, opts.poly_order)?;
    let form_model = FormPhaseModel::fit(fit_data, rect, basis, &opts.fit)?;

    let mut event_trials = Vec::new();
    let mut form_trials = Vec::new();
    let mut defined_event = 0;
    let mut defined_form = 0;
    let mut common_samples = 0;
    let mut total_samples = 0;
    for seg in &test.segments {
        let truth = seg.true_phase.as_ref().expect("checked above");
        let event_est = event_model.segment_phases(&seg.times, &seg.states);
        let form_est: Vec<Option<f64>> = seg
            .states
            .iter()
            .map(|x| form_model.phase(x).ok())
            .collect();
        total_samples += seg.times.len();
        defined_event += event_est.iter().flatten().count();
        defined_form += form_est.iter().flatten().count();

        let mut ev = (Vec::new(), Vec::new());
        let mut fo = (Vec::new(), Vec::new());
        for k in 0..seg.times.len() {
            if let (Some(e), Some(f)) = (event_est[k], form_est[k]) {
                common_samples += 1;
                ev.0.push(e);
                ev.1.push(truth[k]);
                fo.0.push(f);
                fo.1.push(truth[k]);
            }
        }
        event_trials.push(ev);
        form_trials.push(fo);
    }

    Ok(PhaseComparisonReport {
        dim: test.dim,
        event: residual_stats(&event_trials)?,
        form: residual_stats(&form_trials)?,
        defined_event,
        defined_form,
        common_samples,
        total_samples,
        config_json: test.config_json.clone().or_else(|| train.config_json.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Segment;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Ellipse traversed at unit rate: the leading principal axis is the
    /// first coordinate, so events are its upward zero crossings.
    fn ellipse_segment(t0: f64, t1: f64, dt: f64, with_labels: bool) -> Segment {
        let n = ((t1 - t0) / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * dt).collect();
        let states: Vec<DVector<f64>> = times
            .iter()
            .map(|&t| DVector::from_vec(vec![2.0 * t.sin(), 0.5 * t.cos()]))
            .collect();
        let velocities = with_labels.then(|| {
            times
                .iter()
                .map(|&t| DVector::from_vec(vec![2.0 * t.cos(), -0.5 * t.sin()]))
                .collect()
        });
        let true_phase = with_labels.then(|| times.iter().map(|&t| t % std::f64::consts::TAU).collect());
        Segment {
            times,
            states,
            velocities,
            true_phase,
        }
    }

    fn ellipse_data(t0: f64, t1: f64, dt: f64, with_labels: bool) -> TimeSeriesDataset {
        TimeSeriesDataset::new(2, vec![ellipse_segment(t0, t1, dt, with_labels)]).unwrap()
    }

    /// Ellipse sampled over exactly `periods` turns, endpoint excluded, so
    /// the sample covariance is diagonal to rounding and the fitted axis is
    /// the first coordinate without tilt. Events then interpolate to `k·τ`.
    fn whole_period_ellipse(periods: usize, n: usize) -> TimeSeriesDataset {
        let dt = periods as f64 * std::f64::consts::TAU / n as f64;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let states = times
            .iter()
            .map(|&t| DVector::from_vec(vec![2.0 * t.sin(), 0.5 * t.cos()]))
            .collect();
        let seg = Segment {
            times,
            states,
            velocities: None,
            true_phase: None,
        };
        TimeSeriesDataset::new(2, vec![seg]).unwrap()
    }

    #[test]
    fn sine_events_recover_elapsed_time() {
        let data = whole_period_ellipse(4, 25133);
        let model = EventPhaseModel::fit(&data).unwrap();
        assert!((model.period - std::f64::consts::TAU).abs() < 1e-6);
        let seg = &data.segments[0];
        let phases = model.segment_phases(&seg.times, &seg.states);
        let tau = std::f64::consts::TAU;
        let margin = 2.0 * (seg.times[1] - seg.times[0]);
        let mut checked = 0;
        for (k, &t) in seg.times.iter().enumerate() {
            if t > tau + margin && t < 3.0 * tau - margin {
                let expected = t % tau;
                let got = phases[k].expect("bracketed sample");
                assert!(
                    (got - expected).abs() < 1e-8,
                    "phase {got} vs {expected} at t = {t}"
                );
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn event_free_segments_are_undefined() {
        let train = ellipse_data(0.5, 20.0, 1e-3, false);
        let model = EventPhaseModel::fit(&train).unwrap();
        // Strictly between two upward crossings: only the downward one inside.
        let tau = std::f64::consts::TAU;
        let seg = ellipse_segment(tau + 0.1, 2.0 * tau - 0.1, 1e-2, false);
        let phases = model.segment_phases(&seg.times, &seg.states);
        assert!(phases.iter().all(Option::is_none));
    }

    #[test]
    fn phase_is_affine_between_events() {
        let data = ellipse_data(0.5, 20.0, 1e-2, false);
        let model = EventPhaseModel::fit(&data).unwrap();
        let seg = &data.segments[0];
        let phases = model.segment_phases(&seg.times, &seg.states);
        let tau = std::f64::consts::TAU;
        let inside: Vec<f64> = seg
            .times
            .iter()
            .zip(&phases)
            .filter(|(&t, _)| t > tau + 0.1 && t < 2.0 * tau - 0.1)
            .map(|(_, p)| p.unwrap())
            .collect();
        assert!(inside.len() > 100);
        for w in inside.windows(3) {
            let second_diff = w[2] - 2.0 * w[1] + w[0];
            assert!(second_diff.abs() < 1e-9, "second difference {second_diff}");
        }
    }

    #[test]
    fn constant_offsets_leave_the_variance_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth: Vec<f64> = (0..500).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
        let est: Vec<f64> = truth
            .iter()
            .map(|t| t + 0.1 * (rng.gen::<f64>() - 0.5))
            .collect();
        let base = circular_residual_variance(&est, &truth).unwrap();
        for offset in [0.5, -2.0, 3.0, std::f64::consts::PI] {
            let shifted: Vec<f64> = est.iter().map(|e| e + offset).collect();
            let v = circular_residual_variance(&shifted, &truth).unwrap();
            assert!(
                (v - base).abs() <= 1e-13 * (1.0 + base),
                "offset {offset}: {v} vs {base}"
            );
        }
    }

    #[test]
    fn exact_estimates_up_to_offset_have_zero_variance() {
        let truth: Vec<f64> = (0..100).map(|k| 0.07 * k as f64).collect();
        let est: Vec<f64> = truth.iter().map(|t| t + 1.3).collect();
        let v = circular_residual_variance(&est, &truth).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn wrapped_gaussian_noise_recovers_sigma_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = rand_distr::Normal::new(0.0, 0.1).unwrap();
        let truth: Vec<f64> = (0..10_000)
            .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
            .collect();
        let est: Vec<f64> = truth
            .iter()
            .map(|t| t + rand_distr::Distribution::sample(&normal, &mut rng))
            .collect();
        let v = circular_residual_variance(&est, &truth).unwrap();
        assert!(
            (v - 0.01).abs() < 0.001,
            "variance {v} should be near 0.01"
        );
    }

    #[test]
    fn single_samples_are_rejected() {
        let err = circular_residual_variance(&[0.1], &[0.2]);
        assert!(matches!(err, Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn noiseless_comparison_recovers_phase_nearly_exactly() {
        let data = ellipse_data(0.0, 6.0 * std::f64::consts::PI, 0.01, true);
        let report = compare_estimators(&data, &data, &CompareOptions::default()).unwrap();
        assert!(
            report.form.pooled < 1e-4,
            "form variance {}",
            report.form.pooled
        );
        assert!(report.defined_event <= report.defined_form);
        assert!(report.common_samples > 0);
        let csv = report.to_csv();
        assert!(csv.lines().count() == 2);
        assert!(report.to_text().contains("form variance"));
    }

    #[test]
    fn missing_truth_labels_are_an_error() {
        let train = ellipse_data(0.0, 6.0 * std::f64::consts::PI, 0.01, true);
        let test = ellipse_data(0.0, 10.0, 0.01, false);
        assert!(matches!(
            compare_estimators(&train, &test, &CompareOptions::default()),
            Err(Error::MissingTruth)
        ));
    }
}
