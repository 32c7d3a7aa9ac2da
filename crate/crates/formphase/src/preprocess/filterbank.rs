//! Phase-free embedding for spike-like scalar recordings: detect spikes,
//! take the median inter-spike interval, lowpass the detrended trace at
//! cutoff periods (2·ISI, ISI, ISI/2), and use consecutive differences of
//! the three filter outputs as a two-dimensional lagged embedding.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FilterBankConfig {
    /// Spike threshold in standard deviations above the mean.
    pub threshold_sigmas: f64,
    /// Refractory lockout between accepted spikes, as a fraction of the
    /// provisional inter-spike interval.
    pub lockout_fraction: f64,
    /// Remove slow baseline drift (moving median) and amplitude drift
    /// (moving inter-quartile range) before the second detection pass.
    pub detrend: bool,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        FilterBankConfig {
            threshold_sigmas: 2.0,
            lockout_fraction: 0.25,
            detrend: true,
        }
    }
}

/// Output of the embedding, cutoffs recorded for provenance.
#[derive(Debug, Clone)]
pub struct EmbeddedSignal {
    pub times: Vec<f64>,
    /// Difference of the two slower filter outputs (the more lagged pair).
    pub first: Vec<f64>,
    /// Difference of the two faster filter outputs.
    pub second: Vec<f64>,
    pub median_isi: f64,
    /// Cutoff periods of the three lowpass stages: 2·ISI, ISI, ISI/2.
    pub cutoff_periods: [f64; 3],
}

/// Causal order-2 lowpass (bilinear transform of the analog maximally-flat
/// prototype with the cutoff prewarped), started at steady state from the
/// first sample.
pub fn lowpass2(signal: &[f64], dt: f64, cutoff_period: f64) -> Vec<f64> {
    let (b, a) = lowpass2_coefficients(dt, cutoff_period);
    let mut out = Vec::with_capacity(signal.len());
    let (mut x1, mut x2) = (signal[0], signal[0]);
    let (mut y1, mut y2) = (signal[0], signal[0]);
    for &x in signal {
        let y = b[0] * x + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = y;
        out.push(y);
    }
    out
}

/// `([b0, b1, b2], [a1, a2])` with the a0 = 1 convention.
pub fn lowpass2_coefficients(dt: f64, cutoff_period: f64) -> ([f64; 3], [f64; 2]) {
    let c = 1.0 / (PI * dt / cutoff_period).tan();
    let b0 = 1.0 / (1.0 + SQRT_2 * c + c * c);
    let b = [b0, 2.0 * b0, b0];
    let a = [2.0 * (1.0 - c * c) * b0, (1.0 - SQRT_2 * c + c * c) * b0];
    (b, a)
}

/// Complex gain of the stage at angular frequency `omega` (rad per time
/// unit), for predicting amplitude and lag of sinusoids.
pub fn lowpass2_response(dt: f64, cutoff_period: f64, omega: f64) -> nalgebra::Complex<f64> {
    use nalgebra::Complex;
    let (b, a) = lowpass2_coefficients(dt, cutoff_period);
    let zi = Complex::new(0.0, -omega * dt).exp();
    let num = Complex::new(b[0], 0.0) + zi * (b[1] + zi * b[2]);
    let den = Complex::new(1.0, 0.0) + zi * (a[0] + zi * a[1]);
    num / den
}

/// Upward threshold crossings with linear interpolation of the crossing
/// time; crossings closer than `lockout` after the last accepted one are
/// ignored.
fn crossings(times: &[f64], signal: &[f64], threshold: f64, lockout: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for i in 1..signal.len() {
        if signal[i - 1] < threshold && signal[i] >= threshold {
            let frac = (threshold - signal[i - 1]) / (signal[i] - signal[i - 1]);
            let t = times[i - 1] + frac * (times[i] - times[i - 1]);
            if out.last().map_or(true, |&last| t - last >= lockout) {
                out.push(t);
            }
        }
    }
    out
}

fn mean_std(signal: &[f64]) -> (f64, f64) {
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn spike_intervals(spikes: &[f64]) -> Result<f64> {
    if spikes.len() < 3 {
        return Err(Error::TooFewSpikes { got: spikes.len() });
    }
    let mut isis: Vec<f64> = spikes.windows(2).map(|w| w[1] - w[0]).collect();
    isis.sort_by(f64::total_cmp);
    Ok(median(&isis))
}

/// Moving-window detrend: subtract the window median, divide by the window
/// inter-quartile range. Windows shrink at the edges.
fn detrend(signal: &[f64], window: usize) -> Vec<f64> {
    let n = signal.len();
    let half = window / 2;
    let global_range = {
        let lo = signal.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = signal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let floor = (1e-9 * global_range).max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(n);
    let mut buf: Vec<f64> = Vec::with_capacity(window);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        buf.clear();
        buf.extend_from_slice(&signal[lo..hi]);
        buf.sort_by(f64::total_cmp);
        let center = median(&buf);
        let iqr = percentile(&buf, 0.75) - percentile(&buf, 0.25);
        out.push((signal[i] - center) / iqr.max(floor));
    }
    out
}

/// Embed one scalar recording. Two detection passes: the first (no
/// lockout, raw trace) only provides a provisional interval that sets the
/// detrending window and the refractory lockout; the second pass on the
/// conditioned trace gives the final spike train and median interval.
pub fn filter_bank_embed(
    times: &[f64],
    signal: &[f64],
    cfg: &FilterBankConfig,
) -> Result<EmbeddedSignal> {
    if times.len() != signal.len() {
        return Err(Error::MismatchedTimestamps(format!(
            "{} timestamps for {} samples",
            times.len(),
            signal.len()
        )));
    }
    if signal.len() < 8 {
        return Err(Error::TooFewSamples {
            needed: 8,
            got: signal.len(),
        });
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::MismatchedTimestamps(
            "timestamps must increase".into(),
        ));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::MismatchedTimestamps(
                "filter bank needs uniform sampling".into(),
            ));
        }
    }

    let (mean, std) = mean_std(signal);
    let provisional = crossings(times, signal, mean + cfg.threshold_sigmas * std, 0.0);
    let provisional_isi = spike_intervals(&provisional)?;

    let conditioned: Vec<f64> = if cfg.detrend {
        let window = ((3.0 * provisional_isi / dt).round() as usize).max(3) | 1;
        detrend(signal, window)
    } else {
        signal.to_vec()
    };

    let (mean2, std2) = mean_std(&conditioned);
    let spikes = crossings(
        times,
        &conditioned,
        mean2 + cfg.threshold_sigmas * std2,
        cfg.lockout_fraction * provisional_isi,
    );
    let median_isi = spike_intervals(&spikes)?;
    if median_isi <= 4.0 * dt {
        return Err(Error::DegenerateData(format!(
            "median inter-spike interval {median_isi} too short for sampling step {dt}"
        )));
    }

    let cutoff_periods = [2.0 * median_isi, median_isi, 0.5 * median_isi];
    let s1 = lowpass2(&conditioned, dt, cutoff_periods[0]);
    let s2 = lowpass2(&conditioned, dt, cutoff_periods[1]);
    let s3 = lowpass2(&conditioned, dt, cutoff_periods[2]);
    let first = s1.iter().zip(&s2).map(|(a, b)| a - b).collect();
    let second = s2.iter().zip(&s3).map(|(a, b)| a - b).collect();
    Ok(EmbeddedSignal {
        times: times.to_vec(),
        first,
        second,
        median_isi,
        cutoff_periods,
    })
}
