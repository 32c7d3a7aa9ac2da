//! The fitted closed 1-form `dφ = dθ + Σ_μ m_μ dv_μ` on rectified
//! coordinates, together with its defining least-squares problem: every
//! sample contributes one row `⟨dφ(x_i), ẋ_i⟩ = C`, with the rate `C`
//! estimated jointly with the coefficients `m`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

use super::basis::BasisSpec;
use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::numeric::{lstsq, wrap_to_2pi, CONDITION_LIMIT};
use crate::rectify::RectificationMap;

/// Options for [`FormPhaseModel::fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// Ridge strength on the basis coefficients (never on the rate), scaled
    /// by the mean squared column norm of the design.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { ridge: 1e-8 }
    }
}

/// Fit quality numbers kept alongside the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Number of data rows in the regression.
    pub rows: usize,
    /// Root-mean-square of `⟨dφ(x_i), ẋ_i⟩ - C` over the data rows.
    pub residual_rms: f64,
    /// Relative mismatch between the fitted rate and the rectification
    /// period, `|C · T / 2π - 1|`.
    pub rate_consistency: f64,
    /// Condition number of the (ridge-augmented) design matrix.
    pub condition: f64,
}

/// A phase map for one oscillator: rectification composed with the
/// correction potential whose differential completes `dθ` to `dφ`.
#[derive(Debug, Clone)]
pub struct FormPhaseModel {
    rect: RectificationMap,
    basis: BasisSpec,
    coefficients: Vec<f64>,
    constant: f64,
    omega: f64,
    diagnostics: FitDiagnostics,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    schema_version: u32,
    rect: RectificationMap,
    basis: BasisSpec,
    coefficients: Vec<f64>,
    constant: f64,
    omega: f64,
    diagnostics: FitDiagnostics,
}

impl FormPhaseModel {
    /// Fit the 1-form to a dataset with velocities. Each sample contributes
    /// the row `Σ_μ m_μ ⟨dv_μ(q_i), q̇_i⟩ - C = -⟨dθ(q_i), q̇_i⟩` in the
    /// unknowns `(m, C)`, solved by QR with a trace-scaled ridge on `m`.
    pub fn fit(
        data: &TimeSeriesDataset,
        rect: RectificationMap,
        basis: BasisSpec,
        opts: &FitOptions,
    ) -> Result<Self> {
        if !data.has_velocities() {
            return Err(Error::MissingVelocities);
        }
        if rect.dim() != data.dim {
            return Err(Error::InvalidConfig(format!(
                "rectification map dimension {} does not match data dimension {}",
                rect.dim(),
                data.dim
            )));
        }
        if basis.state_dim() != data.dim {
            return Err(Error::InvalidConfig(format!(
                "basis is for dimension {}, data has dimension {}",
                basis.state_dim(),
                data.dim
            )));
        }
        if !(opts.ridge.is_finite() && opts.ridge >= 0.0) {
            return Err(Error::InvalidConfig(
                "ridge must be finite and non-negative".into(),
            ));
        }
        let p = basis.len();
        let width = p + 1;
        let n: usize = data.n_samples();
        if n < width {
            return Err(Error::Underdetermined { rows: n, cols: width });
        }

        let samples: Vec<(&DVector<f64>, &DVector<f64>)> = data
            .segments
            .iter()
            .flat_map(|seg| {
                let vel = seg.velocities.as_ref().expect("velocities checked above");
                seg.states.iter().zip(vel.iter())
            })
            .collect();

        let mut rows = vec![0.0f64; n * width];
        let mut rhs = vec![0.0f64; n];
        rows.par_chunks_mut(width)
            .zip(rhs.par_iter_mut())
            .zip(samples.par_iter())
            .try_for_each(|((row, b), (x, x_dot))| -> Result<()> {
                let (theta, r, z) = rect.rectify_cylindrical(x)?;
                let jac = rect.rectify_jacobian(x)?;
                let q_dot = &jac * *x_dot;
                let q0 = r * theta.sin();
                let q1 = r * theta.cos();
                let s_theta = (q1 * q_dot[0] - q0 * q_dot[1]) / (r * r);
                let s_r = (q0 * q_dot[0] + q1 * q_dot[1]) / r;
                basis.pairing_row_into(
                    theta,
                    r,
                    &z,
                    s_theta,
                    s_r,
                    &q_dot.as_slice()[2..],
                    &mut row[..p],
                );
                row[p] = -1.0;
                *b = -s_theta;
                Ok(())
            })?;

        for &v in rows.iter().chain(rhs.iter()) {
            if !v.is_finite() {
                return Err(Error::DegenerateData(
                    "non-finite entries in the regression".into(),
                ));
            }
        }

        // Ridge scale: mean squared column norm of the basis block. The
        // rate column contributes exactly n to the total sum of squares.
        let total_sq: f64 = rows.iter().map(|v| v * v).sum();
        let trace = total_sq - n as f64;
        if trace <= 0.0 {
            return Err(Error::DegenerateData(
                "basis columns vanish on the data".into(),
            ));
        }
        let lambda = opts.ridge * trace / p as f64;
        let extra = if lambda > 0.0 { p } else { 0 };

        let mut design = DMatrix::zeros(n + extra, width);
        for i in 0..n {
            for j in 0..width {
                design[(i, j)] = rows[i * width + j];
            }
        }
        if extra > 0 {
            let sqrt_l = lambda.sqrt();
            for j in 0..p {
                design[(n + j, j)] = sqrt_l;
            }
        }
        let mut b = DMatrix::zeros(n + extra, 1);
        for i in 0..n {
            b[(i, 0)] = rhs[i];
        }

        let sol = lstsq(design, &b)?;
        if sol.condition > CONDITION_LIMIT {
            return Err(Error::IllConditioned {
                cond: sol.condition,
            });
        }
        let coefficients: Vec<f64> = (0..p).map(|j| sol.solution[(j, 0)]).collect();
        let constant = sol.solution[(p, 0)];
        if !constant.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::DegenerateData(
                "non-finite fit coefficients".into(),
            ));
        }

        // Residual over the data rows only, recomputed directly: the QR
        // byproduct ‖b‖² - ‖Qᵀb‖² loses everything below ‖b‖²·ε to
        // cancellation, which matters when the fit is near-exact.
        let residual_data_sq: f64 = rows
            .chunks(width)
            .zip(rhs.iter())
            .map(|(row, &b)| {
                let mut pred = 0.0;
                for (v, c) in row[..p].iter().zip(&coefficients) {
                    pred += v * c;
                }
                pred -= constant;
                (pred - b) * (pred - b)
            })
            .sum();
        let omega = TAU / rect.period();
        let diagnostics = FitDiagnostics {
            rows: n,
            residual_rms: (residual_data_sq / n as f64).sqrt(),
            rate_consistency: (constant / omega - 1.0).abs(),
            condition: sol.condition,
        };

        Ok(FormPhaseModel {
            rect,
            basis,
            coefficients,
            constant,
            omega,
            diagnostics,
        })
    }

    pub fn rectification(&self) -> &RectificationMap {
        &self.rect
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Fitted pairing rate `C` (the phase advances by `C` per unit time).
    pub fn rate(&self) -> f64 {
        self.constant
    }

    /// Angular frequency implied by the rectification period.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn dim(&self) -> usize {
        self.rect.dim()
    }

    /// Phase in `[0, 2π)` at a state.
    pub fn phase(&self, x: &DVector<f64>) -> Result<f64> {
        let (theta, r, z) = self.rect.rectify_cylindrical(x)?;
        let v = self.basis.weighted_value(&self.coefficients, theta, r, &z);
        Ok(wrap_to_2pi(theta + v))
    }

    /// The 1-form at a state, as a covector in the original coordinates.
    pub fn one_form(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (theta, r, z) = self.rect.rectify_cylindrical(x)?;
        let (d_theta, d_r, d_z) =
            self.basis
                .weighted_gradient(&self.coefficients, theta, r, &z);
        let q0 = r * theta.sin();
        let q1 = r * theta.cos();
        let mut c = DVector::zeros(self.rect.dim());
        c[0] = (1.0 + d_theta) * q1 / (r * r) + d_r * q0 / r;
        c[1] = -(1.0 + d_theta) * q0 / (r * r) + d_r * q1 / r;
        for i in 0..d_z.len() {
            c[2 + i] = d_z[i];
        }
        let jac = self.rect.rectify_jacobian(x)?;
        Ok(jac.tr_mul(&c))
    }

    /// Pairing `⟨dφ(x), ẋ⟩`; equals the rate on perfect data.
    pub fn pair(&self, x: &DVector<f64>, x_dot: &DVector<f64>) -> Result<f64> {
        Ok(self.one_form(x)?.dot(x_dot))
    }

    /// Points on the fitted cycle at `n` uniformly spaced phases, each with
    /// the 1-form evaluated there. The covector is the infinitesimal phase
    /// response to state perturbations at that cycle point.
    pub fn phase_response(&self, n: usize) -> Result<Vec<PrcSample>> {
        if n == 0 {
            return Err(Error::InvalidConfig("need at least one sample".into()));
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let target = TAU * i as f64 / n as f64;
            let alpha = self.cycle_angle_for_phase(target)?;
            let state = self.cycle_point(alpha)?;
            let covector = self.one_form(&state)?;
            out.push(PrcSample {
                phase: target,
                state,
                covector,
            });
        }
        Ok(out)
    }

    /// State on the fitted cycle at rectified angle `alpha`.
    fn cycle_point(&self, alpha: f64) -> Result<DVector<f64>> {
        let mut q = DVector::zeros(self.rect.dim());
        q[0] = alpha.sin();
        q[1] = alpha.cos();
        self.rect.unrectify(&q)
    }

    /// Invert `α + v(α, 1, 0) = φ` (phase restricted to the fitted cycle)
    /// by bisection on a bracketing interval.
    fn cycle_angle_for_phase(&self, phi: f64) -> Result<f64> {
        let z = DVector::zeros(self.rect.dim() - 2);
        let g = |alpha: f64| {
            alpha + self.basis.weighted_value(&self.coefficients, alpha, 1.0, &z) - phi
        };
        let mut lo = phi - std::f64::consts::PI;
        let mut hi = phi + std::f64::consts::PI;
        let (mut g_lo, mut g_hi) = (g(lo), g(hi));
        if g_lo > 0.0 || g_hi < 0.0 {
            lo = phi - TAU;
            hi = phi + TAU;
            g_lo = g(lo);
            g_hi = g(hi);
            if g_lo > 0.0 || g_hi < 0.0 {
                return Err(Error::NotInvertible);
            }
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 {
                break;
            }
            if (gm > 0.0) == (g_hi > 0.0) {
                hi = mid;
                g_hi = gm;
            } else {
                lo = mid;
            }
        }
        Ok(mid)
    }

    /// Integral of the 1-form along a closed polyline, by the midpoint rule
    /// with adaptive subdivision of each edge until the estimate moves by
    /// less than `tol`. The polyline must end where it starts.
    pub fn loop_integral(&self, points: &[DVector<f64>], tol: f64) -> Result<f64> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig(
                "loop needs at least two points".into(),
            ));
        }
        let scale = points.iter().map(|p| p.norm()).fold(0.0f64, f64::max);
        let gap = (points[points.len() - 1].clone() - &points[0]).norm();
        if gap > 1e-12 * (1.0 + scale) {
            return Err(Error::NotClosed { gap });
        }
        let mut total = 0.0;
        for w in points.windows(2) {
            let whole = self.edge_midpoint(&w[0], &w[1])?;
            total += self.refine_edge(&w[0], &w[1], whole, tol, 40)?;
        }
        Ok(total)
    }

    fn edge_midpoint(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        let mid = (a + b) * 0.5;
        Ok(self.one_form(&mid)?.dot(&(b - a)))
    }

    fn refine_edge(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let mid = (a + b) * 0.5;
        let left = self.edge_midpoint(a, &mid)?;
        let right = self.edge_midpoint(&mid, b)?;
        let sum = left + right;
        if (sum - whole).abs() <= tol || depth == 0 {
            return Ok(sum);
        }
        Ok(self.refine_edge(a, &mid, left, 0.5 * tol, depth - 1)?
            + self.refine_edge(&mid, b, right, 0.5 * tol, depth - 1)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            schema_version: MODEL_SCHEMA_VERSION,
            rect: self.rect.clone(),
            basis: self.basis.clone(),
            coefficients: self.coefficients.clone(),
            constant: self.constant,
            omega: self.omega,
            diagnostics: self.diagnostics.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported schema version {}",
                doc.schema_version
            )));
        }
        if doc.coefficients.len() != doc.basis.len() {
            return Err(Error::ModelFormat(format!(
                "coefficient count {} does not match basis size {}",
                doc.coefficients.len(),
                doc.basis.len()
            )));
        }
        if doc.rect.dim() != doc.basis.state_dim() {
            return Err(Error::ModelFormat(
                "rectification and basis dimensions disagree".into(),
            ));
        }
        if !doc.constant.is_finite() || !doc.omega.is_finite() {
            return Err(Error::ModelFormat("non-finite model constants".into()));
        }
        Ok(FormPhaseModel {
            rect: doc.rect,
            basis: doc.basis,
            coefficients: doc.coefficients,
            constant: doc.constant,
            omega: doc.omega,
            diagnostics: doc.diagnostics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// One row of a phase-response table.
#[derive(Debug, Clone)]
pub struct PrcSample {
    pub phase: f64,
    pub state: DVector<f64>,
    pub covector: DVector<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Segment;
    use crate::numeric::wrap_to_pi;
    use approx::assert_relative_eq;

    /// Annulus samples of the oscillator θ̇ = 1, ṙ = 1 - r, whose true
    /// asymptotic phase is exactly θ.
    fn trivial_oscillator_data() -> TimeSeriesDataset {
        let mut states = Vec::new();
        let mut velocities = Vec::new();
        let mut phases = Vec::new();
        let mut times = Vec::new();
        let (n_theta, n_r) = (60, 25);
        for a in 0..n_theta {
            for b in 0..n_r {
                let theta = TAU * a as f64 / n_theta as f64;
                let r = 0.5 + 1.0 * b as f64 / (n_r - 1) as f64;
                let (s, c) = theta.sin_cos();
                let r_dot = 1.0 - r;
                states.push(DVector::from_vec(vec![r * s, r * c]));
                velocities.push(DVector::from_vec(vec![
                    r_dot * s + r * c,
                    r_dot * c - r * s,
                ]));
                phases.push(theta);
                times.push((a * n_r + b) as f64);
            }
        }
        let seg = Segment {
            times,
            states,
            velocities: Some(velocities),
            true_phase: Some(phases),
        };
        TimeSeriesDataset::new(2, vec![seg]).unwrap()
    }

    fn trivial_model() -> FormPhaseModel {
        let data = trivial_oscillator_data();
        let rect = RectificationMap::identity(2);
        let basis = BasisSpec::for_dim(2, 4, 2).unwrap();
        FormPhaseModel::fit(&data, rect, basis, &FitOptions::default()).unwrap()
    }

    #[test]
    fn trivial_oscillator_fit_recovers_the_angle() {
        let data = trivial_oscillator_data();
        let model = trivial_model();
        assert_relative_eq!(model.rate(), 1.0, epsilon = 1e-8);
        assert!(model.diagnostics().residual_rms < 1e-8);
        assert!(model.diagnostics().rate_consistency < 1e-8);
        for c in model.coefficients() {
            assert!(c.abs() < 1e-6, "coefficient should vanish, got {c}");
        }
        let mut worst: f64 = 0.0;
        for seg in &data.segments {
            let truth = seg.true_phase.as_ref().unwrap();
            for (x, &t) in seg.states.iter().zip(truth) {
                let err = wrap_to_pi(model.phase(x).unwrap() - t).abs();
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-8, "worst phase error {worst}");
    }

    #[test]
    fn pairing_is_constant_on_the_field() {
        let model = trivial_model();
        for &(theta, r) in &[(0.3, 0.7), (2.0, 1.0), (4.4, 1.4), (5.9, 0.55)] {
            let (s, c) = f64::sin_cos(theta);
            let x = DVector::from_vec(vec![r * s, r * c]);
            let r_dot = 1.0 - r;
            let x_dot = DVector::from_vec(vec![r_dot * s + r * c, r_dot * c - r * s]);
            assert_relative_eq!(model.pair(&x, &x_dot).unwrap(), 1.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn one_form_is_the_phase_differential() {
        // Directional finite differences of the wrapped phase.
        let model = trivial_model();
        let x = DVector::from_vec(vec![0.9, -0.4]);
        let form = model.one_form(&x).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let d = wrap_to_pi(model.phase(&xp).unwrap() - model.phase(&xm).unwrap()) / (2.0 * h);
            assert_relative_eq!(form[j], d, epsilon = 1e-5);
        }
    }

    #[test]
    fn loop_integrals_detect_winding() {
        let model = trivial_model();
        let circle: Vec<DVector<f64>> = (0..=96)
            .map(|i| {
                let a = TAU * i as f64 / 96.0;
                DVector::from_vec(vec![1.2 * a.sin(), 1.2 * a.cos()])
            })
            .collect();
        let total = model.loop_integral(&circle, 1e-10).unwrap();
        assert_relative_eq!(total, TAU, epsilon = 1e-7);

        let small: Vec<DVector<f64>> = (0..=32)
            .map(|i| {
                let a = TAU * i as f64 / 32.0;
                DVector::from_vec(vec![1.0 + 0.2 * a.cos(), 1.0 + 0.2 * a.sin()])
            })
            .collect();
        let total = model.loop_integral(&small, 1e-10).unwrap();
        assert!(total.abs() < 1e-7, "contractible loop integral {total}");
    }

    #[test]
    fn open_polyline_is_rejected() {
        let model = trivial_model();
        let arc: Vec<DVector<f64>> = (0..10)
            .map(|i| {
                let a = 0.1 * i as f64;
                DVector::from_vec(vec![a.sin(), a.cos()])
            })
            .collect();
        assert!(matches!(
            model.loop_integral(&arc, 1e-9),
            Err(Error::NotClosed { .. })
        ));
    }

    #[test]
    fn phase_response_lies_on_the_cycle() {
        let model = trivial_model();
        let samples = model.phase_response(16).unwrap();
        assert_eq!(samples.len(), 16);
        for s in &samples {
            // Unit-circle cycle, covector = dθ there.
            assert_relative_eq!(s.state.norm(), 1.0, epsilon = 1e-6);
            let phi = s.phase;
            assert_relative_eq!(s.state[0], phi.sin(), epsilon = 1e-6);
            assert_relative_eq!(s.covector[0], phi.cos(), epsilon = 1e-5);
            assert_relative_eq!(s.covector[1], -phi.sin(), epsilon = 1e-5);
        }
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let model = trivial_model();
        let text = model.to_json().unwrap();
        let back = FormPhaseModel::from_json(&text).unwrap();
        assert_eq!(model.coefficients().len(), back.coefficients().len());
        for (a, b) in model.coefficients().iter().zip(back.coefficients()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(model.rate().to_bits(), back.rate().to_bits());
        let x = DVector::from_vec(vec![0.3, 1.1]);
        assert_eq!(
            model.phase(&x).unwrap().to_bits(),
            back.phase(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn fit_rejects_missing_velocities() {
        let mut data = trivial_oscillator_data();
        for seg in &mut data.segments {
            seg.velocities = None;
        }
        let rect = RectificationMap::identity(2);
        let basis = BasisSpec::for_dim(2, 4, 2).unwrap();
        assert!(matches!(
            FormPhaseModel::fit(&data, rect, basis, &FitOptions::default()),
            Err(Error::MissingVelocities)
        ));
    }

    #[test]
    fn fit_rejects_too_few_rows() {
        let mut data = trivial_oscillator_data();
        let seg = &mut data.segments[0];
        seg.times.truncate(10);
        seg.states.truncate(10);
        seg.velocities.as_mut().unwrap().truncate(10);
        seg.true_phase.as_mut().unwrap().truncate(10);
        let rect = RectificationMap::identity(2);
        let basis = BasisSpec::for_dim(2, 4, 2).unwrap();
        assert!(matches!(
            FormPhaseModel::fit(&data, rect, basis, &FitOptions::default()),
            Err(Error::Underdetermined { .. })
        ));
    }
}
