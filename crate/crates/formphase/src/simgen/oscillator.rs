//! Randomized ground-truth oscillators: a contracting rotation core wound
//! around a circle, hidden behind an invertible distortion chain, driven by
//! chain-shaped system noise plus extra diffusion along the phase direction.
//! Because the distortion is known, every sample carries its exact phase.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Segment, TimeSeriesDataset};
use crate::error::{Error, Result};

use super::chain::DiffeoChain;
use super::floquet::{unwind, wind, FloquetSystem};
use super::sde::{sde_integrate, SdePath};

/// Noise shaping: scale times the inverse tangent map of the chain.
pub fn noise_matrix(chain: &DiffeoChain, x: &DVector<f64>, scale: f64) -> DMatrix<f64> {
    let jac = chain.jacobian(x);
    let inv = jac
        .try_inverse()
        .expect("chain tangent maps are products of invertible blocks");
    inv * scale
}

/// Spread of probe rings (and of clamped initial draws) around the cycle,
/// in core coordinates: three sigmas of the initial spread plus slack for
/// in-path noise excursions.
fn probe_spread(init_noise: f64) -> f64 {
    3.0 * init_noise + 0.05
}

/// Smallest accepted [`ChainProbes::relative_nonlinearity`] for a drawn
/// distortion with nonlinear links.
const MIN_NONLINEARITY: f64 = 0.15;

/// Probe rings covering the region sampled data will visit: core points on
/// and around the cycle, paired with their images under a candidate
/// distortion chain.
struct ChainProbes {
    /// Ring index of each point; ring 3 is the cycle itself.
    rings: Vec<Vec<(DVector<f64>, DVector<f64>)>>,
    dim: usize,
}

const PROBES_PER_RING: usize = 256;

impl ChainProbes {
    fn new(chain: &DiffeoChain, init_noise: f64) -> Self {
        let n = chain.dim();
        let spread = probe_spread(init_noise);
        let ring = |r: f64, p: &DVector<f64>| -> Vec<(DVector<f64>, DVector<f64>)> {
            (0..PROBES_PER_RING)
                .map(|k| {
                    let theta = std::f64::consts::TAU * k as f64 / PROBES_PER_RING as f64;
                    let u = unwind(theta, r, p);
                    let z = chain.forward(&u);
                    (u, z)
                })
                .collect()
        };

        // Radial probes at thirds of the spread catch folds that a single
        // inner ring would step over; transverse probes cover the axes
        // only, which the clearance margin has to stretch across corners.
        let zero_p = DVector::zeros(n - 2);
        let mut rings = Vec::new();
        for k in -3i32..=3 {
            let r = (1.0 + spread * k as f64 / 3.0).max(0.15);
            rings.push(ring(r, &zero_p));
        }
        for j in 0..n - 2 {
            for off in [-spread, -0.5 * spread, 0.5 * spread, spread] {
                let mut p = DVector::zeros(n - 2);
                p[j] = off;
                rings.push(ring(1.0, &p));
            }
        }
        ChainProbes { rings, dim: n }
    }

    fn image_centroid(&self) -> DVector<f64> {
        let mut centroid = DVector::zeros(self.dim);
        let mut count = 0.0;
        for ring in &self.rings {
            for (_, z) in ring {
                centroid += z;
                count += 1.0;
            }
        }
        centroid / count
    }

    /// True when every probe ring, projected on the top-2 principal axes
    /// of the image cloud, winds exactly once around the shared centroid
    /// with strictly advancing angle while keeping clear of it. Data drawn
    /// near such a cycle supports a polar protophase; anything else trips
    /// the estimators' circulation check.
    fn circulates_cleanly(&self) -> bool {
        const MIN_STEP: f64 = 1e-4;
        const CLEARANCE: f64 = 0.12;
        let n = self.dim;
        let centroid = self.image_centroid();

        let mut cov = DMatrix::zeros(n, n);
        for ring in &self.rings {
            for (_, z) in ring {
                let d = z - &centroid;
                cov += &d * d.transpose();
            }
        }
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let u = eig.eigenvectors.column(order[0]).clone_owned();
        let v = eig.eigenvectors.column(order[1]).clone_owned();

        let cycle_radius = {
            let mut radii: Vec<f64> = self.rings[3]
                .iter()
                .map(|(_, z)| {
                    let d = z - &centroid;
                    u.dot(&d).hypot(v.dot(&d))
                })
                .collect();
            radii.sort_by(f64::total_cmp);
            radii[PROBES_PER_RING / 2]
        };

        let mut orientation = 0.0;
        for ring in &self.rings {
            let angles: Vec<f64> = ring
                .iter()
                .map(|(_, z)| {
                    let d = z - &centroid;
                    let (a, b) = (u.dot(&d), v.dot(&d));
                    if a.hypot(b) < CLEARANCE * cycle_radius {
                        return f64::NAN;
                    }
                    b.atan2(a)
                })
                .collect();
            if angles.iter().any(|a| a.is_nan()) {
                return false;
            }
            let mut total = 0.0;
            for k in 0..PROBES_PER_RING {
                let step = crate::numeric::wrap_to_pi(
                    angles[(k + 1) % PROBES_PER_RING] - angles[k],
                );
                if orientation == 0.0 {
                    orientation = step.signum();
                }
                if step * orientation < MIN_STEP {
                    return false;
                }
                total += step;
            }
            if (total.abs() - std::f64::consts::TAU).abs() > 1e-6 {
                return false;
            }
        }
        true
    }

    /// Fraction of the image cloud's spread that no affine map explains:
    /// the RMS residual of the best least-squares affine fit from core
    /// points to images, relative to the image's RMS spread. Zero for an
    /// affine chain; grows as the distortion bends the data region.
    fn relative_nonlinearity(&self) -> f64 {
        let n = self.dim;
        let count: usize = self.rings.iter().map(Vec::len).sum();
        let mut design = DMatrix::zeros(count, n + 1);
        let mut target = DMatrix::zeros(count, n);
        let mut row = 0;
        for ring in &self.rings {
            for (u, z) in ring {
                for j in 0..n {
                    design[(row, j)] = u[j];
                    target[(row, j)] = z[j];
                }
                design[(row, n)] = 1.0;
                row += 1;
            }
        }
        let svd = design.clone().svd(true, true);
        let coef = svd
            .solve(&target, 1e-12)
            .expect("affine least squares on probe rings is well posed");
        let residual = &design * coef - &target;
        let centroid = self.image_centroid();
        let mut spread_sq = 0.0;
        for ring in &self.rings {
            for (_, z) in ring {
                spread_sq += (z - &centroid).norm_squared();
            }
        }
        (residual.norm_squared() / spread_sq).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruthOscillator {
    floquet: FloquetSystem,
    state_chain: DiffeoChain,
    noise_chain: DiffeoChain,
    init_noise: f64,
    system_noise: f64,
    phase_noise: f64,
}

impl GroundTruthOscillator {
    pub fn new(
        floquet: FloquetSystem,
        state_chain: DiffeoChain,
        noise_chain: DiffeoChain,
        init_noise: f64,
        system_noise: f64,
        phase_noise: f64,
    ) -> Result<Self> {
        let n = floquet.dim();
        if state_chain.dim() != n || noise_chain.dim() != n {
            return Err(Error::InvalidConfig(
                "distortion chains must match the oscillator dimension".into(),
            ));
        }
        for (name, v) in [
            ("init_noise", init_noise),
            ("system_noise", system_noise),
            ("phase_noise", phase_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        Ok(GroundTruthOscillator {
            floquet,
            state_chain,
            noise_chain,
            init_noise,
            system_noise,
            phase_noise,
        })
    }

    pub fn random<R: Rng>(config: &SimConfig, rng: &mut R) -> Result<Self> {
        let floquet = FloquetSystem::random(config.dim, rng)?;
        // A chain can fold the cycle so hard that sampled data stops winding
        // around its own centroid, which the estimators reject by contract;
        // at the other extreme a chain whose bumps miss the data region is
        // affine there, an artificially easy instance. The benchmark only
        // emits oscillators between those regimes, so redraw the distortion
        // until its image circulates cleanly and is meaningfully nonlinear
        // (when it has nonlinear links at all).
        let mut state_chain = None;
        for _ in 0..64 {
            let candidate = DiffeoChain::random(config.dim, config.state_hmaps, rng)?;
            let probes = ChainProbes::new(&candidate, config.init_noise);
            let nonlinear_enough =
                config.state_hmaps == 0 || probes.relative_nonlinearity() >= MIN_NONLINEARITY;
            if nonlinear_enough && probes.circulates_cleanly() {
                state_chain = Some(candidate);
                break;
            }
        }
        let Some(state_chain) = state_chain else {
            return Err(Error::InvalidConfig(
                "no drawn distortion chain produced circulating data in 64 attempts".into(),
            ));
        };
        let noise_chain = DiffeoChain::random(config.dim, config.noise_hmaps, rng)?;
        GroundTruthOscillator::new(
            floquet,
            state_chain,
            noise_chain,
            config.init_noise,
            config.system_noise,
            config.phase_noise,
        )
    }

    pub fn dim(&self) -> usize {
        self.floquet.dim()
    }

    pub fn floquet(&self) -> &FloquetSystem {
        &self.floquet
    }

    pub fn state_chain(&self) -> &DiffeoChain {
        &self.state_chain
    }

    pub fn noise_chain(&self) -> &DiffeoChain {
        &self.noise_chain
    }

    /// Deterministic field in observed coordinates.
    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.state_chain
            .pushforward_field(|y| self.floquet.wound_field(y), x)
    }

    /// Diffusion matrix: the chain-shaped system block (n columns when
    /// system noise is on) plus one column pushing white noise along the
    /// phase direction of the core.
    pub fn diffusion(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let sys_cols = if self.system_noise > 0.0 { n } else { 0 };
        let phase_cols = if self.phase_noise > 0.0 { 1 } else { 0 };
        let mut g = DMatrix::zeros(n, sys_cols + phase_cols);
        if sys_cols > 0 {
            g.view_mut((0, 0), (n, n))
                .copy_from(&noise_matrix(&self.noise_chain, x, self.system_noise));
        }
        if phase_cols > 0 {
            let y = self.state_chain.inverse(x);
            // d(unwind)/dθ at y = (r cos θ, −r sin θ, 0, …) = (y_1, −y_0, 0, …).
            let mut tangent = DVector::zeros(n);
            tangent[0] = y[1];
            tangent[1] = -y[0];
            let col = self.state_chain.jacobian(&y) * tangent * self.phase_noise;
            g.view_mut((0, sys_cols), (n, 1)).copy_from(&col);
        }
        g
    }

    /// Exact asymptotic phase: the angle of the core coordinates. Defined
    /// everywhere off the cylindrical axis because the core contracts onto
    /// the unit circle with uniform rotation.
    pub fn true_phase(&self, x: &DVector<f64>) -> Result<f64> {
        let y = self.state_chain.inverse(x);
        let (theta, _, _) = wind(&y)?;
        Ok(theta)
    }

    /// Draw a start point: uniform angle on the cycle, then a Gaussian
    /// perturbation of spread `init_noise` across the transverse core
    /// coordinates. Draws are redrawn past three sigmas (or where the
    /// radius leaves the contraction region) so every start stays inside
    /// the envelope the distortion chain was certified on.
    pub fn initial_state<R: Rng>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let theta = Uniform::new(0.0, std::f64::consts::TAU).sample(rng);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw_within = |scale: f64| -> Result<f64> {
            for _ in 0..100 {
                let v = scale * normal.sample(rng);
                if v.abs() <= 3.0 * scale && 1.0 + v > 0.05 {
                    return Ok(v);
                }
            }
            Err(Error::InvalidConfig(
                "initial perturbation kept leaving the certified envelope".into(),
            ))
        };
        let r = 1.0 + draw_within(self.init_noise)?;
        let mut p = DVector::zeros(self.dim() - 2);
        for j in 0..p.len() {
            p[j] = draw_within(self.init_noise)?;
        }
        Ok(self.state_chain.forward(&unwind(theta, r, &p)))
    }

    /// One sample path in observed coordinates.
    pub fn simulate<R: Rng>(
        &self,
        x0: &DVector<f64>,
        dt: f64,
        duration: f64,
        rng: &mut R,
    ) -> Result<SdePath> {
        sde_integrate(
            |x| self.drift(x),
            |x| self.diffusion(x),
            x0,
            dt,
            duration,
            rng,
        )
    }
}

/// Everything needed to reproduce a dataset, including the seed. Embedded
/// verbatim in exported CSV metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub duration: f64,
    pub dt: f64,
    pub init_noise: f64,
    pub system_noise: f64,
    pub phase_noise: f64,
    pub state_hmaps: usize,
    pub noise_hmaps: usize,
    pub with_velocities: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dim: 2,
            n_train: 20,
            n_test: 20,
            duration: 10.0,
            dt: 0.02,
            init_noise: 0.1,
            system_noise: 0.01,
            phase_noise: 0.1,
            state_hmaps: 3,
            noise_hmaps: 3,
            with_velocities: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Benchmark conditions, one per table row: four noise conditions each
    /// for the 2-, 3- and 8-dimensional systems.
    pub fn preset(name: &str) -> Result<Self> {
        let rows: [(usize, f64, f64, f64); 12] = [
            (2, 0.1, 0.01, 0.1),
            (2, 0.2, 0.01, 0.1),
            (2, 0.1, 0.02, 0.1),
            (2, 0.1, 0.01, 0.2),
            (3, 0.066, 0.0066, 0.066),
            (3, 0.133, 0.0066, 0.066),
            (3, 0.066, 0.0133, 0.066),
            (3, 0.066, 0.0066, 0.133),
            (8, 0.025, 0.0025, 0.025),
            (8, 0.05, 0.0025, 0.025),
            (8, 0.025, 0.005, 0.025),
            (8, 0.025, 0.0025, 0.05),
        ];
        let index = name
            .strip_prefix("table1-row")
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|i| (1..=rows.len()).contains(i))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown preset {name:?}; expected table1-row1 .. table1-row{}",
                    rows.len()
                ))
            })?;
        let (dim, init_noise, system_noise, phase_noise) = rows[index - 1];
        Ok(SimConfig {
            dim,
            init_noise,
            system_noise,
            phase_noise,
            ..SimConfig::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig("dim must be at least 2".into()));
        }
        if self.n_train + self.n_test == 0 {
            return Err(Error::InvalidConfig("no trajectories requested".into()));
        }
        if !(self.dt > 0.0) || !(self.duration >= self.dt) {
            return Err(Error::InvalidConfig(
                "need dt > 0 and duration ≥ dt".into(),
            ));
        }
        Ok(())
    }
}

// Stream ids partition the generator: one reserved stream builds the system,
// stream base+j drives trajectory j, so trajectories are independent of
// thread schedule and of each other. The base jumps when a drawn system's
// data fails the circulation gate and everything is redrawn.
const SYSTEM_STREAM: u64 = u64::MAX;
const ATTEMPT_STRIDE: u64 = 1 << 32;

fn trajectory_segment(
    osc: &GroundTruthOscillator,
    config: &SimConfig,
    index: u64,
) -> Result<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let x0 = osc.initial_state(&mut rng)?;
    let path = osc.simulate(&x0, config.dt, config.duration, &mut rng)?;
    let velocities = if config.with_velocities {
        Some(
            path.states
                .iter()
                .map(|x| osc.drift(x))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let true_phase = Some(
        path.states
            .iter()
            .map(|x| osc.true_phase(x))
            .collect::<Result<Vec<_>>>()?,
    );
    Ok(Segment {
        times: path.times,
        states: path.states,
        velocities,
        true_phase,
    })
}

/// Every sampled segment must wind forward around the data mean, with real
/// margin, or downstream fitting rejects the dataset by contract. A single
/// unlucky initial draw near a fold of the distortion can stall a segment,
/// so the gate checks the actual trajectories, not just the chain geometry.
/// (Whether the data reaches a full combined turn is the fitter's concern;
/// short recordings are valid generator output.)
fn data_circulates(data: &TimeSeriesDataset, duration: f64) -> bool {
    let floor = f64::min(0.5, 0.05 * duration);
    match crate::rectify::segment_windings(data, true) {
        Ok(windings) => windings.iter().all(|&w| w >= floor),
        Err(_) => false,
    }
}

fn settle_system(config: &SimConfig) -> Result<(GroundTruthOscillator, TimeSeriesDataset)> {
    config.validate()?;
    let mut sys_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sys_rng.set_stream(SYSTEM_STREAM);
    let total = config.n_train + config.n_test;
    for attempt in 0..16u64 {
        let osc = GroundTruthOscillator::random(config, &mut sys_rng)?;
        let base = attempt * ATTEMPT_STRIDE;
        let segments: Vec<Segment> = (0..total as u64)
            .into_par_iter()
            .map(|j| trajectory_segment(&osc, config, base + j))
            .collect::<Result<Vec<_>>>()?;
        let mut data = TimeSeriesDataset::new(config.dim, segments)?;
        if data_circulates(&data, config.duration) {
            data.config_json = Some(serde_json::to_string(config).expect("config serializes"));
            return Ok((osc, data));
        }
    }
    Err(Error::NoCirculation(
        "16 sampled systems in a row produced non-circulating data".into(),
    ))
}

/// Build the random oscillator for `config` (reproducible from the seed).
/// This is the same system whose data [`generate_dataset`] returns.
pub fn build_oscillator(config: &SimConfig) -> Result<GroundTruthOscillator> {
    settle_system(config).map(|(osc, _)| osc)
}

/// Generate all trajectories (train first, then test) as one labeled
/// dataset with the config embedded for provenance.
pub fn generate_dataset(config: &SimConfig) -> Result<TimeSeriesDataset> {
    settle_system(config).map(|(_, data)| data)
}

/// Same trajectories as [`generate_dataset`], split into the first
/// `n_train` segments and the rest.
pub fn generate_split(config: &SimConfig) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let all = generate_dataset(config)?;
    let mut train_segments = all.segments;
    let test_segments = train_segments.split_off(config.n_train.min(train_segments.len()));
    let mut train = TimeSeriesDataset::new(config.dim, train_segments)?;
    let mut test = TimeSeriesDataset::new(config.dim, test_segments)?;
    train.config_json = all.config_json.clone();
    test.config_json = all.config_json;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::unwrap_angles;
    use approx::assert_relative_eq;

    fn small_config() -> SimConfig {
        SimConfig {
            dim: 3,
            n_train: 2,
            n_test: 1,
            duration: 1.0,
            dt: 0.02,
            init_noise: 0.05,
            system_noise: 0.01,
            phase_noise: 0.05,
            state_hmaps: 2,
            noise_hmaps: 2,
            with_velocities: true,
            seed: 42,
        }
    }

    #[test]
    fn identity_chain_probes_circulate_without_nonlinearity() {
        let probes = ChainProbes::new(&DiffeoChain::identity(2), 0.1);
        assert!(probes.circulates_cleanly());
        assert!(probes.relative_nonlinearity() < 1e-9);
    }

    #[test]
    fn initial_draws_stay_in_certified_envelope() {
        let floquet = FloquetSystem::random(3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let osc = GroundTruthOscillator::new(
            floquet,
            DiffeoChain::identity(3),
            DiffeoChain::identity(3),
            0.2,
            0.0,
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let x = osc.initial_state(&mut rng).unwrap();
            let (_, r, p) = wind(&x).unwrap();
            assert!((r - 1.0).abs() <= 0.6 + 1e-12, "radius {r} past 3 sigma");
            assert!(p.amax() <= 0.6 + 1e-12, "transverse {p} past 3 sigma");
        }
    }

    #[test]
    fn generated_segments_all_wind_forward() {
        let mut config = SimConfig::preset("table1-row1").unwrap();
        config.seed = 3;
        let data = generate_dataset(&config).unwrap();
        let windings = crate::rectify::segment_windings(&data, true).unwrap();
        let floor = f64::min(0.5, 0.05 * config.duration);
        assert!(windings.iter().all(|&w| w >= floor), "windings {windings:?}");
    }

    #[test]
    fn noise_shaping_inverts_the_tangent_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chain = DiffeoChain::random(4, 3, &mut rng).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(4, |_, _| normal.sample(&mut rng));
            let g = noise_matrix(&chain, &x, 0.7);
            let product = &g * chain.jacobian(&x);
            let target = DMatrix::identity(4, 4) * 0.7;
            assert!((product - target).amax() < 1e-9);
        }
    }

    #[test]
    fn identity_chain_noise_is_scaled_identity() {
        let chain = DiffeoChain::identity(3);
        let g = noise_matrix(&chain, &DVector::zeros(3), 0.2);
        assert_eq!(g, DMatrix::identity(3, 3) * 0.2);
    }

    #[test]
    fn true_phase_ignores_transverse_coordinates() {
        let config = small_config();
        let osc = build_oscillator(&config).unwrap();
        let theta0 = 1.234;
        let on_cycle = osc
            .state_chain()
            .forward(&unwind(theta0, 1.0, &DVector::zeros(1)));
        assert!((osc.true_phase(&on_cycle).unwrap() - theta0).abs() < 1e-10);
        let off_cycle = osc
            .state_chain()
            .forward(&unwind(theta0, 1.3, &DVector::from_vec(vec![0.4])));
        assert!((osc.true_phase(&off_cycle).unwrap() - theta0).abs() < 1e-9);
    }

    #[test]
    fn noiseless_phase_advances_with_time() {
        for dim in [2usize, 3] {
            let config = SimConfig {
                dim,
                n_train: 1,
                n_test: 0,
                duration: 3.0,
                dt: 1e-3,
                init_noise: 0.0,
                system_noise: 0.0,
                phase_noise: 0.0,
                state_hmaps: 2,
                noise_hmaps: 2,
                with_velocities: false,
                seed: 7,
            };
            let data = generate_dataset(&config).unwrap();
            let seg = &data.segments[0];
            let phases = unwrap_angles(seg.true_phase.as_ref().unwrap());
            let worst = seg
                .times
                .iter()
                .zip(&phases)
                .map(|(t, p)| ((p - phases[0]) - t).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-6, "dim {dim}: phase drift {worst}");
        }
    }

    #[test]
    fn zero_init_noise_starts_on_the_cycle() {
        let config = SimConfig {
            init_noise: 0.0,
            ..small_config()
        };
        let osc = build_oscillator(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x0 = osc.initial_state(&mut rng).unwrap();
            let (_, r, p) = wind(&osc.state_chain().inverse(&x0)).unwrap();
            assert_relative_eq!(r, 1.0, epsilon = 1e-9);
            assert!(p.norm() < 1e-9);
        }
    }

    #[test]
    fn generation_is_reproducible_bitwise() {
        let config = small_config();
        let a = generate_dataset(&config).unwrap();
        let b = generate_dataset(&config).unwrap();
        assert_eq!(a.segments.len(), 3);
        for (sa, sb) in a.segments.iter().zip(&b.segments) {
            assert_eq!(sa.times.len(), 51);
            for (x, y) in sa.states.iter().zip(&sb.states) {
                for (u, v) in x.iter().zip(y.iter()) {
                    assert_eq!(u.to_bits(), v.to_bits());
                }
            }
            let (pa, pb) = (sa.true_phase.as_ref().unwrap(), sb.true_phase.as_ref().unwrap());
            for (u, v) in pa.iter().zip(pb) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn split_preserves_order_and_metadata() {
        let config = small_config();
        let all = generate_dataset(&config).unwrap();
        let (train, test) = generate_split(&config).unwrap();
        assert_eq!(train.segments.len(), 2);
        assert_eq!(test.segments.len(), 1);
        assert_eq!(train.segments[0].states[0], all.segments[0].states[0]);
        assert_eq!(test.segments[0].states[0], all.segments[2].states[0]);
        let embedded: SimConfig =
            serde_json::from_str(train.config_json.as_deref().unwrap()).unwrap();
        assert_eq!(embedded, config);
    }

    #[test]
    fn presets_cover_all_table_rows() {
        let expect = [
            (2usize, 0.1, 0.01, 0.1),
            (2, 0.2, 0.01, 0.1),
            (2, 0.1, 0.02, 0.1),
            (2, 0.1, 0.01, 0.2),
            (3, 0.066, 0.0066, 0.066),
            (3, 0.133, 0.0066, 0.066),
            (3, 0.066, 0.0133, 0.066),
            (3, 0.066, 0.0066, 0.133),
            (8, 0.025, 0.0025, 0.025),
            (8, 0.05, 0.0025, 0.025),
            (8, 0.025, 0.005, 0.025),
            (8, 0.025, 0.0025, 0.05),
        ];
        for (i, &(dim, init, system, phase)) in expect.iter().enumerate() {
            let c = SimConfig::preset(&format!("table1-row{}", i + 1)).unwrap();
            assert_eq!(c.dim, dim);
            assert_eq!(c.init_noise, init);
            assert_eq!(c.system_noise, system);
            assert_eq!(c.phase_noise, phase);
            assert_eq!(c.n_train, 20);
            assert_eq!(c.n_test, 20);
        }
        assert!(SimConfig::preset("table1-row13").is_err());
        assert!(SimConfig::preset("bogus").is_err());
    }

    #[test]
    fn velocities_are_the_exact_field() {
        let config = small_config();
        let osc = build_oscillator(&config).unwrap();
        let data = generate_dataset(&config).unwrap();
        let seg = &data.segments[0];
        let v = seg.velocities.as_ref().unwrap();
        for k in [0usize, 10, 50] {
            let expected = osc.drift(&seg.states[k]).unwrap();
            assert_eq!((&v[k] - expected).amax(), 0.0);
        }
    }
}

