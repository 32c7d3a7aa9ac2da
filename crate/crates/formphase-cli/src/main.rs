//! Command-line front end: simulate ground-truth oscillators, fit phase
//! models, and export phases, response curves, isochrons, and estimator
//! comparisons as plain CSV.
//!
//! Every subcommand is a pure function of its input files, flags, and seed;
//! reruns produce byte-identical outputs. Numbers are printed with 17
//! significant digits so files round-trip to the exact binary values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use formphase::baselines::{compare_estimators, CompareOptions};
use formphase::numeric::fmt_g17;
use formphase::oneform::{isochrons, IsochronWindow};
use formphase::preprocess::{
    filter_bank_embed, kalman_smooth, relative_phase, FilterBankConfig, SmootherConfig,
};
use formphase::rectify::fit_limit_cycle;
use formphase::simgen::generate_split;
use formphase::{
    BasisSpec, CycleFitOptions, Error, FitOptions, FormPhaseModel, Result, Segment, SimConfig,
    TimeSeriesDataset,
};

#[derive(Parser)]
#[command(name = "formphase", version, about = "Phase estimation for sampled oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test trajectories of a random ground-truth oscillator.
    Simulate(SimulateArgs),
    /// Fit a phase model to a dataset CSV and save it as JSON.
    Fit(FitArgs),
    /// Evaluate a fitted model's phase on every sample of a dataset.
    Phase(PhaseArgs),
    /// Export the phase response curve along the fitted cycle.
    Prc(PrcArgs),
    /// Extract isochron polylines on a planar window.
    Isochrons(IsochronArgs),
    /// Compare the form and event estimators on a train/test pair.
    Eval(EvalArgs),
    /// Embed scalar relaxation-oscillator recordings and compute relative phases.
    Chem(ChemArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Start from a benchmark condition (table1-row1 .. table1-row12).
    #[arg(long)]
    preset: Option<String>,
    /// State dimension (at least 2).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Trajectory length in time units.
    #[arg(long)]
    duration: Option<f64>,
    /// Sampling interval.
    #[arg(long)]
    dt: Option<f64>,
    /// Spread of the initial condition around the cycle.
    #[arg(long)]
    init_noise: Option<f64>,
    /// Isotropic state noise amplitude (shaped by the noise map).
    #[arg(long)]
    system_noise: Option<f64>,
    /// Noise amplitude along the phase direction.
    #[arg(long)]
    phase_noise: Option<f64>,
    /// Nonlinear couplings in the state change of coordinates.
    #[arg(long)]
    state_hmaps: Option<usize>,
    /// Nonlinear couplings in the noise-shaping map.
    #[arg(long)]
    noise_hmaps: Option<usize>,
    /// Attach exact drift velocities to every sample.
    #[arg(long)]
    with_velocities: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "train.csv")]
    out_train: PathBuf,
    #[arg(long, default_value = "test.csv")]
    out_test: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Training dataset CSV. Velocity columns are used when present;
    /// otherwise velocities come from Kalman smoothing.
    train: PathBuf,
    #[arg(short, long, default_value = "model.json")]
    out: PathBuf,
    /// Harmonic order of the correction-potential basis.
    #[arg(long, default_value_t = 6)]
    fourier_order: usize,
    /// Radial polynomial order of the correction-potential basis.
    #[arg(long, default_value_t = 6)]
    poly_order: usize,
    /// Ridge weight on the basis coefficients, scaled by the design size.
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    /// Fourier order of the limit-cycle rectification fit.
    #[arg(long, default_value_t = 10)]
    cycle_order: usize,
}

#[derive(Args)]
struct PhaseArgs {
    model: PathBuf,
    data: PathBuf,
    #[arg(short, long, default_value = "phases.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct PrcArgs {
    model: PathBuf,
    #[arg(short, long, default_value = "prc.csv")]
    out: PathBuf,
    /// Number of evenly spaced cycle phases.
    #[arg(long, default_value_t = 256)]
    samples: usize,
}

#[derive(Args)]
struct IsochronArgs {
    model: PathBuf,
    #[arg(short, long, default_value = "isochrons.csv")]
    out: PathBuf,
    /// Comma-separated phase levels in radians, or a bare integer for that
    /// many evenly spaced levels.
    #[arg(long, default_value = "8", allow_hyphen_values = true)]
    levels: String,
    /// Grid nodes per axis, as N or NxM.
    #[arg(long, default_value = "201")]
    grid: String,
    /// Window bounds lo0,hi0,lo1,hi1 on the two plane axes.
    #[arg(long, allow_hyphen_values = true)]
    window: String,
    /// State coordinates spanning the window plane.
    #[arg(long, default_value = "0,1")]
    axes: String,
    /// Pinned values for all coordinates (comma-separated, full dimension);
    /// zero when omitted.
    #[arg(long, allow_hyphen_values = true)]
    base: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    train: PathBuf,
    test: PathBuf,
    #[arg(short, long, default_value = "report.csv")]
    out: PathBuf,
    /// Also write the human-readable summary to this path.
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    fourier_order: usize,
    #[arg(long, default_value_t = 6)]
    poly_order: usize,
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
}

#[derive(Args)]
struct ChemArgs {
    /// Recording CSV with header `t,<name>,...`: one scalar column per
    /// oscillator on shared timestamps.
    input: PathBuf,
    #[arg(long, default_value = "embedded.csv")]
    out_embedded: PathBuf,
    #[arg(long, default_value = "relative_phases.csv")]
    out_phases: PathBuf,
    /// Spike threshold in standard deviations above the mean.
    #[arg(long, default_value_t = 2.0)]
    threshold_sigmas: f64,
    /// Skip baseline/amplitude detrending before spike detection.
    #[arg(long)]
    no_detrend: bool,
    #[arg(long, default_value_t = 6)]
    fourier_order: usize,
    #[arg(long, default_value_t = 6)]
    poly_order: usize,
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Phase(a) => cmd_phase(a),
        Command::Prc(a) => cmd_prc(a),
        Command::Isochrons(a) => cmd_isochrons(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Chem(a) => cmd_chem(a),
    }
}

/// Cap the global thread pool when FORMPHASE_THREADS is set. Results do not
/// depend on the pool size; only wall time does.
fn configure_threads() -> Result<()> {
    match std::env::var("FORMPHASE_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("FORMPHASE_THREADS={v:?} is not a thread count"))
            })?;
            if n == 0 {
                return Err(Error::InvalidConfig(
                    "FORMPHASE_THREADS must be at least 1".into(),
                ));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidConfig(e.to_string()))
        }
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(Error::InvalidConfig(format!("FORMPHASE_THREADS: {e}"))),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut config = match &a.preset {
        Some(name) => SimConfig::preset(name)?,
        None => SimConfig::default(),
    };
    if let Some(v) = a.dim {
        config.dim = v;
    }
    if let Some(v) = a.n_train {
        config.n_train = v;
    }
    if let Some(v) = a.n_test {
        config.n_test = v;
    }
    if let Some(v) = a.duration {
        config.duration = v;
    }
    if let Some(v) = a.dt {
        config.dt = v;
    }
    if let Some(v) = a.init_noise {
        config.init_noise = v;
    }
    if let Some(v) = a.system_noise {
        config.system_noise = v;
    }
    if let Some(v) = a.phase_noise {
        config.phase_noise = v;
    }
    if let Some(v) = a.state_hmaps {
        config.state_hmaps = v;
    }
    if let Some(v) = a.noise_hmaps {
        config.noise_hmaps = v;
    }
    if a.with_velocities {
        config.with_velocities = true;
    }
    config.seed = a.seed;

    let (train, test) = generate_split(&config)?;
    train.save_csv(&a.out_train)?;
    test.save_csv(&a.out_test)?;
    println!(
        "wrote {} ({} segments) and {} ({} segments)",
        a.out_train.display(),
        train.segments.len(),
        a.out_test.display(),
        test.segments.len()
    );
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let raw = TimeSeriesDataset::load_csv(&a.train)?;
    let data = if raw.has_velocities() {
        raw
    } else {
        kalman_smooth(&raw, &SmootherConfig::default())?.data
    };
    let cycle = CycleFitOptions {
        fourier_order: a.cycle_order,
        ..CycleFitOptions::default()
    };
    let rect = fit_limit_cycle(&data, &cycle)?;
    let basis = BasisSpec::for_dim(data.dim, a.fourier_order, a.poly_order)?;
    let model = FormPhaseModel::fit(&data, rect, basis, &FitOptions { ridge: a.ridge })?;
    model.save(&a.out)?;
    let d = model.diagnostics();
    println!("rows             {}", d.rows);
    println!("residual rms     {}", fmt_g17(d.residual_rms));
    println!("rate consistency {}", fmt_g17(d.rate_consistency));
    println!("condition        {}", fmt_g17(d.condition));
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_phase(a: PhaseArgs) -> Result<()> {
    let model = FormPhaseModel::load(&a.model)?;
    let data = TimeSeriesDataset::load_csv(&a.data)?;
    if data.dim != model.dim() {
        return Err(Error::InvalidConfig(format!(
            "model is {}-dimensional, data is {}-dimensional",
            model.dim(),
            data.dim
        )));
    }
    let with_truth = data.has_true_phase();
    let mut w = create(&a.out)?;
    writeln!(w, "segment_id,t,phase{}", if with_truth { ",true_phase" } else { "" })?;
    for (sid, seg) in data.segments.iter().enumerate() {
        for k in 0..seg.len() {
            // Samples where the phase is undefined (e.g. on the cylindrical
            // axis) keep an empty field rather than aborting the export.
            let phase = model.phase(&seg.states[k]).map(fmt_g17).unwrap_or_default();
            write!(w, "{sid},{},{phase}", fmt_g17(seg.times[k]))?;
            if with_truth {
                write!(w, ",{}", fmt_g17(seg.true_phase.as_ref().unwrap()[k]))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_prc(a: PrcArgs) -> Result<()> {
    let model = FormPhaseModel::load(&a.model)?;
    let samples = model.phase_response(a.samples)?;
    let dim = model.dim();
    let mut w = create(&a.out)?;
    let mut header = String::from("phase");
    for i in 0..dim {
        header.push_str(&format!(",x_{i}"));
    }
    for i in 0..dim {
        header.push_str(&format!(",dphi_{i}"));
    }
    writeln!(w, "{header}")?;
    for s in &samples {
        let mut line = fmt_g17(s.phase);
        for v in s.state.iter().chain(s.covector.iter()) {
            line.push(',');
            line.push_str(&fmt_g17(*v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    println!("wrote {} ({} samples)", a.out.display(), samples.len());
    Ok(())
}

fn cmd_isochrons(a: IsochronArgs) -> Result<()> {
    let model = FormPhaseModel::load(&a.model)?;
    let dim = model.dim();
    let levels = parse_levels(&a.levels)?;
    let grid = parse_grid(&a.grid)?;
    let bounds = parse_floats(&a.window, "window")?;
    if bounds.len() != 4 {
        return Err(Error::InvalidConfig(format!(
            "window needs lo0,hi0,lo1,hi1; got {} numbers",
            bounds.len()
        )));
    }
    let axes = parse_indices(&a.axes, "axes")?;
    if axes.len() != 2 {
        return Err(Error::InvalidConfig("axes needs exactly two indices".into()));
    }
    let base = match &a.base {
        Some(s) => {
            let v = parse_floats(s, "base")?;
            if v.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "base needs {dim} coordinates, got {}",
                    v.len()
                )));
            }
            DVector::from_vec(v)
        }
        None => DVector::zeros(dim),
    };
    let window = IsochronWindow {
        axes: (axes[0], axes[1]),
        lo: (bounds[0], bounds[2]),
        hi: (bounds[1], bounds[3]),
        base,
    };
    let curves = isochrons(&model, &levels, &window, grid)?;

    let mut w = create(&a.out)?;
    let mut header = String::from("level,polyline,vertex");
    for i in 0..dim {
        header.push_str(&format!(",x_{i}"));
    }
    writeln!(w, "{header}")?;
    let mut n_polylines = 0;
    for (level, polylines) in &curves {
        for (pi, poly) in polylines.iter().enumerate() {
            n_polylines += 1;
            for (vi, p) in poly.points.iter().enumerate() {
                let mut line = format!("{},{pi},{vi}", fmt_g17(*level));
                for v in p.iter() {
                    line.push(',');
                    line.push_str(&fmt_g17(*v));
                }
                writeln!(w, "{line}")?;
            }
        }
    }
    w.flush()?;
    println!(
        "wrote {} ({} levels, {} polylines)",
        a.out.display(),
        curves.len(),
        n_polylines
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let train = TimeSeriesDataset::load_csv(&a.train)?;
    let test = TimeSeriesDataset::load_csv(&a.test)?;
    let opts = CompareOptions {
        fourier_order: a.fourier_order,
        poly_order: a.poly_order,
        fit: FitOptions { ridge: a.ridge },
        ..CompareOptions::default()
    };
    let report = compare_estimators(&train, &test, &opts)?;
    fs::write(&a.out, report.to_csv())?;
    if let Some(p) = &a.text {
        fs::write(p, report.to_text())?;
    }
    print!("{}", report.to_text());
    println!("wrote {}", a.out.display());
    Ok(())
}

struct Recording {
    times: Vec<f64>,
    names: Vec<String>,
    channels: Vec<Vec<f64>>,
}

fn read_recording(path: &Path) -> Result<Recording> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty recording file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::Parse("recording header must be t,<name>,...".into()));
    }
    let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut times = Vec::new();
    let mut channels = vec![Vec::new(); names.len()];
    for (row, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != cols.len() {
            return Err(Error::Parse(format!(
                "recording row {}: {} fields, expected {}",
                row + 1,
                parts.len(),
                cols.len()
            )));
        }
        let mut values = parts.iter().map(|p| {
            p.parse::<f64>().map_err(|_| {
                Error::Parse(format!("recording row {}: {p:?} is not a number", row + 1))
            })
        });
        times.push(values.next().unwrap()?);
        for channel in channels.iter_mut() {
            channel.push(values.next().unwrap()?);
        }
    }
    Ok(Recording {
        times,
        names,
        channels,
    })
}

fn cmd_chem(a: ChemArgs) -> Result<()> {
    let rec = read_recording(&a.input)?;
    let cfg = FilterBankConfig {
        threshold_sigmas: a.threshold_sigmas,
        detrend: !a.no_detrend,
        ..FilterBankConfig::default()
    };
    let mut embedded = Vec::with_capacity(rec.channels.len());
    for channel in &rec.channels {
        let e = filter_bank_embed(&rec.times, channel, &cfg)?;
        if e.first.len() != rec.times.len() {
            return Err(Error::MismatchedTimestamps(format!(
                "embedding has {} samples for {} timestamps",
                e.first.len(),
                rec.times.len()
            )));
        }
        embedded.push(e);
    }

    let mut w = create(&a.out_embedded)?;
    for (name, e) in rec.names.iter().zip(&embedded) {
        writeln!(
            w,
            "# {name} isi {} cutoffs {} {} {}",
            fmt_g17(e.median_isi),
            fmt_g17(e.cutoff_periods[0]),
            fmt_g17(e.cutoff_periods[1]),
            fmt_g17(e.cutoff_periods[2])
        )?;
    }
    let mut header = String::from("t");
    for name in &rec.names {
        header.push_str(&format!(",{name}_a,{name}_b"));
    }
    writeln!(w, "{header}")?;
    for k in 0..rec.times.len() {
        let mut line = fmt_g17(rec.times[k]);
        for e in &embedded {
            line.push(',');
            line.push_str(&fmt_g17(e.first[k]));
            line.push(',');
            line.push_str(&fmt_g17(e.second[k]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;

    // Each oscillator gets its own phase model on its embedded plane; the
    // embedding has no velocities, so they come from the smoother.
    let mut phases = Vec::with_capacity(embedded.len());
    for e in &embedded {
        let states: Vec<DVector<f64>> = (0..rec.times.len())
            .map(|k| DVector::from_vec(vec![e.first[k], e.second[k]]))
            .collect();
        let seg = Segment {
            times: rec.times.clone(),
            states,
            velocities: None,
            true_phase: None,
        };
        let raw = TimeSeriesDataset::new(2, vec![seg])?;
        let smooth = kalman_smooth(&raw, &SmootherConfig::default())?.data;
        let rect = fit_limit_cycle(&smooth, &CycleFitOptions::default())?;
        let basis = BasisSpec::for_dim(2, a.fourier_order, a.poly_order)?;
        let model = FormPhaseModel::fit(&smooth, rect, basis, &FitOptions { ridge: a.ridge })?;
        let series: Vec<f64> = smooth.segments[0]
            .states
            .iter()
            .map(|x| model.phase(x))
            .collect::<Result<_>>()?;
        phases.push(series);
    }
    let rel = relative_phase(&phases)?;

    let mut w = create(&a.out_phases)?;
    let mut header = String::from("t");
    for name in &rec.names {
        header.push_str(&format!(",{name}"));
    }
    writeln!(w, "{header}")?;
    for k in 0..rec.times.len() {
        let mut line = fmt_g17(rec.times[k]);
        for r in &rel {
            line.push(',');
            line.push_str(&fmt_g17(r[k]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    println!(
        "wrote {} and {}",
        a.out_embedded.display(),
        a.out_phases.display()
    );
    Ok(())
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{what}: {p:?} is not a number")))
        })
        .collect()
}

fn parse_indices(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{what}: {p:?} is not an index")))
        })
        .collect()
}

fn parse_levels(s: &str) -> Result<Vec<f64>> {
    let t = s.trim();
    if !t.contains([',', '.']) {
        if let Ok(n) = t.parse::<usize>() {
            if n == 0 {
                return Err(Error::InvalidConfig("need at least one level".into()));
            }
            return Ok((0..n)
                .map(|k| std::f64::consts::TAU * k as f64 / n as f64)
                .collect());
        }
    }
    parse_floats(t, "levels")
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let parse_one = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidConfig(format!("grid: {p:?} is not a node count")))
    };
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok((parse_one(a)?, parse_one(b)?)),
        None => {
            let n = parse_one(s)?;
            Ok((n, n))
        }
    }
}
