use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use cmps_core::ensemble::resolving_step;
use cmps_core::forward::{self, uniform_grid, CorrelationSeries, CountingSeries, Normalization, SpectralData};
use cmps_core::io::{self, CurveTable};
use cmps_core::lindblad::{self, CmpsModel};
use cmps_core::qd::{self, FitOptions, PipelineOptions};
use cmps_core::tomography::{
    self, compare_models_gauge_invariant, CorrelationOptions, CountingOptions, Predictor, ReconstructionResult,
};
use cmps_core::trajectory::{self, SpikeTrain};
use cmps_core::Error;

use crate::config::{CliError, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NormArg {
    Raw,
    #[value(name = "per_event", alias = "per-event")]
    PerEvent,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Raw => Normalization::Raw,
            NormArg::PerEvent => Normalization::PerEvent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RouteArg {
    #[value(alias = "correlations")]
    Correlation,
    Counting,
}

fn non_empty(points: usize, what: &str) -> Result<(), CliError> {
    if points == 0 {
        return Err(Error::InvalidInput(format!("{what} grid is empty")).into());
    }
    Ok(())
}

fn positive(x: Option<f64>, what: &str) -> Result<(), CliError> {
    match x {
        Some(v) if !(v > 0.0) || !v.is_finite() => Err(Error::InvalidInput(format!("{what} must be positive")).into()),
        _ => Ok(()),
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ForwardArgs {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Samples of C2 on [0, (n-1) step].
    #[arg(long, default_value_t = 512)]
    pub c2_points: usize,
    /// C2 and C3 step in ms (default: resolves the fastest mode of T).
    #[arg(long)]
    pub c2_step: Option<f64>,
    /// Samples per axis of the C3 surface.
    #[arg(long, default_value_t = 64)]
    pub c3_points: usize,
    #[arg(long, default_value_t = 512)]
    pub counting_points: usize,
    /// P0/P1 step in ms (default: resolves the fastest idle mode).
    #[arg(long)]
    pub counting_step: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub wtd_points: usize,
    #[arg(long, default_value_t = 256)]
    pub noise_points: usize,
    /// Largest angular frequency of the noise spectrum (default: 4 times the spectral radius of T).
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long, value_enum, default_value_t = NormArg::Raw)]
    pub normalization: NormArg,
}

pub fn forward(ctx: &Context, a: ForwardArgs) -> Result<(), CliError> {
    for (n, what) in [
        (a.c2_points, "C2"),
        (a.c3_points, "C3"),
        (a.counting_points, "counting"),
        (a.wtd_points, "WTD"),
        (a.noise_points, "noise"),
    ] {
        non_empty(n, what)?;
    }
    positive(a.c2_step, "c2_step")?;
    positive(a.counting_step, "counting_step")?;
    positive(a.omega_max, "omega_max")?;
    let model = lindblad::load_model(&a.model)?;
    let sd = SpectralData::from_model(&model)?;
    let norm: Normalization = a.normalization.into();
    ctx.prepare()?;
    let mut outputs = Vec::new();
    let mut emit = |name: &str, table: CurveTable| -> Result<(), CliError> {
        table.write_pair(&ctx.path(name))?;
        outputs.push(format!("{name}.csv"));
        outputs.push(format!("{name}.json"));
        Ok(())
    };

    let h = a.c2_step.unwrap_or_else(|| resolving_step(&sd.lambda));
    let taus = uniform_grid(0.0, h, a.c2_points);
    emit("c2", io::correlation_table(&forward::c2_curve(&sd, &taus, norm)?))?;
    let axis = uniform_grid(0.0, h, a.c3_points);
    emit("c3", io::correlation_table(&forward::c3_surface(&sd, &axis, &axis, norm)?))?;

    let hc = match a.counting_step {
        Some(s) => s,
        None => resolving_step(&sd.idle()?.mu),
    };
    let taus = uniform_grid(0.0, hc, a.counting_points);
    emit("p0", io::counting_table(&forward::p0_curve(&sd, &taus)?))?;
    emit("p1", io::counting_table(&forward::p1_curve(&sd, &taus)?))?;
    let wtd_grid = forward::default_wtd_grid(&sd, a.wtd_points.max(2))?;
    let wtd = forward::wtd_from_matrices(&sd, &wtd_grid[..a.wtd_points.min(wtd_grid.len())])?;
    emit("wtd", io::wtd_table(&wtd))?;

    let radius = sd.lambda.iter().fold(0.0_f64, |m, l| m.max(l.norm()));
    let w_max = a.omega_max.unwrap_or(4.0 * radius.max(1e-12));
    let omegas = uniform_grid(0.0, w_max / (a.noise_points.max(2) - 1) as f64, a.noise_points);
    emit("noise", io::xy_table("omega_rad_per_ms", &omegas, &forward::noise_spectrum(&sd, &omegas)?))?;

    let scalars = json!({
        "current_khz": forward::steady_current(&sd)?,
        "fano": forward::fano(&sd)?,
        "wtd_mean_tau_ms": wtd.mean_tau,
    });
    write_json(&ctx.path("scalars.json"), &scalars)?;
    outputs.push("scalars.json".into());
    ctx.write_manifest("forward", &a, &outputs)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Observation time in ms.
    #[arg(long)]
    pub duration: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Independent trajectories; trajectory i uses RNG stream i.
    #[arg(long, default_value_t = 1)]
    pub trajectories: usize,
    /// Snap clicks to this detector resolution (ms).
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Write only this 1-based channel (default: all).
    #[arg(long)]
    pub channel: Option<usize>,
}

pub fn simulate(ctx: &Context, a: SimulateArgs) -> Result<(), CliError> {
    positive(a.bin_width, "bin_width")?;
    if a.trajectories == 0 {
        return Err(Error::InvalidInput("trajectories must be at least 1".into()).into());
    }
    let model = lindblad::load_model(&a.model)?;
    if let Some(c) = a.channel {
        if c == 0 || c > model.jump_ops.len() {
            return Err(Error::InvalidInput(format!("channel {c} outside 1..={}", model.jump_ops.len())).into());
        }
    }
    let batch = trajectory::simulate_batch(&model, a.duration, a.seed, a.trajectories)?;
    ctx.prepare()?;
    let mut outputs = Vec::new();
    for (i, trains) in batch.iter().enumerate() {
        for train in trains {
            if a.channel.is_some_and(|c| c != train.channel) {
                continue;
            }
            let train = match a.bin_width {
                Some(bw) => train.binned(bw)?,
                None => train.clone(),
            };
            let name = if a.trajectories == 1 {
                format!("train_ch{}.txt", train.channel)
            } else {
                format!("train_t{i}_ch{}.txt", train.channel)
            };
            train.write(&ctx.path(&name))?;
            eprintln!("{name}: {} clicks, rate {:.6} kHz", train.clicks.len(), train.rate());
            outputs.push(name);
        }
    }
    ctx.write_manifest("simulate", &a, &outputs)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EstimateArgs {
    /// Spike-train file.
    #[arg(long)]
    pub train: PathBuf,
    /// Autocorrelation bin width in ms (default: 1/(50 rate)).
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Longest autocorrelation lag in ms (default: 2.5/rate, at most a tenth of the duration).
    #[arg(long)]
    pub max_lag: Option<f64>,
    /// Waiting-time histogram bin width in ms.
    #[arg(long)]
    pub wtd_width: Option<f64>,
    /// Longest counting window in ms (default: 5/rate).
    #[arg(long)]
    pub counting_max: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub counting_points: usize,
}

pub fn estimate(ctx: &Context, a: EstimateArgs) -> Result<(), CliError> {
    for (v, what) in [(a.bin_width, "bin_width"), (a.max_lag, "max_lag"), (a.wtd_width, "wtd_width"), (a.counting_max, "counting_max")] {
        positive(v, what)?;
    }
    non_empty(a.counting_points, "counting")?;
    let train = SpikeTrain::read(&a.train)?;
    if train.clicks.is_empty() {
        return Err(Error::EmptyTrain(format!("{} has no clicks", a.train.display())).into());
    }
    let rate = train.rate();
    let bw = a.bin_width.unwrap_or(1.0 / (50.0 * rate));
    let max_lag = a.max_lag.unwrap_or((2.5 / rate).min(train.duration / 10.0 * (1.0 - 1e-12)));
    ctx.prepare()?;
    let mut outputs = Vec::new();
    let mut emit = |name: &str, table: CurveTable| -> Result<(), CliError> {
        table.write_pair(&ctx.path(name))?;
        outputs.push(format!("{name}.csv"));
        outputs.push(format!("{name}.json"));
        Ok(())
    };
    emit("c2_est", io::correlation_table(&trajectory::estimate_c2(&train, bw, max_lag)?))?;
    emit("wtd_est", io::wtd_table(&trajectory::estimate_wtd(&train, a.wtd_width)?))?;
    let t_max = a.counting_max.unwrap_or(5.0 / rate).min(train.duration * 0.5);
    let step = if a.counting_points > 1 { t_max / (a.counting_points - 1) as f64 } else { 0.0 };
    let (p0, p1) = trajectory::estimate_counting(&train, &uniform_grid(0.0, step, a.counting_points))?;
    emit("p0_est", io::counting_table(&p0))?;
    emit("p1_est", io::counting_table(&p1))?;
    ctx.write_manifest("estimate", &a, &outputs)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[arg(long, value_enum)]
    pub route: RouteArg,
    /// Hilbert-space dimension of the model to reconstruct.
    #[arg(long)]
    pub d: usize,
    /// C2 curve file (correlation route).
    #[arg(long)]
    pub c2: Option<PathBuf>,
    /// C3 surface file (correlation route).
    #[arg(long)]
    pub c3: Option<PathBuf>,
    /// P0 curve file (counting route).
    #[arg(long)]
    pub p0: Option<PathBuf>,
    /// P1 curve file (counting route).
    #[arg(long)]
    pub p1: Option<PathBuf>,
    /// Reference model (TOML) to compare the reconstruction against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Relative singular-value cutoff for model-order selection.
    #[arg(long, default_value_t = tomography::SVD_THRESHOLD_ROUTE)]
    pub svd_threshold: f64,
    /// Amplitudes below this fraction of the largest count as zero.
    #[arg(long, default_value_t = 1e-8)]
    pub tol_coeff: f64,
    /// Correlation route: largest relative rms misfit of C3.
    #[arg(long, default_value_t = 1e-4)]
    pub c3_misfit_tol: f64,
    /// Correlation route: refuse a reduced-order reconstruction.
    #[arg(long)]
    pub strict_order: bool,
    /// Counting route: random multistart count.
    #[arg(long, default_value_t = 200)]
    pub restarts: usize,
    /// Counting route: multistart seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn load_table(path: &Option<PathBuf>, flag: &str, route: &str) -> Result<(PathBuf, CurveTable), CliError> {
    let path = path
        .clone()
        .ok_or_else(|| Error::InvalidInput(format!("the {route} route needs --{flag}")))?;
    let table = CurveTable::read(&path)?;
    Ok((path, table))
}

fn correlation_input(path: &Path, t: &CurveTable, order: usize) -> Result<CorrelationSeries, CliError> {
    if t.meta.contains_key("n") {
        return Err(Error::InvalidInput(format!("{} holds counting data, not a correlation", path.display())).into());
    }
    let s = io::correlation_from_table(t)?;
    if s.order != order {
        return Err(Error::InvalidInput(format!("{} holds C{}, expected C{order}", path.display(), s.order)).into());
    }
    Ok(s)
}

fn counting_input(path: &Path, t: &CurveTable, n: usize) -> Result<CountingSeries, CliError> {
    if t.meta.contains_key("order") {
        return Err(Error::InvalidInput(format!("{} holds a correlation, not counting data", path.display())).into());
    }
    let s = io::counting_from_table(t)?;
    if s.n != n {
        return Err(Error::InvalidInput(format!("{} holds P{}, expected P{n}", path.display(), s.n)).into());
    }
    Ok(s)
}

pub fn reconstruct(ctx: &Context, a: ReconstructArgs) -> Result<(), CliError> {
    if a.d < 2 {
        return Err(Error::InvalidInput("d must be at least 2".into()).into());
    }
    let mut data_fit = serde_json::Map::new();
    let rec = match a.route {
        RouteArg::Correlation => {
            let (p2, t2) = load_table(&a.c2, "c2", "correlation")?;
            let (p3, t3) = load_table(&a.c3, "c3", "correlation")?;
            let c2 = correlation_input(&p2, &t2, 2)?;
            let c3 = correlation_input(&p3, &t3, 3)?;
            let opts = CorrelationOptions {
                svd_threshold: a.svd_threshold,
                tol_coeff: a.tol_coeff,
                c3_misfit_tol: a.c3_misfit_tol,
                allow_reduced: !a.strict_order,
                ..Default::default()
            };
            let rec = tomography::reconstruct_from_correlations(&c2, &c3, a.d, &opts)?;
            let predicted = forward::c2_curve(&rec.spectral_data()?, &c2.taus(), c2.normalization)?;
            data_fit.insert("c2".into(), json!(cmps_core::linalg::relative_sup_distance(&predicted.values, &c2.values)));
            rec
        }
        RouteArg::Counting => {
            let (p0p, t0) = load_table(&a.p0, "p0", "counting")?;
            let (p1p, t1) = load_table(&a.p1, "p1", "counting")?;
            let p0 = counting_input(&p0p, &t0, 0)?;
            let p1 = counting_input(&p1p, &t1, 1)?;
            let opts = CountingOptions {
                svd_threshold: a.svd_threshold,
                tol_coeff: a.tol_coeff,
                restarts: a.restarts,
                seed: a.seed,
                ..Default::default()
            };
            let rec = tomography::reconstruct_from_counting(&p0, &p1, a.d, &opts)?;
            let sd = rec.spectral_data()?;
            let q0 = forward::p0_curve(&sd, &p0.grid)?;
            let q1 = forward::p1_curve(&sd, &p1.grid)?;
            data_fit.insert("p0".into(), json!(cmps_core::linalg::relative_sup_distance(&q0.values, &p0.values)));
            data_fit.insert("p1".into(), json!(cmps_core::linalg::relative_sup_distance(&q1.values, &p1.values)));
            rec
        }
    };
    ctx.prepare()?;
    std::fs::write(ctx.path("reconstruction.json"), rec.to_json()? + "\n")?;
    let mut outputs = vec!["reconstruction.json".to_string()];
    if let Some(model) = &rec.to_model().ok() {
        std::fs::write(ctx.path("reconstructed_model.toml"), lindblad::model_to_toml(model))?;
        outputs.push("reconstructed_model.toml".into());
    }
    let reference = match &a.reference {
        Some(path) => {
            let model = lindblad::load_model(path)?;
            let report = compare_models_gauge_invariant(&Predictor::Model(&model), &Predictor::Reconstruction(&rec), None)?;
            eprintln!("max distance to reference: {:.3e}", report.max_distance());
            Some(report)
        }
        None => None,
    };
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&ctx.path("comparison.json"), &json!({ "data_fit": data_fit, "reference": reference }))?;
    outputs.push("comparison.json".into());
    ctx.write_manifest("reconstruct", &a, &outputs)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct QdArgs {
    /// Spike-train file of the detected channel.
    #[arg(long)]
    pub train: PathBuf,
    /// Autocorrelation bin width in ms.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Longest autocorrelation lag in ms.
    #[arg(long)]
    pub max_lag: Option<f64>,
    /// Waiting-time histogram bin width in ms.
    #[arg(long)]
    pub wtd_width: Option<f64>,
}

pub fn qd_pipeline(ctx: &Context, a: QdArgs) -> Result<(), CliError> {
    for (v, what) in [(a.bin_width, "bin_width"), (a.max_lag, "max_lag"), (a.wtd_width, "wtd_width")] {
        positive(v, what)?;
    }
    let train = SpikeTrain::read(&a.train)?;
    let opts = PipelineOptions {
        fit: FitOptions { bin_width: a.bin_width, max_lag: a.max_lag, ..Default::default() },
        wtd_width: a.wtd_width,
    };
    let report = qd::qd_wtd_pipeline(&train, &opts)?;
    ctx.prepare()?;
    io::correlation_table(&report.fit.c2).write_pair(&ctx.path("c2_est"))?;
    io::wtd_table(&report.empirical).write_pair(&ctx.path("wtd_empirical"))?;
    let mut rec = io::wtd_table(&report.reconstructed);
    rec.columns.push("bin_average".into());
    for (row, v) in rec.rows.iter_mut().zip(&report.reconstructed_binned) {
        row.push(*v);
    }
    rec.write_pair(&ctx.path("wtd_reconstructed"))?;
    let summary = json!({
        "params": report.fit.params,
        "gamma_sum_khz": report.fit.gamma_sum,
        "current_khz": report.fit.current,
        "fit_rms": report.fit.fit_rms,
        "diagnostics": report.fit.diagnostics,
        "n_waits": report.n_waits,
        "empirical_mean_tau_ms": report.empirical.mean_tau,
        "reconstructed_mean_tau_ms": report.reconstructed.mean_tau,
        "sup_distance": report.sup_distance,
        "ks_statistic": report.ks_statistic,
        "ks_pvalue": report.ks_pvalue,
        "matches": report.matches,
        "curves": {
            "c2": "c2_est.csv",
            "wtd_empirical": "wtd_empirical.csv",
            "wtd_reconstructed": "wtd_reconstructed.csv",
        },
    });
    write_json(&ctx.path("qd_report.json"), &summary)?;
    eprintln!(
        "gamma_l = {:.4} kHz, gamma_r = {:.4} kHz, KS p = {:.3}",
        report.fit.params.gamma_l, report.fit.params.gamma_r, report.ks_pvalue
    );
    let outputs: Vec<String> = ["c2_est", "wtd_empirical", "wtd_reconstructed"]
        .iter()
        .flat_map(|s| [format!("{s}.csv"), format!("{s}.json")])
        .chain(std::iter::once("qd_report.json".to_string()))
        .collect();
    ctx.write_manifest("qd-pipeline", &a, &outputs)
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Model (.toml) or reconstruction (.json).
    #[arg(long)]
    pub a: PathBuf,
    /// Model (.toml) or reconstruction (.json).
    #[arg(long)]
    pub b: PathBuf,
}

enum Loaded {
    Model(CmpsModel),
    Rec(ReconstructionResult),
}

impl Loaded {
    fn read(path: &Path) -> Result<Self, CliError> {
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(path)?;
            Ok(Loaded::Rec(ReconstructionResult::from_json(&text)?))
        } else {
            Ok(Loaded::Model(lindblad::load_model(path)?))
        }
    }

    fn predictor(&self) -> Predictor<'_> {
        match self {
            Loaded::Model(m) => Predictor::Model(m),
            Loaded::Rec(r) => Predictor::Reconstruction(r),
        }
    }
}

pub fn compare(ctx: &Context, a: CompareArgs) -> Result<(), CliError> {
    let x = Loaded::read(&a.a)?;
    let y = Loaded::read(&a.b)?;
    let report = compare_models_gauge_invariant(&x.predictor(), &y.predictor(), None)?;
    ctx.prepare()?;
    write_json(&ctx.path("comparison.json"), &report)?;
    for (k, v) in &report.distances {
        println!("{k}: {v:.6e}");
    }
    for (k, why) in &report.skipped {
        println!("{k}: skipped ({why})");
    }
    ctx.write_manifest("compare", &a, &["comparison.json".to_string()])
}
