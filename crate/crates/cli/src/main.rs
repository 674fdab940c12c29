//! Command-line front end: CSV samples and inline JSON model specs in,
//! JSON reports out.
//!
//! Exit codes: 0 ok, 2 input/parse error, 3 singular metric, 4 invalid
//! tangent or configuration.

mod io;
mod spec;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use covgeom::{
    asymmetry_check, cross_information_vector, default_step, efficiency_report, empirical_cfim,
    gentropy_via_kl, kl_derivatives, mh_test, mh_test_local, project_tangent, quadrature_cfim,
    score::ScoreField, DensityModel, EstimatorSpec, IntegrationSpec, Kde, KlDirection,
    PerturbationCurve, Polynomial, SampleMatrix, ScoreMethod, TangentVector,
};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use spec::{ManifoldSpecJson, ModelSpecJson};

/// Configuration mistake (wrong flag combination, invalid tangent, ...).
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "covgeom",
    about = "Covariate information geometry: score fields, cFIM spectra, projections, KL curvature checks, CRLB efficiency benchmarks, and manifold-hypothesis tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the covariate Fisher information matrix and its spectrum
    Cfim(CfimArgs),
    /// Project a polynomial tangent direction onto the covariate subspace
    Project(ProjectArgs),
    /// Verify the KL curvature identities along each coordinate axis
    Klcheck(KlcheckArgs),
    /// Benchmark an estimator against the covariate CRLB
    Crlb(CrlbArgs),
    /// Spectral-gap manifold-hypothesis test on CSV data
    Mhtest(MhtestArgs),
    /// Generate synthetic manifold data as CSV
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ScoresArg {
    Analytic,
    Kde,
}

#[derive(Args, Serialize)]
struct CommonArgs {
    /// Inline JSON model, e.g. '{"gaussian":{"mean":[0],"cov":[[1]]}}'
    #[arg(long)]
    model: Option<String>,
    /// CSV sample file (header x1,...,xn)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Score route: analytic (needs --model) or kde
    #[arg(long, value_enum)]
    scores: Option<ScoresArg>,
    /// KDE bandwidth override: one value or comma-separated per coordinate
    #[arg(long)]
    bandwidth: Option<String>,
    /// Integration backend: grid:<points-per-axis> or mc:<draws>
    #[arg(long)]
    integration: Option<String>,
    /// RNG seed for anything sampled
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Omit the timestamp so identical runs are byte-identical
    #[arg(long, default_value_t = false)]
    no_timestamp: bool,
}

#[derive(Args, Serialize)]
struct CfimArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Serialize)]
struct ProjectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tangent direction as a polynomial in x1..xn, e.g. "x1^2-1"
    #[arg(long)]
    tangent: String,
}

#[derive(Args, Serialize)]
struct KlcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Perturbation step; default 0.02·sigma per axis
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args, Serialize)]
struct CrlbArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Estimator: mean, median, or trimmed:<fraction>
    #[arg(long)]
    estimator: String,
    /// Sample size per replication
    #[arg(long, default_value_t = 500)]
    n_per_rep: usize,
    /// Number of replications
    #[arg(long, default_value_t = 2000)]
    n_reps: usize,
}

#[derive(Args, Serialize)]
struct MhtestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Spectral-gap significance threshold
    #[arg(long, default_value_t = 5.0)]
    gap_threshold: f64,
    /// Localize the cFIM to this many rows nearest row 0 (for curved
    /// manifolds, whose global cFIM averages out the gap)
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Inline JSON manifold, e.g. '{"circle":{"radius":1,"ambient":2,"noise":0.05}}'
    #[arg(long)]
    manifold: String,
    /// Number of rows to generate
    #[arg(long)]
    count: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<covgeom::Error>() {
            return match core {
                covgeom::Error::SingularMetric { .. } => 3,
                _ => 4,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 4;
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Cfim(args) => cmd_cfim(args),
        Command::Project(args) => cmd_project(args),
        Command::Klcheck(args) => cmd_klcheck(args),
        Command::Crlb(args) => cmd_crlb(args),
        Command::Mhtest(args) => cmd_mhtest(args),
        Command::Generate(args) => cmd_generate(args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

impl CommonArgs {
    fn model(&self) -> anyhow::Result<Option<DensityModel>> {
        match &self.model {
            Some(text) => Ok(Some(ModelSpecJson::parse(text)?.build()?)),
            None => Ok(None),
        }
    }

    fn require_model(&self) -> anyhow::Result<DensityModel> {
        self.model()?
            .ok_or_else(|| config_error("this command needs --model"))
    }

    fn bandwidth_vector(&self, dim: usize) -> anyhow::Result<Option<DVector<f64>>> {
        let Some(text) = &self.bandwidth else {
            return Ok(None);
        };
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| config_error(format!("cannot parse --bandwidth {text:?}")))?;
        let bw = match parts.len() {
            1 => DVector::from_element(dim, parts[0]),
            k if k == dim => DVector::from_column_slice(&parts),
            k => {
                return Err(config_error(format!(
                    "--bandwidth has {k} entries but the data has {dim} coordinates"
                )))
            }
        };
        Ok(Some(bw))
    }

    /// Integration spec for a model: `grid:<pts>` over the default box,
    /// `mc:<draws>` with the run seed, or the default grid.
    fn integration_spec(&self, model: &DensityModel) -> anyhow::Result<IntegrationSpec> {
        match &self.integration {
            None => Ok(IntegrationSpec::default_grid(model)),
            Some(text) => {
                if let Some(pts) = text.strip_prefix("grid:") {
                    let pts: usize = pts
                        .parse()
                        .map_err(|_| config_error(format!("bad --integration {text:?}")))?;
                    Ok(IntegrationSpec::grid(pts, model.default_box())?)
                } else if let Some(draws) = text.strip_prefix("mc:") {
                    let draws: usize = draws
                        .parse()
                        .map_err(|_| config_error(format!("bad --integration {text:?}")))?;
                    Ok(IntegrationSpec::monte_carlo(draws, self.seed)?)
                } else {
                    Err(config_error(format!(
                        "--integration must be grid:<points> or mc:<draws>, got {text:?}"
                    )))
                }
            }
        }
    }

    fn emit<C: Serialize>(&self, config: &C, report: serde_json::Value) -> anyhow::Result<()> {
        let mut envelope = json!({
            "config": config,
            "report": report,
        });
        if !self.no_timestamp {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            envelope["timestamp"] = json!(ts);
        }
        let text = serde_json::to_string_pretty(&envelope)?;
        match &self.output {
            Some(path) => std::fs::write(path, text + "\n")
                .with_context(|| format!("cannot write {}", path.display()))?,
            None => println!("{text}"),
        }
        Ok(())
    }
}

fn score_method(
    common: &CommonArgs,
    samples: &SampleMatrix,
    default: ScoresArg,
) -> anyhow::Result<ScoreMethod> {
    match common.scores.unwrap_or(default) {
        ScoresArg::Analytic => Ok(ScoreMethod::Analytic(common.require_model()?)),
        ScoresArg::Kde => Ok(ScoreMethod::Kde {
            bandwidth: common.bandwidth_vector(samples.dim())?,
        }),
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_cfim(args: CfimArgs) -> anyhow::Result<()> {
    let common = &args.common;
    let report = if let Some(path) = &common.input {
        let samples = io::read_samples(path)?;
        let field = match common.scores.unwrap_or(ScoresArg::Kde) {
            ScoresArg::Analytic => ScoreField::Analytic(common.require_model()?),
            ScoresArg::Kde => {
                let bw = match common.bandwidth_vector(samples.dim())? {
                    Some(bw) => bw,
                    None => covgeom::density::silverman_bandwidth(&samples)?,
                };
                ScoreField::Kde(Kde::new(&samples, bw)?)
            }
        };
        empirical_cfim(&field, &samples)?.report()
    } else {
        let model = common.require_model()?;
        if common.scores == Some(ScoresArg::Kde) {
            return Err(config_error(
                "kde scores need --input data; analytic models integrate in closed form",
            ));
        }
        let spec = common.integration_spec(&model)?;
        quadrature_cfim(&model, &spec)?.report()
    };
    common.emit(&args, serde_json::to_value(&report)?)
}

fn cmd_project(args: ProjectArgs) -> anyhow::Result<()> {
    let common = &args.common;
    let model = common.require_model()?;
    let poly = Polynomial::parse(&args.tangent)?;
    if poly.is_zero() {
        return Err(anyhow::Error::new(covgeom::Error::ZeroTangent));
    }
    if poly.dim() > model.dim() {
        return Err(config_error(format!(
            "tangent uses x{} but the model has {} coordinates",
            poly.dim(),
            model.dim()
        )));
    }
    let spec = common.integration_spec(&model)?;
    let tangent = TangentVector::from_polynomial(&model, &poly, &spec)?;
    let g = quadrature_cfim(&model, &spec)?;
    let scores = ScoreField::for_model(&model);
    let v = cross_information_vector(&model, &tangent, &scores, &spec)?;
    let projection = project_tangent(&tangent, &g, &v, &spec)?;
    common.emit(&args, serde_json::to_value(&projection)?)
}

fn cmd_klcheck(args: KlcheckArgs) -> anyhow::Result<()> {
    let common = &args.common;
    let model = common.require_model()?;
    let spec = common.integration_spec(&model)?;
    let mut axes = Vec::new();
    for axis in 0..model.dim() {
        let dt = args.dt.unwrap_or_else(|| default_step(&model, axis));
        let curve = PerturbationCurve::translation(&model, axis)?;
        let forward = kl_derivatives(&model, &curve, KlDirection::Forward, dt, &spec)?;
        let reverse = kl_derivatives(&model, &curve, KlDirection::Reverse, dt, &spec)?;
        let asymmetry = asymmetry_check(&model, &curve, dt, &spec)?;
        axes.push(json!({
            "axis": axis,
            "dt": dt,
            "forward": forward,
            "reverse": reverse,
            "asymmetry": asymmetry,
        }));
    }
    let h_kl = gentropy_via_kl(&model, args.dt, &spec)?;
    let h_trace = quadrature_cfim(&model, &spec)?.g_entropy();
    let report = json!({
        "axes": axes,
        "gentropy_via_kl": h_kl,
        "g_entropy_quadrature": h_trace,
    });
    common.emit(&args, report)
}

fn parse_estimator(text: &str) -> anyhow::Result<EstimatorSpec> {
    match text {
        "mean" => Ok(EstimatorSpec::SampleMean),
        "median" => Ok(EstimatorSpec::CoordinatewiseMedian),
        other => {
            if let Some(frac) = other.strip_prefix("trimmed:") {
                let frac: f64 = frac
                    .parse()
                    .map_err(|_| config_error(format!("bad trim fraction in {text:?}")))?;
                Ok(EstimatorSpec::trimmed(frac)?)
            } else {
                Err(config_error(format!(
                    "--estimator must be mean, median, or trimmed:<fraction>, got {text:?}"
                )))
            }
        }
    }
}

fn cmd_crlb(args: CrlbArgs) -> anyhow::Result<()> {
    let common = &args.common;
    let model = common.require_model()?;
    let estimator = parse_estimator(&args.estimator)?;
    let samples = match &common.input {
        Some(path) => io::read_samples(path)?,
        None => model.sample(100_000, common.seed)?,
    };
    let method = score_method(common, &samples, ScoresArg::Analytic)?;
    let report = efficiency_report(
        &estimator,
        &model,
        &samples,
        &method,
        args.n_per_rep,
        args.n_reps,
        common.seed.wrapping_add(1),
    )?;
    let tr = |m: &[Vec<f64>]| -> f64 { m.iter().enumerate().map(|(i, r)| r[i]).sum() };
    eprintln!(
        "{:<24} {:>12} {:>12} {:>8}",
        "estimator", "Tr(CRLB)", "Tr(Var)", "Eff"
    );
    eprintln!(
        "{:<24} {:>12.6} {:>12.6} {:>8.4}",
        report.estimator,
        tr(&report.crlb),
        tr(&report.est_cov),
        report.eff
    );
    common.emit(&args, serde_json::to_value(&report)?)
}

fn cmd_mhtest(args: MhtestArgs) -> anyhow::Result<()> {
    let common = &args.common;
    let path = common
        .input
        .as_ref()
        .ok_or_else(|| config_error("mhtest needs --input data"))?;
    let samples = io::read_samples(path)?;
    let method = score_method(common, &samples, ScoresArg::Kde)?;
    let report = match args.window {
        Some(window) => mh_test_local(&samples, &method, args.gap_threshold, window)?,
        None => mh_test(&samples, &method, args.gap_threshold)?,
    };
    common.emit(&args, serde_json::to_value(&report)?)
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let common = &args.common;
    let manifold = ManifoldSpecJson::parse(&args.manifold)?.build()?;
    let samples = covgeom::generate_manifold_data(&manifold, args.count, common.seed)?;
    match &common.output {
        Some(path) => {
            let mut file = std::fs::File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            io::write_samples(&mut file, &samples)?;
        }
        None => {
            let stdout = std::io::stdout();
            io::write_samples(&mut stdout.lock(), &samples)?;
        }
    }
    Ok(())
}
