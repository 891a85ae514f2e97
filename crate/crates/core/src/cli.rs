//! Command-line front end.
//!
//! Every command takes its randomness from `--seed`, writes machine-readable
//! output, and embeds the effective configuration in each file it writes.
//! Exit status: 0 on success, 1 for invalid input, 2 for runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{invalid, Result};
use crate::exact_real::{dg_variance, real_chain_variance, real_gff_variance, VarianceEstimate, VarianceMethod};
use crate::graph_core::{new_chain_graph, ChainSpec, ConductanceGraph, VertexId};
use crate::iv_chain::{enumerate, exact_iv_variance, mcmc_variance_replicas, EnumerationOptions, McmcParams, Potential};
use crate::qsos::{
    annealed_estimate, derivative_identity_check, qsos_exact, qsos_mcmc, sample_mu_q, AnnealedOptions, InnerMethod,
    MixtureKind, QChainParams,
};
use crate::rng::{mix, stream, Domain};
use crate::scaling::{
    backend_estimate, parse_n_list, rows_to_csv, run_sweep, sandwich_report, AnnealedInner, Backend, FitRow,
    SweepParams,
};
use crate::surgery_pipelines::{sandwich, Pipeline};

#[derive(Parser, Debug)]
#[command(name = "chain-surgeon", version, about = "Long-range discrete Gaussian and q-SOS chains")]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, global = true, env = "CHAIN_SURGEON_JOBS")]
    pub jobs: Option<usize>,
    /// Leave the timestamp line out of CSV and JSON output.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// JSON output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// CSV output file (rows go to stdout otherwise).
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct SpecArgs {
    /// Half-lengths: `8,16,32` or `min:max:steps` (geometric).
    #[arg(long = "N", value_name = "LIST")]
    pub n: String,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long)]
    pub alpha: f64,
}

#[derive(Args, Debug, Clone)]
pub struct McmcArgs {
    #[arg(long, default_value_t = 2_000)]
    pub burn_in: u64,
    #[arg(long, default_value_t = 20_000)]
    pub sweeps: u64,
    #[arg(long, default_value_t = 1)]
    pub thinning: u64,
    #[arg(long, default_value_t = 32)]
    pub batches: u64,
    #[arg(long, default_value_t = 2.0)]
    pub stiff_threshold: f64,
    #[arg(long)]
    pub random_scan: bool,
}

impl McmcArgs {
    fn params(&self, seed: u64) -> McmcParams {
        McmcParams {
            burn_in_sweeps: self.burn_in,
            measure_sweeps: self.sweeps,
            thinning: self.thinning,
            seed,
            batch_count: self.batches,
            replica: 0,
            random_scan: self.random_scan,
            stiff_threshold: self.stiff_threshold,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact variance at the origin (dense Laplacian, or enumeration of integer heights).
    #[command(group(ArgGroup::new("method").args(["laplacian", "enumeration"])))]
    ChainExact {
        #[command(flatten)]
        spec: SpecArgs,
        /// Real-valued field via the reduced Laplacian (default).
        #[arg(long)]
        laplacian: bool,
        /// Integer-valued field by enumeration (tiny N only).
        #[arg(long)]
        enumeration: bool,
        /// Starting height cut-off for enumeration.
        #[arg(long, default_value_t = 3)]
        m: i64,
    },
    /// Heat-bath Monte Carlo of the integer-valued chain.
    ChainMcmc {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[arg(long, default_value_t = 1)]
        replicas: u64,
    },
    /// Runs a surgery pipeline and prints its bound certificate.
    Surgery {
        #[arg(long)]
        pipeline: String,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        alpha: f64,
        /// Also write the transcript as JSON here.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Also write the reduced graph in text format here.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// q-SOS chain: exact, direct Metropolis or annealed estimates.
    #[command(group(ArgGroup::new("estimator").args(["exact", "mcmc", "annealed_lower", "annealed_upper"])))]
    Qsos {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        q: f64,
        /// Enumeration (N <= 3).
        #[arg(long)]
        exact: bool,
        /// Direct Metropolis (default).
        #[arg(long)]
        mcmc: bool,
        #[arg(long)]
        annealed_lower: bool,
        #[arg(long)]
        annealed_upper: bool,
        /// Conductance draws for the annealed estimators.
        #[arg(long, default_value_t = 64)]
        draws: u64,
        /// Per-draw method for the annealed estimators: mcmc, real or enumeration.
        #[arg(long, default_value = "mcmc")]
        inner: String,
        #[command(flatten)]
        mcmc_args: McmcArgs,
    },
    /// Sweeps N with one backend and fits the growth law.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        q: Option<f64>,
        /// real-exact, iv-mcmc, qsos-annealed-lower or qsos-annealed-upper.
        #[arg(long)]
        backend: String,
        #[arg(long, default_value_t = 64)]
        draws: u64,
        /// Per-draw method for annealed backends: mcmc or real.
        #[arg(long, default_value = "mcmc")]
        inner: String,
        #[command(flatten)]
        mcmc: McmcArgs,
    },
    /// Lower pipeline, exact value and upper pipeline over a grid of N.
    Sandwich {
        #[arg(long = "N", value_name = "LIST")]
        n: String,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        alpha: f64,
    },
    /// Quick invariant suite; nonzero exit on any failure.
    Selftest,
}

/// Effective configuration echoed into every output.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub n: Vec<usize>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub q: Option<f64>,
    pub backend: Option<String>,
    pub pipeline: Option<String>,
    pub seed: u64,
    pub mcmc: Option<McmcParams>,
    pub draws: Option<u64>,
    pub inner: Option<String>,
    pub replicas: Option<u64>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub jobs: usize,
}

impl RunConfig {
    fn bare(cli: &Cli, command: &str, jobs: usize) -> Self {
        Self {
            command: command.into(),
            n: Vec::new(),
            beta: None,
            alpha: None,
            q: None,
            backend: None,
            pipeline: None,
            seed: cli.seed,
            mcmc: None,
            draws: None,
            inner: None,
            replicas: None,
            out: cli.out.clone(),
            csv: cli.csv.clone(),
            jobs,
        }
    }

    fn json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if jobs == 0 {
        eprintln!("error: invalid parameter: --jobs must be at least 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli, jobs)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn timestamp(cli: &Cli) -> Option<String> {
    (!cli.no_timestamp).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

fn write_or_print(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

/// JSON document with the config and optional timestamp in front.
fn wrap_json(cli: &Cli, config: &RunConfig, key: &str, value: Value) -> Result<String> {
    let mut doc = serde_json::Map::new();
    doc.insert("config".into(), serde_json::to_value(config)?);
    if let Some(t) = timestamp(cli) {
        doc.insert("generated".into(), Value::String(t));
    }
    doc.insert(key.into(), value);
    Ok(serde_json::to_string_pretty(&Value::Object(doc))? + "\n")
}

/// Rows to CSV (stdout or `--csv`) and, when `--out` is set, JSON.
fn emit_rows(cli: &Cli, config: &RunConfig, rows: &[FitRow], extra: Option<Value>) -> Result<()> {
    let csv = rows_to_csv(rows, &config.json(), timestamp(cli).as_deref());
    write_or_print(cli.csv.as_deref(), &csv)?;
    if let Some(out) = &cli.out {
        let mut v = json!({ "rows": rows });
        if let Some(x) = extra {
            v["details"] = x;
        }
        std::fs::write(out, wrap_json(cli, config, "result", v)?)?;
    }
    Ok(())
}

fn specs(spec: &SpecArgs, q: Option<f64>) -> Result<Vec<ChainSpec>> {
    parse_n_list(&spec.n)?
        .into_iter()
        .map(|n| match q {
            Some(q) => ChainSpec::with_q(n, spec.beta, spec.alpha, q),
            None => ChainSpec::new(n, spec.beta, spec.alpha),
        })
        .collect()
}

fn spec_config(cli: &Cli, command: &str, jobs: usize, spec: &SpecArgs, q: Option<f64>) -> Result<RunConfig> {
    let mut c = RunConfig::bare(cli, command, jobs);
    c.n = parse_n_list(&spec.n)?;
    c.beta = Some(spec.beta);
    c.alpha = Some(spec.alpha);
    c.q = q;
    Ok(c)
}

fn dispatch(cli: &Cli, jobs: usize) -> Result<i32> {
    match &cli.command {
        Command::ChainExact { spec, enumeration, m, .. } => {
            let mut config = spec_config(cli, "chain-exact", jobs, spec, None)?;
            config.backend = Some(if *enumeration { "enumeration" } else { "laplacian" }.into());
            let rows = specs(spec, None)?
                .iter()
                .map(|s| {
                    let e = if *enumeration {
                        exact_iv_variance(&new_chain_graph(s)?, VertexId(0), *m)?
                    } else {
                        VarianceEstimate::exact(real_chain_variance(s)?, VarianceMethod::LaplacianExact)
                    };
                    Ok(FitRow::from_estimate(s.n, &e, cli.seed))
                })
                .collect::<Result<Vec<_>>>()?;
            emit_rows(cli, &config, &rows, None)?;
            Ok(0)
        }
        Command::ChainMcmc { spec, mcmc, replicas } => {
            let mut config = spec_config(cli, "chain-mcmc", jobs, spec, None)?;
            let params = mcmc.params(cli.seed);
            config.mcmc = Some(params);
            config.replicas = Some(*replicas);
            let rows = specs(spec, None)?
                .iter()
                .map(|s| {
                    let seed = mix(&[cli.seed, s.n as u64]);
                    let e = mcmc_variance_replicas(&new_chain_graph(s)?, VertexId(0), &params.with_seed(seed), *replicas)?;
                    Ok(FitRow::from_estimate(s.n, &e, seed))
                })
                .collect::<Result<Vec<_>>>()?;
            emit_rows(cli, &config, &rows, None)?;
            Ok(0)
        }
        Command::Surgery { pipeline, n, beta, alpha, transcript, graph } => {
            let mut config = RunConfig::bare(cli, "surgery", jobs);
            config.n = vec![*n];
            config.beta = Some(*beta);
            config.alpha = Some(*alpha);
            config.pipeline = Some(pipeline.clone());
            let p: Pipeline = pipeline.parse()?;
            let r = p.run(&ChainSpec::new(*n, *beta, *alpha)?)?;
            if let Some(path) = transcript {
                std::fs::write(path, r.transcript.to_json()?)?;
            }
            if let Some(path) = graph {
                std::fs::write(path, r.reduced_graph.to_text())?;
            }
            let cert: Value = serde_json::from_str(&r.certificate_json()?)?;
            write_or_print(cli.out.as_deref(), &wrap_json(cli, &config, "certificate", cert)?)?;
            Ok(0)
        }
        Command::Qsos { spec, q, exact, annealed_lower, annealed_upper, draws, inner, mcmc_args, .. } => {
            let mut config = spec_config(cli, "qsos", jobs, spec, Some(*q))?;
            let params = mcmc_args.params(cli.seed);
            let estimator = if *exact {
                "exact"
            } else if *annealed_lower {
                "annealed-lower"
            } else if *annealed_upper {
                "annealed-upper"
            } else {
                "mcmc"
            };
            config.backend = Some(estimator.into());
            if estimator != "exact" {
                config.mcmc = Some(params);
            }
            if estimator.starts_with("annealed") {
                config.draws = Some(*draws);
                config.inner = Some(inner.clone());
            }
            let inner_method = match inner.as_str() {
                "mcmc" => InnerMethod::Mcmc(params),
                "real" => InnerMethod::Real,
                "enumeration" => InnerMethod::Enumeration,
                other => return Err(invalid(format!("unknown inner method '{other}' (mcmc, real, enumeration)"))),
            };
            let mut rows = Vec::new();
            let mut details = Vec::new();
            for s in specs(spec, Some(*q))? {
                let seed = mix(&[cli.seed, s.n as u64]);
                let e = match estimator {
                    "exact" => qsos_exact(&s, 3)?,
                    "mcmc" => {
                        let run = qsos_mcmc(&s, &params.with_seed(seed))?;
                        details.push(json!({
                            "N": s.n,
                            "acceptance_step": run.acceptance_step,
                            "acceptance_gaussian": run.acceptance_gaussian,
                            "acceptance_shift": run.acceptance_shift,
                        }));
                        run.estimate
                    }
                    _ => {
                        let kind = if *annealed_lower { MixtureKind::MuQ } else { MixtureKind::TildeMuQ };
                        let opts = AnnealedOptions { draws: *draws, seed, inner: inner_method };
                        let r = annealed_estimate(&QChainParams::new(s)?, kind, &opts)?;
                        details.push(json!({ "N": s.n, "ratio": r.ratio }));
                        r.estimate
                    }
                };
                rows.push(FitRow::from_estimate(s.n, &e, seed));
            }
            let extra = (!details.is_empty()).then_some(Value::Array(details));
            emit_rows(cli, &config, &rows, extra)?;
            Ok(0)
        }
        Command::Sweep { spec, q, backend, draws, inner, mcmc } => {
            let mut config = spec_config(cli, "sweep", jobs, spec, *q)?;
            let b: Backend = backend.parse()?;
            let inner = match inner.as_str() {
                "mcmc" => AnnealedInner::Mcmc,
                "real" => AnnealedInner::Real,
                other => return Err(invalid(format!("unknown inner method '{other}' (mcmc, real)"))),
            };
            let params = SweepParams { seed: cli.seed, mcmc: mcmc.params(cli.seed), draws: *draws, inner };
            config.backend = Some(b.name().into());
            config.mcmc = Some(params.mcmc);
            config.draws = Some(*draws);
            config.inner = Some(serde_json::to_value(inner)?.as_str().unwrap_or_default().into());
            let fit = run_sweep(&specs(spec, *q)?, b, &params)?;
            let csv = rows_to_csv(&fit.rows, &config.json(), timestamp(cli).as_deref());
            if let Some(path) = &cli.csv {
                std::fs::write(path, &csv)?;
            }
            let doc = wrap_json(cli, &config, "fit", serde_json::to_value(&fit)?)?;
            write_or_print(cli.out.as_deref(), &doc)?;
            Ok(0)
        }
        Command::Sandwich { n, beta, alpha } => {
            let mut config = RunConfig::bare(cli, "sandwich", jobs);
            config.n = parse_n_list(n)?;
            config.beta = Some(*beta);
            config.alpha = Some(*alpha);
            let report = sandwich_report(*beta, *alpha, &config.n)?;
            print!("{}", report.table());
            if let Some(out) = &cli.out {
                std::fs::write(out, wrap_json(cli, &config, "report", serde_json::to_value(&report)?)?)?;
            }
            Ok(if report.all_hold { 0 } else { 2 })
        }
        Command::Selftest => {
            let results = selftest(cli.seed);
            let mut failed = 0;
            for (name, ok, note) in &results {
                println!("{} {name}: {note}", if *ok { "PASS" } else { "FAIL" });
                failed += usize::from(!ok);
            }
            println!("{} checks, {failed} failed", results.len());
            Ok(if failed == 0 { 0 } else { 2 })
        }
    }
}

// ---- selftest ------------------------------------------------------------------------

type Check = (String, bool, String);

fn check(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((ok, note)) => (name.into(), ok, note),
        Err(e) => (name.into(), false, format!("error: {e}")),
    }
}

/// Small version of the invariant suite, fast enough for every build.
pub fn selftest(seed: u64) -> Vec<Check> {
    vec![
        check("discrete Gaussian bands", || {
            let mut worst = 0usize;
            for k in 0..40 {
                let lambda = 1e-3 * (3e4f64).powf(k as f64 / 39.0);
                let v = dg_variance(lambda)?;
                let ok = v <= 0.5 / lambda
                    && (lambda > 1.0 || (0.22..=0.5).contains(&(lambda * v)))
                    && (lambda < 1.0 || (1.0..=4.0).contains(&(lambda.exp() * v)));
                worst += usize::from(!ok);
            }
            Ok((worst == 0, format!("{worst} grid points outside the bands")))
        }),
        check("surgery monotonicity, real-valued", || {
            let mut rng = stream(seed, Domain::SelfTest, 0, 1);
            let mut bad = 0;
            for _ in 0..40 {
                let g = ConductanceGraph::random_connected(6, 0.4, (0.2, 5.0), &mut rng)?;
                bad += monotonicity_violations(&g, &mut rng, |g, v| Ok(real_gff_variance(g, v)?.value))?;
            }
            Ok((bad == 0, format!("{bad} violations over 40 graphs")))
        }),
        check("surgery monotonicity, integer-valued", || {
            let mut rng = stream(seed, Domain::SelfTest, 0, 2);
            let mut bad = 0;
            for _ in 0..8 {
                let g = ConductanceGraph::random_connected(4, 0.5, (0.3, 3.0), &mut rng)?;
                bad += monotonicity_violations(&g, &mut rng, |g, v| {
                    let opts = EnumerationOptions { max_m: 30, ..Default::default() };
                    enumerate(g, Potential::Quadratic, &opts)?.variance(v)
                })?;
            }
            Ok((bad == 0, format!("{bad} violations over 8 graphs")))
        }),
        check("pipeline transcripts replay", || {
            let mut bad = Vec::new();
            for p in Pipeline::ALL {
                let (n, alpha) = match p {
                    Pipeline::LowerGt3 | Pipeline::UpperGt3 => (6, 4.0),
                    Pipeline::Lower23 | Pipeline::UpperBaumler => (9, 2.5),
                    Pipeline::Lower3 | Pipeline::Upper3 => (16, 3.0),
                    Pipeline::LowerEmbed2d => (3, 2.0),
                };
                let s = ChainSpec::new(n, 1.0, alpha)?;
                let r = p.run(&s)?;
                let replayed = r.transcript.replay(&new_chain_graph(&s)?)?;
                let dir = p.direction().step_direction();
                if !replayed.approx_eq(&r.reduced_graph, 1e-12) || !r.transcript.is_pure(dir) {
                    bad.push(p.name());
                }
            }
            Ok((bad.is_empty(), if bad.is_empty() { "all pipelines".into() } else { bad.join(", ") }))
        }),
        check("sandwich at N=16", || {
            let mut bad = Vec::new();
            for alpha in [2.5, 3.0, 4.0] {
                if !sandwich(&ChainSpec::new(16, 1.0, alpha)?)?.holds() {
                    bad.push(alpha.to_string());
                }
            }
            Ok((bad.is_empty(), if bad.is_empty() { "alpha 2.5, 3, 4".into() } else { bad.join(", ") }))
        }),
        check("mixture identity", || {
            let mut rng = stream(seed, Domain::SelfTest, 0, 3);
            let xs: Vec<f64> = (0..100_000).map(|_| sample_mu_q(1.0, &mut rng)).collect::<Result<_>>()?;
            let vals: Vec<f64> = xs.iter().map(|l| (-l).exp()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
            let z = (m - (-1f64).exp()) / (sd / (vals.len() as f64).sqrt());
            Ok((z.abs() < 4.0, format!("z = {z:.2}")))
        }),
        check("heat bath vs enumeration", || {
            let mut rng = stream(seed, Domain::SelfTest, 0, 4);
            let g = ConductanceGraph::random_connected(4, 0.6, (0.3, 2.0), &mut rng)?;
            let v = VertexId(1);
            let exact = exact_iv_variance(&g, v, 3)?.value;
            let params = McmcParams { burn_in_sweeps: 1_000, measure_sweeps: 50_000, seed, ..Default::default() };
            let e = crate::iv_chain::mcmc_variance(&g, v, &params)?;
            let z = (e.value - exact) / e.std_error;
            Ok((z.abs() < 4.0, format!("z = {z:.2}")))
        }),
        check("edge derivative identity", || {
            let mut rng = stream(seed, Domain::SelfTest, 0, 5);
            let mut worst = 0.0f64;
            for _ in 0..3 {
                let g = ConductanceGraph::random_connected(3, 1.0, (0.3, 3.0), &mut rng)?;
                let (u, v, _) = g.edges().next().ok_or_else(|| invalid("empty graph"))?;
                let r = derivative_identity_check(&g, u, v, 1.0)?;
                worst = worst.max(r.relative_error);
            }
            Ok((worst < 1e-4, format!("worst relative error {worst:.2e}")))
        }),
        check("annealed chain at q = 2", || {
            let s = ChainSpec::with_q(8, 1.0, 2.5, 2.0)?;
            let params = SweepParams { seed, draws: 2, inner: AnnealedInner::Real, ..Default::default() };
            let (e, _) = backend_estimate(&s, Backend::QsosAnnealedUpper, &params)?;
            let want = real_chain_variance(&ChainSpec::new(8, 1.0, 2.5)?)?;
            Ok(((e.value - want).abs() < 1e-10 * want, format!("{} vs {want}", e.value)))
        }),
    ]
}

/// Applies each of the four surgery primitives once at random and counts
/// moves of `Var[phi(v)]` against the primitive's direction.
fn monotonicity_violations<R: rand::Rng + ?Sized>(
    g: &ConductanceGraph,
    rng: &mut R,
    var: impl Fn(&ConductanceGraph, VertexId) -> Result<f64>,
) -> Result<usize> {
    let free: Vec<VertexId> = g.free_vertices().collect();
    let v = free[rng.random_range(0..free.len())];
    let base = var(g, v)?;
    let edges: Vec<(VertexId, VertexId, f64)> = g.edges().collect();
    let (a, b, _) = edges[rng.random_range(0..edges.len())];
    let tol = 1e-9 * base.abs().max(1.0);
    let mut bad = 0;
    // Deleting can disconnect v, which makes the variance infinite: still up.
    let deleted = g.delete_edge(a, b)?;
    let after = if deleted.root_component().contains(&v) {
        var(&root_component_graph(&deleted)?, v)?
    } else {
        f64::INFINITY
    };
    bad += usize::from(after < base - tol);
    let all: Vec<VertexId> = g.vertices().collect();
    let y = all[rng.random_range(0..all.len())];
    let z = all[rng.random_range(0..all.len())];
    if y != z {
        let merged = g.identify_vertices(y, z)?;
        let v2 = merged.resolve(v).unwrap();
        if v2 != merged.root() {
            bad += usize::from(var(&merged, v2)? > base + tol);
        }
    }
    let theta = 1.0 + 4.0 * rng.random::<f64>();
    let (split, _) = g.split_edge_theta(a, b, theta)?;
    bad += usize::from(var(&split, v)? > base + tol);
    let (uniform, _) = g.split_edge_uniform(a, b, rng.random_range(1..3))?;
    bad += usize::from(var(&uniform, v)? > base + tol);
    Ok(bad)
}

/// Copy of `g` without the vertices cut off from the root; they do not
/// affect any variance inside the root component.
fn root_component_graph(g: &ConductanceGraph) -> Result<ConductanceGraph> {
    let keep = g.root_component();
    let mut out = ConductanceGraph::new(g.root());
    for (u, v, c) in g.edges() {
        if keep.contains(&u) && keep.contains(&v) {
            out.add_edge(u, v, c)?;
        }
    }
    Ok(out)
}
