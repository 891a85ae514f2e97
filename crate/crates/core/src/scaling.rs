//! Sweeps over the chain length, growth-exponent fits and the sandwich
//! report.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact_real::{real_chain_variance, VarianceEstimate, VarianceMethod};
use crate::graph_core::{new_chain_graph, ChainSpec, VertexId};
use crate::iv_chain::{mcmc_variance, McmcParams};
use crate::qsos::{annealed_estimate, AnnealedOptions, InnerMethod, MixtureKind, QChainParams};
use crate::rng::mix;
use crate::surgery_pipelines::{sandwich, Pipeline, SandwichRow};

// ---- fitting ---------------------------------------------------------------------

/// Growth law fitted to `Var(N)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// `a N^p`, fitted in log-log coordinates.
    Power,
    /// `a ln N`.
    Log,
    /// `a N / ln N`, tested through the constancy of `Var ln N / N`.
    Loglin,
    /// `a`.
    Const,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::Power, Model::Log, Model::Loglin, Model::Const];

    pub fn name(self) -> &'static str {
        match self {
            Model::Power => "power",
            Model::Log => "log",
            Model::Loglin => "loglin",
            Model::Const => "const",
        }
    }

    /// Value of the model at `n`.
    pub fn predict(self, params: &FitParams, n: f64) -> f64 {
        match self {
            Model::Power => params.a * n.powf(params.p.unwrap_or(0.0)),
            Model::Log => params.a * n.ln(),
            Model::Loglin => params.a * n / n.ln(),
            Model::Const => params.a,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown model '{s}' (power, log, loglin, const)")))
    }
}

/// One sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub n: usize,
    pub variance: f64,
    pub std_error: f64,
    pub method: VarianceMethod,
    pub seed: u64,
}

impl FitRow {
    pub fn from_estimate(n: usize, e: &VarianceEstimate, seed: u64) -> Self {
        Self { n, variance: e.value, std_error: e.std_error, method: e.method, seed }
    }
}

/// Fitted parameters. `residual_rms` is measured on a relative scale in
/// every model, and `max_rel_deviation` is the worst `|Var / fit - 1|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub a: f64,
    pub p: Option<f64>,
    /// Standard error of `p` from the weighted design (power model only).
    pub p_std_error: Option<f64>,
    pub residual_rms: f64,
    pub max_rel_deviation: f64,
}

/// Weighted least squares of `y` on `x` (with intercept when `intercept`).
/// Returns `(intercept, slope, slope standard error)`.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64], intercept: bool) -> Result<(f64, f64, f64)> {
    let sw: f64 = w.iter().sum();
    if intercept {
        let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
        let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
        let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
        if !(sxx > 1e-300) {
            return Err(Error::Fit("degenerate design: all N equal".into()));
        }
        let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let b = my - slope * mx;
        // Residual-scaled error, so it stays meaningful without weights.
        let k = x.len() as f64;
        let chi2: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (y - b - slope * x).powi(2)).sum();
        let se = if k > 2.0 { (chi2 / (k - 2.0) / sxx).sqrt() } else { f64::NAN };
        Ok((b, slope, se))
    } else {
        let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * x * x).sum();
        if !(sxx > 1e-300) {
            return Err(Error::Fit("degenerate design".into()));
        }
        let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * x * y).sum();
        Ok((0.0, sxy / sxx, f64::NAN))
    }
}

/// Least squares in the model's linearising coordinates, weighted by
/// `1 / se^2` (propagated to those coordinates) when every row carries a
/// positive standard error.
pub fn fit_exponent(rows: &[FitRow], model: Model) -> Result<FitParams> {
    if rows.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 rows, got {}", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| !(r.variance > 0.0 && r.variance.is_finite())) {
        return Err(Error::Fit(format!("variance at N={} is not positive and finite", r.n)));
    }
    if let Some(r) = rows.iter().find(|r| r.n < 2 && model != Model::Const && model != Model::Power) {
        return Err(Error::Fit(format!("N={} has ln N = 0", r.n)));
    }
    let weighted = rows.iter().all(|r| r.std_error > 0.0 && r.std_error.is_finite());
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    // Relative error of each row; transformed coordinates below are all
    // either logs or multiples of Var, so this is the delta-method scale.
    let rel: Vec<f64> = rows.iter().map(|r| r.std_error / r.variance).collect();
    let (a, p, p_se) = match model {
        Model::Power => {
            let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
            let y: Vec<f64> = vs.iter().map(|v| v.ln()).collect();
            let w: Vec<f64> = if weighted { rel.iter().map(|s| 1.0 / (s * s)).collect() } else { vec![1.0; rows.len()] };
            let (b, slope, se) = weighted_line(&x, &y, &w, true)?;
            (b.exp(), Some(slope), Some(se))
        }
        Model::Log => {
            let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
            let w: Vec<f64> = if weighted {
                rows.iter().map(|r| 1.0 / (r.std_error * r.std_error)).collect()
            } else {
                vec![1.0; rows.len()]
            };
            let (_, a, _) = weighted_line(&x, &vs, &w, false)?;
            (a, None, None)
        }
        Model::Loglin | Model::Const => {
            let t: Vec<f64> = if model == Model::Loglin {
                ns.iter().zip(&vs).map(|(n, v)| v * n.ln() / n).collect()
            } else {
                vs.clone()
            };
            let w: Vec<f64> = if weighted {
                t.iter().zip(&rel).map(|(t, s)| 1.0 / (t * s).powi(2)).collect()
            } else {
                vec![1.0; rows.len()]
            };
            let sw: f64 = w.iter().sum();
            (t.iter().zip(&w).map(|(t, w)| t * w).sum::<f64>() / sw, None, None)
        }
    };
    let mut params = FitParams { a, p, p_std_error: p_se, residual_rms: 0.0, max_rel_deviation: 0.0 };
    let devs: Vec<f64> = ns.iter().zip(&vs).map(|(&n, &v)| v / model.predict(&params, n) - 1.0).collect();
    params.residual_rms = match model {
        Model::Power => {
            let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
            let r2: f64 = x
                .iter()
                .zip(&vs)
                .map(|(x, v)| (v.ln() - a.ln() - p.unwrap() * x).powi(2))
                .sum();
            (r2 / rows.len() as f64).sqrt()
        }
        _ => (devs.iter().map(|d| d * d).sum::<f64>() / rows.len() as f64).sqrt(),
    };
    params.max_rel_deviation = devs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if !params.residual_rms.is_finite() || !params.a.is_finite() {
        return Err(Error::Fit("non-finite fit".into()));
    }
    Ok(params)
}

// ---- regimes --------------------------------------------------------------------

/// Growth regime of `Var[phi(0)]` in the chain length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "regime")]
pub enum Regime {
    /// `alpha < 2`.
    Bounded,
    /// `alpha = 2`.
    Logarithmic,
    /// `2 < alpha < 3`: `N^(alpha - 2)`.
    Power { exponent: f64 },
    /// `alpha = 3`: `N / ln N`.
    NearlyLinear,
    /// `alpha > 3`.
    Linear,
    /// q-SOS with `q < 2`: growth between two powers of `N`.
    Band { lower: f64, upper: f64 },
}

impl Regime {
    /// Regime for range exponent `alpha` and SOS exponent `q` (2 for the
    /// Gaussian chain). The boundaries `alpha = 2` and `alpha = 3` are
    /// matched exactly.
    pub fn select(alpha: f64, q: f64) -> Self {
        if q < 2.0 {
            return Regime::Band { lower: qsos_lower_exponent(alpha, q), upper: qsos_upper_exponent(alpha, q) };
        }
        if alpha < 2.0 {
            Regime::Bounded
        } else if alpha == 2.0 {
            Regime::Logarithmic
        } else if alpha < 3.0 {
            Regime::Power { exponent: alpha - 2.0 }
        } else if alpha == 3.0 {
            Regime::NearlyLinear
        } else {
            Regime::Linear
        }
    }

    pub fn model(&self) -> Model {
        match self {
            Regime::Bounded => Model::Const,
            Regime::Logarithmic => Model::Log,
            Regime::NearlyLinear => Model::Loglin,
            Regime::Power { .. } | Regime::Linear | Regime::Band { .. } => Model::Power,
        }
    }

    pub fn expected_exponent(&self) -> Option<f64> {
        match self {
            Regime::Power { exponent } => Some(*exponent),
            Regime::Linear => Some(1.0),
            _ => None,
        }
    }
}

/// Power of `N` in the q-SOS lower bound (log corrections ignored).
pub fn qsos_lower_exponent(alpha: f64, q: f64) -> f64 {
    if alpha <= 2.0 {
        0.0
    } else if alpha < 2.0 + q / 2.0 {
        2.0 * (alpha - 2.0) / q
    } else {
        1.0
    }
}

/// Power of `N` in the q-SOS upper bound (log corrections ignored).
pub fn qsos_upper_exponent(alpha: f64, q: f64) -> f64 {
    if alpha <= q {
        0.0
    } else {
        2.0 * alpha / q - 2.0
    }
}

// ---- sweeps -----------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    RealExact,
    IvMcmc,
    QsosAnnealedLower,
    QsosAnnealedUpper,
}

impl Backend {
    pub const ALL: [Backend; 4] =
        [Backend::RealExact, Backend::IvMcmc, Backend::QsosAnnealedLower, Backend::QsosAnnealedUpper];

    pub fn name(self) -> &'static str {
        match self {
            Backend::RealExact => "real-exact",
            Backend::IvMcmc => "iv-mcmc",
            Backend::QsosAnnealedLower => "qsos-annealed-lower",
            Backend::QsosAnnealedUpper => "qsos-annealed-upper",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| invalid(format!("unknown backend '{s}'")))
    }
}

/// Per-draw variance method of the annealed backends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnealedInner {
    /// Integer-valued field by heat bath.
    Mcmc,
    /// Real-valued field, exact.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub seed: u64,
    pub mcmc: McmcParams,
    /// Conductance draws per point of the annealed backends.
    pub draws: u64,
    pub inner: AnnealedInner,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self { seed: 0, mcmc: McmcParams::default(), draws: 64, inner: AnnealedInner::Mcmc }
    }
}

/// A sweep point whose backend failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub n: usize,
    pub error: String,
}

/// Fixed-exponent fit `a N^e` for one edge of a q-SOS band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub exponent: f64,
    pub a: f64,
    pub residual_rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub backend: Backend,
    pub rows: Vec<FitRow>,
    pub failures: Vec<SweepFailure>,
    pub regime: Regime,
    pub model: Model,
    pub fitted_params: FitParams,
    /// Best-fitting other model, for comparison.
    pub alternative: Option<(Model, FitParams)>,
    /// Lower and upper envelope fits for q-SOS bands.
    pub envelopes: Option<(EnvelopeFit, EnvelopeFit)>,
}

impl ScalingFit {
    /// Fits `rows` (sorted here) with the regime's model and the best other one.
    pub fn from_rows(backend: Backend, mut rows: Vec<FitRow>, failures: Vec<SweepFailure>, regime: Regime) -> Result<Self> {
        rows.sort_by_key(|r| r.n);
        let model = regime.model();
        let fitted_params = fit_exponent(&rows, model)?;
        let alternative = Model::ALL
            .into_iter()
            .filter(|&m| m != model)
            .filter_map(|m| fit_exponent(&rows, m).ok().map(|p| (m, p)))
            .min_by(|a, b| a.1.residual_rms.total_cmp(&b.1.residual_rms));
        let envelopes = match regime {
            Regime::Band { lower, upper } => Some((envelope_fit(&rows, lower), envelope_fit(&rows, upper))),
            _ => None,
        };
        Ok(Self { backend, rows, failures, regime, model, fitted_params, alternative, envelopes })
    }

    /// True when exact rows never decrease in `N`.
    pub fn exact_rows_monotone(&self) -> bool {
        let exact: Vec<&FitRow> = self.rows.iter().filter(|r| r.std_error == 0.0).collect();
        exact.windows(2).all(|w| w[0].variance <= w[1].variance * (1.0 + 1e-12))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn envelope_fit(rows: &[FitRow], exponent: f64) -> EnvelopeFit {
    let logs: Vec<f64> = rows.iter().map(|r| r.variance.ln() - exponent * (r.n as f64).ln()).collect();
    let m = logs.iter().sum::<f64>() / logs.len() as f64;
    let rms = (logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / logs.len() as f64).sqrt();
    EnvelopeFit { exponent, a: m.exp(), residual_rms: rms }
}

fn row_seed(seed: u64, n: usize) -> u64 {
    mix(&[seed, n as u64])
}

/// Variance at the origin for one spec with the chosen backend.
pub fn backend_estimate(spec: &ChainSpec, backend: Backend, params: &SweepParams) -> Result<(VarianceEstimate, u64)> {
    let seed = row_seed(params.seed, spec.n);
    let est = match backend {
        Backend::RealExact => VarianceEstimate::exact(real_chain_variance(spec)?, VarianceMethod::LaplacianExact),
        Backend::IvMcmc => mcmc_variance(&new_chain_graph(spec)?, VertexId(0), &params.mcmc.with_seed(seed))?,
        Backend::QsosAnnealedLower | Backend::QsosAnnealedUpper => {
            let kind = if backend == Backend::QsosAnnealedLower { MixtureKind::MuQ } else { MixtureKind::TildeMuQ };
            let mut s = *spec;
            s.q.get_or_insert(2.0);
            let inner = match params.inner {
                AnnealedInner::Mcmc => InnerMethod::Mcmc(params.mcmc),
                AnnealedInner::Real => InnerMethod::Real,
            };
            let opts = AnnealedOptions { draws: params.draws, seed, inner };
            annealed_estimate(&QChainParams::new(s)?, kind, &opts)?.estimate
        }
    };
    Ok((est, seed))
}

/// Runs `backend` on every spec in parallel and fits the regime's model.
/// All specs must share `beta`, `alpha` and `q`; per-row failures are
/// recorded and the fit needs at least three successful rows.
pub fn run_sweep(specs: &[ChainSpec], backend: Backend, params: &SweepParams) -> Result<ScalingFit> {
    let first = specs.first().ok_or_else(|| invalid("empty sweep"))?;
    let mut ns: Vec<usize> = specs.iter().map(|s| s.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(invalid(format!("a sweep needs at least 4 distinct N, got {}", ns.len())));
    }
    for s in specs {
        s.validate()?;
        if s.beta != first.beta || s.alpha != first.alpha || s.q != first.q {
            return Err(invalid("all sweep points must share beta, alpha and q"));
        }
    }
    if backend == Backend::IvMcmc || params.inner == AnnealedInner::Mcmc {
        params.mcmc.validate()?;
    }
    let outcomes: Vec<(usize, Result<(VarianceEstimate, u64)>)> =
        specs.par_iter().map(|s| (s.n, backend_estimate(s, backend, params))).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (n, r) in outcomes {
        match r {
            Ok((e, seed)) => rows.push(FitRow::from_estimate(n, &e, seed)),
            Err(e) => failures.push(SweepFailure { n, error: e.to_string() }),
        }
    }
    let q = match backend {
        Backend::QsosAnnealedLower | Backend::QsosAnnealedUpper => first.q_or_two(),
        _ => 2.0,
    };
    ScalingFit::from_rows(backend, rows, failures, Regime::select(first.alpha, q))
}

/// Expands `min:max:steps` into a geometric grid of distinct integers, or
/// parses a comma list.
pub fn parse_n_list(s: &str) -> Result<Vec<usize>> {
    let bad = || invalid(format!("cannot parse N list '{s}' (use 8,16,32 or min:max:steps)"));
    let mut out: Vec<usize> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: usize = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: usize = parts[1].trim().parse().map_err(|_| bad())?;
        let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo || steps < 2 {
            return Err(bad());
        }
        let ratio = (hi as f64 / lo as f64).powf(1.0 / (steps - 1) as f64);
        (0..steps).map(|k| (lo as f64 * ratio.powi(k as i32)).round() as usize).collect()
    } else {
        s.split(',').map(|t| t.trim().parse::<usize>().map_err(|_| bad())).collect::<Result<_>>()?
    };
    out.sort_unstable();
    out.dedup();
    if out.is_empty() || out[0] == 0 {
        return Err(bad());
    }
    Ok(out)
}

// ---- sandwich report ------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub alpha: f64,
    pub beta: f64,
    pub lower_pipeline: String,
    pub upper_pipeline: String,
    pub rows: Vec<SandwichRow>,
    pub all_hold: bool,
}

impl SandwichReport {
    /// Plain-text table, one line per `N`.
    pub fn table(&self) -> String {
        let mut s = format!(
            "# alpha={} beta={} lower={} upper={}\n{:>8} {:>16} {:>16} {:>16} {:>6}\n",
            self.alpha, self.beta, self.lower_pipeline, self.upper_pipeline, "N", "lower", "oracle", "upper", "holds"
        );
        for r in &self.rows {
            s += &format!("{:>8} {:>16.9e} {:>16.9e} {:>16.9e} {:>6}\n", r.n, r.lower, r.oracle, r.upper, r.holds());
        }
        s
    }
}

/// Lower-pipeline variance, exact variance and upper-pipeline variance at
/// every `N` of the grid, computed in parallel.
pub fn sandwich_report(beta: f64, alpha: f64, ns: &[usize]) -> Result<SandwichReport> {
    let none = || invalid(format!("no pipeline pair for alpha = {alpha}"));
    let lower = Pipeline::lower_for(alpha).ok_or_else(none)?;
    let upper = Pipeline::upper_for(alpha).ok_or_else(none)?;
    let rows: Vec<SandwichRow> = ns
        .par_iter()
        .map(|&n| sandwich(&ChainSpec::new(n, beta, alpha)?))
        .collect::<Result<_>>()?;
    let all_hold = rows.iter().all(|r| r.holds());
    Ok(SandwichReport {
        alpha,
        beta,
        lower_pipeline: lower.name().into(),
        upper_pipeline: upper.name().into(),
        rows,
        all_hold,
    })
}

// ---- CSV ----------------------------------------------------------------------------

pub const CSV_COLUMNS: &str = "N,variance,std_error,method,seed";

/// CSV with the effective configuration on the first line and an optional
/// timestamp line.
pub fn rows_to_csv(rows: &[FitRow], config_json: &str, timestamp: Option<&str>) -> String {
    let mut s = format!("# config: {config_json}\n");
    if let Some(t) = timestamp {
        s += &format!("# generated: {t}\n");
    }
    s += CSV_COLUMNS;
    s.push('\n');
    for r in rows {
        let v = if r.variance.is_infinite() { "infinite".to_string() } else { r.variance.to_string() };
        s += &format!("{},{},{},{},{}\n", r.n, v, r.std_error, r.method.as_str(), r.seed);
    }
    s
}
